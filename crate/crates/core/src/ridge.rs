//! Kernel ridge regression in dual form, shared by RFRR (empirical CK), KRR
//! (expected kernel) and PKRR (polynomial kernel).
//!
//! A [`RidgeSolver`] factors `K_λ = K + λ Id` once and can then fit any number
//! of label vectors. [`RidgeFit`] holds `α = K_λ^{-1} y` together with the
//! diagonal of `K_λ^{-1}`, which is what the LOOCV shortcut and GCV need.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::kernel::KernelMatrix;
use crate::linalg::{add_ridge, sym_eigen};
use crate::par::{map_range, try_map_range};
use crate::{Error, Result};

/// Which factorization produced a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverInfo {
    Cholesky,
    /// Eigendecomposition with eigenvalues at or below `threshold` dropped.
    EigenPseudo { threshold: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct RidgeOptions {
    /// Fall back to a pseudo-inverse when `K_λ` is numerically singular.
    pub allow_pseudo_inverse: bool,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions {
            allow_pseudo_inverse: true,
        }
    }
}

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Eigen { vectors: DMatrix<f64>, inv_values: DVector<f64> },
}

impl Factor {
    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Factor::Cholesky(c) => c.solve(b),
            Factor::Eigen { vectors, inv_values } => {
                let mut t = vectors.tr_mul(b);
                for (mut row, &s) in t.row_iter_mut().zip(inv_values.iter()) {
                    row *= s;
                }
                vectors * t
            }
        }
    }
}

/// Factorization of `K + λ Id` for a fixed kernel and ridge.
pub struct RidgeSolver<'k> {
    kernel: &'k KernelMatrix,
    lambda: f64,
    factor: Factor,
    info: SolverInfo,
    inv_diag: DVector<f64>,
}

impl<'k> RidgeSolver<'k> {
    pub fn new(kernel: &'k KernelMatrix, lambda: f64, opts: RidgeOptions) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let n = kernel.n();
        let k_lambda = kernel.ridged(lambda);

        let mut chol = None;
        if lambda > 0.0 {
            chol = Cholesky::new(k_lambda.clone());
        } else {
            // At λ = 0 a successful Cholesky does not rule out a nearly
            // singular kernel, so look at the spectrum first.
            let eig = k_lambda.clone().symmetric_eigenvalues();
            let (min, max) = (eig.min(), eig.amax());
            if min > 1e-12 * max {
                chol = Cholesky::new(k_lambda.clone());
            }
        }

        let (factor, info) = match chol {
            Some(c) => (Factor::Cholesky(c), SolverInfo::Cholesky),
            None => {
                let eig = sym_eigen(&k_lambda);
                let min_eig = eig.eigenvalues.min();
                if !opts.allow_pseudo_inverse {
                    return Err(Error::SingularSystem { min_eig, lambda });
                }
                let threshold = 1e-12 * eig.eigenvalues.amax() * n as f64;
                let inv_values = eig.eigenvalues.map(|v| if v > threshold { 1.0 / v } else { 0.0 });
                (
                    Factor::Eigen {
                        vectors: eig.eigenvectors,
                        inv_values,
                    },
                    SolverInfo::EigenPseudo { threshold },
                )
            }
        };

        let inv_diag = DVector::from_vec(map_range(n, |i| {
            let mut e = DMatrix::zeros(n, 1);
            e[(i, 0)] = 1.0;
            factor.solve(&e)[(i, 0)]
        }));

        Ok(RidgeSolver {
            kernel,
            lambda,
            factor,
            info,
            inv_diag,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn info(&self) -> SolverInfo {
        self.info
    }
    pub fn kernel(&self) -> &'k KernelMatrix {
        self.kernel
    }
    /// Diagonal of `K_λ^{-1}`.
    pub fn inv_diag(&self) -> &DVector<f64> {
        &self.inv_diag
    }

    /// `K_λ^{-1} B` for a block of right-hand sides.
    pub fn solve_many(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.kernel.n() {
            return Err(Error::DimensionMismatch {
                context: "right-hand side vs. kernel size",
                expected: self.kernel.n(),
                got: b.nrows(),
            });
        }
        Ok(self.factor.solve(b))
    }

    pub fn solve(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let b = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        Ok(self.solve_many(&b)?.column(0).into_owned())
    }

    pub fn fit(&self, y: &DVector<f64>) -> Result<RidgeFit<'k>> {
        let alpha = self.solve(y)?;
        Ok(RidgeFit {
            kernel: self.kernel,
            lambda: self.lambda,
            alpha,
            inv_diag: self.inv_diag.clone(),
            y: y.clone(),
            solver_info: self.info,
        })
    }
}

/// A fitted kernel ridge regressor.
#[derive(Debug, Clone)]
pub struct RidgeFit<'k> {
    pub kernel: &'k KernelMatrix,
    pub lambda: f64,
    pub alpha: DVector<f64>,
    pub inv_diag: DVector<f64>,
    pub y: DVector<f64>,
    pub solver_info: SolverInfo,
}

/// Solves `(K + λ Id) α = y` and records the diagonal of the inverse.
pub fn fit<'k>(kernel: &'k KernelMatrix, y: &DVector<f64>, lambda: f64) -> Result<RidgeFit<'k>> {
    fit_with(kernel, y, lambda, RidgeOptions::default())
}

pub fn fit_with<'k>(kernel: &'k KernelMatrix, y: &DVector<f64>, lambda: f64, opts: RidgeOptions) -> Result<RidgeFit<'k>> {
    if y.len() != kernel.n() {
        return Err(Error::DimensionMismatch {
            context: "labels vs. kernel size",
            expected: kernel.n(),
            got: y.len(),
        });
    }
    RidgeSolver::new(kernel, lambda, opts)?.fit(y)
}

/// Predictions `crossᵀ α` where `cross` is the `n × m` kernel between the
/// training points and the test points.
pub fn predict(fit: &RidgeFit<'_>, cross: &DMatrix<f64>) -> Result<DVector<f64>> {
    if cross.nrows() != fit.alpha.len() {
        return Err(Error::DimensionMismatch {
            context: "cross kernel rows vs. training points",
            expected: fit.alpha.len(),
            got: cross.nrows(),
        });
    }
    Ok(cross.tr_mul(&fit.alpha))
}

/// `(1/n) ‖K α − y‖²`, computed from the residual.
pub fn training_error(fit: &RidgeFit<'_>) -> f64 {
    let r = fit.kernel.matrix() * &fit.alpha - &fit.y;
    r.norm_squared() / fit.y.len() as f64
}

/// `(λ²/n) ‖α‖² = (λ²/n) yᵀ K_λ^{-2} y`.
pub fn training_error_closed_form(fit: &RidgeFit<'_>) -> f64 {
    fit.lambda * fit.lambda * fit.alpha.norm_squared() / fit.y.len() as f64
}

/// Leave-one-out risk from a single fit, `(1/n) Σ_i (α_i / [K_λ^{-1}]_{ii})²`.
pub fn loocv_shortcut(fit: &RidgeFit<'_>) -> Result<f64> {
    let mut s = 0.0;
    for (i, (&a, &d)) in fit.alpha.iter().zip(fit.inv_diag.iter()).enumerate() {
        if !(d.abs() > 1e-300) {
            return Err(Error::ZeroDiagonal { index: i });
        }
        s += (a / d).powi(2);
    }
    Ok(s / fit.y.len() as f64)
}

/// Leave-one-out risk by `n` explicit refits. With a single point the
/// held-out prediction is 0.
pub fn loocv_naive(kernel: &KernelMatrix, y: &DVector<f64>, lambda: f64) -> Result<f64> {
    let n = kernel.n();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "labels vs. kernel size",
            expected: n,
            got: y.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let k = kernel.matrix();
    let residuals = try_map_range(n, |i| {
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        if keep.is_empty() {
            return Ok::<f64, Error>(y[i]);
        }
        let sub = k.select_rows(&keep).select_columns(&keep);
        let sub_y = y.select_rows(&keep);
        let a = add_ridge(&sub, lambda);
        let alpha = Cholesky::new(a.clone())
            .map(|c| c.solve(&sub_y))
            .ok_or_else(|| Error::SingularSystem {
                min_eig: crate::linalg::min_eigenvalue(&a),
                lambda,
            })?;
        let pred: f64 = keep.iter().zip(alpha.iter()).map(|(&j, &a)| k[(i, j)] * a).sum();
        Ok(y[i] - pred)
    })?;
    Ok(residuals.iter().map(|r| r * r).sum::<f64>() / n as f64)
}

/// Generalized cross-validation `E_train / (λ · tr K_λ^{-1})²` with the
/// normalized trace `tr A = (1/n) Σ A_ii`.
pub fn gcv(fit: &RidgeFit<'_>) -> Result<f64> {
    if fit.lambda == 0.0 {
        return Err(Error::LambdaZero);
    }
    let tr = fit.inv_diag.mean();
    Ok(training_error(fit) / (fit.lambda * tr).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_normal, substream};

    fn km(m: DMatrix<f64>) -> KernelMatrix {
        KernelMatrix::from_matrix(m).unwrap()
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = substream(seed, "spd", &[]);
        let mut a = DMatrix::zeros(n, n);
        fill_normal(&mut rng, a.as_mut_slice());
        a.tr_mul(&a) / n as f64
    }

    fn random_vec(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = substream(seed, "vec", &[]);
        let mut v = DVector::zeros(n);
        fill_normal(&mut rng, v.as_mut_slice());
        v
    }

    #[test]
    fn identity_kernel() {
        let k = km(DMatrix::identity(3, 3));
        let y = DVector::from_vec(vec![1.0, -2.0, 4.0]);
        let f = fit(&k, &y, 1.0).unwrap();
        assert!((&f.alpha - &y / 2.0).amax() < 1e-15);
        assert!(f.inv_diag.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert_eq!(f.solver_info, SolverInfo::Cholesky);
    }

    #[test]
    fn diagonal_interpolation() {
        let k = km(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])));
        let y = DVector::from_vec(vec![4.0, 9.0]);
        let f = fit(&k, &y, 0.0).unwrap();
        assert!((f.alpha[0] - 2.0).abs() < 1e-15 && (f.alpha[1] - 3.0).abs() < 1e-15);
        assert!(training_error(&f).abs() < 1e-28);
        let p = predict(&f, k.matrix()).unwrap();
        assert!((p - &y).amax() < 1e-14);
        assert_eq!(predict(&f, &DMatrix::zeros(2, 4)).unwrap(), DVector::zeros(4));
        assert!(matches!(predict(&f, &DMatrix::zeros(3, 1)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn residual_on_random_spd() {
        let k = km(random_spd(8, 1));
        let y = random_vec(8, 2);
        let f = fit(&k, &y, 0.1).unwrap();
        let r = (k.ridged(0.1) * &f.alpha - &y).norm() / y.norm();
        assert!(r < 1e-10);
        let inv = k.ridged(0.1).try_inverse().unwrap();
        assert!((inv.diagonal() - &f.inv_diag).amax() < 1e-10);
    }

    #[test]
    fn training_error_examples() {
        let k = km(DMatrix::identity(2, 2));
        let f = fit(&k, &DVector::from_vec(vec![2.0, 0.0]), 1.0).unwrap();
        assert!((training_error(&f) - 0.5).abs() < 1e-15);
        assert!((training_error_closed_form(&f) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn training_error_is_nondecreasing_in_lambda() {
        let k = km(random_spd(10, 4));
        let y = random_vec(10, 5);
        let mut last = 0.0;
        for i in 0..20 {
            let lambda = 1e-3 * 2f64.powi(i);
            let f = fit(&k, &y, lambda).unwrap();
            let e = training_error(&f);
            assert!(e >= last * (1.0 - 1e-10));
            assert!((e - training_error_closed_form(&f)).abs() <= 1e-8 * e);
            last = e;
        }
    }

    #[test]
    fn loocv_single_point_and_scaled_identity() {
        let k = km(DMatrix::from_element(1, 1, 3.0));
        let y = DVector::from_vec(vec![1.5]);
        let f = fit(&k, &y, 0.7).unwrap();
        assert!((loocv_shortcut(&f).unwrap() - 2.25).abs() < 1e-14);
        assert!((loocv_naive(&k, &y, 0.7).unwrap() - 2.25).abs() < 1e-14);

        let k = km(DMatrix::identity(4, 4) * 2.5);
        let y = random_vec(4, 9);
        let want = y.norm_squared() / 4.0;
        for lambda in [0.0, 0.3, 4.0] {
            let f = fit(&k, &y, lambda).unwrap();
            assert!((loocv_shortcut(&f).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn loocv_naive_identity() {
        let k = km(DMatrix::identity(2, 2));
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!((loocv_naive(&k, &y, 0.0).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn loocv_shortcut_matches_naive() {
        for seed in 0..10 {
            let k = km(random_spd(16, 100 + seed));
            let y = random_vec(16, 200 + seed);
            for lambda in [1e-3, 0.1, 1.0, 10.0] {
                let f = fit(&k, &y, lambda).unwrap();
                let a = loocv_shortcut(&f).unwrap();
                let b = loocv_naive(&k, &y, lambda).unwrap();
                assert!((a - b).abs() <= 1e-8 * b, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn loocv_is_permutation_invariant() {
        let m = random_spd(6, 7);
        let y = random_vec(6, 8);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mp = DMatrix::from_fn(6, 6, |i, j| m[(perm[i], perm[j])]);
        let yp = DVector::from_fn(6, |i, _| y[perm[i]]);
        let a = loocv_naive(&km(m), &y, 0.2).unwrap();
        let b = loocv_naive(&km(mp), &yp, 0.2).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn gcv_examples() {
        let y = random_vec(5, 3);
        for (c, lambda) in [(1.0, 0.1), (4.0, 2.0), (0.5, 10.0)] {
            let k = km(DMatrix::identity(5, 5) * c);
            let f = fit(&k, &y, lambda).unwrap();
            assert!((gcv(&f).unwrap() - y.norm_squared() / 5.0).abs() < 1e-12);
        }
        let k = km(random_spd(9, 11));
        let y = random_vec(9, 12);
        let f1 = fit(&k, &y, 0.3).unwrap();
        let f2 = fit(&k, &(&y * 2.0), 0.3).unwrap();
        assert!((gcv(&f2).unwrap() - 4.0 * gcv(&f1).unwrap()).abs() < 1e-10);
        assert!(gcv(&f1).unwrap() >= training_error(&f1));
        let f0 = fit(&k, &y, 0.0).unwrap();
        assert!(matches!(gcv(&f0), Err(Error::LambdaZero)));
    }

    #[test]
    fn singular_kernel_at_zero_ridge() {
        let v = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let k = km(&v * v.transpose());
        let y = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let err = fit_with(
            &k,
            &y,
            0.0,
            RidgeOptions {
                allow_pseudo_inverse: false,
            },
        );
        assert!(matches!(err, Err(Error::SingularSystem { .. })));
        let f = fit(&k, &y, 0.0).unwrap();
        assert!(matches!(f.solver_info, SolverInfo::EigenPseudo { .. }));
        assert!((&f.alpha - DVector::from_vec(vec![0.5, 0.5, 0.0])).amax() < 1e-12);
        assert!(matches!(loocv_shortcut(&f), Err(Error::ZeroDiagonal { index: 2 })));
    }

    #[test]
    fn length_mismatch() {
        let k = km(DMatrix::identity(3, 3));
        assert!(matches!(
            fit(&k, &DVector::zeros(2), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
