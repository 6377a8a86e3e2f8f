//! Kernel matrices: the empirical conjugate kernel `K_N` of a random
//! two-layer network, its expectation `K` over the weights, and the degree-ℓ
//! polynomial kernel `K_ℓ`.
//!
//! For unit-norm data the expected kernel is an inner-product kernel,
//! `K(x, z) = Σ_k ζ_k(σ)² ⟨x, z⟩^k`, and `K_ℓ` keeps the first `ℓ + 1` terms
//! plus the tail mass `σ²_{>ℓ}` on the diagonal.

pub mod cache;

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::hermite::{ActivationSpec, HermiteProfile};
use crate::linalg::{add_ridge, sym_eigen, sym_spectral_norm, symmetrize};
use crate::par::{ordered_sum, SUM_CHUNK};
use crate::rng::{fill_normal, substream};
use crate::{Error, Result};

/// Rows of `W` generated and multiplied at a time.
pub const DEFAULT_BLOCK_ROWS: usize = 1024;

/// Default entrywise truncation tolerance of the expected-kernel series.
pub const DEFAULT_SERIES_TOL: f64 = 1e-12;

/// Random first-layer weights `W ∈ R^{N×d}` with i.i.d. `N(0, 1)` entries and
/// the activation applied to `WX`.
///
/// Row `i` of `W` is drawn from its own stream `(seed, i)`, so the matrix is
/// reproducible from the seed and never has to be stored in full.
#[derive(Debug, Clone)]
pub struct RandomFeatureMap {
    n_features: usize,
    dim: usize,
    seed: u64,
    activation: ActivationSpec,
    block_rows: usize,
}

impl RandomFeatureMap {
    pub fn new(n_features: usize, dim: usize, seed: u64, activation: ActivationSpec) -> Result<Self> {
        if n_features == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "need N >= 1 and d >= 1, got N = {n_features}, d = {dim}"
            )));
        }
        Ok(RandomFeatureMap {
            n_features,
            dim,
            seed,
            activation,
            block_rows: DEFAULT_BLOCK_ROWS,
        })
    }

    /// Changes the number of weight rows processed per block. Results do not
    /// depend on this beyond floating-point summation order.
    pub fn with_block_rows(mut self, rows: usize) -> Self {
        self.block_rows = rows.max(1);
        self
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn activation(&self) -> &ActivationSpec {
        &self.activation
    }

    pub fn num_blocks(&self) -> usize {
        self.n_features.div_ceil(self.block_rows)
    }

    pub fn block_range(&self, b: usize) -> Range<usize> {
        let start = b * self.block_rows;
        start..(start + self.block_rows).min(self.n_features)
    }

    /// Rows `range` of `W`.
    pub fn weight_rows(&self, range: Range<usize>) -> DMatrix<f64> {
        let rows = range.len();
        // Column-major storage: fill row-wise through a transposed buffer.
        let mut wt = DMatrix::zeros(self.dim, rows);
        for (r, i) in range.enumerate() {
            let mut rng = substream(self.seed, "weights", &[i as u64]);
            fill_normal(&mut rng, wt.column_mut(r).as_mut_slice());
        }
        wt.transpose()
    }

    /// The full weight matrix (`N × d`). Only sensible for small `N·d`.
    pub fn weights(&self) -> DMatrix<f64> {
        self.weight_rows(0..self.n_features)
    }

    fn check_dim(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.nrows() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "data dimension vs. weight columns",
                expected: self.dim,
                got: z.nrows(),
            });
        }
        Ok(())
    }

    /// `σ(W_b Z)` for block `b`.
    pub fn features_block(&self, b: usize, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.activate(self.weight_rows(self.block_range(b)) * z)
    }

    /// `Φ = σ(WZ)` in full (`N × m`).
    pub fn features(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(z)?;
        let mut out = DMatrix::zeros(self.n_features, z.ncols());
        for b in 0..self.num_blocks() {
            let r = self.block_range(b);
            out.rows_mut(r.start, r.len()).copy_from(&self.features_block(b, z));
        }
        Ok(out)
    }

    /// Predictions `K_N(Z, X) A` for a batch of dual coefficient vectors `A`
    /// (`n × r`), evaluated as `σ(WZ)ᵀ (σ(WX) A) / N` block by block so the
    /// `m × n` cross kernel is never formed. Returns `m × r`.
    pub fn predict_dual(&self, data: &DataMatrix, dual: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = self.predict_dual_batched(data, std::slice::from_ref(dual), std::slice::from_ref(z))?;
        Ok(out.pop().expect("one output per input"))
    }

    /// [`predict_dual`](Self::predict_dual) for several `(A_b, Z_b)` pairs in
    /// one pass over the weights; `σ(WX)` and each weight block are computed
    /// once for all pairs.
    pub fn predict_dual_batched(
        &self,
        data: &DataMatrix,
        duals: &[DMatrix<f64>],
        zs: &[DMatrix<f64>],
    ) -> Result<Vec<DMatrix<f64>>> {
        self.check_dim(data.matrix())?;
        if duals.len() != zs.len() {
            return Err(Error::DimensionMismatch {
                context: "number of coefficient blocks vs. test blocks",
                expected: duals.len(),
                got: zs.len(),
            });
        }
        for (a, z) in duals.iter().zip(zs) {
            self.check_dim(z)?;
            if a.nrows() != data.n() {
                return Err(Error::DimensionMismatch {
                    context: "dual coefficients vs. training points",
                    expected: data.n(),
                    got: a.nrows(),
                });
            }
        }
        let total = ordered_sum(
            self.num_blocks(),
            SUM_CHUNK,
            |b| {
                let w = self.weight_rows(self.block_range(b));
                let px = self.activate(&w * data.matrix());
                duals
                    .iter()
                    .zip(zs)
                    .map(|(a, z)| self.activate(&w * z).tr_mul(&(&px * a)))
                    .collect::<Vec<_>>()
            },
            |acc: &mut Vec<DMatrix<f64>>, part| {
                for (x, y) in acc.iter_mut().zip(part) {
                    *x += y;
                }
            },
        );
        let scale = 1.0 / self.n_features as f64;
        Ok(match total {
            Some(v) => v.into_iter().map(|m| m * scale).collect(),
            None => duals.iter().zip(zs).map(|(a, z)| DMatrix::zeros(z.ncols(), a.ncols())).collect(),
        })
    }

    fn activate(&self, mut m: DMatrix<f64>) -> DMatrix<f64> {
        self.activation.apply_in_place(m.as_mut_slice());
        m
    }

    /// Feature-space weights `θ̂ = Φ α / √N` of the ridge solution with dual
    /// coefficients `α`.
    pub fn primal_weights(&self, data: &DataMatrix, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        let phi = self.features(data.matrix())?;
        if alpha.len() != phi.ncols() {
            return Err(Error::DimensionMismatch {
                context: "dual coefficients vs. training points",
                expected: phi.ncols(),
                got: alpha.len(),
            });
        }
        Ok(phi * alpha / (self.n_features as f64).sqrt())
    }

    /// `θᵀσ(Wz)/√N` for every column `z` of `Z`.
    pub fn predict_primal(&self, theta: &DVector<f64>, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        if theta.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                context: "feature weights",
                expected: self.n_features,
                got: theta.len(),
            });
        }
        let phi = self.features(z)?;
        Ok(phi.tr_mul(theta) / (self.n_features as f64).sqrt())
    }
}

/// Where a kernel matrix came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Empirical { n_features: usize, seed: u64 },
    /// Expected kernel; the series was summed up to degree `truncation`.
    Expected { k_max: usize, truncation: usize },
    Polynomial { ell: usize },
    /// Supplied directly by the caller.
    Explicit,
}

/// Symmetric positive semi-definite Gram matrix.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    m: DMatrix<f64>,
    provenance: Provenance,
    profile: Option<Arc<HermiteProfile>>,
}

impl KernelMatrix {
    /// Wraps a caller-supplied square matrix, symmetrizing it.
    pub fn from_matrix(mut m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "kernel matrix must be square",
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        symmetrize(&mut m);
        Ok(KernelMatrix {
            m,
            provenance: Provenance::Explicit,
            profile: None,
        })
    }

    pub(crate) fn with_provenance(
        m: DMatrix<f64>,
        provenance: Provenance,
        profile: Option<Arc<HermiteProfile>>,
    ) -> Self {
        KernelMatrix { m, provenance, profile }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
    pub fn n(&self) -> usize {
        self.m.nrows()
    }
    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
    pub fn profile(&self) -> Option<&HermiteProfile> {
        self.profile.as_deref()
    }

    /// `K + λ Id`.
    pub fn ridged(&self, lambda: f64) -> DMatrix<f64> {
        add_ridge(&self.m, lambda)
    }
}

/// `K_N = σ(WX)ᵀσ(WX)/N`, accumulated over blocks of weight rows.
pub fn empirical_ck(fm: &RandomFeatureMap, data: &DataMatrix) -> Result<KernelMatrix> {
    fm.check_dim(data.matrix())?;
    let n = data.n();
    let sum = ordered_sum(
        fm.num_blocks(),
        SUM_CHUNK,
        |b| {
            let phi = fm.features_block(b, data.matrix());
            phi.transpose() * &phi
        },
        |acc, part| *acc += part,
    )
    .unwrap_or_else(|| DMatrix::zeros(n, n));
    let mut m = sum / fm.n_features as f64;
    symmetrize(&mut m);
    Ok(KernelMatrix::with_provenance(
        m,
        Provenance::Empirical {
            n_features: fm.n_features,
            seed: fm.seed,
        },
        None,
    ))
}

/// `K_N(X, Z)` (`n × m`) with entries `σ(Wx_i)ᵀσ(Wz_j)/N`.
pub fn cross_kernel_empirical(fm: &RandomFeatureMap, data: &DataMatrix, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    fm.check_dim(data.matrix())?;
    fm.check_dim(z)?;
    let sum = ordered_sum(
        fm.num_blocks(),
        SUM_CHUNK,
        |b| {
            let w = fm.weight_rows(fm.block_range(b));
            let px = fm.activate(&w * data.matrix());
            let pz = fm.activate(w * z);
            px.transpose() * pz
        },
        |acc, part| *acc += part,
    )
    .unwrap_or_else(|| DMatrix::zeros(data.n(), z.ncols()));
    Ok(sum / fm.n_features as f64)
}

// Σ_k a_k ρ^k by Horner's rule.
#[inline]
fn power_series(a: &[f64], rho: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, &c| acc * rho + c)
}

/// Smallest degree `K*` with `σ²_{>K*} · eps^{K*+1} < tol`, or the exact
/// degree for polynomial activations.
pub fn series_truncation(hp: &HermiteProfile, eps: f64, tol: f64) -> Result<usize> {
    if let Some(m) = hp.degree.filter(|&m| m <= hp.k_max) {
        return Ok(m);
    }
    if eps >= 1.0 {
        return Err(Error::TailNotConvergent(format!(
            "two distinct points have |<x, z>| = 1 and the activation has an infinite Hermite expansion (eps = {eps})"
        )));
    }
    let mut bound_at_kmax = f64::INFINITY;
    for k in 0..=hp.k_max {
        let bound = hp.tail_mass(k)? * eps.powi(k as i32 + 1);
        if bound < tol {
            return Ok(k);
        }
        bound_at_kmax = bound;
    }
    Err(Error::TailNotConvergent(format!(
        "Hermite profile stops at k_max = {} where the tail bound is {bound_at_kmax:e} >= {tol:e}; expand to a higher degree",
        hp.k_max
    )))
}

/// Largest expansion degree [`series_profile`] will try.
pub const MAX_SERIES_DEGREE: usize = 256;

/// Expands `act` far enough that the kernel series meets `tol` for every
/// pair of points with `|⟨x, z⟩| ≤ eps`, doubling `k_max` from
/// [`DEFAULT_K_MAX`](crate::hermite::DEFAULT_K_MAX) as needed.
pub fn series_profile(act: &ActivationSpec, eps: f64, tol: f64) -> Result<HermiteProfile> {
    let mut k_max = crate::hermite::DEFAULT_K_MAX.max(act.polynomial_degree().unwrap_or(0));
    loop {
        let hp = crate::hermite::expand_activation(act, k_max, crate::hermite::DEFAULT_TOL)?;
        match series_truncation(&hp, eps, tol) {
            Ok(_) => return Ok(hp),
            Err(e) if eps >= 1.0 || k_max >= MAX_SERIES_DEGREE => return Err(e),
            Err(_) => k_max = (2 * k_max).min(MAX_SERIES_DEGREE),
        }
    }
}

/// `max_{i≠j} |⟨x_i, x_j⟩|`, capped at 1.
pub fn max_inner_product(data: &DataMatrix) -> f64 {
    max_off_diagonal(&data.gram())
}

fn max_off_diagonal(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    let mut eps = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            eps = eps.max(g[(i, j)].abs());
        }
    }
    eps.min(1.0)
}

fn inner_product_kernel(g: &DMatrix<f64>, a: &[f64], diag: f64) -> DMatrix<f64> {
    let n = g.nrows();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = diag;
        for i in (j + 1)..n {
            let v = power_series(a, g[(i, j)].clamp(-1.0, 1.0));
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Expected kernel `K = E_w[σ(Xᵀw)σ(wᵀX)] = Σ_k ζ_k² (XᵀX)^{⊙k}`.
///
/// The diagonal is `‖σ‖²₂` exactly. Off the diagonal the series is summed to
/// the degree picked by [`series_truncation`], so every entry is within `tol`
/// of the full series (exact for polynomial activations).
pub fn expected_kernel(data: &DataMatrix, hp: &HermiteProfile, tol: f64) -> Result<KernelMatrix> {
    let g = data.gram();
    let eps = max_off_diagonal(&g);
    let truncation = series_truncation(hp, eps, tol)?;
    let sq = hp.squared_coeffs();
    let m = inner_product_kernel(&g, &sq[..=truncation], hp.l2_norm_sq);
    Ok(KernelMatrix::with_provenance(
        m,
        Provenance::Expected {
            k_max: hp.k_max,
            truncation,
        },
        Some(Arc::new(hp.clone())),
    ))
}

/// Polynomial kernel `K_ℓ = Σ_{k≤ℓ} ζ_k² (XᵀX)^{⊙k} + σ²_{>ℓ} Id`.
pub fn polynomial_kernel(data: &DataMatrix, hp: &HermiteProfile, ell: usize) -> Result<KernelMatrix> {
    if ell > hp.k_max {
        return Err(Error::InvalidArgument(format!(
            "ell = {ell} exceeds the profile's k_max = {}",
            hp.k_max
        )));
    }
    let g = data.gram();
    let sq = hp.squared_coeffs();
    let m = inner_product_kernel(&g, &sq[..=ell], hp.l2_norm_sq);
    Ok(KernelMatrix::with_provenance(
        m,
        Provenance::Polynomial { ell },
        Some(Arc::new(hp.clone())),
    ))
}

/// How [`cross_kernel_expected`] evaluates the inner-product kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrossMode {
    /// Full series, truncated to entrywise accuracy `tol`.
    Full { tol: f64 },
    /// Degree-ℓ polynomial `Σ_{k≤ℓ} ζ_k² ρ^k`.
    Poly { ell: usize },
}

const COINCIDENT: f64 = 1.0 - 1e-12;

/// Expected (or polynomial) kernel between the training columns and the
/// columns of `z`, `n × m`. Coincident points get `‖σ‖²₂`.
pub fn cross_kernel_expected(
    data: &DataMatrix,
    z: &DMatrix<f64>,
    hp: &HermiteProfile,
    mode: CrossMode,
) -> Result<DMatrix<f64>> {
    if z.nrows() != data.d() {
        return Err(Error::DimensionMismatch {
            context: "test point dimension",
            expected: data.d(),
            got: z.nrows(),
        });
    }
    let x = data.matrix();
    let rho = x.tr_mul(z);
    let coincident = |i: usize, j: usize| rho[(i, j)] >= COINCIDENT && x.column(i) == z.column(j);
    let sq = hp.squared_coeffs();
    let degree = match mode {
        CrossMode::Poly { ell } => {
            if ell > hp.k_max {
                return Err(Error::InvalidArgument(format!(
                    "ell = {ell} exceeds the profile's k_max = {}",
                    hp.k_max
                )));
            }
            ell
        }
        CrossMode::Full { tol } => {
            let mut eps = 0.0f64;
            for j in 0..rho.ncols() {
                for i in 0..rho.nrows() {
                    if !coincident(i, j) {
                        eps = eps.max(rho[(i, j)].abs());
                    }
                }
            }
            series_truncation(hp, eps.min(1.0), tol)?
        }
    };
    let a = &sq[..=degree];
    Ok(DMatrix::from_fn(rho.nrows(), rho.ncols(), |i, j| {
        if coincident(i, j) {
            hp.l2_norm_sq
        } else {
            power_series(a, rho[(i, j)].clamp(-1.0, 1.0))
        }
    }))
}

/// `‖K_λ^{-1/2} (K_N − K) K_λ^{-1/2}‖` with `K_λ = K + λ Id`.
pub fn normalized_concentration(k: &KernelMatrix, k_n: &KernelMatrix, lambda: f64) -> Result<f64> {
    if k.n() != k_n.n() {
        return Err(Error::DimensionMismatch {
            context: "kernel sizes",
            expected: k.n(),
            got: k_n.n(),
        });
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let eig = sym_eigen(&k.ridged(lambda));
    let min_eig = eig.eigenvalues.min();
    if min_eig <= 1e-12 {
        return Err(Error::NotPositiveDefinite { min_eig });
    }
    let scale = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&e| 1.0 / e.sqrt()));
    let v = &eig.eigenvectors;
    // V diag(μ^{-1/2}) Vᵀ
    let inv_sqrt = v * DMatrix::from_diagonal(&scale) * v.transpose();
    let diff = k_n.matrix() - k.matrix();
    let mut s = &inv_sqrt * diff * &inv_sqrt;
    symmetrize(&mut s);
    Ok(sym_spectral_norm(&s))
}

/// Smallest eigenvalue of a kernel matrix.
pub fn min_eigenvalue(k: &KernelMatrix) -> f64 {
    crate::linalg::min_eigenvalue(k.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sample_sphere;
    use crate::hermite::{expand_activation, poly5_coefficients, ActivationSpec};

    fn orthonormal(d: usize, n: usize) -> DataMatrix {
        let mut x = DMatrix::zeros(d, n);
        for j in 0..n {
            x[(j, j)] = 1.0;
        }
        DataMatrix::from_columns(x).unwrap()
    }

    fn poly5() -> HermiteProfile {
        expand_activation(&ActivationSpec::poly5(), 8, 1e-10).unwrap()
    }

    #[test]
    fn weights_are_reproducible_and_block_independent() {
        let a = RandomFeatureMap::new(10, 3, 4, ActivationSpec::relu()).unwrap();
        let b = a.clone().with_block_rows(3);
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.weight_rows(4..7), a.weights().rows(4, 3).into_owned());
        let x = sample_sphere(3, 5, 1).unwrap();
        let ka = empirical_ck(&a, &x).unwrap();
        let kb = empirical_ck(&b, &x).unwrap();
        assert!((ka.matrix() - kb.matrix()).amax() < 1e-14);
    }

    #[test]
    fn constant_activation_gives_all_ones() {
        let fm = RandomFeatureMap::new(37, 4, 0, ActivationSpec::constant(1.0)).unwrap();
        let x = sample_sphere(4, 5, 0).unwrap();
        let k = empirical_ck(&fm, &x).unwrap();
        assert!(k.matrix().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let z = sample_sphere(4, 3, 1).unwrap();
        let c = cross_kernel_empirical(&fm, &x, z.matrix()).unwrap();
        assert!(c.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn empirical_ck_is_symmetric_psd_and_consistent_with_cross() {
        let fm = RandomFeatureMap::new(300, 6, 2, ActivationSpec::relu()).unwrap().with_block_rows(64);
        let x = sample_sphere(6, 9, 3).unwrap();
        let k = empirical_ck(&fm, &x).unwrap();
        assert_eq!(k.matrix(), &k.matrix().transpose());
        assert!(min_eigenvalue(&k) >= -1e-12);
        let c = cross_kernel_empirical(&fm, &x, x.matrix()).unwrap();
        assert!((c - k.matrix()).amax() < 1e-13);
    }

    #[test]
    fn identity_features_concentrate_on_gram() {
        let fm = RandomFeatureMap::new(100_000, 8, 11, ActivationSpec::identity()).unwrap();
        let x = orthonormal(8, 8);
        let k = empirical_ck(&fm, &x).unwrap();
        let dev = (k.matrix() - DMatrix::<f64>::identity(8, 8)).norm();
        assert!(dev < 0.05, "‖K_N − Id‖_F = {dev}");
    }

    #[test]
    fn dimension_mismatch() {
        let fm = RandomFeatureMap::new(4, 3, 0, ActivationSpec::relu()).unwrap();
        let x = sample_sphere(5, 2, 0).unwrap();
        assert!(matches!(empirical_ck(&fm, &x), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn expected_kernel_on_orthonormal_data() {
        let relu = expand_activation(&ActivationSpec::relu(), 16, 1e-10).unwrap();
        let k = expected_kernel(&orthonormal(5, 5), &relu, 1e-12).unwrap();
        let z0 = relu.coeffs[0].powi(2);
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { relu.l2_norm_sq } else { z0 };
                assert!((k.matrix()[(i, j)] - want).abs() < 1e-15);
            }
        }
        assert!(matches!(k.provenance(), Provenance::Expected { truncation: 0, .. }));
    }

    #[test]
    fn expected_kernel_for_poly5_is_the_finite_sum() {
        let hp = poly5();
        let x = sample_sphere(7, 5, 2).unwrap();
        let g = x.gram();
        let k = expected_kernel(&x, &hp, 1e-12).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let direct: f64 = (0..=5).map(|p| hp.coeffs[p].powi(2) * g[(i, j)].powi(p as i32)).sum();
                assert!((k.matrix()[(i, j)] - direct).abs() < 1e-12);
            }
        }
        let k5 = polynomial_kernel(&x, &hp, 5).unwrap();
        assert!((k5.matrix() - k.matrix()).amax() < 1e-12);
    }

    #[test]
    fn polynomial_kernel_matches_k2_formula() {
        let hp = poly5();
        let x = sample_sphere(30, 12, 6).unwrap();
        let g = x.gram();
        let k2 = polynomial_kernel(&x, &hp, 2).unwrap();
        let want = DMatrix::from_fn(12, 12, |i, j| {
            1.0 + g[(i, j)] / 6.0 + g[(i, j)].powi(2) / 9.0 + if i == j { 26.0 / 36.0 } else { 0.0 }
        });
        assert!((k2.matrix() - want).amax() < 1e-12);
        assert!(min_eigenvalue(&k2) >= 26.0 / 36.0 - 1e-10);
    }

    #[test]
    fn duplicate_columns_with_infinite_expansion_fail() {
        let relu = expand_activation(&ActivationSpec::relu(), 16, 1e-10).unwrap();
        let mut x = DMatrix::zeros(3, 3);
        x[(0, 0)] = 1.0;
        x[(1, 1)] = 1.0;
        x[(0, 2)] = 1.0;
        let dup = DataMatrix::from_columns(x).unwrap();
        assert!(matches!(expected_kernel(&dup, &relu, 1e-12), Err(Error::TailNotConvergent(_))));
        // A polynomial activation is fine.
        assert!(expected_kernel(&dup, &poly5(), 1e-12).is_ok());
    }

    #[test]
    fn series_profile_grows_until_the_tail_is_small() {
        let hp = series_profile(&ActivationSpec::relu(), 0.8, 1e-12).unwrap();
        assert!(hp.k_max > 16);
        let t = series_truncation(&hp, 0.8, 1e-12).unwrap();
        assert!(hp.tail_mass(t).unwrap() * 0.8f64.powi(t as i32 + 1) < 1e-12);
        let p = series_profile(&ActivationSpec::poly5(), 0.99, 1e-12).unwrap();
        assert_eq!(p.k_max, 16);
        assert!(matches!(
            series_profile(&ActivationSpec::relu(), 1.0, 1e-12),
            Err(Error::TailNotConvergent(_))
        ));
    }

    #[test]
    fn relu_kernel_matches_monte_carlo() {
        // Two unit vectors with inner product ρ; the expected kernel entry is
        // compared with a plain average over Gaussian weights.
        for rho in [0.5f64, 0.3] {
            let hp = series_profile(&ActivationSpec::relu(), rho, 1e-12).unwrap();
            let mut x = DMatrix::zeros(2, 2);
            x[(0, 0)] = 1.0;
            x[(0, 1)] = rho;
            x[(1, 1)] = (1.0 - rho * rho).sqrt();
            let data = DataMatrix::from_columns(x).unwrap();
            let k = expected_kernel(&data, &hp, 1e-12).unwrap();
            let n = 2_000_000;
            let fm = RandomFeatureMap::new(n, 2, 17, ActivationSpec::relu()).unwrap();
            let phi = fm.features(data.matrix()).unwrap();
            let prods: Vec<f64> = phi.row_iter().map(|r| r[0] * r[1]).collect();
            let mean = prods.iter().sum::<f64>() / n as f64;
            let sd = (prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            let se = sd / (n as f64).sqrt();
            assert!((k.matrix()[(0, 1)] - mean).abs() < 3.0 * se, "rho {rho}: {} vs {mean} ± {se}", k.matrix()[(0, 1)]);
            // Arc-cosine closed form for the same entry.
            let closed = ((1.0 - rho * rho).sqrt() + (std::f64::consts::PI - rho.acos()) * rho) / (2.0 * std::f64::consts::PI);
            assert!((k.matrix()[(0, 1)] - closed).abs() < 1e-9);
        }
    }

    #[test]
    fn empirical_ck_is_unbiased() {
        let relu = series_profile(&ActivationSpec::relu(), 0.9, 1e-12).unwrap();
        let x = sample_sphere(6, 8, 21).unwrap();
        let k = expected_kernel(&x, &relu, 1e-12).unwrap();
        let draws: Vec<DMatrix<f64>> = (0..200)
            .map(|s| {
                let fm = RandomFeatureMap::new(256, 6, 1000 + s, ActivationSpec::relu()).unwrap();
                empirical_ck(&fm, &x).unwrap().matrix().clone()
            })
            .collect();
        let r = draws.len() as f64;
        for i in 0..8 {
            for j in 0..8 {
                let vals: Vec<f64> = draws.iter().map(|m| m[(i, j)]).collect();
                let mean = vals.iter().sum::<f64>() / r;
                let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
                assert!((mean - k.matrix()[(i, j)]).abs() <= 4.0 * sd / r.sqrt(), "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn hadamard_powers_are_psd() {
        let x = sample_sphere(10, 12, 5).unwrap();
        let g = x.gram();
        let mut p = g.clone();
        for _ in 1..=10 {
            assert!(crate::linalg::min_eigenvalue(&p) >= -1e-8);
            p.component_mul_assign(&g);
        }
    }

    #[test]
    fn polynomial_kernel_error_bound() {
        // ‖K − K_ℓ‖_F ≤ √2 ‖σ‖₄² Δ_ℓ whenever eps_n ≤ 1/√2.
        let relu = series_profile(&ActivationSpec::relu(), 0.9, 1e-12).unwrap();
        for seed in 0..5 {
            let x = sample_sphere(60, 20, seed).unwrap();
            let prof = crate::dataset::orthogonality_profile(&x, 4);
            assert!(prof.angle_ok);
            let k = expected_kernel(&x, &relu, 1e-12).unwrap();
            for ell in 0..=4 {
                let kl = polynomial_kernel(&x, &relu, ell).unwrap();
                let diff = (k.matrix() - kl.matrix()).norm();
                assert!(diff <= 2f64.sqrt() * relu.l4_norm_sq() * prof.deltas[ell] + 1e-10);
            }
        }
    }

    #[test]
    fn short_profiles_are_reported() {
        let relu = expand_activation(&ActivationSpec::relu(), 2, 1e-10).unwrap();
        let x = sample_sphere(3, 6, 1).unwrap();
        assert!(matches!(expected_kernel(&x, &relu, 1e-12), Err(Error::TailNotConvergent(_))));
    }

    #[test]
    fn cross_expected_special_cases() {
        let hp = poly5();
        let x = orthonormal(6, 4);
        let mut z = DMatrix::zeros(6, 1);
        z[(5, 0)] = 1.0;
        let c = cross_kernel_expected(&x, &z, &hp, CrossMode::Full { tol: 1e-12 }).unwrap();
        assert!(c.iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let y = sample_sphere(9, 6, 3).unwrap();
        let c = cross_kernel_expected(&y, y.matrix(), &hp, CrossMode::Poly { ell: 2 }).unwrap();
        let k2 = polynomial_kernel(&y, &hp, 2).unwrap();
        assert!((c - k2.matrix()).amax() < 1e-14);
    }

    #[test]
    fn cross_expected_flags_antipodal_points() {
        let relu = expand_activation(&ActivationSpec::relu(), 16, 1e-10).unwrap();
        let x = orthonormal(3, 1);
        let z = -x.matrix().clone();
        assert!(matches!(
            cross_kernel_expected(&x, &z, &relu, CrossMode::Full { tol: 1e-12 }),
            Err(Error::TailNotConvergent(_))
        ));
        assert!(cross_kernel_expected(&x, &z, &relu, CrossMode::Poly { ell: 3 }).is_ok());
    }

    #[test]
    fn normalized_concentration_identities() {
        let hp = poly5();
        let x = sample_sphere(40, 10, 8).unwrap();
        let k = expected_kernel(&x, &hp, 1e-12).unwrap();
        assert!(normalized_concentration(&k, &k, 0.0).unwrap().abs() < 1e-12);
        let delta = 0.3;
        let shifted = KernelMatrix::from_matrix(k.ridged(delta)).unwrap();
        for lambda in [0.0, 0.5] {
            let got = normalized_concentration(&k, &shifted, lambda).unwrap();
            let want = delta / (min_eigenvalue(&k) + lambda);
            assert!((got - want).abs() < 1e-10 * want, "{got} vs {want}");
        }
        let zero = KernelMatrix::from_matrix(DMatrix::zeros(10, 10)).unwrap();
        assert!(matches!(
            normalized_concentration(&zero, &k, 0.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn min_eigenvalue_examples() {
        let id = KernelMatrix::from_matrix(DMatrix::identity(3, 3)).unwrap();
        assert!((min_eigenvalue(&id) - 1.0).abs() < 1e-15);
        let d = KernelMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]))).unwrap();
        assert_eq!(min_eigenvalue(&d), 2.0);
    }

    #[test]
    fn trace_identity() {
        let hp = poly5();
        let x = sample_sphere(25, 15, 4).unwrap();
        for k in [expected_kernel(&x, &hp, 1e-12).unwrap(), polynomial_kernel(&x, &hp, 2).unwrap()] {
            for lambda in [0.0, 0.1, 3.0] {
                let tr = k.ridged(lambda).trace() / 15.0;
                assert!((tr - (lambda + 2.0)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dual_and_primal_prediction_paths_agree() {
        let fm = RandomFeatureMap::new(50, 5, 3, ActivationSpec::relu()).unwrap().with_block_rows(16);
        let x = sample_sphere(5, 7, 2).unwrap();
        let z = sample_sphere(5, 4, 9).unwrap();
        let alpha = DVector::from_fn(7, |i, _| (i as f64 - 3.0) / 7.0);
        let cross = cross_kernel_empirical(&fm, &x, z.matrix()).unwrap();
        let kernel_form = cross.tr_mul(&alpha);
        let dual = fm
            .predict_dual(&x, &DMatrix::from_column_slice(7, 1, alpha.as_slice()), z.matrix())
            .unwrap();
        let theta = fm.primal_weights(&x, &alpha).unwrap();
        let primal = fm.predict_primal(&theta, z.matrix()).unwrap();
        for j in 0..4 {
            assert!((dual[(j, 0)] - kernel_form[j]).abs() < 1e-12);
            assert!((primal[j] - kernel_form[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_prediction_matches_single() {
        let fm = RandomFeatureMap::new(70, 4, 8, ActivationSpec::softplus()).unwrap().with_block_rows(32);
        let x = sample_sphere(4, 6, 1).unwrap();
        let duals: Vec<DMatrix<f64>> = (0..3).map(|k| DMatrix::from_fn(6, 2, |i, j| (i + j + k) as f64 - 3.0)).collect();
        let zs: Vec<DMatrix<f64>> = (0..3).map(|k| sample_sphere(4, 2 + k, 10 + k as u64).unwrap().matrix().clone()).collect();
        let batched = fm.predict_dual_batched(&x, &duals, &zs).unwrap();
        for k in 0..3 {
            let single = fm.predict_dual(&x, &duals[k], &zs[k]).unwrap();
            let cross = cross_kernel_empirical(&fm, &x, &zs[k]).unwrap();
            assert_eq!(batched[k], single);
            assert!((single - cross.transpose() * &duals[k]).amax() < 1e-12);
        }
    }

    #[test]
    fn poly5_coefficients_are_used() {
        assert_eq!(poly5().coeffs[..6], poly5_coefficients()[..]);
    }
}
