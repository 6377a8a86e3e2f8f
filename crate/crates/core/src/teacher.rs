//! Single-neuron teacher `f*(x) = τ(βᵀx)` with `β ~ N(0, Id_d)`, noisy labels,
//! Monte-Carlo generalization error, and the polynomial-approximation lower
//! bound for RFRR.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{sphere_points, DataMatrix};
use crate::hermite::{expand_activation, ActivationSpec, HermiteProfile, DEFAULT_K_MAX, DEFAULT_TOL};
use crate::kernel::{cross_kernel_expected, polynomial_kernel, CrossMode};
use crate::par::try_map_range;
use crate::ridge::{RidgeOptions, RidgeSolver};
use crate::rng::{derive_seed, fill_normal, substream};
use crate::{Error, Result};

/// Default number of teacher replicates.
pub const DEFAULT_REPLICATES: usize = 16;
/// Default number of test points per replicate.
pub const DEFAULT_TEST_POINTS: usize = 2000;

/// The activation `τ` and noise level shared by every teacher draw.
#[derive(Debug, Clone)]
pub struct TeacherSpec {
    pub tau: ActivationSpec,
    pub tau_profile: Arc<HermiteProfile>,
    pub sigma_eps: f64,
}

impl TeacherSpec {
    pub fn new(tau: ActivationSpec, sigma_eps: f64) -> Result<Self> {
        if !(sigma_eps >= 0.0) || !sigma_eps.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma_eps must be >= 0, got {sigma_eps}")));
        }
        let profile = expand_activation(&tau, DEFAULT_K_MAX, DEFAULT_TOL)?;
        Ok(TeacherSpec {
            tau,
            tau_profile: Arc::new(profile),
            sigma_eps,
        })
    }

    /// Draws `β` from the stream keyed by `seed`.
    pub fn draw(&self, d: usize, seed: u64) -> Result<TeacherModel> {
        if d == 0 {
            return Err(Error::InvalidArgument("teacher dimension must be >= 1".into()));
        }
        let mut beta = DVector::zeros(d);
        fill_normal(&mut substream(seed, "beta", &[]), beta.as_mut_slice());
        Ok(TeacherModel {
            tau: self.tau.clone(),
            tau_profile: Arc::clone(&self.tau_profile),
            beta,
            sigma_eps: self.sigma_eps,
            seed,
        })
    }
}

/// One draw of the teacher.
#[derive(Debug, Clone)]
pub struct TeacherModel {
    pub tau: ActivationSpec,
    pub tau_profile: Arc<HermiteProfile>,
    pub beta: DVector<f64>,
    pub sigma_eps: f64,
    pub seed: u64,
}

/// Expands `τ` and draws `β ∈ R^d` from `seed`.
pub fn sample_teacher(tau: ActivationSpec, d: usize, sigma_eps: f64, seed: u64) -> Result<TeacherModel> {
    TeacherSpec::new(tau, sigma_eps)?.draw(d, seed)
}

impl TeacherModel {
    pub fn d(&self) -> usize {
        self.beta.len()
    }

    /// `f*(z) = τ(βᵀz)` for every column of `z`.
    pub fn target(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        if z.nrows() != self.d() {
            return Err(Error::DimensionMismatch {
                context: "input dimension vs. teacher",
                expected: self.d(),
                got: z.nrows(),
            });
        }
        let mut v = z.tr_mul(&self.beta);
        self.tau.apply_in_place(v.as_mut_slice());
        Ok(v)
    }

    /// `y = τ(Xᵀβ) + ε` with `ε ~ N(0, σ_ε² Id)` drawn from `noise_seed`.
    pub fn labels(&self, data: &DataMatrix, noise_seed: u64) -> Result<DVector<f64>> {
        let mut y = self.target(data.matrix())?;
        if self.sigma_eps > 0.0 {
            let mut eps = DVector::zeros(y.len());
            fill_normal(&mut substream(noise_seed, "noise", &[]), eps.as_mut_slice());
            y.axpy(self.sigma_eps, &eps, 1.0);
        }
        Ok(y)
    }
}

/// Source of test points for Monte-Carlo risk estimates.
#[derive(Debug, Clone)]
pub enum TestSampler {
    /// Fresh uniform points on the unit sphere.
    Sphere { d: usize },
    /// The same columns for every replicate.
    Fixed(DMatrix<f64>),
}

impl TestSampler {
    pub fn d(&self) -> usize {
        match self {
            TestSampler::Sphere { d } => *d,
            TestSampler::Fixed(z) => z.nrows(),
        }
    }

    pub fn sample(&self, m: usize, seed: u64) -> Result<DMatrix<f64>> {
        match self {
            TestSampler::Sphere { d } => sphere_points(*d, m, seed, "test"),
            TestSampler::Fixed(z) => Ok(z.clone()),
        }
    }
}

/// A training procedure evaluated by [`generalization_error_mc`]. One call
/// fits on labels `y` and predicts at the columns of `z`; every output column
/// is a separate predictor (for example one per ridge parameter).
pub trait Recipe: Sync {
    fn outputs(&self) -> usize;
    fn fit_predict(&self, teacher: &TeacherModel, y: &DVector<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    /// Predictions for every replicate. The default calls
    /// [`fit_predict`](Self::fit_predict) once per replicate, in parallel;
    /// recipes that can share work across replicates override it.
    fn fit_predict_all(&self, reps: &[Replicate]) -> Result<Vec<DMatrix<f64>>> {
        try_map_range(reps.len(), |b| self.fit_predict(&reps[b].teacher, &reps[b].y, &reps[b].z))
    }
}

/// One Monte-Carlo replicate: a teacher draw, its noisy training labels and
/// fresh test points.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub teacher: TeacherModel,
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
}

/// Kernel ridge regression with a precomputed factorization and a function
/// producing the cross kernel `n × m` at test points.
pub struct KernelRecipe<'a, F> {
    pub solvers: Vec<RidgeSolver<'a>>,
    pub cross: F,
}

impl<F> Recipe for KernelRecipe<'_, F>
where
    F: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>> + Sync,
{
    fn outputs(&self) -> usize {
        self.solvers.len()
    }

    fn fit_predict(&self, _: &TeacherModel, y: &DVector<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = (self.cross)(z)?;
        let mut out = DMatrix::zeros(z.ncols(), self.solvers.len());
        for (j, s) in self.solvers.iter().enumerate() {
            let alpha = s.solve(y)?;
            out.set_column(j, &c.tr_mul(&alpha));
        }
        Ok(out)
    }
}

/// Mean and standard error of a Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> McEstimate {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return McEstimate { mean, stderr: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        McEstimate {
            mean,
            stderr: (var / n).sqrt(),
        }
    }
}

/// Per-replicate mean squared errors, `replicates × outputs`.
#[derive(Debug, Clone)]
pub struct McResult {
    pub per_replicate: DMatrix<f64>,
}

impl McResult {
    pub fn replicates(&self) -> usize {
        self.per_replicate.nrows()
    }

    /// Generalization error of output `k`, with the replicate-level standard
    /// error.
    pub fn estimate(&self, k: usize) -> McEstimate {
        let col: Vec<f64> = self.per_replicate.column(k).iter().copied().collect();
        McEstimate::from_samples(&col)
    }

    /// Paired difference `output a − output b`; both saw the same teacher,
    /// noise and test points in every replicate.
    pub fn difference(&self, a: usize, b: usize) -> McEstimate {
        let d: Vec<f64> = self
            .per_replicate
            .row_iter()
            .map(|r| r[a] - r[b])
            .collect();
        McEstimate::from_samples(&d)
    }
}

/// Estimates `E[(f̂(x) − f*(x))²]` over the teacher signal `β`, the label
/// noise and fresh test points, with the training inputs held fixed.
///
/// Replicate `b` draws `β_b`, `ε_b` and `m` test points from substreams of
/// `seed`, refits the recipe on `y_b` and averages the squared error.
pub fn generalization_error_mc<R: Recipe + ?Sized>(
    recipe: &R,
    teacher: &TeacherSpec,
    data: &DataMatrix,
    sampler: &TestSampler,
    replicates: usize,
    m: usize,
    seed: u64,
) -> Result<McResult> {
    if replicates < 2 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 replicates and 1 test point, got B = {replicates}, M = {m}"
        )));
    }
    if sampler.d() != data.d() {
        return Err(Error::DimensionMismatch {
            context: "test sampler dimension",
            expected: data.d(),
            got: sampler.d(),
        });
    }
    let outputs = recipe.outputs();
    let reps = try_map_range(replicates, |b| {
        let b = b as u64;
        let teacher = teacher.draw(data.d(), derive_seed(seed, "teacher", &[b]))?;
        let y = teacher.labels(data, derive_seed(seed, "noise", &[b]))?;
        let z = sampler.sample(m, derive_seed(seed, "test", &[b]))?;
        Ok::<_, Error>(Replicate { teacher, y, z })
    })?;
    let preds = recipe.fit_predict_all(&reps)?;
    if preds.len() != reps.len() {
        return Err(Error::DimensionMismatch {
            context: "recipe replicate count",
            expected: reps.len(),
            got: preds.len(),
        });
    }
    let mut rows = Vec::with_capacity(replicates);
    for (rep, pred) in reps.iter().zip(&preds) {
        let truth = rep.teacher.target(&rep.z)?;
        if pred.nrows() != rep.z.ncols() || pred.ncols() != outputs {
            return Err(Error::DimensionMismatch {
                context: "recipe output shape",
                expected: rep.z.ncols() * outputs,
                got: pred.nrows() * pred.ncols(),
            });
        }
        rows.push(
            (0..outputs)
                .map(|k| {
                    let col = pred.column(k);
                    col.iter().zip(truth.iter()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / rep.z.ncols() as f64
                })
                .collect::<Vec<f64>>(),
        );
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(McResult {
        per_replicate: DMatrix::from_row_slice(replicates, outputs, &flat),
    })
}

/// `‖P_{>ℓ} f*‖²₂ = Σ_{k>ℓ} ζ_k(τ)²`.
pub fn projection_tail_norm(tau_profile: &HermiteProfile, ell: usize) -> Result<f64> {
    tau_profile.tail_mass(ell)
}

/// The two terms of the RFRR lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBound {
    /// `‖P_{>ℓ} f*‖²`.
    pub bias: f64,
    /// `σ_ε² E_x[K_ℓ(X, x)ᵀ K_{ℓ,λ}^{-2} K_ℓ(X, x)]`, estimated over test points.
    pub variance: McEstimate,
}

impl LowerBound {
    pub fn total(&self) -> f64 {
        self.bias + self.variance.mean
    }
}

/// Lower bound `‖P_{>ℓ} f*‖² + σ_ε² E_x[K_{m,ℓ}ᵀ K_{ℓ,λ}^{-2} K_{m,ℓ}]` on the
/// RFRR generalization error.
#[allow(clippy::too_many_arguments)]
pub fn lower_bound_estimate(
    data: &DataMatrix,
    sigma_hp: &HermiteProfile,
    tau_hp: &HermiteProfile,
    ell: usize,
    lambda: f64,
    sigma_eps: f64,
    sampler: &TestSampler,
    m: usize,
    seed: u64,
) -> Result<LowerBound> {
    let bias = projection_tail_norm(tau_hp, ell)?;
    if sigma_eps == 0.0 {
        return Ok(LowerBound {
            bias,
            variance: McEstimate { mean: 0.0, stderr: 0.0 },
        });
    }
    let k_ell = polynomial_kernel(data, sigma_hp, ell)?;
    let solver = RidgeSolver::new(&k_ell, lambda, RidgeOptions::default())?;
    let z = sampler.sample(m, derive_seed(seed, "test", &[]))?;
    let cross = cross_kernel_expected(data, &z, sigma_hp, CrossMode::Poly { ell })?;
    let v = solver.solve_many(&cross)?;
    let s2 = sigma_eps * sigma_eps;
    let quad: Vec<f64> = v.column_iter().map(|c| s2 * c.norm_squared()).collect();
    Ok(LowerBound {
        bias,
        variance: McEstimate::from_samples(&quad),
    })
}

/// Degrees `k` where `ζ_k(σ) ≠ 0` but `ζ_k(τ) = 0`. A non-empty result means
/// the teacher has no component along a direction the features can represent.
pub fn compatibility_gaps(sigma_hp: &HermiteProfile, tau_hp: &HermiteProfile) -> Vec<usize> {
    const ZERO: f64 = 1e-9;
    let k_max = sigma_hp.k_max.min(tau_hp.k_max);
    (0..=k_max)
        .filter(|&k| sigma_hp.coeff(k).abs() > ZERO && tau_hp.coeff(k).abs() <= ZERO)
        .collect()
}
