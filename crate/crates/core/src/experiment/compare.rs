use nalgebra::{DMatrix, DVector};

use super::{kernel_profile, resolve_ell, DataConfig, EllChoice};
use crate::hermite::{ActivationSpec, HermiteProfile, DEFAULT_K_MAX};
use crate::kernel::{
    cross_kernel_expected, empirical_ck, expected_kernel, polynomial_kernel, CrossMode, RandomFeatureMap,
    DEFAULT_SERIES_TOL,
};
use crate::ridge::{gcv, loocv_shortcut, training_error, RidgeOptions, RidgeSolver};
use crate::rng::derive_seed;
use crate::teacher::{generalization_error_mc, McEstimate, Recipe, Replicate, TeacherModel, TeacherSpec, TestSampler};
use crate::Result;

/// One RFRR / KRR / PKRR comparison on a single dataset.
#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub data: DataConfig,
    pub activation: ActivationSpec,
    pub tau: ActivationSpec,
    pub sigma_eps: f64,
    pub n_features: usize,
    pub lambda: f64,
    pub ell: EllChoice,
    pub seed: u64,
    pub b: usize,
    pub m: usize,
    pub k_max: usize,
}

impl CompareConfig {
    pub fn new(data: DataConfig, activation: ActivationSpec, tau: ActivationSpec, n_features: usize, lambda: f64, seed: u64) -> Self {
        CompareConfig {
            data,
            activation,
            tau,
            sigma_eps: 0.0,
            n_features,
            lambda,
            ell: EllChoice::Fixed(2),
            seed,
            b: 8,
            m: 1000,
            k_max: DEFAULT_K_MAX,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorSummary {
    pub name: &'static str,
    pub train: f64,
    pub loocv: f64,
    /// `None` at `λ = 0`.
    pub gcv: Option<f64>,
    pub test: McEstimate,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub ell: usize,
    /// RFRR, KRR, PKRR in that order.
    pub estimators: Vec<EstimatorSummary>,
    /// Paired test-error differences `(i, j, estimate of test_i − test_j)`.
    pub test_diffs: Vec<(usize, usize, McEstimate)>,
}

struct Triple<'a> {
    fm: &'a RandomFeatureMap,
    data: &'a crate::dataset::DataMatrix,
    hp: &'a HermiteProfile,
    ell: usize,
    solvers: [&'a RidgeSolver<'a>; 3],
}

impl Recipe for Triple<'_> {
    fn outputs(&self) -> usize {
        3
    }

    fn fit_predict(&self, _: &TeacherModel, y: &DVector<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let dual = self.solvers[0].solve_many(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()))?;
        let rf = self.fm.predict_dual(self.data, &dual, z)?;
        self.assemble(rf, y, z)
    }

    fn fit_predict_all(&self, reps: &[Replicate]) -> Result<Vec<DMatrix<f64>>> {
        let duals = reps
            .iter()
            .map(|r| self.solvers[0].solve_many(&DMatrix::from_column_slice(r.y.len(), 1, r.y.as_slice())))
            .collect::<Result<Vec<_>>>()?;
        let zs: Vec<DMatrix<f64>> = reps.iter().map(|r| r.z.clone()).collect();
        let rf = self.fm.predict_dual_batched(self.data, &duals, &zs)?;
        reps.iter().zip(rf).map(|(r, p)| self.assemble(p, &r.y, &r.z)).collect()
    }
}

impl Triple<'_> {
    fn assemble(&self, rf: DMatrix<f64>, y: &DVector<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a: Vec<DVector<f64>> = self.solvers[1..].iter().map(|s| s.solve(y)).collect::<Result<_>>()?;
        let mut out = DMatrix::zeros(z.ncols(), 3);
        out.set_column(0, &rf.column(0));
        let full = cross_kernel_expected(self.data, z, self.hp, CrossMode::Full { tol: DEFAULT_SERIES_TOL })?;
        out.set_column(1, &full.tr_mul(&a[0]));
        let poly = cross_kernel_expected(self.data, z, self.hp, CrossMode::Poly { ell: self.ell })?;
        out.set_column(2, &poly.tr_mul(&a[1]));
        Ok(out)
    }
}

/// Fits RFRR, KRR and PKRR on the same labels and reports training error,
/// LOOCV, GCV and a paired Monte-Carlo test error for each.
pub fn compare(cfg: &CompareConfig) -> Result<CompareReport> {
    let root = cfg.seed;
    let data = cfg.data.load(derive_seed(root, "data", &[]))?;
    let hp = kernel_profile(&cfg.activation, &data, cfg.k_max, data.n() * cfg.m * cfg.b)?;
    let teacher = TeacherSpec::new(cfg.tau.clone(), cfg.sigma_eps)?;
    let ell = resolve_ell(cfg.ell, &data, &hp)?;

    let fm = RandomFeatureMap::new(cfg.n_features, data.d(), derive_seed(root, "weights", &[]), cfg.activation.clone())?;
    let kernels = [
        empirical_ck(&fm, &data)?,
        expected_kernel(&data, &hp, DEFAULT_SERIES_TOL)?,
        polynomial_kernel(&data, &hp, ell)?,
    ];
    let solvers = kernels
        .iter()
        .map(|k| RidgeSolver::new(k, cfg.lambda, RidgeOptions::default()))
        .collect::<Result<Vec<_>>>()?;

    let y = teacher
        .draw(data.d(), derive_seed(root, "trial-teacher", &[]))?
        .labels(&data, derive_seed(root, "trial-noise", &[]))?;

    let recipe = Triple {
        fm: &fm,
        data: &data,
        hp: &hp,
        ell,
        solvers: [&solvers[0], &solvers[1], &solvers[2]],
    };
    let mc = generalization_error_mc(
        &recipe,
        &teacher,
        &data,
        &TestSampler::Sphere { d: data.d() },
        cfg.b,
        cfg.m,
        derive_seed(root, "test", &[]),
    )?;

    let names = ["RFRR", "KRR", "PKRR"];
    let mut estimators = Vec::with_capacity(3);
    for (i, s) in solvers.iter().enumerate() {
        let fit = s.fit(&y)?;
        estimators.push(EstimatorSummary {
            name: names[i],
            train: training_error(&fit),
            loocv: loocv_shortcut(&fit)?,
            gcv: if cfg.lambda > 0.0 { Some(gcv(&fit)?) } else { None },
            test: mc.estimate(i),
        });
    }
    let test_diffs = [(0, 1), (0, 2), (1, 2)]
        .into_iter()
        .map(|(i, j)| (i, j, mc.difference(i, j)))
        .collect();
    Ok(CompareReport {
        ell,
        estimators,
        test_diffs,
    })
}
