//! Seeded sweeps comparing RFRR against kernel ridge regression as the
//! number of random features grows.
//!
//! One training set `X` is fixed per sweep. For every trial the teacher labels
//! are redrawn, and for every `(trial, N)` cell a fresh weight matrix is
//! drawn. Each cell reports, for every ridge parameter, the RFRR value of each
//! metric next to the value for the baseline kernel. All randomness comes
//! from substreams keyed by the cell coordinates, so results do not depend on
//! scheduling or thread count.

mod compare;
mod output;

pub use compare::{compare, CompareConfig, CompareReport, EstimatorSummary};
pub use output::{emit_csv, fit_slope, parse_csv, slope_table, write_csv, SlopeFit, SlopeRow, CSV_HEADER};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::dataset::{load_csv, orthogonality_profile, sample_cube, sample_sphere, select_ell, DataMatrix, DEFAULT_L_MAX};
use crate::hermite::{expand_activation, ActivationSpec, HermiteProfile, DEFAULT_K_MAX, DEFAULT_TOL};
use crate::kernel::{
    cross_kernel_expected, empirical_ck, expected_kernel, max_inner_product, normalized_concentration,
    polynomial_kernel, series_profile, CrossMode, KernelMatrix, RandomFeatureMap, DEFAULT_SERIES_TOL,
};
use crate::par::try_map_range;
use crate::ridge::{gcv, loocv_naive, loocv_shortcut, training_error, RidgeFit, RidgeOptions, RidgeSolver};
use crate::rng::derive_seed;
use crate::teacher::{generalization_error_mc, Recipe, Replicate, TeacherModel, TeacherSpec, TestSampler};
use crate::{Error, Result};

/// Relative tolerance of the once-per-sweep shortcut vs. refit LOOCV check.
const LOOCV_CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Train,
    Loocv,
    Gcv,
    Test,
    Concentration,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Train, Metric::Loocv, Metric::Gcv, Metric::Test, Metric::Concentration];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Train => "train",
            Metric::Loocv => "loocv",
            Metric::Gcv => "gcv",
            Metric::Test => "test",
            Metric::Concentration => "concentration",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric '{s}' (expected train, loocv, gcv, test or concentration)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Sphere,
    Cube,
    Csv,
}

/// Where the training inputs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dist: Distribution,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// For CSV input: keep this many randomly chosen features.
    #[serde(default)]
    pub feature_subsample: Option<usize>,
}

impl DataConfig {
    pub fn sphere(d: usize, n: usize) -> Self {
        DataConfig {
            dist: Distribution::Sphere,
            d: Some(d),
            n: Some(n),
            path: None,
            feature_subsample: None,
        }
    }

    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        match self.dist {
            Distribution::Sphere | Distribution::Cube => {
                for (field, v) in [("data.d", self.d), ("data.n", self.n)] {
                    match v {
                        None => out.push(ConfigIssue::new(field, "required for synthetic data")),
                        Some(0) => out.push(ConfigIssue::new(field, "must be >= 1")),
                        _ => {}
                    }
                }
            }
            Distribution::Csv => {
                if self.path.is_none() {
                    out.push(ConfigIssue::new("data.path", "required when dist = \"csv\""));
                }
            }
        }
        out
    }

    /// Builds the training matrix. Synthetic draws use `seed`.
    pub fn load(&self, seed: u64) -> Result<DataMatrix> {
        match self.dist {
            Distribution::Sphere => sample_sphere(self.d.unwrap_or(0), self.n.unwrap_or(0), seed),
            Distribution::Cube => sample_cube(self.d.unwrap_or(0), self.n.unwrap_or(0), seed),
            Distribution::Csv => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("csv data needs a path".into()))?;
                let data = load_csv(path, self.feature_subsample, seed)?;
                match self.n {
                    Some(n) if n < data.n() => Ok(data.select_columns(&(0..n).collect::<Vec<_>>())),
                    _ => Ok(data),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub tau: ActivationSpec,
    pub sigma_eps: f64,
}

/// Fixed truncation degree or automatic choice from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EllChoice {
    Fixed(usize),
    Auto,
}

impl Serialize for EllChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EllChoice::Fixed(l) => s.serialize_u64(*l as u64),
            EllChoice::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for EllChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(EllChoice::Fixed(v as usize)),
            Raw::Str(s) if s == "auto" => Ok(EllChoice::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "ell must be a non-negative integer or \"auto\", got \"{s}\""
            ))),
        }
    }
}

/// Kernel that RFRR is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// The expected kernel `K` (KRR).
    #[default]
    Expected,
    /// The polynomial kernel `K_ℓ` (PKRR).
    Polynomial,
}

/// Baseline actually used by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Expected,
    Polynomial(usize),
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineKind::Expected => f.write_str("expected"),
            BaselineKind::Polynomial(l) => write!(f, "polynomial({l})"),
        }
    }
}

fn default_trials() -> usize {
    5
}
fn default_b() -> usize {
    8
}
fn default_m() -> usize {
    1000
}
fn default_k_max() -> usize {
    DEFAULT_K_MAX
}
fn default_ell() -> EllChoice {
    EllChoice::Auto
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub activation: ActivationSpec,
    pub teacher: TeacherConfig,
    #[serde(default = "default_ell")]
    pub ell: EllChoice,
    #[serde(default)]
    pub baseline: Baseline,
    pub lambda_grid: Vec<f64>,
    #[serde(rename = "N_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Teacher replicates per cell for the test metric.
    #[serde(rename = "B", default = "default_b")]
    pub b: usize,
    /// Test points per replicate.
    #[serde(rename = "M", default = "default_m")]
    pub m: usize,
    pub root_seed: u64,
    pub metrics: Vec<Metric>,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
}

/// One problem with a configuration, tied to the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    /// Dotted field path, as written in the TOML file.
    pub field: &'static str,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(field: &'static str, message: impl Into<String>) -> Self {
        ConfigIssue {
            field,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ExperimentConfig {
    /// Every structural and semantic problem, not just the first.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut out = self.data.issues();
        if !(self.teacher.sigma_eps >= 0.0) || !self.teacher.sigma_eps.is_finite() {
            out.push(ConfigIssue::new("teacher.sigma_eps", "must be finite and >= 0"));
        }
        if self.lambda_grid.is_empty() {
            out.push(ConfigIssue::new("lambda_grid", "must not be empty"));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            out.push(ConfigIssue::new("lambda_grid", "values must be finite and >= 0"));
        }
        if self.metrics.contains(&Metric::Gcv) && self.lambda_grid.contains(&0.0) {
            out.push(ConfigIssue::new("lambda_grid", "contains 0, but GCV is undefined at lambda = 0"));
        }
        if self.n_grid.is_empty() {
            out.push(ConfigIssue::new("N_grid", "must not be empty"));
        } else if self.n_grid[0] == 0 {
            out.push(ConfigIssue::new("N_grid", "values must be >= 1"));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            out.push(ConfigIssue::new("N_grid", "must be strictly increasing"));
        }
        if self.trials == 0 {
            out.push(ConfigIssue::new("trials", "must be >= 1"));
        }
        if self.metrics.is_empty() {
            out.push(ConfigIssue::new("metrics", "must list at least one metric"));
        }
        let mut seen = self.metrics.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            out.push(ConfigIssue::new("metrics", "lists a metric twice"));
        }
        if self.metrics.contains(&Metric::Test) {
            if self.b < 2 {
                out.push(ConfigIssue::new("B", "must be >= 2 for the test metric"));
            }
            if self.m == 0 {
                out.push(ConfigIssue::new("M", "must be >= 1 for the test metric"));
            }
        }
        if let EllChoice::Fixed(l) = self.ell {
            if l > self.k_max {
                out.push(ConfigIssue::new("ell", format!("exceeds k_max = {}", self.k_max)));
            }
        }
        out
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub metric: Metric,
    pub lambda: f64,
    pub n_features: usize,
    pub trial: usize,
    pub rf_value: f64,
    pub kernel_value: f64,
    pub abs_diff: f64,
    /// Monte-Carlo standard error of `rf_value − kernel_value` (test metric
    /// only, not written to CSV).
    pub stderr: Option<f64>,
}

impl SweepRow {
    fn new(metric: Metric, lambda: f64, n_features: usize, trial: usize, rf: f64, kernel: f64) -> Self {
        SweepRow {
            metric,
            lambda,
            n_features,
            trial,
            rf_value: rf,
            kernel_value: kernel,
            abs_diff: (rf - kernel).abs(),
            stderr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepProvenance {
    pub config_hash: String,
    pub root_seed: u64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub kernel_baseline: BaselineKind,
    /// Truncation degree in effect (fixed or selected).
    pub ell: Option<usize>,
    pub provenance: SweepProvenance,
}

// Values of the ridge metrics for one kernel and one ridge parameter.
#[derive(Debug, Clone, Copy, Default)]
struct RidgeValues {
    train: f64,
    loocv: f64,
    gcv: f64,
}

fn ridge_values(fit: &RidgeFit<'_>, metrics: &[Metric]) -> Result<RidgeValues> {
    let mut v = RidgeValues {
        train: training_error(fit),
        ..Default::default()
    };
    if metrics.contains(&Metric::Loocv) {
        v.loocv = loocv_shortcut(fit)?;
    }
    if metrics.contains(&Metric::Gcv) {
        v.gcv = gcv(fit)?;
    }
    Ok(v)
}

fn check_loocv(kernel: &KernelMatrix, y: &DVector<f64>, lambda: f64, shortcut: f64, what: &str) -> Result<()> {
    let naive = loocv_naive(kernel, y, lambda)?;
    if (shortcut - naive).abs() > LOOCV_CHECK_TOL * naive.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::ConsistencyCheck(format!(
            "{what}: LOOCV shortcut {shortcut:e} differs from the refit value {naive:e}"
        )));
    }
    Ok(())
}

// Everything shared by the cells of one sweep.
struct Sweep<'a> {
    cfg: &'a ExperimentConfig,
    data: DataMatrix,
    hp: HermiteProfile,
    teacher: Option<TeacherSpec>,
    labels: Vec<DVector<f64>>,
    base: KernelMatrix,
    base_mode: CrossMode,
    expected: Option<KernelMatrix>,
}

// Predicts with RFRR and with the baseline kernel for every λ from the same
// labels, so the test metric differences are paired.
struct PairedRecipe<'a> {
    fm: &'a RandomFeatureMap,
    data: &'a DataMatrix,
    hp: &'a HermiteProfile,
    mode: CrossMode,
    rf: &'a [RidgeSolver<'a>],
    base: &'a [RidgeSolver<'a>],
}

impl Recipe for PairedRecipe<'_> {
    fn outputs(&self) -> usize {
        self.rf.len() + self.base.len()
    }

    fn fit_predict(&self, _: &TeacherModel, y: &DVector<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let l = self.rf.len();
        let ycol = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        let mut dual = DMatrix::zeros(y.len(), l);
        for (j, s) in self.rf.iter().enumerate() {
            dual.set_column(j, &s.solve_many(&ycol)?.column(0));
        }
        let rf_pred = self.fm.predict_dual(self.data, &dual, z)?;
        let mut out = DMatrix::zeros(z.ncols(), l + self.base.len());
        out.columns_mut(0, l).copy_from(&rf_pred);
        self.fill_baseline(&mut out, y, z)?;
        Ok(out)
    }

    fn fit_predict_all(&self, reps: &[Replicate]) -> Result<Vec<DMatrix<f64>>> {
        let l = self.rf.len();
        let ys = DMatrix::from_columns(&reps.iter().map(|r| r.y.clone()).collect::<Vec<_>>());
        let alphas: Vec<DMatrix<f64>> = self.rf.iter().map(|s| s.solve_many(&ys)).collect::<Result<_>>()?;
        // Dual coefficients of replicate b, one column per λ.
        let duals: Vec<DMatrix<f64>> = (0..reps.len())
            .map(|b| DMatrix::from_columns(&alphas.iter().map(|a| a.column(b).into_owned()).collect::<Vec<_>>()))
            .collect();
        let zs: Vec<DMatrix<f64>> = reps.iter().map(|r| r.z.clone()).collect();
        let rf_preds = self.fm.predict_dual_batched(self.data, &duals, &zs)?;
        reps.iter()
            .zip(rf_preds)
            .map(|(rep, rf_pred)| {
                let mut out = DMatrix::zeros(rep.z.ncols(), l + self.base.len());
                out.columns_mut(0, l).copy_from(&rf_pred);
                self.fill_baseline(&mut out, &rep.y, &rep.z)?;
                Ok(out)
            })
            .collect()
    }
}

impl PairedRecipe<'_> {
    fn fill_baseline(&self, out: &mut DMatrix<f64>, y: &DVector<f64>, z: &DMatrix<f64>) -> Result<()> {
        let l = self.rf.len();
        let cross = cross_kernel_expected(self.data, z, self.hp, self.mode)?;
        for (j, s) in self.base.iter().enumerate() {
            let alpha = s.solve(y)?;
            out.set_column(l + j, &cross.tr_mul(&alpha));
        }
        Ok(())
    }
}

fn solvers<'k>(k: &'k KernelMatrix, lambdas: &[f64]) -> Result<Vec<RidgeSolver<'k>>> {
    lambdas
        .iter()
        .map(|&l| RidgeSolver::new(k, l, RidgeOptions::default()))
        .collect()
}

impl Sweep<'_> {
    fn needs(&self, m: Metric) -> bool {
        self.cfg.metrics.contains(&m)
    }

    fn weight_seed(&self, trial: usize, n_features: usize) -> u64 {
        derive_seed(self.cfg.root_seed, "weights", &[trial as u64, n_features as u64])
    }

    fn test_seed(&self, trial: usize) -> u64 {
        derive_seed(self.cfg.root_seed, "test", &[trial as u64])
    }

    fn run_cell(&self, trial: usize, n_idx: usize, base_values: &[RidgeValues], base: &[RidgeSolver<'_>]) -> Result<Vec<SweepRow>> {
        let cfg = self.cfg;
        let n_features = cfg.n_grid[n_idx];
        let fm = RandomFeatureMap::new(n_features, self.data.d(), self.weight_seed(trial, n_features), cfg.activation.clone())?;
        let k_n = empirical_ck(&fm, &self.data)?;
        let rf = solvers(&k_n, &cfg.lambda_grid)?;
        let y = &self.labels[trial];
        let mut rows = Vec::new();

        let ridge_metrics = [Metric::Train, Metric::Loocv, Metric::Gcv];
        if ridge_metrics.iter().any(|&m| self.needs(m)) {
            for (li, (&lambda, solver)) in cfg.lambda_grid.iter().zip(&rf).enumerate() {
                let coords = |m: Metric| format!("metric={m}, lambda={lambda}, N={n_features}, trial={trial}");
                let fit = solver.fit(y)?;
                let v = ridge_values(&fit, &cfg.metrics).map_err(|e| e.at(coords(Metric::Loocv)))?;
                let b = base_values[li];
                if trial == 0 && n_idx == 0 && li == 0 && self.needs(Metric::Loocv) {
                    check_loocv(&k_n, y, lambda, v.loocv, "random-feature kernel").map_err(|e| e.at(coords(Metric::Loocv)))?;
                }
                for m in ridge_metrics {
                    if self.needs(m) {
                        let (r, k) = match m {
                            Metric::Train => (v.train, b.train),
                            Metric::Loocv => (v.loocv, b.loocv),
                            _ => (v.gcv, b.gcv),
                        };
                        rows.push(SweepRow::new(m, lambda, n_features, trial, r, k));
                    }
                }
            }
        }

        if self.needs(Metric::Test) {
            let teacher = self.teacher.as_ref().expect("teacher is built when the test metric is requested");
            let recipe = PairedRecipe {
                fm: &fm,
                data: &self.data,
                hp: &self.hp,
                mode: self.base_mode,
                rf: &rf,
                base,
            };
            let sampler = TestSampler::Sphere { d: self.data.d() };
            let mc = generalization_error_mc(&recipe, teacher, &self.data, &sampler, cfg.b, cfg.m, self.test_seed(trial))
                .map_err(|e| e.at(format!("metric=test, N={n_features}, trial={trial}")))?;
            let l = cfg.lambda_grid.len();
            for (li, &lambda) in cfg.lambda_grid.iter().enumerate() {
                let mut row = SweepRow::new(
                    Metric::Test,
                    lambda,
                    n_features,
                    trial,
                    mc.estimate(li).mean,
                    mc.estimate(l + li).mean,
                );
                row.stderr = Some(mc.difference(li, l + li).stderr);
                rows.push(row);
            }
        }

        if self.needs(Metric::Concentration) {
            let k = self.expected.as_ref().unwrap_or(&self.base);
            for &lambda in &cfg.lambda_grid {
                let s = normalized_concentration(k, &k_n, lambda)
                    .map_err(|e| e.at(format!("metric=concentration, lambda={lambda}, N={n_features}, trial={trial}")))?;
                rows.push(SweepRow::new(Metric::Concentration, lambda, n_features, trial, s, 0.0));
            }
        }
        Ok(rows)
    }
}

/// Hermite profile of `act` long enough for the expected-kernel series on
/// `data` and on up to `test_pairs` (training, test) pairs of fresh sphere
/// points.
///
/// Fresh points are covered up to the inner product that a union bound over
/// the pairs exceeds with probability below 1e-3; the total is capped at 0.95.
pub fn kernel_profile(act: &ActivationSpec, data: &DataMatrix, k_min: usize, test_pairs: usize) -> Result<HermiteProfile> {
    if let Some(deg) = act.polynomial_degree() {
        return expand_activation(act, k_min.max(deg), DEFAULT_TOL);
    }
    let mut eps = max_inner_product(data);
    if test_pairs > 0 {
        let t = (2.0 * (2e3 * test_pairs as f64).ln() / data.d() as f64).sqrt();
        eps = eps.max(t);
    }
    let hp = series_profile(act, eps.min(0.95), DEFAULT_SERIES_TOL)?;
    if hp.k_max >= k_min {
        Ok(hp)
    } else {
        expand_activation(act, k_min, DEFAULT_TOL)
    }
}

/// Chooses `ℓ`: the fixed value, or the smallest admissible one for the data.
pub fn resolve_ell(choice: EllChoice, data: &DataMatrix, hp: &HermiteProfile) -> Result<usize> {
    match choice {
        EllChoice::Fixed(l) => Ok(l),
        EllChoice::Auto => {
            let mut profile = orthogonality_profile(data, DEFAULT_L_MAX.min(hp.k_max));
            select_ell(&mut profile, hp)
        }
    }
}

/// Runs every `(trial, N)` cell of the sweep. Identical configurations give
/// identical results whatever the thread count.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let issues = cfg.validate();
    if !issues.is_empty() {
        let msg: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
        return Err(Error::InvalidArgument(msg.join("; ")));
    }
    let root = cfg.root_seed;
    let data = cfg.data.load(derive_seed(root, "data", &[]))?;
    let test_pairs = if cfg.metrics.contains(&Metric::Test) {
        data.n() * cfg.m * cfg.b
    } else {
        0
    };
    let hp = kernel_profile(&cfg.activation, &data, cfg.k_max, test_pairs)?;
    let teacher_spec = TeacherSpec::new(cfg.teacher.tau.clone(), cfg.teacher.sigma_eps)?;

    let ell = match (cfg.baseline, cfg.ell) {
        (Baseline::Expected, EllChoice::Auto) => None,
        (_, choice) => Some(resolve_ell(choice, &data, &hp)?),
    };
    let (base, base_mode, kind) = match (cfg.baseline, ell) {
        (Baseline::Polynomial, Some(l)) => (
            polynomial_kernel(&data, &hp, l)?,
            CrossMode::Poly { ell: l },
            BaselineKind::Polynomial(l),
        ),
        _ => (
            expected_kernel(&data, &hp, DEFAULT_SERIES_TOL)?,
            CrossMode::Full { tol: DEFAULT_SERIES_TOL },
            BaselineKind::Expected,
        ),
    };
    let expected = match kind {
        BaselineKind::Polynomial(_) if cfg.metrics.contains(&Metric::Concentration) => {
            Some(expected_kernel(&data, &hp, DEFAULT_SERIES_TOL)?)
        }
        _ => None,
    };

    let labels = (0..cfg.trials)
        .map(|t| {
            let model = teacher_spec.draw(data.d(), derive_seed(root, "trial-teacher", &[t as u64]))?;
            model.labels(&data, derive_seed(root, "trial-noise", &[t as u64]))
        })
        .collect::<Result<Vec<_>>>()?;

    let sweep = Sweep {
        cfg,
        data,
        hp,
        teacher: cfg.metrics.contains(&Metric::Test).then_some(teacher_spec),
        labels,
        base,
        base_mode,
        expected,
    };

    let base_solvers = solvers(&sweep.base, &cfg.lambda_grid)?;
    let mut base_values = Vec::with_capacity(cfg.trials);
    for (t, y) in sweep.labels.iter().enumerate() {
        let mut per_lambda = Vec::with_capacity(base_solvers.len());
        for (li, s) in base_solvers.iter().enumerate() {
            let lambda = cfg.lambda_grid[li];
            let fit = s.fit(y)?;
            let v = ridge_values(&fit, &cfg.metrics).map_err(|e| e.at(format!("baseline, lambda={lambda}, trial={t}")))?;
            if t == 0 && li == 0 && cfg.metrics.contains(&Metric::Loocv) {
                check_loocv(&sweep.base, y, lambda, v.loocv, "baseline kernel")?;
            }
            per_lambda.push(v);
        }
        base_values.push(per_lambda);
    }

    let n_cells = cfg.trials * cfg.n_grid.len();
    let cells = try_map_range(n_cells, |c| {
        let (trial, n_idx) = (c / cfg.n_grid.len(), c % cfg.n_grid.len());
        sweep
            .run_cell(trial, n_idx, &base_values[trial], &base_solvers)
            .map_err(|e| match e {
                e @ Error::AtCell { .. } => e,
                e => e.at(format!("N={}, trial={trial}", cfg.n_grid[n_idx])),
            })
    })?;
    let mut rows: Vec<SweepRow> = cells.into_iter().flatten().collect();
    output::sort_rows(&mut rows);

    Ok(SweepResult {
        rows,
        kernel_baseline: kind,
        ell,
        provenance: SweepProvenance {
            config_hash: cfg.hash(),
            root_seed: root,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            data: DataConfig::sphere(40, 10),
            activation: ActivationSpec::relu(),
            teacher: TeacherConfig {
                tau: ActivationSpec::softplus(),
                sigma_eps: 0.3,
            },
            ell: EllChoice::Auto,
            baseline: Baseline::Expected,
            lambda_grid: vec![0.1, 1.0],
            n_grid: vec![16, 32, 64],
            trials: 2,
            b: 2,
            m: 20,
            root_seed: 42,
            metrics: vec![Metric::Train],
            k_max: 16,
        }
    }

    #[test]
    fn row_count() {
        let r = run_sweep(&small_config()).unwrap();
        assert_eq!(r.rows.len(), 12);
        assert!(r.rows.iter().all(|row| row.abs_diff == (row.rf_value - row.kernel_value).abs()));
        assert_eq!(r.kernel_baseline, BaselineKind::Expected);
    }

    #[test]
    fn all_metrics_and_determinism() {
        let mut cfg = small_config();
        cfg.metrics = Metric::ALL.to_vec();
        cfg.n_grid = vec![16, 32];
        let a = run_sweep(&cfg).unwrap();
        let b = run_sweep(&cfg).unwrap();
        assert_eq!(a.rows.len(), 5 * 2 * 2 * 2);
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.provenance, b.provenance);
        assert!(a.rows.iter().filter(|r| r.metric == Metric::Test).all(|r| r.stderr.is_some()));
    }

    #[test]
    fn validation_collects_everything() {
        let mut cfg = small_config();
        cfg.metrics = vec![Metric::Gcv];
        cfg.lambda_grid = vec![0.0, 1.0];
        cfg.n_grid = vec![32, 16];
        cfg.trials = 0;
        let issues = cfg.validate();
        let fields: Vec<&str> = issues.iter().map(|i| i.field).collect();
        assert_eq!(fields, vec!["lambda_grid", "N_grid", "trials"]);
        assert!(matches!(run_sweep(&cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn polynomial_baseline_equals_expected_for_low_degree() {
        let mut cfg = small_config();
        cfg.activation = ActivationSpec::hermite_poly(vec![0.5, 1.0, 0.5]).unwrap();
        cfg.metrics = vec![Metric::Train, Metric::Loocv];
        cfg.n_grid = vec![16];
        let a = run_sweep(&cfg).unwrap();
        cfg.baseline = Baseline::Polynomial;
        cfg.ell = EllChoice::Fixed(2);
        let b = run_sweep(&cfg).unwrap();
        assert_eq!(b.kernel_baseline, BaselineKind::Polynomial(2));
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.kernel_value - y.kernel_value).abs() < 1e-10);
        }
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = small_config();
        let mut b = small_config();
        assert_eq!(a.hash(), b.hash());
        b.root_seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn ell_choice_serde() {
        #[derive(Deserialize)]
        struct W {
            ell: EllChoice,
        }
        let w: W = serde_json::from_str(r#"{"ell": 3}"#).unwrap();
        assert_eq!(w.ell, EllChoice::Fixed(3));
        let w: W = serde_json::from_str(r#"{"ell": "auto"}"#).unwrap();
        assert_eq!(w.ell, EllChoice::Auto);
        assert!(serde_json::from_str::<W>(r#"{"ell": "four"}"#).is_err());
    }
}
