//! Training data: synthetic draws, CSV ingestion and near-orthogonality
//! diagnostics.
//!
//! Samples are stored as the columns of a `d × n` matrix and always have unit
//! Euclidean norm.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::hermite::HermiteProfile;
use crate::rng::{fill_normal, substream};
use crate::{Error, Result};

/// Tolerance on `‖x_i‖ = 1`.
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// Default largest `ℓ` examined by [`orthogonality_profile`].
pub const DEFAULT_L_MAX: usize = 10;

const MAX_REDRAWS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Sphere,
    Cube,
    Csv(PathBuf),
    /// Built directly from a matrix.
    Explicit,
}

/// `d × n` matrix with unit-norm columns.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    x: DMatrix<f64>,
    source: DataSource,
    seed: Option<u64>,
}

impl DataMatrix {
    /// Wraps a matrix whose columns already have unit norm.
    pub fn from_columns(x: DMatrix<f64>) -> Result<Self> {
        Self::checked(x, DataSource::Explicit, None)
    }

    /// Normalizes every column of `x` and wraps it.
    pub fn normalized(mut x: DMatrix<f64>) -> Result<Self> {
        for (j, mut col) in x.column_iter_mut().enumerate() {
            let norm = col.norm();
            if !(norm >= 1e-12) {
                return Err(Error::ZeroNormSample { row: j });
            }
            col /= norm;
        }
        Self::checked(x, DataSource::Explicit, None)
    }

    fn checked(x: DMatrix<f64>, source: DataSource, seed: Option<u64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidArgument("data matrix must be non-empty".into()));
        }
        for (j, col) in x.column_iter().enumerate() {
            let norm = col.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm { column: j, norm });
            }
        }
        Ok(DataMatrix { x, source, seed })
    }

    pub fn d(&self) -> usize {
        self.x.nrows()
    }
    pub fn n(&self) -> usize {
        self.x.ncols()
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn source(&self) -> &DataSource {
        &self.source
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `XᵀX`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.x.tr_mul(&self.x)
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> DataMatrix {
        DataMatrix {
            x: self.x.select_columns(idx),
            source: self.source.clone(),
            seed: self.seed,
        }
    }
}

fn check_shape(d: usize, n: usize) -> Result<()> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("need d >= 1 and n >= 1, got d = {d}, n = {n}")));
    }
    Ok(())
}

/// `m` unit vectors drawn uniformly from the sphere `S^{d-1}`; column `j`
/// uses the stream `(seed, tag, j)`.
pub fn sphere_points(d: usize, m: usize, seed: u64, tag: &str) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::zeros(d, m);
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let mut rng = substream(seed, tag, &[j as u64]);
        let mut ok = false;
        for _ in 0..MAX_REDRAWS {
            fill_normal(&mut rng, col.as_mut_slice());
            let norm = col.norm();
            if norm >= 1e-300 && norm.is_finite() {
                col /= norm;
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::DegenerateDraw { column: j });
        }
    }
    Ok(x)
}

/// `n` i.i.d. uniform points on the unit sphere in `R^d`.
pub fn sample_sphere(d: usize, n: usize, seed: u64) -> Result<DataMatrix> {
    check_shape(d, n)?;
    let x = sphere_points(d, n, seed, "sphere")?;
    DataMatrix::checked(x, DataSource::Sphere, Some(seed))
}

/// `m` points with i.i.d. entries `±1/√d`.
pub fn cube_points(d: usize, m: usize, seed: u64, tag: &str) -> DMatrix<f64> {
    let s = 1.0 / (d as f64).sqrt();
    let mut x = DMatrix::zeros(d, m);
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let mut rng = substream(seed, tag, &[j as u64]);
        for v in col.iter_mut() {
            *v = if rng.random::<bool>() { s } else { -s };
        }
    }
    x
}

/// `n` i.i.d. points of the scaled hypercube `{−1/√d, +1/√d}^d`.
pub fn sample_cube(d: usize, n: usize, seed: u64) -> Result<DataMatrix> {
    check_shape(d, n)?;
    DataMatrix::checked(cube_points(d, n, seed, "cube"), DataSource::Cube, Some(seed))
}

/// Reads a headerless CSV whose rows are samples, optionally keeps a random
/// subset of `feature_subsample` feature columns, and normalizes each sample.
pub fn load_csv(path: impl AsRef<Path>, feature_subsample: Option<usize>, seed: u64) -> Result<DataMatrix> {
    let path = path.as_ref();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("column {}: '{cell}' is not a finite number", c + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    line,
                    format!("ragged row: {} fields, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let features = rows.first().map_or(0, Vec::len);
    if n == 0 || features == 0 {
        return Err(parse_err(0, "file contains no data".into()));
    }
    let keep: Vec<usize> = match feature_subsample {
        Some(k) if k < features => {
            if k == 0 {
                return Err(Error::InvalidArgument("feature_subsample must be positive".into()));
            }
            let mut rng = substream(seed, "feature-subsample", &[]);
            let mut idx = sample_indices(&mut rng, features, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..features).collect(),
    };
    let d = keep.len();
    let mut x = DMatrix::zeros(d, n);
    for (j, row) in rows.iter().enumerate() {
        let mut col = x.column_mut(j);
        for (r, &f) in keep.iter().enumerate() {
            col[r] = row[f];
        }
        let norm = col.norm();
        if !(norm >= 1e-12) {
            return Err(Error::ZeroNormSample { row: j });
        }
        col /= norm;
    }
    DataMatrix::checked(x, DataSource::Csv(path.to_path_buf()), Some(seed))
}

/// Writes the samples as CSV rows (one sample per row, 17 significant digits).
pub fn write_csv(data: &DataMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_matrix_rows(data.matrix(), path)
}

/// Writes the columns of `x` as CSV rows.
pub fn write_matrix_rows(x: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for col in x.column_iter() {
        let line: Vec<String> = col.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// How close to orthonormal the data columns are.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalityProfile {
    /// `max_{i≠j} |⟨x_i, x_j⟩|`.
    pub eps_n: f64,
    /// `Δ_ℓ = ‖(XᵀX)^{⊙(ℓ+1)} − Id‖_F` for `ℓ = 0..=L_max`.
    pub deltas: Vec<f64>,
    pub chosen_ell: Option<usize>,
    /// `eps_n ≤ 1/√2`.
    pub angle_ok: bool,
    /// `Δ_ℓ ≤ σ²_{>ℓ}/(4‖σ‖₄²)` at `chosen_ell`.
    pub cond13_ok: bool,
}

impl OrthogonalityProfile {
    pub fn l_max(&self) -> usize {
        self.deltas.len() - 1
    }
}

/// Computes `ε_n` and `Δ_0..Δ_{L_max}` from one Gram matrix.
///
/// The diagonal of every Hadamard power is exactly one for unit columns, so
/// only off-diagonal entries enter `Δ_ℓ`.
pub fn orthogonality_profile(data: &DataMatrix, l_max: usize) -> OrthogonalityProfile {
    let g = data.gram();
    let n = data.n();
    let mut eps_n = 0.0f64;
    let mut sums = vec![0.0; l_max + 1];
    for j in 0..n {
        for i in (j + 1)..n {
            let rho = g[(i, j)];
            eps_n = eps_n.max(rho.abs());
            let sq = rho * rho;
            let mut pow = sq;
            for s in sums.iter_mut() {
                *s += 2.0 * pow;
                pow *= sq;
            }
        }
    }
    let angle_ok = eps_n <= std::f64::consts::FRAC_1_SQRT_2;
    OrthogonalityProfile {
        eps_n: eps_n.min(1.0),
        deltas: sums.into_iter().map(f64::sqrt).collect(),
        chosen_ell: None,
        angle_ok,
        cond13_ok: false,
    }
}

/// `σ²_{>ℓ} / (4‖σ‖₄²)`, the admissibility threshold for `Δ_ℓ`.
pub fn admissibility_threshold(hp: &HermiteProfile, ell: usize) -> Result<f64> {
    Ok(hp.tail_mass(ell)? / (4.0 * hp.l4_norm_sq()))
}

/// Picks the smallest `ℓ` with `σ²_{>ℓ} > 0` and
/// `Δ_ℓ ≤ σ²_{>ℓ}/(4‖σ‖₄²)`, recording the outcome in `profile`.
pub fn select_ell(profile: &mut OrthogonalityProfile, hp: &HermiteProfile) -> Result<usize> {
    profile.angle_ok = profile.eps_n <= std::f64::consts::FRAC_1_SQRT_2;
    profile.chosen_ell = None;
    profile.cond13_ok = false;
    if !profile.angle_ok {
        return Err(Error::AngleTooLarge { eps_n: profile.eps_n });
    }
    let top = profile.l_max().min(hp.k_max);
    for ell in 0..=top {
        let tail = hp.tail_mass(ell)?;
        if tail > 0.0 && profile.deltas[ell] <= tail / (4.0 * hp.l4_norm_sq()) {
            profile.chosen_ell = Some(ell);
            profile.cond13_ok = true;
            return Ok(ell);
        }
    }
    Err(Error::NoAdmissibleEll { l_max: top })
}

/// Diagnostics of one test point against the training columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestPointProfile {
    /// `‖(Xᵀx)^{⊙(ℓ+1)}‖₂`.
    pub tail_norm: f64,
    /// `max_i |⟨x, x_i⟩| ≤ 1/√2`.
    pub angle_ok: bool,
    /// `tail_norm ≤ σ²_{>ℓ}/(4‖σ‖₄²)`.
    pub cond34_ok: bool,
}

pub fn test_point_profile(
    data: &DataMatrix,
    x: &DVector<f64>,
    ell: usize,
    hp: &HermiteProfile,
) -> Result<TestPointProfile> {
    if x.len() != data.d() {
        return Err(Error::DimensionMismatch {
            context: "test point length",
            expected: data.d(),
            got: x.len(),
        });
    }
    let norm = x.norm();
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::NotUnitNorm { column: 0, norm });
    }
    let rho = data.matrix().tr_mul(x);
    let max_abs = rho.amax();
    let tail_norm = rho
        .iter()
        .map(|r| r.abs().powi(2 * (ell as i32 + 1)))
        .sum::<f64>()
        .sqrt();
    Ok(TestPointProfile {
        tail_norm,
        angle_ok: max_abs <= std::f64::consts::FRAC_1_SQRT_2,
        cond34_ok: tail_norm <= admissibility_threshold(hp, ell)?,
    })
}
