//! Normalized Hermite polynomials and the Gaussian Hermite expansion of
//! scalar activations.
//!
//! `h_k` is the k-th probabilists' Hermite polynomial scaled to unit norm
//! under the standard Gaussian measure, so that `E[h_j(ξ) h_k(ξ)] = δ_jk`.
//! The coefficient `ζ_k(σ) = E[σ(ξ) h_k(ξ)]` is computed with adaptive
//! Gauss–Kronrod quadrature of `σ(x) h_k(x) φ(x)` on `[-12, 12]`, split at
//! the activation's kinks. Activations that are polynomials in the Hermite
//! basis are expanded exactly.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::quadrature::integrate_with_breaks;
use crate::{Error, Result};

/// Integration half-width. Polynomially bounded integrands lose less than
/// 1e-30 of their Gaussian mass outside `[-12, 12]`.
pub const TRUNCATION_RADIUS: f64 = 12.0;

/// Default number of Hermite coefficients kept (`ζ_0..=ζ_16`).
pub const DEFAULT_K_MAX: usize = 16;

/// Default quadrature tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Hermite coefficients of the degree-5 polynomial activation used in the
/// reference simulations: `h0 + h1/√6 + h2/3 + h3/6 + 2h4/3 + h5/2`.
pub fn poly5_coefficients() -> Vec<f64> {
    vec![1.0, 1.0 / 6f64.sqrt(), 1.0 / 3.0, 1.0 / 6.0, 2.0 / 3.0, 0.5]
}

const RECURRENCE_TABLE: usize = 256;

// (1/√(k+1), √k/√(k+1)) for the three-term recurrence.
fn recurrence_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..RECURRENCE_TABLE)
            .map(|k| {
                let kf = k as f64;
                (1.0 / (kf + 1.0).sqrt(), (kf / (kf + 1.0)).sqrt())
            })
            .collect()
    })
}

#[inline]
fn step(k: usize) -> (f64, f64) {
    if k < RECURRENCE_TABLE {
        recurrence_table()[k]
    } else {
        let kf = k as f64;
        (1.0 / (kf + 1.0).sqrt(), (kf / (kf + 1.0)).sqrt())
    }
}

/// Evaluates `h_k(x)` by `h_{k+1} = (x h_k − √k h_{k−1}) / √(k+1)`.
pub fn eval_hermite(k: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if k == 0 {
        return prev;
    }
    let mut cur = x;
    for j in 1..k {
        let (a, b) = step(j);
        let next = x * cur * a - b * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Writes `h_0(x), …, h_{out.len()-1}(x)` into `out`.
pub fn hermite_values(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len().saturating_sub(1) {
        let (a, b) = step(k);
        out[k + 1] = x * out[k] * a - b * out[k - 1];
    }
}

/// `Σ_k c_k h_k(x)` without storing the intermediate polynomials.
pub fn hermite_series(coeffs: &[f64], x: f64) -> f64 {
    match coeffs.len() {
        0 => 0.0,
        1 => coeffs[0],
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            let mut acc = coeffs[0] + coeffs[1] * x;
            for (k, &c) in coeffs.iter().enumerate().skip(2) {
                let (a, b) = step(k - 1);
                let next = x * cur * a - b * prev;
                prev = cur;
                cur = next;
                acc += c * cur;
            }
            acc
        }
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// The scalar nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    Softplus,
    Identity,
    Constant(f64),
    /// `Σ_k c_k h_k(x)` with the listed coefficients.
    HermitePoly(Vec<f64>),
}

/// An activation together with optional growth metadata.
///
/// `growth_exponent` records the constant `C` in `|σ(x)| ≤ C(1+|x|)^C` when it
/// is known. It is informational and never used in computation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    pub growth_exponent: Option<f64>,
}

impl From<ActivationKind> for ActivationSpec {
    fn from(kind: ActivationKind) -> Self {
        ActivationSpec {
            kind,
            growth_exponent: None,
        }
    }
}

impl ActivationSpec {
    pub fn relu() -> Self {
        ActivationKind::Relu.into()
    }
    pub fn identity() -> Self {
        ActivationKind::Identity.into()
    }
    pub fn softplus() -> Self {
        ActivationKind::Softplus.into()
    }
    pub fn constant(c: f64) -> Self {
        ActivationKind::Constant(c).into()
    }
    pub fn poly5() -> Self {
        ActivationKind::HermitePoly(poly5_coefficients()).into()
    }

    /// Builds a Hermite-basis polynomial. The list must be non-empty and finite.
    pub fn hermite_poly(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "hermite_poly needs a non-empty list of finite coefficients".into(),
            ));
        }
        Ok(ActivationKind::HermitePoly(coeffs).into())
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            ActivationKind::Softplus => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            ActivationKind::Identity => x,
            ActivationKind::Constant(c) => *c,
            ActivationKind::HermitePoly(c) => hermite_series(c, x),
        }
    }

    /// Applies the activation in place.
    pub fn apply_in_place(&self, xs: &mut [f64]) {
        for v in xs.iter_mut() {
            *v = self.eval(*v);
        }
    }

    /// Points where the activation is not smooth.
    pub fn kinks(&self) -> &'static [f64] {
        match self.kind {
            ActivationKind::Relu | ActivationKind::LeakyRelu { .. } => &[0.0],
            _ => &[],
        }
    }

    /// Exact Hermite coefficients for activations that are polynomials.
    pub fn exact_hermite_coefficients(&self) -> Option<Vec<f64>> {
        let mut c = match &self.kind {
            ActivationKind::Identity => vec![0.0, 1.0],
            ActivationKind::Constant(c) => vec![*c],
            ActivationKind::HermitePoly(c) => c.clone(),
            _ => return None,
        };
        while c.len() > 1 && c.last() == Some(&0.0) {
            c.pop();
        }
        Some(c)
    }

    /// Polynomial degree, if the activation is a polynomial.
    pub fn polynomial_degree(&self) -> Option<usize> {
        self.exact_hermite_coefficients().map(|c| c.len() - 1)
    }
}

/// Elementwise `σ(x)`.
pub fn eval_activation(act: &ActivationSpec, xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| act.eval(x)).collect()
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

impl fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ActivationKind::Relu => write!(f, "relu"),
            ActivationKind::LeakyRelu { slope } => write!(f, "leaky_relu:{}", fmt_num(*slope)),
            ActivationKind::Tanh => write!(f, "tanh"),
            ActivationKind::Sigmoid => write!(f, "sigmoid"),
            ActivationKind::Softplus => write!(f, "softplus"),
            ActivationKind::Identity => write!(f, "identity"),
            ActivationKind::Constant(c) => write!(f, "constant:{}", fmt_num(*c)),
            ActivationKind::HermitePoly(c) if *c == poly5_coefficients() => write!(f, "poly5"),
            ActivationKind::HermitePoly(c) => {
                let parts: Vec<String> = c.iter().map(|&v| fmt_num(v)).collect();
                write!(f, "hermite:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for ActivationSpec {
    type Err = Error;

    /// Accepts `relu`, `leaky_relu:0.1`, `tanh`, `sigmoid`, `softplus`,
    /// `identity`, `constant:c`, `poly5` and `hermite:c0,c1,...`.
    /// Arguments may also be written in parentheses, e.g. `leaky_relu(0.1)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = if let Some(open) = s.find('(') {
            let close = s.rfind(')').filter(|&c| c > open).ok_or_else(|| {
                Error::InvalidArgument(format!("unbalanced parentheses in activation '{s}'"))
            })?;
            (&s[..open], Some(&s[open + 1..close]))
        } else if let Some((n, a)) = s.split_once(':') {
            (n, Some(a))
        } else {
            (s, None)
        };
        let numbers = |a: Option<&str>| -> Result<Vec<f64>> {
            let a = a.ok_or_else(|| Error::InvalidArgument(format!("activation '{name}' needs arguments")))?;
            a.split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!("bad number '{t}' in activation '{s}'"))
                    })
                })
                .collect()
        };
        let single = |a: Option<&str>| -> Result<f64> {
            let v = numbers(a)?;
            match v.as_slice() {
                [x] => Ok(*x),
                _ => Err(Error::InvalidArgument(format!("activation '{name}' takes one argument"))),
            }
        };
        let no_args = |kind: ActivationKind| -> Result<ActivationSpec> {
            match args {
                None => Ok(kind.into()),
                Some(_) => Err(Error::InvalidArgument(format!("activation '{name}' takes no arguments"))),
            }
        };
        match name.trim().to_ascii_lowercase().as_str() {
            "relu" => no_args(ActivationKind::Relu),
            "tanh" => no_args(ActivationKind::Tanh),
            "sigmoid" => no_args(ActivationKind::Sigmoid),
            "softplus" => no_args(ActivationKind::Softplus),
            "identity" | "linear" => no_args(ActivationKind::Identity),
            "poly5" => no_args(ActivationKind::HermitePoly(poly5_coefficients())),
            "leaky_relu" => Ok(ActivationKind::LeakyRelu { slope: single(args)? }.into()),
            "constant" => Ok(ActivationKind::Constant(single(args)?).into()),
            "hermite" | "hermite_poly" => ActivationSpec::hermite_poly(numbers(args)?),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

impl Serialize for ActivationSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ActivationSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Gaussian Hermite expansion of an activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteProfile {
    /// `ζ_0, …, ζ_{k_max}`.
    pub coeffs: Vec<f64>,
    /// `‖σ‖²₂ = E[σ(ξ)²]`.
    pub l2_norm_sq: f64,
    /// `‖σ‖₄ = E[σ(ξ)⁴]^{1/4}`.
    pub l4_norm: f64,
    pub k_max: usize,
    pub quad_tol: f64,
    /// Set when the activation is a polynomial of this degree; coefficients
    /// above it are exactly zero.
    pub degree: Option<usize>,
}

impl HermiteProfile {
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// `ζ_k²` for `k = 0..=k_max`.
    pub fn squared_coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c * c).collect()
    }

    /// `‖σ‖₄²`.
    pub fn l4_norm_sq(&self) -> f64 {
        self.l4_norm * self.l4_norm
    }

    /// `σ²_{>ℓ} = ‖σ‖²₂ − Σ_{k≤ℓ} ζ_k²`; see [`tail_mass`].
    pub fn tail_mass(&self, ell: usize) -> Result<f64> {
        tail_mass(self, ell)
    }
}

fn check_growth(act: &ActivationSpec) -> Result<()> {
    for x in [-TRUNCATION_RADIUS, TRUNCATION_RADIUS] {
        let v = act.eval(x).abs() * std_normal_pdf(x);
        if !v.is_finite() || v > 1e-10 {
            return Err(Error::UnboundedActivation { at: x, value: v });
        }
    }
    Ok(())
}

fn breakpoints(act: &ActivationSpec) -> Vec<f64> {
    let mut b = vec![-TRUNCATION_RADIUS];
    b.extend(act.kinks().iter().copied());
    b.push(TRUNCATION_RADIUS);
    b
}

// Absolute tolerance `tol` scaled by the rough magnitude of the integral, so
// that large norms are not asked for more digits than f64 carries.
fn gaussian_moment<F: Fn(f64) -> f64>(f: F, breaks: &[f64], tol: f64) -> Result<f64> {
    let g = |x: f64| f(x) * std_normal_pdf(x);
    let rough = integrate_with_breaks(g, breaks, f64::MAX)?.value;
    Ok(integrate_with_breaks(g, breaks, tol * rough.abs().max(1.0))?.value)
}

/// Expands `act` in the normalized Hermite basis up to degree `k_max`.
pub fn expand_activation(act: &ActivationSpec, k_max: usize, tol: f64) -> Result<HermiteProfile> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if let ActivationKind::HermitePoly(c) = &act.kind {
        ActivationSpec::hermite_poly(c.clone())?;
    }
    check_growth(act)?;
    let breaks = breakpoints(act);

    let (coeffs, l2_norm_sq, degree) = match act.exact_hermite_coefficients() {
        Some(exact) => {
            let mut coeffs = vec![0.0; k_max + 1];
            for (dst, &src) in coeffs.iter_mut().zip(&exact) {
                *dst = src;
            }
            let l2 = exact.iter().map(|c| c * c).sum::<f64>();
            (coeffs, l2, Some(exact.len() - 1))
        }
        None => {
            let coeffs = (0..=k_max)
                .map(|k| {
                    let g = |x: f64| act.eval(x) * eval_hermite(k, x) * std_normal_pdf(x);
                    integrate_with_breaks(g, &breaks, tol).map(|r| r.value)
                })
                .collect::<Result<Vec<f64>>>()?;
            let l2 = gaussian_moment(|x| act.eval(x).powi(2), &breaks, tol)?;
            (coeffs, l2, None)
        }
    };
    let m4 = gaussian_moment(|x| act.eval(x).powi(4), &breaks, tol)?;

    Ok(HermiteProfile {
        coeffs,
        l2_norm_sq,
        l4_norm: m4.max(0.0).powf(0.25),
        k_max,
        quad_tol: tol,
        degree,
    })
}

/// Tail mass `σ²_{>ℓ} = ‖σ‖²₂ − Σ_{k=0}^{ℓ} ζ_k²`.
///
/// Small negative values coming from quadrature noise (above `−10·quad_tol`)
/// are clamped to zero.
pub fn tail_mass(profile: &HermiteProfile, ell: usize) -> Result<f64> {
    if ell > profile.k_max {
        return Err(Error::InvalidArgument(format!(
            "ell = {ell} exceeds the profile's k_max = {}",
            profile.k_max
        )));
    }
    if profile.degree.is_some_and(|m| ell >= m) {
        return Ok(0.0);
    }
    let head: f64 = profile.coeffs[..=ell].iter().map(|c| c * c).sum();
    let tail = profile.l2_norm_sq - head;
    if tail >= 0.0 {
        Ok(tail)
    } else if tail >= -10.0 * profile.quad_tol {
        Ok(0.0)
    } else {
        Err(Error::NegativeTail { ell, value: tail })
    }
}
