//! Parameter records for the three distribution families the flow moves
//! through, and the operations the flow needs on them: Dirac endpoints,
//! priors, linear interpolation, sampling and closed-form KL divergence.
//!
//! Continuous families are isotropic: one variance (Gaussian) or one scale
//! (Laplace) shared by every coordinate. A variance or scale of exactly zero
//! is the Dirac limit and samples to the location itself.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::special::{digamma_unchecked, ln_gamma_unchecked};

/// Lower clamp applied to exact-zero Dirichlet concentrations that are not
/// part of a one-hot vertex.
pub const CONCENTRATION_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gaussian,
    Laplace,
    Dirichlet,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::Laplace => "laplace",
            Family::Dirichlet => "dirichlet",
        })
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_spread(value: f64, what: &'static str) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NonFinite(what));
    }
    if value < 0.0 {
        return Err(Error::OutOfRange(format!("{what} must be >= 0, got {value}")));
    }
    Ok(())
}

/// Isotropic Gaussian `N(mean, variance * I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussParams {
    mean: Vec<f64>,
    variance: f64,
}

impl GaussParams {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self> {
        check_finite(&mean, "gaussian mean")?;
        check_spread(variance, "gaussian variance")?;
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Product of independent Laplace marginals sharing one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceParams {
    location: Vec<f64>,
    scale: f64,
}

impl LaplaceParams {
    pub fn new(location: Vec<f64>, scale: f64) -> Result<Self> {
        check_finite(&location, "laplace location")?;
        check_spread(scale, "laplace scale")?;
        Ok(Self { location, scale })
    }

    pub fn location(&self) -> &[f64] {
        &self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    concentration: Vec<f64>,
}

impl DirichletParams {
    pub fn new(concentration: Vec<f64>) -> Result<Self> {
        check_finite(&concentration, "dirichlet concentration")?;
        if concentration.len() < 2 {
            return Err(Error::OutOfRange(format!(
                "dirichlet needs at least 2 classes, got {}",
                concentration.len()
            )));
        }
        if concentration.iter().any(|&a| a < 0.0) {
            return Err(Error::OutOfRange("dirichlet concentration must be >= 0".into()));
        }
        if !concentration.iter().any(|&a| a > 0.0) {
            return Err(Error::DegenerateSupport("all dirichlet concentrations are zero"));
        }
        Ok(Self { concentration })
    }

    pub fn concentration(&self) -> &[f64] {
        &self.concentration
    }

    pub fn dim(&self) -> usize {
        self.concentration.len()
    }

    /// The vertex index if exactly one entry is nonzero.
    pub fn vertex(&self) -> Option<usize> {
        let mut found = None;
        for (i, &a) in self.concentration.iter().enumerate() {
            if a > 0.0 {
                if found.is_some() {
                    return None;
                }
                found = Some(i);
            }
        }
        found
    }

    fn clamped(&self) -> Vec<f64> {
        self.concentration.iter().map(|&a| a.max(CONCENTRATION_FLOOR)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistParams {
    Gauss(GaussParams),
    Laplace(LaplaceParams),
    Dirichlet(DirichletParams),
}

impl DistParams {
    pub fn family(&self) -> Family {
        match self {
            DistParams::Gauss(_) => Family::Gaussian,
            DistParams::Laplace(_) => Family::Laplace,
            DistParams::Dirichlet(_) => Family::Dirichlet,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DistParams::Gauss(p) => p.dim(),
            DistParams::Laplace(p) => p.dim(),
            DistParams::Dirichlet(p) => p.dim(),
        }
    }
}

/// A single datum to turn into a Dirac endpoint.
#[derive(Debug, Clone, Copy)]
pub enum Datum<'a> {
    Point(&'a [f64]),
    Class { index: usize, classes: usize },
}

/// The degenerate parameters concentrated on `datum`.
pub fn dirac_of(datum: Datum<'_>, family: Family) -> Result<DistParams> {
    match (datum, family) {
        (Datum::Point(x), Family::Gaussian) => Ok(DistParams::Gauss(GaussParams::new(x.to_vec(), 0.0)?)),
        (Datum::Point(x), Family::Laplace) => Ok(DistParams::Laplace(LaplaceParams::new(x.to_vec(), 0.0)?)),
        (Datum::Class { index, classes }, Family::Dirichlet) => {
            if index >= classes {
                return Err(Error::IndexOutOfRange { index, classes });
            }
            let mut one_hot = vec![0.0; classes];
            one_hot[index] = 1.0;
            Ok(DistParams::Dirichlet(DirichletParams::new(one_hot)?))
        }
        (Datum::Point(_), Family::Dirichlet) => Err(Error::Config("dirichlet endpoints need a class index".into())),
        (Datum::Class { .. }, f) => Err(Error::Config(format!("{f} endpoints need a point"))),
    }
}

/// Prior parameters: `N(0, scale² I)`, `La(0, scale)` or the uniform
/// `Dir(1/K, …, 1/K)`. `scale` is ignored for the Dirichlet family.
pub fn prior_of(family: Family, dim: usize, scale: f64) -> Result<DistParams> {
    match family {
        Family::Gaussian | Family::Laplace => {
            if dim == 0 {
                return Err(Error::OutOfRange("prior dimension must be >= 1".into()));
            }
            if !(scale > 0.0) || !scale.is_finite() {
                return Err(Error::NonPositive { what: "prior scale", value: scale });
            }
            if family == Family::Gaussian {
                Ok(DistParams::Gauss(GaussParams::new(vec![0.0; dim], scale * scale)?))
            } else {
                Ok(DistParams::Laplace(LaplaceParams::new(vec![0.0; dim], scale)?))
            }
        }
        Family::Dirichlet => {
            if dim < 2 {
                return Err(Error::OutOfRange(format!("dirichlet prior needs K >= 2, got {dim}")));
            }
            Ok(DistParams::Dirichlet(DirichletParams::new(vec![1.0 / dim as f64; dim])?))
        }
    }
}

#[inline]
fn lerp(w: f64, data: f64, prior: f64) -> f64 {
    w * data + (1.0 - w) * prior
}

fn lerp_vec(w: f64, data: &[f64], prior: &[f64]) -> Vec<f64> {
    data.iter().zip(prior).map(|(&a, &b)| lerp(w, a, b)).collect()
}

fn same_dim(a: usize, b: usize, what: &'static str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected: a, got: b })
    }
}

/// `w * data + (1 - w) * prior`, componentwise over every parameter.
///
/// `w = 0` returns `prior` and `w = 1` returns `data` bit-for-bit.
pub fn interpolate(data: &DistParams, prior: &DistParams, w: f64) -> Result<DistParams> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::OutOfRange(format!("interpolation weight {w} outside [0, 1]")));
    }
    if data.family() != prior.family() {
        return Err(Error::FamilyMismatch(data.family(), prior.family()));
    }
    same_dim(data.dim(), prior.dim(), "interpolate")?;
    if w == 0.0 {
        return Ok(prior.clone());
    }
    if w == 1.0 {
        return Ok(data.clone());
    }
    Ok(match (data, prior) {
        (DistParams::Gauss(d), DistParams::Gauss(p)) => DistParams::Gauss(GaussParams {
            mean: lerp_vec(w, &d.mean, &p.mean),
            variance: lerp(w, d.variance, p.variance),
        }),
        (DistParams::Laplace(d), DistParams::Laplace(p)) => DistParams::Laplace(LaplaceParams {
            location: lerp_vec(w, &d.location, &p.location),
            scale: lerp(w, d.scale, p.scale),
        }),
        (DistParams::Dirichlet(d), DistParams::Dirichlet(p)) => DistParams::Dirichlet(DirichletParams {
            concentration: lerp_vec(w, &d.concentration, &p.concentration),
        }),
        _ => unreachable!("families checked above"),
    })
}

/// Draw from a standard Laplace distribution by inverting its CDF.
pub(crate) fn standard_laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // u in (-1/2, 1/2]; 1 - 2|u| stays in [0, 1) so guard the log at 0.
    let u: f64 = rng.random::<f64>() - 0.5;
    let tail = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
    -u.signum() * tail.ln()
}

/// Log of one Gamma(shape, 1) draw.
///
/// Shapes >= 1 use the Marsaglia-Tsang squeeze/rejection sampler. Shapes
/// below 1 draw Gamma(shape + 1) and multiply by `U^(1/shape)`, kept in log
/// space because for the tiny shapes of near-vertex concentrations the
/// product underflows.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        return ln_gamma_variate(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = 1.0 - rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

/// A point on the simplex drawn from `Dir(concentration)` via normalized
/// Gamma variates (normalized in log space).
pub fn sample_dirichlet<R: Rng + ?Sized>(params: &DirichletParams, rng: &mut R) -> Vec<f64> {
    if let Some(vertex) = params.vertex() {
        let mut out = vec![0.0; params.dim()];
        out[vertex] = 1.0;
        return out;
    }
    let logs: Vec<f64> = params.clamped().into_iter().map(|a| ln_gamma_variate(a, rng)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// One draw from the distribution described by `params`. Zero-spread and
/// one-hot parameters return their Dirac point without touching `rng`.
pub fn sample<R: Rng + ?Sized>(params: &DistParams, rng: &mut R) -> Vec<f64> {
    match params {
        DistParams::Gauss(p) => {
            if p.variance == 0.0 {
                return p.mean.clone();
            }
            let sd = p.variance.sqrt();
            p.mean
                .iter()
                .map(|&m| m + sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
        DistParams::Laplace(p) => {
            if p.scale == 0.0 {
                return p.location.clone();
            }
            p.location.iter().map(|&m| m + p.scale * standard_laplace(rng)).collect()
        }
        DistParams::Dirichlet(p) => sample_dirichlet(p, rng),
    }
}

/// Whether the Laplace divergence keeps the `-1` per coordinate that makes
/// it vanish at `p = q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LaplaceKl {
    #[default]
    Exact,
    /// Drops the additive constant; the gradient is unchanged.
    WithoutConstant,
}

fn kl_gauss(p: &GaussParams, q: &GaussParams) -> Result<f64> {
    same_dim(p.dim(), q.dim(), "kl")?;
    if q.variance <= 0.0 {
        return Err(Error::DegenerateSupport("gaussian q has zero variance"));
    }
    if p.variance == 0.0 {
        return Ok(f64::INFINITY);
    }
    let d = p.dim() as f64;
    let sq: f64 = p.mean.iter().zip(&q.mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let ratio = p.variance / q.variance;
    Ok(d * 0.5 * (ratio - 1.0 - ratio.ln()) + sq / (2.0 * q.variance))
}

/// KL divergence between two Laplace products.
pub fn kl_laplace(p: &LaplaceParams, q: &LaplaceParams, mode: LaplaceKl) -> Result<f64> {
    same_dim(p.dim(), q.dim(), "kl")?;
    if q.scale <= 0.0 {
        return Err(Error::DegenerateSupport("laplace q has zero scale"));
    }
    if p.scale == 0.0 {
        return Ok(f64::INFINITY);
    }
    let constant = match mode {
        LaplaceKl::Exact => 1.0,
        LaplaceKl::WithoutConstant => 0.0,
    };
    let log_ratio = (q.scale / p.scale).ln();
    let scale_ratio = p.scale / q.scale;
    Ok(p.location
        .iter()
        .zip(&q.location)
        .map(|(a, b)| {
            let delta = (a - b).abs();
            log_ratio + delta / q.scale + scale_ratio * (-delta / p.scale).exp() - constant
        })
        .sum())
}

fn kl_dirichlet(p: &DirichletParams, q: &DirichletParams) -> Result<f64> {
    same_dim(p.dim(), q.dim(), "kl")?;
    if q.concentration.iter().any(|&a| a <= 0.0) {
        return Err(Error::DegenerateSupport("dirichlet q has a zero concentration"));
    }
    Ok(dirichlet_kl_unchecked(&p.clamped(), &q.concentration))
}

pub(crate) fn dirichlet_kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let p0: f64 = p.iter().sum();
    let q0: f64 = q.iter().sum();
    let psi_p0 = digamma_unchecked(p0);
    let mut out = ln_gamma_unchecked(p0) - ln_gamma_unchecked(q0);
    for (&a, &b) in p.iter().zip(q) {
        out += ln_gamma_unchecked(b) - ln_gamma_unchecked(a) + (a - b) * (digamma_unchecked(a) - psi_p0);
    }
    out
}

/// Closed-form `KL(p ‖ q)`. Call with the arguments swapped for the reverse
/// direction.
pub fn kl(p: &DistParams, q: &DistParams) -> Result<f64> {
    match (p, q) {
        (DistParams::Gauss(p), DistParams::Gauss(q)) => kl_gauss(p, q),
        (DistParams::Laplace(p), DistParams::Laplace(q)) => kl_laplace(p, q, LaplaceKl::Exact),
        (DistParams::Dirichlet(p), DistParams::Dirichlet(q)) => kl_dirichlet(p, q),
        _ => Err(Error::FamilyMismatch(p.family(), q.family())),
    }
}
