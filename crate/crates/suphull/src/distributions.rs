//! Coordinate laws: samplers, analytic absolute moments, and moment-condition
//! checks.
//!
//! Every family is symmetric, mean-zero, and normalized to unit variance at
//! construction (the symmetric stable laws have infinite variance and are the
//! deliberate exception). All sampling goes through the keyed streams in
//! [`crate::rng`], so a draw is a pure function of (family, seed, position).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Exp1, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::functionals::Estimate;
use crate::rng::{for_each_chunk, CHUNK};

/// Coordinate distribution, prior to the unit-variance normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FamilyKind {
    Gaussian,
    Rademacher,
    UniformSymmetric,
    StudentLike { df: f64 },
    SymmetricWeibull { shape: f64 },
    SymmetricStable { stability: f64 },
    TwoPointMixture { value: f64, weight: f64 },
}

/// Moment-growth metadata: the (4+δ) pair (r, λ) and the optional doubling
/// constant α for regular moment growth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    pub r: f64,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FamilyRepr {
    #[serde(flatten)]
    kind: FamilyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    regularity: Option<Regularity>,
}

/// A validated coordinate law with unit variance (infinite for stable kinds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyRepr", into = "FamilyRepr")]
pub struct RandomFamily {
    kind: FamilyKind,
    variance: f64,
    regularity: Option<Regularity>,
}

impl TryFrom<FamilyRepr> for RandomFamily {
    type Error = Error;
    fn try_from(repr: FamilyRepr) -> Result<Self> {
        match repr.regularity {
            Some(reg) => RandomFamily::with_regularity(repr.kind, reg),
            None => RandomFamily::new(repr.kind),
        }
    }
}

impl From<RandomFamily> for FamilyRepr {
    fn from(f: RandomFamily) -> FamilyRepr {
        FamilyRepr { kind: f.kind, regularity: f.regularity }
    }
}

/// ln E|g|^k for a standard Gaussian g: (k/2)·ln 2 + ln Γ((k+1)/2) − ln √π.
fn gauss_abs_moment_ln(k: f64) -> f64 {
    0.5 * k * 2f64.ln() + ln_gamma(0.5 * (k + 1.0)) - 0.5 * PI.ln()
}

/// ln(exp(a) + exp(b)) without overflow.
fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

impl RandomFamily {
    /// Validates parameters and normalizes to unit variance.
    pub fn new(kind: FamilyKind) -> Result<Self> {
        let variance = match &kind {
            FamilyKind::Gaussian | FamilyKind::Rademacher | FamilyKind::UniformSymmetric => 1.0,
            FamilyKind::StudentLike { df } => {
                if !df.is_finite() || *df <= 2.0 {
                    return Err(Error::InvalidParameter(format!(
                        "student degrees of freedom must exceed 2 for a finite variance, got {df}"
                    )));
                }
                1.0
            }
            FamilyKind::SymmetricWeibull { shape } => {
                if !shape.is_finite() || *shape <= 0.0 || *shape >= 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "weibull shape must lie in (0,1), got {shape}"
                    )));
                }
                1.0
            }
            FamilyKind::SymmetricStable { stability } => {
                if !stability.is_finite() || *stability <= 1.0 || *stability >= 2.0 {
                    return Err(Error::UnsupportedFamily(format!(
                        "stable index must lie in (1,2): {stability} would have an \
                         infinite or trivial first moment regime"
                    )));
                }
                f64::INFINITY
            }
            FamilyKind::TwoPointMixture { value, weight } => {
                if !value.is_finite() || *value <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "mixture magnitude must be positive, got {value}"
                    )));
                }
                if !weight.is_finite() || *weight <= 0.0 || *weight >= 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "mixture weight must lie in (0,1), got {weight}"
                    )));
                }
                1.0
            }
        };
        Ok(RandomFamily { kind, variance, regularity: None })
    }

    /// As [`RandomFamily::new`], and validates the claimed (r, λ) pair against
    /// the analytic moment ratio when one is available.
    pub fn with_regularity(kind: FamilyKind, reg: Regularity) -> Result<Self> {
        if !(reg.r > 4.0 && reg.r <= 8.0) {
            return Err(Error::InvalidParameter(format!(
                "moment order r must lie in (4,8], got {}",
                reg.r
            )));
        }
        if reg.lambda < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "moment ratio bound lambda must be at least 1, got {}",
                reg.lambda
            )));
        }
        if let Some(alpha) = reg.alpha {
            if alpha < 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "doubling constant alpha must be at least 1, got {alpha}"
                )));
            }
        }
        let mut family = RandomFamily::new(kind)?;
        if let Some(ln_m) = family.scalar_abs_moment_ln(reg.r) {
            let ratio = (ln_m / reg.r).exp();
            if !(ratio <= reg.lambda) {
                return Err(Error::InvalidParameter(format!(
                    "family {} has moment ratio {:.4} at order {}, exceeding lambda {}",
                    family, ratio, reg.r, reg.lambda
                )));
            }
        }
        family.regularity = Some(reg);
        Ok(family)
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    /// Second moment of a coordinate: 1, or +∞ for the stable kinds.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn regularity(&self) -> Option<&Regularity> {
        self.regularity.as_ref()
    }

    /// Supremum of the finite absolute-moment orders.
    pub fn max_finite_moment(&self) -> f64 {
        match &self.kind {
            FamilyKind::StudentLike { df } => *df,
            FamilyKind::SymmetricStable { stability } => *stability,
            _ => f64::INFINITY,
        }
    }

    /// Whether some moment of order strictly above 4 is finite.
    pub fn has_four_plus_moment(&self) -> bool {
        self.max_finite_moment() > 4.0
    }

    /// One draw. The number of underlying uniforms per draw is fixed per kind,
    /// so sequences are reproducible position by position.
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> f64 {
        match &self.kind {
            FamilyKind::Gaussian => rng.sample(StandardNormal),
            FamilyKind::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            FamilyKind::UniformSymmetric => (2.0 * rng.gen::<f64>() - 1.0) * 3f64.sqrt(),
            FamilyKind::StudentLike { df } => {
                let t: f64 = rng.sample(StudentT::new(*df).expect("validated df"));
                t / (df / (df - 2.0)).sqrt()
            }
            FamilyKind::SymmetricWeibull { shape } => {
                let e: f64 = rng.sample(Exp1);
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let norm = ln_gamma(1.0 + 2.0 / shape).exp().sqrt();
                sign * e.powf(1.0 / shape) / norm
            }
            FamilyKind::SymmetricStable { stability } => {
                // Chambers-Mallows-Stuck for the symmetric case with
                // characteristic function exp(-|t|^p).
                let p = *stability;
                let v = (rng.gen::<f64>() - 0.5) * PI;
                let w: f64 = rng.sample(Exp1);
                let a = (p * v).sin() / v.cos().powf(1.0 / p);
                let b = ((v - p * v).cos() / w).powf((1.0 - p) / p);
                a * b
            }
            FamilyKind::TwoPointMixture { value, weight } => {
                let magnitude = if rng.gen::<f64>() < *weight { *value } else { 1.0 };
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let scale = (weight * value * value + (1.0 - weight)).sqrt();
                sign * magnitude / scale
            }
        }
    }

    /// Fills a slice with i.i.d. draws.
    pub fn sample_into(&self, rng: &mut ChaCha12Rng, out: &mut [f64]) {
        for slot in out.iter_mut() {
            *slot = self.sample(rng);
        }
    }

    /// ln E|X₁|^k when a closed form exists; `None` otherwise. Infinite
    /// moments yield `Some(+∞)`.
    pub fn scalar_abs_moment_ln(&self, k: f64) -> Option<f64> {
        assert!(k > 0.0, "moment order must be positive");
        match &self.kind {
            FamilyKind::Gaussian => Some(gauss_abs_moment_ln(k)),
            FamilyKind::Rademacher => Some(0.0),
            FamilyKind::UniformSymmetric => Some(0.5 * k * 3f64.ln() - (k + 1.0).ln()),
            FamilyKind::StudentLike { df } => {
                if k >= *df {
                    return Some(f64::INFINITY);
                }
                let raw = 0.5 * k * df.ln() + ln_gamma(0.5 * (k + 1.0))
                    + ln_gamma(0.5 * (df - k))
                    - 0.5 * PI.ln()
                    - ln_gamma(0.5 * df);
                Some(raw - 0.5 * k * (df / (df - 2.0)).ln())
            }
            FamilyKind::SymmetricWeibull { shape } => {
                Some(ln_gamma(1.0 + k / shape) - 0.5 * k * ln_gamma(1.0 + 2.0 / shape))
            }
            FamilyKind::SymmetricStable { stability } => {
                if k >= *stability {
                    return Some(f64::INFINITY);
                }
                Some(
                    k * 2f64.ln() + ln_gamma(0.5 * (1.0 + k)) + ln_gamma(1.0 - k / stability)
                        - 0.5 * PI.ln()
                        - ln_gamma(1.0 - 0.5 * k),
                )
            }
            FamilyKind::TwoPointMixture { value, weight } => {
                let ln_num = ln_add_exp(weight.ln() + k * value.ln(), (1.0 - weight).ln());
                let ln_den = ln_add_exp(weight.ln() + 2.0 * value.ln(), (1.0 - weight).ln());
                Some(ln_num - 0.5 * k * ln_den)
            }
        }
    }

    /// E|X₁|^k when a closed form exists.
    pub fn scalar_abs_moment(&self, k: f64) -> Option<f64> {
        self.scalar_abs_moment_ln(k).map(f64::exp)
    }

    /// For families where ⟨t, X⟩ is distributed as scale(t)·X₁, the scale:
    /// |t|₂ for Gaussian, the ℓ_p norm for p-stable. `None` otherwise.
    pub fn linear_scale(&self, t: &DVector<f64>) -> Option<f64> {
        match &self.kind {
            FamilyKind::Gaussian => Some(t.norm()),
            FamilyKind::SymmetricStable { stability } => {
                let p = *stability;
                Some(t.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p))
            }
            _ => None,
        }
    }

    /// ln E|⟨t, X⟩|^k in closed form, when the law of the linear form is a
    /// scaled coordinate (scale families, or t supported on one coordinate).
    pub fn linear_abs_moment_ln(&self, t: &DVector<f64>, k: f64) -> Option<f64> {
        if let Some(scale) = self.linear_scale(t) {
            if scale == 0.0 {
                return Some(f64::NEG_INFINITY);
            }
            return self.scalar_abs_moment_ln(k).map(|m| m + k * scale.ln());
        }
        let mut nonzero = 0usize;
        let mut coeff = 0.0f64;
        for &x in t.iter() {
            if x != 0.0 {
                nonzero += 1;
                coeff = x.abs();
            }
        }
        match nonzero {
            0 => Some(f64::NEG_INFINITY),
            1 => self.scalar_abs_moment_ln(k).map(|m| m + k * coeff.ln()),
            _ => None,
        }
    }
}

impl fmt::Display for RandomFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FamilyKind::Gaussian => write!(f, "gaussian"),
            FamilyKind::Rademacher => write!(f, "rademacher"),
            FamilyKind::UniformSymmetric => write!(f, "uniform"),
            FamilyKind::StudentLike { df } => write!(f, "student:{df}"),
            FamilyKind::SymmetricWeibull { shape } => write!(f, "weibull:{shape}"),
            FamilyKind::SymmetricStable { stability } => write!(f, "stable:{stability}"),
            FamilyKind::TwoPointMixture { value, weight } => {
                write!(f, "twopoint:{value}:{weight}")
            }
        }
    }
}

impl FromStr for RandomFamily {
    type Err = Error;

    /// Parses `gaussian`, `rademacher`, `uniform`, `student:DF`, `weibull:R`,
    /// `stable:P`, or `twopoint:VALUE:WEIGHT`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Parse(format!("family spec `{s}` is missing a parameter")))?
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad numeric parameter in family spec `{s}`")))
        };
        let kind = match parts[0] {
            "gaussian" | "normal" => FamilyKind::Gaussian,
            "rademacher" | "sign" => FamilyKind::Rademacher,
            "uniform" => FamilyKind::UniformSymmetric,
            "student" => FamilyKind::StudentLike { df: num(1)? },
            "weibull" => FamilyKind::SymmetricWeibull { shape: num(1)? },
            "stable" => FamilyKind::SymmetricStable { stability: num(1)? },
            "twopoint" => FamilyKind::TwoPointMixture { value: num(1)?, weight: num(2)? },
            other => return Err(Error::Parse(format!("unknown family `{other}`"))),
        };
        RandomFamily::new(kind)
    }
}

/// `count` i.i.d. rows of (X₁,…,Xₙ). Row-chunked: the result is a pure
/// function of (family, n, count, seed) no matter how chunks are scheduled.
pub fn sample_matrix(
    family: &RandomFamily,
    n: usize,
    count: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if n == 0 || count == 0 {
        return Err(Error::InvalidParameter(
            "sample_matrix requires n >= 1 and count >= 1".into(),
        ));
    }
    let rows_per_chunk = (CHUNK / n).max(1);
    let mut flat = vec![0.0f64; count * n];
    for_each_chunk(seed, "sample_matrix", count, rows_per_chunk, |idx, rng, len| {
        let start = idx as usize * rows_per_chunk * n;
        family.sample_into(rng, &mut flat[start..start + len * n]);
    });
    Ok(DMatrix::from_row_slice(count, n, &flat))
}

fn mean_and_se(sum: f64, sumsq: f64, count: usize) -> (f64, f64) {
    let n = count as f64;
    let mean = sum / n;
    let var = ((sumsq / n) - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

/// Plain MC mean of f(|⟨t, X⟩|) with the linear form sampled coordinate-wise.
fn mc_linear_mean<F>(
    family: &RandomFamily,
    t: &DVector<f64>,
    budget: usize,
    seed: u64,
    tag: &str,
    f: F,
) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let n = t.len();
    let rows = (CHUNK / n.max(1)).max(1);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut row = vec![0.0f64; n];
    for_each_chunk(seed, tag, budget, rows, |_, rng, len| {
        for _ in 0..len {
            family.sample_into(rng, &mut row);
            let y: f64 = row.iter().zip(t.iter()).map(|(x, c)| x * c).sum();
            let v = f(y.abs());
            sum += v;
            sumsq += v * v;
        }
    });
    mean_and_se(sum, sumsq, budget)
}

/// Scalar-law MC mean of f(|X₁|).
fn mc_scalar_mean<F>(family: &RandomFamily, budget: usize, seed: u64, tag: &str, f: F) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for_each_chunk(seed, tag, budget, CHUNK, |_, rng, len| {
        for _ in 0..len {
            let v = f(family.sample(rng).abs());
            sum += v;
            sumsq += v * v;
        }
    });
    mean_and_se(sum, sumsq, budget)
}

/// E|X_t|·1{|X_t| ≥ u} for X_t = ⟨t, X⟩.
///
/// Closed form for Gaussian; the stable law reduces to its scalar law through
/// the scale identity and is then estimated by MC; everything else is plain MC.
pub fn truncated_abs_mean(
    family: &RandomFamily,
    t: &DVector<f64>,
    u: f64,
    budget: usize,
    seed: u64,
) -> Result<Estimate> {
    if !(u >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be nonnegative, got {u}")));
    }
    if budget == 0 {
        return Err(Error::InvalidParameter("mc budget must be positive".into()));
    }
    match family.kind() {
        FamilyKind::Gaussian => {
            let sigma = t.norm();
            let value = if sigma == 0.0 {
                0.0
            } else {
                sigma * (2.0 / PI).sqrt() * (-u * u / (2.0 * sigma * sigma)).exp()
            };
            Ok(Estimate::closed_form(value, seed))
        }
        FamilyKind::SymmetricStable { .. } => {
            let scale = family.linear_scale(t).expect("stable is a scale family");
            if scale == 0.0 {
                return Ok(Estimate::closed_form(0.0, seed));
            }
            let cutoff = u / scale;
            let (mean, se) = mc_scalar_mean(family, budget, seed, "truncated_abs_mean", |v| {
                if v >= cutoff {
                    v
                } else {
                    0.0
                }
            });
            Ok(Estimate { value: scale * mean, stderr: scale * se, count: budget as u64, seed })
        }
        _ => {
            let (mean, se) = mc_linear_mean(family, t, budget, seed, "truncated_abs_mean", |v| {
                if v >= u {
                    v
                } else {
                    0.0
                }
            });
            Ok(Estimate { value: mean, stderr: se, count: budget as u64, seed })
        }
    }
}

/// Result of [`truncated_abs_mean_detailed`]: the plain estimate plus, for
/// heavy-tailed families, a second estimate stratified on the tail event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncatedAbsMean {
    pub primary: Estimate,
    pub stratified: Option<Estimate>,
    pub consistent: bool,
}

/// As [`truncated_abs_mean`], adding, for heavy-tailed families, a stratified
/// second pass that estimates P(|X_t| ≥ u)·E[|X_t| | |X_t| ≥ u] by rejection,
/// and reports whether the two estimates agree within 4 combined standard
/// errors.
pub fn truncated_abs_mean_detailed(
    family: &RandomFamily,
    t: &DVector<f64>,
    u: f64,
    budget: usize,
    seed: u64,
) -> Result<TruncatedAbsMean> {
    let primary = truncated_abs_mean(family, t, u, budget, seed)?;
    let heavy = matches!(
        family.kind(),
        FamilyKind::StudentLike { .. }
            | FamilyKind::SymmetricWeibull { .. }
            | FamilyKind::SymmetricStable { .. }
    );
    if !heavy || u == 0.0 {
        return Ok(TruncatedAbsMean { primary, stratified: None, consistent: true });
    }

    // Tail probability from a dedicated pass, then the conditional mean from
    // rejection sampling capped at 8x the budget.
    let scale = family.linear_scale(t);
    let n = t.len();
    let cutoff = scale.map_or(u, |s| if s > 0.0 { u / s } else { f64::INFINITY });
    let mult = scale.unwrap_or(1.0);
    let (p_hat, p_se) = mc_scalar_or_linear_prob(family, t, cutoff, scale.is_some(), budget, seed);
    if p_hat == 0.0 {
        return Ok(TruncatedAbsMean { primary, stratified: None, consistent: true });
    }
    let mut accepted = 0usize;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let cap = budget.saturating_mul(8);
    let rows = (CHUNK / n.max(1)).max(1);
    let mut row = vec![0.0f64; n];
    for_each_chunk(seed, "truncated_abs_mean_strat", cap, rows, |_, rng, len| {
        for _ in 0..len {
            let v = if scale.is_some() {
                family.sample(rng).abs()
            } else {
                family.sample_into(rng, &mut row);
                row.iter().zip(t.iter()).map(|(x, c)| x * c).sum::<f64>().abs()
            };
            if v >= cutoff {
                accepted += 1;
                sum += v;
                sumsq += v * v;
            }
        }
    });
    if accepted < 32 {
        return Ok(TruncatedAbsMean { primary, stratified: None, consistent: true });
    }
    let (cond_mean, cond_se) = mean_and_se(sum, sumsq, accepted);
    let value = mult * p_hat * cond_mean;
    let stderr = mult * (p_se * cond_mean + p_hat * cond_se);
    let stratified = Estimate { value, stderr, count: (budget + accepted) as u64, seed };
    let tol = 4.0 * (primary.stderr + stderr) + 1e-12;
    let consistent = (primary.value - value).abs() <= tol;
    Ok(TruncatedAbsMean { primary, stratified: Some(stratified), consistent })
}

fn mc_scalar_or_linear_prob(
    family: &RandomFamily,
    t: &DVector<f64>,
    cutoff: f64,
    scalar: bool,
    budget: usize,
    seed: u64,
) -> (f64, f64) {
    let indicator = |v: f64| if v >= cutoff { 1.0 } else { 0.0 };
    if scalar {
        mc_scalar_mean(family, budget, seed, "truncated_abs_mean_prob", indicator)
    } else {
        mc_linear_mean(family, t, budget, seed, "truncated_abs_mean_prob", indicator)
    }
}

/// MC estimate of ‖X_t‖_p = (E|⟨t,X⟩|^p)^{1/p}, with the standard error
/// propagated through the p-th root.
pub fn mc_lp_norm(
    family: &RandomFamily,
    t: &DVector<f64>,
    p: f64,
    budget: usize,
    seed: u64,
) -> Estimate {
    let (mean, se) = mc_linear_mean(family, t, budget, seed, "lp_norm_linear", |v| v.powf(p));
    if mean <= 0.0 {
        return Estimate { value: 0.0, stderr: 0.0, count: budget as u64, seed };
    }
    let value = mean.powf(1.0 / p);
    let stderr = se * value / (p * mean);
    Estimate { value, stderr, count: budget as u64, seed }
}

/// ‖X_t‖_p. Closed form when the linear form has a scaled scalar law
/// (Gaussian, stable, or single-coordinate t); MC otherwise.
pub fn lp_norm_linear(
    family: &RandomFamily,
    t: &DVector<f64>,
    p: f64,
    budget: usize,
    seed: u64,
) -> Result<Estimate> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("norm order must be at least 1, got {p}")));
    }
    if p >= family.max_finite_moment() {
        return Err(Error::InfiniteMoment { family: family.to_string(), order: p });
    }
    if let Some(ln_m) = family.linear_abs_moment_ln(t, p) {
        return Ok(Estimate::closed_form((ln_m / p).exp(), seed));
    }
    if budget == 0 {
        return Err(Error::InvalidParameter("mc budget must be positive".into()));
    }
    Ok(mc_lp_norm(family, t, p, budget, seed))
}

/// Outcome of the moment-condition check: the measured ratio
/// (E|X₁|^r)^{1/r} / (E X₁²)^{1/2} against λ, plus the doubling ratio
/// sup_p ‖X₁‖_{2p}/‖X₁‖_p over p ∈ {1,2,4} when α is supplied.
#[derive(Debug, Clone, Serialize)]
pub struct MomentConditionReport {
    pub passes: bool,
    pub worst_ratio: f64,
    pub doubling_ratio: Option<f64>,
    pub doubling_ok: Option<bool>,
}

/// Checks (E|X₁|^r)^{1/r} ≤ λ·(E X₁²)^{1/2} for r ∈ (4,8]. Families with an
/// infinite r-th moment fail automatically. Closed-form moments are used when
/// the family provides them; otherwise the ratio is estimated by MC.
pub fn moment_condition_check(
    family: &RandomFamily,
    r: f64,
    lambda: f64,
    budget: usize,
    seed: u64,
) -> Result<MomentConditionReport> {
    if !(r > 4.0 && r <= 8.0) {
        return Err(Error::InvalidParameter(format!("moment order r must lie in (4,8], got {r}")));
    }
    let e1 = DVector::from_element(1, 1.0);
    let ratio = match family.scalar_abs_moment_ln(r) {
        Some(ln_m) => (ln_m / r).exp() / family.variance().sqrt(),
        None => mc_lp_norm(family, &e1, r, budget, seed).value,
    };
    let passes = ratio.is_finite() && ratio <= lambda;

    let mut doubling_ratio = None;
    let mut doubling_ok = None;
    if let Some(reg) = family.regularity() {
        if let Some(alpha) = reg.alpha {
            let mut worst = 0.0f64;
            for p in [1.0, 2.0, 4.0] {
                let hi = match family.scalar_abs_moment_ln(2.0 * p) {
                    Some(m) => (m / (2.0 * p)).exp(),
                    None => mc_lp_norm(family, &e1, 2.0 * p, budget, seed).value,
                };
                let lo = match family.scalar_abs_moment_ln(p) {
                    Some(m) => (m / p).exp(),
                    None => mc_lp_norm(family, &e1, p, budget, seed).value,
                };
                worst = worst.max(hi / lo);
            }
            doubling_ratio = Some(worst);
            doubling_ok = Some(worst.is_finite() && worst <= alpha);
        }
    }
    Ok(MomentConditionReport { passes, worst_ratio: ratio, doubling_ratio, doubling_ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::rng::stream;

    fn all_families() -> Vec<RandomFamily> {
        vec![
            RandomFamily::new(FamilyKind::Gaussian).unwrap(),
            RandomFamily::new(FamilyKind::Rademacher).unwrap(),
            RandomFamily::new(FamilyKind::UniformSymmetric).unwrap(),
            RandomFamily::new(FamilyKind::StudentLike { df: 9.0 }).unwrap(),
            RandomFamily::new(FamilyKind::SymmetricWeibull { shape: 0.5 }).unwrap(),
            RandomFamily::new(FamilyKind::SymmetricStable { stability: 1.5 }).unwrap(),
            RandomFamily::new(FamilyKind::TwoPointMixture { value: 4.0, weight: 0.1 }).unwrap(),
        ]
    }

    #[test]
    fn samples_are_mean_zero_and_normalized() {
        for family in all_families() {
            let mut rng = stream(1, "mean_test", 0);
            let count = 1_000_000usize;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..count {
                let x = family.sample(&mut rng);
                sum += x;
                sumsq += x * x;
            }
            let mean = sum / count as f64;
            let var = sumsq / count as f64 - mean * mean;
            let se = (var / count as f64).sqrt();
            assert!(
                mean.abs() <= 5.0 * se.max(1e-9),
                "family {family}: mean {mean} exceeds 5 standard errors {se}"
            );
            if family.variance().is_finite() {
                assert!(
                    (var - 1.0).abs() < 0.01,
                    "family {family}: empirical variance {var} is not 1 within tolerance"
                );
            }
        }
    }

    #[test]
    fn rademacher_matrix_has_sign_entries() {
        let family = RandomFamily::new(FamilyKind::Rademacher).unwrap();
        let m = sample_matrix(&family, 3, 4, 7).unwrap();
        assert_eq!(m.nrows(), 4);
        assert_eq!(m.ncols(), 3);
        for &x in m.iter() {
            assert!(x == 1.0 || x == -1.0);
        }
    }

    #[test]
    fn gaussian_unit_variance_at_large_count() {
        let family = RandomFamily::new(FamilyKind::Gaussian).unwrap();
        let m = sample_matrix(&family, 1, 1_000_000, 1).unwrap();
        let var = m.iter().map(|x| x * x).sum::<f64>() / 1e6;
        assert!((var - 1.0).abs() < 0.005, "variance {var}");
    }

    #[test]
    fn sample_matrix_is_chunk_stable() {
        // Rebuilding the second chunk in isolation reproduces the same rows.
        let family = RandomFamily::new(FamilyKind::StudentLike { df: 9.0 }).unwrap();
        let n = 5usize;
        let count = 2000usize;
        let m = sample_matrix(&family, n, count, 42).unwrap();
        let rows_per_chunk = (CHUNK / n).max(1);
        let mut rng = stream(42, "sample_matrix", 1);
        let len = (count - rows_per_chunk).min(rows_per_chunk);
        let mut buf = vec![0.0f64; len * n];
        family.sample_into(&mut rng, &mut buf);
        for i in 0..len {
            for j in 0..n {
                assert_eq!(m[(rows_per_chunk + i, j)], buf[i * n + j]);
            }
        }
    }

    #[test]
    fn stable_tail_has_the_expected_power_law() {
        // P(|X| > u) * u^p approaches 2*Gamma(p)*sin(pi p/2)/pi.
        let p = 1.5f64;
        let family = RandomFamily::new(FamilyKind::SymmetricStable { stability: p }).unwrap();
        let m = sample_matrix(&family, 1, 1_000_000, 1).unwrap();
        let c_p = statrs::function::gamma::gamma(p) * (PI * p / 2.0).sin() / PI;
        for u in [10.0f64, 30.0, 100.0] {
            let hits = m.iter().filter(|x| x.abs() > u).count() as f64;
            let scaled = (hits / 1e6) * u.powf(p);
            assert!(
                (scaled / (2.0 * c_p) - 1.0).abs() < 0.2,
                "u={u}: scaled tail {scaled} vs {}",
                2.0 * c_p
            );
        }
    }

    #[test]
    fn gaussian_truncated_mean_closed_form() {
        let family = RandomFamily::new(FamilyKind::Gaussian).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let est = truncated_abs_mean(&family, &e1, 0.0, 10, 1).unwrap();
        assert_relative_eq!(est.value, (2.0 / PI).sqrt(), max_relative = 1e-12);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn truncated_mean_vanishes_at_large_thresholds() {
        for family in all_families() {
            let t = DVector::from_vec(vec![0.5, -0.5]);
            let est = truncated_abs_mean(&family, &t, 1e9, 4096, 3).unwrap();
            assert!(est.value < 1e-6, "family {family}: {}", est.value);
        }
    }

    #[test]
    fn truncated_mean_rejects_negative_threshold() {
        let family = RandomFamily::new(FamilyKind::Gaussian).unwrap();
        let t = DVector::from_vec(vec![1.0]);
        assert!(truncated_abs_mean(&family, &t, -1.0, 100, 1).is_err());
    }

    #[test]
    fn stable_scaling_identity_holds() {
        // E|X_{2t}| 1{|X_{2t}| >= u} = 2 E|X_t| 1{|X_t| >= u/2}: with common
        // random numbers the two estimates agree exactly.
        let family = RandomFamily::new(FamilyKind::SymmetricStable { stability: 1.5 }).unwrap();
        let t1 = DVector::from_vec(vec![1.0]);
        let t2 = DVector::from_vec(vec![2.0]);
        let u = 1.25f64;
        let a = truncated_abs_mean(&family, &t2, u, 50_000, 9).unwrap();
        let b = truncated_abs_mean(&family, &t1, u / 2.0, 50_000, 9).unwrap();
        assert_relative_eq!(a.value, 2.0 * b.value, max_relative = 1e-12);
    }

    #[test]
    fn truncated_mean_is_nonincreasing_in_threshold() {
        for family in all_families() {
            let t = DVector::from_vec(vec![1.0, 2.0]);
            let mut last = f64::INFINITY;
            for u in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
                let est = truncated_abs_mean(&family, &t, u, 40_000, 5).unwrap();
                assert!(
                    est.value <= last + 3.0 * est.stderr + 1e-12,
                    "family {family} increased at u={u}"
                );
                last = est.value;
            }
        }
    }

    #[test]
    fn stratified_tail_estimate_agrees_with_plain_mc() {
        for family in [
            RandomFamily::new(FamilyKind::StudentLike { df: 9.0 }).unwrap(),
            RandomFamily::new(FamilyKind::SymmetricStable { stability: 1.5 }).unwrap(),
            RandomFamily::new(FamilyKind::SymmetricWeibull { shape: 0.5 }).unwrap(),
        ] {
            let t = DVector::from_vec(vec![1.0, -1.0]);
            let rep = truncated_abs_mean_detailed(&family, &t, 2.0, 100_000, 11).unwrap();
            assert!(rep.consistent, "family {family}: estimates disagree");
            assert!(rep.stratified.is_some(), "family {family}: no stratified pass");
        }
    }

    #[test]
    fn gaussian_closed_forms_match_mc() {
        let family = RandomFamily::new(FamilyKind::Gaussian).unwrap();
        let t = DVector::from_vec(vec![0.6, -0.8]);
        for u in [0.0, 0.7, 1.5] {
            let closed = truncated_abs_mean(&family, &t, u, 10, 1).unwrap().value;
            let (mean, se) = mc_linear_mean(&family, &t, 1_000_000, 2, "test_mc", |v| {
                if v >= u {
                    v
                } else {
                    0.0
                }
            });
            assert!(
                (mean - closed).abs() <= 4.0 * se,
                "u={u}: mc {mean} vs closed {closed} (se {se})"
            );
        }
        for p in [1.0, 2.0, 4.0] {
            let closed = lp_norm_linear(&family, &t, p, 10, 1).unwrap().value;
            let mc = mc_lp_norm(&family, &t, p, 1_000_000, 3);
            assert!(
                (mc.value - closed).abs() <= 4.0 * mc.stderr.max(1e-6),
                "p={p}: mc {} vs closed {closed}",
                mc.value
            );
        }
    }

    #[test]
    fn gaussian_norm_oracles() {
        let family = RandomFamily::new(FamilyKind::Gaussian).unwrap();
        let t = DVector::from_vec(vec![3.0, 4.0]);
        assert_relative_eq!(
            lp_norm_linear(&family, &t, 2.0, 10, 1).unwrap().value,
            5.0,
            max_relative = 1e-12
        );
        let e1 = DVector::from_vec(vec![1.0]);
        assert_relative_eq!(
            lp_norm_linear(&family, &e1, 4.0, 10, 1).unwrap().value,
            3f64.powf(0.25),
            max_relative = 1e-12
        );
    }

    #[test]
    fn lp_norms_are_nondecreasing_in_p() {
        for family in all_families() {
            let t = DVector::from_vec(vec![1.0, 1.0, 1.0]);
            let mut last = 0.0f64;
            for p in [1.0, 2.0, 4.0, 8.0] {
                if p >= family.max_finite_moment() {
                    continue;
                }
                let est = lp_norm_linear(&family, &t, p, 60_000, 17).unwrap();
                assert!(
                    est.value >= last - 3.0 * est.stderr - 1e-9,
                    "family {family} decreased at p={p}"
                );
                last = est.value;
            }
        }
    }

    #[test]
    fn lp_norm_rejects_infinite_orders() {
        let stable = RandomFamily::new(FamilyKind::SymmetricStable { stability: 1.5 }).unwrap();
        let t = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            lp_norm_linear(&stable, &t, 2.0, 100, 1),
            Err(Error::InfiniteMoment { .. })
        ));
        let student = RandomFamily::new(FamilyKind::StudentLike { df: 9.0 }).unwrap();
        assert!(lp_norm_linear(&student, &t, 16.0, 100, 1).is_err());
    }

    #[test]
    fn moment_condition_oracles() {
        let gaussian = RandomFamily::new(FamilyKind::Gaussian).unwrap();
        let rep = moment_condition_check(&gaussian, 8.0, 2.0, 1000, 1).unwrap();
        assert!(rep.passes);
        assert_relative_eq!(rep.worst_ratio, 105f64.powf(0.125), max_relative = 1e-10);

        let rademacher = RandomFamily::new(FamilyKind::Rademacher).unwrap();
        let rep = moment_condition_check(&rademacher, 8.0, 1.0, 1000, 1).unwrap();
        assert!(rep.passes);
        assert_relative_eq!(rep.worst_ratio, 1.0, max_relative = 1e-12);

        let stable = RandomFamily::new(FamilyKind::SymmetricStable { stability: 1.5 }).unwrap();
        let rep = moment_condition_check(&stable, 5.0, 100.0, 1000, 1).unwrap();
        assert!(!rep.passes);

        // df = 9: the 8th moment ratio is sqrt(7), failing lambda = 2, while
        // the 5th moment ratio passes it.
        let student = RandomFamily::new(FamilyKind::StudentLike { df: 9.0 }).unwrap();
        let rep8 = moment_condition_check(&student, 8.0, 2.0, 1000, 1).unwrap();
        assert!(!rep8.passes);
        assert_relative_eq!(rep8.worst_ratio, 7f64.sqrt(), max_relative = 1e-10);
        let rep5 = moment_condition_check(&student, 5.0, 2.0, 1000, 1).unwrap();
        assert!(rep5.passes);
    }

    #[test]
    fn regularity_is_validated_at_construction() {
        let ok = RandomFamily::with_regularity(
            FamilyKind::StudentLike { df: 9.0 },
            Regularity { r: 5.0, lambda: 2.0, alpha: None },
        );
        assert!(ok.is_ok());
        let bad = RandomFamily::with_regularity(
            FamilyKind::StudentLike { df: 9.0 },
            Regularity { r: 8.0, lambda: 2.0, alpha: None },
        );
        assert!(bad.is_err());
    }

    #[test]
    fn rosenthal_band_for_light_families() {
        // For light-tailed families the ratio of the p-norm to the 2-norm of
        // a random linear form stays in a narrow band.
        let families = [
            RandomFamily::new(FamilyKind::Gaussian).unwrap(),
            RandomFamily::new(FamilyKind::Rademacher).unwrap(),
            RandomFamily::new(FamilyKind::UniformSymmetric).unwrap(),
        ];
        let n = 8usize;
        for family in families {
            for trial in 0..100u64 {
                let mut rng = stream(trial, "rosenthal_dir", 0);
                let mut u = DVector::from_fn(n, |_, _| {
                    let g: f64 = rng.sample(StandardNormal);
                    g
                });
                u /= u.norm();
                let l2 = lp_norm_linear(&family, &u, 2.0, 30_000, trial).unwrap().value;
                for p in [1.0, 4.0] {
                    let lp = lp_norm_linear(&family, &u, p, 30_000, trial).unwrap().value;
                    let ratio = lp / l2;
                    assert!(
                        (0.2..=5.0).contains(&ratio),
                        "family {family}, p={p}: ratio {ratio}"
                    );
                }
            }
        }
    }

    #[test]
    fn family_specs_round_trip() {
        for family in all_families() {
            let s = family.to_string();
            let parsed: RandomFamily = s.parse().unwrap();
            assert_eq!(parsed, family, "spec {s}");
            let json = serde_json::to_string(&family).unwrap();
            let back: RandomFamily = serde_json::from_str(&json).unwrap();
            assert_eq!(back, family, "json {json}");
        }
        assert!("stable:0.9".parse::<RandomFamily>().is_err());
        assert!("weibull:1.5".parse::<RandomFamily>().is_err());
        assert!("student:1".parse::<RandomFamily>().is_err());
        assert!("nope".parse::<RandomFamily>().is_err());
    }
}
