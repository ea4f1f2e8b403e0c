//! Covers of the euclidean ball: greedy separated nets, block assembly along
//! coordinate slices, and rotation-averaged variants for heavy-tailed laws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_matrix, RandomFamily};
use crate::error::{Error, Result};
use crate::geometry::{haar_orthogonal, HullCover, Provenance};
use crate::rng::{derive_seed, stream, CHUNK};

/// Largest block dimension the 5^k candidate bound keeps practical.
pub const MAX_NET_DIM: usize = 12;

/// Column block width used when scoring rotations against a sample matrix.
const SCORE_BLOCK: usize = 256;

/// Greedy maximal `separation`-separated subset of B_2^k.
///
/// Candidates stream uniformly from the ball; a candidate is kept when it is
/// at least `separation` away from everything kept so far. The stream stops
/// after `budget` consecutive rejections, which leaves the set maximal up to
/// that patience. For separation 1/2 a volume argument caps the size at 5^k.
pub fn separated_net(
    k: usize,
    separation: f64,
    budget: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if k == 0 {
        return Err(Error::InvalidParameter("net dimension must be positive".into()));
    }
    if k > MAX_NET_DIM {
        return Err(Error::InvalidParameter(format!(
            "net dimension {k} exceeds {MAX_NET_DIM}; the 5^k point bound is impractical"
        )));
    }
    if !(separation > 0.0 && separation <= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "separation must lie in (0, 2], got {separation}"
        )));
    }
    if budget == 0 {
        return Err(Error::InvalidParameter("rejection budget must be positive".into()));
    }
    let sep_sq = separation * separation;
    let mut points: Vec<DVector<f64>> = Vec::new();
    let mut rejected = 0usize;
    let mut chunk = 0u64;
    'stream: loop {
        let mut rng = stream(seed, "separated_net", chunk);
        chunk += 1;
        for _ in 0..CHUNK {
            let mut v = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = v.norm();
            let radius: f64 = rng.gen::<f64>().powf(1.0 / k as f64);
            if norm < 1e-12 {
                continue;
            }
            v.scale_mut(radius / norm);
            if points.iter().all(|p| (p - &v).norm_squared() >= sep_sq) {
                points.push(v);
                rejected = 0;
            } else {
                rejected += 1;
                if rejected >= budget {
                    break 'stream;
                }
            }
        }
    }
    // packing bound: separation/2 balls around net points fit in (1 + sep/2)B
    let cap = (1.0 + 2.0 / separation).powi(k as i32);
    debug_assert!((points.len() as f64) <= cap);
    Ok(points)
}

/// Wraps a separated net as a cover of B_2^k.
///
/// Maximality makes the net a `separation`-covering, so iterating the nearest
/// point map gives B_2^k ⊂ 1/(1-separation)·conv(T ∪ -T). Needs separation
/// strictly below 1.
pub fn net_cover(k: usize, separation: f64, budget: usize, seed: u64) -> Result<HullCover> {
    if !(separation > 0.0 && separation < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "a net only covers the ball for separation in (0, 1), got {separation}"
        )));
    }
    let scale = 1.0 / (1.0 - separation);
    let points: Vec<DVector<f64>> = separated_net(k, separation, budget, seed)?
        .into_iter()
        .map(|p| p.scale(scale))
        .collect();
    HullCover::new(
        DVector::zeros(k),
        points,
        Provenance::Net { k, separation, budget, seed },
        scale,
    )
}

/// Cover of B_2^n glued from separated nets over coordinate blocks.
///
/// The coordinates split into l = ceil(n/k) blocks of width at most k. Each
/// block ball carries a half-separated net, embedded back into R^n and scaled
/// by 2*sqrt(l); splitting x into blocks and expanding each block through its
/// net shows B_2^n ⊂ conv(S ∪ -S). The size never exceeds (2n/k)·5^k.
pub fn block_cover_b2(n: usize, k: usize, budget: usize, seed: u64) -> Result<HullCover> {
    if n == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "block size must lie in 1..=n, got {k} for n = {n}"
        )));
    }
    let l = n.div_ceil(k);
    let scale = 2.0 * (l as f64).sqrt();
    let mut points = Vec::new();
    for b in 0..l {
        let lo = b * k;
        let width = k.min(n - lo);
        let net = separated_net(width, 0.5, budget, derive_seed(seed, "block", b as u64))?;
        for t in net {
            let mut v = DVector::zeros(n);
            v.rows_mut(lo, width).copy_from(&t.scale(scale));
            points.push(v);
        }
    }
    debug_assert!(points.len() <= l * 5usize.pow(k as u32));
    HullCover::new(DVector::zeros(n), points, Provenance::BlockB2 { n, k, budget, seed }, scale)
}

/// Block size heuristic for rotation covers: ceil(c_log·log10 n), clamped to
/// what separated nets accept.
pub fn auto_block_size(n: usize, c_log: f64) -> usize {
    let raw = (c_log * (n as f64).log10()).ceil();
    let raw = if raw.is_finite() && raw > 0.0 { raw as usize } else { 1 };
    raw.clamp(1, n.min(MAX_NET_DIM))
}

/// Tuning knobs for `rotation_cover_b2` beyond the common arguments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationConfig {
    pub trials: usize,
    pub threshold_const: f64,
    /// Block size multiplier: k = ceil(c_log·log10 n).
    pub c_log: f64,
    /// Rejection patience handed to the per-block nets.
    pub net_budget: usize,
    /// Overrides the automatic block size when set.
    pub block_k: Option<usize>,
}

impl Default for RotationConfig {
    fn default() -> Self {
        RotationConfig {
            trials: 64,
            threshold_const: 1.0,
            c_log: 2.0,
            net_budget: 30_000,
            block_k: None,
        }
    }
}

/// What the rotation search saw, kept for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationDiagnostics {
    pub k: usize,
    pub l: usize,
    pub threshold: f64,
    /// Truncated-tail score of every trial, in trial order (trial 0 is the
    /// identity rotation).
    pub scores: Vec<f64>,
    pub best_trial: usize,
    pub best_score: f64,
    pub mean_score: f64,
    /// threshold + best_score: an upper bound candidate for the M functional
    /// of the emitted points.
    pub bound_at_threshold: f64,
    pub truncated: bool,
    pub four_plus_warned: bool,
}

/// Rotation-averaged block cover of B_2^n.
///
/// Builds one block cover, then scores Haar rotations of it by the truncated
/// tail sum sum_s E|⟨Rs, X⟩| 1{|⟨Rs, X⟩| ≥ threshold_const·sqrt(n)} and keeps
/// the rotation with the smallest score. All trials share one sample matrix,
/// so the comparison is common-random-numbers; ties go to the earliest trial.
pub fn rotation_cover_b2(
    n: usize,
    family: &RandomFamily,
    trials: usize,
    threshold_const: f64,
    seed: u64,
    budget: usize,
) -> Result<(HullCover, RotationDiagnostics)> {
    let config = RotationConfig { trials, threshold_const, ..RotationConfig::default() };
    rotation_cover_with(n, family, &config, seed, budget)
}

/// `rotation_cover_b2` with every knob exposed.
pub fn rotation_cover_with(
    n: usize,
    family: &RandomFamily,
    config: &RotationConfig,
    seed: u64,
    budget: usize,
) -> Result<(HullCover, RotationDiagnostics)> {
    if n == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if config.trials == 0 {
        return Err(Error::InvalidParameter("rotation search needs at least one trial".into()));
    }
    if budget == 0 {
        return Err(Error::InvalidParameter("score budget must be positive".into()));
    }
    if !(config.threshold_const > 0.0) || !config.threshold_const.is_finite() {
        return Err(Error::InvalidParameter("threshold constant must be positive".into()));
    }
    if !(config.c_log > 0.0) || !config.c_log.is_finite() {
        return Err(Error::InvalidParameter("c_log must be positive".into()));
    }
    let k = config.block_k.unwrap_or_else(|| auto_block_size(n, config.c_log));
    if k > n {
        return Err(Error::InvalidParameter(format!("block size {k} exceeds n = {n}")));
    }
    let base = block_cover_b2(n, k, config.net_budget, derive_seed(seed, "rotation_base", 0))?;
    let l = n.div_ceil(k);

    let four_plus_warned = !family.has_four_plus_moment();
    if four_plus_warned {
        eprintln!(
            "rotation_cover_b2: {family} lacks a finite (4+eps) moment; \
             rotation scores are noisy and the search may not help"
        );
    }

    let threshold = config.threshold_const * (n as f64).sqrt();
    let samples = sample_matrix(family, n, budget, derive_seed(seed, "rotation_score", 0))?;

    let mut scores = Vec::with_capacity(config.trials);
    let mut best_trial = 0usize;
    let mut best_score = f64::INFINITY;
    let mut best_points = base.points.clone();
    for trial in 0..config.trials {
        let rotated: Vec<DVector<f64>> = if trial == 0 {
            base.points.clone()
        } else {
            let r = haar_orthogonal(n, derive_seed(seed, "rotation", trial as u64))?;
            base.points.iter().map(|p| &r * p).collect()
        };
        let score = truncated_score(&samples, &rotated, threshold);
        scores.push(score);
        if score < best_score {
            best_trial = trial;
            best_score = score;
            best_points = rotated;
        }
    }
    let mean_score = scores.iter().sum::<f64>() / scores.len() as f64;

    let cap = 10 * n * n;
    let truncated = best_points.len() > cap;
    if truncated {
        eprintln!(
            "rotation_cover_b2: truncating {} points to the 10n^2 = {cap} cap; \
             the containment guarantee no longer applies",
            best_points.len()
        );
        best_points.truncate(cap);
    }

    let cover = HullCover::new(
        DVector::zeros(n),
        best_points,
        Provenance::RotationB2 {
            n,
            k,
            trials: config.trials,
            threshold_const: config.threshold_const,
            c_log: config.c_log,
            seed,
            mc: budget,
        },
        2.0 * (l as f64).sqrt(),
    )?;
    let diagnostics = RotationDiagnostics {
        k,
        l,
        threshold,
        scores,
        best_trial,
        best_score,
        mean_score,
        bound_at_threshold: threshold + best_score,
        truncated,
        four_plus_warned,
    };
    Ok((cover, diagnostics))
}

/// Mean over sample rows of sum_s |⟨s, x⟩| restricted to |⟨s, x⟩| ≥ threshold.
fn truncated_score(samples: &DMatrix<f64>, points: &[DVector<f64>], threshold: f64) -> f64 {
    let rows = samples.nrows();
    let mut total = 0.0;
    for chunk in points.chunks(SCORE_BLOCK) {
        let p = DMatrix::from_columns(chunk);
        let g = samples * p;
        total += g
            .iter()
            .map(|v| {
                let a = v.abs();
                if a >= threshold {
                    a
                } else {
                    0.0
                }
            })
            .sum::<f64>();
    }
    total / rows as f64
}
