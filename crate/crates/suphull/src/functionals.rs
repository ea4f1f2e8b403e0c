//! The truncated-moment functionals over a finite point set, the enumeration
//! functional, and the expected supremum.
//!
//! For a point set S and coordinate law X, write F(u) = Σ_{t∈S} E|X_t|·1{|X_t| ≥ u}
//! with X_t = ⟨t, X⟩. The two central quantities are
//!
//!   tilde_m = inf { m > 0 : F(m) ≤ m },
//!   big_m   = inf_{u > 0} ( u + F(u) ),
//!
//! and they always satisfy tilde_m ≤ big_m ≤ 2·tilde_m. All estimators here
//! minimize over the *empirical* F built from a common set of Monte Carlo
//! samples, so the sandwich holds exactly for the reported values (up to
//! floating-point ulps), not merely within confidence intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::RandomFamily;
use crate::error::{Error, Result};
use crate::geometry::{HullCover, IndexSet};
use crate::rng::{derive_seed, for_each_chunk, CHUNK};

/// Confidence half-widths are z times the standard error throughout.
pub const CONFIDENCE_Z: f64 = 3.0;

/// Ceiling on budget * |S| for the fully materialized pooled solver.
const MAX_POOL: usize = 20_000_000;
/// Log-spaced bins for the sketch solver.
const SKETCH_BINS: usize = 65_536;
/// Ceiling on exactly swept breakpoints in the scale-family solver.
const SWEEP_CAP: usize = 5_000_000;

/// A scalar estimate with its Monte Carlo standard error. Closed-form values
/// carry stderr 0 and count 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub count: u64,
    pub seed: u64,
}

impl Estimate {
    pub fn closed_form(value: f64, seed: u64) -> Self {
        Estimate { value, stderr: 0.0, count: 0, seed }
    }

    /// Half-width of the confidence interval at the crate-wide z.
    pub fn half_width(&self) -> f64 {
        CONFIDENCE_Z * self.stderr
    }

    pub fn lo(&self) -> f64 {
        self.value - self.half_width()
    }

    pub fn hi(&self) -> f64 {
        self.value + self.half_width()
    }
}

/// Joint report for one (set, cover, family) comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub m_tilde: Estimate,
    pub m_big: Estimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_little: Option<Estimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_sup: Option<Estimate>,
    pub sandwich_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_bound_ok: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_m_over_b: Option<f64>,
}

fn points_dim(points: &[DVector<f64>]) -> Result<usize> {
    let n = points.first().map_or(0, |t| t.len());
    for t in points {
        if t.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: t.len() });
        }
    }
    Ok(n)
}

fn points_matrix(points: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, points.len());
    for (j, t) in points.iter().enumerate() {
        m.column_mut(j).copy_from(t);
    }
    m
}

struct RawFunctionals {
    m_tilde: f64,
    se_tilde: f64,
    m_big: f64,
    se_big: f64,
}

/// Both truncated-moment functionals from one shared sample set.
///
/// Three solvers share the stream tag, so the two functionals always see the
/// same draws. Scale families (Gaussian, stable) use B scalar draws and the
/// identity X_t = scale(t)·X₁; general families pool all budget·|S| values
/// when that fits in memory, and fall back to a log-binned sketch (relative
/// resolution about 5e-4) beyond that.
pub fn m_functionals(
    points: &[DVector<f64>],
    family: &RandomFamily,
    budget: usize,
    seed: u64,
) -> Result<(Estimate, Estimate)> {
    if budget == 0 {
        return Err(Error::InvalidParameter("mc budget must be positive".into()));
    }
    let n = points_dim(points)?;
    let degenerate =
        points.is_empty() || points.iter().all(|t| t.iter().all(|&x| x == 0.0));
    if degenerate {
        let zero = Estimate::closed_form(0.0, seed);
        return Ok((zero, zero));
    }

    let raw = if let Some(scales) = scale_vector(points, family) {
        scale_path(&scales, family, budget, seed)
    } else if budget.saturating_mul(points.len()) <= MAX_POOL {
        pooled_path(points, n, family, budget, seed)
    } else {
        sketch_path(points, n, family, budget, seed)
    };
    if !raw.m_tilde.is_finite() || !raw.m_big.is_finite() {
        return Err(Error::DivergingSum { cap: raw.m_big });
    }
    let count = budget as u64;
    Ok((
        Estimate { value: raw.m_tilde, stderr: raw.se_tilde, count, seed },
        Estimate { value: raw.m_big, stderr: raw.se_big, count, seed },
    ))
}

/// tilde_m: the fixed-point form of the truncated-moment functional.
pub fn tilde_m(
    points: &[DVector<f64>],
    family: &RandomFamily,
    budget: usize,
    seed: u64,
) -> Result<Estimate> {
    Ok(m_functionals(points, family, budget, seed)?.0)
}

/// big_m: the infimum form of the truncated-moment functional.
pub fn big_m(
    points: &[DVector<f64>],
    family: &RandomFamily,
    budget: usize,
    seed: u64,
) -> Result<Estimate> {
    Ok(m_functionals(points, family, budget, seed)?.1)
}

fn scale_vector(points: &[DVector<f64>], family: &RandomFamily) -> Option<Vec<f64>> {
    points.iter().map(|t| family.linear_scale(t)).collect()
}

/// Scale-family solver: O((B + |S|) log) using sorted draws and sorted scales.
fn scale_path(scales: &[f64], family: &RandomFamily, budget: usize, seed: u64) -> RawFunctionals {
    let mut s_sorted: Vec<f64> = scales.iter().copied().filter(|&s| s > 0.0).collect();
    if s_sorted.is_empty() {
        return RawFunctionals { m_tilde: 0.0, se_tilde: 0.0, m_big: 0.0, se_big: 0.0 };
    }
    s_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // s_suffix[i] = sum of scales from i on
    let mut s_suffix = vec![0.0f64; s_sorted.len() + 1];
    for i in (0..s_sorted.len()).rev() {
        s_suffix[i] = s_suffix[i + 1] + s_sorted[i];
    }

    let mut xs: Vec<f64> = Vec::with_capacity(budget);
    for_each_chunk(seed, "m_functionals", budget, CHUNK, |_, rng, len| {
        for _ in 0..len {
            xs.push(family.sample(rng).abs());
        }
    });
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut x_suffix = vec![0.0f64; xs.len() + 1];
    for i in (0..xs.len()).rev() {
        x_suffix[i] = x_suffix[i + 1] + xs[i];
    }
    let b = budget as f64;

    // mean of draws >= c (or > c with strict = true)
    let suf_mean = |c: f64, strict: bool| -> f64 {
        let idx = if strict {
            xs.partition_point(|&x| x <= c)
        } else {
            xs.partition_point(|&x| x < c)
        };
        x_suffix[idx] / b
    };
    let f_of = |m: f64| -> f64 {
        if m <= 0.0 {
            return s_suffix[0] * x_suffix[0] / b;
        }
        s_sorted.iter().map(|&s| s * suf_mean(m / s, false)).sum()
    };
    let f_strict = |m: f64| -> f64 { s_sorted.iter().map(|&s| s * suf_mean(m / s, true)).sum() };

    let f_zero = f_of(0.0);
    if f_zero == 0.0 {
        return RawFunctionals { m_tilde: 0.0, se_tilde: 0.0, m_big: 0.0, se_big: 0.0 };
    }

    // tilde_m by bisection on the nonincreasing gap F(m) - m.
    let mut lo = 0.0f64;
    let mut hi = f_zero.max(f64::MIN_POSITIVE);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f_of(mid) <= mid {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let m_tilde = hi;

    // big_m: coarse log grid with exact evaluations, then an exact breakpoint
    // sweep of every interval whose lower bound u_left + F(u_right) could
    // still beat the incumbent.
    let u_max = s_sorted.last().unwrap() * xs.last().copied().unwrap_or(0.0);
    let mut best = f_zero.min(u_max + f_strict(u_max));
    let mut best_thr = if f_zero <= u_max { 0.0 } else { f64::INFINITY };
    if u_max == 0.0 {
        return RawFunctionals { m_tilde: 0.0, se_tilde: 0.0, m_big: 0.0, se_big: 0.0 };
    }
    const GRID: usize = 2048;
    let g_lo = u_max * 1e-12;
    let ratio = (u_max / g_lo).powf(1.0 / GRID as f64);
    let mut grid = Vec::with_capacity(GRID + 1);
    let mut g = g_lo;
    for _ in 0..=GRID {
        grid.push(g.min(u_max));
        g *= ratio;
    }
    let f_grid: Vec<f64> = grid.iter().map(|&u| f_of(u)).collect();
    for (i, (&u, &f)) in grid.iter().zip(f_grid.iter()).enumerate() {
        let h = u + f;
        if h < best {
            best = h;
            best_thr = u;
        }
        let _ = i;
    }

    let mut swept = 0usize;
    for i in 0..grid.len() {
        let left = if i == 0 { 0.0 } else { grid[i - 1] };
        let right = grid[i];
        if left >= right {
            continue;
        }
        // F is nonincreasing, so u + F(u) >= left + F(right) on (left, right].
        if left + f_grid[i] >= best {
            continue;
        }
        if swept >= SWEEP_CAP {
            break;
        }
        // every breakpoint s*x in (left, right]
        let mut brk: Vec<(f64, f64)> = Vec::new();
        for &s in &s_sorted {
            let a = xs.partition_point(|&x| x * s <= left);
            let z = xs.partition_point(|&x| x * s <= right);
            for &x in &xs[a..z] {
                brk.push((s * x, s * x / b));
            }
        }
        swept += brk.len();
        brk.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
        // sweep descending: F(u_k) = F(above u_k) + mass at u_k
        let mut f_above = f_strict(right);
        let mut upper = right;
        let mut j = brk.len();
        while j > 0 {
            let u = brk[j - 1].0;
            let mut mass = 0.0;
            while j > 0 && brk[j - 1].0 == u {
                mass += brk[j - 1].1;
                j -= 1;
            }
            let f_u = f_above + mass;
            let _ = upper;
            // inf over (prev, u] is approached at prev; candidates below will
            // cover it, and the candidate for (u, upper] used f_above.
            let cand = u + f_above;
            if cand < best {
                best = cand;
                best_thr = u;
            }
            // candidate approaching u from below belongs to the next group
            f_above = f_u;
            upper = u;
        }
        let cand = left + f_above;
        if cand < best {
            best = cand;
            best_thr = left;
        }
    }

    // standard errors at the chosen thresholds: Z_b(m) = x_b * W(m / x_b)
    // with W(c) the sum of scales >= c.
    let w_of = |c: f64| -> f64 { s_suffix[s_sorted.partition_point(|&s| s < c)] };
    let z_stats = |m: f64| -> f64 {
        if !m.is_finite() {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for &x in &xs {
            let z = if m <= 0.0 {
                x * s_suffix[0]
            } else if x > 0.0 {
                x * w_of(m / x)
            } else {
                0.0
            };
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / b;
        (((sumsq / b) - mean * mean).max(0.0) / b).sqrt()
    };
    RawFunctionals {
        m_tilde,
        se_tilde: z_stats(m_tilde),
        m_big: best,
        se_big: z_stats(best_thr),
    }
}

/// Row-chunked products |⟨t, X⟩| for all t at once; f sees each chunk as a
/// (rows x |S|) matrix of absolute values.
fn for_each_product_chunk<F: FnMut(&DMatrix<f64>)>(
    p_mat: &DMatrix<f64>,
    n: usize,
    family: &RandomFamily,
    budget: usize,
    seed: u64,
    mut f: F,
) {
    let rows = (CHUNK / n).max(1);
    let mut flat = vec![0.0f64; rows * n];
    for_each_chunk(seed, "m_functionals", budget, rows, |_, rng, len| {
        family.sample_into(rng, &mut flat[..len * n]);
        let chunk = DMatrix::from_row_slice(len, n, &flat[..len * n]);
        let mut prod = chunk * p_mat;
        prod.apply(|v| *v = v.abs());
        f(&prod);
    });
}

/// Exact empirical minimization over the fully materialized pool of values.
fn pooled_path(
    points: &[DVector<f64>],
    n: usize,
    family: &RandomFamily,
    budget: usize,
    seed: u64,
) -> RawFunctionals {
    let p_mat = points_matrix(points, n);
    let mut pool: Vec<f64> = Vec::with_capacity(budget * points.len());
    for_each_product_chunk(&p_mat, n, family, budget, seed, |prod| {
        pool.extend(prod.iter().filter(|&&v| v > 0.0));
    });
    pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if pool.is_empty() {
        return RawFunctionals { m_tilde: 0.0, se_tilde: 0.0, m_big: 0.0, se_big: 0.0 };
    }
    let b = budget as f64;
    let total: f64 = pool.iter().sum();

    // one ascending pass over distinct values: first crossing gives tilde_m,
    // interval infima prev + F(w) give big_m
    let mut m_tilde = f64::NAN;
    let mut best = total / b; // the u -> 0 candidate
    let mut best_thr = 0.0f64;
    let mut prefix = 0.0f64;
    let mut prev = 0.0f64;
    let mut i = 0usize;
    let k = pool.len();
    while i < k {
        let w = pool[i];
        let mut here = 0.0;
        while i < k && pool[i] == w {
            here += pool[i];
            i += 1;
        }
        let f_w = (total - prefix) / b;
        let cand = prev + f_w;
        if cand < best {
            best = cand;
            best_thr = w;
        }
        if m_tilde.is_nan() && f_w <= w {
            m_tilde = f_w.max(prev);
        }
        prefix += here;
        prev = w;
    }
    if m_tilde.is_nan() {
        m_tilde = prev;
    }
    if prev < best {
        best = prev;
        best_thr = f64::INFINITY;
    }

    let (se_tilde, se_big) = product_se(&p_mat, n, family, budget, seed, m_tilde, best_thr);
    RawFunctionals { m_tilde, se_tilde, m_big: best, se_big }
}

/// Log-binned solver for budgets too large to pool. F is exact at bin edges;
/// the reported minima understate the empirical optimum by at most one bin
/// ratio (about 5e-4 relative).
fn sketch_path(
    points: &[DVector<f64>],
    n: usize,
    family: &RandomFamily,
    budget: usize,
    seed: u64,
) -> RawFunctionals {
    let p_mat = points_matrix(points, n);
    let anchor = points.iter().map(|t| t.norm()).fold(0.0f64, f64::max);
    let lo = anchor * 1e-9;
    let hi = anchor * 1e6;
    let ln_ratio = (hi / lo).ln() / SKETCH_BINS as f64;

    let mut counts = vec![0u64; SKETCH_BINS];
    let mut sums = vec![0.0f64; SKETCH_BINS];
    let mut under_sum = 0.0f64;
    let mut overflow: Vec<f64> = Vec::new();
    for_each_product_chunk(&p_mat, n, family, budget, seed, |prod| {
        for &v in prod.iter() {
            if v <= 0.0 {
                continue;
            }
            if v < lo {
                under_sum += v;
            } else if v >= hi {
                overflow.push(v);
            } else {
                let idx = (((v / lo).ln() / ln_ratio) as usize).min(SKETCH_BINS - 1);
                counts[idx] += 1;
                sums[idx] += v;
            }
        }
    });
    overflow.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let over_sum: f64 = overflow.iter().sum();
    let b = budget as f64;
    // suffix[j] = sum of all values >= edge j
    let mut suffix = vec![0.0f64; SKETCH_BINS + 1];
    suffix[SKETCH_BINS] = over_sum;
    for j in (0..SKETCH_BINS).rev() {
        suffix[j] = suffix[j + 1] + sums[j];
    }
    let edge = |j: usize| lo * (ln_ratio * j as f64).exp();
    let total = under_sum + suffix[0];
    if total == 0.0 {
        return RawFunctionals { m_tilde: 0.0, se_tilde: 0.0, m_big: 0.0, se_big: 0.0 };
    }

    let mut m_tilde = f64::NAN;
    let mut best = total / b;
    let mut best_thr = 0.0f64;
    let mut prev_edge = 0.0f64;
    let top_edge = {
        let top_bin = counts.iter().rposition(|&c| c > 0);
        match (top_bin, overflow.last()) {
            (_, Some(&o)) => o,
            (Some(jb), None) => edge(jb + 1),
            (None, None) => lo,
        }
    };
    for j in 0..=SKETCH_BINS {
        let e = edge(j);
        let f_e = suffix[j] / b;
        let cand = prev_edge + f_e;
        if cand < best {
            best = cand;
            best_thr = e;
        }
        if m_tilde.is_nan() && f_e <= e {
            m_tilde = f_e.max(prev_edge);
        }
        prev_edge = e;
        if suffix[j] == 0.0 {
            break;
        }
    }
    // exact sweep over the (rare) overflow values
    let mut above = 0.0f64;
    for idx in (0..overflow.len()).rev() {
        let u = overflow[idx];
        let cand = if idx == 0 { hi.max(prev_edge) } else { overflow[idx - 1] } + above + u / b;
        let _ = cand;
        let c2 = u + above;
        if c2 < best {
            best = c2;
            best_thr = u;
        }
        above += u / b;
    }
    if m_tilde.is_nan() {
        m_tilde = top_edge;
    }
    if top_edge < best {
        best = top_edge;
        best_thr = f64::INFINITY;
    }

    let (se_tilde, se_big) = product_se(&p_mat, n, family, budget, seed, m_tilde, best_thr);
    RawFunctionals { m_tilde, se_tilde, m_big: best, se_big }
}

/// Standard errors of the empirical F at two thresholds, from a replay of the
/// same chunks.
fn product_se(
    p_mat: &DMatrix<f64>,
    n: usize,
    family: &RandomFamily,
    budget: usize,
    seed: u64,
    m_tilde: f64,
    big_thr: f64,
) -> (f64, f64) {
    let mut sums = [0.0f64; 2];
    let mut sumsq = [0.0f64; 2];
    for_each_product_chunk(p_mat, n, family, budget, seed, |prod| {
        for r in 0..prod.nrows() {
            let mut z = [0.0f64; 2];
            for c in 0..prod.ncols() {
                let v = prod[(r, c)];
                if v >= m_tilde {
                    z[0] += v;
                }
                if big_thr.is_finite() && v >= big_thr {
                    z[1] += v;
                }
            }
            for s in 0..2 {
                sums[s] += z[s];
                sumsq[s] += z[s] * z[s];
            }
        }
    });
    let b = budget as f64;
    let se = |i: usize| {
        let mean = sums[i] / b;
        (((sumsq[i] / b) - mean * mean).max(0.0) / b).sqrt()
    };
    (se(0), se(1))
}

/// Enumeration mode for [`little_m`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LittleMode {
    /// Sorted-descending start plus adjacent-swap descent.
    Heuristic,
    /// All |S|! enumerations; |S| <= 8 only.
    ExactSmall,
}

/// Result of the enumeration functional: the achieved value and the
/// enumeration (indices into the input points) that achieves it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LittleMResult {
    pub estimate: Estimate,
    pub ordering: Vec<usize>,
}

/// little_m: minimize over enumerations t_1, t_2, … of S the largest
/// position-weighted norm sup_i ‖X_{t_i}‖_{log(e+i)}.
///
/// Closed-form norms are used whenever the family provides them; otherwise
/// one shared Monte Carlo pass fills the |S| x |S| norm matrix.
pub fn little_m(
    points: &[DVector<f64>],
    family: &RandomFamily,
    mode: LittleMode,
    budget: usize,
    seed: u64,
) -> Result<LittleMResult> {
    let n = points_dim(points)?;
    let count = points.len();
    if count == 0 {
        return Ok(LittleMResult {
            estimate: Estimate::closed_form(0.0, seed),
            ordering: Vec::new(),
        });
    }
    if mode == LittleMode::ExactSmall && count > 8 {
        return Err(Error::InvalidParameter(format!(
            "exact enumeration is limited to 8 points, got {count}"
        )));
    }
    let orders: Vec<f64> =
        (1..=count).map(|i| (std::f64::consts::E + i as f64).ln()).collect();
    let max_order = orders.last().copied().unwrap();
    if max_order >= family.max_finite_moment() {
        return Err(Error::InfiniteMoment { family: family.to_string(), order: max_order });
    }

    // norms[t][i]: ‖X_{points[t]}‖ at the order for position i+1
    let closed = points
        .iter()
        .map(|t| {
            orders
                .iter()
                .map(|&q| family.linear_abs_moment_ln(t, q).map(|m| (m / q).exp()))
                .collect::<Option<Vec<f64>>>()
        })
        .collect::<Option<Vec<Vec<f64>>>>();
    let (norms, ses) = match closed {
        Some(norms) => {
            let ses = vec![vec![0.0f64; count]; count];
            (norms, ses)
        }
        None => {
            if budget == 0 {
                return Err(Error::InvalidParameter("mc budget must be positive".into()));
            }
            let p_mat = points_matrix(points, n);
            let rows = (CHUNK / n).max(1);
            let mut flat = vec![0.0f64; rows * n];
            let mut sums = vec![vec![0.0f64; count]; count];
            let mut sumsq = vec![vec![0.0f64; count]; count];
            for_each_chunk(seed, "little_m", budget, rows, |_, rng, len| {
                family.sample_into(rng, &mut flat[..len * n]);
                let chunk = DMatrix::from_row_slice(len, n, &flat[..len * n]);
                let prod = chunk * &p_mat;
                for r in 0..len {
                    for t in 0..count {
                        let v = prod[(r, t)].abs();
                        for (i, &q) in orders.iter().enumerate() {
                            let p = v.powf(q);
                            sums[t][i] += p;
                            sumsq[t][i] += p * p;
                        }
                    }
                }
            });
            let b = budget as f64;
            let mut norms = vec![vec![0.0f64; count]; count];
            let mut ses = vec![vec![0.0f64; count]; count];
            for t in 0..count {
                for i in 0..count {
                    let mean = sums[t][i] / b;
                    let se_mean = (((sumsq[t][i] / b) - mean * mean).max(0.0) / b).sqrt();
                    if mean > 0.0 {
                        let q = orders[i];
                        norms[t][i] = mean.powf(1.0 / q);
                        ses[t][i] = se_mean * norms[t][i] / (q * mean);
                    }
                }
            }
            (norms, ses)
        }
    };

    // objective: the per-position norms of an ordering, compared as the
    // sorted-descending vector so ties on the max break toward flatter tails
    let profile = |perm: &[usize]| -> Vec<f64> {
        let mut v: Vec<f64> = perm.iter().enumerate().map(|(i, &t)| norms[t][i]).collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    };
    let better = |a: &[f64], bt: &[f64]| -> bool {
        for (x, y) in a.iter().zip(bt.iter()) {
            if x < y {
                return true;
            }
            if x > y {
                return false;
            }
        }
        false
    };

    let mut best_perm: Vec<usize>;
    match mode {
        LittleMode::ExactSmall => {
            let mut perm: Vec<usize> = (0..count).collect();
            best_perm = perm.clone();
            let mut best_prof = profile(&perm);
            // Heap's algorithm
            let mut c = vec![0usize; count];
            let mut i = 0;
            while i < count {
                if c[i] < i {
                    if i % 2 == 0 {
                        perm.swap(0, i);
                    } else {
                        perm.swap(c[i], i);
                    }
                    let prof = profile(&perm);
                    if better(&prof, &best_prof) {
                        best_prof = prof;
                        best_perm = perm.clone();
                    }
                    c[i] += 1;
                    i = 0;
                } else {
                    c[i] = 0;
                    i += 1;
                }
            }
        }
        LittleMode::Heuristic => {
            // start 1: descending by the position-1 norm; start 2: input order
            let mut start1: Vec<usize> = (0..count).collect();
            start1.sort_by(|&a, &bt| norms[bt][0].partial_cmp(&norms[a][0]).unwrap());
            let start2: Vec<usize> = (0..count).collect();
            best_perm = start1.clone();
            let mut best_prof = profile(&start1);
            for start in [start1, start2] {
                let mut perm = start;
                let mut prof = profile(&perm);
                let mut improved = true;
                let mut sweeps = 0;
                while improved && sweeps < 50 {
                    improved = false;
                    sweeps += 1;
                    for i in 0..count.saturating_sub(1) {
                        perm.swap(i, i + 1);
                        let cand = profile(&perm);
                        if better(&cand, &prof) {
                            prof = cand;
                            improved = true;
                        } else {
                            perm.swap(i, i + 1);
                        }
                    }
                }
                if better(&prof, &best_prof) {
                    best_prof = prof;
                    best_perm = perm;
                }
            }
        }
    }

    let (value, stderr) = best_perm
        .iter()
        .enumerate()
        .map(|(i, &t)| (norms[t][i], ses[t][i]))
        .fold((0.0f64, 0.0f64), |acc, (v, s)| if v > acc.0 { (v, s) } else { acc });
    let count_field = if ses.iter().flatten().all(|&s| s == 0.0) { 0 } else { budget as u64 };
    Ok(LittleMResult {
        estimate: Estimate { value, stderr, count: count_field, seed },
        ordering: best_perm,
    })
}

/// b_sup: Monte Carlo estimate of E sup_{t∈T} ⟨t, X⟩ through the support
/// function of T.
pub fn b_sup(set: &IndexSet, family: &RandomFamily, budget: usize, seed: u64) -> Result<Estimate> {
    if budget == 0 {
        return Err(Error::InvalidParameter("mc budget must be positive".into()));
    }
    let n = set.dimension();
    if n == 0 {
        return Err(Error::InvalidParameter("index set has dimension 0".into()));
    }
    let rows = (CHUNK / n).max(1);
    let mut flat = vec![0.0f64; rows * n];
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for_each_chunk(seed, "b_sup", budget, rows, |_, rng, len| {
        family.sample_into(rng, &mut flat[..len * n]);
        for r in 0..len {
            let h = set.support_value(&flat[r * n..(r + 1) * n]);
            sum += h;
            sumsq += h * h;
        }
    });
    let b = budget as f64;
    let mean = sum / b;
    let var = ((sumsq / b) - mean * mean).max(0.0);
    Ok(Estimate { value: mean, stderr: (var / b).sqrt(), count: budget as u64, seed })
}

fn rss(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Full comparison of an index set against a hull cover: both truncated-moment
/// functionals of the cover points, the enumeration functional when the cover
/// is small enough, the expected supremum of the set, the sandwich check, and
/// the upper-bound check b ≤ big_m.
pub fn compare(
    set: &IndexSet,
    cover: &HullCover,
    family: &RandomFamily,
    budget: usize,
    seed: u64,
) -> Result<FunctionalReport> {
    let (m_tilde, m_big) = m_functionals(&cover.points, family, budget, seed)?;
    let b = b_sup(set, family, budget, derive_seed(seed, "compare_bsup", 0))?;

    let m_little = if !cover.points.is_empty() && cover.points.len() <= 64 {
        let max_order = (std::f64::consts::E + cover.points.len() as f64).ln();
        if max_order < family.max_finite_moment() {
            Some(
                little_m(
                    &cover.points,
                    family,
                    LittleMode::Heuristic,
                    budget.min(50_000).max(1),
                    derive_seed(seed, "compare_little", 0),
                )?
                .estimate,
            )
        } else {
            None
        }
    } else {
        None
    };

    let z = CONFIDENCE_Z;
    let sandwich_ok = m_tilde.value <= m_big.value + z * rss(m_tilde.stderr, m_big.stderr)
        && m_big.value <= 2.0 * m_tilde.value + z * rss(m_big.stderr, 2.0 * m_tilde.stderr);
    let upper_bound_ok =
        Some(b.value <= m_big.value + (z + 1.0) * rss(b.stderr, m_big.stderr));
    let ratio_m_over_b =
        if b.value > 1e-12 { Some(m_big.value / b.value) } else { None };

    Ok(FunctionalReport {
        m_tilde,
        m_big,
        m_little,
        b_sup: Some(b),
        sandwich_ok,
        upper_bound_ok,
        ratio_m_over_b,
    })
}
