//! Experiment drivers behind the command line binary.
//!
//! Each named experiment produces a table of per-instance rows plus a summary
//! holding slope fits and measured constants, asserts its own invariants, and
//! can serialize to a JSON report plus a CSV table. Wall time is reported on
//! stderr only, so identical (config, seed) runs write byte-identical files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constructions::{
    auto_block_size, block_cover_b2, brute_force_gamma, ellipsoid_blocks, ellipsoid_cover,
    extract_cover_from_partition, gamma_partition, lq_cover, rotation_cover_with, RotationConfig,
};
use crate::distributions::RandomFamily;
use crate::error::{Error, Result};
use crate::functionals::{b_sup, little_m, m_functionals, Estimate, LittleMode};
use crate::geometry::{containment_probe, haar_orthogonal, HullCover, IndexSet, Provenance};
use crate::rng::{derive_seed, stream};

/// Confidence multiplier for the two-sided sandwich check.
const SANDWICH_Z: f64 = 3.0;
/// Confidence multiplier for the one-sided b ≤ M check.
const UPPER_Z: f64 = 4.0;
/// Keeping mc·|S| under this keeps the truncated-moment solver on its exact
/// pooled path for families without a scale identity.
const POOLED_EXACT: usize = 20_000_000;

/// The named experiment suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    B1,
    B2,
    Ellipsoid,
    Bq,
    StableCounterexample,
    Gamma,
    Sandwich,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ExperimentKind::B1 => "b1",
            ExperimentKind::B2 => "b2",
            ExperimentKind::Ellipsoid => "ellipsoid",
            ExperimentKind::Bq => "bq",
            ExperimentKind::StableCounterexample => "stable-counterexample",
            ExperimentKind::Gamma => "gamma",
            ExperimentKind::Sandwich => "sandwich",
        };
        f.write_str(name)
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "b1" => Ok(ExperimentKind::B1),
            "b2" => Ok(ExperimentKind::B2),
            "ellipsoid" => Ok(ExperimentKind::Ellipsoid),
            "bq" => Ok(ExperimentKind::Bq),
            "stable-counterexample" | "stable" => Ok(ExperimentKind::StableCounterexample),
            "gamma" => Ok(ExperimentKind::Gamma),
            "sandwich" => Ok(ExperimentKind::Sandwich),
            other => Err(Error::Parse(format!("unknown experiment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    /// Samples per Monte Carlo estimate.
    pub mc: usize,
    /// Directions per containment probe.
    pub directions: usize,
    /// Rotation trials per scored cover.
    pub trials: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { mc: 200_000, directions: 10_000, trials: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Family spec string; None means the experiment's default family list.
    pub family: Option<String>,
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
    pub budgets: Budgets,
    /// Base path for the report pair `<output>.json` and `<output>.csv`.
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter("dims must be nonempty and positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("seeds must be nonempty".into()));
        }
        if self.budgets.mc == 0 || self.budgets.directions == 0 || self.budgets.trials == 0 {
            return Err(Error::InvalidParameter("budgets must be positive".into()));
        }
        if let Some(f) = &self.family {
            f.parse::<RandomFamily>()?;
        }
        Ok(())
    }
}

/// The per-experiment default configuration the CLI starts from.
pub fn default_config(kind: ExperimentKind) -> ExperimentConfig {
    let budgets = Budgets::default();
    let (dims, seeds, family, budgets) = match kind {
        ExperimentKind::B1 => (vec![2, 8, 32, 128], vec![0], None, budgets),
        ExperimentKind::B2 => (
            vec![8, 16, 32, 64],
            vec![0],
            None,
            Budgets { mc: 20_000, trials: 16, ..budgets },
        ),
        ExperimentKind::Ellipsoid => (
            vec![8, 16, 32],
            (0..10).collect(),
            None,
            Budgets { mc: 50_000, trials: 6, ..budgets },
        ),
        ExperimentKind::Bq => {
            (vec![8, 32], vec![0], None, Budgets { mc: 100_000, trials: 6, ..budgets })
        }
        ExperimentKind::StableCounterexample => (
            vec![8, 16, 32, 64, 128],
            vec![0],
            Some("stable:1.5".to_string()),
            Budgets { mc: 400_000, ..budgets },
        ),
        ExperimentKind::Gamma => {
            (vec![8], (0..50).collect(), None, Budgets { mc: 50_000, ..budgets })
        }
        ExperimentKind::Sandwich => (vec![2, 4, 8], (0..10).collect(), None, budgets),
    };
    ExperimentConfig { experiment: kind, family, dims, seeds, budgets, output: None }
}

/// One instance of an experiment; every estimate in it is replayable from
/// (config, seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub label: String,
    pub family: String,
    pub n: usize,
    pub seed: u64,
    pub set_size: usize,
    pub b_sup: Option<f64>,
    pub b_stderr: Option<f64>,
    pub m_tilde: Option<f64>,
    pub m_tilde_stderr: Option<f64>,
    pub m_big: Option<f64>,
    pub m_big_stderr: Option<f64>,
    pub m_little: Option<f64>,
    pub gamma_upper: Option<f64>,
    pub worst_ratio: Option<f64>,
    pub ratio_m_over_b: Option<f64>,
    pub sandwich_ok: Option<bool>,
    pub upper_ok: Option<bool>,
    pub row_ok: bool,
    /// Console diagnostics only; never serialized, so reports stay
    /// byte-identical across replays.
    #[serde(skip)]
    pub runtime_ms: u64,
}

impl ExperimentRow {
    fn new(label: impl Into<String>, family: &RandomFamily, n: usize, seed: u64) -> Self {
        ExperimentRow {
            label: label.into(),
            family: family.to_string(),
            n,
            seed,
            set_size: 0,
            b_sup: None,
            b_stderr: None,
            m_tilde: None,
            m_tilde_stderr: None,
            m_big: None,
            m_big_stderr: None,
            m_little: None,
            gamma_upper: None,
            worst_ratio: None,
            ratio_m_over_b: None,
            sandwich_ok: None,
            upper_ok: None,
            row_ok: true,
            runtime_ms: 0,
        }
    }

    fn put_m(&mut self, mt: &Estimate, mb: &Estimate) {
        self.m_tilde = Some(mt.value);
        self.m_tilde_stderr = Some(mt.stderr);
        self.m_big = Some(mb.value);
        self.m_big_stderr = Some(mb.stderr);
    }

    fn put_b(&mut self, b: &Estimate) {
        self.b_sup = Some(b.value);
        self.b_stderr = Some(b.stderr);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub slopes: BTreeMap<String, f64>,
    pub constants: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub passed: bool,
}

impl ExperimentSummary {
    fn new() -> Self {
        ExperimentSummary {
            slopes: BTreeMap::new(),
            constants: BTreeMap::new(),
            notes: Vec::new(),
            passed: true,
        }
    }

    fn fail(&mut self, note: String) {
        self.passed = false;
        self.notes.push(note);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ExperimentRow>,
    pub summary: ExperimentSummary,
}

fn rss(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

fn sandwich_holds(mt: &Estimate, mb: &Estimate) -> bool {
    mt.value <= mb.value + SANDWICH_Z * rss(mt.stderr, mb.stderr)
        && mb.value <= 2.0 * mt.value + SANDWICH_Z * rss(mb.stderr, 2.0 * mt.stderr)
}

fn upper_holds(b: &Estimate, mb: &Estimate) -> bool {
    b.value <= mb.value + UPPER_Z * rss(b.stderr, mb.stderr)
}

/// Least-squares slope of ys against xs.
fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Sample budget handed to rotation scoring; a small slice of the mc budget
/// is enough to rank rotations.
fn score_budget(mc: usize) -> usize {
    (mc / 10).clamp(1024, 4096)
}

fn family_list(config: &ExperimentConfig) -> Result<Vec<RandomFamily>> {
    if let Some(spec) = &config.family {
        return Ok(vec![spec.parse()?]);
    }
    let specs: &[&str] = match config.experiment {
        ExperimentKind::B1 => &["gaussian", "rademacher", "weibull:0.5", "student:9"],
        ExperimentKind::B2 | ExperimentKind::Ellipsoid => &["gaussian", "student:9"],
        ExperimentKind::Bq => &["gaussian"],
        ExperimentKind::StableCounterexample => &["stable:1.5"],
        ExperimentKind::Gamma => &["gaussian"],
        ExperimentKind::Sandwich => &[
            "gaussian",
            "rademacher",
            "uniform",
            "weibull:0.5",
            "student:9",
            "stable:1.5",
            "twopoint:4:0.1",
        ],
    };
    specs.iter().map(|s| s.parse()).collect()
}

/// Runs an experiment suite and, when `config.output` is set, writes the
/// `<output>.json` / `<output>.csv` report pair.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let families = family_list(config)?;
    let (rows, summary) = match config.experiment {
        ExperimentKind::B1 => run_b1(config, &families)?,
        ExperimentKind::B2 => run_b2(config, &families)?,
        ExperimentKind::Ellipsoid => run_ellipsoid(config, &families)?,
        ExperimentKind::Bq => run_bq(config, &families)?,
        ExperimentKind::StableCounterexample => run_stable(config, &families)?,
        ExperimentKind::Gamma => run_gamma(config, &families)?,
        ExperimentKind::Sandwich => run_sandwich(config, &families)?,
    };
    let report = ExperimentReport { config: config.clone(), rows, summary };
    if let Some(base) = &config.output {
        write_report(&report, base)?;
    }
    Ok(report)
}

fn run_sandwich(
    config: &ExperimentConfig,
    families: &[RandomFamily],
) -> Result<(Vec<ExperimentRow>, ExperimentSummary)> {
    let mut rows = Vec::new();
    let mut idx = 0u64;
    for family in families {
        for &n in &config.dims {
            for &seed in &config.seeds {
                let t0 = Instant::now();
                let tag = derive_seed(seed, "sandwich_instance", idx);
                idx += 1;
                let mut rng = stream(tag, "sandwich_points", 0);
                let m = rng.gen_range(3..=10usize);
                let points: Vec<DVector<f64>> = (0..m)
                    .map(|_| {
                        let scale = rng.gen_range(-1.5f64..1.5).exp();
                        DVector::from_fn(n, |_, _| {
                            scale * rng.sample::<f64, _>(StandardNormal)
                        })
                    })
                    .collect();
                let (mt, mb) =
                    m_functionals(&points, family, config.budgets.mc, derive_seed(tag, "mc", 0))?;
                let ok = sandwich_holds(&mt, &mb);
                let mut row = ExperimentRow::new(format!("sandwich m={m}"), family, n, seed);
                row.set_size = m;
                row.put_m(&mt, &mb);
                row.sandwich_ok = Some(ok);
                row.row_ok = ok;
                row.runtime_ms = t0.elapsed().as_millis() as u64;
                rows.push(row);
            }
        }
    }
    let mut summary = ExperimentSummary::new();
    summary.constants.insert("instances".into(), rows.len() as f64);
    for row in &rows {
        if !row.row_ok {
            summary.fail(format!(
                "sandwich violated for {} n={} seed={}",
                row.family, row.n, row.seed
            ));
        }
    }
    Ok((rows, summary))
}

fn run_b1(
    config: &ExperimentConfig,
    families: &[RandomFamily],
) -> Result<(Vec<ExperimentRow>, ExperimentSummary)> {
    let mut rows = Vec::new();
    let mut summary = ExperimentSummary::new();
    let seed0 = config.seeds[0];
    let mut idx = 0u64;
    let mut worst = 0.0f64;
    for family in families {
        for &n in &config.dims {
            let t0 = Instant::now();
            let tag = derive_seed(seed0, "b1", idx);
            idx += 1;
            let points: Vec<DVector<f64>> = (0..n)
                .map(|i| {
                    let mut v = DVector::zeros(n);
                    v[i] = 1.0;
                    v
                })
                .collect();
            let cover = HullCover::new(
                DVector::zeros(n),
                points,
                Provenance::Canonical { label: "l1-vertices".into() },
                1.0,
            )?;
            let set = IndexSet::l1_ball(n, 1.0)?;
            let mc = config.budgets.mc.min(POOLED_EXACT / n.max(1)).max(1);
            let (mt, mb) = m_functionals(&cover.points, family, mc, derive_seed(tag, "m", 0))?;
            let b = b_sup(&set, family, mc, derive_seed(tag, "b", 0))?;
            let probe = containment_probe(
                &set,
                &cover,
                config.budgets.directions,
                derive_seed(tag, "probe", 0),
            )?;
            let ratio = mb.value / b.value;
            worst = worst.max(ratio);
            let up = upper_holds(&b, &mb);
            let ratio_ok = ratio <= 4.0 * 1.05;
            let probe_ok = probe.worst_ratio <= 1.0 + 1e-6;
            let mut row = ExperimentRow::new("b1", family, n, seed0);
            row.set_size = cover.points.len();
            row.put_m(&mt, &mb);
            row.put_b(&b);
            row.worst_ratio = Some(probe.worst_ratio);
            row.ratio_m_over_b = Some(ratio);
            row.upper_ok = Some(up);
            row.row_ok = up && ratio_ok && probe_ok;
            row.runtime_ms = t0.elapsed().as_millis() as u64;
            if !row.row_ok {
                summary.fail(format!(
                    "b1 {} n={}: ratio {ratio:.3}, probe {:.4}, upper {up}",
                    family, n, probe.worst_ratio
                ));
            }
            rows.push(row);
        }
    }
    summary.constants.insert("max_ratio_m_over_b".into(), worst);
    Ok((rows, summary))
}

fn run_b2(
    config: &ExperimentConfig,
    families: &[RandomFamily],
) -> Result<(Vec<ExperimentRow>, ExperimentSummary)> {
    let mut rows = Vec::new();
    let mut summary = ExperimentSummary::new();
    let seed0 = config.seeds[0];
    let mut idx = 0u64;
    let mut normalized: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for family in families {
        for &n in &config.dims {
            let t0 = Instant::now();
            let tag = derive_seed(seed0, "b2", idx);
            idx += 1;
            let rot = RotationConfig {
                trials: config.budgets.trials,
                ..RotationConfig::default()
            };
            let (cover, _diag) = rotation_cover_with(
                n,
                family,
                &rot,
                derive_seed(tag, "cover", 0),
                score_budget(config.budgets.mc),
            )?;
            let set = IndexSet::l2_ball(n, 1.0)?;
            let probe = containment_probe(
                &set,
                &cover,
                config.budgets.directions,
                derive_seed(tag, "probe", 0),
            )?;
            let (mt, mb) =
                m_functionals(&cover.points, family, config.budgets.mc, derive_seed(tag, "m", 0))?;
            let b = b_sup(&set, family, config.budgets.mc, derive_seed(tag, "b", 0))?;
            let size_ok = cover.points.len() <= 10 * n * n;
            let probe_ok = probe.worst_ratio <= 1.0 + 1e-2;
            let up = upper_holds(&b, &mb);
            normalized
                .entry(family.to_string())
                .or_default()
                .push((n, mb.value / (n as f64).sqrt()));
            let mut row = ExperimentRow::new("b2", family, n, seed0);
            row.set_size = cover.points.len();
            row.put_m(&mt, &mb);
            row.put_b(&b);
            row.worst_ratio = Some(probe.worst_ratio);
            row.ratio_m_over_b = Some(mb.value / b.value);
            row.upper_ok = Some(up);
            row.row_ok = size_ok && probe_ok && up;
            row.runtime_ms = t0.elapsed().as_millis() as u64;
            if !row.row_ok {
                summary.fail(format!(
                    "b2 {} n={}: |S|={} probe={:.4} upper={up}",
                    family,
                    n,
                    cover.points.len(),
                    probe.worst_ratio
                ));
            }
            rows.push(row);
        }
    }
    // boundedness of M/sqrt(n): no more than 3x its value at the smallest n
    for (fam, list) in &normalized {
        let base = list
            .iter()
            .min_by_key(|(n, _)| *n)
            .map(|&(_, v)| v)
            .unwrap_or(f64::NAN);
        let peak = list.iter().map(|&(_, v)| v).fold(0.0f64, f64::max);
        summary.constants.insert(format!("m_over_sqrt_n_base {fam}"), base);
        summary.constants.insert(format!("m_over_sqrt_n_peak {fam}"), peak);
        if !(peak <= 3.0 * base) {
            summary.fail(format!("b2 {fam}: M/sqrt(n) grew from {base:.3} to {peak:.3}"));
        }
    }
    Ok((rows, summary))
}

fn run_ellipsoid(
    config: &ExperimentConfig,
    families: &[RandomFamily],
) -> Result<(Vec<ExperimentRow>, ExperimentSummary)> {
    let mut rows = Vec::new();
    let mut summary = ExperimentSummary::new();
    let mut bands: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for family in families {
        for &n in &config.dims {
            for &seed in &config.seeds {
                let t0 = Instant::now();
                // the instance depends on (n, seed) only, so families share it
                let tag = derive_seed(seed, "ellipsoid_instance", n as u64);
                let u = haar_orthogonal(n, derive_seed(tag, "axes_frame", 0))?;
                let mut rng = stream(tag, "axes_lengths", 0);
                // axis profiles sit strictly inside dyadic levels after the
                // unit normalization, so no instance straddles a level
                // boundary and the block structure is stable: a round
                // cluster normalizes to 1/sqrt(n), which is mid-level
                // unless n is near a power of 4; those dims split into two
                // tiers one octave apart, with the tier count chosen to
                // push the cluster as far from the boundaries as possible
                let round_pos = (0.5 * (n as f64).log2()).fract();
                let hi = if (round_pos - 0.5).abs() <= 0.25 {
                    n
                } else {
                    let mut best = (n / 2, 0.0f64);
                    for m in (n / 4).max(1)..=(3 * n / 4) {
                        let pos = (0.5 * (((3 * m + n) as f64) / 4.0).log2()).fract();
                        let dist = pos.min(1.0 - pos);
                        if dist > best.1 {
                            best = (m, dist);
                        }
                    }
                    best.0
                };
                let scale = 2f64.powi(rng.gen_range(-2i32..=2));
                let axes = DVector::from_fn(n, |i, _| {
                    let tier = if i < hi && hi < n { 2.0 } else { 1.0 };
                    let jitter = rng.gen_range(-0.15f64..0.15);
                    scale * tier * 2f64.powf(jitter)
                });
                let set = IndexSet::ellipsoid(u.clone(), axes.clone())?;
                let dec = ellipsoid_blocks(&axes, &u)?;
                let axis_total: usize = dec.blocks.iter().map(|b| b.count).sum();
                let inv_ok = dec.weight <= 1.0 + 1e-12
                    && dec.dyadic_mass >= 1.0 - 1e-9
                    && dec.dyadic_mass < 4.0
                    && axis_total + dec.dropped == n
                    && dec.blocks.iter().all(|b| b.radius > 0.0 && b.radius <= 6.0 + 1e-9);
                let (cover, _diag) = ellipsoid_cover(
                    &set,
                    family,
                    config.budgets.trials,
                    derive_seed(tag, "cover", 0),
                    score_budget(config.budgets.mc),
                )?;
                let probe = containment_probe(
                    &set,
                    &cover,
                    config.budgets.directions,
                    derive_seed(tag, "probe", 0),
                )?;
                let (mt, mb) = m_functionals(
                    &cover.points,
                    family,
                    config.budgets.mc,
                    derive_seed(tag, "m", 0),
                )?;
                let b = b_sup(&set, family, config.budgets.mc, derive_seed(tag, "b", 0))?;
                let ratio = mb.value / b.value;
                let probe_ok = probe.worst_ratio <= 1.0 + 1e-2;
                let up = upper_holds(&b, &mb);
                let band = bands.entry(family.to_string()).or_insert((f64::INFINITY, 0.0));
                band.0 = band.0.min(ratio);
                band.1 = band.1.max(ratio);
                let mut row = ExperimentRow::new("ellipsoid", family, n, seed);
                row.set_size = cover.points.len();
                row.put_m(&mt, &mb);
                row.put_b(&b);
                row.worst_ratio = Some(probe.worst_ratio);
                row.ratio_m_over_b = Some(ratio);
                row.upper_ok = Some(up);
                row.row_ok = inv_ok && probe_ok && up;
                row.runtime_ms = t0.elapsed().as_millis() as u64;
                if !row.row_ok {
                    summary.fail(format!(
                        "ellipsoid {} n={} seed={}: invariants {inv_ok}, probe {:.4}, upper {up}",
                        family, n, seed, probe.worst_ratio
                    ));
                }
                rows.push(row);
            }
        }
    }
    for (fam, (lo, hi)) in &bands {
        summary.constants.insert(format!("ratio_min {fam}"), *lo);
        summary.constants.insert(format!("ratio_max {fam}"), *hi);
        if !(*hi <= 3.0 * *lo) {
            summary.fail(format!("ellipsoid {fam}: M/b band [{lo:.3}, {hi:.3}] wider than 3x"));
        }
    }
    Ok((rows, summary))
}

fn run_bq(
    config: &ExperimentConfig,
    families: &[RandomFamily],
) -> Result<(Vec<ExperimentRow>, ExperimentSummary)> {
    let qs = [3.0, 4.0, f64::INFINITY];
    let mut rows = Vec::new();
    let mut summary = ExperimentSummary::new();
    let seed0 = config.seeds[0];
    let mut idx = 0u64;
    let mut bands: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for family in families {
        for &q in &qs {
            for &n in &config.dims {
                let t0 = Instant::now();
                let tag = derive_seed(seed0, "bq", idx);
                idx += 1;
                let set = IndexSet::lq_ball(n, q, 1.0)?;
                let b = b_sup(&set, family, config.budgets.mc, derive_seed(tag, "b", 0))?;
                let qd = if q.is_infinite() { 1.0 } else { q / (q - 1.0) };
                let normalized = b.value / (n as f64).powf(1.0 / qd);
                let (cover, _emb, _diag) = lq_cover(
                    &DMatrix::identity(n, n),
                    q,
                    family,
                    config.budgets.trials,
                    derive_seed(tag, "cover", 0),
                    score_budget(config.budgets.mc),
                )?;
                let probe = containment_probe(
                    &set,
                    &cover,
                    config.budgets.directions,
                    derive_seed(tag, "probe", 0),
                )?;
                let (mt, mb) = m_functionals(
                    &cover.points,
                    family,
                    config.budgets.mc.min(POOLED_EXACT / cover.points.len().max(1)).max(1),
                    derive_seed(tag, "m", 0),
                )?;
                let probe_ok = probe.worst_ratio <= 1.0 + 1e-2;
                let up = upper_holds(&b, &mb);
                let band = bands.entry(family.to_string()).or_insert((f64::INFINITY, 0.0));
                band.0 = band.0.min(normalized);
                band.1 = band.1.max(normalized);
                let q_label = if q.is_infinite() { "inf".to_string() } else { format!("{q}") };
                let mut row = ExperimentRow::new(format!("bq q={q_label}"), family, n, seed0);
                row.set_size = cover.points.len();
                row.put_m(&mt, &mb);
                row.put_b(&b);
                row.worst_ratio = Some(probe.worst_ratio);
                row.ratio_m_over_b = Some(mb.value / b.value);
                row.upper_ok = Some(up);
                row.row_ok = probe_ok && up;
                row.runtime_ms = t0.elapsed().as_millis() as u64;
                if !row.row_ok {
                    summary.fail(format!(
                        "bq {} q={q_label} n={}: probe {:.4}, upper {up}",
                        family, n, probe.worst_ratio
                    ));
                }
                rows.push(row);
            }
        }
    }
    for (fam, (lo, hi)) in &bands {
        summary.constants.insert(format!("normalized_b_min {fam}"), *lo);
        summary.constants.insert(format!("normalized_b_max {fam}"), *hi);
        if !(*hi <= 2.0 * *lo) {
            summary.fail(format!(
                "bq {fam}: normalized b band [{lo:.3}, {hi:.3}] wider than 2x"
            ));
        }
    }
    Ok((rows, summary))
}

fn run_stable(
    config: &ExperimentConfig,
    families: &[RandomFamily],
) -> Result<(Vec<ExperimentRow>, ExperimentSummary)> {
    let family = &families[0];
    let spec = family.to_string();
    let p: f64 = spec
        .strip_prefix("stable:")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "the stable-counterexample experiment needs a stable family, got {spec}"
            ))
        })?;
    let seed0 = config.seeds[0];
    let mut rows = Vec::new();
    let mut summary = ExperimentSummary::new();
    let mut log_n = Vec::new();
    let mut log_b = Vec::new();
    let mut log_ratio = Vec::new();
    let mut b_last = f64::NAN;
    for &n in &config.dims {
        let t0 = Instant::now();
        let tag = derive_seed(seed0, "stable", n as u64);
        let set = IndexSet::l2_ball(n, 1.0)?;
        let b = b_sup(&set, family, config.budgets.mc, derive_seed(tag, "b", 0))?;
        let cover =
            block_cover_b2(n, auto_block_size(n, 2.0), 30_000, derive_seed(tag, "cover", 0))?;
        // one shared scalar seed across dims: the scale-family solver then
        // reuses identical draws, so slope noise largely cancels
        let (mt, mb) = m_functionals(
            &cover.points,
            family,
            config.budgets.mc,
            derive_seed(seed0, "stable_m", 0),
        )?;
        let ratio = mb.value / b.value;
        let up = upper_holds(&b, &mb);
        log_n.push((n as f64).ln());
        log_b.push(b.value.ln());
        log_ratio.push(ratio.ln());
        b_last = b.value;
        let mut row = ExperimentRow::new("stable", family, n, seed0);
        row.set_size = cover.points.len();
        row.put_m(&mt, &mb);
        row.put_b(&b);
        row.ratio_m_over_b = Some(ratio);
        row.upper_ok = Some(up);
        row.row_ok = up;
        row.runtime_ms = t0.elapsed().as_millis() as u64;
        if !up {
            summary.fail(format!("stable n={n}: b exceeded M"));
        }
        rows.push(row);
    }
    let slope_b = fit_slope(&log_n, &log_b);
    let slope_ratio = fit_slope(&log_n, &log_ratio);
    summary.slopes.insert("b_vs_n".into(), slope_b);
    summary.slopes.insert("m_over_b_vs_n".into(), slope_ratio);
    summary.constants.insert("stability".into(), p);
    summary.constants.insert("b_slope_target".into(), 1.0 / p);
    summary.constants.insert("ratio_slope_floor".into(), 1.0 / p - 0.5 - 0.1);
    if (slope_b - 1.0 / p).abs() > 0.08 {
        summary.fail(format!("stable: b slope {slope_b:.4} is not {:.4} ± 0.08", 1.0 / p));
    }
    if slope_ratio < 1.0 / p - 0.5 - 0.1 {
        summary.fail(format!(
            "stable: M/b slope {slope_ratio:.4} fell below {:.4}",
            1.0 / p - 0.5 - 0.1
        ));
    }
    // cross-check at the largest n: conditioning on either side of <G, X>
    // gives E|X|_2 = sqrt(pi/2) E|G|_p E|X_1| exactly
    if let (Some(&n_big), Some(m1)) =
        (config.dims.iter().max(), family.scalar_abs_moment(1.0))
    {
        let gauss: RandomFamily = "gaussian".parse()?;
        let dual = p / (p - 1.0);
        let gnorm = b_sup(
            &IndexSet::lq_ball(n_big, dual, 1.0)?,
            &gauss,
            config.budgets.mc.min(200_000),
            derive_seed(seed0, "stable_identity", 0),
        )?;
        let predicted = (std::f64::consts::PI / 2.0).sqrt() * gnorm.value * m1;
        summary.constants.insert("identity_ratio_at_max_n".into(), b_last / predicted);
    }
    Ok((rows, summary))
}

fn run_gamma(
    config: &ExperimentConfig,
    families: &[RandomFamily],
) -> Result<(Vec<ExperimentRow>, ExperimentSummary)> {
    let family = &families[0];
    let n_max = config.dims.iter().copied().max().unwrap_or(8).clamp(2, 8);
    let mut rows = Vec::new();
    let mut summary = ExperimentSummary::new();
    let mut c_max = 0.0f64;
    let mut brute_gap = 0.0f64;
    let budget = config.budgets.mc.min(50_000);
    for (i, &seed) in config.seeds.iter().enumerate() {
        let t0 = Instant::now();
        let tag = derive_seed(seed, "gamma_exp", i as u64);
        let mut rng = stream(tag, "gamma_points", 0);
        let n = rng.gen_range(2..=n_max);
        // every fifth instance is small enough to brute-force
        let m = if i % 5 == 0 { rng.gen_range(2..=5usize) } else { rng.gen_range(6..=32usize) };
        let scale = rng.gen_range(-1.0f64..1.0).exp();
        let points: Vec<DVector<f64>> = (0..m)
            .map(|_| DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let (tree, gamma_upper) = gamma_partition(&points, family, 6, tag, budget)?;
        let set = IndexSet::finite(points.clone())?;
        let b = b_sup(&set, family, budget, derive_seed(tag, "b", 0))?;
        // extraction verifies membership of every pairwise difference itself
        let cover = extract_cover_from_partition(&tree, family, budget)?;
        let lm = if cover.points.is_empty() {
            0.0
        } else {
            little_m(
                &cover.points,
                family,
                LittleMode::Heuristic,
                budget,
                derive_seed(tag, "little", 0),
            )?
            .estimate
            .value
        };
        let c_ratio = if gamma_upper > 0.0 { b.value / gamma_upper } else { 0.0 };
        c_max = c_max.max(c_ratio);
        let little_ok = lm <= 10.0 * gamma_upper + 1e-12;
        let brute_ok = if m <= 5 {
            let brute = brute_force_gamma(&points, family, tag, budget)?;
            let gap = (brute - gamma_upper).abs();
            brute_gap = brute_gap.max(gap);
            gap <= 1e-9 * brute.max(1.0)
        } else {
            true
        };
        let mut row = ExperimentRow::new(format!("gamma m={m}"), family, n, seed);
        row.set_size = cover.points.len();
        row.put_b(&b);
        row.gamma_upper = Some(gamma_upper);
        row.m_little = Some(lm);
        row.row_ok = little_ok && brute_ok;
        row.runtime_ms = t0.elapsed().as_millis() as u64;
        if !row.row_ok {
            summary.fail(format!(
                "gamma seed={seed}: little_m {lm:.4} vs 10*{gamma_upper:.4}, brute ok {brute_ok}"
            ));
        }
        rows.push(row);
    }
    summary.constants.insert("b_over_gamma_max".into(), c_max);
    summary.constants.insert("brute_force_gap_max".into(), brute_gap);
    if !(c_max <= 50.0) {
        summary.fail(format!("gamma: measured constant {c_max:.3} exceeds 50"));
    }
    Ok((rows, summary))
}

fn write_report(report: &ExperimentReport, base: &Path) -> Result<()> {
    if let Some(parent) = base.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let json_path = PathBuf::from(format!("{}.json", base.display()));
    let csv_path = PathBuf::from(format!("{}.csv", base.display()));
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(json_path, json)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &report.rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(Error::Io)?;
    // in-memory writer: into_inner only fails when flush does
    let bytes = writer.into_inner().expect("flushed csv writer");
    std::fs::write(csv_path, bytes)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

/// Fixed-width console rendering of a report.
pub fn print_report(report: &ExperimentReport) {
    println!(
        "{:<16} {:<14} {:>4} {:>6} {:>10} {:>10} {:>10} {:>9} {:>9} {:>8} {:>7} {:>5}",
        "label", "family", "n", "|S|", "b", "m_tilde", "m_big", "m_little", "gamma", "probe", "M/b", "ok"
    );
    for row in &report.rows {
        println!(
            "{:<16} {:<14} {:>4} {:>6} {:>10} {:>10} {:>10} {:>9} {:>9} {:>8} {:>7} {:>5}",
            row.label,
            row.family,
            row.n,
            row.set_size,
            fmt_opt(row.b_sup),
            fmt_opt(row.m_tilde),
            fmt_opt(row.m_big),
            fmt_opt(row.m_little),
            fmt_opt(row.gamma_upper),
            fmt_opt(row.worst_ratio),
            fmt_opt(row.ratio_m_over_b),
            if row.row_ok { "ok" } else { "FAIL" }
        );
    }
    for (name, value) in &report.summary.slopes {
        println!("slope {name} = {value:.4}");
    }
    for (name, value) in &report.summary.constants {
        println!("const {name} = {value:.4}");
    }
    for note in &report.summary.notes {
        println!("note: {note}");
    }
    println!(
        "experiment {}: {}",
        report.config.experiment,
        if report.summary.passed { "PASS" } else { "FAIL" }
    );
    let total_ms: u64 = report.rows.iter().map(|r| r.runtime_ms).sum();
    eprintln!("total row compute time {:.1}s", total_ms as f64 / 1e3);
}

/// Parses the index-set shorthand used by the CLI flags: `l1:N`, `l2:N`,
/// `lq:Q:N` (Q may be `inf`), `ellipsoid:A1,A2,...`, or `file:PATH` for a
/// serialized set.
pub fn parse_set_spec(spec: &str) -> Result<IndexSet> {
    let parse_n = |s: &str| -> Result<usize> {
        s.parse::<usize>().map_err(|_| Error::Parse(format!("bad dimension `{s}`")))
    };
    if let Some(rest) = spec.strip_prefix("l1:") {
        return IndexSet::l1_ball(parse_n(rest)?, 1.0);
    }
    if let Some(rest) = spec.strip_prefix("l2:") {
        return IndexSet::l2_ball(parse_n(rest)?, 1.0);
    }
    if let Some(rest) = spec.strip_prefix("lq:") {
        let (q_str, n_str) = rest
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected lq:Q:N, got `{spec}`")))?;
        let q = if q_str == "inf" {
            f64::INFINITY
        } else {
            q_str.parse::<f64>().map_err(|_| Error::Parse(format!("bad order `{q_str}`")))?
        };
        return IndexSet::lq_ball(parse_n(n_str)?, q, 1.0);
    }
    if let Some(rest) = spec.strip_prefix("ellipsoid:") {
        let axes = rest
            .split(',')
            .map(|a| a.parse::<f64>().map_err(|_| Error::Parse(format!("bad axis `{a}`"))))
            .collect::<Result<Vec<f64>>>()?;
        return IndexSet::ellipsoid_diag(&axes);
    }
    if let Some(path) = spec.strip_prefix("file:") {
        return IndexSet::load(Path::new(path));
    }
    Err(Error::Parse(format!(
        "unknown set spec `{spec}`; use l1:N, l2:N, lq:Q:N, ellipsoid:A1,A2,..., or file:PATH"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_round_trip() {
        for kind in [
            ExperimentKind::B1,
            ExperimentKind::B2,
            ExperimentKind::Ellipsoid,
            ExperimentKind::Bq,
            ExperimentKind::StableCounterexample,
            ExperimentKind::Gamma,
            ExperimentKind::Sandwich,
        ] {
            let name = kind.to_string();
            assert_eq!(name.parse::<ExperimentKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{name}\""));
        }
    }

    #[test]
    fn set_specs_parse() {
        assert_eq!(parse_set_spec("l2:5").unwrap().dimension(), 5);
        assert_eq!(parse_set_spec("l1:3").unwrap().dimension(), 3);
        match parse_set_spec("lq:inf:4").unwrap() {
            IndexSet::LqBall { dim, q, .. } => {
                assert_eq!(dim, 4);
                assert!(q.is_infinite());
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(parse_set_spec("ellipsoid:1,0.5,0.25").unwrap().dimension(), 3);
        assert!(parse_set_spec("l2:x").is_err());
        assert!(parse_set_spec("banana").is_err());
    }

    #[test]
    fn slope_fit_recovers_an_exact_line() {
        let xs: Vec<f64> = (1..=6).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.5 * x - 2.0).collect();
        assert!((fit_slope(&xs, &ys) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn tiny_sandwich_experiment_passes_and_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("report");
        let config = ExperimentConfig {
            experiment: ExperimentKind::Sandwich,
            family: Some("rademacher".into()),
            dims: vec![3],
            seeds: vec![1, 2],
            budgets: Budgets { mc: 4_000, directions: 100, trials: 1 },
            output: Some(base.clone()),
        };
        let report = run(&config).unwrap();
        assert!(report.summary.passed);
        assert_eq!(report.rows.len(), 2);
        let json1 = std::fs::read(format!("{}.json", base.display())).unwrap();
        let csv1 = std::fs::read(format!("{}.csv", base.display())).unwrap();
        run(&config).unwrap();
        let json2 = std::fs::read(format!("{}.json", base.display())).unwrap();
        let csv2 = std::fs::read(format!("{}.csv", base.display())).unwrap();
        assert_eq!(json1, json2);
        assert_eq!(csv1, csv2);
        assert!(!csv1.is_empty());
    }

    #[test]
    fn default_configs_are_valid() {
        for kind in [
            ExperimentKind::B1,
            ExperimentKind::B2,
            ExperimentKind::Ellipsoid,
            ExperimentKind::Bq,
            ExperimentKind::StableCounterexample,
            ExperimentKind::Gamma,
            ExperimentKind::Sandwich,
        ] {
            default_config(kind).validate().unwrap();
        }
    }
}
