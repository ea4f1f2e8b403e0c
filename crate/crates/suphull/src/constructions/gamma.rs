//! Admissible partition trees over finite index sets, the chaining functional
//! they certify, and extraction of hull covers from a finished tree.

use std::cell::RefCell;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_matrix, RandomFamily};
use crate::error::{Error, Result};
use crate::geometry::{member_abs_hull, HullCover, Provenance};
use crate::rng::{derive_seed, stream};

/// Hard cap on the index set size for partitioning.
pub const MAX_GAMMA_POINTS: usize = 512;
/// Cap when distances must be estimated by Monte Carlo.
pub const MAX_GAMMA_POINTS_MC: usize = 64;
/// Up to this many points the first split is exhaustive rather than greedy.
const EXHAUSTIVE_LIMIT: usize = 5;
/// Extraction takes no seed of its own; its Monte Carlo norms and pair
/// sampling key off this fixed stream.
const EXTRACT_SEED: u64 = 0x6578747261637421;
/// Index blocks are padded to their full proof width up to this size.
const PAD_LIMIT: usize = 256;

/// N_n = 2^(2^n), saturating once it no longer constrains anything.
fn admissible_cap(level: u32) -> usize {
    if level >= 6 {
        return usize::MAX;
    }
    1usize << (1u32 << level)
}

/// Smallest level whose cap admits one cell per point (level 0 is the root).
fn level_for_singletons(m: usize) -> usize {
    if m <= 1 {
        return 0;
    }
    let mut level = 1u32;
    while admissible_cap(level) < m {
        level += 1;
    }
    level as usize
}

/// One cell of a partition level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Point indices in the cell, ascending.
    pub indices: Vec<usize>,
    /// Representative point index (the chaining projection).
    pub rep: usize,
    /// Cell index in the previous level; None for the root.
    pub parent: Option<usize>,
    /// Diameter of the cell under the level's norm order 2^n.
    pub diameter: f64,
}

/// A fully refined admissible partition tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    pub points: Vec<DVector<f64>>,
    /// levels[n] lists the cells of the level-n partition; levels[0] is the
    /// single root cell.
    pub levels: Vec<Vec<Cell>>,
    /// assignments[n][i] is the cell index of point i at level n.
    pub assignments: Vec<Vec<usize>>,
}

impl PartitionTree {
    /// Sum over levels of the cell diameter along one point's chain.
    pub fn chain_sum(&self, point: usize) -> f64 {
        self.levels
            .iter()
            .zip(self.assignments.iter())
            .map(|(cells, assign)| cells[assign[point]].diameter)
            .sum()
    }
}

enum Backend {
    /// Scale families: pairwise scale matrix times a per-order constant.
    Scale { scales: Vec<f64>, consts: Vec<f64> },
    /// Everything else: per-sample linear values, one column per point, with
    /// lazily filled distance matrices per order.
    Mc { projected: DMatrix<f64>, cache: RefCell<BTreeMap<u32, Vec<f64>>> },
}

/// Pairwise norms ‖X_s - X_t‖ at the dyadic orders 2^n.
struct NormEngine {
    m: usize,
    backend: Backend,
}

impl NormEngine {
    fn new(
        points: &[DVector<f64>],
        family: &RandomFamily,
        budget: usize,
        seed: u64,
        max_exponent: u32,
    ) -> Result<Self> {
        let m = points.len();
        let max_order = 2f64.powi(max_exponent as i32);
        if family.max_finite_moment() <= max_order {
            return Err(Error::InfiniteMoment { family: family.to_string(), order: max_order });
        }
        if family.linear_scale(&points[0]).is_some() {
            let mut scales = vec![0.0f64; m * m];
            for i in 0..m {
                for j in 0..i {
                    let s = family
                        .linear_scale(&(&points[i] - &points[j]))
                        .expect("scale family stopped being one");
                    scales[i * m + j] = s;
                    scales[j * m + i] = s;
                }
            }
            let consts = (0..=max_exponent)
                .map(|e| {
                    let k = 2f64.powi(e as i32);
                    family
                        .scalar_abs_moment_ln(k)
                        .map(|ln| (ln / k).exp())
                        .ok_or(Error::InfiniteMoment { family: family.to_string(), order: k })
                })
                .collect::<Result<Vec<f64>>>()?;
            return Ok(NormEngine { m, backend: Backend::Scale { scales, consts } });
        }
        if m > MAX_GAMMA_POINTS_MC {
            return Err(Error::InvalidParameter(format!(
                "{m} points need Monte Carlo norms; the cap there is {MAX_GAMMA_POINTS_MC}"
            )));
        }
        if budget == 0 {
            return Err(Error::InvalidParameter("norm budget must be positive".into()));
        }
        let n = points[0].len();
        let samples = sample_matrix(family, n, budget, derive_seed(seed, "gamma_norms", 0))?;
        let point_mat = DMatrix::from_columns(points);
        let projected = samples * point_mat;
        Ok(NormEngine { m, backend: Backend::Mc { projected, cache: RefCell::new(BTreeMap::new()) } })
    }

    fn dist(&self, i: usize, j: usize, exponent: u32) -> f64 {
        if i == j {
            return 0.0;
        }
        match &self.backend {
            Backend::Scale { scales, consts } => {
                scales[i * self.m + j] * consts[exponent as usize]
            }
            Backend::Mc { projected, cache } => {
                let mut cache = cache.borrow_mut();
                let mat = cache
                    .entry(exponent)
                    .or_insert_with(|| mc_distance_matrix(projected, exponent));
                mat[i * self.m + j]
            }
        }
    }

    fn diameter(&self, indices: &[usize], exponent: u32) -> f64 {
        let mut d = 0.0f64;
        for (pos, &a) in indices.iter().enumerate() {
            for &b in &indices[..pos] {
                d = d.max(self.dist(a, b, exponent));
            }
        }
        d
    }

    /// Index minimizing the eccentricity within `indices`; ties go to the
    /// earliest index.
    fn center(&self, indices: &[usize], exponent: u32) -> usize {
        let mut best = indices[0];
        let mut best_ecc = f64::INFINITY;
        for &i in indices {
            let ecc =
                indices.iter().map(|&j| self.dist(i, j, exponent)).fold(0.0f64, f64::max);
            if ecc < best_ecc {
                best_ecc = ecc;
                best = i;
            }
        }
        best
    }
}

fn mc_distance_matrix(projected: &DMatrix<f64>, exponent: u32) -> Vec<f64> {
    let m = projected.ncols();
    let rows = projected.nrows();
    let order = 1i32 << exponent;
    let mut out = vec![0.0f64; m * m];
    for i in 0..m {
        for j in 0..i {
            let mut acc = 0.0f64;
            for r in 0..rows {
                acc += (projected[(r, i)] - projected[(r, j)]).abs().powi(order);
            }
            let d = (acc / rows as f64).powf(1.0 / order as f64);
            out[i * m + j] = d;
            out[j * m + i] = d;
        }
    }
    out
}

/// Greedy admissible partition of a finite index set, with the certified
/// upper bound sup_t sum_n diam(A_n(t)) it produces.
///
/// Cells split by farthest-point clustering under the level's norm order,
/// each level keeping at most 2^(2^n) cells; for five or fewer points the
/// first split is exhaustive instead, which makes it optimal outright. The
/// tree always refines to singletons, and `max_levels` must allow that.
pub fn gamma_partition(
    points: &[DVector<f64>],
    family: &RandomFamily,
    max_levels: usize,
    seed: u64,
    budget: usize,
) -> Result<(PartitionTree, f64)> {
    let m = points.len();
    if m == 0 {
        return Err(Error::InvalidParameter("partition needs at least one point".into()));
    }
    if m > MAX_GAMMA_POINTS {
        return Err(Error::InvalidParameter(format!(
            "{m} points exceed the partition cap {MAX_GAMMA_POINTS}"
        )));
    }
    let n = points[0].len();
    for p in points {
        if p.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: p.len() });
        }
    }
    let singleton_level = level_for_singletons(m);
    if singleton_level > max_levels {
        return Err(Error::InvalidParameter(format!(
            "max_levels = {max_levels} cannot refine {m} points to singletons; need {singleton_level}"
        )));
    }
    let engine = NormEngine::new(points, family, budget, seed, singleton_level as u32)?;

    let all: Vec<usize> = (0..m).collect();
    let root_rep = engine.center(&all, 0);
    let root_diam = engine.diameter(&all, 0);
    let mut levels =
        vec![vec![Cell { indices: all, rep: root_rep, parent: None, diameter: root_diam }]];
    let mut assignments = vec![vec![0usize; m]];

    let mut exponent = 1u32;
    while levels.last().unwrap().iter().any(|c| c.indices.len() > 1) {
        let (cells, assign) = if exponent == 1 && m <= EXHAUSTIVE_LIMIT {
            exhaustive_first_split(&engine, m, root_rep)
        } else {
            greedy_level(&engine, levels.last().unwrap(), exponent, m)
        };
        debug_assert!(cells.len() <= admissible_cap(exponent));
        levels.push(cells);
        assignments.push(assign);
        exponent += 1;
    }

    let tree = PartitionTree { points: points.to_vec(), levels, assignments };
    let gamma_upper = (0..m).map(|i| tree.chain_sum(i)).fold(0.0f64, f64::max);
    Ok((tree, gamma_upper))
}

fn greedy_level(
    engine: &NormEngine,
    prev: &[Cell],
    exponent: u32,
    m: usize,
) -> (Vec<Cell>, Vec<usize>) {
    let cap_total = admissible_cap(exponent);
    let mut cells: Vec<Cell> = Vec::new();
    let mut assign = vec![0usize; m];
    for (parent_idx, cell) in prev.iter().enumerate() {
        let cap = if cap_total >= m {
            cell.indices.len()
        } else {
            (cap_total / prev.len()).max(1)
        };
        for (indices, rep) in gonzalez_split(engine, &cell.indices, cell.rep, cap, exponent) {
            let diameter = engine.diameter(&indices, exponent);
            let cell_idx = cells.len();
            for &i in &indices {
                assign[i] = cell_idx;
            }
            cells.push(Cell { indices, rep, parent: Some(parent_idx), diameter });
        }
    }
    (cells, assign)
}

/// Farthest-point clustering seeded at the parent representative. Returns
/// (indices, rep) pairs; ties in both the farthest choice and the assignment
/// go to the earliest index, so the split is deterministic.
fn gonzalez_split(
    engine: &NormEngine,
    indices: &[usize],
    start: usize,
    cap: usize,
    exponent: u32,
) -> Vec<(Vec<usize>, usize)> {
    let mut centers = vec![start];
    while centers.len() < cap {
        let mut far_d = 0.0f64;
        let mut far_i = None;
        for &i in indices {
            let d = centers
                .iter()
                .map(|&c| engine.dist(i, c, exponent))
                .fold(f64::INFINITY, f64::min);
            if d > far_d {
                far_d = d;
                far_i = Some(i);
            }
        }
        match far_i {
            Some(i) => centers.push(i),
            None => break,
        }
    }
    let mut parts: Vec<(Vec<usize>, usize)> =
        centers.iter().map(|&c| (Vec::new(), c)).collect();
    for &i in indices {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (ci, &c) in centers.iter().enumerate() {
            let d = engine.dist(i, c, exponent);
            if d < best_d {
                best_d = d;
                best = ci;
            }
        }
        parts[best].0.push(i);
    }
    // duplicate points can strand a center with an empty part
    parts.retain(|(p, _)| !p.is_empty());
    parts
}

/// All partitions of {0..m-1} into at most `cap` parts, as restricted-growth
/// strings in canonical order.
fn restricted_growth_strings(m: usize, cap: usize) -> Vec<Vec<usize>> {
    fn rec(
        pos: usize,
        max_used: usize,
        cap: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        let limit = (max_used + 1).min(cap - 1);
        for label in 0..=limit {
            cur[pos] = label;
            rec(pos + 1, max_used.max(label), cap, cur, out);
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0usize; m];
    rec(1, 0, cap, &mut cur, &mut out);
    out
}

/// Minimizes the worst level-1 cell diameter over every admissible first
/// split. For m ≤ 5 the deeper levels refine to singletons for free, so this
/// split is globally optimal.
fn exhaustive_first_split(
    engine: &NormEngine,
    m: usize,
    root_rep: usize,
) -> (Vec<Cell>, Vec<usize>) {
    let cap = admissible_cap(1).min(m);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for labels in restricted_growth_strings(m, cap) {
        let parts = labels.iter().copied().max().unwrap_or(0) + 1;
        let mut worst = 0.0f64;
        for part in 0..parts {
            let indices: Vec<usize> =
                (0..m).filter(|&i| labels[i] == part).collect();
            worst = worst.max(engine.diameter(&indices, 1));
        }
        if best.as_ref().is_none_or(|(w, _)| worst < *w) {
            best = Some((worst, labels));
        }
    }
    let (_, labels) = best.expect("at least one partition exists");
    let parts = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut cells = Vec::new();
    let mut assign = vec![0usize; m];
    for part in 0..parts {
        let indices: Vec<usize> = (0..m).filter(|&i| labels[i] == part).collect();
        let rep = if indices.contains(&root_rep) {
            root_rep
        } else {
            engine.center(&indices, 1)
        };
        let diameter = engine.diameter(&indices, 1);
        let cell_idx = cells.len();
        for &i in &indices {
            assign[i] = cell_idx;
        }
        cells.push(Cell { indices, rep, parent: Some(0), diameter });
    }
    (cells, assign)
}

/// Direct minimum of the chaining sum over every admissible partition, for
/// five or fewer points. Independent of the greedy code path on purpose.
pub fn brute_force_gamma(
    points: &[DVector<f64>],
    family: &RandomFamily,
    seed: u64,
    budget: usize,
) -> Result<f64> {
    let m = points.len();
    if m == 0 || m > EXHAUSTIVE_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "brute force handles 1..={EXHAUSTIVE_LIMIT} points, got {m}"
        )));
    }
    let engine =
        NormEngine::new(points, family, budget, seed, level_for_singletons(m) as u32)?;
    if m == 1 {
        return Ok(0.0);
    }
    let all: Vec<usize> = (0..m).collect();
    let d0 = engine.diameter(&all, 0);
    let labels_cap = admissible_cap(1).min(m);
    let mut best = f64::INFINITY;
    // plain label vectors; relabelings revisit partitions, which is harmless
    for code in 0..labels_cap.pow(m as u32) {
        let mut worst = 0.0f64;
        for part in 0..labels_cap {
            let indices: Vec<usize> = (0..m)
                .filter(|&i| (code / labels_cap.pow(i as u32)) % labels_cap == part)
                .collect();
            if indices.len() > 1 {
                worst = worst.max(engine.diameter(&indices, 1));
            }
        }
        best = best.min(d0 + worst);
    }
    Ok(best)
}

/// Turns a finished partition tree into a hull cover of the difference set
/// T - T.
///
/// Each cell contributes the increment between its representative and its
/// parent's, normalized at order 2^(n+1); telescoping any two chains shows
/// every pairwise difference lies in R·conv(S ∪ -S) with
/// R = 2·sup_t sum_n ‖X_(pi_n(t)) - X_(pi_(n-1)(t))‖_(2^(n+1)). Points keep
/// the proof's block layout: level n occupies one index block of width
/// 2^(2^n) (padded by recycling increments, up to width 256), so the
/// enumeration itself witnesses ‖X_(s_k)‖_(log(e+k)) ≤ R. Membership of every
/// pairwise difference is verified before the cover is returned.
pub fn extract_cover_from_partition(
    tree: &PartitionTree,
    family: &RandomFamily,
    budget: usize,
) -> Result<HullCover> {
    let m = tree.points.len();
    if m == 0 || tree.levels.is_empty() {
        return Err(Error::InvalidParameter("partition tree is empty".into()));
    }
    let top = tree.levels.len() - 1;
    if tree.assignments.len() != tree.levels.len() {
        return Err(Error::InvalidParameter("tree assignments do not match its levels".into()));
    }
    if tree.levels[top].iter().any(|c| c.indices.len() > 1) {
        return Err(Error::InvalidParameter(
            "tree must be refined to singleton cells before extraction".into(),
        ));
    }
    let n = tree.points[0].len();
    let engine =
        NormEngine::new(&tree.points, family, budget, EXTRACT_SEED, top as u32 + 1)?;

    let mut level_incs: Vec<Vec<DVector<f64>>> = vec![Vec::new(); top + 1];
    let mut cell_weight: Vec<Vec<f64>> =
        tree.levels.iter().map(|cells| vec![0.0f64; cells.len()]).collect();
    for level in 1..=top {
        for (ci, cell) in tree.levels[level].iter().enumerate() {
            let parent = cell.parent.ok_or_else(|| {
                Error::InvalidParameter("non-root cell is missing its parent".into())
            })?;
            let parent_rep = tree.levels[level - 1][parent].rep;
            if cell.rep == parent_rep {
                continue;
            }
            let w = &tree.points[cell.rep] - &tree.points[parent_rep];
            if w.iter().all(|v| *v == 0.0) {
                continue;
            }
            let d = engine.dist(cell.rep, parent_rep, level as u32 + 1);
            if !(d > 0.0) {
                return Err(Error::FailedAssertion {
                    name: "extract_increment_norm".into(),
                    detail: format!("nonzero increment with vanishing norm at level {level}"),
                });
            }
            cell_weight[level][ci] = d;
            level_incs[level].push(w.unscale(d));
        }
    }

    let sup_weight = (0..m)
        .map(|i| {
            (1..=top)
                .map(|level| cell_weight[level][tree.assignments[level][i]])
                .sum::<f64>()
        })
        .fold(0.0f64, f64::max);
    let radius = 2.0 * sup_weight;

    let mut ordered: Vec<DVector<f64>> = Vec::new();
    if radius > 0.0 {
        // the level-0 slot takes the first increment; anything normalized at
        // a higher order satisfies the L¹ bound that slot needs
        let first = level_incs
            .iter()
            .find_map(|v| v.first())
            .cloned()
            .expect("radius > 0 implies an increment exists");
        ordered.push(first);
        for (level, incs) in level_incs.iter().enumerate().skip(1) {
            if incs.is_empty() {
                continue;
            }
            let cap = admissible_cap(level as u32);
            debug_assert!(incs.len() <= cap);
            if cap <= PAD_LIMIT {
                for j in 0..cap {
                    ordered.push(incs[j % incs.len()].clone());
                }
            } else {
                ordered.extend(incs.iter().cloned());
            }
        }
        for p in &mut ordered {
            *p *= radius;
        }
    }

    let cover = HullCover::new(
        DVector::zeros(n),
        ordered,
        Provenance::GammaExtract { levels: top, radius },
        radius,
    )?;

    // verify membership of the pairwise differences
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    if m <= 64 {
        for i in 0..m {
            for j in 0..i {
                pairs.push((i, j));
            }
        }
    } else {
        let mut rng = stream(EXTRACT_SEED, "extract_pairs", 0);
        while pairs.len() < 2_000 {
            let i = rng.gen_range(0..m);
            let j = rng.gen_range(0..m);
            if i != j {
                pairs.push((i, j));
            }
        }
    }
    for (i, j) in pairs {
        let w = &tree.points[i] - &tree.points[j];
        if member_abs_hull(&w, &cover.points, 1e-6)?.is_none() {
            return Err(Error::FailedAssertion {
                name: "extract_membership".into(),
                detail: format!("difference of points {i} and {j} escapes the extracted hull"),
            });
        }
    }
    Ok(cover)
}
