//! Index sets, hull covers, absolute convex hulls, and containment checks.
//!
//! The central containment question is whether T - t0 lies inside
//! conv(S ∪ -S) for a finite S. Membership of a single point is decided by a
//! small linear program (minimize the coefficient l1 norm), and containment of
//! a whole set is checked exactly through its extreme points when those are
//! enumerable, plus a randomized support-function probe that works for any
//! set.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{for_each_chunk, stream, CHUNK};

/// Serialize a norm order that may be +∞ as the string "inf".
mod q_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if q.is_finite() {
            q.serialize(s)
        } else {
            "inf".serialize(s)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrStr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match NumOrStr::deserialize(d)? {
            NumOrStr::Num(q) => Ok(q),
            NumOrStr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            NumOrStr::Str(s) => Err(serde::de::Error::custom(format!("bad norm order `{s}`"))),
        }
    }
}

/// A bounded index set T in R^n, described well enough to evaluate its
/// support function and, where possible, enumerate its extreme points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "kebab-case")]
pub enum IndexSet {
    L2Ball {
        dim: usize,
        radius: f64,
    },
    L1Ball {
        dim: usize,
        radius: f64,
    },
    LqBall {
        dim: usize,
        #[serde(with = "q_serde")]
        q: f64,
        radius: f64,
    },
    /// {x : Σ ⟨x,uᵢ⟩²/aᵢ² ≤ 1}: orthonormal axes u_i with semi-axes a_i.
    Ellipsoid {
        u: DMatrix<f64>,
        axes: DVector<f64>,
    },
    FinitePointSet {
        points: Vec<DVector<f64>>,
    },
    /// The image A·B_q^m of a unit q-ball.
    LinearImageLq {
        matrix: DMatrix<f64>,
        #[serde(with = "q_serde")]
        q: f64,
    },
}

fn check_dim_radius(dim: usize, radius: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    Ok(())
}

impl IndexSet {
    pub fn l2_ball(dim: usize, radius: f64) -> Result<Self> {
        check_dim_radius(dim, radius)?;
        Ok(IndexSet::L2Ball { dim, radius })
    }

    pub fn l1_ball(dim: usize, radius: f64) -> Result<Self> {
        check_dim_radius(dim, radius)?;
        Ok(IndexSet::L1Ball { dim, radius })
    }

    /// q may be any order in [2, ∞], including f64::INFINITY.
    pub fn lq_ball(dim: usize, q: f64, radius: f64) -> Result<Self> {
        check_dim_radius(dim, radius)?;
        if !(q >= 2.0) {
            return Err(Error::InvalidParameter(format!("ball order must be >= 2, got {q}")));
        }
        Ok(IndexSet::LqBall { dim, q, radius })
    }

    /// Ellipsoid with orthonormal axis directions (columns of u) and
    /// positive semi-axis lengths.
    pub fn ellipsoid(u: DMatrix<f64>, axes: DVector<f64>) -> Result<Self> {
        let n = u.nrows();
        if n == 0 || u.ncols() != n {
            return Err(Error::InvalidParameter("axis matrix must be square and nonempty".into()));
        }
        if axes.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: axes.len() });
        }
        if axes.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter("semi-axes must be positive and finite".into()));
        }
        let gram = u.transpose() * &u;
        let defect = (&gram - DMatrix::<f64>::identity(n, n)).abs().max();
        if defect > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "axis matrix is not orthonormal (defect {defect:.2e})"
            )));
        }
        Ok(IndexSet::Ellipsoid { u, axes })
    }

    /// Axis-aligned ellipsoid with the given semi-axes.
    pub fn ellipsoid_diag(axes: &[f64]) -> Result<Self> {
        let n = axes.len();
        Self::ellipsoid(DMatrix::identity(n, n), DVector::from_row_slice(axes))
    }

    pub fn finite(points: Vec<DVector<f64>>) -> Result<Self> {
        let n = points.first().map_or(0, |p| p.len());
        if n == 0 {
            return Err(Error::InvalidParameter("point set must be nonempty".into()));
        }
        for p in &points {
            if p.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: p.len() });
            }
        }
        Ok(IndexSet::FinitePointSet { points })
    }

    pub fn linear_image_lq(matrix: DMatrix<f64>, q: f64) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidParameter("image matrix must be nonempty".into()));
        }
        if !(q >= 2.0) {
            return Err(Error::InvalidParameter(format!("ball order must be >= 2, got {q}")));
        }
        Ok(IndexSet::LinearImageLq { matrix, q })
    }

    /// Ambient dimension.
    pub fn dimension(&self) -> usize {
        match self {
            IndexSet::L2Ball { dim, .. }
            | IndexSet::L1Ball { dim, .. }
            | IndexSet::LqBall { dim, .. } => *dim,
            IndexSet::Ellipsoid { u, .. } => u.nrows(),
            IndexSet::LinearImageLq { matrix, .. } => matrix.nrows(),
            IndexSet::FinitePointSet { points } => points[0].len(),
        }
    }

    /// h_T(x) = sup_{t∈T} ⟨t, x⟩.
    pub fn support_value(&self, x: &[f64]) -> f64 {
        match self {
            IndexSet::L2Ball { radius, .. } => {
                radius * x.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            IndexSet::L1Ball { radius, .. } => {
                radius * x.iter().map(|v| v.abs()).fold(0.0, f64::max)
            }
            IndexSet::LqBall { q, radius, .. } => radius * dual_norm(x, *q),
            IndexSet::Ellipsoid { u, axes } => {
                let v = DVector::from_row_slice(x);
                let proj = u.transpose() * v;
                proj.iter().zip(axes.iter()).map(|(p, a)| (p * a) * (p * a)).sum::<f64>().sqrt()
            }
            IndexSet::FinitePointSet { points } => points
                .iter()
                .map(|p| p.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max),
            IndexSet::LinearImageLq { matrix, q } => {
                let v = DVector::from_row_slice(x);
                let w = matrix.transpose() * v;
                dual_norm(w.as_slice(), *q)
            }
        }
    }

    /// Extreme points, modulo the x ↦ -x symmetry for symmetric sets, when a
    /// finite list exists and is small enough to enumerate.
    pub fn extreme_points(&self) -> Option<Vec<DVector<f64>>> {
        match self {
            IndexSet::L1Ball { dim, radius } => Some(
                (0..*dim)
                    .map(|i| {
                        let mut v = DVector::zeros(*dim);
                        v[i] = *radius;
                        v
                    })
                    .collect(),
            ),
            IndexSet::LqBall { dim, q, radius } if q.is_infinite() && *dim <= 12 => {
                // sign vectors with the first coordinate pinned positive
                let count = 1usize << (dim - 1);
                Some(
                    (0..count)
                        .map(|mask| {
                            DVector::from_fn(*dim, |i, _| {
                                if i == 0 || mask >> (i - 1) & 1 == 0 {
                                    *radius
                                } else {
                                    -radius
                                }
                            })
                        })
                        .collect(),
                )
            }
            IndexSet::FinitePointSet { points } => Some(points.clone()),
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// ‖x‖_{q'} for the dual exponent q' of q (1/q + 1/q' = 1).
fn dual_norm(x: &[f64], q: f64) -> f64 {
    if q == 1.0 {
        x.iter().map(|v| v.abs()).fold(0.0, f64::max)
    } else if q.is_infinite() {
        x.iter().map(|v| v.abs()).sum()
    } else {
        let qd = q / (q - 1.0);
        x.iter().map(|v| v.abs().powf(qd)).sum::<f64>().powf(1.0 / qd)
    }
}

/// h_T(direction).
pub fn support(set: &IndexSet, direction: &DVector<f64>) -> f64 {
    set.support_value(direction.as_slice())
}

/// How a cover was produced, with every parameter needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "construction", rename_all = "kebab-case")]
pub enum Provenance {
    Canonical { label: String },
    Net { k: usize, separation: f64, budget: usize, seed: u64 },
    BlockB2 { n: usize, k: usize, budget: usize, seed: u64 },
    RotationB2 {
        n: usize,
        k: usize,
        trials: usize,
        threshold_const: f64,
        c_log: f64,
        seed: u64,
        mc: usize,
    },
    EllipsoidDyadic { n: usize, trials: usize, seed: u64, mc: usize },
    LqEmbed {
        #[serde(with = "q_serde")]
        q: f64,
        n: usize,
    },
    GammaExtract { levels: usize, radius: f64 },
}

/// A finite set S and center t0 meant to satisfy T - t0 ⊂ conv(S ∪ -S).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullCover {
    pub center: DVector<f64>,
    pub points: Vec<DVector<f64>>,
    pub provenance: Provenance,
    /// Scale factor the construction baked into its points; the containment
    /// T - t0 ⊂ conv(S ∪ -S) is always claimed for the points as stored.
    pub claimed_radius: f64,
}

impl HullCover {
    pub fn new(
        center: DVector<f64>,
        points: Vec<DVector<f64>>,
        provenance: Provenance,
        claimed_radius: f64,
    ) -> Result<Self> {
        if points.is_empty() && !matches!(provenance, Provenance::GammaExtract { .. }) {
            return Err(Error::InvalidParameter("cover has no points".into()));
        }
        let n = center.len();
        for p in &points {
            if p.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: p.len() });
            }
        }
        // a gamma extraction of a singleton set legitimately has radius zero
        let radius_ok = if matches!(provenance, Provenance::GammaExtract { .. }) {
            claimed_radius >= 0.0
        } else {
            claimed_radius > 0.0
        };
        if !radius_ok || !claimed_radius.is_finite() {
            return Err(Error::InvalidParameter("claimed radius must be positive".into()));
        }
        Ok(HullCover { center, points, provenance, claimed_radius })
    }

    pub fn dimension(&self) -> usize {
        self.center.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

fn points_matrix(points: &[DVector<f64>]) -> DMatrix<f64> {
    let n = points.first().map_or(0, |p| p.len());
    let mut m = DMatrix::zeros(n, points.len());
    for (j, p) in points.iter().enumerate() {
        m.column_mut(j).copy_from(p);
    }
    m
}

/// Least-squares projection of x onto span(points): (coefficients, residual).
struct SpanProjection {
    /// Orthonormal basis of the column span, one column per direction kept.
    basis: DMatrix<f64>,
    /// Coordinates of the projection of x in that basis.
    coords: DVector<f64>,
    resid: f64,
}

/// Orthogonal projection of x onto the column span of `a`, through the
/// symmetric eigendecomposition of A·Aᵀ. Stays reliable on rank-deficient
/// and duplicated columns, which trip the plain SVD solver.
fn span_project(a: &DMatrix<f64>, x: &DVector<f64>) -> SpanProjection {
    let gram = a * a.transpose();
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    let keep: Vec<usize> =
        (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > top * 1e-12).collect();
    let basis = eig.eigenvectors.select_columns(keep.iter());
    let coords = basis.tr_mul(x);
    let resid = (x - &basis * &coords).norm();
    SpanProjection { basis, coords, resid }
}

fn gauge_lp(a: &DMatrix<f64>, target: &DVector<f64>) -> Result<(f64, Vec<f64>)> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let k = a.ncols();
    let mut prob = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..k)
        .map(|_| {
            (prob.add_var(1.0, (0.0, f64::INFINITY)), prob.add_var(1.0, (0.0, f64::INFINITY)))
        })
        .collect();
    for i in 0..a.nrows() {
        let mut terms = Vec::new();
        for (j, &(p, m)) in vars.iter().enumerate() {
            let c = a[(i, j)];
            if c != 0.0 {
                terms.push((p, c));
                terms.push((m, -c));
            }
        }
        prob.add_constraint(&terms, ComparisonOp::Eq, target[i]);
    }
    let sol = prob.solve().map_err(|e| Error::LinearProgram(e.to_string()))?;
    let coeffs: Vec<f64> = vars.iter().map(|&(p, m)| sol[p] - sol[m]).collect();
    Ok((sol.objective(), coeffs))
}

/// The gauge of conv(S ∪ -S) at x: the least ν ≥ 0 with x ∈ ν·conv(S ∪ -S),
/// +∞ when x is outside the span of S.
pub fn abs_hull_gauge(x: &DVector<f64>, points: &[DVector<f64>]) -> Result<f64> {
    if x.norm() == 0.0 {
        return Ok(0.0);
    }
    if points.is_empty() {
        return Ok(f64::INFINITY);
    }
    let a = points_matrix(points);
    if a.nrows() != x.len() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: x.len() });
    }
    let proj = span_project(&a, x);
    if proj.resid > 1e-8 * (1.0 + x.norm()) {
        return Ok(f64::INFINITY);
    }
    // pose the LP in span coordinates so its equality rows have full rank
    let (gauge, _) = gauge_lp(&proj.basis.tr_mul(&a), &proj.coords)?;
    Ok(gauge)
}

const FRANK_WOLFE_CAP: usize = 200_000;
/// Beyond this many points the LP is skipped in favor of Frank-Wolfe.
const LP_POINT_LIMIT: usize = 100_000;

/// Approximate membership by Frank-Wolfe over (1 + tol/2)·conv(S ∪ -S), with
/// the duality gap certifying non-membership. Used when the point set is too
/// large for the LP or the LP fails.
fn member_frank_wolfe(
    x: &DVector<f64>,
    points: &[DVector<f64>],
    tol: f64,
) -> Result<Option<Vec<f64>>> {
    let scale = 1.0 + x.norm();
    let nu = 1.0 + 0.5 * tol;
    let accept = 0.5 * tol * scale;
    let reject = tol * scale;
    let k = points.len();
    let mut coeffs = vec![0.0f64; k];
    let mut image = DVector::zeros(x.len());
    for _ in 0..FRANK_WOLFE_CAP {
        let grad = &image - x;
        let f = 0.5 * grad.norm_squared();
        // linear minimization oracle over the scaled symmetric hull
        let (j, inner) = points
            .iter()
            .enumerate()
            .map(|(j, p)| (j, grad.dot(p)))
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap();
        let sign = if inner > 0.0 { -1.0 } else { 1.0 };
        let v = points[j].scale(sign * nu);
        let gap = grad.dot(&image) - grad.dot(&v);
        if (2.0 * f).sqrt() <= accept {
            return Ok(Some(coeffs));
        }
        if f - gap > 0.5 * reject * reject {
            return Ok(None);
        }
        let d = &v - &image;
        let denom = d.norm_squared();
        if denom == 0.0 {
            break;
        }
        let step = (-grad.dot(&d) / denom).clamp(0.0, 1.0);
        // image = (1 - step)·image + step·v, with the coefficients in tow
        image += d.scale(step);
        for c in coeffs.iter_mut() {
            *c *= 1.0 - step;
        }
        coeffs[j] += step * sign * nu;
    }
    Err(Error::LinearProgram("frank-wolfe membership did not converge".into()))
}

/// Decides x ∈ conv(S ∪ -S) within tolerance. Returns the signed coefficients
/// λ with x ≈ Σ λ_j s_j and Σ|λ_j| ≤ 1 + tol on membership, `None` otherwise.
pub fn member_abs_hull(
    x: &DVector<f64>,
    points: &[DVector<f64>],
    tol: f64,
) -> Result<Option<Vec<f64>>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    if x.norm() == 0.0 {
        return Ok(Some(vec![0.0; points.len()]));
    }
    if points.is_empty() {
        return Ok(None);
    }
    if points.len() > LP_POINT_LIMIT {
        return member_frank_wolfe(x, points, tol);
    }
    let a = points_matrix(points);
    if a.nrows() != x.len() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: x.len() });
    }
    let proj = span_project(&a, x);
    if proj.resid > tol.max(1e-10) * (1.0 + x.norm()) {
        return Ok(None);
    }
    match gauge_lp(&proj.basis.tr_mul(&a), &proj.coords) {
        Ok((gauge, coeffs)) => {
            if gauge <= 1.0 + tol {
                Ok(Some(coeffs))
            } else {
                Ok(None)
            }
        }
        Err(_) => member_frank_wolfe(x, points, tol),
    }
}

/// Outcome of a containment probe of T - t0 against conv(S ∪ -S).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Largest containment factor seen: the exact extreme-point factor when
    /// extreme points are enumerable, else the sampled support-ratio maximum.
    pub worst_ratio: f64,
    /// Direction (sampled case) or extreme point (exact case) achieving it.
    pub witness: Vec<f64>,
    pub sampled_worst: f64,
    pub exact_worst: Option<f64>,
    pub directions: usize,
    pub extreme_points_checked: usize,
}

impl ProbeReport {
    pub fn contained(&self, tol: f64) -> bool {
        self.worst_ratio <= 1.0 + tol
    }
}

/// Probes T - t0 ⊂ conv(S ∪ -S) with random directions (support-function
/// ratios) plus exact gauges at the extreme points of T when available.
///
/// Support ratios only ever underestimate the true containment factor, so a
/// worst_ratio above 1 + tol disproves containment; with exact extreme points
/// the report is a proof either way.
pub fn containment_probe(
    set: &IndexSet,
    cover: &HullCover,
    directions: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let n = set.dimension();
    if cover.dimension() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cover.dimension() });
    }
    let mut worst_sampled = 0.0f64;
    let mut witness = vec![0.0f64; n];
    if directions > 0 {
        let rows = (CHUNK / n).max(1);
        let mut flat = vec![0.0f64; rows * n];
        let center = cover.center.as_slice().to_vec();
        for_each_chunk(seed, "containment_probe", directions, rows, |_, rng, len| {
            for v in flat[..len * n].iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for r in 0..len {
                let d = &flat[r * n..(r + 1) * n];
                let num = set.support_value(d)
                    - center.iter().zip(d.iter()).map(|(a, b)| a * b).sum::<f64>();
                let den = cover
                    .points
                    .iter()
                    .map(|p| p.iter().zip(d.iter()).map(|(a, b)| a * b).sum::<f64>().abs())
                    .fold(0.0, f64::max);
                let ratio = if den > 0.0 {
                    num / den
                } else if num > 1e-12 {
                    f64::INFINITY
                } else {
                    0.0
                };
                if ratio > worst_sampled {
                    worst_sampled = ratio;
                    witness.copy_from_slice(d);
                }
            }
        });
    }

    let mut exact_worst = None;
    let mut checked = 0usize;
    if let Some(extremes) = set.extreme_points() {
        let mut worst = 0.0f64;
        for e in &extremes {
            let shifted = e - &cover.center;
            let g = abs_hull_gauge(&shifted, &cover.points)?;
            checked += 1;
            if g > worst {
                worst = g;
                if g > worst_sampled {
                    witness = e.as_slice().to_vec();
                }
            }
        }
        exact_worst = Some(worst);
    }

    let worst_ratio = exact_worst.map_or(worst_sampled, |e| e.max(worst_sampled));
    Ok(ProbeReport {
        worst_ratio,
        witness,
        sampled_worst: worst_sampled,
        exact_worst,
        directions,
        extreme_points_checked: checked,
    })
}

/// A Haar-distributed rotation: QR of a Gaussian matrix with the R diagonal
/// sign fix.
pub fn haar_orthogonal(n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let mut rng = stream(seed, "haar_orthogonal", 0);
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn basis2() -> Vec<DVector<f64>> {
        vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])]
    }

    #[test]
    fn gauge_matches_l1_norm_on_basis_hull() {
        // conv(±e1, ±e2) is the l1 ball, whose gauge is the l1 norm.
        let s = basis2();
        for (x, want) in [
            (vec![0.5, 0.5], 1.0),
            (vec![1.0, 1.0], 2.0),
            (vec![-0.25, 0.5], 0.75),
            (vec![0.0, 0.0], 0.0),
        ] {
            let g = abs_hull_gauge(&DVector::from_vec(x.clone()), &s).unwrap();
            assert_relative_eq!(g, want, epsilon = 1e-7);
        }
    }

    #[test]
    fn gauge_is_infinite_outside_span() {
        let s = vec![DVector::from_vec(vec![1.0, 0.0])];
        let g = abs_hull_gauge(&DVector::from_vec(vec![0.0, 1.0]), &s).unwrap();
        assert!(g.is_infinite());
    }

    #[test]
    fn membership_agrees_with_gauge() {
        let s = basis2();
        let inside = DVector::from_vec(vec![0.5, 0.49]);
        let coeffs = member_abs_hull(&inside, &s, 1e-9).unwrap().expect("inside");
        let rebuilt = DVector::from_vec(vec![coeffs[0], coeffs[1]]);
        assert_relative_eq!((rebuilt - &inside).norm(), 0.0, epsilon = 1e-6);
        assert!(coeffs.iter().map(|c| c.abs()).sum::<f64>() <= 1.0 + 1e-6);

        let outside = DVector::from_vec(vec![0.7, 0.7]);
        assert!(member_abs_hull(&outside, &s, 1e-9).unwrap().is_none());
    }

    #[test]
    fn frank_wolfe_fallback_matches_lp_off_boundary() {
        let s = basis2();
        let inside = DVector::from_vec(vec![0.4, 0.4]);
        let outside = DVector::from_vec(vec![0.8, 0.8]);
        assert!(member_frank_wolfe(&inside, &s, 1e-3).unwrap().is_some());
        assert!(member_frank_wolfe(&outside, &s, 1e-3).unwrap().is_none());
    }

    #[test]
    fn probe_is_exact_for_l1_balls() {
        let cover = HullCover::new(
            DVector::zeros(3),
            vec![
                DVector::from_vec(vec![1.0, 0.0, 0.0]),
                DVector::from_vec(vec![0.0, 1.0, 0.0]),
                DVector::from_vec(vec![0.0, 0.0, 1.0]),
            ],
            Provenance::Canonical { label: "basis".into() },
            1.0,
        )
        .unwrap();
        let exact = IndexSet::l1_ball(3, 1.0).unwrap();
        let rep = containment_probe(&exact, &cover, 2000, 5).unwrap();
        assert_relative_eq!(rep.exact_worst.unwrap(), 1.0, epsilon = 1e-7);
        assert!(rep.contained(1e-6));

        let bigger = IndexSet::l1_ball(3, 1.25).unwrap();
        let rep = containment_probe(&bigger, &cover, 2000, 5).unwrap();
        assert_relative_eq!(rep.worst_ratio, 1.25, epsilon = 1e-6);
        assert!(!rep.contained(1e-6));
    }

    #[test]
    fn probe_detects_ball_overflow_by_sampling() {
        // B_2^2 against conv(±e1, ±e2): the diagonal direction shows a ratio
        // of sqrt(2), and sampling must get close to it.
        let cover = HullCover::new(
            DVector::zeros(2),
            basis2(),
            Provenance::Canonical { label: "basis".into() },
            1.0,
        )
        .unwrap();
        let ball = IndexSet::l2_ball(2, 1.0).unwrap();
        let rep = containment_probe(&ball, &cover, 4096, 9).unwrap();
        assert!(rep.worst_ratio > 1.35 && rep.worst_ratio <= 2f64.sqrt() + 1e-9);
    }

    #[test]
    fn support_values_match_dual_norms() {
        let x = [1.0, -2.0, 2.0];
        let l2 = IndexSet::l2_ball(3, 2.0).unwrap();
        assert_relative_eq!(l2.support_value(&x), 6.0, epsilon = 1e-12);
        let l1 = IndexSet::l1_ball(3, 1.5).unwrap();
        assert_relative_eq!(l1.support_value(&x), 3.0, epsilon = 1e-12);
        let linf = IndexSet::lq_ball(3, f64::INFINITY, 1.0).unwrap();
        assert_relative_eq!(linf.support_value(&x), 5.0, epsilon = 1e-12);
        // q = 3 has dual 1.5
        let lq = IndexSet::lq_ball(3, 3.0, 2.0).unwrap();
        let want = 2.0 * (1.0f64 + 2f64.powf(1.5) + 2f64.powf(1.5)).powf(1.0 / 1.5);
        assert_relative_eq!(lq.support_value(&x), want, epsilon = 1e-12);

        let ell = IndexSet::ellipsoid_diag(&[2.0, 1.0, 0.5]).unwrap();
        let want = (4.0f64 + 4.0 + 1.0).sqrt();
        assert_relative_eq!(ell.support_value(&x), want, epsilon = 1e-12);

        let fin = IndexSet::finite(vec![
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0, -1.0]),
        ])
        .unwrap();
        assert_relative_eq!(fin.support_value(&x), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn index_sets_round_trip_through_json() {
        let sets = vec![
            IndexSet::l2_ball(4, 1.0).unwrap(),
            IndexSet::lq_ball(3, f64::INFINITY, 2.0).unwrap(),
            IndexSet::lq_ball(3, 4.0, 1.0).unwrap(),
            IndexSet::ellipsoid_diag(&[1.0, 0.5]).unwrap(),
            IndexSet::finite(vec![DVector::from_vec(vec![1.0, 2.0])]).unwrap(),
            IndexSet::linear_image_lq(DMatrix::identity(2, 2), f64::INFINITY).unwrap(),
        ];
        for set in sets {
            let json = serde_json::to_string(&set).unwrap();
            let back: IndexSet = serde_json::from_str(&json).unwrap();
            assert_eq!(back, set, "{json}");
        }
    }

    #[test]
    fn cover_files_round_trip() {
        let cover = HullCover::new(
            DVector::from_vec(vec![0.0, 0.5]),
            vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.25, -1.0])],
            Provenance::Net { k: 2, separation: 0.5, budget: 1000, seed: 3 },
            1.0,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cover.json");
        cover.save(&path).unwrap();
        let back = HullCover::load(&path).unwrap();
        assert_eq!(back, cover);
    }

    #[test]
    fn haar_rotations_are_orthogonal_and_reproducible() {
        for n in [2usize, 5, 16] {
            let u = haar_orthogonal(n, 11).unwrap();
            let gram = &u * u.transpose();
            assert!((gram - DMatrix::identity(n, n)).norm() < 1e-10);
            let v = haar_orthogonal(n, 11).unwrap();
            assert_eq!(u, v);
            let w = haar_orthogonal(n, 12).unwrap();
            assert_ne!(u, w);
        }
    }

    #[test]
    fn haar_first_column_is_uniform_on_the_sphere() {
        // Second moment of a coordinate of a uniform point on S^3 is 1/4;
        // also KS-compare the first coordinate against a directly built
        // uniform direction.
        let n = 4usize;
        let trials = 2000usize;
        let mut haar_coords = Vec::with_capacity(trials);
        for s in 0..trials {
            let u = haar_orthogonal(n, 1000 + s as u64).unwrap();
            haar_coords.push(u[(0, 0)]);
        }
        let mean_sq = haar_coords.iter().map(|c| c * c).sum::<f64>() / trials as f64;
        assert!((mean_sq - 0.25).abs() < 0.03, "second moment {mean_sq}");

        let mut direct = Vec::with_capacity(trials);
        let mut rng = stream(77, "sphere_direct", 0);
        for _ in 0..trials {
            let g: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            direct.push(g[0] / norm);
        }
        let mut a = haar_coords.clone();
        let mut b = direct.clone();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut ks = 0.0f64;
        let (mut i, mut j) = (0usize, 0usize);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            let d = (i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs();
            ks = ks.max(d);
        }
        assert!(ks < 0.06, "ks statistic {ks}");
    }

    proptest! {
        #[test]
        fn gauge_is_homogeneous(coef in -2.0f64..2.0, x0 in -1.0f64..1.0, x1 in -1.0f64..1.0) {
            let s = vec![
                DVector::from_vec(vec![1.0, 0.3]),
                DVector::from_vec(vec![-0.2, 1.0]),
            ];
            let x = DVector::from_vec(vec![x0, x1]);
            let g1 = abs_hull_gauge(&x, &s).unwrap();
            let g2 = abs_hull_gauge(&x.scale(coef), &s).unwrap();
            prop_assert!((g2 - coef.abs() * g1).abs() <= 1e-6 * (1.0 + g1));
        }

        #[test]
        fn gauge_is_subadditive(
            x0 in -1.0f64..1.0, x1 in -1.0f64..1.0,
            y0 in -1.0f64..1.0, y1 in -1.0f64..1.0,
        ) {
            let s = vec![
                DVector::from_vec(vec![1.0, 0.0]),
                DVector::from_vec(vec![0.5, 0.8]),
            ];
            let x = DVector::from_vec(vec![x0, x1]);
            let y = DVector::from_vec(vec![y0, y1]);
            let gx = abs_hull_gauge(&x, &s).unwrap();
            let gy = abs_hull_gauge(&y, &s).unwrap();
            let gxy = abs_hull_gauge(&(&x + &y), &s).unwrap();
            prop_assert!(gxy <= gx + gy + 1e-6);
        }

        #[test]
        fn membership_matches_gauge_threshold(x0 in -1.5f64..1.5, x1 in -1.5f64..1.5) {
            let s = vec![
                DVector::from_vec(vec![1.0, 0.1]),
                DVector::from_vec(vec![0.0, 0.9]),
            ];
            let x = DVector::from_vec(vec![x0, x1]);
            let g = abs_hull_gauge(&x, &s).unwrap();
            // skip the knife edge where tolerance decides either way
            prop_assume!((g - 1.0).abs() > 1e-5);
            let member = member_abs_hull(&x, &s, 1e-7).unwrap();
            prop_assert_eq!(member.is_some(), g < 1.0);
        }
    }
}
