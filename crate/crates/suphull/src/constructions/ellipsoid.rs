//! Dyadic block decomposition of ellipsoids, covers built from it, and the
//! diagonal expansion that turns an Lq-ball image into an ellipsoid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_matrix, RandomFamily};
use crate::error::{Error, Result};
use crate::geometry::{haar_orthogonal, HullCover, IndexSet, Provenance};
use crate::rng::derive_seed;

use super::nets::{auto_block_size, block_cover_b2};

/// Normalized semi-axes below this floor are dropped from the decomposition;
/// they move any containment probe by far less than the reporting precision.
const AXIS_FLOOR: f64 = 1.0 / ((1u64 << 45) as f64);

/// One dyadic level of an ellipsoid decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipsoidBlock {
    /// Level k: normalized semi-axes in (2^{-k-1}, 2^{-k}].
    pub level: u32,
    /// Positions of the block's axes in the input ordering.
    pub indices: Vec<usize>,
    pub count: usize,
    /// c_k = 2^{k+2}·(2^k + n_k)^{-1/2}.
    pub c: f64,
    /// Radius of the block ball in the convex split: 2^{-k}·c_k²·W.
    pub radius: f64,
    /// Orthonormal basis of the block span, one column per axis.
    pub basis: DMatrix<f64>,
}

/// Dyadic grouping of an ellipsoid's semi-axes.
///
/// After normalizing the axes to unit euclidean length, level k collects the
/// axes in (2^{-k-1}, 2^{-k}]. The weights c_k satisfy sum c_k^{-2} ≤ 1, and
/// splitting a point of the ellipsoid across blocks in proportion to c_k^{-2}
/// shows the ellipsoid lies in the convex hull of the block balls of radius
/// 2^{-k}·c_k²·W.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub blocks: Vec<EllipsoidBlock>,
    /// Euclidean length of the input axis vector; undoes the normalization.
    pub rescale: f64,
    /// W = sum over blocks of c_k^{-2}.
    pub weight: f64,
    /// sum over blocks of n_k·2^{-2k}, pinned to [1, 4).
    pub dyadic_mass: f64,
    /// How many axes fell below the floor and were dropped.
    pub dropped: usize,
}

pub fn ellipsoid_blocks(a: &DVector<f64>, u: &DMatrix<f64>) -> Result<BlockDecomposition> {
    let n = a.len();
    if n == 0 {
        return Err(Error::InvalidParameter("ellipsoid needs at least one axis".into()));
    }
    if u.nrows() != n || u.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: u.nrows().max(u.ncols()) });
    }
    let gram_defect = (u.transpose() * u - DMatrix::<f64>::identity(n, n)).abs().max();
    if gram_defect > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "axis matrix is not orthonormal (defect {gram_defect:.2e})"
        )));
    }
    if a.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter("semi-axes must be nonnegative and finite".into()));
    }
    let rescale = a.norm();
    if rescale == 0.0 {
        return Err(Error::InvalidParameter("all semi-axes are zero".into()));
    }

    // group normalized axes by dyadic level
    let mut by_level: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    let mut dropped = 0usize;
    for i in 0..n {
        let norm = a[i] / rescale;
        if norm < AXIS_FLOOR {
            dropped += 1;
            continue;
        }
        let mut k = (-norm.log2()).floor() as i64;
        // guard the floor against log fuzz right at a dyadic boundary
        while k > 0 && norm > 2f64.powi(-(k as i32)) {
            k -= 1;
        }
        while norm <= 2f64.powi(-(k as i32) - 1) {
            k += 1;
        }
        by_level.entry(k as u32).or_default().push(i);
    }

    let weight: f64 = by_level
        .iter()
        .map(|(&k, idx)| {
            let c = c_constant(k, idx.len());
            1.0 / (c * c)
        })
        .sum();
    let dyadic_mass: f64 =
        by_level.iter().map(|(&k, idx)| idx.len() as f64 * 2f64.powi(-2 * k as i32)).sum();
    debug_assert!(weight <= 1.0 + 1e-12);
    debug_assert!(dyadic_mass >= 1.0 - 1e-9 && dyadic_mass < 4.0);

    let blocks = by_level
        .into_iter()
        .map(|(k, indices)| {
            let count = indices.len();
            let c = c_constant(k, count);
            let radius = 2f64.powi(-(k as i32)) * c * c * weight;
            let mut basis = DMatrix::zeros(n, count);
            for (col, &i) in indices.iter().enumerate() {
                basis.set_column(col, &u.column(i));
            }
            EllipsoidBlock { level: k, indices, count, c, radius, basis }
        })
        .collect();
    Ok(BlockDecomposition { blocks, rescale, weight, dyadic_mass, dropped })
}

fn c_constant(k: u32, count: usize) -> f64 {
    2f64.powi(k as i32 + 2) / (2f64.powi(k as i32) + count as f64).sqrt()
}

/// What an ellipsoid cover did per block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipsoidDiagnostics {
    pub levels: Vec<u32>,
    pub counts: Vec<usize>,
    pub radii: Vec<f64>,
    pub cover_sizes: Vec<usize>,
    pub rescale: f64,
    pub weight: f64,
    pub dyadic_mass: f64,
    /// Whether rotations were scored (needs a (4+eps) moment and trials > 0).
    pub rotation_scored: bool,
}

/// Cover of an ellipsoid through its dyadic block decomposition.
///
/// Each block ball gets a unit-ball cover (rotation-scored when the family
/// has a (4+eps) moment and `trials` > 0), scaled by the block radius and
/// embedded along the block basis. Size stays within 10n².
pub fn ellipsoid_cover(
    set: &IndexSet,
    family: &RandomFamily,
    trials: usize,
    seed: u64,
    budget: usize,
) -> Result<(HullCover, EllipsoidDiagnostics)> {
    let (u, axes) = match set {
        IndexSet::Ellipsoid { u, axes } => (u, axes),
        _ => {
            return Err(Error::InvalidParameter(
                "ellipsoid_cover needs an ellipsoid index set".into(),
            ))
        }
    };
    if budget == 0 {
        return Err(Error::InvalidParameter("score budget must be positive".into()));
    }
    let n = axes.len();
    let decomp = ellipsoid_blocks(axes, u)?;
    let rotation_scored = trials > 0 && family.has_four_plus_moment();
    // one shared sample matrix scores every block's rotations
    let samples = if rotation_scored && decomp.blocks.iter().any(|b| b.count > 1) {
        Some(sample_matrix(family, n, budget, derive_seed(seed, "ellipsoid_score", 0))?)
    } else {
        None
    };

    let mut points = Vec::new();
    let mut diag = EllipsoidDiagnostics {
        levels: Vec::new(),
        counts: Vec::new(),
        radii: Vec::new(),
        cover_sizes: Vec::new(),
        rescale: decomp.rescale,
        weight: decomp.weight,
        dyadic_mass: decomp.dyadic_mass,
        rotation_scored,
    };
    for (idx, block) in decomp.blocks.iter().enumerate() {
        let sub_seed = derive_seed(seed, "ellipsoid_block", idx as u64);
        let unit: Vec<DVector<f64>> = if block.count == 1 {
            // B_2^1 = conv{1, -1} exactly
            vec![DVector::from_element(1, 1.0)]
        } else {
            let k = auto_block_size(block.count, 2.0);
            let base = block_cover_b2(block.count, k, 30_000, sub_seed)?;
            match &samples {
                Some(x) => best_block_rotation(x, block, base.points, trials, sub_seed)?,
                None => base.points,
            }
        };
        let factor = decomp.rescale * block.radius;
        diag.levels.push(block.level);
        diag.counts.push(block.count);
        diag.radii.push(block.radius);
        diag.cover_sizes.push(unit.len());
        for p in unit {
            points.push(&block.basis * p.scale(factor));
        }
    }
    debug_assert!(points.len() <= 10 * n * n);
    let claimed = decomp.rescale * decomp.blocks.iter().map(|b| b.radius).fold(0.0, f64::max);
    let cover = HullCover::new(
        DVector::zeros(n),
        points,
        Provenance::EllipsoidDyadic { n, trials, seed, mc: budget },
        claimed,
    )?;
    Ok((cover, diag))
}

/// Scores rotations of a block cover against the projection of the shared
/// sample matrix onto the block span, keeping the best truncated tail sum.
/// The projection matters: in an oblique block basis the coordinates of X are
/// no longer i.i.d., so scoring must see the actual linear forms.
fn best_block_rotation(
    samples: &DMatrix<f64>,
    block: &EllipsoidBlock,
    base: Vec<DVector<f64>>,
    trials: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let projected = samples * &block.basis;
    let threshold = (block.count as f64).sqrt();
    let rows = projected.nrows() as f64;
    let mut best_score = f64::INFINITY;
    let mut best = base.clone();
    for trial in 0..trials.max(1) {
        let rotated: Vec<DVector<f64>> = if trial == 0 {
            base.clone()
        } else {
            let r = haar_orthogonal(
                block.count,
                derive_seed(seed, "ellipsoid_rotation", trial as u64),
            )?;
            base.iter().map(|p| &r * p).collect()
        };
        let p = DMatrix::from_columns(&rotated);
        let g = &projected * p;
        let score = g
            .iter()
            .map(|v| {
                let a = v.abs();
                if a >= threshold {
                    a
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / rows;
        if score < best_score {
            best_score = score;
            best = rotated;
        }
    }
    Ok(best)
}

/// Diagonal expansion embedding A·B_q^n into an ellipsoid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LqEmbedding {
    /// Diagonal of the expansion D; A·B_q^n ⊂ A·D·B_2^n.
    pub d: DVector<f64>,
    /// The ellipsoid A·D·B_2^n in axis form.
    pub set: IndexSet,
    /// Column normalizer rho = (sum_i ‖A e_i‖₂^{q'})^{1/q'}.
    pub scale: f64,
}

/// Embeds the image of a q-ball (q ≥ 2) into an ellipsoid.
///
/// With column norms c_i = ‖A e_i‖₂ normalized by rho, the diagonal
/// d_i = (c_i/rho)^{q'/2-1} makes A·B_q^n ⊂ A·D·B_2^n exactly; Hoelder's
/// inequality on the coordinates shows ‖D^{-1}x‖₂ ≤ 1 for x ∈ B_q^n under
/// that normalization.
pub fn lq_embed(a: &DMatrix<f64>, q: f64) -> Result<LqEmbedding> {
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidParameter("matrix must be nonempty".into()));
    }
    if a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
    }
    if !(q >= 2.0) {
        return Err(Error::InvalidParameter(format!("ball order must be >= 2, got {q}")));
    }
    let qd = if q.is_infinite() { 1.0 } else { q / (q - 1.0) };
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let c = a.column(i).norm();
        if c == 0.0 {
            return Err(Error::InvalidParameter(format!("column {i} of the matrix is zero")));
        }
        cols.push(c);
    }
    let rho = cols.iter().map(|c| c.powf(qd)).sum::<f64>().powf(1.0 / qd);
    let d = DVector::from_iterator(n, cols.iter().map(|c| (c / rho).powf(qd / 2.0 - 1.0)));
    let expanded = a * DMatrix::from_diagonal(&d);
    let svd = expanded.clone().svd(true, false);
    let sigma = &svd.singular_values;
    let max_sv = sigma.max();
    if sigma.min() <= 1e-12 * max_sv {
        return Err(Error::InvalidParameter(
            "matrix is numerically singular; the embedded ellipsoid would be degenerate".into(),
        ));
    }
    let u = svd.u.ok_or_else(|| Error::LinearProgram("svd failed to produce u".into()))?;
    let set = IndexSet::ellipsoid(u, sigma.clone())?;
    Ok(LqEmbedding { d, set, scale: rho })
}

/// Covers A·B_q^n by embedding it into an ellipsoid and covering that.
pub fn lq_cover(
    a: &DMatrix<f64>,
    q: f64,
    family: &RandomFamily,
    trials: usize,
    seed: u64,
    budget: usize,
) -> Result<(HullCover, LqEmbedding, EllipsoidDiagnostics)> {
    let embedding = lq_embed(a, q)?;
    let (mut cover, diag) = ellipsoid_cover(&embedding.set, family, trials, seed, budget)?;
    cover.provenance = Provenance::LqEmbed { q, n: a.nrows() };
    Ok((cover, embedding, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::containment_probe;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn single_axis_block_matches_hand_computation() {
        let a = DVector::from_vec(vec![1.0]);
        let u = DMatrix::identity(1, 1);
        let decomp = ellipsoid_blocks(&a, &u).unwrap();
        assert_eq!(decomp.blocks.len(), 1);
        let b = &decomp.blocks[0];
        assert_eq!(b.level, 0);
        assert_eq!(b.count, 1);
        assert_relative_eq!(b.c, 2.0 * 2f64.sqrt(), epsilon = 1e-12);
        // a single block always gets radius 2^{-k}
        assert_relative_eq!(b.radius, 1.0, epsilon = 1e-12);
        assert_relative_eq!(decomp.weight, 0.125, epsilon = 1e-12);
        assert_relative_eq!(decomp.dyadic_mass, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_axes_land_in_one_level_one_block() {
        let a = DVector::from_element(4, 0.5);
        let u = DMatrix::identity(4, 4);
        let decomp = ellipsoid_blocks(&a, &u).unwrap();
        assert_eq!(decomp.blocks.len(), 1);
        let b = &decomp.blocks[0];
        assert_eq!((b.level, b.count), (1, 4));
        assert_relative_eq!(b.c, 8.0 / 6f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(b.radius, 0.5, epsilon = 1e-12);
        assert_relative_eq!(decomp.dyadic_mass, 1.0, epsilon = 1e-12);
        assert_relative_eq!(decomp.rescale, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn random_decompositions_satisfy_the_invariants() {
        for seed in 0..20u64 {
            let n = 3 + (seed as usize % 7);
            let mut rng = stream(seed, "ellipsoid_test_axes", 0);
            let a = DVector::from_fn(n, |i, _| {
                let spread: f64 = 0.5 + 1.5 * rng.gen::<f64>();
                2f64.powf(-(i as f64) * spread / 4.0)
            });
            let u = haar_orthogonal(n, seed + 100).unwrap();
            let decomp = ellipsoid_blocks(&a, &u).unwrap();
            assert!(decomp.weight <= 1.0 + 1e-12, "weight {}", decomp.weight);
            assert!(
                decomp.dyadic_mass >= 1.0 - 1e-9 && decomp.dyadic_mass < 4.0,
                "mass {}",
                decomp.dyadic_mass
            );
            let total: usize = decomp.blocks.iter().map(|b| b.count).sum();
            assert_eq!(total + decomp.dropped, n);
            for b in &decomp.blocks {
                assert!(b.radius <= 6.0 + 1e-12);
                assert!(b.radius > 0.0);
                // block basis stays orthonormal
                let gram = b.basis.transpose() * &b.basis;
                let defect =
                    (gram - DMatrix::<f64>::identity(b.count, b.count)).abs().max();
                assert!(defect < 1e-9);
            }
            assert_relative_eq!(decomp.rescale, a.norm(), epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_axes_are_rejected() {
        let u2 = DMatrix::identity(2, 2);
        assert!(ellipsoid_blocks(&DVector::from_vec(vec![0.0, 0.0]), &u2).is_err());
        assert!(ellipsoid_blocks(&DVector::from_vec(vec![1.0, -0.5]), &u2).is_err());
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.0, 1.0]);
        assert!(ellipsoid_blocks(&DVector::from_vec(vec![1.0, 0.5]), &skew).is_err());
    }

    #[test]
    fn ellipsoid_cover_contains_the_ellipsoid() {
        let family: RandomFamily = "gaussian".parse().unwrap();
        let axes = [1.0, 0.7, 0.33, 0.21, 0.08];
        let set = IndexSet::ellipsoid_diag(&axes).unwrap();
        let (cover, diag) = ellipsoid_cover(&set, &family, 3, 77, 4_096).unwrap();
        assert!(cover.points.len() <= 10 * 25);
        assert_eq!(diag.cover_sizes.len(), diag.levels.len());
        assert!(diag.rotation_scored);
        let rep = containment_probe(&set, &cover, 8_192, 5).unwrap();
        assert!(rep.worst_ratio <= 1.0 + 1e-6, "worst ratio {}", rep.worst_ratio);
    }

    #[test]
    fn rotated_ellipsoid_cover_still_contains() {
        let family: RandomFamily = "student:9".parse().unwrap();
        let n = 6;
        let u = haar_orthogonal(n, 31).unwrap();
        let axes = DVector::from_fn(n, |i, _| 2f64.powf(-(i as f64) / 3.0));
        let set = IndexSet::ellipsoid(u, axes).unwrap();
        let (cover, _) = ellipsoid_cover(&set, &family, 4, 9, 4_096).unwrap();
        let rep = containment_probe(&set, &cover, 8_192, 6).unwrap();
        assert!(rep.worst_ratio <= 1.0 + 1e-6, "worst ratio {}", rep.worst_ratio);
    }

    #[test]
    fn lq_embed_identity_matches_the_closed_form() {
        let a = DMatrix::identity(3, 3);
        let emb = lq_embed(&a, f64::INFINITY).unwrap();
        assert_relative_eq!(emb.scale, 3.0, epsilon = 1e-12);
        for v in emb.d.iter() {
            assert_relative_eq!(*v, 3f64.sqrt(), epsilon = 1e-12);
        }
        match &emb.set {
            IndexSet::Ellipsoid { axes, .. } => {
                for v in axes.iter() {
                    assert_relative_eq!(*v, 3f64.sqrt(), epsilon = 1e-10);
                }
            }
            other => panic!("expected an ellipsoid, got {other:?}"),
        }

        // q = 2 is the trivial embedding
        let emb2 = lq_embed(&a, 2.0).unwrap();
        for v in emb2.d.iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(emb2.scale, 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn lq_embedding_contains_the_image_set() {
        let q = 4.0;
        let r = haar_orthogonal(4, 13).unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 2.0, 0.8]));
        let a = r * d;
        let emb = lq_embed(&a, q).unwrap();
        let image = IndexSet::linear_image_lq(a.clone(), q).unwrap();
        // support of the image never exceeds the support of the ellipsoid
        let mut rng = stream(3, "lq_test_dirs", 0);
        for _ in 0..500 {
            let dir: Vec<f64> =
                (0..4).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let h_image = image.support_value(&dir);
            let h_ell = emb.set.support_value(&dir);
            assert!(h_image <= h_ell * (1.0 + 1e-9), "{h_image} > {h_ell}");
        }
    }

    #[test]
    fn lq_cover_contains_the_q_ball_image() {
        let family: RandomFamily = "gaussian".parse().unwrap();
        let a = DMatrix::identity(4, 4);
        let (cover, emb, _) = lq_cover(&a, 4.0, &family, 2, 41, 4_096).unwrap();
        assert!(matches!(cover.provenance, Provenance::LqEmbed { .. }));
        let image = IndexSet::linear_image_lq(a, 4.0).unwrap();
        let rep = containment_probe(&image, &cover, 8_192, 8).unwrap();
        assert!(rep.worst_ratio <= 1.0 + 1e-6, "worst ratio {}", rep.worst_ratio);
        let rep_ell = containment_probe(&emb.set, &cover, 4_096, 9).unwrap();
        assert!(rep_ell.worst_ratio <= 1.0 + 1e-6, "worst ratio {}", rep_ell.worst_ratio);
    }

    #[test]
    fn lq_embed_rejects_bad_inputs() {
        let a = DMatrix::identity(3, 3);
        assert!(lq_embed(&a, 1.5).is_err());
        let mut zero_col = DMatrix::identity(3, 3);
        zero_col.set_column(1, &DVector::zeros(3));
        assert!(lq_embed(&zero_col, 4.0).is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(lq_embed(&singular, 3.0).is_err());
    }
}
