//! Full-pipeline acceptance runs. Each test drives one numbered check end to
//! end through the public API and prints a single verdict line with the
//! measured quantities, so a plain `cargo test` run doubles as the report.

use std::fs;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use suphull::constructions::{
    auto_block_size, block_cover_b2, ellipsoid_cover, extract_cover_from_partition,
    gamma_partition, lq_cover, rotation_cover_with, RotationConfig,
};
use suphull::functionals::LittleMode;
use suphull::geometry::haar_orthogonal;
use suphull::rng::{derive_seed, stream};
use suphull::{
    big_m, compare, default_config, little_m, run, tilde_m, ExperimentKind, HullCover, IndexSet,
    RandomFamily,
};

fn verdict(num: u32, name: &str, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    println!("criterion {num:02} ({name}): {word}: {detail}");
    assert!(pass, "criterion {num:02} ({name}): {detail}");
}

#[test]
fn criterion_01_sandwich() {
    let config = default_config(ExperimentKind::Sandwich);
    let report = run(&config).expect("sandwich experiment");
    let total = report.rows.len();
    let ok = report.rows.iter().filter(|r| r.sandwich_ok == Some(true)).count();
    let pass = report.summary.passed && total >= 200 && ok == total;
    verdict(
        1,
        "sandwich",
        pass,
        &format!("{ok}/{total} instances hold m_tilde <= M <= 2 m_tilde within 3 sigma"),
    );
}

#[test]
fn criterion_02_upper_bound() {
    let families: Vec<RandomFamily> =
        ["gaussian", "student:9"].iter().map(|s| s.parse().expect("family")).collect();
    let mc = 100_000;
    let mut checked = 0usize;
    let mut held = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for family in &families {
        for &n in &[8usize, 16] {
            let seed = derive_seed(2, "upper_sweep", n as u64);
            let covers: Vec<(IndexSet, HullCover)> = vec![
                (
                    IndexSet::l2_ball(n, 1.0).expect("ball"),
                    rotation_cover_with(
                        n,
                        family,
                        &RotationConfig { trials: 8, ..RotationConfig::default() },
                        seed,
                        20_000,
                    )
                    .expect("rotation cover")
                    .0,
                ),
                (
                    IndexSet::l2_ball(n, 1.0).expect("ball"),
                    block_cover_b2(n, auto_block_size(n, 2.0), 30_000, seed)
                        .expect("block cover"),
                ),
                {
                    let u = haar_orthogonal(n, derive_seed(seed, "frame", 0)).expect("frame");
                    let mut rng = stream(seed, "axes", 0);
                    let axes = DVector::from_fn(n, |_, _| rng.gen_range(0.5f64..2.0));
                    let set = IndexSet::ellipsoid(u, axes).expect("ellipsoid");
                    let cover = ellipsoid_cover(&set, family, 4, seed, 20_000)
                        .expect("ellipsoid cover")
                        .0;
                    (set, cover)
                },
                (
                    IndexSet::lq_ball(n, 3.0, 1.0).expect("lq ball"),
                    lq_cover(&DMatrix::identity(n, n), 3.0, family, 4, seed, 20_000)
                        .expect("lq cover")
                        .0,
                ),
                {
                    let mut rng = stream(seed, "gamma_points", 0);
                    let points: Vec<DVector<f64>> = (0..12)
                        .map(|_| {
                            DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
                        })
                        .collect();
                    let (tree, _) =
                        gamma_partition(&points, family, 6, seed, 20_000).expect("partition");
                    let cover =
                        extract_cover_from_partition(&tree, family, 20_000).expect("extract");
                    (IndexSet::finite(points).expect("finite set"), cover)
                },
            ];
            for (set, cover) in &covers {
                let rep = compare(set, cover, family, mc, derive_seed(seed, "compare", 0))
                    .expect("compare");
                checked += 1;
                if rep.upper_bound_ok == Some(true) {
                    held += 1;
                }
                let b = rep.b_sup.as_ref().expect("b estimate");
                worst = worst.max(b.value / rep.m_big.value.max(1e-300));
            }
        }
    }
    let pass = checked == held && checked == 20;
    verdict(
        2,
        "upper bound",
        pass,
        &format!("{held}/{checked} covers hold b <= M within 4 sigma, largest b/M {worst:.3}"),
    );
}

#[test]
fn criterion_03_b1_ratio() {
    let config = default_config(ExperimentKind::B1);
    let report = run(&config).expect("b1 experiment");
    let worst = *report.summary.constants.get("max_ratio_m_over_b").expect("b1 constant");
    let pass = report.summary.passed && worst <= 4.0 * 1.05;
    verdict(
        3,
        "b1 ratio",
        pass,
        &format!(
            "{} rows over 4 families, n up to 128, max M/b {worst:.4} vs cap 4.2",
            report.rows.len()
        ),
    );
}

#[test]
fn criterion_04_b2_growth() {
    let config = default_config(ExperimentKind::B2);
    let report = run(&config).expect("b2 experiment");
    let mut pass = report.summary.passed;
    let mut peaks = Vec::new();
    for row in &report.rows {
        pass = pass
            && row.set_size <= 10 * row.n * row.n
            && row.worst_ratio.unwrap_or(f64::INFINITY) <= 1.0 + 1e-2;
    }
    for family in ["gaussian", "student:9"] {
        let base = *report
            .summary
            .constants
            .get(&format!("m_over_sqrt_n_base {family}"))
            .expect("base constant");
        let peak = *report
            .summary
            .constants
            .get(&format!("m_over_sqrt_n_peak {family}"))
            .expect("peak constant");
        pass = pass && peak <= 3.0 * base;
        peaks.push(format!("{family} {peak:.3} vs base {base:.3}"));
    }
    verdict(4, "b2 growth", pass, &format!("M/sqrt(n) peaks: {}", peaks.join(", ")));
}

#[test]
fn criterion_05_ellipsoid_band() {
    let config = default_config(ExperimentKind::Ellipsoid);
    let report = run(&config).expect("ellipsoid experiment");
    let mut pass = report.summary.passed && report.rows.iter().all(|r| r.row_ok);
    let mut bands = Vec::new();
    for family in ["gaussian", "student:9"] {
        let lo =
            *report.summary.constants.get(&format!("ratio_min {family}")).expect("band min");
        let hi =
            *report.summary.constants.get(&format!("ratio_max {family}")).expect("band max");
        pass = pass && hi <= 3.0 * lo;
        bands.push(format!("{family} [{lo:.2}, {hi:.2}] = {:.2}x", hi / lo));
    }
    verdict(5, "ellipsoid band", pass, &format!("M/b bands over 30 instances: {}", bands.join(", ")));
}

#[test]
fn criterion_06_lq_band() {
    let config = default_config(ExperimentKind::Bq);
    let report = run(&config).expect("bq experiment");
    let mut pass = report.summary.passed && report.rows.iter().all(|r| r.row_ok);
    let mut bands = Vec::new();
    for family in ["gaussian"] {
        let lo = *report
            .summary
            .constants
            .get(&format!("normalized_b_min {family}"))
            .expect("band min");
        let hi = *report
            .summary
            .constants
            .get(&format!("normalized_b_max {family}"))
            .expect("band max");
        pass = pass && hi <= 2.0 * lo;
        bands.push(format!("{family} [{lo:.3}, {hi:.3}] = {:.2}x", hi / lo));
    }
    verdict(
        6,
        "lq band",
        pass,
        &format!("b/n^(1/q') over q in {{3,4,inf}}, n in {{8,32}}: {}", bands.join(", ")),
    );
}

#[test]
fn criterion_07_stable_slopes() {
    let mut details = Vec::new();
    let mut pass = true;
    for p in [1.2f64, 1.5] {
        let mut config = default_config(ExperimentKind::StableCounterexample);
        config.family = Some(format!("stable:{p}"));
        let report = run(&config).expect("stable experiment");
        let slope_b = *report.summary.slopes.get("b_vs_n").expect("b slope");
        let slope_ratio = *report.summary.slopes.get("m_over_b_vs_n").expect("ratio slope");
        let floor = 1.0 / p - 0.5 - 0.1;
        pass = pass
            && report.summary.passed
            && (slope_b - 1.0 / p).abs() <= 0.08
            && slope_ratio >= floor;
        details.push(format!(
            "p={p}: b slope {slope_b:.3} vs {:.3}, M/b slope {slope_ratio:.3} vs floor {floor:.3}",
            1.0 / p
        ));
    }
    verdict(7, "stable slopes", pass, &details.join("; "));
}

#[test]
fn criterion_08_gamma_extraction() {
    let config = default_config(ExperimentKind::Gamma);
    let report = run(&config).expect("gamma experiment");
    let c_max = *report.summary.constants.get("b_over_gamma_max").expect("gamma constant");
    let gap = *report.summary.constants.get("brute_force_gap_max").expect("brute gap");
    // extraction itself errors out if any pairwise difference escapes the hull
    let pass = report.summary.passed
        && report.rows.len() >= 50
        && report.rows.iter().all(|r| r.row_ok)
        && c_max <= 50.0;
    verdict(
        8,
        "gamma extraction",
        pass,
        &format!(
            "{} instances, max b/gamma {c_max:.3}, brute vs greedy gap {gap:.2e}",
            report.rows.len()
        ),
    );
}

#[test]
fn criterion_09_oracle_agreement() {
    let family: RandomFamily = "gaussian".parse().expect("family");
    let single = vec![DVector::from_element(1, 1.0)];
    let t = tilde_m(&single, &family, 400_000, 901).expect("tilde_m");
    let m = big_m(&single, &family, 400_000, 902).expect("big_m");
    let t_ref = 0.647;
    let m_ref = (2.0 / std::f64::consts::PI).sqrt();

    let mut worst_gap = 0.0f64;
    for i in 0..100u64 {
        let tag = derive_seed(9, "little_oracle", i);
        let mut rng = stream(tag, "points", 0);
        let m_pts = rng.gen_range(2..=6usize);
        let dim = rng.gen_range(2..=5usize);
        let spread = rng.gen_range(-1.0f64..1.0).exp();
        let points: Vec<DVector<f64>> = (0..m_pts)
            .map(|_| DVector::from_fn(dim, |_, _| spread * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let heuristic = little_m(&points, &family, LittleMode::Heuristic, 50_000, tag)
            .expect("heuristic little_m");
        let exact = little_m(&points, &family, LittleMode::ExactSmall, 50_000, tag)
            .expect("exact little_m");
        let gap = (heuristic.estimate.value - exact.estimate.value).abs()
            / exact.estimate.value.max(1e-12);
        worst_gap = worst_gap.max(gap);
    }
    let pass = (t.value - t_ref).abs() <= 0.01
        && (m.value - m_ref).abs() <= 0.01
        && worst_gap <= 1e-9;
    verdict(
        9,
        "oracle agreement",
        pass,
        &format!(
            "tilde_m {:.4} vs {t_ref}, M {:.4} vs {m_ref:.4}, heuristic little_m within {worst_gap:.1e} of exact on 100 sets",
            t.value, m.value
        ),
    );
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut config = default_config(ExperimentKind::Sandwich);
    config.dims = vec![2, 3];
    config.seeds = vec![0, 1];
    config.family = Some("stable:1.5".into());
    config.budgets.mc = 20_000;
    config.output = Some(dir.path().join("report"));
    run(&config).expect("first run");
    let json_a = fs::read(dir.path().join("report.json")).expect("read json");
    let csv_a = fs::read(dir.path().join("report.csv")).expect("read csv");
    run(&config).expect("second run");
    let json_b = fs::read(dir.path().join("report.json")).expect("reread json");
    let csv_b = fs::read(dir.path().join("report.csv")).expect("reread csv");
    let pass = json_a == json_b && csv_a == csv_b;
    verdict(
        10,
        "determinism",
        pass,
        &format!(
            "identical reruns reproduce {} json bytes and {} csv bytes exactly",
            json_a.len(),
            csv_a.len()
        ),
    );
}
