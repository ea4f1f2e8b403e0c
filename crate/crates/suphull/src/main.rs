use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use suphull::cli::{self, ExperimentKind};
use suphull::constructions::{
    auto_block_size, block_cover_b2, ellipsoid_cover, lq_cover, net_cover, rotation_cover_with,
    RotationConfig,
};
use suphull::functionals::{compare, little_m, LittleMode};
use suphull::{
    b_sup, containment_probe, m_functionals, parse_set_spec, Error, HullCover, RandomFamily,
    Result,
};

#[derive(Parser)]
#[command(
    name = "suphull",
    version,
    about = "Upper bounds for expected suprema of canonical processes via convex hull covers"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the functionals of an index set, a stored cover, or both.
    Estimate {
        /// Index set: l1:N, l2:N, lq:Q:N (Q may be inf), ellipsoid:A1,A2,..., file:PATH.
        #[arg(long)]
        set: Option<String>,
        /// Path to a cover written by `suphull cover`.
        #[arg(long)]
        cover: Option<PathBuf>,
        /// Coordinate law: gaussian, rademacher, uniform, weibull:K, student:DF, stable:P.
        #[arg(long, default_value = "gaussian")]
        family: String,
        /// Monte Carlo samples per estimate.
        #[arg(long, default_value_t = 200_000)]
        mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a cover and save it as JSON.
    Cover {
        /// One of: net, block, rotation, ellipsoid, lq.
        kind: String,
        /// Ambient dimension (net, block, rotation, lq).
        #[arg(long)]
        n: Option<usize>,
        /// Family the scored builders (rotation, ellipsoid, lq) tune against.
        #[arg(long, default_value = "gaussian")]
        family: String,
        /// Separation of the net in (0, 1).
        #[arg(long, default_value_t = 0.5)]
        sep: f64,
        /// Block width; defaults to the 2 log10 n rule.
        #[arg(long)]
        block_k: Option<usize>,
        /// Order q >= 2 or `inf` for the lq builder.
        #[arg(long)]
        q: Option<String>,
        /// Comma-separated semiaxes for the ellipsoid builder.
        #[arg(long)]
        axes: Option<String>,
        /// Rotation trials for the scored builders.
        #[arg(long, default_value_t = 16)]
        trials: usize,
        /// Candidate budget for nets, sample budget for scoring.
        #[arg(long, default_value_t = 30_000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the serialized cover.
        #[arg(long)]
        out: PathBuf,
    },
    /// Probe a stored cover against an index set and re-check the bounds.
    Verify {
        /// Index set spec, as for estimate.
        #[arg(long)]
        set: String,
        /// Path to the cover under test.
        #[arg(long)]
        cover: PathBuf,
        #[arg(long, default_value = "gaussian")]
        family: String,
        /// Probe directions.
        #[arg(long, default_value_t = 10_000)]
        directions: usize,
        #[arg(long, default_value_t = 100_000)]
        mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Containment slack the probe may report before failing.
        #[arg(long, default_value_t = 1e-2)]
        tol: f64,
    },
    /// Run a named experiment suite and print its report.
    Experiment {
        /// b1, b2, ellipsoid, bq, stable-counterexample, gamma, sandwich.
        name: String,
        /// Family override; default depends on the experiment.
        #[arg(long)]
        family: Option<String>,
        /// Comma-separated dimensions.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        directions: Option<usize>,
        /// Base path: the report is written to <out>.json and <out>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

// die on SIGPIPE like other pipeline tools instead of panicking
// mid-report when the reader closes early
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let args = Args::parse();
    match dispatch(args.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Estimate { set, cover, family, mc, seed } => {
            run_estimate(set.as_deref(), cover.as_deref(), &family, mc, seed)
        }
        Command::Cover { kind, n, family, sep, block_k, q, axes, trials, budget, seed, out } => {
            run_cover(&kind, n, &family, sep, block_k, q.as_deref(), axes.as_deref(), trials, budget, seed, &out)
        }
        Command::Verify { set, cover, family, directions, mc, seed, tol } => {
            run_verify(&set, &cover, &family, directions, mc, seed, tol)
        }
        Command::Experiment { name, family, dims, seeds, mc, trials, directions, out } => {
            run_experiment(&name, family, dims, seeds, mc, trials, directions, out)
        }
    }
}

fn print_estimate(name: &str, value: f64, stderr: f64) {
    println!("{name:<10} {value:>12.6}  (stderr {stderr:.2e})");
}

fn run_estimate(
    set_spec: Option<&str>,
    cover_path: Option<&Path>,
    family_spec: &str,
    mc: usize,
    seed: u64,
) -> Result<bool> {
    let family: RandomFamily = family_spec.parse()?;
    let set = set_spec.map(parse_set_spec).transpose()?;
    let cover = cover_path.map(HullCover::load).transpose()?;
    match (set, cover) {
        (Some(set), Some(cover)) => {
            let report = compare(&set, &cover, &family, mc, seed)?;
            print_estimate("b_sup", report.b_sup.as_ref().unwrap().value, report.b_sup.as_ref().unwrap().stderr);
            print_estimate("m_tilde", report.m_tilde.value, report.m_tilde.stderr);
            print_estimate("m_big", report.m_big.value, report.m_big.stderr);
            if let Some(lm) = &report.m_little {
                print_estimate("m_little", lm.value, lm.stderr);
            }
            if let Some(r) = report.ratio_m_over_b {
                println!("{:<10} {:>12.6}", "M/b", r);
            }
            let upper = report.upper_bound_ok.unwrap_or(true);
            println!("sandwich {}  upper bound {}", verdict(report.sandwich_ok), verdict(upper));
            Ok(report.sandwich_ok && upper)
        }
        (Some(set), None) => {
            let b = b_sup(&set, &family, mc, seed)?;
            print_estimate("b_sup", b.value, b.stderr);
            Ok(true)
        }
        (None, Some(cover)) => {
            let (mt, mb) = m_functionals(&cover.points, &family, mc, seed)?;
            print_estimate("m_tilde", mt.value, mt.stderr);
            print_estimate("m_big", mb.value, mb.stderr);
            let count = cover.points.len();
            if count > 0 && count <= 64 {
                let order = (std::f64::consts::E + count as f64).ln();
                if order < family.max_finite_moment() {
                    let lm = little_m(
                        &cover.points,
                        &family,
                        LittleMode::Heuristic,
                        mc.min(50_000),
                        seed,
                    )?;
                    print_estimate("m_little", lm.estimate.value, lm.estimate.stderr);
                }
            }
            let ok = mt.value <= mb.value + 3.0 * (mt.stderr.hypot(mb.stderr))
                && mb.value <= 2.0 * mt.value + 3.0 * (mb.stderr.hypot(2.0 * mt.stderr));
            println!("sandwich {}", verdict(ok));
            Ok(ok)
        }
        (None, None) => Err(Error::InvalidParameter(
            "estimate needs --set, --cover, or both".into(),
        )),
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "VIOLATED"
    }
}

#[allow(clippy::too_many_arguments)]
fn run_cover(
    kind: &str,
    n: Option<usize>,
    family_spec: &str,
    sep: f64,
    block_k: Option<usize>,
    q: Option<&str>,
    axes: Option<&str>,
    trials: usize,
    budget: usize,
    seed: u64,
    out: &Path,
) -> Result<bool> {
    let family: RandomFamily = family_spec.parse()?;
    let need_n = || {
        n.ok_or_else(|| Error::InvalidParameter(format!("cover kind `{kind}` needs --n")))
    };
    let cover = match kind {
        "net" => net_cover(need_n()?, sep, budget, seed)?,
        "block" => {
            let n = need_n()?;
            let k = block_k.unwrap_or_else(|| auto_block_size(n, 2.0));
            block_cover_b2(n, k, budget, seed)?
        }
        "rotation" => {
            let config = RotationConfig { trials, ..RotationConfig::default() };
            rotation_cover_with(need_n()?, &family, &config, seed, budget.clamp(1024, 8192))?.0
        }
        "ellipsoid" => {
            let axes = axes.ok_or_else(|| {
                Error::InvalidParameter("ellipsoid cover needs --axes A1,A2,...".into())
            })?;
            let set = parse_set_spec(&format!("ellipsoid:{axes}"))?;
            ellipsoid_cover(&set, &family, trials, seed, budget.clamp(1024, 8192))?.0
        }
        "lq" => {
            let n = need_n()?;
            let q = q.ok_or_else(|| Error::InvalidParameter("lq cover needs --q".into()))?;
            let q = if q == "inf" {
                f64::INFINITY
            } else {
                q.parse::<f64>().map_err(|_| Error::Parse(format!("bad order `{q}`")))?
            };
            lq_cover(&DMatrix::identity(n, n), q, &family, trials, seed, budget.clamp(1024, 8192))?.0
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown cover kind `{other}`; use net, block, rotation, ellipsoid, or lq"
            )))
        }
    };
    cover.save(out)?;
    println!(
        "wrote {} points (dimension {}, scale factor {:.4}) to {}",
        cover.points.len(),
        cover.dimension(),
        cover.claimed_radius,
        out.display()
    );
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn run_verify(
    set_spec: &str,
    cover_path: &Path,
    family_spec: &str,
    directions: usize,
    mc: usize,
    seed: u64,
    tol: f64,
) -> Result<bool> {
    let family: RandomFamily = family_spec.parse()?;
    let set = parse_set_spec(set_spec)?;
    let cover = HullCover::load(cover_path)?;
    let probe = containment_probe(&set, &cover, directions, seed)?;
    let contained = probe.contained(tol);
    println!(
        "containment: worst ratio {:.6} over {} directions, {} extreme points: {}",
        probe.worst_ratio,
        probe.directions,
        probe.extreme_points_checked,
        verdict(contained)
    );
    if !contained {
        println!("worst witness: {:?}", probe.witness);
    }
    let report = compare(&set, &cover, &family, mc, seed)?;
    let upper = report.upper_bound_ok.unwrap_or(true);
    if let (Some(b), Some(r)) = (&report.b_sup, report.ratio_m_over_b) {
        println!(
            "b_sup {:.6}  m_tilde {:.6}  m_big {:.6}  M/b {r:.3}",
            b.value, report.m_tilde.value, report.m_big.value
        );
    }
    println!("sandwich {}  upper bound {}", verdict(report.sandwich_ok), verdict(upper));
    Ok(contained && report.sandwich_ok && upper)
}

#[allow(clippy::too_many_arguments)]
fn run_experiment(
    name: &str,
    family: Option<String>,
    dims: Vec<usize>,
    seeds: Vec<u64>,
    mc: Option<usize>,
    trials: Option<usize>,
    directions: Option<usize>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let kind: ExperimentKind = name.parse()?;
    let mut config = cli::default_config(kind);
    if family.is_some() {
        config.family = family;
    }
    if !dims.is_empty() {
        config.dims = dims;
    }
    if !seeds.is_empty() {
        config.seeds = seeds;
    }
    if let Some(mc) = mc {
        config.budgets.mc = mc;
    }
    if let Some(trials) = trials {
        config.budgets.trials = trials;
    }
    if let Some(directions) = directions {
        config.budgets.directions = directions;
    }
    config.output = out;
    let report = cli::run(&config)?;
    cli::print_report(&report);
    if let Some(base) = &config.output {
        println!("report written to {0}.json and {0}.csv", base.display());
    }
    Ok(report.summary.passed)
}
