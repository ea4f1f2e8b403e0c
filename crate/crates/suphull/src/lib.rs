//! Upper bounds for the expected supremum of a canonical process over a
//! convex index set, via finite covers whose symmetric convex hull contains
//! the set.
//!
//! The pieces: `distributions` defines the coordinate laws X, `geometry` the
//! index sets, hull covers, and containment checks, `functionals` the
//! quantities M, M-tilde, m, and the Monte Carlo supremum b, and
//! `constructions` the cover builders (separated nets, block and rotation
//! covers of the ball, ellipsoid decompositions, l_q embeddings, partition
//! trees). `cli` drives the experiment suites behind the binary.

pub mod cli;
pub mod constructions;
pub mod distributions;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod rng;

pub use cli::{
    default_config, parse_set_spec, print_report, run, Budgets, ExperimentConfig,
    ExperimentKind, ExperimentReport,
};
pub use distributions::{sample_matrix, RandomFamily};
pub use error::{Error, Result};
pub use functionals::{b_sup, big_m, compare, little_m, m_functionals, tilde_m, Estimate, FunctionalReport};
pub use geometry::{containment_probe, member_abs_hull, HullCover, IndexSet, ProbeReport, Provenance};
