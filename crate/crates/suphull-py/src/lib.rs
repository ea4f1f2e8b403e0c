//! Python bindings for the suphull library: index sets, hull covers, the
//! truncated-moment functionals, and the cover constructions.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use nalgebra::{DMatrix, DVector};
use suphull::constructions::{
    block_cover_b2, ellipsoid_cover, extract_cover_from_partition, gamma_partition, lq_embed,
    rotation_cover_with, separated_net, RotationConfig,
};
use suphull::functionals::LittleMode;
use suphull::{default_config, run, ExperimentKind, RandomFamily};

fn err(e: suphull::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_vectors(points: Vec<Vec<f64>>) -> PyResult<Vec<DVector<f64>>> {
    if points.is_empty() {
        return Err(PyValueError::new_err("point list is empty"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(PyValueError::new_err("points have mixed dimensions"));
    }
    Ok(points.into_iter().map(DVector::from_vec).collect())
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(PyValueError::new_err("matrix rows are empty or ragged"));
    }
    let ncols = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn from_vectors(points: &[DVector<f64>]) -> Vec<Vec<f64>> {
    points.iter().map(|p| p.iter().copied().collect()).collect()
}

/// Coordinate law of the process, parsed from a spec string such as
/// "gaussian", "rademacher", "student:9", "weibull:0.5", or "stable:1.5".
#[pyclass(name = "Family")]
#[derive(Clone)]
struct PyFamily {
    inner: RandomFamily,
}

#[pymethods]
impl PyFamily {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(PyFamily { inner: spec.parse().map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("Family(\"{}\")", self.inner)
    }
}

/// Monte Carlo estimate with its standard error.
#[pyclass(name = "Estimate")]
#[derive(Clone)]
struct PyEstimate {
    #[pyo3(get)]
    value: f64,
    #[pyo3(get)]
    stderr: f64,
    #[pyo3(get)]
    count: u64,
    #[pyo3(get)]
    seed: u64,
}

impl From<suphull::Estimate> for PyEstimate {
    fn from(e: suphull::Estimate) -> Self {
        PyEstimate { value: e.value, stderr: e.stderr, count: e.count, seed: e.seed }
    }
}

#[pymethods]
impl PyEstimate {
    fn __repr__(&self) -> String {
        format!("Estimate(value={:.6}, stderr={:.2e})", self.value, self.stderr)
    }
}

/// Bounded index set T with a support-function oracle.
#[pyclass(name = "IndexSet")]
#[derive(Clone)]
struct PyIndexSet {
    inner: suphull::IndexSet,
}

#[pymethods]
impl PyIndexSet {
    #[staticmethod]
    #[pyo3(signature = (n, radius=1.0))]
    fn l1_ball(n: usize, radius: f64) -> PyResult<Self> {
        Ok(PyIndexSet { inner: suphull::IndexSet::l1_ball(n, radius).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (n, radius=1.0))]
    fn l2_ball(n: usize, radius: f64) -> PyResult<Self> {
        Ok(PyIndexSet { inner: suphull::IndexSet::l2_ball(n, radius).map_err(err)? })
    }

    /// q >= 2; pass float("inf") for the cube.
    #[staticmethod]
    #[pyo3(signature = (n, q, radius=1.0))]
    fn lq_ball(n: usize, q: f64, radius: f64) -> PyResult<Self> {
        Ok(PyIndexSet { inner: suphull::IndexSet::lq_ball(n, q, radius).map_err(err)? })
    }

    /// Ellipsoid with orthonormal axis rows u and semi-axis lengths.
    #[staticmethod]
    fn ellipsoid(u: Vec<Vec<f64>>, axes: Vec<f64>) -> PyResult<Self> {
        let u = to_matrix(u)?;
        let axes = DVector::from_vec(axes);
        Ok(PyIndexSet { inner: suphull::IndexSet::ellipsoid(u, axes).map_err(err)? })
    }

    #[staticmethod]
    fn finite(points: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyIndexSet { inner: suphull::IndexSet::finite(to_vectors(points)?).map_err(err)? })
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyIndexSet { inner: suphull::IndexSet::load(&path).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("IndexSet(dimension={})", self.inner.dimension())
    }
}

/// Finite cover S with center t0 such that T - t0 lies in conv(S U -S).
#[pyclass(name = "Cover")]
#[derive(Clone)]
struct PyCover {
    inner: suphull::HullCover,
}

#[pymethods]
impl PyCover {
    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        from_vectors(&self.inner.points)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn claimed_radius(&self) -> f64 {
        self.inner.claimed_radius
    }

    fn __len__(&self) -> usize {
        self.inner.points.len()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCover { inner: suphull::HullCover::load(&path).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "Cover(points={}, dimension={})",
            self.inner.points.len(),
            self.inner.dimension()
        )
    }
}

/// Sampled containment check of an index set against a cover.
#[pyclass(name = "Probe")]
struct PyProbe {
    #[pyo3(get)]
    worst_ratio: f64,
    #[pyo3(get)]
    directions: usize,
}

#[pymethods]
impl PyProbe {
    fn contained(&self, tol: f64) -> bool {
        self.worst_ratio <= 1.0 + tol
    }

    fn __repr__(&self) -> String {
        format!("Probe(worst_ratio={:.6}, directions={})", self.worst_ratio, self.directions)
    }
}

/// Fixed-point form of the truncated-moment functional over the points of S.
#[pyfunction]
#[pyo3(signature = (points, family, budget=200_000, seed=0))]
fn tilde_m(points: Vec<Vec<f64>>, family: &PyFamily, budget: usize, seed: u64) -> PyResult<PyEstimate> {
    let pts = to_vectors(points)?;
    Ok(suphull::tilde_m(&pts, &family.inner, budget, seed).map_err(err)?.into())
}

/// Infimum form of the truncated-moment functional over the points of S.
#[pyfunction]
#[pyo3(signature = (points, family, budget=200_000, seed=0))]
fn big_m(points: Vec<Vec<f64>>, family: &PyFamily, budget: usize, seed: u64) -> PyResult<PyEstimate> {
    let pts = to_vectors(points)?;
    Ok(suphull::big_m(&pts, &family.inner, budget, seed).map_err(err)?.into())
}

/// Enumeration functional: best ordering of S under position-weighted norms.
/// Returns the estimate and the achieving enumeration.
#[pyfunction]
#[pyo3(signature = (points, family, exact=false, budget=50_000, seed=0))]
fn little_m(
    points: Vec<Vec<f64>>,
    family: &PyFamily,
    exact: bool,
    budget: usize,
    seed: u64,
) -> PyResult<(PyEstimate, Vec<usize>)> {
    let pts = to_vectors(points)?;
    let mode = if exact { LittleMode::ExactSmall } else { LittleMode::Heuristic };
    let res = suphull::little_m(&pts, &family.inner, mode, budget, seed).map_err(err)?;
    Ok((res.estimate.into(), res.ordering))
}

/// Monte Carlo estimate of b_X(T) = E sup over T of <t, X>.
#[pyfunction]
#[pyo3(signature = (set, family, budget=200_000, seed=0))]
fn b_sup(set: &PyIndexSet, family: &PyFamily, budget: usize, seed: u64) -> PyResult<PyEstimate> {
    Ok(suphull::b_sup(&set.inner, &family.inner, budget, seed).map_err(err)?.into())
}

/// Hull membership test: weights putting x in conv(S U -S), or None.
#[pyfunction]
#[pyo3(signature = (x, points, tol=1e-6))]
fn member_abs_hull(x: Vec<f64>, points: Vec<Vec<f64>>, tol: f64) -> PyResult<Option<Vec<f64>>> {
    let pts = to_vectors(points)?;
    suphull::member_abs_hull(&DVector::from_vec(x), &pts, tol).map_err(err)
}

/// Probes sampled and extreme directions for max h_T / h_cover.
#[pyfunction]
#[pyo3(signature = (set, cover, directions=10_000, seed=0))]
fn containment_probe(
    set: &PyIndexSet,
    cover: &PyCover,
    directions: usize,
    seed: u64,
) -> PyResult<PyProbe> {
    let probe =
        suphull::containment_probe(&set.inner, &cover.inner, directions, seed).map_err(err)?;
    Ok(PyProbe { worst_ratio: probe.worst_ratio, directions: probe.directions })
}

/// Greedy maximal separated subset of the unit ball in dimension k.
#[pyfunction]
#[pyo3(name = "separated_net", signature = (k, separation=0.5, budget=30_000, seed=0))]
fn py_separated_net(k: usize, separation: f64, budget: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_vectors(&separated_net(k, separation, budget, seed).map_err(err)?))
}

/// Cover of the unit euclidean ball glued from coordinate-block nets.
#[pyfunction]
#[pyo3(name = "block_cover_b2", signature = (n, k, budget=30_000, seed=0))]
fn py_block_cover_b2(n: usize, k: usize, budget: usize, seed: u64) -> PyResult<PyCover> {
    Ok(PyCover { inner: block_cover_b2(n, k, budget, seed).map_err(err)? })
}

/// Block cover under the best of `trials` scored rotations.
#[pyfunction]
#[pyo3(signature = (n, family, trials=16, seed=0, budget=20_000))]
fn rotation_cover_b2(
    n: usize,
    family: &PyFamily,
    trials: usize,
    seed: u64,
    budget: usize,
) -> PyResult<PyCover> {
    let config = RotationConfig { trials, ..RotationConfig::default() };
    let (cover, _) = rotation_cover_with(n, &family.inner, &config, seed, budget).map_err(err)?;
    Ok(PyCover { inner: cover })
}

/// Dyadic block cover of an ellipsoid index set.
#[pyfunction]
#[pyo3(name = "ellipsoid_cover", signature = (set, family, trials=6, seed=0, budget=20_000))]
fn py_ellipsoid_cover(
    set: &PyIndexSet,
    family: &PyFamily,
    trials: usize,
    seed: u64,
    budget: usize,
) -> PyResult<PyCover> {
    let (cover, _) = ellipsoid_cover(&set.inner, &family.inner, trials, seed, budget).map_err(err)?;
    Ok(PyCover { inner: cover })
}

/// Diagonal expansion embedding A B_q^n into an ellipsoid.
/// Returns (diagonal, ellipsoid index set, column normalizer).
#[pyfunction]
#[pyo3(name = "lq_embed")]
fn py_lq_embed(a: Vec<Vec<f64>>, q: f64) -> PyResult<(Vec<f64>, PyIndexSet, f64)> {
    let emb = lq_embed(&to_matrix(a)?, q).map_err(err)?;
    let d = emb.d.iter().copied().collect();
    Ok((d, PyIndexSet { inner: emb.set }, emb.scale))
}

/// Builds a partition tree over finite T and extracts a hull cover from its
/// increments. Returns the cover and the tree's chaining upper bound.
#[pyfunction]
#[pyo3(signature = (points, family, max_levels=6, seed=0, budget=20_000))]
fn extract_cover(
    points: Vec<Vec<f64>>,
    family: &PyFamily,
    max_levels: usize,
    seed: u64,
    budget: usize,
) -> PyResult<(PyCover, f64)> {
    let pts = to_vectors(points)?;
    let (tree, gamma_upper) =
        gamma_partition(&pts, &family.inner, max_levels, seed, budget).map_err(err)?;
    let cover = extract_cover_from_partition(&tree, &family.inner, budget).map_err(err)?;
    Ok((PyCover { inner: cover }, gamma_upper))
}

/// Runs a named experiment with its default configuration, optionally
/// overriding the family, dims, seeds, or sample budget. Returns whether
/// every check in the experiment passed.
#[pyfunction]
#[pyo3(signature = (name, family=None, dims=None, seeds=None, mc=None, out=None))]
fn run_experiment(
    name: &str,
    family: Option<String>,
    dims: Option<Vec<usize>>,
    seeds: Option<Vec<u64>>,
    mc: Option<usize>,
    out: Option<PathBuf>,
) -> PyResult<bool> {
    let kind: ExperimentKind = name.parse().map_err(err)?;
    let mut config = default_config(kind);
    if family.is_some() {
        config.family = family;
    }
    if let Some(dims) = dims {
        config.dims = dims;
    }
    if let Some(seeds) = seeds {
        config.seeds = seeds;
    }
    if let Some(mc) = mc {
        config.budgets.mc = mc;
    }
    config.output = out;
    Ok(run(&config).map_err(err)?.summary.passed)
}

#[pymodule]
fn suphull_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFamily>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyIndexSet>()?;
    m.add_class::<PyCover>()?;
    m.add_class::<PyProbe>()?;
    m.add_function(wrap_pyfunction!(tilde_m, m)?)?;
    m.add_function(wrap_pyfunction!(big_m, m)?)?;
    m.add_function(wrap_pyfunction!(little_m, m)?)?;
    m.add_function(wrap_pyfunction!(b_sup, m)?)?;
    m.add_function(wrap_pyfunction!(member_abs_hull, m)?)?;
    m.add_function(wrap_pyfunction!(containment_probe, m)?)?;
    m.add_function(wrap_pyfunction!(py_separated_net, m)?)?;
    m.add_function(wrap_pyfunction!(py_block_cover_b2, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_cover_b2, m)?)?;
    m.add_function(wrap_pyfunction!(py_ellipsoid_cover, m)?)?;
    m.add_function(wrap_pyfunction!(py_lq_embed, m)?)?;
    m.add_function(wrap_pyfunction!(extract_cover, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
