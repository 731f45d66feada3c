//! Python bindings: `import pmerge`.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pmerge_core::analysis::{m_family_domination, Relation};
use pmerge_core::classic;
use pmerge_core::discovery;
use pmerge_core::induced;
use pmerge_core::method::{self, MethodSpec};
use pmerge_core::simlab::{self, DiscreteScenario, ZTestModel};
use pmerge_core::PVector;

/// `(relation, witness, counter_witness)`.
type Verdict = (String, Option<Vec<f64>>, Option<Vec<f64>>);
/// Per method, `(threshold, fraction)` pairs.
type Cdfs = Vec<(String, Vec<(f64, f64)>)>;

create_exception!(pmerge, MergeError, PyValueError, "Invalid input, method or parameter.");

fn err(e: pmerge_core::MergeError) -> PyErr {
    MergeError::new_err(e.to_string())
}

fn pvector(p: Vec<f64>) -> PyResult<PVector> {
    PVector::new(p).map_err(err)
}

fn spec(method: &str) -> PyResult<MethodSpec> {
    method.parse().map_err(err)
}

#[pyclass(frozen, module = "pmerge")]
struct MergeResult {
    #[pyo3(get)]
    p: f64,
    #[pyo3(get)]
    method_tag: String,
    #[pyo3(get)]
    accuracy_bound: f64,
}

#[pymethods]
impl MergeResult {
    fn __repr__(&self) -> String {
        format!("MergeResult(p={}, method_tag={:?}, accuracy_bound={})", self.p, self.method_tag, self.accuracy_bound)
    }

    fn __float__(&self) -> f64 {
        self.p
    }
}

impl From<pmerge_core::MergeResult> for MergeResult {
    fn from(r: pmerge_core::MergeResult) -> Self {
        Self { p: r.p, method_tag: r.method_tag, accuracy_bound: r.accuracy_bound }
    }
}

/// A method string bound to `k` p-values.
#[pyclass(frozen, module = "pmerge")]
struct MergeMethod {
    inner: method::MergeMethod,
}

#[pymethods]
impl MergeMethod {
    #[new]
    fn new(method: &str, k: usize) -> PyResult<Self> {
        Ok(Self { inner: spec(method)?.bind(k).map_err(err)? })
    }

    #[getter]
    fn arity(&self) -> usize {
        self.inner.arity()
    }

    #[getter]
    fn universally_valid(&self) -> bool {
        self.inner.spec().is_universally_valid()
    }

    fn merge(&self, p: Vec<f64>) -> PyResult<MergeResult> {
        Ok(self.inner.merge(&pvector(p)?).map_err(err)?.into())
    }

    fn __call__(&self, p: Vec<f64>) -> PyResult<f64> {
        Ok(self.merge(p)?.p)
    }

    fn __repr__(&self) -> String {
        format!("MergeMethod({:?}, k={})", self.inner.spec().to_string(), self.inner.arity())
    }
}

#[pyclass(frozen, module = "pmerge")]
struct MCoefficients {
    #[pyo3(get)]
    r: f64,
    #[pyo3(get)]
    k: usize,
    #[pyo3(get)]
    c_r: f64,
    #[pyo3(get)]
    d_r: f64,
    #[pyo3(get)]
    b_rk: f64,
    #[pyo3(get)]
    residual: f64,
}

#[pymethods]
impl MCoefficients {
    fn __repr__(&self) -> String {
        format!("MCoefficients(r={}, k={}, c_r={}, d_r={}, b_rk={})", self.r, self.k, self.c_r, self.d_r, self.b_rk)
    }
}

#[pyclass(frozen, module = "pmerge")]
struct DiscoveryMatrix {
    inner: discovery::DiscoveryMatrix,
}

#[pymethods]
impl DiscoveryMatrix {
    #[getter]
    fn corner(&self) -> usize {
        self.inner.corner
    }

    /// Rows `l = 1..corner`, each of length `l`.
    #[getter]
    fn dm(&self) -> Vec<Vec<f64>> {
        self.inner.dm.clone()
    }

    #[getter]
    fn dm_prime(&self) -> Vec<Vec<f64>> {
        self.inner.dm_prime.clone()
    }

    fn get(&self, l: usize, j: usize) -> PyResult<f64> {
        if l == 0 || l > self.inner.corner || j == 0 || j > l {
            return Err(MergeError::new_err(format!("cell ({l}, {j}) outside the triangle")));
        }
        Ok(self.inner.get(l, j))
    }

    /// Number of true discoveries among the `l` smallest p-values that can
    /// be claimed at level `alpha`.
    fn lower_bound(&self, l: usize, alpha: f64) -> PyResult<usize> {
        discovery::true_discovery_lower_bound(&self.inner, l, alpha).map_err(err)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }
}

/// Combined p-value of `p` under `method`.
#[pyfunction]
fn merge(p: Vec<f64>, method: &str) -> PyResult<MergeResult> {
    let p = pvector(p)?;
    Ok(spec(method)?.bind(p.len()).map_err(err)?.merge(&p).map_err(err)?.into())
}

#[pyfunction]
fn simes(p: Vec<f64>) -> PyResult<f64> {
    Ok(classic::simes(&pvector(p)?))
}

#[pyfunction]
fn hommel(p: Vec<f64>) -> PyResult<f64> {
    Ok(classic::hommel(&pvector(p)?))
}

#[pyfunction]
fn grid_harmonic(p: Vec<f64>) -> PyResult<f64> {
    Ok(induced::grid_harmonic(&pvector(p)?))
}

#[pyfunction]
fn coefficients(r: f64, k: usize) -> PyResult<MCoefficients> {
    let c = classic::solve_m_coefficients(r, k).map_err(err)?;
    Ok(MCoefficients { r: c.r, k: c.k, c_r: c.c_r, d_r: c.d_r, b_rk: c.b_rk, residual: c.residual })
}

#[pyfunction]
#[pyo3(signature = (p, family, corner = discovery::DEFAULT_CORNER))]
fn discovery_matrix(py: Python<'_>, p: Vec<f64>, family: &str, corner: usize) -> PyResult<DiscoveryMatrix> {
    let (p, family) = (pvector(p)?, spec(family)?);
    let inner = py.detach(|| discovery::discovery_matrix(&p, &family, corner)).map_err(err)?;
    Ok(DiscoveryMatrix { inner })
}

/// `γ_K` as an exact fraction `(numerator, denominator)`.
#[pyfunction]
fn gamma_k(k: usize) -> PyResult<(u64, u64)> {
    induced::gamma_k_exact(k).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (k, k1, method, alpha = 0.01, discretize = None))]
fn borderline_epsilon(py: Python<'_>, k: usize, k1: usize, method: &str, alpha: f64, discretize: Option<u64>) -> PyResult<f64> {
    let bound = spec(method)?.bind(k).map_err(err)?;
    let scenario = DiscreteScenario { k, k1, alpha_target: alpha };
    py.detach(|| simlab::borderline_epsilon_with(&scenario, &bound, discretize)).map_err(err)
}

/// Empirical CDFs `{method: [(threshold, fraction), ...]}` under the
/// correlated z-test model, all methods sharing the same draws.
#[pyfunction]
#[pyo3(signature = (k, k1, rho, methods, reps = 10_000, grid_points = simlab::DEFAULT_CDF_POINTS, upper = 1.0, seed = 42))]
#[allow(clippy::too_many_arguments)]
fn empirical_cdf(
    py: Python<'_>,
    k: usize,
    k1: usize,
    rho: f64,
    methods: Vec<String>,
    reps: usize,
    grid_points: usize,
    upper: f64,
    seed: u64,
) -> PyResult<Cdfs> {
    let model = ZTestModel::new(k, k1, rho, seed).map_err(err)?;
    let bound = methods.iter().map(|m| spec(m)?.bind(k).map_err(err)).collect::<PyResult<Vec<_>>>()?;
    let grid = simlab::threshold_grid(grid_points, upper);
    let cdfs = py.detach(|| simlab::empirical_cdfs(&model, &bound, reps, &grid)).map_err(err)?;
    Ok(methods.into_iter().zip(cdfs).collect())
}

/// `(relation, witness, counter_witness)` for `F_{r,K}` against `F_{s,K}`.
#[pyfunction]
fn m_domination(r: f64, s: f64, k: usize) -> PyResult<Verdict> {
    let v = m_family_domination(r, s, k).map_err(err)?;
    let rel = match v.relation {
        Relation::FirstDominates => "first_dominates",
        Relation::SecondDominates => "second_dominates",
        Relation::Incomparable => "incomparable",
    };
    Ok((rel.to_owned(), v.witness, v.counter_witness))
}

#[pymodule]
pub fn pmerge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MergeError", m.py().get_type::<MergeError>())?;
    m.add_class::<MergeResult>()?;
    m.add_class::<MergeMethod>()?;
    m.add_class::<MCoefficients>()?;
    m.add_class::<DiscoveryMatrix>()?;
    m.add_function(wrap_pyfunction!(merge, m)?)?;
    m.add_function(wrap_pyfunction!(simes, m)?)?;
    m.add_function(wrap_pyfunction!(hommel, m)?)?;
    m.add_function(wrap_pyfunction!(grid_harmonic, m)?)?;
    m.add_function(wrap_pyfunction!(coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(discovery_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_k, m)?)?;
    m.add_function(wrap_pyfunction!(borderline_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(m_domination, m)?)?;
    Ok(())
}
