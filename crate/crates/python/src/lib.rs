//! Python bindings.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pushedfront::bbm_sim::{simulate, SimConfig};
use pushedfront::cpp::{cpp_moment, pair_depth_cdf as pair_cdf, sample_h};
use pushedfront::fkpp::{kolmogorov_check as kcheck, FkppConfig};
use pushedfront::harness::{run_experiment as run_exp, Experiment};
use pushedfront::rng::stream;
use pushedfront::semigroup::KernelEvaluator;
use pushedfront::spectral::harmonic_data;
use pushedfront::{Error, Potential, SpectralData as CoreSpectral, SpectralOptions};

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidPotential(_) | Error::UnsupportedRegime { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Spectral data of the branching operator on `[0, L]`.
#[pyclass]
struct SpectralData {
    inner: CoreSpectral,
}

#[pymethods]
impl SpectralData {
    /// `potential` is `zero`, `step:<b>`, `bump:<a>` or `table:<file>`.
    #[new]
    fn new(potential: &str, l: f64) -> PyResult<Self> {
        let pot = Potential::parse_spec(potential).map_err(err)?;
        let inner = CoreSpectral::build(&pot, l, &SpectralOptions::default()).map_err(err)?;
        Ok(SpectralData { inner })
    }

    /// Spectral data on `[0, L(N)]`.
    #[staticmethod]
    fn for_population(potential: &str, n: f64) -> PyResult<Self> {
        let pot = Potential::parse_spec(potential).map_err(err)?;
        let (inner, _) = harmonic_data(&pot, n, &SpectralOptions::default()).map_err(err)?;
        Ok(SpectralData { inner })
    }

    #[getter]
    fn l(&self) -> f64 {
        self.inner.l
    }
    #[getter]
    fn lambda_inf(&self) -> f64 {
        self.inner.lambda_inf
    }
    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[getter]
    fn regime(&self) -> &'static str {
        self.inner.regime.name()
    }
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigen.iter().map(|e| e.lambda).collect()
    }
    fn sigma2(&self) -> PyResult<f64> {
        self.inner.sigma2().map_err(err)
    }
    fn h(&self, t: f64, x: f64) -> f64 {
        self.inner.h(t, x)
    }
    fn h_tilde(&self, t: f64, x: f64) -> f64 {
        self.inner.h_tilde(t, x)
    }
    fn pi(&self, x: f64) -> f64 {
        self.inner.pi(x)
    }
    fn h_inf(&self, x: f64) -> PyResult<f64> {
        Ok(self.inner.limit().map_err(err)?.h(x))
    }
    fn heat_kernel(&self, t: f64, x: f64, y: f64) -> PyResult<f64> {
        KernelEvaluator::new(&self.inner).heat_kernel(t, x, y).map_err(err)
    }
    fn spine_kernel(&self, t: f64, x: f64, y: f64) -> PyResult<f64> {
        KernelEvaluator::new(&self.inner).spine_kernel(t, x, y).map_err(err)
    }
    /// `E_x[Z_t]`.
    fn mass(&self, t: f64, x: f64) -> PyResult<f64> {
        KernelEvaluator::new(&self.inner).mass(t, x).map_err(err)
    }
    /// `(N u(tN, x), 2 h^inf(x) / (Sigma^2 t), rel_err)` from the FKPP solver.
    fn kolmogorov_check(&self, n: f64, t: f64, x: f64) -> PyResult<(f64, f64, f64)> {
        let cfg = FkppConfig {
            t_end: t * n,
            ..Default::default()
        };
        let k = kcheck(&self.inner, n, t, x, &cfg).map_err(err)?;
        Ok((k.lhs, k.rhs, k.rel_err))
    }
}

/// Simulates one replica from a JSON simulation config; returns the
/// alive positions at the horizon in planar order.
#[pyfunction]
fn simulate_alive(config_json: &str) -> PyResult<Vec<f64>> {
    let cfg: SimConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let f = simulate(&cfg).map_err(err)?;
    Ok(f.alive().into_iter().map(|p| p.1).collect())
}

/// `k` draws of the pairwise genealogy `H_{i,j}` (upper triangle) at depth `t`.
#[pyfunction]
fn sample_genealogy(k: usize, t: f64, draws: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let mut rng = stream(seed, 0);
    (0..draws)
        .map(|_| sample_h(k, t, None, &mut rng).map(|h| h.pairs()).map_err(err))
        .collect()
}

/// CDF of the depth of two uniform leaves.
#[pyfunction]
fn pair_depth_cdf(s: f64, t: f64) -> f64 {
    pair_cdf(s, t)
}

/// `k! t^k prod m_i`: moment functional with `psi = 1`.
#[pyfunction]
fn cpp_moment_constant(k: usize, t: f64, masses: Vec<f64>) -> PyResult<f64> {
    let one = |_: usize, _: usize, _: f64| 1.0;
    cpp_moment(k, t, &one, &masses, 20_000, 1).map(|m| m.value).map_err(err)
}

/// Runs an experiment given as JSON; returns `(passed, report_json)`.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<(bool, String)> {
    let exp = Experiment::from_json(config_json).map_err(err)?;
    let report = py.allow_threads(|| run_exp(&exp)).map_err(err)?;
    let json = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((report.passed(), json))
}

#[pymodule]
fn pushedfront_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SpectralData>()?;
    m.add_function(wrap_pyfunction!(simulate_alive, m)?)?;
    m.add_function(wrap_pyfunction!(sample_genealogy, m)?)?;
    m.add_function(wrap_pyfunction!(pair_depth_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(cpp_moment_constant, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
