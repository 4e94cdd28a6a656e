//! Python bindings: test problems, noise, step-size plans and the solvers,
//! mirroring the CLI's semantics (initial guess 0, truth-tracked traces).

use ndarray::Array1;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use svrg_reg::harness::{self, Method, MethodSpec, StopSpec};
use svrg_reg::linop::Observation;
use svrg_reg::noise::{self, NoisyObservation};
use svrg_reg::problems::{self, ProblemInstance};
use svrg_reg::solvers::SolveTrace;
use svrg_reg::stepsize;
use svrg_reg::stopping;

fn err(e: svrg_reg::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A discretized test problem (operator, true solution, exact data).
#[pyclass(frozen, name = "Problem")]
struct Problem {
    inner: ProblemInstance,
}

#[pymethods]
impl Problem {
    #[staticmethod]
    fn phillips(n: usize) -> PyResult<Self> {
        Ok(Problem {
            inner: problems::phillips(n).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n, depth = None))]
    fn gravity(n: usize, depth: Option<f64>) -> PyResult<Self> {
        Ok(Problem {
            inner: problems::gravity(n, depth.unwrap_or(problems::GRAVITY_DEFAULT_DEPTH))
                .map_err(err)?,
        })
    }

    #[staticmethod]
    fn shaw(n: usize) -> PyResult<Self> {
        Ok(Problem {
            inner: problems::shaw(n).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(stem: &str) -> PyResult<Self> {
        Ok(Problem {
            inner: svrg_reg::fileio::read_problem(std::path::Path::new(stem)).map_err(err)?,
        })
    }

    fn save(&self, stem: &str) -> PyResult<()> {
        svrg_reg::fileio::write_problem(&self.inner, std::path::Path::new(stem)).map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.meta.name.clone()
    }

    #[getter]
    fn n_blocks(&self) -> usize {
        self.inner.n_blocks()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn x_true(&self) -> Vec<f64> {
        self.inner.x_true.to_vec()
    }

    #[getter]
    fn y_exact(&self) -> Vec<f64> {
        self.inner.y_exact.stacked().to_vec()
    }

    #[getter]
    fn grid_t(&self) -> Vec<f64> {
        self.inner.grid_t.to_vec()
    }

    /// Power-iteration estimate of ||A|| (cached).
    fn op_norm(&self) -> f64 {
        self.inner.operator.op_norm()
    }

    /// max_i ||A_i|| (cached).
    fn max_block_norm(&self) -> f64 {
        self.inner.operator.block_norm_max()
    }

    /// Lipschitz constant of the block gradients, max_i ||A_i||^2.
    fn block_lipschitz(&self) -> f64 {
        self.inner.operator.block_lipschitz()
    }

    /// Applies the forward operator to a vector.
    fn apply(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let y = self
            .inner
            .operator
            .apply(&Array1::from_vec(x))
            .map_err(err)?;
        Ok(y.into_stacked().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(name='{}', n={}, dim={})",
            self.inner.meta.name,
            self.inner.n_blocks(),
            self.inner.dim()
        )
    }
}

/// Perturbed data with its realized noise level.
#[pyclass(frozen, name = "NoisyData")]
struct NoisyData {
    inner: NoisyObservation,
}

#[pymethods]
impl NoisyData {
    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.observation.stacked().to_vec()
    }

    /// Realized ||y_noisy - y||.
    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn delta_rel(&self) -> f64 {
        self.inner.delta_rel
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!(
            "NoisyData(delta={:.6e}, delta_rel={}, seed={})",
            self.inner.delta, self.inner.delta_rel, self.inner.seed
        )
    }
}

/// Componentwise relative Gaussian noise `y_i + delta_rel * |y_i| * eps_i`.
#[pyfunction]
fn add_relative_noise(problem: &Problem, delta_rel: f64, seed: u64) -> PyResult<NoisyData> {
    Ok(NoisyData {
        inner: noise::add_relative_noise(&problem.inner.y_exact, delta_rel, seed).map_err(err)?,
    })
}

/// Gaussian perturbation rescaled so the realized level equals `delta`.
#[pyfunction]
fn add_absolute_noise(problem: &Problem, delta: f64, seed: u64) -> PyResult<NoisyData> {
    Ok(NoisyData {
        inner: noise::add_absolute_noise(&problem.inner.y_exact, delta, seed).map_err(err)?,
    })
}

/// Two-step-size plan with admissibility flags and derived constants.
#[pyclass(frozen, name = "StepSizePlan")]
struct PyStepSizePlan {
    inner: stepsize::StepSizePlan,
}

#[pymethods]
impl PyStepSizePlan {
    #[getter]
    fn gamma0(&self) -> f64 {
        self.inner.gamma0
    }

    #[getter]
    fn gamma1(&self) -> f64 {
        self.inner.gamma1
    }

    #[getter]
    fn admissible(&self) -> bool {
        self.inner.admissible
    }

    #[getter]
    fn c0(&self) -> Option<f64> {
        self.inner.c0
    }

    fn dp_constant_c1(&self, tau: f64) -> PyResult<f64> {
        stepsize::dp_constant_c1(&self.inner, tau).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "StepSizePlan(gamma0={:.6e}, gamma1={:.6e}, admissible={})",
            self.inner.gamma0, self.inner.gamma1, self.inner.admissible
        )
    }
}

/// Derives the plan `gamma0 = alpha/||A||^2`,
/// `gamma1 = beta * min(1/L, sqrt((2-alpha) alpha N / (2 m L)) / ||A||)`
/// for the given problem, with `m = max(1, round(m_frac * N))`.
#[pyfunction]
#[pyo3(signature = (problem, alpha = 1.0, beta = 0.99, m_frac = 0.1))]
fn plan_for(problem: &Problem, alpha: f64, beta: f64, m_frac: f64) -> PyResult<PyStepSizePlan> {
    let mut spec = MethodSpec::new(Method::Svrg);
    spec.alpha = alpha;
    spec.beta = beta;
    spec.m_frac = m_frac;
    let plan = harness::plan_for(&problem.inner, &spec)
        .map_err(err)?
        .expect("svrg methods carry a plan");
    Ok(PyStepSizePlan { inner: plan })
}

/// Record of one solver run.
#[pyclass(frozen, name = "Trace")]
struct Trace {
    #[pyo3(get)]
    residual_norms: Vec<f64>,
    /// Relative squared errors per epoch (the truth is known for generated
    /// problems).
    #[pyo3(get)]
    errors: Option<Vec<f64>>,
    #[pyo3(get)]
    stop_index: Option<usize>,
    #[pyo3(get)]
    non_termination: bool,
    #[pyo3(get)]
    final_x: Vec<f64>,
    #[pyo3(get)]
    wall_time: f64,
}

impl Trace {
    fn from_solve(t: SolveTrace) -> Self {
        Trace {
            wall_time: t.total_wall_time(),
            residual_norms: t.residual_norms,
            errors: t.errors,
            stop_index: t.stop_index,
            non_termination: t.non_termination,
            final_x: t.final_x.to_vec(),
        }
    }
}

fn run(
    problem: &Problem,
    method: MethodSpec,
    stop: StopSpec,
    noisy: &NoisyData,
    seed: u64,
    max_epochs: usize,
) -> PyResult<Trace> {
    let plan = harness::plan_for(&problem.inner, &method).map_err(err)?;
    let monitor = svrg_reg::solvers::Monitor::with_truth(&problem.inner.x_true);
    let trace = harness::execute_run(
        &problem.inner,
        &method,
        &stop,
        plan.as_ref(),
        &noisy.inner,
        seed,
        max_epochs,
        &monitor,
    )
    .map_err(err)?;
    Ok(Trace::from_solve(trace))
}

/// Landweber iteration from x0 = 0 (`gamma` defaults to `1/||A||^2`).
#[pyfunction]
#[pyo3(signature = (problem, noisy, epochs, gamma = None))]
fn solve_landweber(
    problem: &Problem,
    noisy: &NoisyData,
    epochs: usize,
    gamma: Option<f64>,
) -> PyResult<Trace> {
    let mut spec = MethodSpec::new(Method::Landweber);
    spec.gamma = gamma;
    run(
        problem,
        spec,
        StopSpec::Fixed { epochs },
        noisy,
        0,
        epochs,
    )
}

/// Landweber stopped by the discrepancy principle.
#[pyfunction]
#[pyo3(signature = (problem, noisy, tau, max_epochs = 100_000, gamma = None))]
fn solve_landweber_dp(
    problem: &Problem,
    noisy: &NoisyData,
    tau: f64,
    max_epochs: usize,
    gamma: Option<f64>,
) -> PyResult<Trace> {
    let mut spec = MethodSpec::new(Method::Landweber);
    spec.gamma = gamma;
    run(problem, spec, StopSpec::Dp { tau }, noisy, 0, max_epochs)
}

/// Split-step SVRG for a fixed number of epochs, from x0 = 0.
#[pyfunction]
#[pyo3(signature = (problem, noisy, epochs, seed, alpha = 1.0, beta = 0.99, m_frac = 0.1))]
fn solve_svrg(
    problem: &Problem,
    noisy: &NoisyData,
    epochs: usize,
    seed: u64,
    alpha: f64,
    beta: f64,
    m_frac: f64,
) -> PyResult<Trace> {
    let mut spec = MethodSpec::new(Method::Svrg);
    spec.alpha = alpha;
    spec.beta = beta;
    spec.m_frac = m_frac;
    run(
        problem,
        spec,
        StopSpec::Fixed { epochs },
        noisy,
        seed,
        epochs,
    )
}

/// Split-step SVRG gated by the discrepancy principle (`tau > 1`).
#[pyfunction]
#[pyo3(signature = (problem, noisy, tau, seed, alpha = 1.0, beta = 0.99, m_frac = 0.1, max_epochs = 100_000))]
#[allow(clippy::too_many_arguments)]
fn solve_svrg_dp(
    problem: &Problem,
    noisy: &NoisyData,
    tau: f64,
    seed: u64,
    alpha: f64,
    beta: f64,
    m_frac: f64,
    max_epochs: usize,
) -> PyResult<Trace> {
    let mut spec = MethodSpec::new(Method::SvrgDp);
    spec.alpha = alpha;
    spec.beta = beta;
    spec.m_frac = m_frac;
    run(problem, spec, StopSpec::Dp { tau }, noisy, seed, max_epochs)
}

/// A-priori stopping index `max(1, round(c * delta^{-p}))` (`p` defaults
/// to the rate-optimal 1).
#[pyfunction]
#[pyo3(signature = (c, delta, p = None))]
fn apriori_index(c: f64, delta: f64, p: Option<f64>) -> PyResult<usize> {
    let rule = match p {
        None => stopping::AprioriRule::rate_optimal(c),
        Some(p) => stopping::AprioriRule::general(c, p),
    }
    .map_err(err)?;
    stopping::apriori_index(&rule, delta).map_err(err)
}

/// Builds a synthetic instance satisfying the benchmark source condition:
/// `x_true = A* lambda` for a seeded smooth `lambda = A a`.
#[pyfunction]
#[pyo3(signature = (problem, seed, scale = 1.0))]
fn synthetic_source_problem(problem: &Problem, seed: u64, scale: f64) -> PyResult<Problem> {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a_vec = Array1::from_shape_fn(problem.inner.dim(), |_| {
        scale * rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let lambda = problem.inner.operator.apply(&a_vec).map_err(err)?;
    let lambda = Observation::from_stacked(
        problem.inner.operator.structure().clone(),
        lambda.into_stacked(),
    )
    .map_err(err)?;
    let x0 = Array1::zeros(problem.inner.dim());
    Ok(Problem {
        inner: problems::synthetic_source_instance(
            problem.inner.operator.clone(),
            &lambda,
            &x0,
        )
        .map_err(err)?,
    })
}

#[pymodule]
fn svrg_reg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<NoisyData>()?;
    m.add_class::<PyStepSizePlan>()?;
    m.add_class::<Trace>()?;
    m.add_function(wrap_pyfunction!(add_relative_noise, m)?)?;
    m.add_function(wrap_pyfunction!(add_absolute_noise, m)?)?;
    m.add_function(wrap_pyfunction!(plan_for, m)?)?;
    m.add_function(wrap_pyfunction!(solve_landweber, m)?)?;
    m.add_function(wrap_pyfunction!(solve_landweber_dp, m)?)?;
    m.add_function(wrap_pyfunction!(solve_svrg, m)?)?;
    m.add_function(wrap_pyfunction!(solve_svrg_dp, m)?)?;
    m.add_function(wrap_pyfunction!(apriori_index, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_source_problem, m)?)?;
    m.add("GAUSSIAN_SAMPLER", noise::GAUSSIAN_SAMPLER)?;
    m.add("__version__", svrg_reg::VERSION)?;
    Ok(())
}
