//! Python module `klsynth`: models, deceptive synthesis, reference synthesis
//! and the detection experiment. Results carry their JSON exports as strings.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use klsynth_core::automata::{
    build_product_mdp, formula_to_dfa, min_time_reference, parse_cosafe, product_dfa, Dfa,
    ReferencePolicy,
};
use klsynth_core::conic::ClarabelSolver;
use klsynth_core::deceptive::{preprocess_finiteness, solution_to_json, solve_deceptive};
use klsynth_core::mdp::io::{mdp_from_json, mdp_to_json, policy_from_json};
use klsynth_core::models::{fork_mdp, grid20_spec, grid4_spec, gridworld as make_grid, mixing_mdp};
use klsynth_core::reference::{
    admm_reference, lp_relaxation_reference, AdmmConfig, ReferenceProblem,
};
use klsynth_core::simulation::{experiment_csv, run_detection_experiment, ExperimentConfig};
use klsynth_core::Error;

create_exception!(klsynth, InfeasibleError, PyValueError);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Infeasible(_) | Error::InfeasibleSet(_) => InfeasibleError::new_err(e.to_string()),
        Error::Numerical(_) | Error::Singular(_) | Error::ClosedSetMismatch(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A labelled Markov decision process.
#[pyclass(name = "Mdp", frozen)]
struct PyMdp {
    inner: klsynth_core::mdp::Mdp,
}

#[pymethods]
impl PyMdp {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: mdp_from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        mdp_to_json(&self.inner)
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn state_names(&self) -> Vec<String> {
        (0..self.inner.num_states())
            .map(|s| self.inner.name(s).to_string())
            .collect()
    }

    #[getter]
    fn atomic_props(&self) -> Vec<String> {
        self.inner.atomic_props.iter().cloned().collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mdp(states={}, pairs={})",
            self.inner.num_states(),
            self.inner.num_state_actions()
        )
    }
}

/// Built-in models: "fork", "mixing", "grid20" or "grid4".
#[pyfunction]
fn builtin_model(name: &str) -> PyResult<PyMdp> {
    let inner = match name {
        "fork" => fork_mdp(),
        "mixing" => mixing_mdp(),
        "grid20" => make_grid(&grid20_spec()).map_err(py_err)?,
        "grid4" => make_grid(&grid4_spec()).map_err(py_err)?,
        other => return Err(PyValueError::new_err(format!("unknown model '{other}'"))),
    };
    Ok(PyMdp { inner })
}

fn automaton(m: &klsynth_core::mdp::Mdp, formula: Option<&str>) -> PyResult<Dfa> {
    let props: Vec<String> = m.atomic_props.iter().cloned().collect();
    match formula {
        Some(f) => formula_to_dfa(&parse_cosafe(f).map_err(py_err)?, &props).map_err(py_err),
        None => Dfa::trivial(&props).map_err(py_err),
    }
}

#[pyclass(frozen)]
struct DeceptiveResult {
    #[pyo3(get)]
    kl: f64,
    #[pyo3(get)]
    satisfaction: f64,
    #[pyo3(get)]
    reference_satisfaction: f64,
    #[pyo3(get)]
    json: String,
}

#[pymethods]
impl DeceptiveResult {
    #[getter]
    fn kl_bits(&self) -> f64 {
        self.kl / std::f64::consts::LN_2
    }
}

/// Least-divergence policy reaching the agent's task with probability at
/// least `nu_agent`. `reference` is `min-time:<formula>` or a JSON policy.
#[pyfunction]
#[pyo3(signature = (mdp, reference, phi_agent, nu_agent, phi_sup=None))]
fn synthesize_deceptive(
    py: Python<'_>,
    mdp: &PyMdp,
    reference: &str,
    phi_agent: &str,
    nu_agent: f64,
    phi_sup: Option<&str>,
) -> PyResult<DeceptiveResult> {
    let m = &mdp.inner;
    let agent = automaton(m, Some(phi_agent))?;
    let (sup, reference) = match reference.strip_prefix("min-time:") {
        Some(f) => {
            let sup = automaton(m, Some(f))?;
            let r = min_time_reference(m, &sup).map_err(py_err)?;
            (sup, r)
        }
        None => {
            let pi = policy_from_json(m, reference).map_err(py_err)?;
            (automaton(m, phi_sup)?, ReferencePolicy::Base(pi))
        }
    };
    py.detach(|| {
        let dp = product_dfa(&sup, &agent)?;
        let product = build_product_mdp(m, &dp, &reference)?;
        let problem = preprocess_finiteness(&product, nu_agent)?;
        let sol = solve_deceptive(&problem, &ClarabelSolver::default())?;
        Ok(DeceptiveResult {
            kl: sol.kl_value,
            satisfaction: sol.satisfaction_prob,
            reference_satisfaction: sol.reference_satisfaction,
            json: solution_to_json(&problem, &sol),
        })
    })
    .map_err(py_err)
}

#[pyclass(frozen)]
struct ReferenceResult {
    /// Divergence of the agent's optimal deceptive response, `inf` if the
    /// agent cannot meet its threshold.
    #[pyo3(get)]
    best_response_kl: f64,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    policy_json: String,
}

/// Reference policy resisting deception, by `method` "relax" or "admm".
#[pyfunction]
#[pyo3(signature = (mdp, phi_agent, nu_agent, phi_sup=None, nu_sup=0.0, method="relax"))]
fn synthesize_reference(
    py: Python<'_>,
    mdp: &PyMdp,
    phi_agent: &str,
    nu_agent: f64,
    phi_sup: Option<&str>,
    nu_sup: f64,
    method: &str,
) -> PyResult<ReferenceResult> {
    let m = &mdp.inner;
    let dp =
        product_dfa(&automaton(m, phi_sup)?, &automaton(m, Some(phi_agent))?).map_err(py_err)?;
    if !matches!(method, "relax" | "admm") {
        return Err(PyValueError::new_err(format!("unknown method '{method}'")));
    }
    py.detach(|| {
        let solver = ClarabelSolver::default();
        let p = ReferenceProblem::from_model(m, &dp, nu_sup, nu_agent, &solver)?;
        let (policy, iterations) = if method == "relax" {
            (lp_relaxation_reference(&p, &solver)?.policy, 0)
        } else {
            let r = admm_reference(&p, &AdmmConfig::default())?;
            (r.policy, r.history.len())
        };
        let best = p.best_response(&policy, &solver)?;
        Ok(ReferenceResult {
            best_response_kl: best.kl.as_f64(),
            iterations,
            policy_json: p.policy_to_json(&policy),
        })
    })
    .map_err(py_err)
}

/// Runs the detection experiment described by a JSON config and returns
/// its CSV.
#[pyfunction]
fn detection_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.detach(|| run_detection_experiment(&cfg).map(|r| experiment_csv(&r)))
        .map_err(py_err)
}

#[pymodule]
fn klsynth(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add_class::<PyMdp>()?;
    m.add_class::<DeceptiveResult>()?;
    m.add_class::<ReferenceResult>()?;
    m.add_function(wrap_pyfunction!(builtin_model, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_deceptive, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_reference, m)?)?;
    m.add_function(wrap_pyfunction!(detection_experiment, m)?)?;
    Ok(())
}
