//! Python bindings: models, filter stability, superstate MDPs, planning,
//! bound evaluators and POLITEX training.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use superstate::learning::{
    make_features, politex_train as train, prior_oracle, td_train, BoundSoftmax, FeatureKind, Policy,
    PolitexConfig, TdConfig, ThetaInit, UniformPolicy, Warmup,
};
use superstate::planning::{policy_evaluation, value_iteration, EvalMethod, MdpBoundTables};
use superstate::{envs, filter, model_io, verify, Error, Step};

fn err(e: Error) -> PyErr {
    match e {
        Error::OutOfRange(_) | Error::DimensionMismatch(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn steps(history: Vec<(usize, usize)>) -> Vec<Step> {
    history.into_iter().map(|(a, y)| Step::new(a, y)).collect()
}

#[pyclass(frozen, skip_from_py_object, module = "superstate_py")]
#[derive(Clone)]
pub struct Model {
    inner: superstate::PomdpModel,
}

#[pymethods]
impl Model {
    /// Parse and validate a model from its JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: model_io::parse_model(text, "<string>").map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: model_io::load_model(path).map_err(err)? })
    }

    /// Built-in environments: `customer`, `tmaze`, `gridworld`, `toy2`.
    #[staticmethod]
    #[pyo3(signature = (name, p=0.0, corridor_len=4, gamma=0.9))]
    fn env(name: &str, p: f64, corridor_len: usize, gamma: f64) -> PyResult<Self> {
        let inner = match name {
            "customer" => envs::customer_retail(),
            "toy2" => envs::two_state_toy(),
            "tmaze" => envs::tmaze(corridor_len, 1.0, gamma, 10).map_err(err)?,
            "gridworld" => envs::noisy_gridworld(&envs::GridSpec::frozen_lake_4x4(p)).map_err(err)?,
            other => return Err(PyValueError::new_err(format!("unknown environment {other}"))),
        };
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        model_io::model_to_string(&self.inner)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    /// Belief after a history of `(action, observation)` pairs.
    fn belief(&self, history: Vec<(usize, usize)>) -> PyResult<Vec<f64>> {
        let b = self.inner.belief_of_history(&steps(history)).map_err(err)?;
        Ok(b.into_inner())
    }

    /// `(delta_P, delta_Phi, product, stable, rho_dobrushin)`.
    fn stability(&self) -> (f64, f64, f64, bool, f64) {
        let r = filter::stability_check(&self.inner);
        (r.delta_p, r.delta_phi, r.product, r.stable, r.rho_dobrushin)
    }

    /// Worst filter gap after `l` steps from two random priors.
    #[pyo3(signature = (l, n_samples=10_000, seed=0))]
    fn filter_gap(&self, l: usize, n_samples: usize, seed: u64) -> PyResult<f64> {
        filter::lemma1_gap(&self.inner, l, n_samples, seed).map_err(err)
    }

    /// Belief-tree value at the prior as `(value, truncation_bound, depth)`.
    #[pyo3(signature = (target=0.01, max_depth=12))]
    fn oracle(&self, target: f64, max_depth: usize) -> PyResult<(f64, f64, usize)> {
        let o = prior_oracle(&self.inner, target, max_depth).map_err(err)?;
        Ok((o.value, o.truncation_bound, o.depth))
    }

    /// Oracle value after a history, `(value, truncation_bound, depth)`.
    #[pyo3(signature = (history, target=0.01, max_depth=12))]
    fn oracle_at(&self, history: Vec<(usize, usize)>, target: f64, max_depth: usize) -> PyResult<(f64, f64, usize)> {
        let belief = self.inner.belief_of_history(&steps(history)).map_err(err)?;
        let tables = MdpBoundTables::new(&self.inner).map_err(err)?;
        let o = superstate::planning::oracle_value(&self.inner, &belief, target, max_depth, &tables);
        Ok((o.value, o.truncation_bound, o.depth))
    }

    fn build_smdp(&self, l: usize) -> PyResult<Smdp> {
        let inner = superstate::superstate::build(&self.inner, l).map_err(err)?;
        Ok(Smdp { model: self.inner.clone(), inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n_states={}, n_actions={}, n_obs={}, gamma={})",
            self.inner.n_states(),
            self.inner.n_actions(),
            self.inner.n_obs(),
            self.inner.gamma()
        )
    }
}

/// The superstate MDP of a model for a fixed history length.
#[pyclass(frozen, module = "superstate_py")]
pub struct Smdp {
    model: superstate::PomdpModel,
    inner: superstate::SuperstateMdp,
}

#[pymethods]
impl Smdp {
    #[getter]
    fn l(&self) -> usize {
        self.inner.l()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn root(&self) -> usize {
        self.inner.space.root()
    }

    /// Index of the superstate holding the last `l` steps of `history`.
    fn index_of(&self, history: Vec<(usize, usize)>) -> Option<usize> {
        let b = superstate::superstate::group(&steps(history), self.inner.l());
        self.inner.index(&b)
    }

    fn to_json(&self) -> String {
        model_io::smdp_to_string(&self.inner)
    }

    /// Optimal values and greedy actions per superstate.
    #[pyo3(signature = (tol=1e-10, max_iter=100_000))]
    fn value_iteration(&self, tol: f64, max_iter: usize) -> PyResult<(Vec<f64>, Vec<usize>)> {
        let v = value_iteration(&self.inner.mdp, tol, max_iter).map_err(err)?;
        Ok((v.values, v.greedy))
    }

    /// Exact values of a stochastic policy table `policy[state][action]`.
    fn evaluate(&self, policy: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(policy_evaluation(&self.inner.mdp, &policy, EvalMethod::Exact, 0.0).map_err(err)?.v)
    }

    /// Sup-norm error of TD(0) under the uniform policy against the exact
    /// action values, with one-hot features.
    #[pyo3(signature = (tau=50_000, seed=0))]
    fn td_uniform_error(&self, tau: usize, seed: u64) -> PyResult<f64> {
        let features = make_features(&self.model, &self.inner.space, FeatureKind::OneHot, 0);
        let policy = UniformPolicy(self.model.n_actions());
        let table = superstate::superstate::uniform_policy(self.inner.n_states(), self.model.n_actions());
        let exact = policy_evaluation(&self.inner.mdp, &table, EvalMethod::Exact, 0.0).map_err(err)?;
        let cfg = TdConfig { tau, seed, warmup: Warmup::FromMixing, ..TdConfig::default() };
        let (q, _) = td_train(&self.model, &self.inner.space, &policy, &features, &cfg, Some(&self.inner.mdp))
            .map_err(err)?;
        let all: Vec<usize> = (0..self.inner.n_states()).collect();
        Ok(superstate::learning::q_sup_error(&features, &q.theta, &exact.q, &all))
    }

    /// Run POLITEX and return the exact value of each policy at the empty
    /// superstate.
    #[pyo3(signature = (m=50, tau=5000, seed=0, episode_len=Some(20), eta=None, mix=0.05, zero_init=false))]
    #[allow(clippy::too_many_arguments)]
    fn politex(
        &self,
        py: Python<'_>,
        m: usize,
        tau: usize,
        seed: u64,
        episode_len: Option<usize>,
        eta: Option<f64>,
        mix: f64,
        zero_init: bool,
    ) -> PyResult<Vec<f64>> {
        let features = make_features(&self.model, &self.inner.space, FeatureKind::OneHot, 0);
        let theta_init = if zero_init { ThetaInit::Zero } else { ThetaInit::Midpoint };
        let cfg = PolitexConfig {
            m,
            td: TdConfig { tau, episode_len, warmup: Warmup::FromMixing, theta_init, ..TdConfig::default() },
            eta,
            explore_mix: mix,
            seed,
            ..PolitexConfig::default()
        };
        let n = self.inner.n_states();
        let root = self.inner.space.root();
        py.detach(|| {
            let run = train(&self.model, &self.inner.space, &features, &cfg, Some(&self.inner.mdp)).map_err(err)?;
            run.policies
                .iter()
                .map(|p| {
                    let table = BoundSoftmax { policy: p, features: &features }.table(n);
                    let pv = policy_evaluation(&self.inner.mdp, &table, EvalMethod::Exact, 0.0).map_err(err)?;
                    Ok(pv.v[root])
                })
                .collect()
        })
    }
}

#[pyfunction]
#[pyo3(signature = (r_bar, gamma, rho, l))]
fn xi_smdp(r_bar: f64, gamma: f64, rho: f64, l: usize) -> PyResult<f64> {
    let inputs = verify::BoundInputs { r_bar, gamma, rho, l, ..Default::default() };
    verify::xi_smdp_pomdp(&inputs).map_err(err)
}

/// `(original, improved)` approximate-information-state bounds.
#[pyfunction]
fn ais_bounds(epsilon: f64, delta: f64, r_bar: f64, gamma: f64) -> PyResult<(f64, f64)> {
    let b = verify::ais_bounds(epsilon, delta, r_bar, gamma).map_err(err)?;
    Ok((b.original, b.improved))
}

#[pyfunction]
fn lemma2_rhs(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, d: Vec<f64>) -> PyResult<f64> {
    verify::lemma2_rhs(&a, &b, &c, &d).map_err(err)
}

/// Greedy coupling matrix moving the surplus of `v1` onto the deficit.
#[pyfunction]
fn greedy_coupling(v1: Vec<f64>, v2: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(verify::greedy_coupling(&v1, &v2).map_err(err)?.alpha)
}

#[pyfunction]
fn dobrushin(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    filter::dobrushin(&matrix).map_err(err)
}

/// Run the command-line tool in-process and return its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| superstate::cli::run(std::iter::once("superstate".to_string()).chain(args)))
}

#[pymodule]
fn superstate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Smdp>()?;
    m.add_function(wrap_pyfunction!(xi_smdp, m)?)?;
    m.add_function(wrap_pyfunction!(ais_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(lemma2_rhs, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_coupling, m)?)?;
    m.add_function(wrap_pyfunction!(dobrushin, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
