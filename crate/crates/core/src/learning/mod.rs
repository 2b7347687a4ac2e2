//! Approximate TD on superstates, POLITEX policy optimisation and regret.

mod features;
mod policy;
mod td;

pub use features::{make_features, norm, project_ball, FeatureKind, FeatureMap};
pub use policy::{mixed_softmax, BoundSoftmax, Policy, SoftmaxPolicy, TabularPolicy, UniformPolicy};
pub use td::{
    default_l_prime, resolve_l_prime, td_run, td_train, LinearQ, MdpSampler, PomdpSampler, Sampled,
    Sampler, TdConfig, TdDiagnostics, ThetaInit, TracePoint, Warmup,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planning::{oracle_value, policy_evaluation, EvalMethod, MdpBoundTables, OracleValue};
use crate::pomdp::PomdpModel;
use crate::rng::sub_seed;
use crate::superstate::{SuperstateSpace, TabularMdp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolitexConfig {
    /// Number of policy updates.
    pub m: usize,
    pub td: TdConfig,
    /// `None` means `sqrt(8 log|A| / M)`.
    pub eta: Option<f64>,
    /// Weight of the uniform mixture in every policy.
    pub explore_mix: f64,
    /// Iteration `i` runs TD with seed `sub_seed(seed, i)`.
    pub seed: u64,
    /// Filter contraction estimate; when given, `(1-rho)^l < explore_mix`
    /// is enforced.
    pub rho: Option<f64>,
    /// Keep every intermediate policy in the result.
    pub keep_policies: bool,
}

impl Default for PolitexConfig {
    fn default() -> Self {
        Self {
            m: 50,
            td: TdConfig::default(),
            eta: None,
            explore_mix: 0.05,
            seed: 0,
            rho: None,
            keep_policies: true,
        }
    }
}

impl PolitexConfig {
    pub fn eta_for(&self, n_actions: usize) -> f64 {
        self.eta
            .unwrap_or_else(|| (8.0 * (n_actions as f64).ln() / self.m as f64).sqrt())
    }

    pub fn validate(&self, l: usize) -> Result<()> {
        self.td.validate()?;
        if self.m < 1 {
            return Err(Error::OutOfRange("M must be at least 1".into()));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) {
                return Err(Error::OutOfRange(format!("eta = {eta}")));
            }
        }
        if !(0.0..1.0).contains(&self.explore_mix) {
            return Err(Error::OutOfRange(format!("explore_mix = {}", self.explore_mix)));
        }
        if let Some(rho) = self.rho {
            let q = (1.0 - rho).powi(l as i32);
            if !(q < self.explore_mix) {
                return Err(Error::OutOfRange(format!(
                    "(1-rho)^l = {q} is not below the exploration floor {}",
                    self.explore_mix
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolitexIteration {
    pub i: usize,
    pub l_prime: usize,
    pub steps: usize,
    pub theta_norm: f64,
    pub mean_step_reward: f64,
    pub mean_return: Option<f64>,
    pub episodes: usize,
    pub out_of_space: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolitexRun {
    /// `mu_1 .. mu_M` (only when `keep_policies`).
    pub policies: Vec<SoftmaxPolicy>,
    /// TD parameters `theta^{(i)}` defining `Q_bar^{mu_i}` (only when
    /// `keep_policies`).
    pub q_bars: Vec<Vec<f64>>,
    pub iterations: Vec<PolitexIteration>,
    /// The policy the next update would produce, `mu_{M+1}`.
    pub next_policy: SoftmaxPolicy,
    pub eta: f64,
}

impl PolitexRun {
    /// `mu_M`, the last policy that was run.
    pub fn last_policy(&self) -> Option<&SoftmaxPolicy> {
        self.policies.last()
    }
}

/// POLITEX: `mu_i(a|B) ∝ exp(eta sum_{j<i} Q_bar^{mu_j}(B,a))`, mixed with
/// the uniform policy, each evaluated by a fresh TD run from the prior.
///
/// `mdp` is only needed for [`Warmup::FromMixing`].
pub fn politex_train(
    model: &PomdpModel,
    space: &SuperstateSpace,
    features: &FeatureMap,
    config: &PolitexConfig,
    mdp: Option<&TabularMdp>,
) -> Result<PolitexRun> {
    config.validate(space.l)?;
    let eta = config.eta_for(model.n_actions());
    let mut current = SoftmaxPolicy {
        theta_sum: vec![0.0; features.dim],
        eta,
        explore_mix: config.explore_mix,
    };
    let mut policies = Vec::new();
    let mut q_bars = Vec::new();
    let mut iterations = Vec::with_capacity(config.m);
    for i in 1..=config.m {
        let bound = BoundSoftmax { policy: &current, features };
        let td_cfg = TdConfig { seed: sub_seed(config.seed, i as u64), ..config.td };
        let (q, diag) = td_train(model, space, &bound, features, &td_cfg, mdp)?;
        iterations.push(PolitexIteration {
            i,
            l_prime: diag.l_prime,
            steps: diag.steps,
            theta_norm: norm(&q.theta),
            mean_step_reward: diag.mean_step_reward(),
            mean_return: diag.mean_return(),
            episodes: diag.episode_returns.len(),
            out_of_space: diag.out_of_space,
        });
        let mut next = current.clone();
        for (s, t) in next.theta_sum.iter_mut().zip(&q.theta) {
            *s += t;
        }
        if config.keep_policies {
            policies.push(current);
            q_bars.push(q.theta);
        }
        current = next;
    }
    Ok(PolitexRun { policies, q_bars, iterations, next_policy: current, eta })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretRecord {
    pub i: usize,
    pub v_star: f64,
    pub v_policy: f64,
    pub gap: f64,
    /// `(tau + l') * sum_{j <= i} gap_j`.
    pub cumulative: f64,
}

impl RegretRecord {
    pub const CSV_HEADER: &'static str = "i,v_star,v_policy,gap,cumulative";
}

/// Regret records against the belief-space oracle at the prior.
///
/// `v_policy` is the exact superstate-MDP value of `mu_i` at the empty
/// superstate.
pub fn empirical_regret(
    mdp: &TabularMdp,
    root: usize,
    policies: &[Vec<Vec<f64>>],
    steps_per_iter: usize,
    oracle: &OracleValue,
) -> Result<Vec<RegretRecord>> {
    let mut cumulative_gap = 0.0;
    policies
        .iter()
        .enumerate()
        .map(|(k, pol)| {
            let pv = policy_evaluation(mdp, pol, EvalMethod::Exact, 0.0)?;
            let v_policy = pv.v[root];
            let gap = oracle.value - v_policy;
            cumulative_gap += gap;
            Ok(RegretRecord {
                i: k + 1,
                v_star: oracle.value,
                v_policy,
                gap,
                cumulative: steps_per_iter as f64 * cumulative_gap,
            })
        })
        .collect()
}

/// Superstates holding a full window of `l` steps. Once `l` steps have
/// been taken the trajectory never leaves this set.
pub fn full_window_states(space: &SuperstateSpace) -> Vec<usize> {
    (0..space.len()).filter(|&i| space.states[i].len() == space.l).collect()
}

/// `max |phi(B,a) theta - q[B * n_actions + a]|` over `states` and all actions.
pub fn q_sup_error(features: &FeatureMap, theta: &[f64], q: &[f64], states: &[usize]) -> f64 {
    let na = features.n_actions;
    states
        .iter()
        .flat_map(|&b| (0..na).map(move |a| (b, a)))
        .map(|(b, a)| (features.dot(b, a, theta) - q[b * na + a]).abs())
        .fold(0.0, f64::max)
}

/// Oracle value `V*(pi_0)` with truncation at most `target`.
pub fn prior_oracle(model: &PomdpModel, target: f64, max_depth: usize) -> Result<OracleValue> {
    let tables = MdpBoundTables::new(model)?;
    Ok(oracle_value(model, &model.initial_belief(), target, max_depth, &tables))
}
