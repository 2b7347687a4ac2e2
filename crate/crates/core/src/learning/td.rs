use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::{norm, project_ball, FeatureMap};
use super::policy::Policy;
use crate::error::{Error, Result};
use crate::pomdp::{PomdpModel, Step};
use crate::rng::{sample_categorical, seeded};
use crate::superstate::{superstate_mixing, Superstate, SuperstateSpace, TabularMdp};

/// One sampled transition as seen by the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampled {
    pub reward: f64,
    /// Next superstate index, `None` when it lies outside the enumerated space.
    pub next: Option<usize>,
    /// The episode ended (absorbing state reached).
    pub terminal: bool,
}

/// Source of superstate transitions for TD.
pub trait Sampler {
    fn n_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    /// Smallest and largest one-step reward.
    fn reward_range(&self) -> (f64, f64);
    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Option<usize>;
    fn step(&mut self, action: usize, rng: &mut dyn rand::RngCore) -> Sampled;
}

/// Simulates the true POMDP and reports `G(H_t)`.
pub struct PomdpSampler<'a> {
    model: &'a PomdpModel,
    space: &'a SuperstateSpace,
    absorbing: Vec<bool>,
    reset_on_absorbing: bool,
    state: usize,
    window: Superstate,
}

impl<'a> PomdpSampler<'a> {
    pub fn new(model: &'a PomdpModel, space: &'a SuperstateSpace, reset_on_absorbing: bool) -> Self {
        Self {
            model,
            space,
            absorbing: model.absorbing_states(),
            reset_on_absorbing,
            state: 0,
            window: Superstate::empty(),
        }
    }

    pub fn hidden_state(&self) -> usize {
        self.state
    }
}

impl Sampler for PomdpSampler<'_> {
    fn n_actions(&self) -> usize {
        self.model.n_actions()
    }

    fn gamma(&self) -> f64 {
        self.model.gamma()
    }

    fn reward_range(&self) -> (f64, f64) {
        min_max(self.model.reward_matrix().into_iter().flatten())
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Option<usize> {
        self.state = self.model.sample_initial_state(rng);
        self.window = Superstate::empty();
        self.space.index(&self.window)
    }

    fn step(&mut self, action: usize, rng: &mut dyn rand::RngCore) -> Sampled {
        let st = self.model.step_simulator(self.state, action, rng);
        self.state = st.next_state;
        self.window = self.window.extend(Step::new(action, st.observation), self.space.l);
        Sampled {
            reward: st.reward,
            next: self.space.index(&self.window),
            terminal: self.reset_on_absorbing && self.absorbing[st.next_state],
        }
    }
}

fn min_max(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if lo > hi { (0.0, 0.0) } else { (lo, hi) }
}

/// Samples directly from a finite MDP (the superstate MDP itself).
pub struct MdpSampler<'a> {
    mdp: &'a TabularMdp,
    start: usize,
    state: usize,
    probs: Vec<f64>,
}

impl<'a> MdpSampler<'a> {
    pub fn new(mdp: &'a TabularMdp, start: usize) -> Self {
        Self { mdp, start, state: start, probs: Vec::new() }
    }
}

impl Sampler for MdpSampler<'_> {
    fn n_actions(&self) -> usize {
        self.mdp.n_actions
    }

    fn gamma(&self) -> f64 {
        self.mdp.gamma
    }

    fn reward_range(&self) -> (f64, f64) {
        min_max(self.mdp.reward.iter().copied())
    }

    fn reset(&mut self, _rng: &mut dyn rand::RngCore) -> Option<usize> {
        self.state = self.start;
        Some(self.state)
    }

    fn step(&mut self, action: usize, rng: &mut dyn rand::RngCore) -> Sampled {
        let reward = self.mdp.reward(self.state, action);
        let row = self.mdp.row(self.state, action);
        self.probs.clear();
        self.probs.extend(row.iter().map(|&(_, p)| p));
        let k = sample_categorical(rng, &self.probs);
        self.state = row[k].0;
        Sampled { reward, next: Some(self.state), terminal: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThetaInit {
    /// Start at the centre of the ball.
    Zero,
    /// Every `Q(B, a)` starts at the centre of the attainable value range
    /// `[r_min, r_max] / (1 - gamma)`, the minimax guess under the sup
    /// norm. Projected onto the ball; random projections start at zero.
    Midpoint,
    /// Uniform draw from the ball.
    RandomInBall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Warmup {
    Fixed(usize),
    /// `ceil(log tau / (2 log(1/(1-rho'))))` from the mixing coefficient of
    /// the current policy, capped at `tau / 10`.
    FromMixing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    pub tau: usize,
    pub warmup: Warmup,
    /// Constant step size; `None` means `1/sqrt(tau)`.
    pub step_size: Option<f64>,
    pub radius: f64,
    pub seed: u64,
    /// Restart from the prior every this many steps.
    pub episode_len: Option<usize>,
    /// Treat zero-reward self-looping states as terminal.
    pub reset_on_absorbing: bool,
    pub theta_init: ThetaInit,
    /// Record a trace point every this many steps (0 disables).
    pub trace_every: usize,
}

impl Default for TdConfig {
    fn default() -> Self {
        Self {
            tau: 10_000,
            warmup: Warmup::Fixed(0),
            step_size: None,
            radius: 100.0,
            seed: 0,
            episode_len: None,
            reset_on_absorbing: true,
            theta_init: ThetaInit::Midpoint,
            trace_every: 0,
        }
    }
}

impl TdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 1 {
            return Err(Error::OutOfRange("tau must be at least 1".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::OutOfRange(format!("radius = {}", self.radius)));
        }
        if let Some(eps) = self.step_size {
            if !(eps > 0.0) {
                return Err(Error::OutOfRange(format!("step_size = {eps}")));
            }
        }
        if self.episode_len == Some(0) {
            return Err(Error::OutOfRange("episode_len must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.step_size.unwrap_or(1.0 / (self.tau as f64).sqrt())
    }
}

/// Default warm-up length for mixing coefficient `rho_prime`.
pub fn default_l_prime(tau: usize, rho_prime: f64) -> usize {
    let cap = tau / 10;
    if rho_prime >= 1.0 {
        return 0;
    }
    let denom = 2.0 * (1.0 / (1.0 - rho_prime)).ln();
    if denom <= 0.0 {
        return cap;
    }
    let raw = ((tau as f64).ln() / denom).ceil();
    if raw.is_finite() {
        (raw.max(0.0) as usize).min(cap)
    } else {
        cap
    }
}

/// Resolve the warm-up length for `policy`; [`Warmup::FromMixing`] needs
/// the superstate MDP.
pub fn resolve_l_prime(config: &TdConfig, mdp: Option<&TabularMdp>, policy: &dyn Policy) -> Result<usize> {
    match config.warmup {
        Warmup::Fixed(n) => Ok(n),
        Warmup::FromMixing => {
            let mdp = mdp.ok_or_else(|| {
                Error::OutOfRange("mixing-based warm-up needs the superstate MDP".into())
            })?;
            let table = policy.table(mdp.n_states);
            Ok(default_l_prime(config.tau, superstate_mixing(mdp, &table)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearQ {
    pub theta: Vec<f64>,
    pub radius: f64,
}

impl LinearQ {
    pub fn q(&self, features: &FeatureMap, b: usize, a: usize) -> f64 {
        features.dot(b, a, &self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub step: usize,
    /// Mean reward over the steps since the previous point.
    pub reward: f64,
    pub theta_norm: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TdDiagnostics {
    pub steps: usize,
    pub updates: usize,
    /// Sum of all rewards collected, warm-up included.
    pub total_reward: f64,
    pub l_prime: usize,
    pub step_size: f64,
    /// Steps whose current or next superstate was outside the space.
    pub out_of_space: usize,
    /// Undiscounted return of every completed episode.
    pub episode_returns: Vec<f64>,
    pub max_theta_norm: f64,
    /// Largest `||theta_{t+1/2} - theta_t||`, an upper bound on the
    /// projected step.
    pub max_half_step: f64,
    pub trace: Vec<TracePoint>,
}

impl TdDiagnostics {
    pub fn mean_step_reward(&self) -> f64 {
        if self.steps == 0 { 0.0 } else { self.total_reward / self.steps as f64 }
    }

    pub fn mean_return(&self) -> Option<f64> {
        (!self.episode_returns.is_empty())
            .then(|| self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64)
    }
}

fn sample_action(
    policy: &dyn Policy,
    b: Option<usize>,
    n_actions: usize,
    buf: &mut [f64],
    rng: &mut dyn rand::RngCore,
) -> usize {
    match b {
        Some(b) => policy.probs(b, buf),
        None => buf.fill(1.0 / n_actions as f64),
    }
    sample_categorical(rng, buf)
}

fn initial_theta(
    config: &TdConfig,
    features: &FeatureMap,
    sampler: &dyn Sampler,
    rng: &mut dyn rand::RngCore,
) -> Vec<f64> {
    let dim = features.dim;
    match config.theta_init {
        ThetaInit::Zero => vec![0.0; dim],
        ThetaInit::Midpoint => {
            let (lo, hi) = sampler.reward_range();
            let centre = (lo + hi) / (2.0 * (1.0 - sampler.gamma()));
            let mut theta = features.constant(centre).unwrap_or_else(|| vec![0.0; dim]);
            project_ball(&mut theta, config.radius);
            theta
        }
        ThetaInit::RandomInBall => {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = norm(&v);
            let r = config.radius * rng.random::<f64>().powf(1.0 / dim as f64);
            if n > 0.0 {
                for x in &mut v {
                    *x *= r / n;
                }
            }
            v
        }
    }
}

/// Squared norm of `theta`, updated incrementally for one-hot features.
struct Tracked {
    theta: Vec<f64>,
    sq: f64,
}

impl Tracked {
    fn new(theta: Vec<f64>) -> Self {
        let sq = theta.iter().map(|x| x * x).sum();
        Self { theta, sq }
    }

    fn norm(&self) -> f64 {
        self.sq.max(0.0).sqrt()
    }

    fn step(&mut self, features: &FeatureMap, b: usize, a: usize, scale: f64, radius: f64) {
        match features.add_scaled_tracked(b, a, scale, &mut self.theta) {
            Some(d) => self.sq += d,
            None => self.sq = self.theta.iter().map(|x| x * x).sum(),
        }
        if self.sq > radius * radius {
            project_ball(&mut self.theta, radius);
            self.sq = self.theta.iter().map(|x| x * x).sum();
        }
    }
}

/// Projected TD(0) with linear features along one sampled trajectory.
///
/// For `t >= l'` the update is
/// `theta += eps (r_t + gamma phi(B_{t+1}, a_{t+1}) theta - phi(B_t, a_t) theta) phi(B_t, a_t)`
/// followed by projection onto the radius-`R` ball. `a_{t+1}` is drawn
/// once per step, after the observation, and is the action then taken.
/// Transitions into an absorbing state (when enabled) use the target
/// `r_t` and restart the episode.
pub fn td_run(
    sampler: &mut dyn Sampler,
    policy: &dyn Policy,
    features: &FeatureMap,
    config: &TdConfig,
    l_prime: usize,
) -> Result<(LinearQ, TdDiagnostics)> {
    config.validate()?;
    let mut rng = seeded(config.seed);
    let na = sampler.n_actions();
    let gamma = sampler.gamma();
    let eps = config.epsilon();
    let mut th = Tracked::new(initial_theta(config, features, &*sampler, &mut rng));
    let mut diag = TdDiagnostics { l_prime, step_size: eps, ..Default::default() };
    diag.max_theta_norm = th.norm();
    let mut buf = vec![0.0; na];

    let mut b = sampler.reset(&mut rng);
    let mut a = sample_action(policy, b, na, &mut buf, &mut rng);
    let mut ep_len = 0usize;
    let mut ep_return = 0.0;
    let (mut trace_sum, mut trace_n) = (0.0, 0usize);
    for t in 0..config.tau + l_prime {
        let st = sampler.step(a, &mut rng);
        ep_return += st.reward;
        diag.total_reward += st.reward;
        ep_len += 1;
        let next_a = if st.terminal {
            0
        } else {
            sample_action(policy, st.next, na, &mut buf, &mut rng)
        };
        if t >= l_prime {
            match (b, st.next) {
                (Some(cur), next) if st.terminal || next.is_some() => {
                    let boot = match next {
                        Some(nb) if !st.terminal => gamma * features.dot(nb, next_a, &th.theta),
                        _ => 0.0,
                    };
                    let td = st.reward + boot - features.dot(cur, a, &th.theta);
                    let phi_norm = features.phi_norm(cur, a);
                    diag.max_half_step = diag.max_half_step.max((eps * td).abs() * phi_norm);
                    th.step(features, cur, a, eps * td, config.radius);
                    diag.updates += 1;
                }
                _ => diag.out_of_space += 1,
            }
        }
        diag.steps += 1;
        diag.max_theta_norm = diag.max_theta_norm.max(th.norm());
        trace_sum += st.reward;
        trace_n += 1;
        if config.trace_every > 0 && (t + 1) % config.trace_every == 0 {
            diag.trace.push(TracePoint {
                step: t + 1,
                reward: trace_sum / trace_n as f64,
                theta_norm: th.norm(),
                theta: th.theta.clone(),
            });
            trace_sum = 0.0;
            trace_n = 0;
        }
        if st.terminal || config.episode_len.is_some_and(|k| ep_len >= k) {
            diag.episode_returns.push(ep_return);
            ep_return = 0.0;
            ep_len = 0;
            b = sampler.reset(&mut rng);
            a = sample_action(policy, b, na, &mut buf, &mut rng);
        } else {
            b = st.next;
            a = next_a;
        }
    }
    Ok((LinearQ { theta: th.theta, radius: config.radius }, diag))
}

/// TD under `policy` on trajectories of the true POMDP.
///
/// `mdp` is only needed for [`Warmup::FromMixing`].
pub fn td_train(
    model: &PomdpModel,
    space: &SuperstateSpace,
    policy: &dyn Policy,
    features: &FeatureMap,
    config: &TdConfig,
    mdp: Option<&TabularMdp>,
) -> Result<(LinearQ, TdDiagnostics)> {
    let l_prime = resolve_l_prime(config, mdp, policy)?;
    let mut sampler = PomdpSampler::new(model, space, config.reset_on_absorbing);
    td_run(&mut sampler, policy, features, config, l_prime)
}
