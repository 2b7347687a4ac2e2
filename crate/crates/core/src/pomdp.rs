//! Tabular POMDP model, exact Bayesian filtering and the ground-truth
//! simulator.
//!
//! A history is the sequence `a0, y1, a1, y2, ...`: every step pairs the
//! action taken with the observation emitted by the state it led to. The
//! empty history corresponds to the prior `init_dist`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sample_categorical;

/// Row-sum tolerance applied everywhere a probability vector is checked.
pub const PROB_TOL: f64 = 1e-9;

/// One action–observation pair of a history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Step {
    pub action: usize,
    pub obs: usize,
}

impl Step {
    pub fn new(action: usize, obs: usize) -> Self {
        Self { action, obs }
    }
}

/// Full observed history `H_t = {a0, y1, ..., a_{t-1}, y_t}`.
pub type History = Vec<Step>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observations: Vec<String>,
}

/// A finite POMDP.
///
/// Tensors are stored flat: `transition[(a * n_states + s) * n_states + s']`,
/// `obs_kernel[s * n_obs + y]` and `reward[s * n_actions + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PomdpModel {
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    transition: Vec<f64>,
    obs_kernel: Vec<f64>,
    reward: Vec<f64>,
    init_dist: Vec<f64>,
    gamma: f64,
    r_bar: f64,
    pub labels: Labels,
}

/// One invariant violation found by [`PomdpModel::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TransitionRow { action: usize, state: usize, sum: f64, min: f64 },
    ObservationRow { state: usize, sum: f64, min: f64 },
    InitDist { sum: f64, min: f64 },
    Discount(f64),
    NonFiniteReward { state: usize, action: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionRow { action, state, sum, min } => write!(
                f,
                "transition row (s={state}, a={action}) sums to {sum} (min entry {min})"
            ),
            Violation::ObservationRow { state, sum, min } => write!(
                f,
                "observation row s={state} sums to {sum} (min entry {min})"
            ),
            Violation::InitDist { sum, min } => {
                write!(f, "init_dist sums to {sum} (min entry {min})")
            }
            Violation::Discount(g) => write!(f, "gamma = {g} is outside [0, 1)"),
            Violation::NonFiniteReward { state, action } => {
                write!(f, "reward (s={state}, a={action}) is not finite")
            }
        }
    }
}

fn row_defect(row: &[f64]) -> Option<(f64, f64)> {
    let sum: f64 = row.iter().sum();
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let bad = !sum.is_finite() || (sum - 1.0).abs() > PROB_TOL || min < 0.0 || min.is_nan();
    bad.then_some((sum, min))
}

impl PomdpModel {
    /// Assemble a model from nested tables, checking shapes only.
    ///
    /// `transition[a][s][s']`, `obs_kernel[s][y]`, `reward[s][a]`. Use
    /// [`PomdpModel::validate`] (or [`PomdpModel::new`]) for the
    /// probabilistic invariants.
    pub fn from_parts(
        transition: &[Vec<Vec<f64>>],
        obs_kernel: &[Vec<f64>],
        reward: &[Vec<f64>],
        init_dist: &[f64],
        gamma: f64,
    ) -> Result<Self> {
        let n_actions = transition.len();
        let n_states = init_dist.len();
        if n_actions == 0 || n_states == 0 {
            return Err(Error::DimensionMismatch(
                "model needs at least one state and one action".into(),
            ));
        }
        let n_obs = obs_kernel.first().map_or(0, Vec::len);
        if n_obs == 0 {
            return Err(Error::DimensionMismatch("model needs at least one observation".into()));
        }
        let mut flat_t = Vec::with_capacity(n_actions * n_states * n_states);
        for (a, block) in transition.iter().enumerate() {
            if block.len() != n_states {
                return Err(Error::DimensionMismatch(format!(
                    "transition[{a}] has {} rows, expected {n_states}",
                    block.len()
                )));
            }
            for (s, row) in block.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::DimensionMismatch(format!(
                        "transition[{a}][{s}] has {} entries, expected {n_states}",
                        row.len()
                    )));
                }
                flat_t.extend_from_slice(row);
            }
        }
        if obs_kernel.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "obs_kernel has {} rows, expected {n_states}",
                obs_kernel.len()
            )));
        }
        let mut flat_o = Vec::with_capacity(n_states * n_obs);
        for (s, row) in obs_kernel.iter().enumerate() {
            if row.len() != n_obs {
                return Err(Error::DimensionMismatch(format!(
                    "obs_kernel[{s}] has {} entries, expected {n_obs}",
                    row.len()
                )));
            }
            flat_o.extend_from_slice(row);
        }
        if reward.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "reward has {} rows, expected {n_states}",
                reward.len()
            )));
        }
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        for (s, row) in reward.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "reward[{s}] has {} entries, expected {n_actions}",
                    row.len()
                )));
            }
            flat_r.extend_from_slice(row);
        }
        let r_bar = flat_r.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        Ok(Self {
            n_states,
            n_actions,
            n_obs,
            transition: flat_t,
            obs_kernel: flat_o,
            reward: flat_r,
            init_dist: init_dist.to_vec(),
            gamma,
            r_bar,
            labels: Labels::default(),
        })
    }

    /// [`PomdpModel::from_parts`] followed by validation; any violation is
    /// an error.
    pub fn new(
        transition: &[Vec<Vec<f64>>],
        obs_kernel: &[Vec<f64>],
        reward: &[Vec<f64>],
        init_dist: &[f64],
        gamma: f64,
    ) -> Result<Self> {
        Self::from_parts(transition, obs_kernel, reward, init_dist, gamma)?.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let report = self.validate();
        if report.is_empty() {
            Ok(self)
        } else {
            let msgs: Vec<String> = report.iter().map(ToString::to_string).collect();
            Err(Error::InvalidModel(msgs.join("; ")))
        }
    }

    pub fn with_labels(mut self, labels: Labels) -> Self {
        self.labels = labels;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// List every violated invariant; empty when the model is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for a in 0..self.n_actions {
            for s in 0..self.n_states {
                if let Some((sum, min)) = row_defect(self.transition_row(a, s)) {
                    out.push(Violation::TransitionRow { action: a, state: s, sum, min });
                }
            }
        }
        for s in 0..self.n_states {
            if let Some((sum, min)) = row_defect(self.obs_row(s)) {
                out.push(Violation::ObservationRow { state: s, sum, min });
            }
        }
        if let Some((sum, min)) = row_defect(&self.init_dist) {
            out.push(Violation::InitDist { sum, min });
        }
        if !(0.0..1.0).contains(&self.gamma) {
            out.push(Violation::Discount(self.gamma));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                if !self.reward(s, a).is_finite() {
                    out.push(Violation::NonFiniteReward { state: s, action: a });
                }
            }
        }
        out
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `max_{s,a} |r(s,a)|`.
    pub fn r_bar(&self) -> f64 {
        self.r_bar
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    pub fn initial_belief(&self) -> BeliefState {
        BeliefState(self.init_dist.clone())
    }

    /// `P(. | s, a)`.
    pub fn transition_row(&self, a: usize, s: usize) -> &[f64] {
        let n = self.n_states;
        let start = (a * n + s) * n;
        &self.transition[start..start + n]
    }

    pub fn transition_prob(&self, a: usize, s: usize, s_next: usize) -> f64 {
        self.transition_row(a, s)[s_next]
    }

    /// `Phi(. | s)`.
    pub fn obs_row(&self, s: usize) -> &[f64] {
        let start = s * self.n_obs;
        &self.obs_kernel[start..start + self.n_obs]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// The transition kernel of one action as a list of rows.
    pub fn transition_matrix(&self, a: usize) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.transition_row(a, s).to_vec()).collect()
    }

    pub fn obs_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.obs_row(s).to_vec()).collect()
    }

    pub fn reward_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.reward(s, a)).collect())
            .collect()
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.n_actions {
            return Err(Error::IndexOutOfRange { what: "action", index: a, limit: self.n_actions });
        }
        Ok(())
    }

    fn check_obs(&self, y: usize) -> Result<()> {
        if y >= self.n_obs {
            return Err(Error::IndexOutOfRange { what: "observation", index: y, limit: self.n_obs });
        }
        Ok(())
    }

    fn check_belief(&self, belief: &BeliefState) -> Result<()> {
        if belief.len() != self.n_states {
            return Err(Error::DimensionMismatch(format!(
                "belief has {} entries, model has {} states",
                belief.len(),
                self.n_states
            )));
        }
        Ok(())
    }

    /// One-step predictive distribution `sum_s pi(s) P(s'|s,a)`.
    pub fn predict(&self, belief: &BeliefState, a: usize) -> Vec<f64> {
        let n = self.n_states;
        let mut next = vec![0.0; n];
        for (s, &p) in belief.0.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (acc, &t) in next.iter_mut().zip(self.transition_row(a, s)) {
                *acc += p * t;
            }
        }
        next
    }

    /// Bayes filter step. Returns the posterior and the normaliser
    /// `sigma(pi, y, a)`.
    pub fn belief_update_with_norm(
        &self,
        belief: &BeliefState,
        a: usize,
        y: usize,
    ) -> Result<(BeliefState, f64)> {
        self.check_belief(belief)?;
        self.check_action(a)?;
        self.check_obs(y)?;
        let mut post = self.predict(belief, a);
        for (s, p) in post.iter_mut().enumerate() {
            *p *= self.obs_kernel[s * self.n_obs + y];
        }
        let norm: f64 = post.iter().sum();
        if norm <= 0.0 {
            return Err(Error::ZeroProbabilityObservation { action: a, obs: y });
        }
        for p in &mut post {
            *p /= norm;
        }
        Ok((BeliefState(post), norm))
    }

    pub fn belief_update(&self, belief: &BeliefState, a: usize, y: usize) -> Result<BeliefState> {
        self.belief_update_with_norm(belief, a, y).map(|(b, _)| b)
    }

    /// Fold of [`PomdpModel::belief_update`] over `steps` starting at `prior`.
    pub fn filter_from(&self, prior: &BeliefState, steps: &[Step]) -> Result<BeliefState> {
        let mut belief = prior.clone();
        for (i, st) in steps.iter().enumerate() {
            belief = match self.belief_update(&belief, st.action, st.obs) {
                Ok(b) => b,
                Err(Error::ZeroProbabilityObservation { action, obs }) => {
                    return Err(Error::ImpossibleHistory { step: i, action, obs })
                }
                Err(e) => return Err(e),
            };
        }
        Ok(belief)
    }

    /// Posterior `pi(. | H)` from the prior `init_dist`.
    pub fn belief_of_history(&self, history: &[Step]) -> Result<BeliefState> {
        self.filter_from(&self.initial_belief(), history)
    }

    /// `sigma(pi, ., a)`: distribution of the next observation.
    pub fn obs_likelihood(&self, belief: &BeliefState, a: usize) -> Vec<f64> {
        let pred = self.predict(belief, a);
        let mut out = vec![0.0; self.n_obs];
        for (s, &p) in pred.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (acc, &o) in out.iter_mut().zip(self.obs_row(s)) {
                *acc += p * o;
            }
        }
        out
    }

    /// `r(pi, a) = sum_s pi(s) r(s, a)`.
    pub fn expected_reward(&self, belief: &BeliefState, a: usize) -> f64 {
        belief.0.iter().enumerate().map(|(s, &p)| p * self.reward(s, a)).sum()
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(rng, &self.init_dist)
    }

    /// Advance the hidden chain one step.
    ///
    /// Draw order is fixed (next state, then observation) so that a seed
    /// determines the whole trajectory.
    pub fn step_simulator<R: Rng + ?Sized>(
        &self,
        state: usize,
        action: usize,
        rng: &mut R,
    ) -> TrajectoryStep {
        let next_state = sample_categorical(rng, self.transition_row(action, state));
        let observation = sample_categorical(rng, self.obs_row(next_state));
        TrajectoryStep {
            hidden_state: state,
            next_state,
            action,
            reward: self.reward(state, action),
            observation,
        }
    }

    /// States that self-loop under every action with zero reward.
    ///
    /// Entering one of these ends all future reward, so episodic learners
    /// may treat it as termination.
    pub fn absorbing_states(&self) -> Vec<bool> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions).all(|a| {
                    self.transition_prob(a, s, s) >= 1.0 - PROB_TOL && self.reward(s, a) == 0.0
                })
            })
            .collect()
    }
}

/// Log record of one simulator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub hidden_state: usize,
    pub next_state: usize,
    pub action: usize,
    pub reward: f64,
    pub observation: usize,
}

/// Probability vector over hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState(Vec<f64>);

impl BeliefState {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::NotSimplex("empty belief".into()));
        }
        if let Some((sum, min)) = row_defect(&probs) {
            return Err(Error::NotSimplex(format!("sum {sum}, min entry {min}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, s: usize) -> Self {
        let mut p = vec![0.0; n];
        p[s] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tv_distance(&self, other: &BeliefState) -> f64 {
        tv_distance(&self.0, &other.0)
    }
}

/// Total variation distance `0.5 * ||p - q||_1`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
