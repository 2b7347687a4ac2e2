//! Grouping operator and the superstate MDP.
//!
//! A superstate is the window of the last `l` action–observation pairs of
//! a history. Histories shorter than `l` are their own superstates. Each
//! superstate carries a representative belief obtained by filtering the
//! window, and the superstate MDP averages rewards and next-observation
//! probabilities under that belief.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::dobrushin;
use crate::pomdp::{BeliefState, PomdpModel, Step};

/// Truncated history `G(H)` of length at most `l`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Superstate(Vec<Step>);

impl Superstate {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn from_steps(steps: Vec<Step>) -> Self {
        Self(steps)
    }

    pub fn steps(&self) -> &[Step] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `G(B || {a, y})`: append one step and keep the last `l`.
    pub fn extend(&self, step: Step, l: usize) -> Superstate {
        let keep = l.min(self.0.len() + 1);
        let mut steps = Vec::with_capacity(keep);
        let skip = self.0.len() + 1 - keep;
        steps.extend(self.0.iter().skip(skip).copied());
        steps.push(step);
        Superstate(steps)
    }
}

impl fmt::Display for Superstate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("{}");
        }
        let parts: Vec<String> = self.0.iter().map(|s| format!("a{}y{}", s.action, s.obs)).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Keep the last `min(l, len)` steps of `history`.
pub fn group(history: &[Step], l: usize) -> Superstate {
    let start = history.len().saturating_sub(l);
    Superstate(history[start..].to_vec())
}

/// Representative belief `pi(. | B)`.
///
/// Filters the window from the prior. A window that cannot occur at the
/// start of an episode (it only arises after earlier steps) is filtered
/// from the uniform distribution over states instead.
pub fn representative_belief(model: &PomdpModel, steps: &[Step]) -> Result<BeliefState> {
    match model.belief_of_history(steps) {
        Ok(b) => Ok(b),
        Err(Error::ImpossibleHistory { .. }) => {
            model.filter_from(&BeliefState::uniform(model.n_states()), steps)
        }
        Err(e) => Err(e),
    }
}

/// Reachable superstates with their representative beliefs.
#[derive(Debug, Clone)]
pub struct SuperstateSpace {
    pub l: usize,
    pub states: Vec<Superstate>,
    pub index_of: HashMap<Superstate, usize>,
    pub rep_beliefs: Vec<BeliefState>,
}

impl SuperstateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index(&self, b: &Superstate) -> Option<usize> {
        self.index_of.get(b).copied()
    }

    /// Index of the empty superstate (always 0).
    pub fn root(&self) -> usize {
        0
    }
}

/// Breadth-first closure of `{}` under positive-probability extensions.
///
/// Layers are sorted lexicographically, so the ordering is fully
/// determined by the model and `l`.
pub fn enumerate_reachable(model: &PomdpModel, l: usize) -> Result<SuperstateSpace> {
    if l == 0 {
        return Err(Error::OutOfRange("l must be at least 1".into()));
    }
    let root = Superstate::empty();
    let mut states = vec![root.clone()];
    let mut rep_beliefs = vec![model.initial_belief()];
    let mut index_of = HashMap::from([(root, 0usize)]);
    let mut layer = vec![0usize];
    while !layer.is_empty() {
        let children: Vec<Vec<Superstate>> = layer
            .par_iter()
            .map(|&i| {
                let belief = &rep_beliefs[i];
                let mut out = Vec::new();
                for a in 0..model.n_actions() {
                    let sigma = model.obs_likelihood(belief, a);
                    for (y, &p) in sigma.iter().enumerate() {
                        if p > 0.0 {
                            out.push(states[i].extend(Step::new(a, y), l));
                        }
                    }
                }
                out
            })
            .collect();
        let mut fresh: Vec<Superstate> = children
            .into_iter()
            .flatten()
            .filter(|b| !index_of.contains_key(b))
            .collect();
        fresh.sort_unstable();
        fresh.dedup();
        let beliefs: Vec<BeliefState> = fresh
            .par_iter()
            .map(|b| representative_belief(model, b.steps()))
            .collect::<Result<_>>()?;
        layer.clear();
        for (b, belief) in fresh.into_iter().zip(beliefs) {
            layer.push(states.len());
            index_of.insert(b.clone(), states.len());
            states.push(b);
            rep_beliefs.push(belief);
        }
    }
    Ok(SuperstateSpace { l, states, index_of, rep_beliefs })
}

/// Finite MDP with sparse transition rows.
///
/// Rows are indexed by `s * n_actions + a` and hold `(next, prob)` pairs
/// sorted by `next`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub reward: Vec<f64>,
    pub transition: Vec<Vec<(usize, f64)>>,
}

impl TabularMdp {
    /// From dense tables `transition[a][s][s']` and `reward[s][a]`.
    pub fn from_dense(transition: &[Vec<Vec<f64>>], reward: &[Vec<f64>], gamma: f64) -> Result<Self> {
        let n_actions = transition.len();
        let n_states = reward.len();
        if n_actions == 0 || n_states == 0 {
            return Err(Error::DimensionMismatch("empty MDP".into()));
        }
        let mut rows = vec![Vec::new(); n_states * n_actions];
        let mut r = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            if reward[s].len() != n_actions {
                return Err(Error::DimensionMismatch(format!("reward row {s}")));
            }
            for a in 0..n_actions {
                r[s * n_actions + a] = reward[s][a];
                let row = transition[a]
                    .get(s)
                    .filter(|row| row.len() == n_states)
                    .ok_or_else(|| Error::DimensionMismatch(format!("transition[{a}][{s}]")))?;
                rows[s * n_actions + a] =
                    row.iter().enumerate().filter(|(_, &p)| p != 0.0).map(|(j, &p)| (j, p)).collect();
            }
        }
        let mdp = Self { n_states, n_actions, gamma, reward: r, transition: rows };
        mdp.check()?;
        Ok(mdp)
    }

    /// The fully observed MDP underlying a POMDP.
    pub fn underlying(model: &PomdpModel) -> Self {
        let tables: Vec<Vec<Vec<f64>>> =
            (0..model.n_actions()).map(|a| model.transition_matrix(a)).collect();
        Self::from_dense(&tables, &model.reward_matrix(), model.gamma()).expect("validated model")
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::OutOfRange(format!("gamma = {}", self.gamma)));
        }
        for (k, row) in self.transition.iter().enumerate() {
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&(j, p)| p < 0.0 || j >= self.n_states) {
                return Err(Error::InvalidStochasticMatrix {
                    row: k,
                    reason: format!("(s={}, a={}) sums to {sum}", k / self.n_actions, k % self.n_actions),
                });
            }
        }
        Ok(())
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transition[s * self.n_actions + a]
    }

    pub fn r_bar(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Dense `P(.|s, a)`.
    pub fn dense_row(&self, s: usize, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for &(j, p) in self.row(s, a) {
            out[j] += p;
        }
        out
    }

    /// Policy-induced chain `M(s'|s) = sum_a mu(a|s) P(s'|s,a)` as sparse rows.
    pub fn policy_chain(&self, policy: &[Vec<f64>]) -> Vec<Vec<(usize, f64)>> {
        (0..self.n_states)
            .map(|s| {
                let mut acc: HashMap<usize, f64> = HashMap::new();
                for (a, &w) in policy[s].iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for &(j, p) in self.row(s, a) {
                        *acc.entry(j).or_insert(0.0) += w * p;
                    }
                }
                let mut row: Vec<(usize, f64)> = acc.into_iter().collect();
                row.sort_unstable_by_key(|&(j, _)| j);
                row
            })
            .collect()
    }
}

/// The superstate MDP: reward `r~(B,a) = sum_s pi(s|B) r(s,a)` and
/// transition `P~(B'|B,a) = sum_y [G(B||{a,y}) = B'] sigma(pi(.|B), y, a)`.
#[derive(Debug, Clone)]
pub struct SuperstateMdp {
    pub space: SuperstateSpace,
    pub mdp: TabularMdp,
}

impl SuperstateMdp {
    pub fn l(&self) -> usize {
        self.space.l
    }

    pub fn gamma(&self) -> f64 {
        self.mdp.gamma
    }

    pub fn n_states(&self) -> usize {
        self.mdp.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.mdp.n_actions
    }

    pub fn index(&self, b: &Superstate) -> Option<usize> {
        self.space.index(b)
    }

    pub fn rep_belief(&self, i: usize) -> &BeliefState {
        &self.space.rep_beliefs[i]
    }
}

/// Enumerate reachable superstates and build the superstate MDP.
pub fn build(model: &PomdpModel, l: usize) -> Result<SuperstateMdp> {
    let space = enumerate_reachable(model, l)?;
    build_from_space(model, space)
}

pub fn build_from_space(model: &PomdpModel, space: SuperstateSpace) -> Result<SuperstateMdp> {
    let n_actions = model.n_actions();
    let l = space.l;
    let rows: Vec<(Vec<f64>, Vec<Vec<(usize, f64)>>)> = (0..space.len())
        .into_par_iter()
        .map(|i| {
            let belief = &space.rep_beliefs[i];
            let mut rewards = Vec::with_capacity(n_actions);
            let mut trans = Vec::with_capacity(n_actions);
            for a in 0..n_actions {
                rewards.push(model.expected_reward(belief, a));
                let sigma = model.obs_likelihood(belief, a);
                let mut row: Vec<(usize, f64)> = Vec::new();
                for (y, &p) in sigma.iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    let next = space.states[i].extend(Step::new(a, y), l);
                    let j = space
                        .index(&next)
                        .ok_or_else(|| Error::UnknownSuperstate(next.to_string()))?;
                    row.push((j, p));
                }
                row.sort_unstable_by_key(|&(j, _)| j);
                row.dedup_by(|x, y| {
                    if x.0 == y.0 {
                        y.1 += x.1;
                        true
                    } else {
                        false
                    }
                });
                trans.push(row);
            }
            Ok((rewards, trans))
        })
        .collect::<Result<_>>()?;
    let mut reward = Vec::with_capacity(space.len() * n_actions);
    let mut transition = Vec::with_capacity(space.len() * n_actions);
    for (r, t) in rows {
        reward.extend(r);
        transition.extend(t);
    }
    let mdp = TabularMdp {
        n_states: space.len(),
        n_actions,
        gamma: model.gamma(),
        reward,
        transition,
    };
    Ok(SuperstateMdp { space, mdp })
}

/// Dobrushin coefficient `rho'` of the chain induced by `policy`
/// (`policy[B][a]`).
///
/// Rows are compared sparsely; the scan stops at the first pair of rows
/// with disjoint support.
pub fn superstate_mixing(mdp: &TabularMdp, policy: &[Vec<f64>]) -> f64 {
    let chain = mdp.policy_chain(policy);
    sparse_dobrushin(&chain)
}

pub(crate) fn sparse_dobrushin(rows: &[Vec<(usize, f64)>]) -> f64 {
    let mut best = 1.0f64;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            best = best.min(sparse_overlap(&rows[i], &rows[j]));
            if best <= 0.0 {
                return 0.0;
            }
        }
    }
    best.clamp(0.0, 1.0)
}

fn sparse_overlap(x: &[(usize, f64)], y: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < x.len() && j < y.len() {
        match x[i].0.cmp(&y[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += x[i].1.min(y[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Dense Dobrushin coefficient of a policy chain, for cross-checks.
pub fn dense_mixing(mdp: &TabularMdp, policy: &[Vec<f64>]) -> f64 {
    let dense: Vec<Vec<f64>> = mdp
        .policy_chain(policy)
        .iter()
        .map(|row| {
            let mut out = vec![0.0; mdp.n_states];
            for &(j, p) in row {
                out[j] = p;
            }
            out
        })
        .collect();
    dobrushin(&dense).unwrap_or(0.0)
}

/// Uniform policy table for `n_states` states.
pub fn uniform_policy(n_states: usize, n_actions: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / n_actions as f64; n_actions]; n_states]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::customer_retail;
    use crate::planning::value_iteration;

    fn st(a: usize, y: usize) -> Step {
        Step::new(a, y)
    }

    #[test]
    fn group_keeps_last_pairs() {
        let h = vec![st(0, 1), st(1, 2), st(2, 3)];
        assert_eq!(group(&h, 2).steps(), &[st(1, 2), st(2, 3)]);
        assert_eq!(group(&h, 5).steps(), h.as_slice());
        let g = group(&h, 2);
        assert_eq!(group(g.steps(), 2), g);
    }

    #[test]
    fn extension_commutes_with_truncation() {
        let h = vec![st(0, 1), st(1, 0), st(1, 1), st(0, 0)];
        for l in 1..6 {
            let mut longer = h.clone();
            longer.push(st(1, 1));
            assert_eq!(group(&longer, l), group(&h, l).extend(st(1, 1), l));
        }
    }

    fn chain_model() -> PomdpModel {
        PomdpModel::new(&[vec![vec![1.0]]], &[vec![1.0]], &[vec![1.0]], &[1.0], 0.9).unwrap()
    }

    #[test]
    fn single_chain_has_l_plus_one_states() {
        let space = enumerate_reachable(&chain_model(), 3).unwrap();
        assert_eq!(space.len(), 4);
        let lens: Vec<usize> = space.states.iter().map(Superstate::len).collect();
        assert_eq!(lens, vec![0, 1, 2, 3]);
    }

    #[test]
    fn retail_counts() {
        let m = customer_retail();
        let pi0 = m.initial_belief();
        let positive: usize = (0..2)
            .map(|a| m.obs_likelihood(&pi0, a).iter().filter(|&&p| p > 0.0).count())
            .sum();
        assert_eq!(enumerate_reachable(&m, 1).unwrap().len(), 1 + positive);
        for l in 1..4 {
            let n = enumerate_reachable(&m, l).unwrap().len();
            let cap: usize = (0..=l).map(|k| 8usize.pow(k as u32)).sum();
            assert!(n <= cap);
        }
    }

    #[test]
    fn ordering_is_layer_then_lex() {
        let space = enumerate_reachable(&customer_retail(), 2).unwrap();
        for w in space.states.windows(2) {
            assert!(w[0].len() < w[1].len() || (w[0].len() == w[1].len() && w[0] < w[1]));
        }
    }

    #[test]
    fn retail_rows_match_direct_sum() {
        let m = customer_retail();
        let smdp = build(&m, 1).unwrap();
        for (i, b) in smdp.space.states.iter().enumerate() {
            let pi = m.belief_of_history(b.steps()).unwrap();
            for a in 0..2 {
                let mut expect = vec![0.0; smdp.n_states()];
                for y in 0..4 {
                    let mut mass = 0.0;
                    for s in 0..4 {
                        for s2 in 0..4 {
                            mass += m.obs_row(s2)[y] * m.transition_prob(a, s, s2) * pi.probs()[s];
                        }
                    }
                    if mass > 0.0 {
                        let j = smdp.index(&Superstate::from_steps(vec![st(a, y)])).unwrap();
                        expect[j] += mass;
                    }
                }
                let got = smdp.mdp.dense_row(i, a);
                for (g, e) in got.iter().zip(&expect) {
                    assert!((g - e).abs() < 1e-12);
                }
                let r: f64 = (0..4).map(|s| pi.probs()[s] * m.reward(s, a)).sum();
                assert!((smdp.mdp.reward(i, a) - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_reward_carries_over() {
        let m = customer_retail();
        let tables: Vec<Vec<Vec<f64>>> = (0..2).map(|a| m.transition_matrix(a)).collect();
        let c = PomdpModel::new(&tables, &m.obs_matrix(), &vec![vec![0.7; 2]; 4], &[0.25; 4], 0.9)
            .unwrap();
        let smdp = build(&c, 2).unwrap();
        assert!(smdp.mdp.reward.iter().all(|&r| (r - 0.7).abs() < 1e-12));
    }

    fn fully_observed() -> PomdpModel {
        let t = vec![
            vec![vec![0.7, 0.3, 0.0], vec![0.0, 0.6, 0.4], vec![0.5, 0.0, 0.5]],
            vec![vec![0.1, 0.1, 0.8], vec![0.9, 0.1, 0.0], vec![0.0, 0.3, 0.7]],
        ];
        let eye: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| f64::from(i == j)).collect()).collect();
        let r = vec![vec![0.0, 1.0], vec![0.5, 0.0], vec![1.0, 0.2]];
        PomdpModel::new(&t, &eye, &r, &[1.0 / 3.0; 3], 0.9).unwrap()
    }

    #[test]
    fn fully_observed_matches_underlying_mdp() {
        let m = fully_observed();
        let smdp = build(&m, 1).unwrap();
        let under = TabularMdp::underlying(&m);
        for (i, b) in smdp.space.states.iter().enumerate() {
            let Some(last) = b.steps().last() else { continue };
            let s = last.obs;
            for a in 0..2 {
                assert!((smdp.mdp.reward(i, a) - m.reward(s, a)).abs() < 1e-12);
                let mut by_state = [0.0; 3];
                for &(j, p) in smdp.mdp.row(i, a) {
                    by_state[smdp.space.states[j].steps()[0].obs] += p;
                }
                for s2 in 0..3 {
                    assert!((by_state[s2] - m.transition_prob(a, s, s2)).abs() < 1e-12);
                }
            }
        }
        let vs = value_iteration(&smdp.mdp, 1e-10, 10_000).unwrap();
        let vm = value_iteration(&under, 1e-10, 10_000).unwrap();
        for (i, b) in smdp.space.states.iter().enumerate().skip(1) {
            let s = b.steps()[0].obs;
            assert!((vs.values[i] - vm.values[s]).abs() < 1e-6);
        }
    }

    #[test]
    fn pushforward_matches_rows() {
        let m = customer_retail();
        let smdp = build(&m, 2).unwrap();
        for i in 0..smdp.n_states() {
            let pi = smdp.rep_belief(i);
            for a in 0..2 {
                let sigma = m.obs_likelihood(pi, a);
                let row = smdp.mdp.dense_row(i, a);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for (y, &p) in sigma.iter().enumerate() {
                    let next = smdp.space.states[i].extend(st(a, y), 2);
                    if p > 0.0 {
                        assert!((row[smdp.index(&next).unwrap()] - p).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn mixing_extremes() {
        let same = TabularMdp::from_dense(&[vec![vec![0.5, 0.5], vec![0.5, 0.5]]], &[vec![0.0], vec![0.0]], 0.9)
            .unwrap();
        assert_eq!(superstate_mixing(&same, &uniform_policy(2, 1)), 1.0);
        let perm = TabularMdp::from_dense(&[vec![vec![0.0, 1.0], vec![1.0, 0.0]]], &[vec![0.0], vec![0.0]], 0.9)
            .unwrap();
        assert_eq!(superstate_mixing(&perm, &uniform_policy(2, 1)), 0.0);
    }

    #[test]
    fn retail_mixing_matches_dense() {
        let smdp = build(&customer_retail(), 1).unwrap();
        let pol = uniform_policy(smdp.n_states(), 2);
        let sparse = superstate_mixing(&smdp.mdp, &pol);
        let dense = dense_mixing(&smdp.mdp, &pol);
        assert!(sparse > 0.0 && sparse <= 1.0);
        assert!((sparse - dense).abs() < 1e-12);
    }
}
