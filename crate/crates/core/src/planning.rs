//! Exact solvers on finite MDPs and a depth-limited belief-space oracle.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pomdp::{BeliefState, PomdpModel, Step};
use crate::superstate::{group, SuperstateMdp, TabularMdp};
use crate::verify::{xi_smdp_pomdp, BoundInputs};

/// Lowest index attaining the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
    /// `q_values[s * n_actions + a]`.
    pub q_values: Vec<f64>,
    pub greedy: Vec<usize>,
    /// Sup-norm Bellman residual of the last sweep.
    pub residual: f64,
    pub iterations: usize,
    pub n_actions: usize,
}

impl ValueTable {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q_values[s * self.n_actions + a]
    }

    /// Deterministic greedy policy as a probability table.
    pub fn greedy_policy(&self) -> Vec<Vec<f64>> {
        self.greedy
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; self.n_actions];
                row[a] = 1.0;
                row
            })
            .collect()
    }

    pub const CSV_HEADER: &'static str = "superstate,action,q,value,greedy";
}

fn q_from_values(mdp: &TabularMdp, v: &[f64]) -> Vec<f64> {
    let na = mdp.n_actions;
    (0..mdp.n_states * na)
        .map(|k| {
            let next: f64 = mdp.transition[k].iter().map(|&(j, p)| p * v[j]).sum();
            mdp.reward[k] + mdp.gamma * next
        })
        .collect()
}

/// Optimal Bellman operator applied to `v`.
pub fn bellman_optimal(mdp: &TabularMdp, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let q = q_from_values(mdp, v);
    let next = q
        .chunks(mdp.n_actions)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    (next, q)
}

/// Value iteration from `V = 0` until the sup-norm Bellman residual is at
/// most `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iter: usize) -> Result<ValueTable> {
    if !(tol > 0.0) {
        return Err(Error::OutOfRange(format!("tol = {tol}")));
    }
    let mut v = vec![0.0; mdp.n_states];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let (next, _) = bellman_optimal(mdp, &v);
        residual = sup_diff(&next, &v);
        v = next;
        iterations += 1;
        if residual <= tol {
            break;
        }
    }
    if residual > tol {
        return Err(Error::NotConverged { residual, iterations });
    }
    // report the residual of the returned table, not of its predecessor
    let (next, q) = bellman_optimal(mdp, &v);
    let residual = sup_diff(&next, &v);
    let greedy: Vec<usize> = q.chunks(mdp.n_actions).map(argmax).collect();
    let values = greedy.iter().enumerate().map(|(s, &a)| q[s * mdp.n_actions + a]).collect();
    Ok(ValueTable { values, q_values: q, greedy, residual, iterations, n_actions: mdp.n_actions })
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMethod {
    /// Dense LU solve of `(I - gamma P_mu) V = r_mu`.
    Exact,
    /// Fixed-point iteration of the policy Bellman operator.
    Iterative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValues {
    /// `q[s * n_actions + a]`.
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub n_actions: usize,
}

impl PolicyValues {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }
}

/// `Q^mu` and `V^mu` for a stochastic policy `policy[s][a]`.
pub fn policy_evaluation(
    mdp: &TabularMdp,
    policy: &[Vec<f64>],
    method: EvalMethod,
    tol: f64,
) -> Result<PolicyValues> {
    let (n, na) = (mdp.n_states, mdp.n_actions);
    if policy.len() != n || policy.iter().any(|r| r.len() != na) {
        return Err(Error::DimensionMismatch(format!("policy must be {n} x {na}")));
    }
    for (s, row) in policy.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::NotSimplex(format!("policy row {s} sums to {sum}")));
        }
    }
    let r_mu: Vec<f64> = (0..n)
        .map(|s| (0..na).map(|a| policy[s][a] * mdp.reward(s, a)).sum())
        .collect();
    let v = match method {
        EvalMethod::Exact => {
            let mut m = DMatrix::<f64>::identity(n, n);
            for s in 0..n {
                for a in 0..na {
                    let w = policy[s][a];
                    if w == 0.0 {
                        continue;
                    }
                    for &(j, p) in mdp.row(s, a) {
                        m[(s, j)] -= mdp.gamma * w * p;
                    }
                }
            }
            let sol = m.lu().solve(&DVector::from_vec(r_mu)).ok_or(Error::SingularSystem)?;
            sol.iter().copied().collect()
        }
        EvalMethod::Iterative => {
            if !(tol > 0.0) {
                return Err(Error::OutOfRange(format!("tol = {tol}")));
            }
            // stop when the fixed-point error bound falls below tol
            let stop = tol * (1.0 - mdp.gamma);
            let mut v = vec![0.0; n];
            loop {
                let next: Vec<f64> = (0..n)
                    .map(|s| {
                        let mut acc = r_mu[s];
                        for a in 0..na {
                            let w = policy[s][a];
                            if w != 0.0 {
                                let ev: f64 = mdp.row(s, a).iter().map(|&(j, p)| p * v[j]).sum();
                                acc += mdp.gamma * w * ev;
                            }
                        }
                        acc
                    })
                    .collect();
                let diff = sup_diff(&next, &v);
                v = next;
                if diff <= stop {
                    break;
                }
            }
            v
        }
    };
    let q = q_from_values(mdp, &v);
    Ok(PolicyValues { q, v, n_actions: na })
}

/// Leaf evaluation used by the belief-tree oracle.
#[derive(Debug, Clone, PartialEq)]
pub enum LeafBound {
    /// `V_0 = 0`; truncation bound `gamma^d r_bar / (1 - gamma)`.
    Zero,
    /// Leaves take the midpoint of an upper bound (fully observed MDP
    /// values) and a lower bound (best open-loop constant action).
    /// Truncation bound `gamma^d` times the largest half-width seen.
    MdpBounds(MdpBoundTables),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpBoundTables {
    /// `Q_MDP[s * n_actions + a]`.
    pub q_mdp: Vec<f64>,
    /// `blind[a][s]`: value of always playing `a`.
    pub blind: Vec<Vec<f64>>,
    pub n_actions: usize,
}

impl MdpBoundTables {
    pub fn new(model: &PomdpModel) -> Result<Self> {
        let under = TabularMdp::underlying(model);
        let table = value_iteration(&under, 1e-12, 100_000)?;
        let na = model.n_actions();
        let blind = (0..na)
            .map(|a| {
                let mut pol = vec![vec![0.0; na]; model.n_states()];
                for row in &mut pol {
                    row[a] = 1.0;
                }
                policy_evaluation(&under, &pol, EvalMethod::Exact, 0.0).map(|pv| pv.v)
            })
            .collect::<Result<_>>()?;
        Ok(Self { q_mdp: table.q_values, blind, n_actions: na })
    }

    /// `(lower, upper)` bounds on `V*(belief)`.
    pub fn bounds(&self, belief: &BeliefState) -> (f64, f64) {
        let p = belief.probs();
        let upper = (0..self.n_actions)
            .map(|a| p.iter().enumerate().map(|(s, &w)| w * self.q_mdp[s * self.n_actions + a]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let lower = self
            .blind
            .iter()
            .map(|v| p.iter().zip(v).map(|(w, x)| w * x).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        (lower, upper.max(lower))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValue {
    pub value: f64,
    /// Guaranteed bound on `|value - V*(belief)|`.
    pub truncation_bound: f64,
    pub depth: usize,
}

/// Depth-limited expectimax `V_d(pi) = max_a [r(pi,a) + gamma sum_y
/// sigma(pi,y,a) V_{d-1}(pi')]` with `V_0 = 0`.
pub fn belief_tree_value(model: &PomdpModel, belief: &BeliefState, depth: usize) -> OracleValue {
    belief_tree_value_with(model, belief, depth, &LeafBound::Zero)
}

pub fn belief_tree_value_with(
    model: &PomdpModel,
    belief: &BeliefState,
    depth: usize,
    leaf: &LeafBound,
) -> OracleValue {
    let gamma = model.gamma();
    let (value, width) = if depth == 0 {
        leaf_value(leaf, belief)
    } else {
        // root actions in parallel, each subtree with its own memo
        let per_action: Vec<(f64, f64)> = (0..model.n_actions())
            .into_par_iter()
            .map(|a| {
                let mut memo = HashMap::new();
                action_value(model, belief, a, depth, leaf, &mut memo)
            })
            .collect();
        let best = per_action.iter().map(|x| x.0).collect::<Vec<_>>();
        let width = per_action.iter().fold(0.0f64, |m, x| m.max(x.1));
        (best[argmax(&best)], width)
    };
    let truncation_bound = match leaf {
        LeafBound::Zero => gamma.powi(depth as i32) * model.r_bar() / (1.0 - gamma),
        LeafBound::MdpBounds(_) => gamma.powi(depth as i32) * width,
    };
    OracleValue { value, truncation_bound, depth }
}

/// Leaf value and half-width of its bracket.
fn leaf_value(leaf: &LeafBound, belief: &BeliefState) -> (f64, f64) {
    match leaf {
        LeafBound::Zero => (0.0, 0.0),
        LeafBound::MdpBounds(t) => {
            let (lo, hi) = t.bounds(belief);
            (0.5 * (lo + hi), 0.5 * (hi - lo))
        }
    }
}

type Memo = HashMap<(Vec<u64>, usize), (f64, f64)>;

fn node_value(
    model: &PomdpModel,
    belief: &BeliefState,
    depth: usize,
    leaf: &LeafBound,
    memo: &mut Memo,
) -> (f64, f64) {
    if depth == 0 {
        return leaf_value(leaf, belief);
    }
    let key = (belief.probs().iter().map(|p| p.to_bits()).collect::<Vec<_>>(), depth);
    if let Some(&hit) = memo.get(&key) {
        return hit;
    }
    let mut best = f64::NEG_INFINITY;
    let mut width = 0.0f64;
    for a in 0..model.n_actions() {
        let (q, w) = action_value(model, belief, a, depth, leaf, memo);
        if q > best {
            best = q;
        }
        width = width.max(w);
    }
    memo.insert(key, (best, width));
    (best, width)
}

fn action_value(
    model: &PomdpModel,
    belief: &BeliefState,
    a: usize,
    depth: usize,
    leaf: &LeafBound,
    memo: &mut Memo,
) -> (f64, f64) {
    let mut q = model.expected_reward(belief, a);
    let mut width = 0.0f64;
    let sigma = model.obs_likelihood(belief, a);
    for (y, &p) in sigma.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let Ok(next) = model.belief_update(belief, a, y) else { continue };
        let (v, w) = node_value(model, &next, depth - 1, leaf, memo);
        q += model.gamma() * p * v;
        width = width.max(w);
    }
    (q, width)
}

/// Smallest depth whose zero-leaf truncation bound is at most `target`.
pub fn depth_for_truncation(r_bar: f64, gamma: f64, target: f64) -> usize {
    if r_bar == 0.0 {
        return 0;
    }
    let mut d = 0;
    while gamma.powi(d as i32) * r_bar / (1.0 - gamma) > target && d < 10_000 {
        d += 1;
    }
    d
}

/// Deepen the MDP-bound oracle until its truncation bound is at most
/// `target` or `max_depth` is reached.
pub fn oracle_value(
    model: &PomdpModel,
    belief: &BeliefState,
    target: f64,
    max_depth: usize,
    tables: &MdpBoundTables,
) -> OracleValue {
    let leaf = LeafBound::MdpBounds(tables.clone());
    let mut depth = 0;
    loop {
        let out = belief_tree_value_with(model, belief, depth, &leaf);
        if out.truncation_bound <= target || depth >= max_depth {
            return out;
        }
        depth += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRecord {
    pub history_len: usize,
    pub v_star: f64,
    pub v_tilde: f64,
    pub gap: f64,
    pub truncation: f64,
    pub xi_bound: f64,
    /// `xi_bound + truncation - gap`.
    pub slack: f64,
}

/// Compare the oracle `V*(pi(H))` with `V~(G(H))` for each history.
///
/// `bound` supplies `rho` (and `r_bar`, `gamma`, `l`) for the reported
/// bound; `oracle_target` is the truncation budget of the oracle.
pub fn theorem2_gap(
    model: &PomdpModel,
    smdp: &SuperstateMdp,
    values: &ValueTable,
    histories: &[Vec<Step>],
    bound: &BoundInputs,
    oracle_target: f64,
    max_depth: usize,
) -> Result<Vec<GapRecord>> {
    let xi_bound = xi_smdp_pomdp(bound)?;
    let tables = MdpBoundTables::new(model)?;
    histories
        .par_iter()
        .map(|h| {
            let belief = model.belief_of_history(h)?;
            let oracle = oracle_value(model, &belief, oracle_target, max_depth, &tables);
            let b = group(h, smdp.l());
            let idx = smdp.index(&b).ok_or_else(|| Error::UnknownSuperstate(b.to_string()))?;
            let v_tilde = values.values[idx];
            let gap = (oracle.value - v_tilde).abs();
            Ok(GapRecord {
                history_len: h.len(),
                v_star: oracle.value,
                v_tilde,
                gap,
                truncation: oracle.truncation_bound,
                xi_bound,
                slack: xi_bound + oracle.truncation_bound - gap,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{customer_retail, two_state_toy};
    use crate::rng::seeded;
    use crate::superstate::{build, uniform_policy};
    use rand::Rng;

    fn single(r: f64) -> TabularMdp {
        TabularMdp::from_dense(&[vec![vec![1.0]]], &[vec![r]], 0.9).unwrap()
    }

    fn random_mdp(seed: u64, n: usize, na: usize) -> TabularMdp {
        let mut rng = seeded(seed);
        let t: Vec<Vec<Vec<f64>>> = (0..na)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let row: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
                        let s: f64 = row.iter().sum();
                        row.iter().map(|x| x / s).collect()
                    })
                    .collect()
            })
            .collect();
        let r: Vec<Vec<f64>> = (0..n).map(|_| (0..na).map(|_| rng.random::<f64>()).collect()).collect();
        TabularMdp::from_dense(&t, &r, 0.9).unwrap()
    }

    #[test]
    fn geometric_series() {
        let t = value_iteration(&single(1.0), 1e-12, 10_000).unwrap();
        assert!((t.values[0] - 10.0).abs() < 1e-9);
        let z = value_iteration(&single(0.0), 1e-12, 10).unwrap();
        assert_eq!(z.values, vec![0.0]);
    }

    #[test]
    fn vi_fixed_point_matches_linear_solve() {
        let mdp = random_mdp(2, 3, 2);
        let t = value_iteration(&mdp, 1e-12, 10_000).unwrap();
        let pv = policy_evaluation(&mdp, &t.greedy_policy(), EvalMethod::Exact, 0.0).unwrap();
        for s in 0..3 {
            assert!((t.values[s] - pv.v[s]).abs() < 1e-9);
        }
        let bound = mdp.r_bar() / (1.0 - mdp.gamma);
        assert!(t.values.iter().all(|v| v.abs() <= bound + 1e-9));
    }

    #[test]
    fn vi_reports_non_convergence() {
        let err = value_iteration(&single(1.0), 1e-12, 3).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 3, .. }));
    }

    #[test]
    fn vi_contraction_rate() {
        let mdp = random_mdp(5, 4, 3);
        let mut v = vec![0.0; 4];
        let (first, _) = bellman_optimal(&mdp, &v);
        let r0 = sup_diff(&first, &v);
        for k in 1..30 {
            let (next, _) = bellman_optimal(&mdp, &v);
            let (after, _) = bellman_optimal(&mdp, &next);
            let rk = sup_diff(&after, &next);
            assert!(rk <= 0.9f64.powi(k) * r0 + 1e-9);
            v = next;
        }
    }

    #[test]
    fn ties_go_to_lowest_action() {
        let mdp = TabularMdp::from_dense(
            &[vec![vec![1.0]], vec![vec![1.0]], vec![vec![1.0]]],
            &[vec![0.5, 1.0, 1.0]],
            0.9,
        )
        .unwrap();
        assert_eq!(value_iteration(&mdp, 1e-10, 1000).unwrap().greedy, vec![1]);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn exact_and_iterative_agree_on_retail() {
        let smdp = build(&customer_retail(), 1).unwrap();
        let pol = uniform_policy(smdp.n_states(), 2);
        let e = policy_evaluation(&smdp.mdp, &pol, EvalMethod::Exact, 0.0).unwrap();
        let i = policy_evaluation(&smdp.mdp, &pol, EvalMethod::Iterative, 1e-10).unwrap();
        for (a, b) in e.q.iter().zip(&i.q) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_rewards_evaluate_to_zero() {
        let smdp = build(&customer_retail(), 1).unwrap();
        let mut mdp = smdp.mdp.clone();
        mdp.reward.iter_mut().for_each(|r| *r = 0.0);
        let pol = uniform_policy(mdp.n_states, 2);
        let pv = policy_evaluation(&mdp, &pol, EvalMethod::Exact, 0.0).unwrap();
        assert!(pv.q.iter().all(|&q| q.abs() < 1e-15));
    }

    #[test]
    fn single_action_evaluation_equals_vi() {
        let mdp = random_mdp(8, 4, 1);
        let pv = policy_evaluation(&mdp, &uniform_policy(4, 1), EvalMethod::Exact, 0.0).unwrap();
        let vt = value_iteration(&mdp, 1e-12, 10_000).unwrap();
        for s in 0..4 {
            assert!((pv.v[s] - vt.values[s]).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_depth_zero() {
        let m = customer_retail();
        let o = belief_tree_value(&m, &m.initial_belief(), 0);
        assert_eq!(o.value, 0.0);
        assert!((o.truncation_bound - 10.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_constant_reward_closed_form() {
        let m = two_state_toy();
        let tables: Vec<Vec<Vec<f64>>> = (0..2).map(|a| m.transition_matrix(a)).collect();
        let c = PomdpModel::new(&tables, &m.obs_matrix(), &vec![vec![0.3; 2]; 2], &[0.5, 0.5], 0.9)
            .unwrap();
        for d in 0..6 {
            let o = belief_tree_value(&c, &c.initial_belief(), d);
            let closed = 0.3 * (1.0 - 0.9f64.powi(d as i32)) / 0.1;
            assert!((o.value - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_fully_observed_matches_mdp() {
        let t = vec![
            vec![vec![0.7, 0.3, 0.0], vec![0.0, 0.6, 0.4], vec![0.5, 0.0, 0.5]],
            vec![vec![0.1, 0.1, 0.8], vec![0.9, 0.1, 0.0], vec![0.0, 0.3, 0.7]],
        ];
        let eye: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| f64::from(i == j)).collect()).collect();
        let r = vec![vec![0.0, 1.0], vec![0.5, 0.0], vec![1.0, 0.2]];
        let m = PomdpModel::new(&t, &eye, &r, &[1.0 / 3.0; 3], 0.9).unwrap();
        let vm = value_iteration(&TabularMdp::underlying(&m), 1e-12, 10_000).unwrap();
        for s in 0..3 {
            let o = belief_tree_value(&m, &BeliefState::point(3, s), 8);
            assert!((o.value - vm.values[s]).abs() <= o.truncation_bound);
            let tables = MdpBoundTables::new(&m).unwrap();
            let b = oracle_value(&m, &BeliefState::point(3, s), 1e-9, 4, &tables);
            assert!((b.value - vm.values[s]).abs() <= b.truncation_bound + 1e-12);
        }
    }

    #[test]
    fn successive_depth_differences_shrink() {
        let m = two_state_toy();
        let pi = m.initial_belief();
        let vals: Vec<f64> = (0..9).map(|d| belief_tree_value(&m, &pi, d).value).collect();
        for d in 0..8 {
            let diff = (vals[d + 1] - vals[d]).abs();
            assert!(diff <= 0.9f64.powi(d as i32) * m.r_bar() + 1e-9);
        }
    }

    #[test]
    fn mdp_bound_leaf_brackets_zero_leaf() {
        let m = two_state_toy();
        let tables = MdpBoundTables::new(&m).unwrap();
        let pi = m.initial_belief();
        let deep = belief_tree_value(&m, &pi, 12);
        for d in 0..6 {
            let o = belief_tree_value_with(&m, &pi, d, &LeafBound::MdpBounds(tables.clone()));
            assert!((o.value - deep.value).abs() <= o.truncation_bound + deep.truncation_bound + 1e-9);
        }
    }
}
