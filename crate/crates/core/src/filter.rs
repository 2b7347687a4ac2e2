//! Filter stability diagnostics.
//!
//! The Dobrushin coefficient of a row-stochastic matrix is the smallest
//! overlap `sum_z min(row_x(z), row_y(z))` between two rows. When
//! `(1 - delta_P)(1 - delta_Phi) < 1` the Bayes filter forgets its prior
//! geometrically; [`estimate_rho`] measures that contraction empirically
//! and [`lemma1_gap`] measures how far apart two histories sharing the
//! same last `l` steps can end up.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pomdp::{tv_distance, BeliefState, PomdpModel, Step, PROB_TOL};
use crate::rng::{sample_categorical, seeded, sub_seed, SeededRng};

/// Ratios whose prior TV distance falls below this are skipped.
const MIN_TV: f64 = 1e-12;
/// Slack used when classifying a ratio as contracting or expanding.
const RATIO_TOL: f64 = 1e-9;

fn check_rows(matrix: &[Vec<f64>]) -> Result<()> {
    let width = matrix.first().map_or(0, Vec::len);
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != width {
            return Err(Error::InvalidStochasticMatrix {
                row: i,
                reason: format!("has {} entries, expected {width}", row.len()),
            });
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidStochasticMatrix {
                row: i,
                reason: format!("sums to {sum} or has a negative entry"),
            });
        }
    }
    Ok(())
}

fn overlap(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a.min(*b)).sum()
}

/// Minimum pairwise row overlap. A single-row matrix has coefficient 1.
pub fn dobrushin(matrix: &[Vec<f64>]) -> Result<f64> {
    check_rows(matrix)?;
    let mut best = 1.0f64;
    for i in 0..matrix.len() {
        for j in i + 1..matrix.len() {
            best = best.min(overlap(&matrix[i], &matrix[j]));
        }
    }
    Ok(best.clamp(0.0, 1.0))
}

/// Minimum over actions of the Dobrushin coefficient of `P(.|., a)`.
pub fn transition_dobrushin(model: &PomdpModel) -> f64 {
    (0..model.n_actions())
        .map(|a| dobrushin(&model.transition_matrix(a)).expect("validated model"))
        .fold(1.0, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub delta_p: f64,
    pub delta_phi: f64,
    /// `(1 - delta_p)(1 - delta_phi)`.
    pub product: f64,
    pub stable: bool,
    /// `1 - product`, an analytic stand-in for the contraction rate.
    pub rho_dobrushin: f64,
}

impl StabilityReport {
    pub const CSV_HEADER: &'static str = "delta_P,delta_Phi,product,stable,rho_dobrushin";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.delta_p, self.delta_phi, self.product, self.stable, self.rho_dobrushin
        )
    }
}

pub fn stability_check(model: &PomdpModel) -> StabilityReport {
    let delta_p = transition_dobrushin(model);
    let delta_phi = dobrushin(&model.obs_matrix()).expect("validated model");
    let product = (1.0 - delta_p) * (1.0 - delta_phi);
    StabilityReport {
        delta_p,
        delta_phi,
        product,
        stable: product < 1.0,
        rho_dobrushin: 1.0 - product,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstPair {
    pub first: BeliefState,
    pub second: BeliefState,
    pub action: usize,
    pub obs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionEstimate {
    /// `max(0, 1 - max_ratio)`.
    pub rho_hat: f64,
    pub max_ratio: f64,
    pub worst_pair: Option<WorstPair>,
    /// Belief pairs examined (random draws plus vertex pairs).
    pub n_pairs: usize,
    /// False when some update failed to shrink TV distance (ratio >= 1).
    pub contractive: bool,
}

fn dirichlet_uniform<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let sum: f64 = v.iter().sum();
    for x in &mut v {
        *x /= sum;
    }
    v
}

/// Draw a point uniformly from the probability simplex.
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> BeliefState {
    BeliefState::new(dirichlet_uniform(rng, n)).expect("normalised draw")
}

/// Largest one-step TV contraction ratio over sampled belief pairs.
///
/// Pairs are all distinct simplex vertices followed by `n_pairs`
/// uniform Dirichlet draws taken in order from `rng`, so a larger
/// `n_pairs` examines a superset of the pairs seen with a smaller one.
pub fn estimate_rho<R: Rng + ?Sized>(
    model: &PomdpModel,
    n_pairs: usize,
    rng: &mut R,
) -> Result<ContractionEstimate> {
    if n_pairs == 0 {
        return Err(Error::OutOfRange("n_pairs must be at least 1".into()));
    }
    let n = model.n_states();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((BeliefState::point(n, i), BeliefState::point(n, j)));
        }
    }
    for _ in 0..n_pairs {
        let p = random_simplex(rng, n);
        let q = random_simplex(rng, n);
        pairs.push((p, q));
    }

    // (ratio, pair index, action, obs); ties keep the earliest triple
    let best = pairs
        .par_iter()
        .enumerate()
        .filter_map(|(idx, (p, q))| pair_ratio(model, p, q).map(|(r, a, y)| (r, idx, a, y)))
        .reduce_with(|x, y| {
            if y.0 > x.0 || (y.0 == x.0 && (y.1, y.2, y.3) < (x.1, x.2, x.3)) {
                y
            } else {
                x
            }
        });
    let (max_ratio, idx, action, obs) = best.ok_or(Error::DegenerateModel)?;
    let (first, second) = pairs[idx].clone();
    Ok(ContractionEstimate {
        rho_hat: (1.0 - max_ratio).max(0.0),
        max_ratio,
        worst_pair: Some(WorstPair { first, second, action, obs }),
        n_pairs: pairs.len(),
        contractive: max_ratio < 1.0 - RATIO_TOL,
    })
}

/// Largest ratio for one pair over all `(a, y)` with well-defined updates.
fn pair_ratio(
    model: &PomdpModel,
    p: &BeliefState,
    q: &BeliefState,
) -> Option<(f64, usize, usize)> {
    let before = p.tv_distance(q);
    if before < MIN_TV {
        return None;
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for a in 0..model.n_actions() {
        for y in 0..model.n_obs() {
            let (Ok(p2), Ok(q2)) = (model.belief_update(p, a, y), model.belief_update(q, a, y))
            else {
                continue;
            };
            let ratio = p2.tv_distance(&q2) / before;
            if best.is_none_or(|(r, _, _)| ratio > r) {
                best = Some((ratio, a, y));
            }
        }
    }
    best
}

/// Simulate `len` steps under uniformly random actions, starting from a
/// uniformly random hidden state.
fn random_walk(model: &PomdpModel, len: usize, rng: &mut SeededRng) -> Vec<Step> {
    let mut s = rng.random_range(0..model.n_states());
    let uniform = vec![1.0 / model.n_actions() as f64; model.n_actions()];
    (0..len)
        .map(|_| {
            let a = sample_categorical(rng, &uniform);
            let st = model.step_simulator(s, a, rng);
            s = st.next_state;
            Step::new(a, st.observation)
        })
        .collect()
}

/// Longest prefix drawn in front of the shared window by [`lemma1_gap`].
pub const LEMMA1_MAX_PREFIX: usize = 5;

/// Largest TV distance found between the beliefs of two different
/// histories that share their last `l` steps.
///
/// Each sample draws a window of length `l` and two prefixes of length
/// `0..=LEMMA1_MAX_PREFIX` from random walks; pairs with identical
/// prefixes or zero probability under the prior are discarded.
pub fn lemma1_gap(model: &PomdpModel, l: usize, n_samples: usize, seed: u64) -> Result<f64> {
    if l == 0 {
        return Err(Error::OutOfRange("l must be at least 1".into()));
    }
    const CHUNK: usize = 1024;
    let n_chunks = n_samples.div_ceil(CHUNK);
    let gap = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeded(sub_seed(seed, c as u64));
            let count = CHUNK.min(n_samples - c * CHUNK);
            let mut best = 0.0f64;
            for _ in 0..count {
                let window = random_walk(model, l, &mut rng);
                let k1 = rng.random_range(0..=LEMMA1_MAX_PREFIX);
                let k2 = rng.random_range(0..=LEMMA1_MAX_PREFIX);
                let mut h1 = random_walk(model, k1, &mut rng);
                let mut h2 = random_walk(model, k2, &mut rng);
                if h1 == h2 {
                    continue;
                }
                h1.extend_from_slice(&window);
                h2.extend_from_slice(&window);
                if let (Ok(b1), Ok(b2)) = (model.belief_of_history(&h1), model.belief_of_history(&h2))
                {
                    best = best.max(tv_distance(b1.probs(), b2.probs()));
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{customer_retail, tmaze, two_state_toy};

    fn uniform_model(n: usize, k: usize) -> PomdpModel {
        let t = vec![vec![vec![1.0 / n as f64; n]; n]; 2];
        let o = vec![vec![1.0 / k as f64; k]; n];
        let r = vec![vec![0.0; 2]; n];
        PomdpModel::new(&t, &o, &r, &vec![1.0 / n as f64; n], 0.9).unwrap()
    }

    #[test]
    fn dobrushin_extremes() {
        let same = vec![vec![0.2, 0.3, 0.5]; 3];
        assert_eq!(dobrushin(&same).unwrap(), 1.0);
        let eye = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(dobrushin(&eye).unwrap(), 0.0);
    }

    #[test]
    fn dobrushin_rejects_bad_rows() {
        let bad = vec![vec![0.5, 0.4], vec![0.5, 0.5]];
        assert!(matches!(
            dobrushin(&bad),
            Err(Error::InvalidStochasticMatrix { row: 0, .. })
        ));
    }

    #[test]
    fn dobrushin_is_permutation_invariant() {
        let m = customer_retail().obs_matrix();
        let base = dobrushin(&m).unwrap();
        let rows: Vec<Vec<f64>> = [2, 0, 3, 1].iter().map(|&i| m[i].clone()).collect();
        let cols: Vec<Vec<f64>> = m.iter().map(|r| vec![r[3], r[1], r[0], r[2]]).collect();
        assert_eq!(dobrushin(&rows).unwrap(), base);
        assert!((dobrushin(&cols).unwrap() - base).abs() < 1e-15);
    }

    #[test]
    fn retail_stability() {
        let m = customer_retail();
        assert!((dobrushin(&m.transition_matrix(0)).unwrap() - 0.5).abs() < 1e-12);
        assert!((dobrushin(&m.transition_matrix(1)).unwrap() - 0.6).abs() < 1e-12);
        let rep = stability_check(&m);
        assert!((rep.delta_p - 0.5).abs() < 1e-12);
        assert!((rep.delta_phi - 0.1).abs() < 1e-12);
        assert!((rep.product - 0.45).abs() < 1e-12);
        assert!(rep.stable);
    }

    #[test]
    fn mixing_model_is_stable() {
        let rep = stability_check(&uniform_model(3, 2));
        assert_eq!(rep.product, 0.0);
        assert!(rep.stable);
        assert!(stability_check(&two_state_toy()).stable);
    }

    #[test]
    fn tmaze_fails_condition() {
        let m = tmaze(4, 1.0, 0.9, 10).unwrap();
        let rep = stability_check(&m);
        assert_eq!(rep.delta_p, 0.0);
        assert_eq!(rep.delta_phi, 0.0);
        assert!(!rep.stable);
    }

    #[test]
    fn identical_rows_give_full_contraction() {
        let est = estimate_rho(&uniform_model(3, 2), 50, &mut seeded(1)).unwrap();
        assert!(est.max_ratio.abs() < 1e-12);
        assert!((est.rho_hat - 1.0).abs() < 1e-12);
        assert!(est.contractive);
    }

    #[test]
    fn retail_rho_in_unit_interval() {
        let m = customer_retail();
        let est = estimate_rho(&m, 2000, &mut seeded(3)).unwrap();
        assert!(est.rho_hat > 0.0 && est.rho_hat < 1.0);
        assert!(est.contractive);
        assert_eq!(est.n_pairs, 2000 + 6);
    }

    #[test]
    fn estimate_is_monotone_in_pairs() {
        let m = customer_retail();
        let mut last = 0.0;
        for n in [1, 10, 100, 1000] {
            let est = estimate_rho(&m, n, &mut seeded(9)).unwrap();
            assert!(est.max_ratio >= last);
            last = est.max_ratio;
        }
    }

    #[test]
    fn tmaze_is_not_contractive() {
        let m = tmaze(4, 1.0, 0.9, 10).unwrap();
        let est = estimate_rho(&m, 200, &mut seeded(5)).unwrap();
        assert!(!est.contractive);
        assert!(est.max_ratio >= 1.0 - 1e-12);
    }

    #[test]
    fn forgetting_gap_fully_observed_is_zero() {
        let n = 3;
        let t = vec![
            vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5]],
            vec![vec![0.2, 0.3, 0.5], vec![0.3, 0.3, 0.4], vec![1.0, 0.0, 0.0]],
        ];
        let eye: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
        let m = PomdpModel::new(&t, &eye, &vec![vec![0.0; 2]; n], &[1.0 / 3.0; 3], 0.9).unwrap();
        assert_eq!(lemma1_gap(&m, 1, 2000, 4).unwrap(), 0.0);
    }

    #[test]
    fn forgetting_gap_shrinks_on_stable_model() {
        let m = customer_retail();
        let g1 = lemma1_gap(&m, 1, 4000, 11).unwrap();
        let g3 = lemma1_gap(&m, 3, 4000, 11).unwrap();
        assert!(g1 > 0.0);
        assert!(g3 <= g1 + 1e-9);
        assert!(g1 <= 0.45 + 1e-9);
    }
}
