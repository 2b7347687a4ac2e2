//! Built-in benchmark POMDPs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::{Labels, PomdpModel};

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Four-level customer engagement model.
///
/// Transition and observation tables are the published ones. The reward
/// is artifact-defined: 1 in the purchasing state `s3` under either
/// action, 0 elsewhere. Uniform prior, `gamma = 0.9`.
pub fn customer_retail() -> PomdpModel {
    let a0 = vec![
        vec![0.4, 0.4, 0.1, 0.1],
        vec![0.3, 0.3, 0.2, 0.2],
        vec![0.2, 0.3, 0.3, 0.2],
        vec![0.1, 0.2, 0.4, 0.3],
    ];
    let a1 = vec![
        vec![0.4, 0.3, 0.2, 0.1],
        vec![0.2, 0.4, 0.2, 0.2],
        vec![0.1, 0.3, 0.4, 0.2],
        vec![0.1, 0.2, 0.3, 0.4],
    ];
    let obs = vec![
        vec![0.8, 0.2, 0.0, 0.0],
        vec![0.3, 0.5, 0.2, 0.0],
        vec![0.1, 0.3, 0.4, 0.2],
        vec![0.0, 0.1, 0.3, 0.6],
    ];
    let reward = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]];
    PomdpModel::new(&[a0, a1], &obs, &reward, &[0.25; 4], 0.9)
        .expect("customer retail tables are stochastic")
        .with_labels(Labels {
            states: strings(&["uninterested", "browsing", "considering", "purchasing"]),
            actions: strings(&["generic_homepage", "recommend_trending"]),
            observations: strings(&["no_clicks", "viewed_product", "added_to_cart", "purchased"]),
        })
}

/// State layout of [`tmaze`]; exposed so callers can build histories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TMazeLayout {
    pub corridor_len: usize,
    pub arm_cap: usize,
}

impl TMazeLayout {
    /// Corridor cell `i` in `0..=corridor_len` (junction at `corridor_len`)
    /// for cue `d` in `{0, 1}`.
    pub fn corridor(&self, i: usize, d: usize) -> usize {
        d * (self.corridor_len + 1) + i
    }

    /// Cell `i` in `1..=arm_cap` of arm `arm` (0 = first direction) for cue `d`.
    pub fn arm(&self, arm: usize, i: usize, d: usize) -> usize {
        let base = 2 * (self.corridor_len + 1);
        base + (arm * 2 + d) * self.arm_cap + (i - 1)
    }

    pub fn n_states(&self) -> usize {
        2 * (self.corridor_len + 1) + 4 * self.arm_cap
    }

    /// Observation emitted in corridor cell `i` (cue shown in cells 0 and 1).
    pub fn corridor_obs(&self, i: usize, d: usize) -> usize {
        if i <= 1 {
            d
        } else {
            i
        }
    }

    pub fn arm_obs(&self, arm: usize, i: usize) -> usize {
        self.corridor_len + 1 + arm * self.arm_cap + (i - 1)
    }

    pub fn n_obs(&self) -> usize {
        self.corridor_len + 1 + 2 * self.arm_cap
    }
}

/// Infinite-horizon T-maze with arms capped at `arm_cap` cells.
///
/// The cue `d` is drawn by the prior (uniform over the two start cells)
/// and shown by the first observation; afterwards observations reveal the
/// position only. Every action advances along the corridor; at the
/// junction action `k` enters arm `k`. Arm cells pay `reward` under every
/// action when the arm matches the cue. The last arm cell self-loops.
pub fn tmaze(corridor_len: usize, reward: f64, gamma: f64, arm_cap: usize) -> Result<PomdpModel> {
    if corridor_len < 1 || arm_cap < 1 {
        return Err(Error::OutOfRange("tmaze needs corridor_len >= 1 and arm_cap >= 1".into()));
    }
    let lay = TMazeLayout { corridor_len, arm_cap };
    let n = lay.n_states();
    let k = lay.n_obs();
    let mut t = vec![vec![vec![0.0; n]; n]; 2];
    let mut o = vec![vec![0.0; k]; n];
    let mut r = vec![vec![0.0; 2]; n];
    let mut state_labels = vec![String::new(); n];
    for d in 0..2 {
        for i in 0..=corridor_len {
            let s = lay.corridor(i, d);
            state_labels[s] = format!("s{i}^{}", d + 1);
            o[s][lay.corridor_obs(i, d)] = 1.0;
            for (a, block) in t.iter_mut().enumerate() {
                let next = if i < corridor_len { lay.corridor(i + 1, d) } else { lay.arm(a, 1, d) };
                block[s][next] = 1.0;
            }
        }
        for arm in 0..2 {
            for i in 1..=arm_cap {
                let s = lay.arm(arm, i, d);
                let tag = if arm == 0 { 'r' } else { 'q' };
                state_labels[s] = format!("{tag}{i}^{}", d + 1);
                o[s][lay.arm_obs(arm, i)] = 1.0;
                let next = lay.arm(arm, (i + 1).min(arm_cap), d);
                for block in t.iter_mut() {
                    block[s][next] = 1.0;
                }
                if arm == d {
                    r[s] = vec![reward; 2];
                }
            }
        }
    }
    let mut init = vec![0.0; n];
    init[lay.corridor(0, 0)] = 0.5;
    init[lay.corridor(0, 1)] = 0.5;
    let mut obs_labels = vec!["cue_1".to_string(), "cue_2".to_string()];
    obs_labels.extend((2..=corridor_len).map(|i| format!("corridor_{i}")));
    for tag in ["r", "q"] {
        obs_labels.extend((1..=arm_cap).map(|i| format!("{tag}_{i}")));
    }
    Ok(PomdpModel::new(&t, &o, &r, &init, gamma)?.with_labels(Labels {
        states: state_labels,
        actions: strings(&["first", "second"]),
        observations: obs_labels,
    }))
}

/// Layout of a noisy grid world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Absorbing cells with no reward.
    pub holes: Vec<usize>,
    /// Absorbing cell; entering it pays 1.
    pub goal: usize,
    pub start: usize,
    /// Probability that the observation is replaced by a uniformly chosen
    /// wrong cell.
    pub noise_p: f64,
    pub gamma: f64,
    /// Always false: moves are deterministic.
    pub slippery: bool,
}

impl GridSpec {
    /// The 4x4 frozen-lake layout (`SFFF / FHFH / FFFH / HFFG`).
    pub fn frozen_lake_4x4(noise_p: f64) -> Self {
        Self {
            width: 4,
            height: 4,
            holes: vec![5, 7, 11, 12],
            goal: 15,
            start: 0,
            noise_p,
            gamma: 0.95,
            slippery: false,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    fn check(&self) -> Result<()> {
        let n = self.n_cells();
        if n < 2 {
            return Err(Error::OutOfRange("grid needs at least two cells".into()));
        }
        if self.goal >= n || self.start >= n || self.holes.iter().any(|&h| h >= n) {
            return Err(Error::OutOfRange("grid cell index out of range".into()));
        }
        if self.holes.contains(&self.goal) {
            return Err(Error::OutOfRange("goal cell is also a hole".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_p) {
            return Err(Error::OutOfRange(format!("noise_p = {}", self.noise_p)));
        }
        if self.slippery {
            return Err(Error::OutOfRange("slippery grids are not supported".into()));
        }
        Ok(())
    }

    /// Deterministic move with walls clamping. Actions: 0 left, 1 down,
    /// 2 right, 3 up.
    pub fn moved(&self, cell: usize, action: usize) -> usize {
        let (x, y) = (cell % self.width, cell / self.width);
        let (nx, ny) = match action {
            0 => (x.saturating_sub(1), y),
            1 => (x, (y + 1).min(self.height - 1)),
            2 => ((x + 1).min(self.width - 1), y),
            _ => (x, y.saturating_sub(1)),
        };
        ny * self.width + nx
    }
}

/// Grid world whose observation is the true cell with probability `1 - p`
/// and otherwise one of the other `n - 1` cells uniformly.
pub fn noisy_gridworld(spec: &GridSpec) -> Result<PomdpModel> {
    spec.check()?;
    let n = spec.n_cells();
    let absorbing = |c: usize| c == spec.goal || spec.holes.contains(&c);
    let mut t = vec![vec![vec![0.0; n]; n]; 4];
    let mut r = vec![vec![0.0; 4]; n];
    for c in 0..n {
        for a in 0..4 {
            if absorbing(c) {
                t[a][c][c] = 1.0;
            } else {
                let next = spec.moved(c, a);
                t[a][c][next] = 1.0;
                if next == spec.goal {
                    r[c][a] = 1.0;
                }
            }
        }
    }
    let wrong = spec.noise_p / (n - 1) as f64;
    let o: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..n).map(|y| if y == c { 1.0 - spec.noise_p } else { wrong }).collect())
        .collect();
    let mut init = vec![0.0; n];
    init[spec.start] = 1.0;
    let cells: Vec<String> = (0..n).map(|c| format!("cell_{c}")).collect();
    Ok(PomdpModel::new(&t, &o, &r, &init, spec.gamma)?.with_labels(Labels {
        states: cells.clone(),
        actions: strings(&["left", "down", "right", "up"]),
        observations: cells,
    }))
}

/// Two-state, two-action, two-observation toy.
///
/// `a0` keeps the state with probability 0.8, `a1` switches it with
/// probability 0.8. Observations are correct with probability 0.85.
/// Reward 1 when the action index matches the hidden state.
pub fn two_state_toy() -> PomdpModel {
    let a0 = vec![vec![0.8, 0.2], vec![0.2, 0.8]];
    let a1 = vec![vec![0.2, 0.8], vec![0.8, 0.2]];
    let obs = vec![vec![0.85, 0.15], vec![0.15, 0.85]];
    let reward = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    PomdpModel::new(&[a0, a1], &obs, &reward, &[0.5, 0.5], 0.9)
        .expect("toy tables are stochastic")
        .with_labels(Labels {
            states: strings(&["s0", "s1"]),
            actions: strings(&["a0", "a1"]),
            observations: strings(&["y0", "y1"]),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::Step;

    #[test]
    fn constructors_validate() {
        assert!(customer_retail().validate().is_empty());
        assert!(two_state_toy().validate().is_empty());
        assert!(tmaze(4, 1.0, 0.9, 10).unwrap().validate().is_empty());
        assert!(noisy_gridworld(&GridSpec::frozen_lake_4x4(0.3)).unwrap().validate().is_empty());
    }

    #[test]
    fn customer_retail_tables_are_exact() {
        let m = customer_retail();
        assert_eq!(m.transition_row(0, 0), &[0.4, 0.4, 0.1, 0.1]);
        assert_eq!(m.transition_row(1, 3), &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(m.obs_row(2), &[0.1, 0.3, 0.4, 0.2]);
        assert_eq!(m.obs_row(3), &[0.0, 0.1, 0.3, 0.6]);
        assert_eq!(m.r_bar(), 1.0);
    }

    #[test]
    fn tmaze_is_deterministic() {
        let m = tmaze(4, 1.0, 0.9, 10).unwrap();
        for a in 0..m.n_actions() {
            for s in 0..m.n_states() {
                let row = m.transition_row(a, s);
                assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&p| p == 0.0).count(), row.len() - 1);
            }
        }
    }

    #[test]
    fn tmaze_suffix_belief_is_split() {
        // a window that starts after the cue cannot tell the two cues apart
        let m = tmaze(4, 1.0, 0.9, 10).unwrap();
        let lay = TMazeLayout { corridor_len: 4, arm_cap: 10 };
        let uniform = crate::pomdp::BeliefState::uniform(m.n_states());
        let window = [Step::new(0, lay.corridor_obs(3, 0)), Step::new(1, lay.corridor_obs(4, 0))];
        let b = m.filter_from(&uniform, &window).unwrap();
        assert!((b.probs()[lay.corridor(4, 0)] - 0.5).abs() < 1e-12);
        assert!((b.probs()[lay.corridor(4, 1)] - 0.5).abs() < 1e-12);
        // the full history from the start is sharp
        let full = [
            Step::new(0, lay.corridor_obs(1, 1)),
            Step::new(0, lay.corridor_obs(2, 1)),
            Step::new(0, lay.corridor_obs(3, 1)),
            Step::new(0, lay.corridor_obs(4, 1)),
        ];
        let b = m.belief_of_history(&full).unwrap();
        assert_eq!(b.probs()[lay.corridor(4, 1)], 1.0);
    }

    #[test]
    fn gridworld_noise_free_is_fully_observed() {
        let m = noisy_gridworld(&GridSpec::frozen_lake_4x4(0.0)).unwrap();
        for s in 0..16 {
            for y in 0..16 {
                assert_eq!(m.obs_row(s)[y], if s == y { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn gridworld_rows_sum_exactly() {
        let m = noisy_gridworld(&GridSpec::frozen_lake_4x4(0.3)).unwrap();
        for s in 0..16 {
            let sum: f64 = m.obs_row(s).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // entering the goal pays, sitting in it does not
        assert_eq!(m.reward(14, 2), 1.0);
        assert_eq!(m.reward(15, 2), 0.0);
        let absorbing = m.absorbing_states();
        assert!(absorbing[5] && absorbing[15] && !absorbing[0]);
    }

    #[test]
    fn grid_spec_rejects_goal_in_hole() {
        let mut spec = GridSpec::frozen_lake_4x4(0.1);
        spec.holes.push(15);
        assert!(noisy_gridworld(&spec).is_err());
    }

    #[test]
    fn toy_rows_are_exact() {
        let m = two_state_toy();
        for a in 0..2 {
            for s in 0..2 {
                assert_eq!(m.transition_row(a, s).iter().sum::<f64>(), 1.0);
            }
        }
    }
}
