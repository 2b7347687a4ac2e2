use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::pomdp::PomdpModel;
use crate::rng::seeded;
use crate::superstate::SuperstateSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    OneHot,
    RandomProjection { dim: usize },
    /// Per-action bias plus one indicator per window position for the
    /// `(action, observation)` pair seen there, scaled to unit norm.
    Window,
}

/// Feature map `phi(B, a)` over superstate indices.
///
/// One-hot features are implicit (coordinate `B * n_actions + a`);
/// random projections store a dense `n_states * n_actions * dim` table;
/// window features store the active slots of each superstate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    pub dim: usize,
    pub n_states: usize,
    pub n_actions: usize,
    table: Vec<f64>,
    /// Window kind: `slots[B * l + k]` is the offset of position `k`
    /// (most recent first) inside an action block, or `NO_SLOT`.
    slots: Vec<u32>,
    window: usize,
    /// Window kind: size of one action block.
    block: usize,
    scale: f64,
}

const NO_SLOT: u32 = u32::MAX;

impl FeatureMap {
    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        Self {
            kind: FeatureKind::OneHot,
            dim: n_states * n_actions,
            n_states,
            n_actions,
            table: Vec::new(),
            slots: Vec::new(),
            window: 0,
            block: 0,
            scale: 1.0,
        }
    }

    /// Window features over the superstates of `space`.
    pub fn window(space: &SuperstateSpace, n_actions: usize, n_obs: usize) -> Self {
        let l = space.l;
        let pair = n_actions * n_obs;
        let block = 1 + l * pair;
        let mut slots = vec![NO_SLOT; space.len() * l];
        for (b, st) in space.states.iter().enumerate() {
            for (k, step) in st.steps().iter().rev().enumerate() {
                slots[b * l + k] = (1 + k * pair + step.action * n_obs + step.obs) as u32;
            }
        }
        Self {
            kind: FeatureKind::Window,
            dim: n_actions * block,
            n_states: space.len(),
            n_actions,
            table: Vec::new(),
            slots,
            window: l,
            block,
            scale: 1.0 / ((l + 1) as f64).sqrt(),
        }
    }

    /// Coordinates of `phi(B, a)` that are nonzero (window kind), all
    /// carrying the value `scale`.
    fn active(&self, b: usize, a: usize) -> impl Iterator<Item = usize> + '_ {
        let base = a * self.block;
        let slots = &self.slots[b * self.window..(b + 1) * self.window];
        std::iter::once(base)
            .chain(slots.iter().filter(|&&s| s != NO_SLOT).map(move |&s| base + s as usize))
    }

    /// Gaussian vectors scaled so the longest has unit norm.
    pub fn random_projection(n_states: usize, n_actions: usize, dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "random projection needs dim >= 1");
        let mut rng = seeded(seed);
        let mut table: Vec<f64> =
            (0..n_states * n_actions * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let max_norm = table
            .chunks(dim)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if max_norm > 0.0 {
            for x in &mut table {
                *x /= max_norm;
            }
        }
        Self {
            kind: FeatureKind::RandomProjection { dim },
            dim,
            n_states,
            n_actions,
            table,
            slots: Vec::new(),
            window: 0,
            block: 0,
            scale: 1.0,
        }
    }

    /// Dense `phi(B, a)`.
    pub fn phi(&self, b: usize, a: usize) -> Vec<f64> {
        match self.kind {
            FeatureKind::OneHot => {
                let mut v = vec![0.0; self.dim];
                v[b * self.n_actions + a] = 1.0;
                v
            }
            FeatureKind::RandomProjection { .. } => self.row(b, a).to_vec(),
            FeatureKind::Window => {
                let mut v = vec![0.0; self.dim];
                for k in self.active(b, a) {
                    v[k] = self.scale;
                }
                v
            }
        }
    }

    fn row(&self, b: usize, a: usize) -> &[f64] {
        let k = (b * self.n_actions + a) * self.dim;
        &self.table[k..k + self.dim]
    }

    pub fn phi_norm(&self, b: usize, a: usize) -> f64 {
        match self.kind {
            FeatureKind::OneHot => 1.0,
            FeatureKind::RandomProjection { .. } => norm(self.row(b, a)),
            FeatureKind::Window => self.scale * (self.active(b, a).count() as f64).sqrt(),
        }
    }

    /// `phi(B, a) . theta`.
    pub fn dot(&self, b: usize, a: usize, theta: &[f64]) -> f64 {
        match self.kind {
            FeatureKind::OneHot => theta[b * self.n_actions + a],
            FeatureKind::RandomProjection { .. } => {
                self.row(b, a).iter().zip(theta).map(|(x, t)| x * t).sum()
            }
            FeatureKind::Window => self.scale * self.active(b, a).map(|k| theta[k]).sum::<f64>(),
        }
    }

    /// `theta += scale * phi(B, a)`.
    pub fn add_scaled(&self, b: usize, a: usize, scale: f64, theta: &mut [f64]) {
        match self.kind {
            FeatureKind::OneHot => theta[b * self.n_actions + a] += scale,
            FeatureKind::RandomProjection { .. } => {
                for (t, x) in theta.iter_mut().zip(self.row(b, a)) {
                    *t += scale * x;
                }
            }
            FeatureKind::Window => {
                for k in self.active(b, a) {
                    theta[k] += scale * self.scale;
                }
            }
        }
    }

    /// Add `scale * phi(B, a)` and return the change in `||theta||^2`.
    pub(crate) fn add_scaled_tracked(&self, b: usize, a: usize, scale: f64, theta: &mut [f64]) -> Option<f64> {
        match self.kind {
            FeatureKind::OneHot => {
                let k = b * self.n_actions + a;
                let old = theta[k];
                theta[k] += scale;
                Some(theta[k] * theta[k] - old * old)
            }
            FeatureKind::Window => {
                let mut d = 0.0;
                for k in self.active(b, a) {
                    let old = theta[k];
                    theta[k] += scale * self.scale;
                    d += theta[k] * theta[k] - old * old;
                }
                Some(d)
            }
            FeatureKind::RandomProjection { .. } => {
                self.add_scaled(b, a, scale, theta);
                None
            }
        }
    }

    /// A parameter with `phi(B, a) . theta = c` everywhere, when the
    /// features span the constants.
    pub fn constant(&self, c: f64) -> Option<Vec<f64>> {
        match self.kind {
            FeatureKind::OneHot => Some(vec![c; self.dim]),
            FeatureKind::Window => {
                let mut theta = vec![0.0; self.dim];
                for a in 0..self.n_actions {
                    theta[a * self.block] = c / self.scale;
                }
                Some(theta)
            }
            FeatureKind::RandomProjection { .. } => None,
        }
    }

    /// `Q(B, .) = Phi^T theta` for one superstate.
    pub fn q_row(&self, b: usize, theta: &[f64]) -> Vec<f64> {
        (0..self.n_actions).map(|a| self.dot(b, a, theta)).collect()
    }

    /// Full table `Q[B * n_actions + a]`.
    pub fn q_table(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.n_states).flat_map(|b| self.q_row(b, theta)).collect()
    }
}

/// Features of `kind` over the superstates of `space`; `seed` is used by
/// random projections only.
pub fn make_features(model: &PomdpModel, space: &SuperstateSpace, kind: FeatureKind, seed: u64) -> FeatureMap {
    let (n, na) = (space.len(), model.n_actions());
    match kind {
        FeatureKind::OneHot => FeatureMap::one_hot(n, na),
        FeatureKind::RandomProjection { dim } => FeatureMap::random_projection(n, na, dim, seed),
        FeatureKind::Window => FeatureMap::window(space, na, model.n_obs()),
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean projection onto the ball of radius `radius`.
pub fn project_ball(theta: &mut [f64], radius: f64) {
    let n = norm(theta);
    if n > radius {
        let s = radius / n;
        for t in theta.iter_mut() {
            *t *= s;
        }
    }
}
