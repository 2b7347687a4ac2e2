use super::features::FeatureMap;

/// Stochastic policy over superstate indices.
pub trait Policy: Sync {
    fn n_actions(&self) -> usize;

    /// Write `mu(. | B)` into `out`.
    fn probs(&self, b: usize, out: &mut [f64]);

    /// Dense table `table[B][a]` over the first `n_states` superstates.
    fn table(&self, n_states: usize) -> Vec<Vec<f64>> {
        (0..n_states)
            .map(|b| {
                let mut row = vec![0.0; self.n_actions()];
                self.probs(b, &mut row);
                row
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub table: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { table: vec![vec![1.0 / n_actions as f64; n_actions]; n_states] }
    }
}

impl Policy for TabularPolicy {
    fn n_actions(&self) -> usize {
        self.table.first().map_or(0, Vec::len)
    }

    fn probs(&self, b: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.table[b]);
    }
}

/// Uniform over `n` actions everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformPolicy(pub usize);

impl Policy for UniformPolicy {
    fn n_actions(&self) -> usize {
        self.0
    }

    fn probs(&self, _b: usize, out: &mut [f64]) {
        out.fill(1.0 / self.0 as f64);
    }
}

/// Row-centred softmax of `eta * logits`, mixed with the uniform
/// distribution: `(1 - mix) softmax + mix / |A|`.
pub fn mixed_softmax(logits: &[f64], eta: f64, mix: f64, out: &mut [f64]) {
    let n = logits.len() as f64;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (eta * (z - max)).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = (1.0 - mix) * *o / sum + mix / n;
    }
}

/// `mu(a|B) ∝ exp(eta * phi(B,a) . theta_sum)` with a uniform floor.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    /// Sum of the TD parameter vectors learned so far.
    pub theta_sum: Vec<f64>,
    pub eta: f64,
    pub explore_mix: f64,
}

/// A [`SoftmaxPolicy`] paired with the features it is defined on.
#[derive(Clone, Copy)]
pub struct BoundSoftmax<'a> {
    pub policy: &'a SoftmaxPolicy,
    pub features: &'a FeatureMap,
}

impl Policy for BoundSoftmax<'_> {
    fn n_actions(&self) -> usize {
        self.features.n_actions
    }

    fn probs(&self, b: usize, out: &mut [f64]) {
        let logits = self.features.q_row(b, &self.policy.theta_sum);
        mixed_softmax(&logits, self.policy.eta, self.policy.explore_mix, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_floor_and_shift() {
        let mut p = [0.0; 3];
        mixed_softmax(&[1000.0, 0.0, -1000.0], 1.0, 0.06, &mut p);
        assert!(p.iter().all(|&x| x >= 0.02 - 1e-15));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut q = [0.0; 3];
        mixed_softmax(&[1.5, 0.25, -2.0], 0.7, 0.05, &mut p);
        mixed_softmax(&[9.5, 8.25, 6.0], 0.7, 0.05, &mut q);
        assert_eq!(p, q);
    }

    #[test]
    fn zero_eta_is_uniform() {
        let mut p = [0.0; 4];
        mixed_softmax(&[3.0, -1.0, 2.0, 0.0], 0.0, 0.05, &mut p);
        for x in p {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }
}
