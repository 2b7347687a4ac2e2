//! Closed-form bound evaluators and the greedy coupling construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::PROB_TOL;

/// Parameters shared by the bound evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub r_bar: f64,
    pub gamma: f64,
    /// Filter contraction rate, in `(0, 1]`.
    pub rho: f64,
    /// Superstate chain mixing rate, in `(0, 1]`.
    pub rho_prime: f64,
    pub l: usize,
    pub l_prime: usize,
    pub tau: u64,
    /// Radius of the parameter ball.
    pub radius: f64,
    /// Function-approximation floor `||Phi^T theta_hat - Q~||_inf`.
    pub xi_fa: f64,
    pub n_actions: usize,
    /// Number of policy updates.
    pub m: usize,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            r_bar: 1.0,
            gamma: 0.9,
            rho: 0.5,
            rho_prime: 0.5,
            l: 1,
            l_prime: 0,
            tau: 10_000,
            radius: 1.0,
            xi_fa: 0.0,
            n_actions: 2,
            m: 1,
        }
    }
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::OutOfRange(msg));
        if !(self.r_bar >= 0.0 && self.r_bar.is_finite()) {
            return bad(format!("r_bar = {}", self.r_bar));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} outside [0, 1)", self.gamma));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho = {} outside (0, 1]", self.rho));
        }
        if !(self.rho_prime > 0.0 && self.rho_prime <= 1.0) {
            return bad(format!("rho_prime = {} outside (0, 1]", self.rho_prime));
        }
        if self.tau < 1 {
            return bad("tau must be at least 1".into());
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius = {}", self.radius));
        }
        if !(self.xi_fa >= 0.0) {
            return bad(format!("xi_fa = {}", self.xi_fa));
        }
        if self.n_actions < 1 || self.m < 1 {
            return bad("n_actions and m must be at least 1".into());
        }
        Ok(())
    }

    fn decay(&self) -> f64 {
        (1.0 - self.rho).powi(self.l as i32)
    }
}

/// Right-hand side of the bound on `|a.b - c.d|` for simplex `a`, `c` and
/// nonnegative `b`, `d`:
/// `||a-c||_1/2 max(|b|,|d|) + |b-d| - ||a-c||_1/4 |b-d|` (sup norms).
pub fn lemma2_rhs(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<f64> {
    let m = a.len();
    if b.len() != m || c.len() != m || d.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "lengths {}, {}, {}, {}",
            a.len(),
            b.len(),
            c.len(),
            d.len()
        )));
    }
    for (name, v) in [("a", a), ("c", c)] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL || v.iter().any(|&x| x < 0.0) {
            return Err(Error::NotSimplex(format!("{name} sums to {sum}")));
        }
    }
    if b.iter().chain(d).any(|&x| x < 0.0) {
        return Err(Error::OutOfRange("b and d must be nonnegative".into()));
    }
    let l1: f64 = a.iter().zip(c).map(|(x, y)| (x - y).abs()).sum();
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let bd: f64 = b.iter().zip(d).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok(l1 / 2.0 * sup(b).max(sup(d)) + bd - l1 / 4.0 * bd)
}

/// `|sum a_i b_i - sum c_i d_i|`.
pub fn lemma2_lhs(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cd: f64 = c.iter().zip(d).map(|(x, y)| x * y).sum();
    (ab - cd).abs()
}

/// Transport plan moving the surplus of `v1` onto the deficit of `v2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPlan {
    /// `alpha[i][j]`, nonzero only for surplus `i` and deficit `j`.
    pub alpha: Vec<Vec<f64>>,
    pub total: f64,
}

impl CouplingPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.alpha.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let n = self.alpha.len();
        (0..n).map(|j| self.alpha.iter().map(|r| r[j]).sum()).collect()
    }
}

/// Greedy coupling: scan surplus indices `i` and deficit indices `j` in
/// increasing order and move `min(delta_i, -delta_j)` between them.
pub fn greedy_coupling(v1: &[f64], v2: &[f64]) -> Result<CouplingPlan> {
    if v1.len() != v2.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", v1.len(), v2.len())));
    }
    for (name, v) in [("v1", v1), ("v2", v2)] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL || v.iter().any(|&x| x < 0.0) {
            return Err(Error::NotSimplex(format!("{name} sums to {sum}")));
        }
    }
    let n = v1.len();
    let mut delta: Vec<f64> = v1.iter().zip(v2).map(|(x, y)| x - y).collect();
    let mut alpha = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if delta[i] <= 0.0 {
                break;
            }
            if delta[j] >= 0.0 {
                continue;
            }
            let mv = delta[i].min(-delta[j]);
            alpha[i][j] = mv;
            total += mv;
            delta[i] -= mv;
            delta[j] += mv;
        }
    }
    Ok(CouplingPlan { alpha, total })
}

/// `2 r (1-rho)^l / (1-gamma) + 2 r gamma (1-rho)^l / ((1-gamma)((1-gamma) + gamma (1-rho)^l))`.
pub fn xi_smdp_pomdp(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(xi_smdp_raw(inputs.r_bar, inputs.gamma, inputs.decay()))
}

fn xi_smdp_raw(r_bar: f64, gamma: f64, q: f64) -> f64 {
    let g1 = 1.0 - gamma;
    2.0 * r_bar * q / g1 + 2.0 * r_bar * gamma * q / (g1 * (g1 + gamma * q))
}

/// Superstate value bound expressed through the superstate count `N`.
///
/// With `kappa = log(1/(1-rho)) / log(|Y||A|)` and `q = N^-kappa`:
/// `2 r q / ((1-rho)(1-gamma)) + 4 r gamma q / ((1-rho)(1-gamma)(2(1-gamma) + gamma q))`.
pub fn corollary1_bound(
    r_bar: f64,
    gamma: f64,
    rho: f64,
    n: f64,
    n_obs: usize,
    n_actions: usize,
) -> Result<f64> {
    if !(n >= 1.0) {
        return Err(Error::OutOfRange(format!("N = {n}")));
    }
    if !(0.0..1.0).contains(&gamma) || !(rho > 0.0 && rho < 1.0) || r_bar < 0.0 {
        return Err(Error::OutOfRange(format!("gamma = {gamma}, rho = {rho}, r_bar = {r_bar}")));
    }
    let base = (n_obs * n_actions) as f64;
    if base <= 1.0 {
        return Err(Error::OutOfRange("|Y||A| must exceed 1".into()));
    }
    let kappa = (1.0 / (1.0 - rho)).ln() / base.ln();
    let q = n.powf(-kappa);
    let g1 = 1.0 - gamma;
    let inv = 1.0 / (1.0 - rho);
    Ok(2.0 * r_bar * inv * q / g1 + 4.0 * r_bar * gamma * inv * q / (g1 * (2.0 * g1 + gamma * q)))
}

/// Summands of the TD error bound, exposed for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdErrorTerms {
    pub xi_fa: f64,
    /// `(1 - 2(1-gamma)/sqrt(tau))^tau * 2R`.
    pub initial: f64,
    /// `[1 - (1 - 2(1-gamma)/sqrt(tau))^tau] / (1-gamma)`.
    pub prefactor: f64,
    pub step_noise: f64,
    pub mixing: f64,
    pub warmup: f64,
    pub window: f64,
    pub window_mixing: f64,
    pub total: f64,
}

/// `C2 = 2 r_bar + 12 R`.
pub fn c2_constant(r_bar: f64, radius: f64) -> f64 {
    2.0 * r_bar + 12.0 * radius
}

/// Bound on `E ||Q_bar - Q~^mu||_inf` after TD with step `1/sqrt(tau)`.
///
/// The distance from the initial parameter to the in-ball minimiser is
/// taken as `2R`. Both `log(1-rho')` factors are evaluated in positive
/// form, so the warm-up contribution `(1-rho')^{l'}` equals
/// `tau^{-1/2}`.
pub fn xi_td_terms(inputs: &BoundInputs) -> Result<TdErrorTerms> {
    inputs.validate()?;
    let BoundInputs { r_bar, gamma, rho, rho_prime, radius, xi_fa, tau, .. } = *inputs;
    let tau_f = tau as f64;
    if tau_f <= 4.0 * (1.0 - gamma).powi(2) {
        return Err(Error::OutOfRange(format!("tau = {tau} must exceed 4(1-gamma)^2")));
    }
    let sqrt_tau = tau_f.sqrt();
    let contraction = (1.0 - 2.0 * (1.0 - gamma) / sqrt_tau).powf(tau_f);
    let initial = contraction * 2.0 * radius;
    let prefactor = (1.0 - contraction) / (1.0 - gamma);
    let scale = r_bar + 2.0 * radius;
    let step_noise = scale * scale / (2.0 * sqrt_tau);
    let mixing = if rho_prime >= 1.0 {
        0.0
    } else {
        c2_constant(r_bar, radius) * scale * tau_f.ln() / (sqrt_tau * (1.0 / (1.0 - rho_prime)).ln())
    };
    let inner = radius * r_bar + radius * radius * (1.0 + (1.0 - rho) * gamma);
    let warmup = inner / sqrt_tau;
    let q = inputs.decay();
    let window = 2.0 * radius * r_bar * q;
    let window_mixing = 2.0 / rho_prime * q * inner;
    let total = xi_fa + initial + prefactor * (step_noise + mixing + warmup + window + window_mixing);
    Ok(TdErrorTerms {
        xi_fa,
        initial,
        prefactor,
        step_noise,
        mixing,
        warmup,
        window,
        window_mixing,
        total,
    })
}

pub fn xi_td_error(inputs: &BoundInputs) -> Result<f64> {
    xi_td_terms(inputs).map(|t| t.total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretTerms {
    pub xi_fa: f64,
    pub xi_ha: f64,
    /// `T^{3/4} log T` with `T = M (tau + l')`; a scale, not a bound.
    pub order_term: f64,
    pub horizon: f64,
}

/// Regret decomposition: `xi_FA = 2 mean(per_iter_fa)`, `xi_HA` as
/// displayed (the two trailing summands are not scaled by `(1-rho)^l`),
/// and the un-constanted `T^{3/4} log T` term.
pub fn regret_bound_terms(inputs: &BoundInputs, per_iter_fa: &[f64]) -> Result<RegretTerms> {
    inputs.validate()?;
    if per_iter_fa.len() != inputs.m {
        return Err(Error::DimensionMismatch(format!(
            "{} per-iteration values for M = {}",
            per_iter_fa.len(),
            inputs.m
        )));
    }
    if per_iter_fa.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::OutOfRange("per-iteration errors must be nonnegative".into()));
    }
    let BoundInputs { r_bar, gamma, rho, rho_prime, radius, tau, .. } = *inputs;
    let xi_fa = 2.0 * per_iter_fa.iter().sum::<f64>() / inputs.m as f64;
    let tau_f = tau as f64;
    let contraction = (1.0 - 2.0 * (1.0 - gamma) / tau_f.sqrt()).powf(tau_f);
    let prefactor = (1.0 - contraction) / (1.0 - gamma);
    let q = inputs.decay();
    let inner = radius * r_bar + radius * radius * (1.0 + (1.0 - rho) * gamma);
    let g1 = 1.0 - gamma;
    let xi_ha = q * prefactor * (4.0 * radius * r_bar + 4.0 / rho_prime * inner)
        + 2.0 * r_bar / g1
        + 2.0 * r_bar * gamma / (g1 * (2.0 * g1 + q * gamma));
    let horizon = inputs.m as f64 * (tau_f + inputs.l_prime as f64);
    let order_term = if horizon > 1.0 { horizon.powf(0.75) * horizon.ln() } else { 0.0 };
    Ok(RegretTerms { xi_fa, xi_ha, order_term, horizon })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AisBounds {
    pub original: f64,
    pub improved: f64,
}

/// Approximate-information-state bounds: `eps/(1-g) + 2 g delta r/(1-g)^2`
/// and `eps/(1-g+delta/4) + g delta r/((1-g)(1-g+delta/2))`.
pub fn ais_bounds(epsilon: f64, delta: f64, r_bar: f64, gamma: f64) -> Result<AisBounds> {
    if !(epsilon >= 0.0 && delta >= 0.0 && r_bar >= 0.0) || !(0.0..1.0).contains(&gamma) {
        return Err(Error::OutOfRange(format!(
            "epsilon = {epsilon}, delta = {delta}, r_bar = {r_bar}, gamma = {gamma}"
        )));
    }
    let g1 = 1.0 - gamma;
    let original = epsilon / g1 + 2.0 * gamma * delta * r_bar / (g1 * g1);
    let improved = epsilon / (g1 + delta / 4.0) + gamma * delta * r_bar / (g1 * (g1 + delta / 2.0));
    Ok(AisBounds { original, improved })
}
