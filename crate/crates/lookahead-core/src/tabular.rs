//! Exact dynamic programming on small tabular MDPs, plus the machinery
//! for empirically checking the lookahead performance bound and the
//! trust-region total-variation bound.
//!
//! Everything here is deliberately exact: value iteration to a sup-norm
//! Bellman residual, policy evaluation by direct linear solve, and
//! H-step lookahead by backward induction. Model and value-function
//! error are injected by certified perturbations so the bound can be
//! checked with no slack hiding in approximations.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("transition row ({s},{a}) sums to {sum}, not 1")]
    BadRow { s: usize, a: usize, sum: f64 },
    #[error("reward table entry ({s},{a}) = {r} outside [0, inf)")]
    BadReward { s: usize, a: usize, r: f64 },
    #[error("discount factor must lie in (0,1), got {0}")]
    InvalidGamma(f64),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("mixing coefficient must lie in [0,1], got {0}")]
    BadMixing(f64),
}

/// Finite MDP with dense transition tensor `p[s][a][s']` and reward
/// table `r[s][a]` bounded in `[0, r_max]`.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Array3<f64>,
    pub r: Array2<f64>,
    pub gamma: f64,
}

/// Deterministic tabular policy: one action index per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularPolicy(pub Vec<usize>);

/// Inputs to the lookahead performance bound: worst-case model error
/// (total variation), worst-case value error (sup norm), horizon,
/// discount, and the reward/value range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundInputs {
    pub eps_m: f64,
    pub eps_v: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub v_max: f64,
}

impl TabularMdp {
    pub fn new(
        p: Array3<f64>,
        r: Array2<f64>,
        gamma: f64,
    ) -> Result<Self, TabularError> {
        let (n_states, n_actions, n2) = p.dim();
        assert_eq!(n_states, n2, "transition tensor must be square in states");
        assert_eq!(r.dim(), (n_states, n_actions));
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(TabularError::InvalidGamma(gamma));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let sum: f64 = (0..n_states).map(|s2| p[[s, a, s2]]).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(TabularError::BadRow { s, a, sum });
                }
                let rv = r[[s, a]];
                if !rv.is_finite() || rv < 0.0 {
                    return Err(TabularError::BadReward { s, a, r: rv });
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            p,
            r,
            gamma,
        })
    }

    /// Random dense MDP: transition rows uniform on the simplex, rewards
    /// uniform in `[0, r_max]`.
    pub fn random<R: Rng>(
        n_states: usize,
        n_actions: usize,
        r_max: f64,
        gamma: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Array3::zeros((n_states, n_actions, n_states));
        let mut r = Array2::zeros((n_states, n_actions));
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = random_simplex_row(n_states, rng);
                for s2 in 0..n_states {
                    p[[s, a, s2]] = row[s2];
                }
                r[[s, a]] = rng.random_range(0.0..=1.0) * r_max;
            }
        }
        Self::new(p, r, gamma).expect("construction invariants hold")
    }

    pub fn r_max(&self) -> f64 {
        self.r.iter().fold(0.0_f64, |m, &x| m.max(x))
    }

    /// Upper bound on any value function of this MDP.
    pub fn v_max(&self) -> f64 {
        self.r_max() / (1.0 - self.gamma)
    }

    fn backup(&self, v: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_states);
        for s in 0..self.n_states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..self.n_actions {
                let mut q = self.r[[s, a]];
                for s2 in 0..self.n_states {
                    q += self.gamma * self.p[[s, a, s2]] * v[s2];
                }
                if q > best {
                    best = q;
                }
            }
            out[s] = best;
        }
        out
    }
}

fn random_simplex_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    // Normalized Exp(1) draws, i.e. uniform on the simplex.
    let mut row: Vec<f64> = (0..n)
        .map(|_| -f64::ln(1.0 - rng.random::<f64>()))
        .collect();
    let sum: f64 = row.iter().sum();
    for x in &mut row {
        *x /= sum;
    }
    row
}

/// Total variation distance between two discrete distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

/// Value iteration to a sup-norm Bellman residual of at most `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Array1<f64> {
    assert!(tol > 0.0);
    let mut v = Array1::zeros(mdp.n_states);
    loop {
        let next = mdp.backup(&v);
        let residual = next
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        v = next;
        // residual of the iterate equals ||TV - V|| for the previous V;
        // one extra backup after convergence keeps the final residual
        // itself below tol
        if residual * mdp.gamma / (1.0 - mdp.gamma) <= tol {
            return v;
        }
    }
}

/// Greedy policy for a value table, ties broken by lowest action index.
pub fn greedy_policy(mdp: &TabularMdp, v: &Array1<f64>) -> TabularPolicy {
    exact_lookahead_policy(mdp, v, 1).expect("horizon 1 is valid")
}

/// Certified model perturbation: mixes every transition row with a
/// random simplex row, `p_hat = (1-eps)p + eps*u`, which guarantees
/// `TV(p, p_hat) <= eps` per (s,a).
pub fn perturb_model<R: Rng>(
    mdp: &TabularMdp,
    eps_m: f64,
    rng: &mut R,
) -> Result<TabularMdp, TabularError> {
    if !(0.0..=1.0).contains(&eps_m) {
        return Err(TabularError::BadMixing(eps_m));
    }
    let mut p = mdp.p.clone();
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let u = random_simplex_row(mdp.n_states, rng);
            let mut sum = 0.0;
            for s2 in 0..mdp.n_states {
                let v = (1.0 - eps_m) * mdp.p[[s, a, s2]] + eps_m * u[s2];
                p[[s, a, s2]] = v;
                sum += v;
            }
            for s2 in 0..mdp.n_states {
                p[[s, a, s2]] /= sum;
            }
        }
    }
    TabularMdp::new(p, mdp.r.clone(), mdp.gamma)
}

/// Value perturbation with per-state uniform noise in `[-eps_v, eps_v]`,
/// clamped to `[0, v_max]`. Clamping can only shrink the error, so the
/// sup-norm guarantee `||v_hat - v|| <= eps_v` is preserved whenever the
/// input already lies in `[0, v_max]`.
pub fn perturb_values<R: Rng>(
    v: &Array1<f64>,
    eps_v: f64,
    v_max: f64,
    rng: &mut R,
) -> Array1<f64> {
    assert!(eps_v >= 0.0);
    v.mapv(|x| {
        let noise = if eps_v > 0.0 {
            rng.random_range(-eps_v..=eps_v)
        } else {
            0.0
        };
        (x + noise).clamp(0.0, v_max)
    })
}

/// H-step lookahead policy by exact backward induction in the given
/// (possibly perturbed) model, with terminal values `v_hat`:
/// for each state, the first action of the best H-step plan under
/// `sum_t gamma^t r + gamma^H v_hat(s_H)`. Ties break toward the lowest
/// action index.
pub fn exact_lookahead_policy(
    mdp_hat: &TabularMdp,
    v_hat: &Array1<f64>,
    horizon: usize,
) -> Result<TabularPolicy, TabularError> {
    if horizon == 0 {
        return Err(TabularError::ZeroHorizon);
    }
    // value-to-go with k steps remaining before the terminal value
    let mut togo = v_hat.clone();
    for _ in 0..horizon - 1 {
        togo = mdp_hat.backup(&togo);
    }
    let mut actions = Vec::with_capacity(mdp_hat.n_states);
    for s in 0..mdp_hat.n_states {
        let mut best = f64::NEG_INFINITY;
        let mut best_a = 0;
        for a in 0..mdp_hat.n_actions {
            let mut q = mdp_hat.r[[s, a]];
            for s2 in 0..mdp_hat.n_states {
                q += mdp_hat.gamma * mdp_hat.p[[s, a, s2]] * togo[s2];
            }
            if q > best {
                best = q;
                best_a = a;
            }
        }
        actions.push(best_a);
    }
    Ok(TabularPolicy(actions))
}

/// Exact policy evaluation by solving `(I - gamma P_pi) v = r_pi`.
pub fn policy_value(mdp: &TabularMdp, pi: &TabularPolicy) -> Array1<f64> {
    let n = mdp.n_states;
    let mut m = nalgebra::DMatrix::<f64>::identity(n, n);
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    for s in 0..n {
        let a = pi.0[s];
        debug_assert!(a < mdp.n_actions);
        b[s] = mdp.r[[s, a]];
        for s2 in 0..n {
            m[(s, s2)] -= mdp.gamma * mdp.p[[s, a, s2]];
        }
    }
    let sol = m.lu().solve(&b).expect("I - gamma*P is nonsingular for gamma < 1");
    Array1::from_iter(sol.iter().copied())
}

/// Performance bound for the H-step lookahead policy under model error
/// `eps_m` (total variation) and value error `eps_v` (sup norm):
///
/// `(2 / (1 - gamma^H)) * (C + gamma^H * eps_v)` with
/// `C = r_max * sum_{t=0}^{H-1} gamma^t * t * eps_m
///      + gamma^H * H * eps_m * v_max`.
///
/// With `H = 1` and `eps_m = 0` this reduces to the 1-step greedy bound
/// `2 * gamma * eps_v / (1 - gamma)`.
pub fn theorem1_bound(b: &BoundInputs) -> Result<f64, TabularError> {
    if b.horizon == 0 {
        return Err(TabularError::ZeroHorizon);
    }
    if !(b.gamma > 0.0 && b.gamma < 1.0) {
        return Err(TabularError::InvalidGamma(b.gamma));
    }
    let gh = b.gamma.powi(b.horizon as i32);
    let mut c = 0.0;
    for t in 0..b.horizon {
        c += b.r_max * b.gamma.powi(t as i32) * (t as f64) * b.eps_m;
    }
    c += gh * (b.horizon as f64) * b.eps_m * b.v_max;
    Ok(2.0 / (1.0 - gh) * (c + gh * b.eps_v))
}

/// One perturbation trial of the bound check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundTrial {
    pub trial: usize,
    pub gap: f64,
    pub bound: f64,
    pub slack: f64,
}

/// Outcome of [`verify_bound`]: per-trial gaps against the bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub trials: Vec<BoundTrial>,
    pub holds: bool,
}

/// Tolerance absorbing value-iteration and linear-solve round-off in the
/// gap/bound comparison.
const GAP_TOL: f64 = 1e-8;

/// Empirical check of the lookahead bound: for each trial, perturb the
/// model by `eps_m` and the optimal values by `eps_v`, plan exactly with
/// horizon `b.horizon` in the perturbed model, and compare the exact
/// performance gap `max_s (v*(s) - v_pi(s))` against the bound.
pub fn verify_bound<R: Rng>(
    mdp: &TabularMdp,
    b: &BoundInputs,
    trials: usize,
    rng: &mut R,
) -> Result<BoundReport, TabularError> {
    assert!(trials >= 1);
    let bound = theorem1_bound(b)?;
    let v_star = value_iteration(mdp, 1e-10);
    let mut rows = Vec::with_capacity(trials);
    let mut holds = true;
    for trial in 0..trials {
        let mdp_hat = perturb_model(mdp, b.eps_m, rng)?;
        let v_hat = perturb_values(&v_star, b.eps_v, b.v_max, rng);
        let pi = exact_lookahead_policy(&mdp_hat, &v_hat, b.horizon)?;
        let v_pi = policy_value(mdp, &pi);
        let gap = v_star
            .iter()
            .zip(v_pi.iter())
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max);
        holds &= gap <= bound + GAP_TOL;
        rows.push(BoundTrial {
            trial,
            gap,
            bound,
            slack: bound - gap,
        });
    }
    Ok(BoundReport { trials: rows, holds })
}

/// Result of the chained trust-region total-variation check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustRegionReport {
    pub kl_step: f64,
    pub steps: usize,
    pub per_step_tv: f64,
    pub per_step_bound: f64,
    pub chain_tv: f64,
    pub chain_bound: f64,
    pub holds: bool,
}

/// Builds a chain of 1-D unit-variance Gaussians where each consecutive
/// pair has KL divergence exactly `kl_step` (mean shift
/// `sqrt(2*kl_step)`), integrates the total variation between the chain
/// endpoints numerically, and compares against the chained bound
/// `steps * sqrt(kl_step / 2)` (and `sqrt(kl_step / 2)` per step).
pub fn trust_region_tv_check(kl_step: f64, steps: usize) -> TrustRegionReport {
    assert!(kl_step > 0.0);
    let delta = (2.0 * kl_step).sqrt();
    let per_step_bound = (kl_step / 2.0).sqrt();
    let per_step_tv = gaussian_tv_numeric(0.0, delta, 1.0);
    let chain_tv = if steps == 0 {
        0.0
    } else {
        gaussian_tv_numeric(0.0, delta * steps as f64, 1.0)
    };
    let chain_bound = steps as f64 * per_step_bound;
    TrustRegionReport {
        kl_step,
        steps,
        per_step_tv,
        per_step_bound,
        chain_tv,
        chain_bound,
        holds: per_step_tv <= per_step_bound + 1e-9 && chain_tv <= chain_bound + 1e-9,
    }
}

/// Numerical total variation `0.5 * integral |p - q|` between two
/// Gaussians with common standard deviation, by composite Simpson on a
/// grid fine enough for error well below 1e-6.
pub fn gaussian_tv_numeric(mu0: f64, mu1: f64, sigma: f64) -> f64 {
    let lo = mu0.min(mu1) - 10.0 * sigma;
    let hi = mu0.max(mu1) + 10.0 * sigma;
    let n = 200_000; // even
    let h = (hi - lo) / n as f64;
    let pdf = |x: f64, mu: f64| {
        let z = (x - mu) / sigma;
        (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let f = |x: f64| (pdf(x, mu0) - pdf(x, mu1)).abs();
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let x = lo + i as f64 * h;
        acc += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 * acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state_chain() -> TabularMdp {
        // state 0 -> state 1 with reward 0; state 1 absorbing, reward 1
        let mut p = Array3::zeros((2, 1, 2));
        p[[0, 0, 1]] = 1.0;
        p[[1, 0, 1]] = 1.0;
        let r = array![[0.0], [1.0]];
        TabularMdp::new(p, r, 0.9).unwrap()
    }

    #[test]
    fn value_iteration_geometric_series() {
        let mut p = Array3::zeros((1, 1, 1));
        p[[0, 0, 0]] = 1.0;
        let mdp = TabularMdp::new(p, array![[1.0]], 0.5).unwrap();
        let v = value_iteration(&mdp, 1e-10);
        assert!((v[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn value_iteration_two_state_chain_hand_dp() {
        let mdp = two_state_chain();
        let v = value_iteration(&mdp, 1e-10);
        assert!((v[1] - 10.0).abs() < 1e-7);
        assert!((v[0] - 9.0).abs() < 1e-7);
    }

    #[test]
    fn value_iteration_zero_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mdp = TabularMdp::random(4, 2, 1.0, 0.95, &mut rng);
        mdp.r.fill(0.0);
        let v = value_iteration(&mdp, 1e-10);
        assert!(v.iter().all(|&x| x.abs() < 1e-9));
    }

    #[test]
    fn policy_value_agrees_with_value_iteration_and_hand_solve() {
        let mdp = two_state_chain();
        let v_star = value_iteration(&mdp, 1e-12);
        let pi = greedy_policy(&mdp, &v_star);
        let v_pi = policy_value(&mdp, &pi);
        for s in 0..2 {
            assert!((v_pi[s] - v_star[s]).abs() < 1e-9);
        }
        // hand solve: v1 = 1 + 0.9 v1 -> 10; v0 = 0 + 0.9 v1 -> 9
        assert!((v_pi[1] - 10.0).abs() < 1e-9);
        assert!((v_pi[0] - 9.0).abs() < 1e-9);
    }

    #[test]
    fn perturb_model_tv_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMdp::random(5, 3, 1.0, 0.9, &mut rng);
        let hat = perturb_model(&mdp, 0.0, &mut rng).unwrap();
        assert!(mdp
            .p
            .iter()
            .zip(hat.p.iter())
            .all(|(a, b)| (a - b).abs() < 1e-12));

        for eps in [0.1, 0.5, 1.0] {
            let hat = perturb_model(&mdp, eps, &mut rng).unwrap();
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    let p_row: Vec<f64> =
                        (0..mdp.n_states).map(|s2| mdp.p[[s, a, s2]]).collect();
                    let q_row: Vec<f64> =
                        (0..mdp.n_states).map(|s2| hat.p[[s, a, s2]]).collect();
                    // direct half-L1 oracle
                    assert!(tv_distance(&p_row, &q_row) <= eps + 1e-12);
                }
            }
        }
    }

    #[test]
    fn perturb_values_sup_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = array![0.5, 3.0, 7.5];
        let same = perturb_values(&v, 0.0, 10.0, &mut rng);
        assert_eq!(same, v);
        for _ in 0..50 {
            let hat = perturb_values(&v, 0.3, 10.0, &mut rng);
            let sup = v
                .iter()
                .zip(hat.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(sup <= 0.3 + 1e-12);
            assert!(hat.iter().all(|&x| (0.0..=10.0).contains(&x)));
        }
    }

    #[test]
    fn lookahead_h1_is_greedy_and_myopic_with_zero_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = TabularMdp::random(5, 3, 1.0, 0.9, &mut rng);
        let v_star = value_iteration(&mdp, 1e-10);
        let pi = exact_lookahead_policy(&mdp, &v_star, 1).unwrap();
        assert_eq!(pi, greedy_policy(&mdp, &v_star));

        // zero terminal values at H=1: pure reward argmax
        let zeros = Array1::zeros(mdp.n_states);
        let pi0 = exact_lookahead_policy(&mdp, &zeros, 1).unwrap();
        for s in 0..mdp.n_states {
            let best = (0..mdp.n_actions)
                .max_by(|&a, &b| mdp.r[[s, a]].partial_cmp(&mdp.r[[s, b]]).unwrap())
                .unwrap();
            assert!((mdp.r[[s, pi0.0[s]]] - mdp.r[[s, best]]).abs() < 1e-15);
        }
        assert!(exact_lookahead_policy(&mdp, &zeros, 0).is_err());
    }

    /// Brute-force two-step lookahead: enumerate (a0, a1) pairs and take
    /// exact expectations over both transitions.
    fn brute_force_h2(mdp: &TabularMdp, v_hat: &Array1<f64>) -> Vec<usize> {
        let mut pi = Vec::new();
        for s0 in 0..mdp.n_states {
            let mut best = f64::NEG_INFINITY;
            let mut best_a0 = 0;
            for a0 in 0..mdp.n_actions {
                // inner action may depend on the reached state
                let mut val = mdp.r[[s0, a0]];
                for s1 in 0..mdp.n_states {
                    let mut inner_best = f64::NEG_INFINITY;
                    for a1 in 0..mdp.n_actions {
                        let mut q = mdp.r[[s1, a1]];
                        for s2 in 0..mdp.n_states {
                            q += mdp.gamma * mdp.p[[s1, a1, s2]] * v_hat[s2];
                        }
                        inner_best = inner_best.max(q);
                    }
                    val += mdp.gamma * mdp.p[[s0, a0, s1]] * inner_best;
                }
                if val > best {
                    best = val;
                    best_a0 = a0;
                }
            }
            pi.push(best_a0);
        }
        pi
    }

    #[test]
    fn lookahead_h2_matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let mdp = TabularMdp::random(3, 2, 1.0, 0.9, &mut rng);
            let v_hat = Array1::from_iter((0..3).map(|_| rng.random_range(0.0..5.0)));
            let pi = exact_lookahead_policy(&mdp, &v_hat, 2).unwrap();
            assert_eq!(pi.0, brute_force_h2(&mdp, &v_hat));
        }
    }

    #[test]
    fn lookahead_invariant_to_constant_value_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let mdp = TabularMdp::random(5, 3, 1.0, 0.9, &mut rng);
            let v = Array1::from_iter((0..5).map(|_| rng.random_range(0.0..5.0)));
            let shifted = v.mapv(|x| x + 3.7);
            for h in 1..=3 {
                let a = exact_lookahead_policy(&mdp, &v, h).unwrap();
                let b = exact_lookahead_policy(&mdp, &shifted, h).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn lookahead_with_true_model_and_values_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let mdp = TabularMdp::random(6, 3, 1.0, 0.9, &mut rng);
            let v_star = value_iteration(&mdp, 1e-11);
            for h in [1, 2, 4] {
                let pi = exact_lookahead_policy(&mdp, &v_star, h).unwrap();
                let v_pi = policy_value(&mdp, &pi);
                let gap = v_star
                    .iter()
                    .zip(v_pi.iter())
                    .map(|(a, b)| a - b)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(gap.abs() < 1e-7, "gap {gap} at h {h}");
            }
        }
    }

    #[test]
    fn bound_closed_form_examples() {
        // H=1, eps_m=0 reduces to the greedy bound 2*gamma*eps_v/(1-gamma)
        let b = BoundInputs {
            eps_m: 0.0,
            eps_v: 1.0,
            horizon: 1,
            gamma: 0.9,
            r_max: 1.0,
            v_max: 10.0,
        };
        assert!((theorem1_bound(&b).unwrap() - 18.0).abs() < 1e-12);

        // term-by-term hand evaluation of the constant
        let b = BoundInputs {
            eps_m: 0.1,
            eps_v: 0.0,
            horizon: 2,
            gamma: 0.9,
            r_max: 1.0,
            v_max: 10.0,
        };
        let c: f64 = 1.0 * (0.0 + 0.9 * 1.0 * 0.1) + 0.81 * 2.0 * 0.1 * 10.0;
        assert!((c - 1.71).abs() < 1e-12);
        let expect = 2.0 / (1.0 - 0.81) * c;
        assert!((theorem1_bound(&b).unwrap() - expect).abs() < 1e-12);

        let b = BoundInputs {
            eps_m: 0.0,
            eps_v: 0.0,
            horizon: 3,
            gamma: 0.9,
            r_max: 1.0,
            v_max: 10.0,
        };
        assert_eq!(theorem1_bound(&b).unwrap(), 0.0);

        let mut bad = b;
        bad.horizon = 0;
        assert!(theorem1_bound(&bad).is_err());
    }

    #[test]
    fn verify_bound_zero_error_and_perturbed() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mdp = TabularMdp::random(6, 3, 1.0, 0.9, &mut rng);
        let b = BoundInputs {
            eps_m: 0.0,
            eps_v: 0.0,
            horizon: 2,
            gamma: 0.9,
            r_max: 1.0,
            v_max: 10.0,
        };
        let report = verify_bound(&mdp, &b, 3, &mut rng).unwrap();
        assert!(report.holds);
        assert!(report.trials.iter().all(|t| t.gap.abs() < 1e-7));

        let b = BoundInputs {
            eps_m: 0.1,
            eps_v: 0.5,
            horizon: 2,
            gamma: 0.9,
            r_max: 1.0,
            v_max: 10.0,
        };
        let report = verify_bound(&mdp, &b, 5, &mut rng).unwrap();
        assert!(report.holds);

        // greedy special case: H=1, eps_m=0
        let b = BoundInputs {
            eps_m: 0.0,
            eps_v: 1.0,
            horizon: 1,
            gamma: 0.9,
            r_max: 1.0,
            v_max: 10.0,
        };
        let report = verify_bound(&mdp, &b, 5, &mut rng).unwrap();
        assert!(report.holds);
        assert!(report.trials.iter().all(|t| (t.bound - 18.0).abs() < 1e-12));
    }

    /// Closed-form oracle for the TV between equal-variance Gaussians:
    /// 2*Phi(d / (2 sigma)) - 1, with Phi evaluated through an erf
    /// approximation good to ~1.5e-7.
    fn gaussian_tv_closed_form(d: f64, sigma: f64) -> f64 {
        let x = d / (2.0 * sigma) / std::f64::consts::SQRT_2;
        // Abramowitz & Stegun 7.1.26
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let poly = t
            * (0.254829592
                + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        let erf = 1.0 - poly * (-x * x).exp();
        erf
    }

    #[test]
    fn numeric_tv_matches_closed_form() {
        for d in [0.1, 0.5, 1.0, 2.0] {
            let numeric = gaussian_tv_numeric(0.0, d, 1.0);
            let closed = gaussian_tv_closed_form(d, 1.0);
            assert!(
                (numeric - closed).abs() < 1e-5,
                "d={d}: numeric {numeric} vs closed {closed}"
            );
        }
    }

    #[test]
    fn trust_region_chain_examples() {
        // KL = 0.005 per step: TV ~ 0.0399 <= 0.05
        let report = trust_region_tv_check(0.005, 1);
        assert!(report.holds);
        assert!((report.per_step_tv - 0.0399).abs() < 5e-4);
        assert!((report.per_step_bound - 0.05).abs() < 1e-12);

        let report = trust_region_tv_check(0.02, 0);
        assert_eq!(report.chain_tv, 0.0);
        assert!(report.holds);

        let report = trust_region_tv_check(0.02, 5);
        assert!(report.chain_bound - 0.5 < 1e-12);
        assert!(report.chain_tv <= 0.5);
        assert!(report.holds);
    }
}
