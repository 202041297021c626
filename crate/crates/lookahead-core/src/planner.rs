//! Trajectory optimization for H-step lookahead control.
//!
//! The optimizer maintains a per-timestep diagonal Gaussian over action
//! sequences and refines it by iterative importance sampling: sample a
//! population from a mixture of the parameterized actor (unrolled
//! through a nominal ensemble member) and the current Gaussian, score
//! each sequence by model rollouts capped with a terminal value, then
//! refit the Gaussian to the exponentially weighted population. Keeping
//! part of the population on the actor is what ties the planner's
//! output distribution to the actor it trains against.
//!
//! Three scoring modes share the machinery: plain reward (online),
//! ensemble-dispersion-penalized reward (offline pessimism), and the
//! cost-constrained variant that switches to cost minimization when too
//! few sampled trajectories are within budget.

use crate::ensemble::DynamicsEnsemble;
use crate::mdp::ActionVec;
use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("population must hold at least 2 sequences, got {0}")]
    PopulationTooSmall(usize),
    #[error("non-finite score at sequence {0}")]
    NonFiniteScore(usize),
    #[error("planner horizon must be at least 1")]
    ZeroHorizon,
}

/// How ensemble disagreement penalizes a trajectory's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PessimismKind {
    /// Across-member variance of member-mean returns.
    Variance,
    /// Across-member standard deviation of member-mean returns.
    StdDev,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub horizon: usize,
    /// Population size N.
    pub population: usize,
    /// Particles per (sequence, member) rollout.
    pub particles: usize,
    pub iterations: usize,
    /// Refit smoothing: new = alpha*refit + (1-alpha)*old.
    pub alpha: f64,
    /// Probability a sampled action comes from the actor branch.
    pub beta: f64,
    /// Exponential weighting temperature.
    pub kappa: f64,
    /// Standard deviation of the Gaussian branch at the start of every
    /// plan call (the exploration knob).
    pub sigma_prior: f64,
    /// Weight on the ensemble-dispersion penalty; zero online.
    pub lambda_pess: f64,
    pub gamma: f64,
    pub pessimism: PessimismKind,
    pub sigma_floor: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            population: 100,
            particles: 4,
            iterations: 5,
            alpha: 0.1,
            beta: 0.05,
            kappa: 1.0,
            sigma_prior: 0.5,
            lambda_pess: 0.0,
            gamma: 0.99,
            pessimism: PessimismKind::Variance,
            sigma_floor: 1e-3,
        }
    }
}

/// Cost-constraint settings for the safe planner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafeConfig {
    /// Discounted-cost budget per plan.
    pub d0: f64,
    /// Minimum number of within-budget trajectories required before the
    /// update is allowed to optimize reward.
    pub min_safe: usize,
}

/// Per-dimension action box used to clip sampled actions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionBounds {
    pub lo: Array1<f64>,
    pub hi: Array1<f64>,
}

impl ActionBounds {
    pub fn new(lo: Array1<f64>, hi: Array1<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(hi.iter()).all(|(a, b)| a < b));
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn clip(&self, c: usize, v: f64) -> f64 {
        v.clamp(self.lo[c], self.hi[c])
    }
}

/// Per-timestep diagonal Gaussian over an H-step action sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDistribution {
    /// Shape [H, action_dim].
    pub mean: Array2<f64>,
    /// Shape [H, action_dim], elementwise >= the configured floor.
    pub std: Array2<f64>,
}

impl SequenceDistribution {
    pub fn fresh(horizon: usize, action_dim: usize, sigma: f64, floor: f64) -> Self {
        assert!(horizon >= 1);
        Self {
            mean: Array2::zeros((horizon, action_dim)),
            std: Array2::from_elem((horizon, action_dim), sigma.max(floor)),
        }
    }

    pub fn horizon(&self) -> usize {
        self.mean.nrows()
    }

    /// One-step receding-horizon shift: drop the first timestep, pad the
    /// last with zero mean and the exploration std.
    pub fn shifted(&self, sigma: f64, floor: f64) -> Self {
        let (h, da) = self.mean.dim();
        let mut mean = Array2::zeros((h, da));
        let mut std = Array2::from_elem((h, da), sigma.max(floor));
        for t in 0..h - 1 {
            for c in 0..da {
                mean[[t, c]] = self.mean[[t + 1, c]];
                std[[t, c]] = self.std[[t + 1, c]];
            }
        }
        Self { mean, std }
    }

    /// KL divergence to another sequence distribution of the same shape,
    /// treating timesteps and dimensions as independent Gaussians.
    pub fn kl_to(&self, other: &Self) -> f64 {
        let mut kl = 0.0;
        let sp_all = self.std.as_slice().unwrap();
        let sq_all = other.std.as_slice().unwrap();
        for (i, (&mu_p, &mu_q)) in self.mean.iter().zip(other.mean.iter()).enumerate() {
            let sp = sp_all[i];
            let sq = sq_all[i];
            kl +=
                (sq / sp).ln() + (sp * sp + (mu_p - mu_q) * (mu_p - mu_q)) / (2.0 * sq * sq) - 0.5;
        }
        kl
    }
}

/// Stochastic policy over state batches, e.g. the actor's tanh-Gaussian.
pub type PolicyFn<'a> = dyn FnMut(&Array2<f64>, &mut ChaCha8Rng) -> Array2<f64> + 'a;
/// Terminal state-action value over batches.
pub type ValueFn<'a> = dyn Fn(&Array2<f64>, &Array2<f64>) -> Array1<f64> + 'a;
/// Instantaneous constraint cost over batches of predicted states.
pub type CostFn<'a> = dyn Fn(&Array2<f64>, &Array2<f64>) -> Array1<f64> + 'a;

/// Population of candidate sequences, shape [N, H, action_dim].
pub type Population = Array3<f64>;

/// Draws the mixture-prior population: per trajectory and timestep,
/// with probability beta the (stochastic) actor's action at the state
/// reached by unrolling the nominal ensemble member, otherwise a draw
/// from the current Gaussian. Sampled actions are clipped to bounds.
///
/// With `beta = 0` neither the policy nor the ensemble is touched.
pub fn sample_prior(
    state: &Array1<f64>,
    policy: Option<&mut PolicyFn>,
    ensemble: Option<&DynamicsEnsemble>,
    dist: &SequenceDistribution,
    cfg: &PlannerConfig,
    bounds: &ActionBounds,
    rng: &mut ChaCha8Rng,
) -> Population {
    let n = cfg.population;
    let h = dist.horizon();
    let da = bounds.dim();
    let mut seqs = Array3::zeros((n, h, da));

    if cfg.beta <= 0.0 {
        for j in 0..n {
            for t in 0..h {
                for c in 0..da {
                    let z: f64 = rng.sample(StandardNormal);
                    seqs[[j, t, c]] = bounds.clip(c, dist.mean[[t, c]] + dist.std[[t, c]] * z);
                }
            }
        }
        return seqs;
    }

    let policy = policy.expect("beta > 0 requires an actor");
    let ensemble = ensemble.expect("beta > 0 requires a dynamics model");
    // nominal unroll shared by every trajectory's actor branch
    let mut nominal = Array2::zeros((n, state.len()));
    for j in 0..n {
        for c in 0..state.len() {
            nominal[[j, c]] = state[c];
        }
    }
    for t in 0..h {
        let flags: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < cfg.beta).collect();
        // policy consumes rng for every row regardless of the flags so
        // the draw sequence does not depend on flag outcomes
        let actor_actions = policy(&nominal, rng);
        for j in 0..n {
            for c in 0..da {
                let v = if flags[j] {
                    actor_actions[[j, c]]
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    dist.mean[[t, c]] + dist.std[[t, c]] * z
                };
                seqs[[j, t, c]] = bounds.clip(c, v);
            }
        }
        if t + 1 < h {
            let actions = seqs.index_axis(Axis(1), t).to_owned();
            // member 0 is the designated nominal member; mean prediction
            let (next, _std, _r) = ensemble
                .predict_batch(0, &nominal, &actions)
                .expect("member 0 exists");
            nominal = next;
        }
    }
    seqs
}

/// Rolls every sequence out `particles` times in each ensemble member,
/// accumulating discounted model rewards for all but the final planned
/// step and the terminal value at the final step:
///
/// `R = sum_{t<H-1} gamma^t r_hat(s_t,a_t) + gamma^{H-1} Q(s_{H-1},a_{H-1})`
///
/// Returns the per-member particle-averaged return matrix [N, K] and,
/// when a cost function is supplied, the per-sequence worst-case
/// discounted cost (max over members and particles).
pub fn score_sequences(
    state: &Array1<f64>,
    seqs: &Population,
    ensemble: &DynamicsEnsemble,
    value: &ValueFn,
    cfg: &PlannerConfig,
    cost: Option<&CostFn>,
    rng: &mut ChaCha8Rng,
) -> (Array2<f64>, Option<Array1<f64>>) {
    let (n, h, da) = seqs.dim();
    let k = ensemble.members();
    let p = cfg.particles.max(1);
    let rows = n * p;
    let ds = state.len();
    let mut returns = Array2::zeros((n, k));
    let mut costs = cost.map(|_| Array1::from_elem(n, f64::NEG_INFINITY));

    for member in 0..k {
        let mut states = Array2::zeros((rows, ds));
        for row in 0..rows {
            for c in 0..ds {
                states[[row, c]] = state[c];
            }
        }
        let mut acc = Array1::<f64>::zeros(rows);
        let mut cost_acc = Array1::<f64>::zeros(rows);
        let mut scale = 1.0;
        for t in 0..h {
            let mut actions = Array2::zeros((rows, da));
            for row in 0..rows {
                let j = row / p;
                for c in 0..da {
                    actions[[row, c]] = seqs[[j, t, c]];
                }
            }
            if let Some(cost_fn) = cost {
                let c_t = cost_fn(&states, &actions);
                for row in 0..rows {
                    cost_acc[row] += scale * c_t[row];
                }
            }
            if t + 1 < h {
                let (next, r) = ensemble
                    .sample_next_batch(member, &states, &actions, rng)
                    .expect("member index in range");
                for row in 0..rows {
                    acc[row] += scale * r[row];
                }
                states = next;
            } else {
                let v = value(&states, &actions);
                for row in 0..rows {
                    acc[row] += scale * v[row];
                }
            }
            scale *= cfg.gamma;
        }
        for j in 0..n {
            let mut mean = 0.0;
            for part in 0..p {
                mean += acc[j * p + part];
            }
            returns[[j, member]] = mean / p as f64;
            if let Some(costs) = costs.as_mut() {
                for part in 0..p {
                    costs[j] = costs[j].max(cost_acc[j * p + part]);
                }
            }
        }
    }
    (returns, costs)
}

/// Collapses the per-member return matrix to one score per sequence:
/// mean across members minus `lambda_pess` times the across-member
/// dispersion of member-mean returns. With identical members or
/// `lambda_pess = 0` this is the plain mean.
pub fn aggregate(returns: &Array2<f64>, lambda_pess: f64, kind: PessimismKind) -> Array1<f64> {
    let (n, k) = returns.dim();
    let kf = k as f64;
    Array1::from_shape_fn(n, |j| {
        let row = returns.index_axis(Axis(0), j);
        let mean = row.sum() / kf;
        let var = row.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / kf;
        let disp = match kind {
            PessimismKind::Variance => var,
            PessimismKind::StdDev => var.sqrt(),
        };
        mean - lambda_pess * disp
    })
}

/// Weighted refit of the sequence distribution restricted to `subset`,
/// with per-sequence weight exponents (already scaled by the
/// temperature). The max exponent is subtracted before exponentiation,
/// which leaves the normalized weights unchanged.
fn weighted_refit(
    seqs: &Population,
    exponents: &[f64],
    subset: &[usize],
    dist: &SequenceDistribution,
    cfg: &PlannerConfig,
) -> Result<SequenceDistribution, PlannerError> {
    let (_, h, da) = seqs.dim();
    if subset.len() < 2 {
        return Err(PlannerError::PopulationTooSmall(subset.len()));
    }
    for &j in subset {
        if !exponents[j].is_finite() {
            return Err(PlannerError::NonFiniteScore(j));
        }
    }
    let shift = subset
        .iter()
        .map(|&j| exponents[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = subset
        .iter()
        .map(|&j| (exponents[j] - shift).exp())
        .collect();
    let total: f64 = weights.iter().sum();

    let mut mean_new = Array2::zeros((h, da));
    for (w, &j) in weights.iter().zip(subset.iter()) {
        for t in 0..h {
            for c in 0..da {
                mean_new[[t, c]] += w * seqs[[j, t, c]];
            }
        }
    }
    mean_new /= total;

    let mut var_new = Array2::zeros((h, da));
    for (w, &j) in weights.iter().zip(subset.iter()) {
        for t in 0..h {
            for c in 0..da {
                let d = seqs[[j, t, c]] - mean_new[[t, c]];
                var_new[[t, c]] += w * d * d;
            }
        }
    }
    var_new /= total;

    let alpha = cfg.alpha;
    let mut mean = dist.mean.clone();
    let mut std = dist.std.clone();
    for t in 0..h {
        for c in 0..da {
            mean[[t, c]] = alpha * mean_new[[t, c]] + (1.0 - alpha) * mean[[t, c]];
            let old_var = dist.std[[t, c]] * dist.std[[t, c]];
            let v = alpha * var_new[[t, c]] + (1.0 - alpha) * old_var;
            std[[t, c]] = v.sqrt().max(cfg.sigma_floor);
        }
    }
    Ok(SequenceDistribution { mean, std })
}

/// Importance-sampling update: exponential weights `exp(kappa*score)`
/// over the whole population, weighted mean/variance refit, then
/// `alpha` smoothing toward the previous distribution.
pub fn is_update(
    seqs: &Population,
    scores: &Array1<f64>,
    dist: &SequenceDistribution,
    cfg: &PlannerConfig,
) -> Result<SequenceDistribution, PlannerError> {
    let n = seqs.dim().0;
    if n < 2 {
        return Err(PlannerError::PopulationTooSmall(n));
    }
    let exponents: Vec<f64> = scores.iter().map(|s| cfg.kappa * s).collect();
    let subset: Vec<usize> = (0..n).collect();
    weighted_refit(seqs, &exponents, &subset, dist, cfg)
}

/// Outcome of one plan call.
#[derive(Debug, Clone)]
pub struct PlanResult {
    /// First action of the final mean sequence, clipped to bounds.
    pub action: ActionVec,
    /// Final distribution shifted one step, ready for the next call.
    pub next_dist: SequenceDistribution,
    /// KL between consecutive sampling distributions per iteration.
    pub per_iter_kl: Vec<f64>,
    /// Chained total-variation envelope `M * sqrt(max_kl / 2)`.
    pub tv_envelope: f64,
}

fn first_action(dist: &SequenceDistribution, bounds: &ActionBounds) -> ActionVec {
    Array1::from_shape_fn(bounds.dim(), |c| bounds.clip(c, dist.mean[[0, c]]))
}

fn plan_result(
    dist: SequenceDistribution,
    bounds: &ActionBounds,
    cfg: &PlannerConfig,
    kls: Vec<f64>,
) -> PlanResult {
    let action = first_action(&dist, bounds);
    let max_kl = kls.iter().cloned().fold(0.0_f64, f64::max);
    PlanResult {
        action,
        next_dist: dist.shifted(cfg.sigma_prior, cfg.sigma_floor),
        tv_envelope: kls.len() as f64 * (max_kl / 2.0).sqrt(),
        per_iter_kl: kls,
    }
}

/// Warm start for a plan call: the previous (already shifted) mean with
/// the sampling std reset to the exploration prior.
fn warm_start(prev: &SequenceDistribution, cfg: &PlannerConfig) -> SequenceDistribution {
    SequenceDistribution {
        mean: prev.mean.clone(),
        std: Array2::from_elem(prev.mean.dim(), cfg.sigma_prior.max(cfg.sigma_floor)),
    }
}

/// Full actor-regularized plan: `iterations` rounds of
/// sample -> score -> aggregate -> update starting from the shifted
/// previous solution.
#[allow(clippy::too_many_arguments)]
pub fn arc_plan(
    state: &Array1<f64>,
    mut policy: Option<&mut PolicyFn>,
    ensemble: &DynamicsEnsemble,
    value: &ValueFn,
    cfg: &PlannerConfig,
    bounds: &ActionBounds,
    prev: &SequenceDistribution,
    rng: &mut ChaCha8Rng,
) -> Result<PlanResult, PlannerError> {
    if cfg.horizon == 0 {
        return Err(PlannerError::ZeroHorizon);
    }
    let mut dist = warm_start(prev, cfg);
    let mut kls = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let seqs = sample_prior(
            state,
            policy.as_deref_mut(),
            Some(ensemble),
            &dist,
            cfg,
            bounds,
            rng,
        );
        let (returns, _) = score_sequences(state, &seqs, ensemble, value, cfg, None, rng);
        let scores = aggregate(&returns, cfg.lambda_pess, cfg.pessimism);
        let next = is_update(&seqs, &scores, &dist, cfg)?;
        kls.push(next.kl_to(&dist));
        dist = next;
    }
    Ok(plan_result(dist, bounds, cfg, kls))
}

/// Cost-constrained plan: trajectories are scored by the member-mean
/// return and by their worst-case discounted cost. When fewer than
/// `safe.min_safe` trajectories are within the budget `d0`, the update
/// softmins the cost over the whole population; otherwise it refits to
/// reward weights restricted to the within-budget subset.
#[allow(clippy::too_many_arguments)]
pub fn safe_arc_plan(
    state: &Array1<f64>,
    mut policy: Option<&mut PolicyFn>,
    ensemble: &DynamicsEnsemble,
    value: &ValueFn,
    cost: &CostFn,
    cfg: &PlannerConfig,
    safe: &SafeConfig,
    bounds: &ActionBounds,
    prev: &SequenceDistribution,
    rng: &mut ChaCha8Rng,
) -> Result<PlanResult, PlannerError> {
    if cfg.horizon == 0 {
        return Err(PlannerError::ZeroHorizon);
    }
    let mut dist = warm_start(prev, cfg);
    let mut kls = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let seqs = sample_prior(
            state,
            policy.as_deref_mut(),
            Some(ensemble),
            &dist,
            cfg,
            bounds,
            rng,
        );
        let (returns, costs) = score_sequences(state, &seqs, ensemble, value, cfg, Some(cost), rng);
        let costs = costs.expect("cost function supplied");
        let scores = aggregate(&returns, cfg.lambda_pess, cfg.pessimism);
        let n = seqs.dim().0;
        let safe_idx: Vec<usize> = (0..n).filter(|&j| costs[j] <= safe.d0).collect();
        let next = if safe_idx.len() < safe.min_safe {
            // not enough feasible candidates: descend the cost
            let exponents: Vec<f64> = costs.iter().map(|c| -cfg.kappa * c).collect();
            let all: Vec<usize> = (0..n).collect();
            weighted_refit(&seqs, &exponents, &all, &dist, cfg)?
        } else {
            let exponents: Vec<f64> = scores.iter().map(|s| cfg.kappa * s).collect();
            weighted_refit(&seqs, &exponents, &safe_idx, &dist, cfg)?
        };
        kls.push(next.kl_to(&dist));
        dist = next;
    }
    Ok(plan_result(dist, bounds, cfg, kls))
}

/// Plan against an injected sequence scorer instead of a model and
/// value function (beta is forced to 0; the population is purely
/// Gaussian). Used by synthetic-objective tests and diagnostics.
pub fn optimize_with_scorer<F>(
    cfg: &PlannerConfig,
    bounds: &ActionBounds,
    prev: &SequenceDistribution,
    mut scorer: F,
    rng: &mut ChaCha8Rng,
) -> Result<PlanResult, PlannerError>
where
    F: FnMut(&Population) -> Array1<f64>,
{
    let mut gaussian_cfg = cfg.clone();
    gaussian_cfg.beta = 0.0;
    let mut dist = warm_start(prev, cfg);
    let mut kls = Vec::with_capacity(cfg.iterations);
    let state = Array1::zeros(1);
    for _ in 0..cfg.iterations {
        let seqs = sample_prior(&state, None, None, &dist, &gaussian_cfg, bounds, rng);
        let scores = scorer(&seqs);
        let next = is_update(&seqs, &scores, &dist, &gaussian_cfg)?;
        kls.push(next.kl_to(&dist));
        dist = next;
    }
    Ok(plan_result(dist, bounds, &gaussian_cfg, kls))
}

/// Scorer-injected analogue of [`safe_arc_plan`] for synthetic fixtures.
pub fn optimize_with_scorer_and_cost<F, G>(
    cfg: &PlannerConfig,
    safe: &SafeConfig,
    bounds: &ActionBounds,
    prev: &SequenceDistribution,
    mut scorer: F,
    mut coster: G,
    rng: &mut ChaCha8Rng,
) -> Result<PlanResult, PlannerError>
where
    F: FnMut(&Population) -> Array1<f64>,
    G: FnMut(&Population) -> Array1<f64>,
{
    let mut gaussian_cfg = cfg.clone();
    gaussian_cfg.beta = 0.0;
    let mut dist = warm_start(prev, cfg);
    let mut kls = Vec::with_capacity(cfg.iterations);
    let state = Array1::zeros(1);
    for _ in 0..cfg.iterations {
        let seqs = sample_prior(&state, None, None, &dist, &gaussian_cfg, bounds, rng);
        let scores = scorer(&seqs);
        let costs = coster(&seqs);
        let n = seqs.dim().0;
        let safe_idx: Vec<usize> = (0..n).filter(|&j| costs[j] <= safe.d0).collect();
        let next = if safe_idx.len() < safe.min_safe {
            let exponents: Vec<f64> = costs.iter().map(|c| -gaussian_cfg.kappa * c).collect();
            let all: Vec<usize> = (0..n).collect();
            weighted_refit(&seqs, &exponents, &all, &dist, &gaussian_cfg)?
        } else {
            let exponents: Vec<f64> = scores.iter().map(|s| gaussian_cfg.kappa * s).collect();
            weighted_refit(&seqs, &exponents, &safe_idx, &dist, &gaussian_cfg)?
        };
        kls.push(next.kl_to(&dist));
        dist = next;
    }
    Ok(plan_result(dist, bounds, &gaussian_cfg, kls))
}
