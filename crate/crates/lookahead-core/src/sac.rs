//! Soft actor-critic: tanh-Gaussian actor, twin critics with polyak
//! targets, and a temperature learned toward a target entropy. Also a
//! SARSA update mode that evaluates the buffer policy instead of
//! improving on it, for the lookahead baseline that plans against an
//! evaluation-only value function.

use crate::mdp::{ActionVec, StateVec, Transition};
use crate::nn::{Activation, AdamState, BoundedTanhGaussian, DenseNet, GaussianHead};
use ndarray::{concatenate, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SacError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch lacks successor actions required by the SARSA update")]
    MissingNextActions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    /// Target retention: target = polyak*target + (1-polyak)*critic.
    pub polyak: f64,
    /// Defaults to -(action dim) when absent.
    pub target_entropy: Option<f64>,
    pub init_alpha: f64,
    /// Weight on the dataset log-likelihood added to the actor loss;
    /// zero online, positive for the offline behavior-regularized mode.
    pub bc_weight: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            learning_rate: 3e-4,
            batch_size: 256,
            gamma: 0.99,
            polyak: 0.995,
            target_entropy: None,
            init_alpha: 0.1,
            bc_weight: 0.0,
        }
    }
}

/// Columnar minibatch of transitions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub done: Array1<f64>,
}

impl Batch {
    pub fn from_transitions(batch: &[&Transition]) -> Result<Self, SacError> {
        if batch.is_empty() {
            return Err(SacError::EmptyBatch);
        }
        let ds = batch[0].state.len();
        let da = batch[0].action.len();
        let b = batch.len();
        let mut states = Array2::zeros((b, ds));
        let mut actions = Array2::zeros((b, da));
        let mut rewards = Array1::zeros(b);
        let mut next_states = Array2::zeros((b, ds));
        let mut done = Array1::zeros(b);
        for (r, t) in batch.iter().enumerate() {
            for c in 0..ds {
                states[[r, c]] = t.state[c];
                next_states[[r, c]] = t.next_state[c];
            }
            for c in 0..da {
                actions[[r, c]] = t.action[c];
            }
            rewards[r] = t.reward;
            done[r] = if t.done { 1.0 } else { 0.0 };
        }
        Ok(Self {
            states,
            actions,
            rewards,
            next_states,
            done,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// SARSA minibatch: transitions plus the action actually taken at the
/// successor state.
#[derive(Debug, Clone)]
pub struct SarsaBatch {
    pub batch: Batch,
    pub next_actions: Array2<f64>,
}

impl SarsaBatch {
    pub fn from_pairs(pairs: &[(&Transition, &ActionVec)]) -> Result<Self, SacError> {
        let transitions: Vec<&Transition> = pairs.iter().map(|(t, _)| *t).collect();
        let batch = Batch::from_transitions(&transitions)?;
        let da = pairs[0].1.len();
        let mut next_actions = Array2::zeros((pairs.len(), da));
        for (r, (_, a)) in pairs.iter().enumerate() {
            for c in 0..da {
                next_actions[[r, c]] = a[c];
            }
        }
        Ok(Self {
            batch,
            next_actions,
        })
    }
}

/// Actor, twin critics, their polyak targets, and the entropy
/// temperature (kept in log space).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActorCritic {
    pub cfg: SacConfig,
    state_dim: usize,
    action_dim: usize,
    pub actor: DenseNet,
    pub q1: DenseNet,
    pub q2: DenseNet,
    pub q1_target: DenseNet,
    pub q2_target: DenseNet,
    head: GaussianHead,
    pub bounds: BoundedTanhGaussian,
    adam_actor: AdamState,
    adam_q1: AdamState,
    adam_q2: AdamState,
    log_alpha: f64,
    alpha_m: f64,
    alpha_v: f64,
    alpha_steps: u64,
}

impl ActorCritic {
    pub fn new<R: Rng>(
        state_dim: usize,
        action_lo: Array1<f64>,
        action_hi: Array1<f64>,
        cfg: SacConfig,
        rng: &mut R,
    ) -> Self {
        let action_dim = action_lo.len();
        let actor = DenseNet::mlp(state_dim, &cfg.hidden, 2 * action_dim, Activation::Relu, rng);
        let q1 = DenseNet::mlp(state_dim + action_dim, &cfg.hidden, 1, Activation::Relu, rng);
        let q2 = DenseNet::mlp(state_dim + action_dim, &cfg.hidden, 1, Activation::Relu, rng);
        let q1_target = q1.clone();
        let q2_target = q2.clone();
        let lr = cfg.learning_rate;
        Self {
            adam_actor: AdamState::new(actor.param_count(), lr),
            adam_q1: AdamState::new(q1.param_count(), lr),
            adam_q2: AdamState::new(q2.param_count(), lr),
            log_alpha: cfg.init_alpha.ln(),
            alpha_m: 0.0,
            alpha_v: 0.0,
            alpha_steps: 0,
            head: GaussianHead::default(),
            bounds: BoundedTanhGaussian::new(action_lo, action_hi),
            state_dim,
            action_dim,
            actor,
            q1,
            q2,
            q1_target,
            q2_target,
            cfg,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    /// Actor head: bounded mean/log-std plus the clamp derivative needed
    /// for backprop through the log-std path.
    fn actor_heads(&self, out: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let b = out.nrows();
        let da = self.action_dim;
        let mean = out.slice(ndarray::s![.., 0..da]).to_owned();
        let mut ls = Array2::zeros((b, da));
        let mut dls = Array2::zeros((b, da));
        for r in 0..b {
            for c in 0..da {
                let (y, d) = self.head.clamp(out[[r, c + da]]);
                ls[[r, c]] = y;
                dls[[r, c]] = d;
            }
        }
        (mean, ls, dls)
    }

    /// Bounded mean actions for a batch of states (deterministic policy).
    pub fn actor_mean_batch(&self, states: &Array2<f64>) -> Array2<f64> {
        let out = self.actor.forward_batch(states);
        let (mean, _, _) = self.actor_heads(&out);
        self.bounds.mean_action(&mean)
    }

    /// One stochastic action for environment interaction.
    pub fn sample_action<R: Rng>(&self, state: &StateVec, rng: &mut R) -> ActionVec {
        let s = state.clone().insert_axis(Axis(0));
        let out = self.actor.forward_batch(&s);
        let (mean, ls, _) = self.actor_heads(&out);
        let sample = self.bounds.sample_batch(&mean, &ls, rng);
        sample.action.index_axis_move(Axis(0), 0)
    }

    pub fn mean_action(&self, state: &StateVec) -> ActionVec {
        let s = state.clone().insert_axis(Axis(0));
        self.actor_mean_batch(&s).index_axis_move(Axis(0), 0)
    }

    fn q_forward(net: &DenseNet, states: &Array2<f64>, actions: &Array2<f64>) -> Array1<f64> {
        let x = concatenate![Axis(1), states.view(), actions.view()];
        net.forward_batch(&x).index_axis_move(Axis(1), 0)
    }

    /// Minimum of the twin critics, the planner's terminal value.
    pub fn q_min_batch(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Array1<f64> {
        let a = Self::q_forward(&self.q1, states, actions);
        let b = Self::q_forward(&self.q2, states, actions);
        Array1::from_shape_fn(a.len(), |i| a[i].min(b[i]))
    }

    /// Soft Bellman target
    /// `y = r + (1-done) * gamma * (min Q'(s',a') - alpha log pi(a'|s'))`
    /// with `a'` freshly sampled from the actor.
    pub fn soft_target<R: Rng>(&self, batch: &Batch, rng: &mut R) -> Array1<f64> {
        let out = self.actor.forward_batch(&batch.next_states);
        let (mean, ls, _) = self.actor_heads(&out);
        let sample = self.bounds.sample_batch(&mean, &ls, rng);
        let q1 = Self::q_forward(&self.q1_target, &batch.next_states, &sample.action);
        let q2 = Self::q_forward(&self.q2_target, &batch.next_states, &sample.action);
        let alpha = self.alpha();
        Array1::from_shape_fn(batch.len(), |r| {
            let q = q1[r].min(q2[r]) - alpha * sample.log_prob[r];
            batch.rewards[r] + (1.0 - batch.done[r]) * self.cfg.gamma * q
        })
    }

    /// SARSA target `y = r + (1-done) * gamma * Q'(s',a')` using the
    /// stored successor action: evaluation of the buffer policy, no
    /// maximization and no entropy term.
    pub fn sarsa_target(&self, batch: &SarsaBatch) -> Result<Array1<f64>, SacError> {
        if batch.next_actions.nrows() != batch.batch.len() {
            return Err(SacError::MissingNextActions);
        }
        let q1 = Self::q_forward(&self.q1_target, &batch.batch.next_states, &batch.next_actions);
        let q2 = Self::q_forward(&self.q2_target, &batch.batch.next_states, &batch.next_actions);
        let b = &batch.batch;
        Ok(Array1::from_shape_fn(b.len(), |r| {
            b.rewards[r] + (1.0 - b.done[r]) * self.cfg.gamma * q1[r].min(q2[r])
        }))
    }

    fn critic_step_toward(&mut self, targets: &Array1<f64>, batch: &Batch) -> f64 {
        let x = concatenate![Axis(1), batch.states.view(), batch.actions.view()];
        let b = batch.len() as f64;
        let mut total = 0.0;
        for (net, adam) in [
            (&mut self.q1, &mut self.adam_q1),
            (&mut self.q2, &mut self.adam_q2),
        ] {
            let cache = net.forward_cache(&x);
            let q = cache.output().index_axis(Axis(1), 0).to_owned();
            let mut dl = Array2::zeros((batch.len(), 1));
            let mut loss = 0.0;
            for r in 0..batch.len() {
                let e = q[r] - targets[r];
                loss += 0.5 * e * e / b;
                dl[[r, 0]] = e / b;
            }
            let (grads, _) = net.backward(&cache, &dl);
            adam.step(net, &grads);
            total += loss;
        }
        self.polyak_update();
        total
    }

    /// One optimizer step on the mean squared Bellman residual for both
    /// critics against a shared soft target, then a polyak update of the
    /// target networks. Returns the summed critic loss.
    pub fn update_critics<R: Rng>(&mut self, batch: &Batch, rng: &mut R) -> f64 {
        let targets = self.soft_target(batch, rng);
        self.critic_step_toward(&targets, batch)
    }

    /// Critic step against the SARSA target.
    pub fn update_critics_sarsa(&mut self, batch: &SarsaBatch) -> Result<f64, SacError> {
        let targets = self.sarsa_target(batch)?;
        Ok(self.critic_step_toward(&targets, &batch.batch))
    }

    /// Polyak averaging of the target critics; the only way targets move.
    pub fn polyak_update(&mut self) {
        let tau = self.cfg.polyak;
        for (net, target) in [
            (&self.q1, &mut self.q1_target),
            (&self.q2, &mut self.q2_target),
        ] {
            for (lt, l) in target.layers.iter_mut().zip(net.layers.iter()) {
                lt.w.zip_mut_with(&l.w, |t, c| *t = tau * *t + (1.0 - tau) * c);
                lt.b.zip_mut_with(&l.b, |t, c| *t = tau * *t + (1.0 - tau) * c);
            }
        }
    }

    /// Reparameterized actor step maximizing
    /// `E[min Q(s, a_theta) - alpha log pi(a_theta|s)]`, an optional
    /// behavior-cloning term on dataset actions, and a dual step moving
    /// the temperature toward the target entropy.
    /// Returns (actor loss, mean entropy).
    pub fn update_actor<R: Rng>(&mut self, batch: &Batch, rng: &mut R) -> (f64, f64) {
        let b = batch.len();
        let bf = b as f64;
        let da = self.action_dim;
        let alpha = self.alpha();

        let cache = self.actor.forward_cache(&batch.states);
        let out = cache.output().clone();
        let (mean, ls, dls) = self.actor_heads(&out);
        let sample = self.bounds.sample_batch(&mean, &ls, rng);

        // dQmin/da via the input gradient of the selected critic
        let x = concatenate![Axis(1), batch.states.view(), sample.action.view()];
        let c1 = self.q1.forward_cache(&x);
        let c2 = self.q2.forward_cache(&x);
        let q1 = c1.output().index_axis(Axis(1), 0).to_owned();
        let q2 = c2.output().index_axis(Axis(1), 0).to_owned();
        let mut sel1 = Array2::zeros((b, 1));
        let mut sel2 = Array2::zeros((b, 1));
        for r in 0..b {
            // d(actor loss)/dq = -1/B on the active critic
            if q1[r] <= q2[r] {
                sel1[[r, 0]] = -1.0 / bf;
            } else {
                sel2[[r, 0]] = -1.0 / bf;
            }
        }
        let (_, dx1) = self.q1.backward(&c1, &sel1);
        let (_, dx2) = self.q2.backward(&c2, &sel2);
        let ds = self.state_dim;
        let dq_da = dx1.slice(ndarray::s![.., ds..ds + da]).to_owned()
            + dx2.slice(ndarray::s![.., ds..ds + da]);

        // chain into the actor heads
        let mut dl_dout = Array2::zeros(out.dim());
        let mut loss = 0.0;
        let mut sum_log_prob = 0.0;
        for r in 0..b {
            loss += (alpha * sample.log_prob[r] - q1[r].min(q2[r])) / bf;
            sum_log_prob += sample.log_prob[r];
            for c in 0..da {
                let u = sample.u[[r, c]];
                let tanh_u = u.tanh();
                let sech2 = 1.0 - tanh_u * tanh_u;
                let half = 0.5 * (self.bounds.hi[c] - self.bounds.lo[c]);
                let sigma_z = ls[[r, c]].exp() * sample.z[[r, c]];
                let da_dmu = half * sech2;
                let da_dls = half * sech2 * sigma_z;
                let dlp_dmu = 2.0 * tanh_u;
                let dlp_dls = -1.0 + 2.0 * tanh_u * sigma_z;
                dl_dout[[r, c]] += dq_da[[r, c]] * da_dmu + (alpha / bf) * dlp_dmu;
                dl_dout[[r, c + da]] +=
                    (dq_da[[r, c]] * da_dls + (alpha / bf) * dlp_dls) * dls[[r, c]];
            }
        }

        if self.cfg.bc_weight > 0.0 {
            // weighted log-likelihood of dataset actions
            let (lp_data, u_data) = self.bounds.log_prob_of(&mean, &ls, &batch.actions);
            let w = self.cfg.bc_weight;
            for r in 0..b {
                loss -= w * lp_data[r] / bf;
                for c in 0..da {
                    let inv_var = (-2.0 * ls[[r, c]]).exp();
                    let diff = u_data[[r, c]] - mean[[r, c]];
                    let dlp_dmu = diff * inv_var;
                    let dlp_dls = diff * diff * inv_var - 1.0;
                    dl_dout[[r, c]] += -w / bf * dlp_dmu;
                    dl_dout[[r, c + da]] += -w / bf * dlp_dls * dls[[r, c]];
                }
            }
        }

        let (grads, _) = self.actor.backward(&cache, &dl_dout);
        self.adam_actor.step(&mut self.actor, &grads);

        // temperature dual step: entropy below target pushes alpha up
        let mean_log_prob = sum_log_prob / bf;
        let grad_log_alpha = -self.alpha() * (mean_log_prob + self.target_entropy());
        self.alpha_steps += 1;
        self.alpha_m = 0.9 * self.alpha_m + 0.1 * grad_log_alpha;
        self.alpha_v = 0.999 * self.alpha_v + 0.001 * grad_log_alpha * grad_log_alpha;
        let m_hat = self.alpha_m / (1.0 - 0.9_f64.powi(self.alpha_steps as i32));
        let v_hat = self.alpha_v / (1.0 - 0.999_f64.powi(self.alpha_steps as i32));
        self.log_alpha -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + 1e-8);

        (loss, -mean_log_prob)
    }

    /// Convenience: one critic step followed by one actor step on the
    /// same batch.
    pub fn update<R: Rng>(&mut self, batch: &Batch, rng: &mut R) -> (f64, f64) {
        let critic_loss = self.update_critics(batch, rng);
        let (actor_loss, _entropy) = self.update_actor(batch, rng);
        (critic_loss, actor_loss)
    }

    /// Mean bounded log-std of the actor over a state batch; a cheap
    /// policy-spread diagnostic.
    pub fn mean_log_std(&self, states: &Array2<f64>) -> f64 {
        let out = self.actor.forward_batch(states);
        let (_, ls, _) = self.actor_heads(&out);
        ls.mean().unwrap()
    }
}
