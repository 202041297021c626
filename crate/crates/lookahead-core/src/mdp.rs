//! Core MDP data types: transitions, the replay buffer, and return
//! arithmetic shared by every other module.

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment state as a flat real vector.
pub type StateVec = Array1<f64>;
/// Action as a flat real vector.
pub type ActionVec = Array1<f64>;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("negative constraint cost {0}")]
    NegativeCost(f64),
    #[error("dimension mismatch: expected {expected}, got {got} for {what}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("requested {requested} samples from buffer of size {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("discount factor must lie in (0,1), got {0}")]
    InvalidGamma(f64),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("buffer holds too few consecutive pairs for a batch of {0}")]
    NotEnoughPairs(usize),
}

/// Discount factor restricted to the open interval (0,1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountSpec {
    gamma: f64,
}

impl DiscountSpec {
    pub fn new(gamma: f64) -> Result<Self, MdpError> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(MdpError::InvalidGamma(gamma));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// One environment step. Unconstrained environments store `cost = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: StateVec,
    pub action: ActionVec,
    pub reward: f64,
    pub cost: f64,
    pub next_state: StateVec,
    pub done: bool,
}

impl Transition {
    fn validate(&self, state_dim: usize, action_dim: usize) -> Result<(), MdpError> {
        if self.state.len() != state_dim {
            return Err(MdpError::DimMismatch {
                what: "state",
                expected: state_dim,
                got: self.state.len(),
            });
        }
        if self.next_state.len() != state_dim {
            return Err(MdpError::DimMismatch {
                what: "next_state",
                expected: state_dim,
                got: self.next_state.len(),
            });
        }
        if self.action.len() != action_dim {
            return Err(MdpError::DimMismatch {
                what: "action",
                expected: action_dim,
                got: self.action.len(),
            });
        }
        if !self.reward.is_finite() {
            return Err(MdpError::NonFinite("reward"));
        }
        if !self.cost.is_finite() {
            return Err(MdpError::NonFinite("cost"));
        }
        if self.cost < 0.0 {
            return Err(MdpError::NegativeCost(self.cost));
        }
        let finite = |v: &StateVec| v.iter().all(|x| x.is_finite());
        if !finite(&self.state) || !finite(&self.next_state) {
            return Err(MdpError::NonFinite("state"));
        }
        if !self.action.iter().all(|x| x.is_finite()) {
            return Err(MdpError::NonFinite("action"));
        }
        Ok(())
    }
}

/// Fixed-capacity FIFO experience store with uniform batch sampling.
///
/// Single writer; sampling only reads. All randomness comes from the rng
/// passed to the sampling calls, so batches are reproducible by seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    capacity: usize,
    head: usize,
    data: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            state_dim,
            action_dim,
            capacity,
            head: 0,
            data: Vec::with_capacity(capacity.min(1 << 20)),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Appends a transition, evicting the oldest entry once at capacity.
    pub fn push(&mut self, t: Transition) -> Result<(), MdpError> {
        t.validate(self.state_dim, self.action_dim)?;
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Entry in insertion order: index 0 is the oldest stored transition.
    pub fn get(&self, logical: usize) -> &Transition {
        debug_assert!(logical < self.data.len());
        let phys = if self.data.len() < self.capacity {
            logical
        } else {
            (self.head + logical) % self.capacity
        };
        &self.data[phys]
    }

    /// Draws `n` distinct transitions uniformly without replacement.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>, MdpError> {
        if n > self.data.len() {
            return Err(MdpError::SampleTooLarge {
                requested: n,
                available: self.data.len(),
            });
        }
        let idx = rand::seq::index::sample(rng, self.data.len(), n);
        Ok(idx.into_iter().map(|i| self.get(i)).collect())
    }

    /// Draws `n` transitions that have a stored successor action, i.e.
    /// pairs (s,a,r,s',a') taken from contiguous trajectory segments.
    /// A pair is valid when the entry is non-terminal and the next stored
    /// transition continues from its `next_state`.
    pub fn sample_consecutive<R: Rng>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<(&Transition, &ActionVec)>, MdpError> {
        if self.data.len() < 2 {
            return Err(MdpError::NotEnoughPairs(n));
        }
        let mut out = Vec::with_capacity(n);
        let max_attempts = 100 * n.max(1);
        let mut attempts = 0;
        while out.len() < n {
            attempts += 1;
            if attempts > max_attempts {
                return Err(MdpError::NotEnoughPairs(n));
            }
            let l = rng.random_range(0..self.data.len() - 1);
            let cur = self.get(l);
            let next = self.get(l + 1);
            if !cur.done && cur.next_state == next.state {
                out.push((cur, &next.action));
            }
        }
        Ok(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.data.len()).map(|l| self.get(l))
    }
}

/// Discounted sum of a reward sequence: sum_t gamma^t r_t.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64, MdpError> {
    let gamma = DiscountSpec::new(gamma)?.gamma();
    let mut total = 0.0;
    let mut scale = 1.0;
    for &r in rewards {
        if !r.is_finite() {
            return Err(MdpError::NonFinite("reward"));
        }
        total += scale * r;
        scale *= gamma;
    }
    Ok(total)
}
