use ndarray::{Array1, Array2};
use rand::Rng;

use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: [f64; OBS_DIM],
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_obs: [f64; OBS_DIM],
    pub done: bool,
}

impl Transition {
    pub fn new(obs: &[f64], action: &[f64], reward: f64, next_obs: &[f64], done: bool) -> Result<Self> {
        let fixed = |v: &[f64], n: usize| {
            if v.len() != n {
                Err(CoreError::DimensionMismatch { expected: n, got: v.len() })
            } else {
                Ok(())
            }
        };
        fixed(obs, OBS_DIM)?;
        fixed(next_obs, OBS_DIM)?;
        fixed(action, ACTION_DIM)?;
        if !reward.is_finite() {
            return Err(CoreError::NonFinite("reward"));
        }
        let mut t = Self {
            obs: [0.0; OBS_DIM],
            action: [0.0; ACTION_DIM],
            reward,
            next_obs: [0.0; OBS_DIM],
            done,
        };
        t.obs.copy_from_slice(obs);
        t.action.copy_from_slice(action);
        t.next_obs.copy_from_slice(next_obs);
        Ok(t)
    }
}

/// Minibatch in matrix form, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub action: Array2<f64>,
    pub reward: Array1<f64>,
    pub next_obs: Array2<f64>,
    /// 1 for terminal transitions.
    pub done: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    pub fn from_transitions<'a>(items: impl ExactSizeIterator<Item = &'a Transition>) -> Self {
        let n = items.len();
        let mut b = Batch {
            obs: Array2::zeros((n, OBS_DIM)),
            action: Array2::zeros((n, ACTION_DIM)),
            reward: Array1::zeros(n),
            next_obs: Array2::zeros((n, OBS_DIM)),
            done: Array1::zeros(n),
        };
        for (i, t) in items.enumerate() {
            b.obs.row_mut(i).assign(&ndarray::ArrayView1::from(&t.obs));
            b.action.row_mut(i).assign(&ndarray::ArrayView1::from(&t.action));
            b.next_obs.row_mut(i).assign(&ndarray::ArrayView1::from(&t.next_obs));
            b.reward[i] = t.reward;
            b.done[i] = if t.done { 1.0 } else { 0.0 };
        }
        b
    }
}

/// Fixed-capacity ring; the oldest transition is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CoreError::InvalidParams("replay capacity must be positive".into()));
        }
        Ok(Self {
            items: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Batch> {
        if self.items.is_empty() {
            return Err(CoreError::EmptyBuffer);
        }
        let picks: Vec<&Transition> = (0..size).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect();
        Ok(Batch::from_transitions(picks.into_iter()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(reward: f64) -> Transition {
        Transition::new(&[reward; OBS_DIM], &[0.0; ACTION_DIM], reward, &[0.0; OBS_DIM], false).unwrap()
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        for r in 0..5 {
            buf.push(t(r as f64));
            assert!(buf.len() <= 3);
        }
        let kept: Vec<f64> = buf.iter().map(|x| x.reward).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_shapes_and_errors() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert_eq!(buf.sample(4, &mut rng).unwrap_err(), CoreError::EmptyBuffer);
        buf.push(t(1.0));
        buf.push(Transition::new(&[0.0; OBS_DIM], &[0.5; ACTION_DIM], 2.0, &[1.0; OBS_DIM], true).unwrap());
        let b = buf.sample(8, &mut rng).unwrap();
        assert_eq!(b.obs.dim(), (8, OBS_DIM));
        assert_eq!(b.action.dim(), (8, ACTION_DIM));
        for i in 0..8 {
            assert_eq!(b.done[i] == 1.0, b.reward[i] == 2.0);
        }
        assert!(ReplayBuffer::new(0).is_err());
        assert!(Transition::new(&[0.0; 3], &[0.0; ACTION_DIM], 0.0, &[0.0; OBS_DIM], false).is_err());
        assert!(Transition::new(&[0.0; OBS_DIM], &[0.0; ACTION_DIM], f64::NAN, &[0.0; OBS_DIM], false).is_err());
    }
}
