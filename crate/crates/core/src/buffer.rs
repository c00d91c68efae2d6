//! FIFO replay storage and mixed real/model batch sampling.

use rand::Rng;

use crate::error::{Error, Result};

/// One possible outcome of a transition, as predicted by one model member.
#[derive(Debug, Clone, PartialEq)]
pub struct Successor {
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub unsafe_next: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub unsafe_next: bool,
    /// Per-member predicted outcomes for model transitions that keep them;
    /// empty for real transitions.
    pub alternatives: Vec<Successor>,
}

impl Transition {
    pub fn new(
        obs: Vec<f64>,
        action: Vec<f64>,
        reward: f64,
        next_obs: Vec<f64>,
        unsafe_next: bool,
    ) -> Self {
        Self {
            obs,
            action,
            reward,
            next_obs,
            unsafe_next,
            alternatives: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Transition>,
    /// Slot overwritten by the next push once full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config(
                "replay buffer capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            entries: Vec::new(),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() < self.capacity {
            self.entries.push(t);
        } else {
            self.entries[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Entries in insertion order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.entries.split_at(self.cursor);
        older.iter().chain(newer)
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.entries[i]
    }

    pub fn sample<'a, R: Rng + ?Sized>(&'a self, rng: &mut R) -> &'a Transition {
        &self.entries[rng.random_range(0..self.entries.len())]
    }
}

/// Draws `batch` transitions; each comes from `real` with probability
/// `real_fraction` and from `model` otherwise. An empty model buffer means
/// every draw is real.
pub fn sample_mixed<'a, R: Rng + ?Sized>(
    real: &'a ReplayBuffer,
    model: &'a ReplayBuffer,
    batch: usize,
    real_fraction: f64,
    rng: &mut R,
) -> Vec<&'a Transition> {
    assert!(!real.is_empty(), "sampling from an empty real buffer");
    (0..batch)
        .map(|_| {
            if model.is_empty() || rng.random::<f64>() < real_fraction {
                real.sample(rng)
            } else {
                model.sample(rng)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(x: f64) -> Transition {
        Transition::new(vec![x], vec![0.0], x, vec![x + 1.0], false)
    }

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(tr(i as f64));
        }
        assert_eq!(b.len(), 3);
        let order: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(order, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sampling_is_uniform_over_contents() {
        let mut b = ReplayBuffer::new(4).unwrap();
        for i in 0..6 {
            b.push(tr(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 6];
        let n = 40_000;
        for _ in 0..n {
            counts[b.sample(&mut rng).reward as usize] += 1;
        }
        assert_eq!(counts[0] + counts[1], 0);
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for c in &counts[2..] {
            assert!((*c as f64 - n as f64 / 4.0).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn mixed_batches_fall_back_to_real_data() {
        let mut real = ReplayBuffer::new(10).unwrap();
        real.push(tr(1.0));
        let model = ReplayBuffer::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_mixed(&real, &model, 32, 0.1, &mut rng)
            .iter()
            .all(|t| t.reward == 1.0));
    }
}
