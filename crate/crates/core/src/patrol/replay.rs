//! Fixed-capacity ring buffer of transitions.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::Rng;

/// Observations are stored in single precision to halve memory; every
/// channel value is a small count, a flag or a density in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f32>,
    /// Bit `i` set when action `i` is legal in the next state.
    pub next_legal: u32,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    cursor: usize,
    pushed: u64,
    items: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            cursor: 0,
            pushed: 0,
            items: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of pushes since creation.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.pushed += 1;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Uniform indices with replacement from the filled region.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptySamples);
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.items.len())).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn tr(i: usize) -> Transition {
        Transition {
            obs: vec![i as f32],
            action: i,
            reward: i as f64,
            next_obs: vec![],
            next_legal: 0,
            done: false,
        }
    }

    #[test]
    fn empty_buffer_cannot_sample() {
        let b = ReplayBuffer::new(4).unwrap();
        assert!(b.sample_indices(1, &mut seed::from_seed(0)).is_err());
        assert!(ReplayBuffer::new(0).is_err());
    }

    proptest! {
        #[test]
        fn keeps_only_the_newest(cap in 1usize..20, n in 0usize..60, s in 0u64..100) {
            let mut b = ReplayBuffer::new(cap).unwrap();
            for i in 0..n {
                b.push(tr(i));
            }
            prop_assert_eq!(b.len(), n.min(cap));
            let mut actions: Vec<usize> = b.iter().map(|t| t.action).collect();
            actions.sort();
            let expected: Vec<usize> = (n.saturating_sub(cap)..n).collect();
            prop_assert_eq!(actions, expected);
            if n > 0 {
                for i in b.sample_indices(50, &mut seed::from_seed(s)).unwrap() {
                    prop_assert!(i < b.len());
                }
            }
        }
    }
}
