//! Fixed-capacity experience replay with FIFO eviction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{Action, State};
use crate::error::{Error, Result};

/// One stored transition, with the multiplier in force when it was taken.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Arm type, used for the input encoding and the per-type normalizer.
    pub arm_type: usize,
    pub state: State,
    pub action: Action,
    pub reward: f64,
    pub next_state: State,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Transition>,
    /// Slot overwritten by the next push once full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            entries: Vec::with_capacity(capacity),
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

    /// Inserts `t`, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.entries.len() < self.capacity {
            self.entries.push(t);
        } else {
            self.entries[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Entries from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.entries.split_at(self.cursor);
        older.iter().chain(newer)
    }

    /// `size` distinct entries chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if size > self.entries.len() {
            return Err(Error::InputDomain(format!(
                "batch of {size} from a buffer holding {}",
                self.entries.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.entries.len(), size)
            .into_iter()
            .map(|i| self.entries[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(i: usize) -> Transition {
        Transition {
            arm_type: 0,
            state: i,
            action: Action::Passive,
            reward: i as f64,
            next_state: i + 1,
            lambda: 0.0,
        }
    }

    proptest! {
        #[test]
        fn fifo_eviction(capacity in 1usize..50, pushes in 0usize..200) {
            let mut buf = ReplayBuffer::new(capacity).unwrap();
            for i in 0..pushes {
                buf.push(tr(i));
                prop_assert!(buf.len() <= capacity);
            }
            let kept: Vec<usize> = buf.iter_oldest_first().map(|t| t.state).collect();
            let first = pushes.saturating_sub(capacity);
            prop_assert_eq!(kept, (first..pushes).collect::<Vec<_>>());
        }
    }

    #[test]
    fn samples_are_distinct() {
        let mut buf = ReplayBuffer::new(100).unwrap();
        for i in 0..100 {
            buf.push(tr(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let mut s: Vec<usize> = buf
                .sample(32, &mut rng)
                .unwrap()
                .iter()
                .map(|t| t.state)
                .collect();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 32);
        }
        assert!(buf.sample(101, &mut rng).is_err());
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        for i in 0..25 {
            buf.push(tr(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hits = [0u32; 25];
        let draws = 20_000;
        for _ in 0..draws {
            for t in buf.sample(3, &mut rng).unwrap() {
                hits[t.state] += 1;
            }
        }
        assert!(hits[..15].iter().all(|&h| h == 0));
        for &h in &hits[15..] {
            assert!((h as f64 / draws as f64 - 0.3).abs() < 0.015);
        }
    }
}
