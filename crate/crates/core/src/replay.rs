//! Fixed-capacity FIFO experience memory with uniform sampling.
//!
//! Observation vectors are reference-counted: one environment tick yields a
//! joint observation that appears in every agent's transition (as its own
//! observation or as a received message) and again as the next observation
//! of the previous tick. Sharing keeps a 2 x 10^5 transition memory in
//! memory on an ordinary machine.

use std::collections::VecDeque;
use std::sync::Arc;


use crate::error::{Error, Result};

pub type Obs = Arc<[f64]>;

/// Steps of warm-up, as a multiple of the batch size, before training starts.
pub const WARMUP_BATCHES: usize = 10;

/// Something with a fixed per-buffer shape.
pub trait Record {
    /// Lengths that must agree across every record in one buffer.
    fn shape(&self) -> Vec<usize>;
    fn is_finite(&self) -> bool;
}

/// One agent's experience tuple for the DQN learners.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub o: Obs,
    /// Received messages, one block per sender in layout order.
    pub m: Vec<Obs>,
    pub action: usize,
    pub reward: f64,
    pub o_next: Obs,
    pub m_next: Vec<Obs>,
    /// True only when the episode ended for a reason other than the time
    /// limit; the bootstrap term is dropped for these.
    pub terminal: bool,
}

impl Transition {
    /// The network input `(o | m_1 | m_2 | ...)`.
    pub fn input(&self) -> Vec<f64> {
        concat(&self.o, &self.m)
    }

    pub fn next_input(&self) -> Vec<f64> {
        concat(&self.o_next, &self.m_next)
    }
}

pub(crate) fn concat(own: &[f64], blocks: &[Obs]) -> Vec<f64> {
    let mut x = Vec::with_capacity(own.len() + blocks.iter().map(|b| b.len()).sum::<usize>());
    x.extend_from_slice(own);
    for b in blocks {
        x.extend_from_slice(b);
    }
    x
}

impl Record for Transition {
    fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.o.len(), self.o_next.len(), self.m.len(), self.m_next.len()];
        s.extend(self.m.iter().chain(&self.m_next).map(|b| b.len()));
        s
    }

    fn is_finite(&self) -> bool {
        self.reward.is_finite()
    }
}

/// A joint tick for the shared-critic learners.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransition {
    pub obs: Vec<Obs>,
    pub actions: Vec<[f64; 2]>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Obs>,
    pub terminal: bool,
}

impl Record for JointTransition {
    fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.obs.len(), self.actions.len(), self.rewards.len(), self.next_obs.len()];
        s.extend(self.obs.iter().chain(&self.next_obs).map(|o| o.len()));
        s
    }

    fn is_finite(&self) -> bool {
        self.rewards.iter().all(|r| r.is_finite()) && self.actions.iter().flatten().all(|a| a.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
    shape: Option<Vec<usize>>,
}

impl<T: Record> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            shape: None,
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

    /// Enough data to start training with minibatches of `batch_size`.
    pub fn is_warm(&self, batch_size: usize) -> bool {
        self.items.len() >= (WARMUP_BATCHES * batch_size).min(self.capacity)
    }

    /// Append, evicting the oldest record when full.
    pub fn push(&mut self, item: T) -> Result<()> {
        let shape = item.shape();
        match &self.shape {
            Some(s) if *s != shape => {
                return Err(Error::Shape(format!("transition shape {shape:?} differs from buffer schema {s:?}")))
            }
            None => self.shape = Some(shape),
            _ => {}
        }
        if !item.is_finite() {
            return Err(Error::NonFinite("transition".into()));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
        Ok(())
    }

    /// `batch_size` records drawn uniformly with replacement.
    pub fn sample<R: rand::Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&T>> {
        if self.items.is_empty() || batch_size == 0 {
            return Err(Error::Insufficient {
                have: self.items.len(),
                need: batch_size.max(1),
            });
        }
        Ok((0..batch_size)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }

    pub fn get(&self, k: usize) -> Option<&T> {
        self.items.get(k)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tr(r: f64) -> Transition {
        let o: Obs = Arc::from(vec![r; 3]);
        Transition {
            o: o.clone(),
            m: vec![o.clone()],
            action: 0,
            reward: r,
            o_next: o.clone(),
            m_next: vec![o],
            terminal: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for k in 0..4 {
            b.push(tr(k as f64)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn paper_capacities_are_accepted() {
        assert_eq!(ReplayBuffer::<Transition>::new(200_000).unwrap().capacity(), 200_000);
        assert_eq!(ReplayBuffer::<JointTransition>::new(500_000).unwrap().capacity(), 500_000);
        assert!(ReplayBuffer::<Transition>::new(0).is_err());
    }

    #[test]
    fn schema_is_enforced() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(tr(0.0)).unwrap();
        let mut bad = tr(1.0);
        bad.o = Arc::from(vec![0.0; 2]);
        assert!(matches!(b.push(bad), Err(Error::Shape(_))));
        assert!(matches!(b.push(tr(f64::NAN)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn single_item_fills_the_batch() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(tr(7.0)).unwrap();
        let mut r = rng::seeded(0);
        let s = b.sample(4, &mut r).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|t| t.reward == 7.0));
    }

    #[test]
    fn empty_buffer_cannot_sample() {
        let b: ReplayBuffer<Transition> = ReplayBuffer::new(4).unwrap();
        assert!(matches!(b.sample(1, &mut rng::seeded(0)), Err(Error::Insufficient { .. })));
    }

    #[test]
    fn sampling_is_uniform_and_read_only() {
        let mut b = ReplayBuffer::new(10).unwrap();
        for k in 0..10 {
            b.push(tr(k as f64)).unwrap();
        }
        let before: Vec<f64> = b.iter().map(|t| t.reward).collect();
        let mut r = rng::seeded(42);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            for t in b.sample(10, &mut r).unwrap() {
                counts[t.reward as usize] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / 100_000.0;
            assert!((f - 0.1).abs() < 0.01, "{f}");
        }
        // Chi-square with 9 dof; the 0.999 quantile is 27.9.
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 10_000.0).powi(2) / 10_000.0).sum();
        assert!(chi2 < 27.9, "{chi2}");
        assert_eq!(b.iter().map(|t| t.reward).collect::<Vec<_>>(), before);
    }

    #[test]
    fn warmup_threshold() {
        let mut b = ReplayBuffer::new(1000).unwrap();
        for k in 0..319 {
            b.push(tr(k as f64)).unwrap();
        }
        assert!(!b.is_warm(32));
        b.push(tr(0.0)).unwrap();
        assert!(b.is_warm(32));
    }
}
