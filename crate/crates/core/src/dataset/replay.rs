use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::EpochRecord;
use crate::dsp::InputMap;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySample {
    pub subject_id: u16,
    pub label: u8,
    pub map: InputMap,
}

/// Bounded store of labelled samples from completed tasks.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    samples: Vec<ReplaySample>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity_per_subject: usize, seed: u64) -> Self {
        ReplayBuffer { capacity: capacity_per_subject, samples: Vec::new(), rng: seed::rng(seed) }
    }

    pub fn capacity_per_subject(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ReplaySample] {
        &self.samples
    }

    pub fn count_for(&self, subject_id: u16) -> usize {
        self.samples.iter().filter(|s| s.subject_id == subject_id).count()
    }

    /// Retains a uniform random subset of at most `capacity` labelled
    /// records of one finished task.
    pub fn add_task(&mut self, records: &[EpochRecord]) -> Result<()> {
        let labelled: Vec<&EpochRecord> = records.iter().filter(|r| r.label.is_some()).collect();
        if let Some(first) = labelled.first() {
            if labelled.iter().any(|r| r.subject_id != first.subject_id) {
                return Err(Error::Invalid("a replay task must hold a single subject".into()));
            }
            if self.count_for(first.subject_id) > 0 {
                return Err(Error::Invalid(format!("subject {} already in the replay buffer", first.subject_id)));
            }
        }
        let keep = self.capacity.min(labelled.len());
        let mut picked = index::sample(&mut self.rng, labelled.len(), keep).into_vec();
        picked.sort_unstable();
        for i in picked {
            let r = labelled[i];
            self.samples.push(ReplaySample { subject_id: r.subject_id, label: r.require_label()?, map: r.map.clone() });
        }
        Ok(())
    }

    /// Draws `m` samples: without replacement when `m` fits in the buffer,
    /// with replacement otherwise.
    pub fn sample(&mut self, m: usize) -> Result<Vec<&ReplaySample>> {
        if self.samples.is_empty() {
            return Err(Error::Invalid("cannot sample from an empty replay buffer".into()));
        }
        let n = self.samples.len();
        let idx: Vec<usize> = if m <= n {
            index::sample(&mut self.rng, n, m).into_vec()
        } else {
            (0..m).map(|_| self.rng.random_range(0..n)).collect()
        };
        Ok(idx.into_iter().map(|i| &self.samples[i]).collect())
    }
}
