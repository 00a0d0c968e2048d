//! Epoch records, the EEGE container, synthetic corpora, splits and the
//! replay buffer.

mod eege;
mod replay;
mod synth;

use rand::seq::SliceRandom;

pub use eege::{read_dataset, write_dataset, EegeHeader, EegeReader, EegeWriter, FileEpoch, PayloadKind};
pub use replay::{ReplayBuffer, ReplaySample};
pub use synth::{generate_corpus, AlphaSample, Corpus, Synth, SyntheticConfig};

use crate::dsp::{Condition, InputMap};
use crate::error::{Error, Result};
use crate::seed;

/// Training ratios of the target-subject sweep.
pub const RATIOS: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub subject_id: u16,
    pub condition: Condition,
    pub label: Option<u8>,
    pub map: InputMap,
}

impl EpochRecord {
    /// Record labelled from its condition (clean 0, noisy 1, others none).
    pub fn new(subject_id: u16, condition: Condition, map: InputMap) -> Self {
        EpochRecord { subject_id, condition, label: condition.label(), map }
    }

    pub fn require_label(&self) -> Result<u8> {
        self.label.ok_or_else(|| {
            Error::Invalid(format!("unlabelled {} epoch of subject {} in a supervised set", self.condition, self.subject_id))
        })
    }
}

/// All epochs of one subject in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDataset {
    pub subject_id: u16,
    pub records: Vec<EpochRecord>,
}

impl SubjectDataset {
    pub fn new(subject_id: u16, records: Vec<EpochRecord>) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.subject_id != subject_id) {
            return Err(Error::Invalid(format!("record of subject {} in dataset of subject {subject_id}", r.subject_id)));
        }
        Ok(SubjectDataset { subject_id, records })
    }

    pub fn labelled(&self) -> Vec<&EpochRecord> {
        self.records.iter().filter(|r| r.label.is_some()).collect()
    }

    pub fn of_condition(&self, c: Condition) -> Vec<&EpochRecord> {
        self.records.iter().filter(|r| r.condition == c).collect()
    }
}

/// Ordered per-subject tasks for incremental learning.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    pub tasks: Vec<SubjectDataset>,
}

impl TaskSequence {
    pub fn new(tasks: Vec<SubjectDataset>) -> Result<Self> {
        let mut ids: Vec<u16> = tasks.iter().map(|t| t.subject_id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Invalid(format!("subject {} appears twice in the task sequence", w[0])));
        }
        Ok(TaskSequence { tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &EpochRecord> {
        self.tasks.iter().flat_map(|t| &t.records)
    }
}

/// Groups records by subject in order of first appearance.
pub fn group_by_subject(records: Vec<EpochRecord>) -> Vec<SubjectDataset> {
    let mut out: Vec<SubjectDataset> = Vec::new();
    for r in records {
        match out.iter_mut().find(|s| s.subject_id == r.subject_id) {
            Some(s) => s.records.push(r),
            None => out.push(SubjectDataset { subject_id: r.subject_id, records: vec![r] }),
        }
    }
    out
}

pub fn validate_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Invalid(format!("training ratio {ratio} outside [0, 1)")));
    }
    Ok(())
}

/// Stratified split of a subject's labelled epochs: `floor(ratio * n_c)`
/// epochs of each labelled condition go to training. For a fixed seed the
/// training sets are nested across ratios.
pub fn split_by_ratio(subject: &SubjectDataset, ratio: f64, seed: u64) -> Result<(Vec<EpochRecord>, Vec<EpochRecord>)> {
    validate_ratio(ratio)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut rng = seed::rng(seed::derive(seed, subject.subject_id as u64));
    for c in [Condition::Clean, Condition::Noisy] {
        let mut idx: Vec<&EpochRecord> = subject.of_condition(c);
        idx.shuffle(&mut rng);
        let n_train = (ratio * idx.len() as f64 + 1e-9).floor() as usize;
        train.extend(idx[..n_train].iter().map(|r| (*r).clone()));
        test.extend(idx[n_train..].iter().map(|r| (*r).clone()));
    }
    Ok((train, test))
}

/// Label-stratified `k`-fold partition. Returns, per fold, the training and
/// validation indices into `records`.
pub fn kfold(records: &[EpochRecord], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || records.len() < k {
        return Err(Error::Invalid(format!("{} records cannot form {k} folds", records.len())));
    }
    let mut rng = seed::rng(seed);
    let mut fold_of = vec![0usize; records.len()];
    let mut next = 0;
    for label in [Some(0), Some(1), None] {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == label).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold_of[i] = next % k;
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..records.len()).partition(|&i| fold_of[i] == f);
            (train, val)
        })
        .collect())
}
