//! Accuracy, the target-subject experiment harnesses and the LLE
//! probability evaluator.

mod report;

use std::fmt;
use std::str::FromStr;

pub use report::{emit_report, render_svg, ExperimentReport, Family, ReportRow, Summary};

use crate::dataset::{split_by_ratio, EpochRecord, SubjectDataset};
use crate::dsp::{Condition, InputMap};
use crate::error::{Error, Result};
use crate::model::{finetune, is_high_effort, Checkpoint, EffortNet, Phase, TrainConfig};
use crate::seed;

/// Confusion counts with high effort (noisy) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, predicted_high: bool, actual_high: bool) {
        match (predicted_high, actual_high) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    /// Tallies probabilities against 0/1 labels at the 0.5 threshold.
    pub fn tally(probs: &[f32], labels: &[u8]) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(Error::shape("tally", format!("{} probabilities for {} labels", probs.len(), labels.len())));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &y) in probs.iter().zip(labels) {
            if y > 1 {
                return Err(Error::Invalid(format!("label {y} is not binary")));
            }
            c.record(is_high_effort(p), y == 1);
        }
        Ok(c)
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::Invalid("accuracy of an empty confusion table".into())),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

/// Scores `net` on labelled records.
pub fn evaluate_subject(net: &EffortNet, records: &[EpochRecord]) -> Result<(ConfusionCounts, f64)> {
    let labels = records.iter().map(EpochRecord::require_label).collect::<Result<Vec<u8>>>()?;
    let maps: Vec<&InputMap> = records.iter().map(|r| &r.map).collect();
    let counts = ConfusionCounts::tally(&net.predict_batch(&maps)?, &labels)?;
    Ok((counts, accuracy(&counts)?))
}

/// Fraction of probabilities below 0.5.
pub fn lle_fraction(probs: &[f32]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Invalid("LLE probability of an empty epoch set".into()));
    }
    Ok(probs.iter().filter(|&&p| !is_high_effort(p)).count() as f64 / probs.len() as f64)
}

/// Fraction of epochs that `net` classifies as low listening effort.
pub fn lle_probability(net: &EffortNet, maps: &[&InputMap]) -> Result<f64> {
    if maps.is_empty() {
        return Err(Error::Invalid("LLE probability of an empty epoch set".into()));
    }
    lle_fraction(&net.predict_batch(maps)?)
}

/// Which training phases shaped a model before evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phases {
    FinetuneOnly,
    IncrementalFinetune,
    Full,
}

impl Phases {
    pub const ALL: [Phases; 3] = [Phases::FinetuneOnly, Phases::IncrementalFinetune, Phases::Full];

    pub fn code(self) -> &'static str {
        match self {
            Phases::FinetuneOnly => "3",
            Phases::IncrementalFinetune => "23",
            Phases::Full => "123",
        }
    }

    /// Lineage of the checkpoint that fine-tuning starts from.
    pub fn init_lineage(self) -> &'static str {
        match self {
            Phases::FinetuneOnly => "",
            Phases::IncrementalFinetune => "2",
            Phases::Full => "12",
        }
    }

    pub fn init_phase(self) -> Phase {
        match self {
            Phases::FinetuneOnly => Phase::Init,
            _ => Phase::Incremental,
        }
    }
}

impl fmt::Display for Phases {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Phases {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phases::ALL
            .into_iter()
            .find(|p| p.code() == s)
            .ok_or_else(|| Error::Invalid(format!("phases must be one of 3, 23, 123 (got `{s}`)")))
    }
}

/// Fine-tuning budget plus the seed fixing every target split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneSpec {
    pub train: TrainConfig,
    pub split_seed: u64,
}

/// A target subject after adaptation, with its held-out epochs.
#[derive(Debug, Clone)]
pub struct AdaptedSubject {
    pub subject_id: u16,
    pub ratio: f64,
    pub model: EffortNet,
    pub test: Vec<EpochRecord>,
}

/// Fine-tunes `init` on the subject's ratio split; ratio 0 keeps `init`.
pub fn adapt_subject(init: &EffortNet, subject: &SubjectDataset, ratio: f64, spec: &FinetuneSpec) -> Result<AdaptedSubject> {
    let (train, test) = split_by_ratio(subject, ratio, spec.split_seed)?;
    if test.is_empty() {
        return Err(Error::Invalid(format!("subject {} has no held-out epochs at ratio {ratio}", subject.subject_id)));
    }
    let model = if ratio == 0.0 {
        init.clone()
    } else {
        let cfg = TrainConfig { seed: seed::derive(spec.train.seed, subject.subject_id as u64), ..spec.train };
        finetune(&train, init, &cfg)?.model
    };
    Ok(AdaptedSubject { subject_id: subject.subject_id, ratio, model, test })
}

pub fn adapt_all(init: &EffortNet, targets: &[SubjectDataset], ratio: f64, spec: &FinetuneSpec) -> Result<Vec<AdaptedSubject>> {
    targets.iter().map(|s| adapt_subject(init, s, ratio, spec)).collect()
}

/// One accuracy row per adapted subject.
pub fn accuracy_rows(family: Family, phases: Phases, run_seed: u64, subjects: &[AdaptedSubject]) -> Result<Vec<ReportRow>> {
    subjects
        .iter()
        .map(|s| {
            let (counts, acc) = evaluate_subject(&s.model, &s.test)?;
            Ok(ReportRow {
                family,
                subject_id: Some(s.subject_id),
                ratio: s.ratio,
                phases,
                condition: None,
                n_epochs: s.test.len(),
                counts: Some(counts),
                accuracy: Some(acc),
                p_lle: None,
                seed: run_seed,
            })
        })
        .collect()
}

/// Accuracy of the source model adapted at each ratio.
pub fn ratio_sweep(source: &EffortNet, targets: &[SubjectDataset], ratios: &[f64], spec: &FinetuneSpec, run_seed: u64) -> Result<ExperimentReport> {
    let mut rows = Vec::new();
    for &ratio in ratios {
        let adapted = adapt_all(source, targets, ratio, spec)?;
        rows.extend(accuracy_rows(Family::Sweep, Phases::Full, run_seed, &adapted)?);
    }
    Ok(ExperimentReport { rows })
}

/// Starting point of one ablation arm.
#[derive(Debug, Clone)]
pub struct Arm {
    pub phases: Phases,
    pub init: Checkpoint,
}

impl Arm {
    pub fn check(&self) -> Result<()> {
        let c = &self.init;
        if c.phase != self.phases.init_phase() || c.lineage != self.phases.init_lineage() {
            return Err(Error::Invalid(format!(
                "arm {} needs a {:?} checkpoint with lineage `{}`, got {:?} `{}`",
                self.phases,
                self.phases.init_phase(),
                self.phases.init_lineage(),
                c.phase,
                c.lineage
            )));
        }
        Ok(())
    }
}

/// Fine-tunes every arm on identical target splits. Returns the report and
/// the adapted subjects of each arm in input order.
pub fn ablation(arms: &[Arm], targets: &[SubjectDataset], ratio: f64, spec: &FinetuneSpec, run_seed: u64) -> Result<(ExperimentReport, Vec<Vec<AdaptedSubject>>)> {
    arms.iter().try_for_each(Arm::check)?;
    let mut rows = Vec::new();
    let mut adapted_arms = Vec::with_capacity(arms.len());
    for arm in arms {
        let adapted = adapt_all(&arm.init.model()?, targets, ratio, spec)?;
        rows.extend(accuracy_rows(Family::Ablation, arm.phases, run_seed, &adapted)?);
        adapted_arms.push(adapted);
    }
    Ok((ExperimentReport { rows }, adapted_arms))
}

/// Pooled LLE probability per condition. Clean and noisy epochs come from
/// each subject's held-out split; enhanced conditions were never trained
/// on, so all of their epochs are used.
pub fn lle_by_condition(subjects: &[AdaptedSubject], targets: &[SubjectDataset], phases: Phases, run_seed: u64) -> Result<ExperimentReport> {
    let mut rows = Vec::new();
    for c in Condition::ALL {
        let (mut low, mut n) = (0usize, 0usize);
        for s in subjects {
            let maps: Vec<&InputMap> = if c.label().is_some() {
                s.test.iter().filter(|r| r.condition == c).map(|r| &r.map).collect()
            } else {
                let t = targets
                    .iter()
                    .find(|t| t.subject_id == s.subject_id)
                    .ok_or_else(|| Error::Invalid(format!("no target data for subject {}", s.subject_id)))?;
                t.of_condition(c).into_iter().map(|r| &r.map).collect()
            };
            if maps.is_empty() {
                continue;
            }
            let probs = s.model.predict_batch(&maps)?;
            low += probs.iter().filter(|&&p| !is_high_effort(p)).count();
            n += probs.len();
        }
        if n == 0 {
            return Err(Error::Invalid(format!("no {c} epochs to evaluate")));
        }
        rows.push(ReportRow {
            family: Family::Lle,
            subject_id: None,
            ratio: subjects.first().map_or(0.0, |s| s.ratio),
            phases,
            condition: Some(c),
            n_epochs: n,
            counts: None,
            accuracy: None,
            p_lle: Some(low as f64 / n as f64),
            seed: run_seed,
        });
    }
    Ok(ExperimentReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{tiny_config, tiny_map};
    use crate::tensor::Tensor;

    /// A model whose output is `sigmoid(bias)` regardless of input.
    fn constant(p: f32) -> EffortNet {
        let mut net = EffortNet::new(tiny_config(), 1).unwrap();
        let w = net.classifier.get_mut("cls.1.w").unwrap();
        *w = Tensor::zeros(w.shape());
        *net.classifier.get_mut("cls.1.b").unwrap() = Tensor::new(&[1], vec![(p / (1.0 - p)).ln()]).unwrap();
        net
    }

    fn records(id: u16, n: usize) -> Vec<EpochRecord> {
        (0..n)
            .flat_map(|i| {
                [Condition::Clean, Condition::Noisy].map(|c| EpochRecord::new(id, c, tiny_map(i as u64 * 2 + c.code() as u64)))
            })
            .collect()
    }

    #[test]
    fn accuracy_formula() {
        let c = ConfusionCounts { tp: 3, tn: 2, fp: 1, fn_: 2 };
        assert_eq!(accuracy(&c).unwrap(), 0.625);
        assert_eq!(accuracy(&ConfusionCounts { tp: 4, tn: 1, fp: 0, fn_: 0 }).unwrap(), 1.0);
        let flipped = ConfusionCounts { tp: c.fn_, tn: c.fp, fp: c.tn, fn_: c.tp };
        assert_eq!(accuracy(&flipped).unwrap(), 1.0 - 0.625);
        assert!(accuracy(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn tally_uses_inclusive_threshold() {
        let c = ConfusionCounts::tally(&[0.5, 0.49, 0.9, 0.1], &[0, 0, 1, 1]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, tn: 1, fp: 1, fn_: 1 });
        assert!(ConfusionCounts::tally(&[0.5], &[2]).is_err());
        assert!(ConfusionCounts::tally(&[0.5], &[]).is_err());
    }

    #[test]
    fn half_probability_model_scores_high_effort_prevalence() {
        let net = constant(0.5);
        let mut recs = records(1, 3);
        recs.push(EpochRecord::new(1, Condition::Noisy, tiny_map(99)));
        let (c, acc) = evaluate_subject(&net, &recs).unwrap();
        assert_eq!(c.total(), recs.len() as u64);
        assert_eq!(c.fn_ + c.tn, 0);
        assert_eq!(acc, 4.0 / 7.0);
    }

    #[test]
    fn unlabelled_records_are_rejected() {
        let mut recs = records(1, 1);
        recs.push(EpochRecord::new(1, Condition::Mmse, tiny_map(5)));
        assert!(evaluate_subject(&constant(0.2), &recs).is_err());
    }

    #[test]
    fn lle_of_confident_low_model() {
        let maps: Vec<InputMap> = (0..5).map(tiny_map).collect();
        let refs: Vec<&InputMap> = maps.iter().collect();
        assert_eq!(lle_probability(&constant(0.1), &refs).unwrap(), 1.0);
        assert_eq!(lle_probability(&constant(0.9), &refs).unwrap(), 0.0);
        assert!(lle_probability(&constant(0.1), &[]).is_err());
        let f = lle_fraction(&[0.2, 0.7, 0.5]).unwrap();
        assert!((f + 2.0 / 3.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ratio_zero_is_plain_evaluation() {
        let net = EffortNet::new(tiny_config(), 4).unwrap();
        let subj = SubjectDataset::new(7, records(7, 5)).unwrap();
        let spec = FinetuneSpec { train: TrainConfig::new(2, 3), split_seed: 1 };
        let a = adapt_subject(&net, &subj, 0.0, &spec).unwrap();
        assert!(a.model.bitwise_eq(&net));
        let direct = evaluate_subject(&net, &subj.records).unwrap();
        let report = ratio_sweep(&net, std::slice::from_ref(&subj), &[0.0, 0.4], &spec, 9).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].accuracy, Some(direct.1));
        assert_eq!(report.rows[1].n_epochs, 6);
        assert!(!adapt_subject(&net, &subj, 0.4, &spec).unwrap().model.bitwise_eq(&net));
    }

    #[test]
    fn ablation_checks_provenance_and_shares_splits() {
        let net = EffortNet::new(tiny_config(), 4).unwrap();
        let targets = vec![SubjectDataset::new(3, records(3, 5)).unwrap(), SubjectDataset::new(4, records(4, 5)).unwrap()];
        let spec = FinetuneSpec { train: TrainConfig::new(1, 3), split_seed: 2 };
        let arm = |phases: Phases, phase: Phase, lineage: &str| Arm {
            phases,
            init: Checkpoint::from_model(phase, lineage, &net, 4, 0, 1e-4),
        };
        let arms = [arm(Phases::FinetuneOnly, Phase::Init, ""), arm(Phases::Full, Phase::Incremental, "12")];
        let (report, adapted) = ablation(&arms, &targets, 0.4, &spec, 5).unwrap();
        assert_eq!(report.rows.len(), 4);
        for s in 0..2 {
            assert_eq!(adapted[0][s].test, adapted[1][s].test);
        }
        let bad = [arm(Phases::Full, Phase::Incremental, "2")];
        assert!(ablation(&bad, &targets, 0.4, &spec, 5).is_err());
    }

    #[test]
    fn lle_pools_across_subjects() {
        let targets: Vec<SubjectDataset> = (1..=2)
            .map(|id| {
                let mut recs = records(id, 4);
                recs.push(EpochRecord::new(id, Condition::Mmse, tiny_map(50)));
                recs.push(EpochRecord::new(id, Condition::Transformer, tiny_map(51)));
                SubjectDataset::new(id, recs).unwrap()
            })
            .collect();
        let spec = FinetuneSpec { train: TrainConfig::new(1, 3), split_seed: 2 };
        let adapted: Vec<AdaptedSubject> = targets
            .iter()
            .zip([0.1, 0.9])
            .map(|(t, p)| AdaptedSubject { model: constant(p), ..adapt_subject(&constant(p), t, 0.5, &spec).unwrap() })
            .collect();
        let r = lle_by_condition(&adapted, &targets, Phases::Full, 1).unwrap();
        assert_eq!(r.rows.len(), 4);
        for row in &r.rows {
            assert_eq!(row.p_lle, Some(0.5));
        }
        assert_eq!(r.rows[0].n_epochs, 4);
        assert_eq!(r.rows[2].n_epochs, 2);
    }

    #[test]
    fn phases_round_trip() {
        for p in Phases::ALL {
            assert_eq!(p.code().parse::<Phases>().unwrap(), p);
        }
        assert!("12".parse::<Phases>().is_err());
    }
}
