//! Run configuration and the end-to-end experiment sequence shared by the
//! command-line front end and the acceptance suite.

mod config;

pub use config::{Budget, RunConfig};

use crate::dataset::{generate_corpus, Corpus, SubjectDataset, TaskSequence};
use crate::dsp::{InputMap, Preprocessor};
use crate::error::Result;
use crate::eval::{ablation, lle_by_condition, ratio_sweep, AdaptedSubject, Arm, ExperimentReport, Family, Phases};
use crate::model::{il_train, ssl_pretrain, Checkpoint, EffortNet, ModelConfig, Phase};
use crate::stats::{validate_dataset, ValidationReport};

pub fn preprocessor(cfg: &RunConfig) -> Result<Preprocessor> {
    Preprocessor::new(cfg.preprocess.clone())
}

pub fn model_config(cfg: &RunConfig) -> Result<ModelConfig> {
    let m = cfg.model(preprocessor(cfg)?.input_cols());
    m.validate()?;
    Ok(m)
}

pub fn corpus(cfg: &RunConfig) -> Result<Corpus> {
    generate_corpus(&cfg.synthetic(), &preprocessor(cfg)?)
}

/// Evenly strided subset of at most `max` items; 0 keeps everything.
fn strided<T>(items: Vec<T>, max: usize) -> Vec<T> {
    if max == 0 || items.len() <= max {
        return items;
    }
    let n = items.len();
    let mut out = Vec::with_capacity(max);
    let mut it = items.into_iter().enumerate();
    for k in 0..max {
        let want = k * n / max;
        for (i, v) in it.by_ref() {
            if i == want {
                out.push(v);
                break;
            }
        }
    }
    out
}

/// Phase 1 on every source epoch, labelled or not.
pub fn pretrain(cfg: &RunConfig, source: &TaskSequence) -> Result<Checkpoint> {
    let model = model_config(cfg)?;
    let maps: Vec<&InputMap> = strided(source.records().map(|r| &r.map).collect(), cfg.ssl_max_maps);
    let ssl = cfg.ssl_config();
    let out = ssl_pretrain(&maps, &model, &ssl)?;
    let net = EffortNet::from_encoder(model, out.encoder, ssl.train.seed)?;
    let mut ckpt = Checkpoint::from_model(Phase::Pretrain, "1", &net, ssl.train.seed, ssl.train.epochs, ssl.train.lr);
    ckpt.classifier = None;
    Ok(ckpt)
}

/// Source tasks restricted to clean and noisy epochs.
pub fn labelled_tasks(source: &TaskSequence) -> Result<TaskSequence> {
    let tasks = source
        .tasks
        .iter()
        .map(|t| SubjectDataset::new(t.subject_id, t.labelled().into_iter().cloned().collect()))
        .collect::<Result<Vec<_>>>()?;
    TaskSequence::new(tasks)
}

/// Phase 2, starting from a pretrained encoder when `init` is given.
pub fn incremental(cfg: &RunConfig, source: &TaskSequence, init: Option<&Checkpoint>) -> Result<Checkpoint> {
    let model = model_config(cfg)?;
    let il = cfg.il_config();
    let out = il_train(&labelled_tasks(source)?, &model, init.map(|c| &c.encoder), &il)?;
    let lineage = if init.is_some() { "12" } else { "2" };
    Ok(Checkpoint::from_model(Phase::Incremental, lineage, &out.model, il.train.seed, il.train.epochs, il.train.lr))
}

/// Untrained starting point of the fine-tune-only arm.
pub fn random_init(cfg: &RunConfig) -> Result<Checkpoint> {
    let net = EffortNet::new(model_config(cfg)?, cfg.init_seed())?;
    Ok(Checkpoint::from_model(Phase::Init, "", &net, cfg.init_seed(), 0, 0.0))
}

/// Starting checkpoints of the three ablation arms.
#[derive(Debug, Clone)]
pub struct Checkpoints {
    pub pretrained: Checkpoint,
    pub init: Checkpoint,
    pub incremental: Checkpoint,
    pub full: Checkpoint,
}

pub fn train_all(cfg: &RunConfig, source: &TaskSequence) -> Result<Checkpoints> {
    let pretrained = pretrain(cfg, source)?;
    let full = incremental(cfg, source, Some(&pretrained))?;
    let incremental = incremental(cfg, source, None)?;
    Ok(Checkpoints { pretrained, init: random_init(cfg)?, incremental, full })
}

/// All reports of one run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub ablation: ExperimentReport,
    pub sweep: ExperimentReport,
    pub lle: ExperimentReport,
    pub stats: ValidationReport,
    /// Full-pipeline models adapted at the evaluation ratio.
    pub adapted: Vec<AdaptedSubject>,
}

impl Outcome {
    pub fn combined(&self) -> ExperimentReport {
        let mut r = self.ablation.clone();
        r.extend(self.sweep.clone());
        r.extend(self.lle.clone());
        r
    }
}

/// Ablation, ratio sweep, LLE evaluation and dataset statistics. The sweep
/// reuses the full arm's models at the evaluation ratio.
pub fn experiments(cfg: &RunConfig, ckpts: &Checkpoints, targets: &[SubjectDataset], corpus_alpha: &[crate::dataset::AlphaSample]) -> Result<Outcome> {
    let spec = cfg.finetune_spec();
    let arms = [
        Arm { phases: Phases::FinetuneOnly, init: ckpts.init.clone() },
        Arm { phases: Phases::IncrementalFinetune, init: ckpts.incremental.clone() },
        Arm { phases: Phases::Full, init: ckpts.full.clone() },
    ];
    let (ablation_report, mut adapted) = ablation(&arms, targets, cfg.eval_ratio, &spec, cfg.seed)?;
    let full_adapted = adapted.pop().expect("three arms");
    let source = ckpts.full.model()?;
    let mut sweep = ExperimentReport::default();
    for &ratio in &cfg.ratios {
        if ratio == cfg.eval_ratio {
            sweep.rows.extend(
                ablation_report
                    .rows
                    .iter()
                    .filter(|r| r.phases == Phases::Full)
                    .map(|r| crate::eval::ReportRow { family: Family::Sweep, ..r.clone() }),
            );
        } else {
            sweep.extend(ratio_sweep(&source, targets, &[ratio], &spec, cfg.seed)?);
        }
    }
    let lle = lle_by_condition(&full_adapted, targets, Phases::Full, cfg.seed)?;
    let stats = validate_dataset(corpus_alpha, cfg.q)?;
    Ok(Outcome { ablation: ablation_report, sweep, lle, stats, adapted: full_adapted })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_subset() {
        assert_eq!(strided((0..10).collect(), 0), (0..10).collect::<Vec<_>>());
        assert_eq!(strided((0..10).collect(), 4), vec![0, 2, 5, 7]);
        assert_eq!(strided((0..3).collect(), 5), vec![0, 1, 2]);
    }
}
