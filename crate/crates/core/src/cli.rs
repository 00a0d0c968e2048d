//! Command-line front end. Every command reads its inputs from files,
//! writes into a run directory and echoes the effective configuration.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::dataset::{
    group_by_subject, read_dataset, AlphaSample, EegeHeader, EegeReader, EegeWriter, FileEpoch, PayloadKind, SubjectDataset, Synth,
    TaskSequence,
};
use crate::dsp::{epoch_samples, Condition, N_CHANNELS};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy_rows, adapt_all, emit_report, lle_by_condition, ratio_sweep, ablation, Arm, ExperimentReport, Family, Phases,
};
use crate::model::{finetune, load_checkpoint, save_checkpoint, Checkpoint, Phase, TrainConfig};
use crate::pipeline::{self, RunConfig};
use crate::seed;
use crate::stats::validate_dataset;

pub const SEED_ENV: &str = "EFFORTNET_SEED";

#[derive(Debug, Parser)]
#[command(name = "effortnet", version, about = "Listening-effort decoding from alpha-band EEG")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// key = value run configuration; defaults apply to absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed. Overrides EFFORTNET_SEED and the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "runs/default")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct Targets {
    /// Comma-separated target subject ids; all target subjects by default.
    #[arg(long, value_delimiter = ',')]
    pub subjects: Vec<u16>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the raw synthetic corpus.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Filter, decimate and wavelet-transform a raw corpus.
    Preprocess {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Phase 1: masked-reconstruction pretraining on source subjects.
    Pretrain {
        maps: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Phase 2: incremental training over source subjects.
    TrainIl {
        maps: PathBuf,
        /// Pretrained checkpoint; a random encoder is used when absent.
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Phase 3: per-subject fine-tuning of target subjects.
    Finetune {
        maps: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        ratio: Option<f64>,
        #[command(flatten)]
        targets: Targets,
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune and score target subjects at one ratio.
    Evaluate {
        maps: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        ratio: Option<f64>,
        /// Expected provenance of `--init`.
        #[arg(long)]
        phases: Option<Phases>,
        #[command(flatten)]
        targets: Targets,
        #[command(flatten)]
        common: Common,
    },
    /// Accuracy across training ratios.
    Sweep {
        maps: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[command(flatten)]
        targets: Targets,
        #[command(flatten)]
        common: Common,
    },
    /// Compare fine-tune-only, incremental + fine-tune and the full pipeline.
    Ablate {
        maps: PathBuf,
        /// Phase-2 checkpoint trained from a random encoder.
        #[arg(long = "init-23")]
        init_23: PathBuf,
        /// Phase-2 checkpoint trained from the pretrained encoder.
        #[arg(long = "init-123")]
        init_123: PathBuf,
        #[arg(long)]
        ratio: Option<f64>,
        #[command(flatten)]
        targets: Targets,
        #[command(flatten)]
        common: Common,
    },
    /// Probability of low listening effort per condition.
    Lle {
        maps: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        ratio: Option<f64>,
        #[command(flatten)]
        targets: Targets,
        #[command(flatten)]
        common: Common,
    },
    /// Repeated-measures ANOVA and pairwise tests on alpha power.
    Stats {
        alpha: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Every stage in one process.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

/// Flag, then environment, then the config file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        None => Ok(config),
    }
}

struct Run {
    cfg: RunConfig,
    dir: PathBuf,
}

impl Run {
    fn open(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let env = std::env::var(SEED_ENV).ok();
        cfg.seed = resolve_seed(common.seed, env.as_deref(), cfg.seed)?;
        let dir = common.out.clone();
        for sub in ["", "data", "checkpoints", "reports"] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let echo = dir.join("config.echo");
        std::fs::write(&echo, cfg.to_text()).map_err(|e| Error::io(&echo, e))?;
        Ok(Run { cfg, dir })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn is_source(&self, id: u16) -> bool {
        (id as usize) <= self.cfg.synth.n_source_subjects
    }

    fn load(&self, maps: &Path) -> Result<(TaskSequence, Vec<SubjectDataset>)> {
        let (header, epochs) = read_dataset(maps)?;
        if header.kind != PayloadKind::InputMap {
            return Err(Error::Format(format!("{} holds raw epochs; run `preprocess` first", maps.display())));
        }
        let records = epochs.into_iter().map(|e| e.into_record(&header)).collect::<Result<Vec<_>>>()?;
        let (source, target): (Vec<SubjectDataset>, Vec<SubjectDataset>) =
            group_by_subject(records).into_iter().partition(|s| self.is_source(s.subject_id));
        Ok((TaskSequence::new(source)?, target))
    }

    fn source(&self, maps: &Path) -> Result<TaskSequence> {
        let (source, _) = self.load(maps)?;
        if source.is_empty() {
            return Err(Error::Invalid(format!("{} has no source subjects", maps.display())));
        }
        Ok(source)
    }

    fn targets(&self, maps: &Path, pick: &Targets) -> Result<Vec<SubjectDataset>> {
        let (_, mut targets) = self.load(maps)?;
        if !pick.subjects.is_empty() {
            if let Some(id) = pick.subjects.iter().find(|id| !targets.iter().any(|t| t.subject_id == **id)) {
                return Err(Error::Invalid(format!("target subject {id} is not in {}", maps.display())));
            }
            targets.retain(|t| pick.subjects.contains(&t.subject_id));
        }
        if targets.is_empty() {
            return Err(Error::Invalid(format!("{} has no target subjects", maps.display())));
        }
        Ok(targets)
    }

    fn save(&self, rel: &str, ckpt: &Checkpoint) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        save_checkpoint(&p, ckpt)?;
        Ok(p)
    }

    fn report(&self, name: &str, report: &ExperimentReport) -> Result<Vec<PathBuf>> {
        emit_report(report, self.path(&format!("reports/{name}")))
    }
}

fn phases_of(ckpt: &Checkpoint) -> Result<Phases> {
    Phases::ALL
        .into_iter()
        .find(|p| p.init_lineage() == ckpt.lineage && p.init_phase() == ckpt.phase)
        .ok_or_else(|| Error::Invalid(format!("checkpoint with lineage `{}` is not a fine-tuning starting point", ckpt.lineage)))
}

fn write_alpha_csv(path: &Path, samples: &[AlphaSample]) -> Result<()> {
    let mut s = String::from("subject_id,condition,alpha_power\n");
    for a in samples {
        let _ = writeln!(s, "{},{},{}", a.subject_id, a.condition, a.power);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_alpha_csv(path: &Path) -> Result<Vec<AlphaSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("subject_id,condition,alpha_power") {
        return Err(Error::Format(format!("{} lacks the alpha-power CSV header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Format(format!("{} line {}: `{line}`", path.display(), i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(AlphaSample {
                subject_id: f[0].parse().map_err(|_| bad())?,
                condition: f[1].parse::<Condition>().map_err(|_| bad())?,
                power: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn maps_header(cfg: &RunConfig, n_epochs: u32) -> Result<EegeHeader> {
    Ok(EegeHeader {
        kind: PayloadKind::InputMap,
        n_epochs,
        n_channels: N_CHANNELS as u16,
        n_cols: pipeline::preprocessor(cfg)?.input_cols() as u32,
        fs: cfg.preprocess.target_fs as f32,
    })
}

fn cmd_synth(run: &Run) -> Result<Vec<PathBuf>> {
    let sc = run.cfg.synthetic();
    let synth = Synth::new(sc.clone(), pipeline::preprocessor(&run.cfg)?.sos().clone())?;
    let ids: Vec<u16> = sc.source_ids().chain(sc.target_ids()).collect();
    let header = EegeHeader {
        kind: PayloadKind::Raw,
        n_epochs: ids.iter().map(|&id| synth.epochs_per_subject(id)).sum::<usize>() as u32,
        n_channels: N_CHANNELS as u16,
        n_cols: epoch_samples(sc.fs) as u32,
        fs: sc.fs as f32,
    };
    let path = run.path("data/raw.eege");
    let mut w = EegeWriter::create(&path, header)?;
    for id in ids {
        let traits = synth.traits(id);
        for i in 0..synth.epochs_per_subject(id) {
            w.write(&FileEpoch::from_raw(&synth.epoch(id, &traits, i)?))?;
        }
    }
    w.finish()?;
    Ok(vec![path])
}

fn cmd_preprocess(run: &Run, input: &Path) -> Result<Vec<PathBuf>> {
    let pre = pipeline::preprocessor(&run.cfg)?;
    let reader = EegeReader::open(input)?;
    let raw_header = *reader.header();
    if raw_header.kind != PayloadKind::Raw {
        return Err(Error::Format(format!("{} does not hold raw epochs", input.display())));
    }
    if raw_header.fs as f64 != run.cfg.preprocess.fs {
        return Err(Error::Config(format!("file sampled at {} Hz, config expects {} Hz", raw_header.fs, run.cfg.preprocess.fs)));
    }
    let maps_path = run.path("data/maps.eege");
    let mut w = EegeWriter::create(&maps_path, maps_header(&run.cfg, raw_header.n_epochs)?)?;
    let mut alpha = Vec::with_capacity(raw_header.n_epochs as usize);
    for e in reader {
        let raw = e?.into_raw(&raw_header)?;
        let p = pre.run(&raw)?;
        alpha.push(AlphaSample { subject_id: raw.subject_id, condition: raw.condition, power: p.alpha_power });
        w.write(&FileEpoch { subject_id: raw.subject_id, condition: raw.condition, label: raw.condition.label(), data: p.map.data })?;
    }
    w.finish()?;
    let alpha_path = run.path("data/alpha.csv");
    write_alpha_csv(&alpha_path, &alpha)?;
    Ok(vec![maps_path, alpha_path])
}

fn cmd_finetune(run: &Run, maps: &Path, init: &Path, ratio: f64, pick: &Targets) -> Result<Vec<PathBuf>> {
    let targets = run.targets(maps, pick)?;
    let start = load_checkpoint(init)?;
    let net = start.model()?;
    let spec = run.cfg.finetune_spec();
    let mut out = Vec::new();
    for subject in &targets {
        let rel = format!("checkpoints/ft_{}_r{ratio}/s{}.efnt", phases_of(&start).map_or("x", |p| p.code()), subject.subject_id);
        let ckpt = if ratio == 0.0 {
            start.clone()
        } else {
            let (train, _) = crate::dataset::split_by_ratio(subject, ratio, spec.split_seed)?;
            let cfg = TrainConfig { seed: seed::derive(spec.train.seed, subject.subject_id as u64), ..spec.train };
            let tuned = finetune(&train, &net, &cfg)?.model;
            Checkpoint::from_model(Phase::Finetune, &format!("{}3", start.lineage), &tuned, cfg.seed, cfg.epochs, cfg.lr)
        };
        out.push(run.save(&rel, &ckpt)?);
    }
    Ok(out)
}

fn cmd_run(run: &Run) -> Result<Vec<PathBuf>> {
    let cfg = &run.cfg;
    let corpus = pipeline::corpus(cfg)?;
    let mut out = Vec::new();
    let maps_path = run.path("data/maps.eege");
    let epochs: Vec<FileEpoch> = corpus.source.records().chain(corpus.target.iter().flat_map(|t| &t.records)).map(FileEpoch::from_record).collect();
    crate::dataset::write_dataset(&maps_path, maps_header(cfg, 0)?, &epochs)?;
    drop(epochs);
    out.push(maps_path);
    let alpha_path = run.path("data/alpha.csv");
    write_alpha_csv(&alpha_path, &corpus.alpha)?;
    out.push(alpha_path);
    let ck = pipeline::train_all(cfg, &corpus.source)?;
    out.push(run.save("checkpoints/p1.efnt", &ck.pretrained)?);
    out.push(run.save("checkpoints/p2.efnt", &ck.incremental)?);
    out.push(run.save("checkpoints/p12.efnt", &ck.full)?);
    out.push(run.save("checkpoints/p0.efnt", &ck.init)?);
    let outcome = pipeline::experiments(cfg, &ck, &corpus.target, &corpus.alpha)?;
    out.extend(run.report("ablation", &outcome.ablation)?);
    out.extend(run.report("sweep", &outcome.sweep)?);
    out.extend(run.report("lle", &outcome.lle)?);
    let stats_path = run.path("reports/stats.csv");
    outcome.stats.write_csv(&stats_path)?;
    out.push(stats_path);
    Ok(out)
}

pub fn execute(command: &Command) -> Result<Vec<PathBuf>> {
    match command {
        Command::Synth { common } => cmd_synth(&Run::open(common)?),
        Command::Preprocess { input, common } => cmd_preprocess(&Run::open(common)?, input),
        Command::Pretrain { maps, common } => {
            let run = Run::open(common)?;
            let ckpt = pipeline::pretrain(&run.cfg, &run.source(maps)?)?;
            Ok(vec![run.save("checkpoints/p1.efnt", &ckpt)?])
        }
        Command::TrainIl { maps, init, common } => {
            let run = Run::open(common)?;
            let start = init.as_deref().map(load_checkpoint).transpose()?;
            if let Some(s) = &start {
                if s.phase != Phase::Pretrain {
                    return Err(Error::Invalid(format!("--init must be a pretraining checkpoint, got {:?}", s.phase)));
                }
            }
            let ckpt = pipeline::incremental(&run.cfg, &run.source(maps)?, start.as_ref())?;
            Ok(vec![run.save(&format!("checkpoints/p{}.efnt", ckpt.lineage), &ckpt)?])
        }
        Command::Finetune { maps, init, ratio, targets, common } => {
            let run = Run::open(common)?;
            let ratio = ratio.unwrap_or(run.cfg.eval_ratio);
            cmd_finetune(&run, maps, init, ratio, targets)
        }
        Command::Evaluate { maps, init, ratio, phases, targets, common } => {
            let run = Run::open(common)?;
            let start = load_checkpoint(init)?;
            let phases = match phases {
                Some(p) => {
                    Arm { phases: *p, init: start.clone() }.check()?;
                    *p
                }
                None => phases_of(&start)?,
            };
            let ratio = ratio.unwrap_or(run.cfg.eval_ratio);
            let adapted = adapt_all(&start.model()?, &run.targets(maps, targets)?, ratio, &run.cfg.finetune_spec())?;
            let report = ExperimentReport { rows: accuracy_rows(Family::Evaluate, phases, run.cfg.seed, &adapted)? };
            run.report("evaluate", &report)
        }
        Command::Sweep { maps, init, targets, common } => {
            let run = Run::open(common)?;
            let net = load_checkpoint(init)?.model()?;
            let report = ratio_sweep(&net, &run.targets(maps, targets)?, &run.cfg.ratios, &run.cfg.finetune_spec(), run.cfg.seed)?;
            run.report("sweep", &report)
        }
        Command::Ablate { maps, init_23, init_123, ratio, targets, common } => {
            let run = Run::open(common)?;
            let p0 = pipeline::random_init(&run.cfg)?;
            let mut out = vec![run.save("checkpoints/p0.efnt", &p0)?];
            let arms = [
                Arm { phases: Phases::FinetuneOnly, init: p0 },
                Arm { phases: Phases::IncrementalFinetune, init: load_checkpoint(init_23)? },
                Arm { phases: Phases::Full, init: load_checkpoint(init_123)? },
            ];
            let ratio = ratio.unwrap_or(run.cfg.eval_ratio);
            let (report, _) = ablation(&arms, &run.targets(maps, targets)?, ratio, &run.cfg.finetune_spec(), run.cfg.seed)?;
            out.extend(run.report("ablation", &report)?);
            Ok(out)
        }
        Command::Lle { maps, init, ratio, targets, common } => {
            let run = Run::open(common)?;
            let start = load_checkpoint(init)?;
            let phases = phases_of(&start)?;
            let targets = run.targets(maps, targets)?;
            let ratio = ratio.unwrap_or(run.cfg.eval_ratio);
            let adapted = adapt_all(&start.model()?, &targets, ratio, &run.cfg.finetune_spec())?;
            run.report("lle", &lle_by_condition(&adapted, &targets, phases, run.cfg.seed)?)
        }
        Command::Stats { alpha, common } => {
            let run = Run::open(common)?;
            let report = validate_dataset(&read_alpha_csv(alpha)?, run.cfg.q)?;
            let path = run.path("reports/stats.csv");
            report.write_csv(&path)?;
            Ok(vec![path])
        }
        Command::Run { common } => cmd_run(&Run::open(common)?),
    }
}

/// Parses `args`, runs the command and reports failures as a single
/// `error[kind]: message` line on stderr.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
