use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{check_compatible, init_classifier, init_encoder, EffortNet, ModelConfig};
use crate::binio::{CrcReader, CrcWriter};
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

const MAGIC: &[u8; 4] = b"EFNT";
const VERSION: u16 = 1;
const MAX_TEXT: usize = 1 << 20;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Randomly initialised, untrained weights.
    Init = 0,
    Pretrain = 1,
    Incremental = 2,
    Finetune = 3,
}

impl Phase {
    fn from_u8(v: u8) -> Result<Self> {
        [Phase::Init, Phase::Pretrain, Phase::Incremental, Phase::Finetune]
            .get(v as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown phase tag {v}")))
    }
}

/// Saved weights with the configuration and training metadata that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    /// Phases that shaped these weights, e.g. `"123"` or `"3"`.
    pub lineage: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f32,
    pub encoder: ParamSet,
    /// Absent after pretraining, where only the encoder is kept.
    pub classifier: Option<ParamSet>,
}

impl Checkpoint {
    pub fn from_model(phase: Phase, lineage: &str, net: &EffortNet, seed: u64, epochs: usize, lr: f32) -> Self {
        Checkpoint {
            phase,
            lineage: lineage.to_string(),
            config: net.config.clone(),
            seed,
            epochs,
            lr,
            encoder: net.encoder.clone(),
            classifier: Some(net.classifier.clone()),
        }
    }

    pub fn model(&self) -> Result<EffortNet> {
        let classifier = self
            .classifier
            .clone()
            .ok_or_else(|| Error::Invalid(format!("{:?} checkpoint has no classifier", self.phase)))?;
        Ok(EffortNet { config: self.config.clone(), encoder: self.encoder.clone(), classifier })
    }

    fn meta_text(&self) -> String {
        format!(
            "{}lineage={}\nseed={}\nepochs={}\nlr={}\n",
            self.config.to_text(),
            self.lineage,
            self.seed,
            self.epochs,
            self.lr
        )
    }

    pub fn bitwise_eq(&self, other: &Checkpoint) -> bool {
        self.meta_text() == other.meta_text()
            && self.phase == other.phase
            && self.encoder.bitwise_eq(&other.encoder)
            && match (&self.classifier, &other.classifier) {
                (Some(a), Some(b)) => a.bitwise_eq(b),
                (None, None) => true,
                _ => false,
            }
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, c: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = CrcWriter::new(BufWriter::new(file));
    let tensors: Vec<(&str, &Tensor)> = c.encoder.iter().chain(c.classifier.iter().flat_map(|p| p.iter())).collect();
    (|| {
        w.bytes(MAGIC)?;
        w.u16(VERSION)?;
        w.u8(c.phase as u8)?;
        w.str(&c.meta_text())?;
        w.u32(tensors.len() as u32)?;
        for (name, t) in &tensors {
            w.str(name)?;
            w.u8(t.shape().len() as u8)?;
            for &d in t.shape() {
                w.u32(d as u32)?;
            }
            w.f32s(t.data())?;
        }
        w.finish().map(drop)
    })()
    .map_err(|e| Error::io(path, e))
}

fn parse_meta(text: &str) -> Result<(ModelConfig, String, u64, usize, f32)> {
    let mut model_lines = String::new();
    let (mut lineage, mut seed, mut epochs, mut lr) = (None, None, None, None);
    let bad = |k: &str, v: &str| Error::Format(format!("checkpoint metadata `{k}={v}`"));
    for line in text.lines() {
        match line.split_once('=') {
            Some(("lineage", v)) => lineage = Some(v.to_string()),
            Some(("seed", v)) => seed = Some(v.parse().map_err(|_| bad("seed", v))?),
            Some(("epochs", v)) => epochs = Some(v.parse().map_err(|_| bad("epochs", v))?),
            Some(("lr", v)) => lr = Some(v.parse().map_err(|_| bad("lr", v))?),
            _ => {
                model_lines.push_str(line);
                model_lines.push('\n');
            }
        }
    }
    let missing = |k: &str| Error::Format(format!("checkpoint metadata lacks `{k}`"));
    Ok((
        ModelConfig::from_text(&model_lines)?,
        lineage.ok_or_else(|| missing("lineage"))?,
        seed.ok_or_else(|| missing("seed"))?,
        epochs.ok_or_else(|| missing("epochs"))?,
        lr.ok_or_else(|| missing("lr"))?,
    ))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = CrcReader::new(BufReader::new(file));
    let mut magic = [0u8; 4];
    r.bytes(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected EFNT")));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let phase = Phase::from_u8(r.u8()?)?;
    let (config, lineage, seed, epochs, lr) = parse_meta(&r.str(MAX_TEXT)?)?;
    let count = r.u32()? as usize;
    let mut encoder = ParamSet::new();
    let mut classifier = ParamSet::new();
    for _ in 0..count {
        let name = r.str(256)?;
        let rank = r.u8()? as usize;
        if rank > MAX_RANK {
            return Err(Error::Format(format!("tensor `{name}` has rank {rank}")));
        }
        let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let numel = numel.filter(|&n| n <= 1 << 28).ok_or_else(|| Error::Format(format!("tensor `{name}` dims {dims:?}")))?;
        let t = Tensor::new(&dims, r.f32s(numel)?)?;
        if name.starts_with("enc.") {
            encoder.insert(name, t)?;
        } else if name.starts_with("cls.") {
            classifier.insert(name, t)?;
        } else {
            return Err(Error::Format(format!("unexpected tensor `{name}`")));
        }
    }
    r.finish()?;
    check_compatible(&init_encoder(&config.encoder, 0)?, &encoder)?;
    let classifier = if classifier.is_empty() {
        None
    } else {
        check_compatible(&init_classifier(&config, 0)?, &classifier)?;
        Some(classifier)
    };
    if classifier.is_none() != (phase == Phase::Pretrain) {
        return Err(Error::Format(format!("{phase:?} checkpoint {} a classifier", if classifier.is_some() { "has" } else { "lacks" })));
    }
    Ok(Checkpoint { phase, lineage, config, seed, epochs, lr, encoder, classifier })
}
