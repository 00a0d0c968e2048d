use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::SyntheticConfig;
use crate::dsp::PreprocessConfig;
use crate::error::{Error, Result};
use crate::eval::FinetuneSpec;
use crate::model::{ClassifierConfig, ConvSpec, EncoderConfig, IlConfig, MaskSpec, ModelConfig, SslConfig, TrainConfig};
use crate::seed;

/// Budget of one training phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub epochs: usize,
    pub lr: f32,
    pub batch: usize,
}

impl Budget {
    fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig { epochs: self.epochs, batch_size: self.batch, lr: self.lr, seed }
    }
}

/// Every tunable of a run, read from and echoed as `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SyntheticConfig,
    pub preprocess: PreprocessConfig,
    pub conv_channels: Vec<usize>,
    pub dense_hidden: usize,
    pub ssl: Budget,
    /// Upper bound on source maps used for pretraining; 0 uses all.
    pub ssl_max_maps: usize,
    pub mask_ratio: f64,
    pub mask_span: usize,
    pub masked_only: bool,
    pub il: Budget,
    pub lambda: f32,
    pub replay_capacity: usize,
    pub finetune: Budget,
    pub ratios: Vec<f64>,
    /// Ratio used by the evaluate, ablation and LLE experiments.
    pub eval_ratio: f64,
    pub q: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SyntheticConfig::default(),
            preprocess: PreprocessConfig::default(),
            conv_channels: vec![8, 16, 32, 32],
            dense_hidden: 64,
            ssl: Budget { epochs: 30, lr: 1e-4, batch: 16 },
            ssl_max_maps: 0,
            mask_ratio: 0.25,
            mask_span: 8,
            masked_only: false,
            il: Budget { epochs: 5, lr: 1e-4, batch: 16 },
            lambda: 1.0,
            replay_capacity: 10,
            finetune: Budget { epochs: 50, lr: 1e-4, batch: 16 },
            ratios: crate::dataset::RATIOS.to_vec(),
            eval_ratio: 0.4,
            q: 0.05,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        let f = &mut self.preprocess.filter;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "source_subjects" => s.n_source_subjects = parse(key, v)?,
            "target_subjects" => s.n_target_subjects = parse(key, v)?,
            "epochs_per_condition" => s.epochs_per_condition = parse(key, v)?,
            "target_epochs_per_condition" => s.target_epochs_per_condition = Some(parse(key, v)?),
            "fs" => {
                s.fs = parse(key, v)?;
                self.preprocess.fs = s.fs;
            }
            "power_clean" => s.condition_power[0] = parse(key, v)?,
            "power_noisy" => s.condition_power[1] = parse(key, v)?,
            "power_mmse" => s.condition_power[2] = parse(key, v)?,
            "power_transformer" => s.condition_power[3] = parse(key, v)?,
            "subject_offset_scale" => s.subject_offset_scale = parse(key, v)?,
            "channel_gain_scale" => s.channel_gain_scale = parse(key, v)?,
            "alpha_freq_lo" => s.alpha_freq_lo = parse(key, v)?,
            "alpha_freq_hi" => s.alpha_freq_hi = parse(key, v)?,
            "pink_noise" => s.pink_noise = parse(key, v)?,
            "white_noise" => s.white_noise = parse(key, v)?,
            "target_fs" => self.preprocess.target_fs = parse(key, v)?,
            "filter_order" => f.order = parse(key, v)?,
            "pass_lo" => f.pass_lo = parse(key, v)?,
            "pass_hi" => f.pass_hi = parse(key, v)?,
            "stop_lo" => f.stop_lo = parse(key, v)?,
            "stop_hi" => f.stop_hi = parse(key, v)?,
            "stop_attenuation_db" => f.attenuation_db = parse(key, v)?,
            "wavelet_levels" => self.preprocess.wavelet_levels = parse(key, v)?,
            "conv_channels" => self.conv_channels = parse_list(key, v)?,
            "dense_hidden" => self.dense_hidden = parse(key, v)?,
            "ssl_epochs" => self.ssl.epochs = parse(key, v)?,
            "ssl_lr" => self.ssl.lr = parse(key, v)?,
            "ssl_batch" => self.ssl.batch = parse(key, v)?,
            "ssl_max_maps" => self.ssl_max_maps = parse(key, v)?,
            "mask_ratio" => self.mask_ratio = parse(key, v)?,
            "mask_span" => self.mask_span = parse(key, v)?,
            "masked_only" => self.masked_only = parse(key, v)?,
            "il_epochs" => self.il.epochs = parse(key, v)?,
            "il_lr" => self.il.lr = parse(key, v)?,
            "il_batch" => self.il.batch = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "replay_capacity" => self.replay_capacity = parse(key, v)?,
            "ft_epochs" => self.finetune.epochs = parse(key, v)?,
            "ft_lr" => self.finetune.lr = parse(key, v)?,
            "ft_batch" => self.finetune.batch = parse(key, v)?,
            "ratios" => self.ratios = parse_list(key, v)?,
            "eval_ratio" => self.eval_ratio = parse(key, v)?,
            "q" => self.q = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{line}`", no + 1)))?;
            let k = k.trim();
            if seen.iter().any(|s| s == k) {
                return Err(Error::Config(format!("line {}: `{k}` given twice", no + 1)));
            }
            cfg.set(k, v.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", no + 1)),
                other => other,
            })?;
            seen.push(k.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text with every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let s = &self.synth;
        let f = &self.preprocess.filter;
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("source_subjects", s.n_source_subjects.to_string());
        kv("target_subjects", s.n_target_subjects.to_string());
        kv("epochs_per_condition", s.epochs_per_condition.to_string());
        if let Some(n) = s.target_epochs_per_condition {
            kv("target_epochs_per_condition", n.to_string());
        }
        kv("fs", s.fs.to_string());
        for (k, p) in ["power_clean", "power_noisy", "power_mmse", "power_transformer"].iter().zip(s.condition_power) {
            kv(k, p.to_string());
        }
        kv("subject_offset_scale", s.subject_offset_scale.to_string());
        kv("channel_gain_scale", s.channel_gain_scale.to_string());
        kv("alpha_freq_lo", s.alpha_freq_lo.to_string());
        kv("alpha_freq_hi", s.alpha_freq_hi.to_string());
        kv("pink_noise", s.pink_noise.to_string());
        kv("white_noise", s.white_noise.to_string());
        kv("target_fs", self.preprocess.target_fs.to_string());
        kv("filter_order", f.order.to_string());
        kv("pass_lo", f.pass_lo.to_string());
        kv("pass_hi", f.pass_hi.to_string());
        kv("stop_lo", f.stop_lo.to_string());
        kv("stop_hi", f.stop_hi.to_string());
        kv("stop_attenuation_db", f.attenuation_db.to_string());
        kv("wavelet_levels", self.preprocess.wavelet_levels.to_string());
        kv("conv_channels", join(&self.conv_channels));
        kv("dense_hidden", self.dense_hidden.to_string());
        kv("ssl_epochs", self.ssl.epochs.to_string());
        kv("ssl_lr", self.ssl.lr.to_string());
        kv("ssl_batch", self.ssl.batch.to_string());
        kv("ssl_max_maps", self.ssl_max_maps.to_string());
        kv("mask_ratio", self.mask_ratio.to_string());
        kv("mask_span", self.mask_span.to_string());
        kv("masked_only", self.masked_only.to_string());
        kv("il_epochs", self.il.epochs.to_string());
        kv("il_lr", self.il.lr.to_string());
        kv("il_batch", self.il.batch.to_string());
        kv("lambda", self.lambda.to_string());
        kv("replay_capacity", self.replay_capacity.to_string());
        kv("ft_epochs", self.finetune.epochs.to_string());
        kv("ft_lr", self.finetune.lr.to_string());
        kv("ft_batch", self.finetune.batch.to_string());
        kv("ratios", join(&self.ratios));
        kv("eval_ratio", self.eval_ratio.to_string());
        kv("q", self.q.to_string());
        o
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let mut synth = self.synthetic();
        synth.seed = 0;
        synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.preprocess.filter.validate(self.preprocess.fs).map_err(|e| Error::Config(e.to_string()))?;
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) || self.dense_hidden == 0 {
            return bad(format!("model widths {:?} / {} must be positive", self.conv_channels, self.dense_hidden));
        }
        for (name, b) in [("ssl", self.ssl), ("il", self.il), ("ft", self.finetune)] {
            if b.batch == 0 || !(b.lr > 0.0 && b.lr.is_finite()) {
                return bad(format!("{name} budget needs batch > 0 and lr > 0"));
            }
        }
        if !(0.0..1.0).contains(&self.mask_ratio) || self.mask_span == 0 {
            return bad(format!("mask ratio {} / span {}", self.mask_ratio, self.mask_span));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        if self.ratios.is_empty() || self.ratios.iter().chain([&self.eval_ratio]).any(|r| !(0.0..1.0).contains(r)) {
            return bad(format!("ratios {:?} / eval ratio {} must lie in [0, 1)", self.ratios, self.eval_ratio));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q {} outside (0, 1)", self.q));
        }
        Ok(())
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig { seed: seed::derive_str(self.seed, "corpus"), ..self.synth.clone() }
    }

    pub fn model(&self, input_cols: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                in_rows: crate::dsp::N_CHANNELS,
                in_cols: input_cols,
                layers: self.conv_channels.iter().map(|&c| ConvSpec::same(c)).collect(),
            },
            classifier: ClassifierConfig { hidden: self.dense_hidden },
        }
    }

    pub fn ssl_config(&self) -> SslConfig {
        SslConfig {
            train: self.ssl.train(seed::derive_str(self.seed, "ssl")),
            mask: MaskSpec { ratio: self.mask_ratio, span: self.mask_span, seed: 0 },
            masked_only: self.masked_only,
        }
    }

    pub fn il_config(&self) -> IlConfig {
        IlConfig { train: self.il.train(seed::derive_str(self.seed, "il")), lambda: self.lambda, replay_capacity: self.replay_capacity }
    }

    pub fn finetune_spec(&self) -> FinetuneSpec {
        FinetuneSpec { train: self.finetune.train(seed::derive_str(self.seed, "finetune")), split_seed: seed::derive_str(self.seed, "split") }
    }

    pub fn init_seed(&self) -> u64 {
        seed::derive_str(self.seed, "init")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 77;
        c.conv_channels = vec![4, 8];
        c.ratios = vec![0.0, 0.5];
        c.masked_only = true;
        c.ssl.lr = 3e-4;
        c.synth.target_epochs_per_condition = Some(30);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn comments_and_overrides() {
        let c = RunConfig::parse("# desk\nft_epochs = 3   # short\n\nratios=0, 0.8\n").unwrap();
        assert_eq!(c.finetune.epochs, 3);
        assert_eq!(c.ratios, vec![0.0, 0.8]);
    }

    #[test]
    fn rejects_unknown_duplicate_and_invalid() {
        for text in ["colour = red", "q = 0.1\nq = 0.2", "ft_lr = fast", "mask_ratio = 1.0", "ratios = 0,1.5", "pass_lo = 20", "noequals"] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn phase_seeds_are_distinct() {
        let c = RunConfig::default();
        let seeds = [c.ssl_config().train.seed, c.il_config().train.seed, c.finetune_spec().train.seed, c.finetune_spec().split_seed, c.init_seed(), c.synthetic().seed];
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }
}
