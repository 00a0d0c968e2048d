use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use super::{EpochRecord, SubjectDataset, TaskSequence};
use crate::dsp::{epoch_samples, filter_epoch, alpha_power, Condition, Preprocessor, RawEpoch, Sos, N_CHANNELS};
use crate::error::{Error, Result};
use crate::seed;

/// Generator settings. Powers are indexed by [`Condition::code`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_source_subjects: usize,
    pub n_target_subjects: usize,
    pub epochs_per_condition: usize,
    /// Epochs per condition of target subjects; `epochs_per_condition` when absent.
    pub target_epochs_per_condition: Option<usize>,
    pub fs: f64,
    pub condition_power: [f64; 4],
    /// Log-space SD of the per-subject alpha power multiplier.
    pub subject_offset_scale: f64,
    /// Log-space SD of the per-subject, per-channel alpha gain.
    pub channel_gain_scale: f64,
    pub alpha_freq_lo: f64,
    pub alpha_freq_hi: f64,
    /// Broadband standard deviation of the 1/f component.
    pub pink_noise: f64,
    /// Standard deviation of the white component.
    pub white_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_source_subjects: 100,
            n_target_subjects: 20,
            epochs_per_condition: 26,
            target_epochs_per_condition: None,
            fs: 1000.0,
            condition_power: [4478.8, 4962.6, 4586.9, 4564.6],
            subject_offset_scale: 0.1,
            channel_gain_scale: 0.25,
            alpha_freq_lo: 9.0,
            alpha_freq_hi: 12.0,
            pink_noise: 250.0,
            white_noise: 20.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.n_source_subjects + self.n_target_subjects == 0 || self.n_source_subjects + self.n_target_subjects > u16::MAX as usize {
            return bad(format!("subject counts {} + {}", self.n_source_subjects, self.n_target_subjects));
        }
        if self.epochs_per_condition == 0 || self.target_epochs_per_condition == Some(0) {
            return bad("epochs per condition must be positive".into());
        }
        if !(self.fs > 0.0) {
            return bad(format!("sampling rate {}", self.fs));
        }
        if self.condition_power.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return bad(format!("condition powers {:?} must be positive", self.condition_power));
        }
        for (name, v) in [
            ("subject offset scale", self.subject_offset_scale),
            ("channel gain scale", self.channel_gain_scale),
            ("pink noise", self.pink_noise),
            ("white noise", self.white_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} {v} must be non-negative"));
            }
        }
        if !(8.0 <= self.alpha_freq_lo && self.alpha_freq_lo <= self.alpha_freq_hi && self.alpha_freq_hi <= 13.0) {
            return bad(format!("alpha frequency range [{}, {}] outside 8-13 Hz", self.alpha_freq_lo, self.alpha_freq_hi));
        }
        Ok(())
    }

    pub fn power(&self, c: Condition) -> f64 {
        self.condition_power[c.code() as usize]
    }

    pub fn source_ids(&self) -> impl Iterator<Item = u16> {
        1..=self.n_source_subjects as u16
    }

    pub fn target_ids(&self) -> impl Iterator<Item = u16> {
        let first = self.n_source_subjects as u16 + 1;
        first..first + self.n_target_subjects as u16
    }

    pub fn epochs_for(&self, subject_id: u16) -> usize {
        match self.target_epochs_per_condition {
            Some(n) if subject_id as usize > self.n_source_subjects => n,
            _ => self.epochs_per_condition,
        }
    }
}

/// Fixed traits of one synthetic subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTraits {
    pub alpha_freq: f64,
    pub power_multiplier: f64,
    pub gains: [f64; N_CHANNELS],
    pub phase_offsets: [f64; N_CHANNELS],
}

// Paul Kellett's refined 1/f filter: six leaky integrators plus direct
// terms, driven by unit white noise.
const PINK_POLES: [f64; 6] = [0.99886, 0.99332, 0.96900, 0.86650, 0.55000, -0.7616];
const PINK_GAINS: [f64; 6] = [0.0555179, 0.0750759, 0.1538520, 0.3104856, 0.5329522, -0.0168980];
const PINK_DIRECT: f64 = 0.5362;
const PINK_LAGGED: f64 = 0.115926;
const PINK_BURN_IN: usize = 1000;

/// Standard deviation of the pink filter output for unit white input,
/// from its impulse response.
fn pink_unit_sd() -> f64 {
    let mut var = 0.0;
    for k in 0..20_000 {
        let mut h: f64 = PINK_POLES.iter().zip(PINK_GAINS).map(|(a, c)| c * a.powi(k)).sum();
        h += match k {
            0 => PINK_DIRECT,
            1 => PINK_LAGGED,
            _ => 0.0,
        };
        var += h * h;
    }
    var.sqrt()
}

fn pink_noise(rng: &mut impl Rng, n: usize, sd: f64, unit_sd: f64, out: &mut Vec<f64>) {
    let mut b = [0.0f64; 6];
    let mut lagged = 0.0;
    let scale = sd / unit_sd;
    for i in 0..n + PINK_BURN_IN {
        let w: f64 = StandardNormal.sample(rng);
        let mut y = PINK_DIRECT * w + lagged;
        for k in 0..6 {
            b[k] = PINK_POLES[k] * b[k] + PINK_GAINS[k] * w;
            y += b[k];
        }
        lagged = PINK_LAGGED * w;
        if i >= PINK_BURN_IN {
            out.push(y * scale);
        }
    }
}

/// Seeded synthetic EEG source. Each subject and each epoch has its own
/// derived random stream, so any epoch can be regenerated in isolation.
#[derive(Debug, Clone)]
pub struct Synth {
    pub config: SyntheticConfig,
    sos: Sos,
    pink_sd: f64,
    n_samples: usize,
}

impl Synth {
    pub fn new(config: SyntheticConfig, sos: Sos) -> Result<Self> {
        config.validate()?;
        if (sos.fs - config.fs).abs() > 1e-9 {
            return Err(Error::Invalid(format!("filter at {} Hz for data at {} Hz", sos.fs, config.fs)));
        }
        let n_samples = epoch_samples(config.fs);
        Ok(Synth { config, sos, pink_sd: pink_unit_sd(), n_samples })
    }

    fn subject_seed(&self, subject_id: u16) -> u64 {
        seed::derive(self.config.seed, subject_id as u64)
    }

    pub fn traits(&self, subject_id: u16) -> SubjectTraits {
        let c = &self.config;
        let mut rng = seed::rng(seed::derive(self.subject_seed(subject_id), 0));
        let alpha_freq = rng.random_range(c.alpha_freq_lo..=c.alpha_freq_hi);
        let power_multiplier = LogNormal::new(0.0, c.subject_offset_scale).unwrap().sample(&mut rng);
        let gain_dist = LogNormal::new(0.0, c.channel_gain_scale).unwrap();
        let mut gains = [0.0; N_CHANNELS];
        gains.iter_mut().for_each(|g| *g = gain_dist.sample(&mut rng));
        let rms = (gains.iter().map(|g| g * g).sum::<f64>() / N_CHANNELS as f64).sqrt();
        gains.iter_mut().for_each(|g| *g /= rms);
        let mut phase_offsets = [0.0; N_CHANNELS];
        phase_offsets.iter_mut().for_each(|p| *p = rng.random_range(-0.2..=0.2));
        SubjectTraits { alpha_freq, power_multiplier, gains, phase_offsets }
    }

    /// Epoch `index` of a subject; indices run condition-major through
    /// [`Condition::ALL`].
    pub fn epoch(&self, subject_id: u16, traits: &SubjectTraits, index: usize) -> Result<RawEpoch> {
        let c = &self.config;
        let condition = Condition::ALL[index / c.epochs_for(subject_id)];
        let mut rng = seed::rng(seed::derive(self.subject_seed(subject_id), index as u64 + 1));
        let target = c.power(condition) * traits.power_multiplier;
        // Mean square of a sinusoid is A²/2; divide out the band-pass gain
        // so the filtered power lands on the target.
        let gain = self.sos.response(traits.alpha_freq).norm();
        let amp = (2.0 * target).sqrt() / gain;
        let phase = rng.random_range(0.0..2.0 * PI);
        let w = 2.0 * PI * traits.alpha_freq / c.fs;
        let n = self.n_samples;
        let mut data = Vec::with_capacity(N_CHANNELS * n);
        let mut noise = Vec::with_capacity(n);
        for ch in 0..N_CHANNELS {
            noise.clear();
            pink_noise(&mut rng, n, c.pink_noise, self.pink_sd, &mut noise);
            let a = amp * traits.gains[ch];
            let ph = phase + traits.phase_offsets[ch];
            for (i, pink) in noise.iter().enumerate() {
                let white: f64 = StandardNormal.sample(&mut rng);
                let v = a * (w * i as f64 + ph).sin() + pink + c.white_noise * white;
                data.push(v as f32 as f64);
            }
        }
        RawEpoch::new(subject_id, condition, c.fs, N_CHANNELS, data)
    }

    pub fn epochs_per_subject(&self, subject_id: u16) -> usize {
        4 * self.config.epochs_for(subject_id)
    }

    pub fn subject_epochs(&self, subject_id: u16) -> Result<Vec<RawEpoch>> {
        let traits = self.traits(subject_id);
        (0..self.epochs_per_subject(subject_id)).map(|i| self.epoch(subject_id, &traits, i)).collect()
    }

    /// Band-passed alpha power of every epoch of a subject.
    pub fn subject_alpha(&self, subject_id: u16) -> Result<Vec<AlphaSample>> {
        let traits = self.traits(subject_id);
        (0..self.epochs_per_subject(subject_id))
            .map(|i| {
                let e = self.epoch(subject_id, &traits, i)?;
                let power = alpha_power(&filter_epoch(&self.sos, &e)?);
                Ok(AlphaSample { subject_id, condition: e.condition, power })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSample {
    pub subject_id: u16,
    pub condition: Condition,
    pub power: f64,
}

/// Preprocessed synthetic corpus plus the alpha power of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub source: TaskSequence,
    pub target: Vec<SubjectDataset>,
    pub alpha: Vec<AlphaSample>,
}

/// Generates and preprocesses every subject without keeping raw epochs.
pub fn generate_corpus(config: &SyntheticConfig, pre: &Preprocessor) -> Result<Corpus> {
    let synth = Synth::new(config.clone(), pre.sos().clone())?;
    let mut alpha = Vec::new();
    let mut subject = |id: u16| -> Result<SubjectDataset> {
        let traits = synth.traits(id);
        let mut records = Vec::with_capacity(synth.epochs_per_subject(id));
        for i in 0..synth.epochs_per_subject(id) {
            let raw = synth.epoch(id, &traits, i)?;
            let p = pre.run(&raw)?;
            alpha.push(AlphaSample { subject_id: id, condition: raw.condition, power: p.alpha_power });
            records.push(EpochRecord::new(id, raw.condition, p.map));
        }
        SubjectDataset::new(id, records)
    };
    let source = config.source_ids().map(&mut subject).collect::<Result<Vec<_>>>()?;
    let target = config.target_ids().map(&mut subject).collect::<Result<Vec<_>>>()?;
    Ok(Corpus { source: TaskSequence::new(source)?, target, alpha })
}
