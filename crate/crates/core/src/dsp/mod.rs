//! Alpha-band preprocessing: band-pass, decimation, z-scoring and the
//! wavelet input map.

mod dwt;
mod filter;

use std::fmt;

pub use dwt::{band_lengths, dwt, idwt, wavedec, waverec, Pyramid, Wavelet, DB4_DEC_LO};
pub use filter::{design_cheby2_bandpass, Biquad, FilterSpec, Sos};

use crate::error::{Error, Result};

pub const CHANNELS: [&str; 16] =
    ["Fz", "FCz", "FC1", "FC2", "Cz", "C1", "C2", "CPz", "CP1", "CP2", "Pz", "P1", "P2", "POz", "PO3", "PO4"];
pub const N_CHANNELS: usize = CHANNELS.len();
pub const EPOCH_SECONDS: f64 = 2.691;

/// Listening condition of a stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Clean,
    Noisy,
    Mmse,
    Transformer,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Clean, Condition::Noisy, Condition::Mmse, Condition::Transformer];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL.get(code as usize).copied().ok_or_else(|| Error::Format(format!("unknown condition code {code}")))
    }

    /// Supervised label: 0 for clean (low effort), 1 for noisy (high effort).
    pub fn label(self) -> Option<u8> {
        match self {
            Condition::Clean => Some(0),
            Condition::Noisy => Some(1),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Noisy => "noisy",
            Condition::Mmse => "mmse",
            Condition::Transformer => "transformer",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown condition `{s}`")))
    }
}

/// Samples in one epoch at `fs` Hz.
pub fn epoch_samples(fs: f64) -> usize {
    (fs * EPOCH_SECONDS).round() as usize
}

/// One multichannel epoch, channels × samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEpoch {
    pub subject_id: u16,
    pub condition: Condition,
    pub fs: f64,
    pub n_channels: usize,
    pub data: Vec<f64>,
}

impl RawEpoch {
    pub fn new(subject_id: u16, condition: Condition, fs: f64, n_channels: usize, data: Vec<f64>) -> Result<Self> {
        if n_channels == 0 || data.len() % n_channels != 0 {
            return Err(Error::shape("raw_epoch", format!("{} values over {n_channels} channels", data.len())));
        }
        if !(fs > 0.0) {
            return Err(Error::Invalid(format!("sampling rate {fs}")));
        }
        Ok(RawEpoch { subject_id, condition, fs, n_channels, data })
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n_channels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.n_samples();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_samples().max(1))
    }

    fn map_channels(&self, fs: f64, mut f: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>) -> Result<RawEpoch> {
        let mut data = Vec::with_capacity(self.data.len());
        for (c, ch) in self.channels().enumerate() {
            data.extend(f(c, ch)?);
        }
        RawEpoch::new(self.subject_id, self.condition, fs, self.n_channels, data)
    }
}

/// Padding used for zero-phase filtering: 0.3 s of signal.
pub fn filtfilt_pad(fs: f64) -> usize {
    (0.3 * fs).round() as usize
}

pub fn filter_epoch(sos: &Sos, epoch: &RawEpoch) -> Result<RawEpoch> {
    if (sos.fs - epoch.fs).abs() > 1e-9 {
        return Err(Error::Invalid(format!("filter designed for {} Hz, epoch at {} Hz", sos.fs, epoch.fs)));
    }
    let pad = filtfilt_pad(epoch.fs);
    epoch.map_channels(epoch.fs, |_, ch| Ok(sos.filtfilt(ch, pad)))
}

/// Keeps samples `0, k, 2k, ...` where `k = fs / target_fs`.
pub fn downsample(epoch: &RawEpoch, target_fs: f64) -> Result<RawEpoch> {
    let ratio = epoch.fs / target_fs;
    let factor = ratio.round();
    if !(factor >= 1.0) || (ratio - factor).abs() > 1e-9 {
        return Err(Error::IndivisibleRate { fs: epoch.fs, target: target_fs });
    }
    let k = factor as usize;
    epoch.map_channels(target_fs, |_, ch| Ok(ch.iter().step_by(k).copied().collect()))
}

/// Per-channel zero mean and unit population variance.
pub fn znormalize(epoch: &RawEpoch) -> Result<RawEpoch> {
    epoch.map_channels(epoch.fs, |c, ch| {
        let n = ch.len() as f64;
        let mean = ch.iter().sum::<f64>() / n;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if !(var > 1e-12) {
            return Err(Error::DegenerateChannel { channel: c, variance: var });
        }
        let sd = var.sqrt();
        Ok(ch.iter().map(|v| (v - mean) / sd).collect())
    })
}

/// Mean over channels of the mean squared amplitude.
pub fn alpha_power(epoch: &RawEpoch) -> f64 {
    let n = epoch.n_samples();
    if n == 0 {
        return 0.0;
    }
    epoch.channels().map(|ch| ch.iter().map(|v| v * v).sum::<f64>() / n as f64).sum::<f64>() / epoch.n_channels as f64
}

/// Channels × wavelet coefficients. Each row is `[cA_L, cD_L, ..., cD_1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    /// Start offset of each sub-band within a row, plus a final `cols`.
    pub band_offsets: Vec<usize>,
}

impl InputMap {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, band_offsets: Vec<usize>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("input_map", format!("{} values for {rows}x{cols}", data.len())));
        }
        if band_offsets.first() != Some(&0) || band_offsets.last() != Some(&cols) || band_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::shape("input_map", format!("band offsets {band_offsets:?} for {cols} columns")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "input_map" });
        }
        Ok(InputMap { rows, cols, data, band_offsets })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn band_lengths(&self) -> Vec<usize> {
        self.band_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

pub fn build_input_map(epoch: &RawEpoch, wavelet: &Wavelet, levels: usize) -> Result<InputMap> {
    let mut data = Vec::new();
    let mut offsets = None;
    for ch in epoch.channels() {
        let p = wavedec(ch, wavelet, levels)?;
        offsets.get_or_insert_with(|| {
            let mut acc = vec![0];
            for b in &p.bands {
                acc.push(acc.last().unwrap() + b.len());
            }
            acc
        });
        data.extend(p.bands.iter().flatten().map(|&v| v as f32));
    }
    let offsets = offsets.ok_or_else(|| Error::Invalid("epoch without channels".into()))?;
    InputMap::new(epoch.n_channels, *offsets.last().unwrap(), data, offsets)
}

/// Parameters of the full preprocessing chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub fs: f64,
    pub target_fs: f64,
    pub filter: FilterSpec,
    pub wavelet_levels: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { fs: 1000.0, target_fs: 200.0, filter: FilterSpec::default(), wavelet_levels: 4 }
    }
}

/// Designed filter and wavelet, reusable across epochs.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
    sos: Sos,
    wavelet: Wavelet,
}

/// Result of preprocessing one epoch.
#[derive(Debug, Clone)]
pub struct Processed {
    pub map: InputMap,
    pub alpha_power: f64,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> Result<Self> {
        let sos = design_cheby2_bandpass(&config.filter, config.fs)?;
        Ok(Preprocessor { config, sos, wavelet: Wavelet::db4() })
    }

    pub fn sos(&self) -> &Sos {
        &self.sos
    }

    pub fn input_cols(&self) -> usize {
        let n = epoch_samples(self.config.fs).div_ceil((self.config.fs / self.config.target_fs).round() as usize);
        band_lengths(n, self.wavelet.len(), self.config.wavelet_levels).iter().sum()
    }

    /// Band-pass, then alpha power, decimation, z-scoring and the wavelet map.
    pub fn run(&self, epoch: &RawEpoch) -> Result<Processed> {
        let filtered = filter_epoch(&self.sos, epoch)?;
        let alpha_power = alpha_power(&filtered);
        let normalized = znormalize(&downsample(&filtered, self.config.target_fs)?)?;
        let map = build_input_map(&normalized, &self.wavelet, self.config.wavelet_levels)?;
        Ok(Processed { map, alpha_power })
    }
}
