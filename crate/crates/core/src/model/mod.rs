//! The EffortNet network: convolutional encoder, reconstruction decoder and
//! two-layer sigmoid classifier, plus the three training phases.

mod checkpoint;
mod mask;
mod train;

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Phase};
pub use mask::{mask_input, MaskSpec};
pub use train::{finetune, il_train, ssl_loss, ssl_pretrain, FinetuneOutcome, IlConfig, IlOutcome, SslConfig, SslOutcome, TrainConfig};

use crate::dsp::InputMap;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Bound, ParamSet, Tape, Tensor, Var};

/// One encoder stage: same-padded convolution, ReLU, then max pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub pool: (usize, usize),
}

impl ConvSpec {
    pub fn same(out_channels: usize) -> Self {
        ConvSpec { out_channels, kernel: (3, 5), stride: (1, 1), padding: (1, 2), pool: (1, 2) }
    }

    fn conv_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ho = crate::tensor::window_output_len(h, self.kernel.0, self.stride.0, self.padding.0)?;
        let wo = crate::tensor::window_output_len(w, self.kernel.1, self.stride.1, self.padding.1)?;
        Some((ho, wo))
    }

    fn pooled(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ho = crate::tensor::window_output_len(h, self.pool.0, self.pool.0, 0)?;
        let wo = crate::tensor::window_output_len(w, self.pool.1, self.pool.1, 0)?;
        Some((ho, wo))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_rows: usize,
    pub in_cols: usize,
    pub layers: Vec<ConvSpec>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { in_rows: 16, in_cols: 566, layers: [8, 16, 32, 32].map(ConvSpec::same).to_vec() }
    }
}

/// Spatial sizes around one encoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct StageDims {
    in_c: usize,
    conv: (usize, usize),
    pooled: (usize, usize),
}

impl EncoderConfig {
    fn stages(&self) -> Result<Vec<StageDims>> {
        if self.layers.is_empty() {
            return Err(Error::Invalid("encoder needs at least one layer".into()));
        }
        let (mut c, mut h, mut w) = (1, self.in_rows, self.in_cols);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let bad = || Error::Invalid(format!("encoder layer {i} leaves no output for a {h}x{w} input"));
            if l.out_channels == 0 || l.stride.0 == 0 || l.stride.1 == 0 || l.pool.0 == 0 || l.pool.1 == 0 {
                return Err(bad());
            }
            let conv = l.conv_out(h, w).ok_or_else(bad)?;
            let pooled = l.pooled(conv.0, conv.1).ok_or_else(bad)?;
            out.push(StageDims { in_c: c, conv, pooled });
            (c, h, w) = (l.out_channels, pooled.0, pooled.1);
        }
        Ok(out)
    }

    /// `(channels, rows, cols)` of the encoder output.
    pub fn feature_shape(&self) -> Result<(usize, usize, usize)> {
        let last = *self.stages()?.last().unwrap();
        Ok((self.layers.last().unwrap().out_channels, last.pooled.0, last.pooled.1))
    }

    pub fn feature_len(&self) -> Result<usize> {
        let (c, h, w) = self.feature_shape()?;
        Ok(c * h * w)
    }
}

/// Decoder stages mirror the encoder: upsample back to each stage's
/// pre-pool size, then convolve to that stage's input channel count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderConfig {
    pub stages: Vec<DecoderStage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderStage {
    pub upsample_to: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub padding: (usize, usize),
    pub relu: bool,
}

impl DecoderConfig {
    pub fn mirror(enc: &EncoderConfig) -> Result<Self> {
        let dims = enc.stages()?;
        let n = dims.len();
        let stages = (0..n)
            .rev()
            .map(|i| {
                let l = &enc.layers[i];
                // Restore the stage's input size, which for stride-1 same
                // convolutions equals its conv output size.
                let target = if i == 0 { (enc.in_rows, enc.in_cols) } else { dims[i - 1].pooled };
                DecoderStage {
                    upsample_to: target,
                    in_channels: l.out_channels,
                    out_channels: dims[i].in_c,
                    kernel: l.kernel,
                    padding: (l.kernel.0 / 2, l.kernel.1 / 2),
                    relu: i != 0,
                }
            })
            .collect();
        Ok(DecoderConfig { stages })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierConfig {
    pub hidden: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub classifier: ClassifierConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.feature_len()?;
        if self.classifier.hidden == 0 {
            return Err(Error::Invalid("classifier hidden width must be positive".into()));
        }
        Ok(())
    }

    /// Canonical `key=value` text, one key per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let e = &self.encoder;
        let _ = writeln!(s, "input_rows={}", e.in_rows);
        let _ = writeln!(s, "input_cols={}", e.in_cols);
        for (i, l) in e.layers.iter().enumerate() {
            let _ = writeln!(
                s,
                "conv.{i}={}:{}x{}:{}x{}:{}x{}:{}x{}",
                l.out_channels, l.kernel.0, l.kernel.1, l.stride.0, l.stride.1, l.padding.0, l.padding.1, l.pool.0, l.pool.1
            );
        }
        let _ = writeln!(s, "dense_hidden={}", self.classifier.hidden);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("model config: {m}"));
        let mut rows = None;
        let mut cols = None;
        let mut hidden = None;
        let mut layers: Vec<(usize, ConvSpec)> = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("`{line}` is not key=value")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("`{v}` is not a count")));
            let pair = |v: &str| -> Result<(usize, usize)> {
                let (a, b) = v.split_once('x').ok_or_else(|| bad(format!("`{v}` is not AxB")))?;
                Ok((num(a)?, num(b)?))
            };
            match k {
                "input_rows" => rows = Some(num(v)?),
                "input_cols" => cols = Some(num(v)?),
                "dense_hidden" => hidden = Some(num(v)?),
                _ if k.starts_with("conv.") => {
                    let idx = num(&k[5..])?;
                    let parts: Vec<&str> = v.split(':').collect();
                    if parts.len() != 5 {
                        return Err(bad(format!("`{v}` needs out:kernel:stride:padding:pool")));
                    }
                    let spec = ConvSpec {
                        out_channels: num(parts[0])?,
                        kernel: pair(parts[1])?,
                        stride: pair(parts[2])?,
                        padding: pair(parts[3])?,
                        pool: pair(parts[4])?,
                    };
                    layers.push((idx, spec));
                }
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
        }
        layers.sort_by_key(|(i, _)| *i);
        if layers.iter().enumerate().any(|(i, (j, _))| i != *j) {
            return Err(bad("conv layers must be numbered 0..n".into()));
        }
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                in_rows: rows.ok_or_else(|| bad("missing input_rows".into()))?,
                in_cols: cols.ok_or_else(|| bad("missing input_cols".into()))?,
                layers: layers.into_iter().map(|(_, l)| l).collect(),
            },
            classifier: ClassifierConfig { hidden: hidden.ok_or_else(|| bad("missing dense_hidden".into()))? },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn uniform_tensor(rng: &mut impl Rng, shape: &[usize], bound: f32) -> Tensor {
    let n = shape.iter().product();
    let dist = Uniform::new_inclusive(-bound, bound).unwrap();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape and data agree")
}

fn he_bound(fan_in: usize) -> f32 {
    (6.0 / fan_in as f32).sqrt()
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out) as f32).sqrt()
}

pub fn init_encoder(cfg: &EncoderConfig, seed: u64) -> Result<ParamSet> {
    let dims = cfg.stages()?;
    let mut rng = seed::rng(seed);
    let mut p = ParamSet::new();
    for (i, (l, d)) in cfg.layers.iter().zip(&dims).enumerate() {
        let fan_in = d.in_c * l.kernel.0 * l.kernel.1;
        p.insert(format!("enc.{i}.w"), uniform_tensor(&mut rng, &[l.out_channels, d.in_c, l.kernel.0, l.kernel.1], he_bound(fan_in)))?;
        p.insert(format!("enc.{i}.b"), Tensor::zeros(&[l.out_channels]))?;
    }
    Ok(p)
}

pub fn init_decoder(cfg: &DecoderConfig, seed: u64) -> Result<ParamSet> {
    let mut rng = seed::rng(seed);
    let mut p = ParamSet::new();
    for (i, s) in cfg.stages.iter().enumerate() {
        let fan_in = s.in_channels * s.kernel.0 * s.kernel.1;
        let bound = if s.relu { he_bound(fan_in) } else { glorot_bound(fan_in, s.out_channels * s.kernel.0 * s.kernel.1) };
        p.insert(format!("dec.{i}.w"), uniform_tensor(&mut rng, &[s.out_channels, s.in_channels, s.kernel.0, s.kernel.1], bound))?;
        p.insert(format!("dec.{i}.b"), Tensor::zeros(&[s.out_channels]))?;
    }
    Ok(p)
}

pub fn init_classifier(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    let fan_in = cfg.encoder.feature_len()?;
    let h = cfg.classifier.hidden;
    let mut rng = seed::rng(seed);
    let mut p = ParamSet::new();
    p.insert("cls.0.w", uniform_tensor(&mut rng, &[h, fan_in], he_bound(fan_in)))?;
    p.insert("cls.0.b", Tensor::zeros(&[h]))?;
    p.insert("cls.1.w", uniform_tensor(&mut rng, &[1, h], glorot_bound(h, 1)))?;
    p.insert("cls.1.b", Tensor::zeros(&[1]))?;
    Ok(p)
}

/// Stacks maps into a `[B, 1, rows, cols]` batch.
pub fn batch_tensor(maps: &[&InputMap], enc: &EncoderConfig) -> Result<Tensor> {
    let mut data = Vec::with_capacity(maps.len() * enc.in_rows * enc.in_cols);
    for m in maps {
        if (m.rows, m.cols) != (enc.in_rows, enc.in_cols) {
            return Err(Error::shape(
                "predict",
                format!("input map is {}x{}, encoder expects {}x{}", m.rows, m.cols, enc.in_rows, enc.in_cols),
            ));
        }
        data.extend_from_slice(&m.data);
    }
    Tensor::new(&[maps.len(), 1, enc.in_rows, enc.in_cols], data)
}

pub(crate) fn encode(tape: &mut Tape, params: &Bound, cfg: &EncoderConfig, x: Var) -> Result<Var> {
    let mut h = x;
    for (i, l) in cfg.layers.iter().enumerate() {
        let w = params.var(&format!("enc.{i}.w"))?;
        let b = params.var(&format!("enc.{i}.b"))?;
        h = tape.conv2d(h, w, b, l.stride, l.padding)?;
        h = tape.relu(h)?;
        h = tape.max_pool2d(h, l.pool, l.pool)?;
    }
    Ok(h)
}

pub(crate) fn decode(tape: &mut Tape, params: &Bound, cfg: &DecoderConfig, z: Var) -> Result<Var> {
    let mut h = z;
    for (i, s) in cfg.stages.iter().enumerate() {
        h = tape.upsample_nearest(h, s.upsample_to.0, s.upsample_to.1)?;
        let w = params.var(&format!("dec.{i}.w"))?;
        let b = params.var(&format!("dec.{i}.b"))?;
        h = tape.conv2d(h, w, b, (1, 1), s.padding)?;
        if s.relu {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Probabilities of high effort, shape `[B]`.
pub(crate) fn classify(tape: &mut Tape, params: &Bound, features: Var) -> Result<Var> {
    let batch = tape.shape(features)[0];
    let numel = tape.value(features).len();
    let flat = tape.reshape(features, &[batch, numel / batch])?;
    let h = tape.dense(flat, params.var("cls.0.w")?, params.var("cls.0.b")?)?;
    let h = tape.relu(h)?;
    let logit = tape.dense(h, params.var("cls.1.w")?, params.var("cls.1.b")?)?;
    let p = tape.sigmoid(logit)?;
    tape.reshape(p, &[batch])
}

/// Encoder and classifier weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EffortNet {
    pub config: ModelConfig,
    pub encoder: ParamSet,
    pub classifier: ParamSet,
}

impl EffortNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = init_encoder(&config.encoder, seed::derive_str(seed, "encoder"))?;
        let classifier = init_classifier(&config, seed::derive_str(seed, "classifier"))?;
        Ok(EffortNet { config, encoder, classifier })
    }

    /// Pretrained encoder with a freshly initialised classifier.
    pub fn from_encoder(config: ModelConfig, encoder: ParamSet, seed: u64) -> Result<Self> {
        config.validate()?;
        let fresh = init_encoder(&config.encoder, 0)?;
        check_compatible(&fresh, &encoder)?;
        let classifier = init_classifier(&config, seed::derive_str(seed, "classifier"))?;
        Ok(EffortNet { config, encoder, classifier })
    }

    pub fn bitwise_eq(&self, other: &EffortNet) -> bool {
        self.config == other.config && self.encoder.bitwise_eq(&other.encoder) && self.classifier.bitwise_eq(&other.classifier)
    }

    /// Records the forward pass on `tape`; `trainable` selects parameter
    /// leaves versus constants.
    pub(crate) fn forward(&self, tape: &mut Tape, maps: &[&InputMap], trainable: bool) -> Result<(Var, Bound)> {
        let mut all = self.encoder.clone();
        all.extend(self.classifier.clone())?;
        let bound = if trainable { all.bind(tape) } else { all.bind_frozen(tape) };
        let x = tape.input(batch_tensor(maps, &self.config.encoder)?);
        let z = encode(tape, &bound, &self.config.encoder, x)?;
        Ok((classify(tape, &bound, z)?, bound))
    }

    pub fn predict_batch(&self, maps: &[&InputMap]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(maps.len());
        for chunk in maps.chunks(64) {
            let mut tape = Tape::new();
            let (p, _) = self.forward(&mut tape, chunk, false)?;
            out.extend_from_slice(tape.value(p));
        }
        Ok(out)
    }

    /// Probability that the epoch reflects high listening effort.
    pub fn predict_prob(&self, map: &InputMap) -> Result<f32> {
        Ok(self.predict_batch(&[map])?[0])
    }
}

/// High effort iff `p >= 0.5`.
pub fn is_high_effort(p: f32) -> bool {
    p >= 0.5
}

fn check_compatible(want: &ParamSet, got: &ParamSet) -> Result<()> {
    if want.len() != got.len() {
        return Err(Error::shape("params", format!("expected {} tensors, got {}", want.len(), got.len())));
    }
    for (name, t) in want.iter() {
        let g = got.get(name)?;
        if g.shape() != t.shape() {
            return Err(Error::shape("params", format!("`{name}` is {:?}, config implies {:?}", g.shape(), t.shape())));
        }
    }
    Ok(())
}
