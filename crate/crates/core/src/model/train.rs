use rand::seq::SliceRandom;

use super::{batch_tensor, classify, decode, encode, init_decoder, init_encoder, DecoderConfig, EffortNet, MaskSpec, ModelConfig};
use crate::dataset::{EpochRecord, ReplayBuffer, TaskSequence};
use crate::dsp::InputMap;
use crate::error::{Error, Result};
use crate::model::mask_input;
use crate::seed;
use crate::tensor::{AdamConfig, AdamState, ParamSet, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig { epochs, batch_size: 16, lr: 1e-4, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self, params: &ParamSet) -> Result<AdamState> {
        AdamState::new(params, AdamConfig::with_lr(self.lr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SslConfig {
    pub train: TrainConfig,
    pub mask: MaskSpec,
    /// Score only masked cells instead of the whole map.
    pub masked_only: bool,
}

impl SslConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        SslConfig { train: TrainConfig::new(epochs, seed), mask: MaskSpec::default(), masked_only: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlConfig {
    pub train: TrainConfig,
    pub lambda: f32,
    pub replay_capacity: usize,
}

impl IlConfig {
    pub fn new(epochs_per_task: usize, seed: u64) -> Self {
        IlConfig { train: TrainConfig::new(epochs_per_task, seed), lambda: 1.0, replay_capacity: 10 }
    }
}

fn diverged(seed: u64, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { seed, step },
        other => other,
    }
}

fn shuffled(n: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

#[derive(Debug, Clone)]
pub struct SslOutcome {
    pub encoder: ParamSet,
    pub decoder: ParamSet,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn masked_batch(maps: &[&InputMap], spec: &MaskSpec, seeds: &[u64], cfg: &ModelConfig) -> Result<(Tensor, Vec<bool>)> {
    let mut masked = Vec::with_capacity(maps.len());
    let mut mask = Vec::new();
    for (m, &s) in maps.iter().zip(seeds) {
        let (x, mk) = mask_input(m, &spec.with_seed(s))?;
        masked.push(x);
        mask.extend(mk);
    }
    let refs: Vec<&InputMap> = masked.iter().collect();
    Ok((batch_tensor(&refs, &cfg.encoder)?, mask))
}

/// Reconstruction loss of one batch recorded on `tape`.
fn ssl_batch_loss(
    tape: &mut Tape,
    params: &ParamSet,
    trainable: bool,
    cfg: &ModelConfig,
    dcfg: &DecoderConfig,
    maps: &[&InputMap],
    spec: &MaskSpec,
    seeds: &[u64],
    masked_only: bool,
) -> Result<(crate::tensor::Var, crate::tensor::Bound)> {
    let bound = if trainable { params.bind(tape) } else { params.bind_frozen(tape) };
    let (xt, mask) = masked_batch(maps, spec, seeds, cfg)?;
    let x = tape.input(xt);
    let target = tape.input(batch_tensor(maps, &cfg.encoder)?);
    let z = encode(tape, &bound, &cfg.encoder, x)?;
    let y = decode(tape, &bound, dcfg, z)?;
    let loss = if masked_only && mask.iter().any(|&b| b) { tape.masked_mse_loss(y, target, mask)? } else { tape.mse_loss(y, target)? };
    Ok((loss, bound))
}

/// Masked-reconstruction pretraining of encoder and decoder. Returns both;
/// only the encoder is carried into later phases.
pub fn ssl_pretrain(maps: &[&InputMap], model: &ModelConfig, cfg: &SslConfig) -> Result<SslOutcome> {
    model.validate()?;
    cfg.train.validate()?;
    if maps.is_empty() {
        return Err(Error::Invalid("self-supervised pretraining needs at least one map".into()));
    }
    cfg.mask.validate(model.encoder.in_cols)?;
    let seed0 = cfg.train.seed;
    let dcfg = DecoderConfig::mirror(&model.encoder)?;
    let mut params = init_encoder(&model.encoder, seed::derive_str(seed0, "encoder"))?;
    params.extend(init_decoder(&dcfg, seed::derive_str(seed0, "decoder"))?)?;
    let mut adam = cfg.train.adam(&params)?;
    let mut order_rng = seed::rng(seed::derive_str(seed0, "ssl-order"));
    let mask_root = seed::derive_str(seed0, "ssl-mask");
    let mut epoch_losses = Vec::with_capacity(cfg.train.epochs);
    let mut step = 0;
    for epoch in 0..cfg.train.epochs {
        let epoch_seed = seed::derive(mask_root, epoch as u64);
        let order = shuffled(maps.len(), &mut order_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.train.batch_size) {
            let batch: Vec<&InputMap> = chunk.iter().map(|&i| maps[i]).collect();
            let seeds: Vec<u64> = chunk.iter().map(|&i| seed::derive(epoch_seed, i as u64)).collect();
            let mut tape = Tape::new();
            let (loss, bound) =
                ssl_batch_loss(&mut tape, &params, true, model, &dcfg, &batch, &cfg.mask, &seeds, cfg.masked_only)
                    .map_err(diverged(seed0, step))?;
            tape.backward(loss)?;
            bound.store_grads(&tape, &mut params)?;
            adam.step(&mut params)?;
            total += tape.scalar(loss) as f64;
            batches += 1;
            step += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(SslOutcome { encoder: params.split_prefix("enc."), decoder: params.split_prefix("dec."), epoch_losses })
}

/// Mean reconstruction loss over `maps` with masks derived from `spec.seed`.
pub fn ssl_loss(encoder: &ParamSet, decoder: &ParamSet, model: &ModelConfig, maps: &[&InputMap], spec: &MaskSpec, masked_only: bool) -> Result<f64> {
    let dcfg = DecoderConfig::mirror(&model.encoder)?;
    let mut params = encoder.clone();
    params.extend(decoder.clone())?;
    let mut total = 0.0;
    for (ci, chunk) in maps.chunks(32).enumerate() {
        let seeds: Vec<u64> = (0..chunk.len()).map(|i| seed::derive(spec.seed, (ci * 32 + i) as u64)).collect();
        let mut tape = Tape::new();
        let (loss, _) = ssl_batch_loss(&mut tape, &params, false, model, &dcfg, chunk, spec, &seeds, masked_only)?;
        total += tape.scalar(loss) as f64 * chunk.len() as f64;
    }
    Ok(total / maps.len() as f64)
}

fn merged(net: &EffortNet) -> Result<ParamSet> {
    let mut p = net.encoder.clone();
    p.extend(net.classifier.clone())?;
    Ok(p)
}

fn unmerge(config: &ModelConfig, params: &ParamSet) -> EffortNet {
    EffortNet { config: config.clone(), encoder: params.split_prefix("enc."), classifier: params.split_prefix("cls.") }
}

type Labelled<'a> = (&'a InputMap, f32);

/// One optimiser step on `BCE(current) + lambda * BCE(replay)`.
fn supervised_step(
    params: &mut ParamSet,
    adam: &mut AdamState,
    config: &ModelConfig,
    current: &[Labelled],
    replay: Option<(&[Labelled], f32)>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let bce = |tape: &mut Tape, part: &[Labelled]| -> Result<crate::tensor::Var> {
        let maps: Vec<&InputMap> = part.iter().map(|(m, _)| *m).collect();
        let labels: Vec<f32> = part.iter().map(|(_, y)| *y).collect();
        let x = tape.input(batch_tensor(&maps, &config.encoder)?);
        let z = encode(tape, &bound, &config.encoder, x)?;
        let p = classify(tape, &bound, z)?;
        tape.bce_loss(p, &labels)
    };
    let mut loss = bce(&mut tape, current)?;
    if let Some((rep, lambda)) = replay {
        let r = bce(&mut tape, rep)?;
        let r = tape.scale(r, lambda)?;
        loss = tape.add(loss, r)?;
    }
    tape.backward(loss)?;
    bound.store_grads(&tape, params)?;
    adam.step(params)?;
    Ok(tape.scalar(loss) as f64)
}

fn labelled(records: &[EpochRecord]) -> Result<Vec<Labelled<'_>>> {
    records.iter().map(|r| Ok((&r.map, r.require_label()? as f32))).collect()
}

#[derive(Debug, Clone)]
pub struct IlOutcome {
    pub model: EffortNet,
    /// Mean minibatch loss of each task.
    pub task_losses: Vec<f64>,
}

/// Sequential per-subject training with experience replay. `init_encoder`
/// seeds the encoder (a random one is drawn when absent); the classifier
/// always starts fresh.
pub fn il_train(tasks: &TaskSequence, model: &ModelConfig, init_encoder: Option<&ParamSet>, cfg: &IlConfig) -> Result<IlOutcome> {
    cfg.train.validate()?;
    let seed0 = cfg.train.seed;
    let net = match init_encoder {
        Some(enc) => EffortNet::from_encoder(model.clone(), enc.clone(), seed0)?,
        None => EffortNet::new(model.clone(), seed0)?,
    };
    let mut params = merged(&net)?;
    let mut adam = cfg.train.adam(&params)?;
    let mut replay = ReplayBuffer::new(cfg.replay_capacity, seed::derive_str(seed0, "replay"));
    let mut order_rng = seed::rng(seed::derive_str(seed0, "il-order"));
    let mut task_losses = Vec::with_capacity(tasks.len());
    let mut step = 0;
    for task in &tasks.tasks {
        let data = labelled(&task.records)?;
        if data.is_empty() {
            return Err(Error::Invalid(format!("task of subject {} has no epochs", task.subject_id)));
        }
        let (mut total, mut batches) = (0.0, 0);
        for _ in 0..cfg.train.epochs {
            let order = shuffled(data.len(), &mut order_rng);
            for chunk in order.chunks(cfg.train.batch_size) {
                let current: Vec<Labelled> = chunk.iter().map(|&i| data[i]).collect();
                let rep: Option<Vec<Labelled>> = if cfg.lambda != 0.0 && !replay.is_empty() {
                    Some(replay.sample(current.len())?.into_iter().map(|s| (&s.map, s.label as f32)).collect())
                } else {
                    None
                };
                let loss = supervised_step(&mut params, &mut adam, model, &current, rep.as_deref().map(|r| (r, cfg.lambda)))
                    .map_err(diverged(seed0, step))?;
                total += loss;
                batches += 1;
                step += 1;
            }
        }
        task_losses.push(if batches > 0 { total / batches as f64 } else { f64::NAN });
        replay.add_task(&task.records)?;
    }
    Ok(IlOutcome { model: unmerge(model, &params), task_losses })
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: EffortNet,
    /// Training-set loss before the first epoch and after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean BCE of `net` over labelled records.
pub fn bce_on(net: &EffortNet, records: &[Labelled]) -> Result<f64> {
    let maps: Vec<&InputMap> = records.iter().map(|(m, _)| *m).collect();
    let probs = net.predict_batch(&maps)?;
    let eps = 1e-7f64;
    let total: f64 = probs
        .iter()
        .zip(records)
        .map(|(&p, (_, y))| {
            let p = (p as f64).clamp(eps, 1.0 - eps);
            let y = *y as f64;
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / records.len() as f64)
}

/// Supervised adaptation of every layer on a target subject's training
/// split. An empty split returns `init` unchanged.
pub fn finetune(train: &[EpochRecord], init: &EffortNet, cfg: &TrainConfig) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Ok(FinetuneOutcome { model: init.clone(), epoch_losses: Vec::new() });
    }
    let data = labelled(train)?;
    let mut params = merged(init)?;
    let mut adam = cfg.adam(&params)?;
    let mut order_rng = seed::rng(seed::derive_str(cfg.seed, "ft-order"));
    let mut epoch_losses = vec![bce_on(init, &data)?];
    let mut step = 0;
    for _ in 0..cfg.epochs {
        let order = shuffled(data.len(), &mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Labelled> = chunk.iter().map(|&i| data[i]).collect();
            supervised_step(&mut params, &mut adam, &init.config, &batch, None).map_err(diverged(cfg.seed, step))?;
            step += 1;
        }
        epoch_losses.push(bce_on(&unmerge(&init.config, &params), &data)?);
    }
    Ok(FinetuneOutcome { model: unmerge(&init.config, &params), epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SubjectDataset;
    use crate::dsp::Condition;
    use crate::model::tests::{tiny_config, tiny_map};

    /// Two separable classes: label 1 maps carry a constant offset.
    fn subject(id: u16, n: usize, offset: f32) -> SubjectDataset {
        let mut recs = Vec::new();
        for i in 0..n {
            for c in [Condition::Clean, Condition::Noisy] {
                let mut m = tiny_map(id as u64 * 1000 + i as u64 * 2 + c.code() as u64);
                if c == Condition::Noisy {
                    m.data.iter_mut().for_each(|v| *v += offset);
                }
                recs.push(EpochRecord::new(id, c, m));
            }
        }
        SubjectDataset::new(id, recs).unwrap()
    }

    #[test]
    fn ssl_reduces_reconstruction_loss_and_is_deterministic() {
        let cfg = tiny_config();
        let maps: Vec<InputMap> = (0..24).map(tiny_map).collect();
        let refs: Vec<&InputMap> = maps.iter().collect();
        let mut ssl = SslConfig::new(15, 3);
        ssl.train.lr = 1e-2;
        let a = ssl_pretrain(&refs[..20], &cfg, &ssl).unwrap();
        let b = ssl_pretrain(&refs[..20], &cfg, &ssl).unwrap();
        assert!(a.encoder.bitwise_eq(&b.encoder));
        let held = &refs[20..];
        let spec = ssl.mask.with_seed(99);
        let dcfg = DecoderConfig::mirror(&cfg.encoder).unwrap();
        let init_enc = init_encoder(&cfg.encoder, seed::derive_str(3, "encoder")).unwrap();
        let init_dec = init_decoder(&dcfg, seed::derive_str(3, "decoder")).unwrap();
        let before = ssl_loss(&init_enc, &init_dec, &cfg, held, &spec, false).unwrap();
        let after = ssl_loss(&a.encoder, &a.decoder, &cfg, held, &spec, false).unwrap();
        assert!(after < before, "{after} vs {before}");
        assert!(a.encoder.names().all(|n| n.starts_with("enc.")));
    }

    #[test]
    fn replay_free_first_task_and_lambda_zero() {
        let cfg = tiny_config();
        let tasks = TaskSequence::new(vec![subject(1, 4, 1.0)]).unwrap();
        let with = il_train(&tasks, &cfg, None, &IlConfig::new(2, 8)).unwrap();
        let without = il_train(&tasks, &cfg, None, &IlConfig { lambda: 0.0, ..IlConfig::new(2, 8) }).unwrap();
        // A single task never draws from the buffer, so lambda is irrelevant.
        assert!(with.model.bitwise_eq(&without.model));
        assert_eq!(with.task_losses, without.task_losses);
    }

    #[test]
    fn il_starts_from_given_encoder() {
        let cfg = tiny_config();
        let enc = init_encoder(&cfg.encoder, 77).unwrap();
        let tasks = TaskSequence::new(vec![subject(1, 2, 1.0), subject(2, 2, 1.0)]).unwrap();
        let out = il_train(&tasks, &cfg, Some(&enc), &IlConfig::new(0, 1)).unwrap();
        assert!(out.model.encoder.bitwise_eq(&enc));
    }

    #[test]
    fn il_rejects_unlabelled_records() {
        let cfg = tiny_config();
        let recs = vec![EpochRecord::new(1, Condition::Mmse, tiny_map(0))];
        let tasks = TaskSequence::new(vec![SubjectDataset::new(1, recs).unwrap()]).unwrap();
        assert!(il_train(&tasks, &cfg, None, &IlConfig::new(1, 0)).is_err());
    }

    #[test]
    fn finetune_empty_split_is_identity_and_training_lowers_loss() {
        let cfg = tiny_config();
        let net = EffortNet::new(cfg, 4).unwrap();
        let same = finetune(&[], &net, &TrainConfig::new(5, 1)).unwrap();
        assert!(same.model.bitwise_eq(&net));
        let data = subject(3, 8, 1.5).records;
        let mut tc = TrainConfig::new(20, 2);
        tc.lr = 3e-3;
        let out = finetune(&data, &net, &tc).unwrap();
        assert_eq!(out.epoch_losses.len(), 21);
        assert!(out.epoch_losses[20] < out.epoch_losses[0]);
        let again = finetune(&data, &net, &tc).unwrap();
        assert!(out.model.bitwise_eq(&again.model));
    }
}
