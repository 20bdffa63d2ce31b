//! Adam training loop, checkpoints, and evaluation.
//!
//! Training is single-threaded and a pure function of (data, configs, seed):
//! items are processed in a seeded order, gradients are summed in that
//! order, and the generator state travels with every checkpoint so a resumed
//! run continues the exact same trajectory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dataset::{Manifest, Utterance};
use crate::error::{Error, Result};
use crate::model::{denoise, fd_analysis, forward, init_params, ModelConfig, ModelParams, ParamVars};
use crate::objective::{fdl_loss, sisnr_db, snr_db, tdl_loss, LossKind, LossSpec};
use crate::signal::Waveform;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DNTCKPT1";
pub const CHECKPOINT_VERSION: &str = "1";

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_clip() -> f64 {
    5.0
}
fn default_batch() -> usize {
    4
}
fn default_segment() -> usize {
    64_000
}
fn default_patience() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_clip")]
    pub grad_clip_norm: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Training crop length in samples; shorter items are zero-padded.
    #[serde(default = "default_segment")]
    pub segment_len: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    pub loss: LossSpec,
    #[serde(default = "default_patience")]
    pub lr_halving_patience: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, loss: LossSpec) -> Self {
        Self {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            grad_clip_norm: default_clip(),
            batch_size: default_batch(),
            segment_len: default_segment(),
            epochs,
            seed: 0,
            loss,
            lr_halving_patience: default_patience(),
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let positive = [self.lr, self.adam_eps, self.grad_clip_norm];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("lr, adam_eps and grad_clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.lr_halving_patience == 0 {
            return Err(Error::InvalidArgument("batch_size and lr_halving_patience must be positive".into()));
        }
        if self.segment_len < model.min_input_len() {
            return Err(Error::InvalidArgument(format!(
                "segment_len {} is shorter than the model minimum {}",
                self.segment_len,
                model.min_input_len()
            )));
        }
        if self.loss.kind == LossKind::Fdl && !model.is_frequency_domain() {
            return Err(Error::InvalidArgument("the frequency-domain loss needs an STFT-domain model".into()));
        }
        self.loss.validate(model.num_outputs())
    }
}

/// Adam moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = ModelParams::from_map(
            params
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        );
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm(grads: &ModelParams) -> f64 {
    grads
        .iter()
        .flat_map(|(_, t)| t.data())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Clips `grads` to `cfg.grad_clip_norm`, then applies one bias-corrected
/// Adam update with learning rate `lr`. Returns the pre-clip norm.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, cfg: &TrainConfig, lr: f64) -> Result<f64> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient for parameter `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::shape("adam_step", format!("`{name}`: {:?} vs {:?}", g.shape(), p.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    let norm = global_norm(grads);
    let clip = if norm > cfg.grad_clip_norm {
        cfg.grad_clip_norm / norm
    } else {
        1.0
    };
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked above").data();
        let m = state.m.iter_mut().find(|(k, _)| *k == name).expect("moment").1.data_mut();
        let v = state.v.iter_mut().find(|(k, _)| *k == name).expect("moment").1.data_mut();
        for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = gv * clip;
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * g;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * g * g;
            *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(norm)
}

/// Serialisable position of the training generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold a u128.
    pub word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::CheckpointFormat("malformed generator state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

/// Complete training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub best_valid_loss: Option<f64>,
    pub bad_epochs: usize,
    pub rng: RngState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
    /// In f64 elements from the start of the payload.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    version: String,
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    lr: f64,
    best_valid_loss: Option<f64>,
    bad_epochs: usize,
    adam_step: u64,
    rng: RngState,
    tensors: Vec<TensorEntry>,
}

const GROUPS: [&str; 3] = ["param", "adam_m", "adam_v"];

impl Checkpoint {
    fn groups(&self) -> [&ModelParams; 3] {
        [&self.params, &self.adam.m, &self.adam.v]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (group, set) in GROUPS.iter().zip(self.groups()) {
            for (name, t) in set.iter() {
                tensors.push(TensorEntry {
                    group: (*group).into(),
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                });
                offset += t.numel();
            }
        }
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION.into(),
            model: self.model.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            lr: self.lr,
            best_valid_loss: self.best_valid_loss,
            bad_epochs: self.bad_epochs,
            adam_step: self.adam.step,
            rng: self.rng.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for set in self.groups() {
            for (_, t) in set.iter() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointFormat("bad magic bytes".into()));
        }
        if bytes.len() < 16 {
            return Err(Error::CheckpointTruncated("missing header length".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize
            .checked_add(header_len)
            .ok_or_else(|| Error::CheckpointFormat("header length overflows".into()))?;
        if bytes.len() < payload_start {
            return Err(Error::CheckpointTruncated(format!(
                "header needs {header_len} bytes, file has {}",
                bytes.len() - 16
            )));
        }
        let raw: serde_json::Value = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| Error::CheckpointFormat(format!("header: {e}")))?;
        let version = raw.get("version").and_then(|v| v.as_str()).unwrap_or("<missing>");
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                expected: CHECKPOINT_VERSION.into(),
                found: version.into(),
            });
        }
        let header: CheckpointHeader =
            serde_json::from_value(raw).map_err(|e| Error::CheckpointFormat(format!("header: {e}")))?;
        header
            .model
            .validate()
            .map_err(|e| Error::CheckpointFormat(format!("model config: {e}")))?;
        let payload = &bytes[payload_start..];
        let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if payload.len() < total * 8 {
            return Err(Error::CheckpointTruncated(format!(
                "payload has {} bytes, tensors need {}",
                payload.len(),
                total * 8
            )));
        }
        if payload.len() > total * 8 {
            return Err(Error::CheckpointFormat("trailing bytes after payload".into()));
        }
        let mut sets: [BTreeMap<String, Tensor>; 3] = Default::default();
        for entry in &header.tensors {
            let gi = GROUPS
                .iter()
                .position(|g| *g == entry.group)
                .ok_or_else(|| Error::CheckpointFormat(format!("unknown tensor group `{}`", entry.group)))?;
            let n: usize = entry.shape.iter().product();
            let bytes = payload
                .get(entry.offset * 8..(entry.offset + n) * 8)
                .ok_or_else(|| Error::CheckpointTruncated(format!("tensor `{}` out of range", entry.name)))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(entry.shape.clone(), data)
                .map_err(|e| Error::CheckpointFormat(format!("tensor `{}`: {e}", entry.name)))?;
            sets[gi].insert(entry.name.clone(), t);
        }
        let [p, m, v] = sets.map(ModelParams::from_map);
        for set in [&p, &m, &v] {
            set.check(&header.model)?;
        }
        Ok(Self {
            model: header.model,
            train: header.train,
            params: p,
            adam: AdamState {
                step: header.adam_step,
                m,
                v,
            },
            epoch: header.epoch,
            lr: header.lr,
            best_valid_loss: header.best_valid_loss,
            bad_epochs: header.bad_epochs,
            rng: header.rng,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

/// Loss of `config` on one `(y, x, n)` triple, recorded on `tape`.
pub fn item_loss(
    tape: &mut Tape,
    config: &ModelConfig,
    loss: &LossSpec,
    params: &ParamVars,
    mixture: &[f64],
    speech: &[f64],
    noise: &[f64],
) -> Result<Var> {
    match loss.kind {
        LossKind::Tdl => {
            let out = forward(tape, config, params, mixture, true)?;
            let speech_est = out.speech.expect("decoded");
            tdl_loss(tape, speech, speech_est, Some(noise), out.noise, loss.multitask)
        }
        LossKind::Fdl => {
            let stft = config
                .stft()
                .ok_or_else(|| Error::InvalidArgument("the frequency-domain loss needs an STFT-domain model".into()))?;
            let out = forward(tape, config, params, mixture, false)?;
            let spec = out.mixture_spec.as_ref().expect("fd forward keeps its spectrogram");
            let target = fd_analysis(speech, stft)?;
            let l = fdl_loss(tape, &target, out.masks[0], spec, loss.fdl_raw)?;
            if !loss.multitask {
                return Ok(l);
            }
            let mask = *out
                .masks
                .get(1)
                .ok_or_else(|| Error::InvalidArgument("multitask loss needs a noise head".into()))?;
            let noise_target = fd_analysis(noise, stft)?;
            let ln = fdl_loss(tape, &noise_target, mask, spec, loss.fdl_raw)?;
            tape.add(l, ln)
        }
    }
}

/// One training step's worth of data.
struct Segment<'a> {
    id: &'a str,
    mixture: Vec<f64>,
    speech: Vec<f64>,
    noise: Vec<f64>,
}

fn crop<'a>(u: &'a Utterance, len: usize, rng: &mut ChaCha8Rng) -> Segment<'a> {
    let total = u.mixture.len();
    let (start, take) = if total > len {
        (rng.gen_range(0..=total - len), len)
    } else {
        (0, total)
    };
    let cut = |w: &Waveform| {
        let mut v = w.samples()[start..start + take].to_vec();
        v.resize(len, 0.0);
        v
    };
    Segment {
        id: &u.id,
        mixture: cut(&u.mixture),
        speech: cut(&u.speech),
        noise: cut(&u.noise),
    }
}

/// Stateful optimiser over one model.
pub struct Trainer {
    ckpt: Checkpoint,
    rng: ChaCha8Rng,
    best: Option<Checkpoint>,
}

impl Trainer {
    pub fn new(model: ModelConfig, train: TrainConfig) -> Result<Self> {
        model.validate()?;
        train.validate(&model)?;
        let params = init_params(&model, train.seed)?;
        let rng = ChaCha8Rng::seed_from_u64(train.seed);
        let ckpt = Checkpoint {
            adam: AdamState::new(&params),
            params,
            lr: train.lr,
            epoch: 0,
            best_valid_loss: None,
            bad_epochs: 0,
            rng: RngState::capture(&rng),
            model,
            train,
        };
        Ok(Self { ckpt, rng, best: None })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.train.validate(&ckpt.model)?;
        ckpt.params.check(&ckpt.model)?;
        let rng = ckpt.rng.restore()?;
        Ok(Self { ckpt, rng, best: None })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    /// Snapshot taken after the epoch with the lowest validation loss seen
    /// by this trainer instance.
    pub fn best(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    pub fn epoch(&self) -> usize {
        self.ckpt.epoch
    }

    pub fn is_done(&self) -> bool {
        self.ckpt.epoch >= self.ckpt.train.epochs
    }

    fn loss_and_grads(&self, seg: &Segment) -> Result<(f64, ModelParams)> {
        let mut tape = Tape::new();
        let vars = self.ckpt.params.bind(&mut tape, true);
        let loss = item_loss(
            &mut tape,
            &self.ckpt.model,
            &self.ckpt.train.loss,
            &vars,
            &seg.mixture,
            &seg.speech,
            &seg.noise,
        )?;
        let value = tape.value(loss).item().expect("scalar loss");
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                ids: vec![seg.id.to_string()],
            });
        }
        let mut grads = tape.backward(loss)?;
        let map = vars.iter().map(|(k, v)| (k.clone(), grads.take(*v))).collect();
        Ok((value, ModelParams::from_map(map)))
    }

    /// Mean loss over full-length items, without updating anything.
    pub fn mean_loss(&self, items: &[Utterance]) -> Result<f64> {
        let mut total = 0.0;
        for u in items {
            let mut tape = Tape::new();
            let vars = self.ckpt.params.bind(&mut tape, false);
            let loss = item_loss(
                &mut tape,
                &self.ckpt.model,
                &self.ckpt.train.loss,
                &vars,
                u.mixture.samples(),
                u.speech.samples(),
                u.noise.samples(),
            )?;
            let v = tape.value(loss).item().expect("scalar loss");
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { ids: vec![u.id.clone()] });
            }
            total += v;
        }
        Ok(total / items.len().max(1) as f64)
    }

    /// One pass over `train` followed by validation. With an empty `valid`
    /// set the training loss drives the schedule and best-model tracking.
    pub fn run_epoch(&mut self, train: &[Utterance], valid: &[Utterance]) -> Result<EpochLog> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let started = Instant::now();
        let cfg = self.ckpt.train.clone();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let segments: Vec<Segment> = batch
                .iter()
                .map(|i| crop(&train[*i], cfg.segment_len, &mut self.rng))
                .collect();
            let mut sum: Option<ModelParams> = None;
            for seg in &segments {
                let (loss, grads) = self.loss_and_grads(seg).map_err(|e| match e {
                    Error::NonFiniteLoss { .. } => Error::NonFiniteLoss {
                        ids: segments.iter().map(|s| s.id.to_string()).collect(),
                    },
                    other => other,
                })?;
                epoch_loss += loss;
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for ((_, a), (_, g)) in acc.iter_mut().zip(grads.iter()) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let mut grads = sum.expect("non-empty batch");
            let scale = 1.0 / segments.len() as f64;
            for (_, g) in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            adam_step(&mut self.ckpt.params, &grads, &mut self.ckpt.adam, &cfg, self.ckpt.lr)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let valid_loss = if valid.is_empty() {
            train_loss
        } else {
            self.mean_loss(valid)?
        };
        let lr = self.ckpt.lr;
        self.ckpt.epoch += 1;
        let improved = self.ckpt.best_valid_loss.is_none_or(|b| valid_loss < b);
        if improved {
            self.ckpt.best_valid_loss = Some(valid_loss);
            self.ckpt.bad_epochs = 0;
        } else {
            self.ckpt.bad_epochs += 1;
            if self.ckpt.bad_epochs >= cfg.lr_halving_patience {
                self.ckpt.lr *= 0.5;
                self.ckpt.bad_epochs = 0;
            }
        }
        self.ckpt.rng = RngState::capture(&self.rng);
        if improved {
            self.best = Some(self.ckpt.clone());
        }
        Ok(EpochLog {
            epoch: self.ckpt.epoch,
            train_loss,
            valid_loss,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Lowest-validation-loss state; the initial state when no epoch ran.
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(model: &ModelConfig, train: &[Utterance], valid: &[Utterance], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model.clone(), cfg.clone())?;
    let mut log = Vec::new();
    while !trainer.is_done() {
        log.push(trainer.run_epoch(train, valid)?);
    }
    let last = trainer.checkpoint().clone();
    let best = trainer.best().cloned().unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { last, best, log })
}

/// How evaluation produces an estimate from a mixture.
#[derive(Debug, Clone, Copy)]
pub enum Processor<'a> {
    Model {
        config: &'a ModelConfig,
        params: &'a ModelParams,
    },
    /// Scores the unprocessed mixture.
    Identity,
}

impl Processor<'_> {
    fn run(&self, y: &Waveform) -> Result<Waveform> {
        match self {
            Processor::Model { config, params } => Ok(denoise(config, params, y)?.speech),
            Processor::Identity => Ok(y.clone()),
        }
    }
}

/// Per-item scores in dB. SNR columns use the plain-SNR SDR proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub snr_in: f64,
    pub snr_out: f64,
    pub delta: f64,
    pub sisnr_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMean {
    pub snr_in: f64,
    pub snr_out: f64,
    pub delta: f64,
    pub sisnr_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub rows: Vec<EvalRow>,
    /// Absent when every item was skipped.
    pub mean: Option<EvalMean>,
    pub skipped: usize,
    pub errors: Vec<String>,
}

fn score(proc: &Processor, u: &Utterance) -> Result<EvalRow> {
    let est = proc.run(&u.mixture)?;
    let snr_in = snr_db(&u.speech, &u.mixture)?;
    let snr_out = snr_db(&u.speech, &est)?;
    Ok(EvalRow {
        id: u.id.clone(),
        snr_in,
        snr_out,
        delta: snr_out - snr_in,
        sisnr_out: sisnr_db(&u.speech, &est)?,
    })
}

fn summarise(rows: Vec<EvalRow>, errors: Vec<String>) -> EvalReport {
    let mean = (!rows.is_empty()).then(|| {
        let n = rows.len() as f64;
        let avg = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        EvalMean {
            snr_in: avg(|r| r.snr_in),
            snr_out: avg(|r| r.snr_out),
            delta: avg(|r| r.delta),
            sisnr_out: avg(|r| r.sisnr_out),
        }
    });
    EvalReport {
        metric: "sdr_proxy (plain SNR, dB)".into(),
        rows,
        mean,
        skipped: errors.len(),
        errors,
    }
}

pub fn evaluate_items(proc: &Processor, items: &[Utterance]) -> EvalReport {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for u in items {
        match score(proc, u) {
            Ok(r) => rows.push(r),
            Err(e) => errors.push(format!("{}: {e}", u.id)),
        }
    }
    summarise(rows, errors)
}

/// Full-utterance evaluation of every manifest item; unreadable or failing
/// items are skipped and reported.
pub fn evaluate(proc: &Processor, manifest: &Manifest) -> EvalReport {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for entry in &manifest.entries {
        match manifest.load(entry).and_then(|u| score(proc, &u)) {
            Ok(r) => rows.push(r),
            Err(e) => errors.push(format!("{}: {e}", entry.id)),
        }
    }
    summarise(rows, errors)
}
