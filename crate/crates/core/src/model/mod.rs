//! Denoising networks: encode, estimate masks, decode.
//!
//! Three families share one parameter store and one forward entry point:
//! a time-domain TasNet (learned conv encoder/decoder around a TCN mask
//! estimator) and two STFT-domain maskers (BLSTM stack or TCN). Every model
//! emits one or two masks; when two, index 0 is speech and index 1 is noise.

mod blstm;
mod config;
mod params;
mod tcn;

pub use config::{
    FdBlstmConfig, FdConvConfig, InputNorm, MaskActivation, ModelConfig, NormKind, TasNetConfig,
};
pub use params::{init_params, Init, ModelParams, ParamSpec, ParamVars};

use crate::autodiff::{Tape, Tensor, Var, EPSILON};
use crate::error::{Error, Result};
use crate::signal::{stft_samples, Spectrogram, StftConfig, Waveform};

/// Result of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[N, F]` for TasNet, `[frames, bins]` for the STFT models.
    pub masks: Vec<Var>,
    /// Time-domain estimates, present when decoding was requested.
    pub speech: Option<Var>,
    pub noise: Option<Var>,
    /// STFT of the input, for the frequency-domain models.
    pub mixture_spec: Option<Spectrogram>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub speech: Waveform,
    pub noise: Option<Waveform>,
}

fn activate(tape: &mut Tape, x: Var, act: MaskActivation) -> Var {
    match act {
        MaskActivation::Sigmoid => tape.sigmoid(x),
        MaskActivation::Relu => tape.relu(x),
    }
}

fn split_heads(tape: &mut Tape, x: Var, axis: usize, heads: usize) -> Result<Vec<Var>> {
    let width = tape.shape(x)[axis] / heads;
    (0..heads)
        .map(|h| tape.slice(x, axis, h * width, (h + 1) * width))
        .collect()
}

/// Samples after zero-padding so `(len - L)` is a multiple of the stride.
pub fn td_padded_len(cfg: &TasNetConfig, len: usize) -> usize {
    let extra = len - cfg.filter_len;
    cfg.filter_len + extra.div_ceil(cfg.stride) * cfg.stride
}

/// Learned analysis transform with ReLU: `[T] -> [N, F]`.
pub fn td_encode(tape: &mut Tape, cfg: &TasNetConfig, params: &ParamVars, y: &[f64]) -> Result<Var> {
    if y.len() < cfg.filter_len {
        return Err(Error::InvalidArgument(format!(
            "input of {} samples is shorter than the encoder filter ({})",
            y.len(),
            cfg.filter_len
        )));
    }
    let mut padded = y.to_vec();
    padded.resize(td_padded_len(cfg, y.len()), 0.0);
    let input = tape.constant(Tensor::new(vec![1, padded.len()], padded)?);
    let enc = tape.conv1d(input, params.get("encoder.weight")?, None, cfg.stride, 1, 1)?;
    Ok(tape.relu(enc))
}

/// TCN mask estimator on an encoding: one `[N, F]` mask per output.
pub fn td_mask(tape: &mut Tape, cfg: &TasNetConfig, params: &ParamVars, encoded: Var) -> Result<Vec<Var>> {
    let logits = tcn::forward(tape, &cfg.tcn(), params, "tcn", encoded)?;
    let masks = activate(tape, logits, cfg.mask_activation);
    split_heads(tape, masks, 0, cfg.num_outputs)
}

/// Learned synthesis transform: `[N, F] -> [out_len]`.
pub fn td_decode(
    tape: &mut Tape,
    cfg: &TasNetConfig,
    params: &ParamVars,
    masked: Var,
    out_len: usize,
) -> Result<Var> {
    let s = tape.shape(masked).to_vec();
    if s.len() != 2 || s[0] != cfg.encoder_filters {
        return Err(Error::shape(
            "td_decode",
            format!("expected [{}, frames], got {s:?}", cfg.encoder_filters),
        ));
    }
    let full = (s[1] - 1) * cfg.stride + cfg.filter_len;
    if out_len == 0 || out_len > full {
        return Err(Error::shape("td_decode", format!("{out_len} samples from {} frames", s[1])));
    }
    let wave = tape.conv1d_transpose(masked, params.get("decoder.weight")?, None, cfg.stride)?;
    let wave = tape.slice(wave, 1, 0, out_len)?;
    tape.reshape(wave, &[out_len])
}

fn tasnet_forward(tape: &mut Tape, cfg: &TasNetConfig, params: &ParamVars, y: &[f64]) -> Result<Forward> {
    let encoded = td_encode(tape, cfg, params, y)?;
    let masks = td_mask(tape, cfg, params, encoded)?;
    let mut outputs = Vec::with_capacity(masks.len());
    for m in &masks {
        let masked = tape.mul(*m, encoded)?;
        outputs.push(td_decode(tape, cfg, params, masked, y.len())?);
    }
    Ok(Forward {
        masks,
        speech: outputs.first().copied(),
        noise: outputs.get(1).copied(),
        mixture_spec: None,
    })
}

/// Per-bin mean/variance normalisation of a `[frames, bins]` plane.
fn normalise_magnitudes(mag: &[f64], frames: usize, bins: usize) -> Vec<f64> {
    let mut out = mag.to_vec();
    for b in 0..bins {
        let mean = (0..frames).map(|f| mag[f * bins + b]).sum::<f64>() / frames as f64;
        let var = (0..frames).map(|f| (mag[f * bins + b] - mean).powi(2)).sum::<f64>() / frames as f64;
        let inv = 1.0 / (var + EPSILON).sqrt();
        for f in 0..frames {
            out[f * bins + b] = (mag[f * bins + b] - mean) * inv;
        }
    }
    out
}

/// Zeros added on each side before analysis by the STFT-domain models, so
/// that every input sample lies where all overlapping frames contribute.
pub fn fd_edge_pad(config: StftConfig) -> usize {
    config.win_len - config.hop
}

/// STFT of `y` after [`fd_edge_pad`] zeros on both sides.
pub fn fd_analysis(y: &[f64], config: StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let pad = fd_edge_pad(config);
    let mut padded = vec![0.0; y.len() + 2 * pad];
    padded[pad..pad + y.len()].copy_from_slice(y);
    stft_samples(&padded, config)
}

/// `istft(mask * E)` trimmed back to `out_len` samples, with the mask scaling
/// real and imaginary parts alike. `spec` comes from [`fd_analysis`].
pub fn fd_reconstruct(tape: &mut Tape, spec: &Spectrogram, mask: Var, out_len: usize) -> Result<Var> {
    let shape = vec![spec.num_frames(), spec.num_bins()];
    if tape.shape(mask) != shape.as_slice() {
        return Err(Error::shape(
            "fd_reconstruct",
            format!("mask {:?} for spectrogram {shape:?}", tape.shape(mask)),
        ));
    }
    let pad = fd_edge_pad(spec.config());
    let re = tape.constant(Tensor::new(shape.clone(), spec.real_parts())?);
    let im = tape.constant(Tensor::new(shape, spec.imag_parts())?);
    let re = tape.mul(mask, re)?;
    let im = tape.mul(mask, im)?;
    let wave = tape.istft(re, im, spec.config(), out_len + 2 * pad)?;
    tape.slice(wave, 0, pad, pad + out_len)
}

fn fd_forward(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &ParamVars,
    y: &[f64],
    decode: bool,
) -> Result<Forward> {
    let stft_cfg = config.stft().expect("frequency-domain config");
    let spec = fd_analysis(y, stft_cfg)?;
    let (frames, bins) = (spec.num_frames(), spec.num_bins());
    let mag = spec.magnitude();
    let (input_norm, act, outputs) = match config {
        ModelConfig::FdBlstm(c) => (c.input_norm, c.mask_activation, c.num_outputs),
        ModelConfig::FdConv(c) => (c.input_norm, c.mask_activation, c.num_outputs),
        ModelConfig::Tasnet(_) => unreachable!(),
    };
    let features = match input_norm {
        InputNorm::MeanVar => normalise_magnitudes(&mag, frames, bins),
        InputNorm::None => mag,
    };
    let masks = match config {
        ModelConfig::FdBlstm(c) => {
            let input = tape.constant(Tensor::new(vec![frames, bins], features)?);
            let logits = blstm::forward(tape, c, params, input)?;
            let masks = activate(tape, logits, act);
            split_heads(tape, masks, 1, outputs)?
        }
        ModelConfig::FdConv(c) => {
            let input = tape.constant(Tensor::new(vec![frames, bins], features)?);
            let input = tape.transpose(input)?;
            let logits = tcn::forward(tape, &c.tcn(), params, "tcn", input)?;
            let masks = activate(tape, logits, act);
            split_heads(tape, masks, 0, outputs)?
                .into_iter()
                .map(|m| tape.transpose(m))
                .collect::<Result<Vec<_>>>()?
        }
        ModelConfig::Tasnet(_) => unreachable!(),
    };
    let (mut speech, mut noise) = (None, None);
    if decode {
        speech = Some(fd_reconstruct(tape, &spec, masks[0], y.len())?);
        if let Some(m) = masks.get(1) {
            noise = Some(fd_reconstruct(tape, &spec, *m, y.len())?);
        }
    }
    Ok(Forward {
        masks,
        speech,
        noise,
        mixture_spec: Some(spec),
    })
}

/// Records a forward pass of `config` on `y`. Time-domain outputs are
/// produced when `decode` is set (always for TasNet).
pub fn forward(tape: &mut Tape, config: &ModelConfig, params: &ParamVars, y: &[f64], decode: bool) -> Result<Forward> {
    if y.len() < config.min_input_len() {
        return Err(Error::InvalidArgument(format!(
            "input of {} samples is shorter than the model minimum ({})",
            y.len(),
            config.min_input_len()
        )));
    }
    match config {
        ModelConfig::Tasnet(c) => tasnet_forward(tape, c, params, y),
        _ => fd_forward(tape, config, params, y, decode),
    }
}

/// Full-utterance inference.
pub fn denoise(config: &ModelConfig, params: &ModelParams, y: &Waveform) -> Result<Denoised> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let out = forward(&mut tape, config, &vars, y.samples(), true)?;
    let speech = out.speech.expect("decoded forward has speech");
    let to_wave = |tape: &Tape, v: Var| Waveform::new(tape.value(v).data().to_vec());
    Ok(Denoised {
        speech: to_wave(&tape, speech)?,
        noise: out.noise.map(|v| to_wave(&tape, v)).transpose()?,
    })
}

pub fn denoise_td(config: &TasNetConfig, params: &ModelParams, y: &Waveform) -> Result<Denoised> {
    denoise(&ModelConfig::Tasnet(config.clone()), params, y)
}

pub fn denoise_fd(config: &ModelConfig, params: &ModelParams, y: &Waveform) -> Result<Denoised> {
    if !config.is_frequency_domain() {
        return Err(Error::InvalidArgument("denoise_fd needs an STFT-domain model".into()));
    }
    denoise(config, params, y)
}

/// Applies a fixed `[frames, bins]` mask to [`fd_analysis`] of `y` and
/// resynthesises.
pub fn apply_fd_mask(y: &Waveform, config: StftConfig, mask: &[f64]) -> Result<Waveform> {
    let spec = fd_analysis(y.samples(), config)?;
    let mut tape = Tape::new();
    let m = tape.constant(Tensor::new(vec![spec.num_frames(), spec.num_bins()], mask.to_vec())?);
    let out = fd_reconstruct(&mut tape, &spec, m, y.len())?;
    Waveform::new(tape.value(out).data().to_vec())
}
