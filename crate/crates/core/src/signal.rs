//! DSP primitives: waveforms, STFT/iSTFT, linear convolution and power.
//!
//! Everything here works in `f64`. The STFT uses a periodic Hann window and
//! a one-sided spectrum; the inverse is a weighted overlap-add normalised by
//! the summed squared window, so `istft(stft(w))` reproduces `w` wherever that
//! sum is non-zero (every sample except the very first one for Hann).

use std::sync::Arc;

pub use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only sample rate the toolkit accepts.
pub const SAMPLE_RATE: u32 = 16_000;

/// 32 ms at 16 kHz.
pub const DEFAULT_WIN_LEN: usize = 512;
/// 8 ms at 16 kHz.
pub const DEFAULT_HOP: usize = 128;

/// Overlap-add denominators below this are treated as uncovered samples.
const NORM_FLOOR: f64 = 1e-12;

/// Direct convolution is used below this many multiply-adds.
const DIRECT_CONV_LIMIT: usize = 1 << 18;

/// Mono signal at [`SAMPLE_RATE`]. Samples are finite and there is at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("waveform must have at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![0.0; len])
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|s| s * gain).collect())
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / SAMPLE_RATE as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

/// Analysis/synthesis settings shared by [`stft`] and [`istft`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            win_len: DEFAULT_WIN_LEN,
            hop: DEFAULT_HOP,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(win_len: usize, hop: usize) -> Result<Self> {
        let cfg = Self {
            win_len,
            hop,
            window: WindowKind::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win_len {
            return Err(Error::InvalidArgument(format!(
                "stft requires win_len >= hop >= 1 (win_len={}, hop={})",
                self.win_len, self.hop
            )));
        }
        if !self.win_len.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "stft window length must be even, got {}",
                self.win_len
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.win_len / 2 + 1
    }

    /// Frames needed to cover `len` samples, zero-padding the tail.
    pub fn num_frames(&self, len: usize) -> usize {
        if len <= self.win_len {
            1
        } else {
            1 + (len - self.win_len).div_ceil(self.hop)
        }
    }

    /// Longest signal an inverse transform of `frames` frames can produce.
    pub fn reconstructable_len(&self, frames: usize) -> usize {
        (frames.saturating_sub(1)) * self.hop + self.win_len
    }
}

/// One-sided STFT, row-major `(num_frames, num_bins)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: Vec<Complex64>,
    num_frames: usize,
    config: StftConfig,
}

impl Spectrogram {
    pub fn from_parts(frames: Vec<Complex64>, num_frames: usize, config: StftConfig) -> Result<Self> {
        config.validate()?;
        if frames.len() != num_frames * config.num_bins() {
            return Err(Error::shape(
                "spectrogram",
                format!(
                    "{} coefficients for {} frames x {} bins",
                    frames.len(),
                    num_frames,
                    config.num_bins()
                ),
            ));
        }
        if frames.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram".into()));
        }
        Ok(Self {
            frames,
            num_frames,
            config,
        })
    }

    pub fn zeros(num_frames: usize, config: StftConfig) -> Result<Self> {
        Self::from_parts(vec![Complex64::new(0.0, 0.0); num_frames * config.num_bins()], num_frames, config)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn win_len(&self) -> usize {
        self.config.win_len
    }

    pub fn hop(&self) -> usize {
        self.config.hop
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.frames
    }

    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.frames[frame * self.num_bins() + bin]
    }

    /// Row-major `(num_frames, num_bins)` magnitudes.
    pub fn magnitude(&self) -> Vec<f64> {
        self.frames.iter().map(|c| c.norm()).collect()
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.frames.iter().map(|c| c.re).collect()
    }

    pub fn imag_parts(&self) -> Vec<f64> {
        self.frames.iter().map(|c| c.im).collect()
    }

    /// Multiplies every coefficient by a real gain (row-major, same layout).
    pub fn apply_mask(&self, mask: &[f64]) -> Result<Self> {
        if mask.len() != self.frames.len() {
            return Err(Error::shape(
                "apply_mask",
                format!("mask has {} entries, spectrogram {}", mask.len(), self.frames.len()),
            ));
        }
        let frames = self.frames.iter().zip(mask).map(|(c, m)| c * *m).collect();
        Self::from_parts(frames, self.num_frames, self.config)
    }
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

pub fn stft(wave: &Waveform, config: StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    stft_samples(wave.samples(), config)
}

pub(crate) fn stft_samples(samples: &[f64], config: StftConfig) -> Result<Spectrogram> {
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("stft input sample {i}")));
    }
    let n = config.win_len;
    let bins = config.num_bins();
    let window = config.window.coefficients(n);
    let num_frames = config.num_frames(samples.len());
    let fft = plan(n, false);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut frames = Vec::with_capacity(num_frames * bins);
    for f in 0..num_frames {
        let start = f * config.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = samples.get(start + i).copied().unwrap_or(0.0);
            *b = Complex64::new(s * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        frames.extend_from_slice(&buf[..bins]);
    }
    Spectrogram::from_parts(frames, num_frames, config)
}

/// Per-sample overlap-add denominators `sum_f w[t - f*hop]^2`.
fn synthesis_norm(config: StftConfig, window: &[f64], num_frames: usize) -> Result<Vec<f64>> {
    // Steady-state coverage must be non-zero for every phase of the hop.
    for r in 0..config.hop {
        let s: f64 = (r..config.win_len).step_by(config.hop).map(|i| window[i] * window[i]).sum();
        if s <= NORM_FLOOR {
            return Err(Error::InvalidArgument(format!(
                "degenerate window/hop: zero overlap-add normalisation at phase {r} (win_len={}, hop={})",
                config.win_len, config.hop
            )));
        }
    }
    let len = config.reconstructable_len(num_frames);
    let mut norm = vec![0.0; len];
    for f in 0..num_frames {
        let start = f * config.hop;
        for (i, w) in window.iter().enumerate() {
            norm[start + i] += w * w;
        }
    }
    Ok(norm)
}

/// Inverse STFT of separate real/imaginary planes (row-major frames x bins).
pub(crate) fn istft_parts(
    re: &[f64],
    im: &[f64],
    num_frames: usize,
    config: StftConfig,
    out_len: usize,
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = config.win_len;
    let bins = config.num_bins();
    if re.len() != num_frames * bins || im.len() != re.len() {
        return Err(Error::shape(
            "istft",
            format!("planes of {}/{} values for {num_frames} frames x {bins} bins", re.len(), im.len()),
        ));
    }
    let full = config.reconstructable_len(num_frames);
    if out_len > full {
        return Err(Error::InvalidArgument(format!(
            "istft out_len {out_len} exceeds reconstructable length {full}"
        )));
    }
    let window = config.window.coefficients(n);
    let norm = synthesis_norm(config, &window, num_frames)?;
    let fft = plan(n, true);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut acc = vec![0.0; full];
    let scale = 1.0 / n as f64;
    for f in 0..num_frames {
        let row = f * bins;
        for k in 0..bins {
            buf[k] = Complex64::new(re[row + k], im[row + k]);
        }
        for k in 1..n / 2 {
            buf[n - k] = buf[k].conj();
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let start = f * config.hop;
        for i in 0..n {
            acc[start + i] += window[i] * buf[i].re * scale;
        }
    }
    let mut out: Vec<f64> = acc
        .iter()
        .zip(&norm)
        .map(|(a, d)| if *d > NORM_FLOOR { a / d } else { 0.0 })
        .collect();
    out.truncate(out_len);
    Ok(out)
}

/// Vector-Jacobian product of [`istft_parts`] with respect to both planes.
pub(crate) fn istft_parts_adjoint(
    grad_out: &[f64],
    num_frames: usize,
    config: StftConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = config.win_len;
    let bins = config.num_bins();
    let window = config.window.coefficients(n);
    let norm = synthesis_norm(config, &window, num_frames)?;
    let fft = plan(n, false);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut g_re = vec![0.0; num_frames * bins];
    let mut g_im = vec![0.0; num_frames * bins];
    let scale = 1.0 / n as f64;
    for f in 0..num_frames {
        let start = f * config.hop;
        for i in 0..n {
            let t = start + i;
            let g = match grad_out.get(t) {
                Some(g) if norm[t] > NORM_FLOOR => g / norm[t],
                _ => 0.0,
            };
            buf[i] = Complex64::new(window[i] * g * scale, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let row = f * bins;
        for k in 0..bins {
            let c = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            g_re[row + k] = c * buf[k].re;
            g_im[row + k] = if k == 0 || k == n / 2 { 0.0 } else { c * buf[k].im };
        }
    }
    Ok((g_re, g_im))
}

pub fn istft(spec: &Spectrogram, out_len: usize) -> Result<Waveform> {
    let samples = istft_parts(
        &spec.real_parts(),
        &spec.imag_parts(),
        spec.num_frames(),
        spec.config(),
        out_len,
    )?;
    Waveform::new(samples)
}

/// Full linear convolution truncated to the input length.
pub fn convolve(wave: &Waveform, kernel: &[f64]) -> Result<Waveform> {
    if kernel.is_empty() {
        return Err(Error::InvalidArgument("convolution kernel is empty".into()));
    }
    if kernel.iter().any(|k| !k.is_finite()) {
        return Err(Error::NonFinite("convolution kernel".into()));
    }
    let x = wave.samples();
    let t = x.len();
    let k = kernel.len().min(t);
    let kernel = &kernel[..k];
    let out = if t * k <= DIRECT_CONV_LIMIT {
        convolve_direct(x, kernel)
    } else {
        convolve_fft(x, kernel)
    };
    Waveform::new(out)
}

fn convolve_direct(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let t = x.len();
    let mut out = vec![0.0; t];
    for (j, &h) in kernel.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        for (o, &s) in out[j..].iter_mut().zip(x) {
            *o += h * s;
        }
    }
    out
}

fn convolve_fft(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let t = x.len();
    let n = (t + kernel.len() - 1).next_power_of_two();
    let to_complex = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|s| Complex64::new(*s, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        b
    };
    let mut a = to_complex(x);
    let mut b = to_complex(kernel);
    let forward = plan(n, false);
    forward.process(&mut a);
    forward.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    plan(n, true).process(&mut a);
    let scale = 1.0 / n as f64;
    a[..t].iter().map(|c| c.re * scale).collect()
}

/// Mean-square power.
pub fn power(wave: &Waveform) -> f64 {
    power_of(wave.samples())
}

pub(crate) fn power_of(samples: &[f64]) -> f64 {
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len().max(1) as f64
}

pub(crate) fn energy(samples: &[f64]) -> f64 {
    samples.iter().map(|s| s * s).sum()
}
