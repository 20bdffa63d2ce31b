//! Reverberant noisy mixtures and corpus manifests.
//!
//! A mixture is `y = x + n` where `x` is dry speech convolved with a room
//! impulse response (the enhancement target keeps its reverberation) and `n`
//! is noise scaled to a requested SNR against `x`. All three signals share a
//! final peak-normalisation gain, so ratios are preserved.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rir::{default_max_order, sample_scene, simulate_rir, Geometry, Rir, RoomSpec};
use crate::signal::{convolve, power_of, Waveform, SAMPLE_RATE};
use crate::wav::{read_wav, write_wav};

/// Peak magnitude of every normalised mixture.
pub const MIXTURE_PEAK: f64 = 0.95;
pub const MANIFEST_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMeta {
    pub snr_db: f64,
    pub seed: u64,
    pub t60: Option<f64>,
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub mixture: Waveform,
    pub target_speech: Waveform,
    pub target_noise: Waveform,
    pub meta: MixtureMeta,
}

/// Gain `g` with `10 log10(P(speech) / P(g * noise)) == target_snr`.
pub fn snr_gain(speech: &Waveform, noise: &Waveform, target_snr: f64) -> Result<f64> {
    let (ps, pn) = (power_of(speech.samples()), power_of(noise.samples()));
    if ps <= 0.0 || pn <= 0.0 {
        return Err(Error::InvalidArgument("snr_gain needs speech and noise with non-zero power".into()));
    }
    if !target_snr.is_finite() {
        return Err(Error::NonFinite("target SNR".into()));
    }
    Ok((ps / (pn * 10f64.powf(target_snr / 10.0))).sqrt())
}

/// `len` samples of `noise` starting at a seeded offset; wraps around when
/// the noise is shorter than `len`.
fn fit_noise(noise: &[f64], len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if noise.len() >= len {
        let start = rng.gen_range(0..=noise.len() - len);
        noise[start..start + len].to_vec()
    } else {
        let start = rng.gen_range(0..noise.len());
        (0..len).map(|i| noise[(start + i) % noise.len()]).collect()
    }
}

pub fn make_mixture(dry_speech: &Waveform, noise: &Waveform, rir: &Rir, target_snr: f64, seed: u64) -> Result<MixtureExample> {
    if power_of(dry_speech.samples()) <= 0.0 {
        return Err(Error::InvalidArgument("dry speech has zero power".into()));
    }
    if power_of(noise.samples()) <= 0.0 {
        return Err(Error::InvalidArgument("noise has zero power".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speech = convolve(dry_speech, rir.taps.samples())?;
    let noise = Waveform::new(fit_noise(noise.samples(), speech.len(), &mut rng))?;
    let gain = snr_gain(&speech, &noise, target_snr)?;
    let noise = noise.scaled(gain)?;
    let peak = speech
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(a, b)| (a + b).abs())
        .fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::InvalidArgument("mixture is silent".into()));
    }
    let norm = MIXTURE_PEAK / peak;
    let target_speech = speech.scaled(norm)?;
    let target_noise = noise.scaled(norm)?;
    let mixture = Waveform::new(
        target_speech
            .samples()
            .iter()
            .zip(target_noise.samples())
            .map(|(a, b)| a + b)
            .collect(),
    )?;
    Ok(MixtureExample {
        mixture,
        target_speech,
        target_noise,
        meta: MixtureMeta {
            snr_db: target_snr,
            seed,
            t60: None,
            distance: None,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "pink" => Ok(NoiseKind::Pink),
            "babble" | "babble-like" => Ok(NoiseKind::Babble),
            other => Err(Error::InvalidArgument(format!(
                "unknown noise kind `{other}` (expected white, pink or babble)"
            ))),
        }
    }
}

fn gaussian(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Multiplies the spectrum of `x` by a real, symmetric gain `gain(hz)`.
fn shape_spectrum(x: &[f64], gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        *c *= gain(bin as f64 * f64::from(SAMPLE_RATE) / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn unit_rms(mut x: Vec<f64>) -> Result<Waveform> {
    let rms = power_of(&x).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    Waveform::new(x)
}

/// Seeded unit-RMS noise.
///
/// Pink noise has a power spectrum proportional to `1/f` (-3 dB/octave).
/// Babble-like noise sums eight band-limited streams with syllable-rate
/// amplitude modulation.
pub fn synth_noise(kind: NoiseKind, len: usize, seed: u64) -> Result<Waveform> {
    if len == 0 {
        return Err(Error::InvalidArgument("noise length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = f64::from(SAMPLE_RATE);
    let samples = match kind {
        NoiseKind::White => gaussian(len, &mut rng),
        NoiseKind::Pink => {
            let floor = fs / len as f64;
            shape_spectrum(&gaussian(len, &mut rng), |hz| 1.0 / hz.max(floor).sqrt())
        }
        NoiseKind::Babble => {
            let mut acc = vec![0.0; len];
            for _ in 0..8 {
                let centre: f64 = rng.gen_range(300.0..3000.0);
                let width: f64 = rng.gen_range(150.0..400.0);
                let rate: f64 = rng.gen_range(2.0..6.0);
                let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let band = shape_spectrum(&gaussian(len, &mut rng), |hz| {
                    (-((hz - centre) / width).powi(2)).exp()
                });
                for (t, (a, b)) in acc.iter_mut().zip(band).enumerate() {
                    let env = 0.5 * (1.0 + (std::f64::consts::TAU * rate * t as f64 / fs + phase).sin());
                    *a += env * b;
                }
            }
            acc
        }
    };
    unit_rms(samples)
}

/// Seeded speech-like signal: voiced syllables with a gliding pitch and two
/// formant peaks, separated by short pauses. Peak amplitude 0.5.
pub fn synth_speech(len: usize, seed: u64) -> Result<Waveform> {
    if len == 0 {
        return Err(Error::InvalidArgument("speech length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = f64::from(SAMPLE_RATE);
    let mut out = vec![0.0; len];
    let mut start = rng.gen_range(0..(len / 10).max(1));
    while start < len {
        let syl = (rng.gen_range(0.12..0.30) * fs) as usize;
        let gap = (rng.gen_range(0.03..0.12) * fs) as usize;
        let f0: f64 = rng.gen_range(100.0..220.0);
        let glide: f64 = rng.gen_range(-0.2..0.2);
        let f1: f64 = rng.gen_range(300.0..900.0);
        let f2: f64 = rng.gen_range(900.0..2500.0);
        let mut phase = 0.0;
        for i in 0..syl.min(len - start) {
            let progress = i as f64 / syl as f64;
            let pitch = f0 * (1.0 + glide * progress);
            phase += std::f64::consts::TAU * pitch / fs;
            let env = (std::f64::consts::PI * progress).sin().powi(2);
            let mut v = 0.0;
            let mut h = 1.0;
            while h * pitch < 4000.0 {
                let hz = h * pitch;
                let amp = (-((hz - f1) / 200.0).powi(2)).exp() + 0.7 * (-((hz - f2) / 300.0).powi(2)).exp() + 0.1 / h;
                v += amp * (h * phase).sin();
                h += 1.0;
            }
            out[start + i] = env * v;
        }
        start += syl + gap;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    } else {
        // Input too short for any voiced sample; keep the signal non-silent.
        out[len / 2] = 0.5;
    }
    Waveform::new(out)
}

/// One corpus row; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub mixture_path: String,
    pub speech_path: String,
    pub noise_path: String,
    pub seed: u64,
    pub snr_db: f64,
    pub t60: f64,
    pub distance: f64,
    pub room: [f64; 3],
    pub source: [f64; 3],
    pub mic: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dry_speech: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dry_noise: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    format: String,
    version: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory the relative paths resolve against.
    pub base_dir: PathBuf,
}

/// Aligned mixture / target triple loaded for training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub mixture: Waveform,
    pub speech: Waveform,
    pub noise: Waveform,
}

impl Manifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = ManifestHeader {
            format: "dnt-manifest".into(),
            version: MANIFEST_VERSION.into(),
        };
        let mut emit = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
        emit(serde_json::to_string(&header)?)?;
        for e in &self.entries {
            emit(serde_json::to_string(e)?)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |line: usize, message: String| Error::Manifest {
            path: path.to_path_buf(),
            message: format!("line {line}: {message}"),
        };
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| bad(1, "missing header line".into()))?;
        let first = first.map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
        if header.version != MANIFEST_VERSION {
            return Err(bad(1, format!("unsupported version `{}`", header.version)));
        }
        let mut entries: Vec<ManifestEntry> = Vec::new();
        let mut ids = std::collections::HashSet::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
            if !ids.insert(entry.id.clone()) {
                return Err(bad(i + 1, format!("duplicate id `{}`", entry.id)));
            }
            entries.push(entry);
        }
        Ok(Self {
            entries,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<Utterance> {
        let mixture = read_wav(self.resolve(&entry.mixture_path))?;
        let speech = read_wav(self.resolve(&entry.speech_path))?;
        let noise = read_wav(self.resolve(&entry.noise_path))?;
        if mixture.len() != speech.len() || mixture.len() != noise.len() {
            return Err(Error::Manifest {
                path: self.base_dir.clone(),
                message: format!("item `{}` has mismatched signal lengths", entry.id),
            });
        }
        Ok(Utterance {
            id: entry.id.clone(),
            mixture,
            speech,
            noise,
        })
    }

    pub fn load_all(&self) -> Result<Vec<Utterance>> {
        self.entries.iter().map(|e| self.load(e)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpeechSource {
    Dir(PathBuf),
    /// [`synth_speech`] utterances of the given length in samples.
    Synthetic { len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    Dir(PathBuf),
    Synthetic(NoiseKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub speech: SpeechSource,
    pub noise: NoiseSource,
    pub count: usize,
    pub snr_range: (f64, f64),
    pub base_seed: u64,
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let read = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in read {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Audio {
            path: dir.to_path_buf(),
            message: "directory contains no .wav files".into(),
        });
    }
    Ok(files)
}

/// Everything known about one generated item before it is written out.
#[derive(Debug, Clone)]
pub struct GeneratedItem {
    pub example: MixtureExample,
    pub room: RoomSpec,
    pub geometry: Geometry,
    pub dry_speech: Option<PathBuf>,
    pub dry_noise: Option<PathBuf>,
}

/// Builds corpus items in memory; item `i` depends only on `base_seed + i`
/// and the sources.
pub struct CorpusBuilder {
    spec: CorpusSpec,
    speech_files: Vec<PathBuf>,
    noise_files: Vec<PathBuf>,
}

impl CorpusBuilder {
    pub fn new(spec: CorpusSpec) -> Result<Self> {
        let (lo, hi) = spec.snr_range;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidArgument(format!("invalid SNR range [{lo}, {hi}]")));
        }
        let speech_files = match &spec.speech {
            SpeechSource::Dir(d) => list_wavs(d)?,
            SpeechSource::Synthetic { len } if *len == 0 => {
                return Err(Error::InvalidArgument("synthetic speech length must be positive".into()))
            }
            SpeechSource::Synthetic { .. } => Vec::new(),
        };
        let noise_files = match &spec.noise {
            NoiseSource::Dir(d) => list_wavs(d)?,
            NoiseSource::Synthetic(_) => Vec::new(),
        };
        Ok(Self {
            spec,
            speech_files,
            noise_files,
        })
    }

    pub fn item(&self, index: usize) -> Result<GeneratedItem> {
        let seed = self.spec.base_seed.wrapping_add(index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (room, geometry) = sample_scene(&mut rng)?;
        let (dry, dry_path) = match &self.spec.speech {
            SpeechSource::Dir(_) => {
                let p = &self.speech_files[rng.gen_range(0..self.speech_files.len())];
                (read_wav(p)?, Some(p.clone()))
            }
            SpeechSource::Synthetic { len } => (synth_speech(*len, rng.gen())?, None),
        };
        let (noise, noise_path) = match &self.spec.noise {
            NoiseSource::Dir(_) => {
                let p = &self.noise_files[rng.gen_range(0..self.noise_files.len())];
                (read_wav(p)?, Some(p.clone()))
            }
            NoiseSource::Synthetic(kind) => (synth_noise(*kind, dry.len(), rng.gen())?, None),
        };
        let (lo, hi) = self.spec.snr_range;
        let snr = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let rir = simulate_rir(&room, &geometry, SAMPLE_RATE, default_max_order(&room))?;
        let mut example = make_mixture(&dry, &noise, &rir, snr, seed)?;
        example.meta.t60 = Some(room.t60);
        example.meta.distance = Some(geometry.distance());
        Ok(GeneratedItem {
            example,
            room,
            geometry,
            dry_speech: dry_path,
            dry_noise: noise_path,
        })
    }
}

pub fn item_id(index: usize) -> String {
    format!("utt{index:06}")
}

/// Writes `count` mixture/speech/noise WAV triples under `out_dir/audio` and
/// a manifest at `out_dir/manifest.jsonl`.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let builder = CorpusBuilder::new(spec.clone())?;
    let audio = out_dir.join("audio");
    fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let mut entries = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let item = builder.item(i)?;
        let id = item_id(i);
        let rel = |suffix: &str| format!("audio/{id}_{suffix}.wav");
        let ex = &item.example;
        write_wav(out_dir.join(rel("mix")), &ex.mixture)?;
        write_wav(out_dir.join(rel("speech")), &ex.target_speech)?;
        write_wav(out_dir.join(rel("noise")), &ex.target_noise)?;
        let name = |p: &Option<PathBuf>| {
            p.as_ref()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
        };
        entries.push(ManifestEntry {
            id: id.clone(),
            mixture_path: rel("mix"),
            speech_path: rel("speech"),
            noise_path: rel("noise"),
            seed: ex.meta.seed,
            snr_db: ex.meta.snr_db,
            t60: item.room.t60,
            distance: item.geometry.distance(),
            room: item.room.dims,
            source: item.geometry.source,
            mic: item.geometry.mic,
            dry_speech: name(&item.dry_speech),
            dry_noise: name(&item.dry_noise),
        });
    }
    let manifest = Manifest {
        entries,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::snr_db;
    use crate::signal::{energy, power};

    fn rand_wave(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn achieved_snr(ex: &MixtureExample) -> f64 {
        10.0 * (energy(ex.target_speech.samples()) / energy(ex.target_noise.samples())).log10()
    }

    #[test]
    fn snr_gain_values() {
        let s = Waveform::new(vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let n = Waveform::new(vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        assert_eq!(snr_gain(&s, &n, 0.0).unwrap(), 1.0);
        assert!((snr_gain(&s, &n, 10.0).unwrap() - 10f64.powf(-0.5)).abs() < 1e-6);
        for seed in 0..20 {
            let s = rand_wave(300, seed);
            let n = rand_wave(500, seed + 50).scaled(0.3).unwrap();
            let target = seed as f64 - 7.3;
            let g = snr_gain(&s, &n, target).unwrap();
            let got = 10.0 * (power(&s) / power(&n.scaled(g).unwrap())).log10();
            assert!((got - target).abs() < 1e-9);
        }
        assert!(snr_gain(&s, &Waveform::zeros(4).unwrap(), 0.0).is_err());
    }

    #[test]
    fn mixture_contract() {
        for seed in 0..20 {
            let dry = rand_wave(800, seed);
            let noise = rand_wave(500 + 100 * seed as usize, seed + 100);
            let rir = Rir {
                taps: Waveform::new(vec![0.0, 0.8, 0.0, 0.3, -0.1]).unwrap(),
                direct_delay: 1,
            };
            let ex = make_mixture(&dry, &noise, &rir, 3.7, seed).unwrap();
            assert_eq!(ex.mixture.len(), 800);
            assert_eq!(ex.target_noise.len(), 800);
            let resid = ex
                .mixture
                .samples()
                .iter()
                .zip(ex.target_speech.samples().iter().zip(ex.target_noise.samples()))
                .map(|(y, (x, n))| (y - x - n).abs())
                .fold(0.0, f64::max);
            assert!(resid <= 1e-9);
            assert!((achieved_snr(&ex) - 3.7).abs() < 0.01);
            assert!((ex.mixture.peak() - MIXTURE_PEAK).abs() < 1e-12);
            assert_eq!(ex, make_mixture(&dry, &noise, &rir, 3.7, seed).unwrap());
        }
    }

    #[test]
    fn normalisation_preserves_snr() {
        let dry = rand_wave(1000, 1).scaled(5.0).unwrap();
        let noise = rand_wave(1000, 2);
        let ex = make_mixture(&dry, &noise, &Rir::identity(), 2.0, 0).unwrap();
        // Before normalisation the target is `dry` itself with an exact gain.
        let g = snr_gain(&dry, &noise, 2.0).unwrap();
        let before = 10.0 * (energy(dry.samples()) / energy(noise.scaled(g).unwrap().samples())).log10();
        assert!((achieved_snr(&ex) - before).abs() < 1e-9);
    }

    #[test]
    fn near_noiseless_limit() {
        let dry = synth_speech(4000, 3).unwrap();
        let tone = Waveform::new((0..4000).map(|t| 1e-3 * (t as f64 * 0.1).sin()).collect()).unwrap();
        let ex = make_mixture(&dry, &tone, &Rir::identity(), 100.0, 0).unwrap();
        let dev = ex
            .mixture
            .samples()
            .iter()
            .zip(ex.target_speech.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-4 * ex.target_speech.peak());
        assert!(make_mixture(&dry, &Waveform::zeros(4000).unwrap(), &Rir::identity(), 0.0, 0).is_err());
    }

    #[test]
    fn noise_fitting_crops_and_tiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let long: Vec<f64> = (0..10).map(f64::from).collect();
        let crop = fit_noise(&long, 4, &mut rng);
        assert_eq!(crop.len(), 4);
        assert!(crop.windows(2).all(|w| w[1] == w[0] + 1.0));
        let tiled = fit_noise(&[1.0, 2.0, 3.0], 7, &mut rng);
        assert_eq!(tiled.len(), 7);
        assert!(tiled.windows(2).all(|w| w[1] == w[0] % 3.0 + 1.0));
    }

    #[test]
    fn white_noise_power_and_determinism() {
        for seed in 0..5 {
            let w = synth_noise(NoiseKind::White, 16_000, seed).unwrap();
            assert!((power(&w) - 1.0).abs() < 0.02);
            assert_eq!(w, synth_noise(NoiseKind::White, 16_000, seed).unwrap());
        }
        let b = synth_noise(NoiseKind::Babble, 16_000, 1).unwrap();
        assert!((power(&b) - 1.0).abs() < 1e-9);
        assert!(synth_noise(NoiseKind::White, 0, 1).is_err());
        assert_eq!("babble-like".parse::<NoiseKind>().unwrap(), NoiseKind::Babble);
        assert!("brown".parse::<NoiseKind>().is_err());
    }

    /// Welch periodogram slope in dB/octave between `lo` and `hi` Hz.
    fn spectral_slope(x: &[f64], lo: f64, hi: f64) -> f64 {
        let n = 1024;
        let window: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
            .collect();
        let mut psd = vec![0.0; n / 2 + 1];
        let fft = FftPlanner::new().plan_fft_forward(n);
        let mut start = 0;
        while start + n <= x.len() {
            let mut buf: Vec<Complex64> = (0..n).map(|i| Complex64::new(x[start + i] * window[i], 0.0)).collect();
            fft.process(&mut buf);
            for (p, c) in psd.iter_mut().zip(&buf) {
                *p += c.norm_sqr();
            }
            start += n / 2;
        }
        let pts: Vec<(f64, f64)> = (1..=n / 2)
            .map(|k| (k as f64 * 16_000.0 / n as f64, psd[k]))
            .filter(|(f, _)| *f >= lo && *f <= hi)
            .map(|(f, p)| (f.log2(), 10.0 * p.log10()))
            .collect();
        let m = pts.len() as f64;
        let (mx, my) = (
            pts.iter().map(|p| p.0).sum::<f64>() / m,
            pts.iter().map(|p| p.1).sum::<f64>() / m,
        );
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn pink_noise_slope() {
        let p = synth_noise(NoiseKind::Pink, 160_000, 4).unwrap();
        let slope = spectral_slope(p.samples(), 100.0, 4000.0);
        assert!((slope + 3.0).abs() <= 1.0, "{slope}");
        let w = synth_noise(NoiseKind::White, 160_000, 4).unwrap();
        assert!(spectral_slope(w.samples(), 100.0, 4000.0).abs() <= 1.0);
    }

    #[test]
    fn synthetic_speech_is_deterministic_and_bounded() {
        let s = synth_speech(16_000, 9).unwrap();
        assert_eq!(s, synth_speech(16_000, 9).unwrap());
        assert!((s.peak() - 0.5).abs() < 1e-12);
        assert!(power(&s) > 1e-3);
        assert_eq!(synth_speech(3, 1).unwrap().len(), 3);
    }

    fn synthetic_spec(count: usize, seed: u64) -> CorpusSpec {
        CorpusSpec {
            speech: SpeechSource::Synthetic { len: 4000 },
            noise: NoiseSource::Synthetic(NoiseKind::White),
            count,
            snr_range: (0.0, 5.0),
            base_seed: seed,
        }
    }

    #[test]
    fn corpus_round_trip_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate_corpus(&synthetic_spec(3, 11), a.path()).unwrap();
        generate_corpus(&synthetic_spec(3, 11), b.path()).unwrap();
        let bytes = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
        assert_eq!(bytes(a.path(), MANIFEST_FILE), bytes(b.path(), MANIFEST_FILE));
        for e in &m.entries {
            assert_eq!(bytes(a.path(), &e.mixture_path), bytes(b.path(), &e.mixture_path));
        }
        let read = Manifest::read(a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(read.entries, m.entries);
        let utt = read.load(&read.entries[0]).unwrap();
        let snr = snr_db(&utt.speech, &utt.mixture).unwrap();
        assert!((snr - read.entries[0].snr_db).abs() < 1e-3, "float32 storage keeps SNR to ~1e-3 dB");
    }

    #[test]
    fn empty_corpus_and_bad_inputs() {
        let d = tempfile::tempdir().unwrap();
        let m = generate_corpus(&synthetic_spec(0, 1), d.path()).unwrap();
        assert!(m.entries.is_empty());
        assert!(Manifest::read(d.path().join(MANIFEST_FILE)).unwrap().entries.is_empty());

        let empty = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            speech: SpeechSource::Dir(empty.path().to_path_buf()),
            ..synthetic_spec(1, 1)
        };
        let err = generate_corpus(&spec, d.path()).unwrap_err();
        assert!(err.is_io() && err.to_string().contains("no .wav"), "{err}");

        let bad = d.path().join("bad.jsonl");
        fs::write(&bad, "{\"format\":\"dnt-manifest\",\"version\":\"9\"}\n").unwrap();
        assert!(matches!(Manifest::read(&bad), Err(Error::Manifest { .. })));
    }

    #[test]
    fn corpus_snr_statistics() {
        let builder = CorpusBuilder::new(CorpusSpec {
            speech: SpeechSource::Synthetic { len: 800 },
            ..synthetic_spec(100, 5)
        })
        .unwrap();
        let snrs: Vec<f64> = (0..100).map(|i| builder.item(i).unwrap().example.meta.snr_db).collect();
        assert!(snrs.iter().all(|s| (0.0..=5.0).contains(s)));
        let mean = snrs.iter().sum::<f64>() / 100.0;
        assert!((mean - 2.5).abs() <= 0.5, "{mean}");
    }
}
