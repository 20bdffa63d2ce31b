//! Mono 16 kHz RIFF WAV I/O. Reads PCM16 or IEEE float32, writes float32.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::signal::{Waveform, SAMPLE_RATE};

fn audio_err(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::Audio {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => audio_err(path, other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(audio_err(path, format!("expected mono audio, found {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(audio_err(
            path,
            format!("expected {SAMPLE_RATE} Hz, found {} Hz (no resampling is done)", spec.sample_rate),
        ));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(audio_err(path, format!("unsupported sample format {fmt:?} with {bits} bits")));
        }
    }
    .map_err(|e| audio_err(path, e))?;
    if samples.is_empty() {
        return Err(audio_err(path, "file contains no samples"));
    }
    Waveform::new(samples).map_err(|e| audio_err(path, e))
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => audio_err(path, other),
    };
    let mut writer = WavWriter::create(path, spec).map_err(map)?;
    for s in wave.samples() {
        writer.write_sample(*s as f32).map_err(map)?;
    }
    writer.finalize().map_err(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, channels: u16, rate: u32, format: SampleFormat, bits: u16, n: usize) {
        let spec = WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: format,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for i in 0..n * channels as usize {
            match format {
                SampleFormat::Int => w.write_sample((i as i16).wrapping_mul(300)).unwrap(),
                SampleFormat::Float => w.write_sample(i as f32 / n as f32).unwrap(),
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn float_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let wave = Waveform::new(vec![0.5, -0.25, 0.125, 0.0, 0.75]).unwrap();
        write_wav(&p, &wave).unwrap();
        assert_eq!(read_wav(&p).unwrap(), wave);
    }

    #[test]
    fn reads_pcm16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pcm.wav");
        write_raw(&p, 1, SAMPLE_RATE, SampleFormat::Int, 16, 4);
        let w = read_wav(&p).unwrap();
        assert_eq!(w.samples(), [0.0, 300.0 / 32768.0, 600.0 / 32768.0, 900.0 / 32768.0]);
    }

    #[test]
    fn rejects_stereo_rate_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("s.wav");
        write_raw(&stereo, 2, SAMPLE_RATE, SampleFormat::Float, 32, 4);
        let err = read_wav(&stereo).unwrap_err().to_string();
        assert!(err.contains("mono") && err.contains("2 channels"), "{err}");

        let rate = dir.path().join("r.wav");
        write_raw(&rate, 1, 44_100, SampleFormat::Float, 32, 4);
        assert!(read_wav(&rate).unwrap_err().to_string().contains("44100"));

        let junk = dir.path().join("j.wav");
        std::fs::write(&junk, b"not a wav file").unwrap();
        assert!(matches!(read_wav(&junk), Err(Error::Audio { .. })));
        assert!(read_wav(dir.path().join("missing.wav")).unwrap_err().is_io());
    }
}
