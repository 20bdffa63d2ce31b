//! Training losses and evaluation metrics.
//!
//! SNR here is the classic, scale-dependent ratio
//! `10 log10((|x|^2 + eps) / (|x - x_hat|^2 + eps))`: scaling an estimate
//! changes its score. SiSNR is provided for comparison and evaluation only.
//! Every loss is the negative of an SNR so minimising it maximises fidelity.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var, EPSILON};
use crate::error::{Error, Result};
use crate::signal::{energy, Spectrogram, Waveform};

/// SiSNR is clamped to this many dB in either direction.
pub const SISNR_CAP_DB: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Negative SNR on time-domain waveforms.
    Tdl,
    /// Log-MSE on magnitude spectra, before the inverse STFT.
    Fdl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Adds the noise-reconstruction term; needs a two-output model.
    #[serde(default)]
    pub multitask: bool,
    /// Uses the literal `-10 log10(error energy)` magnitude loss instead of
    /// the ratio form. Kept for comparison only.
    #[serde(default)]
    pub fdl_raw: bool,
}

impl LossSpec {
    pub fn tdl(multitask: bool) -> Self {
        Self {
            kind: LossKind::Tdl,
            multitask,
            fdl_raw: false,
        }
    }

    pub fn fdl(multitask: bool) -> Self {
        Self {
            kind: LossKind::Fdl,
            multitask,
            fdl_raw: false,
        }
    }

    pub fn validate(&self, num_outputs: usize) -> Result<()> {
        if self.multitask && num_outputs < 2 {
            return Err(Error::InvalidArgument(
                "multitask loss requires a model with speech and noise outputs".into(),
            ));
        }
        Ok(())
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape("snr", format!("reference has {a} samples, estimate {b}")));
    }
    Ok(())
}

fn snr_slices(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_lengths(reference.len(), estimate.len())?;
    let signal = energy(reference);
    let error: f64 = reference.iter().zip(estimate).map(|(x, e)| (x - e) * (x - e)).sum();
    Ok(10.0 * ((signal + EPSILON).log10() - (error + EPSILON).log10()))
}

pub fn snr_db(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    snr_slices(reference.samples(), estimate.samples())
}

pub fn sisnr_db(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_lengths(reference.len(), estimate.len())?;
    let center = |s: &[f64]| {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|v| v - m).collect::<Vec<f64>>()
    };
    let x = center(reference.samples());
    let e = center(estimate.samples());
    let ref_energy = energy(&x);
    if ref_energy <= 0.0 {
        return Err(Error::InvalidArgument("sisnr reference has zero energy".into()));
    }
    let alpha = x.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / ref_energy;
    let target = alpha * alpha * ref_energy;
    let residual: f64 = x.iter().zip(&e).map(|(a, b)| (b - alpha * a).powi(2)).sum();
    let db = if target <= 0.0 {
        -SISNR_CAP_DB
    } else {
        10.0 * (target / (residual + EPSILON)).log10()
    };
    Ok(db.clamp(-SISNR_CAP_DB, SISNR_CAP_DB))
}

/// Evaluation stand-in for BSS-eval SDR: plain SNR, reported as "SDR proxy".
pub fn sdr_proxy(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    snr_db(reference, estimate)
}

/// `10 log10(|est - reference|^2 + eps) - 10 log10(|reference|^2 + eps)`,
/// i.e. the negative SNR, recorded on the tape.
pub fn neg_snr(tape: &mut Tape, reference: &[f64], estimate: Var) -> Result<Var> {
    if tape.value(estimate).numel() != reference.len() {
        return Err(Error::shape(
            "snr",
            format!("reference has {} samples, estimate {:?}", reference.len(), tape.shape(estimate)),
        ));
    }
    let shape = tape.shape(estimate).to_vec();
    let r = tape.constant(Tensor::new(shape, reference.to_vec())?);
    let diff = tape.sub(estimate, r)?;
    let sq = tape.mul(diff, diff)?;
    let err = tape.sum(sq);
    let log_err = tape.log10(err);
    let scaled = tape.scale(log_err, 10.0);
    let offset = tape.constant(Tensor::scalar(-10.0 * (energy(reference) + EPSILON).log10()));
    tape.add(scaled, offset)
}

/// Time-domain loss: `-SNR(x, x_hat)`, or `-(SNR(x, x_hat) + SNR(n, n_hat))`
/// when `multitask` is set.
pub fn tdl_loss(
    tape: &mut Tape,
    speech: &[f64],
    speech_est: Var,
    noise: Option<&[f64]>,
    noise_est: Option<Var>,
    multitask: bool,
) -> Result<Var> {
    let speech_term = neg_snr(tape, speech, speech_est)?;
    if !multitask {
        return Ok(speech_term);
    }
    match (noise, noise_est) {
        (Some(n), Some(n_hat)) => {
            let noise_term = neg_snr(tape, n, n_hat)?;
            tape.add(speech_term, noise_term)
        }
        _ => Err(Error::InvalidArgument(
            "multitask loss needs a noise reference and a noise estimate".into(),
        )),
    }
}

/// Magnitude-domain loss on `[frames, bins]` planes:
/// `-10 log10((| |e_x| |^2 + eps) / (| |e_x| - m |e_y| |^2 + eps))`.
/// With `raw` set, `-10 log10(| |e_x| - m |e_y| |^2 + eps)` instead.
pub fn fdl_loss_magnitudes(
    tape: &mut Tape,
    target_mag: &[f64],
    mask: Var,
    mixture_mag: &[f64],
    raw: bool,
) -> Result<Var> {
    let n = tape.value(mask).numel();
    if target_mag.len() != n || mixture_mag.len() != n {
        return Err(Error::shape(
            "fdl_loss",
            format!(
                "mask {:?}, target {} values, mixture {} values",
                tape.shape(mask),
                target_mag.len(),
                mixture_mag.len()
            ),
        ));
    }
    let shape = tape.shape(mask).to_vec();
    let mix = tape.constant(Tensor::new(shape.clone(), mixture_mag.to_vec())?);
    let est = tape.mul(mask, mix)?;
    if raw {
        let target = tape.constant(Tensor::new(shape, target_mag.to_vec())?);
        let diff = tape.sub(target, est)?;
        let sq = tape.mul(diff, diff)?;
        let err = tape.sum(sq);
        let log_err = tape.log10(err);
        return Ok(tape.scale(log_err, -10.0));
    }
    neg_snr(tape, target_mag, est)
}

pub fn fdl_loss(tape: &mut Tape, target: &Spectrogram, mask: Var, mixture: &Spectrogram, raw: bool) -> Result<Var> {
    if tape.shape(mask) != [mixture.num_frames(), mixture.num_bins()] {
        return Err(Error::shape(
            "fdl_loss",
            format!(
                "mask {:?} for {}x{} spectrogram",
                tape.shape(mask),
                mixture.num_frames(),
                mixture.num_bins()
            ),
        ));
    }
    fdl_loss_magnitudes(tape, &target.magnitude(), mask, &mixture.magnitude(), raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::signal::{stft, StftConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn unit_energy(w: &Waveform) -> Waveform {
        w.scaled(1.0 / energy(w.samples()).sqrt()).unwrap()
    }

    #[test]
    fn snr_reference_cases() {
        let x = unit_energy(&wave(400, 1));
        assert!(snr_db(&x, &x).unwrap() >= 80.0);
        assert!(snr_db(&x, &Waveform::zeros(400).unwrap()).unwrap().abs() < 1e-12);
        assert_eq!(snr_db(&x, &x.scaled(2.0).unwrap()).unwrap(), 0.0);
        assert!(snr_db(&x, &Waveform::zeros(5).unwrap()).is_err());
        assert_eq!(sdr_proxy(&x, &x.scaled(0.7).unwrap()).unwrap(), snr_db(&x, &x.scaled(0.7).unwrap()).unwrap());
    }

    #[test]
    fn sisnr_scale_invariance_and_caps() {
        let x = wave(400, 2);
        for a in [0.1, 1.0, 2.0, 10.0] {
            assert_eq!(sisnr_db(&x, &x.scaled(a).unwrap()).unwrap(), SISNR_CAP_DB);
        }
        // Zero-mean vector orthogonal to x.
        let xs = x.samples();
        let mean = xs.iter().sum::<f64>() / 400.0;
        let xc: Vec<f64> = xs.iter().map(|v| v - mean).collect();
        let mut o = wave(400, 3).into_samples();
        let om = o.iter().sum::<f64>() / 400.0;
        o.iter_mut().for_each(|v| *v -= om);
        let proj = o.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>() / energy(&xc);
        let orth: Vec<f64> = o.iter().zip(&xc).map(|(a, b)| a - proj * b).collect();
        let db = sisnr_db(&x, &Waveform::new(orth).unwrap()).unwrap();
        assert!(db <= -SISNR_CAP_DB + 1e-6, "{db}");
    }

    /// Least-squares scale found by bisection on the normal-equation residual.
    fn sisnr_oracle(x: &[f64], e: &[f64]) -> f64 {
        let center = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| v - m).collect::<Vec<f64>>()
        };
        let (x, e) = (center(x), center(e));
        let residual = |a: f64| x.iter().zip(&e).map(|(xv, ev)| xv * (a * xv - ev)).sum::<f64>();
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let a = 0.5 * (lo + hi);
        let s: f64 = x.iter().map(|v| (a * v).powi(2)).sum();
        let n: f64 = x.iter().zip(&e).map(|(xv, ev)| (ev - a * xv).powi(2)).sum();
        10.0 * (s / (n + EPSILON)).log10()
    }

    #[test]
    fn sisnr_matches_least_squares_oracle() {
        for seed in 0..10 {
            let x = wave(500, seed);
            let noise = wave(500, seed + 100);
            let est: Vec<f64> = x
                .samples()
                .iter()
                .zip(noise.samples())
                .map(|(a, b)| 0.7 * a + 0.3 * b + 0.05)
                .collect();
            let est = Waveform::new(est).unwrap();
            let got = sisnr_db(&x, &est).unwrap();
            let want = sisnr_oracle(x.samples(), est.samples());
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn scale_handling_differs_between_snr_and_sisnr() {
        let x = wave(300, 4);
        let est = Waveform::new(
            x.samples().iter().zip(wave(300, 5).samples()).map(|(a, b)| a + 0.2 * b).collect(),
        )
        .unwrap();
        let snrs: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|c| snr_db(&x, &est.scaled(*c).unwrap()).unwrap())
            .collect();
        assert!((snrs[0] - snrs[1]).abs() > 1.0 && (snrs[1] - snrs[2]).abs() > 1.0);
        let base = sisnr_db(&x, &est).unwrap();
        for a in [0.5, 2.0, 7.0] {
            assert!((sisnr_db(&x, &est.scaled(a).unwrap()).unwrap() - base).abs() < 1e-6);
        }
    }

    fn tape_loss(x: &[f64], est: &[f64], n: Option<(&[f64], &[f64])>, multitask: bool) -> f64 {
        let mut tape = Tape::new();
        let xe = tape.leaf(Tensor::from_slice(est));
        let (nref, ne) = match n {
            Some((nr, nest)) => (Some(nr), Some(tape.leaf(Tensor::from_slice(nest)))),
            None => (None, None),
        };
        let l = tdl_loss(&mut tape, x, xe, nref, ne, multitask).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn tdl_values() {
        let x = wave(200, 6);
        let n = wave(200, 7);
        let zeros = vec![0.0; 200];
        assert!(tape_loss(x.samples(), &zeros, None, false).abs() < 1e-12);
        assert!(tape_loss(x.samples(), &zeros, Some((n.samples(), &zeros)), true).abs() < 1e-12);

        let xe = wave(200, 8).into_samples();
        let ne = wave(200, 9).into_samples();
        let joint = tape_loss(x.samples(), &xe, Some((n.samples(), &ne)), true);
        let split = tape_loss(x.samples(), &xe, None, false) + tape_loss(n.samples(), &ne, None, false);
        assert!((joint - split).abs() < 1e-12);

        let single = tape_loss(x.samples(), &xe, None, false);
        let snr = snr_db(&x, &Waveform::new(xe.clone()).unwrap()).unwrap();
        assert!((single + snr).abs() < 1e-12);

        let mut tape = Tape::new();
        let e = tape.leaf(Tensor::from_slice(&xe));
        assert!(tdl_loss(&mut tape, x.samples(), e, None, None, true).is_err());
        assert!(LossSpec::tdl(true).validate(1).is_err());
    }

    #[test]
    fn tdl_gradient_reaches_both_heads() {
        let x = wave(100, 10).into_samples();
        let n = wave(100, 11).into_samples();
        let mut tape = Tape::new();
        let xe = tape.leaf(Tensor::from_slice(&wave(100, 12).into_samples()));
        let ne = tape.leaf(Tensor::from_slice(&wave(100, 13).into_samples()));
        let l = tdl_loss(&mut tape, &x, xe, Some(&n), Some(ne), true).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(xe).data().iter().any(|v| *v != 0.0));
        assert!(g.get(ne).data().iter().any(|v| *v != 0.0));
    }

    fn spectra(seed: u64) -> (Spectrogram, Spectrogram) {
        let cfg = StftConfig::default();
        (stft(&wave(2000, seed), cfg).unwrap(), stft(&wave(2000, seed + 1), cfg).unwrap())
    }

    fn fdl_value(target: &Spectrogram, mask: &[f64], mix: &Spectrogram) -> f64 {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::new(vec![mix.num_frames(), mix.num_bins()], mask.to_vec()).unwrap());
        let l = fdl_loss(&mut tape, target, m, mix, false).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn fdl_values() {
        let (target, mix) = spectra(20);
        let n = mix.coefficients().len();
        assert!(fdl_value(&target, &vec![0.0; n], &mix).abs() < 1e-12);
        // Mask that reproduces |e_x| exactly.
        let mask: Vec<f64> = target
            .magnitude()
            .iter()
            .zip(mix.magnitude())
            .map(|(t, m)| if m > 0.0 { t / m } else { 0.0 })
            .collect();
        assert!(fdl_value(&target, &mask, &mix) <= -80.0);
    }

    #[test]
    fn fdl_ignores_mixture_phase() {
        let (target, mix) = spectra(30);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rotated: Vec<_> = mix
            .coefficients()
            .iter()
            .map(|c| c * rustfft::num_complex::Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        let rotated = Spectrogram::from_parts(rotated, mix.num_frames(), mix.config()).unwrap();
        let mask: Vec<f64> = (0..mix.coefficients().len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = fdl_value(&target, &mask, &mix);
        let b = fdl_value(&target, &mask, &rotated);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn fdl_gradient_matches_finite_differences() {
        let (target, mix) = spectra(40);
        let (tm, mm) = (target.magnitude(), mix.magnitude());
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let shape = vec![mix.num_frames(), mix.num_bins()];
        let mask = Tensor::new(shape, (0..tm.len()).map(|_| rng.gen_range(0.1..0.9)).collect()).unwrap();
        let err = grad_check(|t, m| fdl_loss_magnitudes(t, &tm, m, &mm, false), &mask, 50, 1e-5).unwrap();
        assert!(err <= 1e-4, "{err}");
        let err = grad_check(|t, m| fdl_loss_magnitudes(t, &tm, m, &mm, true), &mask, 50, 1e-5).unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn losses_are_deterministic() {
        let x = wave(300, 50).into_samples();
        let e = wave(300, 51).into_samples();
        assert_eq!(
            tape_loss(&x, &e, None, false).to_bits(),
            tape_loss(&x, &e, None, false).to_bits()
        );
    }
}
