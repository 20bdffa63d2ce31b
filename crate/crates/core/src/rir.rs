//! Shoebox room impulse responses via the image-source method.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Waveform, SAMPLE_RATE};

pub const SPEED_OF_SOUND: f64 = 343.0;
const MAX_ORDER_CAP: usize = 40;
const WALL_CLEARANCE: f64 = 0.1;
const MAX_SCENE_ATTEMPTS: usize = 1000;
const MAX_REFLECTION: f64 = 0.9999;
const CALIBRATION_STEPS: usize = 8;
const CALIBRATION_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub t60: f64,
}

impl RoomSpec {
    pub fn new(dims: [f64; 3], t60: f64) -> Result<Self> {
        let room = Self { dims, t60 };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(2.5..=10.0).contains(d)) {
            return Err(Error::InvalidArgument(format!(
                "room dimensions {:?} outside [2.5, 10] m",
                self.dims
            )));
        }
        if !(0.0..=2.0).contains(&self.t60) {
            return Err(Error::InvalidArgument(format!("t60 {} s outside [0, 2]", self.t60)));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub source: [f64; 3],
    pub mic: [f64; 3],
}

impl Geometry {
    pub fn distance(&self) -> f64 {
        dist(self.source, self.mic)
    }

    pub fn validate(&self, room: &RoomSpec) -> Result<()> {
        for (what, p) in [("source", self.source), ("mic", self.mic)] {
            if !inside(p, room.dims, WALL_CLEARANCE) {
                return Err(Error::InvalidArgument(format!(
                    "{what} {p:?} not inside room {:?} with {WALL_CLEARANCE} m clearance",
                    room.dims
                )));
            }
        }
        if self.distance() <= 0.0 {
            return Err(Error::InvalidArgument("source and mic coincide".into()));
        }
        Ok(())
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn inside(p: [f64; 3], dims: [f64; 3], clearance: f64) -> bool {
    p.iter().zip(dims).all(|(c, d)| *c >= clearance && *c <= d - clearance)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Waveform,
    pub direct_delay: usize,
}

impl Rir {
    /// Single unit tap at sample zero.
    pub fn identity() -> Self {
        Self {
            taps: Waveform::new(vec![1.0]).expect("finite"),
            direct_delay: 0,
        }
    }
}

/// Uniform wall reflection coefficient from Sabine's formula.
pub fn sabine_reflection(room: &RoomSpec) -> Result<f64> {
    room.validate()?;
    if room.t60 <= 0.0 {
        return Err(Error::InvalidArgument("sabine reflection needs t60 > 0".into()));
    }
    let alpha = 0.161 * room.volume() / (room.t60 * room.surface());
    if alpha > 1.0 {
        return Err(Error::InfeasibleRoom(format!(
            "room {:?} cannot reach t60 = {} s (absorption {alpha:.4} > 1)",
            room.dims, room.t60
        )));
    }
    Ok((1.0 - alpha).sqrt().clamp(0.0, MAX_REFLECTION))
}

/// Smallest per-axis order whose images lie beyond the `t60 * c` horizon.
pub fn default_max_order(room: &RoomSpec) -> usize {
    let horizon = room.t60 * SPEED_OF_SOUND;
    let min_dim = room.dims.iter().cloned().fold(f64::INFINITY, f64::min);
    ((horizon / min_dim).ceil() as usize + 1).min(MAX_ORDER_CAP)
}

/// Image coordinates along one axis as `(offset, reflections)`, with the
/// image position being `sign * src + offset`.
fn axis_images(src: f64, len: f64, max_order: usize) -> Vec<(f64, i32)> {
    let n = max_order as i64;
    let mut out = Vec::new();
    for l in -n..=n {
        for u in 0..=1i64 {
            let refl = (l - u).abs() + l.abs();
            if refl as usize > max_order {
                continue;
            }
            let sign = if u == 0 { 1.0 } else { -1.0 };
            out.push((sign * src + 2.0 * l as f64 * len, refl as i32));
        }
    }
    out
}

/// Image-method RIR whose reflection coefficient is tuned so the measured
/// decay matches `room.t60`.
///
/// Sabine's formula is the starting point (and the feasibility check). A
/// shoebox image lattice decays more slowly than the diffuse-field model
/// predicts, so the coefficient is then refined with a few fixed-point steps
/// on `-ln(beta)`, which is roughly inversely proportional to the measured T60.
pub fn simulate_rir(room: &RoomSpec, geom: &Geometry, fs: u32, max_order: usize) -> Result<Rir> {
    room.validate()?;
    if room.t60 <= 0.0 || max_order == 0 {
        return simulate_rir_with_reflection(room, geom, fs, max_order, 0.0);
    }
    let sabine = sabine_reflection(room)?;
    let mut beta = sabine;
    let mut best: Option<(f64, Rir)> = None;
    for _ in 0..CALIBRATION_STEPS {
        let rir = simulate_rir_with_reflection(room, geom, fs, max_order, beta)?;
        let Ok(measured) = measure_t60(&rir) else {
            // Too little decay energy to measure: lengthen the tail.
            beta = (beta.sqrt()).min(MAX_REFLECTION);
            continue;
        };
        let miss = (measured / room.t60 - 1.0).abs();
        if best.as_ref().is_none_or(|(m, _)| miss < *m) {
            best = Some((miss, rir));
        }
        if miss <= CALIBRATION_TOLERANCE {
            break;
        }
        let log_beta = beta.max(1e-6).ln() * measured / room.t60;
        beta = log_beta.exp().clamp(1e-6, MAX_REFLECTION);
    }
    match best {
        Some((_, rir)) => Ok(rir),
        None => simulate_rir_with_reflection(room, geom, fs, max_order, sabine),
    }
}

/// Image-method RIR with a fixed uniform wall reflection coefficient.
pub fn simulate_rir_with_reflection(
    room: &RoomSpec,
    geom: &Geometry,
    fs: u32,
    max_order: usize,
    beta: f64,
) -> Result<Rir> {
    room.validate()?;
    geom.validate(room)?;
    if fs != SAMPLE_RATE {
        return Err(Error::InvalidArgument(format!("sample rate {fs} Hz unsupported")));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("reflection coefficient {beta} outside [0, 1)")));
    }
    let fs = fs as f64;
    let distance = geom.distance();
    let direct_delay = (distance * fs / SPEED_OF_SOUND).round() as usize;
    let len = ((room.t60 * fs).ceil() as usize).max(direct_delay + 1);
    let max_order = if beta == 0.0 { 0 } else { max_order };
    let max_dist = len as f64 * SPEED_OF_SOUND / fs;

    let axes: Vec<Vec<(f64, i32)>> = (0..3)
        .map(|a| {
            axis_images(geom.source[a], room.dims[a], max_order)
                .into_iter()
                .map(|(p, r)| (p - geom.mic[a], r))
                .collect()
        })
        .collect();
    let mut taps = vec![0.0; len];
    for &(dx, rx) in &axes[0] {
        if dx.abs() > max_dist {
            continue;
        }
        for &(dy, ry) in &axes[1] {
            let dxy = dx * dx + dy * dy;
            if dxy > max_dist * max_dist {
                continue;
            }
            for &(dz, rz) in &axes[2] {
                let d = (dxy + dz * dz).sqrt();
                let delay = (d * fs / SPEED_OF_SOUND).round() as usize;
                if delay >= len {
                    continue;
                }
                let order = rx + ry + rz;
                let gain = if order == 0 { 1.0 } else { beta.powi(order) };
                taps[delay] += gain / (4.0 * std::f64::consts::PI * d);
            }
        }
    }
    Ok(Rir {
        taps: Waveform::new(taps)?,
        direct_delay,
    })
}

/// Reverberation time from Schroeder backward integration, fitting the
/// -5 dB to -35 dB segment and doubling the resulting T30.
pub fn measure_t60(rir: &Rir) -> Result<f64> {
    let taps = rir.taps.samples();
    let mut edc: Vec<f64> = taps.iter().map(|t| t * t).collect();
    for i in (0..edc.len().saturating_sub(1)).rev() {
        edc[i] += edc[i + 1];
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if total <= 0.0 {
        return Err(Error::InvalidArgument("impulse response has zero energy".into()));
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|d| *d <= -5.0);
    let end = db.iter().position(|d| *d <= -35.0);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if e > s + 1 => (s, e),
        _ => {
            return Err(Error::DecayRange(format!(
                "-35 dB not reached within {} taps",
                taps.len()
            )))
        }
    };
    // Least-squares line through (t, dB) over the fit segment.
    let fs = SAMPLE_RATE as f64;
    let n = (end - start) as f64;
    let (mut st, mut sd, mut stt, mut std_) = (0.0, 0.0, 0.0, 0.0);
    for (i, d) in db.iter().enumerate().take(end).skip(start) {
        let t = i as f64 / fs;
        st += t;
        sd += d;
        stt += t * t;
        std_ += t * d;
    }
    let slope = (n * std_ - st * sd) / (n * stt - st * st);
    if slope >= 0.0 || !slope.is_finite() {
        return Err(Error::DecayRange("energy decay curve is not decreasing".into()));
    }
    let t30 = -30.0 / slope;
    Ok(2.0 * t30)
}

/// Draws a room, reverberation time and source/mic placement.
pub fn sample_scene<R: Rng>(rng: &mut R) -> Result<(RoomSpec, Geometry)> {
    let dims = [rng.gen_range(3.0..=8.0), rng.gen_range(3.0..=8.0), rng.gen_range(2.5..=4.0)];
    let t60 = rng.gen_range(0.2..=0.7);
    let room = RoomSpec::new(dims, t60)?;
    let mic = [
        rng.gen_range(0.5..=dims[0] - 0.5),
        rng.gen_range(0.5..=dims[1] - 0.5),
        rng.gen_range(0.5..=dims[2] - 0.5),
    ];
    let radius = rng.gen_range(0.10..=0.60);
    for _ in 0..MAX_SCENE_ATTEMPTS {
        // Uniform direction from a normalised Gaussian triple.
        let v: [f64; 3] = [
            rng.sample(rand_distr::StandardNormal),
            rng.sample(rand_distr::StandardNormal),
            rng.sample(rand_distr::StandardNormal),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm < 1e-12 {
            continue;
        }
        let source = [
            mic[0] + radius * v[0] / norm,
            mic[1] + radius * v[1] / norm,
            mic[2] + radius * v[2] / norm,
        ];
        if inside(source, dims, WALL_CLEARANCE) {
            return Ok((room, Geometry { source, mic }));
        }
    }
    Err(Error::InvalidArgument(format!(
        "no valid source position after {MAX_SCENE_ATTEMPTS} attempts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom(source: [f64; 3], mic: [f64; 3]) -> Geometry {
        Geometry { source, mic }
    }

    #[test]
    fn sabine_hand_value() {
        let room = RoomSpec::new([5.0, 4.0, 3.0], 0.5).unwrap();
        let alpha: f64 = 0.161 * 60.0 / (0.5 * 94.0);
        let beta = sabine_reflection(&room).unwrap();
        assert!((alpha - 0.20553).abs() < 1e-4);
        assert!((beta - 0.89132).abs() < 1e-4);
    }

    #[test]
    fn sabine_limits() {
        let room = RoomSpec::new([5.0, 4.0, 3.0], 2.0).unwrap();
        assert!(sabine_reflection(&room).unwrap() > 0.97);
        let small = RoomSpec::new([2.5, 2.5, 2.5], 0.05).unwrap();
        assert!(matches!(sabine_reflection(&small), Err(Error::InfeasibleRoom(_))));
        assert!(RoomSpec::new([2.0, 4.0, 3.0], 0.5).is_err());
    }

    #[test]
    fn anechoic_single_tap() {
        let room = RoomSpec::new([5.0, 4.0, 3.0], 0.5).unwrap();
        let g = geom([1.0, 1.0, 1.0], [1.343, 1.0, 1.0]);
        let rir = simulate_rir(&room, &g, 16_000, 0).unwrap();
        assert_eq!(rir.direct_delay, 16);
        let d = g.distance();
        let nonzero: Vec<usize> = (0..rir.taps.len()).filter(|i| rir.taps.samples()[*i] != 0.0).collect();
        assert_eq!(nonzero, vec![16]);
        assert!((rir.taps.samples()[16] - 1.0 / (4.0 * std::f64::consts::PI * d)).abs() < 1e-12);

        let dry = RoomSpec::new([5.0, 4.0, 3.0], 0.0).unwrap();
        let rir = simulate_rir(&dry, &g, 16_000, 10).unwrap();
        assert_eq!(rir.taps.len(), 17);
    }

    #[test]
    fn inverse_distance_law() {
        let room = RoomSpec::new([8.0, 8.0, 3.0], 0.3).unwrap();
        let a = simulate_rir(&room, &geom([2.0, 2.0, 1.5], [2.5, 2.0, 1.5]), 16_000, 0).unwrap();
        let b = simulate_rir(&room, &geom([2.0, 2.0, 1.5], [3.0, 2.0, 1.5]), 16_000, 0).unwrap();
        let ta = a.taps.samples()[a.direct_delay];
        let tb = b.taps.samples()[b.direct_delay];
        assert_eq!(ta, 2.0 * tb);
    }

    #[test]
    fn first_order_images_match_mirror_enumeration() {
        let room = RoomSpec::new([3.0, 2.7, 2.5], 0.4).unwrap();
        let g = geom([1.0, 0.8, 1.2], [2.1, 1.9, 0.7]);
        let beta = sabine_reflection(&room).unwrap();
        let rir = simulate_rir_with_reflection(&room, &g, 16_000, 1, beta).unwrap();
        // Per axis: the source itself, its mirror in the wall at 0 and its
        // mirror in the far wall.
        let mut oracle = vec![0.0; rir.taps.len()];
        let mut count = 0;
        let mirrors = |s: f64, l: f64| [(s, 0), (-s, 1), (2.0 * l - s, 1)];
        for (x, rx) in mirrors(g.source[0], room.dims[0]) {
            for (y, ry) in mirrors(g.source[1], room.dims[1]) {
                for (z, rz) in mirrors(g.source[2], room.dims[2]) {
                    count += 1;
                    let d = dist([x, y, z], g.mic);
                    let delay = (d * 16_000.0 / SPEED_OF_SOUND).round() as usize;
                    oracle[delay] += beta.powi(rx + ry + rz) / (4.0 * std::f64::consts::PI * d);
                }
            }
        }
        assert_eq!(count, 27);
        for (a, b) in rir.taps.samples().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_and_energy_monotone_in_absorption() {
        let g = geom([2.0, 2.0, 1.5], [2.3, 2.2, 1.4]);
        let energy = |t60: f64| {
            let room = RoomSpec::new([6.0, 5.0, 3.0], t60).unwrap();
            let beta = sabine_reflection(&room).unwrap();
            let r = simulate_rir_with_reflection(&room, &g, 16_000, 8, beta).unwrap();
            let r2 = simulate_rir_with_reflection(&room, &g, 16_000, 8, beta).unwrap();
            assert_eq!(simulate_rir(&room, &g, 16_000, 8).unwrap(), simulate_rir(&room, &g, 16_000, 8).unwrap());
            assert_eq!(r, r2);
            r.taps.samples().iter().map(|t| t * t).sum::<f64>()
        };
        // Higher t60 means lower absorption.
        let e = [energy(0.2), energy(0.4), energy(0.6)];
        assert!(e[0] <= e[1] && e[1] <= e[2], "{e:?}");
    }

    #[test]
    fn t60_of_synthetic_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // -60 dB over 0.4 s in energy: amplitude envelope 10^(-3 t / 0.4).
        let taps: Vec<f64> = (0..16_000)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                rng.sample::<f64, _>(rand_distr::StandardNormal) * 10f64.powf(-3.0 * t / 0.4)
            })
            .collect();
        let rir = Rir {
            taps: Waveform::new(taps).unwrap(),
            direct_delay: 0,
        };
        let t60 = measure_t60(&rir).unwrap();
        assert!((t60 - 0.4).abs() < 0.04, "{t60}");
    }

    #[test]
    fn t60_of_single_impulse_fails() {
        assert!(matches!(measure_t60(&Rir::identity()), Err(Error::DecayRange(_))));
    }

    #[test]
    fn simulated_t60_close_to_target() {
        let room = RoomSpec::new([6.0, 5.0, 3.0], 0.5).unwrap();
        let g = geom([2.0, 2.5, 1.5], [2.4, 2.6, 1.4]);
        let rir = simulate_rir(&room, &g, 16_000, default_max_order(&room)).unwrap();
        let t60 = measure_t60(&rir).unwrap();
        assert!((t60 - 0.5).abs() <= 0.1, "{t60}");
        let small = RoomSpec::new([2.5, 2.5, 2.5], 0.05).unwrap();
        let g = geom([1.0, 1.0, 1.0], [1.2, 1.1, 1.0]);
        assert!(matches!(simulate_rir(&small, &g, 16_000, 5), Err(Error::InfeasibleRoom(_))));
    }

    #[test]
    fn scenes_respect_ranges_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for _ in 0..10_000 {
            let (room, g) = sample_scene(&mut rng).unwrap();
            assert!((0.2..=0.7).contains(&room.t60));
            let d = g.distance();
            assert!((0.10 - 1e-12..=0.60 + 1e-12).contains(&d));
            g.validate(&room).unwrap();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        assert!(lo < 0.11 && hi > 0.59, "{lo} {hi}");
        let a = sample_scene(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_scene(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}
