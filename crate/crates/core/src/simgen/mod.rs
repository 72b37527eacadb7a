//! Seeded Monte Carlo generators.
//!
//! Image acquisitions come from an explicit photon-pair model: each frame
//! holds `K ~ Poisson(mu)` pairs, the probe photon lands according to the
//! beam profile, its partner lands at the same point (near field) or the
//! point mirrored through the frame center (far field) plus Gaussian jitter,
//! and each photon survives detection independently. Every frame draws from
//! its own ChaCha stream keyed by `(seed, acquisition, frame)`, so output is
//! independent of the rayon thread count.
//!
//! [`temporal`] synthesizes jointly Gaussian probe/conjugate photocurrent
//! fluctuations with a prescribed cross-spectral density.

mod poisson;
pub mod temporal;

pub use poisson::sample_poisson;
pub use temporal::{
    simulate_temporal_traces, TemporalSimParams, TraceError, TracePair, TraceSynth,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::stackio::{AcquisitionSet, FieldMode, Frame};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation parameter: {0}")]
    InvalidParameter(String),
}

/// Mean intensity profile of the probe beam on the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BeamProfile {
    /// Round Gaussian spot; `center` defaults to the frame center.
    Gaussian {
        #[serde(default)]
        center: Option<[f64; 2]>,
        sigma_beam_px: f64,
    },
    /// Uniform illumination over the whole frame.
    Flat,
}

/// How many pairs a frame holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PairCount {
    #[default]
    Poisson,
    /// Exactly `round(pairs_per_frame)` pairs.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub mode: FieldMode,
    pub width: usize,
    pub height: usize,
    pub mean_profile: BeamProfile,
    /// Expected number of generated pairs per frame.
    pub pairs_per_frame: f64,
    #[serde(default)]
    pub pair_count: PairCount,
    /// Per-axis standard deviation (x, y) of the partner offset, in pixels.
    pub jitter_sigma: [f64; 2],
    pub eta_p: f64,
    pub eta_c: f64,
    /// Mean background counts per pixel per frame.
    pub bg_rate: f64,
    pub n_acquisitions: usize,
    pub seed: u64,
    /// Record one probe-off background frame per beam and acquisition.
    #[serde(default = "yes")]
    pub record_background: bool,
    #[serde(default = "default_pixel_size")]
    pub pixel_size_s: f64,
    #[serde(default = "default_frame_interval")]
    pub frame_interval: f64,
    #[serde(default = "default_exposure")]
    pub exposure: f64,
}

fn yes() -> bool {
    true
}
fn default_pixel_size() -> f64 {
    16e-6
}
fn default_frame_interval() -> f64 {
    60e-6
}
fn default_exposure() -> f64 {
    1e-6
}

impl SimParams {
    /// Near-field geometry whose fitted cross-correlation widths land near
    /// 4.27 x 3.52 px (jitter combined in quadrature with the 1/6 px^2
    /// pixelization term).
    pub fn paper_near_field(seed: u64) -> Self {
        Self {
            mode: FieldMode::NearField,
            width: 160,
            height: 160,
            mean_profile: BeamProfile::Gaussian {
                center: None,
                sigma_beam_px: 45.0,
            },
            pairs_per_frame: 5e5,
            pair_count: PairCount::Poisson,
            jitter_sigma: [
                (4.27f64 * 4.27 - 1.0 / 6.0).sqrt(),
                (3.52f64 * 3.52 - 1.0 / 6.0).sqrt(),
            ],
            eta_p: 0.7,
            eta_c: 0.7,
            bg_rate: 0.5,
            n_acquisitions: 200,
            seed,
            record_background: true,
            pixel_size_s: default_pixel_size(),
            frame_interval: default_frame_interval(),
            exposure: default_exposure(),
        }
    }

    /// Far-field counterpart landing near 4.78 x 4.90 px.
    pub fn paper_far_field(seed: u64) -> Self {
        Self {
            mode: FieldMode::FarField,
            jitter_sigma: [
                (4.78f64 * 4.78 - 1.0 / 6.0).sqrt(),
                (4.90f64 * 4.90 - 1.0 / 6.0).sqrt(),
            ],
            ..Self::paper_near_field(seed)
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidParameter(msg));
        if self.width == 0 || self.height == 0 {
            return bad(format!("frame {}x{}", self.width, self.height));
        }
        if self.n_acquisitions == 0 {
            return bad("n_acquisitions must be at least 1".into());
        }
        for (name, eta) in [("eta_p", self.eta_p), ("eta_c", self.eta_c)] {
            if !(0.0..=1.0).contains(&eta) {
                return bad(format!("{name} = {eta} outside [0, 1]"));
            }
        }
        if !(self.pairs_per_frame >= 0.0) || !self.pairs_per_frame.is_finite() {
            return bad(format!("pairs_per_frame = {}", self.pairs_per_frame));
        }
        if self.jitter_sigma.iter().any(|s| !(*s >= 0.0)) {
            return bad(format!("jitter_sigma = {:?}", self.jitter_sigma));
        }
        if !(self.bg_rate >= 0.0) {
            return bad(format!("bg_rate = {}", self.bg_rate));
        }
        if let BeamProfile::Gaussian { sigma_beam_px, .. } = self.mean_profile {
            if !(sigma_beam_px > 0.0) {
                return bad(format!("sigma_beam_px = {sigma_beam_px}"));
            }
        }
        if !(self.pixel_size_s > 0.0) {
            return bad(format!("pixel_size_s = {}", self.pixel_size_s));
        }
        Ok(())
    }

    fn sample_position<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        match self.mean_profile {
            BeamProfile::Gaussian {
                center,
                sigma_beam_px,
            } => {
                let [cx, cy] =
                    center.unwrap_or([self.width as f64 / 2.0, self.height as f64 / 2.0]);
                let gx: f64 = rng.sample(StandardNormal);
                let gy: f64 = rng.sample(StandardNormal);
                (cx + sigma_beam_px * gx, cy + sigma_beam_px * gy)
            }
            BeamProfile::Flat => (
                rng.random::<f64>() * self.width as f64,
                rng.random::<f64>() * self.height as f64,
            ),
        }
    }

    /// Mirror through the frame center: pixel `i` maps to pixel `W-1-i`.
    fn partner_center(&self, x: f64, y: f64) -> (f64, f64) {
        match self.mode {
            FieldMode::NearField => (x, y),
            FieldMode::FarField => (self.width as f64 - x, self.height as f64 - y),
        }
    }

    fn pair_count<R: Rng>(&self, rng: &mut R) -> u64 {
        match self.pair_count {
            PairCount::Poisson => sample_poisson(rng, self.pairs_per_frame),
            PairCount::Fixed => self.pairs_per_frame.round() as u64,
        }
    }

    /// Expected mean profile mass in pixel `(px, py)` (probe beam).
    pub fn profile_mass(&self, px: usize, py: usize) -> f64 {
        match self.mean_profile {
            BeamProfile::Flat => 1.0 / (self.width * self.height) as f64,
            BeamProfile::Gaussian {
                center,
                sigma_beam_px,
            } => {
                let [cx, cy] =
                    center.unwrap_or([self.width as f64 / 2.0, self.height as f64 / 2.0]);
                let cell = |lo: f64, c: f64| {
                    let s = sigma_beam_px * std::f64::consts::SQRT_2;
                    0.5 * (erfc((lo - c) / s) - erfc((lo + 1.0 - c) / s))
                };
                cell(px as f64, cx) * cell(py as f64, cy)
            }
        }
    }
}

const STREAM_TWIN: u64 = 0;
const STREAM_COHERENT: u64 = 1;

fn frame_rng(seed: u64, kind: u64, acquisition: usize, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 60) | ((acquisition as u64) << 4) | slot);
    rng
}

#[inline]
fn deposit(frame: &mut Frame<f32>, x: f64, y: f64) {
    if x >= 0.0 && y >= 0.0 {
        let (px, py) = (x as usize, y as usize);
        if px < frame.width() && py < frame.height() {
            let v = frame.get(px, py);
            frame.set(px, py, v + 1.0);
        }
    }
}

fn add_background<R: Rng>(frame: &mut Frame<f32>, rate: f64, rng: &mut R) {
    if rate > 0.0 {
        for v in frame.data_mut() {
            *v += sample_poisson(rng, rate) as f32;
        }
    }
}

fn twin_frames(p: &SimParams, rng: &mut ChaCha8Rng) -> (Frame<f32>, Frame<f32>) {
    let mut probe = Frame::filled(p.width, p.height, 0.0f32);
    let mut conj = Frame::filled(p.width, p.height, 0.0f32);
    let [sx, sy] = p.jitter_sigma;
    for _ in 0..p.pair_count(rng) {
        let (xp, yp) = p.sample_position(rng);
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        let (mx, my) = p.partner_center(xp, yp);
        let (xc, yc) = (mx + sx * ex, my + sy * ey);
        if rng.random::<f64>() < p.eta_p {
            deposit(&mut probe, xp, yp);
        }
        if rng.random::<f64>() < p.eta_c {
            deposit(&mut conj, xc, yc);
        }
    }
    add_background(&mut probe, p.bg_rate, rng);
    add_background(&mut conj, p.bg_rate, rng);
    (probe, conj)
}

fn background_frames(p: &SimParams, rng: &mut ChaCha8Rng) -> (Frame<f32>, Frame<f32>) {
    let mut bp = Frame::filled(p.width, p.height, 0.0f32);
    let mut bc = Frame::filled(p.width, p.height, 0.0f32);
    add_background(&mut bp, p.bg_rate, rng);
    add_background(&mut bc, p.bg_rate, rng);
    (bp, bc)
}

fn simulate_one(p: &SimParams, kind: u64, index: usize) -> AcquisitionSet {
    let frames = |slot: u64| {
        let mut rng = frame_rng(p.seed, kind, index, slot);
        if kind == STREAM_TWIN {
            twin_frames(p, &mut rng)
        } else {
            coherent_frames(p, &mut rng)
        }
    };
    let (probe_f1, conj_f1) = frames(0);
    let (probe_f2, conj_f2) = frames(1);
    let (bg_probe, bg_conj) = if p.record_background {
        let mut rng = frame_rng(p.seed, kind, index, 2);
        let (bp, bc) = background_frames(p, &mut rng);
        (Some(bp), Some(bc))
    } else {
        (None, None)
    };
    AcquisitionSet {
        probe_f1,
        probe_f2,
        conj_f1,
        conj_f2,
        bg_probe,
        bg_conj,
    }
}

/// Twin-beam acquisitions from the photon-pair model.
pub fn simulate_acquisitions(params: &SimParams) -> Result<Vec<AcquisitionSet>, SimError> {
    params.validate()?;
    Ok((0..params.n_acquisitions)
        .into_par_iter()
        .map(|i| simulate_one(params, STREAM_TWIN, i))
        .collect())
}

fn coherent_frames(p: &SimParams, rng: &mut ChaCha8Rng) -> (Frame<f32>, Frame<f32>) {
    let mut probe = Frame::filled(p.width, p.height, 0.0f32);
    let mut conj = Frame::filled(p.width, p.height, 0.0f32);
    for _ in 0..p.pair_count(rng) {
        let (x, y) = p.sample_position(rng);
        deposit(&mut probe, x, y);
    }
    for _ in 0..p.pair_count(rng) {
        let (x, y) = p.sample_position(rng);
        let (mx, my) = p.partner_center(x, y);
        deposit(&mut conj, mx, my);
    }
    add_background(&mut probe, p.bg_rate, rng);
    add_background(&mut conj, p.bg_rate, rng);
    (probe, conj)
}

/// Shot-noise calibration: probe and conjugate are independent Poisson fields
/// with the same mean profile (mirrored in the far field). Detection
/// efficiencies and jitter are ignored.
pub fn simulate_coherent_pair(params: &SimParams) -> Result<Vec<AcquisitionSet>, SimError> {
    params.validate()?;
    Ok((0..params.n_acquisitions)
        .into_par_iter()
        .map(|i| simulate_one(params, STREAM_COHERENT, i))
        .collect())
}

/// Large-bin noise ratio of the pair model: `1 - 2 eta_p eta_c / (eta_p + eta_c)`.
pub fn expected_nr(eta_p: f64, eta_c: f64) -> f64 {
    let sum = eta_p + eta_c;
    if sum <= 0.0 {
        return 1.0;
    }
    1.0 - 2.0 * eta_p * eta_c / sum
}

/// Probability that a pair with a locally uniform probe position and a
/// Gaussian partner offset of standard deviation `sigma` lands in the same
/// bin of width `k` along one axis: `1 - E[min(|e|, k)] / k`.
pub fn same_bin_probability(sigma: f64, k: usize) -> f64 {
    if sigma <= 0.0 {
        return 1.0;
    }
    let k = k as f64;
    let z = k / (sigma * std::f64::consts::SQRT_2);
    let mean_abs_truncated =
        sigma * (2.0 / std::f64::consts::PI).sqrt() * (1.0 - (-z * z).exp()) + k * erfc(z);
    1.0 - mean_abs_truncated / k
}

/// Noise ratio of the pair model at bin size `k`, including pairs split
/// across super-pixel boundaries by the jitter (no background).
pub fn expected_nr_binned(eta_p: f64, eta_c: f64, jitter_sigma: [f64; 2], k: usize) -> f64 {
    let sum = eta_p + eta_c;
    if sum <= 0.0 {
        return 1.0;
    }
    let captured =
        same_bin_probability(jitter_sigma[0], k) * same_bin_probability(jitter_sigma[1], k);
    1.0 - 2.0 * eta_p * eta_c * captured / sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stackio::rotate180;

    fn small(mode: FieldMode) -> SimParams {
        SimParams {
            mode,
            width: 40,
            height: 30,
            mean_profile: BeamProfile::Gaussian {
                center: None,
                sigma_beam_px: 10.0,
            },
            pairs_per_frame: 5000.0,
            pair_count: PairCount::Poisson,
            jitter_sigma: [0.0, 0.0],
            eta_p: 1.0,
            eta_c: 1.0,
            bg_rate: 0.0,
            n_acquisitions: 3,
            seed: 11,
            record_background: true,
            pixel_size_s: 16e-6,
            frame_interval: 60e-6,
            exposure: 1e-6,
        }
    }

    #[test]
    fn perfect_correlation_limit() {
        let p = SimParams {
            pair_count: PairCount::Fixed,
            ..small(FieldMode::NearField)
        };
        for a in simulate_acquisitions(&p).unwrap() {
            assert_eq!(a.probe_f1, a.conj_f1);
            assert_eq!(a.probe_f2, a.conj_f2);
            // in-frame fraction of a σ=10 beam centred in 40x30:
            // erf(2/√2)·erf(1.5/√2) = 0.8270, binomial sd ≈ 27 photons
            let s = a.probe_f1.sum();
            assert!((s - 4135.0).abs() < 150.0, "{s}");
        }
    }

    #[test]
    fn far_field_partner_is_mirrored() {
        let p = small(FieldMode::FarField);
        for a in simulate_acquisitions(&p).unwrap() {
            assert_eq!(rotate180(&a.conj_f1), a.probe_f1);
            assert_eq!(rotate180(&a.conj_f2), a.probe_f2);
        }
    }

    #[test]
    fn backgrounds_only_hold_background() {
        let p = SimParams {
            bg_rate: 0.0,
            ..small(FieldMode::NearField)
        };
        let a = &simulate_acquisitions(&p).unwrap()[0];
        assert_eq!(a.bg_probe.as_ref().unwrap().sum(), 0.0);
        let p = SimParams {
            bg_rate: 3.0,
            pairs_per_frame: 0.0,
            ..small(FieldMode::NearField)
        };
        let a = &simulate_acquisitions(&p).unwrap()[0];
        let bg = a.bg_probe.as_ref().unwrap();
        assert!((bg.mean() - 3.0).abs() < 0.2);
    }

    #[test]
    fn zero_profile_gives_zero_frames() {
        let p = SimParams {
            pairs_per_frame: 0.0,
            ..small(FieldMode::NearField)
        };
        for a in simulate_coherent_pair(&p).unwrap() {
            assert_eq!(a.probe_f1.sum() + a.conj_f2.sum(), 0.0);
        }
    }

    #[test]
    fn deterministic_per_stream() {
        let p = small(FieldMode::NearField);
        let a = simulate_acquisitions(&p).unwrap();
        let b = simulate_acquisitions(&p).unwrap();
        assert_eq!(a, b);
        let q = SimParams {
            n_acquisitions: 1,
            ..p.clone()
        };
        // acquisition 0 does not depend on how many others are generated
        assert_eq!(simulate_acquisitions(&q).unwrap()[0], a[0]);
        assert_ne!(a[0].probe_f1, a[1].probe_f1);
    }

    #[test]
    fn validation() {
        let mut p = small(FieldMode::NearField);
        p.eta_c = 1.5;
        assert!(p.validate().is_err());
        p.eta_c = 0.5;
        p.n_acquisitions = 0;
        assert!(p.validate().is_err());
        p.n_acquisitions = 1;
        p.jitter_sigma = [-1.0, 0.0];
        assert!(p.validate().is_err());
    }

    #[test]
    fn expected_nr_values() {
        assert_eq!(expected_nr(1.0, 1.0), 0.0);
        assert!((expected_nr(0.8, 0.8) - 0.2).abs() < 1e-15);
        assert!((expected_nr(0.7, 0.9) - 0.2125).abs() < 1e-15);
        assert_eq!(expected_nr(0.0, 0.0), 1.0);
    }

    #[test]
    fn same_bin_probability_oracle() {
        // brute-force: uniform position in [0, k), Gaussian offset
        use rand_distr::Distribution;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = rand_distr::Normal::new(0.0, 3.0).unwrap();
        let k = 8usize;
        let n = 400_000;
        let hits = (0..n)
            .filter(|_| {
                let u = rng.random::<f64>() * k as f64;
                let v = u + normal.sample(&mut rng);
                (0.0..k as f64).contains(&v)
            })
            .count();
        let mc = hits as f64 / n as f64;
        let exact = same_bin_probability(3.0, k);
        assert!((mc - exact).abs() < 4.0 * (exact * (1.0 - exact) / n as f64).sqrt());
        assert_eq!(same_bin_probability(0.0, 4), 1.0);
        assert!(expected_nr_binned(0.8, 0.8, [0.0, 0.0], 2) - 0.2 < 1e-15);
    }

    #[test]
    fn profile_mass_sums_to_one() {
        let p = SimParams {
            width: 200,
            height: 200,
            ..small(FieldMode::NearField)
        };
        let total: f64 = (0..200)
            .flat_map(|y| (0..200).map(move |x| (x, y)))
            .map(|(x, y)| p.profile_mass(x, y))
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
