//! Stationary, jointly Gaussian probe/conjugate fluctuation traces with a
//! prescribed 2x2 cross-spectral density, built by frequency-domain coloring:
//! white noise is transformed, each frequency bin is multiplied by the
//! symmetric square root of the spectral matrix, and the result is
//! transformed back. The matrix is real and even in frequency, so Hermitian
//! symmetry (and real traces) is preserved.
//!
//! Units: a white spectrum of level 1 corresponds to unit variance per
//! sample. Only ratios against the shot-noise reference are ever reported.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sqz::spectral::{SpectralError, SpectrumModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSimParams {
    /// Sample spacing, seconds.
    pub dt: f64,
    /// Detection window `t_d` per frame, seconds.
    pub duration: f64,
    /// Start-to-start delay between the two frames, seconds.
    pub frame_gap: f64,
    pub n_trials: usize,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("invalid temporal parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

impl TemporalSimParams {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::InvalidParameter(m));
        if !(self.dt > 0.0) {
            return bad(format!("dt = {}", self.dt));
        }
        if !(self.duration >= 4.0 * self.dt) {
            return bad(format!(
                "duration {} must span several samples of {}",
                self.duration, self.dt
            ));
        }
        if !(self.frame_gap >= self.duration) {
            return bad(format!(
                "frame_gap {} shorter than duration {}",
                self.frame_gap, self.duration
            ));
        }
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1".into());
        }
        Ok(())
    }

    /// Power-of-two trace length covering both frame windows twice over, so
    /// the circular wrap-around separation is at least the frame gap.
    pub fn n_samples(&self) -> usize {
        let span = 2.0 * (self.frame_gap + self.duration) / self.dt;
        (span.ceil() as usize).next_power_of_two()
    }
}

/// One trial: colored traces plus the white noise they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePair {
    pub dn_p: Vec<f64>,
    pub dn_c: Vec<f64>,
    /// Shot-noise reference built from the same white noise (uncorrelated,
    /// white at the model's shot-noise levels).
    pub ref_p: Vec<f64>,
    pub ref_c: Vec<f64>,
}

/// Reusable coloring filter for one (model, grid).
pub struct TraceSynth {
    n: usize,
    dt: f64,
    /// Symmetric square root `[[a, b], [b, d]]` per frequency bin.
    coloring: Vec<[f64; 3]>,
    ref_scale: (f64, f64),
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Symmetric square root of a PSD 2x2 matrix:
/// `sqrt(M) = (M + sqrt(det) I) / sqrt(tr + 2 sqrt(det))`.
fn sqrt_psd_2x2(a: f64, b: f64, d: f64) -> [f64; 3] {
    let det = (a * d - b * b).max(0.0);
    let s = det.sqrt();
    let t = (a + d + 2.0 * s).max(0.0).sqrt();
    if t == 0.0 {
        return [0.0, 0.0, 0.0];
    }
    [(a + s) / t, b / t, (d + s) / t]
}

impl TraceSynth {
    pub fn new(model: &SpectrumModel, params: &TemporalSimParams) -> Result<Self, TraceError> {
        params.validate()?;
        model.validate()?;
        let n = params.n_samples();
        let df = 2.0 * PI / (n as f64 * params.dt);
        let mut coloring = Vec::with_capacity(n);
        for k in 0..n {
            let signed = if k <= n / 2 {
                k as f64
            } else {
                k as f64 - n as f64
            };
            let omega = signed * df;
            let pt = model.at(omega);
            if !pt.is_psd() {
                return Err(SpectralError::NotPositiveSemidefinite { omega }.into());
            }
            coloring.push(sqrt_psd_2x2(pt.s_p, pt.s_pc, pt.s_c));
        }
        let pt0 = model.at(0.0);
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            dt: params.dt,
            coloring,
            ref_scale: (pt0.sn_p.sqrt(), pt0.sn_c.sqrt()),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Deterministic trial `index` of the stream keyed by `seed`.
    pub fn trial(&self, seed: u64, index: usize) -> TracePair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((2u64 << 60) | index as u64);
        let mut wp: Vec<f64> = (0..self.n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut wc: Vec<f64> = (0..self.n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();

        let mut sp: Vec<Complex64> = wp.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut sc: Vec<Complex64> = wc.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut sp);
        self.forward.process(&mut sc);
        for ((p, c), &[a, b, d]) in sp.iter_mut().zip(sc.iter_mut()).zip(&self.coloring) {
            let (xp, xc) = (*p, *c);
            *p = xp * a + xc * b;
            *c = xp * b + xc * d;
        }
        self.inverse.process(&mut sp);
        self.inverse.process(&mut sc);
        let scale = 1.0 / self.n as f64;
        let dn_p = sp.iter().map(|z| z.re * scale).collect();
        let dn_c = sc.iter().map(|z| z.re * scale).collect();

        for v in &mut wp {
            *v *= self.ref_scale.0;
        }
        for v in &mut wc {
            *v *= self.ref_scale.1;
        }
        TracePair {
            dn_p,
            dn_c,
            ref_p: wp,
            ref_c: wc,
        }
    }
}

/// All `n_trials` trace pairs for `model`.
pub fn simulate_temporal_traces(
    model: &SpectrumModel,
    params: &TemporalSimParams,
) -> Result<Vec<TracePair>, TraceError> {
    use rayon::prelude::*;
    let synth = TraceSynth::new(model, params)?;
    Ok((0..params.n_trials)
        .into_par_iter()
        .map(|i| synth.trial(params.seed, i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_trials: usize) -> TemporalSimParams {
        TemporalSimParams {
            dt: 10e-9,
            duration: 1e-6,
            frame_gap: 20e-6,
            n_trials,
            seed: 5,
        }
    }

    #[test]
    fn zero_dt_rejected() {
        let p = TemporalSimParams {
            dt: 0.0,
            ..params(1)
        };
        assert!(matches!(
            TraceSynth::new(&SpectrumModel::coherent(), &p),
            Err(TraceError::InvalidParameter(_))
        ));
    }

    #[test]
    fn non_psd_rejected() {
        let m = SpectrumModel::Tabulated {
            omega: vec![0.0],
            s_p: vec![1.0],
            s_c: vec![1.0],
            s_pc: vec![1.2],
            sn_p: 1.0,
            sn_c: 1.0,
        };
        // validate() catches it before the grid scan
        assert!(TraceSynth::new(&m, &params(1)).is_err());
    }

    #[test]
    fn sqrt_is_a_square_root() {
        for (a, b, d) in [
            (1.0, 0.3, 2.0),
            (1.0, 1.0, 1.0),
            (2.0, -0.5, 0.5),
            (0.0, 0.0, 3.0),
        ] {
            let [p, q, r] = sqrt_psd_2x2(a, b, d);
            assert!((p * p + q * q - a).abs() < 1e-12);
            assert!((p * q + q * r - b).abs() < 1e-12);
            assert!((q * q + r * r - d).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_white_traces_uncorrelated() {
        let traces = simulate_temporal_traces(&SpectrumModel::coherent(), &params(1)).unwrap();
        let t = &traces[0];
        let n = t.dn_p.len() as f64;
        let dot: f64 = t.dn_p.iter().zip(&t.dn_c).map(|(a, b)| a * b).sum();
        let np: f64 = t.dn_p.iter().map(|a| a * a).sum();
        let nc: f64 = t.dn_c.iter().map(|a| a * a).sum();
        let r = dot / (np * nc).sqrt();
        assert!(r.abs() < 4.0 / n.sqrt(), "r = {r}");
        // coherent model: coloring is the identity
        for (a, b) in t.dn_p.iter().zip(&t.ref_p) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn difference_periodogram_matches_model() {
        // Averaged periodogram of dn_p - dn_c against S_p + S_c - 2 S_pc,
        // compared band by band with the Monte Carlo standard error.
        let gamma = 2.0 * PI * 1e6;
        let model = SpectrumModel::LorentzianDiff { nr0: 0.3, gamma };
        let p = params(200);
        let traces = simulate_temporal_traces(&model, &p).unwrap();
        let n = p.n_samples();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let df = 2.0 * PI / (n as f64 * p.dt);
        let band = 32usize;
        let n_bands = 40;
        let mut per_trial = vec![vec![0.0; n_bands]; traces.len()];
        for (t, row) in traces.iter().zip(&mut per_trial) {
            let mut buf: Vec<Complex64> = t
                .dn_p
                .iter()
                .zip(&t.dn_c)
                .map(|(a, b)| Complex64::new(a - b, 0.0))
                .collect();
            fft.process(&mut buf);
            for (bi, slot) in row.iter_mut().enumerate() {
                let lo = 1 + bi * band;
                *slot = (lo..lo + band)
                    .map(|k| buf[k].norm_sqr() / n as f64)
                    .sum::<f64>()
                    / band as f64;
            }
        }
        for bi in 0..n_bands {
            let vals: Vec<f64> = per_trial.iter().map(|r| r[bi]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (vals.len() - 1) as f64)
                .sqrt();
            let se = sd / (vals.len() as f64).sqrt();
            let lo = 1 + bi * band;
            let expected = (lo..lo + band)
                .map(|k| {
                    let s = model.at(k as f64 * df);
                    s.s_p + s.s_c - 2.0 * s.s_pc
                })
                .sum::<f64>()
                / band as f64;
            assert!(
                (mean - expected).abs() < 3.0 * se.max(1e-12) + 1e-9,
                "band {bi}: {mean} vs {expected} (se {se})"
            );
        }
    }
}
