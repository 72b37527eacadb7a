//! Binned spatial noise ratio of frame-differenced twin-beam images, and its
//! prediction from temporal squeezing spectra.

pub mod spectral;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simgen::{TemporalSimParams, TraceError, TraceSynth};
use crate::stackio::{bin_superpixels, crop, AcquisitionSet, AnalysisRegion, Frame, StackError};

pub use spectral::{
    pulse_filter, spectral_nr_predict, spectral_nr_predict_pixels, symmetric_grid, trapezoid,
    PulseProfile, QuadratureStats, SpectralError, SpectralPoint, SpectrumModel,
};

#[derive(Debug, Error)]
pub enum SqzError {
    #[error("only {0} super-pixel(s); need at least 2")]
    TooFewSuperpixels(usize),
    #[error("need at least 2 acquisitions, got {0}")]
    TooFewAcquisitions(usize),
    #[error("empty bin list")]
    EmptyBins,
    #[error("background correction requested but the acquisition has no background frames")]
    MissingBackground,
    #[error("shot-noise denominator is not positive ({0})")]
    NonPositiveMean(f64),
    #[error("noise ratio must be positive, got {0}")]
    NonPositiveNr(f64),
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrPoint {
    pub bin_k: usize,
    pub nr: f64,
    pub sem: f64,
    pub background_corrected: bool,
}

fn binned(frame: &Frame<f32>, region: &AnalysisRegion, k: usize) -> Result<Vec<f64>, SqzError> {
    Ok(bin_superpixels(&crop(&frame.to_f64(), region)?, k)?.into_data())
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// `Var(D) / Mean(S)` over the super-pixels of `region`, with
/// `D = (P1 - P2) - (C1 - C2)` and `S = P1 + P2 + C1 + C2`.
///
/// Background correction removes the background's share from both sides:
/// each of the four frames carries one independent background realisation,
/// so `Var(D)` is reduced by `2 Var(Bp) + 2 Var(Bc)` and `Mean(S)` by
/// `2 Mean(Bp) + 2 Mean(Bc)`, using the spatial statistics of the recorded
/// background frames. (Subtracting a single background frame from every
/// signal frame would cancel in `D` and only shrink the denominator.)
pub fn noise_ratio(
    acq: &AcquisitionSet,
    region: &AnalysisRegion,
    k: usize,
    background_correct: bool,
) -> Result<f64, SqzError> {
    let p1 = binned(&acq.probe_f1, region, k)?;
    let p2 = binned(&acq.probe_f2, region, k)?;
    let c1 = binned(&acq.conj_f1, region, k)?;
    let c2 = binned(&acq.conj_f2, region, k)?;
    let n = p1.len();
    if n < 2 {
        return Err(SqzError::TooFewSuperpixels(n));
    }
    let d: Vec<f64> = (0..n).map(|i| (p1[i] - p2[i]) - (c1[i] - c2[i])).collect();
    let s: Vec<f64> = (0..n).map(|i| p1[i] + p2[i] + c1[i] + c2[i]).collect();
    let (_, mut var_d) = mean_var(&d);
    let (mut mean_s, _) = mean_var(&s);
    if background_correct {
        let (Some(bp), Some(bc)) = (&acq.bg_probe, &acq.bg_conj) else {
            return Err(SqzError::MissingBackground);
        };
        let (mp, vp) = mean_var(&binned(bp, region, k)?);
        let (mc, vc) = mean_var(&binned(bc, region, k)?);
        var_d -= 2.0 * (vp + vc);
        mean_s -= 2.0 * (mp + mc);
    }
    if !(mean_s > 0.0) {
        return Err(SqzError::NonPositiveMean(mean_s));
    }
    Ok((var_d / mean_s).max(0.0))
}

/// Mean noise ratio over acquisitions, with SEM = sd / sqrt(n), per bin size.
pub fn nr_curve(
    acqs: &[AcquisitionSet],
    region: &AnalysisRegion,
    bins: &[usize],
    background_correct: bool,
) -> Result<Vec<NrPoint>, SqzError> {
    if bins.is_empty() {
        return Err(SqzError::EmptyBins);
    }
    if acqs.len() < 2 {
        return Err(SqzError::TooFewAcquisitions(acqs.len()));
    }
    bins.iter()
        .map(|&k| {
            let nrs = acqs
                .par_iter()
                .map(|a| noise_ratio(a, region, k, background_correct))
                .collect::<Result<Vec<_>, _>>()?;
            let (mean, var) = mean_var(&nrs);
            Ok(NrPoint {
                bin_k: k,
                nr: mean,
                sem: (var / nrs.len() as f64).sqrt(),
                background_corrected: background_correct,
            })
        })
        .collect()
}

/// Positive dB means squeezing.
pub fn nr_to_db(nr: f64) -> Result<f64, SqzError> {
    if !(nr > 0.0) {
        return Err(SqzError::NonPositiveNr(nr));
    }
    Ok(-10.0 * nr.log10())
}

pub fn db_to_nr(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Beam-splitter loss: a fraction `1 - eta` of the light is replaced by vacuum.
pub fn apply_detection_loss(nr: f64, eta: f64) -> f64 {
    1.0 - eta * (1.0 - nr)
}

/// Monte Carlo estimate of the noise ratio from synthesized photocurrent
/// traces: two frames per trial, each the pulse-weighted integral of the
/// trace over a window of `sim.duration`, starting `sim.frame_gap` apart.
/// The shot-noise reference is built from the same white noise, so the
/// ratio estimator `Σ D² / Σ D_ref²` has a small variance.
///
/// Returns `(estimate, standard error)`.
pub fn time_domain_nr(
    model: &SpectrumModel,
    pulse: &PulseProfile,
    sim: &TemporalSimParams,
) -> Result<(f64, f64), SqzError> {
    pulse.validate()?;
    let synth = TraceSynth::new(model, sim)?;
    let len = (sim.duration / sim.dt).round() as usize;
    let start2 = (sim.frame_gap / sim.dt).round() as usize;
    let weights: Vec<f64> = (0..len)
        .map(|i| pulse.intensity((i as f64 + 0.5) * sim.dt - sim.duration / 2.0))
        .collect();
    let window = |x: &[f64], start: usize| -> f64 {
        weights
            .iter()
            .zip(&x[start..start + len])
            .map(|(w, v)| w * v)
            .sum()
    };
    let diff = |p: &[f64], c: &[f64]| -> f64 {
        (window(p, 0) - window(p, start2)) - (window(c, 0) - window(c, start2))
    };
    let samples: Vec<(f64, f64)> = (0..sim.n_trials)
        .into_par_iter()
        .map(|i| {
            let t = synth.trial(sim.seed, i);
            let d = diff(&t.dn_p, &t.dn_c);
            let r = diff(&t.ref_p, &t.ref_c);
            (d * d, r * r)
        })
        .collect();
    let n = samples.len() as f64;
    let sum_a: f64 = samples.iter().map(|s| s.0).sum();
    let sum_b: f64 = samples.iter().map(|s| s.1).sum();
    let ratio = sum_a / sum_b;
    if samples.len() < 2 {
        return Ok((ratio, f64::INFINITY));
    }
    // delta-method standard error of a ratio of means
    let resid: Vec<f64> = samples.iter().map(|(a, b)| a - ratio * b).collect();
    let (_, var_r) = mean_var(&resid);
    let sem = var_r.sqrt() / (n.sqrt() * (sum_b / n));
    Ok((ratio, sem))
}
