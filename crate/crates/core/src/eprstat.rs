//! Position and momentum uncertainties from fitted correlation widths, the
//! EPR product with its confidence level, and the inseparability sum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gfit::{fit_gaussian2d, FitError, FitOptions, GaussFitResult};
use crate::specorr::{
    fluctuation_pairs, per_acquisition_stats, sum_stats, Alignment, CrossCorrMap, PipelineConfig,
    XcorrAccumulator, XcorrError,
};
use crate::stackio::{AcquisitionSet, FieldMode, OpticsConfig, OpticsError};

/// The product bound for separable states, in units of ħ².
pub const EPR_BOUND: f64 = 0.25;
/// Confidence level needed to call a violation significant.
pub const SIGNIFICANCE: f64 = 5.0;

#[derive(Debug, Error)]
pub enum EprError {
    #[error("optics mode is {found:?}, expected {expected:?}")]
    WrongMode {
        expected: FieldMode,
        found: FieldMode,
    },
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error("{0} fit did not converge")]
    NonConvergedFit(&'static str),
    #[error("group size {n} exceeds the {total} available acquisitions")]
    GroupTooLarge { n: usize, total: usize },
    #[error("no group sizes given")]
    NoGroups,
    #[error("group size must be at least 1")]
    ZeroGroup,
    #[error(transparent)]
    Pipeline(#[from] XcorrError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CiLevel {
    #[default]
    #[serde(rename = "68")]
    P68,
    #[serde(rename = "95")]
    P95,
}

/// Position spread `σ s / M`, meters.
pub fn delta_r(sigma_px: f64, optics: &OpticsConfig) -> Result<f64, EprError> {
    if optics.mode != FieldMode::NearField {
        return Err(EprError::WrongMode {
            expected: FieldMode::NearField,
            found: optics.mode,
        });
    }
    optics.validate()?;
    Ok(sigma_px * optics.pixel_size_s / optics.magnification_m)
}

/// Momentum spread over ħ, `2π σ s / (λ f)`, per meter.
pub fn delta_p_hbar(sigma_px: f64, optics: &OpticsConfig) -> Result<f64, EprError> {
    if optics.mode != FieldMode::FarField {
        return Err(EprError::WrongMode {
            expected: FieldMode::FarField,
            found: optics.mode,
        });
    }
    optics.validate()?;
    Ok(2.0 * std::f64::consts::PI * sigma_px * optics.pixel_size_s
        / (optics.wavelength_lambda * optics.focal_f))
}

/// A fitted width with its 68% and 95% half-widths, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Width {
    pub sigma: f64,
    pub ci68: f64,
    pub ci95: f64,
}

impl Width {
    pub fn from_fit(fit: &GaussFitResult, axis: Axis) -> Self {
        match axis {
            Axis::X => Self {
                sigma: fit.model.sigma_x,
                ci68: fit.ci68.sigma_x,
                ci95: fit.ci95.sigma_x,
            },
            Axis::Y => Self {
                sigma: fit.model.sigma_y,
                ci68: fit.ci68.sigma_y,
                ci95: fit.ci95.sigma_y,
            },
        }
    }

    /// From a quoted 95% interval.
    pub fn from_ci95(sigma: f64, ci95: f64) -> Self {
        Self {
            sigma,
            ci68: ci95 / 1.96,
            ci95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EprAxisResult {
    pub axis: Axis,
    pub delta_r_m: f64,
    pub delta_p_per_m_hbar: f64,
    /// `(Δr Δp)²` in units of ħ².
    pub product_hbar2: f64,
    pub delta68: f64,
    pub delta95: f64,
    pub ci_level: CiLevel,
    /// `|1/4 - product| / δ` at `ci_level`.
    pub confidence: f64,
    pub violation: bool,
    pub significant: bool,
}

fn propagated(product: f64, near_rel: f64, far_rel: f64) -> f64 {
    2.0 * product * (near_rel * near_rel + far_rel * far_rel).sqrt()
}

pub fn confidence_level(product: f64, delta: f64) -> f64 {
    (EPR_BOUND - product).abs() / delta
}

pub fn epr_from_widths(
    near: Width,
    far: Width,
    near_optics: &OpticsConfig,
    far_optics: &OpticsConfig,
    axis: Axis,
    level: CiLevel,
) -> Result<EprAxisResult, EprError> {
    let dr = delta_r(near.sigma, near_optics)?;
    let dp = delta_p_hbar(far.sigma, far_optics)?;
    let product = (dr * dp).powi(2);
    let delta68 = propagated(product, near.ci68 / near.sigma, far.ci68 / far.sigma);
    let delta95 = propagated(product, near.ci95 / near.sigma, far.ci95 / far.sigma);
    let delta = match level {
        CiLevel::P68 => delta68,
        CiLevel::P95 => delta95,
    };
    let mut r = EprAxisResult {
        axis,
        delta_r_m: dr,
        delta_p_per_m_hbar: dp,
        product_hbar2: product,
        delta68,
        delta95,
        ci_level: level,
        confidence: confidence_level(product, delta),
        violation: product < EPR_BOUND,
        significant: false,
    };
    r.significant = check_significance(&r);
    Ok(r)
}

pub fn epr_product(
    near_fit: &GaussFitResult,
    far_fit: &GaussFitResult,
    near_optics: &OpticsConfig,
    far_optics: &OpticsConfig,
    axis: Axis,
    level: CiLevel,
) -> Result<EprAxisResult, EprError> {
    if !near_fit.converged {
        return Err(EprError::NonConvergedFit("near-field"));
    }
    if !far_fit.converged {
        return Err(EprError::NonConvergedFit("far-field"));
    }
    epr_from_widths(
        Width::from_fit(near_fit, axis),
        Width::from_fit(far_fit, axis),
        near_optics,
        far_optics,
        axis,
        level,
    )
}

pub fn check_significance(result: &EprAxisResult) -> bool {
    result.product_hbar2 < EPR_BOUND && result.confidence > SIGNIFICANCE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inseparability {
    pub value: f64,
    pub entangled: bool,
}

/// `I = NR_near + NR_far`; entangled when `I < 2`.
pub fn inseparability(nr_near: f64, nr_far: f64) -> Inseparability {
    let value = nr_near + nr_far;
    Inseparability {
        value,
        entangled: value < 2.0,
    }
}

/// Everything the EPR analysis needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EprConfig {
    pub pipeline: PipelineConfig,
    pub fit: FitOptions,
    pub near_optics: OpticsConfig,
    pub far_optics: OpticsConfig,
}

impl EprConfig {
    /// The experiment's optics: M = 0.65 near field, f = 500 mm at 795 nm far
    /// field, 16 µm pixels.
    pub fn paper() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            fit: FitOptions::default(),
            near_optics: OpticsConfig::near_field(0.65, 16e-6),
            far_optics: OpticsConfig::far_field(0.5, 795e-9, 16e-6),
        }
    }
}

/// Aligned per-acquisition correlation statistics for one field.
pub struct FieldStats {
    pub alignment: Alignment,
    pub per_acq: Vec<XcorrAccumulator>,
    lag_origin: (i64, i64),
}

impl FieldStats {
    pub fn compute(
        acqs: &[AcquisitionSet],
        mode: FieldMode,
        cfg: &PipelineConfig,
    ) -> Result<Self, EprError> {
        let rotate = mode == FieldMode::FarField;
        let alignment = Alignment::estimate(acqs, rotate, cfg)?;
        let pairs = fluctuation_pairs(acqs, &alignment, cfg)?;
        let lag_origin = pairs[0].lag_origin();
        Ok(Self {
            alignment,
            per_acq: per_acquisition_stats(&pairs)?,
            lag_origin,
        })
    }

    pub fn map(
        &self,
        range: std::ops::Range<usize>,
        cfg: &PipelineConfig,
    ) -> Result<CrossCorrMap, EprError> {
        Ok(sum_stats(&self.per_acq[range])?.finish(cfg.normalization, self.lag_origin)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFit {
    pub alignment: Alignment,
    pub fit: GaussFitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EprAnalysis {
    pub near: FieldFit,
    pub far: FieldFit,
    pub x: EprAxisResult,
    pub y: EprAxisResult,
    pub n_acquisitions: usize,
}

/// Full-data EPR analysis: accumulate, fit and evaluate both axes.
pub fn analyze_epr(
    near: &[AcquisitionSet],
    far: &[AcquisitionSet],
    cfg: &EprConfig,
    level: CiLevel,
) -> Result<(EprAnalysis, CrossCorrMap, CrossCorrMap), EprError> {
    let ns = FieldStats::compute(near, FieldMode::NearField, &cfg.pipeline)?;
    let fs = FieldStats::compute(far, FieldMode::FarField, &cfg.pipeline)?;
    let near_map = ns.map(0..near.len(), &cfg.pipeline)?;
    let far_map = fs.map(0..far.len(), &cfg.pipeline)?;
    let near_fit = fit_gaussian2d(&near_map, &cfg.fit)?;
    let far_fit = fit_gaussian2d(&far_map, &cfg.fit)?;
    let axis = |a| {
        epr_product(
            &near_fit,
            &far_fit,
            &cfg.near_optics,
            &cfg.far_optics,
            a,
            level,
        )
    };
    let (x, y) = (axis(Axis::X)?, axis(Axis::Y)?);
    Ok((
        EprAnalysis {
            near: FieldFit {
                alignment: ns.alignment,
                fit: near_fit,
            },
            far: FieldFit {
                alignment: fs.alignment,
                fit: far_fit,
            },
            x,
            y,
            n_acquisitions: near.len().min(far.len()),
        },
        near_map,
        far_map,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEntry {
    pub n: usize,
    pub mean_c: f64,
    pub sd_c: f64,
    /// Groups whose fits succeeded.
    pub n_groups: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceCurve {
    pub axis: Axis,
    pub entries: Vec<ConfidenceEntry>,
    /// Least-squares coefficient of `C = A0 √N`.
    pub fitted_a0: f64,
    /// Slope of `ln mean_C` against `ln N`.
    pub scaling_exponent: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// OLS slope of `y` on `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Confidence level (68% δ) per disjoint consecutive group of `N`
/// acquisitions, for each `N` in `group_sizes`. Alignment is estimated once
/// from the full data; each group is accumulated, fitted and evaluated on
/// its own. Returns one curve per axis.
pub fn confidence_curve(
    near: &[AcquisitionSet],
    far: &[AcquisitionSet],
    group_sizes: &[usize],
    cfg: &EprConfig,
) -> Result<Vec<ConfidenceCurve>, EprError> {
    if group_sizes.is_empty() {
        return Err(EprError::NoGroups);
    }
    let total = near.len().min(far.len());
    for &n in group_sizes {
        if n == 0 {
            return Err(EprError::ZeroGroup);
        }
        if n > total {
            return Err(EprError::GroupTooLarge { n, total });
        }
    }
    let ns = FieldStats::compute(&near[..total], FieldMode::NearField, &cfg.pipeline)?;
    let fs = FieldStats::compute(&far[..total], FieldMode::FarField, &cfg.pipeline)?;
    confidence_curve_from_stats(&ns, &fs, group_sizes, cfg)
}

/// As [`confidence_curve`], on precomputed per-acquisition statistics.
pub fn confidence_curve_from_stats(
    near: &FieldStats,
    far: &FieldStats,
    group_sizes: &[usize],
    cfg: &EprConfig,
) -> Result<Vec<ConfidenceCurve>, EprError> {
    let total = near.per_acq.len().min(far.per_acq.len());
    let jobs: Vec<(usize, usize)> = group_sizes
        .iter()
        .flat_map(|&n| (0..total / n).map(move |g| (n, g)))
        .collect();
    // Per group: Some([C_x, C_y]) on success, None when a fit fails.
    let results: Vec<Option<[f64; 2]>> = jobs
        .par_iter()
        .map(|&(n, g)| {
            let range = g * n..(g + 1) * n;
            let run = || -> Result<[f64; 2], EprError> {
                let nf = fit_gaussian2d(&near.map(range.clone(), &cfg.pipeline)?, &cfg.fit)?;
                let ff = fit_gaussian2d(&far.map(range.clone(), &cfg.pipeline)?, &cfg.fit)?;
                let c = |a| {
                    epr_product(&nf, &ff, &cfg.near_optics, &cfg.far_optics, a, CiLevel::P68)
                        .map(|r| r.confidence)
                };
                Ok([c(Axis::X)?, c(Axis::Y)?])
            };
            run().ok().filter(|c| c.iter().all(|v| v.is_finite()))
        })
        .collect();

    let mut curves = Vec::new();
    for (ai, axis) in [Axis::X, Axis::Y].into_iter().enumerate() {
        let mut entries = Vec::new();
        let (mut num, mut den) = (0.0, 0.0);
        for &n in group_sizes {
            let cs: Vec<f64> = jobs
                .iter()
                .zip(&results)
                .filter(|((jn, _), _)| *jn == n)
                .filter_map(|(_, r)| r.map(|c| c[ai]))
                .collect();
            let n_failed = total / n - cs.len();
            for c in &cs {
                num += c * (n as f64).sqrt();
                den += n as f64;
            }
            let (mean_c, sd_c) = mean_sd(&cs);
            entries.push(ConfidenceEntry {
                n,
                mean_c,
                sd_c,
                n_groups: cs.len(),
                n_failed,
            });
        }
        let logs: Vec<(f64, f64)> = entries
            .iter()
            .filter(|e| e.mean_c > 0.0)
            .map(|e| ((e.n as f64).ln(), e.mean_c.ln()))
            .collect();
        curves.push(ConfidenceCurve {
            axis,
            fitted_a0: if den > 0.0 { num / den } else { f64::NAN },
            scaling_exponent: if logs.len() >= 2 {
                ols_slope(&logs)
            } else {
                f64::NAN
            },
            entries,
        });
    }
    Ok(curves)
}
