//! Spectral prediction of the binned noise ratio.
//!
//! In the large-bin limit the noise ratio equals the normalized
//! intensity-difference spectrum `S_diff(Ω)` averaged with the pulse filter
//! `G(Ω) = |F(Ω)|² / ∫|F|²`, where `F` is the Fourier transform of the probe
//! pulse intensity profile. Spectra are two-sided, even in `Ω`, and expressed
//! in units of the shot-noise level, so one-sided/two-sided conventions cancel
//! in every ratio computed here.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("invalid spectrum model: {0}")]
    InvalidModel(String),
    #[error("spectral matrix not positive semidefinite at Ω = {omega}")]
    NotPositiveSemidefinite { omega: f64 },
    #[error("invalid pulse: {0}")]
    InvalidPulse(String),
    #[error("frequency grid must be symmetric about 0 and increasing")]
    BadGrid,
    #[error("grid holds only {fraction:.6} of the pulse spectral energy (need 0.999)")]
    InsufficientGridCoverage { fraction: f64 },
    #[error("quadrature did not settle to 1e-6 (last change {last_change:e})")]
    NoQuadratureConvergence { last_change: f64 },
}

/// Noise spectra of the twin beams at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPoint {
    pub s_p: f64,
    pub s_c: f64,
    pub s_pc: f64,
    pub sn_p: f64,
    pub sn_c: f64,
}

impl SpectralPoint {
    pub fn s_diff(&self) -> f64 {
        (self.s_p + self.s_c - 2.0 * self.s_pc) / (self.sn_p + self.sn_c)
    }

    pub fn is_psd(&self) -> bool {
        let tol = 1e-12 * (self.s_p.abs() + self.s_c.abs()).max(1.0);
        self.s_p >= -tol
            && self.s_c >= -tol
            && self.s_p * self.s_c - self.s_pc * self.s_pc >= -tol * tol.max(self.s_p * self.s_c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SpectrumModel {
    /// `S_diff(Ω) = 1 - (1 - nr0) γ² / (γ² + Ω²)`, with shot-noise-level
    /// individual beams (`S_p = S_c = 1`) and `S_pc = 1 - S_diff`.
    LorentzianDiff { nr0: f64, gamma: f64 },
    /// Tabulated one-sided spectra on an increasing grid `omega >= 0`,
    /// mirrored to negative frequency, linearly interpolated, held constant
    /// past the last point.
    Tabulated {
        omega: Vec<f64>,
        s_p: Vec<f64>,
        s_c: Vec<f64>,
        s_pc: Vec<f64>,
        sn_p: f64,
        sn_c: f64,
    },
}

impl SpectrumModel {
    /// Frequency-independent `S_diff = nr0`.
    pub fn flat(nr0: f64) -> Self {
        SpectrumModel::Tabulated {
            omega: vec![0.0],
            s_p: vec![1.0],
            s_c: vec![1.0],
            s_pc: vec![1.0 - nr0],
            sn_p: 1.0,
            sn_c: 1.0,
        }
    }

    /// Uncorrelated beams at the shot-noise level.
    pub fn coherent() -> Self {
        Self::flat(1.0)
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        match self {
            SpectrumModel::LorentzianDiff { nr0, gamma } => {
                if !(*nr0 > 0.0 && *nr0 <= 1.0) {
                    return Err(SpectralError::InvalidModel(format!(
                        "nr0 = {nr0} outside (0, 1]"
                    )));
                }
                if !(*gamma > 0.0) || gamma.is_nan() {
                    return Err(SpectralError::InvalidModel(format!("gamma = {gamma}")));
                }
                Ok(())
            }
            SpectrumModel::Tabulated {
                omega,
                s_p,
                s_c,
                s_pc,
                sn_p,
                sn_c,
            } => {
                let n = omega.len();
                if n == 0 || s_p.len() != n || s_c.len() != n || s_pc.len() != n {
                    return Err(SpectralError::InvalidModel(
                        "tabulated columns must be non-empty and equally long".into(),
                    ));
                }
                if omega[0] < 0.0 || omega.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(SpectralError::InvalidModel(
                        "omega must be increasing and non-negative".into(),
                    ));
                }
                if !(*sn_p > 0.0 && *sn_c > 0.0) {
                    return Err(SpectralError::InvalidModel(
                        "shot-noise levels must be positive".into(),
                    ));
                }
                for i in 0..n {
                    let pt = SpectralPoint {
                        s_p: s_p[i],
                        s_c: s_c[i],
                        s_pc: s_pc[i],
                        sn_p: *sn_p,
                        sn_c: *sn_c,
                    };
                    if !pt.is_psd() {
                        return Err(SpectralError::NotPositiveSemidefinite { omega: omega[i] });
                    }
                }
                Ok(())
            }
        }
    }

    pub fn at(&self, omega: f64) -> SpectralPoint {
        let w = omega.abs();
        match self {
            SpectrumModel::LorentzianDiff { nr0, gamma } => {
                let diff = 1.0 - (1.0 - nr0) * gamma * gamma / (gamma * gamma + w * w);
                SpectralPoint {
                    s_p: 1.0,
                    s_c: 1.0,
                    s_pc: 1.0 - diff,
                    sn_p: 1.0,
                    sn_c: 1.0,
                }
            }
            SpectrumModel::Tabulated {
                omega: grid,
                s_p,
                s_c,
                s_pc,
                sn_p,
                sn_c,
            } => {
                let interp = |col: &[f64]| -> f64 {
                    let idx = grid.partition_point(|&g| g <= w);
                    if idx == 0 {
                        col[0]
                    } else if idx == grid.len() {
                        col[grid.len() - 1]
                    } else {
                        let (g0, g1) = (grid[idx - 1], grid[idx]);
                        let t = (w - g0) / (g1 - g0);
                        col[idx - 1] + t * (col[idx] - col[idx - 1])
                    }
                };
                SpectralPoint {
                    s_p: interp(s_p),
                    s_c: interp(s_c),
                    s_pc: interp(s_pc),
                    sn_p: *sn_p,
                    sn_c: *sn_c,
                }
            }
        }
    }

    pub fn s_diff(&self, omega: f64) -> f64 {
        self.at(omega).s_diff()
    }
}

/// Temporal intensity profile of the probe pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PulseProfile {
    /// Unit-height rectangle of duration `t`, centered on 0.
    Rect { t: f64 },
    /// `exp(-4 ln2 t² / t_fwhm²)`.
    Gaussian { t_fwhm: f64 },
}

impl PulseProfile {
    pub fn validate(&self) -> Result<(), SpectralError> {
        let t = self.time_scale();
        if !(t > 0.0) || !t.is_finite() {
            return Err(SpectralError::InvalidPulse(format!("duration {t}")));
        }
        Ok(())
    }

    /// `T` or `T_fwhm`.
    pub fn time_scale(&self) -> f64 {
        match *self {
            PulseProfile::Rect { t } => t,
            PulseProfile::Gaussian { t_fwhm } => t_fwhm,
        }
    }

    pub fn intensity(&self, t: f64) -> f64 {
        match *self {
            PulseProfile::Rect { t: width } => {
                if t.abs() < width / 2.0 {
                    1.0
                } else {
                    0.0
                }
            }
            PulseProfile::Gaussian { t_fwhm } => (-4.0 * LN_2 * t * t / (t_fwhm * t_fwhm)).exp(),
        }
    }

    /// `|F(Ω)|²` with `F(Ω) = ∫ f(t) e^{iΩt} dt`.
    pub fn power_spectrum(&self, omega: f64) -> f64 {
        match *self {
            PulseProfile::Rect { t } => {
                let x = omega * t / 2.0;
                let sinc = if x.abs() < 1e-8 {
                    1.0 - x * x / 6.0
                } else {
                    x.sin() / x
                };
                t * t * sinc * sinc
            }
            PulseProfile::Gaussian { t_fwhm } => {
                let a = 4.0 * LN_2 / (t_fwhm * t_fwhm);
                (PI / a) * (-omega * omega / (2.0 * a)).exp()
            }
        }
    }

    /// `∫ |F(Ω)|² dΩ` over the whole line (Parseval: `2π ∫ f²`).
    pub fn total_power(&self) -> f64 {
        match *self {
            PulseProfile::Rect { t } => 2.0 * PI * t,
            PulseProfile::Gaussian { t_fwhm } => {
                let a = 4.0 * LN_2 / (t_fwhm * t_fwhm);
                PI * (2.0 * PI / a).sqrt()
            }
        }
    }

    /// Width of the main spectral lobe, `2π / T`.
    pub fn bandwidth(&self) -> f64 {
        2.0 * PI / self.time_scale()
    }
}

pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
        .sum()
}

/// Normalized filter `G(Ω)` sampled on `grid`. The normalization is the
/// trapezoid integral over the grid, so the returned samples integrate to 1
/// on that grid. Errors when the grid captures less than 99.9% of the
/// analytic spectral energy.
pub fn pulse_filter(pulse: &PulseProfile, grid: &[f64]) -> Result<Vec<f64>, SpectralError> {
    pulse.validate()?;
    if grid.len() < 3 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SpectralError::BadGrid);
    }
    let span = grid[grid.len() - 1];
    if (grid[0] + span).abs() > 1e-9 * span {
        return Err(SpectralError::BadGrid);
    }
    let power: Vec<f64> = grid.iter().map(|&w| pulse.power_spectrum(w)).collect();
    let mass = trapezoid(grid, &power);
    let fraction = mass / pulse.total_power();
    if fraction < 0.999 {
        return Err(SpectralError::InsufficientGridCoverage { fraction });
    }
    Ok(power.into_iter().map(|p| p / mass).collect())
}

/// Uniform symmetric grid `[-half_width, half_width]` with `2n + 1` points.
pub fn symmetric_grid(half_width: f64, n: usize) -> Vec<f64> {
    (0..=2 * n)
        .map(|i| half_width * (i as f64 - n as f64) / n as f64)
        .collect()
}

/// Grid statistics of the last quadrature pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureStats {
    pub half_width: f64,
    pub n_points: usize,
    pub refinements: usize,
    pub last_relative_change: f64,
}

impl SpectrumModel {
    /// Frequencies where `S_diff` changes character: table nodes, or the
    /// Lorentzian corner.
    fn features(&self) -> Features<'_> {
        match self {
            SpectrumModel::LorentzianDiff { gamma, .. } => Features::Corner(*gamma),
            SpectrumModel::Tabulated { omega, .. } => Features::Nodes(omega),
        }
    }
}

enum Features<'a> {
    Corner(f64),
    Nodes(&'a [f64]),
}

/// Non-negative half of the quadrature grid at refinement `level`: a uniform
/// grid resolving the pulse filter, plus dense geometric clusters (three
/// decades either side) around every spectral corner, plus table nodes.
fn quadrature_grid(
    models: &[SpectrumModel],
    pulse: &PulseProfile,
    half_width: f64,
    level: u32,
) -> Vec<f64> {
    let step = pulse.bandwidth() / (16.0 * f64::from(1u32 << level));
    let n_uniform = (half_width / step).ceil() as usize;
    let mut grid: Vec<f64> = (0..=n_uniform)
        .map(|i| (i as f64 * step).min(half_width))
        .collect();
    let per_decade = 64 * (1usize << level);
    for m in models {
        match m.features() {
            Features::Corner(c) => {
                for j in 0..=(6 * per_decade) {
                    let w = c * 10f64.powf(j as f64 / per_decade as f64 - 3.0);
                    if w < half_width {
                        grid.push(w);
                    }
                }
            }
            Features::Nodes(nodes) => grid.extend(nodes.iter().filter(|&&w| w < half_width)),
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn predict_once(
    models: &[SpectrumModel],
    pulse: &PulseProfile,
    half_width: f64,
    level: u32,
) -> (f64, usize) {
    let grid = quadrature_grid(models, pulse, half_width, level);
    let total = pulse.total_power();
    let g: Vec<f64> = grid
        .iter()
        .map(|&w| pulse.power_spectrum(w) / total)
        .collect();
    // even integrands: double the half-line integral
    let captured = 2.0 * trapezoid(&grid, &g);
    let mut acc = 0.0;
    for model in models {
        let weighted: Vec<f64> = grid
            .iter()
            .zip(&g)
            .map(|(&w, &gw)| gw * model.s_diff(w))
            .collect();
        // mass beyond the grid edge takes the edge value of S_diff
        acc += 2.0 * trapezoid(&grid, &weighted) + (1.0 - captured) * model.s_diff(half_width);
    }
    (acc / models.len() as f64, 2 * grid.len() - 1)
}

/// `(1/M) Σ_pixels ∫ G(Ω) S_diff(Ω) dΩ` by trapezoid quadrature; the grid is
/// widened and refined until two successive estimates agree to 1e-6.
pub fn spectral_nr_predict_pixels(
    models: &[SpectrumModel],
    pulse: &PulseProfile,
) -> Result<(f64, QuadratureStats), SpectralError> {
    pulse.validate()?;
    if models.is_empty() {
        return Err(SpectralError::InvalidModel("no pixel spectra".into()));
    }
    for m in models {
        m.validate()?;
    }
    let mut half_width = 64.0 * pulse.bandwidth();
    let (mut prev, _) = predict_once(models, pulse, half_width, 0);
    let mut last_change = f64::INFINITY;
    for level in 1..=6 {
        half_width *= 2.0;
        let (next, n_points) = predict_once(models, pulse, half_width, level);
        last_change = ((next - prev) / next).abs();
        prev = next;
        if last_change < 1e-6 {
            return Ok((
                next,
                QuadratureStats {
                    half_width,
                    n_points,
                    refinements: level as usize,
                    last_relative_change: last_change,
                },
            ));
        }
    }
    Err(SpectralError::NoQuadratureConvergence { last_change })
}

pub fn spectral_nr_predict(
    model: &SpectrumModel,
    pulse: &PulseProfile,
) -> Result<f64, SpectralError> {
    spectral_nr_predict_pixels(std::slice::from_ref(model), pulse).map(|(v, _)| v)
}
