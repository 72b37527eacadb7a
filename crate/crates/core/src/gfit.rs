//! Axis-aligned 2D Gaussian least-squares fit (damped Gauss–Newton) with
//! linearized parameter uncertainties.
//!
//! Coordinates are map indices: on a 41×41 cross-correlation map, zero lag
//! is `(20, 20)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::specorr::CrossCorrMap;
use crate::stackio::Frame;

const MIN_SIDE: usize = 7;
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("map is {0}x{1}; need at least 7x7")]
    TooSmall(usize, usize),
    #[error("map contains non-finite values")]
    NonFinite,
    #[error("normal matrix is numerically singular (condition {0:e})")]
    SingularNormalMatrix(f64),
    #[error("fit did not produce positive widths")]
    InvalidWidths,
}

/// `A exp(-[(x-x0)²/2σx² + (y-y0)²/2σy²]) + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussModel {
    pub amplitude: f64,
    pub x0: f64,
    pub y0: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    #[serde(default)]
    pub offset: f64,
}

impl GaussModel {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.x0) / self.sigma_x;
        let dy = (y - self.y0) / self.sigma_y;
        self.amplitude * (-0.5 * (dx * dx + dy * dy)).exp() + self.offset
    }

    pub fn render(&self, width: usize, height: usize) -> Frame<f64> {
        Frame::from_fn(width, height, |x, y| self.eval(x as f64, y as f64))
    }

    fn to_params(self, with_offset: bool) -> Vec<f64> {
        let mut p = vec![self.amplitude, self.x0, self.y0, self.sigma_x, self.sigma_y];
        if with_offset {
            p.push(self.offset);
        }
        p
    }

    fn from_params(p: &[f64]) -> Self {
        Self {
            amplitude: p[0],
            x0: p[1],
            y0: p[2],
            sigma_x: p[3],
            sigma_y: p[4],
            offset: p.get(5).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub fit_offset: bool,
    pub init_override: Option<GaussModel>,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fit_offset: false,
            init_override: None,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussFitResult {
    pub model: GaussModel,
    /// Row-major `p x p`, parameter order (A, x0, y0, σx, σy[, B]).
    pub covariance: Vec<f64>,
    pub n_params: usize,
    pub ci68: GaussModel,
    pub ci95: GaussModel,
    pub ssr: f64,
    pub n_iter: usize,
    pub converged: bool,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Centroid and second moments of the positive part above the median.
pub fn initial_guess(map: &Frame<f64>, fit_offset: bool) -> GaussModel {
    let (w, h) = map.dims();
    let med = median(map.data());
    let peak = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut s0, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = (map.get(x, y) - med).max(0.0);
            s0 += v;
            sx += v * x as f64;
            sy += v * y as f64;
        }
    }
    let (cx, cy) = if s0 > 0.0 {
        (sx / s0, sy / s0)
    } else {
        ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)
    };
    let (mut vx, mut vy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = (map.get(x, y) - med).max(0.0);
            vx += v * (x as f64 - cx).powi(2);
            vy += v * (y as f64 - cy).powi(2);
        }
    }
    let width = |m2: f64| {
        if s0 > 0.0 && m2 > 0.0 {
            (m2 / s0).sqrt()
        } else {
            1.0
        }
    };
    GaussModel {
        amplitude: peak - med,
        x0: cx,
        y0: cy,
        sigma_x: width(vx),
        sigma_y: width(vy),
        offset: if fit_offset { med } else { 0.0 },
    }
}

struct Problem<'a> {
    map: &'a Frame<f64>,
    scale: f64,
    n_params: usize,
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        let m = GaussModel::from_params(p);
        let (w, h) = self.map.dims();
        DVector::from_iterator(
            w * h,
            (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .map(|(x, y)| m.eval(x as f64, y as f64) - self.map.get(x, y) / self.scale),
        )
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let m = GaussModel::from_params(p);
        let (w, h) = self.map.dims();
        let mut j = DMatrix::zeros(w * h, self.n_params);
        for y in 0..h {
            for x in 0..w {
                let row = y * w + x;
                let dx = x as f64 - m.x0;
                let dy = y as f64 - m.y0;
                let (sx2, sy2) = (m.sigma_x * m.sigma_x, m.sigma_y * m.sigma_y);
                let e = (-0.5 * (dx * dx / sx2 + dy * dy / sy2)).exp();
                let g = m.amplitude * e;
                j[(row, 0)] = e;
                j[(row, 1)] = g * dx / sx2;
                j[(row, 2)] = g * dy / sy2;
                j[(row, 3)] = g * dx * dx / (sx2 * m.sigma_x);
                j[(row, 4)] = g * dy * dy / (sy2 * m.sigma_y);
                if self.n_params == 6 {
                    j[(row, 5)] = 1.0;
                }
            }
        }
        j
    }
}

fn condition(jtj: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(jtj.clone()).eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn fit_frame(map: &Frame<f64>, options: &FitOptions) -> Result<GaussFitResult, FitError> {
    let (w, h) = map.dims();
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(FitError::TooSmall(w, h));
    }
    if map.data().iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let scale = map.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return Err(FitError::SingularNormalMatrix(f64::INFINITY));
    }
    let n_params = if options.fit_offset { 6 } else { 5 };
    let problem = Problem {
        map,
        scale,
        n_params,
    };
    let init = match options.init_override {
        Some(m) => GaussModel {
            amplitude: m.amplitude / scale,
            offset: m.offset / scale,
            ..m
        },
        None => {
            let g = initial_guess(map, options.fit_offset);
            GaussModel {
                amplitude: g.amplitude / scale,
                offset: g.offset / scale,
                ..g
            }
        }
    };
    let mut p = DVector::from_vec(init.to_params(options.fit_offset));
    let mut r = problem.residuals(p.as_slice());
    let mut cost = r.norm_squared();
    let mut j = problem.jacobian(p.as_slice());
    let cond = condition(&(j.transpose() * &j));
    if cond > MAX_CONDITION {
        return Err(FitError::SingularNormalMatrix(cond));
    }

    let mut lambda = 1e-3;
    let mut converged = cost == 0.0;
    let mut n_iter = 0;
    while !converged && n_iter < options.max_iter {
        n_iter += 1;
        let jtj = j.transpose() * &j;
        let grad = j.transpose() * &r;
        // Retry with growing damping until a step lowers the cost.
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..n_params {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = &p + &step;
            if trial[3] <= 0.0 || trial[4] <= 0.0 {
                lambda *= 10.0;
                continue;
            }
            let r_trial = problem.residuals(trial.as_slice());
            let c_trial = r_trial.norm_squared();
            if c_trial.is_finite() && c_trial < cost {
                let decrease = (cost - c_trial) / cost;
                let step_max = step.amax();
                p = trial;
                r = r_trial;
                cost = c_trial;
                j = problem.jacobian(p.as_slice());
                lambda *= 0.1;
                accepted = true;
                if decrease < 1e-10 || step_max < 1e-12 || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: stationary to working precision.
            converged = grad.amax() <= 1e-8 * (1.0 + cost);
            break;
        }
    }

    let jtj = j.transpose() * &j;
    let cond = condition(&jtj);
    if cond > MAX_CONDITION {
        return Err(FitError::SingularNormalMatrix(cond));
    }
    let inv = jtj
        .try_inverse()
        .ok_or(FitError::SingularNormalMatrix(f64::INFINITY))?;
    let dof = (w * h).saturating_sub(n_params).max(1) as f64;
    let s2 = cost / dof;
    // Undo the value normalization: A and B carry the map scale.
    let unit = |i: usize| if i == 0 || i == 5 { scale } else { 1.0 };
    let mut cov = vec![0.0; n_params * n_params];
    for a in 0..n_params {
        for b in 0..n_params {
            cov[a * n_params + b] = s2 * inv[(a, b)] * unit(a) * unit(b);
        }
    }
    let mut params: Vec<f64> = p.iter().copied().collect();
    params[0] *= scale;
    if n_params == 6 {
        params[5] *= scale;
    }
    let model = GaussModel::from_params(&params);
    if !(model.sigma_x > 0.0 && model.sigma_y > 0.0) {
        return Err(FitError::InvalidWidths);
    }
    let half: Vec<f64> = (0..n_params)
        .map(|i| cov[i * n_params + i].max(0.0).sqrt())
        .collect();
    let ci68 = GaussModel::from_params(&half);
    let ci95 = GaussModel::from_params(&half.iter().map(|v| 1.96 * v).collect::<Vec<_>>());
    Ok(GaussFitResult {
        model,
        covariance: cov,
        n_params,
        ci68,
        ci95,
        ssr: cost * scale * scale,
        n_iter,
        converged,
    })
}

pub fn fit_gaussian2d(
    map: &CrossCorrMap,
    options: &FitOptions,
) -> Result<GaussFitResult, FitError> {
    fit_frame(&map.values, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Fraction of successful fits whose 68% interval for σx covers the truth.
    pub coverage: f64,
    pub n_success: usize,
    pub n_failed: usize,
}

/// Empirical coverage of the 68% σx interval on `n_trials` noisy renderings
/// of `truth` over a 41×41 grid.
pub fn ci_coverage_selftest(
    truth: &GaussModel,
    noise_sd: f64,
    n_trials: usize,
    seed: u64,
) -> CoverageReport {
    let clean = truth.render(41, 41);
    let noise = Normal::new(0.0, noise_sd.max(0.0)).expect("finite sd");
    let fit_offset = truth.offset != 0.0;
    let outcomes: Vec<Option<bool>> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let map = clean.map(|v| v + noise.sample(&mut rng));
            let opts = FitOptions {
                fit_offset,
                ..FitOptions::default()
            };
            match fit_frame(&map, &opts) {
                Ok(fit) if fit.converged => {
                    let err = (fit.model.sigma_x - truth.sigma_x).abs();
                    Some(err <= fit.ci68.sigma_x + 1e-9 * truth.sigma_x)
                }
                _ => None,
            }
        })
        .collect();
    let n_success = outcomes.iter().filter(|o| o.is_some()).count();
    let covered = outcomes.iter().filter(|o| **o == Some(true)).count();
    CoverageReport {
        coverage: if n_success > 0 {
            covered as f64 / n_success as f64
        } else {
            0.0
        },
        n_success,
        n_failed: n_trials - n_success,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn truth() -> GaussModel {
        GaussModel {
            amplitude: 1.0,
            x0: 20.0,
            y0: 20.0,
            sigma_x: 4.27,
            sigma_y: 3.52,
            offset: 0.0,
        }
    }

    fn noisy(model: &GaussModel, sd: f64, seed: u64) -> Frame<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sd).unwrap();
        model.render(41, 41).map(|v| v + n.sample(&mut rng))
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn noiseless_recovery() {
        let t = truth();
        let fit = fit_frame(&t.render(41, 41), &FitOptions::default()).unwrap();
        assert!(fit.converged);
        for (a, b) in [
            (fit.model.amplitude, t.amplitude),
            (fit.model.x0, t.x0),
            (fit.model.y0, t.y0),
            (fit.model.sigma_x, t.sigma_x),
            (fit.model.sigma_y, t.sigma_y),
        ] {
            assert!(rel(a, b) < 1e-6, "{a} vs {b}");
        }
        assert!((fit.ci95.sigma_x - 1.96 * fit.ci68.sigma_x).abs() < 1e-15);
    }

    #[test]
    fn off_centre_with_offset() {
        let t = GaussModel {
            amplitude: 3.0e4,
            x0: 13.3,
            y0: 24.9,
            sigma_x: 2.1,
            sigma_y: 5.5,
            offset: 0.0,
        };
        let fit = fit_frame(&t.render(41, 41), &FitOptions::default()).unwrap();
        assert!(rel(fit.model.sigma_y, 5.5) < 1e-6, "{:?}", fit.model);
        let with_b = GaussModel {
            offset: 0.2,
            ..truth()
        };
        let opts = FitOptions {
            fit_offset: true,
            ..FitOptions::default()
        };
        let fit = fit_frame(&with_b.render(41, 41), &opts).unwrap();
        assert_eq!(fit.n_params, 6);
        assert!((fit.model.offset - 0.2).abs() < 1e-6);
    }

    #[test]
    fn flat_map_is_never_a_success() {
        for v in [0.0, 1.0, -2.5] {
            match fit_frame(&Frame::filled(41, 41, v), &FitOptions::default()) {
                Ok(fit) => assert!(!fit.converged, "flat {v} converged: {fit:?}"),
                Err(e) => assert!(matches!(e, FitError::SingularNormalMatrix(_)), "{e}"),
            }
        }
    }

    #[test]
    fn rejects_small_or_nonfinite() {
        assert_eq!(
            fit_frame(&truth().render(6, 41), &FitOptions::default()).unwrap_err(),
            FitError::TooSmall(6, 41)
        );
        let mut m = truth().render(41, 41);
        m.set(3, 3, f64::NAN);
        assert_eq!(
            fit_frame(&m, &FitOptions::default()).unwrap_err(),
            FitError::NonFinite
        );
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let fit = fit_frame(&noisy(&truth(), 0.05, 1), &FitOptions::default()).unwrap();
        let p = fit.n_params;
        let m = DMatrix::from_row_slice(p, p, &fit.covariance);
        assert!((&m - m.transpose()).amax() <= 1e-12 * m.amax());
        assert!(SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .all(|&e| e >= -1e-15));
    }

    #[test]
    fn zero_noise_coverage_is_one() {
        let r = ci_coverage_selftest(&truth(), 0.0, 100, 3);
        assert_eq!(r.coverage, 1.0);
        assert_eq!(r.n_failed, 0);
    }

    #[test]
    fn noisy_coverage_near_nominal() {
        let r = ci_coverage_selftest(&truth(), 0.05, 500, 11);
        assert!(r.n_success >= 495, "{r:?}");
        assert!((0.63..=0.73).contains(&r.coverage), "{r:?}");
    }

    #[test]
    fn heavy_noise_failures_are_counted() {
        let r = ci_coverage_selftest(&truth(), 50.0, 100, 5);
        assert_eq!(r.n_success + r.n_failed, 100);
    }

    #[test]
    fn axis_swap() {
        let m = noisy(&truth(), 0.02, 4);
        let a = fit_frame(&m, &FitOptions::default()).unwrap();
        let b = fit_frame(&m.transpose(), &FitOptions::default()).unwrap();
        assert!(rel(a.model.sigma_x, b.model.sigma_y) < 1e-7);
        assert!(rel(a.model.sigma_y, b.model.sigma_x) < 1e-7);
        assert!(rel(a.model.x0, b.model.y0) < 1e-7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn scale_invariance(seed in 0u64..1000, c in 1e-3f64..1e4) {
            let m = noisy(&truth(), 0.03, seed);
            let a = fit_frame(&m, &FitOptions::default()).unwrap();
            let b = fit_frame(&m.scale(c), &FitOptions::default()).unwrap();
            prop_assert!(rel(a.model.sigma_x, b.model.sigma_x) < 1e-9);
            prop_assert!(rel(a.model.sigma_y, b.model.sigma_y) < 1e-9);
            prop_assert!(rel(a.model.amplitude * c, b.model.amplitude) < 1e-9);
        }

        #[test]
        fn translation_shifts_centre(seed in 0u64..1000, k in 0usize..6, l in 0usize..6) {
            // Render the same noisy pattern on a larger canvas at offset (k, l).
            let base = noisy(&truth(), 0.03, seed);
            let big = Frame::from_fn(52, 52, |x, y| {
                if x >= k && y >= l && x - k < 41 && y - l < 41 { base.get(x - k, y - l) } else { 0.0 }
            });
            let small = Frame::from_fn(52, 52, |x, y| if x < 41 && y < 41 { base.get(x, y) } else { 0.0 });
            let a = fit_frame(&small, &FitOptions::default()).unwrap();
            let b = fit_frame(&big, &FitOptions::default()).unwrap();
            prop_assert!((b.model.x0 - a.model.x0 - k as f64).abs() < 1e-6);
            prop_assert!((b.model.y0 - a.model.y0 - l as f64).abs() < 1e-6);
        }
    }
}
