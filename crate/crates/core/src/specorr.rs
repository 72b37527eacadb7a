//! Fluctuation images and spatial cross-correlation maps.
//!
//! Pipeline: (far field) rotate the conjugate 180°, crop both beams around
//! their ensemble-mean maxima, register the conjugate crop to the probe
//! crop once from the ensemble means, difference consecutive frames, and
//! correlate the central conjugate patch against every valid position in
//! the probe fluctuation image.
//!
//! Map index `(ix, iy)` places the conjugate patch at probe offset
//! `(ix, iy)`; lag `Δ = (ix, iy) + lag_origin`, so the map centre is zero lag.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stackio::{
    crop, rotate180, smoothed_argmax, AcquisitionSet, AnalysisRegion, Frame, StackError,
};

#[derive(Debug, Error)]
pub enum XcorrError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("zero variance at lag ({0}, {1})")]
    ZeroVariance(i64, i64),
    #[error("no acquisitions to accumulate")]
    Empty,
    #[error("conjugate patch {conj:?} must be strictly smaller than probe {probe:?}")]
    Geometry {
        probe: (usize, usize),
        conj: (usize, usize),
    },
    #[error(transparent)]
    Stack(#[from] StackError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Covariance,
    Pearson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationPair {
    pub probe_fluct: Frame<f64>,
    pub conj_fluct: Frame<f64>,
    pub registration_shift: (i64, i64),
    pub rotated: bool,
}

impl FluctuationPair {
    fn check(&self) -> Result<(), XcorrError> {
        let (pw, ph) = self.probe_fluct.dims();
        let (cw, ch) = self.conj_fluct.dims();
        if cw >= pw || ch >= ph || cw == 0 || ch == 0 {
            return Err(XcorrError::Geometry {
                probe: (pw, ph),
                conj: (cw, ch),
            });
        }
        Ok(())
    }

    /// Lag of map entry (0, 0).
    pub fn lag_origin(&self) -> (i64, i64) {
        lag_origin(self)
    }

    fn map_dims(&self) -> (usize, usize) {
        let (pw, ph) = self.probe_fluct.dims();
        let (cw, ch) = self.conj_fluct.dims();
        (pw - cw + 1, ph - ch + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrMap {
    pub values: Frame<f64>,
    /// Lag of entry (0, 0).
    pub lag_origin: (i64, i64),
    pub normalization: Normalization,
    pub n_acq_accumulated: usize,
}

impl CrossCorrMap {
    pub fn lag_of(&self, ix: usize, iy: usize) -> (i64, i64) {
        (ix as i64 + self.lag_origin.0, iy as i64 + self.lag_origin.1)
    }

    /// `(lag_x, lag_y, value)` rows.
    pub fn rows(&self) -> Vec<(i64, i64, f64)> {
        let (w, h) = self.values.dims();
        let mut out = Vec::with_capacity(w * h);
        for iy in 0..h {
            for ix in 0..w {
                let (lx, ly) = self.lag_of(ix, iy);
                out.push((lx, ly, self.values.get(ix, iy)));
            }
        }
        out
    }
}

/// Unnormalized per-lag statistics, summed over acquisitions.
#[derive(Debug, Clone, PartialEq)]
pub struct XcorrAccumulator {
    width: usize,
    height: usize,
    cov: Vec<f64>,
    var_p: Vec<f64>,
    var_c: f64,
    count: usize,
}

impl XcorrAccumulator {
    fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cov: vec![0.0; width * height],
            var_p: vec![0.0; width * height],
            var_c: 0.0,
            count: 0,
        }
    }

    pub fn add(&mut self, other: &XcorrAccumulator) {
        for (a, b) in self.cov.iter_mut().zip(&other.cov) {
            *a += b;
        }
        for (a, b) in self.var_p.iter_mut().zip(&other.var_p) {
            *a += b;
        }
        self.var_c += other.var_c;
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(
        &self,
        normalization: Normalization,
        lag_origin: (i64, i64),
    ) -> Result<CrossCorrMap, XcorrError> {
        if self.count == 0 {
            return Err(XcorrError::Empty);
        }
        let n = self.count as f64;
        let mut values = Vec::with_capacity(self.cov.len());
        for (i, (&c, &vp)) in self.cov.iter().zip(&self.var_p).enumerate() {
            let v = match normalization {
                Normalization::Covariance => c / n,
                Normalization::Pearson => {
                    let denom = (vp / n * self.var_c / n).sqrt();
                    if !(denom > 0.0) {
                        let (ix, iy) = (i % self.width, i / self.width);
                        return Err(XcorrError::ZeroVariance(
                            ix as i64 + lag_origin.0,
                            iy as i64 + lag_origin.1,
                        ));
                    }
                    (c / n / denom).clamp(-1.0, 1.0)
                }
            };
            values.push(v);
        }
        Ok(CrossCorrMap {
            values: Frame::new(self.width, self.height, values)?,
            lag_origin,
            normalization,
            n_acq_accumulated: self.count,
        })
    }
}

fn lag_origin(pair: &FluctuationPair) -> (i64, i64) {
    let (mw, mh) = pair.map_dims();
    (-((mw as i64 - 1) / 2), -((mh as i64 - 1) / 2))
}

/// Direct per-lag evaluation with two-pass overlap means.
pub fn xcorr_stats_direct(pair: &FluctuationPair) -> Result<XcorrAccumulator, XcorrError> {
    pair.check()?;
    let (mw, mh) = pair.map_dims();
    let c = &pair.conj_fluct;
    let (cw, ch) = c.dims();
    let nov = (cw * ch) as f64;
    let m_c = c.sum() / nov;
    let var_c = c.data().iter().map(|v| (v - m_c).powi(2)).sum::<f64>() / nov;
    let mut acc = XcorrAccumulator::zeros(mw, mh);
    for iy in 0..mh {
        for ix in 0..mw {
            let mut sp = 0.0;
            for y in 0..ch {
                sp += pair.probe_fluct.row(iy + y)[ix..ix + cw]
                    .iter()
                    .sum::<f64>();
            }
            let m_p = sp / nov;
            let (mut cov, mut vp) = (0.0, 0.0);
            for y in 0..ch {
                let prow = &pair.probe_fluct.row(iy + y)[ix..ix + cw];
                for (p, cv) in prow.iter().zip(c.row(y)) {
                    cov += (p - m_p) * (cv - m_c);
                    vp += (p - m_p) * (p - m_p);
                }
            }
            acc.cov[iy * mw + ix] = cov / nov;
            acc.var_p[iy * mw + ix] = vp / nov;
        }
    }
    acc.var_c = var_c;
    acc.count = 1;
    Ok(acc)
}

pub fn crosscorr_direct(
    pair: &FluctuationPair,
    normalization: Normalization,
) -> Result<CrossCorrMap, XcorrError> {
    xcorr_stats_direct(pair)?.finish(normalization, lag_origin(pair))
}

/// FFT correlation engine for a fixed probe size. The transform has the
/// probe's own size: for valid lags the conjugate patch never wraps, so no
/// padding is needed. Global means are removed first; per-lag overlap means
/// and variances come from prefix sums.
pub struct CorrelationEngine {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl CorrelationEngine {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let (w, h) = (self.width, self.height);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut column = vec![Complex64::default(); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                buf[y * w + x] = column[y];
            }
        }
    }

    pub fn stats(&self, pair: &FluctuationPair) -> Result<XcorrAccumulator, XcorrError> {
        pair.check()?;
        let (w, h) = (self.width, self.height);
        if pair.probe_fluct.dims() != (w, h) {
            return Err(XcorrError::Stack(StackError::DimensionMismatch(format!(
                "engine planned for {w}x{h}, probe is {:?}",
                pair.probe_fluct.dims()
            ))));
        }
        let (mw, mh) = pair.map_dims();
        let (cw, ch) = pair.conj_fluct.dims();
        let nov = (cw * ch) as f64;

        let gp = pair.probe_fluct.mean();
        let gc = pair.conj_fluct.mean();
        let p: Vec<f64> = pair.probe_fluct.data().iter().map(|v| v - gp).collect();
        let c: Vec<f64> = pair.conj_fluct.data().iter().map(|v| v - gc).collect();
        let m_c = c.iter().sum::<f64>() / nov;
        let var_c = c.iter().map(|v| (v - m_c).powi(2)).sum::<f64>() / nov;

        let mut fp: Vec<Complex64> = p.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut fc = vec![Complex64::default(); w * h];
        for y in 0..ch {
            for x in 0..cw {
                fc[y * w + x] = Complex64::new(c[y * cw + x], 0.0);
            }
        }
        self.fft2(&mut fp, false);
        self.fft2(&mut fc, false);
        for (a, b) in fp.iter_mut().zip(&fc) {
            *a *= b.conj();
        }
        self.fft2(&mut fp, true);
        let scale = 1.0 / (w * h) as f64;

        // Summed-area tables of p and p².
        let sw = w + 1;
        let mut s1 = vec![0.0; sw * (h + 1)];
        let mut s2 = vec![0.0; sw * (h + 1)];
        for y in 0..h {
            let (mut r1, mut r2) = (0.0, 0.0);
            for x in 0..w {
                let v = p[y * w + x];
                r1 += v;
                r2 += v * v;
                s1[(y + 1) * sw + x + 1] = s1[y * sw + x + 1] + r1;
                s2[(y + 1) * sw + x + 1] = s2[y * sw + x + 1] + r2;
            }
        }
        let boxsum = |s: &[f64], x: usize, y: usize| {
            s[(y + ch) * sw + x + cw] - s[y * sw + x + cw] - s[(y + ch) * sw + x] + s[y * sw + x]
        };

        let mut acc = XcorrAccumulator::zeros(mw, mh);
        for iy in 0..mh {
            for ix in 0..mw {
                let m_p = boxsum(&s1, ix, iy) / nov;
                let spc = fp[iy * w + ix].re * scale;
                acc.cov[iy * mw + ix] = spc / nov - m_p * m_c;
                acc.var_p[iy * mw + ix] = (boxsum(&s2, ix, iy) / nov - m_p * m_p).max(0.0);
            }
        }
        acc.var_c = var_c;
        acc.count = 1;
        Ok(acc)
    }
}

pub fn crosscorr_fft(
    pair: &FluctuationPair,
    normalization: Normalization,
) -> Result<CrossCorrMap, XcorrError> {
    let (w, h) = pair.probe_fluct.dims();
    CorrelationEngine::new(w, h)
        .stats(pair)?
        .finish(normalization, lag_origin(pair))
}

/// Integer shift `d` such that `conj(x) ≈ probe(x - d)`, maximizing the
/// Pearson correlation of the overlapping parts over `|dx|, |dy| ≤ max_shift`.
/// Ties go to the smallest `|dx| + |dy|`, then row-major order.
pub fn register(
    probe_mean: &Frame<f64>,
    conj_mean: &Frame<f64>,
    max_shift: usize,
) -> Result<(i64, i64), XcorrError> {
    if probe_mean.dims() != conj_mean.dims() {
        return Err(StackError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            probe_mean.dims(),
            conj_mean.dims()
        ))
        .into());
    }
    let zero_var = |f: &Frame<f64>| {
        let m = f.mean();
        f.data().iter().all(|&v| v == m)
    };
    if zero_var(probe_mean) || zero_var(conj_mean) {
        return Err(XcorrError::DegenerateInput("image has zero variance"));
    }
    let (w, h) = probe_mean.dims();
    let s = max_shift as i64;
    let mut candidates: Vec<(i64, i64)> = (-s..=s)
        .flat_map(|dy| (-s..=s).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx.unsigned_abs() < w as u64 && dy.unsigned_abs() < h as u64)
        .collect();
    candidates.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));

    let mut best = None;
    let mut best_r = f64::NEG_INFINITY;
    for (dx, dy) in candidates {
        let xs = (dx.max(0) as usize)..((w as i64 + dx.min(0)) as usize);
        let ys = (dy.max(0) as usize)..((h as i64 + dy.min(0)) as usize);
        let n = (xs.len() * ys.len()) as f64;
        let (mut sa, mut sb) = (0.0, 0.0);
        for y in ys.clone() {
            for x in xs.clone() {
                sa += conj_mean.get(x, y);
                sb += probe_mean.get((x as i64 - dx) as usize, (y as i64 - dy) as usize);
            }
        }
        let (ma, mb) = (sa / n, sb / n);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for y in ys.clone() {
            for x in xs.clone() {
                let a = conj_mean.get(x, y) - ma;
                let b = probe_mean.get((x as i64 - dx) as usize, (y as i64 - dy) as usize) - mb;
                sab += a * b;
                saa += a * a;
                sbb += b * b;
            }
        }
        if saa <= 0.0 || sbb <= 0.0 {
            continue;
        }
        let r = sab / (saa * sbb).sqrt();
        if r > best_r + 1e-12 {
            best_r = r;
            best = Some((dx, dy));
        }
    }
    best.ok_or(XcorrError::DegenerateInput(
        "no overlap with nonzero variance",
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Side of the square probe (and full conjugate) crop.
    pub probe_crop: usize,
    /// Side of the central conjugate patch scanned over the probe.
    pub conj_select: usize,
    /// Side of the central region used for noise ratios.
    pub nr_region: usize,
    pub max_shift: usize,
    /// Box-filter size used to locate each beam.
    pub smoothing: usize,
    pub background_correct: bool,
    pub normalization: Normalization,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            probe_crop: 120,
            conj_select: 80,
            nr_region: 80,
            max_shift: 8,
            smoothing: 5,
            background_correct: false,
            normalization: Normalization::Covariance,
        }
    }
}

/// Crop regions and registration estimated once from ensemble means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub rotated: bool,
    pub probe_region: AnalysisRegion,
    /// Conjugate crop after registration, in (rotated) frame coordinates.
    pub conj_region: AnalysisRegion,
    pub shift: (i64, i64),
}

fn mean_image<'a>(frames: impl Iterator<Item = &'a Frame<f32>>) -> Option<Frame<f64>> {
    let mut acc: Option<Frame<f64>> = None;
    let mut n = 0usize;
    for f in frames {
        let f = f.to_f64();
        acc = Some(match acc {
            None => f,
            Some(a) => a.add(&f).ok()?,
        });
        n += 1;
    }
    acc.map(|a| a.scale(1.0 / n as f64))
}

impl Alignment {
    pub fn estimate(
        acqs: &[AcquisitionSet],
        rotate: bool,
        cfg: &PipelineConfig,
    ) -> Result<Self, XcorrError> {
        let first = acqs.first().ok_or(XcorrError::Empty)?;
        for a in acqs {
            a.validate()?;
            if a.dims() != first.dims() {
                return Err(
                    StackError::DimensionMismatch("acquisitions differ in size".into()).into(),
                );
            }
        }
        let (fw, fh) = first.dims();
        let probe_mean = mean_image(acqs.iter().flat_map(|a| [&a.probe_f1, &a.probe_f2]))
            .ok_or(XcorrError::Empty)?;
        let mut conj_mean = mean_image(acqs.iter().flat_map(|a| [&a.conj_f1, &a.conj_f2]))
            .ok_or(XcorrError::Empty)?;
        if rotate {
            conj_mean = rotate180(&conj_mean);
        }
        let side = cfg.probe_crop;
        let (px, py) = smoothed_argmax(&probe_mean, cfg.smoothing);
        let (cx, cy) = smoothed_argmax(&conj_mean, cfg.smoothing);
        let probe_region = AnalysisRegion::around(px, py, side, side, fw, fh)?;
        let conj_crop = AnalysisRegion::around(cx, cy, side, side, fw, fh)?;
        let shift = register(
            &crop(&probe_mean, &probe_region)?,
            &crop(&conj_mean, &conj_crop)?,
            cfg.max_shift,
        )?;
        let conj_region = conj_crop.shifted(shift.0, shift.1, fw, fh)?;
        Ok(Self {
            rotated: rotate,
            probe_region,
            conj_region,
            shift,
        })
    }

    /// Acquisition reduced to registered `probe_crop`-sized crops of both beams.
    pub fn apply(&self, acq: &AcquisitionSet) -> Result<AcquisitionSet, XcorrError> {
        let rotate = self.rotated;
        let conj = |f: &Frame<f32>| {
            if rotate {
                crop(&rotate180(f), &self.conj_region)
            } else {
                crop(f, &self.conj_region)
            }
        };
        let probe = |f: &Frame<f32>| crop(f, &self.probe_region);
        Ok(AcquisitionSet {
            probe_f1: probe(&acq.probe_f1)?,
            probe_f2: probe(&acq.probe_f2)?,
            conj_f1: conj(&acq.conj_f1)?,
            conj_f2: conj(&acq.conj_f2)?,
            bg_probe: acq.bg_probe.as_ref().map(probe).transpose()?,
            bg_conj: acq.bg_conj.as_ref().map(conj).transpose()?,
        })
    }
}

/// Fluctuation images of an aligned acquisition: full probe crop, and the
/// central `conj_select` patch of the conjugate.
pub fn difference_frames(
    aligned: &AcquisitionSet,
    alignment: &Alignment,
    cfg: &PipelineConfig,
) -> Result<FluctuationPair, XcorrError> {
    aligned.validate()?;
    let diff = |a: &Frame<f32>, b: &Frame<f32>, bg: Option<&Frame<f32>>| {
        let (mut a, mut b) = (a.to_f64(), b.to_f64());
        if let Some(bg) = bg.filter(|_| cfg.background_correct) {
            let bg = bg.to_f64();
            a = a.sub(&bg)?;
            b = b.sub(&bg)?;
        }
        a.sub(&b)
    };
    let probe_fluct = diff(
        &aligned.probe_f1,
        &aligned.probe_f2,
        aligned.bg_probe.as_ref(),
    )?;
    let conj_full = diff(&aligned.conj_f1, &aligned.conj_f2, aligned.bg_conj.as_ref())?;
    let (w, h) = conj_full.dims();
    let select = AnalysisRegion::centered(w, h, cfg.conj_select, cfg.conj_select)?;
    Ok(FluctuationPair {
        probe_fluct,
        conj_fluct: crop(&conj_full, &select)?,
        registration_shift: alignment.shift,
        rotated: alignment.rotated,
    })
}

/// Per-acquisition statistics through the FFT engine.
pub fn per_acquisition_stats(
    pairs: &[FluctuationPair],
) -> Result<Vec<XcorrAccumulator>, XcorrError> {
    let first = pairs.first().ok_or(XcorrError::Empty)?;
    let (w, h) = first.probe_fluct.dims();
    let engine = CorrelationEngine::new(w, h);
    pairs.par_iter().map(|p| engine.stats(p)).collect()
}

/// Sum in slice order, so results do not depend on the thread count.
pub fn sum_stats(stats: &[XcorrAccumulator]) -> Result<XcorrAccumulator, XcorrError> {
    let (first, rest) = stats.split_first().ok_or(XcorrError::Empty)?;
    let mut total = first.clone();
    for s in rest {
        total.add(s);
    }
    Ok(total)
}

pub fn accumulate_pairs(pairs: &[FluctuationPair]) -> Result<XcorrAccumulator, XcorrError> {
    sum_stats(&per_acquisition_stats(pairs)?)
}

/// Mean cross-correlation map over acquisitions (alignment from the same set).
pub fn accumulate_xcorr(
    acqs: &[AcquisitionSet],
    rotate: bool,
    cfg: &PipelineConfig,
) -> Result<(CrossCorrMap, Alignment), XcorrError> {
    let alignment = Alignment::estimate(acqs, rotate, cfg)?;
    let pairs = fluctuation_pairs(acqs, &alignment, cfg)?;
    let map = accumulate_pairs(&pairs)?.finish(cfg.normalization, lag_origin(&pairs[0]))?;
    Ok((map, alignment))
}

pub fn fluctuation_pairs(
    acqs: &[AcquisitionSet],
    alignment: &Alignment,
    cfg: &PipelineConfig,
) -> Result<Vec<FluctuationPair>, XcorrError> {
    if acqs.is_empty() {
        return Err(XcorrError::Empty);
    }
    acqs.par_iter()
        .map(|a| difference_frames(&alignment.apply(a)?, alignment, cfg))
        .collect()
}

/// Map statistics for a finished accumulation.
pub fn finish_pairs(
    pairs: &[FluctuationPair],
    normalization: Normalization,
) -> Result<CrossCorrMap, XcorrError> {
    let first = pairs.first().ok_or(XcorrError::Empty)?;
    accumulate_pairs(pairs)?.finish(normalization, lag_origin(first))
}

/// Peak value over the RMS of the map outside a `(2r+1)²` box around the peak.
pub fn peak_to_floor(map: &CrossCorrMap, exclude_radius: usize) -> f64 {
    let v = &map.values;
    let (w, h) = v.dims();
    let (mut px, mut py, mut peak) = (0, 0, f64::NEG_INFINITY);
    for y in 0..h {
        for x in 0..w {
            if v.get(x, y) > peak {
                peak = v.get(x, y);
                (px, py) = (x, y);
            }
        }
    }
    let (mut ss, mut n) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            if x.abs_diff(px) > exclude_radius || y.abs_diff(py) > exclude_radius {
                ss += v.get(x, y).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 {
        return f64::INFINITY;
    }
    peak / (ss / n as f64).sqrt()
}

/// Value at zero lag.
pub fn central_value(map: &CrossCorrMap) -> f64 {
    let ix = (-map.lag_origin.0) as usize;
    let iy = (-map.lag_origin.1) as usize;
    map.values.get(ix, iy)
}

/// Covariance of `a(x + Δ)` and `b(x)` over the overlap of two equal-size
/// images, with overlap means removed.
pub fn overlap_covariance(a: &Frame<f64>, b: &Frame<f64>, dx: i64, dy: i64) -> f64 {
    let (w, h) = b.dims();
    let xs = ((-dx).max(0) as usize)..((w as i64 - dx.max(0)) as usize);
    let ys = ((-dy).max(0) as usize)..((h as i64 - dy.max(0)) as usize);
    let n = (xs.len() * ys.len()) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let at = |x: usize, y: usize| a.get((x as i64 + dx) as usize, (y as i64 + dy) as usize);
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in ys.clone() {
        for x in xs.clone() {
            sa += at(x, y);
            sb += b.get(x, y);
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let mut s = 0.0;
    for y in ys.clone() {
        for x in xs.clone() {
            s += (at(x, y) - ma) * (b.get(x, y) - mb);
        }
    }
    s / n
}
