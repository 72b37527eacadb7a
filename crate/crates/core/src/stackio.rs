//! Image data model, the TBIM stack format, and elementary raster transforms.
//!
//! A [`Frame`] is a single row-major 2D raster. Raw photo-count frames are
//! kept as `Frame<f32>` (counts are small integers, exactly representable),
//! everything derived from them (differences, crops fed to the statistics)
//! is `Frame<f64>`.
//!
//! TBIM layout, all little-endian:
//!
//! | offset | size | field            |
//! |--------|------|------------------|
//! | 0      | 4    | magic `"TBIM"`   |
//! | 4      | 2    | version (`1`)    |
//! | 6      | 2    | dtype (0 f32, 1 f64) |
//! | 8      | 4    | width            |
//! | 12     | 4    | height           |
//! | 16     | 4    | n_frames         |
//! | 20     | 8    | pixel size (m)   |
//! | 28     | 8    | frame interval (s) |
//! | 36     | 8    | exposure (s)     |
//!
//! followed by the payload, row-major within a frame, frame-major overall.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TBIM_MAGIC: [u8; 4] = *b"TBIM";
pub const TBIM_VERSION: u16 = 1;
pub const TBIM_HEADER_LEN: usize = 44;

#[derive(Debug, Error)]
pub enum StackError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("bad magic {0:?}, expected \"TBIM\"")]
    BadMagic([u8; 4]),
    #[error("unsupported TBIM version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u16),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("region {region:?} does not fit inside a {width}x{height} frame")]
    RegionOutOfBounds {
        region: AnalysisRegion,
        width: usize,
        height: usize,
    },
    #[error("bin size must be at least 1")]
    InvalidBin,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = StackError> = std::result::Result<T, E>;

/// A single 2D raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T = f64> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Frame<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(StackError::DimensionMismatch(format!(
                "{} values for a {width}x{height} frame",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> Frame<U> {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with<U: Copy, V: Copy>(
        &self,
        other: &Frame<U>,
        f: impl Fn(T, U) -> V,
    ) -> Result<Frame<V>> {
        if self.dims() != other.dims() {
            return Err(StackError::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(Frame {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn full_region(&self) -> AnalysisRegion {
        AnalysisRegion::new(0, 0, self.width, self.height)
    }
}

impl<T: Copy + Into<f64>> Frame<T> {
    pub fn to_f64(&self) -> Frame<f64> {
        self.map(Into::into)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v.into()).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }
}

impl Frame<f64> {
    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Frame<f64>) -> Result<Frame<f64>> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Frame<f64>) -> Result<Frame<f64>> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, factor: f64) -> Frame<f64> {
        self.map(|v| v * factor)
    }

    pub fn transpose(&self) -> Frame<f64> {
        Frame::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }
}

/// Pixel rectangle inside a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisRegion {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl AnalysisRegion {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
        }
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.width > 0
            && self.height > 0
            && self.x0 + self.width <= width
            && self.y0 + self.height <= height
    }

    /// Region of `width x height` centered in a `frame_w x frame_h` frame
    /// (for odd margins the extra pixel goes to the far side).
    pub fn centered(frame_w: usize, frame_h: usize, width: usize, height: usize) -> Result<Self> {
        let region = Self::new(
            frame_w.saturating_sub(width) / 2,
            frame_h.saturating_sub(height) / 2,
            width,
            height,
        );
        if !region.fits_in(frame_w, frame_h) {
            return Err(StackError::RegionOutOfBounds {
                region,
                width: frame_w,
                height: frame_h,
            });
        }
        Ok(region)
    }

    /// Region of the given size centered on pixel `(cx, cy)`, clamped so it
    /// stays inside the frame.
    pub fn around(
        cx: usize,
        cy: usize,
        width: usize,
        height: usize,
        frame_w: usize,
        frame_h: usize,
    ) -> Result<Self> {
        if width > frame_w || height > frame_h || width == 0 || height == 0 {
            return Err(StackError::RegionOutOfBounds {
                region: Self::new(0, 0, width, height),
                width: frame_w,
                height: frame_h,
            });
        }
        let x0 = cx.saturating_sub(width / 2).min(frame_w - width);
        let y0 = cy.saturating_sub(height / 2).min(frame_h - height);
        Ok(Self::new(x0, y0, width, height))
    }

    /// Same region moved by a signed pixel offset; errors if it leaves the frame.
    pub fn shifted(&self, dx: i64, dy: i64, frame_w: usize, frame_h: usize) -> Result<Self> {
        let x0 = self.x0 as i64 + dx;
        let y0 = self.y0 as i64 + dy;
        let out_of_bounds = || StackError::RegionOutOfBounds {
            region: *self,
            width: frame_w,
            height: frame_h,
        };
        if x0 < 0 || y0 < 0 {
            return Err(out_of_bounds());
        }
        let moved = Self::new(x0 as usize, y0 as usize, self.width, self.height);
        if !moved.fits_in(frame_w, frame_h) {
            return Err(out_of_bounds());
        }
        Ok(moved)
    }
}

pub fn crop<T: Copy>(frame: &Frame<T>, region: &AnalysisRegion) -> Result<Frame<T>> {
    if !region.fits_in(frame.width, frame.height) {
        return Err(StackError::RegionOutOfBounds {
            region: *region,
            width: frame.width,
            height: frame.height,
        });
    }
    let mut data = Vec::with_capacity(region.width * region.height);
    for y in region.y0..region.y0 + region.height {
        let row = frame.row(y);
        data.extend_from_slice(&row[region.x0..region.x0 + region.width]);
    }
    Ok(Frame {
        width: region.width,
        height: region.height,
        data,
    })
}

/// `out[y][x] = in[H-1-y][W-1-x]`.
pub fn rotate180<T: Copy>(frame: &Frame<T>) -> Frame<T> {
    let mut data = frame.data.clone();
    data.reverse();
    Frame {
        width: frame.width,
        height: frame.height,
        data,
    }
}

/// Sums non-overlapping `k x k` blocks. Rows and columns past the last full
/// block are dropped.
pub fn bin_superpixels(frame: &Frame<f64>, k: usize) -> Result<Frame<f64>> {
    if k == 0 {
        return Err(StackError::InvalidBin);
    }
    let out_w = frame.width / k;
    let out_h = frame.height / k;
    let mut out = vec![0.0; out_w * out_h];
    for y in 0..out_h * k {
        let row = frame.row(y);
        let out_row = &mut out[(y / k) * out_w..(y / k + 1) * out_w];
        for (bx, acc) in out_row.iter_mut().enumerate() {
            *acc += row[bx * k..(bx + 1) * k].iter().sum::<f64>();
        }
    }
    Ok(Frame {
        width: out_w,
        height: out_h,
        data: out,
    })
}

/// Location of the maximum of the frame after a `size x size` box filter
/// (windows truncated at the borders, normalized by the in-frame pixel count).
/// Ties go to the smallest row-major index.
pub fn smoothed_argmax<T: Copy + Into<f64>>(frame: &Frame<T>, size: usize) -> (usize, usize) {
    let (w, h) = frame.dims();
    let half = size / 2;
    // Summed-area table with a zero border.
    let mut sat = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut run = 0.0;
        for x in 0..w {
            run += frame.get(x, y).into();
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + run;
        }
    }
    let mut best = (0, 0);
    let mut best_val = f64::NEG_INFINITY;
    for y in 0..h {
        let y_lo = y.saturating_sub(half);
        let y_hi = (y + half + 1).min(h);
        for x in 0..w {
            let x_lo = x.saturating_sub(half);
            let x_hi = (x + half + 1).min(w);
            let s = sat[y_hi * (w + 1) + x_hi]
                - sat[y_lo * (w + 1) + x_hi]
                - sat[y_hi * (w + 1) + x_lo]
                + sat[y_lo * (w + 1) + x_lo];
            let v = s / ((x_hi - x_lo) * (y_hi - y_lo)) as f64;
            if v > best_val {
                best_val = v;
                best = (x, y);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u16 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_code(code: u16) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(StackError::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// A stack of equally sized frames plus acquisition metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub dtype: Dtype,
    /// Row-major within a frame, frame-major overall.
    pub data: Vec<f64>,
    /// Pixel pitch in meters.
    pub pixel_size_s: f64,
    /// Seconds between consecutive frames.
    pub frame_interval: f64,
    /// Seconds.
    pub exposure: f64,
}

impl FrameStack {
    pub fn from_frames<T: Copy + Into<f64>>(
        frames: &[&Frame<T>],
        dtype: Dtype,
        pixel_size_s: f64,
        frame_interval: f64,
        exposure: f64,
    ) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| StackError::InvalidDimensions("no frames".into()))?;
        let (width, height) = first.dims();
        let mut data = Vec::with_capacity(width * height * frames.len());
        for f in frames {
            if f.dims() != (width, height) {
                return Err(StackError::DimensionMismatch(format!(
                    "frame {:?} in a {width}x{height} stack",
                    f.dims()
                )));
            }
            data.extend(f.data().iter().map(|&v| v.into()));
        }
        let stack = Self {
            width,
            height,
            n_frames: frames.len(),
            dtype,
            data,
            pixel_size_s,
            frame_interval,
            exposure,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn frame_len(&self) -> usize {
        self.width * self.height
    }

    pub fn frame(&self, index: usize) -> Frame<f64> {
        let n = self.frame_len();
        Frame {
            width: self.width,
            height: self.height,
            data: self.data[index * n..(index + 1) * n].to_vec(),
        }
    }

    pub fn frame_f32(&self, index: usize) -> Frame<f32> {
        let n = self.frame_len();
        Frame {
            width: self.width,
            height: self.height,
            data: self.data[index * n..(index + 1) * n]
                .iter()
                .map(|&v| v as f32)
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.n_frames == 0 {
            return Err(StackError::InvalidDimensions(format!(
                "{}x{}x{}",
                self.width, self.height, self.n_frames
            )));
        }
        for (name, v) in [
            ("width", self.width),
            ("height", self.height),
            ("n_frames", self.n_frames),
        ] {
            if u32::try_from(v).is_err() {
                return Err(StackError::InvalidDimensions(format!(
                    "{name} = {v} overflows the u32 header field"
                )));
            }
        }
        let expected = self
            .width
            .checked_mul(self.height)
            .and_then(|n| n.checked_mul(self.n_frames))
            .ok_or_else(|| StackError::InvalidDimensions("pixel count overflows".into()))?;
        if self.data.len() != expected {
            return Err(StackError::InvalidDimensions(format!(
                "{} values for {}x{}x{}",
                self.data.len(),
                self.width,
                self.height,
                self.n_frames
            )));
        }
        if !(self.pixel_size_s > 0.0) {
            return Err(StackError::InvalidDimensions(format!(
                "pixel_size_s must be positive, got {}",
                self.pixel_size_s
            )));
        }
        Ok(())
    }
}

/// Serializes `stack` as TBIM and returns the number of bytes written.
pub fn write_stack<W: Write>(stack: &FrameStack, mut sink: W) -> Result<u64> {
    stack.validate()?;
    let mut header = Vec::with_capacity(TBIM_HEADER_LEN);
    header.extend_from_slice(&TBIM_MAGIC);
    header.extend_from_slice(&TBIM_VERSION.to_le_bytes());
    header.extend_from_slice(&stack.dtype.code().to_le_bytes());
    header.extend_from_slice(&(stack.width as u32).to_le_bytes());
    header.extend_from_slice(&(stack.height as u32).to_le_bytes());
    header.extend_from_slice(&(stack.n_frames as u32).to_le_bytes());
    header.extend_from_slice(&stack.pixel_size_s.to_le_bytes());
    header.extend_from_slice(&stack.frame_interval.to_le_bytes());
    header.extend_from_slice(&stack.exposure.to_le_bytes());
    debug_assert_eq!(header.len(), TBIM_HEADER_LEN);
    sink.write_all(&header)?;

    let mut payload = Vec::with_capacity(stack.data.len() * stack.dtype.size());
    match stack.dtype {
        Dtype::F32 => {
            for &v in &stack.data {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in &stack.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    sink.write_all(&payload)?;
    sink.flush()?;
    Ok((header.len() + payload.len()) as u64)
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn read_stack<R: Read>(mut source: R) -> Result<FrameStack> {
    let mut header = [0u8; TBIM_HEADER_LEN];
    let got = read_full(&mut source, &mut header)?;
    if got >= 4 && header[..4] != TBIM_MAGIC {
        return Err(StackError::BadMagic(header[..4].try_into().unwrap()));
    }
    if got < TBIM_HEADER_LEN {
        return Err(StackError::TruncatedPayload {
            expected: TBIM_HEADER_LEN,
            got,
        });
    }
    let u16_at = |o: usize| u16::from_le_bytes([header[o], header[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());

    let version = u16_at(4);
    if version != TBIM_VERSION {
        return Err(StackError::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(u16_at(6))?;
    let width = u32_at(8) as usize;
    let height = u32_at(12) as usize;
    let n_frames = u32_at(16) as usize;
    if width == 0 || height == 0 || n_frames == 0 {
        return Err(StackError::InvalidDimensions(format!(
            "{width}x{height}x{n_frames}"
        )));
    }
    let n_values = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(n_frames))
        .ok_or_else(|| StackError::InvalidDimensions("pixel count overflows".into()))?;
    let expected = n_values * dtype.size();
    let mut payload = vec![0u8; expected];
    let got = read_full(&mut source, &mut payload)?;
    if got < expected {
        return Err(StackError::TruncatedPayload { expected, got });
    }
    let data = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let stack = FrameStack {
        width,
        height,
        n_frames,
        dtype,
        data,
        pixel_size_s: f64_at(20),
        frame_interval: f64_at(28),
        exposure: f64_at(36),
    };
    stack.validate()?;
    Ok(stack)
}

/// The four analysis frames of one acquisition plus optional backgrounds
/// recorded with the probe seed off.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSet {
    pub probe_f1: Frame<f32>,
    pub probe_f2: Frame<f32>,
    pub conj_f1: Frame<f32>,
    pub conj_f2: Frame<f32>,
    pub bg_probe: Option<Frame<f32>>,
    pub bg_conj: Option<Frame<f32>>,
}

impl AcquisitionSet {
    pub fn dims(&self) -> (usize, usize) {
        self.probe_f1.dims()
    }

    pub fn has_background(&self) -> bool {
        self.bg_probe.is_some() && self.bg_conj.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        let others = [&self.probe_f2, &self.conj_f1, &self.conj_f2]
            .into_iter()
            .chain(self.bg_probe.as_ref())
            .chain(self.bg_conj.as_ref());
        for f in others {
            if f.dims() != dims {
                return Err(StackError::DimensionMismatch(format!(
                    "acquisition frames {:?} vs {:?}",
                    f.dims(),
                    dims
                )));
            }
        }
        Ok(())
    }

    /// Applies `f` to every member frame, backgrounds included.
    pub fn map_frames(&self, f: impl Fn(&Frame<f32>) -> Result<Frame<f32>>) -> Result<Self> {
        Ok(Self {
            probe_f1: f(&self.probe_f1)?,
            probe_f2: f(&self.probe_f2)?,
            conj_f1: f(&self.conj_f1)?,
            conj_f2: f(&self.conj_f2)?,
            bg_probe: self.bg_probe.as_ref().map(&f).transpose()?,
            bg_conj: self.bg_conj.as_ref().map(&f).transpose()?,
        })
    }

    /// Same acquisition with only the conjugate-side frames transformed.
    pub fn map_conjugate(&self, f: impl Fn(&Frame<f32>) -> Result<Frame<f32>>) -> Result<Self> {
        Ok(Self {
            probe_f1: self.probe_f1.clone(),
            probe_f2: self.probe_f2.clone(),
            conj_f1: f(&self.conj_f1)?,
            conj_f2: f(&self.conj_f2)?,
            bg_probe: self.bg_probe.clone(),
            bg_conj: self.bg_conj.as_ref().map(&f).transpose()?,
        })
    }

    /// Multiplies every count by a conversion gain (counts to photoelectrons).
    pub fn with_gain(&self, gain: f64) -> Self {
        let g = gain as f32;
        self.map_frames(|f| Ok(f.map(|v| v * g)))
            .expect("pointwise map cannot fail")
    }
}

/// TBIM files for one acquisition series.
#[derive(Debug, Clone, PartialEq)]
pub struct StackSet {
    /// Frames `[a0 f1, a0 f2, a1 f1, ...]`.
    pub probe: FrameStack,
    pub conjugate: FrameStack,
    /// One background frame per acquisition, when recorded.
    pub bg_probe: Option<FrameStack>,
    pub bg_conj: Option<FrameStack>,
}

impl StackSet {
    pub fn from_acquisitions(
        acqs: &[AcquisitionSet],
        pixel_size_s: f64,
        frame_interval: f64,
        exposure: f64,
    ) -> Result<Self> {
        if acqs.is_empty() {
            return Err(StackError::InvalidDimensions("no acquisitions".into()));
        }
        let mut probe = Vec::with_capacity(2 * acqs.len());
        let mut conj = Vec::with_capacity(2 * acqs.len());
        for a in acqs {
            a.validate()?;
            probe.extend([&a.probe_f1, &a.probe_f2]);
            conj.extend([&a.conj_f1, &a.conj_f2]);
        }
        let mk = |frames: &[&Frame<f32>]| {
            FrameStack::from_frames(frames, Dtype::F32, pixel_size_s, frame_interval, exposure)
        };
        let with_bg = acqs.iter().all(AcquisitionSet::has_background);
        let (bg_probe, bg_conj) = if with_bg {
            let bp: Vec<_> = acqs.iter().map(|a| a.bg_probe.as_ref().unwrap()).collect();
            let bc: Vec<_> = acqs.iter().map(|a| a.bg_conj.as_ref().unwrap()).collect();
            (Some(mk(&bp)?), Some(mk(&bc)?))
        } else {
            (None, None)
        };
        Ok(Self {
            probe: mk(&probe)?,
            conjugate: mk(&conj)?,
            bg_probe,
            bg_conj,
        })
    }

    pub fn to_acquisitions(&self) -> Result<Vec<AcquisitionSet>> {
        if !self.probe.n_frames.is_multiple_of(2) || self.probe.n_frames != self.conjugate.n_frames
        {
            return Err(StackError::DimensionMismatch(format!(
                "probe stack has {} frames, conjugate {}; expected equal even counts",
                self.probe.n_frames, self.conjugate.n_frames
            )));
        }
        let n_acq = self.probe.n_frames / 2;
        for bg in [&self.bg_probe, &self.bg_conj].into_iter().flatten() {
            if bg.n_frames != n_acq {
                return Err(StackError::DimensionMismatch(format!(
                    "background stack has {} frames for {n_acq} acquisitions",
                    bg.n_frames
                )));
            }
        }
        (0..n_acq)
            .map(|i| {
                let acq = AcquisitionSet {
                    probe_f1: self.probe.frame_f32(2 * i),
                    probe_f2: self.probe.frame_f32(2 * i + 1),
                    conj_f1: self.conjugate.frame_f32(2 * i),
                    conj_f2: self.conjugate.frame_f32(2 * i + 1),
                    bg_probe: self.bg_probe.as_ref().map(|s| s.frame_f32(i)),
                    bg_conj: self.bg_conj.as_ref().map(|s| s.frame_f32(i)),
                };
                acq.validate()?;
                Ok(acq)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldMode {
    NearField,
    FarField,
}

/// Imaging geometry used to turn fitted pixel widths into position or
/// momentum uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsConfig {
    pub mode: FieldMode,
    #[serde(rename = "magnification_M", default)]
    pub magnification_m: f64,
    #[serde(default)]
    pub focal_f: f64,
    #[serde(default)]
    pub wavelength_lambda: f64,
    pub pixel_size_s: f64,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
}

pub const HBAR: f64 = 1.054_571_817e-34;

fn default_hbar() -> f64 {
    HBAR
}

#[derive(Debug, Error, PartialEq)]
pub enum OpticsError {
    #[error("near-field optics need magnification_M > 0")]
    BadMagnification,
    #[error("far-field optics need focal_f > 0 and wavelength_lambda > 0")]
    BadFourierLens,
    #[error("pixel_size_s must be positive")]
    BadPixelSize,
}

impl OpticsConfig {
    pub fn near_field(magnification: f64, pixel_size: f64) -> Self {
        Self {
            mode: FieldMode::NearField,
            magnification_m: magnification,
            focal_f: 0.0,
            wavelength_lambda: 0.0,
            pixel_size_s: pixel_size,
            hbar: HBAR,
        }
    }

    pub fn far_field(focal: f64, wavelength: f64, pixel_size: f64) -> Self {
        Self {
            mode: FieldMode::FarField,
            magnification_m: 0.0,
            focal_f: focal,
            wavelength_lambda: wavelength,
            pixel_size_s: pixel_size,
            hbar: HBAR,
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.pixel_size_s > 0.0) {
            return Err(OpticsError::BadPixelSize);
        }
        match self.mode {
            FieldMode::NearField if !(self.magnification_m > 0.0) => {
                Err(OpticsError::BadMagnification)
            }
            FieldMode::FarField if !(self.focal_f > 0.0 && self.wavelength_lambda > 0.0) => {
                Err(OpticsError::BadFourierLens)
            }
            _ => Ok(()),
        }
    }
}
