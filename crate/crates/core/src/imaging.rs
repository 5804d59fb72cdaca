//! Frames, displacement fields and the sampling primitives used by motion
//! estimation and compensation.
//!
//! Coordinates follow the `(h, v)` convention: `h` is the column (horizontal)
//! and `v` the row (vertical). All sampling clamps to the nearest edge pixel.

use crate::error::{Error, Result};

/// Default bound on either displacement component, in pixels.
pub const DEFAULT_D_MAX: f64 = 15.0;

/// A single grayscale frame with real-valued intensities (nominally `[0, 255]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidDimensions {
                width,
                height,
                reason: "data length does not match width x height",
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds a frame by evaluating `f(h, v)` at every integer pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for h in 0..width {
                data.push(f(h, v));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, h: usize, v: usize) -> f64 {
        self.data[v * self.width + h]
    }

    #[inline]
    pub fn set(&mut self, h: usize, v: usize, value: f64) {
        self.data[v * self.width + h] = value;
    }

    /// Rounds every intensity to the nearest integer in `[0, 255]`.
    pub fn quantized(&self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&x| quantize(x) as f64).collect(),
        }
    }
}

/// Clamps to `[0, 255]` and rounds half away from zero.
#[inline]
pub fn quantize(x: f64) -> u8 {
    if x.is_nan() {
        return 0;
    }
    x.clamp(0.0, 255.0).round() as u8
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions {
            width,
            height,
            reason: "width and height must be at least 1",
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPos {
    pub h: f64,
    pub v: f64,
}

impl PixelPos {
    #[inline]
    pub const fn new(h: f64, v: f64) -> Self {
        Self { h, v }
    }

    #[inline]
    pub fn at(h: usize, v: usize) -> Self {
        Self {
            h: h as f64,
            v: v as f64,
        }
    }

    /// `self - d`, the position a pixel came from in the previous frame.
    #[inline]
    pub fn displaced(self, d: DisplacementVector) -> Self {
        Self {
            h: self.h - d.dh,
            v: self.v - d.dv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisplacementVector {
    pub dh: f64,
    pub dv: f64,
}

impl DisplacementVector {
    pub const ZERO: Self = Self { dh: 0.0, dv: 0.0 };

    #[inline]
    pub const fn new(dh: f64, dv: f64) -> Self {
        Self { dh, dv }
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dh.hypot(self.dv)
    }

    #[inline]
    pub fn clamped(self, d_max: f64) -> Self {
        Self {
            dh: self.dh.clamp(-d_max, d_max),
            dv: self.dv.clamp(-d_max, d_max),
        }
    }

    #[inline]
    pub fn within(self, d_max: f64) -> bool {
        self.dh.abs() <= d_max && self.dv.abs() <= d_max
    }
}

impl std::ops::Add for DisplacementVector {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self::new(self.dh + rhs.dh, self.dv + rhs.dv)
    }
}

/// Per-pixel boolean flags, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for v in 0..height {
            for h in 0..width {
                bits.push(f(h, v));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, h: usize, v: usize) -> bool {
        self.bits[v * self.width + h]
    }

    #[inline]
    pub fn set(&mut self, h: usize, v: usize, value: bool) {
        self.bits[v * self.width + h] = value;
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Dense displacement field with a validity flag per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    width: usize,
    height: usize,
    vectors: Vec<DisplacementVector>,
    valid: Vec<bool>,
}

impl MotionField {
    /// All-zero field, every pixel flagged `valid`.
    pub fn zeros(width: usize, height: usize, valid: bool) -> Self {
        Self {
            width,
            height,
            vectors: vec![DisplacementVector::ZERO; width * height],
            valid: vec![valid; width * height],
        }
    }

    pub fn uniform(width: usize, height: usize, d: DisplacementVector) -> Self {
        Self {
            width,
            height,
            vectors: vec![d; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        vectors: Vec<DisplacementVector>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        check_dims(width, height)?;
        if vectors.len() != width * height || valid.len() != width * height {
            return Err(Error::InvalidDimensions {
                width,
                height,
                reason: "field storage does not match width x height",
            });
        }
        Ok(Self {
            width,
            height,
            vectors,
            valid,
        })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, h: usize, v: usize) -> DisplacementVector {
        self.vectors[v * self.width + h]
    }

    #[inline]
    pub fn is_valid(&self, h: usize, v: usize) -> bool {
        self.valid[v * self.width + h]
    }

    #[inline]
    pub fn set(&mut self, h: usize, v: usize, d: DisplacementVector, valid: bool) {
        let i = v * self.width + h;
        self.vectors[i] = d;
        self.valid[i] = valid;
    }

    #[inline]
    pub fn vectors(&self) -> &[DisplacementVector] {
        &self.vectors
    }

    #[inline]
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// True when every valid vector lies within `±d_max` in both components.
    pub fn respects_bound(&self, d_max: f64) -> bool {
        self.vectors
            .iter()
            .zip(&self.valid)
            .all(|(d, &ok)| !ok || d.within(d_max))
    }
}

fn ensure_same_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}

/// Bilinear interpolation with clamp-to-edge addressing.
pub fn bilinear_sample(frame: &Frame, pos: PixelPos) -> f64 {
    let max_h = (frame.width - 1) as f64;
    let max_v = (frame.height - 1) as f64;
    let h = if pos.h.is_nan() {
        0.0
    } else {
        pos.h.clamp(0.0, max_h)
    };
    let v = if pos.v.is_nan() {
        0.0
    } else {
        pos.v.clamp(0.0, max_v)
    };

    let h0 = h.floor();
    let v0 = v.floor();
    let fh = h - h0;
    let fv = v - v0;
    let h0 = h0 as usize;
    let v0 = v0 as usize;
    let h1 = (h0 + 1).min(frame.width - 1);
    let v1 = (v0 + 1).min(frame.height - 1);

    let top = frame.get(h0, v0) * (1.0 - fh) + frame.get(h1, v0) * fh;
    let bottom = frame.get(h0, v1) * (1.0 - fh) + frame.get(h1, v1) * fh;
    top * (1.0 - fv) + bottom * fv
}

/// Unit-step central differences of the interpolated intensity; one-sided
/// differences where a step would leave the frame.
pub fn spatial_gradient(frame: &Frame, pos: PixelPos) -> (f64, f64) {
    let max_h = (frame.width - 1) as f64;
    let max_v = (frame.height - 1) as f64;
    let h = pos.h.clamp(0.0, max_h);
    let v = pos.v.clamp(0.0, max_v);
    (
        axis_difference(h, max_h, |x| bilinear_sample(frame, PixelPos::new(x, v))),
        axis_difference(v, max_v, |x| bilinear_sample(frame, PixelPos::new(h, x))),
    )
}

fn axis_difference(x: f64, max: f64, sample: impl Fn(f64) -> f64) -> f64 {
    let back = x - 1.0 >= 0.0;
    let fwd = x + 1.0 <= max;
    match (back, fwd) {
        (true, true) => (sample(x + 1.0) - sample(x - 1.0)) / 2.0,
        (false, true) => sample(x + 1.0) - sample(x),
        (true, false) => sample(x) - sample(x - 1.0),
        // Frame is a single pixel wide along this axis.
        (false, false) => 0.0,
    }
}

/// Displaced frame difference `I_k(r) - I_{k-1}(r - d)`.
pub fn dfd(curr: &Frame, prev: &Frame, pos: PixelPos, dv: DisplacementVector) -> f64 {
    let h = pos.h.round().clamp(0.0, (curr.width - 1) as f64) as usize;
    let v = pos.v.round().clamp(0.0, (curr.height - 1) as f64) as usize;
    curr.get(h, v) - bilinear_sample(prev, pos.displaced(dv))
}

/// Motion-compensated prediction of the current frame from `prev`.
/// Pixels whose vector is flagged invalid copy the co-located `prev` pixel.
pub fn warp_frame(prev: &Frame, field: &MotionField) -> Result<Frame> {
    ensure_same_dims(prev.dims(), field.dims())?;
    Frame::from_fn(prev.width, prev.height, |h, v| {
        if field.is_valid(h, v) {
            bilinear_sample(prev, PixelPos::at(h, v).displaced(field.get(h, v)))
        } else {
            prev.get(h, v)
        }
    })
}
