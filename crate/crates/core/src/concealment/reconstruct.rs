use super::LossMask;
use crate::error::{Error, Result};
use crate::imaging::{bilinear_sample, Frame, MotionField, PixelPos};

/// Replaces lost-block pixels with the motion-compensated previous frame.
/// Received pixels are passed through untouched.
pub fn conceal_frame(
    curr_damaged: &Frame,
    prev: &Frame,
    field: &MotionField,
    mask: &LossMask,
) -> Result<Frame> {
    let dims = curr_damaged.dims();
    for other in [prev.dims(), field.dims()] {
        if other != dims {
            return Err(Error::ShapeMismatch {
                expected: dims,
                actual: other,
            });
        }
    }
    mask.ensure_frame(dims.0, dims.1)?;
    let mut out = curr_damaged.clone();
    for v in 0..dims.1 {
        for h in 0..dims.0 {
            if !mask.pixel_lost(h, v) {
                continue;
            }
            let value = if field.is_valid(h, v) {
                bilinear_sample(prev, PixelPos::at(h, v).displaced(field.get(h, v)))
            } else {
                prev.get(h, v)
            };
            out.set(h, v, value);
        }
    }
    Ok(out)
}

/// Sets every lost-block pixel to `fill`. With `fill = 0` this is both the
/// decoder-side view of a damaged frame and the zero-fill baseline.
pub fn blank_lost(frame: &Frame, mask: &LossMask, fill: f64) -> Result<Frame> {
    mask.ensure_frame(frame.width(), frame.height())?;
    let mut out = frame.clone();
    for v in 0..frame.height() {
        for h in 0..frame.width() {
            if mask.pixel_lost(h, v) {
                out.set(h, v, fill);
            }
        }
    }
    Ok(out)
}
