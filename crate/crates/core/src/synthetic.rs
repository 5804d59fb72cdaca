//! Seeded synthetic sequences with known motion, for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imaging::{DisplacementVector, Frame};

/// Smooth random texture: a sum of plane waves with wavelengths between 12
/// and 40 pixels, centred on mid-gray.
#[derive(Debug, Clone)]
pub struct SmoothTexture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl SmoothTexture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..6)
            .map(|_| {
                let wavelength = rng.gen_range(12.0..40.0);
                let angle = rng.gen_range(0.0..std::f64::consts::PI);
                let k = std::f64::consts::TAU / wavelength;
                (
                    k * angle.cos(),
                    k * angle.sin(),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(8.0..18.0),
                )
            })
            .collect();
        Self { waves }
    }

    pub fn eval(&self, h: f64, v: f64) -> f64 {
        128.0
            + self
                .waves
                .iter()
                .map(|&(kh, kv, phase, amp)| amp * (kh * h + kv * v + phase).sin())
                .sum::<f64>()
    }

    /// The texture translated by `offset`, sampled on the integer grid.
    pub fn render(&self, width: usize, height: usize, offset: DisplacementVector) -> Result<Frame> {
        Frame::from_fn(width, height, |h, v| {
            self.eval(h as f64 - offset.dh, v as f64 - offset.dv)
        })
    }
}

/// Frame `k` is the texture moved by `k * velocity`, quantized to 8 bits.
pub fn global_translation(
    width: usize,
    height: usize,
    frames: usize,
    velocity: DisplacementVector,
    seed: u64,
) -> Result<Vec<Frame>> {
    let tex = SmoothTexture::new(seed);
    (0..frames)
        .map(|k| {
            let t = k as f64;
            tex.render(
                width,
                height,
                DisplacementVector::new(t * velocity.dh, t * velocity.dv),
            )
            .map(|f| f.quantized())
        })
        .collect()
}

/// Two independently textured regions split at column `split`; each region's
/// content translates with its own velocity behind a fixed boundary.
pub fn piecewise_translation(
    width: usize,
    height: usize,
    frames: usize,
    split: usize,
    left: DisplacementVector,
    right: DisplacementVector,
    seed: u64,
) -> Result<Vec<Frame>> {
    let tex_left = SmoothTexture::new(seed);
    let tex_right = SmoothTexture::new(seed.wrapping_add(0x9e37_79b9));
    (0..frames)
        .map(|k| {
            let t = k as f64;
            Frame::from_fn(width, height, |h, v| {
                let (tex, vel) = if h < split {
                    (&tex_left, left)
                } else {
                    (&tex_right, right)
                };
                tex.eval(h as f64 - t * vel.dh, v as f64 - t * vel.dv)
            })
            .map(|f| f.quantized())
        })
        .collect()
}

/// Adds seeded uniform noise in `[-amplitude, amplitude]` to every pixel.
pub fn add_noise(frame: &Frame, amplitude: f64, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = frame.clone();
    for x in out.data_mut() {
        *x += rng.gen_range(-amplitude..=amplitude);
    }
    out
}
