//! Dense pixel-recursive motion estimation.
//!
//! Around each pixel the displaced frame differences of a small window are
//! linearized in the displacement update, giving an overdetermined 2-unknown
//! system `y = H x + noise` that is solved by ordinary least squares. The
//! update is accumulated into the displacement and the system rebuilt at the
//! new prediction until the update falls below a hundredth of a pixel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{
    dfd, spatial_gradient, DisplacementVector, Frame, MotionField, PixelMask, PixelPos,
    DEFAULT_D_MAX,
};

/// Updates shorter than this (in pixels) end the refinement.
pub const CONVERGENCE_STEP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationConfig {
    /// Half-width of the square observation window.
    pub window_half: usize,
    pub max_refinements: usize,
    /// Minimum `trace(H^T H)` for a usable system.
    pub min_gradient_energy: f64,
    /// Maximum condition number of `H^T H`.
    pub max_condition: f64,
    pub d_max: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            window_half: 2,
            max_refinements: 10,
            min_gradient_energy: 1e-4,
            max_condition: 1e8,
            d_max: DEFAULT_D_MAX,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.into(),
            })
        };
        if self.window_half < 1 {
            return bad("window_half", "must be at least 1");
        }
        if self.max_refinements < 1 {
            return bad("max_refinements", "must be at least 1");
        }
        if [self.min_gradient_energy, self.max_condition]
            .iter()
            .any(|t| t.is_nan() || *t <= 0.0)
        {
            return bad("min_gradient_energy", "thresholds must be positive");
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return bad("d_max", "must be positive and finite");
        }
        Ok(())
    }
}

/// Stacked window observations `y = H x + noise` for one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSystem {
    /// Displaced frame differences at the current prediction.
    pub y: Vec<f64>,
    /// Rows `-grad I_{k-1}(p - d)`, so that `y ~ H x` for an update `x`.
    pub h: Vec<[f64; 2]>,
    pub window_half: usize,
    pub center: PixelPos,
}

impl ObservationSystem {
    pub fn rows(&self) -> usize {
        self.y.len()
    }

    /// `||y - H x||^2`.
    pub fn residual_sq(&self, x: DisplacementVector) -> f64 {
        self.y
            .iter()
            .zip(&self.h)
            .map(|(&y, row)| {
                let r = y - row[0] * x.dh - row[1] * x.dv;
                r * r
            })
            .sum()
    }
}

/// Builds the window system around `center` linearized at `dv_pred`.
pub fn build_observation(
    curr: &Frame,
    prev: &Frame,
    center: PixelPos,
    dv_pred: DisplacementVector,
    cfg: &EstimationConfig,
) -> ObservationSystem {
    observe(curr, prev, center, dv_pred, cfg, None)
}

/// As [`build_observation`], dropping rows whose window pixel is not legitimate.
pub fn build_observation_masked(
    curr: &Frame,
    prev: &Frame,
    center: PixelPos,
    dv_pred: DisplacementVector,
    cfg: &EstimationConfig,
    legit: &PixelMask,
) -> ObservationSystem {
    observe(curr, prev, center, dv_pred, cfg, Some(legit))
}

fn observe(
    curr: &Frame,
    prev: &Frame,
    center: PixelPos,
    dv_pred: DisplacementVector,
    cfg: &EstimationConfig,
    legit: Option<&PixelMask>,
) -> ObservationSystem {
    let n = cfg.window_half as isize;
    let ch = center.h.round() as isize;
    let cv = center.v.round() as isize;
    let side = (2 * cfg.window_half + 1).pow(2);
    let mut y = Vec::with_capacity(side);
    let mut h = Vec::with_capacity(side);
    for dv in -n..=n {
        for dh in -n..=n {
            let (ph, pv) = (ch + dh, cv + dv);
            if ph < 0 || pv < 0 || ph >= curr.width() as isize || pv >= curr.height() as isize {
                continue;
            }
            let (ph, pv) = (ph as usize, pv as usize);
            if legit.is_some_and(|m| !m.get(ph, pv)) {
                continue;
            }
            let p = PixelPos::at(ph, pv);
            let (gh, gv) = spatial_gradient(prev, p.displaced(dv_pred));
            y.push(dfd(curr, prev, p, dv_pred));
            h.push([-gh, -gv]);
        }
    }
    ObservationSystem {
        y,
        h,
        window_half: cfg.window_half,
        center,
    }
}

/// Least-squares update `(H^T H)^-1 H^T y` from the 2x2 normal equations.
pub fn ols_update(obs: &ObservationSystem, cfg: &EstimationConfig) -> Result<DisplacementVector> {
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (row, &y) in obs.h.iter().zip(&obs.y) {
        a11 += row[0] * row[0];
        a12 += row[0] * row[1];
        a22 += row[1] * row[1];
        b1 += row[0] * y;
        b2 += row[1] * y;
    }
    let energy = a11 + a22;
    let spread = ((a11 - a22).powi(2) + 4.0 * a12 * a12).sqrt();
    let lambda_min = 0.5 * (energy - spread);
    let lambda_max = 0.5 * (energy + spread);
    let condition = if lambda_min > 0.0 {
        lambda_max / lambda_min
    } else {
        f64::INFINITY
    };
    if energy.is_nan()
        || condition.is_nan()
        || energy < cfg.min_gradient_energy
        || condition > cfg.max_condition
    {
        return Err(Error::DegenerateSystem { energy, condition });
    }
    let det = a11 * a22 - a12 * a12;
    Ok(DisplacementVector::new(
        (a22 * b1 - a12 * b2) / det,
        (a11 * b2 - a12 * b1) / det,
    ))
}

/// Iteratively refines the displacement at `center` starting from `d0`.
///
/// Returns the final vector and whether the last update was below
/// [`CONVERGENCE_STEP`]. A degenerate first system returns `(d0, false)`.
pub fn refine_dv(
    curr: &Frame,
    prev: &Frame,
    center: PixelPos,
    d0: DisplacementVector,
    cfg: &EstimationConfig,
) -> (DisplacementVector, bool) {
    refine(curr, prev, center, d0, cfg, None)
}

pub fn refine_dv_masked(
    curr: &Frame,
    prev: &Frame,
    center: PixelPos,
    d0: DisplacementVector,
    cfg: &EstimationConfig,
    legit: &PixelMask,
) -> (DisplacementVector, bool) {
    refine(curr, prev, center, d0, cfg, Some(legit))
}

fn refine(
    curr: &Frame,
    prev: &Frame,
    center: PixelPos,
    d0: DisplacementVector,
    cfg: &EstimationConfig,
    legit: Option<&PixelMask>,
) -> (DisplacementVector, bool) {
    let mut d = d0;
    for _ in 0..cfg.max_refinements {
        let obs = observe(curr, prev, center, d, cfg, legit);
        let x = match ols_update(&obs, cfg) {
            Ok(x) => x,
            Err(_) => return (d, false),
        };
        if !(x.dh.is_finite() && x.dv.is_finite()) {
            return (d, false);
        }
        d = (d + x).clamped(cfg.d_max);
        if x.norm() < CONVERGENCE_STEP {
            return (d, true);
        }
    }
    (d, false)
}

/// Dense field over the legitimate pixels of `curr`.
///
/// Every pixel is refined from the zero vector. Lost, degenerate and
/// non-converged pixels come back as invalid zero vectors. Observation windows
/// never read pixels outside `legit`.
pub fn estimate_field(
    curr: &Frame,
    prev: &Frame,
    legit: &PixelMask,
    cfg: &EstimationConfig,
) -> Result<MotionField> {
    cfg.validate()?;
    for dims in [prev.dims(), legit.dims()] {
        if dims != curr.dims() {
            return Err(Error::ShapeMismatch {
                expected: curr.dims(),
                actual: dims,
            });
        }
    }
    let (w, h) = curr.dims();
    let rows: Vec<Vec<(DisplacementVector, bool)>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|x| {
                    if !legit.get(x, v) {
                        return (DisplacementVector::ZERO, false);
                    }
                    match refine(
                        curr,
                        prev,
                        PixelPos::at(x, v),
                        DisplacementVector::ZERO,
                        cfg,
                        Some(legit),
                    ) {
                        (d, true) if d.within(cfg.d_max) => (d, true),
                        _ => (DisplacementVector::ZERO, false),
                    }
                })
                .collect()
        })
        .collect();
    let (vectors, valid) = rows.into_iter().flatten().unzip();
    MotionField::from_parts(w, h, vectors, valid)
}
