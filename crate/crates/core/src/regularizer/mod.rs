//! Tikhonov-style regularization with a q-discrepancy Bregman divergence.
//!
//! The functional minimized here is
//!
//! ```text
//! Q(x) = sum_ij w_ij (y_ij - (b * x)_ij)^2 + alpha * D_q(x, x_ref)
//! ```
//!
//! where `b * x` is a clamp-to-edge correlation with a small stencil and
//! `D_q` is the Bregman divergence generated by `x^(q+1) / (q (q+1))`. It is
//! minimized by damped Newton iterations whose linear systems are solved with
//! raster-order Gauss-Seidel sweeps.

mod closed_form;
mod functional;
mod solver;

pub use closed_form::solve_q1_closed_form;
pub use functional::{bregman_divergence, correlate, q_functional, q_gradient};
pub use solver::{gauss_seidel_sweep, newton_solve, NewtonSystem, SolveOutcome};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-6;

/// Row-major real grid. Row index `i` is vertical, column index `j` horizontal.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions {
                width,
                height,
                reason: "grid must be at least 1x1",
            });
        }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub(crate) fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::ShapeMismatch {
                expected: dims,
                actual: self.dims(),
            });
        }
        Ok(())
    }
}

/// Square correlation stencil `b(k, l)` for `k, l` in `[-N, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    half_width: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// `weights` is row-major over `(k, l)`, `k` (vertical offset) major.
    pub fn new(half_width: usize, weights: Vec<f64>) -> Result<Self> {
        let side = 2 * half_width + 1;
        if weights.len() != side * side {
            return Err(Error::InvalidParameter {
                name: "kernel",
                reason: format!(
                    "expected {} weights for half-width {half_width}",
                    side * side
                ),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "kernel",
                reason: "weights must be finite".into(),
            });
        }
        Ok(Self {
            half_width,
            weights,
        })
    }

    /// The identity delta (`N = 0`, `b(0, 0) = 1`).
    pub fn identity() -> Self {
        Self {
            half_width: 0,
            weights: vec![1.0],
        }
    }

    #[inline]
    pub fn half_width(&self) -> usize {
        self.half_width
    }

    #[inline]
    pub fn weight(&self, k: isize, l: isize) -> f64 {
        let n = self.half_width as isize;
        let side = 2 * n + 1;
        self.weights[((k + n) * side + (l + n)) as usize]
    }

    /// Iterates `(k, l, b(k, l))` in row-major order.
    pub fn taps(&self) -> impl Iterator<Item = (isize, isize, f64)> + '_ {
        let n = self.half_width as isize;
        let side = (2 * n + 1) as usize;
        self.weights
            .iter()
            .enumerate()
            .map(move |(idx, &b)| ((idx / side) as isize - n, (idx % side) as isize - n, b))
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BregmanConfig {
    /// Divergence exponent.
    pub q: f64,
    /// Regularization weight.
    pub alpha: f64,
    /// Relaxation factor applied to each Newton step.
    pub gamma: f64,
    pub outer_max: usize,
    pub inner_max: usize,
    /// Relative-update threshold for the Newton loop.
    pub outer_tol: f64,
    /// Sup-norm threshold on the Newton residual `F + J delta`.
    pub inner_tol: f64,
    pub epsilon_floor: f64,
}

impl Default for BregmanConfig {
    fn default() -> Self {
        Self {
            q: 1.0,
            alpha: 1.0,
            gamma: 0.8,
            outer_max: 100,
            inner_max: 200,
            outer_tol: 1e-6,
            inner_tol: 1e-8,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
        }
    }
}

impl BregmanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.q > 0.0 && self.q.is_finite()) {
            return bad("q", "must be positive and finite");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", "must be non-negative and finite");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if self.outer_max == 0 {
            return bad("outer_max", "must be at least 1");
        }
        if self.inner_max == 0 {
            return bad("inner_max", "must be at least 1");
        }
        if self.outer_tol.is_nan() || self.outer_tol <= 0.0 {
            return bad("outer_tol", "must be positive");
        }
        if self.inner_tol.is_nan() || self.inner_tol <= 0.0 {
            return bad("inner_tol", "must be positive");
        }
        if self.epsilon_floor.is_nan() || self.epsilon_floor <= 0.0 {
            return bad("epsilon_floor", "must be positive");
        }
        Ok(())
    }
}

/// Observation data, data-term weights, stencil and reference grid for one
/// regularized reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedProblem {
    pub y: Grid,
    /// Zero marks an unobserved cell.
    pub weight: Grid,
    pub kernel: Kernel,
    pub reference: Grid,
}

impl RegularizedProblem {
    pub fn new(y: Grid, weight: Grid, kernel: Kernel, reference: Grid) -> Result<Self> {
        weight.ensure_dims(y.dims())?;
        reference.ensure_dims(y.dims())?;
        if let Some(i) = weight
            .data()
            .iter()
            .position(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(Error::InvalidParameter {
                name: "weight",
                reason: format!("cell {i} is negative or non-finite"),
            });
        }
        if let Some(i) = y.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "y",
                reason: format!("cell {i} is non-finite"),
            });
        }
        Ok(Self {
            y,
            weight,
            kernel,
            reference,
        })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.y.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    /// `Q` at the iterate produced by this outer iteration.
    pub q_value: f64,
    /// `||gamma * delta||_2` of the applied step.
    pub update_norm: f64,
    pub sweeps: usize,
}

/// Iterate, inner correction and counters of a running solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x_hat: Grid,
    pub delta: Grid,
    /// Outer (Newton) iteration counter.
    pub t: usize,
    /// Inner (Gauss-Seidel) sweep counter within the current outer iteration.
    pub c: usize,
    pub trace: Vec<TraceEntry>,
}

impl SolverState {
    pub fn new(x0: Grid) -> Self {
        let delta = Grid {
            width: x0.width,
            height: x0.height,
            data: vec![0.0; x0.len()],
        };
        Self {
            x_hat: x0,
            delta,
            t: 0,
            c: 0,
            trace: Vec::new(),
        }
    }
}

pub(crate) fn check_floor(grid: &Grid, floor: f64) -> Result<()> {
    match grid
        .data()
        .iter()
        .position(|&x| !x.is_finite() || x < floor)
    {
        Some(index) => Err(Error::Domain {
            index,
            value: grid.data()[index],
            floor,
        }),
        None => Ok(()),
    }
}
