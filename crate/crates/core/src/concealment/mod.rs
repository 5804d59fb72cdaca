//! Macroblock loss simulation and temporal concealment.

mod baselines;
mod bregman;
mod loss;
mod reconstruct;

use std::fmt;
use std::str::FromStr;

pub use baselines::{avgn_conceal, copy_conceal};
pub use bregman::{
    bregman_conceal, holdout_mask, positivity_shift, refine_motion_field, select_alpha,
    select_alpha_for_estimate, AlphaScore, AlphaSelection, BregmanConcealment, ComponentSolve,
    DEFAULT_ALPHA_GRID, HOLDOUT_FRACTION,
};
pub use loss::{simulate_loss, LossMask, DEFAULT_MB_SIZE};
pub use reconstruct::{blank_lost, conceal_frame};

use crate::error::{Error, Result};
use crate::imaging::Frame;
use crate::motion::{estimate_field, EstimationConfig};
use crate::regularizer::BregmanConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Bregman,
    Avgn,
    Copy,
    ZeroFill,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Bregman,
        Method::Avgn,
        Method::Copy,
        Method::ZeroFill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bregman => "bregman",
            Method::Avgn => "avgn",
            Method::Copy => "copy",
            Method::ZeroFill => "zero-fill",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter {
                name: "method",
                reason: format!("unknown method `{s}` (expected bregman, avgn, copy or zero-fill)"),
            })
    }
}

/// One evaluated frame, as written to the CSV report.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcealmentReport {
    pub frame_index: usize,
    pub method: Method,
    pub psnr_db: f64,
    pub lost_mb_count: usize,
    /// Zero for the baselines.
    pub solver_outer_iters: usize,
    /// Final functional value; Bregman only.
    pub final_q: Option<f64>,
}

/// Result of concealing one frame with one method.
#[derive(Debug, Clone)]
pub struct Concealed {
    pub frame: Frame,
    pub outer_iterations: usize,
    pub final_q: Option<f64>,
    /// False if any solve hit its iteration cap.
    pub converged: bool,
}

/// Conceals the lost blocks of `curr_damaged` from the reference `prev`.
pub fn conceal(
    method: Method,
    curr_damaged: &Frame,
    prev: &Frame,
    mask: &LossMask,
    est_cfg: &EstimationConfig,
    breg_cfg: &BregmanConfig,
) -> Result<Concealed> {
    let (w, h) = curr_damaged.dims();
    mask.ensure_frame(w, h)?;
    let baseline = |frame| Concealed {
        frame,
        outer_iterations: 0,
        final_q: None,
        converged: true,
    };
    match method {
        Method::ZeroFill => Ok(baseline(blank_lost(curr_damaged, mask, 0.0)?)),
        Method::Copy => {
            let field = copy_conceal(mask, w, h)?;
            Ok(baseline(conceal_frame(curr_damaged, prev, &field, mask)?))
        }
        Method::Avgn => {
            let estimate = estimate_field(curr_damaged, prev, &mask.legit_pixels(w, h), est_cfg)?;
            let field = avgn_conceal(&estimate, mask)?;
            Ok(baseline(conceal_frame(curr_damaged, prev, &field, mask)?))
        }
        Method::Bregman => {
            let out = bregman_conceal(curr_damaged, prev, mask, est_cfg, breg_cfg)?;
            Ok(Concealed {
                frame: conceal_frame(curr_damaged, prev, &out.field, mask)?,
                outer_iterations: out.outer_iterations(),
                final_q: Some(out.final_q()),
                converged: out.converged(),
            })
        }
    }
}
