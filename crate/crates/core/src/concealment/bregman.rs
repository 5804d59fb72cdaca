//! Motion-field refinement and in-filling with the Bregman regularizer.
//!
//! Each displacement component is shifted into the positive domain by
//! `d_max + 1` and solved as its own regularized problem over the whole frame:
//! estimated vectors are observations (weight 1), lost or unusable pixels have
//! weight 0, and the reference field is a 3x3 neighbourhood mean of the
//! observations diffused outward until it covers every pixel. After a first
//! solve the reference is rebuilt from the solution and the problem solved
//! once more.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LossMask;
use crate::error::{Error, Result};
use crate::imaging::{dfd, DisplacementVector, Frame, MotionField, PixelMask, PixelPos};
use crate::motion::{estimate_field, EstimationConfig};
use crate::regularizer::{
    newton_solve, BregmanConfig, Grid, Kernel, RegularizedProblem, SolveOutcome,
};

/// Fraction of valid estimates held out when scoring a regularization weight.
pub const HOLDOUT_FRACTION: f64 = 0.1;

pub const DEFAULT_ALPHA_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

/// The two solves run for one displacement component.
#[derive(Debug, Clone)]
pub struct ComponentSolve {
    pub first: SolveOutcome,
    /// Solve against the reference rebuilt from `first`.
    pub refreshed: SolveOutcome,
}

impl ComponentSolve {
    pub fn outer_iterations(&self) -> usize {
        self.first.outer_iterations() + self.refreshed.outer_iterations()
    }

    pub fn converged(&self) -> bool {
        self.first.converged && self.refreshed.converged
    }
}

#[derive(Debug, Clone)]
pub struct BregmanConcealment {
    /// Refined field; every pixel valid and within `±d_max`.
    pub field: MotionField,
    /// Least-squares estimate on the received pixels.
    pub estimate: MotionField,
    pub horizontal: ComponentSolve,
    pub vertical: ComponentSolve,
}

impl BregmanConcealment {
    pub fn outer_iterations(&self) -> usize {
        self.horizontal.outer_iterations() + self.vertical.outer_iterations()
    }

    /// Sum of the final functional values of the two refreshed solves.
    pub fn final_q(&self) -> f64 {
        self.horizontal.refreshed.final_q() + self.vertical.refreshed.final_q()
    }

    pub fn converged(&self) -> bool {
        self.horizontal.converged() && self.vertical.converged()
    }
}

#[inline]
pub fn positivity_shift(d_max: f64) -> f64 {
    d_max + 1.0
}

/// 3x3 mean over `known` cells, `None` where no neighbour is known.
fn neighbourhood_mean(values: &[f64], known: &[bool], w: usize, h: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; w * h];
    for i in 0..h {
        for j in 0..w {
            let (mut sum, mut n) = (0.0, 0usize);
            for ii in i.saturating_sub(1)..(i + 2).min(h) {
                for jj in j.saturating_sub(1)..(j + 2).min(w) {
                    let p = ii * w + jj;
                    if known[p] {
                        sum += values[p];
                        n += 1;
                    }
                }
            }
            if n > 0 {
                out[i * w + j] = Some(sum / n as f64);
            }
        }
    }
    out
}

/// Reference field: 3x3 mean of the known values, then repeated 3x3 means of
/// already-assigned references into cells that still have none.
fn diffuse_reference(
    values: &[f64],
    known: &[bool],
    w: usize,
    h: usize,
    fallback: f64,
    floor: f64,
) -> Vec<f64> {
    let mut current = neighbourhood_mean(values, known, w, h);
    if current.iter().all(Option::is_none) {
        return vec![fallback.max(floor); w * h];
    }
    while current.iter().any(Option::is_none) {
        let assigned: Vec<bool> = current.iter().map(Option::is_some).collect();
        let filled: Vec<f64> = current.iter().map(|r| r.unwrap_or(0.0)).collect();
        let spread = neighbourhood_mean(&filled, &assigned, w, h);
        for (slot, s) in current.iter_mut().zip(spread) {
            if slot.is_none() {
                *slot = s;
            }
        }
    }
    current.into_iter().map(|r| r.unwrap().max(floor)).collect()
}

fn solve_component(
    observed: Vec<f64>,
    weight: Vec<f64>,
    w: usize,
    h: usize,
    shift: f64,
    cfg: &BregmanConfig,
) -> Result<(Vec<f64>, ComponentSolve)> {
    let known: Vec<bool> = weight.iter().map(|&x| x > 0.0).collect();
    let reference = diffuse_reference(&observed, &known, w, h, shift, cfg.epsilon_floor);
    let x0: Vec<f64> = observed
        .iter()
        .zip(&reference)
        .zip(&known)
        .map(|((&y, &r), &k)| if k { y.max(cfg.epsilon_floor) } else { r })
        .collect();

    let y = Grid::new(w, h, observed)?;
    let weight = Grid::new(w, h, weight)?;
    let problem =
        RegularizedProblem::new(y, weight, Kernel::identity(), Grid::new(w, h, reference)?)?;
    let first = newton_solve(&problem, cfg, Grid::new(w, h, x0)?)?;

    let everywhere = vec![true; w * h];
    let refreshed_ref = diffuse_reference(
        first.solution.data(),
        &everywhere,
        w,
        h,
        shift,
        cfg.epsilon_floor,
    );
    let problem = RegularizedProblem {
        reference: Grid::new(w, h, refreshed_ref)?,
        ..problem
    };
    let refreshed = newton_solve(&problem, cfg, first.solution.clone())?;
    Ok((
        refreshed.solution.data().to_vec(),
        ComponentSolve { first, refreshed },
    ))
}

/// Refines and in-fills an estimated field. Pixels flagged in `held_out` are
/// treated as unobserved in addition to the invalid ones.
pub fn refine_motion_field(
    estimate: &MotionField,
    held_out: Option<&PixelMask>,
    d_max: f64,
    cfg: &BregmanConfig,
) -> Result<(MotionField, ComponentSolve, ComponentSolve)> {
    cfg.validate()?;
    let (w, h) = estimate.dims();
    if let Some(m) = held_out {
        if m.dims() != (w, h) {
            return Err(Error::ShapeMismatch {
                expected: (w, h),
                actual: m.dims(),
            });
        }
    }
    let shift = positivity_shift(d_max);
    let weight: Vec<f64> = (0..w * h)
        .map(|p| {
            let held = held_out.is_some_and(|m| m.bits()[p]);
            if estimate.valid()[p] && !held {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let component = |pick: fn(&DisplacementVector) -> f64| -> Vec<f64> {
        estimate
            .vectors()
            .iter()
            .zip(&weight)
            .map(|(d, &wt)| if wt > 0.0 { pick(d) + shift } else { shift })
            .collect()
    };
    let obs_h = component(|d| d.dh);
    let obs_v = component(|d| d.dv);

    let (res_h, res_v) = rayon::join(
        || solve_component(obs_h, weight.clone(), w, h, shift, cfg),
        || solve_component(obs_v, weight.clone(), w, h, shift, cfg),
    );
    let (sol_h, horizontal) = res_h?;
    let (sol_v, vertical) = res_v?;

    let vectors = sol_h
        .iter()
        .zip(&sol_v)
        .map(|(&a, &b)| DisplacementVector::new(a - shift, b - shift).clamped(d_max))
        .collect();
    let field = MotionField::from_parts(w, h, vectors, vec![true; w * h])?;
    Ok((field, horizontal, vertical))
}

/// Estimates motion on the received pixels of `curr`, then refines and
/// in-fills the whole field.
pub fn bregman_conceal(
    curr: &Frame,
    prev: &Frame,
    mask: &LossMask,
    est_cfg: &EstimationConfig,
    breg_cfg: &BregmanConfig,
) -> Result<BregmanConcealment> {
    mask.ensure_frame(curr.width(), curr.height())?;
    let legit = mask.legit_pixels(curr.width(), curr.height());
    let estimate = estimate_field(curr, prev, &legit, est_cfg)?;
    let (field, horizontal, vertical) =
        refine_motion_field(&estimate, None, est_cfg.d_max, breg_cfg)?;
    Ok(BregmanConcealment {
        field,
        estimate,
        horizontal,
        vertical,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaScore {
    pub alpha: f64,
    /// Mean squared DFD of the refined field on the held-out pixels.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSelection {
    pub best: f64,
    /// One entry per candidate, ascending in alpha.
    pub scores: Vec<AlphaScore>,
    pub held_out: usize,
}

/// Seeded hold-out: each valid estimate is withheld with probability
/// [`HOLDOUT_FRACTION`], visited in raster order.
pub fn holdout_mask(estimate: &MotionField, seed: u64) -> PixelMask {
    let (w, h) = estimate.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = PixelMask::filled(w, h, false);
    for v in 0..h {
        for x in 0..w {
            if estimate.is_valid(x, v) && rng.gen::<f64>() < HOLDOUT_FRACTION {
                mask.set(x, v, true);
            }
        }
    }
    mask
}

/// Picks the regularization weight whose refined field best predicts the
/// held-out pixels. Ties go to the larger weight.
pub fn select_alpha(
    curr: &Frame,
    prev: &Frame,
    mask: &LossMask,
    est_cfg: &EstimationConfig,
    breg_cfg: &BregmanConfig,
    alpha_grid: &[f64],
    seed: u64,
) -> Result<AlphaSelection> {
    mask.ensure_frame(curr.width(), curr.height())?;
    let legit = mask.legit_pixels(curr.width(), curr.height());
    let estimate = estimate_field(curr, prev, &legit, est_cfg)?;
    select_alpha_for_estimate(
        curr,
        prev,
        &estimate,
        est_cfg.d_max,
        breg_cfg,
        alpha_grid,
        seed,
    )
}

/// [`select_alpha`] for an already estimated field.
pub fn select_alpha_for_estimate(
    curr: &Frame,
    prev: &Frame,
    estimate: &MotionField,
    d_max: f64,
    breg_cfg: &BregmanConfig,
    alpha_grid: &[f64],
    seed: u64,
) -> Result<AlphaSelection> {
    if alpha_grid.is_empty() {
        return Err(Error::InvalidParameter {
            name: "alpha_grid",
            reason: "must not be empty".into(),
        });
    }
    if let Some(a) = alpha_grid.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidParameter {
            name: "alpha_grid",
            reason: format!("entry {a} is not positive"),
        });
    }
    let mut alphas = alpha_grid.to_vec();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();

    let held = holdout_mask(estimate, seed);
    let held_pixels: Vec<(usize, usize)> = (0..estimate.height())
        .flat_map(|v| (0..estimate.width()).map(move |x| (x, v)))
        .filter(|&(x, v)| held.get(x, v))
        .collect();

    let mut scores = Vec::with_capacity(alphas.len());
    for &alpha in &alphas {
        let cfg = BregmanConfig {
            alpha,
            ..breg_cfg.clone()
        };
        let (field, _, _) = refine_motion_field(estimate, Some(&held), d_max, &cfg)?;
        let score = if held_pixels.is_empty() {
            0.0
        } else {
            held_pixels
                .iter()
                .map(|&(x, v)| dfd(curr, prev, PixelPos::at(x, v), field.get(x, v)).powi(2))
                .sum::<f64>()
                / held_pixels.len() as f64
        };
        scores.push(AlphaScore { alpha, score });
    }

    let best = scores
        .iter()
        .fold(None::<&AlphaScore>, |best, s| match best {
            Some(b) if s.score > b.score => Some(b),
            _ => Some(s),
        })
        .map(|s| s.alpha)
        .expect("grid is non-empty");
    Ok(AlphaSelection {
        best,
        scores,
        held_out: held_pixels.len(),
    })
}
