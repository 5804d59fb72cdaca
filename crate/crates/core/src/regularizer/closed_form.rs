use nalgebra::{DMatrix, DVector};

use super::{BregmanConfig, Grid, RegularizedProblem};
use crate::error::{Error, Result};

const MAX_DENSE_CELLS: usize = 32 * 32;

/// Direct solution of the `q = 1` problem.
///
/// With `q = 1` the divergence gradient is `alpha (x - x_ref)`, so stationarity
/// is the linear system `(2 B^T W B + alpha I) x = 2 B^T W y + alpha x_ref`.
/// The system is assembled densely, which limits this to grids of at most
/// 1024 cells.
pub fn solve_q1_closed_form(prob: &RegularizedProblem, cfg: &BregmanConfig) -> Result<Grid> {
    if cfg.q != 1.0 {
        return Err(Error::InvalidParameter {
            name: "q",
            reason: format!("closed form requires q = 1, got {}", cfg.q),
        });
    }
    let (w, h) = prob.dims();
    let n = w * h;
    if n > MAX_DENSE_CELLS {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: format!("{w}x{h} exceeds the dense assembly limit of {MAX_DENSE_CELLS} cells"),
        });
    }

    let mut b = DMatrix::<f64>::zeros(n, n);
    let half = prob.kernel.half_width() as isize;
    for i in 0..h as isize {
        for j in 0..w as isize {
            let row = (i * w as isize + j) as usize;
            for k in -half..=half {
                for l in -half..=half {
                    let m = (i + k).clamp(0, h as isize - 1);
                    let c = (j + l).clamp(0, w as isize - 1);
                    b[(row, (m * w as isize + c) as usize)] += prob.kernel.weight(k, l);
                }
            }
        }
    }
    let wdiag = DMatrix::from_diagonal(&DVector::from_column_slice(prob.weight.data()));
    let bt_w = b.transpose() * &wdiag;
    let lhs = 2.0 * &bt_w * &b + DMatrix::<f64>::identity(n, n) * cfg.alpha;
    let rhs = 2.0 * &bt_w * DVector::from_column_slice(prob.y.data())
        + DVector::from_column_slice(prob.reference.data()) * cfg.alpha;

    let solution = lhs.cholesky().ok_or(Error::SingularSystem)?.solve(&rhs);
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Grid::new(w, h, solution.iter().copied().collect())
}
