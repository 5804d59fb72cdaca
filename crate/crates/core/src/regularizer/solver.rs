use std::collections::BTreeMap;

use super::functional::{q_functional, q_gradient};
use super::{check_floor, BregmanConfig, Grid, RegularizedProblem, SolverState, TraceEntry};
use crate::error::{Error, Result};

const SINGULAR_DIAGONAL: f64 = 1e-12;

/// Sparse rows of the correlation operator `B`, duplicate columns merged.
fn correlation_rows(prob: &RegularizedProblem) -> Vec<Vec<(usize, f64)>> {
    let (w, h) = prob.dims();
    let clamp =
        |i: usize, off: isize, len: usize| (i as isize + off).clamp(0, len as isize - 1) as usize;
    let mut rows = Vec::with_capacity(w * h);
    for i in 0..h {
        for j in 0..w {
            let mut row: BTreeMap<usize, f64> = BTreeMap::new();
            for (k, l, b) in prob.kernel.taps() {
                if b != 0.0 {
                    *row.entry(clamp(i, k, h) * w + clamp(j, l, w))
                        .or_insert(0.0) += b;
                }
            }
            rows.push(row.into_iter().collect());
        }
    }
    rows
}

/// The Newton system `J delta = -F` linearized at one iterate.
///
/// `J = 2 B^T W B + diag(alpha x^(q-1))`, frozen for the whole outer iteration.
#[derive(Debug, Clone)]
pub struct NewtonSystem {
    gradient: Grid,
    diag: Vec<f64>,
    /// Off-diagonal entries of each row, ascending column order.
    off_diag: Vec<Vec<(usize, f64)>>,
}

impl NewtonSystem {
    pub fn assemble(prob: &RegularizedProblem, cfg: &BregmanConfig, x_hat: &Grid) -> Result<Self> {
        let gradient = q_gradient(x_hat, prob, cfg)?;
        let n = x_hat.len();
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for (p, b_row) in correlation_rows(prob).iter().enumerate() {
            let w = prob.weight.data()[p];
            if w == 0.0 {
                continue;
            }
            for &(a, ba) in b_row {
                for &(c, bc) in b_row {
                    *rows[a].entry(c).or_insert(0.0) += 2.0 * w * ba * bc;
                }
            }
        }
        let mut diag = vec![0.0; n];
        let mut off_diag = Vec::with_capacity(n);
        for (r, mut row) in rows.into_iter().enumerate() {
            diag[r] = row.remove(&r).unwrap_or(0.0);
            if cfg.alpha != 0.0 {
                diag[r] += cfg.alpha * x_hat.data()[r].powf(cfg.q - 1.0);
            }
            off_diag.push(row.into_iter().filter(|&(_, v)| v != 0.0).collect());
        }
        Ok(Self {
            gradient,
            diag,
            off_diag,
        })
    }

    #[inline]
    pub fn gradient(&self) -> &Grid {
        &self.gradient
    }

    /// Diagonal of `J`.
    #[inline]
    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Dense copy of `J`, for small problems and tests.
    pub fn dense_jacobian(&self) -> Vec<Vec<f64>> {
        let n = self.diag.len();
        let mut out = vec![vec![0.0; n]; n];
        for (r, row) in out.iter_mut().enumerate() {
            row[r] = self.diag[r];
            for &(c, v) in &self.off_diag[r] {
                row[c] = v;
            }
        }
        out
    }

    fn row_product(&self, r: usize, delta: &[f64]) -> f64 {
        self.off_diag[r].iter().map(|&(c, v)| v * delta[c]).sum()
    }

    /// One raster-order Gauss-Seidel sweep over `J delta = -F`.
    ///
    /// Cells earlier in raster order already carry this sweep's values when a
    /// later cell is updated. Returns `||F + J delta||_inf` after the sweep.
    pub fn sweep(&self, delta: &mut [f64]) -> Result<f64> {
        let f = self.gradient.data();
        for r in 0..delta.len() {
            let d = self.diag[r];
            if d.is_nan() || d.abs() < SINGULAR_DIAGONAL {
                return Err(Error::SingularDiagonal { index: r, value: d });
            }
            delta[r] = -(f[r] + self.row_product(r, delta)) / d;
        }
        Ok(self.residual_norm(delta))
    }

    /// `||F + J delta||_inf`.
    pub fn residual_norm(&self, delta: &[f64]) -> f64 {
        let f = self.gradient.data();
        (0..delta.len())
            .map(|r| (f[r] + self.diag[r] * delta[r] + self.row_product(r, delta)).abs())
            .fold(0.0, f64::max)
    }
}

/// One Gauss-Seidel sweep on `state.delta`, with `J` linearized at
/// `state.x_hat` and `gradient` the caller-supplied `F` at that iterate.
/// Increments `state.c` and returns the Newton residual sup-norm.
pub fn gauss_seidel_sweep(
    state: &mut SolverState,
    prob: &RegularizedProblem,
    cfg: &BregmanConfig,
    gradient: &Grid,
) -> Result<f64> {
    gradient.ensure_dims(state.x_hat.dims())?;
    state.delta.ensure_dims(state.x_hat.dims())?;
    let mut system = NewtonSystem::assemble(prob, cfg, &state.x_hat)?;
    system.gradient = gradient.clone();
    let residual = system.sweep(state.delta.data_mut())?;
    state.c += 1;
    Ok(residual)
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    /// Final iterate, or the lowest-`Q` iterate seen when not converged.
    pub solution: Grid,
    pub trace: Vec<TraceEntry>,
    /// `Q(x0)`.
    pub initial_q: f64,
    pub converged: bool,
}

impl SolveOutcome {
    pub fn final_q(&self) -> f64 {
        self.trace.last().map_or(self.initial_q, |e| e.q_value)
    }

    pub fn outer_iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Damped Newton iteration `x <- max(x + gamma delta, floor)` with
/// Gauss-Seidel inner solves.
pub fn newton_solve(
    prob: &RegularizedProblem,
    cfg: &BregmanConfig,
    x0: Grid,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    x0.ensure_dims(prob.dims())?;
    check_floor(&x0, cfg.epsilon_floor)?;

    let initial_q = q_functional(&x0, prob, cfg)?;
    let mut state = SolverState::new(x0);
    let mut best = (initial_q, state.x_hat.clone());
    let mut converged = false;

    while state.t < cfg.outer_max {
        let system = NewtonSystem::assemble(prob, cfg, &state.x_hat)?;
        state.delta.data_mut().fill(0.0);
        state.c = 0;
        loop {
            let residual = system.sweep(state.delta.data_mut())?;
            state.c += 1;
            if residual < cfg.inner_tol || state.c >= cfg.inner_max {
                break;
            }
        }

        let prev_norm = state.x_hat.norm();
        let mut step_sq = 0.0;
        for (x, &d) in state.x_hat.data_mut().iter_mut().zip(state.delta.data()) {
            let step = cfg.gamma * d;
            step_sq += step * step;
            *x = (*x + step).max(cfg.epsilon_floor);
        }
        let update_norm = step_sq.sqrt();
        let q_value = q_functional(&state.x_hat, prob, cfg)?;
        state.trace.push(TraceEntry {
            q_value,
            update_norm,
            sweeps: state.c,
        });
        state.t += 1;
        if q_value < best.0 {
            best = (q_value, state.x_hat.clone());
        }
        if update_norm / prev_norm.max(1.0) < cfg.outer_tol {
            converged = true;
            break;
        }
    }

    let solution = if converged { state.x_hat } else { best.1 };
    Ok(SolveOutcome {
        solution,
        trace: state.trace,
        initial_q,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizer::{correlate, Kernel};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(w: usize, h: usize, d: &[f64]) -> Grid {
        Grid::new(w, h, d.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_stays_zero() {
        let x = grid(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let prob = RegularizedProblem::new(
            x.clone(),
            Grid::filled(2, 2, 1.0).unwrap(),
            Kernel::identity(),
            x.clone(),
        )
        .unwrap();
        let cfg = BregmanConfig::default();
        let mut state = SolverState::new(x.clone());
        let f = Grid::filled(2, 2, 0.0).unwrap();
        let res = gauss_seidel_sweep(&mut state, &prob, &cfg, &f).unwrap();
        assert_eq!(res, 0.0);
        assert_eq!(state.c, 1);
        assert!(state.delta.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn scalar_problem_solved_in_one_sweep() {
        let prob = RegularizedProblem::new(
            grid(1, 1, &[5.0]),
            grid(1, 1, &[1.5]),
            Kernel::identity(),
            grid(1, 1, &[2.0]),
        )
        .unwrap();
        let cfg = BregmanConfig {
            q: 1.3,
            alpha: 0.7,
            ..Default::default()
        };
        let x = grid(1, 1, &[3.0]);
        let system = NewtonSystem::assemble(&prob, &cfg, &x).unwrap();
        let f = system.gradient().data()[0];
        let j = system.diagonal()[0];
        let mut delta = vec![0.0];
        let res = system.sweep(&mut delta).unwrap();
        assert_eq!(delta[0], -f / j);
        assert!(res < 1e-12);
    }

    #[test]
    fn singular_diagonal_reported() {
        // alpha = 0 over an unobserved cell.
        let prob = RegularizedProblem::new(
            grid(2, 1, &[1.0, 1.0]),
            grid(2, 1, &[1.0, 0.0]),
            Kernel::identity(),
            grid(2, 1, &[1.0, 1.0]),
        )
        .unwrap();
        let cfg = BregmanConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let err = newton_solve(&prob, &cfg, grid(2, 1, &[2.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::SingularDiagonal { index: 1, .. }));
    }

    fn banded_problem(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RegularizedProblem {
        let n = w * h;
        let mut taps = vec![0.0; 9];
        for t in taps.iter_mut() {
            *t = rng.gen_range(0.0..0.15);
        }
        taps[4] = 1.0;
        let kernel = Kernel::new(1, taps).unwrap();
        let y = Grid::new(w, h, (0..n).map(|_| rng.gen_range(1.0..3.0)).collect()).unwrap();
        let weight = Grid::new(w, h, (0..n).map(|_| rng.gen_range(0.5..1.5)).collect()).unwrap();
        let reference = Grid::new(w, h, (0..n).map(|_| rng.gen_range(1.0..3.0)).collect()).unwrap();
        RegularizedProblem::new(y, weight, kernel, reference).unwrap()
    }

    #[test]
    fn sweeps_match_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prob = banded_problem(&mut rng, 2, 2);
        let cfg = BregmanConfig {
            q: 1.0,
            alpha: 0.5,
            ..Default::default()
        };
        let x = Grid::filled(2, 2, 1.7).unwrap();
        let system = NewtonSystem::assemble(&prob, &cfg, &x).unwrap();
        let dense = system.dense_jacobian();
        let j = DMatrix::from_fn(4, 4, |r, c| dense[r][c]);
        let rhs = DVector::from_iterator(4, system.gradient().data().iter().map(|f| -f));
        let direct = j.lu().solve(&rhs).unwrap();

        let mut delta = vec![0.0; 4];
        for _ in 0..50 {
            system.sweep(&mut delta).unwrap();
        }
        for (a, b) in delta.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut prob = banded_problem(&mut rng, 5, 4);
        prob.y = correlate(&prob.reference, &prob.kernel);
        let cfg = BregmanConfig::default();
        let out = newton_solve(&prob, &cfg, prob.reference.clone()).unwrap();
        assert!(out.converged);
        assert_eq!(out.outer_iterations(), 1);
        assert_eq!(out.solution, prob.reference);
        assert_eq!(out.trace[0].update_norm, 0.0);
    }

    #[test]
    fn identity_kernel_q1_matches_per_cell_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (w, h) = (6, 5);
        let n = w * h;
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..4.0)).collect();
        let wt: Vec<f64> = (0..n)
            .map(|i| {
                if i % 4 == 0 {
                    0.0
                } else {
                    rng.gen_range(0.5..2.0)
                }
            })
            .collect();
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..4.0)).collect();
        let prob = RegularizedProblem::new(
            Grid::new(w, h, y.clone()).unwrap(),
            Grid::new(w, h, wt.clone()).unwrap(),
            Kernel::identity(),
            Grid::new(w, h, r.clone()).unwrap(),
        )
        .unwrap();
        let alpha = 0.6;
        let cfg = BregmanConfig {
            q: 1.0,
            alpha,
            gamma: 1.0,
            ..Default::default()
        };
        let out = newton_solve(&prob, &cfg, Grid::filled(w, h, 2.0).unwrap()).unwrap();
        assert!(out.converged);
        // The first step is already exact for a diagonal linear system.
        assert!(out.trace[1].update_norm < 1e-12);
        for i in 0..n {
            let expected = (2.0 * wt[i] * y[i] + alpha * r[i]) / (2.0 * wt[i] + alpha);
            assert!((out.solution.data()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn relaxed_newton_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let prob = banded_problem(&mut rng, 6, 6);
        for &q in &[0.6, 1.0, 1.8] {
            let cfg = BregmanConfig {
                q,
                alpha: 1.0,
                gamma: 0.8,
                ..Default::default()
            };
            let out = newton_solve(&prob, &cfg, Grid::filled(6, 6, 2.0).unwrap()).unwrap();
            assert!(out.converged, "q={q}");
            assert!(out.final_q() <= out.initial_q);
            if q == 1.0 {
                let mut prev = out.initial_q;
                for e in &out.trace {
                    assert!(e.q_value <= prev + 1e-12);
                    prev = e.q_value;
                }
            }
        }
    }

    #[test]
    fn traces_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prob = banded_problem(&mut rng, 7, 5);
        let cfg = BregmanConfig {
            q: 1.4,
            ..Default::default()
        };
        let a = newton_solve(&prob, &cfg, Grid::filled(7, 5, 1.0).unwrap()).unwrap();
        let b = newton_solve(&prob, &cfg, Grid::filled(7, 5, 1.0).unwrap()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.solution, b.solution);
    }

    #[test]
    fn rejects_start_below_floor() {
        let prob = RegularizedProblem::new(
            grid(1, 1, &[1.0]),
            grid(1, 1, &[1.0]),
            Kernel::identity(),
            grid(1, 1, &[1.0]),
        )
        .unwrap();
        let err = newton_solve(&prob, &BregmanConfig::default(), grid(1, 1, &[0.0])).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }
}
