use super::{check_floor, BregmanConfig, Grid, Kernel, RegularizedProblem, DEFAULT_EPSILON_FLOOR};
use crate::error::Result;

/// `(x^q - r^q) / q`, evaluated without cancellation for small `q`.
#[inline]
pub(crate) fn power_difference(x: f64, r: f64, q: f64) -> f64 {
    if q == 1.0 {
        return x - r;
    }
    r.powf(q) * (q * (x / r).ln()).exp_m1() / q
}

/// One cell of the q-discrepancy divergence.
#[inline]
fn divergence_term(x: f64, r: f64, q: f64) -> f64 {
    let term = (x * power_difference(x, r, q) - r.powf(q) * (x - r)) / (1.0 + q);
    // Each term is non-negative by convexity; discard rounding noise.
    term.max(0.0)
}

/// The q-discrepancy Bregman divergence `D_q(x_hat, x_bar)`.
///
/// `q = 1` gives half the squared Euclidean distance; `q -> 0` approaches the
/// generalized I-divergence `sum x ln(x / x_bar) - (x - x_bar)`.
pub fn bregman_divergence(x_hat: &Grid, x_bar: &Grid, q: f64) -> Result<f64> {
    divergence_with_floor(x_hat, x_bar, q, DEFAULT_EPSILON_FLOOR)
}

pub(crate) fn divergence_with_floor(x_hat: &Grid, x_bar: &Grid, q: f64, floor: f64) -> Result<f64> {
    x_bar.ensure_dims(x_hat.dims())?;
    check_floor(x_hat, floor)?;
    check_floor(x_bar, floor)?;
    if q.is_nan() || q <= 0.0 {
        return Err(crate::Error::InvalidParameter {
            name: "q",
            reason: "must be positive".into(),
        });
    }
    Ok(x_hat
        .data()
        .iter()
        .zip(x_bar.data())
        .map(|(&x, &r)| divergence_term(x, r, q))
        .sum())
}

#[inline]
fn clamp_index(i: usize, off: isize, len: usize) -> usize {
    (i as isize + off).clamp(0, len as isize - 1) as usize
}

/// Clamp-to-edge correlation `(b * x)(i, j) = sum_kl b(k, l) x(i + k, j + l)`.
pub fn correlate(x: &Grid, kernel: &Kernel) -> Grid {
    let (w, h) = x.dims();
    let mut out = vec![0.0; w * h];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (k, l, b) in kernel.taps() {
                acc += b * x.get(clamp_index(i, k, h), clamp_index(j, l, w));
            }
            out[i * w + j] = acc;
        }
    }
    Grid::new(w, h, out).expect("dimensions preserved")
}

/// Adjoint of [`correlate`]: scatters each cell back along the stencil.
fn correlate_adjoint(r: &[f64], w: usize, h: usize, kernel: &Kernel) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for i in 0..h {
        for j in 0..w {
            let ri = r[i * w + j];
            if ri == 0.0 {
                continue;
            }
            for (k, l, b) in kernel.taps() {
                out[clamp_index(i, k, h) * w + clamp_index(j, l, w)] += b * ri;
            }
        }
    }
    out
}

fn check_shapes(x_hat: &Grid, prob: &RegularizedProblem, cfg: &BregmanConfig) -> Result<()> {
    x_hat.ensure_dims(prob.dims())?;
    check_floor(x_hat, cfg.epsilon_floor)?;
    check_floor(&prob.reference, cfg.epsilon_floor)
}

/// Weighted data misfit plus `alpha` times the divergence from the reference.
pub fn q_functional(x_hat: &Grid, prob: &RegularizedProblem, cfg: &BregmanConfig) -> Result<f64> {
    check_shapes(x_hat, prob, cfg)?;
    let predicted = correlate(x_hat, &prob.kernel);
    let data_term: f64 = prob
        .y
        .data()
        .iter()
        .zip(predicted.data())
        .zip(prob.weight.data())
        .map(|((&y, &p), &w)| w * (y - p) * (y - p))
        .sum();
    let penalty = if cfg.alpha == 0.0 {
        0.0
    } else {
        divergence_with_floor(x_hat, &prob.reference, cfg.q, cfg.epsilon_floor)?
    };
    Ok(data_term + cfg.alpha * penalty)
}

/// Analytic gradient `dQ / dx_hat`.
///
/// The divergence part simplifies to `alpha (x^q - x_ref^q) / q`.
pub fn q_gradient(x_hat: &Grid, prob: &RegularizedProblem, cfg: &BregmanConfig) -> Result<Grid> {
    check_shapes(x_hat, prob, cfg)?;
    let (w, h) = x_hat.dims();
    let predicted = correlate(x_hat, &prob.kernel);
    let weighted_residual: Vec<f64> = prob
        .y
        .data()
        .iter()
        .zip(predicted.data())
        .zip(prob.weight.data())
        .map(|((&y, &p), &wt)| wt * (y - p))
        .collect();
    let mut grad = correlate_adjoint(&weighted_residual, w, h, &prob.kernel);
    for ((g, &x), &r) in grad.iter_mut().zip(x_hat.data()).zip(prob.reference.data()) {
        *g *= -2.0;
        if cfg.alpha != 0.0 {
            *g += cfg.alpha * power_difference(x, r, cfg.q);
        }
    }
    Grid::new(w, h, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g(w: usize, h: usize, d: &[f64]) -> Grid {
        Grid::new(w, h, d.to_vec()).unwrap()
    }

    #[test]
    fn divergence_examples() {
        let a = g(2, 2, &[1.0, 2.0, 3.0, 0.5]);
        assert_eq!(bregman_divergence(&a, &a, 0.7).unwrap(), 0.0);

        let d = bregman_divergence(&g(1, 1, &[3.0]), &g(1, 1, &[1.0]), 1.0).unwrap();
        assert_relative_eq!(d, 2.0, epsilon = 1e-14);

        // q -> 0 limit: 2 ln 2 - 1.
        let d = bregman_divergence(&g(1, 1, &[2.0]), &g(1, 1, &[1.0]), 1e-6).unwrap();
        assert!((d - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-6, "{d}");
        assert!((d - 0.386294).abs() < 1e-6);
    }

    #[test]
    fn divergence_domain_errors() {
        let ok = g(1, 2, &[1.0, 1.0]);
        let neg = g(1, 2, &[1.0, -0.5]);
        assert!(matches!(
            bregman_divergence(&neg, &ok, 1.0),
            Err(crate::Error::Domain { index: 1, .. })
        ));
        assert!(bregman_divergence(&ok, &neg, 1.0).is_err());
        let other = g(2, 1, &[1.0, 1.0]);
        assert!(matches!(
            bregman_divergence(&ok, &other, 1.0),
            Err(crate::Error::ShapeMismatch { .. })
        ));
    }

    fn identity_problem(y: Grid, reference: Grid) -> RegularizedProblem {
        let (w, h) = y.dims();
        RegularizedProblem::new(
            y,
            Grid::filled(w, h, 1.0).unwrap(),
            Kernel::identity(),
            reference,
        )
        .unwrap()
    }

    #[test]
    fn functional_examples() {
        let x = g(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let prob = identity_problem(x.clone(), x.clone());
        assert_eq!(
            q_functional(&x, &prob, &BregmanConfig::default()).unwrap(),
            0.0
        );

        let y = g(2, 2, &[2.0, 2.0, 1.0, 5.0]);
        let prob = identity_problem(y, g(2, 2, &[3.0; 4]));
        let cfg = BregmanConfig {
            alpha: 0.0,
            ..Default::default()
        };
        // (2-1)^2 + 0 + (1-3)^2 + (5-4)^2
        assert_eq!(q_functional(&x, &prob, &cfg).unwrap(), 6.0);
    }

    #[test]
    fn functional_hand_summed_2x2() {
        // Data term with weights (1, 0.5, 2, 0) against y = (1, 2, 3, 4):
        //   1*(1-1.5)^2 + 0.5*(2-2)^2 + 2*(3-2.5)^2 + 0 = 0.25 + 0.5 = 0.75
        // Divergence (q = 1) against x_ref = (1, 1, 3, 2):
        //   0.5 * (0.25 + 1 + 0.25 + 4) = 2.75, times alpha 0.5 = 1.375
        let x = g(2, 2, &[1.5, 2.0, 2.5, 4.0]);
        let prob = RegularizedProblem::new(
            g(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            g(2, 2, &[1.0, 0.5, 2.0, 0.0]),
            Kernel::identity(),
            g(2, 2, &[1.0, 1.0, 3.0, 2.0]),
        )
        .unwrap();
        let cfg = BregmanConfig {
            q: 1.0,
            alpha: 0.5,
            ..Default::default()
        };
        assert_relative_eq!(
            q_functional(&x, &prob, &cfg).unwrap(),
            2.125,
            epsilon = 1e-14
        );
    }

    #[test]
    fn gradient_examples() {
        let x = g(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let prob = identity_problem(x.clone(), x.clone());
        let grad = q_gradient(&x, &prob, &BregmanConfig::default()).unwrap();
        assert!(grad.data().iter().all(|&v| v == 0.0));

        let y = g(2, 2, &[2.0, 2.0, 1.0, 5.0]);
        let prob = identity_problem(y.clone(), g(2, 2, &[3.0; 4]));
        let cfg = BregmanConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let grad = q_gradient(&x, &prob, &cfg).unwrap();
        for ((gv, yv), xv) in grad.data().iter().zip(y.data()).zip(x.data()) {
            assert_eq!(*gv, -2.0 * (yv - xv));
        }
    }

    #[test]
    fn correlation_identity_and_clamp() {
        let x = g(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(correlate(&x, &Kernel::identity()), x);
        // b(0, -1) = 1 picks the left neighbour, clamped at column 0.
        let mut w = vec![0.0; 9];
        w[3] = 1.0;
        let left = Kernel::new(1, w).unwrap();
        assert_eq!(correlate(&x, &left).data(), &[1.0, 1.0, 2.0, 4.0, 4.0, 5.0]);
    }

    fn random_problem(
        rng: &mut ChaCha8Rng,
        w: usize,
        h: usize,
        half: usize,
    ) -> (RegularizedProblem, Grid) {
        let cells = w * h;
        let mut v =
            |lo: f64, hi: f64| -> Vec<f64> { (0..cells).map(|_| rng.gen_range(lo..hi)).collect() };
        let y = Grid::new(w, h, v(0.5, 4.0)).unwrap();
        let weight = Grid::new(w, h, v(0.0, 2.0)).unwrap();
        let reference = Grid::new(w, h, v(0.5, 4.0)).unwrap();
        let x = Grid::new(w, h, v(0.5, 4.0)).unwrap();
        let side = 2 * half + 1;
        let taps: Vec<f64> = (0..side * side).map(|_| rng.gen_range(-0.5..1.0)).collect();
        let kernel = Kernel::new(half, taps).unwrap();
        (
            RegularizedProblem::new(y, weight, kernel, reference).unwrap(),
            x,
        )
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &q in &[0.7, 1.0, 2.0] {
            for half in 0..=1 {
                let (prob, x) = random_problem(&mut rng, 8, 8, half);
                let cfg = BregmanConfig {
                    q,
                    alpha: 0.8,
                    ..Default::default()
                };
                let grad = q_gradient(&x, &prob, &cfg).unwrap();
                let step = 1e-5;
                for idx in 0..x.len() {
                    let mut plus = x.clone();
                    plus.data_mut()[idx] += step;
                    let mut minus = x.clone();
                    minus.data_mut()[idx] -= step;
                    let fd = (q_functional(&plus, &prob, &cfg).unwrap()
                        - q_functional(&minus, &prob, &cfg).unwrap())
                        / (2.0 * step);
                    let a = grad.data()[idx];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                    assert!(rel <= 1e-5, "q={q} N={half} idx={idx}: {a} vs {fd}");
                }
            }
        }
    }

    fn positive_grid(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(lo..hi, n)
    }

    proptest! {
        #[test]
        fn divergence_nonnegative(a in positive_grid(12, 0.05, 10.0), b in positive_grid(12, 0.05, 10.0), q in 0.1f64..3.0) {
            let a = Grid::new(4, 3, a).unwrap();
            let b = Grid::new(4, 3, b).unwrap();
            prop_assert!(bregman_divergence(&a, &b, q).unwrap() >= 0.0);
            prop_assert_eq!(bregman_divergence(&a, &a, q).unwrap(), 0.0);
        }

        #[test]
        fn q1_is_half_squared_error(a in positive_grid(9, 0.05, 10.0), b in positive_grid(9, 0.05, 10.0)) {
            let sq: f64 = a.iter().zip(&b).map(|(x, r)| (x - r) * (x - r)).sum();
            let a = Grid::new(3, 3, a).unwrap();
            let b = Grid::new(3, 3, b).unwrap();
            let d = bregman_divergence(&a, &b, 1.0).unwrap();
            prop_assert!((d - 0.5 * sq).abs() <= 1e-12 * sq.max(f64::MIN_POSITIVE));
        }
    }
}
