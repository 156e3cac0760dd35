//! Exact LQ oracles and the comparison controllers/optimizers.

use nalgebra::{DMatrix, DVector};

use crate::error::{LpcError, Result};
use crate::ocp::LossOracle;

/// Backward finite-horizon Riccati solution.
///
/// `p[j]` is the cost-to-go matrix with `N - j` stages remaining
/// (`p[N] = S`), and `k[j]` the gain applied at stage `j`, so the horizon-N
/// pair quoted for a receding-horizon controller is `(p[0], k[0])`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.k.len()
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p[0]
    }

    /// First-stage gain, `None` for a zero horizon.
    pub fn k0(&self) -> Option<&DMatrix<f64>> {
        self.k.first()
    }
}

fn check_shapes(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<()> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(LpcError::dim("A columns", n, a.ncols()));
    }
    if b.nrows() != n {
        return Err(LpcError::dim("B rows", n, b.nrows()));
    }
    if q.shape() != (n, n) {
        return Err(LpcError::dim("Q", n, q.nrows()));
    }
    if r.shape() != (b.ncols(), b.ncols()) {
        return Err(LpcError::dim("R", b.ncols(), r.nrows()));
    }
    Ok(())
}

/// `P_N = S`, `K_j = (R + B'P B)^{-1} B'P A`, `P_j = Q + A'P A - A'P B K_j`.
pub fn riccati_recursion(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
    horizon: usize,
) -> Result<RiccatiSolution> {
    check_shapes(a, b, q, r)?;
    if s.shape() != q.shape() {
        return Err(LpcError::dim("S", q.nrows(), s.nrows()));
    }
    let mut p = vec![DMatrix::zeros(a.nrows(), a.nrows()); horizon + 1];
    let mut k = vec![DMatrix::zeros(b.ncols(), a.nrows()); horizon];
    p[horizon] = s.clone();
    for j in (0..horizon).rev() {
        let pn = &p[j + 1];
        let btp = b.transpose() * pn;
        let gram = r + &btp * b;
        let inv = gram.try_inverse().ok_or(LpcError::NonInvertible {
            condition: f64::INFINITY,
            doublings: 0,
        })?;
        let kj = inv * &btp * a;
        let atp = a.transpose() * pn;
        let pj = q + &atp * a - &atp * b * &kj;
        p[j] = (&pj + pj.transpose()) * 0.5;
        k[j] = kj;
    }
    Ok(RiccatiSolution { p, k })
}

/// Exact stage Q-matrix `H` with `Q_j(x, u) = [x; u]' H [x; u]`.
pub fn lq_q_matrix(
    p_next: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_shapes(a, b, q, r)?;
    let n = a.nrows();
    let m = b.ncols();
    let atp = a.transpose() * p_next;
    let mut h = DMatrix::zeros(n + m, n + m);
    h.view_mut((0, 0), (n, n)).copy_from(&(q + &atp * a));
    let xu = &atp * b;
    h.view_mut((0, n), (n, m)).copy_from(&xu);
    h.view_mut((n, 0), (m, n)).copy_from(&xu.transpose());
    h.view_mut((n, n), (m, m))
        .copy_from(&(r + b.transpose() * p_next * b));
    Ok(h)
}

/// Result of a plain gradient-descent run.
#[derive(Debug, Clone, PartialEq)]
pub struct GdResult {
    pub w: DVector<f64>,
    pub iterations: usize,
    pub final_loss: f64,
}

/// `w <- w - lr * L'(w)` until the step's infinity norm is at most `tol`.
pub fn gd_minimize<L: LossOracle>(
    loss: &L,
    w0: &DVector<f64>,
    lr: f64,
    tol: f64,
    max_iters: usize,
) -> Result<GdResult> {
    if !(lr > 0.0) {
        return Err(LpcError::InvalidArgument(
            "learning rate must be > 0".into(),
        ));
    }
    if w0.len() != loss.dim() {
        return Err(LpcError::dim("gd start point", loss.dim(), w0.len()));
    }
    let mut w = w0.clone();
    let mut iterations = 0;
    for _ in 0..max_iters {
        let step = loss.gradient(&w) * lr;
        w -= &step;
        iterations += 1;
        if w.iter().any(|v| !v.is_finite()) || step.iter().any(|v| !v.is_finite()) {
            return Err(LpcError::NonFinite(format!(
                "gradient descent diverged after {iterations} iterations"
            )));
        }
        if step.amax() <= tol {
            break;
        }
    }
    let final_loss = loss.value(&w);
    if !final_loss.is_finite() {
        return Err(LpcError::NonFinite("gradient descent loss".into()));
    }
    Ok(GdResult {
        w,
        iterations,
        final_loss,
    })
}

/// Two-channel PID law on the tracking error.
#[derive(Debug, Clone, PartialEq)]
pub struct PidGains {
    pub kp: [f64; 2],
    pub ki: [f64; 2],
    pub kd: [f64; 2],
    integral: [f64; 2],
    prev_error: [f64; 2],
}

impl PidGains {
    pub fn new(kp: [f64; 2], ki: [f64; 2], kd: [f64; 2]) -> Self {
        PidGains {
            kp,
            ki,
            kd,
            integral: [0.0; 2],
            prev_error: [0.0; 2],
        }
    }

    /// The hand-tuned gains used for the Van der Pol tracking comparison.
    pub fn tuned_vdp() -> Self {
        Self::new([0.9, 0.8], [0.5, 0.5], [0.01, 0.01])
    }

    pub fn integral(&self) -> [f64; 2] {
        self.integral
    }

    /// `u = -Kp e - Ki sum(e) - Kd (e - e_prev)`, summed over both channels.
    /// The integral includes the current error; the first call treats the
    /// previous error as zero.
    #[allow(clippy::needless_range_loop)]
    pub fn step(&mut self, e: [f64; 2]) -> f64 {
        let mut u = 0.0;
        for c in 0..2 {
            self.integral[c] += e[c];
            let de = e[c] - self.prev_error[c];
            u -= self.kp[c] * e[c] + self.ki[c] * self.integral[c] + self.kd[c] * de;
        }
        self.prev_error = e;
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::QuadraticLoss;
    use approx::assert_abs_diff_eq;

    fn benchmark() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_row_slice(2, 2, &[0.6, 2.0, 1.5, 0.85]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.5]),
            DMatrix::identity(2, 2) * 5.0,
            DMatrix::identity(1, 1),
        )
    }

    #[test]
    fn horizon_ten_solution() {
        let (a, b, q, r) = benchmark();
        let sol = riccati_recursion(&a, &b, &q, &r, &q, 10).unwrap();
        let p = sol.p0();
        let k = sol.k0().unwrap();
        for (got, want) in [
            (p[(0, 0)], 20.20),
            (p[(0, 1)], 23.56),
            (p[(1, 0)], 23.56),
            (p[(1, 1)], 57.67),
        ] {
            assert_abs_diff_eq!(got, want, epsilon = 0.01);
        }
        assert_abs_diff_eq!(k[(0, 0)], 3.26, epsilon = 0.01);
        assert_abs_diff_eq!(k[(0, 1)], 3.12, epsilon = 0.01);
    }

    #[test]
    fn unactuated_and_empty_horizons() {
        let (a, _, q, r) = benchmark();
        let b = DMatrix::zeros(2, 1);
        let sol = riccati_recursion(&a, &b, &q, &r, &q, 5).unwrap();
        assert!(sol.k.iter().all(|k| k.iter().all(|&v| v == 0.0)));

        let (a, b, q, r) = benchmark();
        let sol = riccati_recursion(&a, &b, &q, &r, &q, 0).unwrap();
        assert_eq!(sol.p0(), &q);
        assert!(sol.k0().is_none());
    }

    #[test]
    fn riccati_is_self_consistent() {
        let (a, b, q, r) = benchmark();
        let sol = riccati_recursion(&a, &b, &q, &r, &q, 10).unwrap();
        for j in 0..10 {
            let pn = &sol.p[j + 1];
            let kj = &sol.k[j];
            let pj = &q + a.transpose() * pn * &a - a.transpose() * pn * &b * kj;
            assert_abs_diff_eq!(pj, sol.p[j].clone(), epsilon = 1e-10);
            assert_abs_diff_eq!(sol.p[j].clone(), sol.p[j].transpose(), epsilon = 1e-10);
            assert!(sol.p[j].symmetric_eigenvalues().min() >= -1e-10);
        }
    }

    #[test]
    fn q_matrix_blocks() {
        let (a, b, q, r) = benchmark();
        let h = lq_q_matrix(&DMatrix::zeros(2, 2), &a, &b, &q, &r).unwrap();
        let mut expected = DMatrix::zeros(3, 3);
        expected.view_mut((0, 0), (2, 2)).copy_from(&q);
        expected[(2, 2)] = 1.0;
        assert_eq!(h, expected);
        let h = lq_q_matrix(&q, &a, &b, &q, &r).unwrap();
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn gd_half_square() {
        let loss = QuadraticLoss::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap();
        let res = gd_minimize(&loss, &DVector::from_element(1, 1.0), 0.05, 1e-5, 100_000).unwrap();
        // steps 0.05 * 0.95^i fall to 1e-5 at i = ceil(ln(2e-4) / ln(0.95))
        let expected = ((2e-4f64).ln() / 0.95f64.ln()).ceil() as usize + 1;
        assert_eq!(res.iterations, expected);
        assert!((165..=168).contains(&res.iterations));
    }

    #[test]
    fn gd_zero_gradient_and_divergence() {
        let loss = QuadraticLoss::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap();
        let res = gd_minimize(&loss, &DVector::zeros(1), 0.05, 1e-5, 100).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.w[0], 0.0);

        let stiff =
            QuadraticLoss::new(DMatrix::identity(1, 1) * 100.0, DVector::zeros(1), 0.0).unwrap();
        let err =
            gd_minimize(&stiff, &DVector::from_element(1, 1.0), 0.05, 1e-5, 100_000).unwrap_err();
        assert!(matches!(err, LpcError::NonFinite(_)));
    }

    #[test]
    fn pid_examples() {
        let mut pid = PidGains::tuned_vdp();
        assert_abs_diff_eq!(pid.step([1.0, -1.0]), -0.1, epsilon = 1e-15);

        let mut pid = PidGains::tuned_vdp();
        assert_eq!(pid.step([0.0, 0.0]), 0.0);

        let mut pid = PidGains::new([0.0; 2], [0.0; 2], [1.0, 1.0]);
        pid.step([0.3, -0.2]);
        assert_eq!(pid.step([0.3, -0.2]), 0.0);
        assert_eq!(pid.integral(), [0.6, -0.4]);
    }
}
