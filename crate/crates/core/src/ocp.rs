//! Regularized recursive-gain minimizer (the "OCP method").
//!
//! Minimizing `L(w)` is recast as a finite-horizon control problem on the
//! iterate, which yields the update
//!
//! ```text
//! g_i     = alpha * L'(w_i) + beta * g_{i-1},    g_{-1} = 0
//! w_{i+1} = w_i - g_i
//! alpha   = (R_d + L'')^{-1},  beta = alpha * R_d
//! ```
//!
//! `R_d` is positive definite, so `R_d + L''` stays invertible when the
//! Hessian is singular. On a quadratic with curvature `h` along an
//! eigendirection of `R_d = r I` the error contracts by `sqrt(r / (r + h))`
//! per step.

use nalgebra::{DMatrix, DVector};

use crate::error::{LpcError, Result};

/// Condition number above which `R_d + H` is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// A twice differentiable scalar loss.
pub trait LossOracle {
    fn dim(&self) -> usize;
    fn value(&self, w: &DVector<f64>) -> f64;
    fn gradient(&self, w: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, w: &DVector<f64>) -> DMatrix<f64>;
}

impl<L: LossOracle + ?Sized> LossOracle for &L {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, w: &DVector<f64>) -> f64 {
        (**self).value(w)
    }
    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        (**self).gradient(w)
    }
    fn hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        (**self).hessian(w)
    }
}

/// `L(w) = 1/2 w' A w - b' w + c` with symmetric `A`.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl QuadraticLoss {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(LpcError::dim("quadratic loss", a.nrows(), b.len()));
        }
        let a = (&a + a.transpose()) * 0.5;
        Ok(QuadraticLoss { a, b, c })
    }
}

impl LossOracle for QuadraticLoss {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.a * w)) - self.b.dot(w) + self.c
    }
    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.a * w - &self.b
    }
    fn hessian(&self, _w: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OcpMode {
    /// One gain recursion step per weight update.
    #[default]
    Interleaved,
    /// Run the gain recursion to its fixed point before each weight update.
    InnerLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianRefresh {
    /// Evaluate the Hessian once, at the starting point.
    #[default]
    Frozen,
    EveryStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpConfig {
    /// Convergence matrix `R_d`.
    pub rd: DMatrix<f64>,
    pub max_iters: usize,
    /// Stop once the infinity norm of the weight change is at most this.
    pub tol: f64,
    pub mode: OcpMode,
    pub hessian_refresh: HessianRefresh,
    /// How many times `R_d` may be doubled when `R_d + H` is ill-conditioned.
    pub regularization_fallback_max: u32,
}

impl OcpConfig {
    /// `R_d = r I` with the remaining fields at their defaults.
    pub fn scaled_identity(dim: usize, r: f64, max_iters: usize, tol: f64) -> Self {
        OcpConfig {
            rd: DMatrix::identity(dim, dim) * r,
            max_iters,
            tol,
            mode: OcpMode::default(),
            hessian_refresh: HessianRefresh::default(),
            regularization_fallback_max: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(LpcError::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(LpcError::InvalidArgument("tolerance must be > 0".into()));
        }
        if !self.rd.is_square() {
            return Err(LpcError::InvalidArgument("R_d must be square".into()));
        }
        let sym = (&self.rd + self.rd.transpose()) * 0.5;
        if (&sym - &self.rd).amax() > 1e-12 * self.rd.amax().max(1.0) {
            return Err(LpcError::InvalidArgument("R_d must be symmetric".into()));
        }
        let min_eig = sym.symmetric_eigenvalues().min();
        if !(min_eig > 0.0) {
            return Err(LpcError::InvalidArgument(
                "R_d must be positive definite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpRecord {
    pub w: DVector<f64>,
    pub grad_norm: f64,
    /// Infinity norm of the step that produced `w` (0 for the start point).
    pub step_norm: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Tolerance,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpTrace {
    pub records: Vec<OcpRecord>,
    pub stop_reason: StopReason,
}

impl OcpTrace {
    /// Number of weight updates performed.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// `alpha = (R_d + H)^{-1}` and `beta = alpha R_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainPair {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    /// How many times `R_d` was doubled to reach an acceptable condition number.
    pub doublings: u32,
}

/// Computes the gain pair, doubling `R_d` up to `fallback_max` times while
/// `R_d + H` has a condition number above [`MAX_CONDITION`].
pub fn gain_pair(h: &DMatrix<f64>, rd: &DMatrix<f64>, fallback_max: u32) -> Result<GainPair> {
    if !h.is_square() || h.shape() != rd.shape() {
        return Err(LpcError::dim("gain pair", rd.nrows(), h.nrows()));
    }
    let mut rd = rd.clone();
    let mut condition = f64::INFINITY;
    for doublings in 0..=fallback_max {
        let m = &rd + h;
        condition = condition_number(&m);
        if condition <= MAX_CONDITION {
            if let Some(alpha) = m.try_inverse() {
                let beta = &alpha * &rd;
                return Ok(GainPair {
                    alpha,
                    beta,
                    doublings,
                });
            }
        }
        rd *= 2.0;
    }
    Err(LpcError::NonInvertible {
        condition,
        doublings: fallback_max,
    })
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// One interleaved update: `g = alpha grad + beta g_prev`, `w_next = w - g`.
pub fn ocp_step(
    w: &DVector<f64>,
    g_prev: &DVector<f64>,
    alpha: &DMatrix<f64>,
    beta: &DMatrix<f64>,
    grad: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let g = alpha * grad + beta * g_prev;
    (w - &g, g)
}

const INNER_MAX_ITERS: usize = 100_000;
const INNER_TOL: f64 = 1e-13;

/// Iterates `g <- alpha grad + beta g` from zero until it stops moving.
fn inner_gain(alpha: &DMatrix<f64>, beta: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let base = alpha * grad;
    let mut g = base.clone();
    for _ in 0..INNER_MAX_ITERS {
        let next = &base + beta * &g;
        let change = (&next - &g).amax();
        g = next;
        if change <= INNER_TOL * g.amax().max(1.0) {
            break;
        }
    }
    g
}

fn check_finite(w: &DVector<f64>, loss: f64) -> Result<()> {
    if !loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(LpcError::NonFinite("optimizer iterate diverged".into()));
    }
    Ok(())
}

/// Minimizes `loss` from `w0`.
///
/// A start point with an exactly zero gradient is returned as-is with a
/// single-record trace.
pub fn ocp_minimize<L: LossOracle>(
    loss: &L,
    w0: &DVector<f64>,
    cfg: &OcpConfig,
) -> Result<(DVector<f64>, OcpTrace)> {
    let dim = loss.dim();
    if w0.len() != dim {
        return Err(LpcError::dim("ocp start point", dim, w0.len()));
    }
    if cfg.rd.nrows() != dim {
        return Err(LpcError::dim("convergence matrix", dim, cfg.rd.nrows()));
    }
    cfg.validate()?;

    let mut w = w0.clone();
    let mut grad = loss.gradient(&w);
    let loss0 = loss.value(&w);
    check_finite(&w, loss0)?;
    let mut records = vec![OcpRecord {
        w: w.clone(),
        grad_norm: grad.norm(),
        step_norm: 0.0,
        loss: loss0,
    }];
    if grad.iter().all(|&v| v == 0.0) {
        return Ok((
            w,
            OcpTrace {
                records,
                stop_reason: StopReason::Tolerance,
            },
        ));
    }

    let mut gains = gain_pair(&loss.hessian(&w), &cfg.rd, cfg.regularization_fallback_max)?;
    let mut g = DVector::zeros(dim);
    let mut stop_reason = StopReason::MaxIters;

    for i in 0..cfg.max_iters {
        if i > 0 && cfg.hessian_refresh == HessianRefresh::EveryStep {
            gains = gain_pair(&loss.hessian(&w), &cfg.rd, cfg.regularization_fallback_max)?;
        }
        let (w_next, g_next) = match cfg.mode {
            OcpMode::Interleaved => ocp_step(&w, &g, &gains.alpha, &gains.beta, &grad),
            OcpMode::InnerLoop => {
                let g_star = inner_gain(&gains.alpha, &gains.beta, &grad);
                (&w - &g_star, g_star)
            }
        };
        let step_norm = (&w_next - &w).amax();
        w = w_next;
        g = g_next;
        grad = loss.gradient(&w);
        let value = loss.value(&w);
        check_finite(&w, value)?;
        records.push(OcpRecord {
            w: w.clone(),
            grad_norm: grad.norm(),
            step_norm,
            loss: value,
        });
        // a zero step with a live gradient is a momentum cancellation, not convergence
        if step_norm <= cfg.tol && (&gains.alpha * &grad).amax() <= cfg.tol {
            stop_reason = StopReason::Tolerance;
            break;
        }
    }

    Ok((
        w,
        OcpTrace {
            records,
            stop_reason,
        },
    ))
}
