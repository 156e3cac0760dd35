//! Discrete-time simulation plants.

use nalgebra::{Matrix2, Vector2};

use crate::error::{LpcError, Result};

/// Sampling time of the discretized Van der Pol oscillator.
pub const VDP_DT: f64 = 0.1;

/// Angular increment of the sinusoidal reference per step.
pub const REFERENCE_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum PlantModel {
    /// `x' = A x + B u` with a 2x2 `A` and 2x1 `B`.
    Linear { a: Matrix2<f64>, b: Vector2<f64> },
    /// Polynomial/trigonometric benchmark with `f(0, 0) = 0`.
    PolyNonlinear,
    /// Euler-discretized Van der Pol oscillator with sampling time `dt`.
    VanDerPol { dt: f64 },
    /// Inner plant on `(x1, x2)` augmented with the reference on `(r1, r2)`.
    AugmentedTracking { dt: f64 },
}

impl PlantModel {
    /// The linear benchmark system.
    pub fn benchmark_linear() -> Self {
        PlantModel::Linear {
            a: Matrix2::new(0.6, 2.0, 1.5, 0.85),
            b: Vector2::new(0.0, 0.5),
        }
    }

    /// Resolves `linear`, `poly`, `vdp` or `vdp-tracking`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name.trim() {
            "linear" => Ok(Self::benchmark_linear()),
            "poly" => Ok(PlantModel::PolyNonlinear),
            "vdp" => Ok(PlantModel::VanDerPol { dt: VDP_DT }),
            "vdp-tracking" => Ok(PlantModel::AugmentedTracking { dt: VDP_DT }),
            other => Err(LpcError::UnknownPlant(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PlantModel::Linear { .. } => "linear",
            PlantModel::PolyNonlinear => "poly",
            PlantModel::VanDerPol { .. } => "vdp",
            PlantModel::AugmentedTracking { .. } => "vdp-tracking",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            PlantModel::AugmentedTracking { .. } => 4,
            _ => 2,
        }
    }

    pub fn input_dim(&self) -> usize {
        1
    }

    pub fn is_tracking(&self) -> bool {
        matches!(self, PlantModel::AugmentedTracking { .. })
    }

    /// One step of the dynamics. `k` is the time index; every variant here
    /// is time-invariant, the argument is kept for reference-driven plants.
    pub fn step(&self, x: &[f64], u: &[f64], _k: usize) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(LpcError::dim("plant state", self.state_dim(), x.len()));
        }
        if u.len() != self.input_dim() {
            return Err(LpcError::dim("plant input", self.input_dim(), u.len()));
        }
        let u = u[0];
        Ok(match self {
            PlantModel::Linear { a, b } => {
                let next = a * Vector2::new(x[0], x[1]) + b * u;
                vec![next[0], next[1]]
            }
            PlantModel::PolyNonlinear => vec![
                x[0].sin() + 0.1 * x[1] + 0.1 * x[0] * x[0],
                -1.2 * x[0] + 0.8 * x[1] + 0.1 * (u + x[0]).sin() + 0.2 * x[1] * u,
            ],
            PlantModel::VanDerPol { dt } => vdp_step(*dt, x[0], x[1], u).to_vec(),
            PlantModel::AugmentedTracking { dt } => {
                let [x1, x2] = vdp_step(*dt, x[0], x[1], u);
                let [r1, r2] = rotate_reference(x[2], x[3]);
                vec![x1, x2, r1, r2]
            }
        })
    }
}

// Input gain 0.5 = 5 * dt at dt = 0.1.
fn vdp_step(dt: f64, x1: f64, x2: f64, u: f64) -> [f64; 2] {
    [
        x1 + dt * x2,
        x2 + dt * (1.0 - x1 * x1) * x2 - dt * x1 + 5.0 * dt * u,
    ]
}

/// Advances `(sin(ck), cos(ck))` to `(sin(c(k+1)), cos(c(k+1)))`.
fn rotate_reference(r1: f64, r2: f64) -> [f64; 2] {
    let (s, c) = REFERENCE_RATE.sin_cos();
    [r1 * c + r2 * s, r2 * c - r1 * s]
}

/// `r_k = (sin(0.1 k), cos(0.1 k))`.
pub fn reference_at(k: usize) -> [f64; 2] {
    let (s, c) = (REFERENCE_RATE * k as f64).sin_cos();
    [s, c]
}

/// `e = (x1 - r1, x2 - r2)` of an augmented state `(x1, x2, r1, r2)`.
pub fn tracking_error(augmented: &[f64]) -> Result<[f64; 2]> {
    if augmented.len() != 4 {
        return Err(LpcError::dim("augmented state", 4, augmented.len()));
    }
    Ok([augmented[0] - augmented[2], augmented[1] - augmented[3]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_step() {
        let p = PlantModel::benchmark_linear();
        let next = p.step(&[1.0, -0.5], &[1.0], 0).unwrap();
        assert!((next[0] + 0.4).abs() < 1e-15);
        assert!((next[1] - 1.575).abs() < 1e-15);
    }

    #[test]
    fn equilibria() {
        for p in [PlantModel::benchmark_linear(), PlantModel::PolyNonlinear] {
            assert_eq!(p.step(&[0.0, 0.0], &[0.0], 3).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn vdp_step_matches_hand_value() {
        let p = PlantModel::by_name("vdp").unwrap();
        let next = p.step(&[2.0, -1.0], &[0.0], 0).unwrap();
        assert!((next[0] - 1.9).abs() < 1e-14);
        assert!((next[1] + 0.9).abs() < 1e-14);
    }

    #[test]
    fn reference_values() {
        assert_eq!(reference_at(0), [0.0, 1.0]);
        assert!((reference_at(16)[0] - 0.9996).abs() < 1e-3);
        for k in 0..=1000 {
            let [a, b] = reference_at(k);
            assert!((a * a + b * b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn augmented_reference_follows_formula() {
        let p = PlantModel::by_name("vdp-tracking").unwrap();
        let r0 = reference_at(0);
        let mut x = vec![2.0, -1.0, r0[0], r0[1]];
        for k in 0..200 {
            x = p.step(&x, &[0.0], k).unwrap();
            let r = reference_at(k + 1);
            assert!((x[2] - r[0]).abs() < 1e-12 && (x[3] - r[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn tracking_error_pairs_position_with_position() {
        assert_eq!(tracking_error(&[2.0, -1.0, 1.0, 0.0]).unwrap(), [1.0, -1.0]);
        assert_eq!(tracking_error(&[0.3, 0.4, 0.3, 0.4]).unwrap(), [0.0, 0.0]);
        let x = [0.7, -0.2, 0.1, 0.9];
        let e = tracking_error(&x).unwrap();
        let e2 = tracking_error(&x.map(|v| 2.0 * v)).unwrap();
        assert_eq!(e2, [2.0 * e[0], 2.0 * e[1]]);
        assert!(tracking_error(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn dimension_checks() {
        let p = PlantModel::PolyNonlinear;
        assert!(matches!(
            p.step(&[0.0], &[0.0], 0),
            Err(LpcError::DimensionMismatch { .. })
        ));
        assert!(PlantModel::by_name("cartpole").is_err());
    }
}
