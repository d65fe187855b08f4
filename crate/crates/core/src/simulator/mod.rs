//! Ground-truth pendulum cart: analytic mechanics, drive functions,
//! adaptive integration and dataset files.
//!
//! Coordinates are `q = [θ, x]`: the pendulum angle is free and the cart
//! position is externally specified.

mod dataset;
mod drive;
pub mod integrator;
mod trial;

pub use dataset::{build_dataset, read_dataset, write_dataset, TrajectorySample, CSV_HEADER};
pub use drive::{DriveFunction, DriveKind, DriveTerm};
pub use integrator::Tolerances;
pub use trial::{
    default_trials, generate_trial, integrate_trial, load_trial_file, parse_trial_file,
    replay_force_driven, Role, TrialFile, TrialSpec,
};

use serde::{Deserialize, Serialize};

use crate::dynamics::{MechanicalTerms, MechanicsProvider, PartitionedMass};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumCartParams {
    pub m1: f64,
    pub m2: f64,
    #[serde(rename = "length")]
    pub l: f64,
    pub g: f64,
}

impl Default for PendulumCartParams {
    fn default() -> Self {
        Self {
            m1: 0.45,
            m2: 0.13,
            l: 1.5,
            g: 9.8,
        }
    }
}

impl PendulumCartParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m1, self.m2, self.l, self.g];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "pendulum-cart parameters must be positive: {self:?}"
            )))
        }
    }

    /// Natural frequency of small free swings, `√(g/L)`.
    pub fn omega0(&self) -> f64 {
        (self.g / self.l).sqrt()
    }

    /// Mass matrix and its θ-derivative at angle `theta`.
    fn mass(&self, theta: f64) -> (Matrix, Matrix) {
        let c = self.m2 * self.l * theta.cos();
        let s = -self.m2 * self.l * theta.sin();
        let m = Matrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) => self.m2 * self.l * self.l,
            (1, 1) => self.m1 + self.m2,
            _ => c,
        });
        let dm = Matrix::from_fn(2, |i, j| if i == j { 0.0 } else { s });
        (m, dm)
    }

    /// Terms with every coordinate free, used when the cart is force driven.
    pub(crate) fn terms_all_free(&self, theta: f64) -> MechanicalTerms<f64> {
        self.terms_partitioned(theta, 2)
    }

    fn terms_partitioned(&self, theta: f64, n_free: usize) -> MechanicalTerms<f64> {
        let (m, dm) = self.mass(theta);
        let mass = PartitionedMass::new(n_free, m, vec![dm, Matrix::zeros(2)])
            .expect("2×2 pendulum-cart mass is well formed");
        MechanicalTerms {
            mass,
            v: -self.m2 * self.g * self.l * theta.cos(),
            dv_dq: vec![self.m2 * self.g * self.l * theta.sin(), 0.0],
        }
    }
}

/// Closed-form mechanics of the pendulum cart.
#[derive(Clone, Copy, Debug, Default)]
pub struct Oracle {
    pub params: PendulumCartParams,
}

impl Oracle {
    pub fn new(params: PendulumCartParams) -> Self {
        Self { params }
    }
}

impl MechanicsProvider for Oracle {
    fn n_free(&self) -> usize {
        1
    }

    fn n_external(&self) -> usize {
        1
    }

    fn terms(&self, q: &[f64]) -> Result<MechanicalTerms<f64>> {
        if q.len() != 2 {
            return Err(Error::Shape(format!("oracle expects q of length 2, got {}", q.len())));
        }
        Ok(self.params.terms_partitioned(q[0], 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn oracle_mass_at_rest() {
        let t = Oracle::default().terms(&[0.0, 3.0]).unwrap();
        let m = t.mass.m().as_slice();
        let want = [0.2925, 0.195, 0.195, 0.58];
        for (a, b) in m.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(t.dv_dq[0], 0.0);
        assert!((t.v + 0.13 * 9.8 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_coupling_vanishes_horizontal() {
        let t = Oracle::default().terms(&[FRAC_PI_2, 0.0]).unwrap();
        assert!(t.mass.m().get(0, 1).abs() < 1e-16);
    }

    #[test]
    fn oracle_derivatives_match_finite_differences() {
        let o = Oracle::default();
        let h = 1e-6;
        for &th in &[-2.0, 0.3, 1.1] {
            let t = o.terms(&[th, 0.0]).unwrap();
            let (p, m) = (o.terms(&[th + h, 0.0]).unwrap(), o.terms(&[th - h, 0.0]).unwrap());
            assert!(((p.v - m.v) / (2.0 * h) - t.dv_dq[0]).abs() < 1e-8);
            for k in 0..4 {
                let fd = (p.mass.m().as_slice()[k] - m.mass.m().as_slice()[k]) / (2.0 * h);
                assert!((fd - t.mass.dm_dq()[0].as_slice()[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        let p = PendulumCartParams { m2: 0.0, ..Default::default() };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        assert!(Oracle::default().terms(&[0.0]).is_err());
    }
}
