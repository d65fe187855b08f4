use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveKind {
    Stationary,
    CosineSum,
    DecayingCosine,
    ForceDriven,
}

/// `A · e^{−λt} · cos(ωt + φ)`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveTerm {
    pub amplitude: f64,
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub decay: f64,
}

impl DriveTerm {
    pub fn new(amplitude: f64, omega: f64) -> Self {
        Self {
            amplitude,
            omega,
            phase: 0.0,
            decay: 0.0,
        }
    }

    pub fn with_phase(self, phase: f64) -> Self {
        Self { phase, ..self }
    }

    pub fn with_decay(self, decay: f64) -> Self {
        Self { decay, ..self }
    }

    /// Value and first two time derivatives.
    fn eval(&self, t: f64) -> [f64; 3] {
        let env = self.amplitude * (-self.decay * t).exp();
        let arg = self.omega * t + self.phase;
        let (s, c) = arg.sin_cos();
        let (l, w) = (self.decay, self.omega);
        [
            env * c,
            env * (-l * c - w * s),
            env * ((l * l - w * w) * c + 2.0 * l * w * s),
        ]
    }
}

/// Cart excitation. Position kinds prescribe `x(t)` offset so that
/// `x(0) = 0`; the force kind prescribes `Q_x(t)` instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveFunction {
    pub kind: DriveKind,
    #[serde(default)]
    pub terms: Vec<DriveTerm>,
}

impl DriveFunction {
    pub fn stationary() -> Self {
        Self {
            kind: DriveKind::Stationary,
            terms: Vec::new(),
        }
    }

    pub fn new(kind: DriveKind, terms: Vec<DriveTerm>) -> Result<Self> {
        let d = Self { kind, terms };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self
            .terms
            .iter()
            .any(|t| ![t.amplitude, t.omega, t.phase, t.decay].iter().all(|v| v.is_finite()))
        {
            return bad("drive terms must be finite".into());
        }
        if self.terms.iter().any(|t| t.decay < 0.0) {
            return bad("decay rates must be non-negative".into());
        }
        match self.kind {
            DriveKind::Stationary if !self.terms.is_empty() => {
                bad("stationary drive takes no terms".into())
            }
            DriveKind::CosineSum if self.terms.iter().any(|t| t.decay != 0.0) => {
                bad("cosine_sum terms must not decay; use decaying_cosine".into())
            }
            DriveKind::CosineSum | DriveKind::DecayingCosine | DriveKind::ForceDriven
                if self.terms.is_empty() =>
            {
                bad(format!("{:?} drive needs at least one term", self.kind))
            }
            _ => Ok(()),
        }
    }

    pub fn is_position(&self) -> bool {
        self.kind != DriveKind::ForceDriven
    }

    fn sum(&self, t: f64) -> [f64; 3] {
        self.terms.iter().fold([0.0; 3], |acc, term| {
            let v = term.eval(t);
            [acc[0] + v[0], acc[1] + v[1], acc[2] + v[2]]
        })
    }

    /// `(x, ẋ, ẍ)` at time `t`; zero for the force kind.
    pub fn position(&self, t: f64) -> [f64; 3] {
        if !self.is_position() {
            return [0.0; 3];
        }
        let offset: f64 = self.terms.iter().map(|d| d.amplitude * d.phase.cos()).sum();
        let [x, xd, xdd] = self.sum(t);
        [x - offset, xd, xdd]
    }

    /// Applied cart force `Q_x(t)`; zero for position kinds.
    pub fn force(&self, t: f64) -> f64 {
        if self.is_position() {
            0.0
        } else {
            self.sum(t)[0]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn starts_at_origin() {
        let d = DriveFunction::new(
            DriveKind::CosineSum,
            vec![DriveTerm::new(0.4, 1.2).with_phase(0.7), DriveTerm::new(0.2, 3.1)],
        )
        .unwrap();
        assert!(d.position(0.0)[0].abs() < 1e-15);
        assert_eq!(DriveFunction::stationary().position(5.0), [0.0; 3]);
    }

    #[test]
    fn force_kind_has_no_motion() {
        let d = DriveFunction::new(DriveKind::ForceDriven, vec![DriveTerm::new(0.5, 2.0)]).unwrap();
        assert_eq!(d.position(1.0), [0.0; 3]);
        assert!((d.force(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(DriveFunction::new(DriveKind::CosineSum, vec![]).is_err());
        assert!(DriveFunction::new(
            DriveKind::CosineSum,
            vec![DriveTerm::new(1.0, 1.0).with_decay(0.1)]
        )
        .is_err());
        assert!(DriveFunction::new(DriveKind::Stationary, vec![DriveTerm::new(1.0, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(
            a in 0.1..1.0f64, w in 0.5..4.0f64, p in -3.0..3.0f64, l in 0.0..0.5f64, t in 0.0..20.0f64
        ) {
            let d = DriveFunction::new(
                DriveKind::DecayingCosine,
                vec![DriveTerm::new(a, w).with_phase(p).with_decay(l), DriveTerm::new(0.3, 1.7)],
            ).unwrap();
            let h = 1e-4;
            let [_, xd, xdd] = d.position(t);
            let (fp, fm) = (d.position(t + h), d.position(t - h));
            let fd1 = (fp[0] - fm[0]) / (2.0 * h);
            let fd2 = (fp[1] - fm[1]) / (2.0 * h);
            let scale = 1.0 + a * w * w;
            prop_assert!((fd1 - xd).abs() < 1e-6 * scale);
            prop_assert!((fd2 - xdd).abs() < 1e-6 * scale);
        }
    }
}
