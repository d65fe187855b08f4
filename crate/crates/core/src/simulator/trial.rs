use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::TrajectorySample;
use super::drive::{DriveFunction, DriveKind, DriveTerm};
use super::integrator::{integrate, Tolerances};
use super::{Oracle, PendulumCartParams};
use crate::dynamics::{
    energy_report, equivalent_force, forward_dynamics_unchecked, GeneralizedState,
    MechanicsProvider,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

fn default_duration() -> f64 {
    20.0
}

fn default_tol() -> f64 {
    1e-10
}

fn default_role() -> Role {
    Role::Train
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    #[serde(default)]
    pub name: String,
    #[serde(flatten)]
    pub drive: DriveFunction,
    #[serde(default)]
    pub theta0: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_tol")]
    pub rtol: f64,
    #[serde(default = "default_tol")]
    pub atol: f64,
    #[serde(default = "default_role")]
    pub role: Role,
}

impl TrialSpec {
    pub fn new(name: &str, drive: DriveFunction, theta0: f64, role: Role) -> Self {
        Self {
            name: name.to_string(),
            drive,
            theta0,
            duration: default_duration(),
            rtol: default_tol(),
            atol: default_tol(),
            role,
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            rtol: self.rtol,
            atol: self.atol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.drive
            .validate()
            .map_err(|e| Error::Config(format!("trial '{}': {e}", self.name)))?;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.duration) || !positive(self.rtol) || !positive(self.atol) {
            return Err(Error::Config(format!(
                "trial '{}': duration and tolerances must be positive",
                self.name
            )));
        }
        if !self.theta0.is_finite() {
            return Err(Error::Config(format!("trial '{}': theta0 must be finite", self.name)));
        }
        Ok(())
    }
}

/// Contents of a trial-spec file: system parameters and the trial list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFile {
    #[serde(default)]
    pub system: PendulumCartParams,
    #[serde(rename = "trial", default)]
    pub trials: Vec<TrialSpec>,
}

impl TrialFile {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.trials.is_empty() {
            return Err(Error::Config("trial file lists no trials".into()));
        }
        self.trials.iter().try_for_each(TrialSpec::validate)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("trial file serializes")
    }
}

pub fn parse_trial_file(text: &str) -> Result<TrialFile> {
    let file: TrialFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("trial file: {e}")))?;
    file.validate()?;
    Ok(file)
}

pub fn load_trial_file(path: &Path) -> Result<TrialFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trial_file(&text)
}

/// The shipped trial set: one stationary trial, six position drives and
/// four force drives. `θ(0)` alternates between 1 and 0 rad.
pub fn default_trials() -> TrialFile {
    use DriveKind::*;
    let t = DriveTerm::new;
    let drives: Vec<(&str, DriveKind, Vec<DriveTerm>, Role)> = vec![
        ("stationary", Stationary, vec![], Role::Train),
        ("cosine", CosineSum, vec![t(0.5, 2.0)], Role::Train),
        ("two-tone", CosineSum, vec![t(0.4, 1.2), t(0.2, 3.1)], Role::Train),
        ("decaying", DecayingCosine, vec![t(0.7, 1.5).with_decay(0.15)], Role::Test),
        ("two-tone-phased", CosineSum, vec![t(0.3, 0.8), t(0.25, 2.6).with_phase(0.5)], Role::Train),
        ("slow-cosine", CosineSum, vec![t(0.5, 1.0)], Role::Test),
        (
            "decaying-two-tone",
            DecayingCosine,
            vec![t(0.45, 2.2).with_decay(0.1), t(0.25, 0.7).with_decay(0.05)],
            Role::Test,
        ),
        ("force", ForceDriven, vec![t(0.8, 1.8)], Role::Test),
        ("force-two-tone", ForceDriven, vec![t(0.5, 0.9), t(0.3, 3.2)], Role::Train),
        ("force-decaying", ForceDriven, vec![t(0.9, 1.3).with_decay(0.1)], Role::Test),
        ("force-fast", ForceDriven, vec![t(0.6, 2.4)], Role::Train),
    ];
    let trials = drives
        .into_iter()
        .enumerate()
        .map(|(i, (name, kind, terms, role))| {
            let theta0 = if i % 2 == 0 { 1.0 } else { 0.0 };
            TrialSpec::new(name, DriveFunction { kind, terms }, theta0, role)
        })
        .collect();
    TrialFile {
        system: PendulumCartParams::default(),
        trials,
    }
}

fn state(theta: f64, x: f64, thd: f64, xd: f64, thdd: f64, xdd: f64) -> GeneralizedState<f64> {
    GeneralizedState {
        q_f: vec![theta],
        q_e: vec![x],
        qd_f: vec![thd],
        qd_e: vec![xd],
        qdd_f: Some(vec![thdd]),
        qdd_e: vec![xdd],
    }
}

/// Builds a sample, deriving `T`, `V`, `E` from the oracle and, when not
/// given, `Q_x` from the equivalent-force relation.
#[allow(clippy::too_many_arguments)]
fn sample(
    oracle: &Oracle,
    trial_id: usize,
    t: f64,
    [theta, x, thd, xd, thdd, xdd]: [f64; 6],
    applied_q_x: Option<f64>,
) -> Result<TrajectorySample> {
    let terms = oracle.terms(&[theta, x])?;
    let s = state(theta, x, thd, xd, thdd, xdd);
    let q_x = match applied_q_x {
        Some(q) => q,
        None => equivalent_force(&s, &terms.mass, &terms.dv_dq)?[0],
    };
    let energy = energy_report(&s, &terms.mass, terms.v, &terms.dv_dq, &[0.0, q_x])?;
    Ok(TrajectorySample {
        trial_id,
        t,
        theta,
        x,
        theta_dot: thd,
        x_dot: xd,
        theta_ddot: thdd,
        x_ddot: xdd,
        q_theta: 0.0,
        q_x: Some(q_x),
        kinetic: energy.t,
        potential: energy.v,
        energy: energy.e,
    })
}

/// Integrates a position-driven trial, recording every accepted step.
pub fn integrate_trial(
    params: &PendulumCartParams,
    trial: &TrialSpec,
    trial_id: usize,
) -> Result<Vec<TrajectorySample>> {
    params.validate()?;
    trial.validate()?;
    if !trial.drive.is_position() {
        return Err(Error::Config(format!(
            "trial '{}' is force driven; use replay_force_driven",
            trial.name
        )));
    }
    let p = *params;
    let theta_ddot = |t: f64, theta: f64| -> f64 {
        let xdd = trial.drive.position(t)[2];
        -(p.g * theta.sin() + xdd * theta.cos()) / p.l
    };
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = theta_ddot(t, y[0]);
    };
    let steps = integrate(&mut rhs, 0.0, &[trial.theta0, 0.0], trial.duration, trial.tolerances())?;
    let oracle = Oracle::new(p);
    steps
        .into_iter()
        .map(|(t, y)| {
            let [x, xd, xdd] = trial.drive.position(t);
            sample(&oracle, trial_id, t, [y[0], x, y[1], xd, theta_ddot(t, y[0]), xdd], None)
        })
        .collect()
}

/// Integrates the cart under an applied force with both coordinates free,
/// then relabels the result as if the recorded cart motion had been
/// prescribed. The applied force becomes the `Q_x` ground truth.
pub fn replay_force_driven(
    params: &PendulumCartParams,
    trial: &TrialSpec,
    trial_id: usize,
) -> Result<Vec<TrajectorySample>> {
    params.validate()?;
    trial.validate()?;
    if trial.drive.is_position() {
        return Err(Error::Config(format!("trial '{}' is not force driven", trial.name)));
    }
    let p = *params;
    let accel = |t: f64, y: &[f64]| -> Vec<f64> {
        let terms = p.terms_all_free(y[0]);
        let s = GeneralizedState {
            q_f: vec![y[0], y[1]],
            q_e: vec![],
            qd_f: vec![y[2], y[3]],
            qd_e: vec![],
            qdd_f: None,
            qdd_e: vec![],
        };
        forward_dynamics_unchecked(&s, &terms.mass, &terms.dv_dq, &[0.0, trial.drive.force(t)])
            .expect("shapes are fixed")
    };
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let a = accel(t, y);
        dy[0] = y[2];
        dy[1] = y[3];
        dy[2] = a[0];
        dy[3] = a[1];
    };
    let y0 = [trial.theta0, 0.0, 0.0, 0.0];
    let steps = integrate(&mut rhs, 0.0, &y0, trial.duration, trial.tolerances())?;
    let oracle = Oracle::new(p);
    steps
        .into_iter()
        .map(|(t, y)| {
            let a = accel(t, &y);
            let f = trial.drive.force(t);
            sample(&oracle, trial_id, t, [y[0], y[1], y[2], y[3], a[0], a[1]], Some(f))
        })
        .collect()
}

/// Runs whichever integration the drive kind calls for.
pub fn generate_trial(
    params: &PendulumCartParams,
    trial: &TrialSpec,
    trial_id: usize,
) -> Result<Vec<TrajectorySample>> {
    if trial.drive.is_position() {
        integrate_trial(params, trial, trial_id)
    } else {
        replay_force_driven(params, trial, trial_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{first_law_residual, inverse_dynamics};

    fn stationary(theta0: f64, duration: f64) -> TrialSpec {
        let mut t = TrialSpec::new("s", DriveFunction::stationary(), theta0, Role::Train);
        t.duration = duration;
        t
    }

    #[test]
    fn equilibrium_stays_put() {
        let p = PendulumCartParams::default();
        let s = integrate_trial(&p, &stationary(0.0, 5.0), 0).unwrap();
        assert!(s.iter().all(|r| r.theta == 0.0 && r.x == 0.0));
        assert!(s.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn small_angle_period() {
        let p = PendulumCartParams::default();
        let s = integrate_trial(&p, &stationary(0.01, 10.0), 0).unwrap();
        // Downward zero crossings of θ̇ mark successive maxima.
        let mut peaks = Vec::new();
        for w in s.windows(2) {
            if w[0].theta_dot > 0.0 && w[1].theta_dot <= 0.0 {
                let f = w[0].theta_dot / (w[0].theta_dot - w[1].theta_dot);
                peaks.push(w[0].t + f * (w[1].t - w[0].t));
            }
        }
        let period = (peaks[peaks.len() - 1] - peaks[0]) / (peaks.len() - 1) as f64;
        let expected = 2.0 * std::f64::consts::PI * (1.5_f64 / 9.8).sqrt();
        assert!((expected - 2.458).abs() < 1e-3);
        assert!((period / expected - 1.0).abs() < 0.01, "period {period}");
    }

    #[test]
    fn large_swing_conserves_energy() {
        let p = PendulumCartParams::default();
        let s = integrate_trial(&p, &stationary(1.0, 20.0), 0).unwrap();
        let e0 = s[0].energy;
        let worst = s.iter().map(|r| (r.energy - e0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn driven_samples_are_self_consistent() {
        let p = PendulumCartParams::default();
        let oracle = Oracle::new(p);
        let file = default_trials();
        for (id, trial) in file.trials.iter().enumerate().filter(|(i, _)| [2, 8].contains(i)) {
            let mut trial = trial.clone();
            trial.duration = 4.0;
            for r in generate_trial(&p, &trial, id).unwrap() {
                let terms = oracle.terms(&[r.theta, r.x]).unwrap();
                let s = state(r.theta, r.x, r.theta_dot, r.x_dot, r.theta_ddot, r.x_ddot);
                let q_f = inverse_dynamics(&s, &terms.mass, &terms.dv_dq).unwrap()[0];
                assert!(q_f.abs() < 1e-9, "Q_theta {q_f}");
                let q_x = r.q_x.unwrap();
                let rep = energy_report(&s, &terms.mass, terms.v, &terms.dv_dq, &[0.0, q_x]).unwrap();
                assert!(first_law_residual(&rep).abs() < 1e-9 * (1.0 + rep.e_dot.abs()));
                // Replay fidelity: the equivalent force reproduces the applied one.
                let q_e = equivalent_force(&s, &terms.mass, &terms.dv_dq).unwrap()[0];
                assert!((q_e - q_x).abs() < 1e-6);
                // Ė = ẋ·Q_x
                assert!((rep.e_dot - r.x_dot * q_x).abs() <= 1e-8 * (1.0 + rep.e_dot.abs()));
            }
        }
    }

    #[test]
    fn unforced_replay_stays_at_rest() {
        let p = PendulumCartParams::default();
        let drive = DriveFunction::new(DriveKind::ForceDriven, vec![DriveTerm::new(0.0, 1.0)]).unwrap();
        let mut trial = TrialSpec::new("rest", drive, 0.0, Role::Train);
        trial.duration = 3.0;
        let s = replay_force_driven(&p, &trial, 0).unwrap();
        assert!(s.iter().all(|r| r.x == 0.0 && r.theta == 0.0));
    }

    #[test]
    fn pinned_pendulum_moves_with_total_mass() {
        // A very stiff pendulum keeps θ near zero, so the cart and bob move
        // together: x(t) → ½ · Q_x/(m₁+m₂) · t².
        let p = PendulumCartParams { g: 1e5, ..Default::default() };
        let drive = DriveFunction::new(DriveKind::ForceDriven, vec![DriveTerm::new(0.58, 0.0)]).unwrap();
        let mut trial = TrialSpec::new("push", drive, 0.0, Role::Train);
        trial.duration = 1.0;
        trial.rtol = 1e-8;
        trial.atol = 1e-8;
        let s = replay_force_driven(&p, &trial, 0).unwrap();
        let last = s.last().unwrap();
        assert!(last.theta.abs() < 1e-3);
        let mean_accel = 2.0 * last.x / (last.t * last.t);
        assert!((mean_accel - 1.0).abs() < 1e-3, "{mean_accel}");
    }

    #[test]
    fn default_file_round_trips_and_validates() {
        let file = default_trials();
        assert_eq!(file.trials.len(), 11);
        let n_train = file.trials.iter().filter(|t| t.role == Role::Train).count();
        assert_eq!(n_train, 6);
        assert_eq!(
            file.trials.iter().filter(|t| t.drive.kind == DriveKind::ForceDriven).count(),
            4
        );
        let parsed = parse_trial_file(&file.to_toml()).unwrap();
        assert_eq!(parsed, file);
    }

    #[test]
    fn bad_trial_file_is_config_error() {
        let text = "[[trial]]\nkind = \"cosine_sum\"\nterms = []\n";
        assert!(matches!(parse_trial_file(text), Err(Error::Config(_))));
        assert!(matches!(parse_trial_file("[[trial]]\nkind = \"warp\""), Err(Error::Config(_))));
    }

    #[test]
    fn wrong_integrator_for_kind() {
        let p = PendulumCartParams::default();
        assert!(replay_force_driven(&p, &stationary(0.0, 1.0), 0).is_err());
    }
}
