//! Identity checks that any correct pendulum-cart mechanics provider must
//! pass: dynamics round trips, energy bookkeeping, and agreement with the
//! simulated ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{
    energy_report, equivalent_force, extended_force, first_law_residual, forward_dynamics,
    inverse_dynamics, kinetic_energy, kinetic_energy_rate_product_form, GeneralizedState,
    MechanicsProvider,
};
use crate::error::Result;
use crate::simulator::{integrate_trial, DriveFunction, PendulumCartParams, Role, TrialSpec};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    /// Largest normalized violation seen.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &'static str, worst: f64, tolerance: f64) -> Self {
        Self {
            name,
            worst,
            tolerance,
            passed: worst < tolerance,
        }
    }
}

/// A random full state: `|θ| ≤ π`, `|x| ≤ 2`, `|θ̇| ≤ 3`, `|ẋ| ≤ 2`,
/// `|θ̈| ≤ 10`, `|ẍ| ≤ 3`.
pub fn random_state(rng: &mut impl Rng) -> GeneralizedState<f64> {
    use std::f64::consts::PI;
    GeneralizedState {
        q_f: vec![rng.gen_range(-PI..=PI)],
        q_e: vec![rng.gen_range(-2.0..=2.0)],
        qd_f: vec![rng.gen_range(-3.0..=3.0)],
        qd_e: vec![rng.gen_range(-2.0..=2.0)],
        qdd_f: Some(vec![rng.gen_range(-10.0..=10.0)]),
        qdd_e: vec![rng.gen_range(-3.0..=3.0)],
    }
}

/// Worst violations of the four algebraic identities over `count` random
/// states, in order: round trip, first law, extended force, `Ṫ` forms.
pub fn identity_checks(
    provider: &dyn MechanicsProvider,
    seed: u64,
    count: usize,
) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0_f64; 4];
    for _ in 0..count {
        let s = random_state(&mut rng);
        let t = provider.terms(&s.q())?;
        let q_f = inverse_dynamics(&s, &t.mass, &t.dv_dq)?;
        let q_e = equivalent_force(&s, &t.mass, &t.dv_dq)?;

        let qdd = forward_dynamics(&s, &t.mass, &t.dv_dq, &q_f)?;
        let want = s.qdd_f.as_ref().expect("random states carry q̈_f");
        for (a, b) in qdd.iter().zip(want) {
            worst[0] = worst[0].max((a - b).abs() / b.abs().max(1.0));
        }

        let q_full: Vec<f64> = q_f.iter().chain(&q_e).copied().collect();
        let rep = energy_report(&s, &t.mass, t.v, &t.dv_dq, &q_full)?;
        worst[1] = worst[1].max(first_law_residual(&rep).abs() / (1.0 + rep.e_dot.abs()));

        let ext = extended_force(&s, &t.mass, &t.dv_dq)?;
        for (a, b) in ext.iter().zip(&q_full) {
            worst[2] = worst[2].max((a - b).abs() / (1.0 + b.abs()));
        }

        let product = kinetic_energy_rate_product_form(&s, &t.mass)?;
        worst[3] = worst[3].max((product - rep.t_dot).abs() / (1.0 + rep.t_dot.abs()));
    }
    Ok(vec![
        CheckResult::new("forward-inverse round trip", worst[0], 1e-10),
        CheckResult::new("first law", worst[1], 1e-9),
        CheckResult::new("extended force partition", worst[2], 1e-12),
        CheckResult::new("kinetic energy rate forms", worst[3], 1e-12),
    ])
}

/// Compares the provider with a simulated free swing of the pendulum
/// (`θ(0) = 1`, stationary cart): the free force must vanish along the
/// trajectory and the provider's energy must stay constant.
pub fn trajectory_checks(
    provider: &dyn MechanicsProvider,
    params: &PendulumCartParams,
    duration: f64,
) -> Result<Vec<CheckResult>> {
    let mut trial = TrialSpec::new("swing", DriveFunction::stationary(), 1.0, Role::Test);
    trial.duration = duration;
    let samples = integrate_trial(params, &trial, 0)?;
    let mut free = 0.0_f64;
    let mut e0 = None;
    let mut drift = 0.0_f64;
    for s in &samples {
        let t = provider.terms(&s.q())?;
        let st = s.to_training().state;
        let q_f = inverse_dynamics(&st, &t.mass, &t.dv_dq)?;
        free = free.max(q_f[0].abs());
        let e = kinetic_energy(t.mass.m(), &st.qd()) + t.v;
        let e0 = *e0.get_or_insert(e);
        drift = drift.max((e - e0).abs());
    }
    Ok(vec![
        CheckResult::new("free swing needs no free force", free, 1e-9),
        CheckResult::new("energy conservation", drift, 1e-6),
    ])
}

/// The full suite with default sizes.
pub fn oracle_suite(
    provider: &dyn MechanicsProvider,
    params: &PendulumCartParams,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let mut out = identity_checks(provider, seed, 1000)?;
    out.extend(trajectory_checks(provider, params, 20.0)?);
    Ok(out)
}
