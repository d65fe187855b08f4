//! Lagrangian mechanics with externally specified coordinates.
//!
//! Coordinates are ordered `q = [q_f; q_e]`: `N_f` free coordinates whose
//! accelerations follow from the dynamics, then `N_e` coordinates whose
//! trajectory is imposed by a servomechanism. Every quantity is computed from
//! the mass matrix `M(q)`, its derivative `∂M/∂q`, the potential `V(q)` and
//! `∂V/∂q`, whoever supplies them (a trained network or an analytic model).
//!
//! All functions are generic over [`Real`], so the same arithmetic serves
//! numeric evaluation (`f64`) and differentiable training graphs.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{dot, ldlt, ldlt_solve, sum_or_zero, Real, SquareMatrix};

/// One sample of partitioned coordinates, velocities and accelerations.
///
/// `qdd_f` is absent for forward-dynamics queries.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedState<T> {
    pub q_f: Vec<T>,
    pub q_e: Vec<T>,
    pub qd_f: Vec<T>,
    pub qd_e: Vec<T>,
    pub qdd_f: Option<Vec<T>>,
    pub qdd_e: Vec<T>,
}

impl<T: Copy> GeneralizedState<T> {
    pub fn n_free(&self) -> usize {
        self.q_f.len()
    }

    pub fn n_external(&self) -> usize {
        self.q_e.len()
    }

    pub fn q(&self) -> Vec<T> {
        concat(&self.q_f, &self.q_e)
    }

    pub fn qd(&self) -> Vec<T> {
        concat(&self.qd_f, &self.qd_e)
    }

    pub fn qdd(&self) -> Option<Vec<T>> {
        self.qdd_f.as_ref().map(|f| concat(f, &self.qdd_e))
    }

    fn require_qdd_f(&self) -> Result<&[T]> {
        self.qdd_f
            .as_deref()
            .ok_or_else(|| Error::Usage("free accelerations are required".into()))
    }

    fn validate(&self) -> Result<()> {
        let (nf, ne) = (self.n_free(), self.n_external());
        let ok = self.qd_f.len() == nf
            && self.qd_e.len() == ne
            && self.qdd_e.len() == ne
            && self.qdd_f.as_ref().map_or(true, |a| a.len() == nf);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "state vectors inconsistent with N_f={nf}, N_e={ne}"
            )))
        }
    }
}

impl GeneralizedState<f64> {
    pub fn is_finite(&self) -> bool {
        let all = |v: &[f64]| v.iter().all(|x| x.is_finite());
        all(&self.q_f)
            && all(&self.q_e)
            && all(&self.qd_f)
            && all(&self.qd_e)
            && all(&self.qdd_e)
            && self.qdd_f.as_deref().map_or(true, all)
    }
}

fn concat<T: Copy>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().chain(b).copied().collect()
}

/// Mass matrix with its configuration derivative, partitioned at `n_free`.
///
/// `dm_dq[k]` holds `∂M/∂q_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedMass<T> {
    n_free: usize,
    m: SquareMatrix<T>,
    dm_dq: Vec<SquareMatrix<T>>,
}

impl<T: Copy> PartitionedMass<T> {
    pub fn new(n_free: usize, m: SquareMatrix<T>, dm_dq: Vec<SquareMatrix<T>>) -> Result<Self> {
        let n = m.dim();
        if n_free == 0 || n_free > n {
            return Err(Error::Shape(format!("n_free={n_free} with N={n}")));
        }
        if dm_dq.len() != n || dm_dq.iter().any(|d| d.dim() != n) {
            return Err(Error::Shape("dM/dq must hold N slices of N×N".into()));
        }
        Ok(Self { n_free, m, dm_dq })
    }

    pub fn n(&self) -> usize {
        self.m.dim()
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_external(&self) -> usize {
        self.n() - self.n_free
    }

    pub fn m(&self) -> &SquareMatrix<T> {
        &self.m
    }

    pub fn dm_dq(&self) -> &[SquareMatrix<T>] {
        &self.dm_dq
    }

    pub fn free(&self) -> Range<usize> {
        0..self.n_free
    }

    pub fn external(&self) -> Range<usize> {
        self.n_free..self.n()
    }

    fn range(&self, p: Partition) -> Range<usize> {
        match p {
            Partition::Free => self.free(),
            Partition::External => self.external(),
        }
    }

    fn block(&self, rows: Range<usize>, cols: Range<usize>) -> Vec<Vec<T>> {
        rows.map(|i| cols.clone().map(|j| self.m.get(i, j)).collect())
            .collect()
    }

    pub fn m_ff(&self) -> Vec<Vec<T>> {
        self.block(self.free(), self.free())
    }

    pub fn m_fe(&self) -> Vec<Vec<T>> {
        self.block(self.free(), self.external())
    }

    pub fn m_ef(&self) -> Vec<Vec<T>> {
        self.block(self.external(), self.free())
    }

    pub fn m_ee(&self) -> Vec<Vec<T>> {
        self.block(self.external(), self.external())
    }
}

/// Which block of coordinates a partitioned quantity refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Free,
    External,
}

impl Partition {
    fn other(self) -> Self {
        match self {
            Partition::Free => Partition::External,
            Partition::External => Partition::Free,
        }
    }
}

/// Mass matrix, potential and their configuration derivatives at one `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanicalTerms<T> {
    pub mass: PartitionedMass<T>,
    pub v: T,
    pub dv_dq: Vec<T>,
}

/// Anything that can supply [`MechanicalTerms`] for a configuration.
pub trait MechanicsProvider {
    fn n_free(&self) -> usize;
    fn n_external(&self) -> usize;
    fn terms(&self, q: &[f64]) -> Result<MechanicalTerms<f64>>;

    fn terms_batch(&self, qs: &[Vec<f64>]) -> Result<Vec<MechanicalTerms<f64>>> {
        qs.iter().map(|q| self.terms(q)).collect()
    }
}

/// `Ṁ_ij = Σ_k ∂M_ij/∂q_k · q̇_k`
pub fn mass_time_derivative<T: Real>(dm_dq: &[SquareMatrix<T>], qd: &[T]) -> SquareMatrix<T> {
    let n = qd.len();
    SquareMatrix::from_fn(n, |i, j| {
        sum_or_zero((0..n).map(|k| dm_dq[k].get(i, j) * qd[k]), qd[0])
    })
}

/// `T = ½ q̇ᵀ M q̇`
pub fn kinetic_energy<T: Real>(m: &SquareMatrix<T>, qd: &[T]) -> T {
    m.quadratic_form(qd, qd, qd[0]) * 0.5
}

/// `(½ q̇ᵀ ∂M/∂q q̇)_k = ½ Σ_ij q̇_i ∂M_ij/∂q_k q̇_j` for every `k`.
pub fn velocity_quadratic<T: Real>(dm_dq: &[SquareMatrix<T>], qd: &[T]) -> Vec<T> {
    dm_dq
        .iter()
        .map(|d| d.quadratic_form(qd, qd, qd[0]) * 0.5)
        .collect()
}

/// Combined centrifugal and Coriolis force on one partition `P`:
/// `Ṁ_PP q̇_P + Ṁ_PO q̇_O − ½ [q̇ᵀ ∂M/∂q q̇]_P` (`O` the other partition).
pub fn centrifugal_coriolis<T: Real>(
    mass: &PartitionedMass<T>,
    m_dot: &SquareMatrix<T>,
    qd: &[T],
    partition: Partition,
) -> Vec<T> {
    let quad = velocity_quadratic(mass.dm_dq(), qd);
    centrifugal_coriolis_with(mass, m_dot, &quad, qd, partition)
}

fn centrifugal_coriolis_with<T: Real>(
    mass: &PartitionedMass<T>,
    m_dot: &SquareMatrix<T>,
    quad: &[T],
    qd: &[T],
    partition: Partition,
) -> Vec<T> {
    let own = mass.range(partition);
    let other = mass.range(partition.other());
    let like = qd[0];
    let a = m_dot.block_mul(own.clone(), own.clone(), &qd[own.clone()], like);
    let b = m_dot.block_mul(own.clone(), other.clone(), &qd[other], like);
    own.enumerate()
        .map(|(r, k)| a[r] + b[r] - quad[k])
        .collect()
}

/// Inertial, centrifugal/Coriolis and conservative contributions to the
/// generalized force of one partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceComponents<T> {
    /// `M_PP q̈_P` (`Q_ff,m` or `Q_ee,m`).
    pub inertial_own: Vec<T>,
    /// `M_PO q̈_O` (`Q_fe,m` or `Q_ef,m`).
    pub inertial_cross: Vec<T>,
    /// `Q_f,c` or `Q_e,c`.
    pub centrifugal_coriolis: Vec<T>,
    /// `∂V/∂q_P` (`Q_f,g` or `Q_e,g`).
    pub conservative: Vec<T>,
}

impl<T: Real> ForceComponents<T> {
    /// Sum of the four components, in the order used by the dynamics.
    pub fn total(&self) -> Vec<T> {
        (0..self.conservative.len())
            .map(|i| {
                self.inertial_own[i]
                    + self.inertial_cross[i]
                    + self.centrifugal_coriolis[i]
                    + self.conservative[i]
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForceDecomposition<T> {
    pub free: ForceComponents<T>,
    pub external: ForceComponents<T>,
}

/// Shared intermediate terms of one state.
struct Kinematics<T> {
    qd: Vec<T>,
    m_dot: SquareMatrix<T>,
    quad: Vec<T>,
}

fn kinematics<T: Real>(state: &GeneralizedState<T>, mass: &PartitionedMass<T>) -> Result<Kinematics<T>> {
    state.validate()?;
    if state.n_free() != mass.n_free() || state.n_external() != mass.n_external() {
        return Err(Error::Shape(format!(
            "state has N_f={}, N_e={} but mass matrix has N_f={}, N_e={}",
            state.n_free(),
            state.n_external(),
            mass.n_free(),
            mass.n_external()
        )));
    }
    let qd = state.qd();
    let m_dot = mass_time_derivative(mass.dm_dq(), &qd);
    let quad = velocity_quadratic(mass.dm_dq(), &qd);
    Ok(Kinematics { qd, m_dot, quad })
}

fn check_dv<T>(mass: &PartitionedMass<T>, dv_dq: &[T]) -> Result<()>
where
    T: Copy,
{
    if dv_dq.len() == mass.n() {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "dV/dq has length {} but N={}",
            dv_dq.len(),
            mass.n()
        )))
    }
}

fn components<T: Real>(
    state: &GeneralizedState<T>,
    mass: &PartitionedMass<T>,
    dv_dq: &[T],
    kin: &Kinematics<T>,
    qdd_f: &[T],
    partition: Partition,
) -> ForceComponents<T> {
    let like = kin.qd[0];
    let (own, other) = (mass.range(partition), mass.range(partition.other()));
    let (acc_own, acc_other) = match partition {
        Partition::Free => (qdd_f, state.qdd_e.as_slice()),
        Partition::External => (state.qdd_e.as_slice(), qdd_f),
    };
    ForceComponents {
        inertial_own: mass.m().block_mul(own.clone(), own.clone(), acc_own, like),
        inertial_cross: mass.m().block_mul(own.clone(), other, acc_other, like),
        centrifugal_coriolis: centrifugal_coriolis_with(mass, &kin.m_dot, &kin.quad, &kin.qd, partition),
        conservative: dv_dq[own].to_vec(),
    }
}

/// Both partitions of the force decomposition at a fully specified state.
pub fn force_decomposition<T: Real>(
    state: &GeneralizedState<T>,
    mass: &PartitionedMass<T>,
    dv_dq: &[T],
) -> Result<ForceDecomposition<T>> {
    check_dv(mass, dv_dq)?;
    let kin = kinematics(state, mass)?;
    let qdd_f = state.require_qdd_f()?;
    Ok(ForceDecomposition {
        free: components(state, mass, dv_dq, &kin, qdd_f, Partition::Free),
        external: components(state, mass, dv_dq, &kin, qdd_f, Partition::External),
    })
}

/// `Q_f = M_ff q̈_f + M_fe q̈_e + Q_f,c + ∂V/∂q_f`
pub fn inverse_dynamics<T: Real>(
    state: &GeneralizedState<T>,
    mass: &PartitionedMass<T>,
    dv_dq: &[T],
) -> Result<Vec<T>> {
    check_dv(mass, dv_dq)?;
    let kin = kinematics(state, mass)?;
    let qdd_f = state.require_qdd_f()?;
    Ok(components(state, mass, dv_dq, &kin, qdd_f, Partition::Free).total())
}

/// Equivalent force the servomechanisms exert:
/// `Q_e = M_ee q̈_e + M_ef q̈_f + Ṁ_ee q̇_e + Ṁ_ef q̇_f − ½[q̇ᵀ ∂M/∂q_e q̇] + ∂V/∂q_e`
pub fn equivalent_force<T: Real>(
    state: &GeneralizedState<T>,
    mass: &PartitionedMass<T>,
    dv_dq: &[T],
) -> Result<Vec<T>> {
    check_dv(mass, dv_dq)?;
    let kin = kinematics(state, mass)?;
    let qdd_f = state.require_qdd_f()?;
    Ok(components(state, mass, dv_dq, &kin, qdd_f, Partition::External).total())
}

/// Unpartitioned `Q' = M q̈ + Ṁ q̇ − ½ q̇ᵀ ∂M/∂q q̇ + ∂V/∂q`.
pub fn extended_force<T: Real>(
    state: &GeneralizedState<T>,
    mass: &PartitionedMass<T>,
    dv_dq: &[T],
) -> Result<Vec<T>> {
    check_dv(mass, dv_dq)?;
    let kin = kinematics(state, mass)?;
    let qdd = state.qdd().ok_or_else(|| Error::Usage("free accelerations are required".into()))?;
    let like = kin.qd[0];
    let inertial = mass.m().mul_vec(&qdd, like);
    let coriolis = kin.m_dot.mul_vec(&kin.qd, like);
    Ok((0..mass.n())
        .map(|k| inertial[k] + coriolis[k] - kin.quad[k] + dv_dq[k])
        .collect())
}

/// `q̈_f = M_ff⁻¹ (Q_f − Q_fe,m − Q_f,c − Q_f,g)` without singularity checks.
///
/// Solved with a square-root-free Cholesky factorization of `M_ff`, so it
/// also runs on graph scalars. `state.qdd_f` is ignored.
pub fn forward_dynamics_unchecked<T: Real>(
    state: &GeneralizedState<T>,
    mass: &PartitionedMass<T>,
    dv_dq: &[T],
    q_f: &[T],
) -> Result<Vec<T>> {
    Ok(forward_parts(state, mass, dv_dq, q_f)?.solve())
}

struct ForwardParts<T> {
    l: SquareMatrix<T>,
    d: Vec<T>,
    rhs: Vec<T>,
}

impl<T: Real> ForwardParts<T> {
    fn solve(&self) -> Vec<T> {
        ldlt_solve(&self.l, &self.d, &self.rhs)
    }
}

fn forward_parts<T: Real>(
    state: &GeneralizedState<T>,
    mass: &PartitionedMass<T>,
    dv_dq: &[T],
    q_f: &[T],
) -> Result<ForwardParts<T>> {
    check_dv(mass, dv_dq)?;
    if q_f.len() != mass.n_free() {
        return Err(Error::Shape(format!(
            "Q_f has length {} but N_f={}",
            q_f.len(),
            mass.n_free()
        )));
    }
    let kin = kinematics(state, mass)?;
    let like = kin.qd[0];
    let (free, ext) = (mass.free(), mass.external());
    let cross = mass.m().block_mul(free.clone(), ext, &state.qdd_e, like);
    let coriolis = centrifugal_coriolis_with(mass, &kin.m_dot, &kin.quad, &kin.qd, Partition::Free);
    let rhs: Vec<T> = free
        .clone()
        .map(|i| q_f[i] - cross[i] - coriolis[i] - dv_dq[i])
        .collect();
    let m_ff = SquareMatrix::from_fn(free.len(), |i, j| mass.m().get(i, j));
    let (l, d) = ldlt(&m_ff);
    Ok(ForwardParts { l, d, rhs })
}

/// Forward dynamics with a check that `M_ff` is positive definite.
pub fn forward_dynamics(
    state: &GeneralizedState<f64>,
    mass: &PartitionedMass<f64>,
    dv_dq: &[f64],
    q_f: &[f64],
) -> Result<Vec<f64>> {
    let parts = forward_parts(state, mass, dv_dq, q_f)?;
    let max = parts.d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = parts.d.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if !(min > f64::EPSILON * max.max(f64::MIN_POSITIVE)) {
        return Err(Error::Numerical(format!(
            "M_ff is singular or indefinite (pivot ratio estimate {:.3e})",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    Ok(parts.solve())
}

/// Energies, their rates, and work rates of one state.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport<T> {
    pub t: T,
    pub v: T,
    pub e: T,
    pub t_dot: T,
    pub v_dot: T,
    pub e_dot: T,
    /// Work rate per coordinate, `q̇ ⊙ Q`.
    pub w_dot: Vec<T>,
    pub w_dot_total: T,
}

/// Energy bookkeeping given the full generalized force `q_full = [Q_f; Q_e]`.
///
/// `Ṫ = q̇ᵀ(M q̈ + Ṁ q̇ − ½ q̇ᵀ ∂M/∂q q̇)`, `V̇ = ∂V/∂qᵀ q̇`.
pub fn energy_report<T: Real>(
    state: &GeneralizedState<T>,
    mass: &PartitionedMass<T>,
    v: T,
    dv_dq: &[T],
    q_full: &[T],
) -> Result<EnergyReport<T>> {
    check_dv(mass, dv_dq)?;
    if q_full.len() != mass.n() {
        return Err(Error::Shape(format!(
            "Q has length {} but N={}",
            q_full.len(),
            mass.n()
        )));
    }
    let kin = kinematics(state, mass)?;
    let qdd = state.qdd().ok_or_else(|| Error::Usage("free accelerations are required".into()))?;
    let like = kin.qd[0];
    let inertial = mass.m().mul_vec(&qdd, like);
    let coriolis = kin.m_dot.mul_vec(&kin.qd, like);
    let bracket: Vec<T> = (0..mass.n())
        .map(|k| inertial[k] + coriolis[k] - kin.quad[k])
        .collect();
    let t = kinetic_energy(mass.m(), &kin.qd);
    let t_dot = dot(&kin.qd, &bracket, like);
    let v_dot = dot(dv_dq, &kin.qd, like);
    let w_dot: Vec<T> = kin.qd.iter().zip(q_full).map(|(&a, &b)| a * b).collect();
    let w_dot_total = dot(&kin.qd, q_full, like);
    Ok(EnergyReport {
        t,
        v,
        e: t + v,
        t_dot,
        v_dot,
        e_dot: t_dot + v_dot,
        w_dot,
        w_dot_total,
    })
}

/// `Ṫ = q̇ᵀ M q̈ + ½ q̇ᵀ Ṁ q̇`, the product-rule form of the kinetic energy rate.
pub fn kinetic_energy_rate_product_form<T: Real>(
    state: &GeneralizedState<T>,
    mass: &PartitionedMass<T>,
) -> Result<T> {
    let kin = kinematics(state, mass)?;
    let qdd = state.qdd().ok_or_else(|| Error::Usage("free accelerations are required".into()))?;
    let like = kin.qd[0];
    Ok(mass.m().quadratic_form(&kin.qd, &qdd, like)
        + kin.m_dot.quadratic_form(&kin.qd, &kin.qd, like) * 0.5)
}

/// `Ė − Ẇ_total`; zero (to roundoff) when `Q_e` is the equivalent force.
pub fn first_law_residual<T: Real>(report: &EnergyReport<T>) -> T {
    report.e_dot - report.w_dot_total
}

/// Everything the model predicts for one sample: forward and inverse
/// dynamics, the equivalent force, force decomposition and energetics.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsReport {
    /// Inverse dynamics `Q̂_f` at the measured accelerations.
    pub q_f: Vec<f64>,
    /// Forward dynamics `q̈̂_f` from the measured `Q_f`.
    pub qdd_f: Vec<f64>,
    pub q_e: Vec<f64>,
    pub forces: ForceDecomposition<f64>,
    pub energy: EnergyReport<f64>,
    pub mass: PartitionedMass<f64>,
    pub dv_dq: Vec<f64>,
}

/// Evaluates every output for a fully measured `state` with applied free
/// forces `q_f_applied`. Work rates use the predicted `[Q̂_f; Q̂_e]`.
pub fn analyze(
    terms: &MechanicalTerms<f64>,
    state: &GeneralizedState<f64>,
    q_f_applied: &[f64],
) -> Result<DynamicsReport> {
    let forces = force_decomposition(state, &terms.mass, &terms.dv_dq)?;
    let q_f = forces.free.total();
    let q_e = forces.external.total();
    let qdd_f = forward_dynamics(state, &terms.mass, &terms.dv_dq, q_f_applied)?;
    let q_full: Vec<f64> = q_f.iter().chain(&q_e).copied().collect();
    let energy = energy_report(state, &terms.mass, terms.v, &terms.dv_dq, &q_full)?;
    Ok(DynamicsReport {
        q_f,
        qdd_f,
        q_e,
        forces,
        energy,
        mass: terms.mass.clone(),
        dv_dq: terms.dv_dq.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    const M1: f64 = 0.45;
    const M2: f64 = 0.13;
    const LEN: f64 = 1.5;
    const G: f64 = 9.8;

    // Pendulum cart written out by hand: q = [theta, x].
    fn cart(theta: f64) -> (PartitionedMass<f64>, f64, Vec<f64>) {
        let m = Matrix::from_rows(&[
            vec![M2 * LEN * LEN, M2 * LEN * theta.cos()],
            vec![M2 * LEN * theta.cos(), M1 + M2],
        ])
        .unwrap();
        let dtheta = Matrix::from_rows(&[
            vec![0.0, -M2 * LEN * theta.sin()],
            vec![-M2 * LEN * theta.sin(), 0.0],
        ])
        .unwrap();
        let mass = PartitionedMass::new(1, m, vec![dtheta, Matrix::zeros(2)]).unwrap();
        let v = -M2 * G * LEN * theta.cos();
        (mass, v, vec![M2 * G * LEN * theta.sin(), 0.0])
    }

    fn state(theta: f64, x: f64, thd: f64, xd: f64, thdd: Option<f64>, xdd: f64) -> GeneralizedState<f64> {
        GeneralizedState {
            q_f: vec![theta],
            q_e: vec![x],
            qd_f: vec![thd],
            qd_e: vec![xd],
            qdd_f: thdd.map(|a| vec![a]),
            qdd_e: vec![xdd],
        }
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn mass_derivative_vanishes_for_constant_mass_or_rest() {
        let zero = vec![Matrix::zeros(2), Matrix::zeros(2)];
        let m_dot = mass_time_derivative(&zero, &[1.0, 2.0]);
        assert_eq!(m_dot, Matrix::zeros(2));
        let (mass, _, _) = cart(0.4);
        assert_eq!(mass_time_derivative(mass.dm_dq(), &[0.0, 0.0]), Matrix::zeros(2));
    }

    #[test]
    fn mass_derivative_of_cart() {
        let (mass, _, _) = cart(std::f64::consts::FRAC_PI_2);
        let m_dot = mass_time_derivative(mass.dm_dq(), &[2.0, 0.0]);
        close(m_dot.get(0, 1), -0.39, 1e-15);
        close(m_dot.get(1, 0), -0.39, 1e-15);
    }

    #[test]
    fn kinetic_energy_examples() {
        let (mass, _, _) = cart(0.0);
        assert_eq!(kinetic_energy(mass.m(), &[0.0, 0.0]), 0.0);
        close(kinetic_energy(mass.m(), &[0.0, 1.0]), 0.29, 1e-15);
        close(kinetic_energy(mass.m(), &[1.0, 0.0]), 0.14625, 1e-15);
    }

    #[test]
    fn centrifugal_examples() {
        let (mass, _, _) = cart(std::f64::consts::FRAC_PI_2);
        let qd = [1.0, 0.0];
        let m_dot = mass_time_derivative(mass.dm_dq(), &qd);
        let ext = centrifugal_coriolis(&mass, &m_dot, &qd, Partition::External);
        close(ext[0], -0.195, 1e-15);
        let zero = centrifugal_coriolis(&mass, &m_dot, &[0.0, 0.0], Partition::Free);
        assert_eq!(zero, vec![0.0]);
        let constant = PartitionedMass::new(1, Matrix::identity(2), vec![Matrix::zeros(2); 2]).unwrap();
        let c = centrifugal_coriolis(&constant, &Matrix::zeros(2), &[3.0, -1.0], Partition::Free);
        assert_eq!(c, vec![0.0]);
    }

    #[test]
    fn inverse_dynamics_examples() {
        let unit = PartitionedMass::new(1, Matrix::identity(2), vec![Matrix::zeros(2); 2]).unwrap();
        let s = state(0.3, 0.2, 0.5, -0.1, Some(1.7), 0.0);
        assert_eq!(inverse_dynamics(&s, &unit, &[0.0, 0.0]).unwrap(), vec![1.7]);

        let (mass, _, dv) = cart(0.0);
        let s = state(0.0, 0.0, 0.0, 0.0, Some(-1.0 / LEN), 1.0);
        close(inverse_dynamics(&s, &mass, &dv).unwrap()[0], 0.0, 1e-12);

        let (mass, _, dv) = cart(0.1);
        let s = state(0.1, 0.0, 0.0, 0.0, Some(0.0), 0.0);
        close(inverse_dynamics(&s, &mass, &dv).unwrap()[0], M2 * G * LEN * 0.1_f64.sin(), 1e-15);
        close(M2 * G * LEN * 0.1_f64.sin(), 0.19077, 2e-5);
    }

    #[test]
    fn forward_dynamics_examples() {
        let (mass, _, dv) = cart(0.0);
        let s = state(0.0, 0.0, 0.0, 0.0, None, 1.0);
        close(forward_dynamics(&s, &mass, &dv, &[0.0]).unwrap()[0], -0.666_666_666_666_666_6, 1e-15);
        let s = state(0.0, 0.0, 0.0, 1.3, None, 0.0);
        assert_eq!(forward_dynamics(&s, &mass, &dv, &[0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn forward_dynamics_rejects_singular_block() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mass = PartitionedMass::new(1, m, vec![Matrix::zeros(2); 2]).unwrap();
        let s = state(0.0, 0.0, 0.0, 0.0, None, 0.0);
        assert!(matches!(
            forward_dynamics(&s, &mass, &[0.0, 0.0], &[1.0]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn decomposition_examples() {
        let (mass, _, dv) = cart(0.0);
        let thdd = -1.0 / LEN;
        let s = state(0.0, 0.0, 0.0, 0.0, Some(thdd), 1.0);
        let f = force_decomposition(&s, &mass, &dv).unwrap();
        close(f.free.inertial_own[0], M2 * LEN * LEN * thdd, 1e-15);
        close(f.free.inertial_own[0], -0.195, 1e-15);
        close(f.free.inertial_cross[0], 0.195, 1e-15);
        assert_eq!(f.free.centrifugal_coriolis[0], 0.0);
        assert_eq!(f.free.conservative[0], 0.0);
        assert_eq!(f.free.total(), inverse_dynamics(&s, &mass, &dv).unwrap());

        let (mass, _, dv) = cart(0.7);
        let s = state(0.7, 0.0, 0.0, 0.0, Some(0.0), 0.0);
        let f = force_decomposition(&s, &mass, &dv).unwrap();
        for c in [&f.free, &f.external] {
            assert!(c.inertial_own.iter().chain(&c.inertial_cross).chain(&c.centrifugal_coriolis).all(|v| *v == 0.0));
        }
        assert!(f.free.conservative[0] != 0.0);
    }

    #[test]
    fn equivalent_force_examples() {
        let (mass, _, dv) = cart(0.0);
        let s = state(0.0, 0.0, 0.0, 0.0, Some(0.0), 0.0);
        assert_eq!(equivalent_force(&s, &mass, &dv).unwrap(), vec![0.0]);

        let s = state(0.0, 0.0, 0.0, 0.0, Some(-1.0 / LEN), 1.0);
        close(equivalent_force(&s, &mass, &dv).unwrap()[0], 0.45, 1e-15);

        let half_pi = std::f64::consts::FRAC_PI_2;
        let (mass, _, dv) = cart(half_pi);
        let s = state(half_pi, 0.0, 1.0, 0.0, Some(-G / LEN), 0.0);
        close(equivalent_force(&s, &mass, &dv).unwrap()[0], -0.195, 1e-15);
    }

    #[test]
    fn first_law_examples() {
        let (mass, v, dv) = cart(0.3);
        let s = state(0.3, 0.1, 0.0, 0.0, Some(0.2), 0.5);
        let q_f = inverse_dynamics(&s, &mass, &dv).unwrap();
        let q_e = equivalent_force(&s, &mass, &dv).unwrap();
        let r = energy_report(&s, &mass, v, &dv, &[q_f[0], q_e[0]]).unwrap();
        assert_eq!(first_law_residual(&r), 0.0);
        assert_eq!((r.t_dot, r.v_dot, r.e_dot), (0.0, 0.0, 0.0));

        // Free swing, moving cart: residual vanishes; a +1 N error on Q_e
        // with unit cart speed shows up as −1 W.
        let s = state(0.3, 0.1, 0.8, 1.0, None, 0.5);
        let qdd = forward_dynamics(&s, &mass, &dv, &[0.0]).unwrap();
        let s = GeneralizedState { qdd_f: Some(qdd), ..s };
        let q_e = equivalent_force(&s, &mass, &dv).unwrap();
        let r = energy_report(&s, &mass, v, &dv, &[0.0, q_e[0]]).unwrap();
        assert!(first_law_residual(&r).abs() < 1e-12);
        let r = energy_report(&s, &mass, v, &dv, &[0.0, q_e[0] + 1.0]).unwrap();
        close(first_law_residual(&r), -1.0, 1e-12);
    }

    #[test]
    fn potential_difference_of_cart() {
        let (_, v0, _) = cart(0.0);
        let (_, v1, _) = cart(std::f64::consts::FRAC_PI_2);
        close(v1 - v0, 1.911, 1e-12);
    }

    #[test]
    fn shape_errors() {
        let (mass, _, dv) = cart(0.0);
        let mut s = state(0.0, 0.0, 0.0, 0.0, Some(0.0), 0.0);
        s.qd_e.push(1.0);
        assert!(matches!(inverse_dynamics(&s, &mass, &dv), Err(Error::Shape(_))));
        let s = state(0.0, 0.0, 0.0, 0.0, None, 0.0);
        assert!(matches!(inverse_dynamics(&s, &mass, &dv), Err(Error::Usage(_))));
        assert!(PartitionedMass::new(0, Matrix::identity(2), vec![Matrix::zeros(2); 2]).is_err());
    }
}
