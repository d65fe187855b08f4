//! Losses and the ADAM training loop.
//!
//! The loss graph is recorded once per (network, loss) configuration and
//! evaluated on batches of any size: every per-sample quantity is a `B×1`
//! column and the batch mean enters through a bound `1/B` weight.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, DenseTensor, Graph, GraphBuilder, NodeId, Reduce, Var};
use crate::dynamics::{
    energy_report, equivalent_force, forward_dynamics, forward_dynamics_unchecked,
    inverse_dynamics, GeneralizedState, MechanicsProvider,
};
use crate::error::{Error, Result};
use crate::network::{build_network, NetworkConfig, NetworkParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    #[serde(alias = "true")]
    TruePower,
    #[serde(alias = "estimated")]
    EstimatedPower,
    Off,
}

impl std::str::FromStr for PowerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" | "true_power" => Ok(Self::TruePower),
            "estimated" | "estimated_power" => Ok(Self::EstimatedPower),
            "off" => Ok(Self::Off),
            other => Err(Error::Config(format!("unknown power mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub use_inverse: bool,
    pub use_forward: bool,
    pub power_mode: PowerMode,
    #[serde(default)]
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::for_data(true)
    }
}

impl LossConfig {
    /// All terms on, with the true power loss when `Q_e` is measured and the
    /// estimated one otherwise.
    pub fn for_data(has_q_e: bool) -> Self {
        Self {
            use_inverse: true,
            use_forward: true,
            power_mode: if has_q_e {
                PowerMode::TruePower
            } else {
                PowerMode::EstimatedPower
            },
            reduction: Reduction::Mean,
        }
    }

    pub fn validate(&self, has_q_e: bool) -> Result<()> {
        if !self.use_inverse && !self.use_forward {
            return Err(Error::Config(
                "at least one of the inverse and forward losses must be enabled".into(),
            ));
        }
        if self.power_mode == PowerMode::TruePower && !has_q_e {
            return Err(Error::Config(
                "the true power loss needs Q_e targets, which this dataset lacks".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub convergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            batch_size: 2048,
            epochs: 10000,
            seed: 0,
            convergence_threshold: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.convergence_threshold > 0.0
            && self.learning_rate.is_finite()
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training settings: {self:?}")))
        }
    }
}

/// One supervised sample: a full state with measured accelerations and the
/// applied free forces, plus the equivalent force when it was measured.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub state: GeneralizedState<f64>,
    pub q_f: Vec<f64>,
    pub q_e: Option<Vec<f64>>,
}

impl TrainingSample {
    fn qdd_f(&self) -> &[f64] {
        self.state.qdd_f.as_deref().expect("training samples carry q̈_f")
    }
}

/// Samples stacked into `B×k` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub q: DenseTensor,
    pub qd: DenseTensor,
    pub qdd: DenseTensor,
    pub q_f: DenseTensor,
    pub q_e: Option<DenseTensor>,
}

impl Batch {
    pub fn from_samples(samples: &[&TrainingSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Usage("empty batch".into()))?;
        let (nf, ne) = (first.state.n_free(), first.state.n_external());
        let has_q_e = first.q_e.is_some();
        let mut stacks = [vec![], vec![], vec![], vec![], vec![]];
        for s in samples {
            let qdd = s
                .state
                .qdd()
                .ok_or_else(|| Error::Usage("training samples need q̈_f".into()))?;
            if s.state.n_free() != nf || s.state.n_external() != ne || s.q_f.len() != nf {
                return Err(Error::Shape("batch mixes coordinate counts".into()));
            }
            if s.q_e.is_some() != has_q_e {
                return Err(Error::Usage("Q_e must be present in all samples or none".into()));
            }
            stacks[0].extend(s.state.q());
            stacks[1].extend(s.state.qd());
            stacks[2].extend(qdd);
            stacks[3].extend(&s.q_f);
            if let Some(q_e) = &s.q_e {
                if q_e.len() != ne {
                    return Err(Error::Shape("Q_e length differs from N_e".into()));
                }
                stacks[4].extend(q_e);
            }
        }
        let b = samples.len();
        let [q, qd, qdd, q_f, q_e] = stacks;
        Ok(Self {
            q: DenseTensor::new(b, nf + ne, q)?,
            qd: DenseTensor::new(b, nf + ne, qd)?,
            qdd: DenseTensor::new(b, nf + ne, qdd)?,
            q_f: DenseTensor::new(b, nf, q_f)?,
            q_e: if has_q_e {
                Some(DenseTensor::new(b, ne, q_e)?)
            } else {
                None
            },
        })
    }

    pub fn len(&self) -> usize {
        self.q.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn squared_norm_mean(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != target.len() || pred.iter().zip(target).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Shape("prediction and target shapes differ".into()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    Ok(total / pred.len() as f64)
}

/// Mean over samples of `‖Q̂_f − Q_f‖²`.
pub fn inverse_loss(predicted: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    squared_norm_mean(predicted, target)
}

/// Mean over samples of `‖q̈̂_f − q̈_f‖²`.
pub fn forward_loss(predicted: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    squared_norm_mean(predicted, target)
}

/// Mean of `(Ė̂ − q̇ᵀ[Q_f; Q_e])²`.
pub fn power_loss_true(
    e_dot: &[f64],
    qd: &[Vec<f64>],
    q_f: &[Vec<f64>],
    q_e: Option<&[Vec<f64>]>,
) -> Result<f64> {
    let q_e = q_e.ok_or_else(|| Error::Config("the true power loss needs Q_e".into()))?;
    if e_dot.len() != qd.len() || qd.len() != q_f.len() || q_f.len() != q_e.len() {
        return Err(Error::Shape("power loss inputs differ in length".into()));
    }
    if e_dot.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..e_dot.len() {
        let q: Vec<f64> = q_f[i].iter().chain(&q_e[i]).copied().collect();
        if q.len() != qd[i].len() {
            return Err(Error::Shape("q̇ and [Q_f; Q_e] differ in length".into()));
        }
        let work: f64 = qd[i].iter().zip(&q).map(|(a, b)| a * b).sum();
        total += (e_dot[i] - work).powi(2);
    }
    Ok(total / e_dot.len() as f64)
}

/// Reduced estimated power loss, mean of `(q̇_fᵀ(Q̂_f − Q_f))²`.
pub fn power_loss_estimated(
    q_f_hat: &[Vec<f64>],
    q_f: &[Vec<f64>],
    qd_f: &[Vec<f64>],
) -> Result<f64> {
    if q_f_hat.len() != q_f.len() || q_f.len() != qd_f.len() {
        return Err(Error::Shape("power loss inputs differ in length".into()));
    }
    if q_f.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = (0..q_f.len())
        .map(|i| {
            let r: f64 = (0..q_f[i].len())
                .map(|k| qd_f[i][k] * (q_f_hat[i][k] - q_f[i][k]))
                .sum();
            r * r
        })
        .sum();
    Ok(total / q_f.len() as f64)
}

/// Estimated power loss before cancellation:
/// mean of `(Ė̂ − q̇_fᵀQ_f − q̇_eᵀQ̂_e)²`, with `Q̂_e` standing in for the
/// unmeasured equivalent force.
pub fn power_loss_estimated_unreduced(
    e_dot: &[f64],
    q_e_hat: &[Vec<f64>],
    qd_f: &[Vec<f64>],
    qd_e: &[Vec<f64>],
    q_f: &[Vec<f64>],
) -> Result<f64> {
    let n = e_dot.len();
    if [q_e_hat.len(), qd_f.len(), qd_e.len(), q_f.len()].iter().any(|&l| l != n) {
        return Err(Error::Shape("power loss inputs differ in length".into()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let total: f64 = (0..n)
        .map(|i| (e_dot[i] - dot(&qd_f[i], &q_f[i]) - dot(&qd_e[i], &q_e_hat[i])).powi(2))
        .sum();
    Ok(total / n as f64)
}

/// Individual loss terms and their sum; disabled terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub inverse: f64,
    pub forward: f64,
    pub power: f64,
    pub q_e: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("L_inv", self.inverse),
            ("L_fwd", self.forward),
            ("L_power", self.power),
            ("L_Qe", self.q_e),
            ("total", self.total),
        ]
    }

    fn scaled_add(&mut self, other: &Self, w: f64) {
        self.inverse += w * other.inverse;
        self.forward += w * other.forward;
        self.power += w * other.power;
        self.q_e += w * other.q_e;
        self.total += w * other.total;
    }
}

/// Losses of any mechanics provider on a dataset, evaluated in `f64`.
pub fn evaluate_losses(
    provider: &dyn MechanicsProvider,
    samples: &[TrainingSample],
    config: &LossConfig,
) -> Result<LossBreakdown> {
    let has_q_e = samples.first().map_or(false, |s| s.q_e.is_some());
    config.validate(has_q_e)?;
    let qs: Vec<Vec<f64>> = samples.iter().map(|s| s.state.q()).collect();
    let terms = provider.terms_batch(&qs)?;
    let mut q_f_hat = Vec::new();
    let mut qdd_hat = Vec::new();
    let mut q_e_hat = Vec::new();
    let mut e_dot = Vec::new();
    for (s, t) in samples.iter().zip(&terms) {
        q_f_hat.push(inverse_dynamics(&s.state, &t.mass, &t.dv_dq)?);
        qdd_hat.push(forward_dynamics(&s.state, &t.mass, &t.dv_dq, &s.q_f)?);
        q_e_hat.push(equivalent_force(&s.state, &t.mass, &t.dv_dq)?);
        let zeros = vec![0.0; t.mass.n()];
        e_dot.push(energy_report(&s.state, &t.mass, t.v, &t.dv_dq, &zeros)?.e_dot);
    }
    let q_f: Vec<Vec<f64>> = samples.iter().map(|s| s.q_f.clone()).collect();
    let qdd: Vec<Vec<f64>> = samples.iter().map(|s| s.qdd_f().to_vec()).collect();
    let qd: Vec<Vec<f64>> = samples.iter().map(|s| s.state.qd()).collect();
    let qd_f: Vec<Vec<f64>> = samples.iter().map(|s| s.state.qd_f.clone()).collect();
    let q_e: Option<Vec<Vec<f64>>> = samples.iter().map(|s| s.q_e.clone()).collect();

    let mut out = LossBreakdown::default();
    if config.use_inverse {
        out.inverse = inverse_loss(&q_f_hat, &q_f)?;
    }
    if config.use_forward {
        out.forward = forward_loss(&qdd_hat, &qdd)?;
    }
    out.power = match config.power_mode {
        PowerMode::TruePower => power_loss_true(&e_dot, &qd, &q_f, q_e.as_deref())?,
        PowerMode::EstimatedPower => power_loss_estimated(&q_f_hat, &q_f, &qd_f)?,
        PowerMode::Off => 0.0,
    };
    if let Some(q_e) = &q_e {
        out.q_e = squared_norm_mean(&q_e_hat, q_e)?;
    }
    out.total = out.inverse + out.forward + out.power + out.q_e;
    Ok(out)
}

/// The recorded loss graph for one network and loss configuration.
#[derive(Clone, Debug)]
pub struct LossGraph {
    graph: Graph,
    net: NetworkConfig,
    loss: LossConfig,
    has_q_e: bool,
    q: NodeId,
    qd: NodeId,
    qdd: NodeId,
    q_f: NodeId,
    q_e: Option<NodeId>,
    weight: NodeId,
    params: Vec<NodeId>,
    /// inverse, forward, power, Q_e; `None` where disabled.
    terms: [Option<NodeId>; 4],
    total: NodeId,
}

fn cols<'g>(x: Var<'g>, range: std::ops::Range<usize>) -> Vec<Var<'g>> {
    range.map(|i| x.column(i)).collect()
}

fn mean_squares<'g>(residuals: &[Var<'g>], weight: Var<'g>) -> Var<'g> {
    let sq: Vec<Var> = residuals.iter().map(|r| r.square()).collect();
    let summed = sq[1..].iter().fold(sq[0], |a, &b| a + b);
    summed.sum(Reduce::All) * weight
}

impl LossGraph {
    pub fn new(net: &NetworkConfig, loss: &LossConfig, has_q_e: bool) -> Result<Self> {
        net.validate()?;
        loss.validate(has_q_e)?;
        let (nf, n) = (net.n_free, net.n());
        let b = GraphBuilder::new();
        let q = b.input("q");
        let qd = b.input("qd");
        let qdd = b.input("qdd");
        let q_f = b.input("Q_f");
        let q_e = has_q_e.then(|| b.input("Q_e"));
        let weight = b.input("1/B");
        let params: Vec<Var> = net.layout().iter().map(|(name, _)| b.parameter(name)).collect();

        let sym = build_network(net, q, &params)?;
        let mech = sym.mechanics(net);
        let state = GeneralizedState {
            q_f: cols(q, 0..nf),
            q_e: cols(q, nf..n),
            qd_f: cols(qd, 0..nf),
            qd_e: cols(qd, nf..n),
            qdd_f: Some(cols(qdd, 0..nf)),
            qdd_e: cols(qdd, nf..n),
        };
        let q_f_cols = cols(q_f, 0..nf);
        let q_e_cols = q_e.map(|x| cols(x, 0..n - nf));

        let q_f_hat = inverse_dynamics(&state, &mech.mass, &mech.dv_dq)?;
        let inv_res: Vec<Var> = q_f_hat.iter().zip(&q_f_cols).map(|(&a, &b)| a - b).collect();

        let inverse = loss.use_inverse.then(|| mean_squares(&inv_res, weight));
        let forward = if loss.use_forward {
            let qdd_hat = forward_dynamics_unchecked(&state, &mech.mass, &mech.dv_dq, &q_f_cols)?;
            let target = state.qdd_f.as_ref().expect("set above");
            let res: Vec<Var> = qdd_hat.iter().zip(target).map(|(&a, &b)| a - b).collect();
            Some(mean_squares(&res, weight))
        } else {
            None
        };
        let power = match loss.power_mode {
            PowerMode::TruePower => {
                let q_full: Vec<Var> = q_f_cols
                    .iter()
                    .chain(q_e_cols.as_ref().expect("validated"))
                    .copied()
                    .collect();
                let rep = energy_report(&state, &mech.mass, mech.v, &mech.dv_dq, &q_full)?;
                Some(mean_squares(&[rep.e_dot - rep.w_dot_total], weight))
            }
            PowerMode::EstimatedPower => {
                let r = inv_res
                    .iter()
                    .zip(&state.qd_f)
                    .map(|(&res, &v)| res * v)
                    .reduce(|a, b| a + b)
                    .expect("N_f ≥ 1");
                Some(mean_squares(&[r], weight))
            }
            PowerMode::Off => None,
        };
        let q_e_term = match &q_e_cols {
            Some(target) => {
                let q_e_hat = equivalent_force(&state, &mech.mass, &mech.dv_dq)?;
                let res: Vec<Var> = q_e_hat.iter().zip(target).map(|(&a, &b)| a - b).collect();
                (!res.is_empty()).then(|| mean_squares(&res, weight))
            }
            None => None,
        };
        let terms = [inverse, forward, power, q_e_term];
        let total = terms
            .iter()
            .flatten()
            .copied()
            .reduce(|a, b| a + b)
            .expect("at least one term enabled");
        let ids = terms.map(|t| t.map(|v| v.id()));
        let (q, qd, qdd, q_f, weight, total) =
            (q.id(), qd.id(), qdd.id(), q_f.id(), weight.id(), total.id());
        let q_e = q_e.map(|v| v.id());
        let params = params.iter().map(|p| p.id()).collect();
        Ok(Self {
            graph: b.into_graph(),
            net: net.clone(),
            loss: *loss,
            has_q_e,
            q,
            qd,
            qdd,
            q_f,
            q_e,
            weight,
            params,
            terms: ids,
            total,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.len()
    }

    fn bind(&self, params: &NetworkParams, batch: &Batch) -> Result<Bindings> {
        params.check_config(&self.net)?;
        if batch.q_e.is_some() != self.has_q_e {
            return Err(Error::Config(if self.has_q_e {
                "loss expects Q_e targets but the batch has none".into()
            } else {
                "batch carries Q_e but the loss graph was built without it".into()
            }));
        }
        let mut b = Bindings::new();
        b.bind(self.q, batch.q.clone())
            .bind(self.qd, batch.qd.clone())
            .bind(self.qdd, batch.qdd.clone())
            .bind(self.q_f, batch.q_f.clone())
            .bind(self.weight, DenseTensor::scalar(1.0 / batch.len() as f64));
        if let (Some(id), Some(t)) = (self.q_e, &batch.q_e) {
            b.bind(id, t.clone());
        }
        for (&id, t) in self.params.iter().zip(&params.tensors) {
            b.bind(id, t.clone());
        }
        Ok(b)
    }

    fn roots(&self) -> Vec<NodeId> {
        let mut r: Vec<NodeId> = self.terms.iter().flatten().copied().collect();
        r.push(self.total);
        r
    }

    fn breakdown(&self, values: &crate::autodiff::Values) -> Result<LossBreakdown> {
        let get = |id: Option<NodeId>| -> Result<f64> {
            id.map_or(Ok(0.0), |id| values.expect(id)?.item())
        };
        Ok(LossBreakdown {
            inverse: get(self.terms[0])?,
            forward: get(self.terms[1])?,
            power: get(self.terms[2])?,
            q_e: get(self.terms[3])?,
            total: get(Some(self.total))?,
        })
    }

    pub fn loss(&self, params: &NetworkParams, batch: &Batch) -> Result<LossBreakdown> {
        let b = self.bind(params, batch)?;
        let values = self.graph.evaluate_many(&self.roots(), &b)?;
        self.breakdown(&values)
    }

    /// Loss terms and the gradient of the total with respect to every
    /// parameter tensor, in layout order.
    pub fn loss_and_gradient(
        &self,
        params: &NetworkParams,
        batch: &Batch,
    ) -> Result<(LossBreakdown, Vec<DenseTensor>)> {
        let b = self.bind(params, batch)?;
        let values = self.graph.evaluate_many(&self.roots(), &b)?;
        let losses = self.breakdown(&values)?;
        let grads = self.graph.backward(&values, self.total, &self.params)?;
        let grads = self
            .params
            .iter()
            .map(|&id| grads.get(id).cloned().expect("every target gets a gradient"))
            .collect();
        Ok((losses, grads))
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }
}

/// Total loss and parameter gradient for one batch.
pub fn total_loss(
    config: &LossConfig,
    batch: &Batch,
    params: &NetworkParams,
) -> Result<(LossBreakdown, Vec<DenseTensor>)> {
    LossGraph::new(&params.config, config, batch.q_e.is_some())?.loss_and_gradient(params, batch)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<DenseTensor>,
    pub v: Vec<DenseTensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[DenseTensor]) -> Self {
        let zeros = || params.iter().map(|p| DenseTensor::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One ADAM update with decoupled weight decay: `θ ← θ(1 − lr·wd)` and then
/// the bias-corrected adaptive step.
pub fn adam_step(
    params: &mut [DenseTensor],
    grads: &[DenseTensor],
    state: &mut AdamState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.m.len()
        || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape())
    {
        return Err(Error::Shape("parameter, gradient and moment shapes differ".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let decay = 1.0 - learning_rate * weight_decay;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] = p[i] * decay - learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: Vec<EpochRecord>,
    pub converged: bool,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|r| r.losses.total)
    }
}

/// Trains `params` on `samples`; see [`train_with`].
pub fn train(
    params: NetworkParams,
    samples: &[TrainingSample],
    train: &TrainConfig,
    loss: &LossConfig,
) -> Result<TrainOutcome> {
    train_with(params, samples, train, loss, |_| {})
}

/// Trains with a callback after every epoch. The epoch loss is the
/// sample-weighted mean of the batch losses seen during that epoch.
pub fn train_with(
    mut params: NetworkParams,
    samples: &[TrainingSample],
    train: &TrainConfig,
    loss: &LossConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    train.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let has_q_e = samples[0].q_e.is_some();
    if samples.iter().any(|s| s.q_e.is_some() != has_q_e) {
        return Err(Error::Config("Q_e must be present in all training samples or none".into()));
    }
    let graph = LossGraph::new(&params.config, loss, has_q_e)?;
    let mut adam = AdamState::new(&params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(train.epochs.min(1 << 16));
    let mut converged = false;

    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        for (batch_index, chunk) in order.chunks(train.batch_size).enumerate() {
            let refs: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = Batch::from_samples(&refs)?;
            let (l, grads) = graph.loss_and_gradient(&params, &batch)?;
            if let Some((name, _)) = l.terms().iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_index}, term {name}"
                )));
            }
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at epoch {epoch}, batch {batch_index}, parameter {}",
                    params.names()[i]
                )));
            }
            epoch_loss.scaled_add(&l, chunk.len() as f64 / samples.len() as f64);
            adam_step(
                &mut params.tensors,
                &grads,
                &mut adam,
                train.learning_rate,
                train.weight_decay,
            )?;
        }
        let record = EpochRecord {
            epoch,
            losses: epoch_loss,
        };
        on_epoch(&record);
        history.push(record);
        if epoch_loss.total < train.convergence_threshold {
            converged = true;
            break;
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        converged,
    })
}

pub const HISTORY_HEADER: &str = "epoch,L_inv,L_fwd,L_power,L_Qe,total";

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut text = String::with_capacity(64 * (history.len() + 1));
    text.push_str(HISTORY_HEADER);
    text.push('\n');
    for r in history {
        let l = &r.losses;
        text.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?}\n",
            r.epoch, l.inverse, l.forward, l.power, l.q_e, l.total
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
