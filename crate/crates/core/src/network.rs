//! Multiheaded network `q ↦ (V, l_diag, l_lower)` and the positive-definite
//! mass matrix `M = L·Lᵀ + ε·I` assembled from its outputs.
//!
//! Tensors are laid out with samples in rows: the input is `B×N`, hidden
//! activations `B×width`. Weights are stored `out×in` and biases `1×out`.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, DenseTensor, Graph, GraphBuilder, NodeId, Var};
use crate::dynamics::{MechanicalTerms, MechanicsProvider, PartitionedMass};
use crate::error::{Error, Result};
use crate::linalg::{sum_or_zero, Matrix, Real, SquareMatrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_free: usize,
    pub n_external: usize,
    pub hidden: Vec<usize>,
    pub epsilon: f64,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_free: 1,
            n_external: 1,
            hidden: vec![64],
            epsilon: 0.01,
            activation: Activation::Softplus,
        }
    }
}

impl NetworkConfig {
    pub fn n(&self) -> usize {
        self.n_free + self.n_external
    }

    pub fn n_lower(&self) -> usize {
        let n = self.n();
        n * (n - 1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_free == 0 {
            return Err(Error::Config("network needs at least one free coordinate".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be non-empty and positive".into()));
        }
        Ok(())
    }

    /// Names and shapes of every tensor, in declaration order.
    pub fn layout(&self) -> Vec<(String, [usize; 2])> {
        let mut out = Vec::new();
        let mut fan_in = self.n();
        for (i, &w) in self.hidden.iter().enumerate() {
            out.push((format!("hidden{i}.weight"), [w, fan_in]));
            out.push((format!("hidden{i}.bias"), [1, w]));
            fan_in = w;
        }
        let heads = [("v", 1), ("l_diag", self.n()), ("l_lower", self.n_lower())];
        for (name, size) in heads {
            if size > 0 {
                out.push((format!("{name}.weight"), [size, fan_in]));
                out.push((format!("{name}.bias"), [1, size]));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub seed: u64,
    pub tensors: Vec<DenseTensor>,
}

impl NetworkParams {
    pub fn names(&self) -> Vec<String> {
        self.config.layout().into_iter().map(|(n, _)| n).collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(DenseTensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(DenseTensor::is_finite)
    }

    fn check_shapes(&self) -> Result<()> {
        let layout = self.config.layout();
        if layout.len() != self.tensors.len()
            || layout.iter().zip(&self.tensors).any(|((_, s), t)| *s != t.shape())
        {
            return Err(Error::Config("parameter shapes do not match the network config".into()));
        }
        Ok(())
    }

    /// Errors unless these parameters were made for `config`.
    pub fn check_config(&self, config: &NetworkConfig) -> Result<()> {
        if &self.config != config {
            return Err(Error::Config(format!(
                "model was built for {:?} but {:?} was requested",
                self.config, config
            )));
        }
        Ok(())
    }
}

pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = config
        .layout()
        .into_iter()
        .map(|(name, [rows, cols])| {
            if name.ends_with(".bias") {
                DenseTensor::zeros(rows, cols)
            } else {
                let bound = 1.0 / (cols as f64).sqrt();
                // The trunk output is positive, so non-negative weights keep the
                // ReLU head active on every input at the start.
                let magnitude_only = name == "l_diag.weight";
                DenseTensor::from_fn(rows, cols, |_, _| {
                    let w: f64 = rng.gen_range(-bound..bound);
                    if magnitude_only { w.abs() } else { w }
                })
            }
        })
        .collect();
    Ok(NetworkParams {
        config: config.clone(),
        seed,
        tensors,
    })
}

/// Lower-triangular `L` with `l_diag` on the diagonal and `l_lower` in
/// row-major order below it.
pub fn assemble_cholesky<T: Real>(l_diag: &[T], l_lower: &[T]) -> Result<SquareMatrix<T>> {
    let n = l_diag.len();
    if n == 0 || l_lower.len() != n * (n - 1) / 2 {
        return Err(Error::Usage(format!(
            "l_lower has length {} but N={n} needs {}",
            l_lower.len(),
            n * n.saturating_sub(1) / 2
        )));
    }
    let zero = l_diag[0].zero_like();
    let mut lower = l_lower.iter();
    let mut m = SquareMatrix::from_fn(n, |_, _| zero);
    for i in 0..n {
        for j in 0..i {
            m.set(i, j, *lower.next().expect("length checked"));
        }
        m.set(i, i, l_diag[i]);
    }
    Ok(m)
}

/// `M = L·Lᵀ + ε·I` for lower-triangular `L`. Only the lower triangle of
/// `L` is read and `M` is symmetric by construction.
pub fn mass_matrix<T: Real>(l: &SquareMatrix<T>, epsilon: f64) -> SquareMatrix<T> {
    let n = l.dim();
    let like = l.get(0, 0);
    let mut m = SquareMatrix::from_fn(n, |_, _| like);
    for i in 0..n {
        for j in 0..=i {
            let s = sum_or_zero((0..=j).map(|k| l.get(i, k) * l.get(j, k)), like);
            let s = if i == j { s.add_const(epsilon) } else { s };
            m.set(i, j, s);
            m.set(j, i, s);
        }
    }
    m
}

/// `∂M/∂q_k = ∂L/∂q_k·Lᵀ + L·∂L/∂q_kᵀ`, one slice per `k`.
pub fn mass_matrix_derivative<T: Real>(
    l: &SquareMatrix<T>,
    dl_dq: &[SquareMatrix<T>],
) -> Vec<SquareMatrix<T>> {
    let n = l.dim();
    let like = l.get(0, 0);
    dl_dq
        .iter()
        .map(|dl| {
            let mut d = SquareMatrix::from_fn(n, |_, _| like);
            for i in 0..n {
                for j in 0..=i {
                    let s = sum_or_zero(
                        (0..=j).map(|k| dl.get(i, k) * l.get(j, k) + l.get(i, k) * dl.get(j, k)),
                        like,
                    );
                    d.set(i, j, s);
                    d.set(j, i, s);
                }
            }
            d
        })
        .collect()
}

/// Network outputs as graph columns (each `B×1`), including input Jacobians.
pub struct NetworkSymbols<'g> {
    pub v: Var<'g>,
    pub l_diag: Vec<Var<'g>>,
    pub l_lower: Vec<Var<'g>>,
    /// `dv_dq[k]`
    pub dv_dq: Vec<Var<'g>>,
    /// `dl_diag_dq[k][i]`
    pub dl_diag_dq: Vec<Vec<Var<'g>>>,
    /// `dl_lower_dq[k][j]`
    pub dl_lower_dq: Vec<Vec<Var<'g>>>,
}

impl<'g> NetworkSymbols<'g> {
    pub fn cholesky(&self) -> SquareMatrix<Var<'g>> {
        assemble_cholesky(&self.l_diag, &self.l_lower).expect("head sizes fixed by config")
    }

    /// Mass matrix, potential and their derivatives as graph columns.
    pub fn mechanics(&self, config: &NetworkConfig) -> MechanicalTerms<Var<'g>> {
        let l = self.cholesky();
        let dl: Vec<_> = (0..config.n())
            .map(|k| {
                assemble_cholesky(&self.dl_diag_dq[k], &self.dl_lower_dq[k])
                    .expect("head sizes fixed by config")
            })
            .collect();
        let m = mass_matrix(&l, config.epsilon);
        let dm = mass_matrix_derivative(&l, &dl);
        MechanicalTerms {
            mass: PartitionedMass::new(config.n_free, m, dm).expect("config validated"),
            v: self.v,
            dv_dq: self.dv_dq.clone(),
        }
    }
}

fn columns<'g>(x: Var<'g>, n: usize) -> Vec<Var<'g>> {
    (0..n).map(|i| x.column(i)).collect()
}

/// Records the network applied to `q` (`B×N`) using parameter nodes in
/// [`NetworkConfig::layout`] order.
pub fn build_network<'g>(
    config: &NetworkConfig,
    q: Var<'g>,
    params: &[Var<'g>],
) -> Result<NetworkSymbols<'g>> {
    config.validate()?;
    if params.len() != config.layout().len() {
        return Err(Error::Usage(format!(
            "expected {} parameter nodes, got {}",
            config.layout().len(),
            params.len()
        )));
    }
    let n = config.n();
    let mut p = params.iter().copied();
    let mut linear = |x: Var<'g>| {
        let w = p.next().expect("count checked");
        let b = p.next().expect("count checked");
        x.matmul(w.transpose()) + b
    };
    let mut h = q;
    for _ in &config.hidden {
        h = match config.activation {
            Activation::Softplus => linear(h).softplus(),
        };
    }
    let v = linear(h);
    let diag = linear(h).relu();
    let lower = (config.n_lower() > 0).then(|| linear(h));

    let builder = q.builder();
    let mut dv_dq = Vec::with_capacity(n);
    let mut dl_diag_dq = Vec::with_capacity(n);
    let mut dl_lower_dq = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let seed = builder.constant(DenseTensor::row(&e));
        let mut roots = vec![v, diag];
        roots.extend(lower);
        let t = Var::derive_many(&roots, q, seed)?;
        dv_dq.push(t[0]);
        dl_diag_dq.push(columns(t[1], n));
        dl_lower_dq.push(t.get(2).map_or(Vec::new(), |&d| columns(d, config.n_lower())));
    }
    Ok(NetworkSymbols {
        v,
        l_diag: columns(diag, n),
        l_lower: lower.map_or(Vec::new(), |l| columns(l, config.n_lower())),
        dv_dq,
        dl_diag_dq,
        dl_lower_dq,
    })
}

/// Numeric network outputs for one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput {
    pub v: f64,
    pub l_diag: Vec<f64>,
    pub l_lower: Vec<f64>,
    pub dv_dq: Vec<f64>,
    /// `dl_dq[k]` is `∂L/∂q_k`.
    pub dl_dq: Vec<Matrix>,
}

impl NetworkOutput {
    pub fn cholesky(&self) -> Matrix {
        assemble_cholesky(&self.l_diag, &self.l_lower).expect("sizes fixed by config")
    }

    pub fn terms(&self, config: &NetworkConfig) -> MechanicalTerms<f64> {
        let l = self.cholesky();
        let mass = PartitionedMass::new(
            config.n_free,
            mass_matrix(&l, config.epsilon),
            mass_matrix_derivative(&l, &self.dl_dq),
        )
        .expect("config validated");
        MechanicalTerms {
            mass,
            v: self.v,
            dv_dq: self.dv_dq.clone(),
        }
    }
}

/// A network graph built once with its parameters bound, for repeated
/// evaluation at any batch size.
#[derive(Clone, Debug)]
pub struct NetworkEvaluator {
    config: NetworkConfig,
    graph: Graph,
    q: NodeId,
    bindings: Bindings,
    roots: Vec<NodeId>,
}

impl NetworkEvaluator {
    pub fn new(params: &NetworkParams) -> Result<Self> {
        params.config.validate()?;
        params.check_shapes()?;
        let config = params.config.clone();
        let builder = GraphBuilder::new();
        let q = builder.input("q");
        let names = params.names();
        let vars: Vec<Var> = names.iter().map(|n| builder.parameter(n)).collect();
        let sym = build_network(&config, q, &vars)?;
        // Root order: v, l_diag, l_lower, then per k: dv, dl_diag, dl_lower.
        let mut roots = vec![sym.v.id()];
        roots.extend(sym.l_diag.iter().map(|v| v.id()));
        roots.extend(sym.l_lower.iter().map(|v| v.id()));
        for k in 0..config.n() {
            roots.push(sym.dv_dq[k].id());
            roots.extend(sym.dl_diag_dq[k].iter().map(|v| v.id()));
            roots.extend(sym.dl_lower_dq[k].iter().map(|v| v.id()));
        }
        let q = q.id();
        let ids: Vec<NodeId> = vars.iter().map(|v| v.id()).collect();
        let graph = builder.into_graph();
        let mut bindings = Bindings::new();
        for (id, t) in ids.into_iter().zip(&params.tensors) {
            bindings.bind(id, t.clone());
        }
        Ok(Self {
            config,
            graph,
            q,
            bindings,
            roots,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Outputs for each row of `qs`.
    pub fn forward_batch(&self, qs: &[Vec<f64>]) -> Result<Vec<NetworkOutput>> {
        let n = self.config.n();
        if qs.iter().any(|q| q.len() != n) {
            return Err(Error::Usage(format!("network expects q of length {n}")));
        }
        if qs.is_empty() {
            return Ok(Vec::new());
        }
        let data: Vec<f64> = qs.iter().flatten().copied().collect();
        let mut bindings = self.bindings.clone();
        bindings.bind(self.q, DenseTensor::new(qs.len(), n, data)?);
        let values = self.graph.evaluate_many(&self.roots, &bindings)?;
        let cols: Vec<&DenseTensor> = self
            .roots
            .iter()
            .map(|&r| values.expect(r))
            .collect::<Result<_>>()?;
        let nl = self.config.n_lower();
        Ok((0..qs.len())
            .map(|b| {
                let mut it = cols.iter().map(|c| c.get(b, 0));
                let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
                let v = take(1)[0];
                let l_diag = take(n);
                let l_lower = take(nl);
                let mut dv_dq = Vec::with_capacity(n);
                let mut dl_dq = Vec::with_capacity(n);
                for _ in 0..n {
                    dv_dq.push(take(1)[0]);
                    let dd = take(n);
                    let dlow = take(nl);
                    dl_dq.push(assemble_cholesky(&dd, &dlow).expect("sizes fixed"));
                }
                NetworkOutput {
                    v,
                    l_diag,
                    l_lower,
                    dv_dq,
                    dl_dq,
                }
            })
            .collect())
    }

    pub fn forward(&self, q: &[f64]) -> Result<NetworkOutput> {
        Ok(self.forward_batch(&[q.to_vec()])?.remove(0))
    }
}

impl MechanicsProvider for NetworkEvaluator {
    fn n_free(&self) -> usize {
        self.config.n_free
    }

    fn n_external(&self) -> usize {
        self.config.n_external
    }

    fn terms(&self, q: &[f64]) -> Result<MechanicalTerms<f64>> {
        Ok(self.forward(q)?.terms(&self.config))
    }

    fn terms_batch(&self, qs: &[Vec<f64>]) -> Result<Vec<MechanicalTerms<f64>>> {
        Ok(self
            .forward_batch(qs)?
            .iter()
            .map(|o| o.terms(&self.config))
            .collect())
    }
}

/// One-off evaluation; build a [`NetworkEvaluator`] for repeated use.
pub fn forward(params: &NetworkParams, q: &[f64]) -> Result<NetworkOutput> {
    NetworkEvaluator::new(params)?.forward(q)
}

const MAGIC: &[u8; 8] = b"SRVLNNP\0";
const VERSION: u32 = 1;

/// Writes the parameter file: magic, version, config, seed, then each tensor
/// as `rows: u32, cols: u32` and row-major `f64` data, all little-endian.
pub fn save_params(params: &NetworkParams, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * params.count());
    let c = &params.config;
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.n_free, c.n_external, c.hidden.len()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &w in &c.hidden {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.epsilon.to_le_bytes());
    buf.extend_from_slice(&params.seed.to_le_bytes());
    buf.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const K: usize>(&mut self) -> Result<[u8; K]> {
        let end = self.pos + K;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::parse(None, format!("parameter file truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().expect("length matches"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn load_params(path: &Path) -> Result<NetworkParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if &cur.take::<8>()? != MAGIC {
        return Err(Error::parse(None, "not a parameter file (bad magic)"));
    }
    let version = cur.u32()?;
    if version != VERSION as usize {
        return Err(Error::parse(None, format!("unsupported parameter file version {version}")));
    }
    let n_free = cur.u32()?;
    let n_external = cur.u32()?;
    let layers = cur.u32()?;
    if layers > 1024 {
        return Err(Error::parse(None, "implausible layer count"));
    }
    let hidden = (0..layers).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
    let epsilon = cur.f64()?;
    let seed = cur.u64()?;
    let config = NetworkConfig {
        n_free,
        n_external,
        hidden,
        epsilon,
        activation: Activation::Softplus,
    };
    config
        .validate()
        .map_err(|e| Error::parse(None, format!("invalid config in header: {e}")))?;
    let count = cur.u32()?;
    if count != config.layout().len() {
        return Err(Error::parse(None, "tensor count does not match the header config"));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = cur.u32()?;
        let cols = cur.u32()?;
        if rows.saturating_mul(cols) > (bytes.len() - cur.pos) / 8 {
            return Err(Error::parse(None, "parameter file truncated inside a tensor"));
        }
        let data = (0..rows * cols).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push(DenseTensor::new(rows, cols, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse(None, "trailing bytes after parameter data"));
    }
    let params = NetworkParams {
        config,
        seed,
        tensors,
    };
    params
        .check_shapes()
        .map_err(|_| Error::parse(None, "tensor shapes do not match the header config"))?;
    Ok(params)
}

/// Loads parameters and requires them to match `config`.
pub fn load_params_for(path: &Path, config: &NetworkConfig) -> Result<NetworkParams> {
    let params = load_params(path)?;
    params.check_config(config)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::kinetic_energy;
    use proptest::prelude::*;

    fn default_config() -> NetworkConfig {
        NetworkConfig::default()
    }

    #[test]
    fn default_layout() {
        let p = init_params(&default_config(), 1).unwrap();
        let shapes: Vec<_> = p.tensors.iter().map(|t| t.shape()).collect();
        assert_eq!(
            shapes,
            vec![[64, 2], [1, 64], [1, 64], [1, 1], [2, 64], [1, 2], [1, 64], [1, 1]]
        );
        assert_eq!(p.count(), 64 * 2 + 64 + 64 + 1 + 128 + 2 + 64 + 1);
        let bound = 1.0 / 2f64.sqrt();
        assert!(p.tensors[0].data().iter().all(|v| v.abs() <= bound));
        assert!(p.tensors[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded() {
        let c = default_config();
        assert_eq!(init_params(&c, 5).unwrap(), init_params(&c, 5).unwrap());
        assert_ne!(init_params(&c, 5).unwrap().tensors, init_params(&c, 6).unwrap().tensors);
    }

    #[test]
    fn init_ranges_and_live_diagonal_head() {
        let c = default_config();
        let p = init_params(&c, 3).unwrap();
        for (name, t) in p.names().iter().zip(&p.tensors) {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            } else {
                let bound = 1.0 / (t.shape()[1] as f64).sqrt();
                assert!(t.data().iter().all(|v| v.abs() <= bound), "{name}");
            }
        }
        let w = &p.tensors[p.names().iter().position(|n| n == "l_diag.weight").unwrap()];
        assert!(w.data().iter().all(|&v| v >= 0.0));
        // Softplus features are positive, so l_diag > 0 everywhere at init.
        for q in [[-3.0, -2.0], [0.0, 0.0], [2.5, 1.0]] {
            assert!(forward(&p, &q).unwrap().l_diag.iter().all(|&l| l > 0.0));
        }
    }

    #[test]
    fn config_validation() {
        let bad = |f: fn(&mut NetworkConfig)| {
            let mut c = default_config();
            f(&mut c);
            matches!(init_params(&c, 0), Err(Error::Config(_)))
        };
        assert!(bad(|c| c.n_free = 0));
        assert!(bad(|c| c.epsilon = 0.0));
        assert!(bad(|c| c.hidden.clear()));
        // N_e = 0 and N = 1 (no lower head) are fine.
        let c = NetworkConfig { n_free: 1, n_external: 0, ..default_config() };
        let p = init_params(&c, 0).unwrap();
        let out = forward(&p, &[0.3]).unwrap();
        assert!(out.l_lower.is_empty() && out.dl_dq.len() == 1);
    }

    #[test]
    fn constant_network() {
        let mut p = init_params(&default_config(), 3).unwrap();
        for t in &mut p.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        p.tensors[3].set(0, 0, 2.5);
        p.tensors[5] = DenseTensor::row(&[-1.0, -2.0]);
        for q in [[0.0, 0.0], [1.0, -3.0]] {
            let out = forward(&p, &q).unwrap();
            assert_eq!(out.v, 2.5);
            assert_eq!(out.dv_dq, vec![0.0, 0.0]);
            assert_eq!(out.l_diag, vec![0.0, 0.0]);
            let m = out.terms(&p.config).mass.m().clone();
            assert_eq!(m.as_slice(), &[0.01, 0.0, 0.0, 0.01]);
        }
    }

    #[test]
    fn cholesky_assembly() {
        let l = assemble_cholesky(&[1.0, 2.0], &[3.0]).unwrap();
        assert_eq!(l.as_slice(), &[1.0, 0.0, 3.0, 2.0]);
        let l = assemble_cholesky(&[1.0, 1.0, 1.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(l.as_slice(), &[1.0, 0.0, 0.0, 4.0, 1.0, 0.0, 5.0, 6.0, 1.0]);
        let l = assemble_cholesky(&[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(l.max_abs(), 0.0);
        assert!(matches!(assemble_cholesky(&[1.0, 2.0], &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn mass_from_factor() {
        let m = mass_matrix(&Matrix::identity(2), 0.01);
        assert_eq!(m.as_slice(), &[1.01, 0.0, 0.0, 1.01]);
        let l = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(mass_matrix(&l, 0.0).as_slice(), &[4.0, 2.0, 2.0, 2.0]);
        let e = mass_matrix(&Matrix::zeros(3), 0.01).symmetric_eigenvalues();
        assert!(e.iter().all(|&v| v == 0.01));
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let c = NetworkConfig { n_free: 2, n_external: 1, hidden: vec![16, 8], ..default_config() };
        let p = init_params(&c, 11).unwrap();
        let eval = NetworkEvaluator::new(&p).unwrap();
        let q = [0.3, -0.7, 1.1];
        let out = eval.forward(&q).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let (a, b) = (eval.forward(&qp).unwrap(), eval.forward(&qm).unwrap());
            let rel = |an: f64, fd: f64| (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
            assert!(rel(out.dv_dq[k], (a.v - b.v) / (2.0 * h)) < 1e-5);
            let (la, lb) = (a.cholesky(), b.cholesky());
            for i in 0..9 {
                let fd = (la.as_slice()[i] - lb.as_slice()[i]) / (2.0 * h);
                assert!(rel(out.dl_dq[k].as_slice()[i], fd) < 1e-5);
            }
        }
    }

    #[test]
    fn provider_mass_derivative_matches_finite_differences() {
        let p = init_params(&default_config(), 2).unwrap();
        let eval = NetworkEvaluator::new(&p).unwrap();
        let q = [0.4, -0.2];
        let t = eval.terms(&q).unwrap();
        let h = 1e-5;
        for k in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let (a, b) = (eval.terms(&qp).unwrap(), eval.terms(&qm).unwrap());
            for i in 0..4 {
                let fd = (a.mass.m().as_slice()[i] - b.mass.m().as_slice()[i]) / (2.0 * h);
                assert!((fd - t.mass.dm_dq()[k].as_slice()[i]).abs() < 1e-8);
            }
        }
        let batch = eval.terms_batch(&[q.to_vec(), vec![1.0, 1.0]]).unwrap();
        assert_eq!(batch[0], t);
        assert!(matches!(eval.forward(&[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let p = init_params(&default_config(), 9).unwrap();
        let a = forward(&p, &[0.1, 0.2]).unwrap();
        let b = forward(&p, &[0.1, 0.2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn params_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let p = init_params(&default_config(), 42).unwrap();
        save_params(&p, &path).unwrap();
        let back = load_params(&path).unwrap();
        assert_eq!(back, p);
        assert!(back
            .tensors
            .iter()
            .zip(&p.tensors)
            .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())));

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_params(&path), Err(Error::Parse { .. })));

        save_params(&p, &path).unwrap();
        let other = NetworkConfig { hidden: vec![32], ..default_config() };
        assert!(matches!(load_params_for(&path, &other), Err(Error::Config(_))));
        assert!(matches!(
            load_params(&dir.path().join("none.bin")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mass_is_symmetric_positive_definite(seed in 0u64..1000, a in -3.0..3.0f64, b in -3.0..3.0f64) {
            let p = init_params(&default_config(), seed).unwrap();
            let m = forward(&p, &[a, b]).unwrap().terms(&p.config).mass.m().clone();
            prop_assert_eq!(m.max_asymmetry(), 0.0);
            let shifted = Matrix::from_fn(2, |i, j| m.get(i, j) - if i == j { 0.01 - 1e-12 } else { 0.0 });
            prop_assert!(shifted.cholesky().is_some());
        }

        #[test]
        fn kinetic_energy_is_quadratic(seed in 0u64..100, c in -5.0..5.0f64, u in -2.0..2.0f64, w in -2.0..2.0f64) {
            let p = init_params(&default_config(), seed).unwrap();
            let m = forward(&p, &[0.5, -0.5]).unwrap().terms(&p.config).mass.m().clone();
            let t1 = kinetic_energy(&m, &[u, w]);
            let tc = kinetic_energy(&m, &[c * u, c * w]);
            prop_assert!((tc - c * c * t1).abs() <= 1e-12 * tc.abs().max(1e-300));
        }
    }
}
