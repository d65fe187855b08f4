use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use servodyn::dynamics::{analyze, MechanicalTerms, MechanicsProvider};
use servodyn::evaluation::{
    evaluate_provider, rmse_table, write_plot_csvs, EvalReport, QuantityTable, SeedResult,
};
use servodyn::network::{init_params, load_params_for, save_params, NetworkEvaluator};
use servodyn::simulator::{
    build_dataset, generate_trial, read_dataset, write_dataset, Oracle, PendulumCartParams, Role,
    TrajectorySample,
};
use servodyn::training::{train_with, write_history, TrainingSample};
use servodyn::verification::{identity_checks, trajectory_checks, CheckResult};
use servodyn::{Error, Result};

use crate::config::RunConfig;

pub const COORDS: [&str; 2] = ["theta", "x"];

pub enum Outcome {
    Ok,
    ChecksFailed,
    NoConvergedSeed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialEntry {
    pub id: usize,
    pub name: String,
    pub role: Role,
    pub drive: String,
    pub theta0: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataManifest {
    pub split_seed: u64,
    pub system: PendulumCartParams,
    pub trials: Vec<TrialEntry>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub q_e_available: bool,
    /// Set by `check-oracle` once the oracle passes every check on this data.
    pub oracle_verified: bool,
    #[serde(default)]
    pub oracle_checks: Vec<CheckEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl From<&CheckResult> for CheckEntry {
    fn from(c: &CheckResult) -> Self {
        Self {
            name: c.name.to_string(),
            worst: c.worst,
            tolerance: c.tolerance,
            passed: c.passed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainManifest {
    pub seed: u64,
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
    pub converged: bool,
    pub q_e_used: bool,
    pub power_mode: String,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn manifest_path(data: &Path) -> PathBuf {
    data.join("manifest.json")
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let file = cfg.trial_file()?;
    let mut trials = Vec::new();
    let mut entries = Vec::new();
    for (id, spec) in file.trials.iter().enumerate() {
        let samples = generate_trial(&file.system, spec, id)?;
        entries.push(TrialEntry {
            id,
            name: spec.name.clone(),
            role: spec.role,
            drive: serde_json::to_value(spec.drive.kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            theta0: spec.theta0,
            samples: samples.len(),
        });
        trials.push((spec.role, samples));
    }
    let (train, test) = build_dataset(&trials, cfg.data.split_seed, cfg.data.train_samples)?;
    create_dir(out)?;
    write_dataset(&out.join("train.csv"), &train)?;
    write_dataset(&out.join("test.csv"), &test)?;
    let manifest = DataManifest {
        split_seed: cfg.data.split_seed,
        system: file.system,
        trials: entries,
        train_samples: train.len(),
        test_samples: test.len(),
        q_e_available: train.iter().chain(&test).all(|s| s.q_x.is_some()),
        oracle_verified: false,
        oracle_checks: Vec::new(),
    };
    write_json(&manifest_path(out), &manifest)?;
    cfg.echo(out)?;
    println!(
        "wrote {} train and {} test samples from {} trials to {}",
        train.len(),
        test.len(),
        file.trials.len(),
        out.display()
    );
    Ok(Outcome::Ok)
}

/// Oracle with the gravity gradient sign flipped, for exercising the checks.
struct SignFault(Oracle);

impl MechanicsProvider for SignFault {
    fn n_free(&self) -> usize {
        1
    }
    fn n_external(&self) -> usize {
        1
    }
    fn terms(&self, q: &[f64]) -> Result<MechanicalTerms<f64>> {
        let mut t = self.0.terms(q)?;
        t.dv_dq[0] = -t.dv_dq[0];
        Ok(t)
    }
}

/// Largest deviation of the provider's predictions from the recorded data.
fn dataset_agreement(provider: &dyn MechanicsProvider, samples: &[TrajectorySample]) -> Result<f64> {
    let training: Vec<TrainingSample> = samples.iter().map(|s| s.to_training()).collect();
    let table = evaluate_provider(provider, &training, &COORDS)?;
    let mut worst = 0.0_f64;
    let pairs: [(&str, fn(&TrajectorySample) -> Option<f64>); 6] = [
        ("theta_ddot", |s| Some(s.theta_ddot)),
        ("Q_theta", |s| Some(s.q_theta)),
        ("Q_x", |s| s.q_x),
        ("T", |s| Some(s.kinetic)),
        ("V", |s| Some(s.potential)),
        ("E", |s| Some(s.energy)),
    ];
    for (name, get) in pairs {
        let col = table.column(name).expect("known quantity");
        for (p, s) in col.iter().zip(samples) {
            if let Some(truth) = get(s) {
                worst = worst.max((p - truth).abs());
            }
        }
    }
    Ok(worst)
}

pub fn check_oracle(cfg: &RunConfig, seed: u64, inject_fault: bool) -> Result<Outcome> {
    let file = cfg.trial_file()?;
    let oracle = Oracle::new(file.system);
    let fault = SignFault(oracle.clone());
    let provider: &dyn MechanicsProvider = if inject_fault { &fault } else { &oracle };

    let mut checks = identity_checks(provider, seed, 1000)?;
    checks.extend(trajectory_checks(provider, &file.system, 20.0)?);
    let mut entries: Vec<CheckEntry> = checks.iter().map(CheckEntry::from).collect();

    let mpath = manifest_path(&cfg.data.dir);
    let manifest: Option<DataManifest> = mpath.exists().then(|| read_json(&mpath)).transpose()?;
    if manifest.is_some() {
        let mut samples = read_dataset(&cfg.data.dir.join("train.csv"))?;
        samples.extend(read_dataset(&cfg.data.dir.join("test.csv"))?);
        let worst = dataset_agreement(provider, &samples)?;
        entries.push(CheckEntry {
            name: "dataset agreement".into(),
            worst,
            tolerance: 1e-8,
            passed: worst < 1e-8,
        });
    }
    for e in &entries {
        println!(
            "{} {:<32} worst {:.3e} (tolerance {:.0e})",
            if e.passed { "PASS" } else { "FAIL" },
            e.name,
            e.worst,
            e.tolerance
        );
    }
    let passed = entries.iter().all(|e| e.passed);
    if let Some(mut m) = manifest {
        if !inject_fault {
            m.oracle_verified = passed;
            m.oracle_checks = entries;
            write_json(&mpath, &m)?;
        }
    }
    Ok(if passed { Outcome::Ok } else { Outcome::ChecksFailed })
}

struct Dataset {
    manifest: DataManifest,
    train: Vec<TrajectorySample>,
    test: Vec<TrajectorySample>,
}

fn load_data(cfg: &RunConfig, need_verified: bool) -> Result<Dataset> {
    let dir = &cfg.data.dir;
    let mpath = manifest_path(dir);
    if !mpath.exists() {
        return Err(Error::Config(format!(
            "no dataset at {}; run `generate` first",
            dir.display()
        )));
    }
    let manifest: DataManifest = read_json(&mpath)?;
    if need_verified && !manifest.oracle_verified {
        return Err(Error::Config(format!(
            "dataset at {} is not oracle-verified; run `check-oracle` first",
            dir.display()
        )));
    }
    Ok(Dataset {
        manifest,
        train: read_dataset(&dir.join("train.csv"))?,
        test: read_dataset(&dir.join("test.csv"))?,
    })
}

fn training_samples(cfg: &RunConfig, data: &[TrajectorySample]) -> (Vec<TrainingSample>, bool) {
    let has_q_e = !cfg.loss.no_qe && data.iter().all(|s| s.q_x.is_some());
    let samples = data
        .iter()
        .map(|s| {
            let mut t = s.to_training();
            if !has_q_e {
                t.q_e = None;
            }
            t
        })
        .collect();
    (samples, has_q_e)
}

fn train_one(cfg: &RunConfig, data: &[TrainingSample], has_q_e: bool, out: &Path) -> Result<TrainManifest> {
    let loss = cfg.loss.resolve(has_q_e);
    loss.validate(has_q_e)?;
    create_dir(out)?;
    let params = init_params(&cfg.network, cfg.train.seed)?;
    let outcome = train_with(params, data, &cfg.train, &loss, |_| {})?;
    save_params(&outcome.params, &out.join("model.bin"))?;
    write_history(&out.join("history.csv"), &outcome.history)?;
    let manifest = TrainManifest {
        seed: cfg.train.seed,
        epochs_run: outcome.history.len(),
        final_loss: outcome.final_loss(),
        converged: outcome.converged,
        q_e_used: has_q_e,
        power_mode: serde_json::to_value(loss.power_mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
    };
    write_json(&out.join("train_manifest.json"), &manifest)?;
    cfg.echo(out)?;
    Ok(manifest)
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let data = load_data(cfg, true)?;
    let (samples, has_q_e) = training_samples(cfg, &data.train);
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let m = train_one(cfg, &samples, has_q_e, out)?;
    println!(
        "seed {}: {} epochs, final loss {}, {}",
        m.seed,
        m.epochs_run,
        m.final_loss.map_or("n/a".into(), |l| format!("{l:.4e}")),
        if m.converged { "converged" } else { "not converged" }
    );
    Ok(Outcome::Ok)
}

/// A model given on the command line: a parameter file or the word `oracle`.
pub enum ModelSource {
    Oracle,
    File(PathBuf),
}

impl ModelSource {
    pub fn parse(s: &str) -> Self {
        if s == "oracle" {
            Self::Oracle
        } else {
            Self::File(PathBuf::from(s))
        }
    }
}

struct LoadedModel {
    label: String,
    seed: u64,
    converged: bool,
    final_loss: Option<f64>,
    provider: Box<dyn MechanicsProvider>,
}

fn load_model(cfg: &RunConfig, system: PendulumCartParams, source: &ModelSource) -> Result<LoadedModel> {
    match source {
        ModelSource::Oracle => Ok(LoadedModel {
            label: "oracle".into(),
            seed: 0,
            converged: true,
            final_loss: Some(0.0),
            provider: Box::new(Oracle::new(system)),
        }),
        ModelSource::File(path) => {
            let params = load_params_for(path, &cfg.network)?;
            // Training status comes from the manifest beside the model, if any.
            let manifest = path
                .parent()
                .map(|d| d.join("train_manifest.json"))
                .filter(|p| p.exists())
                .map(|p| read_json::<TrainManifest>(&p))
                .transpose()?;
            Ok(LoadedModel {
                label: format!("seed_{}", params.seed),
                seed: params.seed,
                converged: manifest.as_ref().map_or(true, |m| m.converged),
                final_loss: manifest.and_then(|m| m.final_loss),
                provider: Box::new(NetworkEvaluator::new(&params)?),
            })
        }
    }
}

fn evaluate_models(
    cfg: &RunConfig,
    data: &Dataset,
    models: &[LoadedModel],
    out: &Path,
) -> Result<EvalReport> {
    if data.test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let test: Vec<TrainingSample> = data.test.iter().map(|s| s.to_training()).collect();
    let truth = evaluate_provider(&Oracle::new(data.manifest.system), &test, &COORDS)?;
    let mut per_seed = Vec::new();
    let mut tables: Vec<(String, bool, QuantityTable)> = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let table = evaluate_provider(m.provider.as_ref(), &test, &COORDS)?;
        let mut label = m.label.clone();
        if tables.iter().any(|t| t.0 == label) {
            label = format!("{label}_{i}");
        }
        per_seed.push(SeedResult {
            label: label.clone(),
            seed: m.seed,
            final_loss: m.final_loss,
            converged: m.converged,
            rmse: rmse_table(&table, &truth)?,
        });
        tables.push((label, m.converged, table));
    }
    let report = EvalReport::new(&truth, per_seed);
    create_dir(out)?;
    write_json(&out.join("eval_report.json"), &report)?;
    let times: Vec<(usize, f64)> = data.test.iter().map(|s| (s.trial_id, s.t)).collect();
    let x_ddot: Vec<f64> = data.test.iter().map(|s| s.x_ddot).collect();
    write_plot_csvs(&out.join("plots"), &times, &truth, &tables, &[("x_ddot", x_ddot)])?;
    cfg.echo(out)?;
    Ok(report)
}

fn print_summary(report: &EvalReport) {
    println!(
        "{} test samples, {} of {} models converged",
        report.test_samples,
        report.converged_seeds,
        report.per_seed.len()
    );
    for name in ["theta_ddot", "Q_theta", "Q_x", "V", "E"] {
        let std = report.truth_std[name];
        match report.stats.get(name) {
            Some(s) => println!(
                "  {name:<11} rmse mean {:.4e} std {:.4e}  (truth std {std:.4e})",
                s.mean, s.std
            ),
            None => println!("  {name:<11} no converged model"),
        }
    }
}

pub fn eval(cfg: &RunConfig, sources: &[ModelSource], out: &Path) -> Result<Outcome> {
    if sources.is_empty() {
        return Err(Error::Usage("at least one --model is required".into()));
    }
    let data = load_data(cfg, false)?;
    let models = sources
        .iter()
        .map(|s| load_model(cfg, data.manifest.system, s))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_models(cfg, &data, &models, out)?;
    print_summary(&report);
    Ok(Outcome::Ok)
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub samples: usize,
    pub passes: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub throughput_hz: f64,
    pub deterministic: bool,
}

/// Streams the test set one sample at a time through the full output
/// pipeline (mechanical terms, forces, energies, powers).
pub fn bench(cfg: &RunConfig, source: &ModelSource, out: Option<&Path>) -> Result<Outcome> {
    let data = load_data(cfg, false)?;
    if data.test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let model = load_model(cfg, data.manifest.system, source)?;
    let report = bench_provider(model.provider.as_ref(), &data.test, cfg.bench.passes.max(1))?;
    println!(
        "{} samples x {} passes: mean {:.4} ms, median {:.4} ms, p99 {:.4} ms, {:.0} Hz, deterministic {}",
        report.samples,
        report.passes,
        report.mean_ms,
        report.median_ms,
        report.p99_ms,
        report.throughput_hz,
        report.deterministic
    );
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join("bench.json"), &report)?;
    }
    Ok(Outcome::Ok)
}

pub fn bench_provider(
    provider: &dyn MechanicsProvider,
    samples: &[TrajectorySample],
    passes: usize,
) -> Result<BenchReport> {
    let inputs: Vec<TrainingSample> = samples.iter().map(|s| s.to_training()).collect();
    let mut latencies = Vec::with_capacity(inputs.len() * passes);
    let mut first: Vec<u64> = Vec::new();
    let mut deterministic = true;
    let start = Instant::now();
    for pass in 0..passes {
        let mut bits = Vec::with_capacity(inputs.len() * 4);
        for s in &inputs {
            let t0 = Instant::now();
            let terms = provider.terms(&s.state.q())?;
            let r = analyze(&terms, &s.state, &s.q_f)?;
            latencies.push(t0.elapsed().as_secs_f64() * 1e3);
            bits.extend(r.qdd_f.iter().chain(&r.q_e).map(|v| v.to_bits()));
            bits.extend([r.energy.e.to_bits(), r.energy.w_dot_total.to_bits()]);
        }
        if pass == 0 {
            first = bits;
        } else {
            deterministic &= bits == first;
        }
    }
    let total = start.elapsed().as_secs_f64();
    let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
    let mut sorted = latencies.clone();
    sorted.sort_by(f64::total_cmp);
    let pick = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
    Ok(BenchReport {
        samples: inputs.len(),
        passes,
        mean_ms: mean,
        median_ms: pick(0.5),
        p99_ms: pick(0.99),
        throughput_hz: latencies.len() as f64 / total,
        deterministic,
    })
}

pub fn seed_sweep(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let seeds = &cfg.sweep.seeds;
    if seeds.len() < 2 {
        return Err(Error::Config("a seed sweep needs at least two seeds".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(d) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(Error::Config(format!("seed {d} is listed twice")));
    }
    let data = load_data(cfg, true)?;
    let (samples, has_q_e) = training_samples(cfg, &data.train);
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut models = Vec::new();
    for &seed in seeds {
        let mut c = cfg.clone();
        c.train.seed = seed;
        let dir = out.join(format!("seed_{seed}"));
        let m = train_one(&c, &samples, has_q_e, &dir)?;
        println!(
            "seed {seed}: final loss {}, {}",
            m.final_loss.map_or("n/a".into(), |l| format!("{l:.4e}")),
            if m.converged { "converged" } else { "not converged" }
        );
        models.push(load_model(&c, data.manifest.system, &ModelSource::File(dir.join("model.bin")))?);
    }
    let report = evaluate_models(cfg, &data, &models, out)?;
    print_summary(&report);
    if report.converged_seeds == 0 {
        return Ok(Outcome::NoConvergedSeed);
    }
    Ok(Outcome::Ok)
}
