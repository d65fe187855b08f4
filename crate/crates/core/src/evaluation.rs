//! Test-set evaluation: every predicted quantity next to the oracle truth,
//! RMSE per quantity, and statistics across training seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{analyze, MechanicsProvider};
use crate::error::{Error, Result};
use crate::training::TrainingSample;

/// Quantities compared only up to an additive constant.
pub const OFFSET_FREE: [&str; 2] = ["V", "E"];

/// Per-sample values of named quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantityTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl QuantityTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Names of every evaluated quantity for the given coordinate names
/// (free coordinates first).
pub fn quantity_names(coords: &[&str], n_free: usize) -> Vec<String> {
    let (free, ext) = coords.split_at(n_free);
    let mut names = Vec::new();
    names.extend(free.iter().map(|c| format!("{c}_ddot")));
    names.extend(free.iter().map(|c| format!("Q_{c}")));
    names.extend(ext.iter().map(|c| format!("Q_{c}")));
    for n in ["T", "V", "E", "T_dot", "V_dot", "E_dot", "W_dot"] {
        names.push(n.to_string());
    }
    names.extend(coords.iter().map(|c| format!("W_dot_{c}")));
    for (i, a) in coords.iter().enumerate() {
        for b in &coords[i..] {
            names.push(format!("M_{a}_{b}"));
        }
    }
    for c in coords {
        for part in ["inertial_own", "inertial_cross", "coriolis", "conservative"] {
            names.push(format!("Q_{c}_{part}"));
        }
    }
    names
}

/// Evaluates all quantities with `provider` on every sample.
pub fn evaluate_provider(
    provider: &dyn MechanicsProvider,
    samples: &[TrainingSample],
    coords: &[&str],
) -> Result<QuantityTable> {
    let (nf, n) = (provider.n_free(), provider.n_free() + provider.n_external());
    if coords.len() != n {
        return Err(Error::Usage(format!("{} coordinate names for N={n}", coords.len())));
    }
    let names = quantity_names(coords, nf);
    let qs: Vec<Vec<f64>> = samples.iter().map(|s| s.state.q()).collect();
    let terms = provider.terms_batch(&qs)?;
    let mut rows = Vec::with_capacity(samples.len());
    for (s, t) in samples.iter().zip(&terms) {
        let r = analyze(t, &s.state, &s.q_f)?;
        let mut row = Vec::with_capacity(names.len());
        row.extend(&r.qdd_f);
        row.extend(&r.q_f);
        row.extend(&r.q_e);
        let e = &r.energy;
        row.extend([e.t, e.v, e.e, e.t_dot, e.v_dot, e.e_dot, e.w_dot_total]);
        row.extend(&e.w_dot);
        for i in 0..n {
            for j in i..n {
                row.push(r.mass.m().get(i, j));
            }
        }
        for part in [&r.forces.free, &r.forces.external] {
            for k in 0..part.inertial_own.len() {
                row.extend([
                    part.inertial_own[k],
                    part.inertial_cross[k],
                    part.centrifugal_coriolis[k],
                    part.conservative[k],
                ]);
            }
        }
        debug_assert_eq!(row.len(), names.len());
        rows.push(row);
    }
    Ok(QuantityTable { names, rows })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// RMSE of `pred − truth`; with `remove_offset` the mean difference is
/// subtracted first.
pub fn rmse(pred: &[f64], truth: &[f64], remove_offset: bool) -> f64 {
    let diff: Vec<f64> = pred.iter().zip(truth).map(|(a, b)| a - b).collect();
    let offset = if remove_offset { mean(&diff) } else { 0.0 };
    (diff.iter().map(|d| (d - offset).powi(2)).sum::<f64>() / diff.len() as f64).sqrt()
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn rmse_table(pred: &QuantityTable, truth: &QuantityTable) -> Result<BTreeMap<String, f64>> {
    if pred.names != truth.names || pred.len() != truth.len() {
        return Err(Error::Shape("prediction and truth tables differ".into()));
    }
    if pred.is_empty() {
        return Err(Error::Config("cannot evaluate an empty test set".into()));
    }
    Ok(pred
        .names
        .iter()
        .map(|name| {
            let (p, t) = (pred.column(name).unwrap(), truth.column(name).unwrap());
            let r = rmse(&p, &t, OFFSET_FREE.contains(&name.as_str()));
            (name.clone(), r)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SeedStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let m = mean(values);
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean: m,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    /// Column label used in the plot files.
    pub label: String,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub converged: bool,
    pub rmse: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_samples: usize,
    /// Standard deviation of each true quantity over the test set.
    pub truth_std: BTreeMap<String, f64>,
    pub per_seed: Vec<SeedResult>,
    /// Statistics over the converged seeds only.
    pub stats: BTreeMap<String, SeedStats>,
    pub converged_seeds: usize,
}

impl EvalReport {
    pub fn new(truth: &QuantityTable, per_seed: Vec<SeedResult>) -> Self {
        let truth_std = truth
            .names
            .iter()
            .map(|n| (n.clone(), std_dev(&truth.column(n).unwrap())))
            .collect();
        let converged: Vec<&SeedResult> = per_seed.iter().filter(|s| s.converged).collect();
        let stats = truth
            .names
            .iter()
            .filter_map(|n| {
                let vals: Vec<f64> = converged.iter().map(|s| s.rmse[n]).collect();
                SeedStats::of(&vals).map(|s| (n.clone(), s))
            })
            .collect();
        Self {
            test_samples: truth.len(),
            truth_std,
            converged_seeds: converged.len(),
            per_seed,
            stats,
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Writes one CSV per quantity with the truth, each model's prediction and,
/// over the converged models, the mean, ±1σ band and min/max envelope.
/// Quantities listed in `truth_only` get just the truth column.
pub fn write_plot_csvs(
    dir: &Path,
    samples_time: &[(usize, f64)],
    truth: &QuantityTable,
    predictions: &[(String, bool, QuantityTable)],
    truth_only: &[(&str, Vec<f64>)],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let converged: Vec<&QuantityTable> =
        predictions.iter().filter(|p| p.1).map(|p| &p.2).collect();
    for name in &truth.names {
        let t = truth.column(name).unwrap();
        let preds: Vec<Vec<f64>> = predictions.iter().map(|p| p.2.column(name).unwrap()).collect();
        let conv: Vec<Vec<f64>> = converged.iter().map(|p| p.column(name).unwrap()).collect();
        let mut text = String::from("trial_id,t,truth");
        for (label, _, _) in predictions {
            let _ = write!(text, ",{label}");
        }
        text.push_str(",mean,std,lower,upper,min,max\n");
        for (row, &(trial, time)) in samples_time.iter().enumerate() {
            let _ = write!(text, "{trial},{},{}", fmt(time), fmt(t[row]));
            for p in &preds {
                let _ = write!(text, ",{}", fmt(p[row]));
            }
            let vals: Vec<f64> = conv.iter().map(|c| c[row]).collect();
            match SeedStats::of(&vals) {
                Some(s) => {
                    let _ = write!(
                        text,
                        ",{},{},{},{},{},{}",
                        fmt(s.mean),
                        fmt(s.std),
                        fmt(s.mean - s.std),
                        fmt(s.mean + s.std),
                        fmt(s.min),
                        fmt(s.max)
                    );
                }
                None => text.push_str(",,,,,,"),
            }
            text.push('\n');
        }
        let path = dir.join(format!("{name}.csv"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    for (name, values) in truth_only {
        let mut text = String::from("trial_id,t,truth\n");
        for (&(trial, time), v) in samples_time.iter().zip(values) {
            let _ = writeln!(text, "{trial},{},{}", fmt(time), fmt(*v));
        }
        let path = dir.join(format!("{name}.csv"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
