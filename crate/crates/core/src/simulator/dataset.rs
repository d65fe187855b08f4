use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trial::Role;
use crate::dynamics::GeneralizedState;
use crate::training::TrainingSample;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 13] = [
    "trial_id", "t", "theta", "x", "theta_dot", "x_dot", "theta_ddot", "x_ddot", "Q_theta", "Q_x",
    "T", "V", "E",
];

/// One recorded integrator step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySample {
    pub trial_id: usize,
    pub t: f64,
    pub theta: f64,
    pub x: f64,
    pub theta_dot: f64,
    pub x_dot: f64,
    pub theta_ddot: f64,
    pub x_ddot: f64,
    pub q_theta: f64,
    /// Equivalent cart force; `None` when it was not measured.
    pub q_x: Option<f64>,
    pub kinetic: f64,
    pub potential: f64,
    pub energy: f64,
}

impl TrajectorySample {
    pub fn q(&self) -> [f64; 2] {
        [self.theta, self.x]
    }

    pub fn qd(&self) -> [f64; 2] {
        [self.theta_dot, self.x_dot]
    }

    pub fn qdd(&self) -> [f64; 2] {
        [self.theta_ddot, self.x_ddot]
    }

    pub fn without_q_e(mut self) -> Self {
        self.q_x = None;
        self
    }

    /// State with `θ` free and `x` external, plus the force targets.
    pub fn to_training(&self) -> TrainingSample {
        TrainingSample {
            state: GeneralizedState {
                q_f: vec![self.theta],
                q_e: vec![self.x],
                qd_f: vec![self.theta_dot],
                qd_e: vec![self.x_dot],
                qdd_f: Some(vec![self.theta_ddot]),
                qdd_e: vec![self.x_ddot],
            },
            q_f: vec![self.q_theta],
            q_e: self.q_x.map(|q| vec![q]),
        }
    }
}

/// Splits generated trials: `train_count` samples drawn without replacement
/// from the training trials, and every sample of the other trials as the
/// test set.
pub fn build_dataset(
    trials: &[(Role, Vec<TrajectorySample>)],
    seed: u64,
    train_count: usize,
) -> Result<(Vec<TrajectorySample>, Vec<TrajectorySample>)> {
    let pool: Vec<&TrajectorySample> = trials
        .iter()
        .filter(|(r, _)| *r == Role::Train)
        .flat_map(|(_, s)| s)
        .collect();
    if train_count > pool.len() {
        return Err(Error::Config(format!(
            "requested {train_count} training samples but the training trials hold {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample_indices(&mut rng, pool.len(), train_count).into_vec();
    picked.sort_unstable();
    let train = picked.into_iter().map(|i| pool[i].clone()).collect();
    let test = if train_count == 0 {
        trials.iter().flat_map(|(_, s)| s.iter().cloned()).collect()
    } else {
        trials
            .iter()
            .filter(|(r, _)| *r == Role::Test)
            .flat_map(|(_, s)| s.iter().cloned())
            .collect()
    };
    Ok((train, test))
}

fn fmt(v: f64) -> String {
    // Debug formatting is the shortest string that parses back exactly.
    format!("{v:?}")
}

pub fn write_dataset(path: &Path, samples: &[TrajectorySample]) -> Result<()> {
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Numerical(format!("csv write: {other:?}")),
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for s in samples {
        let record = [
            s.trial_id.to_string(),
            fmt(s.t),
            fmt(s.theta),
            fmt(s.x),
            fmt(s.theta_dot),
            fmt(s.x_dot),
            fmt(s.theta_ddot),
            fmt(s.x_ddot),
            fmt(s.q_theta),
            s.q_x.map(fmt).unwrap_or_default(),
            fmt(s.kinetic),
            fmt(s.potential),
            fmt(s.energy),
        ];
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`write_dataset`]. The `Q_x` column may be
/// missing entirely, in which case every sample lacks `Q_x`.
pub fn read_dataset(path: &Path) -> Result<Vec<TrajectorySample>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(Some(1), format!("{other:?}")),
        })?;
    let header = r
        .headers()
        .map_err(|e| Error::parse(Some(1), e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let without_qx: Vec<&str> = CSV_HEADER.iter().copied().filter(|h| *h != "Q_x").collect();
    let has_qx = if names == CSV_HEADER {
        true
    } else if names == without_qx {
        false
    } else {
        return Err(Error::parse(
            Some(1),
            format!("unexpected header '{}'", names.join(",")),
        ));
    };

    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize);
        let field = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(line, format!("column {}: bad number '{raw}'", header.get(i).unwrap_or("?"))))
        };
        let trial_id = record
            .get(0)
            .unwrap_or("")
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::parse(line, "column trial_id: bad integer"))?;
        let (q_x, rest) = if has_qx {
            let raw = record.get(9).unwrap_or("").trim();
            let q = if raw.is_empty() { None } else { Some(field(9)?) };
            (q, 10)
        } else {
            (None, 9)
        };
        let sample = TrajectorySample {
            trial_id,
            t: field(1)?,
            theta: field(2)?,
            x: field(3)?,
            theta_dot: field(4)?,
            x_dot: field(5)?,
            theta_ddot: field(6)?,
            x_ddot: field(7)?,
            q_theta: field(8)?,
            q_x,
            kinetic: field(rest)?,
            potential: field(rest + 1)?,
            energy: field(rest + 2)?,
        };
        if let Some(prev) = out.last() {
            let prev: &TrajectorySample = prev;
            if prev.trial_id == sample.trial_id && !(sample.t > prev.t) {
                // Subsampled training sets keep their order, so this holds
                // for them too.
                return Err(Error::parse(line, "time must increase within a trial"));
            }
        }
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(trial_id: usize, t: f64) -> TrajectorySample {
        TrajectorySample {
            trial_id,
            t,
            theta: 0.1 * t,
            x: -t / 3.0,
            theta_dot: 1e-300,
            x_dot: 7.0e22,
            theta_ddot: -0.0,
            x_ddot: std::f64::consts::PI,
            q_theta: 0.0,
            q_x: Some(1.0 / 7.0),
            kinetic: 0.29,
            potential: -1.911,
            energy: 0.1 + 0.2,
        }
    }

    fn trials() -> Vec<(Role, Vec<TrajectorySample>)> {
        (0..4)
            .map(|id| {
                let role = if id < 2 { Role::Train } else { Role::Test };
                (role, (0..10).map(|k| sample(id, k as f64)).collect())
            })
            .collect()
    }

    #[test]
    fn split_is_seeded() {
        let t = trials();
        let a = build_dataset(&t, 7, 12).unwrap();
        let b = build_dataset(&t, 7, 12).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 12);
        assert!(a.0.iter().all(|s| s.trial_id < 2));
        assert_eq!(a.1.len(), 20);
        assert!(a.1.iter().all(|s| s.trial_id >= 2));
        assert_ne!(build_dataset(&t, 8, 12).unwrap().0, a.0);
    }

    #[test]
    fn split_edge_cases() {
        let t = trials();
        let (train, test) = build_dataset(&t, 0, 0).unwrap();
        assert!(train.is_empty());
        assert_eq!(test.len(), 40);
        assert!(matches!(build_dataset(&t, 0, 21), Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut s: Vec<_> = (0..5).map(|k| sample(3, k as f64 * 0.1)).collect();
        s[2].q_x = None;
        write_dataset(&path, &s).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, s);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn missing_qx_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let header: Vec<_> = CSV_HEADER.iter().filter(|h| **h != "Q_x").copied().collect();
        std::fs::write(&path, format!("{}\n0,0,1,0,0,0,0,0,0,0.1,0.2,0.3\n", header.join(","))).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].q_x, None);
        assert_eq!(back[0].energy, 0.3);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "trial_id,t\n0,1\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse { line: Some(1), .. })));
        let row = "0,0,1,0,0,0,0,0,0,,0.1,0.2,0.3";
        std::fs::write(&path, format!("{}\n{row}\n0,0.5,oops,0,0,0,0,0,0,,0,0,0\n", CSV_HEADER.join(","))).unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { line: Some(3), message }) => assert!(message.contains("theta")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_dataset(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn floats_survive_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.csv");
            let mut s = sample(0, 0.0);
            s.theta = v;
            s.q_x = Some(-v);
            write_dataset(&path, &[s.clone()]).unwrap();
            prop_assert_eq!(read_dataset(&path).unwrap(), vec![s]);
        }
    }
}
