//! Run configuration: one TOML file shared by every command, plus
//! command-line overrides. The resolved form is echoed next to each output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use servodyn::network::NetworkConfig;
use servodyn::simulator::{default_trials, load_trial_file, PendulumCartParams, TrialFile, TrialSpec};
use servodyn::training::{LossConfig, PowerMode, TrainConfig};
use servodyn::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory written by `generate` and read by the other commands.
    pub dir: PathBuf,
    pub split_seed: u64,
    pub train_samples: usize,
    /// Optional separate trial file; overrides `[system]` and `[[trial]]`.
    pub trial_file: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            split_seed: 0,
            train_samples: 4096,
            trial_file: None,
        }
    }
}

/// Loss switches; an unset power mode follows the availability of `Q_e`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub use_inverse: bool,
    pub use_forward: bool,
    pub power_mode: Option<PowerMode>,
    /// Train without the measured `Q_e`.
    pub no_qe: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            use_inverse: true,
            use_forward: true,
            power_mode: None,
            no_qe: false,
        }
    }
}

impl LossSection {
    pub fn resolve(&self, has_q_e: bool) -> LossConfig {
        let mut c = LossConfig::for_data(has_q_e);
        c.use_inverse = self.use_inverse;
        c.use_forward = self.use_forward;
        if let Some(mode) = self.power_mode {
            c.power_mode = mode;
        }
        c
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Passes over the test set; outputs of all passes must agree bitwise.
    pub passes: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { passes: 2 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub system: Option<PendulumCartParams>,
    #[serde(rename = "trial", skip_serializing_if = "Vec::is_empty")]
    pub trials: Vec<TrialSpec>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub loss: LossSection,
    pub sweep: SweepSection,
    pub bench: BenchSection,
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub no_qe: bool,
    pub power_mode: Option<PowerMode>,
    pub data: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str::<RunConfig>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.train.seed = s;
        }
        if let Some(s) = &overrides.seeds {
            cfg.sweep.seeds = s.clone();
        }
        if overrides.no_qe {
            cfg.loss.no_qe = true;
        }
        if let Some(m) = overrides.power_mode {
            cfg.loss.power_mode = Some(m);
        }
        if let Some(d) = &overrides.data {
            cfg.data.dir = d.clone();
        }
        cfg.network.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// The trial set: a separate trial file, inline trials, or the default set.
    pub fn trial_file(&self) -> Result<TrialFile> {
        if let Some(p) = &self.data.trial_file {
            return load_trial_file(p);
        }
        let mut file = default_trials();
        if let Some(system) = self.system {
            file.system = system;
        }
        if !self.trials.is_empty() {
            file.trials = self.trials.clone();
        }
        file.validate()?;
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the resolved config to `dir/config.toml`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml())
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.network, NetworkConfig::default());
        assert_eq!(c.trial_file().unwrap().trials.len(), 11);
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.train.epochs = 7;
        c.loss.power_mode = Some(PowerMode::Off);
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back.train.epochs, 7);
        assert_eq!(back.loss.power_mode, Some(PowerMode::Off));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nlearnin_rate = 1.0").is_err());
    }

    #[test]
    fn overrides_apply() {
        let o = Overrides {
            seed: Some(5),
            no_qe: true,
            ..Default::default()
        };
        let c = RunConfig::load(None, &o).unwrap();
        assert_eq!(c.train.seed, 5);
        assert!(c.loss.no_qe);
    }

    #[test]
    fn shipped_configs_load() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let c = RunConfig::load(Some(&root.join("desk.toml")), &Overrides::default()).unwrap();
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.trial_file().unwrap().trials.len(), 11);
        let trials = load_trial_file(&root.join("trials.toml")).unwrap();
        assert_eq!(trials.trials.len(), 4);
    }
}
