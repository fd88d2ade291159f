//! Run configuration: a TOML file with top-level run keys and one table per
//! command. Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    UpfmSolve,
    FeasibilitySweep,
    Train,
    RfRank,
    GenAnalysis,
    Probe,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::UpfmSolve => "upfm-solve",
            Command::FeasibilitySweep => "feasibility-sweep",
            Command::Train => "train",
            Command::RfRank => "rf-rank",
            Command::GenAnalysis => "gen-analysis",
            Command::Probe => "probe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Ce,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpfmParams {
    pub loss: Loss,
    pub n: usize,
    pub classes: usize,
    /// Feature dimension; defaults to `classes + 2`.
    pub feature_dim: Option<usize>,
    pub lambda_w: f64,
    pub lambda_h: f64,
    /// Also run the projected-gradient oracle.
    pub numeric_check: bool,
    pub iters: usize,
}

impl Default for UpfmParams {
    fn default() -> Self {
        Self {
            loss: Loss::Ce,
            n: 10,
            classes: 3,
            feature_dim: None,
            lambda_w: 1e-3,
            lambda_h: 1e-3,
            numeric_check: true,
            iters: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Antipodal,
    Axes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepParams {
    pub classes: usize,
    pub n: usize,
    /// `d = round(ratio * n)` for each ratio.
    pub d_over_n: Vec<f64>,
    pub sigma: Vec<f64>,
    pub trials: usize,
    pub layout: Layout,
    pub mean_norm: f64,
    pub all_classes: bool,
    pub tol: f64,
    pub union_constant: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            classes: 2,
            n: 50,
            d_over_n: vec![1.1, 1.3, 1.5, 2.0, 3.0, 4.0],
            sigma: vec![0.18, 0.36, 0.53, 0.8, 1.07, 1.42],
            trials: 20,
            layout: Layout::Antipodal,
            mean_norm: 1.0,
            all_classes: false,
            tol: 1e-9,
            union_constant: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub classes: usize,
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub mean_norm: f64,
    pub depth: usize,
    /// First hidden width of a depth-3 net.
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub loss: Loss,
    pub lambda_w: f64,
    pub lambda_h: f64,
    pub lr0: f64,
    pub decay_at: [f64; 2],
    pub epochs: usize,
    pub batch: Option<usize>,
    pub freeze_first_layer: bool,
    pub extra_checkpoints: Vec<usize>,
    pub save_weights: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            classes: 2,
            n: 50,
            d: 100,
            sigma: 0.18,
            mean_norm: 1.0,
            depth: 2,
            hidden_dim: 0,
            feature_dim: 128,
            loss: Loss::Ce,
            lambda_w: 1e-3,
            lambda_h: 1e-6,
            lr0: 0.1,
            decay_at: [1.0 / 3.0, 2.0 / 3.0],
            epochs: 1000,
            batch: None,
            freeze_first_layer: false,
            extra_checkpoints: vec![100],
            save_weights: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringMode {
    AnalyticReluMean,
    RootTwoOverPi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfParams {
    pub points: usize,
    pub input_dim: usize,
    /// Defaults to `ceil(8 N ln N)`.
    pub d1: Option<usize>,
    pub trials: usize,
    pub tol: f64,
    pub centering: CenteringMode,
    /// Monte Carlo kernel estimate with this many features; skipped if unset.
    pub kernel_samples: Option<usize>,
    /// Split the points into this many equal classes for the feasibility check.
    pub classes: usize,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            points: 40,
            input_dim: 10,
            d1: None,
            trials: 100,
            tol: 1e-10,
            centering: CenteringMode::AnalyticReluMean,
            kernel_samples: None,
            classes: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenRegime {
    LowNoise,
    MinNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenParams {
    pub regime: GenRegime,
    pub n: usize,
    pub d: usize,
    pub sigma_over_mu: f64,
    pub mean_norm: f64,
    pub trials: usize,
    pub mc_trials: usize,
    pub c1: f64,
    pub c2: f64,
    pub tol: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            regime: GenRegime::LowNoise,
            n: 50,
            d: 75,
            sigma_over_mu: 0.1,
            mean_norm: 1.0,
            trials: 10,
            mc_trials: 1_000_000,
            c1: 1.0,
            c2: 1.0,
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    JlAngle,
    JlSingular,
    Gordon,
    Lipschitz,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeParams {
    pub kind: ProbeKind,
    pub d: usize,
    pub m: usize,
    pub epsilon: f64,
    /// Rows of the Gaussian matrix projected by the singular-value probe.
    pub rows: usize,
    pub n: usize,
    pub gordon_d: usize,
    pub trials: usize,
    pub thresholds: Vec<f64>,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self {
            kind: ProbeKind::All,
            d: 200,
            m: 100,
            epsilon: 0.3,
            rows: 1,
            n: 50,
            gordon_d: 200,
            trials: 500,
            thresholds: vec![0.0, 1.0, 2.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upfm: Option<UpfmParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rf_rank: Option<RfParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen: Option<GenParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeParams>,
}

/// What a run writes next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub config: RunConfig,
    pub outputs: Vec<String>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl RunConfig {
    /// Load TOML, or the `config` of a JSON manifest when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Ok(m.config)
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    /// Fill the section for `command` with defaults and drop the others.
    pub fn resolve(mut self, command: Command) -> Result<Self, CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(CliError::Config(format!("config is for {}, not {}", c.name(), command.name())));
            }
        }
        let mut out = RunConfig {
            command: Some(command),
            seed: self.seed,
            threads: self.threads,
            output_dir: self.output_dir.take(),
            ..Default::default()
        };
        match command {
            Command::UpfmSolve => out.upfm = Some(self.upfm.unwrap_or_default()),
            Command::FeasibilitySweep => out.sweep = Some(self.sweep.unwrap_or_default()),
            Command::Train => out.train = Some(self.train.unwrap_or_default()),
            Command::RfRank => out.rf_rank = Some(self.rf_rank.unwrap_or_default()),
            Command::GenAnalysis => out.gen = Some(self.gen.unwrap_or_default()),
            Command::Probe => out.probe = Some(self.probe.unwrap_or_default()),
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 1\nbogus = 2\n").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn sections_fill_with_defaults() {
        let c: RunConfig = toml::from_str("seed = 4\n[train]\nepochs = 7\n").unwrap();
        let r = c.resolve(Command::Train).unwrap();
        let t = r.train.unwrap();
        assert_eq!((r.seed, t.epochs, t.feature_dim), (4, 7, 128));
        assert!(r.sweep.is_none());
    }

    #[test]
    fn command_mismatch_is_a_config_error() {
        let c: RunConfig = toml::from_str("command = \"probe\"\n").unwrap();
        assert!(matches!(c.resolve(Command::Train), Err(CliError::Config(_))));
    }

    #[test]
    fn resolved_config_survives_json() {
        let r = RunConfig::default().resolve(Command::FeasibilitySweep).unwrap();
        let m = Manifest { tool: "x".into(), config: r.clone(), outputs: vec![] };
        let back: Manifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back.config, r);
    }
}
