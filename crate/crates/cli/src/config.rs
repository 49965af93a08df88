//! Flat `key = value` run configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every other line must
//! be `key = value` with a key from [`KEYS`]. Values given on the command line
//! are applied afterwards and win over the file.

use std::fmt;
use std::path::{Path, PathBuf};

use vqsense::conformal::{LossKind, StepSchedule};
use vqsense::engine::{BasisChoice, BenchmarkMode, RunConfig, TargetProcess};
use vqsense::estimator::OptimizerKind;

/// Recognized configuration keys.
pub const KEYS: &[&str] = &[
    "qubits",
    "layers",
    "levels",
    "shots",
    "T",
    "alpha",
    "tau",
    "eta_theta",
    "eta",
    "schedule",
    "lambda_init",
    "hidden_size",
    "learning_rate",
    "l2",
    "decay",
    "decay_every",
    "dropout",
    "ensemble",
    "passes",
    "optimizer",
    "mode",
    "seed",
    "trials",
    "loss",
    "basis",
    "target",
    "drift_period",
    "pretrain_samples",
    "pretrain_epochs",
    "probe_pretrain_steps",
    "probe_init_jitter",
    "static_lambda_max",
];

const DEFAULT_DRIFT_PERIOD: usize = 20;

/// Rejected configuration. Maps to exit status 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub path: Option<PathBuf>,
    pub entries: Vec<Entry>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut file =
            Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        file.path = Some(path.to_path_buf());
        Ok(file)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError(format!("line {line}: expected `key = value`")));
            };
            let key = key.trim();
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError(format!("line {line}: unknown key '{key}'")));
            }
            if value.is_empty() {
                return Err(ConfigError(format!("line {line}: empty value for '{key}'")));
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(ConfigError(format!(
                    "line {line}: '{key}' already set on line {}",
                    prev.line
                )));
            }
            entries.push(Entry {
                line,
                key: key.to_string(),
                value: value.to_string(),
            });
        }
        Ok(Self {
            path: None,
            entries,
        })
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Writes every entry onto `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        let mut eta = None;
        let mut schedule = None;
        let mut drift_period = None;
        for e in &self.entries {
            let v = e.value.as_str();
            let err = |what: &str| ConfigError(format!("line {}: {}: {what} '{v}'", e.line, e.key));
            let uint = || {
                v.parse::<usize>()
                    .map_err(|_| err("expected a non-negative integer, got"))
            };
            let real = || {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| err("expected a finite number, got"))
            };
            match e.key.as_str() {
                "qubits" => cfg.qubits = uint()?,
                "layers" => cfg.layers = uint()?,
                "levels" => cfg.levels = uint()?,
                "shots" => cfg.shots = uint()?,
                "T" => cfg.horizon = uint()?,
                "alpha" => cfg.alpha = real()?,
                "tau" => cfg.tau = real()?,
                "eta_theta" => cfg.eta_theta = real()?,
                "eta" => eta = Some(real()?),
                "schedule" => match v {
                    "constant" | "decaying" => schedule = Some(v),
                    _ => return Err(err("expected constant or decaying, got")),
                },
                "lambda_init" => cfg.lambda_init = Some(real()?),
                "hidden_size" => cfg.hidden = uint()?,
                "learning_rate" => cfg.train.learning_rate = real()?,
                "l2" => cfg.train.l2 = real()?,
                "decay" => cfg.train.decay = real()?,
                "decay_every" => cfg.train.decay_every = uint()?,
                "dropout" => cfg.train.dropout = real()?,
                "ensemble" => cfg.train.ensemble = uint()?,
                "passes" => cfg.train.passes = uint()?,
                "optimizer" => {
                    cfg.train.optimizer = match v {
                        "sgd" => OptimizerKind::Sgd,
                        "adam" => OptimizerKind::Adam,
                        _ => return Err(err("expected sgd or adam, got")),
                    }
                }
                "mode" => cfg.mode = parse_mode(v).map_err(|_| err("unknown mode"))?,
                "seed" => {
                    cfg.seed = v
                        .parse()
                        .map_err(|_| err("expected an unsigned seed, got"))?
                }
                "trials" => cfg.trials = uint()?,
                "loss" => {
                    cfg.loss = match v {
                        "coverage" => LossKind::Coverage,
                        "min-distance" => LossKind::MinDistance,
                        _ => return Err(err("expected coverage or min-distance, got")),
                    }
                }
                "basis" => {
                    cfg.basis = match v {
                        "hadamard" => BasisChoice::Hadamard,
                        "computational" => BasisChoice::Computational,
                        _ => return Err(err("expected hadamard or computational, got")),
                    }
                }
                "target" => {
                    cfg.target = match v {
                        "uniform" => TargetProcess::Uniform,
                        "drift" => TargetProcess::Drift {
                            period: DEFAULT_DRIFT_PERIOD,
                        },
                        _ => return Err(err("expected uniform or drift, got")),
                    }
                }
                "drift_period" => drift_period = Some((e.line, uint()?)),
                "pretrain_samples" => cfg.pretrain_samples = uint()?,
                "pretrain_epochs" => cfg.pretrain_epochs = uint()?,
                "probe_pretrain_steps" => cfg.probe_pretrain_steps = uint()?,
                "probe_init_jitter" => cfg.probe_init_jitter = real()?,
                "static_lambda_max" => cfg.static_lambda_max = real()?,
                other => {
                    return Err(ConfigError(format!(
                        "line {}: unknown key '{other}'",
                        e.line
                    )))
                }
            }
        }
        set_schedule(cfg, schedule, eta);
        if let Some((line, period)) = drift_period {
            match cfg.target {
                TargetProcess::Drift { .. } => cfg.target = TargetProcess::Drift { period },
                TargetProcess::Uniform => {
                    return Err(ConfigError(format!(
                        "line {line}: drift_period needs target = drift"
                    )))
                }
            }
        }
        Ok(())
    }
}

pub fn parse_mode(s: &str) -> Result<BenchmarkMode, ConfigError> {
    BenchmarkMode::parse(s).map_err(|e| ConfigError(e.to_string()))
}

/// Replaces the schedule kind and/or step size, keeping whichever is not given.
pub fn set_schedule(cfg: &mut RunConfig, kind: Option<&str>, eta: Option<f64>) {
    let current = match cfg.threshold_schedule {
        StepSchedule::Constant { eta } => eta,
        StepSchedule::Decaying { eta1 } => eta1,
    };
    let eta = eta.unwrap_or(current);
    let decaying = match kind {
        Some(k) => k == "decaying",
        None => matches!(cfg.threshold_schedule, StepSchedule::Decaying { .. }),
    };
    cfg.threshold_schedule = if decaying {
        StepSchedule::Decaying { eta1: eta }
    } else {
        StepSchedule::Constant { eta }
    };
}

/// Command-line values; each one that is set overrides the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub trials: Option<usize>,
    pub hidden: Option<usize>,
    pub eta: Option<f64>,
    pub eta_theta: Option<f64>,
    pub tau: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(m) = &self.mode {
            cfg.mode = parse_mode(m)?;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if self.eta.is_some() {
            set_schedule(cfg, None, self.eta);
        }
        if let Some(v) = self.eta_theta {
            cfg.eta_theta = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        Ok(())
    }
}

/// Defaults, then the file, then the flags; the result is validated.
pub fn resolve(
    mut base: RunConfig,
    file: Option<&ConfigFile>,
    overrides: &Overrides,
) -> Result<RunConfig, ConfigError> {
    if let Some(f) = file {
        f.apply(&mut base)?;
    }
    overrides.apply(&mut base)?;
    base.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_applies() {
        let text =
            "# comment\n\nalpha = 0.2\nT=50\nschedule = decaying\neta = 0.3\nmode = static\n";
        let file = ConfigFile::parse(text).unwrap();
        let cfg = resolve(RunConfig::default(), Some(&file), &Overrides::default()).unwrap();
        assert_eq!(cfg.alpha, 0.2);
        assert_eq!(cfg.horizon, 50);
        assert_eq!(cfg.threshold_schedule, StepSchedule::Decaying { eta1: 0.3 });
        assert_eq!(cfg.mode, BenchmarkMode::Static);
    }

    #[test]
    fn flags_win_over_file() {
        let file = ConfigFile::parse("alpha = 0.2\neta = 0.3\n").unwrap();
        let o = Overrides {
            alpha: Some(0.4),
            ..Overrides::default()
        };
        let cfg = resolve(RunConfig::default(), Some(&file), &o).unwrap();
        assert_eq!(cfg.alpha, 0.4);
        assert_eq!(cfg.threshold_schedule, StepSchedule::Constant { eta: 0.3 });
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ConfigFile::parse("alpha = 0.2\nbogus = 1\n").unwrap_err();
        assert!(e.0.starts_with("line 2:"), "{e}");
        let e = ConfigFile::parse("\nalpha 0.2\n").unwrap_err();
        assert!(e.0.starts_with("line 2:"), "{e}");
        let e = ConfigFile::parse("alpha = 0.1\nalpha = 0.2\n").unwrap_err();
        assert!(e.0.contains("line 1"), "{e}");
        let file = ConfigFile::parse("qubits = 4\n\ntrials = many\n").unwrap();
        let e = file.apply(&mut RunConfig::default()).unwrap_err();
        assert!(e.0.starts_with("line 3: trials"), "{e}");
    }

    #[test]
    fn invalid_values_are_rejected_after_merge() {
        let file = ConfigFile::parse("alpha = 1.5\n").unwrap();
        assert!(resolve(RunConfig::default(), Some(&file), &Overrides::default()).is_err());
    }

    #[test]
    fn drift_period_requires_drift_target() {
        let file = ConfigFile::parse("drift_period = 5\n").unwrap();
        assert!(file.apply(&mut RunConfig::default()).is_err());
        let file = ConfigFile::parse("target = drift\ndrift_period = 5\n").unwrap();
        let mut cfg = RunConfig::default();
        file.apply(&mut cfg).unwrap();
        assert_eq!(cfg.target, TargetProcess::Drift { period: 5 });
    }
}
