//! Config-driven experiment runs.
//!
//! A config names a corpus, a base [`TrainConfig`] and a grid over
//! strategies, fix-step budgets and size priors. Every grid point trains
//! from the same seed and writes its own directory:
//!
//! ```text
//! <out>/<run>/curve.csv     epoch,strategy,train_accuracy,fixes_found,mean_buffer_size,loss
//! <out>/<run>/report.json   beam evaluation on the test split
//! <out>/<run>/buffer.tsv    problem id <TAB> prefix expression
//! <out>/<run>/policy.ckpt   parameter checkpoint
//! <out>/summary.json        one entry per run
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{load_math23k, synthetic_corpus, Corpus, DataError, Problem};
use crate::eval::{evaluate, EvalReport};
use crate::learner::{ConfigError, Counters, EpochStats, StrategyRegistry, TrainConfig, Trainer};
use crate::tree_reg::SizePrior;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Math23K-format JSON file, relative to the config file.
    pub path: Option<PathBuf>,
    /// Size of a generated synthetic corpus when `path` is absent.
    pub synthetic: Option<usize>,
    /// Seed of the generated corpus; independent of the run seed.
    pub synthetic_seed: u64,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            synthetic: Some(200),
            synthetic_seed: 0,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Strategy names; empty means `train.strategy` only.
    pub strategies: Vec<String>,
    /// Fix-step budgets; empty means `train.fix_steps` only.
    pub fix_steps: Vec<usize>,
    /// Size priors; empty means `train.size_prior` only.
    pub size_priors: Vec<SizePrior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("writing curve: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.data.path, path.parent()) {
            if p.is_relative() {
                cfg.data.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let field = |f: &str, m: &str| ExperimentError::Field {
            field: f.into(),
            message: m.into(),
        };
        if self.version != CONFIG_VERSION {
            return Err(field("version", &format!("unsupported version, expected {CONFIG_VERSION}")));
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(field("data.test_fraction", "must lie in [0, 1)"));
        }
        if self.data.path.is_none() && self.data.synthetic.is_none_or(|n| n == 0) {
            return Err(field("data", "set either `path` or a positive `synthetic` size"));
        }
        self.train.validate().map_err(|e| match e {
            ConfigError::Invalid { field: f, message } => field(&format!("train.{f}"), &message),
            ConfigError::UnknownStrategy(s) => field("train.strategy", &format!("unknown strategy `{s}`")),
        })?;
        let registry = StrategyRegistry::default();
        for (i, s) in self.grid.strategies.iter().enumerate() {
            if registry.create(s).is_err() {
                return Err(field(&format!("grid.strategies[{i}]"), &format!("unknown strategy `{s}`")));
            }
        }
        if registry.create(&self.train.strategy).is_err() {
            return Err(field("train.strategy", &format!("unknown strategy `{}`", self.train.strategy)));
        }
        if let Some(i) = self.grid.fix_steps.iter().position(|&m| m == 0) {
            return Err(field(&format!("grid.fix_steps[{i}]"), "must be at least 1"));
        }
        Ok(())
    }

    pub fn load_corpus(&self) -> Result<Corpus, ExperimentError> {
        Ok(match (&self.data.path, self.data.synthetic) {
            (Some(path), _) => load_math23k(path)?,
            (None, Some(n)) => synthetic_corpus(n, self.data.synthetic_seed),
            (None, None) => unreachable!("validated"),
        })
    }

    /// Concrete training configs for every grid point, with run names.
    pub fn runs(&self) -> Vec<(String, TrainConfig)> {
        let strategies = if self.grid.strategies.is_empty() {
            vec![self.train.strategy.clone()]
        } else {
            self.grid.strategies.clone()
        };
        let steps = if self.grid.fix_steps.is_empty() {
            vec![self.train.fix_steps]
        } else {
            self.grid.fix_steps.clone()
        };
        let priors = if self.grid.size_priors.is_empty() {
            vec![self.train.size_prior]
        } else {
            self.grid.size_priors.clone()
        };
        let mut out = Vec::new();
        for s in &strategies {
            for &m in &steps {
                for p in &priors {
                    let mut name = s.clone();
                    if steps.len() > 1 {
                        name.push_str(&format!("-m{m}"));
                    }
                    if priors.len() > 1 {
                        name.push_str(&format!("-size{}_{}_{}_{}", p.a_min, p.b_min, p.a_max, p.b_max));
                    }
                    out.push((
                        name,
                        TrainConfig {
                            strategy: s.clone(),
                            fix_steps: m,
                            size_prior: *p,
                            ..self.train.clone()
                        },
                    ));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub strategy: String,
    pub fix_steps: usize,
    pub size_prior: SizePrior,
    pub final_train_accuracy: f64,
    pub test_acc_all: BTreeMap<String, f64>,
    pub test_acc_mean_rank: BTreeMap<String, f64>,
    pub buffer_sound: bool,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub train_problems: usize,
    pub test_problems: usize,
    pub runs: Vec<RunSummary>,
}

/// Everything a single grid point produced, kept in memory for callers that
/// want more than the files.
pub struct RunOutput {
    pub summary: RunSummary,
    pub curve: Vec<EpochStats>,
    pub report: EvalReport,
    pub trainer: Trainer,
}

pub fn split_corpus(corpus: &Corpus, test_fraction: f64, seed: u64) -> (Vec<Problem>, Vec<Problem>) {
    let (train, test) = corpus.split(1.0 - test_fraction, seed);
    (
        train.iter().map(|&i| corpus.problems[i].clone()).collect(),
        test.iter().map(|&i| corpus.problems[i].clone()).collect(),
    )
}

/// Trains and evaluates one grid point, writing its artifacts under `dir`
/// when given.
pub fn run_one(
    name: &str,
    config: &TrainConfig,
    train: &[Problem],
    test: &[Problem],
    seed: u64,
    dir: Option<&Path>,
) -> Result<RunOutput, ExperimentError> {
    let registry = StrategyRegistry::default();
    let mut trainer = Trainer::new(&registry, config.clone(), train, seed).map_err(|e| ExperimentError::Field {
        field: "train".into(),
        message: e.to_string(),
    })?;
    let mut writer = match dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(io_err(d))?;
            let path = d.join("curve.csv");
            Some(csv::Writer::from_path(&path)?)
        }
        None => None,
    };
    let mut write_error = None;
    let curve = trainer.run(train, |row| {
        if let Some(w) = writer.as_mut() {
            // flush per row so an interrupted run keeps its curve
            if let Err(e) = w.serialize(row).and_then(|_| w.flush().map_err(csv::Error::from)) {
                write_error.get_or_insert(e);
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e.into());
    }
    let report = evaluate(&trainer.state.policy, test, &config.size_prior, config.beam_width);
    let summary = RunSummary {
        name: name.to_string(),
        strategy: config.strategy.clone(),
        fix_steps: config.fix_steps,
        size_prior: config.size_prior,
        final_train_accuracy: curve.last().map_or(0.0, |s| s.train_accuracy),
        test_acc_all: report.acc_all.clone(),
        test_acc_mean_rank: report.acc_mean_rank.clone(),
        buffer_sound: trainer.state.buffers.is_sound(train),
        counters: trainer.state.counters,
    };
    if let Some(d) = dir {
        write_file(&d.join("report.json"), &to_json(&report))?;
        write_file(&d.join("buffer.tsv"), &trainer.state.buffers.dump())?;
        write_file(&d.join("policy.ckpt"), &trainer.state.policy.to_checkpoint())?;
    }
    Ok(RunOutput {
        summary,
        curve,
        report,
        trainer,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(contents.as_bytes()).map_err(io_err(path))
}

/// Runs every grid point of `config` and writes artifacts under `out`.
pub fn run_experiment(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<ExperimentSummary, ExperimentError> {
    config.validate()?;
    let corpus = config.load_corpus()?;
    let (train, test) = split_corpus(&corpus, config.data.test_fraction, seed);
    log::info!("{} train / {} test problems", train.len(), test.len());
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut runs = Vec::new();
    for (name, cfg) in config.runs() {
        log::info!("run {name}");
        let output = run_one(&name, &cfg, &train, &test, seed, Some(&out.join(&name)))?;
        runs.push(output.summary);
        let summary = ExperimentSummary {
            seed,
            train_problems: train.len(),
            test_problems: test.len(),
            runs: runs.clone(),
        };
        write_file(&out.join("summary.json"), &to_json(&summary))?;
    }
    Ok(ExperimentSummary {
        seed,
        train_problems: train.len(),
        test_problems: test.len(),
        runs,
    })
}
