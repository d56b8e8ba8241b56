//! Run configuration: defaults, then a JSON file, then command-line flags.
//!
//! The file is parsed key by key so that unknown keys and type errors are
//! reported by name.

use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::metrics::{Baseline, EvalConfig, DEFAULT_STEPS, DEFAULT_THRESHOLD};
use crate::optimizer::{OptimizerConfig, Readout};
use crate::reconstruction::{
    LatentOptions, ReconstructionConfig, DEFAULT_FACTORS, DEFAULT_KERNEL, DEFAULT_LAMBDA_DIS, DEFAULT_LATENT_DIM,
    DEFAULT_SAMPLES,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub iterations: usize,
    pub grid: (usize, usize),
    pub initial_on_fraction: f64,
    pub learning_rate: f64,
    pub readout: Readout,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub steps: usize,
    pub baseline: Baseline,
    pub threshold: f64,
    pub kernel: usize,
    pub samples: usize,
    pub latent_dim: usize,
    pub lambda_dis: f64,
    pub latent_iterations: usize,
    pub perturbation: f64,
    pub step_size: f64,
    pub factors: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        let latent = LatentOptions::default();
        Self {
            iterations: opt.iterations,
            grid: opt.grid,
            initial_on_fraction: opt.initial_on_fraction,
            learning_rate: opt.learning_rate,
            readout: opt.readout,
            seed: 0,
            checkpoint_every: opt.checkpoint_every,
            steps: DEFAULT_STEPS,
            baseline: Baseline::Zeros,
            threshold: DEFAULT_THRESHOLD,
            kernel: DEFAULT_KERNEL,
            samples: DEFAULT_SAMPLES,
            latent_dim: DEFAULT_LATENT_DIM,
            lambda_dis: DEFAULT_LAMBDA_DIS,
            latent_iterations: latent.iterations,
            perturbation: latent.perturbation,
            step_size: latent.step_size,
            factors: DEFAULT_FACTORS.to_vec(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "iterations",
    "grid",
    "initial_on_fraction",
    "learning_rate",
    "readout",
    "seed",
    "checkpoint_every",
    "steps",
    "baseline",
    "threshold",
    "kernel",
    "samples",
    "latent_dim",
    "lambda_dis",
    "latent_iterations",
    "perturbation",
    "step_size",
    "factors",
];

fn type_error(key: &str, expected: &str) -> Error {
    Error::Config(format!("key `{key}` must be {expected}"))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64()
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| type_error(key, "a non-negative integer"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| type_error(key, "a number"))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| type_error(key, "a string"))
}

/// `"HxW"` or `"H,W"`.
pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X', ','])
        .ok_or_else(|| Error::Argument(format!("grid `{s}` must look like 7x7")))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| Error::Argument(format!("grid `{s}` must look like 7x7")))
    };
    Ok((parse(h)?, parse(w)?))
}

/// Comma-separated reals.
pub fn parse_factors(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Argument(format!("bad factor `{t}`")))
        })
        .collect()
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        if text.trim().is_empty() {
            return Ok(cfg);
        }
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let map = value
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        cfg.apply(map)?;
        Ok(cfg)
    }

    /// Overlays every key in `map`; unknown keys are rejected.
    pub fn apply(&mut self, map: &Map<String, Value>) -> Result<()> {
        for (key, v) in map {
            let k = key.as_str();
            match k {
                "iterations" => self.iterations = as_usize(k, v)?,
                "grid" => {
                    self.grid = match v {
                        Value::String(s) => parse_grid(s).map_err(|_| type_error(k, "[h, w] or \"HxW\""))?,
                        Value::Array(a) if a.len() == 2 => (as_usize(k, &a[0])?, as_usize(k, &a[1])?),
                        _ => return Err(type_error(k, "[h, w] or \"HxW\"")),
                    }
                }
                "initial_on_fraction" => self.initial_on_fraction = as_f64(k, v)?,
                "learning_rate" => self.learning_rate = as_f64(k, v)?,
                "readout" => {
                    self.readout = as_str(k, v)?
                        .parse()
                        .map_err(|_| type_error(k, "\"score-weighted\" or \"final-iterate\""))?
                }
                "seed" => self.seed = v.as_u64().ok_or_else(|| type_error(k, "a non-negative integer"))?,
                "checkpoint_every" => self.checkpoint_every = as_usize(k, v)?,
                "steps" => self.steps = as_usize(k, v)?,
                "baseline" => {
                    self.baseline = as_str(k, v)?
                        .parse()
                        .map_err(|_| type_error(k, "\"zeros\", \"blur\" or \"blur:<sigma>\""))?
                }
                "threshold" => self.threshold = as_f64(k, v)?,
                "kernel" => self.kernel = as_usize(k, v)?,
                "samples" => self.samples = as_usize(k, v)?,
                "latent_dim" => self.latent_dim = as_usize(k, v)?,
                "lambda_dis" => self.lambda_dis = as_f64(k, v)?,
                "latent_iterations" => self.latent_iterations = as_usize(k, v)?,
                "perturbation" => self.perturbation = as_f64(k, v)?,
                "step_size" => self.step_size = as_f64(k, v)?,
                "factors" => {
                    self.factors = v
                        .as_array()
                        .ok_or_else(|| type_error(k, "an array of numbers"))?
                        .iter()
                        .map(|x| as_f64(k, x))
                        .collect::<Result<_>>()?
                }
                other => return Err(Error::Config(format!("unknown config key `{other}`"))),
            }
        }
        Ok(())
    }

    /// Every key with its resolved value; `from_json_str` accepts it back.
    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "iterations": self.iterations,
            "grid": [self.grid.0, self.grid.1],
            "initial_on_fraction": self.initial_on_fraction,
            "learning_rate": self.learning_rate,
            "readout": match self.readout {
                Readout::ScoreWeighted => "score-weighted",
                Readout::FinalIterate => "final-iterate",
            },
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "steps": self.steps,
            "baseline": self.baseline.name(),
            "threshold": self.threshold,
            "kernel": self.kernel,
            "samples": self.samples,
            "latent_dim": self.latent_dim,
            "lambda_dis": self.lambda_dis,
            "latent_iterations": self.latent_iterations,
            "perturbation": self.perturbation,
            "step_size": self.step_size,
            "factors": self.factors,
        })
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            iterations: self.iterations,
            grid: self.grid,
            initial_on_fraction: self.initial_on_fraction,
            learning_rate: self.learning_rate,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            readout: self.readout,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            steps: self.steps,
            baseline: self.baseline,
            threshold: self.threshold,
        }
    }

    pub fn latent(&self) -> LatentOptions {
        LatentOptions {
            iterations: self.latent_iterations,
            lambda_dis: self.lambda_dis,
            perturbation: self.perturbation,
            step_size: self.step_size,
            seed: self.seed,
        }
    }

    pub fn reconstruction(&self) -> ReconstructionConfig {
        ReconstructionConfig {
            samples: self.samples,
            kernel: self.kernel,
            threshold: self.threshold,
            latent: self.latent(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.optimizer().validate().map_err(cfg)?;
        self.latent().validate().map_err(cfg)?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.kernel < 3 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel {} must be odd and >= 3", self.kernel)));
        }
        if self.samples == 0 || self.latent_dim == 0 {
            return Err(Error::Config("samples and latent_dim must be at least 1".into()));
        }
        if self.factors.is_empty() || self.factors.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("factors must be a non-empty list in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Reads and validates a config file; a missing path yields the defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_json_str(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}
