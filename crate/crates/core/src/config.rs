//! Flat `key = value` configuration text.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Keys not listed by [`MODEL_KEYS`] or [`TRAIN_KEYS`] are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

pub const MODEL_KEYS: &[&str] = &[
    "history_len",
    "horizon",
    "levels",
    "hops",
    "alpha",
    "beta",
    "input_dim",
    "hidden_dim",
    "gamma",
    "eta",
    "lambda",
    "threshold",
    "road_sigma",
    "road_kappa",
    "seed",
];

pub const TRAIN_KEYS: &[&str] = &[
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "epochs",
    "batch_size",
    "tau",
    "cl_step",
    "grad_clip",
    "windows_per_epoch",
    "graph_windows",
    "horizons",
    "split",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Splits text into `(line number, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid value `{v}` for `{key}`"),
    })
}

fn list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| num(line, key, p.trim())).collect()
}

/// Applies one model setting; returns `Ok(false)` if `key` is not a model key.
pub fn set_model_key(cfg: &mut ModelConfig, line: usize, key: &str, v: &str) -> Result<bool> {
    match key {
        "history_len" => cfg.history_len = num(line, key, v)?,
        "horizon" => cfg.horizon = num(line, key, v)?,
        "levels" => cfg.levels = num(line, key, v)?,
        "hops" => cfg.hops = num(line, key, v)?,
        "alpha" => cfg.alpha = num(line, key, v)?,
        "beta" => cfg.beta = num(line, key, v)?,
        "input_dim" => cfg.input_dim = num(line, key, v)?,
        "hidden_dim" => cfg.hidden_dim = num(line, key, v)?,
        "gamma" => cfg.gamma = num(line, key, v)?,
        "eta" => cfg.eta = num(line, key, v)?,
        "lambda" => cfg.lambda = num(line, key, v)?,
        "threshold" => cfg.threshold = num(line, key, v)?,
        "road_sigma" => {
            cfg.road_sigma = match v {
                "auto" => None,
                _ => Some(num(line, key, v)?),
            }
        }
        "road_kappa" => cfg.road_kappa = num(line, key, v)?,
        "seed" => cfg.seed = num(line, key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Applies one training setting; returns `Ok(false)` if `key` is not a training key.
pub fn set_train_key(cfg: &mut TrainConfig, line: usize, key: &str, v: &str) -> Result<bool> {
    match key {
        "lr" => cfg.lr = num(line, key, v)?,
        "adam_beta1" => cfg.adam_beta1 = num(line, key, v)?,
        "adam_beta2" => cfg.adam_beta2 = num(line, key, v)?,
        "adam_eps" => cfg.adam_eps = num(line, key, v)?,
        "epochs" => cfg.epochs = num(line, key, v)?,
        "batch_size" => cfg.batch_size = num(line, key, v)?,
        "tau" => cfg.tau = num(line, key, v)?,
        "cl_step" => cfg.cl_step = num(line, key, v)?,
        "grad_clip" => cfg.grad_clip = num(line, key, v)?,
        "windows_per_epoch" => cfg.windows_per_epoch = num(line, key, v)?,
        "graph_windows" => cfg.graph_windows = num(line, key, v)?,
        "horizons" => cfg.horizons = list(line, key, v)?,
        "split" => {
            let parts: Vec<f64> = list(line, key, v)?;
            cfg.split = parts.try_into().map_err(|p: Vec<f64>| Error::Parse {
                line,
                msg: format!("`split` needs 3 fractions, got {}", p.len()),
            })?;
        }
        _ => return Ok(false),
    }
    Ok(true)
}

impl RunConfig {
    /// Parses and validates configuration text; unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (line, key, v) in parse_pairs(text)? {
            if !seen.insert(key.clone()) {
                return Err(Error::Config(format!("line {line}: duplicate key `{key}`")));
            }
            if !set_model_key(&mut cfg.model, line, &key, &v)? && !set_train_key(&mut cfg.train, line, &key, &v)? {
                return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
            }
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        if let Some(h) = cfg.train.horizons.iter().find(|&&h| h > cfg.model.horizon) {
            return Err(Error::Config(format!("reported horizon {h} exceeds horizon {}", cfg.model.horizon)));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = model_text(&self.model);
        let t = &self.train;
        let join = |v: &[String]| v.join(", ");
        let _ = writeln!(s, "lr = {}", t.lr);
        let _ = writeln!(s, "adam_beta1 = {}", t.adam_beta1);
        let _ = writeln!(s, "adam_beta2 = {}", t.adam_beta2);
        let _ = writeln!(s, "adam_eps = {}", t.adam_eps);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "tau = {}", t.tau);
        let _ = writeln!(s, "cl_step = {}", t.cl_step);
        let _ = writeln!(s, "grad_clip = {}", t.grad_clip);
        let _ = writeln!(s, "windows_per_epoch = {}", t.windows_per_epoch);
        let _ = writeln!(s, "graph_windows = {}", t.graph_windows);
        let _ = writeln!(s, "horizons = {}", join(&t.horizons.iter().map(|h| h.to_string()).collect::<Vec<_>>()));
        let _ = writeln!(s, "split = {}", join(&t.split.iter().map(|f| f.to_string()).collect::<Vec<_>>()));
        s
    }
}

/// Model settings as `key = value` lines. Floats print with round-trip precision.
pub fn model_text(m: &ModelConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "history_len = {}", m.history_len);
    let _ = writeln!(s, "horizon = {}", m.horizon);
    let _ = writeln!(s, "levels = {}", m.levels);
    let _ = writeln!(s, "hops = {}", m.hops);
    let _ = writeln!(s, "alpha = {}", m.alpha);
    let _ = writeln!(s, "beta = {}", m.beta);
    let _ = writeln!(s, "input_dim = {}", m.input_dim);
    let _ = writeln!(s, "hidden_dim = {}", m.hidden_dim);
    let _ = writeln!(s, "gamma = {}", m.gamma);
    let _ = writeln!(s, "eta = {}", m.eta);
    let _ = writeln!(s, "lambda = {}", m.lambda);
    let _ = writeln!(s, "threshold = {}", m.threshold);
    match m.road_sigma {
        Some(v) => {
            let _ = writeln!(s, "road_sigma = {v}");
        }
        None => s.push_str("road_sigma = auto\n"),
    }
    let _ = writeln!(s, "road_kappa = {}", m.road_kappa);
    let _ = writeln!(s, "seed = {}", m.seed);
    s
}
