//! Experiment configuration: flat `section.key = value` text, presets, and
//! `--section.key=value` overrides. The digest is taken over the fully
//! resolved, sorted key set, so it does not depend on the order of lines.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use ungrounded_core::encoder::InitScheme;
use ungrounded_core::fonts::SyntheticFont;
use ungrounded_core::losses::LossKind;
use ungrounded_core::optim::{OptimizerConfig, OptimizerKind};
use ungrounded_core::training::{EarlyStop, TrainConfig};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 2^20 pairs, 64 restarts, 10,000 windows per side.
    Full,
    /// 2^16 pairs, 8 restarts, 500 windows per side.
    Desk,
}

impl FromStr for Preset {
    type Err = AppError;

    fn from_str(s: &str) -> AppResult<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(AppError::config(format!("unknown preset `{other}` (expected full or desk)"))),
        }
    }
}

/// Every recognized key with its default (desk scale).
const DEFAULTS: &[(&str, &str)] = &[
    ("corpus.path", "data/english.txt"),
    ("corpus.eval_fraction", "0.05"),
    ("font.kind", "synthetic"),
    ("font.emnist_dir", "data/emnist"),
    ("font.cifar_dir", "data/cifar-100-binary"),
    ("font.dim", "64"),
    ("font.sigma", "0.1"),
    ("font.seed", "0"),
    ("font.train_per_class", "200"),
    ("font.test_per_class", "100"),
    ("font.permutation_seed", "1"),
    ("train.pairs", "65536"),
    ("train.steps", "10000"),
    ("train.restarts", "8"),
    ("train.loss", "bigram_contrastive"),
    ("train.init", "xavier"),
    ("train.optimizer", "adam"),
    ("train.rate", "0.001"),
    ("train.trace_every", "100"),
    ("train.early_stop_window", "500"),
    ("train.early_stop_tol", "0.00001"),
    ("train.minibatch", "0"),
    ("train.seed", "0"),
    ("train.splits", "1"),
    ("eval.trigger", "fnord"),
    ("eval.n_per_side", "500"),
    ("eval.per_class", "100"),
    ("eval.suite_per_source", "100"),
    ("eval.seed", "0"),
    ("probe.points", "21"),
    ("cluster.k", "26"),
    ("cluster.max_iters", "100"),
    ("cluster.seed", "0"),
    ("cluster.stream_letters", "20000"),
    ("output.dir", "runs"),
];

fn preset_values(p: Preset) -> &'static [(&'static str, &'static str)] {
    match p {
        Preset::Full => &[
            ("train.pairs", "1048576"),
            ("train.restarts", "64"),
            ("train.splits", "10"),
            ("eval.n_per_side", "10000"),
        ],
        Preset::Desk => &[("train.pairs", "65536"), ("train.restarts", "8"), ("train.splits", "1"), ("eval.n_per_side", "500")],
    }
}

/// Parses `key = value` lines; `#` starts a comment. A `[section]` line
/// prefixes the following bare keys with `section.`.
pub fn parse_config_text(text: &str) -> AppResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| AppError::config(format!("line {}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        let key = if section.is_empty() || k.contains('.') { k.to_string() } else { format!("{section}.{k}") };
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Parses `--section.key=value` flags.
pub fn parse_overrides(args: &[String]) -> AppResult<BTreeMap<String, String>> {
    args.iter()
        .map(|a| {
            let body = a
                .strip_prefix("--")
                .ok_or_else(|| AppError::config(format!("override `{a}` must look like --key=value")))?;
            let (k, v) =
                body.split_once('=').ok_or_else(|| AppError::config(format!("override `{a}` must look like --key=value")))?;
            Ok((k.to_string(), v.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum FontSource {
    Emnist(PathBuf),
    Cifar26(PathBuf),
    Synthetic(SyntheticFont),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub values: BTreeMap<String, String>,
    pub corpus_path: PathBuf,
    pub eval_fraction: f64,
    pub font: FontSource,
    pub permutation_seed: u64,
    pub pairs: usize,
    pub splits: usize,
    pub train: TrainConfig,
    pub trigger: String,
    pub n_per_side: usize,
    pub per_class: usize,
    pub suite_per_source: usize,
    pub eval_seed: u64,
    pub probe_points: usize,
    pub cluster_k: usize,
    pub cluster_max_iters: usize,
    pub cluster_seed: u64,
    pub cluster_stream_letters: usize,
    pub output_dir: PathBuf,
}

fn get<T: FromStr>(v: &BTreeMap<String, String>, key: &str) -> AppResult<T> {
    let raw = v.get(key).ok_or_else(|| AppError::config(format!("missing key `{key}`")))?;
    raw.parse().map_err(|_| AppError::config(format!("`{key}`: cannot parse `{raw}`")))
}

impl ExperimentConfig {
    /// Defaults, then the preset, then the file, then the overrides.
    pub fn resolve(
        preset: Option<Preset>,
        file: Option<&Path>,
        overrides: &BTreeMap<String, String>,
    ) -> AppResult<Self> {
        let mut values: BTreeMap<String, String> =
            DEFAULTS.iter().map(|&(k, v)| (k.to_string(), v.to_string())).collect();
        if let Some(p) = preset {
            for &(k, v) in preset_values(p) {
                values.insert(k.into(), v.into());
            }
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
            values.extend(parse_config_text(&text)?);
        }
        values.extend(overrides.clone());
        Self::from_values(values)
    }

    pub fn from_values(values: BTreeMap<String, String>) -> AppResult<Self> {
        if let Some(unknown) = values.keys().find(|k| !DEFAULTS.iter().any(|(d, _)| d == k)) {
            return Err(AppError::config(format!("unknown key `{unknown}`")));
        }
        let v = &values;
        let font = match get::<String>(v, "font.kind")?.as_str() {
            "emnist" => FontSource::Emnist(get(v, "font.emnist_dir")?),
            "cifar26" => FontSource::Cifar26(get(v, "font.cifar_dir")?),
            "synthetic" => FontSource::Synthetic(SyntheticFont {
                dim: get(v, "font.dim")?,
                sigma: get(v, "font.sigma")?,
                seed: get(v, "font.seed")?,
                train_per_class: get(v, "font.train_per_class")?,
                test_per_class: get(v, "font.test_per_class")?,
            }),
            other => return Err(AppError::config(format!("font.kind `{other}` is not emnist, cifar26 or synthetic"))),
        };
        let kind = OptimizerKind::from_name(&get::<String>(v, "train.optimizer")?).map_err(|e| AppError::config(e.to_string()))?;
        let loss: LossKind = get::<String>(v, "train.loss")?.parse().map_err(|e: ungrounded_core::Error| AppError::config(e.to_string()))?;
        let init: InitScheme =
            get::<String>(v, "train.init")?.parse().map_err(|e: ungrounded_core::Error| AppError::config(e.to_string()))?;
        let window: usize = get(v, "train.early_stop_window")?;
        let minibatch: usize = get(v, "train.minibatch")?;
        let train = TrainConfig {
            steps: get(v, "train.steps")?,
            optimizer: OptimizerConfig { kind, rate: get(v, "train.rate")? },
            restarts: get(v, "train.restarts")?,
            loss,
            init_scheme: init,
            seed: get(v, "train.seed")?,
            trace_every: get(v, "train.trace_every")?,
            early_stop: (window > 0).then(|| EarlyStop { window, min_improvement: get(v, "train.early_stop_tol").unwrap_or(1e-5) }),
            minibatch: (minibatch > 0).then_some(minibatch),
        };
        train.validate().map_err(|e| AppError::config(e.to_string()))?;
        let cfg = Self {
            corpus_path: get(v, "corpus.path")?,
            eval_fraction: get(v, "corpus.eval_fraction")?,
            font,
            permutation_seed: get(v, "font.permutation_seed")?,
            pairs: get(v, "train.pairs")?,
            splits: get(v, "train.splits")?,
            train,
            trigger: get(v, "eval.trigger")?,
            n_per_side: get(v, "eval.n_per_side")?,
            per_class: get(v, "eval.per_class")?,
            suite_per_source: get(v, "eval.suite_per_source")?,
            eval_seed: get(v, "eval.seed")?,
            probe_points: get(v, "probe.points")?,
            cluster_k: get(v, "cluster.k")?,
            cluster_max_iters: get(v, "cluster.max_iters")?,
            cluster_seed: get(v, "cluster.seed")?,
            cluster_stream_letters: get(v, "cluster.stream_letters")?,
            output_dir: get(v, "output.dir")?,
            values,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> AppResult<()> {
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(AppError::config("corpus.eval_fraction must lie in (0, 1)"));
        }
        if self.pairs == 0 || self.splits == 0 || self.n_per_side == 0 || self.per_class == 0 {
            return Err(AppError::config("pairs, splits, n_per_side and per_class must be positive"));
        }
        if ungrounded_core::alphabet::parse(&self.trigger).is_empty() {
            return Err(AppError::config("eval.trigger must contain at least one letter"));
        }
        if self.probe_points < 2 {
            return Err(AppError::config("probe.points must be at least 2"));
        }
        Ok(())
    }

    /// SHA-256 over `key=value\n` for every resolved key in sorted order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// `output.dir/<first 16 hex digits of the digest>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.digest()[..16])
    }

    /// The resolved configuration as config-file text.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
