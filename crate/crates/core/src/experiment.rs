//! Configuration-driven training runs, hyperparameter sweeps and normalized
//! comparison reports.
//!
//! A run writes three kinds of artifacts into its output directory:
//!
//! * `metrics.csv` with header `epoch,split,cvar_<a>...,accuracy,mean_loss`,
//!   one train and one val row per epoch;
//! * `tail_<a>.txt` per evaluation level: the largest `ceil(a n)` validation
//!   losses at the end of training, one per line in increasing order;
//! * `metadata.txt`, flat `key=value` lines holding every resolved setting
//!   (schedule, loss constants, seeds, sizes).
//!
//! `config.cfg` holds the configuration itself so a run can be repeated.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{self, CsvSchema, Dataset, Example};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Evaluation};
use crate::models::{BoundTransform, LossModel, ModelKind};
use crate::objective::{g_alpha, AugmentedPoint, RiskParams};
use crate::optim::{
    check_cond_c, estimate_constants, schedule_alg1, schedule_alg3, schedule_alg4, Direction,
    FeasibleRegion, MinibatchSmoothing, Optimizer, Sampling, StepStats,
};
use crate::smoothing::{PlusFunction, PlusKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algo {
    Vanilla,
    CvarMinibatch,
    CvarSgd,
    OgdCvar,
    NonconvexOgd,
}

impl Algo {
    pub const ALL: [Algo; 5] = [
        Algo::Vanilla,
        Algo::CvarMinibatch,
        Algo::CvarSgd,
        Algo::OgdCvar,
        Algo::NonconvexOgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Vanilla => "vanilla",
            Algo::CvarMinibatch => "cvar-minibatch",
            Algo::CvarSgd => "cvar-sgd",
            Algo::OgdCvar => "ogd-cvar",
            Algo::NonconvexOgd => "nonconvex-ogd",
        }
    }

    fn uses_tau(self) -> bool {
        matches!(self, Algo::CvarSgd | Algo::OgdCvar | Algo::NonconvexOgd)
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("algo: unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Libsvm,
    Idx,
    /// `dataset` is a generator spec such as `twopoint:n=500,p=0.3` or
    /// `heavytail:n=3000,dim=10`.
    Synth,
}

impl DataFormat {
    fn name(self) -> &'static str {
        match self {
            DataFormat::Csv => "csv",
            DataFormat::Libsvm => "libsvm",
            DataFormat::Idx => "idx",
            DataFormat::Synth => "synth",
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "csv" => DataFormat::Csv,
            "libsvm" => DataFormat::Libsvm,
            "idx" => DataFormat::Idx,
            "synth" => DataFormat::Synth,
            _ => return Err(Error::Config(format!("format: unknown format `{s}`"))),
        })
    }
}

/// Constraint set for the model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionSpec {
    Ball(f64),
    /// The same interval for every coordinate.
    Box(f64, f64),
    Unconstrained,
}

impl RegionSpec {
    fn build(self, dim: usize, tau_bound: f64) -> Result<FeasibleRegion> {
        match self {
            RegionSpec::Ball(r) => FeasibleRegion::ball(r, tau_bound),
            RegionSpec::Box(lo, hi) => FeasibleRegion::boxed(vec![lo; dim], vec![hi; dim], tau_bound),
            RegionSpec::Unconstrained => FeasibleRegion::unconstrained(tau_bound),
        }
    }
}

impl fmt::Display for RegionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionSpec::Ball(r) => write!(f, "ball:{r}"),
            RegionSpec::Box(lo, hi) => write!(f, "box:{lo}:{hi}"),
            RegionSpec::Unconstrained => f.write_str("unconstrained"),
        }
    }
}

impl FromStr for RegionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("region: expected ball:R, box:LO:HI or unconstrained, got `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let spec = match parts.as_slice() {
            ["unconstrained"] => RegionSpec::Unconstrained,
            ["ball", r] => RegionSpec::Ball(num(r)?),
            ["box", lo, hi] => RegionSpec::Box(num(lo)?, num(hi)?),
            _ => return Err(bad()),
        };
        match spec {
            RegionSpec::Ball(r) if !(r.is_finite() && r > 0.0) => Err(bad()),
            RegionSpec::Box(lo, hi) if !(lo.is_finite() && hi.is_finite() && lo < hi) => Err(bad()),
            _ => Ok(spec),
        }
    }
}

/// Which parameters are scored after each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPoint {
    Last,
    Average,
}

/// Every knob of a run. Serialized as `key = value` lines in [`Self::KEYS`]
/// order; empty values stand for unset optional fields.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algo: Algo,
    /// Tail level optimized by the CVaR methods.
    pub alpha: f64,
    pub epochs: usize,
    /// Minibatch size; runs use `min(batch_size, n_train)`.
    pub batch_size: usize,
    /// Step size. When unset the CVaR methods use their theoretical schedules.
    pub lr: Option<f64>,
    /// Smoothing width; by default tied to the step size as in the schedules.
    pub eps: Option<f64>,
    pub weight_decay: f64,
    pub dataset: String,
    pub format: DataFormat,
    /// Label file for `idx` data.
    pub labels: Option<String>,
    /// Keep only the first `limit` examples.
    pub limit: Option<usize>,
    pub target_column: Option<usize>,
    pub classification: bool,
    pub model: ModelKind,
    pub hidden: usize,
    /// Loss range `[0, B]` after the bound transform.
    pub bound: f64,
    pub transform: BoundTransform,
    pub smoothing: PlusKind,
    pub minibatch_smoothing: MinibatchSmoothing,
    pub region: RegionSpec,
    pub sampling: Sampling,
    pub seed: u64,
    pub eval_alphas: Vec<f64>,
    pub train_fraction: f64,
    pub standardize: bool,
    /// Declared loss constants; estimated from the data when unset.
    pub lipschitz: Option<f64>,
    pub smoothness: Option<f64>,
    pub eval_point: EvalPoint,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algo: Algo::CvarSgd,
            alpha: 0.1,
            epochs: 100,
            batch_size: 512,
            lr: None,
            eps: None,
            weight_decay: 0.0,
            dataset: String::new(),
            format: DataFormat::Csv,
            labels: None,
            limit: None,
            target_column: None,
            classification: false,
            model: ModelKind::LinearRegression,
            hidden: 100,
            bound: 1.0,
            transform: BoundTransform::Rational { scale: 1.0 },
            smoothing: PlusKind::PiecewiseQuadratic,
            minibatch_smoothing: MinibatchSmoothing::Squared,
            region: RegionSpec::Ball(100.0),
            sampling: Sampling::WithReplacement,
            seed: 0,
            eval_alphas: vec![0.05, 0.1],
            train_fraction: 2.0 / 3.0,
            standardize: true,
            lipschitz: None,
            smoothness: None,
            eval_point: EvalPoint::Last,
            out: PathBuf::from("out"),
        }
    }
}

fn fmt_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn cfg_err(key: &str, reason: impl fmt::Display) -> Error {
    Error::Config(format!("{key}: {reason}"))
}

fn parse_val<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| cfg_err(key, format!("cannot parse `{value}`")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse_val(key, value).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(key, format!("expected true or false, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|t| parse_val(key, t.trim()))
        .collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn transform_text(t: &BoundTransform) -> String {
    match t {
        BoundTransform::Clip => "clip".into(),
        BoundTransform::Rational { scale } => format!("rational:{scale}"),
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 29] = [
        "algo",
        "alpha",
        "epochs",
        "batch_size",
        "lr",
        "eps",
        "weight_decay",
        "dataset",
        "format",
        "labels",
        "limit",
        "target_column",
        "classification",
        "model",
        "hidden",
        "bound",
        "transform",
        "smoothing",
        "minibatch_smoothing",
        "region",
        "sampling",
        "seed",
        "eval_alphas",
        "train_fraction",
        "standardize",
        "lipschitz",
        "smoothness",
        "eval_point",
        "out",
    ];

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "algo" => self.algo.name().into(),
            "alpha" => self.alpha.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => fmt_opt(&self.lr),
            "eps" => fmt_opt(&self.eps),
            "weight_decay" => self.weight_decay.to_string(),
            "dataset" => self.dataset.clone(),
            "format" => self.format.name().into(),
            "labels" => fmt_opt(&self.labels),
            "limit" => fmt_opt(&self.limit),
            "target_column" => fmt_opt(&self.target_column),
            "classification" => self.classification.to_string(),
            "model" => self.model.name().into(),
            "hidden" => self.hidden.to_string(),
            "bound" => self.bound.to_string(),
            "transform" => transform_text(&self.transform),
            "smoothing" => self.smoothing.name().into(),
            "minibatch_smoothing" => match self.minibatch_smoothing {
                MinibatchSmoothing::Squared => "squared".into(),
                MinibatchSmoothing::Linear => "linear".into(),
            },
            "region" => self.region.to_string(),
            "sampling" => match self.sampling {
                Sampling::WithReplacement => "replacement".into(),
                Sampling::Shuffled => "shuffled".into(),
            },
            "seed" => self.seed.to_string(),
            "eval_alphas" => fmt_list(&self.eval_alphas),
            "train_fraction" => self.train_fraction.to_string(),
            "standardize" => self.standardize.to_string(),
            "lipschitz" => fmt_opt(&self.lipschitz),
            "smoothness" => fmt_opt(&self.smoothness),
            "eval_point" => match self.eval_point {
                EvalPoint::Last => "last".into(),
                EvalPoint::Average => "average".into(),
            },
            "out" => self.out.display().to_string(),
            _ => return Err(cfg_err(key, "unknown key")),
        })
    }

    /// Sets one field from its text form. `-` and `_` are interchangeable in keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let key = key.as_str();
        let value = value.trim();
        match key {
            "algo" => self.algo = value.parse()?,
            "alpha" => self.alpha = parse_val(key, value)?,
            "epochs" => self.epochs = parse_val(key, value)?,
            "batch_size" | "batch" => self.batch_size = parse_val(key, value)?,
            "lr" => self.lr = parse_opt(key, value)?,
            "eps" => self.eps = parse_opt(key, value)?,
            "weight_decay" => self.weight_decay = parse_val(key, value)?,
            "dataset" => self.dataset = value.to_string(),
            "format" => self.format = value.parse()?,
            "labels" => self.labels = (!value.is_empty()).then(|| value.to_string()),
            "limit" => self.limit = parse_opt(key, value)?,
            "target_column" => self.target_column = parse_opt(key, value)?,
            "classification" => self.classification = parse_bool(key, value)?,
            "model" => self.model = value.parse().map_err(|e| cfg_err(key, e))?,
            "hidden" => self.hidden = parse_val(key, value)?,
            "bound" => self.bound = parse_val(key, value)?,
            "transform" => {
                self.transform = match value.split_once(':') {
                    None if value == "clip" => BoundTransform::Clip,
                    Some(("rational", s)) => BoundTransform::Rational {
                        scale: parse_val(key, s)?,
                    },
                    _ => return Err(cfg_err(key, format!("expected clip or rational:SCALE, got `{value}`"))),
                }
            }
            "smoothing" => self.smoothing = value.parse().map_err(|e| cfg_err(key, e))?,
            "minibatch_smoothing" => {
                self.minibatch_smoothing = match value {
                    "squared" => MinibatchSmoothing::Squared,
                    "linear" => MinibatchSmoothing::Linear,
                    _ => return Err(cfg_err(key, format!("expected squared or linear, got `{value}`"))),
                }
            }
            "region" => self.region = value.parse()?,
            "sampling" => {
                self.sampling = match value {
                    "replacement" => Sampling::WithReplacement,
                    "shuffled" => Sampling::Shuffled,
                    _ => return Err(cfg_err(key, format!("expected replacement or shuffled, got `{value}`"))),
                }
            }
            "seed" => self.seed = parse_val(key, value)?,
            "eval_alphas" => self.eval_alphas = parse_list(key, value)?,
            "train_fraction" => self.train_fraction = parse_val(key, value)?,
            "standardize" => self.standardize = parse_bool(key, value)?,
            "lipschitz" => self.lipschitz = parse_opt(key, value)?,
            "smoothness" => self.smoothness = parse_opt(key, value)?,
            "eval_point" => {
                self.eval_point = match value {
                    "last" => EvalPoint::Last,
                    "average" => EvalPoint::Average,
                    _ => return Err(cfg_err(key, format!("expected last or average, got `{value}`"))),
                }
            }
            "out" => self.out = PathBuf::from(value),
            _ => return Err(cfg_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Checks ranges and cross-field requirements, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(cfg_err(key, format!("must be positive, got {v}")))
            }
        };
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(cfg_err("alpha", format!("must lie in (0, 1], got {}", self.alpha)));
        }
        if self.epochs == 0 {
            return Err(cfg_err("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(cfg_err("batch_size", "must be at least 1"));
        }
        if let Some(lr) = self.lr {
            positive("lr", lr)?;
        }
        if let Some(eps) = self.eps {
            positive("eps", eps)?;
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(cfg_err("weight_decay", format!("must be >= 0, got {}", self.weight_decay)));
        }
        if self.dataset.is_empty() {
            return Err(cfg_err("dataset", "missing"));
        }
        if self.format == DataFormat::Idx && self.labels.is_none() {
            return Err(cfg_err("labels", "idx data needs a label file"));
        }
        if self.limit == Some(0) {
            return Err(cfg_err("limit", "must be at least 1"));
        }
        if self.model == ModelKind::Mlp3 && self.hidden == 0 {
            return Err(cfg_err("hidden", "must be at least 1"));
        }
        positive("bound", self.bound)?;
        if let BoundTransform::Rational { scale } = self.transform {
            positive("transform", scale)?;
        }
        if self.eval_alphas.is_empty() {
            return Err(cfg_err("eval_alphas", "need at least one level"));
        }
        for &a in &self.eval_alphas {
            if !(a > 0.0 && a <= 1.0) {
                return Err(cfg_err("eval_alphas", format!("{a} is outside (0, 1]")));
            }
        }
        if self.eval_alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(cfg_err("eval_alphas", "must be strictly increasing"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(cfg_err("train_fraction", format!("must lie in (0, 1), got {}", self.train_fraction)));
        }
        if let Some(g) = self.lipschitz {
            positive("lipschitz", g)?;
        }
        if let Some(b) = self.smoothness {
            if !(b.is_finite() && b >= 0.0) {
                return Err(cfg_err("smoothness", format!("must be >= 0, got {b}")));
            }
        }
        if self.lr.is_none() && matches!(self.algo, Algo::Vanilla | Algo::CvarMinibatch) {
            return Err(cfg_err("lr", format!("required for algo={}", self.algo.name())));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&self.get(key).expect("known key"));
            s.push('\n');
        }
        s
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_text(&text)
    }
}

fn synth_params(spec: &str) -> Result<(String, BTreeMap<String, String>)> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut params = BTreeMap::new();
    for item in rest.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| cfg_err("dataset", format!("expected key=value in `{item}`")))?;
        params.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok((kind.to_string(), params))
}

fn synth_dataset(spec: &str) -> Result<Dataset> {
    let (kind, params) = synth_params(spec)?;
    let get = |k: &str, default: &str| -> String {
        params.get(k).cloned().unwrap_or_else(|| default.to_string())
    };
    let allowed: &[&str] = match kind.as_str() {
        "twopoint" => &["n", "p", "lo", "hi", "seed"],
        "heavytail" => &["n", "dim", "seed"],
        _ => return Err(cfg_err("dataset", format!("unknown generator `{kind}`"))),
    };
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(cfg_err("dataset", format!("unknown {kind} parameter `{k}`")));
    }
    let seed: u64 = parse_val("dataset", &get("seed", "0"))?;
    if kind == "twopoint" {
        data::synth_twopoint(
            parse_val("dataset", &get("n", "1000"))?,
            parse_val("dataset", &get("p", "0.3"))?,
            parse_val("dataset", &get("lo", "0"))?,
            parse_val("dataset", &get("hi", "1"))?,
            seed,
        )
    } else {
        data::synth_heavy_tail(
            parse_val("dataset", &get("n", "3000"))?,
            parse_val("dataset", &get("dim", "10"))?,
            seed,
        )
    }
}

/// Loads the configured dataset (before splitting).
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match cfg.format {
        DataFormat::Csv => data::load_csv(
            &cfg.dataset,
            &CsvSchema {
                target_column: cfg.target_column,
                classification: cfg.classification,
                has_header: None,
            },
        )?,
        DataFormat::Libsvm => data::load_libsvm(&cfg.dataset)?,
        DataFormat::Idx => {
            let labels = cfg.labels.as_ref().ok_or_else(|| cfg_err("labels", "missing"))?;
            return data::load_idx(&cfg.dataset, labels, cfg.limit);
        }
        DataFormat::Synth => synth_dataset(&cfg.dataset)?,
    };
    match cfg.limit {
        Some(l) if l < ds.len() => ds.select(&(0..l).collect::<Vec<_>>()),
        _ => Ok(ds),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: Split,
    /// One value per evaluation level, in `eval_alphas` order.
    pub cvar: Vec<f64>,
    pub accuracy: Option<f64>,
    pub mean_loss: f64,
}

impl MetricsRow {
    fn from_eval(epoch: usize, split: Split, ev: &Evaluation) -> Self {
        MetricsRow {
            epoch,
            split,
            cvar: ev.tails.iter().map(|t| t.cvar).collect(),
            accuracy: ev.accuracy,
            mean_loss: ev.mean_loss,
        }
    }
}

/// Everything a run produced, before anything is written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub rows: Vec<MetricsRow>,
    /// Per evaluation level, the top validation losses in increasing order.
    pub tails: Vec<(f64, Vec<f64>)>,
    pub metadata: Vec<(String, String)>,
    pub final_point: AugmentedPoint,
}

impl RunOutcome {
    pub fn final_val(&self) -> &MetricsRow {
        self.rows
            .iter()
            .rev()
            .find(|r| r.split == Split::Val)
            .expect("runs have at least one epoch")
    }

    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.config.eval_alphas, &self.rows)
    }

    pub fn metadata_text(&self) -> String {
        self.metadata
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Writes `metrics.csv`, `tail_<a>.txt`, `metadata.txt` and `config.cfg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let put = |name: String, contents: String| {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))
        };
        put("metrics.csv".into(), self.metrics_csv())?;
        for (alpha, losses) in &self.tails {
            let body: String = losses.iter().map(|l| format!("{l}\n")).collect();
            put(format!("tail_{alpha}.txt"), body)?;
        }
        put("metadata.txt".into(), self.metadata_text())?;
        put("config.cfg".into(), self.config.to_text())
    }
}

pub fn metrics_header(alphas: &[f64]) -> String {
    let mut cols = vec!["epoch".to_string(), "split".to_string()];
    cols.extend(alphas.iter().map(|a| format!("cvar_{a}")));
    cols.push("accuracy".into());
    cols.push("mean_loss".into());
    cols.join(",")
}

pub fn metrics_csv(alphas: &[f64], rows: &[MetricsRow]) -> String {
    let mut s = metrics_header(alphas);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{}", r.epoch, r.split.name()));
        for c in &r.cvar {
            s.push_str(&format!(",{c}"));
        }
        s.push_str(&format!(",{},{}\n", fmt_opt(&r.accuracy), r.mean_loss));
    }
    s
}

/// Step size, smoothing and descent direction resolved for one run.
#[derive(Debug, Clone)]
struct Plan {
    mode: &'static str,
    direction: Direction,
    eta: f64,
    eps: Option<f64>,
    batch: usize,
    sampling: Sampling,
    steps_per_epoch: usize,
    cond_c: Option<bool>,
}

fn plan(cfg: &RunConfig, rp: &RiskParams, region: &FeasibleRegion, n: usize) -> Result<Plan> {
    let ga = g_alpha(rp);
    let b_eff = cfg.batch_size.min(n);
    let per_epoch = |b: usize| n.div_ceil(b);
    let smoothed = |eps: f64| -> Result<Direction> {
        Ok(match cfg.smoothing {
            PlusKind::Exact => Direction::AuxSubgradient { tie: 1.0 },
            kind => Direction::SmoothedAux(PlusFunction::new(kind, eps)?),
        })
    };
    let diameter = || {
        region
            .diameter()
            .ok_or_else(|| cfg_err("region", format!("algo={} needs a bounded region", cfg.algo.name())))
    };

    if let Some(lr) = cfg.lr {
        // Unless given, the smoothing width follows each method's own coupling
        // with the step size (or sample count) rather than a fixed constant.
        let eps = match cfg.algo {
            Algo::CvarSgd => Some(cfg.eps.unwrap_or(match cfg.minibatch_smoothing {
                MinibatchSmoothing::Squared => 2.0 * ga * ga * lr,
                MinibatchSmoothing::Linear => 2.0 * ga * lr,
            })),
            Algo::NonconvexOgd => Some(match cfg.eps {
                Some(e) => e,
                None => schedule_alg4(rp.lipschitz, ga, rp.alpha, rp.smoothness, cfg.epochs * n)?
                    .eps
                    .unwrap_or_default(),
            }),
            _ => None,
        };
        let direction = match cfg.algo {
            Algo::Vanilla => Direction::MeanLoss,
            Algo::CvarMinibatch => Direction::MinibatchTail { alpha: cfg.alpha },
            Algo::OgdCvar => Direction::AuxSubgradient { tie: 1.0 },
            Algo::CvarSgd | Algo::NonconvexOgd => smoothed(eps.unwrap_or_default())?,
        };
        return Ok(Plan {
            mode: "fixed-lr",
            direction,
            eta: lr,
            eps,
            batch: b_eff,
            sampling: cfg.sampling,
            steps_per_epoch: per_epoch(b_eff),
            cond_c: None,
        });
    }

    // Theoretical schedules; the single-sample methods stream shuffled passes.
    match cfg.algo {
        Algo::CvarSgd => {
            let t = cfg.epochs * per_epoch(b_eff);
            let d = diameter()?;
            let s = schedule_alg3(d, ga, n, t, b_eff, cfg.minibatch_smoothing)?;
            let eps = cfg.eps.or(s.eps);
            let c = t as f64 / n as f64;
            Ok(Plan {
                mode: "theory",
                direction: smoothed(eps.unwrap_or_default())?,
                eta: s.eta,
                eps,
                batch: b_eff,
                sampling: cfg.sampling,
                steps_per_epoch: per_epoch(b_eff),
                cond_c: Some(check_cond_c(d, ga, rp.alpha, rp.smoothness, n, c, b_eff)),
            })
        }
        Algo::OgdCvar => {
            let s = schedule_alg1(diameter()?, ga, cfg.epochs * n)?;
            Ok(Plan {
                mode: "theory",
                direction: Direction::AuxSubgradient { tie: 1.0 },
                eta: s.eta,
                eps: None,
                batch: 1,
                sampling: Sampling::Shuffled,
                steps_per_epoch: n,
                cond_c: None,
            })
        }
        Algo::NonconvexOgd => {
            let s = schedule_alg4(rp.lipschitz, ga, rp.alpha, rp.smoothness, cfg.epochs * n)?;
            let eps = cfg.eps.or(s.eps);
            Ok(Plan {
                mode: "theory",
                direction: smoothed(eps.unwrap_or_default())?,
                eta: s.eta,
                eps,
                batch: 1,
                sampling: Sampling::Shuffled,
                steps_per_epoch: n,
                cond_c: None,
            })
        }
        Algo::Vanilla | Algo::CvarMinibatch => {
            Err(cfg_err("lr", format!("required for algo={}", cfg.algo.name())))
        }
    }
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::Diverged { .. } => e,
        Error::NonFinite(_) | Error::LossOutOfRange { .. } => Error::Diverged {
            step,
            detail: e.to_string(),
        },
        other => other,
    }
}

/// Loads, splits and trains per `cfg`, evaluating after every epoch.
pub fn train(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let full = load_dataset(cfg)?;
    let (train_raw, val_raw) = data::split(&full, cfg.train_fraction, cfg.seed)?;
    let (train, val) = if cfg.standardize {
        let (mut sets, _) = data::standardize(&train_raw, &[&val_raw])?;
        let val = sets.pop().expect("two datasets");
        (sets.pop().expect("two datasets"), val)
    } else {
        (train_raw, val_raw)
    };
    let mut model = LossModel::for_dataset(cfg.model, &train, cfg.hidden, cfg.bound, cfg.transform)?;
    let region = cfg.region.build(model.param_dim(), cfg.bound)?;

    let (lipschitz, smoothness, constants) = match (cfg.lipschitz, cfg.smoothness) {
        (Some(g), Some(b)) => (g, b, "declared"),
        (g, b) => {
            let est = estimate_constants(&model, &train, &region, 1.0, 256, cfg.seed)?;
            (g.unwrap_or(est.lipschitz), b.unwrap_or(est.smoothness), "estimated")
        }
    };
    model = model.with_constants(lipschitz, smoothness);
    let rp = RiskParams::new(cfg.alpha, lipschitz, smoothness, cfg.bound)?;
    let plan = plan(cfg, &rp, &region, train.len())?;
    let region = if cfg.algo == Algo::NonconvexOgd {
        FeasibleRegion::unconstrained(cfg.bound)?
    } else {
        region
    };

    let w0 = model.init_params(cfg.seed);
    let tau0 = if cfg.algo.uses_tau() { cfg.bound / 2.0 } else { 0.0 };
    let mut opt = Optimizer::new(
        &model,
        &region,
        rp,
        plan.direction,
        plan.eta,
        cfg.weight_decay,
        AugmentedPoint::new(w0, tau0),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut rows = Vec::with_capacity(2 * cfg.epochs);
    let mut last_val = None;
    for epoch in 1..=cfg.epochs {
        for idx in plan.sampling.epoch_batches(train.len(), plan.batch, &mut rng) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train.examples()[i]).collect();
            opt.step(&batch).map_err(|e| diverged(opt.stats().steps + 1, e))?;
        }
        let point = match cfg.eval_point {
            EvalPoint::Last => opt.current().clone(),
            EvalPoint::Average => opt.average(),
        };
        let step = opt.stats().steps;
        let tr = evaluate(&model, &point.w, &train, &cfg.eval_alphas).map_err(|e| diverged(step, e))?;
        let va = evaluate(&model, &point.w, &val, &cfg.eval_alphas).map_err(|e| diverged(step, e))?;
        rows.push(MetricsRow::from_eval(epoch, Split::Train, &tr));
        rows.push(MetricsRow::from_eval(epoch, Split::Val, &va));
        last_val = Some((va, point));
    }
    let (val_eval, final_point) = last_val.expect("at least one epoch");
    info!(
        "{} on {}: final val mean loss {}",
        cfg.algo.name(),
        cfg.dataset,
        val_eval.mean_loss
    );

    let stats: StepStats = opt.stats();
    let mut metadata: Vec<(String, String)> = RunConfig::KEYS
        .iter()
        .map(|k| (k.to_string(), cfg.get(k).expect("known key")))
        .collect();
    let derived = [
        ("mode", plan.mode.to_string()),
        ("dataset_name", full.name().to_string()),
        ("task", train.task().to_string()),
        ("n_total", full.len().to_string()),
        ("n_train", train.len().to_string()),
        ("n_val", val.len().to_string()),
        ("feature_dim", train.feature_dim().to_string()),
        ("param_dim", model.param_dim().to_string()),
        ("constants", constants.to_string()),
        ("lipschitz_resolved", lipschitz.to_string()),
        ("smoothness_resolved", smoothness.to_string()),
        ("g_alpha", g_alpha(&rp).to_string()),
        ("eta", plan.eta.to_string()),
        ("eps_resolved", fmt_opt(&plan.eps)),
        ("batch_effective", plan.batch.to_string()),
        ("steps_per_epoch", plan.steps_per_epoch.to_string()),
        ("total_steps", stats.steps.to_string()),
        ("cond_c", plan.cond_c.map_or("n/a".into(), |c| c.to_string())),
        ("split_seed", cfg.seed.to_string()),
        ("init_seed", cfg.seed.to_string()),
        ("sampler_seed", format!("{}/stream1", cfg.seed)),
        ("tau_init", tau0.to_string()),
        ("tau_final", final_point.tau.to_string()),
        ("max_grad_norm", stats.max_grad_norm.to_string()),
        ("max_step_norm", stats.max_step_norm.to_string()),
    ];
    metadata.extend(derived.into_iter().map(|(k, v)| (k.to_string(), v)));

    Ok(RunOutcome {
        config: cfg.clone(),
        rows,
        tails: val_eval
            .tails
            .into_iter()
            .map(|t| (t.alpha, t.top_losses))
            .collect(),
        metadata,
        final_point,
    })
}

/// [`train`] followed by writing the artifacts into `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let outcome = train(cfg)?;
    outcome.write(&cfg.out)?;
    Ok(outcome)
}

#[derive(Debug)]
pub struct SweepCell {
    pub lr: f64,
    pub weight_decay: f64,
    pub outcome: std::result::Result<RunOutcome, String>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    /// Index into `cells` of the winner.
    pub best: usize,
}

impl SweepOutcome {
    pub fn best_cell(&self) -> &SweepCell {
        &self.cells[self.best]
    }

    pub fn best_outcome(&self) -> &RunOutcome {
        self.best_cell()
            .outcome
            .as_ref()
            .expect("the winner completed")
    }

    /// One line per cell: `lr,weight_decay,status,val_mean_loss,val_cvar_<a>...,val_accuracy`.
    pub fn summary_csv(&self, alphas: &[f64]) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec!["lr".to_string(), "weight_decay".into(), "status".into(), "val_mean_loss".into()];
        header.extend(alphas.iter().map(|a| format!("val_cvar_{a}")));
        header.push("val_accuracy".into());
        header.push("best".into());
        w.write_record(&header).expect("in-memory write");
        for (i, c) in self.cells.iter().enumerate() {
            let mut rec = vec![c.lr.to_string(), c.weight_decay.to_string()];
            match &c.outcome {
                Ok(o) => {
                    let v = o.final_val();
                    rec.push("ok".into());
                    rec.push(v.mean_loss.to_string());
                    rec.extend(v.cvar.iter().map(ToString::to_string));
                    rec.push(fmt_opt(&v.accuracy));
                }
                Err(msg) => {
                    rec.push(format!("failed: {msg}"));
                    rec.extend(std::iter::repeat_n(String::new(), alphas.len() + 2));
                }
            }
            rec.push((i == self.best).to_string());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
    }
}

/// Index of the smallest loss among completed cells `(lr, wd, loss)`; ties go
/// to the smaller lr, then the smaller wd.
fn pick_best(cells: impl Iterator<Item = (f64, f64, Option<f64>)>) -> Option<usize> {
    cells
        .enumerate()
        .filter_map(|(i, (lr, wd, loss))| loss.map(|l| (i, l, lr, wd)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)).then(a.3.total_cmp(&b.3)))
        .map(|c| c.0)
}

fn cell_dir(out: &Path, lr: f64, wd: f64) -> PathBuf {
    out.join(format!("lr={lr}_wd={wd}"))
}

/// Trains every `(lr, weight_decay)` cell with the base seed and picks the
/// smallest final validation mean loss (ties: smaller lr, then smaller wd).
/// With `out`, each cell writes into `out/lr=<lr>_wd=<wd>/`, and the summary
/// and winning configuration go to `out/sweep.csv` and `out/best.cfg`.
pub fn sweep(base: &RunConfig, lrs: &[f64], wds: &[f64], out: Option<&Path>) -> Result<SweepOutcome> {
    if lrs.is_empty() || wds.is_empty() {
        return Err(cfg_err("sweep", "learning-rate and weight-decay grids must be nonempty"));
    }
    let grid: Vec<(f64, f64)> = lrs
        .iter()
        .flat_map(|&lr| wds.iter().map(move |&wd| (lr, wd)))
        .collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(lr, wd)| {
            let mut cfg = base.clone();
            cfg.lr = Some(lr);
            cfg.weight_decay = wd;
            if let Some(out) = out {
                cfg.out = cell_dir(out, lr, wd);
            }
            let outcome = match out {
                Some(_) => run(&cfg),
                None => train(&cfg),
            };
            SweepCell {
                lr,
                weight_decay: wd,
                outcome: outcome.map_err(|e| e.to_string()),
            }
        })
        .collect();

    let best = pick_best(cells.iter().map(|c| {
        (c.lr, c.weight_decay, c.outcome.as_ref().ok().map(|o| o.final_val().mean_loss))
    }));
    let Some(best) = best else {
        let reasons: Vec<String> = cells
            .iter()
            .map(|c| format!("lr={} wd={}: {}", c.lr, c.weight_decay, c.outcome.as_ref().err().unwrap()))
            .collect();
        return Err(Error::Config(format!("sweep: every cell failed ({})", reasons.join("; "))));
    };
    let result = SweepOutcome { cells, best };
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
        let summary = out.join("sweep.csv");
        fs::write(&summary, result.summary_csv(&base.eval_alphas))
            .map_err(|e| Error::io(summary.display().to_string(), e))?;
        let best_cfg = out.join("best.cfg");
        fs::write(&best_cfg, result.best_outcome().config.to_text())
            .map_err(|e| Error::io(best_cfg.display().to_string(), e))?;
    }
    Ok(result)
}

/// Final-epoch validation metrics of one method, averaged over its runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub algo: Algo,
    pub runs: usize,
    pub cvar: Vec<f64>,
    pub accuracy: Option<f64>,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub alphas: Vec<f64>,
    /// CVaR and mean-loss columns divided by the vanilla row.
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,runs");
        for a in &self.alphas {
            s.push_str(&format!(",cvar_{a}"));
        }
        s.push_str(",accuracy,mean_loss\n");
        for r in &self.rows {
            s.push_str(&format!("{},{}", r.algo.name(), r.runs));
            for c in &r.cvar {
                s.push_str(&format!(",{c}"));
            }
            s.push_str(&format!(",{},{}\n", fmt_opt(&r.accuracy), r.mean_loss));
        }
        s
    }
}

struct RunRecord {
    algo: Algo,
    dataset: String,
    seed: String,
    alphas: Vec<f64>,
    row: MetricsRow,
}

fn seeds_of(group: &[&RunRecord]) -> Vec<String> {
    let mut s: Vec<String> = group.iter().map(|r| r.seed.clone()).collect();
    s.sort_unstable();
    s
}

fn report_err(path: &Path, reason: impl fmt::Display) -> Error {
    Error::Report(format!("{}: {reason}", path.display()))
}

fn read_run(path: &Path) -> Result<RunRecord> {
    let (dir, metrics) = if path.is_dir() {
        (path.to_path_buf(), path.join("metrics.csv"))
    } else {
        (
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
            path.to_path_buf(),
        )
    };
    let meta_path = dir.join("metadata.txt");
    let meta_text =
        fs::read_to_string(&meta_path).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let meta: BTreeMap<&str, &str> = meta_text.lines().filter_map(|l| l.split_once('=')).collect();
    let field = |k: &str| {
        meta.get(k)
            .map(|v| v.to_string())
            .ok_or_else(|| report_err(&meta_path, format!("missing `{k}`")))
    };
    let algo: Algo = field("algo")?.parse()?;
    let dataset = format!("{}:{}", field("format")?, field("dataset")?);
    let seed = field("seed")?;

    let text = fs::read_to_string(&metrics).map_err(|e| Error::io(metrics.display().to_string(), e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| report_err(&metrics, "empty metrics file"))?
        .split(',')
        .collect();
    let k = header.len();
    if k < 4 || header[0] != "epoch" || header[1] != "split" || header[k - 2] != "accuracy" || header[k - 1] != "mean_loss" {
        return Err(report_err(&metrics, "unexpected header"));
    }
    let alphas = header[2..k - 2]
        .iter()
        .map(|c| {
            c.strip_prefix("cvar_")
                .and_then(|a| a.parse::<f64>().ok())
                .ok_or_else(|| report_err(&metrics, format!("bad column `{c}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let num = |t: &str| -> Result<f64> { t.parse().map_err(|_| report_err(&metrics, format!("bad number `{t}`"))) };
    let mut last = None;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != k {
            return Err(report_err(&metrics, format!("expected {k} columns in `{line}`")));
        }
        if f[1] != "val" {
            continue;
        }
        last = Some(MetricsRow {
            epoch: f[0].parse().map_err(|_| report_err(&metrics, "bad epoch"))?,
            split: Split::Val,
            cvar: f[2..k - 2].iter().map(|t| num(t)).collect::<Result<_>>()?,
            accuracy: if f[k - 2].is_empty() { None } else { Some(num(f[k - 2])?) },
            mean_loss: num(f[k - 1])?,
        });
    }
    let row = last.ok_or_else(|| report_err(&metrics, "no validation rows"))?;
    Ok(RunRecord {
        algo,
        dataset,
        seed,
        alphas,
        row,
    })
}

/// Groups runs by algorithm, averages their final validation rows and
/// normalizes CVaR and mean loss by the vanilla method.
pub fn report(paths: &[PathBuf]) -> Result<Report> {
    if paths.is_empty() {
        return Err(Error::Report("no input files".into()));
    }
    let records = paths.iter().map(|p| read_run(p)).collect::<Result<Vec<_>>>()?;
    let first = &records[0];
    for (r, p) in records.iter().zip(paths) {
        if r.dataset != first.dataset {
            return Err(report_err(p, format!("dataset `{}` differs from `{}`", r.dataset, first.dataset)));
        }
        if r.alphas != first.alphas {
            return Err(report_err(p, "evaluation levels differ between inputs"));
        }
    }
    let mut groups: BTreeMap<Algo, Vec<&RunRecord>> = BTreeMap::new();
    for r in &records {
        groups.entry(r.algo).or_default().push(r);
    }
    let vanilla = groups
        .get(&Algo::Vanilla)
        .ok_or_else(|| Error::Report("no vanilla run to normalize against".into()))?;
    let reference_seeds = seeds_of(vanilla);
    for (algo, g) in &groups {
        if seeds_of(g) != reference_seeds {
            return Err(Error::Report(format!(
                "{} was run on seeds {:?} but vanilla on {:?}",
                algo.name(),
                seeds_of(g),
                reference_seeds
            )));
        }
    }

    let average = |g: &[&RunRecord]| -> ReportRow {
        let n = g.len() as f64;
        let cvar = (0..first.alphas.len())
            .map(|i| g.iter().map(|r| r.row.cvar[i]).sum::<f64>() / n)
            .collect();
        let accuracy = g
            .iter()
            .map(|r| r.row.accuracy)
            .sum::<Option<f64>>()
            .map(|s| s / n);
        ReportRow {
            algo: g[0].algo,
            runs: g.len(),
            cvar,
            accuracy,
            mean_loss: g.iter().map(|r| r.row.mean_loss).sum::<f64>() / n,
        }
    };
    let base = average(vanilla);
    if base.mean_loss <= 0.0 || base.cvar.iter().any(|&c| c <= 0.0) {
        return Err(Error::Report("vanilla losses are zero; cannot normalize".into()));
    }
    let rows = groups
        .values()
        .map(|g| {
            let mut row = average(g);
            for (c, b) in row.cvar.iter_mut().zip(&base.cvar) {
                *c /= b;
            }
            row.mean_loss /= base.mean_loss;
            row
        })
        .collect();
    Ok(Report {
        alphas: first.alphas.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn twopoint_cfg(algo: Algo) -> RunConfig {
        RunConfig {
            algo,
            epochs: 3,
            batch_size: 16,
            lr: Some(0.05),
            dataset: "twopoint:n=90,p=0.3,lo=0,hi=1".into(),
            format: DataFormat::Synth,
            model: ModelKind::AbsoluteRegression,
            bound: 1.0,
            region: RegionSpec::Box(0.0, 1.0),
            lipschitz: Some(1.0),
            smoothness: Some(0.0),
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = twopoint_cfg(Algo::CvarSgd);
        cfg.eval_alphas = vec![0.01, 0.2, 1.0];
        cfg.transform = BoundTransform::Rational { scale: 2.5 };
        cfg.labels = Some("labels.idx".into());
        cfg.train_fraction = 2.0 / 3.0;
        let text = cfg.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
        assert_eq!(RunConfig::from_text(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = |k: &str, v: &str| {
            let mut cfg = twopoint_cfg(Algo::CvarSgd);
            match cfg.set(k, v).and_then(|_| cfg.validate()) {
                Err(Error::Config(msg)) => msg,
                other => panic!("{k}={v}: {other:?}"),
            }
        };
        assert!(err("alpha", "1.5").starts_with("alpha"));
        assert!(err("alpha", "x").starts_with("alpha"));
        assert!(err("epochs", "0").starts_with("epochs"));
        assert!(err("batch-size", "0").starts_with("batch_size"));
        assert!(err("eval_alphas", "0.1,0.05").starts_with("eval_alphas"));
        assert!(err("region", "ball:-1").starts_with("region"));
        assert!(err("bogus", "1").starts_with("bogus"));
        let mut cfg = twopoint_cfg(Algo::Vanilla);
        cfg.lr = None;
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.starts_with("lr")));
    }

    #[test]
    fn run_writes_two_rows_per_epoch() {
        let mut cfg = twopoint_cfg(Algo::CvarSgd);
        cfg.epochs = 100;
        let out = train(&cfg).unwrap();
        assert_eq!(out.rows.len(), 200);
        let csv = out.metrics_csv();
        assert_eq!(csv.lines().count(), 201);
        assert_eq!(csv.lines().next().unwrap(), "epoch,split,cvar_0.05,cvar_0.1,accuracy,mean_loss");
        for r in &out.rows {
            assert!(r.cvar.windows(2).all(|w| w[0] >= w[1]));
            assert!(r.cvar.iter().all(|c| c.is_finite()) && r.mean_loss.is_finite());
            assert_eq!(r.accuracy, None);
        }
    }

    #[test]
    fn vanilla_still_reports_tail_columns() {
        let out = train(&twopoint_cfg(Algo::Vanilla)).unwrap();
        assert!(out.rows.iter().all(|r| r.cvar.len() == 2));
    }

    #[test]
    fn training_is_deterministic() {
        for algo in Algo::ALL {
            let cfg = twopoint_cfg(algo);
            let a = train(&cfg).unwrap();
            let b = train(&cfg).unwrap();
            assert_eq!(a.metrics_csv(), b.metrics_csv(), "{}", algo.name());
            assert_eq!(a.metadata_text(), b.metadata_text());
        }
    }

    #[test]
    fn theory_schedules_resolve() {
        for algo in [Algo::CvarSgd, Algo::OgdCvar, Algo::NonconvexOgd] {
            let mut cfg = twopoint_cfg(algo);
            cfg.lr = None;
            let out = train(&cfg).unwrap();
            let meta: BTreeMap<_, _> = out.metadata.iter().cloned().collect();
            assert_eq!(meta["mode"], "theory");
            assert!(meta["eta"].parse::<f64>().unwrap() > 0.0);
        }
        let mut cfg = twopoint_cfg(Algo::OgdCvar);
        cfg.lr = None;
        cfg.region = RegionSpec::Unconstrained;
        assert!(matches!(train(&cfg), Err(Error::Config(m)) if m.starts_with("region")));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = RunConfig {
            algo: Algo::Vanilla,
            epochs: 50,
            batch_size: 4,
            lr: Some(1e3),
            dataset: "heavytail:n=60,dim=3".into(),
            format: DataFormat::Synth,
            bound: 1e300,
            transform: BoundTransform::Rational { scale: 1e300 },
            region: RegionSpec::Unconstrained,
            lipschitz: Some(1.0),
            smoothness: Some(0.0),
            ..RunConfig::default()
        };
        let r = train(&cfg);
        assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
    }

    #[test]
    fn sweep_selects_minimal_validation_loss() {
        let base = twopoint_cfg(Algo::Vanilla);
        let s = sweep(&base, &[0.05], &[0.0], None).unwrap();
        assert_eq!(s.cells.len(), 1);
        assert_eq!(s.best, 0);

        let s = sweep(&base, &[0.001, 0.005, 0.01], &[0.0, 1e-4, 1e-3], None).unwrap();
        assert_eq!(s.cells.len(), 9);
        let best = s.best_outcome().final_val().mean_loss;
        for c in &s.cells {
            assert!(c.outcome.as_ref().unwrap().final_val().mean_loss >= best);
        }
    }

    #[test]
    fn sweep_tie_break() {
        let cells = [(0.01, 0.0, Some(0.5)), (0.005, 1e-3, Some(0.5)), (0.005, 0.0, Some(0.5)), (0.001, 0.0, None)];
        assert_eq!(pick_best(cells.into_iter()), Some(2));
        let cells = [(0.01, 0.0, Some(0.4)), (0.005, 0.0, Some(0.5))];
        assert_eq!(pick_best(cells.into_iter()), Some(0));
        assert_eq!(pick_best([(0.01, 0.0, None)].into_iter()), None);
    }

    #[test]
    fn sweep_with_no_successful_cell_fails() {
        let mut base = twopoint_cfg(Algo::Vanilla);
        base.dataset = "nonexistent:n=3".into();
        assert!(sweep(&base, &[0.1], &[0.0], None).is_err());
        assert!(sweep(&base, &[], &[0.0], None).is_err());
    }

    #[test]
    fn report_normalizes_by_vanilla() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for algo in [Algo::Vanilla, Algo::CvarSgd, Algo::CvarMinibatch] {
            let mut cfg = twopoint_cfg(algo);
            cfg.out = dir.path().join(algo.name());
            run(&cfg).unwrap();
            paths.push(cfg.out.join("metrics.csv"));
        }
        let rep = report(&paths).unwrap();
        let v = rep.rows.iter().find(|r| r.algo == Algo::Vanilla).unwrap();
        assert!(v.cvar.iter().all(|&c| c == 1.0));
        assert_eq!(v.mean_loss, 1.0);

        // the same run twice under two names gives identical rows
        let twin = dir.path().join("twin");
        let mut cfg = twopoint_cfg(Algo::Vanilla);
        cfg.out = twin.clone();
        cfg.algo = Algo::Vanilla;
        run(&cfg).unwrap();
        let meta = fs::read_to_string(twin.join("metadata.txt")).unwrap();
        fs::write(twin.join("metadata.txt"), meta.replace("algo=vanilla", "algo=ogd-cvar")).unwrap();
        let rep = report(&[paths[0].clone(), twin.join("metrics.csv")]).unwrap();
        assert_eq!(rep.rows[0].cvar, rep.rows[1].cvar);
        assert_eq!(rep.rows[0].mean_loss, rep.rows[1].mean_loss);

        assert!(matches!(report(&paths[1..]), Err(Error::Report(_))));
    }

    #[test]
    fn report_rejects_mixed_datasets() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = twopoint_cfg(Algo::Vanilla);
        a.out = dir.path().join("a");
        run(&a).unwrap();
        let mut b = twopoint_cfg(Algo::CvarSgd);
        b.dataset = "twopoint:n=91,p=0.3,lo=0,hi=1".into();
        b.out = dir.path().join("b");
        run(&b).unwrap();
        assert!(matches!(report(&[a.out, b.out]), Err(Error::Report(_))));
    }
}
