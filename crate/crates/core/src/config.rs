//! Run configuration.
//!
//! Grammar: one `key = value` per line. Blank lines and lines whose first
//! non-blank character is `#` are skipped; a `#` after a value starts a
//! comment. Keys are the names in [`KEYS`]. Environment variables named
//! `CONCEPTGRID_<KEY>` (key upper-cased) override the file.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::concept::ConceptConfig;
use crate::eval::RouterMode;
use crate::numerics::OptimizerKind;
use crate::policy::{PolicyConfig, SegTerm, TrainConfig, COORD_TOKENS};
use crate::rewards::RewardAblation;
use crate::synthbench::{DatasetSpec, Family, SceneSpec};

pub const ENV_PREFIX: &str = "CONCEPTGRID_";

/// Accepted mosaic orders.
pub const MOSAIC_ORDERS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub episodes: usize,
    pub k: usize,
    pub families: Vec<Family>,
    pub group: usize,
    pub beta: f64,
    /// Concept query count `L2`.
    pub queries: usize,
    pub dim: usize,
    pub hidden: usize,
    pub stage1_steps: usize,
    pub stage1_step_size: f64,
    pub stage1_batch: usize,
    pub stage1_optimizer: OptimizerKind,
    pub stage1_direct: bool,
    pub stage1_decay: bool,
    pub box_weight: f64,
    pub stage2_steps: usize,
    pub stage2_step_size: f64,
    pub stage2_batch: usize,
    pub stage2_optimizer: OptimizerKind,
    pub stage2_concept_scale: f64,
    pub theta: f64,
    pub ablation: RewardAblation,
    pub seg_term: SegTerm,
    pub reshuffle: bool,
    pub router: RouterMode,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let c = ConceptConfig::default();
        let d = DatasetSpec::default();
        Self {
            seed: t.seed,
            episodes: d.episodes,
            k: d.k,
            families: d.families,
            group: t.group,
            beta: t.beta,
            queries: c.queries,
            dim: c.dim,
            hidden: c.hidden,
            stage1_steps: t.stage1_steps,
            stage1_step_size: t.stage1_step_size,
            stage1_batch: t.stage1_batch,
            stage1_optimizer: t.stage1_optimizer,
            stage1_direct: t.stage1_direct,
            stage1_decay: t.stage1_decay,
            box_weight: t.box_weight,
            stage2_steps: t.stage2_steps,
            stage2_step_size: t.stage2_step_size,
            stage2_batch: t.stage2_batch,
            stage2_optimizer: t.stage2_optimizer,
            stage2_concept_scale: t.stage2_concept_scale,
            theta: t.theta,
            ablation: t.ablation,
            seg_term: t.seg_term,
            reshuffle: t.reshuffle,
            router: RouterMode::Adaptive,
            dataset: PathBuf::from("data"),
            checkpoint: PathBuf::from("model.ckpt"),
            report: PathBuf::from("report"),
        }
    }
}

/// Every accepted key, in file order.
pub const KEYS: [&str; 29] = [
    "seed",
    "episodes",
    "k",
    "families",
    "group",
    "beta",
    "queries",
    "dim",
    "hidden",
    "stage1_steps",
    "stage1_step_size",
    "stage1_batch",
    "stage1_optimizer",
    "stage1_direct",
    "stage1_decay",
    "box_weight",
    "stage2_steps",
    "stage2_step_size",
    "stage2_batch",
    "stage2_optimizer",
    "stage2_concept_scale",
    "theta",
    "ablation",
    "seg_term",
    "reshuffle",
    "router",
    "dataset",
    "checkpoint",
    "report",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {0:?} given twice")]
    Duplicate(String),
    #[error("{key} = {value:?}: {message}")]
    Value { key: String, value: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Value { key: key.into(), value: value.into(), message: e.to_string() })
}

fn parse_families(value: &str) -> Result<Vec<Family>, ConfigError> {
    if value == "all" {
        return Ok(Family::ALL.to_vec());
    }
    value
        .split(',')
        .map(|s| {
            let s = s.trim();
            Family::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| ConfigError::Value {
                key: "families".into(),
                value: value.into(),
                message: format!(
                    "unknown family {s:?} (allowed: all, {})",
                    Family::ALL.map(|f| f.name()).join(", ")
                ),
            })
        })
        .collect()
}

impl RunConfig {
    /// Assigns one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "families" => self.families = parse_families(value)?,
            "group" => self.group = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "queries" => self.queries = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "stage1_steps" => self.stage1_steps = parse(key, value)?,
            "stage1_step_size" => self.stage1_step_size = parse(key, value)?,
            "stage1_batch" => self.stage1_batch = parse(key, value)?,
            "stage1_optimizer" => self.stage1_optimizer = parse(key, value)?,
            "stage1_direct" => self.stage1_direct = parse(key, value)?,
            "stage1_decay" => self.stage1_decay = parse(key, value)?,
            "box_weight" => self.box_weight = parse(key, value)?,
            "stage2_steps" => self.stage2_steps = parse(key, value)?,
            "stage2_step_size" => self.stage2_step_size = parse(key, value)?,
            "stage2_batch" => self.stage2_batch = parse(key, value)?,
            "stage2_optimizer" => self.stage2_optimizer = parse(key, value)?,
            "stage2_concept_scale" => self.stage2_concept_scale = parse(key, value)?,
            "theta" => self.theta = parse(key, value)?,
            "ablation" => self.ablation = parse(key, value)?,
            "seg_term" => self.seg_term = parse(key, value)?,
            "reshuffle" => self.reshuffle = parse(key, value)?,
            "router" => self.router = parse(key, value)?,
            "dataset" => self.dataset = PathBuf::from(value),
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            "report" => self.report = PathBuf::from(value),
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Text form of one key, as `set` accepts it.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "episodes" => self.episodes.to_string(),
            "k" => self.k.to_string(),
            "families" => {
                if self.families == Family::ALL {
                    "all".into()
                } else {
                    self.families.iter().map(|f| f.name()).collect::<Vec<_>>().join(",")
                }
            }
            "group" => self.group.to_string(),
            "beta" => self.beta.to_string(),
            "queries" => self.queries.to_string(),
            "dim" => self.dim.to_string(),
            "hidden" => self.hidden.to_string(),
            "stage1_steps" => self.stage1_steps.to_string(),
            "stage1_step_size" => self.stage1_step_size.to_string(),
            "stage1_batch" => self.stage1_batch.to_string(),
            "stage1_optimizer" => self.stage1_optimizer.to_string(),
            "stage1_direct" => self.stage1_direct.to_string(),
            "stage1_decay" => self.stage1_decay.to_string(),
            "box_weight" => self.box_weight.to_string(),
            "stage2_steps" => self.stage2_steps.to_string(),
            "stage2_step_size" => self.stage2_step_size.to_string(),
            "stage2_batch" => self.stage2_batch.to_string(),
            "stage2_optimizer" => self.stage2_optimizer.to_string(),
            "stage2_concept_scale" => self.stage2_concept_scale.to_string(),
            "theta" => self.theta.to_string(),
            "ablation" => self.ablation.to_string(),
            "seg_term" => self.seg_term.to_string(),
            "reshuffle" => self.reshuffle.to_string(),
            "router" => self.router.to_string(),
            "dataset" => self.dataset.display().to_string(),
            "checkpoint" => self.checkpoint.display().to_string(),
            "report" => self.report.display().to_string(),
            _ => return None,
        })
    }

    /// Applies a config file's text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            }
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::Duplicate(k.into()));
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies `CONCEPTGRID_*` overrides from `vars`. Unknown names under the
    /// prefix are rejected.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), ConfigError> {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_ascii_lowercase(), v)))
            .collect();
        pairs.sort();
        for (k, v) in pairs {
            if !KEYS.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey(format!("{ENV_PREFIX}{}", k.to_ascii_uppercase())));
            }
            self.set(&k, v.trim())?;
        }
        Ok(())
    }

    /// Every key with its value, one per line, in a form `apply_text` reads
    /// back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !MOSAIC_ORDERS.contains(&self.k) {
            return bad(format!("k = {} is not an allowed mosaic order (allowed: 1, 2, 3)", self.k));
        }
        if self.families.is_empty() {
            return bad("families is empty".into());
        }
        if let Some(f) = self.families.iter().find(|f| f.min_tiles() > self.k * self.k) {
            return bad(format!("family {f} needs k >= 2"));
        }
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        if self.group < 2 {
            return bad(format!("group = {} must be at least 2", self.group));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta = {} must be finite and non-negative", self.beta));
        }
        if self.queries == 0 {
            return bad("queries must be positive".into());
        }
        if self.dim <= COORD_TOKENS {
            return bad(format!("dim = {} must exceed {COORD_TOKENS}", self.dim));
        }
        if self.hidden == 0 || self.stage1_batch == 0 || self.stage2_batch == 0 {
            return bad("hidden, stage1_batch and stage2_batch must be positive".into());
        }
        for (k, v) in [
            ("stage1_step_size", self.stage1_step_size),
            ("stage2_step_size", self.stage2_step_size),
            ("box_weight", self.box_weight),
            ("stage2_concept_scale", self.stage2_concept_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{k} = {v} must be finite and non-negative"));
            }
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta = {} must lie in (0, 1)", self.theta));
        }
        Ok(())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            families: self.families.clone(),
            k: self.k,
            episodes: self.episodes,
            seed: self.seed,
            scene: SceneSpec::default(),
        }
    }

    pub fn concept(&self) -> ConceptConfig {
        ConceptConfig { dim: self.dim, queries: self.queries, hidden: self.hidden, ..ConceptConfig::default() }
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig { dim: self.dim, ..PolicyConfig::default() }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            stage1_steps: self.stage1_steps,
            stage1_step_size: self.stage1_step_size,
            stage1_batch: self.stage1_batch,
            stage1_optimizer: self.stage1_optimizer,
            stage1_direct: self.stage1_direct,
            stage1_decay: self.stage1_decay,
            box_weight: self.box_weight,
            stage2_steps: self.stage2_steps,
            stage2_step_size: self.stage2_step_size,
            stage2_batch: self.stage2_batch,
            stage2_optimizer: self.stage2_optimizer,
            stage2_concept_scale: self.stage2_concept_scale,
            group: self.group,
            beta: self.beta,
            theta: self.theta,
            ablation: self.ablation,
            seg_term: self.seg_term,
            reshuffle: self.reshuffle,
        }
    }
}
