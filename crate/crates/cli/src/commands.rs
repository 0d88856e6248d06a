use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use conceptgrid::checkpoint::{self, CheckpointMeta};
use conceptgrid::config::RunConfig;
use conceptgrid::eval::{evaluate, RouterMode};
use conceptgrid::policy::{train_stage1, train_stage2, views, Model, Stage1Record, Stage2Record};
use conceptgrid::rewards::RewardAblation;
use conceptgrid::synthbench::{gen_dataset, read_dataset, write_dataset, DatasetSpec, Episode, Manifest, MANIFEST_FILE};
use conceptgrid::template::{render_prompt, TEMPLATE_VERSION};
use serde::Serialize;
use serde_json::json;

use crate::error::{sibling, CliError};
use crate::report::{EvalReport, SweepReport, SweepRow};

/// Seed offset of the held-out set a sweep scores on.
pub const HELD_OUT_OFFSET: u64 = 1000;

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<Manifest, CliError> {
    let spec = cfg.dataset_spec();
    let eps = gen_dataset(&spec)?;
    Ok(write_dataset(out, &spec, &eps)?)
}

fn load_dataset(dir: &Path) -> Result<Vec<Episode>, CliError> {
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(CliError::Io(format!("no dataset at {} (run `conceptgrid gen` first)", dir.display())));
    }
    Ok(read_dataset(dir)?.1)
}

/// JSON-lines trace. The first line is a header; the last a summary.
struct Trace {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Trace {
    fn create(path: &Path, cfg: &RunConfig, stage: u8, first: Option<&Episode>) -> Result<Self, CliError> {
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut t = Trace { path: path.to_path_buf(), out: BufWriter::new(f) };
        let prompt = first.map(|e| render_prompt(&e.instruction, &e.support.iter().map(|a| a.global_box).collect::<Vec<_>>()));
        t.line(&json!({
            "kind": "header",
            "stage": stage,
            "template_version": TEMPLATE_VERSION,
            "config": cfg.to_text(),
            "prompt": prompt,
        }))?;
        Ok(t)
    }

    fn line<T: Serialize>(&mut self, v: &T) -> Result<(), CliError> {
        let s = serde_json::to_string(v).expect("trace record serializes");
        writeln!(self.out, "{s}").map_err(|e| CliError::io(&self.path, e))
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Steps averaged into the Stage II summary.
const SUMMARY_WINDOW: usize = 100;

fn stage2_summary(recs: &[Stage2Record]) -> serde_json::Value {
    let tail = &recs[recs.len().saturating_sub(SUMMARY_WINDOW)..];
    let m = |f: fn(&Stage2Record) -> f64| mean(tail.iter().map(f));
    json!({
        "kind": "summary",
        "stage": 2,
        "steps": recs.len(),
        "window": tail.len(),
        "r_format": m(|r| r.r_format),
        "r_mask": m(|r| r.r_mask),
        "r_meta": m(|r| r.r_meta),
        "r_uni": m(|r| r.r_uni),
        "kl": m(|r| r.kl),
        "seg_loss": m(|r| r.seg_loss),
        "loss": m(|r| r.loss),
        "target_accuracy": m(|r| r.target_accuracy),
    })
}

fn meta(cfg: &RunConfig, model: &Model, stage: u8) -> CheckpointMeta {
    CheckpointMeta { concept: model.concept.clone(), policy: model.policy.clone(), stage, seed: cfg.seed, layer: None }
}

pub fn stage1(cfg: &RunConfig, episodes: &[Episode], trace: &Path) -> Result<Model, CliError> {
    let mut model = Model::init(cfg.concept(), cfg.policy(), cfg.seed)?;
    let mut t = Trace::create(trace, cfg, 1, episodes.first())?;
    let mut io = Ok(());
    let recs = train_stage1(&mut model, episodes, &cfg.train(), |r: &Stage1Record| {
        if io.is_ok() {
            io = t.line(r);
        }
    });
    io?;
    let recs = recs.map_err(|e| CliError::training(e, trace))?;
    t.line(&json!({
        "kind": "summary",
        "stage": 1,
        "steps": recs.len(),
        "first_seg_loss": recs.first().map(|r| r.seg_loss),
        "final_seg_loss": recs.last().map(|r| r.seg_loss),
    }))?;
    t.finish()?;
    Ok(model)
}

pub fn stage2(cfg: &RunConfig, model: &mut Model, episodes: &[Episode], trace: &Path) -> Result<(), CliError> {
    let mut t = Trace::create(trace, cfg, 2, episodes.first())?;
    let mut io = Ok(());
    let recs = train_stage2(model, episodes, &cfg.train(), |r: &Stage2Record| {
        if io.is_ok() {
            io = t.line(r);
        }
    });
    io?;
    let recs = recs.map_err(|e| CliError::training(e, trace))?;
    t.line(&stage2_summary(&recs))?;
    t.finish()
}

/// Loads a checkpoint and checks it against the config's dimensions.
pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<(CheckpointMeta, Model), CliError> {
    if !path.is_file() {
        return Err(CliError::Io(format!("no checkpoint at {}", path.display())));
    }
    let (meta, params) = checkpoint::load(path)?;
    if let Some(name) = params.first_non_finite() {
        return Err(CliError::Numerics(format!("checkpoint {} holds non-finite values in {name}", path.display())));
    }
    let model = checkpoint::into_model(cfg.concept(), cfg.policy(), params)?;
    Ok((meta, model))
}

/// Runs one training stage; returns the checkpoint and trace paths.
pub fn train(cfg: &RunConfig, stage: u8, out: Option<PathBuf>) -> Result<(PathBuf, PathBuf), CliError> {
    let episodes = load_dataset(&cfg.dataset)?;
    match stage {
        1 => {
            let out = out.unwrap_or_else(|| cfg.checkpoint.clone());
            let trace = sibling(&out, "stage1.jsonl");
            let model = stage1(cfg, &episodes, &trace)?;
            checkpoint::save(&out, &meta(cfg, &model, 1), &model.params)?;
            Ok((out, trace))
        }
        2 => {
            let (m, mut model) = load_model(cfg, &cfg.checkpoint)?;
            if m.stage != 1 {
                return Err(CliError::Config(format!(
                    "{} is a stage-{} checkpoint; stage 2 starts from stage 1",
                    cfg.checkpoint.display(),
                    m.stage
                )));
            }
            let out = out.unwrap_or_else(|| sibling(&cfg.checkpoint, "stage2.ckpt"));
            let trace = out.with_extension("jsonl");
            stage2(cfg, &mut model, &episodes, &trace)?;
            checkpoint::save(&out, &meta(cfg, &model, 2), &model.params)?;
            Ok((out, trace))
        }
        other => Err(CliError::Config(format!("stage must be 1 or 2, got {other}"))),
    }
}

fn score(cfg: &RunConfig, model: &Model, episodes: &[Episode], checkpoint: &str, dataset: &str) -> Result<EvalReport, CliError> {
    let vs = views(episodes)?;
    let modes = RouterMode::ALL
        .iter()
        .map(|&m| evaluate(model, &vs, m, cfg.theta))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::new(checkpoint, dataset, episodes.len(), cfg.theta, cfg.router, &modes))
}

pub fn eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let (_, model) = load_model(cfg, &cfg.checkpoint)?;
    let episodes = load_dataset(&cfg.dataset)?;
    let report = score(
        cfg,
        &model,
        &episodes,
        &cfg.checkpoint.display().to_string(),
        &cfg.dataset.display().to_string(),
    )?;
    report.write(&cfg.report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    L2,
    K,
    Rewards,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "L2" | "l2" | "queries" => Ok(Axis::L2),
            "k" => Ok(Axis::K),
            "rewards" => Ok(Axis::Rewards),
            other => Err(CliError::Config(format!("unknown sweep axis {other:?} (allowed: L2, k, rewards)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::L2 => "L2",
            Axis::K => "k",
            Axis::Rewards => "rewards",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            Axis::L2 => &["1", "2", "4", "8"],
            Axis::K => &["1", "2"],
            Axis::Rewards => &["no_box_meta", "no_mask", "all"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Config for one setting. A mosaic order too small for some families
    /// drops them.
    fn apply(self, base: &RunConfig, value: &str) -> Result<(RunConfig, String), CliError> {
        let mut c = base.clone();
        let label = match self {
            Axis::L2 => {
                c.set("queries", value)?;
                format!("L2={value}")
            }
            Axis::K => {
                c.set("k", value)?;
                let tiles = c.k * c.k;
                c.families.retain(|f| f.min_tiles() <= tiles);
                format!("{value}x{value}")
            }
            Axis::Rewards => {
                c.set("ablation", value)?;
                value.parse::<RewardAblation>().map_err(CliError::Config)?.label().to_string()
            }
        };
        c.validate()?;
        Ok((c, label))
    }
}

/// Trains and scores one model per axis value on a freshly generated
/// training set, evaluating on a held-out set drawn with a shifted seed.
pub fn sweep(cfg: &RunConfig, axis: Axis, values: &[String]) -> Result<SweepReport, CliError> {
    if values.is_empty() {
        return Err(CliError::Config(format!("sweep over {} has no values", axis.name())));
    }
    let settings = values.iter().map(|v| axis.apply(cfg, v).map(|(c, l)| (v, c, l))).collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&cfg.report).map_err(|e| CliError::io(&cfg.report, e))?;
    let mut rows = Vec::with_capacity(settings.len());
    for (value, c, label) in settings {
        let dir = cfg.report.join(format!("{}-{value}", axis.name()));
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let train_set = gen_dataset(&c.dataset_spec())?;
        let held = gen_dataset(&DatasetSpec { seed: c.seed + HELD_OUT_OFFSET, ..c.dataset_spec() })?;
        let mut model = stage1(&c, &train_set, &dir.join("stage1.jsonl"))?;
        if c.stage2_steps > 0 {
            stage2(&c, &mut model, &train_set, &dir.join("stage2.jsonl"))?;
        }
        let ckpt = dir.join("model.ckpt");
        checkpoint::save(&ckpt, &meta(&c, &model, if c.stage2_steps > 0 { 2 } else { 1 }), &model.params)?;
        let report = score(&c, &model, &held, &ckpt.display().to_string(), "generated")?;
        report.write(&dir)?;
        let section = report.mode(c.router).expect("every mode is scored");
        rows.push(SweepRow {
            axis: axis.name().into(),
            value: value.clone(),
            label,
            mode: c.router,
            row: section.overall.clone(),
        });
    }
    let report = SweepReport { schema_version: crate::report::REPORT_SCHEMA_VERSION, axis: axis.name().into(), rows };
    report.write(&cfg.report)?;
    Ok(report)
}
