//! Evaluation under the three router modes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::MaskGrid;
use crate::metrics::{sample_with_overlap, DatasetMetrics, MetricAccumulator};
use crate::policy::{decode_mask, direct_mask, greedy_choices, render, EpisodeView, Model, PolicyError};
use crate::router::{route, RoutePath};
use crate::template;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouterMode {
    /// Always segment from the instruction alone.
    Direct,
    /// Always run the policy and decode its response.
    Reason,
    /// Presence-gated choice between the two.
    Adaptive,
}

impl RouterMode {
    pub const ALL: [RouterMode; 3] = [RouterMode::Direct, RouterMode::Reason, RouterMode::Adaptive];

    pub fn name(self) -> &'static str {
        match self {
            RouterMode::Direct => "direct",
            RouterMode::Reason => "reason",
            RouterMode::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for RouterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RouterMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        RouterMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown router mode {s:?} (allowed: direct, reason, adaptive)"))
    }
}

/// Outcome on one episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub family: String,
    pub presence: f64,
    pub routed_direct: bool,
    pub target_correct: bool,
    pub mask: MaskGrid,
}

/// Runs one episode. The policy is always queried greedily so target
/// accuracy is reported for every mode.
pub fn evaluate_episode(model: &Model, view: &EpisodeView, mode: RouterMode) -> Result<EpisodeOutcome, PolicyError> {
    let (dmask, presence) = direct_mask(model, view)?;
    let routed_direct = match mode {
        RouterMode::Direct => true,
        RouterMode::Reason => false,
        RouterMode::Adaptive => route(presence, &view.instruction).path == RoutePath::Direct,
    };
    let choices = greedy_choices(&model.params, view)?;
    let target_correct = choices.target == view.oracle_target;
    let mask = if routed_direct {
        dmask
    } else {
        match template::parse(&render(view, &choices).1) {
            Ok(r) => decode_mask(model, view, &r)?,
            Err(_) => MaskGrid::zeros(view.width, view.height),
        }
    };
    Ok(EpisodeOutcome { family: view.family.name().to_string(), presence, routed_direct, target_correct, mask })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct Shard {
    metrics: MetricAccumulator,
    routed: usize,
    correct: usize,
}

impl Shard {
    fn merge(&self, o: &Shard) -> Shard {
        Shard { metrics: self.metrics.merge(&o.metrics), routed: self.routed + o.routed, correct: self.correct + o.correct }
    }

    fn report(&self, family: &str) -> FamilyReport {
        let n = self.metrics.n.max(1) as f64;
        FamilyReport {
            family: family.to_string(),
            metrics: self.metrics.finalize(),
            routing_rate: self.routed as f64 / n,
            target_accuracy: self.correct as f64 / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: String,
    pub metrics: DatasetMetrics,
    /// Fraction of episodes sent down the direct path.
    pub routing_rate: f64,
    pub target_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: RouterMode,
    pub families: Vec<FamilyReport>,
    pub overall: FamilyReport,
}

/// Episodes per accumulator shard. Shard boundaries are fixed so the merged
/// sums do not depend on scheduling.
const SHARD: usize = 8;

/// Evaluates shards of episodes in parallel and merges their per-family
/// accumulators in episode order.
pub fn evaluate(model: &Model, views: &[EpisodeView], mode: RouterMode, theta: f64) -> Result<ModeReport, PolicyError> {
    type Shards = BTreeMap<String, Shard>;
    let parts: Vec<Shards> = views
        .par_chunks(SHARD)
        .map(|chunk| -> Result<Shards, PolicyError> {
            let mut acc = Shards::new();
            for v in chunk {
                let o = evaluate_episode(model, v, mode)?;
                let (s, i, u) = sample_with_overlap(&o.mask, &v.gt_mask, theta)?;
                let e = acc.entry(o.family).or_default();
                e.metrics.accumulate(&s, i, u);
                e.routed += usize::from(o.routed_direct);
                e.correct += usize::from(o.target_correct);
            }
            Ok(acc)
        })
        .collect::<Result<_, _>>()?;
    let mut shards = Shards::new();
    for part in parts {
        for (k, v) in part {
            let e = shards.entry(k).or_default();
            *e = e.merge(&v);
        }
    }
    let total = shards.values().fold(Shard::default(), |a, s| a.merge(s));
    Ok(ModeReport {
        mode,
        families: shards.iter().map(|(f, s)| s.report(f)).collect(),
        overall: total.report("all"),
    })
}
