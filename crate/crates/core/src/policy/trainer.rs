use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept::{
    assemble_prompt, init_params, predict_mask, probabilities, seg_loss, text_rows, tokenize, translate, ConceptConfig,
    CtmVars, MaskHeadVars, MaskOutput,
};
use crate::geometry::MaskGrid;
use crate::numerics::{Bound, Graph, Optimizer, OptimizerKind, ParamStore, Tensor, Var};
use crate::rewards::{unified_reward, RewardAblation, RewardBreakdown, RewardTarget};
use crate::synthbench::{recompose, Episode, Level};
use crate::template::{self, StructuredResponse};

use super::model::{frozen, hidden_states, init_policy, object_rows, PolicyConfig, PolicyVars};
use super::sampling::{log_prob, oracle_choices, render, sample_group};
use super::{EpisodeView, PolicyError};

/// Concept and policy configuration plus every named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub concept: ConceptConfig,
    pub policy: PolicyConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn init(concept: ConceptConfig, policy: PolicyConfig, seed: u64) -> Result<Self, PolicyError> {
        if concept.dim != policy.dim {
            return Err(PolicyError::Choice(format!("concept width {} != policy width {}", concept.dim, policy.dim)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = init_params(&concept, &mut rng);
        params.merge_from(&init_policy(&policy, &mut rng));
        Ok(Self { concept, policy, params })
    }
}

/// Which trajectories contribute the segmentation term in Stage II.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegTerm {
    /// Mean over every trajectory that parses.
    #[default]
    All,
    /// Only the highest-reward trajectory of each group.
    Best,
}

impl std::str::FromStr for SegTerm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Self::All),
            "best" => Ok(Self::Best),
            other => Err(format!("unknown seg term {other:?} (allowed: all, best)")),
        }
    }
}

impl std::fmt::Display for SegTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::All => "all",
            Self::Best => "best",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub stage1_steps: usize,
    pub stage1_step_size: f64,
    pub stage1_batch: usize,
    pub stage1_optimizer: OptimizerKind,
    /// Also train the direct (instruction-only) path in Stage I.
    pub stage1_direct: bool,
    /// Linear step-size decay to zero over Stage I.
    pub stage1_decay: bool,
    /// Weight of the box-alignment term added to the segmentation loss.
    pub box_weight: f64,
    pub stage2_steps: usize,
    pub stage2_step_size: f64,
    pub stage2_batch: usize,
    pub stage2_optimizer: OptimizerKind,
    /// Multiplier on CTM and mask-head gradients during Stage II.
    pub stage2_concept_scale: f64,
    pub group: usize,
    pub beta: f64,
    pub theta: f64,
    pub ablation: RewardAblation,
    pub seg_term: SegTerm,
    /// Redraw each episode's proxy tile at every pass over the training set.
    pub reshuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            stage1_steps: 500,
            stage1_step_size: 0.01,
            stage1_batch: 8,
            stage1_optimizer: OptimizerKind::Adam,
            stage1_direct: true,
            stage1_decay: true,
            box_weight: 10.0,
            stage2_steps: 2000,
            stage2_step_size: 0.05,
            stage2_batch: 1,
            stage2_optimizer: OptimizerKind::Sgd,
            stage2_concept_scale: 0.1,
            group: 8,
            beta: 0.04,
            theta: 0.5,
            ablation: RewardAblation::All,
            seg_term: SegTerm::All,
            reshuffle: false,
        }
    }
}

fn vars(b: &Bound) -> (PolicyVars, CtmVars, MaskHeadVars) {
    (PolicyVars::from_bound(b), CtmVars::from_bound(b), MaskHeadVars::from_bound(b))
}

/// Reason-path pixel logits for a parsed response.
pub fn decode_logits(
    g: &mut Graph,
    cfg: &ConceptConfig,
    ctm: &CtmVars,
    m: &MaskHeadVars,
    obj: Var,
    view: &EpisodeView,
    r: &StructuredResponse,
) -> Result<MaskOutput, PolicyError> {
    let h = hidden_states(g, obj, view, r)?;
    let z = translate(g, h, ctm)?.z;
    let text = text_rows(g, m, &tokenize(&r.answer))?;
    let prompt = assemble_prompt(g, z, text)?;
    let pixels = g.constant(view.pixels.clone());
    Ok(predict_mask(g, m, prompt, cfg.queries, pixels, view.width, view.height, cfg.box_temp)?)
}

/// Direct-path pixel logits: empty concept groups followed by the
/// instruction's words.
pub fn direct_logits(g: &mut Graph, cfg: &ConceptConfig, m: &MaskHeadVars, view: &EpisodeView) -> Result<MaskOutput, PolicyError> {
    let z = g.constant(Tensor::zeros(&[cfg.queries, cfg.dim]));
    let text = text_rows(g, m, &tokenize(&view.instruction))?;
    let prompt = assemble_prompt(g, z, text)?;
    let pixels = g.constant(view.pixels.clone());
    Ok(predict_mask(g, m, prompt, cfg.queries, pixels, view.width, view.height, cfg.box_temp)?)
}

/// Soft mask decoded for `r` with frozen parameters.
pub fn decode_mask(model: &Model, view: &EpisodeView, r: &StructuredResponse) -> Result<MaskGrid, PolicyError> {
    let mut g = Graph::new();
    let b = model.params.bind(&mut g, &[]);
    let (pv, ctm, m) = vars(&b);
    let obj = object_rows(&mut g, &pv, view)?;
    let out = decode_logits(&mut g, &model.concept, &ctm, &m, obj, view, r)?;
    Ok(probabilities(&g, out.logits, view.width, view.height))
}

pub fn decode_box(model: &Model, view: &EpisodeView, r: &StructuredResponse) -> Result<[f64; 4], PolicyError> {
    let mut g = Graph::new();
    let b = model.params.bind(&mut g, &[]);
    let (pv, ctm, m) = vars(&b);
    let obj = object_rows(&mut g, &pv, view)?;
    let out = decode_logits(&mut g, &model.concept, &ctm, &m, obj, view, r)?;
    let v = g.value(out.bbox).data();
    Ok([v[0], v[1], v[2], v[3]])
}

/// Direct-path soft mask and presence score.
pub fn direct_mask(model: &Model, view: &EpisodeView) -> Result<(MaskGrid, f64), PolicyError> {
    let mut g = Graph::new();
    let b = model.params.bind(&mut g, &[]);
    let m = MaskHeadVars::from_bound(&b);
    let out = direct_logits(&mut g, &model.concept, &m, view)?;
    let presence = g.value(out.presence).item();
    Ok((probabilities(&g, out.logits, view.width, view.height), presence))
}

/// Direct-path target: the ground truth for appearance-only concepts and an
/// empty mask for everything else.
fn direct_target(view: &EpisodeView) -> MaskGrid {
    if view.family.level() == Level::CI {
        view.gt_mask.clone()
    } else {
        MaskGrid::zeros(view.width, view.height)
    }
}

/// Mean squared distance between the spatial box and the response's bbox.
pub fn box_alignment(g: &mut Graph, bbox: Var, r: &StructuredResponse) -> Result<Var, PolicyError> {
    let t = g.constant(Tensor::row_vector(r.bbox.to_array().to_vec()));
    let d = g.sub(bbox, t)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

/// Teacher-forced segmentation loss of the reason path, plus the direct
/// path when `direct` is set.
pub fn seg_loss_for(
    g: &mut Graph,
    model: &Model,
    view: &EpisodeView,
    direct: bool,
    box_weight: f64,
    trainable: &[&str],
) -> Result<(Var, Bound), PolicyError> {
    let b = model.params.bind(g, trainable);
    let (pv, ctm, m) = vars(&b);
    let obj = object_rows(g, &pv, view)?;
    let (r, _) = render(view, &oracle_choices(view));
    let r = template::parse(&template::serialize(&r)).expect("oracle response parses");
    let out = decode_logits(g, &model.concept, &ctm, &m, obj, view, &r)?;
    let mut loss = seg_loss(g, out.logits, &view.gt_mask)?.total;
    if box_weight > 0.0 {
        let bl = box_alignment(g, out.bbox, &r)?;
        let bl = g.scale(bl, box_weight);
        loss = g.add(loss, bl)?;
    }
    if direct {
        let d = direct_logits(g, &model.concept, &m, view)?;
        let dl = seg_loss(g, d.logits, &direct_target(view))?.total;
        loss = g.add(loss, dl)?;
    }
    Ok((loss, b))
}

fn ensure_finite(params: &ParamStore, loss: f64, step: usize) -> Result<(), PolicyError> {
    if !loss.is_finite() {
        return Err(PolicyError::NonFinite { what: "loss".into(), step });
    }
    match params.first_non_finite() {
        Some(name) => Err(PolicyError::NonFinite { what: format!("parameter {name}"), step }),
        None => Ok(()),
    }
}

const STAGE1_TRAINABLE: [&str; 2] = ["ctm.", "mask."];
const STAGE2_TRAINABLE: [&str; 3] = ["policy.", "ctm.", "mask."];

/// One Stage I update on CTM and mask-head parameters; returns the batch
/// loss before the update.
pub fn stage1_step(
    model: &mut Model,
    batch: &[&EpisodeView],
    opt: &mut Optimizer,
    direct: bool,
    box_weight: f64,
) -> Result<f64, PolicyError> {
    let mut grads = Vec::new();
    let mut total = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    for view in batch {
        let mut g = Graph::new();
        let (loss, b) = seg_loss_for(&mut g, model, view, direct, box_weight, &STAGE1_TRAINABLE)?;
        let loss = g.scale(loss, scale);
        total += g.value(loss).item();
        let gr = g.backward(loss)?;
        grads.extend(b.collect(&gr));
    }
    opt.apply(&mut model.params, grads)?;
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Record {
    pub stage: u8,
    pub step: usize,
    pub episodes: Vec<usize>,
    pub seg_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Record {
    pub stage: u8,
    pub step: usize,
    pub episodes: Vec<usize>,
    pub r_format: f64,
    pub r_mask: f64,
    pub r_meta: f64,
    pub r_uni: f64,
    pub advantage_mean: f64,
    pub advantage_std: f64,
    pub policy_term: f64,
    pub kl: f64,
    pub seg_loss: f64,
    pub loss: f64,
    /// Fraction of sampled trajectories that picked the correct target.
    pub target_accuracy: f64,
    /// First sampled response of the step.
    pub sample: String,
}

pub fn views(episodes: &[Episode]) -> Result<Vec<EpisodeView>, PolicyError> {
    episodes.iter().map(EpisodeView::new).collect()
}

/// Views for training pass `pass`, with fresh proxy tiles when `reshuffle`
/// is set.
fn pass_views(episodes: &[Episode], cfg: &TrainConfig, stage: u64, pass: u64) -> Result<Vec<EpisodeView>, PolicyError> {
    if !cfg.reshuffle || pass == 0 {
        return views(episodes);
    }
    episodes
        .iter()
        .map(|e| {
            let seed = cfg.seed ^ (stage << 56) ^ (pass << 24) ^ e.id as u64;
            EpisodeView::new(&recompose(e, seed))
        })
        .collect()
}

/// Runs Stage I, cycling through shuffled passes over `episodes`.
pub fn train_stage1<F: FnMut(&Stage1Record)>(
    model: &mut Model,
    episodes: &[Episode],
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<Vec<Stage1Record>, PolicyError> {
    let mut opt = Optimizer::new(cfg.stage1_optimizer, cfg.stage1_step_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(cfg.stage1_steps);
    let mut views = views(episodes)?;
    let mut pass = 0u64;
    for step in 0..cfg.stage1_steps {
        let mut batch = Vec::with_capacity(cfg.stage1_batch);
        while batch.len() < cfg.stage1_batch.min(views.len()) {
            if order.is_empty() {
                if step > 0 || !batch.is_empty() {
                    pass += 1;
                    if cfg.reshuffle {
                        views = pass_views(episodes, cfg, 1, pass)?;
                    }
                }
                order = (0..views.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().expect("refilled"));
        }
        let refs: Vec<&EpisodeView> = batch.iter().map(|&i| &views[i]).collect();
        if cfg.stage1_decay {
            opt.set_step_size(cfg.stage1_step_size * (1.0 - step as f64 / cfg.stage1_steps as f64));
        }
        let loss = stage1_step(model, &refs, &mut opt, cfg.stage1_direct, cfg.box_weight)?;
        ensure_finite(&model.params, loss, step)?;
        let rec = Stage1Record { stage: 1, step, episodes: refs.iter().map(|v| v.id).collect(), seg_loss: loss };
        on_step(&rec);
        out.push(rec);
    }
    Ok(out)
}

fn ref_log_prob(reference: &ParamStore, view: &EpisodeView, c: &super::Choices) -> Result<f64, PolicyError> {
    let (mut g, pv) = frozen(reference);
    let lp = log_prob(&mut g, &pv, view, c)?;
    Ok(g.value(lp).item())
}

/// One Stage II update over a batch of episodes. `seed` fixes every group's
/// sampling streams.
pub fn stage2_step(
    model: &mut Model,
    reference: &ParamStore,
    batch: &[&EpisodeView],
    opt: &mut Optimizer,
    cfg: &TrainConfig,
    step: usize,
    seed: u64,
) -> Result<Stage2Record, PolicyError> {
    let weights = cfg.ablation.weights();
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut grads = Vec::new();
    let mut sums = [0.0f64; 4];
    let (mut adv_mean, mut adv_sq, mut n_traj) = (0.0, 0.0, 0usize);
    let (mut pol_total, mut kl_total, mut seg_total, mut loss_total, mut correct) = (0.0, 0.0, 0.0, 0.0, 0usize);
    let mut sample = None;
    for (e, view) in batch.iter().enumerate() {
        let mut group = sample_group(view, &model.params, cfg.group, seed.wrapping_add(e as u64))?;
        if sample.is_none() {
            sample = Some(group.trajectories[0].text.clone());
        }
        let mut g = Graph::new();
        let b = model.params.bind(&mut g, &STAGE2_TRAINABLE);
        let (pv, ctm, m) = vars(&b);
        let obj = object_rows(&mut g, &pv, view)?;

        // decode every parsed trajectory once; its probabilities score the
        // mask reward and its logits feed the segmentation term
        let mut seg_terms: Vec<Option<Var>> = Vec::with_capacity(group.trajectories.len());
        let mut rewards = Vec::with_capacity(group.trajectories.len());
        let target = RewardTarget { gt_check: view.gt_check, gt_box: view.gt_box, gt_mask: &view.gt_mask };
        for t in &group.trajectories {
            let mut seg = None;
            let mut err = None;
            let r = unified_reward(&t.text, &target, &weights, cfg.theta, |resp| {
                match decode_logits(&mut g, &model.concept, &ctm, &m, obj, view, resp) {
                    Ok(out) => {
                        let p = probabilities(&g, out.logits, view.width, view.height);
                        match seg_loss(&mut g, out.logits, &view.gt_mask) {
                            Ok(l) => seg = Some(l.total),
                            Err(e) => err = Some(PolicyError::from(e)),
                        }
                        p
                    }
                    Err(e) => {
                        err = Some(e);
                        MaskGrid::zeros(view.width, view.height)
                    }
                }
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            seg_terms.push(seg);
            rewards.push(r);
        }
        group.assign_rewards(rewards);

        let gsize = group.trajectories.len() as f64;
        let mut pol: Option<Var> = None;
        let mut kl: Option<Var> = None;
        for (t, &a) in group.trajectories.iter().zip(&group.advantages) {
            let lp = log_prob(&mut g, &pv, view, &t.choices)?;
            let term = g.scale(lp, -a / gsize);
            pol = Some(match pol {
                None => term,
                Some(p) => g.add(p, term)?,
            });
            // Δ = log π_ref − log π_θ; k3 = exp(Δ) − Δ − 1
            let r = ref_log_prob(reference, view, &t.choices)?;
            let nlp = g.neg(lp);
            let delta = g.add_const(nlp, r);
            let ex = g.exp(delta);
            let k = g.sub(ex, delta)?;
            let k = g.add_const(k, -1.0);
            let k = g.scale(k, 1.0 / gsize);
            kl = Some(match kl {
                None => k,
                Some(p) => g.add(p, k)?,
            });
        }
        let pol = pol.expect("group is nonempty");
        let kl = kl.expect("group is nonempty");

        let chosen: Vec<Var> = match cfg.seg_term {
            SegTerm::All => seg_terms.iter().flatten().copied().collect(),
            SegTerm::Best => {
                let best = (0..group.trajectories.len())
                    .filter(|&i| seg_terms[i].is_some())
                    .fold(None, |b: Option<usize>, i| match b {
                        Some(j) if group.trajectories[j].breakdown.r_uni >= group.trajectories[i].breakdown.r_uni => Some(j),
                        _ => Some(i),
                    });
                best.and_then(|i| seg_terms[i]).into_iter().collect()
            }
        };
        let kl_w = g.scale(kl, cfg.beta);
        let mut loss = g.add(pol, kl_w)?;
        let mut seg_value = 0.0;
        if !chosen.is_empty() {
            let mut s = chosen[0];
            for &v in &chosen[1..] {
                s = g.add(s, v)?;
            }
            let s = g.scale(s, 1.0 / chosen.len() as f64);
            seg_value = g.value(s).item();
            loss = g.add(loss, s)?;
        }
        let loss = g.scale(loss, scale);
        let gr = g.backward(loss)?;
        for (name, t) in b.collect(&gr) {
            let t = if name.starts_with("policy.") { t } else { t.map(|x| x * cfg.stage2_concept_scale) };
            grads.push((name, t));
        }

        pol_total += g.value(pol).item() * scale;
        kl_total += g.value(kl).item() * scale;
        seg_total += seg_value * scale;
        loss_total += g.value(loss).item();
        for (t, &a) in group.trajectories.iter().zip(&group.advantages) {
            let br: &RewardBreakdown = &t.breakdown;
            sums[0] += br.r_format;
            sums[1] += br.r_mask;
            sums[2] += br.r_meta;
            sums[3] += br.r_uni;
            adv_mean += a;
            adv_sq += a * a;
            n_traj += 1;
            if t.choices.target == view.oracle_target {
                correct += 1;
            }
        }
    }
    opt.apply(&mut model.params, grads)?;
    ensure_finite(&model.params, loss_total, step)?;
    let n = n_traj.max(1) as f64;
    let am = adv_mean / n;
    Ok(Stage2Record {
        stage: 2,
        step,
        episodes: batch.iter().map(|v| v.id).collect(),
        r_format: sums[0] / n,
        r_mask: sums[1] / n,
        r_meta: sums[2] / n,
        r_uni: sums[3] / n,
        advantage_mean: am,
        advantage_std: (adv_sq / n - am * am).max(0.0).sqrt(),
        policy_term: pol_total,
        kl: kl_total,
        seg_loss: seg_total,
        loss: loss_total,
        target_accuracy: correct as f64 / n,
        sample: sample.unwrap_or_default(),
    })
}

/// Runs Stage II from the current parameters, which also become the frozen
/// reference policy. Episodes are drawn with replacement; with `reshuffle`
/// the proxies are redrawn every `episodes.len()` steps.
pub fn train_stage2<F: FnMut(&Stage2Record)>(
    model: &mut Model,
    episodes: &[Episode],
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<Vec<Stage2Record>, PolicyError> {
    let reference = model.params.clone();
    let mut opt = Optimizer::new(cfg.stage2_optimizer, cfg.stage2_step_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut out = Vec::with_capacity(cfg.stage2_steps);
    let mut views = views(episodes)?;
    for step in 0..cfg.stage2_steps {
        if cfg.reshuffle && step > 0 && step % episodes.len().max(1) == 0 {
            views = pass_views(episodes, cfg, 2, (step / episodes.len()) as u64)?;
        }
        let batch: Vec<&EpisodeView> =
            (0..cfg.stage2_batch).map(|_| &views[rng.gen_range(0..views.len())]).collect();
        let seed = rng.gen::<u64>();
        let rec = stage2_step(model, &reference, &batch, &mut opt, cfg, step, seed)?;
        on_step(&rec);
        out.push(rec);
    }
    Ok(out)
}
