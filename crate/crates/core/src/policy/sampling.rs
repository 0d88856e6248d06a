use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::BoxN;
use crate::numerics::{sigmoid, Graph, ParamStore, Var};
use crate::rewards::RewardBreakdown;
use crate::synthbench::DESCRIPTOR_DIM;
use crate::template::{self, StructuredResponse};

use super::model::{answer_logits, answer_phrases, check_logits, frozen, object_rows, target_logits, PolicyVars};
use super::{EpisodeView, PolicyError, TAG_COUNT};

const TAG_NAMES: [&str; TAG_COUNT] = ["think", "rule", "check", "bbox", "answer"];

const FEATURE_NAMES: [&str; DESCRIPTOR_DIM] = [
    "salience",
    "camouflage",
    "largest size",
    "smallest size",
    "odd one out",
    "shared class",
    "unique class",
    "motion",
    "named color",
    "red",
    "green",
    "blue",
    "yellow",
    "magenta",
    "cyan",
    "disc shape",
];

/// One draw per choice slot. `check` is `None` exactly when the episode has
/// no proxy tile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choices {
    pub check: Option<usize>,
    pub target: usize,
    pub answer: usize,
    pub tags: [bool; TAG_COUNT],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub text: String,
    pub choices: Choices,
    pub log_prob: f64,
    pub breakdown: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub episode_id: usize,
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
}

impl GroupBatch {
    /// Stores the reward breakdowns and recomputes the advantages.
    pub fn assign_rewards(&mut self, rewards: Vec<RewardBreakdown>) {
        for (t, r) in self.trajectories.iter_mut().zip(rewards) {
            t.breakdown = r;
        }
        let r: Vec<f64> = self.trajectories.iter().map(|t| t.breakdown.r_uni).collect();
        self.advantages = super::group_advantages(&r);
    }
}

fn check_choice(view: &EpisodeView, c: &Choices) -> Result<(), PolicyError> {
    let n_check = view.check_boxes.len();
    match (view.proxy, c.check) {
        (Some(_), Some(i)) if i < n_check => {}
        (None, None) => {}
        (p, i) => return Err(PolicyError::Choice(format!("check {i:?} for proxy {p:?} with {n_check} candidates"))),
    }
    if c.target >= view.target_boxes.len() {
        return Err(PolicyError::Choice(format!("target {} of {}", c.target, view.target_boxes.len())));
    }
    if c.answer >= answer_phrases().len() {
        return Err(PolicyError::Choice(format!("answer {}", c.answer)));
    }
    Ok(())
}

/// Log-probability of index `i` under a `1×n` logit row.
pub fn categorical_log_prob(g: &mut Graph, logits: Var, i: usize) -> Result<Var, PolicyError> {
    let lp = g.log_softmax_rows(logits);
    Ok(g.pick(lp, i)?)
}

/// `Σ log σ(±t_j)` over the recorded tag draws.
pub fn tags_log_prob(g: &mut Graph, tags: Var, draws: &[bool]) -> Result<Var, PolicyError> {
    let pos = g.log_sigmoid(tags);
    let neg_t = g.neg(tags);
    let neg = g.log_sigmoid(neg_t);
    let mut total: Option<Var> = None;
    for (j, &d) in draws.iter().enumerate() {
        let term = g.pick(if d { pos } else { neg }, j)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    total.ok_or_else(|| PolicyError::Choice("no tag draws".into()))
}

/// Log-probability of one recorded categorical choice plus the tag draws:
/// the building block [`log_prob`] sums per slot.
pub fn choice_log_prob(g: &mut Graph, logits: &[(Var, usize)], tags: Var, draws: &[bool]) -> Result<Var, PolicyError> {
    let mut total = tags_log_prob(g, tags, draws)?;
    for &(l, i) in logits {
        let lp = categorical_log_prob(g, l, i)?;
        total = g.add(total, lp)?;
    }
    Ok(total)
}

/// Differentiable log-probability of the recorded choices.
pub fn log_prob(g: &mut Graph, pv: &PolicyVars, view: &EpisodeView, c: &Choices) -> Result<Var, PolicyError> {
    check_choice(view, c)?;
    let obj = object_rows(g, pv, view)?;
    let mut slots = Vec::with_capacity(3);
    if let (Some(l), Some(i)) = (check_logits(g, pv, view, obj)?, c.check) {
        slots.push((l, i));
    }
    slots.push((target_logits(g, pv, view, obj, c.check)?, c.target));
    slots.push((answer_logits(g, pv, view, c.target)?, c.answer));
    choice_log_prob(g, &slots, pv.tags, &c.tags)
}

fn draw<R: Rng>(g: &mut Graph, logits: Var, rng: &mut R) -> Result<(usize, f64), PolicyError> {
    let lp = g.log_softmax_rows(logits);
    let lp = g.value(lp).data().to_vec();
    let probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    let dist = WeightedIndex::new(&probs).map_err(|e| PolicyError::Choice(format!("degenerate distribution: {e}")))?;
    let i = dist.sample(rng);
    Ok((i, lp[i]))
}

fn argmax(g: &Graph, logits: Var) -> usize {
    let v = g.value(logits).data();
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// Draws one trajectory from the policy.
pub fn sample_trajectory<R: Rng>(params: &ParamStore, view: &EpisodeView, rng: &mut R) -> Result<Trajectory, PolicyError> {
    let (mut g, pv) = frozen(params);
    let obj = object_rows(&mut g, &pv, view)?;
    let mut total = 0.0;
    let check = match check_logits(&mut g, &pv, view, obj)? {
        Some(l) => {
            let (i, lp) = draw(&mut g, l, rng)?;
            total += lp;
            Some(i)
        }
        None => None,
    };
    let tl = target_logits(&mut g, &pv, view, obj, check)?;
    let (target, lp) = draw(&mut g, tl, rng)?;
    total += lp;
    let al = answer_logits(&mut g, &pv, view, target)?;
    let (answer, lp) = draw(&mut g, al, rng)?;
    total += lp;
    let logits = g.value(pv.tags).data().to_vec();
    let mut tags = [true; TAG_COUNT];
    for (d, &t) in tags.iter_mut().zip(&logits) {
        let p = sigmoid(t);
        *d = rng.gen::<f64>() < p;
        total += if *d { p.ln() } else { (1.0 - p).ln() };
    }
    let choices = Choices { check, target, answer, tags };
    let text = render(view, &choices).1;
    Ok(Trajectory { text, choices, log_prob: total, breakdown: RewardBreakdown::default() })
}

/// `G` trajectories, trajectory `i` drawn from its own stream of `seed`.
pub fn sample_group(view: &EpisodeView, params: &ParamStore, group: usize, seed: u64) -> Result<GroupBatch, PolicyError> {
    if group < 2 {
        return Err(PolicyError::GroupSize(group));
    }
    let trajectories = (0..group)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample_trajectory(params, view, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GroupBatch { episode_id: view.id, trajectories, advantages: vec![0.0; group] })
}

/// Most likely choice in every slot; a tag is emitted when its logit is
/// nonnegative.
pub fn greedy_choices(params: &ParamStore, view: &EpisodeView) -> Result<Choices, PolicyError> {
    let (mut g, pv) = frozen(params);
    let obj = object_rows(&mut g, &pv, view)?;
    let check = check_logits(&mut g, &pv, view, obj)?.map(|l| argmax(&g, l));
    let tl = target_logits(&mut g, &pv, view, obj, check)?;
    let target = argmax(&g, tl);
    let al = answer_logits(&mut g, &pv, view, target)?;
    let answer = argmax(&g, al);
    let mut tags = [true; TAG_COUNT];
    for (d, &t) in tags.iter_mut().zip(g.value(pv.tags).data()) {
        *d = t >= 0.0;
    }
    Ok(Choices { check, target, answer, tags })
}

/// The correct trajectory, used for teacher forcing.
pub fn oracle_choices(view: &EpisodeView) -> Choices {
    Choices { check: view.oracle_check, target: view.oracle_target, answer: view.oracle_answer(), tags: [true; TAG_COUNT] }
}

fn rule_text(view: &EpisodeView, c: &Choices) -> String {
    let e = &view.support_sum;
    let mut v = e.clone();
    if let (Some(i), Some(rows)) = (c.check, view.proxy_rows()) {
        for (s, x) in v.iter_mut().zip(view.objects.row(rows[i])) {
            *s += x;
        }
    }
    let best = (0..DESCRIPTOR_DIM).fold(0, |b, i| if v[i] > v[b] { i } else { b });
    format!("the target is selected by {}", FEATURE_NAMES[best])
}

/// Structured response for `c` and the emitted text. A failed tag draw
/// deletes that tag's opening token from the text.
pub fn render(view: &EpisodeView, c: &Choices) -> (StructuredResponse, String) {
    let n = view.support_count;
    let think = match view.proxy {
        Some(_) => format!("compare {n} annotated references and verify on the held back tile"),
        None => format!("compare {n} annotated reference"),
    };
    let response = StructuredResponse {
        think,
        rule: rule_text(view, c),
        check: c.check.map_or(BoxN::UNIT, |i| view.check_boxes[i]),
        bbox: view.target_boxes[c.target],
        answer: answer_phrases()[c.answer].clone(),
    };
    let mut text = template::serialize(&response);
    for (tag, ok) in TAG_NAMES.iter().zip(c.tags) {
        if !ok {
            text = text.replacen(&format!("<{tag}>"), "", 1);
        }
    }
    (response, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Tensor};
    use crate::policy::{init_policy, PolicyConfig};
    use crate::synthbench::{build_episode, SceneSpec, TaskRule};
    use crate::template::{format_reward, parse};

    fn view(rule: TaskRule, k: usize, seed: u64) -> EpisodeView {
        let ep = build_episode(rule, k, seed, &SceneSpec::default()).unwrap();
        EpisodeView::new(&ep).unwrap()
    }

    fn params(seed: u64) -> ParamStore {
        init_policy(&PolicyConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn uniform_target_frequencies() {
        // k=1 and zero scoring weights: the target draw is uniform
        let spec = SceneSpec { min_objects: 4, max_objects: 4, ..SceneSpec::default() };
        let ep = build_episode(TaskRule::CdSaliency, 1, 5, &spec).unwrap();
        let v = EpisodeView::new(&ep).unwrap();
        let p = params(1);
        let reps = 10_000;
        let mut counts = [0usize; 4];
        for r in 0..reps {
            let b = sample_group(&v, &p, 8, r as u64).unwrap();
            for t in &b.trajectories {
                counts[t.choices.target] += 1;
            }
        }
        let n = (reps * 8) as f64;
        let sigma = (0.25 * 0.75 / n).sqrt();
        for c in counts {
            assert!((c as f64 / n - 0.25).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let v = view(TaskRule::CdSaliency, 2, 3);
        let p = params(2);
        assert_eq!(sample_group(&v, &p, 8, 11).unwrap(), sample_group(&v, &p, 8, 11).unwrap());
    }

    #[test]
    fn saturated_tags_give_well_formed_text() {
        let v = view(TaskRule::CdSaliency, 2, 4);
        let mut p = params(3);
        p.insert("policy.tags", Tensor::full(&[1, TAG_COUNT], 20.0));
        for t in sample_group(&v, &p, 8, 0).unwrap().trajectories {
            assert_eq!(format_reward(&t.text), 1.0);
            let (r, text) = render(&v, &t.choices);
            assert_eq!(text, template::serialize(&r));
            let parsed = parse(&t.text).unwrap();
            let close = |a: BoxN, b: BoxN| a.to_array().iter().zip(b.to_array()).all(|(x, y)| (x - y).abs() <= 1e-4);
            assert!(close(parsed.bbox, v.target_boxes[t.choices.target]));
            assert!(close(parsed.check, v.check_boxes[t.choices.check.unwrap()]), "{:?} {:?}", parsed.check, v.check_boxes);
        }
    }

    #[test]
    fn failed_tag_breaks_format() {
        let v = view(TaskRule::CdSaliency, 2, 4);
        let mut c = oracle_choices(&v);
        c.tags[2] = false;
        assert_eq!(parse(&render(&v, &c).1), Err(template::ParseError::MissingTag));
    }

    #[test]
    fn recorded_log_prob_matches_graph() {
        let v = view(TaskRule::CdAnomaly, 2, 8);
        let mut p = params(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (name, t) in p.clone().iter() {
            let t = t.map(|_| rng.gen_range(-0.5..0.5));
            p.insert(name.clone(), t);
        }
        for t in sample_group(&v, &p, 8, 1).unwrap().trajectories {
            let (mut g, pv) = frozen(&p);
            let lp = log_prob(&mut g, &pv, &v, &t.choices).unwrap();
            assert!((g.value(lp).item() - t.log_prob).abs() < 1e-12);
            assert!(t.log_prob <= 0.0);
        }
    }

    #[test]
    fn one_factor_log_prob() {
        let mut g = Graph::new();
        let single = g.constant(Tensor::row_vector(vec![0.7]));
        let tags = g.constant(Tensor::row_vector(vec![1.3]));
        let lp = choice_log_prob(&mut g, &[(single, 0)], tags, &[true]).unwrap();
        assert!((g.value(lp).item() - sigmoid(1.3).ln()).abs() < 1e-15);
    }

    #[test]
    fn two_equiprobable_candidates() {
        let mut g = Graph::new();
        let two = g.constant(Tensor::row_vector(vec![0.4, 0.4]));
        let tags = g.constant(Tensor::full(&[1, TAG_COUNT], 60.0));
        let lp = choice_log_prob(&mut g, &[(two, 1), (two, 0)], tags, &[true; TAG_COUNT]).unwrap();
        assert!((g.value(lp).item() - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_choice_is_rejected() {
        let v = view(TaskRule::CdSaliency, 2, 3);
        let p = params(0);
        let (mut g, pv) = frozen(&p);
        let mut c = oracle_choices(&v);
        c.target = 99;
        assert!(matches!(log_prob(&mut g, &pv, &v, &c), Err(PolicyError::Choice(_))));
        let mut c = oracle_choices(&v);
        c.check = None;
        assert!(log_prob(&mut g, &pv, &v, &c).is_err());
    }

    #[test]
    fn log_prob_gradients() {
        let v = view(TaskRule::CdSaliency, 2, 6);
        let base = params(7);
        let c = oracle_choices(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for name in ["policy.alpha", "policy.m", "policy.u_check", "policy.u_target", "policy.answer", "policy.tags", "policy.enc"] {
            let start = base.get(name).unwrap().map(|_| rng.gen_range(-0.3..0.3));
            let err = grad_check(
                |g, x| {
                    let b = base.bind(g, &[]);
                    let mut pv = PolicyVars::from_bound(&b);
                    let slot = match name {
                        "policy.alpha" => &mut pv.alpha,
                        "policy.m" => &mut pv.m,
                        "policy.u_check" => &mut pv.u_check,
                        "policy.u_target" => &mut pv.u_target,
                        "policy.answer" => &mut pv.answer,
                        "policy.tags" => &mut pv.tags,
                        _ => &mut pv.enc,
                    };
                    *slot = x;
                    log_prob(g, &pv, &v, &c).map_err(|e| match e {
                        PolicyError::Numerics(n) => n,
                        other => crate::numerics::NumericsError::Contract(other.to_string()),
                    })
                },
                &start,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn greedy_follows_logits() {
        let v = view(TaskRule::CdSaliency, 2, 6);
        let mut p = params(0);
        p.insert("policy.alpha", Tensor::scalar(10.0));
        let c = greedy_choices(&p, &v).unwrap();
        assert_eq!(c.target, v.oracle_target);
        assert_eq!(c.check, v.oracle_check);
    }
}
