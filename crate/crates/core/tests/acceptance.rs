//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs without the libtest harness so the lines
//! always reach the output.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use conceptgrid::concept::{translate, ConceptConfig, CtmVars};
use conceptgrid::eval::{evaluate, RouterMode};
use conceptgrid::geometry::{BoxN, MaskGrid, MosaicLayout};
use conceptgrid::metrics::{sample_metrics, sample_with_overlap, soft_iou, MetricAccumulator};
use conceptgrid::numerics::{Graph, Optimizer, OptimizerKind, Tensor, Var};
use conceptgrid::policy::{
    decode_mask, greedy_choices, group_advantages, kl_penalty, oracle_choices, render, stage2_step, train_stage1,
    train_stage2, views, EpisodeView, Model, TrainConfig,
};
use conceptgrid::rewards::{meta_reward, RewardAblation};
use conceptgrid::router::{route, threshold, RoutePath};
use conceptgrid::synthbench::{gen_dataset, read_dataset, DatasetSpec, Episode, Family, Level, SceneSpec};
use conceptgrid::template::{format_reward, parse, serialize, ParseError, StructuredResponse};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::mutate;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const HELD_OUT: u64 = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> MaskGrid {
    let density: f64 = match rng.gen_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen(),
    };
    let v = (0..w * h).map(|_| if rng.gen::<f64>() < density { 1.0 } else { 0.0 }).collect();
    MaskGrid::new(w, h, v).unwrap()
}

fn random_box(rng: &mut ChaCha8Rng) -> BoxN {
    let (a, b): (f64, f64) = (rng.gen(), rng.gen());
    let (c, d): (f64, f64) = (rng.gen(), rng.gen());
    BoxN::new(a.min(b), c.min(d), a.max(b), c.max(d)).unwrap()
}

// Pixel counts straight off the value arrays.
fn counts(p: &MaskGrid, g: &MaskGrid) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&a, &b) in p.values().iter().zip(g.values()) {
        match (a == 1.0, b == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    (tp, fp, fn_, tn)
}

fn c1_metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = Instant::now();
    let mut worst = 0.0_f64;
    let mut count_mismatch = 0;
    for _ in 0..1000 {
        let p = random_mask(&mut rng, 8, 8);
        let g = random_mask(&mut rng, 8, 8);
        let s = sample_metrics(&p, &g, 0.5).unwrap();
        let (tp, fp, fn_, tn) = counts(&p, &g);
        let (i, u) = (tp, tp + fp + fn_);
        let iou = if u == 0 { 1.0 } else { i as f64 / u as f64 };
        let dice = if u == 0 { 1.0 } else { 2.0 * i as f64 / (2 * tp + fp + fn_) as f64 };
        let mae = (fp + fn_) as f64 / 64.0;
        let fnr = if tp + fn_ == 0 { 0.0 } else { fn_ as f64 / (tp + fn_) as f64 };
        let fpr = if fp + tn == 0 { 0.0 } else { fp as f64 / (fp + tn) as f64 };
        let ber = 0.5 * (fnr + fpr);
        for (a, b) in [(s.iou, iou), (s.dice, dice), (s.mae, mae), (s.ber, ber)] {
            worst = worst.max((a - b).abs());
        }
        let (_, si, su) = sample_with_overlap(&p, &g, 0.5).unwrap();
        if si != i as f64 || su != u as f64 {
            count_mismatch += 1;
        }
    }
    let el = t.elapsed();
    outcome(
        worst <= 1e-12 && count_mismatch == 0 && el < Duration::from_secs(5),
        format!("max deviation {worst:.1e}, count mismatches {count_mismatch}, {:.2}s", el.as_secs_f64()),
    )
}

fn c2_dice_iou() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let p = random_mask(&mut rng, 8, 8);
        let g = random_mask(&mut rng, 8, 8);
        let s = sample_metrics(&p, &g, 0.5).unwrap();
        worst = worst.max((s.dice - 2.0 * s.iou / (1.0 + s.iou)).abs());
    }
    outcome(worst <= 1e-12, format!("max |Dice - 2 IoU/(1+IoU)| {worst:.1e}"))
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

// sum(Z ⊙ R) for fixed R, as a function of the five CTM inputs.
fn ctm_loss(g: &mut Graph, inputs: &[Var; 5], r: &Tensor) -> Var {
    let p = CtmVars { queries: inputs[1], wq: inputs[2], wk: inputs[3], wv: inputs[4] };
    let t = translate(g, inputs[0], &p).unwrap();
    let rv = g.constant(r.clone());
    let m = g.mul(t.z, rv).unwrap();
    g.sum(m)
}

fn c3_ctm_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = 1e-5;
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let l1 = rng.gen_range(4..=64);
        let l2 = rng.gen_range(1..=8);
        let c = rng.gen_range(4..=16);
        let s = 1.0 / (c as f64).sqrt();
        let base = [
            random_tensor(&mut rng, &[l1, c], 1.0),
            random_tensor(&mut rng, &[l2, c], 1.0),
            random_tensor(&mut rng, &[c, c], s),
            random_tensor(&mut rng, &[c, c], s),
            random_tensor(&mut rng, &[c, c], s),
        ];
        let r = random_tensor(&mut rng, &[l2, c], 1.0);
        let eval = |ts: &[Tensor; 5]| {
            let mut g = Graph::new();
            let v = [0, 1, 2, 3, 4].map(|i| g.constant(ts[i].clone()));
            let l = ctm_loss(&mut g, &v, &r);
            g.value(l).item()
        };
        let mut g = Graph::new();
        let v = [0, 1, 2, 3, 4].map(|i| g.param(base[i].clone()));
        let l = ctm_loss(&mut g, &v, &r);
        let grads = g.backward(l).unwrap();
        for (k, var) in v.iter().enumerate() {
            let analytic = grads.wrt(*var);
            for i in 0..base[k].len() {
                let mut plus = base.clone();
                plus[k].data_mut()[i] += eps;
                let mut minus = base.clone();
                minus[k].data_mut()[i] -= eps;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let a = analytic.data()[i];
                worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
            }
        }
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 20 shapes"))
}

fn c4_ctm_cost() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = Vec::new();
    let mut n = 0;
    for l1 in [1, 4, 17, 64] {
        for l2 in [1, 2, 8] {
            for c in [4, 9, 16] {
                let mut g = Graph::new();
                let h = g.constant(random_tensor(&mut rng, &[l1, c], 1.0));
                let p = CtmVars {
                    queries: g.constant(random_tensor(&mut rng, &[l2, c], 1.0)),
                    wq: g.constant(random_tensor(&mut rng, &[c, c], 0.3)),
                    wk: g.constant(random_tensor(&mut rng, &[c, c], 0.3)),
                    wv: g.constant(random_tensor(&mut rng, &[c, c], 0.3)),
                };
                let t = translate(&mut g, h, &p).unwrap();
                n += 1;
                if t.attention_multiplies != (2 * l1 * l2 * c) as u64 {
                    bad.push((l1, l2, c, t.attention_multiplies));
                }
            }
        }
    }
    outcome(bad.is_empty(), format!("{n} shapes, mismatches {bad:?}"))
}

fn c5_router() -> Outcome {
    let words = |l: usize| vec!["w"; l].join(" ");
    let table: Vec<f64> = (1..=6).map(|l| threshold(&words(l))).collect();
    let want = [0.1, 0.2, 0.4, 0.8, 1.0, 1.0];
    let exact = table.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15);
    let long: Vec<f64> = (1..=20).map(|l| threshold(&words(l))).collect();
    let monotone = long.windows(2).all(|w| w[0] <= w[1]);
    let ties = (1..=20).all(|l| {
        let t = threshold(&words(l));
        route(t, &words(l)).path == RoutePath::Direct && route(t - 1e-9, &words(l)).path == RoutePath::Reason
    });
    outcome(exact && monotone && ties, format!("table {table:?}, monotone {monotone}, ties direct {ties}"))
}

fn box_iou_oracle(a: &BoxN, b: &BoxN) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let i = w * h;
    let u = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - i;
    if u <= 0.0 {
        0.0
    } else {
        i / u
    }
}

fn c6_meta_reward() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0_f64;
    let mut annihilated = true;
    for _ in 0..1000 {
        let [pb, gb, pc, gc] = [0; 4].map(|_| random_box(&mut rng));
        let r = meta_reward(&pb, &gb, &pc, &gc);
        worst = worst.max((r - box_iou_oracle(&pb, &gb) * box_iou_oracle(&pc, &gc)).abs());
        // a check box disjoint from the proxy box zeroes the reward
        let far = BoxN::new(0.0, 0.0, 0.01, 0.01).unwrap();
        let gc_far = BoxN::new(0.5, 0.5, 0.9, 0.9).unwrap();
        annihilated &= meta_reward(&pb, &gb, &far, &gc_far) == 0.0;
    }
    outcome(worst <= 1e-12 && annihilated, format!("max deviation {worst:.1e}, zero-check exact {annihilated}"))
}

fn c7_grpo() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut shift = 0.0_f64;
    let mut uniform_zero = true;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=16);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
        let c = rng.gen_range(-10.0..10.0);
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        for (a, b) in group_advantages(&r).iter().zip(group_advantages(&shifted)) {
            shift = shift.max((a - b).abs());
        }
        let u = vec![rng.gen_range(0.0..3.0); n];
        uniform_zero &= group_advantages(&u).iter().all(|&a| a == 0.0);
    }
    let kl_zero = (0..1000).all(|_| {
        let lp = rng.gen_range(-50.0..0.0);
        kl_penalty(lp, lp) == 0.0
    });
    // and end to end: the first step against an identical reference
    let eps = gen_dataset(&DatasetSpec { episodes: 4, ..DatasetSpec::default() }).unwrap();
    let vs = views(&eps).unwrap();
    let mut m = Model::init(Default::default(), Default::default(), 7).unwrap();
    let reference = m.params.clone();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.05);
    let rec = stage2_step(&mut m, &reference, &[&vs[0], &vs[1]], &mut opt, &TrainConfig::default(), 0, 7).unwrap();
    let pass = shift <= 1e-12 && uniform_zero && kl_zero && rec.kl == 0.0;
    outcome(pass, format!("shift deviation {shift:.1e}, uniform groups zero {uniform_zero}, KL(pi,pi) {} / step {}", kl_zero, rec.kl))
}

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789 .,;:()-";
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char).collect()
}

fn random_response(rng: &mut ChaCha8Rng) -> StructuredResponse {
    let word = |rng: &mut ChaCha8Rng| -> String {
        (0..rng.gen_range(1..=8)).map(|_| (b'a' + rng.gen_range(0..26)) as char).collect()
    };
    let n = rng.gen_range(1..=3);
    let answer = (0..n).map(|_| word(rng)).collect::<Vec<_>>().join(" ");
    StructuredResponse {
        think: random_text(rng, 40),
        rule: random_text(rng, 40),
        check: random_box(rng),
        bbox: random_box(rng),
        answer,
    }
}

fn c8_template() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let close = |a: &BoxN, b: &BoxN| a.to_array().iter().zip(b.to_array()).all(|(x, y)| (x - y).abs() <= 1e-4);
    let mut round_trip = 0;
    let mut reached = std::collections::HashSet::new();
    let mut leaked = 0;
    for _ in 0..1000 {
        let r = random_response(&mut rng);
        let text = serialize(&r);
        if let Ok(b) = parse(&text) {
            if b.think == r.think && b.rule == r.rule && b.answer == r.answer && close(&b.check, &r.check) && close(&b.bbox, &r.bbox) {
                round_trip += 1;
            }
        }
        for code in ParseError::ALL {
            let m = mutate(&text, code);
            if let Err(e) = parse(&m) {
                reached.insert(e);
            }
            if format_reward(&m) != 0.0 {
                leaked += 1;
            }
        }
    }
    outcome(
        round_trip == 1000 && reached.len() == 6 && leaked == 0,
        format!("round trips {round_trip}/1000, error codes reached {}/6, mutated strings scoring format {leaked}", reached.len()),
    )
}

fn c9_mosaic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0_f64;
    let mut partition = true;
    for k in [1usize, 2, 3] {
        let layout = MosaicLayout::new(k, vec![]).unwrap();
        for _ in 0..1000 {
            let tile = rng.gen_range(0..k * k);
            let local = random_box(&mut rng);
            let back = layout.to_local(tile, &layout.to_global(tile, &local).unwrap()).unwrap();
            for (a, b) in back.to_array().iter().zip(local.to_array()) {
                worst = worst.max((a - b).abs());
            }
        }
        // tiles are disjoint and their areas sum to the canvas; sample points
        // land in exactly one tile
        let rects = layout.tile_rects();
        let area: f64 = rects.iter().map(|r| r.area()).sum();
        partition &= (area - 1.0).abs() < 1e-12;
        for _ in 0..1000 {
            let (x, y): (f64, f64) = (rng.gen(), rng.gen());
            let hits = rects.iter().filter(|r| r.x1 <= x && x < r.x2 && r.y1 <= y && y < r.y2).count();
            partition &= hits == 1;
        }
        for (i, a) in rects.iter().enumerate() {
            for b in &rects[i + 1..] {
                partition &= a.intersection_area(b) == 0.0;
            }
        }
    }
    outcome(worst <= 1e-12 && partition, format!("max round-trip error {worst:.1e}, partition exact {partition}"))
}

fn fixture() -> Vec<Episode> {
    read_dataset(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/episodes")).unwrap().1
}

fn oracle_soft_iou(model: &Model, vs: &[EpisodeView]) -> f64 {
    let s: f64 = vs
        .iter()
        .map(|v| {
            let (r, _) = render(v, &oracle_choices(v));
            soft_iou(&decode_mask(model, v, &r).unwrap(), &v.gt_mask).unwrap()
        })
        .sum();
    s / vs.len() as f64
}

fn oracle_miou(model: &Model, vs: &[EpisodeView]) -> f64 {
    let mut acc = MetricAccumulator::default();
    for v in vs {
        let (r, _) = render(v, &oracle_choices(v));
        let m = decode_mask(model, v, &r).unwrap();
        let (s, i, u) = sample_with_overlap(&m, &v.gt_mask, 0.5).unwrap();
        acc.accumulate(&s, i, u);
    }
    acc.finalize().miou
}

fn accuracy(model: &Model, vs: &[EpisodeView]) -> f64 {
    let hit = vs.iter().filter(|v| greedy_choices(&model.params, v).unwrap().target == v.oracle_target).count();
    hit as f64 / vs.len() as f64
}

fn c10_stage1() -> Outcome {
    let train = fixture();
    let held = gen_dataset(&DatasetSpec { seed: DatasetSpec::default().seed + HELD_OUT, ..DatasetSpec::default() }).unwrap();
    let cfg = TrainConfig::default();
    let mut model = Model::init(Default::default(), Default::default(), cfg.seed).unwrap();
    let t = Instant::now();
    train_stage1(&mut model, &train, &cfg, |_| {}).unwrap();
    let el = t.elapsed();
    let tr = oracle_soft_iou(&model, &views(&train).unwrap());
    let ho = oracle_soft_iou(&model, &views(&held).unwrap());
    outcome(
        tr >= 0.9 && ho >= 0.8 && el < Duration::from_secs(120),
        format!("train soft IoU {tr:.3}, held-out {ho:.3}, {} steps in {:.1}s", cfg.stage1_steps, el.as_secs_f64()),
    )
}

fn four_object_scenes() -> SceneSpec {
    SceneSpec { min_objects: 4, max_objects: 4, ..SceneSpec::default() }
}

fn c11_stage2() -> Outcome {
    let mut before = Vec::new();
    let mut after = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in SEEDS {
        let spec = DatasetSpec { families: vec![Family::CdSaliency], seed, scene: four_object_scenes(), ..DatasetSpec::default() };
        let train = gen_dataset(&spec).unwrap();
        let held = gen_dataset(&DatasetSpec { seed: seed + HELD_OUT, ..spec }).unwrap();
        let hv = views(&held).unwrap();
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let t = Instant::now();
        let mut model = Model::init(Default::default(), Default::default(), seed).unwrap();
        train_stage1(&mut model, &train, &cfg, |_| {}).unwrap();
        before.push(accuracy(&model, &hv));
        train_stage2(&mut model, &train, &cfg, |_| {}).unwrap();
        slowest = slowest.max(t.elapsed());
        after.push(accuracy(&model, &hv));
    }
    let m = median(after.clone());
    outcome(
        m >= 0.9 && slowest < Duration::from_secs(600),
        format!(
            "held-out accuracy median {:.3} -> {m:.3} (per seed {after:.3?}), slowest seed {:.0}s",
            median(before),
            slowest.as_secs_f64()
        ),
    )
}

fn c12_meta_ablation() -> Outcome {
    let hold = Family::CrLogical;
    let mut full = Vec::new();
    let mut no_meta = Vec::new();
    for seed in SEEDS {
        let families = Family::ALL.into_iter().filter(|&f| f != hold).collect();
        let spec = DatasetSpec { families, seed, scene: four_object_scenes(), ..DatasetSpec::default() };
        let train = gen_dataset(&spec).unwrap();
        let held = gen_dataset(&DatasetSpec { families: vec![hold], seed: seed + HELD_OUT, ..spec }).unwrap();
        let hv = views(&held).unwrap();
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let mut base = Model::init(Default::default(), Default::default(), seed).unwrap();
        train_stage1(&mut base, &train, &cfg, |_| {}).unwrap();
        for (ablation, out) in [(RewardAblation::All, &mut full), (RewardAblation::NoMeta, &mut no_meta)] {
            let mut m = base.clone();
            train_stage2(&mut m, &train, &TrainConfig { ablation, ..cfg.clone() }, |_| {}).unwrap();
            out.push(accuracy(&m, &hv));
        }
    }
    let (a, b) = (median(full.clone()), median(no_meta.clone()));
    outcome(a >= b, format!("held-out {} accuracy median full {a:.3} vs w/o meta {b:.3} (full {full:.3?}, w/o meta {no_meta:.3?})", hold.name()))
}

fn c13_router() -> Outcome {
    let mut gaps = Vec::new();
    let mut cr_routing = Vec::new();
    for seed in SEEDS {
        let spec = DatasetSpec { seed, episodes: 128, ..DatasetSpec::default() };
        let train = gen_dataset(&spec).unwrap();
        let held = gen_dataset(&DatasetSpec { seed: seed + HELD_OUT, ..DatasetSpec::default() }).unwrap();
        let hv = views(&held).unwrap();
        let cfg = TrainConfig { seed, stage1_steps: 1000, ..TrainConfig::default() };
        let mut model = Model::init(Default::default(), Default::default(), seed).unwrap();
        train_stage1(&mut model, &train, &cfg, |_| {}).unwrap();
        train_stage2(&mut model, &train, &cfg, |_| {}).unwrap();
        let miou = |mode| evaluate(&model, &hv, mode, cfg.theta).unwrap();
        let (d, r, a) = (miou(RouterMode::Direct), miou(RouterMode::Reason), miou(RouterMode::Adaptive));
        gaps.push(a.overall.metrics.miou - d.overall.metrics.miou.max(r.overall.metrics.miou));
        let cr = hv.iter().filter(|v| v.family.level() == Level::CR).count();
        let routed: f64 = a
            .families
            .iter()
            .filter(|f| f.family.starts_with("CR_"))
            .map(|f| f.routing_rate * f.metrics.n as f64)
            .sum();
        cr_routing.push(routed / cr as f64);
    }
    let g = median(gaps.clone());
    let worst = cr_routing.iter().cloned().fold(0.0, f64::max);
    outcome(
        g >= -0.02 && worst <= 0.05,
        format!("median adaptive - max(direct, reason) {g:+.3} (per seed {gaps:+.3?}), CR routing rate at most {worst:.3}"),
    )
}

fn c14_query_sweep() -> Outcome {
    let mut low = Vec::new();
    let mut high = Vec::new();
    let mut table = Vec::new();
    for seed in SEEDS {
        let train = gen_dataset(&DatasetSpec { seed, ..DatasetSpec::default() }).unwrap();
        let held = gen_dataset(&DatasetSpec { seed: seed + HELD_OUT, ..DatasetSpec::default() }).unwrap();
        let hv = views(&held).unwrap();
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let m = [1, 8, 16].map(|queries| {
            let cc = ConceptConfig { queries, ..Default::default() };
            let mut model = Model::init(cc, Default::default(), seed).unwrap();
            train_stage1(&mut model, &train, &cfg, |_| {}).unwrap();
            oracle_miou(&model, &hv)
        });
        low.push(m[1] - m[0]);
        high.push((m[1] - m[2]).abs());
        table.push(m);
    }
    let (a, b) = (median(low), median(high));
    outcome(
        a >= 0.02 && b < 0.02,
        format!("median mIoU(L2=8) - mIoU(L2=1) {a:+.3}, median |L2=8 - L2=16| {b:.3}; per seed [1, 8, 16] {table:.3?}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("metric oracle equivalence", c1_metric_oracle),
        ("Dice-IoU identity", c2_dice_iou),
        ("CTM gradient fidelity", c3_ctm_gradients),
        ("CTM attention cost", c4_ctm_cost),
        ("router threshold table", c5_router),
        ("meta reward product form", c6_meta_reward),
        ("GRPO invariances", c7_grpo),
        ("template round trip and fuzz", c8_template),
        ("mosaic exactness", c9_mosaic),
        ("Stage I convergence", c10_stage1),
        ("Stage II saliency learning", c11_stage2),
        ("meta reward ablation direction", c12_meta_ablation),
        ("router ablation direction", c13_router),
        ("concept query sweep direction", c14_query_sweep),
    ];
    let only: Option<Vec<usize>> = std::env::args().nth(1).filter(|a| !a.starts_with('-')).map(|a| {
        a.split(',').map(|s| s.parse().expect("criterion numbers")).collect()
    });
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {n:2} {name}: {} ({:.1}s)", o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
