use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rules::{descriptors, is_clear, rule_oracle, Context, Extreme, Family, TaskRule, DESCRIPTOR_DIM};
use super::scene::{
    assemble, place_sizes, random_background, random_class, random_rect, scene_with_classes, ColorName, ObjectClass,
    Scene, SceneSpec, PLACEMENT_ATTEMPTS,
};
use super::SynthError;
use crate::geometry::{BoxN, MaskGrid, MosaicLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportAnnotation {
    pub tile: usize,
    pub object: usize,
    /// Target box in global mosaic coordinates.
    pub global_box: BoxN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: usize,
    pub seed: u64,
    pub rule: TaskRule,
    pub layout: MosaicLayout,
    /// `K²` reference tiles in row-major mosaic order.
    pub tiles: Vec<Scene>,
    pub query: Scene,
    pub instruction: String,
    pub support: Vec<SupportAnnotation>,
    /// Oracle target id in every tile, proxy included.
    pub tile_targets: Vec<usize>,
    pub query_target: usize,
    /// Proxy target box in global mosaic coordinates; `None` for a 1×1 mosaic.
    pub gt_check: Option<BoxN>,
    pub gt_box: BoxN,
}

impl Episode {
    pub fn k(&self) -> usize {
        self.layout.k()
    }

    pub fn family(&self) -> Family {
        self.rule.family()
    }

    pub fn context(&self) -> Context<'_> {
        Context { tiles: &self.tiles, query: &self.query }
    }

    pub fn proxy_tile(&self) -> Option<usize> {
        self.layout.proxy_indices().first().copied()
    }

    pub fn gt_mask(&self) -> MaskGrid {
        self.query.object_mask(self.query_target)
    }

    /// Descriptors for every scene, tiles first then the query.
    pub fn descriptors(&self) -> Vec<Vec<[f64; DESCRIPTOR_DIM]>> {
        let ctx = self.context();
        (0..ctx.scene_count()).map(|s| descriptors(&ctx, s, &self.instruction)).collect()
    }

    /// Global box of object `id` in tile `tile`.
    pub fn tile_box(&self, tile: usize, id: usize) -> BoxN {
        self.layout.to_global(tile, &self.tiles[tile].objects[id].bbox).expect("tile in range")
    }

    /// Check whether every stored ground truth matches a fresh oracle run.
    pub fn verify(&self) -> Result<(), String> {
        let ctx = self.context();
        for (t, &target) in self.tile_targets.iter().enumerate() {
            let o = rule_oracle(self.rule, &ctx, t).map_err(|e| e.to_string())?;
            if o != target {
                return Err(format!("tile {t}: stored target {target}, oracle {o}"));
            }
        }
        let q = rule_oracle(self.rule, &ctx, ctx.query_index()).map_err(|e| e.to_string())?;
        if q != self.query_target || self.query.objects[q].bbox != self.gt_box {
            return Err("query target mismatch".into());
        }
        match (self.proxy_tile(), self.gt_check) {
            (Some(p), Some(c)) if self.tile_box(p, self.tile_targets[p]) == c => {}
            (None, None) => {}
            _ => return Err("proxy check box mismatch".into()),
        }
        for a in &self.support {
            if a.object != self.tile_targets[a.tile] || self.tile_box(a.tile, a.object) != a.global_box {
                return Err(format!("support annotation for tile {} is stale", a.tile));
            }
        }
        Ok(())
    }
}

/// Rules of the episode's concept level consistent with every support
/// annotation.
pub fn consistent_rules(ep: &Episode) -> Vec<TaskRule> {
    let ctx = ep.context();
    let level = ep.family().level();
    TaskRule::all()
        .into_iter()
        .filter(|r| r.family().level() == level)
        .filter(|&r| ep.support.iter().all(|a| rule_oracle(r, &ctx, a.tile).ok() == Some(a.object)))
        .collect()
}

const CD_SALIENCY: &[&str] = &[
    "salient object",
    "the salient object",
    "the most salient object",
    "the object that stands out",
    "the object that stands out most",
];
const CD_CAMOUFLAGE: &[&str] = &[
    "camouflaged object",
    "the camouflaged object",
    "the object hidden in background",
    "the object that blends in",
    "the object blending into the background",
];
const CD_ANOMALY: &[&str] =
    &["odd one", "the anomalous object", "the odd one out", "the object breaking the pattern"];
const CR_CONSISTENCY: &[&str] = &[
    "the object shared by every reference",
    "segment what all the references have in common",
    "find the object present in every reference image",
];
const CR_DIFFERENCE: &[&str] = &[
    "the object missing from the references",
    "segment the object no reference image contains",
    "find the new object absent from every reference",
];
const CR_LOGICAL: &[&str] = &[
    "apply the size rule from the references",
    "segment the object selected by the reference rule",
    "find the object that follows the size pattern",
];
const CR_MOVED: &[&str] = &[
    "the object that moved between the references",
    "segment the object whose position changed over time",
    "find the object that moved across frames",
];

/// Instruction text drawn from the family's phrase bank.
pub fn instruction_for<R: Rng>(rule: TaskRule, rng: &mut R) -> String {
    let pick = |bank: &[&str], rng: &mut R| bank[rng.gen_range(0..bank.len())].to_string();
    match rule {
        TaskRule::CiAttribute { color } => {
            let c = color.word();
            let bank = [c.to_string(), format!("{c} object"), format!("the {c} object"), format!("find the {c} object")];
            bank[rng.gen_range(0..bank.len())].clone()
        }
        TaskRule::CdSaliency => pick(CD_SALIENCY, rng),
        TaskRule::CdCamouflage => pick(CD_CAMOUFLAGE, rng),
        TaskRule::CdAnomaly => pick(CD_ANOMALY, rng),
        TaskRule::CrConsistency => pick(CR_CONSISTENCY, rng),
        TaskRule::CrDifference => pick(CR_DIFFERENCE, rng),
        TaskRule::CrLogical { .. } => pick(CR_LOGICAL, rng),
        TaskRule::CrMoved => pick(CR_MOVED, rng),
    }
}

fn object_count<R: Rng>(spec: &SceneSpec, min: usize, rng: &mut R) -> usize {
    rng.gen_range(spec.min_objects.max(min)..=spec.max_objects.max(min))
}

fn other_class<R: Rng>(not: impl Fn(ObjectClass) -> bool, rng: &mut R) -> ObjectClass {
    loop {
        let c = random_class(rng);
        if !not(c) {
            return c;
        }
    }
}

/// One candidate set of `n` scenes (tiles then query) shaped for the rule.
fn draw_scenes<R: Rng>(rule: TaskRule, n: usize, spec: &SceneSpec, rng: &mut R) -> Option<Vec<Scene>> {
    let mut scenes = Vec::with_capacity(n);
    match rule {
        TaskRule::CiAttribute { color } => {
            for _ in 0..n {
                let m = object_count(spec, 2, rng);
                let target = ObjectClass { shape: random_class(rng).shape, color };
                let mut classes = vec![target];
                classes.extend((1..m).map(|_| other_class(|c| c.color == color, rng)));
                scenes.push(scene_with_classes(spec, &classes, rng)?);
            }
        }
        TaskRule::CdAnomaly => {
            for _ in 0..n {
                let m = object_count(spec, 3, rng);
                let major = random_class(rng);
                let odd = other_class(|c| c == major, rng);
                let mut classes = vec![major; m - 1];
                classes.push(odd);
                scenes.push(scene_with_classes(spec, &classes, rng)?);
            }
        }
        TaskRule::CrConsistency => {
            let shared = random_class(rng);
            for _ in 0..n {
                let m = object_count(spec, 2, rng);
                let mut classes = vec![shared];
                classes.extend((1..m).map(|_| other_class(|c| c == shared, rng)));
                scenes.push(scene_with_classes(spec, &classes, rng)?);
            }
        }
        TaskRule::CrDifference => {
            let mut pool = ObjectClass::all();
            pool.shuffle(rng);
            if pool.len() < n + 2 {
                return None;
            }
            let common = [pool[n], pool[n + 1]];
            for (s, &unique) in pool.iter().take(n).enumerate() {
                let m = object_count(spec, 3, rng);
                let mut classes = vec![unique];
                // alternate the common classes so each appears in several scenes
                classes.extend((1..m).map(|i| common[(i + s) % 2]));
                scenes.push(scene_with_classes(spec, &classes, rng)?);
            }
        }
        TaskRule::CrMoved => {
            let mut pool = ObjectClass::all();
            pool.shuffle(rng);
            let m = object_count(spec, 3, rng);
            let classes = &pool[..m];
            let sizes: Vec<_> = classes.iter().map(|_| random_rect(spec, rng)).collect();
            let base = place_sizes(spec, &sizes, &[], rng)?;
            let background = random_background(rng);
            let mover = rng.gen_range(0..m);
            for s in 0..n {
                let rects = if s == 0 {
                    base.clone()
                } else {
                    let pinned: Vec<_> = (0..m).map(|i| if i == mover { None } else { Some(base[i]) }).collect();
                    let mut moved = None;
                    for _ in 0..PLACEMENT_ATTEMPTS {
                        let r = place_sizes(spec, &sizes, &pinned, rng)?;
                        let (a, b) = (r[mover], base[mover]);
                        if a[0].abs_diff(b[0]) + a[1].abs_diff(b[1]) >= 4 {
                            moved = Some(r);
                            break;
                        }
                    }
                    moved?
                };
                let items = classes.iter().copied().zip(rects).collect();
                scenes.push(assemble(spec, background, items, rng));
            }
        }
        TaskRule::CdSaliency | TaskRule::CdCamouflage | TaskRule::CrLogical { .. } => {
            // these rules only look at one scene, so each scene is redrawn
            // until its extremum clears the margin
            for _ in 0..n {
                let mut clear = None;
                for _ in 0..PLACEMENT_ATTEMPTS {
                    let m = object_count(spec, 2, rng);
                    let classes: Vec<_> = (0..m).map(|_| random_class(rng)).collect();
                    let s = scene_with_classes(spec, &classes, rng)?;
                    if is_clear(rule, &Context { tiles: &[], query: &s }, 0) {
                        clear = Some(s);
                        break;
                    }
                }
                scenes.push(clear?);
            }
        }
    }
    Some(scenes)
}

/// Builds a split-reference episode for `rule` on a `k×k` mosaic.
/// Same scenes with a freshly drawn proxy tile. Proxy choices that would
/// leave the support annotations ambiguous are skipped; if none remain the
/// episode comes back unchanged.
pub fn recompose(ep: &Episode, seed: u64) -> Episode {
    let k = ep.k();
    if k < 2 {
        return ep.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..k * k).collect();
    order.shuffle(&mut rng);
    for p in order {
        let layout = MosaicLayout::new(k, vec![p]).expect("proxy index in range");
        let mut out = ep.clone();
        out.support = layout
            .support_indices()
            .iter()
            .map(|&t| SupportAnnotation {
                tile: t,
                object: ep.tile_targets[t],
                global_box: layout.to_global(t, &ep.tiles[t].objects[ep.tile_targets[t]].bbox).expect("tile in range"),
            })
            .collect();
        out.gt_check = Some(layout.to_global(p, &ep.tiles[p].objects[ep.tile_targets[p]].bbox).expect("tile in range"));
        out.layout = layout;
        if consistent_rules(&out) == [ep.rule] {
            return out;
        }
    }
    ep.clone()
}

pub fn build_episode(rule: TaskRule, k: usize, seed: u64, spec: &SceneSpec) -> Result<Episode, SynthError> {
    if !(1..=3).contains(&k) {
        return Err(SynthError::MosaicOrder(k));
    }
    spec.validate()?;
    let tiles_n = k * k;
    if tiles_n < rule.family().min_tiles() {
        return Err(SynthError::Inadmissible { rule: rule.family().name(), scene: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proxy = if k >= 2 { vec![rng.gen_range(0..tiles_n)] } else { Vec::new() };
    let layout = MosaicLayout::new(k, proxy).map_err(|e| SynthError::Spec(e.to_string()))?;
    let instruction = instruction_for(rule, &mut rng);

    for _ in 0..PLACEMENT_ATTEMPTS {
        let Some(mut scenes) = draw_scenes(rule, tiles_n + 1, spec, &mut rng) else {
            continue;
        };
        let query = scenes.pop().expect("query scene");
        let tiles = scenes;
        let ctx = Context { tiles: &tiles, query: &query };
        if !(0..ctx.scene_count()).all(|s| is_clear(rule, &ctx, s)) {
            continue;
        }
        let tile_targets: Vec<usize> =
            (0..tiles_n).map(|t| rule_oracle(rule, &ctx, t)).collect::<Result<_, _>>()?;
        let query_target = rule_oracle(rule, &ctx, tiles_n)?;
        let support: Vec<SupportAnnotation> = layout
            .support_indices()
            .iter()
            .map(|&t| SupportAnnotation {
                tile: t,
                object: tile_targets[t],
                global_box: layout.to_global(t, &tiles[t].objects[tile_targets[t]].bbox).expect("tile in range"),
            })
            .collect();
        let gt_check = layout
            .proxy_indices()
            .first()
            .map(|&p| layout.to_global(p, &tiles[p].objects[tile_targets[p]].bbox).expect("tile in range"));
        let gt_box = query.objects[query_target].bbox;
        let ep = Episode {
            id: 0,
            seed,
            rule,
            layout: layout.clone(),
            tiles,
            query,
            instruction: instruction.clone(),
            support,
            tile_targets,
            query_target,
            gt_check,
            gt_box,
        };
        if consistent_rules(&ep) == [rule] {
            return Ok(ep);
        }
    }
    Err(SynthError::Placement)
}

/// Draws a rule of the given family with random parameters.
pub fn random_rule<R: Rng>(family: Family, rng: &mut R) -> TaskRule {
    match family {
        Family::CiAttribute => TaskRule::CiAttribute { color: ColorName::ALL[rng.gen_range(0..6)] },
        Family::CdSaliency => TaskRule::CdSaliency,
        Family::CdCamouflage => TaskRule::CdCamouflage,
        Family::CdAnomaly => TaskRule::CdAnomaly,
        Family::CrConsistency => TaskRule::CrConsistency,
        Family::CrDifference => TaskRule::CrDifference,
        Family::CrLogical => {
            TaskRule::CrLogical { predicate: if rng.gen_bool(0.5) { Extreme::Largest } else { Extreme::Smallest } }
        }
        Family::CrMoved => TaskRule::CrMoved,
    }
}
