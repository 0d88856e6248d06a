use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::scene::{ColorName, ObjectClass, Scene, Shape};
use super::SynthError;

/// Length of the per-object descriptor vector.
pub const DESCRIPTOR_DIM: usize = 16;

/// Relative margins a scene must clear for an extremum rule to be unambiguous.
pub const CONTRAST_MARGIN: f64 = 0.05;
pub const AREA_RATIO_MARGIN: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "CI_attribute")]
    CiAttribute,
    #[serde(rename = "CD_saliency")]
    CdSaliency,
    #[serde(rename = "CD_camouflage")]
    CdCamouflage,
    #[serde(rename = "CD_anomaly")]
    CdAnomaly,
    #[serde(rename = "CR_consistency")]
    CrConsistency,
    #[serde(rename = "CR_difference")]
    CrDifference,
    #[serde(rename = "CR_logical")]
    CrLogical,
    #[serde(rename = "CR_moved")]
    CrMoved,
}

/// The three concept levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    CI,
    CD,
    CR,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::CiAttribute,
        Family::CdSaliency,
        Family::CdCamouflage,
        Family::CdAnomaly,
        Family::CrConsistency,
        Family::CrDifference,
        Family::CrLogical,
        Family::CrMoved,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::CiAttribute => "CI_attribute",
            Family::CdSaliency => "CD_saliency",
            Family::CdCamouflage => "CD_camouflage",
            Family::CdAnomaly => "CD_anomaly",
            Family::CrConsistency => "CR_consistency",
            Family::CrDifference => "CR_difference",
            Family::CrLogical => "CR_logical",
            Family::CrMoved => "CR_moved",
        }
    }

    pub fn level(self) -> Level {
        match self {
            Family::CiAttribute => Level::CI,
            Family::CdSaliency | Family::CdCamouflage | Family::CdAnomaly => Level::CD,
            _ => Level::CR,
        }
    }

    /// Families whose oracle compares reference tiles need at least two.
    pub fn min_tiles(self) -> usize {
        match self {
            Family::CrConsistency | Family::CrMoved => 2,
            _ => 0,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            let names: Vec<_> = Family::ALL.iter().map(|f| f.name()).collect();
            format!("unknown family {s:?} (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extreme {
    Largest,
    Smallest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum TaskRule {
    #[serde(rename = "CI_attribute")]
    CiAttribute { color: ColorName },
    #[serde(rename = "CD_saliency")]
    CdSaliency,
    #[serde(rename = "CD_camouflage")]
    CdCamouflage,
    #[serde(rename = "CD_anomaly")]
    CdAnomaly,
    #[serde(rename = "CR_consistency")]
    CrConsistency,
    #[serde(rename = "CR_difference")]
    CrDifference,
    #[serde(rename = "CR_logical")]
    CrLogical { predicate: Extreme },
    #[serde(rename = "CR_moved")]
    CrMoved,
}

impl TaskRule {
    pub fn family(self) -> Family {
        match self {
            TaskRule::CiAttribute { .. } => Family::CiAttribute,
            TaskRule::CdSaliency => Family::CdSaliency,
            TaskRule::CdCamouflage => Family::CdCamouflage,
            TaskRule::CdAnomaly => Family::CdAnomaly,
            TaskRule::CrConsistency => Family::CrConsistency,
            TaskRule::CrDifference => Family::CrDifference,
            TaskRule::CrLogical { .. } => Family::CrLogical,
            TaskRule::CrMoved => Family::CrMoved,
        }
    }

    /// Every rule in the benchmark; support annotations must single out one.
    pub fn all() -> Vec<TaskRule> {
        let mut v: Vec<TaskRule> = ColorName::ALL.iter().map(|&color| TaskRule::CiAttribute { color }).collect();
        v.extend([
            TaskRule::CdSaliency,
            TaskRule::CdCamouflage,
            TaskRule::CdAnomaly,
            TaskRule::CrConsistency,
            TaskRule::CrDifference,
            TaskRule::CrLogical { predicate: Extreme::Largest },
            TaskRule::CrLogical { predicate: Extreme::Smallest },
            TaskRule::CrMoved,
        ]);
        v
    }
}

/// Reference tiles followed by the query scene. Tiles 0 and 1 are the
/// designated pair for the moved-object rule.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub tiles: &'a [Scene],
    pub query: &'a Scene,
}

impl<'a> Context<'a> {
    pub fn scene_count(&self) -> usize {
        self.tiles.len() + 1
    }

    pub fn scene(&self, s: usize) -> &'a Scene {
        if s < self.tiles.len() {
            &self.tiles[s]
        } else {
            self.query
        }
    }

    pub fn query_index(&self) -> usize {
        self.tiles.len()
    }

    fn scenes(&self) -> impl Iterator<Item = &'a Scene> + '_ {
        self.tiles.iter().chain(std::iter::once(self.query))
    }

    fn shared_classes(&self) -> BTreeSet<ObjectClass> {
        let mut it = self.scenes();
        let mut acc: BTreeSet<ObjectClass> = it.next().map(|s| s.classes().into_iter().collect()).unwrap_or_default();
        for s in it {
            let c: BTreeSet<_> = s.classes().into_iter().collect();
            acc = acc.intersection(&c).copied().collect();
        }
        acc
    }

    fn classes_elsewhere(&self, s: usize) -> BTreeSet<ObjectClass> {
        (0..self.scene_count())
            .filter(|&t| t != s)
            .flat_map(|t| self.scene(t).classes())
            .collect()
    }

    /// Classes whose center differs between tiles 0 and 1, if both tiles hold
    /// each of their classes exactly once.
    fn movers(&self) -> Option<Vec<ObjectClass>> {
        if self.tiles.len() < 2 {
            return None;
        }
        let (a, b) = (&self.tiles[0], &self.tiles[1]);
        let mut out = Vec::new();
        for o in &a.objects {
            if a.count_class(o.class()) != 1 || b.count_class(o.class()) != 1 {
                return None;
            }
            let p = b.objects.iter().find(|p| p.class() == o.class())?;
            if o.bbox.center() != p.bbox.center() {
                out.push(o.class());
            }
        }
        out.sort();
        Some(out)
    }
}

fn arg_extreme(scene: &Scene, key: impl Fn(usize) -> f64, max: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for o in &scene.objects {
        let v = key(o.id);
        let better = match best {
            None => true,
            Some((_, b)) => (max && v > b) || (!max && v < b),
        };
        if better {
            best = Some((o.id, v));
        }
    }
    best.map(|(id, _)| id)
}

/// Gap between the best and second-best key values, oriented so that a
/// larger gap means a clearer extremum.
fn extreme_gap(scene: &Scene, key: impl Fn(usize) -> f64, max: bool) -> f64 {
    let mut v: Vec<f64> = scene.objects.iter().map(|o| key(o.id)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite keys"));
    if v.len() < 2 {
        return f64::INFINITY;
    }
    if max {
        v[v.len() - 1] - v[v.len() - 2]
    } else {
        v[1] - v[0]
    }
}

fn anomaly(scene: &Scene) -> Option<usize> {
    let n = scene.objects.len();
    if n < 3 {
        return None;
    }
    let classes = scene.classes();
    let odd: Vec<usize> = (0..n).filter(|&i| scene.count_class(classes[i]) == 1).collect();
    if odd.len() == 1 && scene.count_class(classes[(odd[0] + 1) % n]) == n - 1 {
        Some(odd[0])
    } else {
        None
    }
}

fn first_of_class(scene: &Scene, c: ObjectClass) -> Option<usize> {
    scene.objects.iter().find(|o| o.class() == c).map(|o| o.id)
}

/// Target object id of `rule` in scene `s` of the context, ties broken by
/// lowest id. Errors when the rule is not defined on the context.
pub fn rule_oracle(rule: TaskRule, ctx: &Context<'_>, s: usize) -> Result<usize, SynthError> {
    let scene = ctx.scene(s);
    let inadmissible = || SynthError::Inadmissible { rule: rule.family().name(), scene: s };
    if ctx.tiles.len() < rule.family().min_tiles() {
        return Err(inadmissible());
    }
    let contrast = |i: usize| scene.objects[i].contrast;
    let area = |i: usize| scene.objects[i].pixel_area() as f64;
    let found = match rule {
        TaskRule::CiAttribute { color } => scene.objects.iter().find(|o| o.color == color).map(|o| o.id),
        TaskRule::CdSaliency => arg_extreme(scene, contrast, true),
        TaskRule::CdCamouflage => arg_extreme(scene, contrast, false),
        TaskRule::CdAnomaly => anomaly(scene),
        TaskRule::CrConsistency => {
            ctx.shared_classes().into_iter().next().and_then(|c| first_of_class(scene, c))
        }
        TaskRule::CrDifference => {
            let elsewhere = ctx.classes_elsewhere(s);
            scene.objects.iter().find(|o| !elsewhere.contains(&o.class())).map(|o| o.id)
        }
        TaskRule::CrLogical { predicate } => arg_extreme(scene, area, predicate == Extreme::Largest),
        TaskRule::CrMoved => ctx.movers().and_then(|m| m.first().copied()).and_then(|c| first_of_class(scene, c)),
    };
    found.ok_or_else(inadmissible)
}

/// True when the rule's target in scene `s` is unique without tie-breaking.
pub fn is_clear(rule: TaskRule, ctx: &Context<'_>, s: usize) -> bool {
    let Ok(target) = rule_oracle(rule, ctx, s) else {
        return false;
    };
    let scene = ctx.scene(s);
    let contrast = |i: usize| scene.objects[i].contrast;
    match rule {
        TaskRule::CiAttribute { color } => scene.objects.iter().filter(|o| o.color == color).count() == 1,
        TaskRule::CdSaliency => extreme_gap(scene, contrast, true) >= CONTRAST_MARGIN,
        TaskRule::CdCamouflage => extreme_gap(scene, contrast, false) >= CONTRAST_MARGIN,
        TaskRule::CdAnomaly => true,
        TaskRule::CrConsistency => {
            ctx.shared_classes().len() == 1 && scene.count_class(scene.objects[target].class()) == 1
        }
        TaskRule::CrDifference => {
            let elsewhere = ctx.classes_elsewhere(s);
            scene.objects.iter().filter(|o| !elsewhere.contains(&o.class())).count() == 1
                && scene.count_class(scene.objects[target].class()) == 1
        }
        TaskRule::CrLogical { predicate } => {
            let mut a: Vec<f64> = scene.objects.iter().map(|o| o.pixel_area() as f64).collect();
            a.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
            match predicate {
                Extreme::Largest => a[a.len() - 1] >= AREA_RATIO_MARGIN * a[a.len() - 2],
                Extreme::Smallest => a[1] >= AREA_RATIO_MARGIN * a[0],
            }
        }
        TaskRule::CrMoved => {
            ctx.movers().is_some_and(|m| m.len() == 1)
                && scene.count_class(scene.objects[target].class()) == 1
        }
    }
}

/// Colors named in an instruction, in order of appearance.
pub fn instruction_colors(instruction: &str) -> Vec<ColorName> {
    instruction.split_whitespace().filter_map(|w| w.parse().ok()).collect()
}

/// Indicator features for every object of scene `s`:
/// `[salient, camouflaged, largest, smallest, anomalous, in every scene,
///   absent elsewhere, moved, instruction color, color one-hot ×6, disc]`.
pub fn descriptors(ctx: &Context<'_>, s: usize, instruction: &str) -> Vec<[f64; DESCRIPTOR_DIM]> {
    let scene = ctx.scene(s);
    let hit = |rule: TaskRule, id: usize| -> f64 {
        match rule_oracle(rule, ctx, s) {
            Ok(t) if t == id => 1.0,
            _ => 0.0,
        }
    };
    let shared = ctx.shared_classes();
    let elsewhere = ctx.classes_elsewhere(s);
    let movers = if ctx.tiles.len() >= 2 { ctx.movers().unwrap_or_default() } else { Vec::new() };
    let colors = instruction_colors(instruction);
    scene
        .objects
        .iter()
        .map(|o| {
            let mut d = [0.0; DESCRIPTOR_DIM];
            d[0] = hit(TaskRule::CdSaliency, o.id);
            d[1] = hit(TaskRule::CdCamouflage, o.id);
            d[2] = hit(TaskRule::CrLogical { predicate: Extreme::Largest }, o.id);
            d[3] = hit(TaskRule::CrLogical { predicate: Extreme::Smallest }, o.id);
            d[4] = hit(TaskRule::CdAnomaly, o.id);
            d[5] = f64::from(u8::from(ctx.tiles.len() >= 2 && shared.contains(&o.class())));
            d[6] = f64::from(u8::from(!elsewhere.contains(&o.class())));
            d[7] = f64::from(u8::from(movers.contains(&o.class())));
            d[8] = f64::from(u8::from(colors.contains(&o.color)));
            d[9 + o.color.index()] = 1.0;
            d[15] = f64::from(u8::from(o.shape == Shape::Disc));
            d
        })
        .collect()
}
