use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::geometry::{BoxN, MaskGrid};
use crate::numerics::Tensor;

/// Per-pixel feature channels: `r, g, b, x, y` with pixel-center coordinates.
pub const FEATURE_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorName {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
}

impl ColorName {
    pub const ALL: [ColorName; 6] =
        [ColorName::Red, ColorName::Green, ColorName::Blue, ColorName::Yellow, ColorName::Magenta, ColorName::Cyan];

    pub fn rgb(self) -> [f64; 3] {
        match self {
            ColorName::Red => [0.90, 0.15, 0.15],
            ColorName::Green => [0.15, 0.75, 0.20],
            ColorName::Blue => [0.15, 0.30, 0.90],
            ColorName::Yellow => [0.95, 0.85, 0.15],
            ColorName::Magenta => [0.85, 0.20, 0.80],
            ColorName::Cyan => [0.15, 0.80, 0.85],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn word(self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Green => "green",
            ColorName::Blue => "blue",
            ColorName::Yellow => "yellow",
            ColorName::Magenta => "magenta",
            ColorName::Cyan => "cyan",
        }
    }
}

impl fmt::Display for ColorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl FromStr for ColorName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ColorName::ALL.into_iter().find(|c| c.word() == s).ok_or_else(|| format!("unknown color {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rect,
    Disc,
}

impl Shape {
    pub const ALL: [Shape; 2] = [Shape::Rect, Shape::Disc];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Rect => "block",
            Shape::Disc => "disc",
        }
    }
}

/// `(shape, color)` pair; the unit the relational rules compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectClass {
    pub shape: Shape,
    pub color: ColorName,
}

impl ObjectClass {
    pub fn all() -> Vec<ObjectClass> {
        Shape::ALL
            .iter()
            .flat_map(|&shape| ColorName::ALL.iter().map(move |&color| ObjectClass { shape, color }))
            .collect()
    }

    pub fn phrase(self) -> String {
        format!("{} {}", self.color.word(), self.shape.word())
    }
}

pub fn luminance(c: [f64; 3]) -> f64 {
    0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    /// Pixel rectangle `[x0, y0, x1, y1)`.
    pub rect: [usize; 4],
    pub bbox: BoxN,
    pub shape: Shape,
    pub color: ColorName,
    pub contrast: f64,
}

impl SceneObject {
    pub fn class(&self) -> ObjectClass {
        ObjectClass { shape: self.shape, color: self.color }
    }

    pub fn pixel_area(&self) -> usize {
        (self.rect[2] - self.rect[0]) * (self.rect[3] - self.rect[1])
    }

    fn covers(&self, i: usize, j: usize) -> bool {
        let [x0, y0, x1, y1] = self.rect;
        if i < x0 || i >= x1 || j < y0 || j >= y1 {
            return false;
        }
        match self.shape {
            Shape::Rect => true,
            Shape::Disc => {
                let cx = (x0 + x1) as f64 / 2.0;
                let cy = (y0 + y1) as f64 / 2.0;
                let rx = (x1 - x0) as f64 / 2.0;
                let ry = (y1 - y0) as f64 / 2.0;
                let dx = (i as f64 + 0.5 - cx) / rx;
                let dy = (j as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Binary mask of one object.
    pub fn object_mask(&self, id: usize) -> MaskGrid {
        let o = &self.objects[id];
        let mut m = MaskGrid::zeros(self.width, self.height);
        for j in o.rect[1]..o.rect[3] {
            for i in o.rect[0]..o.rect[2] {
                if o.covers(i, j) {
                    m.set(i, j, 1.0);
                }
            }
        }
        m
    }

    /// `(H·W)×5` feature tensor, row-major with `y` outer.
    pub fn features(&self) -> Tensor {
        let (w, h) = (self.width, self.height);
        let mut data = Vec::with_capacity(w * h * FEATURE_DIM);
        let mut owner = vec![usize::MAX; w * h];
        for o in &self.objects {
            for j in o.rect[1]..o.rect[3] {
                for i in o.rect[0]..o.rect[2] {
                    if o.covers(i, j) {
                        owner[j * w + i] = o.id;
                    }
                }
            }
        }
        for j in 0..h {
            for i in 0..w {
                let c = match owner[j * w + i] {
                    usize::MAX => self.background,
                    id => self.objects[id].color.rgb(),
                };
                data.extend_from_slice(&c);
                data.push((i as f64 + 0.5) / w as f64);
                data.push((j as f64 + 0.5) / h as f64);
            }
        }
        Tensor::matrix(w * h, FEATURE_DIM, data).expect("feature shape")
    }

    pub fn classes(&self) -> Vec<ObjectClass> {
        self.objects.iter().map(SceneObject::class).collect()
    }

    pub fn count_class(&self, c: ObjectClass) -> usize {
        self.objects.iter().filter(|o| o.class() == c).count()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        for (k, o) in self.objects.iter().enumerate() {
            if o.id != k {
                return Err(format!("object {k} has id {}", o.id));
            }
            let [x0, y0, x1, y1] = o.rect;
            if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
                return Err(format!("object {k} rect {:?} outside canvas", o.rect));
            }
            for p in &self.objects[k + 1..] {
                if x0 < p.rect[2] && p.rect[0] < x1 && y0 < p.rect[3] && p.rect[1] < y1 {
                    return Err(format!("objects {k} and {} overlap", p.id));
                }
            }
        }
        Ok(())
    }
}

/// Bounds for random scene generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_side: usize,
    pub max_side: usize,
    /// Minimum gap in pixels between object rectangles.
    pub separation: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { width: 64, height: 64, min_objects: 3, max_objects: 6, min_side: 8, max_side: 20, separation: 2 }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(2..=8).contains(&self.min_objects) || !(self.min_objects..=8).contains(&self.max_objects) {
            return Err(SynthError::Spec(format!(
                "object count range [{}, {}] must lie within [2, 8]",
                self.min_objects, self.max_objects
            )));
        }
        if self.min_side == 0 || self.min_side > self.max_side || self.max_side > self.width.min(self.height) {
            return Err(SynthError::Spec(format!("side range [{}, {}] invalid", self.min_side, self.max_side)));
        }
        Ok(())
    }
}

pub(crate) const PLACEMENT_ATTEMPTS: usize = 1000;

pub(crate) fn random_background<R: Rng>(rng: &mut R) -> [f64; 3] {
    let g = rng.gen_range(0.1..0.9);
    [g, g, g]
}

pub(crate) fn random_rect<R: Rng>(spec: &SceneSpec, rng: &mut R) -> (usize, usize) {
    (rng.gen_range(spec.min_side..=spec.max_side), rng.gen_range(spec.min_side..=spec.max_side))
}

fn clear_of(spec: &SceneSpec, placed: &[[usize; 4]], r: [usize; 4]) -> bool {
    let s = spec.separation;
    placed.iter().all(|p| r[0] >= p[2] + s || p[0] >= r[2] + s || r[1] >= p[3] + s || p[1] >= r[3] + s)
}

/// Places rectangles of the given pixel sizes at random non-overlapping
/// positions. Fixed positions in `pinned` are kept as-is.
pub(crate) fn place_sizes<R: Rng>(
    spec: &SceneSpec,
    sizes: &[(usize, usize)],
    pinned: &[Option<[usize; 4]>],
    rng: &mut R,
) -> Option<Vec<[usize; 4]>> {
    let mut placed: Vec<[usize; 4]> = pinned.iter().flatten().copied().collect();
    let mut out = Vec::with_capacity(sizes.len());
    for (k, &(w, h)) in sizes.iter().enumerate() {
        if let Some(Some(r)) = pinned.get(k) {
            out.push(*r);
            continue;
        }
        let mut ok = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let x = rng.gen_range(0..=spec.width - w);
            let y = rng.gen_range(0..=spec.height - h);
            let r = [x, y, x + w, y + h];
            if clear_of(spec, &placed, r) {
                ok = Some(r);
                break;
            }
        }
        let r = ok?;
        placed.push(r);
        out.push(r);
    }
    Some(out)
}

/// Builds a scene from classes and rectangles, shuffling the object order so
/// list position carries no information.
pub(crate) fn assemble<R: Rng>(
    spec: &SceneSpec,
    background: [f64; 3],
    items: Vec<(ObjectClass, [usize; 4])>,
    rng: &mut R,
) -> Scene {
    let mut items = items;
    items.shuffle(rng);
    let bg_lum = luminance(background);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let objects = items
        .into_iter()
        .enumerate()
        .map(|(id, (class, rect))| SceneObject {
            id,
            rect,
            bbox: BoxN::new(rect[0] as f64 / w, rect[1] as f64 / h, rect[2] as f64 / w, rect[3] as f64 / h)
                .expect("rect inside canvas"),
            shape: class.shape,
            color: class.color,
            contrast: (luminance(class.color.rgb()) - bg_lum).abs(),
        })
        .collect();
    Scene { width: spec.width, height: spec.height, background, objects }
}

pub(crate) fn random_class<R: Rng>(rng: &mut R) -> ObjectClass {
    ObjectClass { shape: Shape::ALL[rng.gen_range(0..2)], color: ColorName::ALL[rng.gen_range(0..6)] }
}

/// Places the given classes at random sizes and positions.
pub(crate) fn scene_with_classes<R: Rng>(
    spec: &SceneSpec,
    classes: &[ObjectClass],
    rng: &mut R,
) -> Option<Scene> {
    let background = random_background(rng);
    let sizes: Vec<_> = classes.iter().map(|_| random_rect(spec, rng)).collect();
    let rects = place_sizes(spec, &sizes, &[], rng)?;
    Some(assemble(spec, background, classes.iter().copied().zip(rects).collect(), rng))
}

pub(crate) fn gen_scene_rng<R: Rng>(spec: &SceneSpec, rng: &mut R) -> Result<Scene, SynthError> {
    spec.validate()?;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let n = rng.gen_range(spec.min_objects..=spec.max_objects);
        let classes: Vec<_> = (0..n).map(|_| random_class(rng)).collect();
        if let Some(s) = scene_with_classes(spec, &classes, rng) {
            return Ok(s);
        }
    }
    Err(SynthError::Placement)
}

/// Random scene, deterministic in `seed`.
pub fn gen_scene(spec: &SceneSpec, seed: u64) -> Result<Scene, SynthError> {
    gen_scene_rng(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}
