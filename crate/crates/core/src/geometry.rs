//! Normalized boxes, masks, IoU, the K×K mosaic coordinate protocol and a
//! soft box rasterizer.
//!
//! Coordinates: `(x1, y1)` is the top-left corner, `(x2, y2)` the
//! bottom-right, both normalized to `[0, 1]`. Pixel `(i, j)` of a `w×h` grid
//! has its center at `((i + 0.5) / w, (j + 0.5) / h)`.

use serde::{Deserialize, Serialize};

use crate::numerics::soft_box_raw;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid box [{0}, {1}, {2}, {3}]: need 0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1")]
    InvalidBox(f64, f64, f64, f64),
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    Dimension(usize, usize, usize, usize),
    #[error("mask values must lie in [0, 1]")]
    MaskRange,
    #[error("mask needs {expected} values, got {got}")]
    MaskLength { expected: usize, got: usize },
    #[error("tile {tile} out of range for a {k}x{k} mosaic")]
    TileRange { tile: usize, k: usize },
    #[error("box is not contained in tile {tile}")]
    Containment { tile: usize },
    #[error("mosaic order must be >= 1")]
    MosaicOrder,
    #[error("support and proxy tiles must partition the mosaic: {0}")]
    Partition(String),
}

/// Axis-aligned box in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxN {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxN {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let ok = [x1, y1, x2, y2].iter().all(|v| v.is_finite())
            && 0.0 <= x1
            && x1 <= x2
            && x2 <= 1.0
            && 0.0 <= y1
            && y1 <= y2
            && y2 <= 1.0;
        if ok {
            Ok(Self { x1, y1, x2, y2 })
        } else {
            Err(GeometryError::InvalidBox(x1, y1, x2, y2))
        }
    }

    pub const UNIT: BoxN = BoxN { x1: 0.0, y1: 0.0, x2: 1.0, y2: 1.0 };

    pub fn from_array(a: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn intersection_area(&self, other: &BoxN) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn contains(&self, other: &BoxN, tol: f64) -> bool {
        other.x1 >= self.x1 - tol
            && other.y1 >= self.y1 - tol
            && other.x2 <= self.x2 + tol
            && other.y2 <= self.y2 + tol
    }
}

/// Intersection over union; 0 when the union has zero area.
pub fn box_iou(a: &BoxN, b: &BoxN) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Per-pixel values in `[0, 1]`, row-major with `y` outer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl MaskGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.len() != width * height {
            return Err(GeometryError::MaskLength { expected: width * height, got: values.len() });
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(GeometryError::MaskRange);
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height] }
    }

    /// Binary mask with the listed `(x, y)` pixels set.
    pub fn from_pixels(width: usize, height: usize, pixels: &[(usize, usize)]) -> Self {
        let mut m = Self::zeros(width, height);
        for &(x, y) in pixels {
            m.values[y * width + x] = 1.0;
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Pixels with value `>= theta` become 1, the rest 0.
    pub fn binary(&self, theta: f64) -> MaskGrid {
        MaskGrid {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| if v >= theta { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn count_set(&self, theta: f64) -> usize {
        self.values.iter().filter(|&&v| v >= theta).count()
    }

    pub fn same_dims(&self, other: &MaskGrid) -> Result<(), GeometryError> {
        if self.width != other.width || self.height != other.height {
            Err(GeometryError::Dimension(self.width, self.height, other.width, other.height))
        } else {
            Ok(())
        }
    }

    /// Nearest-neighbour upsampling by an integer factor on both axes.
    pub fn upsample(&self, factor: usize) -> MaskGrid {
        let (w, h) = (self.width * factor, self.height * factor);
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                values.push(self.get(x / factor, y / factor));
            }
        }
        MaskGrid { width: w, height: h, values }
    }
}

/// Intersection and union pixel counts of `binary(p, theta)` against the
/// binary ground truth `g` (thresholded at 0.5).
pub fn mask_overlap(p: &MaskGrid, g: &MaskGrid, theta: f64) -> Result<(usize, usize), GeometryError> {
    p.same_dims(g)?;
    let mut inter = 0;
    let mut union = 0;
    for (&pv, &gv) in p.values.iter().zip(&g.values) {
        let a = pv >= theta;
        let b = gv >= 0.5;
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok((inter, union))
}

/// Mask IoU at threshold `theta`; two empty masks score 1.
pub fn mask_iou(p: &MaskGrid, g: &MaskGrid, theta: f64) -> Result<f64, GeometryError> {
    let (inter, union) = mask_overlap(p, g, theta)?;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Soft box raster: product of four logistic edges evaluated at pixel
/// centers, differentiable in the box corners.
pub fn rasterize_soft_box(b: &BoxN, width: usize, height: usize, temp: f64) -> MaskGrid {
    assert!(temp > 0.0, "temperature must be positive");
    let (values, _) = soft_box_raw(b.to_array(), width, height, temp);
    MaskGrid { width, height, values }
}

/// Equal-size K×K subdivision of the canvas with a support/proxy split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosaicLayout {
    k: usize,
    tile_rects: Vec<BoxN>,
    support_indices: Vec<usize>,
    proxy_indices: Vec<usize>,
}

impl MosaicLayout {
    pub fn new(k: usize, proxy_indices: Vec<usize>) -> Result<Self, GeometryError> {
        if k == 0 {
            return Err(GeometryError::MosaicOrder);
        }
        let n = k * k;
        let mut seen = vec![false; n];
        for &p in &proxy_indices {
            if p >= n {
                return Err(GeometryError::TileRange { tile: p, k });
            }
            if seen[p] {
                return Err(GeometryError::Partition(format!("proxy tile {p} listed twice")));
            }
            seen[p] = true;
        }
        let support_indices = (0..n).filter(|i| !seen[*i]).collect();
        let kf = k as f64;
        let tile_rects = (0..n)
            .map(|t| {
                let (row, col) = ((t / k) as f64, (t % k) as f64);
                BoxN { x1: col / kf, y1: row / kf, x2: (col + 1.0) / kf, y2: (row + 1.0) / kf }
            })
            .collect();
        Ok(Self { k, tile_rects, support_indices, proxy_indices })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tile_count(&self) -> usize {
        self.k * self.k
    }

    pub fn tile_rects(&self) -> &[BoxN] {
        &self.tile_rects
    }

    pub fn support_indices(&self) -> &[usize] {
        &self.support_indices
    }

    pub fn proxy_indices(&self) -> &[usize] {
        &self.proxy_indices
    }

    fn origin(&self, tile: usize) -> Result<(f64, f64), GeometryError> {
        if tile >= self.tile_count() {
            return Err(GeometryError::TileRange { tile, k: self.k });
        }
        Ok(((tile % self.k) as f64, (tile / self.k) as f64))
    }

    /// Maps tile-local normalized coordinates to global mosaic coordinates.
    pub fn to_global(&self, tile: usize, local: &BoxN) -> Result<BoxN, GeometryError> {
        let (col, row) = self.origin(tile)?;
        let kf = self.k as f64;
        let gx = |v: f64| ((col + v) / kf).clamp(0.0, 1.0);
        let gy = |v: f64| ((row + v) / kf).clamp(0.0, 1.0);
        Ok(BoxN { x1: gx(local.x1), y1: gy(local.y1), x2: gx(local.x2), y2: gy(local.y2) })
    }

    /// Inverse of [`MosaicLayout::to_global`]; the box must lie inside the tile.
    pub fn to_local(&self, tile: usize, global: &BoxN) -> Result<BoxN, GeometryError> {
        let (col, row) = self.origin(tile)?;
        if !self.tile_rects[tile].contains(global, 1e-12) {
            return Err(GeometryError::Containment { tile });
        }
        let kf = self.k as f64;
        let lx = |v: f64| (v * kf - col).clamp(0.0, 1.0);
        let ly = |v: f64| (v * kf - row).clamp(0.0, 1.0);
        Ok(BoxN { x1: lx(global.x1), y1: ly(global.y1), x2: lx(global.x2), y2: ly(global.y2) })
    }
}
