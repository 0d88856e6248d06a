//! Mask evaluation suite: MAE, BER, IoU, Dice, weighted F-measure and
//! S-measure per sample, plus mergeable dataset accumulators (mIoU, mDice,
//! gIoU, cIoU).
//!
//! Conventions:
//! - Binary metrics threshold the prediction with `>= theta`; ground truth is
//!   binary.
//! - IoU and Dice of two empty masks are 1.
//! - A BER class with an empty denominator contributes 0.
//! - mIoU is foreground-only: per-sample IoU averaged over samples, so it
//!   coincides with gIoU.

use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, MaskGrid};

const EPS: f64 = f64::EPSILON;

/// Per-sample metrics, all fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub mae: f64,
    pub ber: f64,
    pub iou: f64,
    pub dice: f64,
    pub wfm: f64,
    pub sm: f64,
}

/// Confusion counts of a binarized prediction against binary ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn of(pred: &MaskGrid, gt: &MaskGrid, theta: f64) -> Result<Self, GeometryError> {
        pred.same_dims(gt)?;
        let mut c = Confusion::default();
        for (&p, &g) in pred.values().iter().zip(gt.values()) {
            match (p >= theta, g >= 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn intersection(&self) -> usize {
        self.tp
    }

    pub fn union(&self) -> usize {
        self.tp + self.fp + self.fn_
    }

    pub fn iou(&self) -> f64 {
        let u = self.union();
        if u == 0 {
            1.0
        } else {
            self.tp as f64 / u as f64
        }
    }

    pub fn dice(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }

    pub fn ber(&self) -> f64 {
        let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        0.5 * (rate(self.fn_, self.tp + self.fn_) + rate(self.fp, self.tn + self.fp))
    }
}

/// All per-sample metrics.
pub fn sample_metrics(pred: &MaskGrid, gt: &MaskGrid, theta: f64) -> Result<SampleMetrics, GeometryError> {
    let c = Confusion::of(pred, gt, theta)?;
    let n = pred.len() as f64;
    let mae = pred
        .values()
        .iter()
        .zip(gt.values())
        .fold(0.0, |s, (p, g)| s + (p - g).abs())
        / n;
    Ok(SampleMetrics {
        mae,
        ber: c.ber(),
        iou: c.iou(),
        dice: c.dice(),
        wfm: weighted_f_measure(pred, gt)?,
        sm: s_measure(pred, gt)?,
    })
}

/// Fuzzy Jaccard index `Σ min(p, g) / Σ max(p, g)` on soft values; 1 when
/// both masks are empty.
pub fn soft_iou(pred: &MaskGrid, gt: &MaskGrid) -> Result<f64, GeometryError> {
    pred.same_dims(gt)?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        inter += p.min(g);
        union += p.max(g);
    }
    Ok(if union <= 0.0 { 1.0 } else { inter / union })
}

/// Sample metrics together with the intersection/union counts for cIoU.
pub fn sample_with_overlap(
    pred: &MaskGrid,
    gt: &MaskGrid,
    theta: f64,
) -> Result<(SampleMetrics, f64, f64), GeometryError> {
    let c = Confusion::of(pred, gt, theta)?;
    let s = sample_metrics(pred, gt, theta)?;
    Ok((s, c.intersection() as f64, c.union() as f64))
}

/// 7×7 Gaussian window with σ = 5, normalized to unit sum.
fn gaussian_window() -> [[f64; 7]; 7] {
    let sigma: f64 = 5.0;
    let mut k = [[0.0; 7]; 7];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= total);
    k
}

/// Euclidean distance from every pixel to the nearest foreground pixel, and
/// that pixel's index. Ties resolve to the lowest linear index.
fn nearest_foreground(gt: &[bool], w: usize, h: usize) -> Vec<(f64, usize)> {
    // Only foreground pixels with a 4-neighbour outside the foreground can be
    // nearest to a background pixel: an interior pixel always has a strictly
    // closer neighbour.
    let is_bg = |x: i64, y: i64| x < 0 || y < 0 || x >= w as i64 || y >= h as i64 || !gt[y as usize * w + x as usize];
    let fg: Vec<(usize, usize)> = (0..w * h)
        .filter(|&i| gt[i])
        .map(|i| (i % w, i / w))
        .filter(|&(x, y)| {
            let (x, y) = (x as i64, y as i64);
            is_bg(x - 1, y) || is_bg(x + 1, y) || is_bg(x, y - 1) || is_bg(x, y + 1)
        })
        .collect();
    (0..w * h)
        .map(|i| {
            if gt[i] {
                return (0.0, i);
            }
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            let mut best = (i64::MAX, 0usize);
            for &(fx, fy) in &fg {
                let (dx, dy) = (fx as i64 - x, fy as i64 - y);
                let d2 = dx * dx + dy * dy;
                let idx = fy * w + fx;
                if d2 < best.0 || (d2 == best.0 && idx < best.1) {
                    best = (d2, idx);
                }
            }
            ((best.0 as f64).sqrt(), best.1)
        })
        .collect()
}

/// Weighted F-measure (β² = 1) with Gaussian dependency weighting and
/// distance-based importance decay. An all-background ground truth scores
/// `1 − mean(pred)`.
pub fn weighted_f_measure(pred: &MaskGrid, gt: &MaskGrid) -> Result<f64, GeometryError> {
    pred.same_dims(gt)?;
    let (w, h) = (gt.width(), gt.height());
    let g: Vec<bool> = gt.values().iter().map(|&v| v >= 0.5).collect();
    let n = w * h;
    let fg_count = g.iter().filter(|&&b| b).count();
    if fg_count == 0 {
        let mean = pred.values().iter().sum::<f64>() / n as f64;
        return Ok((1.0 - mean).clamp(0.0, 1.0));
    }

    let err: Vec<f64> = pred
        .values()
        .iter()
        .zip(&g)
        .map(|(&p, &gb)| (p - if gb { 1.0 } else { 0.0 }).abs())
        .collect();
    let nearest = nearest_foreground(&g, w, h);
    let et: Vec<f64> = (0..n).map(|i| if g[i] { err[i] } else { err[nearest[i].1] }).collect();

    // zero-padded 'same' correlation; the window is symmetric
    let k = gaussian_window();
    let mut ea = vec![0.0; n];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for (ki, krow) in k.iter().enumerate() {
                let yy = y + ki as i64 - 3;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                for (kj, kv) in krow.iter().enumerate() {
                    let xx = x + kj as i64 - 3;
                    if xx < 0 || xx >= w as i64 {
                        continue;
                    }
                    acc += kv * et[yy as usize * w + xx as usize];
                }
            }
            ea[y as usize * w + x as usize] = acc;
        }
    }

    let decay = 0.5f64.ln() / 5.0;
    let mut sum_ew_fg = 0.0;
    let mut sum_ew_bg = 0.0;
    for i in 0..n {
        let min_e = if g[i] && ea[i] < err[i] { ea[i] } else { err[i] };
        let b = if g[i] { 1.0 } else { 2.0 - (decay * nearest[i].0).exp() };
        let ew = min_e * b;
        if g[i] {
            sum_ew_fg += ew;
        } else {
            sum_ew_bg += ew;
        }
    }
    let tpw = fg_count as f64 - sum_ew_fg;
    let fpw = sum_ew_bg;
    let recall = 1.0 - sum_ew_fg / fg_count as f64;
    let precision = tpw / (EPS + tpw + fpw);
    let q = 2.0 * recall * precision / (EPS + recall + precision);
    Ok(q.clamp(0.0, 1.0))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn object_score(values: &[f64]) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn region_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let x = pred.iter().sum::<f64>() / nf;
    let y = gt.iter().sum::<f64>() / nf;
    let denom = if n > 1 { nf - 1.0 } else { 1.0 };
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        sx += (p - x) * (p - x);
        sy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let (sx, sy, sxy) = (sx / denom, sy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// S-measure with α = 0.5 between object-aware and region-aware terms. An
/// all-background ground truth scores `1 − mean(pred)`; all-foreground scores
/// `mean(pred)`.
pub fn s_measure(pred: &MaskGrid, gt: &MaskGrid) -> Result<f64, GeometryError> {
    pred.same_dims(gt)?;
    let (w, h) = (gt.width(), gt.height());
    let p = pred.values();
    let g: Vec<bool> = gt.values().iter().map(|&v| v >= 0.5).collect();
    let n = (w * h) as f64;
    let y = g.iter().filter(|&&b| b).count() as f64 / n;
    let mean_p = p.iter().sum::<f64>() / n;
    if y == 0.0 {
        return Ok((1.0 - mean_p).clamp(0.0, 1.0));
    }
    if y == 1.0 {
        return Ok(mean_p.clamp(0.0, 1.0));
    }

    // object-aware
    let fg: Vec<f64> = (0..p.len()).filter(|&i| g[i]).map(|i| p[i]).collect();
    let bg: Vec<f64> = (0..p.len()).filter(|&i| !g[i]).map(|i| 1.0 - p[i]).collect();
    let s_object = y * object_score(&fg) + (1.0 - y) * object_score(&bg);

    // region-aware: split at the rounded foreground centroid
    let (mut cx, mut cy, mut cnt) = (0.0, 0.0, 0.0);
    for (i, &b) in g.iter().enumerate() {
        if b {
            cx += (i % w) as f64;
            cy += (i / w) as f64;
            cnt += 1.0;
        }
    }
    let x = (cx / cnt).round_ties_even() as usize + 1;
    let yc = (cy / cnt).round_ties_even() as usize + 1;
    let (x, yc) = (x.min(w), yc.min(h));
    let area = n;
    let weights = [
        (x * yc) as f64 / area,
        (yc * (w - x)) as f64 / area,
        ((h - yc) * x) as f64 / area,
    ];
    let w4 = 1.0 - weights[0] - weights[1] - weights[2];
    let quadrant = |x0: usize, x1: usize, y0: usize, y1: usize| -> f64 {
        let mut pv = Vec::new();
        let mut gv = Vec::new();
        for yy in y0..y1 {
            for xx in x0..x1 {
                pv.push(p[yy * w + xx]);
                gv.push(if g[yy * w + xx] { 1.0 } else { 0.0 });
            }
        }
        region_ssim(&pv, &gv)
    };
    let s_region = weights[0] * quadrant(0, x, 0, yc)
        + weights[1] * quadrant(x, w, 0, yc)
        + weights[2] * quadrant(0, x, yc, h)
        + w4 * quadrant(x, w, yc, h);

    let q = 0.5 * s_object + 0.5 * s_region;
    Ok(q.clamp(0.0, 1.0))
}

/// Running sums for dataset-level metrics. Merging is commutative and has
/// the empty accumulator as identity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricAccumulator {
    pub n: usize,
    pub sum_mae: f64,
    pub sum_ber: f64,
    pub sum_iou: f64,
    pub sum_dice: f64,
    pub sum_wfm: f64,
    pub sum_sm: f64,
    pub cum_intersection: f64,
    pub cum_union: f64,
}

/// Finalized dataset metrics, fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub n: usize,
    pub mae: f64,
    pub ber: f64,
    pub wfm: f64,
    pub sm: f64,
    pub miou: f64,
    pub mdice: f64,
    pub giou: f64,
    pub ciou: f64,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, s: &SampleMetrics, inter: f64, union: f64) {
        debug_assert!(inter <= union);
        self.n += 1;
        self.sum_mae += s.mae;
        self.sum_ber += s.ber;
        self.sum_iou += s.iou;
        self.sum_dice += s.dice;
        self.sum_wfm += s.wfm;
        self.sum_sm += s.sm;
        self.cum_intersection += inter;
        self.cum_union += union;
    }

    /// Scores one prediction and adds it.
    pub fn add_pair(&mut self, pred: &MaskGrid, gt: &MaskGrid, theta: f64) -> Result<SampleMetrics, GeometryError> {
        let (s, i, u) = sample_with_overlap(pred, gt, theta)?;
        self.accumulate(&s, i, u);
        Ok(s)
    }

    pub fn merge(&self, other: &MetricAccumulator) -> MetricAccumulator {
        MetricAccumulator {
            n: self.n + other.n,
            sum_mae: self.sum_mae + other.sum_mae,
            sum_ber: self.sum_ber + other.sum_ber,
            sum_iou: self.sum_iou + other.sum_iou,
            sum_dice: self.sum_dice + other.sum_dice,
            sum_wfm: self.sum_wfm + other.sum_wfm,
            sum_sm: self.sum_sm + other.sum_sm,
            cum_intersection: self.cum_intersection + other.cum_intersection,
            cum_union: self.cum_union + other.cum_union,
        }
    }

    pub fn finalize(&self) -> DatasetMetrics {
        if self.n == 0 {
            return DatasetMetrics { n: 0, mae: 0.0, ber: 0.0, wfm: 0.0, sm: 0.0, miou: 0.0, mdice: 0.0, giou: 0.0, ciou: 0.0 };
        }
        let n = self.n as f64;
        let miou = self.sum_iou / n;
        DatasetMetrics {
            n: self.n,
            mae: self.sum_mae / n,
            ber: self.sum_ber / n,
            wfm: self.sum_wfm / n,
            sm: self.sum_sm / n,
            miou,
            mdice: self.sum_dice / n,
            giou: miou,
            ciou: if self.cum_union > 0.0 { self.cum_intersection / self.cum_union } else { 1.0 },
        }
    }
}

/// Column names used in reports, in emission order.
pub const METRIC_COLUMNS: [&str; 8] = ["MAE", "BER", "F_beta^w", "S_m", "mIoU", "mDice", "gIoU", "cIoU"];

impl DatasetMetrics {
    /// Values in report column order, as percentages.
    pub fn percent_values(&self) -> [f64; 8] {
        [self.mae, self.ber, self.wfm, self.sm, self.miou, self.mdice, self.giou, self.ciou]
            .map(|v| (v * 10000.0).round() / 100.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(w: usize, h: usize, bits: &[u8]) -> MaskGrid {
        MaskGrid::new(w, h, bits.iter().map(|&b| b as f64).collect()).unwrap()
    }

    #[test]
    fn identity_prediction() {
        let gt = mask(4, 4, &[0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0]);
        let s = sample_metrics(&gt, &gt, 0.5).unwrap();
        assert_eq!((s.mae, s.ber, s.iou, s.dice), (0.0, 0.0, 1.0, 1.0));
        assert!((s.wfm - 1.0).abs() < 1e-9);
        assert!((s.sm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn inverted_half_split() {
        let gt = mask(4, 2, &[1, 1, 0, 0, 1, 1, 0, 0]);
        let pred = mask(4, 2, &[0, 0, 1, 1, 0, 0, 1, 1]);
        let s = sample_metrics(&pred, &gt, 0.5).unwrap();
        assert_eq!((s.iou, s.dice, s.ber, s.mae), (0.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn partial_overlap_counts() {
        let mut g = vec![0u8; 16];
        let mut p = vec![0u8; 16];
        for i in [0, 1, 4, 5] {
            g[i] = 1;
        }
        for i in [0, 1, 10, 11] {
            p[i] = 1;
        }
        let s = sample_metrics(&mask(4, 4, &p), &mask(4, 4, &g), 0.5).unwrap();
        assert!((s.iou - 2.0 / 6.0).abs() < 1e-15);
        assert!((s.dice - 4.0 / 8.0).abs() < 1e-15);
        assert!((s.mae - 4.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(sample_metrics(&MaskGrid::zeros(2, 2), &MaskGrid::zeros(2, 3), 0.5).is_err());
    }

    #[test]
    fn all_background_fallbacks() {
        let gt = MaskGrid::zeros(4, 4);
        let pred = MaskGrid::new(4, 4, vec![0.25; 16]).unwrap();
        assert!((s_measure(&pred, &gt).unwrap() - 0.75).abs() < 1e-12);
        assert!((weighted_f_measure(&pred, &gt).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn accumulator_examples() {
        let one = SampleMetrics { mae: 0.1, ber: 0.2, iou: 0.25, dice: 0.4, wfm: 0.5, sm: 0.6 };
        let mut acc = MetricAccumulator::new();
        acc.accumulate(&one, 1.0, 4.0);
        let f = acc.finalize();
        assert_eq!((f.mae, f.ber, f.miou, f.mdice, f.wfm, f.sm), (0.1, 0.2, 0.25, 0.4, 0.5, 0.6));

        let mut acc = MetricAccumulator::new();
        acc.accumulate(&SampleMetrics { iou: 0.2, ..one }, 0.0, 1.0);
        acc.accumulate(&SampleMetrics { iou: 0.8, ..one }, 0.0, 1.0);
        assert!((acc.finalize().miou - 0.5).abs() < 1e-15);

        let mut acc = MetricAccumulator::new();
        acc.accumulate(&SampleMetrics { iou: 0.25, ..one }, 1.0, 4.0);
        acc.accumulate(&SampleMetrics { iou: 0.75, ..one }, 3.0, 4.0);
        let f = acc.finalize();
        assert_eq!(f.ciou, 0.5);
        assert_eq!(f.giou, 0.5);
    }

    fn random_acc(rng: &mut ChaCha8Rng, n: usize) -> MetricAccumulator {
        let mut acc = MetricAccumulator::new();
        for _ in 0..n {
            let s = SampleMetrics { mae: rng.gen(), ber: rng.gen(), iou: rng.gen(), dice: rng.gen(), wfm: rng.gen(), sm: rng.gen() };
            let u: f64 = rng.gen_range(1.0..100.0);
            acc.accumulate(&s, u * rng.gen::<f64>(), u);
        }
        acc
    }

    #[test]
    fn merge_identity_and_commutativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_acc(&mut rng, 7);
        let b = random_acc(&mut rng, 5);
        assert_eq!(a.merge(&MetricAccumulator::new()), a);
        assert_eq!(a.merge(&b), b.merge(&a));
    }

    #[test]
    fn split_stream_merge_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let samples: Vec<(SampleMetrics, f64, f64)> = (0..100)
            .map(|_| {
                let s = SampleMetrics { mae: rng.gen(), ber: rng.gen(), iou: rng.gen(), dice: rng.gen(), wfm: rng.gen(), sm: rng.gen() };
                let u: f64 = rng.gen_range(1.0..50.0);
                (s, u * rng.gen::<f64>(), u)
            })
            .collect();
        let mut whole = MetricAccumulator::new();
        samples.iter().for_each(|(s, i, u)| whole.accumulate(s, *i, *u));
        let reference = whole.finalize();
        for cut in 0..=samples.len() {
            let (mut a, mut b) = (MetricAccumulator::new(), MetricAccumulator::new());
            samples[..cut].iter().for_each(|(s, i, u)| a.accumulate(s, *i, *u));
            samples[cut..].iter().for_each(|(s, i, u)| b.accumulate(s, *i, *u));
            let f = a.merge(&b).finalize();
            for (x, y) in [
                (f.mae, reference.mae),
                (f.ber, reference.ber),
                (f.miou, reference.miou),
                (f.mdice, reference.mdice),
                (f.wfm, reference.wfm),
                (f.sm, reference.sm),
                (f.ciou, reference.ciou),
            ] {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    fn rect_mask(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize, fill: f64) -> MaskGrid {
        let mut m = MaskGrid::zeros(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, fill);
            }
        }
        m
    }

    /// Desk-scale suite: 64×64 grids, 16–32 px objects, soft predictions
    /// with up to 1 px boundary jitter and ±0.1 amplitude noise.
    #[test]
    fn structural_metrics_are_resolution_robust() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let size = 64;
        for _ in 0..100 {
            let (x0, y0) = (rng.gen_range(2..size / 3), rng.gen_range(2..size / 3));
            let (x1, y1) = (x0 + rng.gen_range(16..32), y0 + rng.gen_range(16..32));
            let gt = rect_mask(size, size, x0, y0, x1, y1, 1.0);
            let (dx, dy) = (rng.gen_range(0..2), rng.gen_range(0..2));
            let fill = rng.gen_range(0.6..1.0);
            let mut pred = rect_mask(size, size, x0 + dx, y0 + dy, x1 + dx, y1 + dy, fill);
            for y in 0..size {
                for x in 0..size {
                    let v = pred.get(x, y) + rng.gen_range(-0.1..0.1);
                    pred.set(x, y, v);
                }
            }
            let (gt2, pred2) = (gt.upsample(2), pred.upsample(2));
            let dw = (weighted_f_measure(&pred, &gt).unwrap() - weighted_f_measure(&pred2, &gt2).unwrap()).abs();
            let ds = (s_measure(&pred, &gt).unwrap() - s_measure(&pred2, &gt2).unwrap()).abs();
            assert!(dw < 0.02, "wfm drift {dw}");
            assert!(ds < 0.02, "sm drift {ds}");
        }
    }

    #[test]
    fn flipping_a_correct_pixel_never_helps() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let g: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            let mut p: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            let gt = mask(8, 8, &g);
            let before = Confusion::of(&mask(8, 8, &p), &gt, 0.5).unwrap();
            let correct: Vec<usize> = (0..64).filter(|&i| p[i] == g[i]).collect();
            if correct.is_empty() {
                continue;
            }
            let i = correct[rng.gen_range(0..correct.len())];
            p[i] = 1 - p[i];
            let after = Confusion::of(&mask(8, 8, &p), &gt, 0.5).unwrap();
            assert!(after.iou() <= before.iou());
            assert!(after.dice() <= before.dice());
        }
    }

    #[test]
    fn soft_iou_on_binary_masks_is_iou() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..100 {
            let g: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            let p: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            let (pm, gm) = (mask(8, 8, &p), mask(8, 8, &g));
            let c = Confusion::of(&pm, &gm, 0.5).unwrap();
            assert!((soft_iou(&pm, &gm).unwrap() - c.iou()).abs() < 1e-12);
        }
        let half = MaskGrid::new(2, 1, vec![0.5, 0.5]).unwrap();
        let gt = MaskGrid::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert!((soft_iou(&half, &gt).unwrap() - 0.5 / 1.5).abs() < 1e-15);
    }
}
