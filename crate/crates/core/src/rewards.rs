//! Unified reward pool: format, mask and meta components.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{box_iou, mask_iou, BoxN, GeometryError, MaskGrid};
use crate::template::{self, StructuredResponse};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub r_mask: f64,
    pub r_meta: f64,
    pub r_uni: f64,
}

impl RewardBreakdown {
    pub fn new(r_format: f64, r_mask: f64, r_meta: f64) -> Self {
        Self { r_format, r_mask, r_meta, r_uni: r_format + r_mask + r_meta }
    }
}

/// Per-component multipliers. Ablations zero a component; the default is
/// the plain unweighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub format: f64,
    pub mask: f64,
    pub meta: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { format: 1.0, mask: 1.0, meta: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardAblation {
    #[default]
    All,
    NoMeta,
    NoMask,
    NoBoxMeta,
}

impl RewardAblation {
    pub const ALL: [RewardAblation; 4] =
        [RewardAblation::NoBoxMeta, RewardAblation::NoMask, RewardAblation::NoMeta, RewardAblation::All];

    /// The box IoUs only enter the reward through the meta product, so
    /// dropping "box & meta" and dropping "meta" zero the same component.
    pub fn weights(self) -> RewardWeights {
        let mut w = RewardWeights::default();
        match self {
            RewardAblation::All => {}
            RewardAblation::NoMeta | RewardAblation::NoBoxMeta => w.meta = 0.0,
            RewardAblation::NoMask => w.mask = 0.0,
        }
        w
    }

    pub fn label(self) -> &'static str {
        match self {
            RewardAblation::All => "All Reward",
            RewardAblation::NoMeta => "w/o meta",
            RewardAblation::NoMask => "w/o mask",
            RewardAblation::NoBoxMeta => "w/o box & meta",
        }
    }
}

impl fmt::Display for RewardAblation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardAblation::All => "all",
            RewardAblation::NoMeta => "no_meta",
            RewardAblation::NoMask => "no_mask",
            RewardAblation::NoBoxMeta => "no_box_meta",
        })
    }
}

impl FromStr for RewardAblation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(RewardAblation::All),
            "no_meta" => Ok(RewardAblation::NoMeta),
            "no_mask" => Ok(RewardAblation::NoMask),
            "no_box_meta" => Ok(RewardAblation::NoBoxMeta),
            other => Err(format!("unknown reward ablation {other:?} (expected all, no_meta, no_mask, no_box_meta)")),
        }
    }
}

/// Ground truth needed to score one trajectory. `gt_check` is `None` for a
/// 1×1 mosaic, where the check IoU is defined as 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTarget<'a> {
    pub gt_check: Option<BoxN>,
    pub gt_box: BoxN,
    pub gt_mask: &'a MaskGrid,
}

pub fn mask_reward(pred: &MaskGrid, gt: &MaskGrid, theta: f64) -> Result<f64, GeometryError> {
    mask_iou(pred, gt, theta)
}

pub fn meta_reward(p_box: &BoxN, gt_box: &BoxN, p_check: &BoxN, gt_check: &BoxN) -> f64 {
    box_iou(p_box, gt_box) * box_iou(p_check, gt_check)
}

fn meta_for(r: &StructuredResponse, target: &RewardTarget<'_>) -> f64 {
    let check = target.gt_check.map_or(1.0, |gc| box_iou(&r.check, &gc));
    box_iou(&r.bbox, &target.gt_box) * check
}

/// Scores a trajectory text. `decode` produces the predicted mask for a
/// parsed response; it is not called when parsing fails.
pub fn unified_reward<F>(
    text: &str,
    target: &RewardTarget<'_>,
    weights: &RewardWeights,
    theta: f64,
    decode: F,
) -> Result<RewardBreakdown, GeometryError>
where
    F: FnOnce(&StructuredResponse) -> MaskGrid,
{
    let Ok(r) = template::parse(text) else {
        return Ok(RewardBreakdown::default());
    };
    let pred = decode(&r);
    let m = mask_reward(&pred, target.gt_mask, theta)?;
    Ok(RewardBreakdown::new(weights.format, weights.mask * m, weights.meta * meta_for(&r, target)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::serialize;

    fn b(a: [f64; 4]) -> BoxN {
        BoxN::from_array(a).unwrap()
    }

    #[test]
    fn mask_reward_examples() {
        let g = MaskGrid::from_pixels(4, 1, &[(0, 0), (1, 0)]);
        assert_eq!(mask_reward(&g, &g, 0.5).unwrap(), 1.0);
        let d = MaskGrid::from_pixels(4, 1, &[(2, 0), (3, 0)]);
        assert_eq!(mask_reward(&d, &g, 0.5).unwrap(), 0.0);
        let p = MaskGrid::from_pixels(4, 1, &[(1, 0), (2, 0)]);
        assert!((mask_reward(&p, &g, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(mask_reward(&MaskGrid::zeros(2, 2), &g, 0.5).is_err());
    }

    #[test]
    fn meta_reward_examples() {
        let u = BoxN::UNIT;
        assert_eq!(meta_reward(&u, &u, &u, &u), 1.0);
        // IoU 0.8 for the target pair, 0.5 for the check pair
        let t = b([0.0, 0.0, 0.8, 1.0]);
        let c = b([0.0, 0.0, 0.5, 1.0]);
        assert!((meta_reward(&t, &u, &c, &u) - 0.4).abs() < 1e-15);
        let far = b([0.0, 0.0, 0.1, 0.1]);
        let other = b([0.5, 0.5, 0.9, 0.9]);
        assert_eq!(meta_reward(&u, &u, &far, &other), 0.0);
    }

    fn response(check: BoxN, bbox: BoxN) -> StructuredResponse {
        StructuredResponse { think: "t".into(), rule: "r".into(), check, bbox, answer: "red disc".into() }
    }

    #[test]
    fn unified_reward_examples() {
        let gt_mask = MaskGrid::from_pixels(5, 1, &[(0, 0), (1, 0), (2, 0), (3, 0), (4, 0)]);
        let gt_box = b([0.0, 0.0, 0.5, 0.5]);
        let gt_check = b([0.5, 0.5, 1.0, 1.0]);
        let target = RewardTarget { gt_check: Some(gt_check), gt_box, gt_mask: &gt_mask };
        let w = RewardWeights::default();

        let good = serialize(&response(gt_check, gt_box));
        let r = unified_reward(&good, &target, &w, 0.5, |_| gt_mask.clone()).unwrap();
        assert_eq!((r.r_format, r.r_mask, r.r_meta, r.r_uni), (1.0, 1.0, 1.0, 3.0));

        let r = unified_reward("<think>", &target, &w, 0.5, |_| unreachable!()).unwrap();
        assert_eq!(r, RewardBreakdown::default());

        // correct check, disjoint target box, mask IoU 1/5
        let wrong = serialize(&response(gt_check, b([0.6, 0.0, 1.0, 0.4])));
        let one_px = MaskGrid::from_pixels(5, 1, &[(0, 0)]);
        let r = unified_reward(&wrong, &target, &w, 0.5, |_| one_px.clone()).unwrap();
        assert_eq!((r.r_format, r.r_meta), (1.0, 0.0));
        assert!((r.r_mask - 0.2).abs() < 1e-15 && (r.r_uni - 1.2).abs() < 1e-15);
    }

    #[test]
    fn single_tile_check_is_one() {
        let gt_mask = MaskGrid::zeros(2, 2);
        let gt_box = b([0.0, 0.0, 0.5, 0.5]);
        let target = RewardTarget { gt_check: None, gt_box, gt_mask: &gt_mask };
        let text = serialize(&response(b([0.9, 0.9, 1.0, 1.0]), gt_box));
        let r = unified_reward(&text, &target, &RewardWeights::default(), 0.5, |_| gt_mask.clone()).unwrap();
        assert_eq!(r.r_meta, 1.0);
    }

    #[test]
    fn ablation_zeroes_components() {
        let gt_mask = MaskGrid::zeros(2, 2);
        let gt_box = b([0.0, 0.0, 0.5, 0.5]);
        let target = RewardTarget { gt_check: None, gt_box, gt_mask: &gt_mask };
        let text = serialize(&response(gt_box, gt_box));
        for ab in RewardAblation::ALL {
            let r = unified_reward(&text, &target, &ab.weights(), 0.5, |_| gt_mask.clone()).unwrap();
            assert_eq!(r.r_uni, r.r_format + r.r_mask + r.r_meta);
            assert_eq!(ab.to_string().parse::<RewardAblation>().unwrap(), ab);
        }
        let r = unified_reward(&text, &target, &RewardAblation::NoBoxMeta.weights(), 0.5, |_| gt_mask.clone())
            .unwrap();
        assert_eq!(r.r_meta, 0.0);
    }
}
