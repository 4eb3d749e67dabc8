//! Spatial relations between detected boxes.
//!
//! All relations are existential over the two box lists: the relation holds
//! when at least one `(a, b)` pair satisfies it, and that pair is returned as
//! the witness.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::model::BBox;
use crate::vm::VmConfig;

/// Length of the normalized image diagonal.
pub const UNIT_DIAGONAL: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    On,
    Under,
    Above,
    Below,
    LeftOf,
    RightOf,
    Near,
    Inside,
    OverlapOrNear,
}

impl Relation {
    pub const ALL: [Relation; 9] = [
        Relation::On,
        Relation::Under,
        Relation::Above,
        Relation::Below,
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Near,
        Relation::Inside,
        Relation::OverlapOrNear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::On => "on",
            Relation::Under => "under",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::LeftOf => "left_of",
            Relation::RightOf => "right_of",
            Relation::Near => "near",
            Relation::Inside => "inside",
            Relation::OverlapOrNear => "overlap_or_near",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown relation {0:?}")]
pub struct UnknownRelation(pub String);

impl FromStr for Relation {
    type Err = UnknownRelation;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| UnknownRelation(s.to_string()))
    }
}

/// Result of [`eval_relation`]: whether it holds and the first witness pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationResult {
    pub holds: bool,
    pub witness: Option<(BBox, BBox)>,
}

fn overlap_1d(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    overlap_1d(a.x0, a.x1, b.x0, b.x1) * overlap_1d(a.y0, a.y1, b.y0, b.y1)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

fn vertically_separated(a: &BBox, b: &BBox) -> bool {
    overlap_1d(a.y0, a.y1, b.y0, b.y1) < 0.5 * a.height().min(b.height())
}

fn horizontally_separated(a: &BBox, b: &BBox) -> bool {
    overlap_1d(a.x0, a.x1, b.x0, b.x1) < 0.5 * a.width().min(b.width())
}

/// Does `rel(a, b)` hold for this single pair?
pub fn relation_holds(rel: Relation, a: &BBox, b: &BBox, cfg: &VmConfig) -> bool {
    match rel {
        Relation::Above => a.center().1 < b.center().1 && vertically_separated(a, b),
        Relation::Below => a.center().1 > b.center().1 && vertically_separated(a, b),
        Relation::LeftOf => a.center().0 < b.center().0 && horizontally_separated(a, b),
        Relation::RightOf => a.center().0 > b.center().0 && horizontally_separated(a, b),
        Relation::Under => {
            relation_holds(Relation::Below, a, b, cfg) && overlap_1d(a.x0, a.x1, b.x0, b.x1) > 0.0
        }
        Relation::On => {
            // bottom edge of a lands in b's upper half, give or take the tolerance
            let top_band = (b.y0 - cfg.contact_tol)..=(b.center().1 + cfg.contact_tol);
            let x_overlap = overlap_1d(a.x0, a.x1, b.x0, b.x1) / a.width().min(b.width());
            top_band.contains(&a.y1) && x_overlap >= cfg.min_overlap
        }
        Relation::Inside => intersection_area(a, b) >= cfg.inside_frac * a.area(),
        Relation::Near => center_distance(a, b) <= cfg.near_frac * UNIT_DIAGONAL,
        Relation::OverlapOrNear => iou(a, b) > 0.0 || relation_holds(Relation::Near, a, b, cfg),
    }
}

/// Existential check of `rel` over two box lists.
///
/// ```
/// use vismc::geometry::{eval_relation, Relation};
/// use vismc::model::BBox;
/// use vismc::vm::VmConfig;
///
/// let a = [BBox::new(0.1, 0.1, 0.3, 0.3).unwrap()];
/// let b = [BBox::new(0.5, 0.1, 0.7, 0.3).unwrap()];
/// assert!(eval_relation(Relation::LeftOf, &a, &b, &VmConfig::default()).holds);
/// ```
pub fn eval_relation(rel: Relation, a: &[BBox], b: &[BBox], cfg: &VmConfig) -> RelationResult {
    for x in a {
        for y in b {
            if relation_holds(rel, x, y, cfg) {
                return RelationResult {
                    holds: true,
                    witness: Some((x.clone(), y.clone())),
                };
            }
        }
    }
    RelationResult {
        holds: false,
        witness: None,
    }
}
