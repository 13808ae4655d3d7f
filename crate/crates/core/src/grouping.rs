//! Per-ground-truth overlap groups.
//!
//! For each ground-truth box, in annotation order, the unassigned prediction
//! with the highest IoU to it becomes the anchor; every unassigned prediction
//! overlapping the anchor by more than `group_iou` joins the group. A
//! prediction is claimed by at most one group. Whatever is left over forms
//! the non-overlapping set.

use std::cmp::Ordering;

use crate::geometry::{iou, BBox};
use crate::scoring::ScoredPrediction;
use crate::taxonomy::LabelSet;

pub const DEFAULT_GROUP_IOU: f64 = 0.85;

/// A ground-truth box as seen by the matchers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    /// Position in the ground-truth input; what ledgers record.
    pub index: usize,
    pub bbox: BBox,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapGroup {
    /// Position of the group's ground truth in the slice given to [`build_groups`].
    pub gt_index: usize,
    pub anchor: ScoredPrediction,
    /// Anchor included, ordered by descending score then input index.
    pub members: Vec<ScoredPrediction>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupingResult {
    pub groups: Vec<OverlapGroup>,
    /// Ordered by input index.
    pub non_overlapping: Vec<ScoredPrediction>,
}

/// Descending score, then ascending input index.
pub fn by_confidence(a: &ScoredPrediction, b: &ScoredPrediction) -> Ordering {
    b.score.total_cmp(&a.score).then(a.index.cmp(&b.index))
}

pub fn build_groups(gts: &[GtBox], preds: &[ScoredPrediction], group_iou: f64) -> GroupingResult {
    let mut assigned = vec![false; preds.len()];
    let mut groups = Vec::new();

    for (gt_index, gt) in gts.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in preds.iter().enumerate() {
            if assigned[i] {
                continue;
            }
            let v = iou(&p.bbox, &gt.bbox);
            if v <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((j, bv)) => match v.total_cmp(&bv) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => by_confidence(p, &preds[j]) == Ordering::Less,
                },
            };
            if better {
                best = Some((i, v));
            }
        }
        let Some((anchor_i, _)) = best else { continue };
        let anchor = preds[anchor_i];
        assigned[anchor_i] = true;
        let mut members = vec![anchor];
        for (i, p) in preds.iter().enumerate() {
            if !assigned[i] && iou(&p.bbox, &anchor.bbox) > group_iou {
                assigned[i] = true;
                members.push(*p);
            }
        }
        members.sort_by(by_confidence);
        groups.push(OverlapGroup {
            gt_index,
            anchor,
            members,
        });
    }

    let mut non_overlapping: Vec<ScoredPrediction> = preds
        .iter()
        .zip(&assigned)
        .filter(|(_, &a)| !a)
        .map(|(p, _)| *p)
        .collect();
    non_overlapping.sort_by_key(|p| p.index);
    GroupingResult {
        groups,
        non_overlapping,
    }
}
