//! Dynamic Box Aggregation.
//!
//! Within each overlap group every member scoring within `score_thr` of the
//! group maximum is retained; the rest are dropped without being counted. If
//! any two retained members disagree on condition or state, the whole
//! retained set is a false positive. Otherwise each retained member is
//! matched on its own: IoU at least `iou_thr` and predicted labels a subset of
//! the ground truth's, with the group's own ground truth tried first.

use serde::{Deserialize, Serialize};

use crate::geometry::iou;
use crate::grouping::{by_confidence, GtBox, OverlapGroup};
use crate::scoring::ScoredPrediction;
use crate::taxonomy::{disjoint_in_condition_or_state, is_subset};

pub const DEFAULT_IOU_THR: f64 = 0.5;
pub const DEFAULT_SCORE_THR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbaParams {
    pub iou_thr: f64,
    pub score_thr: f64,
}

impl Default for DbaParams {
    fn default() -> Self {
        Self {
            iou_thr: DEFAULT_IOU_THR,
            score_thr: DEFAULT_SCORE_THR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FpReason {
    /// Retained alongside a member with conflicting condition or state.
    Disjoint,
    /// No ground truth reaches the IoU threshold.
    LowIoU,
    /// Overlapping ground truth exists but the labels are not a subset.
    LabelMismatch,
    /// Every ground truth it could match was already claimed.
    Duplicate,
}

impl FpReason {
    pub const ALL: [FpReason; 4] = [
        FpReason::Disjoint,
        FpReason::LowIoU,
        FpReason::LabelMismatch,
        FpReason::Duplicate,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpEntry {
    pub pred: usize,
    pub gt: usize,
    pub score: f64,
    pub prompt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpEntry {
    pub pred: usize,
    pub reason: FpReason,
    pub score: f64,
    pub prompt: u32,
}

/// Classified outcomes. Prediction and ground-truth references are input
/// positions, so ledgers from different images concatenate cleanly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalLedger {
    pub tp: Vec<TpEntry>,
    pub fp: Vec<FpEntry>,
    pub fn_: Vec<usize>,
}

impl EvalLedger {
    /// Ground truths accounted for: every TP claims a distinct one.
    pub fn n_gt(&self) -> usize {
        self.tp.len() + self.fn_.len()
    }

    pub fn extend(&mut self, other: EvalLedger) {
        self.tp.extend(other.tp);
        self.fp.extend(other.fp);
        self.fn_.extend(other.fn_);
    }

    pub fn push_tp(&mut self, p: &ScoredPrediction, gt: usize) {
        self.tp.push(TpEntry {
            pred: p.index,
            gt,
            score: p.score,
            prompt: p.prompt,
        });
    }

    pub fn push_fp(&mut self, p: &ScoredPrediction, reason: FpReason) {
        self.fp.push(FpEntry {
            pred: p.index,
            reason,
            score: p.score,
            prompt: p.prompt,
        });
    }

    pub(crate) fn claimed_mask(&self, gts: &[GtBox]) -> Vec<bool> {
        let mut claimed: Vec<usize> = self.tp.iter().map(|t| t.gt).collect();
        claimed.sort_unstable();
        gts.iter().map(|g| claimed.binary_search(&g.index).is_ok()).collect()
    }
}

/// Matches one prediction against unclaimed ground truth.
///
/// `preferred` (a position in `gts`) is tried first; otherwise the eligible
/// ground truth with the highest IoU wins, ties to the lower position.
/// Returns the position in `gts`, or the reason for failing.
pub fn match_prediction(
    pred: &ScoredPrediction,
    gts: &[GtBox],
    claimed: &[bool],
    preferred: Option<usize>,
    iou_thr: f64,
) -> Result<usize, FpReason> {
    let eligible = |k: usize, v: f64| v >= iou_thr && is_subset(&pred.labels, &gts[k].labels);
    if let Some(k) = preferred {
        if !claimed[k] && eligible(k, iou(&pred.bbox, &gts[k].bbox)) {
            return Ok(k);
        }
    }
    let mut best: Option<(usize, f64)> = None;
    let mut overlapping = false;
    let mut claimed_match = false;
    for (k, g) in gts.iter().enumerate() {
        let v = iou(&pred.bbox, &g.bbox);
        if v < iou_thr {
            continue;
        }
        overlapping = true;
        if !eligible(k, v) {
            continue;
        }
        if claimed[k] {
            claimed_match = true;
            continue;
        }
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((k, v));
        }
    }
    match best {
        Some((k, _)) => Ok(k),
        None if claimed_match => Err(FpReason::Duplicate),
        None if overlapping => Err(FpReason::LabelMismatch),
        None => Err(FpReason::LowIoU),
    }
}

/// Members of `group` within `score_thr` of its top score, most confident first.
pub fn retained(group: &OverlapGroup, score_thr: f64) -> Vec<ScoredPrediction> {
    let top = group.members.iter().map(|m| m.score).fold(f64::NEG_INFINITY, f64::max);
    let floor = top - score_thr;
    let mut kept: Vec<ScoredPrediction> = group.members.iter().filter(|m| m.score >= floor).copied().collect();
    kept.sort_by(by_confidence);
    kept
}

pub fn has_disjoint_pair(members: &[ScoredPrediction]) -> bool {
    members.iter().enumerate().any(|(i, a)| {
        members[i + 1..]
            .iter()
            .any(|b| disjoint_in_condition_or_state(&a.labels, &b.labels))
    })
}

/// Classifies grouped predictions. The returned ledger has no FN entries yet;
/// those come from [`crate::metrics::integrate`].
pub fn dba(groups: &[OverlapGroup], gts: &[GtBox], params: &DbaParams) -> EvalLedger {
    let mut ledger = EvalLedger::default();
    let mut claimed = vec![false; gts.len()];
    for group in groups {
        let kept = retained(group, params.score_thr);
        if has_disjoint_pair(&kept) {
            for m in &kept {
                ledger.push_fp(m, FpReason::Disjoint);
            }
            continue;
        }
        for m in &kept {
            match match_prediction(m, gts, &claimed, Some(group.gt_index), params.iou_thr) {
                Ok(k) => {
                    claimed[k] = true;
                    ledger.push_tp(m, gts[k].index);
                }
                Err(reason) => ledger.push_fp(m, reason),
            }
        }
    }
    ledger
}
