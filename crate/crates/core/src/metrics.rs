//! Ledger completion, precision/recall curves, AP and F1, the two
//! matching baselines, and slice membership.

use serde::{Deserialize, Serialize};

use crate::dba::{match_prediction, EvalLedger};
use crate::geometry::iou;
use crate::grouping::{by_confidence, GtBox};
use crate::scoring::ScoredPrediction;
use crate::taxonomy::{level_of, LabelId, LabelRegistry, LabelSet, Level};

pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// Matches the non-overlapping predictions against the ground truth the DBA
/// pass left unclaimed, then records every unclaimed ground truth as FN.
pub fn integrate(non_overlapping: &[ScoredPrediction], gts: &[GtBox], ledger: EvalLedger, iou_thr: f64) -> EvalLedger {
    let mut ledger = ledger;
    let mut claimed = ledger.claimed_mask(gts);
    let mut order: Vec<&ScoredPrediction> = non_overlapping.iter().collect();
    order.sort_by(|a, b| by_confidence(a, b));
    for p in order {
        match match_prediction(p, gts, &claimed, None, iou_thr) {
            Ok(k) => {
                claimed[k] = true;
                ledger.push_tp(p, gts[k].index);
            }
            Err(reason) => ledger.push_fp(p, reason),
        }
    }
    ledger
        .fn_
        .extend(gts.iter().zip(&claimed).filter(|(_, &c)| !c).map(|(g, _)| g.index));
    ledger
}

/// Standard per-box matching with no suppression: every prediction, most
/// confident first, claims the best unclaimed ground truth it can.
pub fn plain_ledger(preds: &[ScoredPrediction], gts: &[GtBox], iou_thr: f64) -> EvalLedger {
    integrate(preds, gts, EvalLedger::default(), iou_thr)
}

/// Class-agnostic greedy NMS: keeps the most confident box of each cluster,
/// suppressing any box whose IoU with a kept one exceeds `nms_iou`.
pub fn nms(preds: &[ScoredPrediction], nms_iou: f64) -> Vec<ScoredPrediction> {
    let mut order: Vec<ScoredPrediction> = preds.to_vec();
    order.sort_by(by_confidence);
    let mut kept: Vec<ScoredPrediction> = Vec::new();
    for p in order {
        if kept.iter().all(|k| iou(&k.bbox, &p.bbox) <= nms_iou) {
            kept.push(p);
        }
    }
    kept
}

pub fn nms_ledger(preds: &[ScoredPrediction], gts: &[GtBox], nms_iou: f64, iou_thr: f64) -> EvalLedger {
    plain_ledger(&nms(preds, nms_iou), gts, iou_thr)
}

pub fn nms_ap_baseline(preds: &[ScoredPrediction], gts: &[GtBox], nms_iou: f64, iou_thr: f64) -> PrCurve {
    average_precision(&nms_ledger(preds, gts, nms_iou, iou_thr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Score threshold the point corresponds to (predictions with score ≥ it).
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, by descending threshold.
    pub points: Vec<PrPoint>,
    /// All-point max-interpolated area; 0 when there is no ground truth.
    pub ap: f64,
    pub n_gt: usize,
}

/// Builds the PR curve at every distinct score and integrates its
/// monotone precision envelope over recall.
///
/// Tied scores form one threshold, so the result does not depend on how ties
/// are ordered.
pub fn average_precision(ledger: &EvalLedger) -> PrCurve {
    let mut entries: Vec<(f64, usize, bool)> = ledger
        .tp
        .iter()
        .map(|t| (t.score, t.pred, true))
        .chain(ledger.fp.iter().map(|f| (f.score, f.pred, false)))
        .collect();
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    curve_from_sorted(&entries, ledger.n_gt())
}

pub(crate) fn curve_from_sorted(entries: &[(f64, usize, bool)], n_gt: usize) -> PrCurve {
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(score, _, is_tp)) in entries.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let block_ends = entries.get(i + 1).is_none_or(|next| next.0 != score);
        if block_ends {
            points.push(PrPoint {
                threshold: score,
                recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
                precision: tp as f64 / (tp + fp) as f64,
            });
        }
    }

    let mut ap = 0.0;
    if n_gt > 0 {
        let mut envelope = vec![0.0; points.len()];
        let mut running = 0.0f64;
        for (i, p) in points.iter().enumerate().rev() {
            running = running.max(p.precision);
            envelope[i] = running;
        }
        let mut prev_recall = 0.0;
        for (p, env) in points.iter().zip(&envelope) {
            ap += (p.recall - prev_recall) * env;
            prev_recall = p.recall;
        }
    }
    PrCurve { points, ap, n_gt }
}

/// `2·tp / (2·tp + fp + fn)`, 0 when nothing was counted.
pub fn f1(ledger: &EvalLedger) -> f64 {
    f1_counts(ledger.tp.len(), ledger.fp.len(), ledger.fn_.len())
}

pub fn f1_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slice {
    Global,
    Cs,
    Csa,
    Cso,
    Alone,
    Pair,
    Group,
}

impl Slice {
    pub const ALL: [Slice; 7] = [
        Slice::Global,
        Slice::Cs,
        Slice::Csa,
        Slice::Cso,
        Slice::Alone,
        Slice::Pair,
        Slice::Group,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slice::Global => "global",
            Slice::Cs => "cs",
            Slice::Csa => "csa",
            Slice::Cso => "cso",
            Slice::Alone => "alone",
            Slice::Pair => "pair",
            Slice::Group => "group",
        }
    }

    pub fn parse(s: &str) -> Option<Slice> {
        Slice::ALL.into_iter().find(|sl| sl.name() == s.to_ascii_lowercase())
    }

    pub fn level(self) -> Option<Level> {
        match self {
            Slice::Global => Some(Level::Global),
            Slice::Cs => Some(Level::Cs),
            Slice::Csa => Some(Level::Csa),
            Slice::Cso => Some(Level::Cso),
            _ => None,
        }
    }

    fn condition_label(self, registry: &LabelRegistry) -> Option<LabelId> {
        match self {
            Slice::Alone => registry.id("alone"),
            Slice::Pair => registry.id("couple"),
            Slice::Group => registry.id("group"),
            _ => None,
        }
    }

    /// Whether a prompt with this label set belongs to the slice. Level slices
    /// overlap: a set with both activity and other labels is in CSA and CSO.
    pub fn admits(self, labels: &LabelSet, registry: &LabelRegistry) -> bool {
        match self {
            Slice::Global => true,
            Slice::Cs | Slice::Csa | Slice::Cso => match level_of(labels) {
                Err(_) => false,
                Ok(level) => match self {
                    Slice::Cs => level == Level::Cs,
                    Slice::Csa => !labels.activities.is_empty(),
                    _ => !labels.others.is_empty(),
                },
            },
            Slice::Alone | Slice::Pair | Slice::Group => {
                let id = self.condition_label(registry);
                id.is_some() && labels.condition() == id
            }
        }
    }
}

impl std::fmt::Display for Slice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
