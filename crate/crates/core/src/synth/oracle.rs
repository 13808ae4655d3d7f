//! Brute-force reference evaluation, used only to cross-check the pipeline.
//!
//! Written straight from the matching rules and kept free of the grouping,
//! dba, metrics, geometry and scoring code: boxes are plain arrays, label
//! sets are sets of names, scores come from the naive log-mean-exp formula
//! and AP is recomputed from scratch at every distinct threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Dataset, EvalParams, Method};
use crate::scoring::{ScoringMethod, TokenSelection};
use crate::taxonomy::LabelCategory;

pub const ORACLE_SIZE_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    /// (prediction position, ground-truth position)
    pub tp: BTreeSet<(usize, usize)>,
    pub fp: BTreeSet<usize>,
    #[serde(rename = "fn")]
    pub fn_: BTreeSet<usize>,
    pub ap: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub outcomes: BTreeMap<Method, OracleOutcome>,
}

#[derive(Clone)]
struct Labels {
    by_cat: BTreeMap<LabelCategory, BTreeSet<String>>,
}

impl Labels {
    fn get(&self, c: LabelCategory) -> BTreeSet<String> {
        self.by_cat.get(&c).cloned().unwrap_or_default()
    }

    fn within(&self, other: &Labels) -> bool {
        self.by_cat
            .iter()
            .all(|(c, names)| names.iter().all(|n| other.get(*c).contains(n)))
    }

    fn conflicts_with(&self, other: &Labels) -> bool {
        [LabelCategory::Condition, LabelCategory::State].into_iter().any(|c| {
            let (a, b) = (self.get(c), other.get(c));
            !a.is_empty() && !b.is_empty() && a.intersection(&b).next().is_none()
        })
    }
}

#[derive(Clone)]
struct Det {
    index: usize,
    b: [f64; 4],
    score: f64,
    labels: Labels,
}

#[derive(Clone)]
struct Truth {
    index: usize,
    b: [f64; 4],
    labels: Labels,
}

fn overlap(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    (inter / union).min(1.0)
}

fn naive_score(z: &[f64], cats: &[Option<LabelCategory>], native: Option<f64>, p: &EvalParams) -> Result<f64> {
    match p.scoring {
        ScoringMethod::Native => native.ok_or(Error::MissingNativeScore),
        ScoringMethod::MaxLogit => z.iter().copied().reduce(f64::max).ok_or(Error::EmptyVector),
        ScoringMethod::Nlse => {
            let picked: Vec<f64> = match p.token_selection {
                TokenSelection::All => z.to_vec(),
                TokenSelection::Relevant => z
                    .iter()
                    .zip(cats)
                    .filter(|(_, c)| c.is_some())
                    .map(|(v, _)| *v)
                    .collect(),
            };
            if picked.is_empty() {
                return Err(Error::EmptyVector);
            }
            let mean = picked.iter().map(|v| v.exp()).sum::<f64>() / picked.len() as f64;
            Ok(mean.ln())
        }
    }
}

/// Confidence order: higher score first, then earlier input position.
fn confidence_order(dets: &mut [Det]) {
    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.index.cmp(&b.index)));
}

fn try_match(d: &Det, gts: &[Truth], claimed: &BTreeSet<usize>, own: Option<usize>, iou_thr: f64) -> Option<usize> {
    let ok = |g: &Truth| !claimed.contains(&g.index) && overlap(&d.b, &g.b) >= iou_thr && d.labels.within(&g.labels);
    if let Some(pos) = own {
        if ok(&gts[pos]) {
            return Some(pos);
        }
    }
    let mut best: Option<usize> = None;
    for (pos, g) in gts.iter().enumerate() {
        if ok(g) && best.is_none_or(|bp| overlap(&d.b, &g.b) > overlap(&d.b, &gts[bp].b)) {
            best = Some(pos);
        }
    }
    best
}

fn match_all(dets: &[Det], gts: &[Truth], claimed: &mut BTreeSet<usize>, p: &EvalParams, out: &mut OracleOutcome) {
    let mut order = dets.to_vec();
    confidence_order(&mut order);
    for d in &order {
        match try_match(d, gts, claimed, None, p.iou_thr) {
            Some(pos) => {
                claimed.insert(gts[pos].index);
                out.tp.insert((d.index, gts[pos].index));
            }
            None => {
                out.fp.insert(d.index);
            }
        }
    }
}

fn image_dba(dets: &[Det], gts: &[Truth], p: &EvalParams, out: &mut OracleOutcome) -> BTreeSet<usize> {
    let mut taken = vec![false; dets.len()];
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (gpos, g) in gts.iter().enumerate() {
        let mut anchor: Option<usize> = None;
        for (i, d) in dets.iter().enumerate() {
            if taken[i] || overlap(&d.b, &g.b) <= 0.0 {
                continue;
            }
            let replace = match anchor {
                None => true,
                Some(a) => {
                    let (va, vi) = (overlap(&dets[a].b, &g.b), overlap(&d.b, &g.b));
                    let key_i = (vi, d.score, std::cmp::Reverse(d.index));
                    let key_a = (va, dets[a].score, std::cmp::Reverse(dets[a].index));
                    key_i.partial_cmp(&key_a) == Some(std::cmp::Ordering::Greater)
                }
            };
            if replace {
                anchor = Some(i);
            }
        }
        let Some(a) = anchor else { continue };
        taken[a] = true;
        let mut members = vec![a];
        for (i, d) in dets.iter().enumerate() {
            if !taken[i] && overlap(&d.b, &dets[a].b) > p.group_iou {
                taken[i] = true;
                members.push(i);
            }
        }
        groups.push((gpos, members));
    }

    let mut claimed = BTreeSet::new();
    for (gpos, members) in &groups {
        let top = members.iter().map(|&i| dets[i].score).fold(f64::MIN, f64::max);
        let mut kept: Vec<Det> = members
            .iter()
            .map(|&i| dets[i].clone())
            .filter(|d| d.score >= top - p.dba_score_thr)
            .collect();
        confidence_order(&mut kept);
        let mut conflict = false;
        for x in &kept {
            for y in &kept {
                if x.index != y.index && x.labels.conflicts_with(&y.labels) {
                    conflict = true;
                }
            }
        }
        if conflict {
            out.fp.extend(kept.iter().map(|d| d.index));
            continue;
        }
        for d in &kept {
            match try_match(d, gts, &claimed, Some(*gpos), p.iou_thr) {
                Some(pos) => {
                    claimed.insert(gts[pos].index);
                    out.tp.insert((d.index, gts[pos].index));
                }
                None => {
                    out.fp.insert(d.index);
                }
            }
        }
    }
    let rest: Vec<Det> = dets
        .iter()
        .zip(&taken)
        .filter(|(_, &t)| !t)
        .map(|(d, _)| d.clone())
        .collect();
    match_all(&rest, gts, &mut claimed, p, out);
    claimed
}

fn image_nms(dets: &[Det], p: &EvalParams) -> Vec<Det> {
    let mut order = dets.to_vec();
    confidence_order(&mut order);
    let mut kept: Vec<Det> = Vec::new();
    for d in order {
        if !kept.iter().any(|k| overlap(&k.b, &d.b) > p.nms_iou) {
            kept.push(d);
        }
    }
    kept
}

/// AP by recomputing precision and recall from scratch at each distinct score.
pub fn brute_force_ap(scored: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut thresholds: Vec<f64> = scored.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let pr: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let tp = scored.iter().filter(|s| s.0 >= t && s.1).count();
            let all = scored.iter().filter(|s| s.0 >= t).count();
            (tp as f64 / n_gt as f64, tp as f64 / all as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (i, &(r, _)) in pr.iter().enumerate() {
        let best = pr[i..].iter().map(|x| x.1).fold(0.0, f64::max);
        ap += (r - prev) * best;
        prev = r;
    }
    ap
}

pub fn oracle_metrics(dataset: &Dataset, params: &EvalParams, methods: &[Method]) -> Result<OracleReport> {
    let size = dataset.ground_truth.len() + dataset.predictions.len();
    if size > ORACLE_SIZE_LIMIT {
        return Err(Error::SizeLimitExceeded {
            found: size,
            limit: ORACLE_SIZE_LIMIT,
        });
    }
    let reg = &dataset.registry;
    let to_labels = |ls: &crate::taxonomy::LabelSet| {
        let mut by_cat: BTreeMap<LabelCategory, BTreeSet<String>> = BTreeMap::new();
        for name in reg.names(ls) {
            let id = reg.id(name).expect("registry name");
            by_cat.entry(reg.category(id)).or_default().insert(name.to_string());
        }
        Labels { by_cat }
    };
    let prompt_labels: HashMap<&str, Labels> = dataset
        .prompts
        .iter()
        .map(|p| (p.prompt_id.as_str(), to_labels(&p.label_set)))
        .collect();

    let mut truths: BTreeMap<&str, Vec<Truth>> = BTreeMap::new();
    for (index, g) in dataset.ground_truth.iter().enumerate() {
        truths.entry(g.image_id.as_str()).or_default().push(Truth {
            index,
            b: [g.bbox.x1, g.bbox.y1, g.bbox.x2, g.bbox.y2],
            labels: to_labels(&g.labels),
        });
    }
    let mut dets: BTreeMap<&str, Vec<Det>> = BTreeMap::new();
    for (index, r) in dataset.predictions.iter().enumerate() {
        let labels = prompt_labels
            .get(r.prompt_id.as_str())
            .ok_or_else(|| Error::UnknownPrompt {
                prompt_id: r.prompt_id.clone(),
            })?
            .clone();
        let map = dataset
            .token_maps
            .get(&r.prompt_id)
            .ok_or_else(|| Error::TokenLengthMismatch {
                line: index + 1,
                prompt_id: r.prompt_id.clone(),
                logits: r.token_logits.len(),
                tokens: None,
            })?;
        let cats: Vec<Option<LabelCategory>> = map.entries.iter().map(|e| e.category).collect();
        let score = naive_score(&r.token_logits, &cats, r.native_score, params)?;
        if score < params.conf_thr {
            continue;
        }
        dets.entry(r.image_id.as_str()).or_default().push(Det {
            index,
            b: [r.bbox.x1, r.bbox.y1, r.bbox.x2, r.bbox.y2],
            score,
            labels,
        });
    }

    let mut outcomes = BTreeMap::new();
    for &method in methods {
        let mut out = OracleOutcome {
            tp: BTreeSet::new(),
            fp: BTreeSet::new(),
            fn_: BTreeSet::new(),
            ap: 0.0,
            f1: 0.0,
        };
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for (image, gts) in truths.iter().map(|(k, v)| (*k, v.clone())).chain(
            dets.keys()
                .filter(|k| !truths.contains_key(*k))
                .map(|k| (*k, Vec::new())),
        ) {
            let ds = dets.get(image).cloned().unwrap_or_default();
            for d in &ds {
                scores.insert(d.index, d.score);
            }
            let claimed = match method {
                Method::Dba => image_dba(&ds, &gts, params, &mut out),
                Method::NmsAp => {
                    let mut c = BTreeSet::new();
                    match_all(&image_nms(&ds, params), &gts, &mut c, params, &mut out);
                    c
                }
                Method::PlainAp => {
                    let mut c = BTreeSet::new();
                    match_all(&ds, &gts, &mut c, params, &mut out);
                    c
                }
            };
            out.fn_
                .extend(gts.iter().map(|g| g.index).filter(|i| !claimed.contains(i)));
        }
        let scored: Vec<(f64, bool)> = out
            .tp
            .iter()
            .map(|(p, _)| (scores[p], true))
            .chain(out.fp.iter().map(|p| (scores[p], false)))
            .collect();
        let n_gt = dataset.ground_truth.len();
        out.ap = brute_force_ap(&scored, n_gt);
        let (tp, fp, fn_) = (out.tp.len() as f64, out.fp.len() as f64, out.fn_.len() as f64);
        out.f1 = if tp + fp + fn_ == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        outcomes.insert(method, out);
    }
    Ok(OracleReport { outcomes })
}
