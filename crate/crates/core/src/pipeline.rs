//! Whole-dataset evaluation: scoring, per-image bucketing, slice passes and
//! the score-window sweep.
//!
//! Images are processed in parallel on the current rayon pool and their
//! ledgers concatenated in image-id order, so results do not depend on the
//! number of workers.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dba::{dba, DbaParams, EvalLedger, DEFAULT_IOU_THR, DEFAULT_SCORE_THR};
use crate::error::{Error, Result};
use crate::grouping::{build_groups, GtBox, DEFAULT_GROUP_IOU};
use crate::ingest::{
    parse_ground_truth, parse_predictions, parse_prompt_catalog, parse_token_map, GroundTruthRecord, PredictionRecord,
    PromptEntry, TokenMap, Validation,
};
use crate::metrics::{average_precision, f1_counts, integrate, nms_ledger, plain_ledger, Slice, DEFAULT_NMS_IOU};
use crate::scoring::{PromptScorer, ScoredPrediction, ScoringMethod, TokenSelection, DEFAULT_CONF_THR};
use crate::taxonomy::{is_subset, LabelRegistry, LabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub scoring: ScoringMethod,
    pub token_selection: TokenSelection,
    pub conf_thr: f64,
    pub group_iou: f64,
    pub iou_thr: f64,
    pub nms_iou: f64,
    pub dba_score_thr: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            scoring: ScoringMethod::Nlse,
            token_selection: TokenSelection::Relevant,
            conf_thr: DEFAULT_CONF_THR,
            group_iou: DEFAULT_GROUP_IOU,
            iou_thr: DEFAULT_IOU_THR,
            nms_iou: DEFAULT_NMS_IOU,
            dba_score_thr: DEFAULT_SCORE_THR,
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64, lo_open: bool| {
            let ok = v.is_finite() && v <= 1.0 && if lo_open { v > 0.0 } else { v >= 0.0 };
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} is outside its range")))
            }
        };
        unit("conf_thr", self.conf_thr, false)?;
        unit("group_iou", self.group_iou, false)?;
        unit("iou_thr", self.iou_thr, true)?;
        unit("nms_iou", self.nms_iou, false)?;
        if !(self.dba_score_thr.is_finite() && self.dba_score_thr >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dba_score_thr = {} must be non-negative",
                self.dba_score_thr
            )));
        }
        Ok(())
    }

    pub fn dba(&self) -> DbaParams {
        DbaParams {
            iou_thr: self.iou_thr,
            score_thr: self.dba_score_thr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "dba")]
    Dba,
    #[serde(rename = "nms-ap")]
    NmsAp,
    #[serde(rename = "plain-ap")]
    PlainAp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dba, Method::NmsAp, Method::PlainAp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dba => "dba",
            Method::NmsAp => "nms-ap",
            Method::PlainAp => "plain-ap",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub registry: LabelRegistry,
    pub prompts: Vec<PromptEntry>,
    pub token_maps: BTreeMap<String, TokenMap>,
    pub ground_truth: Vec<GroundTruthRecord>,
    pub predictions: Vec<PredictionRecord>,
}

/// Passes bytes through while hashing them.
pub struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> HashingReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            hasher: Sha256::new(),
        }
    }

    pub fn hex_digest(self) -> String {
        hex::encode(self.hasher.finalize())
    }
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub ground_truth: PathBuf,
    pub predictions: PathBuf,
    pub prompts: PathBuf,
    pub token_maps: PathBuf,
}

fn with_file<T>(
    path: &Path,
    f: impl FnOnce(&mut BufReader<HashingReader<File>>) -> Result<T>,
) -> Result<(T, InputDigest)> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(HashingReader::new(file));
    let value = f(&mut reader)?;
    // Drain whatever the parser did not consume so the digest covers the file.
    std::io::copy(&mut reader, &mut std::io::sink())?;
    let digest = reader.into_inner().hex_digest();
    Ok((
        value,
        InputDigest {
            path: path.display().to_string(),
            sha256: digest,
        },
    ))
}

impl Dataset {
    /// Loads the four inputs, returning digests keyed by role.
    pub fn load(
        paths: &DatasetPaths,
        registry: LabelRegistry,
        gt_mode: Validation,
        pred_mode: Validation,
    ) -> Result<(Dataset, BTreeMap<String, InputDigest>)> {
        let mut digests = BTreeMap::new();
        let (prompts, d) = with_file(&paths.prompts, |r| parse_prompt_catalog(r, &registry))?;
        digests.insert("prompts".to_string(), d);
        let (token_maps, d) = with_file(&paths.token_maps, |r| parse_token_map(r))?;
        digests.insert("token_maps".to_string(), d);
        let (gt, d) = with_file(&paths.ground_truth, |r| parse_ground_truth(r, &registry, gt_mode))?;
        digests.insert("ground_truth".to_string(), d);
        let (preds, d) = with_file(&paths.predictions, |r| parse_predictions(r, &token_maps, pred_mode))?;
        digests.insert("predictions".to_string(), d);
        digests.insert(
            "label_registry".to_string(),
            InputDigest {
                path: "<registry>".to_string(),
                sha256: registry.digest().to_string(),
            },
        );
        Ok((
            Dataset {
                registry,
                prompts,
                token_maps,
                ground_truth: gt.records,
                predictions: preds.records,
            },
            digests,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub image_id: String,
    pub gts: Vec<GtBox>,
    /// Scored and threshold-filtered, in input order.
    pub preds: Vec<ScoredPrediction>,
}

#[derive(Debug, Clone)]
pub struct SynonymGroup {
    pub id: String,
    pub labels: LabelSet,
}

/// A scored dataset bucketed by image, ready for slice passes.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub registry: LabelRegistry,
    pub images: Vec<ImageBatch>,
    pub prompt_labels: Vec<LabelSet>,
    pub prompt_group: Vec<usize>,
    pub synonym_groups: Vec<SynonymGroup>,
    pub gt_labels: Vec<LabelSet>,
    pub n_predictions: usize,
    pub n_retained: usize,
}

pub fn prepare(dataset: &Dataset, params: &EvalParams) -> Result<Prepared> {
    params.validate()?;
    let mut prompt_index: HashMap<&str, u32> = HashMap::new();
    let mut group_index: HashMap<&str, usize> = HashMap::new();
    let mut synonym_groups = Vec::new();
    let mut prompt_group = Vec::with_capacity(dataset.prompts.len());
    for (i, p) in dataset.prompts.iter().enumerate() {
        prompt_index.insert(p.prompt_id.as_str(), i as u32);
        let g = *group_index.entry(p.synonym_group.as_str()).or_insert_with(|| {
            synonym_groups.push(SynonymGroup {
                id: p.synonym_group.clone(),
                labels: p.label_set,
            });
            synonym_groups.len() - 1
        });
        prompt_group.push(g);
    }
    let scorers: Vec<Option<PromptScorer>> = dataset
        .prompts
        .iter()
        .map(|p| dataset.token_maps.get(&p.prompt_id).map(PromptScorer::new))
        .collect();

    let scored: Vec<Option<ScoredPrediction>> = dataset
        .predictions
        .par_iter()
        .enumerate()
        .map(|(index, rec)| -> Result<Option<ScoredPrediction>> {
            let &prompt = prompt_index
                .get(rec.prompt_id.as_str())
                .ok_or_else(|| Error::UnknownPrompt {
                    prompt_id: rec.prompt_id.clone(),
                })?;
            let scorer = scorers[prompt as usize]
                .as_ref()
                .ok_or_else(|| Error::TokenLengthMismatch {
                    line: index + 1,
                    prompt_id: rec.prompt_id.clone(),
                    logits: rec.token_logits.len(),
                    tokens: None,
                })?;
            let score = scorer.score(
                &rec.token_logits,
                rec.native_score,
                params.scoring,
                params.token_selection,
            )?;
            Ok((score >= params.conf_thr).then_some(ScoredPrediction {
                index,
                prompt,
                bbox: rec.bbox,
                labels: dataset.prompts[prompt as usize].label_set,
                score,
                method: params.scoring,
            }))
        })
        .collect::<Result<_>>()?;

    let mut by_image: BTreeMap<&str, ImageBatch> = BTreeMap::new();
    let batch = |id: &str| ImageBatch {
        image_id: id.to_string(),
        gts: Vec::new(),
        preds: Vec::new(),
    };
    for (index, g) in dataset.ground_truth.iter().enumerate() {
        by_image
            .entry(g.image_id.as_str())
            .or_insert_with(|| batch(&g.image_id))
            .gts
            .push(GtBox {
                index,
                bbox: g.bbox,
                labels: g.labels,
            });
    }
    let mut n_retained = 0;
    for (rec, sp) in dataset.predictions.iter().zip(scored) {
        let entry = by_image
            .entry(rec.image_id.as_str())
            .or_insert_with(|| batch(&rec.image_id));
        if let Some(sp) = sp {
            entry.preds.push(sp);
            n_retained += 1;
        }
    }

    Ok(Prepared {
        registry: dataset.registry.clone(),
        images: by_image.into_values().collect(),
        prompt_labels: dataset.prompts.iter().map(|p| p.label_set).collect(),
        prompt_group,
        synonym_groups,
        gt_labels: dataset.ground_truth.iter().map(|g| g.labels).collect(),
        n_predictions: dataset.predictions.len(),
        n_retained,
    })
}

/// Ledger for one image under one method.
pub fn image_ledger(gts: &[GtBox], preds: &[ScoredPrediction], method: Method, params: &EvalParams) -> EvalLedger {
    match method {
        Method::Dba => {
            let grouping = build_groups(gts, preds, params.group_iou);
            let partial = dba(&grouping.groups, gts, &params.dba());
            integrate(&grouping.non_overlapping, gts, partial, params.iou_thr)
        }
        Method::NmsAp => nms_ledger(preds, gts, params.nms_iou, params.iou_thr),
        Method::PlainAp => plain_ledger(preds, gts, params.iou_thr),
    }
}

/// Which prompts and ground truths take part in a slice pass.
///
/// A prompt is in the slice by its own label set. A ground truth is in the
/// slice when some in-slice prompt could match it (its labels are a subset);
/// the global slice keeps every ground truth.
#[derive(Debug, Clone)]
pub struct SliceMembership {
    pub prompts: Vec<bool>,
    pub gts: Vec<bool>,
}

impl Prepared {
    pub fn membership(&self, slice: Slice) -> SliceMembership {
        let prompts: Vec<bool> = self
            .prompt_labels
            .iter()
            .map(|l| slice.admits(l, &self.registry))
            .collect();
        let gts = if slice == Slice::Global {
            vec![true; self.gt_labels.len()]
        } else {
            let mut sets: Vec<LabelSet> = self
                .prompt_labels
                .iter()
                .zip(&prompts)
                .filter(|(_, &inside)| inside)
                .map(|(l, _)| *l)
                .collect();
            sets.sort();
            sets.dedup();
            self.gt_labels
                .iter()
                .map(|g| sets.iter().any(|p| is_subset(p, g)))
                .collect()
        };
        SliceMembership { prompts, gts }
    }

    pub fn evaluate(&self, membership: &SliceMembership, method: Method, params: &EvalParams) -> EvalLedger {
        let parts: Vec<EvalLedger> = self
            .images
            .par_iter()
            .map(|img| {
                let gts: Vec<GtBox> = img.gts.iter().filter(|g| membership.gts[g.index]).copied().collect();
                let preds: Vec<ScoredPrediction> = img
                    .preds
                    .iter()
                    .filter(|p| membership.prompts[p.prompt as usize])
                    .copied()
                    .collect();
                image_ledger(&gts, &preds, method, params)
            })
            .collect();
        let mut out = EvalLedger::default();
        for part in parts {
            out.extend(part);
        }
        out
    }

    /// Unweighted mean of per-synonym-group AP over groups with ground truth.
    ///
    /// A group's denominator is the number of in-slice ground truths whose
    /// labels contain the group's label set.
    pub fn mean_group_ap(&self, ledger: &EvalLedger, membership: &SliceMembership) -> (Option<f64>, usize) {
        let mut per_group: BTreeMap<usize, Vec<(f64, usize, bool)>> = BTreeMap::new();
        for (p, inside) in membership.prompts.iter().enumerate() {
            if *inside {
                per_group.entry(self.prompt_group[p]).or_default();
            }
        }
        for t in &ledger.tp {
            per_group
                .entry(self.prompt_group[t.prompt as usize])
                .or_default()
                .push((t.score, t.pred, true));
        }
        for f in &ledger.fp {
            per_group
                .entry(self.prompt_group[f.prompt as usize])
                .or_default()
                .push((f.score, f.pred, false));
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for (g, mut entries) in per_group {
            let labels = self.synonym_groups[g].labels;
            let n_gt = self
                .gt_labels
                .iter()
                .zip(&membership.gts)
                .filter(|(l, &inside)| inside && is_subset(&labels, l))
                .count();
            if n_gt == 0 {
                continue;
            }
            entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            sum += crate::metrics::curve_from_sorted(&entries, n_gt).ap;
            n += 1;
        }
        if n == 0 {
            (None, 0)
        } else {
            (Some(sum / n as f64), n)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub score_thr: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_thr: f64,
    pub best_f1: f64,
    pub rows: Vec<SweepRow>,
}

/// Runs the DBA pipeline on the global slice once per window width and picks
/// the width with the highest F1, ties to the smaller width.
pub fn sweep_score_thr(prepared: &Prepared, params: &EvalParams, grid: &[f64]) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    let membership = prepared.membership(Slice::Global);
    let mut rows = Vec::with_capacity(grid.len());
    for &thr in grid {
        let p = EvalParams {
            dba_score_thr: thr,
            ..*params
        };
        p.validate()?;
        let ledger = prepared.evaluate(&membership, Method::Dba, &p);
        let (tp, fp, fn_) = (ledger.tp.len(), ledger.fp.len(), ledger.fn_.len());
        rows.push(SweepRow {
            score_thr: thr,
            tp,
            fp,
            fn_,
            precision: if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            },
            recall: if tp + fn_ == 0 {
                0.0
            } else {
                tp as f64 / (tp + fn_) as f64
            },
            f1: f1_counts(tp, fp, fn_),
            ap: average_precision(&ledger).ap,
        });
    }
    let best = rows
        .iter()
        .fold(None::<&SweepRow>, |best, r| match best {
            None => Some(r),
            Some(b) if r.f1 > b.f1 || (r.f1 == b.f1 && r.score_thr < b.score_thr) => Some(r),
            keep => keep,
        })
        .expect("grid is non-empty");
    Ok(SweepResult {
        best_thr: best.score_thr,
        best_f1: best.f1,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub records: usize,
    pub retained: usize,
    pub images: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ap: f64,
    pub f1: f64,
}

/// Global-slice evaluation over a prediction stream whose records arrive
/// grouped by image. Only one image's predictions are held at a time.
pub struct StreamingEvaluator {
    params: EvalParams,
    method: Method,
    prompts: HashMap<String, (u32, PromptScorer, LabelSet)>,
    gts: HashMap<String, Vec<GtBox>>,
    n_gt: usize,
    done: std::collections::HashSet<String>,
    current: Option<String>,
    batch: Vec<ScoredPrediction>,
    entries: Vec<(f64, usize, bool)>,
    records: usize,
    retained: usize,
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl StreamingEvaluator {
    pub fn new(
        prompts: &[PromptEntry],
        token_maps: &BTreeMap<String, TokenMap>,
        ground_truth: &[GroundTruthRecord],
        method: Method,
        params: EvalParams,
    ) -> Result<Self> {
        params.validate()?;
        let mut table = HashMap::new();
        for (i, p) in prompts.iter().enumerate() {
            if let Some(m) = token_maps.get(&p.prompt_id) {
                table.insert(p.prompt_id.clone(), (i as u32, PromptScorer::new(m), p.label_set));
            }
        }
        let mut gts: HashMap<String, Vec<GtBox>> = HashMap::new();
        for (index, g) in ground_truth.iter().enumerate() {
            gts.entry(g.image_id.clone()).or_default().push(GtBox {
                index,
                bbox: g.bbox,
                labels: g.labels,
            });
        }
        Ok(Self {
            params,
            method,
            prompts: table,
            gts,
            n_gt: ground_truth.len(),
            done: Default::default(),
            current: None,
            batch: Vec::new(),
            entries: Vec::new(),
            records: 0,
            retained: 0,
            tp: 0,
            fp: 0,
            fn_: 0,
        })
    }

    fn flush(&mut self) {
        let Some(image) = self.current.take() else { return };
        let empty = Vec::new();
        let gts = self.gts.get(&image).unwrap_or(&empty);
        let ledger = image_ledger(gts, &self.batch, self.method, &self.params);
        self.tp += ledger.tp.len();
        self.fp += ledger.fp.len();
        self.fn_ += ledger.fn_.len();
        self.entries.extend(ledger.tp.iter().map(|t| (t.score, t.pred, true)));
        self.entries.extend(ledger.fp.iter().map(|f| (f.score, f.pred, false)));
        self.batch.clear();
        self.done.insert(image);
    }

    pub fn push(&mut self, rec: &PredictionRecord) -> Result<()> {
        let index = self.records;
        self.records += 1;
        if self.current.as_deref() != Some(rec.image_id.as_str()) {
            self.flush();
            if self.done.contains(&rec.image_id) {
                return Err(Error::InvalidParameter(format!(
                    "predictions for image {} are not contiguous",
                    rec.image_id
                )));
            }
            self.current = Some(rec.image_id.clone());
        }
        let (prompt, scorer, labels) = self.prompts.get(&rec.prompt_id).ok_or_else(|| Error::UnknownPrompt {
            prompt_id: rec.prompt_id.clone(),
        })?;
        let score = scorer.score(
            &rec.token_logits,
            rec.native_score,
            self.params.scoring,
            self.params.token_selection,
        )?;
        if score >= self.params.conf_thr {
            self.retained += 1;
            self.batch.push(ScoredPrediction {
                index,
                prompt: *prompt,
                bbox: rec.bbox,
                labels: *labels,
                score,
                method: self.params.scoring,
            });
        }
        Ok(())
    }

    pub fn finish(mut self) -> StreamSummary {
        self.flush();
        let unseen: usize = self
            .gts
            .iter()
            .filter(|(img, _)| !self.done.contains(*img))
            .map(|(_, v)| v.len())
            .sum();
        self.fn_ += unseen;
        let mut entries = std::mem::take(&mut self.entries);
        entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        debug_assert_eq!(self.tp + self.fn_, self.n_gt);
        let ap = crate::metrics::curve_from_sorted(&entries, self.tp + self.fn_).ap;
        StreamSummary {
            records: self.records,
            retained: self.retained,
            images: self.done.len(),
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            ap,
            f1: f1_counts(self.tp, self.fp, self.fn_),
        }
    }
}
