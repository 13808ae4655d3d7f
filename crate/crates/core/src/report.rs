//! Metrics reports: one row per (method, slice), plus run metadata.
//!
//! Serialization goes through `BTreeMap`s and fixed row order, so a report is
//! a pure function of its inputs and parameters.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dba::{EvalLedger, FpReason};
use crate::error::Result;
use crate::metrics::{average_precision, f1, PrPoint, Slice};
use crate::pipeline::{EvalParams, InputDigest, Method, Prepared};

pub const AP_METHOD: &str = "all-point";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub slice: Slice,
    pub n_gt: usize,
    pub n_pred: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the slice has no ground truth.
    pub ap: Option<f64>,
    /// Mean per-synonym-group AP; absent when no group has ground truth.
    pub map: Option<f64>,
    pub map_groups: usize,
    pub fp_reasons: BTreeMap<FpReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub images: usize,
    pub ground_truth: usize,
    pub predictions: usize,
    pub retained: usize,
    pub prompts: usize,
    pub synonym_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub ap_method: String,
    pub params: EvalParams,
    pub inputs: BTreeMap<String, InputDigest>,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: RunMetadata,
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveDump {
    pub method: Method,
    pub slice: Slice,
    pub n_gt: usize,
    pub points: Vec<PrPoint>,
}

pub struct Evaluation {
    pub report: MetricsReport,
    pub curves: Vec<CurveDump>,
}

fn row(method: Method, slice: Slice, ledger: &EvalLedger, map: (Option<f64>, usize)) -> (MetricsRow, CurveDump) {
    let curve = average_precision(ledger);
    let (tp, fp, fn_) = (ledger.tp.len(), ledger.fp.len(), ledger.fn_.len());
    let mut fp_reasons: BTreeMap<FpReason, usize> = FpReason::ALL.iter().map(|&r| (r, 0)).collect();
    for f in &ledger.fp {
        *fp_reasons.entry(f.reason).or_default() += 1;
    }
    let n_gt = ledger.n_gt();
    let r = MetricsRow {
        method,
        slice,
        n_gt,
        n_pred: tp + fp,
        tp,
        fp,
        fn_,
        precision: if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
        recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
        f1: f1(ledger),
        ap: (n_gt > 0).then_some(curve.ap),
        map: map.0,
        map_groups: map.1,
        fp_reasons,
    };
    let dump = CurveDump {
        method,
        slice,
        n_gt,
        points: curve.points,
    };
    (r, dump)
}

/// Evaluates every requested (method, slice) pair; rows follow slice order,
/// then method order.
pub fn evaluate(
    prepared: &Prepared,
    params: &EvalParams,
    methods: &[Method],
    slices: &[Slice],
    inputs: BTreeMap<String, InputDigest>,
) -> Result<Evaluation> {
    params.validate()?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &slice in slices {
        let membership = prepared.membership(slice);
        for &method in methods {
            let ledger = prepared.evaluate(&membership, method, params);
            let map = prepared.mean_group_ap(&ledger, &membership);
            let (r, c) = row(method, slice, &ledger, map);
            rows.push(r);
            curves.push(c);
        }
    }
    let metadata = RunMetadata {
        tool: "ovdeval".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        ap_method: AP_METHOD.to_string(),
        params: *params,
        inputs,
        counts: Counts {
            images: prepared.images.len(),
            ground_truth: prepared.gt_labels.len(),
            predictions: prepared.n_predictions,
            retained: prepared.n_retained,
            prompts: prepared.prompt_labels.len(),
            synonym_groups: prepared.synonym_groups.len(),
        },
    };
    Ok(Evaluation {
        report: MetricsReport { metadata, rows },
        curves,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| crate::Error::Io(e.into()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn row(&self, method: Method, slice: Slice) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.slice == slice)
    }

    /// Aligned plain-text table: AP per method side by side, then F1.
    pub fn to_text(&self) -> String {
        let mut methods: Vec<Method> = Vec::new();
        let mut slices: Vec<Slice> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method) {
                methods.push(r.method);
            }
            if !slices.contains(&r.slice) {
                slices.push(r.slice);
            }
        }
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut header = vec!["slice".to_string(), "n_gt".to_string()];
        for m in &methods {
            header.push(format!("{}-AP", m.name().trim_end_matches("-ap").to_uppercase()));
        }
        for m in &methods {
            header.push(format!("{}-F1", m.name().trim_end_matches("-ap").to_uppercase()));
        }
        let mut table = vec![header];
        for &s in &slices {
            let n_gt = self.rows.iter().find(|r| r.slice == s).map_or(0, |r| r.n_gt);
            let mut line = vec![s.name().to_string(), n_gt.to_string()];
            for &m in &methods {
                line.push(fmt(self.row(m, s).and_then(|r| r.ap)));
            }
            for &m in &methods {
                line.push(fmt(self.row(m, s).map(|r| r.f1)));
            }
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &table {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, &w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}
