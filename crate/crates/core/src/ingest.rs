//! Streaming parsers and writers for the four input formats.
//!
//! Every format is JSON Lines with an optional `schema_version` header; see
//! `docs/formats.md` for the field-level schemas. Readers hold one line in
//! memory at a time.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::jsonl::{self, JsonLines};
use crate::taxonomy::{LabelCategory, LabelRegistry, LabelSet, RuleViolation};

/// Slack allowed on the `[0, 1]` logit contract.
pub const LOGIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Validation {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxFormat {
    #[default]
    Xyxy,
    Cxcywh,
}

fn is_xyxy(f: &BoxFormat) -> bool {
    *f == BoxFormat::Xyxy
}

fn to_bbox(raw: [f64; 4], format: BoxFormat, line: usize) -> Result<BBox> {
    let res = match format {
        BoxFormat::Xyxy => BBox::new(raw[0], raw[1], raw[2], raw[3]),
        BoxFormat::Cxcywh => BBox::from_cxcywh(raw[0], raw[1], raw[2], raw[3]),
    };
    res.map_err(|d| Error::DegenerateBox {
        line,
        x1: d.0[0],
        y1: d.0[1],
        x2: d.0[2],
        y2: d.0[3],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    /// Stable identifier; defaults to `<image_id>#<ordinal>` when the file omits it.
    pub id: String,
    pub image_id: String,
    pub bbox: BBox,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub image_id: String,
    pub prompt_id: String,
    pub bbox: BBox,
    pub token_logits: Vec<f64>,
    pub native_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptEntry {
    pub prompt_id: String,
    pub text: String,
    pub label_set: LabelSet,
    pub synonym_group: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    #[serde(rename = "index")]
    pub token_index: usize,
    #[serde(rename = "text")]
    pub token_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<LabelCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMap {
    pub prompt_id: String,
    #[serde(rename = "tokens")]
    pub entries: Vec<TokenEntry>,
}

impl TokenMap {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices of categorized tokens, ascending.
    pub fn relevant_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.category.is_some())
            .map(|e| e.token_index)
            .collect()
    }

    fn check_contiguous(&self) -> Result<()> {
        for (expected, e) in self.entries.iter().enumerate() {
            if e.token_index != expected {
                return Err(Error::NonContiguousIndices {
                    prompt_id: self.prompt_id.clone(),
                    expected,
                    found: e.token_index,
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Wire structs

#[derive(Serialize, Deserialize)]
struct GroundTruthLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    image_id: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "is_xyxy")]
    box_format: BoxFormat,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    image_id: String,
    prompt_id: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "is_xyxy")]
    box_format: BoxFormat,
    logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct PromptLine {
    prompt_id: String,
    text: String,
    labels: Vec<String>,
    synonym_group: String,
}

// ---------------------------------------------------------------------------
// Ground truth

/// Iterator over ground-truth records; sanity rules are not applied here.
pub struct GroundTruthReader<'a, R> {
    lines: JsonLines<R>,
    registry: &'a LabelRegistry,
    ordinal: usize,
}

impl<'a, R: BufRead> GroundTruthReader<'a, R> {
    pub fn new(reader: R, registry: &'a LabelRegistry) -> Self {
        Self {
            lines: JsonLines::new(reader),
            registry,
            ordinal: 0,
        }
    }
}

impl<R: BufRead> Iterator for GroundTruthReader<'_, R> {
    type Item = Result<GroundTruthRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let (line, raw) = match self.lines.next_record::<GroundTruthLine>()? {
            Ok(x) => x,
            Err(e) => return Some(Err(e)),
        };
        let ordinal = self.ordinal;
        self.ordinal += 1;
        Some((|| {
            let bbox = to_bbox(raw.bbox, raw.box_format, line)?;
            let labels = self.registry.label_set(&raw.labels)?;
            let id = raw.id.unwrap_or_else(|| format!("{}#{}", raw.image_id, ordinal));
            Ok(GroundTruthRecord {
                id,
                image_id: raw.image_id,
                bbox,
                labels,
            })
        })())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedGroundTruth {
    pub records: Vec<GroundTruthRecord>,
    /// Only populated in lenient mode; strict mode fails instead.
    pub violations: Vec<RuleViolation>,
}

pub fn parse_ground_truth<R: BufRead>(
    reader: R,
    registry: &LabelRegistry,
    mode: Validation,
) -> Result<ParsedGroundTruth> {
    let mut out = ParsedGroundTruth::default();
    let mut ids = HashSet::new();
    for (n, rec) in GroundTruthReader::new(reader, registry).enumerate() {
        let rec = rec?;
        if !ids.insert(rec.id.clone()) {
            return Err(Error::MalformedRecord {
                line: n + 1,
                message: format!("duplicate ground-truth id `{}`", rec.id),
            });
        }
        out.violations.extend(registry.check_rules(&rec.labels, &rec.id));
        out.records.push(rec);
    }
    if mode == Validation::Strict && !out.violations.is_empty() {
        return Err(Error::SanityViolations(out.violations));
    }
    Ok(out)
}

pub fn write_ground_truth<W: Write>(
    out: &mut W,
    registry: &LabelRegistry,
    records: &[GroundTruthRecord],
) -> Result<()> {
    jsonl::write_header(out, "ground_truth")?;
    for rec in records {
        let line = GroundTruthLine {
            id: Some(rec.id.clone()),
            image_id: rec.image_id.clone(),
            bbox: rec.bbox.into(),
            box_format: BoxFormat::Xyxy,
            labels: registry.names(&rec.labels).into_iter().map(String::from).collect(),
        };
        jsonl::write_record(out, &line)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Predictions

/// Iterator over prediction records, checked against the token maps.
///
/// In lenient mode records with degenerate boxes are skipped and their line
/// numbers collected in [`PredictionReader::skipped`]; logit and token-length
/// errors are fatal in both modes.
pub struct PredictionReader<'a, R> {
    lines: JsonLines<R>,
    token_lengths: TokenLengths<'a>,
    mode: Validation,
    skipped: Vec<usize>,
}

enum TokenLengths<'a> {
    Maps(&'a BTreeMap<String, TokenMap>),
    Lengths(&'a HashMap<String, usize>),
}

impl TokenLengths<'_> {
    fn get(&self, prompt_id: &str) -> Option<usize> {
        match self {
            TokenLengths::Maps(m) => m.get(prompt_id).map(TokenMap::len),
            TokenLengths::Lengths(m) => m.get(prompt_id).copied(),
        }
    }
}

impl<'a, R: BufRead> PredictionReader<'a, R> {
    pub fn new(reader: R, token_maps: &'a BTreeMap<String, TokenMap>, mode: Validation) -> Self {
        Self {
            lines: JsonLines::new(reader),
            token_lengths: TokenLengths::Maps(token_maps),
            mode,
            skipped: Vec::new(),
        }
    }

    /// Same as [`PredictionReader::new`] but keyed by prompt id → token count.
    pub fn with_lengths(reader: R, lengths: &'a HashMap<String, usize>, mode: Validation) -> Self {
        Self {
            lines: JsonLines::new(reader),
            token_lengths: TokenLengths::Lengths(lengths),
            mode,
            skipped: Vec::new(),
        }
    }

    pub fn skipped(&self) -> &[usize] {
        &self.skipped
    }

    fn convert(&self, line: usize, raw: PredictionLine) -> Result<PredictionRecord> {
        let tokens = self.token_lengths.get(&raw.prompt_id);
        if tokens != Some(raw.logits.len()) {
            return Err(Error::TokenLengthMismatch {
                line,
                prompt_id: raw.prompt_id,
                logits: raw.logits.len(),
                tokens,
            });
        }
        for (index, &value) in raw.logits.iter().enumerate() {
            if !(-LOGIT_TOLERANCE..=1.0 + LOGIT_TOLERANCE).contains(&value) {
                return Err(Error::LogitOutOfRange { line, index, value });
            }
        }
        let bbox = to_bbox(raw.bbox, raw.box_format, line)?;
        Ok(PredictionRecord {
            image_id: raw.image_id,
            prompt_id: raw.prompt_id,
            bbox,
            token_logits: raw.logits,
            native_score: raw.score,
        })
    }
}

impl<R: BufRead> Iterator for PredictionReader<'_, R> {
    type Item = Result<PredictionRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (line, raw) = match self.lines.next_record::<PredictionLine>()? {
                Ok(x) => x,
                Err(e) => return Some(Err(e)),
            };
            match self.convert(line, raw) {
                Err(Error::DegenerateBox { line, .. }) if self.mode == Validation::Lenient => {
                    self.skipped.push(line);
                }
                other => return Some(other),
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedPredictions {
    pub records: Vec<PredictionRecord>,
    /// Line numbers dropped in lenient mode.
    pub skipped: Vec<usize>,
}

pub fn parse_predictions<R: BufRead>(
    reader: R,
    token_maps: &BTreeMap<String, TokenMap>,
    mode: Validation,
) -> Result<ParsedPredictions> {
    let mut it = PredictionReader::new(reader, token_maps, mode);
    let records = it.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(ParsedPredictions {
        records,
        skipped: it.skipped,
    })
}

fn prediction_line(rec: &PredictionRecord) -> PredictionLine {
    PredictionLine {
        image_id: rec.image_id.clone(),
        prompt_id: rec.prompt_id.clone(),
        bbox: rec.bbox.into(),
        box_format: BoxFormat::Xyxy,
        logits: rec.token_logits.clone(),
        score: rec.native_score,
    }
}

pub fn write_predictions_header<W: Write>(out: &mut W) -> Result<()> {
    jsonl::write_header(out, "predictions")
}

pub fn write_prediction<W: Write>(out: &mut W, rec: &PredictionRecord) -> Result<()> {
    jsonl::write_record(out, &prediction_line(rec))
}

pub fn write_predictions<W: Write>(out: &mut W, records: &[PredictionRecord]) -> Result<()> {
    write_predictions_header(out)?;
    for rec in records {
        write_prediction(out, rec)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Prompt catalog

pub fn parse_prompt_catalog<R: BufRead>(reader: R, registry: &LabelRegistry) -> Result<Vec<PromptEntry>> {
    let mut lines = JsonLines::new(reader);
    let mut seen = HashSet::new();
    let mut groups: HashMap<String, LabelSet> = HashMap::new();
    let mut out = Vec::new();
    while let Some(rec) = lines.next_record::<PromptLine>() {
        let (line, raw) = rec?;
        if !seen.insert(raw.prompt_id.clone()) {
            return Err(Error::DuplicatePromptId {
                line,
                prompt_id: raw.prompt_id,
            });
        }
        let label_set = registry.label_set(&raw.labels)?;
        match groups.get(&raw.synonym_group) {
            Some(existing) if *existing != label_set => {
                return Err(Error::InconsistentSynonymGroup {
                    line,
                    group: raw.synonym_group,
                })
            }
            Some(_) => {}
            None => {
                groups.insert(raw.synonym_group.clone(), label_set);
            }
        }
        out.push(PromptEntry {
            prompt_id: raw.prompt_id,
            text: raw.text,
            label_set,
            synonym_group: raw.synonym_group,
        });
    }
    Ok(out)
}

pub fn synonym_group_count(entries: &[PromptEntry]) -> usize {
    entries
        .iter()
        .map(|e| e.synonym_group.as_str())
        .collect::<HashSet<_>>()
        .len()
}

pub fn write_prompt_catalog<W: Write>(out: &mut W, registry: &LabelRegistry, entries: &[PromptEntry]) -> Result<()> {
    jsonl::write_header(out, "prompt_catalog")?;
    for e in entries {
        let line = PromptLine {
            prompt_id: e.prompt_id.clone(),
            text: e.text.clone(),
            labels: registry.names(&e.label_set).into_iter().map(String::from).collect(),
            synonym_group: e.synonym_group.clone(),
        };
        jsonl::write_record(out, &line)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Token maps

pub fn parse_token_map<R: BufRead>(reader: R) -> Result<BTreeMap<String, TokenMap>> {
    let mut lines = JsonLines::new(reader);
    let mut out = BTreeMap::new();
    while let Some(rec) = lines.next_record::<TokenMap>() {
        let (line, map) = rec?;
        map.check_contiguous()?;
        if out.contains_key(&map.prompt_id) {
            return Err(Error::DuplicateTokenMap {
                line,
                prompt_id: map.prompt_id,
            });
        }
        out.insert(map.prompt_id.clone(), map);
    }
    Ok(out)
}

pub fn write_token_maps<'a, W: Write>(out: &mut W, maps: impl IntoIterator<Item = &'a TokenMap>) -> Result<()> {
    jsonl::write_header(out, "token_maps")?;
    for map in maps {
        jsonl::write_record(out, map)?;
    }
    Ok(())
}
