//! Box confidence from per-token logits.
//!
//! The context-aware score is the normalized log-sum-exp (log-mean-exp) of
//! the logits of categorized tokens. It sits between the smallest and the
//! largest selected logit, so a box needs support from every relevant token
//! to score high, unlike the Max-Logit baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::ingest::TokenMap;
use crate::taxonomy::LabelSet;

pub const DEFAULT_CONF_THR: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMethod {
    #[default]
    Nlse,
    MaxLogit,
    Native,
}

impl std::fmt::Display for ScoringMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoringMethod::Nlse => "nlse",
            ScoringMethod::MaxLogit => "maxlogit",
            ScoringMethod::Native => "native",
        })
    }
}

/// Which tokens feed the N-LSE score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenSelection {
    #[default]
    Relevant,
    All,
}

/// A prediction reduced to what grouping and matching need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPrediction {
    /// Position in the input prediction stream; the tie-break key everywhere.
    pub index: usize,
    /// Ordinal of the prompt in the catalog.
    pub prompt: u32,
    pub bbox: BBox,
    pub labels: LabelSet,
    pub score: f64,
    pub method: ScoringMethod,
}

pub fn select_relevant(logits: &[f64], token_map: &TokenMap) -> Result<Vec<f64>> {
    debug_assert_eq!(logits.len(), token_map.len());
    let out: Vec<f64> = token_map
        .entries
        .iter()
        .zip(logits)
        .filter(|(e, _)| e.category.is_some())
        .map(|(_, &z)| z)
        .collect();
    if out.is_empty() {
        return Err(Error::EmptySelection(token_map.prompt_id.clone()));
    }
    Ok(out)
}

/// `log((1/N) Σ e^{z_t})`, shifted by the maximum for stability.
pub fn n_lse(z: &[f64]) -> Result<f64> {
    n_lse_iter(z.iter().copied())
}

fn n_lse_iter<I>(z: I) -> Result<f64>
where
    I: Iterator<Item = f64> + Clone,
{
    let m = z.clone().fold(f64::NEG_INFINITY, f64::max);
    // An all -inf vector has m = -inf. Logits here live in [0, 1], so only
    // emptiness needs handling.
    let (sum, n) = z.fold((0.0f64, 0usize), |(s, n), v| (s + (v - m).exp(), n + 1));
    if n == 0 {
        return Err(Error::EmptyVector);
    }
    Ok(m + (sum / n as f64).ln())
}

pub fn max_logit(z: &[f64]) -> Result<f64> {
    z.iter().copied().reduce(f64::max).ok_or(Error::EmptyVector)
}

/// Keeps predictions with `score >= thr`, preserving order.
pub fn filter_by_threshold(preds: Vec<ScoredPrediction>, thr: f64) -> Vec<ScoredPrediction> {
    let mut preds = preds;
    preds.retain(|p| p.score >= thr);
    preds
}

/// Precomputed per-prompt token selection, so scoring a record allocates nothing.
#[derive(Debug, Clone)]
pub struct PromptScorer {
    relevant: Vec<usize>,
    prompt_id: String,
}

impl PromptScorer {
    pub fn new(token_map: &TokenMap) -> Self {
        Self {
            relevant: token_map.relevant_indices(),
            prompt_id: token_map.prompt_id.clone(),
        }
    }

    pub fn score(
        &self,
        logits: &[f64],
        native: Option<f64>,
        method: ScoringMethod,
        selection: TokenSelection,
    ) -> Result<f64> {
        match method {
            // Max-Logit reads every token, as detectors report it natively.
            ScoringMethod::MaxLogit => max_logit(logits),
            ScoringMethod::Native => native.ok_or(Error::MissingNativeScore),
            ScoringMethod::Nlse => match selection {
                TokenSelection::All => n_lse(logits),
                TokenSelection::Relevant => {
                    if self.relevant.is_empty() {
                        return Err(Error::EmptySelection(self.prompt_id.clone()));
                    }
                    n_lse_iter(self.relevant.iter().map(|&i| logits[i]))
                }
            },
        }
    }
}
