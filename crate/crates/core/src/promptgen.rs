//! Prompt catalogs from label combinations, templates and a synonym dictionary.
//!
//! Each template names the category slots it fills. For one combination the
//! candidates are every applicable template crossed with every choice of
//! phrase per label; they are ranked by the sum of the phrase indices, then
//! template order, then the choice vector, and the first `cap_per_combo`
//! texts not already emitted are kept. Nothing here is random.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{PromptEntry, TokenEntry, TokenMap};
use crate::jsonl::JsonLines;
use crate::taxonomy::{level_of, LabelCategory, LabelId, LabelRegistry, LabelSet, Level};

pub const DEFAULT_CAP_PER_COMBO: usize = 7;
pub const BUILTIN_TEMPLATES: &str = include_str!("../data/templates.jsonl");
pub const BUILTIN_SYNONYMS: &str = include_str!("../data/synonyms.jsonl");

const SLOTS: [(&str, LabelCategory); 4] = [
    ("condition_phrase", LabelCategory::Condition),
    ("state_phrase", LabelCategory::State),
    ("activity_phrase", LabelCategory::Activity),
    ("other_phrase", LabelCategory::Other),
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(LabelCategory),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub pattern: String,
    pub applicable_levels: BTreeSet<Level>,
    pieces: Vec<Piece>,
}

#[derive(Deserialize, Serialize)]
struct TemplateWire {
    pattern: String,
    levels: Vec<Level>,
}

impl PromptTemplate {
    pub fn new(pattern: &str, levels: impl IntoIterator<Item = Level>) -> Result<Self> {
        let mut pieces = Vec::new();
        let mut rest = pattern;
        while let Some(open) = rest.find('{') {
            if open > 0 {
                pieces.push(Piece::Text(rest[..open].to_string()));
            }
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| Error::Template(format!("unclosed slot in {pattern:?}")))?
                + open;
            let name = &rest[open + 1..close];
            let (_, category) = SLOTS
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Template(format!("unknown slot {{{name}}} in {pattern:?}")))?;
            pieces.push(Piece::Slot(*category));
            rest = &rest[close + 1..];
        }
        if rest.contains('}') {
            return Err(Error::Template(format!("stray '}}' in {pattern:?}")));
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        let applicable_levels: BTreeSet<Level> = levels.into_iter().collect();
        if applicable_levels.is_empty() {
            return Err(Error::Template(format!("template {pattern:?} lists no level")));
        }
        Ok(Self {
            pattern: pattern.to_string(),
            applicable_levels,
            pieces,
        })
    }

    pub fn slots(&self) -> BTreeSet<LabelCategory> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(c) => Some(*c),
                Piece::Text(_) => None,
            })
            .collect()
    }

    /// Applies when the level matches and the slots are exactly the
    /// combination's non-empty categories.
    pub fn applies_to(&self, ls: &LabelSet, level: Level) -> bool {
        let filled: BTreeSet<LabelCategory> = LabelCategory::ALL
            .into_iter()
            .filter(|&c| !ls.field(c).is_empty())
            .collect();
        self.applicable_levels.contains(&level) && self.slots() == filled
    }
}

pub fn parse_templates<R: BufRead>(reader: R) -> Result<Vec<PromptTemplate>> {
    let mut lines = JsonLines::new(reader);
    let mut out = Vec::new();
    while let Some(rec) = lines.next_record::<TemplateWire>() {
        let (_, w) = rec?;
        out.push(PromptTemplate::new(&w.pattern, w.levels)?);
    }
    Ok(out)
}

pub fn builtin_templates() -> Vec<PromptTemplate> {
    parse_templates(BUILTIN_TEMPLATES.as_bytes()).expect("bundled templates parse")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymDictionary {
    pub phrases: BTreeMap<LabelId, Vec<String>>,
}

#[derive(Deserialize, Serialize)]
struct SynonymWire {
    label: String,
    phrases: Vec<String>,
}

impl SynonymDictionary {
    pub fn parse<R: BufRead>(reader: R, registry: &LabelRegistry) -> Result<Self> {
        let mut lines = JsonLines::new(reader);
        let mut phrases: BTreeMap<LabelId, Vec<String>> = BTreeMap::new();
        while let Some(rec) = lines.next_record::<SynonymWire>() {
            let (line, w) = rec?;
            let id = registry.resolve(&w.label)?;
            let entry = phrases.entry(id).or_default();
            for p in w.phrases {
                let p = p.split_whitespace().collect::<Vec<_>>().join(" ");
                if p.is_empty() || p.contains('{') || p.contains('}') {
                    return Err(Error::MalformedRecord {
                        line,
                        message: format!("bad phrase for {}", w.label),
                    });
                }
                if !entry.contains(&p) {
                    entry.push(p);
                }
            }
        }
        let dict = Self { phrases };
        dict.validate(registry)?;
        Ok(dict)
    }

    pub fn builtin(registry: &LabelRegistry) -> Result<Self> {
        Self::parse(BUILTIN_SYNONYMS.as_bytes(), registry)
    }

    /// Every registry label needs at least one phrase.
    pub fn validate(&self, registry: &LabelRegistry) -> Result<()> {
        let missing: Vec<&str> = registry
            .labels()
            .iter()
            .filter(|l| {
                let id = registry.id(&l.id).expect("registry label resolves");
                self.phrases.get(&id).is_none_or(|v| v.is_empty())
            })
            .map(|l| l.id.as_str())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Template(format!(
                "no phrase for label(s): {}",
                missing.join(", ")
            )))
        }
    }
}

/// A catalog together with word-level token maps for its texts.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCatalog {
    pub prompts: Vec<PromptEntry>,
    pub token_maps: Vec<TokenMap>,
}

struct Candidate {
    key: (usize, usize, Vec<usize>),
    words: Vec<(String, Option<LabelCategory>)>,
}

fn render(
    template: &PromptTemplate,
    per_category: &BTreeMap<LabelCategory, Vec<&str>>,
) -> Vec<(String, Option<LabelCategory>)> {
    let mut words = Vec::new();
    for piece in &template.pieces {
        match piece {
            Piece::Text(t) => words.extend(t.split_whitespace().map(|w| (w.to_string(), None))),
            Piece::Slot(c) => {
                let phrases = &per_category[c];
                for (i, phrase) in phrases.iter().enumerate() {
                    if i > 0 {
                        words.push(("and".to_string(), None));
                    }
                    words.extend(phrase.split_whitespace().map(|w| (w.to_string(), Some(*c))));
                }
            }
        }
    }
    words
}

fn candidates(
    ls: &LabelSet,
    level: Level,
    templates: &[PromptTemplate],
    synonyms: &SynonymDictionary,
    registry: &LabelRegistry,
) -> Result<Vec<Candidate>> {
    let labels: Vec<LabelId> = ls.all().iter().collect();
    let options: Vec<&Vec<String>> = labels
        .iter()
        .map(|id| {
            synonyms
                .phrases
                .get(id)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::Template(format!("no phrase for label {}", registry.label(*id).id)))
        })
        .collect::<Result<_>>()?;
    let applicable: Vec<(usize, &PromptTemplate)> = templates
        .iter()
        .enumerate()
        .filter(|(_, t)| t.applies_to(ls, level))
        .collect();
    if applicable.is_empty() {
        return Err(Error::NoTemplateForLevel(format!(
            "{level} ({})",
            registry.describe(ls)
        )));
    }

    let mut out = Vec::new();
    let mut choice = vec![0usize; labels.len()];
    loop {
        let mut per_category: BTreeMap<LabelCategory, Vec<&str>> = BTreeMap::new();
        for ((id, opts), &k) in labels.iter().zip(&options).zip(&choice) {
            per_category
                .entry(registry.category(*id))
                .or_default()
                .push(opts[k].as_str());
        }
        let sum: usize = choice.iter().sum();
        for &(ti, t) in &applicable {
            out.push(Candidate {
                key: (sum, ti, choice.clone()),
                words: render(t, &per_category),
            });
        }
        // Odometer over phrase choices, last label fastest.
        let mut pos = labels.len();
        loop {
            if pos == 0 {
                out.sort_by(|a, b| a.key.cmp(&b.key));
                return Ok(out);
            }
            pos -= 1;
            choice[pos] += 1;
            if choice[pos] < options[pos].len() {
                break;
            }
            choice[pos] = 0;
        }
    }
}

/// Generates the catalog. Duplicate combinations are merged; texts are
/// unique across the whole catalog.
pub fn generate_prompts(
    combinations: &[LabelSet],
    templates: &[PromptTemplate],
    synonyms: &SynonymDictionary,
    registry: &LabelRegistry,
    cap_per_combo: usize,
) -> Result<GeneratedCatalog> {
    if cap_per_combo == 0 {
        return Err(Error::InvalidParameter("cap_per_combo must be at least 1".into()));
    }
    let mut seen_combos = HashSet::new();
    let mut seen_texts: HashSet<String> = HashSet::new();
    let mut prompts = Vec::new();
    let mut token_maps = Vec::new();
    let mut group_no = 0usize;
    for ls in combinations {
        if !seen_combos.insert(*ls) {
            continue;
        }
        let violations = registry.check_rules(ls, &registry.describe(ls));
        if !violations.is_empty() {
            return Err(Error::SanityViolations(violations));
        }
        let level = level_of(ls)?;
        let group = format!("sg{group_no:04}");
        group_no += 1;
        let mut kept = 0usize;
        for c in candidates(ls, level, templates, synonyms, registry)? {
            if kept == cap_per_combo {
                break;
            }
            let text = c.words.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ");
            if !seen_texts.insert(text.clone()) {
                continue;
            }
            let prompt_id = format!("{group}-{kept}");
            token_maps.push(TokenMap {
                prompt_id: prompt_id.clone(),
                entries: c
                    .words
                    .into_iter()
                    .enumerate()
                    .map(|(i, (w, category))| TokenEntry {
                        token_index: i,
                        token_text: w,
                        category,
                    })
                    .collect(),
            });
            prompts.push(PromptEntry {
                prompt_id,
                text,
                label_set: *ls,
                synonym_group: group.clone(),
            });
            kept += 1;
        }
        if kept == 0 {
            return Err(Error::Template(format!(
                "every text for {} duplicates an earlier prompt",
                registry.describe(ls)
            )));
        }
    }
    Ok(GeneratedCatalog { prompts, token_maps })
}

#[derive(Deserialize, Serialize)]
struct ComboWire {
    labels: Vec<String>,
}

/// Reads `{"labels": [...]}` lines.
pub fn parse_combinations<R: BufRead>(reader: R, registry: &LabelRegistry) -> Result<Vec<LabelSet>> {
    let mut lines = JsonLines::new(reader);
    let mut out = Vec::new();
    while let Some(rec) = lines.next_record::<ComboWire>() {
        let (_, w) = rec?;
        out.push(registry.label_set(&w.labels)?);
    }
    Ok(out)
}
