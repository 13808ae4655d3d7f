//! Label universe, label-set algebra and the annotation sanity rules.
//!
//! Labels are loaded from a line-delimited registry file. Each label gets a
//! dense [`LabelId`] which doubles as its bit position in a [`LabelMask`], so
//! a [`LabelSet`] is four machine words and every set operation is a handful
//! of bitwise instructions.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::GroundTruthRecord;
use crate::jsonl::{self, JsonLines};

/// Registry shipped with the crate.
pub const BUILTIN_REGISTRY: &str = include_str!("../data/labels.jsonl");

/// Upper bound on registry size imposed by the 64-bit mask representation.
pub const MAX_LABELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabelCategory {
    Condition,
    State,
    Activity,
    Other,
}

impl LabelCategory {
    pub const ALL: [LabelCategory; 4] = [
        LabelCategory::Condition,
        LabelCategory::State,
        LabelCategory::Activity,
        LabelCategory::Other,
    ];
}

impl fmt::Display for LabelCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LabelCategory::Condition => "Condition",
            LabelCategory::State => "State",
            LabelCategory::Activity => "Activity",
            LabelCategory::Other => "Other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelId(u8);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    fn bit(self) -> u64 {
        1u64 << self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: String,
    pub display_name: String,
    pub category: LabelCategory,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelMask(u64);

impl LabelMask {
    pub const EMPTY: LabelMask = LabelMask(0);

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, id: LabelId) -> bool {
        self.0 & id.bit() != 0
    }

    pub fn insert(&mut self, id: LabelId) {
        self.0 |= id.bit();
    }

    pub fn is_subset_of(self, other: LabelMask) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersects(self, other: LabelMask) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(self, other: LabelMask) -> LabelMask {
        LabelMask(self.0 | other.0)
    }

    /// Members in ascending id order.
    pub fn iter(self) -> impl Iterator<Item = LabelId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros();
            bits &= bits - 1;
            Some(LabelId(i as u8))
        })
    }
}

/// A multi-label assignment split by category.
///
/// `conditions` is a mask rather than a single slot so that records breaking
/// the one-condition rule can still be represented and reported.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSet {
    pub conditions: LabelMask,
    pub states: LabelMask,
    pub activities: LabelMask,
    pub others: LabelMask,
}

impl LabelSet {
    /// The condition label, when exactly one is present.
    pub fn condition(&self) -> Option<LabelId> {
        if self.conditions.len() == 1 {
            self.conditions.iter().next()
        } else {
            None
        }
    }

    pub fn field(&self, category: LabelCategory) -> LabelMask {
        match category {
            LabelCategory::Condition => self.conditions,
            LabelCategory::State => self.states,
            LabelCategory::Activity => self.activities,
            LabelCategory::Other => self.others,
        }
    }

    fn field_mut(&mut self, category: LabelCategory) -> &mut LabelMask {
        match category {
            LabelCategory::Condition => &mut self.conditions,
            LabelCategory::State => &mut self.states,
            LabelCategory::Activity => &mut self.activities,
            LabelCategory::Other => &mut self.others,
        }
    }

    pub fn all(&self) -> LabelMask {
        self.conditions
            .union(self.states)
            .union(self.activities)
            .union(self.others)
    }

    pub fn is_empty(&self) -> bool {
        self.all().is_empty()
    }

    pub fn len(&self) -> usize {
        self.all().len()
    }

    pub fn contains(&self, id: LabelId) -> bool {
        self.all().contains(id)
    }
}

/// `a ⊆ b`, category by category. A missing condition in `a` imposes nothing.
pub fn is_subset(a: &LabelSet, b: &LabelSet) -> bool {
    a.conditions.is_subset_of(b.conditions)
        && a.states.is_subset_of(b.states)
        && a.activities.is_subset_of(b.activities)
        && a.others.is_subset_of(b.others)
}

/// True when both sides name a condition and share none, or both name states
/// and share none. Empty fields never conflict.
pub fn disjoint_in_condition_or_state(a: &LabelSet, b: &LabelSet) -> bool {
    let conflict = |x: LabelMask, y: LabelMask| !x.is_empty() && !y.is_empty() && !x.intersects(y);
    conflict(a.conditions, b.conditions) || conflict(a.states, b.states)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Global,
    #[serde(rename = "CS")]
    Cs,
    #[serde(rename = "CSA")]
    Csa,
    #[serde(rename = "CSO")]
    Cso,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Global => "Global",
            Level::Cs => "CS",
            Level::Csa => "CSA",
            Level::Cso => "CSO",
        })
    }
}

/// Classifies a person label set. Sets carrying both activities and others
/// are CSA here; slicing additionally counts them under CSO.
pub fn level_of(ls: &LabelSet) -> Result<Level> {
    if ls.conditions.is_empty() {
        return Err(Error::MissingCondition);
    }
    if ls.states.is_empty() {
        return Err(Error::MissingState);
    }
    Ok(if !ls.activities.is_empty() {
        Level::Csa
    } else if !ls.others.is_empty() {
        Level::Cso
    } else {
        Level::Cs
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleViolation {
    pub rule_id: u8,
    pub subject: String,
    pub message: String,
}

impl fmt::Display for RuleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {} [{}]: {}", self.rule_id, self.subject, self.message)
    }
}

/// Registry ids the sanity rules refer to. A rule whose labels are absent
/// from a custom registry is skipped.
#[derive(Debug, Clone, Copy, Default)]
struct RuleLabels {
    pet: Option<LabelId>,
    alone: Option<LabelId>,
    couple: Option<LabelId>,
    sitting: Option<LabelId>,
    standing: Option<LabelId>,
    shopping: Option<LabelId>,
    street_vendors: Option<LabelId>,
    load_unload: Option<LabelId>,
    waiting_bus: Option<LabelId>,
}

#[derive(Debug, Clone)]
pub struct LabelRegistry {
    labels: Vec<Label>,
    lookup: HashMap<String, LabelId>,
    digest: String,
    rules: RuleLabels,
}

/// Lowercases and folds every run of non-alphanumerics into one underscore.
pub fn normalize_label_key(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.trim().chars() {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

impl LabelRegistry {
    /// The registry compiled into the crate.
    pub fn builtin() -> &'static LabelRegistry {
        static REGISTRY: OnceLock<LabelRegistry> = OnceLock::new();
        REGISTRY
            .get_or_init(|| LabelRegistry::parse(BUILTIN_REGISTRY.as_bytes()).expect("builtin label registry is valid"))
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut raw = Vec::new();
        let mut reader = reader;
        reader.read_to_end(&mut raw)?;
        let digest = hex::encode(Sha256::digest(&raw));

        let mut lines = JsonLines::new(raw.as_slice());
        let mut labels = Vec::new();
        while let Some(rec) = lines.next_record::<Label>() {
            let (_, label) = rec?;
            labels.push(label);
        }
        Self::from_labels(labels, digest)
    }

    fn from_labels(labels: Vec<Label>, digest: String) -> Result<Self> {
        if labels.len() > MAX_LABELS {
            return Err(Error::Registry(format!(
                "{} labels exceed the limit of {MAX_LABELS}",
                labels.len()
            )));
        }
        let mut lookup = HashMap::new();
        for (i, label) in labels.iter().enumerate() {
            let id = LabelId(i as u8);
            if label.id != normalize_label_key(&label.id) || label.id.is_empty() {
                return Err(Error::Registry(format!(
                    "label id `{}` is not in normalized form",
                    label.id
                )));
            }
            if lookup.insert(label.id.clone(), id).is_some() {
                return Err(Error::Registry(format!("duplicate label id `{}`", label.id)));
            }
        }
        // Aliases and display names are secondary keys; they must not shadow ids.
        for (i, label) in labels.iter().enumerate() {
            let id = LabelId(i as u8);
            let keys = label
                .aliases
                .iter()
                .map(|a| normalize_label_key(a))
                .chain(std::iter::once(normalize_label_key(&label.display_name)));
            for key in keys {
                match lookup.get(&key) {
                    Some(&existing) if existing != id => {
                        return Err(Error::Registry(format!(
                            "key `{key}` of `{}` collides with `{}`",
                            label.id,
                            labels[existing.index()].id
                        )))
                    }
                    Some(_) => {}
                    None => {
                        lookup.insert(key, id);
                    }
                }
            }
        }

        let mut reg = LabelRegistry {
            labels,
            lookup,
            digest,
            rules: RuleLabels::default(),
        };
        reg.rules = RuleLabels {
            pet: reg.id("pet"),
            alone: reg.id("alone"),
            couple: reg.id("couple"),
            sitting: reg.id("sitting"),
            standing: reg.id("standing"),
            shopping: reg.id("shopping"),
            street_vendors: reg.id("street_vendors"),
            load_unload: reg.id("load_unload_packages"),
            waiting_bus: reg.id("waiting_in_bus_station"),
        };
        Ok(reg)
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        jsonl::write_header(out, "label_registry")?;
        for label in &self.labels {
            jsonl::write_record(out, label)?;
        }
        Ok(())
    }

    /// SHA-256 of the bytes the registry was parsed from.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn count(&self, category: LabelCategory) -> usize {
        self.labels.iter().filter(|l| l.category == category).count()
    }

    pub fn label(&self, id: LabelId) -> &Label {
        &self.labels[id.index()]
    }

    /// Resolves an id, alias or display name.
    pub fn id(&self, name: &str) -> Option<LabelId> {
        self.lookup
            .get(name)
            .or_else(|| self.lookup.get(&normalize_label_key(name)))
            .copied()
    }

    pub fn resolve(&self, name: &str) -> Result<LabelId> {
        self.id(name).ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn category(&self, id: LabelId) -> LabelCategory {
        self.labels[id.index()].category
    }

    pub fn label_set<S: AsRef<str>>(&self, names: &[S]) -> Result<LabelSet> {
        let mut ls = LabelSet::default();
        for name in names {
            let id = self.resolve(name.as_ref())?;
            ls.field_mut(self.category(id)).insert(id);
        }
        Ok(ls)
    }

    /// Canonical id list: registry order.
    pub fn names(&self, ls: &LabelSet) -> Vec<&str> {
        ls.all().iter().map(|id| self.labels[id.index()].id.as_str()).collect()
    }

    pub fn describe(&self, ls: &LabelSet) -> String {
        self.names(ls).join("+")
    }

    /// Checks one label set against the nine annotation sanity rules.
    pub fn check_rules(&self, ls: &LabelSet, subject: &str) -> Vec<RuleViolation> {
        let r = &self.rules;
        let has = |id: Option<LabelId>| id.is_some_and(|id| ls.contains(id));
        let mut out = Vec::new();
        let mut push = |rule_id: u8, message: String| {
            out.push(RuleViolation {
                rule_id,
                subject: subject.to_string(),
                message,
            })
        };

        let is_pet = has(r.pet);
        if ls.conditions.is_empty() && !is_pet {
            push(1, "a condition label is required".into());
        }
        if ls.states.is_empty() && !is_pet {
            push(2, "at least one state label is required".into());
        }
        if ls.conditions.len() > 1 {
            push(
                3,
                format!(
                    "only one condition allowed, found {}",
                    self.describe_mask(ls.conditions)
                ),
            );
        }
        if has(r.alone) && ls.states.len() > 1 {
            push(
                4,
                format!("`alone` allows one state, found {}", self.describe_mask(ls.states)),
            );
        }
        if has(r.couple) && ls.states.len() > 2 {
            push(
                5,
                format!(
                    "`couple` allows at most two states, found {}",
                    self.describe_mask(ls.states)
                ),
            );
        }
        let stationary = has(r.sitting) || has(r.standing);
        let activity_rules = [
            (6u8, r.shopping),
            (7, r.street_vendors),
            (8, r.load_unload),
            (9, r.waiting_bus),
        ];
        for (rule_id, activity) in activity_rules {
            if has(activity) && !stationary {
                let name = &self.label(activity.unwrap()).id;
                push(rule_id, format!("`{name}` requires state `sitting` or `standing`"));
            }
        }
        out
    }

    fn describe_mask(&self, mask: LabelMask) -> String {
        mask.iter()
            .map(|id| self.labels[id.index()].id.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// One violation per broken sanity rule; empty iff the record is clean.
pub fn validate_annotation(record: &GroundTruthRecord, registry: &LabelRegistry) -> Vec<RuleViolation> {
    registry.check_rules(&record.labels, &record.id)
}
