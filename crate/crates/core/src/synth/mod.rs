//! Seeded synthetic scenarios with tagged pathologies.
//!
//! Every ground truth gets one planted outcome: a clean detection, a miss, or
//! one of the pathologies below. Each planted instance is written to a truth
//! sidecar naming the predictions involved and their roles. Output uses the
//! ordinary ingest formats.

pub mod oracle;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::ingest::{
    write_ground_truth, write_predictions, write_prompt_catalog, write_token_maps, GroundTruthRecord, PredictionRecord,
    PromptEntry, TokenMap,
};
use crate::pipeline::Dataset;
use crate::promptgen::{builtin_templates, generate_prompts, SynonymDictionary};
use crate::taxonomy::{LabelRegistry, LabelSet};

const IMAGE_SIZE: f64 = 1000.0;
const CONDITIONS: [&str; 3] = ["alone", "couple", "group"];
const STATES: [&str; 4] = ["sitting", "standing", "walking", "running"];
const EXTRAS: [&str; 6] = ["", "talking", "dining", "hugging", "kid", "with_bike"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathologyMix {
    /// Extra near-identical boxes from the same synonym group.
    pub duplicate_boxes: f64,
    /// The correct box plus a near-tied box whose state conflicts.
    pub disjoint_states_near_tie: f64,
    /// The correct box plus a wrong-label box with one spiking token.
    pub inflated_max_logit: f64,
    /// A wrong-label box just above the correct one.
    pub suppressed_correct_under_wrong: f64,
    /// No prediction at all.
    pub missed: f64,
}

impl PathologyMix {
    fn fractions(&self) -> [(Pathology, f64); 5] {
        [
            (Pathology::DuplicateBoxes, self.duplicate_boxes),
            (Pathology::DisjointStatesNearTie, self.disjoint_states_near_tie),
            (Pathology::InflatedMaxLogit, self.inflated_max_logit),
            (
                Pathology::SuppressedCorrectUnderWrong,
                self.suppressed_correct_under_wrong,
            ),
            (Pathology::Missed, self.missed),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_images: usize,
    /// Each image gets between 1 and this many ground truths.
    pub n_gt_per_image: usize,
    pub pathologies: PathologyMix,
    /// Unrelated boxes per image with spiky logits.
    pub background_per_image: usize,
    /// Corner jitter of a detection, as a fraction of the box size.
    pub box_jitter: f64,
    /// Spread of relevant-token logits around a clean box's target score.
    pub logit_jitter: f64,
    /// Upper bound for uncategorized-token logits.
    pub irrelevant_logit_max: f64,
    /// Score gap inside near-tie pathologies.
    pub near_tie_gap: f64,
    /// Place ground truths anywhere instead of one per grid cell.
    pub overlap_gts: bool,
    pub prompts_per_combo: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_images: 10,
            n_gt_per_image: 4,
            pathologies: PathologyMix::default(),
            background_per_image: 0,
            box_jitter: 0.02,
            logit_jitter: 0.05,
            irrelevant_logit_max: 0.3,
            near_tie_gap: 0.03,
            overlap_gts: false,
            prompts_per_combo: 3,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("scenario: {what}")));
        let mut sum = 0.0;
        for (p, f) in self.pathologies.fractions() {
            if !(0.0..=1.0).contains(&f) {
                return bad(&format!("fraction for {p:?} is outside [0, 1]"));
            }
            sum += f;
        }
        if sum > 1.0 + 1e-12 {
            return bad("pathology fractions sum above 1");
        }
        if self.n_gt_per_image == 0 {
            return bad("n_gt_per_image must be at least 1");
        }
        if !(0.0..=0.1).contains(&self.box_jitter) {
            return bad("box_jitter must be in [0, 0.1]");
        }
        if !(0.0..=0.2).contains(&self.logit_jitter) || !(0.0..=1.0).contains(&self.irrelevant_logit_max) {
            return bad("logit noise out of range");
        }
        if !(0.0..=0.2).contains(&self.near_tie_gap) {
            return bad("near_tie_gap must be in [0, 0.2]");
        }
        if self.prompts_per_combo == 0 {
            return bad("prompts_per_combo must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pathology {
    Clean,
    Missed,
    DuplicateBoxes,
    DisjointStatesNearTie,
    InflatedMaxLogit,
    SuppressedCorrectUnderWrong,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Right place, labels equal to the ground truth.
    Correct,
    /// Same place and labels as a correct box, slightly lower score.
    Duplicate,
    /// Same place, conflicting state.
    Disjoint,
    /// Same place, labels not a subset of the ground truth.
    Wrong,
    /// Wrong labels; high Max-Logit, low N-LSE.
    Inflated,
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPrediction {
    /// Position in the prediction file.
    pub index: usize,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub image_id: String,
    /// Absent for background boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_id: Option<String>,
    pub pathology: Pathology,
    pub predictions: Vec<TruthPrediction>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub ground_truth: Vec<GroundTruthRecord>,
    pub predictions: Vec<PredictionRecord>,
    pub prompts: Vec<PromptEntry>,
    pub token_maps: Vec<TokenMap>,
    pub truth: Vec<TruthRecord>,
}

/// The label combinations scenarios draw from; closed under swapping the
/// state, so a conflicting twin always exists.
pub fn scenario_combinations(registry: &LabelRegistry) -> Result<Vec<LabelSet>> {
    let mut out = Vec::new();
    for c in CONDITIONS {
        for s in STATES {
            for e in EXTRAS {
                let mut names = vec![c, s];
                if !e.is_empty() {
                    names.push(e);
                }
                out.push(registry.label_set(&names)?);
            }
        }
    }
    Ok(out)
}

struct Catalog {
    combos: Vec<LabelSet>,
    /// Prompt ordinals per combination.
    by_combo: Vec<Vec<usize>>,
}

impl Catalog {
    fn index_of(&self, ls: &LabelSet) -> usize {
        self.combos.iter().position(|c| c == ls).expect("combination in pool")
    }
}

struct Builder<'a> {
    cfg: &'a ScenarioConfig,
    rng: ChaCha8Rng,
    prompts: &'a [PromptEntry],
    maps: &'a [TokenMap],
    catalog: Catalog,
    registry: &'a LabelRegistry,
    predictions: Vec<PredictionRecord>,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn clamp_box(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    let x1 = round2(x1.clamp(0.0, IMAGE_SIZE - 1.0));
    let y1 = round2(y1.clamp(0.0, IMAGE_SIZE - 1.0));
    let x2 = round2(x2.clamp(x1 + 1.0, IMAGE_SIZE));
    let y2 = round2(y2.clamp(y1 + 1.0, IMAGE_SIZE));
    BBox::new(x1, y1, x2, y2).expect("clamped box has positive extent")
}

impl Builder<'_> {
    fn jitter(&mut self, b: &BBox, frac: f64) -> BBox {
        let (w, h) = (b.x2 - b.x1, b.y2 - b.y1);
        let mut d = |s: f64| {
            if frac == 0.0 {
                0.0
            } else {
                self.rng.gen_range(-frac..=frac) * s
            }
        };
        let (dx1, dy1, dx2, dy2) = (d(w), d(h), d(w), d(h));
        clamp_box(b.x1 + dx1, b.y1 + dy1, b.x2 + dx2, b.y2 + dy2)
    }

    fn pick_prompt(&mut self, ls: &LabelSet) -> usize {
        let c = self.catalog.index_of(ls);
        let options = &self.catalog.by_combo[c];
        options[self.rng.gen_range(0..options.len())]
    }

    /// Prefers a prompt with an uncategorized token for the spike to land on.
    fn pick_prompt_spare(&mut self, ls: &LabelSet) -> usize {
        let c = self.catalog.index_of(ls);
        let maps = self.maps;
        let options: Vec<usize> = self.catalog.by_combo[c]
            .iter()
            .copied()
            .filter(|&p| maps[p].entries.iter().any(|e| e.category.is_none()))
            .collect();
        if options.is_empty() {
            return self.pick_prompt(ls);
        }
        options[self.rng.gen_range(0..options.len())]
    }

    /// Logits whose N-LSE over the relevant tokens is `score` when `spread`
    /// is zero, and close to it otherwise.
    fn logits(&mut self, prompt: usize, score: f64, spread: f64) -> Vec<f64> {
        let map = &self.maps[prompt];
        let irr = self.cfg.irrelevant_logit_max;
        let mut out = Vec::with_capacity(map.len());
        for e in &map.entries {
            let v = if e.category.is_some() {
                if spread > 0.0 {
                    score + self.rng.gen_range(-spread..=spread)
                } else {
                    score
                }
            } else if irr > 0.0 {
                self.rng.gen_range(0.0..irr)
            } else {
                0.0
            };
            out.push(v.clamp(0.0, 1.0));
        }
        out
    }

    /// Low relevant logits with one uncategorized token spiking.
    fn spiky_logits(&mut self, prompt: usize) -> Vec<f64> {
        let map = &self.maps[prompt];
        let spare: Vec<usize> = map
            .entries
            .iter()
            .filter(|e| e.category.is_none())
            .map(|e| e.token_index)
            .collect();
        let spike = if spare.is_empty() {
            self.rng.gen_range(0..map.len())
        } else {
            spare[self.rng.gen_range(0..spare.len())]
        };
        (0..map.len())
            .map(|i| {
                if i == spike {
                    self.rng.gen_range(0.85..1.0)
                } else {
                    self.rng.gen_range(0.0..0.2)
                }
            })
            .collect()
    }

    fn push(&mut self, image_id: &str, prompt: usize, bbox: BBox, logits: Vec<f64>) -> usize {
        self.predictions.push(PredictionRecord {
            image_id: image_id.to_string(),
            prompt_id: self.prompts[prompt].prompt_id.clone(),
            bbox,
            token_logits: logits,
            native_score: None,
        });
        self.predictions.len() - 1
    }

    fn swapped_state(&mut self, ls: &LabelSet) -> LabelSet {
        let reg = self.registry;
        let names = reg.names(ls);
        let current: Vec<&str> = names.iter().copied().filter(|n| STATES.contains(n)).collect();
        let others: Vec<&str> = STATES.iter().copied().filter(|s| !current.contains(s)).collect();
        let new_state = others[self.rng.gen_range(0..others.len())];
        let swapped: Vec<&str> = names
            .iter()
            .map(|n| if STATES.contains(n) { new_state } else { n })
            .collect();
        reg.label_set(&swapped).expect("pool labels resolve")
    }

    /// Same condition and state, a different extra label.
    fn wrong_extra(&mut self, ls: &LabelSet) -> LabelSet {
        let reg = self.registry;
        let names = reg.names(ls);
        let base: Vec<&str> = names
            .iter()
            .copied()
            .filter(|n| CONDITIONS.contains(n) || STATES.contains(n))
            .collect();
        let current = names.iter().copied().find(|n| EXTRAS[1..].contains(n));
        let choices: Vec<&str> = EXTRAS[1..].iter().copied().filter(|e| Some(*e) != current).collect();
        let mut out = base;
        out.push(choices[self.rng.gen_range(0..choices.len())]);
        reg.label_set(&out).expect("pool labels resolve")
    }
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let registry = LabelRegistry::builtin();
    let combos = scenario_combinations(registry)?;
    let synonyms = SynonymDictionary::builtin(registry)?;
    let catalog = generate_prompts(
        &combos,
        &builtin_templates(),
        &synonyms,
        registry,
        cfg.prompts_per_combo,
    )?;
    let mut by_combo = vec![Vec::new(); combos.len()];
    for (i, p) in catalog.prompts.iter().enumerate() {
        let c = combos.iter().position(|c| *c == p.label_set).expect("prompt from pool");
        by_combo[c].push(i);
    }

    let mut b = Builder {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        prompts: &catalog.prompts,
        maps: &catalog.token_maps,
        catalog: Catalog {
            combos: combos.clone(),
            by_combo,
        },
        registry,
        predictions: Vec::new(),
    };
    let mut ground_truth = Vec::new();
    let mut truth = Vec::new();
    let width = (cfg.n_images.max(1) - 1).to_string().len();

    for img in 0..cfg.n_images {
        let image_id = format!("img{img:0width$}");
        let n_gt = b.rng.gen_range(1..=cfg.n_gt_per_image);
        let cells = (n_gt as f64).sqrt().ceil() as usize;
        let cell = IMAGE_SIZE / cells as f64;
        for k in 0..n_gt {
            let bbox = if cfg.overlap_gts {
                let w = b.rng.gen_range(60.0..220.0);
                let h = b.rng.gen_range(60.0..220.0);
                let x = b.rng.gen_range(0.0..IMAGE_SIZE - w);
                let y = b.rng.gen_range(0.0..IMAGE_SIZE - h);
                clamp_box(x, y, x + w, y + h)
            } else {
                let (cx, cy) = ((k % cells) as f64 * cell, (k / cells) as f64 * cell);
                let w = b.rng.gen_range(0.4..0.8) * cell;
                let h = b.rng.gen_range(0.4..0.8) * cell;
                let x = cx + b.rng.gen_range(0.05 * cell..cell - w - 0.05 * cell);
                let y = cy + b.rng.gen_range(0.05 * cell..cell - h - 0.05 * cell);
                clamp_box(x, y, x + w, y + h)
            };
            let labels = combos[b.rng.gen_range(0..combos.len())];
            let gt_id = format!("{image_id}-g{k}");
            ground_truth.push(GroundTruthRecord {
                id: gt_id.clone(),
                image_id: image_id.clone(),
                bbox,
                labels,
            });

            let u: f64 = b.rng.gen();
            let mut acc = 0.0;
            let mut pathology = Pathology::Clean;
            for (p, f) in cfg.pathologies.fractions() {
                acc += f;
                if u < acc {
                    pathology = p;
                    break;
                }
            }

            let mut planted = Vec::new();
            let main_box = b.jitter(&bbox, cfg.box_jitter);
            let score = b.rng.gen_range(0.45..0.95);
            let gap = cfg.near_tie_gap;
            match pathology {
                Pathology::Missed | Pathology::Background => {}
                Pathology::Clean => {
                    let p = b.pick_prompt(&labels);
                    let z = b.logits(p, score, cfg.logit_jitter);
                    planted.push((b.push(&image_id, p, main_box, z), Role::Correct));
                }
                Pathology::DuplicateBoxes => {
                    let p = b.pick_prompt(&labels);
                    let z = b.logits(p, score, 0.0);
                    planted.push((b.push(&image_id, p, main_box, z), Role::Correct));
                    let n_dup = b.rng.gen_range(1..=3);
                    for _ in 0..n_dup {
                        let q = b.pick_prompt(&labels);
                        let s = score - b.rng.gen_range(0.0..=gap);
                        let bx = b.jitter(&main_box, 0.01);
                        let z = b.logits(q, s, 0.0);
                        planted.push((b.push(&image_id, q, bx, z), Role::Duplicate));
                    }
                }
                Pathology::DisjointStatesNearTie => {
                    let p = b.pick_prompt(&labels);
                    let z = b.logits(p, score, 0.0);
                    planted.push((b.push(&image_id, p, main_box, z), Role::Correct));
                    let twin = b.swapped_state(&labels);
                    let q = b.pick_prompt(&twin);
                    let s = score + b.rng.gen_range(-gap..=gap);
                    let bx = b.jitter(&main_box, 0.01);
                    let z = b.logits(q, s, 0.0);
                    planted.push((b.push(&image_id, q, bx, z), Role::Disjoint));
                }
                Pathology::InflatedMaxLogit => {
                    let p = b.pick_prompt(&labels);
                    let z = b.logits(p, score, cfg.logit_jitter);
                    planted.push((b.push(&image_id, p, main_box, z), Role::Correct));
                    let twin = b.swapped_state(&labels);
                    let q = b.pick_prompt_spare(&twin);
                    let bx = b.jitter(&main_box, 0.01);
                    let z = b.spiky_logits(q);
                    planted.push((b.push(&image_id, q, bx, z), Role::Inflated));
                }
                Pathology::SuppressedCorrectUnderWrong => {
                    let wrong = b.wrong_extra(&labels);
                    let q = b.pick_prompt(&wrong);
                    let z = b.logits(q, score, 0.0);
                    planted.push((b.push(&image_id, q, main_box, z), Role::Wrong));
                    let p = b.pick_prompt(&labels);
                    let s = score - gap.max(1e-3) * b.rng.gen_range(0.5..=1.0);
                    let bx = b.jitter(&main_box, 0.01);
                    let z = b.logits(p, s, 0.0);
                    planted.push((b.push(&image_id, p, bx, z), Role::Correct));
                }
            }
            truth.push(TruthRecord {
                image_id: image_id.clone(),
                gt_id: Some(gt_id),
                pathology,
                predictions: planted
                    .into_iter()
                    .map(|(index, role)| TruthPrediction { index, role })
                    .collect(),
            });
        }

        for _ in 0..cfg.background_per_image {
            let w = b.rng.gen_range(30.0..200.0);
            let h = b.rng.gen_range(30.0..200.0);
            let x = b.rng.gen_range(0.0..IMAGE_SIZE - w);
            let y = b.rng.gen_range(0.0..IMAGE_SIZE - h);
            let p = b.rng.gen_range(0..catalog.prompts.len());
            let z = b.spiky_logits(p);
            let index = b.push(&image_id, p, clamp_box(x, y, x + w, y + h), z);
            truth.push(TruthRecord {
                image_id: image_id.clone(),
                gt_id: None,
                pathology: Pathology::Background,
                predictions: vec![TruthPrediction {
                    index,
                    role: Role::Background,
                }],
            });
        }
    }

    let predictions = b.predictions;
    Ok(Scenario {
        config: cfg.clone(),
        ground_truth,
        predictions,
        prompts: catalog.prompts,
        token_maps: catalog.token_maps,
        truth,
    })
}

pub const GT_FILE: &str = "gt.jsonl";
pub const PRED_FILE: &str = "predictions.jsonl";
pub const PROMPT_FILE: &str = "prompts.jsonl";
pub const TOKEN_MAP_FILE: &str = "token_maps.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";

impl Scenario {
    pub fn dataset(&self) -> Dataset {
        Dataset {
            registry: LabelRegistry::builtin().clone(),
            prompts: self.prompts.clone(),
            token_maps: self
                .token_maps
                .iter()
                .map(|m| (m.prompt_id.clone(), m.clone()))
                .collect::<BTreeMap<_, _>>(),
            ground_truth: self.ground_truth.clone(),
            predictions: self.predictions.clone(),
        }
    }

    pub fn write_truth<W: Write>(&self, out: &mut W) -> Result<()> {
        crate::jsonl::write_header(out, "scenario_truth")?;
        for t in &self.truth {
            crate::jsonl::write_record(out, t)?;
        }
        Ok(())
    }

    /// Writes the five files into `dir`, which must exist.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        let registry = LabelRegistry::builtin();
        let open = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        let mut f = open(GT_FILE)?;
        write_ground_truth(&mut f, registry, &self.ground_truth)?;
        f.flush()?;
        let mut f = open(PRED_FILE)?;
        write_predictions(&mut f, &self.predictions)?;
        f.flush()?;
        let mut f = open(PROMPT_FILE)?;
        write_prompt_catalog(&mut f, registry, &self.prompts)?;
        f.flush()?;
        let mut f = open(TOKEN_MAP_FILE)?;
        write_token_maps(&mut f, &self.token_maps)?;
        f.flush()?;
        let mut f = open(TRUTH_FILE)?;
        self.write_truth(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Predictions with the given role, by file position.
    pub fn with_role(&self, role: Role) -> Vec<usize> {
        self.truth
            .iter()
            .flat_map(|t| t.predictions.iter())
            .filter(|p| p.role == role)
            .map(|p| p.index)
            .collect()
    }
}
