//! Command implementations behind the `ovdeval` binary.
//!
//! Settings resolve as flags, then the `--config` TOML file, then built-in
//! defaults. Exit codes: 0 success, 1 internal error, 2 bad input or failed
//! validation.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ovdeval::ingest::{parse_ground_truth, write_prompt_catalog, write_token_maps, Validation};
use ovdeval::metrics::Slice;
use ovdeval::pipeline::{
    prepare, sweep_score_thr, Dataset, DatasetPaths, EvalParams, InputDigest, Method, SweepResult,
};
use ovdeval::promptgen::{
    builtin_templates, generate_prompts, parse_combinations, parse_templates, SynonymDictionary, DEFAULT_CAP_PER_COMBO,
};
use ovdeval::report::{evaluate, MetricsReport, RunMetadata};
use ovdeval::scoring::{ScoringMethod, TokenSelection};
use ovdeval::synth::{generate_scenario, ScenarioConfig};
use ovdeval::taxonomy::LabelRegistry;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// A problem with what the user supplied.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_err(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<InputError>() || cause.is::<toml::de::Error>() || cause.is::<clap::Error>() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<ovdeval::Error>() {
            return if e.is_input_error() { EXIT_INPUT } else { EXIT_INTERNAL };
        }
    }
    EXIT_INTERNAL
}

#[derive(Debug, Parser)]
#[command(
    name = "ovdeval",
    version,
    about = "Evaluate open-vocabulary detections on multi-label benchmarks"
)]
pub struct Cli {
    /// TOML file with defaults for any command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score, group, classify and report AP/F1.
    Eval(EvalArgs),
    /// Evaluate DBA over a grid of score windows and pick the best by F1.
    Sweep(SweepArgs),
    /// Check ground-truth annotations against the sanity rules.
    Validate(ValidateArgs),
    /// Generate a prompt catalog and token maps from label combinations.
    Prompts(PromptsArgs),
    /// Write a seeded synthetic scenario.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineArg {
    Dba,
    NmsAp,
    PlainAp,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceArg {
    Global,
    Cs,
    Csa,
    Cso,
    Alone,
    Pair,
    Group,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringArg {
    Nlse,
    Maxlogit,
    Native,
}

impl From<ScoringArg> for ScoringMethod {
    fn from(s: ScoringArg) -> Self {
        match s {
            ScoringArg::Nlse => ScoringMethod::Nlse,
            ScoringArg::Maxlogit => ScoringMethod::MaxLogit,
            ScoringArg::Native => ScoringMethod::Native,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long = "token-maps")]
    pub token_maps: Option<PathBuf>,
    /// Label registry replacing the bundled one.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scoring: Option<ScoringArg>,
    /// Feed every token, not only categorized ones, into N-LSE.
    #[arg(long = "all-tokens", num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub all_tokens: Option<bool>,
    #[arg(long = "conf-thr")]
    pub conf_thr: Option<f64>,
    #[arg(long = "group-iou")]
    pub group_iou: Option<f64>,
    #[arg(long = "iou-thr")]
    pub iou_thr: Option<f64>,
    #[arg(long = "nms-iou")]
    pub nms_iou: Option<f64>,
    #[arg(long = "dba-score-thr")]
    pub dba_score_thr: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Abort on the first sanity violation or degenerate box (default).
    #[arg(long, conflicts_with = "lenient")]
    #[serde(skip)]
    pub strict: bool,
    /// Report violations and skip degenerate prediction boxes.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub lenient: Option<bool>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub baseline: Vec<BaselineArg>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub slice: Vec<SliceArg>,
    /// Also write PR-curve points to curves.jsonl.
    #[arg(long)]
    pub curves: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated window widths; defaults to 0.00..=0.20 in 0.01 steps.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Write violations.jsonl here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PromptsArgs {
    /// JSONL of `{"labels": [...]}` combinations.
    #[arg(long)]
    pub combos: Option<PathBuf>,
    /// Take the distinct label sets of a ground-truth file instead.
    #[arg(long = "from-gt", conflicts_with = "combos")]
    pub from_gt: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long = "gt-per-image")]
    pub gt_per_image: Option<usize>,
    #[arg(long)]
    pub background: Option<usize>,
    #[arg(long = "duplicate-boxes")]
    pub duplicate_boxes: Option<f64>,
    #[arg(long = "disjoint-states-near-tie")]
    pub disjoint_states_near_tie: Option<f64>,
    #[arg(long = "inflated-max-logit")]
    pub inflated_max_logit: Option<f64>,
    #[arg(long = "suppressed-correct-under-wrong")]
    pub suppressed_correct_under_wrong: Option<f64>,
    #[arg(long)]
    pub missed: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Layout of the `--config` file. Each table mirrors a command's flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub synth: Option<ScenarioConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    #[serde(flatten)]
    pub input: InputArgs,
    pub baseline: Vec<BaselineArg>,
    pub slice: Vec<SliceArg>,
    pub curves: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    #[serde(flatten)]
    pub input: InputArgs,
    pub grid: Vec<f64>,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let cfg: ConfigFile = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    // Relative paths in the file are relative to the file.
    let base = path.parent().unwrap_or(Path::new(""));
    let mut cfg = cfg;
    for input in [&mut cfg.eval.input, &mut cfg.sweep.input] {
        for p in [
            &mut input.gt,
            &mut input.pred,
            &mut input.prompts,
            &mut input.token_maps,
            &mut input.labels,
            &mut input.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(cfg)
}

/// Flags win over the file.
fn merge(flags: &InputArgs, file: &InputArgs) -> InputArgs {
    fn pick<T: Clone>(a: &Option<T>, b: &Option<T>) -> Option<T> {
        a.clone().or_else(|| b.clone())
    }
    InputArgs {
        gt: pick(&flags.gt, &file.gt),
        pred: pick(&flags.pred, &file.pred),
        prompts: pick(&flags.prompts, &file.prompts),
        token_maps: pick(&flags.token_maps, &file.token_maps),
        labels: pick(&flags.labels, &file.labels),
        scoring: pick(&flags.scoring, &file.scoring),
        all_tokens: pick(&flags.all_tokens, &file.all_tokens),
        conf_thr: pick(&flags.conf_thr, &file.conf_thr),
        group_iou: pick(&flags.group_iou, &file.group_iou),
        iou_thr: pick(&flags.iou_thr, &file.iou_thr),
        nms_iou: pick(&flags.nms_iou, &file.nms_iou),
        dba_score_thr: pick(&flags.dba_score_thr, &file.dba_score_thr),
        workers: pick(&flags.workers, &file.workers),
        out: pick(&flags.out, &file.out),
        strict: flags.strict,
        lenient: if flags.strict {
            Some(false)
        } else {
            pick(&flags.lenient, &file.lenient)
        },
    }
}

/// Fully resolved settings for eval and sweep.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub paths: DatasetPaths,
    pub labels: Option<PathBuf>,
    pub params: EvalParams,
    pub validation: Validation,
    pub workers: usize,
    pub out: Option<PathBuf>,
}

fn resolve(input: InputArgs) -> anyhow::Result<RunConfig> {
    let need = |p: Option<PathBuf>, flag: &str| -> anyhow::Result<PathBuf> {
        let p = p.ok_or_else(|| input_err(format!("missing --{flag}")))?;
        if !p.is_file() {
            return Err(input_err(format!("--{flag}: {} does not exist", p.display())));
        }
        Ok(p)
    };
    let paths = DatasetPaths {
        ground_truth: need(input.gt, "gt")?,
        predictions: need(input.pred, "pred")?,
        prompts: need(input.prompts, "prompts")?,
        token_maps: need(input.token_maps, "token-maps")?,
    };
    let d = EvalParams::default();
    let params = EvalParams {
        scoring: input.scoring.map_or(d.scoring, Into::into),
        token_selection: if input.all_tokens.unwrap_or(false) {
            TokenSelection::All
        } else {
            TokenSelection::Relevant
        },
        conf_thr: input.conf_thr.unwrap_or(d.conf_thr),
        group_iou: input.group_iou.unwrap_or(d.group_iou),
        iou_thr: input.iou_thr.unwrap_or(d.iou_thr),
        nms_iou: input.nms_iou.unwrap_or(d.nms_iou),
        dba_score_thr: input.dba_score_thr.unwrap_or(d.dba_score_thr),
    };
    params.validate()?;
    let workers = match input.workers {
        Some(0) => return Err(input_err("--workers must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(RunConfig {
        paths,
        labels: input.labels,
        params,
        validation: if input.lenient.unwrap_or(false) {
            Validation::Lenient
        } else {
            Validation::Strict
        },
        workers,
        out: input.out,
    })
}

fn load_registry(path: Option<&Path>) -> anyhow::Result<LabelRegistry> {
    match path {
        None => Ok(LabelRegistry::builtin().clone()),
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening label registry {}", p.display()))?;
            Ok(LabelRegistry::parse(BufReader::new(f))?)
        }
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")?;
    Ok(pool.install(f))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load(cfg: &RunConfig) -> anyhow::Result<(Dataset, BTreeMap<String, InputDigest>)> {
    let registry = load_registry(cfg.labels.as_deref())?;
    Ok(Dataset::load(&cfg.paths, registry, cfg.validation, cfg.validation)?)
}

fn methods_of(sel: &[BaselineArg]) -> Vec<Method> {
    if sel.is_empty() || sel.contains(&BaselineArg::All) {
        return Method::ALL.to_vec();
    }
    Method::ALL
        .into_iter()
        .filter(|m| {
            sel.contains(&match m {
                Method::Dba => BaselineArg::Dba,
                Method::NmsAp => BaselineArg::NmsAp,
                Method::PlainAp => BaselineArg::PlainAp,
            })
        })
        .collect()
}

fn slices_of(sel: &[SliceArg]) -> Vec<Slice> {
    if sel.is_empty() || sel.contains(&SliceArg::All) {
        return Slice::ALL.to_vec();
    }
    Slice::ALL
        .into_iter()
        .filter(|s| sel.iter().any(|a| format!("{a:?}").to_lowercase() == s.name()))
        .collect()
}

pub fn cmd_eval(args: &EvalArgs, file: &ConfigFile, stdout: &mut dyn Write) -> anyhow::Result<MetricsReport> {
    let cfg = resolve(merge(&args.input, &file.eval.input))?;
    let methods = methods_of(if args.baseline.is_empty() {
        &file.eval.baseline
    } else {
        &args.baseline
    });
    let slices = slices_of(if args.slice.is_empty() {
        &file.eval.slice
    } else {
        &args.slice
    });
    let curves = args.curves || file.eval.curves.unwrap_or(false);
    let (dataset, digests) = load(&cfg)?;
    let evaluation = with_pool(cfg.workers, || -> ovdeval::Result<_> {
        let prepared = prepare(&dataset, &cfg.params)?;
        evaluate(&prepared, &cfg.params, &methods, &slices, digests)
    })??;
    let text = evaluation.report.to_text();
    stdout.write_all(text.as_bytes())?;
    if let Some(out) = &cfg.out {
        write_file(out, "report.json", evaluation.report.to_json()?.as_bytes())?;
        write_file(out, "report.txt", text.as_bytes())?;
        if curves {
            let mut buf = Vec::new();
            for c in &evaluation.curves {
                serde_json::to_writer(&mut buf, c)?;
                buf.push(b'\n');
            }
            write_file(out, "curves.jsonl", &buf)?;
        }
    }
    Ok(evaluation.report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutput {
    pub metadata: RunMetadata,
    #[serde(flatten)]
    pub result: SweepResult,
}

pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 100.0).collect()
}

pub fn cmd_sweep(args: &SweepArgs, file: &ConfigFile, stdout: &mut dyn Write) -> anyhow::Result<SweepOutput> {
    // [sweep] falls back to [eval] for anything it leaves unset.
    let cfg = resolve(merge(&args.input, &merge(&file.sweep.input, &file.eval.input)))?;
    let mut grid = if !args.grid.is_empty() {
        args.grid.clone()
    } else if !file.sweep.grid.is_empty() {
        file.sweep.grid.clone()
    } else {
        default_grid()
    };
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (dataset, digests) = load(&cfg)?;
    let (result, report) = with_pool(cfg.workers, || -> ovdeval::Result<_> {
        let prepared = prepare(&dataset, &cfg.params)?;
        let result = sweep_score_thr(&prepared, &cfg.params, &grid)?;
        let best = EvalParams {
            dba_score_thr: result.best_thr,
            ..cfg.params
        };
        let report = evaluate(&prepared, &best, &[Method::Dba], &[Slice::Global], digests)?;
        Ok((result, report.report))
    })??;
    let mut text = String::from("score_thr     tp     fp     fn  precision  recall      f1      ap\n");
    for r in &result.rows {
        text.push_str(&format!(
            "{:>9.4} {:>6} {:>6} {:>6} {:>10.4} {:>7.4} {:>7.4} {:>7.4}\n",
            r.score_thr, r.tp, r.fp, r.fn_, r.precision, r.recall, r.f1, r.ap
        ));
    }
    text.push_str(&format!(
        "best score_thr = {} (F1 {:.4})\n",
        result.best_thr, result.best_f1
    ));
    stdout.write_all(text.as_bytes())?;
    let output = SweepOutput {
        metadata: report.metadata,
        result,
    };
    if let Some(out) = &cfg.out {
        let mut json = serde_json::to_string_pretty(&output)?;
        json.push('\n');
        write_file(out, "sweep.json", json.as_bytes())?;
        write_file(out, "sweep.txt", text.as_bytes())?;
    }
    Ok(output)
}

/// Returns the number of violations found.
pub fn cmd_validate(args: &ValidateArgs, stdout: &mut dyn Write) -> anyhow::Result<usize> {
    let gt = args.gt.as_ref().ok_or_else(|| input_err("missing --gt"))?;
    let registry = load_registry(args.labels.as_deref())?;
    let f = File::open(gt).map_err(|e| input_err(format!("--gt: {}: {e}", gt.display())))?;
    let parsed = parse_ground_truth(BufReader::new(f), &registry, Validation::Lenient)?;
    for v in &parsed.violations {
        writeln!(stdout, "{v}")?;
    }
    writeln!(
        stdout,
        "{} record(s), {} violation(s)",
        parsed.records.len(),
        parsed.violations.len()
    )?;
    if let Some(out) = &args.out {
        let mut buf = Vec::new();
        for v in &parsed.violations {
            serde_json::to_writer(&mut buf, v)?;
            buf.push(b'\n');
        }
        write_file(out, "violations.jsonl", &buf)?;
    }
    Ok(parsed.violations.len())
}

pub fn cmd_prompts(args: &PromptsArgs, stdout: &mut dyn Write) -> anyhow::Result<usize> {
    let registry = load_registry(args.labels.as_deref())?;
    let open = |p: &Path| {
        File::open(p)
            .map(BufReader::new)
            .map_err(|e| input_err(format!("{}: {e}", p.display())))
    };
    let combos = match (&args.combos, &args.from_gt) {
        (Some(p), _) => parse_combinations(open(p)?, &registry)?,
        (None, Some(p)) => parse_ground_truth(open(p)?, &registry, Validation::Strict)?
            .records
            .into_iter()
            .map(|g| g.labels)
            .collect(),
        (None, None) => return Err(input_err("need --combos or --from-gt")),
    };
    let templates = match &args.templates {
        Some(p) => parse_templates(open(p)?)?,
        None => builtin_templates(),
    };
    let synonyms = match &args.synonyms {
        Some(p) => SynonymDictionary::parse(open(p)?, &registry)?,
        None => SynonymDictionary::builtin(&registry)?,
    };
    let cap = args.cap.unwrap_or(DEFAULT_CAP_PER_COMBO);
    let catalog = generate_prompts(&combos, &templates, &synonyms, &registry, cap)?;
    let out = args.out.as_ref().ok_or_else(|| input_err("missing --out"))?;
    let mut buf = Vec::new();
    write_prompt_catalog(&mut buf, &registry, &catalog.prompts)?;
    write_file(out, "prompts.jsonl", &buf)?;
    let mut buf = Vec::new();
    write_token_maps(&mut buf, &catalog.token_maps)?;
    write_file(out, "token_maps.jsonl", &buf)?;
    let groups = ovdeval::ingest::synonym_group_count(&catalog.prompts);
    writeln!(
        stdout,
        "{} prompt(s) in {} synonym group(s)",
        catalog.prompts.len(),
        groups
    )?;
    Ok(catalog.prompts.len())
}

pub fn cmd_synth(args: &SynthArgs, file: &ConfigFile, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let mut cfg = file.synth.clone().unwrap_or_default();
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.images {
        cfg.n_images = v;
    }
    if let Some(v) = args.gt_per_image {
        cfg.n_gt_per_image = v;
    }
    if let Some(v) = args.background {
        cfg.background_per_image = v;
    }
    let mix = &mut cfg.pathologies;
    for (flag, slot) in [
        (args.duplicate_boxes, &mut mix.duplicate_boxes),
        (args.disjoint_states_near_tie, &mut mix.disjoint_states_near_tie),
        (args.inflated_max_logit, &mut mix.inflated_max_logit),
        (
            args.suppressed_correct_under_wrong,
            &mut mix.suppressed_correct_under_wrong,
        ),
        (args.missed, &mut mix.missed),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    let out = args.out.as_ref().ok_or_else(|| input_err("missing --out"))?;
    let scenario = generate_scenario(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    scenario.write_to_dir(out)?;
    let mut toml_text = toml::to_string(&BTreeMap::from([("synth", &cfg)]))?;
    toml_text.insert_str(
        0,
        "# Regenerate with: ovdeval --config scenario.toml synth --out <dir>\n",
    );
    write_file(out, "scenario.toml", toml_text.as_bytes())?;
    writeln!(
        stdout,
        "{} image(s), {} ground truth, {} prediction(s), {} prompt(s)",
        scenario.config.n_images,
        scenario.ground_truth.len(),
        scenario.predictions.len(),
        scenario.prompts.len()
    )?;
    Ok(())
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = (|| -> anyhow::Result<i32> {
        let file = load_config(cli.config.as_deref())?;
        match &cli.command {
            Command::Eval(a) => cmd_eval(a, &file, stdout).map(|_| EXIT_OK),
            Command::Sweep(a) => cmd_sweep(a, &file, stdout).map(|_| EXIT_OK),
            Command::Validate(a) => cmd_validate(a, stdout).map(|n| if n == 0 { EXIT_OK } else { EXIT_INPUT }),
            Command::Prompts(a) => cmd_prompts(a, stdout).map(|_| EXIT_OK),
            Command::Synth(a) => cmd_synth(a, &file, stdout).map(|_| EXIT_OK),
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            exit_code(&e)
        }
    }
}
