//! Acceptance criteria, run sequentially so timings are not skewed by
//! parallel tests. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. Pass a substring (e.g. `AC6`) to run a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, Read};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use ovdeval::dba::{EvalLedger, FpReason, TpEntry};
use ovdeval::geometry::BBox;
use ovdeval::ingest::{
    write_prediction, write_predictions_header, GroundTruthRecord, PredictionReader, PredictionRecord, Validation,
};
use ovdeval::metrics::{average_precision, Slice};
use ovdeval::pipeline::{prepare, Dataset, DatasetPaths, EvalParams, Method, StreamingEvaluator};
use ovdeval::scoring::{max_logit, n_lse, ScoringMethod};
use ovdeval::synth::oracle::{brute_force_ap, oracle_metrics};
use ovdeval::synth::{generate_scenario, PathologyMix, ScenarioConfig};
use ovdeval::taxonomy::LabelRegistry;

// Tolerances and budgets.
const AC1_VECTORS: usize = 10_000;
const AC1_SHIFT_TOL: f64 = 1e-12;
const AC1_BUDGET: Duration = Duration::from_secs(5);
const AC1_STATED: f64 = 0.578155;
const AC1_STATED_TOL: f64 = 1e-6;
/// N-LSE([0.9, 0.1]) evaluated with mpmath at 50 significant digits.
const AC1_MPMATH: f64 = 0.5779534853878324;
const AC1_ORACLE_TOL: f64 = 1e-15;
const AC2_THR: f64 = 0.3;
const AC2_MIN_RATIO: f64 = 2.0;
const AC5_SEEDS: u64 = 50;
const AC6_SCENARIOS: u64 = 200;
const AC6_MAX_BOXES: usize = 500;
const AC6_AP_TOL: f64 = 1e-12;
const AC6_BUDGET: Duration = Duration::from_secs(120);
const AC7_TOL: f64 = 1e-9;
const AC10_RECORDS: usize = 10_000_000;
const AC10_BUDGET: Duration = Duration::from_secs(120);
const AC10_PEAK_BYTES: u64 = 4 << 30;

type Criterion = (&'static str, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ovdeval").chain(args.iter().copied());
    let code = ovdeval_cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8_lossy(&out).into_owned() + &String::from_utf8_lossy(&err),
    )
}

fn eval_args<'a>(dir: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<String> {
    let mut v: Vec<String> = vec!["eval".into()];
    for (flag, file) in [
        ("--gt", "gt.jsonl"),
        ("--pred", "predictions.jsonl"),
        ("--prompts", "prompts.jsonl"),
        ("--token-maps", "token_maps.jsonl"),
    ] {
        v.push(flag.into());
        v.push(format!("{dir}/{file}"));
    }
    v.push("--out".into());
    v.push(out.into());
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run_eval(dir: &Path, out: &Path, extra: &[&str]) -> (i32, String) {
    let (d, o) = (dir.display().to_string(), out.display().to_string());
    let args = eval_args(&d, &o, extra);
    cli(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn report_rows(out: &Path) -> Vec<Value> {
    let text = fs::read_to_string(out.join("report.json")).expect("report.json");
    let v: Value = serde_json::from_str(&text).expect("report json");
    v["rows"].as_array().cloned().unwrap_or_default()
}

fn row<'a>(rows: &'a [Value], method: &str, slice: &str) -> &'a Value {
    rows.iter()
        .find(|r| r["method"] == method && r["slice"] == slice)
        .unwrap_or_else(|| panic!("no row {method}/{slice}"))
}

fn load(dir: &Path) -> Dataset {
    let paths = DatasetPaths {
        ground_truth: dir.join("gt.jsonl"),
        predictions: dir.join("predictions.jsonl"),
        prompts: dir.join("prompts.jsonl"),
        token_maps: dir.join("token_maps.jsonl"),
    };
    Dataset::load(
        &paths,
        LabelRegistry::builtin().clone(),
        Validation::Strict,
        Validation::Strict,
    )
    .expect("fixture loads")
    .0
}

// ---------------------------------------------------------------------------

fn ac1_algebra() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_shift = 0.0f64;
    let mut bad = Vec::new();
    for i in 0..AC1_VECTORS {
        let len = rng.gen_range(1..=64);
        let z: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
        let v = n_lse(&z).unwrap();
        let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = max_logit(&z).unwrap();
        if !(lo <= v && v <= hi) {
            bad.push(format!("vector {i}: {v} outside [{lo}, {hi}]"));
        }
        let c: f64 = rng.gen_range(-10.0..10.0);
        let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
        worst_shift = worst_shift.max((n_lse(&shifted).unwrap() - (v + c)).abs());
    }
    let t = start.elapsed();
    let pass = bad.is_empty() && worst_shift <= AC1_SHIFT_TOL && t < AC1_BUDGET;
    let mut detail = format!(
        "{AC1_VECTORS} vectors, bound violations {}, max shift error {worst_shift:.2e} (tol {AC1_SHIFT_TOL:.0e}), {:.2} s (limit {} s)",
        bad.len(),
        t.as_secs_f64(),
        AC1_BUDGET.as_secs()
    );
    if let Some(b) = bad.first() {
        detail.push_str(&format!("; first: {b}"));
    }
    verdict(pass, detail)
}

fn ac1_constant() -> Verdict {
    let v = n_lse(&[0.9, 0.1]).unwrap();
    // Independent closed form: 0.9 + ln((1 + e^-0.8) / 2).
    let closed = 0.9 + ((-0.8f64).exp().ln_1p() - std::f64::consts::LN_2);
    let oracle_ok = (v - AC1_MPMATH).abs() <= AC1_ORACLE_TOL && (closed - AC1_MPMATH).abs() <= AC1_ORACLE_TOL;
    let stated_ok = (v - AC1_STATED).abs() <= AC1_STATED_TOL;
    verdict(
        oracle_ok && stated_ok,
        format!(
            "N-LSE([0.9,0.1]) = {v:.16}; high-precision reference {AC1_MPMATH:.16} (|d| = {:.1e}); \
             stated {AC1_STATED} +/- {AC1_STATED_TOL:.0e} (|d| = {:.2e})",
            (v - AC1_MPMATH).abs(),
            (v - AC1_STATED).abs()
        ),
    )
}

fn ac2_selectivity() -> Verdict {
    let ds = load(&fixtures().join("selectivity"));
    let count = |scoring| {
        let p = EvalParams {
            scoring,
            conf_thr: AC2_THR,
            ..Default::default()
        };
        prepare(&ds, &p).unwrap().n_retained
    };
    let (ml, nl) = (count(ScoringMethod::MaxLogit), count(ScoringMethod::Nlse));
    let ratio = ml as f64 / nl.max(1) as f64;
    verdict(
        ml > nl && nl > 0 && ratio >= AC2_MIN_RATIO,
        format!(
            "{} boxes, passing {AC2_THR}: Max-Logit {ml}, N-LSE {nl}, ratio {ratio:.2} (need >= {AC2_MIN_RATIO})",
            ds.predictions.len()
        ),
    )
}

fn ac3_disjoint() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let (code, msg) = run_eval(&fixtures().join("near_tie"), tmp.path(), &["--slice", "global"]);
    if code != 0 {
        return verdict(false, format!("eval exited {code}: {msg}"));
    }
    let rows = report_rows(tmp.path());
    let dba = row(&rows, "dba", "global");
    let plain = row(&rows, "plain-ap", "global");
    let n = |v: &Value, k: &str| v[k].as_u64().unwrap();
    let disjoint = dba["fp_reasons"]["Disjoint"].as_u64().unwrap();
    let pass = n(dba, "tp") == 0 && n(dba, "fp") == 3 && disjoint == 3 && n(plain, "tp") == 1;
    verdict(
        pass,
        format!(
            "DBA tp {} fp {} (Disjoint {disjoint}); plain tp {} (need 0 / 3 / 3; 1)",
            n(dba, "tp"),
            n(dba, "fp"),
            n(plain, "tp")
        ),
    )
}

fn ac4_recovery() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let (code, msg) = run_eval(&fixtures().join("suppressed"), tmp.path(), &["--slice", "global"]);
    if code != 0 {
        return verdict(false, format!("eval exited {code}: {msg}"));
    }
    let rows = report_rows(tmp.path());
    let ap = |m| row(&rows, m, "global")["ap"].as_f64().unwrap();
    let (nms, dba) = (ap("nms-ap"), ap("dba"));
    verdict(
        nms == 0.0 && dba > 0.0,
        format!("NMS-AP {nms}, DBA-AP {dba:.4} (need = 0 and > 0)"),
    )
}

fn ac5_deflation() -> Verdict {
    let params = EvalParams::default();
    let mut violations = Vec::new();
    let mut strictly_lower = 0;
    for seed in 0..AC5_SEEDS {
        let s = generate_scenario(&ScenarioConfig {
            seed: 500 + seed,
            n_images: 10,
            pathologies: PathologyMix {
                duplicate_boxes: 0.6,
                ..Default::default()
            },
            ..Default::default()
        })
        .unwrap();
        let prepared = prepare(&s.dataset(), &params).unwrap();
        let m = prepared.membership(Slice::Global);
        let ap = |method| average_precision(&prepared.evaluate(&m, method, &params)).ap;
        let (dba, nms) = (ap(Method::Dba), ap(Method::NmsAp));
        if dba > nms {
            violations.push(format!("seed {}: {dba:.4} > {nms:.4}", 500 + seed));
        }
        if dba < nms {
            strictly_lower += 1;
        }
    }
    verdict(
        violations.is_empty(),
        format!(
            "{AC5_SEEDS} duplicate-box scenarios: DBA-AP <= NMS-AP in {}, strictly lower in {strictly_lower}{}",
            AC5_SEEDS as usize - violations.len(),
            violations
                .first()
                .map(|v| format!("; first violation {v}"))
                .unwrap_or_default()
        ),
    )
}

fn ac6_oracle() -> Verdict {
    let start = Instant::now();
    let variants = [
        EvalParams::default(),
        EvalParams {
            scoring: ScoringMethod::MaxLogit,
            ..Default::default()
        },
        EvalParams {
            dba_score_thr: 0.2,
            group_iou: 0.7,
            iou_thr: 0.6,
            nms_iou: 0.3,
            ..Default::default()
        },
        EvalParams {
            conf_thr: 0.0,
            dba_score_thr: 0.0,
            ..Default::default()
        },
    ];
    let mut mismatches = Vec::new();
    let mut max_boxes = 0;
    let mut worst_ap = 0.0f64;
    for seed in 0..AC6_SCENARIOS {
        let cfg = ScenarioConfig {
            seed: 6000 + seed,
            n_images: 8,
            n_gt_per_image: 6,
            pathologies: PathologyMix {
                duplicate_boxes: 0.2,
                disjoint_states_near_tie: 0.15,
                inflated_max_logit: 0.15,
                suppressed_correct_under_wrong: 0.15,
                missed: 0.1,
            },
            background_per_image: 4,
            overlap_gts: seed % 2 == 1,
            ..Default::default()
        };
        let ds = generate_scenario(&cfg).unwrap().dataset();
        max_boxes = max_boxes.max(ds.ground_truth.len() + ds.predictions.len());
        let params = &variants[seed as usize % variants.len()];
        let prepared = prepare(&ds, params).unwrap();
        let m = prepared.membership(Slice::Global);
        let oracle = oracle_metrics(&ds, params, &Method::ALL).unwrap();
        for method in Method::ALL {
            let l = prepared.evaluate(&m, method, params);
            let o = &oracle.outcomes[&method];
            let tp: BTreeSet<(usize, usize)> = l.tp.iter().map(|t| (t.pred, t.gt)).collect();
            let fp: BTreeSet<usize> = l.fp.iter().map(|f| f.pred).collect();
            let fn_: BTreeSet<usize> = l.fn_.iter().copied().collect();
            let d = (average_precision(&l).ap - o.ap).abs();
            worst_ap = worst_ap.max(d);
            if tp != o.tp || fp != o.fp || fn_ != o.fn_ || d > AC6_AP_TOL {
                mismatches.push(format!("seed {} {method}", cfg.seed));
            }
        }
    }
    let t = start.elapsed();
    verdict(
        mismatches.is_empty() && max_boxes <= AC6_MAX_BOXES && t < AC6_BUDGET,
        format!(
            "{AC6_SCENARIOS} scenarios x 3 methods, set mismatches {}, max |dAP| {worst_ap:.1e} (tol {AC6_AP_TOL:.0e}), \
             largest scenario {max_boxes} boxes (limit {AC6_MAX_BOXES}), {:.1} s (limit {} s){}",
            mismatches.len(),
            t.as_secs_f64(),
            AC6_BUDGET.as_secs(),
            mismatches.first().map(|m| format!("; first {m}")).unwrap_or_default()
        ),
    )
}

fn ac7_units() -> Verdict {
    let tp = |pred, gt, score| TpEntry {
        pred,
        gt,
        score,
        prompt: 0,
    };
    let fp = |pred, score| ovdeval::dba::FpEntry {
        pred,
        reason: FpReason::LowIoU,
        score,
        prompt: 0,
    };
    let perfect = EvalLedger {
        tp: vec![tp(0, 0, 0.9), tp(1, 1, 0.6), tp(2, 2, 0.4)],
        fp: vec![],
        fn_: vec![],
    };
    let all_fp = EvalLedger {
        tp: vec![],
        fp: vec![fp(0, 0.9), fp(1, 0.5)],
        fn_: vec![0, 1],
    };
    let traced = EvalLedger {
        tp: vec![tp(0, 0, 0.9), tp(2, 1, 0.7)],
        fp: vec![fp(1, 0.8)],
        fn_: vec![],
    };
    let a = [
        average_precision(&perfect).ap,
        average_precision(&all_fp).ap,
        average_precision(&traced).ap,
    ];
    let traced_oracle = brute_force_ap(&[(0.9, true), (0.8, false), (0.7, true)], 2);
    // The hand trace: precision 1 over the first half of recall, 2/3 over the second.
    let expect = [1.0, 0.0, 1.0 * 0.5 + (2.0 / 3.0) * 0.5];
    let pass = (a[0] - expect[0]).abs() <= AC7_TOL
        && (a[1] - expect[1]).abs() <= AC7_TOL
        && (a[2] - expect[2]).abs() <= AC7_TOL
        && (a[2] - traced_oracle).abs() <= AC7_TOL
        && format!("{:.4}", a[2]) == "0.8333";
    verdict(
        pass,
        format!(
            "perfect {}, all-FP {}, traced {:.10} (brute force {:.10}); expected 1.0, 0.0, 1*0.5 + (2/3)*0.5 = 0.8333 +/- {AC7_TOL:.0e}",
            a[0], a[1], a[2], traced_oracle
        ),
    )
}

fn ac8_rules() -> Verdict {
    let dir = fixtures().join("rules");
    let mut problems = Vec::new();
    for rule in 1..=9u64 {
        for (kind, want_code) in [("bad", 2), ("good", 0)] {
            let tmp = tempfile::tempdir().unwrap();
            let gt = dir.join(format!("rule{rule}_{kind}.jsonl"));
            let (gt_s, out_s) = (gt.display().to_string(), tmp.path().display().to_string());
            let (code, _) = cli(&["validate", "--gt", &gt_s, "--out", &out_s]);
            let body = fs::read_to_string(tmp.path().join("violations.jsonl")).unwrap_or_default();
            let ids: Vec<u64> = body
                .lines()
                .map(|l| serde_json::from_str::<Value>(l).unwrap()["rule_id"].as_u64().unwrap())
                .collect();
            let want_ids = if kind == "bad" { vec![rule] } else { vec![] };
            if code != want_code || ids != want_ids {
                problems.push(format!("rule {rule} {kind}: exit {code}, fired {ids:?}"));
            }
        }
    }
    let unknown = dir.join("unknown_label.jsonl").display().to_string();
    let (code, _) = cli(&["validate", "--gt", &unknown]);
    if code != 2 {
        problems.push(format!("unknown label: exit {code}"));
    }
    verdict(
        problems.is_empty(),
        format!(
            "9 rules x (trigger, pass) + unknown label via validate, {} problem(s){}",
            problems.len(),
            problems.first().map(|p| format!("; first {p}")).unwrap_or_default()
        ),
    )
}

fn ac9_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let s = generate_scenario(&ScenarioConfig {
        seed: 9,
        n_images: 40,
        n_gt_per_image: 6,
        pathologies: PathologyMix {
            duplicate_boxes: 0.2,
            disjoint_states_near_tie: 0.15,
            inflated_max_logit: 0.15,
            suppressed_correct_under_wrong: 0.15,
            missed: 0.1,
        },
        background_per_image: 4,
        overlap_gts: true,
        ..Default::default()
    })
    .unwrap();
    fs::create_dir_all(&data).unwrap();
    s.write_to_dir(&data).unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "8"] {
        let out = tmp.path().join(format!("w{workers}"));
        let (code, msg) = run_eval(&data, &out, &["--workers", workers, "--curves"]);
        if code != 0 {
            return verdict(false, format!("eval --workers {workers} exited {code}: {msg}"));
        }
        let files: Vec<Vec<u8>> = ["report.json", "report.txt", "curves.jsonl"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    let same = outputs[0] == outputs[1];
    verdict(
        same,
        format!(
            "report.json ({} bytes), report.txt, curves.jsonl with 1 vs 8 workers: {}",
            outputs[0][0].len(),
            if same { "byte-identical" } else { "differ" }
        ),
    )
}

// ---------------------------------------------------------------------------
// Throughput: predictions are generated lazily, serialized to JSON lines and
// parsed back, so the evaluator sees a real stream without a 2 GB file.

struct StreamSource {
    rng: ChaCha8Rng,
    prompts: Vec<(String, usize)>,
    gts: Vec<Vec<BBox>>,
    per_image: usize,
    image: usize,
    buf: Vec<u8>,
    pos: usize,
}

impl StreamSource {
    fn refill(&mut self) -> bool {
        self.buf.clear();
        self.pos = 0;
        if self.image == 0 {
            write_predictions_header(&mut self.buf).unwrap();
        }
        if self.image >= self.gts.len() {
            return !self.buf.is_empty();
        }
        let image_id = image_name(self.image);
        let gts = &self.gts[self.image];
        for k in 0..self.per_image {
            let g = gts[k % gts.len()];
            let (w, h) = (g.width(), g.height());
            let mut j = || self.rng.gen_range(-0.04..0.04);
            let bbox = BBox::new(g.x1 + j() * w, g.y1 + j() * h, g.x2 + j() * w, g.y2 + j() * h).unwrap();
            let (prompt_id, len) = &self.prompts[self.rng.gen_range(0..self.prompts.len())];
            let token_logits: Vec<f64> = (0..*len).map(|_| self.rng.gen::<f64>()).collect();
            let rec = PredictionRecord {
                image_id: image_id.clone(),
                prompt_id: prompt_id.clone(),
                bbox,
                token_logits,
                native_score: None,
            };
            write_prediction(&mut self.buf, &rec).unwrap();
        }
        self.image += 1;
        true
    }
}

impl Read for StreamSource {
    fn read(&mut self, out: &mut [u8]) -> std::io::Result<usize> {
        if self.pos == self.buf.len() && !self.refill() {
            return Ok(0);
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

fn image_name(i: usize) -> String {
    format!("img{i:07}")
}

fn peak_rss_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn ac10_throughput() -> Verdict {
    const PER_IMAGE: usize = 50;
    const GTS_PER_IMAGE: usize = 4;
    let catalog = generate_scenario(&ScenarioConfig {
        n_images: 1,
        ..Default::default()
    })
    .unwrap();
    let ds = catalog.dataset();
    let prompts: Vec<(String, usize)> = ds
        .prompts
        .iter()
        .map(|p| (p.prompt_id.clone(), ds.token_maps[&p.prompt_id].len()))
        .collect();

    let n_images = AC10_RECORDS / PER_IMAGE;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut gts = Vec::with_capacity(n_images);
    let mut ground_truth = Vec::with_capacity(n_images * GTS_PER_IMAGE);
    for i in 0..n_images {
        let image_id = image_name(i);
        let boxes: Vec<BBox> = (0..GTS_PER_IMAGE)
            .map(|k| {
                let x = 250.0 * k as f64 + rng.gen_range(0.0..50.0);
                let y = rng.gen_range(0.0..400.0);
                BBox::new(x, y, x + rng.gen_range(80.0..180.0), y + rng.gen_range(150.0..400.0)).unwrap()
            })
            .collect();
        for (k, b) in boxes.iter().enumerate() {
            let p = &ds.prompts[rng.gen_range(0..ds.prompts.len())];
            ground_truth.push(GroundTruthRecord {
                id: format!("{image_id}-g{k}"),
                image_id: image_id.clone(),
                bbox: *b,
                labels: p.label_set,
            });
        }
        gts.push(boxes);
    }

    let source = StreamSource {
        rng: ChaCha8Rng::seed_from_u64(11),
        prompts,
        gts,
        per_image: PER_IMAGE,
        image: 0,
        buf: Vec::new(),
        pos: 0,
    };
    let start = Instant::now();
    let mut ev = StreamingEvaluator::new(
        &ds.prompts,
        &ds.token_maps,
        &ground_truth,
        Method::Dba,
        EvalParams::default(),
    )
    .unwrap();
    let reader = BufReader::with_capacity(1 << 16, source);
    for rec in PredictionReader::new(reader, &ds.token_maps, Validation::Strict) {
        ev.push(&rec.unwrap()).unwrap();
    }
    let summary = ev.finish();
    let t = start.elapsed();
    let peak = peak_rss_bytes();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let pass = summary.records == AC10_RECORDS && t < AC10_BUDGET && peak.is_some_and(|p| p < AC10_PEAK_BYTES);
    verdict(
        pass,
        format!(
            "{} records over {} images, generate+parse+score+group+DBA in {:.1} s (limit {} s) on {cores} core(s), \
             peak RSS {} (limit {} MiB); tp {} fp {} fn {}",
            summary.records,
            summary.images,
            t.as_secs_f64(),
            AC10_BUDGET.as_secs(),
            peak.map_or("unavailable".to_string(), |p| format!("{} MiB", p >> 20)),
            AC10_PEAK_BYTES >> 20,
            summary.tp,
            summary.fp,
            summary.fn_
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 11] = [
        ("AC1", "N-LSE algebra", ac1_algebra),
        ("AC1", "N-LSE reference constant", ac1_constant),
        ("AC2", "selectivity direction", ac2_selectivity),
        ("AC3", "disjoint penalty", ac3_disjoint),
        ("AC4", "recovery under NMS suppression", ac4_recovery),
        ("AC5", "deflation on duplicates", ac5_deflation),
        ("AC6", "oracle equivalence", ac6_oracle),
        ("AC7", "AP unit values", ac7_units),
        ("AC8", "sanity-rule coverage", ac8_rules),
        ("AC9", "determinism under parallelism", ac9_determinism),
        ("AC10", "streaming throughput", ac10_throughput),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected =
        |id: &str, name: &str| filters.is_empty() || filters.iter().any(|f| id == f || name.contains(f.as_str()));
    let mut results: BTreeMap<bool, usize> = BTreeMap::new();
    println!("acceptance criteria");
    for (id, name, f) in criteria {
        if !selected(id, name) {
            continue;
        }
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        *results.entry(v.pass).or_default() += 1;
        println!("{id:<5} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let (pass, fail) = (
        results.get(&true).copied().unwrap_or(0),
        results.get(&false).copied().unwrap_or(0),
    );
    println!("acceptance: {pass} passed, {fail} failed");
    if fail > 0 {
        std::process::exit(1);
    }
}
