use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use ovdeval::ingest::{parse_prompt_catalog, parse_token_map};
use ovdeval::taxonomy::LabelRegistry;
use ovdeval_cli::{run, EXIT_INPUT, EXIT_OK};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(
        std::iter::once("ovdeval").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn copy_fixture(name: &str, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(fixture(name)).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

fn eval_in(dir: &Path, extra: &[&str]) -> (i32, String, String) {
    let p = |f: &str| dir.join(f).display().to_string();
    let (gt, pred, prompts, maps, out) = (
        p("gt.jsonl"),
        p("predictions.jsonl"),
        p("prompts.jsonl"),
        p("token_maps.jsonl"),
        p("out"),
    );
    let mut args = vec![
        "eval",
        "--gt",
        &gt,
        "--pred",
        &pred,
        "--prompts",
        &prompts,
        "--token-maps",
        &maps,
        "--out",
        &out,
    ];
    args.extend_from_slice(extra);
    cli(&args)
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap()
}

#[test]
fn eval_writes_report_and_table() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixture("near_tie", tmp.path());
    let (code, out, err) = eval_in(tmp.path(), &[]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.starts_with("slice"));
    let r = report(tmp.path());
    assert_eq!(r["rows"].as_array().unwrap().len(), 7 * 3);
    assert_eq!(r["metadata"]["ap_method"], "all-point");
    assert_eq!(
        r["metadata"]["inputs"]["predictions"]["sha256"].as_str().unwrap().len(),
        64
    );
    assert!(tmp.path().join("out/report.txt").is_file());
    assert!(!tmp.path().join("out/curves.jsonl").exists());
}

#[test]
fn baseline_and_slice_flags_select_rows() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixture("near_tie", tmp.path());
    let (code, _, err) = eval_in(
        tmp.path(),
        &["--baseline", "dba,plain-ap", "--slice", "global,alone", "--curves"],
    );
    assert_eq!(code, EXIT_OK, "{err}");
    let rows = report(tmp.path())["rows"].as_array().unwrap().clone();
    let keys: Vec<(String, String)> = rows
        .iter()
        .map(|r| {
            (
                r["slice"].as_str().unwrap().into(),
                r["method"].as_str().unwrap().into(),
            )
        })
        .collect();
    let expect = [
        ("global", "dba"),
        ("global", "plain-ap"),
        ("alone", "dba"),
        ("alone", "plain-ap"),
    ];
    assert_eq!(keys, expect.map(|(s, m)| (s.to_string(), m.to_string())));
    let curves = fs::read_to_string(tmp.path().join("out/curves.jsonl")).unwrap();
    assert_eq!(curves.lines().count(), 4);
}

#[test]
fn missing_token_map_entry_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixture("near_tie", tmp.path());
    let maps = tmp.path().join("token_maps.jsonl");
    let kept: Vec<String> = fs::read_to_string(&maps)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"run\""))
        .map(String::from)
        .collect();
    fs::write(&maps, kept.join("\n") + "\n").unwrap();
    let (code, _, err) = eval_in(tmp.path(), &[]);
    assert_eq!(code, EXIT_INPUT);
    assert!(err.contains("run"), "{err}");
}

#[test]
fn missing_input_file_is_an_input_error() {
    let (code, _, err) = cli(&["eval", "--gt", "/nonexistent/gt.jsonl"]);
    assert_eq!(code, EXIT_INPUT);
    assert!(err.contains("--gt"), "{err}");
}

#[test]
fn unknown_flag_is_an_input_error() {
    assert_eq!(cli(&["eval", "--frobnicate"]).0, EXIT_INPUT);
    assert_eq!(cli(&["eval", "--conf-thr", "1.5", "--gt", "x"]).0, EXIT_INPUT);
}

#[test]
fn out_of_range_parameter_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixture("near_tie", tmp.path());
    let (code, _, err) = eval_in(tmp.path(), &["--iou-thr", "0"]);
    assert_eq!(code, EXIT_INPUT, "{err}");
}

#[test]
fn strict_rejects_rule_violations_and_lenient_continues() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixture("near_tie", tmp.path());
    let gt = tmp.path().join("gt.jsonl");
    let text = fs::read_to_string(&gt)
        .unwrap()
        .replace("[\"alone\",\"sitting\"]", "[\"alone\",\"sitting\",\"walking\"]");
    fs::write(&gt, text).unwrap();
    let (code, _, err) = eval_in(tmp.path(), &[]);
    assert_eq!(code, EXIT_INPUT);
    assert!(err.contains("rule 4"), "{err}");
    let (code, _, err) = eval_in(tmp.path(), &["--lenient"]);
    assert_eq!(code, EXIT_OK, "{err}");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    copy_fixture("near_tie", &data);
    let config = tmp.path().join("run.toml");
    fs::write(
        &config,
        r#"
[eval]
gt = "data/gt.jsonl"
pred = "data/predictions.jsonl"
prompts = "data/prompts.jsonl"
token_maps = "data/token_maps.jsonl"
conf_thr = 0.9
out = "data/out"
slice = ["global"]
"#,
    )
    .unwrap();
    let c = config.display().to_string();
    let (code, _, err) = cli(&["--config", &c, "eval"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let r = report(&data);
    assert_eq!(r["metadata"]["params"]["conf_thr"], 0.9);
    assert_eq!(r["metadata"]["counts"]["retained"], 0);
    assert_eq!(r["rows"].as_array().unwrap().len(), 3);

    let (code, _, err) = cli(&["--config", &c, "eval", "--conf-thr", "0.3"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let r = report(&data);
    assert_eq!(r["metadata"]["params"]["conf_thr"], 0.3);
    assert_eq!(r["metadata"]["counts"]["retained"], 3);
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    fs::write(&config, "[eval]\nconf_threshold = 0.2\n").unwrap();
    let (code, _, _) = cli(&["--config", &config.display().to_string(), "eval"]);
    assert_eq!(code, EXIT_INPUT);
}

#[test]
fn sweep_reports_best_window() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixture("suppressed", tmp.path());
    let p = |f: &str| tmp.path().join(f).display().to_string();
    let (gt, pred, prompts, maps, out) = (
        p("gt.jsonl"),
        p("predictions.jsonl"),
        p("prompts.jsonl"),
        p("token_maps.jsonl"),
        p("out"),
    );
    let args = [
        "sweep",
        "--gt",
        &gt,
        "--pred",
        &pred,
        "--prompts",
        &prompts,
        "--token-maps",
        &maps,
        "--out",
        &out,
        "--grid",
        "0.1,0,0.02",
    ];
    let (code, stdout, err) = cli(&args);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.contains("best score_thr ="), "{stdout}");
    let v: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/sweep.json")).unwrap()).unwrap();
    let grid: Vec<f64> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["score_thr"].as_f64().unwrap())
        .collect();
    assert_eq!(grid, vec![0.0, 0.02, 0.1]);
    assert!(grid.contains(&v["best_thr"].as_f64().unwrap()));
}

#[test]
fn validate_reports_violations_and_exit_code() {
    let bad = fixture("rules/rule6_bad.jsonl").display().to_string();
    let (code, out, _) = cli(&["validate", "--gt", &bad]);
    assert_eq!(code, EXIT_INPUT);
    assert!(out.contains("rule 6"), "{out}");
    assert!(out.ends_with("1 record(s), 1 violation(s)\n"), "{out}");
    let good = fixture("rules/rule6_good.jsonl").display().to_string();
    assert_eq!(cli(&["validate", "--gt", &good]).0, EXIT_OK);
}

#[test]
fn prompts_command_writes_loadable_catalog() {
    let tmp = tempfile::tempdir().unwrap();
    let combos = tmp.path().join("combos.jsonl");
    fs::write(
        &combos,
        "{\"labels\":[\"alone\",\"walking\"]}\n{\"labels\":[\"group\",\"sitting\",\"dining\"]}\n",
    )
    .unwrap();
    let (c, o) = (
        combos.display().to_string(),
        tmp.path().join("cat").display().to_string(),
    );
    let (code, out, err) = cli(&["prompts", "--combos", &c, "--cap", "2", "--out", &o]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("in 2 synonym group(s)"), "{out}");
    let reg = LabelRegistry::builtin();
    let cat = tmp.path().join("cat");
    let prompts = parse_prompt_catalog(
        std::io::BufReader::new(fs::File::open(cat.join("prompts.jsonl")).unwrap()),
        reg,
    )
    .unwrap();
    let maps = parse_token_map(std::io::BufReader::new(
        fs::File::open(cat.join("token_maps.jsonl")).unwrap(),
    ))
    .unwrap();
    assert_eq!(prompts.len(), 4);
    assert!(prompts.iter().all(|p| maps.contains_key(&p.prompt_id)));
}

#[test]
fn prompts_rejects_invalid_combination() {
    let tmp = tempfile::tempdir().unwrap();
    let combos = tmp.path().join("combos.jsonl");
    fs::write(&combos, "{\"labels\":[\"alone\",\"sitting\",\"walking\"]}\n").unwrap();
    let (c, o) = (
        combos.display().to_string(),
        tmp.path().join("cat").display().to_string(),
    );
    assert_eq!(cli(&["prompts", "--combos", &c, "--out", &o]).0, EXIT_INPUT);
}

#[test]
fn synth_regenerates_from_its_scenario_file() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (sa, sb) = (a.display().to_string(), b.display().to_string());
    let (code, _, err) = cli(&[
        "synth",
        "--seed",
        "3",
        "--images",
        "5",
        "--duplicate-boxes",
        "0.4",
        "--out",
        &sa,
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let toml = a.join("scenario.toml").display().to_string();
    let (code, _, err) = cli(&["--config", &toml, "synth", "--out", &sb]);
    assert_eq!(code, EXIT_OK, "{err}");
    for f in [
        "gt.jsonl",
        "predictions.jsonl",
        "prompts.jsonl",
        "token_maps.jsonl",
        "truth.jsonl",
        "scenario.toml",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn synth_rejects_fractions_above_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().display().to_string();
    let (code, _, _) = cli(&["synth", "--missed", "0.8", "--duplicate-boxes", "0.5", "--out", &o]);
    assert_eq!(code, EXIT_INPUT);
}

#[test]
fn sweep_falls_back_to_eval_table() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixture("suppressed", &tmp.path().join("data"));
    let config = tmp.path().join("run.toml");
    fs::write(
        &config,
        "[eval]\ngt = \"data/gt.jsonl\"\npred = \"data/predictions.jsonl\"\nprompts = \"data/prompts.jsonl\"\n\
         token_maps = \"data/token_maps.jsonl\"\nout = \"results\"\n\n[sweep]\ngrid = [0.0, 0.05]\n",
    )
    .unwrap();
    let (code, stdout, err) = cli(&["--config", &config.display().to_string(), "sweep"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(stdout.lines().count(), 4, "{stdout}");
    assert!(tmp.path().join("results/sweep.json").is_file());
}
