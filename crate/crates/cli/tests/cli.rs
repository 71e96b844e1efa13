use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn uncmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uncmap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(o: Output) -> Output {
    assert_eq!(
        code(&o),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn line_map(elements: &[(&str, f64, Value)]) -> Value {
    let els: Vec<Value> = elements
        .iter()
        .map(|(class, conf, verts)| json!({"class": class, "confidence": conf, "vertices": verts}))
        .collect();
    json!({"schema_version": "uncmap/1", "elements": els})
}

fn straight(x: f64) -> Value {
    let v: Vec<Value> = (0..5).map(|k| json!({"mu": [x, 2.0 * k as f64]})).collect();
    Value::Array(v)
}

/// One-scene manifest over hand-written files.
fn hand_dataset(dir: &Path, gt: &Value, observed: &Value, traj: &Value) -> String {
    write(&dir.join("gt.json"), gt);
    write(&dir.join("obs.json"), observed);
    write(&dir.join("traj.json"), traj);
    let manifest = json!({
        "schema_version": "uncmap/1",
        "scenes": [{"id": "s0", "gt_map": "gt.json", "observed_map": "obs.json",
                    "trajectories": "traj.json", "seed": 0, "observe_seed": 0}]
    });
    let m = dir.join("manifest.json");
    write(&m, &manifest);
    m.to_str().unwrap().to_string()
}

fn agent_traj(offset: f64) -> Value {
    let future: Vec<Value> = (1..=30).map(|t| json!([0.0, t as f64 * 0.5])).collect();
    let mode: Vec<Value> = (1..=30).map(|t| json!([offset, t as f64 * 0.5])).collect();
    json!({"schema_version": "uncmap/1", "agents": [
        {"id": 0, "history": [[0.0, -0.5], [0.0, 0.0]], "future_gt": future, "modes": [mode]}
    ]})
}

fn config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    p(&path).to_string()
}

#[test]
fn generate_is_deterministic_and_creates_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "n_scenes = 4\nseed = 9\n");
    let (a, b) = (dir.path().join("nested/a"), dir.path().join("b"));
    ok(uncmap(&["generate", "--config", &cfg, "--out", p(&a)]));
    ok(uncmap(&[
        "--threads",
        "1",
        "generate",
        "--config",
        &cfg,
        "--out",
        p(&b),
    ]));
    let ra = fs::read(a.join("generate_report.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("generate_report.json")).unwrap());
    let report: Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["files"].as_array().unwrap().len(), 4 * 3 + 1);
    assert_eq!(report["reproducibility"]["tool"], "uncmap");
    assert!(
        report["reproducibility"]["config_sha256"]
            .as_str()
            .unwrap()
            .len()
            == 64
    );
}

#[test]
fn seed_flag_changes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(uncmap(&[
        "generate",
        "--n-scenes",
        "2",
        "--seed",
        "1",
        "--out",
        p(&a),
    ]));
    ok(uncmap(&[
        "generate",
        "--n-scenes",
        "2",
        "--seed",
        "2",
        "--out",
        p(&b),
    ]));
    assert_ne!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = config(dir.path(), "layouts = [\"roundabout\"]\n");
    let o = uncmap(&[
        "generate",
        "--config",
        &bad,
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("roundabout"));
    assert_eq!(code(&uncmap(&["eval-map", "--bogus"])), 2);
    assert_eq!(code(&uncmap(&["generate"])), 2);
    let typo = config(dir.path(), "n_scenez = 3\n");
    assert_eq!(
        code(&uncmap(&["generate", "--config", &typo, "--out", "x"])),
        2
    );
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(&dir.path().join("out")).to_string();
    let m = dir.path().join("manifest.json");
    write(&m, &json!({"schema_version": "uncmap/1", "scenes": []}));
    assert_eq!(
        code(&uncmap(&["eval-map", "--manifest", p(&m), "--out", &out])),
        3
    );
    let missing = dir.path().join("nope.json");
    assert_eq!(
        code(&uncmap(&[
            "eval-pred",
            "--manifest",
            p(&missing),
            "--out",
            &out
        ])),
        3
    );
    let m2 = hand_dataset(dir.path(), &line_map(&[]), &line_map(&[]), &agent_traj(0.0));
    fs::write(dir.path().join("obs.json"), "{not json").unwrap();
    assert_eq!(
        code(&uncmap(&["eval-map", "--manifest", &m2, "--out", &out])),
        3
    );
}

#[test]
fn bad_thresholds_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let gt = line_map(&[("lane_divider", 1.0, straight(0.0))]);
    let m = hand_dataset(dir.path(), &gt, &gt, &agent_traj(0.0));
    let out = p(&dir.path().join("out")).to_string();
    let o = uncmap(&[
        "eval-map",
        "--manifest",
        &m,
        "--out",
        &out,
        "--ap-thresholds",
        "1.0,0.5",
    ]);
    assert_eq!(code(&o), 2);
    let o = uncmap(&[
        "calibrate",
        "--manifest",
        &m,
        "--out",
        &out,
        "--levels",
        "0.5,1.2",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_map_identity_and_shift() {
    let dir = tempfile::tempdir().unwrap();
    let gt = line_map(&[
        ("lane_divider", 1.0, straight(0.0)),
        ("road_boundary", 1.0, straight(20.0)),
    ]);
    let out = dir.path().join("out");
    let m = hand_dataset(dir.path(), &gt, &gt, &agent_traj(0.0));
    ok(uncmap(&["eval-map", "--manifest", &m, "--out", p(&out)]));
    assert_eq!(read_json(&out.join("map_eval.json"))["report"]["map"], 1.0);

    // a 0.45 m lateral shift gives a Chamfer distance of 0.9 m
    let shifted = line_map(&[("lane_divider", 0.9, straight(0.45))]);
    let gt = line_map(&[("lane_divider", 1.0, straight(0.0))]);
    let m = hand_dataset(dir.path(), &gt, &shifted, &agent_traj(0.0));
    ok(uncmap(&["eval-map", "--manifest", &m, "--out", p(&out)]));
    let r = read_json(&out.join("map_eval.json"));
    let divider = r["report"]["classes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["class"] == "lane_divider")
        .unwrap()
        .clone();
    assert_eq!(divider["ap"], json!([0.0, 1.0, 1.0]));
    let csv = fs::read_to_string(out.join("map_eval.csv")).unwrap();
    assert!(csv.starts_with("class,threshold,ap,n_gt,n_pred\n"));
    assert!(csv.contains("lane_divider,0.5,0,1,1\n"));
}

#[test]
fn eval_pred_examples() {
    let dir = tempfile::tempdir().unwrap();
    let gt = line_map(&[("lane_divider", 1.0, straight(0.0))]);
    let out = dir.path().join("out");
    for (offset, fde, mr) in [(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (3.0, 3.0, 1.0)] {
        let m = hand_dataset(dir.path(), &gt, &gt, &agent_traj(offset));
        ok(uncmap(&["eval-pred", "--manifest", &m, "--out", p(&out)]));
        let r = read_json(&out.join("pred_eval.json"));
        assert_eq!(r["report"]["minFDE"], fde);
        assert_eq!(r["report"]["minADE"], fde);
        assert_eq!(r["report"]["MR"], mr);
    }
    let csv = fs::read_to_string(out.join("pred_agents.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn calibration_with_hard_labels_has_zero_ece() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "n_scenes = 5\n[noise.class_logits]\nkind = \"hard\"\n",
    );
    let data = dir.path().join("data");
    ok(uncmap(&["generate", "--config", &cfg, "--out", p(&data)]));
    let out = dir.path().join("out");
    let m = data.join("manifest.json");
    let stdout = ok(uncmap(&[
        "calibrate",
        "--manifest",
        p(&m),
        "--out",
        p(&out),
    ]))
    .stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("ECE 0.0000"));
    let r = read_json(&out.join("calibration.json"));
    assert_eq!(r["reliability"]["ece"], 0.0);
    let cov = fs::read_to_string(out.join("coverage.csv")).unwrap();
    assert_eq!(cov.lines().count(), 3);
}

#[test]
fn halved_scales_undercover() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "n_scenes = 10\n[noise]\nemitted_scale = 0.5\n");
    let data = dir.path().join("data");
    ok(uncmap(&["generate", "--config", &cfg, "--out", p(&data)]));
    let out = dir.path().join("out");
    ok(uncmap(&[
        "calibrate",
        "--manifest",
        p(&data.join("manifest.json")),
        "--out",
        p(&out),
    ]));
    let cov = read_json(&out.join("calibration.json"))["coverage"]["empirical_coverage"][1]
        .as_f64()
        .unwrap();
    assert!(cov < 0.8, "{cov}");
}

#[test]
fn analyze_flat_scale_and_night_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "n_scenes = 12\nconditions = [\"day\", \"night\"]\n[noise]\nbase_b = 0.2\ndistance_coeff = 0.0\n\
         occlusion_multiplier = 1.0\nclass_logits = { kind = \"hard\" }\n\
         condition_multipliers = [{ condition = \"night\", class = \"ped_crossing\", factor = 2.0 }]\n",
    );
    let data = dir.path().join("data");
    ok(uncmap(&["generate", "--config", &cfg, "--out", p(&data)]));
    let out = dir.path().join("out");
    ok(uncmap(&[
        "analyze-uncertainty",
        "--manifest",
        p(&data.join("manifest.json")),
        "--out",
        p(&out),
        "--bin-edges",
        "0,10,20,40",
    ]));
    let r = read_json(&out.join("uncertainty.json"));
    let group = |name: &str| {
        r["groups"]
            .as_array()
            .unwrap()
            .iter()
            .find(|g| g["group"] == name)
            .cloned()
            .unwrap()
    };
    let day = group("condition=day,class=ped_crossing")["mean_b"]
        .as_f64()
        .unwrap();
    let night = group("condition=night,class=ped_crossing")["mean_b"]
        .as_f64()
        .unwrap();
    assert!((night / day - 2.0).abs() < 1e-12, "{night} / {day}");
    for m in group("condition=day,class=lane_divider")["binned"]["mean"]
        .as_array()
        .unwrap()
    {
        if let Some(v) = m.as_f64() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }
    let csv = fs::read_to_string(out.join("uncertainty.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("all,0,10,")));
}

#[test]
fn compare_predictors_floor_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "n_scenes = 6\n[noise]\nbase_b = 0.000001\ndistance_coeff = 0.0\nocclusion_multiplier = 1.0\n\
         condition_multipliers = []\n",
    );
    let data = dir.path().join("data");
    ok(uncmap(&["generate", "--config", &cfg, "--out", p(&data)]));
    let out = dir.path().join("out");
    let stdout = ok(uncmap(&[
        "compare-predictors",
        "--manifest",
        p(&data.join("manifest.json")),
        "--out",
        p(&out),
        "--lambda",
        "2.0",
        "--b0",
        "0.25",
    ]))
    .stdout;
    let r = read_json(&out.join("compare.json"));
    assert_eq!(r["blind"], r["weighted"]);
    assert_eq!(r["identical_agents"], r["blind"]["n_agents"]);
    assert_eq!(r["config"]["predictor"]["lambda"], 2.0);
    assert!(String::from_utf8_lossy(&stdout).contains("(0%)"));
}
