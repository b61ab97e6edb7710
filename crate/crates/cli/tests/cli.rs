use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use silcarve::Error;
use silcarve_cli::config::RunConfig;
use silcarve_cli::manifest::{sha256_file, RunManifest};
use silcarve_cli::{exit_code, EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_silcarve"));
    c.env_remove("SILCARVE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn spec_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/ellipsoids.json")
}

fn small_spec(dir: &Path, n: usize) -> PathBuf {
    let mut spec: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(spec_path()).unwrap()).unwrap();
    spec["instances"] = n.into();
    let p = dir.join("spec.json");
    std::fs::write(&p, spec.to_string()).unwrap();
    p
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("learn-basis"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["synth", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(!o.stderr.is_empty());
}

#[test]
fn empty_config_materializes_every_default() {
    let cfg = RunConfig::parse("{}").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.proto.k, 4);
    assert_eq!(cfg.basis.fit.iters, 80);
}

#[test]
fn negative_cluster_count_names_the_key() {
    for (text, key) in [(r#"{"proto": {"K": -1}}"#, "proto.K"), (r#"{"basis": {"K": -1}}"#, "basis.K")] {
        match RunConfig::parse(text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, key),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn config_errors_carry_key_paths() {
    let cases = [
        (r#"{"proto": {"Kk": 3}}"#, "proto.Kk"),
        (r#"{"basis": {"weights": {"coverage": "a"}}}"#, "basis.weights.coverage"),
        (r#"{"basis": {"weights": {"coverage": -1.0}}}"#, "basis.weights.coverage"),
        (r#"{"basis": {"fit": {"tol": -1.0}}}"#, "basis.fit.tol"),
        (r#"{"nrsfm": {"max_iter": 0}}"#, "nrsfm.max_iter"),
        (r#"{"eval": {"metrics": []}}"#, "eval.metrics"),
        (r#"{"colour": 1}"#, "colour"),
    ];
    for (text, key) in cases {
        match RunConfig::parse(text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, key, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn materialized_config_round_trips() {
    let cfg = RunConfig::parse(r#"{"seed": 5, "proto": {"K": 3}, "basis": {"points": 900, "fit": {"optimize_rotation": false}}}"#).unwrap();
    let again = RunConfig::parse(&cfg.to_json()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(again.to_json(), cfg.to_json());
}

#[test]
fn bad_config_file_exits_with_usage_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"proto": {"K": -1}}"#).unwrap();
    let o = run(&["--config", s(&cfg), "synth", "--spec", s(&spec_path()), "--out", s(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("proto.K"));
    assert!(o.stdout.is_empty());
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["mesh", s(&dir.path().join("none.bin")), "--out", s(&dir.path().join("m.obj"))]);
    assert_eq!(o.status.code(), Some(EXIT_DATA));
}

#[test]
fn bad_thread_variable_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("SILCARVE_THREADS", "many")
        .args(["synth", "--spec", s(&spec_path()), "--out", s(&dir.path().join("d"))])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
}

#[test]
fn error_classes_map_to_exit_codes() {
    assert_eq!(exit_code(&Error::Config { path: "x".into(), message: String::new() }), EXIT_USAGE);
    assert_eq!(exit_code(&Error::EmptySilhouette), EXIT_DATA);
    assert_eq!(exit_code(&Error::StepTooLarge { energy: 11.0, initial: 1.0 }), EXIT_NUMERICAL);
    assert_eq!(exit_code(&Error::DegenerateBasis(String::new())), EXIT_NUMERICAL);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 9, "log": "warn"}"#).unwrap();
    let out = dir.path().join("d");
    let o = run(&["--config", s(&cfg), "--seed", "4", "synth", "--spec", s(&small_spec(dir.path(), 3)), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(m.seed, 4);
    assert_eq!(m.config.seed, Some(4));
    let data: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(data["seed"], 4);
}

fn check(o: &Output) {
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_pipeline_reports_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    check(&run(&["--log", "warn", "synth", "--spec", s(&small_spec(d, 12)), "--out", s(&data)]));
    let nrsfm = d.join("nrsfm.json");
    check(&run(&["--log", "warn", "nrsfm", "--input", s(&data), "--bases", "2", "--out", s(&nrsfm)]));
    let proto = d.join("proto");
    check(&run(&["--log", "warn", "learn-proto", "--data", s(&data), "--model", s(&nrsfm), "-K", "2", "--grid-size", "32", "--out", s(&proto)]));

    let model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&nrsfm).unwrap()).unwrap();
    let first = &model["instances"][0];
    let (cam, alpha) = (d.join("cam.json"), d.join("alpha.json"));
    std::fs::write(&cam, first["camera"].to_string()).unwrap();
    std::fs::write(&alpha, first["z"].to_string()).unwrap();
    let id = first["id"].as_str().unwrap();
    let vol = d.join("vol.bin");
    let mask = data.join(format!("{id}_mask.pgm"));
    check(&run(&["--log", "warn", "infer-proto", "--mask", s(&mask), "--camera", s(&cam), "--alpha", s(&alpha), "--model", s(&proto), "--out", s(&vol)]));
    check(&run(&["--log", "warn", "mesh", s(&vol), "--iso", "0", "--out", s(&d.join("proto.obj"))]));

    let basis = d.join("basis.json");
    check(&run(&["--log", "warn", "learn-basis", "--data", s(&data), "-K", "2", "--points", "600", "--iters", "10", "--nrsfm", s(&nrsfm), "--out", s(&basis)]));
    let pred = d.join("pred");
    for (id, export) in [("000", "mesh"), ("001", "points")] {
        check(&run(&[
            "--log",
            "warn",
            "fit",
            "--mask",
            s(&data.join(format!("{id}_mask.pgm"))),
            "--camera",
            s(&data.join(format!("{id}_camera.json"))),
            "--model",
            s(&basis),
            "--out",
            s(&d.join(format!("fit{id}.json"))),
            "--mesh",
            s(&pred.join(format!("{id}.obj"))),
            "--export",
            export,
        ]));
    }
    let report = d.join("report.csv");
    check(&run(&["--log", "warn", "eval", "--pred", s(&pred), "--gt", s(&data), "--out", s(&report)]));
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "instance_id,metric,value");
    assert_eq!(lines.len(), 7);
    for id in ["000", "001"] {
        for metric in ["hausdorff", "zmae", "iou"] {
            let row = lines.iter().find(|l| l.starts_with(&format!("{id},{metric},"))).unwrap();
            let v: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
            assert!(v.is_finite() && v >= 0.0, "{row}");
        }
    }

    let single = d.join("single.csv");
    check(&run(&[
        "--log",
        "warn",
        "eval",
        "--pred",
        s(&pred.join("000.obj")),
        "--gt",
        s(&data.join("000_gt.obj")),
        "--camera",
        s(&data.join("000_camera.json")),
        "--mask",
        s(&data.join("000_mask.pgm")),
        "--out",
        s(&single),
    ]));
    let single = std::fs::read_to_string(&single).unwrap();
    assert_eq!(single.lines().collect::<Vec<_>>(), lines[..4].to_vec());

    for m in [data.join("run.json"), d.join("nrsfm.run.json"), proto.join("run.json"), d.join("vol.run.json"), d.join("basis.run.json"), d.join("report.run.json")] {
        let m = manifest(&m);
        assert!(!m.artifacts.is_empty());
        for a in &m.artifacts {
            assert_eq!(sha256_file(&a.path).unwrap(), a.sha256, "{}", a.path.display());
        }
        RunConfig::parse(&serde_json::to_string(&m.config).unwrap()).unwrap();
    }
}

#[test]
fn a_manifest_reruns_its_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.json");
    std::fs::write(&cfg, r#"{"log": "warn", "nrsfm": {"max_iter": 40}}"#).unwrap();
    let data = d.join("data");
    check(&run(&["synth", "--spec", s(&small_spec(d, 10)), "--out", s(&data), "--seed", "3"]));
    let out = d.join("n.json");
    check(&run(&["--config", s(&cfg), "nrsfm", "--input", s(&data), "--out", s(&out)]));
    let first = std::fs::read(&out).unwrap();
    let m = manifest(&d.join("n.run.json"));
    assert_eq!(m.config.nrsfm.max_iter, 40);
    let saved = d.join("saved.run.json");
    std::fs::copy(d.join("n.run.json"), &saved).unwrap();
    std::fs::remove_file(&out).unwrap();
    let args: Vec<String> = m.args.clone();
    let mut cmd = bin();
    cmd.args(&args).args(["--config", s(&saved)]);
    check(&cmd.output().unwrap());
    assert_eq!(std::fs::read(&out).unwrap(), first);
    assert_eq!(manifest(&d.join("n.run.json")), m);
}
