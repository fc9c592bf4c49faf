use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const HORSE: &str = "a horse running from right to left";

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn flowzero(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowzero"))
        .args(args)
        .env_remove("FLOWZERO_API_KEY")
        .env_remove("FLOWZERO_API_BASE")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_lists_every_flag_and_subcommand() {
    let out = flowzero(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--config",
        "--frames",
        "--canvas",
        "--latent",
        "--lambda",
        "--max-iter",
        "--acceptance",
        "--feedback",
        "--pixel-scale",
        "--sigma-phi",
        "--phase-schedule",
        "--seed",
        "--dtype",
        "--min-disp",
        "--ratio-threshold",
        "--visibility-tol",
        "--model",
        "--temperature",
        "--templates",
        "--mock",
        "--record",
        "--replay",
        "--out",
        "--cases",
        "--concurrency",
        "--simulate",
        "--error-rate",
        "--verifier",
    ] {
        assert!(text.contains(flag), "missing {flag}");
    }
    for cmd in [
        "generate", "refine", "verify", "shift", "emit", "render", "bench", "pipeline",
    ] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn horse_pipeline_with_mock_llm() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mock = fixture("horse_mock.json");
    let o = flowzero(&[
        "pipeline",
        HORSE,
        "--mock",
        mock.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let manifest = json(&out.join("bundle/manifest.json"));
    assert_eq!(manifest["noise_paths"].as_array().unwrap().len(), 8);
    for f in manifest["frames"].as_array().unwrap() {
        assert_eq!(f["direction"], "right");
    }
    for i in 0..8 {
        assert!(out.join(format!("bundle/noise/frame_{i:03}.fzt")).is_file());
    }
    let trace = json(&out.join("trace/trace.json"));
    assert_eq!(trace["terminal_reason"], "converged");
    assert!(out.join("trace/iter_1/dss.json").is_file());
    assert!(out.join("trace/iter_2/feedback.json").is_file());
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("horse"));
    assert!(summary.contains("converged"));
}

#[test]
fn missing_api_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowzero(&["pipeline", HORSE, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("FLOWZERO_API_KEY"));
    // Usage errors are reported before anything is written.
    let fresh = dir.path().join("never-created");
    let o = flowzero(&["pipeline", HORSE, "--out", fresh.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!fresh.exists());
}

#[test]
fn unwritable_output_is_a_pipeline_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    fs::write(&file, b"x").unwrap();
    let mock = fixture("horse_mock.json");
    let o = flowzero(&[
        "pipeline",
        HORSE,
        "--mock",
        mock.to_str().unwrap(),
        "--out",
        file.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn bad_flag_values_exit_two() {
    let o = flowzero(&["--lambda", "9", "bench", "--simulate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = flowzero(&["--canvas", "wide", "bench", "--simulate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_verify_render_shift_and_emit_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mock = fixture("horse_mock.json");
    let o = flowzero(&[
        "generate",
        HORSE,
        "--mock",
        mock.to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dss = d.join("dss.json");

    // The mock's first plan runs the wrong way.
    let o = flowzero(&["verify", dss.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["report"]["passed"], false);
    assert!(report["feedback"]["confidence"].as_i64().unwrap() < 5);

    let frames = d.join("frames");
    let o = flowzero(&[
        "render",
        dss.to_str().unwrap(),
        "--out",
        frames.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pngs = fs::read_dir(&frames).unwrap().count();
    assert_eq!(pngs, 8);
    assert!(frames.join("frame_007.png").is_file());

    let noise = d.join("shift");
    let o = flowzero(&[
        "shift",
        dss.to_str().unwrap(),
        "--latent",
        "16x16x2",
        "--out",
        noise.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(noise.join("noise/frame_007.fzt").is_file());
    assert_eq!(
        json(&noise.join("frames.json")).as_array().unwrap().len(),
        8
    );

    let bundle = d.join("bundle");
    let o = flowzero(&[
        "emit",
        dss.to_str().unwrap(),
        "--dtype",
        "f32",
        "--out",
        bundle.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&bundle.join("manifest.json"))["dtype"], "f32");
}

#[test]
fn verify_with_expectation_override() {
    let dir = tempfile::tempdir().unwrap();
    let mock = fixture("horse_mock.json");
    let plans: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(mock).unwrap()).unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, plans[2].to_string()).unwrap();
    let o = flowzero(&["verify", good.to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["report"]["passed"], true);
    let o = flowzero(&[
        "verify",
        good.to_str().unwrap(),
        "--expect",
        "a horse running from left to right",
    ]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["report"]["passed"], false);
    let o = flowzero(&[
        "verify",
        good.to_str().unwrap(),
        "--expect",
        "a quiet evening",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulated_bench_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowzero(&[
        "bench",
        "--simulate",
        "--cases",
        "10",
        "--seed",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("w/o self-refine"));
    assert!(table.contains("w/ self-refine"));
    assert_eq!(
        fs::read_to_string(dir.path().join("reports.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2 * 40
    );
    assert_eq!(
        fs::read_dir(dir.path().join("transcripts"))
            .unwrap()
            .count(),
        40
    );

    // The recorded transcripts replay to the same numbers.
    let again = tempfile::tempdir().unwrap();
    let transcripts = dir.path().join("transcripts");
    let o = flowzero(&[
        "bench",
        "--replay",
        transcripts.to_str().unwrap(),
        "--cases",
        "10",
        "--seed",
        "4",
        "--out",
        again.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.path().join("bench.json")).unwrap(),
        fs::read_to_string(again.path().join("bench.json")).unwrap()
    );
}
