use flowzero_core::bench::{render_plan, BenchCase, Expectation, Fault, SimulatedPlanner};
use flowzero_core::dss::{serialize_dss, ScenePrompt};
use flowzero_core::llm::{PromptTemplates, Purpose, RecordingClient, ReplayClient, ScriptedClient};
use flowzero_core::refine::{run_refinement, FeedbackMode, RefineConfig, TerminalReason};
use flowzero_core::verify::{evaluate_rules, FeedbackReport, RuleThresholds};

const NAMES: [&str; 5] = ["cat", "dog", "horse", "ball", "kite"];
const FRAMES: usize = 6;

fn objects_case() -> BenchCase {
    BenchCase::new(
        "a cat, a dog, a horse, a ball and a kite playing together in a park",
        Expectation::Objects(NAMES.iter().map(|s| s.to_string()).collect()),
        0,
    )
}

fn missing(k: usize) -> Vec<Fault> {
    NAMES[..k]
        .iter()
        .map(|n| Fault::MissingObject(n.to_string()))
        .collect()
}

/// Literal replies: a plan with `k` missing objects, then alternating
/// verdicts and rectified plans each repairing one object. The verifier
/// scores 2 while anything is wrong and 5 once clean.
fn script(case: &BenchCase, k: usize) -> Vec<String> {
    let th = RuleThresholds::default();
    let mut out = Vec::new();
    for j in 0..=k {
        let dss = render_plan(case, FRAMES, &missing(k - j));
        let failed = evaluate_rules(&dss, case, &th)
            .iter()
            .filter(|c| !c.passed)
            .count();
        assert_eq!(
            failed,
            k - j,
            "scripted plan must carry exactly k - j violations"
        );
        out.push(serialize_dss(&dss));
        let confidence = if failed == 0 { 5 } else { 2 };
        out.push(
            FeedbackReport::new(format!("{failed} objects missing"), vec![], confidence).to_json(),
        );
    }
    out
}

#[test]
fn trace_length_tracks_injected_violations() {
    let case = objects_case();
    let prompt = ScenePrompt::new(case.prompt_text.clone(), FRAMES).unwrap();
    let cfg = RefineConfig::default();
    assert_eq!((cfg.threshold, cfg.max_iterations), (3, 5));
    for k in 0..=4 {
        let client = ScriptedClient::new(script(&case, k));
        let trace =
            run_refinement(&prompt, &client, &PromptTemplates::default(), cfg, None).unwrap();
        assert_eq!(trace.len(), (k + 1).min(5), "k = {k}");
        assert_eq!(trace.terminal_reason, TerminalReason::Converged);
        assert_eq!(client.remaining(), 0);
        let purposes: Vec<Purpose> = client.requests().iter().map(|r| r.purpose).collect();
        assert_eq!(
            purposes.iter().filter(|p| **p == Purpose::Rectify).count(),
            k
        );
        assert!(evaluate_rules(&trace.last().dss, &case, &cfg.rules)
            .iter()
            .all(|c| c.passed));
    }
}

#[test]
fn unfixable_plans_exhaust_the_budget() {
    let case = objects_case();
    let prompt = ScenePrompt::new(case.prompt_text.clone(), FRAMES).unwrap();
    let planner = SimulatedPlanner::new(case, FRAMES, missing(5)).with_fixes_per_rectify(0);
    let trace = run_refinement(
        &prompt,
        &planner,
        &PromptTemplates::default(),
        RefineConfig::default(),
        None,
    )
    .unwrap();
    assert_eq!(trace.len(), 5);
    assert_eq!(trace.terminal_reason, TerminalReason::Exhausted);
    assert!(trace
        .iterations
        .iter()
        .all(|it| it.feedback.confidence <= 3));
}

#[test]
fn local_feedback_iterations_equal_one_plus_capped_failures() {
    let case = objects_case();
    let prompt = ScenePrompt::new(case.prompt_text.clone(), FRAMES).unwrap();
    // local confidence is 5 - failed, so only a clean plan clears 4.
    let cfg = RefineConfig {
        threshold: 4,
        feedback_mode: FeedbackMode::Local,
        ..RefineConfig::default()
    };
    for k in 0..=5 {
        let planner = SimulatedPlanner::new(case.clone(), FRAMES, missing(k));
        let trace = run_refinement(
            &prompt,
            &planner,
            &PromptTemplates::default(),
            cfg,
            Some(&case),
        )
        .unwrap();
        assert_eq!(trace.len(), 1 + k.min(cfg.max_iterations - 1), "k = {k}");
        let clean = evaluate_rules(&trace.last().dss, &case, &cfg.rules)
            .iter()
            .all(|c| c.passed);
        assert_eq!(clean, k < cfg.max_iterations, "k = {k}");
    }
}

#[test]
fn local_feedback_at_default_threshold_accepts_one_violation() {
    let case = objects_case();
    let prompt = ScenePrompt::new(case.prompt_text.clone(), FRAMES).unwrap();
    let cfg = RefineConfig {
        feedback_mode: FeedbackMode::Local,
        ..RefineConfig::default()
    };
    let planner = SimulatedPlanner::new(case.clone(), FRAMES, missing(3));
    let trace = run_refinement(
        &prompt,
        &planner,
        &PromptTemplates::default(),
        cfg,
        Some(&case),
    )
    .unwrap();
    assert_eq!(trace.len(), 3);
    assert_eq!(trace.last().feedback.confidence, 4);
    assert_eq!(trace.terminal_reason, TerminalReason::Converged);
}

#[test]
fn converged_iff_only_last_feedback_exceeds_threshold() {
    let case = objects_case();
    let prompt = ScenePrompt::new(case.prompt_text.clone(), FRAMES).unwrap();
    for k in 0..=6 {
        let planner = SimulatedPlanner::new(case.clone(), FRAMES, missing(k.min(5)));
        let cfg = RefineConfig::default();
        let trace =
            run_refinement(&prompt, &planner, &PromptTemplates::default(), cfg, None).unwrap();
        let (last, earlier) = trace.iterations.split_last().unwrap();
        assert!(earlier
            .iter()
            .all(|it| it.feedback.confidence <= cfg.threshold));
        assert_eq!(
            trace.terminal_reason == TerminalReason::Converged,
            last.feedback.confidence > cfg.threshold
        );
        assert!(trace.len() <= cfg.max_iterations);
    }
}

#[test]
fn recorded_runs_replay_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transcript.jsonl");
    let case = objects_case();
    let prompt = ScenePrompt::new(case.prompt_text.clone(), FRAMES).unwrap();
    let templates = PromptTemplates::default();
    let cfg = RefineConfig::default();

    let planner = SimulatedPlanner::new(case.clone(), FRAMES, missing(3));
    let recorder = RecordingClient::create(planner, &path).unwrap();
    let live = run_refinement(&prompt, &recorder, &templates, cfg, None).unwrap();
    assert_eq!(recorder.exchanges().len(), 1 + 2 * 3 + 1);

    let replay = ReplayClient::open(&path).unwrap();
    let again = run_refinement(&prompt, &replay, &templates, cfg, None).unwrap();
    assert_eq!(live.to_json(), again.to_json());

    let replies: Vec<String> = recorder
        .exchanges()
        .into_iter()
        .map(|e| e.response)
        .collect();
    let scripted = ScriptedClient::new(replies.clone());
    let third = run_refinement(&prompt, &scripted, &templates, cfg, None).unwrap();
    assert_eq!(third.to_json(), live.to_json());
    assert_eq!(scripted.consumed(), replies);

    // A different prompt diverges from the recording instead of replaying it.
    let other = ScenePrompt::new("a kite over a lake", FRAMES).unwrap();
    let replay = ReplayClient::open(&path).unwrap();
    assert!(run_refinement(&other, &replay, &templates, cfg, None).is_err());
}

#[test]
fn trace_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let case = objects_case();
    let prompt = ScenePrompt::new(case.prompt_text.clone(), FRAMES).unwrap();
    let planner = SimulatedPlanner::new(case, FRAMES, missing(2));
    let trace = run_refinement(
        &prompt,
        &planner,
        &PromptTemplates::default(),
        RefineConfig::default(),
        None,
    )
    .unwrap();
    trace.write_dir(dir.path()).unwrap();
    for k in 1..=3 {
        assert!(dir.path().join(format!("iter_{k}/dss.json")).is_file());
        assert!(dir.path().join(format!("iter_{k}/feedback.json")).is_file());
    }
    assert!(!dir.path().join("iter_4").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap())
            .unwrap();
    assert_eq!(summary["terminal_reason"], "converged");
    assert_eq!(summary["iterations"].as_array().unwrap().len(), 3);
}
