//! Self-refinement benchmark over four rule-checkable layout tasks:
//! multiple objects, object movement, size change and partial visibility.
//!
//! Prompts come from seeded templates; each case carries a machine-checkable
//! expectation. A run scores the first generated plan (without refinement)
//! and the final refined plan (with refinement) of every case.

use std::fmt::Write as _;
use std::sync::Mutex;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dss::{
    extract_track, serialize_dss, BackgroundMotion, BoundingBox, Direction, DynamicSceneSyntax,
    FramePlan, LayoutEntry, ScenePrompt,
};
use crate::exec::{map_range_bounded, Execution};
use crate::llm::{ChatRequest, LlmClient, LlmError, ModelSettings, PromptTemplates, Purpose};
use crate::refine::{RefineConfig, Refiner, TerminalReason};
use crate::verify::{
    area_ratio, check_objects, classify_displacement, detect_size_trend, displacement,
    evaluate_rules, feedback_from_checks, resolve_object, visible_fraction, MotionLabel,
    RuleReport, RuleThresholds, SizeTrend, Task,
};

pub const DEFAULT_CASES_PER_TASK: usize = 20;

/// What a case's final layout must satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    Objects(Vec<String>),
    Movement { object: String, label: MotionLabel },
    Size { object: String, trend: SizeTrend },
    Visibility { object: String, target: f64 },
}

impl Expectation {
    pub fn task(&self) -> Task {
        match self {
            Expectation::Objects(_) => Task::Objects,
            Expectation::Movement { .. } => Task::Movement,
            Expectation::Size { .. } => Task::Size,
            Expectation::Visibility { .. } => Task::Visibility,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub task: Task,
    pub prompt_text: String,
    pub expectation: Expectation,
    pub seed: u64,
}

impl BenchCase {
    pub fn new(prompt_text: impl Into<String>, expectation: Expectation, seed: u64) -> Self {
        Self {
            task: expectation.task(),
            prompt_text: prompt_text.into(),
            expectation,
            seed,
        }
    }
}

const NOUNS: &[&str] = &[
    "cat",
    "dog",
    "horse",
    "car",
    "bird",
    "ball",
    "boat",
    "balloon",
    "rabbit",
    "bicycle",
    "airplane",
    "fox",
    "duck",
    "bus",
    "kite",
    "turtle",
    "robot",
    "deer",
    "train",
    "butterfly",
];

const PLACES: &[&str] = &[
    "in a park",
    "on a beach",
    "on a city street",
    "in a meadow",
    "in a snowy field",
    "by a lake",
    "in a desert",
    "under a cloudy sky",
];

fn task_stream(task: Task) -> u64 {
    match task {
        Task::Objects => 1,
        Task::Movement => 2,
        Task::Size => 3,
        Task::Visibility => 4,
    }
}

fn article(noun: &str) -> &'static str {
    if noun.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn join_objects(nouns: &[&str]) -> String {
    let parts: Vec<String> = nouns
        .iter()
        .map(|n| format!("{} {n}", article(n)))
        .collect();
    match parts.len() {
        0 => String::new(),
        1 => parts[0].clone(),
        k => format!("{} and {}", parts[..k - 1].join(", "), parts[k - 1]),
    }
}

/// `n` seeded cases for `task`. Movement cycles through all four labels,
/// size alternates grow/shrink, visibility alternates 1/2 and 1/4.
pub fn gen_cases(task: Task, n: usize, seed: u64) -> Vec<BenchCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task_stream(task));
    let phase = rng.random_range(0..4usize);
    (0..n)
        .map(|i| {
            let noun = *NOUNS.choose(&mut rng).unwrap();
            let place = *PLACES.choose(&mut rng).unwrap();
            let a = article(noun);
            let case_seed = rng.random::<u64>();
            let (prompt, expectation) = match task {
                Task::Objects => {
                    let k = rng.random_range(2..=4usize);
                    let mut pool = NOUNS.to_vec();
                    pool.shuffle(&mut rng);
                    let names: Vec<&str> = pool[..k].to_vec();
                    (
                        format!("{} playing together {place}", join_objects(&names)),
                        Expectation::Objects(names.iter().map(|s| s.to_string()).collect()),
                    )
                }
                Task::Movement => {
                    let label = [MotionLabel::Left, MotionLabel::Right, MotionLabel::Up, MotionLabel::Down]
                        [(i + phase) % 4];
                    let text = match label {
                        MotionLabel::Left => format!("{a} {noun} moving from right to left {place}"),
                        MotionLabel::Right => format!("{a} {noun} moving from left to right {place}"),
                        MotionLabel::Up => format!("{a} {noun} rising up {place}"),
                        _ => format!("{a} {noun} falling down {place}"),
                    };
                    (
                        text,
                        Expectation::Movement {
                            object: noun.into(),
                            label,
                        },
                    )
                }
                Task::Size => {
                    let trend = if (i + phase) % 2 == 0 { SizeTrend::Grow } else { SizeTrend::Shrink };
                    let text = match trend {
                        SizeTrend::Grow => format!("{a} {noun} approaching the camera {place}, getting bigger"),
                        _ => format!("{a} {noun} moving away from the camera {place}, getting smaller"),
                    };
                    (
                        text,
                        Expectation::Size {
                            object: noun.into(),
                            trend,
                        },
                    )
                }
                Task::Visibility => {
                    let half = (i + phase) % 2 == 0;
                    let text = if half {
                        format!("{a} {noun} {place}, half visible at the right edge of the frame")
                    } else {
                        format!("only a quarter of {a} {noun} visible in the bottom right corner {place}")
                    };
                    (
                        text,
                        Expectation::Visibility {
                            object: noun.into(),
                            target: if half { 0.5 } else { 0.25 },
                        },
                    )
                }
            };
            BenchCase::new(prompt, expectation, case_seed)
        })
        .collect()
}

/// Recover a rule expectation from a prompt phrased like the generated
/// ones (or like "a horse running from right to left").
pub fn infer_case(prompt: &str) -> Option<BenchCase> {
    let lower = prompt.to_lowercase();
    let article_noun = Regex::new(r"\b(?:a|an)\s+([a-z]+)").unwrap();
    let nouns: Vec<String> = article_noun
        .captures_iter(&lower)
        .map(|c| c[1].to_string())
        .filter(|n| !matches!(n.as_str(), "quarter" | "half" | "few" | "lot"))
        .collect();
    let subject = nouns.first()?.clone();

    let has = |phrases: &[&str]| phrases.iter().any(|p| lower.contains(p));

    let expectation = if has(&["half visible", "half of"]) {
        Expectation::Visibility {
            object: subject,
            target: 0.5,
        }
    } else if has(&["quarter"]) {
        Expectation::Visibility {
            object: subject,
            target: 0.25,
        }
    } else if has(&["getting bigger", "approaching", "growing", "grows"]) {
        Expectation::Size {
            object: subject,
            trend: SizeTrend::Grow,
        }
    } else if has(&["getting smaller", "moving away", "shrinking", "shrinks"]) {
        Expectation::Size {
            object: subject,
            trend: SizeTrend::Shrink,
        }
    } else if has(&["from right to left", "to the left", "moving left"]) {
        Expectation::Movement {
            object: subject,
            label: MotionLabel::Left,
        }
    } else if has(&["from left to right", "to the right", "moving right"]) {
        Expectation::Movement {
            object: subject,
            label: MotionLabel::Right,
        }
    } else if has(&[
        "rising",
        "rises",
        "ascending",
        "moving up",
        "from bottom to top",
    ]) {
        Expectation::Movement {
            object: subject,
            label: MotionLabel::Up,
        }
    } else if has(&[
        "falling",
        "falls",
        "descending",
        "moving down",
        "from top to bottom",
    ]) {
        Expectation::Movement {
            object: subject,
            label: MotionLabel::Down,
        }
    } else {
        let (head, _) = lower.split_once(" playing together")?;
        let names: Vec<String> = article_noun
            .captures_iter(head)
            .map(|c| c[1].to_string())
            .collect();
        if names.len() < 2 {
            return None;
        }
        Expectation::Objects(names)
    };
    Some(BenchCase::new(prompt, expectation, 0))
}

/// Score one plan against one case.
///
/// movement: detected label equals the target; size: detected trend equals
/// the target; visibility: visible fraction of the object's box in the last
/// frame within the tolerance of the target; objects: full recall. A missing
/// object is a failed report, not an error.
pub fn score_case(case: &BenchCase, dss: &DynamicSceneSyntax, th: &RuleThresholds) -> RuleReport {
    let failed = |detail: String| RuleReport {
        task: case.task,
        passed: false,
        measured: 0.0,
        detail,
    };
    let track_of =
        |object: &str| resolve_object(dss, object).and_then(|name| extract_track(dss, name).ok());
    match &case.expectation {
        Expectation::Objects(names) => check_objects(dss, names),
        Expectation::Movement { object, label } => {
            match track_of(object).as_ref().map(displacement) {
                Some(Ok((dx, dy))) => {
                    let got = classify_displacement(dx, dy, th.min_displacement);
                    let along = match label {
                        MotionLabel::Left => -dx,
                        MotionLabel::Right => dx,
                        MotionLabel::Up => -dy,
                        MotionLabel::Down => dy,
                        MotionLabel::None => dx.hypot(dy),
                    };
                    RuleReport {
                        task: Task::Movement,
                        passed: got == *label,
                        measured: along,
                        detail: format!(
                            "expected {label}, detected {got} (dx={dx:.3}, dy={dy:.3})"
                        ),
                    }
                }
                Some(Err(e)) => failed(e.to_string()),
                None => failed(format!("{object} not found")),
            }
        }
        Expectation::Size { object, trend } => match track_of(object).as_ref().map(|t| {
            Ok::<_, crate::verify::VerifyError>((
                area_ratio(t)?,
                detect_size_trend(t, th.ratio_threshold)?,
            ))
        }) {
            Some(Ok((r, got))) => RuleReport {
                task: Task::Size,
                passed: got == *trend,
                measured: r,
                detail: format!("expected {trend}, detected {got} (area ratio {r:.3})"),
            },
            Some(Err(e)) => failed(e.to_string()),
            None => failed(format!("{object} not found")),
        },
        Expectation::Visibility { object, target } => {
            let last = dss.num_frames() - 1;
            match track_of(object).and_then(|t| t.boxes[last]) {
                Some(b) => {
                    let v = visible_fraction(&b);
                    RuleReport {
                        task: Task::Visibility,
                        passed: (v - target).abs() <= th.visibility_tolerance + 1e-12,
                        measured: v,
                        detail: format!("final-frame visible fraction {v:.3}, target {target}"),
                    }
                }
                None => failed(format!("{object} absent in final frame {last}")),
            }
        }
    }
}

/// A layout defect the simulated planner can inject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    MissingObject(String),
    /// The object moves against the requested direction.
    WrongMotion,
    /// The object keeps its size.
    WrongSize,
    /// The object stays fully inside the canvas.
    WrongVisibility,
}

fn bbox_around(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).expect("positive size")
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Layout that satisfies `case` except for `faults`.
pub fn render_plan(case: &BenchCase, num_frames: usize, faults: &[Fault]) -> DynamicSceneSyntax {
    let n = num_frames;
    let t = |i: usize| {
        if n > 1 {
            i as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    let mut background = BackgroundMotion::new(Direction::Random, 0.2).unwrap();
    let mut layouts: Vec<Vec<LayoutEntry>> = vec![Vec::new(); n];
    let entry = |name: &str, b: BoundingBox| LayoutEntry {
        object: name.to_string(),
        bbox: b,
    };
    match &case.expectation {
        Expectation::Objects(names) => {
            let k = names.len() as f64;
            for (j, name) in names.iter().enumerate() {
                if faults.contains(&Fault::MissingObject(name.clone())) {
                    continue;
                }
                let cx = (j as f64 + 0.5) / k;
                let w = (0.8 / k).min(0.25);
                for (i, frame) in layouts.iter_mut().enumerate() {
                    let sway = 0.02 * (t(i) - 0.5);
                    frame.push(entry(name, bbox_around(cx + sway, 0.62, w, w)));
                }
            }
        }
        Expectation::Movement { object, label } => {
            let wrong = faults.contains(&Fault::WrongMotion);
            let (from, to, bg) = match label {
                MotionLabel::Right => ((0.2, 0.55), (0.8, 0.55), Direction::Left),
                MotionLabel::Left => ((0.8, 0.55), (0.2, 0.55), Direction::Right),
                MotionLabel::Up => ((0.5, 0.8), (0.5, 0.25), Direction::Down),
                MotionLabel::Down => ((0.5, 0.25), (0.5, 0.8), Direction::Up),
                MotionLabel::None => ((0.5, 0.5), (0.5, 0.5), Direction::Random),
            };
            let (from, to) = if wrong { (to, from) } else { (from, to) };
            background = BackgroundMotion::new(bg, 0.4).unwrap();
            for (i, frame) in layouts.iter_mut().enumerate() {
                let cx = lerp(from.0, to.0, t(i));
                let cy = lerp(from.1, to.1, t(i));
                frame.push(entry(object, bbox_around(cx, cy, 0.2, 0.2)));
            }
        }
        Expectation::Size { object, trend } => {
            let (s0, s1) = match (trend, faults.contains(&Fault::WrongSize)) {
                (_, true) | (SizeTrend::Constant, _) => (0.3, 0.3),
                (SizeTrend::Grow, false) => (0.15, 0.45),
                (SizeTrend::Shrink, false) => (0.45, 0.15),
            };
            for (i, frame) in layouts.iter_mut().enumerate() {
                let s = lerp(s0, s1, t(i));
                frame.push(entry(object, bbox_around(0.5, 0.55, s, s)));
            }
        }
        Expectation::Visibility { object, target } => {
            let w = 0.3;
            let h = 0.3;
            // Ends with `target` of the box on the canvas: half past the
            // right edge, or a quarter in the bottom right corner.
            let (end_x1, end_y1) = if *target >= 0.5 {
                (1.0 - w * target, 0.4)
            } else {
                let side = target.sqrt();
                (1.0 - w * side, 1.0 - h * side)
            };
            let (end_x1, end_y1) = if faults.contains(&Fault::WrongVisibility) {
                (1.0 - w - 0.05, 0.4)
            } else {
                (end_x1, end_y1)
            };
            let (start_x1, start_y1) = (0.35, 0.4);
            for (i, frame) in layouts.iter_mut().enumerate() {
                let x1 = lerp(start_x1, end_x1, t(i));
                let y1 = lerp(start_y1, end_y1, t(i));
                frame.push(entry(
                    object,
                    BoundingBox::new(x1, y1, x1 + w, y1 + h).unwrap(),
                ));
            }
        }
    }
    let prompt = ScenePrompt::new(case.prompt_text.clone(), n).expect("bench prompts are valid");
    let frames = layouts
        .into_iter()
        .enumerate()
        .map(|(i, layout)| FramePlan {
            index: i,
            description: format!("Frame {} of {n}: {}.", i + 1, case.prompt_text),
            layout,
            background,
        })
        .collect();
    DynamicSceneSyntax::new(prompt, frames).expect("rendered plans are valid")
}

/// Confidence a simulated verifier reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierPolicy {
    /// `max(1, 5 - failed)`, same as local feedback.
    Graded,
    /// 5 when every rule passes, otherwise the given score.
    Strict(u8),
}

/// Programmatic stand-in for an LLM on one benchmark case: generates a plan
/// carrying the injected faults, verifies with the rule checks and repairs
/// a fixed number of faults per rectification.
pub struct SimulatedPlanner {
    case: BenchCase,
    num_frames: usize,
    thresholds: RuleThresholds,
    policy: VerifierPolicy,
    fixes_per_rectify: usize,
    faults: Mutex<Vec<Fault>>,
}

impl SimulatedPlanner {
    pub fn new(case: BenchCase, num_frames: usize, faults: Vec<Fault>) -> Self {
        Self {
            case,
            num_frames,
            thresholds: RuleThresholds::default(),
            policy: VerifierPolicy::Strict(2),
            fixes_per_rectify: 1,
            faults: Mutex::new(faults),
        }
    }

    pub fn with_policy(mut self, policy: VerifierPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// `usize::MAX` repairs everything in one rectification.
    pub fn with_fixes_per_rectify(mut self, fixes: usize) -> Self {
        self.fixes_per_rectify = fixes;
        self
    }

    pub fn with_thresholds(mut self, th: RuleThresholds) -> Self {
        self.thresholds = th;
        self
    }

    pub fn remaining_faults(&self) -> Vec<Fault> {
        self.faults.lock().unwrap().clone()
    }

    fn current(&self) -> DynamicSceneSyntax {
        render_plan(&self.case, self.num_frames, &self.faults.lock().unwrap())
    }
}

impl LlmClient for SimulatedPlanner {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        match request.purpose {
            Purpose::Generate => Ok(serialize_dss(&self.current())),
            Purpose::Verify => {
                let checks = evaluate_rules(&self.current(), &self.case, &self.thresholds);
                let mut fb = feedback_from_checks(&checks);
                if let VerifierPolicy::Strict(score) = self.policy {
                    if checks.iter().any(|c| !c.passed) {
                        fb.confidence = score.clamp(1, 5);
                    }
                }
                Ok(serde_json::to_string(&fb).expect("feedback serializes"))
            }
            Purpose::Rectify => {
                {
                    let mut faults = self.faults.lock().unwrap();
                    let k = self.fixes_per_rectify.min(faults.len());
                    faults.drain(..k);
                }
                Ok(serialize_dss(&self.current()))
            }
        }
    }
}

/// Faults for a deterministic `rate` fraction (rounded) of the cases of
/// each task, one task-specific defect per case; objects cases lose one
/// or two objects.
pub fn injection_schedule(cases: &[BenchCase], rate: f64, seed: u64) -> Vec<Vec<Fault>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xfa17);
    let mut chosen = Vec::new();
    for task in Task::ALL {
        let mut of_task: Vec<usize> = (0..cases.len())
            .filter(|&i| cases[i].task == task)
            .collect();
        let count = ((of_task.len() as f64) * rate.clamp(0.0, 1.0)).round() as usize;
        of_task.shuffle(&mut rng);
        chosen.extend_from_slice(&of_task[..count]);
    }
    let mut faults = vec![Vec::new(); cases.len()];
    for i in chosen {
        faults[i] = match &cases[i].expectation {
            Expectation::Objects(names) => {
                let missing = rng
                    .random_range(1..=2usize)
                    .min(names.len().saturating_sub(1))
                    .max(1);
                names[names.len() - missing..]
                    .iter()
                    .map(|n| Fault::MissingObject(n.clone()))
                    .collect()
            }
            Expectation::Movement { .. } => vec![Fault::WrongMotion],
            Expectation::Size { .. } => vec![Fault::WrongSize],
            Expectation::Visibility { .. } => vec![Fault::WrongVisibility],
        };
    }
    faults
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub task: Task,
    pub index: usize,
    pub case: BenchCase,
    pub without_refine: RuleReport,
    pub with_refine: RuleReport,
    pub iterations: usize,
    pub terminal_reason: Option<TerminalReason>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: Task,
    pub cases: usize,
    pub without_refine: f64,
    pub with_refine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub tasks: Vec<TaskAccuracy>,
    pub outcomes: Vec<CaseOutcome>,
}

impl BenchResult {
    pub fn accuracy(&self, task: Task) -> Option<&TaskAccuracy> {
        self.tasks.iter().find(|t| t.task == task)
    }

    /// Plain-text table: one row per setting, one column per task.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<18}", "Method");
        for t in &self.tasks {
            let _ = write!(out, " | {:>10}", capitalize(t.task.as_str()));
        }
        out.push('\n');
        out.push_str(&"-".repeat(18 + 13 * self.tasks.len()));
        out.push('\n');
        for (label, with) in [("w/o self-refine", false), ("w/ self-refine", true)] {
            let _ = write!(out, "{label:<18}");
            for t in &self.tasks {
                let acc = if with {
                    t.with_refine
                } else {
                    t.without_refine
                };
                let _ = write!(out, " | {:>9.0}%", acc * 100.0);
            }
            out.push('\n');
        }
        out
    }

    /// One JSON object per case and setting.
    pub fn reports_jsonl(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            for (setting, report) in [
                ("without_refine", &o.without_refine),
                ("with_refine", &o.with_refine),
            ] {
                let line = serde_json::json!({
                    "task": o.task,
                    "index": o.index,
                    "setting": setting,
                    "prompt": o.case.prompt_text,
                    "report": report,
                });
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench result serializes")
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
        .unwrap_or_default()
}

/// Settings for [`run_benchmark`] beyond the refinement config.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub cases_per_task: usize,
    pub seed: u64,
    pub num_frames: usize,
    pub tasks: Vec<Task>,
    /// Maximum cases in flight at once.
    pub concurrency: usize,
    pub execution: Execution,
    pub templates: PromptTemplates,
    pub settings: ModelSettings,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            cases_per_task: DEFAULT_CASES_PER_TASK,
            seed: 0,
            num_frames: 8,
            tasks: Task::ALL.to_vec(),
            concurrency: 4,
            execution: Execution::default(),
            templates: PromptTemplates::default(),
            settings: ModelSettings::default(),
        }
    }
}

/// Builds the client that serves one case (fresh per case so transcripts
/// and scripted state stay per-case).
pub type ClientFactory<'a> =
    dyn Fn(&BenchCase, usize) -> Result<Box<dyn LlmClient>, LlmError> + Sync + 'a;

pub fn all_cases(opts: &BenchOptions) -> Vec<(usize, BenchCase)> {
    opts.tasks
        .iter()
        .flat_map(|&task| {
            gen_cases(task, opts.cases_per_task, opts.seed)
                .into_iter()
                .enumerate()
        })
        .collect()
}

fn run_case(
    factory: &ClientFactory<'_>,
    cfg: &RefineConfig,
    opts: &BenchOptions,
    index: usize,
    case: &BenchCase,
) -> CaseOutcome {
    let fail = |error: String| {
        let report = RuleReport {
            task: case.task,
            passed: false,
            measured: 0.0,
            detail: format!("run failed: {error}"),
        };
        CaseOutcome {
            task: case.task,
            index,
            case: case.clone(),
            without_refine: report.clone(),
            with_refine: report,
            iterations: 0,
            terminal_reason: None,
            error: Some(error),
        }
    };
    let client = match factory(case, index) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string()),
    };
    let prompt = match ScenePrompt::new(case.prompt_text.clone(), opts.num_frames) {
        Ok(p) => p,
        Err(e) => return fail(e.to_string()),
    };
    let refiner =
        Refiner::new(client.as_ref(), &opts.templates, *cfg).with_settings(opts.settings.clone());
    match refiner.run(&prompt, Some(case)) {
        Ok(trace) => CaseOutcome {
            task: case.task,
            index,
            case: case.clone(),
            without_refine: score_case(case, &trace.initial().dss, &cfg.rules),
            with_refine: score_case(case, &trace.last().dss, &cfg.rules),
            iterations: trace.len(),
            terminal_reason: Some(trace.terminal_reason),
            error: None,
        },
        Err(e) => fail(e.to_string()),
    }
}

/// Run every case, scoring the first plan and the final refined plan.
/// Failures of individual cases are recorded, never fatal.
pub fn run_benchmark(
    factory: &ClientFactory<'_>,
    cfg: &RefineConfig,
    opts: &BenchOptions,
) -> BenchResult {
    let cases = all_cases(opts);
    let mut outcomes =
        map_range_bounded(opts.execution, cases.len(), opts.concurrency.max(1), |k| {
            let (index, case) = &cases[k];
            run_case(factory, cfg, opts, *index, case)
        });
    outcomes.sort_by_key(|o| (o.task, o.index));

    let tasks = opts
        .tasks
        .iter()
        .map(|&task| {
            let of_task: Vec<&CaseOutcome> = outcomes.iter().filter(|o| o.task == task).collect();
            let n = of_task.len();
            let rate = |f: fn(&CaseOutcome) -> bool| {
                if n == 0 {
                    0.0
                } else {
                    of_task.iter().filter(|o| f(o)).count() as f64 / n as f64
                }
            };
            TaskAccuracy {
                task,
                cases: n,
                without_refine: rate(|o| o.without_refine.passed),
                with_refine: rate(|o| o.with_refine.passed),
            }
        })
        .collect();
    BenchResult { tasks, outcomes }
}
