//! Generate a scene plan, then verify and rectify it until the verifier's
//! confidence clears the threshold or the iteration budget runs out.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bench::BenchCase;
use crate::dss::{
    dss_to_value, parse_dss, serialize_dss, DssError, DynamicSceneSyntax, FramePlan, ScenePrompt,
};
use crate::llm::{
    LlmClient, LlmError, Message, ModelSettings, PromptTemplates, Purpose, TemplateError,
    TemplateKind,
};
use crate::verify::{local_feedback, FeedbackReport, RuleThresholds};

pub const DEFAULT_THRESHOLD: u8 = 3;
pub const DEFAULT_MAX_ITERATIONS: usize = 5;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{step} reply unusable after one repair: {message}")]
    LlmFormat { step: &'static str, message: String },
    #[error("no confidence score found in verifier reply: {0:?}")]
    FeedbackUnparseable(String),
    #[error("invalid refinement config: {0}")]
    Config(String),
    #[error("local feedback needs a rule expectation for the prompt")]
    NoExpectation,
    #[error("writing trace: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    Llm,
    Local,
}

/// How confidence is compared to the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acceptance {
    /// `c > threshold`
    Exceeds,
    /// `c >= threshold`
    AtLeast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub threshold: u8,
    pub max_iterations: usize,
    pub feedback_mode: FeedbackMode,
    pub acceptance: Acceptance,
    pub rules: RuleThresholds,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            feedback_mode: FeedbackMode::Llm,
            acceptance: Acceptance::Exceeds,
            rules: RuleThresholds::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(1..=5).contains(&self.threshold) {
            return Err(RefineError::Config(format!(
                "threshold must be in 1..=5, got {}",
                self.threshold
            )));
        }
        if self.max_iterations == 0 {
            return Err(RefineError::Config(
                "max_iterations must be at least 1".into(),
            ));
        }
        self.rules
            .validate()
            .map_err(|e| RefineError::Config(e.to_string()))
    }

    pub fn accepts(&self, confidence: u8) -> bool {
        match self.acceptance {
            Acceptance::Exceeds => confidence > self.threshold,
            Acceptance::AtLeast => confidence >= self.threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalReason {
    Converged,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iteration {
    pub dss: DynamicSceneSyntax,
    pub feedback: FeedbackReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTrace {
    pub iterations: Vec<Iteration>,
    pub terminal_reason: TerminalReason,
    pub config: RefineConfig,
}

impl RefinementTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn initial(&self) -> &Iteration {
        &self.iterations[0]
    }

    pub fn last(&self) -> &Iteration {
        self.iterations
            .last()
            .expect("trace has at least one iteration")
    }

    /// Zero-based index of the highest-confidence iteration; later
    /// iterations win ties.
    pub fn best_index(&self) -> usize {
        self.iterations
            .iter()
            .enumerate()
            .max_by_key(|(i, it)| (it.feedback.confidence, *i))
            .map(|(i, _)| i)
            .expect("trace has at least one iteration")
    }

    pub fn best(&self) -> &Iteration {
        &self.iterations[self.best_index()]
    }

    /// Full trace as JSON, stable across runs for identical inputs.
    pub fn to_json(&self) -> String {
        let iterations: Vec<Value> = self
            .iterations
            .iter()
            .enumerate()
            .map(|(k, it)| {
                json!({
                    "iteration": k + 1,
                    "confidence": it.feedback.confidence,
                    "feedback": it.feedback,
                    "dss": dss_to_value(&it.dss),
                })
            })
            .collect();
        let doc = json!({
            "config": self.config,
            "terminal_reason": self.terminal_reason,
            "selected_iteration": self.best_index() + 1,
            "iterations": iterations,
        });
        serde_json::to_string_pretty(&doc).expect("trace serializes")
    }

    /// Writes `iter_{k}/dss.json`, `iter_{k}/feedback.json` (k from 1) and a
    /// `trace.json` summary under `out`.
    pub fn write_dir(&self, out: &Path) -> Result<(), RefineError> {
        fs::create_dir_all(out)?;
        let mut rows = Vec::new();
        for (k, it) in self.iterations.iter().enumerate() {
            let name = format!("iter_{}", k + 1);
            let dir = out.join(&name);
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("dss.json"), serialize_dss(&it.dss))?;
            fs::write(dir.join("feedback.json"), it.feedback.to_json())?;
            rows.push(json!({
                "iteration": k + 1,
                "confidence": it.feedback.confidence,
                "dss": format!("{name}/dss.json"),
                "feedback": format!("{name}/feedback.json"),
            }));
        }
        let summary = json!({
            "prompt": self.initial().dss.prompt().text,
            "num_frames": self.initial().dss.num_frames(),
            "config": self.config,
            "terminal_reason": self.terminal_reason,
            "selected_iteration": self.best_index() + 1,
            "iterations": rows,
        });
        fs::write(
            out.join("trace.json"),
            serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )?;
        Ok(())
    }
}

/// Pull the JSON object out of a reply that may wrap it in prose or a
/// fenced code block.
pub fn extract_json_object(reply: &str) -> &str {
    if let Some(start) = reply.find("```") {
        let after = &reply[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        if let Some(end) = body.find("```") {
            return body[..end].trim();
        }
    }
    match (reply.find('{'), reply.rfind('}')) {
        (Some(a), Some(b)) if a < b => &reply[a..=b],
        _ => reply.trim(),
    }
}

fn confidence_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([1-5])\b").unwrap())
}

fn confidence_after_token(text: &str) -> Option<u8> {
    let lower = text.to_lowercase();
    let at = lower.find("confidence")?;
    let rest = &text[at + "confidence".len()..];
    confidence_pattern()
        .captures(rest)
        .and_then(|c| c[1].parse().ok())
}

/// Read verifier feedback. Structured JSON is preferred; otherwise the
/// first standalone 1..=5 after the word "confidence" is used.
pub fn parse_feedback(reply: &str) -> Result<FeedbackReport, RefineError> {
    if let Ok(v) = serde_json::from_str::<Value>(extract_json_object(reply)) {
        let confidence = match &v["confidence"] {
            Value::Number(n) => n.as_i64().or_else(|| n.as_f64().map(|f| f.round() as i64)),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        };
        if let Some(c) = confidence {
            let analysis = v["analysis"].as_str().unwrap_or_default().to_string();
            let suggestions = match &v["suggestions"] {
                Value::Array(items) => items
                    .iter()
                    .map(|s| {
                        s.as_str()
                            .map(str::to_owned)
                            .unwrap_or_else(|| s.to_string())
                    })
                    .collect(),
                Value::String(s) => vec![s.clone()],
                _ => Vec::new(),
            };
            return Ok(FeedbackReport::new(analysis, suggestions, c));
        }
    }
    confidence_after_token(reply)
        .map(|c| FeedbackReport::new(reply.trim(), Vec::new(), c as i64))
        .ok_or_else(|| RefineError::FeedbackUnparseable(reply.to_string()))
}

/// Drives one prompt through generate / verify / rectify.
pub struct Refiner<'a> {
    client: &'a dyn LlmClient,
    templates: &'a PromptTemplates,
    settings: ModelSettings,
    config: RefineConfig,
}

impl<'a> Refiner<'a> {
    pub fn new(
        client: &'a dyn LlmClient,
        templates: &'a PromptTemplates,
        config: RefineConfig,
    ) -> Self {
        Self {
            client,
            templates,
            settings: ModelSettings::default(),
            config,
        }
    }

    pub fn with_settings(mut self, settings: ModelSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn config(&self) -> &RefineConfig {
        &self.config
    }

    /// Send `prompt`, parse with `accept`; on failure ask once more quoting
    /// the error.
    fn ask_for_dss(
        &self,
        purpose: Purpose,
        prompt: String,
        accept: impl Fn(&str) -> Result<DynamicSceneSyntax, DssError>,
    ) -> Result<DynamicSceneSyntax, RefineError> {
        let step = match purpose {
            Purpose::Generate => "generate",
            Purpose::Verify => "verify",
            Purpose::Rectify => "rectify",
        };
        let mut messages = vec![Message::user(prompt)];
        let reply = self
            .client
            .complete(&self.settings.request(purpose, messages.clone()))?;
        let err = match accept(extract_json_object(&reply)) {
            Ok(dss) => return Ok(dss),
            Err(e) => e,
        };
        messages.push(Message::assistant(reply));
        messages.push(Message::user(format!(
            "Your previous answer could not be used: {err}. Reply again with only the complete JSON object in the format described above."
        )));
        let reply = self
            .client
            .complete(&self.settings.request(purpose, messages))?;
        accept(extract_json_object(&reply)).map_err(|e| RefineError::LlmFormat {
            step,
            message: e.to_string(),
        })
    }

    pub fn generate(&self, prompt: &ScenePrompt) -> Result<DynamicSceneSyntax, RefineError> {
        let bindings = BTreeMap::from([
            ("prompt", prompt.text.clone()),
            ("num_frames", prompt.num_frames.to_string()),
        ]);
        let text = self
            .templates
            .get(TemplateKind::Generate)
            .render(&bindings)?;
        self.ask_for_dss(Purpose::Generate, text, |json| {
            let dss = parse_dss(json)?;
            conform(prompt, dss, None)
        })
    }

    pub fn verify(
        &self,
        prompt: &ScenePrompt,
        dss: &DynamicSceneSyntax,
        case: Option<&BenchCase>,
    ) -> Result<FeedbackReport, RefineError> {
        match self.config.feedback_mode {
            FeedbackMode::Local => {
                let case = case.ok_or(RefineError::NoExpectation)?;
                Ok(local_feedback(dss, case, &self.config.rules))
            }
            FeedbackMode::Llm => {
                let bindings = BTreeMap::from([
                    ("prompt", prompt.text.clone()),
                    ("dss_json", serialize_dss(dss)),
                ]);
                let text = self.templates.get(TemplateKind::Verify).render(&bindings)?;
                let reply = self.client.complete(
                    &self
                        .settings
                        .request(Purpose::Verify, vec![Message::user(text)]),
                )?;
                parse_feedback(&reply)
            }
        }
    }

    /// Ask for corrected layouts. Descriptions are carried over from `dss`.
    pub fn rectify(
        &self,
        prompt: &ScenePrompt,
        dss: &DynamicSceneSyntax,
        feedback: &FeedbackReport,
    ) -> Result<DynamicSceneSyntax, RefineError> {
        let bindings = BTreeMap::from([
            ("prompt", prompt.text.clone()),
            ("dss_json", serialize_dss(dss)),
            ("feedback_json", feedback.to_json()),
        ]);
        let text = self
            .templates
            .get(TemplateKind::Rectify)
            .render(&bindings)?;
        self.ask_for_dss(Purpose::Rectify, text, |json| {
            let fixed = parse_dss(json)?;
            conform(prompt, fixed, Some(dss))
        })
    }

    /// The full loop. `case` is required for local feedback and ignored
    /// otherwise.
    pub fn run(
        &self,
        prompt: &ScenePrompt,
        case: Option<&BenchCase>,
    ) -> Result<RefinementTrace, RefineError> {
        self.config.validate()?;
        if self.config.feedback_mode == FeedbackMode::Local && case.is_none() {
            return Err(RefineError::NoExpectation);
        }
        let mut dss = self.generate(prompt)?;
        let mut iterations = Vec::new();
        loop {
            let feedback = self.verify(prompt, &dss, case)?;
            let accepted = self.config.accepts(feedback.confidence);
            iterations.push(Iteration {
                dss: dss.clone(),
                feedback: feedback.clone(),
            });
            if accepted || iterations.len() == self.config.max_iterations {
                let terminal_reason = if accepted {
                    TerminalReason::Converged
                } else {
                    TerminalReason::Exhausted
                };
                return Ok(RefinementTrace {
                    iterations,
                    terminal_reason,
                    config: self.config,
                });
            }
            dss = self.rectify(prompt, &dss, &feedback)?;
        }
    }
}

/// Force the user's prompt onto a reply, check the frame count and, for
/// rectified plans, restore the previous descriptions.
fn conform(
    prompt: &ScenePrompt,
    dss: DynamicSceneSyntax,
    previous: Option<&DynamicSceneSyntax>,
) -> Result<DynamicSceneSyntax, DssError> {
    let (_, mut frames) = dss.into_parts();
    if frames.len() != prompt.num_frames {
        return Err(DssError::Schema(format!(
            "expected {} frames, got {}",
            prompt.num_frames,
            frames.len()
        )));
    }
    if let Some(prev) = previous {
        for (frame, old) in frames.iter_mut().zip(prev.frames()) {
            let FramePlan { description, .. } = old;
            frame.description = description.clone();
        }
    }
    DynamicSceneSyntax::new(prompt.clone(), frames)
}

pub fn generate_syntax(
    prompt: &ScenePrompt,
    client: &dyn LlmClient,
    templates: &PromptTemplates,
) -> Result<DynamicSceneSyntax, RefineError> {
    Refiner::new(client, templates, RefineConfig::default()).generate(prompt)
}

pub fn run_refinement(
    prompt: &ScenePrompt,
    client: &dyn LlmClient,
    templates: &PromptTemplates,
    config: RefineConfig,
    case: Option<&BenchCase>,
) -> Result<RefinementTrace, RefineError> {
    Refiner::new(client, templates, config).run(prompt, case)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dss::{BackgroundMotion, BoundingBox, Direction, LayoutEntry};
    use crate::llm::ScriptedClient;

    fn plan(prompt: &ScenePrompt, x_step: f64) -> DynamicSceneSyntax {
        let frames = (0..prompt.num_frames)
            .map(|i| FramePlan {
                index: i,
                description: format!("a ball, frame {i}"),
                layout: vec![LayoutEntry {
                    object: "ball".into(),
                    bbox: BoundingBox::new(
                        0.1 + x_step * i as f64,
                        0.4,
                        0.2 + x_step * i as f64,
                        0.5,
                    )
                    .unwrap(),
                }],
                background: BackgroundMotion::new(Direction::Left, 0.2).unwrap(),
            })
            .collect();
        DynamicSceneSyntax::new(prompt.clone(), frames).unwrap()
    }

    fn fb(c: u8) -> String {
        format!(r#"{{"analysis":"a","suggestions":[],"confidence":{c}}}"#)
    }

    #[test]
    fn feedback_json_and_fallback() {
        assert_eq!(parse_feedback(&fb(5)).unwrap().confidence, 5);
        assert_eq!(
            parse_feedback("The layouts look wrong... Confidence: 2/5")
                .unwrap()
                .confidence,
            2
        );
        assert!(matches!(
            parse_feedback("no numbers here"),
            Err(RefineError::FeedbackUnparseable(_))
        ));
        assert_eq!(
            parse_feedback(r#"{"analysis":"x","confidence":9}"#)
                .unwrap()
                .confidence,
            5
        );
        assert_eq!(
            parse_feedback("```json\n{\"confidence\": 0}\n```")
                .unwrap()
                .confidence,
            1
        );
        assert_eq!(
            parse_feedback("CONFIDENCE 12, maybe 4").unwrap().confidence,
            4
        );
    }

    #[test]
    fn generate_passes_through_valid_reply() {
        let prompt = ScenePrompt::new("a ball rolling right", 8).unwrap();
        let dss = plan(&prompt, 0.05);
        let client = ScriptedClient::new([serialize_dss(&dss)]);
        let got = generate_syntax(&prompt, &client, &PromptTemplates::default()).unwrap();
        assert_eq!(got, dss);
    }

    #[test]
    fn generate_repairs_once() {
        let prompt = ScenePrompt::new("a ball rolling right", 8).unwrap();
        let dss = plan(&prompt, 0.05);
        let client = ScriptedClient::new([
            "Sure! Here is a plan.".to_string(),
            format!("```json\n{}\n```", serialize_dss(&dss)),
        ]);
        let got = generate_syntax(&prompt, &client, &PromptTemplates::default()).unwrap();
        assert_eq!(got, dss);
        let requests = client.requests();
        assert_eq!(requests[1].messages.len(), 3);
        assert!(requests[1].messages[2]
            .content
            .contains("could not be used"));
    }

    #[test]
    fn generate_gives_up_after_two_bad_replies() {
        let prompt = ScenePrompt::new("a ball", 2).unwrap();
        let client = ScriptedClient::new(["prose", "more prose"]);
        assert!(matches!(
            generate_syntax(&prompt, &client, &PromptTemplates::default()),
            Err(RefineError::LlmFormat {
                step: "generate",
                ..
            })
        ));
    }

    #[test]
    fn wrong_frame_count_triggers_repair() {
        let prompt = ScenePrompt::new("a ball", 3).unwrap();
        let short = plan(&ScenePrompt::new("a ball", 2).unwrap(), 0.1);
        let good = plan(&prompt, 0.1);
        let client = ScriptedClient::new([serialize_dss(&short), serialize_dss(&good)]);
        assert_eq!(
            generate_syntax(&prompt, &client, &PromptTemplates::default()).unwrap(),
            good
        );
    }

    #[test]
    fn converges_on_strictly_exceeding_threshold() {
        let prompt = ScenePrompt::new("a ball rolling right", 4).unwrap();
        let d = serialize_dss(&plan(&prompt, 0.1));
        let client = ScriptedClient::new([d.clone(), fb(2), d.clone(), fb(3), d.clone(), fb(4)]);
        let trace = run_refinement(
            &prompt,
            &client,
            &PromptTemplates::default(),
            RefineConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(trace.terminal_reason, TerminalReason::Converged);
        assert_eq!(client.remaining(), 0);
    }

    #[test]
    fn immediate_convergence_skips_rectify() {
        let prompt = ScenePrompt::new("a ball", 2).unwrap();
        let client = ScriptedClient::new([serialize_dss(&plan(&prompt, 0.1)), fb(5)]);
        let trace = run_refinement(
            &prompt,
            &client,
            &PromptTemplates::default(),
            RefineConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.terminal_reason, TerminalReason::Converged);
        assert!(client
            .requests()
            .iter()
            .all(|r| r.purpose != Purpose::Rectify));
    }

    #[test]
    fn exhausts_after_max_iterations() {
        let prompt = ScenePrompt::new("a ball", 2).unwrap();
        let d = serialize_dss(&plan(&prompt, 0.1));
        let mut script = vec![d.clone()];
        for k in 0..5 {
            script.push(fb(1));
            if k < 4 {
                script.push(d.clone());
            }
        }
        let client = ScriptedClient::new(script);
        let trace = run_refinement(
            &prompt,
            &client,
            &PromptTemplates::default(),
            RefineConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(trace.len(), 5);
        assert_eq!(trace.terminal_reason, TerminalReason::Exhausted);
        assert_eq!(client.remaining(), 0);
    }

    #[test]
    fn at_least_acceptance_is_configurable() {
        let cfg = RefineConfig {
            acceptance: Acceptance::AtLeast,
            ..Default::default()
        };
        assert!(cfg.accepts(3));
        assert!(!RefineConfig::default().accepts(3));
        assert!(RefineConfig::default().accepts(4));
    }

    #[test]
    fn rectify_keeps_descriptions() {
        let prompt = ScenePrompt::new("a ball", 2).unwrap();
        let original = plan(&prompt, 0.1);
        let (p, mut frames) = original.clone().into_parts();
        frames[1].description = "rewritten by the model".into();
        frames[1].layout[0].bbox = BoundingBox::new(0.5, 0.4, 0.6, 0.5).unwrap();
        let rewritten = DynamicSceneSyntax::new(p, frames).unwrap();
        let client = ScriptedClient::new([serialize_dss(&rewritten)]);
        let templates = PromptTemplates::default();
        let refiner = Refiner::new(&client, &templates, RefineConfig::default());
        let fixed = refiner
            .rectify(&prompt, &original, &FeedbackReport::new("x", vec![], 2))
            .unwrap();
        assert_eq!(
            fixed.frames()[1].description,
            original.frames()[1].description
        );
        assert_eq!(fixed.frames()[1].layout[0].bbox.x1(), 0.5);
    }

    #[test]
    fn local_mode_requires_case() {
        let prompt = ScenePrompt::new("a ball", 2).unwrap();
        let client = ScriptedClient::new(Vec::<String>::new());
        let cfg = RefineConfig {
            feedback_mode: FeedbackMode::Local,
            ..Default::default()
        };
        assert!(matches!(
            run_refinement(&prompt, &client, &PromptTemplates::default(), cfg, None),
            Err(RefineError::NoExpectation)
        ));
    }

    #[test]
    fn best_iteration_prefers_latest_tie() {
        let prompt = ScenePrompt::new("a ball", 2).unwrap();
        let d = serialize_dss(&plan(&prompt, 0.1));
        let client = ScriptedClient::new([d.clone(), fb(3), d.clone(), fb(2), d.clone(), fb(3)]);
        let cfg = RefineConfig {
            max_iterations: 3,
            ..Default::default()
        };
        let trace =
            run_refinement(&prompt, &client, &PromptTemplates::default(), cfg, None).unwrap();
        assert_eq!(trace.terminal_reason, TerminalReason::Exhausted);
        assert_eq!(trace.best_index(), 2);
    }

    #[test]
    fn trace_directory_layout() {
        let prompt = ScenePrompt::new("a ball", 2).unwrap();
        let d = serialize_dss(&plan(&prompt, 0.1));
        let client = ScriptedClient::new([d.clone(), fb(2), d, fb(5)]);
        let trace = run_refinement(
            &prompt,
            &client,
            &PromptTemplates::default(),
            RefineConfig::default(),
            None,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        trace.write_dir(dir.path()).unwrap();
        for k in 1..=2 {
            assert!(dir.path().join(format!("iter_{k}/dss.json")).is_file());
            assert!(dir.path().join(format!("iter_{k}/feedback.json")).is_file());
        }
        let summary: Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("trace.json")).unwrap())
                .unwrap();
        assert_eq!(summary["terminal_reason"], "converged");
        assert_eq!(summary["iterations"].as_array().unwrap().len(), 2);
    }
}
