//! Rule-based spatio-temporal checks on layouts.
//!
//! These are the metrics behind the refinement benchmark and the local,
//! deterministic stand-in for an LLM verifier.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchCase, Expectation};
use crate::dss::{extract_track, BoundingBox, DynamicSceneSyntax, ObjectTrack};

pub const DEFAULT_MIN_DISPLACEMENT: f64 = 0.05;
pub const DEFAULT_RATIO_THRESHOLD: f64 = 1.2;
pub const DEFAULT_VISIBILITY_TOLERANCE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("track for {object:?} has {present} present box(es), need at least 2")]
    InsufficientTrack { object: String, present: usize },
    #[error("threshold out of range: {0}")]
    BadThreshold(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionLabel {
    Left,
    Right,
    Up,
    Down,
    None,
}

impl MotionLabel {
    pub fn mirrored_horizontally(self) -> Self {
        match self {
            MotionLabel::Left => MotionLabel::Right,
            MotionLabel::Right => MotionLabel::Left,
            other => other,
        }
    }

    pub fn mirrored_vertically(self) -> Self {
        match self {
            MotionLabel::Up => MotionLabel::Down,
            MotionLabel::Down => MotionLabel::Up,
            other => other,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MotionLabel::Left => "left",
            MotionLabel::Right => "right",
            MotionLabel::Up => "up",
            MotionLabel::Down => "down",
            MotionLabel::None => "none",
        }
    }
}

impl fmt::Display for MotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeTrend {
    Grow,
    Shrink,
    Constant,
}

impl SizeTrend {
    pub fn reversed(self) -> Self {
        match self {
            SizeTrend::Grow => SizeTrend::Shrink,
            SizeTrend::Shrink => SizeTrend::Grow,
            SizeTrend::Constant => SizeTrend::Constant,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SizeTrend::Grow => "grow",
            SizeTrend::Shrink => "shrink",
            SizeTrend::Constant => "constant",
        }
    }
}

impl fmt::Display for SizeTrend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The four benchmark task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Objects,
    Movement,
    Size,
    Visibility,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Objects, Task::Movement, Task::Size, Task::Visibility];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Objects => "objects",
            Task::Movement => "movement",
            Task::Size => "size",
            Task::Visibility => "visibility",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub task: Task,
    pub passed: bool,
    /// Displacement, area ratio, visible fraction or recall, by task.
    pub measured: f64,
    pub detail: String,
}

impl RuleReport {
    fn new(task: Task, passed: bool, measured: f64, detail: String) -> Self {
        let measured = if measured.is_finite() { measured } else { 0.0 };
        Self {
            task,
            passed,
            measured,
            detail,
        }
    }
}

/// Verifier output: what is wrong, how to fix it, and a 1..=5 confidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub analysis: String,
    pub suggestions: Vec<String>,
    pub confidence: u8,
}

impl FeedbackReport {
    /// Clamps `confidence` into 1..=5.
    pub fn new(analysis: impl Into<String>, suggestions: Vec<String>, confidence: i64) -> Self {
        Self {
            analysis: analysis.into(),
            suggestions,
            confidence: confidence.clamp(1, 5) as u8,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("feedback serializes")
    }
}

/// Tunable rule thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleThresholds {
    pub min_displacement: f64,
    pub ratio_threshold: f64,
    pub visibility_tolerance: f64,
}

impl Default for RuleThresholds {
    fn default() -> Self {
        Self {
            min_displacement: DEFAULT_MIN_DISPLACEMENT,
            ratio_threshold: DEFAULT_RATIO_THRESHOLD,
            visibility_tolerance: DEFAULT_VISIBILITY_TOLERANCE,
        }
    }
}

impl RuleThresholds {
    pub fn validate(&self) -> Result<(), VerifyError> {
        if !(self.min_displacement > 0.0 && self.min_displacement < 1.0) {
            return Err(VerifyError::BadThreshold(format!(
                "min displacement must be in (0, 1), got {}",
                self.min_displacement
            )));
        }
        if !(self.ratio_threshold > 1.0 && self.ratio_threshold.is_finite()) {
            return Err(VerifyError::BadThreshold(format!(
                "area ratio threshold must exceed 1, got {}",
                self.ratio_threshold
            )));
        }
        if !(self.visibility_tolerance >= 0.0 && self.visibility_tolerance <= 1.0) {
            return Err(VerifyError::BadThreshold(format!(
                "visibility tolerance must be in [0, 1], got {}",
                self.visibility_tolerance
            )));
        }
        Ok(())
    }
}

fn endpoints(track: &ObjectTrack) -> Result<(&BoundingBox, &BoundingBox), VerifyError> {
    let present = track.present().count();
    match (track.first_present(), track.last_present()) {
        (Some((a, first)), Some((b, last))) if a != b => Ok((first, last)),
        _ => Err(VerifyError::InsufficientTrack {
            object: track.object.clone(),
            present,
        }),
    }
}

/// Centroid displacement between the first and last present boxes.
pub fn displacement(track: &ObjectTrack) -> Result<(f64, f64), VerifyError> {
    let (first, last) = endpoints(track)?;
    let (x0, y0) = first.centroid();
    let (x1, y1) = last.centroid();
    Ok((x1 - x0, y1 - y0))
}

/// Dominant-axis motion label from the endpoint centroid displacement.
///
/// The dominant component must reach `min_disp` and the other must stay
/// below `min_disp / 2`; otherwise the motion is `None`. Positive x is
/// right, positive y is down.
pub fn detect_movement(track: &ObjectTrack, min_disp: f64) -> Result<MotionLabel, VerifyError> {
    let (dx, dy) = displacement(track)?;
    Ok(classify_displacement(dx, dy, min_disp))
}

pub fn classify_displacement(dx: f64, dy: f64, min_disp: f64) -> MotionLabel {
    let (major, minor, horizontal) = if dx.abs() >= dy.abs() {
        (dx, dy, true)
    } else {
        (dy, dx, false)
    };
    if major.abs() < min_disp || minor.abs() >= min_disp / 2.0 {
        return MotionLabel::None;
    }
    match (horizontal, major > 0.0) {
        (true, true) => MotionLabel::Right,
        (true, false) => MotionLabel::Left,
        (false, true) => MotionLabel::Down,
        (false, false) => MotionLabel::Up,
    }
}

/// Ratio of last to first present box area.
pub fn area_ratio(track: &ObjectTrack) -> Result<f64, VerifyError> {
    let (first, last) = endpoints(track)?;
    Ok(last.area() / first.area())
}

pub fn detect_size_trend(
    track: &ObjectTrack,
    ratio_threshold: f64,
) -> Result<SizeTrend, VerifyError> {
    let (first, last) = endpoints(track)?;
    Ok(classify_areas(first.area(), last.area(), ratio_threshold))
}

/// Grow when `last >= t * first`, shrink when `first >= t * last`.
///
/// Compares areas rather than their quotient so that swapping the
/// endpoints swaps grow and shrink exactly.
pub fn classify_areas(first: f64, last: f64, ratio_threshold: f64) -> SizeTrend {
    if last >= ratio_threshold * first {
        SizeTrend::Grow
    } else if first >= ratio_threshold * last {
        SizeTrend::Shrink
    } else {
        SizeTrend::Constant
    }
}

/// Trend for a precomputed ratio `last / first`.
pub fn classify_ratio(r: f64, ratio_threshold: f64) -> SizeTrend {
    classify_areas(1.0, r, ratio_threshold)
}

/// Fraction of the box area that lies on the unit canvas.
///
/// Boxes are non-degenerate by construction, so the quotient is defined.
pub fn visible_fraction(b: &BoundingBox) -> f64 {
    let w = (b.x2().min(1.0) - b.x1().max(0.0)).max(0.0);
    let h = (b.y2().min(1.0) - b.y1().max(0.0)).max(0.0);
    if b.is_inside_canvas() {
        return 1.0;
    }
    ((w * h) / b.area()).clamp(0.0, 1.0)
}

/// Resolve a benchmark noun to the layout name used in `dss`.
///
/// Exact names win; otherwise a name whose last words equal the noun
/// ("brown horse" for "horse") is accepted, case-insensitively.
pub fn resolve_object<'a>(dss: &'a DynamicSceneSyntax, noun: &str) -> Option<&'a str> {
    let names = dss.object_names();
    if let Some(n) = names.iter().find(|n| **n == noun) {
        return Some(n);
    }
    let noun_lc = noun.to_lowercase();
    let suffix = format!(" {noun_lc}");
    names.into_iter().find(|n| {
        let lc = n.to_lowercase();
        lc == noun_lc || lc.ends_with(&suffix)
    })
}

fn resolved_track(dss: &DynamicSceneSyntax, noun: &str) -> Option<ObjectTrack> {
    resolve_object(dss, noun).and_then(|name| extract_track(dss, name).ok())
}

/// Per-(object, frame) recall of `expected` over every frame.
pub fn check_objects(dss: &DynamicSceneSyntax, expected: &[String]) -> RuleReport {
    let all: Vec<usize> = (0..dss.num_frames()).collect();
    check_objects_in(dss, expected, &all)
}

/// Recall of `expected` restricted to the `required` frame indices.
pub fn check_objects_in(
    dss: &DynamicSceneSyntax,
    expected: &[String],
    required: &[usize],
) -> RuleReport {
    let total = expected.len() * required.len();
    let mut hits = 0usize;
    let mut missing = Vec::new();
    for noun in expected {
        let track = resolved_track(dss, noun);
        let mut absent = Vec::new();
        for &i in required {
            let present = track
                .as_ref()
                .and_then(|t| t.boxes.get(i))
                .is_some_and(Option::is_some);
            if present {
                hits += 1;
            } else {
                absent.push(i);
            }
        }
        if !absent.is_empty() {
            missing.push(format!("{noun} missing in frames {absent:?}"));
        }
    }
    let recall = if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    };
    let detail = if missing.is_empty() {
        format!("all {} object(s) present", expected.len())
    } else {
        missing.join("; ")
    };
    RuleReport::new(Task::Objects, hits == total, recall, detail)
}

/// One evaluated rule: pass/fail plus a coordinate-level fix if it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCheck {
    pub rule: String,
    pub passed: bool,
    pub finding: String,
    pub suggestion: Option<String>,
}

impl RuleCheck {
    fn pass(rule: impl Into<String>, finding: impl Into<String>) -> Self {
        Self {
            rule: rule.into(),
            passed: true,
            finding: finding.into(),
            suggestion: None,
        }
    }

    fn fail(
        rule: impl Into<String>,
        finding: impl Into<String>,
        suggestion: impl Into<String>,
    ) -> Self {
        Self {
            rule: rule.into(),
            passed: false,
            finding: finding.into(),
            suggestion: Some(suggestion.into()),
        }
    }
}

fn fmt_box(b: &BoundingBox) -> String {
    let [x1, y1, x2, y2] = b.to_array();
    format!("[{x1:.2}, {y1:.2}, {x2:.2}, {y2:.2}]")
}

fn presence_check(
    dss: &DynamicSceneSyntax,
    noun: &str,
    frames: &[usize],
) -> (RuleCheck, Option<ObjectTrack>) {
    let track = resolved_track(dss, noun);
    let absent: Vec<usize> = frames
        .iter()
        .copied()
        .filter(|&i| !track.as_ref().is_some_and(|t| t.boxes[i].is_some()))
        .collect();
    let rule = format!("presence of {noun}");
    if absent.is_empty() {
        return (
            RuleCheck::pass(rule, format!("{noun} is present where required")),
            track,
        );
    }
    let hint = track
        .as_ref()
        .and_then(|t| t.first_present())
        .map(|(i, b)| format!(", e.g. reuse its frame {i} box {}", fmt_box(b)))
        .unwrap_or_else(|| ", e.g. a box such as [0.40, 0.40, 0.60, 0.60]".into());
    (
        RuleCheck::fail(
            rule,
            format!("{noun} is missing in frames {absent:?}"),
            format!("Add a \"{noun}\" box to frames {absent:?}{hint}."),
        ),
        track,
    )
}

/// Evaluate every rule the case implies, in a fixed order.
pub fn evaluate_rules(
    dss: &DynamicSceneSyntax,
    case: &BenchCase,
    th: &RuleThresholds,
) -> Vec<RuleCheck> {
    let n = dss.num_frames();
    let all: Vec<usize> = (0..n).collect();
    match &case.expectation {
        Expectation::Objects(names) => names
            .iter()
            .map(|noun| presence_check(dss, noun, &all).0)
            .collect(),
        Expectation::Movement { object, label } => {
            let (presence, track) = presence_check(dss, object, &all);
            let rule = format!("{object} moves {label}");
            let motion = match track.as_ref().map(displacement) {
                Some(Ok((dx, dy))) => {
                    let got = classify_displacement(dx, dy, th.min_displacement);
                    let t = track.as_ref().unwrap();
                    let (i0, b0) = t.first_present().unwrap();
                    let (i1, b1) = t.last_present().unwrap();
                    let (cx0, cy0) = b0.centroid();
                    let (cx1, cy1) = b1.centroid();
                    let finding = format!(
                        "{object} centroid goes from ({cx0:.2}, {cy0:.2}) in frame {i0} to ({cx1:.2}, {cy1:.2}) in frame {i1} (dx={dx:.2}, dy={dy:.2}), detected {got}"
                    );
                    if got == *label {
                        RuleCheck::pass(rule, finding)
                    } else {
                        RuleCheck::fail(
                            rule,
                            finding.clone(),
                            movement_fix(object, *label, th.min_displacement, (cx0, cy0)),
                        )
                    }
                }
                _ => RuleCheck::fail(
                    rule,
                    format!(
                        "{object} does not appear in two frames, so its motion cannot be measured"
                    ),
                    movement_fix(object, *label, th.min_displacement, (0.5, 0.5)),
                ),
            };
            vec![presence, motion]
        }
        Expectation::Size { object, trend } => {
            let (presence, track) = presence_check(dss, object, &all);
            let rule = format!("{object} size trend {trend}");
            let size = match track.as_ref().map(area_ratio) {
                Some(Ok(r)) => {
                    let t = track.as_ref().unwrap();
                    let (i0, b0) = t.first_present().unwrap();
                    let (i1, b1) = t.last_present().unwrap();
                    let got = classify_areas(b0.area(), b1.area(), th.ratio_threshold);
                    let finding = format!(
                        "{object} area goes from {:.4} {} in frame {i0} to {:.4} {} in frame {i1} (ratio {r:.2}), detected {got}",
                        b0.area(),
                        fmt_box(b0),
                        b1.area(),
                        fmt_box(b1)
                    );
                    if got == *trend {
                        RuleCheck::pass(rule, finding)
                    } else {
                        let factor = match trend {
                            SizeTrend::Grow => format!("at least {:.2} times", th.ratio_threshold),
                            SizeTrend::Shrink => format!("at most {:.2} times", 1.0 / th.ratio_threshold),
                            SizeTrend::Constant => "about the same as".into(),
                        };
                        RuleCheck::fail(
                            rule,
                            finding,
                            format!(
                                "Resize {object} so its frame {i1} area is {factor} its frame {i0} area of {:.4}.",
                                b0.area()
                            ),
                        )
                    }
                }
                _ => RuleCheck::fail(
                    rule,
                    format!("{object} does not appear in two frames, so its size change cannot be measured"),
                    format!("Give {object} a box in every frame so its size can {trend}."),
                ),
            };
            vec![presence, size]
        }
        Expectation::Visibility { object, target } => {
            let last = n - 1;
            let (presence, track) = presence_check(dss, object, &[last]);
            let rule = format!("{object} {:.0}% visible in the final frame", target * 100.0);
            let fraction = track
                .as_ref()
                .and_then(|t| t.boxes[last].as_ref())
                .map(|b| (b, visible_fraction(b)));
            let vis = match fraction {
                Some((b, v)) => {
                    let finding = format!(
                        "{object} box {} in frame {last} is {:.0}% inside the canvas",
                        fmt_box(b),
                        v * 100.0
                    );
                    if (v - target).abs() <= th.visibility_tolerance + 1e-12 {
                        RuleCheck::pass(rule, finding)
                    } else {
                        RuleCheck::fail(
                            rule,
                            finding,
                            format!(
                                "Move {object} across the canvas edge in frame {last} so that {:.0}% of its box lies inside, e.g. {}.",
                                target * 100.0,
                                fmt_box(&visibility_fix(b, *target))
                            ),
                        )
                    }
                }
                None => RuleCheck::fail(
                    rule,
                    format!("{object} is absent in frame {last}"),
                    format!("Place {object} in frame {last} straddling the canvas edge."),
                ),
            };
            vec![presence, vis]
        }
    }
}

fn movement_fix(object: &str, label: MotionLabel, min_disp: f64, start: (f64, f64)) -> String {
    let step = (min_disp * 4.0).max(0.3);
    let (x, y) = start;
    let (tx, ty) = match label {
        MotionLabel::Left => (x - step, y),
        MotionLabel::Right => (x + step, y),
        MotionLabel::Up => (x, y - step),
        MotionLabel::Down => (x, y + step),
        MotionLabel::None => (x, y),
    };
    format!(
        "Move {object} {label}: shift its centroid from ({x:.2}, {y:.2}) in the first frame to about ({tx:.2}, {ty:.2}) in the last frame, keeping the other axis within {:.3}.",
        min_disp / 2.0
    )
}

/// Slide `b` horizontally so that `target` of its width sits inside.
fn visibility_fix(b: &BoundingBox, target: f64) -> BoundingBox {
    let w = b.width();
    let x1 = 1.0 - w * target;
    let y1 = b.y1().clamp(0.0, (1.0 - b.height()).max(0.0));
    BoundingBox::new(x1, y1, x1 + w, y1 + b.height()).unwrap_or(*b)
}

/// Deterministic verifier: confidence 5 when every rule passes, otherwise
/// `max(1, 5 - failed)`, with one suggestion per failed rule.
pub fn local_feedback(
    dss: &DynamicSceneSyntax,
    case: &BenchCase,
    th: &RuleThresholds,
) -> FeedbackReport {
    let checks = evaluate_rules(dss, case, th);
    feedback_from_checks(&checks)
}

pub fn feedback_from_checks(checks: &[RuleCheck]) -> FeedbackReport {
    let failed: Vec<&RuleCheck> = checks.iter().filter(|c| !c.passed).collect();
    let analysis = if failed.is_empty() {
        format!("All {} rule check(s) pass.", checks.len())
    } else {
        let findings: Vec<&str> = failed.iter().map(|c| c.finding.as_str()).collect();
        format!(
            "{} of {} rule check(s) fail. {}.",
            failed.len(),
            checks.len(),
            findings.join(". ")
        )
    };
    let suggestions = failed.iter().filter_map(|c| c.suggestion.clone()).collect();
    FeedbackReport::new(analysis, suggestions, 5 - failed.len() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::BenchCase;
    use crate::dss::{BackgroundMotion, Direction, FramePlan, LayoutEntry, ScenePrompt};

    fn bx(c: [f64; 4]) -> BoundingBox {
        BoundingBox::from_array(c).unwrap()
    }

    fn track(boxes: Vec<Option<[f64; 4]>>) -> ObjectTrack {
        ObjectTrack::new("o", boxes.into_iter().map(|b| b.map(bx)).collect()).unwrap()
    }

    fn dss_with(frames: Vec<Vec<(&str, [f64; 4])>>) -> DynamicSceneSyntax {
        let n = frames.len();
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(i, objs)| FramePlan {
                index: i,
                description: format!("frame {i}"),
                layout: objs
                    .into_iter()
                    .map(|(name, c)| LayoutEntry {
                        object: name.into(),
                        bbox: bx(c),
                    })
                    .collect(),
                background: BackgroundMotion::new(Direction::Random, 0.0).unwrap(),
            })
            .collect();
        DynamicSceneSyntax::new(ScenePrompt::new("test", n).unwrap(), frames).unwrap()
    }

    #[test]
    fn rightward_centroids() {
        // Centroids x = 0.2, 0.3, ..., 0.9 with y fixed: displacement 0.7.
        let t = track(
            (0..8)
                .map(|i| {
                    let cx = 0.2 + 0.1 * i as f64;
                    Some([cx - 0.05, 0.4, cx + 0.05, 0.5])
                })
                .collect(),
        );
        let (dx, dy) = displacement(&t).unwrap();
        assert!((dx - 0.7).abs() < 1e-12 && dy.abs() < 1e-12);
        assert_eq!(detect_movement(&t, 0.05).unwrap(), MotionLabel::Right);
        let mirrored = t.map_boxes(|b| b.flip_horizontal());
        assert_eq!(detect_movement(&mirrored, 0.05).unwrap(), MotionLabel::Left);
    }

    #[test]
    fn static_track_has_no_motion() {
        let t = track(vec![Some([0.1, 0.1, 0.3, 0.3]); 8]);
        assert_eq!(detect_movement(&t, 0.05).unwrap(), MotionLabel::None);
        assert_eq!(detect_size_trend(&t, 1.2).unwrap(), SizeTrend::Constant);
    }

    #[test]
    fn diagonal_motion_is_none() {
        let t = track(vec![Some([0.1, 0.1, 0.2, 0.2]), Some([0.4, 0.4, 0.5, 0.5])]);
        assert_eq!(detect_movement(&t, 0.05).unwrap(), MotionLabel::None);
    }

    #[test]
    fn single_box_track_is_insufficient() {
        let t = track(vec![None, Some([0.1, 0.1, 0.2, 0.2]), None]);
        assert!(matches!(
            detect_movement(&t, 0.05),
            Err(VerifyError::InsufficientTrack { present: 1, .. })
        ));
        assert!(detect_size_trend(&t, 1.2).is_err());
    }

    #[test]
    fn growth_by_area_quotient() {
        // 0.2 x 0.2 = 0.04 -> 0.4 x 0.4 = 0.16, ratio 4.
        let t = track(vec![Some([0.1, 0.1, 0.3, 0.3]), Some([0.1, 0.1, 0.5, 0.5])]);
        assert!((area_ratio(&t).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(detect_size_trend(&t, 1.2).unwrap(), SizeTrend::Grow);
        assert_eq!(
            detect_size_trend(&t.reversed(), 1.2).unwrap(),
            SizeTrend::Shrink
        );
        // Same boxes in a 2x larger coordinate frame.
        let scaled = t.map_boxes(|b| bx(b.to_array().map(|v| v * 2.0)));
        assert_eq!(detect_size_trend(&scaled, 1.2).unwrap(), SizeTrend::Grow);
    }

    #[test]
    fn visibility_cases() {
        // Half of the width lies left of x = 0.
        assert!((visible_fraction(&bx([-0.1, 0.2, 0.1, 0.4])) - 0.5).abs() < 1e-12);
        assert_eq!(visible_fraction(&bx([0.1, 0.1, 0.9, 0.9])), 1.0);
        assert_eq!(visible_fraction(&bx([1.2, 0.0, 1.4, 0.2])), 0.0);
        assert!((visible_fraction(&bx([0.9, 0.9, 1.1, 1.1])) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn object_recall() {
        let cat = ("cat", [0.1, 0.1, 0.3, 0.3]);
        let dog = ("dog", [0.5, 0.5, 0.7, 0.7]);
        let both = dss_with(vec![vec![cat, dog]; 8]);
        let expected = vec!["cat".to_string(), "dog".to_string()];
        let r = check_objects(&both, &expected);
        assert!(r.passed);
        assert_eq!(r.measured, 1.0);

        let cats = dss_with(vec![vec![cat]; 8]);
        let r = check_objects(&cats, &expected);
        assert!(!r.passed);
        assert_eq!(r.measured, 0.5);

        // Present in 6 of 8 frames: 6 hits over 8 (object, frame) pairs.
        let frames: Vec<_> = (0..8)
            .map(|i| if i < 6 { vec![cat] } else { vec![] })
            .collect();
        let r = check_objects(&dss_with(frames), &["cat".to_string()]);
        let oracle = (0..8).filter(|&i| i < 6).count() as f64 / 8.0;
        assert_eq!(r.measured, oracle);
        assert_eq!(r.measured, 0.75);
    }

    #[test]
    fn attribute_prefixed_names_resolve() {
        let dss = dss_with(vec![vec![("brown horse", [0.1, 0.1, 0.3, 0.3])]; 2]);
        assert_eq!(resolve_object(&dss, "horse"), Some("brown horse"));
        assert_eq!(resolve_object(&dss, "orse"), None);
    }

    fn case(expectation: Expectation) -> BenchCase {
        BenchCase::new("test prompt", expectation, 0)
    }

    #[test]
    fn feedback_all_pass() {
        let dss = dss_with(vec![vec![("cat", [0.1, 0.1, 0.3, 0.3])]; 4]);
        let fb = local_feedback(
            &dss,
            &case(Expectation::Objects(vec!["cat".into()])),
            &RuleThresholds::default(),
        );
        assert_eq!(fb.confidence, 5);
        assert!(fb.suggestions.is_empty());
    }

    #[test]
    fn feedback_movement_failure_names_centroids() {
        let dss = dss_with(vec![vec![("car", [0.4, 0.4, 0.6, 0.6])]; 4]);
        let fb = local_feedback(
            &dss,
            &case(Expectation::Movement {
                object: "car".into(),
                label: MotionLabel::Left,
            }),
            &RuleThresholds::default(),
        );
        assert_eq!(fb.confidence, 4);
        assert_eq!(fb.suggestions.len(), 1);
        assert!(
            fb.suggestions[0].contains("(0.50, 0.50)"),
            "{}",
            fb.suggestions[0]
        );
    }

    #[test]
    fn feedback_confidence_clamps_at_one() {
        let dss = dss_with(vec![vec![("cat", [0.1, 0.1, 0.3, 0.3])]; 2]);
        let names = ["a", "b", "c", "d"].map(String::from).to_vec();
        let fb = local_feedback(
            &dss,
            &case(Expectation::Objects(names)),
            &RuleThresholds::default(),
        );
        assert_eq!(fb.suggestions.len(), 4);
        assert_eq!(fb.confidence, 1);
    }

    #[test]
    fn thresholds_validate() {
        assert!(RuleThresholds::default().validate().is_ok());
        let bad = RuleThresholds {
            ratio_threshold: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
