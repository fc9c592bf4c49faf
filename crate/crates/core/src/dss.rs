//! Dynamic scene syntax: the per-frame plan (descriptions, object layouts,
//! background motion) that drives the rest of the pipeline.
//!
//! Coordinates are normalized to the canvas, origin top-left, y pointing
//! down. Boxes may extend past the canvas: partial visibility is something
//! layouts are expected to express, so nothing is clamped here.
//!
//! The JSON document shape is
//!
//! ```text
//! { "prompt": str, "num_frames": int, "canvas": [W, H]?,
//!   "frames": [ { "index": int, "description": str,
//!                 "objects": [ { "name": str, "box": [x1, y1, x2, y2] } ],
//!                 "background": { "direction": str, "speed": float } } ] }
//! ```
//!
//! Background motion is stored per frame; whether a video should carry one
//! constant motion or a per-frame one is left to whoever writes the document.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Largest supported video length.
pub const MAX_FRAMES: usize = 256;

/// Any coordinate above this marks a document as using pixel units.
const PIXEL_COORD_THRESHOLD: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DssError {
    #[error("malformed JSON: {0}")]
    Syntax(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("object {0:?} does not appear in any frame")]
    NotFound(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrompt {
    pub text: String,
    pub num_frames: usize,
}

impl ScenePrompt {
    pub fn new(text: impl Into<String>, num_frames: usize) -> Result<Self, DssError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DssError::Range("prompt text is empty".into()));
        }
        if num_frames == 0 || num_frames > MAX_FRAMES {
            return Err(DssError::Range(format!(
                "num_frames must be in 1..={MAX_FRAMES}, got {num_frames}"
            )));
        }
        Ok(Self { text, num_frames })
    }
}

/// Axis-aligned rectangle in normalized canvas coordinates.
///
/// Always has positive width and height; may lie partly or fully outside
/// the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, DssError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(DssError::Range(format!(
                "non-finite box coordinate in [{x1}, {y1}, {x2}, {y2}]"
            )));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(DssError::Range(format!(
                "degenerate box [{x1}, {y1}, {x2}, {y2}]: need x1 < x2 and y1 < y2"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self, DssError> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn centroid(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// True when the box lies within the unit canvas.
    pub fn is_inside_canvas(&self) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= 1.0 && self.y2 <= 1.0
    }

    /// Mirror across the vertical center line (x -> 1 - x).
    pub fn flip_horizontal(&self) -> Self {
        Self {
            x1: 1.0 - self.x2,
            y1: self.y1,
            x2: 1.0 - self.x1,
            y2: self.y2,
        }
    }

    /// Mirror across the horizontal center line (y -> 1 - y).
    pub fn flip_vertical(&self) -> Self {
        Self {
            x1: self.x1,
            y1: 1.0 - self.y2,
            x2: self.x2,
            y2: 1.0 - self.y1,
        }
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let c = <[f64; 4]>::deserialize(d)?;
        Self::from_array(c).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    #[serde(rename = "name")]
    pub object: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Background motion direction in screen space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
    LeftUp,
    LeftDown,
    RightUp,
    RightDown,
    Random,
}

impl Direction {
    pub const ALL: [Direction; 9] = [
        Direction::Left,
        Direction::Right,
        Direction::Up,
        Direction::Down,
        Direction::LeftUp,
        Direction::LeftDown,
        Direction::RightUp,
        Direction::RightDown,
        Direction::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::LeftUp => "left_up",
            Direction::LeftDown => "left_down",
            Direction::RightUp => "right_up",
            Direction::RightDown => "right_down",
            Direction::Random => "random",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = DssError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Direction::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| DssError::Schema(format!("unknown background direction {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundMotion {
    pub direction: Direction,
    pub speed: f64,
}

impl BackgroundMotion {
    pub fn new(direction: Direction, speed: f64) -> Result<Self, DssError> {
        if !(0.0..=1.0).contains(&speed) {
            return Err(DssError::Range(format!(
                "background speed must be in [0, 1], got {speed}"
            )));
        }
        Ok(Self { direction, speed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    pub index: usize,
    pub description: String,
    #[serde(rename = "objects")]
    pub layout: Vec<LayoutEntry>,
    pub background: BackgroundMotion,
}

impl FramePlan {
    pub fn find(&self, object: &str) -> Option<&LayoutEntry> {
        self.layout.iter().find(|e| e.object == object)
    }
}

/// A validated per-frame scene plan.
///
/// Construct through [`DynamicSceneSyntax::new`] or [`parse_dss`]; both
/// enforce frame count, ordering, and per-frame uniqueness of object names.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicSceneSyntax {
    prompt: ScenePrompt,
    frames: Vec<FramePlan>,
}

impl DynamicSceneSyntax {
    pub fn new(prompt: ScenePrompt, frames: Vec<FramePlan>) -> Result<Self, DssError> {
        // Re-check in case the prompt was built by struct literal.
        let prompt = ScenePrompt::new(prompt.text, prompt.num_frames)?;
        if frames.len() != prompt.num_frames {
            return Err(DssError::Schema(format!(
                "num_frames is {} but {} frames were given",
                prompt.num_frames,
                frames.len()
            )));
        }
        for (i, frame) in frames.iter().enumerate() {
            if frame.index != i {
                return Err(DssError::Schema(format!(
                    "frame at position {i} has index {}",
                    frame.index
                )));
            }
            if frame.description.trim().is_empty() {
                return Err(DssError::Schema(format!(
                    "frame {i} has an empty description"
                )));
            }
            BackgroundMotion::new(frame.background.direction, frame.background.speed)?;
            let mut seen = HashSet::new();
            for entry in &frame.layout {
                if entry.object.trim().is_empty() {
                    return Err(DssError::Schema(format!("frame {i} has an unnamed object")));
                }
                if !seen.insert(entry.object.as_str()) {
                    return Err(DssError::Schema(format!(
                        "frame {i} lists object {:?} twice",
                        entry.object
                    )));
                }
            }
        }
        Ok(Self { prompt, frames })
    }

    pub fn prompt(&self) -> &ScenePrompt {
        &self.prompt
    }

    pub fn frames(&self) -> &[FramePlan] {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn into_parts(self) -> (ScenePrompt, Vec<FramePlan>) {
        (self.prompt, self.frames)
    }

    /// Background motion of every frame, in order.
    pub fn motions(&self) -> Vec<BackgroundMotion> {
        self.frames.iter().map(|f| f.background).collect()
    }

    /// Distinct object names in order of first appearance.
    pub fn object_names(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.frames
            .iter()
            .flat_map(|f| f.layout.iter())
            .filter(|e| seen.insert(e.object.as_str()))
            .map(|e| e.object.as_str())
            .collect()
    }

    /// Apply `f` to every box, keeping everything else.
    pub fn map_boxes(&self, f: impl Fn(&BoundingBox) -> BoundingBox) -> Self {
        let frames = self
            .frames
            .iter()
            .map(|fr| FramePlan {
                layout: fr
                    .layout
                    .iter()
                    .map(|e| LayoutEntry {
                        object: e.object.clone(),
                        bbox: f(&e.bbox),
                    })
                    .collect(),
                ..fr.clone()
            })
            .collect();
        Self {
            prompt: self.prompt.clone(),
            frames,
        }
    }
}

/// Per-frame boxes of one object; `None` where the object is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub object: String,
    pub boxes: Vec<Option<BoundingBox>>,
}

impl ObjectTrack {
    /// Builds a track, rejecting one with no box at all.
    pub fn new(
        object: impl Into<String>,
        boxes: Vec<Option<BoundingBox>>,
    ) -> Result<Self, DssError> {
        let object = object.into();
        if boxes.iter().all(Option::is_none) {
            return Err(DssError::NotFound(object));
        }
        Ok(Self { object, boxes })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// (frame index, box) for every frame the object is present in.
    pub fn present(&self) -> impl Iterator<Item = (usize, &BoundingBox)> {
        self.boxes
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.as_ref().map(|b| (i, b)))
    }

    pub fn first_present(&self) -> Option<(usize, &BoundingBox)> {
        self.present().next()
    }

    pub fn last_present(&self) -> Option<(usize, &BoundingBox)> {
        self.present().last()
    }

    pub fn reversed(&self) -> Self {
        let mut boxes = self.boxes.clone();
        boxes.reverse();
        Self {
            object: self.object.clone(),
            boxes,
        }
    }

    pub fn map_boxes(&self, f: impl Fn(&BoundingBox) -> BoundingBox) -> Self {
        Self {
            object: self.object.clone(),
            boxes: self.boxes.iter().map(|b| b.as_ref().map(&f)).collect(),
        }
    }
}

/// Per-frame track of `object_name`, identity matched by exact name.
pub fn extract_track(dss: &DynamicSceneSyntax, object_name: &str) -> Result<ObjectTrack, DssError> {
    let boxes = dss
        .frames()
        .iter()
        .map(|f| f.find(object_name).map(|e| e.bbox))
        .collect();
    ObjectTrack::new(object_name, boxes)
}

// Wire representation. Boxes stay as raw numbers until canvas units are known.

#[derive(Deserialize)]
struct RawDocument {
    prompt: String,
    num_frames: i64,
    #[serde(default)]
    canvas: Option<[f64; 2]>,
    frames: Vec<RawFrame>,
}

#[derive(Deserialize)]
struct RawFrame {
    index: i64,
    description: String,
    objects: Vec<RawObject>,
    background: RawBackground,
}

#[derive(Deserialize)]
struct RawObject {
    name: String,
    #[serde(rename = "box")]
    bbox: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBackground {
    direction: String,
    speed: f64,
}

#[derive(Serialize)]
struct WireDocument<'a> {
    prompt: &'a str,
    num_frames: usize,
    frames: &'a [FramePlan],
}

/// Parse and validate a scene syntax document.
///
/// Unknown fields are ignored. A document whose boxes contain any value
/// above 1.5 is read as pixel coordinates and must carry `"canvas": [W, H]`.
pub fn parse_dss(json_text: &str) -> Result<DynamicSceneSyntax, DssError> {
    let value: Value =
        serde_json::from_str(json_text).map_err(|e| DssError::Syntax(e.to_string()))?;
    parse_dss_value(value)
}

pub fn parse_dss_value(value: Value) -> Result<DynamicSceneSyntax, DssError> {
    let raw: RawDocument =
        serde_json::from_value(value).map_err(|e| DssError::Schema(e.to_string()))?;

    if raw.num_frames < 1 || raw.num_frames > MAX_FRAMES as i64 {
        return Err(DssError::Range(format!(
            "num_frames must be in 1..={MAX_FRAMES}, got {}",
            raw.num_frames
        )));
    }
    let prompt = ScenePrompt::new(raw.prompt, raw.num_frames as usize)?;
    if raw.frames.len() != prompt.num_frames {
        return Err(DssError::Schema(format!(
            "num_frames is {} but {} frames were given",
            prompt.num_frames,
            raw.frames.len()
        )));
    }

    for (i, frame) in raw.frames.iter().enumerate() {
        for obj in &frame.objects {
            if obj.bbox.len() != 4 {
                return Err(DssError::Schema(format!(
                    "frame {i} object {:?}: box needs 4 numbers, got {}",
                    obj.name,
                    obj.bbox.len()
                )));
            }
        }
    }

    let pixel_units = raw
        .frames
        .iter()
        .flat_map(|f| f.objects.iter())
        .flat_map(|o| o.bbox.iter())
        .any(|&v| v > PIXEL_COORD_THRESHOLD);
    let scale = if pixel_units {
        match raw.canvas {
            Some([w, h]) if w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite() => Some((w, h)),
            Some(c) => {
                return Err(DssError::Range(format!(
                    "canvas must be positive, got {c:?}"
                )))
            }
            None => {
                return Err(DssError::Schema(
                    "boxes use pixel coordinates but no \"canvas\": [W, H] was given".into(),
                ))
            }
        }
    } else {
        None
    };

    let mut frames = Vec::with_capacity(raw.frames.len());
    for frame in raw.frames {
        if frame.index < 0 {
            return Err(DssError::Schema(format!(
                "negative frame index {}",
                frame.index
            )));
        }
        let direction: Direction = frame.background.direction.parse()?;
        let background = BackgroundMotion::new(direction, frame.background.speed)?;
        let layout = frame
            .objects
            .into_iter()
            .map(|o| {
                let mut c = [o.bbox[0], o.bbox[1], o.bbox[2], o.bbox[3]];
                if let Some((w, h)) = scale {
                    c = [c[0] / w, c[1] / h, c[2] / w, c[3] / h];
                }
                let bbox = BoundingBox::from_array(c)
                    .map_err(|e| DssError::Range(format!("object {:?}: {e}", o.name)))?;
                Ok(LayoutEntry {
                    object: o.name,
                    bbox,
                })
            })
            .collect::<Result<Vec<_>, DssError>>()?;
        frames.push(FramePlan {
            index: frame.index as usize,
            description: frame.description,
            layout,
            background,
        });
    }

    DynamicSceneSyntax::new(prompt, frames)
}

/// Canonical pretty-printed JSON in normalized coordinates.
pub fn serialize_dss(dss: &DynamicSceneSyntax) -> String {
    let doc = WireDocument {
        prompt: &dss.prompt.text,
        num_frames: dss.prompt.num_frames,
        frames: &dss.frames,
    };
    serde_json::to_string_pretty(&doc).expect("scene syntax always serializes")
}

pub fn dss_to_value(dss: &DynamicSceneSyntax) -> Value {
    serde_json::from_str(&serialize_dss(dss)).expect("canonical JSON re-parses")
}
