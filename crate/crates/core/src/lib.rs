//! Layout planning for zero-shot text-to-video synthesis.
//!
//! An LLM turns a prompt into a frame-by-frame scene plan ([`dss`]), checks
//! and repairs it in a feedback loop ([`refine`], [`verify`]), and the plan's
//! background motion drives per-frame phase shifts of the initial noise
//! ([`mns`]). Plans and noise are exported together as a conditioning
//! [`bundle`].

pub mod bench;
pub mod bundle;
pub mod dss;
pub mod exec;
pub mod llm;
pub mod mns;
pub mod refine;
pub mod verify;

pub use bundle::{
    emit_bundle, load_bundle, Bundle, BundleError, BundleManifest, BundleParams, Dtype,
};
pub use dss::{
    extract_track, parse_dss, serialize_dss, BackgroundMotion, BoundingBox, Direction, DssError,
    DynamicSceneSyntax, FramePlan, LayoutEntry, ObjectTrack, ScenePrompt,
};
pub use exec::Execution;
pub use mns::{
    generate_noise_sequence, perturb_random, shift_noise, DirectionVector, MnsError, NoiseParams,
    NoiseTensor,
};
pub use refine::{run_refinement, RefineConfig, RefineError, RefinementTrace, Refiner};
pub use verify::{FeedbackReport, MotionLabel, RuleReport, RuleThresholds, SizeTrend, Task};
