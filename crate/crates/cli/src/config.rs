//! Flag and config-file settings. A config file is one flat JSON object
//! whose keys are the long flag names with `_` for `-`; flags win.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use flowzero_core::bundle::Dtype;
use flowzero_core::dss::MAX_FRAMES;
use flowzero_core::llm::ModelSettings;
use flowzero_core::mns::{NoiseParams, PhaseSchedule};
use flowzero_core::refine::{Acceptance, FeedbackMode, RefineConfig};
use flowzero_core::verify::RuleThresholds;
use serde::Deserialize;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackArg {
    Llm,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcceptanceArg {
    Exceeds,
    AtLeast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleArg {
    Linear,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierArg {
    Strict,
    Graded,
}

/// Every tunable. All optional so file values can fill the gaps.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Flat JSON config file; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Frames per video [default: 8]
    #[arg(long, global = true, value_name = "N")]
    pub frames: Option<usize>,

    /// Canvas size for rendering and pixel coordinates, WxH [default: 512x512]
    #[arg(long, global = true, value_name = "WxH")]
    pub canvas: Option<String>,

    /// Latent noise shape, HxWxC [default: 64x64x4]
    #[arg(long, global = true, value_name = "HxWxC")]
    pub latent: Option<String>,

    /// Confidence threshold lambda in 1..=5 [default: 3]
    #[arg(long, global = true)]
    pub lambda: Option<u8>,

    /// Refinement iteration budget [default: 5]
    #[arg(long = "max-iter", global = true, value_name = "N")]
    pub max_iter: Option<usize>,

    /// Confidence test against lambda [default: exceeds]
    #[arg(long, global = true)]
    pub acceptance: Option<AcceptanceArg>,

    /// Where verification feedback comes from [default: llm]
    #[arg(long, global = true)]
    pub feedback: Option<FeedbackArg>,

    /// Pixels of noise shift per frame at speed 1 [default: 4.0]
    #[arg(long = "pixel-scale", global = true, value_name = "S")]
    pub pixel_scale: Option<f64>,

    /// Phase jitter magnitude for random background motion, radians [default: 0.3]
    #[arg(long = "sigma-phi", global = true, value_name = "RAD")]
    pub sigma_phi: Option<f64>,

    /// Growth of the phase jitter with frame offset [default: linear]
    #[arg(long = "phase-schedule", global = true)]
    pub phase_schedule: Option<ScheduleArg>,

    /// Seed for the base noise, phase jitter and benchmark prompts [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Element type of bundle tensors [default: f64]
    #[arg(long, global = true)]
    pub dtype: Option<DtypeArg>,

    /// Minimum centroid displacement counted as movement [default: 0.05]
    #[arg(long = "min-disp", global = true)]
    pub min_disp: Option<f64>,

    /// Area ratio that counts as growing or shrinking [default: 1.2]
    #[arg(long = "ratio-threshold", global = true)]
    pub ratio_threshold: Option<f64>,

    /// Allowed deviation from the visibility target [default: 0.1]
    #[arg(long = "visibility-tol", global = true)]
    pub visibility_tol: Option<f64>,

    /// Model identifier sent to the endpoint [default: gpt-4]
    #[arg(long, global = true)]
    pub model: Option<String>,

    /// Sampling temperature for generation; verify and rectify use 0 [default: 0]
    #[arg(long, global = true)]
    pub temperature: Option<f64>,

    /// Directory with prompt template overrides
    #[arg(long, global = true, value_name = "DIR")]
    pub templates: Option<PathBuf>,

    /// Answer LLM calls from a JSON array of canned replies
    #[arg(long, global = true, value_name = "SCRIPT")]
    pub mock: Option<PathBuf>,

    /// Record every LLM exchange to a JSON lines transcript
    #[arg(long, global = true, value_name = "TRANSCRIPT")]
    pub record: Option<PathBuf>,

    /// Answer LLM calls from a recorded transcript (a directory for bench)
    #[arg(long, global = true, value_name = "TRANSCRIPT")]
    pub replay: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Bench: prompts per task [default: 20]
    #[arg(long, global = true, value_name = "N")]
    pub cases: Option<usize>,

    /// Bench: cases in flight at once [default: 4]
    #[arg(long, global = true, value_name = "N")]
    pub concurrency: Option<usize>,

    /// Bench: use the built-in fault-injecting planner instead of an LLM
    #[arg(long, global = true)]
    #[serde(default)]
    pub simulate: bool,

    /// Bench: fraction of simulated cases with an injected layout error [default: 0.3]
    #[arg(long = "error-rate", global = true, value_name = "P")]
    pub error_rate: Option<f64>,

    /// Bench: simulated verifier scoring [default: strict]
    #[arg(long, global = true)]
    pub verifier: Option<VerifierArg>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($field:ident),*) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl Settings {
    /// Fill unset flags from the config file, if one was given.
    pub fn with_config_file(mut self) -> Result<Self, UsageError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = read_config(&path)?;
        overlay!(
            self,
            file,
            frames,
            canvas,
            latent,
            lambda,
            max_iter,
            acceptance,
            feedback,
            pixel_scale,
            sigma_phi,
            phase_schedule,
            seed,
            dtype,
            min_disp,
            ratio_threshold,
            visibility_tol,
            model,
            temperature,
            templates,
            mock,
            record,
            replay,
            out,
            cases,
            concurrency,
            error_rate,
            verifier
        );
        self.simulate |= file.simulate;
        Ok(self)
    }
}

fn read_config(path: &Path) -> Result<Settings, UsageError> {
    let text = fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub num_frames: usize,
    pub canvas: (u32, u32),
    pub latent: [usize; 3],
    pub refine: RefineConfig,
    pub noise: NoiseParams,
    pub dtype: Dtype,
    pub model: ModelSettings,
    pub templates: Option<PathBuf>,
    pub mock: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub cases: usize,
    pub concurrency: usize,
    pub simulate: bool,
    pub error_rate: f64,
    pub verifier: VerifierArg,
}

fn parse_dims<const N: usize>(text: &str, what: &str) -> Result<[usize; N], UsageError> {
    let parts: Vec<&str> = text.split(['x', 'X']).collect();
    let bad = || {
        UsageError(format!(
            "{what} must look like {} numbers joined by 'x', got {text:?}",
            N
        ))
    };
    if parts.len() != N {
        return Err(bad());
    }
    let mut out = [0usize; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

impl CliConfig {
    pub fn resolve(s: &Settings) -> Result<Self, UsageError> {
        let usage = |m: String| Err(UsageError(m));
        let num_frames = s.frames.unwrap_or(8);
        if !(1..=MAX_FRAMES).contains(&num_frames) {
            return usage(format!(
                "--frames must be in 1..={MAX_FRAMES}, got {num_frames}"
            ));
        }
        let [cw, ch] = parse_dims::<2>(s.canvas.as_deref().unwrap_or("512x512"), "--canvas")?;
        if cw == 0 || ch == 0 || cw > 16384 || ch > 16384 {
            return usage(format!(
                "--canvas sides must be in 1..=16384, got {cw}x{ch}"
            ));
        }
        let latent = parse_dims::<3>(s.latent.as_deref().unwrap_or("64x64x4"), "--latent")?;
        if latent[0] < 2 || latent[1] < 2 || latent[2] == 0 {
            return usage(format!(
                "--latent needs H, W >= 2 and C >= 1, got {latent:?}"
            ));
        }

        let rules = RuleThresholds {
            min_displacement: s
                .min_disp
                .unwrap_or(RuleThresholds::default().min_displacement),
            ratio_threshold: s
                .ratio_threshold
                .unwrap_or(RuleThresholds::default().ratio_threshold),
            visibility_tolerance: s
                .visibility_tol
                .unwrap_or(RuleThresholds::default().visibility_tolerance),
        };
        let defaults = RefineConfig::default();
        let refine = RefineConfig {
            threshold: s.lambda.unwrap_or(defaults.threshold),
            max_iterations: s.max_iter.unwrap_or(defaults.max_iterations),
            feedback_mode: match s.feedback {
                Some(FeedbackArg::Local) => FeedbackMode::Local,
                _ => FeedbackMode::Llm,
            },
            acceptance: match s.acceptance {
                Some(AcceptanceArg::AtLeast) => Acceptance::AtLeast,
                _ => Acceptance::Exceeds,
            },
            rules,
        };
        refine.validate().map_err(|e| UsageError(e.to_string()))?;

        let nd = NoiseParams::default();
        let noise = NoiseParams {
            pixel_scale: s.pixel_scale.unwrap_or(nd.pixel_scale),
            sigma_phi: s.sigma_phi.unwrap_or(nd.sigma_phi),
            rng_seed: s.seed.unwrap_or(0),
            schedule: match s.phase_schedule {
                Some(ScheduleArg::Constant) => PhaseSchedule::Constant,
                _ => PhaseSchedule::Linear,
            },
        };
        if !(noise.pixel_scale > 0.0 && noise.pixel_scale.is_finite()) {
            return usage(format!(
                "--pixel-scale must be positive, got {}",
                noise.pixel_scale
            ));
        }
        if !(noise.sigma_phi >= 0.0 && noise.sigma_phi.is_finite()) {
            return usage(format!("--sigma-phi must be >= 0, got {}", noise.sigma_phi));
        }

        let md = ModelSettings::default();
        let model = ModelSettings {
            model_id: s.model.clone().unwrap_or(md.model_id),
            generate_temperature: s.temperature.unwrap_or(md.generate_temperature),
            max_tokens: md.max_tokens,
        };
        if !(0.0..=2.0).contains(&model.generate_temperature) {
            return usage(format!(
                "--temperature must be in [0, 2], got {}",
                model.generate_temperature
            ));
        }
        if s.mock.is_some() && s.replay.is_some() {
            return usage("--mock and --replay are mutually exclusive".into());
        }
        let error_rate = s.error_rate.unwrap_or(0.3);
        if !(0.0..=1.0).contains(&error_rate) {
            return usage(format!("--error-rate must be in [0, 1], got {error_rate}"));
        }
        let concurrency = s.concurrency.unwrap_or(4);
        if concurrency == 0 {
            return usage("--concurrency must be at least 1".into());
        }

        Ok(Self {
            num_frames,
            canvas: (cw as u32, ch as u32),
            latent,
            refine,
            noise,
            dtype: match s.dtype {
                Some(DtypeArg::F32) => Dtype::F32,
                _ => Dtype::F64,
            },
            model,
            templates: s.templates.clone(),
            mock: s.mock.clone(),
            record: s.record.clone(),
            replay: s.replay.clone(),
            out: s.out.clone(),
            cases: s.cases.unwrap_or(20),
            concurrency,
            simulate: s.simulate,
            error_rate,
            verifier: s.verifier.unwrap_or(VerifierArg::Strict),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = CliConfig::resolve(&Settings::default()).unwrap();
        assert_eq!(c.num_frames, 8);
        assert_eq!(c.canvas, (512, 512));
        assert_eq!(c.latent, [64, 64, 4]);
        assert_eq!(c.refine.threshold, 3);
        assert_eq!(c.refine.max_iterations, 5);
        assert_eq!(c.noise.pixel_scale, 4.0);
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(
            &path,
            r#"{"frames": 4, "lambda": 2, "latent": "32x32x4", "simulate": true}"#,
        )
        .unwrap();
        let s = Settings {
            config: Some(path),
            frames: Some(6),
            ..Settings::default()
        }
        .with_config_file()
        .unwrap();
        let c = CliConfig::resolve(&s).unwrap();
        assert_eq!(c.num_frames, 6);
        assert_eq!(c.refine.threshold, 2);
        assert_eq!(c.latent, [32, 32, 4]);
        assert!(c.simulate);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"framez": 4}"#).unwrap();
        let s = Settings {
            config: Some(path),
            ..Settings::default()
        };
        assert!(s.with_config_file().is_err());
        for s in [
            Settings {
                lambda: Some(6),
                ..Settings::default()
            },
            Settings {
                latent: Some("64x64".into()),
                ..Settings::default()
            },
            Settings {
                frames: Some(0),
                ..Settings::default()
            },
            Settings {
                pixel_scale: Some(-1.0),
                ..Settings::default()
            },
        ] {
            assert!(CliConfig::resolve(&s).is_err(), "{s:?}");
        }
    }
}
