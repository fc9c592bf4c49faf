//! Prompt templates for the generate, verify and rectify steps.
//!
//! Templates are plain text with `{name}` placeholders. Only the four
//! placeholder names below are substituted; any other brace text is left
//! alone so templates can talk about JSON freely. The in-context example is
//! appended after substitution, verbatim.
//!
//! The shipped defaults are reconstructions and can be replaced by dropping
//! `generate.txt`, `generate.example.txt`, ... into a directory passed to
//! [`PromptTemplates::load_dir`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const SYSTEM_PROMPT: &str = "You are an expert video storyboard planner. You convert video \
prompts into precise frame-by-frame scene plans with bounding-box layouts and background motion, \
and you answer only with JSON.";

pub const PLACEHOLDERS: [&str; 4] = ["prompt", "num_frames", "dss_json", "feedback_json"];

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {template} needs a binding for {{{placeholder}}}")]
    MissingBinding {
        template: TemplateKind,
        placeholder: String,
    },
    #[error("template {template} does not reference {{{placeholder}}}")]
    MissingPlaceholder {
        template: TemplateKind,
        placeholder: String,
    },
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Generate,
    Verify,
    Rectify,
}

impl TemplateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateKind::Generate => "generate",
            TemplateKind::Verify => "verify",
            TemplateKind::Rectify => "rectify",
        }
    }

    /// Placeholders the pipeline always binds for this step.
    pub fn required_placeholders(&self) -> &'static [&'static str] {
        match self {
            TemplateKind::Generate => &["prompt", "num_frames"],
            TemplateKind::Verify => &["prompt", "dss_json"],
            TemplateKind::Rectify => &["prompt", "dss_json", "feedback_json"],
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub name: TemplateKind,
    pub template_text: String,
    pub in_context_example: String,
}

impl PromptTemplate {
    pub fn new(
        name: TemplateKind,
        template_text: impl Into<String>,
        in_context_example: impl Into<String>,
    ) -> Result<Self, TemplateError> {
        let t = Self {
            name,
            template_text: template_text.into(),
            in_context_example: in_context_example.into(),
        };
        for p in name.required_placeholders() {
            if !t.references(p) {
                return Err(TemplateError::MissingPlaceholder {
                    template: name,
                    placeholder: p.to_string(),
                });
            }
        }
        Ok(t)
    }

    pub fn references(&self, placeholder: &str) -> bool {
        self.template_text.contains(&format!("{{{placeholder}}}"))
    }

    /// Substitute placeholders and append the in-context example.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = self.template_text.clone();
        for p in PLACEHOLDERS {
            if !self.references(p) {
                continue;
            }
            let value = bindings
                .get(p)
                .ok_or_else(|| TemplateError::MissingBinding {
                    template: self.name,
                    placeholder: p.to_string(),
                })?;
            out = out.replace(&format!("{{{p}}}"), value);
        }
        if !self.in_context_example.is_empty() {
            if !out.ends_with('\n') {
                out.push('\n');
            }
            out.push('\n');
            out.push_str(&self.in_context_example);
        }
        Ok(out)
    }
}

/// Free-function form of [`PromptTemplate::render`].
pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &BTreeMap<&str, String>,
) -> Result<String, TemplateError> {
    template.render(bindings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub generate: PromptTemplate,
    pub verify: PromptTemplate,
    pub rectify: PromptTemplate,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let t = |kind, text: &str, example: &str| {
            PromptTemplate::new(kind, text, example).expect("shipped templates are complete")
        };
        Self {
            generate: t(
                TemplateKind::Generate,
                include_str!("../../templates/generate.txt"),
                include_str!("../../templates/generate.example.txt"),
            ),
            verify: t(
                TemplateKind::Verify,
                include_str!("../../templates/verify.txt"),
                include_str!("../../templates/verify.example.txt"),
            ),
            rectify: t(
                TemplateKind::Rectify,
                include_str!("../../templates/rectify.txt"),
                include_str!("../../templates/rectify.example.txt"),
            ),
        }
    }
}

impl PromptTemplates {
    /// Load `<kind>.txt` and `<kind>.example.txt` from `dir`, falling back
    /// to the shipped default for any file that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let defaults = Self::default();
        let read = |file: String, fallback: &str| -> Result<String, TemplateError> {
            let path = dir.join(&file);
            match fs::read_to_string(&path) {
                Ok(s) => Ok(s),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(fallback.to_string()),
                Err(e) => Err(TemplateError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                }),
            }
        };
        let load = |d: &PromptTemplate| -> Result<PromptTemplate, TemplateError> {
            let name = d.name.as_str();
            PromptTemplate::new(
                d.name,
                read(format!("{name}.txt"), &d.template_text)?,
                read(format!("{name}.example.txt"), &d.in_context_example)?,
            )
        };
        Ok(Self {
            generate: load(&defaults.generate)?,
            verify: load(&defaults.verify)?,
            rectify: load(&defaults.rectify)?,
        })
    }

    pub fn get(&self, kind: TemplateKind) -> &PromptTemplate {
        match kind {
            TemplateKind::Generate => &self.generate,
            TemplateKind::Verify => &self.verify,
            TemplateKind::Rectify => &self.rectify,
        }
    }
}
