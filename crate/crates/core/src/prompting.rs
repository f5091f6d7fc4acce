//! Prompt templates for the reasoning stage, the answer stage, and the
//! direct-answer baseline.
//!
//! Templates use `{visual_context}`, `{question}` and `{thought_process}`
//! placeholders. Rendering is a single pass over the parsed template, so
//! substituted values are never expanded again even if they contain
//! placeholder-looking text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ThoughtProcess, VisualContext};

/// Trigger phrase appended to the reasoning-stage prompt.
pub const STEP_BY_STEP: &str = "let's think step by step";

pub const DEFAULT_COT_TEMPLATE: &str =
    "Context: {visual_context}\nQuestion: {question}\nAnswer: let's think step by step.";
pub const DEFAULT_GENERAL_TEMPLATE: &str =
    "Context: {visual_context}\nReasoning: {thought_process}\nQuestion: {question}\nAnswer:";
/// Answer-stage template for the zero-shot CoT baseline: the general template
/// without its context line.
pub const DEFAULT_GENERAL_WITHOUT_CONTEXT_TEMPLATE: &str =
    "Reasoning: {thought_process}\nQuestion: {question}\nAnswer:";
pub const DEFAULT_NO_COT_TEMPLATE: &str =
    "Context: {visual_context}\nQuestion: {question}\nAnswer:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template {template:?}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template:?}: missing binding for {{{placeholder}}}")]
    MissingBinding {
        template: String,
        placeholder: Placeholder,
    },
    #[error("template {template:?}: binding {{{placeholder}}} is not used by the template")]
    UnknownBinding {
        template: String,
        placeholder: Placeholder,
    },
    #[error("template {template:?}: value for {{{placeholder}}} is empty")]
    EmptyValue {
        template: String,
        placeholder: Placeholder,
    },
    #[error("template {template:?}: {message}")]
    Shape { template: String, message: String },
    #[error("failed to read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placeholder {
    VisualContext,
    Question,
    ThoughtProcess,
}

impl Placeholder {
    pub fn as_str(self) -> &'static str {
        match self {
            Placeholder::VisualContext => "visual_context",
            Placeholder::Question => "question",
            Placeholder::ThoughtProcess => "thought_process",
        }
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Placeholder {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "visual_context" => Ok(Placeholder::VisualContext),
            "question" => Ok(Placeholder::Question),
            "thought_process" => Ok(Placeholder::ThoughtProcess),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptStage {
    CoT,
    General,
    NoCoT,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

/// A parsed template. `{name}` with `name` made of lowercase letters and
/// underscores is a placeholder; any other brace text is literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    stage: PromptStage,
    body: String,
    segments: Vec<Segment>,
    required: BTreeSet<Placeholder>,
}

impl PromptTemplate {
    pub fn parse(
        name: impl Into<String>,
        stage: PromptStage,
        body: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let name = name.into();
        let body = body.into();
        let mut segments = Vec::new();
        let mut required = BTreeSet::new();
        let mut literal = String::new();
        let mut rest = body.as_str();
        while let Some(open) = rest.find('{') {
            literal.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let ident_len = after
                .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
                .unwrap_or(after.len());
            if ident_len > 0 && after[ident_len..].starts_with('}') {
                let ident = &after[..ident_len];
                let placeholder: Placeholder =
                    ident.parse().map_err(|_| PromptError::UnknownPlaceholder {
                        template: name.clone(),
                        name: ident.to_string(),
                    })?;
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(placeholder));
                required.insert(placeholder);
                rest = &after[ident_len + 1..];
            } else {
                literal.push('{');
                rest = after;
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Self {
            name,
            stage,
            body,
            segments,
            required,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stage(&self) -> PromptStage {
        self.stage
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_placeholders(&self) -> &BTreeSet<Placeholder> {
        &self.required
    }

    fn expect_shape(
        &self,
        must_have: &[Placeholder],
        must_not_have: &[Placeholder],
    ) -> Result<(), PromptError> {
        for p in must_have {
            if !self.required.contains(p) {
                return Err(self.shape_error(format!("must contain {{{p}}}")));
            }
        }
        for p in must_not_have {
            if self.required.contains(p) {
                return Err(self.shape_error(format!("must not contain {{{p}}}")));
            }
        }
        Ok(())
    }

    fn shape_error(&self, message: String) -> PromptError {
        PromptError::Shape {
            template: self.name.clone(),
            message,
        }
    }
}

/// Rendered prompt plus the values that were substituted into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub stage: PromptStage,
    pub bindings: BTreeMap<Placeholder, String>,
}

pub fn render_template(
    template: &PromptTemplate,
    bindings: &BTreeMap<Placeholder, String>,
) -> Result<PromptText, PromptError> {
    for &placeholder in &template.required {
        match bindings.get(&placeholder) {
            None => {
                return Err(PromptError::MissingBinding {
                    template: template.name.clone(),
                    placeholder,
                })
            }
            Some(v) if v.is_empty() => {
                return Err(PromptError::EmptyValue {
                    template: template.name.clone(),
                    placeholder,
                })
            }
            Some(_) => {}
        }
    }
    if let Some(&placeholder) = bindings.keys().find(|p| !template.required.contains(p)) {
        return Err(PromptError::UnknownBinding {
            template: template.name.clone(),
            placeholder,
        });
    }
    let mut text = String::with_capacity(template.body.len() + 64);
    for segment in &template.segments {
        match segment {
            Segment::Literal(s) => text.push_str(s),
            Segment::Slot(p) => text.push_str(&bindings[p]),
        }
    }
    Ok(PromptText {
        text,
        stage: template.stage,
        bindings: bindings.clone(),
    })
}

/// The four templates a pipeline needs.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub cot: PromptTemplate,
    pub general: PromptTemplate,
    pub general_without_context: PromptTemplate,
    pub no_cot: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::from_bodies(
            DEFAULT_COT_TEMPLATE,
            DEFAULT_GENERAL_TEMPLATE,
            DEFAULT_GENERAL_WITHOUT_CONTEXT_TEMPLATE,
            DEFAULT_NO_COT_TEMPLATE,
        )
        .expect("default templates are well formed")
    }
}

/// Paths to template files; `None` keeps the built-in default.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    pub cot: Option<std::path::PathBuf>,
    pub general: Option<std::path::PathBuf>,
    pub general_without_context: Option<std::path::PathBuf>,
    pub no_cot: Option<std::path::PathBuf>,
}

impl PromptSet {
    pub fn from_bodies(
        cot: &str,
        general: &str,
        general_without_context: &str,
        no_cot: &str,
    ) -> Result<Self, PromptError> {
        use Placeholder::*;
        let cot = PromptTemplate::parse("cot", PromptStage::CoT, cot)?;
        cot.expect_shape(&[VisualContext, Question], &[ThoughtProcess])?;
        if !cot.body.to_lowercase().contains(STEP_BY_STEP) {
            return Err(cot.shape_error(format!("must contain {STEP_BY_STEP:?}")));
        }
        let general = PromptTemplate::parse("general", PromptStage::General, general)?;
        general.expect_shape(&[VisualContext, ThoughtProcess, Question], &[])?;
        let general_without_context = PromptTemplate::parse(
            "general_without_context",
            PromptStage::General,
            general_without_context,
        )?;
        general_without_context.expect_shape(&[ThoughtProcess, Question], &[VisualContext])?;
        let no_cot = PromptTemplate::parse("no_cot", PromptStage::NoCoT, no_cot)?;
        no_cot.expect_shape(&[VisualContext, Question], &[ThoughtProcess])?;
        if no_cot.body.to_lowercase().contains(STEP_BY_STEP) {
            return Err(no_cot.shape_error(format!("must not contain {STEP_BY_STEP:?}")));
        }
        Ok(Self {
            cot,
            general,
            general_without_context,
            no_cot,
        })
    }

    /// Loads overrides from UTF-8 template files, falling back to defaults.
    pub fn load(paths: &TemplatePaths, base: &Path) -> Result<Self, PromptError> {
        let read = |p: &Option<std::path::PathBuf>, default: &str| -> Result<String, PromptError> {
            match p {
                None => Ok(default.to_string()),
                Some(p) => {
                    let path = base.join(p);
                    std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })
                }
            }
        };
        Self::from_bodies(
            &read(&paths.cot, DEFAULT_COT_TEMPLATE)?,
            &read(&paths.general, DEFAULT_GENERAL_TEMPLATE)?,
            &read(
                &paths.general_without_context,
                DEFAULT_GENERAL_WITHOUT_CONTEXT_TEMPLATE,
            )?,
            &read(&paths.no_cot, DEFAULT_NO_COT_TEMPLATE)?,
        )
    }

    pub fn build_cot_prompt(
        &self,
        v: &VisualContext,
        question: &str,
    ) -> Result<PromptText, PromptError> {
        render_template(
            &self.cot,
            &bind(&[
                (Placeholder::VisualContext, &v.text),
                (Placeholder::Question, question),
            ]),
        )
    }

    pub fn build_general_prompt(
        &self,
        v: &VisualContext,
        r: &ThoughtProcess,
        question: &str,
    ) -> Result<PromptText, PromptError> {
        render_template(
            &self.general,
            &bind(&[
                (Placeholder::VisualContext, &v.text),
                (Placeholder::ThoughtProcess, &r.text),
                (Placeholder::Question, question),
            ]),
        )
    }

    /// Answer-stage prompt for the zero-shot CoT baseline (no visual context).
    pub fn build_general_prompt_without_context(
        &self,
        r: &ThoughtProcess,
        question: &str,
    ) -> Result<PromptText, PromptError> {
        render_template(
            &self.general_without_context,
            &bind(&[
                (Placeholder::ThoughtProcess, &r.text),
                (Placeholder::Question, question),
            ]),
        )
    }

    pub fn build_no_cot_prompt(
        &self,
        v: &VisualContext,
        question: &str,
    ) -> Result<PromptText, PromptError> {
        render_template(
            &self.no_cot,
            &bind(&[
                (Placeholder::VisualContext, &v.text),
                (Placeholder::Question, question),
            ]),
        )
    }
}

fn bind(pairs: &[(Placeholder, &str)]) -> BTreeMap<Placeholder, String> {
    pairs.iter().map(|(p, v)| (*p, v.to_string())).collect()
}
