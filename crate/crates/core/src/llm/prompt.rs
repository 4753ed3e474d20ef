//! Prompt construction from the shipped plain-text templates.
//!
//! A template is a sequence of `[[Section]]` blocks; `{{name}}` placeholders
//! are substituted verbatim. The `Instructions` block becomes the bundle's
//! preamble, every other block one section.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraint::{catalog, serialize, Bindings, ConstraintSet};
use crate::dom::{serialize_node, DomTree, FormContext, FormModel};
use crate::ferg::{query_context, Ferg, FergError};
use crate::text::{hex, single_quote};

pub const CONSTRAINT_TEMPLATE: &str = include_str!("../../templates/constraint_prompt.txt");
pub const VALUE_TEMPLATE: &str = include_str!("../../templates/value_prompt.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    Constraint,
    Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SectionName {
    TimeContext,
    FormContext,
    InputFieldAndLocalContext,
    GlobalContext,
    Feedback,
    ConstraintsAndValues,
}

impl SectionName {
    pub const ALL: [SectionName; 6] = [
        SectionName::TimeContext,
        SectionName::FormContext,
        SectionName::InputFieldAndLocalContext,
        SectionName::GlobalContext,
        SectionName::Feedback,
        SectionName::ConstraintsAndValues,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SectionName::TimeContext => "TimeContext",
            SectionName::FormContext => "FormContext",
            SectionName::InputFieldAndLocalContext => "InputFieldAndLocalContext",
            SectionName::GlobalContext => "GlobalContext",
            SectionName::Feedback => "Feedback",
            SectionName::ConstraintsAndValues => "ConstraintsAndValues",
        }
    }

    pub fn from_name(s: &str) -> Option<SectionName> {
        Self::ALL.into_iter().find(|n| n.as_str() == s)
    }
}

impl fmt::Display for SectionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fully rendered prompt, kept structured so backends and logs can look at
/// individual sections.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    /// Key of the field the prompt is about.
    pub field: String,
    /// Keys of every field on the form; used to resolve `field('...')`
    /// references in the answer.
    pub known_fields: Vec<String>,
    pub instructions: String,
    pub sections: Vec<(SectionName, String)>,
    /// Hex SHA-256 of the template the bundle was rendered from.
    pub template_hash: String,
    /// Set on the second attempt after an unparsable answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reprompt: Option<String>,
}

impl PromptBundle {
    pub fn section(&self, name: SectionName) -> Option<&str> {
        self.sections.iter().find(|(n, _)| *n == name).map(|(_, t)| t.as_str())
    }

    pub fn section_names(&self) -> Vec<SectionName> {
        self.sections.iter().map(|(n, _)| *n).collect()
    }

    pub fn has_feedback(&self) -> bool {
        self.section(SectionName::Feedback).is_some()
    }

    /// Whether the section list matches the kind's fixed layout.
    pub fn conforms(&self) -> bool {
        use SectionName::*;
        let names = self.section_names();
        match self.kind {
            PromptKind::Constraint => {
                names == [TimeContext, FormContext, InputFieldAndLocalContext, GlobalContext]
                    || names == [TimeContext, FormContext, InputFieldAndLocalContext, GlobalContext, Feedback]
            }
            PromptKind::Value => names == [FormContext, InputFieldAndLocalContext, ConstraintsAndValues],
        }
    }

    /// A copy carrying a note about the previous unparsable answer.
    pub fn with_reprompt(&self, note: impl Into<String>) -> PromptBundle {
        PromptBundle { reprompt: Some(note.into()), ..self.clone() }
    }

    /// Plain text sent to a chat endpoint.
    pub fn render(&self) -> String {
        let mut out = String::from(self.instructions.trim_end());
        out.push('\n');
        for (name, text) in &self.sections {
            out.push_str(&format!("\n## {name}\n{}\n", text.trim_end()));
        }
        if let Some(note) = &self.reprompt {
            out.push_str(&format!("\n## Note\n{}\n", note.trim_end()));
        }
        out
    }
}

/// Context of one input field pulled from the graph.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldPromptContext {
    pub key: String,
    /// Outer HTML of the input element.
    pub html: String,
    /// Attached texts, strongest first.
    pub local_texts: Vec<String>,
    pub relevant: Vec<RelevantField>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevantField {
    pub key: String,
    pub label: Option<String>,
}

impl FieldPromptContext {
    pub fn from_graph(tree: &DomTree, model: &FormModel, ferg: &Ferg, key: &str) -> Result<Self, FergError> {
        let field = model.field(key).ok_or(FergError::UnknownNode(crate::dom::NodeId(usize::MAX)))?;
        let ctx = query_context(ferg, field.node)?;
        let label_text = |node| {
            ferg.label_of(node)
                .and_then(|t| model.text_by_node(t))
                .map(|t| t.text.clone())
        };
        Ok(FieldPromptContext {
            key: key.to_string(),
            html: serialize_node(tree, field.node),
            local_texts: ctx.local_texts.into_iter().map(|e| e.text).collect(),
            relevant: ctx
                .relevant_fields
                .into_iter()
                .filter_map(|e| {
                    let f = model.field_by_node(e.node)?;
                    Some(RelevantField { key: f.key.clone(), label: label_text(e.node) })
                })
                .collect(),
        })
    }
}

/// A value tried for a field in an earlier submission and the feedback text
/// the form answered with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub value: String,
    pub text: String,
}

struct Template {
    instructions: String,
    sections: Vec<(SectionName, String)>,
    hash: String,
}

fn load_template(src: &str) -> Template {
    let mut instructions = String::new();
    let mut sections: Vec<(SectionName, String)> = Vec::new();
    let mut current: Option<Option<SectionName>> = None;
    let mut buf = String::new();
    let mut flush = |current: &Option<Option<SectionName>>, buf: &mut String| {
        match current {
            Some(None) => instructions = core::mem::take(buf),
            Some(Some(n)) => sections.push((*n, core::mem::take(buf))),
            None => buf.clear(),
        }
    };
    for line in src.lines() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix("[[").and_then(|r| r.strip_suffix("]]")) {
            flush(&current, &mut buf);
            current = Some(SectionName::from_name(name));
            continue;
        }
        buf.push_str(line);
        buf.push('\n');
    }
    flush(&current, &mut buf);
    Template { instructions, sections, hash: hex(&Sha256::digest(src.as_bytes())) }
}

fn fill(text: &str, vars: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) if vars.contains_key(after[..end].trim()) => {
                out.push_str(&vars[after[..end].trim()]);
                rest = &after[end + 2..];
            }
            _ => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out.trim_end().to_string()
}

fn bullet_list(items: impl IntoIterator<Item = String>, empty: &str) -> String {
    let lines: Vec<String> = items.into_iter().map(|i| format!("- {i}")).collect();
    if lines.is_empty() {
        empty.to_string()
    } else {
        lines.join("\n")
    }
}

fn iso_datetime(now: NaiveDateTime) -> String {
    format!(
        "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}",
        now.year(),
        now.month(),
        now.day(),
        now.hour(),
        now.minute(),
        now.second()
    )
}

fn common_vars(field: &FieldPromptContext, form: &FormContext) -> BTreeMap<&'static str, String> {
    let mut vars = BTreeMap::new();
    vars.insert("field", field.key.clone());
    vars.insert("title", form.app_title.clone());
    vars.insert("description", form.app_description.clone());
    vars.insert("labels", bullet_list(form.labels.iter().cloned(), "(none)"));
    vars.insert("html", field.html.clone());
    vars.insert("local_texts", bullet_list(field.local_texts.iter().cloned(), "(none)"));
    vars
}

fn render(
    template: &Template,
    kind: PromptKind,
    field: &FieldPromptContext,
    known_fields: &[String],
    vars: &BTreeMap<&str, String>,
    include: impl Fn(SectionName) -> bool,
) -> PromptBundle {
    PromptBundle {
        kind,
        field: field.key.clone(),
        known_fields: known_fields.to_vec(),
        instructions: fill(&template.instructions, vars),
        sections: template
            .sections
            .iter()
            .filter(|(n, _)| include(*n))
            .map(|(n, t)| (*n, fill(t, vars)))
            .collect(),
        template_hash: template.hash.clone(),
        reprompt: None,
    }
}

pub fn constraint_template_hash() -> String {
    load_template(CONSTRAINT_TEMPLATE).hash
}

pub fn value_template_hash() -> String {
    load_template(VALUE_TEMPLATE).hash
}

/// The constraint prompt. The feedback section is present only when
/// `feedback` is nonempty.
pub fn build_constraint_prompt(
    field: &FieldPromptContext,
    form: &FormContext,
    now: NaiveDateTime,
    feedback: &[FeedbackEntry],
    known_fields: &[String],
) -> PromptBundle {
    let template = load_template(CONSTRAINT_TEMPLATE);
    let mut vars = common_vars(field, form);
    vars.insert("now", iso_datetime(now));
    vars.insert(
        "catalog",
        bullet_list(
            catalog().iter().map(|t| {
                let args: Vec<&str> = t.args.iter().map(|a| a.placeholder()).collect();
                format!("{}({}): {}", t.name, args.join(", "), t.description)
            }),
            "",
        ),
    );
    vars.insert(
        "relevant_fields",
        bullet_list(
            field.relevant.iter().map(|r| match &r.label {
                Some(l) => format!("field({}), labelled {}", single_quote(&r.key), single_quote(l)),
                None => format!("field({})", single_quote(&r.key)),
            }),
            "(none)",
        ),
    );
    vars.insert(
        "feedback",
        bullet_list(
            feedback.iter().map(|f| format!("value {} -> {}", single_quote(&f.value), single_quote(&f.text))),
            "",
        ),
    );
    let with_feedback = !feedback.is_empty();
    render(&template, PromptKind::Constraint, field, known_fields, &vars, |n| {
        n != SectionName::Feedback || with_feedback
    })
}

/// The value prompt. Field references whose target is bound are rendered
/// with the bound value substituted; unbound ones are left out.
pub fn build_value_prompt(
    field: &FieldPromptContext,
    form: &FormContext,
    constraints: &ConstraintSet,
    bindings: &Bindings,
    known_fields: &[String],
) -> PromptBundle {
    let template = load_template(VALUE_TEMPLATE);
    let mut vars = common_vars(field, form);
    vars.insert("constraints", constraints_and_values(constraints, bindings));
    render(&template, PromptKind::Value, field, known_fields, &vars, |_| true)
}

/// Body of the constraints-and-values section.
pub fn constraints_and_values(constraints: &ConstraintSet, bindings: &Bindings) -> String {
    let mut inlined = ConstraintSet::new(constraints.field.clone());
    let mut used: Vec<(String, String)> = Vec::new();
    for c in constraints.iter() {
        let Some(ic) = c.inline(bindings) else { continue };
        for r in c.field_refs() {
            if let Some(v) = bindings.get(r) {
                if !used.iter().any(|(k, _)| k == r) {
                    used.push((r.to_string(), v.to_string()));
                }
            }
        }
        inlined.push(ic);
    }
    if inlined.is_empty() {
        return String::from("There are no constraints on this field; any value is acceptable.");
    }
    let mut out = String::from("The value must satisfy every statement below:\n");
    out.push_str(&bullet_list(inlined.iter().map(|c| c.describe()), ""));
    out.push_str("\n\nThe same constraints as an expect-chain:\n```\n");
    out.push_str(&serialize(&inlined));
    out.push_str("\n```");
    if !used.is_empty() {
        out.push_str("\n\nValues already chosen for related fields:\n");
        out.push_str(&bullet_list(used.into_iter().map(|(k, v)| format!("{k}: {}", single_quote(&v))), ""));
    }
    out
}
