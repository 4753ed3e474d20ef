//! Declarative form backend with a ground-truth list of submission states.
//!
//! A spec lists fields and an ordered set of validation rules. Each rule is a
//! list of requirements in the constraint syntax and fires when any of them
//! evaluates to false; the first firing rule's feedback is rendered. When no
//! rule fires, the success action runs. Each rule is one failure state; the
//! success action is the one success state.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::constraint::{parse_constraints_in, Bindings, ConstraintSet, Evaluator, ParseError, Verdict};
use crate::dom::InputType;
use crate::submission::{Executor, ExecutorError, Page};
use crate::text::escape_html;

/// Marker used in place of feedback text for the success state.
pub const SUCCESS_MARKER: &str = "SUCCESS";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDoc {
    /// Key used in assignments, rules and the input's `name` attribute.
    pub name: String,
    pub label: String,
    #[serde(default = "default_input_type")]
    pub input_type: String,
    /// `id` attribute; derived from the name when absent.
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    /// Fields sharing a group are wrapped in one fieldset.
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub hint: Option<String>,
    #[serde(default)]
    pub date_format: Option<String>,
}

fn default_input_type() -> String {
    "text".into()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeDoc {
    Inline(String),
    Global,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleDoc {
    /// Expect-chains; the rule fires when any constraint in them is false.
    pub requires: Vec<String>,
    pub feedback: String,
    pub scope: ScopeDoc,
    /// Values that, laid over the success witness, trigger this rule.
    #[serde(default)]
    pub witness: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuccessAction {
    Redirect(String),
    Message(String),
}

/// On-disk form of a simulator spec.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecDocument {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub heading: Option<String>,
    pub url: String,
    /// Today's date as far as the form is concerned (ISO-8601).
    pub reference_date: String,
    #[serde(default)]
    pub submit_label: Option<String>,
    pub fields: Vec<FieldDoc>,
    pub rules: Vec<RuleDoc>,
    pub success: SuccessAction,
    #[serde(default)]
    pub success_witness: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("spec schema error: {0}")]
    Schema(String),
    #[error("rule {rule} refers to unknown field `{field}`")]
    DanglingFieldReference { rule: usize, field: String },
    #[error("rule {rule}: {error}")]
    InvalidRequirement { rule: usize, error: ParseError },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RuleScope {
    Inline(String),
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub requires: Vec<ConstraintSet>,
    /// Minimal input subset: subjects and referenced fields, in field order.
    pub inputs: Vec<String>,
    pub feedback: String,
    pub scope: RuleScope,
    pub witness: BTreeMap<String, String>,
}

/// A validated spec.
#[derive(Clone, Debug, PartialEq)]
pub struct FormSpec {
    pub doc: SpecDocument,
    pub reference_date: NaiveDate,
    pub rules: Vec<Rule>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FssKind {
    Success,
    Failure,
}

/// One ground-truth submission state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FssRecord {
    pub inputs: Vec<String>,
    /// Feedback text, or [`SUCCESS_MARKER`].
    pub feedback: String,
    pub kind: FssKind,
}

/// Outcome of one observed submission, as needed for coverage scoring.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub success: bool,
    pub feedback: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimResponse {
    pub url: String,
    pub html: String,
    /// Index of the rule that fired, if any.
    pub fired: Option<usize>,
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

impl FormSpec {
    pub fn from_document(doc: SpecDocument) -> Result<FormSpec, SpecError> {
        let reference_date = NaiveDate::parse_from_str(&doc.reference_date, "%Y-%m-%d")
            .map_err(|_| SpecError::Schema(format!("reference_date `{}` is not YYYY-MM-DD", doc.reference_date)))?;
        if doc.fields.is_empty() {
            return Err(SpecError::Schema("spec has no fields".into()));
        }
        let names: Vec<&str> = doc.fields.iter().map(|f| f.name.as_str()).collect();
        let mut seen = BTreeSet::new();
        for f in &doc.fields {
            if !seen.insert(f.name.as_str()) {
                return Err(SpecError::Schema(format!("duplicate field `{}`", f.name)));
            }
            if InputType::from_type_attr(&f.input_type).is_none() {
                return Err(SpecError::Schema(format!("field `{}` has unsupported type `{}`", f.name, f.input_type)));
            }
        }
        let mut texts = BTreeSet::new();
        let mut rules = Vec::with_capacity(doc.rules.len());
        for (i, r) in doc.rules.iter().enumerate() {
            if !texts.insert(r.feedback.as_str()) {
                return Err(SpecError::Schema(format!("rule {i} repeats feedback `{}`", r.feedback)));
            }
            if r.requires.is_empty() {
                return Err(SpecError::Schema(format!("rule {i} has no requirements")));
            }
            let mut requires = Vec::new();
            let mut used = BTreeSet::new();
            for chain in &r.requires {
                let set = parse_constraints_in(chain, &names)
                    .map_err(|error| SpecError::InvalidRequirement { rule: i, error })?;
                used.insert(set.field.clone());
                used.extend(set.field_refs());
                requires.push(set);
            }
            let scope = match &r.scope {
                ScopeDoc::Inline(f) => {
                    used.insert(f.clone());
                    RuleScope::Inline(f.clone())
                }
                ScopeDoc::Global => RuleScope::Global,
            };
            for f in used.iter().chain(r.witness.keys()) {
                if !names.contains(&f.as_str()) {
                    return Err(SpecError::DanglingFieldReference { rule: i, field: f.clone() });
                }
            }
            let inputs: Vec<String> = names
                .iter()
                .filter(|n| requires.iter().any(|s: &ConstraintSet| s.field == **n || s.field_refs().iter().any(|x| x == *n)))
                .map(|n| n.to_string())
                .collect();
            rules.push(Rule {
                requires,
                inputs,
                feedback: crate::text::normalize_whitespace(&r.feedback),
                scope,
                witness: r.witness.clone(),
            });
        }
        if let Some(k) = doc.success_witness.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(SpecError::DanglingFieldReference { rule: usize::MAX, field: k.clone() });
        }
        Ok(FormSpec { doc, reference_date, rules })
    }

    pub fn id(&self) -> &str {
        &self.doc.id
    }

    pub fn url(&self) -> &str {
        &self.doc.url
    }

    pub fn field_names(&self) -> Vec<&str> {
        self.doc.fields.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn field(&self, name: &str) -> Option<&FieldDoc> {
        self.doc.fields.iter().find(|f| f.name == name)
    }

    fn html_id(f: &FieldDoc) -> String {
        f.id.clone().unwrap_or_else(|| slug(&f.name))
    }

    /// One record per rule plus the success record (last).
    pub fn enumerate_fss(&self) -> Vec<FssRecord> {
        let mut out: Vec<FssRecord> = self
            .rules
            .iter()
            .map(|r| FssRecord { inputs: r.inputs.clone(), feedback: r.feedback.clone(), kind: FssKind::Failure })
            .collect();
        out.push(FssRecord {
            inputs: self.field_names().into_iter().map(String::from).collect(),
            feedback: SUCCESS_MARKER.into(),
            kind: FssKind::Success,
        });
        out
    }

    /// Complete bindings for `assignment`, with missing fields empty.
    pub fn bindings(&self, assignment: &Bindings) -> Bindings {
        let mut b = Bindings::default();
        for f in &self.doc.fields {
            b.set(f.name.clone(), assignment.get(&f.name).unwrap_or(""));
            if let Some(fmt) = &f.date_format {
                b.date_formats.insert(f.name.clone(), fmt.clone());
            }
        }
        b
    }

    /// Index of the first rule violated by `assignment`.
    pub fn first_violation(&self, assignment: &Bindings, evaluator: &Evaluator) -> Option<usize> {
        let b = self.bindings(assignment);
        self.rules.iter().position(|rule| {
            rule.requires.iter().any(|set| {
                let value = b.get(&set.field).unwrap_or("");
                let fmt = set.date_format().or_else(|| b.date_format(&set.field));
                set.iter().any(|c| matches!(evaluator.evaluate(c, value, fmt, &b), Ok(Verdict::False)))
            })
        })
    }

    pub fn evaluator(&self) -> Evaluator {
        Evaluator::new(self.reference_date)
    }

    pub fn handle_submission(&self, assignment: &Bindings) -> SimResponse {
        self.handle_with(assignment, &self.evaluator())
    }

    pub fn handle_with(&self, assignment: &Bindings, evaluator: &Evaluator) -> SimResponse {
        match self.first_violation(assignment, evaluator) {
            Some(i) => SimResponse {
                url: self.doc.url.clone(),
                html: self.render_form(&self.bindings(assignment), Some(&self.rules[i])),
                fired: Some(i),
            },
            None => match &self.doc.success {
                SuccessAction::Redirect(url) => {
                    SimResponse { url: url.clone(), html: self.render_success(None), fired: None }
                }
                SuccessAction::Message(text) => {
                    SimResponse { url: self.doc.url.clone(), html: self.render_success(Some(text)), fired: None }
                }
            },
        }
    }

    /// Success witness overlaid with rule `i`'s witness.
    pub fn witness_assignment(&self, i: usize) -> Bindings {
        let mut b = Bindings::from_values(self.doc.success_witness.clone());
        for (k, v) in &self.rules[i].witness {
            b.set(k.clone(), v.clone());
        }
        b
    }

    pub fn success_assignment(&self) -> Bindings {
        Bindings::from_values(self.doc.success_witness.clone())
    }

    fn head(&self) -> String {
        format!(
            "<!DOCTYPE html>\n<html>\n<head>\n<title>{}</title>\n<meta name=\"description\" content=\"{}\">\n</head>\n",
            escape_html(&self.doc.title),
            escape_html(&self.doc.description)
        )
    }

    /// The form page with `values` filled in and, optionally, one rule's
    /// feedback rendered at its scope.
    pub fn render_form(&self, values: &Bindings, fired: Option<&Rule>) -> String {
        let mut html = self.head();
        html.push_str("<body>\n");
        if let Some(h) = &self.doc.heading {
            html.push_str(&format!("<h1>{}</h1>\n", escape_html(h)));
        }
        let global = match fired {
            Some(Rule { scope: RuleScope::Global, feedback, .. }) => escape_html(feedback),
            _ => String::new(),
        };
        html.push_str(&format!("<div id=\"form-messages\" role=\"alert\">{global}</div>\n"));
        html.push_str(&format!("<form id=\"{}\" method=\"post\">\n", escape_html(&self.doc.id)));
        let mut open_group: Option<&str> = None;
        for f in &self.doc.fields {
            if f.group.as_deref() != open_group {
                if open_group.is_some() {
                    html.push_str("</fieldset>\n");
                }
                if let Some(g) = &f.group {
                    html.push_str(&format!("<fieldset>\n<legend>{}</legend>\n", escape_html(g)));
                }
                open_group = f.group.as_deref();
            }
            let id = escape_html(&Self::html_id(f));
            html.push_str("<div class=\"field\">\n");
            html.push_str(&format!("<label for=\"{id}\">{}</label>\n", escape_html(&f.label)));
            let mut attrs = format!("id=\"{id}\" name=\"{}\"", escape_html(&f.name));
            for (k, v) in &f.attributes {
                attrs.push_str(&format!(" {}=\"{}\"", escape_html(k), escape_html(v)));
            }
            let value = values.get(&f.name).unwrap_or("");
            if f.input_type == "textarea" {
                html.push_str(&format!("<textarea {attrs}>{}</textarea>\n", escape_html(value)));
            } else {
                if !value.is_empty() {
                    attrs.push_str(&format!(" value=\"{}\"", escape_html(value)));
                }
                html.push_str(&format!("<input type=\"{}\" {attrs}>\n", escape_html(&f.input_type)));
            }
            if let Some(h) = &f.hint {
                html.push_str(&format!("<small>{}</small>\n", escape_html(h)));
            }
            let inline = match fired {
                Some(Rule { scope: RuleScope::Inline(target), feedback, .. }) if *target == f.name => {
                    escape_html(feedback)
                }
                _ => String::new(),
            };
            html.push_str(&format!("<div class=\"error\">{inline}</div>\n</div>\n"));
        }
        if open_group.is_some() {
            html.push_str("</fieldset>\n");
        }
        let submit = self.doc.submit_label.as_deref().unwrap_or("Submit");
        html.push_str(&format!("<button type=\"submit\">{}</button>\n</form>\n</body>\n</html>\n", escape_html(submit)));
        html
    }

    fn render_success(&self, message: Option<&str>) -> String {
        let mut html = self.head();
        html.push_str("<body>\n");
        match message {
            Some(m) => html.push_str(&format!("<p class=\"notice\">{}</p>\n", escape_html(m))),
            None => html.push_str("<h1>Results</h1>\n<p>Your request has been received.</p>\n"),
        }
        html.push_str("</body>\n</html>\n");
        html
    }
}

/// Covered ground-truth states and their ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub covered: Vec<bool>,
    pub count: usize,
    pub total: usize,
    pub ratio: f64,
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ({}%)", self.count, self.total, libm::round(self.ratio * 100.0) as i64)
    }
}

/// A state is covered when some observation produced exactly its feedback
/// text (or succeeded, for the success state).
pub fn fss_coverage(truth: &[FssRecord], observed: &[Observation]) -> Coverage {
    let covered: Vec<bool> = truth
        .iter()
        .map(|r| match r.kind {
            FssKind::Success => observed.iter().any(|o| o.success),
            FssKind::Failure => observed.iter().any(|o| !o.success && o.feedback.iter().any(|t| *t == r.feedback)),
        })
        .collect();
    let count = covered.iter().filter(|c| **c).count();
    let total = truth.len();
    let ratio = if total == 0 { 0.0 } else { count as f64 / total as f64 };
    Coverage { covered, count, total, ratio }
}

pub fn passing_check(observed: &[Observation]) -> bool {
    observed.iter().any(|o| o.success)
}

/// In-process executor over a spec.
pub struct SimExecutor<'a> {
    spec: &'a FormSpec,
    evaluator: Evaluator,
    values: Bindings,
    current: Option<Page>,
    submissions: usize,
}

impl<'a> SimExecutor<'a> {
    pub fn new(spec: &'a FormSpec) -> Self {
        SimExecutor { spec, evaluator: spec.evaluator(), values: Bindings::default(), current: None, submissions: 0 }
    }

    pub fn submissions(&self) -> usize {
        self.submissions
    }
}

impl Executor for SimExecutor<'_> {
    fn navigate(&mut self, url: &str) -> Result<Page, ExecutorError> {
        if url != self.spec.url() {
            return Err(ExecutorError::Navigation { url: url.into(), message: "no such page".into() });
        }
        self.values = Bindings::default();
        let page = Page { url: url.into(), html: self.spec.render_form(&self.values, None) };
        self.current = Some(page.clone());
        Ok(page)
    }

    fn fill(&mut self, field: &str, value: &str) -> Result<(), ExecutorError> {
        if self.current.is_none() {
            return Err(ExecutorError::NoPage);
        }
        if self.spec.field(field).is_none() {
            return Err(ExecutorError::UnknownField(field.into()));
        }
        self.values.set(field, value);
        Ok(())
    }

    fn submit(&mut self) -> Result<Page, ExecutorError> {
        if self.current.is_none() {
            return Err(ExecutorError::NoPage);
        }
        self.submissions += 1;
        let r = self.spec.handle_with(&self.values, &self.evaluator);
        let page = Page { url: r.url, html: r.html };
        self.current = Some(page.clone());
        Ok(page)
    }

    fn page(&self) -> Result<Page, ExecutorError> {
        self.current.clone().ok_or(ExecutorError::NoPage)
    }
}
