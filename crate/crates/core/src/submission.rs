//! Submitting a filled form and reading its outcome: DOM diff, keyword
//! feedback extraction, attachment of feedback to fields, and success/failure
//! classification (failure iff any feedback was observed).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::constraint::Bindings;
use crate::dom::{extract_form_model, parse_document, DomError, DomTree, FormModel, FormSelector, NodeId};
use crate::ferg::{AnalysisError, FergBuilder};

/// HTML and final URL of the page an executor is showing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub url: String,
    pub html: String,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ExecutorError {
    #[error("navigation to {url} failed: {message}")]
    Navigation { url: String, message: String },
    #[error("no input field `{0}` on the page")]
    UnknownField(String),
    #[error("executor transport failure: {0}")]
    Transport(String),
    #[error("no page loaded")]
    NoPage,
}

/// Drives a form: a simulator, or a browser behind a remote adapter. One
/// session per pipeline.
pub trait Executor {
    fn navigate(&mut self, url: &str) -> Result<Page, ExecutorError>;
    fn fill(&mut self, field: &str, value: &str) -> Result<(), ExecutorError>;
    fn submit(&mut self) -> Result<Page, ExecutorError>;
    fn page(&self) -> Result<Page, ExecutorError>;
}

impl<E: Executor + ?Sized> Executor for &mut E {
    fn navigate(&mut self, url: &str) -> Result<Page, ExecutorError> {
        (**self).navigate(url)
    }
    fn fill(&mut self, field: &str, value: &str) -> Result<(), ExecutorError> {
        (**self).fill(field, value)
    }
    fn submit(&mut self) -> Result<Page, ExecutorError> {
        (**self).submit()
    }
    fn page(&self) -> Result<Page, ExecutorError> {
        (**self).page()
    }
}

pub const DEFAULT_KEYWORDS: [&str; 11] = [
    "not valid",
    "invalid",
    "valid",
    "required",
    "denied",
    "cannot",
    "must",
    "error",
    "same",
    "please select",
    "please enter",
];

/// Lowercase substrings marking a text fragment as feedback.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct FeedbackKeywords(Vec<String>);

impl FeedbackKeywords {
    pub fn new(words: Vec<String>) -> Result<Self, &'static str> {
        let words: Vec<String> = words
            .into_iter()
            .map(|w| w.trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return Err("feedback keyword list must not be empty");
        }
        Ok(FeedbackKeywords(words))
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }

    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.0.iter().any(|k| lower.contains(k.as_str()))
    }
}

impl Default for FeedbackKeywords {
    fn default() -> Self {
        FeedbackKeywords(DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect())
    }
}

impl TryFrom<Vec<String>> for FeedbackKeywords {
    type Error = &'static str;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        FeedbackKeywords::new(v)
    }
}

impl From<FeedbackKeywords> for Vec<String> {
    fn from(k: FeedbackKeywords) -> Self {
        k.0
    }
}

/// Text of one node in the after-page.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub node: NodeId,
    pub path: String,
    pub text: String,
}

/// Nodes of `after` whose structural path is new or whose text changed
/// relative to `before`. Deleted text is ignored.
pub fn dom_diff(before: &DomTree, after: &DomTree) -> Vec<Fragment> {
    let old: BTreeMap<String, &str> =
        before.nodes().iter().map(|n| (before.path(n.id), n.text.as_str())).collect();
    after
        .nodes()
        .iter()
        .filter(|n| !n.text.is_empty())
        .filter_map(|n| {
            let path = after.path(n.id);
            match old.get(&path) {
                Some(t) if *t == n.text => None,
                _ => Some(Fragment { node: n.id, path, text: n.text.clone() }),
            }
        })
        .collect()
}

/// Every non-empty text node of a page, used after a redirect.
pub fn page_fragments(tree: &DomTree) -> Vec<Fragment> {
    tree.nodes()
        .iter()
        .filter(|n| !n.text.is_empty() && !matches!(n.tag.as_str(), "title" | "script" | "style"))
        .map(|n| Fragment { node: n.id, path: tree.path(n.id), text: n.text.clone() })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub text: String,
    pub node: NodeId,
}

/// Keeps fragments containing a keyword; identical texts collapse to the
/// first occurrence.
pub fn extract_feedback(fragments: &[Fragment], keywords: &FeedbackKeywords) -> Vec<FeedbackItem> {
    let mut out: Vec<FeedbackItem> = Vec::new();
    for f in fragments {
        if keywords.matches(&f.text) && !out.iter().any(|i| i.text == f.text) {
            out.push(FeedbackItem { text: f.text.clone(), node: f.node });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackScope {
    /// Attached to the field with this key.
    Inline(String),
    Global,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub text: String,
    pub scope: FeedbackScope,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failure,
}

pub fn classify_outcome(feedback: &[Feedback]) -> Outcome {
    if feedback.is_empty() {
        Outcome::Success
    } else {
        Outcome::Failure
    }
}

/// Scopes feedback by rebuilding the graph on the after-page: an item whose
/// text node keeps a local edge to an input field is inline for that field;
/// everything else (outside the form, unattached, or no form at all) is
/// global.
pub fn attach_feedback(
    builder: &mut FergBuilder,
    after: &DomTree,
    after_model: Option<&FormModel>,
    items: &[FeedbackItem],
) -> Result<Vec<Feedback>, AnalysisError> {
    let global = |i: &FeedbackItem| Feedback { text: i.text.clone(), scope: FeedbackScope::Global };
    let Some(model) = after_model else {
        return Ok(items.iter().map(global).collect());
    };
    let analysis = builder.build(after, model)?;
    Ok(items
        .iter()
        .map(|item| {
            if model.text_by_node(item.node).is_none() {
                return global(item);
            }
            match analysis.ferg.attached_field(item.node).and_then(|f| model.field_by_node(f)) {
                Some(field) => Feedback { text: item.text.clone(), scope: FeedbackScope::Inline(field.key.clone()) },
                None => global(item),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SubmissionError {
    #[error("assignment names `{0}`, which is not a field of the form")]
    InvalidAssignment(String),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error("page could not be parsed: {0}")]
    Dom(#[from] DomError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// Raw before/after capture of one submission.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSubmission {
    pub before: Page,
    pub before_tree: DomTree,
    pub after: Page,
    pub after_tree: DomTree,
    /// URL changed and the destination has no form.
    pub redirected: bool,
}

/// Navigates to `url`, fills every field of `model` in document order
/// (unassigned fields get the empty string), and submits.
pub fn submit(
    executor: &mut dyn Executor,
    url: &str,
    model: &FormModel,
    assignment: &Bindings,
) -> Result<RawSubmission, SubmissionError> {
    if let Some(k) = assignment.values.keys().find(|k| model.field(k).is_none()) {
        return Err(SubmissionError::InvalidAssignment(k.clone()));
    }
    let before = executor.navigate(url)?;
    let before_tree = parse_document(&before.html)?;
    for field in &model.fields {
        executor.fill(&field.key, assignment.get(&field.key).unwrap_or(""))?;
    }
    let after = executor.submit()?;
    let after_tree = parse_document(&after.html)?;
    let has_form = after_tree.find_by_tag("form").next().is_some();
    let redirected = after.url != before.url && !has_form;
    Ok(RawSubmission { before, before_tree, after, after_tree, redirected })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmissionResult {
    pub final_url: String,
    pub redirected: bool,
    pub feedback: Vec<Feedback>,
    pub outcome: Outcome,
}

/// Diffs, extracts, attaches and classifies a raw submission.
pub fn analyze_submission(
    raw: &RawSubmission,
    keywords: &FeedbackKeywords,
    builder: &mut FergBuilder,
    selector: Option<&FormSelector>,
) -> Result<SubmissionResult, SubmissionError> {
    let fragments = if raw.redirected {
        page_fragments(&raw.after_tree)
    } else {
        dom_diff(&raw.before_tree, &raw.after_tree)
    };
    let items = extract_feedback(&fragments, keywords);
    let model = if raw.redirected || items.is_empty() {
        None
    } else {
        extract_form_model(&raw.after_tree, selector).ok()
    };
    let feedback = attach_feedback(builder, &raw.after_tree, model.as_ref(), &items)?;
    let outcome = classify_outcome(&feedback);
    Ok(SubmissionResult { final_url: raw.after.url.clone(), redirected: raw.redirected, feedback, outcome })
}
