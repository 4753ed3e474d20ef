//! Test cases, the test plan document, and replay.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{PipelineError, RecordKind, RunRecord};
use crate::constraint::Bindings;
use crate::dom::{parse_document, FormSelector};
use crate::ferg::FergBuilder;
use crate::llm::{constraint_template_hash, value_template_hash};
use crate::simulator::SUCCESS_MARKER;
use crate::submission::{
    analyze_submission, Executor, Feedback, FeedbackKeywords, FeedbackScope, Outcome, RawSubmission,
    SubmissionError,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldValue {
    pub field: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ExpectedState {
    /// Accepted; the browser ends up at `url`.
    Success { url: String },
    /// Rejected with exactly these feedback texts.
    Failure { feedback: Vec<Feedback> },
}

impl ExpectedState {
    fn key(&self) -> Vec<String> {
        match self {
            ExpectedState::Success { .. } => alloc::vec![String::from(SUCCESS_MARKER)],
            ExpectedState::Failure { feedback } => {
                let mut t: Vec<String> = feedback.iter().map(|f| f.text.clone()).collect();
                t.sort();
                t
            }
        }
    }

    /// Whether an observation agrees with this expectation. Feedback order
    /// does not matter.
    pub fn matches(&self, other: &ExpectedState) -> bool {
        match (self, other) {
            (ExpectedState::Success { url: a }, ExpectedState::Success { url: b }) => a == b,
            (ExpectedState::Failure { feedback: a }, ExpectedState::Failure { feedback: b }) => {
                let norm = |v: &Vec<Feedback>| {
                    let mut v: Vec<(String, FeedbackScope)> = v.iter().map(|f| (f.text.clone(), f.scope.clone())).collect();
                    v.sort();
                    v
                };
                norm(a) == norm(b)
            }
            _ => false,
        }
    }

    pub fn feedback_texts(&self) -> Vec<&str> {
        match self {
            ExpectedState::Success { .. } => Vec::new(),
            ExpectedState::Failure { feedback } => feedback.iter().map(|f| f.text.as_str()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum TestStep {
    Navigate { url: String },
    Populate { values: Vec<FieldValue> },
    Submit,
    Assert { expected: ExpectedState },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    /// Fields whose values the expected state depends on.
    pub inputs: Vec<String>,
    /// Run record the expectation was observed in.
    pub provenance: usize,
    pub steps: Vec<TestStep>,
}

impl TestCase {
    pub fn assignment(&self) -> Bindings {
        let mut b = Bindings::default();
        for s in &self.steps {
            if let TestStep::Populate { values } = s {
                for v in values {
                    b.set(v.field.clone(), v.value.clone());
                }
            }
        }
        b
    }

    pub fn expected(&self) -> Option<&ExpectedState> {
        self.steps.iter().find_map(|s| match s {
            TestStep::Assert { expected } => Some(expected),
            _ => None,
        })
    }
}

/// The canonical test-plan document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPlan {
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    pub backend: String,
    pub seed: u64,
    pub constraint_template: String,
    pub value_template: String,
    pub tests: Vec<TestCase>,
}

impl TestPlan {
    pub fn new(target: &str, form: Option<&FormSelector>, backend: &str, seed: u64, tests: Vec<TestCase>) -> Self {
        TestPlan {
            target: target.to_string(),
            form: form.map(|f| f.to_string()),
            backend: backend.to_string(),
            seed,
            constraint_template: constraint_template_hash(),
            value_template: value_template_hash(),
            tests,
        }
    }
}

fn inputs_of(r: &RunRecord, all: &[String]) -> Vec<String> {
    if let Some(p) = &r.probe {
        return p.inputs.clone();
    }
    if r.outcome == Some(Outcome::Failure) {
        let mut keys: Vec<String> = Vec::new();
        for f in &r.feedback {
            match &f.scope {
                FeedbackScope::Inline(k) if all.contains(k) => {
                    if !keys.contains(k) {
                        keys.push(k.clone());
                    }
                }
                _ => return all.to_vec(),
            }
        }
        if !keys.is_empty() {
            return all.iter().filter(|k| keys.contains(k)).cloned().collect();
        }
    }
    all.to_vec()
}

/// One test per distinct (input subset, expected state) among the records
/// that were submitted, in record order.
pub fn emit_tests(
    records: &[RunRecord],
    url: &str,
    form: Option<&FormSelector>,
    fields: &[String],
) -> Result<Vec<TestCase>, PipelineError> {
    if records.is_empty() {
        return Err(PipelineError::NoRecords);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in records {
        let Some(outcome) = r.outcome else { continue };
        if r.kind == RecordKind::Discrepancy {
            continue;
        }
        let expected = match outcome {
            Outcome::Success => ExpectedState::Success { url: r.final_url.clone().unwrap_or_default() },
            Outcome::Failure => ExpectedState::Failure { feedback: r.feedback.clone() },
        };
        let inputs = inputs_of(r, fields);
        let mut subset = inputs.clone();
        subset.sort();
        if !seen.insert((subset, expected.key())) {
            continue;
        }
        let values = r.assignment.iter().map(|(f, v)| FieldValue { field: f.clone(), value: v.clone() }).collect();
        out.push(TestCase {
            id: format!("t{:03}", out.len() + 1),
            url: url.to_string(),
            form: form.map(|f| f.to_string()),
            inputs,
            provenance: r.id,
            steps: alloc::vec![
                TestStep::Navigate { url: url.to_string() },
                TestStep::Populate { values },
                TestStep::Submit,
                TestStep::Assert { expected },
            ],
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub id: String,
    pub passed: bool,
    pub observed: Option<ExpectedState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn execute(
    executor: &mut dyn Executor,
    test: &TestCase,
    builder: &mut FergBuilder,
    keywords: &FeedbackKeywords,
) -> Result<(ExpectedState, bool), SubmissionError> {
    let selector = test.form.as_deref().map(FormSelector::parse);
    let mut before = None;
    let mut after = None;
    let mut expected = None;
    for step in &test.steps {
        match step {
            TestStep::Navigate { url } => before = Some(executor.navigate(url)?),
            TestStep::Populate { values } => {
                for v in values {
                    executor.fill(&v.field, &v.value)?;
                }
            }
            TestStep::Submit => after = Some(executor.submit()?),
            TestStep::Assert { expected: e } => expected = Some(e),
        }
    }
    let before = before.ok_or(crate::submission::ExecutorError::NoPage)?;
    let after = after.ok_or(crate::submission::ExecutorError::NoPage)?;
    let before_tree = parse_document(&before.html)?;
    let after_tree = parse_document(&after.html)?;
    let has_form = after_tree.find_by_tag("form").next().is_some();
    let redirected = after.url != before.url && !has_form;
    let raw = RawSubmission { before, before_tree, after, after_tree, redirected };
    let result = analyze_submission(&raw, keywords, builder, selector.as_ref())?;
    let observed = match result.outcome {
        Outcome::Success => ExpectedState::Success { url: result.final_url },
        Outcome::Failure => ExpectedState::Failure { feedback: result.feedback },
    };
    let passed = expected.is_some_and(|e| e.matches(&observed));
    Ok((observed, passed))
}

/// Executes a test's four steps and compares the observed state with the
/// expected one.
pub fn run_test(
    executor: &mut dyn Executor,
    test: &TestCase,
    builder: &mut FergBuilder,
    keywords: &FeedbackKeywords,
) -> TestOutcome {
    match execute(executor, test, builder, keywords) {
        Ok((observed, passed)) => TestOutcome { id: test.id.clone(), passed, observed: Some(observed), error: None },
        Err(e) => TestOutcome { id: test.id.clone(), passed: false, observed: None, error: Some(e.to_string()) },
    }
}
