//! Coverage scoring and the static baseline generator.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ExpectedState, RecordKind, RunRecord, TestCase};
use crate::constraint::Bindings;
use crate::dom::{FormModel, InputType};
use crate::simulator::{fss_coverage, passing_check, Coverage, FormSpec, Observation, SUCCESS_MARKER};
use crate::submission::Outcome;

pub fn observations_from_records(records: &[RunRecord]) -> Vec<Observation> {
    records
        .iter()
        .filter(|r| r.kind != RecordKind::Discrepancy)
        .filter_map(|r| {
            Some(Observation {
                success: r.outcome? == Outcome::Success,
                feedback: r.feedback.iter().map(|f| f.text.clone()).collect(),
            })
        })
        .collect()
}

pub fn observations_from_tests(tests: &[TestCase]) -> Vec<Observation> {
    tests
        .iter()
        .filter_map(TestCase::expected)
        .map(|e| Observation {
            success: matches!(e, ExpectedState::Success { .. }),
            feedback: e.feedback_texts().into_iter().map(String::from).collect(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub feedback: String,
    pub inputs: Vec<String>,
    pub covered: bool,
}

/// A distinct observed state and how often it was seen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedState {
    pub feedback: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Absent for targets without ground truth.
    pub coverage: Option<Coverage>,
    pub passing: bool,
    pub rows: Vec<CoverageRow>,
    pub observed: Vec<ObservedState>,
}

/// Scores observations against a spec's ground truth when one is given;
/// otherwise lists the distinct observed states only.
pub fn coverage_report(observed: &[Observation], truth: Option<&FormSpec>) -> CoverageReport {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for o in observed {
        if o.success {
            *counts.entry(SUCCESS_MARKER.to_string()).or_default() += 1;
        }
        for t in &o.feedback {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    let observed_states = counts.into_iter().map(|(feedback, count)| ObservedState { feedback, count }).collect();
    let passing = passing_check(observed);
    let Some(spec) = truth else {
        return CoverageReport { coverage: None, passing, rows: Vec::new(), observed: observed_states };
    };
    let fss = spec.enumerate_fss();
    let coverage = fss_coverage(&fss, observed);
    let rows = fss
        .into_iter()
        .zip(&coverage.covered)
        .map(|(r, c)| CoverageRow { feedback: r.feedback, inputs: r.inputs, covered: *c })
        .collect();
    CoverageReport { coverage: Some(coverage), passing, rows, observed: observed_states }
}

fn extremes(t: InputType) -> [&'static str; 4] {
    match t {
        InputType::Number => ["", "-1", "0", "999999999"],
        InputType::Date => ["", "0000-00-00", "1900-01-01", "9999-12-31"],
        InputType::Email => ["", "a", "a@b", "aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa@example.com"],
        InputType::Tel => ["", "0", "+", "999999999999999999999"],
        _ => ["", "a", "1", "aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa"],
    }
}

/// Type-based boundary values with no knowledge of the form's semantics:
/// one assignment per extreme, every field set to its type's extreme.
pub fn static_baseline(model: &FormModel) -> Vec<Bindings> {
    (0..4)
        .map(|i| {
            Bindings::from_values(model.fields.iter().map(|f| (f.key.clone(), extremes(f.input_type)[i].to_string())))
        })
        .collect()
}
