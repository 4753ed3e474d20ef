//! Deterministic stand-ins for a language model.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::parse::{parse_constraint_response, NO_VALUE};
use super::prompt::{PromptBundle, PromptKind, SectionName};
use super::{CompletionBackend, LlmError};
use crate::constraint::{format_date, serialize, Arg, Bindings, Constraint, ConstraintSet, TemplateId};
use crate::simulator::FormSpec;

fn fence(body: &str) -> String {
    format!("```\n{body}\n```")
}

/// Answers from a simulator spec's own rules: constraint prompts get the
/// field's requirements, value prompts get the first value from a bounded
/// alphabet that satisfies the prompt's constraints.
pub struct OracleMock {
    spec: Arc<FormSpec>,
}

impl OracleMock {
    pub fn new(spec: Arc<FormSpec>) -> Self {
        OracleMock { spec }
    }

    /// Every requirement whose subject is `field`, plus negated equality
    /// requirements of other fields that point at `field`, mirrored.
    pub fn constraints_for(&self, field: &str) -> ConstraintSet {
        let mut set = ConstraintSet::new(field);
        for rule in &self.spec.rules {
            for req in &rule.requires {
                if req.field == field {
                    for c in req.iter() {
                        set.push(c.clone());
                    }
                    continue;
                }
                for c in req.iter() {
                    if c.template == TemplateId::EqualToField && c.negated && c.field_refs().any(|r| r == field) {
                        set.push(Constraint::new(TemplateId::EqualToField, alloc::vec![Arg::Field(req.field.clone())]).negated());
                    }
                }
            }
        }
        set
    }

    fn date_formats(&self, field: &str, set: &ConstraintSet) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let declared = self.spec.field(field).and_then(|f| f.date_format.clone());
        for f in set.date_format().map(String::from).into_iter().chain(declared).chain(["YYYY-MM-DD".into(), "DD/MM".into()]) {
            if !out.contains(&f) {
                out.push(f);
            }
        }
        out
    }

    /// Candidate values in the order they are tried.
    pub fn candidates(&self, field: &str, set: &ConstraintSet) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut seen = BTreeSet::new();
        let mut add = |v: String| {
            if seen.insert(v.clone()) {
                out.push(v);
            }
        };
        let doc = &self.spec.doc;
        if let Some(v) = doc.success_witness.get(field) {
            add(v.clone());
        }
        for r in &doc.rules {
            if let Some(v) = r.witness.get(field) {
                add(v.clone());
            }
        }
        for c in set.iter() {
            match c.template {
                TemplateId::MatchPattern => {
                    for lit in alternation_literals(c.args.first().and_then(Arg::as_text).unwrap_or("")) {
                        add(lit);
                    }
                }
                TemplateId::Equal => {
                    if let Some(t) = c.args.first().and_then(Arg::as_text) {
                        add(t.to_string());
                    }
                }
                _ => {}
            }
        }
        let dated = set
            .iter()
            .any(|c| matches!(c.template, TemplateId::Date | TemplateId::AfterDate | TemplateId::BeforeDate));
        if dated {
            let reference = self.spec.reference_date;
            for fmt in self.date_formats(field, set) {
                for d in date_pool(reference) {
                    add(format_date(d, &fmt));
                }
            }
        }
        for c in set.iter() {
            match (c.template, c.args.as_slice()) {
                (TemplateId::LengthCondition, [_, Arg::Number(n)]) => {
                    let n = if *n < 0.0 { 0 } else { *n as usize };
                    for k in [n.saturating_sub(1), n, n + 1] {
                        add("a".repeat(k));
                        add("1".repeat(k));
                    }
                }
                (TemplateId::InRange, [Arg::Number(lo), Arg::Number(hi)]) => {
                    for x in [*lo, *hi, (lo + hi) / 2.0, lo - 1.0, hi + 1.0] {
                        add(number(x));
                    }
                }
                _ => {}
            }
        }
        for g in GENERIC {
            add(g.to_string());
        }
        add("A".repeat(300));
        out
    }

    /// First candidate satisfying `set`.
    pub fn solve(&self, field: &str, set: &ConstraintSet) -> Option<String> {
        let evaluator = self.spec.evaluator();
        let mut bindings = Bindings::default();
        if let Some(fmt) = self.spec.field(field).and_then(|f| f.date_format.clone()) {
            bindings.date_formats.insert(field.to_string(), fmt);
        }
        self.candidates(field, set)
            .into_iter()
            .find(|v| evaluator.satisfies(set, v, &bindings).unwrap_or(false))
    }
}

const GENERIC: [&str; 14] = [
    "",
    "abcdefg",
    "abc123",
    "not-a-date",
    "12345",
    "0",
    "-1",
    "2.5",
    "hello world",
    "user@example.com",
    "<script>",
    "a b",
    "Zz",
    "x",
];

fn number(x: f64) -> String {
    if x == libm::trunc(x) && libm::fabs(x) < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn date_pool(reference: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    let future = (0..=400u64).filter_map(move |d| reference.checked_add_days(Days::new(d)));
    let past = (1..=400u64).filter_map(move |d| reference.checked_sub_days(Days::new(d)));
    future.chain(past)
}

/// Plain-word alternatives of an anchored alternation such as `^(A|B)$`.
fn alternation_literals(pattern: &str) -> Vec<String> {
    let p = pattern.trim_start_matches('^').trim_end_matches('$');
    let p = p.strip_prefix('(').and_then(|p| p.strip_suffix(')')).unwrap_or(p);
    p.split('|')
        .filter(|s| !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || matches!(c, ' ' | '-' | '\'')))
        .map(String::from)
        .collect()
}

impl CompletionBackend for OracleMock {
    fn id(&self) -> String {
        String::from("oracle-mock")
    }

    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError> {
        match prompt.kind {
            PromptKind::Constraint => Ok(fence(&serialize(&self.constraints_for(&prompt.field)))),
            PromptKind::Value => {
                let section = prompt.section(SectionName::ConstraintsAndValues).unwrap_or("");
                let set = if section.contains("expect(") {
                    parse_constraint_response(section, &prompt.field, &[])
                        .map_err(|e| LlmError::MalformedResponse { field: prompt.field.clone(), message: e.to_string() })?
                } else {
                    ConstraintSet::new(prompt.field.clone())
                };
                Ok(match self.solve(&prompt.field, &set) {
                    Some(v) => fence(&v),
                    None => String::from(NO_VALUE),
                })
            }
        }
    }
}

/// One canned answer. Unset selectors match anything.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub kind: PromptKind,
    #[serde(default)]
    pub field: Option<String>,
    /// Match only prompts with (true) or without (false) a feedback section.
    #[serde(default)]
    pub with_feedback: Option<bool>,
    /// Match only reprompts (true) or first attempts (false).
    #[serde(default)]
    pub reprompt: Option<bool>,
    pub response: String,
}

impl ScriptEntry {
    fn matches(&self, p: &PromptBundle) -> bool {
        self.kind == p.kind
            && self.field.as_ref().is_none_or(|f| *f == p.field)
            && self.with_feedback.is_none_or(|w| w == p.has_feedback())
            && self.reprompt.is_none_or(|r| r == p.reprompt.is_some())
    }
}

/// Replays recorded answers: the first matching entry wins; prompts no entry
/// matches go to the fallback backend, if any.
pub struct ScriptedMock {
    entries: Vec<ScriptEntry>,
    fallback: Option<Arc<dyn CompletionBackend>>,
}

impl ScriptedMock {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedMock { entries, fallback: None }
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn CompletionBackend>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }
}

impl CompletionBackend for ScriptedMock {
    fn id(&self) -> String {
        match &self.fallback {
            Some(f) => format!("scripted-mock+{}", f.id()),
            None => String::from("scripted-mock"),
        }
    }

    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError> {
        if let Some(e) = self.entries.iter().find(|e| e.matches(prompt)) {
            return Ok(e.response.clone());
        }
        match &self.fallback {
            Some(f) => f.complete(prompt),
            None => Err(LlmError::NoScriptedResponse { kind: prompt.kind, field: prompt.field.clone() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternations() {
        assert_eq!(alternation_literals("^(Toronto|Gander|St John's)$"), ["Toronto", "Gander", "St John's"]);
        assert_eq!(alternation_literals("^(|[0-9]{10})$"), Vec::<String>::new());
    }

    #[test]
    fn numbers_render_compactly() {
        assert_eq!(number(8.0), "8");
        assert_eq!(number(0.01), "0.01");
        assert_eq!(number(-1.0), "-1");
    }
}
