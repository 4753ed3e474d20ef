//! End-to-end test generation for one form: initial constraint inference,
//! value generation, the feedback loop to a passing submission, negation
//! probes, and test emission.

mod plan;
mod report;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::constraint::{negate, Bindings, Constraint, ConstraintSet, Evaluator, Verdict};
use crate::dom::{extract_form_model, parse_document, DomError, DomTree, FormModel, FormSelector};
use crate::embed::{Node2VecParams, TextEmbedProvider};
use crate::ferg::{AdjacencyHints, Analysis, AnalysisError, FergBuilder, FergError, PruningParams};
use crate::llm::{
    build_constraint_prompt, build_value_prompt, complete_constraints, complete_value, CompletionBackend,
    FeedbackEntry, FieldPromptContext, LlmError, LlmResponse, PromptKind, DEFAULT_CONTEXT_LIMIT,
};
use crate::submission::{
    analyze_submission, submit, Executor, ExecutorError, Feedback, FeedbackKeywords, FeedbackScope, Outcome,
    SubmissionError,
};

pub use plan::{emit_tests, run_test, ExpectedState, FieldValue, TestCase, TestOutcome, TestPlan, TestStep};
pub use report::{
    coverage_report, observations_from_records, observations_from_tests, static_baseline, CoverageReport,
    CoverageRow, ObservedState,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub max_feedback_iterations: usize,
    pub pruning: PruningParams,
    pub node2vec: Node2VecParams,
    pub hints: AdjacencyHints,
    pub keywords: FeedbackKeywords,
    /// Seeds structural embeddings; everything else is deterministic.
    pub seed: u64,
    /// Wall-clock time shown to the model and used as today's date.
    pub now: NaiveDateTime,
    pub context_limit: usize,
    pub form: Option<FormSelector>,
}

impl PipelineConfig {
    pub fn new(now: NaiveDateTime) -> Self {
        PipelineConfig {
            max_feedback_iterations: 5,
            pruning: PruningParams::default(),
            node2vec: Node2VecParams::default(),
            hints: AdjacencyHints::default(),
            keywords: FeedbackKeywords::default(),
            seed: Node2VecParams::default().rng_seed,
            now,
            context_limit: DEFAULT_CONTEXT_LIMIT,
            form: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.max_feedback_iterations == 0 {
            return Err(PipelineError::Config("max_feedback_iterations must be at least 1".into()));
        }
        if self.hints.window == 0 {
            return Err(PipelineError::Config("adjacency window must be at least 1".into()));
        }
        self.node2vec.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error("form page: {0}")]
    Dom(#[from] DomError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Submission(#[from] SubmissionError),
    #[error("no run records to emit tests from")]
    NoRecords,
}

impl From<FergError> for PipelineError {
    fn from(e: FergError) -> Self {
        PipelineError::Analysis(AnalysisError::Ferg(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordKind {
    InitialAttempt,
    FeedbackRefinement,
    ValidationProbe,
    /// A probe the form accepted although its value broke an inferred
    /// constraint; points at the probe record.
    Discrepancy,
    /// No value could be produced for a probe; nothing was submitted.
    ProbeGenerationFailed,
}

/// The constraint a probe negated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeInfo {
    pub field: String,
    pub constraint: Constraint,
    /// Probed field plus fields the constraint refers to.
    pub inputs: Vec<String>,
}

/// One exchange with the model, for the run database.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptLog {
    pub kind: PromptKind,
    pub field: String,
    pub template_hash: String,
    pub responses: Vec<LlmResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: usize,
    pub iteration: usize,
    pub kind: RecordKind,
    pub constraints: BTreeMap<String, ConstraintSet>,
    /// Submitted values in document order.
    pub assignment: Vec<(String, String)>,
    pub outcome: Option<Outcome>,
    pub feedback: Vec<Feedback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refers_to: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompts: Vec<PromptLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl RunRecord {
    pub fn assignment_bindings(&self) -> Bindings {
        Bindings::from_values(self.assignment.iter().cloned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Inference,
    Refinement,
    Generation,
    Probe,
}

/// A per-field failure that the pipeline worked around.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub stage: Stage,
    pub message: String,
}

/// Constraint sets keyed by field, plus the form's field order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMap {
    pub order: Vec<String>,
    pub sets: BTreeMap<String, ConstraintSet>,
}

impl ConstraintMap {
    pub fn get(&self, field: &str) -> Option<&ConstraintSet> {
        self.sets.get(field)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ConstraintSet)> {
        self.order.iter().filter_map(|k| self.sets.get(k).map(|s| (k.as_str(), s)))
    }

    /// Declared date formats (from `toBeDate`) per field.
    pub fn date_formats(&self) -> BTreeMap<String, String> {
        self.sets
            .iter()
            .filter_map(|(k, s)| s.date_format().map(|f| (k.clone(), f.to_string())))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationFailure {
    pub field: String,
    pub error: String,
    /// Values produced before the failure, plus the failing field's best
    /// attempt when there was one.
    pub partial: Bindings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopOutcome {
    pub constraints: ConstraintMap,
    pub passing: Option<Bindings>,
    pub iterations: usize,
}

/// Everything one pipeline run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun {
    pub url: String,
    pub form: Option<FormSelector>,
    pub backend: String,
    pub records: Vec<RunRecord>,
    pub constraints: ConstraintMap,
    pub passing: Option<Bindings>,
    pub iterations: usize,
    pub tests: Vec<TestCase>,
    pub errors: Vec<FieldError>,
}

impl PipelineRun {
    pub fn plan(&self, seed: u64) -> TestPlan {
        TestPlan::new(&self.url, self.form.as_ref(), &self.backend, seed, self.tests.clone())
    }
}

pub struct Pipeline<'a> {
    config: PipelineConfig,
    backend: &'a dyn CompletionBackend,
    executor: &'a mut dyn Executor,
    builder: FergBuilder,
    url: String,
    tree: DomTree,
    model: FormModel,
    analysis: Analysis,
    contexts: BTreeMap<String, FieldPromptContext>,
    evaluator: Evaluator,
    records: Vec<RunRecord>,
    errors: Vec<FieldError>,
}

fn ordered(model: &FormModel, b: &Bindings) -> Vec<(String, String)> {
    model.fields.iter().map(|f| (f.key.clone(), b.get(&f.key).unwrap_or("").to_string())).collect()
}

fn log(kind: PromptKind, field: &str, hash: &str, responses: Vec<LlmResponse>, error: Option<&LlmError>) -> PromptLog {
    PromptLog {
        kind,
        field: field.to_string(),
        template_hash: hash.to_string(),
        responses,
        error: error.map(|e| e.to_string()),
    }
}

impl<'a> Pipeline<'a> {
    /// Loads the form page and builds its graph.
    pub fn open(
        executor: &'a mut dyn Executor,
        backend: &'a dyn CompletionBackend,
        provider: Arc<dyn TextEmbedProvider>,
        url: &str,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut node2vec = config.node2vec.clone();
        node2vec.rng_seed = config.seed;
        let mut builder = FergBuilder::new(provider, node2vec, config.pruning.clone());
        builder.hints = config.hints.clone();
        let page = executor.navigate(url)?;
        let tree = parse_document(&page.html)?;
        let model = extract_form_model(&tree, config.form.as_ref())?;
        let analysis = builder.build(&tree, &model)?;
        let mut contexts = BTreeMap::new();
        for f in &model.fields {
            contexts.insert(f.key.clone(), FieldPromptContext::from_graph(&tree, &model, &analysis.ferg, &f.key)?);
        }
        let evaluator = Evaluator::new(config.now.date());
        Ok(Pipeline {
            config,
            backend,
            executor,
            builder,
            url: url.to_string(),
            tree,
            model,
            analysis,
            contexts,
            evaluator,
            records: Vec::new(),
            errors: Vec::new(),
        })
    }

    pub fn model(&self) -> &FormModel {
        &self.model
    }

    pub fn tree(&self) -> &DomTree {
        &self.tree
    }

    pub fn analysis(&self) -> &Analysis {
        &self.analysis
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn errors(&self) -> &[FieldError] {
        &self.errors
    }

    fn keys(&self) -> Vec<String> {
        self.model.keys()
    }

    fn push_record(&mut self, mut r: RunRecord) -> usize {
        r.id = self.records.len();
        let id = r.id;
        self.records.push(r);
        id
    }

    fn ask_constraints(&mut self, field: &str, feedback: &[FeedbackEntry], stage: Stage) -> (Option<ConstraintSet>, PromptLog) {
        let known = self.keys();
        let prompt =
            build_constraint_prompt(&self.contexts[field], &self.model.context, self.config.now, feedback, &known);
        let ex = complete_constraints(self.backend, &prompt, self.config.context_limit);
        let entry = log(PromptKind::Constraint, field, &prompt.template_hash, ex.responses, ex.result.as_ref().err());
        match ex.result {
            Ok(set) => (Some(set), entry),
            Err(e) => {
                self.errors.push(FieldError { field: field.to_string(), stage, message: e.to_string() });
                (None, entry)
            }
        }
    }

    /// One constraint prompt per field in document order; a field whose
    /// prompt fails gets `{toBeTruthy}`.
    pub fn infer_initial_constraints(&mut self) -> (ConstraintMap, Vec<PromptLog>) {
        let mut map = ConstraintMap { order: self.keys(), sets: BTreeMap::new() };
        let mut logs = Vec::new();
        for key in self.keys() {
            let (set, entry) = self.ask_constraints(&key, &[], Stage::Inference);
            logs.push(entry);
            map.sets.insert(key.clone(), set.unwrap_or_else(|| ConstraintSet::default_for(key.clone())));
        }
        (map, logs)
    }

    /// Descriptions of the evaluable constraints of `set` that `value`
    /// breaks, given the other fields' values. Constraints referring to
    /// unbound fields are skipped.
    pub fn violations(&self, set: &ConstraintSet, value: &str, others: &Bindings, formats: &BTreeMap<String, String>) -> Vec<String> {
        let mut b = others.clone();
        b.set(set.field.clone(), value);
        b.date_formats = formats.clone();
        let fmt = set.date_format().or_else(|| b.date_format(&set.field));
        set.iter()
            .filter(|c| c.is_evaluable() && c.field_refs().all(|r| b.get(r).is_some()))
            .filter(|c| matches!(self.evaluator.evaluate(c, value, fmt, &b), Ok(Verdict::False)))
            .map(|c| c.describe())
            .collect()
    }

    /// Asks for a value satisfying `set` given `others`, checks it, and asks
    /// once more on a violation.
    fn value_for(
        &mut self,
        set: &ConstraintSet,
        others: &Bindings,
        formats: &BTreeMap<String, String>,
        logs: &mut Vec<PromptLog>,
    ) -> Result<String, (String, Option<String>)> {
        let field = set.field.clone();
        let known = self.keys();
        let prompt = build_value_prompt(&self.contexts[&field], &self.model.context, set, others, &known);
        let mut current = prompt.clone();
        let mut best = None;
        for attempt in 0..2 {
            let ex = complete_value(self.backend, &current, self.config.context_limit);
            logs.push(log(PromptKind::Value, &field, &prompt.template_hash, ex.responses, ex.result.as_ref().err()));
            let value = ex.result.map_err(|e| (e.to_string(), best.clone()))?;
            let broken = self.violations(set, &value, others, formats);
            if broken.is_empty() {
                return Ok(value);
            }
            if attempt == 1 {
                return Err((format!("value {value:?} violates: {}", broken.join("; ")), Some(value)));
            }
            current = prompt.with_reprompt(format!(
                "The value '{value}' breaks these constraints: {}. Produce a different value.",
                broken.join("; ")
            ));
            best = Some(value);
        }
        unreachable!("loop returns on its second pass")
    }

    /// Values for every field in document order. Each prompt sees the values
    /// already chosen for earlier fields.
    pub fn generate_values(&mut self, constraints: &ConstraintMap) -> (Result<Bindings, GenerationFailure>, Vec<PromptLog>) {
        let mut bindings = Bindings::default();
        let mut logs = Vec::new();
        let formats = constraints.date_formats();
        for key in self.keys() {
            let set = constraints.get(&key).cloned().unwrap_or_else(|| ConstraintSet::new(key.clone()));
            match self.value_for(&set, &bindings, &formats, &mut logs) {
                Ok(v) => bindings.set(key, v),
                Err((error, best)) => {
                    let mut partial = bindings;
                    if let Some(v) = best {
                        partial.set(key.clone(), v);
                    }
                    return (Err(GenerationFailure { field: key, error, partial }), logs);
                }
            }
        }
        (Ok(bindings), logs)
    }

    fn submit_and_analyze(&mut self, assignment: &Bindings) -> Result<crate::submission::SubmissionResult, PipelineError> {
        let raw = submit(&mut *self.executor, &self.url, &self.model, assignment)?;
        Ok(analyze_submission(&raw, &self.config.keywords, &mut self.builder, self.config.form.as_ref())?)
    }

    /// Generate, submit, and on failure reprompt the fields the feedback
    /// concerns (every field for global feedback), until a submission
    /// succeeds or the iteration cap is reached.
    pub fn feedback_loop(&mut self, initial: ConstraintMap, mut pending_logs: Vec<PromptLog>) -> Result<LoopOutcome, PipelineError> {
        let mut constraints = initial;
        let mut history: BTreeMap<String, Vec<FeedbackEntry>> = BTreeMap::new();
        let keys = self.keys();
        for iteration in 1..=self.config.max_feedback_iterations {
            let (generated, logs) = self.generate_values(&constraints);
            pending_logs.extend(logs);
            let (assignment, note) = match generated {
                Ok(b) => (b, None),
                Err(f) => {
                    self.errors.push(FieldError { field: f.field.clone(), stage: Stage::Generation, message: f.error.clone() });
                    (f.partial, Some(format!("value generation failed for `{}`: {}", f.field, f.error)))
                }
            };
            let result = self.submit_and_analyze(&assignment)?;
            let kind = if iteration == 1 { RecordKind::InitialAttempt } else { RecordKind::FeedbackRefinement };
            self.push_record(RunRecord {
                id: 0,
                iteration,
                kind,
                constraints: constraints.sets.clone(),
                assignment: ordered(&self.model, &assignment),
                outcome: Some(result.outcome),
                feedback: result.feedback.clone(),
                final_url: Some(result.final_url.clone()),
                probe: None,
                refers_to: None,
                prompts: core::mem::take(&mut pending_logs),
                note,
            });
            if result.outcome == Outcome::Success {
                return Ok(LoopOutcome { constraints, passing: Some(assignment), iterations: iteration });
            }
            if iteration == self.config.max_feedback_iterations {
                return Ok(LoopOutcome { constraints, passing: None, iterations: iteration });
            }
            let mut touched: Vec<String> = Vec::new();
            for fb in &result.feedback {
                let targets: Vec<String> = match &fb.scope {
                    FeedbackScope::Inline(k) if keys.contains(k) => alloc::vec![k.clone()],
                    _ => keys.clone(),
                };
                for k in targets {
                    let value = assignment.get(&k).unwrap_or("").to_string();
                    history.entry(k.clone()).or_default().push(FeedbackEntry { value, text: fb.text.clone() });
                    if !touched.contains(&k) {
                        touched.push(k);
                    }
                }
            }
            for k in keys.iter().filter(|k| touched.contains(k)) {
                let (set, entry) = self.ask_constraints(k, &history[k], Stage::Refinement);
                pending_logs.push(entry);
                if let Some(set) = set {
                    constraints.sets.insert(k.clone(), set);
                }
            }
        }
        unreachable!("max_feedback_iterations is at least 1")
    }

    /// Negates each evaluable constraint in turn (others intact), asks for a
    /// value for that field only, and submits it with every other field at
    /// its passing value.
    pub fn validate_constraints(&mut self, passing: &Bindings, constraints: &ConstraintMap, iteration: usize) -> Result<(), PipelineError> {
        let formats = constraints.date_formats();
        for key in self.keys() {
            let Some(set) = constraints.get(&key).cloned() else { continue };
            for (i, c) in set.iter().enumerate() {
                let Ok(negated) = negate(c) else { continue };
                let mut probe_set = set.clone();
                probe_set.constraints[i] = negated;
                let mut others = passing.clone();
                others.values.remove(&key);
                let mut inputs = alloc::vec![key.clone()];
                for r in c.field_refs() {
                    if !inputs.iter().any(|x| x == r) && self.model.field(r).is_some() {
                        inputs.push(r.to_string());
                    }
                }
                let info = ProbeInfo { field: key.clone(), constraint: c.clone(), inputs };
                let mut logs = Vec::new();
                let value = match self.value_for(&probe_set, &others, &formats, &mut logs) {
                    Ok(v) => v,
                    Err((error, _)) => {
                        self.errors.push(FieldError { field: key.clone(), stage: Stage::Probe, message: error.clone() });
                        self.push_record(RunRecord {
                            id: 0,
                            iteration,
                            kind: RecordKind::ProbeGenerationFailed,
                            constraints: BTreeMap::from([(key.clone(), probe_set.clone())]),
                            assignment: Vec::new(),
                            outcome: None,
                            feedback: Vec::new(),
                            final_url: None,
                            probe: Some(info),
                            refers_to: None,
                            prompts: logs,
                            note: Some(error),
                        });
                        continue;
                    }
                };
                let mut assignment = passing.clone();
                assignment.set(key.clone(), value);
                let result = self.submit_and_analyze(&assignment)?;
                let probe_id = self.push_record(RunRecord {
                    id: 0,
                    iteration,
                    kind: RecordKind::ValidationProbe,
                    constraints: BTreeMap::from([(key.clone(), probe_set.clone())]),
                    assignment: ordered(&self.model, &assignment),
                    outcome: Some(result.outcome),
                    feedback: result.feedback.clone(),
                    final_url: Some(result.final_url.clone()),
                    probe: Some(info.clone()),
                    refers_to: None,
                    prompts: logs,
                    note: None,
                });
                if result.outcome == Outcome::Success {
                    self.push_record(RunRecord {
                        id: 0,
                        iteration,
                        kind: RecordKind::Discrepancy,
                        constraints: BTreeMap::from([(key.clone(), probe_set)]),
                        assignment: ordered(&self.model, &assignment),
                        outcome: Some(result.outcome),
                        feedback: Vec::new(),
                        final_url: Some(result.final_url),
                        probe: Some(info),
                        refers_to: Some(probe_id),
                        prompts: Vec::new(),
                        note: Some(String::from("form accepted a value breaking the inferred constraint")),
                    });
                }
            }
        }
        Ok(())
    }

    /// Runs every stage and emits tests.
    pub fn run(mut self) -> Result<PipelineRun, PipelineError> {
        let (initial, logs) = self.infer_initial_constraints();
        let outcome = self.feedback_loop(initial, logs)?;
        if let Some(passing) = &outcome.passing {
            self.validate_constraints(passing, &outcome.constraints, outcome.iterations)?;
        }
        let tests = emit_tests(&self.records, &self.url, self.config.form.as_ref(), &self.keys())?;
        Ok(PipelineRun {
            url: self.url,
            form: self.config.form.clone(),
            backend: self.backend.id(),
            records: self.records,
            constraints: outcome.constraints,
            passing: outcome.passing,
            iterations: outcome.iterations,
            tests,
            errors: self.errors,
        })
    }
}
