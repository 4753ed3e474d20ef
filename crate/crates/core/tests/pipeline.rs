//! Full pipeline runs against the bundled simulator specs.

use std::path::PathBuf;
use std::sync::Arc;

use formprobe_core::embed::NgramProvider;
use formprobe_core::ferg::FergBuilder;
use formprobe_core::llm::{CompletionBackend, OracleMock, PromptKind, ScriptEntry, ScriptedMock};
use formprobe_core::pipeline::{
    coverage_report, observations_from_records, run_test, Pipeline, PipelineConfig, PipelineRun, RecordKind,
};
use formprobe_core::simulator::{FormSpec, SimExecutor, SpecDocument};
use formprobe_core::submission::Outcome;

fn load(name: &str) -> Arc<FormSpec> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(name);
    let doc: SpecDocument = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
    Arc::new(FormSpec::from_document(doc).unwrap())
}

fn config(spec: &FormSpec) -> PipelineConfig {
    PipelineConfig::new(spec.reference_date.and_hms_opt(9, 0, 0).unwrap())
}

fn run(spec: &FormSpec, backend: &dyn CompletionBackend, cfg: PipelineConfig) -> PipelineRun {
    let mut exec = SimExecutor::new(spec);
    Pipeline::open(&mut exec, backend, Arc::new(NgramProvider::new(256)), spec.url(), cfg)
        .unwrap()
        .run()
        .unwrap()
}

#[test]
fn oracle_covers_the_travel_form() {
    let spec = load("aircanada_multicity.json");
    let oracle = OracleMock::new(spec.clone());
    let r = run(&spec, &oracle, config(&spec));
    assert_eq!(r.iterations, 1);
    assert!(r.passing.is_some());
    let report = coverage_report(&observations_from_records(&r.records), Some(&spec));
    let missed: Vec<_> = report.rows.iter().filter(|r| !r.covered).map(|r| r.feedback.clone()).collect();
    assert!(missed.is_empty(), "missed: {missed:#?}");
    assert_eq!(report.coverage.unwrap().to_string(), "20/20 (100%)");

    let evaluable: usize = r.constraints.iter().map(|(_, s)| s.iter().filter(|c| c.is_evaluable()).count()).sum();
    let probes = r.records.iter().filter(|x| x.kind == RecordKind::ValidationProbe).count();
    let failed = r.records.iter().filter(|x| x.kind == RecordKind::ProbeGenerationFailed).count();
    assert_eq!(probes + failed, evaluable);

    let mut exec = SimExecutor::new(&spec);
    let mut builder = FergBuilder::new(Arc::new(NgramProvider::new(256)), Default::default(), Default::default());
    for t in &r.tests {
        let o = run_test(&mut exec, t, &mut builder, &Default::default());
        assert!(o.passed, "{} {:?}", t.id, o);
    }
}

#[test]
fn wrong_date_format_is_fixed_on_the_second_iteration() {
    let spec = load("aircanada_multicity.json");
    let oracle: Arc<dyn CompletionBackend> = Arc::new(OracleMock::new(spec.clone()));
    let scripted = ScriptedMock::new(vec![ScriptEntry {
        kind: PromptKind::Constraint,
        field: Some("Travel dates 1".into()),
        with_feedback: Some(false),
        reprompt: None,
        response: "```\nexpect(field('Travel dates 1'))\n.toBeDate('YYYY-MM-DD')\n```".into(),
    }])
    .with_fallback(oracle);
    let r = run(&spec, &scripted, config(&spec));
    assert_eq!(r.iterations, 2);
    let loop_records: Vec<_> = r
        .records
        .iter()
        .filter(|x| matches!(x.kind, RecordKind::InitialAttempt | RecordKind::FeedbackRefinement))
        .collect();
    assert_eq!(loop_records[0].outcome, Some(Outcome::Failure));
    assert_eq!(loop_records[1].outcome, Some(Outcome::Success));
}

#[test]
fn oracle_covers_every_bundled_spec() {
    for name in [
        "hotel_booking.json",
        "site_search.json",
        "library_search.json",
        "user_registration.json",
        "contact_form.json",
        "product_entry.json",
    ] {
        let spec = load(name);
        let oracle = OracleMock::new(spec.clone());
        let r = run(&spec, &oracle, config(&spec));
        let report = coverage_report(&observations_from_records(&r.records), Some(&spec));
        let missed: Vec<_> = report.rows.iter().filter(|r| !r.covered).map(|r| r.feedback.clone()).collect();
        assert!(missed.is_empty(), "{name} missed: {missed:#?}");
        assert!(report.passing);
    }
}

#[test]
fn static_baseline_covers_less_on_the_travel_form() {
    use formprobe_core::dom::{extract_form_model, parse_document};
    use formprobe_core::pipeline::static_baseline;
    use formprobe_core::simulator::Observation;
    let spec = load("aircanada_multicity.json");
    let model = extract_form_model(&parse_document(&spec.render_form(&Default::default(), None)).unwrap(), None).unwrap();
    let obs: Vec<Observation> = static_baseline(&model)
        .iter()
        .map(|b| {
            let r = spec.handle_submission(b);
            Observation { success: r.fired.is_none(), feedback: r.fired.map(|i| spec.rules[i].feedback.clone()).into_iter().collect() }
        })
        .collect();
    let c = coverage_report(&obs, Some(&spec)).coverage.unwrap();
    assert!(c.count < 20, "{c}");
}
