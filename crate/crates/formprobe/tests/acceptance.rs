//! Acceptance criteria 1–9. Prints one line per criterion and exits non-zero
//! when any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use formprobe::io::{load_spec, read_plan, read_run_db};
use formprobe_core::constraint::{
    negate, parse_constraints, parse_constraints_in, serialize, Arg, Bindings, CmpOp, Constraint, ConstraintSet,
    Evaluator, TemplateId, Verdict,
};
use formprobe_core::dom::{extract_form_model, parse_document, ElementKind, NodeId};
use formprobe_core::embed::{build_embedding_space, cosine_sim, structural_embed, NgramProvider, Node2VecParams};
use formprobe_core::ferg::{
    prune_text_text_edges, retention_threshold, EdgeKind, Ferg, FergBuilder, FergEdge, FergNode, PruningParams,
};
use formprobe_core::pipeline::{coverage_report, observations_from_records, run_test, static_baseline, RecordKind};
use formprobe_core::simulator::{FormSpec, Observation, SimExecutor};
use formprobe_core::submission::{
    analyze_submission, classify_outcome, submit, FeedbackKeywords, Outcome, Page, RawSubmission,
};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;
use rayon::prelude::*;

type Check = Result<String, String>;

const TRAVEL: &str = "aircanada_multicity";
const SPECS: [&str; 7] = [
    "aircanada_multicity",
    "hotel_booking",
    "site_search",
    "library_search",
    "user_registration",
    "contact_form",
    "product_entry",
];
/// Runtime budget for one oracle-mock run on the travel form.
const TRAVEL_BUDGET: Duration = Duration::from_secs(60);
const NEGATION_SAMPLES: usize = 1000;
const ROUND_TRIP_SAMPLES: usize = 300;
const SHIFT_SAMPLES: usize = 500;
const EMBED_TOL: f64 = 1e-9;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn spec_path(name: &str) -> PathBuf {
    root().join("specs").join(format!("{name}.json"))
}

fn spec(name: &str) -> FormSpec {
    load_spec(&spec_path(name)).unwrap()
}

fn formprobe(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_formprobe"))
        .args(args)
        .env_remove("FORMPROBE_API_KEY")
        .output()
        .expect("binary runs")
}

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn builder() -> FergBuilder {
    FergBuilder::new(Arc::new(NgramProvider::new(256)), Default::default(), Default::default())
}

/// Coverage of a run database against its spec: (covered, total, passing).
fn db_coverage(runs: &Path, truth: &FormSpec) -> (usize, usize, bool) {
    let records = read_run_db(runs).unwrap();
    let r = coverage_report(&observations_from_records(&records), Some(truth));
    let c = r.coverage.unwrap();
    (c.count, c.total, r.passing)
}

// 1 ------------------------------------------------------------------------

fn oracle_end_to_end(out: &Path) -> Check {
    let target = spec_path(TRAVEL).display().to_string();
    let dir = out.join("single");
    let start = Instant::now();
    let o = formprobe(&["generate", "--target", &target, "--backend", "oracle-mock", "--out", &dir.display().to_string()]);
    let elapsed = start.elapsed();
    ensure(o.status.code() == Some(0), || format!("exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))?;
    let (covered, total, passing) = db_coverage(&dir.join(format!("{TRAVEL}.runs.jsonl")), &spec(TRAVEL));
    ensure(covered == total && total == 20, || format!("coverage {covered}/{total}"))?;
    ensure(passing, || "no passing assignment".into())?;
    ensure(elapsed < TRAVEL_BUDGET, || format!("took {elapsed:.1?}"))?;
    Ok(format!("{covered}/{total} FSSs, passing, {elapsed:.1?}"))
}

// 2 ------------------------------------------------------------------------

fn baseline_coverage(truth: &FormSpec) -> (usize, usize) {
    let tree = parse_document(&truth.render_form(&Bindings::default(), None)).unwrap();
    let model = extract_form_model(&tree, None).unwrap();
    let keywords = FeedbackKeywords::default();
    let mut b = builder();
    let mut exec = SimExecutor::new(truth);
    let observed: Vec<Observation> = static_baseline(&model)
        .iter()
        .map(|assignment| {
            let raw = submit(&mut exec, truth.url(), &model, assignment).unwrap();
            let r = analyze_submission(&raw, &keywords, &mut b, None).unwrap();
            Observation { success: r.outcome == Outcome::Success, feedback: r.feedback.into_iter().map(|f| f.text).collect() }
        })
        .collect();
    let c = coverage_report(&observed, Some(truth)).coverage.unwrap();
    (c.count, c.total)
}

fn corpus(out: &Path) -> Check {
    let dir = out.join("corpus");
    let targets: Vec<String> = SPECS.iter().map(|s| spec_path(s).display().to_string()).collect();
    let mut args = vec!["generate", "--backend", "oracle-mock", "--jobs", "4", "--out"];
    let d = dir.display().to_string();
    args.push(&d);
    for t in &targets {
        args.extend(["--target", t.as_str()]);
    }
    let o = formprobe(&args);
    ensure(o.status.code() == Some(0), || format!("exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))?;
    let mut parts = Vec::new();
    for name in SPECS {
        let (covered, total, passing) = db_coverage(&dir.join(format!("{name}.runs.jsonl")), &spec(name));
        ensure(covered == total && passing, || format!("{name}: {covered}/{total}, passing {passing}"))?;
        parts.push(format!("{name} {covered}/{total}"));
    }
    let (b, total) = baseline_coverage(&spec(TRAVEL));
    ensure(b < total, || format!("static baseline covers {b}/{total} on {TRAVEL}"))?;
    Ok(format!("{}; static baseline {b}/{total} on {TRAVEL}", parts.join(", ")))
}

// 3 ------------------------------------------------------------------------

fn convergence(out: &Path) -> Check {
    let dir = out.join("scripted");
    let script = root().join("fixtures/scripts/wrong_date_format.json").display().to_string();
    let target = spec_path(TRAVEL).display().to_string();
    let o = formprobe(&[
        "generate", "--target", &target, "--backend", "scripted-mock", "--script", &script, "--out",
        &dir.display().to_string(),
    ]);
    ensure(o.status.code() == Some(0), || format!("exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))?;
    let records = read_run_db(&dir.join(format!("{TRAVEL}.runs.jsonl"))).unwrap();
    let loop_records: Vec<_> = records
        .iter()
        .filter(|r| matches!(r.kind, RecordKind::InitialAttempt | RecordKind::FeedbackRefinement))
        .collect();
    let first_success = loop_records.iter().find(|r| r.outcome == Some(Outcome::Success)).map(|r| r.iteration);
    ensure(first_success == Some(2), || format!("first success at iteration {first_success:?}"))?;
    let truth = spec(TRAVEL);
    let upto = |k: usize| {
        let rs: Vec<_> = records.iter().filter(|r| r.iteration <= k).cloned().collect();
        coverage_report(&observations_from_records(&rs), Some(&truth)).coverage.unwrap()
    };
    let (c1, c2) = (upto(1), upto(2));
    ensure(c2.count > c1.count, || format!("coverage after 1: {c1}, after 2: {c2}"))?;
    Ok(format!("success at iteration 2; coverage {c1} after 1, {c2} after 2"))
}

// 4 ------------------------------------------------------------------------

fn strip_for(html: &str) -> String {
    let mut out = String::new();
    let mut rest = html;
    while let Some(i) = rest.find(" for=\"") {
        out.push_str(&rest[..i]);
        let after = &rest[i + 6..];
        rest = &after[after.find('"').unwrap() + 1..];
    }
    out.push_str(rest);
    out
}

/// Label→input pairs: the `for` mapping, and the pruned graph's edges on
/// the same page with `for` removed.
fn label_pairs(html: &str) -> (BTreeSet<(NodeId, NodeId)>, BTreeSet<(NodeId, NodeId)>) {
    let original = parse_document(html).unwrap();
    let by_id = |id: &str| original.nodes().iter().find(|n| n.attr("id") == Some(id)).map(|n| n.id);
    let expected: BTreeSet<(NodeId, NodeId)> = original
        .nodes()
        .iter()
        .filter(|n| n.tag == "label")
        .filter_map(|n| Some((n.id, by_id(n.attr("for")?)?)))
        .collect();
    let tree = parse_document(&strip_for(html)).unwrap();
    let model = extract_form_model(&tree, None).unwrap();
    let g = builder().build(&tree, &model).unwrap().ferg;
    let labels: BTreeSet<NodeId> = expected.iter().map(|(l, _)| *l).collect();
    let observed = g
        .edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::LocalTextual)
        .filter_map(|e| {
            let (l, i) = if labels.contains(&e.a) {
                (e.a, e.b)
            } else if labels.contains(&e.b) {
                (e.b, e.a)
            } else {
                return None;
            };
            model.field_by_node(i).map(|_| (l, i))
        })
        .collect();
    (expected, observed)
}

fn label_oracle() -> Check {
    let mut paths: Vec<_> = std::fs::read_dir(root().join("fixtures/forms")).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    ensure(paths.len() == 10, || format!("{} fixture forms", paths.len()))?;
    let (mut matched, mut total, mut bad) = (0, 0, Vec::new());
    for p in &paths {
        let html = std::fs::read_to_string(p).unwrap();
        ensure(html.contains(" for=\""), || format!("{} has no for attributes", p.display()))?;
        let (expected, observed) = label_pairs(&html);
        total += expected.len();
        matched += expected.intersection(&observed).count();
        if expected != observed {
            bad.push(p.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    ensure(bad.is_empty(), || format!("{matched}/{total} pairs; mismatched in {}", bad.join(", ")))?;
    Ok(format!("{matched}/{total} label→input pairs on {} forms", paths.len()))
}

// 5 ------------------------------------------------------------------------

fn text_chain(weights: &[f64]) -> Ferg {
    let nodes = (0..=weights.len())
        .map(|i| FergNode { id: NodeId(i), kind: ElementKind::TextElement, doc_order: i, label: format!("t{i}") })
        .collect();
    let edges = weights
        .iter()
        .enumerate()
        .map(|(i, w)| FergEdge::new(NodeId(i), NodeId(i + 1), *w, EdgeKind::LocalTextual))
        .collect();
    Ferg::new(nodes, edges)
}

fn surviving(g: &Ferg) -> Vec<f64> {
    prune_text_text_edges(g, &PruningParams::default()).edges().iter().map(|e| e.weight).collect()
}

fn pruning_math() -> Check {
    let ws = [0.2, 0.4, 0.9];
    // μ = 0.5; population variance = (0.09 + 0.01 + 0.16) / 3.
    let hand = 0.5 + 0.5 * (0.26f64 / 3.0).sqrt();
    ensure((hand - 0.6472).abs() < 5e-5, || format!("hand-derived {hand}"))?;
    let params = PruningParams { lambda: 0.5, ..Default::default() };
    let t = retention_threshold(&ws, &params).ok_or("no threshold")?;
    ensure((t - hand).abs() < 1e-12, || format!("threshold {t} vs {hand}"))?;
    let kept = surviving(&text_chain(&ws));
    ensure(kept == [0.9], || format!("kept {kept:?}"))?;

    let mut runner = TestRunner::deterministic();
    let strat = (prop::collection::vec(0u32..64, 2..12), 1u32..64);
    for _ in 0..SHIFT_SAMPLES {
        let (ws, shift) = strat.new_tree(&mut runner).unwrap().current();
        let base: Vec<f64> = ws.iter().map(|w| *w as f64 / 64.0).collect();
        let moved: Vec<f64> = base.iter().map(|w| w + shift as f64 / 64.0).collect();
        let pairs = |g: &Ferg| -> Vec<(NodeId, NodeId)> {
            prune_text_text_edges(g, &PruningParams::default()).edges().iter().map(|e| (e.a, e.b)).collect()
        };
        let (a, b) = (pairs(&text_chain(&base)), pairs(&text_chain(&moved)));
        ensure(a == b, || format!("partition changed under shift {shift}/64 for {ws:?}"))?;
    }
    Ok(format!("threshold {t:.4}, kept {{0.9}}; partition shift-invariant on {SHIFT_SAMPLES} samples"))
}

// 6 ------------------------------------------------------------------------

const OTHER: &str = "Other field";

fn value() -> BoxedStrategy<String> {
    prop_oneof![
        "[a-zA-Z ]{0,8}",
        "[a-zA-Z0-9 @.\\-]{0,12}",
        "-?[0-9]{1,4}(\\.[0-9]{1,2})?",
        date_text(),
        Just(String::new()),
    ]
    .boxed()
}

fn date_text() -> BoxedStrategy<String> {
    prop_oneof![
        (1u32..29, 1u32..13).prop_map(|(d, m)| format!("{d:02}/{m:02}")),
        (2023i32..2026, 1u32..13, 1u32..29).prop_map(|(y, m, d)| format!("{y}-{m:02}-{d:02}")),
        Just("not a date".to_string()),
    ]
    .boxed()
}

fn args_for(t: TemplateId) -> BoxedStrategy<Vec<Arg>> {
    match t {
        TemplateId::Equal => value().prop_map(|v| vec![Arg::Text(v)]).boxed(),
        TemplateId::EqualToField => Just(vec![Arg::Field(OTHER.into())]).boxed(),
        TemplateId::LengthCondition => (prop::sample::select(CmpOp::ALL.to_vec()), 0u32..10)
            .prop_map(|(o, n)| vec![Arg::Op(o), Arg::Number(n as f64)])
            .boxed(),
        TemplateId::MatchPattern => prop::sample::select(vec!["^[a-z]+$", "^(|.{3,})$", "[0-9]", "@", "^[A-Z]"])
            .prop_map(|p| vec![Arg::Text(p.into())])
            .boxed(),
        TemplateId::Date => prop::sample::select(vec!["DD/MM", "YYYY-MM-DD", "DD/MM/YYYY", "MM/DD"])
            .prop_map(|f| vec![Arg::Text(f.into())])
            .boxed(),
        TemplateId::AfterDate | TemplateId::BeforeDate => {
            prop_oneof![Just(vec![Arg::Field(OTHER.into())]), date_text().prop_map(|d| vec![Arg::Text(d)])].boxed()
        }
        TemplateId::InRange => (-50i32..50, 0i32..100)
            .prop_map(|(lo, span)| vec![Arg::Number(lo as f64), Arg::Number((lo + span) as f64)])
            .boxed(),
        _ => Just(vec![]).boxed(),
    }
}

fn sample<T: std::fmt::Debug>(runner: &mut TestRunner, s: impl Strategy<Value = T>) -> T {
    s.new_tree(runner).unwrap().current()
}

fn from_field_example() -> Result<(), String> {
    let text = "expect(field('From 1'))\n.toBeTruthy()\n.toBeAlphabetical()\n.toHaveLengthCondition('>', 2)\n.not.toBeEqual('To 1')\n.not.toBeEqual('From 2')";
    let fields = ["From 1", "To 1", "Travel dates 1", "From 2", "To 2", "Travel dates 2"];
    let set = parse_constraints_in(text, &fields).map_err(|e| e.to_string())?;
    let mut want = ConstraintSet::new("From 1");
    want.push(Constraint::new(TemplateId::Truthy, vec![]));
    want.push(Constraint::new(TemplateId::Alphabetical, vec![]));
    want.push(Constraint::new(TemplateId::LengthCondition, vec![Arg::Op(CmpOp::Gt), Arg::Number(2.0)]));
    want.push(Constraint::new(TemplateId::EqualToField, vec![Arg::Field("To 1".into())]).negated());
    want.push(Constraint::new(TemplateId::EqualToField, vec![Arg::Field("From 2".into())]).negated());
    ensure(set == want, || format!("parsed {set:?}"))
}

fn constraint_algebra() -> Check {
    let evaluable: Vec<TemplateId> = TemplateId::ALL.iter().copied().filter(|t| t.is_evaluable()).collect();
    ensure(evaluable.len() == 14, || format!("{} evaluable templates", evaluable.len()))?;
    let ev = Evaluator::new(NaiveDate::from_ymd_opt(2024, 3, 1).unwrap());
    let mut runner = TestRunner::deterministic();
    let mut decided = 0;
    for i in 0..NEGATION_SAMPLES {
        let t = evaluable[i % evaluable.len()];
        let c = Constraint::new(t, sample(&mut runner, args_for(t)));
        let c = if sample(&mut runner, any::<bool>()) { c.negated() } else { c };
        let (v, other) = (sample(&mut runner, value()), sample(&mut runner, value()));
        let fmt = sample(&mut runner, prop::option::of(prop::sample::select(vec!["DD/MM", "YYYY-MM-DD"])));
        let b = Bindings::from_values([(OTHER, other)]);
        let n = negate(&c).map_err(|e| e.to_string())?;
        let (a, na) = (ev.evaluate(&c, &v, fmt, &b).unwrap(), ev.evaluate(&n, &v, fmt, &b).unwrap());
        ensure(na == a.not(), || format!("{c:?} on {v:?}: {a:?} vs negated {na:?}"))?;
        if a != Verdict::NotEvaluable {
            decided += 1;
        }
    }

    let cs = (0..14usize, any::<bool>()).prop_flat_map(move |(i, neg)| {
        let t = TemplateId::ALL.iter().copied().filter(|t| t.is_evaluable()).nth(i).unwrap();
        args_for(t).prop_map(move |a| if neg { Constraint::new(t, a).negated() } else { Constraint::new(t, a) })
    });
    let free = "\\PC{0,16}".prop_map(|s| Constraint::new(TemplateId::FreeText, vec![Arg::Text(s)]));
    let sets = ("[A-Za-z][A-Za-z0-9 _-]{0,10}", prop::collection::vec(prop_oneof![8 => cs, 1 => free], 0..8));
    for _ in 0..ROUND_TRIP_SAMPLES {
        let (field, items) = sample(&mut runner, &sets);
        let mut set = ConstraintSet::new(field);
        for c in items {
            set.push(c);
        }
        let text = serialize(&set);
        let back = parse_constraints(&text).map_err(|e| format!("{e}: {text}"))?;
        ensure(back == set, || format!("round trip changed {text}"))?;
    }
    from_field_example()?;
    Ok(format!(
        "negation flips {NEGATION_SAMPLES} samples over 14 templates ({decided} decided); {ROUND_TRIP_SAMPLES} round trips; From 1 example gives 5 constraints"
    ))
}

// 7 ------------------------------------------------------------------------

fn embedding_numerics() -> Check {
    let truth = spec(TRAVEL);
    let tree = parse_document(&truth.render_form(&Bindings::default(), None)).unwrap();
    let model = extract_form_model(&tree, None).unwrap();
    let provider = NgramProvider::new(256);
    let params = Node2VecParams::default();
    let a = build_embedding_space(&model, &tree, &provider, &params).map_err(|e| e.to_string())?;
    let b = build_embedding_space(&model, &tree, &provider, &params).map_err(|e| e.to_string())?;
    let bits = |s: &formprobe_core::embed::EmbeddingSpace| -> Vec<u64> {
        s.nodes().flat_map(|n| s.vector(n).unwrap().values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect()
    };
    ensure(bits(&a) == bits(&b), || "reruns differ".into())?;

    let nodes: Vec<NodeId> = a.nodes().collect();
    let mut blank = 0;
    for n in &nodes {
        let e = a.entry(*n).unwrap();
        ensure((e.structural.norm() - 1.0).abs() < EMBED_TOL, || format!("structural norm {} at {n:?}", e.structural.norm()))?;
        if e.text.is_zero() {
            blank += 1;
        } else {
            ensure((e.text.norm() - 1.0).abs() < EMBED_TOL, || format!("text norm {} at {n:?}", e.text.norm()))?;
        }
    }
    let mut pairs = 0;
    for (i, x) in nodes.iter().enumerate() {
        for y in &nodes[i + 1..] {
            let (ex, ey) = (a.entry(*x).unwrap(), a.entry(*y).unwrap());
            if ex.text.is_zero() || ey.text.is_zero() {
                continue;
            }
            let combined = cosine_sim(&ex.combined(), &ey.combined()).unwrap();
            let halves = 0.5 * (cosine_sim(&ex.text, &ey.text).unwrap() + cosine_sim(&ex.structural, &ey.structural).unwrap());
            ensure((combined - halves).abs() < EMBED_TOL, || format!("{x:?},{y:?}: {combined} vs {halves}"))?;
            pairs += 1;
        }
    }

    // a–b–i–u–s: the end node is closer to its neighbour than to the far end.
    let path = parse_document("<a><b><i><u><s></s></u></i></b></a>").unwrap();
    ensure(path.len() == 5, || format!("path has {} nodes", path.len()))?;
    let vecs = structural_embed(&path, &params).map_err(|e| e.to_string())?;
    let cos = |x: usize, y: usize| cosine_sim(&vecs[&NodeId(x)], &vecs[&NodeId(y)]).unwrap();
    ensure(cos(0, 1) > cos(0, 4), || format!("cos(a,b) {} vs cos(a,e) {}", cos(0, 1), cos(0, 4)))?;
    // Reported only: skip-gram also pulls nodes two hops apart together.
    let adjacent_nearest = (0..5)
        .filter(|&i| {
            let nearest = (0..5).filter(|j| *j != i).max_by(|&x, &y| cos(i, x).total_cmp(&cos(i, y))).unwrap();
            nearest.abs_diff(i) == 1
        })
        .count();
    Ok(format!(
        "bitwise reruns; {} nodes unit-norm ({blank} blank texts); identity on {pairs} pairs; cos(a,b) {:.3} > cos(a,e) {:.3} ({adjacent_nearest}/5 nodes nearest to a path neighbour)",
        nodes.len(),
        cos(0, 1),
        cos(0, 4)
    ))
}

// 8 ------------------------------------------------------------------------

const FORM_URL: &str = "https://travel.example/multi-city";

fn travel_page(global: Option<&str>, inline: Option<(&str, &str)>) -> String {
    let fields = [("from1", "From"), ("to1", "To"), ("dates1", "Travel dates"), ("from2", "From"), ("to2", "To"), ("dates2", "Travel dates")];
    let mut html = String::from("<html><body><h1>Multi-city trip</h1>");
    if let Some(text) = global {
        html.push_str(&format!("<div class=\"alert\"><p>{text}</p></div>"));
    }
    html.push_str("<form action=\"/search\">");
    for (id, label) in fields {
        html.push_str(&format!("<div><label for=\"{id}\">{label}</label><input type=\"text\" id=\"{id}\" name=\"{id}\">"));
        if let Some((_, text)) = inline.filter(|(f, _)| *f == id) {
            html.push_str(&format!("<span class=\"hint\">{text}</span>"));
        }
        html.push_str("</div>");
    }
    html.push_str("<button type=\"submit\">Find flights</button></form></body></html>");
    html
}

fn feedback_extraction() -> Check {
    let flight_list = "<html><body><h1>Choose your flights</h1><ul><li>AC 101 Toronto to Vancouver 08:00</li><li>AC 305 Vancouver to Montreal 13:10</li></ul></body></html>";
    // (expected feedback, after-page, after-url, expected outcome)
    let rows: Vec<(Option<&str>, String, &str, Outcome)> = vec![
        (None, flight_list.to_string(), "https://travel.example/flights", Outcome::Success),
        (
            Some("Please select a valid point of origin for this trip."),
            travel_page(None, Some(("from1", "Please select a valid point of origin for this trip."))),
            FORM_URL,
            Outcome::Failure,
        ),
        (
            Some("Please select a valid departure date for this trip."),
            travel_page(None, Some(("dates1", "Please select a valid departure date for this trip."))),
            FORM_URL,
            Outcome::Failure,
        ),
        (
            Some("Departure and arrival cities are the same."),
            travel_page(Some("Departure and arrival cities are the same."), None),
            FORM_URL,
            Outcome::Failure,
        ),
        (
            Some("You've entered the same point of origin and/or the same destination twice."),
            travel_page(Some("You've entered the same point of origin and/or the same destination twice."), None),
            FORM_URL,
            Outcome::Failure,
        ),
        (
            Some("Return date cannot be before departure date."),
            travel_page(Some("Return date cannot be before departure date."), None),
            FORM_URL,
            Outcome::Failure,
        ),
    ];
    let before_html = travel_page(None, None);
    let before_tree = parse_document(&before_html).unwrap();
    let keywords = FeedbackKeywords::default();
    let mut b = builder();
    for (i, (want, after_html, after_url, outcome)) in rows.iter().enumerate() {
        let after_tree = parse_document(after_html).unwrap();
        let redirected = *after_url != FORM_URL && after_tree.find_by_tag("form").next().is_none();
        let raw = RawSubmission {
            before: Page { url: FORM_URL.into(), html: before_html.clone() },
            before_tree: before_tree.clone(),
            after: Page { url: after_url.to_string(), html: after_html.clone() },
            after_tree,
            redirected,
        };
        let r = analyze_submission(&raw, &keywords, &mut b, None).map_err(|e| e.to_string())?;
        let got: Vec<&str> = r.feedback.iter().map(|f| f.text.as_str()).collect();
        let expect: Vec<&str> = want.iter().copied().collect();
        ensure(got == expect, || format!("row {}: captured {got:?}", i + 1))?;
        ensure(classify_outcome(&r.feedback) == *outcome && r.outcome == *outcome, || format!("row {}: {:?}", i + 1, r.outcome))?;
    }
    Ok("6/6 rows: five feedback strings captured, success row clean; outcomes match".into())
}

// 9 ------------------------------------------------------------------------

fn emission_soundness(out: &Path) -> Check {
    let dir = out.join("corpus");
    let mut replayed = 0;
    for name in SPECS {
        let plan = dir.join(format!("{name}.plan.json"));
        ensure(plan.exists(), || format!("{} missing (criterion 2 did not generate it)", plan.display()))?;
        let o = formprobe(&["run-tests", &plan.display().to_string(), "--target", &spec_path(name).display().to_string()]);
        let text = String::from_utf8_lossy(&o.stdout).into_owned();
        ensure(o.status.code() == Some(0), || format!("{name}: exit {:?}\n{text}", o.status.code()))?;
        replayed += read_plan(&plan).unwrap().tests.len();
    }

    // Mutate each travel rule's feedback in turn.
    let plan = read_plan(&dir.join(format!("{TRAVEL}.plan.json"))).unwrap();
    let original: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(spec_path(TRAVEL)).unwrap()).unwrap();
    let texts: BTreeSet<String> =
        original["rules"].as_array().unwrap().iter().map(|r| r["feedback"].as_str().unwrap().to_string()).collect();
    let results: Vec<Result<usize, String>> = texts
        .par_iter()
        .map(|text| {
            let mut doc = original.clone();
            for r in doc["rules"].as_array_mut().unwrap() {
                if r["feedback"] == text.as_str() {
                    r["feedback"] = format!("{} (edited)", text.trim_end_matches('.')).into();
                }
            }
            let mutated = FormSpec::from_document(serde_json::from_value(doc).unwrap()).unwrap();
            let want: Vec<&str> = plan
                .tests
                .iter()
                .filter(|t| t.expected().is_some_and(|e| e.feedback_texts().contains(&text.as_str())))
                .map(|t| t.id.as_str())
                .collect();
            let mut exec = SimExecutor::new(&mutated);
            let mut b = builder();
            let failed: Vec<&str> = plan
                .tests
                .iter()
                .filter(|t| !run_test(&mut exec, t, &mut b, &FeedbackKeywords::default()).passed)
                .map(|t| t.id.as_str())
                .collect();
            if failed == want && !want.is_empty() {
                Ok(want.len())
            } else {
                Err(format!("{text:?}: expected {want:?} to fail, got {failed:?}"))
            }
        })
        .collect();
    let mut flagged = 0;
    for r in results {
        flagged += r?;
    }

    // And once through the binary.
    let mutated_path = out.join("mutated.json");
    let text = "Departure and arrival cities are the same.";
    let mut doc = original.clone();
    for r in doc["rules"].as_array_mut().unwrap() {
        if r["feedback"] == text {
            r["feedback"] = "Departure and arrival cities must differ.".into();
        }
    }
    std::fs::write(&mutated_path, serde_json::to_string(&doc).unwrap()).unwrap();
    let o = formprobe(&[
        "run-tests",
        &dir.join(format!("{TRAVEL}.plan.json")).display().to_string(),
        "--target",
        &mutated_path.display().to_string(),
    ]);
    let failed: Vec<String> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .filter_map(|l| l.strip_prefix("FAIL "))
        .map(|l| l.split(':').next().unwrap().to_string())
        .collect();
    let want: Vec<String> = plan
        .tests
        .iter()
        .filter(|t| t.expected().is_some_and(|e| e.feedback_texts().contains(&text)))
        .map(|t| t.id.clone())
        .collect();
    ensure(o.status.code() == Some(4) && failed == want, || format!("run-tests on mutated spec failed {failed:?}, wanted {want:?}"))?;
    Ok(format!(
        "{replayed} tests replay clean on {} specs; {} rule edits fail exactly their {flagged} referencing tests",
        SPECS.len(),
        texts.len()
    ))
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("oracle end-to-end", Box::new(|| oracle_end_to_end(out))),
        ("corpus coverage and static baseline", Box::new(|| corpus(out))),
        ("feedback-loop convergence", Box::new(|| convergence(out))),
        ("label oracle", Box::new(label_oracle)),
        ("pruning math", Box::new(pruning_math)),
        ("constraint algebra", Box::new(constraint_algebra)),
        ("embedding numerics", Box::new(embedding_numerics)),
        ("feedback extraction", Box::new(feedback_extraction)),
        ("emission soundness", Box::new(|| emission_soundness(out))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("criterion {}: PASS — {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL — {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
