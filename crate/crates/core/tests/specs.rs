//! The bundled simulator specs: every rule witness reaches its own rule,
//! the success witness succeeds, and rendered pages parse back into a model
//! with one field per spec field.

use std::path::PathBuf;

use formprobe_core::constraint::{parse_constraints_in, serialize};
use formprobe_core::dom::{extract_form_model, parse_document};
use formprobe_core::simulator::{FormSpec, FssKind, SpecDocument, SUCCESS_MARKER};
use formprobe_core::submission::{page_fragments, FeedbackKeywords};

fn specs() -> Vec<FormSpec> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../specs");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    assert!(paths.len() >= 6, "expected at least six specs in {}", dir.display());
    paths
        .iter()
        .map(|p| {
            let doc: SpecDocument = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
            FormSpec::from_document(doc).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
        })
        .collect()
}

#[test]
fn every_witness_fires_its_own_rule() {
    for spec in specs() {
        for i in 0..spec.rules.len() {
            let r = spec.handle_submission(&spec.witness_assignment(i));
            assert_eq!(r.fired, Some(i), "{} rule {i} ({})", spec.id(), spec.rules[i].feedback);
            assert!(r.html.contains(&spec.rules[i].feedback.replace('\'', "&#39;")));
        }
        let ok = spec.handle_submission(&spec.success_assignment());
        assert_eq!(ok.fired, None, "{} success witness", spec.id());
    }
}

#[test]
fn feedback_texts_carry_keywords_and_success_pages_do_not() {
    let k = FeedbackKeywords::default();
    for spec in specs() {
        for r in &spec.rules {
            assert!(k.matches(&r.feedback), "{}: `{}` has no keyword", spec.id(), r.feedback);
        }
        let ok = spec.handle_submission(&spec.success_assignment());
        let tree = parse_document(&ok.html).unwrap();
        for f in page_fragments(&tree) {
            assert!(!k.matches(&f.text), "{}: success page text `{}`", spec.id(), f.text);
        }
    }
}

#[test]
fn fss_enumeration_is_rules_plus_success() {
    for spec in specs() {
        let fss = spec.enumerate_fss();
        assert_eq!(fss.len(), spec.rules.len() + 1);
        let last = fss.last().unwrap();
        assert_eq!(last.kind, FssKind::Success);
        assert_eq!(last.feedback, SUCCESS_MARKER);
        assert!(fss[..fss.len() - 1].iter().all(|r| r.kind == FssKind::Failure && !r.inputs.is_empty()));
    }
}

#[test]
fn rendered_form_round_trips_into_a_model() {
    for spec in specs() {
        let html = spec.render_form(&spec.success_assignment(), None);
        let tree = parse_document(&html).unwrap();
        let model = extract_form_model(&tree, None).unwrap();
        let keys = model.keys();
        assert_eq!(keys, spec.field_names(), "{}", spec.id());
        assert_eq!(model.context.app_title, spec.doc.title);
    }
}

#[test]
fn requirement_chains_round_trip_through_the_serializer() {
    for spec in specs() {
        let names = spec.field_names();
        for r in &spec.rules {
            for set in &r.requires {
                let again = parse_constraints_in(&serialize(set), &names).unwrap();
                assert_eq!(&again, set);
            }
        }
    }
}
