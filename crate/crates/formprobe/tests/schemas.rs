//! Bundled JSON schemas against real documents.

use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn read(p: &std::path::Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn validator(name: &str) -> jsonschema::Validator {
    let schema = read(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name));
    jsonschema::draft202012::new(&schema).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value, what: &str) {
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{what}: {errors:#?}");
}

#[test]
fn bundled_specs_conform() {
    let v = validator("spec.schema.json");
    let mut n = 0;
    for entry in std::fs::read_dir(root().join("specs")).unwrap() {
        let path = entry.unwrap().path();
        assert_valid(&v, &read(&path), &path.display().to_string());
        n += 1;
    }
    assert_eq!(n, 7);
}

#[test]
fn spec_schema_rejects_unknown_input_type() {
    let v = validator("spec.schema.json");
    let mut doc = read(&root().join("specs/contact_form.json"));
    doc["fields"][0]["input_type"] = Value::from("color");
    assert!(!v.is_valid(&doc));
}

#[test]
fn generated_plan_and_records_conform() {
    let dir = tempfile::tempdir().unwrap();
    let spec = root().join("specs/aircanada_multicity.json").display().to_string();
    let script = root().join("fixtures/scripts/wrong_date_format.json").display().to_string();
    let out = dir.path().display().to_string();
    // The scripted run exercises refinement records and prompt logs.
    let o = Command::new(env!("CARGO_BIN_EXE_formprobe"))
        .args(["generate", "--target", &spec, "--out", &out, "--backend", "scripted-mock", "--script", &script])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    assert_valid(&validator("plan.schema.json"), &read(&dir.path().join("aircanada_multicity.plan.json")), "plan");
    let v = validator("run_record.schema.json");
    let runs = std::fs::read_to_string(dir.path().join("aircanada_multicity.runs.jsonl")).unwrap();
    let mut kinds = std::collections::BTreeSet::new();
    for (i, line) in runs.lines().enumerate() {
        let rec: Value = serde_json::from_str(line).unwrap();
        kinds.insert(rec["kind"].as_str().unwrap().to_string());
        assert_valid(&v, &rec, &format!("record {i}"));
    }
    assert!(kinds.contains("FeedbackRefinement") && kinds.contains("ValidationProbe"), "{kinds:?}");
}

#[test]
fn example_configs_conform() {
    let v = validator("config.schema.json");
    let toml_cfg: toml::Value = toml::from_str(
        r#"
seed = 7
backend = "oracle-mock"
keywords = ["error", "invalid"]
[pruning]
lambda = 0.5
std_mode = "population"
[node2vec]
walks_per_node = 10
[remote]
chat_model = "gpt-4"
api_key_env = "MY_KEY"
"#,
    )
    .unwrap();
    let doc = serde_json::to_value(toml_cfg).unwrap();
    assert_valid(&v, &doc, "config");
    assert!(!v.is_valid(&serde_json::json!({ "api_key": "secret" })));
}
