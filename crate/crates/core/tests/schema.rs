use std::path::PathBuf;

use ponzilens_core::fixtures::NAMED;
use ponzilens_core::pipeline::{analyze, AnalysisConfig};
use ponzilens_core::report::{build_report, report_schema, to_value};

fn schema_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schema/analysis-report-v1.json")
}

/// Set PONZILENS_WRITE_SCHEMA=1 to regenerate the published file.
#[test]
fn published_schema_is_current() {
    let generated = serde_json::to_string_pretty(&report_schema()).unwrap() + "\n";
    if std::env::var_os("PONZILENS_WRITE_SCHEMA").is_some() {
        std::fs::write(schema_path(), &generated).unwrap();
    }
    let published = std::fs::read_to_string(schema_path()).expect("schema file present");
    assert_eq!(published, generated, "schema/analysis-report-v1.json is stale");
}

#[test]
fn fixture_reports_conform_to_published_schema() {
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(schema_path()).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    for f in NAMED {
        let r = build_report(&analyze(&f.bytes(), &AnalysisConfig::default()).unwrap(), None).unwrap();
        let doc = to_value(&r);
        let errors: Vec<String> =
            validator.iter_errors(&doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
        assert!(errors.is_empty(), "{}: {errors:?}", f.name);
    }
}

#[test]
fn schema_rejects_wrong_types() {
    let schema = report_schema();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let r = build_report(&analyze(&NAMED[0].bytes(), &AnalysisConfig::default()).unwrap(), None).unwrap();
    let mut doc = to_value(&r);
    doc["summary"]["feasible_paths"] = "three".into();
    assert!(!validator.is_valid(&doc));
}
