use std::path::Path;

use sva_core::config::RunConfig;
use sva_core::pipeline::{run_pipeline, PhaseDocument, StageStatus};
use sva_core::Exec;

fn load(name: &str, out: &Path) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn oracle_only_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load("oracle-only.toml", dir.path());
    let m = run_pipeline(&cfg, Exec::default()).unwrap();
    assert_eq!(m.exit_code(), 0);
    let with_artifacts: Vec<&str> =
        m.stages.iter().filter(|s| !s.artifacts.is_empty()).map(|s| s.name.as_str()).collect();
    assert_eq!(with_artifacts, ["stimuli", "score", "analyze", "phases"]);
    assert_eq!(m.stage("report").unwrap().status, StageStatus::Skipped);
    m.verify(dir.path()).unwrap();
    assert!(m.artifact("records/oracle-pile-order1.jsonl").is_some());
    assert!(m.artifact("analysis/accuracy.csv").is_some());
}

#[test]
fn cascade_run_labels_phases() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load("cascade.toml", dir.path());
    let m = run_pipeline(&cfg, Exec::default()).unwrap();
    assert_eq!(m.exit_code(), 0, "{m:#?}");
    m.verify(dir.path()).unwrap();
    let doc: PhaseDocument =
        serde_json::from_slice(&std::fs::read(dir.path().join("analysis/phases.json")).unwrap()).unwrap();
    assert_eq!(doc.families.len(), 1);
    let fam = &doc.families[0];
    let labels: Vec<String> = fam.segments.iter().map(|s| s.label.to_string()).collect();
    assert_eq!(labels, ["Unigram", "Bigram", "Grammar"], "{fam:#?}");
    assert_eq!(fam.breakpoints, vec![10, 20]);
    assert!(dir.path().join("report/figure.svg").exists());
}

#[test]
fn zero_scorers_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::new(dir.path().join("out"));
    assert!(run_pipeline(&cfg, Exec::Sequential).is_err());
    assert!(!dir.path().join("out").exists());
}
