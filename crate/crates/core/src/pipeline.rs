//! Stage orchestration: stimuli, score, analyze, phases, report.
//!
//! Every stage persists its artifacts before the next stage starts. The
//! manifest lists each artifact with its SHA-256 so a run can be verified
//! after the fact.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    aggregate_rows, aggregate_trajectory, alignment_series, build_trajectory, detect_changepoints_joint,
    disaggregate, label_phases, write_accuracy_csv, write_aggregate_csv, AnalysisError, BinomialSeries,
    Dimension, GroupKey, Heuristic, MethodInfo, PhaseSegment, TrajectorySeries,
};
use crate::config::{ChangeSignal, ConfigError, IndexSource, OracleConfig, RunConfig, GOLD_SOURCE};
use crate::ngram::synthetic::agreement_corpus;
use crate::ngram::{pile_fixture, NGramIndex};
use crate::par::Exec;
use crate::provider::{ModelRef, ProviderClient, ProviderScorer};
use crate::report::{emit_plot, PlotOptions};
use crate::scoring::{
    score_items, write_records, GoldScorer, ItemFailure, OracleScorer, ScoreRecord, ScoreRun, ScorerId,
};
use crate::stimuli::{import_items, write_items, Lexicon, StimulusItem, TemplateSet};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub artifacts: Vec<ArtifactRecord>,
    pub item_failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub started_at: String,
    pub finished_at: String,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub item_failures: usize,
}

impl RunManifest {
    /// 0 success, 2 stage failure, 3 item-level scorer failures.
    pub fn exit_code(&self) -> i32 {
        if self.failed_stage.is_some() {
            2
        } else if self.item_failures > 0 {
            3
        } else {
            0
        }
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &ArtifactRecord> {
        self.stages.iter().flat_map(|s| s.artifacts.iter())
    }

    pub fn artifact(&self, path: &str) -> Option<&ArtifactRecord> {
        self.artifacts().find(|a| a.path == path)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Check that every listed artifact exists under `out` with its hash.
    pub fn verify(&self, out: &Path) -> Result<(), String> {
        for a in self.artifacts() {
            let bytes = std::fs::read(out.join(&a.path)).map_err(|e| format!("{}: {e}", a.path))?;
            if crate::sha256_hex(&bytes) != a.sha256 {
                return Err(format!("{}: hash mismatch", a.path));
            }
        }
        Ok(())
    }
}

struct StageOutput {
    artifacts: Vec<ArtifactRecord>,
    item_failures: usize,
    notes: Vec<String>,
}

impl StageOutput {
    fn new() -> Self {
        StageOutput { artifacts: Vec::new(), item_failures: 0, notes: Vec::new() }
    }
}

type StageResult = Result<StageOutput, String>;

fn write_artifact(out: &Path, rel: &str, bytes: &[u8]) -> Result<ArtifactRecord, String> {
    let path = out.join(rel);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    std::fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(ArtifactRecord {
        path: rel.to_string(),
        sha256: crate::sha256_hex(bytes),
        bytes: bytes.len() as u64,
    })
}

fn to_string<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Records of one static scorer and the heuristic it stands for.
struct Reference {
    source: String,
    heuristic: Heuristic,
    records: Vec<ScoreRecord>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    exec: Exec,
    templates: Option<TemplateSet>,
    items: Vec<StimulusItem>,
    references: Vec<Reference>,
    stepped: Vec<ScoreRecord>,
    trajectories: Vec<TrajectorySeries>,
}

/// Run every stage in order and write `manifest.json`. Config errors are
/// returned before any stage runs; stage failures are recorded in the
/// manifest.
pub fn run_pipeline(config: &RunConfig, exec: Exec) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let jobs = config.scoring.jobs;
    if jobs > 0 && exec.is_parallel() {
        crate::par::with_jobs(jobs, || run_stages(config, exec))
    } else {
        run_stages(config, exec)
    }
}

fn run_stages(config: &RunConfig, exec: Exec) -> Result<RunManifest, PipelineError> {
    let out = config.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|source| PipelineError::Io { path: out.clone(), source })?;
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let mut run = Run {
        cfg: config,
        out: out.clone(),
        exec,
        templates: None,
        items: Vec::new(),
        references: Vec::new(),
        stepped: Vec::new(),
        trajectories: Vec::new(),
    };

    type Stage = fn(&mut Run) -> StageResult;
    let stages: [(&str, Stage); 5] = [
        ("stimuli", stage_stimuli),
        ("score", stage_score),
        ("analyze", stage_analyze),
        ("phases", stage_phases),
        ("report", stage_report),
    ];
    let mut records = Vec::new();
    let mut failed_stage = None;
    for (name, stage) in stages {
        if failed_stage.is_some() {
            break;
        }
        if name == "report" && run.trajectories.is_empty() {
            records.push(StageRecord {
                name: name.into(),
                status: StageStatus::Skipped,
                artifacts: Vec::new(),
                item_failures: 0,
                error: None,
                notes: vec!["no stepped scorers; nothing to plot".into()],
            });
            continue;
        }
        let record = match stage(&mut run) {
            Ok(o) => StageRecord {
                name: name.into(),
                status: StageStatus::Ok,
                artifacts: o.artifacts,
                item_failures: o.item_failures,
                error: None,
                notes: o.notes,
            },
            Err(e) => {
                failed_stage = Some(name.to_string());
                StageRecord {
                    name: name.into(),
                    status: StageStatus::Failed,
                    artifacts: Vec::new(),
                    item_failures: 0,
                    error: Some(e),
                    notes: Vec::new(),
                }
            }
        };
        records.push(record);
    }

    let item_failures = records.iter().map(|s| s.item_failures).sum();
    let manifest = RunManifest {
        tool_version: crate::TOOL_VERSION.to_string(),
        config: config.clone(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        stages: records,
        failed_stage,
        item_failures,
    };
    let path = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|source| PipelineError::Io { path, source })?;
    Ok(manifest)
}

/// Items from templates and imports, filtered and deduplicated by id.
pub fn collect_items(cfg: &RunConfig) -> Result<(Vec<StimulusItem>, Option<TemplateSet>), String> {
    let lexicon = Lexicon::standard();
    let mut items = Vec::new();
    let mut templates = None;
    if cfg.stimuli.use_templates {
        let set = match &cfg.stimuli.templates {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                TemplateSet::parse(&text).map_err(to_string)?
            }
            None => TemplateSet::bundled(),
        };
        items.extend(set.expand(&lexicon, cfg.stimuli.include_simple).map_err(to_string)?);
        templates = Some(set);
    }
    for imp in &cfg.stimuli.imports {
        let imported = import_items(&imp.path, imp.format, &lexicon)
            .map_err(|e| format!("{}: {e}", imp.path.display()))?;
        items.extend(imported);
    }
    let verbs: HashSet<&str> = cfg.stimuli.verbs.iter().map(String::as_str).collect();
    let mut seen = HashSet::new();
    items.retain(|i| (verbs.is_empty() || verbs.contains(i.verb_lemma.as_str())) && seen.insert(i.id.clone()));
    if items.is_empty() {
        return Err("no stimulus items after filtering".into());
    }
    Ok((items, templates))
}

fn stage_stimuli(run: &mut Run) -> StageResult {
    let (items, templates) = collect_items(run.cfg)?;
    let mut buf = Vec::new();
    write_items(&mut buf, &items).map_err(to_string)?;
    let mut o = StageOutput::new();
    o.artifacts.push(write_artifact(&run.out, "stimuli.jsonl", &buf)?);
    o.notes.push(format!("{} items", items.len()));
    run.items = items;
    run.templates = templates;
    Ok(o)
}

/// Build the index an oracle config points at.
pub fn build_oracle_index(
    oracle: &OracleConfig,
    templates: Option<&TemplateSet>,
    exec: Exec,
) -> Result<NGramIndex, String> {
    let smoothing = oracle.smoothing.clone().unwrap_or_default();
    let index = match &oracle.index {
        IndexSource::PileFixture => pile_fixture(smoothing).map_err(to_string)?,
        IndexSource::Corpus { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            NGramIndex::build_with(&text, oracle.order, smoothing, exec).map_err(to_string)?
        }
        IndexSource::Synthetic => {
            let nouns = templates.map(TemplateSet::nouns).unwrap_or_default();
            if nouns.is_empty() {
                return Err(format!("oracle {}: synthetic corpus needs template nouns", oracle.name));
            }
            let lexicon = Lexicon::standard();
            let text = agreement_corpus(&nouns, lexicon.verbs());
            NGramIndex::build_with(&text, oracle.order, smoothing, exec).map_err(to_string)?
        }
        IndexSource::Ngix { path } => {
            let idx = NGramIndex::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
            match &oracle.smoothing {
                Some(s) => idx.with_smoothing(s.clone()).map_err(to_string)?,
                None => idx,
            }
        }
    };
    if index.max_order() < oracle.order {
        return Err(format!(
            "oracle {}: index max order {} < requested order {}",
            oracle.name,
            index.max_order(),
            oracle.order
        ));
    }
    Ok(index)
}

fn gold_id() -> ScorerId {
    ScorerId::oracle(GOLD_SOURCE, 0)
}

fn persist_run(out: &Path, label: &str, run: &ScoreRun, o: &mut StageOutput) -> Result<(), String> {
    let mut buf = Vec::new();
    write_records(&mut buf, &run.records).map_err(to_string)?;
    o.artifacts.push(write_artifact(out, &format!("records/{label}.jsonl"), &buf)?);
    if !run.failures.is_empty() {
        let mut text = String::new();
        for ItemFailure { item_id, error } in &run.failures {
            let line = serde_json::json!({ "item_id": item_id, "error": error });
            text.push_str(&line.to_string());
            text.push('\n');
        }
        o.artifacts.push(write_artifact(out, &format!("records/{label}.failures.jsonl"), text.as_bytes())?);
        o.item_failures += run.failures.len();
    }
    Ok(())
}

fn stage_score(run: &mut Run) -> StageResult {
    let mut o = StageOutput::new();
    let cfg = run.cfg;
    for oracle in &cfg.oracles {
        let index = Arc::new(build_oracle_index(oracle, run.templates.as_ref(), run.exec)?);
        let scorer = OracleScorer::new(&oracle.name, index, oracle.order).map_err(to_string)?;
        let scored = score_items(&scorer, &run.items, run.exec);
        persist_run(&run.out, &ScorerId::oracle(&oracle.name, oracle.order).label(), &scored, &mut o)?;
        run.references.push(Reference {
            source: oracle.name.clone(),
            heuristic: Heuristic::from_order(oracle.order),
            records: scored.records,
        });
    }
    if cfg.has_stepped_scorers() {
        let gold = GoldScorer::new(gold_id(), &run.items);
        let scored = score_items(&gold, &run.items, run.exec);
        persist_run(&run.out, &gold_id().label(), &scored, &mut o)?;
        run.references.push(Reference {
            source: GOLD_SOURCE.into(),
            heuristic: Heuristic::Grammar,
            records: scored.records,
        });
    }

    if let Some(cascade) = &cfg.cascade {
        let mut steps = cascade.steps.clone();
        steps.sort_unstable();
        steps.dedup();
        for step in steps {
            let source = cascade.source_at(step).expect("validated");
            let reference = run
                .references
                .iter()
                .find(|r| r.source == source)
                .ok_or_else(|| format!("cascade source {source} has no records"))?;
            let id = ScorerId::checkpoint(&cascade.model, &cascade.size, cascade.seed, step);
            let records: Vec<ScoreRecord> = reference
                .records
                .iter()
                .map(|r| ScoreRecord { scorer: id.clone(), ..r.clone() })
                .collect();
            let scored = ScoreRun { records, failures: Vec::new() };
            persist_run(&run.out, &id.label(), &scored, &mut o)?;
            run.stepped.extend(scored.records);
        }
    }

    for provider in &cfg.providers {
        let cmd = provider
            .command
            .clone()
            .or_else(|| cfg.scoring.provider_cmd.clone())
            .ok_or_else(|| format!("provider {}: no provider command configured", provider.model))?;
        let mut checkpoints = Vec::new();
        for seed in &provider.seeds {
            let model = ModelRef { name: provider.model.clone(), size: provider.size.clone(), seed: *seed, step: None };
            let steps = if provider.steps.is_empty() {
                let mut client = ProviderClient::spawn(&cmd, &provider.args).map_err(to_string)?;
                let steps = client.list_checkpoints(&model).map_err(to_string)?;
                let _ = client.shutdown();
                steps
            } else {
                provider.steps.clone()
            };
            checkpoints.extend(steps.into_iter().map(|s| ModelRef { step: Some(s), ..model.clone() }));
        }
        for batch in checkpoints.chunks(cfg.scoring.max_providers) {
            let results: Vec<Result<ScoreRun, String>> = std::thread::scope(|scope| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|model| {
                        let (cmd, items, args) = (&cmd, &run.items, &provider.args);
                        scope.spawn(move || {
                            let scorer = ProviderScorer::start(cmd, args, model).map_err(to_string)?;
                            let scored = score_items(&scorer, items, Exec::Sequential);
                            scorer.shutdown().map_err(to_string)?;
                            Ok(scored)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err("provider worker panicked".into())))
                    .collect()
            });
            for (model, result) in batch.iter().zip(results) {
                let scored = result?;
                let id = ScorerId::checkpoint(&model.name, &model.size, model.seed, model.step.expect("set"));
                persist_run(&run.out, &id.label(), &scored, &mut o)?;
                run.stepped.extend(scored.records);
            }
        }
    }
    Ok(o)
}

fn method(cfg: &RunConfig) -> MethodInfo {
    MethodInfo::new(cfg.scoring.aggregation, &cfg.analysis.ci, &cfg.analysis.changepoint)
}

/// JSON form of trajectories written by the analyze stage.
#[derive(Serialize)]
struct TrajectoryDoc<'a> {
    method: MethodInfo,
    series: &'a [TrajectorySeries],
    aggregates: &'a [TrajectorySeries],
}

fn stage_analyze(run: &mut Run) -> StageResult {
    let cfg = run.cfg;
    let a = &cfg.analysis;
    let mut o = StageOutput::new();
    let mut records: Vec<ScoreRecord> = run
        .references
        .iter()
        .filter(|r| r.source != GOLD_SOURCE)
        .flat_map(|r| r.records.iter().cloned())
        .collect();
    records.extend(run.stepped.iter().cloned());
    let method = method(cfg);
    let cells = disaggregate(&records, &run.items, &a.dims, cfg.scoring.aggregation, &a.ci, run.exec).map_err(to_string)?;
    let mut buf = Vec::new();
    write_accuracy_csv(&mut buf, &a.dims, &cells, &method).map_err(to_string)?;
    o.artifacts.push(write_artifact(&run.out, "analysis/accuracy.csv", &buf)?);
    if a.dims.contains(&Dimension::Condition) {
        let rows = aggregate_rows(&cells).map_err(to_string)?;
        let mut buf = Vec::new();
        write_aggregate_csv(&mut buf, &a.dims, &rows, &method).map_err(to_string)?;
        o.artifacts.push(write_artifact(&run.out, "analysis/aggregate.csv", &buf)?);
    }
    if !run.stepped.is_empty() {
        let series = build_trajectory(
            &run.stepped,
            &run.items,
            &a.trajectory_dims,
            cfg.scoring.aggregation,
            &a.ci,
            run.exec,
        )
        .map_err(to_string)?;
        let aggregates = aggregate_trajectory(&series).map_err(to_string)?;
        let doc = TrajectoryDoc { method, series: &series, aggregates: &aggregates };
        let json = serde_json::to_string_pretty(&doc).map_err(to_string)? + "\n";
        o.artifacts.push(write_artifact(&run.out, "analysis/trajectories.json", json.as_bytes())?);
        run.trajectories = series;
    }
    Ok(o)
}

/// One trajectory family in `phases.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFamily {
    pub key: BTreeMap<String, serde_json::Value>,
    pub steps: Vec<u64>,
    pub breakpoints: Vec<u64>,
    pub segments: Vec<PhaseSegment>,
    pub alignment: BTreeMap<Heuristic, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDocument {
    pub method: MethodInfo,
    pub change_signal: ChangeSignal,
    pub heuristics: BTreeMap<Heuristic, String>,
    pub families: Vec<PhaseFamily>,
}

/// Phase families are keyed by checkpoint-level dimensions only.
fn family_dims(dims: &[Dimension]) -> Vec<Dimension> {
    dims.iter()
        .copied()
        .filter(|d| matches!(d, Dimension::Model | Dimension::Size | Dimension::Seed))
        .collect()
}

fn key_json(key: &GroupKey) -> BTreeMap<String, serde_json::Value> {
    key.iter()
        .map(|(d, v)| (d.name().to_string(), serde_json::to_value(v).expect("value serializes")))
        .collect()
}

fn stage_phases(run: &mut Run) -> StageResult {
    let cfg = run.cfg;
    let a = &cfg.analysis;
    let mut o = StageOutput::new();

    let mut heuristics: BTreeMap<Heuristic, &Reference> = BTreeMap::new();
    for r in &run.references {
        match heuristics.entry(r.heuristic) {
            Entry::Occupied(_) => {
                o.notes.push(format!("oracle {} ignored: {} already provided", r.source, r.heuristic));
            }
            Entry::Vacant(slot) => {
                slot.insert(r);
            }
        }
    }
    let oracle_lists: Vec<(Heuristic, &[ScoreRecord])> =
        heuristics.iter().map(|(h, r)| (*h, r.records.as_slice())).collect();

    let item_by_id: BTreeMap<&str, &StimulusItem> = run.items.iter().map(|i| (i.id.as_str(), i)).collect();
    let dims = family_dims(&a.trajectory_dims);
    let mut families: BTreeMap<GroupKey, Vec<ScoreRecord>> = BTreeMap::new();
    for r in &run.stepped {
        let item = item_by_id
            .get(r.item_id.as_str())
            .ok_or_else(|| format!("record for unknown item {}", r.item_id))?;
        let key = dims.iter().map(|d| (*d, d.value(r, item))).collect();
        families.entry(key).or_default().push(r.clone());
    }

    let mut out_families = Vec::new();
    for (key, records) in &families {
        let alignment = alignment_series(records, &oracle_lists, cfg.scoring.aggregation).map_err(to_string)?;
        let signal: Vec<BinomialSeries> = match a.change_signal {
            ChangeSignal::Alignment => alignment.values().cloned().collect(),
            ChangeSignal::Conditions => {
                build_trajectory(records, &run.items, &[], cfg.scoring.aggregation, &a.ci, Exec::Sequential)
                    .map_err(to_string)?
                    .iter()
                    .map(BinomialSeries::from)
                    .collect()
            }
        };
        let breakpoints = match detect_changepoints_joint(&signal, &a.changepoint) {
            Ok(b) => b,
            Err(AnalysisError::SeriesTooShort { len, needed }) => {
                o.notes.push(format!("{}: {len} steps, change points need {needed}", key_label(key)));
                Vec::new()
            }
            Err(e) => return Err(e.to_string()),
        };
        let segments = label_phases(&alignment, &breakpoints).map_err(to_string)?;
        let steps = alignment.values().next().map(|s| s.steps.clone()).unwrap_or_default();
        out_families.push(PhaseFamily {
            key: key_json(key),
            steps,
            breakpoints,
            alignment: alignment
                .iter()
                .map(|(h, s)| (*h, (0..s.len()).map(|i| s.accuracy(i)).collect()))
                .collect(),
            segments,
        });
    }
    if families.is_empty() {
        o.notes.push("no stepped scorers; no phases to label".into());
    }
    let doc = PhaseDocument {
        method: method(cfg),
        change_signal: a.change_signal,
        heuristics: heuristics.iter().map(|(h, r)| (*h, r.source.clone())).collect(),
        families: out_families,
    };
    let json = serde_json::to_string_pretty(&doc).map_err(to_string)? + "\n";
    o.artifacts.push(write_artifact(&run.out, "analysis/phases.json", json.as_bytes())?);
    Ok(o)
}

fn key_label(key: &GroupKey) -> String {
    if key.is_empty() {
        return "all".into();
    }
    let raw: Vec<String> = key.values().map(|v| v.to_string()).collect();
    raw.join("-")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' { c } else { '_' })
        .collect()
}

fn plot_groups(series: &[TrajectorySeries]) -> BTreeMap<GroupKey, Vec<TrajectorySeries>> {
    let mut groups: BTreeMap<GroupKey, Vec<TrajectorySeries>> = BTreeMap::new();
    for s in series {
        groups.entry(s.key.clone()).or_default().push(s.clone());
    }
    groups
}

fn render(series: &[TrajectorySeries], title: String, log_x: bool) -> Result<String, String> {
    let aggregate = aggregate_trajectory(series).map_err(to_string)?;
    let aggregate = aggregate.into_iter().next().ok_or("no aggregate series")?;
    let opts = PlotOptions { log_x, title, ..PlotOptions::default() };
    emit_plot(series, &aggregate, &opts).map_err(to_string)
}

fn stage_report(run: &mut Run) -> StageResult {
    let cfg = run.cfg;
    let mut o = StageOutput::new();
    let groups = plot_groups(&run.trajectories);
    for (i, (key, series)) in groups.iter().enumerate() {
        let label = key_label(key);
        let svg = render(series, format!("{label}: accuracy by condition"), cfg.report.log_x)?;
        if i == 0 {
            o.artifacts.push(write_artifact(&run.out, "report/figure.svg", svg.as_bytes())?);
        }
        if groups.len() > 1 {
            o.artifacts.push(write_artifact(&run.out, &format!("report/figure-{label}.svg"), svg.as_bytes())?);
        }
    }
    if cfg.report.per_class {
        let mut dims = cfg.analysis.trajectory_dims.clone();
        dims.retain(|d| *d != Dimension::VerbClass);
        dims.push(Dimension::VerbClass);
        let series = build_trajectory(&run.stepped, &run.items, &dims, cfg.scoring.aggregation, &cfg.analysis.ci, run.exec)
            .map_err(to_string)?;
        for (key, series) in plot_groups(&series) {
            let label = key_label(&key);
            match render(&series, format!("{label}: accuracy by condition"), cfg.report.log_x) {
                Ok(svg) => o.artifacts.push(write_artifact(&run.out, &format!("report/figure-{label}.svg"), svg.as_bytes())?),
                Err(e) => o.notes.push(format!("{label}: not plotted ({e})")),
            }
        }
    }
    Ok(o)
}
