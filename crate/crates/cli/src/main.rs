use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sva_core::analysis::{
    aggregate_trajectory, alignment_series, build_trajectory, detect_changepoints_joint, disaggregate,
    label_phases, write_accuracy_csv, AnalysisError, ChangepointParams, CiParams, CiPooling, Dimension,
    Heuristic, MethodInfo, Penalty,
};
use sva_core::config::{RunConfig, ENV_OUT_DIR, ENV_PROVIDER_CMD};
use sva_core::ngram::{NGramIndex, SmoothingSpec, PILE_FIXTURE_CSV};
use sva_core::pipeline::run_pipeline;
use sva_core::provider::{ModelRef, ProviderScorer};
use sva_core::report::{emit_plot, PlotOptions};
use sva_core::scoring::{read_records, score_items, write_records, Aggregation, OracleScorer, ScoreRecord, Scorer};
use sva_core::stimuli::{
    import_items, read_items, validate_item, write_items, ImportFormat, Lexicon, StimulusItem, TemplateSet,
    BUNDLED_TEMPLATES,
};
use sva_core::Exec;

const EXIT_CONFIG: u8 = 1;
const EXIT_STAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "sva", version, about = "Subject-verb agreement evaluation over training checkpoints")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (run, fixtures) or file.
    #[arg(long, global = true, env = ENV_OUT_DIR)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Provider executable.
    #[arg(long, global = true, env = ENV_PROVIDER_CMD)]
    provider_cmd: Option<String>,
    /// Log-prob aggregation over candidate tokens.
    #[arg(long, global = true)]
    aggregation: Option<Aggregation>,
    /// Bootstrap seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate, import or validate stimulus items.
    #[command(subcommand)]
    Stimuli(StimuliCmd),
    /// Build an n-gram index from a text corpus.
    Index(IndexArgs),
    /// Score items with an n-gram oracle or a provider checkpoint.
    Score(ScoreArgs),
    /// Per-cell accuracy with bootstrap intervals.
    Analyze(AnalyzeArgs),
    /// Change points and heuristic phase labels for stepped records.
    Phases(PhasesArgs),
    /// SVG condition curves for stepped records.
    Report(ReportArgs),
    /// Write the bundled verb-count fixture and templates.
    Fixtures,
    /// Run the full pipeline from --config.
    Run,
}

#[derive(Subcommand, Debug)]
enum StimuliCmd {
    /// Expand templates into items.
    Generate {
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        no_simple: bool,
        /// Keep only these verb lemmas.
        #[arg(long, value_delimiter = ',')]
        verbs: Vec<String>,
    },
    /// Convert external items to native JSONL.
    Import {
        input: PathBuf,
        #[arg(long, default_value = "tabular")]
        format: ImportFormat,
    },
    /// Check items against the lexicon and item invariants.
    Validate {
        input: PathBuf,
        #[arg(long, default_value = "native")]
        format: ImportFormat,
    },
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    order: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    items: PathBuf,
    /// Prebuilt index (.ngix).
    #[arg(long, conflicts_with = "model")]
    index: Option<PathBuf>,
    #[arg(long, requires = "index")]
    order: Option<usize>,
    #[arg(long, default_value = "oracle")]
    name: String,
    /// Provider model name; requires --size, --model-seed and --step.
    #[arg(long, requires_all = ["size", "model_seed", "step"])]
    model: Option<String>,
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    model_seed: Option<i64>,
    #[arg(long)]
    step: Option<u64>,
    /// Extra arguments passed to the provider.
    #[arg(long, allow_hyphen_values = true)]
    provider_arg: Vec<String>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    records: Vec<PathBuf>,
    #[arg(long, default_value = "scorer,condition")]
    dims: String,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Resample seeds as clusters instead of items.
    #[arg(long)]
    pool_seeds: bool,
}

#[derive(Args, Debug)]
struct PhasesArgs {
    #[arg(long)]
    items: PathBuf,
    /// Stepped model records.
    #[arg(long, required = true, num_args = 1..)]
    records: Vec<PathBuf>,
    /// Heuristic reference records as LABEL=PATH (unigram, bigram, trigram, longer, grammar).
    #[arg(long = "oracle", required = true)]
    oracles: Vec<String>,
    #[arg(long, default_value_t = 2)]
    min_segment: usize,
    /// Fixed split penalty; ln(points) when absent.
    #[arg(long)]
    penalty: Option<f64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    records: Vec<PathBuf>,
    /// Linear step axis.
    #[arg(long)]
    linear: bool,
    #[arg(long, default_value = "")]
    title: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let jobs = cli.jobs;
    let result = if jobs > 0 { sva_core::par::with_jobs(jobs, || dispatch(&cli)) } else { dispatch(&cli) };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_STAGE)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let exec = Exec::default();
    match &cli.command {
        Command::Stimuli(cmd) => stimuli(cli, cmd)?,
        Command::Index(a) => index(cli, a, exec)?,
        Command::Score(a) => score(cli, a, exec)?,
        Command::Analyze(a) => analyze(cli, a, exec)?,
        Command::Phases(a) => phases(cli, a)?,
        Command::Report(a) => report(cli, a, exec)?,
        Command::Fixtures => fixtures(cli)?,
        Command::Run => return run(cli, exec),
    }
    Ok(ExitCode::SUCCESS)
}

fn output(cli: &Cli) -> Result<Box<dyn Write>> {
    Ok(match &cli.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn aggregation(cli: &Cli) -> Aggregation {
    cli.aggregation.unwrap_or_default()
}

fn load_items(path: &Path) -> Result<Vec<StimulusItem>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_items(BufReader::new(file), ImportFormat::NativeJsonl, &Lexicon::standard())
        .with_context(|| format!("reading items from {}", path.display()))
}

fn load_records(paths: &[PathBuf]) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for p in paths {
        let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        out.extend(read_records(BufReader::new(file)).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(out)
}

fn stimuli(cli: &Cli, cmd: &StimuliCmd) -> Result<()> {
    let lexicon = Lexicon::standard();
    match cmd {
        StimuliCmd::Generate { templates, no_simple, verbs } => {
            let set = match templates {
                Some(p) => TemplateSet::parse(&std::fs::read_to_string(p)?)?,
                None => TemplateSet::bundled(),
            };
            let mut items = set.expand(&lexicon, !no_simple)?;
            if !verbs.is_empty() {
                items.retain(|i| verbs.contains(&i.verb_lemma));
            }
            write_items(output(cli)?, &items)?;
            eprintln!("{} items", items.len());
        }
        StimuliCmd::Import { input, format } => {
            let items = import_items(input, *format, &lexicon)?;
            write_items(output(cli)?, &items)?;
            eprintln!("{} items", items.len());
        }
        StimuliCmd::Validate { input, format } => {
            let items = import_items(input, *format, &lexicon)?;
            let mut bad = 0;
            for item in &items {
                if let Err(v) = validate_item(item, &lexicon) {
                    bad += 1;
                    eprintln!("{}: {v:?}", item.id);
                }
            }
            if bad > 0 {
                bail!("{bad} of {} items invalid", items.len());
            }
            println!("{} items valid", items.len());
        }
    }
    Ok(())
}

fn index(cli: &Cli, a: &IndexArgs, exec: Exec) -> Result<()> {
    let Some(out) = &cli.out else { bail!("--out <file.ngix> is required") };
    let text = std::fs::read_to_string(&a.corpus).with_context(|| format!("reading {}", a.corpus.display()))?;
    let smoothing = SmoothingSpec { delta: a.delta, ..SmoothingSpec::default() };
    let idx = NGramIndex::build_with(&text, a.order, smoothing, exec)?;
    idx.save(out)?;
    eprintln!("{} tokens, {} types, order {}", idx.token_count(), idx.vocab().len(), idx.max_order());
    Ok(())
}

fn score(cli: &Cli, a: &ScoreArgs, exec: Exec) -> Result<()> {
    let items = load_items(&a.items)?;
    let (run, provider) = if let Some(path) = &a.index {
        let idx = NGramIndex::load(path)?;
        let order = a.order.unwrap_or(idx.max_order());
        let scorer = OracleScorer::new(&a.name, Arc::new(idx), order)?;
        (score_items(&scorer, &items, exec), None)
    } else if let Some(model) = &a.model {
        let Some(cmd) = &cli.provider_cmd else { bail!("--provider-cmd (or {ENV_PROVIDER_CMD}) is required") };
        let model = ModelRef {
            name: model.clone(),
            size: a.size.clone().expect("required by clap"),
            seed: a.model_seed.expect("required by clap"),
            step: a.step,
        };
        let scorer = ProviderScorer::start(cmd, &a.provider_arg, &model)?;
        let run = score_items(&scorer, &items, exec);
        let label = scorer.id().label();
        scorer.shutdown()?;
        (run, Some(label))
    } else {
        bail!("either --index or --model is required");
    };
    write_records(output(cli)?, &run.records)?;
    for f in &run.failures {
        eprintln!("failed {}: {}", f.item_id, f.error);
    }
    eprintln!(
        "{} records, {} failures{}",
        run.records.len(),
        run.failures.len(),
        provider.map(|l| format!(" ({l})")).unwrap_or_default()
    );
    Ok(())
}

fn ci_params(cli: &Cli, resamples: usize, alpha: f64, pool_seeds: bool) -> CiParams {
    let defaults = CiParams::default();
    CiParams {
        resamples,
        alpha,
        seed: cli.seed.unwrap_or(defaults.seed),
        pooling: if pool_seeds { CiPooling::Seeds } else { CiPooling::Items },
    }
}

fn analyze(cli: &Cli, a: &AnalyzeArgs, exec: Exec) -> Result<()> {
    let items = load_items(&a.items)?;
    let records = load_records(&a.records)?;
    let dims = Dimension::parse_list(&a.dims)?;
    let ci = ci_params(cli, a.resamples, a.alpha, a.pool_seeds);
    let cells = disaggregate(&records, &items, &dims, aggregation(cli), &ci, exec)?;
    let method = MethodInfo::new(aggregation(cli), &ci, &ChangepointParams::default());
    write_accuracy_csv(output(cli)?, &dims, &cells, &method)?;
    Ok(())
}

fn parse_heuristic(s: &str) -> Result<Heuristic> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "unigram" | "1" => Heuristic::Unigram,
        "bigram" | "2" => Heuristic::Bigram,
        "trigram" | "3" => Heuristic::Trigram,
        "longer" | "longer_context" | "longercontext" => Heuristic::LongerContext,
        "grammar" | "gold" => Heuristic::Grammar,
        other => bail!("unknown heuristic {other:?}"),
    })
}

fn phases(cli: &Cli, a: &PhasesArgs) -> Result<()> {
    let _items = load_items(&a.items)?;
    let records = load_records(&a.records)?;
    let mut refs: Vec<(Heuristic, Vec<ScoreRecord>)> = Vec::new();
    for spec in &a.oracles {
        let Some((label, path)) = spec.split_once('=') else { bail!("--oracle expects LABEL=PATH, got {spec:?}") };
        refs.push((parse_heuristic(label)?, load_records(&[PathBuf::from(path)])?));
    }
    let lists: Vec<(Heuristic, &[ScoreRecord])> = refs.iter().map(|(h, r)| (*h, r.as_slice())).collect();
    let alignment = alignment_series(&records, &lists, aggregation(cli))?;
    let params = ChangepointParams {
        min_segment: a.min_segment,
        penalty: a.penalty.map_or(Penalty::Bic, Penalty::Fixed),
    };
    let signal: Vec<_> = alignment.values().cloned().collect();
    let breakpoints = match detect_changepoints_joint(&signal, &params) {
        Err(AnalysisError::SeriesTooShort { len, needed }) => {
            eprintln!("{len} steps; change points need {needed}");
            Vec::new()
        }
        other => other?,
    };
    let segments = label_phases(&alignment, &breakpoints)?;
    let method = MethodInfo::new(aggregation(cli), &ci_params(cli, 1000, 0.05, false), &params);
    let alignment_values: BTreeMap<Heuristic, Vec<f64>> = alignment
        .iter()
        .map(|(h, s)| (*h, (0..s.len()).map(|i| s.accuracy(i)).collect()))
        .collect();
    let doc = serde_json::json!({
        "method": method,
        "breakpoints": breakpoints,
        "segments": segments,
        "alignment": alignment_values,
    });
    let mut w = output(cli)?;
    serde_json::to_writer_pretty(&mut w, &doc)?;
    writeln!(w)?;
    Ok(())
}

fn report(cli: &Cli, a: &ReportArgs, exec: Exec) -> Result<()> {
    let items = load_items(&a.items)?;
    let records = load_records(&a.records)?;
    let ci = ci_params(cli, 1000, 0.05, false);
    let series = build_trajectory(&records, &items, &[], aggregation(cli), &ci, exec)?;
    let aggregate = aggregate_trajectory(&series)?.into_iter().next().context("no aggregate series")?;
    let opts = PlotOptions { log_x: !a.linear, title: a.title.clone(), ..PlotOptions::default() };
    let svg = emit_plot(&series, &aggregate, &opts)?;
    output(cli)?.write_all(svg.as_bytes())?;
    Ok(())
}

fn fixtures(cli: &Cli) -> Result<()> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("fixtures"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, body) in [("pile_verb_counts.csv", PILE_FIXTURE_CSV), ("templates.toml", BUNDLED_TEMPLATES)] {
        let path = dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn run(cli: &Cli, exec: Exec) -> Result<ExitCode> {
    let Some(path) = &cli.config else {
        eprintln!("error: run needs --config <file>");
        return Ok(ExitCode::from(EXIT_CONFIG));
    };
    let mut cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    // clap already folded the environment into these flags
    cfg.apply_overrides(cli.out.clone(), cli.provider_cmd.clone());
    if let Some(agg) = cli.aggregation {
        cfg.scoring.aggregation = agg;
    }
    if let Some(seed) = cli.seed {
        cfg.analysis.ci.seed = seed;
    }
    if cli.jobs > 0 {
        cfg.scoring.jobs = cli.jobs;
    }
    let manifest = match run_pipeline(&cfg, exec) {
        Ok(m) => m,
        Err(sva_core::pipeline::PipelineError::Config(e)) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
        Err(e) => return Err(e.into()),
    };
    for stage in &manifest.stages {
        let status = serde_json::to_value(stage.status)?;
        eprintln!(
            "{:<8} {:<8} {} artifacts{}",
            stage.name,
            status.as_str().unwrap_or("?"),
            stage.artifacts.len(),
            stage.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default()
        );
    }
    println!("{}", cfg.output_dir.join(sva_core::pipeline::MANIFEST_FILE).display());
    Ok(ExitCode::from(manifest.exit_code() as u8))
}
