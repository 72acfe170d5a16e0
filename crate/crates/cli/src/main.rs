use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use vulnprompt_core::corpus::{load_corpus, split, synthetic::synthetic_corpus, undersample};
use vulnprompt_core::evalharness::{
    build_index, emit_report, load_run, prepare, run_pipeline, write_prompt_dump, ReportFormat,
    RunConfig,
};
use vulnprompt_core::llmclient::UnparseablePolicy;
use vulnprompt_core::modelplug::{train_builtin, BuiltinHyperparams};
use vulnprompt_core::simindex::{read_index, write_index};
use vulnprompt_core::staticscan::{
    findings_to_jsonl, map_to_taxonomy, parse_cppcheck_with, parse_flawfinder, top_k, ScanMapping,
};
use vulnprompt_core::taxonomy::{default_library, load_library, CotLibrary};
use vulnprompt_core::{Corpus, LshParams};

#[derive(Parser)]
#[command(name = "vulnprompt", version, about = "Prompt synthesis and evaluation for LLM vulnerability detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSON-Lines corpus (or generate one), undersample and split it.
    Ingest(IngestArgs),
    /// Build a MinHash/LSH index over a corpus and write it to a binary file.
    Index(IndexArgs),
    /// Train the builtin detection model on a corpus.
    TrainModel(TrainArgs),
    /// Convert Flawfinder CSV and Cppcheck XML reports into canonical findings.
    ScanImport(ScanArgs),
    /// Reasoning-chain library commands.
    Taxonomy {
        #[command(subcommand)]
        command: TaxonomyCommand,
    },
    /// Prompt inspection commands.
    Prompt {
        #[command(subcommand)]
        command: PromptCommand,
    },
    /// Run the detection pipeline described by a config file.
    Run(RunArgs),
    /// Tabulate metrics for one or more run directories.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// JSON-Lines corpus to validate.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    /// Generate a synthetic corpus of this many functions instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Benign records kept per vulnerable record.
    #[arg(long)]
    undersample: Option<f64>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes corpus.jsonl, train.jsonl and test.jsonl here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = LshParams::default().shingle)]
    shingle: usize,
    #[arg(long, default_value_t = LshParams::default().bands)]
    bands: usize,
    #[arg(long, default_value_t = LshParams::default().rows)]
    rows: usize,
    #[arg(long, default_value_t = LshParams::default().seed)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = BuiltinHyperparams::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = BuiltinHyperparams::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = BuiltinHyperparams::default().l2)]
    l2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    flawfinder: Vec<PathBuf>,
    #[arg(long)]
    cppcheck: Vec<PathBuf>,
    /// Rule and CWE mapping table (TOML); the bundled table by default.
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Reasoning-chain library used for the category summary.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Findings output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of ranked categories in the summary on stderr.
    #[arg(long, default_value_t = 2)]
    top_k: usize,
}

#[derive(Subcommand)]
enum TaxonomyCommand {
    /// Validate a library file (the bundled one by default) and its mapping.
    Check {
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PromptCommand {
    /// Write the prompt for every test sample without querying an LLM.
    Dump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Count answers without a Yes/No verdict as positive detections.
    #[arg(long)]
    unparseable_as_positive: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories written by `run`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
    /// Count answers without a Yes/No verdict as positive detections.
    #[arg(long)]
    unparseable_as_positive: bool,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined with ": ", skipping causes whose text a library
/// error already embedded in its own message.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Index(a) => index(a),
        Command::TrainModel(a) => train_model(a),
        Command::ScanImport(a) => scan_import(a),
        Command::Taxonomy {
            command: TaxonomyCommand::Check { library, mapping },
        } => taxonomy_check(library.as_deref(), mapping.as_deref()),
        Command::Prompt {
            command: PromptCommand::Dump { config, out_dir },
        } => prompt_dump(&config, &out_dir),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

fn counts(c: &Corpus) -> serde_json::Value {
    let l = c.label_counts();
    json!({ "records": c.len(), "vulnerable": l.vulnerable, "benign": l.benign })
}

fn ingest(a: IngestArgs) -> Result<()> {
    let corpus = match (&a.input, a.synthetic) {
        (Some(path), _) => load_corpus(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(n)) => synthetic_corpus(n, a.seed, "synthetic"),
        (None, None) => unreachable!("clap requires one source"),
    };
    let balanced = match a.undersample {
        Some(ratio) => undersample(&corpus, ratio, a.seed)?,
        None => corpus.clone(),
    };
    let s = split(&balanced, a.train_fraction, a.seed)?;
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        balanced.write_jsonl(&dir.join("corpus.jsonl"))?;
        s.train.write_jsonl(&dir.join("train.jsonl"))?;
        s.test.write_jsonl(&dir.join("test.jsonl"))?;
    }
    print_json(&json!({
        "loaded": counts(&corpus),
        "balanced": counts(&balanced),
        "train": counts(&s.train),
        "test": counts(&s.test),
        "seed": a.seed,
    }));
    Ok(())
}

fn index(a: IndexArgs) -> Result<()> {
    let params = LshParams {
        shingle: a.shingle,
        signature_len: a.bands * a.rows,
        bands: a.bands,
        rows: a.rows,
        seed: a.seed,
    };
    params.validate()?;
    let corpus = load_corpus(&a.corpus).with_context(|| format!("loading {}", a.corpus.display()))?;
    let idx = build_index(&corpus, params)?;
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    write_index(&idx, &mut w)?;
    w.flush()?;
    // Read back so a bad write never goes unnoticed.
    let check = read_index(BufReader::new(File::open(&a.out)?))?;
    if check.len() != idx.len() {
        bail!("index round trip lost entries");
    }
    print_json(&json!({ "entries": idx.len(), "path": a.out }));
    Ok(())
}

fn train_model(a: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus).with_context(|| format!("loading {}", a.corpus.display()))?;
    let hyper = BuiltinHyperparams {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        l2: a.l2,
        seed: a.seed,
        ..BuiltinHyperparams::default()
    };
    let model = train_builtin(&corpus, &hyper)?;
    model.save(&a.out)?;
    print_json(&json!({
        "model_id": model.model_id,
        "vocabulary": model.vocabulary.len(),
        "train_size": model.manifest.train_size,
        "final_loss": model.manifest.loss_history.last(),
    }));
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn library_from(path: Option<&Path>) -> Result<CotLibrary> {
    Ok(match path {
        Some(p) => load_library(p)?,
        None => default_library(),
    })
}

fn mapping_from(path: Option<&Path>) -> Result<ScanMapping> {
    Ok(match path {
        Some(p) => ScanMapping::load(p)?,
        None => ScanMapping::default_mapping(),
    })
}

fn scan_import(a: ScanArgs) -> Result<()> {
    if a.flawfinder.is_empty() && a.cppcheck.is_empty() {
        bail!("give at least one --flawfinder or --cppcheck report");
    }
    let mapping = mapping_from(a.mapping.as_deref())?;
    let library = library_from(a.library.as_deref())?;
    let mut findings = Vec::new();
    for p in &a.flawfinder {
        findings.extend(parse_flawfinder(&read(p)?).with_context(|| p.display().to_string())?);
    }
    for p in &a.cppcheck {
        findings.extend(
            parse_cppcheck_with(&read(p)?, &mapping.cppcheck_severity)
                .with_context(|| p.display().to_string())?,
        );
    }
    let body = findings_to_jsonl(&findings);
    match &a.out {
        Some(p) => std::fs::write(p, &body).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{body}"),
    }
    let ranked = top_k(&map_to_taxonomy(&findings, &mapping, &library), a.top_k)?;
    eprintln!("{} findings; top categories: {}", findings.len(), ranked.summary());
    Ok(())
}

fn taxonomy_check(library: Option<&Path>, mapping: Option<&Path>) -> Result<()> {
    let lib = library_from(library)?;
    let problems = mapping_from(mapping)?.check_against(&lib);
    for p in &problems {
        eprintln!("{p}");
    }
    if !problems.is_empty() {
        bail!("{} mapping problem(s)", problems.len());
    }
    println!(
        "library {} ok: {} categories, {} subcategories",
        lib.version(),
        lib.majors().count(),
        lib.subcategories().count()
    );
    Ok(())
}

fn prompt_dump(config: &Path, out_dir: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let prepared = prepare(&cfg)?;
    let prompts = prepared.prompts()?;
    write_prompt_dump(&prompts, out_dir)?;
    println!("{} prompts written to {}", prompts.len(), out_dir.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if a.out_dir.is_some() {
        cfg.output_dir = a.out_dir;
    }
    if a.unparseable_as_positive {
        cfg.unparseable = UnparseablePolicy::AsPositive;
    }
    let Some(dir) = cfg.output_dir.clone() else {
        bail!("no output directory: set output_dir in the config or pass --out-dir");
    };
    let outcome = run_pipeline(&cfg)?;
    outcome.write(&dir)?;
    let m = &outcome.metrics;
    println!(
        "{} samples, precision {:.3} recall {:.3} f1 {:.3} fpr {:.3} mcc {:.3}, unparseable {}",
        outcome.results.len(),
        m.precision,
        m.recall,
        m.f1,
        m.fpr,
        m.mcc,
        m.unparseable
    );
    println!("results in {}", dir.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let policy = if a.unparseable_as_positive {
        UnparseablePolicy::AsPositive
    } else {
        UnparseablePolicy::AsNegative
    };
    let format = match a.format {
        Format::Markdown => ReportFormat::Markdown,
        Format::Csv => ReportFormat::Csv,
    };
    let mut rows = Vec::new();
    for dir in &a.runs {
        rows.extend(load_run(dir, policy)?);
    }
    print!("{}", emit_report(&rows, format));
    Ok(())
}
