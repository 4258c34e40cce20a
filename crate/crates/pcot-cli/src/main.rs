//! `pcot` — command-line surface for the persuasion-augmented
//! disinformation-detection pipeline.
//!
//! Exit codes: 0 success, 1 validation failure (balance check failed,
//! budget halt), 2 configuration error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pcot::corpus::{self, CutoffClass, Document, Genre, SourceDataset};
use pcot::metrics::DistributionBy;
use pcot::parser::{ParseGrade, PersuasionAnalysis, Presence};
use pcot::prompt::render_all_for_document;
use pcot::report::{
    build_distribution_csv, build_main_table, build_main_table_external, build_subset_table,
    render_contingency_csv, render_main_csv, render_main_markdown, render_subset_csv,
    render_subset_markdown, ComparePair, ExternalScores, Grouping, ReportFormat, ReportSpec,
};
use pcot::runner::{self, RunPlan, RunnerError};
use pcot::taxonomy::StrategyId;
use pcot::Credibility;

#[derive(Parser)]
#[command(name = "pcot", version, about = "Two-stage persuasion-augmented disinformation detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest an upstream dataset CSV into the unified JSONL corpus format.
    Ingest {
        /// Source dataset: coaid | isot | ectf | multidis | eudisinfo
        #[arg(long)]
        source: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a seeded uniform sample from a JSONL corpus.
    Sample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check the disinformation share of a corpus against an expected value.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        expect_share: f64,
        #[arg(long, default_value_t = 0.03)]
        tolerance: f64,
    },
    /// Validate a plan file and print its shape and warnings.
    Plan {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Exact call counts for a plan, gross and net of the existing cache.
    DryRun {
        #[arg(long)]
        plan: PathBuf,
        /// Treat every model as the mock provider.
        #[arg(long)]
        mock: bool,
    },
    /// Execute a plan. Resumes automatically from an existing store.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Treat every model as the mock provider.
        #[arg(long)]
        mock: bool,
    },
    /// Build report tables from a results store or published score tables.
    Report(ReportArgs),
    /// Render every prompt variant for one document into a directory.
    DumpPrompts {
        /// JSONL corpus holding the document.
        #[arg(long = "in", required_unless_present = "text")]
        input: Option<PathBuf>,
        /// Document id within the corpus.
        #[arg(long, requires = "input")]
        id: Option<String>,
        /// Alternatively, a plain-text file used as the document body.
        #[arg(long, conflicts_with = "input")]
        text: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// Results store (JSONL of evaluation records).
    #[arg(long, required_unless_present = "external")]
    store: Option<PathBuf>,
    /// Published score table (JSON) instead of a store.
    #[arg(long, conflicts_with = "store")]
    external: Option<PathBuf>,
    /// Comparison pairs, repeatable: base-variant:pcot-variant
    #[arg(long = "compare")]
    compare: Vec<String>,
    /// Comma-separated groupings (overall,articles,posts,prior,post).
    #[arg(long)]
    groupings: Option<String>,
    /// Significance level for McNemar marks: 0.05 or 0.01.
    #[arg(long, default_value_t = 0.01)]
    level: f64,
    /// Output format: md | csv
    #[arg(long, default_value = "md")]
    format: String,
    /// Directory to write the tables into (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also build the persuasion/no-persuasion subset table.
    #[arg(long)]
    subset: bool,
    /// Also build the strategy-distribution matrix.
    #[arg(long)]
    distribution: bool,
    /// Also export the paired contingency tables as CSV.
    #[arg(long)]
    contingency: bool,
    /// Class axis for the distribution matrix: gold | predicted
    #[arg(long, default_value = "gold")]
    by: String,
    /// Include per-model standard deviations over methods.
    #[arg(long)]
    extended: bool,
}

enum CliError {
    /// Exit 1: the requested check failed or the run halted early.
    Validation(String),
    /// Exit 2: the invocation or its inputs are unusable.
    Config(String),
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(message)) => {
            eprintln!("validation failure: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Config(message)) => {
            eprintln!("configuration error: {message}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { source, input, out } => ingest(&source, &input, &out),
        Command::Sample { input, out, n, seed } => sample(&input, &out, n, seed),
        Command::Validate { input, expect_share, tolerance } => {
            validate(&input, expect_share, tolerance)
        }
        Command::Plan { plan } => show_plan(&plan),
        Command::DryRun { plan, mock } => dry_run(&plan, mock),
        Command::Run { plan, mock } => run(&plan, mock),
        Command::Report(args) => report(args),
        Command::DumpPrompts { input, id, text, out } => dump_prompts(input, id, text, &out),
    }
}

fn load_plan(path: &Path, mock: bool) -> Result<RunPlan, CliError> {
    let mut plan = RunPlan::from_toml_file(path).map_err(CliError::config)?;
    if mock {
        plan.force_mock();
    }
    Ok(plan)
}

fn ingest(source: &str, input: &Path, out: &Path) -> Result<(), CliError> {
    let dataset: SourceDataset = source.parse().map_err(CliError::config)?;
    let (docs, report) = corpus::load_dataset(input, dataset).map_err(CliError::config)?;
    corpus::write_jsonl(&docs, out).map_err(CliError::config)?;
    println!(
        "ingested {} of {} rows from {} into {}",
        report.ingested,
        report.total_rows,
        input.display(),
        out.display()
    );
    if report.dropped_hard_to_say + report.dropped_off_topic > 0 {
        println!(
            "dropped: {} hard-to-say, {} inconsistent-with-topic",
            report.dropped_hard_to_say, report.dropped_off_topic
        );
    }
    for err in &report.row_errors {
        eprintln!("row {}: {}", err.row, err.message);
    }
    Ok(())
}

fn sample(input: &Path, out: &Path, n: usize, seed: u64) -> Result<(), CliError> {
    let docs = corpus::read_jsonl(input).map_err(CliError::config)?;
    let sampled = corpus::sample_test_set(&docs, n, seed).map_err(CliError::config)?;
    corpus::write_jsonl(&sampled, out).map_err(CliError::config)?;
    let manifest = corpus::CorpusManifest::from_documents(&sampled, Some(seed), Some(n));
    println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest json"));
    Ok(())
}

fn validate(input: &Path, expect_share: f64, tolerance: f64) -> Result<(), CliError> {
    let docs = corpus::read_jsonl(input).map_err(CliError::config)?;
    let report =
        corpus::validate_balance(&docs, expect_share, tolerance).map_err(CliError::config)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report json"));
    if report.passes {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "observed disinformation share {:.3} outside {expect_share} ± {tolerance}",
            report.observed_share
        )))
    }
}

fn show_plan(path: &Path) -> Result<(), CliError> {
    let plan = load_plan(path, false)?;
    let warnings = plan.validate().map_err(CliError::config)?;
    println!(
        "models:   {}",
        plan.models.iter().map(|m| m.model_id.as_str()).collect::<Vec<_>>().join(", ")
    );
    println!(
        "variants: {}",
        plan.variants.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
    );
    for c in &plan.corpora {
        let sample = c.sample_n.map(|n| format!(" (sample {n})")).unwrap_or_default();
        println!("corpus:   {} from {}{sample}", c.dataset, c.path.display());
    }
    println!("output:   {}", plan.output_dir.display());
    println!("fingerprint: {}", plan.matrix_fingerprint());
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn dry_run(path: &Path, mock: bool) -> Result<(), CliError> {
    let plan = load_plan(path, mock)?;
    let gateway = runner::build_gateway(&plan).map_err(CliError::config)?;
    let estimate = runner::dry_run(&plan, &gateway).map_err(CliError::config)?;
    println!("{}", serde_json::to_string_pretty(&estimate).expect("estimate json"));
    Ok(())
}

fn run(path: &Path, mock: bool) -> Result<(), CliError> {
    let plan = load_plan(path, mock)?;
    let gateway = runner::build_gateway(&plan).map_err(CliError::config)?;
    match runner::execute(&plan, &gateway) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("store: {}", outcome.store_path.display());
            println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("summary json"));
            println!(
                "failed stage-2 parse fraction: {:.4}",
                outcome.summary.failed_parse_fraction()
            );
            Ok(())
        }
        Err(RunnerError::BudgetExceeded { store_path, written }) => Err(CliError::Validation(
            format!(
                "budget exhausted after {written} new record(s); state saved to {}; raise the budget and re-run to resume",
                store_path.display()
            ),
        )),
        Err(other) => Err(CliError::config(other)),
    }
}

fn parse_format(format: &str) -> Result<ReportFormat, CliError> {
    match format.to_ascii_lowercase().as_str() {
        "md" | "markdown" => Ok(ReportFormat::Markdown),
        "csv" => Ok(ReportFormat::Csv),
        other => Err(CliError::Config(format!("unknown format {other:?} (expected md or csv)"))),
    }
}

fn emit(out_dir: &Option<PathBuf>, name: &str, content: &str) -> Result<(), CliError> {
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(CliError::config)?;
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(CliError::config)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let format = parse_format(&args.format)?;

    if let Some(external_path) = &args.external {
        let scores = ExternalScores::from_file(external_path).map_err(CliError::config)?;
        let table = build_main_table_external(&scores).map_err(CliError::config)?;
        let (name, content) = match format {
            ReportFormat::Markdown => ("main.md", render_main_markdown(&table)),
            ReportFormat::Csv => ("main.csv", render_main_csv(&table)),
        };
        return emit(&args.out, name, &content);
    }

    let store = args.store.as_ref().expect("clap enforces store or external");
    let records = pcot::store::read_records(store).map_err(CliError::config)?;
    let compare = args
        .compare
        .iter()
        .map(|s| s.parse::<ComparePair>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::config)?;
    let groupings = match &args.groupings {
        Some(raw) => raw
            .split(',')
            .map(|g| g.parse::<Grouping>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::config)?,
        None => Grouping::ALL.to_vec(),
    };
    let spec = ReportSpec {
        groupings,
        compare,
        significance_level: args.level,
        formats: vec![format],
        extended: args.extended,
    };

    if !spec.compare.is_empty() {
        let table = build_main_table(&records, &spec).map_err(CliError::config)?;
        let (name, content) = match format {
            ReportFormat::Markdown => ("main.md", render_main_markdown(&table)),
            ReportFormat::Csv => ("main.csv", render_main_csv(&table)),
        };
        emit(&args.out, name, &content)?;
        if args.subset {
            let subset = build_subset_table(&records, &spec.compare).map_err(CliError::config)?;
            let (name, content) = match format {
                ReportFormat::Markdown => ("subset.md", render_subset_markdown(&subset)),
                ReportFormat::Csv => ("subset.csv", render_subset_csv(&subset)),
            };
            emit(&args.out, name, &content)?;
        }
        if args.contingency {
            let csv = render_contingency_csv(&records, &spec).map_err(CliError::config)?;
            emit(&args.out, "contingency.csv", &csv)?;
        }
    } else if !args.distribution {
        return Err(CliError::Config(
            "nothing to report: pass --compare pairs and/or --distribution".into(),
        ));
    }

    if args.distribution {
        let by = match args.by.to_ascii_lowercase().as_str() {
            "gold" => DistributionBy::GoldLabel,
            "predicted" => DistributionBy::PredictedLabel,
            other => {
                return Err(CliError::Config(format!(
                    "unknown distribution axis {other:?} (expected gold or predicted)"
                )))
            }
        };
        let (csv, notes) = build_distribution_csv(&records, by).map_err(CliError::config)?;
        for note in notes {
            eprintln!("note: {note}");
        }
        emit(&args.out, "distribution.csv", &csv)?;
    }
    Ok(())
}

/// The example analysis embedded in dumped PCoT stage-2 prompts.
fn dump_analysis() -> PersuasionAnalysis {
    let labels: BTreeMap<StrategyId, Presence> = StrategyId::ALL
        .iter()
        .map(|&s| {
            (s, if s == StrategyId::ManipulativeWording { Presence::Yes } else { Presence::No })
        })
        .collect();
    let explanations = StrategyId::ALL
        .iter()
        .map(|&s| (s, format!("Example explanation for {} in dumped output.", s.name())))
        .collect();
    PersuasionAnalysis::new(labels, explanations, ParseGrade::Strict).expect("six strategies")
}

fn dump_prompts(
    input: Option<PathBuf>,
    id: Option<String>,
    text: Option<PathBuf>,
    out: &Path,
) -> Result<(), CliError> {
    let doc = match (input, text) {
        (Some(corpus_path), _) => {
            let docs = corpus::read_jsonl(&corpus_path).map_err(CliError::config)?;
            match id {
                Some(id) => docs
                    .into_iter()
                    .find(|d| d.id == id)
                    .ok_or_else(|| CliError::Config(format!("no document with id {id:?}")))?,
                None => docs.into_iter().next().expect("read_jsonl rejects empty corpora"),
            }
        }
        (None, Some(text_path)) => {
            let body = std::fs::read_to_string(&text_path).map_err(CliError::config)?;
            Document {
                id: "adhoc".into(),
                text: body,
                gold_label: Credibility::Credible,
                source_dataset: SourceDataset::MultiDis,
                genre: Genre::Article,
                published_date: None,
                topic: None,
                cutoff_class: CutoffClass::Post,
            }
        }
        (None, None) => unreachable!("clap enforces one input source"),
    };
    let rendered = render_all_for_document(
        &doc,
        &dump_analysis(),
        "Example free-form persuasion analysis for dumped output.",
    )
    .map_err(CliError::config)?;
    std::fs::create_dir_all(out).map_err(CliError::config)?;
    for (name, prompt) in &rendered {
        std::fs::write(out.join(format!("{name}.txt")), &prompt.text).map_err(CliError::config)?;
    }
    println!("wrote {} prompts for document {} to {}", rendered.len(), doc.id, out.display());
    Ok(())
}
