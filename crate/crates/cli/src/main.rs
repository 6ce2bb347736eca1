use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparqlcopy::copynet::{DatasetKind, ModelKind};
use sparqlcopy::corpus::{PromptMode, Scheme};
use sparqlcopy::endpoint::ENDPOINT_ENV;

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "sparqlcopy", version, about = "Question-to-SPARQL translation with a masked-KB copy mechanism")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct EndpointArgs {
    /// SPARQL endpoint URL, or `fixture:<turtle file>`.
    #[arg(long, env = ENDPOINT_ENV)]
    pub endpoint: String,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 4)]
    pub max_parallel: usize,
    /// On-disk answer cache (JSONL).
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic template corpus, its labels and fixture graph.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        train_per_template: usize,
        #[arg(long, default_value_t = 5)]
        validation_per_template: usize,
        #[arg(long, default_value_t = 10)]
        test_per_template: usize,
    },
    /// Attach gold answers by running every gold query.
    Enrich {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Annotate questions with one of the three schemes.
    Annotate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        scheme: Scheme,
        #[arg(long)]
        out: PathBuf,
        /// Global templates (JSON or JSONL); recovered from the data if absent.
        #[arg(long)]
        templates: Option<PathBuf>,
        /// KB element labels (JSON object).
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Seed for the tag-end element order.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip entries that fail instead of aborting.
        #[arg(long)]
        lenient: bool,
    },
    /// Build the W/S/K vocabularies from annotated training data.
    Vocab {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        scheme: Scheme,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per seed, keeping the best validation checkpoint.
    Train(TrainArgs),
    /// Greedy-decode queries for annotated questions.
    Generate {
        /// A seed directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        max_len: usize,
    },
    /// Score predictions on the non-empty subset of enriched entries.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Enriched test entries.
        #[arg(long)]
        entries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-entry scores (JSONL).
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Align predictions with references and tally errors by token type.
    Analyze {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        entries: PathBuf,
        /// Extra entry files whose gold queries define the KB elements.
        #[arg(long = "kb-from")]
        kb_from: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge run reports and an error matrix into Markdown and CSV tables.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export fine-tuning prompts for tag-end questions.
    Prompt {
        #[arg(long)]
        entries: PathBuf,
        /// Annotated examples for the same entries.
        #[arg(long)]
        annotated: PathBuf,
        #[arg(long, value_enum, default_value = "instruction")]
        mode: PromptModeArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum PromptModeArg {
    Standard,
    Instruction,
}

impl From<PromptModeArg> for PromptMode {
    fn from(m: PromptModeArg) -> Self {
        match m {
            PromptModeArg::Standard => PromptMode::Standard,
            PromptModeArg::Instruction => PromptMode::Instruction,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// TOML file mirroring the pipeline configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset: lcq1, lcq2, dbnqa or synthetic.
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Disable the copy layer.
    #[arg(long)]
    pub no_copy: bool,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub grad_accum: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stop after this many epochs in this invocation; a rerun resumes.
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            out,
            seed,
            train_per_template,
            validation_per_template,
            test_per_template,
        } => commands::synth(
            &out,
            sparqlcopy::corpus::synthetic::SyntheticConfig {
                train_per_template,
                validation_per_template,
                test_per_template,
                seed,
            },
        ),
        Command::Enrich { input, out, endpoint } => commands::enrich(&input, &out, &endpoint),
        Command::Annotate {
            input,
            scheme,
            out,
            templates,
            labels,
            seed,
            lenient,
        } => commands::annotate(&input, scheme, &out, templates.as_deref(), labels.as_deref(), seed, lenient),
        Command::Vocab {
            train,
            validation,
            test,
            scheme,
            out,
        } => commands::vocab(&train, validation.as_deref(), test.as_deref(), scheme, &out),
        Command::Train(args) => commands::train(args),
        Command::Generate {
            model,
            input,
            out,
            max_len,
        } => commands::generate(&model, &input, &out, max_len),
        Command::Evaluate {
            predictions,
            entries,
            out,
            scores,
            seed,
            endpoint,
        } => commands::evaluate(&predictions, &entries, &out, scores.as_deref(), seed, &endpoint),
        Command::Analyze {
            predictions,
            entries,
            kb_from,
            out,
        } => commands::analyze(&predictions, &entries, &kb_from, &out),
        Command::Report {
            reports,
            matrix,
            label,
            out,
        } => commands::report(&reports, matrix.as_deref(), &label, &out),
        Command::Prompt {
            entries,
            annotated,
            mode,
            out,
        } => commands::prompt(&entries, &annotated, mode.into(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
