use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mlpipe::corpus::{
    ingest_classification, ingest_ner, ingest_qa, sanitize_qa, split, write_classification, write_jsonl, write_ner,
    write_qa, SplitSpec,
};
use mlpipe::eval::{MatchMode, Task};
use mlpipe::pipeline::{
    self, evaluate_predictions, export_finetune, render_metrics, render_run, BackendKind, EvaluateOptions, MockKind,
    Mode, Overrides, PipelineConfig, RetrievalStrategy,
};
use mlpipe::prompt::{ApproxTokenCounter, PromptTemplate};
use mlpipe::{Error, Result};

/// Classification, marker-based NER and extractive QA over materials text.
#[derive(Parser)]
#[command(name = "mlpipe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and print a summary.
    Ingest {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        input: PathBuf,
        /// Allowed classification labels, comma separated.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
    },
    /// Split a QA corpus into clean and flagged records.
    SanitizeQa {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Seeded train/val/test split.
    Split {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
        ratios: Vec<f64>,
    },
    /// Build and log every prompt of a run without requesting completions.
    BuildPrompts(RunArgs),
    /// Compile a corpus into fine-tune JSONL.
    ExportFinetune {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Entity category (NER only).
        #[arg(long)]
        category: Option<String>,
        /// Take the prompt template from this run config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "davinci")]
        base_model: String,
    },
    /// Run text classification.
    Classify(RunArgs),
    /// Run named entity recognition.
    Ner(RunArgs),
    /// Run extractive question answering.
    Qa(RunArgs),
    /// Score a predictions file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "battery")]
        positive_label: String,
        #[arg(long, default_value_t = mlpipe::eval::DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = mlpipe::eval::DEFAULT_F1_THRESHOLD)]
        f1_threshold: f64,
        #[arg(long, default_value = "exact")]
        match_mode: MatchMode,
    },
    /// Print the tables of a finished run.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    mock: Option<MockKind>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    retrieval: Option<RetrievalStrategy>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    task_informed: Option<bool>,
    #[arg(long)]
    scheme: Option<String>,
}

impl RunArgs {
    fn load(&self, task: Option<Task>) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(t) = task {
            if cfg.task != t {
                return Err(Error::Config(format!(
                    "{} is a {:?} config, this command runs {t:?}",
                    self.config.display(),
                    cfg.task
                )));
            }
        }
        cfg.apply(&Overrides {
            seed: self.seed,
            corpus: self.corpus.clone(),
            output_dir: self.output_dir.clone(),
            backend: self.backend,
            base_url: self.base_url.clone(),
            mock: self.mock,
            mode: self.mode,
            retrieval: self.retrieval,
            shots: self.shots,
            task_informed: self.task_informed,
            scheme: self.scheme.clone(),
        });
        Ok(cfg)
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends the process quietly.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
    }
}

fn print_json(v: &serde_json::Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("json")));
}

fn counts<'a>(keys: impl Iterator<Item = &'a str>) -> BTreeMap<&'a str, usize> {
    let mut m = BTreeMap::new();
    for k in keys {
        *m.entry(k).or_default() += 1;
    }
    m
}

fn ingest(task: Task, input: &Path, labels: Option<&[String]>) -> Result<serde_json::Value> {
    Ok(match task {
        Task::Classification => {
            let docs = ingest_classification(input, labels)?;
            json!({"task": "classification", "records": docs.len(), "labels": counts(docs.iter().map(|d| d.label.as_str()))})
        }
        Task::Ner => {
            let docs = ingest_ner(input)?;
            let spans = counts(docs.iter().flat_map(|d| d.spans.iter().map(|s| s.category.as_str())));
            json!({"task": "ner", "records": docs.len(), "spans": spans})
        }
        Task::Qa => {
            let recs = ingest_qa(input)?;
            let unanswerable = recs.iter().filter(|r| r.gold_answer.trim().is_empty()).count();
            json!({"task": "qa", "records": recs.len(), "unanswerable": unanswerable})
        }
    })
}

fn split_corpus(task: Task, input: &Path, out: &Path, seed: u64, ratios: &[f64]) -> Result<serde_json::Value> {
    let ratios: [f64; 3] = ratios
        .try_into()
        .map_err(|_| Error::Config(format!("--ratios needs three values, got {}", ratios.len())))?;
    let spec = SplitSpec::new(seed, ratios).map_err(|e| Error::Config(e.to_string()))?;
    let file = |name: &str| out.join(format!("{name}.jsonl"));
    let sizes = match task {
        Task::Classification => {
            let s = split(&ingest_classification(input, None)?, &spec)?;
            for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
                write_classification(&file(name), part)?;
            }
            [s.train.len(), s.val.len(), s.test.len()]
        }
        Task::Ner => {
            let s = split(&ingest_ner(input)?, &spec)?;
            for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
                write_ner(&file(name), part)?;
            }
            [s.train.len(), s.val.len(), s.test.len()]
        }
        Task::Qa => {
            let s = split(&ingest_qa(input)?, &spec)?;
            for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
                write_qa(&file(name), part)?;
            }
            [s.train.len(), s.val.len(), s.test.len()]
        }
    };
    Ok(json!({"seed": seed, "train": sizes[0], "val": sizes[1], "test": sizes[2]}))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { task, input, labels } => print_json(&ingest(task, &input, labels.as_deref())?),
        Command::SanitizeQa { input, output_dir } => {
            let s = sanitize_qa(&ingest_qa(&input)?);
            write_qa(&output_dir.join("clean.jsonl"), &s.clean)?;
            write_jsonl(&output_dir.join("flagged.jsonl"), &s.flagged)?;
            let reasons = counts(s.flagged.iter().map(|f| match f.reason {
                mlpipe::corpus::FlagReason::Duplicate => "duplicate",
                mlpipe::corpus::FlagReason::AnswerNotInContext => "answer-not-in-context",
            }));
            print_json(&json!({"clean": s.clean.len(), "flagged": s.flagged.len(), "reasons": reasons}));
        }
        Command::Split {
            task,
            input,
            output_dir,
            seed,
            ratios,
        } => print_json(&split_corpus(task, &input, &output_dir, seed, &ratios)?),
        Command::BuildPrompts(args) => {
            let out = pipeline::build_prompts(&args.load(None)?)?;
            print_json(&serde_json::to_value(&out.manifest)?);
        }
        Command::ExportFinetune {
            task,
            input,
            output,
            category,
            config,
            base_model,
        } => {
            let template = match config {
                Some(p) => PipelineConfig::load(&p)?.template,
                None => PromptTemplate::default(),
            };
            let out = export_finetune(
                task,
                &input,
                &output,
                &template,
                &ApproxTokenCounter,
                category.as_deref(),
                &base_model,
            )?;
            print_json(&serde_json::to_value(&out)?);
        }
        Command::Classify(args) => run(args, Task::Classification)?,
        Command::Ner(args) => run(args, Task::Ner)?,
        Command::Qa(args) => run(args, Task::Qa)?,
        Command::Evaluate {
            predictions,
            positive_label,
            bins,
            f1_threshold,
            match_mode,
        } => {
            let opts = EvaluateOptions {
                positive_label,
                bins,
                f1_threshold,
                match_mode,
            };
            emit(&render_metrics(&evaluate_predictions(&predictions, &opts)?));
        }
        Command::Report { run_dir } => emit(&render_run(&run_dir)?),
    }
    Ok(())
}

fn run(args: RunArgs, task: Task) -> Result<()> {
    let cfg = args.load(Some(task))?;
    let out = pipeline::run(&cfg)?;
    if let Some(m) = &out.metrics {
        emit(&render_metrics(m));
    }
    if !out.failures.is_empty() {
        log::warn!("{} record(s) failed; see failures.jsonl", out.failures.len());
    }
    emit(&format!("outputs written to {}\n", cfg.paths.output_dir.display()));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                json!({"error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code()})
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
