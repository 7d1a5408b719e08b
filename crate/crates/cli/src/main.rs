use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use gelminer::evalgen::{write_corpus, SyntheticSpec};
use gelminer::panels::PanelConfig;
use gelminer::pipeline::{run_eval, run_extract, run_train, OcrSelection, PipelineConfig, PipelineError, StageConfig, TrainConfig};

/// Mines gel panels and their gene labels from figure images.
#[derive(Parser, Debug)]
#[command(name = "gelminer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full pipeline over a directory of figures, writing JSON lines.
    Extract(ExtractArgs),
    /// Train the gel classifier on an annotated corpus.
    Train(TrainArgs),
    /// Score extract output against ground truth at the panel level.
    Eval(EvalArgs),
    /// Write a synthetic annotated corpus.
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
struct OcrArgs {
    /// External OCR command; reads a PNG on stdin and prints text. Sidecar files are used when absent.
    #[arg(long)]
    ocr_command: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    ocr_timeout_ms: u64,
}

impl OcrArgs {
    fn stages(&self) -> StageConfig {
        let ocr = match &self.ocr_command {
            Some(command) => OcrSelection::External {
                command: command.clone(),
                timeout_ms: self.ocr_timeout_ms,
            },
            None => OcrSelection::Sidecar,
        };
        StageConfig {
            ocr,
            ..StageConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Corpus directory.
    #[arg(long)]
    input: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    /// Gene lexicon (TSV); the bundled demo lexicon when omitted.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Common-word list, one word per line; repeatable.
    #[arg(long = "stoplist")]
    stoplists: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.60)]
    threshold_hp: f64,
    #[arg(long, default_value_t = 0.15)]
    threshold_hr: f64,
    #[arg(long, default_value_t = 50)]
    neighbor_gap: u32,
    #[arg(long, default_value_t = 30)]
    label_near: u32,
    #[arg(long, default_value_t = 150)]
    label_far: u32,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest tolerated share of figures that fail; above it the exit code is 2.
    #[arg(long, default_value_t = 0.1)]
    max_failure_fraction: f64,
    /// Leave per-figure timings out so output is byte-reproducible.
    #[arg(long)]
    no_timings: bool,
    #[command(flatten)]
    ocr: OcrArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Annotated corpus directory.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the trained model.
    #[arg(long)]
    model: PathBuf,
    /// Evaluation report (JSON); standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    test_fraction: f64,
    #[arg(long, default_value_t = gelminer::forest::DEFAULT_TREE_COUNT)]
    trees: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    ocr: OcrArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Extract output (JSON lines).
    #[arg(long)]
    input: PathBuf,
    /// Directory holding `*.gt.json` files.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Threshold the predictions were made at; recorded in the report.
    #[arg(long, default_value_t = 0.60)]
    threshold_hp: f64,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Directory to write into.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0.3)]
    gel_fraction: f64,
    /// Every k-th figure tests the panel rule boundaries; 0 disables them.
    #[arg(long, default_value_t = 10)]
    boundary_every: usize,
    /// Make every figure a 2x4 gel grid with left and top labels.
    #[arg(long)]
    grid_replica: bool,
}

enum Outcome {
    Done,
    TooManyFailures,
}

fn write_output(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> anyhow::Result<()> {
    write_output(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

fn extract(a: ExtractArgs) -> anyhow::Result<Outcome> {
    if !(0.0..=1.0).contains(&a.max_failure_fraction) {
        return Err(PipelineError::Config("max failure fraction must lie in [0, 1]".into()).into());
    }
    let cfg = PipelineConfig {
        input_dir: a.input,
        model_path: a.model,
        lexicon_path: a.lexicon,
        stoplist_paths: a.stoplists,
        stages: a.ocr.stages(),
        panel: PanelConfig {
            neighbor_max_gap: a.neighbor_gap,
            label_near_max: a.label_near,
            label_far_max: a.label_far,
            high_precision_threshold: a.threshold_hp,
            high_recall_threshold: a.threshold_hr,
        },
        workers: a.workers,
        seed: a.seed,
        record_timings: !a.no_timings,
    };
    let out = run_extract(&cfg)?;
    write_output(a.output.as_deref(), |w| out.write_jsonl(w))?;
    let s = &out.summary;
    info!("{} of {} figures processed, {} panels, {} labels", s.processed_figures, s.total_figures, s.panels, s.labels);
    let failed = s.failed_figures() as f64;
    if s.total_figures > 0 && failed / s.total_figures as f64 > a.max_failure_fraction {
        return Ok(Outcome::TooManyFailures);
    }
    Ok(Outcome::Done)
}

fn train(a: TrainArgs) -> anyhow::Result<Outcome> {
    let cfg = TrainConfig {
        input_dir: a.input,
        model_out: a.model,
        seed: a.seed,
        test_fraction: a.test_fraction,
        tree_count: a.trees,
        stages: a.ocr.stages(),
        workers: a.workers,
    };
    let (_, report) = run_train(&cfg)?;
    info!("model written to {}", cfg.model_out.display());
    write_json(a.output.as_deref(), &report)?;
    Ok(Outcome::Done)
}

fn eval(a: EvalArgs) -> anyhow::Result<Outcome> {
    if !a.truth.is_dir() {
        return Err(PipelineError::Config(format!("truth directory {} not found", a.truth.display())).into());
    }
    let report = run_eval(&a.input, &a.truth, a.threshold_hp)?;
    write_json(a.output.as_deref(), &report)?;
    Ok(Outcome::Done)
}

fn generate(a: GenerateArgs) -> anyhow::Result<Outcome> {
    let spec = if a.grid_replica {
        SyntheticSpec {
            figure_count: a.count,
            ..SyntheticSpec::grid_replica(a.seed)
        }
    } else {
        SyntheticSpec {
            seed: a.seed,
            figure_count: a.count,
            gel_fraction: a.gel_fraction,
            boundary_every: a.boundary_every,
            ..SyntheticSpec::default()
        }
    };
    spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let truths = write_corpus(&a.output, &spec)?;
    info!("wrote {} figures to {}", truths.len(), a.output.display());
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::TooManyFailures) => {
            eprintln!("error: failed figures exceed the tolerated fraction");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
