use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use promptaxis::backend::BackendSpec;
use promptaxis::pipeline::ledger::{curves_path, read_curves, read_ledger, TrialRecord};
use promptaxis::pipeline::report::{report, ReportFormat};
use promptaxis::pipeline::{Pipeline, RunConfig};
use promptaxis::translate::{build_translation_prompt, translate_axes, LlmEndpoint, TranslationRequest};
use promptaxis::AxisSet;

#[derive(Parser)]
#[command(name = "promptaxis", version, about = "Axis-structured prompt search for open-vocabulary detectors")]
struct Cli {
    /// Log filter, e.g. `info` or `promptaxis=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One-factor-at-a-time sweep over every axis value.
    Phase1(RunArgs),
    /// Combinatorial sweeps seeded by the Phase-1 ledger.
    Phase2(RunArgs),
    /// Phase 1 followed by Phase 2.
    Run(RunArgs),
    /// Evaluate a single prompt.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        prompt: String,
        /// Write the F1/PR curve as CSV here.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// F1-maximizing confidence threshold for a prompt.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        prompt: String,
        /// Labelled dataset used for calibration (defaults to --gt).
        #[arg(long)]
        calibration_gt: Option<PathBuf>,
    },
    /// Rewrite an axis file for a new target object with an LLM.
    Translate(TranslateArgs),
    /// Tables, curves and charts from one or more ledgers.
    Report {
        /// Ledger files; defaults to <out>/ledger.jsonl.
        #[arg(long = "ledger")]
        ledgers: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Directory for report files (defaults to <out>/report).
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, default_value = "csv", value_parser = ["csv", "json", "svg"])]
        format: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; the flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    axes: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Prediction cache; shorthand for --backend cached:<path>.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// cached:<path> | remote:<url> | mock:<fixture>
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    iou: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_dets: Option<usize>,
    #[arg(long)]
    dataset_id: Option<String>,
    #[arg(long)]
    image_root: Option<String>,
    /// Skip prompts already evaluated under the same configuration.
    #[arg(long)]
    resume: bool,
    /// Do not append the empty background class.
    #[arg(long)]
    no_background: bool,
    /// Skip the emoji stage of Phase 2.
    #[arg(long)]
    no_emoji: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_path(path)?,
            None => {
                let (Some(axes), Some(gt)) = (&self.axes, &self.gt) else {
                    bail!("--axes and --gt are required without --config");
                };
                let mut c = RunConfig::new(axes, gt, BackendSpec::Mock(String::new()));
                c.backend = None;
                c
            }
        };
        if let Some(v) = &self.axes {
            config.axes = v.clone();
        }
        if let Some(v) = &self.gt {
            config.gt = v.clone();
        }
        if let Some(v) = &self.predictions {
            config.predictions = Some(v.clone());
            if self.backend.is_none() {
                config.backend = None;
            }
        }
        if let Some(v) = &self.backend {
            config.backend = Some(v.parse()?);
        }
        if let Some(v) = &self.out {
            config.out = v.clone();
        }
        if let Some(v) = self.top_n {
            config.top_n = v;
        }
        if let Some(v) = self.iou {
            config.iou = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.max_dets {
            config.max_dets = Some(v);
        }
        if let Some(v) = &self.dataset_id {
            config.dataset_id = Some(v.clone());
        }
        if let Some(v) = &self.image_root {
            config.image_root = Some(v.clone());
        }
        config.resume |= self.resume;
        config.background_class &= !self.no_background;
        config.emoji_stage &= !self.no_emoji;
        Ok(config)
    }
}

#[derive(Args)]
struct TranslateArgs {
    /// Run config supplying the source axes and LLM endpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Source axis file (defaults to the bundled flower axes).
    #[arg(long)]
    axes: Option<PathBuf>,
    /// Description of the new target object.
    #[arg(long)]
    target: String,
    /// Canned LLM replies (text, or a JSON array of replies).
    #[arg(long)]
    llm_stub: Option<PathBuf>,
    /// Chat-completions endpoint.
    #[arg(long)]
    llm_url: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    llm_key_env: Option<String>,
    #[arg(long)]
    max_attempts: Option<u32>,
    /// Where to write the translated axis file (stdout if omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print the LLM prompt and exit.
    #[arg(long)]
    show_prompt: bool,
}

fn print_record(label: &str, r: &TrialRecord) {
    println!(
        "{label}: {:?}  mAP@0.5 {:.4}  delta {:+.4}",
        r.prompt,
        r.map_at_50.unwrap_or_default(),
        r.delta_vs_baseline.unwrap_or_default()
    );
}

fn summarize(records: &[TrialRecord]) {
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    println!("{} trials, {failed} failed", records.len());
}

fn translate(args: TranslateArgs) -> Result<()> {
    let config = args.config.as_deref().map(RunConfig::from_path).transpose()?;
    let source = match (&args.axes, &config) {
        (Some(p), _) => AxisSet::from_path(p)?,
        (None, Some(c)) => AxisSet::from_path(&c.axes)?,
        (None, None) => AxisSet::cowpea_flower(),
    };
    let endpoint = match (&args.llm_stub, &args.llm_url) {
        (Some(stub), _) => LlmEndpoint::Stub { stub_file: stub.clone() },
        (None, Some(url)) => LlmEndpoint::Http {
            url: url.clone(),
            model_name: args.llm_model.clone().context("--llm-model is required with --llm-url")?,
            api_key_env: args.llm_key_env.clone(),
            max_attempts: args.max_attempts.unwrap_or(3),
            temperature: 0.0,
        },
        (None, None) => config
            .and_then(|c| c.llm)
            .context("no LLM configured: pass --llm-stub or --llm-url, or set `llm` in the config")?,
    };
    let attempts = args.max_attempts.unwrap_or_else(|| endpoint.max_attempts());
    let request = TranslationRequest::new(source, &args.target, attempts)?;
    if args.show_prompt {
        println!("{}", build_translation_prompt(&request).text());
        return Ok(());
    }
    let client = endpoint.client()?;
    let translation = translate_axes(&request, client.as_ref())?;
    let json = translation.axes.to_json_string();
    match &args.output {
        Some(path) => {
            std::fs::write(path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
            eprintln!(
                "wrote {} ({} after {} attempt(s))",
                path.display(),
                translation.template_version,
                translation.attempts
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn write_report(ledgers: Vec<PathBuf>, out: &Path, dir: Option<PathBuf>, format: &str) -> Result<()> {
    let ledgers = if ledgers.is_empty() {
        vec![out.join("ledger.jsonl")]
    } else {
        ledgers
    };
    let mut records = Vec::new();
    let mut curves = Vec::new();
    for path in &ledgers {
        records.extend(read_ledger(path)?);
        let sidecar = curves_path(path);
        if sidecar.exists() {
            curves.extend(read_curves(&sidecar)?);
        }
    }
    let bundle = report(&records, &curves)?;
    let format: ReportFormat = format.parse()?;
    let dir = dir.unwrap_or_else(|| out.join("report"));
    for path in bundle.write(&dir, format)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log).context("invalid --log filter")?)
        .with_writer(std::io::stderr)
        .init();

    match cli.command {
        Command::Phase1(args) => {
            let mut pipeline = Pipeline::open(args.config()?)?;
            let outcome = pipeline.run_phase1()?;
            summarize(&outcome.records);
            print_record("baseline", &outcome.records[0]);
            print_record("best", &outcome.best);
        }
        Command::Phase2(args) => {
            let mut pipeline = Pipeline::open(args.config()?)?;
            let outcome = pipeline.run_phase2()?;
            summarize(&outcome.records);
            if let Some(best) = &outcome.best {
                print_record("best", best);
            }
        }
        Command::Run(args) => {
            let mut pipeline = Pipeline::open(args.config()?)?;
            let (p1, p2) = pipeline.run()?;
            summarize(&[p1.records.as_slice(), p2.records.as_slice()].concat());
            print_record("baseline", &p1.records[0]);
            print_record("phase 1 best", &p1.best);
            if let Some(best) = &p2.best {
                print_record("phase 2 best", best);
            }
            if let Some(best) = &p2.overall_best {
                print_record("overall best", best);
            }
        }
        Command::Eval { run, prompt, curve } => {
            let pipeline = Pipeline::open(run.config()?)?;
            let result = pipeline.evaluate_prompt(&prompt)?;
            let summary = serde_json::json!({
                "prompt": prompt,
                "backend": pipeline.backend_name(),
                "map_at_50": result.map_at_50,
                "iou_threshold": result.iou_threshold,
                "counts": result.counts,
                "num_gt": result.num_gt,
                "num_predictions": result.num_predictions,
                "degenerate": result.degenerate,
                "f1_max": result.f1_max(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(path) = curve {
                std::fs::write(&path, result.curve_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Calibrate {
            run,
            prompt,
            calibration_gt,
        } => {
            let mut config = run.config()?;
            if calibration_gt.is_some() {
                config.calibration_gt = calibration_gt;
            }
            let out = config.out.clone();
            let pipeline = Pipeline::open(config)?;
            let record = pipeline.calibrate(&prompt)?;
            let line = serde_json::to_string(&record)?;
            let path = out.join("calibration.jsonl");
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .with_context(|| format!("opening {}", path.display()))?;
            writeln!(file, "{line}")?;
            println!("{}", serde_json::to_string_pretty(&record)?);
        }
        Command::Translate(args) => translate(args)?,
        Command::Report {
            ledgers,
            out,
            dir,
            format,
        } => write_report(ledgers, &out, dir, &format)?,
    }
    Ok(())
}
