use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use panda_core::embedstore::ProviderConfig;
use panda_core::manifest::Manifest;
use panda_core::patcher::{BalanceLog, ComposeMode};
use panda_core::run::{
    build_stream, compare_reports, load_manifest, replace_dir, write_atomic, EvalReport, OutputLock, RunConfig,
    Session,
};
use panda_core::smoother::BetaStrategy;
use panda_core::streamgen::{count_table, summarize_distribution, StreamPlan};

#[derive(Parser)]
#[command(name = "panda", version, about = "Imbalanced class-incremental streams with patch-grafting augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream plan commands.
    Stream {
        #[command(subcommand)]
        command: StreamCommand,
    },
    /// Balance every task and write the synthesized data and balance logs.
    Augment(AugmentArgs),
    /// Evaluate the prototype learner with and/or without augmentation.
    Eval(EvalArgs),
    /// Compare reports produced from the same plan.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum StreamCommand {
    /// Build a stream plan from a run config.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "PANDA_SEED")]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// Overrides `patcher.compose`.
    #[arg(long)]
    mode: Option<ComposeMode>,
    /// Overrides `smoother.strategy`.
    #[arg(long)]
    strategy: Option<BetaStrategy>,
    #[arg(long, env = "PANDA_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "PANDA_REMOTE_TIMEOUT_MS")]
    remote_timeout_ms: Option<u64>,
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    panda: bool,
    /// Output of a previous `augment`; its balance logs must match this run.
    #[arg(long)]
    augmented: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Directory for plot data; defaults to the first report's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: &Path, seed: Option<u64>, remote_timeout_ms: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let (Some(ms), ProviderConfig::Remote { timeout_ms, .. }) = (remote_timeout_ms, &mut cfg.provider) {
        *timeout_ms = ms;
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn stream_build(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed, None)?;
    let _lock = OutputLock::acquire(out)?;
    let (_, plan) = build_stream(&cfg)?;
    let summaries = plan
        .tasks
        .iter()
        .map(summarize_distribution)
        .collect::<panda_core::Result<Vec<_>>>()?;
    let table = count_table(&plan);
    write(&out.join("plan.json"), &plan.to_json())?;
    write(&out.join("summaries.json"), &(serde_json::to_string_pretty(&summaries)? + "\n"))?;
    write(&out.join("distribution.txt"), &table)?;
    print!("{table}");
    println!("plan {} written to {}", plan.digest(), out.display());
    Ok(())
}

/// Config with overrides applied, plus the plan checked against it.
fn open_session(args: &RunArgs) -> Result<Session> {
    let mut cfg = load_config(&args.config, args.seed, args.remote_timeout_ms)?;
    if let Some(m) = args.mode {
        cfg.patcher.compose = m;
    }
    if let Some(s) = args.strategy {
        cfg.smoother.strategy = s;
    }
    let text = fs::read_to_string(&args.plan).with_context(|| format!("reading {}", args.plan.display()))?;
    let plan = StreamPlan::from_json(&text)?;
    if plan.config != cfg.long_tail() || plan.num_tasks() != cfg.stream.num_tasks {
        bail!(
            "{} was built from a different stream config or seed; rebuild it with `panda stream build`",
            args.plan.display()
        );
    }
    let manifest: Manifest = load_manifest(&cfg)?;
    Ok(Session::open(cfg, plan, &manifest)?)
}

fn log_path(dir: &Path, task_index: usize) -> PathBuf {
    dir.join(format!("task_{task_index:02}")).join("balance_log.jsonl")
}

fn augment(args: &AugmentArgs) -> Result<()> {
    let mut session = open_session(&args.run)?;
    let out = session.config.output_dir.clone();
    let _lock = OutputLock::acquire(&out)?;
    let staged = out.join(".augment.tmp");
    if staged.exists() {
        fs::remove_dir_all(&staged)?;
    }
    fs::create_dir_all(&staged)?;
    let persist = session.config.patcher.persist_images.then_some(staged.as_path());
    let run = match session.run_panda(persist) {
        Ok(r) => r,
        Err(e) => {
            let _ = fs::remove_dir_all(&staged);
            return Err(e.into());
        }
    };
    for log in &run.logs {
        write(&log_path(&staged, log.footer.task_index), &log.to_jsonl())?;
        let f = &log.footer;
        println!(
            "task {:>2}: {:>5} synthesized, {:>3} skipped, gap {:.3} -> {:.3} ({})",
            f.task_index,
            f.syntheses,
            f.skipped,
            f.initial_gap,
            f.final_gap,
            serde_json::to_value(&f.outcome)?["status"].as_str().unwrap_or("?")
        );
    }
    let summary = serde_json::json!({
        "plan_digest": run.report.plan_digest,
        "seed": run.report.seed,
        "synthesized": run.report.synthesized(),
        "balance": run.report.augmentation,
        "smoothing": run.report.smoothing,
    });
    write(&staged.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    replace_dir(&staged, &out.join("augment"))?;
    println!("{} samples written to {}", run.report.synthesized(), out.join("augment").display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (baseline, panda) = match (args.baseline, args.panda) {
        (false, false) => (true, true),
        flags => flags,
    };
    let mut session = open_session(&args.run)?;
    let out = session.config.output_dir.clone();
    let _lock = OutputLock::acquire(&out)?;
    let mut written = Vec::new();
    if baseline {
        let report = session.run_baseline()?;
        written.push(save_report(&out, &report)?);
    }
    if panda {
        let run = session.run_panda(None)?;
        if let Some(dir) = &args.augmented {
            for log in &run.logs {
                let path = log_path(dir, log.footer.task_index);
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                if BalanceLog::from_jsonl(&text)? != *log {
                    bail!("{} does not match this run's balancing", path.display());
                }
            }
        }
        written.push(save_report(&out, &run.report)?);
    }
    let named: Vec<(String, EvalReport)> = written
        .into_iter()
        .map(|(path, r)| (path.file_name().unwrap().to_string_lossy().into_owned(), r))
        .collect();
    print!("{}", compare_reports(&named)?.table);
    Ok(())
}

fn save_report(out: &Path, report: &EvalReport) -> Result<(PathBuf, EvalReport)> {
    let name = report.variant.name();
    let path = out.join(format!("report_{name}.json"));
    write(&path, &report.to_json())?;
    write(&out.join(format!("matrix_{name}.csv")), &report.matrix_csv())?;
    Ok((path, report.clone()))
}

fn report(args: &ReportArgs) -> Result<()> {
    let mut named = Vec::new();
    for path in &args.reports {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let r = EvalReport::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        named.push((path.display().to_string(), r));
    }
    let cmp = compare_reports(&named)?;
    let out = match &args.out {
        Some(o) => o.clone(),
        None => args.reports[0].parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    write(&out.join("comparison.csv"), &cmp.summary_csv)?;
    write(&out.join("average_accuracy.csv"), &cmp.curve_csv)?;
    print!("{}", cmp.table);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Stream {
            command: StreamCommand::Build { config, out, seed },
        } => stream_build(config, out, *seed),
        Command::Augment(a) => augment(a),
        Command::Eval(e) => eval(e),
        Command::Report(r) => report(r),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
