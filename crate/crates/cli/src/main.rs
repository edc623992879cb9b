use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use cofuse_core::compare::{self, CompareSpec};
use cofuse_core::data::{generate_dataset, Split, Task};
use cofuse_core::fusion::AggregatorKind;
use cofuse_core::report::Domains;
use cofuse_core::training::{self, Checkpoint};
use cofuse_core::verify::{self, VerifyOptions};
use cofuse_core::RunConfig;

/// Text-guided image classification with co-attention fusion, at desk scale.
#[derive(Parser)]
#[command(name = "cofuse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset for the configured task.
    SynthData(Common),
    /// Train one model; writes checkpoint.bin, metrics.jsonl and config.txt.
    Train(Common),
    /// Score a split with a checkpoint.
    Eval(EvalArgs),
    /// Train a grid of aggregators × seeds (× ablation settings) and tabulate AUCs.
    Compare(CompareArgs),
    /// Run the numerical self-checks.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Config file (`key = value` lines); defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    aggregator: Option<AggregatorKind>,
    #[arg(long)]
    task: Option<Task>,
    /// Output directory (dataset root for `synth-data`, run directory otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra overrides, e.g. `--set train.epochs=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; defaults to the checkpoint config's `data.dir/<task>`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Where to write the JSON report; defaults to `eval_<split>.json` beside the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated aggregator kinds; defaults to all six.
    #[arg(long, value_delimiter = ',')]
    aggregators: Vec<AggregatorKind>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    /// Comma-separated tasks; defaults to the configured task.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<Task>,
    /// Sweep token count {64, 256, 512} × pooling {max, mean}.
    #[arg(long)]
    ablate: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Seed for the randomized cases.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the stable softmax with a naive one (the suite should then fail).
    #[arg(long, hide = true)]
    inject_naive_softmax: bool,
}

/// Distinguishes bad input (exit 2) from runtime failure (exit 1).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    for kv in &c.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(a) = c.aggregator {
        cfg.model.aggregator = a;
    }
    if let Some(t) = c.task {
        cfg.task = t;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn fmt_auc(a: Option<f64>) -> String {
    a.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn synth_data(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(out) = &c.out {
        cfg.data_dir = out.clone();
    }
    let dir = cfg.task_dir();
    let report = generate_dataset(&cfg.synth(), &Domains::default(), &dir)?;
    println!(
        "wrote {} ({} samples, task {}): oracle AUC image-only {:.4}, joint {:.4}, gap {:+.4}",
        dir.display(),
        cfg.data.n_samples(),
        cfg.task,
        report.auc_image_only,
        report.auc_joint,
        report.gap
    );
    Ok(())
}

fn train(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let out = c.out.clone().unwrap_or_else(|| cfg.out_dir.join(format!("{}-{}-s{}", cfg.task, cfg.model.aggregator, cfg.seed)));
    let started = Instant::now();
    let (_, outcome) = training::train(&cfg, &out)?;
    println!(
        "best validation AUC {} (epoch {}), test AUC {}, {:.1}s, config {}",
        fmt_auc(outcome.best_val_auc),
        outcome.best_epoch,
        fmt_auc(outcome.test_auc),
        started.elapsed().as_secs_f64(),
        &cfg.hash()[..12]
    );
    println!("checkpoint {}", outcome.checkpoint.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    if !a.checkpoint.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let ck = Checkpoint::load(&a.checkpoint).map_err(usage)?;
    let data = a.data.clone().unwrap_or_else(|| ck.config.task_dir());
    let report = training::evaluate(&ck, &data, a.split)?;
    let out = a.out.clone().unwrap_or_else(|| {
        a.checkpoint.parent().unwrap_or(Path::new(".")).join(format!("eval_{}.json", a.split.name()))
    });
    write_json(&out, &report)?;
    println!("{} {} AUC {} (n = {})", report.task, report.split, fmt_auc(report.auc), report.n);
    Ok(())
}

fn run_compare(a: &CompareArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let spec = CompareSpec {
        aggregators: if a.aggregators.is_empty() { AggregatorKind::ALL.to_vec() } else { a.aggregators.clone() },
        seeds: a.seeds.clone(),
        tasks: if a.tasks.is_empty() { vec![cfg.task] } else { a.tasks.clone() },
        ablate: a.ablate,
    };
    let out = a.common.out.clone().unwrap_or_else(|| cfg.out_dir.join("compare"));
    let table = compare::run(&cfg, &spec, &out, |cell| {
        eprintln!(
            "  {:<14} {:<22} seed {:>2}  val {}  test {}",
            cell.task,
            cell.label,
            cell.seed,
            fmt_auc(cell.val_auc),
            fmt_auc(cell.test_auc)
        );
    })?;
    print!("{}", table.to_csv());
    println!("wrote {}", out.join("compare.csv").display());
    Ok(())
}

fn run_verify(a: &VerifyArgs) -> Result<bool> {
    let report = verify::run(&VerifyOptions { naive_softmax: a.inject_naive_softmax, seed: a.seed });
    for c in &report.checks {
        println!(
            "{} {:<34} measured {:.3e}  tolerance {:.0e}  ({} cases)",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            c.cases
        );
        if let Some(e) = &c.error {
            println!("     error: {e}");
        }
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SynthData(c) => synth_data(c).map(|_| true),
        Command::Train(c) => train(c).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Compare(a) => run_compare(a).map(|_| true),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<cofuse_core::Error>(), Some(cofuse_core::Error::Config(_)));
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}
