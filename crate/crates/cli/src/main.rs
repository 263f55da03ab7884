use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hand_core::checkpoint::{Checkpoint, CheckpointKind};
use hand_core::config::RunConfig;
use hand_core::dataset::{export_synthetic, read_manifest};
use hand_core::encoder::ScaleLevel;
use hand_core::error::Error;
use hand_core::gradsuite::run_suite;
use hand_core::imageio::load_gray;
use hand_core::layout::{graph_to_xml, layout_tokens_from_str, parse_layout, ParseMode};
use hand_core::metrics::{strip_layout, MetricReport};
use hand_core::recognize::{evaluate_records, predict};
use hand_core::training::curriculum::{curriculum_train, TrainOptions};
use hand_core::training::pretrain::pretrain;
use hand_core::training::vocab_for;

/// Handwritten text recognition with joint layout analysis.
#[derive(Parser)]
#[command(name = "hand", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_level)]
        level: ScaleLevel,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run configuration whose `synth` section styles the samples.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// CTC pre-training of the encoder on line images.
    Pretrain(RunArgs),
    /// Curriculum training from lines to pages.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint whose compatible weights seed the first level.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Recognize one image: plain text, then canonical XML.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Evaluate a checkpoint on a manifest and write a metric report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate only contiguous shard K of N, written as `K/N`.
        #[arg(long, value_parser = parse_shard)]
        shard: Option<(usize, usize)>,
    },
    /// Merge shard reports into one.
    MergeReports {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        /// Only checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `training.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `training.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Config override `section.key=json`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn parse_level(s: &str) -> Result<ScaleLevel, String> {
    ScaleLevel::parse(s).map_err(|e| e.to_string())
}

fn parse_shard(s: &str) -> Result<(usize, usize), String> {
    let (k, n) = s.split_once('/').ok_or("expected K/N")?;
    let k: usize = k.parse().map_err(|e| format!("{e}"))?;
    let n: usize = n.parse().map_err(|e| format!("{e}"))?;
    if n == 0 || k >= n {
        return Err(format!("shard {k}/{n} out of range"));
    }
    Ok((k, n))
}

/// Loads the config file (or defaults) and applies `--set` overrides
/// before validation, so misspelled keys are reported by name.
fn load_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut doc: serde_json::Value = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::json!({}),
    };
    for s in &args.sets {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{s}` is not KEY=VALUE")))?;
        let value = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        set_path(&mut doc, key, value)?;
    }
    if let Some(out) = &args.out {
        set_path(
            &mut doc,
            "training.output_dir",
            out.display().to_string().into(),
        )?;
    }
    if let Some(seed) = args.seed {
        set_path(&mut doc, "training.seed", seed.into())?;
    }
    Ok(RunConfig::from_json(&doc.to_string())?)
}

fn set_path(doc: &mut serde_json::Value, key: &str, value: serde_json::Value) -> Result<(), Error> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "cannot set `{key}`: `{}` is not a section",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    Err(Error::Config("empty override key".into()))
}

fn synth(
    out: &Path,
    level: ScaleLevel,
    count: usize,
    seed: u64,
    config: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let records = export_synthetic(&cfg.synth, level, count, seed, out)?;
    println!("{} {level} samples in {}", records.len(), out.display());
    Ok(())
}

fn train(args: &RunArgs, init: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(args)?;
    let vocab = vocab_for(&cfg)?;
    let init_ck = init.map(Checkpoint::load).transpose()?;
    if let Some(ck) = &init_ck {
        if ck.vocab != vocab {
            bail!(Error::Config(format!(
                "checkpoint {} was trained with a different vocabulary",
                init.expect("present").display()
            )));
        }
    }
    let opts = TrainOptions {
        init: init_ck.as_ref().map(|c| &c.params),
        on_level_start: None,
    };
    let summary = curriculum_train(&cfg, &vocab, opts)?;
    for l in &summary.levels {
        println!(
            "level {}: copied {}, initialized {}, dropped {}; best loss {:.4}; checkpoint {}",
            l.level,
            l.transfer.copied.len(),
            l.transfer.initialized.len(),
            l.transfer.dropped.len(),
            l.best_loss,
            l.checkpoint.display()
        );
    }
    println!("log {}", summary.log.display());
    Ok(())
}

fn decode(checkpoint: &Path, image: &Path) -> anyhow::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.kind != CheckpointKind::Model {
        bail!(Error::Config(format!(
            "{} is a pre-training checkpoint",
            checkpoint.display()
        )));
    }
    let img = load_gray(image)?;
    let pred = predict(&ck, &img)?;
    let parsed = parse_layout(&layout_tokens_from_str(&pred.text), ParseMode::Lenient)?;
    for r in &parsed.repairs {
        eprintln!("repair at token {}: {}", r.position, r.action);
    }
    if pred.truncated {
        eprintln!("warning: output reached the maximum length without an end token");
    }
    println!("{}", strip_layout(&pred.text));
    print!("{}", graph_to_xml(&parsed.graph));
    Ok(())
}

fn write_report(report: &MetricReport, out: &Path) -> anyhow::Result<()> {
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(out, text + "\n").map_err(|e| Error::io(out, e))?;
    Ok(())
}

fn eval(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    shard: Option<(usize, usize)>,
) -> anyhow::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut records = read_manifest(data)?;
    if let Some((k, n)) = shard {
        let len = records.len();
        records = records[k * len / n..(k + 1) * len / n].to_vec();
    }
    let (totals, _) = evaluate_records(&ck, &records)?;
    let report = MetricReport::from_totals(totals);
    write_report(&report, out)?;
    println!("{}", serde_json::to_string(&summary_line(&report))?);
    Ok(())
}

fn summary_line(r: &MetricReport) -> serde_json::Value {
    serde_json::json!({ "cer": r.cer, "wer": r.wer, "loer": r.loer, "map_cer": r.map_cer })
}

fn merge_reports(paths: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    let mut merged: Option<MetricReport> = None;
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let r: MetricReport =
            serde_json::from_str(&text).with_context(|| format!("reading {}", p.display()))?;
        merged = Some(match merged {
            Some(m) => m.merge(&r),
            None => MetricReport::from_totals(r.counts),
        });
    }
    write_report(&merged.expect("at least one report"), out)
}

fn gradcheck(filter: Option<&str>) -> anyhow::Result<bool> {
    let results = run_suite(filter)?;
    let mut ok = true;
    for r in &results {
        println!(
            "{:<36} {:>10.3e}  {}",
            r.name,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAILED" }
        );
        ok &= r.passed;
    }
    println!(
        "{} checks, {}",
        results.len(),
        if ok { "all passed" } else { "failures" }
    );
    Ok(ok)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Synth {
            out,
            level,
            count,
            seed,
            config,
        } => synth(&out, level, count, seed, config.as_deref())?,
        Command::Pretrain(args) => {
            let cfg = load_config(&args)?;
            let vocab = vocab_for(&cfg)?;
            let outcome = pretrain(&cfg, &vocab, &cfg.training.output_dir)?;
            println!("checkpoint {}", outcome.checkpoint.display());
        }
        Command::Train { run, init } => train(&run, init.as_deref())?,
        Command::Decode { checkpoint, image } => decode(&checkpoint, &image)?,
        Command::Eval {
            checkpoint,
            data,
            out,
            shard,
        } => eval(&checkpoint, &data, &out, shard)?,
        Command::MergeReports { reports, out } => merge_reports(&reports, &out)?,
        Command::Gradcheck { filter } => {
            if !gradcheck(filter.as_deref())? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Divergence { .. }) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
