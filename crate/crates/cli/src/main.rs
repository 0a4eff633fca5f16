use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use mpr_core::analysis::{capture_probability, figure_tables, monte_carlo_capture, CaptureQuery, Mode};
use mpr_core::audit::{audit, AuditReport};
use mpr_core::board::{transcript_group, BulletinBoard};
use mpr_core::crypto::{Group, GroupId, ModP768, Ristretto};
use mpr_core::engine::{run_in, TimeFrameConfig, TimeFrameResult};

/// Simulate, audit and analyze stratified mix-network time-frames.
#[derive(Parser, Debug)]
#[command(name = "mpr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one time-frame and write its transcript, result CSV and summary.
    Simulate {
        /// TOML configuration; without it a default honest run is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed (default 0).
        #[arg(long)]
        seed: Option<u64>,
        /// Message count when no config is given.
        #[arg(long, default_value_t = 64)]
        messages: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-check a transcript from its bytes alone.
    Verify {
        transcript: PathBuf,
        /// Print only failing verdicts.
        #[arg(long)]
        quiet: bool,
    },
    /// Probability that a message passes only adversarial mixes.
    Analyze {
        #[arg(long, value_enum, default_value = "mpr")]
        mode: ModeArg,
        /// Adversarial throughput share of every layer.
        #[arg(long, value_parser = fraction, required_unless_present = "fractions")]
        f: Option<f64>,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
        layers: u32,
        /// Per-layer shares, comma separated; overrides --f and --layers.
        #[arg(long, value_delimiter = ',', value_parser = fraction)]
        fractions: Option<Vec<f64>>,
        /// Also estimate the rate by routing this many messages.
        #[arg(long)]
        monte_carlo: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the capture tables by fraction and by layer count.
    Figures {
        #[arg(long, default_value = "figures")]
        out: PathBuf,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Mpr,
    Baseline,
}

fn fraction(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&f) {
        Ok(f)
    } else {
        Err(format!("{f} is outside [0, 1]"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate {
            config,
            seed,
            messages,
            out,
        } => simulate(config.as_deref(), seed, messages, &out),
        Command::Verify { transcript, quiet } => verify(&transcript, quiet),
        Command::Analyze {
            mode,
            f,
            layers,
            fractions,
            monte_carlo,
            seed,
        } => analyze(mode, f, layers, fractions, monte_carlo, seed),
        Command::Figures { out } => figures(&out),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn simulate(config: Option<&Path>, seed: Option<u64>, messages: usize, out: &Path) -> anyhow::Result<ExitCode> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TimeFrameConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => TimeFrameConfig::new(messages),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (result, transcript) = match cfg.group {
        GroupId::Ristretto255 => run_group(Ristretto, &cfg)?,
        GroupId::Modp768 => run_group(ModP768, &cfg)?,
    };

    fs::write(out.join("transcript.jsonl"), &transcript)?;
    fs::write(out.join("result.csv"), result.summary_csv())?;
    let manifest = json!({
        "seed": cfg.seed,
        "config": config.map(|p| p.display().to_string()),
        "out": out.display().to_string(),
        "layers": cfg.layer_count(),
        "messages": cfg.messages,
    });
    let summary = json!({ "manifest": manifest, "config": cfg, "result": result });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;

    println!(
        "seed {}: delivered {}/{} over {} layer(s), {} reassignment(s)",
        result.seed,
        result.delivered.len(),
        result.submitted.len(),
        result.layers,
        result.reassignments
    );
    for mix in result.flagged() {
        println!("flagged mix-{mix}");
    }
    match &result.failure {
        Some(why) => {
            eprintln!("time-frame failed: {why}");
            Ok(ExitCode::from(1))
        }
        None if !result.conserved() => {
            eprintln!("delivered messages differ from those submitted");
            Ok(ExitCode::from(1))
        }
        None => Ok(ExitCode::SUCCESS),
    }
}

fn run_group<G: Group>(group: G, cfg: &TimeFrameConfig) -> anyhow::Result<(TimeFrameResult, String)> {
    let outcome = run_in(group, cfg)?;
    Ok((outcome.result, outcome.board.to_jsonl()))
}

fn verify(path: &Path, quiet: bool) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report = match transcript_group(&text) {
        Ok(GroupId::Ristretto255) => import_and_audit(Ristretto, &text),
        Ok(GroupId::Modp768) => import_and_audit(ModP768, &text),
        Err(e) => Err(e.to_string()),
    };
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            println!("transcript rejected: {e}");
            return Ok(ExitCode::from(1));
        }
    };
    print_report(&report, quiet);
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn import_and_audit<G: Group>(group: G, text: &str) -> Result<AuditReport, String> {
    let board = BulletinBoard::import_jsonl(group, text.as_bytes()).map_err(|e| e.to_string())?;
    Ok(audit(&board))
}

fn print_report(report: &AuditReport, quiet: bool) {
    for b in &report.batches {
        if !quiet || !matches!(b.verdict, mpr_core::audit::Verdict::Accept) {
            println!("{}: {}", b.key, b.verdict);
        }
    }
    for (session, problem) in &report.sessions {
        println!("{session}: {problem}");
    }
    for issue in &report.issues {
        println!("issue: {issue}");
    }
    if report.passed() {
        println!(
            "transcript accepted: {} layer(s), {} final output(s)",
            report.layers, report.final_outputs
        );
    } else {
        let named: Vec<String> = report.misbehaving().iter().map(|m| format!("mix-{m}")).collect();
        if named.is_empty() {
            println!("transcript rejected");
        } else {
            println!("transcript rejected; misbehaving: {}", named.join(", "));
        }
    }
}

fn analyze(
    mode: ModeArg,
    f: Option<f64>,
    layers: u32,
    fractions: Option<Vec<f64>>,
    monte_carlo: Option<u64>,
    seed: u64,
) -> anyhow::Result<ExitCode> {
    let mode = match mode {
        ModeArg::Mpr => Mode::Mpr,
        ModeArg::Baseline => Mode::Baseline,
    };
    let query = match (fractions, f) {
        (Some(fs), _) => CaptureQuery { fractions: fs, mode },
        (None, Some(f)) => CaptureQuery::uniform(f, layers, mode),
        (None, None) => bail!("one of --f or --fractions is required"),
    };
    println!("{}", capture_probability(&query)?);
    if let Some(messages) = monte_carlo {
        let uniform = query.fractions.windows(2).all(|w| w[0] == w[1]);
        if !uniform || !matches!(mode, Mode::Mpr) {
            bail!("--monte-carlo needs --mode mpr and one fraction for every layer");
        }
        let est = monte_carlo_capture(query.fractions[0], query.fractions.len() as u32, messages, seed)?;
        println!(
            "monte carlo: {}/{} captured, rate {}, 99% interval [{}, {}]",
            est.successes, est.trials, est.rate, est.ci_low, est.ci_high
        );
        if let Some(w) = est.warning {
            eprintln!("warning: {w}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn figures(out: &Path) -> anyhow::Result<ExitCode> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (by_fraction, by_layers) = figure_tables();
    for (name, table) in [
        ("capture_by_fraction.csv", by_fraction),
        ("capture_by_layers.csv", by_layers),
    ] {
        let path = out.join(name);
        fs::write(&path, table.to_csv())?;
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
