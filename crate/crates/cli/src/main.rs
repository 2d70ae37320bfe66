use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use madnet::harness::commands;
use madnet::harness::RunConfig;
use madnet::{AdaptationMode, Error};

#[derive(Parser)]
#[command(name = "madnet", version, about = "Self-adaptive stereo: pretraining, online adaptation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Supervised pretraining on generated frames; writes a checkpoint.
    Pretrain(Common),
    /// Online adaptation over a sequence; writes per-frame CSV and a summary.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Overrides the configured adaptation mode.
        #[arg(long)]
        mode: Option<AdaptationMode>,
    },
    /// Metrics of a checkpoint over a sequence without adaptation.
    Eval(Common),
    /// Disparity for one stereo pair, as PFM and a colour PNG.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
    },
    /// Every adaptation mode on a shared sequence; writes a ranked table.
    Compare(Common),
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, hide = true)]
        negate: Option<String>,
    },
}

fn resolve(common: &Common) -> madnet::Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(c) = &common.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn run(cli: Cli) -> madnet::Result<bool> {
    match cli.command {
        Command::Pretrain(common) => {
            let (cfg, out) = resolve(&common)?;
            let (ckpt, summary) = commands::cmd_pretrain(&cfg, &out)?;
            print_json(&summary);
            println!("checkpoint: {}", ckpt.display());
        }
        Command::Adapt { common, mode } => {
            let (mut cfg, out) = resolve(&common)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            print_json(&commands::cmd_adapt(&cfg, &out)?);
        }
        Command::Eval(common) => {
            let (cfg, out) = resolve(&common)?;
            print_json(&commands::cmd_eval(&cfg, &out)?.1);
        }
        Command::Infer { common, left, right } => {
            let (cfg, out) = resolve(&common)?;
            commands::cmd_infer(&cfg, &left, &right, &out)?;
            println!("wrote {}", Path::new(&out).join(commands::DISPARITY_PFM).display());
        }
        Command::Compare(common) => {
            let (cfg, out) = resolve(&common)?;
            let rows = commands::cmd_compare(&cfg, &out)?;
            let fmt = |m: Option<f64>, s: Option<f64>| match (m, s) {
                (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
                _ => "-".into(),
            };
            println!("{:<4} {:<14} {:>18} {:>16} {:>8}", "rank", "mode", "D1-all %", "EPE", "FPS");
            for r in rows {
                println!(
                    "{:<4} {:<14} {:>18} {:>16} {:>8.1}",
                    r.rank,
                    r.mode.name(),
                    fmt(r.d1_mean, r.d1_std),
                    fmt(r.epe_mean, r.epe_std),
                    r.fps
                );
            }
        }
        Command::Gradcheck { negate } => {
            let entries = commands::cmd_gradcheck(negate.as_deref())?;
            let mut ok = true;
            for e in &entries {
                ok &= e.passed();
                println!(
                    "{} {:<40} max rel err {:.3e} (tol {:.0e}, {} elements)",
                    if e.passed() { "PASS" } else { "FAIL" },
                    e.report.name,
                    e.report.max_relative_error,
                    e.tolerance,
                    e.report.elements_checked
                );
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
