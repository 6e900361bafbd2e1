use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use log::error;
use systolic_vit::cli::{self, exit_code, parse_pairs, Mode, RunConfig};
use systolic_vit::Result;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Func,
    Sim,
    Verify,
    Analyze,
    Sweep,
}

/// Golden model and cycle-level simulator of a low-bit ViT attention
/// accelerator, with closed-form timing.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Command to run; defaults to the config file's `mode`.
    command: Option<Command>,
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for synthetic weights and inputs.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep axes, e.g. "nu_exp=2..10;bus_bits=8,64,inf".
    #[arg(long)]
    axes: Option<String>,
    /// Model preset: deit-t, deit-s, deit-b or toy. Replaces the config
    /// file's dimensions.
    #[arg(long)]
    preset: Option<String>,
    /// Break the softmax delay line at this column before verifying.
    #[arg(long, value_name = "COLUMN")]
    inject_delay_fault: Option<usize>,
}

fn build_config(args: &Args) -> Result<RunConfig> {
    let mut kv: BTreeMap<String, String> = match &args.config {
        Some(p) => parse_pairs(&std::fs::read_to_string(p)?)?,
        None => BTreeMap::new(),
    };
    if let Some(p) = &args.preset {
        for k in ["n_tokens", "embed_dim", "heads"] {
            kv.remove(k);
        }
        kv.insert("preset".into(), p.clone());
    }
    if let Some(s) = args.seed {
        kv.insert("seed".into(), s.to_string());
    }
    if let Some(o) = &args.out {
        kv.insert("out_dir".into(), o.display().to_string());
    }
    if let Some(c) = args.command {
        let mode = match c {
            Command::Func => "func",
            Command::Sim => "sim",
            Command::Verify => "verify",
            Command::Analyze => "analyze",
            Command::Sweep => "sweep",
        };
        kv.insert("mode".into(), mode.into());
    }
    RunConfig::from_pairs(&kv)
}

fn run(args: &Args) -> Result<bool> {
    let cfg = build_config(args)?;
    match cfg.mode {
        Mode::Func => print!("{}", cli::cmd_func(&cfg)?.to_kv()),
        Mode::Sim => print!("{}", cli::cmd_sim(&cfg)?.to_kv()),
        Mode::Analyze => print!("{}", cli::cmd_analyze(&cfg)?.to_kv()),
        Mode::Sweep => {
            let axes = cli::parse_axes(args.axes.as_deref().unwrap_or(""))?;
            print!("{}", cli::cmd_sweep(&cfg, &axes)?);
        }
        Mode::Verify => {
            let report = cli::cmd_verify(&cfg, args.inject_delay_fault)?;
            print!("{}", report.to_text());
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
