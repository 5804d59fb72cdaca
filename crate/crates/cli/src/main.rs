use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bregman_conceal::concealment::Method;
use bregman_conceal::pipeline::{
    cmd_conceal, cmd_evaluate, cmd_simulate, AlphaMode, InputSpec, RunConfig,
};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

/// Temporal error concealment with a Bregman-regularized motion field.
#[derive(Parser, Debug)]
#[command(name = "bregconceal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write seeded macroblock loss masks for every inter frame.
    Simulate(CommonArgs),
    /// Damage, conceal and score a sequence.
    Conceal(CommonArgs),
    /// Per-frame PSNR of concealed sequences against the originals.
    Evaluate(CommonArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// TOML file with defaults for any of the options below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of PGM frames, or a raw 4:2:0 file together with --raw.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Geometry of a raw 4:2:0 input, e.g. 176x144.
    #[arg(long, value_name = "WxH")]
    raw: Option<String>,
    #[arg(long, value_name = "N")]
    frames: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// bregman, avgn, copy, zero-fill or all.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, value_name = "F")]
    loss_rate: Option<f64>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    mask_in: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    mask_out: Option<PathBuf>,
    #[arg(long, value_name = "F")]
    q: Option<f64>,
    #[arg(long, value_name = "F")]
    gamma: Option<f64>,
    #[arg(long, value_name = "F")]
    alpha: Option<f64>,
    /// fixed or search.
    #[arg(long)]
    alpha_mode: Option<String>,
    #[arg(long, value_name = "N")]
    mb_size: Option<usize>,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Root holding one PGM subdirectory per concealed sequence (evaluate).
    #[arg(long, value_name = "PATH")]
    concealed: Option<PathBuf>,
    /// Score frames in parallel (evaluate only).
    #[arg(long)]
    parallel_eval: bool,
    #[arg(long, value_name = "F")]
    d_max: Option<f64>,
    #[arg(long, value_name = "N")]
    window_half: Option<usize>,
    #[arg(long, value_name = "N")]
    outer_max: Option<usize>,
    #[arg(long, value_name = "N")]
    inner_max: Option<usize>,
    #[arg(long, value_name = "F")]
    outer_tol: Option<f64>,
    #[arg(long, value_name = "F")]
    inner_tol: Option<f64>,
}

/// Same keys as the long options, with `-` written as `_`.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    raw: Option<String>,
    frames: Option<usize>,
    output: Option<PathBuf>,
    method: Option<String>,
    loss_rate: Option<f64>,
    seed: Option<u64>,
    mask_in: Option<PathBuf>,
    mask_out: Option<PathBuf>,
    q: Option<f64>,
    gamma: Option<f64>,
    alpha: Option<f64>,
    alpha_mode: Option<String>,
    mb_size: Option<usize>,
    report: Option<PathBuf>,
    concealed: Option<PathBuf>,
    parallel_eval: Option<bool>,
    d_max: Option<f64>,
    window_half: Option<usize>,
    outer_max: Option<usize>,
    inner_max: Option<usize>,
    outer_tol: Option<f64>,
    inner_tol: Option<f64>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| {
            anyhow::anyhow!(
                "{}: {}",
                path.display(),
                e.message().lines().next().unwrap_or("invalid TOML")
            )
        })
    }
}

fn parse_geometry(s: &str) -> Result<(usize, usize)> {
    let parsed = s
        .split_once(['x', 'X'])
        .and_then(|(w, h)| Some((w.trim().parse().ok()?, h.trim().parse().ok()?)));
    match parsed {
        Some((w, h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => bail!("invalid --raw geometry `{s}` (expected WxH, e.g. 176x144)"),
    }
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    if s == "all" {
        return Ok(Method::ALL.to_vec());
    }
    Ok(vec![s.parse::<Method>()?])
}

fn build_config(args: CommonArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    macro_rules! pick {
        ($field:ident) => {
            args.$field.or(file.$field)
        };
    }

    let Some(input) = pick!(input) else {
        bail!("missing --input");
    };
    let raw = pick!(raw).as_deref().map(parse_geometry).transpose()?;
    let output = pick!(output).unwrap_or_else(|| PathBuf::from("out"));
    let mut cfg = RunConfig::new(InputSpec { path: input, raw }, output);

    if let Some(m) = pick!(method) {
        cfg.methods = parse_methods(&m)?;
    }
    if let Some(mode) = pick!(alpha_mode) {
        cfg.alpha_mode = mode.parse::<AlphaMode>()?;
    }
    cfg.frames = pick!(frames);
    cfg.mask_in = pick!(mask_in);
    cfg.mask_out = pick!(mask_out);
    cfg.report = pick!(report);
    cfg.concealed = pick!(concealed);
    cfg.parallel_eval = args.parallel_eval || file.parallel_eval.unwrap_or(false);
    cfg.loss_rate = pick!(loss_rate).unwrap_or(cfg.loss_rate);
    cfg.seed = pick!(seed).unwrap_or(cfg.seed);
    cfg.mb_size = pick!(mb_size).unwrap_or(cfg.mb_size);

    let b = &mut cfg.bregman;
    b.q = pick!(q).unwrap_or(b.q);
    b.gamma = pick!(gamma).unwrap_or(b.gamma);
    b.alpha = pick!(alpha).unwrap_or(b.alpha);
    b.outer_max = pick!(outer_max).unwrap_or(b.outer_max);
    b.inner_max = pick!(inner_max).unwrap_or(b.inner_max);
    b.outer_tol = pick!(outer_tol).unwrap_or(b.outer_tol);
    b.inner_tol = pick!(inner_tol).unwrap_or(b.inner_tol);

    let e = &mut cfg.estimation;
    e.d_max = pick!(d_max).unwrap_or(e.d_max);
    e.window_half = pick!(window_half).unwrap_or(e.window_half);

    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let s = cmd_simulate(&build_config(args)?)?;
            println!(
                "wrote {} masks to {}: {} of {} macroblocks lost",
                s.masks_written,
                s.mask_dir.display(),
                s.lost_mbs,
                s.total_mbs
            );
        }
        Command::Conceal(args) => {
            let s = cmd_conceal(&build_config(args)?)?;
            for (frame, method) in &s.nonconverged {
                eprintln!("warning: {method} solver did not converge on frame {frame}");
            }
            println!(
                "concealed {} frames, report at {}",
                s.reports.len(),
                s.report_path.display()
            );
        }
        Command::Evaluate(args) => {
            let s = cmd_evaluate(&build_config(args)?)?;
            println!(
                "scored {} frames, report at {}",
                s.rows.len(),
                s.report_path.display()
            );
        }
    }
    Ok(())
}

/// The error and its causes on one line, skipping causes already quoted.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg.replace('\n', " ")
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
