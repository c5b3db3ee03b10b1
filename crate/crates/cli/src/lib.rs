//! File formats, checkpoints and the `wrinkle` command line on top of
//! `wrinkle-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands::EvalTarget;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(
    name = "wrinkle",
    version,
    about = "Facial wrinkle segmentation and removal"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (for `infer`: the output image).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the segmentation network.
    TrainSeg,
    /// Train the inpainting generator against a frozen segmenter.
    TrainInpaint,
    /// Remove wrinkles from one image.
    Infer(InferArgs),
    /// Write a metrics report.
    Eval(EvalArgs),
    /// Write a synthetic dataset.
    MakeToy(ToyArgs),
}

#[derive(Args, Debug)]
pub struct InferArgs {
    pub input: PathBuf,
    /// Binary mask PNG used instead of the predicted one.
    #[arg(long)]
    pub mask_override: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct EvalArgs {
    #[arg(long)]
    pub seg: bool,
    #[arg(long)]
    pub inpaint: bool,
}

#[derive(Args, Debug)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

/// The effective config and its hash. The hash covers the file as written
/// plus any `--seed` override, so it does not depend on where the file lives.
fn load_config(cli: &Cli, with_output: bool) -> CliResult<(RunConfig, String)> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config is required for this command"))?;
    let mut cfg = RunConfig::parse_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let hash = cfg.hash()?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    if with_output {
        if let Some(out) = &cli.output {
            cfg.output_dir = Some(out.clone());
        }
    }
    cfg.validate()?;
    Ok((cfg, hash))
}

pub fn execute(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    if cli.device != "cpu" {
        return Err(CliError::config(format!(
            "device `{}` is not available; only `cpu` is",
            cli.device
        )));
    }
    match &cli.command {
        Command::TrainSeg => commands::train_seg(&load_config(cli, true)?.0),
        Command::TrainInpaint => commands::train_inpaint(&load_config(cli, true)?.0),
        Command::Infer(a) => commands::infer(
            &load_config(cli, false)?.0,
            &a.input,
            cli.output.as_deref(),
            a.mask_override.as_deref(),
        ),
        Command::Eval(a) => {
            let target = if a.seg {
                EvalTarget::Segmentation
            } else {
                EvalTarget::Inpainting
            };
            let (cfg, hash) = load_config(cli, true)?;
            commands::eval(&cfg, &hash, target)
        }
        Command::MakeToy(a) => {
            let (dir, seed) = match (&cli.output, &cli.config) {
                (Some(out), _) => (out.clone(), cli.seed.unwrap_or(0)),
                (None, Some(_)) => {
                    let (cfg, _) = load_config(cli, false)?;
                    (cfg.data.train_dir.clone(), cfg.seed)
                }
                (None, None) => {
                    return Err(CliError::config("make-toy needs --output or --config"))
                }
            };
            commands::make_toy(&dir, a.count, a.size, seed)
        }
    }
}

/// Parse `args` (program name first), run, and return the process exit code:
/// 0 on success, 1 for usage or configuration errors, 2 for runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
