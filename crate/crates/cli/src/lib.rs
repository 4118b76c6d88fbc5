//! The `mvskit` command line: scene generation, depth estimation,
//! uncertainty, losses, self-training, fusion and evaluation.
//!
//! Every subcommand reads its parameters from flags and, optionally, from
//! the matching table of a TOML file given with `--config`. Flags win.
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 when the
//! computation itself fails.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

pub mod config;
mod depth;
mod fusion;
mod loss;
mod synth;

use config::CliError;

pub const SUBCOMMANDS: [&str; 8] = ["synth", "depth", "ensemble", "loss", "selftrain", "fuse", "eval", "sparsify"];

#[derive(Debug, Parser)]
#[command(name = "mvskit", version, about = "Multi-view stereo self-supervision toolkit")]
struct Cli {
    /// TOML file with one table per subcommand, e.g. `[depth]`.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene into a dataset directory.
    Synth(synth::SynthFlags),
    /// Plane-sweep depth for every view of a dataset.
    Depth(depth::DepthFlags),
    /// Cost-dropout ensemble: mean depth, uncertainty and certainty mask.
    Ensemble(depth::EnsembleFlags),
    /// Evaluate the self-supervision losses for one view.
    Loss(loss::LossFlags),
    /// Augmented-input depth scored against the ensemble pseudo-label.
    Selftrain(loss::SelftrainFlags),
    /// Consistency-filter depth maps and fuse them into a point cloud.
    Fuse(fusion::FuseFlags),
    /// Accuracy, completeness and F-score of a point cloud.
    Eval(fusion::EvalFlags),
    /// Sparsification curve of an ensemble's uncertainty.
    Sparsify(fusion::SparsifyFlags),
}

/// Output streams of one invocation.
pub struct Io<'a> {
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

impl Io<'_> {
    pub fn warn(&mut self, msg: &str) {
        let _ = writeln!(self.stderr, "warning: {msg}");
    }
}

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    1
                }
            };
        }
    };
    let mut io = Io { stdout, stderr };
    let cfg = cli.config.as_deref();
    let result = match &cli.command {
        Command::Synth(f) => synth::run(f, cfg, &mut io),
        Command::Depth(f) => depth::run_depth(f, cfg, &mut io),
        Command::Ensemble(f) => depth::run_ensemble(f, cfg, &mut io),
        Command::Loss(f) => loss::run_loss(f, cfg, &mut io),
        Command::Selftrain(f) => loss::run_selftrain(f, cfg, &mut io),
        Command::Fuse(f) => fusion::run_fuse(f, cfg, &mut io),
        Command::Eval(f) => fusion::run_eval(f, cfg, &mut io),
        Command::Sparsify(f) => fusion::run_sparsify(f, cfg, &mut io),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {e}");
            if let CliError::Invalid(_) = e {
                let _ = writeln!(io.stderr, "run `mvskit --help` for usage");
            }
            e.code()
        }
    }
}
