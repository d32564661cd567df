//! Argument parsing and dispatch for the `deblur` binary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{self, RunFile};
use crate::error::{exit, CliError, CliResult};
use crate::report;

/// Environment variable capping the worker threads used by eval and infer.
pub const THREADS_ENV: &str = "DEBLUR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "deblur", version, about = "Train, run and evaluate the image deblurring model")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `section.key=value`, applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Replaces `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on the dataset named in the config.
    Train,
    /// Restore every image of a directory with a checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score restored images against references.
    Eval {
        #[arg(long)]
        restored: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Count hard positives and negatives in an eval report.
    Mine {
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare the parameter budgets of two model configurations.
    Arch {
        /// Preset name (baseline, improved, toy) or config path.
        #[arg(long, default_value = "baseline")]
        a: String,
        #[arg(long, default_value = "improved")]
        b: String,
    },
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

/// Runs a parsed command and returns its human-readable result.
pub fn execute(cli: &Cli) -> CliResult<String> {
    let c = &cli.common;
    let mut cfg: RunFile = config::load(c.config.as_deref(), &c.overrides, c.seed)?;
    let out = out_dir(c);
    let mut args = BTreeMap::new();
    args.insert("out".to_string(), path_arg(&out));
    let (name, extra): (&str, Vec<(&str, String)>) = match &cli.command {
        Command::Train => ("train", vec![]),
        Command::Infer { checkpoint, input } => (
            "infer",
            vec![("checkpoint", path_arg(checkpoint)), ("input", path_arg(input))],
        ),
        Command::Eval { restored, gt } => ("eval", vec![("restored", path_arg(restored)), ("gt", path_arg(gt))]),
        Command::Mine { report } => ("mine", vec![("report", path_arg(report))]),
        Command::Arch { a, b } => ("arch", vec![("a", a.clone()), ("b", b.clone())]),
    };
    args.extend(extra.into_iter().map(|(k, v)| (k.to_string(), v)));
    cfg.run = config::RunSection {
        command: name.into(),
        args,
    };

    let pool = thread_pool()?;
    pool.install(|| match &cli.command {
        Command::Train => {
            cfg.echo(&out)?;
            let s = commands::cmd_train(&cfg, &out)?;
            let psnr = s.best_psnr.map_or("n/a".into(), |p| format!("{p:.3} dB"));
            Ok(format!(
                "trained {} iterations on {} pairs (validation: {} pairs); final loss {:.6}; best validation PSNR {psnr}; checkpoint {}",
                s.iterations,
                s.train_pairs,
                s.val_pairs,
                s.final_loss.unwrap_or(f64::NAN),
                s.checkpoint.display()
            ))
        }
        Command::Infer { checkpoint, input } => {
            let written = commands::cmd_infer(checkpoint, input, &out)?;
            cfg.echo(&out)?;
            Ok(format!("restored {} image(s) into {}", written.len(), out.display()))
        }
        Command::Eval { restored, gt } => {
            cfg.echo(&out)?;
            let r = commands::cmd_eval(restored, gt, &out, &cfg.eval)?;
            Ok(report::summary_table(&r))
        }
        Command::Mine { report: path } => {
            cfg.echo(&out)?;
            let m = commands::cmd_mine(path, &out, &cfg.eval)?;
            Ok(format!(
                "hard positives {}, hard negatives {}, neither {}, total {}",
                m.hard_positive, m.hard_negative, m.neither, m.total
            ))
        }
        Command::Arch { a, b } => {
            let (ma, mb) = (config::model_from_spec(a)?, config::model_from_spec(b)?);
            if c.out.is_some() {
                cfg.echo(&out)?;
            }
            let cmp = commands::cmd_arch(a, &ma, b, &mb, c.out.as_deref())?;
            Ok(report::arch_table(&cmp))
        }
    })
}

/// Parses `args` (program name first), runs, prints, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
