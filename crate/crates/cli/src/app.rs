use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use toml::Value;

use crate::commands;
use crate::config::{parse_override, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "s4m", version, about = "Forecasting with missing values: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand that reads a run configuration.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.lr=0.003`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic seasonal dataset.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Series length.
        #[arg(long = "T")]
        t: Option<usize>,
        /// Number of variables.
        #[arg(long = "D")]
        d: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hide blocks of a CSV series.
    Corrupt {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        input: PathBuf,
        /// `time-point` or `variable`.
        #[arg(long)]
        pattern: Option<String>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        block_len: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a CSV series chronologically into train/val/test files.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        /// s4m, mean, ffill or decay.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        no_mask: bool,
        #[arg(long)]
        no_atpm: bool,
    },
    /// Re-evaluate a trained run.
    Eval {
        /// Output directory of `train`.
        #[arg(long)]
        run: PathBuf,
        /// Override a key of the run's configuration. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        clean: Option<PathBuf>,
        /// Metrics CSV; defaults to `eval_metrics.csv` in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every method and ablation on the same data.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Prototype bank tools.
    Bank {
        #[command(subcommand)]
        command: BankCommand,
    },
    /// SSM kernel tools.
    Kernel {
        #[command(subcommand)]
        command: KernelCommand,
    },
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BankCommand {
    /// Print the bank of a run, or one freshly initialized from the data.
    Inspect {
        #[arg(long, conflicts_with = "fresh")]
        run: Option<PathBuf>,
        /// Initialize from the first training batch instead of loading a run.
        #[arg(long)]
        fresh: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum KernelCommand {
    /// Write every SSM kernel of a run (or of a fresh model) as CSV.
    Dump {
        #[arg(long)]
        run: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of lags; defaults to the look-back length.
        #[arg(long)]
        len: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Overrides(Vec<(String, Value)>);

impl Overrides {
    fn new(set: &[String]) -> CliResult<Self> {
        Ok(Self(set.iter().map(|s| parse_override(s)).collect::<CliResult<_>>()?))
    }

    fn put(&mut self, key: &str, v: Option<Value>) {
        if let Some(v) = v {
            self.0.push((key.to_string(), v));
        }
    }

    fn path(&mut self, key: &str, p: &Option<PathBuf>) {
        self.put(key, p.as_ref().map(|p| Value::String(p.display().to_string())));
    }
}

fn int<T: TryInto<i64>>(v: Option<T>) -> CliResult<Option<Value>> {
    v.map(|x| {
        x.try_into()
            .map(Value::Integer)
            .map_err(|_| CliError::Config("integer flag out of range".into()))
    })
    .transpose()
}

fn load(cfg: &ConfigArgs, ov: Overrides) -> CliResult<RunConfig> {
    RunConfig::load(cfg.config.as_deref(), &ov.0)
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => Ok(s4m_core::train_eval::write_text(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { cfg, t, d, sigma, seed, out } => {
            let mut ov = Overrides::new(&cfg.set)?;
            ov.put("synth.t", int(t)?);
            ov.put("synth.d", int(d)?);
            ov.put("synth.sigma", sigma.map(Value::Float));
            ov.put("synth.seed", int(seed)?);
            let frame = commands::synth(&load(&cfg, ov)?, &out)?;
            println!("wrote {} ({} x {})", out.display(), frame.len(), frame.dims());
        }
        Command::Corrupt { cfg, input, pattern, r, block_len, seed, out } => {
            let mut ov = Overrides::new(&cfg.set)?;
            ov.put("corrupt.pattern", pattern.map(Value::String));
            ov.put("corrupt.r", r.map(Value::Float));
            ov.put("corrupt.block_len", int(block_len)?);
            ov.put("corrupt.seed", int(seed)?);
            let m = commands::corrupt(&load(&cfg, ov)?, &input, &out)?;
            println!("wrote {} (missing ratio {:.4})", out.display(), m.realized_ratio);
        }
        Command::Split { input, out_dir } => {
            let [a, b, c] = commands::split(&input, &out_dir)?;
            println!("wrote {}: train {a}, val {b}, test {c} steps", out_dir.display());
        }
        Command::Train { cfg, data, method, seed, epochs, lr, no_mask, no_atpm } => {
            let mut ov = Overrides::new(&cfg.set)?;
            data_overrides(&mut ov, &data);
            ov.put("train.method", method.map(Value::String));
            ov.put("seed", int(seed)?);
            ov.put("train.seed", int(seed)?);
            ov.put("train.max_epochs", int(epochs)?);
            ov.put("train.lr", lr.map(Value::Float));
            ov.put("train.no_mask", no_mask.then_some(Value::Boolean(true)));
            ov.put("train.no_atpm", no_atpm.then_some(Value::Boolean(true)));
            let rc = load(&cfg, ov)?;
            let s = commands::train_run(&rc, &rc.data.out_dir)?;
            let m = s.test_metrics();
            println!(
                "best epoch {} of {}; test mae {:.6} mse {:.6}; outputs in {}",
                s.best_epoch,
                s.epochs,
                m.mae,
                m.mse,
                rc.data.out_dir.display()
            );
        }
        Command::Eval { run, set, input, clean, out } => {
            let mut ov = Overrides::new(&set)?;
            ov.path("data.input", &input);
            ov.path("data.clean", &clean);
            let out = out.unwrap_or_else(|| run.join("eval_metrics.csv"));
            let [_, test] = commands::eval_run(&run, &ov.0, &out)?;
            println!("test mae {:.6} mse {:.6}; wrote {}", test.truth.mae, test.truth.mse, out.display());
        }
        Command::Compare { cfg, data, seeds } => {
            let mut ov = Overrides::new(&cfg.set)?;
            data_overrides(&mut ov, &data);
            if !seeds.is_empty() {
                let list = seeds.iter().map(|&s| int(Some(s))).collect::<CliResult<Vec<_>>>()?;
                ov.put("compare.seeds", Some(Value::Array(list.into_iter().flatten().collect())));
            }
            let rc = load(&cfg, ov)?;
            for r in commands::compare(&rc, &rc.data.out_dir)? {
                println!("{:<12} mae {:.6} mse {:.6}", r.method, r.mae, r.mse);
            }
        }
        Command::Bank { command: BankCommand::Inspect { run, fresh, cfg, input, out } } => {
            let bank = match (run, fresh) {
                (Some(dir), _) => commands::bank_of_run(&dir)?,
                (None, true) => {
                    let mut ov = Overrides::new(&cfg.set)?;
                    ov.path("data.input", &input);
                    commands::fresh_bank(&load(&cfg, ov)?)?
                }
                (None, false) => return Err(CliError::Config("pass --run <dir> or --fresh".into())),
            };
            emit(&bank.dump(), out.as_deref())?;
        }
        Command::Kernel { command: KernelCommand::Dump { run, cfg, len, out } } => {
            let model = match run {
                Some(dir) => commands::load_run(&dir, &Overrides::new(&cfg.set)?.0)?.1,
                None => commands::fresh_model(&load(&cfg, Overrides::new(&cfg.set)?)?)?,
            };
            let len = len.unwrap_or(model.cfg.lookback);
            emit(&commands::kernel_csv(&model, len)?, out.as_deref())?;
        }
    }
    Ok(())
}

fn data_overrides(ov: &mut Overrides, data: &DataArgs) {
    ov.path("data.input", &data.input);
    ov.path("data.clean", &data.clean);
    ov.path("data.out_dir", &data.out_dir);
}
