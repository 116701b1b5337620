//! `tqs`: denoise survey tables, run the synthetic sweeps, check the
//! estimator identities on exact joints, and score denoisers year by year.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use toml::Value;

use commands::{Failure, Finished, ALL_COMMANDS};
use config::{parse_value, CommandSpec, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "tqs", version, about = "Remove shared systematic measurement error from simultaneous observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file with flat dotted keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the `seed` key.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, value_name = "INT")]
    jobs: Option<usize>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Denoise every species of a CSV table.
    Denoise {
        #[command(flatten)]
        common: Common,
        /// Estimator: hs, 3qs, 3qs-eq1 or 3qs-eq2.
        #[arg(long, value_name = "NAME")]
        method: Option<String>,
        /// Input CSV; overrides the `input` key.
        #[arg(long, value_name = "PATH")]
        input: Option<String>,
    },
    /// Species-count and noise-level sweeps on synthetic instances.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Check the estimator identities on random exact joint distributions.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Number of joints; overrides the `joints` key.
        #[arg(long, value_name = "INT")]
        joints: Option<u64>,
        /// Test hook: evaluate a deliberately wrong estimator.
        #[arg(long, hide = true)]
        corrupt_estimator: bool,
    },
    /// Leave-one-year-out evaluation of the denoisers and baselines.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Comma-separated methods: raw, hs, 3qs, mb, global.
        #[arg(long, visible_alias = "methods", value_name = "NAME[,NAME...]")]
        method: Option<String>,
        /// Test rows to score: all, brightness-zero or both.
        #[arg(long, value_name = "FILTER")]
        test_filter: Option<String>,
        /// Input CSV; overrides the `input` key.
        #[arg(long, value_name = "PATH")]
        input: Option<String>,
    },
    /// Write a simulated multi-year survey with its ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
}

fn spec(name: &str) -> &'static CommandSpec {
    ALL_COMMANDS.iter().find(|s| s.name == name).expect("every subcommand has a key table")
}

fn overrides(common: &Common, extra: Vec<(&str, Option<Value>)>) -> Result<Vec<(String, Value)>, Failure> {
    let mut out = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        out.push((k.trim().to_string(), parse_value(v.trim())?));
    }
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).map_err(|_| Failure::Usage("--seed is out of range".into()))?;
        out.push(("seed".into(), Value::Integer(seed)));
    }
    for (k, v) in extra {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    }
    Ok(out)
}

fn string(v: &Option<String>) -> Option<Value> {
    v.clone().map(Value::String)
}

fn run(cli: Cli) -> Result<Finished, Failure> {
    let (name, common, extra, corrupt) = match &cli.command {
        Command::Denoise { common, method, input } => (
            "denoise",
            common,
            vec![("method", string(method)), ("input", string(input))],
            false,
        ),
        Command::Synth { common } => ("synth", common, vec![], false),
        Command::Verify {
            common,
            joints,
            corrupt_estimator,
        } => {
            let joints = joints
                .map(|j| i64::try_from(j).map(Value::Integer))
                .transpose()
                .map_err(|_| Failure::Usage("--joints is out of range".into()))?;
            ("verify", common, vec![("joints", joints)], *corrupt_estimator)
        }
        Command::Eval {
            common,
            method,
            test_filter,
            input,
        } => (
            "eval",
            common,
            vec![
                ("methods", string(method)),
                ("test_filter", string(test_filter)),
                ("input", string(input)),
            ],
            false,
        ),
        Command::Simulate { common } => ("simulate", common, vec![], false),
    };
    let cfg = RunConfig::resolve(spec(name), common.config.as_deref(), overrides(common, extra)?)?;
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(Failure::Usage("--jobs must be ≥ 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Run(format!("thread pool: {e}")))?;
    }
    let done = match name {
        "denoise" => commands::denoise(&cfg),
        "synth" => commands::synth(&cfg),
        "verify" => commands::verify(&cfg, corrupt),
        "eval" => commands::eval(&cfg),
        "simulate" => commands::simulate(&cfg),
        _ => unreachable!(),
    }?;
    Ok(done)
}

fn main() -> ExitCode {
    let mut command = Cli::command();
    for spec in ALL_COMMANDS {
        command = command.mut_subcommand(spec.name, |c| c.after_help(spec.help_text()));
    }
    let matches = command.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let out_dir = match &cli.command {
        Command::Denoise { common, .. }
        | Command::Synth { common }
        | Command::Verify { common, .. }
        | Command::Eval { common, .. }
        | Command::Simulate { common } => common.out.clone(),
    };
    let name = match &cli.command {
        Command::Denoise { .. } => "denoise",
        Command::Synth { .. } => "synth",
        Command::Verify { .. } => "verify",
        Command::Eval { .. } => "eval",
        Command::Simulate { .. } => "simulate",
    };

    match run(cli) {
        Ok(done) => {
            let written = match done.outputs.commit(&out_dir) {
                Ok(w) => w,
                Err(e) => {
                    eprintln!("tqs {name}: cannot write outputs to {}: {e}", out_dir.display());
                    return ExitCode::from(1);
                }
            };
            print!("{}", done.stdout);
            for p in written {
                println!("wrote {}", p.display());
            }
            match done.failed_check {
                Some(msg) => {
                    eprintln!("tqs {name}: {msg}");
                    ExitCode::from(1)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(f) => {
            eprintln!("tqs {name}: error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
