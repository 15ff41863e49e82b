mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "quadgain",
    version,
    about = "Train, evaluate and simulate a PPO gain-scheduling policy for a planar quadcopter",
    after_help = "Any configuration key can also be given as `--key value` (for example \
                  `--total-steps 12288` or `--baseline-gains 1,-0.3,7,12,1,10`). \
                  Flags take precedence over the config file."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy on the step reference.
    Train(Common),
    /// Compare a trained policy against static baseline gains on the waypoint suite.
    Eval(Common),
    /// Fly one episode with static gains or a policy and export the log.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML file with configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

type Overrides = Vec<(String, String)>;

const CLAP_LONG: [&str; 5] = ["config", "seed", "out", "help", "version"];

/// Separates generic `--key value` overrides from the arguments clap knows.
fn split_args(args: impl IntoIterator<Item = String>) -> Result<(Vec<String>, Overrides), String> {
    let mut known = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| !f.is_empty()) else {
            known.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        if CLAP_LONG.contains(&key) {
            known.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| format!("missing value for `--{key}`"))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((known, overrides))
}

fn run() -> Result<(), Box<dyn std::error::Error>> {
    let (known, mut overrides) = split_args(std::env::args())?;
    let cli = Cli::parse_from(known);
    let (Command::Train(common) | Command::Eval(common) | Command::Simulate(common)) = &cli.command;
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let mut config = RunConfig::load(common.config.as_deref(), &overrides)?;
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    match cli.command {
        Command::Train(_) => commands::cmd_train(&config),
        Command::Eval(_) => commands::cmd_eval(&config),
        Command::Simulate(_) => commands::cmd_simulate(&config),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn splits_generic_overrides() {
        let (known, ov) = split_args(s(&[
            "quadgain",
            "train",
            "--seed",
            "7",
            "-o",
            "out",
            "--total-steps",
            "12288",
            "--lr=1e-3",
        ]))
        .unwrap();
        assert_eq!(known, s(&["quadgain", "train", "--seed", "7", "-o", "out"]));
        assert_eq!(
            ov,
            vec![
                ("total-steps".into(), "12288".into()),
                ("lr".into(), "1e-3".into())
            ]
        );
        assert!(split_args(s(&["quadgain", "train", "--lr"])).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
