//! `regrl` subcommands. [`run`] returns the process exit status.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::plot::{render_figure, Figure};
use super::{load_config, load_policy, resolve_out_dir, run_rl, run_sweep_job, verify, HarnessError, RunConfig};
use crate::gridworld::generate_level;
use crate::rltrain::{evaluate_policy_with, EvalRooms};
use crate::rng::SeedTree;

#[derive(Parser, Debug)]
#[command(name = "regrl", version, about = "Noise-injection regularization experiments on procedurally generated tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a multiroom agent from an `rl_multiroom` config.
    TrainRl {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a saved policy on freshly generated levels.
    EvalRl {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 300)]
        episodes: usize,
        /// `cycle`, `random`, or a fixed room count 1-3.
        #[arg(long, default_value = "cycle")]
        rooms: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a supervised sweep from a `sup_sweep` config.
    SweepSup {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render a figure from the runs under a directory.
    Plot {
        #[arg(long)]
        input: PathBuf,
        /// `multiroom-success`, `kl-proxy` or `sup-sweep`.
        #[arg(long)]
        figure: Figure,
        /// Defaults to `<input>/<figure>.svg`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the invariant and oracle suite.
    Verify,
    /// Print generated levels as JSON.
    DumpLevels {
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long, default_value_t = 10)]
        count: u64,
        #[arg(long)]
        rooms: Option<u8>,
        /// Print ASCII renderings instead of JSON.
        #[arg(long)]
        ascii: bool,
    },
}

fn parse_rooms(s: &str) -> Result<EvalRooms, HarnessError> {
    match s {
        "cycle" => Ok(EvalRooms::Cycle),
        "random" => Ok(EvalRooms::Random),
        n => match n.parse::<u8>() {
            Ok(k @ 1..=3) => Ok(EvalRooms::Fixed(k)),
            _ => Err(HarnessError::Config(format!("--rooms: expected cycle, random or 1-3, got `{n}`"))),
        },
    }
}

fn load_kind(path: &std::path::Path, seed: Option<u64>) -> Result<RunConfig, HarnessError> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::TrainRl { config, seed } => {
            let RunConfig::RlMultiroom(cfg) = load_kind(&config, seed)? else {
                return Err(HarnessError::Config(format!("{}: kind must be rl_multiroom", config.display())));
            };
            let out = resolve_out_dir(&cfg.out_dir);
            let s = run_rl(&cfg, &out)?;
            println!("{}", serde_json::to_string(&serde_json::json!({ "out_dir": s.out_dir, "iterations": s.iterations, "frames": s.frames, "eval": s.final_eval }))?);
        }
        Command::EvalRl { checkpoint, episodes, rooms, seed } => {
            let rooms = parse_rooms(&rooms)?;
            let net = load_policy(&checkpoint)?;
            let rep = evaluate_policy_with(&net, episodes, rooms, &SeedTree::new(seed))?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::SweepSup { config, seed, threads } => {
            let RunConfig::SupSweep(cfg) = load_kind(&config, seed)? else {
                return Err(HarnessError::Config(format!("{}: kind must be sup_sweep", config.display())));
            };
            let out = resolve_out_dir(&cfg.out_dir);
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build().map_err(|e| HarnessError::Config(e.to_string()))?;
            let table = pool.install(|| run_sweep_job(&cfg, &out))?;
            for c in &table.cells {
                println!("{:>6} {:<8} {:.4} ± {:.4} ({} runs, {} failed)", c.axis_value, c.arch.name(), c.mean, c.stderr, c.n_runs, c.n_failed);
            }
        }
        Command::Plot { input, figure, output } => {
            let svg = render_figure(figure, &input)?;
            let name = match figure {
                Figure::MultiroomSuccess => "multiroom-success",
                Figure::KlProxy => "kl-proxy",
                Figure::SupSweep => "sup-sweep",
            };
            let path = output.unwrap_or_else(|| input.join(format!("{name}.svg")));
            std::fs::write(&path, svg)?;
            println!("{}", path.display());
        }
        Command::Verify => {
            let t = std::time::Instant::now();
            let results = verify::run_suite(|o| {
                println!("{} {:<42} {:>7.2}s  {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.seconds, o.detail);
                let _ = std::io::stdout().flush();
            });
            let failed = results.iter().filter(|o| !o.passed).count();
            println!("{} checks, {failed} failed, {:.1}s", results.len(), t.elapsed().as_secs_f64());
            if failed > 0 {
                return Err(HarnessError::Verify(failed));
            }
        }
        Command::DumpLevels { start, count, rooms, ascii } => {
            let levels = (start..start + count).map(|s| generate_level(s, rooms)).collect::<Result<Vec<_>, _>>().map_err(|e| HarnessError::Config(e.to_string()))?;
            if ascii {
                for l in &levels {
                    println!("seed {} rooms {}\n{}", l.seed, l.n_rooms, l.render_ascii(Some(l.agent_start)));
                }
            } else {
                println!("{}", serde_json::to_string_pretty(&levels)?);
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the subcommand. Usage errors exit 2, bad
/// configs 2, missing checkpoints 3, anything else 1.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
