//! `dnmd`: train, evaluate and sweep message-dropout agents.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dnmd_core::autoenc::{collect_observations, pretrain, Autoencoder, PretrainConfig};
use dnmd_core::envs::PursuitConfig;
use dnmd_core::harness::{
    checkpoint, evaluate, output_root, run_suite, run_training, sweep, EvalOptions, LinkFailure, RunConfig,
    GRAD_TOLERANCE, PRESETS,
};
use dnmd_core::rng::{self, Stream};
use dnmd_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dnmd", version, about = "Multi-agent RL with block-wise message-dropout")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run; writes config, metrics.csv and checkpoints under the output root.
    Train {
        /// Config file, or a preset name (pursuit-small, nav-small, water-small).
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Output root (DNMD_OUT takes precedence).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint directory, optionally with broken links.
    Eval {
        #[arg(long)]
        checkpoint_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// none, half, all or prob:q
        #[arg(long, default_value = "none")]
        link_failure: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exploration kept during evaluation.
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
    },
    /// Train every dropout rate against every seed and aggregate.
    Sweep {
        #[arg(long)]
        config: String,
        /// Comma-separated dropout rates.
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        /// Number of seeds, 0..n.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check analytic gradients of every network topology against finite differences.
    Gradcheck,
    /// Pretrain the message autoencoder on random-rollout observations.
    PretrainAe {
        #[arg(long, default_value = "pursuit")]
        env: String,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(spec: &str) -> Result<RunConfig> {
    let path = Path::new(spec);
    if !path.exists() && PRESETS.contains(&spec) {
        return RunConfig::preset(spec);
    }
    RunConfig::from_file(path)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let root = output_root(out.as_deref());
            let outcome = run_training(&cfg, &root)?;
            match outcome.rows.last() {
                Some(r) => println!(
                    "{}: {} steps, {} episodes, catches {:.3}, return {:.3} -> {}",
                    r.run_id,
                    r.step,
                    r.episodes_done,
                    r.catches,
                    r.mean_return,
                    outcome.run_dir.display()
                ),
                None => println!("{}: no steps -> {}", cfg.run_id(), outcome.run_dir.display()),
            }
        }
        Command::Eval {
            checkpoint_dir,
            episodes,
            link_failure,
            seed,
            eps,
        } => {
            let link: LinkFailure = link_failure.parse()?;
            let (cfg, policy) = checkpoint::load(&checkpoint_dir)?;
            let s = evaluate(&policy, &cfg.env, &EvalOptions { episodes, link, eps, seed })?;
            println!(
                "{} link={link} episodes={episodes} catches={:.4}±{:.4} return={:.4}±{:.4}",
                cfg.run_id(),
                s.mean_catches,
                s.std_catches,
                s.mean_return,
                s.std_return
            );
        }
        Command::Sweep { config, p, seeds, out } => {
            let cfg = load_config(&config)?;
            let root = output_root(out.as_deref());
            let seeds: Vec<u64> = (0..seeds).collect();
            let res = sweep(&cfg, &p, &seeds, &root)?;
            println!("p,runs,mean_catches,std_catches,mean_return,std_return");
            for r in &res.table {
                println!(
                    "{},{},{:.4},{:.4},{:.4},{:.4}",
                    r.p, r.runs, r.mean_catches, r.std_catches, r.mean_return, r.std_return
                );
            }
        }
        Command::Gradcheck => {
            let reports = run_suite();
            let mut failed = 0;
            for r in &reports {
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                println!("{verdict:4} {:.3e} {:>7}/{:<7} {}", r.max_rel_error, r.checked, r.params, r.name);
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                return Err(Error::NonFinite(format!(
                    "{failed} of {} gradient checks above {GRAD_TOLERANCE:e}",
                    reports.len()
                )));
            }
            println!("all {} topologies within {GRAD_TOLERANCE:e}", reports.len());
        }
        Command::PretrainAe {
            env,
            samples,
            epochs,
            seed,
            out,
        } => {
            if env != "pursuit" {
                return Err(Error::Config(format!("autoencoder pretraining supports pursuit only, not `{env}`")));
            }
            let pc = PursuitConfig::small();
            let data = collect_observations(&pc, samples, rng::derive_seed(seed, Stream::Data as u64))?;
            let held = collect_observations(&pc, (samples / 10).max(1), rng::derive_seed(seed, 0xAE))?;
            let ae = Autoencoder::new(pc.obs_dim(), seed)?;
            let before = ae.mse(&held)?;
            let cfg = PretrainConfig { epochs, ..PretrainConfig::default() };
            let (ae, hist) = pretrain(ae, &data, cfg, seed)?;
            let after = ae.mse(&held)?;
            let dir = output_root(out.as_deref()).join("autoencoder");
            ae.save(&dir)?;
            let last = hist.last().copied().unwrap_or(f64::NAN);
            println!(
                "held-out mse {before:.5} -> {after:.5} (train {last:.5}) -> {}",
                dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

