use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use gsg::alloc::{Algorithm, Dataset, DefenderPlayer, RandomAllocator, Side};
use gsg::harness::{
    attack_heatmap, evaluate, export_trace, load_player, prepare, replay_trace, run_algorithm, run_pipeline,
    timing_report, uncertainty_sweep, write_sweep_csv, write_timing_csv, ExperimentConfig, IdlePatrol, Stage,
};
use gsg::patrol::{save_nets, train_patrol};

#[derive(Parser)]
#[command(name = "gsg", version, about = "Train and evaluate two-stage green security game policies")]
struct Cli {
    /// TOML experiment config; the desk profile is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Defender,
    Attacker,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the configured grid as JSON.
    GenGrid {
        #[arg(long)]
        out: PathBuf,
    },
    /// Samples a random allocation dataset for one side.
    GenDataset {
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the drone and ranger Q-networks.
    TrainPatrol {
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains allocation policies against frozen patrol networks.
    TrainAlloc {
        #[arg(long)]
        algo: Algorithm,
        /// Directory with drone.ckpt and ranger.ckpt.
        #[arg(long)]
        patrol: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluates trained allocation policies over the configured episode count.
    Evaluate {
        #[arg(long)]
        algo: Algorithm,
        #[arg(long)]
        patrol: PathBuf,
        /// Directory with the <algo>_defender.ckpt and <algo>_attacker.ckpt files.
        #[arg(long)]
        checkpoints: PathBuf,
        /// Per-episode returns as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Counts attacked cells over sampled games and writes CSV and PNG.
    Heatmap {
        #[arg(long)]
        algo: Algorithm,
        #[arg(long)]
        patrol: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        /// Output path without extension.
        #[arg(long)]
        out: PathBuf,
        /// Defenders stay put instead of following the patrol networks.
        #[arg(long)]
        idle: bool,
    },
    /// Retrains and evaluates CombSGPO at every configured uncertainty level.
    Sweep {
        #[arg(long)]
        out: PathBuf,
    },
    /// Wall-clock allocation training time to the plateau criterion.
    Timing {
        #[arg(long)]
        patrol: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verifies a JSON-lines trace, recording one first when --patrol is given.
    Replay {
        trace: PathBuf,
        #[arg(long)]
        patrol: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        episode: u64,
    },
    /// Patrol training, every configured algorithm and evaluation in one go.
    Run {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage(cfg: &ExperimentConfig, patrol: &Path) -> Result<Stage> {
    prepare(cfg, None, Some(patrol)).with_context(|| format!("loading patrol networks from {}", patrol.display()))
}

fn players(
    cfg: &ExperimentConfig,
    stage: &Stage,
    algo: Algorithm,
    dir: &Path,
) -> Result<(DefenderPlayer, gsg::alloc::AllocationPlayer)> {
    let defender = match algo {
        Algorithm::Random => DefenderPlayer::Random(RandomAllocator {
            grid: stage.grid.clone(),
            role_counts: Side::Defender.role_counts(&cfg.game),
        }),
        _ => DefenderPlayer::Learned(load_player(cfg, stage, true, &dir.join(format!("{algo}_defender.ckpt")))?),
    };
    let attacker = load_player(cfg, stage, false, &dir.join(format!("{algo}_attacker.ckpt")))?;
    Ok((defender, attacker))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenGrid { out } => {
            let grid = cfg.grid.build()?;
            std::fs::write(out, serde_json::to_string_pretty(&grid)?)?;
        }
        Command::GenDataset { side, out } => {
            let grid = cfg.grid.build()?;
            let side = match side {
                SideArg::Defender => Side::Defender,
                SideArg::Attacker => Side::Attacker,
            };
            let data = Dataset::build(&grid, side, &side.role_counts(&cfg.game), cfg.alloc.dataset_size, cfg.seed)?;
            data.save(out)?;
            println!("{} allocations -> {}", data.len(), out.display());
        }
        Command::TrainPatrol { out } => {
            let grid = cfg.grid.build()?;
            std::fs::create_dir_all(out)?;
            let mut metrics = Vec::new();
            let (nets, log) = train_patrol(&grid, &cfg.game, &cfg.patrol, cfg.seed, Some(&mut metrics))?;
            std::fs::write(out.join("patrol_metrics.csv"), &metrics)?;
            save_nets(&nets, out)?;
            println!("{} episodes -> {}", log.returns.len(), out.display());
        }
        Command::TrainAlloc { algo, patrol, out } => {
            let st = stage(&cfg, patrol)?;
            let r = run_algorithm(&cfg, &st, *algo, Some(out))?;
            println!(
                "{algo}: {:.3} ± {:.3} over {} episodes, plateau at {:?}",
                r.report.mean, r.report.std, r.report.episodes, r.run.converged_at
            );
        }
        Command::Evaluate {
            algo,
            patrol,
            checkpoints,
            out,
        } => {
            let st = stage(&cfg, patrol)?;
            let (d, a) = players(&cfg, &st, *algo, checkpoints)?;
            let report = evaluate(&st.grid, &cfg.game, &st.patrol, &d, &a, cfg.eval.episodes, gsg::harness::eval_seed(&cfg))?;
            println!("{algo}: {:.3} ± {:.3} over {} episodes", report.mean, report.std, report.episodes);
            if let Some(p) = out {
                report.write_csv(BufWriter::new(File::create(p)?))?;
            }
        }
        Command::Heatmap {
            algo,
            patrol,
            checkpoints,
            out,
            idle,
        } => {
            let st = stage(&cfg, patrol)?;
            let (d, a) = players(&cfg, &st, *algo, checkpoints)?;
            let seed = gsg::seed::split(cfg.seed, "heatmap", 0);
            let h = if *idle {
                attack_heatmap(&st.grid, &cfg.game, &IdlePatrol, &d, &a, cfg.eval.heatmap_samples, seed)?
            } else {
                attack_heatmap(&st.grid, &cfg.game, &st.patrol, &d, &a, cfg.eval.heatmap_samples, seed)?
            };
            h.write_csv(BufWriter::new(File::create(out.with_extension("csv"))?))?;
            h.write_png(&out.with_extension("png"), 32)?;
            println!("{} attacks over {} samples", h.total_attacks, h.samples);
        }
        Command::Sweep { out } => {
            let rows = uncertainty_sweep(&cfg)?;
            write_sweep_csv(&rows, BufWriter::new(File::create(out)?))?;
            for r in rows {
                println!("beta {} kappa {}: {:.3} ± {:.3}", r.beta, r.kappa, r.mean, r.std);
            }
        }
        Command::Timing { patrol, out } => {
            let st = stage(&cfg, patrol)?;
            let rows = timing_report(&cfg, &st, &cfg.eval.algorithms)?;
            write_timing_csv(&rows, BufWriter::new(File::create(out)?))?;
            for r in rows {
                println!("{}: {:.2}s ± {:.2}s", r.algorithm, r.mean, r.std);
            }
        }
        Command::Replay { trace, patrol, episode } => {
            if let Some(dir) = patrol {
                let st = stage(&cfg, dir)?;
                export_trace(&cfg, &st, *episode, trace)?;
            } else if !trace.exists() {
                bail!("{} does not exist; pass --patrol to record one", trace.display());
            }
            let (t, total) = replay_trace(trace)?;
            println!("{} steps replayed, total reward {total}, {} captures", t.steps.len(), t.captures());
        }
        Command::Run { out } => {
            let (_, results) = run_pipeline(&cfg, out)?;
            for r in results {
                println!("{}: {:.3} ± {:.3}", r.run.algorithm, r.report.mean, r.report.std);
            }
        }
    }
    Ok(())
}
