//! End-to-end runs: patrol training, allocation training, evaluation,
//! uncertainty sweeps, timing and trace export.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RunRecord};
use super::evaluate::{evaluate, EvalReport};
use crate::alloc::{new_player, train_alloc, AllocRun, Algorithm, AllocationPlayer, DefenderPlayer, Embeddings};
use crate::engine::trace::Trace;
use crate::error::{Error, Result};
use crate::grid::GridWorld;
use crate::nn::checkpoint;
use crate::patrol::{load_policy, play_episode, random_placement, save_nets, train_patrol, PatrolPolicy};
use crate::seed;

/// Trained patrol networks and allocation embeddings shared by all algorithms.
pub struct Stage {
    pub grid: GridWorld,
    pub patrol: PatrolPolicy,
    pub embeddings: Embeddings,
}

/// Trains the patrol networks (or loads them from `patrol_dir`) and the
/// allocation autoencoders. Writes `patrol_metrics.csv` and the patrol
/// checkpoints when `out` is given.
pub fn prepare(cfg: &ExperimentConfig, out: Option<&Path>, patrol_dir: Option<&Path>) -> Result<Stage> {
    cfg.validate()?;
    let grid = cfg.grid.build()?;
    let patrol = match patrol_dir {
        Some(dir) => load_policy(&grid, &cfg.game, &cfg.patrol, dir)?,
        None => {
            let mut metrics = Vec::new();
            let (nets, _) = train_patrol(&grid, &cfg.game, &cfg.patrol, cfg.seed, Some(&mut metrics))?;
            if let Some(dir) = out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("patrol_metrics.csv"), &metrics)?;
                save_nets(&nets, &dir.join("patrol"))?;
            }
            nets.frozen()
        }
    };
    let embeddings = Embeddings::build(&grid, &cfg.game, &cfg.alloc, cfg.seed)?;
    Ok(Stage {
        grid,
        patrol,
        embeddings,
    })
}

/// Seed of the evaluation streams for a config.
pub fn eval_seed(cfg: &ExperimentConfig) -> u64 {
    seed::split(cfg.seed, "evaluate", 0)
}

#[derive(Clone, Debug)]
pub struct AlgorithmResult {
    pub run: AllocRun,
    pub report: EvalReport,
}

/// Trains one allocation algorithm on a prepared stage and evaluates it.
/// With `out`, writes `curve_<algo>.csv`, `eval_<algo>.csv` and the actor
/// checkpoints `<algo>_defender.ckpt` / `<algo>_attacker.ckpt`.
pub fn run_algorithm(
    cfg: &ExperimentConfig,
    stage: &Stage,
    algorithm: Algorithm,
    out: Option<&Path>,
) -> Result<AlgorithmResult> {
    let mut curve = Vec::new();
    let run = train_alloc(
        &stage.grid,
        &cfg.game,
        &cfg.alloc,
        &stage.patrol,
        &stage.embeddings,
        algorithm,
        cfg.seed,
        Some(&mut curve),
    )?;
    let report = evaluate(
        &stage.grid,
        &cfg.game,
        &stage.patrol,
        &run.defender,
        &run.attacker,
        cfg.eval.episodes,
        eval_seed(cfg),
    )?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("curve_{algorithm}.csv")), &curve)?;
        report.write_csv(BufWriter::new(File::create(dir.join(format!("eval_{algorithm}.csv")))?))?;
        if let DefenderPlayer::Learned(p) = &run.defender {
            checkpoint::save(&p.policy.actor, &dir.join(format!("{algorithm}_defender.ckpt")))?;
        }
        checkpoint::save(&run.attacker.policy.actor, &dir.join(format!("{algorithm}_attacker.ckpt")))?;
    }
    Ok(AlgorithmResult { run, report })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub captures: usize,
    pub converged_at: Option<usize>,
}

impl EvalSummary {
    pub fn new(r: &AlgorithmResult) -> Self {
        Self {
            algorithm: r.run.algorithm,
            episodes: r.report.episodes,
            mean: r.report.mean,
            std: r.report.std,
            captures: r.report.captures,
            converged_at: r.run.converged_at,
        }
    }
}

/// Full pipeline for every algorithm in `cfg.eval.algorithms`. Artifacts and
/// a `run.json` record go to `out`.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<(Stage, Vec<AlgorithmResult>)> {
    let mut record = RunRecord::start(format!("run-{}", cfg.seed), cfg)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let stage = prepare(cfg, Some(out), None)?;
    record.metrics.push(out.join("patrol_metrics.csv"));
    record.checkpoints.push(out.join("patrol").join("drone.ckpt"));
    record.checkpoints.push(out.join("patrol").join("ranger.ckpt"));
    let mut results = Vec::new();
    for &algo in &cfg.eval.algorithms {
        let r = run_algorithm(cfg, &stage, algo, Some(out))?;
        record.metrics.push(out.join(format!("curve_{algo}.csv")));
        record.metrics.push(out.join(format!("eval_{algo}.csv")));
        if algo != Algorithm::Random {
            record.checkpoints.push(out.join(format!("{algo}_defender.ckpt")));
        }
        record.checkpoints.push(out.join(format!("{algo}_attacker.ckpt")));
        results.push(r);
    }
    let summary: Vec<EvalSummary> = results.iter().map(EvalSummary::new).collect();
    std::fs::write(out.join("eval.json"), serde_json::to_string_pretty(&summary)?)?;
    record.finish();
    record.save(&out.join("run.json"))?;
    Ok((stage, results))
}

/// Rebuilds an allocation player from a saved actor checkpoint.
pub fn load_player(cfg: &ExperimentConfig, stage: &Stage, defender: bool, path: &Path) -> Result<AllocationPlayer> {
    let side = if defender {
        &stage.embeddings.defender
    } else {
        &stage.embeddings.attacker
    };
    let mut player = new_player(&stage.grid, &cfg.alloc, side, cfg.seed)?;
    player.policy.actor = checkpoint::load_matching(path, player.policy.actor.layout())?;
    Ok(player)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub kappa: f64,
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

/// Retrains patrol and CombSGPO allocation at one uncertainty level and
/// evaluates the result.
pub fn sweep_level(cfg: &ExperimentConfig, beta: f64, kappa: f64) -> Result<(SweepRow, AlgorithmResult)> {
    let mut c = cfg.clone();
    c.game.beta = beta;
    c.game.kappa = kappa;
    let stage = prepare(&c, None, None)?;
    let r = run_algorithm(&c, &stage, Algorithm::Combsgpo, None)?;
    Ok((
        SweepRow {
            beta,
            kappa,
            mean: r.report.mean,
            std: r.report.std,
            episodes: r.report.episodes,
        },
        r,
    ))
}

pub fn uncertainty_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.eval
        .sweep_levels
        .iter()
        .map(|&(b, k)| sweep_level(cfg, b, k).map(|(row, _)| row))
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "beta,kappa,mean,std,episodes")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.beta, r.kappa, r.mean, r.std, r.episodes)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub algorithm: Algorithm,
    /// Seconds to the plateau, or to the end of the budget when none was reached.
    pub seconds: Vec<f64>,
    pub converged: Vec<bool>,
    pub mean: f64,
    pub std: f64,
}

/// Wall-clock allocation training time to the plateau criterion, repeated
/// over `cfg.eval.timing_runs` seeds on the shared stage.
pub fn timing_report(cfg: &ExperimentConfig, stage: &Stage, algorithms: &[Algorithm]) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for &algo in algorithms {
        let mut seconds = Vec::new();
        let mut converged = Vec::new();
        for r in 0..cfg.eval.timing_runs {
            let mut c = cfg.clone();
            c.alloc.stop_at_plateau = true;
            let run = train_alloc(
                &stage.grid,
                &c.game,
                &c.alloc,
                &stage.patrol,
                &stage.embeddings,
                algo,
                seed::split(cfg.seed, "timing", r as u64),
                None,
            )?;
            let at = run.converged_at.unwrap_or(run.seconds.len() - 1);
            seconds.push(run.seconds[at]);
            converged.push(run.converged_at.is_some());
        }
        let n = seconds.len() as f64;
        let mean = seconds.iter().sum::<f64>() / n;
        let std = if seconds.len() > 1 {
            (seconds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        rows.push(TimingRow {
            algorithm: algo,
            seconds,
            converged,
            mean,
            std,
        });
    }
    Ok(rows)
}

pub fn write_timing_csv<W: Write>(rows: &[TimingRow], mut out: W) -> Result<()> {
    writeln!(out, "algorithm,mean_seconds,std_seconds,runs,converged")?;
    for r in rows {
        let conv = r.converged.iter().filter(|&&c| c).count();
        writeln!(out, "{},{},{},{},{conv}", r.algorithm, r.mean, r.std, r.seconds.len())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub trace: PathBuf,
    pub config_hash: String,
    pub steps: usize,
    pub total_reward: f64,
    pub captures: usize,
}

/// Records one greedy episode from random allocations and writes the
/// JSON-lines trace plus a manifest next to it.
pub fn export_trace(cfg: &ExperimentConfig, stage: &Stage, episode: u64, path: &Path) -> Result<TraceManifest> {
    let mut rng = seed::stream(cfg.seed, "trace-placement", episode);
    let placement = random_placement(&stage.grid, &cfg.game, &mut rng);
    let mut model = crate::attacker::AttackerModel::default();
    let summary = play_episode(
        &stage.grid,
        &cfg.game,
        &placement,
        &stage.patrol,
        &mut model,
        0.0,
        seed::split(cfg.seed, "trace-engine", episode),
        &mut rng,
        true,
    )?;
    let trace = summary.trace.ok_or_else(|| Error::Trace("episode was not recorded".into()))?;
    let mut w = BufWriter::new(File::create(path)?);
    trace.write_jsonl(&mut w)?;
    w.flush()?;
    let manifest = TraceManifest {
        trace: path.to_path_buf(),
        config_hash: cfg.hash()?,
        steps: trace.steps.len(),
        total_reward: trace.total_reward(),
        captures: trace.captures(),
    };
    std::fs::write(path.with_extension("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a trace and replays it through a fresh engine.
pub fn replay_trace(path: &Path) -> Result<(Trace, f64)> {
    let trace = Trace::read_jsonl(BufReader::new(File::open(path)?))?;
    let total = trace.replay()?;
    Ok((trace, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::AllocConfig;
    use crate::harness::config::GridConfig;
    use crate::patrol::PatrolConfig;

    pub(crate) fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk();
        cfg.grid = GridConfig {
            width: 5,
            height: 5,
            ..GridConfig::default()
        };
        cfg.game.max_steps = 8;
        cfg.patrol = PatrolConfig {
            episodes: 4,
            batch: 8,
            warmup: 8,
            ..PatrolConfig::default()
        };
        cfg.alloc = AllocConfig {
            defender_k: 4,
            attacker_k: 2,
            hidden: 4,
            n_s: 2,
            iterations: 3,
            dataset_size: 40,
            ae_epochs: 1,
            ..AllocConfig::default()
        };
        cfg.eval.episodes = 5;
        cfg.eval.timing_runs = 2;
        cfg
    }

    #[test]
    fn pipeline_writes_reproducible_artifacts() {
        let cfg = tiny();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (stage, ra) = run_pipeline(&cfg, a.path()).unwrap();
        let (_, rb) = run_pipeline(&cfg, b.path()).unwrap();
        assert_eq!(ra.len(), 4);
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(x.report, y.report);
        }
        for name in ["patrol_metrics.csv", "curve_combsgpo.csv", "eval_pg.csv", "curve_random.csv"] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
        let record: RunRecord =
            serde_json::from_str(&std::fs::read_to_string(a.path().join("run.json")).unwrap()).unwrap();
        assert_eq!(record.config_hash, cfg.hash().unwrap());
        assert!(record.checkpoints.iter().all(|p| p.exists()));
        assert!(!a.path().join("random_defender.ckpt").exists());

        let player = load_player(&cfg, &stage, true, &a.path().join("combsgpo_defender.ckpt")).unwrap();
        if let DefenderPlayer::Learned(p) = &ra[0].run.defender {
            assert_eq!(player.policy.actor.values(), p.policy.actor.values());
        }
        assert!(load_player(&cfg, &stage, true, &a.path().join("missing.ckpt")).is_err());
        let reloaded = prepare(&cfg, None, Some(&a.path().join("patrol"))).unwrap();
        assert_eq!(reloaded.patrol.drone.params, stage.patrol.drone.params);
    }

    #[test]
    fn traces_replay_and_match_the_manifest() {
        let cfg = tiny();
        let stage = prepare(&cfg, None, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episode.jsonl");
        let m = export_trace(&cfg, &stage, 0, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), m.steps + 1);
        let (trace, total) = replay_trace(&path).unwrap();
        assert_eq!(total.to_bits(), m.total_reward.to_bits());
        assert_eq!(trace.captures(), m.captures);
        assert!(path.with_extension("manifest.json").exists());
    }

    #[test]
    fn sweep_and_timing_produce_one_row_each() {
        let mut cfg = tiny();
        cfg.eval.sweep_levels = vec![(0.0, 0.0), (1.0, 1.0)];
        let rows = uncertainty_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[1].beta, rows[1].kappa), (1.0, 1.0));
        let mut csv = Vec::new();
        write_sweep_csv(&rows, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);

        let stage = prepare(&cfg, None, None).unwrap();
        let t = timing_report(&cfg, &stage, &[Algorithm::Combsgpo, Algorithm::Pg]).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|r| r.seconds.len() == 2 && r.mean >= 0.0));
    }
}
