//! Evaluation of trained policies and attack heatmaps.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alloc::{placement, Allocation, Player};
use crate::attacker::AttackerModel;
use crate::engine::{Event, GameConfig, DRONE_ACTIONS, RANGER_ACTIONS};
use crate::error::{Error, Result};
use crate::grid::{GridWorld, Move};
use crate::patrol::{play_episode, AgentKind, DefenderQ, DensityChannel};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean: f64,
    /// Sample standard deviation of the per-episode returns.
    pub std: f64,
    pub captures: usize,
    pub returns: Vec<f64>,
}

impl EvalReport {
    pub fn from_returns(returns: Vec<f64>, captures: usize) -> Result<Self> {
        let n = returns.len();
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        let mean = returns.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            episodes: n,
            mean,
            std,
            captures,
            returns,
        })
    }

    pub fn standard_error(&self) -> f64 {
        self.std / (self.episodes as f64).sqrt()
    }

    /// One `episode,return` row per episode.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "episode,return")?;
        for (i, r) in self.returns.iter().enumerate() {
            writeln!(out, "{i},{r}")?;
        }
        Ok(())
    }
}

/// `sqrt(se_a² + se_b²)`.
pub fn pooled_standard_error(a: &EvalReport, b: &EvalReport) -> f64 {
    (a.standard_error().powi(2) + b.standard_error().powi(2)).sqrt()
}

/// Plays `episodes` full games. Both allocations are sampled from the given
/// players; the patrol stage runs greedily with a fresh attacker model.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<D, A, Q>(
    grid: &GridWorld,
    game: &GameConfig,
    patrol: &Q,
    defender: &D,
    attacker: &A,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport>
where
    D: Player<Action = Allocation>,
    A: Player<Action = Allocation>,
    Q: DefenderQ + ?Sized,
{
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut sample_rng = seed::stream(seed, "eval-sample", 0);
    let mut policy_rng = seed::stream(seed, "eval-policy", 0);
    let mut model = AttackerModel::default();
    let mut returns = Vec::with_capacity(episodes);
    let mut captures = 0;
    for i in 0..episodes {
        let (d, _) = defender.sample(&mut sample_rng)?;
        let (a, _) = attacker.sample(&mut sample_rng)?;
        let summary = play_episode(
            grid,
            game,
            &placement(&d, &a)?,
            patrol,
            &mut model,
            0.0,
            seed::split(seed, "eval-episode", i as u64),
            &mut policy_rng,
            false,
        )?;
        captures += summary
            .outcomes
            .iter()
            .flat_map(|o| &o.events)
            .filter(|e| matches!(e, Event::Capture { .. }))
            .count();
        returns.push(summary.defender_return);
    }
    EvalReport::from_returns(returns, captures)
}

/// Defenders that stay put and never communicate.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdlePatrol;

impl DefenderQ for IdlePatrol {
    fn q_values(&self, kind: AgentKind, _obs: &[f64]) -> Result<Vec<f64>> {
        let stay = Move::Stay.index();
        Ok(match kind {
            AgentKind::Drone => {
                let mut q = vec![0.0; DRONE_ACTIONS];
                q[stay * 3 + crate::engine::Comm::NoOp.index()] = 1.0;
                q
            }
            AgentKind::Ranger => {
                let mut q = vec![0.0; RANGER_ACTIONS];
                q[stay] = 1.0;
                q
            }
        })
    }

    fn density_channel(&self) -> DensityChannel {
        DensityChannel::default()
    }
}

/// Attack counts per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub samples: usize,
    pub counts: Vec<u64>,
    pub total_attacks: u64,
    /// The attacker's score map after the last sample.
    pub scores: Vec<f64>,
}

impl Heatmap {
    /// Share of attacks that landed on the top tenth of cells by `scores`
    /// (at least one cell).
    pub fn top_decile_mass(&self, scores: &[f64]) -> f64 {
        if self.total_attacks == 0 {
            return 0.0;
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let top = (scores.len() / 10).max(1);
        let hits: u64 = order[..top].iter().map(|&i| self.counts[i]).sum();
        hits as f64 / self.total_attacks as f64
    }

    /// `row,col,count` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "row,col,count")?;
        for r in 0..self.height {
            for c in 0..self.width {
                writeln!(out, "{r},{c},{}", self.counts[r * self.width + c])?;
            }
        }
        Ok(())
    }

    /// Grayscale PNG with `scale` pixels per cell; white is the busiest cell.
    pub fn write_png(&self, path: &Path, scale: u32) -> Result<()> {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let scale = scale.max(1);
        let img = image::GrayImage::from_fn(self.width as u32 * scale, self.height as u32 * scale, |x, y| {
            let i = (y / scale) as usize * self.width + (x / scale) as usize;
            image::Luma([(255.0 * self.counts[i] as f64 / max).round() as u8])
        });
        img.save(path).map_err(|e| Error::Io(std::io::Error::other(e)))
    }
}

/// Simulates `samples` games with allocations drawn from both players and
/// counts every attack by cell.
#[allow(clippy::too_many_arguments)]
pub fn attack_heatmap<D, A, Q>(
    grid: &GridWorld,
    game: &GameConfig,
    patrol: &Q,
    defender: &D,
    attacker: &A,
    samples: usize,
    seed: u64,
) -> Result<Heatmap>
where
    D: Player<Action = Allocation>,
    A: Player<Action = Allocation>,
    Q: DefenderQ + ?Sized,
{
    let mut sample_rng = seed::stream(seed, "heatmap-sample", 0);
    let mut policy_rng = seed::stream(seed, "heatmap-policy", 0);
    let mut model = AttackerModel::default();
    let mut counts = vec![0u64; grid.n_cells()];
    let mut total = 0u64;
    for i in 0..samples {
        let (d, _) = defender.sample(&mut sample_rng)?;
        let (a, _) = attacker.sample(&mut sample_rng)?;
        let summary = play_episode(
            grid,
            game,
            &placement(&d, &a)?,
            patrol,
            &mut model,
            0.0,
            seed::split(seed, "heatmap-episode", i as u64),
            &mut policy_rng,
            false,
        )?;
        for e in summary.outcomes.iter().flat_map(|o| &o.events) {
            if let Event::Attack { cell, .. } = e {
                counts[grid.index(*cell)] += 1;
                total += 1;
            }
        }
    }
    Ok(Heatmap {
        width: grid.width(),
        height: grid.height(),
        samples,
        counts,
        total_attacks: total,
        scores: model.scores().map(|s| s.scores.clone()).unwrap_or_default(),
    })
}
