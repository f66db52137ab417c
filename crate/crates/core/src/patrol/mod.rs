//! Defender patrol learning: observations, replay, shared Double DQNs and
//! the centralised training loop.

pub mod dqn;
pub mod episode;
pub mod observation;
pub mod replay;

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attacker::AttackerModel;
use crate::engine::GameConfig;
use crate::error::{Error, Result};
use crate::grid::{Cell, GridWorld};
use crate::nn::checkpoint;
use crate::seed::{self, Rng};

pub use dqn::{ddqn_target, DdqnConfig, DdqnPair, EpsilonSchedule};
pub use episode::{play_episode, DefenderQ, Episode, EpisodeSummary, PatrolNets, PatrolPolicy, Placement, QPolicy};
pub use observation::{encode_observation, AgentId, AgentKind, DensityChannel, ObservationTensor, CHANNELS};
pub use replay::{ReplayBuffer, Transition};

pub const PATROL_METRICS_HEADER: &str = "episode,return,epsilon,buffer_fill,loss";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatrolConfig {
    pub episodes: usize,
    pub lr: f64,
    pub batch: usize,
    pub drone_buffer: usize,
    pub ranger_buffer: usize,
    /// Gradient updates between target syncs.
    pub drone_sync: u64,
    pub ranger_sync: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
    /// Environment steps between gradient updates.
    pub train_every: u64,
    /// Minimum buffer fill before updates start.
    pub warmup: usize,
    pub density_channel: DensityChannel,
}

impl Default for PatrolConfig {
    fn default() -> Self {
        Self {
            episodes: 1500,
            lr: 3e-4,
            batch: 32,
            drone_buffer: 20_000,
            ranger_buffer: 10_000,
            drone_sync: 20,
            ranger_sync: 50,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 25_000,
            train_every: 4,
            warmup: 500,
            density_channel: DensityChannel::Visited,
        }
    }
}

impl PatrolConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("patrol: {m}")));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch == 0 || self.drone_buffer == 0 || self.ranger_buffer == 0 {
            return bad("batch and buffer sizes must be positive");
        }
        if self.drone_sync == 0 || self.ranger_sync == 0 || self.train_every == 0 {
            return bad("sync periods and train_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return bad("epsilon bounds must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.eps_start,
            end: self.eps_end,
            decay_steps: self.eps_decay_steps,
        }
    }

    fn ddqn(&self, kind: AgentKind, gamma: f64) -> DdqnConfig {
        DdqnConfig {
            lr: self.lr,
            batch: self.batch,
            sync_every: match kind {
                AgentKind::Drone => self.drone_sync,
                AgentKind::Ranger => self.ranger_sync,
            },
            gamma,
        }
    }
}

pub fn random_cells(grid: &GridWorld, n: usize, rng: &mut Rng) -> Vec<Cell> {
    (0..n).map(|_| grid.cell_at(rng.gen_range(0..grid.n_cells()))).collect()
}

/// Uniformly random placement for every team; cells may repeat.
pub fn random_placement(grid: &GridWorld, config: &GameConfig, rng: &mut Rng) -> Placement {
    Placement {
        drones: random_cells(grid, config.drones, rng),
        rangers: random_cells(grid, config.rangers, rng),
        attackers: random_cells(grid, config.attackers, rng),
    }
}

pub fn init_nets(grid: &GridWorld, game: &GameConfig, patrol: &PatrolConfig, seed: u64) -> Result<PatrolNets> {
    let mut rng = seed::stream(seed, "patrol-init", 0);
    Ok(PatrolNets {
        drone: DdqnPair::new(AgentKind::Drone, grid, patrol.ddqn(AgentKind::Drone, game.gamma), &mut rng)?,
        ranger: DdqnPair::new(AgentKind::Ranger, grid, patrol.ddqn(AgentKind::Ranger, game.gamma), &mut rng)?,
        density: patrol.density_channel,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatrolLog {
    pub returns: Vec<f64>,
    pub losses: Vec<Option<f64>>,
}

/// Centralised training: random placements each episode, every agent's
/// transition goes into its kind's shared buffer, minibatch Double-DQN
/// updates every `train_every` environment steps.
pub fn train_patrol(
    grid: &GridWorld,
    game: &GameConfig,
    patrol: &PatrolConfig,
    seed: u64,
    mut metrics: Option<&mut dyn Write>,
) -> Result<(PatrolNets, PatrolLog)> {
    game.validate()?;
    patrol.validate()?;
    let mut nets = init_nets(grid, game, patrol, seed)?;
    let mut drone_buf = ReplayBuffer::new(patrol.drone_buffer)?;
    let mut ranger_buf = ReplayBuffer::new(patrol.ranger_buffer)?;
    let mut alloc_rng = seed::stream(seed, "patrol-alloc", 0);
    let mut policy_rng = seed::stream(seed, "patrol-policy", 0);
    let mut train_rng = seed::stream(seed, "patrol-train", 0);
    let schedule = patrol.epsilon();
    let mut attacker = AttackerModel::default();
    let mut log = PatrolLog::default();
    let mut global_step: u64 = 0;
    if let Some(w) = metrics.as_deref_mut() {
        writeln!(w, "{PATROL_METRICS_HEADER}")?;
    }
    for ep in 0..patrol.episodes {
        let placement = random_placement(grid, game, &mut alloc_rng);
        let engine_seed = seed::split(seed, "patrol-engine", ep as u64);
        let mut episode = Episode::new(
            grid,
            game,
            &placement,
            &mut attacker,
            nets.density,
            engine_seed,
            false,
        )?;
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        let mut eps = schedule.value(global_step);
        while !episode.is_done() {
            eps = schedule.value(global_step);
            let (_, transitions) = episode.step(&nets, &mut attacker, eps, &mut policy_rng, true)?;
            for t in transitions {
                match t.kind {
                    AgentKind::Drone => drone_buf.push(t.transition),
                    AgentKind::Ranger => ranger_buf.push(t.transition),
                }
            }
            global_step += 1;
            if global_step % patrol.train_every == 0 {
                let warm = patrol.warmup.max(patrol.batch);
                if drone_buf.len() >= warm {
                    loss_sum += nets.drone.update(&drone_buf, &mut train_rng)?;
                    loss_n += 1;
                }
                if ranger_buf.len() >= warm {
                    loss_sum += nets.ranger.update(&ranger_buf, &mut train_rng)?;
                    loss_n += 1;
                }
            }
        }
        let ret = episode.total();
        let loss = (loss_n > 0).then(|| loss_sum / loss_n as f64);
        if let Some(w) = metrics.as_deref_mut() {
            let fill = (drone_buf.len() + ranger_buf.len()) as f64
                / (drone_buf.capacity() + ranger_buf.capacity()) as f64;
            let loss_field = loss.map(|l| format!("{l:.8}")).unwrap_or_default();
            writeln!(w, "{ep},{ret:.6},{eps:.6},{fill:.6},{loss_field}")?;
        }
        log.returns.push(ret);
        log.losses.push(loss);
    }
    Ok((nets, log))
}

/// Writes `drone.ckpt` and `ranger.ckpt` into `dir`.
pub fn save_nets(nets: &PatrolNets, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    checkpoint::save(&nets.drone.online, &dir.join("drone.ckpt"))?;
    checkpoint::save(&nets.ranger.online, &dir.join("ranger.ckpt"))?;
    Ok(())
}

pub fn load_policy(grid: &GridWorld, game: &GameConfig, patrol: &PatrolConfig, dir: &Path) -> Result<PatrolPolicy> {
    let drone = DdqnPair::from_params(
        AgentKind::Drone,
        grid,
        patrol.ddqn(AgentKind::Drone, game.gamma),
        checkpoint::load(&dir.join("drone.ckpt"))?,
    )?;
    let ranger = DdqnPair::from_params(
        AgentKind::Ranger,
        grid,
        patrol.ddqn(AgentKind::Ranger, game.gamma),
        checkpoint::load(&dir.join("ranger.ckpt"))?,
    )?;
    Ok(PatrolNets {
        drone,
        ranger,
        density: patrol.density_channel,
    }
    .frozen())
}
