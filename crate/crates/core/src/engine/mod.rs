//! Patrolling-stage simulator.
//!
//! Within one step events resolve in a fixed order: simultaneous movement,
//! drone detection, drone communication, ranger captures, fleeing attackers
//! leaving through an edge, and finally damage by attackers that are still
//! active. Captures come before the edge exit so a ranger standing on an edge
//! cell catches an attacker that is fleeing through it.

pub mod trace;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, GridWorld, Move};
use crate::seed::Rng;

pub const DRONE_ACTIONS: usize = 15;
pub const RANGER_ACTIONS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    pub drones: usize,
    pub rangers: usize,
    pub attackers: usize,
    /// Episode horizon `T`.
    pub max_steps: usize,
    /// Probability that a co-located drone misses an attacker.
    pub beta: f64,
    /// Probability that an attacker misses a drone's signal.
    pub kappa: f64,
    pub capture_reward: f64,
    /// Damage per attacked cell is `damage_scale * density`.
    pub damage_scale: f64,
    pub comm_reward: f64,
    pub false_comm_penalty: f64,
    pub gamma: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            drones: 3,
            rangers: 2,
            attackers: 1,
            max_steps: 100,
            beta: 0.0,
            kappa: 0.0,
            capture_reward: 10.0,
            damage_scale: 1.0,
            comm_reward: 0.1,
            false_comm_penalty: -0.2,
            gamma: 0.99,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.beta) || !unit(self.kappa) {
            return Err(Error::Config(format!(
                "beta ({}) and kappa ({}) must lie in [0,1]",
                self.beta, self.kappa
            )));
        }
        if !unit(self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0,1]", self.gamma)));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.capture_reward <= 0.0 || self.damage_scale <= 0.0 {
            return Err(Error::Config("capture_reward and damage_scale must be positive".into()));
        }
        if self.false_comm_penalty >= 0.0 {
            return Err(Error::Config("false_comm_penalty must be negative".into()));
        }
        Ok(())
    }

    pub fn defenders(&self) -> usize {
        self.drones + self.rangers
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comm {
    Signal,
    Notify,
    NoOp,
}

impl Comm {
    pub const ALL: [Comm; 3] = [Comm::Signal, Comm::Notify, Comm::NoOp];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Composite drone action; `index = move * 3 + comm`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DroneAction {
    #[serde(rename = "move")]
    pub mv: Move,
    pub comm: Comm,
}

impl DroneAction {
    pub const fn new(mv: Move, comm: Comm) -> Self {
        Self { mv, comm }
    }

    pub fn index(self) -> usize {
        self.mv.index() * Comm::ALL.len() + self.comm.index()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        let mv = Move::from_index(i / Comm::ALL.len())?;
        Some(Self::new(mv, Comm::ALL[i % Comm::ALL.len()]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackerStatus {
    Active,
    Fleeing,
    Caught,
    Fled,
}

impl AttackerStatus {
    /// Still on the board and visible to detectors.
    pub fn is_present(self) -> bool {
        matches!(self, Self::Active | Self::Fleeing)
    }

    pub fn is_resolved(self) -> bool {
        !self.is_present()
    }

    /// Whether `self -> next` is an allowed transition (including staying put).
    pub fn can_become(self, next: Self) -> bool {
        use AttackerStatus::*;
        matches!(
            (self, next),
            (Active, Active | Fleeing | Caught)
                | (Fleeing, Fleeing | Caught | Fled)
                | (Caught, Caught)
                | (Fled, Fled)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackerState {
    pub cell: Cell,
    pub status: AttackerStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub t: usize,
    pub drones: Vec<Cell>,
    pub rangers: Vec<Cell>,
    pub attackers: Vec<AttackerState>,
    /// Per defender agent (drones first, then rangers), per cell.
    pub visits: Vec<Vec<u32>>,
    /// Detector output of each drone in the last step.
    pub detections: Vec<bool>,
    /// Communication action of each drone in the last step.
    pub comms: Vec<Comm>,
    /// `(drone, cell)` notifications sent in the last step.
    pub notifications: Vec<(usize, Cell)>,
}

impl GameState {
    pub fn defender_cell(&self, agent: usize) -> Cell {
        if agent < self.drones.len() {
            self.drones[agent]
        } else {
            self.rangers[agent - self.drones.len()]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Event {
    Detection { drone: usize, cell: Cell },
    Signal { drone: usize, cell: Cell, justified: bool },
    Notify { drone: usize, cell: Cell, justified: bool },
    /// An active attacker perceived a signal and started fleeing.
    Deterred { attacker: usize, drone: usize },
    Capture { ranger: usize, attacker: usize, cell: Cell },
    /// A fleeing attacker left the park through an edge cell.
    Flee { attacker: usize, cell: Cell },
    Attack { attacker: usize, cell: Cell, damage: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub events: Vec<Event>,
}

/// Draws the detector output of a drone. No false positives.
pub fn detect(colocated: bool, beta: f64, rng: &mut Rng) -> bool {
    colocated && rng.gen::<f64>() >= beta
}

/// Whether an attacker perceives a signal. An absent signal is never perceived.
pub fn observe_signal(signal_present: bool, kappa: f64, rng: &mut Rng) -> bool {
    signal_present && rng.gen::<f64>() >= kappa
}

/// Defender team reward for one step's events.
pub fn reward_accounting(events: &[Event], config: &GameConfig, grid: &GridWorld) -> f64 {
    events
        .iter()
        .map(|e| match e {
            Event::Capture { .. } => config.capture_reward,
            Event::Attack { cell, .. } => -config.damage_scale * grid.density_at(*cell),
            Event::Signal { justified, .. } | Event::Notify { justified, .. } => {
                if *justified {
                    config.comm_reward
                } else {
                    config.false_comm_penalty
                }
            }
            Event::Detection { .. } | Event::Deterred { .. } | Event::Flee { .. } => 0.0,
        })
        .fold(0.0, |acc, r| acc + r)
}

pub fn is_terminal(state: &GameState, config: &GameConfig) -> bool {
    state.t >= config.max_steps || state.attackers.iter().all(|a| a.status.is_resolved())
}

/// Undiscounted defender return `R^d`.
pub fn episode_return<'a, I>(outcomes: I) -> f64
where
    I: IntoIterator<Item = &'a StepOutcome>,
{
    outcomes.into_iter().fold(0.0, |acc, o| acc + o.reward)
}

/// Attacker payoff; the game is zero-sum.
pub fn attacker_return(defender_return: f64) -> f64 {
    -defender_return
}

#[derive(Clone, Copy, Debug)]
pub struct Engine<'a> {
    pub grid: &'a GridWorld,
    pub config: &'a GameConfig,
}

impl<'a> Engine<'a> {
    pub fn new(grid: &'a GridWorld, config: &'a GameConfig) -> Self {
        Self { grid, config }
    }

    pub fn init(&self, drones: &[Cell], rangers: &[Cell], attackers: &[Cell]) -> Result<GameState> {
        let cfg = self.config;
        for (what, got, want) in [
            ("drone", drones.len(), cfg.drones),
            ("ranger", rangers.len(), cfg.rangers),
            ("attacker", attackers.len(), cfg.attackers),
        ] {
            if got != want {
                return Err(Error::Config(format!(
                    "{what} allocation has {got} cells, config expects {want}"
                )));
            }
        }
        if let Some(c) = drones
            .iter()
            .chain(rangers)
            .chain(attackers)
            .find(|c| !self.grid.contains(**c))
        {
            return Err(Error::Config(format!("allocated cell {c:?} outside the grid")));
        }
        let mut visits = vec![vec![0u32; self.grid.n_cells()]; cfg.defenders()];
        for (agent, c) in drones.iter().chain(rangers).enumerate() {
            visits[agent][self.grid.index(*c)] += 1;
        }
        Ok(GameState {
            t: 0,
            drones: drones.to_vec(),
            rangers: rangers.to_vec(),
            attackers: attackers
                .iter()
                .map(|&cell| AttackerState {
                    cell,
                    status: AttackerStatus::Active,
                })
                .collect(),
            visits,
            detections: vec![false; cfg.drones],
            comms: vec![Comm::NoOp; cfg.drones],
            notifications: Vec::new(),
        })
    }

    pub fn is_terminal(&self, state: &GameState) -> bool {
        is_terminal(state, self.config)
    }

    pub fn step(
        &self,
        state: &mut GameState,
        drone_actions: &[DroneAction],
        ranger_moves: &[Move],
        attacker_moves: &[Move],
        rng: &mut Rng,
    ) -> Result<StepOutcome> {
        if self.is_terminal(state) {
            return Err(Error::Terminal);
        }
        for (got, want) in [
            (drone_actions.len(), state.drones.len()),
            (ranger_moves.len(), state.rangers.len()),
            (attacker_moves.len(), state.attackers.len()),
        ] {
            if got != want {
                return Err(Error::ShapeMismatch {
                    expected: want,
                    got,
                });
            }
        }
        let grid = self.grid;
        let cfg = self.config;
        let mut events = Vec::new();

        for (c, a) in state.drones.iter_mut().zip(drone_actions) {
            *c = grid.apply_move(*c, a.mv);
        }
        for (c, m) in state.rangers.iter_mut().zip(ranger_moves) {
            *c = grid.apply_move(*c, *m);
        }
        for (a, m) in state.attackers.iter_mut().zip(attacker_moves) {
            if a.status.is_present() {
                a.cell = grid.apply_move(a.cell, *m);
            }
        }

        for (i, &cell) in state.drones.iter().enumerate() {
            let colocated = state
                .attackers
                .iter()
                .any(|a| a.status.is_present() && a.cell == cell);
            let seen = detect(colocated, cfg.beta, rng);
            state.detections[i] = seen;
            if seen {
                events.push(Event::Detection { drone: i, cell });
            }
        }

        state.notifications.clear();
        for (i, action) in drone_actions.iter().enumerate() {
            let cell = state.drones[i];
            let justified = state.detections[i];
            state.comms[i] = action.comm;
            match action.comm {
                Comm::Signal => {
                    events.push(Event::Signal {
                        drone: i,
                        cell,
                        justified,
                    });
                    for (j, a) in state.attackers.iter_mut().enumerate() {
                        if a.status == AttackerStatus::Active
                            && a.cell == cell
                            && observe_signal(true, cfg.kappa, rng)
                        {
                            a.status = AttackerStatus::Fleeing;
                            events.push(Event::Deterred { attacker: j, drone: i });
                        }
                    }
                }
                Comm::Notify => {
                    events.push(Event::Notify {
                        drone: i,
                        cell,
                        justified,
                    });
                    state.notifications.push((i, cell));
                }
                Comm::NoOp => {}
            }
        }

        for (j, a) in state.attackers.iter_mut().enumerate() {
            if !a.status.is_present() {
                continue;
            }
            if let Some(r) = state.rangers.iter().position(|&c| c == a.cell) {
                a.status = AttackerStatus::Caught;
                events.push(Event::Capture {
                    ranger: r,
                    attacker: j,
                    cell: a.cell,
                });
            }
        }

        for (j, a) in state.attackers.iter_mut().enumerate() {
            if a.status == AttackerStatus::Fleeing && grid.is_edge(a.cell) {
                a.status = AttackerStatus::Fled;
                events.push(Event::Flee {
                    attacker: j,
                    cell: a.cell,
                });
            }
        }

        for (j, a) in state.attackers.iter().enumerate() {
            if a.status == AttackerStatus::Active {
                events.push(Event::Attack {
                    attacker: j,
                    cell: a.cell,
                    damage: cfg.damage_scale * grid.density_at(a.cell),
                });
            }
        }

        let reward = reward_accounting(&events, cfg, grid);
        state.t += 1;
        for (agent, c) in state.drones.iter().chain(&state.rangers).enumerate() {
            state.visits[agent][grid.index(*c)] += 1;
        }
        Ok(StepOutcome { reward, events })
    }
}
