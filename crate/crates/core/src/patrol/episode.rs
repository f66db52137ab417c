//! Playing one patrol episode with Q-network defenders and the heuristic attacker.

use super::dqn::{epsilon_greedy, legal_mask, DdqnPair};
use super::observation::{encode_observation, AgentId, AgentKind, DensityChannel};
use super::replay::Transition;
use crate::attacker::AttackerModel;
use crate::engine::trace::Trace;
use crate::engine::{DroneAction, Engine, GameConfig, GameState, StepOutcome};
use crate::error::Result;
use crate::grid::{Cell, GridWorld, Move};
use crate::nn::{Network, ParamVector};
use crate::seed::{self, Rng};

/// Frozen Q-network parameters for one agent kind.
#[derive(Clone, Debug)]
pub struct QPolicy {
    pub net: Network,
    pub params: ParamVector,
}

impl QPolicy {
    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.net.predict(&self.params, obs)
    }
}

/// Anything that scores observations for both defender kinds.
pub trait DefenderQ {
    fn q_values(&self, kind: AgentKind, obs: &[f64]) -> Result<Vec<f64>>;
    fn density_channel(&self) -> DensityChannel;
}

/// Frozen defender patrol policy (both kinds).
#[derive(Clone, Debug)]
pub struct PatrolPolicy {
    pub drone: QPolicy,
    pub ranger: QPolicy,
    pub density: DensityChannel,
}

impl DefenderQ for PatrolPolicy {
    fn q_values(&self, kind: AgentKind, obs: &[f64]) -> Result<Vec<f64>> {
        match kind {
            AgentKind::Drone => self.drone.q_values(obs),
            AgentKind::Ranger => self.ranger.q_values(obs),
        }
    }

    fn density_channel(&self) -> DensityChannel {
        self.density
    }
}

/// The trainable pairs for both kinds.
#[derive(Clone, Debug)]
pub struct PatrolNets {
    pub drone: DdqnPair,
    pub ranger: DdqnPair,
    pub density: DensityChannel,
}

impl PatrolNets {
    pub fn frozen(&self) -> PatrolPolicy {
        PatrolPolicy {
            drone: QPolicy {
                net: self.drone.net.clone(),
                params: self.drone.online.clone(),
            },
            ranger: QPolicy {
                net: self.ranger.net.clone(),
                params: self.ranger.online.clone(),
            },
            density: self.density,
        }
    }
}

impl DefenderQ for PatrolNets {
    fn q_values(&self, kind: AgentKind, obs: &[f64]) -> Result<Vec<f64>> {
        match kind {
            AgentKind::Drone => self.drone.q_values(obs),
            AgentKind::Ranger => self.ranger.q_values(obs),
        }
    }

    fn density_channel(&self) -> DensityChannel {
        self.density
    }
}

/// Initial cells of every team.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    pub drones: Vec<Cell>,
    pub rangers: Vec<Cell>,
    pub attackers: Vec<Cell>,
}

impl Placement {
    pub fn defenders(&self) -> Vec<Cell> {
        self.drones.iter().chain(&self.rangers).copied().collect()
    }
}

/// One agent's transition from the last step.
#[derive(Clone, Debug)]
pub struct AgentTransition {
    pub kind: AgentKind,
    pub transition: Transition,
}

/// A steppable patrol episode. The engine draws from its own stream seeded
/// with `engine_seed`, so recorded traces replay exactly.
pub struct Episode<'a> {
    engine: Engine<'a>,
    state: GameState,
    engine_rng: Rng,
    agents: Vec<AgentId>,
    obs: Vec<Vec<f64>>,
    density: DensityChannel,
    trace: Option<Trace>,
    total: f64,
}

impl<'a> Episode<'a> {
    pub fn new(
        grid: &'a GridWorld,
        config: &'a GameConfig,
        placement: &Placement,
        attacker: &mut AttackerModel,
        density: DensityChannel,
        engine_seed: u64,
        record_trace: bool,
    ) -> Result<Self> {
        let engine = Engine::new(grid, config);
        let state = engine.init(&placement.drones, &placement.rangers, &placement.attackers)?;
        attacker.begin_episode(grid, &placement.defenders())?;
        let agents: Vec<AgentId> = (0..config.drones)
            .map(AgentId::drone)
            .chain((0..config.rangers).map(AgentId::ranger))
            .collect();
        let obs = agents
            .iter()
            .map(|&a| encode_observation(&state, grid, a, density).map(|o| o.data))
            .collect::<Result<Vec<_>>>()?;
        let trace = record_trace.then(|| Trace::new(engine_seed, grid, config, &state));
        Ok(Self {
            engine,
            state,
            engine_rng: seed::from_seed(engine_seed),
            agents,
            obs,
            density,
            trace,
            total: 0.0,
        })
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.engine.is_terminal(&self.state)
    }

    /// Defender return accumulated so far.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn into_trace(self) -> Option<Trace> {
        self.trace
    }

    fn agent_cell(&self, a: AgentId) -> Cell {
        match a.kind {
            AgentKind::Drone => self.state.drones[a.index],
            AgentKind::Ranger => self.state.rangers[a.index],
        }
    }

    /// Advances one step. Transitions are returned when `collect` is set.
    pub fn step<Q: DefenderQ + ?Sized>(
        &mut self,
        policy: &Q,
        attacker: &mut AttackerModel,
        epsilon: f64,
        policy_rng: &mut Rng,
        collect: bool,
    ) -> Result<(StepOutcome, Vec<AgentTransition>)> {
        let grid = self.engine.grid;
        let mut actions = Vec::with_capacity(self.agents.len());
        for (i, &a) in self.agents.iter().enumerate() {
            let mask = legal_mask(grid, self.agent_cell(a), a.kind);
            let q = policy.q_values(a.kind, &self.obs[i])?;
            actions.push(epsilon_greedy(&q, mask, epsilon, policy_rng));
        }
        let nd = self.state.drones.len();
        let drone_actions: Vec<DroneAction> = actions[..nd]
            .iter()
            .map(|&i| DroneAction::from_index(i).expect("legal drone action"))
            .collect();
        let ranger_moves: Vec<Move> = actions[nd..]
            .iter()
            .map(|&i| Move::from_index(i).expect("legal ranger move"))
            .collect();
        let attacker_moves = attacker.moves(grid, &self.state);
        let outcome = self.engine.step(
            &mut self.state,
            &drone_actions,
            &ranger_moves,
            &attacker_moves,
            &mut self.engine_rng,
        )?;
        attacker.end_step()?;
        self.total += outcome.reward;
        if let Some(t) = self.trace.as_mut() {
            t.record(&self.state, &drone_actions, &ranger_moves, &attacker_moves, &outcome);
        }
        let done = self.is_done();
        let next: Vec<Vec<f64>> = self
            .agents
            .iter()
            .map(|&a| encode_observation(&self.state, grid, a, self.density).map(|o| o.data))
            .collect::<Result<_>>()?;
        let mut transitions = Vec::new();
        if collect {
            for (i, &a) in self.agents.iter().enumerate() {
                transitions.push(AgentTransition {
                    kind: a.kind,
                    transition: Transition {
                        obs: self.obs[i].iter().map(|&v| v as f32).collect(),
                        action: actions[i],
                        reward: outcome.reward,
                        next_obs: next[i].iter().map(|&v| v as f32).collect(),
                        next_legal: legal_mask(grid, self.agent_cell(a), a.kind),
                        done,
                    },
                });
            }
        }
        self.obs = next;
        Ok((outcome, transitions))
    }
}

/// Summary of a finished episode.
#[derive(Clone, Debug)]
pub struct EpisodeSummary {
    pub defender_return: f64,
    pub steps: usize,
    pub outcomes: Vec<StepOutcome>,
    pub trace: Option<Trace>,
}

/// Plays a whole episode with a fixed exploration rate.
#[allow(clippy::too_many_arguments)]
pub fn play_episode<Q: DefenderQ + ?Sized>(
    grid: &GridWorld,
    config: &GameConfig,
    placement: &Placement,
    policy: &Q,
    attacker: &mut AttackerModel,
    epsilon: f64,
    engine_seed: u64,
    policy_rng: &mut Rng,
    record_trace: bool,
) -> Result<EpisodeSummary> {
    let mut ep = Episode::new(
        grid,
        config,
        placement,
        attacker,
        policy.density_channel(),
        engine_seed,
        record_trace,
    )?;
    let mut outcomes = Vec::new();
    while !ep.is_done() {
        let (o, _) = ep.step(policy, attacker, epsilon, policy_rng, false)?;
        outcomes.push(o);
    }
    Ok(EpisodeSummary {
        defender_return: ep.total(),
        steps: outcomes.len(),
        outcomes,
        trace: ep.into_trace(),
    })
}
