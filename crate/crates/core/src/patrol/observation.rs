//! Per-agent 9-channel observation tensors.

use serde::{Deserialize, Serialize};

use crate::engine::{Comm, GameState};
use crate::error::{Error, Result};
use crate::grid::GridWorld;

pub const CHANNELS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Drone,
    Ranger,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AgentId {
    pub kind: AgentKind,
    pub index: usize,
}

impl AgentId {
    pub const fn drone(index: usize) -> Self {
        Self {
            kind: AgentKind::Drone,
            index,
        }
    }

    pub const fn ranger(index: usize) -> Self {
        Self {
            kind: AgentKind::Ranger,
            index,
        }
    }
}

/// How the density channel is filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityChannel {
    /// Density map restricted to cells the agent has visited.
    #[default]
    Visited,
    /// Density of the agent's current cell only, placed at that cell.
    Current,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTensor {
    pub height: usize,
    pub width: usize,
    /// Channel-major `CHANNELS x height x width`.
    pub data: Vec<f64>,
}

impl ObservationTensor {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Channels, in order:
/// 0 own position; 1 attacker detected in own cell; 2 other drones;
/// 3 other rangers; 4 per-drone detections; 5 notify flags; 6 signal flags;
/// 7 density memory; 8 summed visit counts over `t + 1`.
pub fn encode_observation(
    state: &GameState,
    grid: &GridWorld,
    agent: AgentId,
    density: DensityChannel,
) -> Result<ObservationTensor> {
    let n = grid.n_cells();
    let (own, visit_row) = match agent.kind {
        AgentKind::Drone => (state.drones.get(agent.index), agent.index),
        AgentKind::Ranger => (state.rangers.get(agent.index), state.drones.len() + agent.index),
    };
    let own = *own.ok_or_else(|| Error::UnknownAgent(format!("{:?} {}", agent.kind, agent.index)))?;
    let own_i = grid.index(own);
    let mut data = vec![0.0; CHANNELS * n];
    let mut set = |c: usize, i: usize, v: f64| data[c * n + i] = v;

    set(0, own_i, 1.0);
    let detected_here = state
        .drones
        .iter()
        .zip(&state.detections)
        .any(|(c, &d)| d && *c == own);
    if detected_here {
        set(1, own_i, 1.0);
    }
    for (i, c) in state.drones.iter().enumerate() {
        let ci = grid.index(*c);
        if !(agent.kind == AgentKind::Drone && agent.index == i) {
            set(2, ci, 1.0);
        }
        if state.detections[i] {
            set(4, ci, 1.0);
        }
        match state.comms[i] {
            Comm::Notify => set(5, ci, 1.0),
            Comm::Signal => set(6, ci, 1.0),
            Comm::NoOp => {}
        }
    }
    for (i, c) in state.rangers.iter().enumerate() {
        if !(agent.kind == AgentKind::Ranger && agent.index == i) {
            set(3, grid.index(*c), 1.0);
        }
    }
    match density {
        DensityChannel::Visited => {
            for (i, &v) in state.visits[visit_row].iter().enumerate() {
                if v > 0 {
                    set(7, i, grid.density()[i]);
                }
            }
        }
        DensityChannel::Current => set(7, own_i, grid.density()[own_i]),
    }
    let norm = (state.t + 1) as f64;
    for i in 0..n {
        let total: u32 = state.visits.iter().map(|row| row[i]).sum();
        if total > 0 {
            set(8, i, total as f64 / norm);
        }
    }
    Ok(ObservationTensor {
        height: grid.height(),
        width: grid.width(),
        data,
    })
}
