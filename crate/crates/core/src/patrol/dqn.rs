//! Shared Double-DQN learners for drones and rangers.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::observation::{AgentKind, CHANNELS};
use super::replay::{ReplayBuffer, Transition};
use crate::engine::{DRONE_ACTIONS, RANGER_ACTIONS};
use crate::error::{Error, Result};
use crate::grid::{Cell, GridWorld, Move};
use crate::nn::loss::q_loss;
use crate::nn::{Activation, AdamState, Layout, Network, ParamVector};
use crate::seed::Rng;

pub fn action_count(kind: AgentKind) -> usize {
    match kind {
        AgentKind::Drone => DRONE_ACTIONS,
        AgentKind::Ranger => RANGER_ACTIONS,
    }
}

/// Bitmask of legal actions for an agent standing on `cell`. Drone action
/// `i` moves with `Move::from_index(i / 3)`.
pub fn legal_mask(grid: &GridWorld, cell: Cell, kind: AgentKind) -> u32 {
    let moves: u32 = Move::ALL
        .iter()
        .filter(|&&m| grid.step(cell, m).is_some())
        .fold(0, |acc, m| acc | 1 << m.index());
    match kind {
        AgentKind::Ranger => moves,
        AgentKind::Drone => (0..DRONE_ACTIONS)
            .filter(|i| moves & (1 << (i / 3)) != 0)
            .fold(0, |acc, i| acc | 1 << i),
    }
}

fn legal_iter(mask: u32, n: usize) -> impl Iterator<Item = usize> {
    (0..n).filter(move |i| mask & (1 << i) != 0)
}

/// Argmax over legal actions; ties go to the lowest index.
pub fn greedy_action(q: &[f64], legal: u32) -> usize {
    let mut best = None;
    for i in legal_iter(legal, q.len()) {
        match best {
            Some(b) if q[i] <= q[b] => {}
            _ => best = Some(i),
        }
    }
    best.unwrap_or(q.len() - 1)
}

/// With probability `eps` a uniform legal action, otherwise the greedy one.
pub fn epsilon_greedy(q: &[f64], legal: u32, eps: f64, rng: &mut Rng) -> usize {
    let explore = eps >= 1.0 || (eps > 0.0 && rng.gen::<f64>() < eps);
    if explore {
        let legal: Vec<usize> = legal_iter(legal, q.len()).collect();
        legal[rng.gen_range(0..legal.len())]
    } else {
        greedy_action(q, legal)
    }
}

/// `y = r` when `done`, else `r + gamma * Q_target(s', argmax_a Q_online(s', a))`.
pub fn ddqn_target(
    reward: f64,
    done: bool,
    gamma: f64,
    online_next: &[f64],
    target_next: &[f64],
    legal_next: u32,
) -> f64 {
    if done {
        return reward;
    }
    reward + gamma * target_next[greedy_action(online_next, legal_next)]
}

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_steps: 25_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// conv(10, 3x3) → ReLU → conv(20, 3x3) → ReLU → 128 → ReLU → 64 → ReLU → actions.
pub fn q_network(name: &str, layout: &mut Layout, height: usize, width: usize, actions: usize) -> Result<Network> {
    Ok(Network::image(name, layout, CHANNELS, height, width)
        .conv2d(10, 3)?
        .act(Activation::Relu)
        .conv2d(20, 3)?
        .act(Activation::Relu)
        .dense(128)
        .act(Activation::Relu)
        .dense(64)
        .act(Activation::Relu)
        .dense(actions)
        .build())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdqnConfig {
    pub lr: f64,
    pub batch: usize,
    /// Gradient updates between target synchronisations.
    pub sync_every: u64,
    pub gamma: f64,
}

/// Online and target parameters for one agent kind, shared by every agent
/// of that kind.
#[derive(Clone, Debug)]
pub struct DdqnPair {
    pub kind: AgentKind,
    pub net: Network,
    pub online: ParamVector,
    pub target: ParamVector,
    pub adam: AdamState,
    pub config: DdqnConfig,
    pub updates: u64,
}

pub fn to_f64(obs: &[f32]) -> Vec<f64> {
    obs.iter().map(|&v| v as f64).collect()
}

impl DdqnPair {
    pub fn new(kind: AgentKind, grid: &GridWorld, config: DdqnConfig, rng: &mut Rng) -> Result<Self> {
        let mut layout = Layout::new();
        let name = match kind {
            AgentKind::Drone => "drone_q",
            AgentKind::Ranger => "ranger_q",
        };
        let net = q_network(name, &mut layout, grid.height(), grid.width(), action_count(kind))?;
        let mut online = ParamVector::zeros(layout.clone());
        net.init_uniform(&mut online, rng);
        let target = online.clone();
        Ok(Self {
            kind,
            net,
            adam: AdamState::new(online.len(), config.lr),
            online,
            target,
            config,
            updates: 0,
        })
    }

    /// Rebuilds a pair around loaded online parameters (target = online).
    pub fn from_params(kind: AgentKind, grid: &GridWorld, config: DdqnConfig, online: ParamVector) -> Result<Self> {
        let mut layout = Layout::new();
        let name = match kind {
            AgentKind::Drone => "drone_q",
            AgentKind::Ranger => "ranger_q",
        };
        let net = q_network(name, &mut layout, grid.height(), grid.width(), action_count(kind))?;
        if online.layout() != &layout {
            return Err(Error::Checkpoint(format!("{name}: checkpoint layout does not match the grid")));
        }
        Ok(Self {
            kind,
            net,
            adam: AdamState::new(online.len(), config.lr),
            target: online.clone(),
            online,
            config,
            updates: 0,
        })
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.net.predict(&self.online, obs)
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// Bootstrapped target for one stored transition.
    pub fn target_for(&self, t: &Transition) -> Result<f64> {
        if t.done {
            return Ok(t.reward);
        }
        let next = to_f64(&t.next_obs);
        let qo = self.net.predict(&self.online, &next)?;
        let qt = self.net.predict(&self.target, &next)?;
        Ok(ddqn_target(t.reward, false, self.config.gamma, &qo, &qt, t.next_legal))
    }

    /// Mean squared TD error over `batch` against fixed `targets`, and its
    /// gradient with respect to the online parameters.
    pub fn batch_loss_grad(&self, batch: &[&Transition], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() || batch.len() != targets.len() {
            return Err(Error::EmptySamples);
        }
        let mut grad = vec![0.0; self.online.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for (t, &y) in batch.iter().zip(targets) {
            let (q, cache) = self.net.forward(&self.online, &to_f64(&t.obs))?;
            let (l, mut g) = q_loss(&q, t.action, y);
            loss += l * scale;
            g.iter_mut().for_each(|v| *v *= scale);
            self.net.backward(&self.online, &cache, &g, &mut grad)?;
        }
        Ok((loss, grad))
    }

    /// One minibatch update from `buffer`; syncs the target on schedule.
    pub fn update(&mut self, buffer: &ReplayBuffer, rng: &mut Rng) -> Result<f64> {
        let idx = buffer.sample_indices(self.config.batch, rng)?;
        let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i).unwrap()).collect();
        let targets = batch
            .iter()
            .map(|t| self.target_for(t))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = self.batch_loss_grad(&batch, &targets)?;
        self.adam.step(&mut self.online, &grad)?;
        self.updates += 1;
        if self.updates % self.config.sync_every == 0 {
            self.sync_target();
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn cfg() -> DdqnConfig {
        DdqnConfig {
            lr: 3e-4,
            batch: 4,
            sync_every: 3,
            gamma: 0.99,
        }
    }

    #[test]
    fn target_hand_cases() {
        let online = [0.1, 0.5, 0.9, 0.2];
        let target = [7.0, 8.0, 3.0, 9.0];
        let y = ddqn_target(1.0, false, 0.99, &online, &target, 0b1111);
        assert_eq!(y, 1.0 + 0.99 * 3.0);
        assert!((y - 3.97).abs() < 1e-12);
        assert_eq!(ddqn_target(-2.5, true, 0.99, &online, &target, 0b1111), -2.5);
        assert_eq!(ddqn_target(4.0, false, 0.0, &online, &target, 0b1111), 4.0);
        // action 2 masked out: argmax moves to action 1
        assert_eq!(ddqn_target(0.0, false, 1.0, &online, &target, 0b1011), 8.0);
    }

    #[test]
    fn epsilon_schedule() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.value(0), 1.0);
        assert_eq!(e.value(25_000), 0.05);
        assert_eq!(e.value(1_000_000), 0.05);
        assert!((e.value(12_500) - 0.525).abs() < 1e-12);
    }

    #[test]
    fn legal_masks() {
        let g = GridWorld::random(5, 5, 0).unwrap();
        // corner (0,0): Down, Right, Stay
        assert_eq!(legal_mask(&g, Cell::new(0, 0), AgentKind::Ranger), 0b11010);
        let d = legal_mask(&g, Cell::new(0, 0), AgentKind::Drone);
        assert_eq!(d.count_ones(), 9);
        assert_eq!(legal_mask(&g, Cell::new(2, 2), AgentKind::Drone).count_ones(), 15);
        assert_eq!(DRONE_ACTIONS, 5 * 3);
    }

    #[test]
    fn greedy_is_deterministic_argmax() {
        let q = [0.0, 2.0, 2.0, -1.0, 1.0];
        assert_eq!(greedy_action(&q, 0b11111), 1);
        assert_eq!(greedy_action(&q, 0b11101), 2);
        let mut rng = seed::from_seed(0);
        for _ in 0..10 {
            assert_eq!(epsilon_greedy(&q, 0b11111, 0.0, &mut rng), 1);
        }
    }

    #[test]
    fn uniform_exploration_chi_square() {
        let q = [0.0; DRONE_ACTIONS];
        let g = GridWorld::random(5, 5, 0).unwrap();
        let mask = legal_mask(&g, Cell::new(0, 0), AgentKind::Drone);
        let mut rng = seed::from_seed(11);
        let mut counts = [0usize; DRONE_ACTIONS];
        let n = 10_000;
        for _ in 0..n {
            counts[epsilon_greedy(&q, mask, 1.0, &mut rng)] += 1;
        }
        let k = mask.count_ones() as f64;
        let expected = n as f64 / k;
        let mut chi2 = 0.0;
        for (i, &c) in counts.iter().enumerate() {
            if mask & (1 << i) == 0 {
                assert_eq!(c, 0);
            } else {
                chi2 += (c as f64 - expected).powi(2) / expected;
            }
        }
        // 8 degrees of freedom, 99.9th percentile ≈ 26.12
        assert!(chi2 < 26.12, "chi2 = {chi2}");
    }

    fn transition(rng: &mut Rng, n: usize, done: bool) -> Transition {
        Transition {
            obs: (0..n).map(|_| rng.gen_range(0.0..1.0f32)).collect(),
            action: rng.gen_range(0..5),
            reward: rng.gen_range(-1.0..1.0),
            next_obs: (0..n).map(|_| rng.gen_range(0.0..1.0f32)).collect(),
            next_legal: 0b11111,
            done,
        }
    }

    #[test]
    fn q_update_gradient_matches_finite_differences() {
        let g = GridWorld::random(5, 5, 1).unwrap();
        let mut rng = seed::from_seed(2);
        let pair = DdqnPair::new(AgentKind::Ranger, &g, cfg(), &mut rng).unwrap();
        let n = CHANNELS * 25;
        let ts: Vec<Transition> = (0..3).map(|i| transition(&mut rng, n, i == 0)).collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        let targets: Vec<f64> = batch.iter().map(|t| pair.target_for(t).unwrap()).collect();
        let (_, grad) = pair.batch_loss_grad(&batch, &targets).unwrap();
        let h = 1e-6;
        for k in 0..40 {
            let i = rng.gen_range(0..pair.online.len());
            let mut p = pair.clone();
            p.online.values_mut()[i] += h;
            let (lp, _) = p.batch_loss_grad(&batch, &targets).unwrap();
            p.online.values_mut()[i] -= 2.0 * h;
            let (lm, _) = p.batch_loss_grad(&batch, &targets).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let scale = fd.abs() + grad[i].abs();
            if scale > 1e-7 {
                assert!((fd - grad[i]).abs() / scale < 1e-4, "param {i} (probe {k}): {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn target_changes_only_at_sync() {
        let g = GridWorld::random(5, 5, 1).unwrap();
        let mut rng = seed::from_seed(4);
        let mut pair = DdqnPair::new(AgentKind::Ranger, &g, cfg(), &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(16).unwrap();
        for i in 0..16 {
            buf.push(transition(&mut rng, CHANNELS * 25, i % 4 == 0));
        }
        let mut last_target = pair.target.clone();
        for step in 1..=7u64 {
            pair.update(&buf, &mut rng).unwrap();
            if step % 3 == 0 {
                assert_eq!(pair.target, pair.online);
                assert_ne!(pair.target, last_target);
                last_target = pair.target.clone();
            } else {
                assert_eq!(pair.target, last_target);
                assert_ne!(pair.online, pair.target);
            }
        }
    }
}
