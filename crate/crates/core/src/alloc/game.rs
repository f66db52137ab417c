//! The allocation game as a zero-sum contest between two sampling players.

use std::sync::Arc;

use rand::Rng as _;

use super::allocation::{placement, Allocation, Dataset};
use super::copo::{copo_update, CgConfig, EstimatedTerms};
use super::matching::EmbeddingIndex;
use super::policy::GaussianPolicy;
use crate::attacker::AttackerModel;
use crate::engine::GameConfig;
use crate::error::{Error, Result};
use crate::grid::GridWorld;
use crate::patrol::{play_episode, PatrolPolicy};
use crate::seed::{self, Rng};

/// A player whose strategy is a parametric distribution over actions.
pub trait Player {
    type Action: Clone;

    fn n_params(&self) -> usize;
    /// Draws an action and returns `∇_w log π(action)`.
    fn sample(&self, rng: &mut Rng) -> Result<(Self::Action, Vec<f64>)>;
    fn apply(&mut self, delta: &[f64]) -> Result<()>;
    /// Critic estimate of the player's own return.
    fn value(&self) -> Result<f64>;
    fn fit_value(&mut self, returns: &[f64]) -> Result<()>;
}

/// Defender payoff of one joint play. The attacker receives its negation.
pub trait Payoff<D, A> {
    fn defender_payoff(&mut self, defender: &D, attacker: &A, episode_seed: u64) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IterationStats {
    pub mean_rd: f64,
    pub g_d_norm: f64,
    pub g_a_norm: f64,
    pub cg_residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `mean[score · advantage]`, or an empty vector for parameterless players.
pub fn score_gradient(scores: &[Vec<f64>], advantages: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() || scores.len() != advantages.len() {
        return Err(Error::EmptySamples);
    }
    let inv = 1.0 / scores.len() as f64;
    let mut g = vec![0.0; scores[0].len()];
    for (s, a) in scores.iter().zip(advantages) {
        for (gi, si) in g.iter_mut().zip(s) {
            *gi += inv * si * a;
        }
    }
    Ok(g)
}

/// Independent ascent step `w ← w + lr · mean[score · A]` with `A = R − V`,
/// followed by a critic fit on `R`. Returns the gradient.
pub fn pg_update<P: Player>(player: &mut P, scores: &[Vec<f64>], returns: &[f64], lr: f64) -> Result<Vec<f64>> {
    let v = player.value()?;
    let adv: Vec<f64> = returns.iter().map(|r| r - v).collect();
    let g = score_gradient(scores, &adv)?;
    if !g.is_empty() {
        let delta: Vec<f64> = g.iter().map(|x| lr * x).collect();
        player.apply(&delta)?;
    }
    player.fit_value(returns)?;
    Ok(g)
}

/// Samples `n` joint plays, seeding episode `i` with `split(seed, "episode", i)`.
fn joint_samples<D, A, G>(
    defender: &D,
    attacker: &A,
    payoff: &mut G,
    n: usize,
    seed: u64,
    rng: &mut Rng,
) -> Result<(Vec<D::Action>, Vec<Vec<f64>>, Vec<A::Action>, Vec<Vec<f64>>, Vec<f64>)>
where
    D: Player,
    A: Player,
    G: Payoff<D::Action, A::Action>,
{
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    let (mut da, mut ds, mut aa, mut as_, mut r) = (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..n {
        let (d, sd) = defender.sample(rng)?;
        let (a, sa) = attacker.sample(rng)?;
        r.push(payoff.defender_payoff(&d, &a, seed::split(seed, "episode", i as u64))?);
        da.push(d);
        ds.push(sd);
        aa.push(a);
        as_.push(sa);
    }
    Ok((da, ds, aa, as_, r))
}

/// One coPO iteration: both players share the advantage `A = R^d − V_d`.
#[allow(clippy::too_many_arguments)]
pub fn copo_iteration<D, A, G>(
    defender: &mut D,
    attacker: &mut A,
    payoff: &mut G,
    n_s: usize,
    alpha: f64,
    cg: &CgConfig,
    seed: u64,
    rng: &mut Rng,
) -> Result<IterationStats>
where
    D: Player,
    A: Player,
    G: Payoff<D::Action, A::Action>,
{
    let (_, ds, _, as_, r) = joint_samples(defender, attacker, payoff, n_s, seed, rng)?;
    let v = defender.value()?;
    let adv: Vec<f64> = r.iter().map(|x| x - v).collect();
    let terms = EstimatedTerms::new(ds, as_, adv)?;
    use super::copo::CopoTerms;
    let stats = IterationStats {
        mean_rd: mean(&r),
        g_d_norm: norm(terms.g_d()),
        g_a_norm: norm(terms.g_a()),
        cg_residual: 0.0,
    };
    let step = copo_update(&terms, alpha, cg)?;
    defender.apply(&step.delta_d)?;
    attacker.apply(&step.delta_a)?;
    defender.fit_value(&r)?;
    let ra: Vec<f64> = r.iter().map(|x| -x).collect();
    attacker.fit_value(&ra)?;
    Ok(IterationStats {
        cg_residual: step.residual,
        ..stats
    })
}

/// Simultaneous independent policy-gradient steps.
#[allow(clippy::too_many_arguments)]
pub fn pg_iteration<D, A, G>(
    defender: &mut D,
    attacker: &mut A,
    payoff: &mut G,
    n_s: usize,
    lr: f64,
    seed: u64,
    rng: &mut Rng,
) -> Result<IterationStats>
where
    D: Player,
    A: Player,
    G: Payoff<D::Action, A::Action>,
{
    let (_, ds, _, as_, r) = joint_samples(defender, attacker, payoff, n_s, seed, rng)?;
    let ra: Vec<f64> = r.iter().map(|x| -x).collect();
    let g_d = pg_update(defender, &ds, &r, lr)?;
    let g_a = pg_update(attacker, &as_, &ra, lr)?;
    Ok(IterationStats {
        mean_rd: mean(&r),
        g_d_norm: norm(&g_d),
        g_a_norm: norm(&g_a),
        cg_residual: 0.0,
    })
}

/// Past samples of both players for fictitious-play style training.
#[derive(Clone, Debug)]
pub struct FpMemory<D, A> {
    pub defender: Vec<D>,
    pub attacker: Vec<A>,
}

impl<D, A> Default for FpMemory<D, A> {
    fn default() -> Self {
        Self {
            defender: Vec::new(),
            attacker: Vec::new(),
        }
    }
}

/// Each player plays fresh samples against opponents drawn uniformly from
/// the other side's memory, then takes a policy-gradient step. Fresh
/// samples join the memory afterwards; an empty memory is seeded with the
/// current samples instead.
#[allow(clippy::too_many_arguments)]
pub fn optgradfp_iteration<D, A, G>(
    defender: &mut D,
    attacker: &mut A,
    payoff: &mut G,
    memory: &mut FpMemory<D::Action, A::Action>,
    n_s: usize,
    lr: f64,
    seed: u64,
    rng: &mut Rng,
) -> Result<IterationStats>
where
    D: Player,
    A: Player,
    G: Payoff<D::Action, A::Action>,
{
    if n_s == 0 {
        return Err(Error::EmptySamples);
    }
    let mut d_samples = Vec::with_capacity(n_s);
    let mut a_samples = Vec::with_capacity(n_s);
    for _ in 0..n_s {
        d_samples.push(defender.sample(rng)?);
    }
    for _ in 0..n_s {
        a_samples.push(attacker.sample(rng)?);
    }
    let seeded = memory.defender.is_empty() || memory.attacker.is_empty();
    if seeded {
        memory.defender = d_samples.iter().map(|(d, _)| d.clone()).collect();
        memory.attacker = a_samples.iter().map(|(a, _)| a.clone()).collect();
    }
    let mut rd = Vec::with_capacity(n_s);
    for (i, (d, _)) in d_samples.iter().enumerate() {
        let opp = &memory.attacker[rng.gen_range(0..memory.attacker.len())];
        rd.push(payoff.defender_payoff(d, opp, seed::split(seed, "episode", i as u64))?);
    }
    let mut ra = Vec::with_capacity(n_s);
    for (i, (a, _)) in a_samples.iter().enumerate() {
        let opp = &memory.defender[rng.gen_range(0..memory.defender.len())];
        ra.push(-payoff.defender_payoff(opp, a, seed::split(seed, "episode", (n_s + i) as u64))?);
    }
    let ds: Vec<Vec<f64>> = d_samples.iter().map(|(_, s)| s.clone()).collect();
    let as_: Vec<Vec<f64>> = a_samples.iter().map(|(_, s)| s.clone()).collect();
    let g_d = pg_update(defender, &ds, &rd, lr)?;
    let g_a = pg_update(attacker, &as_, &ra, lr)?;
    if !seeded {
        memory.defender.extend(d_samples.into_iter().map(|(d, _)| d));
        memory.attacker.extend(a_samples.into_iter().map(|(a, _)| a));
    }
    Ok(IterationStats {
        mean_rd: mean(&rd),
        g_d_norm: norm(&g_d),
        g_a_norm: norm(&g_a),
        cg_residual: 0.0,
    })
}

/// A Gaussian policy over embeddings whose samples are matched back to a
/// dataset allocation.
#[derive(Clone, Debug)]
pub struct AllocationPlayer {
    pub policy: GaussianPolicy,
    pub state: Vec<f64>,
    pub index: Arc<EmbeddingIndex>,
    pub dataset: Arc<Dataset>,
}

impl AllocationPlayer {
    /// Matched allocation for an embedding.
    pub fn allocation_for(&self, e: &[f64]) -> Result<Allocation> {
        Ok(self.dataset.allocations[self.index.nearest(e)?].clone())
    }
}

impl Player for AllocationPlayer {
    type Action = Allocation;

    fn n_params(&self) -> usize {
        self.policy.n_params()
    }

    fn sample(&self, rng: &mut Rng) -> Result<(Allocation, Vec<f64>)> {
        let (e, score) = self.policy.sample(&self.state, rng)?;
        Ok((self.allocation_for(&e)?, score))
    }

    fn apply(&mut self, delta: &[f64]) -> Result<()> {
        self.policy.apply(delta)
    }

    fn value(&self) -> Result<f64> {
        self.policy.value(&self.state)
    }

    fn fit_value(&mut self, returns: &[f64]) -> Result<()> {
        self.policy.fit_critic(&self.state, returns).map(|_| ())
    }
}

/// Uniformly random allocations; nothing to learn.
#[derive(Clone, Debug)]
pub struct RandomAllocator {
    pub grid: GridWorld,
    pub role_counts: Vec<usize>,
}

impl Player for RandomAllocator {
    type Action = Allocation;

    fn n_params(&self) -> usize {
        0
    }

    fn sample(&self, rng: &mut Rng) -> Result<(Allocation, Vec<f64>)> {
        Ok((Allocation::random(&self.grid, &self.role_counts, rng), Vec::new()))
    }

    fn apply(&mut self, _delta: &[f64]) -> Result<()> {
        Ok(())
    }

    fn value(&self) -> Result<f64> {
        Ok(0.0)
    }

    fn fit_value(&mut self, _returns: &[f64]) -> Result<()> {
        Ok(())
    }
}

/// Plays the patrol stage greedily with frozen defender networks against the
/// heuristic attacker. The attacker's score map persists across calls.
pub struct PatrolSimulator<'a> {
    pub grid: &'a GridWorld,
    pub game: &'a GameConfig,
    pub policy: &'a PatrolPolicy,
    pub attacker: AttackerModel,
    pub epsilon: f64,
    policy_rng: Rng,
}

impl<'a> PatrolSimulator<'a> {
    pub fn new(grid: &'a GridWorld, game: &'a GameConfig, policy: &'a PatrolPolicy, epsilon: f64, seed: u64) -> Self {
        Self {
            grid,
            game,
            policy,
            attacker: AttackerModel::default(),
            epsilon,
            policy_rng: seed::stream(seed, "simulator-policy", 0),
        }
    }
}

impl Payoff<Allocation, Allocation> for PatrolSimulator<'_> {
    fn defender_payoff(&mut self, defender: &Allocation, attacker: &Allocation, episode_seed: u64) -> Result<f64> {
        let p = placement(defender, attacker)?;
        let summary = play_episode(
            self.grid,
            self.game,
            &p,
            self.policy,
            &mut self.attacker,
            self.epsilon,
            episode_seed,
            &mut self.policy_rng,
            false,
        )?;
        Ok(summary.defender_return)
    }
}
