//! Allocation stage: embeddings of team placements, Gaussian allocation
//! policies and the competitive training loops.

pub mod allocation;
pub mod autoencoder;
pub mod copo;
pub mod game;
pub mod matching;
pub mod policy;
pub mod toy;

use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use allocation::{placement, Allocation, Dataset, Side};
pub use autoencoder::{Autoencoder, TrainReport};
pub use copo::{conjugate_gradient, copo_update, CgConfig, CgOutcome, CopoStep, CopoTerms, DenseTerms, EstimatedTerms};
pub use game::{
    copo_iteration, optgradfp_iteration, pg_iteration, pg_update, AllocationPlayer, FpMemory, IterationStats, Payoff,
    PatrolSimulator, Player, RandomAllocator,
};
pub use matching::{EmbeddingIndex, Metric};
pub use policy::{GaussianParams, GaussianPolicy};

use crate::engine::GameConfig;
use crate::error::{Error, Result};
use crate::grid::GridWorld;
use crate::patrol::PatrolPolicy;
use crate::seed::{self, Rng};

pub const CURVE_HEADER: &str = "iteration,mean_rd,g_d_norm,g_a_norm,cg_residual";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Combsgpo,
    Pg,
    Optgradfp,
    /// Uniformly random defender against a policy-gradient attacker.
    Random,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Combsgpo, Algorithm::Pg, Algorithm::Optgradfp, Algorithm::Random];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Combsgpo => "combsgpo",
            Algorithm::Pg => "pg",
            Algorithm::Optgradfp => "optgradfp",
            Algorithm::Random => "random",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocConfig {
    pub defender_k: usize,
    pub attacker_k: usize,
    pub hidden: usize,
    /// coPO step size, also used as the learning rate of the baselines.
    pub alpha: f64,
    pub n_s: usize,
    pub iterations: usize,
    pub dataset_size: usize,
    pub ae_epochs: usize,
    pub ae_batch: usize,
    pub ae_lr: f64,
    pub std_scale: f64,
    pub critic_lr: f64,
    pub cg: CgConfig,
    pub metric: Metric,
    /// Residual exploration of the frozen patrol networks.
    pub patrol_epsilon: f64,
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    /// End training at the first plateau instead of running the full budget.
    pub stop_at_plateau: bool,
}

impl Default for AllocConfig {
    fn default() -> Self {
        Self {
            defender_k: 16,
            attacker_k: 4,
            hidden: 32,
            alpha: 1e-3,
            n_s: 10,
            iterations: 300,
            dataset_size: 5000,
            ae_epochs: 20,
            ae_batch: 64,
            ae_lr: 1e-3,
            std_scale: 0.5,
            critic_lr: 1e-2,
            cg: CgConfig::default(),
            metric: Metric::Cosine,
            patrol_epsilon: 0.0,
            plateau_window: 50,
            plateau_tolerance: 0.01,
            stop_at_plateau: false,
        }
    }
}

impl AllocConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.defender_k == 0 || self.attacker_k == 0 || self.hidden == 0 {
            return bad("embedding and hidden sizes must be positive");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if self.n_s == 0 {
            return bad("n_s must be at least 1");
        }
        if self.dataset_size == 0 || self.ae_batch == 0 {
            return bad("dataset size and autoencoder batch must be positive");
        }
        if !(self.ae_lr > 0.0 && self.critic_lr > 0.0 && self.std_scale > 0.0) {
            return bad("learning rates and std_scale must be positive");
        }
        if self.cg.max_iterations == 0 || !(self.cg.tolerance > 0.0) {
            return bad("conjugate gradient needs iterations and a positive tolerance");
        }
        if !(0.0..=1.0).contains(&self.patrol_epsilon) {
            return bad("patrol_epsilon must lie in [0, 1]");
        }
        if self.plateau_window == 0 || !(self.plateau_tolerance > 0.0) {
            return bad("plateau window and tolerance must be positive");
        }
        Ok(())
    }
}

/// Dataset, trained autoencoder and embedding index for one side.
#[derive(Clone, Debug)]
pub struct SideEmbedding {
    pub dataset: Arc<Dataset>,
    pub autoencoder: Autoencoder,
    pub index: Arc<EmbeddingIndex>,
    pub report: TrainReport,
}

impl SideEmbedding {
    pub fn build(grid: &GridWorld, game: &GameConfig, cfg: &AllocConfig, side: Side, seed: u64) -> Result<Self> {
        let dataset = Dataset::build(grid, side, &side.role_counts(game), cfg.dataset_size, seed)?;
        Self::from_dataset(grid, cfg, dataset, seed)
    }

    /// Trains the autoencoder on an existing dataset and indexes its embeddings.
    pub fn from_dataset(grid: &GridWorld, cfg: &AllocConfig, dataset: Dataset, seed: u64) -> Result<Self> {
        let side = dataset.side;
        let k = match side {
            Side::Defender => cfg.defender_k,
            Side::Attacker => cfg.attacker_k,
        };
        let vectors = dataset.vectors(grid);
        let mut rng = seed::stream(seed, "autoencoder", side as u64);
        let mut autoencoder = Autoencoder::new(vectors[0].len(), k, &mut rng)?;
        let report = autoencoder.train(&vectors, cfg.ae_epochs, cfg.ae_batch, cfg.ae_lr, &mut rng)?;
        let embeddings = vectors.iter().map(|v| autoencoder.encode(v)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset: Arc::new(dataset),
            autoencoder,
            index: Arc::new(EmbeddingIndex::new(embeddings, cfg.metric)?),
            report,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Embeddings {
    pub defender: SideEmbedding,
    pub attacker: SideEmbedding,
}

impl Embeddings {
    pub fn build(grid: &GridWorld, game: &GameConfig, cfg: &AllocConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            defender: SideEmbedding::build(grid, game, cfg, Side::Defender, seed)?,
            attacker: SideEmbedding::build(grid, game, cfg, Side::Attacker, seed)?,
        })
    }
}

/// Fresh allocation player for one side, initialised from `seed`.
pub fn new_player(grid: &GridWorld, cfg: &AllocConfig, side: &SideEmbedding, seed: u64) -> Result<AllocationPlayer> {
    let k = side.autoencoder.k();
    let mut rng = seed::stream(seed, "alloc-init", side.dataset.side as u64);
    Ok(AllocationPlayer {
        policy: GaussianPolicy::new(grid.n_cells(), cfg.hidden, k, cfg.std_scale, cfg.critic_lr, &mut rng)?,
        state: grid.density().to_vec(),
        index: Arc::clone(&side.index),
        dataset: Arc::clone(&side.dataset),
    })
}

/// The defender side of a trained run.
#[derive(Clone, Debug)]
pub enum DefenderPlayer {
    Learned(AllocationPlayer),
    Random(RandomAllocator),
}

impl Player for DefenderPlayer {
    type Action = Allocation;

    fn n_params(&self) -> usize {
        match self {
            DefenderPlayer::Learned(p) => p.n_params(),
            DefenderPlayer::Random(p) => p.n_params(),
        }
    }

    fn sample(&self, rng: &mut Rng) -> Result<(Allocation, Vec<f64>)> {
        match self {
            DefenderPlayer::Learned(p) => p.sample(rng),
            DefenderPlayer::Random(p) => p.sample(rng),
        }
    }

    fn apply(&mut self, delta: &[f64]) -> Result<()> {
        match self {
            DefenderPlayer::Learned(p) => p.apply(delta),
            DefenderPlayer::Random(p) => p.apply(delta),
        }
    }

    fn value(&self) -> Result<f64> {
        match self {
            DefenderPlayer::Learned(p) => p.value(),
            DefenderPlayer::Random(p) => p.value(),
        }
    }

    fn fit_value(&mut self, returns: &[f64]) -> Result<()> {
        match self {
            DefenderPlayer::Learned(p) => p.fit_value(returns),
            DefenderPlayer::Random(p) => p.fit_value(returns),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AllocRun {
    pub algorithm: Algorithm,
    pub defender: DefenderPlayer,
    pub attacker: AllocationPlayer,
    pub curve: Vec<IterationStats>,
    /// Wall-clock seconds since the start of training, per iteration.
    pub seconds: Vec<f64>,
    /// First iteration at which the plateau criterion held.
    pub converged_at: Option<usize>,
}

/// First iteration `t` at which the trailing `window`-mean of `values`
/// changed by at most `tolerance` (relative) against the window before it.
pub fn plateau_index(values: &[f64], window: usize, tolerance: f64) -> Option<usize> {
    if window == 0 || values.len() < 2 * window {
        return None;
    }
    let mut prefix = vec![0.0; values.len() + 1];
    for (i, v) in values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let w = window as f64;
    (2 * window - 1..values.len()).find(|&t| {
        let cur = (prefix[t + 1] - prefix[t + 1 - window]) / w;
        let prev = (prefix[t + 1 - window] - prefix[t + 1 - 2 * window]) / w;
        (cur - prev).abs() <= tolerance * prev.abs()
    })
}

/// Whether the plateau criterion holds at the last entry of `values`.
fn plateau_reached(values: &[f64], window: usize, tolerance: f64) -> bool {
    let n = values.len();
    if window == 0 || n < 2 * window {
        return false;
    }
    let w = window as f64;
    let cur = values[n - window..].iter().sum::<f64>() / w;
    let prev = values[n - 2 * window..n - window].iter().sum::<f64>() / w;
    (cur - prev).abs() <= tolerance * prev.abs()
}

pub fn write_curve_row<W: Write + ?Sized>(out: &mut W, iteration: usize, s: &IterationStats) -> Result<()> {
    writeln!(
        out,
        "{iteration},{},{},{},{}",
        s.mean_rd, s.g_d_norm, s.g_a_norm, s.cg_residual
    )?;
    Ok(())
}

/// Trains allocation policies for both sides against the frozen patrol
/// networks. Iteration `i` seeds its episodes from `split(seed, "alloc-iter", i)`.
#[allow(clippy::too_many_arguments)]
pub fn train_alloc(
    grid: &GridWorld,
    game: &GameConfig,
    cfg: &AllocConfig,
    patrol: &PatrolPolicy,
    embeddings: &Embeddings,
    algorithm: Algorithm,
    seed: u64,
    mut curve_out: Option<&mut dyn Write>,
) -> Result<AllocRun> {
    cfg.validate()?;
    game.validate()?;
    let mut defender = match algorithm {
        Algorithm::Random => DefenderPlayer::Random(RandomAllocator {
            grid: grid.clone(),
            role_counts: Side::Defender.role_counts(game),
        }),
        _ => DefenderPlayer::Learned(new_player(grid, cfg, &embeddings.defender, seed)?),
    };
    let mut attacker = new_player(grid, cfg, &embeddings.attacker, seed)?;
    let mut sim = PatrolSimulator::new(grid, game, patrol, cfg.patrol_epsilon, seed);
    let mut rng = seed::stream(seed, "alloc-sample", 0);
    let mut memory = FpMemory::default();
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut seconds = Vec::with_capacity(cfg.iterations);
    let mut rd = Vec::with_capacity(cfg.iterations);
    let start = Instant::now();
    let mut converged_at = None;
    if let Some(w) = curve_out.as_deref_mut() {
        writeln!(w, "{CURVE_HEADER}")?;
    }
    for it in 0..cfg.iterations {
        let it_seed = seed::split(seed, "alloc-iter", it as u64);
        let stats = match algorithm {
            Algorithm::Combsgpo => copo_iteration(
                &mut defender,
                &mut attacker,
                &mut sim,
                cfg.n_s,
                cfg.alpha,
                &cfg.cg,
                it_seed,
                &mut rng,
            )?,
            Algorithm::Pg | Algorithm::Random => {
                pg_iteration(&mut defender, &mut attacker, &mut sim, cfg.n_s, cfg.alpha, it_seed, &mut rng)?
            }
            Algorithm::Optgradfp => optgradfp_iteration(
                &mut defender,
                &mut attacker,
                &mut sim,
                &mut memory,
                cfg.n_s,
                cfg.alpha,
                it_seed,
                &mut rng,
            )?,
        };
        if let Some(w) = curve_out.as_deref_mut() {
            write_curve_row(w, it, &stats)?;
        }
        seconds.push(start.elapsed().as_secs_f64());
        rd.push(stats.mean_rd);
        curve.push(stats);
        if converged_at.is_none() && plateau_reached(&rd, cfg.plateau_window, cfg.plateau_tolerance) {
            converged_at = Some(it);
            if cfg.stop_at_plateau {
                break;
            }
        }
    }
    Ok(AllocRun {
        algorithm,
        defender,
        attacker,
        curve,
        seconds,
        converged_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patrol::{init_nets, PatrolConfig};

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("copo".parse::<Algorithm>().is_err());
    }

    #[test]
    fn plateau_detection() {
        let mut v: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        v.extend(vec![20.0; 10]);
        assert_eq!(plateau_index(&v, 5, 0.01), Some(19));
        assert_eq!(plateau_index(&v[..19], 5, 0.01), None);
        let ramp: Vec<f64> = (0..100).map(|i| 1.0 + i as f64).collect();
        assert_eq!(plateau_index(&ramp, 10, 0.01), None);
        assert_eq!(plateau_index(&[1.0; 3], 0, 0.01), None);
        for t in 0..v.len() {
            assert_eq!(plateau_reached(&v[..=t], 5, 0.01), t == 19);
        }
    }

    proptest::proptest! {
        #[test]
        fn online_and_offline_plateau_agree(
            v in proptest::collection::vec(-5.0f64..5.0, 0..60),
            window in 1usize..8,
        ) {
            let online = (0..v.len()).find(|&t| plateau_reached(&v[..=t], window, 0.05));
            proptest::prop_assert_eq!(plateau_index(&v, window, 0.05), online);
        }
    }

    fn tiny() -> (GridWorld, GameConfig, AllocConfig) {
        let g = GridWorld::random(5, 5, 3).unwrap();
        let game = GameConfig {
            drones: 1,
            rangers: 1,
            attackers: 1,
            max_steps: 6,
            ..GameConfig::default()
        };
        let cfg = AllocConfig {
            defender_k: 4,
            attacker_k: 2,
            hidden: 4,
            n_s: 3,
            iterations: 4,
            dataset_size: 50,
            ae_epochs: 2,
            ..AllocConfig::default()
        };
        (g, game, cfg)
    }

    #[test]
    fn training_runs_are_reproducible() {
        let (g, game, cfg) = tiny();
        let patrol = init_nets(&g, &game, &PatrolConfig::default(), 0).unwrap().frozen();
        let emb = Embeddings::build(&g, &game, &cfg, 1).unwrap();
        assert_eq!(emb.defender.autoencoder.k(), 4);
        assert_eq!(emb.attacker.autoencoder.k(), 2);
        for algo in Algorithm::ALL {
            let mut a = Vec::new();
            let mut b = Vec::new();
            let ra = train_alloc(&g, &game, &cfg, &patrol, &emb, algo, 2, Some(&mut a)).unwrap();
            train_alloc(&g, &game, &cfg, &patrol, &emb, algo, 2, Some(&mut b)).unwrap();
            assert_eq!(a, b, "{algo}");
            let text = String::from_utf8(a).unwrap();
            assert_eq!(text.lines().count(), cfg.iterations + 1);
            assert_eq!(ra.curve.len(), cfg.iterations);
            assert_eq!(ra.seconds.len(), cfg.iterations);
            if algo == Algorithm::Random {
                assert_eq!(ra.defender.n_params(), 0);
            }
        }
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(AllocConfig::default().validate().is_ok());
        let bad = [
            AllocConfig { alpha: 0.0, ..AllocConfig::default() },
            AllocConfig { n_s: 0, ..AllocConfig::default() },
            AllocConfig { dataset_size: 0, ..AllocConfig::default() },
            AllocConfig { patrol_epsilon: 1.5, ..AllocConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
