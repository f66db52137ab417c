//! Experiment configuration files and run records.
//!
//! Configs are TOML with one table per block. Every field has a default, so
//! a file only needs the values it changes; unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! width = 8
//! height = 8
//! kind = "spatial"
//!
//! [game]
//! drones = 2
//! rangers = 1
//! attackers = 1
//! max_steps = 30
//!
//! [alloc]
//! iterations = 600
//! ```

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alloc::{AllocConfig, Algorithm};
use crate::engine::GameConfig;
use crate::error::{Error, Result};
use crate::grid::GridWorld;
use crate::patrol::PatrolConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    /// Density from distance to the border, a river and a road.
    #[default]
    Spatial,
    /// Uniform random density drawn from `density_seed`.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub kind: GridKind,
    pub density_seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 8,
            height: 8,
            kind: GridKind::Spatial,
            density_seed: 0,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<GridWorld> {
        match self.kind {
            GridKind::Spatial => {
                let (river, road) = GridWorld::default_features(self.width, self.height);
                GridWorld::spatial(self.width, self.height, river, road)
            }
            GridKind::Random => GridWorld::random(self.width, self.height, self.density_seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub heatmap_samples: usize,
    /// `(beta, kappa)` pairs for the uncertainty sweep.
    pub sweep_levels: Vec<(f64, f64)>,
    pub timing_runs: usize,
    pub algorithms: Vec<Algorithm>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 150,
            heatmap_samples: 100,
            sweep_levels: vec![(0.0, 0.0), (0.25, 0.25), (0.75, 0.75)],
            timing_runs: 5,
            algorithms: Algorithm::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub game: GameConfig,
    pub patrol: PatrolConfig,
    pub alloc: AllocConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// 8x8 spatial park, two drones, one ranger, one attacker, short budgets.
    pub fn desk() -> Self {
        Self {
            seed: 1,
            grid: GridConfig::default(),
            game: GameConfig {
                drones: 2,
                rangers: 1,
                attackers: 1,
                max_steps: 30,
                ..GameConfig::default()
            },
            patrol: PatrolConfig {
                episodes: 1000,
                eps_decay_steps: 15_000,
                ..PatrolConfig::default()
            },
            alloc: AllocConfig {
                iterations: 900,
                ..AllocConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }

    /// 15x15 park with three drones and two rangers.
    pub fn full() -> Self {
        Self {
            seed: 1,
            grid: GridConfig {
                width: 15,
                height: 15,
                ..GridConfig::default()
            },
            game: GameConfig::default(),
            patrol: PatrolConfig::default(),
            alloc: AllocConfig {
                defender_k: 50,
                attacker_k: 4,
                hidden: 64,
                alpha: 3e-5,
                dataset_size: 100_000,
                iterations: 2000,
                ..AllocConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.width < 5 || self.grid.height < 5 {
            return Err(Error::Config("grid must be at least 5x5".into()));
        }
        self.game.validate()?;
        self.patrol.validate()?;
        self.alloc.validate()?;
        if self.eval.episodes == 0 || self.eval.heatmap_samples == 0 || self.eval.timing_runs == 0 {
            return Err(Error::Config("evaluation counts must be positive".into()));
        }
        if self
            .eval
            .sweep_levels
            .iter()
            .any(|&(b, k)| !(0.0..=1.0).contains(&b) || !(0.0..=1.0).contains(&k))
        {
            return Err(Error::Config("sweep levels must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Parses a config file. Keys the file leaves out keep their desk-profile
    /// values, table by table.
    pub fn from_toml(text: &str) -> Result<Self> {
        let parse = |e: &dyn std::fmt::Display| Error::Parse(e.to_string());
        let overrides: toml::Table = toml::from_str(text).map_err(|e| parse(&e))?;
        let mut base = toml::Table::try_from(Self::desk()).map_err(|e| parse(&e))?;
        merge(&mut base, overrides);
        let cfg: Self = toml::Value::Table(base).try_into().map_err(|e| parse(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Hex SHA-256 of the canonical JSON encoding. Field order is fixed by the
    /// struct definitions and floats print in shortest round-trip form, so
    /// the hash does not depend on the platform or the file's formatting.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    /// Unix seconds.
    pub started: u64,
    pub finished: u64,
    pub metrics: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunRecord {
    pub fn start(run_id: impl Into<String>, config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            run_id: run_id.into(),
            config_hash: config.hash()?,
            started: unix_now(),
            finished: 0,
            metrics: Vec::new(),
            checkpoints: Vec::new(),
        })
    }

    pub fn finish(&mut self) {
        self.finished = unix_now();
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
