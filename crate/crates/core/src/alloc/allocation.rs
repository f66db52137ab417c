//! Role-tagged allocations and allocation datasets.
//!
//! Dataset file layout (little endian):
//!
//! ```text
//! magic        b"GSGA"
//! version      u32
//! width        u32
//! height       u32
//! side         u8   (0 defender, 1 attacker)
//! roles        u8, then one u32 count per role
//! count        u64
//! seed         u64
//! records      count x (sum of role counts) x u32 cell index (row * width + col)
//! crc32        u32 over everything above
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::engine::GameConfig;
use crate::error::{Error, Result};
use crate::grid::{Cell, GridWorld};
use crate::patrol::Placement;
use crate::seed::{self, Rng};

pub const DATASET_MAGIC: &[u8; 4] = b"GSGA";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Defender,
    Attacker,
}

impl Side {
    /// Agents per role: drones then rangers for the defender, attackers otherwise.
    pub fn role_counts(self, game: &GameConfig) -> Vec<usize> {
        match self {
            Side::Defender => vec![game.drones, game.rangers],
            Side::Attacker => vec![game.attackers],
        }
    }
}

/// Cells of every agent, grouped by role. Cells may repeat.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    pub roles: Vec<Vec<Cell>>,
}

impl Allocation {
    pub fn random(grid: &GridWorld, role_counts: &[usize], rng: &mut Rng) -> Self {
        Self {
            roles: role_counts
                .iter()
                .map(|&n| (0..n).map(|_| grid.cell_at(rng.gen_range(0..grid.n_cells()))).collect())
                .collect(),
        }
    }

    /// Concatenated per-role occupancy counts, one grid per role.
    pub fn to_vector(&self, grid: &GridWorld) -> Vec<f64> {
        let n = grid.n_cells();
        let mut v = vec![0.0; n * self.roles.len()];
        for (r, cells) in self.roles.iter().enumerate() {
            for c in cells {
                v[r * n + grid.index(*c)] += 1.0;
            }
        }
        v
    }

    pub fn role_counts(&self) -> Vec<usize> {
        self.roles.iter().map(Vec::len).collect()
    }
}

/// Starting placement from a defender and an attacker allocation.
pub fn placement(defender: &Allocation, attacker: &Allocation) -> Result<Placement> {
    match (defender.roles.as_slice(), attacker.roles.as_slice()) {
        ([drones, rangers], [attackers]) => Ok(Placement {
            drones: drones.clone(),
            rangers: rangers.clone(),
            attackers: attackers.clone(),
        }),
        _ => Err(Error::Config("allocations have the wrong roles".into())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub side: Side,
    pub width: usize,
    pub height: usize,
    pub role_counts: Vec<usize>,
    pub seed: u64,
    pub allocations: Vec<Allocation>,
}

impl Dataset {
    /// Uniformly sampled allocations, deterministic in `seed`.
    pub fn build(grid: &GridWorld, side: Side, role_counts: &[usize], count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::Dataset("dataset size must be at least 1".into()));
        }
        let mut rng = seed::stream(seed, "dataset", side as u64);
        Ok(Self {
            side,
            width: grid.width(),
            height: grid.height(),
            role_counts: role_counts.to_vec(),
            seed,
            allocations: (0..count).map(|_| Allocation::random(grid, role_counts, &mut rng)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.allocations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }

    pub fn vectors(&self, grid: &GridWorld) -> Vec<Vec<f64>> {
        self.allocations.iter().map(|a| a.to_vector(grid)).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(DATASET_MAGIC);
        b.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.width as u32).to_le_bytes());
        b.extend_from_slice(&(self.height as u32).to_le_bytes());
        b.push(match self.side {
            Side::Defender => 0,
            Side::Attacker => 1,
        });
        b.push(self.role_counts.len() as u8);
        for &n in &self.role_counts {
            b.extend_from_slice(&(n as u32).to_le_bytes());
        }
        b.extend_from_slice(&(self.allocations.len() as u64).to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        for a in &self.allocations {
            for c in a.roles.iter().flatten() {
                b.extend_from_slice(&((c.row * self.width + c.col) as u32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Dataset(m.to_string());
        if bytes.len() < 4 + 4 + 4 + 4 + 1 + 1 + 8 + 8 + 4 {
            return Err(bad("truncated dataset"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(bad("checksum mismatch"));
        }
        let mut rest = body;
        let mut take = |n: usize| -> Result<&[u8]> {
            if rest.len() < n {
                return Err(bad("truncated dataset"));
            }
            let (s, r) = rest.split_at(n);
            rest = r;
            Ok(s)
        };
        if take(4)? != DATASET_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != DATASET_VERSION {
            return Err(Error::Dataset(format!("unsupported version {version}")));
        }
        let width = u32_at(take(4)?) as usize;
        let height = u32_at(take(4)?) as usize;
        let side = match take(1)?[0] {
            0 => Side::Defender,
            1 => Side::Attacker,
            _ => return Err(bad("unknown side")),
        };
        let nroles = take(1)?[0] as usize;
        let mut role_counts = Vec::with_capacity(nroles);
        for _ in 0..nroles {
            role_counts.push(u32_at(take(4)?) as usize);
        }
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut allocations = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut roles = Vec::with_capacity(nroles);
            for &n in &role_counts {
                let mut cells = Vec::with_capacity(n);
                for _ in 0..n {
                    let i = u32_at(take(4)?) as usize;
                    if i >= width * height {
                        return Err(bad("cell index outside the grid"));
                    }
                    cells.push(Cell::new(i / width, i % width));
                }
                roles.push(cells);
            }
            allocations.push(Allocation { roles });
        }
        if take(1).is_ok() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            side,
            width,
            height,
            role_counts,
            seed,
            allocations,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_counts_occupancy() {
        let g = GridWorld::random(4, 4, 0).unwrap();
        let empty = Allocation { roles: vec![vec![], vec![]] };
        assert!(empty.to_vector(&g).iter().all(|&v| v == 0.0));
        let a = Allocation {
            roles: vec![vec![Cell::new(1, 2), Cell::new(1, 2)], vec![Cell::new(3, 3)]],
        };
        let v = a.to_vector(&g);
        assert_eq!(v.len(), 32);
        assert_eq!(v[6], 2.0);
        assert_eq!(v[16 + 15], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn dataset_is_deterministic_and_round_trips() {
        let g = GridWorld::random(5, 5, 0).unwrap();
        let a = Dataset::build(&g, Side::Defender, &[3, 2], 200, 9).unwrap();
        let b = Dataset::build(&g, Side::Defender, &[3, 2], 200, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.allocations.iter().all(|x| x.role_counts() == vec![3, 2]));
        let back = Dataset::decode(&a.encode()).unwrap();
        assert_eq!(back, a);
        let mut bytes = a.encode();
        bytes[30] ^= 1;
        assert!(Dataset::decode(&bytes).is_err());
        assert!(Dataset::build(&g, Side::Attacker, &[1], 0, 1).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        a.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), a);
    }

    #[test]
    fn occupancy_is_uniform() {
        let g = GridWorld::random(5, 5, 0).unwrap();
        let d = Dataset::build(&g, Side::Attacker, &[2], 10_000, 3).unwrap();
        let mut counts = [0f64; 25];
        for a in &d.allocations {
            for c in a.roles.iter().flatten() {
                counts[g.index(*c)] += 1.0;
            }
        }
        let expected = 20_000.0 / 25.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // 24 degrees of freedom, 99.9th percentile ≈ 51.18
        assert!(chi2 < 51.18, "chi2 = {chi2}");
    }

    #[test]
    fn placement_requires_matching_roles() {
        let d = Allocation { roles: vec![vec![Cell::new(0, 0)], vec![Cell::new(1, 1)]] };
        let a = Allocation { roles: vec![vec![Cell::new(2, 2)]] };
        let p = placement(&d, &a).unwrap();
        assert_eq!(p.rangers, vec![Cell::new(1, 1)]);
        assert!(placement(&a, &d).is_err());
    }
}
