//! Heuristic attacker for the patrolling stage.
//!
//! The attacker knows the density map and the defenders' initial allocation,
//! never their live positions. Each cell gets `s_av = 0.5*density + 0.5*rank`
//! where `rank` is the normalised distance to the nearest allocated defender.
//! The persistent score map tracks `s_av` with an exponential moving average
//! across episodes, and an active attacker greedily steps to the best-scoring
//! cell among its neighbours and its own cell.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{AttackerStatus, GameState};
use crate::error::{Error, Result};
use crate::grid::{self, Cell, GridWorld, Move, RankMap};

/// Learning rate of the score moving average.
pub const SCORE_RATE: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateCadence {
    #[default]
    PerEpisode,
    PerTimestep,
}

/// Normalised rank of each cell's distance to the nearest defender.
pub fn distance_ranks(grid: &GridWorld, defenders: &[Cell]) -> Result<RankMap> {
    if defenders.is_empty() {
        return Err(Error::Config("defender allocation is empty".into()));
    }
    grid.feature_rank(defenders)
}

pub fn score_average(density: f64, distance_rank: f64) -> f64 {
    0.5 * density + 0.5 * distance_rank
}

pub fn score_average_map(grid: &GridWorld, ranks: &RankMap) -> Vec<f64> {
    grid.density()
        .iter()
        .zip(&ranks.ranks)
        .map(|(&d, &r)| score_average(d, r))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub width: usize,
    pub scores: Vec<f64>,
    /// Number of updates applied so far.
    pub updates: u64,
}

impl ScoreMap {
    /// Initial map: the first observed `s_av`.
    pub fn from_first(width: usize, s_av: &[f64]) -> Self {
        Self {
            width,
            scores: s_av.to_vec(),
            updates: 0,
        }
    }

    /// `score <- score + 0.1 * (s_av - score)` per cell.
    pub fn update(&self, s_av: &[f64]) -> Result<Self> {
        if s_av.len() != self.scores.len() {
            return Err(Error::ShapeMismatch {
                expected: self.scores.len(),
                got: s_av.len(),
            });
        }
        Ok(Self {
            width: self.width,
            scores: self
                .scores
                .iter()
                .zip(s_av)
                .map(|(&s, &a)| s + SCORE_RATE * (a - s))
                .collect(),
            updates: self.updates + 1,
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        grid::write_map_csv(out, self.width, &self.scores)
    }
}

/// Greedy step towards the highest-scoring cell among the neighbours and the
/// current cell. Ties go to the first move in `Move::ALL` order.
pub fn greedy_move(grid: &GridWorld, cell: Cell, scores: &[f64]) -> Move {
    let mut best = Move::Stay;
    let mut best_score = f64::NEG_INFINITY;
    for m in Move::ALL {
        if let Some(dest) = grid.step(cell, m) {
            let s = scores[grid.index(dest)];
            if s > best_score {
                best = m;
                best_score = s;
            }
        }
    }
    best
}

/// One step along a shortest path to the nearest edge cell.
pub fn flee_route(grid: &GridWorld, cell: Cell) -> Move {
    let gaps = [
        (Move::Up, cell.row),
        (Move::Down, grid.height() - 1 - cell.row),
        (Move::Left, cell.col),
        (Move::Right, grid.width() - 1 - cell.col),
    ];
    let (m, gap) = gaps
        .iter()
        .copied()
        .fold((Move::Stay, usize::MAX), |acc, g| if g.1 < acc.1 { g } else { acc });
    if gap == 0 {
        Move::Stay
    } else {
        m
    }
}

/// Move chosen by attacker `id`; resolved attackers stay put.
pub fn next_move(grid: &GridWorld, state: &GameState, id: usize, scores: &[f64]) -> Move {
    let a = &state.attackers[id];
    match a.status {
        AttackerStatus::Active => greedy_move(grid, a.cell, scores),
        AttackerStatus::Fleeing => flee_route(grid, a.cell),
        AttackerStatus::Caught | AttackerStatus::Fled => Move::Stay,
    }
}

/// The attacker population's patrol policy with its persistent score map.
#[derive(Clone, Debug, Default)]
pub struct AttackerModel {
    cadence: UpdateCadence,
    scores: Option<ScoreMap>,
    s_av: Vec<f64>,
}

impl AttackerModel {
    pub fn new(cadence: UpdateCadence) -> Self {
        Self {
            cadence,
            scores: None,
            s_av: Vec::new(),
        }
    }

    /// Observes the defenders' allocation at the start of an episode.
    pub fn begin_episode(&mut self, grid: &GridWorld, defenders: &[Cell]) -> Result<()> {
        let ranks = distance_ranks(grid, defenders)?;
        self.s_av = score_average_map(grid, &ranks);
        self.scores = Some(match self.scores.take() {
            None => ScoreMap::from_first(grid.width(), &self.s_av),
            Some(s) if self.cadence == UpdateCadence::PerEpisode => s.update(&self.s_av)?,
            Some(s) => s,
        });
        Ok(())
    }

    /// Called after every engine step.
    pub fn end_step(&mut self) -> Result<()> {
        if self.cadence == UpdateCadence::PerTimestep {
            if let Some(s) = self.scores.take() {
                self.scores = Some(s.update(&self.s_av)?);
            }
        }
        Ok(())
    }

    pub fn scores(&self) -> Option<&ScoreMap> {
        self.scores.as_ref()
    }

    pub fn moves(&self, grid: &GridWorld, state: &GameState) -> Vec<Move> {
        let scores = self
            .scores
            .as_ref()
            .map(|s| s.scores.as_slice())
            .unwrap_or(grid.density());
        (0..state.attackers.len())
            .map(|i| next_move(grid, state, i, scores))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::AttackerState;
    use proptest::prelude::*;

    fn flat(w: usize, h: usize) -> GridWorld {
        GridWorld::from_density(w, h, vec![0.0; w * h]).unwrap()
    }

    #[test]
    fn ranks_from_defenders() {
        let g = flat(3, 3);
        let r = distance_ranks(&g, &[Cell::new(1, 1)]).unwrap();
        for c in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(r.get(Cell::new(c.0, c.1)), 1.0);
        }
        let all: Vec<Cell> = g.cells().collect();
        assert!(distance_ranks(&g, &all).unwrap().ranks.iter().all(|&v| v == 0.0));
        assert!(distance_ranks(&g, &[]).is_err());
    }

    #[test]
    fn score_average_values() {
        assert!((score_average(0.6, 0.4) - 0.5).abs() < 1e-15);
        assert_eq!(score_average(0.0, 0.0), 0.0);
        assert_eq!(score_average(1.0, 1.0), 1.0);
    }

    #[test]
    fn score_update_values() {
        let s = ScoreMap::from_first(1, &[0.5]);
        assert_eq!(s.update(&[0.5]).unwrap().scores, vec![0.5]);
        let s = ScoreMap::from_first(1, &[0.0]);
        assert!((s.update(&[1.0]).unwrap().scores[0] - 0.1).abs() < 1e-15);
        assert!(s.update(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn score_update_contracts_geometrically() {
        let mut s = ScoreMap::from_first(1, &[0.0]);
        let target = 0.8;
        let mut gap = (s.scores[0] - target).abs();
        for _ in 0..50 {
            s = s.update(&[target]).unwrap();
            let g = (s.scores[0] - target).abs();
            assert!((g / gap - 0.9).abs() < 1e-9);
            gap = g;
        }
    }

    #[test]
    fn greedy_argmax() {
        // 3x3, attacker at the center; up=0.2, down=0.9, left=0.1, right=0.3, stay=0.5
        let g = flat(3, 3);
        let mut scores = vec![0.0; 9];
        scores[g.index(Cell::new(0, 1))] = 0.2;
        scores[g.index(Cell::new(2, 1))] = 0.9;
        scores[g.index(Cell::new(1, 0))] = 0.1;
        scores[g.index(Cell::new(1, 2))] = 0.3;
        scores[g.index(Cell::new(1, 1))] = 0.5;
        assert_eq!(greedy_move(&g, Cell::new(1, 1), &scores), Move::Down);
    }

    #[test]
    fn greedy_ties_follow_move_order() {
        let g = flat(5, 5);
        let scores = vec![0.3; 25];
        for c in g.cells() {
            let expected = if c.row > 0 {
                Move::Up
            } else if c.row + 1 < 5 {
                Move::Down
            } else {
                unreachable!()
            };
            assert_eq!(greedy_move(&g, c, &scores), expected);
        }
    }

    #[test]
    fn flee_examples() {
        let g = flat(5, 5);
        assert_eq!(flee_route(&g, Cell::new(2, 1)), Move::Left);
        assert_eq!(flee_route(&g, Cell::new(2, 2)), Move::Up);
        assert_eq!(flee_route(&g, Cell::new(3, 2)), Move::Down);
        assert_eq!(flee_route(&g, Cell::new(0, 2)), Move::Stay);
    }

    #[test]
    fn flee_path_length_is_edge_distance() {
        let (w, h) = (7, 5);
        let g = flat(w, h);
        for start in g.cells() {
            let mut c = start;
            let mut steps = 0;
            while !g.is_edge(c) {
                c = g.apply_move(c, flee_route(&g, c));
                steps += 1;
            }
            let expect = start.row.min(start.col).min(h - 1 - start.row).min(w - 1 - start.col);
            assert_eq!(steps, expect);
        }
    }

    #[test]
    fn resolved_attackers_stay() {
        let g = flat(5, 5);
        let state = GameState {
            t: 0,
            drones: vec![],
            rangers: vec![],
            attackers: vec![
                AttackerState { cell: Cell::new(2, 2), status: AttackerStatus::Caught },
                AttackerState { cell: Cell::new(2, 2), status: AttackerStatus::Fleeing },
            ],
            visits: vec![],
            detections: vec![],
            comms: vec![],
            notifications: vec![],
        };
        let scores = vec![0.0; 25];
        assert_eq!(next_move(&g, &state, 0, &scores), Move::Stay);
        assert_eq!(next_move(&g, &state, 1, &scores), Move::Up);
    }

    #[test]
    fn model_initialises_then_averages() {
        let g = GridWorld::random(5, 5, 3).unwrap();
        let mut m = AttackerModel::new(UpdateCadence::PerEpisode);
        m.begin_episode(&g, &[Cell::new(0, 0)]).unwrap();
        let first = m.scores().unwrap().clone();
        let expected = score_average_map(&g, &distance_ranks(&g, &[Cell::new(0, 0)]).unwrap());
        assert_eq!(first.scores, expected);
        m.end_step().unwrap();
        assert_eq!(m.scores().unwrap(), &first);
        m.begin_episode(&g, &[Cell::new(4, 4)]).unwrap();
        assert_eq!(m.scores().unwrap().updates, 1);

        let mut per_step = AttackerModel::new(UpdateCadence::PerTimestep);
        per_step.begin_episode(&g, &[Cell::new(0, 0)]).unwrap();
        per_step.begin_episode(&g, &[Cell::new(4, 4)]).unwrap();
        assert_eq!(per_step.scores().unwrap().updates, 0);
        per_step.end_step().unwrap();
        assert_eq!(per_step.scores().unwrap().updates, 1);
    }

    #[test]
    fn constant_allocation_converges() {
        let g = GridWorld::random(6, 6, 9).unwrap();
        let mut m = AttackerModel::new(UpdateCadence::PerEpisode);
        m.begin_episode(&g, &[Cell::new(5, 5), Cell::new(0, 3)]).unwrap();
        let alloc = [Cell::new(2, 2)];
        let mut prev = m.scores().unwrap().scores.clone();
        let mut converged_at = None;
        for ep in 1..=200 {
            m.begin_episode(&g, &alloc).unwrap();
            let cur = m.scores().unwrap().scores.clone();
            let diff = cur.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if diff < 1e-6 && converged_at.is_none() {
                converged_at = Some(ep);
            }
            prev = cur;
        }
        assert!(converged_at.is_some());
    }

    proptest! {
        #[test]
        fn scores_stay_in_unit_interval(
            init in proptest::collection::vec(0.0f64..=1.0, 9),
            targets in proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 9), 1..30),
        ) {
            let mut s = ScoreMap::from_first(3, &init);
            for t in &targets {
                s = s.update(t).unwrap();
                prop_assert!(s.scores.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn ranks_ignore_defender_order(mut cells in proptest::collection::vec((0usize..6, 0usize..6), 1..6)) {
            let g = flat(6, 6);
            let a: Vec<Cell> = cells.iter().map(|&(r, c)| Cell::new(r, c)).collect();
            cells.reverse();
            let b: Vec<Cell> = cells.iter().map(|&(r, c)| Cell::new(r, c)).collect();
            prop_assert_eq!(distance_ranks(&g, &a).unwrap(), distance_ranks(&g, &b).unwrap());
        }

        #[test]
        fn greedy_move_is_legal(scores in proptest::collection::vec(0.0f64..1.0, 25), r in 0usize..5, c in 0usize..5) {
            let g = flat(5, 5);
            let m = greedy_move(&g, Cell::new(r, c), &scores);
            prop_assert!(g.legal_moves(Cell::new(r, c)).contains(&m));
        }

        #[test]
        fn extra_defender_never_increases_distance(
            cells in proptest::collection::vec((0usize..6, 0usize..6), 1..5),
            extra in (0usize..6, 0usize..6),
        ) {
            let base: Vec<Cell> = cells.iter().map(|&(r, c)| Cell::new(r, c)).collect();
            let mut more = base.clone();
            more.push(Cell::new(extra.0, extra.1));
            for c in flat(6, 6).cells() {
                let d0 = base.iter().map(|f| c.manhattan(*f)).min().unwrap();
                let d1 = more.iter().map(|f| c.manhattan(*f)).min().unwrap();
                prop_assert!(d1 <= d0);
            }
        }
    }
}
