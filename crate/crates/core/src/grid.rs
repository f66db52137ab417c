//! Park grid, animal-density maps and distance ranks.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Weights of the (boundary, road, river) ranks in the animal rank.
pub const ANIMAL_RANK_WEIGHTS: [f64; 3] = [0.1, 0.1, 0.8];
/// Weights of the (animal, river, road, boundary) ranks in the final density.
pub const DENSITY_WEIGHTS: [f64; 4] = [0.7, 0.05, 0.15, 0.1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

/// One-cell movement. The declaration order is the tie-break order used
/// everywhere in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Move {
    pub const ALL: [Move; 5] = [Move::Up, Move::Down, Move::Left, Move::Right, Move::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Move> {
        Self::ALL.get(i).copied()
    }
}

/// Per-cell rank in `[0, 1]`; larger means farther from the feature.
#[derive(Clone, Debug, PartialEq)]
pub struct RankMap {
    pub width: usize,
    pub height: usize,
    pub ranks: Vec<f64>,
}

impl RankMap {
    /// Min-max normalised Manhattan distance to the nearest feature cell.
    ///
    /// Every distance between 0 and the maximum occurs on an open grid, so this
    /// is also the normalised ordinal rank of the distance values.
    pub fn from_features(width: usize, height: usize, features: &[Cell]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyFeatureSet);
        }
        let mut ranks: Vec<f64> = manhattan_field(width, height, features)?
            .into_iter()
            .map(|d| d as f64)
            .collect();
        normalize_min_max(&mut ranks);
        Ok(Self {
            width,
            height,
            ranks,
        })
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.ranks[cell.row * self.width + cell.col]
    }
}

/// Multi-source BFS distance to the nearest feature cell. On an open grid the
/// BFS distance equals the Manhattan distance.
fn manhattan_field(width: usize, height: usize, features: &[Cell]) -> Result<Vec<usize>> {
    let mut dist = vec![usize::MAX; width * height];
    let mut queue = VecDeque::new();
    for &f in features {
        if f.row >= height || f.col >= width {
            return Err(Error::Config(format!("feature cell {f:?} outside {width}x{height} grid")));
        }
        let i = f.row * width + f.col;
        if dist[i] != 0 {
            dist[i] = 0;
            queue.push_back(f);
        }
    }
    while let Some(c) = queue.pop_front() {
        let d = dist[c.row * width + c.col];
        for n in open_neighbors(width, height, c) {
            let j = n.row * width + n.col;
            if dist[j] == usize::MAX {
                dist[j] = d + 1;
                queue.push_back(n);
            }
        }
    }
    Ok(dist)
}

fn open_neighbors(width: usize, height: usize, c: Cell) -> impl Iterator<Item = Cell> {
    Move::ALL[..4]
        .iter()
        .filter_map(move |&m| offset(width, height, c, m))
}

fn offset(width: usize, height: usize, c: Cell, m: Move) -> Option<Cell> {
    match m {
        Move::Up => c.row.checked_sub(1).map(|r| Cell::new(r, c.col)),
        Move::Down => (c.row + 1 < height).then(|| Cell::new(c.row + 1, c.col)),
        Move::Left => c.col.checked_sub(1).map(|col| Cell::new(c.row, col)),
        Move::Right => (c.col + 1 < width).then(|| Cell::new(c.row, c.col + 1)),
        Move::Stay => Some(c),
    }
}

/// Rescales to `[0, 1]`. A constant input maps to all zeros.
pub fn normalize_min_max(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    width: usize,
    height: usize,
    density: Vec<f64>,
    river: Vec<Cell>,
    road: Vec<Cell>,
}

impl GridWorld {
    /// Grid with an explicit density map (row-major).
    pub fn from_density(width: usize, height: usize, density: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimension(format!("{width}x{height}")));
        }
        if density.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: width * height,
                got: density.len(),
            });
        }
        if let Some(v) = density.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("density value {v} outside [0,1]")));
        }
        Ok(Self {
            width,
            height,
            density,
            river: Vec::new(),
            road: Vec::new(),
        })
    }

    /// I.i.d. uniform densities.
    pub fn random(width: usize, height: usize, seed: u64) -> Result<Self> {
        check_min_dims(width, height)?;
        let mut rng = seed::from_seed(seed);
        let density = (0..width * height).map(|_| rng.gen::<f64>()).collect();
        Self::from_density(width, height, density)
    }

    /// Default river/road geometry: river down column `W/3`, road along row `2H/3`.
    pub fn default_features(width: usize, height: usize) -> (Vec<Cell>, Vec<Cell>) {
        let river = (0..height).map(|r| Cell::new(r, width / 3)).collect();
        let road = (0..width).map(|c| Cell::new(2 * height / 3, c)).collect();
        (river, road)
    }

    /// Density from distance to the boundary, a road and a river.
    pub fn spatial(
        width: usize,
        height: usize,
        river: Vec<Cell>,
        road: Vec<Cell>,
    ) -> Result<Self> {
        check_min_dims(width, height)?;
        check_crossing_path(width, height, &river, "river")?;
        check_crossing_path(width, height, &road, "road")?;
        let boundary: Vec<Cell> = (0..height)
            .flat_map(|r| (0..width).map(move |c| Cell::new(r, c)))
            .filter(|c| c.row == 0 || c.col == 0 || c.row + 1 == height || c.col + 1 == width)
            .collect();
        let boundary = RankMap::from_features(width, height, &boundary)?;
        let river_rank = RankMap::from_features(width, height, &river)?;
        let road_rank = RankMap::from_features(width, height, &road)?;
        let mut density =
            combine_ranks(&boundary.ranks, &road_rank.ranks, &river_rank.ranks);
        normalize_min_max(&mut density);
        let mut grid = Self::from_density(width, height, density)?;
        grid.river = river;
        grid.road = road;
        Ok(grid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn river(&self) -> &[Cell] {
        &self.river
    }

    pub fn road(&self) -> &[Cell] {
        &self.road
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.row < self.height && c.col < self.width
    }

    pub fn index(&self, c: Cell) -> usize {
        debug_assert!(self.contains(c));
        c.row * self.width + c.col
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index / self.width, index % self.width)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_cells()).map(|i| self.cell_at(i))
    }

    pub fn density_at(&self, c: Cell) -> f64 {
        self.density[self.index(c)]
    }

    pub fn is_edge(&self, c: Cell) -> bool {
        c.row == 0 || c.col == 0 || c.row + 1 == self.height || c.col + 1 == self.width
    }

    /// Destination of `m` from `c`, or `None` when it would leave the grid.
    pub fn step(&self, c: Cell, m: Move) -> Option<Cell> {
        offset(self.width, self.height, c, m)
    }

    /// Destination of `m`; moves off the grid clamp to staying put.
    pub fn apply_move(&self, c: Cell, m: Move) -> Cell {
        self.step(c, m).unwrap_or(c)
    }

    pub fn legal_moves(&self, c: Cell) -> Vec<Move> {
        Move::ALL
            .iter()
            .copied()
            .filter(|&m| self.step(c, m).is_some())
            .collect()
    }

    /// In-grid 4-neighbours plus the cell itself, in move order.
    pub fn neighbors(&self, c: Cell) -> Vec<Cell> {
        Move::ALL.iter().filter_map(|&m| self.step(c, m)).collect()
    }

    pub fn feature_rank(&self, features: &[Cell]) -> Result<RankMap> {
        RankMap::from_features(self.width, self.height, features)
    }

    /// Row-major CSV, one grid row per line, six decimals.
    pub fn write_density_csv<W: Write>(&self, out: W) -> Result<()> {
        write_map_csv(out, self.width, &self.density)
    }
}

/// Two-stage weighted average of the boundary, road and river ranks.
pub fn combine_ranks(boundary: &[f64], road: &[f64], river: &[f64]) -> Vec<f64> {
    let [wb, wr, wv] = ANIMAL_RANK_WEIGHTS;
    let [da, dv, dr, db] = DENSITY_WEIGHTS;
    boundary
        .iter()
        .zip(road)
        .zip(river)
        .map(|((&b, &r), &v)| {
            let animal = wb * b + wr * r + wv * v;
            da * animal + dv * v + dr * r + db * b
        })
        .collect()
}

pub fn write_map_csv<W: Write>(mut out: W, width: usize, values: &[f64]) -> Result<()> {
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

fn check_min_dims(width: usize, height: usize) -> Result<()> {
    if width < 3 || height < 3 {
        return Err(Error::InvalidDimension(format!(
            "{width}x{height}: both dimensions must be at least 3"
        )));
    }
    Ok(())
}

fn check_crossing_path(width: usize, height: usize, cells: &[Cell], what: &str) -> Result<()> {
    if cells.is_empty() {
        return Err(Error::Config(format!("{what} has no cells")));
    }
    let mut member = vec![false; width * height];
    for c in cells {
        if c.row >= height || c.col >= width {
            return Err(Error::Config(format!("{what} cell {c:?} outside the grid")));
        }
        member[c.row * width + c.col] = true;
    }
    let mut seen = vec![false; width * height];
    let start = cells[0];
    seen[start.row * width + start.col] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for n in open_neighbors(width, height, c) {
            let j = n.row * width + n.col;
            if member[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(n);
            }
        }
    }
    if member.iter().zip(&seen).any(|(&m, &s)| m && !s) {
        return Err(Error::Config(format!("{what} path is not connected")));
    }
    let touches = |pred: &dyn Fn(&Cell) -> bool| cells.iter().any(pred);
    let vertical = touches(&|c| c.row == 0) && touches(&|c| c.row + 1 == height);
    let horizontal = touches(&|c| c.col == 0) && touches(&|c| c.col + 1 == width);
    if !(vertical || horizontal) {
        return Err(Error::Config(format!("{what} path does not cross the grid")));
    }
    Ok(())
}
