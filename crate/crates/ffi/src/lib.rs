//! C ABI over the simulator.
//!
//! Every function returns a [`GsgStatus`]. On failure the message is kept per
//! thread and read with [`gsg_last_error`]. Handles are opaque, created by a
//! `*_new`/`*_load` function and released with the matching `*_free`.
//!
//! Cells are row-major indices `row * width + col`. Moves are numbered
//! up, down, left, right, stay; a drone action is `move * 3 + comm` with comm
//! noop, signal, notify.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use gsg::attacker::AttackerModel;
use gsg::engine::{AttackerStatus, DroneAction, Engine, GameConfig, GameState};
use gsg::grid::{Cell, GridWorld, Move};
use gsg::harness::ExperimentConfig;
use gsg::seed::{self, Rng};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GsgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// The episode already ended; call `gsg_game_reset`.
    Terminal = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GsgRole {
    Drone = 0,
    Ranger = 1,
    Attacker = 2,
}

/// Attacker status codes written by `gsg_game_attacker_status`.
pub const GSG_ATTACKER_ACTIVE: u32 = 0;
pub const GSG_ATTACKER_FLEEING: u32 = 1;
pub const GSG_ATTACKER_CAUGHT: u32 = 2;
pub const GSG_ATTACKER_FLED: u32 = 3;

/// A park grid with its animal density map.
pub struct GsgGrid {
    grid: GridWorld,
}

/// One patrolling game: engine state, heuristic attackers and the random stream.
pub struct GsgGame {
    grid: GridWorld,
    config: GameConfig,
    seed: u64,
    episodes: u64,
    state: Option<GameState>,
    rng: Rng,
    attackers: AttackerModel,
    total: f64,
}

/// A parsed experiment configuration.
pub struct GsgConfig {
    config: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(GsgStatus, String);

impl From<gsg::Error> for Failure {
    fn from(e: gsg::Error) -> Self {
        let status = match &e {
            gsg::Error::Io(_) => GsgStatus::Io,
            gsg::Error::Parse(_) | gsg::Error::Json(_) | gsg::Error::Trace(_) => GsgStatus::Parse,
            gsg::Error::Terminal => GsgStatus::Terminal,
            _ => GsgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(GsgStatus::InvalidArgument, msg.to_string())
}

fn null() -> Failure {
    Failure(GsgStatus::NullPointer, "null pointer argument".into())
}

/// Runs `f`, records any error or panic and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GsgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GsgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GsgStatus::Internal
        }
    }
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(null)
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn handle_mut<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(null)
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null());
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gsg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Grid with density derived from the border, a river and a road.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsg_grid_new_spatial(width: usize, height: usize, out: *mut *mut GsgGrid) -> GsgStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let (river, road) = GridWorld::default_features(width, height);
        let grid = GridWorld::spatial(width, height, river, road)?;
        *out = Box::into_raw(Box::new(GsgGrid { grid }));
        Ok(())
    })
}

/// Grid with uniform random density.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsg_grid_new_random(
    width: usize,
    height: usize,
    seed: u64,
    out: *mut *mut GsgGrid,
) -> GsgStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let grid = GridWorld::random(width, height, seed)?;
        *out = Box::into_raw(Box::new(GsgGrid { grid }));
        Ok(())
    })
}

/// # Safety
/// `grid` must come from a `gsg_grid_new_*` call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gsg_grid_free(grid: *mut GsgGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// `grid` must be a live handle; `width` and `height` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gsg_grid_size(grid: *const GsgGrid, width: *mut usize, height: *mut usize) -> GsgStatus {
    guard(|| {
        let g = &handle(grid)?.grid;
        *out_ptr(width)? = g.width();
        *out_ptr(height)? = g.height();
        Ok(())
    })
}

/// Copies the density map into `buf`, which must hold `width * height` values.
///
/// # Safety
/// `grid` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gsg_grid_density(grid: *const GsgGrid, buf: *mut f64, len: usize) -> GsgStatus {
    guard(|| {
        let d = handle(grid)?.grid.density();
        if buf.is_null() {
            return Err(null());
        }
        if len < d.len() {
            return Err(Failure(GsgStatus::BufferTooSmall, format!("need {} values", d.len())));
        }
        std::slice::from_raw_parts_mut(buf, d.len()).copy_from_slice(d);
        Ok(())
    })
}

/// Creates a game on a copy of `grid`. Rewards and discounting use the
/// library defaults. Call `gsg_game_reset` before stepping.
///
/// # Safety
/// `grid` must be a live handle and `out` a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn gsg_game_new(
    grid: *const GsgGrid,
    drones: usize,
    rangers: usize,
    attackers: usize,
    max_steps: usize,
    beta: f64,
    kappa: f64,
    seed: u64,
    out: *mut *mut GsgGame,
) -> GsgStatus {
    guard(|| {
        let grid = handle(grid)?.grid.clone();
        let out = out_ptr(out)?;
        let config = GameConfig {
            drones,
            rangers,
            attackers,
            max_steps,
            beta,
            kappa,
            ..GameConfig::default()
        };
        config.validate()?;
        *out = Box::into_raw(Box::new(GsgGame {
            grid,
            config,
            seed,
            episodes: 0,
            state: None,
            rng: seed::from_seed(seed),
            attackers: AttackerModel::default(),
            total: 0.0,
        }));
        Ok(())
    })
}

/// # Safety
/// `game` must come from `gsg_game_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gsg_game_free(game: *mut GsgGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

fn cell_of(grid: &GridWorld, index: u32) -> Result<Cell, Failure> {
    let i = index as usize;
    if i >= grid.n_cells() {
        return Err(invalid("cell index outside the grid"));
    }
    Ok(grid.cell_at(i))
}

/// Starts a new episode. `cells` lists the drones, then the rangers, then the
/// attackers. The attacker score map persists across episodes of one game.
///
/// # Safety
/// `game` must be a live handle and `cells` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn gsg_game_reset(game: *mut GsgGame, cells: *const u32, len: usize) -> GsgStatus {
    guard(|| {
        let g = handle_mut(game)?;
        let cells = slice(cells, len)?;
        let (nd, nr, na) = (g.config.drones, g.config.rangers, g.config.attackers);
        if cells.len() != nd + nr + na {
            return Err(invalid("expected one cell per drone, ranger and attacker"));
        }
        let all = cells
            .iter()
            .map(|&c| cell_of(&g.grid, c))
            .collect::<Result<Vec<_>, _>>()?;
        let state = Engine::new(&g.grid, &g.config).init(&all[..nd], &all[nd..nd + nr], &all[nd + nr..])?;
        g.attackers.begin_episode(&g.grid, &all[..nd + nr])?;
        g.rng = seed::stream(g.seed, "ffi-episode", g.episodes);
        g.episodes += 1;
        g.state = Some(state);
        g.total = 0.0;
        Ok(())
    })
}

/// Advances one timestep. Attackers move by the built-in heuristic.
///
/// # Safety
/// `game` must be a live handle, the action arrays valid for one entry per
/// drone and ranger, and the out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn gsg_game_step(
    game: *mut GsgGame,
    drone_actions: *const u32,
    ranger_moves: *const u32,
    reward: *mut f64,
    done: *mut bool,
) -> GsgStatus {
    guard(|| {
        let g = handle_mut(game)?;
        let reward = out_ptr(reward)?;
        let done = out_ptr(done)?;
        let da = slice(drone_actions, g.config.drones)?
            .iter()
            .map(|&a| DroneAction::from_index(a as usize).ok_or_else(|| invalid("drone action out of range")))
            .collect::<Result<Vec<_>, _>>()?;
        let rm = slice(ranger_moves, g.config.rangers)?
            .iter()
            .map(|&m| Move::from_index(m as usize).ok_or_else(|| invalid("ranger move out of range")))
            .collect::<Result<Vec<_>, _>>()?;
        let state = g
            .state
            .as_mut()
            .ok_or_else(|| Failure(GsgStatus::Terminal, "no episode in progress".into()))?;
        let engine = Engine::new(&g.grid, &g.config);
        let am = g.attackers.moves(&g.grid, state);
        let out = engine.step(state, &da, &rm, &am, &mut g.rng)?;
        g.attackers.end_step()?;
        g.total += out.reward;
        *reward = out.reward;
        *done = engine.is_terminal(state);
        Ok(())
    })
}

/// Current cells of every agent with the given role.
///
/// # Safety
/// `game` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gsg_game_cells(game: *const GsgGame, role: GsgRole, buf: *mut u32, len: usize) -> GsgStatus {
    guard(|| {
        let g = handle(game)?;
        let state = g.state.as_ref().ok_or_else(|| invalid("no episode in progress"))?;
        let cells: Vec<Cell> = match role {
            GsgRole::Drone => state.drones.clone(),
            GsgRole::Ranger => state.rangers.clone(),
            GsgRole::Attacker => state.attackers.iter().map(|a| a.cell).collect(),
        };
        if len < cells.len() {
            return Err(Failure(GsgStatus::BufferTooSmall, format!("need {} cells", cells.len())));
        }
        if cells.is_empty() {
            return Ok(());
        }
        if buf.is_null() {
            return Err(null());
        }
        let out = std::slice::from_raw_parts_mut(buf, cells.len());
        for (o, c) in out.iter_mut().zip(&cells) {
            *o = g.grid.index(*c) as u32;
        }
        Ok(())
    })
}

/// Writes one `GSG_ATTACKER_*` code per attacker.
///
/// # Safety
/// `game` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gsg_game_attacker_status(game: *const GsgGame, buf: *mut u32, len: usize) -> GsgStatus {
    guard(|| {
        let g = handle(game)?;
        let state = g.state.as_ref().ok_or_else(|| invalid("no episode in progress"))?;
        if len < state.attackers.len() {
            return Err(Failure(GsgStatus::BufferTooSmall, format!("need {} entries", state.attackers.len())));
        }
        if buf.is_null() {
            return Err(null());
        }
        let out = std::slice::from_raw_parts_mut(buf, state.attackers.len());
        for (o, a) in out.iter_mut().zip(&state.attackers) {
            *o = match a.status {
                AttackerStatus::Active => GSG_ATTACKER_ACTIVE,
                AttackerStatus::Fleeing => GSG_ATTACKER_FLEEING,
                AttackerStatus::Caught => GSG_ATTACKER_CAUGHT,
                AttackerStatus::Fled => GSG_ATTACKER_FLED,
            };
        }
        Ok(())
    })
}

/// Defender return accumulated in the current episode.
///
/// # Safety
/// `game` must be a live handle and `total` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsg_game_total_reward(game: *const GsgGame, total: *mut f64) -> GsgStatus {
    guard(|| {
        *out_ptr(total)? = handle(game)?.total;
        Ok(())
    })
}

/// Parses and validates a TOML experiment config.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsg_config_load(path: *const c_char, out: *mut *mut GsgConfig) -> GsgStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let config = ExperimentConfig::load(c_path(path)?)?;
        *out = Box::into_raw(Box::new(GsgConfig { config }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from `gsg_config_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gsg_config_free(config: *mut GsgConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Writes the 64-character hex config hash plus a NUL into `buf`.
///
/// # Safety
/// `config` must be a live handle and `buf` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn gsg_config_hash(config: *const GsgConfig, buf: *mut c_char, len: usize) -> GsgStatus {
    guard(|| {
        let hash = handle(config)?.config.hash()?;
        if buf.is_null() {
            return Err(null());
        }
        if len < hash.len() + 1 {
            return Err(Failure(GsgStatus::BufferTooSmall, format!("need {} bytes", hash.len() + 1)));
        }
        let out = std::slice::from_raw_parts_mut(buf as *mut u8, hash.len() + 1);
        out[..hash.len()].copy_from_slice(hash.as_bytes());
        out[hash.len()] = 0;
        Ok(())
    })
}

/// Master seed of a loaded config.
///
/// # Safety
/// `config` must be a live handle and `seed` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsg_config_seed(config: *const GsgConfig, seed: *mut u64) -> GsgStatus {
    guard(|| {
        *out_ptr(seed)? = handle(config)?.config.seed;
        Ok(())
    })
}

/// Replays a JSON-lines trace and writes its total defender reward.
///
/// # Safety
/// `path` must be a NUL-terminated string and `total` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsg_trace_replay(path: *const c_char, total: *mut f64) -> GsgStatus {
    guard(|| {
        let total = out_ptr(total)?;
        let (_, t) = gsg::harness::replay_trace(c_path(path)?)?;
        *total = t;
        Ok(())
    })
}
