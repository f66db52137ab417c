#ifndef GSG_H
#define GSG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Attacker status codes written by `gsg_game_attacker_status`.
 */
#define GSG_ATTACKER_ACTIVE 0

#define GSG_ATTACKER_FLEEING 1

#define GSG_ATTACKER_CAUGHT 2

#define GSG_ATTACKER_FLED 3

typedef enum GsgRole {
  GSG_ROLE_DRONE = 0,
  GSG_ROLE_RANGER = 1,
  GSG_ROLE_ATTACKER = 2,
} GsgRole;

typedef enum GsgStatus {
  GSG_STATUS_OK = 0,
  GSG_STATUS_NULL_POINTER = 1,
  GSG_STATUS_INVALID_ARGUMENT = 2,
  GSG_STATUS_IO = 3,
  GSG_STATUS_PARSE = 4,
  /*
   The episode already ended; call `gsg_game_reset`.
   */
  GSG_STATUS_TERMINAL = 5,
  GSG_STATUS_BUFFER_TOO_SMALL = 6,
  GSG_STATUS_INTERNAL = 7,
} GsgStatus;

/*
 A parsed experiment configuration.
 */
typedef struct GsgConfig GsgConfig;

/*
 One patrolling game: engine state, heuristic attackers and the random stream.
 */
typedef struct GsgGame GsgGame;

/*
 A park grid with its animal density map.
 */
typedef struct GsgGrid GsgGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or an empty string.
 The pointer stays valid until the next call on the same thread.
 */
const char *gsg_last_error(void);

/*
 Grid with density derived from the border, a river and a road.

 # Safety
 `out` must be a valid pointer.
 */
enum GsgStatus gsg_grid_new_spatial(size_t width, size_t height, struct GsgGrid **out);

/*
 Grid with uniform random density.

 # Safety
 `out` must be a valid pointer.
 */
enum GsgStatus gsg_grid_new_random(size_t width,
                                   size_t height,
                                   uint64_t seed,
                                   struct GsgGrid **out);

/*
 # Safety
 `grid` must come from a `gsg_grid_new_*` call and not be used afterwards.
 */
void gsg_grid_free(struct GsgGrid *grid);

/*
 # Safety
 `grid` must be a live handle; `width` and `height` valid pointers.
 */
enum GsgStatus gsg_grid_size(const struct GsgGrid *grid, size_t *width, size_t *height);

/*
 Copies the density map into `buf`, which must hold `width * height` values.

 # Safety
 `grid` must be a live handle and `buf` valid for `len` writes.
 */
enum GsgStatus gsg_grid_density(const struct GsgGrid *grid, double *buf, size_t len);

/*
 Creates a game on a copy of `grid`. Rewards and discounting use the
 library defaults. Call `gsg_game_reset` before stepping.

 # Safety
 `grid` must be a live handle and `out` a valid pointer.
 */
enum GsgStatus gsg_game_new(const struct GsgGrid *grid,
                            size_t drones,
                            size_t rangers,
                            size_t attackers,
                            size_t max_steps,
                            double beta,
                            double kappa,
                            uint64_t seed,
                            struct GsgGame **out);

/*
 # Safety
 `game` must come from `gsg_game_new` and not be used afterwards.
 */
void gsg_game_free(struct GsgGame *game);

/*
 Starts a new episode. `cells` lists the drones, then the rangers, then the
 attackers. The attacker score map persists across episodes of one game.

 # Safety
 `game` must be a live handle and `cells` valid for `len` reads.
 */
enum GsgStatus gsg_game_reset(struct GsgGame *game, const uint32_t *cells, size_t len);

/*
 Advances one timestep. Attackers move by the built-in heuristic.

 # Safety
 `game` must be a live handle, the action arrays valid for one entry per
 drone and ranger, and the out pointers valid.
 */
enum GsgStatus gsg_game_step(struct GsgGame *game,
                             const uint32_t *drone_actions,
                             const uint32_t *ranger_moves,
                             double *reward,
                             bool *done);

/*
 Current cells of every agent with the given role.

 # Safety
 `game` must be a live handle and `buf` valid for `len` writes.
 */
enum GsgStatus gsg_game_cells(const struct GsgGame *game,
                              enum GsgRole role,
                              uint32_t *buf,
                              size_t len);

/*
 Writes one `GSG_ATTACKER_*` code per attacker.

 # Safety
 `game` must be a live handle and `buf` valid for `len` writes.
 */
enum GsgStatus gsg_game_attacker_status(const struct GsgGame *game, uint32_t *buf, size_t len);

/*
 Defender return accumulated in the current episode.

 # Safety
 `game` must be a live handle and `total` a valid pointer.
 */
enum GsgStatus gsg_game_total_reward(const struct GsgGame *game, double *total);

/*
 Parses and validates a TOML experiment config.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GsgStatus gsg_config_load(const char *path, struct GsgConfig **out);

/*
 # Safety
 `config` must come from `gsg_config_load` and not be used afterwards.
 */
void gsg_config_free(struct GsgConfig *config);

/*
 Writes the 64-character hex config hash plus a NUL into `buf`.

 # Safety
 `config` must be a live handle and `buf` valid for `len` bytes.
 */
enum GsgStatus gsg_config_hash(const struct GsgConfig *config, char *buf, size_t len);

/*
 Master seed of a loaded config.

 # Safety
 `config` must be a live handle and `seed` a valid pointer.
 */
enum GsgStatus gsg_config_seed(const struct GsgConfig *config, uint64_t *seed);

/*
 Replays a JSON-lines trace and writes its total defender reward.

 # Safety
 `path` must be a NUL-terminated string and `total` a valid pointer.
 */
enum GsgStatus gsg_trace_replay(const char *path, double *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GSG_H */
