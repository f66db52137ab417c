#include <stdio.h>
#include "gsg.h"

int main(void) {
    GsgGrid *grid = NULL;
    if (gsg_grid_new_spatial(8, 8, &grid) != GSG_STATUS_OK) return 1;

    GsgGame *game = NULL;
    if (gsg_game_new(grid, 2, 1, 1, 30, 0.0, 0.0, 7, &game) != GSG_STATUS_OK) return 2;
    gsg_grid_free(grid);

    uint32_t cells[4] = {0, 7, 56, 36};
    if (gsg_game_reset(game, cells, 4) != GSG_STATUS_OK) return 3;
    uint32_t drones[2] = {4 * 3, 4 * 3};
    uint32_t rangers[1] = {4};
    double reward = 0.0, total = 0.0;
    bool done = false;
    int steps = 0;
    while (!done) {
        if (gsg_game_step(game, drones, rangers, &reward, &done) != GSG_STATUS_OK) return 4;
        total += reward;
        steps++;
    }
    if (gsg_game_step(game, drones, rangers, &reward, &done) != GSG_STATUS_TERMINAL) return 5;
    printf("steps=%d total=%.6f error=%s\n", steps, total, gsg_last_error());
    gsg_game_free(game);
    return 0;
}
