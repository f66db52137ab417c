use gsg::engine::GameConfig;
use gsg::grid::GridWorld;
use gsg::patrol::{train_patrol, PatrolConfig};

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn trained_patrol_beats_random_patrol_on_small_grid() {
    let grid = GridWorld::random(5, 5, 11).unwrap();
    let game = GameConfig {
        drones: 1,
        rangers: 1,
        attackers: 1,
        max_steps: 25,
        beta: 0.0,
        kappa: 0.0,
        ..GameConfig::default()
    };
    let learned = PatrolConfig {
        episodes: 2000,
        eps_decay_steps: 25_000,
        lr: 1e-3,
        warmup: 200,
        ..PatrolConfig::default()
    };
    let random = PatrolConfig {
        eps_start: 1.0,
        eps_end: 1.0,
        episodes: 500,
        ..learned.clone()
    };
    let (_, trained) = train_patrol(&grid, &game, &learned, 5, None).unwrap();
    let (_, baseline) = train_patrol(&grid, &game, &random, 6, None).unwrap();

    let (m_t, se_t) = mean_and_se(&trained.returns[trained.returns.len() - 100..]);
    let (m_r, se_r) = mean_and_se(&baseline.returns);
    let se = (se_t * se_t + se_r * se_r).sqrt();
    assert!(
        m_t - m_r >= 3.0 * se,
        "trained {m_t:.3} ± {se_t:.3} vs random {m_r:.3} ± {se_r:.3}"
    );
}
