//! Competitive policy optimisation for a two-player zero-sum objective.
//!
//! With the defender maximising `U` and the attacker minimising it, each
//! step plays the Nash equilibrium of the regularised bilinear local game:
//!
//! ```text
//! Δw_d = α (I + α² H Hᵀ)⁻¹ (g_d + α H g_a)
//! Δw_a = α (I + α² Hᵀ H)⁻¹ (g_a − α Hᵀ g_d)
//! ```
//!
//! where `g_d = ∇_d U`, `g_a = ∇_a (−U)` and `H = D_da U`. The inverses are
//! applied by conjugate gradients through [`MixedProducts`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bilinear, MixedProducts};

/// Gradients and mixed block of one local game.
pub trait CopoTerms: MixedProducts {
    /// `∇_d U` for the maximising player.
    fn g_d(&self) -> &[f64];
    /// `∇_a (−U)`: the minimising player's own ascent direction.
    fn g_a(&self) -> &[f64];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgConfig {
    pub max_iterations: usize,
    /// Accept when `‖r‖ ≤ tolerance · max(1, ‖b‖)`.
    pub tolerance: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            tolerance: 1e-8,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub enum CgOutcome {
    Converged { x: Vec<f64>, iterations: usize, residual: f64 },
    /// Non-positive curvature or a non-finite value; the caller falls back.
    Breakdown,
}

/// Solves `A x = b` for symmetric positive definite `A` given as a closure.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], config: &CgConfig) -> Result<CgOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let threshold = config.tolerance * norm(b).max(1.0);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let true_residual = |x: &[f64]| -> f64 {
        let ax = apply(x);
        norm(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>())
    };
    for it in 0..=config.max_iterations {
        if rr.sqrt() <= threshold {
            let residual = true_residual(&x);
            if residual <= threshold {
                return Ok(CgOutcome::Converged {
                    x,
                    iterations: it,
                    residual,
                });
            }
            // recurrence drifted; restart from the true residual
            r = b.iter().zip(apply(&x)).map(|(bi, ai)| bi - ai).collect();
            p = r.clone();
            rr = dot(&r, &r);
        }
        if it == config.max_iterations {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Ok(CgOutcome::Breakdown);
        }
        let step = rr / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(Error::CgNotConverged {
        iterations: config.max_iterations,
        residual: true_residual(&x),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CopoStep {
    pub delta_d: Vec<f64>,
    pub delta_a: Vec<f64>,
    /// Larger of the two CG residuals; zero when a fallback was used.
    pub residual: f64,
    pub fallback: bool,
}

/// Solves both local games. On CG breakdown each player falls back to a
/// plain gradient step `α g`.
pub fn copo_update<T: CopoTerms + ?Sized>(terms: &T, alpha: f64, cg: &CgConfig) -> Result<CopoStep> {
    if !(alpha > 0.0) {
        return Err(Error::Config("coPO step size must be positive".into()));
    }
    let g_d = terms.g_d();
    let g_a = terms.g_a();
    if g_d.len() != terms.x_len() || g_a.len() != terms.y_len() {
        return Err(Error::ShapeMismatch {
            expected: terms.x_len() + terms.y_len(),
            got: g_d.len() + g_a.len(),
        });
    }
    if g_d.iter().chain(g_a).any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite coPO gradient".into()));
    }
    let a2 = alpha * alpha;
    let h_ga = terms.mixed(g_a);
    let ht_gd = terms.mixed_transpose(g_d);
    let b_d: Vec<f64> = g_d.iter().zip(&h_ga).map(|(g, h)| g + alpha * h).collect();
    let b_a: Vec<f64> = g_a.iter().zip(&ht_gd).map(|(g, h)| g - alpha * h).collect();
    let op_d = |v: &[f64]| -> Vec<f64> {
        let hhv = terms.mixed(&terms.mixed_transpose(v));
        v.iter().zip(hhv).map(|(a, b)| a + a2 * b).collect()
    };
    let op_a = |v: &[f64]| -> Vec<f64> {
        let hhv = terms.mixed_transpose(&terms.mixed(v));
        v.iter().zip(hhv).map(|(a, b)| a + a2 * b).collect()
    };
    let sd = conjugate_gradient(op_d, &b_d, cg)?;
    let sa = conjugate_gradient(op_a, &b_a, cg)?;
    match (sd, sa) {
        (
            CgOutcome::Converged { x: xd, residual: rd, .. },
            CgOutcome::Converged { x: xa, residual: ra, .. },
        ) => Ok(CopoStep {
            delta_d: xd.iter().map(|v| alpha * v).collect(),
            delta_a: xa.iter().map(|v| alpha * v).collect(),
            residual: rd.max(ra),
            fallback: false,
        }),
        _ => Ok(CopoStep {
            delta_d: g_d.iter().map(|v| alpha * v).collect(),
            delta_a: g_a.iter().map(|v| alpha * v).collect(),
            residual: 0.0,
            fallback: true,
        }),
    }
}

/// Score-function estimates from `n_s` joint samples:
/// `g_d = mean[s_d A]`, `g_a = mean[s_a (−A)]`, `H v = mean[s_d (s_aᵀ v) A]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatedTerms {
    scores_d: Vec<Vec<f64>>,
    scores_a: Vec<Vec<f64>>,
    advantages: Vec<f64>,
    g_d: Vec<f64>,
    g_a: Vec<f64>,
}

impl EstimatedTerms {
    pub fn new(scores_d: Vec<Vec<f64>>, scores_a: Vec<Vec<f64>>, advantages: Vec<f64>) -> Result<Self> {
        let n = advantages.len();
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        if scores_d.len() != n || scores_a.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: scores_d.len().min(scores_a.len()),
            });
        }
        let dd = scores_d[0].len();
        let da = scores_a[0].len();
        if scores_d.iter().any(|s| s.len() != dd) || scores_a.iter().any(|s| s.len() != da) {
            return Err(Error::Config("score vectors differ in length".into()));
        }
        let mut g_d = vec![0.0; dd];
        let mut g_a = vec![0.0; da];
        let inv = 1.0 / n as f64;
        for i in 0..n {
            let a = advantages[i];
            for (g, s) in g_d.iter_mut().zip(&scores_d[i]) {
                *g += inv * s * a;
            }
            for (g, s) in g_a.iter_mut().zip(&scores_a[i]) {
                *g += inv * s * (-a);
            }
        }
        Ok(Self {
            scores_d,
            scores_a,
            advantages,
            g_d,
            g_a,
        })
    }

    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

impl MixedProducts for EstimatedTerms {
    fn x_len(&self) -> usize {
        self.g_d.len()
    }

    fn y_len(&self) -> usize {
        self.g_a.len()
    }

    fn mixed(&self, v: &[f64]) -> Vec<f64> {
        let inv = 1.0 / self.len() as f64;
        let mut out = vec![0.0; self.x_len()];
        for i in 0..self.len() {
            let c = inv * self.advantages[i] * dot(&self.scores_a[i], v);
            for (o, s) in out.iter_mut().zip(&self.scores_d[i]) {
                *o += c * s;
            }
        }
        out
    }

    fn mixed_transpose(&self, u: &[f64]) -> Vec<f64> {
        let inv = 1.0 / self.len() as f64;
        let mut out = vec![0.0; self.y_len()];
        for i in 0..self.len() {
            let c = inv * self.advantages[i] * dot(&self.scores_d[i], u);
            for (o, s) in out.iter_mut().zip(&self.scores_a[i]) {
                *o += c * s;
            }
        }
        out
    }
}

impl CopoTerms for EstimatedTerms {
    fn g_d(&self) -> &[f64] {
        &self.g_d
    }

    fn g_a(&self) -> &[f64] {
        &self.g_a
    }
}

/// Exactly known terms: an explicit mixed block with both gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTerms {
    pub h: Bilinear,
    pub g_d: Vec<f64>,
    pub g_a: Vec<f64>,
}

impl DenseTerms {
    pub fn new(h: Bilinear, g_d: Vec<f64>, g_a: Vec<f64>) -> Result<Self> {
        if g_d.len() != h.rows || g_a.len() != h.cols {
            return Err(Error::ShapeMismatch {
                expected: h.rows + h.cols,
                got: g_d.len() + g_a.len(),
            });
        }
        Ok(Self { h, g_d, g_a })
    }

    /// Terms of `U(x, y) = xᵀ B y` at `(x, y)`.
    pub fn bilinear_at(game: Bilinear, x: &[f64], y: &[f64]) -> Self {
        let g_d = game.grad_x(x, y);
        let g_a = game.grad_y(x, y).into_iter().map(|v| -v).collect();
        Self { h: game, g_d, g_a }
    }
}

impl MixedProducts for DenseTerms {
    fn x_len(&self) -> usize {
        self.h.rows
    }
    fn y_len(&self) -> usize {
        self.h.cols
    }
    fn mixed(&self, v: &[f64]) -> Vec<f64> {
        self.h.mixed(v)
    }
    fn mixed_transpose(&self, u: &[f64]) -> Vec<f64> {
        self.h.mixed_transpose(u)
    }
}

impl CopoTerms for DenseTerms {
    fn g_d(&self) -> &[f64] {
        &self.g_d
    }
    fn g_a(&self) -> &[f64] {
        &self.g_a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn scalar_bilinear_closed_form() {
        let terms = DenseTerms::bilinear_at(Bilinear::new(1, 1, vec![1.0]).unwrap(), &[1.0], &[1.0]);
        let step = copo_update(&terms, 0.5, &CgConfig::default()).unwrap();
        let dx = 0.5 * (1.0 - 0.5 * 1.0) / (1.0 + 0.25);
        let dy = -0.5 * (1.0 + 0.5 * 1.0) / (1.0 + 0.25);
        assert!((step.delta_d[0] - dx).abs() <= 1e-12);
        assert!((step.delta_a[0] - dy).abs() <= 1e-12);
        assert!((step.delta_d[0] - 0.2).abs() <= 1e-12);
        assert!((step.delta_a[0] + 0.6).abs() <= 1e-12);
    }

    fn random_terms(rng: &mut seed::Rng, n: usize, dd: usize, da: usize, zero_adv: bool) -> EstimatedTerms {
        let sd = (0..n).map(|_| (0..dd).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let sa = (0..n).map(|_| (0..da).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let adv = (0..n)
            .map(|_| if zero_adv { 0.0 } else { rng.gen_range(-5.0..5.0) })
            .collect();
        EstimatedTerms::new(sd, sa, adv).unwrap()
    }

    #[test]
    fn zero_advantage_gives_zero_terms() {
        let t = random_terms(&mut seed::from_seed(1), 4, 3, 2, true);
        assert!(t.g_d().iter().chain(t.g_a()).all(|&v| v == 0.0));
        assert!(t.mixed(&[1.0, -1.0]).iter().all(|&v| v == 0.0));
        assert!(t.mixed_transpose(&[1.0, 2.0, 3.0]).iter().all(|&v| v == 0.0));
        assert!(EstimatedTerms::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn single_sample_operator_is_rank_one() {
        let sd = vec![1.0, -2.0, 0.5];
        let sa = vec![3.0, 0.25, -1.0];
        let t = EstimatedTerms::new(vec![sd.clone()], vec![sa.clone()], vec![2.0]).unwrap();
        let v = [0.5, -1.0, 2.0];
        let explicit: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| sd[i] * sa[j] * 2.0 * v[j]).sum())
            .collect();
        let got = t.mixed(&v);
        for i in 0..3 {
            assert!((got[i] - explicit[i]).abs() < 1e-12);
        }
        let explicit_t: Vec<f64> = (0..3)
            .map(|j| (0..3).map(|i| sd[i] * sa[j] * 2.0 * v[i]).sum())
            .collect();
        let got_t = t.mixed_transpose(&v);
        for j in 0..3 {
            assert!((got_t[j] - explicit_t[j]).abs() < 1e-12);
        }
        // zero-sum consistency
        for (ga, s) in t.g_a().iter().zip(&sa) {
            assert_eq!(*ga, -(s * 2.0));
        }
    }

    #[test]
    fn decoupled_game_is_a_gradient_step() {
        let t = DenseTerms::new(Bilinear::new(2, 3, vec![0.0; 6]).unwrap(), vec![1.0, -2.0], vec![0.5, 0.0, 3.0]).unwrap();
        let s = copo_update(&t, 0.1, &CgConfig::default()).unwrap();
        assert_eq!(s.delta_d, vec![0.1, -0.2]);
        assert_eq!(s.delta_a, vec![0.05, 0.0, 0.30000000000000004]);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let cfg = CgConfig {
            max_iterations: 1,
            tolerance: 1e-14,
        };
        // diag(1, 10, 100): CG needs three iterations
        let apply = |v: &[f64]| vec![v[0], 10.0 * v[1], 100.0 * v[2]];
        assert!(matches!(
            conjugate_gradient(apply, &[1.0, 1.0, 1.0], &cfg),
            Err(Error::CgNotConverged { .. })
        ));
        let ok = conjugate_gradient(apply, &[1.0, 1.0, 1.0], &CgConfig::default()).unwrap();
        match ok {
            CgOutcome::Converged { x, .. } => {
                assert!((x[0] - 1.0).abs() < 1e-9 && (x[2] - 0.01).abs() < 1e-9);
            }
            CgOutcome::Breakdown => panic!("unexpected breakdown"),
        }
        let neg = |v: &[f64]| vec![-v[0]];
        assert_eq!(conjugate_gradient(neg, &[1.0], &cfg).unwrap(), CgOutcome::Breakdown);
    }

    /// Dense oracle: build H explicitly and solve by Gaussian elimination.
    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    proptest! {
        #[test]
        fn matches_dense_solution(seed in 0u64..200, n in 1usize..12, dd in 1usize..8, da in 1usize..8) {
            let t = random_terms(&mut seed::from_seed(seed), n, dd, da, false);
            let alpha = 0.05;
            let cg = CgConfig::default();
            let step = copo_update(&t, alpha, &cg).unwrap();
            prop_assert!(!step.fallback);
            let h: Vec<Vec<f64>> = (0..dd)
                .map(|i| (0..da).map(|j| { let mut e = vec![0.0; da]; e[j] = 1.0; t.mixed(&e)[i] }).collect())
                .collect();
            let mut m = vec![vec![0.0; dd]; dd];
            for i in 0..dd {
                for j in 0..dd {
                    m[i][j] = (i == j) as u8 as f64 + alpha * alpha * (0..da).map(|k| h[i][k] * h[j][k]).sum::<f64>();
                }
            }
            let hga: Vec<f64> = (0..dd).map(|i| (0..da).map(|k| h[i][k] * t.g_a()[k]).sum()).collect();
            let b: Vec<f64> = (0..dd).map(|i| t.g_d()[i] + alpha * hga[i]).collect();
            let x = solve_dense(m, b.clone());
            let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            for i in 0..dd {
                prop_assert!((alpha * x[i] - step.delta_d[i]).abs() < 1e-6 * scale);
            }
            let ht_gd = t.mixed_transpose(t.g_d());
            let b_a: Vec<f64> = t.g_a().iter().zip(&ht_gd).map(|(g, h)| g - alpha * h).collect();
            let scale_a = b_a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            prop_assert!(step.residual <= cg.tolerance * scale.max(scale_a));
        }
    }
}
