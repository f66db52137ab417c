//! Matching pennies with softmax policies and exact gradients.
//!
//! The defender wins `+1` on a match and the attacker wins on a mismatch, so
//! `U(x, y) = p(x)ᵀ M q(y)` with `M = [[1, −1], [−1, 1]]` and the unique
//! equilibrium is `p = q = (½, ½)`.

use super::copo::{copo_update, CgConfig, DenseTerms};
use crate::error::Result;
use crate::nn::Bilinear;

pub const PAYOFF: [[f64; 2]; 2] = [[1.0, -1.0], [-1.0, 1.0]];

pub fn softmax(logits: &[f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// `diag(p) − p pᵀ`, row-major.
fn softmax_jacobian(p: &[f64; 2]) -> [[f64; 2]; 2] {
    [[p[0] - p[0] * p[0], -p[0] * p[1]], [-p[1] * p[0], p[1] - p[1] * p[1]]]
}

fn mat_vec(m: &[[f64; 2]; 2], v: &[f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn transpose(m: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenniesState {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl PenniesState {
    pub fn value(&self) -> f64 {
        let p = softmax(&self.x);
        let q = softmax(&self.y);
        (0..2).map(|i| (0..2).map(|j| p[i] * PAYOFF[i][j] * q[j]).sum::<f64>()).sum()
    }

    /// Euclidean distance of `(p₀, q₀)` from `(½, ½)`.
    pub fn distance_to_equilibrium(&self) -> f64 {
        let p = softmax(&self.x);
        let q = softmax(&self.y);
        ((p[0] - 0.5).powi(2) + (q[0] - 0.5).powi(2)).sqrt()
    }

    /// Exact `∇_x U`, `∇_y (−U)` and `D_xy U = J_p M J_q`.
    pub fn terms(&self) -> Result<DenseTerms> {
        let p = softmax(&self.x);
        let q = softmax(&self.y);
        let jp = softmax_jacobian(&p);
        let jq = softmax_jacobian(&q);
        let mq = mat_vec(&PAYOFF, &q);
        let mtp = mat_vec(&transpose(&PAYOFF), &p);
        let g_d = mat_vec(&transpose(&jp), &mq);
        let g_a = mat_vec(&transpose(&jq), &mtp).map(|v| -v);
        let h = mat_mul(&mat_mul(&transpose(&jp), &PAYOFF), &jq);
        DenseTerms::new(
            Bilinear::new(2, 2, vec![h[0][0], h[0][1], h[1][0], h[1][1]])?,
            g_d.to_vec(),
            g_a.to_vec(),
        )
    }

    pub fn copo_step(&mut self, alpha: f64, cg: &CgConfig) -> Result<()> {
        let step = copo_update(&self.terms()?, alpha, cg)?;
        for i in 0..2 {
            self.x[i] += step.delta_d[i];
            self.y[i] += step.delta_a[i];
        }
        Ok(())
    }

    /// Simultaneous gradient ascent for both players on their own payoff.
    pub fn gradient_step(&mut self, lr: f64) -> Result<()> {
        use super::copo::CopoTerms;
        let t = self.terms()?;
        for i in 0..2 {
            self.x[i] += lr * t.g_d()[i];
            self.y[i] += lr * t.g_a()[i];
        }
        Ok(())
    }
}

/// Distances to equilibrium after each of `iterations` coPO steps.
pub fn run_copo(start: PenniesState, alpha: f64, iterations: usize, cg: &CgConfig) -> Result<Vec<f64>> {
    let mut s = start;
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        s.copo_step(alpha, cg)?;
        out.push(s.distance_to_equilibrium());
    }
    Ok(out)
}

/// Distances to equilibrium after each of `iterations` gradient steps.
pub fn run_gradient(start: PenniesState, lr: f64, iterations: usize) -> Result<Vec<f64>> {
    let mut s = start;
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        s.gradient_step(lr)?;
        out.push(s.distance_to_equilibrium());
    }
    Ok(out)
}

/// Smooth fictitious play with gradient responses: each player ascends its
/// payoff against the average of the opponent's past mixed strategies plus
/// `temperature` times its own entropy. Returns the distance of the
/// running-average strategies after each step.
pub fn run_fictitious_play(start: PenniesState, lr: f64, temperature: f64, iterations: usize) -> Vec<f64> {
    let mut s = start;
    let mut sum_p = [0.0; 2];
    let mut sum_q = [0.0; 2];
    let mut out = Vec::with_capacity(iterations);
    for n in 1..=iterations {
        let p = softmax(&s.x);
        let q = softmax(&s.y);
        for i in 0..2 {
            sum_p[i] += p[i];
            sum_q[i] += q[i];
        }
        let avg_p = sum_p.map(|v| v / n as f64);
        let avg_q = sum_q.map(|v| v / n as f64);
        let mq = mat_vec(&PAYOFF, &avg_q);
        let mtp = mat_vec(&transpose(&PAYOFF), &avg_p);
        let u_x = [mq[0] - temperature * p[0].ln(), mq[1] - temperature * p[1].ln()];
        let u_y = [-mtp[0] - temperature * q[0].ln(), -mtp[1] - temperature * q[1].ln()];
        let g_x = mat_vec(&transpose(&softmax_jacobian(&p)), &u_x);
        let g_y = mat_vec(&transpose(&softmax_jacobian(&q)), &u_y);
        for i in 0..2 {
            s.x[i] += lr * g_x[i];
            s.y[i] += lr * g_y[i];
        }
        out.push(((avg_p[0] - 0.5).powi(2) + (avg_q[0] - 0.5).powi(2)).sqrt());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::copo::CopoTerms;
    use crate::nn::MixedProducts;

    fn start() -> PenniesState {
        PenniesState {
            x: [1.0, 0.0],
            y: [0.0, 0.5],
        }
    }

    #[test]
    fn exact_terms_match_finite_differences() {
        let s = start();
        let t = s.terms().unwrap();
        let h = 1e-5;
        for i in 0..2 {
            let mut plus = s;
            plus.x[i] += h;
            let mut minus = s;
            minus.x[i] -= h;
            let fd = (plus.value() - minus.value()) / (2.0 * h);
            assert!((fd - t.g_d()[i]).abs() < 1e-9);
            let mut plus = s;
            plus.y[i] += h;
            let mut minus = s;
            minus.y[i] -= h;
            let fd = -(plus.value() - minus.value()) / (2.0 * h);
            assert!((fd - t.g_a()[i]).abs() < 1e-9);
        }
        // mixed block by differencing the defender gradient in y
        for j in 0..2 {
            let mut plus = s;
            plus.y[j] += h;
            let mut minus = s;
            minus.y[j] -= h;
            let gp = plus.terms().unwrap();
            let gm = minus.terms().unwrap();
            let mut e = vec![0.0; 2];
            e[j] = 1.0;
            let col = t.mixed(&e);
            for i in 0..2 {
                let fd = (gp.g_d()[i] - gm.g_d()[i]) / (2.0 * h);
                assert!((fd - col[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn copo_converges_while_gradient_play_cycles() {
        let cg = CgConfig::default();
        let copo = run_copo(start(), 2.0, 500, &cg).unwrap();
        assert!(*copo.last().unwrap() < 1e-2, "{}", copo.last().unwrap());
        let gda = run_gradient(start(), 2.0, 500).unwrap();
        assert!(gda.windows(2).any(|w| w[1] > w[0]));
        assert!(*gda.last().unwrap() > 1e-2);
    }

    #[test]
    fn fictitious_play_average_approaches_equilibrium() {
        let d = run_fictitious_play(start(), 2.0, 0.2, 4000);
        assert!(*d.last().unwrap() < 0.05, "{}", d.last().unwrap());
        // without the entropy term the responses saturate and the average stalls
        let plain = run_fictitious_play(start(), 2.0, 0.0, 4000);
        assert!(*plain.last().unwrap() > 0.05);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let mut s = PenniesState { x: [0.0; 2], y: [0.0; 2] };
        s.copo_step(1.0, &CgConfig::default()).unwrap();
        assert_eq!(s.distance_to_equilibrium(), 0.0);
    }
}
