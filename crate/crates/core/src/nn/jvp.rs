//! Mixed second-order products for two-player objectives.
//!
//! For an objective `f(x, y)` the mixed block `D_xy f` has shape
//! `len(x) x len(y)`. Solvers only ever need it applied to vectors, so
//! implementors expose the two matrix-free products instead of the matrix.

use crate::error::{Error, Result};

pub trait MixedProducts {
    fn x_len(&self) -> usize;
    fn y_len(&self) -> usize;
    /// `D_xy f · v` for `v` of length `y_len`.
    fn mixed(&self, v: &[f64]) -> Vec<f64>;
    /// `(D_xy f)ᵀ · u` for `u` of length `x_len`.
    fn mixed_transpose(&self, u: &[f64]) -> Vec<f64>;
}

pub fn jacobian_vector_products<M: MixedProducts + ?Sized>(m: &M, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != m.y_len() {
        return Err(Error::ShapeMismatch {
            expected: m.y_len(),
            got: v.len(),
        });
    }
    Ok(m.mixed(v))
}

pub fn jacobian_vector_products_transpose<M: MixedProducts + ?Sized>(
    m: &M,
    u: &[f64],
) -> Result<Vec<f64>> {
    if u.len() != m.x_len() {
        return Err(Error::ShapeMismatch {
            expected: m.x_len(),
            got: u.len(),
        });
    }
    Ok(m.mixed_transpose(u))
}

/// Row-major dense matrix; `y = A x`.
fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| a[r * cols..(r + 1) * cols].iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

fn matvec_t(a: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; cols];
    for r in 0..rows {
        for (c, yc) in y.iter_mut().enumerate() {
            *yc += a[r * cols + c] * u[r];
        }
    }
    y
}

/// `f(x, y) = xᵀ B y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bilinear {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub b: Vec<f64>,
}

impl Bilinear {
    pub fn new(rows: usize, cols: usize, b: Vec<f64>) -> Result<Self> {
        if b.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: rows * cols,
                got: b.len(),
            });
        }
        Ok(Self { rows, cols, b })
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(matvec(&self.b, self.rows, self.cols, y)).map(|(a, b)| a * b).sum()
    }

    pub fn grad_x(&self, _x: &[f64], y: &[f64]) -> Vec<f64> {
        matvec(&self.b, self.rows, self.cols, y)
    }

    pub fn grad_y(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
        matvec_t(&self.b, self.rows, self.cols, x)
    }
}

impl MixedProducts for Bilinear {
    fn x_len(&self) -> usize {
        self.rows
    }
    fn y_len(&self) -> usize {
        self.cols
    }
    fn mixed(&self, v: &[f64]) -> Vec<f64> {
        matvec(&self.b, self.rows, self.cols, v)
    }
    fn mixed_transpose(&self, u: &[f64]) -> Vec<f64> {
        matvec_t(&self.b, self.rows, self.cols, u)
    }
}

/// `f(x, y) = ½xᵀPx + xᵀBy + ½yᵀQy + aᵀx + cᵀy`, whose mixed block is `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub cross: Bilinear,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

impl Quadratic {
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let (n, m) = (self.cross.rows, self.cross.cols);
        let px = matvec(&self.p, n, n, x);
        let qy = matvec(&self.q, m, m, y);
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        0.5 * dot(x, &px) + self.cross.value(x, y) + 0.5 * dot(y, &qy) + dot(&self.a, x) + dot(&self.c, y)
    }

    /// Gradient in `x` (assumes symmetric `P`).
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.cross.rows;
        let px = matvec(&self.p, n, n, x);
        let by = self.cross.grad_x(x, y);
        (0..n).map(|i| px[i] + by[i] + self.a[i]).collect()
    }
}

impl MixedProducts for Quadratic {
    fn x_len(&self) -> usize {
        self.cross.rows
    }
    fn y_len(&self) -> usize {
        self.cross.cols
    }
    fn mixed(&self, v: &[f64]) -> Vec<f64> {
        self.cross.mixed(v)
    }
    fn mixed_transpose(&self, u: &[f64]) -> Vec<f64> {
        self.cross.mixed_transpose(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng as _;

    fn random_vec(rng: &mut seed::Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn random_quadratic(rng: &mut seed::Rng, n: usize, m: usize) -> Quadratic {
        let sym = |rng: &mut seed::Rng, k: usize| {
            let raw = random_vec(rng, k * k);
            let mut s = vec![0.0; k * k];
            for i in 0..k {
                for j in 0..k {
                    s[i * k + j] = 0.5 * (raw[i * k + j] + raw[j * k + i]);
                }
            }
            s
        };
        Quadratic {
            p: sym(rng, n),
            q: sym(rng, m),
            cross: Bilinear::new(n, m, random_vec(rng, n * m)).unwrap(),
            a: random_vec(rng, n),
            c: random_vec(rng, m),
        }
    }

    #[test]
    fn bilinear_product_is_b_times_v() {
        let b = Bilinear::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(jacobian_vector_products(&b, &[1.0, 0.0, -1.0]).unwrap(), vec![-2.0, -2.0]);
        assert_eq!(jacobian_vector_products_transpose(&b, &[1.0, 1.0]).unwrap(), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let q = random_quadratic(&mut seed::from_seed(1), 3, 4);
        assert!(jacobian_vector_products(&q, &[0.0; 4]).unwrap().iter().all(|&v| v == 0.0));
        assert!(jacobian_vector_products_transpose(&q, &[0.0; 3]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let b = Bilinear::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(jacobian_vector_products(&b, &[1.0; 2]).is_err());
        assert!(jacobian_vector_products_transpose(&b, &[1.0; 3]).is_err());
    }

    /// Finite difference of the x-gradient along y: (∇x f(x, y+hv) − ∇x f(x, y−hv)) / 2h.
    #[test]
    fn quadratic_matches_finite_difference_of_gradient() {
        let mut rng = seed::from_seed(9);
        for _ in 0..20 {
            let (n, m) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let q = random_quadratic(&mut rng, n, m);
            let x = random_vec(&mut rng, n);
            let y = random_vec(&mut rng, m);
            let v = random_vec(&mut rng, m);
            let h = 1e-5;
            let yp: Vec<f64> = y.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let ym: Vec<f64> = y.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let gp = q.grad_x(&x, &yp);
            let gm = q.grad_x(&x, &ym);
            let exact = jacobian_vector_products(&q, &v).unwrap();
            for i in 0..n {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                let rel = (fd - exact[i]).abs() / (fd.abs() + exact[i].abs()).max(1e-8);
                assert!(rel < 1e-3, "{fd} vs {}", exact[i]);
            }
            // second-order finite difference of the value for one entry of D_xy
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..m));
            let eval = |dx: f64, dy: f64| {
                let mut xx = x.clone();
                xx[i] += dx;
                let mut yy = y.clone();
                yy[j] += dy;
                q.value(&xx, &yy)
            };
            let h = 1e-4;
            let fd = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h);
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            let exact = q.mixed(&e)[i];
            assert!((fd - exact).abs() < 1e-5 * (1.0 + exact.abs()));
        }
    }
}
