//! Feed-forward networks over a flat parameter vector.
//!
//! A [`Network`] owns no weights. Its layers hold offsets into a
//! [`ParamVector`], so several networks (an actor trunk and two heads, say)
//! can share one vector and one optimiser.

use rand::Rng as _;

use super::loss::sigmoid;
use super::params::{Layout, ParamVector};
use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Tanh => x.tanh(),
            Self::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - y * y,
            Self::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Dense {
        input: usize,
        output: usize,
        w: usize,
        b: usize,
    },
    /// Valid (unpadded) convolution with stride 1 over CHW tensors.
    Conv2d {
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        k: usize,
        w: usize,
        b: usize,
    },
    Act(Activation),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Flat(usize),
    Image(usize, usize, usize),
}

impl Shape {
    fn len(self) -> usize {
        match self {
            Shape::Flat(n) => n,
            Shape::Image(c, h, w) => c * h * w,
        }
    }
}

pub struct NetworkBuilder<'a> {
    name: String,
    layout: &'a mut Layout,
    start: usize,
    input: usize,
    shape: Shape,
    layers: Vec<Layer>,
}

impl<'a> NetworkBuilder<'a> {
    pub fn conv2d(mut self, out_c: usize, k: usize) -> Result<Self> {
        let Shape::Image(in_c, in_h, in_w) = self.shape else {
            return Err(Error::Config(format!("{}: conv2d needs an image input", self.name)));
        };
        if in_h < k || in_w < k {
            return Err(Error::InvalidDimension(format!(
                "{}: {in_h}x{in_w} input too small for a {k}x{k} kernel",
                self.name
            )));
        }
        let i = self.layers.len();
        let w = self
            .layout
            .push(format!("{}.{i}.weight", self.name), out_c * in_c * k * k);
        let b = self.layout.push(format!("{}.{i}.bias", self.name), out_c);
        self.layers.push(Layer::Conv2d {
            in_c,
            in_h,
            in_w,
            out_c,
            k,
            w,
            b,
        });
        self.shape = Shape::Image(out_c, in_h - k + 1, in_w - k + 1);
        Ok(self)
    }

    pub fn dense(mut self, output: usize) -> Self {
        let input = self.shape.len();
        let i = self.layers.len();
        let w = self.layout.push(format!("{}.{i}.weight", self.name), output * input);
        let b = self.layout.push(format!("{}.{i}.bias", self.name), output);
        self.layers.push(Layer::Dense { input, output, w, b });
        self.shape = Shape::Flat(output);
        self
    }

    pub fn act(mut self, a: Activation) -> Self {
        self.layers.push(Layer::Act(a));
        self
    }

    pub fn build(self) -> Network {
        Network {
            name: self.name,
            layers: self.layers,
            input_dim: self.input,
            output_dim: self.shape.len(),
            params: self.start..self.layout.total(),
        }
    }
}

/// Activations recorded by [`Network::forward`].
#[derive(Clone, Debug)]
pub struct Cache {
    version: u64,
    /// Input of every layer followed by the final output.
    values: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("cache holds at least the input")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    name: String,
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
    params: std::ops::Range<usize>,
}

impl Network {
    /// Starts a network over a flat input; its parameters are appended to `layout`.
    pub fn flat<'a>(name: &str, layout: &'a mut Layout, input: usize) -> NetworkBuilder<'a> {
        Self::builder(name, layout, Shape::Flat(input))
    }

    /// Starts a network over a `channels x height x width` input.
    pub fn image<'a>(
        name: &str,
        layout: &'a mut Layout,
        channels: usize,
        height: usize,
        width: usize,
    ) -> NetworkBuilder<'a> {
        Self::builder(name, layout, Shape::Image(channels, height, width))
    }

    fn builder<'a>(name: &str, layout: &'a mut Layout, shape: Shape) -> NetworkBuilder<'a> {
        NetworkBuilder {
            name: name.to_string(),
            start: layout.total(),
            input: shape.len(),
            shape,
            layout,
            layers: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Range of this network's parameters inside the shared vector.
    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.params.clone()
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_uniform(&self, params: &mut ParamVector, rng: &mut Rng) {
        let values = params.values_mut();
        for layer in &self.layers {
            let (fan_in, w, wlen, b, blen) = match *layer {
                Layer::Dense { input, output, w, b } => (input, w, input * output, b, output),
                Layer::Conv2d { in_c, out_c, k, w, b, .. } => {
                    (in_c * k * k, w, out_c * in_c * k * k, b, out_c)
                }
                Layer::Act(_) => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[w..w + wlen] {
                *v = rng.gen_range(-bound..=bound);
            }
            for v in &mut values[b..b + blen] {
                *v = rng.gen_range(-bound..=bound);
            }
        }
    }

    fn check(&self, params: &ParamVector, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        if params.len() < self.params.end {
            return Err(Error::ShapeMismatch {
                expected: self.params.end,
                got: params.len(),
            });
        }
        Ok(())
    }

    /// Output only; no cache is kept.
    pub fn predict(&self, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
        self.check(params, input)?;
        let p = params.values();
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer_forward(layer, p, &x);
        }
        Ok(x)
    }

    pub fn forward(&self, params: &ParamVector, input: &[f64]) -> Result<(Vec<f64>, Cache)> {
        self.check(params, input)?;
        let p = params.values();
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let y = layer_forward(layer, p, values.last().unwrap());
            values.push(y);
        }
        let out = values.last().unwrap().clone();
        Ok((
            out,
            Cache {
                version: params.version(),
                values,
            },
        ))
    }

    /// Reverse-mode pass. Parameter gradients are accumulated into `grad`
    /// (indexed like the full parameter vector); the input gradient is returned.
    pub fn backward(
        &self,
        params: &ParamVector,
        cache: &Cache,
        output_grad: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        if cache.version != params.version() || cache.values.len() != self.layers.len() + 1 {
            return Err(Error::StaleCache);
        }
        if output_grad.len() != self.output_dim {
            return Err(Error::ShapeMismatch {
                expected: self.output_dim,
                got: output_grad.len(),
            });
        }
        if grad.len() != params.len() {
            return Err(Error::ShapeMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        let p = params.values();
        let mut g = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer_backward(layer, p, &cache.values[i], &cache.values[i + 1], &g, grad);
        }
        Ok(g)
    }
}

fn layer_forward(layer: &Layer, p: &[f64], x: &[f64]) -> Vec<f64> {
    match *layer {
        Layer::Dense { input, output, w, b } => {
            let weights = &p[w..w + input * output];
            (0..output)
                .map(|o| {
                    let row = &weights[o * input..(o + 1) * input];
                    p[b + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        }
        Layer::Conv2d {
            in_c,
            in_h,
            in_w,
            out_c,
            k,
            w,
            b,
        } => {
            let (oh, ow) = (in_h - k + 1, in_w - k + 1);
            let mut y = vec![0.0; out_c * oh * ow];
            for o in 0..out_c {
                let out = &mut y[o * oh * ow..(o + 1) * oh * ow];
                out.iter_mut().for_each(|v| *v = p[b + o]);
                for c in 0..in_c {
                    let kern = &p[w + (o * in_c + c) * k * k..w + (o * in_c + c + 1) * k * k];
                    let plane = &x[c * in_h * in_w..(c + 1) * in_h * in_w];
                    for ki in 0..k {
                        for kj in 0..k {
                            let kv = kern[ki * k + kj];
                            for r in 0..oh {
                                let src = &plane[(r + ki) * in_w + kj..(r + ki) * in_w + kj + ow];
                                let dst = &mut out[r * ow..(r + 1) * ow];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += kv * s;
                                }
                            }
                        }
                    }
                }
            }
            y
        }
        Layer::Act(a) => x.iter().map(|&v| a.apply(v)).collect(),
    }
}

fn layer_backward(
    layer: &Layer,
    p: &[f64],
    x: &[f64],
    y: &[f64],
    gy: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    match *layer {
        Layer::Dense { input, output, w, b } => {
            let mut gx = vec![0.0; input];
            for o in 0..output {
                let go = gy[o];
                if go == 0.0 {
                    continue;
                }
                grad[b + o] += go;
                let gw = &mut grad[w + o * input..w + (o + 1) * input];
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g += go * xi;
                }
                let row = &p[w + o * input..w + (o + 1) * input];
                for (g, wi) in gx.iter_mut().zip(row) {
                    *g += go * wi;
                }
            }
            gx
        }
        Layer::Conv2d {
            in_c,
            in_h,
            in_w,
            out_c,
            k,
            w,
            b,
        } => {
            let (oh, ow) = (in_h - k + 1, in_w - k + 1);
            let mut gx = vec![0.0; x.len()];
            for o in 0..out_c {
                let go = &gy[o * oh * ow..(o + 1) * oh * ow];
                grad[b + o] += go.iter().sum::<f64>();
                for c in 0..in_c {
                    let kidx = w + (o * in_c + c) * k * k;
                    let plane = &x[c * in_h * in_w..(c + 1) * in_h * in_w];
                    for ki in 0..k {
                        for kj in 0..k {
                            let kv = p[kidx + ki * k + kj];
                            let mut acc = 0.0;
                            for r in 0..oh {
                                let base = (r + ki) * in_w + kj;
                                let src = &plane[base..base + ow];
                                let g = &go[r * ow..(r + 1) * ow];
                                acc += src.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                                let gplane = &mut gx[c * in_h * in_w + base..c * in_h * in_w + base + ow];
                                for (d, gv) in gplane.iter_mut().zip(g) {
                                    *d += kv * gv;
                                }
                            }
                            grad[kidx + ki * k + kj] += acc;
                        }
                    }
                }
            }
            gx
        }
        Layer::Act(a) => x
            .iter()
            .zip(y)
            .zip(gy)
            .map(|((&xi, &yi), &g)| g * a.derivative(xi, yi))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    /// Loss `sum(out * weights)` so every output coordinate matters.
    fn probe_loss(net: &Network, params: &ParamVector, x: &[f64], probe: &[f64]) -> f64 {
        net.predict(params, x)
            .unwrap()
            .iter()
            .zip(probe)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    /// Analytic vs. central-difference gradients for parameters and inputs.
    pub(crate) fn gradient_check(net: &Network, layout: Layout, seed: u64) -> f64 {
        let mut rng = seed::from_seed(seed);
        let mut params = ParamVector::zeros(layout);
        net.init_uniform(&mut params, &mut rng);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = net.forward(&params, &x).unwrap();
        let mut grad = vec![0.0; params.len()];
        let gx = net.backward(&params, &cache, &probe, &mut grad).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            let fd = (probe_loss(net, &plus, &x, &probe) - probe_loss(net, &minus, &x, &probe)) / (2.0 * h);
            if fd.abs() + grad[i].abs() > 1e-7 {
                worst = worst.max(rel_err(fd, grad[i]));
            }
        }
        for i in 0..x.len() {
            let mut a = x.clone();
            a[i] += h;
            let mut b = x.clone();
            b[i] -= h;
            let fd = (probe_loss(net, &params, &a, &probe) - probe_loss(net, &params, &b, &probe)) / (2.0 * h);
            if fd.abs() + gx[i].abs() > 1e-7 {
                worst = worst.max(rel_err(fd, gx[i]));
            }
        }
        worst
    }

    #[test]
    fn every_layer_type_passes_gradient_check() {
        for s in 0..10 {
            let mut l = Layout::new();
            let dense = Network::flat("d", &mut l, 4).dense(3).act(Activation::Tanh).dense(2).build();
            assert!(gradient_check(&dense, l, s) < 1e-4);
            let mut l = Layout::new();
            let sig = Network::flat("s", &mut l, 3).dense(3).act(Activation::Sigmoid).build();
            assert!(gradient_check(&sig, l, s) < 1e-4);
            let mut l = Layout::new();
            let conv = Network::image("c", &mut l, 2, 5, 4)
                .conv2d(3, 3)
                .unwrap()
                .act(Activation::Relu)
                .dense(2)
                .build();
            assert!(gradient_check(&conv, l, s) < 1e-4);
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut l = Layout::new();
        let net = Network::flat("z", &mut l, 3).dense(4).dense(2).build();
        let p = ParamVector::zeros(l);
        assert_eq!(net.predict(&p, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_one_by_one_conv() {
        let mut l = Layout::new();
        let net = Network::image("i", &mut l, 2, 3, 3).conv2d(2, 1).unwrap().build();
        let mut p = ParamVector::zeros(l);
        // weight layout [out][in][1][1]
        p.values_mut()[0] = 1.0;
        p.values_mut()[3] = 1.0;
        let x: Vec<f64> = (0..18).map(|i| i as f64 * 0.1).collect();
        assert_eq!(net.predict(&p, &x).unwrap(), x);
    }

    #[test]
    fn two_layer_dense_by_hand() {
        // W1 = [[1,2],[3,4]], b1 = [0.5,-0.5]; W2 = [[1,-1]], b2 = [0.25]
        // x = [1, -1]: h = [1-2+0.5, 3-4-0.5] = [-0.5, -1.5]; y = -0.5+1.5+0.25 = 1.25
        let mut l = Layout::new();
        let net = Network::flat("h", &mut l, 2).dense(2).dense(1).build();
        let p = ParamVector::from_values(l, vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5, 1.0, -1.0, 0.25]).unwrap();
        assert_eq!(net.predict(&p, &[1.0, -1.0]).unwrap(), vec![1.25]);
    }

    #[test]
    fn forward_is_pure_and_cache_detects_staleness() {
        let mut l = Layout::new();
        let net = Network::flat("p", &mut l, 2).dense(2).act(Activation::Relu).dense(1).build();
        let mut p = ParamVector::zeros(l);
        net.init_uniform(&mut p, &mut seed::from_seed(3));
        let (a, cache) = net.forward(&p, &[0.3, 0.7]).unwrap();
        let (b, _) = net.forward(&p, &[0.3, 0.7]).unwrap();
        assert_eq!(a, b);
        let mut g = vec![0.0; p.len()];
        net.backward(&p, &cache, &[1.0], &mut g).unwrap();
        p.values_mut()[0] += 0.1;
        assert!(matches!(net.backward(&p, &cache, &[1.0], &mut g), Err(Error::StaleCache)));
        assert!(matches!(net.predict(&p, &[1.0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn gradient_linearity() {
        let mut l = Layout::new();
        let net = Network::flat("g", &mut l, 3).dense(4).act(Activation::Tanh).dense(2).build();
        let mut p = ParamVector::zeros(l);
        net.init_uniform(&mut p, &mut seed::from_seed(5));
        let (_, c) = net.forward(&p, &[0.1, 0.2, 0.3]).unwrap();
        let mut g1 = vec![0.0; p.len()];
        let mut g2 = vec![0.0; p.len()];
        let mut g12 = vec![0.0; p.len()];
        net.backward(&p, &c, &[1.0, 0.0], &mut g1).unwrap();
        net.backward(&p, &c, &[0.0, 2.0], &mut g2).unwrap();
        net.backward(&p, &c, &[1.0, 2.0], &mut g12).unwrap();
        for i in 0..p.len() {
            assert!((g1[i] + g2[i] - g12[i]).abs() < 1e-12);
        }
        let mut zero = vec![0.0; p.len()];
        net.backward(&p, &c, &[0.0, 0.0], &mut zero).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_too_small_is_rejected() {
        let mut l = Layout::new();
        assert!(Network::image("c", &mut l, 1, 2, 2).conv2d(1, 3).is_err());
    }
}
