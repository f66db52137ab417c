//! Dense autoencoder producing allocation embeddings.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::loss::mse;
use crate::nn::{Activation, AdamState, Layout, Network, ParamVector};
use crate::seed::Rng;

/// Encoder `dense → tanh` down to `k`, decoder `dense` back up.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub encoder: Network,
    pub decoder: Network,
    pub params: ParamVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl Autoencoder {
    pub fn new(input: usize, k: usize, rng: &mut Rng) -> Result<Self> {
        if input == 0 || k == 0 {
            return Err(Error::InvalidDimension("autoencoder sizes must be positive".into()));
        }
        let mut layout = Layout::new();
        let encoder = Network::flat("encoder", &mut layout, input)
            .dense(k)
            .act(Activation::Tanh)
            .build();
        let decoder = Network::flat("decoder", &mut layout, k).dense(input).build();
        let mut params = ParamVector::zeros(layout);
        encoder.init_uniform(&mut params, rng);
        decoder.init_uniform(&mut params, rng);
        Ok(Self {
            encoder,
            decoder,
            params,
        })
    }

    /// Rebuilds an autoencoder around stored parameters.
    pub fn from_params(input: usize, k: usize, params: ParamVector) -> Result<Self> {
        let mut layout = Layout::new();
        let encoder = Network::flat("encoder", &mut layout, input)
            .dense(k)
            .act(Activation::Tanh)
            .build();
        let decoder = Network::flat("decoder", &mut layout, k).dense(input).build();
        if params.layout() != &layout {
            return Err(Error::Checkpoint("autoencoder layout mismatch".into()));
        }
        Ok(Self {
            encoder,
            decoder,
            params,
        })
    }

    pub fn k(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.predict(&self.params, x)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.predict(&self.params, z)
    }

    pub fn reconstruction_loss(&self, data: &[Vec<f64>]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut total = 0.0;
        for x in data {
            let y = self.decode(&self.encode(x)?)?;
            total += mse(&y, x).0;
        }
        Ok(total / data.len() as f64)
    }

    fn batch_grad(&self, batch: &[&Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for x in batch {
            let (z, ec) = self.encoder.forward(&self.params, x)?;
            let (y, dc) = self.decoder.forward(&self.params, &z)?;
            let (l, mut g) = mse(&y, x);
            loss += l * scale;
            g.iter_mut().for_each(|v| *v *= scale);
            let gz = self.decoder.backward(&self.params, &dc, &g, &mut grad)?;
            self.encoder.backward(&self.params, &ec, &gz, &mut grad)?;
        }
        Ok((loss, grad))
    }

    /// Minibatch Adam on mean squared reconstruction error.
    pub fn train(
        &mut self,
        data: &[Vec<f64>],
        epochs: usize,
        batch: usize,
        lr: f64,
        rng: &mut Rng,
    ) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::EmptySamples);
        }
        if data.iter().any(|x| x.len() != self.input_dim()) {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: data.iter().map(Vec::len).find(|&l| l != self.input_dim()).unwrap_or(0),
            });
        }
        let initial_loss = self.reconstruction_loss(data)?;
        let mut adam = AdamState::new(self.params.len(), lr);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut epoch_losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(rng);
            let mut sum = 0.0;
            let mut n = 0;
            for chunk in order.chunks(batch.max(1)) {
                let b: Vec<&Vec<f64>> = chunk.iter().map(|&i| &data[i]).collect();
                let (l, g) = self.batch_grad(&b)?;
                adam.step(&mut self.params, &g)?;
                sum += l;
                n += 1;
            }
            epoch_losses.push(sum / n as f64);
        }
        Ok(TrainReport {
            initial_loss,
            final_loss: self.reconstruction_loss(data)?,
            epoch_losses,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng as _;

    fn one_hot_data(n: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let mut v = vec![0.0; dim];
                v[rng.gen_range(0..dim)] = 1.0;
                v
            })
            .collect()
    }

    #[test]
    fn identity_configuration_reconstructs_binary_data() {
        let dim = 6;
        let mut ae = Autoencoder::new(dim, dim, &mut seed::from_seed(0)).unwrap();
        let layout = ae.params.layout().clone();
        let mut v = vec![0.0; layout.total()];
        let ew = layout.get("encoder.0.weight").unwrap().offset;
        let dw = layout.get("decoder.0.weight").unwrap().offset;
        for i in 0..dim {
            v[ew + i * dim + i] = 1.0;
            v[dw + i * dim + i] = 1.0 / 1f64.tanh();
        }
        ae.params = ParamVector::from_values(layout, v).unwrap();
        let data = one_hot_data(50, dim, &mut seed::from_seed(1));
        assert!(ae.reconstruction_loss(&data).unwrap() < 1e-20);
    }

    #[test]
    fn training_reduces_held_out_loss() {
        let mut rng = seed::from_seed(2);
        let dim = 16;
        let train = one_hot_data(800, dim, &mut rng);
        let held = one_hot_data(200, dim, &mut rng);
        let mut ae = Autoencoder::new(dim, 16, &mut rng).unwrap();
        let before = ae.reconstruction_loss(&held).unwrap();
        let report = ae.train(&train, 150, 32, 1e-2, &mut rng).unwrap();
        let after = ae.reconstruction_loss(&held).unwrap();
        assert_eq!(ae.k(), 16);
        assert_eq!(ae.encode(&held[0]).unwrap().len(), 16);
        assert!(report.final_loss < report.initial_loss);
        assert!(after * 10.0 < before, "{before} -> {after}");
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut ae = Autoencoder::new(4, 2, &mut seed::from_seed(0)).unwrap();
        assert!(ae.train(&[], 1, 1, 1e-3, &mut seed::from_seed(0)).is_err());
    }
}
