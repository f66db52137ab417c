//! Gaussian allocation policies over embeddings, with a state-value critic.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::loss::mse;
use crate::nn::{Activation, AdamState, Layout, Network, ParamVector};
use crate::seed::Rng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Actor: tanh trunk feeding a tanh mean head and a sigmoid spread head
/// (standard deviation `std_scale · sigmoid`). Critic: tanh hidden layer
/// and a scalar head, trained with Adam on squared error.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    trunk: Network,
    mean_head: Network,
    std_head: Network,
    pub actor: ParamVector,
    critic_net: Network,
    pub critic: ParamVector,
    critic_adam: AdamState,
    pub std_scale: f64,
}

/// Mean and standard deviation of the policy at one state.
#[derive(Clone, Debug)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(
        state_dim: usize,
        hidden: usize,
        k: usize,
        std_scale: f64,
        critic_lr: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if state_dim == 0 || hidden == 0 || k == 0 {
            return Err(Error::InvalidDimension("policy sizes must be positive".into()));
        }
        let mut layout = Layout::new();
        let trunk = Network::flat("trunk", &mut layout, state_dim)
            .dense(hidden)
            .act(Activation::Tanh)
            .build();
        let mean_head = Network::flat("mean", &mut layout, hidden)
            .dense(k)
            .act(Activation::Tanh)
            .build();
        let std_head = Network::flat("std", &mut layout, hidden)
            .dense(k)
            .act(Activation::Sigmoid)
            .build();
        let mut actor = ParamVector::zeros(layout);
        trunk.init_uniform(&mut actor, rng);
        mean_head.init_uniform(&mut actor, rng);
        std_head.init_uniform(&mut actor, rng);
        let mut clayout = Layout::new();
        let critic_net = Network::flat("critic", &mut clayout, state_dim)
            .dense(hidden)
            .act(Activation::Tanh)
            .dense(1)
            .build();
        let mut critic = ParamVector::zeros(clayout);
        critic_net.init_uniform(&mut critic, rng);
        Ok(Self {
            trunk,
            mean_head,
            std_head,
            critic_adam: AdamState::new(critic.len(), critic_lr),
            actor,
            critic_net,
            critic,
            std_scale,
        })
    }

    pub fn k(&self) -> usize {
        self.mean_head.output_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.actor.len()
    }

    pub fn distribution(&self, state: &[f64]) -> Result<GaussianParams> {
        let h = self.trunk.predict(&self.actor, state)?;
        let mean = self.mean_head.predict(&self.actor, &h)?;
        let std = self
            .std_head
            .predict(&self.actor, &h)?
            .into_iter()
            .map(|s| self.std_scale * s)
            .collect();
        Ok(GaussianParams { mean, std })
    }

    pub fn log_density(&self, state: &[f64], e: &[f64]) -> Result<f64> {
        let d = self.distribution(state)?;
        if e.len() != d.mean.len() {
            return Err(Error::ShapeMismatch {
                expected: d.mean.len(),
                got: e.len(),
            });
        }
        Ok(e.iter()
            .zip(d.mean.iter().zip(&d.std))
            .map(|(x, (m, s))| {
                let z = (x - m) / s;
                -0.5 * z * z - s.ln() - HALF_LN_2PI
            })
            .sum())
    }

    /// `∇_w log π(e | s)` over the actor parameters.
    pub fn score(&self, state: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        let (h, tc) = self.trunk.forward(&self.actor, state)?;
        let (mean, mc) = self.mean_head.forward(&self.actor, &h)?;
        let (sig, sc) = self.std_head.forward(&self.actor, &h)?;
        if e.len() != mean.len() {
            return Err(Error::ShapeMismatch {
                expected: mean.len(),
                got: e.len(),
            });
        }
        let mut g_mean = Vec::with_capacity(mean.len());
        let mut g_sig = Vec::with_capacity(mean.len());
        for j in 0..mean.len() {
            let s = self.std_scale * sig[j];
            let d = e[j] - mean[j];
            g_mean.push(d / (s * s));
            g_sig.push((d * d / (s * s * s) - 1.0 / s) * self.std_scale);
        }
        let mut grad = vec![0.0; self.actor.len()];
        let gh_m = self.mean_head.backward(&self.actor, &mc, &g_mean, &mut grad)?;
        let gh_s = self.std_head.backward(&self.actor, &sc, &g_sig, &mut grad)?;
        let gh: Vec<f64> = gh_m.iter().zip(&gh_s).map(|(a, b)| a + b).collect();
        self.trunk.backward(&self.actor, &tc, &gh, &mut grad)?;
        Ok(grad)
    }

    /// Draws `e ~ N(mean(s), diag(std(s)²))` and returns it with its score.
    pub fn sample(&self, state: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.distribution(state)?;
        let e: Vec<f64> = d
            .mean
            .iter()
            .zip(&d.std)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            })
            .collect();
        let score = self.score(state, &e)?;
        Ok((e, score))
    }

    pub fn apply(&mut self, delta: &[f64]) -> Result<()> {
        self.actor.add_scaled(delta, 1.0)
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.critic_net.predict(&self.critic, state)?[0])
    }

    /// One Adam step on the mean squared error between `V(s)` and `returns`.
    pub fn fit_critic(&mut self, state: &[f64], returns: &[f64]) -> Result<f64> {
        if returns.is_empty() {
            return Err(Error::EmptySamples);
        }
        let (v, cache) = self.critic_net.forward(&self.critic, state)?;
        let preds = vec![v[0]; returns.len()];
        let (loss, g) = mse(&preds, returns);
        let gv: f64 = g.iter().sum();
        let mut grad = vec![0.0; self.critic.len()];
        self.critic_net.backward(&self.critic, &cache, &[gv], &mut grad)?;
        self.critic_adam.step(&mut self.critic, &grad)?;
        Ok(loss)
    }
}
