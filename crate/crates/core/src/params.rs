//! Learnable parameter containers shared by the head and the toy backbone:
//! 1x1 channel projections and batch norm.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// A 1x1 convolution over the channel axis: `y = x W + b` applied at every
/// `(t, h, w)` position independently. Weight is `(c_in, c_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ProjectionParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<ProjectionParams> {
        if weight.rank() != 2 || bias.rank() != 1 || weight.dims()[1] != bias.dims()[0] {
            return Err(Error::shape(format!(
                "projection wants weight (c_in, c_out) and bias (c_out), got {:?} and {:?}",
                weight.dims(),
                bias.dims()
            )));
        }
        Ok(ProjectionParams { weight, bias })
    }

    /// Uniform He-style init: scale ~ sqrt(2 / c_in), zero bias.
    pub fn init<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> ProjectionParams {
        let bound = (2.0 / c_in as f64).sqrt();
        ProjectionParams {
            weight: Tensor::rand_uniform(&[c_in, c_out], -bound, bound, rng),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn c_out(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Project the trailing channel axis of `x` (any rank >= 1) through `p`.
pub fn channel_project(x: &Tensor, p: &ProjectionParams) -> Result<Tensor> {
    let dims = x.dims();
    if dims.is_empty() || *dims.last().unwrap() != p.c_in() {
        return Err(Error::shape(format!(
            "channel_project: input {:?} does not end in c_in={}",
            dims,
            p.c_in()
        )));
    }
    let rows = x.len() / p.c_in();
    let flat = x.reshape(&[rows, p.c_in()])?;
    let projected = tensor::matmul(&flat, &p.weight)?;
    let with_bias = tensor::add(&projected, &p.bias.reshape(&[1, p.c_out()])?)?;
    let mut out_dims = dims.to_vec();
    *out_dims.last_mut().unwrap() = p.c_out();
    with_bias.reshape(&out_dims)
}

/// Batch norm over a batch of vectors `(B, c)`, one statistic per channel.
///
/// Train mode normalizes with biased batch variance and folds the batch
/// statistics into the running estimates (unbiased variance, standard
/// momentum convention: `running = (1 - m) * running + m * batch`). Infer
/// mode uses the running estimates unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormParams {
    pub fn new(c: usize, momentum: f64, epsilon: f64) -> BatchNormParams {
        BatchNormParams {
            gamma: Tensor::full(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::full(&[c], 1.0),
            momentum,
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.dims()[0]
    }

    /// Learnable parameters only (gamma, beta); running stats are buffers.
    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.dims()[1] != self.channels() {
            return Err(Error::shape(format!(
                "batch_norm wants (B, {}), got {:?}",
                self.channels(),
                x.dims()
            )));
        }
        Ok(())
    }

    /// Per-channel batch mean and biased variance of `(B, c)`.
    pub fn batch_stats(x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mean = tensor::mean_axes(x, &[0], false)?;
        let centered = tensor::sub(x, &mean.reshape(&[1, mean.len()])?)?;
        let var = tensor::mean_axes(&tensor::mul(&centered, &centered)?, &[0], false)?;
        Ok((mean, var))
    }

    /// Normalize with explicit statistics: `gamma * (x - mean) / sqrt(var + eps) + beta`.
    pub fn normalize_with(&self, x: &Tensor, mean: &Tensor, var: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let c = self.channels();
        let inv_std = var.map(|v| 1.0 / (v + self.epsilon).sqrt());
        let centered = tensor::sub(x, &mean.reshape(&[1, c])?)?;
        let scaled = tensor::mul(&centered, &tensor::mul(&inv_std, &self.gamma)?.reshape(&[1, c])?)?;
        tensor::add(&scaled, &self.beta.reshape(&[1, c])?)
    }

    /// Train-mode forward; updates the running statistics in place.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let b = x.dims()[0];
        if b < 2 {
            return Err(Error::invalid(format!(
                "batch_norm train mode needs a batch of at least 2, got {b}"
            )));
        }
        let (mean, var) = Self::batch_stats(x)?;
        let out = self.normalize_with(x, &mean, &var)?;
        self.fold_running_stats(&mean, &var, b);
        Ok(out)
    }

    /// Fold one batch's statistics into the running estimates.
    pub fn fold_running_stats(&mut self, mean: &Tensor, biased_var: &Tensor, batch: usize) {
        let m = self.momentum;
        let unbias = batch as f64 / (batch as f64 - 1.0);
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(mean.data()) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(biased_var.data()) {
            *r = (1.0 - m) * *r + m * b * unbias;
        }
    }

    /// Infer-mode forward using the running statistics.
    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        self.normalize_with(x, &self.running_mean, &self.running_var)
    }
}
