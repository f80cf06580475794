//! Optimizer and the single training step. The epoch loop, data loading and
//! checkpointing live in the CLI crate.

use alloc::vec::Vec;

use crate::autodiff::Graph;
use crate::data::{NormStats, TrainingSample};
use crate::dsp::F_BINS;
use crate::error::{Error, Result};
use crate::loss::{e2stoi_loss, LossBreakdown, LossConfig};
use crate::math;
use crate::model::{self, ModelParams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, aligned with [`model::named_tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = model::named_tensors(params)
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update over all trainable tensors; `grads` must be in
/// [`model::named_tensors`] order.
pub fn adam_update(
    params: &mut ModelParams,
    grads: &[Tensor],
    cfg: &AdamConfig,
    state: &mut AdamState,
) -> Result<()> {
    let mut tensors = model::named_tensors_mut(params);
    if tensors.len() != grads.len() || tensors.len() != state.m.len() {
        return Err(Error::shape(
            "adam_update",
            alloc::format!(
                "{} tensors, {} grads, {} moments",
                tensors.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - math::pow(cfg.beta1, t);
    let bc2 = 1.0 - math::pow(cfg.beta2, t);
    for ((_, tensor), (grad, (m, v))) in tensors
        .iter_mut()
        .zip(grads.iter().zip(state.m.iter_mut().zip(state.v.iter_mut())))
    {
        for ((p, &g), (m, v)) in tensor
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.lr * m_hat / (math::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

/// Forward/backward over every sample of the batch (each on its own graph,
/// batch-norm statistics per sample), averaging the per-sample losses and
/// gradients, then one Adam update. Returns the mean loss breakdown.
pub fn train_step(
    params: &mut ModelParams,
    batch: &[TrainingSample],
    stats: &NormStats,
    loss_cfg: &LossConfig,
    adam: &AdamConfig,
    state: &mut AdamState,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::invalid("train_step", "empty batch"));
    }
    let cfg = params.config.clone();
    let scale = 1.0 / batch.len() as f64;
    let mut grad_acc: Vec<Tensor> = model::named_tensors(params)
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape()))
        .collect();
    let mut mean = LossBreakdown {
        d_e2stoi: 0.0,
        mse: 0.0,
        lambda: loss_cfg.lambda,
        total: 0.0,
    };

    for sample in batch {
        let frames = sample.noisy.shape()[1];
        let mut g = Graph::new();
        let nodes = model::bind(&mut g, params, true);
        let x = g.constant(sample.noisy.reshaped(&[1, F_BINS, frames])?);
        let clean = g.constant(sample.clean.clone());
        let y = model::forward(
            &mut g,
            &nodes,
            &cfg,
            x,
            model::Mode::Train {
                running: Some(&mut params.running),
            },
        )?;
        let loss = e2stoi_loss(&mut g, y, clean, stats, loss_cfg)?;
        let breakdown = LossBreakdown::from_nodes(&g, &loss, loss_cfg.lambda);
        if !breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                sample: sample.source.clone(),
            });
        }
        mean.d_e2stoi += breakdown.d_e2stoi * scale;
        mean.mse += breakdown.mse * scale;
        mean.total += breakdown.total * scale;

        let mut grads = g.backward(loss.total)?;
        for (acc, id) in grad_acc.iter_mut().zip(nodes.flat_ids()) {
            if let Some(gt) = grads.take(id) {
                for (a, &b) in acc.data_mut().iter_mut().zip(gt.data()) {
                    *a += b * scale;
                }
            }
        }
    }

    adam_update(params, &grad_acc, adam, state)?;
    Ok(mean)
}
