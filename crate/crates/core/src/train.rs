//! Single-image SGD training and a detector wrapper around trained weights.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anchors::{assign_labels, generate_anchor_grid, sample_minibatch, AnchorConfig, AssignmentConfig};
use crate::dataio::Sample;
use crate::error::{Error, Result};
use crate::evaluation::Detector;
use crate::loss::multitask_loss;
use crate::net::{backward, forward, sgd_step, NetConfig, NetParams, NET_STRIDE};
use crate::postprocess::{detect, Detection, PostprocessConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs run at the base rate before decay kicks in.
    pub decay_after_epochs: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Drives the per-epoch shuffle and the per-step anchor sampling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.001, lr_decay: 0.1, decay_after_epochs: 8, epochs: 15, weight_decay: 0.0005, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.lr) || !positive(self.lr_decay) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr and lr_decay must be positive, weight_decay non-negative".into()));
        }
        if self.epochs == 0 || self.decay_after_epochs > self.epochs {
            return Err(Error::Config(format!(
                "need 1 <= epochs and decay_after_epochs <= epochs (got {} and {})",
                self.epochs, self.decay_after_epochs
            )));
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch; decayed from index
    /// `decay_after_epochs` on.
    pub fn lr_at_epoch(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.epochs {
            return Err(Error::EpochOutOfRange { epoch, epochs: self.epochs });
        }
        Ok(if epoch >= self.decay_after_epochs { self.lr * self.lr_decay } else { self.lr })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub cls_term: f64,
    pub reg_term: f64,
    pub lr: f64,
}

/// Train in place. `on_epoch(epoch, params)` runs after each epoch (for
/// checkpointing); returning an error aborts training.
pub fn train(
    params: &mut NetParams<f32>,
    anchor_sizes: &[f64],
    data: &[Sample],
    cfg: &TrainConfig,
    assign: &AssignmentConfig,
    mut on_epoch: impl FnMut(usize, &NetParams<f32>) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    assign.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if anchor_sizes.len() != params.n_anchors() {
        return Err(Error::Shape(format!(
            "{} anchor sizes for a network with {} anchors per cell",
            anchor_sizes.len(),
            params.n_anchors()
        )));
    }
    let labeled = data
        .iter()
        .map(|s| {
            let grid = generate_anchor_grid(&AnchorConfig::new(
                NET_STRIDE,
                anchor_sizes.to_vec(),
                s.image.width,
                s.image.height,
            ))?;
            Ok(assign_labels(&grid, &s.gts, assign))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs * data.len());
    let mut iteration = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch)?;
        order.shuffle(&mut rng);
        for &i in &order {
            let step_seed = rng.next_u64();
            let batch = match sample_minibatch(&labeled[i], assign, step_seed) {
                Ok(b) => b,
                Err(Error::EmptySample) => {
                    log::debug!("{}: no trainable anchors, skipped", data[i].id);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let out = forward(params, &data[i].image)?;
            let loss = multitask_loss(&out.cls, &out.reg, &batch)?;
            let (grads, _) = backward(params, &out.cache, &loss.d_reg, &loss.d_cls, false)?;
            sgd_step(params, &grads, lr, cfg.weight_decay)?;
            iteration += 1;
            let b = loss.breakdown;
            log.push(LossRecord { iteration, total: b.total, cls_term: b.cls_term, reg_term: b.reg_term, lr });
        }
        let recent = &log[log.len().saturating_sub(data.len())..];
        let mean = recent.iter().map(|r| r.total).sum::<f64>() / recent.len().max(1) as f64;
        log::info!("epoch {}/{}: lr {lr}, mean loss {mean:.4}", epoch + 1, cfg.epochs);
        on_epoch(epoch, params)?;
    }
    Ok(log)
}

/// Trained weights plus the anchor sizes they were trained with.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: NetConfig,
    pub params: NetParams<f32>,
    pub anchor_sizes: Vec<f64>,
}

impl Detector for Model {
    fn detect(&self, sample: &Sample, cfg: &PostprocessConfig) -> Result<Vec<Detection>> {
        let grid = generate_anchor_grid(&AnchorConfig::new(
            NET_STRIDE,
            self.anchor_sizes.clone(),
            sample.image.width,
            sample.image.height,
        ))?;
        detect(&self.params, &sample.image, &grid, cfg)
    }
}
