//! Desk-scale transformer trainer.
//!
//! 64-bit throughout. Each call to [`Trainer::train_step`] performs one Adam
//! update under the noam schedule and leaves the new weights available as a
//! [`WeightSnapshot`].

pub mod adam;
pub mod checkpoint;
pub mod model;
pub mod noam;
pub mod ops;
pub mod params;

use serde::{Deserialize, Serialize};

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use model::{ForwardOptions, ForwardStats, Model, ModelDims, PackedBatch};
pub use noam::noam_lr;
pub use params::{global_norm, Grads, ParamSet};

use crate::error::{Error, Result};
use crate::metrics::WeightSnapshot;
use crate::rng::{step_rng, Stream};
use crate::tasks::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Dropout 0.1, lr scale 2, no clipping.
    Default,
    /// Dropout 0.3, lr scale 10, clipping at norm 5, doubled warmup.
    Regularized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub warmup_steps: u64,
    pub lr_scale: f64,
    pub dropout: f64,
    pub grad_clip_norm: Option<f64>,
    pub batch_tokens: usize,
    pub label_smoothing: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

pub const DESK_WARMUP: u64 = 200;

impl TrainerConfig {
    pub fn profile(profile: Profile) -> Self {
        let base = TrainerConfig {
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            ffn_dim: 256,
            warmup_steps: DESK_WARMUP,
            lr_scale: 2.0,
            dropout: 0.1,
            grad_clip_norm: None,
            batch_tokens: 1024,
            label_smoothing: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
        };
        match profile {
            Profile::Default => base,
            Profile::Regularized => TrainerConfig {
                warmup_steps: 2 * DESK_WARMUP,
                lr_scale: 10.0,
                dropout: 0.3,
                grad_clip_norm: Some(5.0),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing outside [0, 1)"));
        }
        if self.warmup_steps == 0 || self.batch_tokens == 0 {
            return Err(Error::config("warmup_steps and batch_tokens must be >= 1"));
        }
        if !(self.lr_scale.is_finite() && self.lr_scale > 0.0) {
            return Err(Error::config("lr_scale must be > 0"));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("grad_clip_norm must be > 0"));
            }
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(Error::config("adam betas must be in [0, 1) and eps > 0"));
        }
        Ok(())
    }

    pub fn dims(&self, vocab_size: usize) -> ModelDims {
        ModelDims {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            ffn_dim: self.ffn_dim,
            vocab_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainerConfig,
    pub model: Model,
    pub adam: Adam,
    step: u64,
}

impl Trainer {
    pub fn new(config: TrainerConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = step_rng(config.seed, 0, Stream::Init);
        let model = Model::new(config.dims(vocab_size), &mut rng)?;
        let adam = Adam::new(config.adam, &model.params);
        Ok(Trainer {
            config,
            model,
            adam,
            step: 0,
        })
    }

    /// Completed updates.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn snapshot(&self) -> WeightSnapshot {
        self.model.params.snapshot(self.step)
    }

    /// Forward, backward and update on one batch.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepReport> {
        let next = self.step + 1;
        let packed = PackedBatch::from_batch(batch, self.model.dims().vocab_size)?;
        let opts = ForwardOptions {
            dropout: self.config.dropout,
            label_smoothing: self.config.label_smoothing,
        };
        let mut rng = step_rng(self.config.seed, next, Stream::Dropout);
        let (stats, cache) = self.model.forward_loss(&packed, opts, Some(&mut rng))?;
        if !stats.loss.is_finite() {
            return Err(Error::Divergence {
                step: next,
                reason: format!("loss is {}", stats.loss),
            });
        }
        let grads = self.model.backward(&cache);
        let update = self.apply_update(grads)?;
        Ok(StepReport {
            step: next,
            loss: stats.loss,
            lr: update.lr,
            grad_norm: update.grad_norm,
            clipped: update.clipped,
        })
    }

    /// Optional global-norm clipping followed by an Adam step at the noam
    /// learning rate for the next step.
    pub fn apply_update(&mut self, mut grads: Grads) -> Result<UpdateReport> {
        let next = self.step + 1;
        if grads.len() != self.model.params.len()
            || grads
                .iter()
                .zip(&self.model.params.params)
                .any(|(g, p)| g.dim() != p.value.dim())
        {
            return Err(Error::invalid("gradient structure does not match the model"));
        }
        let norm_before = global_norm(&grads);
        if !norm_before.is_finite() {
            return Err(Error::Divergence {
                step: next,
                reason: "non-finite gradient norm".into(),
            });
        }
        let clipped = match self.config.grad_clip_norm {
            Some(max) => clip_global_norm(&mut grads, max) > max,
            None => false,
        };
        let lr = noam_lr(next, self.config.d_model, self.config.warmup_steps, self.config.lr_scale)?;
        self.adam.step(&mut self.model.params, &grads, lr);
        if !self.model.params.is_finite() {
            return Err(Error::Divergence {
                step: next,
                reason: "non-finite parameters after update".into(),
            });
        }
        self.step = next;
        Ok(UpdateReport {
            lr,
            grad_norm: norm_before,
            clipped,
        })
    }

    /// Rebuilds a trainer from checkpointed weights and optimizer state.
    pub fn restore(config: TrainerConfig, ckpt: checkpoint::Checkpoint) -> Result<Self> {
        config.validate()?;
        let mut trainer = Trainer::new(config, ckpt.dims.vocab_size)?;
        if trainer.model.dims() != ckpt.dims {
            return Err(Error::Checkpoint(format!(
                "checkpoint dims {:?} do not match config {:?}",
                ckpt.dims,
                trainer.model.dims()
            )));
        }
        let params = &mut trainer.model.params.params;
        if params.len() != ckpt.tensors.len() {
            return Err(Error::Checkpoint("tensor count mismatch".into()));
        }
        for (p, t) in params.iter_mut().zip(ckpt.tensors) {
            if p.name != t.name || p.value.dim() != t.value.dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` does not match `{}`",
                    t.name, p.name
                )));
            }
            p.value = t.value;
        }
        if let Some(state) = ckpt.optimizer {
            trainer.adam.t = state.t;
            trainer.adam.m = state.m;
            trainer.adam.v = state.v;
        }
        trainer.step = ckpt.step;
        Ok(trainer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_match_published_settings() {
        let d = TrainerConfig::profile(Profile::Default);
        assert_eq!((d.dropout, d.lr_scale, d.grad_clip_norm), (0.1, 2.0, None));
        let r = TrainerConfig::profile(Profile::Regularized);
        assert_eq!((r.dropout, r.lr_scale, r.grad_clip_norm), (0.3, 10.0, Some(5.0)));
        assert_eq!(r.warmup_steps, 2 * d.warmup_steps);
        assert_eq!(d.label_smoothing, 0.1);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = TrainerConfig::profile(Profile::Default);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainerConfig::profile(Profile::Default);
        c.n_heads = 3;
        assert!(Trainer::new(c, 40).is_err());
    }
}
