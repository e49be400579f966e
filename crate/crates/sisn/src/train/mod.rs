//! Training loop: shuffled mini-batches of augmented crops, L1 objective,
//! Adam updates under a halving learning-rate schedule.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::data::{
    augment, random_crop_pair, sample_seed, to_tensor, AugmentSpec, Manifest, SamplePair, Split,
};
use crate::error::{Result, SisnError};
use crate::eval;
use crate::model::{sisn_forward, ModelParams, SisnConfig};
use crate::tensor::{AdamState, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub halve_every: usize,
    pub seed: u64,
    pub model: SisnConfig,
    pub lr_patch: usize,
    /// Write a checkpoint every this many epochs (and always at the end).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn defaults(model: SisnConfig) -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            base_lr: 1e-4,
            halve_every: 50,
            seed: 0,
            model,
            lr_patch: 48,
            checkpoint_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.base_lr <= 0.0 {
            return Err(SisnError::InvalidConfig("base_lr must be positive".into()));
        }
        if self.halve_every == 0 {
            return Err(SisnError::InvalidConfig("halve_every must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(SisnError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(SisnError::InvalidConfig("checkpoint_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// base_lr · 0.5^⌊epoch / halve_every⌋.
pub fn lr_at_epoch(epoch: usize, config: &TrainConfig) -> f64 {
    config.base_lr * 0.5f64.powi((epoch / config.halve_every) as i32)
}

/// One line of the append-only training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_psnr: Option<f64>,
    pub wall_time_s: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let val = match self.val_psnr {
            Some(v) => format!("{v}"),
            None => "-".into(),
        };
        format!(
            "epoch={} lr={} train_loss={} val_psnr={} wall_time_s={:.3}",
            self.epoch, self.lr, self.train_loss, val, self.wall_time_s
        )
    }
}

fn stack_batch(samples: &[SamplePair]) -> (Tensor, Tensor) {
    let n = samples.len();
    let (lw, lh) = (samples[0].lr.width, samples[0].lr.height);
    let (hw, hh) = (samples[0].hr.width, samples[0].hr.height);
    let mut lr = Tensor::zeros([n, 3, lh, lw]);
    let mut hr = Tensor::zeros([n, 3, hh, hw]);
    for (i, s) in samples.iter().enumerate() {
        let lt = to_tensor(&s.lr);
        let ht = to_tensor(&s.hr);
        lr.data[i * 3 * lh * lw..(i + 1) * 3 * lh * lw].copy_from_slice(&lt.data);
        hr.data[i * 3 * hh * hw..(i + 1) * 3 * hh * hw].copy_from_slice(&ht.data);
    }
    (lr, hr)
}

/// Fresh training from an initialized model.
pub fn train(
    manifest: &Manifest,
    config: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    config.validate()?;
    let start = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        params: ModelParams::init(&config.model, config.seed),
        adam: None,
        epoch: 0,
    };
    run(manifest, start, checkpoint_path)
}

/// Continues a loaded checkpoint up to its configured epoch count. With
/// matching seeds this is bitwise-identical to an uninterrupted run.
pub fn resume(
    manifest: &Manifest,
    checkpoint: Checkpoint,
    checkpoint_path: Option<&Path>,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    checkpoint.config.validate()?;
    run(manifest, checkpoint, checkpoint_path)
}

fn run(
    manifest: &Manifest,
    start: Checkpoint,
    checkpoint_path: Option<&Path>,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let config = start.config.clone();
    let train_entries = manifest.split(Split::Train);
    if train_entries.is_empty() && config.epochs > start.epoch {
        return Err(SisnError::InvalidInput("manifest has no training samples".into()));
    }
    // Desk-scale datasets fit in memory; load each pair once.
    let pairs: Vec<SamplePair> = train_entries
        .iter()
        .map(|e| manifest.load_pair(e))
        .collect::<Result<_>>()?;

    let mut params = start.params;
    let mut adam = start.adam.unwrap_or_else(|| {
        let named = params.named();
        let refs: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        AdamState::new(&refs)
    });
    let mut logs = Vec::new();

    for epoch in start.epoch..config.epochs {
        let t0 = Instant::now();
        let lr = lr_at_epoch(epoch, &config);

        // epoch-level shuffle; derivation depends only on (seed, epoch)
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut epoch_rng =
            ChaCha8Rng::seed_from_u64(sample_seed(config.seed, u64::MAX, epoch as u64));
        order.shuffle(&mut epoch_rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<SamplePair> = chunk
                .iter()
                .map(|&idx| {
                    let mut srng = ChaCha8Rng::seed_from_u64(sample_seed(
                        config.seed,
                        idx as u64,
                        epoch as u64,
                    ));
                    let patch = config
                        .lr_patch
                        .min(pairs[idx].lr.width)
                        .min(pairs[idx].lr.height);
                    let cropped = random_crop_pair(&pairs[idx], patch, srng.next_u64())?;
                    Ok(augment(&cropped, AugmentSpec::sample(&mut srng)))
                })
                .collect::<Result<_>>()?;
            let (lr_batch, hr_batch) = stack_batch(&batch);

            let mut tape = Tape::new();
            let input = tape.constant(lr_batch);
            let taped = params.record(&mut tape);
            let pred = sisn_forward(&mut tape, input, &taped, &config.model)?;
            let target = tape.constant(hr_batch);
            let loss = tape.l1_loss(pred, target)?;
            let loss_val = tape.scalar(loss);
            if !loss_val.is_finite() {
                return Err(SisnError::NanLoss { epoch, step });
            }
            let grads = tape.backward(loss)?;
            let shapes: Vec<[usize; 4]> =
                params.named().iter().map(|(_, t)| t.shape).collect();
            let grad_tensors: Vec<Tensor> = taped
                .vars()
                .iter()
                .zip(shapes)
                .map(|(v, s)| Tape::grad_of(&grads, *v, s))
                .collect();
            let mut flat = params.flat_mut();
            adam.step(&mut flat, &grad_tensors, lr)?;
            loss_sum += loss_val;
            batches += 1;
        }

        // validation PSNR on full images
        let val_entries = manifest.split(Split::Val);
        let val_psnr = if val_entries.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for e in &val_entries {
                let pair = manifest.load_pair(e)?;
                let sr = crate::model::super_resolve(&params, &config.model, &pair.lr)?;
                sum += eval::psnr(&sr, &pair.hr)?;
            }
            Some(sum / val_entries.len() as f64)
        };

        logs.push(EpochLog {
            epoch,
            lr,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            val_psnr,
            wall_time_s: t0.elapsed().as_secs_f64(),
        });

        let done = epoch + 1 == config.epochs;
        if let Some(path) = checkpoint_path {
            if (epoch + 1) % config.checkpoint_every == 0 || done {
                let ck = Checkpoint {
                    version: CHECKPOINT_VERSION,
                    config: config.clone(),
                    params: params.clone(),
                    adam: Some(adam.clone()),
                    epoch: epoch + 1,
                };
                save_checkpoint(&ck, path)?;
            }
        }
    }

    let final_epoch = config.epochs.max(start.epoch);
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        config,
        params,
        adam: Some(adam),
        epoch: final_epoch,
    };
    if let Some(path) = checkpoint_path {
        save_checkpoint(&ck, path)?;
    }
    Ok((ck, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_matches_protocol() {
        let cfg = TrainConfig::defaults(SisnConfig::toy(2));
        assert!((lr_at_epoch(0, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_at_epoch(49, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_at_epoch(50, &cfg) - 5e-5).abs() < 1e-18);
        assert!((lr_at_epoch(100, &cfg) - 2.5e-5).abs() < 1e-18);
    }

    #[test]
    fn lr_schedule_non_increasing() {
        let cfg = TrainConfig::defaults(SisnConfig::toy(2));
        let mut prev = f64::INFINITY;
        for e in 0..300 {
            let lr = lr_at_epoch(e, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::defaults(SisnConfig::toy(2));
        assert!(cfg.validate().is_ok());
        cfg.base_lr = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::defaults(SisnConfig::toy(2));
        cfg.halve_every = 0;
        assert!(cfg.validate().is_err());
    }
}
