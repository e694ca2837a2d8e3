//! Adam optimization with step learning-rate decay, the data pipeline
//! (center crop, normalization, 9:1 split), and the deterministic training
//! loop.
//!
//! Training is bit-deterministic for a fixed seed regardless of worker
//! count: per-item gradients are always reduced in dataset-index order, so
//! `threads > 1` only changes wall time, never the numbers.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imageio::{scan_dataset, ImagePair};
use crate::loss::{total_loss_backward, LossBreakdown, LossWeights};
use crate::network::{net_backward, net_forward_with_cache, save_checkpoint, Network, NetworkConfig};
use crate::rng::{mix_seed, seeded};
use crate::tensor::{sc, Scalar, Shape, Tensor};

/// Optimization and pipeline settings. Defaults follow the training recipe:
/// 360 epochs, Adam at base rate 0.01 decayed by γ = 0.1 every 40 epochs,
/// batches of 40 center-cropped 180×180 patches, 9:1 train/test split.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub lr_gamma: f64,
    pub lr_step_epochs: usize,
    pub crop: usize,
    /// Fraction of pairs assigned to the train split (⌈fraction·n⌉ items).
    pub train_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Worker threads for per-item forward/backward. Any value yields the
    /// same numbers; 1 avoids the thread pool entirely.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 360,
            base_lr: 0.01,
            batch_size: 40,
            lr_gamma: 0.1,
            lr_step_epochs: 40,
            crop: 180,
            train_fraction: 0.9,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("base_lr", self.base_lr),
            ("batch_size", self.batch_size as f64),
            ("lr_gamma", self.lr_gamma),
            ("lr_step_epochs", self.lr_step_epochs as f64),
            ("crop", self.crop as f64),
            ("train_fraction", self.train_fraction),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("epsilon", self.epsilon),
            ("threads", self.threads as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "training setting {name} must be positive, got {v}"
                )));
            }
        }
        if self.train_fraction > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must be at most 1, got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Adam moment buffers over a flat parameter vector. Tied parameters appear
/// once here, so one update consumes their summed gradient.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> AdamState<T> {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// Learning rate at a zero-based epoch index: `base_lr · γ^⌊e/step⌋`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.base_lr * cfg.lr_gamma.powi((epoch / cfg.lr_step_epochs) as i32)
}

/// One bias-corrected Adam update over a flat parameter vector, in place.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam_step lengths disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let b1 = sc::<T>(cfg.beta1);
    let b2 = sc::<T>(cfg.beta2);
    let one = T::one();
    let mc = sc::<T>(1.0 - cfg.beta1.powi(state.t as i32));
    let vc = sc::<T>(1.0 - cfg.beta2.powi(state.t as i32));
    let lr = sc::<T>(lr);
    let eps = sc::<T>(cfg.epsilon);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / mc;
        let v_hat = state.v[i] / vc;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Crop the centered `size`×`size` window: offsets `(⌊(H−size)/2⌋, ⌊(W−size)/2⌋)`.
pub fn center_crop<T: Scalar>(t: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    if s.height < size || s.width < size {
        return Err(Error::Shape(format!(
            "cannot center-crop {}x{} to {size}x{size}",
            s.height, s.width
        )));
    }
    let oy = (s.height - size) / 2;
    let ox = (s.width - size) / 2;
    Ok(Tensor::from_fn(
        Shape::new(s.batch, s.channels, size, size),
        |n, c, y, x| t.get(n, c, y + oy, x + ox),
    ))
}

/// Deterministic seeded shuffle, then the first ⌈fraction·n⌉ items train and
/// the remainder test. The two halves partition the input.
pub fn split_dataset<T: Clone>(
    items: &[T],
    seed: u64,
    fraction: f64,
) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::Dataset(
            "cannot split an empty dataset".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut seeded(seed));
    let cut = (fraction * items.len() as f64).ceil() as usize;
    let train = order[..cut].iter().map(|&i| items[i].clone()).collect();
    let test = order[cut..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}

/// One training-log row; serialized as a JSON line per epoch.
#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    /// Zero-based epoch index (the `lr_at_epoch` argument).
    pub epoch: usize,
    pub lr: f64,
    pub rec: f64,
    pub ms_ssim: f64,
    pub grad: f64,
    pub total: f64,
    pub seconds: f64,
}

/// Everything `train` leaves behind.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub records: Vec<EpochRecord>,
    /// Names of the held-out pairs, for later evaluation.
    pub test_names: Vec<String>,
}

fn breakdown_to_f64<T: Scalar>(b: &LossBreakdown<T>) -> [f64; 4] {
    [
        b.rec.to_f64().unwrap_or(f64::NAN),
        b.ms_ssim.to_f64().unwrap_or(f64::NAN),
        b.grad.to_f64().unwrap_or(f64::NAN),
        b.total.to_f64().unwrap_or(f64::NAN),
    ]
}

/// Forward + loss + backward for one pair; returns the per-item breakdown
/// and flat gradient vector.
fn item_pass<T: Scalar>(
    net: &Network<T>,
    weights: &LossWeights<T>,
    pair: &ImagePair<T>,
) -> Result<([f64; 4], Vec<T>)> {
    let ((o1, o2, o3), cache) = net_forward_with_cache(net, &pair.low)?;
    let (breakdown, [d1, d2, d3]) = total_loss_backward(&o1, &o2, &o3, &pair.high, weights)?;
    let (_, grads) = net_backward(&cache, &d1, &d2, &d3)?;
    Ok((breakdown_to_f64(&breakdown), grads.to_vector()))
}

/// Run the full training loop over the dataset at `root`, writing the log
/// and checkpoints under `out_dir`. See the module docs for determinism.
pub fn train(
    root: &Path,
    cfg: &TrainConfig,
    net_cfg: &NetworkConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net_cfg.validate()?;
    let entries = scan_dataset(root)?;
    if entries.len() < 2 {
        return Err(Error::Dataset(format!(
            "training needs at least 2 pairs, found {} under {}",
            entries.len(),
            root.display()
        )));
    }

    // Load and crop everything once up front; images are normalized to
    // [0,1] at decode time.
    let mut pairs: Vec<ImagePair<f32>> = Vec::with_capacity(entries.len());
    for entry in &entries {
        let pair = entry.load::<f32>()?;
        let crop = |t: &Tensor<f32>| {
            center_crop(t, cfg.crop).map_err(|e| {
                Error::Dataset(format!("pair '{}': {e}", entry.name))
            })
        };
        pairs.push(ImagePair {
            low: crop(&pair.low)?,
            high: crop(&pair.high)?,
            name: pair.name,
        });
    }

    let (train_set, test_set) = split_dataset(&pairs, cfg.seed, cfg.train_fraction)?;
    let test_names = test_set.iter().map(|p| p.name.clone()).collect();

    let mut net: Network<f32> = Network::init(net_cfg.clone(), cfg.seed)?;
    let mut params = net.param_vector();
    let mut adam = AdamState::<f32>::new(params.len());
    let weights = LossWeights::<f32>::default();

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let checkpoint_path = out_dir.join("checkpoint.json");

    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at_epoch(epoch, cfg);
        order.shuffle(&mut seeded(mix_seed(cfg.seed, epoch as u64)));

        let mut epoch_sums = [0.0f64; 4];
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            // Per-item passes, optionally in parallel; the reduction below
            // runs in batch-index order either way.
            let results: Vec<Result<([f64; 4], Vec<f32>)>> = match &pool {
                Some(pool) => pool.install(|| {
                    use rayon::prelude::*;
                    batch
                        .par_iter()
                        .map(|&i| item_pass(&net, &weights, &train_set[i]))
                        .collect()
                }),
                None => batch
                    .iter()
                    .map(|&i| item_pass(&net, &weights, &train_set[i]))
                    .collect(),
            };

            let mut grad_sum = vec![0.0f32; params.len()];
            for result in results {
                let (breakdown, grad) = result?;
                if !breakdown[3].is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                        detail: format!(
                            "rec {} ms_ssim {} grad {}",
                            breakdown[0], breakdown[1], breakdown[2]
                        ),
                    });
                }
                for (s, b) in epoch_sums.iter_mut().zip(breakdown) {
                    *s += b;
                }
                for (s, g) in grad_sum.iter_mut().zip(grad) {
                    *s += g;
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for g in &mut grad_sum {
                *g *= inv;
            }
            adam_step(&mut params, &grad_sum, &mut adam, lr, cfg)?;
            net.load_param_vector(&params)?;
        }

        let n = train_set.len() as f64;
        let record = EpochRecord {
            epoch,
            lr,
            rec: epoch_sums[0] / n,
            ms_ssim: epoch_sums[1] / n,
            grad: epoch_sums[2] / n,
            total: epoch_sums[3] / n,
            seconds: started.elapsed().as_secs_f64(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::InvalidArgument(format!("log row: {e}")))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        records.push(record);

        if (epoch + 1) % cfg.lr_step_epochs == 0 && epoch + 1 < cfg.epochs {
            let path = out_dir.join(format!("checkpoint_epoch_{:04}.json", epoch + 1));
            save_checkpoint(&net, &path)?;
        }
    }
    save_checkpoint(&net, &checkpoint_path)?;

    Ok(TrainOutcome {
        checkpoint_path,
        log_path,
        records,
        test_names,
    })
}
