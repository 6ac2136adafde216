//! SGD training with validation-based early stopping, and split evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::annotations::{SegmentationMask, SplitAssignment, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::feature_store::FeatureStore;
use crate::inference::{self, InferenceOptions};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::mlp::{argmax_rows, cross_entropy, Mlp, MlpArch};
use crate::resampler::ResampleMode;
use crate::rng;
use crate::sampler::{self, SampleIndex, SamplingPlan, SamplingStrategy};

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_MAX_EPOCHS: usize = 50;
pub const DEFAULT_PATIENCE: usize = 5;
pub const VAL_PIXEL_CAP: usize = 100_000;
const VAL_CHUNK: usize = 8192;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: [usize; 2],
    pub dropout_p: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub strategy: SamplingStrategy,
    pub pixels_per_image: usize,
    pub mode: ResampleMode,
    pub seed: u64,
    pub ensemble_size: usize,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        let plan = SamplingPlan::new(seed);
        Self {
            hidden: [256, 128],
            dropout_p: 0.1,
            lr: DEFAULT_LR,
            batch_size: DEFAULT_BATCH,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            strategy: plan.strategy,
            pixels_per_image: plan.pixels_per_image,
            mode: ResampleMode::Nearest,
            seed,
            ensemble_size: 1,
        }
    }

    pub fn arch(&self, input_dim: usize, num_classes: usize) -> MlpArch {
        MlpArch {
            input_dim,
            hidden: self.hidden,
            num_classes,
            dropout_p: self.dropout_p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.ensemble_size == 0 {
            return bad("ensemble size must be at least 1".into());
        }
        if self.pixels_per_image == 0 {
            return bad("pixels_per_image must be at least 1".into());
        }
        Ok(())
    }

    pub fn member_seed(&self, member: usize) -> u64 {
        rng::derive_seed(self.seed, "member", member as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Earliest epoch with the highest validation accuracy.
    pub fn best(&self) -> Option<EpochRecord> {
        self.epochs
            .iter()
            .copied()
            .fold(None, |best: Option<EpochRecord>, e| match best {
                Some(b) if b.val_accuracy >= e.val_accuracy => Some(b),
                _ => Some(e),
            })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_accuracy\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:.8},{:.8}", e.epoch, e.train_loss, e.val_accuracy);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMember {
    pub seed: u64,
    /// Parameters of the best validation epoch, rounded to f32.
    pub model: Mlp,
    pub history: TrainHistory,
}

fn read_masks(store: &FeatureStore, ids: &[String]) -> Result<BTreeMap<String, SegmentationMask>> {
    ids.iter()
        .map(|id| Ok((id.clone(), store.read_mask(id)?)))
        .collect()
}

/// Every scored validation pixel, or a seeded subsample of `cap` of them in
/// image/raster order.
pub fn validation_pixels(
    masks: &BTreeMap<String, SegmentationMask>,
    cap: usize,
    seed: u64,
) -> Vec<SampleIndex> {
    let mut all = Vec::new();
    for (id, mask) in masks {
        let id: std::sync::Arc<str> = std::sync::Arc::from(id.as_str());
        for (pos, &label) in mask.labels.iter().enumerate() {
            if label != IGNORE_LABEL {
                all.push(SampleIndex {
                    image_id: std::sync::Arc::clone(&id),
                    row: pos / mask.width,
                    col: pos % mask.width,
                    label,
                });
            }
        }
    }
    if all.len() > cap {
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.shuffle(&mut rng::stream(seed, "val", 0));
        order.truncate(cap);
        order.sort_unstable();
        all = order.into_iter().map(|i| all[i].clone()).collect();
    }
    all
}

/// Eval-mode pixel accuracy on `pixels`, fetched in bounded chunks.
pub fn pixel_accuracy(
    model: &Mlp,
    store: &FeatureStore,
    pixels: &[SampleIndex],
    mode: ResampleMode,
) -> Result<f64> {
    if pixels.is_empty() {
        return Err(Error::Config("no validation pixels".into()));
    }
    let mut correct = 0usize;
    for chunk in pixels.chunks(VAL_CHUNK) {
        let batch = sampler::gather_batch(store, chunk, mode)?;
        let pred = argmax_rows(model.forward_eval(batch.to_array().view())?.view());
        correct += pred
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / pixels.len() as f64)
}

fn train_member(
    cfg: &TrainConfig,
    arch: MlpArch,
    store: &FeatureStore,
    train_masks: &BTreeMap<String, SegmentationMask>,
    val_pixels: &[SampleIndex],
    member: usize,
) -> Result<TrainedMember> {
    let seed = cfg.member_seed(member);
    let plan = SamplingPlan {
        strategy: cfg.strategy,
        pixels_per_image: cfg.pixels_per_image,
        seed,
    };
    let samples = sampler::draw_samples(train_masks, plan)?;
    let mut model = Mlp::init(arch, seed)?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Mlp)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut dropout_rng = rng::stream(seed, "dropout", epoch as u64);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for batch in sampler::batches(
            store,
            &samples,
            cfg.batch_size,
            cfg.mode,
            seed,
            epoch as u64,
        )? {
            let batch = batch?;
            let (logits, cache) = model.forward_train(batch.to_array().view(), &mut dropout_rng)?;
            let (loss, dlogits) = cross_entropy(logits.view(), &batch.labels)?;
            let grads = model.backward(&cache, dlogits.view())?;
            model.sgd_step(&grads, cfg.lr);
            model.update_running_stats(&cache);
            loss_sum += loss;
            steps += 1;
        }
        if steps == 0 {
            return Err(Error::Config(format!(
                "{} training samples cannot fill a batch of 2",
                samples.len()
            )));
        }
        let val_accuracy = pixel_accuracy(&model, store, val_pixels, cfg.mode)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / steps as f64,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok(TrainedMember {
        seed,
        model: best_model.quantized(),
        history,
    })
}

/// Train `cfg.ensemble_size` members on the train split, early-stopping on
/// validation pixel accuracy. Only train and validation masks are read.
pub fn train(
    cfg: &TrainConfig,
    store: &FeatureStore,
    split: &SplitAssignment,
) -> Result<Vec<TrainedMember>> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    if split.val.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let arch = cfg.arch(store.feature_dim(), store.catalog().len());
    arch.validate()?;
    let train_masks = read_masks(store, &split.train)?;
    let val_masks = read_masks(store, &split.val)?;
    let val_pixels = validation_pixels(&val_masks, VAL_PIXEL_CAP, cfg.seed);
    (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|i| train_member(cfg, arch, store, &train_masks, &val_pixels, i))
        .collect()
}

/// Streamed prediction of every image in `image_ids`, scored against its
/// mask over non-ignored pixels.
pub fn evaluate(
    models: &[Mlp],
    store: &FeatureStore,
    image_ids: &[String],
    opts: InferenceOptions,
) -> Result<MetricsReport> {
    if image_ids.is_empty() {
        return Err(Error::Config("no images to evaluate".into()));
    }
    let mut cm = ConfusionMatrix::new(store.catalog().len());
    for id in image_ids {
        let pred = inference::predict_image(models, store, id, opts)?;
        cm.accumulate(&pred, &store.read_mask(id)?)?;
    }
    Ok(MetricsReport::from_confusion(
        store.catalog().names().to_vec(),
        cm,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_checks() {
        let ok = TrainConfig::new(1);
        assert!(ok.validate().is_ok());
        for f in [
            |c: &mut TrainConfig| c.max_epochs = 0,
            |c: &mut TrainConfig| c.lr = 0.0,
            |c: &mut TrainConfig| c.patience = 0,
            |c: &mut TrainConfig| c.ensemble_size = 0,
            |c: &mut TrainConfig| c.batch_size = 1,
        ] {
            let mut c = ok.clone();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn history_best_and_csv() {
        let h = TrainHistory {
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 1.0,
                    val_accuracy: 0.5,
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 0.5,
                    val_accuracy: 0.9,
                },
                EpochRecord {
                    epoch: 3,
                    train_loss: 0.4,
                    val_accuracy: 0.9,
                },
            ],
        };
        assert_eq!(h.best().unwrap().epoch, 2);
        assert_eq!(
            h.to_csv(),
            "epoch,train_loss,val_accuracy\n1,1.00000000,0.50000000\n2,0.50000000,0.90000000\n3,0.40000000,0.90000000\n"
        );
    }

    #[test]
    fn validation_subsample_is_seeded_and_sorted() {
        let mut masks = BTreeMap::new();
        let mut m = SegmentationMask::filled(10, 10, 1);
        m.set(0, 0, IGNORE_LABEL);
        masks.insert("a".to_string(), m);
        assert_eq!(validation_pixels(&masks, 1000, 1).len(), 99);
        let a = validation_pixels(&masks, 20, 3);
        assert_eq!(a.len(), 20);
        assert_eq!(a, validation_pixels(&masks, 20, 3));
        assert!(a
            .windows(2)
            .all(|w| (w[0].row, w[0].col) < (w[1].row, w[1].col)));
    }
}
