//! Chunk-streamed whole-image prediction, ensemble voting and pair export.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::annotations::{write_mask, SegmentationMask};
use crate::error::{Error, IoContext, Result};
use crate::feature_store::{FeatureStore, PixelRect};
use crate::mlp::{argmax_rows, Mlp};
use crate::netpbm;
use crate::resampler::ResampleMode;

pub const DEFAULT_CHUNK_BYTES: u64 = 8 << 20;
pub const PAIRS_FILE: &str = "pairs.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoteRule {
    #[default]
    MeanLogits,
    MajorityArgmax,
}

impl std::str::FromStr for VoteRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(VoteRule::MeanLogits),
            "majority" => Ok(VoteRule::MajorityArgmax),
            other => Err(Error::Config(format!(
                "unknown vote rule {other:?} (expected mean|majority)"
            ))),
        }
    }
}

impl std::fmt::Display for VoteRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VoteRule::MeanLogits => "mean",
            VoteRule::MajorityArgmax => "majority",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferenceOptions {
    pub chunk_budget_bytes: u64,
    pub mode: ResampleMode,
    pub vote: VoteRule,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            chunk_budget_bytes: DEFAULT_CHUNK_BYTES,
            mode: ResampleMode::Nearest,
            vote: VoteRule::MeanLogits,
        }
    }
}

/// Members must be non-empty, agree on their class count, and read the
/// store's feature width.
pub fn check_models(models: &[Mlp], store: &FeatureStore) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| Error::Config("at least one model is required".into()))?;
    for (i, m) in models.iter().enumerate() {
        if m.arch.input_dim != store.feature_dim() {
            return Err(Error::Schema(format!(
                "model {i} expects {}-dim features, store provides {}",
                m.arch.input_dim,
                store.feature_dim()
            )));
        }
        if m.arch.num_classes != first.arch.num_classes {
            return Err(Error::Schema(format!(
                "model {i} predicts {} classes, model 0 predicts {}",
                m.arch.num_classes, first.arch.num_classes
            )));
        }
    }
    if first.arch.num_classes != store.catalog().len() {
        return Err(Error::Schema(format!(
            "models predict {} classes, store catalog has {}",
            first.arch.num_classes,
            store.catalog().len()
        )));
    }
    Ok(())
}

/// Plurality of `votes`, ties to the lowest class.
pub fn majority(votes: &[u8], num_classes: usize) -> u8 {
    let mut counts = vec![0usize; num_classes];
    for &v in votes {
        counts[usize::from(v)] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best as u8
}

/// Combine per-member logits (all `B × K`) into one label per row.
pub fn combine(member_logits: &[Array2<f64>], vote: VoteRule) -> Vec<u8> {
    match vote {
        VoteRule::MeanLogits => {
            let mut sum = member_logits[0].clone();
            for l in &member_logits[1..] {
                sum += l;
            }
            sum /= member_logits.len() as f64;
            argmax_rows(sum.view())
        }
        VoteRule::MajorityArgmax => {
            let k = member_logits[0].ncols();
            let per_member: Vec<Vec<u8>> = member_logits
                .iter()
                .map(|l| argmax_rows(l.view()))
                .collect();
            let mut votes = vec![0u8; per_member.len()];
            (0..member_logits[0].nrows())
                .map(|row| {
                    for (v, m) in votes.iter_mut().zip(&per_member) {
                        *v = m[row];
                    }
                    majority(&votes, k)
                })
                .collect()
        }
    }
}

/// Labels for `n × dim` f32 features.
pub fn predict_features(
    models: &[Mlp],
    features: &[f32],
    dim: usize,
    vote: VoteRule,
) -> Result<Vec<u8>> {
    let n = features.len() / dim;
    let x = Array2::from_shape_fn((n, dim), |(i, j)| f64::from(features[i * dim + j]));
    predict_rows(models, x.view(), vote)
}

fn predict_rows(models: &[Mlp], x: ArrayView2<f64>, vote: VoteRule) -> Result<Vec<u8>> {
    let logits = models
        .iter()
        .map(|m| m.forward_eval(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine(&logits, vote))
}

/// Predict every pixel of `image_id`, streaming row bands of at most
/// `chunk_budget_bytes` features. BatchNorm always uses running statistics,
/// so the result does not depend on the budget.
pub fn predict_image(
    models: &[Mlp],
    store: &FeatureStore,
    image_id: &str,
    opts: InferenceOptions,
) -> Result<SegmentationMask> {
    check_models(models, store)?;
    let (h, w) = (store.image_height(), store.image_width());
    let mut labels = Vec::with_capacity(h * w);
    let stream = store.stream_region_features(
        image_id,
        PixelRect::full(h, w),
        opts.mode,
        opts.chunk_budget_bytes,
    )?;
    for chunk in stream {
        labels.extend(predict_features(
            models,
            chunk.features(),
            chunk.dim,
            opts.vote,
        )?);
    }
    SegmentationMask::new(h, w, labels)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub image_id: String,
    pub mask: String,
    /// `None` when the store has no rendering of this image.
    pub image: Option<String>,
}

/// Predict and write `masks/<id>.pgm`, `images/<id>.ppm` (when the store has
/// a rendering) and a `pairs.json` index under `out_dir`.
pub fn export_pairs(
    models: &[Mlp],
    store: &FeatureStore,
    image_ids: &[String],
    out_dir: &Path,
    opts: InferenceOptions,
) -> Result<Vec<PairEntry>> {
    check_models(models, store)?;
    for id in image_ids {
        if !store.contains(id) {
            return Err(Error::Key(format!("unknown image id {id:?}")));
        }
    }
    let mask_dir = out_dir.join("masks");
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&mask_dir).at(&mask_dir)?;
    let mut entries = Vec::with_capacity(image_ids.len());
    for id in image_ids {
        let mask = predict_image(models, store, id, opts)?;
        let mask_rel = format!("masks/{id}.pgm");
        write_mask(&mask, &out_dir.join(&mask_rel))?;
        let image = match store.read_render(id)? {
            Some(render) => {
                fs::create_dir_all(&image_dir).at(&image_dir)?;
                let rel = format!("images/{id}.ppm");
                netpbm::write(&out_dir.join(&rel), &render)?;
                Some(rel)
            }
            None => None,
        };
        entries.push(PairEntry {
            image_id: id.clone(),
            mask: mask_rel,
            image,
        });
    }
    let index = out_dir.join(PAIRS_FILE);
    let mut json =
        serde_json::to_string_pretty(&entries).map_err(|e| Error::Data(e.to_string()))?;
    json.push('\n');
    fs::write(&index, json).at(&index)?;
    Ok(entries)
}
