//! Labeled pixel sampling and per-epoch feature batches.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::annotations::{SegmentationMask, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::feature_store::FeatureStore;
use crate::resampler::ResampleMode;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingStrategy {
    Uniform,
    #[default]
    ClassBalanced,
}

impl std::str::FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplingStrategy::Uniform),
            "balanced" => Ok(SamplingStrategy::ClassBalanced),
            other => Err(Error::Config(format!(
                "unknown sampling strategy {other:?} (expected uniform|balanced)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingPlan {
    pub strategy: SamplingStrategy,
    pub pixels_per_image: usize,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn new(seed: u64) -> Self {
        Self {
            strategy: SamplingStrategy::ClassBalanced,
            pixels_per_image: 4096,
            seed,
        }
    }
}

/// One labeled training pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleIndex {
    pub image_id: Arc<str>,
    pub row: usize,
    pub col: usize,
    pub label: u8,
}

/// Draw labeled pixels from every mask, images in id order.
///
/// Uniform draws i.i.d. from the scored pixels of each image. ClassBalanced
/// draws `ceil(n / classes_present)` pixels per present class (ascending class
/// order) and truncates the result to `n`. Both draw with replacement.
pub fn draw_samples(
    masks: &BTreeMap<String, SegmentationMask>,
    plan: SamplingPlan,
) -> Result<Vec<SampleIndex>> {
    if masks.is_empty() {
        return Err(Error::Config("no masks to sample from".into()));
    }
    if plan.pixels_per_image == 0 {
        return Err(Error::Config("pixels_per_image must be at least 1".into()));
    }
    let n = plan.pixels_per_image;
    let mut rng = rng::stream(plan.seed, "samples", 0);
    let mut out = Vec::with_capacity(masks.len() * n);
    for (id, mask) in masks {
        let id: Arc<str> = Arc::from(id.as_str());
        let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (pos, &label) in mask.labels.iter().enumerate() {
            if label != IGNORE_LABEL {
                by_class.entry(label).or_default().push(pos);
            }
        }
        if by_class.is_empty() {
            return Err(Error::Data(format!("mask of {id:?} has no labeled pixels")));
        }
        let picks: Vec<usize> = match plan.strategy {
            SamplingStrategy::Uniform => {
                let scored: Vec<usize> = by_class.values().flatten().copied().collect::<Vec<_>>();
                let mut scored = scored;
                scored.sort_unstable();
                (0..n)
                    .map(|_| scored[rng.random_range(0..scored.len())])
                    .collect()
            }
            SamplingStrategy::ClassBalanced => {
                let per_class = n.div_ceil(by_class.len());
                let mut picks = Vec::with_capacity(per_class * by_class.len());
                for positions in by_class.values() {
                    for _ in 0..per_class {
                        picks.push(positions[rng.random_range(0..positions.len())]);
                    }
                }
                picks.truncate(n);
                picks
            }
        };
        out.extend(picks.into_iter().map(|pos| SampleIndex {
            image_id: Arc::clone(&id),
            row: pos / mask.width,
            col: pos % mask.width,
            label: mask.labels[pos],
        }));
    }
    Ok(out)
}

/// Row-major `len × dim` f32 features and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Vec<f32>,
    pub dim: usize,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), self.dim), |(i, j)| {
            f64::from(self.features[i * self.dim + j])
        })
    }
}

/// Sizes of the batches an epoch over `n` samples produces: full batches,
/// then a trailing short batch only if it has at least two rows.
pub fn batch_sizes(n: usize, batch_size: usize) -> Vec<usize> {
    let mut sizes = vec![batch_size; n / batch_size];
    let rest = n % batch_size;
    if rest >= 2 {
        sizes.push(rest);
    }
    sizes
}

/// Fetch the features of `samples` into a batch, one store read per image.
pub fn gather_batch(
    store: &FeatureStore,
    samples: &[SampleIndex],
    mode: ResampleMode,
) -> Result<Batch> {
    let dim = store.feature_dim();
    let mut features = vec![0.0f32; samples.len() * dim];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].image_id.cmp(&samples[b].image_id));
    let mut scratch = Vec::new();
    for run in order.chunk_by(|&a, &b| samples[a].image_id == samples[b].image_id) {
        let pixels: Vec<(usize, usize)> = run
            .iter()
            .map(|&i| (samples[i].row, samples[i].col))
            .collect();
        scratch.resize(pixels.len() * dim, 0.0);
        store.fetch_into(&samples[run[0]].image_id, &pixels, mode, &mut scratch)?;
        for (k, &i) in run.iter().enumerate() {
            features[i * dim..(i + 1) * dim].copy_from_slice(&scratch[k * dim..(k + 1) * dim]);
        }
    }
    Ok(Batch {
        features,
        dim,
        labels: samples.iter().map(|s| s.label).collect(),
    })
}

/// Batches of one epoch: samples shuffled with the `(seed, epoch)` stream,
/// then cut into `batch_size` chunks.
pub struct EpochBatches<'a> {
    store: &'a FeatureStore,
    shuffled: Vec<SampleIndex>,
    sizes: std::vec::IntoIter<usize>,
    offset: usize,
    mode: ResampleMode,
}

impl Iterator for EpochBatches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let size = self.sizes.next()?;
        let slice = &self.shuffled[self.offset..self.offset + size];
        self.offset += size;
        Some(gather_batch(self.store, slice, self.mode))
    }
}

pub fn batches<'a>(
    store: &'a FeatureStore,
    samples: &[SampleIndex],
    batch_size: usize,
    mode: ResampleMode,
    seed: u64,
    epoch: u64,
) -> Result<EpochBatches<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut shuffled = samples.to_vec();
    shuffled.shuffle(&mut rng::stream(seed, "epoch", epoch));
    Ok(EpochBatches {
        store,
        sizes: batch_sizes(shuffled.len(), batch_size).into_iter(),
        shuffled,
        offset: 0,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masks(items: &[(&str, SegmentationMask)]) -> BTreeMap<String, SegmentationMask> {
        items
            .iter()
            .map(|(k, m)| (k.to_string(), m.clone()))
            .collect()
    }

    fn half_half(h: usize, w: usize) -> SegmentationMask {
        let labels = (0..h * w)
            .map(|i| if i < h * w / 2 { 0 } else { 1 })
            .collect();
        SegmentationMask::new(h, w, labels).unwrap()
    }

    #[test]
    fn uniform_on_single_class() {
        let m = masks(&[("a", SegmentationMask::filled(4, 4, 2))]);
        let plan = SamplingPlan {
            strategy: SamplingStrategy::Uniform,
            pixels_per_image: 10,
            seed: 1,
        };
        let s = draw_samples(&m, plan).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|x| x.label == 2));
    }

    #[test]
    fn balanced_halves() {
        // 90% class 0 still gives an even split
        let mut labels = vec![0u8; 100];
        labels[..10].fill(1);
        let m = masks(&[
            ("a", half_half(8, 8)),
            ("b", SegmentationMask::new(10, 10, labels).unwrap()),
        ]);
        let plan = SamplingPlan {
            strategy: SamplingStrategy::ClassBalanced,
            pixels_per_image: 100,
            seed: 1,
        };
        let s = draw_samples(&m, plan).unwrap();
        for id in ["a", "b"] {
            let ones = s
                .iter()
                .filter(|x| &*x.image_id == id && x.label == 1)
                .count();
            let zeros = s
                .iter()
                .filter(|x| &*x.image_id == id && x.label == 0)
                .count();
            assert_eq!((zeros, ones), (50, 50));
        }
        assert!(s[..100].iter().all(|x| &*x.image_id == "a"));
    }

    #[test]
    fn balanced_truncates_to_budget() {
        let labels = (0..30).map(|i| (i % 3) as u8).collect();
        let m = masks(&[("a", SegmentationMask::new(5, 6, labels).unwrap())]);
        let plan = SamplingPlan {
            strategy: SamplingStrategy::ClassBalanced,
            pixels_per_image: 10,
            seed: 0,
        };
        let s = draw_samples(&m, plan).unwrap();
        assert_eq!(s.len(), 10);
        let counts: Vec<usize> = (0..3)
            .map(|c| s.iter().filter(|x| x.label == c).count())
            .collect();
        assert_eq!(counts, vec![4, 4, 2]);
    }

    #[test]
    fn never_samples_ignored_and_is_seeded() {
        let labels = (0..64)
            .map(|i| {
                if i % 2 == 0 {
                    IGNORE_LABEL
                } else {
                    (i % 5) as u8
                }
            })
            .collect();
        let m = masks(&[("a", SegmentationMask::new(8, 8, labels).unwrap())]);
        for strategy in [SamplingStrategy::Uniform, SamplingStrategy::ClassBalanced] {
            let plan = SamplingPlan {
                strategy,
                pixels_per_image: 500,
                seed: 7,
            };
            let s = draw_samples(&m, plan).unwrap();
            assert!(s.iter().all(|x| x.label != IGNORE_LABEL && x.label < 5));
            assert!(s.iter().all(|x| m["a"].get(x.row, x.col) == x.label));
            assert_eq!(s, draw_samples(&m, plan).unwrap());
            assert_ne!(
                s,
                draw_samples(&m, SamplingPlan { seed: 8, ..plan }).unwrap()
            );
        }
    }

    #[test]
    fn all_ignored_is_data_error() {
        let m = masks(&[("a", SegmentationMask::filled(2, 2, IGNORE_LABEL))]);
        assert!(matches!(
            draw_samples(&m, SamplingPlan::new(0)),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            draw_samples(&BTreeMap::new(), SamplingPlan::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn batch_size_arithmetic() {
        assert_eq!(batch_sizes(10, 4), vec![4, 4, 2]);
        assert_eq!(batch_sizes(9, 4), vec![4, 4]);
        assert_eq!(batch_sizes(8, 4), vec![4, 4]);
        assert_eq!(batch_sizes(1, 4), Vec::<usize>::new());
    }
}
