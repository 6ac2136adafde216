//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

use std::path::Path;

use hdgan::annotations::SegmentationMask;
use hdgan::feature_store::{create_store, BlockSpec, FeatureStore, ImageData, StoreSpec};
use hdgan::resampler::ResampleMode;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub type TestRng = Xoshiro256StarStar;

pub fn test_rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}

/// Source index nearest to the center of destination pixel `d`, by exact
/// distance comparison `|(2i+1)·dst − (2d+1)·src|`; ties go to the lower
/// index.
pub fn nearest_oracle(d: usize, dst: usize, src: usize) -> usize {
    let target = (2 * d + 1) as i128 * src as i128;
    (0..src)
        .min_by_key(|&i| (((2 * i + 1) as i128 * dst as i128 - target).abs(), i))
        .unwrap()
}

fn hat(t: f64) -> f64 {
    (1.0 - t.abs()).max(0.0)
}

/// Full upsample of a channel-last plane. Bilinear is a tent-kernel sum over
/// every source texel at the clamped center-aligned source coordinate.
pub fn upsample_oracle(
    src: &[f32],
    sh: usize,
    sw: usize,
    c: usize,
    dh: usize,
    dw: usize,
    mode: ResampleMode,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(dh * dw * c);
    for y in 0..dh {
        for x in 0..dw {
            match mode {
                ResampleMode::Nearest => {
                    let (i, j) = (nearest_oracle(y, dh, sh), nearest_oracle(x, dw, sw));
                    out.extend((0..c).map(|k| f64::from(src[(i * sw + j) * c + k])));
                }
                ResampleMode::Bilinear => {
                    let sy = ((y as f64 + 0.5) * sh as f64 / dh as f64 - 0.5)
                        .clamp(0.0, (sh - 1) as f64);
                    let sx = ((x as f64 + 0.5) * sw as f64 / dw as f64 - 0.5)
                        .clamp(0.0, (sw - 1) as f64);
                    for k in 0..c {
                        let mut v = 0.0;
                        for i in 0..sh {
                            for j in 0..sw {
                                v += hat(sy - i as f64)
                                    * hat(sx - j as f64)
                                    * f64::from(src[(i * sw + j) * c + k]);
                            }
                        }
                        out.push(v);
                    }
                }
            }
        }
    }
    out
}

/// Materialize every block at full resolution, concatenate per pixel.
pub fn full_feature_oracle(store: &FeatureStore, image_id: &str, mode: ResampleMode) -> Vec<f64> {
    let (h, w) = (store.image_height(), store.image_width());
    let d = store.feature_dim();
    let mut out = vec![0.0; h * w * d];
    let mut offset = 0;
    for (k, b) in store.blocks().iter().enumerate() {
        let vals = store.block_values(image_id, k).unwrap();
        let up = upsample_oracle(vals, b.height, b.width, b.channels, h, w, mode);
        for p in 0..h * w {
            out[p * d + offset..p * d + offset + b.channels]
                .copy_from_slice(&up[p * b.channels..(p + 1) * b.channels]);
        }
        offset += b.channels;
    }
    out
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

/// Random valid store spec and images: sizes up to `max_size`, 1–4 blocks
/// with divisor resolutions, 1–3 channels, 1–3 images, random masks.
/// Values are arbitrary finite bit patterns when `raw_bits`, else uniform in
/// [-4, 4).
pub fn random_store_data(
    rng: &mut TestRng,
    max_size: usize,
    raw_bits: bool,
) -> (StoreSpec, Vec<ImageData>) {
    let h = rng.random_range(1..=max_size);
    let w = rng.random_range(1..=max_size);
    let n_blocks = rng.random_range(1..=4);
    let (dh, dw) = (divisors(h), divisors(w));
    let mut heights: Vec<usize> = (0..n_blocks)
        .map(|_| dh[rng.random_range(0..dh.len())])
        .collect();
    heights.sort_unstable();
    let blocks: Vec<BlockSpec> = heights
        .into_iter()
        .enumerate()
        .map(|(index, bh)| BlockSpec {
            index,
            height: bh,
            width: dw[rng.random_range(0..dw.len())],
            channels: rng.random_range(1..=3),
        })
        .collect();
    let k = rng.random_range(2..=5);
    let spec = StoreSpec {
        image_height: h,
        image_width: w,
        class_names: (0..k).map(|i| format!("class_{i}")).collect(),
        blocks: blocks.clone(),
    };
    let images = (0..rng.random_range(1..=3))
        .map(|i| ImageData {
            image_id: format!("im-{i}"),
            blocks: blocks
                .iter()
                .map(|b| {
                    (0..b.height * b.width * b.channels)
                        .map(|_| {
                            if raw_bits {
                                f32::from_bits(random_finite_bits(rng))
                            } else {
                                rng.random_range(-4.0f32..4.0)
                            }
                        })
                        .collect()
                })
                .collect(),
            mask: Some(random_mask(rng, h, w, k)),
            ..Default::default()
        })
        .collect();
    (spec, images)
}

fn random_finite_bits(rng: &mut TestRng) -> u32 {
    loop {
        let bits: u32 = rng.random();
        if f32::from_bits(bits).is_finite() {
            return bits;
        }
    }
}

/// Labels uniform over `0..k` with roughly 5% ignored pixels.
pub fn random_mask(rng: &mut TestRng, h: usize, w: usize, k: usize) -> SegmentationMask {
    let labels = (0..h * w)
        .map(|_| {
            if rng.random_bool(0.05) {
                255
            } else {
                rng.random_range(0..k) as u8
            }
        })
        .collect();
    SegmentationMask::new(h, w, labels).unwrap()
}

pub fn random_store(
    rng: &mut TestRng,
    max_size: usize,
    raw_bits: bool,
    dir: &Path,
) -> (StoreSpec, Vec<ImageData>, FeatureStore) {
    let (spec, images) = random_store_data(rng, max_size, raw_bits);
    let store = create_store(&spec, &images, dir).unwrap();
    (spec, images, store)
}

/// Exact fraction `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Per-class recall and Dice as exact fractions, counted pixel by pixel.
/// `None` where the denominator is zero.
pub fn metrics_oracle(
    pred: &SegmentationMask,
    gt: &SegmentationMask,
    k: usize,
) -> (Vec<Option<Ratio>>, Vec<Option<Ratio>>) {
    let mut accuracy = Vec::with_capacity(k);
    let mut dice = Vec::with_capacity(k);
    for c in 0..k as u8 {
        let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g == 255 {
                continue;
            }
            match (p == c, g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let gt_count = tp + fneg;
        accuracy.push((gt_count > 0).then_some(Ratio {
            num: tp,
            den: gt_count,
        }));
        let den = 2 * tp + fp + fneg;
        dice.push((den > 0).then_some(Ratio { num: 2 * tp, den }));
    }
    (accuracy, dice)
}

/// Whether `x` is within `tol` of the fraction, compared as
/// `|x·den − num| ≤ tol·den`.
pub fn close_to_ratio(x: f64, r: Ratio, tol: f64) -> bool {
    (x * r.den as f64 - r.num as f64).abs() <= tol * r.den as f64
}

/// Upsample `src` with the library in both modes and compare against
/// [`upsample_oracle`]. Returns (nearest max error, bilinear max error).
pub fn resample_errors(
    src: &[f32],
    sh: usize,
    sw: usize,
    c: usize,
    dh: usize,
    dw: usize,
) -> (f64, f64) {
    let plane = hdgan::resampler::PlaneRef::new(src, sh, sw, c).unwrap();
    let mut errs = [0.0f64; 2];
    for (e, mode) in errs
        .iter_mut()
        .zip([ResampleMode::Nearest, ResampleMode::Bilinear])
    {
        let got = hdgan::resampler::upsample_block(plane, dh, dw, mode).unwrap();
        let want = upsample_oracle(src, sh, sw, c, dh, dw, mode);
        *e = got
            .iter()
            .zip(&want)
            .map(|(&g, &w)| (f64::from(g) - w).abs())
            .fold(0.0, f64::max);
    }
    (errs[0], errs[1])
}

/// Random `(src_h, src_w, dst_h, dst_w, channels)` with dst ≥ src, and a
/// source plane of values in [-4, 4).
pub fn random_resample_case(rng: &mut TestRng) -> (Vec<f32>, usize, usize, usize, usize, usize) {
    let sh = rng.random_range(1..=12);
    let sw = rng.random_range(1..=12);
    let dh = rng.random_range(sh..=40);
    let dw = rng.random_range(sw..=40);
    let c = rng.random_range(1..=3);
    let src = (0..sh * sw * c)
        .map(|_| rng.random_range(-4.0f32..4.0))
        .collect();
    (src, sh, sw, dh, dw, c)
}

/// Compare the library's confusion-matrix metrics for one random mask pair
/// against [`metrics_oracle`]. Returns a description of the first mismatch.
pub fn check_metrics_case(rng: &mut TestRng, tol: f64) -> Result<(), String> {
    let h = rng.random_range(1..=24);
    let w = rng.random_range(1..=24);
    let k = rng.random_range(2..=6);
    let gt = random_mask(rng, h, w, k);
    let mut pred = random_mask(rng, h, w, k);
    for l in &mut pred.labels {
        if *l == 255 {
            *l = 0;
        }
    }
    let mut cm = hdgan::metrics::ConfusionMatrix::new(k);
    cm.accumulate(&pred, &gt).map_err(|e| e.to_string())?;
    let (acc, dice) = metrics_oracle(&pred, &gt, k);
    let (got_dice, _) = cm.dice();
    let pairs = [
        ("accuracy", cm.classwise_accuracy(), acc),
        ("dice", got_dice, dice),
    ];
    for (name, got, want) in pairs {
        for (c, (g, w)) in got.iter().zip(&want).enumerate() {
            let ok = match (g, w) {
                (None, None) => true,
                (Some(g), Some(r)) => close_to_ratio(*g, *r, tol),
                _ => false,
            };
            if !ok {
                return Err(format!("{name} of class {c}: got {g:?}, oracle {w:?}"));
            }
        }
    }
    Ok(())
}
