//! Procedural stand-in for a generator: random scenes of disks and
//! rectangles, with per-block features drawn around class prototypes.
//!
//! Ground truth is known exactly, so the whole pipeline can be checked end to
//! end without a trained generator.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::annotations::{ClassCatalog, SegmentationMask, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::feature_store::{create_store, BlockSpec, FeatureStore, ImageData, StoreSpec};
use crate::netpbm::{NetpbmKind, Raster};
use crate::resampler::nearest_index;
use crate::rng::{self, StreamRng};

pub const BACKGROUND: u8 = 0;
pub const DEFAULT_SHAPES_PER_IMAGE: usize = 8;
pub const DEFAULT_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    /// Pixels with `(col - cx)² + (row - cy)² ≤ r²`.
    Disk { cy: f64, cx: f64, radius: f64 },
    /// Half-open `[row0, row1) × [col0, col1)`.
    Rect {
        row0: usize,
        col0: usize,
        row1: usize,
        col1: usize,
    },
}

impl Geometry {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        match *self {
            Geometry::Disk { cy, cx, radius } => {
                let dy = row as f64 - cy;
                let dx = col as f64 - cx;
                dx * dx + dy * dy <= radius * radius
            }
            Geometry::Rect {
                row0,
                col0,
                row1,
                col1,
            } => (row0..row1).contains(&row) && (col0..col1).contains(&col),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub class: u8,
    pub geometry: Geometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Painted in order; later shapes overwrite earlier ones.
    pub shapes: Vec<Shape>,
}

impl SceneSpec {
    pub fn render(&self) -> SegmentationMask {
        let mut mask = SegmentationMask::filled(self.height, self.width, BACKGROUND);
        for shape in &self.shapes {
            for row in 0..self.height {
                for col in 0..self.width {
                    if shape.geometry.contains(row, col) {
                        mask.set(row, col, shape.class);
                    }
                }
            }
        }
        mask
    }
}

/// Typical shape radius of every foreground class, as a fraction of the
/// image size. Index 0 (background) is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeProfile {
    pub scales: Vec<f64>,
}

impl ShapeProfile {
    /// Geometric ladder: class 1 largest (0.16 of the image), each following
    /// class about 0.63 times smaller.
    pub fn ladder(num_classes: usize) -> Self {
        let mut scales = vec![0.0];
        let fg = num_classes.saturating_sub(1);
        for i in 0..fg {
            let t = if fg > 1 {
                i as f64 / (fg - 1) as f64
            } else {
                0.0
            };
            scales.push(0.16 * (0.04f64 / 0.16).powf(t));
        }
        Self { scales }
    }

    /// The ladder with foreground classes shuffled by `seed`.
    pub fn permuted(num_classes: usize, seed: u64) -> Self {
        let mut p = Self::ladder(num_classes);
        p.scales[1..].shuffle(&mut rng::stream(seed, "profile", 0));
        p
    }
}

fn check_scene_args(size: usize, num_classes: usize) -> Result<()> {
    if !(2..=crate::annotations::MAX_CLASSES).contains(&num_classes) {
        return Err(Error::Config(format!(
            "synthetic scenes need 2..=254 classes, got {num_classes}"
        )));
    }
    if size < 16 {
        return Err(Error::Config(format!(
            "synthetic scenes need size ≥ 16, got {size}"
        )));
    }
    Ok(())
}

/// Random scene with the default [`ShapeProfile::ladder`].
pub fn generate_scene(
    seed: u64,
    size: usize,
    num_classes: usize,
    n_shapes: usize,
) -> Result<(SceneSpec, SegmentationMask)> {
    generate_scene_with(
        seed,
        size,
        num_classes,
        n_shapes,
        &ShapeProfile::ladder(num_classes),
    )
}

pub fn generate_scene_with(
    seed: u64,
    size: usize,
    num_classes: usize,
    n_shapes: usize,
    profile: &ShapeProfile,
) -> Result<(SceneSpec, SegmentationMask)> {
    check_scene_args(size, num_classes)?;
    if profile.scales.len() != num_classes {
        return Err(Error::Config(format!(
            "shape profile covers {} classes, scene has {num_classes}",
            profile.scales.len()
        )));
    }
    let mut rng = rng::stream(seed, "scene", 0);
    let shapes = (0..n_shapes)
        .map(|_| random_shape(&mut rng, size, num_classes, profile))
        .collect();
    let scene = SceneSpec {
        height: size,
        width: size,
        num_classes,
        shapes,
    };
    let mask = scene.render();
    Ok((scene, mask))
}

fn random_shape(
    rng: &mut StreamRng,
    size: usize,
    num_classes: usize,
    profile: &ShapeProfile,
) -> Shape {
    let class = rng.random_range(1..num_classes) as u8;
    let nominal = profile.scales[usize::from(class)] * size as f64;
    let radius = (nominal * rng.random_range(0.75..1.25)).clamp(2.0, size as f64 / 2.0 - 1.0);
    let geometry = if rng.random_bool(0.5) {
        let lo = radius.ceil();
        let hi = size as f64 - 1.0 - radius.ceil();
        Geometry::Disk {
            cy: rng.random_range(lo..=hi).round(),
            cx: rng.random_range(lo..=hi).round(),
            radius,
        }
    } else {
        let aspect: f64 = rng.random_range(0.6..1.6);
        let h = ((2.0 * radius / aspect.sqrt()).round() as usize).clamp(2, size);
        let w = ((2.0 * radius * aspect.sqrt()).round() as usize).clamp(2, size);
        let row0 = rng.random_range(0..=size - h);
        let col0 = rng.random_range(0..=size - w);
        Geometry::Rect {
            row0,
            col0,
            row1: row0 + h,
            col1: col0 + w,
        }
    };
    Shape { class, geometry }
}

/// Class prototypes per block. `prototypes[block][class]` has the block's
/// channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub prototypes: Vec<Vec<Vec<f32>>>,
    pub noise_sigma: f64,
    /// Smallest L2 distance between two prototypes of one block.
    pub min_gap: f64,
}

fn pairwise_extremes(points: &[Vec<f64>]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    (lo, hi)
}

/// Target prototype gap `4σ√D + 1`.
pub fn target_gap(sigma: f64, feature_dim: usize) -> f64 {
    4.0 * sigma * (feature_dim as f64).sqrt() + 1.0
}

const PROTOTYPE_CANDIDATES: usize = 16;

fn gram_schmidt(vectors: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for mut v in vectors {
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    basis
}

/// `k` vertices of a regular simplex with edge √2, embedded in `channels ≥
/// k - 1` dimensions along a random orthonormal frame.
fn simplex(k: usize, channels: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let vertex = |i: usize| -> Vec<f64> {
        (0..k)
            .map(|j| f64::from(u8::from(i == j)) - 1.0 / k as f64)
            .collect()
    };
    let sub = gram_schmidt((0..k - 1).map(vertex).collect());
    let frame = gram_schmidt(
        (0..k - 1)
            .map(|_| (0..channels).map(|_| rng::gaussian(rng)).collect())
            .collect(),
    );
    (0..k)
        .map(|i| {
            let v = vertex(i);
            let mut p = vec![0.0; channels];
            for (s, f) in sub.iter().zip(&frame) {
                let coord: f64 = v.iter().zip(s).map(|(a, b)| a * b).sum();
                p.iter_mut().zip(f).for_each(|(x, y)| *x += coord * y);
            }
            p
        })
        .collect()
}

/// Best of several Gaussian draws by min/max pairwise distance ratio, with
/// its minimum distance.
fn spread_gaussian_points(
    k: usize,
    channels: usize,
    rng: &mut StreamRng,
) -> Option<(f64, Vec<Vec<f64>>)> {
    let mut best: Option<(f64, f64, Vec<Vec<f64>>)> = None;
    for _ in 0..PROTOTYPE_CANDIDATES {
        let points: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..channels).map(|_| rng::gaussian(rng)).collect())
            .collect();
        let (lo, hi) = pairwise_extremes(&points);
        if lo <= 0.0 {
            continue;
        }
        if best.as_ref().is_none_or(|(r, _, _)| lo / hi > *r) {
            best = Some((lo / hi, lo, points));
        }
    }
    best.map(|(_, lo, points)| (lo, points))
}

impl FeatureModel {
    /// Per-block class prototypes whose closest pair sits at [`target_gap`].
    ///
    /// A block with at least `num_classes - 1` channels gets a regular
    /// simplex (all pairs at exactly the gap) in a seeded random orientation.
    /// Narrower blocks get Gaussian points; of several seeded draws the one
    /// with the most even spacing (largest min/max distance ratio) is kept.
    pub fn generate(
        blocks: &[BlockSpec],
        num_classes: usize,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise sigma must be ≥ 0, got {sigma}"
            )));
        }
        let dim: usize = blocks.iter().map(|b| b.channels).sum();
        let gap = target_gap(sigma, dim);
        let mut prototypes = Vec::with_capacity(blocks.len());
        for b in blocks {
            let mut rng = rng::stream(seed, "prototypes", b.index as u64);
            let (lo, points) = if b.channels + 1 >= num_classes {
                let points = simplex(num_classes, b.channels, &mut rng);
                (pairwise_extremes(&points).0, points)
            } else {
                spread_gaussian_points(num_classes, b.channels, &mut rng).ok_or_else(|| {
                    Error::Data(format!(
                        "could not draw distinct prototypes for block {}",
                        b.index
                    ))
                })?
            };
            let scale = gap / lo;
            prototypes.push(
                points
                    .into_iter()
                    .map(|p| p.into_iter().map(|v| (v * scale) as f32).collect())
                    .collect::<Vec<Vec<f32>>>(),
            );
        }
        let min_gap = prototypes
            .iter()
            .map(|block| {
                let pts: Vec<Vec<f64>> = block
                    .iter()
                    .map(|p| p.iter().map(|&v| f64::from(v)).collect())
                    .collect();
                pairwise_extremes(&pts).0
            })
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            prototypes,
            noise_sigma: sigma,
            min_gap,
        })
    }
}

/// Nearest-neighbor (pixel-center) downsampling of a mask to `height × width`.
pub fn downsample_mask(mask: &SegmentationMask, height: usize, width: usize) -> SegmentationMask {
    let mut out = SegmentationMask::filled(height, width, 0);
    for r in 0..height {
        let sr = nearest_index(r, height, mask.height);
        for c in 0..width {
            out.set(r, c, mask.get(sr, nearest_index(c, width, mask.width)));
        }
    }
    out
}

/// Channel-last feature arrays for every block: the prototype of the class
/// found at each texel's downsampled location plus N(0, σ²) noise.
pub fn render_blocks(
    mask: &SegmentationMask,
    blocks: &[BlockSpec],
    model: &FeatureModel,
    seed: u64,
) -> Result<Vec<Vec<f32>>> {
    if model.prototypes.len() != blocks.len() {
        return Err(Error::Shape(format!(
            "feature model has {} blocks, {} requested",
            model.prototypes.len(),
            blocks.len()
        )));
    }
    let mut out = Vec::with_capacity(blocks.len());
    for (b, protos) in blocks.iter().zip(&model.prototypes) {
        if !mask.height.is_multiple_of(b.height) || !mask.width.is_multiple_of(b.width) {
            return Err(Error::Shape(format!(
                "block {}x{} does not divide mask {}x{}",
                b.height, b.width, mask.height, mask.width
            )));
        }
        let small = downsample_mask(mask, b.height, b.width);
        let mut rng = rng::stream(seed, "noise", b.index as u64);
        let mut values = Vec::with_capacity(b.height * b.width * b.channels);
        for &label in &small.labels {
            let class = if label == IGNORE_LABEL {
                BACKGROUND
            } else {
                label
            };
            let proto = protos
                .get(usize::from(class))
                .ok_or_else(|| Error::Data(format!("mask class {class} has no prototype")))?;
            for &p in proto {
                let noise = model.noise_sigma * rng::gaussian(&mut rng);
                values.push((f64::from(p) + noise) as f32);
            }
        }
        out.push(values);
    }
    Ok(out)
}

/// Flat color per class.
pub fn class_color(class: u8) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 5] = [
        [242, 240, 245],
        [214, 150, 190],
        [142, 62, 130],
        [226, 98, 74],
        [122, 34, 52],
    ];
    match PALETTE.get(usize::from(class)) {
        Some(c) => *c,
        None => {
            let h = rng::splitmix64_mix(u64::from(class)).to_le_bytes();
            [h[0], h[1], h[2]]
        }
    }
}

pub fn render_rgb(mask: &SegmentationMask) -> Raster {
    Raster {
        kind: NetpbmKind::Rgb,
        width: mask.width,
        height: mask.height,
        samples: mask.labels.iter().flat_map(|&l| class_color(l)).collect(),
    }
}

/// Square block pyramid `(resolution, channels)` used when none is given:
/// size/8 × 8, size/4 × 8, size/2 × 4, size × 4.
pub fn default_blocks(size: usize) -> Vec<(usize, usize)> {
    vec![(size / 8, 8), (size / 4, 8), (size / 2, 4), (size, 4)]
}

pub fn block_specs(pyramid: &[(usize, usize)]) -> Vec<BlockSpec> {
    pyramid
        .iter()
        .enumerate()
        .map(|(index, &(res, channels))| BlockSpec {
            index,
            height: res,
            width: res,
            channels,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    pub size: usize,
    /// `(resolution, channels)` per block, coarsest first.
    pub blocks: Vec<(usize, usize)>,
    pub num_classes: usize,
    pub sigma: f64,
    pub shapes_per_image: usize,
}

impl SynthConfig {
    pub fn new(seed: u64, n_images: usize, size: usize) -> Self {
        Self {
            seed,
            n_images,
            size,
            blocks: default_blocks(size),
            num_classes: 5,
            sigma: DEFAULT_SIGMA,
            shapes_per_image: DEFAULT_SHAPES_PER_IMAGE,
        }
    }
}

pub fn image_id(i: usize) -> String {
    format!("img_{i:03}")
}

const COVERAGE_ATTEMPTS: u64 = 100;

/// Scenes for a whole store. Every foreground class is present somewhere;
/// the full set is redrawn with a new attempt index until that holds.
pub fn generate_scenes(cfg: &SynthConfig) -> Result<Vec<(SceneSpec, SegmentationMask)>> {
    check_scene_args(cfg.size, cfg.num_classes)?;
    let profile = ShapeProfile::permuted(cfg.num_classes, cfg.seed);
    let needs_coverage = cfg.shapes_per_image > 0 && cfg.n_images > 0;
    for attempt in 0..COVERAGE_ATTEMPTS {
        let scenes = (0..cfg.n_images)
            .map(|i| {
                let scene_seed = rng::derive_seed(
                    cfg.seed,
                    "scene-seed",
                    attempt * cfg.n_images as u64 + i as u64,
                );
                generate_scene_with(
                    scene_seed,
                    cfg.size,
                    cfg.num_classes,
                    cfg.shapes_per_image,
                    &profile,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        if !needs_coverage {
            return Ok(scenes);
        }
        let mut present = vec![false; cfg.num_classes];
        for (_, mask) in &scenes {
            for &l in &mask.labels {
                present[usize::from(l)] = true;
            }
        }
        if present[1..].iter().all(|&p| p) {
            return Ok(scenes);
        }
    }
    Err(Error::Config(format!(
        "{} images of {} shapes cannot cover {} foreground classes",
        cfg.n_images,
        cfg.shapes_per_image,
        cfg.num_classes - 1
    )))
}

/// Write a complete synthetic store (features, masks and RGB renders).
pub fn build_synthetic_store(cfg: &SynthConfig, out_dir: &Path) -> Result<FeatureStore> {
    let blocks = block_specs(&cfg.blocks);
    crate::feature_store::manifest::validate_blocks(&blocks, cfg.size, cfg.size)?;
    let catalog = ClassCatalog::with_len(cfg.num_classes)?;
    let model = FeatureModel::generate(&blocks, cfg.num_classes, cfg.sigma, cfg.seed)?;
    let scenes = generate_scenes(cfg)?;
    let mut images = Vec::with_capacity(scenes.len());
    for (i, (_, mask)) in scenes.into_iter().enumerate() {
        let noise_seed = rng::derive_seed(cfg.seed, "image-noise", i as u64);
        let block_data = render_blocks(&mask, &blocks, &model, noise_seed)?;
        let mut metadata = BTreeMap::new();
        metadata.insert(
            "noise_seed".to_string(),
            serde_json::Value::from(noise_seed),
        );
        images.push(ImageData {
            image_id: image_id(i),
            blocks: block_data,
            render: Some(render_rgb(&mask)),
            mask: Some(mask),
            metadata,
        });
    }
    let spec = StoreSpec {
        image_height: cfg.size,
        image_width: cfg.size,
        class_names: catalog.names().to_vec(),
        blocks,
    };
    create_store(&spec, &images, out_dir)
}

/// Per-class boundary length and area over a set of masks. Boundary length
/// counts 4-adjacent pixel pairs whose labels differ and one of which is the
/// class; pairs touching ignored pixels are skipped.
pub fn class_boundary_stats<'a>(
    masks: impl IntoIterator<Item = &'a SegmentationMask>,
    num_classes: usize,
) -> Vec<(u64, u64)> {
    let mut stats = vec![(0u64, 0u64); num_classes];
    for m in masks {
        for r in 0..m.height {
            for c in 0..m.width {
                let l = m.get(r, c);
                if l == IGNORE_LABEL {
                    continue;
                }
                stats[usize::from(l)].1 += 1;
                let mut edge = |other: u8| {
                    if other != l && other != IGNORE_LABEL {
                        stats[usize::from(l)].0 += 1;
                        stats[usize::from(other)].0 += 1;
                    }
                };
                if c + 1 < m.width {
                    edge(m.get(r, c + 1));
                }
                if r + 1 < m.height {
                    edge(m.get(r + 1, c));
                }
            }
        }
    }
    stats
}

/// Number of 4-adjacent pixel pairs with different labels.
pub fn boundary_length(mask: &SegmentationMask) -> u64 {
    let mut n = 0;
    for r in 0..mask.height {
        for c in 0..mask.width {
            let l = mask.get(r, c);
            if c + 1 < mask.width && mask.get(r, c + 1) != l {
                n += 1;
            }
            if r + 1 < mask.height && mask.get(r + 1, c) != l {
                n += 1;
            }
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_shapes_is_background() {
        let (scene, mask) = generate_scene(3, 32, 5, 0).unwrap();
        assert!(scene.shapes.is_empty());
        assert!(mask.labels.iter().all(|&l| l == BACKGROUND));
    }

    #[test]
    fn centered_disk_matches_lattice_count() {
        let scene = SceneSpec {
            height: 32,
            width: 32,
            num_classes: 5,
            shapes: vec![Shape {
                class: 3,
                geometry: Geometry::Disk {
                    cy: 16.0,
                    cx: 16.0,
                    radius: 4.0,
                },
            }],
        };
        let mut lattice = 0;
        for y in -4i32..=4 {
            for x in -4i32..=4 {
                if x * x + y * y <= 16 {
                    lattice += 1;
                }
            }
        }
        assert_eq!(lattice, 49);
        let mask = scene.render();
        assert_eq!(mask.labels.iter().filter(|&&l| l == 3).count(), lattice);
    }

    #[test]
    fn painter_order_and_rect_extent() {
        let rect = Geometry::Rect {
            row0: 2,
            col0: 3,
            row1: 6,
            col1: 8,
        };
        let scene = SceneSpec {
            height: 16,
            width: 16,
            num_classes: 3,
            shapes: vec![
                Shape {
                    class: 1,
                    geometry: rect,
                },
                Shape {
                    class: 2,
                    geometry: Geometry::Rect {
                        row0: 2,
                        col0: 3,
                        row1: 3,
                        col1: 4,
                    },
                },
            ],
        };
        let mask = scene.render();
        assert_eq!(mask.labels.iter().filter(|&&l| l == 1).count(), 4 * 5 - 1);
        assert_eq!(mask.get(2, 3), 2);
    }

    #[test]
    fn scenes_are_seeded_and_in_bounds() {
        let a = generate_scene(11, 64, 5, 10).unwrap();
        assert_eq!(a, generate_scene(11, 64, 5, 10).unwrap());
        assert_ne!(a.0, generate_scene(12, 64, 5, 10).unwrap().0);
        for s in &a.0.shapes {
            assert!((1..5).contains(&s.class));
            if let Geometry::Disk { cy, cx, radius } = s.geometry {
                assert!(cy - radius >= 0.0 && cy + radius <= 63.0);
                assert!(cx - radius >= 0.0 && cx + radius <= 63.0);
            }
        }
    }

    #[test]
    fn scene_argument_checks() {
        assert!(generate_scene(0, 15, 5, 1).is_err());
        assert!(generate_scene(0, 32, 1, 1).is_err());
    }

    #[test]
    fn prototypes_have_target_gap() {
        let blocks = block_specs(&default_blocks(128));
        let model = FeatureModel::generate(&blocks, 5, 0.1, 4).unwrap();
        let gap = target_gap(0.1, 24);
        assert!(
            (model.min_gap - gap).abs() < 1e-4,
            "{} vs {gap}",
            model.min_gap
        );
        assert_eq!(model.prototypes[0].len(), 5);
        assert_eq!(model.prototypes[0][0].len(), 8);
    }

    #[test]
    fn wide_blocks_get_equidistant_prototypes() {
        let blocks = block_specs(&[(4, 4), (8, 6), (16, 2)]);
        let model = FeatureModel::generate(&blocks, 5, 0.2, 8).unwrap();
        let gap = target_gap(0.2, 12);
        for (b, protos) in model.prototypes.iter().enumerate().take(2) {
            for i in 0..5 {
                for j in i + 1..5 {
                    let d = protos[i]
                        .iter()
                        .zip(&protos[j])
                        .map(|(a, b)| f64::from(a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(
                        (d - gap).abs() < 1e-4,
                        "block {b} pair ({i},{j}): {d} vs {gap}"
                    );
                }
            }
        }
        assert!((model.min_gap - gap).abs() < 1e-4);
        assert_ne!(model, FeatureModel::generate(&blocks, 5, 0.2, 9).unwrap());
    }

    #[test]
    fn noiseless_single_texel_is_prototype() {
        let blocks = block_specs(&[(1, 3)]);
        let model = FeatureModel::generate(&blocks, 4, 0.0, 1).unwrap();
        let mask = SegmentationMask::filled(16, 16, 2);
        let out = render_blocks(&mask, &blocks, &model, 9).unwrap();
        assert_eq!(out[0], model.prototypes[0][2]);
    }

    #[test]
    fn profile_ladder_is_decreasing() {
        let p = ShapeProfile::ladder(5);
        assert_eq!(p.scales.len(), 5);
        assert!(p.scales[1..].windows(2).all(|w| w[0] > w[1]));
        assert!((p.scales[4] - 0.04).abs() < 1e-12);
        let q = ShapeProfile::permuted(5, 3);
        let mut a = q.scales.clone();
        let mut b = p.scales.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn boundary_counts() {
        let mask = SegmentationMask::new(2, 2, vec![0, 1, 0, 1]).unwrap();
        assert_eq!(boundary_length(&mask), 2);
        let stats = class_boundary_stats([&mask], 2);
        assert_eq!(stats, vec![(2, 2), (2, 2)]);
    }
}
