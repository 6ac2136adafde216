//! Segmentation masks, the class catalog and dataset splits.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netpbm::{self, NetpbmKind, Raster};
use crate::rng;

pub const IGNORE_LABEL: u8 = 255;
pub const MAX_CLASSES: usize = 254;

/// Kidney compartment classes in reporting order.
pub const DEFAULT_CLASS_NAMES: [&str; 5] = [
    "Whitespace",
    "Cortical Tubulointerstitium",
    "Glomerulus",
    "Arteriole",
    "Artery",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() || names.len() > MAX_CLASSES {
            return Err(Error::Schema(format!(
                "class count must be in 1..={MAX_CLASSES}, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// The five-class catalog for `k == 5`, generic `class_<i>` names otherwise.
    pub fn with_len(k: usize) -> Result<Self> {
        if k == DEFAULT_CLASS_NAMES.len() {
            return Ok(Self::default());
        }
        Self::new((0..k).map(|i| format!("class_{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }
}

impl Default for ClassCatalog {
    fn default() -> Self {
        Self {
            names: DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Row-major `height × width` class labels; [`IGNORE_LABEL`] marks unscored pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl SegmentationMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, label: u8) {
        self.labels[row * self.width + col] = label;
    }

    pub fn validate(&self, catalog: &ClassCatalog) -> Result<()> {
        let k = catalog.len();
        if let Some(pos) = self
            .labels
            .iter()
            .position(|&l| l != IGNORE_LABEL && usize::from(l) >= k)
        {
            return Err(Error::Data(format!(
                "label {} at pixel ({}, {}) is not a class of a {k}-class catalog",
                self.labels[pos],
                pos / self.width,
                pos % self.width
            )));
        }
        Ok(())
    }

    pub fn scored_pixels(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE_LABEL).count()
    }
}

pub fn decode_mask(bytes: &[u8], catalog: &ClassCatalog) -> Result<SegmentationMask> {
    let raster = netpbm::decode(bytes, NetpbmKind::Gray)?;
    let mask = SegmentationMask::new(raster.height, raster.width, raster.samples)?;
    mask.validate(catalog)?;
    Ok(mask)
}

pub fn encode_mask(mask: &SegmentationMask) -> Vec<u8> {
    netpbm::encode(&Raster {
        kind: NetpbmKind::Gray,
        width: mask.width,
        height: mask.height,
        samples: mask.labels.clone(),
    })
}

pub fn read_mask(path: &Path, catalog: &ClassCatalog) -> Result<SegmentationMask> {
    let raster = netpbm::read(path, NetpbmKind::Gray)?;
    let mask = SegmentationMask::new(raster.height, raster.width, raster.samples)?;
    mask.validate(catalog)?;
    Ok(mask)
}

pub fn write_mask(mask: &SegmentationMask, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 16,
            val: 4,
            test: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train|val|test)"
            ))),
        }
    }
}

impl SplitAssignment {
    pub fn part(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }
}

/// Sort ids, shuffle them with the `split` stream of `seed`, then take prefixes.
pub fn split_dataset(
    image_ids: &[String],
    counts: SplitCounts,
    seed: u64,
) -> Result<SplitAssignment> {
    let needed = counts.train + counts.val + counts.test;
    if needed > image_ids.len() {
        return Err(Error::Config(format!(
            "split needs {needed} images, only {} available",
            image_ids.len()
        )));
    }
    let mut ids = image_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != image_ids.len() {
        return Err(Error::Data("duplicate image ids in split input".into()));
    }
    ids.shuffle(&mut rng::stream(seed, "split", 0));
    let mut rest = ids.into_iter();
    let mut take = |n: usize| rest.by_ref().take(n).collect::<Vec<_>>();
    Ok(SplitAssignment {
        train: take(counts.train),
        val: take(counts.val),
        test: take(counts.test),
    })
}
