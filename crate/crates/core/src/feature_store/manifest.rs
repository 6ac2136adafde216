use std::collections::{BTreeMap, HashSet};
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    /// 0 is the coarsest stored block.
    pub index: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    /// Block file paths relative to the store root, in block order.
    pub blocks: Vec<String>,
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<String>,
    /// Free-form provenance, e.g. the latent seed an exporter used.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStoreManifest {
    pub format_version: u32,
    pub image_height: usize,
    pub image_width: usize,
    pub class_names: Vec<String>,
    pub blocks: Vec<BlockSpec>,
    pub images: Vec<ImageEntry>,
}

pub fn block_path(image_id: &str, block: usize) -> String {
    format!("images/{image_id}/block_{block}.hdgf")
}

pub fn mask_path(image_id: &str) -> String {
    format!("masks/{image_id}.pgm")
}

pub fn render_path(image_id: &str) -> String {
    format!("renders/{image_id}.ppm")
}

pub fn valid_image_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn check_relative(path: &str) -> Result<()> {
    let p = Path::new(path);
    let ok = !path.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)));
    if ok {
        Ok(())
    } else {
        Err(Error::Schema(format!(
            "store path {path:?} must be relative and stay inside the store"
        )))
    }
}

impl FeatureStoreManifest {
    /// Pixel feature dimension: the sum of block channel counts.
    pub fn feature_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.channels).sum()
    }

    /// Check every structural invariant that can be checked without
    /// touching block files.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                self.format_version
            )));
        }
        if self.image_height == 0 || self.image_width == 0 {
            return Err(Error::Schema("image dimensions must be positive".into()));
        }
        crate::annotations::ClassCatalog::new(self.class_names.clone())?;
        validate_blocks(&self.blocks, self.image_height, self.image_width)?;

        let mut seen = HashSet::new();
        for entry in &self.images {
            if !valid_image_id(&entry.image_id) {
                return Err(Error::Schema(format!(
                    "image id {:?} must be nonempty [A-Za-z0-9_-]",
                    entry.image_id
                )));
            }
            if !seen.insert(entry.image_id.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate image id {:?}",
                    entry.image_id
                )));
            }
            if entry.blocks.len() != self.blocks.len() {
                return Err(Error::Schema(format!(
                    "image {:?} lists {} block files for {} blocks",
                    entry.image_id,
                    entry.blocks.len(),
                    self.blocks.len()
                )));
            }
            for p in entry.blocks.iter().chain(&entry.mask).chain(&entry.render) {
                check_relative(p)?;
            }
        }
        Ok(())
    }
}

pub fn validate_blocks(
    blocks: &[BlockSpec],
    image_height: usize,
    image_width: usize,
) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::Schema("a store needs at least one block".into()));
    }
    let mut prev_height = 0;
    for (i, b) in blocks.iter().enumerate() {
        if b.index != i {
            return Err(Error::Schema(format!(
                "block at position {i} has index {}",
                b.index
            )));
        }
        if b.height == 0 || b.width == 0 || b.channels == 0 {
            return Err(Error::Schema(format!("block {i} has a zero dimension")));
        }
        if b.height < prev_height {
            return Err(Error::Schema(format!(
                "block heights must be non-decreasing, block {i} has {} after {prev_height}",
                b.height
            )));
        }
        if !image_height.is_multiple_of(b.height) || !image_width.is_multiple_of(b.width) {
            return Err(Error::Schema(format!(
                "block {i} ({}x{}) does not divide the {image_height}x{image_width} image",
                b.height, b.width
            )));
        }
        prev_height = b.height;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(index: usize, h: usize, c: usize) -> BlockSpec {
        BlockSpec {
            index,
            height: h,
            width: h,
            channels: c,
        }
    }

    fn manifest() -> FeatureStoreManifest {
        FeatureStoreManifest {
            format_version: 1,
            image_height: 4,
            image_width: 4,
            class_names: vec!["a".into(), "b".into()],
            blocks: vec![block(0, 2, 2), block(1, 4, 1)],
            images: vec![ImageEntry {
                image_id: "img-0".into(),
                blocks: vec![block_path("img-0", 0), block_path("img-0", 1)],
                mask: None,
                render: None,
                metadata: BTreeMap::new(),
            }],
        }
    }

    #[test]
    fn valid_manifest_and_dim() {
        let m = manifest();
        m.validate().unwrap();
        assert_eq!(m.feature_dim(), 3);
    }

    #[test]
    fn rejects_bad_ids_blocks_and_paths() {
        let mut m = manifest();
        m.images[0].image_id = "a/b".into();
        assert!(matches!(m.validate(), Err(Error::Schema(_))));

        let mut m = manifest();
        m.blocks = vec![block(0, 4, 1), block(1, 2, 1)];
        assert!(matches!(m.validate(), Err(Error::Schema(_))));

        let mut m = manifest();
        m.blocks[0].height = 3;
        assert!(matches!(m.validate(), Err(Error::Schema(_))));

        let mut m = manifest();
        m.images[0].blocks[0] = "../escape.hdgf".into();
        assert!(matches!(m.validate(), Err(Error::Schema(_))));

        let mut m = manifest();
        m.images.push(m.images[0].clone());
        assert!(matches!(m.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn metadata_is_optional_in_json() {
        let m = manifest();
        let json = serde_json::to_string(&m).unwrap();
        assert!(!json.contains("metadata"));
        let back: FeatureStoreManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
