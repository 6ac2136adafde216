//! Multi-resolution feature stores on disk.
//!
//! A store is a directory holding `manifest.json`, one `.hdgf` file per
//! (image, block) under `images/<id>/block_<k>.hdgf`, and optionally masks
//! (`masks/<id>.pgm`) and RGB renderings (`renders/<id>.ppm`). Blocks are kept
//! at their native resolution; reads resample them to image coordinates on the
//! fly, touching only the texels a request needs. Block files are memory-mapped
//! on first access and stay mapped for the lifetime of the handle.

pub mod accounting;
pub mod format;
pub mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use memmap2::Mmap;

pub use accounting::{AccessAccounting, AccessStats, LiveBytes, PAGE_SIZE};
pub use format::BlockHeader;
pub use manifest::{BlockSpec, FeatureStoreManifest, ImageEntry};

use crate::annotations::{self, ClassCatalog, SegmentationMask};
use crate::error::{Error, IoContext, Result};
use crate::netpbm::{self, NetpbmKind, Raster};
use crate::resampler::{PlaneRef, ResampleMode};

#[cfg(not(target_endian = "little"))]
compile_error!("block payloads are mapped in place and require a little-endian target");

/// Geometry and classes shared by every image of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreSpec {
    pub image_height: usize,
    pub image_width: usize,
    pub class_names: Vec<String>,
    pub blocks: Vec<BlockSpec>,
}

/// Everything written for one image by [`create_store`].
#[derive(Debug, Clone, Default)]
pub struct ImageData {
    pub image_id: String,
    /// One channel-last array per block, in block order.
    pub blocks: Vec<Vec<f32>>,
    pub mask: Option<SegmentationMask>,
    pub render: Option<Raster>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// A rectangle of image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl PixelRect {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            row: 0,
            col: 0,
            height,
            width,
        }
    }
}

/// Write a new store to `out_dir`, which must be absent or empty, and open it.
pub fn create_store(
    spec: &StoreSpec,
    images: &[ImageData],
    out_dir: &Path,
) -> Result<FeatureStore> {
    let catalog = ClassCatalog::new(spec.class_names.clone())?;
    let manifest = FeatureStoreManifest {
        format_version: manifest::FORMAT_VERSION,
        image_height: spec.image_height,
        image_width: spec.image_width,
        class_names: spec.class_names.clone(),
        blocks: spec.blocks.clone(),
        images: images
            .iter()
            .map(|img| ImageEntry {
                image_id: img.image_id.clone(),
                blocks: (0..spec.blocks.len())
                    .map(|k| manifest::block_path(&img.image_id, k))
                    .collect(),
                mask: img
                    .mask
                    .as_ref()
                    .map(|_| manifest::mask_path(&img.image_id)),
                render: img
                    .render
                    .as_ref()
                    .map(|_| manifest::render_path(&img.image_id)),
                metadata: img.metadata.clone(),
            })
            .collect(),
    };
    manifest.validate()?;

    for img in images {
        if img.blocks.len() != spec.blocks.len() {
            return Err(Error::Schema(format!(
                "image {:?} supplies {} blocks, store has {}",
                img.image_id,
                img.blocks.len(),
                spec.blocks.len()
            )));
        }
        for (b, values) in spec.blocks.iter().zip(&img.blocks) {
            let expected = b.height * b.width * b.channels;
            if values.len() != expected {
                return Err(Error::Schema(format!(
                    "image {:?} block {}: expected {expected} values ({}x{}x{}), got {}",
                    img.image_id,
                    b.index,
                    b.height,
                    b.width,
                    b.channels,
                    values.len()
                )));
            }
            if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "image {:?} block {}: non-finite value at offset {pos}",
                    img.image_id, b.index
                )));
            }
        }
        if let Some(mask) = &img.mask {
            check_mask_size(mask, spec.image_height, spec.image_width, &img.image_id)?;
            mask.validate(&catalog)?;
        }
        if let Some(render) = &img.render {
            if render.kind != NetpbmKind::Rgb
                || render.height != spec.image_height
                || render.width != spec.image_width
            {
                return Err(Error::Schema(format!(
                    "render of {:?} must be a {}x{} RGB raster",
                    img.image_id, spec.image_height, spec.image_width
                )));
            }
        }
    }

    prepare_empty_dir(out_dir)?;
    for (img, entry) in images.iter().zip(&manifest.images) {
        fs::create_dir_all(out_dir.join("images").join(&img.image_id)).at(out_dir)?;
        for ((b, values), rel) in spec.blocks.iter().zip(&img.blocks).zip(&entry.blocks) {
            let header = BlockHeader {
                channels: dim_u32(b.channels)?,
                height: dim_u32(b.height)?,
                width: dim_u32(b.width)?,
            };
            format::write_block(&out_dir.join(rel), header, values)?;
        }
        if let (Some(mask), Some(rel)) = (&img.mask, &entry.mask) {
            let path = out_dir.join(rel);
            fs::create_dir_all(path.parent().unwrap()).at(out_dir)?;
            annotations::write_mask(mask, &path)?;
        }
        if let (Some(render), Some(rel)) = (&img.render, &entry.render) {
            let path = out_dir.join(rel);
            fs::create_dir_all(path.parent().unwrap()).at(out_dir)?;
            netpbm::write(&path, render)?;
        }
    }
    let manifest_path = out_dir.join(manifest::MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("cannot serialize manifest: {e}")))?;
    fs::write(&manifest_path, json + "\n").at(&manifest_path)?;

    FeatureStore::open(out_dir)
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Schema(format!("dimension {v} exceeds u32")))
}

fn check_mask_size(mask: &SegmentationMask, height: usize, width: usize, id: &str) -> Result<()> {
    if mask.height != height || mask.width != width {
        return Err(Error::Schema(format!(
            "mask of {id:?} is {}x{}, store images are {height}x{width}",
            mask.height, mask.width
        )));
    }
    Ok(())
}

fn prepare_empty_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).at(dir)?;
        if entries.next().is_some() {
            return Err(Error::io(
                dir,
                std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    "output directory is not empty",
                ),
            ));
        }
    } else {
        fs::create_dir_all(dir).at(dir)?;
    }
    Ok(())
}

/// One block of one image, mapped on first use.
#[derive(Debug)]
pub struct FeatureVolume {
    spec: BlockSpec,
    path: PathBuf,
    map: OnceLock<Mmap>,
    init: Mutex<()>,
}

impl FeatureVolume {
    pub fn spec(&self) -> BlockSpec {
        self.spec
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_mapped(&self) -> bool {
        self.map.get().is_some()
    }

    fn mapping(&self, accounting: &AccessAccounting) -> Result<&Mmap> {
        if let Some(m) = self.map.get() {
            return Ok(m);
        }
        let _guard = self.init.lock().unwrap();
        if let Some(m) = self.map.get() {
            return Ok(m);
        }
        let file = File::open(&self.path).at(&self.path)?;
        let expected = format::HEADER_LEN as u64
            + (self.spec.height * self.spec.width * self.spec.channels) as u64 * 4;
        let len = file.metadata().at(&self.path)?.len();
        if len != expected {
            return Err(Error::Format(format!(
                "{}: file changed size to {len} bytes since open, expected {expected}",
                self.path.display()
            )));
        }
        // SAFETY: stores are immutable after creation; nothing writes to a
        // block file while a handle maps it.
        let map = unsafe { Mmap::map(&file) }.at(&self.path)?;
        accounting.record_map();
        let _ = self.map.set(map);
        Ok(self.map.get().unwrap())
    }

    fn plane<'a>(&'a self, accounting: &AccessAccounting) -> Result<PlaneRef<'a>> {
        let map = self.mapping(accounting)?;
        let payload: &[f32] =
            bytemuck::try_cast_slice(&map[format::HEADER_LEN..]).map_err(|e| {
                Error::Format(format!(
                    "{}: payload not f32-aligned: {e}",
                    self.path.display()
                ))
            })?;
        PlaneRef::new(
            payload,
            self.spec.height,
            self.spec.width,
            self.spec.channels,
        )
    }
}

/// Read-only handle on an opened store. Shareable across threads.
#[derive(Debug)]
pub struct FeatureStore {
    root: PathBuf,
    manifest: FeatureStoreManifest,
    catalog: ClassCatalog,
    index: HashMap<String, usize>,
    volumes: Vec<Vec<FeatureVolume>>,
    accounting: Arc<AccessAccounting>,
}

impl FeatureStore {
    /// Open a store, checking every block header against the manifest
    /// without reading any payload.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest_path = root.join(manifest::MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).at(&manifest_path)?;
        let manifest: FeatureStoreManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
        manifest.validate()?;
        let catalog = ClassCatalog::new(manifest.class_names.clone())?;

        let mut index = HashMap::new();
        let mut volumes = Vec::with_capacity(manifest.images.len());
        for (i, entry) in manifest.images.iter().enumerate() {
            index.insert(entry.image_id.clone(), i);
            let mut per_image = Vec::with_capacity(manifest.blocks.len());
            for (spec, rel) in manifest.blocks.iter().zip(&entry.blocks) {
                let path = root.join(rel);
                let (header, len) = format::read_header(&path)?;
                let matches = header.channels as usize == spec.channels
                    && header.height as usize == spec.height
                    && header.width as usize == spec.width;
                if !matches {
                    return Err(Error::Schema(format!(
                        "{}: header says {}x{}x{}, manifest block {} is {}x{}x{}",
                        path.display(),
                        header.height,
                        header.width,
                        header.channels,
                        spec.index,
                        spec.height,
                        spec.width,
                        spec.channels
                    )));
                }
                format::check_file_len(&path, &header, len)?;
                per_image.push(FeatureVolume {
                    spec: *spec,
                    path,
                    map: OnceLock::new(),
                    init: Mutex::new(()),
                });
            }
            volumes.push(per_image);
        }

        Ok(Self {
            root,
            manifest,
            catalog,
            index,
            volumes,
            accounting: Arc::new(AccessAccounting::default()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &FeatureStoreManifest {
        &self.manifest
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn feature_dim(&self) -> usize {
        self.manifest.feature_dim()
    }

    pub fn image_height(&self) -> usize {
        self.manifest.image_height
    }

    pub fn image_width(&self) -> usize {
        self.manifest.image_width
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.manifest.blocks
    }

    /// Image ids in manifest order.
    pub fn image_ids(&self) -> Vec<String> {
        self.manifest
            .images
            .iter()
            .map(|e| e.image_id.clone())
            .collect()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.index.contains_key(image_id)
    }

    pub fn accounting(&self) -> &AccessAccounting {
        &self.accounting
    }

    pub fn stats(&self) -> AccessStats {
        self.accounting.stats()
    }

    pub fn volumes(&self, image_id: &str) -> Result<&[FeatureVolume]> {
        Ok(&self.volumes[self.image_index(image_id)?])
    }

    fn image_index(&self, image_id: &str) -> Result<usize> {
        self.index
            .get(image_id)
            .copied()
            .ok_or_else(|| Error::Key(format!("no image {image_id:?} in store")))
    }

    fn entry(&self, image_id: &str) -> Result<&ImageEntry> {
        Ok(&self.manifest.images[self.image_index(image_id)?])
    }

    fn planes(&self, image: usize) -> Result<Vec<PlaneRef<'_>>> {
        self.volumes[image]
            .iter()
            .map(|v| v.plane(&self.accounting))
            .collect()
    }

    /// Whole native-resolution payload of block `block` of `image_id`,
    /// channel-last row-major. Counts as a read of every payload page.
    pub fn block_values(&self, image_id: &str, block: usize) -> Result<&[f32]> {
        let volume = self.volumes(image_id)?.get(block).ok_or_else(|| {
            Error::Bounds(format!(
                "block {block} outside {} blocks",
                self.blocks().len()
            ))
        })?;
        let plane = volume.plane(&self.accounting)?;
        self.accounting.record_feature_read(image_id);
        self.accounting
            .record_read(format::HEADER_LEN as u64, (plane.data.len() * 4) as u64);
        Ok(plane.data)
    }

    fn check_pixel(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.image_height() || col >= self.image_width() {
            return Err(Error::Bounds(format!(
                "pixel ({row}, {col}) outside {}x{} image",
                self.image_height(),
                self.image_width()
            )));
        }
        Ok(())
    }

    /// Write the resampled feature vector of every pixel into consecutive
    /// `feature_dim()`-sized slots of `out`.
    fn gather(
        &self,
        planes: &[PlaneRef<'_>],
        pixels: impl Iterator<Item = (usize, usize)>,
        mode: ResampleMode,
        out: &mut [f32],
    ) {
        let (h, w) = (self.image_height(), self.image_width());
        let d = self.feature_dim();
        let acct = &*self.accounting;
        for ((row, col), slot) in pixels.zip(out.chunks_exact_mut(d)) {
            let mut offset = 0;
            for plane in planes {
                let c = plane.channels;
                let texel_bytes = (c * 4) as u64;
                plane.sample_into_traced(
                    row,
                    col,
                    h,
                    w,
                    mode,
                    &mut slot[offset..offset + c],
                    |t| {
                        acct.record_read(
                            format::HEADER_LEN as u64 + t as u64 * texel_bytes,
                            texel_bytes,
                        )
                    },
                );
                offset += c;
            }
        }
    }

    /// Feature vectors (row-major, `pixels.len() × feature_dim()`) for the
    /// given `(row, col)` pixels of one image.
    pub fn fetch_pixel_features(
        &self,
        image_id: &str,
        pixels: &[(usize, usize)],
        mode: ResampleMode,
    ) -> Result<Vec<f32>> {
        let mut out = vec![0.0; pixels.len() * self.feature_dim()];
        self.fetch_into(image_id, pixels, mode, &mut out)?;
        Ok(out)
    }

    pub fn fetch_into(
        &self,
        image_id: &str,
        pixels: &[(usize, usize)],
        mode: ResampleMode,
        out: &mut [f32],
    ) -> Result<()> {
        let image = self.image_index(image_id)?;
        for &(r, c) in pixels {
            self.check_pixel(r, c)?;
        }
        if out.len() != pixels.len() * self.feature_dim() {
            return Err(Error::Shape(format!(
                "output holds {} values, need {}",
                out.len(),
                pixels.len() * self.feature_dim()
            )));
        }
        let planes = self.planes(image)?;
        self.accounting.record_feature_read(image_id);
        self.gather(&planes, pixels.iter().copied(), mode, out);
        Ok(())
    }

    /// Horizontal bands of `rect`, top to bottom, each holding as many full
    /// rows as fit in `chunk_budget_bytes` of f32 features.
    pub fn stream_region_features(
        &self,
        image_id: &str,
        rect: PixelRect,
        mode: ResampleMode,
        chunk_budget_bytes: u64,
    ) -> Result<RegionStream<'_>> {
        let image = self.image_index(image_id)?;
        if rect.height == 0 || rect.width == 0 {
            return Err(Error::Bounds("empty region".into()));
        }
        self.check_pixel(rect.row + rect.height - 1, rect.col + rect.width - 1)?;
        let row_bytes = (self.feature_dim() * rect.width * 4) as u64;
        if chunk_budget_bytes < row_bytes {
            return Err(Error::Config(format!(
                "chunk budget of {chunk_budget_bytes} bytes is below one {}-pixel row ({row_bytes} bytes)",
                rect.width
            )));
        }
        let rows_per_band = ((chunk_budget_bytes / row_bytes) as usize).min(rect.height);
        let planes = self.planes(image)?;
        self.accounting.record_feature_read(image_id);
        Ok(RegionStream {
            store: self,
            planes,
            rect,
            mode,
            rows_per_band,
            next_row: rect.row,
        })
    }

    pub fn has_mask(&self, image_id: &str) -> bool {
        self.entry(image_id).is_ok_and(|e| e.mask.is_some())
    }

    /// Read and validate the mask of `image_id`. Every call is logged.
    pub fn read_mask(&self, image_id: &str) -> Result<SegmentationMask> {
        let entry = self.entry(image_id)?;
        let rel = entry
            .mask
            .as_ref()
            .ok_or_else(|| Error::Data(format!("image {image_id:?} has no mask")))?;
        self.accounting.record_mask_read(image_id);
        let mask = annotations::read_mask(&self.root.join(rel), &self.catalog)?;
        check_mask_size(&mask, self.image_height(), self.image_width(), image_id)?;
        Ok(mask)
    }

    pub fn render_path(&self, image_id: &str) -> Result<Option<PathBuf>> {
        Ok(self
            .entry(image_id)?
            .render
            .as_ref()
            .map(|r| self.root.join(r)))
    }

    pub fn read_render(&self, image_id: &str) -> Result<Option<Raster>> {
        match self.render_path(image_id)? {
            None => Ok(None),
            Some(path) => {
                let r = netpbm::read(&path, NetpbmKind::Rgb)?;
                if r.height != self.image_height() || r.width != self.image_width() {
                    return Err(Error::Schema(format!(
                        "render of {image_id:?} is {}x{}, store images are {}x{}",
                        r.height,
                        r.width,
                        self.image_height(),
                        self.image_width()
                    )));
                }
                Ok(Some(r))
            }
        }
    }
}

/// Band of consecutive full-width rows produced by [`RegionStream`].
#[derive(Debug)]
pub struct FeatureChunk {
    pub row_start: usize,
    pub rows: usize,
    pub col_start: usize,
    pub width: usize,
    pub dim: usize,
    data: Vec<f32>,
    _live: LiveBytes,
}

impl FeatureChunk {
    pub fn pixel_count(&self) -> usize {
        self.rows * self.width
    }

    /// `pixel_count() × dim` features, row-major over the band's pixels.
    pub fn features(&self) -> &[f32] {
        &self.data
    }
}

pub struct RegionStream<'a> {
    store: &'a FeatureStore,
    planes: Vec<PlaneRef<'a>>,
    rect: PixelRect,
    mode: ResampleMode,
    rows_per_band: usize,
    next_row: usize,
}

impl RegionStream<'_> {
    pub fn rows_per_band(&self) -> usize {
        self.rows_per_band
    }
}

impl Iterator for RegionStream<'_> {
    type Item = FeatureChunk;

    fn next(&mut self) -> Option<FeatureChunk> {
        let end = self.rect.row + self.rect.height;
        if self.next_row >= end {
            return None;
        }
        let rows = self.rows_per_band.min(end - self.next_row);
        let dim = self.store.feature_dim();
        let n = rows * self.rect.width;
        let live = LiveBytes::acquire(&self.store.accounting, (n * dim * 4) as u64);
        let mut data = vec![0.0f32; n * dim];
        let (row0, col0, width) = (self.next_row, self.rect.col, self.rect.width);
        let pixels = (row0..row0 + rows).flat_map(|r| (col0..col0 + width).map(move |c| (r, c)));
        self.store
            .gather(&self.planes, pixels, self.mode, &mut data);
        self.next_row += rows;
        Some(FeatureChunk {
            row_start: row0,
            rows,
            col_start: col0,
            width,
            dim,
            data,
            _live: live,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub images: usize,
    pub blocks: usize,
    pub feature_dim: usize,
    pub masks: usize,
    pub renders: usize,
    pub payload_bytes: u64,
}

/// Full conformance check: headers, every payload value finite, masks and
/// renders readable and sized to the store.
pub fn validate_store(path: &Path) -> Result<ValidationReport> {
    let store = FeatureStore::open(path)?;
    let mut report = ValidationReport {
        images: store.manifest.images.len(),
        blocks: store.manifest.blocks.len(),
        feature_dim: store.feature_dim(),
        ..Default::default()
    };
    for (entry, vols) in store.manifest.images.iter().zip(&store.volumes) {
        for vol in vols {
            let plane = vol.plane(&store.accounting)?;
            if let Some(pos) = plane.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "{}: non-finite value at offset {pos}",
                    vol.path.display()
                )));
            }
            report.payload_bytes += plane.data.len() as u64 * 4;
        }
        if entry.mask.is_some() {
            store.read_mask(&entry.image_id)?;
            report.masks += 1;
        }
        if store.read_render(&entry.image_id)?.is_some() {
            report.renders += 1;
        }
    }
    Ok(report)
}
