//! Pixel-center aligned nearest and bilinear upsampling of channel-last
//! feature planes.
//!
//! Destination pixel `d` of a `dst`-sized axis maps to the continuous source
//! coordinate `(d + 0.5) * src / dst - 0.5`. Nearest rounds that coordinate
//! half-down and clamps; bilinear blends the two bracketing texels with edge
//! clamping.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ResampleMode {
    #[default]
    Nearest,
    Bilinear,
}

impl FromStr for ResampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResampleMode::Nearest),
            "bilinear" => Ok(ResampleMode::Bilinear),
            other => Err(Error::Config(format!(
                "unknown resample mode {other:?} (expected nearest|bilinear)"
            ))),
        }
    }
}

impl fmt::Display for ResampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResampleMode::Nearest => "nearest",
            ResampleMode::Bilinear => "bilinear",
        })
    }
}

pub fn source_coord(dst_index: usize, dst_size: usize, src_size: usize) -> f64 {
    (dst_index as f64 + 0.5) * src_size as f64 / dst_size as f64 - 0.5
}

/// Nearest source index, evaluated in exact integer arithmetic:
/// `ceil(source_coord - 0.5)` clamped to `[0, src_size)`.
///
/// Works for both up- and downsampling; the mask downsampler relies on that.
pub fn nearest_index(dst_index: usize, dst_size: usize, src_size: usize) -> usize {
    debug_assert!(dst_size > 0 && src_size > 0);
    let d = dst_index as i64;
    let dst = dst_size as i64;
    let src = src_size as i64;
    let num = (2 * d + 1) * src - 2 * dst;
    let den = 2 * dst;
    let ceil = -((-num).div_euclid(den));
    ceil.clamp(0, src - 1) as usize
}

/// The two source taps and the weight of the upper tap for one destination
/// index. The value is `(1 - w) * v[lo] + w * v[hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearTap {
    pub lo: usize,
    pub hi: usize,
    pub weight: f64,
}

pub fn linear_tap(dst_index: usize, dst_size: usize, src_size: usize) -> LinearTap {
    let x = source_coord(dst_index, dst_size, src_size);
    let x0 = x.floor();
    let weight = x - x0;
    let last = src_size as i64 - 1;
    let x0 = x0 as i64;
    LinearTap {
        lo: x0.clamp(0, last) as usize,
        hi: (x0 + 1).clamp(0, last) as usize,
        weight,
    }
}

/// Blend of four texels, evaluated in a fixed order so that every caller
/// produces bit-identical results.
#[inline]
pub fn blend(v00: f32, v01: f32, v10: f32, v11: f32, wy: f64, wx: f64) -> f32 {
    let top = (1.0 - wx) * f64::from(v00) + wx * f64::from(v01);
    let bottom = (1.0 - wx) * f64::from(v10) + wx * f64::from(v11);
    ((1.0 - wy) * top + wy * bottom) as f32
}

/// A borrowed `height × width × channels` channel-last plane.
#[derive(Debug, Clone, Copy)]
pub struct PlaneRef<'a> {
    pub data: &'a [f32],
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl<'a> PlaneRef<'a> {
    pub fn new(data: &'a [f32], height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "plane dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "plane {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            data,
            height,
            width,
            channels,
        })
    }

    #[inline]
    fn texel(&self, row: usize, col: usize) -> &'a [f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Write the resampled feature vector of destination pixel `(row, col)`
    /// of a `dst_h × dst_w` grid into `out`.
    pub fn sample_into(
        &self,
        row: usize,
        col: usize,
        dst_h: usize,
        dst_w: usize,
        mode: ResampleMode,
        out: &mut [f32],
    ) {
        self.sample_into_traced(row, col, dst_h, dst_w, mode, out, |_| {});
    }

    /// [`PlaneRef::sample_into`], reporting the linear index of every texel read.
    #[allow(clippy::too_many_arguments)]
    pub fn sample_into_traced(
        &self,
        row: usize,
        col: usize,
        dst_h: usize,
        dst_w: usize,
        mode: ResampleMode,
        out: &mut [f32],
        mut touch: impl FnMut(usize),
    ) {
        match mode {
            ResampleMode::Nearest => {
                let r = nearest_index(row, dst_h, self.height);
                let c = nearest_index(col, dst_w, self.width);
                touch(r * self.width + c);
                out.copy_from_slice(self.texel(r, c));
            }
            ResampleMode::Bilinear => {
                let ty = linear_tap(row, dst_h, self.height);
                let tx = linear_tap(col, dst_w, self.width);
                for (r, c) in [
                    (ty.lo, tx.lo),
                    (ty.lo, tx.hi),
                    (ty.hi, tx.lo),
                    (ty.hi, tx.hi),
                ] {
                    touch(r * self.width + c);
                }
                let t00 = self.texel(ty.lo, tx.lo);
                let t01 = self.texel(ty.lo, tx.hi);
                let t10 = self.texel(ty.hi, tx.lo);
                let t11 = self.texel(ty.hi, tx.hi);
                for (ch, o) in out.iter_mut().enumerate() {
                    *o = blend(t00[ch], t01[ch], t10[ch], t11[ch], ty.weight, tx.weight);
                }
            }
        }
    }
}

/// Upsample a whole plane to `dst_h × dst_w`.
pub fn upsample_block(
    plane: PlaneRef<'_>,
    dst_h: usize,
    dst_w: usize,
    mode: ResampleMode,
) -> Result<Vec<f32>> {
    if dst_h < plane.height || dst_w < plane.width {
        return Err(Error::Config(format!(
            "cannot downsample {}x{} to {dst_h}x{dst_w}",
            plane.height, plane.width
        )));
    }
    let c = plane.channels;
    let mut out = vec![0.0f32; dst_h * dst_w * c];
    for row in 0..dst_h {
        for col in 0..dst_w {
            let start = (row * dst_w + col) * c;
            plane.sample_into(row, col, dst_h, dst_w, mode, &mut out[start..start + c]);
        }
    }
    Ok(out)
}
