//! Minimal binary netpbm (P5 greyscale, P6 RGB) codec, 8-bit only.

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetpbmKind {
    Gray,
    Rgb,
}

impl NetpbmKind {
    fn magic(self) -> &'static [u8; 2] {
        match self {
            NetpbmKind::Gray => b"P5",
            NetpbmKind::Rgb => b"P6",
        }
    }

    fn samples_per_pixel(self) -> usize {
        match self {
            NetpbmKind::Gray => 1,
            NetpbmKind::Rgb => 3,
        }
    }
}

/// Decoded 8-bit raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub kind: NetpbmKind,
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u8>,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.data.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.data.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.data.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("expected {what} in netpbm header")));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{what} does not fit in an integer")))
    }
}

pub fn decode(data: &[u8], expected: NetpbmKind) -> Result<Raster> {
    if data.len() < 2 || &data[..2] != expected.magic() {
        return Err(Error::Format(format!(
            "expected {} magic",
            String::from_utf8_lossy(expected.magic())
        )));
    }
    let mut cur = Cursor { data, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("degenerate size {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::Format(format!("maxval must be 255, got {maxval}")));
    }
    // exactly one whitespace byte separates header from raster
    match data.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let expected_len = width * height * expected.samples_per_pixel();
    let raster = &data[cur.pos..];
    if raster.len() != expected_len {
        return Err(Error::Format(format!(
            "raster holds {} bytes, header implies {expected_len}",
            raster.len()
        )));
    }
    Ok(Raster {
        kind: expected,
        width,
        height,
        samples: raster.to_vec(),
    })
}

pub fn encode(raster: &Raster) -> Vec<u8> {
    let header = format!(
        "{}\n{} {}\n255\n",
        String::from_utf8_lossy(raster.kind.magic()),
        raster.width,
        raster.height
    );
    let mut out = Vec::with_capacity(header.len() + raster.samples.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&raster.samples);
    out
}

pub fn read(path: &Path, kind: NetpbmKind) -> Result<Raster> {
    let data = fs::read(path).at(path)?;
    decode(&data, kind)
}

pub fn write(path: &Path, raster: &Raster) -> Result<()> {
    fs::write(path, encode(raster)).at(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_comments_are_skipped() {
        let mut data = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        data.extend_from_slice(&[9, 10]);
        let r = decode(&data, NetpbmKind::Gray).unwrap();
        assert_eq!((r.width, r.height), (2, 1));
        assert_eq!(r.samples, vec![9, 10]);
    }

    #[test]
    fn wrong_magic_and_truncation_are_format_errors() {
        assert!(matches!(
            decode(b"P2\n1 1\n255\n\x00", NetpbmKind::Gray),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode(b"P5\n2 2\n255\n\x00", NetpbmKind::Gray),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode(b"P5\n1 1\n65535\n\x00\x00", NetpbmKind::Gray),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode(b"P5\n1", NetpbmKind::Gray),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn rgb_roundtrip() {
        let r = Raster {
            kind: NetpbmKind::Rgb,
            width: 2,
            height: 1,
            samples: vec![1, 2, 3, 4, 5, 6],
        };
        let bytes = encode(&r);
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(decode(&bytes, NetpbmKind::Rgb).unwrap(), r);
    }
}
