//! `.hdgf` block files: a fixed 64-byte little-endian header followed by
//! `H·W·C` f32 values, row-major and channel-last.
//!
//! ```text
//! 0..4   magic "HDGF"
//! 4..8   version  u32 = 1
//! 8..12  dtype    u32 = 0 (f32)
//! 12..16 channels u32
//! 16..20 height   u32
//! 20..24 width    u32
//! 24..64 zero
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"HDGF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub channels: u32,
    pub height: u32,
    pub width: u32,
}

impl BlockHeader {
    pub fn payload_len(&self) -> u64 {
        u64::from(self.height) * u64::from(self.width) * u64::from(self.channels) * 4
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.payload_len()
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(MAGIC);
        buf[4..8].copy_from_slice(&VERSION.to_le_bytes());
        buf[8..12].copy_from_slice(&DTYPE_F32.to_le_bytes());
        buf[12..16].copy_from_slice(&self.channels.to_le_bytes());
        buf[16..20].copy_from_slice(&self.height.to_le_bytes());
        buf[20..24].copy_from_slice(&self.width.to_le_bytes());
        buf
    }

    pub fn decode(buf: &[u8; HEADER_LEN]) -> Result<Self> {
        if &buf[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &buf[0..4])));
        }
        let word = |at: usize| u32::from_le_bytes(buf[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported block version {version}"
            )));
        }
        let dtype = word(8);
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype code {dtype}")));
        }
        if buf[24..].iter().any(|&b| b != 0) {
            return Err(Error::Format("nonzero header padding".into()));
        }
        Ok(Self {
            channels: word(12),
            height: word(16),
            width: word(20),
        })
    }
}

/// Read and decode the header of `path`. Returns it with the file length.
pub fn read_header(path: &Path) -> Result<(BlockHeader, u64)> {
    let mut file = File::open(path).at(path)?;
    let len = file.metadata().at(path)?.len();
    let mut buf = [0u8; HEADER_LEN];
    if len < HEADER_LEN as u64 {
        return Err(Error::Format(format!(
            "{}: {len} bytes is shorter than the block header",
            path.display()
        )));
    }
    file.read_exact(&mut buf).at(path)?;
    let header =
        BlockHeader::decode(&buf).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok((header, len))
}

/// Error unless a file of `len` bytes holds exactly `header`'s payload.
pub fn check_file_len(path: &Path, header: &BlockHeader, len: u64) -> Result<()> {
    if len != header.file_len() {
        return Err(Error::Format(format!(
            "{}: file is {len} bytes, header implies {}",
            path.display(),
            header.file_len()
        )));
    }
    Ok(())
}

pub fn write_block(path: &Path, header: BlockHeader, values: &[f32]) -> Result<()> {
    debug_assert_eq!(values.len() as u64 * 4, header.payload_len());
    let file = File::create(path).at(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&header.encode()).at(path)?;
    for v in values {
        w.write_all(&v.to_le_bytes()).at(path)?;
    }
    w.flush().at(path)
}
