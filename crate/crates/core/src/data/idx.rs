//! Big-endian IDX files (MNIST images and labels).

use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Equally sized grayscale sprites with values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpriteSet {
    pub rows: usize,
    pub cols: usize,
    pixels: Vec<f32>,
}

impl SpriteSet {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || pixels.is_empty() || pixels.len() % (rows * cols) != 0 {
            return Err(Error::config(format!(
                "{} pixels do not form whole {rows}x{cols} sprites",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invariant("sprite pixels must lie in [0,1]"));
        }
        Ok(SpriteSet { rows, cols, pixels })
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Row-major pixels of sprite `i`.
    pub fn sprite(&self, i: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..][..n]
    }
}

fn u32_at(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            Error::format(
                offset as u64,
                format!("truncated header: need 4 bytes, file has {}", bytes.len().saturating_sub(offset)),
            )
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = u32_at(bytes, 0)?;
    if magic != expected {
        return Err(Error::format(0, format!("bad IDX magic {magic:#010x}, expected {expected:#010x}")));
    }
    Ok(())
}

fn payload(bytes: &[u8], offset: usize, expected: usize) -> Result<&[u8]> {
    let actual = bytes.len() - offset;
    if actual != expected {
        let what = if actual < expected { "truncated payload" } else { "trailing bytes after payload" };
        return Err(Error::format(
            offset as u64,
            format!("{what}: expected {expected} bytes, found {actual}"),
        ));
    }
    Ok(&bytes[offset..])
}

/// Unsigned-byte 3-D image tensor; bytes are scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<SpriteSet> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = u32_at(bytes, 4)? as usize;
    let rows = u32_at(bytes, 8)? as usize;
    let cols = u32_at(bytes, 12)? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::format(4, format!("empty image tensor {count}x{rows}x{cols}")));
    }
    let data = payload(bytes, 16, count * rows * cols)?;
    SpriteSet::new(rows, cols, data.iter().map(|b| *b as f32 / 255.0).collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = u32_at(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

pub fn load_idx(path: &Path) -> Result<SpriteSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_idx_images(&bytes)
}
