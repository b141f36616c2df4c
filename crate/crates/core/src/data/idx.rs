//! IDX digit ingestion (the MNIST file format).
//!
//! Images carry big-endian magic `0x00000803` and labels `0x00000801`.
//! Pixels are normalized to `[0, 1]` so the digits can be used directly as
//! sprite glyphs.

use std::io::Read;
use std::path::Path;

use super::Glyph;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format("idx file is truncated".into()))
}

/// Loads an IDX image/label file pair as `(glyphs, labels)`.
pub fn load_idx_digits(images_path: &Path, labels_path: &Path) -> Result<(Vec<Glyph>, Vec<u8>)> {
    let mut images = Vec::new();
    std::fs::File::open(images_path)?.read_to_end(&mut images)?;
    let mut labels = Vec::new();
    std::fs::File::open(labels_path)?.read_to_end(&mut labels)?;

    if read_u32_be(&images, 0)? != IMAGES_MAGIC {
        return Err(Error::Format("bad idx image magic".into()));
    }
    if read_u32_be(&labels, 0)? != LABELS_MAGIC {
        return Err(Error::Format("bad idx label magic".into()));
    }
    let n = read_u32_be(&images, 4)? as usize;
    let rows = read_u32_be(&images, 8)? as usize;
    let cols = read_u32_be(&images, 12)? as usize;
    let n_labels = read_u32_be(&labels, 4)? as usize;
    if n != n_labels {
        return Err(Error::Format(format!(
            "idx files disagree: {n} images vs {n_labels} labels"
        )));
    }
    let pixels = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("idx dimensions overflow".into()))?;
    if images.len() != 16 + pixels {
        return Err(Error::Format("idx image payload length mismatch".into()));
    }
    if labels.len() != 8 + n {
        return Err(Error::Format("idx label payload length mismatch".into()));
    }

    let glyphs = images[16..]
        .chunks_exact(rows * cols)
        .map(|chunk| Glyph {
            height: rows,
            width: cols,
            data: chunk.iter().map(|&b| b as f32 / 255.0).collect(),
        })
        .collect();
    Ok((glyphs, labels[8..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx(dir: &Path, n: u32, rows: u32, cols: u32, n_labels: u32) -> (std::path::PathBuf, std::path::PathBuf) {
        let images = dir.join("images.idx");
        let labels = dir.join("labels.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&n.to_be_bytes());
        img.extend_from_slice(&rows.to_be_bytes());
        img.extend_from_slice(&cols.to_be_bytes());
        for i in 0..(n * rows * cols) {
            img.push((i % 256) as u8);
        }
        std::fs::write(&images, img).unwrap();
        let mut lab = Vec::new();
        lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&n_labels.to_be_bytes());
        lab.extend(std::iter::repeat(7u8).take(n_labels as usize));
        std::fs::write(&labels, lab).unwrap();
        (images, labels)
    }

    #[test]
    fn header_fields_drive_glyph_count_and_shape() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx(dir.path(), 3, 4, 5, 3);
        let (glyphs, labs) = load_idx_digits(&images, &labels).unwrap();
        assert_eq!(glyphs.len(), 3);
        assert_eq!(labs, vec![7, 7, 7]);
        assert_eq!((glyphs[0].height, glyphs[0].width), (4, 5));
    }

    #[test]
    fn pixel_255_normalizes_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx(dir.path(), 2, 16, 16, 2);
        let (glyphs, _) = load_idx_digits(&images, &labels).unwrap();
        // byte value 255 appears at flat index 255 of the stream
        assert_eq!(glyphs[0].data[255], 1.0);
        assert_eq!(glyphs[0].data[0], 0.0);
    }

    #[test]
    fn count_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx(dir.path(), 3, 4, 4, 2);
        assert!(matches!(load_idx_digits(&images, &labels), Err(Error::Format(_))));
    }

    #[test]
    fn magic_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx(dir.path(), 1, 2, 2, 1);
        let mut bytes = std::fs::read(&images).unwrap();
        bytes[3] = 0x01;
        std::fs::write(&images, bytes).unwrap();
        assert!(matches!(load_idx_digits(&images, &labels), Err(Error::Format(_))));
    }
}
