//! IDX files as distributed for MNIST / FashionMNIST (big-endian,
//! magic-prefixed, unsigned byte payloads).

use std::path::Path;

use ndarray::Array2;

use super::LabeledDataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn ingest(path: &Path, offset: u64, reason: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        offset,
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| ingest(path, offset as u64, "truncated header"))
}

/// Returns `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(ingest(path, 0, format!("bad image magic 0x{magic:08x}")));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let need = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| ingest(path, 4, "dimension overflow"))?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(ingest(
            path,
            16 + payload.len() as u64,
            format!("truncated: expected {need} pixel bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(ingest(path, 16 + need as u64, "trailing bytes after last image"));
    }
    Ok((n, rows, cols, payload.to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(ingest(path, 0, format!("bad label magic 0x{magic:08x}")));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(ingest(
            path,
            8 + payload.len().min(n) as u64,
            format!("expected {n} labels, found {}", payload.len()),
        ));
    }
    Ok(payload.to_vec())
}

/// Images flattened to `rows·cols` features scaled by 1/255, ten classes.
pub fn load_idx(images_path: &Path, labels_path: &Path, name: &str) -> Result<LabeledDataset> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(ingest(
            labels_path,
            4,
            format!("{} labels but {} images in {}", labels.len(), n, images_path.display()),
        ));
    }
    if let Some(pos) = labels.iter().position(|&l| l >= 10) {
        return Err(ingest(labels_path, 8 + pos as u64, format!("label {} out of range", labels[pos])));
    }
    let d = rows * cols;
    let features = Array2::from_shape_vec((n, d), pixels.iter().map(|&p| f64::from(p) / 255.0).collect())
        .map_err(|e| ingest(images_path, 16, e.to_string()))?;
    LabeledDataset::new(name, features, labels.into_iter().map(usize::from).collect(), 10, None)
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
