//! IDX files as distributed with MNIST: big-endian header, unsigned bytes.

use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

fn check_body(bytes: &[u8], header: usize, expected: usize, what: &str) -> Result<()> {
    let body = bytes.len() - header;
    if body < expected {
        return Err(Error::Format(format!(
            "{what}: truncated, expected {expected} data bytes, found {body}"
        )));
    }
    if body > expected {
        return Err(Error::Format(format!(
            "{what}: {} trailing bytes after {expected} data bytes",
            body - expected
        )));
    }
    Ok(())
}

/// Loads an image file (magic `0x00000803`) and its label file
/// (magic `0x00000801`). Pixels are flattened row-major and divided by 255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_file(images_path.as_ref())?;
    let labels = read_file(labels_path.as_ref())?;

    let magic = be_u32(&images, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(&images, 4, "images")? as usize;
    let rows = be_u32(&images, 8, "images")? as usize;
    let cols = be_u32(&images, 12, "images")? as usize;
    let dim = rows * cols;
    check_body(&images, 16, count * dim, "images")?;

    let magic = be_u32(&labels, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let label_count = be_u32(&labels, 4, "labels")? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "image count {count} does not match label count {label_count}"
        )));
    }
    check_body(&labels, 8, count, "labels")?;
    if count == 0 {
        return Err(Error::Format("files contain no examples".into()));
    }

    let features = Array2::from_shape_vec((count, dim), images[16..].iter().map(|&b| b as f64 / 255.0).collect())
        .expect("size checked");
    let labels: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut ds = Dataset::new(features, labels, num_classes)?;
    ds.feature_names = (0..dim).map(|j| format!("px{j}")).collect();
    Ok(ds)
}

/// Writes an image file of `pixels.len() / (rows*cols)` images.
pub fn write_idx_images(path: impl AsRef<Path>, rows: u32, cols: u32, pixels: &[u8]) -> Result<()> {
    let per = (rows * cols) as usize;
    if per == 0 || pixels.len() % per != 0 {
        return Err(Error::Dimension("pixel buffer is not a whole number of images".into()));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&((pixels.len() / per) as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    out.extend_from_slice(pixels);
    std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_images() {
        let dir = tempfile::tempdir().unwrap();
        let mut pixels = vec![0u8; 2 * 784];
        pixels[0] = 255;
        pixels[784 + 783] = 51;
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx_images(&ip, 28, 28, &pixels).unwrap();
        write_idx_labels(&lp, &[3, 7]).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.num_classes), (2, 784, 8));
        assert_eq!(ds.features[[0, 0]], 1.0);
        assert!((ds.features[[1, 783]] - 0.2).abs() < 1e-15);
        assert!(ds.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn count_mismatch_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx_images(&ip, 2, 2, &[0; 12]).unwrap();
        write_idx_labels(&lp, &[0, 1]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format(_))));
        // labels file passed as images
        assert!(matches!(load_idx(&lp, &lp), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_body() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx_images(&ip, 2, 2, &[0; 8]).unwrap();
        write_idx_labels(&lp, &[0, 1]).unwrap();
        let mut bytes = std::fs::read(&ip).unwrap();
        bytes.truncate(bytes.len() - 1);
        std::fs::write(&ip, bytes).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format(_))));
    }
}
