//! IDX (MNIST-style) image and label files.
//!
//! Both files start with a big-endian magic: `0x00000803` for `u8` images
//! of rank 3 and `0x00000801` for `u8` labels of rank 1, followed by one
//! big-endian `u32` per dimension and the raw bytes.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses one IDX buffer, returning its dims and payload.
pub fn parse_idx<'a>(bytes: &'a [u8], expected_magic: u32, what: &str) -> Result<(Vec<usize>, &'a [u8])> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != expected_magic {
        return Err(Error::Format(format!(
            "{what}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )));
    }
    let rank = (magic & 0xff) as usize;
    let dims: Vec<usize> = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i, what).map(|d| d as usize))
        .collect::<Result<_>>()?;
    let start = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let payload = bytes.get(start..start + len).ok_or_else(|| {
        Error::Format(format!(
            "{what}: payload truncated, expected {len} bytes, found {}",
            bytes.len().saturating_sub(start)
        ))
    })?;
    Ok((dims, payload))
}

/// Loads an IDX image/label pair. Pixels are scaled to `[0, 1]` and each
/// image becomes an `[h, w, 1]` sample.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    idx_dataset(&images, &labels)
}

pub(crate) fn idx_dataset(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (idims, pixels) = parse_idx(images, IMAGES_MAGIC, "images")?;
    let (ldims, raw_labels) = parse_idx(labels, LABELS_MAGIC, "labels")?;
    if idims[0] != ldims[0] {
        return Err(Error::Format(format!("{} images but {} labels", idims[0], ldims[0])));
    }
    if idims.contains(&0) {
        return Err(Error::Format("images file has an empty dimension".into()));
    }
    let (n, h, w) = (idims[0], idims[1], idims[2]);
    let features = Tensor::new(vec![n, h * w], pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| usize::from(l)).collect();
    let n_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(
        features,
        labels,
        n_classes,
        vec![h, w, 1],
        rng::derive_seed(0, "idx-split"),
    )
}

pub fn encode_idx_images(n: usize, height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, height, width] {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scales_pixels() {
        let d = idx_dataset(&encode_idx_images(1, 2, 2, &[0, 255, 0, 255]), &encode_idx_labels(&[3])).unwrap();
        assert_eq!(d.features.data(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(d.sample_shape, vec![2, 2, 1]);
        assert_eq!(d.n_classes, 4);
    }

    #[test]
    fn wrong_magic_is_named() {
        let mut img = encode_idx_images(1, 2, 2, &[0; 4]);
        img[3] = 0x02;
        let msg = idx_dataset(&img, &encode_idx_labels(&[0])).unwrap_err().to_string();
        assert!(msg.contains("0x00000802"), "{msg}");
    }

    #[test]
    fn count_mismatch_and_truncation() {
        let img = encode_idx_images(2, 2, 2, &[0; 8]);
        assert!(matches!(
            idx_dataset(&img, &encode_idx_labels(&[0])),
            Err(Error::Format(_))
        ));
        let short = encode_idx_images(2, 2, 2, &[0; 5]);
        assert!(matches!(
            idx_dataset(&short, &encode_idx_labels(&[0, 1])),
            Err(Error::Format(_))
        ));
    }
}
