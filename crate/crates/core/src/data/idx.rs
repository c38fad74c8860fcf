use std::path::Path;

use super::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads an MNIST-style IDX image/label file pair. Pixels are scaled by
/// 1/255; the class count is `max(10, max label + 1)`.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels, split)
}

pub fn parse_idx(images: &[u8], labels: &[u8], split: Split) -> Result<LabeledDataset> {
    let (dims, pixels) = header(images, IMAGES_MAGIC, 3, "images")?;
    let (ldims, label_bytes) = header(labels, LABELS_MAGIC, 1, "labels")?;
    let [n, h, w] = [dims[0], dims[1], dims[2]];
    if ldims[0] != n {
        return Err(Error::Idx(format!(
            "images file holds {n} samples but labels file holds {}",
            ldims[0]
        )));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Idx(format!("empty dimensions {n}x{h}x{w}")));
    }
    let per = h * w;
    let imgs = pixels
        .chunks_exact(per)
        .map(|c| Tensor::new(vec![h, w, 1], c.iter().map(|&p| f64::from(p) / 255.0).collect()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = label_bytes.iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    LabeledDataset::new(imgs, labels, classes, split)
}

/// Validates magic and dimensions, returning the dims and the exact payload.
fn header<'a>(bytes: &'a [u8], magic: u32, rank: usize, what: &str) -> Result<(Vec<usize>, &'a [u8])> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i * 4..i * 4 + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::Idx(format!("{what} file truncated in header")))
    };
    let found = word(0)?;
    if found != magic {
        return Err(Error::Idx(format!(
            "{what} file has magic 0x{found:08X}, expected 0x{magic:08X}"
        )));
    }
    let dims = (1..=rank).map(|i| word(i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let start = 4 * (rank + 1);
    let len: usize = dims.iter().product();
    let payload = &bytes[start..];
    if payload.len() < len {
        return Err(Error::Idx(format!(
            "{what} file truncated: expected {len} data bytes, found {}",
            payload.len()
        )));
    }
    Ok((dims, &payload[..len]))
}
