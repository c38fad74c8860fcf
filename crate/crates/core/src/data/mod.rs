//! Labelled image datasets: the bundled 8x8 digits set, IDX ingestion and
//! block-mean downsampling.

mod digits;
mod idx;

pub use digits::{bundled_digits, digits_split, DIGITS_SPLIT_SEED};
pub use idx::{load_idx, parse_idx};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images `[H, W, 1]` with pixels in `[0, 1]` and one class id per image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Tensor>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let shape = images[0].shape().to_vec();
        if shape.len() != 3 || shape[2] != 1 {
            return Err(Error::Shape(format!("images must be [H,W,1], got {shape:?}")));
        }
        for (i, img) in images.iter().enumerate() {
            if img.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "image {i} has shape {:?}, expected {shape:?}",
                    img.shape()
                )));
            }
            if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!("image {i} has pixels outside [0, 1]")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Tensor {
        &self.images[i]
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images[0].shape();
        [s[0], s[1], s[2]]
    }

    /// All images stacked as `[N, H, W, 1]`.
    pub fn batch(&self) -> Tensor {
        let [h, w, c] = self.image_shape();
        let data = self.images.iter().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::new(vec![self.len(), h, w, c], data).expect("consistent image shapes")
    }

    /// The first `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.clamp(1, self.len());
        Self {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    pub(crate) fn subset(&self, idx: &[usize], split: Split) -> Self {
        Self {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split,
        }
    }
}

/// Average-pools every image over `factor x factor` blocks. Images whose
/// sides are not multiples of `factor` are zero-padded on the bottom and
/// right first.
pub fn downsample(ds: &LabeledDataset, factor: usize) -> Result<LabeledDataset> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be positive".into()));
    }
    let [h, w, _] = ds.image_shape();
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    let area = (factor * factor) as f64;
    let images = ds
        .images
        .iter()
        .map(|img| {
            let src = img.data();
            let mut out = vec![0.0; oh * ow];
            for y in 0..h {
                for x in 0..w {
                    out[(y / factor) * ow + x / factor] += src[y * w + x];
                }
            }
            out.iter_mut().for_each(|v| *v /= area);
            Tensor::new(vec![oh, ow, 1], out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset {
        images,
        labels: ds.labels.clone(),
        num_classes: ds.num_classes,
        split: ds.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(images: Vec<Tensor>) -> LabeledDataset {
        let n = images.len();
        LabeledDataset::new(images, vec![0; n], 1, Split::Test).unwrap()
    }

    #[test]
    fn downsample_constant_and_blocks() {
        let c = ds(vec![Tensor::full(&[4, 4, 1], 0.25)]);
        let d = downsample(&c, 2).unwrap();
        assert_eq!(d.image(0).shape(), &[2, 2, 1]);
        assert!(d.image(0).data().iter().all(|&v| v == 0.25));

        let b = ds(vec![Tensor::new(vec![2, 2, 1], vec![0.0, 0.0, 1.0, 1.0]).unwrap()]);
        assert_eq!(downsample(&b, 2).unwrap().image(0).data(), &[0.5]);
    }

    #[test]
    fn downsample_pads_ragged_edges() {
        let c = ds(vec![Tensor::full(&[3, 3, 1], 1.0)]);
        let d = downsample(&c, 2).unwrap();
        assert_eq!(d.image(0).data(), &[1.0, 0.5, 0.5, 0.25]);
    }

    #[test]
    fn rejects_bad_datasets() {
        assert!(LabeledDataset::new(vec![], vec![], 10, Split::Train).is_err());
        let img = Tensor::full(&[2, 2, 1], 0.5);
        assert!(LabeledDataset::new(vec![img.clone()], vec![10], 10, Split::Train).is_err());
        assert!(LabeledDataset::new(vec![Tensor::full(&[2, 2, 1], 1.5)], vec![0], 10, Split::Train).is_err());
        assert!(LabeledDataset::new(vec![img.clone(), img], vec![0], 10, Split::Train).is_err());
    }
}
