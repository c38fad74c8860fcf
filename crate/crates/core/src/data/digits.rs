use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const DIGITS_CSV: &str = include_str!("../../data/digits.csv");

/// Seed of the default train/test shuffle.
pub const DIGITS_SPLIT_SEED: u64 = 20_190_119;

/// The bundled 8x8 handwritten digits (1,797 samples, pixel values 0..=16
/// scaled to `[0, 1]`), in file order and tagged as the test split.
pub fn bundled_digits() -> LabeledDataset {
    parse_digits(DIGITS_CSV).expect("bundled digits are well formed")
}

fn parse_digits(text: &str) -> Result<LabeledDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields = line
            .split(',')
            .map(|f| f.trim().parse::<u8>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("digits line {}: {e}", n + 1)))?;
        if fields.len() != 65 {
            return Err(Error::InvalidArgument(format!(
                "digits line {} has {} fields, expected 65",
                n + 1,
                fields.len()
            )));
        }
        images.push(Tensor::new(
            vec![8, 8, 1],
            fields[..64].iter().map(|&p| f64::from(p) / 16.0).collect(),
        )?);
        labels.push(usize::from(fields[64]));
    }
    LabeledDataset::new(images, labels, 10, Split::Test)
}

/// Shuffles `ds` with `seed` and splits it 80/20 into (train, test).
pub fn digits_split(ds: &LabeledDataset, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ds.len() * 4).div_ceil(5).min(ds.len() - 1).max(1);
    let (train, test) = idx.split_at(n_train);
    (ds.subset(train, Split::Train), ds.subset(test, Split::Test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_set_shape() {
        let ds = bundled_digits();
        assert_eq!(ds.len(), 1797);
        assert_eq!(ds.image_shape(), [8, 8, 1]);
        let mut counts = [0; 10];
        ds.labels().iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().all(|&c| c > 150));
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let ds = bundled_digits();
        let (a, b) = digits_split(&ds, 1);
        assert_eq!(a.len() + b.len(), 1797);
        assert_eq!(b.len(), 359);
        assert_eq!(a.split(), Split::Train);
        let (a2, _) = digits_split(&ds, 1);
        assert_eq!(a, a2);
        let (a3, _) = digits_split(&ds, 2);
        assert_ne!(a, a3);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(parse_digits("1,2,3\n").is_err());
    }
}
