use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::multiplier::MultiplierModel;
use crate::error::{Error, Result};
use crate::tensor::Range;

/// Number of random MAC chains sampled for chain lengths above one.
pub const DEFAULT_CHAIN_SAMPLES: usize = 100_000;
pub const HISTOGRAM_BINS: usize = 64;
/// Maximum CDF distance for an error distribution to count as Gaussian-like.
pub const GAUSSIAN_THRESHOLD: f64 = 0.05;
const DEFAULT_PROFILE_SEED: u64 = 0x0005_EED0_FA77;
const MIN_GAUSSIAN_SAMPLES: u64 = 1000;

/// Where multiplier operand pairs come from.
#[derive(Clone, Debug, PartialEq)]
pub enum InputSource {
    /// All 65,536 operand pairs for single multipliers; uniform random
    /// pairs for chains.
    UniformExhaustive,
    /// `n` uniform random pairs for single multipliers.
    UniformRandom(usize),
    /// Observed operand pairs, e.g. quantized activations and weights of a
    /// trained layer. Chains resample from this set.
    Empirical(Vec<(u8, u8)>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileOptions {
    pub chain_samples: usize,
    pub seed: u64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            chain_samples: DEFAULT_CHAIN_SAMPLES,
            seed: DEFAULT_PROFILE_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn build(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let idx = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[idx] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn upper_edge(&self, bin: usize) -> f64 {
        if bin + 1 == self.counts.len() {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * (bin + 1) as f64 / self.counts.len() as f64
        }
    }
}

/// Arithmetic-error statistics of a multiplier for one MAC-chain length,
/// in product units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    pub multiplier: String,
    pub chain_length: usize,
    pub samples: u64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
}

impl ErrorProfile {
    /// Summarizes a set of error samples. Mean and (population) standard
    /// deviation are accumulated in a single Welford pass.
    pub fn from_errors(multiplier: &str, chain_length: usize, errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::InvalidArgument("no error samples to profile".into()));
        }
        let mut n = 0u64;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &e in errors {
            n += 1;
            let delta = e - mean;
            mean += delta / n as f64;
            m2 += delta * (e - mean);
            min = min.min(e);
            max = max.max(e);
        }
        let std = (m2 / n as f64).max(0.0).sqrt();
        Ok(Self {
            multiplier: multiplier.to_string(),
            chain_length,
            samples: n,
            mean,
            std,
            min,
            max,
            histogram: Histogram::build(errors, min, max, HISTOGRAM_BINS),
        })
    }
}

/// Error profile of `model` for each requested chain length.
///
/// A chain of length `n` accumulates `sum(P' - P)` over `n` operand pairs,
/// modelling the error at the output of an `n`-term MAC.
pub fn profile(
    model: &MultiplierModel,
    source: &InputSource,
    chain_lengths: &[usize],
    opts: &ProfileOptions,
) -> Result<Vec<ErrorProfile>> {
    if let InputSource::Empirical(pairs) = source {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("empirical input source is empty".into()));
        }
    }
    if matches!(source, InputSource::UniformRandom(0)) {
        return Err(Error::InvalidArgument("uniform_random needs at least one sample".into()));
    }
    chain_lengths
        .iter()
        .map(|&len| {
            if len == 0 {
                return Err(Error::InvalidArgument("chain length must be >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (len as u64).wrapping_mul(0x9E37_79B9));
            let errors = if len == 1 {
                single_errors(model, source, &mut rng)
            } else {
                if opts.chain_samples == 0 {
                    return Err(Error::InvalidArgument("chain_samples must be >= 1".into()));
                }
                (0..opts.chain_samples)
                    .map(|_| {
                        (0..len)
                            .map(|_| {
                                let (a, b) = draw_pair(source, &mut rng);
                                model.error(a, b)
                            })
                            .sum::<i64>() as f64
                    })
                    .collect()
            };
            ErrorProfile::from_errors(&model.name, len, &errors)
        })
        .collect()
}

fn single_errors(model: &MultiplierModel, source: &InputSource, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match source {
        InputSource::UniformExhaustive => (0..=255u8)
            .flat_map(|a| (0..=255u8).map(move |b| (a, b)))
            .map(|(a, b)| model.error(a, b) as f64)
            .collect(),
        InputSource::UniformRandom(n) => (0..*n)
            .map(|_| model.error(rng.random(), rng.random()) as f64)
            .collect(),
        InputSource::Empirical(pairs) => pairs.iter().map(|&(a, b)| model.error(a, b) as f64).collect(),
    }
}

fn draw_pair(source: &InputSource, rng: &mut ChaCha8Rng) -> (u8, u8) {
    match source {
        InputSource::Empirical(pairs) => pairs[rng.random_range(0..pairs.len())],
        _ => (rng.random(), rng.random()),
    }
}

/// Scales a profile's mean and deviation by the range `R` of the tensor
/// the errors land in. Returns `(NA, NM)`.
pub fn to_nm_na(profile: &ErrorProfile, range: &Range) -> Result<(f64, f64)> {
    let r = range.span();
    if r <= 0.0 {
        return Err(Error::DegenerateRange(range.min));
    }
    Ok((profile.mean / r, profile.std / r))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub is_gaussian_like: bool,
    /// Largest distance between the binned empirical CDF and the normal CDF
    /// with the profile's mean and deviation.
    pub score: f64,
}

/// Kolmogorov-Smirnov-style comparison of a profile's histogram with
/// `N(mean, std)`. A zero-deviation profile is Gaussian-like by convention.
pub fn gaussian_likeness(profile: &ErrorProfile) -> Result<GaussianFit> {
    if profile.samples < MIN_GAUSSIAN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "gaussian test needs >= {MIN_GAUSSIAN_SAMPLES} samples, profile has {}",
            profile.samples
        )));
    }
    if profile.std == 0.0 {
        return Ok(GaussianFit {
            is_gaussian_like: true,
            score: 0.0,
        });
    }
    let normal = Normal::new(profile.mean, profile.std)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let hist = &profile.histogram;
    let n = hist.total() as f64;
    let mut score = normal.cdf(hist.lo);
    let mut cum = 0u64;
    for (bin, &c) in hist.counts.iter().enumerate() {
        cum += c;
        let dev = (cum as f64 / n - normal.cdf(hist.upper_edge(bin))).abs();
        score = score.max(dev);
    }
    Ok(GaussianFit {
        is_gaussian_like: score <= GAUSSIAN_THRESHOLD,
        score,
    })
}
