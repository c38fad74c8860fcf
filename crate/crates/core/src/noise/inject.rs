use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::site::{GroupId, Site};
use crate::tensor::{range_of, Tensor};

/// Adds `Gauss(shape, NM * R) + NA * R` to `x`, where `R` is the value range
/// of this tensor instance.
///
/// `NM = NA = 0` and `R = 0` leave `x` bit-for-bit unchanged.
pub fn inject<R: Rng + ?Sized>(x: &mut Tensor, nm: f64, na: f64, rng: &mut R) {
    if nm == 0.0 && na == 0.0 {
        return;
    }
    let Ok(range) = range_of(x) else { return };
    let r = range.span();
    if r == 0.0 {
        return;
    }
    let std = nm * r;
    let mean = na * r;
    if std == 0.0 {
        x.data_mut().iter_mut().for_each(|v| *v += mean);
    } else {
        for v in x.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += z * std + mean;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseTarget {
    Site { group: GroupId, layer: String },
    Group { group: GroupId },
}

impl NoiseTarget {
    pub fn group(group: GroupId) -> Self {
        NoiseTarget::Group { group }
    }

    pub fn site(group: GroupId, layer: impl Into<String>) -> Self {
        NoiseTarget::Site {
            group,
            layer: layer.into(),
        }
    }

    pub fn matches(&self, site: &Site) -> bool {
        match self {
            NoiseTarget::Group { group } => site.group == *group,
            NoiseTarget::Site { group, layer } => site.group == *group && site.layer == *layer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub target: NoiseTarget,
    pub nm: f64,
    pub na: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(target: NoiseTarget, nm: f64, na: f64, seed: u64) -> Result<Self> {
        if !(nm >= 0.0 && nm.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise magnitude must be finite and >= 0, got {nm}"
            )));
        }
        if !na.is_finite() {
            return Err(Error::InvalidArgument(format!("noise average {na} is not finite")));
        }
        Ok(Self {
            target,
            nm,
            na,
            seed,
        })
    }

    fn is_identity(&self) -> bool {
        self.nm == 0.0 && self.na == 0.0
    }
}

/// A set of noise specs. Sites not matched by any spec pass through
/// unchanged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Injector {
    specs: Vec<NoiseSpec>,
}

impl Injector {
    pub fn null() -> Self {
        Self::default()
    }

    pub fn new(specs: Vec<NoiseSpec>) -> Self {
        Self { specs }
    }

    pub fn single(spec: NoiseSpec) -> Self {
        Self { specs: vec![spec] }
    }

    pub fn specs(&self) -> &[NoiseSpec] {
        &self.specs
    }

    pub fn is_null(&self) -> bool {
        self.specs.iter().all(NoiseSpec::is_identity)
    }

    /// Resolves which specs apply to each site of a model.
    pub fn bind<'a>(&'a self, sites: &[Site]) -> BoundInjector<'a> {
        let per_site = sites
            .iter()
            .map(|site| {
                self.specs
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| !s.is_identity() && s.target.matches(site))
                    .map(|(i, _)| (i, stream_id(&site.layer, site.group, i)))
                    .collect()
            })
            .collect();
        BoundInjector {
            specs: &self.specs,
            per_site,
        }
    }
}

pub struct BoundInjector<'a> {
    specs: &'a [NoiseSpec],
    per_site: Vec<Vec<(usize, u64)>>,
}

impl<'a> BoundInjector<'a> {
    /// Noise state for one evaluated sample. Streams are derived from
    /// `(spec seed, site, sample)`, so samples can be processed in any
    /// order or in parallel.
    pub fn session(&self, sample: u64) -> InjectionSession<'_> {
        InjectionSession {
            bound: self,
            sample,
            rngs: vec![None; self.per_site.len()],
        }
    }

    pub fn is_null(&self) -> bool {
        self.per_site.iter().all(Vec::is_empty)
    }

    pub fn site_count(&self) -> usize {
        self.per_site.len()
    }
}

pub struct InjectionSession<'a> {
    bound: &'a BoundInjector<'a>,
    sample: u64,
    rngs: Vec<Option<Vec<ChaCha8Rng>>>,
}

impl InjectionSession<'_> {
    /// Applies every spec bound to `site` to `x`. Repeated visits of the
    /// same site (routing iterations) continue the same streams.
    pub fn apply(&mut self, site: usize, x: &mut Tensor) {
        let bound = self.bound;
        let Some(matches) = bound.per_site.get(site) else { return };
        if matches.is_empty() {
            return;
        }
        let sample = self.sample;
        let rngs = self.rngs[site].get_or_insert_with(|| {
            matches
                .iter()
                .map(|&(spec, stream)| {
                    let seed = bound.specs[spec]
                        .seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add(sample);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(stream);
                    rng
                })
                .collect()
        });
        for (&(spec, _), rng) in matches.iter().zip(rngs.iter_mut()) {
            let s = &bound.specs[spec];
            inject(x, s.nm, s.na, rng);
        }
    }
}

/// FNV-1a over the site identity, mixed with the spec index.
fn stream_id(layer: &str, group: GroupId, spec: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in layer.bytes().chain(group.as_str().bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ ((spec as u64) << 48)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Tensor {
        Tensor::from_vec((0..n).map(|i| i as f64 / (n - 1) as f64 * 10.0).collect())
    }

    #[test]
    fn zero_noise_is_identity() {
        let x = Tensor::from_vec(vec![-0.0, 1.5, -2.25]);
        let mut y = x.clone();
        inject(&mut y, 0.0, 0.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(
            x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn pure_mean_shift() {
        let x = ramp(11);
        let mut y = x.clone();
        inject(&mut y, 0.0, 0.1, &mut ChaCha8Rng::seed_from_u64(1));
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((b - a - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_tensor_is_untouched() {
        let mut x = Tensor::full(&[5], 3.0);
        inject(&mut x, 0.5, 0.5, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(x.data(), &[3.0; 5]);
    }

    #[test]
    fn spec_validation() {
        assert!(NoiseSpec::new(NoiseTarget::group(GroupId::Softmax), -0.1, 0.0, 0).is_err());
        assert!(NoiseSpec::new(NoiseTarget::group(GroupId::Softmax), 0.1, f64::NAN, 0).is_err());
    }

    #[test]
    fn targets_match_sites() {
        let conv = Site::new("conv1", GroupId::MacOutputs, vec![1]);
        let relu = Site::new("conv1_relu", GroupId::Activations, vec![1]);
        assert!(NoiseTarget::group(GroupId::MacOutputs).matches(&conv));
        assert!(!NoiseTarget::group(GroupId::MacOutputs).matches(&relu));
        assert!(NoiseTarget::site(GroupId::Activations, "conv1_relu").matches(&relu));
        assert!(!NoiseTarget::site(GroupId::MacOutputs, "conv1_relu").matches(&relu));
    }

    #[test]
    fn sessions_are_deterministic_and_sample_dependent() {
        let sites = vec![
            Site::new("a", GroupId::MacOutputs, vec![100]),
            Site::new("b", GroupId::Softmax, vec![100]),
        ];
        let inj = Injector::single(
            NoiseSpec::new(NoiseTarget::group(GroupId::MacOutputs), 0.1, 0.0, 7).unwrap(),
        );
        let bound = inj.bind(&sites);
        let run = |sample| {
            let mut s = bound.session(sample);
            let mut x = ramp(100);
            s.apply(0, &mut x);
            let mut y = ramp(100);
            s.apply(1, &mut y);
            assert_eq!(y, ramp(100));
            x
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn repeated_visits_draw_fresh_noise() {
        let sites = vec![Site::new("a", GroupId::LogitsUpdate, vec![50])];
        let inj = Injector::single(
            NoiseSpec::new(NoiseTarget::group(GroupId::LogitsUpdate), 0.1, 0.0, 1).unwrap(),
        );
        let bound = inj.bind(&sites);
        let mut s = bound.session(0);
        let mut x = ramp(50);
        let mut y = ramp(50);
        s.apply(0, &mut x);
        s.apply(0, &mut y);
        assert_ne!(x, y);
    }
}
