//! Behavioral 8-bit approximate multipliers, arithmetic-error profiling,
//! and the published component catalog.

mod catalog;
mod multiplier;
mod profile;

pub use catalog::{load_catalog, parse_catalog, Catalog, CatalogEntry};
pub use multiplier::{MultiplierKind, MultiplierModel, LUT_BYTES};
pub use profile::{
    gaussian_likeness, profile, to_nm_na, ErrorProfile, GaussianFit, Histogram, InputSource,
    ProfileOptions, DEFAULT_CHAIN_SAMPLES, GAUSSIAN_THRESHOLD, HISTOGRAM_BINS,
};
