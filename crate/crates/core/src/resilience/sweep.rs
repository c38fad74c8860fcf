use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{ReportRow, ResilienceReport, TargetKind};
use crate::capsnet::{evaluate, Model};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::noise::{Injector, NoiseSpec, NoiseTarget};
use crate::site::GroupId;

pub const DEFAULT_NM_GRID: [f64; 9] = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub nm_grid: Vec<f64>,
    pub na: f64,
    pub reps: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            nm_grid: DEFAULT_NM_GRID.to_vec(),
            na: 0.0,
            reps: 3,
            seed: 0,
        }
    }
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        if self.nm_grid.is_empty() {
            return Err(Error::InvalidArgument("NM grid is empty".into()));
        }
        if let Some(bad) = self.nm_grid.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("NM grid value {bad} must be >= 0")));
        }
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if !self.na.is_finite() {
            return Err(Error::InvalidArgument(format!("NA {} is not finite", self.na)));
        }
        Ok(())
    }

    /// Sorted, deduplicated grid.
    fn grid(&self) -> Vec<f64> {
        let mut g = self.nm_grid.clone();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }
}

struct Cell {
    kind: TargetKind,
    name: String,
    group: GroupId,
    target: NoiseTarget,
    nm: f64,
    rep: usize,
    seed: u64,
}

/// Noise seed of one sweep cell, mixed from the sweep seed, the target and
/// the repetition. The NM is deliberately not part of the key: within a
/// repetition every grid point draws the same standard-normal values, scaled
/// by its NM, which keeps accuracy curves from crossing on sampling noise.
fn cell_seed(seed: u64, name: &str, rep: usize) -> u64 {
    let mut h = seed ^ 0xCBF2_9CE4_8422_2325;
    for b in name.bytes().chain((rep as u64).to_le_bytes()) {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3);
    }
    // splitmix finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

fn run_cells(model: &Model, dataset: &LabeledDataset, cells: Vec<Cell>, na: f64) -> Result<Vec<ReportRow>> {
    let accs = cells
        .par_iter()
        .map(|c| {
            let spec = NoiseSpec::new(c.target.clone(), c.nm, na, c.seed)?;
            evaluate(model, dataset, &Injector::single(spec))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cells
        .into_iter()
        .zip(accs)
        .map(|(c, accuracy)| ReportRow {
            target_kind: c.kind,
            target_name: c.name,
            group: c.group,
            nm: c.nm,
            na,
            rep: c.rep,
            accuracy,
        })
        .collect())
}

/// Evaluates the model with noise in one whole group at a time, for every
/// group, grid NM and repetition.
pub fn group_sweep(model: &Model, dataset: &LabeledDataset, config: &SweepConfig) -> Result<ResilienceReport> {
    config.validate()?;
    let baseline = evaluate(model, dataset, &Injector::null())?;
    let grid = config.grid();
    let mut cells = Vec::new();
    for group in GroupId::ALL {
        if !model.sites().iter().any(|s| s.group == group) {
            continue;
        }
        for &nm in &grid {
            for rep in 0..config.reps {
                cells.push(Cell {
                    kind: TargetKind::Group,
                    name: group.to_string(),
                    group,
                    target: NoiseTarget::group(group),
                    nm,
                    rep,
                    seed: cell_seed(config.seed, group.as_str(), rep),
                });
            }
        }
    }
    let rows = run_cells(model, dataset, cells, config.na)?;
    Ok(ResilienceReport { baseline, rows })
}

/// Evaluates the model with noise at one site of `group` at a time.
pub fn layer_sweep(
    model: &Model,
    dataset: &LabeledDataset,
    group: GroupId,
    config: &SweepConfig,
) -> Result<Vec<ReportRow>> {
    config.validate()?;
    let grid = config.grid();
    let sites: Vec<_> = model.sites().iter().filter(|s| s.group == group).collect();
    if sites.is_empty() {
        return Err(Error::InvalidArgument(format!("group {group} has no sites in this model")));
    }
    let mut cells = Vec::new();
    for site in sites {
        for &nm in &grid {
            for rep in 0..config.reps {
                cells.push(Cell {
                    kind: TargetKind::Layer,
                    name: site.layer.clone(),
                    group,
                    target: NoiseTarget::site(group, site.layer.clone()),
                    nm,
                    rep,
                    seed: cell_seed(config.seed, &site.layer, rep),
                });
            }
        }
    }
    run_cells(model, dataset, cells, config.na)
}
