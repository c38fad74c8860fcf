//! Resilience analysis: group-wise and layer-wise noise sweeps, resilience
//! marking, per-site tolerance estimation and approximate component
//! selection.

mod report;
mod select;
mod sweep;

pub use report::{
    mark_resilient, parse_rows, site_tolerances, Mark, Marks, ReportRow, ResilienceReport, SiteTolerance, TargetKind,
    TargetMark, CSV_HEADER,
};
pub use select::{select_components, select_uniform, PlanEntry, SelectionPlan};
pub use sweep::{group_sweep, layer_sweep, SweepConfig, DEFAULT_NM_GRID};

use serde::{Deserialize, Serialize};

use crate::approx::Catalog;
use crate::capsnet::Model;
use crate::data::LabeledDataset;
use crate::energy::{count_site_ops, energy_with_plan, EnergySummary, UnitEnergies};
use crate::error::Result;
use crate::site::{GroupId, Site};

/// Every instrumented site of the model, tagged with its group.
pub fn extract_groups(model: &Model) -> Vec<Site> {
    model.sites().to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub sweep: SweepConfig,
    /// Largest mean accuracy drop, in percentage points, still counted as
    /// resilient.
    pub threshold_pp: f64,
    /// NM at which targets are marked.
    pub probe_nm: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sweep: SweepConfig::default(),
            threshold_pp: 1.0,
            probe_nm: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub report: ResilienceReport,
    pub marks: Marks,
    pub tolerances: Vec<SiteTolerance>,
    pub plan: SelectionPlan,
    pub energy: EnergySummary,
}

/// Group extraction, group sweep, group marking, layer sweeps of the
/// non-resilient groups, layer marking, component selection and energy
/// estimation of the resulting plan.
pub fn run_pipeline(
    model: &Model,
    dataset: &LabeledDataset,
    config: &RunConfig,
    catalog: &Catalog,
    units: &UnitEnergies,
) -> Result<PipelineOutput> {
    let sites = extract_groups(model);
    let mut report = group_sweep(model, dataset, &config.sweep)?;
    let group_marks = mark_resilient(&report, config.threshold_pp, config.probe_nm)?;
    let weak: Vec<GroupId> = group_marks
        .groups
        .iter()
        .filter(|m| m.mark == Mark::NonResilient)
        .map(|m| m.group)
        .collect();
    for group in weak {
        report.rows.extend(layer_sweep(model, dataset, group, &config.sweep)?);
    }
    let marks = mark_resilient(&report, config.threshold_pp, config.probe_nm)?;
    let tolerances = site_tolerances(&sites, &report, &marks)?;
    let plan = select_components(&tolerances, catalog)?;
    let energy = energy_with_plan(&count_site_ops(model), units, &plan, catalog)?;
    Ok(PipelineOutput {
        report,
        marks,
        tolerances,
        plan,
        energy,
    })
}
