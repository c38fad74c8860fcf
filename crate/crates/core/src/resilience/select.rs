use serde::{Deserialize, Serialize};

use super::report::SiteTolerance;
use crate::approx::{Catalog, CatalogEntry};
use crate::error::{Error, Result};
use crate::site::GroupId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub site: String,
    pub group: GroupId,
    pub component: String,
    pub component_nm: f64,
    pub component_power_uw: f64,
    pub tolerated_nm: f64,
    pub estimated_drop_pp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    /// The accurate component that untolerant sites fall back to.
    pub exact_component: String,
    pub entries: Vec<PlanEntry>,
}

impl SelectionPlan {
    /// Every chosen component's modeled NM is within its site's tolerance.
    pub fn is_sound(&self) -> bool {
        self.entries.iter().all(|e| e.component_nm <= e.tolerated_nm)
    }

    pub fn entry(&self, site: &str) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.site == site)
    }
}

/// Lowest-power entry whose modeled NM is within `tolerated`; ties go to
/// the smaller area, then the name.
fn cheapest(catalog: &Catalog, tolerated: f64) -> Option<&CatalogEntry> {
    catalog
        .entries
        .iter()
        .filter(|e| e.nm_modeled <= tolerated)
        .min_by(|a, b| {
            a.power_uw
                .total_cmp(&b.power_uw)
                .then(a.area_um2.total_cmp(&b.area_um2))
                .then_with(|| a.name.cmp(&b.name))
        })
}

/// Picks one component per site from `catalog`.
pub fn select_components(tolerances: &[SiteTolerance], catalog: &Catalog) -> Result<SelectionPlan> {
    if catalog.is_empty() {
        return Err(Error::InvalidArgument("component catalog is empty".into()));
    }
    let exact = catalog
        .exact_entry()
        .ok_or_else(|| Error::InvalidArgument("catalog has no zero-noise (exact) component".into()))?;
    let entries = tolerances
        .iter()
        .map(|t| {
            let c = cheapest(catalog, t.tolerated_nm).unwrap_or(exact);
            PlanEntry {
                site: t.site.clone(),
                group: t.group,
                component: c.name.clone(),
                component_nm: c.nm_modeled,
                component_power_uw: c.power_uw,
                tolerated_nm: t.tolerated_nm,
                estimated_drop_pp: t.estimated_drop_pp,
            }
        })
        .collect();
    Ok(SelectionPlan {
        exact_component: exact.name.clone(),
        entries,
    })
}

/// Selection with the same tolerated NM at every listed site.
pub fn select_uniform(sites: &[(String, GroupId)], tolerated: f64, catalog: &Catalog) -> Result<SelectionPlan> {
    if !(tolerated >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerated NM {tolerated} must be >= 0")));
    }
    let tol: Vec<SiteTolerance> = sites
        .iter()
        .map(|(site, group)| SiteTolerance {
            site: site.clone(),
            group: *group,
            tolerated_nm: tolerated,
            estimated_drop_pp: 0.0,
            source: super::TargetKind::Group,
        })
        .collect();
    select_components(&tol, catalog)
}
