//! Operation counts along the computational path and their energy cost.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::approx::Catalog;
use crate::capsnet::{LayerOp, Model};
use crate::error::{Error, Result};
use crate::resilience::SelectionPlan;
use crate::site::GroupId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub additions: u64,
    pub multiplications: u64,
    pub divisions: u64,
    pub exponentials: u64,
    pub square_roots: u64,
}

impl Add for OpCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            additions: self.additions + o.additions,
            multiplications: self.multiplications + o.multiplications,
            divisions: self.divisions + o.divisions,
            exponentials: self.exponentials + o.exponentials,
            square_roots: self.square_roots + o.square_roots,
        }
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for OpCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

impl OpCounts {
    /// Operation totals of the DeepCaps inference (one image).
    pub fn deepcaps() -> Self {
        Self {
            additions: 1_910_000_000,
            multiplications: 2_150_000_000,
            divisions: 4_170_000,
            exponentials: 175_000,
            square_roots: 502_000,
        }
    }

    fn scaled(self, n: u64) -> Self {
        Self {
            additions: self.additions * n,
            multiplications: self.multiplications * n,
            divisions: self.divisions * n,
            exponentials: self.exponentials * n,
            square_roots: self.square_roots * n,
        }
    }
}

/// Energy per operation in picojoules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitEnergies {
    pub addition: f64,
    pub multiplication: f64,
    pub division: f64,
    pub exponential: f64,
    pub square_root: f64,
}

impl Default for UnitEnergies {
    fn default() -> Self {
        Self {
            addition: 0.0202,
            multiplication: 0.5354,
            division: 1.0717,
            exponential: 0.1578,
            square_root: 0.7805,
        }
    }
}

impl UnitEnergies {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.addition,
            self.multiplication,
            self.division,
            self.exponential,
            self.square_root,
        ];
        if all.iter().all(|&e| e > 0.0 && e.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("unit energies must be positive: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Addition,
    Multiplication,
    Division,
    Exponential,
    SquareRoot,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Addition => "addition",
            OpKind::Multiplication => "multiplication",
            OpKind::Division => "division",
            OpKind::Exponential => "exponential",
            OpKind::SquareRoot => "square_root",
        })
    }
}

/// Operations attributed to one instrumented site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteOps {
    pub site: String,
    pub group: GroupId,
    pub counts: OpCounts,
}

/// Counts for one convolution without bias: `k*k*cin` multiplications and
/// `k*k*cin - 1` additions per output element.
pub fn conv_ops(outputs: u64, k: u64, cin: u64) -> OpCounts {
    let taps = k * k * cin;
    OpCounts {
        multiplications: outputs * taps,
        additions: outputs * (taps - 1),
        ..OpCounts::default()
    }
}

/// Squash of `capsules` capsules of dimension `d`: squared norm, one sqrt,
/// one division for the scale and `d` scaling multiplications each.
pub fn squash_ops(capsules: u64, d: u64) -> OpCounts {
    OpCounts {
        multiplications: capsules * 2 * d,
        additions: capsules * d,
        square_roots: capsules,
        divisions: capsules,
        ..OpCounts::default()
    }
}

/// Per-site operation counts of one inference, in site order.
pub fn count_site_ops(model: &Model) -> Vec<SiteOps> {
    let sites = model.sites();
    let mut counts = vec![OpCounts::default(); sites.len()];
    for layer in &model.plan().layers {
        match &layer.op {
            LayerOp::Conv { geom, mac, .. } => {
                let outputs = geom.output_len() as u64;
                counts[*mac] += conv_ops(outputs, geom.k as u64, geom.cin as u64);
                counts[*mac].additions += outputs;
            }
            LayerOp::CapsConv { geom, dim, mac, act } => {
                let outputs = geom.output_len() as u64;
                counts[*mac] += conv_ops(outputs, geom.k as u64, geom.cin as u64);
                counts[*mac].additions += outputs;
                counts[*act] += squash_ops(outputs / *dim as u64, *dim as u64);
            }
            LayerOp::ClassCaps {
                n_in,
                d_in,
                n_out,
                d_out,
                iterations,
                uhat,
                routing,
            } => {
                let (n, j, d, di, r) = (*n_in as u64, *n_out as u64, *d_out as u64, *d_in as u64, *iterations as u64);
                counts[*uhat] += OpCounts {
                    multiplications: n * j * d * di,
                    additions: n * j * d * (di - 1),
                    ..OpCounts::default()
                };
                let per_iter_softmax = OpCounts {
                    exponentials: n * j,
                    additions: n * (j - 1),
                    divisions: n * j,
                    ..OpCounts::default()
                };
                let per_iter_s = OpCounts {
                    multiplications: n * j * d,
                    additions: (n - 1) * j * d,
                    ..OpCounts::default()
                };
                let per_iter_logits = OpCounts {
                    multiplications: n * j * d,
                    additions: n * j * (d - 1) + n * j,
                    ..OpCounts::default()
                };
                counts[routing.softmax] += per_iter_softmax.scaled(r);
                counts[routing.s] += per_iter_s.scaled(r);
                counts[routing.squash] += squash_ops(j, d).scaled(r);
                counts[routing.logits] += per_iter_logits.scaled(r);
            }
        }
    }
    // class scores: the length of every final output capsule
    if let Some(LayerOp::ClassCaps { n_out, d_out, routing, .. }) = model.plan().layers.last().map(|l| &l.op) {
        let (j, d) = (*n_out as u64, *d_out as u64);
        counts[routing.squash] += OpCounts {
            multiplications: j * d,
            additions: j * (d - 1),
            square_roots: j,
            ..OpCounts::default()
        };
    }
    sites
        .iter()
        .zip(counts)
        .map(|(s, counts)| SiteOps {
            site: s.layer.clone(),
            group: s.group,
            counts,
        })
        .collect()
}

/// Total operation counts of one inference.
pub fn count_ops(model: &Model) -> OpCounts {
    count_site_ops(model).into_iter().map(|s| s.counts).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindEnergy {
    pub kind: OpKind,
    pub count: u64,
    pub energy_pj: f64,
    /// Percentage of the total energy.
    pub share_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub total_pj: f64,
    pub total_joules: f64,
    /// Energy of the same counts with every multiplication exact.
    pub accurate_total_pj: f64,
    pub savings_percent: f64,
    pub breakdown: Vec<KindEnergy>,
}

impl EnergySummary {
    pub fn share(&self, kind: OpKind) -> f64 {
        self.breakdown
            .iter()
            .find(|k| k.kind == kind)
            .map_or(0.0, |k| k.share_percent)
    }
}

fn summarize(counts: &OpCounts, u: &UnitEnergies, mul_pj: f64) -> EnergySummary {
    let rows = [
        (OpKind::Addition, counts.additions, counts.additions as f64 * u.addition),
        (OpKind::Multiplication, counts.multiplications, mul_pj),
        (OpKind::Division, counts.divisions, counts.divisions as f64 * u.division),
        (OpKind::Exponential, counts.exponentials, counts.exponentials as f64 * u.exponential),
        (OpKind::SquareRoot, counts.square_roots, counts.square_roots as f64 * u.square_root),
    ];
    let total: f64 = rows.iter().map(|r| r.2).sum();
    let accurate = total - mul_pj + counts.multiplications as f64 * u.multiplication;
    let pct = |x: f64, of: f64| if of > 0.0 { 100.0 * x / of } else { 0.0 };
    EnergySummary {
        total_pj: total,
        total_joules: total * 1e-12,
        accurate_total_pj: accurate,
        savings_percent: pct(accurate - total, accurate),
        breakdown: rows
            .iter()
            .map(|&(kind, count, energy_pj)| KindEnergy {
                kind,
                count,
                energy_pj,
                share_percent: pct(energy_pj, total),
            })
            .collect(),
    }
}

/// Energy of `counts` with every operation exact.
pub fn energy_estimate(counts: &OpCounts, u: &UnitEnergies) -> EnergySummary {
    summarize(counts, u, counts.multiplications as f64 * u.multiplication)
}

/// Energy with every multiplication costed at `power_ratio` times the exact
/// multiplier's energy.
pub fn energy_uniform(counts: &OpCounts, u: &UnitEnergies, power_ratio: f64) -> Result<EnergySummary> {
    if !(power_ratio >= 0.0 && power_ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!("power ratio {power_ratio} must be non-negative")));
    }
    Ok(summarize(counts, u, counts.multiplications as f64 * u.multiplication * power_ratio))
}

/// Energy with each site's multiplications costed at its planned
/// component's power relative to the plan's exact component. Sites absent
/// from the plan stay exact.
pub fn energy_with_plan(
    sites: &[SiteOps],
    u: &UnitEnergies,
    plan: &SelectionPlan,
    catalog: &Catalog,
) -> Result<EnergySummary> {
    let exact = catalog.get(&plan.exact_component).ok_or_else(|| {
        Error::InvalidArgument(format!("exact component '{}' not in catalog", plan.exact_component))
    })?;
    let chosen: BTreeMap<&str, &str> = plan
        .entries
        .iter()
        .map(|e| (e.site.as_str(), e.component.as_str()))
        .collect();
    let mut total = OpCounts::default();
    let mut mul_pj = 0.0;
    for s in sites {
        let ratio = match chosen.get(s.site.as_str()) {
            Some(name) => {
                let entry = catalog
                    .get(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("component '{name}' not in catalog")))?;
                entry.power_uw / exact.power_uw
            }
            None => 1.0,
        };
        mul_pj += s.counts.multiplications as f64 * u.multiplication * ratio;
        total += s.counts;
    }
    Ok(summarize(&total, u, mul_pj))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_hand_count() {
        let c = conv_ops(1, 3, 1);
        assert_eq!((c.multiplications, c.additions), (9, 8));
    }

    #[test]
    fn zero_counts_zero_energy() {
        let s = energy_estimate(&OpCounts::default(), &UnitEnergies::default());
        assert_eq!(s.total_pj, 0.0);
        assert_eq!(s.savings_percent, 0.0);
    }

    #[test]
    fn deepcaps_multiplier_share() {
        let s = energy_estimate(&OpCounts::deepcaps(), &UnitEnergies::default());
        let mul = s.share(OpKind::Multiplication);
        assert!((mul - 96.36).abs() < 0.05, "{mul}");
        assert!((s.total_joules * 1e3 - 1.1946).abs() < 1e-3);
    }
}
