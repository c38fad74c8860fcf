use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::site::{GroupId, Site};

pub const CSV_HEADER: &str = "target_kind,target_name,group,nm,na,rep,accuracy";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Group,
    Layer,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Group => "group",
            TargetKind::Layer => "layer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub target_kind: TargetKind,
    /// Group name for group rows, site name for layer rows.
    pub target_name: String,
    pub group: GroupId,
    pub nm: f64,
    pub na: f64,
    pub rep: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResilienceReport {
    /// Accuracy without noise.
    pub baseline: f64,
    pub rows: Vec<ReportRow>,
}

impl ResilienceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.target_kind.as_str(),
                r.target_name,
                r.group,
                r.nm,
                r.na,
                r.rep,
                r.accuracy
            );
        }
        out
    }

    /// Mean accuracy over repetitions for each NM of one target, sorted by NM.
    pub fn curve(&self, kind: TargetKind, name: &str) -> Vec<(f64, f64)> {
        let mut by_nm: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.target_kind == kind && r.target_name == name) {
            let e = by_nm.entry(r.nm.to_bits()).or_insert((r.nm, 0.0, 0));
            e.1 += r.accuracy;
            e.2 += 1;
        }
        let mut v: Vec<(f64, f64)> = by_nm.into_values().map(|(nm, s, n)| (nm, s / n as f64)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    /// Mean accuracy drop in percentage points at `nm` for one target.
    pub fn mean_drop_pp(&self, kind: TargetKind, name: &str, nm: f64) -> Option<f64> {
        self.curve(kind, name)
            .into_iter()
            .find(|(n, _)| *n == nm)
            .map(|(_, acc)| (self.baseline - acc) * 100.0)
    }

    /// Per group: `(nm, mean, min, max)` accuracy over repetitions of the
    /// group rows, sorted by NM.
    pub fn group_curves(&self) -> BTreeMap<GroupId, Vec<(f64, f64, f64, f64)>> {
        let mut acc: BTreeMap<GroupId, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.target_kind == TargetKind::Group) {
            acc.entry(r.group)
                .or_default()
                .entry(r.nm.to_bits())
                .or_default()
                .push(r.accuracy);
        }
        acc.into_iter()
            .map(|(g, cells)| {
                let mut rows: Vec<_> = cells
                    .into_iter()
                    .map(|(bits, v)| {
                        let mean = v.iter().sum::<f64>() / v.len() as f64;
                        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        (f64::from_bits(bits), mean, min, max)
                    })
                    .collect();
                rows.sort_by(|a, b| a.0.total_cmp(&b.0));
                (g, rows)
            })
            .collect()
    }
}

/// Parses report rows from CSV with the exact [`CSV_HEADER`].
pub fn parse_rows(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Report(format!(
                "header must be '{CSV_HEADER}', found '{}'",
                h.trim()
            )))
        }
        None => return Err(Error::Report("empty report".into())),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Report(format!("line {}: {what}", n + 1));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(bad(&format!("expected 7 fields, found {}", f.len())));
        }
        let target_kind = match f[0] {
            "group" => TargetKind::Group,
            "layer" => TargetKind::Layer,
            other => return Err(bad(&format!("unknown target_kind '{other}'"))),
        };
        let num = |i: usize, name: &str| f[i].parse::<f64>().map_err(|_| bad(&format!("bad {name} '{}'", f[i])));
        let row = ReportRow {
            target_kind,
            target_name: f[1].to_string(),
            group: f[2].parse().map_err(|_| bad(&format!("unknown group '{}'", f[2])))?,
            nm: num(3, "nm")?,
            na: num(4, "na")?,
            rep: f[5].parse().map_err(|_| bad(&format!("bad rep '{}'", f[5])))?,
            accuracy: num(6, "accuracy")?,
        };
        if !(0.0..=1.0).contains(&row.accuracy) {
            return Err(bad(&format!("accuracy {} outside [0, 1]", row.accuracy)));
        }
        if !(row.nm >= 0.0) {
            return Err(bad(&format!("negative nm {}", row.nm)));
        }
        rows.push(row);
    }
    Ok(rows)
}

impl ResilienceReport {
    pub fn from_csv(text: &str, baseline: f64) -> Result<Self> {
        Ok(Self {
            baseline,
            rows: parse_rows(text)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Resilient,
    NonResilient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetMark {
    pub target_name: String,
    pub group: GroupId,
    pub mark: Mark,
    pub mean_drop_pp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marks {
    pub baseline: f64,
    pub threshold_pp: f64,
    pub probe_nm: f64,
    pub groups: Vec<TargetMark>,
    pub layers: Vec<TargetMark>,
}

impl Marks {
    pub fn group(&self, g: GroupId) -> Option<Mark> {
        self.groups.iter().find(|m| m.group == g).map(|m| m.mark)
    }

    pub fn layer(&self, site: &str) -> Option<Mark> {
        self.layers.iter().find(|m| m.target_name == site).map(|m| m.mark)
    }
}

/// Marks every swept target Resilient iff its mean drop at `probe_nm` is at
/// most `threshold_pp` percentage points.
pub fn mark_resilient(report: &ResilienceReport, threshold_pp: f64, probe_nm: f64) -> Result<Marks> {
    if !(threshold_pp >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold_pp} must be >= 0")));
    }
    let mut targets: Vec<(TargetKind, String, GroupId)> = report
        .rows
        .iter()
        .map(|r| (r.target_kind, r.target_name.clone(), r.group))
        .collect();
    targets.sort();
    targets.dedup();
    let mut groups = Vec::new();
    let mut layers = Vec::new();
    for (kind, name, group) in targets {
        let drop = report.mean_drop_pp(kind, &name, probe_nm).ok_or_else(|| {
            Error::Report(format!("no rows at probe NM {probe_nm} for {} '{name}'", kind.as_str()))
        })?;
        let mark = if drop <= threshold_pp {
            Mark::Resilient
        } else {
            Mark::NonResilient
        };
        let m = TargetMark {
            target_name: name,
            group,
            mark,
            mean_drop_pp: drop,
        };
        match kind {
            TargetKind::Group => groups.push(m),
            TargetKind::Layer => layers.push(m),
        }
    }
    groups.sort_by_key(|m| m.group);
    Ok(Marks {
        baseline: report.baseline,
        threshold_pp,
        probe_nm,
        groups,
        layers,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteTolerance {
    pub site: String,
    pub group: GroupId,
    /// Largest noise magnitude the site tolerates; 0 when none was measured
    /// as tolerable.
    pub tolerated_nm: f64,
    /// Mean accuracy drop measured at `tolerated_nm`.
    pub estimated_drop_pp: f64,
    /// Whether the estimate comes from the site's own sweep or its group's.
    pub source: TargetKind,
}

/// Tolerated NM of a sweep curve: the largest grid NM such that it and
/// every smaller grid NM stay within the threshold. A zero threshold
/// tolerates nothing.
fn tolerance(curve: &[(f64, f64)], baseline: f64, threshold_pp: f64) -> (f64, f64) {
    let mut best = (0.0, 0.0);
    if threshold_pp <= 0.0 {
        return best;
    }
    for &(nm, acc) in curve {
        let drop = (baseline - acc) * 100.0;
        if drop > threshold_pp {
            break;
        }
        best = (nm, drop.max(0.0));
    }
    best
}

/// Tolerated NM per site, from the site's own layer sweep when it has one
/// and from its group's sweep otherwise.
pub fn site_tolerances(sites: &[Site], report: &ResilienceReport, marks: &Marks) -> Result<Vec<SiteTolerance>> {
    sites
        .iter()
        .map(|s| {
            let own = report.curve(TargetKind::Layer, &s.layer);
            let (curve, source) = if own.is_empty() {
                (report.curve(TargetKind::Group, s.group.as_str()), TargetKind::Group)
            } else {
                (own, TargetKind::Layer)
            };
            if curve.is_empty() {
                return Err(Error::Report(format!("no sweep rows cover site '{}'", s.layer)));
            }
            let (tolerated_nm, estimated_drop_pp) = tolerance(&curve, report.baseline, marks.threshold_pp);
            Ok(SiteTolerance {
                site: s.layer.clone(),
                group: s.group,
                tolerated_nm,
                estimated_drop_pp,
                source,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kind: TargetKind, name: &str, group: GroupId, nm: f64, rep: usize, accuracy: f64) -> ReportRow {
        ReportRow {
            target_kind: kind,
            target_name: name.into(),
            group,
            nm,
            na: 0.0,
            rep,
            accuracy,
        }
    }

    fn sample() -> ResilienceReport {
        let g = TargetKind::Group;
        ResilienceReport {
            baseline: 0.9,
            rows: vec![
                row(g, "softmax", GroupId::Softmax, 0.01, 0, 0.9),
                row(g, "softmax", GroupId::Softmax, 0.01, 1, 0.9),
                row(g, "softmax", GroupId::Softmax, 0.1, 0, 0.895),
                row(g, "mac_outputs", GroupId::MacOutputs, 0.01, 0, 0.4),
                row(g, "mac_outputs", GroupId::MacOutputs, 0.1, 0, 0.1),
            ],
        }
    }

    #[test]
    fn marks_follow_threshold() {
        let m = mark_resilient(&sample(), 1.0, 0.01).unwrap();
        assert_eq!(m.group(GroupId::Softmax), Some(Mark::Resilient));
        assert_eq!(m.group(GroupId::MacOutputs), Some(Mark::NonResilient));
        assert!(mark_resilient(&sample(), 1.0, 0.02).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let r = sample();
        let text = r.to_csv();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(ResilienceReport::from_csv(&text, 0.9).unwrap(), r);
        assert!(parse_rows("bad,header\n").is_err());
        assert!(parse_rows(&format!("{CSV_HEADER}\ngroup,x,softmax,0.1,0,0,1.5\n")).is_err());
        assert!(parse_rows(&format!("{CSV_HEADER}\nnode,x,softmax,0.1,0,0,0.5\n")).is_err());
    }

    #[test]
    fn tolerance_uses_prefix_rule() {
        let curve = [(0.001, 0.9), (0.01, 0.85), (0.1, 0.9)];
        assert_eq!(tolerance(&curve, 0.9, 1.0), (0.001, 0.0));
        assert_eq!(tolerance(&curve, 0.9, 10.0).0, 0.1);
        assert_eq!(tolerance(&curve, 0.9, 0.0), (0.0, 0.0));
    }

    #[test]
    fn group_curves_aggregate_reps() {
        let c = sample().group_curves();
        let sm = &c[&GroupId::Softmax];
        assert_eq!(sm.len(), 2);
        assert_eq!(sm[0], (0.01, 0.9, 0.9, 0.9));
    }
}
