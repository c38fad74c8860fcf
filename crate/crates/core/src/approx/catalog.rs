use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../data/mul8u_catalog.json");

/// Published characteristics of one 8-bit multiplier. Noise figures are
/// range-scaled and dimensionless; `modeled` values come from uniform
/// operands, `real` values from a trained network's operand distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub power_uw: f64,
    pub area_um2: f64,
    pub na_modeled: f64,
    pub nm_modeled: f64,
    pub na_real: f64,
    pub nm_real: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Catalog {
    pub entries: Vec<CatalogEntry>,
}

impl Catalog {
    /// The 15 EvoApprox8B `mul8u_*` components shipped with the crate.
    pub fn bundled() -> Self {
        parse_catalog(BUNDLED).expect("bundled catalog is well-formed")
    }

    pub fn get(&self, name: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// The accurate reference: the highest-power entry with zero noise.
    pub fn exact_entry(&self) -> Option<&CatalogEntry> {
        self.entries
            .iter()
            .filter(|e| e.nm_modeled == 0.0 && e.na_modeled == 0.0)
            .max_by(|a, b| a.power_uw.total_cmp(&b.power_uw))
    }
}

pub fn parse_catalog(text: &str) -> Result<Catalog> {
    if text.trim().is_empty() {
        return Ok(Catalog::default());
    }
    let entries: Vec<CatalogEntry> = serde_json::from_str(text).map_err(|e| Error::CatalogParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    for e in &entries {
        if !(e.power_uw > 0.0 && e.area_um2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "catalog entry '{}' must have positive power and area",
                e.name
            )));
        }
        if !(e.nm_modeled >= 0.0 && e.nm_real >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "catalog entry '{}' has negative noise magnitude",
                e.name
            )));
        }
    }
    Ok(Catalog { entries })
}

pub fn load_catalog(path: &Path) -> Result<Catalog> {
    parse_catalog(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_rows() {
        let c = Catalog::bundled();
        assert_eq!(c.len(), 15);
        let ngr = c.get("NGR").unwrap();
        assert_eq!((ngr.na_modeled, ngr.nm_modeled), (0.0001, 0.0008));
        assert_eq!(ngr.power_uw, 276.0);
        let dm1 = c.get("DM1").unwrap();
        assert_eq!((dm1.power_uw, dm1.nm_modeled), (195.0, 0.0025));
        let exact = c.get("1JFF").unwrap();
        assert_eq!((exact.nm_modeled, exact.na_modeled, exact.power_uw), (0.0, 0.0, 391.0));
        assert_eq!(c.exact_entry().unwrap().name, "1JFF");
    }

    #[test]
    fn empty_text_is_empty_catalog() {
        assert!(parse_catalog("").unwrap().is_empty());
        assert!(parse_catalog("  \n").unwrap().is_empty());
        assert!(parse_catalog("[]").unwrap().is_empty());
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "[\n  {\"name\": \"A\", \"power_uw\": 1,\n  oops }\n]";
        match parse_catalog(text) {
            Err(Error::CatalogParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_nonpositive_power() {
        let text = r#"[{"name": "Z", "power_uw": 0, "area_um2": 1, "na_modeled": 0,
            "nm_modeled": 0, "na_real": 0, "nm_real": 0}]"#;
        assert!(parse_catalog(text).is_err());
    }
}
