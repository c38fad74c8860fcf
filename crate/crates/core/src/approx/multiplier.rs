use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Size of a product-table file: 65,536 little-endian `u16` products.
pub const LUT_BYTES: usize = 2 * 256 * 256;

#[derive(Clone, PartialEq, Eq)]
pub enum MultiplierKind {
    Exact,
    /// Zeroes the `k` least significant bits of both operands before an
    /// exact multiplication.
    OperandTruncate(u32),
    /// Full product table, indexed by `a * 256 + b`.
    Lut(Arc<[u16]>),
}

impl fmt::Debug for MultiplierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MultiplierKind::Exact => f.write_str("Exact"),
            MultiplierKind::OperandTruncate(k) => write!(f, "OperandTruncate({k})"),
            MultiplierKind::Lut(_) => f.write_str("Lut(..)"),
        }
    }
}

/// An 8x8-bit unsigned multiplier with a 16-bit product.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiplierModel {
    pub name: String,
    pub kind: MultiplierKind,
}

impl MultiplierModel {
    pub fn exact() -> Self {
        Self {
            name: "exact".into(),
            kind: MultiplierKind::Exact,
        }
    }

    pub fn operand_truncate(k: u32) -> Result<Self> {
        if k > 8 {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate {k} bits of an 8-bit operand"
            )));
        }
        Ok(Self {
            name: format!("trunc{k}"),
            kind: MultiplierKind::OperandTruncate(k),
        })
    }

    pub fn from_table(name: impl Into<String>, table: Vec<u16>) -> Result<Self> {
        if table.len() != 256 * 256 {
            return Err(Error::InvalidArgument(format!(
                "product table needs 65536 entries, got {}",
                table.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            kind: MultiplierKind::Lut(table.into()),
        })
    }

    pub fn from_lut_bytes(name: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != LUT_BYTES {
            return Err(Error::InvalidArgument(format!(
                "product table file must be {LUT_BYTES} bytes, got {}",
                bytes.len()
            )));
        }
        let table = bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Self::from_table(name, table)
    }

    pub fn load_lut(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "lut".into());
        Self::from_lut_bytes(name, &bytes)
    }

    /// Parses `exact`, `truncN` / `trunc:N`, or `lut:PATH`.
    pub fn parse(descriptor: &str) -> Result<Self> {
        if descriptor == "exact" {
            return Ok(Self::exact());
        }
        if let Some(path) = descriptor.strip_prefix("lut:") {
            return Self::load_lut(Path::new(path));
        }
        if let Some(k) = descriptor
            .strip_prefix("trunc:")
            .or_else(|| descriptor.strip_prefix("trunc"))
        {
            let k = k.parse::<u32>().map_err(|_| {
                Error::InvalidArgument(format!("bad truncation width in '{descriptor}'"))
            })?;
            return Self::operand_truncate(k);
        }
        Err(Error::InvalidArgument(format!(
            "unknown multiplier '{descriptor}' (expected exact, truncN or lut:PATH)"
        )))
    }

    #[inline]
    pub fn multiply(&self, a: u8, b: u8) -> u16 {
        match &self.kind {
            MultiplierKind::Exact => u16::from(a) * u16::from(b),
            MultiplierKind::OperandTruncate(k) => {
                let mask = (0xFFu32 >> k) << k;
                ((u32::from(a) & mask) * (u32::from(b) & mask)) as u16
            }
            MultiplierKind::Lut(table) => table[usize::from(a) * 256 + usize::from(b)],
        }
    }

    /// Arithmetic error `P'(a, b) - P(a, b)`.
    #[inline]
    pub fn error(&self, a: u8, b: u8) -> i64 {
        i64::from(self.multiply(a, b)) - i64::from(a) * i64::from(b)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.kind, MultiplierKind::Exact | MultiplierKind::OperandTruncate(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_and_truncated_products() {
        assert_eq!(MultiplierModel::exact().multiply(255, 255), 65025);
        let t4 = MultiplierModel::operand_truncate(4).unwrap();
        assert_eq!(t4.multiply(255, 255), 57600);
        let t8 = MultiplierModel::operand_truncate(8).unwrap();
        assert_eq!(t8.multiply(255, 255), 0);
        assert!(MultiplierModel::operand_truncate(9).is_err());
    }

    #[test]
    fn truncate_zero_is_exact_everywhere() {
        let t0 = MultiplierModel::operand_truncate(0).unwrap();
        let exact = MultiplierModel::exact();
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!(t0.multiply(a, b), exact.multiply(a, b));
            }
        }
    }

    #[test]
    fn lut_roundtrip_from_bytes() {
        let mut bytes = Vec::with_capacity(LUT_BYTES);
        for a in 0..256u32 {
            for b in 0..256u32 {
                bytes.extend_from_slice(&((a * b) as u16).to_le_bytes());
            }
        }
        let lut = MultiplierModel::from_lut_bytes("exactlut", &bytes).unwrap();
        assert_eq!(lut.multiply(17, 200), 3400);
        assert_eq!(lut.multiply(255, 255), 65025);
        assert!(MultiplierModel::from_lut_bytes("short", &bytes[..10]).is_err());
    }

    #[test]
    fn parse_descriptors() {
        assert_eq!(MultiplierModel::parse("exact").unwrap(), MultiplierModel::exact());
        assert_eq!(
            MultiplierModel::parse("trunc3").unwrap().kind,
            MultiplierKind::OperandTruncate(3)
        );
        assert_eq!(
            MultiplierModel::parse("trunc:2").unwrap().kind,
            MultiplierKind::OperandTruncate(2)
        );
        assert!(MultiplierModel::parse("wallace").is_err());
        assert!(MultiplierModel::parse("truncx").is_err());
    }
}
