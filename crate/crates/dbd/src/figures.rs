//! CSV tables backing the figures.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FigureKind {
    RangeDiagram,
    ParameterSlices,
    MseCurves,
    TermDecomposition,
}

impl FigureKind {
    pub const ALL: [FigureKind; 4] = [
        FigureKind::RangeDiagram,
        FigureKind::ParameterSlices,
        FigureKind::MseCurves,
        FigureKind::TermDecomposition,
    ];

    /// Leading columns; kinds with per-parameter columns append them.
    pub fn base_header(self) -> &'static [&'static str] {
        match self {
            FigureKind::RangeDiagram => &[
                "condition",
                "value",
                "split",
                "source",
                "c_minus_min",
                "c_plus_max",
                "c_minus_lo",
                "c_minus_hi",
                "c_plus_lo",
                "c_plus_hi",
            ],
            FigureKind::ParameterSlices => &["condition", "value", "split", "source", "t"],
            FigureKind::MseCurves => &["condition", "value", "split", "mode", "mse"],
            FigureKind::TermDecomposition => &["condition", "value", "split", "mode", "t"],
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            FigureKind::RangeDiagram => "range.csv",
            FigureKind::ParameterSlices => "slices.csv",
            FigureKind::MseCurves => "mse.csv",
            FigureKind::TermDecomposition => "terms.csv",
        }
    }
}

impl fmt::Display for FigureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FigureKind::RangeDiagram => "range-diagram",
            FigureKind::ParameterSlices => "parameter-slices",
            FigureKind::MseCurves => "mse-curves",
            FigureKind::TermDecomposition => "term-decomposition",
        };
        f.write_str(s)
    }
}

impl FromStr for FigureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Usage(format!("unknown figure kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureTable {
    pub kind: FigureKind,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl FigureTable {
    pub fn new(kind: FigureKind, extra: &[String]) -> Self {
        let mut header: Vec<String> = kind.base_header().iter().map(|s| s.to_string()).collect();
        header.extend_from_slice(extra);
        Self {
            kind,
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Usage(format!(
                "{} row has {} fields, header has {}",
                self.kind,
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_table(path, &self.header, &self.rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse_and_print() {
        for k in FigureKind::ALL {
            assert_eq!(k.to_string().parse::<FigureKind>().unwrap(), k);
        }
        assert!("histogram".parse::<FigureKind>().is_err());
    }

    #[test]
    fn range_schema() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = FigureTable::new(FigureKind::RangeDiagram, &[]);
        let row: Vec<String> = [
            "ip3_0.50", "0.5", "validate", "data", "0.1", "0.9", "0.05", "0.15", "0.8", "1.0",
        ]
        .map(String::from)
        .to_vec();
        t.push(row).unwrap();
        assert!(t.push(vec!["x".into()]).is_err());
        let p = dir.path().join(FigureKind::RangeDiagram.file_name());
        t.write(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "condition,value,split,source,c_minus_min,c_plus_max,c_minus_lo,c_minus_hi,c_plus_lo,c_plus_hi"
        );
    }

    #[test]
    fn slices_schema_appends_parameters() {
        let t = FigureTable::new(FigureKind::ParameterSlices, &["b_1".into(), "sigma2".into()]);
        assert_eq!(
            t.header,
            ["condition", "value", "split", "source", "t", "b_1", "sigma2"]
        );
    }

    #[test]
    fn mse_and_terms_schema() {
        assert_eq!(FigureTable::new(FigureKind::MseCurves, &[]).header.len(), 5);
        let t = FigureTable::new(FigureKind::TermDecomposition, &["b[0]".into(), "total".into()]);
        assert_eq!(t.header.last().unwrap(), "total");
        assert_eq!(t.header[3], "mode");
    }
}
