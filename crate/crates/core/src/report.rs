//! Column layouts of the CSV files a run writes, shared by the writers and by
//! anything that reads a run directory back.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::fields::CellField;
use crate::solver::SWEEP_COLUMNS;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvSchema {
    pub name: &'static str,
    pub file: &'static str,
    pub columns: Vec<String>,
}

fn owned(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

/// Cell centres and exact cell means of the density.
pub fn density_samples(d: usize) -> CsvSchema {
    let mut columns: Vec<String> = (1..=d).map(|a| format!("x{a}")).collect();
    columns.push("value".into());
    CsvSchema {
        name: "density-samples",
        file: "density_samples.csv",
        columns,
    }
}

pub fn discrepancy() -> CsvSchema {
    CsvSchema {
        name: "discrepancy",
        file: "discrepancy.csv",
        columns: owned(&["order", "rect_id", "n", "discrepancy", "lower_bound", "holds"]),
    }
}

pub fn classification() -> CsvSchema {
    CsvSchema {
        name: "classification",
        file: "classification.csv",
        columns: owned(&[
            "order",
            "rect_id",
            "property1_witness",
            "property1_margin",
            "property2_witness",
            "A_h",
            "status",
        ]),
    }
}

pub fn sweep() -> CsvSchema {
    CsvSchema {
        name: "sweep",
        file: "sweep.csv",
        columns: owned(&SWEEP_COLUMNS),
    }
}

/// One file per suite, `verify_<suite>.csv`.
pub fn verify() -> CsvSchema {
    CsvSchema {
        name: "verify",
        file: "verify_*.csv",
        columns: owned(&["suite", "trial", "seed", "context", "lhs", "rhs", "slack", "tolerance", "holds"]),
    }
}

impl CsvSchema {
    /// Checks the header against the schema and returns the number of data rows.
    pub fn check(&self, r: impl BufRead) -> Result<usize> {
        let mut lines = r.lines();
        let head = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Parse(format!("{}: empty file", self.name)))?;
        let got: Vec<&str> = head.trim_end().split(',').collect();
        if got != self.columns.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Parse(format!(
                "{}: header `{}` does not match `{}`",
                self.name,
                head.trim_end(),
                self.columns.join(",")
            )));
        }
        let mut rows = 0;
        for line in lines {
            if !line?.trim().is_empty() {
                rows += 1;
            }
        }
        Ok(rows)
    }
}

/// Writes `x1,...,xd,value` at every cell centre.
pub fn write_cell_samples(field: &CellField, mut w: impl Write) -> Result<()> {
    let grid = field.grid();
    writeln!(w, "{}", density_samples(grid.dim()).columns.join(","))?;
    for (k, v) in field.values().iter().enumerate() {
        let centre = grid.cell_center(&grid.cell_multi_index(k));
        let coords: Vec<String> = centre.iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{},{v}", coords.join(","))?;
    }
    Ok(())
}
