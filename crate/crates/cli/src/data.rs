//! CSV interchange for study and reference samples: a header row of
//! covariate names, plus a `y` column for study samples.

use std::path::Path;

use dtgmm::{StudySample, Table};

use crate::CliError;

pub const OUTCOME: &str = "y";

fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let names: Vec<String> = rd
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Input(format!("{}: row {} has non-numeric value `{v}`", path.display(), i + 2)))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok((names, rows))
}

pub fn read_reference(path: &Path) -> Result<Table, CliError> {
    let (names, rows) = read_columns(path)?;
    if names.iter().any(|n| n == OUTCOME) {
        return Err(CliError::Input(format!("{}: reference samples carry no `{OUTCOME}` column", path.display())));
    }
    Table::new(names, &rows).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_study(path: &Path) -> Result<StudySample, CliError> {
    let (names, rows) = read_columns(path)?;
    let yk = names
        .iter()
        .position(|n| n == OUTCOME)
        .ok_or_else(|| CliError::Input(format!("{}: study sample needs a `{OUTCOME}` column", path.display())))?;
    let y: Vec<f64> = rows.iter().map(|r| r[yk]).collect();
    let cov_names: Vec<String> = names.iter().filter(|n| *n != OUTCOME).cloned().collect();
    let cov_rows: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|mut r| {
            r.remove(yk);
            r
        })
        .collect();
    let table = Table::new(cov_names, &cov_rows).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    StudySample::new(table, y).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(io)?;
    for r in rows {
        w.write_record(r.iter().map(f64::to_string)).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reference(path: &Path, table: &Table) -> Result<(), CliError> {
    write_rows(path, table.names().to_vec(), table.rows().map(<[f64]>::to_vec))
}

pub fn write_study(path: &Path, study: &StudySample) -> Result<(), CliError> {
    let mut header = study.covariates.names().to_vec();
    header.push(OUTCOME.into());
    let rows = study.covariates.rows().zip(&study.y).map(|(r, y)| {
        let mut v = r.to_vec();
        v.push(*y);
        v
    });
    write_rows(path, header, rows)
}
