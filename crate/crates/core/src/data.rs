//! Column-named numeric tables for study and reference samples.

use crate::error::{Error, Result};

/// Dense row-major table of covariate values with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    names: Vec<String>,
    data: Vec<f64>,
}

impl Table {
    pub fn new(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * names.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != names.len() {
                return Err(Error::Dimension(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    names.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(names, data)
    }

    pub fn from_row_major(names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidInput("table needs at least one column".into()));
        }
        if data.len() % names.len() != 0 {
            return Err(Error::Dimension(format!(
                "{} values do not fill rows of width {}",
                data.len(),
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::InvalidInput(format!("duplicate column `{name}`")));
            }
        }
        Ok(Self { names, data })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn nrows(&self) -> usize {
        self.data.len() / self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.ncols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.ncols())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    /// Indices of `names` in this table, failing with every name that is missing.
    pub fn resolve(&self, names: &[String]) -> Result<Vec<usize>> {
        let mut missing = Vec::new();
        let idx: Vec<usize> = names
            .iter()
            .filter_map(|n| {
                let i = self.column_index(n);
                if i.is_none() {
                    missing.push(n.clone());
                }
                i
            })
            .collect();
        if missing.is_empty() {
            Ok(idx)
        } else {
            Err(Error::UnresolvedNames(missing))
        }
    }

    /// New table holding only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Table> {
        let idx = self.resolve(names)?;
        let data = self
            .rows()
            .flat_map(|r| idx.iter().map(move |&k| r[k]))
            .collect();
        Table::from_row_major(names.to_vec(), data)
    }

    /// New table with the given rows (indices may repeat).
    pub fn take_rows(&self, rows: &[usize]) -> Table {
        let data = rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Table {
            names: self.names.clone(),
            data,
        }
    }
}

/// Study sample: observed covariates plus outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySample {
    pub covariates: Table,
    pub y: Vec<f64>,
}

impl StudySample {
    pub fn new(covariates: Table, y: Vec<f64>) -> Result<Self> {
        if covariates.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "{} covariate rows but {} outcomes",
                covariates.nrows(),
                y.len()
            )));
        }
        Ok(Self { covariates, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn select_reorders_columns() {
        let t = Table::new(names(&["a", "b", "c"]), &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let s = t.select(&names(&["c", "a"])).unwrap();
        assert_eq!(s.row(1), &[6.0, 4.0]);
    }

    #[test]
    fn resolve_reports_all_missing() {
        let t = Table::new(names(&["a"]), &[vec![1.0]]).unwrap();
        match t.resolve(&names(&["x", "a", "y"])) {
            Err(Error::UnresolvedNames(m)) => assert_eq!(m, names(&["x", "y"])),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_ragged_and_duplicate() {
        assert!(Table::new(names(&["a", "b"]), &[vec![1.0]]).is_err());
        assert!(Table::new(names(&["a", "a"]), &[vec![1.0, 2.0]]).is_err());
    }
}
