use crate::error::{Error, Result};

/// Column-major table of named numeric columns with a common row count.
///
/// Used for raw ensemble summaries, standardized anomalies and the design
/// matrices handed to the estimators. Missing values are stored as NaN.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl Frame {
    pub fn new(n_rows: usize) -> Self {
        Frame {
            names: Vec::new(),
            columns: Vec::new(),
            n_rows,
        }
    }

    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |c| c.1.len());
        let mut frame = Frame::new(n_rows);
        for (name, values) in columns {
            frame.push(name, values)?;
        }
        Ok(frame)
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_rows {
            return Err(Error::Data(format!(
                "column {name} has {} rows, frame has {}",
                values.len(),
                self.n_rows
            )));
        }
        if self.index_of(&name).is_some() {
            return Err(Error::Data(format!("duplicate column {name}")));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.columns[i].as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .ok_or_else(|| Error::Data(format!("missing covariate column {name}")))
    }

    pub fn column_at(&self, index: usize) -> &[f64] {
        &self.columns[index]
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        let i = self.index_of(name)?;
        Some(&mut self.columns[i])
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .zip(&self.columns)
            .map(|(n, c)| (n.as_str(), c.as_slice()))
    }

    /// New frame holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Frame {
        Frame {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            n_rows: rows.len(),
        }
    }

    /// New frame restricted to the named columns.
    pub fn select_columns(&self, names: &[String]) -> Result<Frame> {
        let mut out = Frame::new(self.n_rows);
        for name in names {
            out.push(name.clone(), self.require(name)?.to_vec())?;
        }
        Ok(out)
    }

    /// Append copies of `other`'s rows. Column names and order must match.
    pub fn append_rows(&mut self, other: &Frame) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Data(
                "cannot append frames with different columns".into(),
            ));
        }
        for (dst, src) in self.columns.iter_mut().zip(&other.columns) {
            dst.extend_from_slice(src);
        }
        self.n_rows += other.n_rows;
        Ok(())
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}
