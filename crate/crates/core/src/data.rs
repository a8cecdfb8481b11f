//! Unit-level data tables and higher-level classifications.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// Column-oriented table of unit-level values.
///
/// Columns keep their insertion order so that tables written back out have
/// a stable layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    unit_ids: Vec<String>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(unit_ids: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(unit_ids.len());
        for id in &unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate unit id {id}")));
            }
        }
        Ok(Dataset {
            unit_ids,
            names: Vec::new(),
            columns: Vec::new(),
        })
    }

    /// Builds a dataset whose unit ids are `prefix0, prefix1, ...`.
    pub fn with_sequential_ids(prefix: &str, n_units: usize) -> Self {
        Dataset {
            unit_ids: (0..n_units).map(|i| format!("{prefix}{i}")).collect(),
            names: Vec::new(),
            columns: Vec::new(),
        }
    }

    pub fn add_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_units() {
            return Err(Error::dimension(
                format!("column {name}"),
                self.n_units(),
                values.len(),
            ));
        }
        if let Some(k) = self.names.iter().position(|n| *n == name) {
            self.columns[k] = values;
        } else {
            self.names.push(name);
            self.columns.push(values);
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.columns[k].as_slice())
    }

    /// Looks up a column that a model needs, rejecting missing or non-finite values.
    pub fn model_column(&self, name: &str) -> Result<&[f64]> {
        let col = self
            .column(name)
            .ok_or_else(|| Error::InvalidModel(format!("column {name} not found in dataset")))?;
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "column {name} has a non-finite value for unit {}",
                self.unit_ids[i]
            )));
        }
        Ok(col)
    }

    /// Keeps only the units at the given positions, in the given order.
    pub fn select_units(&self, keep: &[usize]) -> Dataset {
        Dataset {
            unit_ids: keep.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| keep.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    pub fn unit_index(&self) -> HashMap<&str, usize> {
        self.unit_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

/// A named set of higher-level clusters (teachers, schools, neighbourhoods).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    name: String,
    labels: Vec<String>,
}

impl Classification {
    pub fn new(name: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        let name = name.into();
        if labels.is_empty() {
            return Err(Error::InvalidModel(format!(
                "classification {name} has no clusters"
            )));
        }
        let mut seen = HashSet::with_capacity(labels.len());
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidData(format!(
                    "duplicate cluster label {l} in classification {name}"
                )));
            }
        }
        Ok(Classification { name, labels })
    }

    /// Clusters labelled `prefix0 .. prefix{n-1}`.
    pub fn sequential(name: impl Into<String>, prefix: &str, n_clusters: usize) -> Result<Self> {
        Classification::new(
            name,
            (0..n_clusters).map(|j| format!("{prefix}{j}")).collect(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label_index(&self) -> HashMap<&str, usize> {
        self.labels
            .iter()
            .enumerate()
            .map(|(j, l)| (l.as_str(), j))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_unit_ids_rejected() {
        let err = Dataset::new(vec!["a".into(), "b".into(), "a".into()]).unwrap_err();
        assert!(matches!(err, Error::InvalidData(_)));
    }

    #[test]
    fn column_length_checked() {
        let mut d = Dataset::with_sequential_ids("s", 3);
        assert!(d.add_column("y", vec![1.0, 2.0]).is_err());
        d.add_column("y", vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(d.column("y"), Some(&[1.0, 2.0, 3.0][..]));
    }

    #[test]
    fn non_finite_rejected_at_model_time() {
        let mut d = Dataset::with_sequential_ids("s", 2);
        d.add_column("y", vec![1.0, f64::NAN]).unwrap();
        assert!(d.column("y").is_some());
        assert!(d.model_column("y").is_err());
        assert!(d.model_column("missing").is_err());
    }

    #[test]
    fn classification_needs_unique_labels() {
        assert!(Classification::new("t", vec![]).is_err());
        assert!(Classification::new("t", vec!["A".into(), "A".into()]).is_err());
        let c = Classification::new("t", vec!["A".into(), "B".into()]).unwrap();
        assert_eq!(c.n_clusters(), 2);
        assert_eq!(c.index_of("B"), Some(1));
    }
}
