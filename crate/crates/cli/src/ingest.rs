//! Reading the data CSV and long-format membership CSVs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use mmfit_core::design::ROW_SUM_RENORMALIZE_TOL;
use mmfit_core::{Classification, Dataset, Membership, MembershipDesign};

use crate::error::{CliError, Result};

pub const UNIT_ID: &str = "unit_id";
pub const MEMBERSHIP_COLUMNS: [&str; 4] = ["unit_id", "classification", "cluster_id", "weight"];

const MISSING: [&str; 3] = ["", "NA", "NaN"];

/// Data file contents. Columns that did not parse as numbers are kept out of
/// the dataset and remembered so that using one reports the offending line.
#[derive(Debug, Clone)]
pub struct DataTable {
    pub path: PathBuf,
    pub data: Dataset,
    bad_columns: BTreeMap<String, (u64, String)>,
}

impl DataTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .from_path(path)
            .map_err(|e| CliError::input(path, None, e.to_string()))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::input(path, Some(1), e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let id_col = header
            .iter()
            .position(|h| h == UNIT_ID)
            .ok_or_else(|| CliError::input(path, Some(1), format!("missing column {UNIT_ID}")))?;
        let mut ids = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        let mut bad: BTreeMap<String, (u64, String)> = BTreeMap::new();
        let mut seen: HashMap<String, u64> = HashMap::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = k as u64 + 2;
            let rec = rec.map_err(|e| CliError::input(path, Some(line), e.to_string()))?;
            let id = rec[id_col].trim().to_string();
            if id.is_empty() {
                return Err(CliError::input(path, Some(line), "empty unit_id"));
            }
            if let Some(first) = seen.insert(id.clone(), line) {
                return Err(CliError::input(
                    path,
                    Some(line),
                    format!("unit_id {id} already appears on line {first}"),
                ));
            }
            ids.push(id);
            for (c, field) in rec.iter().enumerate() {
                if c == id_col {
                    continue;
                }
                let field = field.trim();
                let v = if MISSING.contains(&field) {
                    f64::NAN
                } else {
                    match field.parse::<f64>() {
                        Ok(v) => v,
                        Err(_) => {
                            bad.entry(header[c].clone())
                                .or_insert_with(|| (line, field.to_string()));
                            f64::NAN
                        }
                    }
                };
                columns[c].push(v);
            }
        }
        let mut data = Dataset::new(ids)?;
        for (c, (name, col)) in header.iter().zip(columns).enumerate() {
            if c != id_col && !bad.contains_key(name) {
                data.add_column(name.clone(), col)?;
            }
        }
        Ok(DataTable {
            path: path.to_path_buf(),
            data,
            bad_columns: bad,
        })
    }

    /// Checks that `name` exists and is numeric.
    pub fn require_column(&self, name: &str) -> Result<()> {
        if let Some((line, value)) = self.bad_columns.get(name) {
            return Err(CliError::input(
                &self.path,
                Some(*line),
                format!("column {name}: cannot parse {value:?} as a number"),
            ));
        }
        if self.data.column(name).is_none() {
            return Err(CliError::input(&self.path, Some(1), format!("missing column {name}")));
        }
        Ok(())
    }
}

/// Orders labels so that embedded numbers compare by value (`c2 < c10`).
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for (x, y) in ca.iter().zip(&cb) {
        let ord = match (x, y) {
            ((true, x), (true, y)) => {
                let (xt, yt) = (x.trim_start_matches('0'), y.trim_start_matches('0'));
                xt.len().cmp(&yt.len()).then(xt.cmp(yt)).then(x.len().cmp(&y.len()))
            }
            ((_, x), (_, y)) => x.cmp(y),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len())
}

struct Entry {
    line: u64,
    unit: usize,
    cluster: String,
    weight: f64,
}

/// Reads membership files into one design per classification, in order of
/// first appearance across the files. Cluster labels are ordered naturally;
/// a zero-weight row declares a cluster without making the unit a member.
///
/// Every unit in `data` must have at least one positive weight in every
/// classification. Rows whose weights do not sum to one within tolerance are
/// rejected unless `normalize` is set.
pub fn read_memberships(paths: &[PathBuf], data: &Dataset, normalize: bool) -> Result<Vec<MembershipDesign>> {
    let index = data.unit_index();
    let mut order: Vec<String> = Vec::new();
    let mut by_class: HashMap<String, (PathBuf, Vec<Entry>)> = HashMap::new();
    for path in paths {
        let mut rdr = csv::ReaderBuilder::new()
            .from_path(path)
            .map_err(|e| CliError::input(path, None, e.to_string()))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::input(path, Some(1), e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut pos = [0usize; 4];
        for (slot, name) in pos.iter_mut().zip(MEMBERSHIP_COLUMNS) {
            *slot = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::input(path, Some(1), format!("missing column {name}")))?;
        }
        for (k, rec) in rdr.records().enumerate() {
            let line = k as u64 + 2;
            let rec = rec.map_err(|e| CliError::input(path, Some(line), e.to_string()))?;
            let field = |c: usize| rec[pos[c]].trim();
            let unit = *index
                .get(field(0))
                .ok_or_else(|| CliError::input(path, Some(line), format!("unknown unit_id {}", field(0))))?;
            let class = field(1);
            let cluster = field(2);
            if class.is_empty() || cluster.is_empty() {
                return Err(CliError::input(path, Some(line), "empty classification or cluster_id"));
            }
            let weight: f64 = field(3).parse().map_err(|_| {
                CliError::input(path, Some(line), format!("cannot parse weight {:?}", field(3)))
            })?;
            if !weight.is_finite() || weight < 0.0 {
                return Err(CliError::input(
                    path,
                    Some(line),
                    format!("weight must be finite and non-negative, got {weight}"),
                ));
            }
            let slot = by_class.entry(class.to_string()).or_insert_with(|| {
                order.push(class.to_string());
                (path.clone(), Vec::new())
            });
            slot.1.push(Entry {
                line,
                unit,
                cluster: cluster.to_string(),
                weight,
            });
        }
    }

    let mut designs = Vec::with_capacity(order.len());
    for name in order {
        let (path, entries) = by_class.remove(&name).expect("recorded above");
        designs.push(build_design(&name, &path, entries, data, normalize)?);
    }
    Ok(designs)
}

fn build_design(
    name: &str,
    path: &Path,
    entries: Vec<Entry>,
    data: &Dataset,
    normalize: bool,
) -> Result<MembershipDesign> {
    let mut labels: Vec<&str> = entries.iter().map(|e| e.cluster.as_str()).collect();
    labels.sort_by(|a, b| natural_cmp(a, b));
    labels.dedup();
    let classification = Classification::new(name, labels.iter().map(|s| s.to_string()).collect())?;
    let label_index = classification.label_index();

    let n = data.n_units();
    let mut rows: Vec<Vec<Membership>> = vec![Vec::new(); n];
    let mut first_line: Vec<Option<u64>> = vec![None; n];
    for e in &entries {
        let cluster = label_index[e.cluster.as_str()];
        first_line[e.unit].get_or_insert(e.line);
        if rows[e.unit].iter().any(|m| m.cluster == cluster) {
            return Err(CliError::input(
                path,
                Some(e.line),
                format!("unit {} listed twice in cluster {}", data.unit_ids()[e.unit], e.cluster),
            ));
        }
        if e.weight > 0.0 {
            rows[e.unit].push(Membership::new(cluster, e.weight));
        }
    }
    for (i, row) in rows.iter_mut().enumerate() {
        let unit = &data.unit_ids()[i];
        if row.is_empty() {
            return Err(CliError::input(
                path,
                first_line[i],
                format!("unit {unit} has no positive weight in classification {name}"),
            ));
        }
        row.sort_by_key(|m| m.cluster);
        let sum: f64 = row.iter().map(|m| m.weight).sum();
        if !normalize && (sum - 1.0).abs() > ROW_SUM_RENORMALIZE_TOL {
            return Err(CliError::input(
                path,
                first_line[i],
                format!("weights of unit {unit} in {name} sum to {sum}; pass --normalize to rescale"),
            ));
        }
    }
    let design = if normalize {
        MembershipDesign::from_raw(classification, rows)?
    } else {
        MembershipDesign::new(classification, rows)?
    };
    Ok(design)
}

/// Data and designs restricted to complete cases on the model columns.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: Dataset,
    pub designs: Vec<MembershipDesign>,
    pub dropped: usize,
}

/// Drops units with a missing value in any of `columns`.
pub fn complete_cases(table: &DataTable, designs: Vec<MembershipDesign>, columns: &[String]) -> Result<Prepared> {
    for c in columns {
        table.require_column(c)?;
    }
    let data = &table.data;
    let keep: Vec<usize> = (0..data.n_units())
        .filter(|&i| columns.iter().all(|c| data.column(c).expect("checked")[i].is_finite()))
        .collect();
    let dropped = data.n_units() - keep.len();
    if dropped == 0 {
        return Ok(Prepared {
            data: data.clone(),
            designs,
            dropped,
        });
    }
    Ok(Prepared {
        data: data.select_units(&keep),
        designs: designs.iter().map(|d| d.select_units(&keep)).collect(),
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_order_compares_numbers_by_value() {
        let mut v = vec!["c10", "c2", "c1", "b", "c02", "a3"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, ["a3", "b", "c1", "c2", "c02", "c10"]);
    }
}
