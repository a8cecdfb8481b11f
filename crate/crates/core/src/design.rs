//! Sparse multiple membership designs.
//!
//! Row `i` of a design lists the clusters unit `i` belongs to together with
//! its membership weights. Pure hierarchies are the special case where every
//! row holds a single entry of weight one.

use std::collections::BTreeMap;

use crate::data::Classification;
use crate::error::{Error, Result};

/// Largest deviation of a row sum from one that is accepted and silently
/// renormalized at construction.
pub const ROW_SUM_RENORMALIZE_TOL: f64 = 1e-6;

/// Row sums within this distance of one are kept bit-for-bit.
const ROW_SUM_EXACT_TOL: f64 = 1e-12;

/// Tolerance used by [`validate_design`].
pub const ROW_SUM_VALIDATE_TOL: f64 = 1e-8;

/// One membership entry: cluster index into the classification and weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub cluster: usize,
    pub weight: f64,
}

impl Membership {
    pub fn new(cluster: usize, weight: f64) -> Self {
        Membership { cluster, weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipDesign {
    classification: Classification,
    rows: Vec<Vec<Membership>>,
}

/// Scales non-negative raw weights to proportions.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::InvalidWeights {
            unit: None,
            reason: "no weights given".into(),
        });
    }
    if let Some(w) = raw.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidWeights {
            unit: None,
            reason: format!("weight {w} is negative or non-finite"),
        });
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidWeights {
            unit: None,
            reason: "weights sum to zero".into(),
        });
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

fn row_error(unit: usize, reason: impl Into<String>) -> Error {
    Error::InvalidWeights {
        unit: Some(format!("#{unit}")),
        reason: reason.into(),
    }
}

impl MembershipDesign {
    /// Builds a design from rows whose weights should already sum to one.
    ///
    /// Zero weights are dropped. Rows that miss a unit sum by no more than
    /// [`ROW_SUM_RENORMALIZE_TOL`] are rescaled; larger deviations are rejected.
    pub fn new(classification: Classification, rows: Vec<Vec<Membership>>) -> Result<Self> {
        let j = classification.n_clusters();
        let mut out = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            let mut kept: Vec<Membership> = Vec::with_capacity(row.len());
            for m in row {
                if !m.weight.is_finite() || m.weight < 0.0 {
                    return Err(row_error(i, format!("weight {} is not allowed", m.weight)));
                }
                if m.cluster >= j {
                    return Err(row_error(
                        i,
                        format!("cluster index {} out of range (J = {j})", m.cluster),
                    ));
                }
                if kept.iter().any(|k| k.cluster == m.cluster) {
                    return Err(row_error(i, format!("cluster {} listed twice", m.cluster)));
                }
                if m.weight > 0.0 {
                    kept.push(m);
                }
            }
            if kept.is_empty() {
                return Err(row_error(i, "no positive membership weight"));
            }
            let total: f64 = kept.iter().map(|m| m.weight).sum();
            let dev = (total - 1.0).abs();
            if dev > ROW_SUM_RENORMALIZE_TOL {
                return Err(row_error(i, format!("weights sum to {total}, not 1")));
            }
            if dev > ROW_SUM_EXACT_TOL {
                for m in &mut kept {
                    m.weight /= total;
                }
            }
            out.push(kept);
        }
        Ok(MembershipDesign {
            classification,
            rows: out,
        })
    }

    /// Builds a design from unnormalized non-negative scores, scaling each row
    /// to sum to one.
    pub fn from_raw(classification: Classification, rows: Vec<Vec<Membership>>) -> Result<Self> {
        let mut scaled = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            let raw: Vec<f64> = row.iter().map(|m| m.weight).collect();
            let w = normalize_weights(&raw).map_err(|e| match e {
                Error::InvalidWeights { reason, .. } => row_error(i, reason),
                other => other,
            })?;
            scaled.push(
                row.iter()
                    .zip(w)
                    .map(|(m, w)| Membership::new(m.cluster, w))
                    .collect(),
            );
        }
        MembershipDesign::new(classification, scaled)
    }

    /// Single-membership design: unit `i` belongs only to `clusters[i]`.
    pub fn hierarchical(classification: Classification, clusters: &[usize]) -> Result<Self> {
        MembershipDesign::new(
            classification,
            clusters
                .iter()
                .map(|&c| vec![Membership::new(c, 1.0)])
                .collect(),
        )
    }

    /// Wraps rows without checking any invariant. Use [`validate_design`] to
    /// inspect the result.
    pub fn new_unchecked(classification: Classification, rows: Vec<Vec<Membership>>) -> Self {
        MembershipDesign {
            classification,
            rows,
        }
    }

    pub fn classification(&self) -> &Classification {
        &self.classification
    }

    pub fn name(&self) -> &str {
        self.classification.name()
    }

    pub fn n_units(&self) -> usize {
        self.rows.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.classification.n_clusters()
    }

    pub fn rows(&self) -> &[Vec<Membership>] {
        &self.rows
    }

    pub fn row(&self, unit: usize) -> &[Membership] {
        &self.rows[unit]
    }

    pub fn is_single_membership(&self) -> bool {
        self.rows.iter().all(|r| r.len() == 1)
    }

    /// Transposed view: for each cluster, the `(unit, weight)` pairs touching it,
    /// units in ascending order.
    pub fn cluster_members(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.n_clusters()];
        for (i, row) in self.rows.iter().enumerate() {
            for m in row {
                cols[m.cluster].push((i, m.weight));
            }
        }
        cols
    }

    /// Per-unit sum of squared weights, the factor by which the cluster
    /// variance enters the unit's marginal variance.
    pub fn squared_weight_sums(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|m| m.weight * m.weight).sum())
            .collect()
    }

    /// Weighted sum of cluster effects for every unit.
    pub fn apply(&self, effects: &[f64]) -> Result<Vec<f64>> {
        if effects.len() != self.n_clusters() {
            return Err(Error::dimension(
                format!("cluster values for {}", self.name()),
                self.n_clusters(),
                effects.len(),
            ));
        }
        Ok(self
            .rows
            .iter()
            .map(|r| r.iter().map(|m| m.weight * effects[m.cluster]).sum())
            .collect())
    }

    /// Restricts the design to the given units, in the given order.
    pub fn select_units(&self, keep: &[usize]) -> MembershipDesign {
        MembershipDesign {
            classification: self.classification.clone(),
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Row contents keyed by cluster label, for comparisons that should not
    /// depend on cluster index order.
    pub fn entries_by_label(&self) -> Vec<BTreeMap<&str, f64>> {
        let labels = self.classification.labels();
        self.rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|m| (labels[m.cluster].as_str(), m.weight))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    EmptyRow,
    RowSum(f64),
    DuplicateCluster(usize),
    OutOfRange(usize),
    NonPositiveWeight(f64),
    /// Design has a different number of rows than the dataset has units.
    UnitCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Offending unit (row index); for [`ViolationKind::UnitCount`] this is the
    /// first row past the shorter side.
    pub unit: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every structural invariant of a design without failing fast.
pub fn validate_design(design: &MembershipDesign, n_units: usize) -> ValidationReport {
    let mut violations = Vec::new();
    if design.n_units() != n_units {
        violations.push(Violation {
            unit: design.n_units().min(n_units),
            kind: ViolationKind::UnitCount {
                expected: n_units,
                found: design.n_units(),
            },
        });
    }
    let j = design.n_clusters();
    for (i, row) in design.rows().iter().enumerate() {
        if row.is_empty() {
            violations.push(Violation {
                unit: i,
                kind: ViolationKind::EmptyRow,
            });
            continue;
        }
        for (k, m) in row.iter().enumerate() {
            if m.cluster >= j {
                violations.push(Violation {
                    unit: i,
                    kind: ViolationKind::OutOfRange(m.cluster),
                });
            }
            if !(m.weight > 0.0) || !m.weight.is_finite() {
                violations.push(Violation {
                    unit: i,
                    kind: ViolationKind::NonPositiveWeight(m.weight),
                });
            }
            if row[..k].iter().any(|p| p.cluster == m.cluster) {
                violations.push(Violation {
                    unit: i,
                    kind: ViolationKind::DuplicateCluster(m.cluster),
                });
            }
        }
        let total: f64 = row.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > ROW_SUM_VALIDATE_TOL {
            violations.push(Violation {
                unit: i,
                kind: ViolationKind::RowSum(total),
            });
        }
    }
    ValidationReport { violations }
}

/// Unit-level column of weighted averages of a cluster-level variable.
pub fn weighted_cluster_covariate(
    design: &MembershipDesign,
    cluster_values: &[f64],
) -> Result<Vec<f64>> {
    design.apply(cluster_values)
}

/// Reassigns every unit wholly to its highest-weight cluster. Ties go to the
/// lowest cluster index.
pub fn collapse_to_single_membership(design: &MembershipDesign) -> MembershipDesign {
    let rows = design
        .rows()
        .iter()
        .map(|row| {
            let mut best = row[0];
            for m in &row[1..] {
                if m.weight > best.weight || (m.weight == best.weight && m.cluster < best.cluster)
                {
                    best = *m;
                }
            }
            vec![Membership::new(best.cluster, 1.0)]
        })
        .collect();
    MembershipDesign::new_unchecked(design.classification().clone(), rows)
}
