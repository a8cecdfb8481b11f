//! Constructors that turn raw domain quantities into membership designs.

use std::collections::HashSet;

use crate::data::Classification;
use crate::design::{normalize_weights, Membership, MembershipDesign};
use crate::error::{Error, Result};

/// Per-unit raw input: unit id followed by `(cluster label, value)` pairs.
pub type UnitEntries<'a> = (&'a str, Vec<(&'a str, f64)>);

fn resolve(classification: &Classification, label: &str) -> Result<usize> {
    classification
        .index_of(label)
        .ok_or_else(|| Error::UnknownLabel {
            label: label.to_string(),
            context: format!("classification {}", classification.name()),
        })
}

fn named(unit: &str, e: Error) -> Error {
    match e {
        Error::InvalidWeights { reason, .. } => Error::InvalidWeights {
            unit: Some(unit.to_string()),
            reason,
        },
        other => other,
    }
}

/// Weights proportional to exposure (lessons, time, visits) per cluster.
pub fn weights_from_exposure(
    classification: &Classification,
    exposures: &[UnitEntries<'_>],
) -> Result<MembershipDesign> {
    let mut rows = Vec::with_capacity(exposures.len());
    for (unit, entries) in exposures {
        let raw: Vec<f64> = entries.iter().map(|(_, v)| *v).collect();
        let w = normalize_weights(&raw).map_err(|e| named(unit, e))?;
        let mut row = Vec::with_capacity(entries.len());
        for ((label, _), w) in entries.iter().zip(w) {
            row.push(Membership::new(resolve(classification, label)?, w));
        }
        rows.push(row);
    }
    MembershipDesign::new(classification.clone(), rows)
}

/// Areas and the undirected adjacency between them, each edge carrying a
/// positive magnitude such as shared border length or neighbour population.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyList {
    areas: Classification,
    edges: Vec<(usize, usize, f64)>,
}

impl AdjacencyList {
    pub fn new(areas: Classification, edges: &[(&str, &str, f64)]) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for &(a, b, magnitude) in edges {
            let ia = resolve(&areas, a)?;
            let ib = resolve(&areas, b)?;
            if ia == ib {
                return Err(Error::InvalidData(format!("self-edge on area {a}")));
            }
            if !(magnitude > 0.0) || !magnitude.is_finite() {
                return Err(Error::InvalidData(format!(
                    "edge {a}-{b} has non-positive magnitude {magnitude}"
                )));
            }
            if !seen.insert((ia.min(ib), ia.max(ib))) {
                return Err(Error::InvalidData(format!("edge {a}-{b} listed twice")));
            }
            out.push((ia, ib, magnitude));
        }
        Ok(AdjacencyList { areas, edges: out })
    }

    pub fn areas(&self) -> &Classification {
        &self.areas
    }

    /// Neighbours of every area as `(area, magnitude)`, sorted by area index.
    pub fn neighbours(&self) -> Vec<Vec<(usize, f64)>> {
        let mut nb = vec![Vec::new(); self.areas.n_clusters()];
        for &(a, b, m) in &self.edges {
            nb[a].push((b, m));
            nb[b].push((a, m));
        }
        for list in &mut nb {
            list.sort_by_key(|&(k, _)| k);
        }
        nb
    }
}

/// Neighbourhood design: each unit is a member of the areas adjacent to its
/// area of residence, weighted by edge magnitude. The residence area itself is
/// not included; it belongs in a separate single-membership classification.
///
/// The returned classification has the same cluster labels as the areas and is
/// called `name`.
pub fn weights_from_adjacency(
    adj: &AdjacencyList,
    residence: &[(&str, &str)],
    name: &str,
) -> Result<MembershipDesign> {
    let neighbours = adj.neighbours();
    let mut rows = Vec::with_capacity(residence.len());
    for &(unit, area) in residence {
        let a = resolve(adj.areas(), area)?;
        let nb = &neighbours[a];
        if nb.is_empty() {
            return Err(Error::IsolatedArea {
                area: area.to_string(),
            });
        }
        let raw: Vec<f64> = nb.iter().map(|&(_, m)| m).collect();
        let w = normalize_weights(&raw).map_err(|e| named(unit, e))?;
        rows.push(
            nb.iter()
                .zip(w)
                .map(|(&(k, _), w)| Membership::new(k, w))
                .collect(),
        );
    }
    let classification = Classification::new(name, adj.areas().labels().to_vec())?;
    MembershipDesign::new(classification, rows)
}

/// How attendance probability falls off with distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceDecay {
    Inverse,
    InverseSquare,
}

impl DistanceDecay {
    /// Unnormalized score relative to the farthest candidate, so that integer
    /// distance ratios give exact proportions.
    fn score(self, farthest: f64, distance: f64) -> f64 {
        let ratio = farthest / distance;
        match self {
            DistanceDecay::Inverse => ratio,
            DistanceDecay::InverseSquare => ratio * ratio,
        }
    }
}

/// Membership probabilities for units whose cluster is unobserved, from
/// distances to candidate clusters. A unit with a single candidate is an
/// observed membership.
pub fn weights_from_probabilities(
    classification: &Classification,
    candidates: &[UnitEntries<'_>],
    decay: DistanceDecay,
) -> Result<MembershipDesign> {
    let mut rows = Vec::with_capacity(candidates.len());
    for (unit, entries) in candidates {
        for &(_, d) in entries {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::InvalidDistance {
                    unit: unit.to_string(),
                    distance: d,
                });
            }
        }
        let farthest = entries.iter().map(|&(_, d)| d).fold(0.0, f64::max);
        let raw: Vec<f64> = entries
            .iter()
            .map(|&(_, d)| decay.score(farthest, d))
            .collect();
        let w = normalize_weights(&raw).map_err(|e| named(unit, e))?;
        let mut row = Vec::with_capacity(entries.len());
        for ((label, _), w) in entries.iter().zip(w) {
            row.push(Membership::new(resolve(classification, label)?, w));
        }
        rows.push(row);
    }
    MembershipDesign::new(classification.clone(), rows)
}

/// Alternative weighting applied to an existing design for sensitivity runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    /// Weights as given.
    Keep,
    /// Each of a unit's `m` memberships gets weight `1/m`.
    Equal,
}

pub fn reweight_scheme(design: &MembershipDesign, scheme: WeightScheme) -> MembershipDesign {
    match scheme {
        WeightScheme::Keep => design.clone(),
        WeightScheme::Equal => {
            let rows = design
                .rows()
                .iter()
                .map(|r| {
                    let w = 1.0 / r.len() as f64;
                    r.iter().map(|m| Membership::new(m.cluster, w)).collect()
                })
                .collect();
            MembershipDesign::new_unchecked(design.classification().clone(), rows)
        }
    }
}
