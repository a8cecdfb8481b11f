//! Gibbs sampling for multiple membership models.
//!
//! Each sweep draws the fixed effects as a block, then every cluster effect
//! one at a time (classifications in order, clusters by ascending index), then
//! the variance components from their inverse-gamma conditionals. The fixed
//! effects have a flat prior; variances have inverse-gamma priors.

mod conditionals;
pub mod diagnostics;
mod sampler;

use std::collections::BTreeMap;

use rayon::prelude::*;

pub use conditionals::{
    full_conditional_beta, full_conditional_u, full_conditional_variances, InvGamma,
    MvNormalParams, NormalParams, VarianceConditionals,
};
pub use diagnostics::{effective_sample_size, split_rhat, Ess, ParamSummary};

use crate::data::Dataset;
use crate::design::MembershipDesign;
use crate::error::{Error, Result};
use crate::model::{ModelFrame, ModelSpec};

/// Inverse-gamma priors on the variance components. Scales are keyed by
/// classification name, or [`PriorConfig::RESIDUAL`] for the residual.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub default: InvGamma,
    pub per_scale: BTreeMap<String, InvGamma>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            default: InvGamma {
                shape: 0.001,
                rate: 0.001,
            },
            per_scale: BTreeMap::new(),
        }
    }
}

impl PriorConfig {
    pub const RESIDUAL: &'static str = "residual";

    /// Same inverse-gamma prior on every scale.
    pub fn uniform(shape: f64, rate: f64) -> Result<Self> {
        Ok(PriorConfig {
            default: InvGamma::new(shape, rate)?,
            per_scale: BTreeMap::new(),
        })
    }

    pub fn for_scale(&self, name: &str) -> InvGamma {
        self.per_scale.get(name).copied().unwrap_or(self.default)
    }

    pub fn residual(&self) -> InvGamma {
        self.for_scale(Self::RESIDUAL)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Keep draws of every cluster effect.
    pub store_u: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            burn_in: 500,
            iterations: 5000,
            thin: 1,
            n_chains: 2,
            seed: 1,
            store_u: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 || self.n_chains == 0 {
            return Err(Error::InvalidConfig(
                "iterations, thin and chains must all be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of draws kept per chain.
    pub fn kept_per_chain(&self) -> usize {
        self.iterations.div_ceil(self.thin)
    }
}

/// Stored draws of one chain, column-major by parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    /// Sweep number (1-based, counting burn-in) of each stored draw.
    pub iterations: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

/// Share of total variance attributed to one classification.
#[derive(Debug, Clone, PartialEq)]
pub struct VariancePartition {
    pub classification: String,
    /// Posterior mean of `sigma2_c / (sum of all variances)`.
    pub vpc: f64,
    /// Per-unit share `sigma2_c S_ci / (sum_c sigma2_c S_ci + sigma2_e)` with
    /// `S_ci` the unit's sum of squared weights, at posterior-mean variances,
    /// averaged over units.
    pub weighted_vpc_mean: f64,
    pub weighted_vpc_min: f64,
    pub weighted_vpc_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Parameter names in storage order: fixed effects, cluster variances,
    /// residual variance, then (optionally) cluster effects.
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
    pub summaries: Vec<ParamSummary>,
    pub partition: Vec<VariancePartition>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn summary(&self, name: &str) -> Option<&ParamSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    pub fn draws(&self, name: &str) -> Option<Vec<&[f64]>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.chains.iter().map(|c| c.values[k].as_slice()).collect())
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.iterations.len()).sum()
    }
}

pub fn sigma2_u_name(classification: &str) -> String {
    format!("sigma2_u[{classification}]")
}

pub const SIGMA2_E: &str = "sigma2_e";

fn parameter_names(spec: &ModelSpec, store_u: bool) -> Vec<String> {
    let mut names = spec.beta_names();
    names.extend(spec.classifications.iter().map(|d| sigma2_u_name(d.name())));
    names.push(SIGMA2_E.to_string());
    if store_u {
        for d in &spec.classifications {
            names.extend(
                d.classification()
                    .labels()
                    .iter()
                    .map(|l| format!("u[{}][{l}]", d.name())),
            );
        }
    }
    names
}

/// Per-unit weighted variance partition for each classification.
pub fn weighted_vpc(designs: &[MembershipDesign], sigma2_u: &[f64], sigma2_e: f64) -> Vec<Vec<f64>> {
    let sq: Vec<Vec<f64>> = designs.iter().map(|d| d.squared_weight_sums()).collect();
    let n = designs.first().map_or(0, |d| d.n_units());
    let totals: Vec<f64> = (0..n)
        .map(|i| {
            sigma2_e
                + sq.iter()
                    .zip(sigma2_u)
                    .map(|(s, v)| v * s[i])
                    .sum::<f64>()
        })
        .collect();
    sq.iter()
        .zip(sigma2_u)
        .map(|(s, v)| s.iter().zip(&totals).map(|(si, t)| v * si / t).collect())
        .collect()
}

/// Fits the model by Gibbs sampling. Chains run in parallel and are merged in
/// chain order, so the result depends only on the inputs and the seed.
pub fn run_gibbs(
    spec: &ModelSpec,
    data: &Dataset,
    priors: &PriorConfig,
    chain_cfg: &ChainConfig,
) -> Result<FitResult> {
    chain_cfg.validate()?;
    let frame = ModelFrame::new(spec, data)?;
    if frame.n() < frame.p() {
        return Err(Error::InvalidModel(format!(
            "{} units cannot identify {} fixed effects",
            frame.n(),
            frame.p()
        )));
    }
    for d in &spec.classifications {
        let p = priors.for_scale(d.name());
        InvGamma::new(p.shape, p.rate)?;
    }
    InvGamma::new(priors.residual().shape, priors.residual().rate)?;

    let setup = sampler::Setup::new(&frame)?;
    let chains: Vec<ChainDraws> = (0..chain_cfg.n_chains)
        .into_par_iter()
        .map(|c| sampler::run_chain(&setup, priors, chain_cfg, c))
        .collect::<Result<_>>()?;

    let names = parameter_names(spec, chain_cfg.store_u);
    let mut warnings = Vec::new();
    let summaries: Vec<ParamSummary> = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let per_chain: Vec<&[f64]> = chains.iter().map(|c| c.values[k].as_slice()).collect();
            let s = diagnostics::summarize(name, &per_chain);
            if s.constant_chain {
                warnings.push(format!("{name}: constant chain, ESS set to chain length"));
            }
            s
        })
        .collect();

    let p = spec.n_fixed();
    let n_class = spec.n_classifications();
    let mut share_sums = vec![0.0; n_class];
    let mut count = 0usize;
    for chain in &chains {
        for t in 0..chain.iterations.len() {
            let total: f64 = (p..=p + n_class).map(|k| chain.values[k][t]).sum();
            for (c, s) in share_sums.iter_mut().enumerate() {
                *s += chain.values[p + c][t] / total;
            }
            count += 1;
        }
    }
    let mean_u: Vec<f64> = (0..n_class).map(|c| summaries[p + c].mean).collect();
    let unit_shares = weighted_vpc(&spec.classifications, &mean_u, summaries[p + n_class].mean);
    let partition = spec
        .classifications
        .iter()
        .zip(share_sums)
        .zip(unit_shares)
        .map(|((d, s), shares)| VariancePartition {
            classification: d.name().to_string(),
            vpc: s / count as f64,
            weighted_vpc_mean: shares.iter().sum::<f64>() / shares.len() as f64,
            weighted_vpc_min: shares.iter().copied().fold(f64::INFINITY, f64::min),
            weighted_vpc_max: shares.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();

    Ok(FitResult {
        names,
        chains,
        summaries,
        partition,
        warnings,
    })
}
