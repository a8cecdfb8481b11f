//! Full conditional distributions of the multiple membership model.
//!
//! These are computed from scratch on a [`ModelFrame`] and a parameter state.
//! The sampler uses equivalent incremental updates; the functions here are
//! the reference forms that tests compare against independent oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{ModelFrame, Parameters};
use crate::rng::Rng;

/// Inverse-gamma distribution with density proportional to
/// `x^(-shape-1) exp(-rate / x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub rate: f64,
}

impl InvGamma {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "inverse-gamma needs positive shape and rate, got ({shape}, {rate})"
            )));
        }
        Ok(InvGamma { shape, rate })
    }

    /// Finite only when `shape > 1`.
    pub fn mean(&self) -> f64 {
        self.rate / (self.shape - 1.0)
    }

    /// Finite only when `shape > 2`.
    pub fn variance(&self) -> f64 {
        let s1 = self.shape - 1.0;
        self.rate * self.rate / (s1 * s1 * (self.shape - 2.0))
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        // Gamma(shape, scale = 1 / rate), inverted.
        let g = Gamma::new(self.shape, 1.0 / self.rate)
            .expect("shape and rate validated positive")
            .sample(rng);
        1.0 / g
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub variance: f64,
}

impl NormalParams {
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        self.mean + self.variance.sqrt() * rng.sample::<f64, _>(StandardNormal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvNormalParams {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceConditionals {
    pub sigma2_u: Vec<InvGamma>,
    pub sigma2_e: InvGamma,
}

/// `y - (sum of weighted cluster effects)` for every unit.
fn response_minus_random(state: &Parameters, frame: &ModelFrame) -> Result<DVector<f64>> {
    Ok(&frame.y - frame.random_part(&state.u)?)
}

/// Conditional of the fixed effects under a flat prior:
/// `N((X'X)^-1 X'r, sigma2_e (X'X)^-1)` with `r` the response minus the
/// random part.
pub fn full_conditional_beta(state: &Parameters, frame: &ModelFrame) -> Result<MvNormalParams> {
    let r = response_minus_random(state, frame)?;
    let chol = frame.xtx_cholesky()?;
    let mean = chol.solve(&(frame.x.transpose() * r));
    let covariance = chol.inverse() * state.sigma2_e;
    Ok(MvNormalParams { mean, covariance })
}

/// Conditional of one cluster effect `u[c][j]` given everything else.
///
/// Precision is `1/sigma2_c + sum_i w_ji^2 / sigma2_e` over the units that
/// touch cluster `j`; the mean is `sum_i w_ji r_i / sigma2_e` divided by the
/// precision, where `r_i` excludes the effect being updated.
pub fn full_conditional_u(
    state: &Parameters,
    frame: &ModelFrame,
    classification: usize,
    cluster: usize,
) -> Result<NormalParams> {
    let design = frame
        .designs
        .get(classification)
        .ok_or_else(|| Error::dimension("classification index", frame.designs.len(), classification))?;
    if cluster >= design.n_clusters() {
        return Err(Error::dimension("cluster index", design.n_clusters(), cluster));
    }
    let fitted = &frame.x * DVector::from_column_slice(&state.beta) + frame.random_part(&state.u)?;
    let current = state.u[classification][cluster];
    let mut sum_w2 = 0.0;
    let mut sum_wr = 0.0;
    for (i, row) in design.rows().iter().enumerate() {
        if let Some(m) = row.iter().find(|m| m.cluster == cluster) {
            let r = frame.y[i] - fitted[i] + m.weight * current;
            sum_w2 += m.weight * m.weight;
            sum_wr += m.weight * r;
        }
    }
    let precision = 1.0 / state.sigma2_u[classification] + sum_w2 / state.sigma2_e;
    Ok(NormalParams {
        mean: sum_wr / state.sigma2_e / precision,
        variance: 1.0 / precision,
    })
}

/// Inverse-gamma conditionals of every variance component.
pub fn full_conditional_variances(
    state: &Parameters,
    frame: &ModelFrame,
    priors: &super::PriorConfig,
) -> Result<VarianceConditionals> {
    let mut sigma2_u = Vec::with_capacity(frame.designs.len());
    for (d, u) in frame.designs.iter().zip(&state.u) {
        let prior = priors.for_scale(d.name());
        let ss: f64 = u.iter().map(|v| v * v).sum();
        sigma2_u.push(InvGamma::new(
            prior.shape + u.len() as f64 / 2.0,
            prior.rate + ss / 2.0,
        )?);
    }
    let fitted = &frame.x * DVector::from_column_slice(&state.beta) + frame.random_part(&state.u)?;
    let sse = (&frame.y - fitted).norm_squared();
    let prior = priors.residual();
    let sigma2_e = InvGamma::new(
        prior.shape + frame.n() as f64 / 2.0,
        prior.rate + sse / 2.0,
    )?;
    Ok(VarianceConditionals { sigma2_u, sigma2_e })
}
