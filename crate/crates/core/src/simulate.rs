//! Synthetic data from the multiple membership model.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::data::{Classification, Dataset};
use crate::design::{Membership, MembershipDesign};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Parameters};
use crate::rng::{self, Rng};

/// Number of clusters each unit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cardinality {
    Fixed(usize),
    /// Uniform over `{1, ..., max}`.
    UpTo(usize),
}

impl Cardinality {
    fn max(self) -> usize {
        match self {
            Cardinality::Fixed(m) | Cardinality::UpTo(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimWeights {
    /// `1/m` for each of a unit's `m` clusters.
    Equal,
    /// Normalized uniform(0, 1] scores.
    RandomProportions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSim {
    pub name: String,
    pub n_clusters: usize,
    pub cardinality: Cardinality,
    pub weights: SimWeights,
    /// True between-cluster variance. Zero is allowed here.
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_units: usize,
    pub classifications: Vec<ClassificationSim>,
    /// Intercept followed by one slope per standard-normal covariate.
    pub beta: Vec<f64>,
    pub sigma2_e: f64,
    pub seed: u64,
}

/// Stream used for the response draws; design streams are numbered by
/// classification.
const RESPONSE_STREAM: u64 = 1 << 32;

impl SimConfig {
    /// One classification, one covariate.
    pub fn single(
        n_units: usize,
        n_clusters: usize,
        cardinality: Cardinality,
        weights: SimWeights,
        beta: [f64; 2],
        sigma2_u: f64,
        sigma2_e: f64,
        seed: u64,
    ) -> Self {
        SimConfig {
            n_units,
            classifications: vec![ClassificationSim {
                name: "cluster".into(),
                n_clusters,
                cardinality,
                weights,
                sigma2: sigma2_u,
            }],
            beta: beta.to_vec(),
            sigma2_e,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::InvalidConfig("n_units must be at least 1".into()));
        }
        if self.classifications.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one classification is required".into(),
            ));
        }
        if self.beta.is_empty() {
            return Err(Error::InvalidConfig("beta needs an intercept".into()));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.sigma2_e) {
            return Err(Error::InvalidConfig("sigma2_e must be non-negative".into()));
        }
        for c in &self.classifications {
            if c.n_clusters == 0 {
                return Err(Error::InvalidConfig(format!(
                    "classification {} needs at least one cluster",
                    c.name
                )));
            }
            if !ok(c.sigma2) {
                return Err(Error::InvalidConfig(format!(
                    "variance of {} must be non-negative",
                    c.name
                )));
            }
            let m = c.cardinality.max();
            if m == 0 {
                return Err(Error::InvalidConfig(format!(
                    "classification {} needs cardinality at least 1",
                    c.name
                )));
            }
            if m > c.n_clusters {
                return Err(Error::InfeasibleCardinality {
                    classification: c.name.clone(),
                    m,
                    clusters: c.n_clusters,
                });
            }
        }
        Ok(())
    }

    /// Covariate column names, `x1 .. xk`.
    pub fn covariate_names(&self) -> Vec<String> {
        (1..self.beta.len()).map(|k| format!("x{k}")).collect()
    }
}

fn draw_design(cls: &ClassificationSim, n_units: usize, rng: &mut Rng) -> Result<MembershipDesign> {
    let classification = Classification::sequential(cls.name.clone(), "c", cls.n_clusters)?;
    let mut rows = Vec::with_capacity(n_units);
    for _ in 0..n_units {
        let m = match cls.cardinality {
            Cardinality::Fixed(m) => m,
            Cardinality::UpTo(max) => rng.random_range(1..=max),
        };
        let mut clusters = index::sample(rng, cls.n_clusters, m).into_vec();
        clusters.sort_unstable();
        let row: Vec<Membership> = match cls.weights {
            SimWeights::Equal => {
                let w = 1.0 / m as f64;
                clusters.iter().map(|&c| Membership::new(c, w)).collect()
            }
            SimWeights::RandomProportions => {
                // 1 - U lies in (0, 1], so no entry is dropped as a zero weight.
                let scores: Vec<f64> = (0..m).map(|_| 1.0 - rng.random::<f64>()).collect();
                let total: f64 = scores.iter().sum();
                clusters
                    .iter()
                    .zip(scores)
                    .map(|(&c, s)| Membership::new(c, s / total))
                    .collect()
            }
        };
        rows.push(row);
    }
    MembershipDesign::new(classification, rows)
}

/// Random membership structures, one design per configured classification.
/// Deterministic given the seed.
pub fn simulate_design(cfg: &SimConfig) -> Result<Vec<MembershipDesign>> {
    cfg.validate()?;
    cfg.classifications
        .iter()
        .enumerate()
        .map(|(c, cls)| draw_design(cls, cfg.n_units, &mut rng::stream(cfg.seed, c as u64)))
        .collect()
}

/// A simulated dataset together with the model that generated it.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub spec: ModelSpec,
    /// True parameters, including the realized cluster effects.
    pub truth: Parameters,
}

/// Draws cluster effects, covariates and residuals on the designs held by
/// `spec` and sets `y = X beta + sum of weighted effects + e`.
///
/// `spec` must use the response name `y` and covariates named as in
/// [`SimConfig::covariate_names`]; variances come from `cfg`.
pub fn simulate_response(spec: &ModelSpec, cfg: &SimConfig) -> Result<Simulated> {
    cfg.validate()?;
    if spec.n_classifications() != cfg.classifications.len() {
        return Err(Error::dimension(
            "classifications",
            cfg.classifications.len(),
            spec.n_classifications(),
        ));
    }
    if spec.n_fixed() != cfg.beta.len() {
        return Err(Error::dimension("beta", cfg.beta.len(), spec.n_fixed()));
    }
    let n = cfg.n_units;
    for d in &spec.classifications {
        if d.n_units() != n {
            return Err(Error::dimension(format!("design {}", d.name()), n, d.n_units()));
        }
    }
    let mut rng = rng::stream(cfg.seed, RESPONSE_STREAM);
    let mut normal = |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);

    let u: Vec<Vec<f64>> = spec
        .classifications
        .iter()
        .zip(&cfg.classifications)
        .map(|(d, c)| {
            let sd = c.sigma2.sqrt();
            (0..d.n_clusters()).map(|_| normal(sd)).collect()
        })
        .collect();
    let xs: Vec<Vec<f64>> = (1..cfg.beta.len())
        .map(|_| (0..n).map(|_| normal(1.0)).collect())
        .collect();
    let sd_e = cfg.sigma2_e.sqrt();
    let mut y: Vec<f64> = (0..n).map(|_| normal(sd_e)).collect();

    for (i, yi) in y.iter_mut().enumerate() {
        *yi += cfg.beta[0];
        for (k, x) in xs.iter().enumerate() {
            *yi += cfg.beta[k + 1] * x[i];
        }
    }
    for (d, uc) in spec.classifications.iter().zip(&u) {
        for (yi, v) in y.iter_mut().zip(d.apply(uc)?) {
            *yi += v;
        }
    }

    let mut data = Dataset::with_sequential_ids("u", n);
    data.add_column(spec.response.clone(), y)?;
    for (name, x) in spec.fixed_covariates.iter().zip(xs) {
        data.add_column(name.clone(), x)?;
    }
    let truth = Parameters {
        beta: cfg.beta.clone(),
        sigma2_e: cfg.sigma2_e,
        sigma2_u: cfg.classifications.iter().map(|c| c.sigma2).collect(),
        u,
    };
    Ok(Simulated {
        data,
        spec: spec.clone(),
        truth,
    })
}

/// Designs and response in one call.
pub fn simulate(cfg: &SimConfig) -> Result<Simulated> {
    let designs = simulate_design(cfg)?;
    let spec = ModelSpec::new("y", cfg.covariate_names(), designs)?;
    simulate_response(&spec, cfg)
}
