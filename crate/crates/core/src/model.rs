//! Model specifications, parameter sets and the linear predictor.

use std::collections::HashSet;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::Dataset;
use crate::design::{validate_design, MembershipDesign};
use crate::error::{Error, Result};

/// Response, fixed covariates and random classifications of a model.
///
/// An intercept is always the first fixed effect and is not listed in
/// `fixed_covariates`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub response: String,
    pub fixed_covariates: Vec<String>,
    pub classifications: Vec<MembershipDesign>,
}

impl ModelSpec {
    pub fn new(
        response: impl Into<String>,
        fixed_covariates: Vec<String>,
        classifications: Vec<MembershipDesign>,
    ) -> Result<Self> {
        if classifications.is_empty() {
            return Err(Error::InvalidModel(
                "at least one random classification is required".into(),
            ));
        }
        let mut names = HashSet::new();
        for d in &classifications {
            if !names.insert(d.name()) {
                return Err(Error::InvalidModel(format!(
                    "classification {} listed twice",
                    d.name()
                )));
            }
        }
        Ok(ModelSpec {
            response: response.into(),
            fixed_covariates,
            classifications,
        })
    }

    /// Number of fixed effects including the intercept.
    pub fn n_fixed(&self) -> usize {
        1 + self.fixed_covariates.len()
    }

    pub fn n_classifications(&self) -> usize {
        self.classifications.len()
    }

    /// Same model with every classification's design replaced through `f`.
    pub fn map_designs(&self, f: impl Fn(&MembershipDesign) -> MembershipDesign) -> ModelSpec {
        ModelSpec {
            response: self.response.clone(),
            fixed_covariates: self.fixed_covariates.clone(),
            classifications: self.classifications.iter().map(f).collect(),
        }
    }

    /// Display names of the fixed effects: `beta_0` for the intercept and
    /// `beta_<k>` for the k-th covariate.
    pub fn beta_names(&self) -> Vec<String> {
        (0..self.n_fixed()).map(|k| format!("beta_{k}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub beta: Vec<f64>,
    pub sigma2_e: f64,
    pub sigma2_u: Vec<f64>,
    pub u: Vec<Vec<f64>>,
}

impl Parameters {
    /// Checks dimensions against `spec`. With `allow_zero_variance` the
    /// variances may be zero, which only simulation accepts.
    pub fn check(&self, spec: &ModelSpec, allow_zero_variance: bool) -> Result<()> {
        if self.beta.len() != spec.n_fixed() {
            return Err(Error::dimension("beta", spec.n_fixed(), self.beta.len()));
        }
        let c = spec.n_classifications();
        if self.sigma2_u.len() != c {
            return Err(Error::dimension("sigma2_u", c, self.sigma2_u.len()));
        }
        if self.u.len() != c {
            return Err(Error::dimension("u", c, self.u.len()));
        }
        for (u, d) in self.u.iter().zip(&spec.classifications) {
            if u.len() != d.n_clusters() {
                return Err(Error::dimension(
                    format!("u for {}", d.name()),
                    d.n_clusters(),
                    u.len(),
                ));
            }
        }
        let ok = |v: f64| v.is_finite() && (v > 0.0 || (allow_zero_variance && v == 0.0));
        if !ok(self.sigma2_e) || !self.sigma2_u.iter().all(|&v| ok(v)) {
            return Err(Error::InvalidModel("variances must be positive".into()));
        }
        Ok(())
    }
}

/// Numeric view of a model on a dataset: response vector, fixed-effects
/// matrix (intercept first) and the validated designs.
#[derive(Debug, Clone)]
pub struct ModelFrame {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub designs: Vec<MembershipDesign>,
}

impl ModelFrame {
    pub fn new(spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        let n = data.n_units();
        let y = DVector::from_column_slice(data.model_column(&spec.response)?);
        let mut x = DMatrix::from_element(n, spec.n_fixed(), 1.0);
        for (k, name) in spec.fixed_covariates.iter().enumerate() {
            let col = data.model_column(name)?;
            x.column_mut(k + 1).copy_from_slice(col);
        }
        for d in &spec.classifications {
            let report = validate_design(d, n);
            if let Some(v) = report.violations.first() {
                return Err(Error::InvalidData(format!(
                    "design {} is invalid at unit {}: {:?}",
                    d.name(),
                    v.unit,
                    v.kind
                )));
            }
        }
        Ok(ModelFrame {
            y,
            x,
            designs: spec.classifications.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Sum of weighted random-effect contributions for every unit.
    pub fn random_part(&self, u: &[Vec<f64>]) -> Result<DVector<f64>> {
        let mut eta = DVector::zeros(self.n());
        for (d, uc) in self.designs.iter().zip(u) {
            for (e, v) in eta.iter_mut().zip(d.apply(uc)?) {
                *e += v;
            }
        }
        Ok(eta)
    }

    /// Cholesky factor of `X'X`. Fails when a pivot is negligible relative to
    /// its diagonal entry, i.e. when `X` is numerically rank deficient.
    pub fn xtx_cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        let xtx = self.x.transpose() * &self.x;
        let diag: Vec<f64> = xtx.diagonal().iter().copied().collect();
        let chol = xtx.cholesky().ok_or(Error::SingularDesign)?;
        let l = chol.l_dirty();
        for (k, d) in diag.iter().enumerate() {
            if !(l[(k, k)] * l[(k, k)] > 1e-10 * d) {
                return Err(Error::SingularDesign);
            }
        }
        Ok(chol)
    }

    /// Ordinary least squares ignoring the random effects. Returns the
    /// coefficients and the residual variance (divisor `n - p`, or `n` when
    /// `n == p`).
    pub fn ols(&self) -> Result<(DVector<f64>, f64)> {
        let chol = self.xtx_cholesky()?;
        let beta = chol.solve(&(self.x.transpose() * &self.y));
        let resid = &self.y - &self.x * &beta;
        let dof = if self.n() > self.p() {
            self.n() - self.p()
        } else {
            self.n()
        };
        Ok((beta, resid.norm_squared() / dof as f64))
    }
}

/// Conditional mean of the response: fixed part plus the weighted sums of
/// cluster effects for every classification (no residual).
pub fn linear_predictor(spec: &ModelSpec, data: &Dataset, params: &Parameters) -> Result<Vec<f64>> {
    params.check(spec, true)?;
    let frame = ModelFrame::new(spec, data)?;
    let beta = DVector::from_column_slice(&params.beta);
    let eta = &frame.x * beta + frame.random_part(&params.u)?;
    Ok(eta.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Classification;
    use crate::design::Membership;
    use proptest::prelude::*;

    fn teachers(j: usize) -> Classification {
        Classification::sequential("teacher", "t", j).unwrap()
    }

    fn params(beta: Vec<f64>, u: Vec<f64>) -> Parameters {
        Parameters {
            beta,
            sigma2_e: 1.0,
            sigma2_u: vec![1.0],
            u: vec![u],
        }
    }

    #[test]
    fn zero_effects_give_intercept() {
        let mut data = Dataset::with_sequential_ids("s", 3);
        data.add_column("y", vec![0.0; 3]).unwrap();
        data.add_column("x", vec![1.0, 2.0, 3.0]).unwrap();
        let d = MembershipDesign::hierarchical(teachers(2), &[0, 1, 1]).unwrap();
        let spec = ModelSpec::new("y", vec!["x".into()], vec![d]).unwrap();
        let eta = linear_predictor(&spec, &data, &params(vec![2.5, 0.0], vec![0.0, 0.0])).unwrap();
        assert_eq!(eta, vec![2.5; 3]);
    }

    #[test]
    fn single_unit_forced_arithmetic() {
        let mut data = Dataset::with_sequential_ids("s", 1);
        data.add_column("y", vec![0.0]).unwrap();
        data.add_column("x", vec![2.0]).unwrap();
        let d = MembershipDesign::new(
            teachers(2),
            vec![vec![Membership::new(0, 0.4), Membership::new(1, 0.6)]],
        )
        .unwrap();
        let spec = ModelSpec::new("y", vec!["x".into()], vec![d]).unwrap();
        let eta = linear_predictor(&spec, &data, &params(vec![1.0, 0.5], vec![1.0, -1.0])).unwrap();
        assert!((eta[0] - 1.8).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let mut data = Dataset::with_sequential_ids("s", 1);
        data.add_column("y", vec![0.0]).unwrap();
        let d = MembershipDesign::hierarchical(teachers(2), &[0]).unwrap();
        let spec = ModelSpec::new("y", vec![], vec![d]).unwrap();
        assert!(matches!(
            linear_predictor(&spec, &data, &params(vec![1.0, 2.0], vec![0.0, 0.0])),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            linear_predictor(&spec, &data, &params(vec![1.0], vec![0.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn spec_requires_unique_classifications() {
        let d = MembershipDesign::hierarchical(teachers(2), &[0]).unwrap();
        assert!(ModelSpec::new("y", vec![], vec![]).is_err());
        assert!(ModelSpec::new("y", vec![], vec![d.clone(), d]).is_err());
    }

    proptest! {
        #[test]
        fn reduces_to_two_level_predictor(
            clusters in proptest::collection::vec(0usize..4, 1..10),
            u in proptest::collection::vec(-3.0f64..3.0, 4),
            b0 in -2.0f64..2.0,
            b1 in -2.0f64..2.0,
        ) {
            let n = clusters.len();
            let mut data = Dataset::with_sequential_ids("s", n);
            data.add_column("y", vec![0.0; n]).unwrap();
            let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.3 - 1.0).collect();
            data.add_column("x", x.clone()).unwrap();
            let d = MembershipDesign::hierarchical(teachers(4), &clusters).unwrap();
            let spec = ModelSpec::new("y", vec!["x".into()], vec![d]).unwrap();
            let eta = linear_predictor(&spec, &data, &params(vec![b0, b1], u.clone())).unwrap();
            for i in 0..n {
                let two_level = b0 + b1 * x[i] + u[clusters[i]];
                prop_assert_eq!(eta[i], two_level);
            }
        }

        #[test]
        fn invariant_to_entry_order(
            w in proptest::collection::vec(0.05f64..1.0, 3),
            u in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let total: f64 = w.iter().sum();
            let entries: Vec<Membership> = w.iter().enumerate().map(|(j, v)| Membership::new(j, v / total)).collect();
            let mut reversed = entries.clone();
            reversed.reverse();
            let mut data = Dataset::with_sequential_ids("s", 1);
            data.add_column("y", vec![0.0]).unwrap();
            let a = ModelSpec::new("y", vec![], vec![MembershipDesign::new(teachers(3), vec![entries]).unwrap()]).unwrap();
            let b = ModelSpec::new("y", vec![], vec![MembershipDesign::new(teachers(3), vec![reversed]).unwrap()]).unwrap();
            let p = params(vec![0.3], u);
            let ea = linear_predictor(&a, &data, &p).unwrap()[0];
            let eb = linear_predictor(&b, &data, &p).unwrap()[0];
            prop_assert!((ea - eb).abs() < 1e-12);
        }
    }
}
