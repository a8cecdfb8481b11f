//! Exact marginal likelihood and maximum likelihood fitting for small problems.
//!
//! Integrating the cluster effects out gives
//! `y ~ N(X beta, V)` with `V = sum_c sigma2_c W_c W_c' + sigma2_e I`, where
//! `W_c` is the dense `n x J_c` weight matrix of classification `c`. Everything
//! here works with a dense Cholesky factor of `V`, so it is limited to
//! [`MAX_DENSE_UNITS`] units.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::Dataset;
use crate::design::MembershipDesign;
use crate::error::{Error, Result};
use crate::model::{ModelFrame, ModelSpec};

pub const MAX_DENSE_UNITS: usize = 10_000;

/// Log-variances below this are treated as sitting on the zero boundary.
pub const LOG_VARIANCE_FLOOR: f64 = -30.0;

pub const MAX_OUTER_ITERATIONS: usize = 500;

/// Variance components: one per classification, then the residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Variances {
    pub sigma2_u: Vec<f64>,
    pub sigma2_e: f64,
}

impl Variances {
    fn to_log(&self) -> Vec<f64> {
        self.sigma2_u
            .iter()
            .chain(std::iter::once(&self.sigma2_e))
            .map(|v| v.ln())
            .collect()
    }

    fn from_log(theta: &[f64]) -> Self {
        let (u, e) = theta.split_at(theta.len() - 1);
        Variances {
            sigma2_u: u.iter().map(|t| t.exp()).collect(),
            sigma2_e: e[0].exp(),
        }
    }

    fn all(&self) -> impl Iterator<Item = f64> + '_ {
        self.sigma2_u
            .iter()
            .copied()
            .chain(std::iter::once(self.sigma2_e))
    }
}

/// Dense form of the model with the cluster effects integrated out.
#[derive(Debug, Clone)]
pub struct MarginalModel {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub w: Vec<DMatrix<f64>>,
    /// `W_c W_c'` for each classification.
    gram: Vec<DMatrix<f64>>,
}

/// Dense `n x J` weight matrix of a design.
pub fn dense_weights(design: &MembershipDesign) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(design.n_units(), design.n_clusters());
    for (i, row) in design.rows().iter().enumerate() {
        for m in row {
            w[(i, m.cluster)] = m.weight;
        }
    }
    w
}

/// Quantities at one variance setting that the likelihood, gradient and
/// information all share.
struct Factorized {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl MarginalModel {
    pub fn new(frame: &ModelFrame) -> Result<Self> {
        if frame.n() > MAX_DENSE_UNITS {
            return Err(Error::TooLarge {
                n: frame.n(),
                limit: MAX_DENSE_UNITS,
            });
        }
        let w: Vec<DMatrix<f64>> = frame.designs.iter().map(dense_weights).collect();
        let gram = w.iter().map(|wc| wc * wc.transpose()).collect();
        Ok(MarginalModel {
            x: frame.x.clone(),
            y: frame.y.clone(),
            w,
            gram,
        })
    }

    pub fn from_spec(spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        MarginalModel::new(&ModelFrame::new(spec, data)?)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classifications(&self) -> usize {
        self.w.len()
    }

    /// Marginal covariance `V`.
    pub fn covariance(&self, v: &Variances) -> Result<DMatrix<f64>> {
        if v.sigma2_u.len() != self.w.len() {
            return Err(Error::dimension("variances", self.w.len(), v.sigma2_u.len()));
        }
        let mut cov = DMatrix::from_diagonal_element(self.n(), self.n(), v.sigma2_e);
        for (g, s) in self.gram.iter().zip(&v.sigma2_u) {
            cov += g * *s;
        }
        Ok(cov)
    }

    fn factorize(&self, v: &Variances) -> Result<Factorized> {
        if !v.all().all(|s| s > 0.0 && s.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = self
            .covariance(v)?
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Factorized { chol, log_det })
    }

    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.p() {
            return Err(Error::dimension("beta", self.p(), beta.len()));
        }
        Ok(())
    }

    fn loglik_factorized(&self, f: &Factorized, beta: &DVector<f64>) -> f64 {
        let r = &self.y - &self.x * beta;
        let a = f.chol.solve(&r);
        -0.5 * (self.n() as f64 * (2.0 * PI).ln() + f.log_det + r.dot(&a))
    }

    /// Marginal log-likelihood at `(beta, variances)`.
    pub fn log_likelihood(&self, beta: &[f64], v: &Variances) -> Result<f64> {
        self.check_beta(beta)?;
        let f = self.factorize(v)?;
        Ok(self.loglik_factorized(&f, &DVector::from_column_slice(beta)))
    }

    fn gls_factorized(&self, f: &Factorized) -> Result<DVector<f64>> {
        let vinv_x = f.chol.solve(&self.x);
        let xtvx = self.x.transpose() * &vinv_x;
        let c = xtvx.cholesky().ok_or(Error::SingularDesign)?;
        Ok(c.solve(&(vinv_x.transpose() * &self.y)))
    }

    /// Generalized least squares estimate of `beta` given the variances.
    pub fn gls_beta(&self, v: &Variances) -> Result<Vec<f64>> {
        let f = self.factorize(v)?;
        Ok(self.gls_factorized(&f)?.iter().copied().collect())
    }

    /// Analytic gradient with respect to `beta` and the log-variances
    /// (classifications in order, residual last).
    pub fn gradient(&self, beta: &[f64], v: &Variances) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_beta(beta)?;
        let f = self.factorize(v)?;
        let (gb, gt) = self.gradient_factorized(&f, &DVector::from_column_slice(beta), v);
        Ok((gb.iter().copied().collect(), gt))
    }

    fn gradient_factorized(
        &self,
        f: &Factorized,
        beta: &DVector<f64>,
        v: &Variances,
    ) -> (DVector<f64>, Vec<f64>) {
        let vinv = f.chol.inverse();
        let vinv_w: Vec<DMatrix<f64>> = self.w.iter().map(|wc| &vinv * wc).collect();
        let r = &self.y - &self.x * beta;
        let a = &vinv * &r;
        (self.x.transpose() * &a, self.log_variance_score(&vinv, &vinv_w, &a, v))
    }

    /// `d loglik / d log sigma2_k = sigma2_k / 2 (a' G_k a - tr(V^-1 G_k))` with
    /// `a = V^-1 r`, `G_c = W_c W_c'` and `G_e = I`.
    fn log_variance_score(
        &self,
        vinv: &DMatrix<f64>,
        vinv_w: &[DMatrix<f64>],
        a: &DVector<f64>,
        v: &Variances,
    ) -> Vec<f64> {
        let mut grad = Vec::with_capacity(self.w.len() + 1);
        for ((wc, vw), s) in self.w.iter().zip(vinv_w).zip(&v.sigma2_u) {
            let trace = wc.component_mul(vw).sum();
            let quad = (wc.transpose() * a).norm_squared();
            grad.push(0.5 * s * (quad - trace));
        }
        grad.push(0.5 * v.sigma2_e * (a.norm_squared() - vinv.trace()));
        grad
    }

    /// Expected information for the log-variances:
    /// `sigma2_k sigma2_l / 2 tr(V^-1 G_k V^-1 G_l)`.
    fn information(&self, vinv: &DMatrix<f64>, vinv_w: &[DMatrix<f64>], v: &Variances) -> DMatrix<f64> {
        let k = self.w.len();
        let scales: Vec<f64> = v.all().collect();
        let mut info = DMatrix::zeros(k + 1, k + 1);
        for c in 0..k {
            for d in c..k {
                // tr(V^-1 W_c W_c' V^-1 W_d W_d') = ||W_c' V^-1 W_d||_F^2
                let t = (self.w[c].transpose() * &vinv_w[d]).norm_squared();
                info[(c, d)] = t;
                info[(d, c)] = t;
            }
            let t = vinv_w[c].norm_squared();
            info[(c, k)] = t;
            info[(k, c)] = t;
        }
        info[(k, k)] = vinv.norm_squared();
        for a in 0..=k {
            for b in 0..=k {
                info[(a, b)] *= 0.5 * scales[a] * scales[b];
            }
        }
        info
    }
}

/// Result of a maximum likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MlEstimates {
    pub beta: Vec<f64>,
    pub variances: Variances,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Per variance component (classifications, then residual): the estimate
    /// drifted to the zero boundary.
    pub at_boundary: Vec<bool>,
    /// Profile log-likelihood after each accepted step.
    pub trace: Vec<f64>,
}

struct ProfilePoint {
    loglik: f64,
    beta: DVector<f64>,
    grad: Vec<f64>,
    info: DMatrix<f64>,
}

fn profile_point(m: &MarginalModel, theta: &[f64]) -> Result<ProfilePoint> {
    let v = Variances::from_log(theta);
    let f = m.factorize(&v)?;
    let beta = m.gls_factorized(&f)?;
    let loglik = m.loglik_factorized(&f, &beta);
    let vinv = f.chol.inverse();
    let vinv_w: Vec<DMatrix<f64>> = m.w.iter().map(|wc| &vinv * wc).collect();
    let a = &vinv * (&m.y - &m.x * &beta);
    let grad = m.log_variance_score(&vinv, &vinv_w, &a, &v);
    let info = m.information(&vinv, &vinv_w, &v);
    Ok(ProfilePoint {
        loglik,
        beta,
        grad,
        info,
    })
}

fn profile_loglik(m: &MarginalModel, theta: &[f64]) -> Option<f64> {
    let v = Variances::from_log(theta);
    let f = m.factorize(&v).ok()?;
    let beta = m.gls_factorized(&f).ok()?;
    Some(m.loglik_factorized(&f, &beta))
}

const MAX_STEP: f64 = 5.0;
const LOGLIK_TOL: f64 = 1e-8;
const GRAD_TOL: f64 = 1e-5;

/// Maximizes the profile likelihood over the log-variances by Fisher scoring
/// with step halving; `beta` is profiled out by GLS at every step.
///
/// A log-variance that falls below [`LOG_VARIANCE_FLOOR`] is pinned there and
/// flagged in [`MlEstimates::at_boundary`].
pub fn fit_ml(m: &MarginalModel) -> Result<MlEstimates> {
    if m.n() <= m.p() {
        return Err(Error::InvalidModel(format!(
            "{} units cannot identify {} fixed effects and a residual variance",
            m.n(),
            m.p()
        )));
    }
    let k = m.n_classifications();
    let ols = {
        let xtx = m.x.transpose() * &m.x;
        let c = xtx.cholesky().ok_or(Error::SingularDesign)?;
        let b = c.solve(&(m.x.transpose() * &m.y));
        (&m.y - &m.x * b).norm_squared() / (m.n() - m.p()) as f64
    };
    let start = if ols > 0.0 { ols } else { 1.0 };
    let mut theta: Vec<f64> = (0..k)
        .map(|_| (start / 2.0 / k as f64).ln())
        .chain(std::iter::once((start / 2.0).ln()))
        .collect();
    let mut pinned = vec![false; k + 1];
    let mut point = profile_point(m, &theta)?;
    let mut trace = vec![point.loglik];

    for iteration in 1..=MAX_OUTER_ITERATIONS {
        let free: Vec<usize> = (0..=k).filter(|&i| !pinned[i]).collect();
        let grad_norm = free
            .iter()
            .map(|&i| point.grad[i] * point.grad[i])
            .sum::<f64>()
            .sqrt();

        let mut step = vec![0.0; k + 1];
        if !free.is_empty() {
            let info = DMatrix::from_fn(free.len(), free.len(), |a, b| point.info[(free[a], free[b])]);
            let g = DVector::from_iterator(free.len(), free.iter().map(|&i| point.grad[i]));
            let dir = match info.clone().cholesky() {
                Some(c) => c.solve(&g),
                None => g.clone(),
            };
            let biggest = dir.amax();
            let scale = if biggest > MAX_STEP { MAX_STEP / biggest } else { 1.0 };
            for (a, &i) in free.iter().enumerate() {
                step[i] = dir[a] * scale;
            }
        }

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..40 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(th, s)| (th + t * s).max(LOG_VARIANCE_FLOOR))
                .collect();
            if let Some(ll) = profile_loglik(m, &trial) {
                if ll >= point.loglik {
                    accepted = Some((trial, ll));
                    break;
                }
            }
            t *= 0.5;
        }

        let Some((next, ll)) = accepted else {
            // No ascent possible at working precision.
            if grad_norm < GRAD_TOL * 100.0 {
                return Ok(finish(theta, point, pinned, iteration, trace));
            }
            return Err(Error::Convergence {
                iterations: iteration,
                last_loglik: point.loglik,
                trace,
            });
        };
        let improvement = ll - point.loglik;
        theta = next;
        for (i, th) in theta.iter().enumerate() {
            if *th <= LOG_VARIANCE_FLOOR {
                pinned[i] = true;
            }
        }
        point = profile_point(m, &theta)?;
        trace.push(point.loglik);
        let new_grad_norm = (0..=k)
            .filter(|&i| !pinned[i])
            .map(|i| point.grad[i] * point.grad[i])
            .sum::<f64>()
            .sqrt();
        if improvement < LOGLIK_TOL && new_grad_norm < GRAD_TOL {
            return Ok(finish(theta, point, pinned, iteration, trace));
        }
    }
    Err(Error::Convergence {
        iterations: MAX_OUTER_ITERATIONS,
        last_loglik: point.loglik,
        trace,
    })
}

fn finish(
    theta: Vec<f64>,
    point: ProfilePoint,
    pinned: Vec<bool>,
    iterations: usize,
    trace: Vec<f64>,
) -> MlEstimates {
    MlEstimates {
        beta: point.beta.iter().copied().collect(),
        variances: Variances::from_log(&theta),
        log_likelihood: point.loglik,
        iterations,
        at_boundary: pinned,
        trace,
    }
}

/// Largest deviation between the analytic gradient (in `beta` and
/// log-variance coordinates) and central finite differences with step `step`.
///
/// Each component's deviation is `|analytic - numeric| / max(1, |analytic|,
/// |numeric|)`: relative for large components, absolute near zero.
pub fn gradient_check(m: &MarginalModel, beta: &[f64], v: &Variances, step: f64) -> Result<f64> {
    let (gb, gt) = m.gradient(beta, v)?;
    let theta = v.to_log();
    let mut worst: f64 = 0.0;
    let dev = |a: f64, b: f64| (a - b).abs() / 1f64.max(a.abs()).max(b.abs());
    for k in 0..beta.len() {
        let mut hi = beta.to_vec();
        let mut lo = beta.to_vec();
        hi[k] += step;
        lo[k] -= step;
        let num = (m.log_likelihood(&hi, v)? - m.log_likelihood(&lo, v)?) / (2.0 * step);
        worst = worst.max(dev(gb[k], num));
    }
    for k in 0..theta.len() {
        let mut hi = theta.clone();
        let mut lo = theta.clone();
        hi[k] += step;
        lo[k] -= step;
        let num = (m.log_likelihood(beta, &Variances::from_log(&hi))?
            - m.log_likelihood(beta, &Variances::from_log(&lo))?)
            / (2.0 * step);
        worst = worst.max(dev(gt[k], num));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Classification;
    use crate::design::Membership;

    fn model(y: Vec<f64>, rows: Vec<Vec<Membership>>, j: usize) -> MarginalModel {
        let n = y.len();
        let mut data = Dataset::with_sequential_ids("s", n);
        data.add_column("y", y).unwrap();
        let d = MembershipDesign::new(Classification::sequential("t", "c", j).unwrap(), rows).unwrap();
        let spec = ModelSpec::new("y", vec![], vec![d]).unwrap();
        MarginalModel::from_spec(&spec, &data).unwrap()
    }

    fn vars(u: f64, e: f64) -> Variances {
        Variances {
            sigma2_u: vec![u],
            sigma2_e: e,
        }
    }

    #[test]
    fn single_unit_hand_computation() {
        let m = model(vec![0.0], vec![vec![Membership::new(0, 1.0)]], 1);
        let ll = m.log_likelihood(&[0.0], &vars(1.0, 1.0)).unwrap();
        // V = 2: -0.5 (ln 2 pi + ln 2) = -0.5 ln 4 pi
        assert!((ll + 0.5 * (4.0 * PI).ln()).abs() < 1e-14);
        assert!((ll + 1.26551).abs() < 1e-5);
    }

    #[test]
    fn vanishing_cluster_variance_gives_iid_likelihood() {
        let y = vec![0.3, -1.2, 0.8, 2.0];
        let rows = vec![
            vec![Membership::new(0, 0.5), Membership::new(1, 0.5)],
            vec![Membership::new(1, 1.0)],
            vec![Membership::new(0, 1.0)],
            vec![Membership::new(0, 0.2), Membership::new(1, 0.8)],
        ];
        let m = model(y.clone(), rows, 2);
        let (b, s2) = (0.4, 1.7);
        let ll = m.log_likelihood(&[b], &vars(1e-12, s2)).unwrap();
        let iid: f64 = y
            .iter()
            .map(|v| -0.5 * ((2.0 * PI * s2).ln() + (v - b) * (v - b) / s2))
            .sum();
        assert!((ll - iid).abs() < 1e-6);
    }

    #[test]
    fn non_positive_variance_is_not_positive_definite() {
        let m = model(vec![0.0, 1.0], vec![vec![Membership::new(0, 1.0)]; 2], 1);
        assert_eq!(
            m.log_likelihood(&[0.0], &vars(1.0, 0.0)).unwrap_err(),
            Error::NotPositiveDefinite
        );
        assert!(m.log_likelihood(&[0.0, 1.0], &vars(1.0, 1.0)).is_err());
    }

    #[test]
    fn gls_solution_is_stationary_in_beta() {
        let y = vec![0.3, -1.2, 0.8, 2.0, 0.1];
        let rows = vec![
            vec![Membership::new(0, 0.5), Membership::new(1, 0.5)],
            vec![Membership::new(1, 1.0)],
            vec![Membership::new(0, 1.0)],
            vec![Membership::new(2, 0.3), Membership::new(1, 0.7)],
            vec![Membership::new(2, 1.0)],
        ];
        let m = model(y, rows, 3);
        let v = vars(0.6, 0.9);
        let b = m.gls_beta(&v).unwrap();
        let (gb, _) = m.gradient(&b, &v).unwrap();
        assert!(gb.iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn too_few_units_for_ml() {
        let m = model(vec![0.0], vec![vec![Membership::new(0, 1.0)]], 1);
        assert!(matches!(fit_ml(&m), Err(Error::InvalidModel(_))));
    }
}
