//! Reference computations for testing the fitters.
//!
//! Nothing here shares code with `mmfit-core`: inputs are plain matrices and
//! slices, and every result is obtained by a different route (dense joint
//! Gaussian algebra, grid quadrature, block formulas for the two-level model,
//! a separately written random-intercept sampler).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean) * (x - mean) / var)
}

/// Mean and variance of a one-dimensional distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// Joint Gaussian posterior of `(beta, u_1, ..., u_C)` given the variances,
/// with a flat prior on `beta`, assembled as a dense precision matrix.
pub struct JointGaussian {
    precision: DMatrix<f64>,
    linear: DVector<f64>,
}

impl JointGaussian {
    /// `x` is `n x p`; `w[c]` is the dense `n x J_c` weight matrix.
    pub fn new(y: &[f64], x: &DMatrix<f64>, w: &[DMatrix<f64>], sigma2_u: &[f64], sigma2_e: f64) -> Self {
        let n = y.len();
        let total: usize = x.ncols() + w.iter().map(|m| m.ncols()).sum::<usize>();
        let mut z = DMatrix::zeros(n, total);
        z.columns_mut(0, x.ncols()).copy_from(x);
        let mut off = x.ncols();
        let mut prior = vec![0.0; total];
        for (wc, s) in w.iter().zip(sigma2_u) {
            z.columns_mut(off, wc.ncols()).copy_from(wc);
            for k in 0..wc.ncols() {
                prior[off + k] = 1.0 / s;
            }
            off += wc.ncols();
        }
        let yv = DVector::from_column_slice(y);
        let precision = z.transpose() * &z / sigma2_e + DMatrix::from_diagonal(&DVector::from_vec(prior));
        let linear = z.transpose() * yv / sigma2_e;
        JointGaussian { precision, linear }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// Conditional of the coordinates in `block` given all others at `values`
    /// (a full-length vector; entries in `block` are ignored).
    pub fn conditional(&self, block: &[usize], values: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let rest: Vec<usize> = (0..self.dim()).filter(|i| !block.contains(i)).collect();
        let qbb = DMatrix::from_fn(block.len(), block.len(), |a, b| self.precision[(block[a], block[b])]);
        let mut rhs = DVector::from_fn(block.len(), |a, _| self.linear[block[a]]);
        for (a, &i) in block.iter().enumerate() {
            for &k in &rest {
                rhs[a] -= self.precision[(i, k)] * values[k];
            }
        }
        let cov = qbb.try_inverse().expect("conditional precision is invertible");
        let mean = &cov * rhs;
        (mean, cov)
    }
}

/// Moments of an unnormalized log density on `[lo, hi]` by the trapezoid rule.
pub fn quadrature_moments(log_density: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> Moments {
    let h = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|k| lo + k as f64 * h).collect();
    let logs: Vec<f64> = xs.iter().map(|&x| log_density(x)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (k, (&x, &l)) in xs.iter().zip(&logs).enumerate() {
        let wt = if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
        let d = wt * (l - top).exp();
        z += d;
        m1 += d * x;
        m2 += d * x * x;
    }
    let mean = m1 / z;
    Moments {
        mean,
        variance: m2 / z - mean * mean,
    }
}

/// Moments of a positive quantity `s` whose log density is `log_density(s)`,
/// integrated on a log grid. The grid is located with a coarse pass and then
/// refined around the mode.
pub fn positive_quadrature_moments(log_density: impl Fn(f64) -> f64) -> Moments {
    // Density of t = ln s is p(e^t) e^t.
    let in_t = |t: f64| log_density(t.exp()) + t;
    let coarse: Vec<f64> = (0..=6000).map(|k| -30.0 + k as f64 * 0.01).collect();
    let mode = coarse
        .iter()
        .copied()
        .max_by(|a, b| in_t(*a).total_cmp(&in_t(*b)))
        .expect("non-empty grid");
    let (lo, hi, points) = (mode - 15.0, mode + 30.0, 200_001);
    let h = (hi - lo) / (points - 1) as f64;
    let logs: Vec<f64> = (0..points).map(|k| in_t(lo + k as f64 * h)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (k, l) in logs.iter().enumerate() {
        let s = (lo + k as f64 * h).exp();
        let wt = if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
        let d = wt * (l - top).exp();
        z += d;
        m1 += d * s;
        m2 += d * s * s;
    }
    let mean = m1 / z;
    Moments {
        mean,
        variance: m2 / z - mean * mean,
    }
}

/// Posterior moments of two cluster effects `(u_1, u_2)` on a square grid,
/// given everything else. `offset[i]` is the part of unit `i`'s mean that does
/// not involve the two effects; `w[i] = (w_i1, w_i2)`.
pub struct Grid2d {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

pub fn quadrature_2d(
    y: &[f64],
    offset: &[f64],
    w: &[[f64; 2]],
    sigma2_u: f64,
    sigma2_e: f64,
    center: [f64; 2],
    half_width: [f64; 2],
    points: usize,
) -> Grid2d {
    let axis = |c: usize| -> Vec<f64> {
        let h = 2.0 * half_width[c] / (points - 1) as f64;
        (0..points).map(|k| center[c] - half_width[c] + k as f64 * h).collect()
    };
    let (g1, g2) = (axis(0), axis(1));
    let log_post = |u1: f64, u2: f64| -> f64 {
        let mut l = normal_logpdf(u1, 0.0, sigma2_u) + normal_logpdf(u2, 0.0, sigma2_u);
        for i in 0..y.len() {
            l += normal_logpdf(y[i], offset[i] + w[i][0] * u1 + w[i][1] * u2, sigma2_e);
        }
        l
    };
    let top = log_post(center[0], center[1]);
    let (mut z, mut s1, mut s2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, &u1) in g1.iter().enumerate() {
        let wa = if a == 0 || a == points - 1 { 0.5 } else { 1.0 };
        for (b, &u2) in g2.iter().enumerate() {
            let wb = if b == 0 || b == points - 1 { 0.5 } else { 1.0 };
            let d = wa * wb * (log_post(u1, u2) - top).exp();
            z += d;
            s1 += d * u1;
            s2 += d * u2;
            s11 += d * u1 * u1;
            s22 += d * u2 * u2;
            s12 += d * u1 * u2;
        }
    }
    let m = [s1 / z, s2 / z];
    Grid2d {
        mean: m,
        cov: [
            [s11 / z - m[0] * m[0], s12 / z - m[0] * m[1]],
            [s12 / z - m[0] * m[1], s22 / z - m[1] * m[1]],
        ],
    }
}

/// Marginal log-likelihood of the random-intercept model from its block
/// structure: each cluster contributes `sigma2_e I + sigma2_u 11'`, inverted
/// by Sherman-Morrison. `resid[i] = y_i - x_i' beta`.
pub fn two_level_loglik(resid: &[f64], clusters: &[usize], sigma2_u: f64, sigma2_e: f64) -> f64 {
    let j = clusters.iter().max().map_or(0, |m| m + 1);
    let mut ll = 0.0;
    for c in 0..j {
        let r: Vec<f64> = resid
            .iter()
            .zip(clusters)
            .filter(|(_, &k)| k == c)
            .map(|(v, _)| *v)
            .collect();
        if r.is_empty() {
            continue;
        }
        let nj = r.len() as f64;
        let lambda = sigma2_e + nj * sigma2_u;
        let sum: f64 = r.iter().sum();
        let ss: f64 = r.iter().map(|v| v * v).sum();
        let log_det = (nj - 1.0) * sigma2_e.ln() + lambda.ln();
        let quad = (ss - sigma2_u * sum * sum / lambda) / sigma2_e;
        ll += -0.5 * (nj * (2.0 * PI).ln() + log_det + quad);
    }
    ll
}

/// Draws from a random-intercept model `y = X beta + u_cluster + e` with a
/// flat prior on beta and inverse-gamma(a, b) priors on both variances.
pub struct TwoLevelDraws {
    pub beta: Vec<Vec<f64>>,
    pub sigma2_u: Vec<f64>,
    pub sigma2_e: Vec<f64>,
}

pub fn two_level_gibbs(
    y: &[f64],
    x: &DMatrix<f64>,
    clusters: &[usize],
    n_clusters: usize,
    prior: (f64, f64),
    burn_in: usize,
    iterations: usize,
    seed: u64,
) -> TwoLevelDraws {
    let n = y.len();
    let p = x.ncols();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let xtx_inv = (x.transpose() * x).try_inverse().expect("full rank");
    let chol = xtx_inv.clone().cholesky().expect("positive definite").l();
    let yv = DVector::from_column_slice(y);
    let mut sizes = vec![0.0; n_clusters];
    for &c in clusters {
        sizes[c] += 1.0;
    }
    let mut u = vec![0.0; n_clusters];
    let (mut s2u, mut s2e): (f64, f64) = (1.0, 1.0);
    let mut out = TwoLevelDraws {
        beta: vec![Vec::new(); p],
        sigma2_u: Vec::new(),
        sigma2_e: Vec::new(),
    };
    let inv_gamma = |rng: &mut ChaCha20Rng, shape: f64, rate: f64| -> f64 {
        1.0 / Gamma::new(shape, 1.0 / rate).unwrap().sample(rng)
    };
    for it in 0..burn_in + iterations {
        let r = DVector::from_fn(n, |i, _| y[i] - u[clusters[i]]);
        let mean = &xtx_inv * (x.transpose() * r);
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = mean + &chol * z * s2e.sqrt();
        let fixed = x * &beta;
        let mut sums = vec![0.0; n_clusters];
        for i in 0..n {
            sums[clusters[i]] += yv[i] - fixed[i];
        }
        for j in 0..n_clusters {
            let prec = 1.0 / s2u + sizes[j] / s2e;
            let m = sums[j] / s2e / prec;
            u[j] = m + rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
        }
        let ssu: f64 = u.iter().map(|v| v * v).sum();
        s2u = inv_gamma(&mut rng, prior.0 + n_clusters as f64 / 2.0, prior.1 + ssu / 2.0);
        let sse: f64 = (0..n).map(|i| (yv[i] - fixed[i] - u[clusters[i]]).powi(2)).sum();
        s2e = inv_gamma(&mut rng, prior.0 + n as f64 / 2.0, prior.1 + sse / 2.0);
        if it >= burn_in {
            for k in 0..p {
                out.beta[k].push(beta[k]);
            }
            out.sigma2_u.push(s2u);
            out.sigma2_e.push(s2e);
        }
    }
    out
}
