use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{ChainConfig, ChainDraws, InvGamma, NormalParams, PriorConfig};
use crate::error::{Error, Result};
use crate::model::ModelFrame;
use crate::rng;

struct ClassificationData {
    name: String,
    /// Row-wise memberships: (cluster, weight).
    rows: Vec<Vec<(usize, f64)>>,
    /// Column-wise memberships: (unit, weight).
    members: Vec<Vec<(usize, f64)>>,
    sum_w2: Vec<f64>,
}

/// Quantities shared read-only by all chains.
pub(super) struct Setup {
    n: usize,
    p: usize,
    y: Vec<f64>,
    /// Row-major n x p.
    x: Vec<f64>,
    xtx_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Upper factor `L'` of `X'X = L L'`.
    chol_upper: DMatrix<f64>,
    classes: Vec<ClassificationData>,
    init_beta: Vec<f64>,
    init_sigma2_u: f64,
    init_sigma2_e: f64,
}

impl Setup {
    pub(super) fn new(frame: &ModelFrame) -> Result<Self> {
        let n = frame.n();
        let p = frame.p();
        let xtx_chol = frame.xtx_cholesky()?;
        let chol_upper = xtx_chol.l().transpose();
        let mut x = Vec::with_capacity(n * p);
        for i in 0..n {
            for k in 0..p {
                x.push(frame.x[(i, k)]);
            }
        }
        let classes = frame
            .designs
            .iter()
            .map(|d| {
                let members = d.cluster_members();
                let sum_w2 = members
                    .iter()
                    .map(|m| m.iter().map(|(_, w)| w * w).sum())
                    .collect();
                ClassificationData {
                    name: d.name().to_string(),
                    rows: d
                        .rows()
                        .iter()
                        .map(|r| r.iter().map(|m| (m.cluster, m.weight)).collect())
                        .collect(),
                    members,
                    sum_w2,
                }
            })
            .collect::<Vec<_>>();
        let (beta, resid_var) = frame.ols()?;
        // Degenerate fits (perfect OLS) still need a positive starting variance.
        let v = if resid_var > 0.0 { resid_var } else { 1.0 };
        Ok(Setup {
            n,
            p,
            y: frame.y.iter().copied().collect(),
            x,
            xtx_chol,
            chol_upper,
            init_beta: beta.iter().copied().collect(),
            init_sigma2_e: v / 2.0,
            init_sigma2_u: v / 2.0 / classes.len() as f64,
            classes,
        })
    }
}

struct State {
    beta: Vec<f64>,
    u: Vec<Vec<f64>>,
    sigma2_u: Vec<f64>,
    sigma2_e: f64,
    /// y - X beta - random part.
    resid: Vec<f64>,
}

impl State {
    fn finite(&self) -> bool {
        self.beta.iter().all(|v| v.is_finite())
            && self.sigma2_e.is_finite()
            && self.sigma2_e > 0.0
            && self.sigma2_u.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.u.iter().flatten().all(|v| v.is_finite())
    }
}

pub(super) fn run_chain(
    setup: &Setup,
    priors: &PriorConfig,
    cfg: &ChainConfig,
    chain: usize,
) -> Result<ChainDraws> {
    let mut rng = rng::stream(cfg.seed, chain as u64);
    let (n, p) = (setup.n, setup.p);
    let n_class = setup.classes.len();
    let cluster_priors: Vec<InvGamma> = setup
        .classes
        .iter()
        .map(|c| priors.for_scale(&c.name))
        .collect();
    let resid_prior = priors.residual();

    let mut state = State {
        beta: setup.init_beta.clone(),
        u: setup
            .classes
            .iter()
            .map(|c| vec![0.0; c.members.len()])
            .collect(),
        sigma2_u: vec![setup.init_sigma2_u; n_class],
        sigma2_e: setup.init_sigma2_e,
        resid: vec![0.0; n],
    };

    let n_params = p + n_class + 1;
    let n_u: usize = if cfg.store_u {
        state.u.iter().map(|u| u.len()).sum()
    } else {
        0
    };
    let kept = cfg.kept_per_chain();
    let mut values = vec![Vec::with_capacity(kept); n_params + n_u];
    let mut iterations = Vec::with_capacity(kept);

    let mut r = vec![0.0; n];
    let total = cfg.burn_in + cfg.iterations;
    for sweep in 0..total {
        // Fixed effects, given y minus the random part recomputed from scratch.
        r.copy_from_slice(&setup.y);
        for (cls, u) in setup.classes.iter().zip(&state.u) {
            for (ri, row) in r.iter_mut().zip(&cls.rows) {
                for &(j, w) in row {
                    *ri -= w * u[j];
                }
            }
        }
        let mut xtr = DVector::zeros(p);
        for (i, ri) in r.iter().enumerate() {
            let xi = &setup.x[i * p..(i + 1) * p];
            for k in 0..p {
                xtr[k] += xi[k] * ri;
            }
        }
        let mean = setup.xtx_chol.solve(&xtr);
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = setup
            .chol_upper
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        let sd_e = state.sigma2_e.sqrt();
        for k in 0..p {
            state.beta[k] = mean[k] + sd_e * noise[k];
        }
        for i in 0..n {
            let xi = &setup.x[i * p..(i + 1) * p];
            let fixed: f64 = xi.iter().zip(&state.beta).map(|(a, b)| a * b).sum();
            state.resid[i] = r[i] - fixed;
        }

        // Cluster effects, one at a time.
        for (c, cls) in setup.classes.iter().enumerate() {
            let prior_prec = 1.0 / state.sigma2_u[c];
            for (j, members) in cls.members.iter().enumerate() {
                let old = state.u[c][j];
                let sum_we: f64 = members.iter().map(|&(i, w)| w * state.resid[i]).sum();
                let precision = prior_prec + cls.sum_w2[j] / state.sigma2_e;
                let cond = NormalParams {
                    mean: (sum_we + old * cls.sum_w2[j]) / state.sigma2_e / precision,
                    variance: 1.0 / precision,
                };
                let new = cond.sample(&mut rng);
                let delta = new - old;
                for &(i, w) in members {
                    state.resid[i] -= w * delta;
                }
                state.u[c][j] = new;
            }
        }

        // Variance components.
        for (c, prior) in cluster_priors.iter().enumerate() {
            let ss: f64 = state.u[c].iter().map(|v| v * v).sum();
            let cond = InvGamma {
                shape: prior.shape + state.u[c].len() as f64 / 2.0,
                rate: prior.rate + ss / 2.0,
            };
            state.sigma2_u[c] = cond.sample(&mut rng);
        }
        let sse: f64 = state.resid.iter().map(|e| e * e).sum();
        let cond = InvGamma {
            shape: resid_prior.shape + n as f64 / 2.0,
            rate: resid_prior.rate + sse / 2.0,
        };
        state.sigma2_e = cond.sample(&mut rng);

        if !state.finite() {
            return Err(Error::Divergence {
                chain,
                iteration: sweep + 1,
            });
        }

        if sweep >= cfg.burn_in && (sweep - cfg.burn_in).is_multiple_of(cfg.thin) {
            iterations.push(sweep + 1);
            let mut k = 0;
            for &b in &state.beta {
                values[k].push(b);
                k += 1;
            }
            for &s in &state.sigma2_u {
                values[k].push(s);
                k += 1;
            }
            values[k].push(state.sigma2_e);
            k += 1;
            if cfg.store_u {
                for &v in state.u.iter().flatten() {
                    values[k].push(v);
                    k += 1;
                }
            }
        }
    }
    Ok(ChainDraws { iterations, values })
}
