//! Gibbs full conditionals against a dense joint-Gaussian posterior and grid
//! quadrature of the unnormalized joint density.

use mmfit_core::exact::dense_weights;
use mmfit_core::gibbs::{
    full_conditional_beta, full_conditional_u, full_conditional_variances, run_gibbs, ChainConfig,
    InvGamma, PriorConfig,
};
use mmfit_core::rng;
use mmfit_core::{Classification, Dataset, Membership, MembershipDesign, ModelFrame, ModelSpec, Parameters};
use mmfit_oracles::{
    normal_logpdf, positive_quadrature_moments, quadrature_2d, quadrature_moments, two_level_gibbs,
    JointGaussian,
};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

const REL_TOL: f64 = 1e-4;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_TOL * b.abs() + 1e-12
}

struct Instance {
    spec: ModelSpec,
    frame: ModelFrame,
    state: Parameters,
}

impl Instance {
    fn y(&self) -> Vec<f64> {
        self.frame.y.iter().copied().collect()
    }

    fn joint(&self) -> JointGaussian {
        let w: Vec<DMatrix<f64>> = self.frame.designs.iter().map(dense_weights).collect();
        JointGaussian::new(&self.y(), &self.frame.x, &w, &self.state.sigma2_u, self.state.sigma2_e)
    }

    /// `(beta, u_1, ..., u_C)` stacked in the joint's coordinate order.
    fn stacked(&self) -> Vec<f64> {
        let mut v = self.state.beta.clone();
        for u in &self.state.u {
            v.extend(u);
        }
        v
    }

    fn fitted(&self, state: &Parameters) -> Vec<f64> {
        (0..self.frame.n())
            .map(|i| {
                let mut m: f64 = (0..self.frame.p()).map(|k| self.frame.x[(i, k)] * state.beta[k]).sum();
                for (d, u) in self.frame.designs.iter().zip(&state.u) {
                    m += d.row(i).iter().map(|e| e.weight * u[e.cluster]).sum::<f64>();
                }
                m
            })
            .collect()
    }

    /// Unnormalized log joint density of data and effects.
    fn log_joint(&self, state: &Parameters, priors: &PriorConfig) -> f64 {
        let fitted = self.fitted(state);
        let mut l: f64 = self
            .frame
            .y
            .iter()
            .zip(&fitted)
            .map(|(y, m)| normal_logpdf(*y, *m, state.sigma2_e))
            .sum();
        for (c, u) in state.u.iter().enumerate() {
            l += u.iter().map(|v| normal_logpdf(*v, 0.0, state.sigma2_u[c])).sum::<f64>();
            let p = priors.for_scale(self.spec.classifications[c].name());
            l += -(p.shape + 1.0) * state.sigma2_u[c].ln() - p.rate / state.sigma2_u[c];
        }
        let p = priors.residual();
        l + -(p.shape + 1.0) * state.sigma2_e.ln() - p.rate / state.sigma2_e
    }
}

/// Random instance with `n <= 6` units, at most 4 clusters in total, one or
/// two classifications and one or two fixed effects.
fn random_instance(seed: u64) -> Instance {
    let mut r = rng::stream(seed, 0);
    let n = r.random_range(3..=6);
    let n_class = r.random_range(1..=2);
    let mut designs = Vec::new();
    let mut left = 4;
    for c in 0..n_class {
        let max_j = if c + 1 < n_class { left - 1 } else { left };
        let j = r.random_range(1..=max_j.min(3));
        left -= j;
        let rows = (0..n)
            .map(|_| {
                let m = r.random_range(1..=j);
                let picks = rand::seq::index::sample(&mut r, j, m);
                let raw: Vec<f64> = (0..m).map(|_| r.random_range(0.1..1.0)).collect();
                let total: f64 = raw.iter().sum();
                let mut row: Vec<Membership> = picks
                    .iter()
                    .zip(&raw)
                    .map(|(k, w)| Membership::new(k, w / total))
                    .collect();
                row.sort_by_key(|e| e.cluster);
                row
            })
            .collect();
        let cls = Classification::sequential(format!("k{c}"), "c", j).unwrap();
        designs.push(MembershipDesign::from_raw(cls, rows).unwrap());
    }
    let p = r.random_range(1..=2);
    let mut data = Dataset::with_sequential_ids("s", n);
    let y: Vec<f64> = (0..n).map(|_| 2.0 * r.sample::<f64, _>(StandardNormal)).collect();
    data.add_column("y", y).unwrap();
    let mut covs = Vec::new();
    if p == 2 {
        data.add_column("x", (0..n).map(|i| i as f64 - 1.0 + r.random_range(-0.3..0.3)).collect())
            .unwrap();
        covs.push("x".to_string());
    }
    let spec = ModelSpec::new("y", covs, designs).unwrap();
    let frame = ModelFrame::new(&spec, &data).unwrap();
    let state = Parameters {
        beta: (0..p).map(|_| r.random_range(-1.0..1.0)).collect(),
        sigma2_e: r.random_range(0.2..2.0),
        sigma2_u: (0..n_class).map(|_| r.random_range(0.2..2.0)).collect(),
        u: spec
            .classifications
            .iter()
            .map(|d| (0..d.n_clusters()).map(|_| r.random_range(-1.5..1.5)).collect())
            .collect(),
    };
    Instance { spec, frame, state }
}

#[test]
fn beta_conditional_matches_dense_joint_gaussian() {
    for seed in 0..200 {
        let inst = random_instance(seed);
        let p = inst.frame.p();
        let block: Vec<usize> = (0..p).collect();
        let (mean, cov) = inst.joint().conditional(&block, &inst.stacked());
        let got = full_conditional_beta(&inst.state, &inst.frame).unwrap();
        for a in 0..p {
            assert!(close(got.mean[a], mean[a]), "seed {seed}: mean {} vs {}", got.mean[a], mean[a]);
            for b in 0..p {
                assert!(close(got.covariance[(a, b)], cov[(a, b)]), "seed {seed}: cov");
            }
        }
    }
}

#[test]
fn cluster_effect_conditional_matches_dense_joint_gaussian() {
    for seed in 0..200 {
        let inst = random_instance(seed);
        let joint = inst.joint();
        let values = inst.stacked();
        let mut offset = inst.frame.p();
        for (c, d) in inst.frame.designs.iter().enumerate() {
            for j in 0..d.n_clusters() {
                let (mean, cov) = joint.conditional(&[offset + j], &values);
                let got = full_conditional_u(&inst.state, &inst.frame, c, j).unwrap();
                assert!(close(got.mean, mean[0]), "seed {seed} u[{c}][{j}]: {} vs {}", got.mean, mean[0]);
                assert!(close(got.variance, cov[(0, 0)]), "seed {seed} u[{c}][{j}] variance");
            }
            offset += d.n_clusters();
        }
    }
}

#[test]
fn cluster_effect_conditional_matches_one_dimensional_quadrature() {
    let priors = PriorConfig::default();
    for seed in 0..40 {
        let inst = random_instance(seed);
        for (c, d) in inst.frame.designs.iter().enumerate() {
            for j in 0..d.n_clusters() {
                let got = full_conditional_u(&inst.state, &inst.frame, c, j).unwrap();
                let sd = got.variance.sqrt();
                let moments = quadrature_moments(
                    |v| {
                        let mut s = inst.state.clone();
                        s.u[c][j] = v;
                        inst.log_joint(&s, &priors)
                    },
                    got.mean - 12.0 * sd,
                    got.mean + 12.0 * sd,
                    4001,
                );
                assert!(close(got.mean, moments.mean), "seed {seed}: {} vs {}", got.mean, moments.mean);
                assert!(close(got.variance, moments.variance), "seed {seed}: variance");
            }
        }
    }
}

#[test]
fn pairwise_cluster_effects_match_two_dimensional_quadrature() {
    // Three units, two clusters, one intercept.
    let rows = vec![
        vec![Membership::new(0, 0.4), Membership::new(1, 0.6)],
        vec![Membership::new(0, 1.0)],
        vec![Membership::new(0, 0.25), Membership::new(1, 0.75)],
    ];
    let w = [[0.4, 0.6], [1.0, 0.0], [0.25, 0.75]];
    let y = [1.2, -0.3, 0.8];
    let mut data = Dataset::with_sequential_ids("s", 3);
    data.add_column("y", y.to_vec()).unwrap();
    let d = MembershipDesign::new(Classification::sequential("t", "c", 2).unwrap(), rows).unwrap();
    let spec = ModelSpec::new("y", vec![], vec![d]).unwrap();
    let frame = ModelFrame::new(&spec, &data).unwrap();
    let (beta0, s2u, s2e) = (0.3, 0.8, 0.5);
    let grid = quadrature_2d(&y, &[beta0; 3], &w, s2u, s2e, [0.0, 0.0], [6.0, 6.0], 2001);
    // Refine on a box of +-6 conditional sds around the coarse mean.
    let sds = [grid.cov[0][0].sqrt(), grid.cov[1][1].sqrt()];
    let grid = quadrature_2d(&y, &[beta0; 3], &w, s2u, s2e, grid.mean, [6.0 * sds[0], 6.0 * sds[1]], 2001);

    let u2 = -0.4;
    let state = Parameters {
        beta: vec![beta0],
        sigma2_e: s2e,
        sigma2_u: vec![s2u],
        u: vec![vec![0.0, u2]],
    };
    let got = full_conditional_u(&state, &frame, 0, 0).unwrap();
    let c = grid.cov;
    let mean = grid.mean[0] + c[0][1] / c[1][1] * (u2 - grid.mean[1]);
    let var = c[0][0] - c[0][1] * c[0][1] / c[1][1];
    assert!(close(got.mean, mean), "{} vs {mean}", got.mean);
    assert!(close(got.variance, var), "{} vs {var}", got.variance);
}

#[test]
fn variance_conditionals_match_log_scale_quadrature() {
    // Informative priors so the conditionals have finite variance even for a
    // single cluster.
    let priors = PriorConfig::uniform(2.5, 0.7).unwrap();
    for seed in 0..30 {
        let inst = random_instance(seed);
        let got = full_conditional_variances(&inst.state, &inst.frame, &priors).unwrap();
        for c in 0..inst.state.sigma2_u.len() {
            let m = positive_quadrature_moments(|s| {
                let mut st = inst.state.clone();
                st.sigma2_u[c] = s;
                inst.log_joint(&st, &priors)
            });
            assert!(close(got.sigma2_u[c].mean(), m.mean), "seed {seed}: sigma2_u mean");
            assert!(close(got.sigma2_u[c].variance(), m.variance), "seed {seed}: sigma2_u variance");
        }
        let m = positive_quadrature_moments(|s| {
            let mut st = inst.state.clone();
            st.sigma2_e = s;
            inst.log_joint(&st, &priors)
        });
        assert!(close(got.sigma2_e.mean(), m.mean), "seed {seed}: sigma2_e mean");
        assert!(close(got.sigma2_e.variance(), m.variance), "seed {seed}: sigma2_e variance");
    }
}

#[test]
fn residual_variance_draws_average_to_quadrature_mean() {
    let priors = PriorConfig::uniform(2.5, 0.7).unwrap();
    let inst = random_instance(7);
    let cond = full_conditional_variances(&inst.state, &inst.frame, &priors).unwrap().sigma2_e;
    let m = positive_quadrature_moments(|s| {
        let mut st = inst.state.clone();
        st.sigma2_e = s;
        inst.log_joint(&st, &priors)
    });
    let mut r = rng::stream(99, 0);
    let draws = 100_000;
    let mean = (0..draws).map(|_| cond.sample(&mut r)).sum::<f64>() / draws as f64;
    assert!((mean - m.mean).abs() < 0.01 * m.mean, "{mean} vs {}", m.mean);
}

#[test]
fn inverse_gamma_sampler_matches_moments() {
    let ig = InvGamma::new(6.0, 2.5).unwrap();
    let mut r = rng::stream(3, 1);
    let draws: Vec<f64> = (0..200_000).map(|_| ig.sample(&mut r)).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64;
    let se = (ig.variance() / draws.len() as f64).sqrt();
    assert!((mean - ig.mean()).abs() < 4.0 * se);
    assert!((var - ig.variance()).abs() < 0.05 * ig.variance());
}

#[test]
fn single_membership_sampler_agrees_with_two_level_sampler() {
    let (n, j) = (300, 15);
    let mut r = rng::stream(11, 0);
    let clusters: Vec<usize> = (0..n).map(|i| i % j).collect();
    let effects: Vec<f64> = (0..j).map(|_| 0.6 * r.sample::<f64, _>(StandardNormal)).collect();
    let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * x[i] + effects[clusters[i]] + r.sample::<f64, _>(StandardNormal))
        .collect();

    let mut data = Dataset::with_sequential_ids("s", n);
    data.add_column("y", y.clone()).unwrap();
    data.add_column("x", x.clone()).unwrap();
    let d = MembershipDesign::hierarchical(Classification::sequential("g", "c", j).unwrap(), &clusters).unwrap();
    let spec = ModelSpec::new("y", vec!["x".into()], vec![d]).unwrap();
    let cfg = ChainConfig {
        burn_in: 1000,
        iterations: 100_000,
        n_chains: 2,
        seed: 5,
        ..ChainConfig::default()
    };
    let fit = run_gibbs(&spec, &data, &PriorConfig::default(), &cfg).unwrap();

    let xm = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { x[i] });
    let reference = two_level_gibbs(&y, &xm, &clusters, j, (0.001, 0.001), 1000, 200_000, 17);
    let series: [(&str, &[f64]); 4] = [
        ("beta_0", &reference.beta[0]),
        ("beta_1", &reference.beta[1]),
        ("sigma2_u[g]", &reference.sigma2_u),
        ("sigma2_e", &reference.sigma2_e),
    ];
    for (name, draws) in series {
        let ours = fit.summary(name).unwrap();
        let theirs = mmfit_core::gibbs::diagnostics::summarize(name, &[draws]);
        let se = (ours.mcse.powi(2) + theirs.mcse.powi(2)).sqrt();
        assert!(
            (ours.mean - theirs.mean).abs() < 2.0 * se,
            "{name}: {} vs {} (combined MCSE {se})",
            ours.mean,
            theirs.mean
        );
        assert!(ours.q025 < theirs.q975 && theirs.q025 < ours.q975, "{name}: intervals disjoint");
    }
}
