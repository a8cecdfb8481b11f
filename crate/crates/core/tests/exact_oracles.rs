//! Checks of the exact marginal likelihood and ML fitter against
//! independently computed references.

use std::f64::consts::PI;

use mmfit_core::exact::{fit_ml, gradient_check, MarginalModel, Variances};
use mmfit_core::rng;
use mmfit_core::simulate::{simulate, Cardinality, SimConfig, SimWeights};
use mmfit_core::{Classification, Dataset, Membership, MembershipDesign, ModelSpec};
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean) * (x - mean) / var)
}

fn one_class_model(
    y: &[f64],
    x: Option<&[f64]>,
    rows: Vec<Vec<Membership>>,
    j: usize,
) -> (ModelSpec, Dataset, MarginalModel) {
    let mut data = Dataset::with_sequential_ids("s", y.len());
    data.add_column("y", y.to_vec()).unwrap();
    let mut covs = vec![];
    if let Some(x) = x {
        data.add_column("x", x.to_vec()).unwrap();
        covs.push("x".to_string());
    }
    let d = MembershipDesign::new(Classification::sequential("t", "c", j).unwrap(), rows).unwrap();
    let spec = ModelSpec::new("y", covs, vec![d]).unwrap();
    let m = MarginalModel::from_spec(&spec, &data).unwrap();
    (spec, data, m)
}

fn mm_rows() -> Vec<Vec<Membership>> {
    vec![
        vec![Membership::new(0, 0.4), Membership::new(1, 0.6)],
        vec![Membership::new(1, 1.0)],
        vec![Membership::new(0, 0.75), Membership::new(1, 0.25)],
    ]
}

/// log p(y) by integrating both cluster effects out on a 2-D trapezoid grid.
fn quadrature_loglik(y: &[f64], x: &[f64], rows: &[Vec<Membership>], beta: [f64; 2], s2u: f64, s2e: f64) -> f64 {
    let points = 2001;
    let half = 8.0 * s2u.sqrt();
    let h = 2.0 * half / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|k| -half + k as f64 * h).collect();
    let prior: Vec<f64> = grid.iter().map(|u| normal_logpdf(*u, 0.0, s2u).exp()).collect();
    let mut total = 0.0;
    for (a, u1) in grid.iter().enumerate() {
        let wa = if a == 0 || a == points - 1 { 0.5 } else { 1.0 };
        for (b, u2) in grid.iter().enumerate() {
            let wb = if b == 0 || b == points - 1 { 0.5 } else { 1.0 };
            let u = [*u1, *u2];
            let mut ll = 0.0;
            for (i, row) in rows.iter().enumerate() {
                let mean = beta[0] + beta[1] * x[i] + row.iter().map(|m| m.weight * u[m.cluster]).sum::<f64>();
                ll += normal_logpdf(y[i], mean, s2e);
            }
            total += wa * wb * prior[a] * prior[b] * ll.exp();
        }
    }
    (total * h * h).ln()
}

#[test]
fn loglik_matches_two_dimensional_quadrature() {
    let y = [0.7, -0.4, 1.9];
    let x = [0.5, -1.0, 2.0];
    let (_, _, m) = one_class_model(&y, Some(&x), mm_rows(), 2);
    let beta = [0.2, 0.4];
    for (s2u, s2e) in [(1.0, 1.0), (0.5, 0.3), (2.0, 0.8)] {
        let v = Variances {
            sigma2_u: vec![s2u],
            sigma2_e: s2e,
        };
        let exact = m.log_likelihood(&beta, &v).unwrap();
        let quad = quadrature_loglik(&y, &x, &mm_rows(), beta, s2u, s2e);
        assert!((exact - quad).abs() < 1e-6, "exact {exact} quadrature {quad}");
    }
}

#[test]
fn loglik_matches_monte_carlo_density() {
    let y = [0.7, -0.4, 1.9];
    let x = [0.5, -1.0, 2.0];
    let rows = mm_rows();
    let (_, _, m) = one_class_model(&y, Some(&x), rows.clone(), 2);
    let (beta, s2u, s2e) = ([0.2, 0.4], 0.8, 0.6);
    let exact = m
        .log_likelihood(
            &beta,
            &Variances {
                sigma2_u: vec![s2u],
                sigma2_e: s2e,
            },
        )
        .unwrap();
    let mut r = rng::stream(42, 0);
    let draws = 200_000;
    let mut acc = 0.0;
    for _ in 0..draws {
        let u = [
            s2u.sqrt() * r.sample::<f64, _>(StandardNormal),
            s2u.sqrt() * r.sample::<f64, _>(StandardNormal),
        ];
        let ll: f64 = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mean = beta[0] + beta[1] * x[i] + row.iter().map(|m| m.weight * u[m.cluster]).sum::<f64>();
                normal_logpdf(y[i], mean, s2e)
            })
            .sum();
        acc += ll.exp();
    }
    let mc = (acc / draws as f64).ln();
    assert!((exact - mc).abs() < 0.02, "exact {exact} monte carlo {mc}");
}

/// Random-intercept marginal likelihood from the block structure of V:
/// each cluster contributes an exchangeable block sigma2_e I + sigma2_u 11'.
fn two_level_loglik(y: &[f64], x: &[f64], clusters: &[usize], beta: [f64; 2], s2u: f64, s2e: f64) -> f64 {
    let j = clusters.iter().max().map_or(0, |m| m + 1);
    let mut ll = 0.0;
    for c in 0..j {
        let r: Vec<f64> = (0..y.len())
            .filter(|&i| clusters[i] == c)
            .map(|i| y[i] - beta[0] - beta[1] * x[i])
            .collect();
        if r.is_empty() {
            continue;
        }
        let nj = r.len() as f64;
        let lambda = s2e + nj * s2u;
        let sum: f64 = r.iter().sum();
        let ss: f64 = r.iter().map(|v| v * v).sum();
        let log_det = (nj - 1.0) * s2e.ln() + lambda.ln();
        let quad = (ss - s2u * sum * sum / lambda) / s2e;
        ll += -0.5 * (nj * (2.0 * PI).ln() + log_det + quad);
    }
    ll
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_membership_reduces_to_two_level_likelihood(
        clusters in proptest::collection::vec(0usize..4, 2..12),
        noise in proptest::collection::vec(-2.0f64..2.0, 12),
        s2u in 0.05f64..3.0,
        s2e in 0.05f64..3.0,
        b0 in -1.0f64..1.0,
        b1 in -1.0f64..1.0,
    ) {
        let n = clusters.len();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = noise[..n].to_vec();
        let rows = clusters.iter().map(|&c| vec![Membership::new(c, 1.0)]).collect();
        let (_, _, m) = one_class_model(&y, Some(&x), rows, 4);
        let v = Variances { sigma2_u: vec![s2u], sigma2_e: s2e };
        let exact = m.log_likelihood(&[b0, b1], &v).unwrap();
        let reference = two_level_loglik(&y, &x, &clusters, [b0, b1], s2u, s2e);
        prop_assert!((exact - reference).abs() < 1e-10, "{} vs {}", exact, reference);
    }

    #[test]
    fn covariance_is_positive_definite(
        s2u in proptest::collection::vec(1e-6f64..50.0, 2),
        s2e in 1e-6f64..50.0,
    ) {
        let sim = simulate(&two_class_config(30, 9)).unwrap();
        let m = MarginalModel::from_spec(&sim.spec, &sim.data).unwrap();
        let v = Variances { sigma2_u: s2u, sigma2_e: s2e };
        prop_assert!(m.log_likelihood(&[0.0, 0.0], &v).unwrap().is_finite());
    }

    #[test]
    fn loglik_invariant_to_cluster_relabeling(
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        s2u in 0.1f64..2.0,
    ) {
        let y = [0.3, -1.0, 2.2, 0.1, 0.9];
        let base = vec![
            vec![(0usize, 0.5), (1, 0.5)],
            vec![(1, 1.0)],
            vec![(2, 0.2), (3, 0.8)],
            vec![(3, 1.0)],
            vec![(0, 0.1), (2, 0.6), (3, 0.3)],
        ];
        let to_rows = |f: &dyn Fn(usize) -> usize| -> Vec<Vec<Membership>> {
            base.iter().map(|r| r.iter().map(|&(c, w)| Membership::new(f(c), w)).collect()).collect()
        };
        let (_, _, a) = one_class_model(&y, None, to_rows(&|c| c), 4);
        let (_, _, b) = one_class_model(&y, None, to_rows(&|c| perm[c]), 4);
        let v = Variances { sigma2_u: vec![s2u], sigma2_e: 0.7 };
        let la = a.log_likelihood(&[0.2], &v).unwrap();
        let lb = b.log_likelihood(&[0.2], &v).unwrap();
        prop_assert!((la - lb).abs() < 1e-10);
    }
}

fn two_class_config(n: usize, seed: u64) -> SimConfig {
    use mmfit_core::simulate::ClassificationSim;
    SimConfig {
        n_units: n,
        classifications: vec![
            ClassificationSim {
                name: "teacher".into(),
                n_clusters: 6,
                cardinality: Cardinality::UpTo(3),
                weights: SimWeights::RandomProportions,
                sigma2: 0.4,
            },
            ClassificationSim {
                name: "school".into(),
                n_clusters: 4,
                cardinality: Cardinality::Fixed(1),
                weights: SimWeights::Equal,
                sigma2: 0.3,
            },
        ],
        beta: vec![0.5, -0.3],
        sigma2_e: 1.0,
        seed,
    }
}

#[test]
fn gradient_matches_finite_differences_at_random_points() {
    let mut r = rng::stream(2024, 0);
    for k in 0..20 {
        let sim = simulate(&two_class_config(25, 100 + k)).unwrap();
        let m = MarginalModel::from_spec(&sim.spec, &sim.data).unwrap();
        let beta = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let v = Variances {
            sigma2_u: vec![r.random_range(0.1..3.0), r.random_range(0.1..3.0)],
            sigma2_e: r.random_range(0.1..3.0),
        };
        let dev = gradient_check(&m, &beta, &v, 1e-5).unwrap();
        assert!(dev < 1e-5, "point {k}: deviation {dev}");
    }
}

#[test]
fn finite_difference_error_grows_with_step() {
    let sim = simulate(&two_class_config(25, 7)).unwrap();
    let m = MarginalModel::from_spec(&sim.spec, &sim.data).unwrap();
    let v = Variances {
        sigma2_u: vec![0.7, 1.3],
        sigma2_e: 0.9,
    };
    let beta = [0.3, -0.2];
    let devs: Vec<f64> = [1e-4, 1e-3, 1e-2]
        .iter()
        .map(|h| gradient_check(&m, &beta, &v, *h).unwrap())
        .collect();
    assert!(devs[0] < devs[1] && devs[1] < devs[2], "{devs:?}");
    // Central differences: error ~ h^2, so a 10x larger step costs ~100x.
    assert!(devs[2] / devs[1] > 30.0 && devs[2] / devs[1] < 300.0, "{devs:?}");
}

#[test]
fn balanced_one_way_layout_matches_closed_form() {
    let (groups, per) = (8usize, 5usize);
    let mut r = rng::stream(5, 0);
    let mut y = Vec::new();
    let mut clusters = Vec::new();
    for g in 0..groups {
        let effect: f64 = 0.8 * r.sample::<f64, _>(StandardNormal);
        for _ in 0..per {
            y.push(1.0 + effect + r.sample::<f64, _>(StandardNormal));
            clusters.push(g);
        }
    }
    let rows = clusters.iter().map(|&c| vec![Membership::new(c, 1.0)]).collect();
    let (_, _, m) = one_class_model(&y, None, rows, groups);
    let fit = fit_ml(&m).unwrap();

    let n = y.len() as f64;
    let grand = y.iter().sum::<f64>() / n;
    let means: Vec<f64> = (0..groups)
        .map(|g| y[g * per..(g + 1) * per].iter().sum::<f64>() / per as f64)
        .collect();
    let ssw: f64 = (0..y.len()).map(|i| (y[i] - means[clusters[i]]).powi(2)).sum();
    let ssb: f64 = means.iter().map(|mu| per as f64 * (mu - grand).powi(2)).sum();
    let s2e = ssw / (groups * (per - 1)) as f64;
    let s2u = (ssb / groups as f64 - s2e) / per as f64;
    assert!(s2u > 0.0);
    assert!((fit.variances.sigma2_e - s2e).abs() < 1e-6, "{} vs {s2e}", fit.variances.sigma2_e);
    assert!((fit.variances.sigma2_u[0] - s2u).abs() < 1e-6, "{} vs {s2u}", fit.variances.sigma2_u[0]);
    assert!((fit.beta[0] - grand).abs() < 1e-8);
    assert_eq!(fit.at_boundary, vec![false, false]);
}

#[test]
fn noise_free_between_cluster_signal_hits_the_boundary() {
    // Within-cluster noise of variance 1e-6 with every cluster mean exactly
    // zero: the data carry no between-cluster variation.
    let (groups, per) = (6usize, 4usize);
    let mut r = rng::stream(8, 0);
    let mut y = Vec::new();
    let mut clusters = Vec::new();
    for g in 0..groups {
        let e: Vec<f64> = (0..per).map(|_| 1e-3 * r.sample::<f64, _>(StandardNormal)).collect();
        let mu = e.iter().sum::<f64>() / per as f64;
        for v in e {
            y.push(2.5 + v - mu);
            clusters.push(g);
        }
    }
    let rows = clusters.iter().map(|&c| vec![Membership::new(c, 1.0)]).collect();
    let (_, _, m) = one_class_model(&y, None, rows, groups);
    let fit = fit_ml(&m).unwrap();
    assert_eq!(fit.at_boundary, vec![true, false]);
    assert!(fit.variances.sigma2_u[0] < 1e-12);
    let expected = y.iter().map(|v| (v - 2.5).powi(2)).sum::<f64>() / y.len() as f64;
    assert!((fit.variances.sigma2_e / expected - 1.0).abs() < 1e-6);
    assert!(fit.variances.sigma2_e > 1e-7 && fit.variances.sigma2_e < 1e-5);
}

#[test]
fn ml_recovers_simulation_truth() {
    let reps = 50;
    let truth = [0.0, 0.5, 0.5, 1.0];
    let mut est: Vec<[f64; 4]> = Vec::new();
    for k in 0..reps {
        let cfg = SimConfig::single(
            500,
            20,
            Cardinality::UpTo(3),
            SimWeights::Equal,
            [truth[0], truth[1]],
            truth[2],
            truth[3],
            rng::derive_seed(31, k),
        );
        let sim = simulate(&cfg).unwrap();
        let m = MarginalModel::from_spec(&sim.spec, &sim.data).unwrap();
        let fit = fit_ml(&m).unwrap();
        est.push([
            fit.beta[0],
            fit.beta[1],
            fit.variances.sigma2_u[0],
            fit.variances.sigma2_e,
        ]);
    }
    for p in 0..4 {
        let vals: Vec<f64> = est.iter().map(|e| e[p]).collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let se = sd / (reps as f64).sqrt();
        assert!(
            (mean - truth[p]).abs() < 3.0 * se,
            "parameter {p}: mean {mean}, truth {}, se {se}",
            truth[p]
        );
    }
}
