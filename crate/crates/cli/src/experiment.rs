//! Replicated simulation studies: the cost of collapsing multiple membership
//! to single membership, and of fitting with the wrong weighting scheme.

use std::io::Write;

use mmfit_core::gibbs::{run_gibbs, sigma2_u_name, ChainConfig, ParamSummary, PriorConfig, FitResult, SIGMA2_E};
use mmfit_core::rng::derive_seed;
use mmfit_core::simulate::{simulate, SimConfig};
use mmfit_core::weights::{reweight_scheme, WeightScheme};
use mmfit_core::{collapse_to_single_membership, Dataset, ModelSpec};
use rayon::prelude::*;

/// Settings shared by both studies.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    /// Simulation template; its seed is the base for per-replicate seeds.
    pub sim: SimConfig,
    pub replicates: usize,
    /// Chain settings; the seed is likewise a base.
    pub chain: ChainConfig,
    pub priors: PriorConfig,
}

impl StudyConfig {
    fn replicate_configs(&self, r: usize) -> (SimConfig, ChainConfig) {
        let mut sim = self.sim.clone();
        sim.seed = derive_seed(self.sim.seed, r as u64);
        let mut chain = self.chain.clone();
        chain.seed = derive_seed(self.chain.seed, r as u64);
        (sim, chain)
    }
}

/// Posterior summaries of one fit, or the error that stopped it.
pub type FitOutcome = std::result::Result<Vec<ParamSummary>, String>;

fn fit_summaries(spec: &ModelSpec, data: &Dataset, priors: &PriorConfig, chain: &ChainConfig) -> FitOutcome {
    run_gibbs(spec, data, priors, chain)
        .map(|f: FitResult| f.summaries)
        .map_err(|e| e.to_string())
}

fn posterior_mean(outcome: &FitOutcome, name: &str) -> Option<f64> {
    outcome
        .as_ref()
        .ok()?
        .iter()
        .find(|s| s.name == name)
        .map(|s| s.mean)
}

/// One replicate of a two-fit comparison.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub replicate: usize,
    pub seed: u64,
    pub first: FitOutcome,
    pub second: FitOutcome,
}

impl ComparisonRow {
    pub fn ok(&self) -> bool {
        self.first.is_ok() && self.second.is_ok()
    }

    fn status(&self) -> String {
        match (&self.first, &self.second) {
            (Ok(_), Ok(_)) => "ok".into(),
            (Err(e), _) | (_, Err(e)) => e.replace([',', '\n'], ";"),
        }
    }
}

/// Per-replicate results of the bias study. `first` is the correct multiple
/// membership fit, `second` the fit on the collapsed design.
#[derive(Debug, Clone)]
pub struct BiasTable {
    pub classifications: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Simulates multiple membership data and fits both the correct model and the
/// model whose designs keep only each unit's highest-weight cluster. A failed
/// fit is recorded in its row; it does not stop the study.
pub fn run_bias_experiment(cfg: &StudyConfig) -> mmfit_core::Result<BiasTable> {
    cfg.sim.validate()?;
    cfg.chain.validate()?;
    let rows = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let (sim_cfg, chain) = cfg.replicate_configs(r);
            let sim = simulate(&sim_cfg);
            let (first, second) = match sim {
                Ok(sim) => {
                    let collapsed = sim.spec.map_designs(collapse_to_single_membership);
                    (
                        fit_summaries(&sim.spec, &sim.data, &cfg.priors, &chain),
                        fit_summaries(&collapsed, &sim.data, &cfg.priors, &chain),
                    )
                }
                Err(e) => (Err(e.to_string()), Err(e.to_string())),
            };
            ComparisonRow {
                replicate: r,
                seed: sim_cfg.seed,
                first,
                second,
            }
        })
        .collect();
    Ok(BiasTable {
        classifications: cfg.sim.classifications.iter().map(|c| c.name.clone()).collect(),
        rows,
    })
}

impl BiasTable {
    /// Posterior means of `sigma2_u` for one classification over successful
    /// replicates: (correct, collapsed).
    pub fn estimates(&self, classification: &str) -> Vec<(f64, f64)> {
        let name = sigma2_u_name(classification);
        self.rows
            .iter()
            .filter_map(|r| Some((posterior_mean(&r.first, &name)?, posterior_mean(&r.second, &name)?)))
            .collect()
    }

    /// Fraction of successful replicates whose collapsed estimate is below the
    /// correct one.
    pub fn fraction_collapsed_below(&self, classification: &str) -> f64 {
        let est = self.estimates(classification);
        est.iter().filter(|(c, s)| s < c).count() as f64 / est.len() as f64
    }

    /// Columns: `replicate,seed,status`, then per classification the correct
    /// and collapsed posterior means of its variance and a 0/1 indicator of
    /// collapsed < correct, then the two residual variance means. The last
    /// row holds column means over successful replicates.
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut header = Vec::new();
        for c in &self.classifications {
            header.push(format!("sigma2_u[{c}]_correct"));
            header.push(format!("sigma2_u[{c}]_collapsed"));
            header.push(format!("sigma2_u[{c}]_collapsed_below"));
        }
        header.push("sigma2_e_correct".into());
        header.push("sigma2_e_collapsed".into());
        let names: Vec<String> = self.classifications.iter().map(|c| sigma2_u_name(c)).collect();
        write_comparison(out, header, &self.rows, |row| {
            let mut vals = Vec::new();
            for name in &names {
                let a = posterior_mean(&row.first, name).unwrap_or(f64::NAN);
                let b = posterior_mean(&row.second, name).unwrap_or(f64::NAN);
                vals.extend([a, b, if b < a { 1.0 } else { 0.0 }]);
            }
            vals.push(posterior_mean(&row.first, SIGMA2_E).unwrap_or(f64::NAN));
            vals.push(posterior_mean(&row.second, SIGMA2_E).unwrap_or(f64::NAN));
            vals
        })
    }
}

/// Per-replicate results of the weighting-scheme study. `first` is the fit
/// with the weights as simulated, `second` the fit with equal weights.
#[derive(Debug, Clone)]
pub struct SensitivityTable {
    pub classifications: Vec<String>,
    pub truth: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
}

/// Simulates data under `cfg.sim` (normally with unequal weights) and fits
/// each replicate with the weights as given and with equal weights.
pub fn run_sensitivity_study(cfg: &StudyConfig) -> mmfit_core::Result<SensitivityTable> {
    cfg.sim.validate()?;
    cfg.chain.validate()?;
    let rows = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let (sim_cfg, chain) = cfg.replicate_configs(r);
            let (first, second) = match simulate(&sim_cfg) {
                Ok(sim) => {
                    let equal = sim.spec.map_designs(|d| reweight_scheme(d, WeightScheme::Equal));
                    (
                        fit_summaries(&sim.spec, &sim.data, &cfg.priors, &chain),
                        fit_summaries(&equal, &sim.data, &cfg.priors, &chain),
                    )
                }
                Err(e) => (Err(e.to_string()), Err(e.to_string())),
            };
            ComparisonRow {
                replicate: r,
                seed: sim_cfg.seed,
                first,
                second,
            }
        })
        .collect();
    Ok(SensitivityTable {
        classifications: cfg.sim.classifications.iter().map(|c| c.name.clone()).collect(),
        truth: cfg.sim.classifications.iter().map(|c| c.sigma2).collect(),
        rows,
    })
}

impl SensitivityTable {
    /// Mean absolute error of the `sigma2_u` posterior mean over successful
    /// replicates: (as given, equal).
    pub fn mean_abs_error(&self, classification: &str) -> (f64, f64) {
        let k = self
            .classifications
            .iter()
            .position(|c| c == classification)
            .expect("known classification");
        let name = sigma2_u_name(classification);
        let errs: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| {
                Some((
                    (posterior_mean(&r.first, &name)? - self.truth[k]).abs(),
                    (posterior_mean(&r.second, &name)? - self.truth[k]).abs(),
                ))
            })
            .collect();
        let m = errs.len() as f64;
        (
            errs.iter().map(|e| e.0).sum::<f64>() / m,
            errs.iter().map(|e| e.1).sum::<f64>() / m,
        )
    }

    /// Columns: `replicate,seed,status`, then per classification the true
    /// variance, both estimates and both absolute errors. The last row holds
    /// column means over successful replicates.
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut header = Vec::new();
        for c in &self.classifications {
            for suffix in ["truth", "as_given", "equal", "abs_error_as_given", "abs_error_equal"] {
                header.push(format!("sigma2_u[{c}]_{suffix}"));
            }
        }
        write_comparison(out, header, &self.rows, |row| {
            let mut vals = Vec::new();
            for (c, truth) in self.classifications.iter().zip(&self.truth) {
                let name = sigma2_u_name(c);
                let a = posterior_mean(&row.first, &name).unwrap_or(f64::NAN);
                let b = posterior_mean(&row.second, &name).unwrap_or(f64::NAN);
                vals.extend([*truth, a, b, (a - truth).abs(), (b - truth).abs()]);
            }
            vals
        })
    }
}

/// Writes `replicate,seed,status` plus `columns`, one row per replicate and a
/// final row of column means over successful replicates.
fn write_comparison(
    out: impl Write,
    columns: Vec<String>,
    rows: &[ComparisonRow],
    values: impl Fn(&ComparisonRow) -> Vec<f64>,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let width = columns.len();
    let mut header = vec!["replicate".to_string(), "seed".into(), "status".into()];
    header.extend(columns);
    w.write_record(&header)?;
    let mut sums = vec![0.0; width];
    let mut ok = 0usize;
    for row in rows {
        let mut rec = vec![row.replicate.to_string(), row.seed.to_string(), row.status()];
        if row.ok() {
            let vals = values(row);
            for (s, v) in sums.iter_mut().zip(&vals) {
                *s += v;
            }
            ok += 1;
            rec.extend(vals.iter().map(|v| v.to_string()));
        } else {
            rec.extend(std::iter::repeat_n(String::new(), width));
        }
        w.write_record(&rec)?;
    }
    let mut footer = vec!["mean".to_string(), String::new(), format!("ok={ok}/{}", rows.len())];
    footer.extend(sums.iter().map(|s| if ok == 0 { String::new() } else { (s / ok as f64).to_string() }));
    w.write_record(&footer)?;
    w.flush()?;
    Ok(())
}

/// Fits one dataset once per weighting scheme with identical chain settings.
pub fn fit_schemes(
    spec: &ModelSpec,
    data: &Dataset,
    schemes: &[WeightScheme],
    priors: &PriorConfig,
    chain: &ChainConfig,
) -> mmfit_core::Result<Vec<(WeightScheme, FitResult)>> {
    schemes
        .iter()
        .map(|&s| {
            let reweighted = spec.map_designs(|d| reweight_scheme(d, s));
            Ok((s, run_gibbs(&reweighted, data, priors, chain)?))
        })
        .collect()
}
