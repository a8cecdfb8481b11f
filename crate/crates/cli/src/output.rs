//! Files written by the commands. Every writer is deterministic: floats use
//! the shortest round-trip representation and nothing depends on time or
//! thread scheduling.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mmfit_core::exact::MlEstimates;
use mmfit_core::gibbs::{sigma2_u_name, weighted_vpc, FitResult, ParamSummary, SIGMA2_E};
use mmfit_core::{Dataset, MembershipDesign, ModelSpec, Parameters};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::ingest::{MEMBERSHIP_COLUMNS, UNIT_ID};

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Output {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "parameter", "mean", "sd", "q2.5", "q50", "q97.5", "ess", "rhat", "mcse", "constant_chain",
];

fn summary_record(s: &ParamSummary) -> Vec<String> {
    vec![
        s.name.clone(),
        s.mean.to_string(),
        s.sd.to_string(),
        s.q025.to_string(),
        s.q50.to_string(),
        s.q975.to_string(),
        s.ess.to_string(),
        fmt_opt(s.rhat),
        s.mcse.to_string(),
        s.constant_chain.to_string(),
    ]
}

pub fn write_gibbs_summary(path: &Path, fit: &FitResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err(path))?;
    for s in &fit.summaries {
        w.write_record(summary_record(s)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Side-by-side summaries keyed by a label in the first column.
pub fn write_keyed_summaries(path: &Path, key: &str, fits: &[(String, &FitResult)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec![key];
    header.extend(SUMMARY_COLUMNS);
    w.write_record(header).map_err(csv_err(path))?;
    for (label, fit) in fits {
        for s in &fit.summaries {
            let mut rec = vec![label.clone()];
            rec.extend(summary_record(s));
            w.write_record(rec).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// One row per stored draw: chain, sweep number, then every parameter.
pub fn write_draws(path: &Path, fit: &FitResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(fit.names.iter().cloned());
    w.write_record(&header).map_err(csv_err(path))?;
    for (c, chain) in fit.chains.iter().enumerate() {
        for (t, it) in chain.iterations.iter().enumerate() {
            let mut rec = vec![c.to_string(), it.to_string()];
            rec.extend(chain.values.iter().map(|v| v[t].to_string()));
            w.write_record(&rec).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn ml_names(spec: &ModelSpec) -> Vec<String> {
    let mut names = spec.beta_names();
    names.extend(spec.classifications.iter().map(|d| sigma2_u_name(d.name())));
    names.push(SIGMA2_E.to_string());
    names
}

fn ml_values(est: &MlEstimates) -> Vec<f64> {
    let mut v = est.beta.clone();
    v.extend(&est.variances.sigma2_u);
    v.push(est.variances.sigma2_e);
    v
}

pub fn write_ml_summary(path: &Path, spec: &ModelSpec, est: &MlEstimates) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["parameter", "estimate", "at_boundary"]).map_err(csv_err(path))?;
    let p = est.beta.len();
    for (k, (name, v)) in ml_names(spec).iter().zip(ml_values(est)).enumerate() {
        let boundary = k >= p && est.at_boundary[k - p];
        w.write_record([name.clone(), v.to_string(), boundary.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct EstimateJson {
    name: String,
    estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    at_boundary: Option<bool>,
}

#[derive(Serialize)]
struct EstimatesJson {
    engine: &'static str,
    n_units: usize,
    log_likelihood: f64,
    iterations: usize,
    parameters: Vec<EstimateJson>,
    variance_partition: Vec<PartitionJson>,
    log_likelihood_trace: Vec<f64>,
}

#[derive(Serialize)]
struct PartitionJson {
    classification: String,
    vpc: f64,
    weighted_vpc_mean: f64,
    weighted_vpc_min: f64,
    weighted_vpc_max: f64,
}

/// Variance shares at fixed variance values.
fn partition_at(designs: &[MembershipDesign], sigma2_u: &[f64], sigma2_e: f64) -> Vec<PartitionJson> {
    let total: f64 = sigma2_u.iter().sum::<f64>() + sigma2_e;
    let shares = weighted_vpc(designs, sigma2_u, sigma2_e);
    designs
        .iter()
        .zip(sigma2_u)
        .zip(shares)
        .map(|((d, s), unit)| PartitionJson {
            classification: d.name().to_string(),
            vpc: s / total,
            weighted_vpc_mean: unit.iter().sum::<f64>() / unit.len() as f64,
            weighted_vpc_min: unit.iter().copied().fold(f64::INFINITY, f64::min),
            weighted_vpc_max: unit.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

pub fn write_estimates_json(path: &Path, spec: &ModelSpec, n_units: usize, est: &MlEstimates) -> Result<()> {
    let p = est.beta.len();
    let parameters = ml_names(spec)
        .into_iter()
        .zip(ml_values(est))
        .enumerate()
        .map(|(k, (name, estimate))| EstimateJson {
            name,
            estimate,
            at_boundary: (k >= p).then(|| est.at_boundary[k - p]),
        })
        .collect();
    let doc = EstimatesJson {
        engine: "exact",
        n_units,
        log_likelihood: est.log_likelihood,
        iterations: est.iterations,
        parameters,
        variance_partition: partition_at(&spec.classifications, &est.variances.sigma2_u, est.variances.sigma2_e),
        log_likelihood_trace: est.trace.clone(),
    };
    write_json(path, &doc)
}

/// Shared header of both report kinds.
fn report_header(out: &mut String, engine: &str, spec: &ModelSpec, n_units: usize, dropped: usize) {
    let _ = writeln!(out, "engine: {engine}");
    let _ = writeln!(out, "response: {}", spec.response);
    let covs = if spec.fixed_covariates.is_empty() {
        "(intercept only)".to_string()
    } else {
        spec.fixed_covariates.join(", ")
    };
    let _ = writeln!(out, "covariates: {covs}");
    let _ = writeln!(out, "units: {n_units} used, {dropped} dropped for missing values");
    for d in &spec.classifications {
        let multi = d.rows().iter().filter(|r| r.len() > 1).count();
        let _ = writeln!(
            out,
            "classification {}: {} clusters, {} units with multiple membership",
            d.name(),
            d.n_clusters(),
            multi
        );
    }
}

fn partition_section(out: &mut String, parts: &[PartitionJson]) {
    let _ = writeln!(out, "\nvariance partition (share of total variance)");
    let _ = writeln!(
        out,
        "{:<20} {:>10} {:>14} {:>14} {:>14}",
        "classification", "vpc", "weighted_mean", "weighted_min", "weighted_max"
    );
    for p in parts {
        let _ = writeln!(
            out,
            "{:<20} {:>10.4} {:>14.4} {:>14.4} {:>14.4}",
            p.classification, p.vpc, p.weighted_vpc_mean, p.weighted_vpc_min, p.weighted_vpc_max
        );
    }
    let _ = writeln!(
        out,
        "weighted shares scale each variance by the unit's sum of squared weights"
    );
}

pub fn gibbs_report(spec: &ModelSpec, fit: &FitResult, n_units: usize, dropped: usize, chains: usize) -> String {
    let mut out = String::new();
    report_header(&mut out, "gibbs", spec, n_units, dropped);
    let _ = writeln!(out, "chains: {chains}, draws kept: {}", fit.total_draws());
    let _ = writeln!(out, "\nposterior summaries");
    let _ = writeln!(
        out,
        "{:<28} {:>12} {:>12} {:>12} {:>12} {:>10} {:>8}",
        "parameter", "mean", "sd", "q2.5", "q97.5", "ess", "rhat"
    );
    let p = spec.n_fixed() + spec.n_classifications() + 1;
    for s in fit.summaries.iter().take(p) {
        let _ = writeln!(
            out,
            "{:<28} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>10.1} {:>8}",
            s.name,
            s.mean,
            s.sd,
            s.q025,
            s.q975,
            s.ess,
            s.rhat.map_or("NA".to_string(), |r| format!("{r:.4}"))
        );
    }
    let parts: Vec<PartitionJson> = fit
        .partition
        .iter()
        .map(|v| PartitionJson {
            classification: v.classification.clone(),
            vpc: v.vpc,
            weighted_vpc_mean: v.weighted_vpc_mean,
            weighted_vpc_min: v.weighted_vpc_min,
            weighted_vpc_max: v.weighted_vpc_max,
        })
        .collect();
    partition_section(&mut out, &parts);
    if !fit.warnings.is_empty() {
        let _ = writeln!(out, "\nwarnings");
        for w in &fit.warnings {
            let _ = writeln!(out, "  {w}");
        }
    }
    out
}

pub fn ml_report(spec: &ModelSpec, est: &MlEstimates, n_units: usize, dropped: usize) -> String {
    let mut out = String::new();
    report_header(&mut out, "exact", spec, n_units, dropped);
    let _ = writeln!(
        out,
        "log-likelihood: {:.6} after {} iterations",
        est.log_likelihood, est.iterations
    );
    let _ = writeln!(out, "\nmaximum likelihood estimates");
    let p = est.beta.len();
    for (k, (name, v)) in ml_names(spec).iter().zip(ml_values(est)).enumerate() {
        let flag = if k >= p && est.at_boundary[k - p] {
            "  (at zero boundary)"
        } else {
            ""
        };
        let _ = writeln!(out, "{name:<28} {v:>14.6}{flag}");
    }
    partition_section(
        &mut out,
        &partition_at(&spec.classifications, &est.variances.sigma2_u, est.variances.sigma2_e),
    );
    out
}

/// Writes `unit_id` followed by every column of `data`.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec![UNIT_ID.to_string()];
    header.extend(data.column_names().iter().cloned());
    w.write_record(&header).map_err(csv_err(path))?;
    let cols: Vec<&[f64]> = data
        .column_names()
        .iter()
        .map(|n| data.column(n).expect("listed column"))
        .collect();
    for (i, id) in data.unit_ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(cols.iter().map(|c| c[i].to_string()));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Long-format membership file. Clusters nobody belongs to are declared with
/// a zero-weight row on the first unit so that reading the file back gives
/// the same cluster set.
pub fn write_memberships(path: &Path, design: &MembershipDesign, unit_ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(MEMBERSHIP_COLUMNS).map_err(csv_err(path))?;
    let labels = design.classification().labels();
    for (i, row) in design.rows().iter().enumerate() {
        for m in row {
            w.write_record([
                unit_ids[i].as_str(),
                design.name(),
                labels[m.cluster].as_str(),
                &m.weight.to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    if let Some(first) = unit_ids.first() {
        for (j, members) in design.cluster_members().iter().enumerate() {
            if members.is_empty() {
                w.write_record([first.as_str(), design.name(), labels[j].as_str(), "0"])
                    .map_err(csv_err(path))?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct TruthClassification<'a> {
    name: &'a str,
    sigma2_u: f64,
    labels: &'a [String],
    effects: &'a [f64],
}

#[derive(Serialize)]
struct TruthJson<'a> {
    seed: u64,
    response: &'a str,
    covariates: &'a [String],
    beta: &'a [f64],
    sigma2_e: f64,
    classifications: Vec<TruthClassification<'a>>,
}

pub fn write_truth(path: &Path, seed: u64, spec: &ModelSpec, truth: &Parameters) -> Result<()> {
    let doc = TruthJson {
        seed,
        response: &spec.response,
        covariates: &spec.fixed_covariates,
        beta: &truth.beta,
        sigma2_e: truth.sigma2_e,
        classifications: spec
            .classifications
            .iter()
            .zip(&truth.sigma2_u)
            .zip(&truth.u)
            .map(|((d, s), u)| TruthClassification {
                name: d.name(),
                sigma2_u: *s,
                labels: d.classification().labels(),
                effects: u,
            })
            .collect(),
    };
    write_json(path, &doc)
}

/// File name used for a classification's membership file.
pub fn membership_file(dir: &Path, classification: &str) -> PathBuf {
    let safe: String = classification
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    dir.join(format!("memberships_{safe}.csv"))
}
