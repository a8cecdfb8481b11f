//! Argument parsing and command dispatch.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmfit_core::exact::{fit_ml, MarginalModel};
use mmfit_core::gibbs::{run_gibbs, ChainConfig, PriorConfig};
use mmfit_core::rng::derive_seed;
use mmfit_core::simulate::{simulate, Cardinality, ClassificationSim, SimConfig, SimWeights};
use mmfit_core::weights::WeightScheme;
use mmfit_core::{validate_design, ModelSpec};

use crate::error::{CliError, Result};
use crate::experiment::{fit_schemes, run_bias_experiment, run_sensitivity_study, StudyConfig};
use crate::ingest::{complete_cases, read_memberships, DataTable, Prepared};
use crate::output;

#[derive(Debug, Parser)]
#[command(name = "mmfit", version, about = "Fit multiple membership multilevel models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Suppress progress messages on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a data file and its membership files.
    Validate(InputArgs),
    /// Fit a model by Gibbs sampling or exact maximum likelihood.
    Fit(FitArgs),
    /// Simulate a dataset with known parameters.
    Simulate(SimulateArgs),
    /// Compare correct and collapsed single-membership fits over replicates.
    BiasExperiment(StudyArgs),
    /// Fit under alternative weighting schemes.
    Sensitivity(SensitivityArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Data CSV with a unit_id column.
    #[arg(long)]
    pub data: PathBuf,
    /// Membership CSV (unit_id,classification,cluster_id,weight); repeat per classification.
    #[arg(long, required = true)]
    pub memberships: Vec<PathBuf>,
    /// Rescale each unit's weights to sum to one instead of rejecting them.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Comma-separated fixed-effect covariates; an intercept is always included.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    #[arg(long, default_value_t = 500)]
    pub burnin: usize,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Inverse-gamma prior shape for every variance.
    #[arg(long, default_value_t = 0.001)]
    pub prior_shape: f64,
    /// Inverse-gamma prior rate for every variance.
    #[arg(long, default_value_t = 0.001)]
    pub prior_rate: f64,
}

impl ChainArgs {
    fn chain_config(&self, store_u: bool) -> ChainConfig {
        ChainConfig {
            burn_in: self.burnin,
            iterations: self.iters,
            thin: self.thin,
            n_chains: self.chains,
            seed: self.seed,
            store_u,
        }
    }

    fn priors(&self) -> Result<PriorConfig> {
        Ok(PriorConfig::uniform(self.prior_shape, self.prior_rate)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Engine {
    Gibbs,
    Exact,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long, value_enum, default_value_t = Engine::Gibbs)]
    pub engine: Engine,
    /// Keep draws of every cluster effect.
    #[arg(long)]
    pub store_u: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// One simulated classification, written `name:clusters:cardinality:weights:variance`.
/// Cardinality is `m` (exactly m clusters per unit) or `1-m` (uniform on
/// 1..=m); weights are `equal` or `random`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec(pub ClassificationSim);

impl std::str::FromStr for ClassSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [name, clusters, card, weights, var] = parts[..] else {
            return Err(format!("expected name:clusters:cardinality:weights:variance, got {s:?}"));
        };
        let n_clusters = clusters.parse().map_err(|_| format!("bad cluster count {clusters:?}"))?;
        let cardinality = match card.split_once('-') {
            Some(("1", m)) => Cardinality::UpTo(m.parse().map_err(|_| format!("bad cardinality {card:?}"))?),
            Some(_) => return Err(format!("cardinality ranges must start at 1, got {card:?}")),
            None => Cardinality::Fixed(card.parse().map_err(|_| format!("bad cardinality {card:?}"))?),
        };
        let weights = match weights {
            "equal" => SimWeights::Equal,
            "random" => SimWeights::RandomProportions,
            other => return Err(format!("weights must be equal or random, got {other:?}")),
        };
        Ok(ClassSpec(ClassificationSim {
            name: name.to_string(),
            n_clusters,
            cardinality,
            weights,
            sigma2: var.parse().map_err(|_| format!("bad variance {var:?}"))?,
        }))
    }
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 2000)]
    pub n_units: usize,
    /// Repeatable; defaults to cluster:100:1-3:equal:0.25 (random weights for
    /// sensitivity).
    #[arg(long = "classification")]
    pub classifications: Vec<ClassSpec>,
    /// Intercept then one slope per simulated covariate.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5", allow_hyphen_values = true)]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2_e: f64,
}

impl SimArgs {
    fn config(&self, seed: u64, default_weights: SimWeights) -> SimConfig {
        let classifications = if self.classifications.is_empty() {
            vec![ClassificationSim {
                name: "cluster".into(),
                n_clusters: 100,
                cardinality: Cardinality::UpTo(3),
                weights: default_weights,
                sigma2: 0.25,
            }]
        } else {
            self.classifications.iter().map(|c| c.0.clone()).collect()
        };
        SimConfig {
            n_units: self.n_units,
            classifications,
            beta: self.beta.clone(),
            sigma2_e: self.sigma2_e,
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    AsGiven,
    Equal,
}

impl Scheme {
    fn weight_scheme(self) -> WeightScheme {
        match self {
            Scheme::AsGiven => WeightScheme::Keep,
            Scheme::Equal => WeightScheme::Equal,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Scheme::AsGiven => "as-given",
            Scheme::Equal => "equal",
        }
    }
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// Data CSV. Without it, data are simulated for every replicate.
    #[arg(long, requires = "memberships")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub memberships: Vec<PathBuf>,
    #[arg(long)]
    pub normalize: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "as-given,equal")]
    pub schemes: Vec<Scheme>,
    /// Replicates of the simulation study.
    #[arg(long, default_value_t = 50)]
    pub replicates: usize,
    #[arg(long)]
    pub out: PathBuf,
}

struct Progress {
    quiet: bool,
}

impl Progress {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn warn(msg: impl AsRef<str>) {
    eprintln!("warning: {}", msg.as_ref());
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let progress = Progress { quiet: cli.quiet };
    match cli.command {
        Command::Validate(a) => cmd_validate(&a, &progress),
        Command::Fit(a) => cmd_fit(&a, &progress),
        Command::Simulate(a) => cmd_simulate(&a, &progress),
        Command::BiasExperiment(a) => cmd_bias_experiment(&a, &progress),
        Command::Sensitivity(a) => cmd_sensitivity(&a, &progress),
    }
}

/// Reads the data and membership files and keeps complete cases on the
/// model columns.
fn load(
    data: &Path,
    memberships: &[PathBuf],
    normalize: bool,
    model: &ModelArgs,
    progress: &Progress,
) -> Result<(ModelSpec, Prepared)> {
    let table = DataTable::read(data)?;
    let designs = read_memberships(memberships, &table.data, normalize)?;
    let mut columns = vec![model.response.clone()];
    columns.extend(model.covariates.iter().cloned());
    let prepared = complete_cases(&table, designs, &columns)?;
    if prepared.dropped > 0 {
        warn(format!(
            "dropped {} of {} units with missing response or covariates",
            prepared.dropped,
            table.data.n_units()
        ));
    }
    progress.say(format!(
        "read {} units and {} classification(s)",
        prepared.data.n_units(),
        prepared.designs.len()
    ));
    let spec = ModelSpec::new(model.response.clone(), model.covariates.clone(), prepared.designs.clone())?;
    Ok((spec, prepared))
}

fn cmd_validate(a: &InputArgs, progress: &Progress) -> Result<()> {
    let table = DataTable::read(&a.data)?;
    let designs = read_memberships(&a.memberships, &table.data, a.normalize)?;
    let n = table.data.n_units();
    let mut report = String::new();
    let _ = writeln!(report, "units: {n}");
    let _ = writeln!(report, "numeric columns: {}", table.data.column_names().join(", "));
    let mut failed = None;
    for d in &designs {
        let v = validate_design(d, n);
        let mut by_card = std::collections::BTreeMap::new();
        for r in d.rows() {
            *by_card.entry(r.len()).or_insert(0usize) += 1;
        }
        let empty = d.cluster_members().iter().filter(|m| m.is_empty()).count();
        let cards: Vec<String> = by_card.iter().map(|(m, k)| format!("{m}:{k}")).collect();
        let _ = writeln!(
            report,
            "classification {}: {} clusters ({} empty), memberships per unit {}, {}",
            d.name(),
            d.n_clusters(),
            empty,
            cards.join(" "),
            if v.passed() { "valid" } else { "INVALID" }
        );
        if let Some(first) = v.violations.first() {
            failed.get_or_insert(format!(
                "classification {}: unit {} {:?}",
                d.name(),
                table.data.unit_ids()[first.unit],
                first.kind
            ));
        }
    }
    progress.say(report.trim_end());
    match failed {
        Some(msg) => Err(mmfit_core::Error::InvalidData(msg).into()),
        None => Ok(()),
    }
}

fn cmd_fit(a: &FitArgs, progress: &Progress) -> Result<()> {
    let (spec, prepared) = load(&a.input.data, &a.input.memberships, a.input.normalize, &a.model, progress)?;
    ensure_dir(&a.out)?;
    let n = prepared.data.n_units();
    match a.engine {
        Engine::Gibbs => {
            let cfg = a.chain.chain_config(a.store_u);
            progress.say(format!(
                "sampling {} chain(s) of {} sweeps",
                cfg.n_chains,
                cfg.burn_in + cfg.iterations
            ));
            let fit = run_gibbs(&spec, &prepared.data, &a.chain.priors()?, &cfg)?;
            for w in &fit.warnings {
                warn(w);
            }
            output::write_gibbs_summary(&a.out.join("summary.csv"), &fit)?;
            output::write_draws(&a.out.join("draws.csv"), &fit)?;
            output::write_text(
                &a.out.join("report.txt"),
                &output::gibbs_report(&spec, &fit, n, prepared.dropped, cfg.n_chains),
            )?;
        }
        Engine::Exact => {
            progress.say("maximizing the marginal likelihood");
            let m = MarginalModel::from_spec(&spec, &prepared.data)?;
            let est = fit_ml(&m)?;
            if est.at_boundary.iter().any(|b| *b) {
                warn("a variance estimate is at the zero boundary");
            }
            output::write_ml_summary(&a.out.join("summary.csv"), &spec, &est)?;
            output::write_estimates_json(&a.out.join("estimates.json"), &spec, n, &est)?;
            output::write_text(
                &a.out.join("report.txt"),
                &output::ml_report(&spec, &est, n, prepared.dropped),
            )?;
        }
    }
    progress.say(format!("wrote results to {}", a.out.display()));
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, progress: &Progress) -> Result<()> {
    let cfg = a.sim.config(a.seed, SimWeights::Equal);
    let sim = simulate(&cfg)?;
    ensure_dir(&a.out)?;
    output::write_dataset(&a.out.join("data.csv"), &sim.data)?;
    for d in &sim.spec.classifications {
        output::write_memberships(&output::membership_file(&a.out, d.name()), d, sim.data.unit_ids())?;
    }
    output::write_truth(&a.out.join("truth.json"), a.seed, &sim.spec, &sim.truth)?;
    progress.say(format!("wrote {} units to {}", cfg.n_units, a.out.display()));
    Ok(())
}

/// Simulation and chain seeds for a study; the chain seed is derived so the
/// two random streams never coincide.
fn study_config(sim: &SimArgs, chain: &ChainArgs, replicates: usize, weights: SimWeights) -> Result<StudyConfig> {
    let mut chain_cfg = chain.chain_config(false);
    chain_cfg.seed = derive_seed(chain.seed, u64::MAX);
    Ok(StudyConfig {
        sim: sim.config(chain.seed, weights),
        replicates,
        chain: chain_cfg,
        priors: chain.priors()?,
    })
}

fn cmd_bias_experiment(a: &StudyArgs, progress: &Progress) -> Result<()> {
    if a.replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    let cfg = study_config(&a.sim, &a.chain, a.replicates, SimWeights::Equal)?;
    progress.say(format!("running {} replicates", a.replicates));
    let table = run_bias_experiment(&cfg)?;
    for r in table.rows.iter().filter(|r| !r.ok()) {
        warn(format!("replicate {} failed", r.replicate));
    }
    ensure_dir(&a.out)?;
    let path = a.out.join("bias.csv");
    let w = output::create(&path)?;
    table.write_csv(w).map_err(|e| CliError::Output {
        path: path.clone(),
        source: std::io::Error::other(e),
    })?;
    progress.say(format!("wrote {}", path.display()));
    Ok(())
}

fn cmd_sensitivity(a: &SensitivityArgs, progress: &Progress) -> Result<()> {
    let mut schemes = a.schemes.clone();
    schemes.dedup();
    if schemes.len() < 2 {
        return Err(CliError::Usage("sensitivity needs at least two distinct schemes".into()));
    }
    ensure_dir(&a.out)?;
    let path = a.out.join("sensitivity.csv");
    match &a.data {
        Some(data) => {
            let (spec, prepared) = load(data, &a.memberships, a.normalize, &a.model, progress)?;
            let cfg = a.chain.chain_config(false);
            let ws: Vec<WeightScheme> = schemes.iter().map(|s| s.weight_scheme()).collect();
            let fits = fit_schemes(&spec, &prepared.data, &ws, &a.chain.priors()?, &cfg)?;
            let keyed: Vec<(String, &_)> = schemes
                .iter()
                .zip(&fits)
                .map(|(s, (_, f))| (s.label().to_string(), f))
                .collect();
            output::write_keyed_summaries(&path, "scheme", &keyed)?;
        }
        None => {
            if schemes != [Scheme::AsGiven, Scheme::Equal] {
                return Err(CliError::Usage(
                    "the simulation study compares as-given,equal in that order".into(),
                ));
            }
            if a.replicates == 0 {
                return Err(CliError::Usage("--replicates must be at least 1".into()));
            }
            let cfg = study_config(&a.sim, &a.chain, a.replicates, SimWeights::RandomProportions)?;
            progress.say(format!("running {} replicates", a.replicates));
            let table = run_sensitivity_study(&cfg)?;
            let w = output::create(&path)?;
            table.write_csv(w).map_err(|e| CliError::Output {
                path: path.clone(),
                source: std::io::Error::other(e),
            })?;
        }
    }
    progress.say(format!("wrote {}", path.display()));
    Ok(())
}
