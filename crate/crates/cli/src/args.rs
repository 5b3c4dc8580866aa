//! Flag definitions and config-file merging. Every command record has
//! optional fields so that flags can be layered over a TOML file; after
//! `resolve` every field that affects results is filled in.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use qut_core::model::GlmFamily;
use qut_core::qut::{DesignMode, DEFAULT_ALPHA, DEFAULT_MC_SAMPLES};
use qut_core::simlab::Method;

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "qut", version, about = "Quantile universal thresholds for sparse regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Monte Carlo threshold for the design of a data set.
    Qut(QutArgs),
    /// Threshold, penalized fit and maximum-likelihood refit.
    Fit(FitArgs),
    /// Selection accuracy campaign on simulated data.
    Simulate(SimulateArgs),
    /// Oracle inclusive rate over a sparsity/undersampling grid.
    Phase(PhaseArgs),
    /// Noise-variance estimation on a data set or on simulated null data.
    Variance(VarianceArgs),
    /// Intercept sensitivity study for non-Gaussian scenarios.
    Sensitivity(SensitivityArgs),
    /// Repeated train/test evaluation on a data set.
    Holdout(HoldoutArgs),
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    Gaussian,
    Binomial,
    Poisson,
}

impl FamilyArg {
    pub fn to_family(self, trials: u32) -> Result<GlmFamily, CliError> {
        Ok(match self {
            FamilyArg::Gaussian => GlmFamily::Gaussian,
            FamilyArg::Poisson => GlmFamily::Poisson,
            FamilyArg::Binomial if trials == 0 => return Err(CliError::usage("--trials must be at least 1")),
            FamilyArg::Binomial if trials == 1 => GlmFamily::Bernoulli,
            FamilyArg::Binomial => GlmFamily::BinomialScaled { trials },
        })
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DesignArg {
    Fixed,
    Random,
}

impl From<DesignArg> for DesignMode {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::Fixed => DesignMode::Fixed,
            DesignArg::Random => DesignMode::RandomBootstrapRows,
        }
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyArg {
    Lasso,
    SqrtLasso,
    LadLasso,
    Tv1d,
    BestSubset,
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum OnOff {
    On,
    Off,
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMethodArg {
    RefittedQut,
    Rcv,
    ResidualCv,
}

/// Options shared by every command that do not change results.
#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct RunArgs {
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads for Monte Carlo and replication loops.
    #[arg(long, env = "QUT_WORKERS")]
    #[serde(skip)]
    pub workers: Option<usize>,
    /// Directory receiving result files and the resolved config.
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
    /// TOML file with keys named after the long flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Response column by header name or 1-based position [default: first column].
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_col: Option<String>,
    /// Unpenalized columns in addition to the intercept.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_cols: Option<Vec<String>>,
    /// Leave out the intercept column.
    #[arg(long = "no-intercept")]
    #[serde(skip)]
    pub no_intercept: bool,
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<bool>,
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyArg>,
    /// Binomial trials per observation; the response holds success counts.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
}

impl DataArgs {
    fn prepare(&mut self) {
        if self.no_intercept {
            self.intercept = Some(false);
        }
    }

    fn resolve(&mut self) -> Result<(), CliError> {
        if self.data.is_none() {
            return Err(CliError::usage("--data is required"));
        }
        self.response_col.get_or_insert_with(|| "1".into());
        self.x0_cols.get_or_insert_with(Vec::new);
        self.intercept.get_or_insert(true);
        self.family.get_or_insert(FamilyArg::Gaussian);
        self.trials.get_or_insert(1);
        Ok(())
    }

    pub fn family(&self) -> Result<GlmFamily, CliError> {
        self.family.expect("resolved").to_family(self.trials.expect("resolved"))
    }
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct ThresholdArgs {
    /// Level of the null quantile, in (0, 1).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Monte Carlo draws of the null statistic.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    /// Keep the design fixed or resample its rows in each draw.
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignArg>,
    /// Known Gaussian noise standard deviation.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Estimate the Gaussian noise level by refitted QUT.
    #[arg(long = "estimate-sigma", conflicts_with = "sigma")]
    #[serde(skip)]
    pub estimate_sigma_flag: bool,
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate_sigma: Option<bool>,
}

impl ThresholdArgs {
    fn prepare(&mut self) {
        if self.estimate_sigma_flag {
            self.estimate_sigma = Some(true);
        } else if self.sigma.is_some() {
            self.estimate_sigma = Some(false);
        }
    }

    fn resolve(&mut self) -> Result<(), CliError> {
        let alpha = *self.alpha.get_or_insert(DEFAULT_ALPHA);
        check_alpha(alpha)?;
        if *self.mc_samples.get_or_insert(DEFAULT_MC_SAMPLES) == 0 {
            return Err(CliError::usage("--mc-samples must be positive"));
        }
        self.design.get_or_insert(DesignArg::Fixed);
        self.estimate_sigma.get_or_insert(self.sigma.is_none());
        if let Some(s) = self.sigma {
            check_positive("--sigma", s)?;
        }
        Ok(())
    }

    /// Known noise level, or `None` when it is to be estimated.
    pub fn known_sigma(&self) -> Option<f64> {
        if self.estimate_sigma == Some(true) {
            None
        } else {
            self.sigma
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_positive(flag: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{flag} must be positive, got {v}")))
    }
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct QutArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltyArg>,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltyArg>,
    /// Fit at this penalty instead of the threshold.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Refit the selected model by maximum likelihood.
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refit_mle: Option<OnOff>,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

/// Settings of the competing selection methods in campaigns.
#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct MethodArgs {
    /// Comma-separated list of qut-lasso, qut-sqrt-lasso, cv-min, cv-1se, oracle.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_folds: Option<usize>,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct ScenarioArgs {
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    /// Sparsity exponent: s* = ceil(N^theta).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Equicorrelation of the design columns.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyArg>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
}

impl ScenarioArgs {
    fn resolve(&mut self, n: usize, p: usize, snr: f64, family: FamilyArg) {
        self.n.get_or_insert(n);
        self.p.get_or_insert(p);
        self.theta.get_or_insert(0.5);
        self.omega.get_or_insert(0.0);
        self.snr.get_or_insert(snr);
        self.family.get_or_insert(family);
        self.trials.get_or_insert(1);
        self.reps.get_or_insert(100);
    }

    pub fn spec(&self, seed: u64) -> Result<qut_core::simlab::ScenarioSpec, CliError> {
        let spec = qut_core::simlab::ScenarioSpec {
            n: self.n.expect("resolved"),
            p: self.p.expect("resolved"),
            theta: self.theta.expect("resolved"),
            omega: self.omega.expect("resolved"),
            snr: self.snr.expect("resolved"),
            family: self.family.expect("resolved").to_family(self.trials.expect("resolved"))?,
            replications: self.reps.expect("resolved"),
            seed,
        };
        spec.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub methods: MethodArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct PhaseArgs {
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    /// Sample sizes, comma-separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    /// Sparsity ratios s*/N, comma-separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_list: Option<Vec<f64>>,
    /// Magnitude of the nonzero coefficients.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub methods: MethodArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct VarianceArgs {
    /// Estimator; all three are run on simulated data when omitted.
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<VarianceMethodArg>,
    /// CSV file with a header row; simulated null data is used when absent.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_col: Option<String>,
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_cols: Option<Vec<String>>,
    #[arg(long = "no-intercept")]
    #[serde(skip)]
    pub no_intercept: bool,
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<bool>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// Noise standard deviation of the simulated data.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_folds: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct SensitivityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct HoldoutArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub threshold: ThresholdArgs,
    /// One of qut-lasso, qut-sqrt-lasso, cv-min, cv-1se.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_folds: Option<usize>,
    /// Fraction of rows used for training.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_fraction: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

/// A command record that can be layered over a config file and completed
/// with defaults.
pub trait Resolve: Serialize + DeserializeOwned {
    fn run(&self) -> &RunArgs;
    fn run_mut(&mut self) -> &mut RunArgs;
    /// Turns flag-only switches into their config-file fields.
    fn prepare(&mut self) {}
    fn fill(&mut self) -> Result<(), CliError>;
}

fn fill_methods(m: &mut MethodArgs, default: &[Method]) -> Result<(), CliError> {
    if m.methods.get_or_insert_with(|| default.to_vec()).is_empty() {
        return Err(CliError::usage("--methods must name at least one method"));
    }
    if *m.cv_folds.get_or_insert(10) < 2 {
        return Err(CliError::usage("--cv-folds must be at least 2"));
    }
    Ok(())
}

impl Resolve for QutArgs {
    fn run(&self) -> &RunArgs {
        &self.run
    }
    fn run_mut(&mut self) -> &mut RunArgs {
        &mut self.run
    }
    fn prepare(&mut self) {
        self.data.prepare();
        self.threshold.prepare();
    }
    fn fill(&mut self) -> Result<(), CliError> {
        self.data.resolve()?;
        self.threshold.resolve()?;
        self.penalty.get_or_insert(PenaltyArg::Lasso);
        Ok(())
    }
}

impl Resolve for FitArgs {
    fn run(&self) -> &RunArgs {
        &self.run
    }
    fn run_mut(&mut self) -> &mut RunArgs {
        &mut self.run
    }
    fn prepare(&mut self) {
        self.data.prepare();
        self.threshold.prepare();
    }
    fn fill(&mut self) -> Result<(), CliError> {
        self.data.resolve()?;
        self.threshold.resolve()?;
        self.penalty.get_or_insert(PenaltyArg::Lasso);
        self.refit_mle.get_or_insert(OnOff::On);
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(CliError::usage(format!("--lambda must be a finite non-negative number, got {l}")));
            }
        }
        Ok(())
    }
}

impl Resolve for SimulateArgs {
    fn run(&self) -> &RunArgs {
        &self.run
    }
    fn run_mut(&mut self) -> &mut RunArgs {
        &mut self.run
    }
    fn prepare(&mut self) {
        self.threshold.prepare();
    }
    fn fill(&mut self) -> Result<(), CliError> {
        self.scenario.resolve(100, 1000, 1.0, FamilyArg::Gaussian);
        self.threshold.resolve()?;
        fill_methods(&mut self.methods, &Method::FITTING)
    }
}

impl Resolve for PhaseArgs {
    fn run(&self) -> &RunArgs {
        &self.run
    }
    fn run_mut(&mut self) -> &mut RunArgs {
        &mut self.run
    }
    fn prepare(&mut self) {
        self.threshold.prepare();
    }
    fn fill(&mut self) -> Result<(), CliError> {
        self.p.get_or_insert(200);
        self.n_list.get_or_insert_with(|| vec![40]);
        self.rho_list.get_or_insert_with(|| vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        self.magnitude.get_or_insert(10.0);
        self.reps.get_or_insert(20);
        self.threshold.resolve()?;
        fill_methods(&mut self.methods, &[Method::QutLasso, Method::CvMin, Method::Cv1se])
    }
}

impl Resolve for VarianceArgs {
    fn run(&self) -> &RunArgs {
        &self.run
    }
    fn run_mut(&mut self) -> &mut RunArgs {
        &mut self.run
    }
    fn prepare(&mut self) {
        if self.no_intercept {
            self.intercept = Some(false);
        }
    }
    fn fill(&mut self) -> Result<(), CliError> {
        check_alpha(*self.alpha.get_or_insert(DEFAULT_ALPHA))?;
        if *self.mc_samples.get_or_insert(DEFAULT_MC_SAMPLES) == 0 {
            return Err(CliError::usage("--mc-samples must be positive"));
        }
        if *self.cv_folds.get_or_insert(10) < 2 {
            return Err(CliError::usage("--cv-folds must be at least 2"));
        }
        self.intercept.get_or_insert(true);
        if self.data.is_some() {
            self.method.get_or_insert(VarianceMethodArg::RefittedQut);
            self.response_col.get_or_insert_with(|| "1".into());
            self.x0_cols.get_or_insert_with(Vec::new);
        } else {
            self.n.get_or_insert(200);
            self.p.get_or_insert(500);
            let omega = *self.omega.get_or_insert(0.0);
            if !(0.0..1.0).contains(&omega) {
                return Err(CliError::usage(format!("--omega must lie in [0, 1), got {omega}")));
            }
            check_positive("--noise-sd", *self.noise_sd.get_or_insert(1.0))?;
            if *self.reps.get_or_insert(100) == 0 {
                return Err(CliError::usage("--reps must be positive"));
            }
        }
        Ok(())
    }
}

impl Resolve for SensitivityArgs {
    fn run(&self) -> &RunArgs {
        &self.run
    }
    fn run_mut(&mut self) -> &mut RunArgs {
        &mut self.run
    }
    fn prepare(&mut self) {
        self.threshold.prepare();
    }
    fn fill(&mut self) -> Result<(), CliError> {
        self.scenario.resolve(100, 300, 0.5, FamilyArg::Poisson);
        self.threshold.resolve()
    }
}

impl Resolve for HoldoutArgs {
    fn run(&self) -> &RunArgs {
        &self.run
    }
    fn run_mut(&mut self) -> &mut RunArgs {
        &mut self.run
    }
    fn prepare(&mut self) {
        self.data.prepare();
        self.threshold.prepare();
    }
    fn fill(&mut self) -> Result<(), CliError> {
        self.data.resolve()?;
        self.threshold.resolve()?;
        self.method.get_or_insert(Method::QutLasso);
        if *self.cv_folds.get_or_insert(10) < 2 {
            return Err(CliError::usage("--cv-folds must be at least 2"));
        }
        let f = *self.split_fraction.get_or_insert(0.5);
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::usage(format!("--split-fraction must lie in (0, 1), got {f}")));
        }
        if *self.repeats.get_or_insert(100) == 0 {
            return Err(CliError::usage("--repeats must be positive"));
        }
        Ok(())
    }
}

fn to_table<T: Serialize>(value: &T) -> Result<toml::Table, CliError> {
    toml::Table::try_from(value).map_err(|e| CliError::usage(format!("cannot encode configuration: {e}")))
}

/// Layers the flags over the config file (if any), fills defaults and
/// rejects config keys that no flag knows.
pub fn resolve<T: Resolve>(mut flags: T) -> Result<T, CliError> {
    flags.prepare();
    let run = flags.run().clone();
    let mut table = match &run.config {
        Some(path) => read_config(path)?,
        None => toml::Table::new(),
    };
    let file_keys: Vec<String> = table.keys().cloned().collect();
    table.extend(to_table(&flags)?);
    let mut merged: T = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::usage(format!("invalid configuration: {e}")))?;
    let seed = merged.run().seed.unwrap_or(0);
    *merged.run_mut() = RunArgs { seed: Some(seed), ..run };
    merged.fill()?;
    let known = to_table(&merged)?;
    if let Some(k) = file_keys.iter().find(|k| !known.contains_key(*k)) {
        return Err(CliError::usage(format!("configuration key '{k}' is unknown or unused by this command")));
    }
    Ok(merged)
}

fn read_config(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::usage(format!("malformed config {}: {e}", path.display())))
}

/// TOML text of a resolved record, suitable for `--config`.
pub fn config_text<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::usage(format!("cannot encode configuration: {e}")))
}
