//! Command implementations: load inputs, call the library, write outputs.

use std::path::{Path, PathBuf};

use serde::Serialize;

use qut_core::model::{GlmFamily, ProblemInstance, SparseFit, ThresholdResult};
use qut_core::pipeline::{qut_pipeline, FitPenalty, PipelineOptions, PipelineReport, SigmaChoice};
use qut_core::qut::{compute_qut, DesignMode, NullSampler, NullStatistic};
use qut_core::rng::{derive_seed, standard_normals, stream_rng, tag};
use qut_core::simlab::{
    equicorrelated_design, run_holdout, run_phase_campaign, run_sensitivity_study, run_table2_campaign, summarize,
    write_csv, Method, MethodSettings, PhaseGridSpec, Summary,
};
use qut_core::cv::CvOptions;
use qut_core::variance::{sigma2_rcv, sigma2_refitted_qut, sigma2_residual_cv, RefittedQutOptions, VarianceEstimate};
use qut_core::zerothresh::PenaltySpec;

use crate::args::{
    config_text, DataArgs, FitArgs, HoldoutArgs, OnOff, PenaltyArg, PhaseArgs, QutArgs, SensitivityArgs, SimulateArgs,
    ThresholdArgs, VarianceArgs, VarianceMethodArg,
};
use crate::data::{load, Dataset, Layout};
use crate::CliError;

const DEFAULT_OUT_DIR: &str = "qut-output";

/// Writes `<name>.json` and `<name>.config.toml` and returns the directory.
fn write_outputs<C: Serialize, R: Serialize>(out_dir: &Option<PathBuf>, name: &str, config: &C, result: &R) -> Result<PathBuf, CliError> {
    let dir = out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
    let write = |file: &str, text: String| {
        let path = dir.join(file);
        std::fs::write(&path, text).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
    };
    write(&format!("{name}.config.toml"), config_text(config)?)?;
    write(&format!("{name}.json"), json(result)?)?;
    Ok(dir)
}

fn write_rows<T: Serialize>(dir: &Path, file: &str, rows: &[T]) -> Result<(), CliError> {
    write_csv(&dir.join(file), rows).map_err(CliError::from)
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(format!("cannot encode output: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn load_data(d: &DataArgs) -> Result<Dataset, CliError> {
    let layout = Layout {
        response_col: d.response_col.as_deref().expect("resolved"),
        x0_cols: d.x0_cols.as_deref().expect("resolved"),
        intercept: d.intercept.expect("resolved"),
        family: d.family()?,
    };
    load(d.data.as_deref().expect("resolved"), &layout)
}

fn pipeline_options(t: &ThresholdArgs, seed: u64, penalty: FitPenalty) -> PipelineOptions {
    PipelineOptions {
        alpha: t.alpha.expect("resolved"),
        mc_samples: t.mc_samples.expect("resolved"),
        seed,
        design_mode: t.design.expect("resolved").into(),
        penalty,
        sigma: t.known_sigma().map_or(SigmaChoice::Estimate, SigmaChoice::Known),
        ..Default::default()
    }
}

fn method_settings(t: &ThresholdArgs, cv_folds: usize) -> MethodSettings {
    MethodSettings {
        alpha: t.alpha.expect("resolved"),
        mc_samples: t.mc_samples.expect("resolved"),
        cv_folds,
        sigma: t.known_sigma(),
        design_mode: t.design.expect("resolved").into(),
        ..Default::default()
    }
}

fn fit_penalty(p: PenaltyArg) -> Option<FitPenalty> {
    match p {
        PenaltyArg::Lasso => Some(FitPenalty::Lasso),
        PenaltyArg::SqrtLasso => Some(FitPenalty::SqrtLasso),
        _ => None,
    }
}

#[derive(Serialize)]
struct QutOutput {
    penalty: PenaltyArg,
    family: GlmFamily,
    design: DesignMode,
    lambda_qut: f64,
    alpha: f64,
    mc_samples: usize,
    infinite_fraction: f64,
    seed: u64,
    sigma: Option<f64>,
    variance: Option<VarianceEstimate>,
}

fn finite_threshold(t: ThresholdResult) -> Result<ThresholdResult, CliError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(qut_core::QutError::QuantileInfinite { infinite_fraction: t.infinite_fraction }.into())
    }
}

pub fn cmd_qut(args: QutArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let inst = &data.instance;
    let t = &args.threshold;
    let seed = args.run.seed.expect("resolved");
    let penalty = args.penalty.expect("resolved");
    let (threshold, sigma, variance) = match fit_penalty(penalty) {
        Some(fp) => {
            // The fit command derives its threshold the same way.
            let report = qut_pipeline(inst, &PipelineOptions { refit: false, ..pipeline_options(t, seed, fp) })?;
            (report.threshold.expect("threshold computed"), report.sigma2.map(f64::sqrt), report.variance)
        }
        None => {
            if !inst.family().is_gaussian() {
                return Err(CliError::usage(format!("{penalty:?} thresholds are defined for Gaussian responses")));
            }
            let spec = match penalty {
                PenaltyArg::LadLasso => PenaltySpec::LadLasso,
                PenaltyArg::Tv1d => PenaltySpec::TotalVariation1D,
                _ => PenaltySpec::BestSubset,
            };
            let sigma = match (t.known_sigma(), &spec) {
                (Some(s), _) => s,
                (None, PenaltySpec::LadLasso) => 1.0,
                (None, _) => return Err(CliError::usage("this penalty needs a known noise level (--sigma)")),
            };
            let sampler = NullSampler::new(inst, derive_seed(seed, 11))
                .with_sigma(sigma)?
                .with_design_mode(t.design.expect("resolved").into());
            let r = compute_qut(&sampler, &NullStatistic::Penalty(spec), t.alpha.expect("resolved"), t.mc_samples.expect("resolved"))?;
            (finite_threshold(r)?, t.known_sigma(), None)
        }
    };
    let out = QutOutput {
        penalty,
        family: inst.family(),
        design: t.design.expect("resolved").into(),
        lambda_qut: threshold.lambda_qut,
        alpha: threshold.alpha,
        mc_samples: threshold.mc_samples,
        infinite_fraction: threshold.infinite_fraction,
        seed: threshold.seed,
        sigma,
        variance,
    };
    write_outputs(&args.run.out_dir, "qut", &args, &out)?;
    print!("{}", json(&out)?);
    Ok(())
}

#[derive(Serialize)]
struct Named {
    name: String,
    value: f64,
}

#[derive(Serialize)]
struct FitOutput {
    family: GlmFamily,
    penalty: PenaltyArg,
    lambda: f64,
    threshold: Option<ThresholdResult>,
    sigma2: Option<f64>,
    selected: Vec<String>,
    unpenalized: Vec<Named>,
    coefficients: Vec<Named>,
    null_beta0: Vec<Named>,
    variance: Option<VarianceEstimate>,
    penalized: SparseFit,
    refit: Option<SparseFit>,
    refit_error: Option<String>,
}

fn named(names: &[String], values: &[f64]) -> Vec<Named> {
    names.iter().zip(values).map(|(n, &v)| Named { name: n.clone(), value: v }).collect()
}

fn fit_output(data: &Dataset, penalty: PenaltyArg, r: PipelineReport) -> FitOutput {
    let fin = r.final_fit();
    FitOutput {
        family: data.instance.family(),
        penalty,
        lambda: r.lambda,
        selected: fin.support.iter().map(|&j| data.x_names[j].clone()).collect(),
        unpenalized: named(&data.x0_names, &fin.beta0),
        coefficients: fin.support.iter().map(|&j| Named { name: data.x_names[j].clone(), value: fin.beta[j] }).collect(),
        null_beta0: named(&data.x0_names, &r.null_beta0),
        threshold: r.threshold,
        sigma2: r.sigma2,
        variance: r.variance,
        penalized: r.penalized,
        refit: r.refit,
        refit_error: r.refit_error,
    }
}

pub fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let penalty = args.penalty.expect("resolved");
    let fp = fit_penalty(penalty).ok_or_else(|| CliError::usage("fit supports --penalty lasso or sqrt-lasso"))?;
    let opts = PipelineOptions {
        lambda: args.lambda,
        refit: args.refit_mle == Some(OnOff::On),
        ..pipeline_options(&args.threshold, args.run.seed.expect("resolved"), fp)
    };
    let report = qut_pipeline(&data.instance, &opts)?;
    let out = fit_output(&data, penalty, report);
    write_outputs(&args.run.out_dir, "fit", &args, &out)?;
    print!("{}", json(&out)?);
    match &out.refit_error {
        Some(e) => Err(CliError { code: 4, message: format!("refit failed, penalized fit reported instead: {e}") }),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct SummaryRow {
    scenario: String,
    method: Method,
    replications: usize,
    failures: usize,
    tpr_mean: f64,
    tpr_se: f64,
    fdr_mean: f64,
    fdr_se: f64,
    rmse_mean: f64,
    rmse_se: f64,
    rmse_median: f64,
    rmse_pooled: f64,
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let spec = args.scenario.spec(args.run.seed.expect("resolved"))?;
    let settings = method_settings(&args.threshold, args.methods.cv_folds.expect("resolved"));
    let report = run_table2_campaign(&[spec], args.methods.methods.as_deref().expect("resolved"), &settings)?;
    let rows: Vec<SummaryRow> = report
        .summary
        .iter()
        .map(|s| SummaryRow {
            scenario: s.scenario.clone(),
            method: s.method,
            replications: s.replications,
            failures: s.failures,
            tpr_mean: s.tpr.mean,
            tpr_se: s.tpr.std_error,
            fdr_mean: s.fdr.mean,
            fdr_se: s.fdr.std_error,
            rmse_mean: s.rmse.mean,
            rmse_se: s.rmse.std_error,
            rmse_median: s.rmse.median,
            rmse_pooled: s.rmse_pooled,
        })
        .collect();
    let dir = write_outputs(&args.run.out_dir, "simulate", &args, &report)?;
    write_rows(&dir, "simulate-records.csv", &report.records)?;
    write_rows(&dir, "simulate-summary.csv", &rows)?;
    println!("{:<24} {:<16} {:>5} {:>15} {:>15} {:>15}", "scenario", "method", "fail", "TPR", "FDR", "RMSE");
    for r in &rows {
        println!(
            "{:<24} {:<16} {:>5} {:>8.3} ±{:.3} {:>8.3} ±{:.3} {:>8.3} ±{:.3}",
            r.scenario, r.method, r.failures, r.tpr_mean, r.tpr_se, r.fdr_mean, r.fdr_se, r.rmse_mean, r.rmse_se
        );
    }
    Ok(())
}

pub fn cmd_phase(args: PhaseArgs) -> Result<(), CliError> {
    let grid = PhaseGridSpec {
        p: args.p.expect("resolved"),
        n_list: args.n_list.clone().expect("resolved"),
        rho_list: args.rho_list.clone().expect("resolved"),
        magnitude: args.magnitude.expect("resolved"),
        replications: args.reps.expect("resolved"),
        seed: args.run.seed.expect("resolved"),
    };
    grid.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let settings = method_settings(&args.threshold, args.methods.cv_folds.expect("resolved"));
    let report = run_phase_campaign(&grid, args.methods.methods.as_deref().expect("resolved"), &settings)?;
    let dir = write_outputs(&args.run.out_dir, "phase", &args, &report)?;
    write_rows(&dir, "phase-records.csv", &report.records)?;
    write_rows(&dir, "phase-grid.csv", &report.cells)?;
    println!("{:>8} {:>8} {:<16} {:>8}", "delta", "rho", "method", "OIR");
    for c in &report.cells {
        println!("{:>8.3} {:>8.3} {:<16} {:>8.3}", c.delta, c.rho, c.method, c.oir);
    }
    Ok(())
}

#[derive(Serialize)]
struct VarianceRecord {
    rep: usize,
    method: VarianceMethodArg,
    sigma2: Option<f64>,
    converged: Option<bool>,
    error: Option<String>,
}

#[derive(Serialize)]
struct VarianceSummary {
    method: VarianceMethodArg,
    failures: usize,
    sigma2: Summary,
}

#[derive(Serialize)]
struct VarianceReport {
    records: Vec<VarianceRecord>,
    summary: Vec<VarianceSummary>,
}

fn estimate_variance(inst: &ProblemInstance, method: VarianceMethodArg, args: &VarianceArgs, seed: u64) -> Result<VarianceEstimate, CliError> {
    let cv = CvOptions { folds: args.cv_folds.expect("resolved"), seed: derive_seed(seed, tag::FOLDS), ..Default::default() };
    let est = match method {
        VarianceMethodArg::RefittedQut => sigma2_refitted_qut(
            inst,
            &RefittedQutOptions {
                alpha: args.alpha.expect("resolved"),
                mc_samples: args.mc_samples.expect("resolved"),
                seed,
                ..Default::default()
            },
        ),
        VarianceMethodArg::Rcv => sigma2_rcv(inst, &cv, derive_seed(seed, tag::SPLIT)),
        VarianceMethodArg::ResidualCv => sigma2_residual_cv(inst, &cv),
    };
    est.map_err(CliError::from)
}

pub fn cmd_variance(args: VarianceArgs) -> Result<(), CliError> {
    let seed = args.run.seed.expect("resolved");
    if let Some(path) = &args.data {
        let layout = Layout {
            response_col: args.response_col.as_deref().expect("resolved"),
            x0_cols: args.x0_cols.as_deref().expect("resolved"),
            intercept: args.intercept.expect("resolved"),
            family: GlmFamily::Gaussian,
        };
        let data = load(path, &layout)?;
        let est = estimate_variance(&data.instance, args.method.expect("resolved"), &args, seed)?;
        write_outputs(&args.run.out_dir, "variance", &args, &est)?;
        print!("{}", json(&est)?);
        return Ok(());
    }
    let (n, p, reps) = (args.n.expect("resolved"), args.p.expect("resolved"), args.reps.expect("resolved"));
    let omega = args.omega.expect("resolved");
    let sd = args.noise_sd.expect("resolved");
    let methods = match args.method {
        Some(m) => vec![m],
        None => vec![VarianceMethodArg::RefittedQut, VarianceMethodArg::Rcv, VarianceMethodArg::ResidualCv],
    };
    let mut records = Vec::new();
    for rep in 0..reps {
        let mut rng = stream_rng(derive_seed(seed, tag::SCENARIO), rep as u64);
        let x = equicorrelated_design(&mut rng, n, p, omega);
        let y = (standard_normals(&mut rng, n) * sd).add_scalar(1.0);
        let inst = if args.intercept == Some(true) {
            ProblemInstance::with_intercept(x, y, GlmFamily::Gaussian)?
        } else {
            ProblemInstance::without_x0(x, y, GlmFamily::Gaussian)?
        };
        for &method in &methods {
            let rep_seed = derive_seed(derive_seed(seed, tag::CAMPAIGN), rep as u64);
            let (sigma2, converged, error) = match estimate_variance(&inst, method, &args, rep_seed) {
                Ok(e) => (Some(e.sigma2), Some(e.converged), None),
                Err(e) => (None, None, Some(e.message)),
            };
            records.push(VarianceRecord { rep, method, sigma2, converged, error });
        }
    }
    let summary: Vec<VarianceSummary> = methods
        .iter()
        .map(|&m| {
            let values: Vec<f64> = records.iter().filter(|r| r.method == m).filter_map(|r| r.sigma2).collect();
            VarianceSummary { method: m, failures: reps - values.len(), sigma2: summarize(&values) }
        })
        .collect();
    let report = VarianceReport { records, summary };
    let dir = write_outputs(&args.run.out_dir, "variance", &args, &report)?;
    write_rows(&dir, "variance-records.csv", &report.records)?;
    println!("{:<14} {:>5} {:>10} {:>10} {:>10}", "method", "fail", "median", "IQR", "mean");
    for s in &report.summary {
        let name = serde_json::to_value(s.method).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        println!("{:<14} {:>5} {:>10.4} {:>10.4} {:>10.4}", name, s.failures, s.sigma2.median, s.sigma2.iqr, s.sigma2.mean);
    }
    Ok(())
}

pub fn cmd_sensitivity(args: SensitivityArgs) -> Result<(), CliError> {
    let spec = args.scenario.spec(args.run.seed.expect("resolved"))?;
    if spec.family.is_gaussian() {
        return Err(CliError::usage("the sensitivity study needs --family binomial or poisson"));
    }
    let settings = method_settings(&args.threshold, 10);
    let report = run_sensitivity_study(&spec, &settings)?;
    let dir = write_outputs(&args.run.out_dir, "sensitivity", &args, &report)?;
    write_rows(&dir, "sensitivity-records.csv", &report.records)?;
    let s = &report.summary;
    println!("median intercept, initial step: {:.4}", s.median_beta0_initial);
    println!("median intercept, final step:   {:.4}", s.median_beta0_final);
    println!("median |TPr(oracle) - TPr(initial)|: {:.4}", s.median_abs_tpr_diff_initial);
    println!("median |TPr(oracle) - TPr(final)|:   {:.4}", s.median_abs_tpr_diff);
    Ok(())
}

#[derive(Serialize)]
struct HoldoutOutput {
    method: Method,
    model_size: Summary,
    test_score: Summary,
    selection_counts: Vec<Named>,
    records: Vec<qut_core::simlab::HoldoutRecord>,
}

pub fn cmd_holdout(args: HoldoutArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let method = args.method.expect("resolved");
    if method == Method::Oracle {
        return Err(CliError::usage("the oracle method needs a known support and cannot be used on data"));
    }
    let settings = method_settings(&args.threshold, args.cv_folds.expect("resolved"));
    let report = run_holdout(
        &data.instance,
        method,
        &settings,
        args.split_fraction.expect("resolved"),
        args.repeats.expect("resolved"),
        args.run.seed.expect("resolved"),
    )?;
    let counts: Vec<f64> = report.selection_counts.iter().map(|&c| c as f64).collect();
    let out = HoldoutOutput {
        method,
        model_size: report.model_size,
        test_score: report.test_score,
        selection_counts: named(&data.x_names, &counts),
        records: report.records,
    };
    let dir = write_outputs(&args.run.out_dir, "holdout", &args, &out)?;
    write_rows(&dir, "holdout-records.csv", &out.records)?;
    println!("method {method}: model size median {:.1}, test score mean {:.4} ± {:.4}", out.model_size.median, out.test_score.mean, out.test_score.std_error);
    Ok(())
}
