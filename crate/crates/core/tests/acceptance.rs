//! Acceptance checks. Each criterion prints one PASS/FAIL line followed by
//! a tally. With `ACCEPTANCE_STRICT=1` the process exits non-zero if any
//! check fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use qut_core::model::{GlmFamily, ProblemInstance};
use qut_core::qut::{
    alpha_p, closed_form_qut, compute_qut, orthonormal_null_quantile, ClosedForm, DesignMode, NullSampler, NullStatistic,
    OrthonormalStatistic,
};
use qut_core::rng::{sample_response, standard_normals, stream_rng};
use qut_core::simlab::{
    run_phase_campaign, run_sensitivity_study, run_table2_campaign, summarize, Method, MethodSettings, PhaseGridSpec,
    ScenarioSpec,
};
use qut_core::solvers::{glm_kkt_residual, glm_lasso_fit, lasso_fit, sqrt_lasso_fit, svd_soft_threshold, tv1d_fit, SolverConfig};
use qut_core::variance::{sigma2_refitted_qut, sigma2_residual_cv, RefittedQutOptions};
use qut_core::cv::CvOptions;
use qut_core::zerothresh::{lambda0, lambda0_glm, lambda0_matrix, membership_d, PenaltySpec};
use qut_core::linalg::{first_difference_dual, inf_norm};

struct Outcome {
    pass: bool,
    detail: String,
}

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

fn criterion_1() -> Outcome {
    let (n, p, datasets) = (50, 200, 1000);
    let mut rng = stream_rng(101, 0);
    let x = normal_matrix(&mut rng, n, p);
    let template = ProblemInstance::with_intercept(x.clone(), DVector::zeros(n), GlmFamily::Gaussian).unwrap();
    let sampler = NullSampler::new(&template, 102).with_sigma(1.0).unwrap();
    let t = compute_qut(&sampler, &NullStatistic::Penalty(PenaltySpec::Lasso), 0.05, 5000).unwrap();
    let cfg = SolverConfig::gaussian();
    let mut selected = 0;
    for d in 0..datasets {
        let y = standard_normals(&mut stream_rng(103, d), n).add_scalar(1.0);
        let inst = ProblemInstance::with_intercept(x.clone(), y, GlmFamily::Gaussian).unwrap();
        if !lasso_fit(&inst, t.lambda_qut, &cfg).unwrap().is_zero() {
            selected += 1;
        }
    }
    let freq = selected as f64 / datasets as f64;
    Outcome {
        pass: (0.032..=0.070).contains(&freq),
        detail: format!("selection frequency {freq:.3} over {datasets} null datasets (lambda {:.4})", t.lambda_qut),
    }
}

/// Checks exact zero above the threshold, nonzero below, and that
/// bisection on the solver recovers the threshold.
fn boundary_check(lam0: f64, is_zero: &dyn Fn(f64) -> bool) -> Result<(), String> {
    if !is_zero(lam0 * 1.001) {
        return Err(format!("nonzero at 1.001 * {lam0}"));
    }
    if is_zero(lam0 * 0.999) {
        return Err(format!("zero at 0.999 * {lam0}"));
    }
    let (mut lo, mut hi) = (0.5 * lam0, 2.0 * lam0);
    while hi - lo > 1e-6 * lam0 {
        let mid = 0.5 * (lo + hi);
        if is_zero(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let rel = (hi - lam0).abs() / lam0;
    if rel > 1e-4 {
        return Err(format!("bisection {hi} vs {lam0} (relative {rel:e})"));
    }
    Ok(())
}

fn criterion_2() -> Outcome {
    let reps = 100;
    let mut failures: Vec<String> = Vec::new();
    let gcfg = SolverConfig::gaussian();
    let glm_cfg = SolverConfig::glm();
    for i in 0..reps {
        let mut rng = stream_rng(201, i);
        let n = rng.random_range(8..30);
        let p = rng.random_range(3..40);
        let x = normal_matrix(&mut rng, n, p);
        let y = standard_normals(&mut rng, n);

        let inst = ProblemInstance::with_intercept(x.clone(), y.clone(), GlmFamily::Gaussian).unwrap();
        let l = lambda0(&inst, &PenaltySpec::Lasso).unwrap();
        if let Err(e) = boundary_check(l, &|lam| lasso_fit(&inst, lam, &gcfg).unwrap().is_zero()) {
            failures.push(format!("lasso #{i}: {e}"));
        }
        let l = lambda0(&inst, &PenaltySpec::SqrtLasso).unwrap();
        if let Err(e) = boundary_check(l, &|lam| sqrt_lasso_fit(&inst, lam, &gcfg).unwrap().is_zero()) {
            failures.push(format!("sqrt-lasso #{i}: {e}"));
        }
        for family in [GlmFamily::Bernoulli, GlmFamily::Poisson] {
            let inst = loop {
                let yg = DVector::from_fn(n, |k, _| sample_response(&mut rng, family, 0.2 + 0.5 * x[(k, 0)]));
                let inst = ProblemInstance::with_intercept(x.clone(), yg, family).unwrap();
                if membership_d(&inst, &glm_cfg).unwrap() {
                    break inst;
                }
            };
            let l = lambda0_glm(&inst, &glm_cfg).unwrap();
            if let Err(e) = boundary_check(l, &|lam| glm_lasso_fit(&inst, lam, &glm_cfg).unwrap().is_zero()) {
                failures.push(format!("{} #{i}: {e}", family.name()));
            }
        }
        let signal: Vec<f64> = y.iter().map(|v| v * 2.0).collect();
        let l = inf_norm(&first_difference_dual(&signal));
        let constant = |lam: f64| {
            let out = tv1d_fit(&signal, lam).unwrap();
            out.iter().all(|&v| v == out[0])
        };
        if let Err(e) = boundary_check(l, &constant) {
            failures.push(format!("tv1d #{i}: {e}"));
        }
        let (rows, cols) = (rng.random_range(2..8), rng.random_range(2..8));
        let m = normal_matrix(&mut rng, rows, cols);
        let l = lambda0_matrix(&m);
        if let Err(e) = boundary_check(l, &|lam| svd_soft_threshold(&m, lam).unwrap().iter().all(|&v| v == 0.0)) {
            failures.push(format!("low-rank #{i}: {e}"));
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{reps} instances per branch (lasso, sqrt-lasso, bernoulli, poisson, tv1d, low-rank)")
        } else {
            format!("{} failures, first: {}", failures.len(), failures[0])
        },
    }
}

fn criterion_3() -> Outcome {
    let p = 1024;
    let level = alpha_p(p).unwrap();
    let mc = orthonormal_null_quantile(OrthonormalStatistic::BestSubset, p, 1.0, level, 100_000, 301).unwrap();
    let cf = closed_form_qut(ClosedForm::BestSubsetOrthonormal { sigma: 1.0, p }).unwrap();
    let rel = (mc.lambda_qut - cf.lambda).abs() / cf.lambda;
    Outcome {
        pass: rel <= 0.05,
        detail: format!("MC {:.4} vs log P {:.4} at level {level:.4} (relative {rel:.4})", mc.lambda_qut, cf.lambda),
    }
}

fn criterion_4() -> Outcome {
    let p = 4096;
    let level = alpha_p(p).unwrap();
    let mc = orthonormal_null_quantile(OrthonormalStatistic::GroupMax { q: 1 }, p, 1.0, level, 100_000, 401).unwrap();
    let cf = closed_form_qut(ClosedForm::GroupLassoOrthonormal { sigma: 1.0, p, q: 1 }).unwrap();
    let rel = (mc.lambda_qut - cf.lambda).abs() / cf.lambda;
    Outcome {
        pass: rel <= 0.05,
        detail: format!("MC {:.4} vs closed form {:.4} (relative {rel:.4})", mc.lambda_qut, cf.lambda),
    }
}

fn criterion_5() -> Outcome {
    let base = ScenarioSpec {
        n: 100,
        p: 1000,
        theta: 0.5,
        omega: 0.0,
        snr: 1.0,
        family: GlmFamily::Gaussian,
        replications: 100,
        seed: 501,
    };
    let specs = [base.clone(), ScenarioSpec { theta: 0.1, seed: 502, ..base }];
    let report = run_table2_campaign(&specs, &[Method::QutLasso], &MethodSettings::default()).unwrap();
    let targets = [(0.09, 0.05, 0.02, 0.03, 0.03, 0.85, 0.08), (0.61, 0.10, 0.00, 0.00, 0.03, 0.35, 0.08)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (spec, t) in specs.iter().zip(targets) {
        let s = report.summary_for(&spec.label(), Method::QutLasso).unwrap();
        let ok = (s.tpr.mean - t.0).abs() <= t.1
            && s.fdr.mean >= t.2 - t.3
            && s.fdr.mean <= t.2 + t.4
            && (s.rmse_pooled - t.5).abs() <= t.6
            && s.failures == 0;
        pass &= ok;
        parts.push(format!(
            "{} TPR {:.3} FDR {:.3} RMSE {:.3} failures {}{}",
            spec.label(),
            s.tpr.mean,
            s.fdr.mean,
            s.rmse_pooled,
            s.failures,
            if ok { "" } else { " (out of band)" }
        ));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn criterion_6() -> Outcome {
    let rhos = vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let grid = PhaseGridSpec { p: 200, n_list: vec![40], rho_list: rhos.clone(), magnitude: 10.0, replications: 20, seed: 601 };
    let report = run_phase_campaign(&grid, &[Method::QutLasso], &MethodSettings::default()).unwrap();
    let oir: Vec<f64> = rhos.iter().map(|&r| report.cell(0.2, r, Method::QutLasso).unwrap().oir).collect();
    let mut inversions = 0;
    let mut worst: f64 = 0.0;
    for w in oir.windows(2) {
        if w[1] > w[0] {
            inversions += 1;
            worst = worst.max(w[1] - w[0]);
        }
    }
    let shape = inversions == 0 || (inversions == 1 && worst <= 0.1);
    Outcome {
        pass: oir[0] >= 0.5 && *oir.last().unwrap() == 0.0 && shape,
        detail: format!(
            "OIR by rho: {}",
            rhos.iter().zip(&oir).map(|(r, o)| format!("{r}:{o:.2}")).collect::<Vec<_>>().join(" ")
        ),
    }
}

fn criterion_7() -> Outcome {
    let cfg = SolverConfig::glm();
    let mut worst: f64 = 0.0;
    let mut not_converged = 0;
    let mut count = 0;
    for i in 0..200u64 {
        let family = if i % 2 == 0 { GlmFamily::Bernoulli } else { GlmFamily::Poisson };
        let mut rng = stream_rng(701, i);
        let n = rng.random_range(20..80);
        let p = rng.random_range(5..60);
        let x = normal_matrix(&mut rng, n, p);
        let inst = loop {
            let y = DVector::from_fn(n, |k, _| sample_response(&mut rng, family, 0.3 + 0.6 * x[(k, 0)] - 0.4 * x[(k, 1)]));
            let inst = ProblemInstance::with_intercept(x.clone(), y, family).unwrap();
            if membership_d(&inst, &cfg).unwrap() {
                break inst;
            }
        };
        let l0 = lambda0_glm(&inst, &cfg).unwrap();
        let lam = l0 * rng.random_range(0.05..0.95);
        let fit = glm_lasso_fit(&inst, lam, &cfg).unwrap();
        count += 1;
        if !fit.converged {
            not_converged += 1;
            continue;
        }
        worst = worst.max(glm_kkt_residual(&inst, &fit.beta0, &fit.beta, lam));
    }
    Outcome {
        pass: worst <= 1e-6 && not_converged == 0,
        detail: format!("{count} fits, {not_converged} not converged, worst KKT residual {worst:.2e}"),
    }
}

fn criterion_8() -> Outcome {
    let (n, p, reps) = (200, 500, 100);
    let results: Vec<(f64, f64)> = (0..reps)
        .map(|r| {
            let mut rng = stream_rng(801, r);
            let x = normal_matrix(&mut rng, n, p);
            let y = standard_normals(&mut rng, n).add_scalar(1.0);
            let inst = ProblemInstance::with_intercept(x, y, GlmFamily::Gaussian).unwrap();
            let q = sigma2_refitted_qut(&inst, &RefittedQutOptions { seed: 802 + r, ..Default::default() }).unwrap();
            let c = sigma2_residual_cv(&inst, &CvOptions { seed: 900 + r, ..Default::default() }).unwrap();
            (q.sigma2, c.sigma2)
        })
        .collect();
    let q = summarize(&results.iter().map(|r| r.0).collect::<Vec<_>>());
    let c = summarize(&results.iter().map(|r| r.1).collect::<Vec<_>>());
    Outcome {
        pass: (q.median - 1.0).abs() <= 0.1 && q.iqr <= c.iqr,
        detail: format!(
            "refitted QUT median {:.3} IQR {:.3}; residual-CV median {:.3} IQR {:.3}",
            q.median, q.iqr, c.median, c.iqr
        ),
    }
}

fn criterion_9() -> Outcome {
    let spec = ScenarioSpec {
        n: 100,
        p: 300,
        theta: 0.5,
        omega: 0.0,
        snr: 0.5,
        family: GlmFamily::Poisson,
        replications: 100,
        seed: 901,
    };
    let report = run_sensitivity_study(&spec, &MethodSettings::default()).unwrap();
    let s = &report.summary;
    let closer = (s.median_beta0_final - 1.0).abs() < (s.median_beta0_initial - 1.0).abs();
    Outcome {
        pass: closer && s.median_abs_tpr_diff <= 0.1,
        detail: format!(
            "median intercept initial {:.3} final {:.3}; median |TPr(oracle) - TPr(final)| {:.3}",
            s.median_beta0_initial, s.median_beta0_final, s.median_abs_tpr_diff
        ),
    }
}

fn criterion_10() -> Outcome {
    let run = |threads: usize| -> String {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let spec = ScenarioSpec {
                n: 60,
                p: 80,
                theta: 0.5,
                omega: 0.2,
                snr: 2.0,
                family: GlmFamily::Gaussian,
                replications: 4,
                seed: 1001,
            };
            let settings = MethodSettings { mc_samples: 300, cv_folds: 5, ..Default::default() };
            let table = run_table2_campaign(std::slice::from_ref(&spec), &Method::FITTING, &settings).unwrap();
            let grid = PhaseGridSpec { p: 60, n_list: vec![20], rho_list: vec![0.1, 0.5], magnitude: 10.0, replications: 3, seed: 1002 };
            let phase = run_phase_campaign(&grid, &[Method::Oracle, Method::QutLasso], &settings).unwrap();
            let pois = ScenarioSpec { family: GlmFamily::Poisson, snr: 0.5, replications: 3, ..spec };
            let sens = run_sensitivity_study(&pois, &settings).unwrap();
            let mut rng = stream_rng(1003, 0);
            let x = normal_matrix(&mut rng, 30, 40);
            let inst = ProblemInstance::with_intercept(x, DVector::zeros(30), GlmFamily::Gaussian).unwrap();
            let random = NullSampler::new(&inst, 1004).with_design_mode(DesignMode::RandomBootstrapRows);
            let t = compute_qut(&random, &NullStatistic::Penalty(PenaltySpec::Lasso), 0.05, 500).unwrap();
            serde_json::to_string(&(table, phase, sens, t)).unwrap()
        })
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    Outcome {
        pass: a == b && a == c,
        detail: format!("{} bytes of serialized output; repeat identical: {}; 1 vs 4 workers identical: {}", a.len(), a == b, a == c),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 null selection frequency at QUT", criterion_1),
        ("2 zero-threshold / solver boundary", criterion_2),
        ("3 best-subset closed form vs MC", criterion_3),
        ("4 group-lasso closed form vs MC", criterion_4),
        ("5 Gaussian TPR/FDR/RMSE reproduction", criterion_5),
        ("6 phase-transition shape", criterion_6),
        ("7 GLM KKT certification", criterion_7),
        ("8 variance calibration", criterion_8),
        ("9 intercept sensitivity", criterion_9),
        ("10 determinism", criterion_10),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut ran, mut failed) = (0, 0);
    for (name, check) in criteria {
        let id = name.split_whitespace().next().unwrap();
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        ran += 1;
        let status = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            failed += 1;
        }
        println!("[{status}] criterion {name}: {} ({:.1}s)", out.detail, start.elapsed().as_secs_f64());
    }
    println!("{} of {ran} acceptance criteria passed", ran - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
