//! Acceptance checks. Runs as a plain binary and prints one PASS/FAIL line
//! per criterion; exits nonzero when any criterion fails.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use remqte::design::{sample_rem, BalanceState, DesignSpec};
use remqte::estimate::{
    analyze, arm_quantile, kde_density, qte_estimate, sample_covariances, variance_bounds,
    AnalysisOptions, ObservedData,
};
use remqte::limitlaw::chisq_cdf;
use remqte::limitlaw::{truncated_variance, MonteCarloQuantiles, TruncatedComponent};
use remqte::popmodel::{default_bandwidth, oracle_variance_components, Arm, FinitePopulation};
use remqte::rng::stream;
use remqte::simharness::{
    render_report, run_scenario, Bandwidth, BetaRule, Model, ScenarioConfig, ScenarioReport,
};

const MASTER_SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn linear_config(r1: f64, workers: usize) -> ScenarioConfig {
    ScenarioConfig {
        model: Model::Linear,
        n: 1000,
        covariate_dim: 10,
        rho: 0.5,
        mu0: 0.0,
        mu1: 5.0,
        beta: BetaRule::Constant(0.1),
        alpha: vec![0.5],
        r2_target: vec![0.5],
        r1: vec![r1],
        acceptance_probability: 0.001,
        replications: 2000,
        miscoverage: 0.05,
        bandwidth: Bandwidth::CubeRootRule,
        master_seed: MASTER_SEED,
        workers,
        covariate_file: None,
    }
}

fn criterion4_report() -> &'static ScenarioReport {
    static REPORT: OnceLock<ScenarioReport> = OnceLock::new();
    REPORT.get_or_init(|| run_scenario(&linear_config(0.5, 1)).expect("criterion-4 scenario"))
}

/// `P(χ²_k <= x)` for even `k` from the Poisson sum.
fn even_df_cdf(k: u32, x: f64) -> f64 {
    let h = 0.5 * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..k / 2 {
        term *= h / j as f64;
        sum += term;
    }
    1.0 - (-h).exp() * sum
}

fn criterion1() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in [2, 4, 12] {
        for i in 1..=400 {
            let x = 0.05 * i as f64;
            worst = worst.max((chisq_cdf(k, x) - even_df_cdf(k, x)).abs());
        }
    }
    let a = remqte::design::threshold_from_p(2, 0.5).unwrap();
    let a_exact = 2.0 * std::f64::consts::LN_2;
    let v = truncated_variance(2, 1.3862944).unwrap();
    let v_closed = {
        let p2 = even_df_cdf(2, 1.3862944);
        let p4 = even_df_cdf(4, 1.3862944);
        p4 / p2
    };
    // The quoted constants carry seven decimals, so they are compared to
    // their rounding precision; the closed forms carry the tight tolerances.
    let pass = worst <= 1e-10
        && (a - a_exact).abs() <= 1e-8
        && (a - 1.3862944).abs() <= 5e-8
        && (v - v_closed).abs() <= 1e-9
        && (v - 0.3068528).abs() <= 5e-8;
    outcome(
        pass,
        format!(
            "max |cdf - closed form| = {worst:.2e}; a = {a:.10} (2 ln 2 = {a_exact:.10}); v = {v:.10} (closed form {v_closed:.10})"
        ),
    )
}

fn criterion2() -> Outcome {
    let x = DMatrix::from_fn(6, 1, |i, _| (i + 1) as f64);
    let state = BalanceState::new(x).unwrap();
    let mut all: Vec<(Vec<bool>, f64)> = Vec::new();
    for mask in 0u32..64 {
        if mask.count_ones() == 3 {
            let z: Vec<bool> = (0..6).map(|i| mask >> i & 1 == 1).collect();
            let m = state.mahalanobis_of(&z).unwrap();
            all.push((z, m));
        }
    }
    let mut dists: Vec<f64> = all.iter().map(|(_, m)| *m).collect();
    dists.sort_by(f64::total_cmp);
    let mut sizes: Vec<usize> = Vec::new();
    for w in dists.windows(2) {
        if w[1] - w[0] > 1e-9 {
            sizes.push(dists.iter().filter(|&&d| d <= w[0]).count());
        }
    }
    // Eight accepted assignments are unattainable; use the smallest
    // attainable set with at least eight members.
    let target = *sizes.iter().find(|&&s| s >= 8).unwrap();
    let threshold = 0.5 * (dists[target - 1] + dists[target]);
    let spec = DesignSpec::with_threshold(6, 3, 1, threshold).unwrap();
    let draws = 50_000;
    let mut counts = vec![0usize; all.len()];
    let mut rng = stream(MASTER_SEED);
    for _ in 0..draws {
        let d = sample_rem(&spec, &state, &mut rng).unwrap();
        let idx = all.iter().position(|(z, _)| *z == d.z).unwrap();
        counts[idx] += 1;
    }
    let p = 1.0 / target as f64;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    let mut worst: f64 = 0.0;
    let mut leak = 0;
    for ((_, m), &c) in all.iter().zip(&counts) {
        let f = c as f64 / draws as f64;
        if *m <= threshold {
            worst = worst.max((f - p).abs() / se);
        } else {
            leak += c;
        }
    }
    outcome(
        !sizes.contains(&8) && worst <= 3.0 && leak == 0,
        format!(
            "attainable sizes {sizes:?}; {target} accepted, expected frequency {p:.4}, max deviation {worst:.2} SE, {leak} draws outside"
        ),
    )
}

fn criterion3() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (k, a) in [(2u32, 1.386), (10, 1.479)] {
        let comp = TruncatedComponent::new(k, a, 1).unwrap();
        let v = truncated_variance(k, a).unwrap();
        let mut rng = stream(MASTER_SEED + k as u64);
        let m = 1_000_000;
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for _ in 0..m {
            let l = comp.sample_first(&mut rng);
            s1 += l;
            s2 += l * l;
            s4 += l.powi(4);
        }
        let mf = m as f64;
        let mean = s1 / mf;
        let var = s2 / mf - mean * mean;
        let se_mean = (var / mf).sqrt();
        let se_var = ((s4 / mf - (s2 / mf).powi(2)) / mf).sqrt();
        let ok = mean.abs() <= 3.0 * se_mean && (var - v).abs() <= 3.0 * se_var;
        pass &= ok;
        lines.push(format!(
            "K={k}: mean {:.2} SE, var {var:.5} vs {v:.5} ({:.2} SE)",
            mean / se_mean,
            (var - v) / se_var
        ));
    }
    outcome(pass, lines.join("; "))
}

fn criterion4() -> Outcome {
    let cell = &criterion4_report().cells[0];
    let theory = cell.priasv_pct;
    let observed = cell.rem.priv_pct;
    outcome(
        (observed - theory).abs() <= 10.0,
        format!(
            "PRIV {observed:.3} vs theory {theory:.3} (R2 oracle {:.4}); ReM CI length {:.3}, coverage {:.3}; mean attempts {:.0}",
            cell.r2_oracle, cell.rem.ci_length, cell.rem.coverage, cell.rem.mean_attempts
        ),
    )
}

fn criterion5() -> Outcome {
    let imbalanced = run_scenario(&linear_config(0.2, 1)).expect("r1 = 0.2 scenario");
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, report) in [("r1=0.5", criterion4_report()), ("r1=0.2", &imbalanced)] {
        let cell = &report.cells[0];
        for s in [&cell.cre, &cell.rem] {
            pass &= s.coverage >= 0.93;
            parts.push(format!("{label} {} {:.3}", s.design.name(), s.coverage));
        }
    }
    outcome(pass, format!("coverage {}", parts.join(", ")))
}

fn criterion6() -> Outcome {
    let cfg = ScenarioConfig {
        model: Model::Ihdp,
        n: 746,
        covariate_dim: 25,
        rho: 0.0,
        mu0: 0.0,
        mu1: 4.0,
        beta: BetaRule::IhdpDiscrete,
        alpha: vec![0.5],
        r2_target: vec![0.4],
        r1: vec![0.5],
        acceptance_probability: 0.001,
        replications: 2000,
        miscoverage: 0.05,
        bandwidth: Bandwidth::CubeRootRule,
        master_seed: MASTER_SEED,
        workers: 1,
        covariate_file: None,
    };
    let report = run_scenario(&cfg).expect("IHDP scenario");
    let cell = &report.cells[0];
    let (observed, theory) = (cell.rem.priv_pct, cell.priasv_pct);
    outcome(
        (observed - theory).abs() <= 10.0 && cell.rem.coverage >= 0.93,
        format!(
            "synthetic covariates: PRIV {observed:.3} vs theory {theory:.3} (R2 oracle {:.4}); ReM coverage {:.3}, CI length {:.3}",
            cell.r2_oracle, cell.rem.coverage, cell.rem.ci_length
        ),
    )
}

fn random_population<R: Rng>(n: usize, rng: &mut R) -> FinitePopulation {
    let k = 2;
    let x = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let slope: f64 = rng.random_range(-2.0..2.0);
    let y1 = (0..n)
        .map(|i| {
            let v: f64 = slope * x[(i, 0)] + rng.sample::<f64, _>(StandardNormal);
            (4.0 * v).round() / 4.0
        })
        .collect();
    let y0 = (0..n)
        .map(|i| x[(i, 1)] + rng.sample::<f64, _>(StandardNormal))
        .collect();
    FinitePopulation::new(y1, y0, x).unwrap()
}

fn random_observed<R: Rng>(n: usize, n1: usize, rng: &mut R) -> ObservedData {
    let pop = random_population(n, rng);
    let mut z = vec![false; n];
    for i in rand::seq::index::sample(rng, n, n1) {
        z[i] = true;
    }
    ObservedData::from_assignment(&pop, z).unwrap()
}

fn criterion7() -> Outcome {
    let mut rng = stream(MASTER_SEED + 7);
    let mut oracle_violations = 0;
    for _ in 0..200 {
        let n = rng.random_range(20..=60);
        let pop = random_population(n, &mut rng);
        let alpha = rng.random_range(0.2..0.8);
        let r1 = rng.random_range(0.25..0.75);
        let law = oracle_variance_components(&pop, alpha, r1, default_bandwidth(n)).unwrap();
        if !(law.c_tilde >= law.c && law.a_tilde >= law.a) {
            oracle_violations += 1;
        }
    }
    let mut b_violations = 0;
    let mut clamps = 0;
    let datasets = 1000;
    for _ in 0..datasets {
        let n = rng.random_range(20..=60);
        let n1 = rng.random_range(5..=n - 5);
        let data = random_observed(n, n1, &mut rng);
        let alpha = rng.random_range(0.2..0.8);
        let q1 = arm_quantile(&data, Arm::Treated, alpha).unwrap();
        let q0 = arm_quantile(&data, Arm::Control, alpha).unwrap();
        let plugins = sample_covariances(&data, q1, q0).unwrap();
        let h = default_bandwidth(n);
        let f1 = kde_density(&data.arm_outcomes(Arm::Treated), q1, h).unwrap();
        let f0 = kde_density(&data.arm_outcomes(Arm::Control), q0, h).unwrap();
        let bounds = variance_bounds(&plugins, data.r1(), f1, f0).unwrap();
        if !(bounds.b_hat >= 0.0) {
            b_violations += 1;
        }
        if bounds.a_clamped {
            clamps += 1;
        }
    }
    outcome(
        oracle_violations == 0 && b_violations == 0,
        format!(
            "oracle bound violations {oracle_violations}/200; B_hat < 0 in {b_violations}/{datasets}; A_hat clamped in {clamps}/{datasets} ({:.1}%)",
            100.0 * clamps as f64 / datasets as f64
        ),
    )
}

fn criterion8() -> Outcome {
    let one = render_report(criterion4_report());
    let four = render_report(&run_scenario(&linear_config(0.5, 4)).expect("four workers"));
    outcome(
        one == four,
        format!(
            "workers 1 and 4 reports identical: {} ({} bytes)",
            one == four,
            one.len()
        ),
    )
}

/// Lower empirical quantile from a sorted copy.
fn sorted_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (alpha * v.len() as f64).ceil().max(1.0) as usize;
    v[rank - 1]
}

fn criterion9() -> Outcome {
    let mut rng = stream(MASTER_SEED + 9);
    let mut quantile_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(6..=40);
        let n1 = rng.random_range(2..=n - 2);
        let mut z = vec![false; n];
        for i in rand::seq::index::sample(&mut rng, n, n1) {
            z[i] = true;
        }
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let data = ObservedData::new(y, z, x).unwrap();
        let alpha = rng.random_range(0.01..0.99);
        for arm in [Arm::Treated, Arm::Control] {
            let got = arm_quantile(&data, arm, alpha).unwrap();
            if got != sorted_quantile(&data.arm_outcomes(arm), alpha) {
                quantile_mismatch += 1;
            }
        }
    }

    let base = random_observed(80, 35, &mut rng);
    let delta = 1.75;
    let shifted = ObservedData::new(
        base.y()
            .iter()
            .zip(base.z())
            .map(|(y, &t)| if t { y + delta } else { *y })
            .collect(),
        base.z().to_vec(),
        base.covariates().clone(),
    )
    .unwrap();
    let common = ObservedData::new(
        base.y().iter().map(|y| y - 3.0).collect(),
        base.z().to_vec(),
        base.covariates().clone(),
    )
    .unwrap();
    let t = qte_estimate(&base, 0.5).unwrap();
    let shift_ok = (qte_estimate(&shifted, 0.5).unwrap() - (t + delta)).abs() <= 1e-8
        && (qte_estimate(&common, 0.5).unwrap() - t).abs() <= 1e-8;

    let c = 2.5;
    let scaled = ObservedData::new(
        base.y().iter().map(|y| c * y).collect(),
        base.z().to_vec(),
        base.covariates().clone(),
    )
    .unwrap();
    let run = |data: &ObservedData, h: f64| {
        let mut rng = stream(MASTER_SEED + 90);
        let mut src = MonteCarloQuantiles::new(&mut rng, 50_000);
        let opts = AnalysisOptions {
            quantile_level: 0.5,
            miscoverage: 0.05,
            threshold: 2.0,
            bandwidth: Some(h),
        };
        analyze(data, &opts, &mut src).unwrap()
    };
    let h = default_bandwidth(80);
    let a = run(&base, h);
    let b = run(&scaled, c * h);
    let close = |got: f64, want: f64| (got - want).abs() <= 1e-8 * want.abs().max(1.0);
    let scale_ok = close(b.q1_hat, c * a.q1_hat)
        && close(b.q0_hat, c * a.q0_hat)
        && close(b.f1_hat, a.f1_hat / c)
        && close(b.f0_hat, a.f0_hat / c)
        && close(b.c_hat, c * c * a.c_hat)
        && close(b.b_hat, c * c * a.b_hat)
        && close(b.a_hat, c * c * a.a_hat)
        && close(b.ci_low, c * a.ci_low)
        && close(b.ci_high, c * a.ci_high);
    outcome(
        quantile_mismatch == 0 && shift_ok && scale_ok,
        format!(
            "quantile mismatches {quantile_mismatch}/2000; shift equivariance {shift_ok}; rescaling chain {scale_ok}"
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("closed-form numerics", criterion1),
        ("enumeration design oracle", criterion2),
        ("truncated sampler moments", criterion3),
        ("linear PRIV against PRIASV", criterion4),
        ("coverage conservativeness", criterion5),
        ("IHDP pipeline", criterion6),
        ("variance bound properties", criterion7),
        ("determinism across workers", criterion8),
        ("estimator oracles", criterion9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let status = if result.pass { "PASS" } else { "FAIL" };
        if !result.pass {
            failed += 1;
        }
        println!(
            "{status} criterion {} ({name}, {:.1}s): {}",
            i + 1,
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
