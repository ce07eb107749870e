use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use remqte::design::{sample_rem, threshold_from_p, BalanceState, DesignSpec};
use remqte::estimate::{analyze, AnalysisOptions, QteInference};
use remqte::io::{read_matrix_file, read_observed_file, write_assignment};
use remqte::limitlaw::{
    chisq_cdf, chisq_quantile, mixture_quantile, truncated_variance, MixtureLaw, MixtureQuantiles,
    MonteCarloQuantiles, DEFAULT_MIXTURE_DRAWS,
};
use remqte::rng::stream;
use remqte::simharness::{render_report, run_scenario, ScenarioConfig};
use remqte::ErrorClass;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Rerandomized experiments and inference for quantile treatment effects.
#[derive(Parser, Debug)]
#[command(name = "remqte", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw one treatment assignment by Mahalanobis rerandomization.
    Design(DesignArgs),
    /// Estimate a quantile treatment effect with a confidence interval.
    Analyze(AnalyzeArgs),
    /// Run a simulation scenario comparing CRE and ReM.
    Simulate(SimulateArgs),
    /// Tabulate limit-law quantities for K covariates and a threshold.
    Limits(LimitsArgs),
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// Covariate matrix, one row per unit (comma or whitespace separated, optional header).
    covariates: PathBuf,
    /// Treated fraction; n1 = round(r1 n).
    #[arg(long)]
    r1: f64,
    /// Acceptance probability P(chi2_K <= a); 1 gives complete randomization.
    #[arg(long)]
    p: f64,
    /// Seed of the random stream.
    #[arg(long)]
    seed: u64,
    /// Assignment table to write (unit_index,z).
    #[arg(long)]
    out: PathBuf,
    /// Rejection budget; defaults to ceil(50 / p).
    #[arg(long)]
    max_attempts: Option<u64>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Observed data with header y,z,x1..xK.
    data: PathBuf,
    /// Quantile level in (0, 1).
    #[arg(long)]
    alpha: f64,
    /// Acceptance probability of the design that produced the data; 1 for CRE.
    #[arg(long)]
    p_design: f64,
    /// One minus the interval's nominal coverage.
    #[arg(long, default_value_t = 0.05)]
    miscoverage: f64,
    /// Kernel bandwidth; defaults to n^(-1/3).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Seed for the Monte Carlo interval quantile; required unless --p-design is 1.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo draws for the interval quantile.
    #[arg(long, default_value_t = DEFAULT_MIXTURE_DRAWS)]
    draws: usize,
    /// Write the report as key,value rows.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario config (TOML).
    config: PathBuf,
    /// Report table to write (tab separated).
    #[arg(long)]
    out: PathBuf,
    /// Override the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the config's replication count.
    #[arg(long)]
    replications: Option<usize>,
    /// Override the config's master_seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct LimitsArgs {
    /// Covariate dimension K.
    #[arg(long)]
    k: u32,
    /// Acceptance probability; the threshold is its chi2_K quantile.
    #[arg(long, conflicts_with = "a", required_unless_present = "a")]
    p: Option<f64>,
    /// Threshold a (use inf for complete randomization).
    #[arg(long)]
    a: Option<f64>,
    /// Squared multiple correlation R2 for the PRIASV row.
    #[arg(long)]
    r2: Option<f64>,
    /// One minus the interval's nominal coverage, for the nu row.
    #[arg(long, default_value_t = 0.05)]
    miscoverage: f64,
    /// Seed for the Monte Carlo nu row; nu is omitted without it.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo draws for nu.
    #[arg(long, default_value_t = DEFAULT_MIXTURE_DRAWS)]
    draws: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn cmd_design(args: &DesignArgs) -> Result<()> {
    let x = read_matrix_file(&args.covariates)?;
    let n = x.nrows();
    let k = x.ncols();
    let n1 = (args.r1 * n as f64).round() as usize;
    let state = BalanceState::new(x)?;
    let mut spec = DesignSpec::new(n, n1, k, args.p)?;
    if let Some(budget) = args.max_attempts {
        spec = spec.with_max_attempts(budget)?;
    }
    let draw = sample_rem(&spec, &state, &mut stream(args.seed))?;
    let mut out = create(&args.out)?;
    write_assignment(&mut out, &draw, &spec)?;
    out.flush()?;
    let m = draw.mahalanobis.unwrap_or(f64::NAN);
    println!("units        {n} ({n1} treated)");
    println!("covariates   {k}");
    println!("M            {m:.6}");
    println!("a            {}", spec.threshold);
    println!("p            {}", spec.acceptance_probability);
    println!("attempts     {}", draw.attempts);
    println!("realized p   {:.6}", 1.0 / draw.attempts as f64);
    println!("written      {}", args.out.display());
    Ok(())
}

/// `ν = √(A + B) z_p` for complete randomization.
struct GaussianQuantiles;

impl MixtureQuantiles for GaussianQuantiles {
    fn quantile(&mut self, law: &MixtureLaw, p: f64) -> remqte::Result<f64> {
        let z = chisq_quantile(1, 2.0 * p - 1.0)?.sqrt();
        Ok(law.variance().sqrt() * z)
    }
}

fn inference_rows(inf: &QteInference, threshold: f64) -> Vec<(String, String)> {
    let mut rows = vec![
        ("q1_hat", inf.q1_hat),
        ("q0_hat", inf.q0_hat),
        ("tau_hat", inf.tau_hat),
        ("s1_sq", inf.s1_sq),
        ("s0_sq", inf.s0_sq),
        ("f1_hat", inf.f1_hat),
        ("f0_hat", inf.f0_hat),
        ("c_hat", inf.c_hat),
        ("b_hat", inf.b_hat),
        ("a_hat", inf.a_hat),
        ("bandwidth", inf.bandwidth),
        ("threshold", threshold),
        ("nu", inf.nu),
        ("ci_low", inf.ci_low),
        ("ci_high", inf.ci_high),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect::<Vec<_>>();
    for (j, v) in inf.s_q1x.iter().enumerate() {
        rows.push((format!("s_q1x_{}", j + 1), v.to_string()));
    }
    for (j, v) in inf.s_q0x.iter().enumerate() {
        rows.push((format!("s_q0x_{}", j + 1), v.to_string()));
    }
    rows.push(("a_clamped".into(), inf.a_clamped.to_string()));
    rows
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let data = read_observed_file(&args.data)?;
    let threshold = threshold_from_p(data.k(), args.p_design)?;
    let options = AnalysisOptions {
        quantile_level: args.alpha,
        miscoverage: args.miscoverage,
        threshold,
        bandwidth: args.bandwidth,
    };
    let inf = if threshold.is_infinite() {
        analyze(&data, &options, &mut GaussianQuantiles)?
    } else {
        let Some(seed) = args.seed else {
            bail!(remqte::Error::invalid(
                "--seed is required when --p-design is below 1"
            ));
        };
        let mut rng = stream(seed);
        let mut source = MonteCarloQuantiles::new(&mut rng, args.draws);
        analyze(&data, &options, &mut source)?
    };
    let rows = inference_rows(&inf, threshold);
    for (key, value) in &rows {
        println!("{key:<12} {value}");
    }
    for w in &inf.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &args.out {
        let mut out = create(path)?;
        writeln!(out, "field,value")?;
        for (key, value) in &rows {
            writeln!(out, "{key},{value}")?;
        }
        out.flush()?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = ScenarioConfig::from_file(&args.config)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    let report = run_scenario(&cfg)?;
    let text = render_report(&report);
    let mut out = create(&args.out)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    print!("{text}");
    Ok(())
}

fn cmd_limits(args: &LimitsArgs) -> Result<()> {
    let k = args.k;
    let (a, p) = match (args.p, args.a) {
        (Some(p), _) => (threshold_from_p(k as usize, p)?, p),
        (None, Some(a)) => {
            let p = if a.is_infinite() {
                1.0
            } else {
                chisq_cdf(k, a)
            };
            (a, p)
        }
        (None, None) => bail!(remqte::Error::invalid("either --p or --a is required")),
    };
    let v = truncated_variance(k, a)?;
    println!("K            {k}");
    println!("p            {p}");
    println!("a            {a}");
    println!("v            {v:.7}");
    let r2 = args.r2.unwrap_or(0.0);
    if args.r2.is_some() {
        let priasv = remqte::limitlaw::priasv(r2, k, a)?;
        println!("R2           {r2}");
        println!("PRIASV       {:.4}%", 100.0 * priasv);
    }
    if let Some(seed) = args.seed {
        let level = 1.0 - 0.5 * args.miscoverage;
        let law = MixtureLaw::new(1.0 - r2, r2, k, a)?;
        let nu = mixture_quantile(&law, level, args.draws, &mut stream(seed))?;
        println!("nu_{level}    {nu:.6}");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Design(a) => cmd_design(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Limits(a) => cmd_limits(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<remqte::Error>()) {
        Some(e) if e.class() == ErrorClass::Numerical => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
