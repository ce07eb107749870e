//! Simulation studies comparing CRE and ReM on fixed finite populations.
//!
//! Each cell `(r1, α, R̃² target)` draws one population, calibrates its noise
//! level, then runs `replications` assignments under each design and analyzes
//! every one of them. Replication `i` of design `d` in cell `c` always uses
//! the stream `substream(master_seed, [c, d, i])`, so the report does not
//! depend on the number of workers.

pub mod calibrate;
pub mod config;
pub mod generate;
pub mod report;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use calibrate::{calibrate_noise, calibrate_skeleton, Calibration};
pub use config::{Bandwidth, BetaRule, Model, ScenarioConfig};
pub use generate::{gen_ihdp, gen_linear, gen_nonlinear, synthetic_ihdp_covariates, Skeleton};
pub use report::{
    render_report, write_report, CellReport, DesignKind, DesignSummary, ReplicationResult,
    ScenarioReport,
};

use crate::design::{sample_rem, BalanceState, DesignSpec};
use crate::error::{Error, Result};
use crate::estimate::{analyze, AnalysisOptions, ObservedData};
use crate::limitlaw::{truncated_variance, MixtureQuantileTable, DEFAULT_MIXTURE_DRAWS};
use crate::popmodel::true_qte;
use crate::rng::substream;

/// Grid nodes of the interval quantile tables.
pub const QUANTILE_GRID_POINTS: usize = 401;

const TAG_CELL: u64 = 1;
const TAG_REPLICATION: u64 = 2;
const TAG_TABLE: u64 = 3;
const TAG_IHDP: u64 = 4;

/// Interval quantile tables for one `(K, a)` pair per design.
struct IntervalTables {
    cre: MixtureQuantileTable,
    rem: MixtureQuantileTable,
}

impl IntervalTables {
    fn build(cfg: &ScenarioConfig, threshold: f64) -> Result<Self> {
        let level = 1.0 - 0.5 * cfg.miscoverage;
        let k = cfg.covariate_dim as u32;
        let table = |design: DesignKind, a: f64| {
            MixtureQuantileTable::build(
                k,
                a,
                level,
                DEFAULT_MIXTURE_DRAWS,
                QUANTILE_GRID_POINTS,
                &mut substream(cfg.master_seed, &[TAG_TABLE, design.tag()]),
            )
        };
        Ok(IntervalTables {
            cre: table(DesignKind::Cre, f64::INFINITY)?,
            rem: table(DesignKind::Rem, threshold)?,
        })
    }

    fn get(&self, design: DesignKind) -> &MixtureQuantileTable {
        match design {
            DesignKind::Cre => &self.cre,
            DesignKind::Rem => &self.rem,
        }
    }
}

/// Covariates for the IHDP model: the configured file, else a synthetic
/// stand-in derived from the master seed.
pub fn ihdp_covariates(cfg: &ScenarioConfig) -> Result<DMatrix<f64>> {
    match &cfg.covariate_file {
        Some(path) => crate::io::read_matrix_file(path),
        None => Ok(synthetic_ihdp_covariates(&mut substream(
            cfg.master_seed,
            &[TAG_IHDP],
        ))),
    }
}

struct Cell {
    index: u64,
    r1: f64,
    alpha: f64,
    r2_target: f64,
}

fn cells(cfg: &ScenarioConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &r1 in &cfg.r1 {
        for &alpha in &cfg.alpha {
            for &r2_target in &cfg.r2_target {
                out.push(Cell {
                    index: out.len() as u64,
                    r1,
                    alpha,
                    r2_target,
                });
            }
        }
    }
    out
}

/// Everything a replication needs about its cell.
struct CellContext<'a> {
    cfg: &'a ScenarioConfig,
    cell: &'a Cell,
    calibration: &'a Calibration,
    state: &'a BalanceState,
    tau: f64,
    tables: &'a IntervalTables,
}

impl CellContext<'_> {
    fn spec(&self, design: DesignKind) -> Result<DesignSpec> {
        let n1 = self.cfg.treated_count(self.cell.r1);
        match design {
            DesignKind::Cre => DesignSpec::complete(self.cfg.n, n1, self.cfg.covariate_dim),
            DesignKind::Rem => DesignSpec::new(
                self.cfg.n,
                n1,
                self.cfg.covariate_dim,
                self.cfg.acceptance_probability,
            ),
        }
    }

    fn replicate(
        &self,
        design: DesignKind,
        spec: &DesignSpec,
        rep: u64,
    ) -> Result<ReplicationResult> {
        let mut rng = substream(
            self.cfg.master_seed,
            &[TAG_REPLICATION, self.cell.index, design.tag(), rep],
        );
        let draw = sample_rem(spec, self.state, &mut rng)?;
        let data = ObservedData::from_assignment(&self.calibration.population, draw.z)?;
        let options = AnalysisOptions {
            quantile_level: self.cell.alpha,
            miscoverage: self.cfg.miscoverage,
            threshold: spec.threshold,
            bandwidth: Some(self.cfg.bandwidth.value(self.cfg.n)),
        };
        let mut source = self.tables.get(design);
        let inf = analyze(&data, &options, &mut source)?;
        Ok(ReplicationResult {
            design,
            tau_hat: inf.tau_hat,
            ci_low: inf.ci_low,
            ci_high: inf.ci_high,
            covered: inf.ci_low <= self.tau && self.tau <= inf.ci_high,
            attempts: draw.attempts,
            clamped: inf.a_clamped,
        })
    }

    fn run_design(&self, design: DesignKind) -> Result<Vec<ReplicationResult>> {
        let spec = self.spec(design)?;
        (0..self.cfg.replications as u64)
            .into_par_iter()
            .map(|rep| {
                self.replicate(design, &spec, rep)
                    .map_err(|e| e.context(format!("{} replication {rep}", design.name())))
            })
            .collect()
    }
}

fn describe(cell: &Cell) -> String {
    format!(
        "cell r1 = {}, alpha = {}, r2_target = {}",
        cell.r1, cell.alpha, cell.r2_target
    )
}

fn run_cell(
    cfg: &ScenarioConfig,
    cell: &Cell,
    ihdp: Option<&DMatrix<f64>>,
    tables: &IntervalTables,
    threshold: f64,
) -> Result<CellReport> {
    let mut rng = substream(cfg.master_seed, &[TAG_CELL, cell.index]);
    let calibration = calibrate_noise(cfg, ihdp, cell.alpha, cell.r1, cell.r2_target, &mut rng)?;
    let pop = &calibration.population;
    let state = BalanceState::from_covariates(std::sync::Arc::clone(pop.shared_covariates()));
    let tau = true_qte(pop, cell.alpha)?;
    let ctx = CellContext {
        cfg,
        cell,
        calibration: &calibration,
        state: &state,
        tau,
        tables,
    };
    let cre_results = ctx.run_design(DesignKind::Cre)?;
    let rem_results = ctx.run_design(DesignKind::Rem)?;
    let cre = report::summarize(DesignKind::Cre, &cre_results, tau)?;
    let mut rem = report::summarize(DesignKind::Rem, &rem_results, tau)?;
    report::compare(&cre, &mut rem);
    let v = truncated_variance(cfg.covariate_dim as u32, threshold)?;
    Ok(CellReport {
        r1: cell.r1,
        alpha: cell.alpha,
        r2_target: cell.r2_target,
        r2_oracle: calibration.r2_tilde,
        sigma: calibration.sigma,
        tau,
        threshold,
        priasv_pct: 100.0 * (1.0 - v) * calibration.r2_tilde,
        cre,
        rem,
    })
}

/// Runs every cell of the scenario on a pool of `cfg.workers` threads.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let ihdp = match cfg.model {
        Model::Ihdp => Some(ihdp_covariates(cfg)?),
        _ => None,
    };
    let threshold = crate::design::threshold_from_p(cfg.covariate_dim, cfg.acceptance_probability)?;
    pool.install(|| {
        let tables = IntervalTables::build(cfg, threshold)?;
        let mut reports = Vec::new();
        for cell in cells(cfg) {
            let report = run_cell(cfg, &cell, ihdp.as_ref(), &tables, threshold)
                .map_err(|e| e.context(describe(&cell)))?;
            reports.push(report);
        }
        Ok(ScenarioReport { cells: reports })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            model: Model::Linear,
            n: 200,
            covariate_dim: 3,
            rho: 0.5,
            mu0: 0.0,
            mu1: 5.0,
            beta: BetaRule::Constant(0.3),
            alpha: vec![0.5],
            r2_target: vec![0.4],
            r1: vec![0.5],
            acceptance_probability: 0.05,
            replications: 60,
            miscoverage: 0.05,
            bandwidth: Bandwidth::CubeRootRule,
            master_seed: 11,
            workers: 1,
            covariate_file: None,
        }
    }

    #[test]
    fn report_is_independent_of_workers() {
        let mut cfg = small_config();
        let one = render_report(&run_scenario(&cfg).unwrap());
        cfg.workers = 3;
        let three = render_report(&run_scenario(&cfg).unwrap());
        assert_eq!(one, three);
    }

    #[test]
    fn cells_cover_the_grid() {
        let mut cfg = small_config();
        cfg.alpha = vec![0.25, 0.75];
        cfg.r1 = vec![0.5, 0.3];
        cfg.replications = 10;
        let report = run_scenario(&cfg).unwrap();
        assert_eq!(report.cells.len(), 4);
        for cell in &report.cells {
            assert_eq!(cell.cre.priv_pct, 0.0);
            assert_eq!(cell.cre.mean_attempts, 1.0);
            assert!(cell.rem.mean_attempts >= 1.0);
            assert!((cell.r2_oracle - 0.4).abs() < 2.0 * calibrate::CALIBRATION_TOLERANCE);
        }
    }

    #[test]
    fn synthetic_ihdp_runs() {
        let mut cfg = small_config();
        cfg.model = Model::Ihdp;
        cfg.n = 746;
        cfg.covariate_dim = 25;
        cfg.mu1 = 4.0;
        cfg.beta = BetaRule::IhdpDiscrete;
        cfg.replications = 4;
        cfg.acceptance_probability = 0.5;
        let report = run_scenario(&cfg).unwrap();
        assert_eq!(report.cells.len(), 1);
    }
}
