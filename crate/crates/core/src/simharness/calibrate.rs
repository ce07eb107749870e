//! Choosing the noise scale so the oracle `R̃²` hits a target.

use rand::Rng;

use crate::error::{Error, Result};
use crate::popmodel::{oracle_variance_components, FinitePopulation, OracleLaw};
use crate::simharness::config::ScenarioConfig;
use crate::simharness::generate::{skeleton, Skeleton};

pub const CALIBRATION_TOLERANCE: f64 = 0.02;
pub const CALIBRATION_MAX_ITERATIONS: usize = 40;
/// Bracket half-width in factors of ten around the signal scale.
const BRACKET_DECADES: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct Calibration {
    pub sigma: f64,
    pub r2_tilde: f64,
    pub iterations: usize,
    pub population: FinitePopulation,
    pub oracle: OracleLaw,
}

fn probe(
    sk: &Skeleton,
    sigma: f64,
    alpha: f64,
    r1: f64,
    bandwidth: f64,
) -> Result<(FinitePopulation, OracleLaw)> {
    let pop = sk.population(sigma)?;
    let oracle = oracle_variance_components(&pop, alpha, r1, bandwidth)?;
    Ok((pop, oracle))
}

/// Bisection on `ln σ`; every probe reuses the skeleton's draws.
pub fn calibrate_skeleton(
    sk: &Skeleton,
    alpha: f64,
    r1: f64,
    target: f64,
    bandwidth: f64,
) -> Result<Calibration> {
    if !(target > 0.01 && target < 0.95) {
        return Err(Error::invalid(format!(
            "target R2 must lie in (0.01, 0.95), got {target}"
        )));
    }
    let scale = sk.signal_sd();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::CalibrationFailed(
            "the mean function is constant, so no noise level reaches a positive R2".into(),
        ));
    }
    let spread = BRACKET_DECADES * std::f64::consts::LN_10;
    let (mut lo, mut hi) = (scale.ln() - spread, scale.ln() + spread);
    let at_lo = probe(sk, lo.exp(), alpha, r1, bandwidth)?;
    let at_hi = probe(sk, hi.exp(), alpha, r1, bandwidth)?;
    if !(at_lo.1.r2_tilde > target && at_hi.1.r2_tilde < target) {
        return Err(Error::CalibrationFailed(format!(
            "target R2 {target} is outside [{:.4}, {:.4}] reached over the noise bracket",
            at_hi.1.r2_tilde, at_lo.1.r2_tilde
        )));
    }
    let mut best = if (at_lo.1.r2_tilde - target).abs() <= (at_hi.1.r2_tilde - target).abs() {
        (lo.exp(), at_lo)
    } else {
        (hi.exp(), at_hi)
    };
    for iteration in 1..=CALIBRATION_MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let sigma = mid.exp();
        let (pop, oracle) = probe(sk, sigma, alpha, r1, bandwidth)?;
        let r2 = oracle.r2_tilde;
        if (r2 - target).abs() < (best.1 .1.r2_tilde - target).abs() {
            best = (sigma, (pop.clone(), oracle.clone()));
        }
        if (r2 - target).abs() < CALIBRATION_TOLERANCE {
            return Ok(Calibration {
                sigma,
                r2_tilde: r2,
                iterations: iteration,
                population: pop,
                oracle,
            });
        }
        if r2 > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (sigma, (population, oracle)) = best;
    if (oracle.r2_tilde - target).abs() < 2.0 * CALIBRATION_TOLERANCE {
        Ok(Calibration {
            sigma,
            r2_tilde: oracle.r2_tilde,
            iterations: CALIBRATION_MAX_ITERATIONS,
            population,
            oracle,
        })
    } else {
        Err(Error::CalibrationFailed(format!(
            "closest R2 after {CALIBRATION_MAX_ITERATIONS} steps was {:.4} for target {target}",
            oracle.r2_tilde
        )))
    }
}

/// Draws a skeleton for `cfg` from `rng` and calibrates its noise scale.
pub fn calibrate_noise<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    ihdp: Option<&nalgebra::DMatrix<f64>>,
    alpha: f64,
    r1: f64,
    target: f64,
    rng: &mut R,
) -> Result<Calibration> {
    let sk = skeleton(cfg, ihdp, rng)?;
    calibrate_skeleton(&sk, alpha, r1, target, cfg.bandwidth.value(cfg.n))
}
