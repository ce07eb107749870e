//! Synthetic finite populations.
//!
//! A [`Skeleton`] fixes everything about a population except the noise scale:
//! covariates, the mean function and standard normal noise draws. Calling
//! [`Skeleton::population`] with different `σ` therefore gives populations
//! that share all randomness, which is what noise calibration needs.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::popmodel::{Covariates, FinitePopulation};
use crate::simharness::config::{BetaRule, Model, ScenarioConfig};

pub const IHDP_ROWS: usize = 747;
pub const IHDP_COLUMNS: usize = 25;
/// Residual variance of the IHDP outcome model before calibration.
pub const IHDP_NOMINAL_VARIANCE: f64 = 3.0;
pub const IHDP_BETA_SUPPORT: [f64; 5] = [0.0, 1.0, 2.0, 3.0, 4.0];
pub const IHDP_BETA_PROBS: [f64; 5] = [0.5, 0.2, 0.15, 0.1, 0.05];
const IHDP_CONTINUOUS: usize = 6;

/// Covariates, mean function and unit-variance noise of one population.
#[derive(Debug, Clone)]
pub struct Skeleton {
    covariates: Arc<Covariates>,
    /// Mean of `Y(0)` per unit; `Y(1)` adds `mu1 - mu0`.
    signal: Vec<f64>,
    shift: f64,
    noise1: Vec<f64>,
    noise0: Vec<f64>,
}

impl Skeleton {
    pub fn population(&self, sigma: f64) -> Result<FinitePopulation> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "noise scale must be positive, got {sigma}"
            )));
        }
        let y0 = self
            .signal
            .iter()
            .zip(&self.noise0)
            .map(|(m, e)| m + sigma * e)
            .collect();
        let y1 = self
            .signal
            .iter()
            .zip(&self.noise1)
            .map(|(m, e)| m + self.shift + sigma * e)
            .collect();
        FinitePopulation::with_covariates(y1, y0, Arc::clone(&self.covariates))
    }

    pub fn covariates(&self) -> &Arc<Covariates> {
        &self.covariates
    }

    pub fn signal(&self) -> &[f64] {
        &self.signal
    }

    /// Standard deviation of the mean function across units.
    pub fn signal_sd(&self) -> f64 {
        let n = self.signal.len() as f64;
        let mean = self.signal.iter().sum::<f64>() / n;
        (self.signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }
}

fn normals<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Rows i.i.d. `N(0, (1 - ρ) I + ρ 1 1')`, drawn as `√(1-ρ) g + √ρ h 1`.
pub fn equicorrelated_covariates<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    rho: f64,
    rng: &mut R,
) -> DMatrix<f64> {
    let (a, b) = ((1.0 - rho).sqrt(), rho.sqrt());
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let common: f64 = rng.sample(StandardNormal);
        for j in 0..p {
            let g: f64 = rng.sample(StandardNormal);
            x[(i, j)] = a * g + b * common;
        }
    }
    x
}

fn regression_skeleton<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    transform: fn(f64) -> f64,
    rng: &mut R,
) -> Result<Skeleton> {
    let beta = match cfg.beta {
        BetaRule::Constant(c) => c,
        BetaRule::IhdpDiscrete => {
            return Err(Error::invalid(
                "discrete coefficients belong to the ihdp model",
            ))
        }
    };
    let x = equicorrelated_covariates(cfg.n, cfg.covariate_dim, cfg.rho, rng);
    let signal = x
        .row_iter()
        .map(|row| cfg.mu0 + beta * row.iter().map(|&v| transform(v)).sum::<f64>())
        .collect();
    let noise1 = normals(cfg.n, rng);
    let noise0 = normals(cfg.n, rng);
    Ok(Skeleton {
        covariates: Arc::new(Covariates::new(x)?),
        signal,
        shift: cfg.mu1 - cfg.mu0,
        noise1,
        noise0,
    })
}

/// `Y(z) = μ_z + β'X + ε_z`.
pub fn linear_skeleton<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Skeleton> {
    regression_skeleton(cfg, |v| v, rng)
}

/// `Y(z) = μ_z + β' exp(X) + ε_z`.
pub fn nonlinear_skeleton<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Skeleton> {
    regression_skeleton(cfg, f64::exp, rng)
}

pub fn gen_linear<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    sigma: f64,
    rng: &mut R,
) -> Result<FinitePopulation> {
    linear_skeleton(cfg, rng)?.population(sigma)
}

pub fn gen_nonlinear<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    sigma: f64,
    rng: &mut R,
) -> Result<FinitePopulation> {
    nonlinear_skeleton(cfg, rng)?.population(sigma)
}

/// I.i.d. draws over `{0, 1, 2, 3, 4}` with probabilities
/// `(0.5, 0.2, 0.15, 0.1, 0.05)`.
pub fn draw_ihdp_beta<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (value, p) in IHDP_BETA_SUPPORT.iter().zip(IHDP_BETA_PROBS) {
                acc += p;
                if u < acc {
                    return *value;
                }
            }
            IHDP_BETA_SUPPORT[IHDP_BETA_SUPPORT.len() - 1]
        })
        .collect()
}

/// IHDP-style outcomes on a 747 × 25 covariate file: the last row is dropped,
/// `Y(0) = [1, X] β + ε_0`, `Y(1) = Y(0)`-mean `+ (μ1 - μ0) + ε_1`. The
/// balance covariates are the 25 raw columns without the intercept.
pub fn ihdp_skeleton<R: Rng + ?Sized>(
    raw: &DMatrix<f64>,
    mu0: f64,
    mu1: f64,
    rng: &mut R,
) -> Result<Skeleton> {
    if raw.shape() != (IHDP_ROWS, IHDP_COLUMNS) {
        return Err(Error::malformed(format!(
            "IHDP covariates must be {IHDP_ROWS} x {IHDP_COLUMNS}, got {} x {}",
            raw.nrows(),
            raw.ncols()
        )));
    }
    let x = raw.rows(0, IHDP_ROWS - 1).into_owned();
    let n = x.nrows();
    let beta = draw_ihdp_beta(IHDP_COLUMNS + 1, rng);
    let signal = x
        .row_iter()
        .map(|row| mu0 + beta[0] + row.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let noise1 = normals(n, rng);
    let noise0 = normals(n, rng);
    Ok(Skeleton {
        covariates: Arc::new(Covariates::new(x)?),
        signal,
        shift: mu1 - mu0,
        noise1,
        noise0,
    })
}

pub fn gen_ihdp<R: Rng + ?Sized>(
    raw: &DMatrix<f64>,
    mu0: f64,
    mu1: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<FinitePopulation> {
    ihdp_skeleton(raw, mu0, mu1, rng)?.population(sigma)
}

/// A 747 × 25 stand-in for the IHDP covariates: 6 standardized continuous
/// columns sharing a latent factor and 19 binary indicators with prevalences
/// between 0.1 and 0.5.
pub fn synthetic_ihdp_covariates<R: Rng + ?Sized>(rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(IHDP_ROWS, IHDP_COLUMNS);
    for i in 0..IHDP_ROWS {
        let latent: f64 = rng.sample(StandardNormal);
        for j in 0..IHDP_CONTINUOUS {
            let g: f64 = rng.sample(StandardNormal);
            x[(i, j)] = 0.4 * latent + g;
        }
        for j in IHDP_CONTINUOUS..IHDP_COLUMNS {
            let prevalence = 0.1 + 0.4 * (j - IHDP_CONTINUOUS) as f64 / 18.0;
            let u: f64 = rng.random();
            x[(i, j)] = if u < prevalence { 1.0 } else { 0.0 };
        }
    }
    for j in 0..IHDP_CONTINUOUS {
        let col = x.column(j);
        let mean = col.mean();
        let sd =
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (IHDP_ROWS - 1) as f64).sqrt();
        for i in 0..IHDP_ROWS {
            x[(i, j)] = (x[(i, j)] - mean) / sd;
        }
    }
    x
}

/// The skeleton for one scenario cell. `ihdp` must hold the raw covariates
/// when the model is IHDP.
pub fn skeleton<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    ihdp: Option<&DMatrix<f64>>,
    rng: &mut R,
) -> Result<Skeleton> {
    match cfg.model {
        Model::Linear => linear_skeleton(cfg, rng),
        Model::Nonlinear => nonlinear_skeleton(cfg, rng),
        Model::Ihdp => {
            let raw = ihdp.ok_or_else(|| Error::invalid("ihdp model needs a covariate matrix"))?;
            ihdp_skeleton(raw, cfg.mu0, cfg.mu1, rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::popmodel::true_qte;
    use crate::rng::stream;
    use crate::simharness::config::Bandwidth;

    pub(crate) fn linear_config() -> ScenarioConfig {
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
            r1: vec![0.5],
            acceptance_probability: 0.001,
            replications: 100,
            miscoverage: 0.05,
            bandwidth: Bandwidth::CubeRootRule,
            master_seed: 1,
            workers: 1,
            covariate_file: None,
        }
    }

    #[test]
    fn linear_shift_recovers_mean_difference() {
        let cfg = linear_config();
        let pop = gen_linear(&cfg, 0.5, &mut stream(3)).unwrap();
        for alpha in [0.25, 0.5, 0.75] {
            let tau = true_qte(&pop, alpha).unwrap();
            assert!((tau - 5.0).abs() < 0.15, "alpha={alpha}: {tau}");
        }
        let mut flat = cfg.clone();
        flat.beta = BetaRule::Constant(0.0);
        let pop = gen_linear(&flat, 1e-12, &mut stream(3)).unwrap();
        assert!((true_qte(&pop, 0.5).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn independent_covariates_are_uncorrelated() {
        let x = equicorrelated_covariates(2000, 3, 0.0, &mut stream(4));
        let cov = crate::linalg::sample_covariance(&x);
        let se = 1.0 / (2000f64).sqrt();
        for a in 0..3 {
            for b in 0..a {
                let r = cov[(a, b)] / (cov[(a, a)] * cov[(b, b)]).sqrt();
                assert!(r.abs() < 3.0 * se, "{a},{b}: {r}");
            }
        }
        let y = equicorrelated_covariates(4000, 2, 0.5, &mut stream(4));
        let c = crate::linalg::sample_covariance(&y);
        assert!((c[(0, 1)] - 0.5).abs() < 0.05);
    }

    #[test]
    fn nonlinear_model_properties() {
        let mut cfg = linear_config();
        cfg.model = Model::Nonlinear;
        let a = gen_nonlinear(&cfg, 1.0, &mut stream(5)).unwrap();
        let b = gen_nonlinear(&cfg, 1.0, &mut stream(5)).unwrap();
        assert_eq!(a.y1(), b.y1());
        assert_eq!(a.covariates(), b.covariates());

        // exp(X_j) is lognormal with mean e^{1/2} and variance (e - 1) e.
        let x = a.covariates();
        let m = (x.nrows() * x.ncols()) as f64;
        let mean = x.iter().map(|v| v.exp()).sum::<f64>() / m;
        let e = std::f64::consts::E;
        // Coordinates within a row are correlated, so use the row count.
        let se = ((e - 1.0) * e / x.nrows() as f64).sqrt();
        assert!((mean - e.sqrt()).abs() < 3.0 * se, "{mean}");
        assert!(mean > 1.0);

        cfg.beta = BetaRule::Constant(0.0);
        let flat = gen_nonlinear(&cfg, 1.0, &mut stream(6)).unwrap();
        assert!((true_qte(&flat, 0.5).unwrap() - 5.0).abs() < 0.2);
    }

    #[test]
    fn ihdp_population_shape_and_noise() {
        let raw = synthetic_ihdp_covariates(&mut stream(7));
        assert_eq!(raw.shape(), (IHDP_ROWS, IHDP_COLUMNS));
        let sk = ihdp_skeleton(&raw, 0.0, 4.0, &mut stream(8)).unwrap();
        let pop = sk.population(IHDP_NOMINAL_VARIANCE.sqrt()).unwrap();
        assert_eq!((pop.n(), pop.k()), (746, 25));
        let resid: Vec<f64> = pop
            .y0()
            .iter()
            .zip(sk.signal())
            .map(|(y, m)| y - m)
            .collect();
        let mean = resid.iter().sum::<f64>() / 746.0;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 745.0;
        assert!((var / 3.0 - 1.0).abs() < 0.1, "{var}");
        let shifted: Vec<f64> = pop
            .y1()
            .iter()
            .zip(sk.signal())
            .map(|(y, m)| y - m)
            .collect();
        let mean1 = shifted.iter().sum::<f64>() / 746.0;
        assert!((mean1 - 4.0).abs() < 0.3);

        let short = raw.rows(0, 700).into_owned();
        assert!(matches!(
            ihdp_skeleton(&short, 0.0, 4.0, &mut stream(8)),
            Err(Error::MalformedInput(_))
        ));
    }

    #[test]
    fn ihdp_beta_frequencies() {
        let draws = draw_ihdp_beta(10_000, &mut stream(9));
        for (value, p) in IHDP_BETA_SUPPORT.iter().zip(IHDP_BETA_PROBS) {
            let freq = draws.iter().filter(|&&b| b == *value).count() as f64 / 1e4;
            let se = (p * (1.0 - p) / 1e4).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "{value}: {freq}");
        }
        assert!(draws.iter().all(|b| IHDP_BETA_SUPPORT.contains(b)));
    }
}
