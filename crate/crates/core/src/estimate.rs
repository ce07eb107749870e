//! Inference from one observed experiment.
//!
//! Only `Y_i = Z_i Y_i(1) + (1 - Z_i) Y_i(0)`, the assignment and the
//! covariates are available here. The joint distribution of the potential
//! outcomes is not identified, so the variance of the QTE estimator is bounded
//! from above and the confidence interval is conservative.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::limitlaw::{MixtureLaw, MixtureQuantiles, MonteCarloQuantiles};
use crate::order::select_lower_quantile;
use crate::popmodel::{
    check_level, default_bandwidth, Arm, Covariates, FinitePopulation, DENSITY_FLOOR,
};

/// Warning recorded when `Ĉ < B̂` forces `Â` to zero.
pub const CLAMP_WARNING: &str = "A_hat clamped to 0 because C_hat < B_hat";

/// Observed outcomes, assignment and covariates of one experiment.
#[derive(Debug, Clone)]
pub struct ObservedData {
    y: Vec<f64>,
    z: Vec<bool>,
    covariates: Arc<Covariates>,
    n1: usize,
}

impl ObservedData {
    pub fn new(y: Vec<f64>, z: Vec<bool>, covariates: DMatrix<f64>) -> Result<Self> {
        if covariates.nrows() != y.len() {
            return Err(Error::invalid(format!(
                "{} outcomes but {} covariate rows",
                y.len(),
                covariates.nrows()
            )));
        }
        Self::with_covariates(y, z, Arc::new(Covariates::new(covariates)?))
    }

    pub fn with_covariates(y: Vec<f64>, z: Vec<bool>, covariates: Arc<Covariates>) -> Result<Self> {
        let n = y.len();
        if z.len() != n || covariates.n() != n {
            return Err(Error::invalid(format!(
                "observed columns disagree: {} outcomes, {} assignments, {} covariate rows",
                n,
                z.len(),
                covariates.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "observed outcomes contain non-finite values",
            ));
        }
        let n1 = z.iter().filter(|&&t| t).count();
        if n1 < 2 || n - n1 < 2 {
            return Err(Error::invalid(format!(
                "each arm needs at least 2 units, got n1 = {n1}, n0 = {}",
                n - n1
            )));
        }
        Ok(ObservedData {
            y,
            z,
            covariates,
            n1,
        })
    }

    /// The data an experimenter sees when `z` is applied to `pop`.
    pub fn from_assignment(pop: &FinitePopulation, z: Vec<bool>) -> Result<Self> {
        let y = pop.observe(&z)?;
        Self::with_covariates(y, z, Arc::clone(pop.shared_covariates()))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.covariates.k()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.n() - self.n1
    }

    pub fn r1(&self) -> f64 {
        self.n1 as f64 / self.n() as f64
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        self.covariates.matrix()
    }

    pub fn arm_outcomes(&self, arm: Arm) -> Vec<f64> {
        let treated = arm == Arm::Treated;
        self.y
            .iter()
            .zip(&self.z)
            .filter(|(_, &t)| t == treated)
            .map(|(&v, _)| v)
            .collect()
    }

    fn arm_size(&self, arm: Arm) -> usize {
        match arm {
            Arm::Treated => self.n1(),
            Arm::Control => self.n0(),
        }
    }
}

/// `F̂_z(q)`.
pub fn arm_cdf(data: &ObservedData, arm: Arm, q: f64) -> Result<f64> {
    let y = data.arm_outcomes(arm);
    if y.is_empty() {
        return Err(Error::invalid(format!("{} arm is empty", arm.name())));
    }
    Ok(y.iter().filter(|&&v| v <= q).count() as f64 / y.len() as f64)
}

/// `q̂_{z,α} = inf { q : F̂_z(q) >= α }`.
pub fn arm_quantile(data: &ObservedData, arm: Arm, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    let mut y = data.arm_outcomes(arm);
    if y.is_empty() {
        return Err(Error::invalid(format!("{} arm is empty", arm.name())));
    }
    Ok(select_lower_quantile(&mut y, alpha))
}

/// `τ̂_α = q̂_{1,α} - q̂_{0,α}`.
pub fn qte_estimate(data: &ObservedData, alpha: f64) -> Result<f64> {
    Ok(arm_quantile(data, Arm::Treated, alpha)? - arm_quantile(data, Arm::Control, alpha)?)
}

/// Sample analogues of the indicator variances and indicator–covariate
/// covariances.
#[derive(Debug, Clone)]
pub struct CovariancePlugins {
    pub f1_at_q: f64,
    pub f0_at_q: f64,
    /// `ŝ_{q1q1}`.
    pub s1_sq: f64,
    /// `ŝ_{q0q0}`.
    pub s0_sq: f64,
    pub s_q1x: DVector<f64>,
    pub s_q0x: DVector<f64>,
    /// `L^{-1} ŝ_{xq1}` with `S_xx = L L'`.
    pub s1w: DVector<f64>,
    pub s0w: DVector<f64>,
    /// `ŝ²_{q1|x} = ŝ_{q1x} S_xx^{-1} ŝ_{xq1}`.
    pub proj1: f64,
    pub proj0: f64,
}

fn arm_indicator_covariance(data: &ObservedData, arm: Arm, q: f64) -> (f64, DVector<f64>) {
    let x = data.covariates();
    let treated = arm == Arm::Treated;
    let nz = data.arm_size(arm) as f64;
    let k = data.k();
    let mut mean = DVector::zeros(k);
    let mut hits = 0usize;
    for (i, (&y, &t)) in data.y.iter().zip(&data.z).enumerate() {
        if t == treated {
            mean += x.row(i).transpose();
            if y <= q {
                hits += 1;
            }
        }
    }
    mean /= nz;
    let f = hits as f64 / nz;
    let mut cov = DVector::zeros(k);
    for (i, (&y, &t)) in data.y.iter().zip(&data.z).enumerate() {
        if t == treated {
            let ind = if y <= q { 1.0 } else { 0.0 };
            cov += (x.row(i).transpose() - &mean) * (ind - f);
        }
    }
    (f, cov / (nz - 1.0))
}

/// Plug-in covariances at the estimated quantiles; projections use the
/// full-sample `S_xx`.
pub fn sample_covariances(
    data: &ObservedData,
    q1_hat: f64,
    q0_hat: f64,
) -> Result<CovariancePlugins> {
    let r1 = data.r1();
    let r0 = 1.0 - r1;
    let (n1, n0) = (data.n1() as f64, data.n0() as f64);
    let (f1, cov1) = arm_indicator_covariance(data, Arm::Treated, q1_hat);
    let (f0, cov0) = arm_indicator_covariance(data, Arm::Control, q0_hat);
    let s_q1x = cov1 * r0;
    let s_q0x = cov0 * -r1;
    let factor = data.covariates.factor();
    let s1w = factor.whiten(&s_q1x);
    let s0w = factor.whiten(&s_q0x);
    Ok(CovariancePlugins {
        f1_at_q: f1,
        f0_at_q: f0,
        s1_sq: n1 * r0 * r0 / (n1 - 1.0) * (f1 - f1 * f1),
        s0_sq: n0 * r1 * r1 / (n0 - 1.0) * (f0 - f0 * f0),
        proj1: s1w.norm_squared(),
        proj0: s0w.norm_squared(),
        s_q1x,
        s_q0x,
        s1w,
        s0w,
    })
}

/// Gaussian kernel estimate without argument checks.
pub(crate) fn gaussian_kde(values: &[f64], at: f64, h: f64) -> f64 {
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * values.len() as f64);
    values
        .iter()
        .map(|v| (-0.5 * ((v - at) / h).powi(2)).exp())
        .sum::<f64>()
        * norm
}

/// `n_z^{-1} Σ h^{-1} φ((Y_i - q̂) / h)`.
pub fn kde_density(values: &[f64], q_hat: f64, bandwidth: f64) -> Result<f64> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if values.is_empty() {
        return Err(Error::invalid(
            "density estimate needs at least one outcome",
        ));
    }
    Ok(gaussian_kde(values, q_hat, bandwidth))
}

/// Conservative variance estimates `Ĉ`, `B̂` and `Â = Ĉ - B̂`.
#[derive(Debug, Clone)]
pub struct VarianceBounds {
    pub c_hat: f64,
    pub b_hat: f64,
    pub a_hat: f64,
    pub a_clamped: bool,
    pub warnings: Vec<String>,
}

pub fn variance_bounds(
    components: &CovariancePlugins,
    r1: f64,
    f1_hat: f64,
    f0_hat: f64,
) -> Result<VarianceBounds> {
    crate::popmodel::check_fraction(r1)?;
    for (arm, f) in [(Arm::Treated, f1_hat), (Arm::Control, f0_hat)] {
        if !(f >= DENSITY_FLOOR && f.is_finite()) {
            return Err(Error::DegenerateDensity {
                arm: arm.name(),
                value: f,
                floor: DENSITY_FLOOR,
            });
        }
    }
    let r0 = 1.0 - r1;
    let (s1, s0) = (components.s1_sq, components.s0_sq);
    let t1 = s1 / (r1 * r0 * f1_hat * f1_hat);
    let t0 = s0 / (r1 * r0 * f0_hat * f0_hat);
    let cross = 2.0 * ((r1 / r0) * s1).min((r0 / r1) * s0) / (r1 * r0 * f1_hat * f0_hat);
    let c_hat = (t1 + t0) + cross;

    let contrast = &components.s1w / f1_hat - &components.s0w / f0_hat;
    let b_hat = contrast.norm_squared() / (r1 * r0);

    let mut warnings = Vec::new();
    let raw = c_hat - b_hat;
    let a_clamped = raw < 0.0;
    if a_clamped {
        warnings.push(CLAMP_WARNING.to_string());
    }
    Ok(VarianceBounds {
        c_hat,
        b_hat,
        a_hat: raw.max(0.0),
        a_clamped,
        warnings,
    })
}

/// `τ̂ ± n^{-1/2} ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
    pub nu: f64,
}

impl Interval {
    pub fn contains(&self, value: f64) -> bool {
        self.low <= value && value <= self.high
    }

    pub fn length(&self) -> f64 {
        self.high - self.low
    }
}

/// Confidence interval with `ν` taken from `quantiles`.
#[allow(clippy::too_many_arguments)]
pub fn confidence_interval_with(
    tau_hat: f64,
    a_hat: f64,
    b_hat: f64,
    n: usize,
    k: u32,
    threshold: f64,
    miscoverage: f64,
    quantiles: &mut dyn MixtureQuantiles,
) -> Result<Interval> {
    if !(miscoverage > 0.0 && miscoverage < 1.0) {
        return Err(Error::invalid(format!(
            "miscoverage must lie in (0, 1), got {miscoverage}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let law = MixtureLaw::new(a_hat, b_hat, k, threshold)?;
    let nu = quantiles.quantile(&law, 1.0 - 0.5 * miscoverage)?;
    let half = nu / (n as f64).sqrt();
    Ok(Interval {
        low: tau_hat - half,
        high: tau_hat + half,
        nu,
    })
}

/// Confidence interval with `ν` estimated from `m` fresh mixture draws.
#[allow(clippy::too_many_arguments)]
pub fn confidence_interval<R: Rng + ?Sized>(
    tau_hat: f64,
    a_hat: f64,
    b_hat: f64,
    n: usize,
    k: u32,
    threshold: f64,
    miscoverage: f64,
    m: usize,
    rng: &mut R,
) -> Result<Interval> {
    let mut source = MonteCarloQuantiles::new(rng, m);
    confidence_interval_with(
        tau_hat,
        a_hat,
        b_hat,
        n,
        k,
        threshold,
        miscoverage,
        &mut source,
    )
}

/// Settings for [`analyze`]. `threshold` is the rerandomization threshold of
/// the design that produced the data; pass `f64::INFINITY` for complete
/// randomization.
#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    pub quantile_level: f64,
    pub miscoverage: f64,
    pub threshold: f64,
    /// Defaults to `n^{-1/3}`.
    pub bandwidth: Option<f64>,
}

/// Everything [`analyze`] computes.
#[derive(Debug, Clone)]
pub struct QteInference {
    pub q1_hat: f64,
    pub q0_hat: f64,
    pub tau_hat: f64,
    pub s1_sq: f64,
    pub s0_sq: f64,
    pub s_q1x: DVector<f64>,
    pub s_q0x: DVector<f64>,
    pub f1_hat: f64,
    pub f0_hat: f64,
    pub c_hat: f64,
    pub b_hat: f64,
    pub a_hat: f64,
    pub a_clamped: bool,
    pub bandwidth: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub nu: f64,
    pub warnings: Vec<String>,
}

impl QteInference {
    pub fn interval(&self) -> Interval {
        Interval {
            low: self.ci_low,
            high: self.ci_high,
            nu: self.nu,
        }
    }
}

/// Point estimate, variance bounds and confidence interval in one pass.
pub fn analyze(
    data: &ObservedData,
    options: &AnalysisOptions,
    quantiles: &mut dyn MixtureQuantiles,
) -> Result<QteInference> {
    let alpha = options.quantile_level;
    let y1 = data.arm_outcomes(Arm::Treated);
    let y0 = data.arm_outcomes(Arm::Control);
    let q1_hat = arm_quantile(data, Arm::Treated, alpha)?;
    let q0_hat = arm_quantile(data, Arm::Control, alpha)?;
    let tau_hat = q1_hat - q0_hat;
    let plugins = sample_covariances(data, q1_hat, q0_hat)?;
    let bandwidth = options
        .bandwidth
        .unwrap_or_else(|| default_bandwidth(data.n()));
    let f1_hat = kde_density(&y1, q1_hat, bandwidth)?;
    let f0_hat = kde_density(&y0, q0_hat, bandwidth)?;
    let bounds = variance_bounds(&plugins, data.r1(), f1_hat, f0_hat)?;
    let ci = confidence_interval_with(
        tau_hat,
        bounds.a_hat,
        bounds.b_hat,
        data.n(),
        data.k() as u32,
        options.threshold,
        options.miscoverage,
        quantiles,
    )?;
    Ok(QteInference {
        q1_hat,
        q0_hat,
        tau_hat,
        s1_sq: plugins.s1_sq,
        s0_sq: plugins.s0_sq,
        s_q1x: plugins.s_q1x,
        s_q0x: plugins.s_q0x,
        f1_hat,
        f0_hat,
        c_hat: bounds.c_hat,
        b_hat: bounds.b_hat,
        a_hat: bounds.a_hat,
        a_clamped: bounds.a_clamped,
        bandwidth,
        ci_low: ci.low,
        ci_high: ci.high,
        nu: ci.nu,
        warnings: bounds.warnings,
    })
}
