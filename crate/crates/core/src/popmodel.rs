//! Finite populations and their oracle quantities.
//!
//! A [`FinitePopulation`] holds both potential outcomes for every unit, so
//! everything here is ground truth that an experimenter never observes: true
//! quantiles, the covariance structure of the quantile indicators, the true
//! asymptotic variance components and the `γ_n` diagnostic.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};
use crate::estimate::gaussian_kde;
use crate::linalg::{sample_covariance, SpdFactor, SymEigen};
use crate::order::select_lower_quantile;

/// Absolute floor for local densities; below it variance components are
/// reported as degenerate.
pub const DENSITY_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn from_index(z: u8) -> Result<Arm> {
        match z {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Treated),
            other => Err(Error::invalid(format!("arm must be 0 or 1, got {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Treated => "treated",
            Arm::Control => "control",
        }
    }
}

pub(crate) fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "quantile level must lie in (0, 1), got {alpha}"
        )))
    }
}

pub(crate) fn check_fraction(r1: f64) -> Result<()> {
    if r1 > 0.0 && r1 < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "treated fraction must lie in (0, 1), got {r1}"
        )))
    }
}

/// An `n × K` covariate matrix together with the factorization of its
/// finite-population covariance `S_xx` (divisor `n - 1`).
#[derive(Debug, Clone)]
pub struct Covariates {
    matrix: DMatrix<f64>,
    s_xx: SpdFactor,
}

impl Covariates {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() < 2 || matrix.ncols() == 0 {
            return Err(Error::invalid(format!(
                "covariate matrix must have at least two rows and one column, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariates contain non-finite values"));
        }
        let s_xx = SpdFactor::new(sample_covariance(&matrix)).ok_or(Error::DegenerateCovariates)?;
        Ok(Covariates { matrix, s_xx })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn k(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        self.s_xx.matrix()
    }

    pub(crate) fn factor(&self) -> &SpdFactor {
        &self.s_xx
    }
}

/// Potential outcomes `Y(1)`, `Y(0)` and covariates for `n` units.
#[derive(Debug, Clone)]
pub struct FinitePopulation {
    y1: Vec<f64>,
    y0: Vec<f64>,
    covariates: Arc<Covariates>,
}

impl FinitePopulation {
    pub fn new(y1: Vec<f64>, y0: Vec<f64>, covariates: DMatrix<f64>) -> Result<Self> {
        if covariates.nrows() != y1.len() {
            return Err(Error::invalid(format!(
                "population columns disagree: {} treated outcomes, {} covariate rows",
                y1.len(),
                covariates.nrows()
            )));
        }
        if covariates.nrows() < 4 {
            return Err(Error::invalid(format!(
                "population needs at least 4 units, got {}",
                covariates.nrows()
            )));
        }
        Self::with_covariates(y1, y0, Arc::new(Covariates::new(covariates)?))
    }

    /// Builds a population on an already validated covariate set.
    pub fn with_covariates(
        y1: Vec<f64>,
        y0: Vec<f64>,
        covariates: Arc<Covariates>,
    ) -> Result<Self> {
        let n = y1.len();
        if y0.len() != n || covariates.n() != n {
            return Err(Error::invalid(format!(
                "population columns disagree: {} treated outcomes, {} control outcomes, {} covariate rows",
                n,
                y0.len(),
                covariates.n()
            )));
        }
        if n < 4 {
            return Err(Error::invalid(format!(
                "population needs at least 4 units, got {n}"
            )));
        }
        if y1.iter().chain(&y0).any(|v| !v.is_finite()) {
            return Err(Error::invalid("population contains non-finite outcomes"));
        }
        Ok(FinitePopulation { y1, y0, covariates })
    }

    pub fn n(&self) -> usize {
        self.y1.len()
    }

    pub fn k(&self) -> usize {
        self.covariates.k()
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn outcomes(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::Treated => &self.y1,
            Arm::Control => &self.y0,
        }
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        self.covariates.matrix()
    }

    pub fn shared_covariates(&self) -> &Arc<Covariates> {
        &self.covariates
    }

    /// `S_xx` with divisor `n - 1`.
    pub fn covariate_covariance(&self) -> &DMatrix<f64> {
        self.covariates.covariance()
    }

    /// Observed outcomes `Z Y(1) + (1 - Z) Y(0)` under assignment `z`.
    pub fn observe(&self, z: &[bool]) -> Result<Vec<f64>> {
        if z.len() != self.n() {
            return Err(Error::invalid(format!(
                "assignment has {} entries for {} units",
                z.len(),
                self.n()
            )));
        }
        Ok(z.iter()
            .enumerate()
            .map(|(i, &t)| if t { self.y1[i] } else { self.y0[i] })
            .collect())
    }
}

/// `F_z(q) = n^{-1} Σ 1{Y_i(z) <= q}`.
pub fn population_cdf(pop: &FinitePopulation, arm: Arm, q: f64) -> f64 {
    let y = pop.outcomes(arm);
    y.iter().filter(|&&v| v <= q).count() as f64 / y.len() as f64
}

/// `q_{z,α} = inf { q : F_z(q) >= α }`.
pub fn population_quantile(pop: &FinitePopulation, arm: Arm, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    let mut y = pop.outcomes(arm).to_vec();
    Ok(select_lower_quantile(&mut y, alpha))
}

/// `τ_α = q_{1,α} - q_{0,α}`.
pub fn true_qte(pop: &FinitePopulation, alpha: f64) -> Result<f64> {
    Ok(population_quantile(pop, Arm::Treated, alpha)?
        - population_quantile(pop, Arm::Control, alpha)?)
}

/// Finite-population covariance of `u_i = (r0 1{Y_i(1) <= q1}, -r1 1{Y_i(0) <= q0}, X_i')'`.
#[derive(Debug, Clone)]
pub struct PopulationMoments {
    pub n: usize,
    pub r1: f64,
    pub q1: f64,
    pub q0: f64,
    /// `S_qq`, entries `S_{q1q1}`, `S_{q1q0}`, `S_{q0q0}`.
    pub s_qq: Matrix2<f64>,
    /// `S_qx`, 2 × K.
    pub s_qx: DMatrix<f64>,
    pub s_xx: DMatrix<f64>,
    /// `V = (n r1 r0)^{-1} S_uu`, (K+2) × (K+2).
    pub v: DMatrix<f64>,
    pub f1_at_q: f64,
    pub f0_at_q: f64,
    pub f_joint: f64,
}

impl PopulationMoments {
    pub fn r0(&self) -> f64 {
        1.0 - self.r1
    }

    pub fn k(&self) -> usize {
        self.s_xx.nrows()
    }

    pub fn s_q1x(&self) -> DVector<f64> {
        self.s_qx.row(0).transpose()
    }

    pub fn s_q0x(&self) -> DVector<f64> {
        self.s_qx.row(1).transpose()
    }
}

/// The `n × (K+2)` matrix with rows `u_i'`.
fn stacked_units(pop: &FinitePopulation, q1: f64, q0: f64, r1: f64) -> DMatrix<f64> {
    let n = pop.n();
    let k = pop.k();
    let r0 = 1.0 - r1;
    let x = pop.covariates();
    DMatrix::from_fn(n, k + 2, |i, j| match j {
        0 => {
            if pop.y1[i] <= q1 {
                r0
            } else {
                0.0
            }
        }
        1 => {
            if pop.y0[i] <= q0 {
                -r1
            } else {
                0.0
            }
        }
        _ => x[(i, j - 2)],
    })
}

pub fn covariance_blocks(pop: &FinitePopulation, alpha: f64, r1: f64) -> Result<PopulationMoments> {
    check_fraction(r1)?;
    let q1 = population_quantile(pop, Arm::Treated, alpha)?;
    let q0 = population_quantile(pop, Arm::Control, alpha)?;
    let n = pop.n();
    let u = stacked_units(pop, q1, q0, r1);
    let s_uu = sample_covariance(&u);
    let k = pop.k();

    let s_qq = Matrix2::new(s_uu[(0, 0)], s_uu[(0, 1)], s_uu[(1, 0)], s_uu[(1, 1)]);
    let s_qx = s_uu.view((0, 2), (2, k)).into_owned();
    let s_xx = s_uu.view((2, 2), (k, k)).into_owned();
    if SymEigen::positive_definite(&s_xx).is_none() {
        return Err(Error::DegenerateCovariates);
    }
    let r0 = 1.0 - r1;
    let v = &s_uu / (n as f64 * r1 * r0);

    let joint = pop
        .y1
        .iter()
        .zip(&pop.y0)
        .filter(|(&a, &b)| a <= q1 && b <= q0)
        .count() as f64
        / n as f64;

    Ok(PopulationMoments {
        n,
        r1,
        q1,
        q0,
        s_qq,
        s_qx,
        s_xx,
        v,
        f1_at_q: population_cdf(pop, Arm::Treated, q1),
        f0_at_q: population_cdf(pop, Arm::Control, q0),
        f_joint: joint,
    })
}

/// `R²_q` (2 × 2) and the per-arm `(R²_{q1}, R²_{q0})`.
#[derive(Debug, Clone, Copy)]
pub struct SquaredCorrelations {
    pub matrix: Matrix2<f64>,
    pub treated: f64,
    pub control: f64,
}

pub fn squared_correlations(moments: &PopulationMoments) -> Result<SquaredCorrelations> {
    let s_xx = SpdFactor::new(moments.s_xx.clone()).ok_or(Error::DegenerateCovariates)?;
    let s_qq = DMatrix::from_iterator(2, 2, moments.s_qq.iter().copied());
    let root = SymEigen::positive_definite(&s_qq)
        .ok_or_else(|| Error::DegenerateIndicator("S_qq is singular".into()))?
        .inv_sqrt();
    let rows = [moments.s_q1x(), moments.s_q0x()];
    let proj = DMatrix::from_fn(2, 2, |i, j| s_xx.bilinear(&rows[i], &rows[j]));
    let r2 = &root * proj * &root;
    let per_arm = |i: usize| {
        let denom = moments.s_qq[(i, i)];
        if denom > 0.0 {
            Ok((s_xx.bilinear(&rows[i], &rows[i]) / denom).clamp(0.0, 1.0))
        } else {
            Err(Error::DegenerateIndicator(format!(
                "{} indicator is constant",
                if i == 0 { "treated" } else { "control" }
            )))
        }
    };
    Ok(SquaredCorrelations {
        matrix: Matrix2::new(
            r2[(0, 0)],
            0.5 * (r2[(0, 1)] + r2[(1, 0)]),
            0.5 * (r2[(0, 1)] + r2[(1, 0)]),
            r2[(1, 1)],
        ),
        treated: per_arm(0)?,
        control: per_arm(1)?,
    })
}

/// Full-population Gaussian kernel density of each arm at its `α`-quantile.
pub fn oracle_densities(pop: &FinitePopulation, alpha: f64, bandwidth: f64) -> Result<(f64, f64)> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let q1 = population_quantile(pop, Arm::Treated, alpha)?;
    let q0 = population_quantile(pop, Arm::Control, alpha)?;
    Ok((
        gaussian_kde(&pop.y1, q1, bandwidth),
        gaussian_kde(&pop.y0, q0, bandwidth),
    ))
}

/// Default bandwidth `n^{-1/3}`.
pub fn default_bandwidth(n: usize) -> f64 {
    (n as f64).powf(-1.0 / 3.0)
}

/// True asymptotic variance components and their conservative bounds.
#[derive(Debug, Clone)]
pub struct OracleLaw {
    /// Gaussian-part variance `A_n = C_n - B_n`.
    pub a: f64,
    /// Truncated-part variance `B_n`.
    pub b: f64,
    /// Total asymptotic variance `C_n` (uses the true joint CDF term).
    pub c: f64,
    pub a_tilde: f64,
    pub c_tilde: f64,
    /// `Ṽ_qq = c' Λ^{1/2} V_qq Λ^{1/2} c`, so that `C_n = n Ṽ_qq`.
    pub v_tilde_qq: f64,
    pub r2_tilde: f64,
    /// `None` when `S_qq` is singular (for example identical arms).
    pub r2_matrix: Option<Matrix2<f64>>,
    pub r2_z: Option<(f64, f64)>,
    pub f1: f64,
    pub f0: f64,
    pub moments: PopulationMoments,
}

pub fn oracle_variance_components(
    pop: &FinitePopulation,
    alpha: f64,
    r1: f64,
    bandwidth: f64,
) -> Result<OracleLaw> {
    let moments = covariance_blocks(pop, alpha, r1)?;
    let (f1, f0) = oracle_densities(pop, alpha, bandwidth)?;
    for (arm, f) in [(Arm::Treated, f1), (Arm::Control, f0)] {
        if !(f >= DENSITY_FLOOR) {
            return Err(Error::DegenerateDensity {
                arm: arm.name(),
                value: f,
                floor: DENSITY_FLOOR,
            });
        }
    }
    let r0 = 1.0 - r1;
    let n = moments.n as f64;
    let s_xx = SpdFactor::new(moments.s_xx.clone()).ok_or(Error::DegenerateCovariates)?;
    let (s11, s10, s00) = (
        moments.s_qq[(0, 0)],
        moments.s_qq[(0, 1)],
        moments.s_qq[(1, 1)],
    );

    // B_n = (r1 r0)^{-1} |S_q1x / f1 - S_q0x / f0|²_{S_xx^{-1}}
    let contrast = moments.s_q1x() / f1 - moments.s_q0x() / f0;
    let b = s_xx.quad_form(&contrast) / (r1 * r0);
    let direct = s11 / (f1 * f1) + s00 / (f0 * f0);
    let c = (direct - 2.0 * s10 / (f1 * f0)) / (r1 * r0);
    let cross_bound = ((r1 / r0) * s11).min((r0 / r1) * s00);
    let c_tilde = (direct + 2.0 * cross_bound / (f1 * f0)) / (r1 * r0);

    // Ratio definition of R̃² on the V scale.
    let weights = DVector::from_vec(vec![1.0 / f1, -1.0 / f0]);
    let k = moments.k();
    let v_qq = moments.v.view((0, 0), (2, 2)).into_owned();
    let v_qx = moments.v.view((0, 2), (2, k)).into_owned();
    let v_xx = SpdFactor::new(moments.v.view((2, 2), (k, k)).into_owned())
        .ok_or(Error::DegenerateCovariates)?;
    let v_tilde_qq = weights.dot(&(&v_qq * &weights));
    let explained = v_xx.quad_form(&(v_qx.transpose() * &weights));
    let r2_tilde = if v_tilde_qq > 0.0 {
        explained / v_tilde_qq
    } else {
        0.0
    };

    let (r2_matrix, r2_z) = match squared_correlations(&moments) {
        Ok(sc) => (Some(sc.matrix), Some((sc.treated, sc.control))),
        Err(Error::DegenerateIndicator(_)) => (None, None),
        Err(e) => return Err(e),
    };
    debug_assert!((c - n * v_tilde_qq).abs() <= 1e-8 * c.abs().max(1.0));

    Ok(OracleLaw {
        a: c - b,
        b,
        c,
        a_tilde: c_tilde - b,
        c_tilde,
        v_tilde_qq,
        r2_tilde,
        r2_matrix,
        r2_z,
        f1,
        f0,
        moments,
    })
}

/// `γ_n`: normalized third moment of the standardized `u_i`; `+∞` when the
/// design or `S_uu` is degenerate.
pub fn gamma_diagnostic(pop: &FinitePopulation, alpha: f64, r1: f64) -> f64 {
    if !(r1 > 0.0 && r1 < 1.0) {
        return f64::INFINITY;
    }
    let (q1, q0) = match (
        population_quantile(pop, Arm::Treated, alpha),
        population_quantile(pop, Arm::Control, alpha),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return f64::INFINITY,
    };
    let u = stacked_units(pop, q1, q0, r1);
    gamma_from_units(&u, r1)
}

/// `γ_n` computed from the rows of an arbitrary `n × d` matrix, with
/// `(K + 2)` replaced by `d`.
pub(crate) fn gamma_from_units(u: &DMatrix<f64>, r1: f64) -> f64 {
    let n = u.nrows();
    let d = u.ncols();
    let s_uu = sample_covariance(u);
    let Some(eig) = SymEigen::positive_definite(&s_uu) else {
        return f64::INFINITY;
    };
    let means = crate::linalg::column_means(u);
    // Rows expressed in the eigenbasis: |S^{-1/2} v|² = Σ (e_k'v)² / λ_k.
    let mut third = 0.0;
    for i in 0..n {
        let dev = u.row(i).transpose() - &means;
        let coords = eig.vectors.transpose() * dev;
        let norm_sq: f64 = coords
            .iter()
            .zip(eig.values.iter())
            .map(|(c, l)| c * c / l)
            .sum();
        third += norm_sq.powf(1.5);
    }
    let r0 = 1.0 - r1;
    (d as f64).powf(0.25) / (n as f64 * r1 * r0).sqrt() * third / n as f64
}
