//! Treatment assignment: complete randomization (CRE) and rerandomization
//! with the Mahalanobis criterion (ReM).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::limitlaw::chisq_quantile;
use crate::popmodel::Covariates;

/// Settings of one design. Complete randomization is `p = 1`, `a = +∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSpec {
    pub n: usize,
    pub n1: usize,
    pub k: usize,
    pub acceptance_probability: f64,
    pub threshold: f64,
    pub max_attempts: u64,
}

fn check_sizes(n: usize, n1: usize) -> Result<()> {
    if n < 2 || n1 == 0 || n1 >= n {
        return Err(Error::invalid(format!(
            "treated count must satisfy 1 <= n1 <= n - 1, got n = {n}, n1 = {n1}"
        )));
    }
    Ok(())
}

/// Default attempt budget `⌈50 / p⌉`.
pub fn default_max_attempts(p: f64) -> u64 {
    (50.0 / p).ceil() as u64
}

impl DesignSpec {
    pub fn new(n: usize, n1: usize, k: usize, acceptance_probability: f64) -> Result<Self> {
        check_sizes(n, n1)?;
        let threshold = threshold_from_p(k, acceptance_probability)?;
        Ok(DesignSpec {
            n,
            n1,
            k,
            acceptance_probability,
            threshold,
            max_attempts: default_max_attempts(acceptance_probability),
        })
    }

    pub fn complete(n: usize, n1: usize, k: usize) -> Result<Self> {
        Self::new(n, n1, k, 1.0)
    }

    /// A design given by its threshold; `p` is the nominal `P(χ²_K <= a)`.
    pub fn with_threshold(n: usize, n1: usize, k: usize, threshold: f64) -> Result<Self> {
        check_sizes(n, n1)?;
        if k == 0 {
            return Err(Error::invalid("covariate dimension must be positive"));
        }
        if !(threshold > 0.0) {
            return Err(Error::invalid(format!(
                "threshold must be positive, got {threshold}"
            )));
        }
        let p = if threshold.is_infinite() {
            1.0
        } else {
            crate::limitlaw::chisq_cdf(k as u32, threshold)
        };
        if !(p > 0.0) {
            return Err(Error::invalid(format!(
                "threshold {threshold} has zero acceptance probability"
            )));
        }
        Ok(DesignSpec {
            n,
            n1,
            k,
            acceptance_probability: p,
            threshold,
            max_attempts: default_max_attempts(p),
        })
    }

    pub fn with_max_attempts(mut self, max_attempts: u64) -> Result<Self> {
        if max_attempts == 0 {
            return Err(Error::invalid("attempt budget must be positive"));
        }
        self.max_attempts = max_attempts;
        Ok(self)
    }

    pub fn r1(&self) -> f64 {
        self.n1 as f64 / self.n as f64
    }

    pub fn is_complete(&self) -> bool {
        self.threshold.is_infinite()
    }
}

/// One assignment and how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentDraw {
    pub z: Vec<bool>,
    pub mahalanobis: Option<f64>,
    pub accepted: bool,
    pub attempts: u64,
}

/// Covariate geometry reused across draws: the factor of `S_xx` and the
/// whitened centered rows `w_i = L^{-1}(x_i - x̄)`.
#[derive(Debug, Clone)]
pub struct BalanceState {
    covariates: Arc<Covariates>,
    means: DVector<f64>,
    whitened: Vec<f64>,
}

impl BalanceState {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        Ok(Self::from_covariates(Arc::new(Covariates::new(x)?)))
    }

    pub fn from_covariates(covariates: Arc<Covariates>) -> Self {
        let x = covariates.matrix();
        let (n, k) = (x.nrows(), x.ncols());
        let means = DVector::from_iterator(k, x.column_iter().map(|c| c.mean()));
        let mut whitened = Vec::with_capacity(n * k);
        for i in 0..n {
            let centered = x.row(i).transpose() - &means;
            whitened.extend(covariates.factor().whiten(&centered).iter());
        }
        BalanceState {
            covariates,
            means,
            whitened,
        }
    }

    pub fn n(&self) -> usize {
        self.covariates.n()
    }

    pub fn k(&self) -> usize {
        self.covariates.k()
    }

    pub fn means(&self) -> &DVector<f64> {
        &self.means
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        self.covariates.covariance()
    }

    /// Lower Cholesky factor `L` with `L L' = S_xx`.
    pub fn factor_lower(&self) -> DMatrix<f64> {
        self.covariates.factor().lower()
    }

    pub fn covariates(&self) -> &Arc<Covariates> {
        &self.covariates
    }

    /// `M` for the units listed in `members`, which form one arm of size
    /// `members.len()`: `M = n |Σ w_i|² / (n1 n0)`.
    fn arm_mahalanobis(&self, members: &[usize], acc: &mut [f64]) -> f64 {
        let k = self.k();
        acc.iter_mut().for_each(|v| *v = 0.0);
        for &i in members {
            let row = &self.whitened[i * k..(i + 1) * k];
            for (a, w) in acc.iter_mut().zip(row) {
                *a += w;
            }
        }
        let n = self.n() as f64;
        let m = members.len() as f64;
        n * acc.iter().map(|v| v * v).sum::<f64>() / (m * (n - m))
    }

    /// `M(z)` through the cached whitened rows.
    pub fn mahalanobis_of(&self, z: &[bool]) -> Result<f64> {
        if z.len() != self.n() {
            return Err(Error::invalid(format!(
                "assignment has {} entries for {} units",
                z.len(),
                self.n()
            )));
        }
        let n1 = z.iter().filter(|&&t| t).count();
        check_sizes(z.len(), n1)?;
        // Same arm as the sampler so both routes round identically.
        let use_treated = n1 <= z.len() - n1;
        let members: Vec<usize> = (0..z.len()).filter(|&i| z[i] == use_treated).collect();
        let mut acc = vec![0.0; self.k()];
        Ok(self.arm_mahalanobis(&members, &mut acc))
    }
}

/// Moves a uniformly chosen `m`-subset of `perm` into `perm[..m]`.
fn partial_shuffle<R: Rng + ?Sized>(perm: &mut [usize], m: usize, rng: &mut R) {
    let n = perm.len();
    for i in 0..m {
        let j = rng.random_range(i..n);
        perm.swap(i, j);
    }
}

fn indicator(n: usize, members: &[usize], value: bool) -> Vec<bool> {
    let mut z = vec![!value; n];
    for &i in members {
        z[i] = value;
    }
    z
}

/// Uniform draw over all `C(n, n1)` assignments.
pub fn sample_cre<R: Rng + ?Sized>(n: usize, n1: usize, rng: &mut R) -> Result<AssignmentDraw> {
    check_sizes(n, n1)?;
    let mut perm: Vec<usize> = (0..n).collect();
    partial_shuffle(&mut perm, n1, rng);
    Ok(AssignmentDraw {
        z: indicator(n, &perm[..n1], true),
        mahalanobis: None,
        accepted: true,
        attempts: 1,
    })
}

/// `τ̂_x`: treated covariate means minus control covariate means.
pub fn covariate_mean_diff(x: &DMatrix<f64>, z: &[bool]) -> Result<DVector<f64>> {
    if z.len() != x.nrows() {
        return Err(Error::invalid(format!(
            "assignment has {} entries for {} rows",
            z.len(),
            x.nrows()
        )));
    }
    let n1 = z.iter().filter(|&&t| t).count();
    let n0 = z.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::invalid("both arms must be nonempty"));
    }
    let k = x.ncols();
    let mut treated = DVector::zeros(k);
    let mut control = DVector::zeros(k);
    for (i, &t) in z.iter().enumerate() {
        if t {
            treated += x.row(i).transpose();
        } else {
            control += x.row(i).transpose();
        }
    }
    Ok(treated / n1 as f64 - control / n0 as f64)
}

/// `M = n r1 r0 τ̂_x' S_xx^{-1} τ̂_x`.
pub fn mahalanobis(state: &BalanceState, tau_x: &DVector<f64>, n: usize, r1: f64) -> Result<f64> {
    if tau_x.len() != state.k() {
        return Err(Error::invalid(format!(
            "mean difference has {} entries for {} covariates",
            tau_x.len(),
            state.k()
        )));
    }
    crate::popmodel::check_fraction(r1)?;
    let form = state.covariates.factor().quad_form(tau_x);
    Ok(n as f64 * r1 * (1.0 - r1) * form)
}

/// `a` with `P(χ²_K <= a) = p`; `+∞` for `p = 1`.
pub fn threshold_from_p(k: usize, p: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("covariate dimension must be positive"));
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "acceptance probability must lie in (0, 1], got {p}"
        )));
    }
    chisq_quantile(k as u32, p)
}

/// Draws complete randomizations until `M <= a`; the result is uniform over
/// the accepted set.
pub fn sample_rem<R: Rng + ?Sized>(
    spec: &DesignSpec,
    state: &BalanceState,
    rng: &mut R,
) -> Result<AssignmentDraw> {
    check_sizes(spec.n, spec.n1)?;
    if spec.n != state.n() || spec.k != state.k() {
        return Err(Error::invalid(format!(
            "design is for {}x{} covariates but the balance state holds {}x{}",
            spec.n,
            spec.k,
            state.n(),
            state.k()
        )));
    }
    let n = spec.n;
    // Shuffle the smaller arm; M is symmetric in the two arms.
    let treated_small = spec.n1 <= n - spec.n1;
    let m = if treated_small { spec.n1 } else { n - spec.n1 };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut acc = vec![0.0; state.k()];
    for attempt in 1..=spec.max_attempts {
        partial_shuffle(&mut perm, m, rng);
        let dist = state.arm_mahalanobis(&perm[..m], &mut acc);
        if dist <= spec.threshold {
            return Ok(AssignmentDraw {
                z: indicator(n, &perm[..m], treated_small),
                mahalanobis: Some(dist),
                accepted: true,
                attempts: attempt,
            });
        }
    }
    Err(Error::RejectionBudgetExhausted {
        attempts: spec.max_attempts,
    })
}

/// Draws one assignment from either design.
pub fn sample_design<R: Rng + ?Sized>(
    spec: &DesignSpec,
    state: &BalanceState,
    rng: &mut R,
) -> Result<AssignmentDraw> {
    sample_rem(spec, state, rng)
}
