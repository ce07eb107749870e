//! Asymptotic laws of the QTE estimator under rerandomization.
//!
//! Under Mahalanobis rerandomization with threshold `a` on `K` covariates the
//! scaled estimator behaves like `A^{1/2} ε + B^{1/2} L_{K,a}`, where `ε` is
//! standard normal and `L_{K,a}` is the first coordinate of a `K`-dimensional
//! standard normal vector conditioned on its squared norm being at most `a`.
//! Complete randomization is the special case `a = +∞`.

mod chisq;

pub use chisq::{chisq_cdf, chisq_pdf, chisq_quantile, chisq_tails};

use rand::Rng;
use rand_distr::{Open01, StandardNormal};

use crate::error::{Error, Result};
use crate::order::select_lower_quantile;

/// Draw count used by [`mixture_quantile`] callers when nothing else is asked for.
pub const DEFAULT_MIXTURE_DRAWS: usize = 200_000;
/// Minimum draw count accepted by [`mixture_quantile`].
pub const MIN_MIXTURE_DRAWS: usize = 10_000;

fn check_threshold(a: f64) -> Result<()> {
    if a > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "threshold must be positive, got {a}"
        )))
    }
}

/// `v_{K,a} = Var(L_{K,a}) = P(χ²_{K+2} <= a) / P(χ²_K <= a)`.
///
/// For small arguments the ratio is evaluated through the incomplete-gamma
/// series `P(s+1, x) = P(s, x) - x^s e^{-x} / Γ(s+1)`, which stays accurate
/// even where both probabilities underflow.
pub fn truncated_variance(k: u32, a: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("covariate dimension must be positive"));
    }
    check_threshold(a)?;
    if a.is_infinite() {
        return Ok(1.0);
    }
    let s = 0.5 * k as f64;
    let x = 0.5 * a;
    if x < s + 1.0 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..10_000 {
            term *= x / (s + n as f64);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        Ok((sum - 1.0) / sum)
    } else {
        Ok(chisq_cdf(k + 2, a) / chisq_cdf(k, a))
    }
}

/// Percent reduction in asymptotic sampling variance, `(1 - v_{K,a}) R̃²`,
/// as a fraction.
pub fn priasv(r2_tilde: f64, k: u32, a: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r2_tilde) {
        return Err(Error::invalid(format!(
            "squared correlation must lie in [0, 1), got {r2_tilde}"
        )));
    }
    Ok((1.0 - truncated_variance(k, a)?) * r2_tilde)
}

/// Leading `dim` coordinates of `D ~ N(0, I_K)` conditioned on `|D|² <= a`.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedComponent {
    k: u32,
    threshold: f64,
    dim: usize,
    mass: f64,
}

impl TruncatedComponent {
    pub fn new(k: u32, threshold: f64, dim: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("covariate dimension must be positive"));
        }
        check_threshold(threshold)?;
        if !(dim == 1 || dim == 2) || dim > k as usize {
            return Err(Error::invalid(format!(
                "truncated component dimension must be 1 or 2 and at most K = {k}, got {dim}"
            )));
        }
        let mass = chisq_cdf(k, threshold);
        if !(mass > 0.0) {
            return Err(Error::invalid(format!(
                "threshold {threshold} leaves no probability mass for K = {k}"
            )));
        }
        Ok(TruncatedComponent {
            k,
            threshold,
            dim,
            mass,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Exact draw by radial decomposition: the squared radius is inverted
    /// from the truncated chi-square CDF and the direction is uniform on the
    /// sphere.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let u: f64 = rng.sample(Open01);
        let radius = chisq::chisq_quantile(self.k, u * self.mass)
            .expect("probability in (0, 1)")
            .sqrt();
        let mut norm_sq = 0.0;
        for slot in out.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            norm_sq += g * g;
            *slot = g;
        }
        for _ in self.dim..self.k as usize {
            let g: f64 = rng.sample(StandardNormal);
            norm_sq += g * g;
        }
        let scale = radius / norm_sq.sqrt();
        for v in out.iter_mut() {
            *v *= scale;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        out
    }

    /// First coordinate only, whatever `dim` is.
    pub fn sample_first<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        let radius = chisq::chisq_quantile(self.k, u * self.mass)
            .expect("probability in (0, 1)")
            .sqrt();
        let first: f64 = rng.sample(StandardNormal);
        let mut norm_sq = first * first;
        for _ in 1..self.k {
            let g: f64 = rng.sample(StandardNormal);
            norm_sq += g * g;
        }
        radius * first / norm_sq.sqrt()
    }
}

/// `A^{1/2} ε + B^{1/2} L_{K,a}` with `ε` independent of `L_{K,a}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureLaw {
    pub gaussian_var: f64,
    pub truncated_var: f64,
    pub k: u32,
    pub threshold: f64,
}

impl MixtureLaw {
    pub fn new(gaussian_var: f64, truncated_var: f64, k: u32, threshold: f64) -> Result<Self> {
        for (name, v) in [("A", gaussian_var), ("B", truncated_var)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "mixture component {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if k == 0 {
            return Err(Error::invalid("covariate dimension must be positive"));
        }
        check_threshold(threshold)?;
        Ok(MixtureLaw {
            gaussian_var,
            truncated_var,
            k,
            threshold,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.gaussian_var == 0.0 && self.truncated_var == 0.0
    }

    /// Exact variance `A + B v_{K,a}`.
    pub fn variance(&self) -> f64 {
        self.gaussian_var
            + self.truncated_var * truncated_variance(self.k, self.threshold).unwrap_or(f64::NAN)
    }

    pub fn sample<R: Rng + ?Sized>(&self, component: &TruncatedComponent, rng: &mut R) -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        let l = component.sample_first(rng);
        self.gaussian_var.sqrt() * eps + self.truncated_var.sqrt() * l
    }
}

/// `m` independent `(ε, L_{K,a})` pairs in draw order.
fn standard_pairs<R: Rng + ?Sized>(
    component: &TruncatedComponent,
    m: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut eps = Vec::with_capacity(m);
    let mut trunc = Vec::with_capacity(m);
    for _ in 0..m {
        eps.push(rng.sample::<f64, _>(StandardNormal));
        trunc.push(component.sample_first(rng));
    }
    (eps, trunc)
}

fn check_draws(m: usize) -> Result<()> {
    if m < MIN_MIXTURE_DRAWS {
        return Err(Error::invalid(format!(
            "mixture quantiles need at least {MIN_MIXTURE_DRAWS} draws, got {m}"
        )));
    }
    Ok(())
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "probability must lie in (0, 1), got {p}"
        )))
    }
}

/// Monte Carlo `p`-quantile of a [`MixtureLaw`]: the order statistic of rank
/// `⌈m p⌉` among `m` draws.
pub fn mixture_quantile<R: Rng + ?Sized>(
    law: &MixtureLaw,
    p: f64,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    check_probability(p)?;
    check_draws(m)?;
    if law.is_degenerate() {
        return Ok(0.0);
    }
    let component = TruncatedComponent::new(law.k, law.threshold, 1)?;
    let (eps, trunc) = standard_pairs(&component, m, rng);
    let sa = law.gaussian_var.sqrt();
    let sb = law.truncated_var.sqrt();
    let mut values: Vec<f64> = eps
        .iter()
        .zip(&trunc)
        .map(|(e, l)| sa * e + sb * l)
        .collect();
    Ok(select_lower_quantile(&mut values, p))
}

/// One draw from the limit law of `√n (τ̂ - τ)`,
/// `√n Ṽ^{1/2} (√(1 - R̃²) ε + R̃ L_{K,a})`.
pub fn sample_qte_limit<R: Rng + ?Sized>(
    v_tilde: f64,
    r2_tilde: f64,
    k: u32,
    a: f64,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(0.0..1.0).contains(&r2_tilde) {
        return Err(Error::invalid(format!(
            "squared correlation must lie in [0, 1), got {r2_tilde}"
        )));
    }
    if !(v_tilde >= 0.0) {
        return Err(Error::invalid(format!(
            "variance must be nonnegative, got {v_tilde}"
        )));
    }
    let component = TruncatedComponent::new(k, a, 1)?;
    let total = n as f64 * v_tilde;
    let law = MixtureLaw::new(total * (1.0 - r2_tilde), total * r2_tilde, k, a)?;
    Ok(law.sample(&component, rng))
}

/// Source of mixture quantiles for confidence intervals.
pub trait MixtureQuantiles {
    fn quantile(&mut self, law: &MixtureLaw, p: f64) -> Result<f64>;
}

/// Fresh Monte Carlo evaluation per request.
pub struct MonteCarloQuantiles<'r, R: Rng + ?Sized> {
    rng: &'r mut R,
    draws: usize,
}

impl<'r, R: Rng + ?Sized> MonteCarloQuantiles<'r, R> {
    pub fn new(rng: &'r mut R, draws: usize) -> Self {
        MonteCarloQuantiles { rng, draws }
    }
}

impl<R: Rng + ?Sized> MixtureQuantiles for MonteCarloQuantiles<'_, R> {
    fn quantile(&mut self, law: &MixtureLaw, p: f64) -> Result<f64> {
        mixture_quantile(law, p, self.draws, self.rng)
    }
}

/// Quantiles of the standardized mixture `√(1-ρ) ε + √ρ L_{K,a}` tabulated
/// on a uniform grid of `ρ ∈ [0, 1]` from one shared set of draws.
///
/// Because `ν_p(A, B) = √(A + B) ν_p(1 - ρ, ρ)` with `ρ = B / (A + B)`, one
/// table answers every `(A, B)` for a fixed `(K, a, p)` in O(1). Grid nodes
/// coincide with [`mixture_quantile`] evaluated on the same stream; values
/// between nodes are linearly interpolated.
#[derive(Debug, Clone)]
pub struct MixtureQuantileTable {
    k: u32,
    threshold: f64,
    level: f64,
    nodes: Vec<f64>,
}

impl MixtureQuantileTable {
    pub fn build<R: Rng + ?Sized>(
        k: u32,
        threshold: f64,
        level: f64,
        draws: usize,
        grid_points: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_probability(level)?;
        check_draws(draws)?;
        if grid_points < 2 {
            return Err(Error::invalid(
                "quantile table needs at least two grid points",
            ));
        }
        let component = TruncatedComponent::new(k, threshold, 1)?;
        let (eps, trunc) = standard_pairs(&component, draws, rng);
        let mut values = vec![0.0; draws];
        let nodes = (0..grid_points)
            .map(|i| {
                let rho = i as f64 / (grid_points - 1) as f64;
                let (sa, sb) = ((1.0 - rho).sqrt(), rho.sqrt());
                for (v, (e, l)) in values.iter_mut().zip(eps.iter().zip(&trunc)) {
                    *v = sa * e + sb * l;
                }
                select_lower_quantile(&mut values, level)
            })
            .collect();
        Ok(MixtureQuantileTable {
            k,
            threshold,
            level,
            nodes,
        })
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Interpolated quantile of the standardized mixture with weight `rho`.
    pub fn standardized(&self, rho: f64) -> f64 {
        let rho = rho.clamp(0.0, 1.0);
        let last = self.nodes.len() - 1;
        let pos = rho * last as f64;
        let i = (pos.floor() as usize).min(last - 1);
        let t = pos - i as f64;
        self.nodes[i] * (1.0 - t) + self.nodes[i + 1] * t
    }

    pub fn lookup(&self, law: &MixtureLaw) -> Result<f64> {
        let same_threshold = law.threshold == self.threshold
            || (law.threshold.is_infinite() && self.threshold.is_infinite());
        if law.k != self.k || !same_threshold {
            return Err(Error::invalid(format!(
                "quantile table built for K = {}, a = {} cannot serve K = {}, a = {}",
                self.k, self.threshold, law.k, law.threshold
            )));
        }
        let total = law.gaussian_var + law.truncated_var;
        if total == 0.0 {
            return Ok(0.0);
        }
        Ok(total.sqrt() * self.standardized(law.truncated_var / total))
    }
}

impl MixtureQuantiles for &MixtureQuantileTable {
    fn quantile(&mut self, law: &MixtureLaw, p: f64) -> Result<f64> {
        if p != self.level {
            return Err(Error::invalid(format!(
                "quantile table holds level {}, requested {p}",
                self.level
            )));
        }
        self.lookup(law)
    }
}
