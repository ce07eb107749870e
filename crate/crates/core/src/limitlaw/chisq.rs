//! Chi-square distribution numerics.
//!
//! The CDF is the regularized lower incomplete gamma function `P(k/2, x/2)`,
//! evaluated with the power series below `x < s + 1` and a modified Lentz
//! continued fraction for the upper tail above it. Both tails are returned
//! together so callers can work on whichever side keeps full precision.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const EPS: f64 = 1e-17;
const TINY: f64 = 1e-300;
const MAX_TERMS: usize = 10_000;

/// `ln Γ(x)` for `x > 0`.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete gamma functions `(P(s, x), Q(s, x))`.
pub(crate) fn incomplete_gamma(s: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    let log_prefactor = s * x.ln() - x - ln_gamma(s);
    if x < s + 1.0 {
        let mut term = 1.0 / s;
        let mut sum = term;
        for n in 1..MAX_TERMS {
            term *= x / (s + n as f64);
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        let p = (sum * log_prefactor.exp()).min(1.0);
        (p, 1.0 - p)
    } else {
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_TERMS {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        let q = (h * log_prefactor.exp()).min(1.0);
        (1.0 - q, q)
    }
}

/// `P(χ²_k <= x)`.
pub fn chisq_cdf(k: u32, x: f64) -> f64 {
    chisq_tails(k, x).0
}

/// `(P(χ²_k <= x), P(χ²_k > x))`.
pub fn chisq_tails(k: u32, x: f64) -> (f64, f64) {
    assert!(k >= 1, "chi-square degrees of freedom must be positive");
    if x.is_nan() {
        return (f64::NAN, f64::NAN);
    }
    incomplete_gamma(0.5 * k as f64, 0.5 * x)
}

pub fn chisq_pdf(k: u32, x: f64) -> f64 {
    if x <= 0.0 || x.is_infinite() {
        return 0.0;
    }
    let s = 0.5 * k as f64;
    ((s - 1.0) * x.ln() - 0.5 * x - s * std::f64::consts::LN_2 - ln_gamma(s)).exp()
}

/// Inverse of [`chisq_cdf`] for `p` in `(0, 1)`.
pub fn chisq_quantile(k: u32, p: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid(
            "chi-square degrees of freedom must be positive",
        ));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "chi-square quantile probability must lie in (0, 1), got {p}"
        )));
    }
    Ok(invert(k, p))
}

fn invert(k: u32, p: f64) -> f64 {
    let kf = k as f64;
    let s = 0.5 * kf;
    let upper = p > 0.5;
    let q = 1.0 - p;

    let mut x = initial_guess(k, p);
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;

    for _ in 0..200 {
        let (big_p, big_q) = incomplete_gamma(s, 0.5 * x);
        // f is increasing in x on both branches.
        let f = if upper { q - big_q } else { big_p - p };
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let density = chisq_pdf(k, x);
        let mut next = if density > 0.0 && density.is_finite() {
            x - f / density
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * x.max(1.0)
            };
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs()
            || (hi.is_finite() && hi - lo <= 4.0 * f64::EPSILON * hi)
        {
            return next;
        }
        x = next;
    }
    x
}

fn initial_guess(k: u32, p: f64) -> f64 {
    let kf = k as f64;
    let s = 0.5 * kf;
    // Lower-tail series: P ≈ (x/2)^s / Γ(s+1).
    let small = 2.0 * ((p.ln() + ln_gamma(s + 1.0)) / s).exp();
    // Wilson–Hilferty cube-root normal approximation.
    let h = 2.0 / (9.0 * kf);
    let z = normal_quantile_approx(p);
    let wh = kf * (1.0 - h + z * h.sqrt()).powi(3);
    if wh > 0.0 && p > 0.05 {
        wh
    } else if small.is_finite() && small > 0.0 {
        small.min(if wh > 0.0 { wh } else { f64::INFINITY })
    } else {
        kf
    }
}

/// Acklam's rational approximation to the standard normal quantile
/// (relative error about 1e-9); only used to seed Newton iterations.
pub(crate) fn normal_quantile_approx(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile_approx(1.0 - p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed form for even degrees of freedom:
    /// `1 - e^{-x/2} Σ_{j < k/2} (x/2)^j / j!`.
    fn even_df_cdf(k: u32, x: f64) -> f64 {
        let half = 0.5 * x;
        let mut term = 1.0;
        let mut sum = 0.0;
        for j in 0..(k / 2) {
            if j > 0 {
                term *= half / j as f64;
            }
            sum += term;
        }
        1.0 - (-half).exp() * sum
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0_f64;
        for n in 1..25u32 {
            if n > 1 {
                fact *= (n - 1) as f64;
            }
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "n={n}");
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn even_df_closed_forms() {
        for k in [2u32, 4, 6, 12, 30] {
            for x in [0.01, 0.5, 1.3862944, 3.0, 7.5, 20.0, 45.0] {
                let got = chisq_cdf(k, x);
                let want = even_df_cdf(k, x);
                assert!((got - want).abs() < 1e-12, "k={k} x={x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn two_df_median() {
        let a = 2.0 * std::f64::consts::LN_2;
        assert!((chisq_cdf(2, a) - 0.5).abs() < 1e-15);
        assert!((chisq_cdf(4, 1.3862944) - 0.1534264).abs() < 1e-7);
    }

    #[test]
    fn quantile_round_trips() {
        for k in [1u32, 5, 30] {
            for x in [0.5, 3.0, 20.0] {
                let p = chisq_cdf(k, x);
                let back = chisq_quantile(k, p).unwrap();
                assert!((back - x).abs() < 1e-8, "k={k} x={x} back={back}");
            }
        }
    }

    #[test]
    fn quantile_tails() {
        for k in [1u32, 2, 10, 25] {
            for p in [1e-12, 1e-6, 0.001, 0.3, 0.999, 1.0 - 1e-9] {
                let x = chisq_quantile(k, p).unwrap();
                let (lower, upper) = chisq_tails(k, x);
                if p < 0.5 {
                    assert!(((lower - p) / p).abs() < 1e-9, "k={k} p={p}");
                } else {
                    assert!(
                        ((upper - (1.0 - p)) / (1.0 - p)).abs() < 1e-6,
                        "k={k} p={p}"
                    );
                }
            }
        }
    }

    #[test]
    fn quantile_rejects_bad_probability() {
        assert!(chisq_quantile(3, 0.0).is_err());
        assert!(chisq_quantile(3, 1.0).is_err());
        assert!(chisq_quantile(3, f64::NAN).is_err());
        assert!(chisq_quantile(0, 0.5).is_err());
    }

    #[test]
    fn pdf_integrates_to_cdf_difference() {
        let k = 7;
        let (a, b) = (2.0, 9.0);
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut integral = 0.5 * (chisq_pdf(k, a) + chisq_pdf(k, b));
        for i in 1..n {
            integral += chisq_pdf(k, a + i as f64 * h);
        }
        integral *= h;
        assert!((integral - (chisq_cdf(k, b) - chisq_cdf(k, a))).abs() < 1e-7);
    }
}
