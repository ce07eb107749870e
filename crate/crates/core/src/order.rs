//! Order statistics under the `inf { q : F(q) >= p }` convention.

/// Smallest rank `k` in `1..=m` with `k / m >= p`, evaluated in the same
/// floating-point arithmetic as an empirical CDF `count / m`.
pub(crate) fn lower_rank(m: usize, p: f64) -> usize {
    debug_assert!(m > 0);
    let mf = m as f64;
    let mut k = ((p * mf).ceil() as usize).clamp(1, m);
    while k > 1 && ((k - 1) as f64) / mf >= p {
        k -= 1;
    }
    while k < m && (k as f64) / mf < p {
        k += 1;
    }
    k
}

/// The `p`-quantile `inf { q : F(q) >= p }` of `values`; reorders the slice.
pub(crate) fn select_lower_quantile(values: &mut [f64], p: f64) -> f64 {
    let k = lower_rank(values.len(), p);
    let (_, v, _) = values.select_nth_unstable_by(k - 1, f64::total_cmp);
    *v
}
