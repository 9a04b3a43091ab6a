//! Log-semiring helpers.
//!
//! `f64::NEG_INFINITY` is the additive zero: it absorbs in `log_add` and
//! annihilates under ordinary `+` (log-domain multiplication).

pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// `ln(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(sum(exp(x)))` over a slice; `LOG_ZERO` for an empty or all-zero input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    log_sum_exp_iter(xs.iter().copied())
}

pub fn log_sum_exp_iter<I>(xs: I) -> f64
where
    I: IntoIterator<Item = f64> + Clone,
{
    let m = xs.clone().into_iter().fold(LOG_ZERO, f64::max);
    if m == LOG_ZERO {
        return LOG_ZERO;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.into_iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// Log-softmax in place.
pub fn log_softmax_in_place(xs: &mut [f64]) {
    let z = log_sum_exp(xs);
    for x in xs.iter_mut() {
        *x -= z;
    }
}

/// `ln(1 - exp(x))` for `x <= 0`.
#[inline]
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `p * ln(p / q)` with the `0 ln 0 = 0` convention, on log inputs.
#[inline]
pub(crate) fn xlogx_ratio(log_p: f64, log_q: f64) -> f64 {
    if log_p == LOG_ZERO {
        0.0
    } else {
        log_p.exp() * (log_p - log_q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_handles_zero() {
        assert_eq!(log_add(LOG_ZERO, LOG_ZERO), LOG_ZERO);
        assert_eq!(log_add(LOG_ZERO, -1.5), -1.5);
        assert!((log_add(0.5f64.ln(), 0.5f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn lse_large_magnitudes() {
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), LOG_ZERO);
    }

    #[test]
    fn log1m_exp_matches_direct() {
        for &p in &[1e-12, 0.1, 0.5, 0.9, 1.0 - 1e-9] {
            let x = f64::ln(p);
            assert!((log1m_exp(x) - (1.0 - p).ln()).abs() < 1e-9);
        }
        assert_eq!(log1m_exp(0.0), LOG_ZERO);
    }
}
