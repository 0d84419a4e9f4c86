//! Gamma distribution with integer shape `k` and unit scale.
//!
//! With integer shape the upper tail is the finite Poisson sum
//! `Q(k, x) = e^{-x} * sum_{j<k} x^j / j!`, which lets every quantity here be
//! evaluated without continued fractions. Both tails are computed directly
//! (never as `1 - other`) and are available in log space, which is what the
//! deep-tail work of the [`transform`](crate::transform) module relies on.

use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest supported shape parameter.
pub const MAX_ORDER: u32 = 1_000_000;

/// Largest `log_value` of a [`TailThreshold`] for which `exp` is not
/// subnormal or zero.
pub const LOG_UNDERFLOW: f64 = -745.0;

const MAX_ITER: usize = 200;
const SERIES_EPS: f64 = 1e-17;
/// Convergence tolerance on `|ln F(x) - ln p|` for the quantile solvers.
const LOG_RESIDUAL_TOL: f64 = 1e-13;

static LN_FACTORIAL: OnceLock<Vec<f64>> = OnceLock::new();

/// `ln(m!)` for `0 <= m <= MAX_ORDER`, by compensated summation of logs.
pub fn ln_factorial(m: u32) -> f64 {
    let table = LN_FACTORIAL.get_or_init(|| {
        let mut table = Vec::with_capacity(MAX_ORDER as usize + 1);
        table.push(0.0);
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for j in 1..=MAX_ORDER {
            // Neumaier summation
            let term = (j as f64).ln();
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
            table.push(sum + comp);
        }
        table
    });
    table[m as usize]
}

/// Integer shape of the gamma law, `1 <= k <= MAX_ORDER`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct GammaOrder(u32);

impl GammaOrder {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 || k > MAX_ORDER {
            return Err(Error::domain(format!(
                "gamma order must lie in 1..={MAX_ORDER}, got {k}"
            )));
        }
        Ok(GammaOrder(k))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    fn kf(self) -> f64 {
        self.0 as f64
    }
}

impl std::fmt::Display for GammaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Natural logs of both tails at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTails {
    /// `ln H_k(x)`
    pub lower: f64,
    /// `ln (1 - H_k(x))`
    pub upper: f64,
}

fn check_x(x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::domain(format!(
            "gamma argument must be finite and non-negative, got {x}"
        )));
    }
    Ok(())
}

/// `ln H_k(x)` from the convergent series
/// `e^{-x} x^k / k! * (1 + x/(k+1) + x^2/((k+1)(k+2)) + ...)`.
/// Only used for `0 < x < k`, where the ratio `x/(k+m)` is below one.
fn ln_lower_series(k: GammaOrder, x: f64) -> f64 {
    let kf = k.kf();
    let lead = kf * x.ln() - x - ln_factorial(k.get());
    let (mut sum, mut term) = (1.0f64, 1.0f64);
    let mut m = 1.0;
    loop {
        term *= x / (kf + m);
        sum += term;
        if term <= sum * SERIES_EPS {
            break;
        }
        m += 1.0;
    }
    lead + sum.ln()
}

/// `ln (1 - H_k(x))` from the finite sum
/// `e^{-x} x^{k-1} / (k-1)! * (1 + (k-1)/x + (k-1)(k-2)/x^2 + ... )`.
///
/// The bracket is accumulated with running rescaling so that `x` well below
/// `k` (large intermediate terms) does not overflow.
fn ln_upper_sum(k: GammaOrder, x: f64) -> f64 {
    let km1 = k.get() - 1;
    let lead = km1 as f64 * x.ln() - x - ln_factorial(km1);
    let (mut sum, mut term, mut scale) = (1.0f64, 1.0f64, 0.0f64);
    for j in 1..=km1 {
        term *= (k.get() - j) as f64 / x;
        sum += term;
        if sum > 1e280 {
            scale += sum.ln();
            term /= sum;
            sum = 1.0;
        }
        // terms decrease once j > k - x
        if (k.get() - j) as f64 <= x && term <= sum * SERIES_EPS {
            break;
        }
    }
    lead + scale + sum.ln()
}

/// Log of both tails of `H_k` at `x`, each with full relative precision.
pub fn log_tails(k: GammaOrder, x: f64) -> Result<LogTails> {
    check_x(x)?;
    if x == 0.0 {
        return Ok(LogTails {
            lower: f64::NEG_INFINITY,
            upper: 0.0,
        });
    }
    let kf = k.kf();
    if x >= kf {
        // median < k, so the upper tail is the small one
        let upper = ln_upper_sum(k, x);
        let lower = (-upper.exp_m1()).ln();
        Ok(LogTails { lower, upper })
    } else {
        let lower = ln_lower_series(k, x);
        let upper = if lower <= -std::f64::consts::LN_2 {
            (-lower.exp()).ln_1p()
        } else {
            ln_upper_sum(k, x)
        };
        Ok(LogTails { lower, upper })
    }
}

/// `H_k(x)`, the gamma(k, 1) distribution function.
pub fn cdf(k: GammaOrder, x: f64) -> Result<f64> {
    Ok(log_tails(k, x)?.lower.exp())
}

/// `1 - H_k(x)`, computed tail-first.
pub fn survival(k: GammaOrder, x: f64) -> Result<f64> {
    Ok(log_tails(k, x)?.upper.exp())
}

/// `ln (1 - H_k(x))`, finite far below the double underflow threshold.
pub fn log_survival(k: GammaOrder, x: f64) -> Result<f64> {
    Ok(log_tails(k, x)?.upper)
}

pub fn log_cdf(k: GammaOrder, x: f64) -> Result<f64> {
    Ok(log_tails(k, x)?.lower)
}

/// `ln H_k'(x) = (k-1) ln x - x - ln (k-1)!`.
pub fn log_pdf(k: GammaOrder, x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::domain(format!(
            "gamma density needs a finite positive argument, got {x}"
        )));
    }
    let km1 = k.get() - 1;
    Ok(km1 as f64 * x.ln() - x - ln_factorial(km1))
}

/// Density `x^{k-1} e^{-x} / (k-1)!`; underflows to zero quietly.
pub fn pdf(k: GammaOrder, x: f64) -> Result<f64> {
    Ok(log_pdf(k, x)?.exp())
}

/// Safeguarded Newton iteration on a log-tail.
///
/// `f` returns `(residual, derivative)` of `ln F(x) - ln p`; the iterate is
/// kept inside the bracket `[lo, hi]` where the residual changes sign and a
/// bisection step replaces any Newton step that leaves it.
fn safeguarded_newton(
    mut lo: f64,
    mut hi: f64,
    x0: f64,
    increasing: bool,
    f: impl Fn(f64) -> Result<(f64, f64)>,
) -> Result<f64> {
    let mut x = x0.clamp(lo, hi);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..MAX_ITER {
        let (res, slope) = f(x)?;
        if res.abs() <= LOG_RESIDUAL_TOL {
            return Ok(x);
        }
        if (res < 0.0) == increasing {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            // bracket collapsed to a few ulps; x is the closest double
            return Ok(x);
        }
        let step = x - res / slope;
        x = if step.is_finite() && step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Numeric(format!(
        "gamma quantile did not converge in {MAX_ITER} iterations (bracket [{lo}, {hi}])"
    )))
}

/// Solves `ln H_k(x) = ln_p` for `ln_p <= ln 1/2`.
fn solve_lower(k: GammaOrder, ln_p: f64) -> Result<f64> {
    let kf = k.kf();
    // H_k(x) ~ x^k / k! near zero
    let x0 = ((ln_factorial(k.get()) + ln_p) / kf).exp();
    safeguarded_newton(0.0, kf, x0, true, |x| {
        let lower = log_tails(k, x)?.lower;
        let slope = (log_pdf(k, x)? - lower).exp();
        Ok((lower - ln_p, slope))
    })
}

/// Solves `ln (1 - H_k(x)) = ln_q` for `ln_q < ln 1/2`.
fn solve_upper(k: GammaOrder, ln_q: f64) -> Result<f64> {
    let kf = k.kf();
    let big_l = -ln_q;
    let guess = big_l + (kf - 1.0) * big_l.ln() - ln_factorial(k.get() - 1);
    let x0 = guess.max(kf);
    let mut hi = x0.max(1.0);
    while log_tails(k, hi)?.upper > ln_q {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numeric(format!(
                "no finite upper bracket for ln q = {ln_q}"
            )));
        }
    }
    safeguarded_newton(0.0, hi, x0, false, |x| {
        let upper = log_tails(k, x)?.upper;
        let slope = -(log_pdf(k, x)? - upper).exp();
        Ok((upper - ln_q, slope))
    })
}

/// Quantile from the log of a lower-tail probability, `ln_p < 0`.
pub fn quantile_ln_lower(k: GammaOrder, ln_p: f64) -> Result<f64> {
    if !(ln_p < 0.0) {
        return Err(Error::domain(format!(
            "log probability must be negative, got {ln_p}"
        )));
    }
    if ln_p == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if ln_p <= -std::f64::consts::LN_2 {
        solve_lower(k, ln_p)
    } else {
        solve_upper(k, (-ln_p.exp_m1()).ln())
    }
}

/// Inverse survival: `x` with `ln (1 - H_k(x)) = ln_q`, `ln_q < 0`.
///
/// Works for upper-tail probabilities far below the smallest double.
pub fn quantile_ln_upper(k: GammaOrder, ln_q: f64) -> Result<f64> {
    if !(ln_q < 0.0) || ln_q == f64::NEG_INFINITY {
        return Err(Error::domain(format!(
            "log tail probability must be finite and negative, got {ln_q}"
        )));
    }
    if ln_q < -std::f64::consts::LN_2 {
        solve_upper(k, ln_q)
    } else {
        solve_lower(k, (-ln_q.exp_m1()).ln())
    }
}

/// `H_k^{-1}(s)` for `0 < s < 1`.
pub fn quantile(k: GammaOrder, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::domain(format!(
            "quantile level must lie in (0, 1), got {s}"
        )));
    }
    if s <= 0.5 {
        solve_lower(k, s.ln())
    } else {
        // exact for s >= 1/2
        solve_upper(k, (1.0 - s).ln())
    }
}

/// Bracket `pdf(k,x) <= 1 - H_k(x) <= pdf(k,x) / (1 - k/x)`, valid for `x > k`.
pub fn tail_bounds(k: GammaOrder, x: f64) -> Result<(f64, f64)> {
    let (lo, hi) = log_tail_bounds(k, x)?;
    Ok((lo.exp(), hi.exp()))
}

pub fn log_tail_bounds(k: GammaOrder, x: f64) -> Result<(f64, f64)> {
    if !x.is_finite() || x <= k.kf() {
        return Err(Error::domain(format!(
            "tail bounds need x > k = {k}, got {x}"
        )));
    }
    let lower = log_pdf(k, x)?;
    Ok((lower, lower - (-k.kf() / x).ln_1p()))
}

/// `t_k(delta) = k^{k(delta-2)} exp(-k^delta / 2)`, held in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailThreshold {
    pub k: u32,
    pub delta: f64,
    pub log_value: f64,
}

impl TailThreshold {
    /// The threshold itself, or `None` when it is below the double range.
    pub fn value(&self) -> Option<f64> {
        (self.log_value > LOG_UNDERFLOW).then(|| self.log_value.exp())
    }

    pub fn is_sub_underflow(&self) -> bool {
        self.log_value <= LOG_UNDERFLOW
    }
}

pub fn tail_threshold(k: u32, delta: f64) -> Result<TailThreshold> {
    if k == 0 {
        return Err(Error::domain("tail threshold needs k >= 1"));
    }
    if !(delta > 2.0) || !delta.is_finite() {
        return Err(Error::domain(format!(
            "tail threshold needs delta > 2, got {delta}"
        )));
    }
    let kf = k as f64;
    let log_value = kf * (delta - 2.0) * kf.ln() - 0.5 * kf.powf(delta);
    Ok(TailThreshold {
        k,
        delta,
        log_value,
    })
}

/// Log-of-inverse approximation to a deep upper quantile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailApprox {
    /// `ln(1/s)`
    pub approx: f64,
    /// `H_k^{-1}(1-s)`
    pub exact: f64,
    /// `|exact / approx - 1|`
    pub measured_error: f64,
}

/// Compares `H_k^{-1}(1-s)` with `ln(1/s)` for `s = exp(ln_s) <= t_k(delta)`.
///
/// `s` is passed as a log so the check runs below the double range.
pub fn quantile_tail_approx(k: GammaOrder, ln_s: f64, delta: f64) -> Result<TailApprox> {
    let threshold = tail_threshold(k.get(), delta)?;
    if !(ln_s <= threshold.log_value) || !(ln_s < 0.0) {
        return Err(Error::precondition(format!(
            "ln s = {ln_s} exceeds ln t_{k}({delta}) = {}",
            threshold.log_value
        )));
    }
    let approx = -ln_s;
    let exact = quantile_ln_upper(k, ln_s)?;
    Ok(TailApprox {
        approx,
        exact,
        measured_error: (exact / approx - 1.0).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn g(k: u32) -> GammaOrder {
        GammaOrder::new(k).unwrap()
    }

    #[test]
    fn cdf_closed_forms() {
        assert_relative_eq!(
            cdf(g(1), 1.0).unwrap(),
            1.0 - (-1.0f64).exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            cdf(g(2), 2.0).unwrap(),
            1.0 - 3.0 * (-2.0f64).exp(),
            max_relative = 1e-14
        );
        assert_eq!(cdf(g(5), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn survival_closed_forms() {
        assert_relative_eq!(
            survival(g(1), 10.0).unwrap(),
            (-10.0f64).exp(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            survival(g(2), 50.0).unwrap(),
            51.0 * (-50.0f64).exp(),
            max_relative = 1e-13
        );
        let s = survival(g(8), 90.5).unwrap();
        let (lo, hi) = tail_bounds(g(8), 90.5).unwrap();
        assert!(lo <= s && s <= hi);
    }

    #[test]
    fn survival_matches_poisson_sum_in_linear_space() {
        // direct e^{-x} sum_{j<k} x^j/j! as an independent route
        for &k in &[1u32, 3, 7, 15] {
            for &x in &[0.3f64, 2.0, 9.5, 24.0] {
                let mut term = f64::exp(-x);
                let mut sum = term;
                for j in 1..k {
                    term *= x / j as f64;
                    sum += term;
                }
                assert_relative_eq!(survival(g(k), x).unwrap(), sum, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn pdf_examples() {
        assert_relative_eq!(
            pdf(g(1), 0.5).unwrap(),
            (-0.5f64).exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            pdf(g(2), 1.0).unwrap(),
            (-1.0f64).exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            pdf(g(3), 2.0).unwrap(),
            2.0 * (-2.0f64).exp(),
            max_relative = 1e-14
        );
        assert_eq!(pdf(g(3), 1e4).unwrap(), 0.0);
        assert!(pdf(g(2), 0.0).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_relative_eq!(
            quantile(g(1), 0.5).unwrap(),
            std::f64::consts::LN_2,
            max_relative = 1e-13
        );
        let s = 1.0 - 3.0 * (-2.0f64).exp();
        assert_relative_eq!(quantile(g(2), s).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn quantile_k16_against_bisection() {
        let k = g(16);
        let (mut lo, mut hi) = (0.0f64, 64.0f64);
        while hi - lo > 1e-14 * hi {
            let mid = 0.5 * (lo + hi);
            if cdf(k, mid).unwrap() < 0.3 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = quantile(k, 0.3).unwrap();
        assert!((cdf(k, x).unwrap() - 0.3).abs() <= 1e-12);
        assert_relative_eq!(x, 0.5 * (lo + hi), max_relative = 1e-10);
    }

    #[test]
    fn deep_upper_quantile_in_log_space() {
        // k = 1: inverse survival is exactly -ln q
        let x = quantile_ln_upper(g(1), -1000.0).unwrap();
        assert_relative_eq!(x, 1000.0, max_relative = 1e-14);
        let x = quantile_ln_upper(g(8), -900.0).unwrap();
        assert!((log_survival(g(8), x).unwrap() + 900.0).abs() < 1e-10);
    }

    #[test]
    fn tail_bounds_examples() {
        let (lo, hi) = tail_bounds(g(1), 2.0).unwrap();
        assert_relative_eq!(lo, (-2.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(hi, 2.0 * (-2.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(survival(g(1), 2.0).unwrap(), lo, max_relative = 1e-14);

        let (lo, hi) = tail_bounds(g(2), 4.0).unwrap();
        let e4 = (-4.0f64).exp();
        assert_relative_eq!(lo, 4.0 * e4, max_relative = 1e-14);
        assert_relative_eq!(hi, 8.0 * e4, max_relative = 1e-14);
        let s = survival(g(2), 4.0).unwrap();
        assert_relative_eq!(s, 5.0 * e4, max_relative = 1e-14);

        let (lo, hi) = tail_bounds(g(8), 24.0).unwrap();
        let s = survival(g(8), 24.0).unwrap();
        assert!(lo <= s && s <= hi);
        assert!(tail_bounds(g(8), 8.0).is_err());
    }

    #[test]
    fn tail_threshold_examples() {
        let t = tail_threshold(2, 3.0).unwrap();
        assert_relative_eq!(
            t.value().unwrap(),
            4.0 * (-4.0f64).exp(),
            max_relative = 1e-14
        );
        let t = tail_threshold(1, 3.0).unwrap();
        assert_relative_eq!(t.value().unwrap(), (-0.5f64).exp(), max_relative = 1e-15);
        let t = tail_threshold(4, 2.5).unwrap();
        assert_relative_eq!(
            t.value().unwrap(),
            16.0 * (-16.0f64).exp(),
            max_relative = 1e-13
        );
        assert!(tail_threshold(3, 2.0).is_err());
        let deep = tail_threshold(40, 2.5).unwrap();
        assert!(deep.is_sub_underflow() && deep.value().is_none());
    }

    #[test]
    fn tail_approx_examples() {
        let r = quantile_tail_approx(g(1), -10.0, 2.1).unwrap();
        assert_eq!(r.approx, 10.0);
        assert!(r.measured_error < 1e-12);

        let r = quantile_tail_approx(g(2), (1e-6f64).ln(), 3.0).unwrap();
        assert_relative_eq!(r.approx, 13.815510557964274, max_relative = 1e-12);
        assert!(r.measured_error < 0.4);

        let e4 = quantile_tail_approx(g(4), -90.0, 2.5)
            .unwrap()
            .measured_error;
        let e8 = quantile_tail_approx(g(8), -90.0, 2.5)
            .unwrap()
            .measured_error;
        assert!(e8.is_finite() && e4.is_finite());

        // s = 0.5 is above every threshold here
        assert!(matches!(
            quantile_tail_approx(g(4), (0.5f64).ln(), 2.5),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn domain_errors() {
        assert!(cdf(g(2), -1.0).is_err());
        assert!(cdf(g(2), f64::NAN).is_err());
        assert!(survival(g(2), f64::INFINITY).is_err());
        assert!(quantile(g(2), 0.0).is_err());
        assert!(quantile(g(2), 1.0).is_err());
        assert!(GammaOrder::new(0).is_err());
        assert!(GammaOrder::new(MAX_ORDER + 1).is_err());
    }

    #[test]
    fn large_order_is_stable() {
        let k = g(MAX_ORDER);
        let t = log_tails(k, MAX_ORDER as f64).unwrap();
        // near the mean both tails are close to one half
        assert!((t.lower.exp() - 0.5).abs() < 0.01);
        assert!((t.lower.exp() + t.upper.exp() - 1.0).abs() < 1e-9);
    }
}
