//! Bandwidth regimes, their side conditions and the limits they predict.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gamma::{self, LOG_UNDERFLOW};
use crate::modulus::lil_normalizer;

/// Default exponent for variant I, `a_N = N^{-c}`.
pub const DEFAULT_POWER: f64 = 0.5;
/// Slope threshold for a trend call.
pub const TREND_SLOPE: f64 = 0.05;
/// Smallest `N` accepted by the condition evaluator.
pub const MIN_CONDITION_N: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Variant {
    /// `a_N = N^{-c}`, `0 < c < 1`.
    I,
    /// `a_N = c ln N / N`.
    II,
    /// `a_N = (ln N)^{-c}`.
    III,
    /// `a_N = c_N ln N / N` with `c_N -> 0`.
    IV,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "i" | "1" => Ok(Variant::I),
            "II" | "ii" | "2" => Ok(Variant::II),
            "III" | "iii" | "3" => Ok(Variant::III),
            "IV" | "iv" | "4" => Ok(Variant::IV),
            other => Err(Error::domain(format!("unknown regime {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::I => "I",
            Variant::II => "II",
            Variant::III => "III",
            Variant::IV => "IV",
        })
    }
}

/// Decay of `c_N` in variant IV.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub enum CSchedule {
    /// `c_N = 1 / ln ln N`.
    #[default]
    InvLogLog,
    /// `c_N = (ln N)^{-p}`, `0 < p < 1`.
    LogPow(f64),
}

impl FromStr for CSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "inv_loglog" {
            return Ok(CSchedule::InvLogLog);
        }
        if let Some(p) = s.strip_prefix("log_pow:") {
            let p: f64 = p
                .parse()
                .map_err(|_| Error::domain(format!("bad log_pow exponent in {s:?}")))?;
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::domain(format!(
                    "log_pow exponent must lie in (0, 1) so that c_N ln N grows, got {p}"
                )));
            }
            return Ok(CSchedule::LogPow(p));
        }
        Err(Error::domain(format!(
            "unknown c schedule {s:?}; expected inv_loglog or log_pow:<p>"
        )))
    }
}

impl fmt::Display for CSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CSchedule::InvLogLog => f.write_str("inv_loglog"),
            CSchedule::LogPow(p) => write!(f, "log_pow:{p}"),
        }
    }
}

impl CSchedule {
    pub fn value(&self, n: u64) -> f64 {
        let ln_n = (n as f64).ln();
        match *self {
            CSchedule::InvLogLog => 1.0 / ln_n.ln(),
            CSchedule::LogPow(p) => ln_n.powf(-p),
        }
    }
}

/// How `k` depends on `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KMode {
    Fixed(u32),
    /// `k(N) = max(2, floor(ln ln N) + 1)`.
    Growing,
}

impl FromStr for KMode {
    type Err = Error;

    /// `fixed:<k>` or `grow`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "grow" || s == "growing" {
            return Ok(KMode::Growing);
        }
        let k = s
            .strip_prefix("fixed:")
            .and_then(|k| k.parse::<u32>().ok())
            .ok_or_else(|| Error::domain(format!("k mode must be fixed:<k> or grow, got {s:?}")))?;
        gamma::GammaOrder::new(k)?;
        Ok(KMode::Fixed(k))
    }
}

impl fmt::Display for KMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KMode::Fixed(k) => write!(f, "fixed:{k}"),
            KMode::Growing => f.write_str("grow"),
        }
    }
}

/// `max(2, floor(ln ln N) + 1)`.
pub fn growing_k(n: u64) -> u32 {
    let ll = (n as f64).ln().ln();
    if ll.is_finite() && ll > 0.0 {
        (ll.floor() as u32 + 1).max(2)
    } else {
        2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeSpec {
    pub variant: Variant,
    /// `c` for variants I (exponent), II and III.
    pub c: f64,
    pub c_schedule: CSchedule,
    pub k_mode: KMode,
    /// Required for growing `k`.
    pub delta: Option<f64>,
}

impl RegimeSpec {
    pub fn new(
        variant: Variant,
        c: Option<f64>,
        c_schedule: Option<CSchedule>,
        k_mode: KMode,
        delta: Option<f64>,
    ) -> Result<Self> {
        let c = match variant {
            Variant::I => c.unwrap_or(DEFAULT_POWER),
            Variant::II | Variant::III => {
                c.ok_or_else(|| Error::domain(format!("regime {variant} needs c")))?
            }
            Variant::IV => c.unwrap_or(f64::NAN),
        };
        if variant != Variant::IV && !(c > 0.0 && c.is_finite()) {
            return Err(Error::domain(format!("c must be positive, got {c}")));
        }
        if variant == Variant::I && !(c < 1.0) {
            return Err(Error::domain(format!(
                "regime I needs a_N = N^-c with 0 < c < 1, got c = {c}"
            )));
        }
        if variant != Variant::IV && c_schedule.is_some() {
            return Err(Error::domain("c_schedule only applies to regime IV"));
        }
        if let Some(d) = delta {
            if !(d > 2.0 && d.is_finite()) {
                return Err(Error::domain(format!("delta must exceed 2, got {d}")));
            }
        }
        if k_mode == KMode::Growing && delta.is_none() {
            return Err(Error::domain("growing k needs delta > 2"));
        }
        Ok(RegimeSpec {
            variant,
            c,
            c_schedule: c_schedule.unwrap_or_default(),
            k_mode,
            delta,
        })
    }

    pub fn k_for(&self, n: u64) -> u32 {
        match self.k_mode {
            KMode::Fixed(k) => k,
            KMode::Growing => growing_k(n),
        }
    }

    /// `c_N` for variant IV.
    pub fn c_n(&self, n: u64) -> Option<f64> {
        (self.variant == Variant::IV).then(|| self.c_schedule.value(n))
    }
}

fn ln_n(n: u64) -> f64 {
    (n as f64).ln()
}

/// `a_N` for the regime; with growing `k` it must not exceed `t_k(delta)`.
pub fn bandwidth(spec: &RegimeSpec, n: u64) -> Result<f64> {
    if n < 3 {
        return Err(Error::domain(format!("bandwidth needs N >= 3, got {n}")));
    }
    let nf = n as f64;
    let a = match spec.variant {
        Variant::I => nf.powf(-spec.c),
        Variant::II => spec.c * ln_n(n) / nf,
        Variant::III => ln_n(n).powf(-spec.c),
        Variant::IV => spec.c_schedule.value(n) * ln_n(n) / nf,
    };
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::precondition(format!(
            "regime {} gives a_N = {a} outside (0, 1) at N = {n}",
            spec.variant
        )));
    }
    if spec.k_mode == KMode::Growing {
        let k = spec.k_for(n);
        let delta = spec.delta.expect("validated at construction");
        let t = gamma::tail_threshold(k, delta)?;
        if a.ln() > t.log_value {
            return Err(Error::precondition(format!(
                "threshold condition a_N <= t_k(delta) fails at N = {n}: a_N = {a:e}, k = {k}, ln t = {}",
                t.log_value
            )));
        }
    }
    Ok(a)
}

fn beta_g(x: f64) -> f64 {
    x * (x.ln() - 1.0)
}

/// The root `beta > 1` of `beta (ln beta - 1) = 1/c - 1`.
pub fn erdos_renyi_beta(c: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain(format!("beta+ needs c > 0, got {c}")));
    }
    let target = 1.0 / c - 1.0;
    let mut lo = 1.0 + 1e-15;
    let mut hi = 2.0f64;
    while beta_g(hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    // g'(x) = ln x
    for _ in 0..4 {
        let step = (beta_g(x) - target) / x.ln();
        let next = x - step;
        if !next.is_finite() || next <= 1.0 {
            break;
        }
        if (beta_g(next) - target).abs() > (beta_g(x) - target).abs() {
            break;
        }
        x = next;
    }
    Ok(x)
}

/// `|beta (ln beta - 1) - (1/c - 1)|`.
pub fn beta_residual(beta: f64, c: f64) -> f64 {
    (beta_g(beta) - (1.0 / c - 1.0)).abs()
}

/// `h(s) = (s/2)^{1/2} (beta+(s) - 1)`.
pub fn h_function(s: f64) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::domain(format!("h needs s > 0, got {s}")));
    }
    Ok((0.5 * s).sqrt() * (erdos_renyi_beta(s)? - 1.0))
}

/// `d_N = N^{1/2} ln(1/c_N) / ln N`.
pub fn d_scaling(n: u64, c_n: f64) -> Result<f64> {
    if n < 3 {
        return Err(Error::domain(format!("d_N needs N >= 3, got {n}")));
    }
    if !(c_n > 0.0 && c_n < 1.0) {
        return Err(Error::domain(format!("d_N needs 0 < c_N < 1, got {c_n}")));
    }
    let nf = n as f64;
    Ok(nf.sqrt() * (1.0 / c_n).ln() / nf.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Point,
    Interval,
    UpperBound,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetKind::Point => "point",
            TargetKind::Interval => "interval",
            TargetKind::UpperBound => "upper_bound",
        })
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(TargetKind::Point),
            "interval" => Ok(TargetKind::Interval),
            "upper_bound" => Ok(TargetKind::UpperBound),
            other => Err(Error::domain(format!("unknown target kind {other:?}"))),
        }
    }
}

/// Which statistic the target refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `k_N = Lambda_N / b(a_N)`.
    KN,
    /// `d_N Lambda_N`.
    DScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitTarget {
    pub kind: TargetKind,
    pub lo: f64,
    /// Equal to `lo` for a point; the bound itself for an upper bound.
    pub hi: f64,
    pub scaling: Scaling,
}

pub fn limit_target(spec: &RegimeSpec) -> Result<LimitTarget> {
    Ok(match spec.variant {
        Variant::I => LimitTarget {
            kind: TargetKind::Point,
            lo: 1.0,
            hi: 1.0,
            scaling: Scaling::KN,
        },
        Variant::II => {
            let h = h_function(spec.c)?;
            LimitTarget {
                kind: TargetKind::Point,
                lo: h,
                hi: h,
                scaling: Scaling::KN,
            }
        }
        Variant::III => LimitTarget {
            kind: TargetKind::Interval,
            lo: spec.c.sqrt(),
            hi: (1.0 + spec.c).sqrt(),
            scaling: Scaling::KN,
        },
        Variant::IV => LimitTarget {
            kind: TargetKind::UpperBound,
            lo: f64::NEG_INFINITY,
            hi: 2.0,
            scaling: Scaling::DScaled,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Condition {
    S1,
    S2,
    S3,
    Q1,
    Q3,
    Q4,
    Q5,
    K,
    Q2,
    W1,
    W2,
    W3,
}

impl Condition {
    pub const ALL: [Condition; 12] = [
        Condition::S1,
        Condition::S2,
        Condition::S3,
        Condition::Q1,
        Condition::Q3,
        Condition::Q4,
        Condition::Q5,
        Condition::K,
        Condition::Q2,
        Condition::W1,
        Condition::W2,
        Condition::W3,
    ];

    pub fn required_limit(self) -> RequiredLimit {
        match self {
            Condition::S1 | Condition::S3 | Condition::Q2 | Condition::W2 => {
                RequiredLimit::Infinity
            }
            _ => RequiredLimit::Zero,
        }
    }

    pub fn applies_to(self, spec: &RegimeSpec) -> bool {
        use Condition::*;
        let growing = spec.k_mode == KMode::Growing;
        if matches!(self, K | Q2) {
            return growing;
        }
        match spec.variant {
            Variant::I => matches!(self, S1 | S2 | S3 | Q1 | Q3 | Q4),
            Variant::II => matches!(self, Q1 | Q3 | Q4),
            Variant::III => matches!(self, S1 | S2 | Q1 | Q3 | Q4),
            Variant::IV => matches!(self, W1 | W2 | W3 | Q5 | Q1 | Q3 | Q4),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RequiredLimit {
    Zero,
    Infinity,
}

impl fmt::Display for RequiredLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RequiredLimit::Zero => "0",
            RequiredLimit::Infinity => "+inf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ConsistentTrend,
    Inconsistent,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::ConsistentTrend => "consistent-trend",
            Verdict::Inconsistent => "inconsistent",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub n_grid: Vec<u64>,
    pub values: Vec<f64>,
    /// `Q4` without the `k^{-1/2}` prefactor; `None` elsewhere.
    pub alt_values: Option<Vec<f64>>,
    pub required_limit: RequiredLimit,
    pub applicable: bool,
    /// Least-squares slope of `ln value` against `ln ln N`.
    pub slope: Option<f64>,
    pub verdict: Verdict,
}

/// Value of one condition's expression at `N`.
fn condition_value(cond: Condition, spec: &RegimeSpec, n: u64, a: f64) -> f64 {
    let nf = n as f64;
    let k = spec.k_for(n) as f64;
    let small_n = nf * k - 1.0;
    let lln = small_n.ln().ln();
    let ll_big = nf.ln().ln();
    let ln_inv_a = (1.0 / a).ln();
    let b = lil_normalizer(a).unwrap_or(f64::NAN);
    let c_n = spec.c_schedule.value(n);
    match cond {
        Condition::S1 => nf * a,
        Condition::S2 => ln_inv_a / (nf * a),
        Condition::S3 => ln_inv_a / ll_big,
        Condition::Q1 => (lln / small_n).sqrt() * ln_inv_a,
        Condition::Q3 => lln * lln / (nf * a * ln_inv_a),
        Condition::Q4 => k.powf(-0.5) * (2.0 * lln).sqrt() * b,
        Condition::Q5 => {
            a * ln_inv_a * lln.sqrt() * nf.sqrt() * (1.0 / c_n).ln() / (k.sqrt() * nf.ln())
        }
        Condition::K => k * lln / nf,
        Condition::Q2 => k,
        Condition::W1 => c_n,
        Condition::W2 => c_n * nf.ln(),
        Condition::W3 => (1.0 / c_n).ln() * ll_big / nf.ln(),
    }
}

/// Least-squares slope of `ys` on `xs`.
fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Trend verdict for `values` along `n_grid`.
pub fn trend_verdict(
    n_grid: &[u64],
    values: &[f64],
    limit: RequiredLimit,
) -> (Option<f64>, Verdict) {
    if values.len() < 2 || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return (None, Verdict::Inconclusive);
    }
    let xs: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln().ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let Some(slope) = ls_slope(&xs, &ys) else {
        return (None, Verdict::Inconclusive);
    };
    let toward = match limit {
        RequiredLimit::Zero => slope < -TREND_SLOPE,
        RequiredLimit::Infinity => slope > TREND_SLOPE,
    };
    let verdict = if toward {
        Verdict::ConsistentTrend
    } else {
        Verdict::Inconsistent
    };
    (Some(slope), verdict)
}

/// Evaluates every condition on `n_grid` and attaches trend verdicts.
///
/// Bandwidths are computed without the threshold gate so that conditions can
/// still be reported where the growing-`k` regime is violated.
pub fn check_conditions(spec: &RegimeSpec, n_grid: &[u64]) -> Result<Vec<ConditionReport>> {
    if n_grid.is_empty() {
        return Err(Error::domain("condition grid is empty"));
    }
    if let Some(&n) = n_grid.iter().find(|&&n| n < MIN_CONDITION_N) {
        return Err(Error::domain(format!(
            "condition grid needs N >= {MIN_CONDITION_N}, got {n}"
        )));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("condition grid must be strictly increasing"));
    }
    let ungated = RegimeSpec {
        k_mode: match spec.k_mode {
            KMode::Growing => KMode::Fixed(2),
            m => m,
        },
        ..*spec
    };
    let bandwidths = n_grid
        .iter()
        .map(|&n| bandwidth(&ungated, n))
        .collect::<Result<Vec<f64>>>()?;

    Ok(Condition::ALL
        .iter()
        .map(|&cond| {
            let values: Vec<f64> = n_grid
                .iter()
                .zip(&bandwidths)
                .map(|(&n, &a)| condition_value(cond, spec, n, a))
                .collect();
            let alt_values = (cond == Condition::Q4).then(|| {
                n_grid
                    .iter()
                    .zip(&values)
                    .map(|(&n, v)| v * (spec.k_for(n) as f64).sqrt())
                    .collect()
            });
            let limit = cond.required_limit();
            let (slope, verdict) = trend_verdict(n_grid, &values, limit);
            ConditionReport {
                condition: cond,
                n_grid: n_grid.to_vec(),
                values,
                alt_values,
                required_limit: limit,
                applicable: cond.applies_to(spec),
                slope,
                verdict,
            }
        })
        .collect())
}

/// True when `t_k(delta)` is representable as a double.
pub fn threshold_representable(k: u32, delta: f64) -> Result<bool> {
    Ok(gamma::tail_threshold(k, delta)?.log_value > LOG_UNDERFLOW)
}
