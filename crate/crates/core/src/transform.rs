//! Time-change maps of the reduced spacings process.
//!
//! `psi(s) = H_k(mu H_k^{-1}(s))` absorbs the random normalizer and
//! `phi(s) = H_k'(x) x` at `x = H_k^{-1}(s)` is its first-order term in `mu`.
//!
//! Both increment functions are monotone in `s`: `d psi / ds = mu^k e^{(1-mu)x}`
//! is monotone in `x`, and `d phi / ds = k - x` is decreasing. The supremum of
//! an increment over `s` is therefore attained at `s = 0` or `s = 1 - h`, and
//! only those two endpoints are evaluated for every `h` on the grid. All
//! endpoint values are computed as logarithms so that bandwidths far below the
//! double range stay meaningful.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gamma::{self, GammaOrder};
use crate::spacings;

/// Number of log-spaced bandwidths on the `h` grid.
pub const H_GRID_POINTS: usize = 256;
/// The grid spans `[a / H_GRID_SPAN, a]`.
pub const H_GRID_SPAN: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiMap {
    pub k: u32,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiMap {
    pub k: u32,
}

impl PsiMap {
    pub fn new(k: u32, mu: f64) -> Result<Self> {
        GammaOrder::new(k)?;
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::domain(format!(
                "normalizer must be positive, got {mu}"
            )));
        }
        Ok(PsiMap { k, mu })
    }

    fn order(&self) -> GammaOrder {
        GammaOrder::new(self.k).expect("validated at construction")
    }
}

impl PhiMap {
    pub fn new(k: u32) -> Result<Self> {
        GammaOrder::new(k)?;
        Ok(PhiMap { k })
    }

    fn order(&self) -> GammaOrder {
        GammaOrder::new(self.k).expect("validated at construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    /// `s = 0`
    Left,
    /// `s = 1 - h`
    Right,
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Endpoint::Left => "left",
            Endpoint::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    /// `psi` increments at fixed `k`.
    A1,
    /// `phi` increments at fixed `k`.
    A2,
    /// `psi` increments with `k` growing and `a <= t_k(delta)`.
    A3,
    /// `phi` increments with `k` growing and `a <= t_k(delta)`.
    A4,
    /// Deep upper quantile against `ln(1/s)`.
    P1,
}

impl std::str::FromStr for Lemma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a1" => Ok(Lemma::A1),
            "a2" => Ok(Lemma::A2),
            "a3" => Ok(Lemma::A3),
            "a4" => Ok(Lemma::A4),
            "p1" => Ok(Lemma::P1),
            other => Err(Error::domain(format!("unknown lemma {other:?}"))),
        }
    }
}

impl std::fmt::Display for Lemma {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Lemma::A1 => "a1",
            Lemma::A2 => "a2",
            Lemma::A3 => "a3",
            Lemma::A4 => "a4",
            Lemma::P1 => "p1",
        })
    }
}

/// Supremum of an increment over `0 < h <= a` and all admissible `s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementReport {
    pub lemma: Option<Lemma>,
    pub k: u32,
    /// Normalizer used by `psi`; `None` for `phi` and quantile reports.
    pub mu: Option<f64>,
    /// The bandwidth (or tail level for quantile reports); zero when below the
    /// double range, see `log_a`.
    pub a: f64,
    pub log_a: f64,
    pub sup_value: f64,
    pub log_sup: f64,
    /// `sup_value` over the lemma's scale.
    pub ratio: f64,
    pub argmax_h: f64,
    pub log_argmax_h: f64,
    pub argmax_end: Endpoint,
    /// `psi`: ratio against `a^mu (ln 1/a)^{(k-1)(1-mu)}`;
    /// `phi`: ratio against the competing scale.
    pub secondary_ratio: Option<f64>,
    /// `phi` only: `max(k a, a ln(1/a))`.
    pub competing_scale: Option<f64>,
}

fn check_log_bandwidth(log_a: f64) -> Result<()> {
    if !(log_a < 0.0) || log_a.is_nan() || log_a == f64::NEG_INFINITY {
        return Err(Error::domain(format!(
            "bandwidth must lie in (0, 1), got ln a = {log_a}"
        )));
    }
    Ok(())
}

/// `ln h_j` for the 256-point grid ending at `ln a`.
pub fn log_h_grid(log_a: f64) -> impl Iterator<Item = f64> {
    let span = H_GRID_SPAN.ln();
    let last = (H_GRID_POINTS - 1) as f64;
    (0..H_GRID_POINTS).map(move |j| {
        if j + 1 == H_GRID_POINTS {
            log_a
        } else {
            log_a - span * (1.0 - j as f64 / last)
        }
    })
}

/// `psi(s)`; the endpoints map to themselves.
pub fn psi_eval(map: &PsiMap, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::domain(format!("psi needs s in [0, 1], got {s}")));
    }
    if s == 0.0 || s == 1.0 {
        return Ok(s);
    }
    let k = map.order();
    let x = gamma::quantile(k, s)?;
    gamma::cdf(k, map.mu * x)
}

/// `phi(s)`; zero at both endpoints.
pub fn phi_eval(map: &PhiMap, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::domain(format!("phi needs s in [0, 1], got {s}")));
    }
    if s == 0.0 || s == 1.0 {
        return Ok(0.0);
    }
    let k = map.order();
    let x = gamma::quantile(k, s)?;
    Ok((gamma::log_pdf(k, x)? + x.ln()).exp())
}

/// `(ln Psi_h(0), ln Psi_h(1-h))`, where `Psi_h(s) = psi(s+h) - psi(s)`.
///
/// `Psi_h(0) = H_k(mu H_k^{-1}(h))` and
/// `Psi_h(1-h) = 1 - H_k(mu (1-H_k)^{-1}(h))`.
pub fn psi_endpoints(map: &PsiMap, log_h: f64) -> Result<(f64, f64)> {
    check_log_bandwidth(log_h)?;
    let k = map.order();
    let x_left = gamma::quantile_ln_lower(k, log_h)?;
    let x_right = gamma::quantile_ln_upper(k, log_h)?;
    let left = gamma::log_tails(k, map.mu * x_left)?.lower;
    let right = gamma::log_tails(k, map.mu * x_right)?.upper;
    Ok((left, right))
}

/// `(ln phi(h), ln phi(1-h))`; `Phi_h(0) = phi(h)` and `Phi_h(1-h) = -phi(1-h)`.
pub fn phi_endpoints(map: &PhiMap, log_h: f64) -> Result<(f64, f64)> {
    check_log_bandwidth(log_h)?;
    let k = map.order();
    let ln_phi = |x: f64| -> Result<f64> { Ok(gamma::log_pdf(k, x)? + x.ln()) };
    let left = ln_phi(gamma::quantile_ln_lower(k, log_h)?)?;
    let right = ln_phi(gamma::quantile_ln_upper(k, log_h)?)?;
    Ok((left, right))
}

struct GridSup {
    log_sup: f64,
    log_h: f64,
    end: Endpoint,
}

fn grid_sup(log_a: f64, endpoints: impl Fn(f64) -> Result<(f64, f64)>) -> Result<GridSup> {
    let mut best = GridSup {
        log_sup: f64::NEG_INFINITY,
        log_h: log_a,
        end: Endpoint::Left,
    };
    for log_h in log_h_grid(log_a) {
        let (left, right) = endpoints(log_h)?;
        if left.is_nan() || right.is_nan() {
            return Err(Error::Numeric(format!(
                "endpoint increment is NaN at ln h = {log_h}"
            )));
        }
        let (val, end) = if right > left {
            (right, Endpoint::Right)
        } else {
            (left, Endpoint::Left)
        };
        if val > best.log_sup {
            best = GridSup {
                log_sup: val,
                log_h,
                end,
            };
        }
    }
    Ok(best)
}

/// `sup |psi(s+h) - psi(s)|` over `h <= a`, with ratio against `a`.
pub fn psi_increment_sup(map: &PsiMap, a: f64) -> Result<IncrementReport> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::domain(format!(
            "bandwidth must lie in (0, 1), got {a}"
        )));
    }
    let mut report = psi_increment_sup_ln(map, a.ln())?;
    report.a = a;
    Ok(report)
}

/// As [`psi_increment_sup`], with the bandwidth given as `ln a`.
pub fn psi_increment_sup_ln(map: &PsiMap, log_a: f64) -> Result<IncrementReport> {
    check_log_bandwidth(log_a)?;
    let best = grid_sup(log_a, |lh| psi_endpoints(map, lh))?;
    let ln_inv_a = -log_a;
    let secondary_scale = map.mu * log_a + (map.k as f64 - 1.0) * (1.0 - map.mu) * ln_inv_a.ln();
    Ok(IncrementReport {
        lemma: None,
        k: map.k,
        mu: Some(map.mu),
        a: log_a.exp(),
        log_a,
        sup_value: best.log_sup.exp(),
        log_sup: best.log_sup,
        ratio: (best.log_sup - log_a).exp(),
        argmax_h: best.log_h.exp(),
        log_argmax_h: best.log_h,
        argmax_end: best.end,
        secondary_ratio: Some((best.log_sup - secondary_scale).exp()),
        competing_scale: None,
    })
}

/// `sup |phi(s+h) - phi(s)|` over `h <= a`, with ratio against `a ln(1/a)`.
pub fn phi_increment_sup(map: &PhiMap, a: f64) -> Result<IncrementReport> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::domain(format!(
            "bandwidth must lie in (0, 1), got {a}"
        )));
    }
    let mut report = phi_increment_sup_ln(map, a.ln())?;
    report.a = a;
    Ok(report)
}

/// As [`phi_increment_sup`], with the bandwidth given as `ln a`.
pub fn phi_increment_sup_ln(map: &PhiMap, log_a: f64) -> Result<IncrementReport> {
    check_log_bandwidth(log_a)?;
    if !(log_a < -1.0) {
        return Err(Error::domain(format!(
            "phi increments need a < e^-1, got ln a = {log_a}"
        )));
    }
    let best = grid_sup(log_a, |lh| phi_endpoints(map, lh))?;
    let ln_inv_a = -log_a;
    let log_scale = log_a + ln_inv_a.ln();
    let log_competing = log_a + (map.k as f64).max(ln_inv_a).ln();
    Ok(IncrementReport {
        lemma: None,
        k: map.k,
        mu: None,
        a: log_a.exp(),
        log_a,
        sup_value: best.log_sup.exp(),
        log_sup: best.log_sup,
        ratio: (best.log_sup - log_scale).exp(),
        argmax_h: best.log_h.exp(),
        log_argmax_h: best.log_h,
        argmax_end: best.end,
        secondary_ratio: Some((best.log_sup - log_competing).exp()),
        competing_scale: Some(log_competing.exp()),
    })
}

/// Where the normalizer of the `psi` map comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuSource {
    Fixed(f64),
    /// `mu` of replicate 0 of `N` simulated k-spacings.
    Simulated {
        seed: u64,
        n_spacings: usize,
    },
}

impl std::str::FromStr for MuSource {
    type Err = Error;

    /// `fixed:<value>` or `sim:<seed>:<N>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::domain(format!(
                "mu source must be fixed:<v> or sim:<seed>:<N>, got {s:?}"
            ))
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["fixed", v] => v.parse().map(MuSource::Fixed).map_err(|_| bad()),
            ["sim", seed, n] => Ok(MuSource::Simulated {
                seed: seed.parse().map_err(|_| bad())?,
                n_spacings: n.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl MuSource {
    pub fn resolve(&self, k: u32) -> Result<f64> {
        match *self {
            MuSource::Fixed(mu) => Ok(mu),
            MuSource::Simulated { seed, n_spacings } => {
                Ok(spacings::sample_spacings(k, n_spacings, seed)?.mu)
            }
        }
    }
}

/// Default `ln a` grid for a lemma when none is supplied.
///
/// Fixed-`k` lemmas use `{1e-2, 1e-4, 1e-6}`; growing-`k` lemmas use
/// `t_k(delta)/2`; the quantile check uses `s = exp(-k^delta / 2)`.
pub fn default_log_grid(lemma: Lemma, k: u32, delta: Option<f64>) -> Result<Vec<f64>> {
    match lemma {
        Lemma::A1 | Lemma::A2 => Ok([1e-2f64, 1e-4, 1e-6].iter().map(|a| a.ln()).collect()),
        Lemma::A3 | Lemma::A4 => {
            let t = gamma::tail_threshold(k, need_delta(lemma, delta)?)?;
            Ok(vec![t.log_value - std::f64::consts::LN_2])
        }
        Lemma::P1 => {
            let d = need_delta(lemma, delta)?;
            Ok(vec![-0.5 * (k as f64).powf(d)])
        }
    }
}

fn need_delta(lemma: Lemma, delta: Option<f64>) -> Result<f64> {
    delta.ok_or_else(|| Error::domain(format!("lemma {lemma} needs delta")))
}

/// One report per `(k, a)` pair.
///
/// `log_a_grid` holds `ln a` values and must be strictly decreasing; `None`
/// selects [`default_log_grid`] per `k`. For the quantile check the grid holds
/// `ln s` and the ratio is `measured_error / (ln k k^{1-delta})`.
pub fn lemma_diagnostics(
    lemma: Lemma,
    ks: &[u32],
    delta: Option<f64>,
    log_a_grid: Option<&[f64]>,
    mu_source: MuSource,
) -> Result<Vec<IncrementReport>> {
    if let Some(grid) = log_a_grid {
        if grid.is_empty() {
            return Err(Error::domain("bandwidth grid is empty"));
        }
        if grid.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::precondition(
                "bandwidth grid must be strictly decreasing",
            ));
        }
    }
    let mut out = Vec::new();
    for &k in ks {
        let grid = match log_a_grid {
            Some(g) => g.to_vec(),
            None => default_log_grid(lemma, k, delta)?,
        };
        if matches!(lemma, Lemma::A3 | Lemma::A4 | Lemma::P1) {
            let t = gamma::tail_threshold(k, need_delta(lemma, delta)?)?;
            if let Some(&la) = grid.iter().find(|&&la| la > t.log_value) {
                return Err(Error::precondition(format!(
                    "(k = {k}, a = {:e}) violates a <= t_k(delta): ln a = {la} > ln t = {}",
                    la.exp(),
                    t.log_value
                )));
            }
        }
        for &log_a in &grid {
            let mut report = match lemma {
                Lemma::A1 | Lemma::A3 => {
                    let map = PsiMap::new(k, mu_source.resolve(k)?)?;
                    psi_increment_sup_ln(&map, log_a)?
                }
                Lemma::A2 | Lemma::A4 => phi_increment_sup_ln(&PhiMap::new(k)?, log_a)?,
                Lemma::P1 => quantile_report(k, log_a, need_delta(lemma, delta)?)?,
            };
            report.lemma = Some(lemma);
            out.push(report);
        }
    }
    Ok(out)
}

fn quantile_report(k: u32, log_s: f64, delta: f64) -> Result<IncrementReport> {
    if k < 2 {
        return Err(Error::domain("quantile check needs k >= 2 (ln k scale)"));
    }
    let t = gamma::quantile_tail_approx(GammaOrder::new(k)?, log_s, delta)?;
    let kf = k as f64;
    let scale = kf.ln() * kf.powf(1.0 - delta);
    Ok(IncrementReport {
        lemma: Some(Lemma::P1),
        k,
        mu: None,
        a: log_s.exp(),
        log_a: log_s,
        sup_value: t.measured_error,
        log_sup: t.measured_error.ln(),
        ratio: t.measured_error / scale,
        argmax_h: log_s.exp(),
        log_argmax_h: log_s,
        argmax_end: Endpoint::Right,
        secondary_ratio: None,
        competing_scale: None,
    })
}

/// Sup of `|Psi_h(s)|` over a uniform `s` grid; used to check the endpoint
/// reduction.
pub fn psi_increment_on_grid(map: &PsiMap, h: f64, points: usize) -> Result<Vec<f64>> {
    let psi = |s: f64| psi_eval(map, s.clamp(0.0, 1.0));
    (0..=points)
        .map(|i| {
            let s = (1.0 - h) * i as f64 / points as f64;
            Ok(psi(s + h)? - psi(s)?)
        })
        .collect()
}

/// `Phi_h(s) = phi(s+h) - phi(s)` over a uniform `s` grid on `[0, 1-h]`.
pub fn phi_increment_on_grid(map: &PhiMap, h: f64, points: usize) -> Result<Vec<f64>> {
    let phi = |s: f64| phi_eval(map, s.clamp(0.0, 1.0));
    (0..=points)
        .map(|i| {
            let s = (1.0 - h) * i as f64 / points as f64;
            Ok(phi(s + h)? - phi(s)?)
        })
        .collect()
}
