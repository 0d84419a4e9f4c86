//! Exact oscillation modulus of a uniform-type empirical path.
//!
//! For sorted points `V_(1) <= ... <= V_(N)` in `[0, 1]` the path is
//! `R(s) = sqrt(N) (G(s) - s)` with `G` the right-continuous EDF, and the
//! increment over the half-open window `(s, s+h]` is
//! `sqrt(N) (#points in (s, s+h] / N - h)`.
//!
//! The supremum over `0 <= h <= a` splits into a positive and a negative part,
//! each reduced to finitely many window families by pushing window endpoints
//! onto sample points:
//!
//! * positive part: windows `[V_(i), V_(j)]` (left end approached from below)
//!   with span strictly below `a`, value `(j-i+1)/N - (V_(j) - V_(i))`;
//! * negative part, gap windows: open windows `(V_(i), V_(j))` with span at
//!   most `a`, value `(V_(j) - V_(i)) - (j-i-1)/N`, where the sentinels
//!   `V_(0) = 0` and `V_(N+1) = 1` cover windows touching the boundary;
//! * negative part, width-`a` windows: `a - min_s #(s, s+a] / N`, the minimum
//!   attained at `s = 0` or `s = V_(i)`.
//!
//! Both pair families are a sliding-window extremum of an affine sequence
//! (`m/N - V_(m)` or `V_(m) - m/N`) under a span constraint, so each runs in
//! `O(N)` with a monotone queue. Points equal to zero are never inside a window
//! because `s >= 0`; ties are counted with multiplicity.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest path accepted by [`brute_force_modulus`].
pub const BRUTE_FORCE_MAX_N: usize = 200;

/// Spans within this distance of the bandwidth count as equal to it, so that
/// decimal inputs such as `(i - 0.5)/100` behave as their decimal values.
pub const SPAN_TOL: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPath {
    points: Vec<f64>,
}

impl EmpiricalPath {
    /// Wraps already sorted points in `[0, 1]`.
    pub fn from_sorted(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("empirical path needs at least one point"));
        }
        if let Some(p) = points.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
            return Err(Error::domain(format!("path point {p} outside [0, 1]")));
        }
        if points.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::domain("path points are not sorted ascending"));
        }
        Ok(EmpiricalPath { points })
    }

    /// Sorts (stably) and wraps.
    pub fn from_unsorted(mut points: Vec<f64>) -> Result<Self> {
        points.sort_by(f64::total_cmp);
        Self::from_sorted(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `#{V_i <= s} / N`.
    pub fn edf(&self, s: f64) -> f64 {
        self.points.partition_point(|&v| v <= s) as f64 / self.len() as f64
    }

    /// `R(s) = sqrt(N) (G(s) - s)`.
    pub fn eval(&self, s: f64) -> f64 {
        (self.len() as f64).sqrt() * (self.edf(s) - s)
    }
}

impl From<crate::spacings::UniformizedSample> for EmpiricalPath {
    fn from(u: crate::spacings::UniformizedSample) -> Self {
        EmpiricalPath::from_sorted(u.w).expect("gamma CDF values are sorted and in [0, 1]")
    }
}

/// The window achieving the negative part of the modulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NegativeWindow {
    /// No window beats the trivial `h = 0`.
    None,
    /// Open window `(left, right)` between consecutive retained points or the
    /// boundaries 0 and 1, containing `count` points.
    Gap { left: f64, right: f64, count: usize },
    /// Width-`a` window `(start, start + a]` with the fewest points.
    Width { start: f64, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusReport {
    pub a: f64,
    pub n: usize,
    /// `Lambda_N(a)`.
    pub lambda: f64,
    /// Positive part before the `sqrt(N)` scaling.
    pub positive: f64,
    /// Negative part before the `sqrt(N)` scaling.
    pub negative: f64,
    /// 1-based `(i, j)` with `[V_(i), V_(j)]` achieving the positive part.
    pub pos_window: Option<(usize, usize)>,
    pub neg_window: NegativeWindow,
    /// `b(a) = (2 a ln ln(1/a))^{1/2}`; `None` when `a >= e^{-1}`.
    pub b_n: Option<f64>,
    /// `Lambda_N / b(a)`; `None` when the normaliser is undefined.
    pub k_n: Option<f64>,
    /// One-sided width-`a` increment, when requested.
    pub theta: Option<f64>,
}

fn check_bandwidth(a: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::domain(format!(
            "bandwidth must lie in (0, 1), got {a}"
        )));
    }
    Ok(())
}

/// `b(a) = (2 a ln ln(1/a))^{1/2}`, defined for `a < e^{-1}`.
pub fn lil_normalizer(a: f64) -> Option<f64> {
    let ll = (1.0 / a).ln().ln();
    (a > 0.0 && ll > 0.0).then(|| (2.0 * a * ll).sqrt())
}

/// `Lambda / b(a)`, or `None` when `a >= e^{-1}`.
pub fn normalized_modulus(lambda: f64, a: f64) -> Option<f64> {
    lil_normalizer(a).map(|b| lambda / b)
}

/// Positive part: `max (j-i+1)/N - (V_j - V_i)` over `V_j - V_i < a`, `V_i > 0`.
fn positive_part(v: &[f64], a: f64) -> (f64, Option<(usize, usize)>) {
    let n = v.len();
    let nf = n as f64;
    let first = v.partition_point(|&x| x <= 0.0);
    let key = |m: usize| (m + 1) as f64 / nf - v[m];
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut best = (0.0, None);
    for j in first..n {
        let kj = key(j);
        while queue.back().is_some_and(|&b| key(b) >= kj) {
            queue.pop_back();
        }
        queue.push_back(j);
        while queue
            .front()
            .is_some_and(|&f| !(v[j] - v[f] < a - SPAN_TOL))
        {
            queue.pop_front();
        }
        if let Some(&i) = queue.front() {
            let val = (j - i + 1) as f64 / nf - (v[j] - v[i]);
            if val > best.0 {
                best = (val, Some((i + 1, j + 1)));
            }
        }
    }
    best
}

/// Gap family with sentinels 0 and 1:
/// `max (u_j - u_i) - (j-i-1)/N` over `i < j`, `u_j - u_i <= a`.
fn gap_part(v: &[f64], a: f64) -> (f64, NegativeWindow) {
    let n = v.len();
    let nf = n as f64;
    let u = |m: usize| -> f64 {
        if m == 0 {
            0.0
        } else if m == n + 1 {
            1.0
        } else {
            v[m - 1]
        }
    };
    let key = |m: usize| u(m) - m as f64 / nf;
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut best = (0.0, NegativeWindow::None);
    for j in 1..=n + 1 {
        let prev = j - 1;
        let kp = key(prev);
        while queue.back().is_some_and(|&b| key(b) >= kp) {
            queue.pop_back();
        }
        queue.push_back(prev);
        let uj = u(j);
        while queue.front().is_some_and(|&f| uj - u(f) > a + SPAN_TOL) {
            queue.pop_front();
        }
        if let Some(&i) = queue.front() {
            let count = j - i - 1;
            let val = (uj - u(i)) - count as f64 / nf;
            if val > best.0 {
                best = (
                    val,
                    NegativeWindow::Gap {
                        left: u(i),
                        right: uj,
                        count,
                    },
                );
            }
        }
    }
    best
}

/// Fewest points in a window `(s, s+a]`, `s in [0, 1-a]`.
fn min_width_count(v: &[f64], a: f64) -> (usize, f64) {
    let n = v.len();
    let zeros = v.partition_point(|&x| x <= 0.0);
    let mut best = (v.partition_point(|&x| x <= a + SPAN_TOL) - zeros, 0.0);
    let mut r = 0usize;
    let mut i = 0usize;
    while i < n {
        // last index of the tie group at v[i]; s = v[i] excludes all of it
        let mut last = i;
        while last + 1 < n && v[last + 1] == v[i] {
            last += 1;
        }
        if v[i] + a > 1.0 + SPAN_TOL {
            break;
        }
        r = r.max(last + 1);
        while r < n && v[r] - v[i] <= a + SPAN_TOL {
            r += 1;
        }
        let count = r - (last + 1);
        if count < best.0 {
            best = (count, v[i]);
        }
        i = last + 1;
    }
    best
}

/// Exact `Lambda_N(a) = sup_{h<=a} sup_s |R(s+h) - R(s)|` in `O(N)`.
pub fn oscillation_modulus(path: &EmpiricalPath, a: f64) -> Result<ModulusReport> {
    check_bandwidth(a)?;
    let v = path.points();
    let nf = v.len() as f64;

    let (positive, pos_window) = positive_part(v, a);
    let (gap, gap_window) = gap_part(v, a);
    let (min_count, start) = min_width_count(v, a);
    let width = a - min_count as f64 / nf;

    let (negative, neg_window) = if width > gap && width > 0.0 {
        (
            width,
            NegativeWindow::Width {
                start,
                count: min_count,
            },
        )
    } else {
        (gap, gap_window)
    };

    let lambda = nf.sqrt() * positive.max(negative).max(0.0);
    let b_n = lil_normalizer(a);
    Ok(ModulusReport {
        a,
        n: v.len(),
        lambda,
        positive,
        negative,
        pos_window,
        neg_window,
        b_n,
        k_n: b_n.map(|b| lambda / b),
        theta: None,
    })
}

/// Largest number of points in a window `(s, s+a]`, `s in [0, 1-a]`.
pub fn max_width_count(path: &EmpiricalPath, a: f64) -> Result<usize> {
    check_bandwidth(a)?;
    let v = path.points();
    let n = v.len();
    let zeros = v.partition_point(|&x| x <= 0.0);
    // s = 0
    let mut best = v.partition_point(|&x| x <= a + SPAN_TOL) - zeros;
    // s = V_(j) - a for V_(j) >= a, window (V_(j) - a, V_(j)]
    let mut l = 0usize;
    let mut j = 0usize;
    while j < n {
        let mut last = j;
        while last + 1 < n && v[last + 1] == v[j] {
            last += 1;
        }
        if v[j] >= a {
            while v[j] - v[l] >= a - SPAN_TOL {
                l += 1;
            }
            best = best.max(last + 1 - l);
        }
        j = last + 1;
    }
    Ok(best)
}

/// `theta_N(a) = sup_{0<=s<=1-a} (R(s+a) - R(s)) = sqrt(N) (C_max/N - a)`.
pub fn one_sided_increment(path: &EmpiricalPath, a: f64) -> Result<f64> {
    let c_max = max_width_count(path, a)?;
    let nf = path.len() as f64;
    Ok(nf.sqrt() * (c_max as f64 / nf - a))
}

/// Modulus, normalisation and one-sided increment in one report.
pub fn analyze(path: &EmpiricalPath, a: f64) -> Result<ModulusReport> {
    let mut report = oscillation_modulus(path, a)?;
    report.theta = Some(one_sided_increment(path, a)?);
    Ok(report)
}

/// Result of the exhaustive test oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForce {
    /// Exact `Lambda_N(a)`.
    pub lambda: f64,
    /// Largest `|R(t) - R(s)|` over grid pairs; a lower bound for `lambda`.
    pub grid_lower_bound: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Edge {
    /// The endpoint itself is in the window.
    Closed,
    /// The endpoint is excluded.
    Open,
}

/// A candidate window end `base + offset` with `offset` in `{0, a, -a}`.
///
/// Comparisons against a point `q` are made on `q - base` versus `offset`, so
/// a span that equals `a` up to [`SPAN_TOL`] is treated exactly as the fast
/// path treats it.
#[derive(Clone, Copy)]
struct End {
    base: f64,
    offset: f64,
}

/// `lhs > rhs`, with the span tolerance when `rhs` involves the bandwidth.
fn gt(lhs: f64, rhs: f64) -> bool {
    if rhs == 0.0 {
        lhs > 0.0
    } else {
        lhs > rhs + SPAN_TOL
    }
}

/// `lhs >= rhs`, with the span tolerance when `rhs` involves the bandwidth.
fn ge(lhs: f64, rhs: f64) -> bool {
    if rhs == 0.0 {
        lhs >= 0.0
    } else {
        lhs >= rhs - SPAN_TOL
    }
}

/// Exhaustive `O(N^2)` oracle for [`oscillation_modulus`].
///
/// Every window is described by a left end `x` and right end `y` together
/// with whether each end is included; the supremum of `|count/N - (y - x)|`
/// is attained (as a limit) at `x` in `{0, 1-a, V_i, V_i - a}` and `y` in
/// `{1, a, V_j, V_j + a}`. A window closed at `x` is the limit of `(s, ...]`
/// with `s` increasing to `x`, so it needs `x > 0`; a window closed at both
/// ends has length strictly more than `y - x`, so it needs `y - x < a`.
pub fn brute_force_modulus(path: &EmpiricalPath, a: f64) -> Result<BruteForce> {
    check_bandwidth(a)?;
    let v = path.points();
    let n = v.len();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::Resource(format!(
            "brute force oracle limited to N <= {BRUTE_FORCE_MAX_N}, got {n}"
        )));
    }
    let nf = n as f64;
    let end = |base, offset| End { base, offset };
    let mut xs = vec![end(0.0, 0.0), end(1.0, -a)];
    let mut ys = vec![end(1.0, 0.0), end(0.0, a)];
    for &p in v {
        xs.push(end(p, 0.0));
        xs.push(end(p, -a));
        ys.push(end(p, 0.0));
        ys.push(end(p, a));
    }
    // 0 <= x and y <= 1
    xs.retain(|x| ge(x.base, -x.offset));
    ys.retain(|y| ge(1.0 - y.base, y.offset));

    // (points not after the end, points strictly before it)
    let counts = |e: End| {
        let after = v.iter().filter(|&&q| gt(q - e.base, e.offset)).count();
        let from = v.iter().filter(|&&q| ge(q - e.base, e.offset)).count();
        (n - after, n - from)
    };
    let xs: Vec<(End, usize, usize)> = xs.iter().map(|&x| (x, counts(x).0, counts(x).1)).collect();
    let ys: Vec<(End, usize, usize)> = ys.iter().map(|&y| (y, counts(y).0, counts(y).1)).collect();

    let mut best = 0.0f64;
    for &(x, x_at_most, x_below) in &xs {
        for left in [Edge::Open, Edge::Closed] {
            if left == Edge::Closed && !gt(x.base, -x.offset) {
                continue;
            }
            let start = if left == Edge::Open {
                x_at_most
            } else {
                x_below
            };
            for &(y, y_at_most, y_below) in &ys {
                // y - x = span + shift
                let span = y.base - x.base;
                let shift = y.offset - x.offset;
                if !ge(span, -shift) || gt(span, a - shift) {
                    continue;
                }
                let empty = !gt(span, -shift);
                for right in [Edge::Closed, Edge::Open] {
                    let both = left == Edge::Closed && right == Edge::Closed;
                    if both && ge(span, a - shift) {
                        continue;
                    }
                    if empty && !both {
                        // an empty window has no increment
                        continue;
                    }
                    let end = if right == Edge::Closed {
                        y_at_most
                    } else {
                        y_below
                    };
                    let count = end.saturating_sub(start);
                    let len = if empty { 0.0 } else { span + shift };
                    best = best.max((count as f64 / nf - len).abs());
                }
            }
        }
    }

    let at_most = |y: f64| v.iter().filter(|&&p| p <= y).count();
    // grid witness
    let step = a.min(1.0 / (10.0 * nf));
    let cells = (1.0 / step).ceil() as usize;
    let grid: Vec<(f64, usize)> = (0..=cells)
        .map(|g| {
            let s = (g as f64 * step).min(1.0);
            (s, at_most(s))
        })
        .collect();
    let mut witness = 0.0f64;
    for (gi, &(s, cs)) in grid.iter().enumerate() {
        for &(t, ct) in grid[gi + 1..].iter() {
            if t - s > a + SPAN_TOL {
                break;
            }
            witness = witness.max(((ct - cs) as f64 / nf - (t - s)).abs());
        }
    }

    Ok(BruteForce {
        lambda: nf.sqrt() * best,
        grid_lower_bound: nf.sqrt() * witness,
    })
}
