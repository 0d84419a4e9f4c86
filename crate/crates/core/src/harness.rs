//! Monte Carlo experiment runner.
//!
//! A run is a pure function of its [`ExperimentConfig`]: every `(N, replicate)`
//! pair draws from its own keyed stream, work items are evaluated in parallel
//! and collected back in grid order, so the output bytes do not depend on the
//! thread count.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulus::{self, EmpiricalPath};
use crate::regimes::{
    self, CSchedule, ConditionReport, KMode, LimitTarget, RegimeSpec, TargetKind, Variant,
};
use crate::spacings;

/// Default cap on `sum N k replicates`.
pub const DEFAULT_BUDGET: u64 = 1_000_000_000;
/// Half-width added to both ends of an interval target for coverage.
pub const COVERAGE_SLACK: f64 = 0.25;

pub const RECORD_COLUMNS: [&str; 15] = [
    "regime",
    "N",
    "k",
    "n",
    "a_N",
    "seed",
    "replicate",
    "mu",
    "lambda",
    "k_n",
    "theta",
    "d_scaled",
    "target_kind",
    "target_lo",
    "target_hi",
];

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "regime",
    "N",
    "count",
    "undefined_count",
    "mean",
    "sd",
    "median",
    "q05",
    "q95",
    "target_lo",
    "target_hi",
    "gap_or_coverage",
];

pub const CONDITION_COLUMNS: [&str; 8] = [
    "condition",
    "N",
    "value",
    "required_limit",
    "applicable",
    "slope",
    "verdict",
    "value_alt",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Records,
    Summary,
    Conditions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `I`, `II`, `III` or `IV`.
    pub regime: String,
    #[serde(default)]
    pub c: Option<f64>,
    /// Variant IV only: `inv_loglog` or `log_pow:<p>`.
    #[serde(default)]
    pub c_schedule: Option<String>,
    /// `fixed` or `grow`.
    pub k_mode: String,
    #[serde(default)]
    pub k: Option<u32>,
    /// Growing `k` only; `loglog` is the one rule.
    #[serde(default)]
    pub k_rule: Option<String>,
    #[serde(default)]
    pub delta: Option<f64>,
    pub n_grid: Vec<u64>,
    pub replicates: u64,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    pub emit: Vec<Emit>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn spec(&self) -> Result<RegimeSpec> {
        let variant: Variant = self.regime.parse()?;
        let k_mode = match self.k_mode.as_str() {
            "fixed" => {
                if self.k_rule.is_some() {
                    return Err(Error::Config("k_rule only applies to k_mode grow".into()));
                }
                let k = self
                    .k
                    .ok_or_else(|| Error::Config("k_mode fixed needs k".into()))?;
                crate::gamma::GammaOrder::new(k)?;
                KMode::Fixed(k)
            }
            "grow" => {
                if self.k.is_some() {
                    return Err(Error::Config("k_mode grow computes k; remove k".into()));
                }
                match self.k_rule.as_deref() {
                    None | Some("loglog") => KMode::Growing,
                    Some(other) => {
                        return Err(Error::Config(format!(
                            "unknown k_rule {other:?}; expected loglog"
                        )))
                    }
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "k_mode must be fixed or grow, got {other:?}"
                )))
            }
        };
        let schedule = self
            .c_schedule
            .as_deref()
            .map(str::parse::<CSchedule>)
            .transpose()?;
        RegimeSpec::new(variant, self.c, schedule, k_mode, self.delta)
    }

    /// Checks everything that can fail before any sampling.
    pub fn validate(&self, budget: u64) -> Result<RegimeSpec> {
        let spec = self.spec()?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.n_grid.is_empty() {
            return Err(Error::Config("n_grid is empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        if self.emit.is_empty() {
            return Err(Error::Config("emit selects no output".into()));
        }
        let mut total: u64 = 0;
        for &n in &self.n_grid {
            let cost = n
                .checked_mul(spec.k_for(n) as u64)
                .and_then(|c| c.checked_mul(self.replicates));
            total = cost
                .and_then(|c| total.checked_add(c))
                .ok_or_else(|| Error::Resource("sample budget overflows".into()))?;
        }
        if total > budget {
            return Err(Error::Resource(format!(
                "sample budget sum N*k*replicates = {total} exceeds the cap {budget}"
            )));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub regime: String,
    #[serde(rename = "N")]
    pub n_spacings: u64,
    pub k: u32,
    pub n: u64,
    #[serde(rename = "a_N")]
    pub a_n: f64,
    pub seed: u64,
    pub replicate: u64,
    pub mu: f64,
    pub lambda: f64,
    /// `None` when `a_N >= e^{-1}`.
    pub k_n: Option<f64>,
    pub theta: f64,
    /// Variant IV only.
    pub d_scaled: Option<f64>,
    pub target_kind: String,
    /// `None` for an upper bound.
    pub target_lo: Option<f64>,
    pub target_hi: f64,
}

impl ReplicateRecord {
    /// The statistic the regime's target refers to.
    pub fn statistic(&self) -> Option<f64> {
        if self.regime == "IV" {
            self.d_scaled
        } else {
            self.k_n
        }
    }
}

/// One `(N, replicate)` work item.
pub fn run_replicate(
    spec: &RegimeSpec,
    target: &LimitTarget,
    n: u64,
    a: f64,
    base_seed: u64,
    replicate: u64,
) -> Result<ReplicateRecord> {
    let k = spec.k_for(n);
    let sample = spacings::sample_replicate(k, n as usize, base_seed, replicate, u64::MAX)?;
    let path = EmpiricalPath::from(spacings::uniformize(&sample));
    let report = modulus::analyze(&path, a)?;
    let d_scaled = match spec.c_n(n) {
        Some(c_n) if c_n < 1.0 => Some(regimes::d_scaling(n, c_n)? * report.lambda),
        _ => None,
    };
    Ok(ReplicateRecord {
        regime: spec.variant.to_string(),
        n_spacings: n,
        k,
        n: sample.n,
        a_n: a,
        seed: base_seed,
        replicate,
        mu: sample.mu,
        lambda: report.lambda,
        k_n: report.k_n,
        theta: report.theta.expect("analyze fills theta"),
        d_scaled,
        target_kind: target.kind.to_string(),
        target_lo: (target.kind != TargetKind::UpperBound).then_some(target.lo),
        target_hi: target.hi,
    })
}

/// All replicate records in `(N, replicate)` order.
///
/// `threads = Some(1)` runs serially; `None` or `Some(0)` uses every core.
pub fn run_experiment(
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<Vec<ReplicateRecord>> {
    let spec = config.validate(DEFAULT_BUDGET)?;
    let target = regimes::limit_target(&spec)?;
    let bandwidths = config
        .n_grid
        .iter()
        .map(|&n| regimes::bandwidth(&spec, n).map(|a| (n, a)))
        .collect::<Result<Vec<_>>>()?;
    let items: Vec<(u64, f64, u64)> = bandwidths
        .iter()
        .flat_map(|&(n, a)| (0..config.replicates).map(move |r| (n, a, r)))
        .collect();
    let work = || {
        items
            .par_iter()
            .map(|&(n, a, r)| run_replicate(&spec, &target, n, a, config.base_seed, r))
            .collect::<Result<Vec<_>>>()
    };
    match threads {
        Some(t) if t > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Resource(format!("thread pool: {e}")))?
            .install(work),
        _ => work(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub regime: String,
    #[serde(rename = "N")]
    pub n_spacings: u64,
    /// Records with a defined statistic.
    pub count: u64,
    pub undefined_count: u64,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub median: Option<f64>,
    pub q05: Option<f64>,
    pub q95: Option<f64>,
    pub target_lo: Option<f64>,
    pub target_hi: f64,
    /// Point: `|median - target|`. Interval: fraction inside the widened
    /// bracket. Upper bound: fraction at or below the bound.
    pub gap_or_coverage: Option<f64>,
}

/// Hazen quantile of sorted data: linear interpolation at position `n p + 1/2`.
pub fn hazen_quantile(sorted: &[f64], p: f64) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let h = n as f64 * p + 0.5;
    if h <= 1.0 {
        return Some(sorted[0]);
    }
    if h >= n as f64 {
        return Some(sorted[n - 1]);
    }
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    Some(sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1]))
}

/// Groups by `(regime, N)` in order of first appearance.
pub fn summarize(records: &[ReplicateRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::domain("cannot summarise an empty record set"));
    }
    let mut keys: Vec<(&str, u64)> = Vec::new();
    for r in records {
        let key = (r.regime.as_str(), r.n_spacings);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    Ok(keys
        .into_iter()
        .map(|(regime, n)| {
            let group: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.regime == regime && r.n_spacings == n)
                .collect();
            let mut values: Vec<f64> = group.iter().filter_map(|r| r.statistic()).collect();
            values.sort_by(f64::total_cmp);
            let count = values.len();
            let first = group[0];
            let mean = (count > 0).then(|| values.iter().sum::<f64>() / count as f64);
            let sd = mean.map(|m| {
                if count < 2 {
                    0.0
                } else {
                    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (count - 1) as f64)
                        .sqrt()
                }
            });
            let median = hazen_quantile(&values, 0.5);
            let fraction = |pred: &dyn Fn(f64) -> bool| {
                (count > 0)
                    .then(|| values.iter().filter(|&&v| pred(v)).count() as f64 / count as f64)
            };
            let (lo, hi) = (first.target_lo, first.target_hi);
            let gap_or_coverage = match first.target_kind.as_str() {
                "point" => median.map(|m| (m - hi).abs()),
                "interval" => {
                    let lo = lo.unwrap_or(hi) - COVERAGE_SLACK;
                    let hi = hi + COVERAGE_SLACK;
                    fraction(&|v| v >= lo && v <= hi)
                }
                _ => fraction(&|v| v <= hi),
            };
            SummaryRow {
                regime: regime.to_string(),
                n_spacings: n,
                count: count as u64,
                undefined_count: (group.len() - count) as u64,
                mean,
                sd,
                median,
                q05: hazen_quantile(&values, 0.05),
                q95: hazen_quantile(&values, 0.95),
                target_lo: lo,
                target_hi: hi,
                gap_or_coverage,
            }
        })
        .collect())
}

/// Scientific notation with 17 significant digits; reads back to the same
/// double.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), format_float)
}

fn parse_float(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>()
        .map_err(|e| format!("bad number {s:?}: {e}"))
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s == "NA" {
        Ok(None)
    } else {
        parse_float(s).map(Some)
    }
}

fn parse_int<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse::<T>().map_err(|_| format!("bad integer {s:?}"))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn read_csv_rows(path: &Path, columns: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(columns.iter().copied()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    reader
        .records()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

fn row_error(path: &Path, line: usize, message: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: format!("row {line}: {message}"),
    }
}

pub fn write_records_csv(records: &[ReplicateRecord], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(RECORD_COLUMNS)
        .map_err(|e| csv_error(path, e))?;
    for r in records {
        w.write_record([
            r.regime.clone(),
            r.n_spacings.to_string(),
            r.k.to_string(),
            r.n.to_string(),
            format_float(r.a_n),
            r.seed.to_string(),
            r.replicate.to_string(),
            format_float(r.mu),
            format_float(r.lambda),
            format_opt(r.k_n),
            format_float(r.theta),
            format_opt(r.d_scaled),
            r.target_kind.clone(),
            format_opt(r.target_lo),
            format_float(r.target_hi),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<ReplicateRecord>> {
    read_csv_rows(path, &RECORD_COLUMNS)?
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let f = |j: usize| &row[j];
            let parsed = (|| -> std::result::Result<ReplicateRecord, String> {
                Ok(ReplicateRecord {
                    regime: f(0).to_string(),
                    n_spacings: parse_int(f(1))?,
                    k: parse_int(f(2))?,
                    n: parse_int(f(3))?,
                    a_n: parse_float(f(4))?,
                    seed: parse_int(f(5))?,
                    replicate: parse_int(f(6))?,
                    mu: parse_float(f(7))?,
                    lambda: parse_float(f(8))?,
                    k_n: parse_opt(f(9))?,
                    theta: parse_float(f(10))?,
                    d_scaled: parse_opt(f(11))?,
                    target_kind: f(12).to_string(),
                    target_lo: parse_opt(f(13))?,
                    target_hi: parse_float(f(14))?,
                })
            })();
            parsed.map_err(|m| row_error(path, i + 1, m))
        })
        .collect()
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SUMMARY_COLUMNS)
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            r.regime.clone(),
            r.n_spacings.to_string(),
            r.count.to_string(),
            r.undefined_count.to_string(),
            format_opt(r.mean),
            format_opt(r.sd),
            format_opt(r.median),
            format_opt(r.q05),
            format_opt(r.q95),
            format_opt(r.target_lo),
            format_float(r.target_hi),
            format_opt(r.gap_or_coverage),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    read_csv_rows(path, &SUMMARY_COLUMNS)?
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let f = |j: usize| &row[j];
            let parsed = (|| -> std::result::Result<SummaryRow, String> {
                Ok(SummaryRow {
                    regime: f(0).to_string(),
                    n_spacings: parse_int(f(1))?,
                    count: parse_int(f(2))?,
                    undefined_count: parse_int(f(3))?,
                    mean: parse_opt(f(4))?,
                    sd: parse_opt(f(5))?,
                    median: parse_opt(f(6))?,
                    q05: parse_opt(f(7))?,
                    q95: parse_opt(f(8))?,
                    target_lo: parse_opt(f(9))?,
                    target_hi: parse_float(f(10))?,
                    gap_or_coverage: parse_opt(f(11))?,
                })
            })();
            parsed.map_err(|m| row_error(path, i + 1, m))
        })
        .collect()
}

/// Long format: one row per `(condition, N)`.
pub fn write_conditions_csv(reports: &[ConditionReport], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(CONDITION_COLUMNS)
        .map_err(|e| csv_error(path, e))?;
    for rep in reports {
        for (i, (&n, &v)) in rep.n_grid.iter().zip(&rep.values).enumerate() {
            let alt = rep.alt_values.as_ref().map(|a| a[i]);
            w.write_record([
                rep.condition.to_string(),
                n.to_string(),
                format_float(v),
                rep.required_limit.to_string(),
                rep.applicable.to_string(),
                format_opt(rep.slope),
                rep.verdict.to_string(),
                alt.map_or_else(String::new, format_float),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| row_error(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// What a full run produced and where it was written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<ReplicateRecord>,
    pub summary: Vec<SummaryRow>,
    pub conditions: Vec<ConditionReport>,
    pub written: Vec<PathBuf>,
}

/// Conditions first, then the replicates, then every requested file.
pub fn run_and_persist(config: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutput> {
    let spec = config.validate(DEFAULT_BUDGET)?;
    let grid: Vec<u64> = config
        .n_grid
        .iter()
        .copied()
        .filter(|&n| n >= regimes::MIN_CONDITION_N)
        .collect();
    let conditions = if grid.is_empty() {
        Vec::new()
    } else {
        regimes::check_conditions(&spec, &grid)?
    };
    let records = run_experiment(config, threads)?;
    let summary = summarize(&records)?;

    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let mut written = Vec::new();
    for emit in &config.emit {
        let path = match emit {
            Emit::Records => {
                let p = config.out_dir.join("records.csv");
                write_records_csv(&records, &p)?;
                p
            }
            Emit::Summary => {
                let p = config.out_dir.join("summary.csv");
                write_summary_csv(&summary, &p)?;
                p
            }
            Emit::Conditions => {
                let p = config.out_dir.join("conditions.csv");
                write_conditions_csv(&conditions, &p)?;
                p
            }
        };
        written.push(path);
    }
    Ok(RunOutput {
        records,
        summary,
        conditions,
        written,
    })
}
