//! Acceptance suite. Every criterion runs at its pinned tolerance and prints a
//! single PASS/FAIL line; the binary exits non-zero when any criterion fails.

use std::alloc::{GlobalAlloc, Layout, System};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use kspacings::gamma::{self, GammaOrder};
use kspacings::harness::{self, Emit, ExperimentConfig, ReplicateRecord};
use kspacings::modulus::{self, EmpiricalPath};
use kspacings::regimes;
use kspacings::rng::StreamKey;
use kspacings::transform::{self, MuSource, PhiMap, PsiMap};

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

const SEED: u64 = 1;
const REPLICATES: u64 = 200;

struct Outcome {
    pass: bool,
    detail: String,
    notes: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome {
            pass,
            detail,
            notes: Vec::new(),
        }
    }
}

fn run(id: u32, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    let mut timing = format!("{:.2}s", elapsed.as_secs_f64());
    if let Some(limit) = limit {
        let _ = write!(timing, " of {}s", limit.as_secs());
        if elapsed > limit {
            out.pass = false;
            out.detail.push_str("; runtime limit exceeded");
        }
    }
    let tag = if out.pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} {tag} {title} [{timing}]: {}", out.detail);
    for n in &out.notes {
        println!("    note: {n}");
    }
    out.pass
}

// independent oracles

fn ln_fact(m: u32) -> f64 {
    (2..=m).map(|j| (j as f64).ln()).sum()
}

/// `ln(1 - H_k(x))` as a log-sum-exp of Poisson terms.
fn oracle_log_survival(k: u32, x: f64) -> f64 {
    let terms: Vec<f64> = (0..k).map(|j| j as f64 * x.ln() - x - ln_fact(j)).collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Solves `ln(1 - H_k(x)) = ln_s` by bisection in `x`.
fn oracle_upper_quantile(k: u32, ln_s: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while oracle_log_survival(k, hi) > ln_s {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if oracle_log_survival(k, mid) > ln_s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// 95th percentile with the same Hazen rule as the summary files.
fn q95(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    harness::hazen_quantile(&v, 0.95).unwrap()
}

fn config(regime: &str, c: Option<f64>, n_grid: Vec<u64>, replicates: u64) -> ExperimentConfig {
    ExperimentConfig {
        regime: regime.into(),
        c,
        c_schedule: None,
        k_mode: "fixed".into(),
        k: Some(2),
        k_rule: None,
        delta: None,
        n_grid,
        replicates,
        base_seed: SEED,
        out_dir: PathBuf::from("unused"),
        emit: vec![Emit::Records],
    }
}

fn stats_at(recs: &[ReplicateRecord], n: u64) -> Vec<f64> {
    recs.iter()
        .filter(|r| r.n_spacings == n)
        .map(|r| {
            r.statistic()
                .expect("statistic defined at these bandwidths")
        })
        .collect()
}

/// Medians of `lambda / sqrt(2 a s(a))` for a comparison scale `s`.
fn alt_median(recs: &[ReplicateRecord], n: u64, scale: impl Fn(f64) -> f64) -> f64 {
    median(
        recs.iter()
            .filter(|r| r.n_spacings == n)
            .map(|r| r.lambda / (2.0 * r.a_n * scale(r.a_n)).sqrt())
            .collect(),
    )
}

fn gamma_suite() -> Outcome {
    let ks = [1u32, 2, 4, 8, 16, 32, 64];
    let mut worst_trip = 0.0f64;
    let mut bracket_fail = 0usize;
    let mut bracket_cases = 0usize;
    let mut sandwich_fail = 0usize;
    for &k in &ks {
        let g = GammaOrder::new(k).unwrap();
        for i in 0..1000 {
            let s = (i as f64 + 0.5) / 1000.0;
            let x = gamma::quantile(g, s).unwrap();
            worst_trip = worst_trip.max((gamma::cdf(g, x).unwrap() - s).abs());
        }
        let kf = k as f64;
        for j in 1..=200 {
            let x = kf + kf.max(1.0) * 10f64.powf(-3.0 + 5.0 * j as f64 / 200.0);
            let ln_low = (kf - 1.0) * x.ln() - x - ln_fact(k - 1);
            let ln_high = ln_low - (1.0 - kf / x).ln();
            let got = gamma::log_survival(g, x).unwrap();
            let slack = 1e-12 * got.abs().max(1.0);
            bracket_cases += 1;
            if !(ln_low - slack <= got && got <= ln_high + slack) {
                bracket_fail += 1;
            }
        }
        for j in 1..=1000 {
            let x = j as f64 / 1000.0;
            let upper = kf * x.ln() - ln_fact(k);
            let lower = upper - x;
            let got = gamma::log_cdf(g, x).unwrap();
            let slack = 1e-12 * got.abs().max(1.0);
            if !(lower - slack <= got && got <= upper + slack) {
                sandwich_fail += 1;
            }
        }
    }
    Outcome::new(
        worst_trip <= 1e-10 && bracket_fail == 0 && sandwich_fail == 0,
        format!(
            "max round-trip error {worst_trip:.2e} (tol 1e-10); bracket violations {bracket_fail}/{bracket_cases}; sandwich violations {sandwich_fail}/7000"
        ),
    )
}

fn tail_trend() -> Outcome {
    let delta = 2.5;
    let mut errs = Vec::new();
    let mut agree = true;
    for k in [4u32, 8] {
        let ln_s = -(k as f64).powf(delta) / 2.0;
        let t = gamma::quantile_tail_approx(GammaOrder::new(k).unwrap(), ln_s, delta).unwrap();
        let exact = oracle_upper_quantile(k, ln_s);
        let oracle_err = (exact / -ln_s - 1.0).abs();
        agree &= (oracle_err - t.measured_error).abs() <= 1e-9;
        errs.push((t.measured_error, oracle_err));
    }
    let (e4, e8) = (errs[0].1, errs[1].1);
    Outcome::new(
        e4.is_finite() && e8.is_finite() && e8 <= e4 && agree,
        format!(
            "error(k=4) {e4:.6} error(k=8) {e8:.6}; library agrees with bisection oracle: {agree}"
        ),
    )
}

fn modulus_oracle() -> Outcome {
    let mut stream = StreamKey::new(2024, 50, 0, 0).stream();
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = 1 + (stream.next_u64() % 50) as usize;
        let lattice = case % 5 == 0;
        let pts: Vec<f64> = (0..n)
            .map(|_| {
                if lattice {
                    (stream.next_u64() % 21) as f64 / 20.0
                } else {
                    stream.next_open01()
                }
            })
            .collect();
        let a = if case % 3 == 0 {
            (1 + stream.next_u64() % 18) as f64 / 20.0
        } else {
            0.01 + 0.89 * stream.next_open01()
        };
        let path = EmpiricalPath::from_unsorted(pts).unwrap();
        let fast = modulus::oscillation_modulus(&path, a).unwrap().lambda;
        let brute = modulus::brute_force_modulus(&path, a).unwrap().lambda;
        worst = worst.max((fast - brute).abs());
    }
    let two = EmpiricalPath::from_sorted(vec![0.25, 0.75]).unwrap();
    let hand = modulus::oscillation_modulus(&two, 0.1).unwrap().lambda;
    let exact = hand == 2f64.sqrt() * 0.5;
    Outcome::new(
        worst <= 1e-12 && exact,
        format!(
            "max |fast - brute| {worst:.2e} over 1000 cases (tol 1e-12); N=2 case exact: {exact}"
        ),
    )
}

fn performance() -> Outcome {
    let n = 1_000_000usize;
    let base = LIVE.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let mut stream = StreamKey::new(7, n as u64, 0, 0).stream();
    let mut pts: Vec<f64> = (0..n).map(|_| stream.next_open01()).collect();
    pts.sort_by(f64::total_cmp);
    let path = EmpiricalPath::from_sorted(pts).unwrap();
    let start = Instant::now();
    let report = modulus::oscillation_modulus(&path, 1e-4).unwrap();
    let elapsed = start.elapsed();
    drop(path);
    let peak_mb = (PEAK.load(Ordering::Relaxed) - base) as f64 / 1e6;
    Outcome::new(
        elapsed < Duration::from_secs(5) && peak_mb < 200.0 && report.lambda.is_finite(),
        format!(
            "N=1e6, a=1e-4: {:.3}s (limit 5s), peak heap {peak_mb:.1} MB including input (limit 200 MB)",
            elapsed.as_secs_f64()
        ),
    )
}

fn beta_solver() -> Outcome {
    let worst = (0..100)
        .map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 99.0))
        .map(|c| regimes::beta_residual(regimes::erdos_renyi_beta(c).unwrap(), c))
        .fold(0.0f64, f64::max);
    let e = std::f64::consts::E;
    let d1 = (regimes::erdos_renyi_beta(1.0).unwrap() - e).abs();
    let d2 = (regimes::erdos_renyi_beta(1.0 / (1.0 + e * e)).unwrap() - e * e).abs();
    Outcome::new(
        worst <= 1e-12 && d1 <= 1e-10 && d2 <= 1e-10,
        format!("max residual {worst:.2e} (tol 1e-12); |beta(1) - e| {d1:.2e}; |beta(1/(1+e^2)) - e^2| {d2:.2e} (tol 1e-10)"),
    )
}

fn fixed_k_ratios() -> Outcome {
    let grid = [1e-2, 1e-4, 1e-6];
    let mut monotone_seeds = 0;
    let mut band_ok = true;
    let mut extremes = (f64::INFINITY, f64::NEG_INFINITY);
    for seed in 0..50u64 {
        let mut seed_ok = true;
        for k in [1u32, 2] {
            let mu = MuSource::Simulated {
                seed,
                n_spacings: 100_000,
            }
            .resolve(k)
            .unwrap();
            let psi = PsiMap::new(k, mu).unwrap();
            let phi = PhiMap::new(k).unwrap();
            let psi_r: Vec<f64> = grid
                .iter()
                .map(|&a| transform::psi_increment_sup(&psi, a).unwrap().ratio)
                .collect();
            let phi_r: Vec<f64> = grid
                .iter()
                .map(|&a| transform::phi_increment_sup(&phi, a).unwrap().ratio)
                .collect();
            for r in [psi_r[2], phi_r[2]] {
                extremes = (extremes.0.min(r), extremes.1.max(r));
                band_ok &= (0.8..=1.2).contains(&r);
            }
            for seq in [&psi_r, &phi_r] {
                seed_ok &= seq
                    .windows(2)
                    .all(|w| (w[1] - 1.0).abs() <= (w[0] - 1.0).abs() + 1e-12);
            }
        }
        monotone_seeds += seed_ok as u32;
    }
    Outcome::new(
        band_ok && monotone_seeds >= 45,
        format!(
            "ratios at a=1e-6 span [{:.4}, {:.4}] (band [0.8, 1.2]); |ratio-1| non-increasing in {monotone_seeds}/50 seeds (need 45)",
            extremes.0, extremes.1
        ),
    )
}

fn growing_k_ratios() -> Outcome {
    let delta = 2.1;
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [3u32, 4] {
        let t = gamma::tail_threshold(k, delta).unwrap();
        let log_a = t.log_value - 2f64.ln();
        let mu = MuSource::Simulated {
            seed: SEED,
            n_spacings: 100_000,
        }
        .resolve(k)
        .unwrap();
        let psi = transform::psi_increment_sup_ln(&PsiMap::new(k, mu).unwrap(), log_a);
        let phi = transform::phi_increment_sup_ln(&PhiMap::new(k).unwrap(), log_a);
        match (psi, phi) {
            (Ok(p), Ok(f)) => {
                let finite = p.log_sup.is_finite()
                    && f.log_sup.is_finite()
                    && p.ratio.is_finite()
                    && f.ratio.is_finite();
                ok &= finite && (0.5..=2.0).contains(&p.ratio);
                parts.push(format!(
                    "k={k} psi-ratio {:.4} phi-ratio {:.4}",
                    p.ratio, f.ratio
                ));
            }
            (p, f) => {
                ok = false;
                parts.push(format!("k={k} fault: {:?} / {:?}", p.err(), f.err()));
            }
        }
    }
    Outcome::new(ok, format!("{} (psi band [0.5, 2.0])", parts.join("; ")))
}

fn part_i() -> Outcome {
    let grid = vec![1_000u64, 10_000, 100_000];
    let recs =
        harness::run_experiment(&config("I", Some(0.5), grid.clone(), REPLICATES), None).unwrap();
    let meds: Vec<f64> = grid.iter().map(|&n| median(stats_at(&recs, n))).collect();
    let in_band = meds.iter().all(|m| (0.5..=1.6).contains(m));
    let closer = (meds[2] - 1.0).abs() <= (meds[0] - 1.0).abs();
    let mut out = Outcome::new(
        in_band && closer,
        format!(
            "median k_N at N=1e3/1e4/1e5: {:.4} / {:.4} / {:.4} (band [0.5, 1.6]); moving toward 1: {closer}",
            meds[0], meds[1], meds[2]
        ),
    );
    let alt: Vec<String> = grid
        .iter()
        .map(|&n| format!("{:.4}", alt_median(&recs, n, |a| (1.0 / a).ln())))
        .collect();
    out.notes.push(format!(
        "median of lambda / sqrt(2 a ln(1/a)): {}",
        alt.join(" / ")
    ));
    out
}

fn part_ii() -> Outcome {
    let grid = vec![10_000u64, 100_000];
    let recs = harness::run_experiment(&config("II", Some(1.0), grid, REPLICATES), None).unwrap();
    let target = 1.2160;
    let m4 = median(stats_at(&recs, 10_000));
    let m5 = median(stats_at(&recs, 100_000));
    let rel = (m5 / target - 1.0).abs();
    let mut out = Outcome::new(
        rel <= 0.35,
        format!("median k_N at N=1e4/1e5: {m4:.4} / {m5:.4}; relative gap at 1e5 {rel:.3} (tol 0.35 around {target})"),
    );
    out.notes.push(format!(
        "median of lambda / sqrt(2 a ln(1/a)) at N=1e5: {:.4}",
        alt_median(&recs, 100_000, |a| (1.0 / a).ln())
    ));
    out
}

fn part_iii() -> Outcome {
    let n = 100_000u64;
    let recs =
        harness::run_experiment(&config("III", Some(2.0), vec![n], REPLICATES), None).unwrap();
    let vals = stats_at(&recs, n);
    let (lo, hi) = (2f64.sqrt() - 0.25, 3f64.sqrt() + 0.25);
    let inside = vals.iter().filter(|v| (lo..=hi).contains(*v)).count() as f64 / vals.len() as f64;
    let mut out = Outcome::new(
        inside >= 0.60,
        format!(
            "{:.1}% of k_N in [{lo:.4}, {hi:.4}] (need 60%); median {:.4}",
            100.0 * inside,
            median(vals)
        ),
    );
    let lnln_n = (n as f64).ln().ln();
    out.notes.push(format!(
        "median of lambda / sqrt(2 a lnln N): {:.4}",
        alt_median(&recs, n, |_| lnln_n)
    ));
    out
}

fn part_iv() -> Outcome {
    let grid = vec![10_000u64, 100_000];
    let recs = harness::run_experiment(&config("IV", None, grid, REPLICATES), None).unwrap();
    let v4 = stats_at(&recs, 10_000);
    let v5 = stats_at(&recs, 100_000);
    let bound = 2.0 * 1.5;
    let below = v5.iter().filter(|&&v| v <= bound).count() as f64 / v5.len() as f64;
    let (q4, q5) = (q95(v4), q95(v5.clone()));
    let mut out = Outcome::new(
        below >= 0.95 && q5 <= q4,
        format!(
            "{:.1}% of d_N lambda <= {bound} at N=1e5 (need 95%); q95 at N=1e4/1e5: {q4:.4} / {q5:.4} (need non-increasing)",
            100.0 * below
        ),
    );
    out.notes
        .push(format!("median d_N lambda at N=1e5: {:.4}", median(v5)));
    out
}

fn sorted_csv(recs: &[ReplicateRecord], dir: &std::path::Path, name: &str) -> Vec<String> {
    let p = dir.join(name);
    harness::write_records_csv(recs, &p).unwrap();
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    lines.sort();
    lines
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("III", Some(2.0), vec![2_000, 20_000], 16);
    let first = harness::run_experiment(&cfg, Some(1)).unwrap();
    let again = harness::run_experiment(&cfg, Some(1)).unwrap();
    let parallel = harness::run_experiment(&cfg, Some(4)).unwrap();
    let a = sorted_csv(&first, dir.path(), "a.csv");
    let b = sorted_csv(&again, dir.path(), "b.csv");
    let c = sorted_csv(&parallel, dir.path(), "c.csv");
    Outcome::new(
        a == b && a == c,
        format!(
            "repeat run identical: {}; 4-thread run identical to serial: {} ({} rows)",
            a == b,
            a == c,
            a.len() - 1
        ),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run(1, "gamma kernel suite", Some(secs(10)), gamma_suite),
        run(2, "deep-tail quantile trend", Some(secs(5)), tail_trend),
        run(
            3,
            "modulus oracle equivalence",
            Some(secs(60)),
            modulus_oracle,
        ),
        run(4, "modulus performance", None, performance),
        run(5, "beta-plus solver", None, beta_solver),
        run(
            6,
            "fixed-k transform ratios",
            Some(secs(120)),
            fixed_k_ratios,
        ),
        run(
            7,
            "growing-k transform ratios",
            Some(secs(60)),
            growing_k_ratios,
        ),
        run(8, "regime I trend", Some(secs(600)), part_i),
        run(9, "regime II point limit", Some(secs(600)), part_ii),
        run(10, "regime III bracket", Some(secs(600)), part_iii),
        run(11, "regime IV bound", Some(secs(600)), part_iv),
        run(12, "determinism and parallel equality", None, determinism),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
