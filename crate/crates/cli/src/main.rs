use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use kspacings::gamma::{self, GammaOrder};
use kspacings::harness::{self, ExperimentConfig};
use kspacings::modulus::{self, EmpiricalPath};
use kspacings::regimes::{self, CSchedule, KMode, RegimeSpec, Variant};
use kspacings::spacings;
use kspacings::transform::{self, IncrementReport, Lemma, MuSource};

#[derive(Parser)]
#[command(
    name = "kspacings",
    version,
    about = "Reduced k-spacings empirical process toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gamma(k, 1) distribution functions.
    Gamma {
        #[command(subcommand)]
        op: GammaOp,
    },
    /// Root beta > 1 of beta (ln beta - 1) = 1/c - 1, as JSON.
    BetaPlus {
        #[arg(long)]
        c: f64,
    },
    /// Simulate N k-spacings; prints a JSON header line then CSV i,Y,D,W.
    SampleSpacings {
        #[arg(long)]
        k: u32,
        #[arg(long = "n-spacings")]
        n_spacings: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Oscillation modulus of points read from a file ("-" for stdin).
    Modulus {
        /// One value per line, or the output of sample-spacings (W column).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        a: f64,
        /// Also report b(a) and k_N = Lambda / b(a).
        #[arg(long)]
        normalized: bool,
        /// Also report the one-sided width-a increment.
        #[arg(long)]
        theta: bool,
    },
    /// Increment and quantile diagnostics as CSV.
    Verify(VerifyArgs),
    /// Side conditions of a regime along an N grid, as CSV.
    Conditions(ConditionsArgs),
    /// Run a Monte Carlo experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
}

#[derive(Subcommand)]
enum GammaOp {
    /// H_k(x).
    Cdf {
        #[arg(long)]
        k: u32,
        #[arg(long)]
        x: f64,
    },
    /// H_k^{-1}(p).
    Quantile {
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: f64,
    },
    /// pdf(x) <= 1 - H_k(x) <= pdf(x) / (1 - k/x) for x > k, as JSON.
    TailBounds {
        #[arg(long)]
        k: u32,
        #[arg(long)]
        x: f64,
    },
    /// t_k(delta) = k^{k(delta-2)} e^{-k^delta/2}, as JSON.
    Tk {
        #[arg(long)]
        k: u32,
        #[arg(long)]
        delta: f64,
    },
}

#[derive(Args)]
struct VerifyArgs {
    /// a1, a2, a3, a4 or p1.
    #[arg(long)]
    lemma: Lemma,
    /// Comma-separated orders.
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<u32>,
    #[arg(long)]
    delta: Option<f64>,
    /// Strictly decreasing, comma-separated; `ln:<v>` gives a logarithm.
    #[arg(long = "a-grid", value_delimiter = ',')]
    a_grid: Option<Vec<String>>,
    /// fixed:<v> or sim:<seed>:<N>.
    #[arg(long, default_value = "fixed:1")]
    mu: MuSource,
}

#[derive(Args)]
struct ConditionsArgs {
    /// I, II, III or IV.
    #[arg(long)]
    regime: Variant,
    #[arg(long)]
    c: Option<f64>,
    /// Regime IV: inv_loglog or log_pow:<p>.
    #[arg(long = "c-schedule")]
    c_schedule: Option<CSchedule>,
    /// fixed:<k> or grow.
    #[arg(long, default_value = "fixed:1")]
    k: KMode,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "n-grid", value_delimiter = ',', required = true)]
    n_grid: Vec<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = run(cli.command, &mut out).and_then(|()| Ok(out.flush()?));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn order(k: u32) -> Result<GammaOrder> {
    Ok(GammaOrder::new(k)?)
}

fn run(command: Command, out: &mut impl Write) -> Result<()> {
    match command {
        Command::Gamma { op } => run_gamma(op, out),
        Command::BetaPlus { c } => {
            let beta = regimes::erdos_renyi_beta(c)?;
            let residual = regimes::beta_residual(beta, c);
            writeln!(out, "{}", json!({ "beta": beta, "residual": residual }))?;
            Ok(())
        }
        Command::SampleSpacings {
            k,
            n_spacings,
            seed,
            replicate,
        } => {
            let s = spacings::sample_replicate(
                k,
                n_spacings,
                seed,
                replicate,
                spacings::DEFAULT_MAX_DRAWS,
            )?;
            let w = s.transformed_points();
            let header = json!({ "k": k, "N": n_spacings, "n": s.n, "mu": s.mu, "seed": seed, "replicate": replicate });
            writeln!(out, "# {header}")?;
            writeln!(out, "i,Y,D,W")?;
            for (i, ((y, d), w)) in s.y.iter().zip(&s.d).zip(&w).enumerate() {
                writeln!(out, "{},{y:e},{d:e},{w:e}", i + 1)?;
            }
            Ok(())
        }
        Command::Modulus {
            input,
            a,
            normalized,
            theta,
        } => {
            let points = read_points(&input)?;
            let path = EmpiricalPath::from_unsorted(points)?;
            let mut report = if theta {
                modulus::analyze(&path, a)?
            } else {
                modulus::oscillation_modulus(&path, a)?
            };
            if !normalized {
                report.b_n = None;
                report.k_n = None;
            }
            let mut value = serde_json::to_value(&report)?;
            let obj = value.as_object_mut().expect("report is an object");
            if !normalized {
                obj.remove("b_n");
                obj.remove("k_n");
            } else if report.k_n.is_none() {
                obj.insert("k_n_undefined".into(), json!(true));
            }
            if !theta {
                obj.remove("theta");
            }
            writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
            Ok(())
        }
        Command::Verify(args) => run_verify(args, out),
        Command::Conditions(args) => run_conditions(args, out),
        Command::Experiment { config, threads } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let result = harness::run_and_persist(&cfg, Some(threads))?;
            for row in &result.summary {
                let fmt =
                    |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
                writeln!(
                    out,
                    "regime {} N {}: count {} undefined {} median {} q05 {} q95 {} gap/coverage {}",
                    row.regime,
                    row.n_spacings,
                    row.count,
                    row.undefined_count,
                    fmt(row.median),
                    fmt(row.q05),
                    fmt(row.q95),
                    fmt(row.gap_or_coverage)
                )?;
            }
            for p in &result.written {
                writeln!(out, "wrote {}", p.display())?;
            }
            Ok(())
        }
    }
}

fn run_gamma(op: GammaOp, out: &mut impl Write) -> Result<()> {
    match op {
        GammaOp::Cdf { k, x } => writeln!(out, "{}", gamma::cdf(order(k)?, x)?)?,
        GammaOp::Quantile { k, p } => writeln!(out, "{}", gamma::quantile(order(k)?, p)?)?,
        GammaOp::TailBounds { k, x } => {
            let o = order(k)?;
            let (lo, hi) = gamma::log_tail_bounds(o, x)?;
            let ls = gamma::log_survival(o, x)?;
            let v = json!({
                "k": k, "x": x,
                "lower": lo.exp(), "survival": ls.exp(), "upper": hi.exp(),
                "log_lower": lo, "log_survival": ls, "log_upper": hi,
            });
            writeln!(out, "{v}")?;
        }
        GammaOp::Tk { k, delta } => {
            let t = gamma::tail_threshold(k, delta)?;
            let v = json!({
                "k": k, "delta": delta, "log_value": t.log_value,
                "value": t.value(), "sub_underflow": t.is_sub_underflow(),
            });
            writeln!(out, "{v}")?;
        }
    }
    Ok(())
}

fn parse_log_grid(items: &[String]) -> Result<Vec<f64>> {
    items
        .iter()
        .map(|s| {
            let s = s.trim();
            if let Some(l) = s.strip_prefix("ln:") {
                l.parse::<f64>()
                    .with_context(|| format!("bad log bandwidth {s:?}"))
            } else {
                let a: f64 = s.parse().with_context(|| format!("bad bandwidth {s:?}"))?;
                if !(a > 0.0 && a < 1.0) {
                    bail!("bandwidth must lie in (0, 1), got {a}");
                }
                Ok(a.ln())
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:e}"))
}

fn write_increment_csv(reports: &[IncrementReport], out: &mut impl Write) -> Result<()> {
    writeln!(
        out,
        "lemma,k,mu,a,log_a,sup_value,log_sup,ratio,argmax_h,argmax_end,secondary_ratio,competing_scale"
    )?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}",
            r.lemma.map_or_else(String::new, |l| l.to_string()),
            r.k,
            opt(r.mu),
            r.a,
            r.log_a,
            r.sup_value,
            r.log_sup,
            r.ratio,
            r.argmax_h,
            r.argmax_end,
            opt(r.secondary_ratio),
            opt(r.competing_scale)
        )?;
    }
    Ok(())
}

fn run_verify(args: VerifyArgs, out: &mut impl Write) -> Result<()> {
    let grid = args.a_grid.as_deref().map(parse_log_grid).transpose()?;
    let reports =
        transform::lemma_diagnostics(args.lemma, &args.k, args.delta, grid.as_deref(), args.mu)?;
    write_increment_csv(&reports, out)
}

fn run_conditions(args: ConditionsArgs, out: &mut impl Write) -> Result<()> {
    let spec = RegimeSpec::new(args.regime, args.c, args.c_schedule, args.k, args.delta)?;
    let reports = regimes::check_conditions(&spec, &args.n_grid)?;
    writeln!(out, "{}", harness::CONDITION_COLUMNS.join(","))?;
    for rep in &reports {
        for (i, (&n, &v)) in rep.n_grid.iter().zip(&rep.values).enumerate() {
            let alt = rep.alt_values.as_ref().map(|a| format!("{:e}", a[i]));
            writeln!(
                out,
                "{},{},{:e},{},{},{},{},{}",
                rep.condition,
                n,
                v,
                rep.required_limit,
                rep.applicable,
                opt(rep.slope),
                rep.verdict,
                alt.unwrap_or_default()
            )?;
        }
    }
    Ok(())
}

/// Values from plain lines or from sample-spacings output (the `W` column).
fn read_points(input: &PathBuf) -> Result<Vec<f64>> {
    let text = if input.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        s
    } else {
        fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?
    };
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "i,Y,D,W" {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line);
        let v: f64 = field
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: not a number: {field:?}", input.display(), i + 1))?;
        points.push(v);
    }
    if points.is_empty() {
        bail!("{} contains no points", input.display());
    }
    Ok(points)
}
