//! `rfconc`: data generation, profiling, Hermite tables, one-shot comparisons,
//! sweeps and slope reports.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
//! numerical error.

mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rfconc_core::dataset::{
    admissibility_threshold, load_csv, orthogonality_profile, sample_cube, sample_sphere, select_ell, write_csv,
};
use rfconc_core::experiment::{
    compare, emit_csv, parse_csv, run_sweep, slope_table, CompareConfig, DataConfig, Distribution, EllChoice,
};
use rfconc_core::hermite::{expand_activation, ActivationSpec, DEFAULT_K_MAX};
use rfconc_core::par::with_threads;

use config::Scale;

#[derive(Parser)]
#[command(name = "rfconc", version, about = "Random-feature vs. kernel ridge regression experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic dataset and write it as CSV (one sample per row).
    Gen(GenArgs),
    /// Near-orthogonality diagnostics of a CSV dataset.
    Profile(ProfileArgs),
    /// Hermite coefficients, norms and tail masses of an activation.
    Hermite(HermiteArgs),
    /// Fit RFRR, KRR and PKRR on one dataset and compare them.
    Compare(CompareArgs),
    /// Run a seeded sweep over the feature count and write the results CSV.
    Sweep(SweepArgs),
    /// Fit log-log slopes to a results CSV and check them against a threshold.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthDist {
    Sphere,
    Cube,
}

#[derive(Args)]
struct GenArgs {
    /// Input distribution.
    #[arg(long, value_enum)]
    dist: SynthDist,
    /// Dimension.
    #[arg(long)]
    d: usize,
    /// Number of samples.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    /// CSV file, one sample per row.
    #[arg(long)]
    data: PathBuf,
    /// Activation used for the admissibility thresholds.
    #[arg(long, default_value = "relu")]
    activation: ActivationSpec,
    /// Largest ℓ examined.
    #[arg(long, default_value_t = 10)]
    max_ell: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Args)]
struct HermiteArgs {
    /// relu, leaky_relu:s, tanh, sigmoid, softplus, identity, constant:c, poly5 or hermite:c0,c1,...
    #[arg(long)]
    activation: ActivationSpec,
    /// Highest coefficient index K.
    #[arg(long)]
    max_degree: usize,
    /// Absolute accuracy of each coefficient.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct CompareArgs {
    /// Synthetic distribution (ignored with --data).
    #[arg(long, value_enum, default_value = "sphere")]
    dist: SynthDist,
    #[arg(long, required_unless_present = "data")]
    d: Option<usize>,
    #[arg(long, required_unless_present = "data")]
    n: Option<usize>,
    /// Use a CSV dataset instead of synthetic data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Feature activation σ.
    #[arg(long)]
    activation: ActivationSpec,
    /// Teacher activation τ.
    #[arg(long)]
    tau: ActivationSpec,
    /// Number of random features.
    #[arg(long = "N")]
    n_features: usize,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Label noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    sigma_eps: f64,
    /// Polynomial-kernel degree, or "auto".
    #[arg(long, default_value = "2", value_parser = parse_ell)]
    ell: EllChoice,
    /// Teacher replicates for the test error.
    #[arg(long = "B", default_value_t = 8)]
    b: usize,
    /// Test points per replicate.
    #[arg(long = "M", default_value_t = 1000)]
    m: usize,
    /// Minimum Hermite degree of the kernel series.
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    k_max: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML configuration.
    #[arg(long)]
    config: PathBuf,
    /// Results CSV path (required unless --check).
    #[arg(long, required_unless_present = "check")]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "RFCONC_THREADS")]
    threads: Option<usize>,
    /// Which [scale.*] override table to apply.
    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,
    /// Validate the configuration and exit.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV written by `sweep`.
    #[arg(long = "in")]
    input: PathBuf,
    /// A slope passes when it is at most this value.
    #[arg(long, default_value_t = -0.4, allow_hyphen_values = true)]
    threshold: f64,
}

fn parse_ell(s: &str) -> Result<EllChoice, String> {
    if s == "auto" {
        return Ok(EllChoice::Auto);
    }
    s.parse::<usize>()
        .map(EllChoice::Fixed)
        .map_err(|_| format!("expected a non-negative integer or \"auto\", got '{s}'"))
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<rfconc_core::Error> for Failure {
    fn from(e: rfconc_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Profile(a) => profile(a),
        Command::Hermite(a) => hermite(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    }
}

fn gen(a: GenArgs) -> Result<(), Failure> {
    if a.d == 0 || a.n == 0 {
        return Err(Failure::Usage("--d and --n must be at least 1".into()));
    }
    let data = match a.dist {
        SynthDist::Sphere => sample_sphere(a.d, a.n, a.seed)?,
        SynthDist::Cube => sample_cube(a.d, a.n, a.seed)?,
    };
    write_csv(&data, &a.out)?;
    eprintln!("wrote {} samples of dimension {} to {}", a.n, a.d, a.out.display());
    Ok(())
}

fn profile(a: ProfileArgs) -> Result<(), Failure> {
    let data = load_csv(&a.data, None, 0)?;
    let k = a.max_ell.max(a.activation.polynomial_degree().unwrap_or(0)).max(1);
    let hp = expand_activation(&a.activation, k, rfconc_core::hermite::DEFAULT_TOL)?;
    let mut prof = orthogonality_profile(&data, a.max_ell);
    let chosen = select_ell(&mut prof, &hp);
    let mut out = std::io::stdout().lock();
    writeln!(out, "d = {}, n = {}", data.d(), data.n())?;
    writeln!(out, "eps_n = {:.6e} (angle_ok = {})", prof.eps_n, prof.angle_ok)?;
    writeln!(out, "{:>4} {:>14} {:>14} {:>6}", "ell", "delta", "threshold", "ok")?;
    for (ell, delta) in prof.deltas.iter().enumerate() {
        let thr = admissibility_threshold(&hp, ell)?;
        writeln!(out, "{ell:>4} {delta:>14.6e} {thr:>14.6e} {:>6}", *delta <= thr && thr > 0.0)?;
    }
    match chosen {
        Ok(l) => writeln!(out, "chosen ell = {l} (cond13_ok = {})", prof.cond13_ok)?,
        Err(e) => writeln!(out, "chosen ell = none ({e})")?,
    }
    Ok(())
}

fn hermite(a: HermiteArgs) -> Result<(), Failure> {
    if !(a.tol > 0.0) {
        return Err(Failure::Usage("--tol must be positive".into()));
    }
    let hp = expand_activation(&a.activation, a.max_degree, a.tol)?;
    let mut out = std::io::stdout().lock();
    let mut cum = 0.0;
    match a.format {
        Format::Csv => {
            writeln!(out, "k,zeta,cumulative_sq,tail_mass")?;
            for k in 0..=a.max_degree {
                cum += hp.coeff(k).powi(2);
                writeln!(out, "{k},{:.16e},{cum:.16e},{:.16e}", hp.coeff(k), hp.tail_mass(k)?)?;
            }
            eprintln!("l2_norm_sq = {:.16e}, l4_norm = {:.16e}", hp.l2_norm_sq, hp.l4_norm);
        }
        Format::Table => {
            writeln!(out, "activation: {}", a.activation)?;
            writeln!(out, "||sigma||_2^2 = {:.12}", hp.l2_norm_sq)?;
            writeln!(out, "||sigma||_4   = {:.12}", hp.l4_norm)?;
            writeln!(out, "{:>4} {:>20} {:>20} {:>20}", "k", "zeta_k", "sum zeta^2", "tail sigma^2_>k")?;
            for k in 0..=a.max_degree {
                cum += hp.coeff(k).powi(2);
                writeln!(out, "{k:>4} {:>20.12e} {cum:>20.12e} {:>20.12e}", hp.coeff(k), hp.tail_mass(k)?)?;
            }
        }
    }
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> Result<(), Failure> {
    let data = match &a.data {
        Some(p) => DataConfig {
            dist: Distribution::Csv,
            d: None,
            n: a.n,
            path: Some(p.clone()),
            feature_subsample: a.d,
        },
        None => DataConfig {
            dist: match a.dist {
                SynthDist::Sphere => Distribution::Sphere,
                SynthDist::Cube => Distribution::Cube,
            },
            ..DataConfig::sphere(a.d.unwrap_or(0), a.n.unwrap_or(0))
        },
    };
    if let Some(i) = data.issues().first() {
        return Err(Failure::Usage(i.to_string()));
    }
    if a.n_features == 0 || !(a.lambda >= 0.0) || a.b < 2 || a.m == 0 || !(a.sigma_eps >= 0.0) {
        return Err(Failure::Usage("need --N >= 1, --lambda >= 0, --B >= 2, --M >= 1, --sigma-eps >= 0".into()));
    }
    let mut cfg = CompareConfig::new(data, a.activation, a.tau, a.n_features, a.lambda, a.seed);
    cfg.sigma_eps = a.sigma_eps;
    cfg.ell = a.ell;
    cfg.b = a.b;
    cfg.m = a.m;
    cfg.k_max = a.k_max;
    let r = compare(&cfg)?;

    let mut out = std::io::stdout().lock();
    writeln!(out, "ell = {}", r.ell)?;
    writeln!(out, "{:<6} {:>14} {:>14} {:>14} {:>14} {:>12}", "model", "E_train", "LOOCV", "GCV", "test", "test_se")?;
    let gcv = |g: Option<f64>| g.map_or("-".to_string(), |v| format!("{v:.8e}"));
    for e in &r.estimators {
        writeln!(
            out,
            "{:<6} {:>14.8e} {:>14.8e} {:>14} {:>14.8e} {:>12.4e}",
            e.name,
            e.train,
            e.loocv,
            gcv(e.gcv),
            e.test.mean,
            e.test.stderr
        )?;
    }
    writeln!(out, "absolute differences")?;
    for (i, j, d) in &r.test_diffs {
        let (x, y) = (&r.estimators[*i], &r.estimators[*j]);
        let g = match (x.gcv, y.gcv) {
            (Some(p), Some(q)) => format!("{:.8e}", (p - q).abs()),
            _ => "-".into(),
        };
        writeln!(
            out,
            "{:<11} {:>14.8e} {:>14.8e} {:>14} {:>14.8e} {:>12.4e}",
            format!("{}-{}", x.name, y.name),
            (x.train - y.train).abs(),
            (x.loocv - y.loocv).abs(),
            g,
            d.mean.abs(),
            d.stderr
        )?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let cfg = config::load(&a.config, a.scale).map_err(|e| Failure::Usage(e.to_string()))?;
    if a.check {
        eprintln!("{}: ok (config hash {})", a.config.display(), cfg.hash());
        return Ok(());
    }
    if a.threads == Some(0) {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    let out = a.out.expect("clap enforces --out without --check");
    let result = with_threads(a.threads, || run_sweep(&cfg))?;
    emit_csv(&result, &out)?;
    eprintln!(
        "wrote {} rows to {} (baseline {}, ell {}, config {}, seed {})",
        result.rows.len(),
        out.display(),
        result.kernel_baseline,
        result.ell.map_or("-".to_string(), |l| l.to_string()),
        result.provenance.config_hash,
        result.provenance.root_seed
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let rows = parse_csv(&a.input)?;
    let table = slope_table(&rows, a.threshold);
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<14} {:>10} {:>10} {:>11} {:>7} {:>5}", "metric", "lambda", "slope", "intercept", "points", "pass")?;
    let mut failed = 0;
    for r in &table {
        match &r.fit {
            Ok(f) => writeln!(
                out,
                "{:<14} {:>10} {:>10.4} {:>11.4} {:>7} {:>5}",
                r.metric.as_str(),
                r.lambda,
                f.slope,
                f.intercept,
                f.points,
                if r.pass { "yes" } else { "no" }
            )?,
            Err(e) => writeln!(out, "{:<14} {:>10} {e}", r.metric.as_str(), r.lambda)?,
        }
        if !r.pass {
            failed += 1;
        }
    }
    writeln!(out, "{} of {} slopes <= {}", table.len() - failed, table.len(), a.threshold)?;
    Ok(())
}
