//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adversary::{self, GreedyOptions};
use crate::algolib::{catalog, AlgorithmName, CatalogParams, Realization};
use crate::certifier::{certify_rate, verify_certificate, CertificateFile, ProblemClass};
use crate::error::{Error, Result};
use crate::netsim::{self, empirical_rate, LaplacianSequence};
use crate::svl::design;
use crate::toolkit::{matrix_to_rows, rows_to_matrix};
use crate::tuner::{self, CurveOptions, Family, TuneOptions};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  bad configuration (unknown algorithm, missing or invalid parameters, unreadable files)
  2  uncertifiable rate, infeasible design or no admissible Laplacian
  3  numerical or solver failure";

#[derive(Debug, Parser)]
#[command(name = "distcert", version, about = "Rate certificates, tuning and worst-case search for distributed optimization algorithms", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify the linear rate of one algorithm.
    Certify(CertifyArgs),
    /// Compute the SVL parameters for a problem class.
    DesignSvl(DesignArgs),
    /// Tune the stepsize (and optionally μ) of one algorithm.
    Tune(TuneArgs),
    /// Tuned rate of several algorithms over a grid of spectral gaps.
    RateCurve(CurveArgs),
    /// Simulate an algorithm on random quadratics and random gossip matrices.
    Simulate(SimulateArgs),
    /// Greedy worst-case trajectory with Laplacian reconstruction.
    WorstCase(WorstCaseArgs),
    /// Find a Laplacian mapping stacked gossip inputs to outputs.
    ReconstructLaplacian(ReconstructArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ClassArgs {
    /// Condition ratio; implies m = 1 and L = kappa.
    #[arg(long, conflicts_with_all = ["m", "l"])]
    pub kappa: Option<f64>,
    /// Strong convexity parameter.
    #[arg(long, requires = "l")]
    pub m: Option<f64>,
    /// Smoothness parameter.
    #[arg(long = "L", id = "l", requires = "m")]
    pub l: Option<f64>,
}

impl ClassArgs {
    pub fn class(&self, sigma: f64) -> Result<ProblemClass> {
        match (self.kappa, self.m, self.l) {
            (Some(k), None, None) => ProblemClass::from_kappa(k, sigma),
            (None, Some(m), Some(l)) => ProblemClass::new(m, l, sigma),
            _ => Err(Error::InvalidParameter("give either --kappa or both --m and --L".into())),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AlgArgs {
    /// Catalog name: EXTRA, NIDS, DIGing, AugDGM, ExDiff, uDIG, uEXTRA, SVL.
    #[arg(long, conflicts_with = "alg_file")]
    pub alg: Option<String>,
    /// Algorithm definition in JSON.
    #[arg(long)]
    pub alg_file: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// SVL parameters; when omitted SVL uses its designed values.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub alg: AlgArgs,
    #[command(flatten)]
    pub class: ClassArgs,
    #[arg(long)]
    pub sigma: f64,
    /// Bisection tolerance on the rate.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Where to write the certificate JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub class: ClassArgs,
    #[arg(long)]
    pub sigma: f64,
    /// Bisection width on the rate.
    #[arg(long, default_value_t = 1e-9)]
    pub eps: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub alg: AlgArgs,
    #[command(flatten)]
    pub class: ClassArgs,
    #[arg(long)]
    pub sigma: f64,
    /// Tune μ jointly with α.
    #[arg(long)]
    pub tune_mu: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Comma-separated catalog names; all eight when omitted.
    #[arg(long)]
    pub alg: Option<String>,
    #[arg(long)]
    pub kappa: f64,
    /// Comma-separated values or `lo:hi:count`.
    #[arg(long, default_value = "0:0.96:25")]
    pub sigma_grid: String,
    /// Keep μ = 1 instead of tuning it.
    #[arg(long)]
    pub fixed_mu: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub alg: AlgArgs,
    #[command(flatten)]
    pub class: ClassArgs,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reuse one gossip matrix for every iteration.
    #[arg(long)]
    pub constant_graph: bool,
    /// Iterations skipped before fitting the empirical rate.
    #[arg(long, default_value_t = 20)]
    pub burn_in: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WorstCaseArgs {
    #[command(flatten)]
    pub alg: AlgArgs,
    #[command(flatten)]
    pub class: ClassArgs,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 60)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Skip the per-step Laplacian reconstruction.
    #[arg(long)]
    pub no_reconstruct: bool,
    #[arg(long, default_value_t = 20)]
    pub burn_in: usize,
    /// Trajectory CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step JSON report destination.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// JSON file with `z` and `v`, one row per agent.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct GossipSignals {
    z: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Exit status for an error, following the taxonomy in `--help`.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Uncertifiable { .. }
        | Error::DesignInfeasible(_)
        | Error::Infeasible(_)
        | Error::NoLaplacian(_) => 2,
        Error::Solver(_) | Error::Singular(_) | Error::Numeric(_) | Error::InsufficientData(_) => 3,
        _ => 1,
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Certify(a) => cmd_certify(&a),
        Command::DesignSvl(a) => cmd_design_svl(&a),
        Command::Tune(a) => cmd_tune(&a),
        Command::RateCurve(a) => cmd_rate_curve(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::WorstCase(a) => cmd_worst_case(&a),
        Command::ReconstructLaplacian(a) => cmd_reconstruct(&a),
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if (0.0..1.0).contains(&sigma) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("sigma must lie in [0, 1), got {sigma}")))
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Loads an algorithm from a definition file and checks it is usable.
pub fn load_algorithm_file(path: &Path) -> Result<Realization> {
    let text = fs::read_to_string(path)?;
    let r = Realization::from_json(&text)?;
    if !r.check_fixed_point() {
        return Err(Error::InvalidAlgorithm(format!(
            "{}: no state satisfies the fixed-point conditions (need a state p with (A-I)p = 0, F_x p = 0 and C_y p != 0, and gradient/gossip directions consistent with them)",
            path.display()
        )));
    }
    if !r.check_implementable() {
        return Err(Error::InvalidAlgorithm(format!(
            "{}: signals cannot be evaluated in any order within one iteration",
            path.display()
        )));
    }
    Ok(r)
}

impl AlgArgs {
    fn name(&self) -> Result<Option<AlgorithmName>> {
        match (&self.alg, &self.alg_file) {
            (Some(n), None) => Ok(Some(n.parse()?)),
            (None, Some(_)) => Ok(None),
            _ => Err(Error::InvalidParameter("give exactly one of --alg and --alg-file".into())),
        }
    }

    fn svl_given(&self) -> bool {
        self.alpha.is_some() || self.beta.is_some() || self.gamma.is_some() || self.delta.is_some()
    }

    /// Concrete realization; SVL falls back to its design when no parameter is given.
    fn realization(&self, pc: &ProblemClass) -> Result<Realization> {
        let Some(name) = self.name()? else {
            return load_algorithm_file(self.alg_file.as_deref().expect("checked by name()"));
        };
        if name == AlgorithmName::Svl && !self.svl_given() {
            return design(pc, 1e-9)?.realization();
        }
        let params = CatalogParams {
            alpha: self.alpha,
            mu: Some(self.mu.unwrap_or(1.0)),
            beta: self.beta,
            gamma: self.gamma,
            delta: self.delta,
            m: Some(pc.m),
            l: Some(pc.l),
        };
        catalog(name, &params)
    }
}

fn cmd_certify(a: &CertifyArgs) -> Result<()> {
    check_sigma(a.sigma)?;
    let pc = a.class.class(a.sigma)?;
    let r = a.alg.realization(&pc)?;
    let start = Instant::now();
    let (rho, cert) = certify_rate(&r, &pc, a.tol)?;
    let wall = start.elapsed().as_secs_f64();
    let report = verify_certificate(&r, &pc, &cert)?;
    let file = CertificateFile::new(&cert, Some(&report));
    if let Some(path) = &a.out {
        fs::write(path, cert.to_json(Some(&report))?)?;
    }
    print_json(&json!({
        "algorithm": r.name,
        "rho": rho,
        "margins": file.margins,
        "verified": report.passed,
        "wall_time": wall,
    }))
}

fn cmd_design_svl(a: &DesignArgs) -> Result<()> {
    check_sigma(a.sigma)?;
    let pc = a.class.class(a.sigma)?;
    if !(a.eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {}", a.eps)));
    }
    let d = design(&pc, a.eps)?;
    let text = d.to_json()?;
    if let Some(path) = &a.out {
        fs::write(path, &text)?;
    }
    write_or_print(None, &text)
}

fn cmd_tune(a: &TuneArgs) -> Result<()> {
    check_sigma(a.sigma)?;
    let pc = a.class.class(a.sigma)?;
    let opts = TuneOptions {
        rate_tol: a.tol,
        seed: a.seed,
        ..TuneOptions::default()
    };
    let family = match a.alg.name()? {
        Some(AlgorithmName::Svl) => {
            let d = design(&pc, 1e-9)?;
            let out = json!({
                "algorithm": "SVL",
                "alpha": d.alpha,
                "beta": d.beta,
                "gamma": d.gamma,
                "delta": d.delta,
                "rho": d.rho,
            });
            return finish_json(&out, a.out.as_deref());
        }
        Some(name) => Family::catalog(name, a.alg.mu.unwrap_or(1.0)),
        None => {
            return Err(Error::InvalidParameter(
                "tuning needs a catalog algorithm; definition files have fixed parameters".into(),
            ))
        }
    };
    let tuned = if a.tune_mu {
        tuner::tune_alpha_mu(&family, &pc, None, &opts)?
    } else {
        tuner::tune_alpha(&family, &pc, tuner::default_bracket(&pc), &opts)?
    };
    let out = json!({
        "algorithm": family.name.label(),
        "alpha": tuned.alpha,
        "mu": tuned.mu,
        "rho": tuned.rho,
        "evaluations": tuned.evaluations,
    });
    finish_json(&out, a.out.as_deref())
}

fn finish_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(p) = out {
        fs::write(p, &text)?;
    }
    write_or_print(None, &text)
}

/// Parses `a,b,c` or `lo:hi:count` into a strictly increasing grid.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidParameter(format!("cannot parse sigma grid `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    let grid = if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        match count {
            0 => return Err(bad()),
            1 => vec![lo],
            _ => (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect(),
        }
    } else if parts.len() == 1 {
        text.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?
    } else {
        return Err(bad());
    };
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("sigma grid must be nonempty and increasing".into()));
    }
    Ok(grid)
}

fn cmd_rate_curve(a: &CurveArgs) -> Result<()> {
    let families = match &a.alg {
        Some(list) => list
            .split(',')
            .map(|s| s.parse::<AlgorithmName>())
            .collect::<Result<Vec<_>>>()?,
        None => AlgorithmName::ALL.to_vec(),
    };
    let grid = parse_grid(&a.sigma_grid)?;
    let opts = CurveOptions {
        tune_mu: !a.fixed_mu,
        tune: TuneOptions {
            rate_tol: a.tol,
            seed: a.seed,
            ..TuneOptions::default()
        },
    };
    let curves = tuner::rate_curve(&families, a.kappa, &grid, &opts)?;
    let text = match a.format {
        Format::Csv => {
            let mut buf = Vec::new();
            tuner::write_rate_csv(&curves, &mut buf)?;
            String::from_utf8(buf).map_err(|e| Error::Numeric(e.to_string()))?
        }
        Format::Json => serde_json::to_string_pretty(&curves)?,
    };
    write_or_print(a.out.as_deref(), &text)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    check_sigma(a.sigma)?;
    let pc = a.class.class(a.sigma)?;
    let r = a.alg.realization(&pc)?;
    let (funcs, x0) = netsim::random_instance(a.n, a.d, pc.m, pc.l, a.seed)?;
    let laps = if a.constant_graph {
        LaplacianSequence::constant(a.n, a.sigma, a.iters, a.seed)?
    } else {
        LaplacianSequence::random(a.n, a.sigma, a.iters, a.seed)?
    };
    let init = netsim::canonical_init(&r, &funcs, &x0, &laps.laps[0])?;
    let mut traj = netsim::run(&r, &funcs, &laps, a.iters, &init)?;
    traj.meta.seed = Some(a.seed);
    let rate = empirical_rate(&traj, a.burn_in).ok();
    match a.format {
        Format::Csv => {
            let mut buf = Vec::new();
            traj.write_csv(&mut buf)?;
            let text = String::from_utf8(buf).map_err(|e| Error::Numeric(e.to_string()))?;
            write_or_print(a.out.as_deref(), &text)?;
            eprintln!(
                "{}",
                json!({"algorithm": r.name, "empirical_rate": rate, "iterations": traj.iterations()})
            );
            Ok(())
        }
        Format::Json => {
            let meta: serde_json::Value = serde_json::from_str(&traj.meta_json()?)?;
            let out = json!({
                "meta": meta,
                "empirical_rate": rate,
                "error_norms": traj.error_norms(),
            });
            write_or_print(a.out.as_deref(), &serde_json::to_string_pretty(&out)?)
        }
    }
}

#[derive(Debug, Serialize)]
struct WorstCaseSummary {
    algorithm: String,
    rho: f64,
    empirical_rate: Option<f64>,
    lyapunov_rate: Option<f64>,
    max_increment_ratio: f64,
    max_achieved_norm: Option<f64>,
    realized_rate: Option<f64>,
    steps: usize,
}

fn cmd_worst_case(a: &WorstCaseArgs) -> Result<()> {
    check_sigma(a.sigma)?;
    let pc = a.class.class(a.sigma)?;
    let r = a.alg.realization(&pc)?;
    let (rho, cert) = certify_rate(&r, &pc, a.tol)?;
    let opts = GreedyOptions {
        restarts: a.restarts,
        seed: a.seed,
    };
    let mut wc = adversary::worst_trajectory(&r, &pc, &cert, a.n, a.d, a.iters, &opts)?;
    let mut max_norm = None;
    let mut realized_rate = None;
    if !a.no_reconstruct {
        let worst = adversary::reconstruct_all(&mut wc)?;
        max_norm = Some(worst);
        if worst.is_finite() {
            let replay = adversary::realized_replay(&r, &wc)?;
            realized_rate = empirical_rate(&replay, a.burn_in).ok();
        }
    }
    let roots: Vec<f64> = wc.lyapunov().iter().map(|v| v.max(0.0).sqrt()).collect();
    let summary = WorstCaseSummary {
        algorithm: r.name.clone(),
        rho,
        empirical_rate: empirical_rate(&wc.trajectory, a.burn_in).ok(),
        lyapunov_rate: netsim::rate_from_errors(&roots, a.burn_in).ok(),
        max_increment_ratio: wc
            .reports
            .iter()
            .map(|s| s.increment / s.lyapunov)
            .fold(f64::NEG_INFINITY, f64::max),
        max_achieved_norm: max_norm,
        realized_rate,
        steps: wc.reports.len(),
    };
    if let Some(path) = &a.report {
        fs::write(path, wc.reports_json()?)?;
    }
    let mut buf = Vec::new();
    wc.trajectory.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).map_err(|e| Error::Numeric(e.to_string()))?;
    write_or_print(a.out.as_deref(), &text)?;
    let summary = serde_json::to_string(&summary)?;
    if a.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<()> {
    check_sigma(a.sigma)?;
    let signals: GossipSignals = serde_json::from_str(&fs::read_to_string(&a.input)?)?;
    let cols = signals.z.first().map_or(0, Vec::len);
    let z = rows_to_matrix(&signals.z, cols)?;
    let v = rows_to_matrix(&signals.v, cols)?;
    let (lap, norm) = adversary::reconstruct_laplacian(&z, &v)?;
    let accepted = norm <= a.sigma + 1e-6;
    let out = json!({
        "laplacian": matrix_to_rows(&lap),
        "achieved_norm": norm,
        "sigma": a.sigma,
        "accepted": accepted,
    });
    finish_json(&out, a.out.as_deref())?;
    if accepted {
        Ok(())
    } else {
        Err(Error::NoLaplacian(format!(
            "best gap {norm:.6} exceeds sigma = {}",
            a.sigma
        )))
    }
}
