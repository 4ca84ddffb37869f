//! Derivative-free tuning of algorithm parameters against the certified rate.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::algolib::{catalog, AlgorithmName, CatalogParams, Realization};
use crate::certifier::{certified_rate_bound, certify_rate, CertifyOptions, ProblemClass};
use crate::error::{Error, Result};
use crate::oracle::BarrierSolver;
use crate::svl::design;

/// Score given to parameter values that admit no certificate.
pub const UNCERTIFIABLE_SCORE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TuneOptions {
    /// Bisection width used while searching.
    pub score_tol: f64,
    /// Bisection width of the reported rate.
    pub rate_tol: f64,
    /// Relative step tolerance: Brent stops at `x_tol·width`, Nelder–Mead at diameter `x_tol`.
    pub x_tol: f64,
    /// Points of the logarithmic scan preceding Brent.
    pub grid: usize,
    pub restarts: usize,
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            score_tol: 1e-7,
            rate_tol: 1e-6,
            x_tol: 1e-5,
            grid: 24,
            restarts: 3,
            max_evals: 400,
            seed: 0,
        }
    }
}

/// An algorithm with its stepsize left free.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Family {
    pub name: AlgorithmName,
    pub mu: f64,
    /// `(β, γ, δ)` when the family is the SVL template.
    pub svl_shape: Option<(f64, f64, f64)>,
}

impl Family {
    pub fn catalog(name: AlgorithmName, mu: f64) -> Self {
        Self { name, mu, svl_shape: None }
    }

    pub fn svl(beta: f64, gamma: f64, delta: f64) -> Self {
        Self {
            name: AlgorithmName::Svl,
            mu: 1.0,
            svl_shape: Some((beta, gamma, delta)),
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn realization(&self, alpha: f64, pc: &ProblemClass) -> Result<Realization> {
        let params = match (self.name, self.svl_shape) {
            (AlgorithmName::Svl, Some((b, g, d))) => CatalogParams::svl(alpha, b, g, d),
            (AlgorithmName::Svl, None) => {
                return Err(Error::MissingParameter {
                    algorithm: "SVL",
                    param: "beta",
                })
            }
            _ => CatalogParams::new(alpha, self.mu).with_class(pc.m, pc.l),
        };
        catalog(self.name, &params)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tuned {
    pub alpha: f64,
    pub mu: f64,
    pub rho: f64,
    pub evaluations: usize,
}

/// `[1e-3/L, 4/m]`.
pub fn default_bracket(pc: &ProblemClass) -> (f64, f64) {
    (1e-3 / pc.l, 4.0 / pc.m)
}

/// Bisected rate of the family at `alpha`, or [`UNCERTIFIABLE_SCORE`].
pub fn score(family: &Family, pc: &ProblemClass, alpha: f64, tol: f64) -> f64 {
    if !(alpha > 0.0 && alpha.is_finite() && family.mu > 0.0) {
        return UNCERTIFIABLE_SCORE;
    }
    let Ok(r) = family.realization(alpha, pc) else {
        return UNCERTIFIABLE_SCORE;
    };
    let opts = CertifyOptions {
        tol,
        ..CertifyOptions::default()
    };
    match certified_rate_bound(&r, pc, &opts, &BarrierSolver) {
        Ok(rho) => rho.min(UNCERTIFIABLE_SCORE),
        Err(_) => UNCERTIFIABLE_SCORE,
    }
}

fn final_rate(family: &Family, pc: &ProblemClass, alpha: f64, tol: f64) -> Option<f64> {
    let r = family.realization(alpha, pc).ok()?;
    certify_rate(&r, pc, tol).ok().map(|(rho, _)| rho)
}

/// Brent's golden-section / parabolic minimizer on `[a, b]`; returns `(x, f(x))`.
pub fn brent_minimize<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = if a < b { (a, b) } else { (b, a) };
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0_f64, 0.0_f64);
    for _ in 0..max_iter {
        let mid = 0.5 * (a + b);
        let tol1 = tol + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < mid { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < mid { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu < fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, fx)
}

/// Nelder–Mead on a 2-D simplex until its diameter drops below `x_tol`.
/// Returns the best vertex, its value and the number of evaluations.
pub fn nelder_mead<F: FnMut([f64; 2]) -> f64>(
    mut f: F,
    simplex: [[f64; 2]; 3],
    x_tol: f64,
    max_evals: usize,
) -> Result<([f64; 2], f64, usize)> {
    let area = ((simplex[1][0] - simplex[0][0]) * (simplex[2][1] - simplex[0][1])
        - (simplex[2][0] - simplex[0][0]) * (simplex[1][1] - simplex[0][1]))
        .abs();
    let diameter = diameter_of(&simplex);
    if !(diameter > 0.0) || area <= 1e-12 * diameter * diameter {
        return Err(Error::InvalidParameter("degenerate initial simplex".into()));
    }
    let mut pts: Vec<([f64; 2], f64)> = simplex.iter().map(|&p| (p, f(p))).collect();
    let mut evals = 3;
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    while evals < max_evals {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let verts = [pts[0].0, pts[1].0, pts[2].0];
        if diameter_of(&verts) < x_tol {
            break;
        }
        let centroid = [(pts[0].0[0] + pts[1].0[0]) / 2.0, (pts[0].0[1] + pts[1].0[1]) / 2.0];
        let worst = pts[2];
        let reflected = lerp(centroid, worst.0, -1.0);
        let fr = f(reflected);
        evals += 1;
        if fr < pts[0].1 {
            let expanded = lerp(centroid, worst.0, -2.0);
            let fe = f(expanded);
            evals += 1;
            pts[2] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < pts[1].1 {
            pts[2] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < worst.1 {
                let c = lerp(centroid, worst.0, -0.5);
                (c, f(c))
            } else {
                let c = lerp(centroid, worst.0, 0.5);
                (c, f(c))
            };
            evals += 1;
            if fc < worst.1.min(fr) {
                pts[2] = (contracted, fc);
            } else {
                let best = pts[0].0;
                for p in pts.iter_mut().skip(1) {
                    let s = lerp(best, p.0, 0.5);
                    *p = (s, f(s));
                    evals += 1;
                }
            }
        }
    }
    pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok((pts[0].0, pts[0].1, evals))
}

fn diameter_of(pts: &[[f64; 2]]) -> f64 {
    let mut d = 0.0_f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d = d.max(((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt());
        }
    }
    d
}

fn svl_tuned(pc: &ProblemClass) -> Result<Tuned> {
    let d = design(pc, 1e-9)?;
    Ok(Tuned {
        alpha: d.alpha,
        mu: 1.0,
        rho: d.rho,
        evaluations: 0,
    })
}

/// Minimizes the certified rate over the stepsize inside `bracket`.
pub fn tune_alpha(family: &Family, pc: &ProblemClass, bracket: (f64, f64), opts: &TuneOptions) -> Result<Tuned> {
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid stepsize bracket [{lo}, {hi}]")));
    }
    let n = opts.grid.max(3);
    let grid: Vec<f64> = (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect();
    let scores: Vec<f64> = grid.iter().map(|&a| score(family, pc, a, opts.score_tol)).collect();
    let mut evaluations = n;
    let best = (0..n).min_by(|&i, &j| scores[i].total_cmp(&scores[j])).unwrap_or(0);
    if scores[best] >= UNCERTIFIABLE_SCORE {
        return Err(Error::Uncertifiable {
            rho_hi: UNCERTIFIABLE_SCORE,
        });
    }
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(n - 1)];
    let (mut alpha, mut value) = brent_minimize(
        |x| {
            evaluations += 1;
            score(family, pc, x, opts.score_tol)
        },
        a,
        b,
        opts.x_tol * (hi - lo),
        200,
    );
    if scores[best] < value {
        alpha = grid[best];
        value = scores[best];
    }
    let rho = final_rate(family, pc, alpha, opts.rate_tol).unwrap_or(value);
    Ok(Tuned {
        alpha,
        mu: family.mu,
        rho,
        evaluations,
    })
}

fn simplex_around(alpha: f64, mu: f64) -> [[f64; 2]; 3] {
    [[alpha, mu], [1.3 * alpha, mu], [alpha, 1.3 * mu]]
}

/// Minimizes the certified rate over `(α, μ)`; SVL returns its design unchanged.
///
/// Without an explicit simplex the search starts from the best stepsize at
/// `μ = 1`, from `(2/(L+m), 1)`, and from `opts.restarts` random points.
pub fn tune_alpha_mu(
    family: &Family,
    pc: &ProblemClass,
    init: Option<[[f64; 2]; 3]>,
    opts: &TuneOptions,
) -> Result<Tuned> {
    if family.name == AlgorithmName::Svl {
        return svl_tuned(pc);
    }
    let objective = |p: [f64; 2]| score(&family.with_mu(p[1]), pc, p[0], opts.score_tol);
    let mut starts = Vec::new();
    let mut anchor: Option<Tuned> = None;
    match init {
        Some(s) => {
            if s.iter().any(|p| !(p[0] > 0.0)) {
                return Err(Error::InvalidParameter("simplex must lie in the positive-stepsize half-plane".into()));
            }
            starts.push(s);
        }
        None => {
            let (lo, hi) = default_bracket(pc);
            let t = tune_alpha(&family.with_mu(1.0), pc, (lo, hi), opts);
            if let Ok(t) = t {
                starts.push(simplex_around(t.alpha, 1.0));
                anchor = Some(t);
            }
            starts.push(simplex_around(2.0 / (pc.l + pc.m), 1.0));
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            for _ in 0..opts.restarts {
                let alpha = lo * (hi / lo).powf(rng.random_range(0.0..1.0));
                let mu = rng.random_range(0.5..1.5);
                starts.push(simplex_around(alpha, mu));
            }
        }
    }
    let mut evaluations = anchor.map_or(0, |t| t.evaluations);
    let mut best: Option<([f64; 2], f64)> = None;
    for s in starts {
        let (p, v, used) = nelder_mead(objective, s, opts.x_tol, opts.max_evals)?;
        evaluations += used;
        if best.is_none_or(|b| v < b.1) {
            best = Some((p, v));
        }
    }
    let (p, v) = best.ok_or_else(|| Error::InvalidParameter("no starting simplex".into()))?;
    let found = if v < UNCERTIFIABLE_SCORE {
        let fam = family.with_mu(p[1]);
        let rho = final_rate(&fam, pc, p[0], opts.rate_tol).unwrap_or(v);
        Some(Tuned {
            alpha: p[0],
            mu: p[1],
            rho,
            evaluations,
        })
    } else {
        None
    };
    let chosen = match (found, anchor) {
        (Some(f), Some(a)) if a.rho < f.rho => Tuned { evaluations, ..a },
        (Some(f), _) => f,
        (None, Some(a)) => Tuned { evaluations, ..a },
        (None, None) => {
            return Err(Error::Uncertifiable {
                rho_hi: UNCERTIFIABLE_SCORE,
            })
        }
    };
    Ok(chosen)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatePoint {
    pub sigma: f64,
    pub rho: Option<f64>,
    pub alpha: Option<f64>,
    pub mu: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateCurve {
    pub algorithm: String,
    pub kappa: f64,
    pub points: Vec<RatePoint>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveOptions {
    /// Tune `μ` as well as `α`; otherwise `μ = 1`.
    pub tune_mu: bool,
    pub tune: TuneOptions,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            tune_mu: true,
            tune: TuneOptions::default(),
        }
    }
}

fn curve_point(name: AlgorithmName, kappa: f64, sigma: f64, opts: &CurveOptions) -> RatePoint {
    let outcome = ProblemClass::from_kappa(kappa, sigma).and_then(|pc| {
        if name == AlgorithmName::Svl {
            let d = design(&pc, 1e-9)?;
            return Ok((d.rho, d.alpha, None));
        }
        let family = Family::catalog(name, 1.0);
        let t = if opts.tune_mu {
            tune_alpha_mu(&family, &pc, None, &opts.tune)?
        } else {
            tune_alpha(&family, &pc, default_bracket(&pc), &opts.tune)?
        };
        Ok((t.rho, t.alpha, Some(t.mu)))
    });
    match outcome {
        Ok((rho, alpha, mu)) => RatePoint {
            sigma,
            rho: Some(rho),
            alpha: Some(alpha),
            mu,
            status: "ok".into(),
        },
        Err(e) => RatePoint {
            sigma,
            rho: None,
            alpha: None,
            mu: None,
            status: match e {
                Error::Uncertifiable { .. } => "uncertifiable".into(),
                other => format!("error: {other}").replace(',', ";"),
            },
        },
    }
}

/// Tuned rate of every family at every `σ`; SVL comes from its design.
pub fn rate_curve(
    families: &[AlgorithmName],
    kappa: f64,
    sigma_grid: &[f64],
    opts: &CurveOptions,
) -> Result<Vec<RateCurve>> {
    if sigma_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("sigma grid must be strictly increasing".into()));
    }
    if let Some(s) = sigma_grid.iter().find(|s| !(0.0..1.0).contains(*s)) {
        return Err(Error::InvalidParameter(format!("sigma {s} outside [0, 1)")));
    }
    if !(kappa >= 1.0) {
        return Err(Error::InvalidParameter(format!("kappa must be at least 1, got {kappa}")));
    }
    let jobs: Vec<(usize, f64)> = (0..families.len())
        .flat_map(|f| sigma_grid.iter().map(move |&s| (f, s)))
        .collect();
    let points: Vec<RatePoint> = jobs
        .par_iter()
        .map(|&(f, s)| curve_point(families[f], kappa, s, opts))
        .collect();
    let mut it = points.into_iter();
    Ok(families
        .iter()
        .map(|name| RateCurve {
            algorithm: name.label().to_string(),
            kappa,
            points: it.by_ref().take(sigma_grid.len()).collect(),
        })
        .collect())
}

fn opt_field(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.10}"))
}

pub fn write_rate_csv<W: Write>(curves: &[RateCurve], mut out: W) -> Result<()> {
    writeln!(out, "algorithm,kappa,sigma,rho,alpha,mu,status")?;
    for c in curves {
        for p in &c.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.algorithm,
                c.kappa,
                p.sigma,
                opt_field(p.rho),
                opt_field(p.alpha),
                opt_field(p.mu),
                p.status
            )?;
        }
    }
    Ok(())
}
