//! SVL: a two-state template whose parameters are chosen in closed form
//! from the rate, plus its rank-one certificate and the inexact-ADMM view.

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algolib::{catalog, AlgorithmName, CatalogParams, Realization};
use crate::certifier::{Certificate, ProblemClass};
use crate::error::{Error, Result};
use crate::netsim::random_laplacian;
use crate::toolkit::{Matrix, Vector};

/// Below this `κ - 1` the consensus closed form replaces the bisection.
pub const KAPPA_ONE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvlDesign {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub rho: f64,
    #[serde(skip)]
    pub eta: f64,
    pub kappa: f64,
    pub sigma: f64,
    #[serde(skip)]
    pub m: f64,
}

impl SvlDesign {
    pub fn realization(&self) -> Result<Realization> {
        catalog(
            AlgorithmName::Svl,
            &CatalogParams::svl(self.alpha, self.beta, self.gamma, self.delta),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `(2β-(1-ρ)(κ+1))(β-1+ρ²)`, negative inside the admissible region.
    pub fn region_value(&self) -> f64 {
        region_value(self.beta, self.rho, self.kappa)
    }
}

fn eta(rho: f64, kappa: f64) -> f64 {
    1.0 + rho - kappa * (1.0 - rho)
}

pub fn region_value(beta: f64, rho: f64, kappa: f64) -> f64 {
    (2.0 * beta - (1.0 - rho) * (kappa + 1.0)) * (beta - 1.0 + rho * rho)
}

const POLE_TOL: f64 = 1e-12;

/// Largest spectral gap certified by `(β, ρ)` at condition ratio `κ`.
pub fn sigma_squared(beta: f64, rho: f64, kappa: f64) -> Result<f64> {
    let e = eta(rho, kappa);
    let r2 = rho * rho;
    let d1 = beta - 1.0 + rho;
    let d2 = 2.0 * r2 * beta - (1.0 - r2) * e;
    let d3 = (1.0 + rho) * (e - 2.0 * e * rho + 2.0 * r2) - (2.0 * r2 + e) * beta;
    for (label, d) in [
        ("β-1+ρ", d1),
        ("2ρ²β-(1-ρ²)η", d2),
        ("(1+ρ)(η-2ηρ+2ρ²)-(2ρ²+η)β", d3),
    ] {
        if d.abs() <= POLE_TOL {
            return Err(Error::Singular(format!("denominator {label} vanishes")));
        }
    }
    Ok(r2 * ((beta - 1.0 + r2) / d1)
        * ((2.0 - e - 2.0 * beta) / d2)
        * (((2.0 * r2 + e) * beta - (1.0 - r2) * e) / d3))
}

/// Coefficients `(s0, s1, s2, s3)` of the cubic whose root maximizes `σ²` over `β`.
pub fn cubic_coeffs(rho: f64, kappa: f64) -> (f64, f64, f64, f64) {
    let e = eta(rho, kappa);
    let r = rho;
    let r2 = r * r;
    let s0 = e * (1.0 - r2).powi(2) * (e - (3.0 - e) * e * r + 2.0 * (1.0 - e) * r2 + 2.0 * r2 * r);
    let s1 = -(1.0 - r2)
        * (e.powi(3) * r + 4.0 * r.powi(5) - 2.0 * e * r2 * (2.0 * r2 + r - 3.0)
            + e * e * (4.0 * r2 * r - 4.0 * r2 - 6.0 * r + 3.0));
    let s2 = 3.0 * e * (1.0 - r).powi(2) * (1.0 + r) * (2.0 * r2 + e);
    let s3 = (2.0 * r2 + e) * (2.0 * r2 * r - e);
    (s0, s1, s2, s3)
}

/// All roots of `c0 + c1 x + c2 x² + c3 x³` (fewer when the leading terms vanish).
pub fn cubic_roots(c0: f64, c1: f64, c2: f64, c3: f64) -> Vec<Complex<f64>> {
    let scale = c0.abs().max(c1.abs()).max(c2.abs()).max(c3.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if c3.abs() <= 1e-14 * scale {
        if c2.abs() <= 1e-14 * scale {
            if c1 == 0.0 {
                return Vec::new();
            }
            return vec![Complex::new(-c0 / c1, 0.0)];
        }
        let disc = Complex::new(c1 * c1 - 4.0 * c2 * c0, 0.0).sqrt();
        return vec![(-c1 + disc) / (2.0 * c2), (-c1 - disc) / (2.0 * c2)];
    }
    let (b, c, d) = (c2 / c3, c1 / c3, c0 / c3);
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if p == 0.0 && q == 0.0 {
        return vec![Complex::new(-shift, 0.0); 3];
    }
    if disc > 0.0 {
        let sd = disc.sqrt();
        let u = (-q / 2.0 + sd).cbrt();
        let v = (-q / 2.0 - sd).cbrt();
        let t = u + v;
        let im = 3f64.sqrt() / 2.0 * (u - v);
        vec![
            Complex::new(t - shift, 0.0),
            Complex::new(-t / 2.0 - shift, im),
            Complex::new(-t / 2.0 - shift, -im),
        ]
    } else {
        let radius = 2.0 * (-p / 3.0).sqrt();
        let arg = ((3.0 * q) / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        let phi = arg.acos();
        (0..3)
            .map(|k| {
                let t = radius * (phi / 3.0 - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos();
                Complex::new(t - shift, 0.0)
            })
            .collect()
    }
}

/// The unique real root of the design cubic inside the admissible region.
pub fn beta_star(rho: f64, kappa: f64) -> Result<f64> {
    let (s0, s1, s2, s3) = cubic_coeffs(rho, kappa);
    let roots = cubic_roots(s0, s1, s2, s3);
    let poly = |x: f64| s0 + x * (s1 + x * (s2 + x * s3));
    let dpoly = |x: f64| s1 + x * (2.0 * s2 + 3.0 * x * s3);
    let mut valid = Vec::new();
    for z in &roots {
        if z.im.abs() > 1e-9 * z.re.abs().max(1.0) {
            continue;
        }
        let mut x = z.re;
        let slope = dpoly(x);
        if slope != 0.0 {
            let polished = x - poly(x) / slope;
            if polished.is_finite() {
                x = polished;
            }
        }
        if region_value(x, rho, kappa) < 0.0 {
            valid.push(x);
        }
    }
    if valid.len() == 1 {
        return Ok(valid[0]);
    }
    let listing = roots
        .iter()
        .map(|z| format!("{:.6}{:+.2e}i", z.re, z.im))
        .collect::<Vec<_>>()
        .join(", ");
    Err(Error::DesignInfeasible(format!(
        "{} admissible cubic roots at rho = {rho}, kappa = {kappa}: [{listing}]",
        valid.len()
    )))
}

fn sigma_hat_at(rho: f64, kappa: f64) -> Result<f64> {
    let b = beta_star(rho, kappa)?;
    let s2 = sigma_squared(b, rho, kappa)?;
    if !s2.is_finite() {
        return Err(Error::Numeric(format!("non-finite sigma at rho = {rho}")));
    }
    Ok(s2.max(0.0).sqrt())
}

/// Spectral gap certified at rate `rho` with the best `β`; zero below the gradient rate.
pub fn sigma_hat(rho: f64, kappa: f64) -> Result<f64> {
    let lower = (kappa - 1.0) / (kappa + 1.0);
    if rho <= lower {
        return Ok(0.0);
    }
    match sigma_hat_at(rho, kappa) {
        Ok(s) => Ok(s),
        // isolated degenerate rates (e.g. a triple root on the region boundary)
        Err(_) => {
            let h = 1e-7;
            let a = sigma_hat_at(rho - h, kappa)?;
            let b = sigma_hat_at(rho + h, kappa)?;
            Ok(0.5 * (a + b))
        }
    }
}

/// Chooses `(α, β, γ, δ)` and the rate for the given problem class.
pub fn design(pc: &ProblemClass, eps: f64) -> Result<SvlDesign> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let kappa = pc.kappa();
    let sigma = pc.sigma;
    if kappa - 1.0 <= KAPPA_ONE_TOL {
        let rho = sigma;
        return Ok(SvlDesign {
            alpha: 1.0 / pc.l,
            beta: 1.0,
            gamma: 2.0,
            delta: 1.0,
            rho,
            eta: eta(rho, kappa),
            kappa,
            sigma,
            m: pc.m,
        });
    }
    let lower = (kappa - 1.0) / (kappa + 1.0);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > eps {
        let rho = 0.5 * (lo + hi);
        if rho <= lower || sigma_hat(rho, kappa)? < sigma {
            lo = rho;
        } else {
            hi = rho;
        }
    }
    let rho = hi;
    let mut beta = match beta_star(rho, kappa) {
        Ok(b) => b,
        Err(_) => beta_star(rho + eps, kappa)
            .map_err(|e| Error::Numeric(format!("root polish failed near rho = {rho}: {e}")))?,
    };
    if sigma > 0.0 {
        beta = match_spectral_gap(beta, rho, kappa, sigma)?;
    }
    Ok(SvlDesign {
        alpha: (1.0 - rho) / pc.m,
        beta,
        gamma: 1.0 + beta,
        delta: 1.0,
        rho,
        eta: eta(rho, kappa),
        kappa,
        sigma,
        m: pc.m,
    })
}

/// Moves `β` from the maximizer toward `1-ρ²` until the certified gap equals `σ`.
///
/// On the plateau where the rate equals the gradient rate, the maximizer
/// certifies a larger gap than requested; the constraint pair is then met
/// with equality by a `β` between `1-ρ²` (where the gap vanishes) and the maximizer.
fn match_spectral_gap(beta_max: f64, rho: f64, kappa: f64, sigma: f64) -> Result<f64> {
    let target = sigma * sigma;
    let at_max = sigma_squared(beta_max, rho, kappa)?;
    if at_max <= target {
        return Ok(beta_max);
    }
    let floor = 1.0 - rho * rho;
    let (mut inside, mut outside) = (beta_max, floor);
    for _ in 0..200 {
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        match sigma_squared(mid, rho, kappa) {
            Ok(v) if v >= target => inside = mid,
            Ok(_) => outside = mid,
            Err(_) => outside = mid,
        }
    }
    Ok(inside)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedFormCertificate {
    pub t: [f64; 6],
    pub p11: f64,
    pub q: Matrix,
    pub r: f64,
    pub zeta: Vector,
}

impl ClosedFormCertificate {
    /// `-ζζᵀ/(t₂t₄)`, the exact value of the disagreement LMI.
    pub fn rank_one_block(&self) -> Matrix {
        -(&self.zeta * self.zeta.transpose()) / (self.t[1] * self.t[3])
    }

    /// Full certificate with `P = diag(P₁₁, p22)`; the consensus LMI does not see `p22`.
    pub fn to_certificate(&self, rho: f64, p22: f64) -> Certificate {
        Certificate {
            rho,
            p: Matrix::from_row_slice(2, 2, &[self.p11, 0.0, 0.0, p22]),
            q: self.q.clone(),
            r: Matrix::from_element(1, 1, self.r),
            margin: 0.0,
            r_projected: false,
        }
    }
}

pub fn closed_form_certificate(pc: &ProblemClass, d: &SvlDesign) -> Result<ClosedFormCertificate> {
    let (m, l) = (pc.m, pc.l);
    let (alpha, beta, rho, eta) = (d.alpha, d.beta, d.rho, d.eta);
    if region_value(beta, rho, pc.kappa()) >= 0.0 {
        return Err(Error::DesignInfeasible(format!(
            "beta = {beta} is outside the admissible region at rho = {rho}"
        )));
    }
    let r2 = rho * rho;
    let t1 = 2.0 * (1.0 - beta) - eta;
    let t2 = beta - 1.0 + r2;
    let t3 = beta * (eta + 2.0 * r2) - eta * (1.0 - r2);
    let t4 = 2.0 * beta * r2 - eta * (1.0 - r2);
    let kappa = pc.kappa();
    let t5 = (1.0 - beta - rho) * (beta * (eta + 2.0 * r2) - (1.0 - r2) * (1.0 - kappa + 2.0 * kappa * rho));
    let t6 = (2.0 - alpha * (l + m)) * (1.0 - r2).powi(2) - (2.0 * (1.0 - r2 * r2) - alpha * (l + m)) * beta;
    if t2.abs() <= POLE_TOL {
        return Err(Error::Singular("β = 1-ρ² makes t₂ vanish".into()));
    }
    if t4.abs() <= POLE_TOL {
        return Err(Error::Singular("t₄ vanishes".into()));
    }
    let checks = [
        (t3 > 0.0, "t₃ > 0"),
        (t1 / t4 > 0.0, "t₁/t₄ > 0"),
        (t5 / t2 >= 0.0, "t₅/t₂ ≥ 0"),
        (t2 * t4 > 0.0, "t₂t₄ > 0"),
    ];
    for (ok, label) in checks {
        if !ok {
            return Err(Error::DesignInfeasible(format!(
                "sign condition {label} fails; (β, ρ) = ({beta}, {rho}) violates the region constraint"
            )));
        }
    }
    let p11 = m * (l - m) / (rho * (1.0 - rho));
    let qs = t3 / (alpha * alpha * r2);
    let q = Matrix::from_row_slice(2, 2, &[qs * (1.0 + r2 * t1 / t4), -qs, -qs, qs]);
    let r = t5 / (alpha * alpha * t2);
    let zeta = Vector::from_vec(vec![
        t6,
        -t2 * t3,
        alpha * t2 * (2.0 - alpha * (l + m)),
        beta * (t3 - alpha * r2 * (l + m)),
    ]) / (alpha * rho);
    Ok(ClosedFormCertificate {
        t: [t1, t2, t3, t4, t5, t6],
        p11,
        q,
        r,
        zeta,
    })
}

/// Signals of one SVL round for all agents (each entry is 1 x d).
#[derive(Clone, Debug, PartialEq)]
pub struct SvlRound {
    pub v: Vec<Matrix>,
    pub y: Vec<Matrix>,
    pub u: Vec<Matrix>,
    pub x_next: Vec<Matrix>,
    pub w_next: Vec<Matrix>,
}

/// One round of the SVL template.
pub fn svl_step<G>(xs: &[Matrix], ws: &[Matrix], laplacian: &Matrix, mut gradient: G, d: &SvlDesign) -> Result<SvlRound>
where
    G: FnMut(usize, &Matrix) -> Matrix,
{
    let n = xs.len();
    if ws.len() != n || laplacian.shape() != (n, n) {
        return Err(Error::Dimension("state, auxiliary state and laplacian sizes differ".into()));
    }
    let v: Vec<Matrix> = (0..n)
        .map(|i| {
            let mut acc = Matrix::zeros(xs[i].nrows(), xs[i].ncols());
            for (j, x) in xs.iter().enumerate() {
                acc += x * laplacian[(i, j)];
            }
            acc
        })
        .collect();
    let y: Vec<Matrix> = (0..n).map(|i| &xs[i] - &v[i] * d.delta).collect();
    let u: Vec<Matrix> = (0..n).map(|i| gradient(i, &y[i])).collect();
    let x_next = (0..n)
        .map(|i| &xs[i] + &ws[i] * d.beta - &u[i] * d.alpha - &v[i] * d.gamma)
        .collect();
    let w_next = (0..n).map(|i| &ws[i] - &v[i]).collect();
    Ok(SvlRound { v, y, u, x_next, w_next })
}

/// Runs SVL and the inexact-ADMM recursion side by side and returns the
/// largest state mismatch over `steps` rounds.
///
/// The ADMM penalty is `β/α` and the dual variable maps to the auxiliary
/// state through `w^k = -(α/β) z^{k-1}`.
pub fn admm_equivalence_check(d: &SvlDesign, steps: usize, n: usize, seed: u64) -> Result<f64> {
    if d.beta == 0.0 {
        return Err(Error::InvalidParameter("the ADMM mapping needs beta != 0".into()));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two agents".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kappa = d.kappa.max(1.0);
    let curv: Vec<f64> = (0..n).map(|_| d.m * rng.random_range(1.0..=kappa)).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grad = |i: usize, y: f64| curv[i] * (y - targets[i]);
    let sigma = d.sigma.min(0.99);
    let laps: Vec<Matrix> = (0..steps)
        .map(|_| random_laplacian(n, sigma, &mut rng))
        .collect::<Result<_>>()?;

    let mut x: Vec<Matrix> = (0..n).map(|_| Matrix::from_element(1, 1, rng.random_range(-1.0..1.0))).collect();
    let mut w: Vec<Matrix> = vec![Matrix::zeros(1, 1); n];
    let penalty = d.beta / d.alpha;
    let mut ax: Vec<f64> = x.iter().map(|m| m[(0, 0)]).collect();
    let mut az: Vec<f64> = w.iter().map(|m| -penalty * m[(0, 0)]).collect();

    let mut worst = 0.0_f64;
    for lap in &laps {
        let round = svl_step(&x, &w, lap, |i, y| Matrix::from_element(1, 1, grad(i, y[(0, 0)])), d)?;
        x = round.x_next;
        w = round.w_next;

        let ay: Vec<f64> = (0..n)
            .map(|i| ax[i] - (0..n).map(|j| lap[(i, j)] * ax[j]).sum::<f64>())
            .collect();
        for i in 0..n {
            az[i] += penalty * (ax[i] - ay[i]);
        }
        ax = (0..n).map(|i| ay[i] - d.alpha * (grad(i, ay[i]) + az[i])).collect();

        for i in 0..n {
            let mapped_w = -(d.alpha / d.beta) * az[i];
            worst = worst
                .max((x[i][(0, 0)] - ax[i]).abs())
                .max((w[i][(0, 0)] - mapped_w).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pc(kappa: f64, sigma: f64) -> ProblemClass {
        ProblemClass::from_kappa(kappa, sigma).unwrap()
    }

    #[test]
    fn cubic_coefficients_example() {
        let (s0, s1, s2, s3) = cubic_coeffs(0.9, 10.0);
        assert!((s3 - 1.40616).abs() < 1e-12);
        assert!((s2 - 0.129276).abs() < 1e-9);
        assert!((s1 + 0.2871774).abs() < 1e-9);
        assert!((s0 - 0.02660931).abs() < 1e-9);
    }

    #[test]
    fn cubic_roots_examples() {
        // (x-1)(x-2)(x-3)
        let mut r: Vec<f64> = cubic_roots(-6.0, 11.0, -6.0, 1.0).iter().map(|z| z.re).collect();
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        // (x-2)(x²+1)
        let roots = cubic_roots(-2.0, 1.0, -2.0, 1.0);
        let real: Vec<_> = roots.iter().filter(|z| z.im.abs() < 1e-12).collect();
        assert_eq!(real.len(), 1);
        assert!((real[0].re - 2.0).abs() < 1e-12);
        // triple root
        assert!(cubic_roots(-1.0, 3.0, -3.0, 1.0).iter().all(|z| (z.re - 1.0).abs() < 1e-5));
    }

    #[test]
    fn sigma_squared_pole() {
        assert!(matches!(sigma_squared(1.0 - 0.7, 0.7, 10.0), Err(Error::Singular(_))));
    }

    #[test]
    fn beta_star_properties() {
        for (rho, kappa) in [(0.9, 10.0), (0.85, 10.0), (0.7, 2.0), (0.99, 100.0)] {
            let b = beta_star(rho, kappa).unwrap();
            assert!(region_value(b, rho, kappa) < 0.0);
            let (s0, s1, s2, s3) = cubic_coeffs(rho, kappa);
            assert!((s0 + s1 * b + s2 * b * b + s3 * b * b * b).abs() < 1e-10);
            let h = 1e-6;
            let f = |x| sigma_squared(x, rho, kappa).unwrap();
            assert!(((f(b + h) - f(b - h)) / (2.0 * h)).abs() < 1e-4);
            assert!(f(b + 1e-3) + f(b - 1e-3) - 2.0 * f(b) < 0.0);
        }
    }

    #[test]
    fn design_endpoints() {
        let d = design(&pc(10.0, 0.0), 1e-9).unwrap();
        assert!(d.rho > 9.0 / 11.0 && d.rho - 9.0 / 11.0 < 1e-8);
        assert!((d.alpha - 2.0 / 11.0).abs() < 1e-8);
        assert!(d.region_value() < 0.0);
        let d = design(&pc(10.0, 0.01), 1e-9).unwrap();
        assert!((d.rho - 9.0 / 11.0).abs() < 1e-3);
        let d = design(&pc(1.0 + 1e-6, 0.4), 1e-9).unwrap();
        assert!((d.alpha - 1.0 / d.kappa).abs() < 1e-6);
        assert_eq!((d.beta, d.gamma, d.delta), (1.0, 2.0, 1.0));
        for s in [0.3, 0.6, 0.9] {
            let d = design(&pc(1.001, s), 1e-9).unwrap();
            assert!((d.rho - s).abs() < 5e-3, "{s}: {}", d.rho);
        }
    }

    #[test]
    fn design_matches_reference_values() {
        for (kappa, sigma, want) in [
            (2.0, 0.3, 0.46829),
            (2.0, 0.6, 0.725914),
            (10.0, 0.6, 0.874191),
            (10.0, 0.9, 0.972686),
            (100.0, 0.9, 0.994738),
        ] {
            let d = design(&pc(kappa, sigma), 1e-9).unwrap();
            assert!((d.rho - want).abs() < 2e-6, "{kappa} {sigma}: {}", d.rho);
        }
    }

    #[test]
    fn degenerate_triple_root_is_handled() {
        // κ = 2, ρ = 0.5 puts a triple root on the region boundary
        assert!(beta_star(0.5, 2.0).is_err());
        let s = sigma_hat(0.5, 2.0).unwrap();
        assert!(s.is_finite() && s > 0.0);
    }

    #[test]
    fn design_invariants_on_grid() {
        for kappa in [2.0, 10.0, 100.0] {
            let lower = (kappa - 1.0) / (kappa + 1.0);
            let mut prev = 0.0;
            for k in 1..10 {
                let sigma = k as f64 / 10.0;
                let d = design(&pc(kappa, sigma), 1e-9).unwrap();
                assert!(d.rho >= prev - 1e-9, "monotone in sigma");
                prev = d.rho;
                assert!(d.rho >= lower.max(sigma) - 1e-6);
                assert!((d.alpha - (1.0 - d.rho)).abs() < 1e-15);
                assert_eq!(d.gamma, 1.0 + d.beta);
                assert!(d.region_value() < 0.0);
                let res = sigma_squared(d.beta, d.rho, kappa).unwrap() - sigma * sigma;
                assert!(res.abs() <= 1e-8, "{kappa} {sigma}: residual {res}");
                let r = d.realization().unwrap();
                assert!(r.check_fixed_point() && r.check_implementable());
            }
        }
        for sigma in [0.3, 0.6, 0.9] {
            let rates: Vec<f64> = [2.0, 10.0, 100.0]
                .iter()
                .map(|&k| design(&pc(k, sigma), 1e-9).unwrap().rho)
                .collect();
            assert!(rates.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        }
    }

    #[test]
    fn closed_form_certificate_is_rank_one() {
        use crate::certifier::{assemble_lmis, verify_certificate};
        for kappa in [2.0, 10.0, 100.0] {
            for sigma in [0.3, 0.6, 0.9] {
                let class = pc(kappa, sigma);
                let d = design(&class, 1e-9).unwrap();
                let cf = closed_form_certificate(&class, &d).unwrap();
                let r = d.realization().unwrap();
                let forms = assemble_lmis(&r, &class, d.rho).unwrap();
                let block = forms.disagreement(&cf.q, &Matrix::from_element(1, 1, cf.r));
                let err = (&block - cf.rank_one_block()).amax();
                assert!(err <= 1e-8 * block.amax().max(1.0), "{kappa} {sigma}: {err}");
                let report = verify_certificate(&r, &class, &cf.to_certificate(d.rho, cf.p11)).unwrap();
                assert!(report.passed, "{kappa} {sigma}: {report:?}");
            }
        }
    }

    #[test]
    fn single_agent_is_gradient_descent() {
        let d = design(&pc(10.0, 0.5), 1e-9).unwrap();
        let x = vec![Matrix::from_element(1, 1, 2.0)];
        let w = vec![Matrix::zeros(1, 1)];
        let round = svl_step(&x, &w, &Matrix::zeros(1, 1), |_, y| y * 3.0, &d).unwrap();
        assert!((round.x_next[0][(0, 0)] - (2.0 - d.alpha * 6.0)).abs() < 1e-15);
    }

    #[test]
    fn auxiliary_state_sum_is_preserved() {
        let d = design(&pc(10.0, 0.5), 1e-9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4;
        let mut x: Vec<Matrix> = (0..n).map(|_| Matrix::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0))).collect();
        let mut w = vec![Matrix::zeros(1, 2); n];
        for _ in 0..30 {
            let lap = random_laplacian(n, 0.5, &mut rng).unwrap();
            let round = svl_step(&x, &w, &lap, |i, y| y * (1.0 + i as f64), &d).unwrap();
            x = round.x_next;
            w = round.w_next;
            let total: Matrix = w.iter().fold(Matrix::zeros(1, 2), |acc, m| acc + m);
            assert!(total.amax() < 1e-12);
        }
    }

    #[test]
    fn admm_equivalence() {
        let d = design(&pc(10.0, 0.5), 1e-9).unwrap();
        assert_eq!(admm_equivalence_check(&d, 0, 3, 1).unwrap(), 0.0);
        assert!(admm_equivalence_check(&d, 50, 3, 1).unwrap() < 1e-10);
        let mut off = d;
        off.gamma = d.gamma + 0.2;
        assert!(admm_equivalence_check(&off, 50, 3, 1).unwrap() > 1e-3);
        let mut zero = d;
        zero.beta = 0.0;
        assert!(admm_equivalence_check(&zero, 5, 3, 1).is_err());
    }

    #[test]
    fn design_json_fields() {
        let d = design(&pc(10.0, 0.5), 1e-9).unwrap();
        let v: serde_json::Value = serde_json::from_str(&d.to_json().unwrap()).unwrap();
        for key in ["alpha", "beta", "gamma", "delta", "rho", "kappa", "sigma"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
