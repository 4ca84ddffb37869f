//! Approximate worst-case trajectories: per-step maximization of the
//! Lyapunov increment over sector- and gap-constrained signals, plus
//! explicit Laplacian reconstruction from the resulting gossip signals.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::algolib::{Realization, Signals};
use crate::certifier::{graph_multiplier, Certificate, ProblemClass};
use crate::error::{Error, Result};
use crate::netsim::{random_laplacian, Trajectory, TrajectoryMeta};
use crate::oracle::{BarrierSolver, LmiBlock, LmiProblem, LmiSolver, SolveOptions};
use crate::toolkit::{
    averaging_projector, disagreement_projector, kron, least_squares, matrix_to_rows, nullspace_basis,
    ones_complement_basis, spectral_norm, Matrix, Vector, RANK_TOL,
};

/// Candidates must beat the incumbent by this much (on a `V = 1` scale) to replace it.
const TIE_TOL: f64 = 1e-9;

/// Constraint values are accepted down to this level on a `V = 1` scale.
const FEASIBILITY_FLOOR: f64 = -1e-12;

/// `-2(u - m y)ᵀ(u - L y)` for one agent (rows of length d); nonnegative inside the sector.
pub fn sector_violation(y_err: &Matrix, u_err: &Matrix, m: f64, l: f64) -> f64 {
    let a = u_err - y_err * m;
    let b = u_err - y_err * l;
    -2.0 * a.dot(&b)
}

/// `σ²‖(I-Π)z‖² - ‖(I-Π)z - v‖²` summed over columns (n x k inputs, `1ᵀv = 0` assumed).
pub fn graph_violation(z_err: &Matrix, v_err: &Matrix, sigma: f64) -> f64 {
    graph_form(z_err, v_err, sigma, &Matrix::identity(z_err.ncols(), z_err.ncols()))
}

/// Column-weighted form `tr(W Zᵀ(M₁-form)Z)`; `weight` is k x k.
pub fn graph_form(z_err: &Matrix, v_err: &Matrix, sigma: f64, weight: &Matrix) -> f64 {
    let n = z_err.nrows();
    let proj = disagreement_projector(n);
    let m1 = graph_multiplier(sigma);
    let zb = &proj * z_err;
    let gram = (zb.transpose() * z_err) * m1[(0, 0)]
        + (zb.transpose() * v_err) * m1[(0, 1)]
        + ((&proj * v_err).transpose() * z_err) * m1[(1, 0)]
        + ((&proj * v_err).transpose() * v_err) * m1[(1, 1)];
    (weight * gram).trace()
}

#[derive(Clone, Debug)]
struct Quad {
    h: Matrix,
    g: Vector,
    c: f64,
}

impl Quad {
    fn form(h: Matrix) -> Self {
        let n = h.nrows();
        Self {
            h: (&h + h.transpose()) * 0.5,
            g: Vector::zeros(n),
            c: 0.0,
        }
    }

    fn value(&self, x: &Vector) -> f64 {
        (x.transpose() * &self.h * x)[(0, 0)] + self.g.dot(x) + self.c
    }

    fn grad(&self, x: &Vector) -> Vector {
        &self.h * x * 2.0 + &self.g
    }

    /// The same function of `ξ` where the argument is `base + basis ξ`.
    fn restrict(&self, base: &Vector, basis: &Matrix) -> Self {
        let hb = &self.h * base;
        Self {
            h: basis.transpose() * &self.h * basis,
            g: basis.transpose() * (hb * 2.0 + &self.g),
            c: self.value(base),
        }
    }
}

/// Linear maps from the stacked error vector `[x; u; v]` to every signal.
struct Model {
    n: usize,
    d: usize,
    nx: usize,
    p: usize,
    sx: Matrix,
    su: Matrix,
    sv: Matrix,
    next: Matrix,
    sy: Matrix,
    sz: Matrix,
    lyap: Matrix,
    rho: f64,
    m: f64,
    l: f64,
    sigma: f64,
    weight: Matrix,
    /// Rows of `1ᵀv = 0` and of the conserved quantity.
    linear: Matrix,
}

impl Model {
    fn new(r: &Realization, pc: &ProblemClass, cert: &Certificate, n: usize, d: usize) -> Result<Self> {
        let nx = r.n_states();
        let p = r.n_comm();
        if cert.p.shape() != (nx, nx) || cert.q.shape() != (nx, nx) || cert.r.shape() != (p, p) {
            return Err(Error::Dimension("certificate does not match the realization".into()));
        }
        let (nxs, nus, nvs) = (n * nx * d, n * d, n * p * d);
        let total = nxs + nus + nvs;
        let block = |offset: usize, size: usize| {
            let mut s = Matrix::zeros(size, total);
            s.view_mut((0, offset), (size, size)).fill_with_identity();
            s
        };
        let sx = block(0, nxs);
        let su = block(nxs, nus);
        let sv = block(nxs + nus, nvs);
        let id_n = Matrix::identity(n, n);
        let id_d = Matrix::identity(d, d);
        let lift = |m: &Matrix| kron(&id_n, &kron(m, &id_d));
        let affine = |c: &Matrix, du: &Matrix, dv: &Matrix| lift(c) * &sx + lift(du) * &su + lift(dv) * &sv;
        let next = affine(&r.a, &r.b_u, &r.b_v);
        let sy = affine(&r.c_y, &r.d_yu, &r.d_yv);
        let sz = affine(&r.c_z, &r.d_zu, &r.d_zv);
        let lyap = kron(&averaging_projector(n), &kron(&cert.p, &id_d))
            + kron(&disagreement_projector(n), &kron(&cert.q, &id_d));
        let weight = if p == 1 {
            Matrix::identity(1, 1)
        } else {
            let top = SymmetricEigen::new(cert.r.clone()).eigenvalues.max();
            if top > 1e-12 {
                &cert.r / top
            } else {
                Matrix::identity(p, p)
            }
        };
        let ones = Matrix::from_element(1, n, 1.0);
        let sum_v = kron(&ones, &Matrix::identity(p * d, p * d)) * &sv;
        let inv = kron(&ones, &kron(&r.f_x, &id_d)) * &sx + kron(&ones, &kron(&r.f_u, &id_d)) * &su;
        let mut linear = Matrix::zeros(sum_v.nrows() + inv.nrows(), total);
        linear.rows_mut(0, sum_v.nrows()).copy_from(&sum_v);
        linear.rows_mut(sum_v.nrows(), inv.nrows()).copy_from(&inv);
        Ok(Self {
            n,
            d,
            nx,
            p,
            sx,
            su,
            sv,
            next,
            sy,
            sz,
            lyap,
            rho: cert.rho,
            m: pc.m,
            l: pc.l,
            sigma: pc.sigma,
            weight,
            linear,
        })
    }

    fn total(&self) -> usize {
        self.sx.ncols()
    }

    fn lyapunov_form(&self) -> Matrix {
        self.sx.transpose() * &self.lyap * &self.sx
    }

    fn increment_form(&self) -> Matrix {
        self.next.transpose() * &self.lyap * &self.next - self.lyapunov_form() * (self.rho * self.rho)
    }

    fn sector_forms(&self) -> Vec<Matrix> {
        (0..self.n)
            .map(|i| {
                let rows = |s: &Matrix| s.rows(i * self.d, self.d).into_owned();
                let a = rows(&self.su) - rows(&self.sy) * self.m;
                let b = rows(&self.su) - rows(&self.sy) * self.l;
                -(a.transpose() * &b + b.transpose() * &a)
            })
            .collect()
    }

    fn graph_form(&self) -> Matrix {
        let m1 = graph_multiplier(self.sigma);
        let kernel = kron(
            &disagreement_projector(self.n),
            &kron(&self.weight, &Matrix::identity(self.d, self.d)),
        );
        let stacked_rows = self.sz.nrows();
        let mut zv = Matrix::zeros(2 * stacked_rows, self.total());
        zv.rows_mut(0, stacked_rows).copy_from(&self.sz);
        zv.rows_mut(stacked_rows, stacked_rows).copy_from(&self.sv);
        zv.transpose() * kron(&m1, &kernel) * zv
    }

    fn stack(&self, xs: &[Matrix], us: &[Matrix], vs: &[Matrix]) -> Vector {
        let mut out = Vector::zeros(self.total());
        let nxs = self.n * self.nx * self.d;
        let nus = self.n * self.d;
        for i in 0..self.n {
            for s in 0..self.nx {
                for c in 0..self.d {
                    out[i * self.nx * self.d + s * self.d + c] = xs[i][(s, c)];
                }
            }
            for c in 0..self.d {
                out[nxs + i * self.d + c] = us[i][(0, c)];
            }
            for l in 0..self.p {
                for c in 0..self.d {
                    out[nxs + nus + i * self.p * self.d + l * self.d + c] = vs[i][(l, c)];
                }
            }
        }
        out
    }

    fn blocks(&self, flat: &Vector, rows: usize) -> Vec<Matrix> {
        (0..self.n)
            .map(|i| Matrix::from_fn(rows, self.d, |s, c| flat[i * rows * self.d + s * self.d + c]))
            .collect()
    }

    fn signals(&self, zeta: &Vector) -> (Vec<Signals>, Vec<Matrix>) {
        let xs = self.blocks(&(&self.sx * zeta), self.nx);
        let ys = self.blocks(&(&self.sy * zeta), 1);
        let us = self.blocks(&(&self.su * zeta), 1);
        let zs = self.blocks(&(&self.sz * zeta), self.p);
        let vs = self.blocks(&(&self.sv * zeta), self.p);
        let next = self.blocks(&(&self.next * zeta), self.nx);
        let sig = (0..self.n)
            .map(|i| Signals {
                x: xs[i].clone(),
                y: ys[i].clone(),
                u: us[i].clone(),
                z: zs[i].clone(),
                v: vs[i].clone(),
            })
            .collect();
        (sig, next)
    }
}

/// Augmented-Lagrangian ascent for `max f(ξ)` s.t. `g_j(ξ) ≥ 0`, `h_k(ξ) = 0`.
fn augmented_lagrangian(obj: &Quad, ineq: &[Quad], eq: &[Quad], start: &Vector) -> Vector {
    let mut x = start.clone();
    let mut lam = vec![0.0; ineq.len()];
    let mut nu = vec![0.0; eq.len()];
    let mut mu = 10.0;
    let mut prev_violation = f64::INFINITY;
    for outer in 0..60 {
        x = inner_newton(obj, ineq, eq, &lam, &nu, mu, &x);
        let mut violation = 0.0_f64;
        for (j, g) in ineq.iter().enumerate() {
            let v = g.value(&x);
            violation = violation.max(-v);
            lam[j] = (lam[j] - mu * v).max(0.0);
        }
        for (k, h) in eq.iter().enumerate() {
            let v = h.value(&x);
            violation = violation.max(v.abs());
            nu[k] -= mu * v;
        }
        if violation < 1e-13 && outer > 2 {
            break;
        }
        if violation > 0.25 * prev_violation {
            mu = (mu * 10.0).min(1e10);
        }
        prev_violation = violation;
    }
    x
}

fn al_value(obj: &Quad, ineq: &[Quad], eq: &[Quad], lam: &[f64], nu: &[f64], mu: f64, x: &Vector) -> f64 {
    let mut val = -obj.value(x);
    for (g, &l) in ineq.iter().zip(lam) {
        let gv = g.value(x);
        val += if l - mu * gv > 0.0 {
            -l * gv + 0.5 * mu * gv * gv
        } else {
            -l * l / (2.0 * mu)
        };
    }
    for (h, &n) in eq.iter().zip(nu) {
        let hv = h.value(x);
        val += -n * hv + 0.5 * mu * hv * hv;
    }
    val
}

fn inner_newton(obj: &Quad, ineq: &[Quad], eq: &[Quad], lam: &[f64], nu: &[f64], mu: f64, start: &Vector) -> Vector {
    let mut x = start.clone();
    let dim = x.len();
    for _ in 0..200 {
        let mut grad = -obj.grad(&x);
        let mut hess = -&obj.h * 2.0;
        for (g, &l) in ineq.iter().zip(lam) {
            let gv = g.value(&x);
            let coef = l - mu * gv;
            if coef > 0.0 {
                let gg = g.grad(&x);
                grad -= &gg * coef;
                hess += &gg * gg.transpose() * mu - &g.h * (2.0 * coef);
            }
        }
        for (h, &n) in eq.iter().zip(nu) {
            let hv = h.value(&x);
            let coef = n - mu * hv;
            let hg = h.grad(&x);
            grad -= &hg * coef;
            hess += &hg * hg.transpose() * mu - &h.h * (2.0 * coef);
        }
        let gnorm = grad.norm();
        if gnorm <= 1e-13 * (1.0 + x.norm()) {
            break;
        }
        let eig = SymmetricEigen::new((&hess + hess.transpose()) * 0.5);
        let top = eig.eigenvalues.amax().max(1e-300);
        let floor = 1e-10 * top;
        let mut step = Vector::zeros(dim);
        for k in 0..dim {
            let vk = eig.eigenvectors.column(k);
            let lam_k = eig.eigenvalues[k].abs().max(floor);
            step -= vk * (vk.dot(&grad) / lam_k);
        }
        let f0 = al_value(obj, ineq, eq, lam, nu, mu, &x);
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial = &x + &step * t;
            let ft = al_value(obj, ineq, eq, lam, nu, mu, &trial);
            if ft <= f0 + 1e-4 * t * slope + 8.0 * f64::EPSILON * f0.abs() {
                x = trial;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || (&step * t).norm() <= 1e-15 * (1.0 + x.norm()) {
            break;
        }
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreedyOptions {
    pub restarts: usize,
    pub seed: u64,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self { restarts: 8, seed: 0 }
    }
}

/// One step of the greedy worst-case search from the current error state.
pub struct GreedyStepProblem<'a> {
    pub realization: &'a Realization,
    pub class: ProblemClass,
    pub certificate: &'a Certificate,
    /// Error state, one n_x x d block per agent.
    pub state: Vec<Matrix>,
    pub options: GreedyOptions,
}

#[derive(Clone, Debug)]
pub struct StepSolution {
    pub signals: Vec<Signals>,
    pub next: Vec<Matrix>,
    pub increment: f64,
}

impl StepSolution {
    pub fn u(&self) -> Vec<Matrix> {
        self.signals.iter().map(|s| s.u.clone()).collect()
    }

    pub fn v(&self) -> Vec<Matrix> {
        self.signals.iter().map(|s| s.v.clone()).collect()
    }
}

struct Constraints {
    increment: Matrix,
    sectors: Vec<Matrix>,
    graph: Matrix,
}

impl Constraints {
    fn new(model: &Model) -> Self {
        Self {
            increment: model.increment_form(),
            sectors: model.sector_forms(),
            graph: model.graph_form(),
        }
    }

    fn quads(&self) -> (Quad, Vec<Quad>) {
        let mut ineq: Vec<Quad> = self.sectors.iter().cloned().map(Quad::form).collect();
        ineq.push(Quad::form(self.graph.clone()));
        (Quad::form(self.increment.clone()), ineq)
    }

    fn min_value(&self, zeta: &Vector) -> f64 {
        let q = |h: &Matrix| (zeta.transpose() * h * zeta)[(0, 0)];
        self.sectors.iter().map(q).fold(q(&self.graph), f64::min)
    }

    fn objective(&self, zeta: &Vector) -> f64 {
        (zeta.transpose() * &self.increment * zeta)[(0, 0)]
    }
}

fn random_slope<R: Rng>(d: usize, m: f64, l: f64, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let spectrum = nalgebra::DVector::from_fn(d, |_, _| if l > m { rng.random_range(m..=l) } else { m });
    let s = &q * Matrix::from_diagonal(&spectrum) * q.transpose();
    (&s + s.transpose()) * 0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slope {
    Interior,
    Lower,
    Upper,
}

/// Signals produced by a real sector-bounded linear response and a valid Laplacian.
fn realizable_sample<R: Rng>(r: &Realization, model: &Model, xs: &[Matrix], slope: Slope, rng: &mut R) -> Result<Vector> {
    let id = Matrix::identity(model.d, model.d);
    let slopes: Vec<Matrix> = (0..model.n)
        .map(|_| match slope {
            Slope::Interior => random_slope(model.d, model.m, model.l, rng),
            Slope::Lower => &id * model.m,
            Slope::Upper => &id * model.l,
        })
        .collect();
    let lap = random_laplacian(model.n, model.sigma.min(1.0 - 1e-12), rng)?;
    let (sig, _) = r.step(xs, |i, y| Ok(y * &slopes[i]), &lap)?;
    let us: Vec<Matrix> = sig.iter().map(|s| s.u.clone()).collect();
    let vs: Vec<Matrix> = sig.iter().map(|s| s.v.clone()).collect();
    Ok(model.stack(xs, &us, &vs))
}

/// Largest `t ∈ [0, 1]` on the segment from a feasible point keeping all constraints nonnegative.
fn repair(cons: &Constraints, feasible: &Vector, candidate: &Vector, floor: f64) -> Vector {
    if cons.min_value(candidate) >= floor {
        return candidate.clone();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let trial = feasible + (candidate - feasible) * mid;
        if cons.min_value(&trial) >= floor {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    feasible + (candidate - feasible) * lo
}

fn affine_slice(model: &Model, xs_flat: &Vector) -> Result<(Vector, Matrix)> {
    let nxs = model.sx.nrows();
    let total = model.total();
    let a_x = model.linear.columns(0, nxs).into_owned();
    let a_w = model.linear.columns(nxs, total - nxs).into_owned();
    let rhs = -(&a_x * xs_flat);
    let rhs_m = Matrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let wp = least_squares(&a_w, &rhs_m)?;
    let residual = (&a_w * &wp - &rhs_m).amax();
    if residual > 1e-8 * (1.0 + xs_flat.amax()) {
        return Err(Error::InvalidParameter(format!(
            "error state violates the conserved quantity by {residual:.2e}"
        )));
    }
    let null_w = nullspace_basis(&a_w, RANK_TOL)?;
    let mut base = Vector::zeros(total);
    base.rows_mut(0, nxs).copy_from(xs_flat);
    base.rows_mut(nxs, total - nxs).copy_from(&wp.column(0));
    let mut basis = Matrix::zeros(total, null_w.ncols());
    basis.view_mut((nxs, 0), (total - nxs, null_w.ncols())).copy_from(&null_w);
    Ok((base, basis))
}

fn local_solutions(
    cons: &Constraints,
    base: &Vector,
    basis: &Matrix,
    starts: &[Vector],
    extra_eq: &[Quad],
    floor: f64,
) -> Vec<(Vector, f64)> {
    let (obj, ineq) = cons.quads();
    let obj = obj.restrict(base, basis);
    let ineq: Vec<Quad> = ineq.iter().map(|q| q.restrict(base, basis)).collect();
    let mut found = Vec::new();
    for start in starts {
        let xi0 = basis.transpose() * (start - base);
        let xi = augmented_lagrangian(&obj, &ineq, extra_eq, &xi0);
        let candidate = base + basis * xi;
        let fixed = repair(cons, start, &candidate, floor);
        for point in [start.clone(), fixed] {
            if cons.min_value(&point) >= floor {
                let value = cons.objective(&point);
                found.push((point, value));
            }
        }
    }
    found
}

fn solve_from_starts(
    cons: &Constraints,
    base: &Vector,
    basis: &Matrix,
    starts: &[Vector],
    extra_eq: &[Quad],
    floor: f64,
) -> Option<(Vector, f64)> {
    local_solutions(cons, base, basis, starts, extra_eq, floor)
        .into_iter()
        .fold(None, |best: Option<(Vector, f64)>, c| match best {
            Some(b) if c.1 <= b.1 + TIE_TOL => Some(b),
            _ => Some(c),
        })
}

/// Best-found maximizer of `V(x⁺) - ρ²V(x)` over admissible `(u, v)`.
pub fn greedy_step(prob: &GreedyStepProblem, warm: Option<(&[Matrix], &[Matrix])>) -> Result<StepSolution> {
    let r = prob.realization;
    let n = prob.state.len();
    if n < 2 {
        return Err(Error::InvalidParameter("the adversary needs at least two agents".into()));
    }
    let d = prob.state[0].ncols();
    let model = Model::new(r, &prob.class, prob.certificate, n, d)?;
    let zeros_u = vec![Matrix::zeros(1, d); n];
    let zeros_v = vec![Matrix::zeros(model.p, d); n];
    let x_flat = model.stack(&prob.state, &zeros_u, &zeros_v);
    let v_now = (x_flat.transpose() * model.lyapunov_form() * &x_flat)[(0, 0)];
    if v_now <= 0.0 {
        let (signals, next) = model.signals(&x_flat);
        return Ok(StepSolution {
            signals,
            next,
            increment: 0.0,
        });
    }
    let scale = v_now.sqrt();
    let xs: Vec<Matrix> = prob.state.iter().map(|x| x / scale).collect();
    let x_flat = &x_flat / scale;
    let (base, basis) = affine_slice(&model, &x_flat.rows(0, model.sx.nrows()).into_owned())?;
    let cons = Constraints::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(prob.options.seed);
    let mut starts = Vec::new();
    for slope in [Slope::Lower, Slope::Upper] {
        starts.push(realizable_sample(r, &model, &xs, slope, &mut rng)?);
    }
    for _ in 0..prob.options.restarts.max(1) {
        starts.push(realizable_sample(r, &model, &xs, Slope::Interior, &mut rng)?);
    }
    if let Some((us, vs)) = warm {
        let us: Vec<Matrix> = us.iter().map(|u| u / scale).collect();
        let vs: Vec<Matrix> = vs.iter().map(|v| v / scale).collect();
        let w = model.stack(&xs, &us, &vs);
        let projected = &base + &basis * (basis.transpose() * (&w - &base));
        let feasible = starts[0].clone();
        starts.insert(0, repair(&cons, &feasible, &projected, FEASIBILITY_FLOOR));
    }
    let (zeta, _) = solve_from_starts(&cons, &base, &basis, &starts, &[], FEASIBILITY_FLOOR)
        .ok_or_else(|| Error::Infeasible("no admissible signals found".into()))?;
    let zeta = zeta * scale;
    let increment = cons.objective(&zeta);
    let (signals, next) = model.signals(&zeta);
    Ok(StepSolution {
        signals,
        next,
        increment,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StepReport {
    pub k: usize,
    pub lyapunov: f64,
    pub increment: f64,
    pub sector_min: f64,
    pub graph: f64,
    pub graph_weighted: f64,
    pub sum_v: f64,
    pub invariant: f64,
    pub laplacian: Option<Vec<Vec<f64>>>,
    pub achieved_norm: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct WorstCase {
    pub trajectory: Trajectory,
    pub reports: Vec<StepReport>,
    pub rho: f64,
    /// Per-step gossip weights used by the constraint (certificate `R` or identity).
    pub weight: Matrix,
}

impl WorstCase {
    pub fn lyapunov(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.reports.iter().map(|r| r.lyapunov).collect();
        if let Some(last) = self.reports.last() {
            out.push(last.increment + self.rho * self.rho * last.lyapunov);
        }
        out
    }

    pub fn reports_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.reports)?)
    }
}

fn stack_rows(blocks: &[Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(Matrix::nrows).sum();
    let cols = blocks.first().map_or(0, Matrix::ncols);
    let mut out = Matrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}

/// Agents as rows, `(channel, column)` pairs as columns.
fn gossip_matrix(blocks: &[Matrix]) -> Matrix {
    let n = blocks.len();
    let (p, d) = blocks.first().map_or((0, 0), Matrix::shape);
    Matrix::from_fn(n, p * d, |i, j| blocks[i][(j / d, j % d)])
}

fn report(model: &Model, k: usize, signals: &[Signals], lyapunov: f64, increment: f64, r: &Realization) -> StepReport {
    let z = gossip_matrix(&signals.iter().map(|s| s.z.clone()).collect::<Vec<_>>());
    let v = gossip_matrix(&signals.iter().map(|s| s.v.clone()).collect::<Vec<_>>());
    let weight = kron(&model.weight, &Matrix::identity(model.d, model.d));
    let xs: Vec<Matrix> = signals.iter().map(|s| s.x.clone()).collect();
    let us: Vec<Matrix> = signals.iter().map(|s| s.u.clone()).collect();
    StepReport {
        k,
        lyapunov,
        increment,
        sector_min: signals
            .iter()
            .map(|s| sector_violation(&s.y, &s.u, model.m, model.l))
            .fold(f64::INFINITY, f64::min),
        graph: graph_violation(&z, &v, model.sigma),
        graph_weighted: graph_form(&z, &v, model.sigma, &weight),
        sum_v: v.row_sum().amax(),
        invariant: r.invariant_sum(&xs, &us).amax(),
        laplacian: None,
        achieved_norm: None,
    }
}

const LOOKAHEAD_SLACK: f64 = 1e-2;
const LOOKAHEAD_STEPS: usize = 5;

/// Lyapunov value after a few greedy steps from the initial point `zeta` (`V⁰ = 1`).
fn rollout(r: &Realization, pc: &ProblemClass, cert: &Certificate, model: &Model, zeta: &Vector, seed: u64) -> Result<f64> {
    let (mut sig, mut next) = model.signals(zeta);
    let mut lyap = 1.0;
    let mut increment = (zeta.transpose() * model.increment_form() * zeta)[(0, 0)];
    for k in 0..LOOKAHEAD_STEPS {
        let prev = lyap;
        lyap = increment + cert.rho * cert.rho * lyap;
        if lyap <= 0.0 {
            return Ok(0.0);
        }
        let ratio = (lyap / prev).sqrt();
        let prob = GreedyStepProblem {
            realization: r,
            class: *pc,
            certificate: cert,
            state: next.clone(),
            options: GreedyOptions {
                restarts: 2,
                seed: seed.wrapping_add(1000 + k as u64),
            },
        };
        let us: Vec<Matrix> = sig.iter().map(|s| &s.u * ratio).collect();
        let vs: Vec<Matrix> = sig.iter().map(|s| &s.v * ratio).collect();
        let sol = greedy_step(&prob, Some((&us, &vs)))?;
        increment = sol.increment;
        sig = sol.signals;
        next = sol.next;
    }
    Ok(lyap)
}

/// Greedy worst-case trajectory of `steps` iterations; the first step also
/// chooses the initial error state under `V⁰ = 1`.
pub fn worst_trajectory(
    r: &Realization,
    pc: &ProblemClass,
    cert: &Certificate,
    n: usize,
    d: usize,
    steps: usize,
    opts: &GreedyOptions,
) -> Result<WorstCase> {
    if steps < 10 {
        return Err(Error::InvalidParameter(format!("need at least 10 iterations, got {steps}")));
    }
    if n < 2 || d < 1 {
        return Err(Error::InvalidParameter("need n >= 2 agents and d >= 1".into()));
    }
    let model = Model::new(r, pc, cert, n, d)?;
    let cons = Constraints::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // initial step: state, gradient and gossip errors are all free
    let basis = nullspace_basis(&model.linear, RANK_TOL)?;
    let base = Vector::zeros(model.total());
    let v0 = Quad::form(model.lyapunov_form());
    let mut unit = v0.restrict(&base, &basis);
    unit.c -= 1.0;
    let nxs = model.sx.nrows();
    let state_basis = nullspace_basis(&model.linear.columns(0, nxs).into_owned(), RANK_TOL)?;
    let mut starts = Vec::new();
    for start in 0..opts.restarts.max(3) {
        let coeffs = Vector::from_fn(state_basis.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let flat = &state_basis * coeffs;
        let mut xs = model.blocks(&flat, model.nx);
        // cycle through generic, consensus-only and disagreement-only states
        let mean = xs.iter().fold(Matrix::zeros(model.nx, d), |acc, x| acc + x) / n as f64;
        match start % 3 {
            1 => xs.iter_mut().for_each(|x| *x = mean.clone()),
            2 => xs.iter_mut().for_each(|x| *x -= &mean),
            _ => {}
        }
        let zero_u = vec![Matrix::zeros(1, d); n];
        let zero_v = vec![Matrix::zeros(model.p, d); n];
        let stacked = model.stack(&xs, &zero_u, &zero_v);
        let vx = v0.value(&stacked);
        if vx <= 0.0 {
            continue;
        }
        let xs: Vec<Matrix> = xs.iter().map(|x| x / vx.sqrt()).collect();
        starts.push(realizable_sample(r, &model, &xs, Slope::Interior, &mut rng)?);
        if start % 3 == 1 {
            for slope in [Slope::Lower, Slope::Upper] {
                starts.push(realizable_sample(r, &model, &xs, slope, &mut rng)?);
            }
        }
    }
    if starts.is_empty() {
        return Err(Error::Infeasible("Lyapunov function vanishes on sampled states".into()));
    }
    let mut candidates: Vec<(Vector, f64)> = local_solutions(&cons, &base, &basis, &starts, &[unit], FEASIBILITY_FLOOR)
        .into_iter()
        .filter_map(|(z, _)| {
            let vz = v0.value(&z);
            (vz > 0.0).then(|| {
                let z = z / vz.sqrt();
                let value = cons.objective(&z);
                (z, value)
            })
        })
        .collect();
    let top = candidates
        .iter()
        .map(|c| c.1)
        .fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Infeasible("no admissible initial signals found".into()));
    }
    // near-ties are ranked by a short greedy rollout
    candidates.retain(|c| c.1 >= top - LOOKAHEAD_SLACK);
    let mut zeta = candidates[0].0.clone();
    if candidates.len() > 1 {
        let mut best_growth = f64::NEG_INFINITY;
        for (z, _) in &candidates {
            let growth = rollout(r, pc, cert, &model, z, opts.seed)?;
            if growth > best_growth + 1e-12 {
                best_growth = growth;
                zeta = z.clone();
            }
        }
    }

    let (mut sig, mut next) = model.signals(&zeta);
    let mut states = vec![sig.iter().map(|s| s.x.clone()).collect::<Vec<_>>()];
    let mut signals = Vec::new();
    let mut reports = Vec::new();
    let mut lyap = 1.0;
    let mut increment = cons.objective(&zeta);
    for k in 0..steps {
        reports.push(report(&model, k, &sig, lyap, increment, r));
        signals.push(sig.clone());
        states.push(next.clone());
        let prev = lyap;
        lyap = increment + cert.rho * cert.rho * lyap;
        if k + 1 == steps || lyap < 1e-20 {
            break;
        }
        let ratio = (lyap / prev).sqrt();
        let prob = GreedyStepProblem {
            realization: r,
            class: *pc,
            certificate: cert,
            state: next.clone(),
            options: GreedyOptions {
                restarts: opts.restarts,
                seed: opts.seed.wrapping_add(k as u64 + 1),
            },
        };
        let us: Vec<Matrix> = sig.iter().map(|s| &s.u * ratio).collect();
        let vs: Vec<Matrix> = sig.iter().map(|s| &s.v * ratio).collect();
        let sol = greedy_step(&prob, Some((&us, &vs)))?;
        increment = sol.increment;
        sig = sol.signals;
        next = sol.next;
    }
    let zero_fp = (0..n)
        .map(|_| Signals {
            x: Matrix::zeros(model.nx, d),
            y: Matrix::zeros(1, d),
            u: Matrix::zeros(1, d),
            z: Matrix::zeros(model.p, d),
            v: Matrix::zeros(model.p, d),
        })
        .collect();
    let iterations = signals.len();
    Ok(WorstCase {
        trajectory: Trajectory {
            n,
            d,
            states,
            signals,
            fixed_point: zero_fp,
            meta: TrajectoryMeta {
                algorithm: r.name.clone(),
                seed: Some(opts.seed),
                n,
                d,
                iterations,
                sigma: pc.sigma,
                m: Some(pc.m),
                l: Some(pc.l),
                rho: Some(cert.rho),
                certificate: serde_json::from_str(&cert.to_json(None)?).ok(),
            },
        },
        reports,
        rho: cert.rho,
        weight: model.weight,
    })
}

/// Laplacian minimizing `‖I - Π - L‖` with `L Z = V`, `L1 = 0`, `1ᵀL = 0`.
///
/// `z` and `v` hold one row per agent. Returns the Laplacian and its
/// achieved norm; the caller compares the norm against the gap bound.
pub fn reconstruct_laplacian(z: &Matrix, v: &Matrix) -> Result<(Matrix, f64)> {
    let n = z.nrows();
    if n < 2 || v.shape() != z.shape() {
        return Err(Error::Dimension("z and v must both be n x k with n >= 2".into()));
    }
    let size = z.amax().max(v.amax());
    if v.row_sum().amax() > 1e-8 * size.max(1.0) {
        return Err(Error::InvalidParameter("gossip outputs must sum to zero".into()));
    }
    let proj = disagreement_projector(n);
    let z = &proj * z;
    let scale = z.amax().max(v.amax());
    if scale <= 1e-10 * size {
        return Ok((proj, 0.0));
    }
    let (z, v) = (z / scale, v / scale);
    let u = ones_complement_basis(n);
    let m = n - 1;
    let zc = u.transpose() * &z;
    let wc = u.transpose() * (&z - &v);
    let k = z.ncols();
    let nv = m * m + 1;
    let t_var = m * m;
    let var = |i: usize, j: usize| i * m + j;

    let mut a = Matrix::zeros(m * k, nv);
    let mut b = Vector::zeros(m * k);
    for i in 0..m {
        for c in 0..k {
            let row = i * k + c;
            for j in 0..m {
                a[(row, var(i, j))] = zc[(j, c)];
            }
            b[row] = wc[(i, c)];
        }
    }
    let mut problem = LmiProblem::new(nv);
    let mut objective = Vector::zeros(nv);
    objective[t_var] = -1.0;
    problem.set_objective(objective)?;
    let mut block = LmiBlock::new(2 * m);
    block.add_term(t_var, &Matrix::identity(2 * m, 2 * m))?;
    for i in 0..m {
        for j in 0..m {
            let mut e = Matrix::zeros(2 * m, 2 * m);
            e[(i, m + j)] = 1.0;
            e[(m + j, i)] = 1.0;
            block.add_term(var(i, j), &e)?;
        }
    }
    problem.add_block(block)?;
    problem
        .set_equalities(&a, &b)
        .map_err(|_| Error::NoLaplacian("gossip equations have no balanced solution".into()))?;

    let bm = Matrix::from_column_slice(b.len(), 1, b.as_slice());
    let x_ls = least_squares(&a, &bm)?;
    if (&a * &x_ls - &bm).amax() > 1e-8 {
        return Err(Error::NoLaplacian("gossip equations have no balanced solution".into()));
    }
    let mut x0 = Vector::zeros(nv);
    x0.rows_mut(0, m * m).copy_from(&x_ls.column(0).rows(0, m * m));
    let x_mat = Matrix::from_fn(m, m, |i, j| x0[var(i, j)]);
    x0[t_var] = spectral_norm(&x_mat) + 1.0;
    let opts = SolveOptions {
        gap_tol: 1e-10,
        ..SolveOptions::default()
    };
    let sol = BarrierSolver.maximize(&problem, &x0, &opts)?;
    let mut x = sol.x;
    let residual = &a * &x - &b;
    let fix = least_squares(&a, &Matrix::from_column_slice(residual.len(), 1, residual.as_slice()))?;
    x -= fix.column(0);
    let x_mat = Matrix::from_fn(m, m, |i, j| x[var(i, j)]);
    let gap_part = &u * x_mat * u.transpose();
    let lap = disagreement_projector(n) - &gap_part;
    let achieved = spectral_norm(&gap_part);
    Ok((lap, achieved))
}

/// Reconstructs a Laplacian for every step of a worst-case trajectory and
/// records it in the step reports. Returns the largest achieved norm.
pub fn reconstruct_all(wc: &mut WorstCase) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (k, sig) in wc.trajectory.signals.iter().enumerate() {
        let z = gossip_matrix(&sig.iter().map(|s| s.z.clone()).collect::<Vec<_>>());
        let v = gossip_matrix(&sig.iter().map(|s| s.v.clone()).collect::<Vec<_>>());
        match reconstruct_laplacian(&z, &v) {
            Ok((lap, norm)) => {
                worst = worst.max(norm);
                wc.reports[k].laplacian = Some(matrix_to_rows(&lap));
                wc.reports[k].achieved_norm = Some(norm);
            }
            Err(Error::NoLaplacian(_)) => {
                wc.reports[k].laplacian = None;
                wc.reports[k].achieved_norm = None;
                worst = f64::INFINITY;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(worst)
}

/// Re-runs the realization from the worst-case initial state with the
/// reconstructed Laplacians and the recorded gradient errors.
pub fn realized_replay(r: &Realization, wc: &WorstCase) -> Result<Trajectory> {
    let traj = &wc.trajectory;
    let mut states = vec![traj.states[0].clone()];
    let mut signals = Vec::new();
    for (k, rep) in wc.reports.iter().enumerate() {
        let Some(rows) = &rep.laplacian else {
            return Err(Error::NoLaplacian(format!("step {k} has no reconstructed Laplacian")));
        };
        let lap = crate::toolkit::rows_to_matrix(rows, traj.n)?;
        let recorded = &traj.signals[k];
        let (sig, next) = r.step(&states[k], |i, _| Ok(recorded[i].u.clone()), &lap)?;
        signals.push(sig);
        states.push(next);
    }
    Ok(Trajectory {
        n: traj.n,
        d: traj.d,
        states,
        signals,
        fixed_point: traj.fixed_point.clone(),
        meta: traj.meta.clone(),
    })
}

/// Largest state difference between two trajectories of equal length.
pub fn trajectory_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(xa, xb)| (stack_rows(xa) - stack_rows(xb)).amax())
        .fold(0.0, f64::max)
}
