//! Rate certificates: the consensus and disagreement LMIs, a feasibility
//! test on top of the barrier solver, and bisection on the rate.
//!
//! The constant sector multiplier makes the LMIs affine rather than
//! homogeneous in `(P, Q, R)`. Each LMI is therefore posed with its own
//! nonnegative weight `λ` on the sector term and a trace normalization, the
//! smallest definiteness gap `t` is maximized, and a feasible point is
//! rescaled by `1/λ` at the end.

use serde::{Deserialize, Serialize};

use crate::algolib::Realization;
use crate::error::{Error, Result};
use crate::oracle::{BarrierSolver, LmiBlock, LmiProblem, LmiSolver, SolveOptions, SolveStatus, SymVar};
use crate::toolkit::{self, Matrix, Vector, RANK_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemClass {
    pub m: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub sigma: f64,
}

impl ProblemClass {
    pub fn new(m: f64, l: f64, sigma: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite() && l.is_finite() && l >= m) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < m <= L, got m = {m}, L = {l}"
            )));
        }
        if !(0.0..1.0).contains(&sigma) {
            return Err(Error::InvalidParameter(format!("sigma must lie in [0, 1), got {sigma}")));
        }
        Ok(Self { m, l, sigma })
    }

    /// `m = 1, L = κ`.
    pub fn from_kappa(kappa: f64, sigma: f64) -> Result<Self> {
        Self::new(1.0, kappa, sigma)
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.m
    }

    /// Copy with `L` nudged above `m` when the two coincide.
    pub fn strict(&self) -> Self {
        let mut pc = *self;
        if pc.l <= pc.m {
            pc.l = pc.m * (1.0 + 1e-9);
        }
        pc
    }
}

/// Sector multiplier `[[-2mL, L+m], [L+m, -2]]`.
pub fn build_m0(pc: &ProblemClass) -> Matrix {
    let (m, l) = (pc.m, pc.l);
    Matrix::from_row_slice(2, 2, &[-2.0 * m * l, l + m, l + m, -2.0])
}

/// Graph multiplier `[[σ²-1, 1], [1, -1]]`.
pub fn build_m1(pc: &ProblemClass) -> Matrix {
    graph_multiplier(pc.sigma)
}

pub fn graph_multiplier(sigma: f64) -> Matrix {
    Matrix::from_row_slice(2, 2, &[sigma * sigma - 1.0, 1.0, 1.0, -1.0])
}

fn hstack(parts: &[&Matrix]) -> Matrix {
    let rows = parts[0].nrows();
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.view_mut((0, c), (rows, p.ncols())).copy_from(p);
        c += p.ncols();
    }
    out
}

fn vstack(parts: &[&Matrix]) -> Matrix {
    let cols = parts[0].ncols();
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.view_mut((r, 0), (p.nrows(), cols)).copy_from(p);
        r += p.nrows();
    }
    out
}

/// Both LMIs at a fixed rate, as affine maps of `(P, Q, R)` and the sector weight.
#[derive(Clone, Debug)]
pub struct LmiForms {
    pub rho: f64,
    pub sigma: f64,
    pub m0: Matrix,
    /// Orthonormal basis of the nullspace of `[F_x F_u]`.
    pub psi: Matrix,
    state_input: Matrix,
    state_only: Matrix,
    output_input: Matrix,
    full_x: Matrix,
    full_state: Matrix,
    full_y: Matrix,
    full_z: Matrix,
    full_v: Matrix,
}

/// Builds the consensus and disagreement LMIs for realization `r` at rate `rho`.
pub fn assemble_lmis(r: &Realization, pc: &ProblemClass, rho: f64) -> Result<LmiForms> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("rate must be positive, got {rho}")));
    }
    if !r.check_fixed_point() {
        return Err(Error::InvalidAlgorithm(format!(
            "{}: no fixed point consistent with consensus on the optimizer",
            r.name
        )));
    }
    let nx = r.n_states();
    let p = r.n_comm();
    let psi = if r.n_invariants() == 0 {
        Matrix::identity(nx + 1, nx + 1)
    } else {
        toolkit::nullspace_basis(&r.invariant_map(), RANK_TOL)?
    };
    let one = Matrix::identity(1, 1);
    let zero_row = Matrix::zeros(1, nx);
    let state_input = hstack(&[&r.a, &r.b_u]);
    let state_only = hstack(&[&Matrix::identity(nx, nx), &Matrix::zeros(nx, 1)]);
    let output_input = vstack(&[&hstack(&[&r.c_y, &r.d_yu]), &hstack(&[&zero_row, &one])]);
    let full_x = hstack(&[&r.a, &r.b_u, &r.b_v]);
    let full_state = hstack(&[&Matrix::identity(nx, nx), &Matrix::zeros(nx, 1 + p)]);
    let full_y = vstack(&[
        &hstack(&[&r.c_y, &r.d_yu, &r.d_yv]),
        &hstack(&[&zero_row, &one, &Matrix::zeros(1, p)]),
    ]);
    let full_z = hstack(&[&r.c_z, &r.d_zu, &r.d_zv]);
    let full_v = hstack(&[&Matrix::zeros(p, nx + 1), &Matrix::identity(p, p)]);
    Ok(LmiForms {
        rho,
        sigma: pc.sigma,
        m0: build_m0(pc),
        psi,
        state_input,
        state_only,
        output_input,
        full_x,
        full_state,
        full_y,
        full_z,
        full_v,
    })
}

impl LmiForms {
    pub fn consensus_dim(&self) -> usize {
        self.psi.ncols()
    }

    pub fn disagreement_dim(&self) -> usize {
        self.full_x.ncols()
    }

    fn consensus_p_part(&self, p: &Matrix) -> Matrix {
        let inner = self.state_input.transpose() * p * &self.state_input
            - self.state_only.transpose() * p * &self.state_only * (self.rho * self.rho);
        self.psi.transpose() * inner * &self.psi
    }

    fn consensus_sector_part(&self, m0: &Matrix) -> Matrix {
        self.psi.transpose() * self.output_input.transpose() * m0 * &self.output_input * &self.psi
    }

    fn disagreement_q_part(&self, q: &Matrix) -> Matrix {
        self.full_x.transpose() * q * &self.full_x
            - self.full_state.transpose() * q * &self.full_state * (self.rho * self.rho)
    }

    fn disagreement_r_part(&self, r: &Matrix) -> Matrix {
        let s2 = self.sigma * self.sigma;
        let zt = self.full_z.transpose();
        let vt = self.full_v.transpose();
        &zt * r * &self.full_z * (s2 - 1.0) + &zt * r * &self.full_v + &vt * r * &self.full_z
            - &vt * r * &self.full_v
    }

    fn disagreement_sector_part(&self, m0: &Matrix) -> Matrix {
        self.full_y.transpose() * m0 * &self.full_y
    }

    /// Consensus LMI matrix (must be ⪯ 0) with unit sector weight.
    pub fn consensus(&self, p: &Matrix) -> Matrix {
        toolkit::symmetrize(&(self.consensus_p_part(p) + self.consensus_sector_part(&self.m0)))
    }

    /// Disagreement LMI matrix (must be ⪯ 0) with unit sector weight.
    pub fn disagreement(&self, q: &Matrix, r: &Matrix) -> Matrix {
        toolkit::symmetrize(
            &(self.disagreement_q_part(q)
                + self.disagreement_r_part(r)
                + self.disagreement_sector_part(&self.m0)),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub rho: f64,
    pub p: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    /// Smallest enforced definiteness gap.
    pub margin: f64,
    /// True when tiny negative eigenvalues of `R` were clipped to zero.
    pub r_projected: bool,
}

impl Certificate {
    /// Extreme eigenvalues of `T = Π⊗P + (I-Π)⊗Q` (for two or more agents).
    pub fn t_eigen_range(&self) -> (f64, f64) {
        let eig = |m: &Matrix| {
            let e = nalgebra::SymmetricEigen::new(toolkit::symmetrize(m)).eigenvalues;
            (e.min(), e.max())
        };
        let (pmin, pmax) = eig(&self.p);
        let (qmin, qmax) = eig(&self.q);
        (pmin.min(qmin), pmax.max(qmax))
    }

    pub fn cond_t(&self) -> f64 {
        let (lo, hi) = self.t_eigen_range();
        hi / lo
    }

    pub fn to_json(&self, report: Option<&VerificationReport>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CertificateFile::new(self, report))?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Margins {
    pub margin: f64,
    pub r_projected: bool,
    pub cond_t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus_max_eig: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disagreement_max_eig: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_min_eig: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_min_eig: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_min_eig: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateFile {
    pub rho: f64,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub margins: Margins,
}

impl CertificateFile {
    pub fn new(cert: &Certificate, report: Option<&VerificationReport>) -> Self {
        Self {
            rho: cert.rho,
            p: toolkit::matrix_to_rows(&cert.p),
            q: toolkit::matrix_to_rows(&cert.q),
            r: toolkit::matrix_to_rows(&cert.r),
            margins: Margins {
                margin: cert.margin,
                r_projected: cert.r_projected,
                cond_t: cert.cond_t(),
                consensus_max_eig: report.map(|r| r.consensus_max_eig),
                disagreement_max_eig: report.map(|r| r.disagreement_max_eig),
                p_min_eig: report.map(|r| r.p_min_eig),
                q_min_eig: report.map(|r| r.q_min_eig),
                r_min_eig: report.map(|r| r.r_min_eig),
            },
        }
    }

    pub fn into_certificate(self) -> Result<Certificate> {
        let load = |rows: &[Vec<f64>]| toolkit::rows_to_matrix(rows, rows.first().map_or(0, Vec::len));
        Ok(Certificate {
            rho: self.rho,
            p: load(&self.p)?,
            q: load(&self.q)?,
            r: load(&self.r)?,
            margin: self.margins.margin,
            r_projected: self.margins.r_projected,
        })
    }
}

/// Stacked-vector Lyapunov function `x̃ᵀ(Π⊗P + (I-Π)⊗Q)x̃`.
///
/// `x_tilde` is agent-major; each agent contributes its `n_x x d` state block
/// in row-major order.
pub fn lyapunov_value(cert: &Certificate, x_tilde: &Vector, n: usize) -> Result<f64> {
    let nx = cert.p.nrows();
    if n == 0 || x_tilde.len() % (n * nx) != 0 {
        return Err(Error::Dimension(format!(
            "stacked error of length {} does not split into {n} agents with {nx} states",
            x_tilde.len()
        )));
    }
    let d = x_tilde.len() / (n * nx);
    let blocks: Vec<Matrix> = (0..n)
        .map(|i| Matrix::from_row_slice(nx, d, &x_tilde.as_slice()[i * nx * d..(i + 1) * nx * d]))
        .collect();
    lyapunov_value_blocks(cert, &blocks)
}

/// Lyapunov function on per-agent `n_x x d` error blocks.
pub fn lyapunov_value_blocks(cert: &Certificate, x_tilde: &[Matrix]) -> Result<f64> {
    let n = x_tilde.len();
    let nx = cert.p.nrows();
    if n == 0 {
        return Err(Error::Dimension("no agents".into()));
    }
    let d = x_tilde[0].ncols();
    let mut mean = Matrix::zeros(nx, d);
    for x in x_tilde {
        if x.shape() != (nx, d) {
            return Err(Error::Dimension(format!(
                "agent block is {}x{}, expected {nx}x{d}",
                x.nrows(),
                x.ncols()
            )));
        }
        mean += x;
    }
    mean /= n as f64;
    let mut v = n as f64 * (mean.transpose() * &cert.p * &mean).trace();
    for x in x_tilde {
        let dev = x - &mean;
        v += (dev.transpose() * &cert.q * &dev).trace();
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub consensus_max_eig: f64,
    pub disagreement_max_eig: f64,
    pub p_min_eig: f64,
    pub q_min_eig: f64,
    pub r_min_eig: f64,
    pub passed: bool,
}

pub const LMI_TOL: f64 = 1e-7;
pub const DEFINITE_TOL: f64 = 1e-9;

/// Independent check of a certificate against freshly assembled LMIs.
pub fn verify_certificate(r: &Realization, pc: &ProblemClass, cert: &Certificate) -> Result<VerificationReport> {
    let forms = assemble_lmis(r, &pc.strict(), cert.rho)?;
    let nx = r.n_states();
    let p_dim = r.n_comm();
    if cert.p.shape() != (nx, nx) || cert.q.shape() != (nx, nx) || cert.r.shape() != (p_dim, p_dim) {
        return Err(Error::Dimension("certificate does not match the realization".into()));
    }
    let consensus_max_eig = toolkit::max_eigenvalue_symmetric(&forms.consensus(&cert.p))?;
    let disagreement_max_eig = toolkit::max_eigenvalue_symmetric(&forms.disagreement(&cert.q, &cert.r))?;
    let p_min_eig = toolkit::min_eigenvalue_symmetric(&cert.p)?;
    let q_min_eig = toolkit::min_eigenvalue_symmetric(&cert.q)?;
    let r_min_eig = toolkit::min_eigenvalue_symmetric(&cert.r)?;
    let passed = consensus_max_eig <= LMI_TOL
        && disagreement_max_eig <= LMI_TOL
        && p_min_eig >= DEFINITE_TOL
        && q_min_eig >= DEFINITE_TOL
        && r_min_eig >= -1e-10;
    Ok(VerificationReport {
        consensus_max_eig,
        disagreement_max_eig,
        p_min_eig,
        q_min_eig,
        r_min_eig,
        passed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertifyOptions {
    /// Strictness margin: `P, Q ⪰ eps·I` in certificate scaling.
    pub eps: f64,
    /// Bisection width on the rate.
    pub tol: f64,
    /// Smallest normalized definiteness gap counted as feasible.
    pub threshold: f64,
    /// Upper end of the rate bracket.
    pub rho_max: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            tol: 1e-6,
            threshold: 1e-9,
            rho_max: 2.0,
        }
    }
}

/// Outcome of one normalized LMI program.
#[derive(Clone, Debug)]
struct Part {
    gap: f64,
    mats: Vec<Matrix>,
    weight: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Decide,
    Full,
}

fn solve_options(mode: Mode, threshold: f64) -> SolveOptions {
    match mode {
        Mode::Decide => SolveOptions {
            stop_above: Some(threshold),
            stop_below: Some(threshold),
            gap_tol: 1e-12,
            ..SolveOptions::default()
        },
        Mode::Full => SolveOptions {
            gap_tol: 1e-10,
            ..SolveOptions::default()
        },
    }
}

fn initial_gap(problem: &LmiProblem, x: &Vector, gap_var: usize) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut probe = x.clone();
    probe[gap_var] = 0.0;
    let mut shifted = probe.clone();
    shifted[gap_var] = 1.0;
    for b in problem.blocks() {
        let f0 = b.evaluate(&probe);
        let f1 = b.evaluate(&shifted);
        if (&f1 - &f0).amax() == 0.0 {
            continue;
        }
        lo = lo.min(toolkit::min_eigenvalue_symmetric(&f0)?);
    }
    Ok(lo - 1.0)
}

fn consensus_part(
    forms: &LmiForms,
    opts: &CertifyOptions,
    mode: Mode,
    solver: &dyn LmiSolver,
) -> Result<Part> {
    let nx = forms.state_only.nrows();
    let k = forms.consensus_dim();
    let pv = SymVar { offset: 0, dim: nx };
    let lam = pv.len();
    let gap = lam + 1;
    let scale = forms.m0.amax();
    let m0n = &forms.m0 / scale;
    let mut problem = LmiProblem::new(gap + 1);
    let mut c = Vector::zeros(gap + 1);
    c[gap] = 1.0;
    problem.set_objective(c)?;

    let mut lmi = LmiBlock::new(k);
    let mut pos_p = LmiBlock::new(nx);
    let mut trace = LmiBlock::new(1);
    trace.set_constant(&Matrix::from_element(1, 1, 1.0))?;
    for (var, e) in pv.basis() {
        lmi.add_term(var, &(-forms.consensus_p_part(&e)))?;
        pos_p.add_term(var, &e)?;
        trace.add_term(var, &Matrix::from_element(1, 1, -e.trace()))?;
    }
    lmi.add_term(lam, &(-forms.consensus_sector_part(&m0n)))?;
    lmi.add_term(gap, &(-Matrix::identity(k, k)))?;
    pos_p.add_term(lam, &(-Matrix::identity(nx, nx) * (opts.eps * scale)))?;
    pos_p.add_term(gap, &(-Matrix::identity(nx, nx)))?;
    trace.add_term(lam, &Matrix::from_element(1, 1, -1.0))?;
    let mut weight = LmiBlock::new(1);
    weight.add_term(lam, &Matrix::from_element(1, 1, 1.0))?;
    weight.add_term(gap, &Matrix::from_element(1, 1, -1.0))?;
    for b in [lmi, pos_p, trace, weight] {
        problem.add_block(b)?;
    }

    let mut x0 = Vector::zeros(gap + 1);
    let init = 1.0 / (2.0 * (nx as f64 + 1.0));
    pv.write(&(Matrix::identity(nx, nx) * init), &mut x0);
    x0[lam] = init;
    x0[gap] = initial_gap(&problem, &x0, gap)?;
    let sol = solver.maximize(&problem, &x0, &solve_options(mode, opts.threshold))?;
    let w = sol.x[lam] / scale;
    Ok(Part {
        gap: sol.value,
        mats: vec![pv.extract(&sol.x)],
        weight: w,
    })
}

fn disagreement_part(
    forms: &LmiForms,
    opts: &CertifyOptions,
    mode: Mode,
    solver: &dyn LmiSolver,
) -> Result<Part> {
    let nx = forms.full_state.nrows();
    let p = forms.full_v.nrows();
    let k = forms.disagreement_dim();
    let qv = SymVar { offset: 0, dim: nx };
    let rv = SymVar { offset: qv.len(), dim: p };
    let lam = qv.len() + rv.len();
    let gap = lam + 1;
    let scale = forms.m0.amax();
    let m0n = &forms.m0 / scale;
    let mut problem = LmiProblem::new(gap + 1);
    let mut c = Vector::zeros(gap + 1);
    c[gap] = 1.0;
    problem.set_objective(c)?;

    let mut lmi = LmiBlock::new(k);
    let mut pos_q = LmiBlock::new(nx);
    let mut pos_r = LmiBlock::new(p);
    let mut trace = LmiBlock::new(1);
    trace.set_constant(&Matrix::from_element(1, 1, 1.0))?;
    for (var, e) in qv.basis() {
        lmi.add_term(var, &(-forms.disagreement_q_part(&e)))?;
        pos_q.add_term(var, &e)?;
        trace.add_term(var, &Matrix::from_element(1, 1, -e.trace()))?;
    }
    for (var, e) in rv.basis() {
        lmi.add_term(var, &(-forms.disagreement_r_part(&e)))?;
        pos_r.add_term(var, &e)?;
        trace.add_term(var, &Matrix::from_element(1, 1, -e.trace()))?;
    }
    lmi.add_term(lam, &(-forms.disagreement_sector_part(&m0n)))?;
    lmi.add_term(gap, &(-Matrix::identity(k, k)))?;
    pos_q.add_term(lam, &(-Matrix::identity(nx, nx) * (opts.eps * scale)))?;
    pos_q.add_term(gap, &(-Matrix::identity(nx, nx)))?;
    trace.add_term(lam, &Matrix::from_element(1, 1, -1.0))?;
    let mut weight = LmiBlock::new(1);
    weight.add_term(lam, &Matrix::from_element(1, 1, 1.0))?;
    weight.add_term(gap, &Matrix::from_element(1, 1, -1.0))?;
    for b in [lmi, pos_q, pos_r, trace, weight] {
        problem.add_block(b)?;
    }

    let mut x0 = Vector::zeros(gap + 1);
    let init = 1.0 / (2.0 * (nx + p + 1) as f64);
    qv.write(&(Matrix::identity(nx, nx) * init), &mut x0);
    rv.write(&(Matrix::identity(p, p) * init), &mut x0);
    x0[lam] = init;
    x0[gap] = initial_gap(&problem, &x0, gap)?;
    let sol = solver.maximize(&problem, &x0, &solve_options(mode, opts.threshold))?;
    let w = sol.x[lam] / scale;
    Ok(Part {
        gap: sol.value,
        mats: vec![qv.extract(&sol.x), rv.extract(&sol.x)],
        weight: w,
    })
}

fn build_certificate(rho: f64, cons: &Part, dis: &Part) -> Result<Certificate> {
    if !(cons.weight > 0.0 && dis.weight > 0.0) {
        return Err(Error::Solver("sector weight collapsed to zero".into()));
    }
    let p = toolkit::symmetrize(&(&cons.mats[0] / cons.weight));
    let q = toolkit::symmetrize(&(&dis.mats[0] / dis.weight));
    let mut r = toolkit::symmetrize(&(&dis.mats[1] / dis.weight));
    let mut r_projected = false;
    let eig = nalgebra::SymmetricEigen::new(r.clone());
    if eig.eigenvalues.min() < 0.0 {
        if eig.eigenvalues.min() < -1e-10 {
            return Err(Error::Solver(format!(
                "graph multiplier has eigenvalue {}",
                eig.eigenvalues.min()
            )));
        }
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        r = &eig.eigenvectors * Matrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        r_projected = true;
    }
    Ok(Certificate {
        rho,
        p,
        q,
        r,
        margin: (cons.gap / cons.weight).min(dis.gap / dis.weight),
        r_projected,
    })
}

/// Searches for a certificate at rate `rho`; `None` when the LMIs are infeasible.
pub fn feasible(r: &Realization, pc: &ProblemClass, rho: f64, eps: f64) -> Result<Option<Certificate>> {
    let opts = CertifyOptions {
        eps,
        ..CertifyOptions::default()
    };
    feasible_with(r, pc, rho, &opts, &BarrierSolver)
}

pub fn feasible_with(
    r: &Realization,
    pc: &ProblemClass,
    rho: f64,
    opts: &CertifyOptions,
    solver: &dyn LmiSolver,
) -> Result<Option<Certificate>> {
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidParameter("strictness margin must be positive".into()));
    }
    let forms = assemble_lmis(r, &pc.strict(), rho)?;
    let cons = consensus_part(&forms, opts, Mode::Full, solver)?;
    if cons.gap < opts.threshold {
        return Ok(None);
    }
    let dis = disagreement_part(&forms, opts, Mode::Full, solver)?;
    if dis.gap < opts.threshold {
        return Ok(None);
    }
    build_certificate(rho, &cons, &dis).map(Some)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Which {
    Consensus,
    Disagreement,
}

fn decide(
    forms_for: &dyn Fn(f64) -> Result<LmiForms>,
    which: Which,
    rho: f64,
    opts: &CertifyOptions,
    solver: &dyn LmiSolver,
) -> Result<bool> {
    let forms = forms_for(rho)?;
    let part = match which {
        Which::Consensus => consensus_part(&forms, opts, Mode::Decide, solver)?,
        Which::Disagreement => disagreement_part(&forms, opts, Mode::Decide, solver)?,
    };
    Ok(part.gap >= opts.threshold)
}

/// Smallest certifiable rate in `(0, 2]` within `tol`, with its certificate.
pub fn certify_rate(r: &Realization, pc: &ProblemClass, tol: f64) -> Result<(f64, Certificate)> {
    let opts = CertifyOptions {
        tol,
        ..CertifyOptions::default()
    };
    certify_rate_with(r, pc, &opts, &BarrierSolver)
}

pub fn certify_rate_with(
    r: &Realization,
    pc: &ProblemClass,
    opts: &CertifyOptions,
    solver: &dyn LmiSolver,
) -> Result<(f64, Certificate)> {
    let rho_hi = certified_rate_bound(r, pc, opts, solver)?;
    // the decision runs may stop early; confirm with fully centered solves
    let mut rho = rho_hi;
    for _ in 0..20 {
        if let Some(cert) = feasible_with(r, pc, rho, opts, solver)? {
            return Ok((rho, cert));
        }
        rho += opts.tol;
        if rho > opts.rho_max + 10.0 * opts.tol {
            break;
        }
    }
    Err(Error::Uncertifiable { rho_hi: opts.rho_max })
}

/// Bisection only: the smallest rate whose LMIs are decided feasible.
pub fn certified_rate_bound(
    r: &Realization,
    pc: &ProblemClass,
    opts: &CertifyOptions,
    solver: &dyn LmiSolver,
) -> Result<f64> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("bisection tolerance must be positive".into()));
    }
    let strict = pc.strict();
    // fail early on realizations without a fixed point
    assemble_lmis(r, &strict, opts.rho_max)?;
    let forms_for = |rho: f64| assemble_lmis(r, &strict, rho);
    let mut lo = 0.0_f64;
    let hi_max = opts.rho_max;
    let mut result = 0.0_f64;
    for which in [Which::Disagreement, Which::Consensus] {
        if result > 0.0 && decide(&forms_for, which, result, opts, solver)? {
            continue;
        }
        if !decide(&forms_for, which, hi_max, opts, solver)? {
            return Err(Error::Uncertifiable { rho_hi: hi_max });
        }
        let mut hi = hi_max;
        lo = lo.max(result);
        while hi - lo > opts.tol {
            let mid = 0.5 * (lo + hi);
            if decide(&forms_for, which, mid, opts, solver)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        result = hi;
    }
    Ok(result)
}

/// Whether both LMIs are decided feasible at `rho` (early-exit decision solves).
pub fn is_feasible(r: &Realization, pc: &ProblemClass, rho: f64, opts: &CertifyOptions) -> Result<bool> {
    let strict = pc.strict();
    let forms_for = |rho: f64| assemble_lmis(r, &strict, rho);
    Ok(decide(&forms_for, Which::Disagreement, rho, opts, &BarrierSolver)?
        && decide(&forms_for, Which::Consensus, rho, opts, &BarrierSolver)?)
}

#[doc(hidden)]
pub fn solve_status_is_early(status: SolveStatus) -> bool {
    matches!(status, SolveStatus::ReachedTarget | SolveStatus::BelowTarget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algolib::{catalog, AlgorithmName, CatalogParams};

    fn svl(alpha: f64, beta: f64) -> Realization {
        catalog(AlgorithmName::Svl, &CatalogParams::svl(alpha, beta, 1.0 + beta, 1.0)).unwrap()
    }

    #[test]
    fn multipliers() {
        let pc = ProblemClass::new(1.0, 10.0, 0.5).unwrap();
        assert_eq!(build_m0(&pc), Matrix::from_row_slice(2, 2, &[-20.0, 11.0, 11.0, -2.0]));
        assert_eq!(graph_multiplier(0.0), Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        assert_eq!(graph_multiplier(1.0), Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, -1.0]));
    }

    #[test]
    fn problem_class_validation() {
        assert!(ProblemClass::new(0.0, 1.0, 0.5).is_err());
        assert!(ProblemClass::new(2.0, 1.0, 0.5).is_err());
        assert!(ProblemClass::new(1.0, 2.0, 1.0).is_err());
        assert_eq!(ProblemClass::from_kappa(10.0, 0.3).unwrap().kappa(), 10.0);
        let pc = ProblemClass::new(1.0, 1.0, 0.0).unwrap().strict();
        assert!(pc.l > pc.m);
    }

    #[test]
    fn svl_consensus_block_reduces_to_scalar_form() {
        let (alpha, rho, p11) = (0.07, 0.8, 3.5);
        let pc = ProblemClass::new(1.0, 10.0, 0.5).unwrap();
        let forms = assemble_lmis(&svl(alpha, 0.4), &pc, rho).unwrap();
        let p = Matrix::from_row_slice(2, 2, &[p11, 0.0, 0.0, 7.0]);
        let block = forms.consensus(&p);
        let expected = Matrix::from_row_slice(2, 2, &[1.0 - rho * rho, -alpha, -alpha, alpha * alpha]) * p11
            + build_m0(&pc);
        // Ψ spans e1 and the input direction; compare in that basis up to sign
        let mut rot = forms.psi.clone();
        for j in 0..rot.ncols() {
            let (i, _) = rot.column(j).iamax_full();
            if rot[(i, j)] < 0.0 {
                rot.column_mut(j).neg_mut();
            }
        }
        let block = rot.transpose() * &forms.psi * block * forms.psi.transpose() * &rot;
        let (b00, b11) = if rot[(0, 0)].abs() > 0.5 { (0, 1) } else { (1, 0) };
        let reordered = Matrix::from_fn(2, 2, |i, j| {
            let idx = [b00, b11];
            block[(idx[i], idx[j])]
        });
        assert!((reordered - expected).amax() < 1e-12);
    }

    #[test]
    fn zero_multipliers_leave_sector_terms() {
        let pc = ProblemClass::new(1.0, 10.0, 0.5).unwrap();
        let r = catalog(AlgorithmName::Extra, &CatalogParams::new(0.1, 1.0)).unwrap();
        let forms = assemble_lmis(&r, &pc, 0.9).unwrap();
        let c = forms.consensus(&Matrix::zeros(3, 3));
        let expect = forms.psi.transpose()
            * forms.output_input.transpose()
            * build_m0(&pc)
            * &forms.output_input
            * &forms.psi;
        assert!((c - expect).amax() < 1e-12);
        let d = forms.disagreement(&Matrix::zeros(3, 3), &Matrix::zeros(1, 1));
        let expect = forms.full_y.transpose() * build_m0(&pc) * &forms.full_y;
        assert!((d - expect).amax() < 1e-12);
        assert_eq!(forms.consensus_dim(), 3);
        assert_eq!(forms.disagreement_dim(), 5);
    }

    #[test]
    fn rejects_realization_without_fixed_point() {
        let pc = ProblemClass::new(1.0, 10.0, 0.5).unwrap();
        assert!(matches!(
            assemble_lmis(&svl(0.1, 0.0), &pc, 0.9),
            Err(Error::InvalidAlgorithm(_))
        ));
    }

    #[test]
    fn gradient_descent_rate() {
        let (m, l) = (1.0, 10.0);
        let pc = ProblemClass::new(m, l, 0.0).unwrap();
        let r = svl(2.0 / (l + m), 0.5);
        let rho = (l - m) / (l + m);
        let cert = feasible(&r, &pc, rho + 1e-4, 1e-6).unwrap().expect("feasible");
        assert!(verify_certificate(&r, &pc, &cert).unwrap().passed);
    }

    #[test]
    fn loose_rate_is_feasible_for_every_algorithm() {
        let pc = ProblemClass::new(1.0, 10.0, 0.5).unwrap();
        for name in AlgorithmName::BASELINES {
            // a small stepsize keeps every baseline's true rate below 1.5
            let r = catalog(name, &CatalogParams::new(0.01, 1.0).with_class(1.0, 10.0)).unwrap();
            let cert = feasible(&r, &pc, 1.5, 1e-6).unwrap();
            let cert = cert.unwrap_or_else(|| panic!("{name} infeasible at 1.5"));
            let report = verify_certificate(&r, &pc, &cert).unwrap();
            assert!(report.passed, "{name}: {report:?}");
        }
    }

    #[test]
    fn bisection_brackets_the_rate() {
        let pc = ProblemClass::new(1.0, 10.0, 0.5).unwrap();
        let r = catalog(AlgorithmName::Nids, &CatalogParams::new(0.1, 1.0)).unwrap();
        let (rho, cert) = certify_rate(&r, &pc, 1e-6).unwrap();
        assert!(rho >= 9.0 / 11.0 - 1e-6);
        assert!(verify_certificate(&r, &pc, &cert).unwrap().passed);
        let opts = CertifyOptions::default();
        assert!(!is_feasible(&r, &pc, rho - 1e-3, &opts).unwrap());
        let mut lowered = cert.clone();
        lowered.rho = rho - 0.05;
        assert!(!verify_certificate(&r, &pc, &lowered).unwrap().passed);
    }

    #[test]
    fn lyapunov_value_examples() {
        let cert = Certificate {
            rho: 0.5,
            p: Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            q: Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0]),
            r: Matrix::identity(1, 1),
            margin: 0.0,
            r_projected: false,
        };
        assert_eq!(lyapunov_value(&cert, &Vector::zeros(6), 3).unwrap(), 0.0);
        let x = Vector::from_vec(vec![1.0, -2.0]);
        let single = lyapunov_value(&cert, &x, 1).unwrap();
        assert!((single - (x.transpose() * &cert.p * &x)[(0, 0)]).abs() < 1e-12);
        let e = Vector::from_vec(vec![0.3, 0.7]);
        let stacked = Vector::from_iterator(6, e.iter().cycle().take(6).copied());
        let v = lyapunov_value(&cert, &stacked, 3).unwrap();
        assert!((v - 3.0 * (e.transpose() * &cert.p * &e)[(0, 0)]).abs() < 1e-12);
        assert!(lyapunov_value(&cert, &Vector::zeros(5), 3).is_err());

        // independent Kronecker form
        let n = 3;
        let x = Vector::from_vec(vec![0.1, -0.4, 1.2, 0.3, -0.7, 0.5]);
        let pi = toolkit::averaging_projector(n);
        let t = toolkit::kron(&pi, &cert.p) + toolkit::kron(&toolkit::disagreement_projector(n), &cert.q);
        let expect = (x.transpose() * t * &x)[(0, 0)];
        assert!((lyapunov_value(&cert, &x, n).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn certificate_json_round_trip() {
        let pc = ProblemClass::new(1.0, 10.0, 0.3).unwrap();
        let r = catalog(AlgorithmName::ExDiff, &CatalogParams::new(0.1, 1.0)).unwrap();
        let cert = feasible(&r, &pc, 1.2, 1e-6).unwrap().unwrap();
        let report = verify_certificate(&r, &pc, &cert).unwrap();
        let text = cert.to_json(Some(&report)).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["rho", "P", "Q", "R", "margins"] {
            assert!(value.get(key).is_some(), "{key}");
        }
        let back: CertificateFile = serde_json::from_str(&text).unwrap();
        let back = back.into_certificate().unwrap();
        assert!((back.p - cert.p).amax() < 1e-12);
    }
}
