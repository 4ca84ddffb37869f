//! Barrier interior-point solver for small dense LMI programs
//!
//! ```text
//! maximize cᵀx   s.t.   F_j(x) = F_j0 + Σ_i x_i F_ji ⪰ 0,   A x = b
//! ```
//!
//! starting from a strictly feasible point. Each outer iteration centers
//! `τ cᵀx + Σ_j log det F_j(x)` with an equality-constrained Newton method and
//! then increases `τ`; `cᵀx + m/τ` (with `m` the total block size) bounds the
//! optimum from above once centered.

use nalgebra::{Cholesky, Dyn, LU};

use crate::error::{Error, Result};
use crate::toolkit::{Matrix, Vector, RANK_TOL};

/// One linear matrix inequality `F0 + Σ_i x_i F_i ⪰ 0`.
#[derive(Clone, Debug)]
pub struct LmiBlock {
    size: usize,
    constant: Matrix,
    terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl LmiBlock {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            constant: Matrix::zeros(size, size),
            terms: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn set_constant(&mut self, m: &Matrix) -> Result<()> {
        self.check(m)?;
        self.constant = (m + m.transpose()) * 0.5;
        Ok(())
    }

    /// Adds `x_var · coeff` (coeff is symmetrized; zero coefficients are dropped).
    pub fn add_term(&mut self, var: usize, coeff: &Matrix) -> Result<()> {
        self.check(coeff)?;
        let sym = (coeff + coeff.transpose()) * 0.5;
        let scale = sym.amax();
        if scale == 0.0 {
            return Ok(());
        }
        let mut nz = Vec::new();
        for c in 0..self.size {
            for r in 0..self.size {
                let v = sym[(r, c)];
                if v.abs() > 1e-15 * scale {
                    nz.push((r, c, v));
                }
            }
        }
        match self.terms.iter_mut().find(|(v, _)| *v == var) {
            Some((_, existing)) => {
                let mut dense = Matrix::zeros(self.size, self.size);
                for &(r, c, v) in existing.iter().chain(nz.iter()) {
                    dense[(r, c)] += v;
                }
                *existing = dense
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(k, v)| (k % self.size, k / self.size, *v))
                    .collect();
            }
            None => self.terms.push((var, nz)),
        }
        Ok(())
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.shape() != (self.size, self.size) {
            return Err(Error::Dimension(format!(
                "LMI coefficient is {}x{}, block size {}",
                m.nrows(),
                m.ncols(),
                self.size
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &Vector) -> Matrix {
        let mut f = self.constant.clone();
        for (var, nz) in &self.terms {
            let xv = x[*var];
            if xv != 0.0 {
                for &(r, c, v) in nz {
                    f[(r, c)] += xv * v;
                }
            }
        }
        f
    }

    fn nnz(&self) -> usize {
        self.terms.iter().map(|(_, nz)| nz.len()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct LmiProblem {
    n_vars: usize,
    objective: Vector,
    blocks: Vec<LmiBlock>,
    eq_a: Matrix,
    eq_b: Vector,
}

impl LmiProblem {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            objective: Vector::zeros(n_vars),
            blocks: Vec::new(),
            eq_a: Matrix::zeros(0, n_vars),
            eq_b: Vector::zeros(0),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    pub fn set_objective(&mut self, c: Vector) -> Result<()> {
        if c.len() != self.n_vars {
            return Err(Error::Dimension("objective length differs from variable count".into()));
        }
        self.objective = c;
        Ok(())
    }

    pub fn add_block(&mut self, block: LmiBlock) -> Result<()> {
        if block.terms.iter().any(|(v, _)| *v >= self.n_vars) {
            return Err(Error::Dimension("LMI term references an unknown variable".into()));
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Sets `A x = b`. Dependent rows are removed; inconsistent systems are rejected.
    pub fn set_equalities(&mut self, a: &Matrix, b: &Vector) -> Result<()> {
        if a.ncols() != self.n_vars || a.nrows() != b.len() {
            return Err(Error::Dimension("equality system has wrong shape".into()));
        }
        if a.nrows() == 0 {
            self.eq_a = Matrix::zeros(0, self.n_vars);
            self.eq_b = Vector::zeros(0);
            return Ok(());
        }
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > RANK_TOL * smax)
            .collect();
        let mut new_a = Matrix::zeros(keep.len(), self.n_vars);
        let mut new_b = Vector::zeros(keep.len());
        for (row, &k) in keep.iter().enumerate() {
            new_a.set_row(row, &(v_t.row(k) * svd.singular_values[k]));
            new_b[row] = u.column(k).dot(b);
        }
        // residual of b outside the range of A
        let mut proj = Vector::zeros(b.len());
        for &k in &keep {
            proj += u.column(k) * u.column(k).dot(b);
        }
        if (b - proj).norm() > 1e-9 * b.norm().max(1.0) {
            return Err(Error::Infeasible("linear equality constraints are inconsistent".into()));
        }
        self.eq_a = new_a;
        self.eq_b = new_b;
        Ok(())
    }

    pub fn equality_residual(&self, x: &Vector) -> f64 {
        if self.eq_a.nrows() == 0 {
            0.0
        } else {
            (&self.eq_a * x - &self.eq_b).norm()
        }
    }

    fn barrier_order(&self) -> f64 {
        self.blocks.iter().map(|b| b.size as f64).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    /// Target bound on `m/τ`.
    pub gap_tol: f64,
    /// Stop as soon as an iterate reaches this objective value.
    pub stop_above: Option<f64>,
    /// Stop as soon as the upper bound falls below this value.
    pub stop_below: Option<f64>,
    pub max_newton: usize,
    pub tau_factor: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-10,
            stop_above: None,
            stop_below: None,
            max_newton: 2000,
            tau_factor: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    ReachedTarget,
    BelowTarget,
    /// Progress stopped before the gap target (numerical limits); best point returned.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub x: Vector,
    pub value: f64,
    pub upper_bound: f64,
    pub status: SolveStatus,
    pub newton_steps: usize,
}

/// Interface for LMI-program solvers used by the certifier and the adversary.
pub trait LmiSolver: Sync {
    fn maximize(&self, problem: &LmiProblem, x0: &Vector, opts: &SolveOptions) -> Result<Solution>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BarrierSolver;

struct Factored {
    chol: Vec<Cholesky<f64, Dyn>>,
    log_det: f64,
}

fn factor(problem: &LmiProblem, x: &Vector) -> Option<Factored> {
    let mut chol = Vec::with_capacity(problem.blocks.len());
    let mut log_det = 0.0;
    for b in &problem.blocks {
        let f = b.evaluate(x);
        let c = Cholesky::new(f)?;
        log_det += 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        chol.push(c);
    }
    if !log_det.is_finite() {
        return None;
    }
    Some(Factored { chol, log_det })
}

fn gradient_and_hessian(problem: &LmiProblem, fac: &Factored, tau: f64) -> (Vector, Matrix) {
    let nv = problem.n_vars;
    let mut grad = -&problem.objective * tau;
    let mut hess = Matrix::zeros(nv, nv);
    for (b, c) in problem.blocks.iter().zip(&fac.chol) {
        let g = c.inverse();
        for (var, nz) in &b.terms {
            let mut s = 0.0;
            for &(r, col, v) in nz {
                s += g[(col, r)] * v;
            }
            grad[*var] -= s;
        }
        let n = b.size as f64;
        let nnz = b.nnz() as f64;
        let k = b.terms.len() as f64;
        if nnz * nnz < k * n * n * n + k * k * n * n {
            for (ia, (va, nza)) in b.terms.iter().enumerate() {
                for (vb, nzb) in b.terms.iter().take(ia + 1) {
                    let mut s = 0.0;
                    for &(a1, b1, f) in nza {
                        for &(c1, d1, h) in nzb {
                            s += f * h * g[(b1, c1)] * g[(d1, a1)];
                        }
                    }
                    hess[(*va, *vb)] += s;
                    if va != vb {
                        hess[(*vb, *va)] += s;
                    }
                }
            }
        } else {
            let size = b.size;
            let ws: Vec<Matrix> = b
                .terms
                .iter()
                .map(|(_, nz)| {
                    let mut w = Matrix::zeros(size, size);
                    for &(r, col, v) in nz {
                        for p in 0..size {
                            w[(p, col)] += g[(p, r)] * v;
                        }
                    }
                    w
                })
                .collect();
            for (ia, (va, _)) in b.terms.iter().enumerate() {
                for (ib, (vb, _)) in b.terms.iter().enumerate().take(ia + 1) {
                    let wt = ws[ib].transpose();
                    let s = ws[ia].component_mul(&wt).sum();
                    hess[(*va, *vb)] += s;
                    if va != vb {
                        hess[(*vb, *va)] += s;
                    }
                }
            }
        }
    }
    (grad, hess)
}

fn newton_direction(problem: &LmiProblem, grad: &Vector, hess: &Matrix) -> Option<Vector> {
    let nv = problem.n_vars;
    let r = problem.eq_a.nrows();
    if r == 0 {
        if let Some(c) = Cholesky::new(hess.clone()) {
            return Some(-c.solve(grad));
        }
        return LU::new(hess.clone()).solve(&(-grad));
    }
    let mut kkt = Matrix::zeros(nv + r, nv + r);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(hess);
    kkt.view_mut((nv, 0), (r, nv)).copy_from(&problem.eq_a);
    kkt.view_mut((0, nv), (nv, r)).copy_from(&problem.eq_a.transpose());
    let mut rhs = Vector::zeros(nv + r);
    rhs.rows_mut(0, nv).copy_from(&(-grad));
    let sol = LU::new(kkt).solve(&rhs)?;
    Some(sol.rows(0, nv).into_owned())
}

impl LmiSolver for BarrierSolver {
    fn maximize(&self, problem: &LmiProblem, x0: &Vector, opts: &SolveOptions) -> Result<Solution> {
        if x0.len() != problem.n_vars {
            return Err(Error::Dimension("initial point has wrong length".into()));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("non-finite initial point".into()));
        }
        if problem.equality_residual(x0) > 1e-8 * x0.norm().max(1.0) {
            return Err(Error::Solver("initial point violates the equality constraints".into()));
        }
        let mut fac = factor(problem, x0)
            .ok_or_else(|| Error::Solver("initial point is not strictly feasible".into()))?;
        let m_total = problem.barrier_order();
        let c = &problem.objective;
        let mut x = x0.clone();
        let mut tau = 1.0;
        let mut steps = 0usize;
        let phi = |x: &Vector, log_det: f64, tau: f64| -tau * c.dot(x) - log_det;
        let finish = |x: Vector, tau: f64, status: SolveStatus, steps: usize| {
            let value = c.dot(&x);
            Solution {
                upper_bound: value + m_total / tau,
                x,
                value,
                status,
                newton_steps: steps,
            }
        };

        loop {
            // centering
            let mut stalled = false;
            loop {
                if let Some(target) = opts.stop_above {
                    if c.dot(&x) >= target {
                        return Ok(finish(x, tau, SolveStatus::ReachedTarget, steps));
                    }
                }
                let (grad, hess) = gradient_and_hessian(problem, &fac, tau);
                if grad.iter().chain(hess.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Solver("non-finite barrier derivatives".into()));
                }
                let Some(dx) = newton_direction(problem, &grad, &hess) else {
                    stalled = true;
                    break;
                };
                let decrement = -grad.dot(&dx);
                if !decrement.is_finite() {
                    return Err(Error::Solver("non-finite Newton decrement".into()));
                }
                if decrement <= 1e-10 {
                    break;
                }
                steps += 1;
                if steps > opts.max_newton {
                    stalled = true;
                    break;
                }
                let f0 = phi(&x, fac.log_det, tau);
                let mut s = 1.0;
                let mut accepted = None;
                while s > 1e-14 {
                    let trial = &x + &dx * s;
                    if let Some(fac_t) = factor(problem, &trial) {
                        let slack = 8.0 * f64::EPSILON * f0.abs().max(1.0);
                        if phi(&trial, fac_t.log_det, tau) <= f0 - 0.25 * s * decrement + slack {
                            accepted = Some((trial, fac_t));
                            break;
                        }
                    }
                    s *= 0.5;
                }
                match accepted {
                    Some((xt, ft)) => {
                        x = xt;
                        fac = ft;
                    }
                    None => {
                        // roundoff-limited but already nearly centered
                        stalled = decrement > 1e-6;
                        break;
                    }
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver("iterate became non-finite".into()));
            }
            if stalled {
                return Ok(finish(x, tau, SolveStatus::Stalled, steps));
            }
            if let Some(target) = opts.stop_above {
                if c.dot(&x) >= target {
                    return Ok(finish(x, tau, SolveStatus::ReachedTarget, steps));
                }
            }
            if let Some(target) = opts.stop_below {
                if c.dot(&x) + m_total / tau < target {
                    return Ok(finish(x, tau, SolveStatus::BelowTarget, steps));
                }
            }
            if m_total / tau < opts.gap_tol {
                return Ok(finish(x, tau, SolveStatus::Converged, steps));
            }
            tau *= opts.tau_factor;
        }
    }
}

/// Symmetric-matrix variable `S = Σ s_k E_k` over the upper triangle.
#[derive(Clone, Copy, Debug)]
pub struct SymVar {
    pub offset: usize,
    pub dim: usize,
}

impl SymVar {
    pub fn count(dim: usize) -> usize {
        dim * (dim + 1) / 2
    }

    pub fn len(&self) -> usize {
        Self::count(self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// `(variable index, basis matrix)` pairs.
    pub fn basis(&self) -> Vec<(usize, Matrix)> {
        let mut out = Vec::with_capacity(self.len());
        let mut k = self.offset;
        for i in 0..self.dim {
            for j in i..self.dim {
                let mut e = Matrix::zeros(self.dim, self.dim);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                out.push((k, e));
                k += 1;
            }
        }
        out
    }

    pub fn extract(&self, x: &Vector) -> Matrix {
        let mut s = Matrix::zeros(self.dim, self.dim);
        let mut k = self.offset;
        for i in 0..self.dim {
            for j in i..self.dim {
                s[(i, j)] = x[k];
                s[(j, i)] = x[k];
                k += 1;
            }
        }
        s
    }

    pub fn write(&self, s: &Matrix, x: &mut Vector) {
        let mut k = self.offset;
        for i in 0..self.dim {
            for j in i..self.dim {
                x[k] = 0.5 * (s[(i, j)] + s[(j, i)]);
                k += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_block(constant: f64, terms: &[(usize, f64)]) -> LmiBlock {
        let mut b = LmiBlock::new(1);
        b.set_constant(&Matrix::from_element(1, 1, constant)).unwrap();
        for &(v, c) in terms {
            b.add_term(v, &Matrix::from_element(1, 1, c)).unwrap();
        }
        b
    }

    #[test]
    fn linear_program_on_a_box() {
        // maximize x0 + 2 x1 with 0 ≤ x ≤ 1
        let mut p = LmiProblem::new(2);
        p.set_objective(Vector::from_vec(vec![1.0, 2.0])).unwrap();
        for v in 0..2 {
            p.add_block(scalar_block(0.0, &[(v, 1.0)])).unwrap();
            p.add_block(scalar_block(1.0, &[(v, -1.0)])).unwrap();
        }
        let sol = BarrierSolver
            .maximize(&p, &Vector::from_vec(vec![0.5, 0.5]), &SolveOptions::default())
            .unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!((sol.value - 3.0).abs() < 1e-8);
    }

    #[test]
    fn max_eigenvalue_as_sdp() {
        // minimize t s.t. tI - S ⪰ 0 gives λmax(S)
        let s = Matrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, -1.0, 1.0]);
        let mut p = LmiProblem::new(1);
        p.set_objective(Vector::from_vec(vec![-1.0])).unwrap();
        let mut b = LmiBlock::new(3);
        b.set_constant(&(-&s)).unwrap();
        b.add_term(0, &Matrix::identity(3, 3)).unwrap();
        p.add_block(b).unwrap();
        let sol = BarrierSolver
            .maximize(&p, &Vector::from_vec(vec![10.0]), &SolveOptions::default())
            .unwrap();
        let lmax = crate::toolkit::max_eigenvalue_symmetric(&s).unwrap();
        assert!((sol.x[0] - lmax).abs() < 1e-8);
    }

    #[test]
    fn equality_constraints_with_redundant_rows() {
        // maximize x0 s.t. x0 + x1 = 1 (stated twice), x ≥ 0
        let mut p = LmiProblem::new(2);
        p.set_objective(Vector::from_vec(vec![1.0, 0.0])).unwrap();
        p.add_block(scalar_block(0.0, &[(0, 1.0)])).unwrap();
        p.add_block(scalar_block(0.0, &[(1, 1.0)])).unwrap();
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        p.set_equalities(&a, &Vector::from_vec(vec![1.0, 2.0])).unwrap();
        let sol = BarrierSolver
            .maximize(&p, &Vector::from_vec(vec![0.5, 0.5]), &SolveOptions::default())
            .unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-8);
        assert!(p.equality_residual(&sol.x) < 1e-10);
    }

    #[test]
    fn inconsistent_equalities_rejected() {
        let mut p = LmiProblem::new(1);
        let a = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(
            p.set_equalities(&a, &Vector::from_vec(vec![1.0, 2.0])),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn early_exits() {
        let mut p = LmiProblem::new(1);
        p.set_objective(Vector::from_vec(vec![1.0])).unwrap();
        p.add_block(scalar_block(1.0, &[(0, -1.0)])).unwrap();
        p.add_block(scalar_block(1.0, &[(0, 1.0)])).unwrap();
        let x0 = Vector::from_vec(vec![0.0]);
        let above = BarrierSolver
            .maximize(&p, &x0, &SolveOptions { stop_above: Some(0.5), ..Default::default() })
            .unwrap();
        assert_eq!(above.status, SolveStatus::ReachedTarget);
        assert!(above.value >= 0.5);
        let below = BarrierSolver
            .maximize(&p, &x0, &SolveOptions { stop_below: Some(2.0), ..Default::default() })
            .unwrap();
        assert_eq!(below.status, SolveStatus::BelowTarget);
        assert!(below.upper_bound < 2.0);
    }

    #[test]
    fn infeasible_start_is_an_error() {
        let mut p = LmiProblem::new(1);
        p.add_block(scalar_block(-1.0, &[(0, 1.0)])).unwrap();
        assert!(matches!(
            BarrierSolver.maximize(&p, &Vector::from_vec(vec![0.0]), &SolveOptions::default()),
            Err(Error::Solver(_))
        ));
    }

    #[test]
    fn sym_var_round_trip() {
        let v = SymVar { offset: 2, dim: 3 };
        let s = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let mut x = Vector::zeros(2 + v.len());
        v.write(&s, &mut x);
        assert_eq!(v.extract(&x), s);
        let mut rebuilt = Matrix::zeros(3, 3);
        for (k, e) in v.basis() {
            rebuilt += e * x[k];
        }
        // off-diagonal basis elements carry both triangles
        assert_eq!(rebuilt, s);
    }

    fn hessian_matches_trace_formula(terms: &[Matrix]) {
        let n = terms[0].nrows();
        let mut block = LmiBlock::new(n);
        block.set_constant(&(Matrix::identity(n, n) * 3.0)).unwrap();
        for (v, m) in terms.iter().enumerate() {
            block.add_term(v, m).unwrap();
        }
        let k = terms.len();
        let x = Vector::from_fn(k, |i, _| 0.1 * (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 });
        let mut p = LmiProblem::new(k);
        p.add_block(block).unwrap();
        let fac = factor(&p, &x).unwrap();
        let (_, h) = gradient_and_hessian(&p, &fac, 1.0);
        let g = p.blocks[0].evaluate(&x).try_inverse().unwrap();
        for i in 0..k {
            for j in 0..k {
                let sym_i = (&terms[i] + terms[i].transpose()) * 0.5;
                let sym_j = (&terms[j] + terms[j].transpose()) * 0.5;
                let expect = (&g * sym_i * &g * sym_j).trace();
                assert!((h[(i, j)] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dense_hessian_route() {
        let n = 4;
        let terms: Vec<Matrix> = (0..3)
            .map(|v| Matrix::from_fn(n, n, |i, j| ((i + 2 * j + v) % 5) as f64 * 0.1 + ((i * j + v) % 3) as f64 * 0.05))
            .collect();
        hessian_matches_trace_formula(&terms);
    }

    #[test]
    fn sparse_hessian_route() {
        let n = 6;
        let terms: Vec<Matrix> = (0..4)
            .map(|v| {
                let mut m = Matrix::zeros(n, n);
                m[(v, v + 2)] = 0.3 + 0.1 * v as f64;
                m[(v + 2, v)] = 0.3 + 0.1 * v as f64;
                m
            })
            .collect();
        hessian_matches_trace_formula(&terms);
    }
}
