//! Algorithms in linear state-space form with a gradient channel and a
//! gossip channel, plus the built-in catalog.
//!
//! Each agent `i` runs
//!
//! ```text
//! x⁺ = A x + B_u u + B_v v
//! y  = C_y x + D_yu u + D_yv v        u = ∇f_i(y)
//! z  = C_z x + D_zu u + D_zv v        v = Σ_j L_ij z_j
//! ```
//!
//! with the conserved quantity `Σ_i (F_x x_i + F_u u_i)`. For `d > 1` every
//! signal becomes a block with `d` columns and the matrices act from the left.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toolkit::{self, Matrix, RANK_TOL};

#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub name: String,
    pub a: Matrix,
    pub b_u: Matrix,
    pub b_v: Matrix,
    pub c_y: Matrix,
    pub d_yu: Matrix,
    pub d_yv: Matrix,
    pub c_z: Matrix,
    pub d_zu: Matrix,
    pub d_zv: Matrix,
    pub f_x: Matrix,
    pub f_u: Matrix,
}

/// Nodes of the per-iteration signal dependency graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Signal {
    Y,
    U,
    Z(usize),
    V(usize),
}

/// Per-agent signals of one iteration; every block has `d` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Signals {
    pub x: Matrix,
    pub y: Matrix,
    pub u: Matrix,
    pub z: Matrix,
    pub v: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointWitness {
    /// Consensus direction, scaled so that `C_y p = 1`.
    pub p: Matrix,
    /// Gradient offset, solving `(A-I)q = B_u`, `C_y q = D_yu`, `C_z q = D_zu`.
    pub q: Matrix,
}

fn check_shape(label: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{label} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{label} has a non-finite entry")));
    }
    Ok(())
}

impl Realization {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        a: Matrix,
        b_u: Matrix,
        b_v: Matrix,
        c_y: Matrix,
        d_yu: Matrix,
        d_yv: Matrix,
        c_z: Matrix,
        d_zu: Matrix,
        d_zv: Matrix,
        f_x: Matrix,
        f_u: Matrix,
    ) -> Result<Self> {
        let nx = a.nrows();
        let p = b_v.ncols();
        let q = f_x.nrows();
        if nx == 0 {
            return Err(Error::Dimension("realization needs at least one state".into()));
        }
        if p == 0 {
            return Err(Error::Dimension("realization needs at least one communicated signal".into()));
        }
        check_shape("A", &a, nx, nx)?;
        check_shape("B_u", &b_u, nx, 1)?;
        check_shape("B_v", &b_v, nx, p)?;
        check_shape("C_y", &c_y, 1, nx)?;
        check_shape("D_yu", &d_yu, 1, 1)?;
        check_shape("D_yv", &d_yv, 1, p)?;
        check_shape("C_z", &c_z, p, nx)?;
        check_shape("D_zu", &d_zu, p, 1)?;
        check_shape("D_zv", &d_zv, p, p)?;
        check_shape("F_x", &f_x, q, nx)?;
        check_shape("F_u", &f_u, q, 1)?;
        Ok(Self {
            name: name.into(),
            a,
            b_u,
            b_v,
            c_y,
            d_yu,
            d_yv,
            c_z,
            d_zu,
            d_zv,
            f_x,
            f_u,
        })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_comm(&self) -> usize {
        self.b_v.ncols()
    }

    pub fn n_invariants(&self) -> usize {
        self.f_x.nrows()
    }

    /// `[F_x F_u]`.
    pub fn invariant_map(&self) -> Matrix {
        let nx = self.n_states();
        let mut m = Matrix::zeros(self.n_invariants(), nx + 1);
        m.view_mut((0, 0), (self.n_invariants(), nx)).copy_from(&self.f_x);
        m.view_mut((0, nx), (self.n_invariants(), 1)).copy_from(&self.f_u);
        m
    }

    /// Checks the two fixed-point conditions and returns a witness when both hold.
    ///
    /// The consensus condition asks for `p` with `(A-I)p = 0`, `F_x p = 0` and
    /// `C_y p ≠ 0`; the gradient condition asks for `q` with
    /// `[A-I; C_y; C_z] q = [B_u; D_yu; D_zu]`.
    pub fn fixed_point_witness(&self) -> Option<FixedPointWitness> {
        let nx = self.n_states();
        let p_dim = self.n_comm();
        let q_dim = self.n_invariants();
        let a_minus_i = &self.a - Matrix::identity(nx, nx);

        let mut stacked = Matrix::zeros(nx + q_dim, nx);
        stacked.view_mut((0, 0), (nx, nx)).copy_from(&a_minus_i);
        stacked.view_mut((nx, 0), (q_dim, nx)).copy_from(&self.f_x);
        let null = toolkit::nullspace_basis(&stacked, RANK_TOL).ok()?;
        if null.ncols() == 0 {
            return None;
        }
        let cy_null = &self.c_y * &null;
        let gain = cy_null.norm_squared();
        if gain.sqrt() <= RANK_TOL * self.c_y.norm().max(1.0) {
            return None;
        }
        let p = &null * cy_null.transpose() / gain;

        let mut lhs = Matrix::zeros(nx + 1 + p_dim, nx);
        lhs.view_mut((0, 0), (nx, nx)).copy_from(&a_minus_i);
        lhs.view_mut((nx, 0), (1, nx)).copy_from(&self.c_y);
        lhs.view_mut((nx + 1, 0), (p_dim, nx)).copy_from(&self.c_z);
        let mut rhs = Matrix::zeros(nx + 1 + p_dim, 1);
        rhs.view_mut((0, 0), (nx, 1)).copy_from(&self.b_u);
        rhs.view_mut((nx, 0), (1, 1)).copy_from(&self.d_yu);
        rhs.view_mut((nx + 1, 0), (p_dim, 1)).copy_from(&self.d_zu);
        let q = toolkit::least_squares(&lhs, &rhs).ok()?;
        let residual = (&lhs * &q - &rhs).norm();
        let scale = toolkit::spectral_norm(&lhs).max(rhs.norm()).max(1.0);
        if residual > 1e-8 * scale {
            return None;
        }
        Some(FixedPointWitness { p, q })
    }

    pub fn check_fixed_point(&self) -> bool {
        self.fixed_point_witness().is_some()
    }

    /// Dependency edges `(from, to)`: `to` reads `from` within one iteration.
    fn dependency_edges(&self) -> Vec<(Signal, Signal)> {
        let p = self.n_comm();
        let mut edges = vec![(Signal::Y, Signal::U)];
        if self.d_yu[(0, 0)] != 0.0 {
            edges.push((Signal::U, Signal::Y));
        }
        for j in 0..p {
            if self.d_yv[(0, j)] != 0.0 {
                edges.push((Signal::V(j), Signal::Y));
            }
        }
        for l in 0..p {
            edges.push((Signal::Z(l), Signal::V(l)));
            if self.d_zu[(l, 0)] != 0.0 {
                edges.push((Signal::U, Signal::Z(l)));
            }
            for j in 0..p {
                if self.d_zv[(l, j)] != 0.0 {
                    edges.push((Signal::V(j), Signal::Z(l)));
                }
            }
        }
        edges
    }

    /// Order in which the signals of one iteration can be computed, or `None`
    /// when the feedthrough terms create a circular dependency.
    pub fn evaluation_order(&self) -> Option<Vec<Signal>> {
        let p = self.n_comm();
        let mut nodes = vec![Signal::Y, Signal::U];
        for l in 0..p {
            nodes.push(Signal::Z(l));
            nodes.push(Signal::V(l));
        }
        let index = |s: Signal| nodes.iter().position(|&n| n == s).expect("known node");
        let edges = self.dependency_edges();
        let mut indegree = vec![0usize; nodes.len()];
        for &(_, to) in &edges {
            indegree[index(to)] += 1;
        }
        let mut order = Vec::with_capacity(nodes.len());
        let mut done = vec![false; nodes.len()];
        while order.len() < nodes.len() {
            let next = (0..nodes.len()).find(|&k| !done[k] && indegree[k] == 0)?;
            done[next] = true;
            order.push(nodes[next]);
            for &(from, to) in &edges {
                if from == nodes[next] {
                    indegree[index(to)] -= 1;
                }
            }
        }
        Some(order)
    }

    /// True when the feedthrough block `[D_yu D_yv; D_zu D_zv]` has the shape
    /// `[0 D_yv; 0 0]` or `[0 0; D_zu 0]`.
    pub fn matches_feedthrough_pattern(&self) -> bool {
        let zero = |m: &Matrix| m.iter().all(|&v| v == 0.0);
        let yv_pattern = zero(&self.d_yu) && zero(&self.d_zu) && zero(&self.d_zv);
        let zu_pattern = zero(&self.d_yu) && zero(&self.d_yv) && zero(&self.d_zv);
        yv_pattern || zu_pattern
    }

    /// An iteration is implementable when its signals can be computed without
    /// circular dependencies: either one of the two standard feedthrough
    /// patterns holds or the signal dependency graph is acyclic.
    pub fn check_implementable(&self) -> bool {
        self.matches_feedthrough_pattern() || self.evaluation_order().is_some()
    }

    /// Value of `Σ_i (F_x x_i + F_u u_i)` (q x d).
    pub fn invariant_sum(&self, xs: &[Matrix], us: &[Matrix]) -> Matrix {
        let d = xs.first().map_or(1, Matrix::ncols);
        let mut total = Matrix::zeros(self.n_invariants(), d);
        for (x, u) in xs.iter().zip(us) {
            total += &self.f_x * x + &self.f_u * u;
        }
        total
    }

    /// Evaluates one iteration for all agents.
    ///
    /// `gradient(i, y_i)` returns agent `i`'s gradient at `y_i` (both 1 x d),
    /// and `laplacian` is the n x n gossip matrix of this round. Returns the
    /// per-agent signals of the current iteration and the next states.
    pub fn step<G>(
        &self,
        xs: &[Matrix],
        mut gradient: G,
        laplacian: &Matrix,
    ) -> Result<(Vec<Signals>, Vec<Matrix>)>
    where
        G: FnMut(usize, &Matrix) -> Result<Matrix>,
    {
        let n = xs.len();
        if laplacian.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "laplacian is {}x{} for {n} agents",
                laplacian.nrows(),
                laplacian.ncols()
            )));
        }
        let order = self.evaluation_order().ok_or_else(|| {
            Error::InvalidAlgorithm(format!("{}: circular feedthrough dependency", self.name))
        })?;
        let nx = self.n_states();
        let p = self.n_comm();
        let d = xs.first().map_or(1, Matrix::ncols);
        for x in xs {
            if x.shape() != (nx, d) {
                return Err(Error::Dimension(format!(
                    "agent state is {}x{}, expected {nx}x{d}",
                    x.nrows(),
                    x.ncols()
                )));
            }
        }
        let mut sig: Vec<Signals> = xs
            .iter()
            .map(|x| Signals {
                x: x.clone(),
                y: Matrix::zeros(1, d),
                u: Matrix::zeros(1, d),
                z: Matrix::zeros(p, d),
                v: Matrix::zeros(p, d),
            })
            .collect();
        for node in order {
            match node {
                Signal::Y => {
                    for s in sig.iter_mut() {
                        s.y = &self.c_y * &s.x + &self.d_yu * &s.u + &self.d_yv * &s.v;
                    }
                }
                Signal::U => {
                    for (i, s) in sig.iter_mut().enumerate() {
                        let g = gradient(i, &s.y)?;
                        if g.shape() != (1, d) {
                            return Err(Error::Dimension("gradient must be 1 x d".into()));
                        }
                        s.u = g;
                    }
                }
                Signal::Z(l) => {
                    for s in sig.iter_mut() {
                        let row = self.c_z.rows(l, 1) * &s.x
                            + self.d_zu.rows(l, 1) * &s.u
                            + self.d_zv.rows(l, 1) * &s.v;
                        s.z.rows_mut(l, 1).copy_from(&row);
                    }
                }
                Signal::V(l) => {
                    let rows: Vec<Matrix> = (0..n)
                        .map(|i| {
                            let mut acc = Matrix::zeros(1, d);
                            for j in 0..n {
                                acc += sig[j].z.rows(l, 1) * laplacian[(i, j)];
                            }
                            acc
                        })
                        .collect();
                    for (s, row) in sig.iter_mut().zip(rows) {
                        s.v.rows_mut(l, 1).copy_from(&row);
                    }
                }
            }
        }
        let next = sig
            .iter()
            .map(|s| &self.a * &s.x + &self.b_u * &s.u + &self.b_v * &s.v)
            .collect();
        Ok((sig, next))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&RealizationFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RealizationFile = serde_json::from_str(text)?;
        file.into_realization()
    }
}

/// Builds the fixed point for the given per-agent gradients at the optimum
/// (each 1 x d) and optimizer `y_opt` (1 x d).
pub fn construct_fixed_point(
    r: &Realization,
    w: &FixedPointWitness,
    gradients: &[Matrix],
    y_opt: &Matrix,
) -> Result<Vec<Signals>> {
    let d = y_opt.ncols();
    if y_opt.nrows() != 1 {
        return Err(Error::Dimension("y_opt must be a single row".into()));
    }
    let mut sum = Matrix::zeros(1, d);
    for g in gradients {
        if g.shape() != (1, d) {
            return Err(Error::Dimension("gradients must be 1 x d rows".into()));
        }
        sum += g;
    }
    let scale = gradients.iter().map(|g| g.norm()).fold(1.0, f64::max);
    if sum.norm() > 1e-8 * scale {
        return Err(Error::InconsistentOptimum(sum.norm()));
    }
    let p = r.n_comm();
    let z = &r.c_z * &w.p * y_opt;
    Ok(gradients
        .iter()
        .map(|g| Signals {
            x: &w.p * y_opt - &w.q * g,
            y: y_opt.clone(),
            u: g.clone(),
            z: z.clone(),
            v: Matrix::zeros(p, d),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlgorithmName {
    Extra,
    Nids,
    DIGing,
    AugDgm,
    ExDiff,
    UDig,
    UExtra,
    Svl,
}

impl AlgorithmName {
    pub const ALL: [AlgorithmName; 8] = [
        AlgorithmName::Extra,
        AlgorithmName::Nids,
        AlgorithmName::DIGing,
        AlgorithmName::AugDgm,
        AlgorithmName::ExDiff,
        AlgorithmName::UDig,
        AlgorithmName::UExtra,
        AlgorithmName::Svl,
    ];

    /// Every catalog entry except SVL.
    pub const BASELINES: [AlgorithmName; 7] = [
        AlgorithmName::Extra,
        AlgorithmName::Nids,
        AlgorithmName::DIGing,
        AlgorithmName::AugDgm,
        AlgorithmName::ExDiff,
        AlgorithmName::UDig,
        AlgorithmName::UExtra,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AlgorithmName::Extra => "EXTRA",
            AlgorithmName::Nids => "NIDS",
            AlgorithmName::DIGing => "DIGing",
            AlgorithmName::AugDgm => "AugDGM",
            AlgorithmName::ExDiff => "ExDiff",
            AlgorithmName::UDig => "uDIG",
            AlgorithmName::UExtra => "uEXTRA",
            AlgorithmName::Svl => "SVL",
        }
    }

    /// Whether the realization depends on the sector bounds (m, L).
    pub fn needs_class(self) -> bool {
        matches!(self, AlgorithmName::UDig | AlgorithmName::UExtra)
    }
}

impl fmt::Display for AlgorithmName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AlgorithmName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let name = match key.as_str() {
            "extra" => AlgorithmName::Extra,
            "nids" => AlgorithmName::Nids,
            "diging" => AlgorithmName::DIGing,
            "augdgm" => AlgorithmName::AugDgm,
            "exdiff" | "exact-diffusion" | "exactdiffusion" => AlgorithmName::ExDiff,
            "udig" => AlgorithmName::UDig,
            "uextra" => AlgorithmName::UExtra,
            "svl" => AlgorithmName::Svl,
            _ => return Err(Error::UnknownAlgorithm(s.to_string())),
        };
        Ok(name)
    }
}

/// Parameters substituted into a catalog entry. Unused fields are ignored.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CatalogParams {
    pub alpha: Option<f64>,
    pub mu: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub m: Option<f64>,
    pub l: Option<f64>,
}

impl CatalogParams {
    pub fn new(alpha: f64, mu: f64) -> Self {
        Self {
            alpha: Some(alpha),
            mu: Some(mu),
            ..Self::default()
        }
    }

    pub fn svl(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Self {
        Self {
            alpha: Some(alpha),
            beta: Some(beta),
            gamma: Some(gamma),
            delta: Some(delta),
            ..Self::default()
        }
    }

    pub fn with_class(mut self, m: f64, l: f64) -> Self {
        self.m = Some(m);
        self.l = Some(l);
        self
    }
}

fn required(name: AlgorithmName, param: &'static str, value: Option<f64>) -> Result<f64> {
    let v = value.ok_or(Error::MissingParameter {
        algorithm: name.label(),
        param,
    })?;
    if !v.is_finite() {
        return Err(Error::InvalidParameter(format!("{name}: {param} = {v}")));
    }
    Ok(v)
}

fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, data)
}

/// Builds the named catalog realization with the given parameters substituted.
pub fn catalog(name: AlgorithmName, params: &CatalogParams) -> Result<Realization> {
    let a = required(name, "alpha", params.alpha)?;
    if a <= 0.0 {
        return Err(Error::InvalidParameter(format!("{name}: alpha must be positive, got {a}")));
    }
    let label = name.label();
    if name == AlgorithmName::Svl {
        let b = required(name, "beta", params.beta)?;
        let g = required(name, "gamma", params.gamma)?;
        let d = required(name, "delta", params.delta)?;
        return Realization::new(
            label,
            mat(2, 2, &[1.0, b, 0.0, 1.0]),
            mat(2, 1, &[-a, 0.0]),
            mat(2, 1, &[-g, -1.0]),
            mat(1, 2, &[1.0, 0.0]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[-d]),
            mat(1, 2, &[1.0, 0.0]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[0.0]),
            mat(1, 2, &[0.0, 1.0]),
            mat(1, 1, &[0.0]),
        );
    }
    let mu = required(name, "mu", params.mu)?;
    if mu == 0.0 {
        return Err(Error::InvalidParameter(format!("{name}: mu must be nonzero")));
    }
    let (m, l) = if name.needs_class() {
        let m = required(name, "m", params.m)?;
        let l = required(name, "L", params.l)?;
        if !(m > 0.0 && m <= l) {
            return Err(Error::InvalidParameter(format!(
                "{name}: need 0 < m <= L, got m = {m}, L = {l}"
            )));
        }
        (m, l)
    } else {
        (0.0, 0.0)
    };
    match name {
        AlgorithmName::Extra | AlgorithmName::Nids => {
            let (c_z, d_zu) = if name == AlgorithmName::Extra {
                (mat(1, 3, &[1.0, -0.5, 0.0]), 0.0)
            } else {
                (mat(1, 3, &[1.0, -0.5, a / 2.0]), -a / 2.0)
            };
            Realization::new(
                label,
                mat(3, 3, &[2.0, -1.0, a, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
                mat(3, 1, &[-a, 0.0, 1.0]),
                mat(3, 1, &[-mu, 0.0, 0.0]),
                mat(1, 3, &[1.0, 0.0, 0.0]),
                mat(1, 1, &[0.0]),
                mat(1, 1, &[0.0]),
                c_z,
                mat(1, 1, &[d_zu]),
                mat(1, 1, &[0.0]),
                mat(1, 3, &[1.0, -1.0, a]),
                mat(1, 1, &[0.0]),
            )
        }
        AlgorithmName::ExDiff => Realization::new(
            label,
            mat(2, 2, &[2.0, -1.0, 1.0, 0.0]),
            mat(2, 1, &[-a, -a]),
            mat(2, 1, &[-mu, -mu / 2.0]),
            mat(1, 2, &[1.0, 0.0]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[-mu / 2.0]),
            mat(1, 2, &[1.0, 0.0]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[0.0]),
            mat(1, 2, &[1.0, -1.0]),
            mat(1, 1, &[0.0]),
        ),
        AlgorithmName::UDig | AlgorithmName::UExtra => {
            let (c_z, d_zv) = if name == AlgorithmName::UDig {
                (mat(2, 2, &[1.0, 0.0, -(l + m) / 2.0, 1.0]), Matrix::zeros(2, 2))
            } else {
                (
                    mat(2, 2, &[1.0, 0.0, -l, 1.0]),
                    mat(2, 2, &[0.0, 0.0, l * mu, 0.0]),
                )
            };
            Realization::new(
                label,
                mat(2, 2, &[1.0, -a, 0.0, 1.0]),
                mat(2, 1, &[-a, 0.0]),
                mat(2, 2, &[-mu, 0.0, 0.0, -mu]),
                mat(1, 2, &[1.0, 0.0]),
                mat(1, 1, &[0.0]),
                mat(1, 2, &[0.0, 0.0]),
                c_z,
                mat(2, 1, &[0.0, 1.0]),
                d_zv,
                mat(1, 2, &[0.0, 1.0]),
                mat(1, 1, &[0.0]),
            )
        }
        AlgorithmName::DIGing | AlgorithmName::AugDgm => {
            let coupling = if name == AlgorithmName::DIGing { 0.0 } else { a * mu };
            Realization::new(
                label,
                mat(3, 3, &[1.0, -a, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0]),
                mat(3, 1, &[0.0, 1.0, 1.0]),
                mat(3, 2, &[-mu, coupling, 0.0, -mu, 0.0, 0.0]),
                mat(1, 3, &[1.0, -a, 0.0]),
                mat(1, 1, &[0.0]),
                mat(1, 2, &[-mu, coupling]),
                mat(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
                Matrix::zeros(2, 1),
                Matrix::zeros(2, 2),
                mat(1, 3, &[0.0, 1.0, -1.0]),
                mat(1, 1, &[0.0]),
            )
        }
        AlgorithmName::Svl => unreachable!("handled above"),
    }
}

/// On-disk algorithm definition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RealizationFile {
    pub name: String,
    pub n_states: usize,
    pub n_comm: usize,
    pub n_invariants: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B_u")]
    pub b_u: Vec<Vec<f64>>,
    #[serde(rename = "B_v")]
    pub b_v: Vec<Vec<f64>>,
    #[serde(rename = "C_y")]
    pub c_y: Vec<Vec<f64>>,
    #[serde(rename = "D_yu")]
    pub d_yu: Vec<Vec<f64>>,
    #[serde(rename = "D_yv")]
    pub d_yv: Vec<Vec<f64>>,
    #[serde(rename = "C_z")]
    pub c_z: Vec<Vec<f64>>,
    #[serde(rename = "D_zu")]
    pub d_zu: Vec<Vec<f64>>,
    #[serde(rename = "D_zv")]
    pub d_zv: Vec<Vec<f64>>,
    #[serde(rename = "F_x")]
    pub f_x: Vec<Vec<f64>>,
    #[serde(rename = "F_u")]
    pub f_u: Vec<Vec<f64>>,
}

impl From<&Realization> for RealizationFile {
    fn from(r: &Realization) -> Self {
        let rows = toolkit::matrix_to_rows;
        Self {
            name: r.name.clone(),
            n_states: r.n_states(),
            n_comm: r.n_comm(),
            n_invariants: r.n_invariants(),
            a: rows(&r.a),
            b_u: rows(&r.b_u),
            b_v: rows(&r.b_v),
            c_y: rows(&r.c_y),
            d_yu: rows(&r.d_yu),
            d_yv: rows(&r.d_yv),
            c_z: rows(&r.c_z),
            d_zu: rows(&r.d_zu),
            d_zv: rows(&r.d_zv),
            f_x: rows(&r.f_x),
            f_u: rows(&r.f_u),
        }
    }
}

impl RealizationFile {
    pub fn into_realization(self) -> Result<Realization> {
        let (nx, p, q) = (self.n_states, self.n_comm, self.n_invariants);
        let load = |label: &str, rows: &[Vec<f64>], r: usize, c: usize| -> Result<Matrix> {
            if rows.len() != r {
                return Err(Error::Dimension(format!(
                    "{label} has {} rows, expected {r}",
                    rows.len()
                )));
            }
            toolkit::rows_to_matrix(rows, c)
                .map_err(|e| Error::InvalidAlgorithm(format!("{label}: {e}")))
        };
        Realization::new(
            self.name.clone(),
            load("A", &self.a, nx, nx)?,
            load("B_u", &self.b_u, nx, 1)?,
            load("B_v", &self.b_v, nx, p)?,
            load("C_y", &self.c_y, 1, nx)?,
            load("D_yu", &self.d_yu, 1, 1)?,
            load("D_yv", &self.d_yv, 1, p)?,
            load("C_z", &self.c_z, p, nx)?,
            load("D_zu", &self.d_zu, p, 1)?,
            load("D_zv", &self.d_zv, p, p)?,
            load("F_x", &self.f_x, q, nx)?,
            load("F_u", &self.f_u, q, 1)?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolkit::{disagreement_projector, ones_complement_basis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params_for(name: AlgorithmName) -> CatalogParams {
        match name {
            AlgorithmName::Svl => CatalogParams::svl(0.05, 0.4, 1.4, 1.0),
            _ => CatalogParams::new(0.1, 1.0).with_class(1.0, 10.0),
        }
    }

    fn laplacian(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Matrix {
        let u = ones_complement_basis(n);
        let d = Matrix::from_diagonal(&toolkit::Vector::from_fn(n - 1, |_, _| {
            rng.random_range(-sigma..=sigma)
        }));
        disagreement_projector(n) - &u * d * u.transpose()
    }

    #[test]
    fn extra_block() {
        let r = catalog(AlgorithmName::Extra, &CatalogParams::new(0.1, 1.0)).unwrap();
        assert_eq!(r.a, mat(3, 3, &[2.0, -1.0, 0.1, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(r.b_u, mat(3, 1, &[-0.1, 0.0, 1.0]));
        assert_eq!(r.b_v, mat(3, 1, &[-1.0, 0.0, 0.0]));
        assert_eq!(r.c_y, mat(1, 3, &[1.0, 0.0, 0.0]));
        assert_eq!(r.c_z, mat(1, 3, &[1.0, -0.5, 0.0]));
        assert_eq!(r.f_x, mat(1, 3, &[1.0, -1.0, 0.1]));
        assert_eq!(r.f_u, mat(1, 1, &[0.0]));
        for m in [&r.d_yu, &r.d_yv, &r.d_zu, &r.d_zv] {
            assert!(m.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn svl_template() {
        let r = catalog(AlgorithmName::Svl, &CatalogParams::svl(0.2, 0.3, 1.3, 1.0)).unwrap();
        assert_eq!(r.a, mat(2, 2, &[1.0, 0.3, 0.0, 1.0]));
        assert_eq!(r.b_u, mat(2, 1, &[-0.2, 0.0]));
        assert_eq!(r.b_v, mat(2, 1, &[-1.3, -1.0]));
        assert_eq!(r.d_yv, mat(1, 1, &[-1.0]));
        assert_eq!(r.f_x, mat(1, 2, &[0.0, 1.0]));
    }

    #[test]
    fn nids_block() {
        let r = catalog(AlgorithmName::Nids, &CatalogParams::new(0.2, 1.0)).unwrap();
        assert_eq!(r.c_z, mat(1, 3, &[1.0, -0.5, 0.1]));
        assert_eq!(r.d_zu, mat(1, 1, &[-0.1]));
        assert_eq!(r.d_zv, mat(1, 1, &[0.0]));
    }

    #[test]
    fn catalog_errors() {
        assert!(matches!(
            "foo".parse::<AlgorithmName>(),
            Err(Error::UnknownAlgorithm(_))
        ));
        let missing = CatalogParams {
            alpha: Some(0.1),
            ..Default::default()
        };
        assert!(matches!(
            catalog(AlgorithmName::Svl, &missing),
            Err(Error::MissingParameter { param: "beta", .. })
        ));
        assert!(matches!(
            catalog(AlgorithmName::UDig, &CatalogParams::new(0.1, 1.0)),
            Err(Error::MissingParameter { param: "m", .. })
        ));
        assert!(catalog(AlgorithmName::Extra, &CatalogParams::new(-0.1, 1.0)).is_err());
        assert!(catalog(AlgorithmName::Extra, &CatalogParams::new(0.1, 0.0)).is_err());
        assert!(catalog(
            AlgorithmName::UExtra,
            &CatalogParams::new(0.1, 1.0).with_class(2.0, 1.0)
        )
        .is_err());
    }

    #[test]
    fn names_round_trip() {
        for name in AlgorithmName::ALL {
            assert_eq!(name.label().parse::<AlgorithmName>().unwrap(), name);
        }
    }

    #[test]
    fn catalog_passes_structural_checks() {
        for name in AlgorithmName::ALL {
            let r = catalog(name, &params_for(name)).unwrap();
            assert!(r.check_fixed_point(), "{name} fixed point");
            assert!(r.check_implementable(), "{name} implementable");
        }
    }

    #[test]
    fn only_uextra_needs_the_acyclic_rule() {
        for name in AlgorithmName::ALL {
            let r = catalog(name, &params_for(name)).unwrap();
            assert_eq!(r.matches_feedthrough_pattern(), name != AlgorithmName::UExtra);
        }
    }

    #[test]
    fn svl_with_zero_beta_has_no_fixed_point() {
        let r = catalog(AlgorithmName::Svl, &CatalogParams::svl(0.1, 0.0, 1.0, 1.0)).unwrap();
        assert!(!r.check_fixed_point());
    }

    #[test]
    fn scalar_without_gradient_offset_fails() {
        let one = mat(1, 1, &[1.0]);
        let zero = mat(1, 1, &[0.0]);
        let r = Realization::new(
            "scalar",
            one.clone(),
            one.clone(),
            zero.clone(),
            one.clone(),
            zero.clone(),
            zero.clone(),
            one.clone(),
            zero.clone(),
            zero.clone(),
            Matrix::zeros(0, 1),
            Matrix::zeros(0, 1),
        )
        .unwrap();
        assert!(!r.check_fixed_point());
    }

    #[test]
    fn proximal_feedthrough_is_rejected() {
        // y = x - λu together with u = ∇f(y) is an implicit equation.
        let lam = 0.3;
        let r = Realization::new(
            "prox",
            mat(1, 1, &[1.0]),
            mat(1, 1, &[-lam]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[-lam]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[0.0]),
            Matrix::zeros(0, 1),
            Matrix::zeros(0, 1),
        )
        .unwrap();
        assert!(!r.check_implementable());
    }

    #[test]
    fn witness_invariants() {
        for name in AlgorithmName::ALL {
            let r = catalog(name, &params_for(name)).unwrap();
            let w = r.fixed_point_witness().unwrap();
            let nx = r.n_states();
            let ami = &r.a - Matrix::identity(nx, nx);
            assert!((&ami * &w.p).norm() < 1e-8);
            assert!((&r.f_x * &w.p).norm() < 1e-8);
            assert!(((&r.c_y * &w.p)[(0, 0)] - 1.0).abs() < 1e-8);
            assert!((&ami * &w.q - &r.b_u).norm() < 1e-8);
            assert!((&r.c_y * &w.q - &r.d_yu).norm() < 1e-8);
            assert!((&r.c_z * &w.q - &r.d_zu).norm() < 1e-8);
        }
    }

    #[test]
    fn zero_fixed_point() {
        let r = catalog(AlgorithmName::Extra, &params_for(AlgorithmName::Extra)).unwrap();
        let w = r.fixed_point_witness().unwrap();
        let fp = construct_fixed_point(&r, &w, &vec![Matrix::zeros(1, 1); 4], &Matrix::zeros(1, 1))
            .unwrap();
        assert!(fp.iter().all(|s| s.x.norm() == 0.0));
    }

    #[test]
    fn inconsistent_gradients_rejected() {
        let r = catalog(AlgorithmName::Extra, &params_for(AlgorithmName::Extra)).unwrap();
        let w = r.fixed_point_witness().unwrap();
        let g = vec![mat(1, 1, &[1.0]), mat(1, 1, &[0.5])];
        assert!(matches!(
            construct_fixed_point(&r, &w, &g, &Matrix::zeros(1, 1)),
            Err(Error::InconsistentOptimum(_))
        ));
    }

    // Quadratics f_i(y) = (L/2)|y - r_i|² have y_opt = mean(r), ∇f_i(y_opt) = L(y_opt - r_i).
    #[test]
    fn fixed_point_is_stationary_for_every_catalog_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, d, lc) = (5, 2, 10.0);
        for name in AlgorithmName::ALL {
            let r = catalog(name, &params_for(name)).unwrap();
            let w = r.fixed_point_witness().unwrap();
            let targets: Vec<Matrix> = (0..n)
                .map(|_| Matrix::from_fn(1, d, |_, _| rng.random_range(-2.0..2.0)))
                .collect();
            let mut y_opt = Matrix::zeros(1, d);
            for t in &targets {
                y_opt += t / n as f64;
            }
            let grads: Vec<Matrix> = targets.iter().map(|t| (&y_opt - t) * lc).collect();
            let fp = construct_fixed_point(&r, &w, &grads, &y_opt).unwrap();

            let xs: Vec<Matrix> = fp.iter().map(|s| s.x.clone()).collect();
            let lap = laplacian(&mut rng, n, 0.7);
            let (sig, next) = r
                .step(&xs, |i, y| Ok((y - &targets[i]) * lc), &lap)
                .unwrap();
            for i in 0..n {
                assert!((&next[i] - &xs[i]).norm() < 1e-10, "{name}");
                assert!((&sig[i].y - &y_opt).norm() < 1e-10, "{name}");
                assert!((&sig[i].u - &grads[i]).norm() < 1e-10, "{name}");
                assert!(sig[i].v.norm() < 1e-10, "{name}");
                assert!((&sig[i].z - &fp[i].z).norm() < 1e-10, "{name}");
            }
            let mut usum = Matrix::zeros(1, d);
            for s in &fp {
                usum += &s.u;
            }
            assert!(usum.norm() < 1e-10);
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let r = catalog(AlgorithmName::DIGing, &CatalogParams::new(0.1, 1.0)).unwrap();
        let text = r.to_json().unwrap();
        assert_eq!(Realization::from_json(&text).unwrap(), r);

        let mut bad: serde_json::Value = serde_json::from_str(&text).unwrap();
        bad["n_comm"] = serde_json::json!(1);
        assert!(Realization::from_json(&bad.to_string()).is_err());

        let mut short: serde_json::Value = serde_json::from_str(&text).unwrap();
        short["A"][0] = serde_json::json!([1.0, 2.0]);
        assert!(Realization::from_json(&short.to_string()).is_err());
    }

    #[test]
    fn json_accepts_zero_invariants() {
        let text = r#"{"name":"gd","n_states":1,"n_comm":1,"n_invariants":0,
            "A":[[1]],"B_u":[[-0.1]],"B_v":[[0]],"C_y":[[1]],"D_yu":[[0]],"D_yv":[[0]],
            "C_z":[[1]],"D_zu":[[0]],"D_zv":[[0]],"F_x":[],"F_u":[]}"#;
        let r = Realization::from_json(text).unwrap();
        assert_eq!(r.n_invariants(), 0);
        // plain decentralized gradient descent is inexact: no fixed point
        assert!(!r.check_fixed_point());
    }
}
