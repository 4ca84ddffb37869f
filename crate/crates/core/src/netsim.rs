//! Network simulation of realizations over time-varying graphs.

use std::io::Write;
use std::str::FromStr;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algolib::{construct_fixed_point, AlgorithmName, Realization, Signals};
use crate::certifier::{lyapunov_value_blocks, Certificate};
use crate::error::{Error, Result};
use crate::toolkit::{disagreement_projector, ones_complement_basis, spectral_norm, Matrix};

/// Tolerance on the conserved quantity for accepted initial states.
pub const INVARIANT_TOL: f64 = 1e-8;

/// Errors below this are treated as converged in rate estimates.
pub const ERROR_FLOOR: f64 = 1e-13;

/// `max{(κ-1)/(κ+1), σ}`.
pub fn lower_bound(kappa: f64, sigma: f64) -> f64 {
    ((kappa - 1.0) / (kappa + 1.0)).max(sigma)
}

/// A symmetric Laplacian with `‖I - Π - L‖ ≤ σ`, eigenvalues of `I - Π - L` uniform in `[-σ, σ]`.
pub fn random_laplacian<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Result<Matrix> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need n >= 2 agents, got {n}")));
    }
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::InvalidParameter(format!("sigma must lie in [0, 1), got {sigma}")));
    }
    let helmert = ones_complement_basis(n);
    let g = Matrix::from_fn(n - 1, n - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let rotation = g.qr().q();
    let u = helmert * rotation;
    let diag: Vec<f64> = (0..n - 1)
        .map(|_| if sigma > 0.0 { rng.random_range(-sigma..=sigma) } else { 0.0 })
        .collect();
    let d = Matrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
    let lap = disagreement_projector(n) - &u * d * u.transpose();
    Ok((&lap + lap.transpose()) * 0.5)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianSequence {
    pub laps: Vec<Matrix>,
    pub sigma_bound: f64,
}

impl LaplacianSequence {
    pub fn new(laps: Vec<Matrix>, sigma_bound: f64) -> Result<Self> {
        let seq = Self { laps, sigma_bound };
        seq.validate()?;
        Ok(seq)
    }

    /// Fresh i.i.d. draw per step.
    pub fn random(n: usize, sigma: f64, steps: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let laps = (0..steps)
            .map(|_| random_laplacian(n, sigma, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self { laps, sigma_bound: sigma })
    }

    /// One draw repeated for every step.
    pub fn constant(n: usize, sigma: f64, steps: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lap = random_laplacian(n, sigma, &mut rng)?;
        Ok(Self {
            laps: vec![lap; steps],
            sigma_bound: sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.laps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.laps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, lap) in self.laps.iter().enumerate() {
            let n = lap.nrows();
            if lap.ncols() != n || n < 1 {
                return Err(Error::Dimension(format!("laplacian {k} is not square")));
            }
            let scale = lap.amax().max(1.0);
            let row_sum = lap.column_sum().amax();
            let col_sum = lap.row_sum().amax();
            if row_sum > 1e-9 * scale || col_sum > 1e-9 * scale {
                return Err(Error::InvalidParameter(format!(
                    "laplacian {k} is not balanced (row sums {row_sum:.2e}, column sums {col_sum:.2e})"
                )));
            }
            let gap = spectral_norm(&(disagreement_projector(n) - lap));
            if gap > self.sigma_bound + 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "laplacian {k} has ‖I-Π-L‖ = {gap} > {}",
                    self.sigma_bound
                )));
            }
        }
        Ok(())
    }
}

/// `f(y) = ½ (y - r)ᵀ H (y - r)` with `m I ⪯ H ⪯ L I`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticLocalFunction {
    pub h: Matrix,
    /// Minimizer, as a 1 x d row.
    pub r: Matrix,
}

impl QuadraticLocalFunction {
    pub fn new(h: Matrix, r: Matrix, m: f64, l: f64) -> Result<Self> {
        let d = h.nrows();
        if h.ncols() != d || r.shape() != (1, d) {
            return Err(Error::Dimension("H must be d x d and r 1 x d".into()));
        }
        if (&h - h.transpose()).amax() > 1e-12 * h.amax().max(1.0) {
            return Err(Error::InvalidParameter("H is not symmetric".into()));
        }
        let eig = SymmetricEigen::new(h.clone()).eigenvalues;
        let tol = 1e-12 * l.abs().max(1.0);
        if eig.min() < m - tol || eig.max() > l + tol {
            return Err(Error::InvalidParameter(format!(
                "H spectrum [{}, {}] outside [{m}, {l}]",
                eig.min(),
                eig.max()
            )));
        }
        Ok(Self { h, r })
    }

    /// Random Hessian with spectrum in `[m, L]` and a standard normal minimizer.
    pub fn random<R: Rng + ?Sized>(d: usize, m: f64, l: f64, rng: &mut R) -> Result<Self> {
        let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let spectrum: Vec<f64> = (0..d)
            .map(|_| if l > m { rng.random_range(m..=l) } else { m })
            .collect();
        let h = &q * Matrix::from_diagonal(&nalgebra::DVector::from_vec(spectrum)) * q.transpose();
        let h = (&h + h.transpose()) * 0.5;
        let r = Matrix::from_fn(1, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::new(h, r, m, l)
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn gradient(&self, y: &Matrix) -> Matrix {
        (y - &self.r) * &self.h
    }

    pub fn value(&self, y: &Matrix) -> f64 {
        let e = y - &self.r;
        0.5 * (&e * &self.h * e.transpose())[(0, 0)]
    }
}

/// Minimizer of `Σ f_i` (1 x d).
pub fn global_minimizer(funcs: &[QuadraticLocalFunction]) -> Result<Matrix> {
    let d = funcs.first().map(QuadraticLocalFunction::dim).ok_or_else(|| {
        Error::InvalidParameter("no local functions".into())
    })?;
    let mut h = Matrix::zeros(d, d);
    let mut b = Matrix::zeros(1, d);
    for f in funcs {
        h += &f.h;
        b += &f.r * &f.h;
    }
    let inv = h
        .try_inverse()
        .ok_or_else(|| Error::Singular("sum of Hessians is singular".into()))?;
    Ok(b * inv)
}

fn algorithm_parameter(r: &Realization, row: usize, col: usize, which: &str) -> Result<f64> {
    r.f_x
        .get((row, col))
        .copied()
        .ok_or_else(|| Error::InvalidAlgorithm(format!("{}: cannot read {which}", r.name)))
}

/// Per-algorithm starting state from the agents' initial points `x0` (each 1 x d).
///
/// EXTRA and NIDS start from their first iterate, gradient tracking starts
/// with the tracker equal to the local gradient, two-state methods start the
/// auxiliary state at zero. Unknown realizations get `p x0` corrected so
/// that the conserved quantity vanishes.
pub fn canonical_init(
    r: &Realization,
    funcs: &[QuadraticLocalFunction],
    x0: &[Matrix],
    first_laplacian: &Matrix,
) -> Result<Vec<Matrix>> {
    let n = funcs.len();
    if x0.len() != n || first_laplacian.shape() != (n, n) {
        return Err(Error::Dimension("initial points, functions and laplacian disagree".into()));
    }
    let d = funcs[0].dim();
    let name = AlgorithmName::from_str(&r.name).ok();
    let expected = name.map(|nm| match nm {
        AlgorithmName::Extra | AlgorithmName::Nids | AlgorithmName::DIGing | AlgorithmName::AugDgm => 3,
        _ => 2,
    });
    let name = if expected == Some(r.n_states()) { name } else { None };
    let gossip = |vals: &[Matrix]| -> Vec<Matrix> {
        (0..n)
            .map(|i| {
                let mut acc = Matrix::zeros(1, d);
                for (j, v) in vals.iter().enumerate() {
                    acc += v * first_laplacian[(i, j)];
                }
                acc
            })
            .collect()
    };
    let stack = |rows: &[&Matrix]| -> Matrix {
        let mut m = Matrix::zeros(rows.len(), d);
        for (k, row) in rows.iter().enumerate() {
            m.rows_mut(k, 1).copy_from(row);
        }
        m
    };
    let grads: Vec<Matrix> = funcs.iter().zip(x0).map(|(f, x)| f.gradient(x)).collect();
    let states = match name {
        Some(AlgorithmName::Extra) | Some(AlgorithmName::Nids) => {
            let alpha = algorithm_parameter(r, 0, 2, "alpha")?;
            let mu = -r.b_v[(0, 0)];
            let lx = gossip(x0);
            (0..n)
                .map(|i| {
                    let mut x1 = &x0[i] - &grads[i] * alpha;
                    if name == Some(AlgorithmName::Extra) {
                        x1 -= &lx[i] * mu;
                    }
                    stack(&[&x1, &x0[i], &grads[i]])
                })
                .collect()
        }
        Some(AlgorithmName::DIGing) | Some(AlgorithmName::AugDgm) => (0..n)
            .map(|i| stack(&[&x0[i], &grads[i], &grads[i]]))
            .collect(),
        Some(AlgorithmName::ExDiff) => (0..n).map(|i| stack(&[&x0[i], &x0[i]])).collect(),
        Some(AlgorithmName::UDig) | Some(AlgorithmName::UExtra) | Some(AlgorithmName::Svl) => {
            let zero = Matrix::zeros(1, d);
            (0..n).map(|i| stack(&[&x0[i], &zero])).collect()
        }
        None => generic_init(r, x0)?,
    };
    Ok(states)
}

fn generic_init(r: &Realization, x0: &[Matrix]) -> Result<Vec<Matrix>> {
    if r.f_u.amax() > 0.0 {
        return Err(Error::InvalidAlgorithm(format!(
            "{}: no canonical initialization when the invariant involves the gradient",
            r.name
        )));
    }
    let w = r.fixed_point_witness().ok_or_else(|| {
        Error::InvalidAlgorithm(format!("{}: no fixed point", r.name))
    })?;
    let n = x0.len() as f64;
    let mut xs: Vec<Matrix> = x0.iter().map(|x| &w.p * x).collect();
    let offset = r.invariant_sum(&xs, &[]) / n;
    if r.n_invariants() > 0 {
        let correction = crate::toolkit::least_squares(&r.f_x, &offset)?;
        for x in xs.iter_mut() {
            *x -= &correction;
        }
    }
    Ok(xs)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub algorithm: String,
    pub seed: Option<u64>,
    pub n: usize,
    pub d: usize,
    pub iterations: usize,
    pub sigma: f64,
    pub m: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    pub rho: Option<f64>,
    pub certificate: Option<serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub n: usize,
    pub d: usize,
    /// States `x^0 .. x^K`, one n_x x d block per agent.
    pub states: Vec<Vec<Matrix>>,
    /// Signals of iterations `0 .. K-1`.
    pub signals: Vec<Vec<Signals>>,
    /// Fixed point the errors are measured against.
    pub fixed_point: Vec<Signals>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn iterations(&self) -> usize {
        self.signals.len()
    }

    /// `x^k - x⋆` per agent.
    pub fn state_errors(&self, k: usize) -> Vec<Matrix> {
        self.states[k]
            .iter()
            .zip(&self.fixed_point)
            .map(|(x, s)| x - &s.x)
            .collect()
    }

    /// `‖x^k - x⋆‖` over all agents for `k = 0..=K`.
    pub fn error_norms(&self) -> Vec<f64> {
        (0..self.states.len())
            .map(|k| self.state_errors(k).iter().map(|e| e.norm_squared()).sum::<f64>().sqrt())
            .collect()
    }

    pub fn lyapunov_values(&self, cert: &Certificate) -> Result<Vec<f64>> {
        (0..self.states.len())
            .map(|k| lyapunov_value_blocks(cert, &self.state_errors(k)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,agent,||x_err||,||y_err||")?;
        for k in 0..self.states.len() {
            for i in 0..self.n {
                let xe = (&self.states[k][i] - &self.fixed_point[i].x).norm();
                let ye = match self.signals.get(k) {
                    Some(sig) => format!("{:.12e}", (&sig[i].y - &self.fixed_point[i].y).norm()),
                    None => String::new(),
                };
                writeln!(out, "{k},{i},{xe:.12e},{ye}")?;
            }
        }
        Ok(())
    }

    pub fn meta_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.meta)?)
    }
}

/// Runs `r` for `steps` iterations (one Laplacian per iteration) from `init`.
pub fn run(
    r: &Realization,
    funcs: &[QuadraticLocalFunction],
    laps: &LaplacianSequence,
    steps: usize,
    init: &[Matrix],
) -> Result<Trajectory> {
    let n = funcs.len();
    if n == 0 || init.len() != n {
        return Err(Error::Dimension("need one initial state per local function".into()));
    }
    if laps.len() < steps {
        return Err(Error::InvalidParameter(format!(
            "{steps} iterations requested but only {} laplacians given",
            laps.len()
        )));
    }
    if !r.check_implementable() {
        return Err(Error::InvalidAlgorithm(format!("{}: circular feedthrough dependency", r.name)));
    }
    let witness = r
        .fixed_point_witness()
        .ok_or_else(|| Error::InvalidAlgorithm(format!("{}: no fixed point", r.name)))?;
    let d = funcs[0].dim();
    let y_opt = global_minimizer(funcs)?;
    let grads_opt: Vec<Matrix> = funcs.iter().map(|f| f.gradient(&y_opt)).collect();
    let fixed_point = construct_fixed_point(r, &witness, &grads_opt, &y_opt)?;
    let gradient = |i: usize, y: &Matrix| -> Result<Matrix> { Ok(funcs[i].gradient(y)) };

    let mut states = vec![init.to_vec()];
    let mut signals = Vec::with_capacity(steps);
    let scale = init.iter().map(|x| x.amax()).fold(1.0, f64::max);
    for k in 0..steps {
        let (sig, next) = r.step(&states[k], gradient, &laps.laps[k])?;
        if k == 0 {
            let us: Vec<Matrix> = sig.iter().map(|s| s.u.clone()).collect();
            let residual = r.invariant_sum(&states[0], &us).amax();
            if residual > INVARIANT_TOL * scale {
                return Err(Error::BadInitialization(residual));
            }
        }
        signals.push(sig);
        states.push(next);
    }
    if steps == 0 && r.f_u.amax() == 0.0 {
        let residual = r.invariant_sum(&states[0], &[]).amax();
        if residual > INVARIANT_TOL * scale {
            return Err(Error::BadInitialization(residual));
        }
    }
    Ok(Trajectory {
        n,
        d,
        states,
        signals,
        fixed_point,
        meta: TrajectoryMeta {
            algorithm: r.name.clone(),
            n,
            d,
            iterations: steps,
            sigma: laps.sigma_bound,
            ..TrajectoryMeta::default()
        },
    })
}

/// `exp` of the least-squares slope of `log e_k` over `k ≥ burn_in`; stops at the first value below the floor.
pub fn rate_from_errors(errors: &[f64], burn_in: usize) -> Result<f64> {
    if burn_in >= errors.len() {
        return Err(Error::InsufficientData(format!(
            "burn-in {burn_in} leaves no samples out of {}",
            errors.len()
        )));
    }
    let pts: Vec<(f64, f64)> = errors[burn_in..]
        .iter()
        .enumerate()
        .take_while(|(_, e)| e.is_finite() && **e >= ERROR_FLOOR)
        .map(|(j, e)| ((burn_in + j) as f64, e.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "{} usable points after burn-in, need 5",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let kbar = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let lbar = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - kbar) * (p.1 - lbar)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - kbar).powi(2)).sum();
    Ok((sxy / sxx).exp())
}

pub fn empirical_rate(traj: &Trajectory, burn_in: usize) -> Result<f64> {
    rate_from_errors(&traj.error_norms(), burn_in)
}

/// Seeded instance: `n` random quadratics in `[m, L]`, standard normal starting points.
pub fn random_instance(
    n: usize,
    d: usize,
    m: f64,
    l: f64,
    seed: u64,
) -> Result<(Vec<QuadraticLocalFunction>, Vec<Matrix>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let funcs = (0..n)
        .map(|_| QuadraticLocalFunction::random(d, m, l, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let x0 = (0..n)
        .map(|_| Matrix::from_fn(1, d, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Ok((funcs, x0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algolib::{catalog, CatalogParams};
    use proptest::prelude::*;

    fn second_smallest_abs_eig(l: &Matrix) -> f64 {
        let mut eig: Vec<f64> = SymmetricEigen::new(l.clone()).eigenvalues.iter().map(|e| e.abs()).collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eig[1]
    }

    #[test]
    fn two_agent_laplacian_at_zero_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = random_laplacian(2, 0.0, &mut rng).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((l - want).amax() < 1e-15);
        assert!(random_laplacian(1, 0.5, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn laplacian_properties(n in 2usize..9, sigma in 0.0f64..0.99, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = random_laplacian(n, sigma, &mut rng).unwrap();
            prop_assert!(l.column_sum().amax() < 1e-12);
            prop_assert!((&l - l.transpose()).amax() < 1e-14);
            prop_assert!(spectral_norm(&(disagreement_projector(n) - &l)) <= sigma + 1e-9);
            prop_assert!(second_smallest_abs_eig(&l) >= 1.0 - sigma - 1e-9);
        }

        #[test]
        fn rate_of_geometric_sequence(rho in 0.3f64..0.99, c in 0.1f64..10.0) {
            let errs: Vec<f64> = (0..40).map(|k| c * rho.powi(k)).collect();
            prop_assert!((rate_from_errors(&errs, 3).unwrap() - rho).abs() < 1e-9);
        }
    }

    #[test]
    fn rate_examples() {
        let errs: Vec<f64> = (0..50).map(|k| 2.0 * 0.9f64.powi(k)).collect();
        assert!((rate_from_errors(&errs, 0).unwrap() - 0.9).abs() < 1e-6);
        assert!((rate_from_errors(&[3.0; 20], 2).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(rate_from_errors(&[1.0, 0.5, 0.25], 0), Err(Error::InsufficientData(_))));
        let fast: Vec<f64> = (0..40).map(|k| 0.01f64.powi(k)).collect();
        assert!(rate_from_errors(&fast, 0).is_ok());
        assert!(rate_from_errors(&fast, 10).is_err());
    }

    #[test]
    fn lower_bound_examples() {
        assert!((lower_bound(10.0, 0.5) - 9.0 / 11.0).abs() < 1e-15);
        assert_eq!(lower_bound(1.0, 0.9), 0.9);
        assert_eq!(lower_bound(1.0, 0.0), 0.0);
    }

    #[test]
    fn quadratic_rejects_out_of_sector() {
        let h = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 20.0]);
        assert!(QuadraticLocalFunction::new(h, Matrix::zeros(1, 2), 1.0, 10.0).is_err());
        let h = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 2.0]);
        assert!(QuadraticLocalFunction::new(h, Matrix::zeros(1, 2), 1.0, 10.0).is_err());
    }

    #[test]
    fn single_agent_svl_is_gradient_descent() {
        let (m, alpha) = (1.0, 0.3);
        let r = catalog(AlgorithmName::Svl, &CatalogParams::svl(alpha, 0.5, 1.5, 1.0)).unwrap();
        let f = QuadraticLocalFunction::new(Matrix::from_element(1, 1, m), Matrix::zeros(1, 1), m, m).unwrap();
        let laps = LaplacianSequence::new(vec![Matrix::zeros(1, 1); 20], 0.0).unwrap();
        let x0 = Matrix::from_element(1, 1, 1.5);
        let init = canonical_init(&r, std::slice::from_ref(&f), &[x0], &laps.laps[0]).unwrap();
        let traj = run(&r, &[f], &laps, 20, &init).unwrap();
        for (k, s) in traj.states.iter().enumerate() {
            assert!((s[0][(0, 0)] - 1.5 * (1.0 - alpha * m).powi(k as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn extra_invariant_is_preserved() {
        let r = catalog(AlgorithmName::Extra, &CatalogParams::new(0.05, 1.0)).unwrap();
        let (funcs, x0) = random_instance(5, 2, 1.0, 10.0, 3).unwrap();
        let laps = LaplacianSequence::random(5, 0.6, 60, 4).unwrap();
        let init = canonical_init(&r, &funcs, &x0, &laps.laps[0]).unwrap();
        let traj = run(&r, &funcs, &laps, 60, &init).unwrap();
        for xs in &traj.states {
            assert!(r.invariant_sum(xs, &[]).amax() < 1e-9);
        }
    }

    #[test]
    fn bad_initialization_is_rejected() {
        let r = catalog(AlgorithmName::Extra, &CatalogParams::new(0.05, 1.0)).unwrap();
        let (funcs, x0) = random_instance(3, 1, 1.0, 10.0, 3).unwrap();
        let laps = LaplacianSequence::random(3, 0.5, 5, 4).unwrap();
        let mut init = canonical_init(&r, &funcs, &x0, &laps.laps[0]).unwrap();
        init[0][(2, 0)] += 1.0;
        assert!(matches!(run(&r, &funcs, &laps, 5, &init), Err(Error::BadInitialization(_))));
    }

    #[test]
    fn every_catalog_algorithm_converges() {
        for name in AlgorithmName::BASELINES {
            let params = CatalogParams::new(0.02, 1.0).with_class(1.0, 10.0);
            let r = catalog(name, &params).unwrap();
            let (funcs, x0) = random_instance(4, 2, 1.0, 10.0, 11).unwrap();
            let laps = LaplacianSequence::random(4, 0.3, 1500, 12).unwrap();
            let init = canonical_init(&r, &funcs, &x0, &laps.laps[0]).unwrap();
            let traj = run(&r, &funcs, &laps, 1500, &init).unwrap();
            let errs = traj.error_norms();
            assert!(errs.last().unwrap() < &(1e-6 * errs[0]), "{name}: {}", errs.last().unwrap());
        }
    }

    #[test]
    fn generic_init_satisfies_invariant() {
        let mut r = catalog(AlgorithmName::UDig, &CatalogParams::new(0.05, 1.0).with_class(1.0, 10.0)).unwrap();
        r.name = "custom".into();
        let (funcs, x0) = random_instance(3, 1, 1.0, 10.0, 1).unwrap();
        let laps = LaplacianSequence::random(3, 0.5, 5, 2).unwrap();
        let init = canonical_init(&r, &funcs, &x0, &laps.laps[0]).unwrap();
        assert!(run(&r, &funcs, &laps, 5, &init).is_ok());
    }

    #[test]
    fn csv_layout() {
        let r = catalog(AlgorithmName::Svl, &CatalogParams::svl(0.1, 0.5, 1.5, 1.0)).unwrap();
        let (funcs, x0) = random_instance(2, 1, 1.0, 2.0, 1).unwrap();
        let laps = LaplacianSequence::random(2, 0.5, 3, 2).unwrap();
        let init = canonical_init(&r, &funcs, &x0, &laps.laps[0]).unwrap();
        let traj = run(&r, &funcs, &laps, 3, &init).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,agent,||x_err||,||y_err||");
        assert_eq!(lines.len(), 1 + 4 * 2);
        assert!(lines.last().unwrap().ends_with(','));
    }
}
