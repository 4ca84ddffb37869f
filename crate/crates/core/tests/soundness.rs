use distcert::algolib::{catalog, construct_fixed_point, AlgorithmName, CatalogParams, Realization};
use distcert::certifier::{certify_rate, ProblemClass};
use distcert::netsim::{self, LaplacianSequence, QuadraticLocalFunction};
use distcert::svl::design;
use distcert::toolkit::Matrix;
use proptest::prelude::*;

fn realization(name: AlgorithmName, pc: &ProblemClass, alpha: f64) -> Realization {
    if name == AlgorithmName::Svl {
        design(pc, 1e-9).unwrap().realization().unwrap()
    } else {
        catalog(name, &CatalogParams::new(alpha, 1.0).with_class(pc.m, pc.l)).unwrap()
    }
}

#[test]
fn fixed_point_is_stationary() {
    let pc = ProblemClass::from_kappa(10.0, 0.6).unwrap();
    for name in AlgorithmName::ALL {
        let r = realization(name, &pc, 0.05);
        for seed in 0..5 {
            let (funcs, _) = netsim::random_instance(6, 2, pc.m, pc.l, seed).unwrap();
            let laps = LaplacianSequence::random(6, pc.sigma, 100, seed).unwrap();
            let y_opt = netsim::global_minimizer(&funcs).unwrap();
            let grads: Vec<Matrix> = funcs.iter().map(|f| f.gradient(&y_opt)).collect();
            let witness = r.fixed_point_witness().unwrap();
            let fixed: Vec<Matrix> = construct_fixed_point(&r, &witness, &grads, &y_opt)
                .unwrap()
                .into_iter()
                .map(|s| s.x)
                .collect();
            let traj = netsim::run(&r, &funcs, &laps, 100, &fixed).unwrap();
            let worst = traj.error_norms().into_iter().fold(0.0, f64::max);
            assert!(worst <= 1e-9, "{name} seed {seed}: drifted {worst:.3e}");
        }
    }
}

#[test]
fn static_consensus_depends_on_targets_only_through_the_start() {
    let pc = ProblemClass::from_kappa(1.0, 0.5).unwrap();
    let r = realization(AlgorithmName::Svl, &pc, 0.0);
    let n = 5;
    let steps = 40;
    let laps = LaplacianSequence::random(n, pc.sigma, steps, 3).unwrap();
    let targets = |shift: f64| -> Vec<QuadraticLocalFunction> {
        (0..n)
            .map(|i| {
                let r = Matrix::from_element(1, 1, (i as f64 + shift).sin() * 3.0);
                QuadraticLocalFunction::new(Matrix::identity(1, 1), r, 1.0, 1.0).unwrap()
            })
            .collect()
    };
    let (fa, fb) = (targets(0.0), targets(1.7));
    let x0: Vec<Matrix> = (0..n).map(|i| Matrix::from_element(1, 1, i as f64 - 2.0)).collect();
    let init_a = netsim::canonical_init(&r, &fa, &x0, &laps.laps[0]).unwrap();
    let ta = netsim::run(&r, &fa, &laps, steps, &init_a).unwrap();
    let y_b = netsim::global_minimizer(&fb).unwrap();
    let grads_b: Vec<Matrix> = fb.iter().map(|f| f.gradient(&y_b)).collect();
    let fixed_b = construct_fixed_point(&r, &r.fixed_point_witness().unwrap(), &grads_b, &y_b).unwrap();
    let init_b: Vec<Matrix> = (0..n)
        .map(|i| &init_a[i] - &ta.fixed_point[i].x + &fixed_b[i].x)
        .collect();
    let tb = netsim::run(&r, &fb, &laps, steps, &init_b).unwrap();
    for k in 0..=steps {
        for (a, b) in ta.state_errors(k).iter().zip(tb.state_errors(k)) {
            assert!((a - b).amax() <= 1e-12, "step {k}: error sequences differ");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn certified_envelope_holds(
        which in 0usize..8,
        n in 2usize..=10,
        d in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let name = AlgorithmName::ALL[which];
        let pc = ProblemClass::from_kappa(10.0, 0.4).unwrap();
        let alpha = match name {
            AlgorithmName::UExtra => 0.01,
            AlgorithmName::DIGing | AlgorithmName::AugDgm | AlgorithmName::UDig => 0.03,
            AlgorithmName::Nids | AlgorithmName::ExDiff => 0.1,
            _ => 0.05,
        };
        let r = realization(name, &pc, alpha);
        let (rho, cert) = certify_rate(&r, &pc, 1e-6).unwrap();
        let (lo, hi) = cert.t_eigen_range();
        let steps = 30;
        let (funcs, x0) = netsim::random_instance(n, d, pc.m, pc.l, seed).unwrap();
        let laps = LaplacianSequence::random(n, pc.sigma, steps, seed ^ 0x5eed).unwrap();
        let init = netsim::canonical_init(&r, &funcs, &x0, &laps.laps[0]).unwrap();
        let traj = netsim::run(&r, &funcs, &laps, steps, &init).unwrap();
        let v: Vec<f64> = traj.lyapunov_values(&cert).unwrap().iter().map(|x| x / hi).collect();
        for k in 0..steps {
            prop_assert!(v[k + 1] <= rho * rho * v[k] + 1e-9 * v[0]);
        }
        for (k, e) in traj.error_norms().iter().enumerate() {
            prop_assert!(e * e <= hi / lo * v[0] * rho.powi(2 * k as i32) * (1.0 + 1e-6));
        }
    }
}
