use blockpd::block_model::{
    make_random_inconsistent_ls, LsReference, ProblemSpec, RandomLsOptions,
};
use blockpd::sampling::Sampling;
use blockpd::solver::{
    gamma_coefficients, martingale_slack, prox_inequality_slack, EngineOptions, MiChecker, Pda,
    Rbcd, Reference,
};
use blockpd::stepsize::{convex_default_policy, tau_lower_bound, AcceleratedPolicy, StepPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(dims: Vec<usize>, q: usize, mu: f64) -> (ProblemSpec, LsReference) {
    let opts = RandomLsOptions {
        seed: 7,
        dims,
        q,
        mu,
        ..Default::default()
    };
    make_random_inconsistent_ls(&opts).unwrap()
}

fn reference(r: &LsReference) -> Reference {
    Reference {
        x_star: r.x_star.clone(),
        h_star: r.h_star,
        psi_star: r.psi_star,
    }
}

fn baseline(p: &ProblemSpec, r: &LsReference) -> Vec<f64> {
    (0..p.d())
        .map(|i| p.block_psi(i, &r.x_star.as_slice()[p.blocks().range(i)]))
        .collect()
}

#[test]
fn rbcd_and_pda_iterates_coincide() {
    let (p, _) = instance(vec![4; 10], 60, 0.0);
    let s = Sampling::nice(10, 3).unwrap();
    let pol = StepPolicy::Convex(convex_default_policy(&p, &s).unwrap());
    let x0 = vec![0.0; p.m()];
    let opts = EngineOptions {
        seed: 11,
        ..Default::default()
    };
    let mut a = Rbcd::new(&p, &s, &pol, &x0, &opts).unwrap();
    let mut b = Pda::new(&p, &s, &pol, &x0, &opts).unwrap();
    for _ in 0..300 {
        let ia = a.step().unwrap();
        let ib = b.step().unwrap();
        assert_eq!(ia, ib);
        let dev = (&a.state.x - &b.state.x).amax();
        assert!(dev <= 1e-9, "deviation {dev}");
    }
}

#[test]
fn averaged_iterate_is_gamma_combination() {
    let (p, _) = instance(vec![2, 3, 1], 8, 0.0);
    let s = Sampling::single_coordinate(vec![0.5, 0.3, 0.2]).unwrap();
    let pol = StepPolicy::Convex(convex_default_policy(&p, &s).unwrap());
    let x0 = vec![0.3; p.m()];
    let mut e = Rbcd::new(&p, &s, &pol, &x0, &EngineOptions::default()).unwrap();
    let mut xs = vec![e.state.x.clone()];
    let mut thetas = Vec::new();
    for _ in 0..50 {
        thetas.push(e.state.theta());
        e.step().unwrap();
        xs.push(e.state.x.clone());
    }
    for i in 0..p.d() {
        let table = gamma_coefficients(&thetas, s.pi()[i]).unwrap();
        assert!(table.closure_error() <= 1e-12);
        assert!(table.min_coefficient() >= -1e-12);
        let row = &table.rows[50];
        for j in p.blocks().range(i) {
            let w: f64 = row.iter().zip(&xs).map(|(g, x)| g * x[j]).sum();
            assert!((w - e.state.w[j]).abs() <= 1e-10);
        }
    }
}

#[test]
fn lyapunov_descends_in_conditional_expectation() {
    for mu in [0.0, 1.0] {
        let (p, r) = instance(vec![2, 2], 6, mu);
        let s = Sampling::single_uniform(2).unwrap();
        let pol = if mu > 0.0 {
            StepPolicy::Accelerated(AcceleratedPolicy::new(&p, &s, None).unwrap())
        } else {
            StepPolicy::Convex(convex_default_policy(&p, &s).unwrap())
        };
        let opts = EngineOptions {
            seed: 3,
            psi_baseline: Some(baseline(&p, &r)),
            ..Default::default()
        };
        let mut e = Rbcd::new(&p, &s, &pol, &vec![1.0; p.m()], &opts).unwrap();
        let reference = reference(&r);
        for k in 0..100 {
            let slack = martingale_slack(&e, &reference).unwrap();
            assert!(slack >= -1e-9, "mu {mu} k {k} slack {slack}");
            e.step().unwrap();
        }
    }
}

#[test]
fn prox_inequality_holds_on_probes() {
    let (p, _) = instance(vec![3, 2, 2], 10, 0.5);
    let s = Sampling::nice(3, 2).unwrap();
    let pol = StepPolicy::Convex(convex_default_policy(&p, &s).unwrap());
    let mut e = Rbcd::new(&p, &s, &pol, &vec![0.0; p.m()], &EngineOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        e.step().unwrap();
    }
    for _ in 0..200 {
        let x: Vec<f64> = (0..p.m()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let slack = prox_inequality_slack(&e, &x).unwrap();
        assert!(slack >= -1e-9, "slack {slack}");
    }
}

#[test]
fn accelerated_steps_stay_certified() {
    let (p, _) = instance(vec![4; 10], 60, 1.0);
    let s = Sampling::single_uniform(10).unwrap();
    let acc = AcceleratedPolicy::new(&p, &s, None).unwrap();
    let (tau0, kappa) = (acc.tau0, acc.params.kappa);
    let pol = StepPolicy::Accelerated(acc);
    let checker = MiChecker::new(&p, &s, &pol).unwrap();
    let mut cur = pol.initial();
    for k in 0..500 {
        let rep = checker.check(&pol, cur).unwrap();
        assert!(rep.mi1 >= -1e-8 && rep.mi2 >= -1e-8, "k {k}: {rep:?}");
        assert!(cur.tau >= tau_lower_bound(k, tau0, kappa, 0.1));
        let next = pol.advance(cur).unwrap();
        assert!(next.tau < cur.tau);
        cur = next;
    }
}
