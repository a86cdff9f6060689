use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reversym::physics::*;

fn spring_state(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> PhaseState {
    let q = (0..2 * n).map(|_| rng.gen_range(-scale..scale)).collect();
    let p = (0..2 * n).map(|_| rng.gen_range(-scale..scale)).collect();
    PhaseState::new(n, 2, q, p, 0.0).unwrap()
}

fn pair() -> Adjacency {
    Adjacency::from_pairs(2, &[(0, 1)]).unwrap()
}

#[test]
fn spring_derivative_examples() {
    let simple = SpringSpec::new(pair(), SpringVariant::Simple).unwrap();
    let s = PhaseState::new(2, 2, vec![0.5, -1.0, 0.5, -1.0], vec![0.0; 4], 0.0).unwrap();
    assert_eq!(spring_derivative(&s, &simple).unwrap().dp, vec![0.0; 4]);

    let lone = Adjacency::empty(1);
    let damped = SpringSpec::new(lone.clone(), SpringVariant::damped()).unwrap();
    let s = PhaseState::new(1, 2, vec![0.0, 0.0], vec![1.0, 0.0], 0.0).unwrap();
    assert_eq!(spring_derivative(&s, &damped).unwrap().dp, vec![-10.0, 0.0]);

    let forced = SpringSpec::new(lone, SpringVariant::forced()).unwrap();
    let s = PhaseState::new(1, 2, vec![3.0, 4.0], vec![0.0, 0.0], 0.0).unwrap();
    assert_eq!(spring_derivative(&s, &forced).unwrap().dp, vec![-10.0, -10.0]);
}

#[test]
fn spring_derivative_rejects_bad_input() {
    let spec = SpringSpec::new(pair(), SpringVariant::Simple).unwrap();
    let s = PhaseState::new(2, 2, vec![f64::NAN, 0.0, 0.0, 0.0], vec![0.0; 4], 0.0).unwrap();
    assert!(matches!(spring_derivative(&s, &spec), Err(PhysicsError::NonFinite { .. })));
    let s = PhaseState::zeros(3, 2);
    assert!(matches!(spring_derivative(&s, &spec), Err(PhysicsError::Shape(_))));
    assert!(SpringSpec::with_constants(pair(), -1.0, 0.1, SpringVariant::Simple).is_err());
    assert!(SpringSpec::new(pair(), SpringVariant::Damped { gamma: 0.0 }).is_err());
}

#[test]
fn adjacency_validates() {
    assert!(Adjacency::new(2, vec![false, true, false, false]).is_err());
    assert!(Adjacency::new(2, vec![true, false, false, false]).is_err());
    let a = Adjacency::chain(3);
    assert_eq!(a.directed_edges(), vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
    assert_eq!(a.permuted(&[2, 1, 0]), a);
}

fn pend_state(th: [f64; 3], p: [f64; 3]) -> PhaseState {
    PhaseState::new(3, 1, th.to_vec(), p.to_vec(), 0.0).unwrap()
}

#[test]
fn pendulum_equilibria() {
    let spec = PendulumSpec::default();
    let d = pendulum_derivative(&pend_state([0.0; 3], [0.0; 3]), &spec).unwrap();
    assert!(d.dq.iter().chain(&d.dp).all(|v| *v == 0.0));
    let pi = std::f64::consts::PI;
    let d = pendulum_derivative(&pend_state([pi; 3], [0.0; 3]), &spec).unwrap();
    assert!(d.dq.iter().all(|v| *v == 0.0));
    assert!(d.dp.iter().all(|v| v.abs() < 1e-13));
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(m);
    let mut x = [0.0; 3];
    for (k, xk) in x.iter_mut().enumerate() {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = b[r];
        }
        *xk = det(mk) / d;
    }
    x
}

/// Lagrangian of three uniform sticks from centre-of-mass kinematics.
fn lagrangian(th: [f64; 3], w: [f64; 3], spec: &PendulumSpec) -> f64 {
    let (m, l, g) = (spec.mass, spec.length, spec.gravity);
    let mut kin = 0.0;
    let mut pot = 0.0;
    let (mut jy, mut vjx, mut vjy) = (0.0, 0.0, 0.0);
    for i in 0..3 {
        let (s, c) = th[i].sin_cos();
        let cy = jy - 0.5 * l * c;
        let (vx, vy) = (vjx + 0.5 * l * c * w[i], vjy + 0.5 * l * s * w[i]);
        kin += 0.5 * m * (vx * vx + vy * vy) + 0.5 * (m * l * l / 12.0) * w[i] * w[i];
        pot += m * g * cy;
        jy -= l * c;
        vjx += l * c * w[i];
        vjy += l * s * w[i];
    }
    kin - pot
}

#[test]
fn pendulum_matches_lagrangian_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let spec = PendulumSpec::new(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), 9.81).unwrap();
        let th = [rng.gen_range(-3.1..3.1), rng.gen_range(-3.1..3.1), rng.gen_range(-3.1..3.1)];
        let p = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let d = pendulum_derivative(&pend_state(th, p), &spec).unwrap();
        let w = solve3(pendulum_mass_matrix(th, &spec), p);
        for i in 0..3 {
            assert!((d.dq[i] - w[i]).abs() < 1e-9 * (1.0 + w[i].abs()), "theta_dot {}", i);
        }
        // p = dL/dw must reproduce the momenta
        let h = 1e-6;
        for i in 0..3 {
            let (mut wp, mut wm) = (w, w);
            wp[i] += h;
            wm[i] -= h;
            let pi = (lagrangian(th, wp, &spec) - lagrangian(th, wm, &spec)) / (2.0 * h);
            assert!((pi - p[i]).abs() < 1e-6 * (1.0 + p[i].abs()));
        }
        // p_dot = dL/dtheta at fixed theta_dot
        for i in 0..3 {
            let (mut tp, mut tm) = (th, th);
            tp[i] += h;
            tm[i] -= h;
            let dl = (lagrangian(tp, w, &spec) - lagrangian(tm, w, &spec)) / (2.0 * h);
            assert!((d.dp[i] - dl).abs() < 1e-6 * (1.0 + dl.abs()), "p_dot {}: {} vs {}", i, d.dp[i], dl);
        }
    }
}

#[test]
fn pendulum_singularity_is_reported() {
    let spec = PendulumSpec::new(1e-15, 1.0, 9.81).unwrap();
    let err = pendulum_derivative(&pend_state([0.1, 0.2, 0.3], [0.0; 3]), &spec).unwrap_err();
    match err {
        PhysicsError::Singular { theta, .. } => assert_eq!(theta, [0.1, 0.2, 0.3]),
        e => panic!("unexpected {:?}", e),
    }
}

fn exp_system() -> FnDynamics<impl Fn(&PhaseState) -> Result<Derivative, PhysicsError> + Sync> {
    FnDynamics(|s: &PhaseState| Ok(Derivative { dq: s.q.clone(), dp: vec![0.0; s.p.len()] }))
}

fn zero_system() -> FnDynamics<impl Fn(&PhaseState) -> Result<Derivative, PhysicsError> + Sync> {
    FnDynamics(|s: &PhaseState| Ok(Derivative { dq: vec![0.0; s.q.len()], dp: vec![0.0; s.p.len()] }))
}

fn scalar(x: f64) -> PhaseState {
    PhaseState::new(1, 1, vec![x], vec![0.0], 0.0).unwrap()
}

#[test]
fn integrator_examples() {
    let s0 = PhaseState::new(2, 1, vec![1.0, -2.0], vec![0.5, 0.25], 0.0).unwrap();
    for integ in [Integrator::Euler, Integrator::Rk4] {
        let tr = integ.integrate(&zero_system(), &s0, 0.1, 5).unwrap();
        assert_eq!(tr.states.len(), 6);
        assert!(tr.states.iter().all(|s| s.q == s0.q && s.p == s0.p));
        assert!((tr.last().t - 0.5).abs() < 1e-15);
        assert!(integ.integrate(&zero_system(), &s0, 0.0, 5).is_err());
        assert!(integ.integrate(&zero_system(), &s0, 0.1, 0).is_err());
    }
    let e = euler_integrate(&exp_system(), &scalar(1.0), 0.1, 1).unwrap();
    assert!((e.last().q[0] - 1.1).abs() < 1e-15);
    let r = rk4_integrate(&exp_system(), &scalar(1.0), 0.1, 1).unwrap();
    assert!((r.last().q[0] - 1.10517083).abs() < 1e-7);
}

#[test]
fn divergence_truncates_and_flags() {
    let blow = FnDynamics(|s: &PhaseState| Ok(Derivative { dq: s.q.iter().map(|x| x * x * 1e300).collect(), dp: vec![0.0] }));
    let tr = euler_integrate(&blow, &scalar(10.0), 1.0, 10).unwrap();
    assert!(tr.diverged());
    assert!(tr.states.iter().all(PhaseState::is_finite));
    assert!(tr.states.len() < 11);
}

#[test]
fn euler_spring_tracks_fine_rk4() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = SpringSpec::new(Adjacency::complete(4), SpringVariant::Simple).unwrap();
    let s0 = spring_state(&mut rng, 4, 1.0);
    let e = euler_integrate(&spec, &s0, 1e-3, 1000).unwrap();
    let r = rk4_integrate(&spec, &s0, 1e-5, 100_000).unwrap();
    let rel = e.last().distance(r.last()) / r.last().norm();
    assert!(rel < 1e-3, "{}", rel);
}

#[test]
fn energy_examples() {
    let spec = SpringSpec::new(pair(), SpringVariant::Simple).unwrap();
    let s = PhaseState::new(2, 2, vec![0.0, 0.0, 1.0, 0.0], vec![0.0; 4], 0.0).unwrap();
    assert!((spring_energy(&s, &spec).unwrap().total - 0.05).abs() < 1e-15);
    let s = PhaseState::new(2, 2, vec![0.3, 0.3, 0.3, 0.3], vec![0.0; 4], 0.0).unwrap();
    assert_eq!(spring_energy(&s, &spec).unwrap().total, 0.0);

    let pend = PendulumSpec::default();
    let e0 = pendulum_energy(&pend_state([0.0; 3], [0.0; 3]), &pend).unwrap();
    assert!((e0.total + 4.5 * 9.81).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let th = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let e = pendulum_energy(&pend_state(th, p), &pend).unwrap();
        assert!(e.total >= e0.total);
        assert!(e.kinetic >= 0.0);
        let w = solve3(pendulum_mass_matrix(th, &pend), p);
        let oracle = lagrangian(th, w, &pend);
        // L = T - V, H = T + V
        assert!((e.kinetic - e.potential - oracle).abs() < 1e-9);
    }
}

#[test]
fn reverse_state_examples() {
    let s = PhaseState::new(1, 2, vec![1.0, 2.0], vec![0.0, 0.0], 0.0).unwrap();
    let r = reverse_state(&s);
    assert_eq!(r.q, s.q);
    assert!(r.p.iter().all(|v| *v == 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = SpringSpec::new(Adjacency::complete(3), SpringVariant::Simple).unwrap();
    let s = spring_state(&mut rng, 3, 2.0);
    let h = spring_energy(&s, &spec).unwrap().total;
    assert_eq!(spring_energy(&reverse_state(&s), &spec).unwrap().total, h);
}

#[test]
fn reversibility_residual_examples() {
    let s0 = scalar(1.0);
    assert_eq!(reversibility_residual(&zero_system(), &s0, 0.1, 10, Integrator::Rk4).unwrap(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s0 = spring_state(&mut rng, 4, 1.0);
    let adj = Adjacency::complete(4);
    let simple = SpringSpec::new(adj.clone(), SpringVariant::Simple).unwrap();
    let damped = SpringSpec::new(adj.clone(), SpringVariant::damped()).unwrap();
    let forced = SpringSpec::new(adj, SpringVariant::forced()).unwrap();
    let rs = reversibility_residual(&simple, &s0, 1e-4, 1000, Integrator::Rk4).unwrap();
    let rd = reversibility_residual(&damped, &s0, 1e-4, 1000, Integrator::Rk4).unwrap();
    let rf = reversibility_residual(&forced, &s0, 1e-4, 1000, Integrator::Rk4).unwrap();
    assert!(rs < 1e-6, "{}", rs);
    assert!(rf < 1e-6, "{}", rf);
    assert!(rd >= 1e3 * rs.max(1e-300) && rd > 1e-2, "{} vs {}", rd, rs);
}

#[test]
fn simple_spring_rk4_conserves_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = SpringSpec::new(Adjacency::complete(5), SpringVariant::Simple).unwrap();
    let s0 = spring_state(&mut rng, 5, 1.0);
    let tr = rk4_integrate(&spec, &s0, 1e-4, 10_000).unwrap();
    let sys = System::Spring(spec);
    let es = trajectory_energy(&tr.states, &sys).unwrap();
    let h0 = es[0].total;
    let worst = es.iter().map(|e| ((e.total - h0) / h0).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "{}", worst);
}

#[test]
fn damped_spring_mechanical_energy_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = SpringSpec::new(Adjacency::complete(4), SpringVariant::damped()).unwrap();
    let s0 = spring_state(&mut rng, 4, 1.0);
    let tr = rk4_integrate(&spec, &s0, 1e-4, 10_000).unwrap();
    let es = trajectory_energy(&tr.states, &System::Spring(spec)).unwrap();
    for w in es.windows(2) {
        assert!(w[1].mechanical() <= w[0].mechanical() + 1e-12 * w[0].mechanical().abs());
    }
    assert!(es.last().unwrap().mechanical() < es[0].mechanical());
    // mechanical energy plus dissipated work stays put
    let drift = (es.last().unwrap().total - es[0].total).abs() / es[0].total;
    assert!(drift < 1e-6, "{}", drift);
}

#[test]
fn forced_spring_is_not_conservative() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = SpringSpec::new(Adjacency::complete(3), SpringVariant::forced()).unwrap();
    let s0 = spring_state(&mut rng, 3, 1.0);
    let n = (2.0 * std::f64::consts::PI / 1e-3).round() as usize;
    let tr = rk4_integrate(&spec, &s0, 1e-3, n).unwrap();
    let es = trajectory_energy(&tr.states, &System::Spring(spec)).unwrap();
    let h0 = es[0].mechanical();
    let var = es.iter().map(|e| ((e.mechanical() - h0) / h0).abs()).fold(0.0, f64::max);
    assert!(var > 1e-3, "{}", var);
}

#[test]
fn pendulum_rk4_energy_drift_is_small() {
    let spec = PendulumSpec::default();
    let s0 = pend_state([1.2, -0.7, 2.5], [0.0; 3]);
    let tr = rk4_integrate(&spec, &s0, 1e-4, 6000).unwrap();
    assert!(!tr.diverged());
    let es = trajectory_energy(&tr.states, &System::Pendulum(spec.clone())).unwrap();
    let scale = spec.mass * spec.gravity * spec.length;
    let drift = es.iter().map(|e| (e.total - es[0].total).abs() / scale).fold(0.0, f64::max);
    assert!(drift < 1e-8, "{}", drift);
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[test]
fn global_error_orders_on_exponential() {
    let dts = [0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001];
    for (integ, want) in [(Integrator::Euler, 1.0), (Integrator::Rk4, 4.0)] {
        let errs: Vec<f64> = dts
            .iter()
            .map(|&dt| {
                let n = (1.0 / dt as f64).round() as usize;
                let tr = integ.integrate(&exp_system(), &scalar(1.0), dt, n).unwrap();
                (tr.last().q[0] - 1f64.exp()).abs()
            })
            .collect();
        let s = slope(&dts, &errs);
        assert!((s - want).abs() < 0.2, "{:?} slope {}", integ, s);
    }
}

proptest! {
    #[test]
    fn reverse_is_an_involution(q in proptest::collection::vec(-10.0f64..10.0, 6),
                                p in proptest::collection::vec(-10.0f64..10.0, 6),
                                t in -5.0f64..5.0) {
        let s = PhaseState::new(3, 2, q, p, t).unwrap();
        prop_assert_eq!(reverse_state(&reverse_state(&s)), s);
    }

    #[test]
    fn spring_forces_sum_to_zero(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells: Vec<bool> = (0..16).map(|_| rng.gen_bool(0.5)).collect();
        let mut sym = vec![false; 16];
        for i in 0..4 { for j in 0..i { sym[i * 4 + j] = cells[i * 4 + j]; sym[j * 4 + i] = cells[i * 4 + j]; } }
        let spec = SpringSpec::new(Adjacency::new(4, sym).unwrap(), SpringVariant::Simple).unwrap();
        let s = spring_state(&mut rng, 4, 3.0);
        let d = spring_derivative(&s, &spec).unwrap();
        for c in 0..2 {
            let tot: f64 = (0..4).map(|i| d.dp[i * 2 + c]).sum();
            prop_assert!(tot.abs() < 1e-12);
        }
    }
}
