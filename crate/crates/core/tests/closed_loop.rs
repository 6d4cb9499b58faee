//! Closed-loop properties checked on simulated trajectories.

use nalgebra::{DMatrix, Matrix4, SMatrix, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrbot_core::controllers::*;
use rrbot_core::dynamics::*;
use rrbot_core::linsys::*;
use rrbot_core::plant::*;
use rrbot_core::trajectory::*;

fn to4(m: &DMatrix<f64>) -> Matrix4<f64> {
    m.fixed_view::<4, 4>(0, 0).into_owned()
}

fn tracking_design() -> (Gain2x4, Matrix4<f64>) {
    let di = LinearModel::double_integrator(2);
    let k = place_poles(&di, &real_poles(&DEFAULT_FEEDBACK_POLES), 0x5EED).unwrap();
    let a_cl = &di.a - &di.b * k.matrix();
    let p = solve_lyapunov(&a_cl, &DMatrix::identity(4, 4)).unwrap();
    (k.to_2x4().unwrap(), to4(&p))
}

fn error_system(k: &Gain2x4) -> Matrix4<f64> {
    let mut a = Matrix4::zeros();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    a.fixed_view_mut::<2, 4>(2, 0).copy_from(&-k);
    a
}

fn xi_at(trace: &SimTrace, i: usize) -> Vector4<f64> {
    let r = trace.references.as_ref().unwrap()[i];
    TrackingError::new(&trace.states[i], &r).to_vector()
}

/// Matrix exponential by scaling and squaring a Taylor series.
fn expm(a: &Matrix4<f64>) -> Matrix4<f64> {
    let s = (a.norm().log2().ceil().max(0.0) as i32) + 4;
    let scaled = a / 2f64.powi(s);
    let (mut term, mut sum) = (Matrix4::identity(), Matrix4::identity());
    for n in 1..20 {
        term = term * scaled / n as f64;
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}

#[test]
fn inverse_dynamics_error_follows_linear_ode() {
    let params = RobotParams::rrbot();
    let (k, _) = tracking_design();
    let traj = CubicTraj::upright_swing();
    let ctrl = ControllerSpec::FeedbackLin { k, traj, params_used: params };
    let cfg = PlantConfig::ideal(params).with_timing(ControlTiming::Continuous);
    let x0 = State::from_degrees(200.0, 125.0, 0.0, 0.0);
    let trace = integrate_closed_loop(&cfg, &ctrl, &x0, 10.0).unwrap();
    assert_eq!(trace.saturation_events, [0, 0]);
    let a_cl = error_system(&k);
    let xi0 = xi_at(&trace, 0);
    let mut worst = 0.0_f64;
    for i in (0..trace.len()).step_by(10) {
        let expected = expm(&(a_cl * trace.times[i])) * xi0;
        worst = worst.max((xi_at(&trace, i) - expected).amax());
    }
    assert!(worst <= 1e-6, "max deviation {worst:e}");
}

#[test]
fn adaptive_lyapunov_function_never_rises() {
    let params = RobotParams::rrbot();
    let (k, p) = tracking_design();
    let alpha = lumped_params(&params).to_vector();
    let gamma = diag(&[20.0, 20.0, 20.0, 0.05, 0.05]).fixed_view::<5, 5>(0, 0).into_owned();
    let spec = AdaptiveSpec {
        k,
        p,
        gamma,
        alpha_hat0: lumped_params(&params).scaled(0.75),
        traj: CubicTraj::upright_swing(),
        adapt: true,
        projection: (0.25, 4.0),
    };
    let cfg = PlantConfig::ideal(params).with_timing(ControlTiming::Continuous);
    let x0 = State::from_degrees(200.0, 125.0, 0.0, 0.0);
    let trace = integrate_closed_loop(&cfg, &ControllerSpec::AdaptiveId(spec), &x0, 10.0).unwrap();
    assert_eq!(trace.projection_events, 0);
    let alpha_hat = trace.adaptive_params.as_ref().unwrap();
    let v: Vec<f64> = (0..trace.len())
        .map(|i| {
            let xi = xi_at(&trace, i);
            let tilde = alpha_hat[i].to_vector() - alpha;
            xi.dot(&(p * xi)) + tilde.dot(&(gamma * tilde))
        })
        .collect();
    let rise = v.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    assert!(rise <= 1e-6, "largest one-step increase {rise:e}");
    let last = trace.len() - 1;
    assert!(xi_at(&trace, last).norm() < 0.1 * xi_at(&trace, 0).norm());
}

fn robust_setup(phi_bl: Option<f64>) -> (RobotParams, RobotParams, RobustSpec) {
    let truth = RobotParams::rrbot();
    let nominal = truth.scale_mass_inertia(0.75);
    let (k, p) = tracking_design();
    let traj = CubicTraj::upright_swing();
    let rho = calibrate_rho_along(&truth, &nominal, &k, &traj, 10.0, &TubeSampling::default()).unwrap();
    (truth, nominal, RobustSpec { k, p, rho, phi_bl, traj, nominal_params: nominal })
}

#[test]
fn unit_vector_law_decreases_lyapunov_function() {
    let (truth, nominal, spec) = robust_setup(None);
    let ctrl = ControllerSpec::RobustId(spec.clone());
    let x0 = State::from_degrees(200.0, 125.0, 0.0, 0.0);
    let trace = integrate_closed_loop(&PlantConfig::ideal(truth), &ctrl, &x0, 10.0).unwrap();
    let mut checked = 0;
    for i in 0..trace.len() {
        let t = trace.times[i];
        let x = trace.states[i];
        let point = spec.traj.eval(t);
        let xi = xi_at(&trace, i);
        // The bound must hold wherever the closed loop goes.
        let eta = model_mismatch(&truth, &nominal, &x, &(point.qdd - spec.k * xi)).unwrap();
        assert!(eta.norm() <= spec.rho.eval(t, &xi), "bound violated at t = {t}");
        if xi.norm() <= 1e-3 {
            continue;
        }
        // dV/dt of the continuous law, using the true dynamics.
        let u = robust_id_control(&spec, t, &x);
        let qdd = joint_acceleration(&truth, &x, &u).unwrap();
        let xi_dot = Vector4::new(xi[2], xi[3], qdd[0] - point.qdd[0], qdd[1] - point.qdd[1]);
        let v_dot = 2.0 * xi.dot(&(spec.p * xi_dot));
        assert!(v_dot <= 0.0, "V rising at t = {t}: {v_dot:e}");
        checked += 1;
    }
    assert!(checked > 1000);
}

#[test]
fn scheduled_bound_covers_the_tube() {
    let (truth, nominal, spec) = robust_setup(None);
    let tube = TubeSampling::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for _ in 0..5000 {
        let t = rng.random_range(0.0..10.0);
        let xi = Vector4::new(
            rng.random_range(-tube.pos..tube.pos),
            rng.random_range(-tube.pos..tube.pos),
            rng.random_range(-tube.vel..tube.vel),
            rng.random_range(-tube.vel..tube.vel),
        );
        let point = spec.traj.eval(t);
        let x = State::from_vector(&(point.state().to_vector() + xi));
        let eta = model_mismatch(&truth, &nominal, &x, &(point.qdd - spec.k * xi)).unwrap();
        assert!(eta.norm() <= spec.rho.eval(t, &xi));
    }
    let schedule = spec.rho.schedule.as_ref().unwrap();
    assert_eq!(schedule.values.len(), 20);
    assert_eq!(schedule.at(0.49), schedule.values[0]);
    assert_eq!(schedule.at(0.5), schedule.values[1]);
    assert_eq!(schedule.at(25.0), schedule.values[19]);
    // At rest at the upright goal the models agree.
    assert!(schedule.values[19] < 0.2 * schedule.values[9]);
}

#[test]
fn boundary_layer_law_is_lipschitz() {
    let (k, p) = tracking_design();
    let phi = 0.015;
    let rho = 3.0;
    let mut b = SMatrix::<f64, 4, 2>::zeros();
    b[(2, 0)] = 1.0;
    b[(3, 1)] = 1.0;
    let spectral = |m: DMatrix<f64>| m.svd(false, false).singular_values.max();
    let btp = DMatrix::from_column_slice(2, 4, (b.transpose() * p).as_slice());
    let bound = 1.1 * (rho * spectral(btp) / phi + spectral(DMatrix::from_column_slice(2, 4, k.as_slice())));
    let law = |xi: &Vector4<f64>| -k * xi + robust_term(&p, rho, Some(phi), xi);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0_f64;
    for i in 0..20_000 {
        // Mix wide pairs with pairs straddling the layer edge.
        let scale = if i % 2 == 0 { 1.0 } else { 0.02 };
        let a = Vector4::from_fn(|_, _| rng.random_range(-scale..scale));
        let d = Vector4::from_fn(|_, _| rng.random_range(-1e-3..1e-3));
        let q = (law(&(a + d)) - law(&a)).norm() / d.norm();
        worst = worst.max(q);
    }
    assert!(worst <= bound, "{worst} > {bound}");
    // The discontinuous law has no such bound near the origin.
    let tiny = Vector4::new(1e-9, 0.0, 0.0, 0.0);
    let jump = (robust_term(&p, rho, None, &tiny) - robust_term(&p, rho, None, &-tiny)).norm() / (2e-9);
    assert!(jump > 1e6 * bound);
}

/// Linear plant `xdot = A x + B u` stepped with RK4 at a fine rate.
fn linear_plant_step(a: &Matrix4<f64>, b: &SMatrix<f64, 4, 2>, x: &Vector4<f64>, u: &Vector2<f64>, dt: f64) -> Vector4<f64> {
    let n = 100;
    let h = dt / n as f64;
    let f = |x: &Vector4<f64>| a * x + b * u;
    let mut x = *x;
    for _ in 0..n {
        let k1 = f(&x);
        let k2 = f(&(x + k1 * (h / 2.0)));
        let k3 = f(&(x + k2 * (h / 2.0)));
        let k4 = f(&(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// Estimation errors `x - xhat` at each control step. With `use_estimate`
/// the loop is closed through the observer, otherwise through the true state.
fn run_linear_observer(xhat0: Vector4<f64>, x0: Vector4<f64>, dt: f64, use_estimate: bool) -> Vec<Vector4<f64>> {
    let model = linearize(&RobotParams::rrbot(), &State::ZERO).unwrap();
    let k = place_poles(&model, &real_poles(&[-1.2, -1.4, -1.6, -1.8]), 0x5EED).unwrap();
    let l = design_observer(&model, &real_poles(&DEFAULT_OBSERVER_POLES), 0x5EED).unwrap();
    let ControllerSpec::OutputFeedback { k, l, a, b, c, .. } = ControllerSpec::output_feedback(&k, &l, &model, State::ZERO).unwrap()
    else {
        unreachable!()
    };
    let (mut x, mut xhat) = (x0, xhat0);
    let mut errors = vec![x - xhat];
    for _ in 0..(5.0 / dt).round() as usize {
        let u = if use_estimate { -k * xhat } else { -k * x };
        let y = c * x;
        xhat = observer_step(&a, &b, &c, &l, &y, &JointTorque::from_vector(&u), dt, &xhat).unwrap();
        x = linear_plant_step(&a, &b, &x, &u, dt);
        errors.push(x - xhat);
    }
    errors
}

#[test]
fn observer_on_linear_plant() {
    let x0 = Vector4::new(0.2, -0.1, 0.0, 0.3);
    // Matching start: the only error source is the measurement held over
    // each step, so the error is small and shrinks linearly with the step.
    let peak = |dt| run_linear_observer(x0, x0, dt, true).iter().map(|e| e.norm()).fold(0.0, f64::max);
    let (coarse, fine) = (peak(0.01), peak(0.005));
    assert!(coarse < 0.05 * x0.norm(), "{coarse}");
    let order = (coarse / fine).log2();
    assert!((0.8..=1.2).contains(&order), "observed order {order}");
    // Offset start, same plant path: the extra error decays at the slowest
    // observer rate.
    let same = run_linear_observer(x0, x0, 0.01, false);
    let offset = run_linear_observer(Vector4::new(0.5, 0.5, -1.0, 1.0), x0, 0.01, false);
    let extra: Vec<f64> = same.iter().zip(&offset).map(|(a, b)| (b - a).norm()).collect();
    let rate = (extra[400] / extra[300]).ln();
    assert!((rate + 9.0).abs() < 0.1, "decay rate {rate}");
}

#[test]
fn cubic_derivatives_are_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let mut r = || Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let (q0, qf, v0, vf) = (r(), r(), r(), r());
        let tf = 0.5 + 9.5 * rng.random::<f64>();
        let traj = plan_cubic(q0, qf, v0, vf, tf).unwrap();
        let start = traj.eval(0.0);
        let end = traj.eval(tf);
        assert!((start.q - q0).amax() <= 1e-12 && (start.qd - v0).amax() <= 1e-12);
        assert!((end.q - qf).amax() <= 1e-12 * (1.0 + qf.amax()));
        assert!((end.qd - vf).amax() <= 1e-12 * (1.0 + vf.amax() + qf.amax() / tf));
        let h = 1e-6;
        for s in [0.1, 0.37, 0.5, 0.81] {
            let t = s * tf;
            let (lo, hi, mid) = (traj.eval(t - h), traj.eval(t + h), traj.eval(t));
            assert!(((hi.q - lo.q) / (2.0 * h) - mid.qd).amax() <= 1e-6 * (1.0 + mid.qd.amax()));
            assert!(((hi.qd - lo.qd) / (2.0 * h) - mid.qdd).amax() <= 1e-6 * (1.0 + mid.qdd.amax()));
        }
    }
}
