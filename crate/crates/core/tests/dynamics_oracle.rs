//! Dynamics checked against the symbolic Lagrangian fixture and against
//! structural identities that hold for any mechanical system.

use nalgebra::{DMatrix, Matrix2, Vector2};
use proptest::prelude::*;
use rrbot_core::dynamics::*;
use rrbot_core::linsys::numerical_rank;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    params: FixtureParams,
    torque: [f64; 2],
    grid: Vec<GridPoint>,
}

#[derive(Deserialize)]
#[allow(non_snake_case)]
struct FixtureParams {
    m1: f64,
    m2: f64,
    l1: f64,
    l2: f64,
    r1: f64,
    r2: f64,
    I1: f64,
    I2: f64,
    grav: f64,
}

#[derive(Deserialize)]
struct GridPoint {
    state: [f64; 4],
    mass: [[f64; 2]; 2],
    coriolis: [[f64; 2]; 2],
    gravity: [f64; 2],
    energy: f64,
    xdot_passive: [f64; 4],
    xdot_forced: [f64; 4],
}

fn fixture() -> Fixture {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/lagrangian_grid.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn params_of(f: &FixtureParams) -> RobotParams {
    RobotParams {
        m1: f.m1,
        m2: f.m2,
        l1: f.l1,
        l2: f.l2,
        r1: f.r1,
        r2: f.r2,
        i1: f.I1,
        i2: f.I2,
        grav: f.grav,
        b1: 0.0,
        b2: 0.0,
    }
}

fn mat(m: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

#[test]
fn forward_dynamics_matches_lagrangian_grid() {
    let fx = fixture();
    let params = params_of(&fx.params);
    assert_eq!(params, RobotParams::rrbot());
    assert_eq!(fx.grid.len(), 225);
    let tau = JointTorque::from(fx.torque);
    let mut worst = 0.0_f64;
    for pt in &fx.grid {
        let x = State::from(pt.state);
        let terms = manipulator_terms(&params, &x);
        worst = worst.max((terms.mass - mat(&pt.mass)).amax());
        worst = worst.max((terms.coriolis - mat(&pt.coriolis)).amax());
        worst = worst.max((terms.gravity - Vector2::from(pt.gravity)).amax());
        worst = worst.max((total_energy(&params, &x) - pt.energy).abs());
        let passive = forward_dynamics(&params, &x, &JointTorque::default()).unwrap();
        let forced = forward_dynamics(&params, &x, &tau).unwrap();
        for i in 0..4 {
            worst = worst.max((passive[i] - pt.xdot_passive[i]).abs());
            worst = worst.max((forced[i] - pt.xdot_forced[i]).abs());
        }
    }
    assert!(worst <= 1e-10, "largest deviation from fixture {worst:e}");
}

/// dM/dt from the symbolic inertia: only the `cos(a2)` terms vary.
fn mass_rate(params: &RobotParams, x: &State) -> Matrix2<f64> {
    let k = params.l1 * params.m2 * params.r2 * x.th2.sin() * x.th2d;
    Matrix2::new(-2.0 * k, -k, -k, 0.0)
}

fn state_strategy() -> impl Strategy<Value = State> {
    (-10.0..10.0f64, -10.0..10.0f64, -20.0..20.0f64, -20.0..20.0f64)
        .prop_map(|(a, b, c, d)| State::new(a, b, c, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn inertia_is_symmetric_positive_definite(x in state_strategy()) {
        let m = manipulator_terms(&RobotParams::rrbot(), &x).mass;
        prop_assert!((m - m.transpose()).amax() <= 1e-12);
        prop_assert!(m[(0, 0)] > 0.0);
        prop_assert!(m.determinant() > 0.0);
    }

    #[test]
    fn mass_rate_minus_twice_coriolis_is_skew(x in state_strategy()) {
        let params = RobotParams::rrbot();
        let n = mass_rate(&params, &x) - 2.0 * manipulator_terms(&params, &x).coriolis;
        prop_assert!((n + n.transpose()).amax() <= 1e-10);
    }

    #[test]
    fn regressor_reproduces_inverse_dynamics(
        x in state_strategy(),
        a1 in -30.0..30.0f64,
        a2 in -30.0..30.0f64,
    ) {
        let params = RobotParams::rrbot();
        let qdd = Vector2::new(a1, a2);
        let lhs = regressor(&x, &qdd) * lumped_params(&params).to_vector();
        let terms = manipulator_terms(&params, &x);
        let rhs = terms.mass * qdd + terms.coriolis * x.qd() + terms.gravity;
        prop_assert!((lhs - rhs).amax() <= 1e-10 * (1.0 + rhs.amax()));
    }

    #[test]
    fn forward_dynamics_inverts_inverse_dynamics(x in state_strategy(), t1 in -20.0..20.0f64, t2 in -10.0..10.0f64) {
        let params = RobotParams::rrbot();
        let xdot = forward_dynamics(&params, &x, &JointTorque::new(t1, t2)).unwrap();
        let qdd = Vector2::new(xdot[2], xdot[3]);
        let back = manipulator_terms(&params, &x).torque_for(&x.qd(), &qdd);
        prop_assert!((back - Vector2::new(t1, t2)).amax() <= 1e-9);
    }
}

#[test]
fn stacked_regressor_identifies_all_parameters() {
    // A single 2×5 block has rank at most 2; stacking states reaches 5.
    let samples = [
        (State::new(0.3, -1.1, 0.7, 0.2), Vector2::new(1.0, -2.0)),
        (State::new(-2.0, 0.4, -0.3, 1.5), Vector2::new(0.5, 0.1)),
        (State::new(1.2, 2.5, 0.0, -0.8), Vector2::new(-1.5, 3.0)),
    ];
    let mut stacked = DMatrix::zeros(2 * samples.len(), 5);
    for (i, (x, qdd)) in samples.iter().enumerate() {
        let y = regressor(x, qdd);
        stacked.view_mut((2 * i, 0), (2, 5)).copy_from(&y);
    }
    assert_eq!(numerical_rank(&stacked), 5);
    let single = DMatrix::from_column_slice(2, 5, regressor(&samples[0].0, &samples[0].1).as_slice());
    assert!(numerical_rank(&single) <= 2);
}
