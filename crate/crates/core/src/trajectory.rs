//! Cubic joint-space reference trajectories.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::{Error, Result};

/// `q(t) = a0 + a1 t + a2 t^2 + a3 t^3` for one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicCoeffs {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl CubicCoeffs {
    /// Closed-form boundary solve for position and velocity at both ends.
    pub fn fit(q0: f64, qf: f64, v0: f64, vf: f64, t_final: f64) -> Self {
        let t = t_final;
        let dq = qf - q0;
        Self {
            a0: q0,
            a1: v0,
            a2: (3.0 * dq - (2.0 * v0 + vf) * t) / (t * t),
            a3: (-2.0 * dq + (v0 + vf) * t) / (t * t * t),
        }
    }

    pub fn position(&self, t: f64) -> f64 {
        self.a0 + t * (self.a1 + t * (self.a2 + t * self.a3))
    }

    pub fn velocity(&self, t: f64) -> f64 {
        self.a1 + t * (2.0 * self.a2 + 3.0 * t * self.a3)
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        2.0 * self.a2 + 6.0 * self.a3 * t
    }
}

/// Desired position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub q: Vector2<f64>,
    pub qd: Vector2<f64>,
    pub qdd: Vector2<f64>,
}

impl TrajectoryPoint {
    pub fn state(&self) -> State {
        State::from_parts(&self.q, &self.qd)
    }
}

/// Two-joint cubic trajectory over `[0, t_final]`, held at the endpoints
/// (zero velocity and acceleration) outside that interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicTraj {
    pub joints: [CubicCoeffs; 2],
    pub t_final: f64,
}

pub fn plan_cubic(
    q0: Vector2<f64>,
    qf: Vector2<f64>,
    v0: Vector2<f64>,
    vf: Vector2<f64>,
    t_final: f64,
) -> Result<CubicTraj> {
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(Error::InvalidInput(format!("t_final must be positive, got {t_final}")));
    }
    Ok(CubicTraj {
        joints: [0, 1].map(|j| CubicCoeffs::fit(q0[j], qf[j], v0[j], vf[j], t_final)),
        t_final,
    })
}

impl CubicTraj {
    pub fn eval(&self, t: f64) -> TrajectoryPoint {
        if t <= 0.0 {
            let q = self.joints.map(|c| c.a0);
            let qd = if t == 0.0 { self.joints.map(|c| c.a1) } else { [0.0; 2] };
            let qdd = if t == 0.0 { self.joints.map(|c| 2.0 * c.a2) } else { [0.0; 2] };
            return TrajectoryPoint { q: q.into(), qd: qd.into(), qdd: qdd.into() };
        }
        if t > self.t_final {
            let q = self.joints.map(|c| c.position(self.t_final));
            return TrajectoryPoint { q: q.into(), qd: Vector2::zeros(), qdd: Vector2::zeros() };
        }
        TrajectoryPoint {
            q: self.joints.map(|c| c.position(t)).into(),
            qd: self.joints.map(|c| c.velocity(t)).into(),
            qdd: self.joints.map(|c| c.acceleration(t)).into(),
        }
    }

    /// The rest-to-rest swing used by the tracking experiments: from
    /// (180°, 90°) to the upright pose in 10 s.
    pub fn upright_swing() -> Self {
        plan_cubic(
            Vector2::new(std::f64::consts::PI, std::f64::consts::FRAC_PI_2),
            Vector2::zeros(),
            Vector2::zeros(),
            Vector2::zeros(),
            10.0,
        )
        .expect("positive duration")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix4, Vector4};
    use std::f64::consts::PI;

    /// Independent route: the 4×4 boundary-condition system solved by LU.
    fn solve_by_matrix(q0: f64, qf: f64, v0: f64, vf: f64, t: f64) -> Vector4<f64> {
        #[rustfmt::skip]
        let m = Matrix4::new(
            1.0, 0.0, 0.0,   0.0,
            0.0, 1.0, 0.0,   0.0,
            1.0, t,   t * t, t * t * t,
            0.0, 1.0, 2.0 * t, 3.0 * t * t,
        );
        m.lu().solve(&Vector4::new(q0, v0, qf, vf)).unwrap()
    }

    #[test]
    fn closed_form_matches_linear_solve() {
        let cases = [(0.3, -1.2, 0.5, -0.25, 3.0), (PI, 0.0, 0.0, 0.0, 10.0), (1.0, 1.0, 2.0, 0.0, 0.7)];
        for (q0, qf, v0, vf, t) in cases {
            let c = CubicCoeffs::fit(q0, qf, v0, vf, t);
            let x = solve_by_matrix(q0, qf, v0, vf, t);
            for (a, b) in [c.a0, c.a1, c.a2, c.a3].iter().zip(x.iter()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn swing_coefficients() {
        let traj = CubicTraj::upright_swing();
        let j1 = traj.joints[0];
        assert_abs_diff_eq!(j1.a0, PI, epsilon = 1e-15);
        assert_abs_diff_eq!(j1.a1, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j1.a2, -3.0 * PI / 100.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j1.a3, PI / 500.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_when_endpoints_equal() {
        let c = CubicCoeffs::fit(0.4, 0.4, 0.0, 0.0, 2.0);
        assert_eq!((c.a1, c.a2, c.a3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn endpoints_and_hold() {
        let traj = plan_cubic(
            Vector2::new(0.2, -0.4),
            Vector2::new(1.0, 0.5),
            Vector2::new(0.1, 0.0),
            Vector2::new(-0.3, 0.2),
            4.0,
        )
        .unwrap();
        let start = traj.eval(0.0);
        assert_eq!(start.q, Vector2::new(0.2, -0.4));
        assert_eq!(start.qd, Vector2::new(0.1, 0.0));
        assert_eq!(start.qdd, Vector2::new(2.0 * traj.joints[0].a2, 2.0 * traj.joints[1].a2));
        let end = traj.eval(4.0);
        assert!((end.q - Vector2::new(1.0, 0.5)).amax() < 1e-12);
        assert!((end.qd - Vector2::new(-0.3, 0.2)).amax() < 1e-12);
        let held = traj.eval(8.0);
        assert!((held.q - Vector2::new(1.0, 0.5)).amax() < 1e-12);
        assert_eq!(held.qd, Vector2::zeros());
        assert_eq!(held.qdd, Vector2::zeros());
    }

    #[test]
    fn rest_to_rest_peak_velocity_at_midpoint() {
        let traj = CubicTraj::upright_swing();
        let mid = traj.eval(5.0).qd[0].abs();
        for i in 0..=100 {
            assert!(traj.eval(i as f64 * 0.1).qd[0].abs() <= mid + 1e-15);
        }
    }

    #[test]
    fn rejects_non_positive_duration() {
        let z = Vector2::zeros();
        assert!(plan_cubic(z, z, z, z, 0.0).is_err());
        assert!(plan_cubic(z, z, z, z, -1.0).is_err());
    }
}
