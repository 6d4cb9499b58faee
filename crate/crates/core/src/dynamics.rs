//! Closed-form rigid-body dynamics of the two-link planar arm.
//!
//! Conventions: `th1` is measured from the upward vertical, `th2` is the
//! angle of link 2 relative to link 1, so `q = 0` is the upright pose and
//! gravity destabilizes it. Potential energy is zero at the height of
//! joint 1.
//!
//! All model terms are written in the five lumped parameters
//!
//! ```text
//! a1 = m1 r1^2 + m2 l1^2 + I1     a2 = m2 r2^2 + I2     a3 = m2 l1 r2
//! a4 = (m1 r1 + m2 l1) grav       a5 = m2 r2 grav
//! ```
//!
//! so the same code evaluates the true model, a nominal model, or a model
//! rebuilt from adaptive estimates.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix2x5 = SMatrix<f64, 2, 5>;
pub type Vector5 = SVector<f64, 5>;

/// Inertia matrices with a condition number above this are rejected.
pub const MAX_INERTIA_CONDITION: f64 = 1e12;

/// Physical constants of the arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub r1: f64,
    pub r2: f64,
    pub i1: f64,
    pub i2: f64,
    #[serde(default = "default_grav")]
    pub grav: f64,
    /// Viscous joint friction, N·m·s/rad.
    #[serde(default)]
    pub b1: f64,
    #[serde(default)]
    pub b2: f64,
}

fn default_grav() -> f64 {
    9.81
}

impl RobotParams {
    /// The RRBot arm: unit masses and lengths, COM at 0.45 m, 0.084 kg·m².
    pub fn rrbot() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            r1: 0.45,
            r2: 0.45,
            i1: 0.084,
            i2: 0.084,
            grav: 9.81,
            b1: 0.0,
            b2: 0.0,
        }
    }

    pub fn with_friction(mut self, b1: f64, b2: f64) -> Self {
        self.b1 = b1;
        self.b2 = b2;
        self
    }

    /// Scale masses and inertias by `factor`, leaving the geometry alone.
    pub fn scale_mass_inertia(mut self, factor: f64) -> Self {
        self.m1 *= factor;
        self.m2 *= factor;
        self.i1 *= factor;
        self.i2 *= factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("r1", self.r1),
            ("r2", self.r2),
            ("I1", self.i1),
            ("I2", self.i2),
            ("grav", self.grav),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.r1 > self.l1 || self.r2 > self.l2 {
            return Err(Error::InvalidParams(
                "centre of mass must lie on its link (r <= l)".into(),
            ));
        }
        for (name, v) in [("b1", self.b1), ("b2", self.b2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn friction(&self) -> Matrix2<f64> {
        Matrix2::new(self.b1, 0.0, 0.0, self.b2)
    }
}

impl Default for RobotParams {
    fn default() -> Self {
        Self::rrbot()
    }
}

/// Joint angles (rad, unwrapped) and joint rates (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct State {
    pub th1: f64,
    pub th2: f64,
    pub th1d: f64,
    pub th2d: f64,
}

impl State {
    pub const ZERO: State = State { th1: 0.0, th2: 0.0, th1d: 0.0, th2d: 0.0 };

    pub fn new(th1: f64, th2: f64, th1d: f64, th2d: f64) -> Self {
        Self { th1, th2, th1d, th2d }
    }

    /// Angles given in degrees, rates in degrees per second.
    pub fn from_degrees(th1: f64, th2: f64, th1d: f64, th2d: f64) -> Self {
        Self::new(th1.to_radians(), th2.to_radians(), th1d.to_radians(), th2d.to_radians())
    }

    pub fn from_parts(q: &Vector2<f64>, qd: &Vector2<f64>) -> Self {
        Self::new(q[0], q[1], qd[0], qd[1])
    }

    pub fn q(&self) -> Vector2<f64> {
        Vector2::new(self.th1, self.th2)
    }

    pub fn qd(&self) -> Vector2<f64> {
        Vector2::new(self.th1d, self.th2d)
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.th1, self.th2, self.th1d, self.th2d)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.th1, self.th2, self.th1d, self.th2d]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl From<[f64; 4]> for State {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<State> for [f64; 4] {
    fn from(s: State) -> Self {
        s.to_array()
    }
}

/// Joint torques, N·m.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct JointTorque {
    pub tau1: f64,
    pub tau2: f64,
}

impl JointTorque {
    pub const ZERO: JointTorque = JointTorque { tau1: 0.0, tau2: 0.0 };

    pub fn new(tau1: f64, tau2: f64) -> Self {
        Self { tau1, tau2 }
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.tau1, self.tau2)
    }
}

impl From<[f64; 2]> for JointTorque {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<JointTorque> for [f64; 2] {
    fn from(t: JointTorque) -> Self {
        [t.tau1, t.tau2]
    }
}

/// `M(q) qdd + C(q, qd) qd + g(q) = u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManipulatorTerms {
    pub mass: Matrix2<f64>,
    pub coriolis: Matrix2<f64>,
    pub gravity: Vector2<f64>,
}

impl ManipulatorTerms {
    /// `C qd + g`.
    pub fn bias(&self, qd: &Vector2<f64>) -> Vector2<f64> {
        self.coriolis * qd + self.gravity
    }

    /// Inverse dynamics `M qdd + C qd + g`.
    pub fn torque_for(&self, qd: &Vector2<f64>, qdd: &Vector2<f64>) -> Vector2<f64> {
        self.mass * qdd + self.bias(qd)
    }
}

/// The five lumped parameters `a1..a5` the dynamics are linear in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct LumpedParams(pub [f64; 5]);

impl LumpedParams {
    pub fn to_vector(&self) -> Vector5 {
        Vector5::from_column_slice(&self.0)
    }

    pub fn from_vector(v: &Vector5) -> Self {
        Self([v[0], v[1], v[2], v[3], v[4]])
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.map(|a| a * c))
    }
}

impl From<[f64; 5]> for LumpedParams {
    fn from(v: [f64; 5]) -> Self {
        Self(v)
    }
}

impl From<LumpedParams> for [f64; 5] {
    fn from(p: LumpedParams) -> Self {
        p.0
    }
}

pub fn lumped_params(params: &RobotParams) -> LumpedParams {
    let p = params;
    LumpedParams([
        p.m1 * p.r1 * p.r1 + p.m2 * p.l1 * p.l1 + p.i1,
        p.m2 * p.r2 * p.r2 + p.i2,
        p.m2 * p.l1 * p.r2,
        (p.m1 * p.r1 + p.m2 * p.l1) * p.grav,
        p.m2 * p.r2 * p.grav,
    ])
}

/// Inertia matrix from lumped parameters.
pub fn mass_matrix(alpha: &LumpedParams, q: &Vector2<f64>) -> Matrix2<f64> {
    let [a1, a2, a3, _, _] = alpha.0;
    let c2 = q[1].cos();
    let m12 = a2 + a3 * c2;
    Matrix2::new(a1 + a2 + 2.0 * a3 * c2, m12, m12, a2)
}

/// Manipulator terms from lumped parameters; `C` is the Christoffel form.
pub fn terms_from_lumped(alpha: &LumpedParams, state: &State) -> ManipulatorTerms {
    let [_, _, a3, a4, a5] = alpha.0;
    let q = state.q();
    let h = -a3 * state.th2.sin();
    let s12 = (state.th1 + state.th2).sin();
    ManipulatorTerms {
        mass: mass_matrix(alpha, &q),
        coriolis: Matrix2::new(
            h * state.th2d,
            h * (state.th1d + state.th2d),
            -h * state.th1d,
            0.0,
        ),
        gravity: Vector2::new(-a4 * state.th1.sin() - a5 * s12, -a5 * s12),
    }
}

pub fn manipulator_terms(params: &RobotParams, state: &State) -> ManipulatorTerms {
    terms_from_lumped(&lumped_params(params), state)
}

/// Jacobian of the gravity vector with respect to `q`.
pub fn gravity_jacobian(alpha: &LumpedParams, q: &Vector2<f64>) -> Matrix2<f64> {
    let [_, _, _, a4, a5] = alpha.0;
    let c1 = q[0].cos();
    let c12 = (q[0] + q[1]).cos();
    Matrix2::new(-a4 * c1 - a5 * c12, -a5 * c12, -a5 * c12, -a5 * c12)
}

/// Condition number of a symmetric 2×2 matrix; infinite if not positive definite.
pub fn spd_condition(m: &Matrix2<f64>) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = ((m[(0, 0)] - m[(1, 1)]).powi(2) + 4.0 * m[(0, 1)] * m[(1, 0)]).max(0.0).sqrt();
    let hi = 0.5 * (tr + disc);
    let lo = det / hi;
    if !(lo > 0.0) || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solve `M x = rhs` for a symmetric positive definite 2×2 `M`.
pub fn solve_inertia(mass: &Matrix2<f64>, rhs: &Vector2<f64>) -> Result<Vector2<f64>> {
    let cond = spd_condition(mass);
    if cond > MAX_INERTIA_CONDITION {
        return Err(Error::SingularInertia { cond });
    }
    let det = mass[(0, 0)] * mass[(1, 1)] - mass[(0, 1)] * mass[(1, 0)];
    Ok(Vector2::new(
        (mass[(1, 1)] * rhs[0] - mass[(0, 1)] * rhs[1]) / det,
        (mass[(0, 0)] * rhs[1] - mass[(1, 0)] * rhs[0]) / det,
    ))
}

/// Joint accelerations `M^-1 (u - C qd - g - B_f qd)`.
pub fn joint_acceleration(
    params: &RobotParams,
    state: &State,
    u: &JointTorque,
) -> Result<Vector2<f64>> {
    let terms = manipulator_terms(params, state);
    let qd = state.qd();
    let rhs = u.to_vector() - terms.bias(&qd) - params.friction() * qd;
    solve_inertia(&terms.mass, &rhs)
}

/// State derivative `xdot = f(x, u)`.
pub fn forward_dynamics(params: &RobotParams, state: &State, u: &JointTorque) -> Result<Vector4<f64>> {
    let qdd = joint_acceleration(params, state, u)?;
    Ok(Vector4::new(state.th1d, state.th2d, qdd[0], qdd[1]))
}

pub fn kinetic_energy(params: &RobotParams, state: &State) -> f64 {
    let qd = state.qd();
    0.5 * qd.dot(&(mass_matrix(&lumped_params(params), &state.q()) * qd))
}

pub fn potential_energy(params: &RobotParams, state: &State) -> f64 {
    let a = lumped_params(params);
    a.0[3] * state.th1.cos() + a.0[4] * (state.th1 + state.th2).cos()
}

pub fn total_energy(params: &RobotParams, state: &State) -> f64 {
    kinetic_energy(params, state) + potential_energy(params, state)
}

/// Regressor `Y(q, qd, qdd)` with `Y a = M qdd + C qd + g`.
///
/// Friction is not part of the parametrization.
#[rustfmt::skip]
pub fn regressor(state: &State, qdd: &Vector2<f64>) -> Matrix2x5 {
    let (s1, s2, c2) = (state.th1.sin(), state.th2.sin(), state.th2.cos());
    let s12 = (state.th1 + state.th2).sin();
    let (w1, w2) = (state.th1d, state.th2d);
    let (dd1, dd2) = (qdd[0], qdd[1]);
    Matrix2x5::new(
        dd1, dd1 + dd2, (2.0 * dd1 + dd2) * c2 - s2 * (2.0 * w1 * w2 + w2 * w2), -s1, -s12,
        0.0, dd1 + dd2, dd1 * c2 + s2 * w1 * w1,                                 0.0, -s12,
    )
}
