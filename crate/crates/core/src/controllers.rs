//! Control laws behind a common contract.
//!
//! A [`ControllerSpec`] is immutable. Per-run memory (observer estimate,
//! adaptive parameter estimate) lives in an [`InternalState`] owned by the
//! simulation, and every method is a pure function of its arguments.

use nalgebra::{Matrix4, SMatrix, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    lumped_params, manipulator_terms, mass_matrix, regressor, solve_inertia, spd_condition,
    JointTorque, LumpedParams, Matrix2x5, RobotParams, State, Vector5, MAX_INERTIA_CONDITION,
};
use crate::error::{Error, Result};
use crate::linsys::{GainK, LinearModel, ObserverGainL};
use crate::trajectory::CubicTraj;

pub type Gain2x4 = SMatrix<f64, 2, 4>;
pub type Gain4x2 = SMatrix<f64, 4, 2>;
pub type Matrix5 = SMatrix<f64, 5, 5>;

/// `xi = [q - q_d; qd - qd_d]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingError {
    pub e: Vector2<f64>,
    pub edot: Vector2<f64>,
}

impl TrackingError {
    pub fn new(x: &State, reference: &State) -> Self {
        Self { e: x.q() - reference.q(), edot: x.qd() - reference.qd() }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.e[0], self.e[1], self.edot[0], self.edot[1])
    }
}

/// Uncertainty bound `rho(t, xi) = c0 + s(t) + c1 |xi|`, where `s` is an
/// optional piecewise-constant schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoBound {
    pub c0: f64,
    pub c1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<RhoSchedule>,
}

/// Values on consecutive bins of width `step` starting at `t = 0`. The last
/// value is held beyond the final bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSchedule {
    pub step: f64,
    pub values: Vec<f64>,
}

impl RhoSchedule {
    pub fn at(&self, t: f64) -> f64 {
        let Some(last) = self.values.len().checked_sub(1) else { return 0.0 };
        let i = (t.max(0.0) / self.step).floor();
        self.values[if i >= last as f64 { last } else { i as usize }]
    }
}

impl RhoBound {
    pub const ZERO: RhoBound = RhoBound { c0: 0.0, c1: 0.0, schedule: None };

    pub fn constant(c0: f64, c1: f64) -> Self {
        Self { c0, c1, schedule: None }
    }

    pub fn eval(&self, t: f64, xi: &Vector4<f64>) -> f64 {
        let s = self.schedule.as_ref().map_or(0.0, |s| s.at(t));
        self.c0 + s + self.c1 * xi.norm()
    }

    fn is_valid(&self) -> bool {
        let sched_ok = self.schedule.as_ref().is_none_or(|s| {
            s.step > 0.0 && s.step.is_finite() && s.values.iter().all(|v| *v >= 0.0 && v.is_finite())
        });
        self.c0 >= 0.0 && self.c1 >= 0.0 && self.c0.is_finite() && self.c1.is_finite() && sched_ok
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustSpec {
    pub k: Gain2x4,
    /// Lyapunov matrix for `A - B K` of the double-integrator error system.
    pub p: Matrix4<f64>,
    pub rho: RhoBound,
    /// Boundary-layer width; `None` gives the discontinuous unit-vector law.
    pub phi_bl: Option<f64>,
    pub traj: CubicTraj,
    pub nominal_params: RobotParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSpec {
    pub k: Gain2x4,
    pub p: Matrix4<f64>,
    pub gamma: Matrix5,
    pub alpha_hat0: LumpedParams,
    pub traj: CubicTraj,
    /// When false the estimate is frozen at `alpha_hat0`.
    pub adapt: bool,
    /// Each estimate is kept in `[lo, hi] * alpha_hat0`.
    pub projection: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerSpec {
    /// Zero torque; the open-loop reference case.
    Zero,
    StateFeedback { k: Gain2x4 },
    Lqr { k: Gain2x4 },
    OutputFeedback { k: Gain2x4, l: Gain4x2, a: Matrix4<f64>, b: Gain4x2, c: Gain2x4, xhat0: State },
    FeedbackLin { k: Gain2x4, traj: CubicTraj, params_used: RobotParams },
    RobustId(RobustSpec),
    AdaptiveId(AdaptiveSpec),
}

/// Controller memory carried between updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InternalState {
    Stateless,
    Observer(Vector4<f64>),
    Adaptive(Vector5),
}

impl InternalState {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            InternalState::Stateless => &[],
            InternalState::Observer(v) => v.as_slice(),
            InternalState::Adaptive(v) => v.as_slice(),
        }
    }

    /// Rebuild a state of the same kind from a flat slice.
    pub fn with_values(&self, values: &[f64]) -> Self {
        match self {
            InternalState::Stateless => InternalState::Stateless,
            InternalState::Observer(_) => InternalState::Observer(Vector4::from_column_slice(values)),
            InternalState::Adaptive(_) => InternalState::Adaptive(Vector5::from_column_slice(values)),
        }
    }

    pub fn estimate(&self) -> Option<State> {
        match self {
            InternalState::Observer(v) => Some(State::from_vector(v)),
            _ => None,
        }
    }

    pub fn alpha_hat(&self) -> Option<LumpedParams> {
        match self {
            InternalState::Adaptive(v) => Some(LumpedParams::from_vector(v)),
            _ => None,
        }
    }
}

/// What the controller sees at an update instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub state: State,
    /// Joint accelerations, needed only by the adaptive law.
    pub accel: Option<Vector2<f64>>,
}

impl Measurement {
    pub fn new(state: State) -> Self {
        Self { state, accel: None }
    }
}

/// Result of advancing the internal state by one control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advance {
    pub next: InternalState,
    /// True when the adaptive projection clamped an estimate.
    pub projected: bool,
}

// ---------------------------------------------------------------------------
// Free-standing laws

/// `u = -K x`.
pub fn state_feedback(k: &Gain2x4, x: &State) -> JointTorque {
    JointTorque::from_vector(&(-k * x.to_vector()))
}

/// Desired state at `t` as a [`State`].
pub fn reference_state(traj: &CubicTraj, t: f64) -> State {
    traj.eval(t).state()
}

/// Right-hand side of `xhat' = A xhat + B u + L (y - C xhat)`.
fn observer_rate(
    a: &Matrix4<f64>,
    b: &Gain4x2,
    c: &Gain2x4,
    l: &Gain4x2,
    xhat: &Vector4<f64>,
    u: &Vector2<f64>,
    y: &Vector2<f64>,
) -> Vector4<f64> {
    a * xhat + b * u + l * (y - c * xhat)
}

/// One classical RK4 step of the observer with `u` and `y` held.
#[allow(clippy::too_many_arguments)]
pub fn observer_step(
    a: &Matrix4<f64>,
    b: &Gain4x2,
    c: &Gain2x4,
    l: &Gain4x2,
    y: &Vector2<f64>,
    u_prev: &JointTorque,
    dt: f64,
    xhat: &Vector4<f64>,
) -> Result<Vector4<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("observer step must be positive, got {dt}")));
    }
    let u = u_prev.to_vector();
    let f = |x: &Vector4<f64>| observer_rate(a, b, c, l, x, &u, y);
    let k1 = f(xhat);
    let k2 = f(&(xhat + k1 * (dt / 2.0)));
    let k3 = f(&(xhat + k2 * (dt / 2.0)));
    let k4 = f(&(xhat + k3 * dt));
    Ok(xhat + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Inverse-dynamics law `u = M v + C qd + g` with `v = -K xi + qdd_d`.
pub fn feedback_lin(k: &Gain2x4, traj: &CubicTraj, params_used: &RobotParams, t: f64, x: &State) -> JointTorque {
    let point = traj.eval(t);
    let xi = TrackingError::new(x, &point.state()).to_vector();
    let v = -k * xi + point.qdd;
    let terms = manipulator_terms(params_used, x);
    JointTorque::from_vector(&terms.torque_for(&x.qd(), &v))
}

/// `B^T P xi` for the error system with `B = [0; I]`.
pub fn lyapunov_gradient(p: &Matrix4<f64>, xi: &Vector4<f64>) -> Vector2<f64> {
    let pxi = p * xi;
    Vector2::new(pxi[2], pxi[3])
}

/// Robust correction `v_r`, with or without a boundary layer.
pub fn robust_term(p: &Matrix4<f64>, rho: f64, phi_bl: Option<f64>, xi: &Vector4<f64>) -> Vector2<f64> {
    let w = lyapunov_gradient(p, xi);
    let nw = w.norm();
    match phi_bl {
        Some(phi) if nw <= phi => w * (-rho / phi),
        _ if nw > 0.0 => w * (-rho / nw),
        _ => Vector2::zeros(),
    }
}

/// Inverse dynamics with nominal parameters plus the robust correction.
pub fn robust_id_control(spec: &RobustSpec, t: f64, x: &State) -> JointTorque {
    let point = spec.traj.eval(t);
    let xi = TrackingError::new(x, &point.state()).to_vector();
    let v_r = robust_term(&spec.p, spec.rho.eval(t, &xi), spec.phi_bl, &xi);
    let v = -spec.k * xi + point.qdd + v_r;
    let terms = manipulator_terms(&spec.nominal_params, x);
    JointTorque::from_vector(&terms.torque_for(&x.qd(), &v))
}

/// `phi = M_hat(alpha_hat)^-1 Y(q, qd, qdd)`.
pub fn regressor_phi(alpha_hat: &Vector5, x: &State, qdd: &Vector2<f64>) -> Result<Matrix2x5> {
    let m_hat = mass_matrix(&LumpedParams::from_vector(alpha_hat), &x.q());
    let y = regressor(x, qdd);
    let mut phi = Matrix2x5::zeros();
    for j in 0..5 {
        phi.set_column(j, &solve_inertia(&m_hat, &y.column(j).into_owned())?);
    }
    Ok(phi)
}

/// Adaptive torque `u = Y(q, qd, v) alpha_hat`.
pub fn adaptive_command(spec: &AdaptiveSpec, t: f64, x: &State, alpha_hat: &Vector5) -> Result<JointTorque> {
    let point = spec.traj.eval(t);
    let xi = TrackingError::new(x, &point.state()).to_vector();
    let v = -spec.k * xi + point.qdd;
    let m_hat = mass_matrix(&LumpedParams::from_vector(alpha_hat), &x.q());
    let cond = spd_condition(&m_hat);
    if !(cond <= MAX_INERTIA_CONDITION) {
        return Err(Error::SingularInertia { cond });
    }
    Ok(JointTorque::from_vector(&(regressor(x, &v) * alpha_hat)))
}

/// `alpha_hat' = -Gamma^-1 phi^T B^T P xi`.
pub fn adaptation_rate(
    spec: &AdaptiveSpec,
    t: f64,
    x: &State,
    alpha_hat: &Vector5,
    qdd: &Vector2<f64>,
) -> Result<Vector5> {
    let xi = TrackingError::new(x, &reference_state(&spec.traj, t)).to_vector();
    let phi = regressor_phi(alpha_hat, x, qdd)?;
    let gamma_inv = spec
        .gamma
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("Gamma is singular".into()))?;
    Ok(-gamma_inv * phi.transpose() * lyapunov_gradient(&spec.p, &xi))
}

/// `M_hat(alpha)` is positive definite for every `q` iff `alpha2 > 0` and
/// `alpha1 alpha2 > alpha3^2`; a small relative margin is kept.
pub fn inertia_admissible(alpha: &Vector5) -> bool {
    alpha[1] > 0.0 && alpha[0] * alpha[1] - alpha[2] * alpha[2] > 1e-6 * alpha[0] * alpha[1]
}

fn projection_bounds(spec: &AdaptiveSpec) -> (Vector5, Vector5) {
    let a0 = spec.alpha_hat0.to_vector();
    let (lo, hi) = spec.projection;
    (a0 * lo, a0 * hi)
}

/// Torque at `t` and the estimate one explicit-Euler step later.
pub fn adaptive_step(
    spec: &AdaptiveSpec,
    t: f64,
    x: &State,
    qdd: &Vector2<f64>,
    alpha_hat: &Vector5,
    dt: f64,
) -> Result<(JointTorque, Vector5, bool)> {
    let u = adaptive_command(spec, t, x, alpha_hat)?;
    if !spec.adapt {
        return Ok((u, *alpha_hat, false));
    }
    let rate = adaptation_rate(spec, t, x, alpha_hat, qdd)?;
    let mut next = alpha_hat + rate * dt;
    let (lo, hi) = projection_bounds(spec);
    let mut projected = false;
    for i in 0..5 {
        let clamped = next[i].clamp(lo[i].min(hi[i]), hi[i].max(lo[i]));
        if clamped != next[i] {
            projected = true;
            next[i] = clamped;
        }
    }
    // The box alone does not keep M_hat positive definite; that needs
    // alpha1 alpha2 > alpha3^2. A step that would break it is rejected.
    if !inertia_admissible(&next) {
        return Ok((u, *alpha_hat, true));
    }
    Ok((u, next, projected))
}

// ---------------------------------------------------------------------------
// Uniform contract

impl ControllerSpec {
    pub fn output_feedback(k: &GainK, l: &ObserverGainL, model: &LinearModel, xhat0: State) -> Result<Self> {
        let dims = |m: &nalgebra::DMatrix<f64>, r, c, name: &str| {
            if m.shape() != (r, c) {
                Err(Error::Dimension(format!("{name} must be {r}x{c}, got {:?}", m.shape())))
            } else {
                Ok(())
            }
        };
        dims(&l.0, 4, 2, "L")?;
        dims(&model.a, 4, 4, "A")?;
        dims(&model.b, 4, 2, "B")?;
        dims(&model.c, 2, 4, "C")?;
        Ok(ControllerSpec::OutputFeedback {
            k: k.to_2x4()?,
            l: l.0.fixed_view::<4, 2>(0, 0).into_owned(),
            a: model.a.fixed_view::<4, 4>(0, 0).into_owned(),
            b: model.b.fixed_view::<4, 2>(0, 0).into_owned(),
            c: model.c.fixed_view::<2, 4>(0, 0).into_owned(),
            xhat0,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ControllerSpec::Zero => "zero",
            ControllerSpec::StateFeedback { .. } => "state_feedback",
            ControllerSpec::Lqr { .. } => "lqr",
            ControllerSpec::OutputFeedback { .. } => "output_feedback",
            ControllerSpec::FeedbackLin { .. } => "feedback_lin",
            ControllerSpec::RobustId(_) => "robust_id",
            ControllerSpec::AdaptiveId(_) => "adaptive_id",
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn finite<'a>(mut it: impl Iterator<Item = &'a f64>, what: &str) -> Result<()> {
            if it.all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{what} must be finite")))
            }
        }
        match self {
            ControllerSpec::Zero => Ok(()),
            ControllerSpec::StateFeedback { k } | ControllerSpec::Lqr { k } => finite(k.iter(), "K"),
            ControllerSpec::OutputFeedback { k, l, a, b, c, xhat0 } => {
                finite(k.iter().chain(l.iter()).chain(a.iter()).chain(b.iter()).chain(c.iter()), "observer matrices")?;
                if !xhat0.is_finite() {
                    return Err(Error::InvalidInput("xhat0 must be finite".into()));
                }
                Ok(())
            }
            ControllerSpec::FeedbackLin { k, params_used, .. } => {
                finite(k.iter(), "K")?;
                params_used.validate()
            }
            ControllerSpec::RobustId(s) => {
                finite(s.k.iter().chain(s.p.iter()), "K and P")?;
                s.nominal_params.validate()?;
                if !s.rho.is_valid() {
                    return Err(Error::InvalidInput("rho coefficients must be finite and non-negative".into()));
                }
                if let Some(phi) = s.phi_bl {
                    if !(phi > 0.0 && phi.is_finite()) {
                        return Err(Error::InvalidInput("boundary layer width must be positive".into()));
                    }
                }
                Ok(())
            }
            ControllerSpec::AdaptiveId(s) => {
                finite(s.k.iter().chain(s.p.iter()).chain(s.gamma.iter()), "K, P and Gamma")?;
                if (s.gamma - s.gamma.transpose()).amax() > 1e-12 * s.gamma.amax()
                    || nalgebra::Cholesky::new(s.gamma).is_none()
                {
                    return Err(Error::InvalidInput("Gamma must be symmetric positive definite".into()));
                }
                if s.alpha_hat0.0.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::InvalidInput("initial estimates must be positive".into()));
                }
                let (lo, hi) = s.projection;
                if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
                    return Err(Error::InvalidInput("projection must bracket the initial estimate".into()));
                }
                Ok(())
            }
        }
    }

    pub fn initial_internal(&self) -> InternalState {
        match self {
            ControllerSpec::OutputFeedback { xhat0, .. } => InternalState::Observer(xhat0.to_vector()),
            ControllerSpec::AdaptiveId(s) => InternalState::Adaptive(s.alpha_hat0.to_vector()),
            _ => InternalState::Stateless,
        }
    }

    /// Desired state at `t` for tracking laws; `None` for regulators.
    pub fn reference(&self, t: f64) -> Option<State> {
        match self {
            ControllerSpec::FeedbackLin { traj, .. } => Some(reference_state(traj, t)),
            ControllerSpec::RobustId(s) => Some(reference_state(&s.traj, t)),
            ControllerSpec::AdaptiveId(s) => Some(reference_state(&s.traj, t)),
            _ => None,
        }
    }

    /// True if [`advance`](Self::advance) needs `Measurement::accel`.
    pub fn needs_acceleration(&self) -> bool {
        matches!(self, ControllerSpec::AdaptiveId(s) if s.adapt)
    }

    fn mismatch(&self, internal: &InternalState) -> Error {
        Error::InvalidInput(format!("internal state {internal:?} does not belong to a {} controller", self.kind()))
    }

    pub fn command(&self, t: f64, meas: &Measurement, internal: &InternalState) -> Result<JointTorque> {
        let x = &meas.state;
        match (self, internal) {
            (ControllerSpec::Zero, _) => Ok(JointTorque::ZERO),
            (ControllerSpec::StateFeedback { k } | ControllerSpec::Lqr { k }, _) => Ok(state_feedback(k, x)),
            (ControllerSpec::OutputFeedback { k, .. }, InternalState::Observer(xhat)) => {
                Ok(JointTorque::from_vector(&(-k * xhat)))
            }
            (ControllerSpec::FeedbackLin { k, traj, params_used }, _) => Ok(feedback_lin(k, traj, params_used, t, x)),
            (ControllerSpec::RobustId(s), _) => Ok(robust_id_control(s, t, x)),
            (ControllerSpec::AdaptiveId(s), InternalState::Adaptive(a)) => adaptive_command(s, t, x, a),
            _ => Err(self.mismatch(internal)),
        }
    }

    /// Advance the internal state over one control period of length `dt`
    /// during which `applied` (post-saturation) was held.
    pub fn advance(
        &self,
        t: f64,
        meas: &Measurement,
        internal: &InternalState,
        applied: &JointTorque,
        dt: f64,
    ) -> Result<Advance> {
        match (self, internal) {
            (ControllerSpec::OutputFeedback { l, a, b, c, .. }, InternalState::Observer(xhat)) => {
                let y = c * meas.state.to_vector();
                let next = observer_step(a, b, c, l, &y, applied, dt, xhat)?;
                Ok(Advance { next: InternalState::Observer(next), projected: false })
            }
            (ControllerSpec::AdaptiveId(s), InternalState::Adaptive(alpha)) => {
                if !s.adapt {
                    return Ok(Advance { next: *internal, projected: false });
                }
                let qdd = meas
                    .accel
                    .ok_or_else(|| Error::InvalidInput("adaptive update needs an acceleration measurement".into()))?;
                let (_, next, projected) = adaptive_step(s, t, &meas.state, &qdd, alpha, dt)?;
                Ok(Advance { next: InternalState::Adaptive(next), projected })
            }
            (ControllerSpec::OutputFeedback { .. } | ControllerSpec::AdaptiveId(_), _) => Err(self.mismatch(internal)),
            _ => Ok(Advance { next: *internal, projected: false }),
        }
    }

    /// Time derivative of the internal state for continuous co-integration.
    /// Projection acts by zeroing rates that would leave the admissible box.
    pub fn internal_rate(
        &self,
        t: f64,
        meas: &Measurement,
        internal: &InternalState,
        applied: &JointTorque,
        out: &mut [f64],
    ) -> Result<()> {
        match (self, internal) {
            (ControllerSpec::OutputFeedback { l, a, b, c, .. }, InternalState::Observer(xhat)) => {
                let y = c * meas.state.to_vector();
                out.copy_from_slice(observer_rate(a, b, c, l, xhat, &applied.to_vector(), &y).as_slice());
                Ok(())
            }
            (ControllerSpec::AdaptiveId(s), InternalState::Adaptive(alpha)) => {
                if !s.adapt {
                    out.fill(0.0);
                    return Ok(());
                }
                let qdd = meas
                    .accel
                    .ok_or_else(|| Error::InvalidInput("adaptive update needs an acceleration measurement".into()))?;
                let mut rate = adaptation_rate(s, t, &meas.state, alpha, &qdd)?;
                let (lo, hi) = projection_bounds(s);
                for i in 0..5 {
                    if (alpha[i] >= hi[i] && rate[i] > 0.0) || (alpha[i] <= lo[i] && rate[i] < 0.0) {
                        rate[i] = 0.0;
                    }
                }
                out.copy_from_slice(rate.as_slice());
                Ok(())
            }
            (ControllerSpec::OutputFeedback { .. } | ControllerSpec::AdaptiveId(_), _) => Err(self.mismatch(internal)),
            _ => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Uncertainty bound calibration

/// Region sampled when calibrating [`RhoBound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoSampling {
    pub samples: usize,
    /// Joint speeds are drawn from the disc `|qd| <= qd_max`.
    pub qd_max: f64,
    /// Feedforward accelerations are drawn from `[-qdd_max, qdd_max]^2`.
    pub qdd_max: f64,
    pub safety: f64,
    pub seed: u64,
}

impl Default for RhoSampling {
    fn default() -> Self {
        Self { samples: 20_000, qd_max: 5.0, qdd_max: 0.2, safety: 1.5, seed: 7 }
    }
}

/// Sampled model-mismatch term
/// `eta = M_hat^-1 ((M_hat - M) v + (C_hat - C) qd + (g_hat - g))`.
pub fn model_mismatch(truth: &RobotParams, nominal: &RobotParams, x: &State, v: &Vector2<f64>) -> Result<Vector2<f64>> {
    let t = manipulator_terms(truth, x);
    let n = manipulator_terms(nominal, x);
    let qd = x.qd();
    let rhs = (n.mass - t.mass) * v + (n.coriolis - t.coriolis) * qd + (n.gravity - t.gravity);
    solve_inertia(&n.mass, &rhs)
}

/// Fit `rho = c0 + c1 |xi|` so that `|eta| <= rho` on every sample.
///
/// With `v = -K xi + qdd_d`, the triangle inequality splits `|eta|` into a
/// part independent of `xi` (giving `c0`) and `|M_hat^-1 (M_hat - M)| |K|
/// |xi|` (giving `c1`). Both maxima are taken over sampled configurations
/// `q` in `[-pi, pi]^2` and inflated by the safety factor.
pub fn calibrate_rho(truth: &RobotParams, nominal: &RobotParams, k: &Gain2x4, sampling: &RhoSampling) -> Result<RhoBound> {
    truth.validate()?;
    nominal.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let pi = std::f64::consts::PI;
    let k_norm = k.svd(false, false).singular_values.max();
    let (mut c0, mut gain): (f64, f64) = (0.0, 0.0);
    for _ in 0..sampling.samples.max(1) {
        let q1 = rng.random_range(-pi..=pi);
        let q2 = rng.random_range(-pi..=pi);
        let r = sampling.qd_max * rng.random::<f64>().sqrt();
        let ang = rng.random_range(0.0..2.0 * pi);
        let x = State::new(q1, q2, r * ang.cos(), r * ang.sin());
        let qdd = if sampling.qdd_max > 0.0 {
            Vector2::new(
                rng.random_range(-sampling.qdd_max..=sampling.qdd_max),
                rng.random_range(-sampling.qdd_max..=sampling.qdd_max),
            )
        } else {
            Vector2::zeros()
        };
        c0 = c0.max(model_mismatch(truth, nominal, &x, &qdd)?.norm());
        let m_hat = mass_matrix(&lumped_params(nominal), &x.q());
        let m = mass_matrix(&lumped_params(truth), &x.q());
        let m_hat_inv = m_hat.try_inverse().ok_or(Error::SingularInertia { cond: f64::INFINITY })?;
        let beta = (m_hat_inv * (m_hat - m)).svd(false, false).singular_values.max();
        gain = gain.max(beta);
    }
    Ok(RhoBound::constant(sampling.safety * c0, sampling.safety * gain * k_norm))
}

/// Tube around a reference trajectory sampled by [`calibrate_rho_along`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeSampling {
    pub samples: usize,
    /// Per-joint position deviation `|q - q_d| <= pos`.
    pub pos: f64,
    /// Per-joint speed deviation `|qd - qd_d| <= vel`.
    pub vel: f64,
    /// Bin width of the `c0` schedule.
    pub step: f64,
    pub safety: f64,
    pub seed: u64,
}

impl Default for TubeSampling {
    fn default() -> Self {
        Self { samples: 20_000, pos: 0.7, vel: 1.0, step: 0.5, safety: 1.5, seed: 7 }
    }
}

/// Fit a time-scheduled bound along `traj`.
///
/// The mismatch on the reference itself (`xi = 0`, `v = qdd_d`) gives the
/// schedule: each bin holds the largest value seen on a 1 ms grid inside it.
/// Away from the reference, `c1` is the largest sampled slope
/// `|eta(x) - eta(x_d)| / |xi|` over the tube, with `v = qdd_d - K xi`.
/// Both are inflated by the safety factor. The bound is only meaningful
/// while the closed loop stays inside the tube.
pub fn calibrate_rho_along(
    truth: &RobotParams,
    nominal: &RobotParams,
    k: &Gain2x4,
    traj: &CubicTraj,
    t_final: f64,
    tube: &TubeSampling,
) -> Result<RhoBound> {
    truth.validate()?;
    nominal.validate()?;
    if !(tube.step > 0.0 && t_final > 0.0 && tube.pos >= 0.0 && tube.vel >= 0.0) {
        return Err(Error::InvalidInput("tube sampling needs positive step and horizon".into()));
    }
    let on_ref = |t: f64| {
        let p = traj.eval(t);
        model_mismatch(truth, nominal, &p.state(), &p.qdd).map(|eta| (p, eta))
    };
    let bins = (t_final / tube.step).ceil() as usize;
    let mut values = vec![0.0_f64; bins.max(1)];
    let ticks = (t_final * 1000.0).round() as usize;
    for i in 0..=ticks {
        let t = i as f64 * 1e-3;
        let b = ((t / tube.step).floor() as usize).min(values.len() - 1);
        values[b] = values[b].max(on_ref(t)?.1.norm());
        // A bin edge belongs to both neighbours.
        if b > 0 && (t / tube.step).fract() == 0.0 {
            values[b - 1] = values[b - 1].max(values[b]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tube.seed);
    let mut slope = 0.0_f64;
    for _ in 0..tube.samples.max(1) {
        let t = rng.random_range(0.0..=t_final);
        let (p, eta_ref) = on_ref(t)?;
        let xi = Vector4::new(
            rng.random_range(-tube.pos..=tube.pos),
            rng.random_range(-tube.pos..=tube.pos),
            rng.random_range(-tube.vel..=tube.vel),
            rng.random_range(-tube.vel..=tube.vel),
        );
        let n = xi.norm();
        if n == 0.0 {
            continue;
        }
        let x = State::new(p.q[0] + xi[0], p.q[1] + xi[1], p.qd[0] + xi[2], p.qd[1] + xi[3]);
        let eta = model_mismatch(truth, nominal, &x, &(p.qdd - k * xi))?;
        slope = slope.max((eta - eta_ref).norm() / n);
    }
    for v in values.iter_mut() {
        *v *= tube.safety;
    }
    Ok(RhoBound { c0: 0.0, c1: tube.safety * slope, schedule: Some(RhoSchedule { step: tube.step, values }) })
}
