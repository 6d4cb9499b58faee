//! Numerical plant: integrates the arm under a discretely updated control
//! law, in an ideal mode or a "truth" mode with friction, sensor noise and
//! torque saturation.

use nalgebra::{Vector2, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controllers::{ControllerSpec, InternalState, Measurement};
use crate::dynamics::{forward_dynamics, joint_acceleration, JointTorque, LumpedParams, RobotParams, State};
use crate::error::{Error, Result};
use crate::ode::{Dopri5, OdeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantMode {
    Ideal,
    Truth,
}

/// How the controller is coupled to the continuous dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlTiming {
    /// Updates at `control_rate`, torque held in between.
    ZeroOrderHold,
    /// Control law and internal states evaluated inside the integrator.
    /// Noise-free measurements only.
    Continuous,
}

/// Source of the joint-acceleration measurement for laws that need it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelSource {
    /// Evaluated from the plant dynamics at the update instant.
    Exact,
    /// Backward difference of measured joint velocities.
    FiniteDifference,
}

pub const TRUTH_FRICTION: f64 = 0.05;
pub const TRUTH_NOISE_POS: f64 = 1e-3;
pub const TRUTH_NOISE_VEL: f64 = 1e-2;
pub const DEFAULT_TORQUE_LIMITS: [f64; 2] = [20.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub mode: PlantMode,
    pub params: RobotParams,
    /// Control update rate in Hz.
    pub control_rate: f64,
    /// Trace logging rate in Hz.
    pub log_rate: f64,
    pub noise_std_pos: f64,
    pub noise_std_vel: f64,
    pub torque_limits: [f64; 2],
    pub rng_seed: u64,
    pub timing: ControlTiming,
    pub accel_source: AccelSource,
    #[serde(skip)]
    pub ode: OdeOptions,
}

impl PlantConfig {
    pub fn ideal(params: RobotParams) -> Self {
        Self {
            mode: PlantMode::Ideal,
            params,
            control_rate: 100.0,
            log_rate: 1000.0,
            noise_std_pos: 0.0,
            noise_std_vel: 0.0,
            torque_limits: DEFAULT_TORQUE_LIMITS,
            rng_seed: 0,
            timing: ControlTiming::ZeroOrderHold,
            accel_source: AccelSource::Exact,
            ode: OdeOptions::default(),
        }
    }

    /// Friction and sensor noise at the default truth-mode levels. Friction
    /// already present in `params` is kept.
    pub fn truth(params: RobotParams) -> Self {
        let params = if params.b1 == 0.0 && params.b2 == 0.0 {
            params.with_friction(TRUTH_FRICTION, TRUTH_FRICTION)
        } else {
            params
        };
        Self {
            mode: PlantMode::Truth,
            params,
            noise_std_pos: TRUTH_NOISE_POS,
            noise_std_vel: TRUTH_NOISE_VEL,
            accel_source: AccelSource::FiniteDifference,
            ..Self::ideal(params)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_timing(mut self, timing: ControlTiming) -> Self {
        self.timing = timing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.control_rate) || !positive(self.log_rate) {
            return Err(Error::InvalidInput("control and log rates must be positive".into()));
        }
        if !(self.noise_std_pos >= 0.0 && self.noise_std_vel >= 0.0)
            || !self.noise_std_pos.is_finite()
            || !self.noise_std_vel.is_finite()
        {
            return Err(Error::InvalidInput("noise standard deviations must be non-negative".into()));
        }
        if !self.torque_limits.iter().all(|&l| positive(l)) {
            return Err(Error::InvalidInput("torque limits must be positive".into()));
        }
        Ok(())
    }

    fn has_noise(&self) -> bool {
        self.noise_std_pos > 0.0 || self.noise_std_vel > 0.0
    }

    fn clamp(&self, u: &JointTorque) -> (JointTorque, [bool; 2]) {
        let [l1, l2] = self.torque_limits;
        let c = JointTorque::new(u.tau1.clamp(-l1, l1), u.tau2.clamp(-l2, l2));
        (c, [c.tau1 != u.tau1, c.tau2 != u.tau2])
    }
}

/// Time-indexed simulation record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub times: Vec<f64>,
    /// True states, never the noisy measurements.
    pub states: Vec<State>,
    /// Applied torques after saturation.
    pub torques: Vec<JointTorque>,
    pub references: Option<Vec<State>>,
    pub estimates: Option<Vec<State>>,
    pub adaptive_params: Option<Vec<LumpedParams>>,
    /// Control updates (or logged samples in continuous mode) in which each
    /// joint's command was clamped.
    pub saturation_events: [usize; 2],
    /// Control updates in which the adaptive projection was active.
    pub projection_events: usize,
    pub control_updates: usize,
    pub ode_steps: usize,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&State> {
        self.states.last()
    }

    fn with_groups(ctrl: &ControllerSpec, internal: &InternalState) -> Self {
        Self {
            references: ctrl.reference(0.0).map(|_| Vec::new()),
            estimates: internal.estimate().map(|_| Vec::new()),
            adaptive_params: internal.alpha_hat().map(|_| Vec::new()),
            ..Default::default()
        }
    }

    fn push(&mut self, t: f64, x: State, u: JointTorque, ctrl: &ControllerSpec, internal: &InternalState) {
        self.times.push(t);
        self.states.push(x);
        self.torques.push(u);
        if let Some(r) = self.references.as_mut() {
            r.push(ctrl.reference(t).expect("tracking controller"));
        }
        if let Some(e) = self.estimates.as_mut() {
            e.push(internal.estimate().expect("observer state"));
        }
        if let Some(a) = self.adaptive_params.as_mut() {
            a.push(internal.alpha_hat().expect("adaptive state"));
        }
    }
}

/// Logging instants `i / log_rate` up to `t_final`, which is appended if it
/// is not itself a grid point.
pub fn log_grid(t_final: f64, log_rate: f64) -> Vec<f64> {
    let n = (t_final * log_rate + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|i| i as f64 / log_rate).filter(|&t| t <= t_final).collect();
    if times.last().is_none_or(|&t| t_final - t > 1e-12 * t_final.max(1.0)) {
        times.push(t_final);
    }
    times
}

fn check_horizon(x0: &State, t_final: f64) -> Result<()> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidInput(format!("t_final must be non-negative, got {t_final}")));
    }
    if !x0.is_finite() {
        return Err(Error::InvalidInput("initial state must be finite".into()));
    }
    Ok(())
}

fn dynamics_rhs(params: &RobotParams, x: &[f64], u: &JointTorque, out: &mut [f64]) -> Result<()> {
    let s = State::new(x[0], x[1], x[2], x[3]);
    let xd = forward_dynamics(params, &s, u)?;
    out[..4].copy_from_slice(xd.as_slice());
    Ok(())
}

/// Unforced motion `xdot = f(x, 0)` in a single adaptive integration.
pub fn integrate_passive(config: &PlantConfig, x0: &State, t_final: f64) -> Result<SimTrace> {
    config.validate()?;
    check_horizon(x0, t_final)?;
    let mut trace = SimTrace::default();
    let grid = log_grid(t_final, config.log_rate);
    let mut y = x0.to_array();
    let params = config.params;
    let mut solver = Dopri5::new(config.ode);
    let stats = solver.integrate(
        |_, x, out| dynamics_rhs(&params, x, &JointTorque::ZERO, out),
        0.0,
        &mut y,
        t_final,
        None,
        &grid,
        |t, x| {
            trace.times.push(t);
            trace.states.push(State::new(x[0], x[1], x[2], x[3]));
            trace.torques.push(JointTorque::ZERO);
        },
    )?;
    trace.ode_steps = stats.accepted;
    Ok(trace)
}

/// Closed-loop simulation of `controller` from `x0` over `[0, t_final]`.
pub fn integrate_closed_loop(
    config: &PlantConfig,
    controller: &ControllerSpec,
    x0: &State,
    t_final: f64,
) -> Result<SimTrace> {
    config.validate()?;
    controller.validate()?;
    check_horizon(x0, t_final)?;
    match config.timing {
        ControlTiming::ZeroOrderHold => run_sampled(config, controller, x0, t_final),
        ControlTiming::Continuous => {
            if config.has_noise() {
                return Err(Error::InvalidInput("continuous control requires noise-free measurements".into()));
            }
            run_continuous(config, controller, x0, t_final)
        }
    }
}

fn controller_error(t: f64) -> impl Fn(Error) -> Error {
    move |e| Error::Controller { t, source: Box::new(e) }
}

fn run_sampled(config: &PlantConfig, ctrl: &ControllerSpec, x0: &State, t_final: f64) -> Result<SimTrace> {
    let grid = log_grid(t_final, config.log_rate);
    let mut internal = ctrl.initial_internal();
    let mut trace = SimTrace::with_groups(ctrl, &internal);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut solver = Dopri5::new(config.ode);
    let params = config.params;

    let n_ctrl = ((t_final * config.control_rate) - 1e-9).ceil().max(0.0) as usize;
    let mut x = *x0;
    let mut prev_meas_qd: Option<Vector2<f64>> = None;
    let mut next_sample = 0usize;
    let mut h_hint = None;

    for k in 0..n_ctrl.max(1) {
        let tk = k as f64 / config.control_rate;
        let tk1 = ((k + 1) as f64 / config.control_rate).min(t_final);
        let last = k + 1 >= n_ctrl;

        let noise: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let meas_state = State::new(
            x.th1 + config.noise_std_pos * noise[0],
            x.th2 + config.noise_std_pos * noise[1],
            x.th1d + config.noise_std_vel * noise[2],
            x.th2d + config.noise_std_vel * noise[3],
        );
        let mut meas = Measurement::new(meas_state);

        let command = ctrl.command(tk, &meas, &internal).map_err(controller_error(tk))?;
        if !(command.tau1.is_finite() && command.tau2.is_finite()) {
            return Err(Error::Controller { t: tk, source: Box::new(Error::InvalidInput("non-finite torque".into())) });
        }
        let (u, clamped) = config.clamp(&command);
        for (count, hit) in trace.saturation_events.iter_mut().zip(clamped) {
            *count += usize::from(hit);
        }
        trace.control_updates += 1;

        // Logging instants covered by this hold interval.
        let start = next_sample;
        while next_sample < grid.len() && (grid[next_sample] < tk1 || (last && grid[next_sample] <= t_final)) {
            next_sample += 1;
        }
        let samples = &grid[start..next_sample];

        let mut y = x.to_array();
        let held_internal = internal;
        let stats = solver.integrate(
            |_, s, out| dynamics_rhs(&params, s, &u, out),
            tk,
            &mut y,
            tk1,
            h_hint,
            samples,
            |t, s| trace.push(t, State::new(s[0], s[1], s[2], s[3]), u, ctrl, &held_internal),
        )?;
        trace.ode_steps += stats.accepted;
        if stats.last_h > 0.0 {
            h_hint = Some(stats.last_h);
        }

        if ctrl.needs_acceleration() {
            meas.accel = match config.accel_source {
                AccelSource::Exact => Some(joint_acceleration(&params, &x, &u)?),
                AccelSource::FiniteDifference => {
                    prev_meas_qd.map(|prev| (meas_state.qd() - prev) * config.control_rate)
                }
            };
        }
        prev_meas_qd = Some(meas_state.qd());
        if tk1 > tk && (meas.accel.is_some() || !ctrl.needs_acceleration()) {
            let adv = ctrl.advance(tk, &meas, &internal, &u, tk1 - tk).map_err(controller_error(tk))?;
            internal = adv.next;
            trace.projection_events += adv.projected as usize;
        }
        x = State::new(y[0], y[1], y[2], y[3]);
    }
    Ok(trace)
}

fn run_continuous(config: &PlantConfig, ctrl: &ControllerSpec, x0: &State, t_final: f64) -> Result<SimTrace> {
    let grid = log_grid(t_final, config.log_rate);
    let internal0 = ctrl.initial_internal();
    let n_int = internal0.as_slice().len();
    let params = config.params;
    let mut trace = SimTrace::with_groups(ctrl, &internal0);

    // Control law at an extended state [x; internal].
    let evaluate = |t: f64, y: &[f64]| -> Result<(State, InternalState, JointTorque, [bool; 2])> {
        let x = State::new(y[0], y[1], y[2], y[3]);
        let internal = internal0.with_values(&y[4..]);
        let command = ctrl.command(t, &Measurement::new(x), &internal).map_err(controller_error(t))?;
        let (u, clamped) = config.clamp(&command);
        Ok((x, internal, u, clamped))
    };

    let mut y: Vec<f64> = x0.to_array().iter().chain(internal0.as_slice()).copied().collect();
    let mut solver = Dopri5::new(config.ode);
    let mut log_error: Option<Error> = None;
    let stats = solver.integrate(
        |t, y, out| {
            let (x, internal, u, _) = evaluate(t, y)?;
            dynamics_rhs(&params, y, &u, out)?;
            if n_int > 0 {
                let accel = Vector2::new(out[2], out[3]);
                let meas = Measurement { state: x, accel: Some(accel) };
                ctrl.internal_rate(t, &meas, &internal, &u, &mut out[4..]).map_err(controller_error(t))?;
            }
            Ok(())
        },
        0.0,
        &mut y,
        t_final,
        None,
        &grid,
        |t, y| match evaluate(t, y) {
            Ok((x, internal, u, clamped)) => {
                for (count, hit) in trace.saturation_events.iter_mut().zip(clamped) {
                    *count += usize::from(hit);
                }
                trace.push(t, x, u, ctrl, &internal);
            }
            Err(e) => {
                log_error.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = log_error {
        return Err(e);
    }
    trace.ode_steps = stats.accepted;
    trace.control_updates = trace.len();
    Ok(trace)
}

/// Largest joint-angle gap between two traces sampled on the same grid.
pub fn max_angle_gap(a: &SimTrace, b: &SimTrace) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (x.q() - y.q()).amax())
        .fold(0.0, f64::max)
}

/// Largest state gap between two traces sampled on the same grid.
pub fn max_state_gap(a: &SimTrace, b: &SimTrace) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (x.to_vector() - y.to_vector()).amax())
        .fold(0.0, f64::max)
}

/// `x` as a 4-vector; convenience for callers working with raw vectors.
pub fn state_vector(x: &State) -> Vector4<f64> {
    x.to_vector()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::Gain2x4;
    use crate::dynamics::total_energy;
    use crate::linsys::{diag, linearize, solve_care, DEFAULT_LQR_Q, DEFAULT_LQR_R};

    fn x0() -> State {
        State::from_degrees(30.0, 45.0, 0.0, 0.0)
    }

    fn lqr() -> ControllerSpec {
        let model = linearize(&RobotParams::rrbot(), &State::ZERO).unwrap();
        let sol = solve_care(&model, &diag(&DEFAULT_LQR_Q), &diag(&DEFAULT_LQR_R)).unwrap();
        ControllerSpec::Lqr { k: sol.k.to_2x4().unwrap() }
    }

    #[test]
    fn upright_rest_stays_put() {
        let trace = integrate_passive(&PlantConfig::ideal(RobotParams::rrbot()), &State::ZERO, 2.0).unwrap();
        assert!(trace.states.iter().all(|x| *x == State::ZERO));
    }

    #[test]
    fn passive_energy_is_conserved() {
        let cfg = PlantConfig::ideal(RobotParams::rrbot());
        let trace = integrate_passive(&cfg, &x0(), 10.0).unwrap();
        assert_eq!(trace.len(), 10_001);
        let e0 = total_energy(&cfg.params, &x0());
        let drift = trace
            .states
            .iter()
            .map(|x| (total_energy(&cfg.params, x) - e0).abs() / e0.abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-6, "drift {drift:e}");
    }

    #[test]
    fn truth_mode_dissipates() {
        let cfg = PlantConfig::truth(RobotParams::rrbot());
        let trace = integrate_passive(&cfg, &x0(), 10.0).unwrap();
        let e = |x: &State| total_energy(&cfg.params, x);
        assert!(e(trace.final_state().unwrap()) < e(&x0()));
    }

    #[test]
    fn zero_controller_matches_passive() {
        let cfg = PlantConfig::ideal(RobotParams::rrbot());
        // The passive swing is chaotic: at rtol 1e-8 either run is ~1e-6
        // from a tight-tolerance reference after 1 s.
        let passive = integrate_passive(&cfg, &x0(), 1.0).unwrap();
        let closed = integrate_closed_loop(&cfg, &ControllerSpec::Zero, &x0(), 1.0).unwrap();
        assert_eq!(passive.times, closed.times);
        let gap = max_state_gap(&passive, &closed);
        assert!(gap < 1e-5, "gap {gap:e}");
    }

    #[test]
    fn lqr_stabilizes_and_respects_limits() {
        let cfg = PlantConfig::ideal(RobotParams::rrbot());
        let trace = integrate_closed_loop(&cfg, &lqr(), &x0(), 10.0).unwrap();
        assert!(trace.final_state().unwrap().to_vector().amax() < 0.05);
        assert!(trace.torques.iter().all(|u| u.tau1.abs() <= 20.0 && u.tau2.abs() <= 10.0));
    }

    #[test]
    fn saturation_is_clamped_and_counted() {
        let k = Gain2x4::from_element(500.0);
        let cfg = PlantConfig::ideal(RobotParams::rrbot());
        let trace = integrate_closed_loop(&cfg, &ControllerSpec::StateFeedback { k }, &x0(), 0.2).unwrap();
        assert!(trace.saturation_events[0] > 0 && trace.saturation_events[1] > 0);
        assert!(trace.torques.iter().all(|u| u.tau1.abs() <= 20.0 && u.tau2.abs() <= 10.0));
    }

    #[test]
    fn torque_breakpoints_on_control_grid() {
        let cfg = PlantConfig::ideal(RobotParams::rrbot());
        let trace = integrate_closed_loop(&cfg, &lqr(), &x0(), 1.0).unwrap();
        for i in 1..trace.len() {
            if trace.torques[i] != trace.torques[i - 1] {
                let k = (trace.times[i] * cfg.control_rate).round();
                assert_eq!(trace.times[i], k / cfg.control_rate);
            }
        }
        assert_eq!(trace.control_updates, 100);
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let cfg = PlantConfig::truth(RobotParams::rrbot()).with_seed(42);
        let a = integrate_closed_loop(&cfg, &lqr(), &x0(), 2.0).unwrap();
        let b = integrate_closed_loop(&cfg, &lqr(), &x0(), 2.0).unwrap();
        assert_eq!(a, b);
        let c = integrate_closed_loop(&cfg.clone().with_seed(43), &lqr(), &x0(), 2.0).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn noise_does_not_touch_open_loop_truth() {
        let mut quiet = PlantConfig::truth(RobotParams::rrbot());
        quiet.noise_std_pos = 0.0;
        quiet.noise_std_vel = 0.0;
        let noisy = PlantConfig::truth(RobotParams::rrbot());
        let a = integrate_closed_loop(&quiet, &ControllerSpec::Zero, &x0(), 2.0).unwrap();
        let b = integrate_closed_loop(&noisy, &ControllerSpec::Zero, &x0(), 2.0).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn zero_horizon_gives_single_sample() {
        let cfg = PlantConfig::ideal(RobotParams::rrbot());
        let trace = integrate_closed_loop(&cfg, &lqr(), &x0(), 0.0).unwrap();
        assert_eq!(trace.times, vec![0.0]);
        assert_eq!(trace.states, vec![x0()]);
        let passive = integrate_passive(&cfg, &x0(), 0.0).unwrap();
        assert_eq!(passive.states, vec![x0()]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = PlantConfig::ideal(RobotParams::rrbot());
        assert!(integrate_passive(&cfg, &x0(), -1.0).is_err());
        let mut bad = cfg.clone();
        bad.control_rate = 0.0;
        assert!(integrate_closed_loop(&bad, &lqr(), &x0(), 1.0).is_err());
        let truth = PlantConfig::truth(RobotParams::rrbot()).with_timing(ControlTiming::Continuous);
        assert!(integrate_closed_loop(&truth, &lqr(), &x0(), 1.0).is_err());
    }

    #[test]
    fn grid_appends_off_grid_horizon() {
        assert_eq!(log_grid(0.0025, 1000.0), vec![0.0, 0.001, 0.002, 0.0025]);
        assert_eq!(log_grid(0.002, 1000.0), vec![0.0, 0.001, 0.002]);
    }
}
