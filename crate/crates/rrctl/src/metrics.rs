//! Scalar measurements taken from a simulation trace.

use rrbot_core::dynamics::{total_energy, RobotParams, State};
use rrbot_core::plant::SimTrace;

/// Tracking target at sample `i`: the logged reference if there is one,
/// otherwise the upright equilibrium.
fn target(trace: &SimTrace, i: usize) -> State {
    trace.references.as_ref().map_or(State::ZERO, |r| r[i])
}

fn within(x: &State, target: &State, tol_pos: f64, tol_vel: f64) -> bool {
    (x.q() - target.q()).amax() <= tol_pos && (x.qd() - target.qd()).amax() <= tol_vel
}

/// Earliest logged time from which the state stays within tolerance of the
/// target through the end of the trace.
pub fn convergence_time(trace: &SimTrace, tol_pos: f64, tol_vel: f64) -> Option<f64> {
    let mut first = None;
    for i in (0..trace.len()).rev() {
        if !within(&trace.states[i], &target(trace, i), tol_pos, tol_vel) {
            break;
        }
        first = Some(trace.times[i]);
    }
    first
}

/// Largest joint-angle error against the target at the final sample.
pub fn final_position_error(trace: &SimTrace) -> Option<f64> {
    let i = trace.len().checked_sub(1)?;
    Some((trace.states[i].q() - target(trace, i).q()).amax())
}

/// Root-mean-square of the joint-angle error norm over `[t0, t1]`.
pub fn tracking_rmse(trace: &SimTrace, window: [f64; 2]) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, &t) in trace.times.iter().enumerate() {
        if t >= window[0] && t <= window[1] {
            sum += (trace.states[i].q() - target(trace, i).q()).norm_squared();
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Per-joint total variation of the logged torque over `[t0, t1]`.
pub fn chattering_tv(trace: &SimTrace, window: [f64; 2]) -> [f64; 2] {
    let mut tv = [0.0; 2];
    for i in 1..trace.len() {
        if trace.times[i - 1] >= window[0] && trace.times[i] <= window[1] {
            let (a, b) = (trace.torques[i - 1], trace.torques[i]);
            tv[0] += (b.tau1 - a.tau1).abs();
            tv[1] += (b.tau2 - a.tau2).abs();
        }
    }
    tv
}

/// Largest `|E(t) - E(0)| / |E(0)|` (absolute drift if `E(0) = 0`).
pub fn energy_drift(trace: &SimTrace, params: &RobotParams) -> Option<f64> {
    let e0 = total_energy(params, trace.states.first()?);
    let scale = if e0 == 0.0 { 1.0 } else { e0.abs() };
    Some(trace.states.iter().map(|x| (total_energy(params, x) - e0).abs() / scale).fold(0.0, f64::max))
}

/// Earliest logged time from which the observer estimate stays within
/// `threshold` (infinity norm) of the true state.
pub fn estimate_convergence_time(trace: &SimTrace, threshold: f64) -> Option<f64> {
    let est = trace.estimates.as_ref()?;
    let mut first = None;
    for i in (0..trace.len()).rev() {
        if (est[i].to_vector() - trace.states[i].to_vector()).amax() > threshold {
            break;
        }
        first = Some(trace.times[i]);
    }
    first
}

/// Largest joint-angle difference between two traces on their common
/// samples up to `until`.
pub fn angle_gap(a: &SimTrace, b: &SimTrace, until: f64) -> f64 {
    a.times
        .iter()
        .zip(&b.times)
        .zip(a.states.iter().zip(&b.states))
        .take_while(|((ta, _), _)| **ta <= until)
        .map(|(_, (xa, xb))| (xa.q() - xb.q()).amax())
        .fold(0.0, f64::max)
}

pub fn max_abs_torque(trace: &SimTrace) -> [f64; 2] {
    trace
        .torques
        .iter()
        .fold([0.0_f64; 2], |m, u| [m[0].max(u.tau1.abs()), m[1].max(u.tau2.abs())])
}

/// Control updates whose held torque sits on a limit, per joint.
///
/// Each logged sample belongs to update `floor(t * rate)`; the final sample
/// carries the last update's hold value. Under zero-order hold this equals
/// the plant's own saturation counter.
pub fn saturation_count(trace: &SimTrace, control_rate: f64, limits: [f64; 2]) -> [usize; 2] {
    let Some(&t_end) = trace.times.last() else { return [0, 0] };
    let updates = ((t_end * control_rate - 1e-9).ceil() as usize).max(1);
    let mut hit = vec![[false; 2]; updates];
    for (t, u) in trace.times.iter().zip(&trace.torques) {
        let k = ((t * control_rate + 1e-9).floor() as usize).min(updates - 1);
        hit[k][0] |= u.tau1.abs() == limits[0];
        hit[k][1] |= u.tau2.abs() == limits[1];
    }
    hit.iter()
        .fold([0, 0], |c, h| [c[0] + usize::from(h[0]), c[1] + usize::from(h[1])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rrbot_core::dynamics::JointTorque;

    fn trace(times: &[f64], torques: &[(f64, f64)]) -> SimTrace {
        SimTrace {
            times: times.to_vec(),
            states: vec![State::ZERO; times.len()],
            torques: torques.iter().map(|&(a, b)| JointTorque::new(a, b)).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn trace_at_target_converges_immediately() {
        let tr = trace(&[0.0, 0.5, 1.0], &[(0.0, 0.0); 3]);
        assert_eq!(convergence_time(&tr, 0.05, 0.1), Some(0.0));
    }

    #[test]
    fn trace_never_within_tolerance() {
        let mut tr = trace(&[0.0, 0.5, 1.0], &[(0.0, 0.0); 3]);
        tr.states = vec![State::new(1.0, 0.0, 0.0, 0.0); 3];
        assert_eq!(convergence_time(&tr, 0.05, 0.1), None);
        assert_eq!(final_position_error(&tr), Some(1.0));
    }

    #[test]
    fn convergence_must_be_sustained() {
        let mut tr = trace(&[0.0, 1.0, 2.0, 3.0], &[(0.0, 0.0); 4]);
        tr.states[2] = State::new(0.0, 0.0, 0.5, 0.0);
        assert_eq!(convergence_time(&tr, 0.05, 0.1), Some(3.0));
    }

    #[test]
    fn constant_torque_has_no_variation() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let tr = trace(&times, &vec![(3.0, -2.0); 100]);
        assert_eq!(chattering_tv(&tr, [0.0, 10.0]), [0.0, 0.0]);
    }

    #[test]
    fn square_wave_variation() {
        // n switches of amplitude a between +a and -a: 2 a n.
        let a = 1.5;
        let times: Vec<f64> = (0..40).map(|i| i as f64 * 0.25).collect();
        let torques: Vec<_> = (0..40).map(|i| if (i / 4) % 2 == 0 { (a, -a) } else { (-a, a) }).collect();
        let tr = trace(&times, &torques);
        assert_eq!(chattering_tv(&tr, [0.0, 10.0]), [2.0 * a * 9.0, 2.0 * a * 9.0]);
    }

    #[test]
    fn saturation_counts_updates_not_samples() {
        // 10 Hz updates logged at 100 Hz; updates 0 and 3 saturate joint 1.
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.01).collect();
        let torques: Vec<_> = times
            .iter()
            .map(|t| {
                let k = ((t * 10.0 + 1e-9).floor() as usize).min(3);
                if k == 0 || k == 3 { (20.0, 1.0) } else { (5.0, 1.0) }
            })
            .collect();
        assert_eq!(saturation_count(&trace(&times, &torques), 10.0, [20.0, 10.0]), [2, 0]);
    }
}
