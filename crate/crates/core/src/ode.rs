//! Dormand–Prince 5(4) with step-size control and 4th-order dense output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Step sizes below this abort the integration.
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, h_min: 1e-10, max_steps: 5_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Last accepted step, usable as a hint for the next call.
    pub last_h: f64,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th minus embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense output (Hairer's contd5).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Adaptive Dormand–Prince 5(4) integrator for `y' = f(t, y)`.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    opts: OdeOptions,
    k: [Vec<f64>; 7],
    y_new: Vec<f64>,
    y_stage: Vec<f64>,
    err: Vec<f64>,
    cont: [Vec<f64>; 5],
    dense_buf: Vec<f64>,
}

impl Dopri5 {
    pub fn new(opts: OdeOptions) -> Self {
        Self {
            opts,
            k: Default::default(),
            y_new: Vec::new(),
            y_stage: Vec::new(),
            err: Vec::new(),
            cont: Default::default(),
            dense_buf: Vec::new(),
        }
    }

    pub fn options(&self) -> &OdeOptions {
        &self.opts
    }

    fn resize(&mut self, n: usize) {
        for v in self.k.iter_mut().chain(self.cont.iter_mut()) {
            v.resize(n, 0.0);
        }
        self.y_new.resize(n, 0.0);
        self.y_stage.resize(n, 0.0);
        self.err.resize(n, 0.0);
        self.dense_buf.resize(n, 0.0);
    }

    /// Integrate `y` from `t0` to `t1` in place.
    ///
    /// `sample_times` must be sorted and lie in `[t0, t1]`; `on_sample` is
    /// called once for each of them with the dense-output state. `f` may
    /// fail, in which case the error is returned with the offending time.
    #[allow(clippy::too_many_arguments)]
    pub fn integrate<F, S>(
        &mut self,
        mut f: F,
        t0: f64,
        y: &mut [f64],
        t1: f64,
        h_hint: Option<f64>,
        sample_times: &[f64],
        mut on_sample: S,
    ) -> Result<OdeStats>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
        S: FnMut(f64, &[f64]),
    {
        let n = y.len();
        self.resize(n);
        let mut stats = OdeStats::default();
        let mut samples = sample_times.iter().copied().peekable();

        while let Some(&ts) = samples.peek() {
            if ts <= t0 {
                on_sample(ts, y);
                samples.next();
            } else {
                break;
            }
        }
        if t1 <= t0 {
            return Ok(stats);
        }

        let span = t1 - t0;
        let mut t = t0;
        f(t, y, &mut self.k[0])?;
        stats.evaluations += 1;

        let mut h = match h_hint {
            Some(h) if h > 0.0 => h.min(span),
            _ => {
                stats.evaluations += 1;
                self.initial_step(&mut f, t, y, span)?
            }
        };

        loop {
            if stats.accepted + stats.rejected >= self.opts.max_steps {
                return Err(Error::Integration { t, reason: "step budget exhausted".into() });
            }
            let remaining = t1 - t;
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < self.opts.h_min && !last {
                return Err(Error::StepSizeCollapse { t, h });
            }

            self.stages(&mut f, t, y, h)?;
            stats.evaluations += 6;

            let err = self.error_norm(y);
            if !err.is_finite() {
                return Err(Error::Integration { t, reason: "non-finite state".into() });
            }

            if err <= 1.0 {
                let t_new = if last { t1 } else { t + h };
                self.prepare_dense(y, h);
                while let Some(&ts) = samples.peek() {
                    if ts <= t_new {
                        let theta = ((ts - t) / h).clamp(0.0, 1.0);
                        if theta >= 1.0 {
                            on_sample(ts, &self.y_new);
                        } else {
                            self.interpolate(theta);
                            on_sample(ts, &self.dense_buf);
                        }
                        samples.next();
                    } else {
                        break;
                    }
                }
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                t = t_new;
                stats.accepted += 1;
                stats.last_h = h;
                if last {
                    break;
                }
                let fac = (SAFETY * err.max(1e-10).powf(-0.2)).clamp(FAC_MIN, FAC_MAX);
                h *= fac;
            } else {
                stats.rejected += 1;
                let fac = (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
                h *= fac;
                if h < self.opts.h_min {
                    return Err(Error::StepSizeCollapse { t, h });
                }
            }
        }

        for ts in samples {
            on_sample(ts, y);
        }
        Ok(stats)
    }

    fn stages<F>(&mut self, f: &mut F, t: f64, y: &[f64], h: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let ys = &mut self.y_stage;

        for i in 0..n {
            ys[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, ys, k2)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, ys, k3)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, ys, k4)?;
        for i in 0..n {
            ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, ys, k5)?;
        for i in 0..n {
            ys[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, ys, k6)?;
        for i in 0..n {
            self.y_new[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, &self.y_new, k7)?;
        for i in 0..n {
            self.err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        Ok(())
    }

    fn error_norm(&self, y: &[f64]) -> f64 {
        let n = y.len();
        if n == 0 {
            return 0.0;
        }
        let sum: f64 = (0..n)
            .map(|i| {
                let sc = self.opts.atol + self.opts.rtol * y[i].abs().max(self.y_new[i].abs());
                (self.err[i] / sc).powi(2)
            })
            .sum();
        (sum / n as f64).sqrt()
    }

    fn prepare_dense(&mut self, y: &[f64], h: f64) {
        let [k1, _, k3, k4, k5, k6, k7] = &self.k;
        for i in 0..y.len() {
            let ydiff = self.y_new[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            self.cont[0][i] = y[i];
            self.cont[1][i] = ydiff;
            self.cont[2][i] = bspl;
            self.cont[3][i] = ydiff - h * k7[i] - bspl;
            self.cont[4][i] = h
                * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
    }

    fn interpolate(&mut self, theta: f64) {
        let theta1 = 1.0 - theta;
        let [c0, c1, c2, c3, c4] = &self.cont;
        for (i, out) in self.dense_buf.iter_mut().enumerate() {
            *out = c0[i] + theta * (c1[i] + theta1 * (c2[i] + theta * (c3[i] + theta1 * c4[i])));
        }
    }

    fn initial_step<F>(&mut self, f: &mut F, t: f64, y: &[f64], span: f64) -> Result<f64>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        let sc = |i: usize| self.opts.atol + self.opts.rtol * y[i].abs();
        let rms = |v: &dyn Fn(usize) -> f64| -> f64 {
            ((0..n).map(|i| v(i).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt()
        };
        let d0 = rms(&|i| y[i] / sc(i));
        let d1 = rms(&|i| self.k[0][i] / sc(i));
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(span);
        for ((s, yi), k) in self.y_stage.iter_mut().zip(y.iter()).zip(&self.k[0]) {
            *s = yi + h0 * k;
        }
        f(t + h0, &self.y_stage, &mut self.k[1])?;
        let d2 = rms(&|i| (self.k[1][i] - self.k[0][i]) / sc(i)) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(span))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_accuracy() {
        let mut ode = Dopri5::new(OdeOptions::default());
        let times: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.01).collect();
        let mut worst: f64 = 0.0;
        let mut y = [1.0];
        ode.integrate(
            |_, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            &mut y,
            10.0,
            None,
            &times,
            |t, y| worst = worst.max((y[0] - (-t).exp()).abs()),
        )
        .unwrap();
        assert!(worst <= 1e-8, "max error {worst:e}");
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let mut ode = Dopri5::new(OdeOptions::default());
        let times: Vec<f64> = (0..=200).map(|i| i as f64 * 0.05).collect();
        let mut worst: f64 = 0.0;
        let mut y = [1.0, 0.0];
        ode.integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            0.0,
            &mut y,
            10.0,
            None,
            &times,
            |t, y| worst = worst.max((y[0] - t.cos()).abs()).max((y[1] + t.sin()).abs()),
        )
        .unwrap();
        assert!(worst <= 1e-7, "max error {worst:e}");
        assert!((y[0] - 10f64.cos()).abs() < 1e-7);
    }

    #[test]
    fn every_sample_visited_once() {
        let mut ode = Dopri5::new(OdeOptions::default());
        let times = [0.0, 0.1, 0.1, 0.5, 1.0];
        let mut seen = Vec::new();
        let mut y = [0.0];
        ode.integrate(
            |_, _, dy| {
                dy[0] = 1.0;
                Ok(())
            },
            0.0,
            &mut y,
            1.0,
            None,
            &times,
            |t, y| seen.push((t, y[0])),
        )
        .unwrap();
        assert_eq!(seen.len(), times.len());
        for (t, v) in seen {
            assert!((t - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rhs_error_propagates() {
        let mut ode = Dopri5::new(OdeOptions::default());
        let mut y = [1.0];
        let res = ode.integrate(
            |t, _, _| {
                if t > 0.5 {
                    Err(Error::InvalidInput("boom".into()))
                } else {
                    Ok(())
                }
            },
            0.0,
            &mut y,
            1.0,
            Some(0.1),
            &[],
            |_, _| {},
        );
        assert!(res.is_err());
    }

    #[test]
    fn collapse_is_reported() {
        let opts = OdeOptions { h_min: 1e-3, ..Default::default() };
        let mut ode = Dopri5::new(opts);
        let mut y = [1.0];
        // Finite-time blow-up at t = 1.
        let res = ode.integrate(
            |_, y, dy| {
                dy[0] = y[0] * y[0];
                Ok(())
            },
            0.0,
            &mut y,
            2.0,
            None,
            &[],
            |_, _| {},
        );
        assert!(matches!(res, Err(Error::StepSizeCollapse { .. } | Error::Integration { .. })));
    }
}
