//! Pass/fail criteria and their evaluation on a trace.

use std::collections::BTreeMap;

use rrbot_core::dynamics::RobotParams;
use rrbot_core::plant::SimTrace;
use serde::{Deserialize, Serialize};

use crate::metrics;
use crate::scenario::{PlantKind, ScenarioId};

pub const DEFAULT_TOL_POS: f64 = 0.05;
pub const DEFAULT_TOL_VEL: f64 = 0.1;

fn default_tol_pos() -> f64 {
    DEFAULT_TOL_POS
}

fn default_tol_vel() -> f64 {
    DEFAULT_TOL_VEL
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriterionKind {
    /// Tracking error within tolerance from some time `<= deadline` on.
    ConvergeBy {
        deadline: f64,
        #[serde(default = "default_tol_pos")]
        tol_pos: f64,
        #[serde(default = "default_tol_vel")]
        tol_vel: f64,
    },
    /// Convergence time within `band` (relative) of `target`.
    ConvergeNear { target: f64, band: f64 },
    /// Applied torques never reach the limits.
    TorqueBound,
    TrackingRmseBelow { window: [f64; 2], threshold: f64 },
    /// No convergence and a final angle error above `final_error`.
    MustFailConverge {
        #[serde(default = "default_tol_pos")]
        tol_pos: f64,
        #[serde(default = "default_tol_vel")]
        tol_vel: f64,
        final_error: f64,
    },
    /// Summed torque variation over the window below `ratio` times that of
    /// scenario `against` on the same plant and seed.
    ChatteringTvBelow { against: ScenarioId, window: [f64; 2], ratio: f64 },
    EstimateConverge { threshold: f64, deadline: f64 },
    EnergyDriftBelow { threshold: f64 },
    /// Joint-angle gap to the same scenario on plant `against`.
    AngleGapAbove { against: PlantKind, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    #[serde(flatten)]
    pub kind: CriterionKind,
    /// Restrict the criterion to one plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantKind>,
    /// Report-only criteria do not affect the verdict.
    #[serde(default = "yes")]
    pub gating: bool,
}

/// A run a criterion compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Companion {
    Scenario(ScenarioId),
    Plant(PlantKind),
}

impl Companion {
    pub fn label(&self) -> String {
        match self {
            Companion::Scenario(id) => id.to_string(),
            Companion::Plant(p) => format!("plant_{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    pub gating: bool,
    pub passed: bool,
    pub measured: Option<f64>,
    pub threshold: f64,
    pub detail: String,
}

/// What evaluation needs besides the trace itself.
pub struct EvalContext<'a> {
    pub params: &'a RobotParams,
    pub control_rate: f64,
    pub torque_limits: [f64; 2],
    pub t_final: f64,
    pub companions: &'a BTreeMap<Companion, SimTrace>,
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self.kind {
            CriterionKind::ConvergeBy { .. } => "converge_by",
            CriterionKind::ConvergeNear { .. } => "converge_near",
            CriterionKind::TorqueBound => "torque_bound",
            CriterionKind::TrackingRmseBelow { .. } => "tracking_rmse_below",
            CriterionKind::MustFailConverge { .. } => "must_fail_converge",
            CriterionKind::ChatteringTvBelow { .. } => "chattering_tv_below",
            CriterionKind::EstimateConverge { .. } => "estimate_converge",
            CriterionKind::EnergyDriftBelow { .. } => "energy_drift_below",
            CriterionKind::AngleGapAbove { .. } => "angle_gap_above",
        }
    }

    pub fn applies_to(&self, plant: PlantKind) -> bool {
        self.plant.is_none_or(|p| p == plant)
    }

    pub fn companion(&self) -> Option<Companion> {
        match self.kind {
            CriterionKind::ChatteringTvBelow { against, .. } => Some(Companion::Scenario(against)),
            CriterionKind::AngleGapAbove { against, .. } => Some(Companion::Plant(against)),
            _ => None,
        }
    }

    pub fn validate(&self, t_final: f64) -> Result<(), String> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("{}: {what} must be positive", self.name()))
            }
        };
        let deadline = |d: f64| {
            positive(d, "deadline")?;
            if d > t_final {
                return Err(format!("{}: deadline {d} s beyond t_final {t_final} s", self.name()));
            }
            Ok(())
        };
        let window = |w: [f64; 2]| {
            if !(w[0] >= 0.0 && w[0] < w[1] && w[1] <= t_final) {
                return Err(format!("{}: window {w:?} not inside [0, {t_final}]", self.name()));
            }
            Ok(())
        };
        match self.kind {
            CriterionKind::ConvergeBy { deadline: d, tol_pos, tol_vel } => {
                deadline(d)?;
                positive(tol_pos, "tol_pos")?;
                positive(tol_vel, "tol_vel")
            }
            CriterionKind::ConvergeNear { target, band } => {
                positive(target, "target")?;
                positive(band, "band")
            }
            CriterionKind::TorqueBound => Ok(()),
            CriterionKind::TrackingRmseBelow { window: w, threshold } => {
                window(w)?;
                positive(threshold, "threshold")
            }
            CriterionKind::MustFailConverge { tol_pos, tol_vel, final_error } => {
                positive(tol_pos, "tol_pos")?;
                positive(tol_vel, "tol_vel")?;
                positive(final_error, "final_error")
            }
            CriterionKind::ChatteringTvBelow { window: w, ratio, .. } => {
                window(w)?;
                positive(ratio, "ratio")
            }
            CriterionKind::EstimateConverge { threshold, deadline: d } => {
                deadline(d)?;
                positive(threshold, "threshold")
            }
            CriterionKind::EnergyDriftBelow { threshold } | CriterionKind::AngleGapAbove { threshold, .. } => {
                positive(threshold, "threshold")
            }
        }
    }

    /// Evaluate on `trace`. Only the trace, the plant constants in `ctx`
    /// and any companion traces are consulted.
    pub fn evaluate(&self, trace: &SimTrace, ctx: &EvalContext<'_>) -> CriterionResult {
        let (passed, measured, threshold, detail) = match self.kind {
            CriterionKind::ConvergeBy { deadline, tol_pos, tol_vel } => {
                let t = metrics::convergence_time(trace, tol_pos, tol_vel);
                let detail = match t {
                    Some(t) => format!("converged at {t:.3} s (deadline {deadline} s)"),
                    None => "never converged".to_string(),
                };
                (t.is_some_and(|t| t <= deadline), t, deadline, detail)
            }
            CriterionKind::ConvergeNear { target, band } => {
                let t = metrics::convergence_time(trace, DEFAULT_TOL_POS, DEFAULT_TOL_VEL);
                let ok = t.is_some_and(|t| (t - target).abs() <= band * target);
                let detail = format!("target {target} s ± {:.0}%", band * 100.0);
                (ok, t, target, detail)
            }
            CriterionKind::TorqueBound => {
                let peak = metrics::max_abs_torque(trace);
                let sat = metrics::saturation_count(trace, ctx.control_rate, ctx.torque_limits);
                let [l1, l2] = ctx.torque_limits;
                let use_ratio = (peak[0] / l1).max(peak[1] / l2);
                let ok = peak[0] < l1 && peak[1] < l2 && sat == [0, 0];
                let detail = format!(
                    "peak |tau| ({:.3}, {:.3}) N m of ({l1}, {l2}); saturated updates {sat:?}",
                    peak[0], peak[1]
                );
                (ok, Some(use_ratio), 1.0, detail)
            }
            CriterionKind::TrackingRmseBelow { window, threshold } => {
                let rmse = metrics::tracking_rmse(trace, window);
                let detail = format!("angle-error rmse over {window:?} s");
                (rmse.is_some_and(|r| r < threshold), rmse, threshold, detail)
            }
            CriterionKind::MustFailConverge { tol_pos, tol_vel, final_error } => {
                let t = metrics::convergence_time(trace, tol_pos, tol_vel);
                let err = metrics::final_position_error(trace);
                let ok = t.is_none() && err.is_some_and(|e| e > final_error);
                let detail = match t {
                    Some(t) => format!("unexpectedly converged at {t:.3} s"),
                    None => "no convergence; final angle error measured".to_string(),
                };
                (ok, err, final_error, detail)
            }
            CriterionKind::ChatteringTvBelow { against, window, ratio } => {
                match ctx.companions.get(&Companion::Scenario(against)) {
                    None => (false, None, ratio, format!("missing companion run {against}")),
                    Some(other) => {
                        let tv = metrics::chattering_tv(trace, window);
                        let base = metrics::chattering_tv(other, window);
                        let r = (tv[0] + tv[1]) / (base[0] + base[1]);
                        let detail = format!(
                            "TV ({:.3}, {:.3}) vs {against} ({:.3}, {:.3}) N m over {window:?} s",
                            tv[0], tv[1], base[0], base[1]
                        );
                        (r < ratio, Some(r), ratio, detail)
                    }
                }
            }
            CriterionKind::EstimateConverge { threshold, deadline } => {
                let t = metrics::estimate_convergence_time(trace, threshold);
                let detail = match (&trace.estimates, t) {
                    (None, _) => "trace has no estimates".to_string(),
                    (_, Some(t)) => format!("estimate within {threshold} from {t:.3} s (deadline {deadline} s)"),
                    (_, None) => format!("estimate never settles within {threshold}"),
                };
                (t.is_some_and(|t| t <= deadline), t, deadline, detail)
            }
            CriterionKind::EnergyDriftBelow { threshold } => {
                let d = metrics::energy_drift(trace, ctx.params);
                (d.is_some_and(|d| d <= threshold), d, threshold, "max relative energy drift".to_string())
            }
            CriterionKind::AngleGapAbove { against, threshold } => {
                match ctx.companions.get(&Companion::Plant(against)) {
                    None => (false, None, threshold, format!("missing companion run on {against} plant")),
                    Some(other) => {
                        let gap = metrics::angle_gap(trace, other, ctx.t_final);
                        (gap > threshold, Some(gap), threshold, format!("max joint-angle gap to {against} run"))
                    }
                }
            }
        };
        CriterionResult {
            name: self.name().to_string(),
            gating: self.gating,
            passed,
            measured,
            threshold,
            detail,
        }
    }
}
