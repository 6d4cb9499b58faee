//! Scenario definitions: TOML schema, the built-in registry and the
//! translation into plant and controller specs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix4};
use rrbot_core::controllers::{AdaptiveSpec, ControllerSpec, Matrix5, RhoBound, RhoSchedule, RobustSpec};
use rrbot_core::dynamics::{lumped_params, RobotParams, State};
use rrbot_core::linsys::{
    design_observer, diag, linearize, place_poles, real_poles, solve_care, solve_lyapunov, LinearModel,
};
use rrbot_core::plant::PlantConfig;
use rrbot_core::trajectory::{plan_cubic, CubicTraj};
use serde::{Deserialize, Serialize};

use crate::criteria::Criterion;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    A1Passive,
    A2Sfb,
    A2Lqr,
    A3Output,
    A4Fl,
    A5NominalBaseline,
    A5Robust,
    A5RobustBl,
    A6NoAdapt,
    A6Adaptive,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 10] = [
        ScenarioId::A1Passive,
        ScenarioId::A2Sfb,
        ScenarioId::A2Lqr,
        ScenarioId::A3Output,
        ScenarioId::A4Fl,
        ScenarioId::A5NominalBaseline,
        ScenarioId::A5Robust,
        ScenarioId::A5RobustBl,
        ScenarioId::A6NoAdapt,
        ScenarioId::A6Adaptive,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::A1Passive => "a1_passive",
            ScenarioId::A2Sfb => "a2_sfb",
            ScenarioId::A2Lqr => "a2_lqr",
            ScenarioId::A3Output => "a3_output",
            ScenarioId::A4Fl => "a4_fl",
            ScenarioId::A5NominalBaseline => "a5_nominal_baseline",
            ScenarioId::A5Robust => "a5_robust",
            ScenarioId::A5RobustBl => "a5_robust_bl",
            ScenarioId::A6NoAdapt => "a6_no_adapt",
            ScenarioId::A6Adaptive => "a6_adaptive",
        }
    }

    /// Controller kind this experiment must use (`None` for open loop).
    pub fn required_controller(&self) -> Option<&'static str> {
        match self {
            ScenarioId::A1Passive => None,
            ScenarioId::A2Sfb => Some("state_feedback"),
            ScenarioId::A2Lqr => Some("lqr"),
            ScenarioId::A3Output => Some("output_feedback"),
            ScenarioId::A4Fl | ScenarioId::A5NominalBaseline => Some("feedback_lin"),
            ScenarioId::A5Robust | ScenarioId::A5RobustBl => Some("robust_id"),
            ScenarioId::A6NoAdapt | ScenarioId::A6Adaptive => Some("adaptive_id"),
        }
    }

    fn builtin_source(&self) -> &'static str {
        match self {
            ScenarioId::A1Passive => include_str!("../scenarios/a1_passive.toml"),
            ScenarioId::A2Sfb => include_str!("../scenarios/a2_sfb.toml"),
            ScenarioId::A2Lqr => include_str!("../scenarios/a2_lqr.toml"),
            ScenarioId::A3Output => include_str!("../scenarios/a3_output.toml"),
            ScenarioId::A4Fl => include_str!("../scenarios/a4_fl.toml"),
            ScenarioId::A5NominalBaseline => include_str!("../scenarios/a5_nominal_baseline.toml"),
            ScenarioId::A5Robust => include_str!("../scenarios/a5_robust.toml"),
            ScenarioId::A5RobustBl => include_str!("../scenarios/a5_robust_bl.toml"),
            ScenarioId::A6NoAdapt => include_str!("../scenarios/a6_no_adapt.toml"),
            ScenarioId::A6Adaptive => include_str!("../scenarios/a6_adaptive.toml"),
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Ideal,
    Truth,
}

impl PlantKind {
    pub const BOTH: [PlantKind; 2] = [PlantKind::Ideal, PlantKind::Truth];

    pub fn as_str(&self) -> &'static str {
        match self {
            PlantKind::Ideal => "ideal",
            PlantKind::Truth => "truth",
        }
    }
}

impl fmt::Display for PlantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(PlantKind::Ideal),
            "truth" => Ok(PlantKind::Truth),
            _ => Err(Error::Config(format!("unknown plant '{s}' (expected ideal or truth)"))),
        }
    }
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub id: ScenarioId,
    pub description: String,
    pub figure: Figures,
    #[serde(default = "default_plant")]
    pub plant: PlantKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub t_final: f64,
    /// Initial state in degrees and degrees per second.
    pub x0_deg: [f64; 4],
    #[serde(default)]
    pub plant_overrides: PlantOverrides,
    #[serde(default)]
    pub trajectory: Option<TrajectoryConfig>,
    #[serde(default)]
    pub controller: Option<ControllerConfig>,
    #[serde(default)]
    pub criteria: Vec<Criterion>,
}

fn default_plant() -> PlantKind {
    PlantKind::Ideal
}

fn default_seed() -> u64 {
    1
}

/// Figure mirrored by each plant's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figures {
    pub ideal: String,
    pub truth: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantOverrides {
    pub control_rate: Option<f64>,
    pub log_rate: Option<f64>,
    pub torque_limits: Option<[f64; 2]>,
    pub friction: Option<f64>,
    pub noise_std_pos: Option<f64>,
    pub noise_std_vel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub q0_deg: [f64; 2],
    pub qf_deg: [f64; 2],
    pub duration: f64,
}

impl TrajectoryConfig {
    pub fn build(&self) -> Result<CubicTraj> {
        let v = |d: [f64; 2]| nalgebra::Vector2::new(d[0].to_radians(), d[1].to_radians());
        let zero = nalgebra::Vector2::zeros();
        Ok(plan_cubic(v(self.q0_deg), v(self.qf_deg), zero, zero, self.duration)?)
    }
}

/// Initial observer estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EstimateInit {
    /// `"measured_angles"`: measured joint angles, zero rates.
    Named(String),
    /// Explicit state in degrees and degrees per second.
    Degrees([f64; 4]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    StateFeedback {
        poles: Vec<f64>,
        placement_seed: u64,
    },
    Lqr {
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
    },
    OutputFeedback {
        poles: Vec<f64>,
        observer_poles: Vec<f64>,
        placement_seed: u64,
        xhat0: EstimateInit,
    },
    FeedbackLin {
        poles: Vec<f64>,
        placement_seed: u64,
        /// Scale applied to every mass and inertia of the model the law uses.
        model_scale: f64,
    },
    RobustId {
        poles: Vec<f64>,
        placement_seed: u64,
        model_scale: f64,
        lyapunov_q: f64,
        rho: RhoConfig,
        phi_bl: Option<f64>,
    },
    AdaptiveId {
        poles: Vec<f64>,
        placement_seed: u64,
        lyapunov_q: f64,
        gamma: [f64; 5],
        alpha_hat0_scale: f64,
        adapt: bool,
        projection: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoConfig {
    pub c0: f64,
    pub c1: f64,
    pub schedule_step: Option<f64>,
    #[serde(default)]
    pub schedule: Vec<f64>,
}

impl RhoConfig {
    pub fn bound(&self) -> RhoBound {
        let schedule = self
            .schedule_step
            .filter(|_| !self.schedule.is_empty())
            .map(|step| RhoSchedule { step, values: self.schedule.clone() });
        RhoBound { c0: self.c0, c1: self.c1, schedule }
    }
}

// ---------------------------------------------------------------------------
// Resolved scenario

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub x0: State,
    pub controller: Option<ControllerSpec>,
}

impl Scenario {
    pub fn builtin(id: ScenarioId) -> Result<Self> {
        Self::from_toml(id.builtin_source())
    }

    pub fn all_builtin() -> Result<Vec<Self>> {
        ScenarioId::ALL.into_iter().map(Self::builtin).collect()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        if !(file.t_final > 0.0 && file.t_final.is_finite()) {
            return Err(Error::Config(format!("{}: t_final must be positive", file.id)));
        }
        for c in &file.criteria {
            c.validate(file.t_final).map_err(|e| Error::Config(format!("{}: {e}", file.id)))?;
        }
        let [a, b, c, d] = file.x0_deg;
        let x0 = State::from_degrees(a, b, c, d);
        let controller = match &file.controller {
            Some(cfg) => Some(build_controller(cfg, file.trajectory.as_ref(), &x0)?),
            None => None,
        };
        let kind = controller.as_ref().map(|c| c.kind());
        if kind != file.id.required_controller() {
            return Err(Error::Config(format!(
                "{} requires controller {:?}, got {:?}",
                file.id,
                file.id.required_controller(),
                kind
            )));
        }
        Ok(Self { file, x0, controller })
    }

    pub fn id(&self) -> ScenarioId {
        self.file.id
    }

    pub fn figure(&self, plant: PlantKind) -> &str {
        match plant {
            PlantKind::Ideal => &self.file.figure.ideal,
            PlantKind::Truth => &self.file.figure.truth,
        }
    }

    /// Plant configuration for `plant`, seeded with `seed` (or the file's).
    pub fn plant_config(&self, plant: PlantKind, seed: Option<u64>) -> PlantConfig {
        let params = RobotParams::rrbot();
        let o = &self.file.plant_overrides;
        let mut cfg = match plant {
            PlantKind::Ideal => PlantConfig::ideal(params),
            PlantKind::Truth => {
                let b = o.friction.unwrap_or(rrbot_core::plant::TRUTH_FRICTION);
                let mut cfg = PlantConfig::truth(params.with_friction(b, b));
                cfg.noise_std_pos = o.noise_std_pos.unwrap_or(cfg.noise_std_pos);
                cfg.noise_std_vel = o.noise_std_vel.unwrap_or(cfg.noise_std_vel);
                cfg
            }
        };
        cfg.control_rate = o.control_rate.unwrap_or(cfg.control_rate);
        cfg.log_rate = o.log_rate.unwrap_or(cfg.log_rate);
        cfg.torque_limits = o.torque_limits.unwrap_or(cfg.torque_limits);
        cfg.with_seed(seed.unwrap_or(self.file.seed))
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn tracking_gain(poles: &[f64], seed: u64) -> Result<rrbot_core::controllers::Gain2x4> {
    let di = LinearModel::double_integrator(2);
    Ok(place_poles(&di, &real_poles(poles), seed)?.to_2x4()?)
}

fn tracking_lyapunov(k: &rrbot_core::controllers::Gain2x4, q_scale: f64) -> Result<Matrix4<f64>> {
    let di = LinearModel::double_integrator(2);
    let kd = DMatrix::from_column_slice(2, 4, k.as_slice());
    let p = solve_lyapunov(&(&di.a - &di.b * kd), &(DMatrix::identity(4, 4) * q_scale))?;
    Ok(p.fixed_view::<4, 4>(0, 0).into_owned())
}

fn trajectory(cfg: Option<&TrajectoryConfig>) -> Result<CubicTraj> {
    cfg.ok_or_else(|| Error::Config("tracking controllers need a [trajectory] table".into()))?.build()
}

fn build_controller(cfg: &ControllerConfig, traj: Option<&TrajectoryConfig>, x0: &State) -> Result<ControllerSpec> {
    let truth = RobotParams::rrbot();
    let upright = || linearize(&truth, &State::ZERO);
    Ok(match cfg {
        ControllerConfig::StateFeedback { poles, placement_seed } => {
            let k = place_poles(&upright()?, &real_poles(poles), *placement_seed)?;
            ControllerSpec::StateFeedback { k: k.to_2x4()? }
        }
        ControllerConfig::Lqr { q, r } => {
            let sol = solve_care(&upright()?, &matrix(q, "q")?, &matrix(r, "r")?)?;
            ControllerSpec::Lqr { k: sol.k.to_2x4()? }
        }
        ControllerConfig::OutputFeedback { poles, observer_poles, placement_seed, xhat0 } => {
            let model = upright()?;
            let k = place_poles(&model, &real_poles(poles), *placement_seed)?;
            let l = design_observer(&model, &real_poles(observer_poles), *placement_seed)?;
            let xhat0 = match xhat0 {
                EstimateInit::Named(name) if name == "measured_angles" => State::new(x0.th1, x0.th2, 0.0, 0.0),
                EstimateInit::Named(name) => {
                    return Err(Error::Config(format!("unknown xhat0 '{name}' (expected measured_angles)")))
                }
                EstimateInit::Degrees([a, b, c, d]) => State::from_degrees(*a, *b, *c, *d),
            };
            ControllerSpec::output_feedback(&k, &l, &model, xhat0)?
        }
        ControllerConfig::FeedbackLin { poles, placement_seed, model_scale } => ControllerSpec::FeedbackLin {
            k: tracking_gain(poles, *placement_seed)?,
            traj: trajectory(traj)?,
            params_used: truth.scale_mass_inertia(*model_scale),
        },
        ControllerConfig::RobustId { poles, placement_seed, model_scale, lyapunov_q, rho, phi_bl } => {
            let k = tracking_gain(poles, *placement_seed)?;
            ControllerSpec::RobustId(RobustSpec {
                k,
                p: tracking_lyapunov(&k, *lyapunov_q)?,
                rho: rho.bound(),
                phi_bl: *phi_bl,
                traj: trajectory(traj)?,
                nominal_params: truth.scale_mass_inertia(*model_scale),
            })
        }
        ControllerConfig::AdaptiveId {
            poles,
            placement_seed,
            lyapunov_q,
            gamma,
            alpha_hat0_scale,
            adapt,
            projection,
        } => {
            let k = tracking_gain(poles, *placement_seed)?;
            let gamma: Matrix5 = diag(gamma).fixed_view::<5, 5>(0, 0).into_owned();
            ControllerSpec::AdaptiveId(AdaptiveSpec {
                k,
                p: tracking_lyapunov(&k, *lyapunov_q)?,
                gamma,
                alpha_hat0: lumped_params(&truth).scaled(*alpha_hat0_scale),
                traj: trajectory(traj)?,
                adapt: *adapt,
                projection: (projection[0], projection[1]),
            })
        }
    })
}
