//! Scenario execution, report assembly and artifact output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rrbot_core::plant::{integrate_closed_loop, integrate_passive, SimTrace};
use serde::{Deserialize, Serialize};

use crate::criteria::{Companion, CriterionResult, EvalContext, DEFAULT_TOL_POS, DEFAULT_TOL_VEL};
use crate::scenario::{PlantKind, Scenario, ScenarioId};
use crate::{metrics, svg, trace_io, Error, Result};

/// Everything in a report that is computed from traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub criteria: Vec<CriterionResult>,
    /// At the default 0.05 rad / 0.1 rad/s tolerance.
    pub convergence_time: Option<f64>,
    pub max_abs_torque: [f64; 2],
    /// Saturated control updates per joint.
    pub saturation_count: [usize; 2],
}

impl Evaluation {
    pub fn passed(&self) -> bool {
        self.criteria.iter().filter(|c| c.gating).all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Traces of the runs that comparison criteria were measured against.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub companions: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: ScenarioId,
    pub plant: PlantKind,
    pub figure: String,
    pub seed: u64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten)]
    pub evaluation: Evaluation,
    pub artifacts: Artifacts,
}

impl RunReport {
    fn errored(scn: &Scenario, plant: PlantKind, seed: u64, err: &Error) -> Self {
        Self {
            scenario: scn.id(),
            plant,
            figure: scn.figure(plant).to_string(),
            seed,
            passed: false,
            error: Some(err.to_string()),
            evaluation: Evaluation {
                criteria: Vec::new(),
                convergence_time: None,
                max_abs_torque: [0.0; 2],
                saturation_count: [0; 2],
            },
            artifacts: Artifacts::default(),
        }
    }
}

/// Simulate `scn` on `plant`. `seed` overrides the scenario's noise seed.
pub fn simulate(scn: &Scenario, plant: PlantKind, seed: Option<u64>) -> Result<SimTrace> {
    let cfg = scn.plant_config(plant, seed);
    let t_final = scn.file.t_final;
    Ok(match &scn.controller {
        None => integrate_passive(&cfg, &scn.x0, t_final)?,
        Some(ctrl) => integrate_closed_loop(&cfg, ctrl, &scn.x0, t_final)?,
    })
}

/// The companion runs the applicable criteria compare against.
pub fn companions_needed(scn: &Scenario, plant: PlantKind) -> Vec<Companion> {
    let mut out: Vec<Companion> = scn
        .file
        .criteria
        .iter()
        .filter(|c| c.applies_to(plant))
        .filter_map(|c| c.companion())
        .collect();
    out.sort();
    out.dedup();
    out
}

fn simulate_companion(scn: &Scenario, plant: PlantKind, seed: u64, which: Companion) -> Result<SimTrace> {
    match which {
        Companion::Scenario(id) => simulate(&Scenario::builtin(id)?, plant, Some(seed)),
        Companion::Plant(other) => simulate(scn, other, Some(seed)),
    }
}

/// Evaluate every criterion that applies to `plant`. A pure function of the
/// traces and the scenario's plant constants.
pub fn evaluate(
    scn: &Scenario,
    plant: PlantKind,
    trace: &SimTrace,
    companions: &BTreeMap<Companion, SimTrace>,
) -> Evaluation {
    let cfg = scn.plant_config(plant, None);
    let ctx = EvalContext {
        params: &cfg.params,
        control_rate: cfg.control_rate,
        torque_limits: cfg.torque_limits,
        t_final: scn.file.t_final,
        companions,
    };
    Evaluation {
        criteria: scn
            .file
            .criteria
            .iter()
            .filter(|c| c.applies_to(plant))
            .map(|c| c.evaluate(trace, &ctx))
            .collect(),
        convergence_time: metrics::convergence_time(trace, DEFAULT_TOL_POS, DEFAULT_TOL_VEL),
        max_abs_torque: metrics::max_abs_torque(trace),
        saturation_count: metrics::saturation_count(trace, cfg.control_rate, cfg.torque_limits),
    }
}

fn stem(scn: &Scenario, plant: PlantKind) -> String {
    format!("{}_{}", scn.id(), plant)
}

/// Run, evaluate and write the trace CSV, plot SVG and JSON report into
/// `out_dir`. Failures end up in the report rather than as an `Err`, so a
/// suite always yields one report per run.
pub fn run_scenario(scn: &Scenario, plant: PlantKind, seed: Option<u64>, out_dir: &Path) -> RunReport {
    let seed = seed.unwrap_or(scn.file.seed);
    match try_run(scn, plant, seed, out_dir) {
        Ok(report) => report,
        Err(err) => {
            let mut report = RunReport::errored(scn, plant, seed, &err);
            let path = out_dir.join(format!("{}.json", stem(scn, plant)));
            if write_json(&report, &path).is_ok() {
                report.artifacts.report = Some(path);
            }
            report
        }
    }
}

fn try_run(scn: &Scenario, plant: PlantKind, seed: u64, out_dir: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let trace = simulate(scn, plant, Some(seed))?;
    let mut companions = BTreeMap::new();
    let mut artifacts = Artifacts::default();
    for which in companions_needed(scn, plant) {
        let other = simulate_companion(scn, plant, seed, which)?;
        let path = out_dir.join(format!("{}.vs_{}.csv", stem(scn, plant), which.label()));
        trace_io::save_trace(&other, &path)?;
        artifacts.companions.insert(which.label(), path);
        companions.insert(which, other);
    }
    let evaluation = evaluate(scn, plant, &trace, &companions);

    let csv = out_dir.join(format!("{}.csv", stem(scn, plant)));
    trace_io::save_trace(&trace, &csv)?;
    let svg_path = out_dir.join(format!("{}.svg", stem(scn, plant)));
    let title = format!("{} ({} plant), cf. {}", scn.id(), plant, scn.figure(plant));
    let limits = scn.plant_config(plant, None).torque_limits;
    std::fs::write(&svg_path, svg::render(&trace, &title, limits)).map_err(|e| Error::io(&svg_path, e))?;
    let json = out_dir.join(format!("{}.json", stem(scn, plant)));
    artifacts.csv = Some(csv);
    artifacts.svg = Some(svg_path);
    artifacts.report = Some(json.clone());

    let report = RunReport {
        scenario: scn.id(),
        plant,
        figure: scn.figure(plant).to_string(),
        seed,
        passed: evaluation.passed(),
        error: None,
        evaluation,
        artifacts,
    };
    write_json(&report, &json)?;
    Ok(report)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Re-evaluate a finished run from the CSV files it wrote.
pub fn reevaluate(scn: &Scenario, report: &RunReport) -> Result<Evaluation> {
    let csv = report
        .artifacts
        .csv
        .as_ref()
        .ok_or_else(|| Error::Trace("report has no trace artifact".into()))?;
    let trace = trace_io::load_trace(csv)?;
    let mut companions = BTreeMap::new();
    for which in companions_needed(scn, report.plant) {
        let path = report
            .artifacts
            .companions
            .get(&which.label())
            .ok_or_else(|| Error::Trace(format!("report lacks companion trace {}", which.label())))?;
        companions.insert(which, trace_io::load_trace(path)?);
    }
    Ok(evaluate(scn, report.plant, &trace, &companions))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub runs: Vec<RunReport>,
}

/// Run every scenario on each plant in parallel and merge the reports in
/// registry order.
pub fn run_suite(scenarios: &[Scenario], plants: &[PlantKind], seed: Option<u64>, out_dir: &Path) -> Result<SuiteReport> {
    let jobs: Vec<(&Scenario, PlantKind)> =
        scenarios.iter().flat_map(|s| plants.iter().map(move |&p| (s, p))).collect();
    let runs: Vec<RunReport> = jobs.par_iter().map(|(s, p)| run_scenario(s, *p, seed, out_dir)).collect();
    let report = SuiteReport { passed: runs.iter().all(|r| r.passed), runs };
    write_json(&report, &out_dir.join("suite_report.json"))?;
    Ok(report)
}
