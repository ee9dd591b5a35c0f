//! Running scenarios: integration, invariant checks, and file output.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::scenario::{Algorithm, Scenario};
use crate::analysis::{
    self, envelope_excess, fit_rate, max_increase, AnalysisError, CertificateConstants, LyapunovContext,
    LyapunovObserver, LyapunovSample, LyapunovWeights, ProblemData, RateFit,
};
use crate::cost::{minimizer_oracle, CostError, MinimizerMethod};
use crate::dynamics::{
    equilibrium_residual, equilibrium_state, simulate_continuous, ConservationMonitor, ContinuousVariant,
    DynamicsError, ErrorObserver, Observer, SwarmState, Trajectory, CONSERVATION_TOL,
};
use crate::event::{zeno_report, EventError, EventRun, EventSimulation, ZenoReport, EVENT_CHECK_TOL};
use crate::exec::{self, Execution};
use crate::graph::center_rows;

/// Overrides the output directory of the CLI.
pub const OUT_DIR_ENV: &str = "SWARMOPT_OUT_DIR";

pub const V1_MONOTONE_TOL: f64 = 1e-8;
pub const ENVELOPE_TOL: f64 = 1e-6;
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("cannot compare: {0}")]
    Mismatch(String),
    #[error("{error}; last state written to {dump}")]
    Diverged { error: DynamicsError, dump: String },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: value >= threshold,
            value,
            threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminalMetrics {
    /// `maxᵢ ‖xᵢ(T) − x*‖`.
    pub error_max: f64,
    /// `‖x(T) − 1 ⊗ x*‖`.
    pub error_stacked: f64,
    /// `‖(K_n ⊗ I)x(T)‖`.
    pub consensus_residual: f64,
    /// `‖Σᵢ ∇fᵢ(mean of xᵢ(T))‖`.
    pub gradient_sum_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct OutputFiles {
    pub trajectory: Option<String>,
    pub constants: Option<String>,
    pub events: Option<String>,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub algorithm: &'static str,
    pub seed: Option<u64>,
    pub n: usize,
    pub p: usize,
    pub step: f64,
    pub horizon: f64,
    pub xstar: Vec<f64>,
    pub minimizer_unique: bool,
    pub minimizer_method: &'static str,
    pub terminal: TerminalMetrics,
    pub rate_fit: Option<RateFit>,
    pub rate_bound: Option<f64>,
    pub constants_label: Option<&'static str>,
    pub triggers: Option<ZenoReport>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub files: OutputFiles,
    pub passed: bool,
}

impl RunReport {
    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Everything a run produced, kept in memory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub trajectory: Trajectory,
    pub lyapunov: Vec<LyapunovSample>,
    pub constants: Option<CertificateConstants>,
    pub event: Option<EventRun>,
}

impl RunOutcome {
    pub fn error_series(&self) -> Vec<f64> {
        self.trajectory
            .diagnostics
            .column("error_max")
            .expect("error observer is always attached")
    }
}

/// Runs a scenario without writing files.
pub fn execute(scenario: &Scenario) -> Result<RunOutcome, RunError> {
    let minimizer = minimizer_oracle(&scenario.objective)?;
    let xstar = minimizer.point.clone();
    let diag = scenario.config.diagnostics;
    let mut notes = Vec::new();
    if !minimizer.unique {
        notes.push("minimizer is not unique; errors are measured against the minimum-norm minimizer".into());
    }

    let wants_analysis = diag.lyapunov || diag.constants || diag.rate_fit;
    let problem = if wants_analysis && scenario.n() > 1 {
        match ProblemData::new(
            &scenario.graph,
            &scenario.objective,
            scenario.gains,
            Execution::Sequential,
        ) {
            Ok(p) => Some(p),
            Err(e) => {
                notes.push(format!("analysis skipped: {e}"));
                None
            }
        }
    } else {
        None
    };
    let lyapunov_applies = scenario.algorithm != Algorithm::Alternative;
    let context = match &problem {
        Some(p) if lyapunov_applies => {
            Some(LyapunovContext::new(p, scenario.eps0, scenario.eps).map_err(RunError::Analysis)?)
        }
        _ => None,
    };
    let constants = match (&problem, &context) {
        (Some(p), Some(ctx)) => {
            let v1_0 = ctx.v1(&scenario.initial);
            let trigger = scenario.trigger.as_ref().map(|l| &l.params);
            match analysis::compute_all(p, scenario.eps0, scenario.eps, v1_0, trigger) {
                Ok(c) => Some(c),
                Err(AnalysisError::NotStronglyConvex(mf)) => {
                    notes.push(format!(
                        "m_f = {mf:e} is not positive: only asymptotic convergence applies, no rate bound"
                    ));
                    None
                }
                Err(e) => {
                    notes.push(format!("constants unavailable: {e}"));
                    None
                }
            }
        }
        _ => None,
    };

    let mut conservation = ConservationMonitor::default();
    let mut errors = ErrorObserver { xstar: xstar.clone() };
    let event_mode = scenario.algorithm == Algorithm::Event;
    let mut lyap = context.filter(|_| diag.lyapunov).map(|ctx| {
        let weights = constants
            .as_ref()
            .map(LyapunovWeights::from_constants)
            .unwrap_or_default();
        LyapunovObserver::new(ctx.with_weights(weights), event_mode)
    });
    let (trajectory, event) = {
        let mut observers: Vec<&mut dyn Observer> = vec![&mut conservation, &mut errors];
        if let Some(l) = lyap.as_mut() {
            observers.push(l);
        }
        match scenario.algorithm {
            Algorithm::Continuous | Algorithm::Alternative => {
                let variant = if scenario.algorithm == Algorithm::Continuous {
                    ContinuousVariant::Primary
                } else {
                    ContinuousVariant::Alternative
                };
                let t = simulate_continuous(
                    variant,
                    &scenario.graph,
                    &scenario.objective,
                    &scenario.gains,
                    &scenario.initial,
                    scenario.step,
                    scenario.horizon,
                    &mut observers,
                )?;
                (t, None)
            }
            Algorithm::Event => {
                let law = scenario.trigger.as_ref().expect("event scenarios carry a trigger law");
                let sim = EventSimulation {
                    graph: &scenario.graph,
                    objective: &scenario.objective,
                    gains: &scenario.gains,
                    law,
                };
                let run = sim.run(&scenario.initial, scenario.step, scenario.horizon, &mut observers)?;
                (run.trajectory.clone(), Some(run))
            }
        }
    };

    let mut checks = vec![Check::at_most(
        "conservation",
        conservation.worst_scaled_drift,
        CONSERVATION_TOL,
    )];
    let lyapunov = lyap.map(|l| l.samples).unwrap_or_default();
    if !lyapunov.is_empty() {
        let eq = equilibrium_state(&scenario.objective, &scenario.gains, &xstar);
        let r = equilibrium_residual(&eq, &scenario.graph, &scenario.objective, &scenario.gains);
        checks.push(Check::at_most("equilibrium_residual", r.max(), EQUILIBRIUM_TOL));
        let times: Vec<f64> = lyapunov.iter().map(|s| s.t).collect();
        if scenario.algorithm == Algorithm::Continuous {
            let v1: Vec<f64> = lyapunov.iter().map(|s| s.v1).collect();
            checks.push(Check::at_most("v1_monotone", max_increase(&v1), V1_MONOTONE_TOL));
        }
        if let Some(c) = constants.as_ref().and_then(|c| c.continuous.as_ref()) {
            if scenario.algorithm == Algorithm::Continuous {
                let v2: Vec<f64> = lyapunov.iter().filter_map(|s| s.v2).collect();
                checks.push(Check::at_most(
                    "v2_envelope",
                    envelope_excess(&times, &v2, c.eps3 / c.eps4),
                    ENVELOPE_TOL,
                ));
            }
        }
        if let Some(e) = constants.as_ref().and_then(|c| c.event.as_ref()) {
            let v3: Vec<f64> = lyapunov.iter().filter_map(|s| s.v3).collect();
            if v3.len() == times.len() {
                checks.push(Check::at_most(
                    "v3_envelope",
                    envelope_excess(&times, &v3, e.eps9 / e.eps10),
                    ENVELOPE_TOL,
                ));
            }
        }
    }

    let times = trajectory.times();
    let stacked = trajectory
        .diagnostics
        .column("error_stacked")
        .expect("error observer attached");
    let mut rate_fit = None;
    let rate_bound = constants.as_ref().and_then(|c| match scenario.algorithm {
        Algorithm::Event => c.event.as_ref().map(|e| e.rate_bound),
        Algorithm::Continuous => c.continuous.as_ref().map(|k| k.rate_bound),
        Algorithm::Alternative => None,
    });
    if diag.rate_fit {
        match fit_rate(&times, &stacked, None) {
            Ok(fit) => {
                if let Some(bound) = rate_bound {
                    checks.push(Check::at_least("rate_fit", fit.rate, bound));
                }
                rate_fit = Some(fit);
            }
            Err(e) => notes.push(format!("rate fit skipped: {e}")),
        }
    }

    let triggers = event.as_ref().map(|run| {
        let z = zeno_report(&run.triggers, scenario.horizon, scenario.step);
        checks.push(Check::at_most(
            "trigger_discipline",
            run.invariants.worst_discipline_excess,
            EVENT_CHECK_TOL,
        ));
        checks.push(Check::at_most(
            "chi_floor",
            run.invariants.worst_chi_floor_deficit,
            EVENT_CHECK_TOL,
        ));
        checks.push(Check::at_least(
            "chi_positive",
            run.invariants.min_chi,
            f64::MIN_POSITIVE,
        ));
        let gap_ok = z.min_gap() >= scenario.step * (1.0 - 1e-9) && !z.any_continuous();
        checks.push(Check {
            name: "zeno_free".into(),
            passed: gap_ok,
            value: z.min_gap(),
            threshold: scenario.step,
        });
        z
    });

    let last = trajectory.last();
    let report = RunReport {
        name: scenario.name.clone(),
        algorithm: scenario.algorithm.as_str(),
        seed: scenario.config.seed(),
        n: scenario.n(),
        p: scenario.p(),
        step: scenario.step,
        horizon: scenario.horizon,
        xstar: xstar.iter().copied().collect(),
        minimizer_unique: minimizer.unique,
        minimizer_method: match minimizer.method {
            MinimizerMethod::LinearSolve => "linear_solve",
            MinimizerMethod::Descent => "descent",
        },
        terminal: terminal_metrics(scenario, last, &xstar),
        rate_fit,
        rate_bound,
        constants_label: constants.as_ref().map(|c| c.label),
        triggers,
        passed: checks.iter().all(|c| c.passed),
        checks,
        notes,
        files: OutputFiles::default(),
    };
    Ok(RunOutcome {
        report,
        trajectory,
        lyapunov,
        constants,
        event,
    })
}

fn terminal_metrics(scenario: &Scenario, last: &SwarmState, xstar: &nalgebra::DVector<f64>) -> TerminalMetrics {
    TerminalMetrics {
        error_max: last.max_error(xstar),
        error_stacked: last.stacked_error(xstar),
        consensus_residual: center_rows(&last.x).norm(),
        gradient_sum_residual: scenario.objective.gradient_sum(&last.x_mean()).norm(),
    }
}

/// Certificate constants of a scenario, computed without integrating.
pub fn constants_report(scenario: &Scenario) -> Result<analysis::ConstantsReport, RunError> {
    let problem = ProblemData::new(&scenario.graph, &scenario.objective, scenario.gains, Execution::Auto)?;
    let ctx = LyapunovContext::new(&problem, scenario.eps0, scenario.eps)?;
    let v1_0 = ctx.v1(&scenario.initial);
    let trigger = match scenario.algorithm {
        Algorithm::Event => scenario.trigger.as_ref().map(|l| &l.params),
        _ => None,
    };
    Ok(analysis::compute_all(&problem, scenario.eps0, scenario.eps, v1_0, trigger)?.report())
}

/// Number formatting shared by every CSV: shortest round-trip form.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn trajectory_csv(outcome: &RunOutcome) -> String {
    let traj = &outcome.trajectory;
    let first = &traj.samples[0];
    let (n, p) = (first.n(), first.p());
    let mut header = vec!["t".to_string()];
    for var in ["x", "y", "v"] {
        for i in 0..n {
            for k in 0..p {
                header.push(format!("{var}[{i}][{k}]"));
            }
        }
    }
    header.extend(traj.diagnostics.columns.iter().cloned());
    if outcome.event.is_some() {
        header.extend((0..n).map(|i| format!("chi[{i}]")));
    }
    let mut out = header.join(",");
    out.push('\n');
    for (row, s) in traj.samples.iter().enumerate() {
        let mut fields = vec![fmt_num(s.t)];
        for m in [&s.x, &s.y, &s.v] {
            for i in 0..n {
                for k in 0..p {
                    fields.push(fmt_num(m[(i, k)]));
                }
            }
        }
        fields.extend(traj.diagnostics.rows[row].iter().map(|&v| fmt_num(v)));
        if let Some(ev) = &outcome.event {
            fields.extend(ev.chi_history[row].iter().map(|&v| fmt_num(v)));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn events_csv(run: &EventRun) -> String {
    let mut out = String::from("agent,k,t,chi_at_trigger,error_norm_sq,qhat\n");
    for log in &run.triggers.event_log {
        for r in log {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.agent,
                r.k,
                fmt_num(r.t),
                fmt_num(r.chi),
                fmt_num(r.error_norm_sq),
                fmt_num(r.qhat)
            );
        }
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<String, RunError> {
    fs::write(path, contents).map_err(io_err(format!("writing {}", path.display())))?;
    Ok(path.display().to_string())
}

fn dump_last_state(out_dir: &Path, err: DynamicsError) -> RunError {
    if let DynamicsError::Divergence { last_state, .. } = &err {
        let s = &**last_state;
        let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        let json = serde_json::json!({ "t": s.t, "x": rows(&s.x), "y": rows(&s.y), "v": rows(&s.v) });
        let path = out_dir.join("last_state.json");
        if fs::create_dir_all(out_dir).is_ok()
            && fs::write(&path, serde_json::to_string_pretty(&json).expect("json")).is_ok()
        {
            return RunError::Diverged {
                error: err,
                dump: path.display().to_string(),
            };
        }
    }
    RunError::Dynamics(err)
}

/// Runs a scenario and writes `trajectory.csv`, `constants.json`,
/// `events.csv` (event mode), and `summary.json` into `out_dir`.
pub fn run(scenario: &Scenario, out_dir: &Path) -> Result<RunReport, RunError> {
    let mut outcome = match execute(scenario) {
        Ok(o) => o,
        Err(RunError::Dynamics(e)) => return Err(dump_last_state(out_dir, e)),
        Err(e) => return Err(e),
    };
    fs::create_dir_all(out_dir).map_err(io_err(format!("creating {}", out_dir.display())))?;
    let mut files = OutputFiles {
        trajectory: Some(write(&out_dir.join("trajectory.csv"), &trajectory_csv(&outcome))?),
        ..OutputFiles::default()
    };
    if let Some(c) = &outcome.constants {
        if scenario.config.diagnostics.constants {
            let json = serde_json::to_string_pretty(&c.report()).expect("report serializes");
            files.constants = Some(write(&out_dir.join("constants.json"), &json)?);
        }
    }
    if let Some(ev) = &outcome.event {
        files.events = Some(write(&out_dir.join("events.csv"), &events_csv(ev))?);
    }
    let summary_path = out_dir.join("summary.json");
    files.summary = Some(summary_path.display().to_string());
    outcome.report.files = files;
    let json = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    write(&summary_path, &json)?;
    Ok(outcome.report)
}

/// Output directory for one scenario of a batch.
pub fn batch_dir(root: &Path, index: usize, name: &str) -> PathBuf {
    root.join(format!("{index:02}-{name}"))
}

/// Runs independent scenarios, in parallel when enabled. Each run is itself
/// sequential.
pub fn run_batch(scenarios: &[Scenario], root: &Path, exec: Execution) -> Vec<Result<RunReport, RunError>> {
    let indexed: Vec<(usize, &Scenario)> = scenarios.iter().enumerate().collect();
    exec::map(exec, &indexed, |(i, s)| run(s, &batch_dir(root, *i, &s.name)))
}

/// Error-versus-time curves of several scenarios on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    /// `errors[s][k]`: scenario `s` at sample `k`.
    pub errors: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&fmt_num(*t));
            for e in &self.errors {
                out.push(',');
                out.push_str(&fmt_num(e[k]));
            }
            out.push('\n');
        }
        out
    }

    pub fn terminal(&self, column: usize) -> f64 {
        *self.errors[column].last().expect("non-empty")
    }
}

/// Runs every scenario and merges `maxᵢ ‖xᵢ(t) − x*‖` into one table.
pub fn compare(scenarios: &[Scenario], exec: Execution) -> Result<Comparison, RunError> {
    let first = scenarios
        .first()
        .ok_or_else(|| RunError::Mismatch("no scenarios given".into()))?;
    for s in scenarios {
        if (s.horizon - first.horizon).abs() > 1e-12 || (s.step - first.step).abs() > 1e-15 {
            return Err(RunError::Mismatch(format!(
                "{} uses step {} and horizon {}, {} uses step {} and horizon {}",
                s.name, s.step, s.horizon, first.name, first.step, first.horizon
            )));
        }
    }
    let outcomes = exec::map(exec, scenarios, execute);
    let mut columns = Vec::new();
    let mut errors = Vec::new();
    let mut times = Vec::new();
    for (s, o) in scenarios.iter().zip(outcomes) {
        let o = o?;
        let mut name = format!("{}_{}", s.name, s.algorithm.as_str());
        if columns.contains(&name) {
            name = format!("{name}_{}", columns.len());
        }
        columns.push(name);
        times = o.trajectory.times();
        errors.push(o.error_series());
    }
    Ok(Comparison { columns, times, errors })
}
