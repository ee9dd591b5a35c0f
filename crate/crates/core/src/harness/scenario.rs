//! JSON scenario configs and their validation into runnable scenarios.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, ProblemData};
use crate::cost::{
    quadratic_family, quadratic_linear_family, quartic_family, CostError, CostFunction, GlobalObjective,
};
use crate::dynamics::{DynamicsError, GainParams, SwarmState};
use crate::event::{EventError, ThresholdNormalizer, TriggerLaw, TriggerParams, VarphiConstants};
use crate::exec::Execution;
use crate::graph::{GraphError, IndexBase, NetworkGraph};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema_version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

impl From<GraphError> for ScenarioError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Disconnected(_) => ScenarioError::Hypothesis(e.to_string()),
            other => ScenarioError::Invalid(other.to_string()),
        }
    }
}

impl From<CostError> for ScenarioError {
    fn from(e: CostError) -> Self {
        match e {
            CostError::Indefinite { .. } => ScenarioError::Hypothesis(format!("costs must be convex: {e}")),
            other => ScenarioError::Invalid(other.to_string()),
        }
    }
}

impl From<DynamicsError> for ScenarioError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::GainCondition { .. } => ScenarioError::Hypothesis(e.to_string()),
            other => ScenarioError::Invalid(other.to_string()),
        }
    }
}

impl From<EventError> for ScenarioError {
    fn from(e: EventError) -> Self {
        ScenarioError::Invalid(e.to_string())
    }
}

impl From<AnalysisError> for ScenarioError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Graph(g) => g.into(),
            AnalysisError::Cost(c) => c.into(),
            AnalysisError::NotStronglyConvex(_) | AnalysisError::MissingLipschitz => {
                ScenarioError::Hypothesis(e.to_string())
            }
            other => ScenarioError::Invalid(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub n: usize,
    /// `[i, j, weight]` triples, each undirected edge listed once.
    pub edges: Vec<(usize, usize, f64)>,
    /// 0 or 1.
    #[serde(default)]
    pub index_base: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// `½ (x − center)ᵀ hessian (x − center)`.
    Quadratic { hessian: Vec<Vec<f64>>, center: Vec<f64> },
    /// `½ xᵀ hessian x + linearᵀ x`.
    QuadraticLinear { hessian: Vec<Vec<f64>>, linear: Vec<f64> },
    /// `‖x − center‖⁴`; `lipschitz` asserts a global gradient bound.
    Quartic {
        center: Vec<f64>,
        #[serde(default)]
        lipschitz: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Continuous,
    Alternative,
    Event,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Continuous => "continuous",
            Algorithm::Alternative => "alternative",
            Algorithm::Event => "event",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "continuous" => Ok(Algorithm::Continuous),
            "alternative" => Ok(Algorithm::Alternative),
            "event" => Ok(Algorithm::Event),
            other => Err(format!("unknown algorithm {other:?}")),
        }
    }
}

/// A scalar applied to every agent, or one value per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerAgent {
    fn expand(&self, n: usize, name: &str) -> Result<Vec<f64>, ScenarioError> {
        match self {
            PerAgent::Uniform(v) => Ok(vec![*v; n]),
            PerAgent::Each(v) if v.len() == n => Ok(v.clone()),
            PerAgent::Each(v) => Err(ScenarioError::Invalid(format!(
                "trigger.{name} has {} entries for {n} agents",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerPreset {
    #[default]
    Default,
    LocalOnly,
}

/// Trigger design parameters. Unset fields come from `preset`; an unset
/// `kappa` is recomputed as `2(1 − δ)/φ + 1` from the final `δ` and `φ`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSpec {
    #[serde(default)]
    pub preset: TriggerPreset,
    pub sigma: Option<PerAgent>,
    pub phi_rate: Option<PerAgent>,
    pub delta: Option<PerAgent>,
    pub kappa: Option<PerAgent>,
    pub chi0: Option<PerAgent>,
    #[serde(default)]
    pub normalizer: ThresholdNormalizer,
}

impl TriggerSpec {
    pub fn resolve(&self, n: usize) -> Result<TriggerParams, ScenarioError> {
        let mut p = match self.preset {
            TriggerPreset::Default => TriggerParams::defaults(n),
            TriggerPreset::LocalOnly => TriggerParams::local_only(n),
        };
        if let Some(v) = &self.sigma {
            p.sigma = v.expand(n, "sigma")?;
        }
        if let Some(v) = &self.phi_rate {
            p.phi_rate = v.expand(n, "phi_rate")?;
        }
        if let Some(v) = &self.delta {
            p.delta = v.expand(n, "delta")?;
        }
        match &self.kappa {
            Some(v) => p.kappa = v.expand(n, "kappa")?,
            None => p.kappa = (0..n).map(|i| 2.0 * (1.0 - p.delta[i]) / p.phi_rate[i] + 1.0).collect(),
        }
        if let Some(v) = &self.chi0 {
            p.chi0 = v.expand(n, "chi0")?;
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Row-major `n × p` arrays; `v` defaults to zero.
    Literal {
        x: Vec<Vec<f64>>,
        y: Vec<Vec<f64>>,
        #[serde(default)]
        v: Option<Vec<Vec<f64>>>,
    },
    /// `x` and `y` uniform in `[lo, hi]`, `v = 0`.
    SeededBox {
        seed: u64,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
    },
}

fn default_lo() -> f64 {
    -5.0
}

fn default_hi() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostics {
    #[serde(default = "yes")]
    pub lyapunov: bool,
    #[serde(default = "yes")]
    pub constants: bool,
    #[serde(default = "yes")]
    pub rate_fit: bool,
}

fn yes() -> bool {
    true
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            lyapunov: true,
            constants: true,
            rate_fit: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub eps0: Option<f64>,
    pub eps: Option<f64>,
}

fn default_step() -> f64 {
    crate::dynamics::DEFAULT_STEP
}

fn default_horizon() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub graph: GraphSpec,
    pub costs: Vec<CostSpec>,
    pub gains: GainSpec,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub trigger: Option<TriggerSpec>,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub initial: InitialSpec,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default)]
    pub design: DesignSpec,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Schema {
                found: cfg.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces the seed of a seeded initial state.
    pub fn with_seed(mut self, seed: u64) -> Result<Self, ScenarioError> {
        match &mut self.initial {
            InitialSpec::SeededBox { seed: s, .. } => {
                *s = seed;
                Ok(self)
            }
            InitialSpec::Literal { .. } => Err(ScenarioError::Invalid(
                "a seed was given but the initial state is literal".into(),
            )),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self.initial {
            InitialSpec::SeededBox { seed, .. } => Some(seed),
            InitialSpec::Literal { .. } => None,
        }
    }
}

/// A validated, runnable scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub config: ScenarioConfig,
    pub graph: NetworkGraph,
    pub objective: GlobalObjective,
    pub gains: GainParams,
    pub algorithm: Algorithm,
    pub trigger: Option<TriggerLaw>,
    pub step: f64,
    pub horizon: f64,
    pub initial: SwarmState,
    pub eps0: f64,
    pub eps: f64,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ScenarioError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(ScenarioError::Invalid(format!("{what}: rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn build_cost(index: usize, spec: &CostSpec) -> Result<CostFunction, ScenarioError> {
    let single = |r: Result<Vec<CostFunction>, CostError>| -> Result<CostFunction, ScenarioError> {
        match r {
            Ok(mut v) => Ok(v.remove(0)),
            // Family builders number from zero; report the agent index.
            Err(e) => Err(ScenarioError::from(e)).map_err(|e| match e {
                ScenarioError::Invalid(m) => ScenarioError::Invalid(format!("agent {index}: {m}")),
                ScenarioError::Hypothesis(m) => ScenarioError::Hypothesis(format!("agent {index}: {m}")),
                other => other,
            }),
        }
    };
    match spec {
        CostSpec::Quadratic { hessian, center } => single(quadratic_family(
            &[matrix(hessian, "hessian")?],
            &[DVector::from_column_slice(center)],
        )),
        CostSpec::QuadraticLinear { hessian, linear } => single(quadratic_linear_family(
            &[matrix(hessian, "hessian")?],
            &[DVector::from_column_slice(linear)],
        )),
        CostSpec::Quartic { center, lipschitz } => {
            let f = quartic_family(&[DVector::from_column_slice(center)]).remove(0);
            Ok(match lipschitz {
                Some(m) if *m > 0.0 => f.with_lipschitz_override(*m),
                Some(m) => {
                    return Err(ScenarioError::Invalid(format!(
                        "agent {index}: lipschitz override {m} must be positive"
                    )))
                }
                None => f,
            })
        }
    }
}

fn initial_state(spec: &InitialSpec, n: usize, p: usize) -> Result<SwarmState, ScenarioError> {
    match spec {
        InitialSpec::SeededBox { seed, lo, hi } => {
            if !(lo < hi) {
                return Err(ScenarioError::Invalid(format!("initial box [{lo}, {hi}] is empty")));
            }
            Ok(SwarmState::seeded_box(n, p, *seed, *lo, *hi))
        }
        InitialSpec::Literal { x, y, v } => {
            let x = matrix(x, "initial.x")?;
            let y = matrix(y, "initial.y")?;
            let v = match v {
                Some(v) => matrix(v, "initial.v")?,
                None => DMatrix::zeros(n, p),
            };
            for (name, m) in [("x", &x), ("y", &y), ("v", &v)] {
                if m.shape() != (n, p) {
                    return Err(ScenarioError::Invalid(format!(
                        "initial.{name} is {}x{}, expected {n}x{p}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
            }
            Ok(SwarmState { t: 0.0, x, y, v })
        }
    }
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg = ScenarioConfig::from_json(&text)?;
    let fallback = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    Scenario::from_config(cfg, fallback)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Self::from_config(ScenarioConfig::from_json(text)?, None)
    }

    /// Validates a config. Hypothesis failures name the violated condition.
    pub fn from_config(cfg: ScenarioConfig, fallback_name: Option<String>) -> Result<Self, ScenarioError> {
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Schema {
                found: cfg.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let name = cfg.name.clone().or(fallback_name).unwrap_or_else(|| "scenario".into());
        let g = cfg.gains;
        let gains = GainParams::new(g.alpha, g.beta, g.gamma, g.theta)?;

        let base = match cfg.graph.index_base {
            0 => IndexBase::Zero,
            1 => IndexBase::One,
            b => {
                return Err(ScenarioError::Invalid(format!(
                    "graph.index_base must be 0 or 1, got {b}"
                )))
            }
        };
        let graph = NetworkGraph::from_edges(cfg.graph.n, &cfg.graph.edges, base)?;
        if !graph.is_connected() {
            return Err(GraphError::Disconnected(graph.components()).into());
        }

        if cfg.costs.len() != graph.n() {
            return Err(ScenarioError::Invalid(format!(
                "{} cost functions for {} agents",
                cfg.costs.len(),
                graph.n()
            )));
        }
        let costs = cfg
            .costs
            .iter()
            .enumerate()
            .map(|(i, c)| build_cost(i, c))
            .collect::<Result<Vec<_>, _>>()?;
        let objective = GlobalObjective::new(costs)?;

        if !(cfg.step > 0.0) || !(cfg.horizon >= cfg.step) || !cfg.horizon.is_finite() {
            return Err(ScenarioError::Invalid(format!(
                "need 0 < step <= horizon, got step {} and horizon {}",
                cfg.step, cfg.horizon
            )));
        }

        let initial = initial_state(&cfg.initial, graph.n(), objective.dim())?;
        if cfg.algorithm != Algorithm::Alternative {
            let s = initial.v_sum().amax();
            if s > 1e-12 * (1.0 + initial.v.amax()) {
                return Err(ScenarioError::Hypothesis(format!(
                    "initial integral states must sum to zero for the {} algorithm (sum {s:e})",
                    cfg.algorithm.as_str()
                )));
            }
        }

        let eps0 = cfg.design.eps0.unwrap_or_else(|| analysis::default_eps0(&gains));
        let eps = cfg.design.eps.unwrap_or(analysis::DEFAULT_EPS);
        let floor = gains.eps0_floor();
        if !(eps0 > floor && eps0 < 1.0) {
            return Err(ScenarioError::Invalid(format!(
                "design.eps0 = {eps0} must lie in ({floor}, 1)"
            )));
        }
        if !(eps > 0.0) {
            return Err(ScenarioError::Invalid(format!("design.eps = {eps} must be positive")));
        }

        let trigger = match cfg.algorithm {
            Algorithm::Event => Some(Self::build_law(&cfg, &graph, &objective, gains, eps0, eps)?),
            _ => None,
        };

        Ok(Self {
            name,
            step: cfg.step,
            horizon: cfg.horizon,
            algorithm: cfg.algorithm,
            config: cfg,
            graph,
            objective,
            gains,
            trigger,
            initial,
            eps0,
            eps,
        })
    }

    fn build_law(
        cfg: &ScenarioConfig,
        graph: &NetworkGraph,
        objective: &GlobalObjective,
        gains: GainParams,
        eps0: f64,
        eps: f64,
    ) -> Result<TriggerLaw, ScenarioError> {
        let missing: Vec<usize> = objective
            .costs()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.global_lipschitz().is_none())
            .map(|(i, _)| i)
            .collect();
        if !missing.is_empty() {
            return Err(ScenarioError::Hypothesis(format!(
                "event-triggered mode requires globally Lipschitz gradients; agents {missing:?} have no bound (set \"lipschitz\" on their quartic costs)"
            )));
        }
        let spec = cfg.trigger.clone().unwrap_or_default();
        let params = spec.resolve(graph.n())?;
        params.validate(graph.n())?;
        let varphi = if params.needs_global_constants() && spec.normalizer == ThresholdNormalizer::Varphi {
            let problem = ProblemData::new(graph, objective, gains, Execution::Sequential)?;
            let c = analysis::compute_event_constants(&problem, eps0, eps, &params)?;
            let eps8 = c.event.expect("event constants present").eps8;
            Some(VarphiConstants::compute(graph, &gains, eps0, eps8)?)
        } else {
            None
        };
        Ok(TriggerLaw::new(params, &gains, eps0, spec.normalizer, varphi.as_ref())?)
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn p(&self) -> usize {
        self.objective.dim()
    }
}
