//! Event-triggered communication with a dynamic triggering law.
//!
//! Every agent keeps the last position it broadcast, `x̂ᵢ`, and uses its
//! neighbors' broadcasts in place of their true positions. Agent `i`
//! broadcasts again at the first sample where
//!
//! ```text
//! κᵢ (‖eᵢ‖² − cᵢ q̂ᵢ) ≥ χᵢ,      eᵢ = x̂ᵢ − xᵢ,
//! q̂ᵢ = ½ Σⱼ aᵢⱼ ‖x̂ⱼ − x̂ᵢ‖²,
//! χ̇ᵢ = −δᵢ (‖eᵢ‖² − cᵢ q̂ᵢ) − φᵢ χᵢ,
//! ```
//!
//! with `cᵢ = (αγε₀ − θ) β σᵢ / (4 ϖᵢ)` and `ϖᵢ` the threshold normalizer
//! from [`varphi`]. Triggers are checked at sample boundaries only, so the
//! inter-event time is at least one step by construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::GlobalObjective;
use crate::dynamics::{
    self, assemble, check_divergence, observe_all, observer_columns, rk4_step, step_count, AgentDerivatives,
    DiagnosticTable, DynamicsError, GainParams, Integrable, Observer, SampleContext, SwarmState, Trajectory,
};
use crate::graph::NetworkGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("trigger parameter {name} for agent {agent} is {value}, outside {range}")]
    Parameter {
        name: &'static str,
        agent: usize,
        value: f64,
        range: &'static str,
    },
    #[error("trigger parameters cover {got} agents, network has {n}")]
    AgentCount { got: usize, n: usize },
    #[error("eps0 = {eps0} must lie in ({floor}, 1)")]
    Eps0Range { eps0: f64, floor: f64 },
    #[error("eps8 = {0} must be positive")]
    Eps8(f64),
    #[error("threshold normalizer for agent {0} is not positive")]
    Normalizer(usize),
}

/// Per-agent design parameters of the dynamic triggering law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerParams {
    pub sigma: Vec<f64>,
    pub phi_rate: Vec<f64>,
    pub delta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub chi0: Vec<f64>,
}

impl TriggerParams {
    /// `σ = δ = ½`, `φ = 1`, `κ = 2(1 − δ)/φ + 1`, `χ(0) = 1`.
    pub fn defaults(n: usize) -> Self {
        Self::uniform(n, 0.5, 1.0, 0.5, 2.0 * (1.0 - 0.5) / 1.0 + 1.0, 1.0)
    }

    /// `σ = δ = 0`: the threshold needs no global constants.
    pub fn local_only(n: usize) -> Self {
        Self::uniform(n, 0.0, 1.0, 0.0, 2.0 / 1.0 + 1.0, 1.0)
    }

    pub fn uniform(n: usize, sigma: f64, phi_rate: f64, delta: f64, kappa: f64, chi0: f64) -> Self {
        Self {
            sigma: vec![sigma; n],
            phi_rate: vec![phi_rate; n],
            delta: vec![delta; n],
            kappa: vec![kappa; n],
            chi0: vec![chi0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    pub fn validate(&self, n: usize) -> Result<(), EventError> {
        for len in [
            self.sigma.len(),
            self.phi_rate.len(),
            self.delta.len(),
            self.kappa.len(),
            self.chi0.len(),
        ] {
            if len != n {
                return Err(EventError::AgentCount { got: len, n });
            }
        }
        for agent in 0..n {
            let bad = |name, value, range| EventError::Parameter {
                name,
                agent,
                value,
                range,
            };
            let (s, phi, d, k, c) = (
                self.sigma[agent],
                self.phi_rate[agent],
                self.delta[agent],
                self.kappa[agent],
                self.chi0[agent],
            );
            if !(0.0..1.0).contains(&s) {
                return Err(bad("sigma", s, "[0, 1)"));
            }
            if !(phi > 0.0) || !phi.is_finite() {
                return Err(bad("phi_rate", phi, "(0, inf)"));
            }
            if !(0.0..=1.0).contains(&d) {
                return Err(bad("delta", d, "[0, 1]"));
            }
            if !(k > (1.0 - d) / phi) || !k.is_finite() {
                return Err(bad("kappa", k, "((1 - delta)/phi_rate, inf)"));
            }
            if !(c > 0.0) || !c.is_finite() {
                return Err(bad("chi0", c, "(0, inf)"));
            }
        }
        Ok(())
    }

    /// `k_d = minᵢ { φᵢ − (1 − δᵢ)/κᵢ }`.
    pub fn k_d(&self) -> f64 {
        (0..self.n())
            .map(|i| self.phi_rate[i] - (1.0 - self.delta[i]) / self.kappa[i])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn needs_global_constants(&self) -> bool {
        self.sigma.iter().any(|&s| s != 0.0)
    }
}

/// Which quantity divides the `q̂ᵢ` weight in the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdNormalizer {
    /// The network-dependent constant from [`varphi`].
    #[default]
    Varphi,
    /// The decay rate `φᵢ` of the internal variable.
    PhiRate,
}

/// Threshold-normalizing constant of agent `i`:
///
/// ```text
/// ϖᵢ = (αγε₀−θ)β/4·Lᵢᵢ + (αγε₀−θ)β·Lᵢᵢ + γ²θε₀²/(4ε₈)
///      + α²β²/(γ(1−ε₀)) · (Lᵢᵢ − Σ_{j≠i} Lⱼⱼ Lᵢⱼ)
/// ```
pub fn varphi(i: usize, g: &NetworkGraph, gains: &GainParams, eps0: f64, eps8: f64) -> Result<f64, EventError> {
    let floor = gains.eps0_floor();
    if !(eps0 > floor && eps0 < 1.0) {
        return Err(EventError::Eps0Range { eps0, floor });
    }
    if !(eps8 > 0.0) {
        return Err(EventError::Eps8(eps8));
    }
    let GainParams {
        alpha,
        beta,
        gamma,
        theta,
    } = *gains;
    let l = g.laplacian();
    let lii = l[(i, i)];
    let cross: f64 = (0..g.n()).filter(|&j| j != i).map(|j| l[(j, j)] * l[(i, j)]).sum();
    let m = gains.margin(eps0);
    Ok(m * beta / 4.0 * lii
        + m * beta * lii
        + gamma * gamma * theta * eps0 * eps0 / (4.0 * eps8)
        + alpha * alpha * beta * beta / (gamma * (1.0 - eps0)) * (lii - cross))
}

/// `ϖᵢ` for every agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarphiConstants {
    pub values: Vec<f64>,
}

impl VarphiConstants {
    pub fn compute(g: &NetworkGraph, gains: &GainParams, eps0: f64, eps8: f64) -> Result<Self, EventError> {
        let values = (0..g.n())
            .map(|i| varphi(i, g, gains, eps0, eps8))
            .collect::<Result<_, _>>()?;
        Ok(Self { values })
    }
}

/// Triggering law with its per-agent `q̂` weights `cᵢ` resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerLaw {
    pub params: TriggerParams,
    pub qhat_weight: Vec<f64>,
    pub normalizer: ThresholdNormalizer,
}

impl TriggerLaw {
    /// `varphi` may be `None` only when every `σᵢ = 0`.
    pub fn new(
        params: TriggerParams,
        gains: &GainParams,
        eps0: f64,
        normalizer: ThresholdNormalizer,
        varphi: Option<&VarphiConstants>,
    ) -> Result<Self, EventError> {
        let n = params.n();
        params.validate(n)?;
        let floor = gains.eps0_floor();
        if !(eps0 > floor && eps0 < 1.0) {
            return Err(EventError::Eps0Range { eps0, floor });
        }
        let margin = gains.margin(eps0);
        let mut qhat_weight = Vec::with_capacity(n);
        for i in 0..n {
            let sigma = params.sigma[i];
            if sigma == 0.0 {
                qhat_weight.push(0.0);
                continue;
            }
            let denom = match normalizer {
                ThresholdNormalizer::PhiRate => params.phi_rate[i],
                ThresholdNormalizer::Varphi => varphi.and_then(|v| v.values.get(i).copied()).unwrap_or(0.0),
            };
            if !(denom > 0.0) {
                return Err(EventError::Normalizer(i));
            }
            qhat_weight.push(margin * gains.beta * sigma / (4.0 * denom));
        }
        Ok(Self {
            params,
            qhat_weight,
            normalizer,
        })
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    /// `‖eᵢ‖² − cᵢ q̂ᵢ`.
    pub fn bracket(&self, i: usize, error_sq: f64, qhat: f64) -> f64 {
        error_sq - self.qhat_weight[i] * qhat
    }

    /// Lower envelope `χᵢ(0) e^{−(φᵢ + δᵢ/κᵢ) t}` for the internal variable.
    pub fn chi_floor(&self, i: usize, t: f64) -> f64 {
        let p = &self.params;
        p.chi0[i] * (-(p.phi_rate[i] + p.delta[i] / p.kappa[i]) * t).exp()
    }
}

/// Read access to broadcast positions. Trigger decisions go through this so
/// tests can audit which agents' caches a decision touched.
pub trait BroadcastView {
    fn broadcast(&self, j: usize) -> DVector<f64>;
}

impl BroadcastView for DMatrix<f64> {
    fn broadcast(&self, j: usize) -> DVector<f64> {
        self.row(j).transpose()
    }
}

/// `q̂ᵢ = −½ Σ_{j∈Nᵢ} Lᵢⱼ ‖x̂ⱼ − x̂ᵢ‖²`, reading only `i` and its neighbors.
pub fn qhat_with<B: BroadcastView + ?Sized>(i: usize, g: &NetworkGraph, cache: &B) -> f64 {
    let own = cache.broadcast(i);
    let l = g.laplacian();
    -0.5 * g
        .neighbors(i)
        .map(|j| l[(i, j)] * (cache.broadcast(j) - &own).norm_squared())
        .sum::<f64>()
}

/// One logged broadcast.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub agent: usize,
    /// 1-based event index for this agent.
    pub k: usize,
    pub t: f64,
    pub chi: f64,
    /// `‖eᵢ‖²` just before the broadcast reset it.
    pub error_norm_sq: f64,
    pub qhat: f64,
}

/// Broadcast caches, internal variables, and the event log of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerState {
    pub xhat: DMatrix<f64>,
    pub chi: DVector<f64>,
    pub last_event: Vec<f64>,
    pub event_log: Vec<Vec<EventRecord>>,
    /// `e = x̂ − x` as of the latest sample.
    pub e_x: DMatrix<f64>,
}

impl BroadcastView for TriggerState {
    fn broadcast(&self, j: usize) -> DVector<f64> {
        self.xhat.row(j).transpose()
    }
}

impl TriggerState {
    /// Every agent broadcasts at `t0`.
    pub fn new(g: &NetworkGraph, x0: &DMatrix<f64>, chi0: &[f64], t0: f64) -> Self {
        let n = x0.nrows();
        let mut ts = Self {
            xhat: x0.clone(),
            chi: DVector::from_column_slice(chi0),
            last_event: vec![t0; n],
            event_log: vec![Vec::new(); n],
            e_x: DMatrix::zeros(n, x0.ncols()),
        };
        for i in 0..n {
            let qhat = qhat_with(i, g, &ts);
            ts.event_log[i].push(EventRecord {
                agent: i,
                k: 1,
                t: t0,
                chi: chi0[i],
                error_norm_sq: 0.0,
                qhat,
            });
        }
        ts
    }

    pub fn qhat(&self, i: usize, g: &NetworkGraph) -> f64 {
        qhat_with(i, g, self)
    }

    pub fn error_sq(&self, i: usize) -> f64 {
        self.e_x.row(i).norm_squared()
    }

    /// Refreshes `e = x̂ − x` from the current positions.
    pub fn update_errors(&mut self, x: &DMatrix<f64>) {
        self.e_x = &self.xhat - x;
    }

    pub fn counts(&self) -> Vec<usize> {
        self.event_log.iter().map(Vec::len).collect()
    }

    fn broadcast_now(&mut self, i: usize, x: &DMatrix<f64>, t: f64, qhat: f64) {
        let error_norm_sq = self.error_sq(i);
        self.xhat.set_row(i, &x.row(i));
        self.e_x.row_mut(i).fill(0.0);
        self.last_event[i] = t;
        let k = self.event_log[i].len() + 1;
        self.event_log[i].push(EventRecord {
            agent: i,
            k,
            t,
            chi: self.chi[i],
            error_norm_sq,
            qhat,
        });
    }
}

/// Left side minus right side of the trigger inequality,
/// `κᵢ(‖eᵢ‖² − cᵢ q̂ᵢ) − χᵢ`; the agent fires when this is `≥ 0`.
pub fn trigger_margin<B: BroadcastView + ?Sized>(
    i: usize,
    g: &NetworkGraph,
    law: &TriggerLaw,
    cache: &B,
    own_position: &DVector<f64>,
    chi: f64,
) -> f64 {
    let error_sq = (cache.broadcast(i) - own_position).norm_squared();
    let qhat = qhat_with(i, g, cache);
    law.params.kappa[i] * law.bracket(i, error_sq, qhat) - chi
}

/// Evaluates the trigger rule for agent `i` at the current sample and
/// broadcasts if it fires.
pub fn check_trigger(
    i: usize,
    ts: &mut TriggerState,
    g: &NetworkGraph,
    law: &TriggerLaw,
    x: &DMatrix<f64>,
    t: f64,
) -> bool {
    let own = x.row(i).transpose();
    let fire = trigger_margin(i, g, law, &*ts, &own, ts.chi[i]) >= 0.0;
    if fire {
        let qhat = ts.qhat(i, g);
        ts.broadcast_now(i, x, t, qhat);
    }
    fire
}

/// `χ̇ᵢ = −δᵢ(‖eᵢ‖² − cᵢ q̂ᵢ) − φᵢ χᵢ` using the state's current errors.
pub fn chi_rhs(i: usize, ts: &TriggerState, g: &NetworkGraph, law: &TriggerLaw) -> f64 {
    let b = law.bracket(i, ts.error_sq(i), ts.qhat(i, g));
    -law.params.delta[i] * b - law.params.phi_rate[i] * ts.chi[i]
}

/// Right-hand side with broadcast positions in both Laplacian terms.
pub fn rhs_event(
    state: &SwarmState,
    xhat: &DMatrix<f64>,
    g: &NetworkGraph,
    obj: &GlobalObjective,
    gains: &GainParams,
) -> Result<AgentDerivatives, DynamicsError> {
    let lxhat = g.apply_laplacian(xhat);
    assemble(state, &lxhat, &state.v, obj, gains)
}

#[derive(Debug, Clone)]
struct EventSwarm {
    swarm: SwarmState,
    chi: DVector<f64>,
}

impl Integrable for EventSwarm {
    type Derivative = (AgentDerivatives, DVector<f64>);

    fn shifted(&self, h: f64, d: &Self::Derivative) -> Self {
        Self {
            swarm: self.swarm.shifted(h, &d.0),
            chi: &self.chi + &d.1 * h,
        }
    }

    fn rk4_average(k: [&Self::Derivative; 4]) -> Self::Derivative {
        let swarm = SwarmState::rk4_average([&k[0].0, &k[1].0, &k[2].0, &k[3].0]);
        let chi = (&k[0].1 + &k[1].1 * 2.0 + &k[2].1 * 2.0 + &k[3].1) / 6.0;
        (swarm, chi)
    }
}

/// Worst-case checks recorded at every sample of an event-triggered run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventInvariants {
    /// `max κᵢ(‖eᵢ‖² − cᵢq̂ᵢ) − χᵢ` over samples and agents, after triggering.
    pub worst_discipline_excess: f64,
    /// `max χᵢ(0)e^{−(φᵢ+δᵢ/κᵢ)t} − χᵢ(t)`.
    pub worst_chi_floor_deficit: f64,
    pub min_chi: f64,
}

/// Tolerance for the discipline and floor checks.
pub const EVENT_CHECK_TOL: f64 = 1e-9;

impl EventInvariants {
    pub fn discipline_holds(&self) -> bool {
        self.worst_discipline_excess <= EVENT_CHECK_TOL
    }

    pub fn chi_floor_holds(&self) -> bool {
        self.worst_chi_floor_deficit <= EVENT_CHECK_TOL && self.min_chi > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct EventRun {
    pub trajectory: Trajectory,
    pub triggers: TriggerState,
    /// `χ(t)` per sample.
    pub chi_history: Vec<DVector<f64>>,
    pub invariants: EventInvariants,
}

/// Simulates the event-triggered dynamics.
pub struct EventSimulation<'a> {
    pub graph: &'a NetworkGraph,
    pub objective: &'a GlobalObjective,
    pub gains: &'a GainParams,
    pub law: &'a TriggerLaw,
}

impl EventSimulation<'_> {
    pub fn run(
        &self,
        initial: &SwarmState,
        h: f64,
        horizon: f64,
        observers: &mut [&mut dyn Observer],
    ) -> Result<EventRun, EventError> {
        let g = self.graph;
        let law = self.law;
        let n = g.n();
        if law.n() != n {
            return Err(EventError::AgentCount { got: law.n(), n });
        }
        let s = initial.v_sum().amax();
        if s > 1e-12 * (1.0 + initial.v.amax()) {
            return Err(DynamicsError::IntegralSum(s).into());
        }
        // Dimension check through the continuous right-hand side.
        dynamics::rhs_continuous(initial, g, self.objective, self.gains)?;
        let steps = step_count(h, horizon)?;
        let t0 = initial.t;

        let mut ts = TriggerState::new(g, &initial.x, &law.params.chi0, t0);
        let mut diagnostics = DiagnosticTable {
            columns: observer_columns(observers),
            rows: Vec::with_capacity(steps + 1),
        };
        let mut samples = Vec::with_capacity(steps + 1);
        let mut chi_history = Vec::with_capacity(steps + 1);
        let mut invariants = EventInvariants {
            worst_discipline_excess: f64::NEG_INFINITY,
            worst_chi_floor_deficit: f64::NEG_INFINITY,
            min_chi: f64::INFINITY,
        };
        self.record(&ts, initial, &mut invariants);
        let chi_slice: Vec<f64> = ts.chi.iter().copied().collect();
        observe_all(
            observers,
            initial,
            &SampleContext {
                chi: Some(&chi_slice),
                broadcast: Some(&ts.xhat),
            },
            &mut diagnostics,
        );
        samples.push(initial.clone());
        chi_history.push(ts.chi.clone());

        let mut current = EventSwarm {
            swarm: initial.clone(),
            chi: ts.chi.clone(),
        };
        for k in 1..=steps {
            // Errors and q̂ frozen at their start-of-step values.
            let brackets: Vec<f64> = (0..n).map(|i| law.bracket(i, ts.error_sq(i), ts.qhat(i, g))).collect();
            let xhat = ts.xhat.clone();
            let mut next = rk4_step(&current, h, |st: &EventSwarm| -> Result<_, DynamicsError> {
                let d = rhs_event(&st.swarm, &xhat, g, self.objective, self.gains)?;
                let dchi = DVector::from_fn(n, |i, _| {
                    -law.params.delta[i] * brackets[i] - law.params.phi_rate[i] * st.chi[i]
                });
                Ok((d, dchi))
            })?;
            next.swarm.t = t0 + k as f64 * h;
            check_divergence(&next.swarm, &current.swarm)?;

            ts.chi = next.chi.clone();
            ts.update_errors(&next.swarm.x);
            // A broadcast changes neighbors' q̂, so sweep until nobody fires.
            loop {
                let mut fired = false;
                for i in 0..n {
                    fired |= check_trigger(i, &mut ts, g, law, &next.swarm.x, next.swarm.t);
                }
                if !fired {
                    break;
                }
            }

            self.record(&ts, &next.swarm, &mut invariants);
            let chi_slice: Vec<f64> = ts.chi.iter().copied().collect();
            observe_all(
                observers,
                &next.swarm,
                &SampleContext {
                    chi: Some(&chi_slice),
                    broadcast: Some(&ts.xhat),
                },
                &mut diagnostics,
            );
            samples.push(next.swarm.clone());
            chi_history.push(ts.chi.clone());
            current = next;
        }
        Ok(EventRun {
            trajectory: Trajectory {
                step: h,
                samples,
                diagnostics,
            },
            triggers: ts,
            chi_history,
            invariants,
        })
    }

    fn record(&self, ts: &TriggerState, state: &SwarmState, inv: &mut EventInvariants) {
        let law = self.law;
        for i in 0..ts.chi.len() {
            let chi = ts.chi[i];
            let excess = trigger_margin(i, self.graph, law, ts, &state.x.row(i).transpose(), chi);
            inv.worst_discipline_excess = inv.worst_discipline_excess.max(excess);
            let deficit = law.chi_floor(i, state.t) - chi;
            inv.worst_chi_floor_deficit = inv.worst_chi_floor_deficit.max(deficit);
            inv.min_chi = inv.min_chi.min(chi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentTriggerStats {
    pub agent: usize,
    pub count: usize,
    pub min_gap: f64,
    pub mean_gap: f64,
    /// Fired at every sample.
    pub continuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZenoReport {
    pub agents: Vec<AgentTriggerStats>,
    pub total_triggers: usize,
    pub samples_per_agent: usize,
    /// Total triggers over `n × samples_per_agent`.
    pub trigger_ratio: f64,
    /// `1 − trigger_ratio`: fraction of samples without communication.
    pub reduction_ratio: f64,
}

impl ZenoReport {
    pub fn min_gap(&self) -> f64 {
        self.agents.iter().map(|a| a.min_gap).fold(f64::INFINITY, f64::min)
    }

    pub fn any_continuous(&self) -> bool {
        self.agents.iter().any(|a| a.continuous)
    }
}

/// Trigger counts and inter-event gaps. Samples are counted at `t = 0, h, …, T`.
pub fn zeno_report(ts: &TriggerState, horizon: f64, step: f64) -> ZenoReport {
    let samples_per_agent = (horizon / step).round() as usize + 1;
    let agents: Vec<AgentTriggerStats> = ts
        .event_log
        .iter()
        .enumerate()
        .map(|(agent, log)| {
            let gaps: Vec<f64> = log.windows(2).map(|w| w[1].t - w[0].t).collect();
            let (min_gap, mean_gap) = if gaps.is_empty() {
                (horizon, horizon)
            } else {
                (
                    gaps.iter().copied().fold(f64::INFINITY, f64::min),
                    gaps.iter().sum::<f64>() / gaps.len() as f64,
                )
            };
            AgentTriggerStats {
                agent,
                count: log.len(),
                min_gap,
                mean_gap,
                continuous: log.len() >= samples_per_agent,
            }
        })
        .collect();
    let total_triggers: usize = agents.iter().map(|a| a.count).sum();
    let trigger_ratio = total_triggers as f64 / (agents.len() * samples_per_agent) as f64;
    ZenoReport {
        agents,
        total_triggers,
        samples_per_agent,
        trigger_ratio,
        reduction_ratio: 1.0 - trigger_ratio,
    }
}
