//! Continuous-communication dynamics and the fixed-step integrator.
//!
//! Agent `i` is a double integrator `ẍᵢ = uᵢ` driven by
//!
//! ```text
//! ẋᵢ = yᵢ
//! ẏᵢ = -γ yᵢ - αβ Σⱼ Lᵢⱼ xⱼ - θ vᵢ - α ∇fᵢ(xᵢ)
//! v̇ᵢ = β Σⱼ Lᵢⱼ xⱼ
//! ```
//!
//! States are stored as n×p matrices with one row per agent, so
//! `(L ⊗ I_p) x` is a plain matrix product.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cost::GlobalObjective;
use crate::graph::{center_rows, NetworkGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("gain {name} = {value} must be positive")]
    NonPositiveGain { name: &'static str, value: f64 },
    #[error("gain condition theta < alpha*gamma violated: theta = {theta}, alpha*gamma = {alpha_gamma}")]
    GainCondition { theta: f64, alpha_gamma: f64 },
    #[error("agent {agent}: gradient is not finite")]
    NonFiniteGradient { agent: usize },
    #[error("state diverged at t = {t} (norm above {limit:e})")]
    Divergence {
        t: f64,
        limit: f64,
        last_state: Box<SwarmState>,
    },
    #[error("step {step} and horizon {horizon} must satisfy 0 < step <= horizon")]
    BadStep { step: f64, horizon: f64 },
    #[error("state is {rows}x{cols} but the network has {n} agents in dimension {p}")]
    Dimension {
        rows: usize,
        cols: usize,
        n: usize,
        p: usize,
    },
    #[error("initial integral states sum to {0:e}, this algorithm needs Σᵢ vᵢ(0) = 0")]
    IntegralSum(f64),
}

/// Stacked agent state `(x, y, v)` at time `t`. Row i belongs to agent i.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub t: f64,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl SwarmState {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            t: 0.0,
            x: DMatrix::zeros(n, p),
            y: DMatrix::zeros(n, p),
            v: DMatrix::zeros(n, p),
        }
    }

    /// Positions and velocities uniform in `[lo, hi)`, integral states zero.
    /// Draws all of `x` row-major, then all of `y`.
    pub fn seeded_box(n: usize, p: usize, seed: u64, lo: f64, hi: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| {
            let mut m = DMatrix::zeros(n, p);
            for i in 0..n {
                for k in 0..p {
                    m[(i, k)] = rng.gen_range(lo..hi);
                }
            }
            m
        };
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        Self {
            t: 0.0,
            x,
            y,
            v: DMatrix::zeros(n, p),
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.x
            .iter()
            .chain(self.y.iter())
            .chain(self.v.iter())
            .all(|z| z.is_finite())
    }

    pub fn norm(&self) -> f64 {
        (self.x.norm_squared() + self.y.norm_squared() + self.v.norm_squared()).sqrt()
    }

    /// `Σᵢ vᵢ`.
    pub fn v_sum(&self) -> DVector<f64> {
        self.v.row_sum().transpose()
    }

    /// Agent average `(1/n) Σᵢ xᵢ`.
    pub fn x_mean(&self) -> DVector<f64> {
        self.x.row_mean().transpose()
    }

    /// `max_i ‖xᵢ - target‖`.
    pub fn max_error(&self, target: &DVector<f64>) -> f64 {
        self.x
            .row_iter()
            .map(|r| (r.transpose() - target).norm())
            .fold(0.0, f64::max)
    }

    /// `‖𝐱 - 1 ⊗ target‖`.
    pub fn stacked_error(&self, target: &DVector<f64>) -> f64 {
        self.x
            .row_iter()
            .map(|r| (r.transpose() - target).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// `‖(K_n ⊗ I_p) x‖`, the disagreement between agents.
    pub fn consensus_residual(&self) -> f64 {
        center_rows(&self.x).norm()
    }

    fn shifted(&self, h: f64, d: &AgentDerivatives) -> Self {
        Self {
            t: self.t + h,
            x: &self.x + &d.dx * h,
            y: &self.y + &d.dy * h,
            v: &self.v + &d.dv * h,
        }
    }
}

/// Gains `α, β, γ, θ > 0` with `θ < αγ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta: f64,
}

impl GainParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, theta: f64) -> Result<Self, DynamicsError> {
        for (name, value) in [("alpha", alpha), ("beta", beta), ("gamma", gamma), ("theta", theta)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(DynamicsError::NonPositiveGain { name, value });
            }
        }
        if theta >= alpha * gamma {
            return Err(DynamicsError::GainCondition {
                theta,
                alpha_gamma: alpha * gamma,
            });
        }
        Ok(Self {
            alpha,
            beta,
            gamma,
            theta,
        })
    }

    /// `αγε₀ - θ`, positive for admissible `ε₀`.
    pub fn margin(&self, eps0: f64) -> f64 {
        self.alpha * self.gamma * eps0 - self.theta
    }

    /// Lower end of the admissible `ε₀` interval, `θ/(αγ)`.
    pub fn eps0_floor(&self) -> f64 {
        self.theta / (self.alpha * self.gamma)
    }
}

/// Time derivatives of every agent's `(x, y, v)` plus the control `u = ẏ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentDerivatives {
    pub dx: DMatrix<f64>,
    pub dy: DMatrix<f64>,
    pub dv: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl AgentDerivatives {
    fn weighted_sum(parts: [(&Self, f64); 4]) -> Self {
        let (first, w0) = parts[0];
        let mut dx = &first.dx * w0;
        let mut dy = &first.dy * w0;
        let mut dv = &first.dv * w0;
        for &(d, w) in &parts[1..] {
            dx += &d.dx * w;
            dy += &d.dy * w;
            dv += &d.dv * w;
        }
        let u = dy.clone();
        Self { dx, dy, dv, u }
    }
}

fn check_dims(state: &SwarmState, g: &NetworkGraph, obj: &GlobalObjective) -> Result<(), DynamicsError> {
    let (n, p) = (g.n(), obj.dim());
    for m in [&state.x, &state.y, &state.v] {
        if m.nrows() != n || m.ncols() != p || obj.n() != n {
            return Err(DynamicsError::Dimension {
                rows: m.nrows(),
                cols: m.ncols(),
                n,
                p,
            });
        }
    }
    Ok(())
}

fn checked_gradient(obj: &GlobalObjective, x: &DMatrix<f64>) -> Result<DMatrix<f64>, DynamicsError> {
    let grad = obj.stacked_gradient(x);
    for (agent, row) in grad.row_iter().enumerate() {
        if row.iter().any(|z| !z.is_finite()) {
            return Err(DynamicsError::NonFiniteGradient { agent });
        }
    }
    Ok(grad)
}

/// Shared right-hand side: `coupled` is the Laplacian term `(L ⊗ I)x` (or its
/// broadcast counterpart) and `damping` is what θ multiplies.
pub(crate) fn assemble(
    state: &SwarmState,
    coupled: &DMatrix<f64>,
    damping: &DMatrix<f64>,
    obj: &GlobalObjective,
    gains: &GainParams,
) -> Result<AgentDerivatives, DynamicsError> {
    let grad = checked_gradient(obj, &state.x)?;
    let ab = gains.alpha * gains.beta;
    let dy = -(&state.y * gains.gamma) - coupled * ab - damping * gains.theta - grad * gains.alpha;
    Ok(AgentDerivatives {
        dx: state.y.clone(),
        u: dy.clone(),
        dy,
        dv: coupled * gains.beta,
    })
}

/// Right-hand side with continuous communication.
pub fn rhs_continuous(
    state: &SwarmState,
    g: &NetworkGraph,
    obj: &GlobalObjective,
    gains: &GainParams,
) -> Result<AgentDerivatives, DynamicsError> {
    check_dims(state, g, obj)?;
    let lx = g.apply_laplacian(&state.x);
    assemble(state, &lx, &state.v, obj, gains)
}

/// Variant where θ acts on `(L ⊗ I) v`, so `v(0)` may be arbitrary.
pub fn rhs_alternative(
    state: &SwarmState,
    g: &NetworkGraph,
    obj: &GlobalObjective,
    gains: &GainParams,
) -> Result<AgentDerivatives, DynamicsError> {
    check_dims(state, g, obj)?;
    let lx = g.apply_laplacian(&state.x);
    let lv = g.apply_laplacian(&state.v);
    assemble(state, &lx, &lv, obj, gains)
}

/// A state that the classical RK4 scheme can advance.
pub trait Integrable: Clone {
    type Derivative;
    /// `self + h·d`, time included.
    fn shifted(&self, h: f64, d: &Self::Derivative) -> Self;
    /// `(k1 + 2k2 + 2k3 + k4) / 6`.
    fn rk4_average(k: [&Self::Derivative; 4]) -> Self::Derivative;
}

impl Integrable for SwarmState {
    type Derivative = AgentDerivatives;

    fn shifted(&self, h: f64, d: &AgentDerivatives) -> Self {
        SwarmState::shifted(self, h, d)
    }

    fn rk4_average(k: [&AgentDerivatives; 4]) -> AgentDerivatives {
        AgentDerivatives::weighted_sum([
            (k[0], 1.0 / 6.0),
            (k[1], 1.0 / 3.0),
            (k[2], 1.0 / 3.0),
            (k[3], 1.0 / 6.0),
        ])
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<S, E, F>(state: &S, h: f64, mut f: F) -> Result<S, E>
where
    S: Integrable,
    F: FnMut(&S) -> Result<S::Derivative, E>,
{
    let k1 = f(state)?;
    let k2 = f(&state.shifted(0.5 * h, &k1))?;
    let k3 = f(&state.shifted(0.5 * h, &k2))?;
    let k4 = f(&state.shifted(h, &k3))?;
    Ok(state.shifted(h, &S::rk4_average([&k1, &k2, &k3, &k4])))
}

/// Default sample length.
pub const DEFAULT_STEP: f64 = 0.01;
/// State norm treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Number of fixed steps covering `[0, horizon]`.
pub fn step_count(step: f64, horizon: f64) -> Result<usize, DynamicsError> {
    if !(step > 0.0) || !(horizon >= step) || !horizon.is_finite() {
        return Err(DynamicsError::BadStep { step, horizon });
    }
    Ok((horizon / step).round() as usize)
}

/// Extra per-sample data available to observers in event-triggered runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleContext<'a> {
    pub chi: Option<&'a [f64]>,
    pub broadcast: Option<&'a DMatrix<f64>>,
}

/// Called once per sample (including t = 0); the returned values become
/// extra trajectory columns.
pub trait Observer {
    fn columns(&self) -> Vec<String>;
    fn observe(&mut self, state: &SwarmState, ctx: &SampleContext<'_>) -> Vec<f64>;
}

/// Observer-produced columns, one row per sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DiagnosticTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

pub(crate) fn observe_all(
    observers: &mut [&mut dyn Observer],
    state: &SwarmState,
    ctx: &SampleContext<'_>,
    table: &mut DiagnosticTable,
) {
    let mut row = Vec::with_capacity(table.columns.len());
    for obs in observers.iter_mut() {
        row.extend(obs.observe(state, ctx));
    }
    table.rows.push(row);
}

pub(crate) fn observer_columns(observers: &[&mut dyn Observer]) -> Vec<String> {
    observers.iter().flat_map(|o| o.columns()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub step: f64,
    pub samples: Vec<SwarmState>,
    pub diagnostics: DiagnosticTable,
}

impl Trajectory {
    pub fn last(&self) -> &SwarmState {
        self.samples.last().expect("trajectory holds the initial sample")
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

pub(crate) fn check_divergence(state: &SwarmState, last: &SwarmState) -> Result<(), DynamicsError> {
    if !state.is_finite() || state.norm() > DIVERGENCE_LIMIT {
        return Err(DynamicsError::Divergence {
            t: state.t,
            limit: DIVERGENCE_LIMIT,
            last_state: Box::new(last.clone()),
        });
    }
    Ok(())
}

/// Integrates `rhs` from `initial` over `[initial.t, initial.t + horizon]`
/// with fixed step `h`, sampling every step.
pub fn integrate<F>(
    mut rhs: F,
    initial: &SwarmState,
    h: f64,
    horizon: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory, DynamicsError>
where
    F: FnMut(&SwarmState) -> Result<AgentDerivatives, DynamicsError>,
{
    let steps = step_count(h, horizon)?;
    let t0 = initial.t;
    let mut diagnostics = DiagnosticTable {
        columns: observer_columns(observers),
        rows: Vec::with_capacity(steps + 1),
    };
    let mut samples = Vec::with_capacity(steps + 1);
    observe_all(observers, initial, &SampleContext::default(), &mut diagnostics);
    samples.push(initial.clone());
    let mut state = initial.clone();
    for k in 1..=steps {
        let mut next = rk4_step(&state, h, &mut rhs)?;
        next.t = t0 + k as f64 * h;
        check_divergence(&next, &state)?;
        observe_all(observers, &next, &SampleContext::default(), &mut diagnostics);
        samples.push(next.clone());
        state = next;
    }
    Ok(Trajectory {
        step: h,
        samples,
        diagnostics,
    })
}

/// Which continuous-communication right-hand side to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContinuousVariant {
    Primary,
    Alternative,
}

/// Integrates the continuous-communication dynamics. The primary variant
/// requires `Σᵢ vᵢ(0) = 0`.
pub fn simulate_continuous(
    variant: ContinuousVariant,
    g: &NetworkGraph,
    obj: &GlobalObjective,
    gains: &GainParams,
    initial: &SwarmState,
    h: f64,
    horizon: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory, DynamicsError> {
    check_dims(initial, g, obj)?;
    if variant == ContinuousVariant::Primary {
        let s = initial.v_sum().amax();
        if s > 1e-12 * (1.0 + initial.v.amax()) {
            return Err(DynamicsError::IntegralSum(s));
        }
    }
    match variant {
        ContinuousVariant::Primary => integrate(|s| rhs_continuous(s, g, obj, gains), initial, h, horizon, observers),
        ContinuousVariant::Alternative => {
            integrate(|s| rhs_alternative(s, g, obj, gains), initial, h, horizon, observers)
        }
    }
}

/// Residuals of the equilibrium conditions `y = 0`, `θv + α∇f(x) = 0`,
/// `(L ⊗ I)x = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumResidual {
    pub r_y: f64,
    pub r_grad: f64,
    pub r_consensus: f64,
}

impl EquilibriumResidual {
    pub fn max(&self) -> f64 {
        self.r_y.max(self.r_grad).max(self.r_consensus)
    }
}

pub fn equilibrium_residual(
    state: &SwarmState,
    g: &NetworkGraph,
    obj: &GlobalObjective,
    gains: &GainParams,
) -> EquilibriumResidual {
    let grad = obj.stacked_gradient(&state.x);
    EquilibriumResidual {
        r_y: state.y.norm(),
        r_grad: (&state.v * gains.theta + grad * gains.alpha).norm(),
        r_consensus: g.apply_laplacian(&state.x).norm(),
    }
}

/// Equilibrium `(x̄, ȳ, v̄) = (1 ⊗ x*, 0, -(α/θ)∇f(1 ⊗ x*))`.
pub fn equilibrium_state(obj: &GlobalObjective, gains: &GainParams, xstar: &DVector<f64>) -> SwarmState {
    let n = obj.n();
    let p = obj.dim();
    let xbar = DMatrix::from_fn(n, p, |_, k| xstar[k]);
    let vbar = obj.stacked_gradient(&xbar) * (-gains.alpha / gains.theta);
    SwarmState {
        t: 0.0,
        x: xbar,
        y: DMatrix::zeros(n, p),
        v: vbar,
    }
}

/// Tracks `max_t |Σᵢ vᵢ(t) - Σᵢ vᵢ(0)| / (1 + t)`.
#[derive(Debug, Clone, Default)]
pub struct ConservationMonitor {
    initial: Option<DVector<f64>>,
    pub worst_scaled_drift: f64,
}

/// Allowed drift of `Σᵢ vᵢ` per unit `(1 + t)`.
pub const CONSERVATION_TOL: f64 = 1e-10;

impl ConservationMonitor {
    pub fn passed(&self) -> bool {
        self.worst_scaled_drift <= CONSERVATION_TOL
    }
}

impl Observer for ConservationMonitor {
    fn columns(&self) -> Vec<String> {
        vec!["v_sum_drift".into()]
    }

    fn observe(&mut self, state: &SwarmState, _: &SampleContext<'_>) -> Vec<f64> {
        let sum = state.v_sum();
        let initial = self.initial.get_or_insert_with(|| sum.clone());
        let drift = (&sum - &*initial).amax();
        self.worst_scaled_drift = self.worst_scaled_drift.max(drift / (1.0 + state.t));
        vec![drift]
    }
}

/// Distance-to-minimizer columns: `max_i ‖xᵢ - x*‖`, `‖𝐱 - 1⊗x*‖`, and the
/// consensus residual.
#[derive(Debug, Clone)]
pub struct ErrorObserver {
    pub xstar: DVector<f64>,
}

impl Observer for ErrorObserver {
    fn columns(&self) -> Vec<String> {
        vec!["error_max".into(), "error_stacked".into(), "consensus".into()]
    }

    fn observe(&mut self, state: &SwarmState, _: &SampleContext<'_>) -> Vec<f64> {
        vec![
            state.max_error(&self.xstar),
            state.stacked_error(&self.xstar),
            state.consensus_residual(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{quadratic_family, GlobalObjective};
    use crate::graph::IndexBase;

    fn scalar_quadratic(centers: &[f64]) -> GlobalObjective {
        let mats: Vec<_> = centers.iter().map(|_| DMatrix::identity(1, 1)).collect();
        let shifts: Vec<_> = centers.iter().map(|&c| DVector::from_element(1, c)).collect();
        GlobalObjective::new(quadratic_family(&mats, &shifts).unwrap()).unwrap()
    }

    fn zero_cost(n: usize, p: usize) -> GlobalObjective {
        let mats = vec![DMatrix::zeros(p, p); n];
        let shifts = vec![DVector::zeros(p); n];
        GlobalObjective::new(quadratic_family(&mats, &shifts).unwrap()).unwrap()
    }

    #[test]
    fn gain_gate() {
        assert!(GainParams::new(2.0, 2.0, 6.0, 5.0).is_ok());
        assert_eq!(
            GainParams::new(2.0, 2.0, 6.0, 12.0),
            Err(DynamicsError::GainCondition {
                theta: 12.0,
                alpha_gamma: 12.0
            })
        );
        assert!(matches!(
            GainParams::new(0.0, 2.0, 6.0, 1.0),
            Err(DynamicsError::NonPositiveGain { name: "alpha", .. })
        ));
    }

    #[test]
    fn single_agent_is_heavy_ball() {
        let g = NetworkGraph::from_edges(1, &[], IndexBase::Zero).unwrap();
        let obj = scalar_quadratic(&[0.5]);
        let gains = GainParams::new(2.0, 2.0, 6.0, 1.0).unwrap();
        let mut s = SwarmState::zeros(1, 1);
        s.x[(0, 0)] = 1.5;
        s.y[(0, 0)] = -0.25;
        let d = rhs_continuous(&s, &g, &obj, &gains).unwrap();
        // ẍ = -γẋ - α∇f(x) with ∇f(x) = x - 0.5.
        assert_eq!(d.dy[(0, 0)], -6.0 * -0.25 - 2.0 * 1.0);
        assert_eq!(d.dv[(0, 0)], 0.0);
        assert_eq!(d.u, d.dy);
    }

    #[test]
    fn consensus_state_has_no_coupling() {
        let g = NetworkGraph::path(3);
        let obj = scalar_quadratic(&[0.0, 1.0, 2.0]);
        let gains = GainParams::new(2.0, 2.0, 6.0, 3.5).unwrap();
        let mut s = SwarmState::zeros(3, 1);
        s.x.fill(0.7);
        let d = rhs_continuous(&s, &g, &obj, &gains).unwrap();
        let grad = obj.stacked_gradient(&s.x);
        assert_eq!(d.dy, -grad * 2.0);
        assert_eq!(d.dv, DMatrix::zeros(3, 1));
    }

    #[test]
    fn path3_integral_derivative() {
        let g = NetworkGraph::path(3);
        let obj = zero_cost(3, 1);
        let gains = GainParams::new(2.0, 2.0, 6.0, 3.5).unwrap();
        let mut s = SwarmState::zeros(3, 1);
        s.x = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let d = rhs_continuous(&s, &g, &obj, &gains).unwrap();
        assert_eq!(d.dv.as_slice(), &[-2.0, 0.0, 2.0]);
    }

    #[test]
    fn alternative_differs_and_ignores_consensus_v() {
        let g = NetworkGraph::path(3);
        let obj = scalar_quadratic(&[0.0, 1.0, 2.0]);
        let gains = GainParams::new(2.0, 2.0, 6.0, 3.5).unwrap();
        let mut s = SwarmState::seeded_box(3, 1, 9, -1.0, 1.0);
        s.v.fill(0.8);
        let alt = rhs_alternative(&s, &g, &obj, &gains).unwrap();
        let mut s0 = s.clone();
        s0.v.fill(0.0);
        assert_eq!(alt.dy, rhs_alternative(&s0, &g, &obj, &gains).unwrap().dy);
        s.v = DMatrix::from_column_slice(3, 1, &[0.3, -0.1, -0.2]);
        let a = rhs_alternative(&s, &g, &obj, &gains).unwrap();
        let b = rhs_continuous(&s, &g, &obj, &gains).unwrap();
        assert_ne!(a.dy, b.dy);
        assert_eq!(a.dv, b.dv);
    }

    #[test]
    fn zero_gradient_equilibrium_is_constant() {
        let g = NetworkGraph::path(3);
        let obj = zero_cost(3, 2);
        let gains = GainParams::new(2.0, 2.0, 6.0, 3.5).unwrap();
        let mut s = SwarmState::zeros(3, 2);
        s.x.column_mut(0).fill(1.25);
        s.x.column_mut(1).fill(-3.0);
        let traj = simulate_continuous(ContinuousVariant::Primary, &g, &obj, &gains, &s, 0.01, 1.0, &mut []).unwrap();
        for sample in &traj.samples {
            assert_eq!(sample.x, s.x);
            assert_eq!(sample.y, s.y);
            assert_eq!(sample.v, s.v);
        }
        assert_eq!(traj.samples.len(), 101);
        assert!((traj.last().t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonzero_integral_sum() {
        let g = NetworkGraph::path(3);
        let obj = zero_cost(3, 1);
        let gains = GainParams::new(2.0, 2.0, 6.0, 3.5).unwrap();
        let mut s = SwarmState::zeros(3, 1);
        s.v[(0, 0)] = 1.0;
        assert!(matches!(
            simulate_continuous(ContinuousVariant::Primary, &g, &obj, &gains, &s, 0.01, 1.0, &mut []),
            Err(DynamicsError::IntegralSum(_))
        ));
        assert!(simulate_continuous(ContinuousVariant::Alternative, &g, &obj, &gains, &s, 0.01, 1.0, &mut []).is_ok());
    }

    #[test]
    fn divergence_is_reported_with_last_state() {
        let g = NetworkGraph::from_edges(1, &[], IndexBase::Zero).unwrap();
        let obj = scalar_quadratic(&[0.0]);
        let gains = GainParams::new(1.0, 1.0, 1.0, 0.5).unwrap();
        let mut s = SwarmState::zeros(1, 1);
        s.x[(0, 0)] = 1.0;
        // A destabilizing right-hand side: ẋ = y, ẏ = +100 x.
        let rhs = |st: &SwarmState| -> Result<AgentDerivatives, DynamicsError> {
            let _ = (&g, &obj, &gains);
            Ok(AgentDerivatives {
                dx: st.y.clone(),
                dy: &st.x * 100.0,
                dv: DMatrix::zeros(1, 1),
                u: &st.x * 100.0,
            })
        };
        match integrate(rhs, &s, 0.01, 100.0, &mut []) {
            Err(DynamicsError::Divergence { last_state, t, .. }) => {
                assert!(last_state.is_finite());
                assert!(last_state.t < t);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn equilibrium_residuals() {
        let g = NetworkGraph::path(3);
        let obj = scalar_quadratic(&[0.0, 1.0, 5.0]);
        let gains = GainParams::new(2.0, 2.0, 6.0, 3.5).unwrap();
        let eq = equilibrium_state(&obj, &gains, &DVector::from_element(1, 2.0));
        let r = equilibrium_residual(&eq, &g, &obj, &gains);
        assert!(r.max() <= 1e-12, "{r:?}");
        let s = SwarmState::seeded_box(3, 1, 3, -1.0, 1.0);
        let r = equilibrium_residual(&s, &g, &obj, &gains);
        assert!(r.r_y > 0.0 && r.r_grad > 0.0 && r.r_consensus > 0.0);
    }

    #[test]
    fn seeded_box_is_reproducible() {
        let a = SwarmState::seeded_box(3, 3, 42, -5.0, 5.0);
        let b = SwarmState::seeded_box(3, 3, 42, -5.0, 5.0);
        assert_eq!(a, b);
        assert!(a.x.iter().all(|z| (-5.0..5.0).contains(z)));
        assert_eq!(a.v, DMatrix::zeros(3, 3));
        assert_ne!(a, SwarmState::seeded_box(3, 3, 43, -5.0, 5.0));
    }
}
