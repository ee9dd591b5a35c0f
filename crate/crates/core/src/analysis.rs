//! Certificate constants, Lyapunov diagnostics, and empirical rate fitting.
//!
//! The constants follow the exponential-convergence certificates of the
//! continuous and event-triggered algorithms. Every constant is reported with
//! the formula that produced it, and is labelled "certified" only when the
//! strong-convexity modulus `m_f` was computed exactly rather than sampled.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cost::{estimate_mf, minimizer_oracle, shell_samples, CostError, GlobalObjective, MfEstimate, Minimizer};
use crate::dynamics::{GainParams, Observer, SampleContext, SwarmState};
use crate::event::{EventError, TriggerParams, VarphiConstants};
use crate::exec::{self, Execution};
use crate::graph::{GraphError, NetworkGraph, SpectralData};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error("eps0 = {eps0} must lie in ({floor}, 1)")]
    Eps0Range { eps0: f64, floor: f64 },
    #[error("design parameter eps = {0} must be positive")]
    Eps(f64),
    #[error("objective is not restricted strongly convex (m_f = {0}); only asymptotic convergence applies")]
    NotStronglyConvex(f64),
    #[error("event-triggered certificate requires globally Lipschitz gradients")]
    MissingLipschitz,
    #[error("k_d = {0} must be positive")]
    KdNonPositive(f64),
    #[error("rate fit needs at least two samples above the noise floor, got {0}")]
    TooFewSamples(usize),
}

/// Everything about a problem instance that does not depend on design
/// parameters: spectrum, minimizer, curvature.
#[derive(Debug, Clone)]
pub struct ProblemData<'a> {
    pub graph: &'a NetworkGraph,
    pub objective: &'a GlobalObjective,
    pub gains: GainParams,
    pub spectral: SpectralData,
    pub minimizer: Minimizer,
    pub mf: MfEstimate,
}

/// Sample count for the `m_f` estimate of non-quadratic objectives.
pub const MF_SAMPLES: usize = 4000;
const MF_SEED: u64 = 0x6d66;

impl<'a> ProblemData<'a> {
    pub fn new(
        graph: &'a NetworkGraph,
        objective: &'a GlobalObjective,
        gains: GainParams,
        exec: Execution,
    ) -> Result<Self, AnalysisError> {
        let spectral = graph.spectral()?;
        let minimizer = minimizer_oracle(objective)?;
        let mf = if objective.all_quadratic() {
            estimate_mf(objective, &minimizer.point, &[], exec)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(MF_SEED);
            let samples = shell_samples(&mut rng, &minimizer.point, MF_SAMPLES, 1e-3, 10.0);
            estimate_mf(objective, &minimizer.point, &samples, exec)
        };
        Ok(Self {
            graph,
            objective,
            gains,
            spectral,
            minimizer,
            mf,
        })
    }

    pub fn xstar(&self) -> &DVector<f64> {
        &self.minimizer.point
    }

    pub fn check_eps0(&self, eps0: f64) -> Result<(), AnalysisError> {
        let floor = self.gains.eps0_floor();
        if eps0 > floor && eps0 < 1.0 {
            Ok(())
        } else {
            Err(AnalysisError::Eps0Range { eps0, floor })
        }
    }
}

/// Default `ε₀ = (θ/(αγ) + 1)/2`, the midpoint of the admissible interval.
pub fn default_eps0(gains: &GainParams) -> f64 {
    (gains.eps0_floor() + 1.0) / 2.0
}

pub const DEFAULT_EPS: f64 = 0.1;

/// Constants of the continuous-communication certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuousConstants {
    pub v1_0: f64,
    pub d_radius: f64,
    pub m_d: f64,
    pub iota1: f64,
    pub m1: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
    pub eps1_tilde: f64,
    /// `ε₃/(2ε₄)`.
    pub rate_bound: f64,
}

impl ContinuousConstants {
    /// `1 + εε₂/ε₁`, the weight of `V₁` inside `V₂`.
    pub fn v2_factor(&self, eps: f64) -> f64 {
        1.0 + eps * self.eps2 / self.eps1
    }
}

/// Constants of the event-triggered certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventConstants {
    pub mbar: f64,
    pub iota2: f64,
    pub m2: f64,
    pub eps5: f64,
    pub eps6: f64,
    pub eps7: f64,
    pub eps8: f64,
    pub eps9: f64,
    pub eps10: f64,
    pub eps2_tilde: f64,
    pub k_d: f64,
    pub varphi: Vec<f64>,
    /// `ε₉/(2ε₁₀)`.
    pub rate_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateConstants {
    pub eps0: f64,
    pub eps: f64,
    pub rho: f64,
    pub rho2: f64,
    pub m_f: f64,
    /// "certified" when `m_f` is exact, "estimated" when sampled.
    pub label: &'static str,
    pub continuous: Option<ContinuousConstants>,
    pub event: Option<EventConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantEntry {
    pub symbol: String,
    pub value: f64,
    pub formula: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsReport {
    pub label: &'static str,
    pub entries: Vec<ConstantEntry>,
    pub notes: Vec<String>,
}

fn entry(symbol: &str, value: f64, formula: &str) -> ConstantEntry {
    ConstantEntry {
        symbol: symbol.into(),
        value,
        formula: formula.into(),
    }
}

impl CertificateConstants {
    pub fn report(&self) -> ConstantsReport {
        let mut entries = vec![
            entry("eps0", self.eps0, "design parameter in (theta/(alpha*gamma), 1)"),
            entry("eps", self.eps, "design parameter > 0"),
            entry("rho", self.rho, "largest Laplacian eigenvalue"),
            entry("rho2", self.rho2, "smallest positive Laplacian eigenvalue"),
            entry(
                "m_f",
                self.m_f,
                if self.label == "certified" {
                    "lambda_min(sum of Hessians)"
                } else {
                    "sampled min of (grad f(x) - grad f(x*))^T (x - x*) / |x - x*|^2"
                },
            ),
        ];
        if let Some(c) = &self.continuous {
            entries.extend([
                entry("V1_0", c.v1_0, "alpha*W1 + W2 at the initial state"),
                entry("D_radius", c.d_radius, "sqrt(2*V1_0 / (gamma^2*eps0*(1 - sqrt(eps0))))"),
                entry("M_D", c.m_d, "max_i M_i(D)"),
                entry("iota1", c.iota1, "m_f / (4*M_D)"),
                entry(
                    "m1",
                    c.m1,
                    "min{m_f/2, rho2*m_f^2*alpha*gamma*eps0 / (2*(alpha*gamma*eps0 - theta)*(m_f^2 + 16*M_D^2))}",
                ),
                entry("eps1", c.eps1, "min{gamma*(1 - eps0), alpha*gamma*eps0*m1}"),
                entry(
                    "eps2",
                    c.eps2,
                    "max{gamma/alpha + gamma^2/theta + theta/alpha^2, alpha^2*M_D^2/theta}",
                ),
                entry("eps3", c.eps3, "min{eps1, eps*theta/2}"),
                entry(
                    "eps4",
                    c.eps4,
                    "max{1 + eps*eps2/eps1 + eps/alpha, (1 + eps*eps2/eps1)*(gamma^2*eps0 + alpha*beta*rho + alpha*M_D/2) + eps*M_D/2, (1 + eps*eps2/eps1)*theta*gamma*eps0/(beta*rho2) + eps*alpha}",
                ),
                entry("eps1_tilde", c.eps1_tilde, "(1 + eps*eps2/eps1)*gamma^2*eps0*(1 - eps0)/2"),
                entry("rate_bound_continuous", c.rate_bound, "eps3 / (2*eps4)"),
            ]);
        }
        if let Some(e) = &self.event {
            entries.extend([
                entry("Mbar", e.mbar, "max_i global gradient-Lipschitz constant"),
                entry("iota2", e.iota2, "m_f / (4*Mbar)"),
                entry(
                    "m2",
                    e.m2,
                    "min{m_f/2, 4*rho2*m_f^2*alpha / ((alpha*gamma*eps0 - theta)*beta*(m_f^2 + 16*Mbar^2))}",
                ),
                entry("eps5", e.eps5, "min{gamma*(1 - eps0)/2, m2*alpha}"),
                entry(
                    "eps6",
                    e.eps6,
                    "max{gamma/alpha + gamma^2/theta + theta/alpha^2, alpha^2*Mbar^2/theta}",
                ),
                entry("eps7", e.eps7, "1 + eps*eps6/eps5"),
                entry("eps8", e.eps8, "eps / (4*eps7)"),
                entry("k_d", e.k_d, "min_i{phi_i - (1 - delta_i)/kappa_i}"),
                entry("eps9", e.eps9, "min{eps5, eps*theta/4, k_d}"),
                entry(
                    "eps10",
                    e.eps10,
                    "max{eps7 + eps/alpha, eps7*(gamma^2*eps0 + alpha*beta*rho + alpha*Mbar/2) + eps*Mbar/2, eps7*theta*gamma*eps0/(beta*rho2) + eps*alpha/rho2}",
                ),
                entry("eps2_tilde", e.eps2_tilde, "eps7*gamma^2*eps0*(1 - eps0)/2"),
                entry("rate_bound_event", e.rate_bound, "eps9 / (2*eps10)"),
            ]);
            for (i, v) in e.varphi.iter().enumerate() {
                entries.push(entry(
                    &format!("varphi[{i}]"),
                    *v,
                    "(alpha*gamma*eps0 - theta)*beta/4*L_ii + (alpha*gamma*eps0 - theta)*beta*L_ii + gamma^2*theta*eps0^2/(4*eps8) + alpha^2*beta^2/(gamma*(1 - eps0))*(L_ii - sum_{j != i} L_jj*L_ij)",
                ));
            }
        }
        let mut notes = Vec::new();
        if self.continuous.is_some() && self.event.is_some() {
            notes.push(
                "third branch of eps4 uses eps*alpha while eps10 uses eps*alpha/rho2; both kept as stated".into(),
            );
        }
        ConstantsReport {
            label: self.label,
            entries,
            notes,
        }
    }

    /// Positivity annotations: `ε₁..ε₃ > 0`, `ε₄ > 1`, `ε₅..ε₉ > 0`,
    /// `ε₇, ε₁₀ > 1`, `k_d > 0`.
    pub fn annotations_hold(&self) -> bool {
        let c_ok = self.continuous.as_ref().map_or(true, |c| {
            c.eps1 > 0.0 && c.eps2 > 0.0 && c.eps3 > 0.0 && c.eps4 > 1.0 && c.m1 > 0.0
        });
        let e_ok = self.event.as_ref().map_or(true, |e| {
            e.m2 > 0.0
                && e.eps5 > 0.0
                && e.eps6 > 0.0
                && e.eps7 > 1.0
                && e.eps8 > 0.0
                && e.eps9 > 0.0
                && e.eps10 > 1.0
                && e.k_d > 0.0
                && e.varphi.iter().all(|&v| v > 0.0)
        });
        c_ok && e_ok
    }
}

/// Continuous-certificate constants from scalar inputs.
#[allow(clippy::too_many_arguments)]
pub fn continuous_formulas(
    gains: &GainParams,
    rho: f64,
    rho2: f64,
    mf: f64,
    m_d: f64,
    eps0: f64,
    eps: f64,
    v1_0: f64,
) -> ContinuousConstants {
    let GainParams {
        alpha,
        beta,
        gamma,
        theta,
    } = *gains;
    let age = alpha * gamma * eps0;
    let m1 = (mf / 2.0).min(rho2 * mf * mf * age / (2.0 * (age - theta) * (mf * mf + 16.0 * m_d * m_d)));
    let eps1 = (gamma * (1.0 - eps0)).min(age * m1);
    let eps2 = (gamma / alpha + gamma * gamma / theta + theta / (alpha * alpha)).max(alpha * alpha * m_d * m_d / theta);
    let eps3 = eps1.min(eps * theta / 2.0);
    let w = 1.0 + eps * eps2 / eps1;
    let eps4 = (w + eps / alpha)
        .max(w * (gamma * gamma * eps0 + alpha * beta * rho + alpha * m_d / 2.0) + eps * m_d / 2.0)
        .max(w * theta * gamma * eps0 / (beta * rho2) + eps * alpha);
    ContinuousConstants {
        v1_0,
        d_radius: (2.0 * v1_0 / (gamma * gamma * eps0 * (1.0 - eps0.sqrt()))).sqrt(),
        m_d,
        iota1: mf / (4.0 * m_d),
        m1,
        eps1,
        eps2,
        eps3,
        eps4,
        eps1_tilde: w * gamma * gamma * eps0 * (1.0 - eps0) / 2.0,
        rate_bound: eps3 / (2.0 * eps4),
    }
}

/// Event-certificate constants from scalar inputs.
#[allow(clippy::too_many_arguments)]
pub fn event_formulas(
    gains: &GainParams,
    rho: f64,
    rho2: f64,
    mf: f64,
    mbar: f64,
    eps0: f64,
    eps: f64,
    k_d: f64,
) -> EventConstants {
    let GainParams {
        alpha,
        beta,
        gamma,
        theta,
    } = *gains;
    let margin = gains.margin(eps0);
    let m2 = (mf / 2.0).min(4.0 * rho2 * mf * mf * alpha / (margin * beta * (mf * mf + 16.0 * mbar * mbar)));
    let eps5 = (gamma * (1.0 - eps0) / 2.0).min(m2 * alpha);
    let eps6 =
        (gamma / alpha + gamma * gamma / theta + theta / (alpha * alpha)).max(alpha * alpha * mbar * mbar / theta);
    let eps7 = 1.0 + eps * eps6 / eps5;
    let eps8 = eps / (4.0 * eps7);
    let eps9 = eps5.min(eps * theta / 4.0).min(k_d);
    let eps10 = (eps7 + eps / alpha)
        .max(eps7 * (gamma * gamma * eps0 + alpha * beta * rho + alpha * mbar / 2.0) + eps * mbar / 2.0)
        .max(eps7 * theta * gamma * eps0 / (beta * rho2) + eps * alpha / rho2);
    EventConstants {
        mbar,
        iota2: mf / (4.0 * mbar),
        m2,
        eps5,
        eps6,
        eps7,
        eps8,
        eps9,
        eps10,
        eps2_tilde: eps7 * gamma * gamma * eps0 * (1.0 - eps0) / 2.0,
        k_d,
        varphi: Vec::new(),
        rate_bound: eps9 / (2.0 * eps10),
    }
}

fn base_constants(problem: &ProblemData<'_>, eps0: f64, eps: f64) -> Result<CertificateConstants, AnalysisError> {
    problem.check_eps0(eps0)?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(AnalysisError::Eps(eps));
    }
    if problem.mf.flagged {
        return Err(AnalysisError::NotStronglyConvex(problem.mf.value));
    }
    Ok(CertificateConstants {
        eps0,
        eps,
        rho: problem.spectral.rho,
        rho2: problem.spectral.rho2,
        m_f: problem.mf.value,
        label: if problem.mf.exact { "certified" } else { "estimated" },
        continuous: None,
        event: None,
    })
}

/// Continuous-certificate constants. `v1_0` fixes the invariant ball `D`,
/// on which the local curvature `M(D)` is then bounded.
pub fn compute_continuous_constants(
    problem: &ProblemData<'_>,
    eps0: f64,
    eps: f64,
    v1_0: f64,
) -> Result<CertificateConstants, AnalysisError> {
    let mut out = base_constants(problem, eps0, eps)?;
    let g = &problem.gains;
    let radius = (2.0 * v1_0.max(0.0) / (g.gamma * g.gamma * eps0 * (1.0 - eps0.sqrt()))).sqrt();
    let m_d = problem
        .objective
        .costs()
        .iter()
        .map(|c| c.curvature_on_set(radius, problem.xstar()))
        .fold(0.0, f64::max);
    out.continuous = Some(continuous_formulas(
        g,
        out.rho,
        out.rho2,
        out.m_f,
        m_d,
        eps0,
        eps,
        v1_0.max(0.0),
    ));
    Ok(out)
}

/// Event-certificate constants, including the threshold normalizers `ϖᵢ`.
pub fn compute_event_constants(
    problem: &ProblemData<'_>,
    eps0: f64,
    eps: f64,
    trigger: &TriggerParams,
) -> Result<CertificateConstants, AnalysisError> {
    let mut out = base_constants(problem, eps0, eps)?;
    let mbar = problem
        .objective
        .global_lipschitz()
        .ok_or(AnalysisError::MissingLipschitz)?;
    let k_d = trigger.k_d();
    if !(k_d > 0.0) {
        return Err(AnalysisError::KdNonPositive(k_d));
    }
    trigger.validate(problem.graph.n())?;
    let mut e = event_formulas(&problem.gains, out.rho, out.rho2, out.m_f, mbar, eps0, eps, k_d);
    e.varphi = VarphiConstants::compute(problem.graph, &problem.gains, eps0, e.eps8)?.values;
    out.event = Some(e);
    Ok(out)
}

/// Both certificates, as far as the objective supports them.
pub fn compute_all(
    problem: &ProblemData<'_>,
    eps0: f64,
    eps: f64,
    v1_0: f64,
    trigger: Option<&TriggerParams>,
) -> Result<CertificateConstants, AnalysisError> {
    let mut out = compute_continuous_constants(problem, eps0, eps, v1_0)?;
    if let Some(t) = trigger {
        out.event = compute_event_constants(problem, eps0, eps, t)?.event;
    }
    Ok(out)
}

/// Weights needed for the composite Lyapunov functions; absent weights leave
/// the corresponding values out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LyapunovWeights {
    /// `1 + εε₂/ε₁`.
    pub v2_factor: Option<f64>,
    pub eps7: Option<f64>,
    pub varphi: Option<Vec<f64>>,
}

impl LyapunovWeights {
    pub fn from_constants(c: &CertificateConstants) -> Self {
        Self {
            v2_factor: c.continuous.as_ref().map(|k| k.v2_factor(c.eps)),
            eps7: c.event.as_ref().map(|e| e.eps7),
            varphi: c.event.as_ref().map(|e| e.varphi.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovSample {
    pub t: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: Option<f64>,
    pub v1: f64,
    pub v2: Option<f64>,
    pub v3: Option<f64>,
}

/// Evaluates `W₁..W₄` and `V₁..V₃` about the equilibrium
/// `x̄ = 1 ⊗ x*`, `v̄ᵢ = −(α/θ)∇fᵢ(x*)`.
#[derive(Debug, Clone)]
pub struct LyapunovContext<'a> {
    objective: &'a GlobalObjective,
    laplacian: DMatrix<f64>,
    gains: GainParams,
    eps0: f64,
    eps: f64,
    pub xbar: DMatrix<f64>,
    pub vbar: DMatrix<f64>,
    grad_bar: DMatrix<f64>,
    f_bar: f64,
    pinv: DMatrix<f64>,
    kn: DMatrix<f64>,
    pub weights: LyapunovWeights,
}

/// `trace(Aᵀ P B)`, i.e. `aᵀ(P ⊗ I_p)b` for stacked row matrices.
fn kron_form(a: &DMatrix<f64>, p: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(&(p * b))
}

impl<'a> LyapunovContext<'a> {
    pub fn new(problem: &ProblemData<'a>, eps0: f64, eps: f64) -> Result<Self, AnalysisError> {
        problem.check_eps0(eps0)?;
        let obj = problem.objective;
        let n = obj.n();
        let xstar = problem.xstar();
        let xbar = DMatrix::from_fn(n, xstar.len(), |_, k| xstar[k]);
        let grad_bar = obj.stacked_gradient(&xbar);
        let vbar = &grad_bar * (-problem.gains.alpha / problem.gains.theta);
        Ok(Self {
            objective: obj,
            laplacian: problem.graph.laplacian().clone(),
            gains: problem.gains,
            eps0,
            eps,
            f_bar: obj.stacked_value(&xbar),
            xbar,
            vbar,
            grad_bar,
            pinv: problem.spectral.pseudo_inverse(),
            kn: problem.spectral.kn.clone(),
            weights: LyapunovWeights::default(),
        })
    }

    pub fn with_weights(mut self, weights: LyapunovWeights) -> Self {
        self.weights = weights;
        self
    }

    /// `W₁ = f(x) − f(x̄) − ∇f(x̄)ᵀ(x − x̄)`.
    pub fn w1(&self, x: &DMatrix<f64>) -> f64 {
        let dx = x - &self.xbar;
        self.objective.stacked_value(x) - self.f_bar - self.grad_bar.dot(&dx)
    }

    pub fn w2(&self, s: &SwarmState) -> f64 {
        let GainParams {
            alpha,
            beta,
            gamma,
            theta,
        } = self.gains;
        let e0 = self.eps0;
        let dx = &s.x - &self.xbar;
        let dv = &s.v - &self.vbar;
        0.5 * s.y.norm_squared()
            + gamma * gamma * e0 / 2.0 * dx.norm_squared()
            + gamma * e0 * dx.dot(&s.y)
            + theta * gamma * e0 / (2.0 * beta) * kron_form(&dv, &self.pinv, &dv)
            + theta * kron_form(&dv, &self.kn, &s.x)
            + alpha * beta / 2.0 * kron_form(&s.x, &self.laplacian, &s.x)
    }

    pub fn w3(&self, s: &SwarmState, w1: f64) -> f64 {
        let (alpha, eps) = (self.gains.alpha, self.eps);
        let dv = &s.v - &self.vbar;
        eps / (2.0 * alpha) * s.y.norm_squared()
            + eps * kron_form(&dv, &self.kn, &s.y)
            + eps * alpha / 2.0 * kron_form(&dv, &self.kn, &dv)
            + eps * w1
    }

    pub fn v1(&self, s: &SwarmState) -> f64 {
        self.gains.alpha * self.w1(&s.x) + self.w2(s)
    }

    pub fn sample(&self, s: &SwarmState, chi: Option<&[f64]>) -> LyapunovSample {
        let w1 = self.w1(&s.x);
        let w2 = self.w2(s);
        let w3 = self.w3(s, w1);
        let v1 = self.gains.alpha * w1 + w2;
        let w4 = self.weights.eps7.map(|e7| e7 * v1 + w3);
        let v3 = match (w4, self.weights.eps7, &self.weights.varphi, chi) {
            (Some(w4), Some(e7), Some(phi), Some(chi)) => {
                Some(w4 + e7 * phi.iter().zip(chi).map(|(p, c)| p * c).sum::<f64>())
            }
            _ => None,
        };
        LyapunovSample {
            t: s.t,
            w1,
            w2,
            w3,
            w4,
            v1,
            v2: self.weights.v2_factor.map(|f| f * v1 + w3),
            v3,
        }
    }
}

/// Appends Lyapunov columns to a trajectory and keeps the samples.
pub struct LyapunovObserver<'a> {
    pub context: LyapunovContext<'a>,
    pub samples: Vec<LyapunovSample>,
    event: bool,
}

impl<'a> LyapunovObserver<'a> {
    /// `event` selects whether `W₄` and `V₃` columns are emitted.
    pub fn new(context: LyapunovContext<'a>, event: bool) -> Self {
        Self {
            context,
            samples: Vec::new(),
            event,
        }
    }

    fn has_v2(&self) -> bool {
        self.context.weights.v2_factor.is_some()
    }

    fn has_event(&self) -> bool {
        self.event && self.context.weights.eps7.is_some() && self.context.weights.varphi.is_some()
    }

    pub fn series(&self, pick: impl Fn(&LyapunovSample) -> Option<f64>) -> Vec<f64> {
        self.samples.iter().filter_map(pick).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

impl Observer for LyapunovObserver<'_> {
    fn columns(&self) -> Vec<String> {
        let mut c: Vec<String> = ["W1", "W2", "W3", "V1"].map(String::from).into();
        if self.has_v2() {
            c.push("V2".into());
        }
        if self.has_event() {
            c.push("W4".into());
            c.push("V3".into());
        }
        c
    }

    fn observe(&mut self, state: &SwarmState, ctx: &SampleContext<'_>) -> Vec<f64> {
        let s = self.context.sample(state, ctx.chi);
        self.samples.push(s);
        let mut row = vec![s.w1, s.w2, s.w3, s.v1];
        if self.has_v2() {
            row.push(s.v2.unwrap_or(f64::NAN));
        }
        if self.has_event() {
            row.push(s.w4.unwrap_or(f64::NAN));
            row.push(s.v3.unwrap_or(f64::NAN));
        }
        row
    }
}

/// Largest per-step increase of a sequence.
pub fn max_increase(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

/// `max_t V(t) − V(0)e^{−rate·t}`; non-positive means the envelope holds.
pub fn envelope_excess(times: &[f64], values: &[f64], rate: f64) -> f64 {
    let (t0, v0) = (times[0], values[0]);
    times
        .iter()
        .zip(values)
        .map(|(t, v)| v - v0 * (-rate * (t - t0)).exp())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `‖xᵢ(t) − x*‖ ≤ sqrt(V(0)/c)·e^{−rate·t}` for the certificate's lower
/// constant `c` (`ε̃₁` or `ε̃₂`).
pub fn error_envelope(v0: f64, lower: f64, rate: f64, t: f64) -> f64 {
    (v0 / lower).sqrt() * (-rate * t).exp()
}

/// Errors below this are treated as floating-point noise by [`fit_rate`].
pub const NOISE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub window: (f64, f64),
    pub samples: usize,
    /// The window was cut short at the noise floor.
    pub truncated: bool,
}

/// Least-squares slope of `−ln e(t)` over `window`, defaulting to the middle
/// 60% of the sampled time range.
pub fn fit_rate(times: &[f64], errors: &[f64], window: Option<(f64, f64)>) -> Result<RateFit, AnalysisError> {
    let (lo, hi) = window.unwrap_or_else(|| {
        let (a, b) = (times[0], times[times.len() - 1]);
        (a + 0.2 * (b - a), a + 0.8 * (b - a))
    });
    let mut pts = Vec::new();
    let mut truncated = false;
    let mut end = hi;
    for (&t, &e) in times.iter().zip(errors) {
        if t < lo - 1e-12 || t > hi + 1e-12 {
            continue;
        }
        if !(e > NOISE_FLOOR) {
            truncated = true;
            break;
        }
        pts.push((t, -e.ln()));
        end = t;
    }
    if pts.len() < 2 {
        return Err(AnalysisError::TooFewSamples(pts.len()));
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(RateFit {
        rate: sxy / sxx,
        window: (lo, if truncated { end } else { hi }),
        samples: pts.len(),
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledConvexityReport {
    pub r: f64,
    pub iota: f64,
    pub m: f64,
    pub worst_margin: f64,
    /// Negative margin beyond tolerance: the curvature data is inconsistent.
    pub flagged: bool,
}

pub const COUPLED_CONVEXITY_TOL: f64 = 1e-9;

/// `m = min{m_f − 2M̄ι, ρ₂/(2r(1 + 1/ι²))}` with `ι = m_f/(4M̄)`.
pub fn coupled_modulus(mf: f64, mbar: f64, rho2: f64, r: f64) -> (f64, f64) {
    let iota = mf / (4.0 * mbar);
    let m = (mf - 2.0 * mbar * iota).min(rho2 / (2.0 * r * (1.0 + 1.0 / (iota * iota))));
    (m, iota)
}

/// Worst margin of
/// `(∇f(x) − ∇f(x̄))ᵀ(x − x̄) + r·xᵀ(L⊗I)x − m‖x − x̄‖²` over `samples`.
pub fn check_coupled_convexity(
    problem: &ProblemData<'_>,
    mbar: f64,
    r: f64,
    samples: &[DMatrix<f64>],
    exec: Execution,
) -> CoupledConvexityReport {
    let obj = problem.objective;
    let (m, iota) = coupled_modulus(problem.mf.value, mbar, problem.spectral.rho2, r);
    let xstar = problem.xstar();
    let xbar = DMatrix::from_fn(obj.n(), xstar.len(), |_, k| xstar[k]);
    let gbar = obj.stacked_gradient(&xbar);
    let margins = exec::map(exec, samples, |x| {
        let dx = x - &xbar;
        (obj.stacked_gradient(x) - &gbar).dot(&dx) + r * problem.graph.laplacian_form(x) - m * dx.norm_squared()
    });
    let worst_margin = margins.into_iter().fold(f64::INFINITY, f64::min);
    CoupledConvexityReport {
        r,
        iota,
        m,
        worst_margin,
        flagged: worst_margin < -COUPLED_CONVEXITY_TOL,
    }
}

/// `r = (αγε₀ − θ)/(αγε₀)`, the instance behind `m₁`.
pub fn coupling_r_continuous(gains: &GainParams, eps0: f64) -> f64 {
    gains.margin(eps0) / (gains.alpha * gains.gamma * eps0)
}

/// `r = (αγε₀ − θ)β/(8α)`, the instance behind `m₂`.
pub fn coupling_r_event(gains: &GainParams, eps0: f64) -> f64 {
    gains.margin(eps0) * gains.beta / (8.0 * gains.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::quadratic_linear_family;
    use crate::dynamics::equilibrium_state;

    fn scenario3() -> (NetworkGraph, GlobalObjective, GainParams) {
        let c = [
            [4.7471, 1.2843, 0.5836, 1.2843, 5.0861, -2.4209, 0.5836, -2.4209, 2.2270],
            [
                1.3528, 0.5141, -2.1684, 0.5141, 1.2333, -0.5857, -2.1684, -0.5857, 4.0361,
            ],
            [
                1.0223, 1.2630, -0.4907, 1.2630, 2.1391, -0.1378, -0.4907, -0.1378, 0.7207,
            ],
        ];
        let a = [
            [0.6132, -0.5278, 1.2416],
            [-0.1576, -1.3736, 0.8708],
            [-1.5685, -1.8443, 0.2884],
        ];
        let h: Vec<_> = c.iter().map(|m| DMatrix::from_row_slice(3, 3, m)).collect();
        let l: Vec<_> = a.iter().map(|v| DVector::from_row_slice(v)).collect();
        let obj = GlobalObjective::new(quadratic_linear_family(&h, &l).unwrap()).unwrap();
        (NetworkGraph::path(3), obj, GainParams::new(2.0, 2.0, 6.0, 3.5).unwrap())
    }

    #[test]
    fn continuous_formulas_by_hand() {
        let g = GainParams::new(2.0, 2.0, 6.0, 5.0).unwrap();
        let (eps0, eps, rho, rho2, mf, md) = (0.75, 0.1, 3.0, 1.0, 1.0, 2.0);
        let c = continuous_formulas(&g, rho, rho2, mf, md, eps0, eps, 10.0);
        // αγε₀ = 9, margin 4.
        let m1 = (0.5f64).min(1.0 * 1.0 * 9.0 / (2.0 * 4.0 * (1.0 + 64.0)));
        assert!((c.m1 - m1).abs() < 1e-15);
        let eps1 = (6.0 * 0.25f64).min(9.0 * m1);
        assert!((c.eps1 - eps1).abs() < 1e-15);
        let eps2 = (3.0 + 36.0 / 5.0 + 5.0 / 4.0f64).max(4.0 * 4.0 / 5.0);
        assert!((c.eps2 - eps2).abs() < 1e-12);
        let eps3 = eps1.min(0.25);
        assert_eq!(c.eps3, eps3);
        let w = 1.0 + eps * eps2 / eps1;
        let eps4 = (w + 0.05f64)
            .max(w * (36.0 * 0.75 + 12.0 + 2.0) + 0.1)
            .max(w * 5.0 * 6.0 * 0.75 / 2.0 + 0.2);
        assert!((c.eps4 - eps4).abs() < 1e-10);
        assert!((c.rate_bound - eps3 / (2.0 * eps4)).abs() < 1e-15);
        assert!((c.d_radius.powi(2) - 20.0 / (36.0 * 0.75 * (1.0 - 0.75f64.sqrt()))).abs() < 1e-10);
        assert!(c.m1 <= mf / 2.0);
    }

    #[test]
    fn event_formulas_relations() {
        let g = GainParams::new(2.0, 2.0, 6.0, 3.5).unwrap();
        let e = event_formulas(&g, 3.0, 1.0, 1.5, 7.0, 0.7, 0.1, 0.5);
        assert!(e.eps7 > 1.0);
        assert!(e.eps8 < 0.1 / 4.0);
        assert!((e.eps7 - (1.0 + 0.1 * e.eps6 / e.eps5)).abs() < 1e-15);
        assert!(e.eps10 > 1.0);
        assert!(e.eps9 <= e.k_d);
    }

    #[test]
    fn scenario3_constants_positive() {
        let (g, obj, gains) = scenario3();
        let problem = ProblemData::new(&g, &obj, gains, Execution::Sequential).unwrap();
        assert!(problem.mf.exact && !problem.mf.flagged);
        let eps0 = default_eps0(&gains);
        let s0 = SwarmState::seeded_box(3, 3, 1, -5.0, 5.0);
        let v1 = LyapunovContext::new(&problem, eps0, DEFAULT_EPS).unwrap().v1(&s0);
        let c = compute_all(&problem, eps0, DEFAULT_EPS, v1, Some(&TriggerParams::defaults(3))).unwrap();
        assert!(c.annotations_hold(), "{c:?}");
        assert_eq!(c.label, "certified");
        let report = c.report();
        assert!(report.entries.iter().all(|e| e.value.is_finite()));
        assert_eq!(report.notes.len(), 1);
    }

    #[test]
    fn rejects_bad_design_parameters() {
        let (g, obj, gains) = scenario3();
        let problem = ProblemData::new(&g, &obj, gains, Execution::Sequential).unwrap();
        let floor = gains.eps0_floor();
        assert!(matches!(
            compute_continuous_constants(&problem, floor, 0.1, 1.0),
            Err(AnalysisError::Eps0Range { .. })
        ));
        assert!(matches!(
            compute_continuous_constants(&problem, 0.8, 0.0, 1.0),
            Err(AnalysisError::Eps(_))
        ));
        let mut p = TriggerParams::defaults(3);
        p.kappa = vec![0.4; 3];
        p.phi_rate = vec![1.0; 3];
        assert!(compute_event_constants(&problem, 0.8, 0.1, &p).is_err());
    }

    #[test]
    fn lyapunov_vanishes_at_equilibrium() {
        let (g, obj, gains) = scenario3();
        let problem = ProblemData::new(&g, &obj, gains, Execution::Sequential).unwrap();
        let ctx = LyapunovContext::new(&problem, 0.8, 0.1)
            .unwrap()
            .with_weights(LyapunovWeights {
                v2_factor: Some(2.0),
                eps7: Some(3.0),
                varphi: Some(vec![1.0, 2.0, 3.0]),
            });
        let eq = equilibrium_state(&obj, &gains, problem.xstar());
        let s = ctx.sample(&eq, Some(&[0.5, 0.5, 0.5]));
        for v in [s.w1, s.w2, s.w3, s.v1, s.v2.unwrap(), s.w4.unwrap()] {
            assert!(v.abs() < 1e-12, "{s:?}");
        }
        assert!((s.v3.unwrap() - 3.0 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_cases() {
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let exp: Vec<f64> = times.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let f = fit_rate(&times, &exp, None).unwrap();
        assert!((f.rate - 0.7).abs() < 1e-6 && !f.truncated);
        assert!((f.window.0 - 2.0).abs() < 1e-12 && (f.window.1 - 8.0).abs() < 1e-12);
        let flat = vec![0.2; times.len()];
        assert!(fit_rate(&times, &flat, None).unwrap().rate.abs() < 1e-12);
        let fast: Vec<f64> = times.iter().map(|t| (-10.0 * t).exp()).collect();
        let f = fit_rate(&times, &fast, None).unwrap();
        assert!(f.truncated && (f.rate - 10.0).abs() < 1e-6);
        let dead: Vec<f64> = times.iter().map(|_| 0.0).collect();
        assert!(fit_rate(&times, &dead, None).is_err());
    }

    #[test]
    fn coupled_convexity_consensus_point_and_monotone_m() {
        let (g, obj, gains) = scenario3();
        let problem = ProblemData::new(&g, &obj, gains, Execution::Sequential).unwrap();
        let mbar = obj.global_lipschitz().unwrap();
        let xstar = problem.xstar().clone();
        let at = DMatrix::from_fn(3, 3, |_, k| xstar[k]);
        let rep = check_coupled_convexity(&problem, mbar, 0.3, &[at], Execution::Sequential);
        assert!(rep.worst_margin.abs() < 1e-12);
        let (m1, _) = coupled_modulus(problem.mf.value, mbar, problem.spectral.rho2, 0.3);
        let (m2, _) = coupled_modulus(problem.mf.value, mbar, problem.spectral.rho2, 0.6);
        assert!(m2 <= m1);
    }
}
