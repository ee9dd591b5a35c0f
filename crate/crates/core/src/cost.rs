//! Private convex cost functions, their curvature bounds, and the
//! centralized minimizer oracle used to grade the distributed dynamics.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use thiserror::Error;

use crate::exec::{self, Execution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("cost {index}: matrix is {rows}x{cols}, expected {dim}x{dim}")]
    Shape {
        index: usize,
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error("cost {index}: vector has length {len}, expected {dim}")]
    VectorLength { index: usize, len: usize, dim: usize },
    #[error("cost {index}: matrix is not symmetric (max asymmetry {asymmetry:e})")]
    Asymmetric { index: usize, asymmetry: f64 },
    #[error("cost {index}: matrix is indefinite, eigenvalues {eigenvalues:?}")]
    Indefinite { index: usize, eigenvalues: Vec<f64> },
    #[error("matrices and vectors differ in count ({0} vs {1})")]
    CountMismatch(usize, usize),
    #[error("no cost functions given")]
    Empty,
    #[error("costs have mixed dimensions")]
    MixedDimensions,
    #[error("non-finite evaluation at sample {sample}")]
    NonFinite { sample: usize },
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("minimizer descent stalled after {iterations} iterations with gradient residual {residual:e}")]
    DescentStalled { iterations: usize, residual: f64 },
}

/// User-supplied smooth cost for the `Custom` kind.
pub trait SmoothCost: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

#[derive(Clone)]
pub enum CostKind {
    /// `½ (x - a)ᵀ A (x - a)`
    Quadratic {
        hessian: DMatrix<f64>,
        center: DVector<f64>,
    },
    /// `½ xᵀ C x + aᵀ x`
    QuadraticLinear {
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
    },
    /// `‖x - b‖⁴`
    Quartic {
        center: DVector<f64>,
    },
    Custom(Arc<dyn SmoothCost>),
}

impl fmt::Debug for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Quadratic { hessian, center } => f
                .debug_struct("Quadratic")
                .field("hessian", hessian)
                .field("center", center)
                .finish(),
            Self::QuadraticLinear { hessian, linear } => f
                .debug_struct("QuadraticLinear")
                .field("hessian", hessian)
                .field("linear", linear)
                .finish(),
            Self::Quartic { center } => f.debug_struct("Quartic").field("center", center).finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Convexity {
    Convex,
    StronglyConvex(f64),
}

#[derive(Debug, Clone)]
pub struct CostFunction {
    dim: usize,
    kind: CostKind,
    global_lipschitz: Option<f64>,
    convexity: Convexity,
}

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_RTOL: f64 = 1e-12;

fn check_symmetric_psd(index: usize, m: &DMatrix<f64>, dim: usize) -> Result<(f64, f64), CostError> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(CostError::Shape {
            index,
            rows: m.nrows(),
            cols: m.ncols(),
            dim,
        });
    }
    let asymmetry = (m - m.transpose()).amax();
    if asymmetry > SYMMETRY_TOL * m.amax().max(1.0) {
        return Err(CostError::Asymmetric { index, asymmetry });
    }
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if lmin < -PSD_RTOL * lmax.abs().max(1.0) {
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(f64::total_cmp);
        return Err(CostError::Indefinite { index, eigenvalues });
    }
    Ok((lmin.max(0.0), lmax.max(0.0)))
}

fn quadratic_convexity(lmin: f64, lmax: f64) -> Convexity {
    if lmin > PSD_RTOL * lmax.max(1.0) {
        Convexity::StronglyConvex(lmin)
    } else {
        Convexity::Convex
    }
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Builds `fᵢ(x) = ½ (x - aᵢ)ᵀ Aᵢ (x - aᵢ)` for each pair.
pub fn quadratic_family(matrices: &[DMatrix<f64>], shifts: &[DVector<f64>]) -> Result<Vec<CostFunction>, CostError> {
    if matrices.len() != shifts.len() {
        return Err(CostError::CountMismatch(matrices.len(), shifts.len()));
    }
    matrices
        .iter()
        .zip(shifts)
        .enumerate()
        .map(|(index, (a, shift))| {
            let dim = shift.len();
            let (lmin, lmax) = check_symmetric_psd(index, a, dim)?;
            Ok(CostFunction {
                dim,
                kind: CostKind::Quadratic {
                    hessian: a.clone(),
                    center: shift.clone(),
                },
                global_lipschitz: Some(lmax),
                convexity: quadratic_convexity(lmin, lmax),
            })
        })
        .collect()
}

/// Builds `fᵢ(x) = ½ xᵀ Cᵢ x + aᵢᵀ x` for each pair.
pub fn quadratic_linear_family(
    matrices: &[DMatrix<f64>],
    linear: &[DVector<f64>],
) -> Result<Vec<CostFunction>, CostError> {
    if matrices.len() != linear.len() {
        return Err(CostError::CountMismatch(matrices.len(), linear.len()));
    }
    matrices
        .iter()
        .zip(linear)
        .enumerate()
        .map(|(index, (c, a))| {
            let dim = a.len();
            let (lmin, lmax) = check_symmetric_psd(index, c, dim)?;
            Ok(CostFunction {
                dim,
                kind: CostKind::QuadraticLinear {
                    hessian: c.clone(),
                    linear: a.clone(),
                },
                global_lipschitz: Some(lmax),
                convexity: quadratic_convexity(lmin, lmax),
            })
        })
        .collect()
}

/// Builds `fᵢ(x) = ‖x - bᵢ‖⁴`. These are not globally gradient-Lipschitz.
pub fn quartic_family(centers: &[DVector<f64>]) -> Vec<CostFunction> {
    centers
        .iter()
        .map(|b| CostFunction {
            dim: b.len(),
            kind: CostKind::Quartic { center: b.clone() },
            global_lipschitz: None,
            convexity: Convexity::Convex,
        })
        .collect()
}

impl CostFunction {
    pub fn custom(
        dim: usize,
        cost: impl SmoothCost + 'static,
        global_lipschitz: Option<f64>,
        convexity: Convexity,
    ) -> Self {
        Self {
            dim,
            kind: CostKind::Custom(Arc::new(cost)),
            global_lipschitz,
            convexity,
        }
    }

    /// Sets an explicit global gradient-Lipschitz constant `M̄ᵢ`.
    pub fn with_lipschitz_override(mut self, lipschitz: f64) -> Self {
        self.global_lipschitz = Some(lipschitz);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn global_lipschitz(&self) -> Option<f64> {
        self.global_lipschitz
    }

    pub fn convexity(&self) -> Convexity {
        self.convexity
    }

    /// Constant Hessian for the quadratic kinds.
    pub fn quadratic_hessian(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            CostKind::Quadratic { hessian, .. } | CostKind::QuadraticLinear { hessian, .. } => Some(hessian),
            _ => None,
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            CostKind::Quadratic { hessian, center } => {
                let d = x - center;
                0.5 * d.dot(&(hessian * &d))
            }
            CostKind::QuadraticLinear { hessian, linear } => 0.5 * x.dot(&(hessian * x)) + linear.dot(x),
            CostKind::Quartic { center } => (x - center).norm_squared().powi(2),
            CostKind::Custom(c) => c.value(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            CostKind::Quadratic { hessian, center } => hessian * (x - center),
            CostKind::QuadraticLinear { hessian, linear } => hessian * x + linear,
            CostKind::Quartic { center } => {
                let d = x - center;
                let s = d.norm_squared();
                d * (4.0 * s)
            }
            CostKind::Custom(c) => c.gradient(x),
        }
    }

    /// Upper bound on the gradient-Lipschitz constant `Mᵢ(D)` over the ball
    /// `D = B(center, radius)`.
    pub fn curvature_on_set(&self, radius: f64, center: &DVector<f64>) -> f64 {
        let radius = radius.max(0.0);
        match &self.kind {
            CostKind::Quadratic { hessian, .. } | CostKind::QuadraticLinear { hessian, .. } => lambda_max(hessian),
            // Hessian 4‖z‖²I + 8zzᵀ has norm 12‖z‖², largest at the far edge.
            CostKind::Quartic { center: b } => {
                let reach = radius + (center - b).norm();
                12.0 * reach * reach
            }
            CostKind::Custom(_) => self.sampled_hessian_norm(radius, center),
        }
    }

    fn sampled_hessian_norm(&self, radius: f64, center: &DVector<f64>) -> f64 {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_cafe);
        let mut points = vec![center.clone()];
        for _ in 0..64 {
            let dir = DVector::from_fn(self.dim, |_, _| rng.gen_range(-1.0..1.0));
            let norm = dir.norm();
            if norm > 0.0 {
                let scale = radius * rng.gen::<f64>().cbrt() / norm;
                points.push(center + dir * scale);
            }
        }
        points
            .iter()
            .map(|x| fd_hessian_norm(self, x, 1e-5))
            .fold(0.0, f64::max)
    }
}

fn fd_hessian_norm(f: &CostFunction, x: &DVector<f64>, h: f64) -> f64 {
    let p = f.dim;
    let mut hess = DMatrix::zeros(p, p);
    for k in 0..p {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[k] += h;
        minus[k] -= h;
        let col = (f.gradient(&plus) - f.gradient(&minus)) / (2.0 * h);
        hess.set_column(k, &col);
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    eig.eigenvalues.iter().fold(0.0, |m, l| m.max(l.abs()))
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(f: &CostFunction, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |k, _| {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[k] += h;
        minus[k] -= h;
        (f.value(&plus) - f.value(&minus)) / (2.0 * h)
    })
}

/// Default finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Largest relative disagreement `‖∇f - Δ_h f‖ / max(1, ‖∇f‖)` over samples.
pub fn gradient_check(f: &CostFunction, samples: &[DVector<f64>], h: f64) -> Result<f64, CostError> {
    if !(h > 0.0) {
        return Err(CostError::BadStep(h));
    }
    let mut worst: f64 = 0.0;
    for (sample, x) in samples.iter().enumerate() {
        let analytic = f.gradient(x);
        let numeric = central_difference(f, x, h);
        let err = (&analytic - &numeric).norm() / analytic.norm().max(1.0);
        if !err.is_finite() {
            return Err(CostError::NonFinite { sample });
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// `f(x) = Σ fᵢ(x)` together with an optional restricted convexity modulus.
#[derive(Debug, Clone)]
pub struct GlobalObjective {
    costs: Vec<CostFunction>,
    pub restricted_convexity: Option<f64>,
}

impl GlobalObjective {
    pub fn new(costs: Vec<CostFunction>) -> Result<Self, CostError> {
        let dim = costs.first().ok_or(CostError::Empty)?.dim;
        if costs.iter().any(|c| c.dim != dim) {
            return Err(CostError::MixedDimensions);
        }
        Ok(Self {
            costs,
            restricted_convexity: None,
        })
    }

    pub fn costs(&self) -> &[CostFunction] {
        &self.costs
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn dim(&self) -> usize {
        self.costs[0].dim
    }

    pub fn all_quadratic(&self) -> bool {
        self.costs.iter().all(|c| c.quadratic_hessian().is_some())
    }

    /// `M̄ = maxᵢ M̄ᵢ`, if every cost has a global constant.
    pub fn global_lipschitz(&self) -> Option<f64> {
        self.costs
            .iter()
            .map(CostFunction::global_lipschitz)
            .try_fold(0.0_f64, |acc, m| m.map(|m| acc.max(m)))
    }

    /// `Σᵢ fᵢ(x)` at a common point.
    pub fn value_at(&self, x: &DVector<f64>) -> f64 {
        self.costs.iter().map(|c| c.value(x)).sum()
    }

    /// `Σᵢ ∇fᵢ(x)` at a common point.
    pub fn gradient_sum(&self, x: &DVector<f64>) -> DVector<f64> {
        self.costs
            .iter()
            .fold(DVector::zeros(self.dim()), |acc, c| acc + c.gradient(x))
    }

    /// `f(𝐱) = Σᵢ fᵢ(xᵢ)` for a stacked n×p state.
    pub fn stacked_value(&self, x: &DMatrix<f64>) -> f64 {
        self.costs
            .iter()
            .enumerate()
            .map(|(i, c)| c.value(&x.row(i).transpose()))
            .sum()
    }

    /// `∇f(𝐱)` as an n×p matrix, row i holding `∇fᵢ(xᵢ)`.
    pub fn stacked_gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n(), self.dim());
        for (i, c) in self.costs.iter().enumerate() {
            let g = c.gradient(&x.row(i).transpose());
            out.set_row(i, &g.transpose());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinimizerMethod {
    LinearSolve,
    Descent,
}

#[derive(Debug, Clone)]
pub struct Minimizer {
    pub point: DVector<f64>,
    /// `‖Σᵢ ∇fᵢ(x*)‖`.
    pub residual: f64,
    pub unique: bool,
    pub method: MinimizerMethod,
}

/// Target residual for the closed-form path.
pub const LINEAR_SOLVE_TOL: f64 = 1e-10;
/// Target residual for the descent fallback.
pub const DESCENT_TOL: f64 = 1e-10;
const DESCENT_MAX_ITERS: usize = 10_000;

/// Centralized minimizer of `Σᵢ fᵢ`, independent of the multi-agent dynamics.
pub fn minimizer_oracle(obj: &GlobalObjective) -> Result<Minimizer, CostError> {
    if obj.all_quadratic() {
        Ok(quadratic_minimizer(obj))
    } else {
        descent_minimizer(obj)
    }
}

fn quadratic_minimizer(obj: &GlobalObjective) -> Minimizer {
    let p = obj.dim();
    let mut hessian = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for c in obj.costs() {
        match c.kind() {
            CostKind::Quadratic { hessian: a, center } => {
                hessian += a;
                rhs += a * center;
            }
            CostKind::QuadraticLinear { hessian: a, linear } => {
                hessian += a;
                rhs -= linear;
            }
            _ => unreachable!("checked all_quadratic"),
        }
    }
    let eig = SymmetricEigen::new(hessian.clone());
    let lmax = eig.eigenvalues.amax();
    let cutoff = 1e-12 * lmax.max(1.0);
    let unique = eig.eigenvalues.iter().all(|l| *l > cutoff);
    let point = if unique {
        hessian
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .unwrap_or_else(|| pseudo_solve(&eig, &rhs, cutoff))
    } else {
        pseudo_solve(&eig, &rhs, cutoff)
    };
    let residual = obj.gradient_sum(&point).norm();
    Minimizer {
        point,
        residual,
        unique,
        method: MinimizerMethod::LinearSolve,
    }
}

fn pseudo_solve(eig: &SymmetricEigen<f64, nalgebra::Dyn>, rhs: &DVector<f64>, cutoff: f64) -> DVector<f64> {
    let mut out = DVector::zeros(rhs.len());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cutoff {
            let q = eig.eigenvectors.column(k);
            out += q * (q.dot(rhs) / l);
        }
    }
    out
}

fn descent_minimizer(obj: &GlobalObjective) -> Result<Minimizer, CostError> {
    let p = obj.dim();
    let n = obj.n() as f64;
    let mut x = obj
        .costs()
        .iter()
        .filter_map(|c| match c.kind() {
            CostKind::Quadratic { center, .. } | CostKind::Quartic { center } => Some(center.clone()),
            _ => None,
        })
        .fold(DVector::zeros(p), |acc, c| acc + c)
        / n;
    let mut value = obj.value_at(&x);
    let mut grad = obj.gradient_sum(&x);
    for iterations in 0..DESCENT_MAX_ITERS {
        let gnorm = grad.norm();
        if gnorm <= DESCENT_TOL {
            return Ok(Minimizer {
                point: x,
                residual: gnorm,
                unique: true,
                method: MinimizerMethod::Descent,
            });
        }
        let direction = newton_direction(obj, &x, &grad).unwrap_or_else(|| -&grad);
        let slope = grad.dot(&direction);
        let mut t = 1.0;
        // Near the minimum the value decrease falls below rounding, so a
        // shrinking gradient also counts as progress.
        loop {
            let trial = &x + &direction * t;
            let trial_value = obj.value_at(&trial);
            let trial_grad = obj.gradient_sum(&trial);
            if trial_value <= value + 1e-4 * t * slope || trial_grad.norm() < (1.0 - 1e-4 * t) * gnorm {
                x = trial;
                value = trial_value;
                grad = trial_grad;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return Err(CostError::DescentStalled {
                    iterations,
                    residual: gnorm,
                });
            }
        }
    }
    Err(CostError::DescentStalled {
        iterations: DESCENT_MAX_ITERS,
        residual: grad.norm(),
    })
}

/// Newton step from a central-difference Hessian of the gradient sum, or
/// `None` when that Hessian is not positive definite.
fn newton_direction(obj: &GlobalObjective, x: &DVector<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let p = x.len();
    let h = 1e-6 * (1.0 + x.amax());
    let mut hess = DMatrix::zeros(p, p);
    for k in 0..p {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[k] += h;
        minus[k] -= h;
        hess.set_column(k, &((obj.gradient_sum(&plus) - obj.gradient_sum(&minus)) / (2.0 * h)));
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    let d = sym.cholesky()?.solve(&(-grad));
    (grad.dot(&d) < 0.0).then_some(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfEstimate {
    pub value: f64,
    /// Computed as `λ_min(Σ Hessians)` rather than sampled.
    pub exact: bool,
    /// The estimate is not positive: restricted strong convexity fails.
    pub flagged: bool,
}

/// Restricted strong convexity modulus `m_f` of `Σᵢ fᵢ` about `xstar`.
pub fn estimate_mf(
    obj: &GlobalObjective,
    xstar: &DVector<f64>,
    samples: &[DVector<f64>],
    exec: Execution,
) -> MfEstimate {
    if obj.all_quadratic() {
        let p = obj.dim();
        let total = obj
            .costs()
            .iter()
            .filter_map(CostFunction::quadratic_hessian)
            .fold(DMatrix::zeros(p, p), |acc, h| acc + h);
        let eig = SymmetricEigen::new(total);
        let value = eig.eigenvalues.min();
        let scale = eig.eigenvalues.amax().max(1.0);
        return MfEstimate {
            value,
            exact: true,
            flagged: value <= 1e-10 * scale,
        };
    }
    let gstar = obj.gradient_sum(xstar);
    let ratios = exec::map(exec, samples, |x| {
        let d = x - xstar;
        let d2 = d.norm_squared();
        if d2 == 0.0 {
            f64::INFINITY
        } else {
            (obj.gradient_sum(x) - &gstar).dot(&d) / d2
        }
    });
    let value = ratios.into_iter().fold(f64::INFINITY, f64::min);
    MfEstimate {
        value,
        exact: false,
        flagged: !(value > 0.0) || !value.is_finite(),
    }
}

/// Sample points for `estimate_mf`: random directions at log-spaced radii
/// around `center`, so both the local curvature and the far field are probed.
pub fn shell_samples(
    rng: &mut impl Rng,
    center: &DVector<f64>,
    count: usize,
    r_min: f64,
    r_max: f64,
) -> Vec<DVector<f64>> {
    let p = center.len();
    (0..count)
        .map(|k| {
            let frac = if count > 1 { k as f64 / (count - 1) as f64 } else { 0.0 };
            let radius = r_min * (r_max / r_min).powf(frac);
            let dir = loop {
                let d = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
                let n = d.norm();
                if n > 1e-3 {
                    break d / n;
                }
            };
            center + dir * radius
        })
        .collect()
}

/// Uniform samples in the box `[lo, hi]^p`.
pub fn box_samples(rng: &mut impl Rng, p: usize, count: usize, lo: f64, hi: f64) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| DVector::from_fn(p, |_, _| rng.gen_range(lo..hi)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn identity_quadratic_value_and_gradient() {
        let f = &quadratic_family(&[DMatrix::identity(3, 3)], &[DVector::zeros(3)]).unwrap()[0];
        let x = v(&[1.0, 1.0, 1.0]);
        assert_eq!(f.value(&x), 1.5);
        assert_eq!(f.gradient(&x), x);
        assert_eq!(f.global_lipschitz(), Some(1.0));
        assert_eq!(f.convexity(), Convexity::StronglyConvex(1.0));
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            quadratic_family(&[asym], &[DVector::zeros(2)]),
            Err(CostError::Asymmetric { index: 0, .. })
        ));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        match quadratic_family(&[indef], &[DVector::zeros(2)]) {
            Err(CostError::Indefinite { eigenvalues, .. }) => {
                assert_eq!(eigenvalues, vec![-2.0, 1.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            quadratic_family(&[DMatrix::identity(2, 2)], &[DVector::zeros(3)]),
            Err(CostError::Shape { .. })
        ));
    }

    #[test]
    fn quartic_gradient() {
        let b = v(&[2.5, 2.0, 3.0]);
        let f = &quartic_family(&[b.clone()])[0];
        assert_eq!(f.gradient(&b), DVector::zeros(3));
        let x = &b + v(&[1.0, 0.0, 0.0]);
        assert_eq!(f.gradient(&x), v(&[4.0, 0.0, 0.0]));
        assert!(f.global_lipschitz().is_none());
        let fd = central_difference(f, &x, 1e-6);
        assert!((fd - v(&[4.0, 0.0, 0.0])).norm() < 1e-6);
    }

    #[test]
    fn quartic_curvature_bounds() {
        let b = v(&[0.0, 0.0, 0.0]);
        let f = &quartic_family(&[b.clone()])[0];
        assert_eq!(f.curvature_on_set(1.0, &b), 12.0);
        let c = v(&[1.0, 1.0, 0.0]);
        assert!((f.curvature_on_set(0.0, &c) - 24.0).abs() < 1e-12);
        // The bound dominates the finite-difference Hessian norm on the ball edge.
        let edge = v(&[2.0, 0.0, 0.0]);
        assert!(fd_hessian_norm(f, &edge, 1e-5) <= f.curvature_on_set(2.0, &b) + 1e-4);
    }

    #[test]
    fn quadratic_curvature_is_radius_independent() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let f = &quadratic_family(&[a], &[DVector::zeros(2)]).unwrap()[0];
        let c = DVector::zeros(2);
        assert!((f.curvature_on_set(0.1, &c) - 3.0).abs() < 1e-12);
        assert!((f.curvature_on_set(100.0, &c) - 3.0).abs() < 1e-12);
    }

    struct Constant(f64);
    impl SmoothCost for Constant {
        fn value(&self, _: &DVector<f64>) -> f64 {
            self.0
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(x.len())
        }
    }

    #[test]
    fn gradient_check_constant_cost_is_zero() {
        let f = CostFunction::custom(3, Constant(4.2), Some(0.0), Convexity::Convex);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = box_samples(&mut rng, 3, 20, -5.0, 5.0);
        assert_eq!(gradient_check(&f, &samples, 1e-6).unwrap(), 0.0);
        assert!(matches!(gradient_check(&f, &samples, 0.0), Err(CostError::BadStep(_))));
        assert_eq!(f.curvature_on_set(1.0, &DVector::zeros(3)), 0.0);
    }

    struct Broken;
    impl SmoothCost for Broken {
        fn value(&self, x: &DVector<f64>) -> f64 {
            if x[0] > 0.0 {
                f64::NAN
            } else {
                0.0
            }
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(x.len())
        }
    }

    #[test]
    fn gradient_check_names_nonfinite_sample() {
        let f = CostFunction::custom(1, Broken, None, Convexity::Convex);
        let samples = vec![v(&[-1.0]), v(&[-2.0]), v(&[3.0])];
        assert_eq!(
            gradient_check(&f, &samples, 1e-6),
            Err(CostError::NonFinite { sample: 2 })
        );
    }

    #[test]
    fn single_agent_minimizer_is_center() {
        let a = v(&[0.3, -1.0, 2.0]);
        let obj = GlobalObjective::new(quadratic_family(&[DMatrix::identity(3, 3)], &[a.clone()]).unwrap()).unwrap();
        let m = minimizer_oracle(&obj).unwrap();
        assert!((m.point - a).norm() < 1e-14);
        assert!(m.unique);
        assert_eq!(m.method, MinimizerMethod::LinearSolve);
    }

    #[test]
    fn singular_quadratic_flags_non_uniqueness() {
        // Both Hessians annihilate (1, 1): a line of minimizers.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let obj =
            GlobalObjective::new(quadratic_family(&[a.clone(), a * 2.0], &[v(&[0.0, 1.0]), v(&[1.0, 0.0])]).unwrap())
                .unwrap();
        let m = minimizer_oracle(&obj).unwrap();
        assert!(!m.unique);
        assert!(m.residual <= LINEAR_SOLVE_TOL);
    }

    #[test]
    fn estimate_mf_identity_and_linear() {
        let obj =
            GlobalObjective::new(quadratic_family(&[DMatrix::identity(2, 2)], &[DVector::zeros(2)]).unwrap()).unwrap();
        let est = estimate_mf(&obj, &DVector::zeros(2), &[], Execution::Sequential);
        assert_eq!(
            est,
            MfEstimate {
                value: 1.0,
                exact: true,
                flagged: false
            }
        );

        let linear = quadratic_linear_family(
            &[DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)],
            &[v(&[1.0, 2.0]), v(&[-1.0, 0.5])],
        )
        .unwrap();
        let obj = GlobalObjective::new(linear).unwrap();
        let est = estimate_mf(&obj, &DVector::zeros(2), &[], Execution::Sequential);
        assert_eq!(est.value, 0.0);
        assert!(est.flagged);
    }

    #[test]
    fn global_lipschitz_requires_every_cost() {
        let mut costs = quadratic_family(&[DMatrix::identity(1, 1) * 2.0], &[v(&[0.0])]).unwrap();
        costs.extend(quartic_family(&[v(&[1.0])]));
        let obj = GlobalObjective::new(costs.clone()).unwrap();
        assert_eq!(obj.global_lipschitz(), None);
        costs[1] = costs[1].clone().with_lipschitz_override(7.0);
        let obj = GlobalObjective::new(costs).unwrap();
        assert_eq!(obj.global_lipschitz(), Some(7.0));
    }
}
