//! Weighted undirected communication graphs and the Laplacian spectral data
//! that every convergence constant is built from.
//!
//! Graphs are stored dense. The networks simulated here have tens of agents
//! at most, so an O(n³) symmetric eigensolve is cheap and exact enough for
//! the constants derived from it.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("edge ({i}, {j}) has nonpositive weight {weight}")]
    NonPositiveWeight { i: usize, j: usize, weight: f64 },
    #[error("edge ({0}, {1}) is listed more than once")]
    DuplicateEdge(usize, usize),
    #[error("edge ({i}, {j}) is out of range for {n} agents")]
    OutOfRange { i: usize, j: usize, n: usize },
    #[error("graph has no agents")]
    Empty,
    #[error("graph is disconnected; components: {}", format_components(.0))]
    Disconnected(Vec<Vec<usize>>),
    #[error("a single-agent graph has no positive Laplacian eigenvalue")]
    SingleVertex,
}

fn format_components(components: &[Vec<usize>]) -> String {
    components
        .iter()
        .map(|c| {
            let ids: Vec<String> = c.iter().map(|i| i.to_string()).collect();
            format!("{{{}}}", ids.join(", "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// How agent indices in an edge list are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexBase {
    #[default]
    Zero,
    One,
}

/// A weighted undirected graph with its Laplacian `L = Deg - A`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    n: usize,
    adjacency: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    degrees: DVector<f64>,
}

impl NetworkGraph {
    /// Builds a graph on `n` agents from `(i, j, weight)` triples. Each edge is
    /// entered once and mirrored into both `a_ij` and `a_ji`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], base: IndexBase) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let offset = match base {
            IndexBase::Zero => 0,
            IndexBase::One => 1,
        };
        let mut adjacency = DMatrix::zeros(n, n);
        let mut seen = BTreeSet::new();
        for &(i_raw, j_raw, weight) in edges {
            let (i, j) = match (i_raw.checked_sub(offset), j_raw.checked_sub(offset)) {
                (Some(i), Some(j)) if i < n && j < n => (i, j),
                _ => return Err(GraphError::OutOfRange { i: i_raw, j: j_raw, n }),
            };
            if i == j {
                return Err(GraphError::SelfLoop(i_raw, j_raw));
            }
            if !(weight > 0.0) || !weight.is_finite() {
                return Err(GraphError::NonPositiveWeight {
                    i: i_raw,
                    j: j_raw,
                    weight,
                });
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(GraphError::DuplicateEdge(i_raw, j_raw));
            }
            adjacency[(i, j)] = weight;
            adjacency[(j, i)] = weight;
        }
        Ok(Self::from_adjacency_unchecked(adjacency))
    }

    fn from_adjacency_unchecked(adjacency: DMatrix<f64>) -> Self {
        let n = adjacency.nrows();
        let degrees = DVector::from_iterator(n, adjacency.row_iter().map(|r| r.sum()));
        let mut laplacian = -adjacency.clone();
        for i in 0..n {
            laplacian[(i, i)] = degrees[i];
        }
        Self {
            n,
            adjacency,
            laplacian,
            degrees,
        }
    }

    /// Path graph `0 - 1 - ... - (n-1)` with unit weights.
    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
        Self::from_edges(n, &edges, IndexBase::Zero).expect("path graph is well formed")
    }

    /// Complete graph with unit weights.
    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j, 1.0));
            }
        }
        Self::from_edges(n, &edges, IndexBase::Zero).expect("complete graph is well formed")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn degrees(&self) -> &DVector<f64> {
        &self.degrees
    }

    /// Neighbor set `N_i = { j : a_ij > 0 }`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.adjacency[(i, j)] > 0.0)
    }

    /// Edge list as `(i, j, weight)` with `i < j`, zero-based.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let w = self.adjacency[(i, j)];
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// `(L ⊗ I_p) x` for a stacked n×p state, computed as
    /// `Σ_j a_ij (x_i - x_j)` per agent.
    pub fn apply_laplacian(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let p = x.ncols();
        let mut out = DMatrix::zeros(self.n, p);
        for i in 0..self.n {
            for j in 0..self.n {
                let w = self.adjacency[(i, j)];
                if w > 0.0 {
                    for k in 0..p {
                        out[(i, k)] += w * (x[(i, k)] - x[(j, k)]);
                    }
                }
            }
        }
        out
    }

    /// `xᵀ (L ⊗ I_p) x = ½ Σ_ij a_ij ‖x_i - x_j‖²`.
    pub fn laplacian_form(&self, x: &DMatrix<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let w = self.adjacency[(i, j)];
                if w > 0.0 {
                    let d = x.row(i) - x.row(j);
                    acc += w * d.norm_squared();
                }
            }
        }
        acc
    }

    /// Connected components over positive-weight edges, each sorted, ordered
    /// by their smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.n];
        let mut components = Vec::new();
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = components.len();
            let mut members = vec![start];
            label[start] = id;
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                for j in self.neighbors(i) {
                    if label[j] == usize::MAX {
                        label[j] = id;
                        members.push(j);
                        stack.push(j);
                    }
                }
            }
            members.sort_unstable();
            components.push(members);
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Spectral decomposition of the Laplacian for a connected graph.
    pub fn spectral(&self) -> Result<SpectralData, GraphError> {
        let components = self.components();
        if components.len() > 1 {
            return Err(GraphError::Disconnected(components));
        }
        if self.n == 1 {
            return Err(GraphError::SingleVertex);
        }
        SpectralData::from_laplacian(&self.laplacian)
    }
}

/// Eigen-structure of a connected graph's Laplacian: `L = Q diag(0, Λ₁) Qᵀ`
/// with `Q = [r R]`, `r = 1/√n · 1`.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Eigenvalues sorted ascending, the first clamped to zero.
    pub eigenvalues: DVector<f64>,
    /// Spectral radius ρ(L).
    pub rho: f64,
    /// Smallest positive eigenvalue ρ₂(L).
    pub rho2: f64,
    /// Centering projector `K_n = I - (1/n) 1 1ᵀ`.
    pub kn: DMatrix<f64>,
    /// Normalized consensus direction.
    pub r: DVector<f64>,
    /// Eigenvectors for eigenvalues 2..n, as columns.
    pub basis: DMatrix<f64>,
    /// Positive eigenvalues λ₂..λₙ.
    pub lambda1: DVector<f64>,
}

/// Relative cutoff for treating a Laplacian eigenvalue as zero.
pub const ZERO_EIGENVALUE_RTOL: f64 = 1e-9;

impl SpectralData {
    fn from_laplacian(laplacian: &DMatrix<f64>) -> Result<Self, GraphError> {
        let n = laplacian.nrows();
        let eig = SymmetricEigen::new(laplacian.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let rho = eigenvalues[n - 1];
        let cutoff = ZERO_EIGENVALUE_RTOL * rho.abs();
        let zeros = eigenvalues.iter().filter(|l| l.abs() < cutoff).count();
        if zeros != 1 || !(rho > 0.0) {
            // BFS said connected; an eigenvalue count disagreeing means the
            // weights span too many orders of magnitude to resolve.
            return Err(GraphError::Disconnected(vec![(0..n).collect()]));
        }
        eigenvalues[0] = 0.0;
        let rho2 = eigenvalues[1];
        let mut basis = DMatrix::zeros(n, n - 1);
        for (col, &k) in order.iter().skip(1).enumerate() {
            basis.set_column(col, &eig.eigenvectors.column(k));
        }
        let lambda1 = eigenvalues.rows(1, n - 1).into_owned();
        let r = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        Ok(Self {
            eigenvalues,
            rho,
            rho2,
            kn: centering_projector(n),
            r,
            basis,
            lambda1,
        })
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    /// `R f(Λ₁) Rᵀ` for a scalar map applied to the positive eigenvalues.
    fn spectral_map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.basis.nrows(), self.basis.ncols(), |i, j| {
            self.basis[(i, j)] * f(self.lambda1[j])
        });
        &scaled * self.basis.transpose()
    }

    /// `R Λ₁⁻¹ Rᵀ`, the Moore-Penrose pseudo-inverse of L.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        self.spectral_map(|l| 1.0 / l)
    }

    /// `R (√Λ₁)⁻¹ Rᵀ`.
    pub fn pseudo_inverse_sqrt(&self) -> DMatrix<f64> {
        self.spectral_map(|l| 1.0 / l.sqrt())
    }

    /// `L^{1/2} = R √Λ₁ Rᵀ`.
    pub fn sqrt_laplacian(&self) -> DMatrix<f64> {
        self.spectral_map(f64::sqrt)
    }

    /// The full orthogonal matrix `Q = [r R]`.
    pub fn q(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut q = DMatrix::zeros(n, n);
        q.set_column(0, &self.r);
        for c in 0..n - 1 {
            q.set_column(c + 1, &self.basis.column(c));
        }
        q
    }
}

/// `K_n = I_n - (1/n) 1 1ᵀ`.
pub fn centering_projector(n: usize) -> DMatrix<f64> {
    let inv = 1.0 / n as f64;
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - inv } else { -inv })
}

/// `(K_n ⊗ I_p) x`: subtracts the agent average from every row.
pub fn center_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mean = x.row_mean();
    let mut out = x.clone();
    for i in 0..n {
        let mut row = out.row_mut(i);
        row -= &mean;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> NetworkGraph {
        NetworkGraph::from_edges(3, &[(1, 2, 1.0), (2, 3, 1.0)], IndexBase::One).unwrap()
    }

    #[test]
    fn path3_laplacian_literal() {
        let g = path3();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(g.laplacian(), &expected);
        assert_eq!(g.degrees().as_slice(), &[1.0, 2.0, 1.0]);
    }

    #[test]
    fn empty_edges_give_zero_laplacian() {
        let g = NetworkGraph::from_edges(2, &[], IndexBase::Zero).unwrap();
        assert_eq!(g.laplacian(), &DMatrix::zeros(2, 2));
        assert!(!g.is_connected());
    }

    #[test]
    fn complete3_is_3i_minus_ones() {
        let g = NetworkGraph::complete(3);
        let expected = DMatrix::identity(3, 3) * 3.0 - DMatrix::from_element(3, 3, 1.0);
        assert_eq!(g.laplacian(), &expected);
        for i in 0..3 {
            assert_eq!(g.laplacian()[(i, i)], 2.0);
        }
    }

    #[test]
    fn rejects_malformed_edges() {
        assert_eq!(
            NetworkGraph::from_edges(3, &[(0, 1, 1.0), (1, 0, 2.0)], IndexBase::Zero),
            Err(GraphError::DuplicateEdge(1, 0))
        );
        assert!(matches!(
            NetworkGraph::from_edges(3, &[(0, 1, 0.0)], IndexBase::Zero),
            Err(GraphError::NonPositiveWeight { .. })
        ));
        assert!(matches!(
            NetworkGraph::from_edges(3, &[(0, 1, -1.0)], IndexBase::Zero),
            Err(GraphError::NonPositiveWeight { .. })
        ));
        assert_eq!(
            NetworkGraph::from_edges(3, &[(2, 2, 1.0)], IndexBase::Zero),
            Err(GraphError::SelfLoop(2, 2))
        );
        assert!(matches!(
            NetworkGraph::from_edges(3, &[(0, 3, 1.0)], IndexBase::Zero),
            Err(GraphError::OutOfRange { .. })
        ));
        assert!(matches!(
            NetworkGraph::from_edges(3, &[(0, 1, 1.0)], IndexBase::One),
            Err(GraphError::OutOfRange { .. })
        ));
    }

    #[test]
    fn connectivity() {
        assert!(path3().is_connected());
        let g = NetworkGraph::from_edges(3, &[(1, 2, 1.0)], IndexBase::One).unwrap();
        assert!(!g.is_connected());
        assert_eq!(g.components(), vec![vec![0, 1], vec![2]]);
        let single = NetworkGraph::from_edges(1, &[], IndexBase::Zero).unwrap();
        assert!(single.is_connected());
    }

    #[test]
    fn disconnected_spectral_names_components() {
        let g = NetworkGraph::from_edges(3, &[(1, 2, 1.0)], IndexBase::One).unwrap();
        let err = g.spectral().unwrap_err();
        assert_eq!(err, GraphError::Disconnected(vec![vec![0, 1], vec![2]]));
        assert!(err.to_string().contains("{0, 1} {2}"));
    }

    #[test]
    fn path3_spectrum() {
        // Characteristic polynomial of the path-3 Laplacian is λ(λ-1)(λ-3).
        let s = path3().spectral().unwrap();
        let expected = [0.0, 1.0, 3.0];
        for (got, want) in s.eigenvalues.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((s.rho2 - 1.0).abs() < 1e-12);
        assert!((s.rho - 3.0).abs() < 1e-12);
    }

    #[test]
    fn projector_and_pseudo_inverse_identities() {
        let g = path3();
        let s = g.spectral().unwrap();
        let ones = DVector::from_element(3, 1.0);
        assert!((&s.kn * ones).norm() < 1e-15);
        let prod = s.pseudo_inverse() * g.laplacian();
        assert!((prod - &s.kn).amax() <= 1e-12);
        let q = s.q();
        assert!((q.transpose() * &q - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn laplacian_apply_matches_matrix_product() {
        let g = path3();
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, -2.0, 2.0, 0.5]);
        let direct = g.laplacian() * &x;
        assert!((g.apply_laplacian(&x) - &direct).amax() < 1e-15);
        let form = (x.transpose() * &direct).trace();
        assert!((g.laplacian_form(&x) - form).abs() < 1e-12);
    }

    #[test]
    fn center_rows_matches_projector() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, -2.0, 2.0, 0.5]);
        let direct = centering_projector(3) * &x;
        assert!((center_rows(&x) - direct).amax() < 1e-15);
    }
}
