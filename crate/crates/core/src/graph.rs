//! Communication graphs, Laplacians and the consensus projection `M`.
//!
//! Agent `i` receives from agent `j` iff `a_ij = 1`. The Laplacian is
//! `L = D − A` with `D` the diagonal of row sums (in-degrees). Only two
//! topology classes carry the consensus guarantees: undirected connected
//! graphs and balanced strongly connected digraphs.
//!
//! The projection `M` has `N − 1` mutually orthogonal rows of equal norm,
//! each orthogonal to the all-ones vector, so `(M ⊗ I_n)X = 0` exactly when
//! all agent blocks of `X` agree.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, identity};

pub use crate::linalg::pseudo_inverse;

/// Relative threshold below which a singular value counts as zero.
const ZERO_SV_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyKind {
    Undirected,
    BalancedStronglyConnected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub adjacency: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub kind: TopologyKind,
}

impl Topology {
    pub fn agents(&self) -> usize {
        self.adjacency.nrows()
    }

    /// Neighbors `j` that agent `i` receives from.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.agents()).filter(move |&j| self.adjacency[(i, j)] != 0.0)
    }

    /// Directed ring used in the four-robot benchmark: 1←4, 2←1, 3←2, 4←3.
    pub fn benchmark_ring() -> Self {
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 3)] = 1.0;
        a[(1, 0)] = 1.0;
        a[(2, 1)] = 1.0;
        a[(3, 2)] = 1.0;
        build_laplacian(&a).expect("ring is balanced and strongly connected")
    }
}

/// Builds `L = D − A` and classifies the topology.
pub fn build_laplacian(adjacency: &DMatrix<f64>) -> Result<Topology> {
    let n = adjacency.nrows();
    if !adjacency.is_square() || n < 2 {
        return Err(Error::DimensionMismatch(format!(
            "adjacency must be square with at least 2 agents, got {}x{}",
            adjacency.nrows(),
            adjacency.ncols()
        )));
    }
    for i in 0..n {
        if adjacency[(i, i)] != 0.0 {
            return Err(Error::Validation(format!("self loop at agent {}", i + 1)));
        }
        for j in 0..n {
            let a = adjacency[(i, j)];
            if a != 0.0 && a != 1.0 {
                return Err(Error::Validation(format!(
                    "adjacency entry ({}, {}) = {a} is not 0 or 1",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    let mut laplacian = -adjacency.clone();
    for i in 0..n {
        laplacian[(i, i)] = adjacency.row(i).sum();
    }

    let kind = if adjacency == &adjacency.transpose() {
        TopologyKind::Undirected
    } else {
        let balanced = (0..n).all(|i| adjacency.row(i).sum() == adjacency.column(i).sum());
        if balanced && strongly_connected(adjacency) {
            TopologyKind::BalancedStronglyConnected
        } else {
            return Err(Error::NotClassifiable);
        }
    };
    Ok(Topology {
        adjacency: adjacency.clone(),
        laplacian,
        kind,
    })
}

/// Boolean reachability closure (Warshall) over edges `j → i` for `a_ij = 1`.
pub fn strongly_connected(adjacency: &DMatrix<f64>) -> bool {
    let n = adjacency.nrows();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if adjacency[(i, j)] != 0.0 {
                reach[j][i] = true;
            }
        }
    }
    for k in 0..n {
        let via = reach[k].clone();
        for row in reach.iter_mut() {
            if row[k] {
                for (r, &v) in row.iter_mut().zip(&via) {
                    *r |= v;
                }
            }
        }
    }
    reach.iter().all(|row| row.iter().all(|&r| r))
}

/// Left eigenvector `l` of `L` for the zero eigenvalue, normalized so `lᵀ1 = 1`.
pub fn left_zero_eigenvector(topology: &Topology) -> Result<DVector<f64>> {
    let lt = topology.laplacian.transpose();
    let n = lt.nrows();
    let svd = lt.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or(Error::DegenerateSpectrum)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let scale = svd.singular_values.amax().max(1.0);
    let smallest = svd.singular_values[order[0]];
    let second = svd.singular_values[order[1]];
    if smallest > ZERO_SV_TOL * scale || second <= ZERO_SV_TOL * scale {
        return Err(Error::DegenerateSpectrum);
    }
    let mut l: DVector<f64> = v_t.row(order[0]).transpose().into_owned();
    let sum = l.sum();
    if sum.abs() < 1e-12 {
        return Err(Error::DegenerateSpectrum);
    }
    l /= sum;
    if l.iter().any(|&v| v <= 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(l)
}

/// Consensus projection and the derived matrices the criteria consume.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusProjection {
    /// `(N − 1) × N`.
    pub m: DMatrix<f64>,
    /// `Mᵀ(MMᵀ)⁻¹`, `N × (N − 1)`.
    pub m_pinv: DMatrix<f64>,
    /// `(M ⊗ I_n)⁺ᵀ (M ⊗ I_n)⁺`, `n(N − 1)` square.
    pub p: DMatrix<f64>,
    pub l: DVector<f64>,
    pub row_norm: f64,
    /// Per-agent state dimension the Kronecker lifts use.
    pub n: usize,
}

impl ConsensusProjection {
    /// Wraps an explicit `M` (e.g. a rotated basis or a printed matrix).
    pub fn from_rows(topology: &Topology, m: DMatrix<f64>, n: usize) -> Result<Self> {
        let agents = topology.agents();
        if m.nrows() != agents - 1 || m.ncols() != agents || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "M must be {}x{}, got {}x{}",
                agents - 1,
                agents,
                m.nrows(),
                m.ncols()
            )));
        }
        let l = left_zero_eigenvector(topology)?;
        let m_pinv = pseudo_inverse(&m)?;
        let p = (m_pinv.transpose() * &m_pinv).kronecker(&identity(n));
        let row_norm =
            m.row_iter().map(|r| r.norm()).sum::<f64>() / m.nrows() as f64;
        Ok(Self {
            m,
            m_pinv,
            p,
            l,
            row_norm,
            n,
        })
    }

    pub fn agents(&self) -> usize {
        self.m.ncols()
    }

    /// Length of the consensus error `n(N − 1)`.
    pub fn error_dim(&self) -> usize {
        self.n * self.m.nrows()
    }

    /// `M ⊗ I_n`.
    pub fn lifted(&self) -> DMatrix<f64> {
        self.m.kronecker(&identity(self.n))
    }

    /// `(M ⊗ I_n)⁺ = M⁺ ⊗ I_n` (full row rank).
    pub fn lifted_pinv(&self) -> DMatrix<f64> {
        self.m_pinv.kronecker(&identity(self.n))
    }

    /// `M⁺M`, the orthogonal projector onto the disagreement subspace.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.m_pinv * &self.m
    }
}

/// Builds `M` from an orthonormal eigenbasis scaled to `row_norm`.
///
/// Undirected graphs use the eigenvectors of `L` for the `N − 1` nonzero
/// eigenvalues; balanced digraphs use the eigenvalue-one eigenspace of the
/// symmetric matrix `I − 1lᵀ`. Rows are ordered by ascending eigenvalue and
/// signed so their first nonzero entry is positive.
pub fn build_consensus_matrix(
    topology: &Topology,
    row_norm: f64,
    n: usize,
) -> Result<ConsensusProjection> {
    if !(row_norm > 0.0) || !row_norm.is_finite() {
        return Err(Error::Validation(format!("row_norm must be positive, got {row_norm}")));
    }
    let agents = topology.agents();
    let l = left_zero_eigenvector(topology)?;
    let source = match topology.kind {
        TopologyKind::Undirected => topology.laplacian.clone(),
        TopologyKind::BalancedStronglyConnected => {
            let ones = DVector::from_element(agents, 1.0);
            let b = identity(agents) - ones * l.transpose();
            linalg::assert_symmetric(&b, "I - 1·lᵀ")?;
            (&b + b.transpose()) * 0.5
        }
    };
    let eig = SymmetricEigen::new(source);
    let mut order: Vec<usize> = (0..agents).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // order[0] is the consensus direction (eigenvalue 0 in both cases).
    if eig.eigenvalues[order[1]].abs() < ZERO_SV_TOL {
        return Err(Error::DegenerateSpectrum);
    }
    let mut m = DMatrix::zeros(agents - 1, agents);
    for (row, &k) in order[1..].iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                v = -v;
            }
        }
        v *= row_norm / v.norm();
        m.set_row(row, &v.transpose());
    }
    let m_pinv = pseudo_inverse(&m)?;
    let p = (m_pinv.transpose() * &m_pinv).kronecker(&identity(n));
    Ok(ConsensusProjection {
        m,
        m_pinv,
        p,
        l,
        row_norm,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn pair() -> Topology {
        build_laplacian(&dmatrix![0.0, 1.0; 1.0, 0.0]).unwrap()
    }

    #[test]
    fn ring_laplacian_matches_benchmark() {
        let t = Topology::benchmark_ring();
        let expected = dmatrix![
            1.0, 0.0, 0.0, -1.0;
            -1.0, 1.0, 0.0, 0.0;
            0.0, -1.0, 1.0, 0.0;
            0.0, 0.0, -1.0, 1.0
        ];
        assert_eq!(t.laplacian, expected);
        assert_eq!(t.kind, TopologyKind::BalancedStronglyConnected);
    }

    #[test]
    fn pair_is_undirected() {
        let t = pair();
        assert_eq!(t.laplacian, dmatrix![1.0, -1.0; -1.0, 1.0]);
        assert_eq!(t.kind, TopologyKind::Undirected);
        let l = left_zero_eigenvector(&t).unwrap();
        assert!((l - DVector::from_element(2, 0.5)).amax() < 1e-12);
    }

    #[test]
    fn chain_is_not_classifiable() {
        let a = dmatrix![0.0, 0.0, 0.0; 1.0, 0.0, 0.0; 0.0, 1.0, 0.0];
        assert!(matches!(build_laplacian(&a), Err(Error::NotClassifiable)));
    }

    #[test]
    fn bad_adjacency_rejected() {
        assert!(build_laplacian(&dmatrix![1.0, 1.0; 1.0, 0.0]).is_err());
        assert!(build_laplacian(&dmatrix![0.0, 2.0; 2.0, 0.0]).is_err());
        assert!(build_laplacian(&dmatrix![0.0]).is_err());
    }

    #[test]
    fn disconnected_undirected_is_degenerate() {
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = 1.0;
        a[(2, 3)] = 1.0;
        a[(3, 2)] = 1.0;
        let t = build_laplacian(&a).unwrap();
        assert!(matches!(left_zero_eigenvector(&t), Err(Error::DegenerateSpectrum)));
        assert!(matches!(
            build_consensus_matrix(&t, 1.0, 1),
            Err(Error::DegenerateSpectrum)
        ));
    }

    #[test]
    fn ring_left_eigenvector_uniform() {
        let l = left_zero_eigenvector(&Topology::benchmark_ring()).unwrap();
        assert!((l - DVector::from_element(4, 0.25)).amax() < 1e-10);
    }

    #[test]
    fn ring_projection_reproduces_p() {
        let proj = build_consensus_matrix(&Topology::benchmark_ring(), 0.5, 2).unwrap();
        assert!((&proj.p - identity(6) * 4.0).amax() < 1e-8);
        let mmt = &proj.m * proj.m.transpose();
        assert!((mmt - identity(3) * 0.25).amax() < 1e-10);
        assert!((&proj.m * &proj.m_pinv - identity(3)).amax() < 1e-10);
    }

    #[test]
    fn unit_row_norm_gives_identity_p() {
        for t in [pair(), Topology::benchmark_ring()] {
            let proj = build_consensus_matrix(&t, 1.0, 3).unwrap();
            let dim = proj.error_dim();
            assert!((&proj.p - identity(dim)).amax() < 1e-10);
        }
    }

    #[test]
    fn rows_orthogonal_to_ones_and_signed() {
        let proj = build_consensus_matrix(&Topology::benchmark_ring(), 1.0, 1).unwrap();
        for r in proj.m.row_iter() {
            assert!(r.sum().abs() < 1e-12);
            let first = r.iter().copied().find(|x| x.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn printed_matrix_projector_agrees() {
        let t = Topology::benchmark_ring();
        let printed = dmatrix![
            0.0771, 0.2992, -0.3927, 0.0164;
            0.1178, 0.1751, 0.1386, -0.4316;
            -0.4095, 0.2594, 0.1185, 0.0316
        ];
        let theirs = ConsensusProjection::from_rows(&t, printed, 2).unwrap();
        let ours = build_consensus_matrix(&t, 0.5, 2).unwrap();
        assert!((theirs.projector() - ours.projector()).amax() < 1e-3);
        let mpm = &theirs.m_pinv * &theirs.m;
        let ones = DMatrix::from_element(4, 4, 0.25);
        assert!((mpm - (identity(4) - ones)).amax() < 1e-3);
    }

    #[test]
    fn projector_products_on_printed_matrix() {
        let t = Topology::benchmark_ring();
        let proj = build_consensus_matrix(&t, 0.5, 2).unwrap();
        let mm = &proj.m * &proj.m_pinv;
        assert!((mm - identity(3)).amax() < 1e-10);
        let pm = &proj.m_pinv * &proj.m;
        let ones = DMatrix::from_element(4, 4, 0.25);
        assert!((pm - (identity(4) - ones)).amax() < 1e-10);
    }

    #[test]
    fn balanced_graphs_have_uniform_left_vector() {
        // Bidirectional ring plus a directed 4-cycle is balanced but asymmetric.
        let mut a = DMatrix::zeros(4, 4);
        for i in 0..4 {
            a[(i, (i + 3) % 4)] = 1.0;
        }
        a[(0, 2)] = 1.0;
        a[(2, 0)] = 1.0;
        let t = build_laplacian(&a).unwrap();
        assert_eq!(t.kind, TopologyKind::BalancedStronglyConnected);
        for j in 0..4 {
            assert!(t.laplacian.column(j).sum().abs() < 1e-15);
        }
        let l = left_zero_eigenvector(&t).unwrap();
        assert!((&l - DVector::from_element(4, 0.25)).amax() < 1e-10);
        assert!((l.transpose() * &t.laplacian).amax() < 1e-10);
    }
}
