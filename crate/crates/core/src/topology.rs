//! Communication graphs, per-round edge activation, doubly-stochastic mixing
//! matrices and spectral-gap diagnostics.
//!
//! Every round activates each base-graph edge independently with probability
//! `p`. The activated subgraph is turned into a mixing matrix by one of two
//! policies:
//!
//! * [`MixingPolicy::LaplacianStep`]: `W = I - alpha * L_active`, symmetric.
//! * [`MixingPolicy::PairwiseGossip`]: product of pairwise averages
//!   `W_e = I - L_e / 2` applied in a uniformly random order.
//!
//! Both are doubly stochastic for every activation pattern, so mixing
//! preserves the network average exactly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, Result};
use crate::numerics::{algebraic_connectivity, spectral_norm, symmetric_eigen, Matrix, RngStream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Complete,
    Ring,
    Custom,
}

/// Undirected simple graph over `m` nodes; edges stored as sorted `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseGraph {
    m: usize,
    edges: Vec<(usize, usize)>,
    kind: GraphKind,
}

impl BaseGraph {
    /// Complete graph or ring; use [`BaseGraph::custom`] for explicit edge lists.
    pub fn build(kind: GraphKind, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(invalid_config(format!("graph needs at least 2 nodes, got {m}")));
        }
        let edges = match kind {
            GraphKind::Complete => (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect(),
            GraphKind::Ring => {
                if m < 3 {
                    return Err(invalid_config("a ring needs at least 3 nodes"));
                }
                let mut e: Vec<_> = (0..m).map(|i| normalize(i, (i + 1) % m)).collect();
                e.sort_unstable();
                e
            }
            GraphKind::Custom => {
                return Err(invalid_config("custom graphs need an explicit edge list"));
            }
        };
        Ok(Self { m, edges, kind })
    }

    pub fn custom(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if m < 2 {
            return Err(invalid_config(format!("graph needs at least 2 nodes, got {m}")));
        }
        let mut out = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i == j {
                return Err(invalid_config(format!("self-loop at node {i}")));
            }
            if i >= m || j >= m {
                return Err(invalid_config(format!("edge ({i},{j}) out of range for m={m}")));
            }
            out.push(normalize(i, j));
        }
        out.sort_unstable();
        let before = out.len();
        out.dedup();
        if out.len() != before {
            return Err(invalid_config("duplicate edge in custom graph"));
        }
        Ok(Self {
            m,
            edges: out,
            kind: GraphKind::Custom,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.m];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    pub fn laplacian<S: Scalar>(&self) -> Matrix<S> {
        laplacian_of(self.m, &self.edges)
    }

    /// `λ₂` of the base-graph Laplacian.
    pub fn algebraic_connectivity(&self) -> Result<f64> {
        algebraic_connectivity(&self.laplacian::<f64>())
    }
}

fn normalize(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

pub fn laplacian_of<S: Scalar>(m: usize, edges: &[(usize, usize)]) -> Matrix<S> {
    let mut l = Matrix::zeros(m, m);
    for &(i, j) in edges {
        l[(i, i)] += S::one();
        l[(j, j)] += S::one();
        l[(i, j)] -= S::one();
        l[(j, i)] -= S::one();
    }
    l
}

/// Edges active in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivatedEdges {
    pub round: u64,
    pub edges: Vec<(usize, usize)>,
    pub p: f64,
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid_config(format!("activation probability {p} is outside [0, 1]")))
    }
}

/// Activates each base edge independently with probability `p`, drawing from
/// the sub-stream `("topology", round)` of `rng`.
pub fn sample_activation(graph: &BaseGraph, p: f64, round: u64, rng: &RngStream) -> Result<ActivatedEdges> {
    check_probability(p)?;
    let mut stream = rng.child("topology", round);
    let edges = graph.edges.iter().copied().filter(|_| stream.bernoulli(p)).collect();
    Ok(ActivatedEdges { round, edges, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum MixingPolicy {
    LaplacianStep {
        alpha: f64,
    },
    PairwiseGossip,
    /// `W = (1/m) 11ᵀ`; the centralized reference.
    ExactAverage,
}

impl MixingPolicy {
    /// Laplacian step with the largest `alpha` that is safe for every activation pattern.
    pub fn default_laplacian(graph: &BaseGraph) -> Self {
        Self::LaplacianStep {
            alpha: 1.0 / (graph.max_degree() as f64 + 1.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LaplacianStep { .. } => "laplacian_step",
            Self::PairwiseGossip => "pairwise_gossip",
            Self::ExactAverage => "exact_average",
        }
    }

    pub fn validate(&self, graph: &BaseGraph) -> Result<()> {
        if let Self::LaplacianStep { alpha } = *self {
            let limit = 1.0 / (graph.max_degree() as f64 + 1.0);
            if !(alpha > 0.0) || alpha > limit * (1.0 + 1e-12) {
                return Err(invalid_config(format!(
                    "laplacian_step alpha={alpha} must lie in (0, 1/(d_max+1)] = (0, {limit}]"
                )));
            }
        }
        Ok(())
    }
}

/// One round's mixing operator.
#[derive(Debug, Clone)]
pub struct MixingMatrix<S: Scalar = f64> {
    pub w: Matrix<S>,
    pub round: u64,
    pub policy: MixingPolicy,
    pub activated: ActivatedEdges,
}

impl<S: Scalar> MixingMatrix<S> {
    pub fn m(&self) -> usize {
        self.w.rows()
    }

    /// `‖W - J‖₂`.
    pub fn contraction(&self) -> S {
        let j = Matrix::averaging(self.m());
        spectral_norm(&(&self.w - &j)).expect("mixing matrix is finite")
    }

    /// Largest violation among row sums, column sums (distance from 1) and negative entries.
    pub fn stochasticity_error(&self) -> S {
        let row = self.w.row_sums().into_iter().map(|s| (s - S::one()).abs());
        let col = self.w.col_sums().into_iter().map(|s| (s - S::one()).abs());
        let neg = self.w.as_slice().iter().map(|&x| (-x).max(S::zero()));
        row.chain(col).chain(neg).fold(S::zero(), S::max)
    }

    pub fn is_doubly_stochastic(&self, tol: S) -> bool {
        self.stochasticity_error() <= tol
    }
}

/// Builds `W_t` from an activation set. Pairwise gossip draws its edge order
/// from the sub-stream `("gossip-order", round)` of `rng`.
pub fn build_mixing_matrix<S: Scalar>(
    graph: &BaseGraph,
    act: &ActivatedEdges,
    policy: MixingPolicy,
    rng: &RngStream,
) -> Result<MixingMatrix<S>> {
    policy.validate(graph)?;
    let m = graph.m();
    let w = match policy {
        MixingPolicy::ExactAverage => Matrix::averaging(m),
        MixingPolicy::LaplacianStep { alpha } => {
            let l = laplacian_of::<S>(m, &act.edges);
            let mut w = l.scale(-S::of(alpha));
            for i in 0..m {
                w[(i, i)] += S::one();
            }
            w
        }
        MixingPolicy::PairwiseGossip => {
            let order = rng.child("gossip-order", act.round).permutation(act.edges.len());
            let mut w = Matrix::<S>::identity(m);
            // Left-multiplying by W_e = I - L_e/2 replaces rows i and j by their average.
            for k in order {
                let (i, j) = act.edges[k];
                for c in 0..m {
                    let avg = (w[(i, c)] + w[(j, c)]) * S::half();
                    w[(i, c)] = avg;
                    w[(j, c)] = avg;
                }
            }
            w
        }
    };
    Ok(MixingMatrix {
        w,
        round: act.round,
        policy,
        activated: act.clone(),
    })
}

/// Samples and builds the mixing matrix for `round`.
pub fn mixing_for_round<S: Scalar>(
    graph: &BaseGraph,
    p: f64,
    policy: MixingPolicy,
    round: u64,
    rng: &RngStream,
) -> Result<MixingMatrix<S>> {
    let act = match policy {
        MixingPolicy::ExactAverage => ActivatedEdges {
            round,
            edges: graph.edges().to_vec(),
            p,
        },
        _ => sample_activation(graph, p, round, rng)?,
    };
    build_mixing_matrix(graph, &act, policy, rng)
}

/// Monte-Carlo estimate of the mean-square contraction factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    /// `λ_max(E[(W - J)ᵀ(W - J)])`, i.e. `sup_{x ⊥ 1} E‖W x‖² / ‖x‖²`.
    pub rho_sq_hat: f64,
    /// Standard error of `rho_sq_hat` (delta method along the top eigenvector).
    pub stderr: f64,
    /// `E‖W - J‖₂²`, the per-realisation worst case.
    pub worst_case_sq: f64,
    pub worst_case_stderr: f64,
    pub n_samples: usize,
}

impl RhoEstimate {
    pub fn rho_hat(&self) -> f64 {
        self.rho_sq_hat.clamp(0.0, 1.0).sqrt()
    }

    pub fn one_minus_rho(&self) -> f64 {
        1.0 - self.rho_hat()
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Estimates the contraction factor of `n_samples` independent rounds.
///
/// Sample `k` uses round index `k` of `rng`, so the estimate is a pure function
/// of its arguments.
pub fn estimate_rho(
    graph: &BaseGraph,
    p: f64,
    policy: MixingPolicy,
    n_samples: usize,
    rng: &RngStream,
) -> Result<RhoEstimate> {
    if n_samples < 100 {
        return Err(invalid_config(format!(
            "n_samples must be at least 100, got {n_samples}"
        )));
    }
    check_probability(p)?;
    let m = graph.m();
    let j = Matrix::<f64>::averaging(m);
    let mut deviations = Vec::with_capacity(n_samples);
    let mut gram = Matrix::<f64>::zeros(m, m);
    let mut worst = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let w = mixing_for_round::<f64>(graph, p, policy, k as u64, rng)?;
        let d = &w.w - &j;
        gram.axpy(1.0, &d.tr_matmul(&d)?);
        worst.push(spectral_norm(&d)?.powi(2));
        deviations.push(d);
    }
    gram = gram.scale(1.0 / n_samples as f64);
    // Symmetrize against round-off before the eigen-solve.
    gram = (&gram + &gram.transpose()).scale(0.5);
    let eig = symmetric_eigen(&gram)?;
    let rho_sq_hat = eig.values[m - 1];
    let v = Matrix::from_fn(m, 1, |i, _| eig.vectors[(i, m - 1)]);
    let per_sample: Vec<f64> = deviations.iter().map(|d| (d * &v).frobenius_sq()).collect();
    let (_, stderr) = mean_and_stderr(&per_sample);
    let (worst_case_sq, worst_case_stderr) = mean_and_stderr(&worst);
    Ok(RhoEstimate {
        rho_sq_hat,
        stderr,
        worst_case_sq,
        worst_case_stderr,
        n_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralGapRow {
    pub p: f64,
    pub lambda2: f64,
    pub rho_sq_hat: f64,
    pub stderr: f64,
    pub one_minus_rho: f64,
    /// `c * p * lambda2` with the report's fitted `c`.
    pub lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralGapReport {
    pub rows: Vec<SpectralGapRow>,
    /// `min_p (1 - rho_hat) / (p * lambda2)` over rows with `rho_hat < 1`; zero if none.
    pub c_fit: f64,
}

/// Per-`p` spectral-gap diagnostics. Each `p` draws from the sub-stream
/// `("p", p.to_bits())`, so rows do not depend on the order of `p_list`.
pub fn spectral_gap_report(
    graph: &BaseGraph,
    policy: MixingPolicy,
    p_list: &[f64],
    n_samples: usize,
    rng: &RngStream,
) -> Result<SpectralGapReport> {
    if p_list.is_empty() {
        return Err(invalid_config("p_list must not be empty"));
    }
    let lambda2 = graph.algebraic_connectivity()?;
    let estimates = p_list
        .iter()
        .map(|&p| {
            Ok((
                p,
                estimate_rho(graph, p, policy, n_samples, &rng.child("p", p.to_bits()))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let c_fit = estimates
        .iter()
        .filter(|(p, e)| *p > 0.0 && e.rho_hat() < 1.0 && lambda2 > 0.0)
        .map(|(p, e)| e.one_minus_rho() / (p * lambda2))
        .fold(f64::INFINITY, f64::min);
    let c_fit = if c_fit.is_finite() { c_fit } else { 0.0 };
    let rows = estimates
        .into_iter()
        .map(|(p, e)| SpectralGapRow {
            p,
            lambda2,
            rho_sq_hat: e.rho_sq_hat,
            stderr: e.stderr,
            one_minus_rho: e.one_minus_rho(),
            lower_bound: c_fit * p * lambda2,
        })
        .collect();
    Ok(SpectralGapReport { rows, c_fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(m: usize) -> BaseGraph {
        BaseGraph::build(GraphKind::Complete, m).unwrap()
    }

    #[test]
    fn base_graph_examples() {
        assert_eq!(k(3).edges(), &[(0, 1), (0, 2), (1, 2)]);
        let ring = BaseGraph::build(GraphKind::Ring, 4).unwrap();
        assert_eq!(ring.edges(), &[(0, 1), (0, 3), (1, 2), (2, 3)]);
        assert!(ring.degrees().iter().all(|&d| d == 2));
        assert_eq!(k(10).edges().len(), 45);
    }

    #[test]
    fn base_graph_errors() {
        assert!(BaseGraph::build(GraphKind::Complete, 1).is_err());
        assert!(BaseGraph::build(GraphKind::Ring, 2).is_err());
        assert!(BaseGraph::custom(3, &[(0, 0)]).is_err());
        assert!(BaseGraph::custom(3, &[(0, 3)]).is_err());
        assert!(BaseGraph::custom(3, &[(0, 1), (1, 0)]).is_err());
        let g = BaseGraph::custom(4, &[(2, 1), (0, 3)]).unwrap();
        assert_eq!(g.edges(), &[(0, 3), (1, 2)]);
        assert_eq!(g.kind(), GraphKind::Custom);
    }

    #[test]
    fn activation_extremes() {
        let rng = RngStream::new(3);
        assert!(sample_activation(&k(10), 0.0, 5, &rng).unwrap().edges.is_empty());
        assert_eq!(sample_activation(&k(3), 1.0, 5, &rng).unwrap().edges.len(), 3);
        assert!(sample_activation(&k(3), 1.5, 0, &rng).is_err());
        assert!(sample_activation(&k(3), -0.1, 0, &rng).is_err());
    }

    #[test]
    fn activation_rate_matches_p() {
        let g = k(10);
        let rng = RngStream::new(11);
        let mut counts = vec![0usize; g.edges().len()];
        let rounds = 10_000;
        for t in 0..rounds {
            let act = sample_activation(&g, 0.5, t, &rng).unwrap();
            for e in act.edges {
                counts[g.edges().iter().position(|&x| x == e).unwrap()] += 1;
            }
        }
        for c in counts {
            let rate = c as f64 / rounds as f64;
            assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
        }
    }

    #[test]
    fn laplacian_step_on_full_triangle_is_exact_average() {
        let g = k(3);
        let rng = RngStream::new(0);
        let act = sample_activation(&g, 1.0, 0, &rng).unwrap();
        let w: MixingMatrix =
            build_mixing_matrix(&g, &act, MixingPolicy::LaplacianStep { alpha: 1.0 / 3.0 }, &rng).unwrap();
        assert!((&w.w - &Matrix::averaging(3)).max_abs() < 1e-15);
    }

    #[test]
    fn empty_activation_gives_identity() {
        let g = k(4);
        let rng = RngStream::new(0);
        let act = ActivatedEdges {
            round: 0,
            edges: vec![],
            p: 0.0,
        };
        for policy in [MixingPolicy::default_laplacian(&g), MixingPolicy::PairwiseGossip] {
            let w: MixingMatrix = build_mixing_matrix(&g, &act, policy, &rng).unwrap();
            assert_eq!(w.w, Matrix::identity(4));
        }
    }

    #[test]
    fn single_edge_pairwise_gossip() {
        let g = k(3);
        let act = ActivatedEdges {
            round: 0,
            edges: vec![(0, 1)],
            p: 1.0,
        };
        let w: MixingMatrix = build_mixing_matrix(&g, &act, MixingPolicy::PairwiseGossip, &RngStream::new(0)).unwrap();
        let expected = Matrix::from_rows(&[vec![0.5, 0.5, 0.0], vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(w.w, expected);
    }

    #[test]
    fn alpha_above_limit_is_rejected() {
        let g = k(3);
        let act = ActivatedEdges {
            round: 0,
            edges: vec![(0, 1)],
            p: 1.0,
        };
        let res = build_mixing_matrix::<f64>(&g, &act, MixingPolicy::LaplacianStep { alpha: 0.5 }, &RngStream::new(0));
        assert!(res.is_err());
    }

    #[test]
    fn rho_closed_forms() {
        let rng = RngStream::new(17);
        let g2 = k(2);
        let est = estimate_rho(&g2, 0.75, MixingPolicy::PairwiseGossip, 10_000, &rng).unwrap();
        assert!((est.rho_sq_hat - 0.25).abs() <= 3.0 * est.stderr, "{est:?}");

        let exact = estimate_rho(&k(3), 1.0, MixingPolicy::LaplacianStep { alpha: 1.0 / 3.0 }, 100, &rng).unwrap();
        assert!(exact.rho_sq_hat.abs() < 1e-24);

        let idle = estimate_rho(&k(5), 0.0, MixingPolicy::PairwiseGossip, 100, &rng).unwrap();
        assert!((idle.rho_sq_hat - 1.0).abs() < 1e-12);
        assert!((idle.worst_case_sq - 1.0).abs() < 1e-12);
        assert!(idle.one_minus_rho().abs() < 1e-12);
        assert!(estimate_rho(&k(5), 0.5, MixingPolicy::PairwiseGossip, 99, &rng).is_err());
    }

    #[test]
    fn ring_mixes_slower_than_complete() {
        let rng = RngStream::new(5);
        let ring = BaseGraph::build(GraphKind::Ring, 10).unwrap();
        let full = k(10);
        let policy = MixingPolicy::PairwiseGossip;
        let a = spectral_gap_report(&ring, policy, &[0.2], 2000, &rng).unwrap();
        let b = spectral_gap_report(&full, policy, &[0.2], 2000, &rng).unwrap();
        assert!(a.rows[0].one_minus_rho < b.rows[0].one_minus_rho);
        assert!(a.rows[0].lambda2 < b.rows[0].lambda2);
    }

    #[test]
    fn report_gap_increases_with_p() {
        let g = k(10);
        let rep = spectral_gap_report(
            &g,
            MixingPolicy::default_laplacian(&g),
            &[0.0, 0.1, 0.2, 0.5],
            1000,
            &RngStream::new(2),
        )
        .unwrap();
        assert!(rep.rows[0].one_minus_rho.abs() < 1e-12);
        assert!(rep.rows.windows(2).all(|w| w[0].one_minus_rho < w[1].one_minus_rho));
        assert!(rep.c_fit > 0.0);
        for row in &rep.rows {
            assert!(row.one_minus_rho >= row.lower_bound - 1e-12);
        }
    }
}
