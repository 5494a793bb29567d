//! Undirected graph topology and incidence-matrix algebra.
//!
//! Node ids are 1-based in the public interface, matching the usual drawing
//! of small test networks. Each edge carries a fixed orientation
//! `(tail, head)`; the built-in generators orient edges from the lower to the
//! higher node id. All quantities derived downstream must be invariant under
//! re-orientation, which the integration tests exercise by flipping edges.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Connected undirected graph with an orientation assigned to every edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    node_count: usize,
    /// Oriented edges `(tail, head)`, 1-based node ids.
    edges: Vec<(usize, usize)>,
    degrees: Vec<usize>,
    neighbors: Vec<BTreeSet<usize>>,
}

impl Topology {
    /// Path graph `1 - 2 - ... - n` with edges oriented `(i, i+1)`.
    pub fn line(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidTopology(format!(
                "a line graph needs at least 2 nodes, got {n}"
            )));
        }
        let edges = (1..n).map(|i| (i, i + 1)).collect();
        Self::from_edges(n, edges)
    }

    /// Builds and validates a topology from an explicit oriented edge list.
    ///
    /// Rejects self-loops, repeated node pairs, out-of-range ids and
    /// disconnected graphs.
    pub fn from_edges(node_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::InvalidTopology(format!(
                "need at least 2 nodes, got {node_count}"
            )));
        }
        let mut seen = BTreeSet::new();
        let mut neighbors = vec![BTreeSet::new(); node_count];
        for (idx, &(tail, head)) in edges.iter().enumerate() {
            if tail == 0 || head == 0 || tail > node_count || head > node_count {
                return Err(Error::InvalidTopology(format!(
                    "edge {} references node outside 1..={node_count}: ({tail}, {head})",
                    idx + 1
                )));
            }
            if tail == head {
                return Err(Error::InvalidTopology(format!(
                    "edge {} is a self-loop on node {tail}",
                    idx + 1
                )));
            }
            let key = (tail.min(head), tail.max(head));
            if !seen.insert(key) {
                return Err(Error::InvalidTopology(format!(
                    "node pair ({}, {}) appears more than once",
                    key.0, key.1
                )));
            }
            neighbors[tail - 1].insert(head);
            neighbors[head - 1].insert(tail);
        }

        // Connectivity by breadth-first search from node 1.
        let mut visited = vec![false; node_count];
        let mut queue = vec![1usize];
        visited[0] = true;
        while let Some(i) = queue.pop() {
            for &j in &neighbors[i - 1] {
                if !visited[j - 1] {
                    visited[j - 1] = true;
                    queue.push(j);
                }
            }
        }
        if let Some(missing) = visited.iter().position(|&v| !v) {
            return Err(Error::InvalidTopology(format!(
                "graph is not connected: node {} is unreachable from node 1",
                missing + 1
            )));
        }

        let degrees = neighbors.iter().map(|s| s.len()).collect();
        Ok(Self {
            node_count,
            edges,
            degrees,
            neighbors,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Oriented edges `(tail, head)`, 1-based.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Endpoints of edge `l` (0-based edge index) as 0-based node indices.
    pub fn endpoints0(&self, l: usize) -> (usize, usize) {
        let (tail, head) = self.edges[l];
        (tail - 1, head - 1)
    }

    /// Degree of node `i` (1-based).
    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i - 1]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Neighbour set of node `i` (1-based).
    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.neighbors[i - 1]
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        IncidenceMatrix {
            node_count: self.node_count,
            edges: self.edges.iter().map(|&(t, h)| (t - 1, h - 1)).collect(),
        }
    }

    /// Edge indices (0-based) incident to node `i` (1-based).
    pub fn incident_edges(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &(t, h))| t == i || h == i)
            .map(|(l, _)| l)
            .collect()
    }
}

/// Incidence matrix `D` of an oriented graph: `d[i][l] = +1` if node `i` is
/// the head (positive end) of edge `l`, `-1` if it is the tail, `0` otherwise.
///
/// Rows and columns are 0-based here; this is the numeric object used by the
/// simulation kernels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    node_count: usize,
    /// `(tail, head)` with 0-based node indices, one entry per column.
    edges: Vec<(usize, usize)>,
}

impl IncidenceMatrix {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn entry(&self, node: usize, edge: usize) -> i8 {
        let (tail, head) = self.edges[edge];
        if node == head {
            1
        } else if node == tail {
            -1
        } else {
            0
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.node_count)
            .map(|i| (0..self.edges.len()).map(|l| self.entry(i, l) as f64).collect())
            .collect()
    }

    /// Stacked edge variables `z = (D^T ⊗ I_np) p`: block `l` equals
    /// `p_head - p_tail`.
    pub fn relative_distances(&self, p: &[f64], np: usize) -> Result<Vec<f64>> {
        self.check_block(p.len(), self.node_count, np, "node vector")?;
        let mut z = vec![0.0; self.edges.len() * np];
        self.relative_distances_into(p, np, &mut z);
        Ok(z)
    }

    /// Allocation-free form of [`relative_distances`](Self::relative_distances);
    /// `z` must have length `M * np`.
    pub fn relative_distances_into(&self, p: &[f64], np: usize, z: &mut [f64]) {
        debug_assert_eq!(p.len(), self.node_count * np);
        debug_assert_eq!(z.len(), self.edges.len() * np);
        for (l, &(tail, head)) in self.edges.iter().enumerate() {
            for c in 0..np {
                z[l * np + c] = p[head * np + c] - p[tail * np + c];
            }
        }
    }

    /// Single edge block of `z = (D^T ⊗ I_np) p`.
    pub fn edge_difference_into(&self, p: &[f64], np: usize, edge: usize, out: &mut [f64]) {
        let (tail, head) = self.edges[edge];
        for c in 0..np {
            out[c] = p[head * np + c] - p[tail * np + c];
        }
    }

    /// Stacked control `u = -(D ⊗ I_np) Ψ`: per node this is the sum of the
    /// coupling terms over its incident edges.
    pub fn stacked_control(&self, psi: &[f64], np: usize) -> Result<Vec<f64>> {
        self.check_block(psi.len(), self.edges.len(), np, "edge vector")?;
        let mut u = vec![0.0; self.node_count * np];
        self.stacked_control_into(psi, np, &mut u);
        Ok(u)
    }

    /// Allocation-free form of [`stacked_control`](Self::stacked_control);
    /// `u` must have length `N * np`.
    pub fn stacked_control_into(&self, psi: &[f64], np: usize, u: &mut [f64]) {
        debug_assert_eq!(psi.len(), self.edges.len() * np);
        debug_assert_eq!(u.len(), self.node_count * np);
        u.fill(0.0);
        for (l, &(tail, head)) in self.edges.iter().enumerate() {
            for c in 0..np {
                let w = psi[l * np + c];
                u[tail * np + c] += w;
                u[head * np + c] -= w;
            }
        }
    }

    fn check_block(&self, got: usize, count: usize, np: usize, what: &str) -> Result<()> {
        if np == 0 {
            return Err(Error::ShapeMismatch("block size must be positive".into()));
        }
        if got != count * np {
            return Err(Error::ShapeMismatch(format!(
                "{what} has {got} entries, expected {count} blocks of size {np}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Rank by plain Gaussian elimination with partial pivoting.
    fn rank(mut m: Vec<Vec<f64>>) -> usize {
        let rows = m.len();
        let cols = if rows == 0 { 0 } else { m[0].len() };
        let mut rank = 0;
        for col in 0..cols {
            let pivot = (rank..rows).max_by(|&a, &b| {
                m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap()
            });
            let Some(p) = pivot else { break };
            if m[p][col].abs() < 1e-12 {
                continue;
            }
            m.swap(rank, p);
            for r in 0..rows {
                if r != rank && m[r][col].abs() > 1e-12 {
                    let f = m[r][col] / m[rank][col];
                    for c in col..cols {
                        m[r][c] -= f * m[rank][c];
                    }
                }
            }
            rank += 1;
            if rank == rows {
                break;
            }
        }
        rank
    }

    #[test]
    fn line_graph_five_nodes() {
        let g = Topology::line(5).unwrap();
        assert_eq!(g.node_count(), 5);
        assert_eq!(g.edge_count(), 4);
        assert_eq!(g.edges(), &[(1, 2), (2, 3), (3, 4), (4, 5)]);
        assert_eq!(g.degrees(), &[1, 2, 2, 2, 1]);
        assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.edge_count());
    }

    #[test]
    fn line_graph_two_and_three_nodes() {
        let g2 = Topology::line(2).unwrap();
        assert_eq!(g2.edges(), &[(1, 2)]);
        assert_eq!(g2.degrees(), &[1, 1]);

        let g3 = Topology::line(3).unwrap();
        assert_eq!(g3.edges(), &[(1, 2), (2, 3)]);
        assert_eq!(g3.degree(2), 2);
        assert_eq!(g3.neighbors(2).iter().copied().collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn line_graph_rejects_degenerate_sizes() {
        assert!(matches!(Topology::line(0), Err(Error::InvalidTopology(_))));
        assert!(matches!(Topology::line(1), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn from_edges_rejects_bad_inputs() {
        assert!(Topology::from_edges(3, vec![(1, 1)]).is_err());
        assert!(Topology::from_edges(3, vec![(1, 2), (2, 1)]).is_err());
        assert!(Topology::from_edges(3, vec![(1, 4)]).is_err());
        // disconnected: node 3 isolated
        assert!(Topology::from_edges(3, vec![(1, 2)]).is_err());
        // connected triangle is fine
        assert!(Topology::from_edges(3, vec![(1, 2), (2, 3), (1, 3)]).is_ok());
    }

    #[test]
    fn incidence_columns() {
        let d2 = Topology::line(2).unwrap().incidence();
        assert_eq!(d2.entry(0, 0), -1);
        assert_eq!(d2.entry(1, 0), 1);

        let d3 = Topology::line(3).unwrap().incidence();
        let dense = d3.to_dense();
        assert_eq!(dense[0], vec![-1.0, 0.0]);
        assert_eq!(dense[1], vec![1.0, -1.0]);
        assert_eq!(dense[2], vec![0.0, 1.0]);
    }

    #[test]
    fn incidence_each_column_sums_to_zero() {
        let d = Topology::line(5).unwrap().incidence();
        for l in 0..d.edge_count() {
            let s: i32 = (0..d.node_count()).map(|i| d.entry(i, l) as i32).sum();
            assert_eq!(s, 0);
        }
    }

    #[test]
    fn incidence_rank_is_nodes_minus_one() {
        let d = Topology::line(5).unwrap().incidence();
        assert_eq!(rank(d.to_dense()), 4);
    }

    #[test]
    fn relative_distances_examples() {
        let d3 = Topology::line(3).unwrap().incidence();
        assert_eq!(d3.relative_distances(&[0.0, 1.0, 3.0], 1).unwrap(), vec![1.0, 2.0]);

        let d5 = Topology::line(5).unwrap().incidence();
        assert_eq!(
            d5.relative_distances(&[0.0, 1.0, 2.0, 3.0, 4.0], 1).unwrap(),
            vec![1.0; 4]
        );
        assert!(d5.relative_distances(&[0.0; 4], 1).is_err());
    }

    #[test]
    fn stacked_control_examples() {
        let d2 = Topology::line(2).unwrap().incidence();
        assert_eq!(d2.stacked_control(&[0.3], 1).unwrap(), vec![0.3, -0.3]);

        let d3 = Topology::line(3).unwrap().incidence();
        assert_eq!(d3.stacked_control(&[1.0, 2.0], 1).unwrap(), vec![1.0, 1.0, -2.0]);
        assert_eq!(d3.stacked_control(&[0.0, 0.0], 1).unwrap(), vec![0.0; 3]);
        assert!(d3.stacked_control(&[0.0; 3], 1).is_err());
    }

    proptest! {
        #[test]
        fn constant_positions_have_zero_distances(c in -1e6f64..1e6, n in 2usize..8) {
            let d = Topology::line(n).unwrap().incidence();
            let p = vec![c; n];
            let z = d.relative_distances(&p, 1).unwrap();
            prop_assert!(z.iter().all(|&x| x == 0.0));
        }

        #[test]
        fn control_sums_to_zero_over_nodes(psi in proptest::collection::vec(-10.0f64..10.0, 4), np in 1usize..3) {
            let d = Topology::line(5).unwrap().incidence();
            let stacked: Vec<f64> = psi.iter().flat_map(|&w| std::iter::repeat_n(w, np)).collect();
            let u = d.stacked_control(&stacked, np).unwrap();
            for c in 0..np {
                let s: f64 = (0..5).map(|i| u[i * np + c]).sum();
                prop_assert!(s.abs() <= 1e-12);
            }
        }
    }
}
