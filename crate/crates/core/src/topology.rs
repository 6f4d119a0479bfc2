//! Graph structure of the microgrid.
//!
//! Nodes are DGUs, edges are transmission lines. Edges carry a fixed but
//! arbitrary orientation (`head -> tail`); every line is managed by exactly
//! one of its two endpoints. All indices are zero-based.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub head: usize,
    pub tail: usize,
}

/// Connected, undirected, unweighted graph with oriented edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Topology("graph has no nodes".into()));
        }
        let mut neighbors = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            if e.head >= n || e.tail >= n {
                return Err(Error::Topology(format!(
                    "edge {} references node outside 0..{n}",
                    k + 1
                )));
            }
            if e.head == e.tail {
                return Err(Error::Topology(format!("edge {} is a self-loop", k + 1)));
            }
            if neighbors[e.head].contains(&e.tail) {
                return Err(Error::Topology(format!(
                    "edge {} duplicates an existing connection",
                    k + 1
                )));
            }
            neighbors[e.head].push(e.tail);
            neighbors[e.tail].push(e.head);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let graph = Self { n, edges, neighbors };
        if !graph.is_connected() {
            return Err(Error::Topology("graph is not connected".into()));
        }
        Ok(graph)
    }

    /// Undirected cycle `0-1-...-(n-1)-0` with edge `k` oriented `k -> k+1`.
    pub fn ring(n: usize) -> Result<Self> {
        let edges = (0..n)
            .map(|k| Edge {
                head: k,
                tail: (k + 1) % n,
            })
            .collect();
        Self::new(n, edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges = (0..n.saturating_sub(1))
            .map(|k| Edge { head: k, tail: k + 1 })
            .collect();
        Self::new(n, edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &self.neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Oriented node-edge incidence matrix (`n x m`): `+1` at the head,
    /// `-1` at the tail of every column.
    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n, self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            b[(e.head, k)] = 1.0;
            b[(e.tail, k)] = -1.0;
        }
        b
    }

    /// Degree matrix minus adjacency.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            l[(i, i)] = self.degree(i) as f64;
            for &j in &self.neighbors[i] {
                l[(i, j)] = -1.0;
            }
        }
        l
    }

    /// Row `i` of the Laplacian lifted by a Kronecker product with the
    /// `blockdim` identity: `(e_i^T L) (x) I_blockdim`.
    pub fn lifted_row_block(&self, i: usize, blockdim: usize) -> Result<DMatrix<f64>> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, size: self.n });
        }
        let lap = self.laplacian();
        let mut out = DMatrix::zeros(blockdim, self.n * blockdim);
        for j in 0..self.n {
            let w = lap[(i, j)];
            if w != 0.0 {
                for d in 0..blockdim {
                    out[(d, j * blockdim + d)] = w;
                }
            }
        }
        Ok(out)
    }

    /// `(L v)_i` without forming the matrix.
    #[inline]
    pub fn laplacian_row_dot(&self, i: usize, v: &[f64]) -> f64 {
        let mut acc = self.degree(i) as f64 * v[i];
        for &j in &self.neighbors[i] {
            acc -= v[j];
        }
        acc
    }

    /// `(L (x) I_p) w` restricted to block `i`, written into `out` (length
    /// `p`). `w` is the agent-major stack of `n` blocks of length `p`,
    /// each optionally scaled by `scale[j]`.
    #[inline]
    pub fn lifted_row_apply(&self, i: usize, p: usize, w: &[f64], scale: Option<&[f64]>, out: &mut [f64]) {
        let s = |j: usize| scale.map_or(1.0, |s| s[j]);
        let deg = self.degree(i) as f64 * s(i);
        let own = &w[i * p..(i + 1) * p];
        for d in 0..p {
            out[d] = deg * own[d];
        }
        for &j in &self.neighbors[i] {
            let sj = s(j);
            let blk = &w[j * p..(j + 1) * p];
            for d in 0..p {
                out[d] -= sj * blk[d];
            }
        }
    }
}

/// Electrical network plus the line-management partition.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrogridTopology {
    graph: Graph,
    manager: Vec<usize>,
    managed: Vec<Vec<usize>>,
}

impl MicrogridTopology {
    /// `manager[k]` is the DGU responsible for line `k`; it must be one of
    /// the line's endpoints.
    pub fn new(graph: Graph, manager: Vec<usize>) -> Result<Self> {
        if manager.len() != graph.edge_count() {
            return Err(Error::Dimension {
                what: "line managers",
                expected: graph.edge_count(),
                got: manager.len(),
            });
        }
        let mut managed = vec![Vec::new(); graph.node_count()];
        for (k, (&owner, e)) in manager.iter().zip(graph.edges()).enumerate() {
            if owner != e.head && owner != e.tail {
                return Err(Error::Topology(format!(
                    "line {} is managed by node {} which is not one of its endpoints",
                    k + 1,
                    owner + 1
                )));
            }
            managed[owner].push(k);
        }
        Ok(Self {
            graph,
            manager,
            managed,
        })
    }

    /// Each line managed by its head node.
    pub fn with_head_managers(graph: Graph) -> Result<Self> {
        let manager = graph.edges().iter().map(|e| e.head).collect();
        Self::new(graph, manager)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.node_count()
    }

    pub fn m(&self) -> usize {
        self.graph.edge_count()
    }

    pub fn manager(&self, line: usize) -> usize {
        self.manager[line]
    }

    /// Sorted line indices managed by node `i`.
    pub fn managed_lines(&self, i: usize) -> &[usize] {
        &self.managed[i]
    }

    /// Length of agent `i`'s local state `(I_i, V_i, I_l[E_i])`.
    pub fn local_dim(&self, i: usize) -> usize {
        2 + self.managed[i].len()
    }

    /// Positions of agent `i`'s local state inside the global ordering
    /// `(I_1..I_n, V_1..V_n, I_l1..I_lm)`.
    pub fn local_to_global(&self, i: usize) -> Vec<usize> {
        let n = self.n();
        let mut idx = Vec::with_capacity(self.local_dim(i));
        idx.push(i);
        idx.push(n + i);
        idx.extend(self.managed[i].iter().map(|&k| 2 * n + k));
        idx
    }

    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        self.graph.incidence_matrix()
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        self.graph.laplacian()
    }

    /// Counts how often each line appears across the managed sets; a valid
    /// partition gives all ones.
    pub fn partition_multiplicity(&self) -> Vec<usize> {
        let mut count = vec![0; self.m()];
        for set in &self.managed {
            for &k in set {
                count[k] += 1;
            }
        }
        count
    }
}
