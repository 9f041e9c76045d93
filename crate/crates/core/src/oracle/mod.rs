//! Ground truth for testing: brute-force statement evaluation and textbook
//! graph algorithms.

mod dense;
mod sweep;

use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::vec::Vec;
use core::cmp::Reverse;

use thiserror::Error;

use crate::engine::EngineError;
use crate::fibertree::{Coord, DType, RankDecl, Scalar, Tensor, TensorDecl, TensorError};

pub use dense::dense_eval_stmt;
pub use sweep::{cross_check, tensor_difference, Agreement, Mismatch};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("vertex {vertex} is out of range for a graph with {vertices} vertices")]
    VertexOutOfRange { vertex: u64, vertices: u64 },
    #[error("edge {src}->{dst} has weight {weight}, which is not a non-negative finite integer")]
    BadWeight { src: u64, dst: u64, weight: Scalar },
    #[error("graph has a negative cycle reachable from the source")]
    NegativeCycle,
    #[error("labelings cover {left} and {right} vertices")]
    DomainMismatch { left: usize, right: usize },
    #[error("only programs without stop conditions or nested cascades can be cross-checked")]
    NotSinglePass,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// A directed graph with weighted edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub vertices: u64,
    pub edges: Vec<(u64, u64, Scalar)>,
}

impl Graph {
    pub fn new(vertices: u64) -> Self {
        Graph {
            vertices,
            edges: Vec::new(),
        }
    }

    pub fn add_edge(&mut self, src: u64, dst: u64, w: Scalar) {
        self.edges.push((src, dst, w));
    }

    /// Adjacency tensor `name[S, D]`. Later duplicates overwrite earlier ones.
    pub fn to_tensor(&self, name: &str, dtype: DType, empty: Scalar) -> Result<Tensor, TensorError> {
        let decl = TensorDecl::new(
            name,
            alloc::vec![
                RankDecl::bounded("S", self.vertices),
                RankDecl::bounded("D", self.vertices),
            ],
            dtype,
            empty,
        )?;
        let mut t = Tensor::new(decl);
        for &(s, d, w) in &self.edges {
            t.set(&[s, d], w)?;
        }
        Ok(t)
    }

    /// The graph with every edge also present in reverse.
    pub fn symmetrized(&self) -> Graph {
        let mut g = self.clone();
        for &(s, d, w) in &self.edges {
            g.edges.push((d, s, w));
        }
        g
    }

    fn check(&self, v: u64) -> Result<(), OracleError> {
        if v < self.vertices {
            Ok(())
        } else {
            Err(OracleError::VertexOutOfRange {
                vertex: v,
                vertices: self.vertices,
            })
        }
    }

    fn adjacency(&self) -> Vec<Vec<u64>> {
        let mut adj = alloc::vec![Vec::new(); self.vertices as usize];
        for &(s, d, _) in &self.edges {
            adj[s as usize].push(d);
        }
        adj
    }

    fn int_edges(&self) -> Result<Vec<(u64, u64, i64)>, OracleError> {
        self.edges
            .iter()
            .map(|&(s, d, w)| match w.as_i64() {
                Some(x) if x >= 0 => Ok((s, d, x)),
                _ => Err(OracleError::BadWeight {
                    src: s,
                    dst: d,
                    weight: w,
                }),
            })
            .collect()
    }
}

/// Depth of every vertex reachable from `sources`, by queue-based BFS.
pub fn bfs_oracle(g: &Graph, sources: &[Coord]) -> Result<BTreeMap<u64, u64>, OracleError> {
    let adj = g.adjacency();
    let mut depth = BTreeMap::new();
    let mut queue = VecDeque::new();
    for &s in sources {
        g.check(s)?;
        if depth.insert(s, 0).is_none() {
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        let dv = depth[&v];
        for &w in &adj[v as usize] {
            if let alloc::collections::btree_map::Entry::Vacant(e) = depth.entry(w) {
                e.insert(dv + 1);
                queue.push_back(w);
            }
        }
    }
    Ok(depth)
}

/// Shortest distances from `source` by Dijkstra's algorithm. Weights must be
/// non-negative integers.
pub fn sssp_dijkstra(g: &Graph, source: u64) -> Result<BTreeMap<u64, i64>, OracleError> {
    g.check(source)?;
    let mut adj: Vec<Vec<(u64, i64)>> = alloc::vec![Vec::new(); g.vertices as usize];
    for (s, d, w) in g.int_edges()? {
        adj[s as usize].push((d, w));
    }
    let mut dist: BTreeMap<u64, i64> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0i64, source)));
    while let Some(Reverse((d, v))) = heap.pop() {
        if dist.contains_key(&v) {
            continue;
        }
        dist.insert(v, d);
        for &(w, c) in &adj[v as usize] {
            if !dist.contains_key(&w) {
                heap.push(Reverse((d + c, w)));
            }
        }
    }
    Ok(dist)
}

/// Shortest distances from `source` by Bellman-Ford relaxation.
pub fn sssp_bellman_ford(g: &Graph, source: u64) -> Result<BTreeMap<u64, i64>, OracleError> {
    g.check(source)?;
    let edges: Vec<(u64, u64, i64)> = g
        .edges
        .iter()
        .map(|&(s, d, w)| match w.as_i64() {
            Some(x) => Ok((s, d, x)),
            None => Err(OracleError::BadWeight {
                src: s,
                dst: d,
                weight: w,
            }),
        })
        .collect::<Result<_, _>>()?;
    let mut dist: Vec<Option<i64>> = alloc::vec![None; g.vertices as usize];
    dist[source as usize] = Some(0);
    for round in 0..=g.vertices {
        let mut changed = false;
        for &(s, d, w) in &edges {
            if let Some(ds) = dist[s as usize] {
                if dist[d as usize].is_none_or(|dd| ds + w < dd) {
                    dist[d as usize] = Some(ds + w);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        if round == g.vertices {
            return Err(OracleError::NegativeCycle);
        }
    }
    Ok(dist
        .iter()
        .enumerate()
        .filter_map(|(v, d)| d.map(|d| (v as u64, d)))
        .collect())
}

/// Connected components of `g` viewed as undirected: each vertex maps to the
/// smallest vertex id in its component.
pub fn cc_oracle(g: &Graph) -> Vec<u64> {
    fn find(parent: &mut [u64], mut v: u64) -> u64 {
        let mut root = v;
        while parent[root as usize] != root {
            root = parent[root as usize];
        }
        while parent[v as usize] != root {
            let next = parent[v as usize];
            parent[v as usize] = root;
            v = next;
        }
        root
    }
    let mut parent: Vec<u64> = (0..g.vertices).collect();
    for &(s, d, _) in &g.edges {
        let (a, b) = (find(&mut parent, s), find(&mut parent, d));
        // Keep the smaller id as root so the labels come out canonical.
        if a < b {
            parent[b as usize] = a;
        } else if b < a {
            parent[a as usize] = b;
        }
    }
    (0..g.vertices).map(|v| find(&mut parent, v)).collect()
}

/// Whether two labelings induce the same partition.
pub fn partitions_equal(a: &[u64], b: &[u64]) -> Result<bool, OracleError> {
    if a.len() != b.len() {
        return Err(OracleError::DomainMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut fwd = BTreeMap::new();
    let mut back = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        if *fwd.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
            return Ok(false);
        }
    }
    Ok(true)
}
