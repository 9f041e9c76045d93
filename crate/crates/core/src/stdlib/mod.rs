//! Bundled programs, looked up by name.

mod verify;

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::ast::Program;
use crate::engine::EngineError;
use crate::fibertree::TensorError;
use crate::oracle::OracleError;
use crate::parser::parse;

pub use verify::{
    components, depths, distances, graph_tensor, run_on_graph, verify, visited, Verdict,
};

#[derive(Debug, Error)]
pub enum StdlibError {
    #[error("unknown program `{name}`; available: {available}")]
    Unknown { name: String, available: String },
    #[error("program `{0}` has no oracle pairing")]
    NoPairing(String),
    #[error("cannot bind inputs: {0}")]
    Bind(String),
    #[error("malformed result: {0}")]
    Malformed(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which reference algorithm checks a program, and the tensor holding its
/// answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pairing {
    None,
    /// Per-generation frontier whose values are BFS depths.
    Bfs { frontier: &'static str },
    /// Visited set at the final generation.
    Reachability { visited: &'static str },
    /// Distances at the final generation.
    Sssp { distances: &'static str },
    /// Parent matrix at the final generation; one parent per vertex.
    Cc { parents: &'static str },
}

impl Pairing {
    pub fn oracle_name(&self) -> &'static str {
        match self {
            Pairing::None => "none",
            Pairing::Bfs { .. } => "bfs",
            Pairing::Reachability { .. } => "reachability",
            Pairing::Sssp { .. } => "sssp",
            Pairing::Cc { .. } => "connected-components",
        }
    }
}

/// What a program needs from the caller before it can run.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Bindings {
    pub params: Vec<String>,
    pub lists: Vec<String>,
    pub users: Vec<String>,
}

impl Bindings {
    pub fn of(p: &Program) -> Self {
        Bindings {
            params: p.size_params().into_iter().map(ToString::to_string).collect(),
            lists: p.lists(),
            users: p.user_tensors().into_iter().map(ToString::to_string).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NamedProgram {
    pub name: &'static str,
    pub summary: &'static str,
    pub source: &'static str,
    pub bindings: Bindings,
    pub pairing: Pairing,
}

impl NamedProgram {
    pub fn program(&self) -> Program {
        parse(self.source).expect("bundled programs parse")
    }
}

struct Entry {
    name: &'static str,
    summary: &'static str,
    source: &'static str,
    pairing: Pairing,
}

macro_rules! entry {
    ($name:literal, $summary:literal, $pairing:expr) => {
        Entry {
            name: $name,
            summary: $summary,
            source: include_str!(concat!("../../../../programs/", $name, ".edge")),
            pairing: $pairing,
        }
    };
}

const BFS: Pairing = Pairing::Bfs { frontier: "F" };
const REACH: Pairing = Pairing::Reachability { visited: "P" };
const SSSP: Pairing = Pairing::Sssp { distances: "D" };

/// Sorted by name.
static CATALOG: &[Entry] = &[
    entry!("bellman_ford", "single-source shortest paths by Bellman-Ford relaxation", SSSP),
    entry!("bfs", "breadth-first search depths, ANY in the gather step", BFS),
    entry!("bfs_min", "breadth-first search depths, min in the gather step", BFS),
    entry!("cc", "connected components by parent-connect and nested shortcut", Pairing::Cc { parents: "P" }),
    entry!("conv1d", "one-dimensional convolution", Pairing::None),
    entry!("degree", "out-degree of every vertex", Pairing::None),
    entry!("diag_case", "case statement: A off the diagonal, dot products on it", Pairing::None),
    entry!("dijkstra", "single-source shortest paths, closest queued vertex first", SSSP),
    entry!("elementwise_pow", "element-wise power and exponential", Pairing::None),
    entry!("gemm", "matrix product", Pairing::None),
    entry!("green_bfs", "reachability that deletes edges into visited vertices", REACH),
    entry!("masked_degree_cascade", "out-degree of listed vertices, mask applied last", Pairing::None),
    entry!("masked_degree_fused", "out-degree of listed vertices, mask applied first", Pairing::None),
    entry!("masked_gemm", "matrix product restricted to a mask", Pairing::None),
    entry!("max_neighbor_id", "out-edge to the highest-numbered neighbor", Pairing::None),
    entry!("min_edge_weight", "smallest outgoing edge weight", Pairing::None),
    entry!("min_neighbor", "minimum-weight out-edge by populate", Pairing::None),
    entry!("min_neighbor_2hop", "cheapest paths through the minimum-weight neighbor", Pairing::None),
    entry!("min_neighbor_mapreduce", "minimum-weight out-edges by reduce and filter", Pairing::None),
    entry!("reach_pull", "reachability, pull form", REACH),
    entry!("reach_push", "reachability, push form", REACH),
    entry!("scale_by_rank", "rows scaled by their index", Pairing::None),
    entry!("shift", "vector shifted down by one", Pairing::None),
    entry!("spfa", "single-source shortest paths by the Shortest Paths Faster Algorithm", SSSP),
    entry!("top3", "three heaviest out-edges of every vertex", Pairing::None),
    entry!("upper_triangle", "strict upper triangle", Pairing::None),
];

/// Names and one-line descriptions, alphabetical.
pub fn list_programs() -> Vec<(&'static str, &'static str)> {
    CATALOG.iter().map(|e| (e.name, e.summary)).collect()
}

pub fn get_program(name: &str) -> Result<NamedProgram, StdlibError> {
    let e = CATALOG.iter().find(|e| e.name == name).ok_or_else(|| {
        let names: Vec<&str> = CATALOG.iter().map(|e| e.name).collect();
        StdlibError::Unknown {
            name: name.to_string(),
            available: names.join(", "),
        }
    })?;
    let p = parse(e.source).expect("bundled programs parse");
    Ok(NamedProgram {
        name: e.name,
        summary: e.summary,
        source: e.source,
        bindings: Bindings::of(&p),
        pairing: e.pairing,
    })
}
