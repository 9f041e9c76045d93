use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Display;

use super::{NamedProgram, Pairing, StdlibError};
use crate::engine::{instantiate, run_with, RunLimits, Store};
use crate::fibertree::{Coord, DType, Scalar, Shape, Tensor, TensorDecl};
use crate::operators::OperatorRegistry;
use crate::oracle::{
    bfs_oracle, cc_oracle, partitions_equal, sssp_bellman_ford, sssp_dijkstra, Graph,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    /// The first point where program and oracle disagree.
    Fail(String),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        *self == Verdict::Pass
    }
}

/// The adjacency tensor for `decl`, which must have two ranks. Edge weights
/// are converted to the declared type; booleans only record presence.
pub fn graph_tensor(decl: &TensorDecl, g: &Graph) -> Result<Tensor, StdlibError> {
    if decl.rank_count() != 2 {
        return Err(StdlibError::Bind(format!(
            "`{}` has {} ranks; a graph needs 2",
            decl.name,
            decl.rank_count()
        )));
    }
    let mut t = Tensor::new(decl.clone());
    for &(s, d, w) in &g.edges {
        let v = match (decl.dtype, w) {
            (DType::Bool, _) => Scalar::Bool(true),
            (DType::Int, Scalar::Int(_)) => w,
            (DType::Int, Scalar::Bool(b)) => Scalar::int(b as i64),
            (DType::Int, Scalar::Real(_)) => {
                return Err(StdlibError::Bind(format!(
                    "edge {s}->{d} has real weight {w} but `{}` is int",
                    decl.name
                )))
            }
            (DType::Float, _) => w
                .cast(DType::Float, &decl.empty)
                .map_err(|e| StdlibError::Bind(e.to_string()))?,
        };
        t.set(&[s, d], v)?;
    }
    Ok(t)
}

/// Runs a graph program with `|V|` set to the vertex count, every list bound
/// to `sources`, and every user tensor bound to `g`.
pub fn run_on_graph(
    np: &NamedProgram,
    g: &Graph,
    sources: &[Coord],
    limits: RunLimits,
    reg: &OperatorRegistry,
) -> Result<Store, StdlibError> {
    let p = np.program();
    let mut seed = Store::new();
    for param in &np.bindings.params {
        if param != "V" {
            return Err(StdlibError::Bind(format!(
                "`{}` needs size parameter |{param}|, which a graph does not supply",
                np.name
            )));
        }
        seed.set_param(param, g.vertices);
    }
    for l in &np.bindings.lists {
        seed.set_list(l, sources.to_vec());
    }
    for u in &np.bindings.users {
        let d = p.decl(u).expect("user tensors are declared");
        let decl = instantiate(d, &seed)?;
        seed.insert(graph_tensor(&decl, g)?);
    }
    Ok(run_with(&p, seed, limits, reg)?)
}

/// Runs `np` on `g` and compares its answer with the paired oracle.
pub fn verify(
    np: &NamedProgram,
    g: &Graph,
    sources: &[Coord],
    limits: RunLimits,
    reg: &OperatorRegistry,
) -> Result<Verdict, StdlibError> {
    let outcome = match np.pairing {
        Pairing::None => return Err(StdlibError::NoPairing(np.name.to_string())),
        Pairing::Bfs { frontier } => {
            let mut unit = g.clone();
            for e in &mut unit.edges {
                e.2 = Scalar::int(1);
            }
            let store = run_on_graph(np, &unit, sources, limits, reg)?;
            let want = bfs_oracle(&unit, sources)?;
            depths(&store, frontier).map(|got| compare(&got, &want))
        }
        Pairing::Reachability { visited: name } => {
            let store = run_on_graph(np, g, sources, limits, reg)?;
            let want: BTreeMap<u64, bool> =
                bfs_oracle(g, sources)?.into_keys().map(|v| (v, true)).collect();
            visited(&store, name).map(|got| {
                let got: BTreeMap<u64, bool> = got.into_iter().map(|v| (v, true)).collect();
                compare(&got, &want)
            })
        }
        Pairing::Sssp { distances: name } => {
            let source = match sources {
                [s] => *s,
                _ => {
                    return Err(StdlibError::Bind(format!(
                        "shortest paths need exactly one source, got {}",
                        sources.len()
                    )))
                }
            };
            let store = run_on_graph(np, g, sources, limits, reg)?;
            // Compare against the edges the program actually saw: weights
            // equal to the empty value are not stored.
            let seen = input_graph(&store, np)?;
            let want = if seen.edges.iter().all(|e| e.2.as_i64().is_some_and(|w| w >= 0)) {
                sssp_dijkstra(&seen, source)?
            } else {
                sssp_bellman_ford(&seen, source)?
            };
            distances(&store, name).map(|got| compare(&got, &want))
        }
        Pairing::Cc { parents } => {
            let sym = g.symmetrized();
            let store = run_on_graph(np, &sym, sources, limits, reg)?;
            let want = cc_oracle(&sym);
            components(&store, parents).and_then(|got| {
                if partitions_equal(&got, &want)? {
                    Ok(Verdict::Pass)
                } else {
                    let v = first_split(&got, &want);
                    Ok(Verdict::Fail(format!(
                        "vertex {v}: program component {} vs oracle component {}",
                        got[v], want[v]
                    )))
                }
            })
        }
    };
    match outcome {
        Ok(v) => Ok(v),
        Err(StdlibError::Malformed(m)) => Ok(Verdict::Fail(m)),
        Err(e) => Err(e),
    }
}

fn input_graph(store: &Store, np: &NamedProgram) -> Result<Graph, StdlibError> {
    let name = np.bindings.users.first().ok_or_else(|| {
        StdlibError::Bind(format!("`{}` has no user-supplied tensor", np.name))
    })?;
    let t = tensor(store, name)?;
    let n = bounded(t, 0)?;
    let mut g = Graph::new(n);
    for (pt, v) in t.iter() {
        g.add_edge(pt[0], pt[1], v);
    }
    Ok(g)
}

fn compare<V: PartialEq + Display>(got: &BTreeMap<u64, V>, want: &BTreeMap<u64, V>) -> Verdict {
    let keys: BTreeSet<&u64> = got.keys().chain(want.keys()).collect();
    for k in keys {
        let (a, b) = (got.get(k), want.get(k));
        if a != b {
            let show = |x: Option<&V>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
            return Verdict::Fail(format!(
                "vertex {k}: program {} vs oracle {}",
                show(a),
                show(b)
            ));
        }
    }
    Verdict::Pass
}

/// The first vertex whose component membership differs between the two
/// labelings.
fn first_split(a: &[u64], b: &[u64]) -> usize {
    (0..a.len())
        .find(|&v| (0..a.len()).any(|w| (a[v] == a[w]) != (b[v] == b[w])))
        .unwrap_or(0)
}

fn tensor<'a>(store: &'a Store, name: &str) -> Result<&'a Tensor, StdlibError> {
    store
        .get(name)
        .ok_or_else(|| StdlibError::Malformed(format!("no tensor `{name}` in the result")))
}

fn bounded(t: &Tensor, rank: usize) -> Result<u64, StdlibError> {
    match t.decl().ranks.get(rank).map(|r| r.shape) {
        Some(Shape::Bounded(n)) => Ok(n),
        _ => Err(StdlibError::Malformed(format!(
            "rank {rank} of `{}` is not bounded",
            t.name()
        ))),
    }
}

fn last_slice(store: &Store, name: &str) -> Result<Tensor, StdlibError> {
    let t = tensor(store, name)?;
    if !t.decl().is_generational() {
        return Ok(t.clone());
    }
    let g = t.generations().last().unwrap_or(0);
    Ok(t.slice(g))
}

fn int_value(t: &Tensor, pt: &[Coord], v: Scalar) -> Result<i64, StdlibError> {
    v.as_i64().ok_or_else(|| {
        StdlibError::Malformed(format!("{}{pt:?} holds {v}, not a finite integer", t.name()))
    })
}

/// Depth of each vertex: the value at its first appearance in any generation
/// of the frontier `name[I, S]`.
pub fn depths(store: &Store, name: &str) -> Result<BTreeMap<u64, u64>, StdlibError> {
    let t = tensor(store, name)?;
    let mut out = BTreeMap::new();
    for (pt, v) in t.iter() {
        let d = int_value(t, &pt, v)?;
        out.entry(pt[1]).or_insert(d as u64);
    }
    Ok(out)
}

/// Vertices present in the final generation of `name[I, D]`.
pub fn visited(store: &Store, name: &str) -> Result<BTreeSet<u64>, StdlibError> {
    Ok(last_slice(store, name)?.iter().map(|(pt, _)| pt[0]).collect())
}

/// Finite distances in the final generation of `name[I, S]`.
pub fn distances(store: &Store, name: &str) -> Result<BTreeMap<u64, i64>, StdlibError> {
    let t = last_slice(store, name)?;
    t.iter()
        .map(|(pt, v)| Ok((pt[0], int_value(&t, &pt, v)?)))
        .collect()
}

/// Parent of every vertex in the final generation of `name[I, V, A]`.
pub fn components(store: &Store, name: &str) -> Result<Vec<u64>, StdlibError> {
    let t = last_slice(store, name)?;
    let n = bounded(&t, 0)?;
    let mut parent: Vec<Option<u64>> = alloc::vec![None; n as usize];
    for (pt, _) in t.iter() {
        let slot = &mut parent[pt[0] as usize];
        if slot.is_some() {
            return Err(StdlibError::Malformed(format!(
                "vertex {} has more than one parent",
                pt[0]
            )));
        }
        *slot = Some(pt[1]);
    }
    parent
        .into_iter()
        .enumerate()
        .map(|(v, p)| p.ok_or_else(|| StdlibError::Malformed(format!("vertex {v} has no parent"))))
        .collect()
}
