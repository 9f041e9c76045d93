use super::*;
use crate::fibertree::{DType, Scalar};
use crate::operators::{MergeOp, OpCtx};
use crate::parser::parse;
use alloc::vec;

const BFS: &str = include_str!("../../../../programs/bfs.edge");

fn int(v: i64) -> Scalar {
    Scalar::int(v)
}

fn decl(name: &str, shape: &[u64], dtype: DType, empty: Scalar) -> TensorDecl {
    let ranks = shape
        .iter()
        .enumerate()
        .map(|(i, &n)| RankDecl::bounded(alloc::format!("R{i}"), n))
        .collect();
    TensorDecl::new(name, ranks, dtype, empty).unwrap()
}

fn tensor(name: &str, shape: &[u64], entries: &[(&[Coord], i64)]) -> Tensor {
    let mut t = Tensor::new(decl(name, shape, DType::Int, int(0)));
    for (p, v) in entries {
        t.set(p, int(*v)).unwrap();
    }
    t
}

fn entries(t: &Tensor) -> Vec<(Vec<Coord>, Scalar)> {
    t.iter().collect()
}

fn run_src(src: &str, seed: Store) -> Result<Store, EngineError> {
    run(&parse(src).unwrap(), seed, RunLimits::default())
}

fn path_graph(n: u64) -> Tensor {
    let mut g = Tensor::new(decl("G", &[n, n], DType::Int, int(0)));
    for v in 0..n - 1 {
        g.set(&[v, v + 1], int(1)).unwrap();
    }
    g
}

fn bfs_seed(g: Tensor, n: u64, sources: &[Coord]) -> Store {
    let mut s = Store::new();
    s.insert(g);
    s.set_param("V", n);
    s.set_list("id", sources.to_vec());
    s
}

#[test]
fn bfs_on_a_path() {
    let out = run(&parse(BFS).unwrap(), bfs_seed(path_graph(3), 3, &[0]), RunLimits::default()).unwrap();
    let f = out.get("F").unwrap();
    assert_eq!(entries(&f.slice(0)), vec![(vec![0], int(0))]);
    assert_eq!(entries(&f.slice(1)), vec![(vec![1], int(1))]);
    assert_eq!(entries(&f.slice(2)), vec![(vec![2], int(2))]);
    assert_eq!(f.slice(3).occupancy(), 0);
    assert_eq!(f.generations().collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn bfs_saturates_in_one_pass() {
    let out = run(&parse(BFS).unwrap(), bfs_seed(path_graph(3), 3, &[0, 1, 2]), RunLimits::default()).unwrap();
    let p = out.get("P").unwrap();
    assert_eq!(p.generations().collect::<Vec<_>>(), vec![0, 1]);
}

#[test]
fn eviction_keeps_results() {
    let p = parse(BFS).unwrap();
    let g = {
        let mut g = path_graph(6);
        g.set(&[0, 3], int(1)).unwrap();
        g
    };
    let full = run(&p, bfs_seed(g.clone(), 6, &[0]), RunLimits::default()).unwrap();
    let lean = run(
        &p,
        bfs_seed(g, 6, &[0]),
        RunLimits {
            evict: true,
            ..RunLimits::default()
        },
    )
    .unwrap();
    for name in ["F", "P", "T"] {
        let (a, b) = (full.get(name).unwrap(), lean.get(name).unwrap());
        for g in b.generations() {
            assert!(a.slice(g).equals(&b.slice(g)).unwrap());
        }
        assert!(b.generations().count() <= 2, "{name} kept {:?}", b.generations().collect::<Vec<_>>());
    }
    let last = full.get("P").unwrap().generations().last();
    assert_eq!(lean.get("P").unwrap().generations().last(), last);
}

#[test]
fn generation_limit() {
    let err = run(
        &parse(BFS).unwrap(),
        bfs_seed(path_graph(3), 3, &[0]),
        RunLimits {
            max_generations: 1,
            ..RunLimits::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, EngineError::GenerationLimit { limit: 1, .. }), "{err}");
}

#[test]
fn advance_gather() {
    let src = "tensors {
      G[S=3, D=3]: int, empty=0;
      F[S=3]: int, empty=inf;
      T[D=3]: int, empty=inf;
    }
    init { G = user; F = user; }
    einsum { T[d] = G[s, d] .1 F[s] :: map.1(s; add; cap) reduce.1(s; any; cup); }";
    let mut seed = Store::new();
    seed.insert(tensor("G", &[3, 3], &[(&[0, 1], 1), (&[0, 2], 1)]));
    let mut f = Tensor::new(decl("F", &[3], DType::Int, Scalar::INF));
    f.set(&[0], int(0)).unwrap();
    seed.insert(f);
    let out = run_src(src, seed).unwrap();
    assert_eq!(
        entries(out.get("T").unwrap()),
        vec![(vec![1], int(1)), (vec![2], int(1))]
    );
}

#[test]
fn upper_triangle_constraint() {
    let src = "tensors { G[S=3, D=3]: int, empty=0; L[S=3, D=3]: int, empty=0; }
    init { G = user; }
    einsum { L[s: s < d, d] = G[s, d]; }";
    let mut g = Tensor::new(decl("G", &[3, 3], DType::Int, int(0)));
    for s in 0..3 {
        for d in 0..3 {
            g.set(&[s, d], int(1)).unwrap();
        }
    }
    let mut seed = Store::new();
    seed.insert(g);
    let out = run_src(src, seed).unwrap();
    let pts: Vec<Vec<Coord>> = out.get("L").unwrap().iter().map(|(p, _)| p).collect();
    assert_eq!(pts, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
}

#[test]
fn broadcast() {
    let src = "tensors { A[M=3]: int, empty=0; Z[M=3, P=3]: int, empty=0; }
    init { A = user; }
    einsum { Z[m, p] = A[m]; }";
    let mut seed = Store::new();
    seed.insert(tensor("A", &[3], &[(&[1], 7)]));
    let out = run_src(src, seed).unwrap();
    assert_eq!(
        entries(out.get("Z").unwrap()),
        vec![(vec![1, 0], int(7)), (vec![1, 1], int(7)), (vec![1, 2], int(7))]
    );
}

#[test]
fn shift_boundary() {
    let src = "tensors { A[M=4]: int, empty=0; Z[M=4]: int, empty=0; }
    init { A = user; }
    einsum { Z[m] = A[m+1]; }";
    let mut seed = Store::new();
    seed.insert(tensor("A", &[4], &[(&[0], 5), (&[1], 6), (&[3], 8)]));
    let out = run_src(src, seed).unwrap();
    assert_eq!(
        entries(out.get("Z").unwrap()),
        vec![(vec![0], int(6)), (vec![2], int(8))]
    );
}

#[test]
fn diagonal_is_empty_under_not_equal() {
    let src = "tensors { A[M=3, N=3]: int, empty=0; Z[M=3, N=3]: int, empty=0; }
    init { A = user; }
    einsum { Z[m, n: n != m] = A[m, n]; }";
    let mut seed = Store::new();
    seed.insert(tensor("A", &[3, 3], &[(&[0, 0], 1), (&[1, 1], 2), (&[1, 2], 3)]));
    let out = run_src(src, seed).unwrap();
    assert_eq!(entries(out.get("Z").unwrap()), vec![(vec![1, 2], int(3))]);
}

#[test]
fn iteration_cap() {
    let src = "tensors { A[M=50, K=50]: int, empty=0; B[K=50, N=50]: int, empty=0; Z[M=50, N=50]: int, empty=0; }
    init { A = user; B = user; }
    einsum { Z[m, n] = A[m, k] .1 B[k, n] :: map.1(k; add; pass) reduce(k; add; cup); }";
    let mut seed = Store::new();
    seed.insert(tensor("A", &[50, 50], &[(&[0, 0], 1)]));
    seed.insert(tensor("B", &[50, 50], &[(&[0, 0], 1)]));
    let err = run(
        &parse(src).unwrap(),
        seed,
        RunLimits {
            max_points: 10_000,
            ..RunLimits::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, EngineError::IterationCap { cap: 10_000, .. }), "{err}");
}

#[test]
fn out_of_shape_write_is_an_error() {
    let src = "tensors { A[M=3]: int, empty=0; Z[M=3]: int, empty=0; }
    init { A = user; }
    einsum { Z[m+1] = A[m]; }";
    let mut seed = Store::new();
    seed.insert(tensor("A", &[3], &[(&[2], 1)]));
    let r = run_src(src, seed);
    assert!(matches!(r, Err(EngineError::OutOfShape { .. })), "{r:?}");
}

#[test]
fn missing_bindings() {
    let p = parse(BFS).unwrap();
    let mut s = bfs_seed(path_graph(3), 3, &[0]);
    s.remove("G");
    assert!(matches!(run(&p, s, RunLimits::default()), Err(EngineError::MissingUser(n)) if n == "G"));
    let mut s = Store::new();
    s.insert(path_graph(3));
    s.set_list("id", vec![0]);
    assert!(matches!(run(&p, s, RunLimits::default()), Err(EngineError::MissingParam(n)) if n == "V"));
}

#[test]
fn map_examples() {
    let reg = OperatorRegistry::builtin();
    let ctx = OpCtx::uniform(&[], int(0));
    let takeleft = reg.binary("takeleft").unwrap();
    assert_eq!(
        eval_map(takeleft, MergeOp::CAP, &ctx, Some(int(1)), Some(int(1))).unwrap(),
        NodeVal::Value(int(1))
    );
    let add = reg.binary("add").unwrap();
    assert_eq!(
        eval_map(add, MergeOp::CAP, &ctx, Some(int(1)), None).unwrap(),
        NodeVal::Aborted
    );
    assert_eq!(
        eval_map(add, MergeOp::CUP, &ctx, Some(int(3)), None).unwrap(),
        NodeVal::Value(int(3))
    );
}

#[test]
fn reduce_examples() {
    let reg = OperatorRegistry::builtin();
    let ctx = OpCtx::uniform(&[], Scalar::INF);
    let fold = |op: &str, xs: &[Option<i64>]| {
        let op = reg.binary(op).unwrap();
        xs.iter().fold(None, |st, x| {
            eval_reduce(op, MergeOp::CUP, &ctx, st, x.map(int)).unwrap()
        })
    };
    assert_eq!(fold("min", &[Some(3), Some(1), Some(2)]), Some(int(1)));
    assert_eq!(fold("any", &[None, Some(2), None, Some(5)]), Some(int(2)));
    assert_eq!(fold("min", &[None, None]), None);
}

#[test]
fn max_val_three_fold() {
    let reg = OperatorRegistry::builtin();
    let d = decl("Y", &[8], DType::Int, int(0));
    let stream: Vec<(Vec<Coord>, Scalar)> = [(0, 5), (1, 2), (3, 7), (4, 6), (5, 6), (7, 1)]
        .iter()
        .map(|&(c, v)| (vec![c], int(v)))
        .collect();
    let (y, trace) = eval_populate(
        &d,
        &[true],
        reg.unary("pass").unwrap(),
        reg.coord("maxval").unwrap(),
        Some(3),
        &stream,
    )
    .unwrap();
    let states: Vec<Vec<(Coord, i64)>> = trace
        .iter()
        .map(|s| s.fiber.iter().map(|(c, v)| (c[0], v.as_i64().unwrap())).collect())
        .collect();
    assert_eq!(
        states,
        vec![
            vec![(0, 5)],
            vec![(0, 5), (1, 2)],
            vec![(0, 5), (1, 2), (3, 7)],
            vec![(0, 5), (3, 7), (4, 6)],
            vec![(3, 7), (4, 6), (5, 6)],
            vec![(3, 7), (4, 6), (5, 6)],
        ]
    );
    assert_eq!(
        entries(&y),
        vec![(vec![3], int(7)), (vec![4], int(6)), (vec![5], int(6))]
    );
}

#[test]
fn populate_min_and_max_coord_per_row() {
    let src = "tensors { G[S=3, D=4]: int, empty=0; W[S=3, D=4]: int, empty=0; X[S=3, D=4]: int, empty=0; }
    init { G = user; }
    einsum {
      W[s, d*] = G[s, d] :: populate(d*; pass; minval(1));
      X[s, d*] = G[s, d] :: populate(d*; pass; maxcoord(1));
    }";
    let mut seed = Store::new();
    seed.insert(tensor(
        "G",
        &[3, 4],
        &[(&[0, 1], 4), (&[0, 2], 3), (&[0, 3], 9), (&[2, 0], 2)],
    ));
    let out = run_src(src, seed).unwrap();
    assert_eq!(
        entries(out.get("W").unwrap()),
        vec![(vec![0, 2], int(3)), (vec![2, 0], int(2))]
    );
    assert_eq!(
        entries(out.get("X").unwrap()),
        vec![(vec![0, 3], int(9)), (vec![2, 0], int(2))]
    );
}

#[test]
fn populate_subset_violation() {
    let mut reg = OperatorRegistry::builtin();
    reg.register_coord(crate::operators::CoordOp::new("rogue", |_| Ok(vec![vec![99]])))
        .unwrap();
    let d = decl("Y", &[4], DType::Int, int(0));
    let err = eval_populate(
        &d,
        &[true],
        reg.unary("pass").unwrap(),
        reg.coord("rogue").unwrap(),
        None,
        &[(vec![0], int(1))],
    )
    .unwrap_err();
    assert!(matches!(err, EngineError::PopulateSubset { .. }));
}

#[test]
fn stop_conditions() {
    let mut t = Tensor::new(TensorDecl::new(
        "P",
        vec![RankDecl::new("I", Shape::Unbounded), RankDecl::bounded("D", 3)],
        DType::Bool,
        Scalar::Bool(false),
    )
    .unwrap());
    t.set(&[0, 1], Scalar::Bool(true)).unwrap();
    t.set(&[1, 1], Scalar::Bool(true)).unwrap();
    t.set(&[2, 1], Scalar::Bool(true)).unwrap();
    t.set(&[2, 2], Scalar::Bool(true)).unwrap();
    let mut s = Store::new();
    s.insert(t);
    let eq = |l, r| StopCond::TensorEqual {
        left: "P".into(),
        left_offset: l,
        right: "P".into(),
        right_offset: r,
    };
    assert!(eval_stop(&eq(1, 0), &s, 0).unwrap());
    assert!(!eval_stop(&eq(1, 0), &s, 1).unwrap());
    let nnz = StopCond::OccupancyZero {
        tensor: "P".into(),
        offset: 1,
    };
    assert!(eval_stop(&nnz, &s, 2).unwrap());
    assert!(!eval_stop(&nnz, &s, 0).unwrap());
}
