//! MatrixMarket graphs, source lists, and tensor dumps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use edge_core::fibertree::{
    parse_dump, write_dump, DType, DumpError, RankDecl, Scalar, Tensor, TensorDecl, TensorError,
};
use edge_core::oracle::Graph;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write output: {0}")]
    Write(std::io::Error),
    #[error("malformed MatrixMarket header: {0}")]
    Header(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: entry ({row}, {col}) is outside the declared {rows}x{cols} matrix")]
    OutOfBounds {
        line: usize,
        row: u64,
        col: u64,
        rows: u64,
        cols: u64,
    },
    #[error("cannot store {field} values in `{tensor}`, which is {dtype}")]
    DtypeMismatch {
        field: &'static str,
        tensor: String,
        dtype: DType,
    },
    #[error("`{tensor}` has {ranks} ranks; a {rows}x{cols} matrix fits 2 ranks, or 1 if it has one column")]
    RankMismatch {
        tensor: String,
        ranks: usize,
        rows: u64,
        cols: u64,
    },
    #[error("source list: {0}")]
    IdList(String),
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Pattern,
    Integer,
    Real,
}

impl Field {
    fn name(self) -> &'static str {
        match self {
            Field::Pattern => "pattern",
            Field::Integer => "integer",
            Field::Real => "real",
        }
    }
}

/// A coordinate-format MatrixMarket matrix with 0-based indices.
/// Duplicate entries are summed and symmetric storage is expanded.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixMarket {
    pub rows: u64,
    pub cols: u64,
    pub field: Field,
    pub entries: BTreeMap<(u64, u64), Scalar>,
}

impl MatrixMarket {
    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::parse(&read(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (_, header) = lines
            .next()
            .ok_or_else(|| IoError::Header("file is empty".into()))?;
        let words: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
        if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
            return Err(IoError::Header(format!("`{header}`")));
        }
        if words[2] != "coordinate" {
            return Err(IoError::Header(format!("only coordinate format is supported, not `{}`", words[2])));
        }
        let field = match words[3].as_str() {
            "pattern" => Field::Pattern,
            "integer" => Field::Integer,
            "real" => Field::Real,
            other => return Err(IoError::Header(format!("unsupported field `{other}`"))),
        };
        let symmetric = match words[4].as_str() {
            "general" => false,
            "symmetric" => true,
            other => return Err(IoError::Header(format!("unsupported symmetry `{other}`"))),
        };
        let mut body = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
        let (size_line, size) = body
            .next()
            .ok_or_else(|| IoError::Header("missing size line".into()))?;
        let dims = parse_fields::<u64>(size_line, size, 3)?;
        let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);

        let mut m = MatrixMarket {
            rows,
            cols,
            field,
            entries: BTreeMap::new(),
        };
        let mut seen = 0u64;
        for (line, l) in body {
            seen += 1;
            if seen > nnz {
                return Err(IoError::Parse {
                    line,
                    msg: format!("more entries than the {nnz} declared"),
                });
            }
            let toks: Vec<&str> = l.split_whitespace().collect();
            let want = if field == Field::Pattern { 2 } else { 3 };
            if toks.len() != want {
                return Err(IoError::Parse {
                    line,
                    msg: format!("expected {want} fields, found {}", toks.len()),
                });
            }
            let idx = parse_fields::<u64>(line, &toks[..2].join(" "), 2)?;
            let (r, c) = (idx[0], idx[1]);
            if r == 0 || c == 0 || r > rows || c > cols {
                return Err(IoError::OutOfBounds {
                    line,
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
            let v = match field {
                Field::Pattern => Scalar::int(1),
                Field::Integer => Scalar::int(parse_fields::<i64>(line, toks[2], 1)?[0]),
                Field::Real => Scalar::Real(parse_fields::<f64>(line, toks[2], 1)?[0]),
            };
            m.add(r - 1, c - 1, v, line)?;
            if symmetric && r != c {
                m.add(c - 1, r - 1, v, line)?;
            }
        }
        if seen < nnz {
            return Err(IoError::Parse {
                line: text.lines().count(),
                msg: format!("{seen} entries, but the size line declares {nnz}"),
            });
        }
        Ok(m)
    }

    fn add(&mut self, r: u64, c: u64, v: Scalar, line: usize) -> Result<(), IoError> {
        let slot = self.entries.entry((r, c));
        match slot {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(v);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let sum = e.get().add(&v).map_err(|err| IoError::Parse {
                    line,
                    msg: err.to_string(),
                })?;
                e.insert(sum);
            }
        }
        Ok(())
    }

    /// Adds each missing reverse edge. Where both directions are present
    /// with different weights, both take the smaller one.
    pub fn symmetrize(&mut self) {
        let n = self.vertices();
        self.rows = n;
        self.cols = n;
        let snapshot: Vec<((u64, u64), Scalar)> =
            self.entries.iter().map(|(k, v)| (*k, *v)).collect();
        for ((r, c), v) in snapshot {
            let w = match self.entries.get(&(c, r)) {
                Some(back) => match v.try_cmp(back) {
                    Ok(std::cmp::Ordering::Less) => v,
                    _ => *back,
                },
                None => v,
            };
            self.entries.insert((r, c), w);
            self.entries.insert((c, r), w);
        }
    }

    /// The larger dimension; a graph's vertex count.
    pub fn vertices(&self) -> u64 {
        self.rows.max(self.cols)
    }

    pub fn to_graph(&self) -> Graph {
        let mut g = Graph::new(self.vertices());
        for (&(s, d), &w) in &self.entries {
            g.add_edge(s, d, w);
        }
        g
    }

    /// Fills a tensor shaped by `decl`. Two-rank declarations take the
    /// matrix as is; one-rank declarations take a single-column matrix.
    pub fn to_tensor(&self, decl: &TensorDecl) -> Result<Tensor, IoError> {
        let vector = match decl.rank_count() {
            2 => false,
            1 if self.cols == 1 => true,
            ranks => {
                return Err(IoError::RankMismatch {
                    tensor: decl.name.clone(),
                    ranks,
                    rows: self.rows,
                    cols: self.cols,
                })
            }
        };
        let mut t = Tensor::new(decl.clone());
        for (&(r, c), &v) in &self.entries {
            let v = match (decl.dtype, self.field) {
                (DType::Bool, _) => Scalar::Bool(v.truthy()),
                (DType::Int, Field::Real) => {
                    return Err(IoError::DtypeMismatch {
                        field: self.field.name(),
                        tensor: decl.name.clone(),
                        dtype: decl.dtype,
                    })
                }
                (DType::Int, _) => v,
                (DType::Float, _) => v.cast(DType::Float, &Scalar::int(0)).map_err(|_| {
                    IoError::DtypeMismatch {
                        field: self.field.name(),
                        tensor: decl.name.clone(),
                        dtype: decl.dtype,
                    }
                })?,
            };
            if vector {
                t.set(&[r], v)?;
            } else {
                t.set(&[r, c], v)?;
            }
        }
        Ok(t)
    }
}

fn parse_fields<T: std::str::FromStr>(line: usize, text: &str, n: usize) -> Result<Vec<T>, IoError> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != n {
        return Err(IoError::Parse {
            line,
            msg: format!("expected {n} fields, found {}", toks.len()),
        });
    }
    toks.iter()
        .map(|t| {
            t.parse().map_err(|_| IoError::Parse {
                line,
                msg: format!("cannot parse `{t}`"),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadOptions {
    pub symmetrize: bool,
    pub dtype: DType,
    pub empty: Scalar,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            symmetrize: false,
            dtype: DType::Int,
            empty: Scalar::int(0),
        }
    }
}

/// Loads a graph file as `G[S, D]` and returns it with its vertex count.
pub fn load_matrix_market(path: &Path, opts: &LoadOptions) -> Result<(Tensor, u64), IoError> {
    let mut m = MatrixMarket::read(path)?;
    if opts.symmetrize {
        m.symmetrize();
    }
    let n = m.vertices();
    let decl = TensorDecl::new(
        "G",
        vec![RankDecl::bounded("S", n), RankDecl::bounded("D", n)],
        opts.dtype,
        opts.empty,
    )?;
    Ok((m.to_tensor(&decl)?, n))
}

/// A parsed source list and the values that were dropped as repeats.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdList {
    pub ids: Vec<u64>,
    pub repeated: Vec<u64>,
}

/// Comma- or whitespace-separated vertex ids, first occurrence kept.
pub fn parse_id_list(text: &str) -> Result<IdList, IoError> {
    let mut ids = Vec::new();
    let mut repeated = Vec::new();
    for tok in text.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        let v: u64 = tok.parse().map_err(|_| {
            if tok.starts_with('-') && tok[1..].parse::<u64>().is_ok() {
                IoError::IdList(format!("`{tok}` is negative"))
            } else {
                IoError::IdList(format!("`{tok}` is not a vertex id"))
            }
        })?;
        if ids.contains(&v) {
            repeated.push(v);
        } else {
            ids.push(v);
        }
    }
    if ids.is_empty() {
        return Err(IoError::IdList("no vertices given".into()));
    }
    Ok(IdList { ids, repeated })
}

/// Reads the list from `arg` if it names a file, otherwise parses `arg` itself.
pub fn load_id_list(arg: &str) -> Result<IdList, IoError> {
    let path = Path::new(arg);
    if path.is_file() {
        parse_id_list(&read(path)?)
    } else {
        parse_id_list(arg)
    }
}

pub fn dump_tensor<W: std::io::Write>(t: &Tensor, sink: &mut W) -> Result<(), IoError> {
    let mut text = String::new();
    write_dump(t, &mut text).expect("writing to a String cannot fail");
    sink.write_all(text.as_bytes()).map_err(IoError::Write)
}

/// Reads every tensor in a dump file.
pub fn load_dump(path: &Path) -> Result<Vec<Tensor>, IoError> {
    Ok(parse_dump(&read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use edge_core::fibertree::ExtInt;

    fn mm(body: &str) -> Result<MatrixMarket, IoError> {
        MatrixMarket::parse(body)
    }

    fn graph(n: u64) -> TensorDecl {
        TensorDecl::new(
            "G",
            vec![RankDecl::bounded("S", n), RankDecl::bounded("D", n)],
            DType::Int,
            Scalar::int(0),
        )
        .unwrap()
    }

    #[test]
    fn pattern_indices_shift_to_zero() {
        let m = mm("%%MatrixMarket matrix coordinate pattern general\n3 3 2\n1 2\n2 3\n").unwrap();
        let t = m.to_tensor(&graph(3)).unwrap();
        let got: Vec<_> = t.iter().collect();
        assert_eq!(got, vec![(vec![0, 1], Scalar::int(1)), (vec![1, 2], Scalar::int(1))]);
    }

    #[test]
    fn symmetric_storage_expands() {
        let m = mm("%%MatrixMarket matrix coordinate integer symmetric\n% comment\n3 3 2\n2 1 4\n3 3 7\n")
            .unwrap();
        assert_eq!(m.entries.get(&(1, 0)), Some(&Scalar::int(4)));
        assert_eq!(m.entries.get(&(0, 1)), Some(&Scalar::int(4)));
        assert_eq!(m.entries.get(&(2, 2)), Some(&Scalar::int(7)));
        assert_eq!(m.entries.len(), 3);
    }

    #[test]
    fn duplicates_are_summed() {
        let m = mm("%%MatrixMarket matrix coordinate integer general\n2 2 3\n1 2 3\n1 2 4\n2 1 1\n").unwrap();
        assert_eq!(m.entries.get(&(0, 1)), Some(&Scalar::int(7)));
    }

    #[test]
    fn real_into_int_is_rejected() {
        let m = mm("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 2 2.5\n").unwrap();
        assert!(matches!(m.to_tensor(&graph(2)), Err(IoError::DtypeMismatch { .. })));
        let mut float = graph(2);
        float.dtype = DType::Float;
        float.empty = Scalar::Real(0.0);
        let t = m.to_tensor(&float).unwrap();
        assert_eq!(t.get(&[0, 1]).unwrap(), Scalar::Real(2.5));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = mm("%%MatrixMarket matrix coordinate integer general\n2 2 2\n1 2 3\n1 x 4\n").unwrap_err();
        assert_eq!(e.to_string(), "line 4: cannot parse `x`");
        let e = mm("%%MatrixMarket matrix coordinate integer general\n2 2 1\n3 1 1\n").unwrap_err();
        assert!(matches!(e, IoError::OutOfBounds { line: 3, row: 3, .. }), "{e}");
        assert!(matches!(mm("%%MatrixMarket matrix array real general\n"), Err(IoError::Header(_))));
        assert!(matches!(mm("hello\n"), Err(IoError::Header(_))));
        assert!(matches!(
            mm("%%MatrixMarket matrix coordinate pattern general\n2 2 2\n1 1\n"),
            Err(IoError::Parse { .. })
        ));
    }

    #[test]
    fn column_vectors_fill_one_rank() {
        let m = mm("%%MatrixMarket matrix coordinate integer general\n4 1 2\n1 1 5\n4 1 6\n").unwrap();
        let decl = TensorDecl::new("x", vec![RankDecl::bounded("N", 4)], DType::Int, Scalar::int(0)).unwrap();
        let t = m.to_tensor(&decl).unwrap();
        assert_eq!(t.get(&[3]).unwrap(), Scalar::int(6));
        assert!(m.to_tensor(&graph(4)).is_ok());
    }

    #[test]
    fn symmetrize_keeps_smaller_weight() {
        let mut m = mm("%%MatrixMarket matrix coordinate integer general\n3 2 2\n1 2 5\n2 1 3\n").unwrap();
        m.symmetrize();
        assert_eq!((m.rows, m.cols), (3, 3));
        assert_eq!(m.entries.get(&(0, 1)), Some(&Scalar::int(3)));
        assert_eq!(m.entries.get(&(1, 0)), Some(&Scalar::int(3)));
    }

    #[test]
    fn id_lists() {
        assert_eq!(parse_id_list("0,4,7").unwrap().ids, vec![0, 4, 7]);
        assert_eq!(parse_id_list("7 0\n4").unwrap().ids, vec![7, 0, 4]);
        let l = parse_id_list("3 3").unwrap();
        assert_eq!((l.ids, l.repeated), (vec![3], vec![3]));
        assert!(matches!(parse_id_list(""), Err(IoError::IdList(_))));
        assert_eq!(parse_id_list("-1").unwrap_err().to_string(), "source list: `-1` is negative");
        assert!(parse_id_list("1.5").is_err());
    }

    #[test]
    fn empty_dump_is_header_only() {
        let mut out = Vec::new();
        dump_tensor(&Tensor::new(graph(2)), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "# G ranks=2 shape=2,2 dtype=int empty=0\n");
    }

    #[test]
    fn infinity_dumps_as_inf() {
        let decl = TensorDecl::new("D", vec![RankDecl::bounded("S", 2)], DType::Int, Scalar::int(0)).unwrap();
        let mut t = Tensor::new(decl);
        t.set(&[1], Scalar::Int(ExtInt::PosInf)).unwrap();
        let mut out = Vec::new();
        dump_tensor(&t, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().ends_with("D 1 inf\n"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_mtx() -> impl Strategy<Value = String> {
            (1u64..8, prop::collection::vec((0u64..8, 0u64..8, 1i64..20), 0..30), any::<bool>())
                .prop_map(|(n, es, sym)| {
                    let es: Vec<_> = es.into_iter().map(|(a, b, w)| (a % n, b % n, w)).collect();
                    let kind = if sym { "symmetric" } else { "general" };
                    let mut s = format!("%%MatrixMarket matrix coordinate integer {kind}\n{n} {n} {}\n", es.len());
                    for (a, b, w) in es {
                        s.push_str(&format!("{} {} {w}\n", a + 1, b + 1));
                    }
                    s
                })
        }

        proptest! {
            #[test]
            fn symmetrized_equals_transpose(text in arb_mtx()) {
                let mut m = MatrixMarket::parse(&text).unwrap();
                m.symmetrize();
                let t = m.to_tensor(&graph(m.vertices())).unwrap();
                let swapped = t.swizzle(&[1, 0]).unwrap();
                prop_assert!(t.equals(&swapped).unwrap());
            }

            #[test]
            fn dump_round_trips(text in arb_mtx()) {
                let m = MatrixMarket::parse(&text).unwrap();
                let t = m.to_tensor(&graph(m.vertices())).unwrap();
                let mut out = Vec::new();
                dump_tensor(&t, &mut out).unwrap();
                let back = parse_dump(&String::from_utf8(out.clone()).unwrap()).unwrap();
                prop_assert_eq!(back.len(), 1);
                prop_assert!(back[0].equals(&t).unwrap());
                // Distinct content gives distinct dumps.
                let mut other = t.clone();
                let bumped = t.get(&[0, 0]).unwrap().add(&Scalar::int(1)).unwrap();
                other.set(&[0, 0], bumped).unwrap();
                let mut out2 = Vec::new();
                dump_tensor(&other, &mut out2).unwrap();
                prop_assert_ne!(out, out2);
            }
        }
    }
}
