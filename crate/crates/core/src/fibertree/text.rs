//! Line-oriented text dump of tensors.
//!
//! ```text
//! # F ranks=2 shape=*,3 dtype=int empty=inf
//! F 0 0 0
//! F 1 2 1
//! ```
//! The generative rank's shape is written `*`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write};

use thiserror::Error;

use super::{DType, RankDecl, Scalar, Shape, Tensor, TensorDecl};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DumpError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

pub fn write_dump<W: Write>(t: &Tensor, out: &mut W) -> fmt::Result {
    let d = t.decl();
    write!(out, "# {} ranks={} shape=", d.name, d.ranks.len())?;
    for (i, r) in d.ranks.iter().enumerate() {
        if i > 0 {
            out.write_char(',')?;
        }
        match r.shape {
            Shape::Bounded(n) => write!(out, "{n}")?,
            Shape::Unbounded => out.write_char('*')?,
        }
    }
    writeln!(out, " dtype={} empty={}", d.dtype, d.empty)?;
    for (p, v) in t.iter() {
        out.write_str(&d.name)?;
        for c in p {
            write!(out, " {c}")?;
        }
        writeln!(out, " {v}")?;
    }
    Ok(())
}

/// Parses a sequence of dumps. Rank names are not part of the format and come back as `R0`, `R1`, ...
pub fn parse_dump(text: &str) -> Result<Vec<Tensor>, DumpError> {
    let mut out: Vec<Tensor> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: &str| DumpError::Syntax {
            line,
            msg: msg.to_string(),
        };
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(rest) = raw.strip_prefix("# ") {
            out.push(Tensor::new(parse_header(rest).ok_or_else(|| err("bad header"))?));
            continue;
        }
        let t = out.last_mut().ok_or_else(|| err("entry before header"))?;
        let mut fields = raw.split(' ');
        if fields.next() != Some(t.name()) {
            return Err(err("entry name does not match header"));
        }
        let fields: Vec<&str> = fields.collect();
        if fields.len() != t.rank_count() + 1 {
            return Err(err("wrong number of fields"));
        }
        let (coords, value) = fields.split_at(t.rank_count());
        let p: Vec<u64> = coords
            .iter()
            .map(|c| c.parse::<u64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err("bad coordinate"))?;
        let v = Scalar::parse_as(value[0], t.dtype()).ok_or_else(|| err("bad value"))?;
        t.set(&p, v).map_err(|e| err(&e.to_string()))?;
    }
    Ok(out)
}

fn parse_header(rest: &str) -> Option<TensorDecl> {
    let mut it = rest.split(' ');
    let name = it.next()?;
    let ranks: usize = it.next()?.strip_prefix("ranks=")?.parse().ok()?;
    let shape = it.next()?.strip_prefix("shape=")?;
    let dtype = DType::from_name(it.next()?.strip_prefix("dtype=")?)?;
    let empty = Scalar::parse_as(it.next()?.strip_prefix("empty=")?, dtype)?;
    if it.next().is_some() {
        return None;
    }
    let shapes: Vec<&str> = if shape.is_empty() {
        Vec::new()
    } else {
        shape.split(',').collect()
    };
    if shapes.len() != ranks {
        return None;
    }
    let mut decls = Vec::new();
    for (i, s) in shapes.iter().enumerate() {
        let shape = if *s == "*" {
            Shape::Unbounded
        } else {
            Shape::Bounded(s.parse().ok()?)
        };
        decls.push(RankDecl::new(alloc::format!("R{i}"), shape));
    }
    TensorDecl::new(name, decls, dtype, empty).ok()
}
