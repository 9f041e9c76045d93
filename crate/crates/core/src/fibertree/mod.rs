//! Sparse tensors stored as trees of coordinate-sorted fibers.
//!
//! Every tensor carries its own empty value. A point whose value equals the
//! empty value is never stored, and fibers left without children are pruned,
//! so the stored leaves are exactly the non-empty points.

mod scalar;
mod text;

use alloc::collections::btree_map::{self, BTreeMap};
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub use scalar::{DType, ExtInt, Scalar, ScalarError};
pub use text::{parse_dump, write_dump, DumpError};

pub type Coord = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Bounded(u64),
    /// The generative rank; only allowed as the first rank.
    Unbounded,
}

impl Shape {
    pub fn contains(self, c: Coord) -> bool {
        match self {
            Shape::Bounded(n) => c < n,
            Shape::Unbounded => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankDecl {
    pub name: String,
    pub shape: Shape,
}

impl RankDecl {
    pub fn new(name: impl Into<String>, shape: Shape) -> Self {
        RankDecl {
            name: name.into(),
            shape,
        }
    }

    pub fn bounded(name: impl Into<String>, n: u64) -> Self {
        Self::new(name, Shape::Bounded(n))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorDecl {
    pub name: String,
    pub ranks: Vec<RankDecl>,
    pub dtype: DType,
    pub empty: Scalar,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("tensor {tensor}: duplicate rank name {rank}")]
    DuplicateRank { tensor: String, rank: String },
    #[error("tensor {tensor}: empty value {empty} is not of type {dtype}")]
    EmptyDtype {
        tensor: String,
        empty: Scalar,
        dtype: DType,
    },
    #[error("tensor {0}: only the first rank may be unbounded")]
    MisplacedUnbounded(String),
    #[error("tensor {0}: rank shape must be positive")]
    ZeroShape(String),
    #[error("tensor {tensor}: expected {expected} coordinates, got {got}")]
    Arity {
        tensor: String,
        expected: usize,
        got: usize,
    },
    #[error("tensor {tensor}: coordinate {coord} out of bounds for rank {rank}")]
    OutOfBounds {
        tensor: String,
        rank: usize,
        coord: Coord,
    },
    #[error("tensor {tensor}: value {value} is not of type {dtype}")]
    Dtype {
        tensor: String,
        value: Scalar,
        dtype: DType,
    },
    #[error("not a permutation of {0} ranks")]
    NotPermutation(usize),
}

impl TensorDecl {
    pub fn new(
        name: impl Into<String>,
        ranks: Vec<RankDecl>,
        dtype: DType,
        empty: Scalar,
    ) -> Result<Self, TensorError> {
        let decl = TensorDecl {
            name: name.into(),
            ranks,
            dtype,
            empty,
        };
        decl.check()?;
        Ok(decl)
    }

    pub fn check(&self) -> Result<(), TensorError> {
        for (i, r) in self.ranks.iter().enumerate() {
            if self.ranks[..i].iter().any(|o| o.name == r.name) {
                return Err(TensorError::DuplicateRank {
                    tensor: self.name.clone(),
                    rank: r.name.clone(),
                });
            }
            match r.shape {
                Shape::Unbounded if i > 0 => {
                    return Err(TensorError::MisplacedUnbounded(self.name.clone()))
                }
                Shape::Bounded(0) => return Err(TensorError::ZeroShape(self.name.clone())),
                _ => {}
            }
        }
        if self.empty.dtype() != self.dtype {
            return Err(TensorError::EmptyDtype {
                tensor: self.name.clone(),
                empty: self.empty,
                dtype: self.dtype,
            });
        }
        Ok(())
    }

    pub fn rank_count(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_generational(&self) -> bool {
        matches!(self.ranks.first(), Some(r) if r.shape == Shape::Unbounded)
    }

    /// The declaration of one generation: the same tensor minus its first rank.
    pub fn slice_decl(&self) -> TensorDecl {
        TensorDecl {
            name: self.name.clone(),
            ranks: self.ranks[1..].to_vec(),
            dtype: self.dtype,
            empty: self.empty,
        }
    }

    pub fn in_shape(&self, p: &[Coord]) -> bool {
        p.len() == self.ranks.len() && p.iter().zip(&self.ranks).all(|(c, r)| r.shape.contains(*c))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Leaf(Scalar),
    Fiber(Fiber),
}

/// Coordinate-sorted children of one tree node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Fiber {
    entries: BTreeMap<Coord, Payload>,
}

impl Fiber {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, c: Coord) -> Option<&Payload> {
        self.entries.get(&c)
    }

    pub fn iter(&self) -> btree_map::Iter<'_, Coord, Payload> {
        self.entries.iter()
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        self.entries.keys().copied()
    }

    fn leaf_count(&self) -> usize {
        self.entries
            .values()
            .map(|p| match p {
                Payload::Leaf(_) => 1,
                Payload::Fiber(f) => f.leaf_count(),
            })
            .sum()
    }

    fn lookup(&self, p: &[Coord]) -> Option<&Payload> {
        let (first, rest) = p.split_first()?;
        let child = self.entries.get(first)?;
        if rest.is_empty() {
            return Some(child);
        }
        match child {
            Payload::Fiber(f) => f.lookup(rest),
            Payload::Leaf(_) => None,
        }
    }

    /// Returns the change in leaf count.
    fn store(&mut self, p: &[Coord], v: Option<Scalar>) -> isize {
        let (first, rest) = p.split_first().expect("non-empty point");
        if rest.is_empty() {
            return match v {
                Some(v) => match self.entries.insert(*first, Payload::Leaf(v)) {
                    Some(_) => 0,
                    None => 1,
                },
                None => match self.entries.remove(first) {
                    Some(_) => -1,
                    None => 0,
                },
            };
        }
        match self.entries.get_mut(first) {
            Some(Payload::Fiber(child)) => {
                let d = child.store(rest, v);
                if child.is_empty() {
                    self.entries.remove(first);
                }
                d
            }
            Some(Payload::Leaf(_)) => unreachable!("leaf above full depth"),
            None => {
                if v.is_none() {
                    return 0;
                }
                let mut child = Fiber::default();
                let d = child.store(rest, v);
                self.entries.insert(*first, Payload::Fiber(child));
                d
            }
        }
    }
}

/// An item of [`Tensor::fiber_at`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FiberItem<'a> {
    Value(Scalar),
    Fiber(&'a Fiber),
}

#[derive(Clone, Debug)]
pub struct Tensor {
    decl: TensorDecl,
    root: Fiber,
    scalar: Option<Scalar>,
    nnz: usize,
}

impl Tensor {
    /// An all-empty tensor. The declaration is assumed valid (see [`TensorDecl::new`]).
    pub fn new(decl: TensorDecl) -> Self {
        Tensor {
            decl,
            root: Fiber::default(),
            scalar: None,
            nnz: 0,
        }
    }

    pub fn from_entries<I>(decl: TensorDecl, entries: I) -> Result<Self, TensorError>
    where
        I: IntoIterator<Item = (Vec<Coord>, Scalar)>,
    {
        let mut t = Tensor::new(decl);
        for (p, v) in entries {
            t.set(&p, v)?;
        }
        Ok(t)
    }

    pub fn decl(&self) -> &TensorDecl {
        &self.decl
    }

    pub fn name(&self) -> &str {
        &self.decl.name
    }

    pub fn rank_count(&self) -> usize {
        self.decl.ranks.len()
    }

    pub fn dtype(&self) -> DType {
        self.decl.dtype
    }

    pub fn empty(&self) -> Scalar {
        self.decl.empty
    }

    pub fn root(&self) -> &Fiber {
        &self.root
    }

    fn check_arity(&self, got: usize) -> Result<(), TensorError> {
        if got != self.rank_count() {
            return Err(TensorError::Arity {
                tensor: self.decl.name.clone(),
                expected: self.rank_count(),
                got,
            });
        }
        Ok(())
    }

    /// The stored value at `p`, or `None` when absent, out of bounds, or of the wrong arity.
    pub fn stored(&self, p: &[Coord]) -> Option<Scalar> {
        if p.is_empty() {
            return if self.rank_count() == 0 { self.scalar } else { None };
        }
        if p.len() != self.rank_count() {
            return None;
        }
        match self.root.lookup(p) {
            Some(Payload::Leaf(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn get(&self, p: &[Coord]) -> Result<Scalar, TensorError> {
        self.check_arity(p.len())?;
        Ok(self.stored(p).unwrap_or(self.decl.empty))
    }

    pub fn exists(&self, p: &[Coord]) -> Result<bool, TensorError> {
        self.check_arity(p.len())?;
        Ok(self.stored(p).is_some())
    }

    pub fn set(&mut self, p: &[Coord], v: Scalar) -> Result<(), TensorError> {
        self.check_arity(p.len())?;
        if v.dtype() != self.decl.dtype {
            return Err(TensorError::Dtype {
                tensor: self.decl.name.clone(),
                value: v,
                dtype: self.decl.dtype,
            });
        }
        for (i, (c, r)) in p.iter().zip(&self.decl.ranks).enumerate() {
            if !r.shape.contains(*c) {
                return Err(TensorError::OutOfBounds {
                    tensor: self.decl.name.clone(),
                    rank: i,
                    coord: *c,
                });
            }
        }
        let v = (v != self.decl.empty).then_some(v);
        if p.is_empty() {
            self.nnz = v.is_some() as usize;
            self.scalar = v;
            return Ok(());
        }
        let d = self.root.store(p, v);
        self.nnz = (self.nnz as isize + d) as usize;
        Ok(())
    }

    pub fn occupancy(&self) -> usize {
        self.nnz
    }

    /// Non-empty children of the fiber at `prefix`, in ascending coordinate order.
    pub fn fiber_at(&self, prefix: &[Coord]) -> Result<Vec<(Coord, FiberItem<'_>)>, TensorError> {
        if prefix.len() >= self.rank_count() {
            return Err(TensorError::Arity {
                tensor: self.decl.name.clone(),
                expected: self.rank_count().saturating_sub(1),
                got: prefix.len(),
            });
        }
        let fiber = match self.fiber_ref(prefix) {
            Some(f) => f,
            None => return Ok(Vec::new()),
        };
        Ok(fiber
            .iter()
            .map(|(c, p)| {
                let item = match p {
                    Payload::Leaf(v) => FiberItem::Value(*v),
                    Payload::Fiber(f) => FiberItem::Fiber(f),
                };
                (*c, item)
            })
            .collect())
    }

    /// The fiber reached by following `prefix`, if any.
    pub fn fiber_ref(&self, prefix: &[Coord]) -> Option<&Fiber> {
        if prefix.is_empty() {
            return Some(&self.root);
        }
        match self.root.lookup(prefix)? {
            Payload::Fiber(f) => Some(f),
            Payload::Leaf(_) => None,
        }
    }

    pub fn swizzle(&self, order: &[usize]) -> Result<Tensor, TensorError> {
        let n = self.rank_count();
        let mut seen = alloc::vec![false; n];
        if order.len() != n {
            return Err(TensorError::NotPermutation(n));
        }
        for &o in order {
            if o >= n || seen[o] {
                return Err(TensorError::NotPermutation(n));
            }
            seen[o] = true;
        }
        let mut decl = self.decl.clone();
        decl.ranks = order.iter().map(|&o| self.decl.ranks[o].clone()).collect();
        let mut out = Tensor::new(decl);
        let mut q = alloc::vec![0; n];
        for (p, v) in self.iter() {
            for (j, &o) in order.iter().enumerate() {
                q[j] = p[o];
            }
            out.set_unchecked(&q, v);
        }
        Ok(out)
    }

    /// Compares stored content only; shapes and empty values may differ.
    pub fn equals(&self, other: &Tensor) -> Result<bool, TensorError> {
        if self.rank_count() != other.rank_count() {
            return Err(TensorError::Arity {
                tensor: other.decl.name.clone(),
                expected: self.rank_count(),
                got: other.rank_count(),
            });
        }
        Ok(self.nnz == other.nnz && self.root == other.root && self.scalar == other.scalar)
    }

    pub fn iter(&self) -> Iter<'_> {
        Iter {
            stack: alloc::vec![self.root.iter()],
            prefix: Vec::new(),
            scalar: if self.rank_count() == 0 { self.scalar } else { None },
        }
    }

    /// One generation of a generational tensor, as a tensor without the first rank.
    pub fn slice(&self, g: Coord) -> Tensor {
        let mut out = Tensor::new(self.decl.slice_decl());
        match self.root.get(g) {
            Some(Payload::Fiber(f)) => {
                out.nnz = f.leaf_count();
                out.root = f.clone();
            }
            Some(Payload::Leaf(v)) => {
                out.nnz = 1;
                out.scalar = Some(*v);
            }
            None => {}
        }
        out
    }

    /// Replaces generation `g` with the content of `slice`.
    pub fn set_slice(&mut self, g: Coord, slice: Tensor) {
        self.remove_slice(g);
        if slice.nnz == 0 {
            return;
        }
        let payload = if self.rank_count() == 1 {
            Payload::Leaf(slice.scalar.expect("rank-0 slice with occupancy"))
        } else {
            Payload::Fiber(slice.root)
        };
        self.nnz += slice.nnz;
        self.root.entries.insert(g, payload);
    }

    pub fn remove_slice(&mut self, g: Coord) {
        if let Some(old) = self.root.entries.remove(&g) {
            self.nnz -= match old {
                Payload::Leaf(_) => 1,
                Payload::Fiber(f) => f.leaf_count(),
            };
        }
    }

    /// Generations currently stored, ascending.
    pub fn generations(&self) -> impl Iterator<Item = Coord> + '_ {
        self.root.coords()
    }

    /// Stores without bounds or dtype checks. Callers guarantee both.
    pub(crate) fn set_unchecked(&mut self, p: &[Coord], v: Scalar) {
        let v = (v != self.decl.empty).then_some(v);
        if p.is_empty() {
            self.nnz = v.is_some() as usize;
            self.scalar = v;
            return;
        }
        let d = self.root.store(p, v);
        self.nnz = (self.nnz as isize + d) as usize;
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.decl == other.decl && self.equals(other).unwrap_or(false)
    }
}

/// Lexicographic iterator over the non-empty points of a tensor.
pub struct Iter<'a> {
    stack: Vec<btree_map::Iter<'a, Coord, Payload>>,
    prefix: Vec<Coord>,
    scalar: Option<Scalar>,
}

impl Iterator for Iter<'_> {
    type Item = (Vec<Coord>, Scalar);

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(v) = self.scalar.take() {
            return Some((Vec::new(), v));
        }
        loop {
            let top = self.stack.last_mut()?;
            match top.next() {
                None => {
                    self.stack.pop();
                    self.prefix.pop();
                }
                Some((c, Payload::Leaf(v))) => {
                    let mut p = self.prefix.clone();
                    p.push(*c);
                    return Some((p, *v));
                }
                Some((c, Payload::Fiber(f))) => {
                    self.prefix.push(*c);
                    self.stack.push(f.iter());
                }
            }
        }
    }
}
