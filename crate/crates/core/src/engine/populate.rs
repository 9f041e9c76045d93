//! Populate: a sequential fold that rewrites output fibers point by point.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::EngineError;
use crate::fibertree::{Coord, Scalar, Tensor, TensorDecl};
use crate::operators::{CoordCall, CoordOp, UnaryOp};

/// Fiber state after one processed point.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulateStep {
    pub point: Vec<Coord>,
    /// Entries of the fiber the point belongs to, keyed by the mutable coordinates.
    pub fiber: Vec<(Vec<Coord>, Scalar)>,
}

/// Folds `stream` (output points with their right-hand-side values, in
/// canonical order) into a fresh tensor. `mutable[k]` marks the populated ranks.
pub fn eval_populate(
    decl: &TensorDecl,
    mutable: &[bool],
    compute: &UnaryOp,
    coord: &CoordOp,
    count: Option<u64>,
    stream: &[(Vec<Coord>, Scalar)],
) -> Result<(Tensor, Vec<PopulateStep>), EngineError> {
    let op_err = |source| EngineError::Op {
        stmt: String::from("populate"),
        source,
    };
    let split = |p: &[Coord]| -> (Vec<Coord>, Vec<Coord>) {
        let mut fixed = Vec::new();
        let mut moving = Vec::new();
        for (c, &m) in p.iter().zip(mutable) {
            if m {
                moving.push(*c);
            } else {
                fixed.push(*c);
            }
        }
        (fixed, moving)
    };

    let mut fibers: BTreeMap<Vec<Coord>, BTreeMap<Vec<Coord>, Scalar>> = BTreeMap::new();
    let mut trace = Vec::with_capacity(stream.len());
    for (point, v) in stream {
        let (fixed, moving) = split(point);
        let fiber = fibers.entry(fixed).or_default();
        let snapshot: Vec<(Vec<Coord>, Scalar)> =
            fiber.iter().map(|(c, v)| (c.clone(), *v)).collect();
        let call = CoordCall {
            point,
            count,
            rhs_coord: &moving,
            rhs_value: *v,
            fiber: &snapshot,
        };
        let survivors = coord.apply(&call).map_err(op_err)?;
        let mut next = BTreeMap::new();
        for s in survivors {
            let val = if s == moving {
                compute.apply(*v).map_err(op_err)?
            } else {
                match fiber.get(&s) {
                    Some(old) => *old,
                    None => {
                        return Err(EngineError::PopulateSubset {
                            op: coord.name().into(),
                            coord: s,
                        })
                    }
                }
            };
            if val != decl.empty {
                next.insert(s, val);
            }
        }
        *fiber = next;
        trace.push(PopulateStep {
            point: point.clone(),
            fiber: fiber.iter().map(|(c, v)| (c.clone(), *v)).collect(),
        });
    }

    let mut out = Tensor::new(decl.clone());
    for (fixed, fiber) in fibers {
        for (moving, v) in fiber {
            let (mut f, mut m) = (fixed.iter(), moving.iter());
            let p: Vec<Coord> = mutable
                .iter()
                .map(|&is_m| *if is_m { m.next() } else { f.next() }.expect("coordinate arity"))
                .collect();
            out.set(&p, v)?;
        }
    }
    Ok((out, trace))
}
