//! Extended Einsums over sparse fibertree tensors.
//!
//! The crate is `no_std` (it needs `alloc`). File formats and the command-line
//! driver live in the `edge` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod fibertree;
pub mod ast;
pub mod operators;
pub mod parser;
pub mod engine;
pub mod oracle;
pub mod stdlib;
pub mod gen;
