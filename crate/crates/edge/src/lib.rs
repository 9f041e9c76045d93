//! File formats and the command-line driver.

pub mod cli;
pub mod io;
