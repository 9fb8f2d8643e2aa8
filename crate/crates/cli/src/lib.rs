//! File formats and the synthetic-stream experiment harness backing the
//! `demokit` binary.

pub mod harness;
pub mod io;
