//! Command implementations behind the `vlrr` binary: dataset preparation,
//! plan-driven training, checkpoint evaluation, coupling search. The
//! binary is a thin argument parser over these; integration tests call
//! them directly to inspect returned reports as well as written files.

pub mod eval;
pub mod plan;
pub mod prepare;
pub mod run;
pub mod search;
