//! Deterministic execution of programs under controlled interleavings,
//! with footprint comparison between a program and its transformation.

pub mod compile;
pub mod equiv;
pub mod footprint;
pub mod sched;
pub mod vm;

#[cfg(test)]
mod tests;

pub use compile::{compile, CompileError, Compiled};
pub use equiv::{check_equivalence, Equivalence};
pub use footprint::Footprint;
pub use sched::{explore, explore_with, run_once, Exploration, Mode, Options, RandomChooser, Run};
pub use vm::{Machine, Outcome, Site, StepInfo};
