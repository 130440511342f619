//! Equivalence of a program and its transformed version: every footprint
//! the transformed program can produce must be one the original can.

use super::compile::Compiled;
use super::footprint::Footprint;
use super::sched::{explore, Exploration, Mode, Options};
use super::vm::Outcome;
use crate::runtime::WorkerId;

#[derive(Clone, Debug)]
pub struct Equivalence {
    pub original: Exploration,
    pub transformed: Exploration,
    /// Transformed footprints the original never produced, each with its
    /// shortest trace, shortest first.
    pub divergent: Vec<(Footprint, Vec<WorkerId>)>,
}

impl Equivalence {
    pub fn equivalent(&self) -> bool {
        self.divergent.is_empty() && self.transformed.violations.is_empty()
    }

    /// Both explorations covered their whole schedule space.
    pub fn complete(&self) -> bool {
        self.original.complete && self.transformed.complete
    }
}

/// Footprints of runs cut off by the step limit are partial and are left
/// out of the comparison; they make the result incomplete instead.
pub fn check_equivalence(original: &Compiled, transformed: &Compiled, opts: &Options, mode: Mode) -> Equivalence {
    let o = explore(original, opts, mode);
    let t = explore(transformed, opts, mode);
    let mut divergent: Vec<(Footprint, Vec<WorkerId>)> = t
        .footprints
        .iter()
        .filter(|(f, _)| f.outcome != Outcome::StepLimit && !o.footprints.contains_key(*f))
        .map(|(f, tr)| (f.clone(), tr.clone()))
        .collect();
    divergent.sort_by_key(|(_, tr)| tr.len());
    Equivalence {
        original: o,
        transformed: t,
        divergent,
    }
}
