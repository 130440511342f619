//! Per-worker transaction record.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::memory::{Cell, Word};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum AbortCode {
    Conflict,
    Capacity,
    LockHeldError,
    MutexMismatchError,
    ExplicitUnfriendly,
}

impl AbortCode {
    /// Whether the hardware would suggest retrying.
    pub fn retryable(self) -> bool {
        matches!(self, AbortCode::Conflict | AbortCode::LockHeldError)
    }

    pub fn name(self) -> &'static str {
        match self {
            AbortCode::Conflict => "conflict",
            AbortCode::Capacity => "capacity",
            AbortCode::LockHeldError => "lock_held",
            AbortCode::MutexMismatchError => "mutex_mismatch",
            AbortCode::ExplicitUnfriendly => "unfriendly",
        }
    }
}

impl fmt::Display for AbortCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TxStatus {
    Inactive,
    Active,
    Committed,
    Aborted(AbortCode),
}

/// The FastLock call that started the outermost transaction; its abort
/// handler resumes here.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attempt {
    pub opti: Cell,
    pub ctx: u64,
    pub mutex: Cell,
    pub read: bool,
    pub trials_left: u32,
}

/// An active (possibly flattened-nested) transaction.
#[derive(Clone, Debug)]
pub struct Tx {
    pub depth: u32,
    pub reads: BTreeSet<Cell>,
    pub writes: BTreeMap<Cell, Word>,
    /// Mutexes elided by fastpath FastLock calls inside this transaction,
    /// with the read flag.
    pub elided: Vec<(Cell, bool)>,
    pub attempt: Attempt,
}

impl Tx {
    pub fn new(attempt: Attempt) -> Self {
        Tx {
            depth: 1,
            reads: BTreeSet::new(),
            writes: BTreeMap::new(),
            elided: Vec::new(),
            attempt,
        }
    }

    /// Distinct cells in the read and write sets.
    pub fn footprint(&self) -> usize {
        self.reads.len() + self.writes.keys().filter(|c| !self.reads.contains(c)).count()
    }

    pub fn touches(&self, c: Cell) -> bool {
        self.reads.contains(&c) || self.writes.contains_key(&c)
    }

    /// Whether adding `c` would exceed `bound` distinct cells.
    pub fn would_overflow(&self, c: Cell, bound: usize) -> bool {
        !self.touches(c) && self.footprint() + 1 > bound
    }

    /// Read-write or write-write overlap with another transaction.
    pub fn conflicts_with(&self, other: &Tx) -> bool {
        self.writes.keys().any(|c| other.touches(*c)) || other.writes.keys().any(|c| self.touches(*c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attempt() -> Attempt {
        Attempt {
            opti: Cell(0),
            ctx: 0,
            mutex: Cell(1),
            read: false,
            trials_left: 3,
        }
    }

    #[test]
    fn footprint_counts_distinct_cells() {
        let mut t = Tx::new(attempt());
        t.reads.insert(Cell(1));
        t.writes.insert(Cell(1), Word::Int(0));
        t.writes.insert(Cell(2), Word::Int(0));
        assert_eq!(t.footprint(), 2);
        assert!(!t.would_overflow(Cell(2), 2));
        assert!(t.would_overflow(Cell(3), 2));
    }

    #[test]
    fn shared_reads_do_not_conflict() {
        let mut a = Tx::new(attempt());
        let mut b = Tx::new(attempt());
        a.reads.insert(Cell(5));
        b.reads.insert(Cell(5));
        assert!(!a.conflicts_with(&b));
        b.writes.insert(Cell(5), Word::Nil);
        assert!(a.conflicts_with(&b));
    }

    #[test]
    fn only_conflicts_and_lock_held_are_retried() {
        assert!(AbortCode::Conflict.retryable());
        assert!(AbortCode::LockHeldError.retryable());
        assert!(!AbortCode::Capacity.retryable());
        assert!(!AbortCode::MutexMismatchError.retryable());
        assert!(!AbortCode::ExplicitUnfriendly.retryable());
    }
}
