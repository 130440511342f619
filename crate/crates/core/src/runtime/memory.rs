//! Word-granularity store shared by all workers.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

/// Logical worker (goroutine) index.
pub type WorkerId = usize;

/// Address of one memory word. Aggregates occupy consecutive cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Cell(pub u32);

impl Cell {
    pub fn offset(self, n: u32) -> Cell {
        Cell(self.0 + n)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}

/// Lock word of a `Mutex` or `RWMutex`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct MutexWord {
    pub writer: Option<WorkerId>,
    pub readers: u32,
}

impl MutexWord {
    pub fn is_free(&self) -> bool {
        self.writer.is_none() && self.readers == 0
    }

    /// Whether an acquisition in the given mode would have to wait.
    pub fn blocks(&self, read: bool) -> bool {
        if read {
            self.writer.is_some()
        } else {
            !self.is_free()
        }
    }
}

/// Per-variable record of an optimistic lock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct OptiState {
    pub slow_path: bool,
    pub lk_mutex: Option<Cell>,
    pub htm_failed: bool,
}

/// Map keys: the scalar types the language allows as keys.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Key {
    Int(i64),
    Bool(bool),
    Str(Arc<str>),
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Int(i) => write!(f, "{i}"),
            Key::Bool(b) => write!(f, "{b}"),
            Key::Str(s) => write!(f, "{s:?}"),
        }
    }
}

/// Contents of one memory word.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Word {
    Nil,
    Int(i64),
    Bool(bool),
    Str(Arc<str>),
    Ptr(Cell),
    /// Map object (values are single words).
    Map(Arc<BTreeMap<Key, Word>>),
    Mutex(MutexWord),
    Opti(OptiState),
}

impl Word {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Word::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Word::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_ptr(&self) -> Option<Cell> {
        match self {
            Word::Ptr(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_key(&self) -> Option<Key> {
        match self {
            Word::Int(i) => Some(Key::Int(*i)),
            Word::Bool(b) => Some(Key::Bool(*b)),
            Word::Str(s) => Some(Key::Str(s.clone())),
            _ => None,
        }
    }
}

/// Committed memory with a version stamp per cell.
#[derive(Clone, Debug, Default)]
pub struct Memory {
    cells: Vec<Word>,
    versions: Vec<u64>,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocate consecutive cells holding `init`; returns the first.
    pub fn alloc(&mut self, init: Vec<Word>) -> Cell {
        let base = Cell(self.cells.len() as u32);
        self.versions.extend(std::iter::repeat(0).take(init.len()));
        self.cells.extend(init);
        base
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, c: Cell) -> &Word {
        &self.cells[c.0 as usize]
    }

    pub fn set(&mut self, c: Cell, w: Word) {
        self.cells[c.0 as usize] = w;
        self.versions[c.0 as usize] += 1;
    }

    pub fn version(&self, c: Cell) -> u64 {
        self.versions[c.0 as usize]
    }

    pub fn contains(&self, c: Cell) -> bool {
        (c.0 as usize) < self.cells.len()
    }

    /// Copy of all words and versions, for rollback checks.
    pub fn snapshot(&self) -> (Vec<Word>, Vec<u64>) {
        (self.cells.clone(), self.versions.clone())
    }

    pub fn words(&self) -> &[Word] {
        &self.cells
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alloc_is_contiguous_and_versioned() {
        let mut m = Memory::new();
        let a = m.alloc(vec![Word::Int(1), Word::Int(2)]);
        let b = m.alloc(vec![Word::Nil]);
        assert_eq!((a, b), (Cell(0), Cell(2)));
        assert_eq!(m.get(a.offset(1)), &Word::Int(2));
        m.set(b, Word::Bool(true));
        assert_eq!((m.version(a), m.version(b)), (0, 1));
    }

    #[test]
    fn read_mode_only_waits_for_writers() {
        let w = MutexWord {
            writer: None,
            readers: 2,
        };
        assert!(!w.blocks(true));
        assert!(w.blocks(false));
        let w = MutexWord {
            writer: Some(0),
            readers: 0,
        };
        assert!(w.blocks(true));
    }
}
