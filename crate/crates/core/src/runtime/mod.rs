//! Optimistic-lock runtime: emulated transactional memory with lock-word
//! subscription, the FastLock/FastUnlock state machine and the perceptron
//! that learns where elision pays off.

pub mod engine;
pub mod memory;
pub mod perceptron;
pub mod tx;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{Engine, LockStep, Trap};
pub use memory::{Cell, Key, Memory, MutexWord, OptiState, WorkerId, Word};
pub use perceptron::{Decision, Perceptron};
pub use tx::{AbortCode, Attempt, Tx, TxStatus};

/// Pseudo-address of a mutex cell, used as the mutex feature.
pub fn mutex_addr(c: Cell) -> u64 {
    0x2000_0000 + c.0 as u64 * 8
}

/// Pseudo-address of an optimistic lock: the same declaration on the same
/// worker always lands on the same address, like a stack slot.
pub fn opti_addr(worker: WorkerId, site: u32) -> u64 {
    0x1000_0000 + worker as u64 * 0x1040 + site as u64 * 16
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub max_attempts: u32,
    pub capacity_bound: usize,
    pub decay_threshold: u32,
    pub table_size: usize,
    /// Processors available to the scheduler; 1 disables elision.
    pub worker_count: usize,
    /// When false every FastLock takes the original lock.
    pub elision: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            max_attempts: 3,
            capacity_bound: 1024,
            decay_threshold: perceptron::DECAY_THRESHOLD,
            table_size: perceptron::TABLE_SIZE,
            worker_count: 2,
            elision: true,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("malformed engine config: {0}")]
    Json(String),
    #[error("invalid engine config: {0}")]
    Invalid(String),
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config, ConfigError> {
        let c: Config = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        if self.capacity_bound == 0 {
            return bad("capacity_bound must be at least 1");
        }
        if self.decay_threshold == 0 {
            return bad("decay_threshold must be at least 1");
        }
        if !self.table_size.is_power_of_two() || self.table_size > 1 << 20 {
            return bad("table_size must be a power of two no larger than 2^20");
        }
        if self.worker_count == 0 {
            return bad("worker_count must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AbortCounts {
    pub conflict: u64,
    pub capacity: u64,
    pub lock_held: u64,
    pub mutex_mismatch: u64,
    pub unfriendly: u64,
}

impl AbortCounts {
    pub fn bump(&mut self, code: AbortCode) {
        *self.get_mut(code) += 1;
    }

    fn get_mut(&mut self, code: AbortCode) -> &mut u64 {
        match code {
            AbortCode::Conflict => &mut self.conflict,
            AbortCode::Capacity => &mut self.capacity,
            AbortCode::LockHeldError => &mut self.lock_held,
            AbortCode::MutexMismatchError => &mut self.mutex_mismatch,
            AbortCode::ExplicitUnfriendly => &mut self.unfriendly,
        }
    }

    pub fn get(&self, code: AbortCode) -> u64 {
        match code {
            AbortCode::Conflict => self.conflict,
            AbortCode::Capacity => self.capacity,
            AbortCode::LockHeldError => self.lock_held,
            AbortCode::MutexMismatchError => self.mutex_mismatch,
            AbortCode::ExplicitUnfriendly => self.unfriendly,
        }
    }

    pub fn total(&self) -> u64 {
        self.conflict + self.capacity + self.lock_held + self.mutex_mismatch + self.unfriendly
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DecisionCounts {
    pub transactional: u64,
    pub lock: u64,
}

/// Monotonic engine counters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    /// Transactions started by FastLock, nested ones included.
    pub tx_attempts: u64,
    /// Critical sections finished on the fastpath.
    pub commits: u64,
    pub aborts: AbortCounts,
    /// Original-lock acquisitions made by FastLock.
    pub slowpath_acquisitions: u64,
    /// Acquisitions by untransformed Lock/RLock calls.
    pub plain_acquisitions: u64,
    pub decisions: DecisionCounts,
    pub decay_resets: u64,
    /// FastLock calls that skipped the perceptron (single worker or
    /// elision disabled).
    pub bypassed: u64,
}

/// Engine events in execution order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Decide { worker: WorkerId, ctx: u64, decision: Decision },
    DecayReset { worker: WorkerId, ctx: u64 },
    Begin { worker: WorkerId, nested: bool },
    Abort { worker: WorkerId, code: AbortCode },
    Commit { worker: WorkerId, nested: bool },
    Slowpath { worker: WorkerId, mutex: Cell },
    SlowRelease { worker: WorkerId, mutex: Cell },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
        let c = Config::from_json(r#"{"max_attempts":5,"worker_count":1}"#).unwrap();
        assert_eq!((c.max_attempts, c.worker_count, c.capacity_bound), (5, 1, 1024));
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(matches!(Config::from_json(r#"{"table_size":1000}"#), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::from_json(r#"{"bogus":1}"#), Err(ConfigError::Json(_))));
        assert!(matches!(Config::from_json(r#"{"worker_count":0}"#), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn fresh_stats_are_zero() {
        let s = Stats::default();
        assert_eq!(s.commits + s.aborts.total() + s.slowpath_acquisitions + s.decay_resets, 0);
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["aborts"]["mutex_mismatch"], 0);
    }

    #[test]
    fn addresses_differ_per_worker_and_site() {
        assert_ne!(opti_addr(0, 1), opti_addr(1, 1));
        assert_ne!(opti_addr(0, 1), opti_addr(0, 2));
        assert_eq!(mutex_addr(Cell(2)) - mutex_addr(Cell(1)), 8);
    }
}
