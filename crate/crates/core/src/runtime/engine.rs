//! The engine: shared memory, active transactions and the optimistic-lock
//! state machine. Every call runs inside one scheduler step of one worker.

use std::collections::BTreeMap;

use super::memory::{Cell, Memory, MutexWord, OptiState, WorkerId, Word};
use super::perceptron::{Decision, Perceptron};
use super::tx::{AbortCode, Attempt, Tx};
use super::{mutex_addr, Config, Event, Stats};

/// Why a memory or lock operation did not complete normally.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Trap {
    /// The calling worker's transaction was aborted and rolled back; its
    /// control state must return to the outermost FastLock.
    Aborted(AbortCode),
    /// A fatal runtime error outside any transaction.
    Fault(String),
}

/// Outcome of one FastLock or Lock step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LockStep {
    /// Running transactionally.
    Fast,
    /// The original lock is held.
    Slow,
    /// Blocked until the mutex can be taken in the given mode; call again.
    Wait { mutex: Cell, read: bool },
    /// Not finished but runnable; call again.
    Pending,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    /// Check the lock word and begin at once when it is free.
    Fresh,
    /// Saw the lock held; check again.
    Waiting,
    /// Saw the lock free after waiting; begin without checking.
    Ready,
}

/// Where an unfinished FastLock picks up on the worker's next step.
#[derive(Clone, Copy, Debug)]
enum Progress {
    Begin { attempt: Attempt, phase: Phase },
    Acquire { mutex: Cell, read: bool },
}

#[derive(Clone, Debug)]
pub struct Engine {
    pub config: Config,
    pub mem: Memory,
    pub perceptron: Perceptron,
    pub stats: Stats,
    pub events: Vec<Event>,
    txs: BTreeMap<WorkerId, Tx>,
    progress: BTreeMap<WorkerId, Progress>,
    aborted: Vec<(WorkerId, AbortCode)>,
}

impl Engine {
    pub fn new(config: Config) -> Self {
        Engine {
            perceptron: Perceptron::new(config.table_size),
            config,
            mem: Memory::new(),
            stats: Stats::default(),
            events: Vec::new(),
            txs: BTreeMap::new(),
            progress: BTreeMap::new(),
            aborted: Vec::new(),
        }
    }

    pub fn in_tx(&self, w: WorkerId) -> bool {
        self.txs.contains_key(&w)
    }

    pub fn tx(&self, w: WorkerId) -> Option<&Tx> {
        self.txs.get(&w)
    }

    pub fn active_txs(&self) -> impl Iterator<Item = (&WorkerId, &Tx)> {
        self.txs.iter()
    }

    /// Workers whose transactions were aborted since the last call, in order.
    pub fn take_aborted(&mut self) -> Vec<(WorkerId, AbortCode)> {
        std::mem::take(&mut self.aborted)
    }

    fn bypass(&self) -> bool {
        self.config.worker_count <= 1 || !self.config.elision
    }

    // ---- memory ----

    /// The worker's view of a cell, without recording anything.
    pub fn peek(&self, w: WorkerId, c: Cell) -> &Word {
        self.txs
            .get(&w)
            .and_then(|t| t.writes.get(&c))
            .unwrap_or_else(|| self.mem.get(c))
    }

    pub fn alloc(&mut self, init: Vec<Word>) -> Cell {
        self.mem.alloc(init)
    }

    /// Abort every other worker's transaction matching `hit`.
    fn abort_others(&mut self, w: WorkerId, hit: impl Fn(&Tx) -> bool) {
        let victims: Vec<WorkerId> = self
            .txs
            .iter()
            .filter(|(o, t)| **o != w && hit(t))
            .map(|(o, _)| *o)
            .collect();
        for v in victims {
            self.abort(v, AbortCode::Conflict);
        }
    }

    pub fn read(&mut self, w: WorkerId, c: Cell) -> Result<Word, Trap> {
        if let Some(tx) = self.txs.get(&w) {
            if let Some(v) = tx.writes.get(&c) {
                return Ok(v.clone());
            }
            if tx.would_overflow(c, self.config.capacity_bound) {
                return Err(Trap::Aborted(self.abort(w, AbortCode::Capacity)));
            }
        }
        self.abort_others(w, |t| t.writes.contains_key(&c));
        if let Some(tx) = self.txs.get_mut(&w) {
            tx.reads.insert(c);
        }
        Ok(self.mem.get(c).clone())
    }

    pub fn write(&mut self, w: WorkerId, c: Cell, v: Word) -> Result<(), Trap> {
        if let Some(tx) = self.txs.get(&w) {
            if tx.would_overflow(c, self.config.capacity_bound) {
                return Err(Trap::Aborted(self.abort(w, AbortCode::Capacity)));
            }
        }
        self.abort_others(w, |t| t.touches(c));
        match self.txs.get_mut(&w) {
            Some(tx) => {
                tx.writes.insert(c, v);
            }
            None => self.mem.set(c, v),
        }
        Ok(())
    }

    /// A fatal error: aborts the transaction if one is active, since the
    /// error report would be I/O.
    pub fn fault(&mut self, w: WorkerId, msg: impl Into<String>) -> Trap {
        if self.in_tx(w) {
            Trap::Aborted(self.abort(w, AbortCode::ExplicitUnfriendly))
        } else {
            Trap::Fault(msg.into())
        }
    }

    /// Guard for operations that cannot run inside a transaction.
    pub fn unfriendly(&mut self, w: WorkerId) -> Result<(), Trap> {
        if self.in_tx(w) {
            Err(Trap::Aborted(self.abort(w, AbortCode::ExplicitUnfriendly)))
        } else {
            Ok(())
        }
    }

    // ---- transactions ----

    fn begin(&mut self, w: WorkerId, attempt: Attempt) -> Result<LockStep, Trap> {
        self.stats.tx_attempts += 1;
        let nested = match self.txs.get_mut(&w) {
            Some(tx) => {
                tx.depth += 1;
                true
            }
            None => {
                self.txs.insert(w, Tx::new(attempt));
                false
            }
        };
        self.events.push(Event::Begin { worker: w, nested });
        // Subscribe to the lock word.
        let word = self.mutex_word(w, attempt.mutex)?;
        if word.blocks(attempt.read) {
            return Err(Trap::Aborted(self.abort(w, AbortCode::LockHeldError)));
        }
        if let Some(tx) = self.txs.get_mut(&w) {
            tx.elided.push((attempt.mutex, attempt.read));
        }
        Ok(LockStep::Fast)
    }

    /// Commit one nesting level; the outermost level publishes the writes.
    fn commit(&mut self, w: WorkerId) {
        let tx = self.txs.get_mut(&w).expect("active transaction");
        tx.depth -= 1;
        let nested = tx.depth > 0;
        if !nested {
            let tx = self.txs.remove(&w).unwrap();
            for (c, v) in tx.writes {
                self.mem.set(c, v);
            }
        }
        self.events.push(Event::Commit { worker: w, nested });
    }

    /// Abort `w`'s transaction and run the FastLock abort handler, which
    /// decides between another attempt and the original lock.
    pub fn abort(&mut self, w: WorkerId, code: AbortCode) -> AbortCode {
        let tx = self.txs.remove(&w).expect("abort without a transaction");
        self.stats.aborts.bump(code);
        self.events.push(Event::Abort { worker: w, code });
        let mut a = tx.attempt;
        a.trials_left = a.trials_left.saturating_sub(1);
        if code.retryable() && a.trials_left > 0 {
            self.progress.insert(
                w,
                Progress::Begin {
                    attempt: a,
                    phase: Phase::Fresh,
                },
            );
        } else {
            self.mem.set(
                a.opti,
                Word::Opti(OptiState {
                    slow_path: true,
                    lk_mutex: Some(a.mutex),
                    htm_failed: true,
                }),
            );
            self.progress.insert(
                w,
                Progress::Acquire {
                    mutex: a.mutex,
                    read: a.read,
                },
            );
        }
        self.aborted.push((w, code));
        code
    }

    // ---- locks ----

    fn mutex_word(&mut self, w: WorkerId, m: Cell) -> Result<MutexWord, Trap> {
        match self.read(w, m)? {
            Word::Mutex(mw) => Ok(mw),
            other => Err(self.fault(w, format!("lock operation on a non-mutex word {other:?}"))),
        }
    }

    fn take(&mut self, w: WorkerId, m: Cell, read: bool) -> Result<bool, Trap> {
        let mut word = self.mutex_word(w, m)?;
        if word.blocks(read) {
            return Ok(false);
        }
        if read {
            word.readers += 1;
        } else {
            word.writer = Some(w);
        }
        self.write(w, m, Word::Mutex(word))?;
        Ok(true)
    }

    /// An untransformed Lock/RLock.
    pub fn lock(&mut self, w: WorkerId, m: Cell, read: bool) -> Result<LockStep, Trap> {
        if self.take(w, m, read)? {
            self.stats.plain_acquisitions += 1;
            Ok(LockStep::Slow)
        } else {
            Ok(LockStep::Wait { mutex: m, read })
        }
    }

    /// An untransformed Unlock/RUnlock.
    pub fn unlock(&mut self, w: WorkerId, m: Cell, read: bool) -> Result<(), Trap> {
        let mut word = self.mutex_word(w, m)?;
        if read {
            if word.readers == 0 {
                return Err(self.fault(w, "sync: RUnlock of unlocked RWMutex"));
            }
            word.readers -= 1;
        } else {
            if word.writer.is_none() {
                return Err(self.fault(w, "sync: unlock of unlocked mutex"));
            }
            word.writer = None;
        }
        self.write(w, m, Word::Mutex(word))
    }

    /// Whether a worker blocked on `m` could make progress now.
    pub fn can_take(&self, w: WorkerId, m: Cell, read: bool) -> bool {
        match self.peek(w, m) {
            Word::Mutex(mw) => !mw.blocks(read),
            _ => true,
        }
    }

    fn opti_state(&mut self, w: WorkerId, opti: Cell) -> Result<OptiState, Trap> {
        match self.read(w, opti)? {
            Word::Opti(s) => Ok(s),
            other => Err(self.fault(w, format!("optimistic lock operation on {other:?}"))),
        }
    }

    fn acquire_slow(&mut self, w: WorkerId, m: Cell, read: bool) -> Result<LockStep, Trap> {
        if self.take(w, m, read)? {
            self.stats.slowpath_acquisitions += 1;
            self.events.push(Event::Slowpath { worker: w, mutex: m });
            Ok(LockStep::Slow)
        } else {
            self.progress.insert(w, Progress::Acquire { mutex: m, read });
            Ok(LockStep::Wait { mutex: m, read })
        }
    }

    fn try_begin(&mut self, w: WorkerId, attempt: Attempt, phase: Phase) -> Result<LockStep, Trap> {
        let (m, read) = (attempt.mutex, attempt.read);
        if phase != Phase::Ready {
            // Spin until the lock is free, outside the transaction.
            if self.mutex_word(w, m)?.blocks(read) {
                self.progress.insert(
                    w,
                    Progress::Begin {
                        attempt,
                        phase: Phase::Waiting,
                    },
                );
                return Ok(LockStep::Wait { mutex: m, read });
            }
            if phase == Phase::Waiting {
                self.progress.insert(
                    w,
                    Progress::Begin {
                        attempt,
                        phase: Phase::Ready,
                    },
                );
                return Ok(LockStep::Pending);
            }
        }
        self.begin(w, attempt)
    }

    /// `opti.FastLock(m)` (or FastRLock with `read`). `ctx` is the
    /// optimistic lock's pseudo-address.
    pub fn fast_lock(&mut self, w: WorkerId, opti: Cell, ctx: u64, m: Cell, read: bool) -> Result<LockStep, Trap> {
        match self.progress.remove(&w) {
            Some(Progress::Begin { attempt, phase }) => return self.try_begin(w, attempt, phase),
            Some(Progress::Acquire { mutex, read }) => return self.acquire_slow(w, mutex, read),
            None => {}
        }
        let mut st = OptiState {
            slow_path: false,
            lk_mutex: Some(m),
            htm_failed: false,
        };
        self.write(w, opti, Word::Opti(st))?;
        if self.bypass() {
            self.stats.bypassed += 1;
            st.slow_path = true;
            self.write(w, opti, Word::Opti(st))?;
            return self.acquire_slow(w, m, read);
        }
        let idx = self.perceptron.indices(ctx, mutex_addr(m));
        let decision = if self.perceptron.decayed(idx, self.config.decay_threshold) {
            self.perceptron.reset(idx);
            self.stats.decay_resets += 1;
            self.events.push(Event::DecayReset { worker: w, ctx });
            Decision::Transactional
        } else {
            self.perceptron.decide(idx)
        };
        self.events.push(Event::Decide {
            worker: w,
            ctx,
            decision,
        });
        match decision {
            Decision::Lock => {
                self.stats.decisions.lock += 1;
                self.perceptron.count_lock_decision(idx);
                st.slow_path = true;
                self.write(w, opti, Word::Opti(st))?;
                self.acquire_slow(w, m, read)
            }
            Decision::Transactional => {
                self.stats.decisions.transactional += 1;
                let attempt = Attempt {
                    opti,
                    ctx,
                    mutex: m,
                    read,
                    trials_left: self.config.max_attempts,
                };
                if self.in_tx(w) {
                    // Flattened nesting: no waiting inside a transaction.
                    self.begin(w, attempt)
                } else {
                    self.try_begin(w, attempt, Phase::Fresh)
                }
            }
        }
    }

    /// `opti.FastUnlock(m)` (or FastRUnlock with `read`).
    pub fn fast_unlock(&mut self, w: WorkerId, opti: Cell, ctx: u64, m: Cell, read: bool) -> Result<(), Trap> {
        let st = self.opti_state(w, opti)?;
        let Some(lk) = st.lk_mutex else {
            return Err(self.fault(w, "FastUnlock without a matching FastLock"));
        };
        let idx = self.perceptron.indices(ctx, mutex_addr(lk));
        if st.slow_path {
            self.unlock(w, m, read)?;
            self.write(w, opti, Word::Opti(OptiState::default()))?;
            if st.htm_failed {
                self.perceptron.penalize(idx);
            }
            self.events.push(Event::SlowRelease { worker: w, mutex: m });
            return Ok(());
        }
        if m != lk {
            if self.in_tx(w) {
                return Err(Trap::Aborted(self.abort(w, AbortCode::MutexMismatchError)));
            }
            return Err(Trap::Fault("FastUnlock on a different mutex outside a transaction".into()));
        }
        if !self.in_tx(w) {
            return Err(Trap::Fault("fastpath FastUnlock outside a transaction".into()));
        }
        self.write(w, opti, Word::Opti(OptiState::default()))?;
        self.commit(w);
        self.perceptron.reward(idx);
        self.stats.commits += 1;
        Ok(())
    }

    /// Mutual-exclusion and isolation violations in the current state:
    /// an elided mutex held by another worker, or two live transactions
    /// with conflicting accesses.
    pub fn exclusion_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (w, tx) in &self.txs {
            for &(m, read) in &tx.elided {
                if let Word::Mutex(mw) = self.mem.get(m) {
                    match mw.writer {
                        Some(o) if o != *w => {
                            out.push(format!("worker {w} elides mutex {m} held by worker {o}"));
                        }
                        _ if !read && mw.readers > 0 => {
                            out.push(format!("worker {w} elides mutex {m} while it is read-locked"));
                        }
                        _ => {}
                    }
                }
            }
        }
        let txs: Vec<_> = self.txs.iter().collect();
        for (i, (a, ta)) in txs.iter().enumerate() {
            for (b, tb) in &txs[i + 1..] {
                if ta.conflicts_with(tb) {
                    out.push(format!("transactions of workers {a} and {b} overlap on a written cell"));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::opti_addr;

    struct Rig {
        e: Engine,
        m: Cell,
        x: Cell,
        ol: [Cell; 2],
    }

    fn rig(config: Config) -> Rig {
        let mut e = Engine::new(config);
        let m = e.alloc(vec![Word::Mutex(MutexWord::default())]);
        let x = e.alloc(vec![Word::Int(0)]);
        let ol = [e.alloc(vec![Word::Opti(OptiState::default())]), e.alloc(vec![Word::Opti(OptiState::default())])];
        Rig { e, m, x, ol }
    }

    fn ctx(w: WorkerId) -> u64 {
        opti_addr(w, 0)
    }

    #[test]
    fn clean_fastpath_commits_and_rewards() {
        let mut r = rig(Config::default());
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Fast));
        r.e.write(0, r.x, Word::Int(7)).unwrap();
        assert_eq!(r.e.mem.get(r.x), &Word::Int(0), "buffered until commit");
        r.e.fast_unlock(0, r.ol[0], ctx(0), r.m, false).unwrap();
        assert_eq!(r.e.mem.get(r.x), &Word::Int(7));
        assert_eq!(r.e.stats.commits, 1);
        assert_eq!(r.e.stats.slowpath_acquisitions, 0);
        let idx = r.e.perceptron.indices(ctx(0), mutex_addr(r.m));
        assert_eq!(r.e.perceptron.weights_at(idx), [1, 1]);
    }

    #[test]
    fn single_worker_bypasses_transactions() {
        let mut r = rig(Config {
            worker_count: 1,
            ..Config::default()
        });
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Slow));
        r.e.fast_unlock(0, r.ol[0], ctx(0), r.m, false).unwrap();
        assert_eq!(r.e.stats.tx_attempts, 0);
        assert_eq!(r.e.stats.bypassed, 1);
        assert_eq!(r.e.mem.get(r.m), &Word::Mutex(MutexWord::default()));
    }

    #[test]
    fn slowpath_acquisition_aborts_subscribed_transaction() {
        let mut r = rig(Config::default());
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Fast));
        r.e.write(0, r.x, Word::Int(1)).unwrap();
        assert_eq!(r.e.lock(1, r.m, false), Ok(LockStep::Slow));
        assert_eq!(r.e.take_aborted(), vec![(0, AbortCode::Conflict)]);
        assert!(!r.e.in_tx(0));
        assert_eq!(r.e.mem.get(r.x), &Word::Int(0));
        // The retry waits for the holder.
        assert_eq!(
            r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false),
            Ok(LockStep::Wait { mutex: r.m, read: false })
        );
        r.e.unlock(1, r.m, false).unwrap();
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Pending));
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Fast));
    }

    #[test]
    fn lock_taken_between_wait_and_begin_aborts_with_lock_held() {
        let mut r = rig(Config::default());
        r.e.lock(1, r.m, false).unwrap();
        assert!(matches!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Wait { .. })));
        r.e.unlock(1, r.m, false).unwrap();
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Pending));
        r.e.lock(1, r.m, false).unwrap();
        assert_eq!(
            r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false),
            Err(Trap::Aborted(AbortCode::LockHeldError))
        );
        assert_eq!(r.e.stats.aborts.lock_held, 1);
        // Retried: waits again.
        assert!(matches!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Wait { .. })));
    }

    #[test]
    fn mismatch_aborts_then_takes_the_slowpath() {
        let mut r = rig(Config::default());
        let a = r.e.alloc(vec![Word::Mutex(MutexWord::default())]);
        // a.Lock(); l.FastLock(b=m); l.FastUnlock(a)
        r.e.lock(0, a, false).unwrap();
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Fast));
        assert_eq!(
            r.e.fast_unlock(0, r.ol[0], ctx(0), a, false),
            Err(Trap::Aborted(AbortCode::MutexMismatchError))
        );
        // Control returns to FastLock, which now takes m.
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Slow));
        r.e.fast_unlock(0, r.ol[0], ctx(0), a, false).unwrap();
        r.e.unlock(0, r.m, false).unwrap();
        assert!(matches!(r.e.mem.get(a), Word::Mutex(w) if w.is_free()));
        assert!(matches!(r.e.mem.get(r.m), Word::Mutex(w) if w.is_free()));
        let idx = r.e.perceptron.indices(ctx(0), mutex_addr(r.m));
        assert_eq!(r.e.perceptron.weights_at(idx), [-1, -1]);
    }

    #[test]
    fn capacity_overflow_aborts() {
        let mut r = rig(Config {
            capacity_bound: 4,
            ..Config::default()
        });
        let cells: Vec<Cell> = (0..5).map(|i| r.e.alloc(vec![Word::Int(i)])).collect();
        r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false).unwrap();
        // The subscribed lock word already counts.
        for c in &cells[..3] {
            r.e.read(0, *c).unwrap();
        }
        assert_eq!(r.e.read(0, cells[3]), Err(Trap::Aborted(AbortCode::Capacity)));
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Slow));
    }

    #[test]
    fn read_only_transactions_coexist() {
        let mut r = rig(Config::default());
        r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false).unwrap();
        r.e.fast_lock(1, r.ol[1], ctx(1), r.m, false).unwrap();
        r.e.read(0, r.x).unwrap();
        r.e.read(1, r.x).unwrap();
        assert!(r.e.exclusion_violations().is_empty());
        r.e.fast_unlock(0, r.ol[0], ctx(0), r.m, false).unwrap();
        r.e.fast_unlock(1, r.ol[1], ctx(1), r.m, false).unwrap();
        assert_eq!(r.e.stats.commits, 2);
        assert_eq!(r.e.stats.aborts.total(), 0);
    }

    #[test]
    fn plain_write_aborts_transactional_writer() {
        let mut r = rig(Config::default());
        r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false).unwrap();
        r.e.write(0, r.x, Word::Int(1)).unwrap();
        r.e.write(1, r.x, Word::Int(2)).unwrap();
        assert_eq!(r.e.take_aborted(), vec![(0, AbortCode::Conflict)]);
        assert_eq!(r.e.mem.get(r.x), &Word::Int(2));
    }

    #[test]
    fn unmatched_fast_unlock_faults() {
        let mut r = rig(Config::default());
        assert!(matches!(r.e.fast_unlock(0, r.ol[0], ctx(0), r.m, false), Err(Trap::Fault(_))));
    }

    #[test]
    fn unfriendly_operation_aborts_without_retry() {
        let mut r = rig(Config::default());
        r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false).unwrap();
        assert_eq!(r.e.unfriendly(0), Err(Trap::Aborted(AbortCode::ExplicitUnfriendly)));
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Slow));
        assert!(matches!(r.e.mem.get(r.ol[0]), Word::Opti(s) if s.slow_path && s.htm_failed));
    }

    #[test]
    fn retry_budget_is_consumed_by_conflicts() {
        let mut r = rig(Config::default());
        for _ in 0..3 {
            assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Fast));
            r.e.read(0, r.x).unwrap();
            r.e.write(1, r.x, Word::Int(9)).unwrap();
        }
        assert_eq!(r.e.stats.aborts.conflict, 3);
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Slow));
        assert_eq!(r.e.stats.tx_attempts, 3);
    }

    #[test]
    fn nested_transactions_flatten() {
        let mut r = rig(Config::default());
        let b = r.e.alloc(vec![Word::Mutex(MutexWord::default())]);
        r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false).unwrap();
        assert_eq!(r.e.fast_lock(0, r.ol[1], opti_addr(0, 1), b, false), Ok(LockStep::Fast));
        r.e.write(0, r.x, Word::Int(3)).unwrap();
        r.e.fast_unlock(0, r.ol[1], opti_addr(0, 1), b, false).unwrap();
        assert!(r.e.in_tx(0));
        assert_eq!(r.e.mem.get(r.x), &Word::Int(0));
        r.e.fast_unlock(0, r.ol[0], ctx(0), r.m, false).unwrap();
        assert!(!r.e.in_tx(0));
        assert_eq!(r.e.mem.get(r.x), &Word::Int(3));
    }

    #[test]
    fn decay_after_threshold_lock_decisions() {
        let mut r = rig(Config::default());
        let idx = r.e.perceptron.indices(ctx(0), mutex_addr(r.m));
        r.e.perceptron.set_weights(idx, [-16, -16]);
        for _ in 0..1000 {
            assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Slow));
            r.e.fast_unlock(0, r.ol[0], ctx(0), r.m, false).unwrap();
        }
        assert_eq!((r.e.stats.decay_resets, r.e.stats.tx_attempts), (0, 0));
        assert_eq!(r.e.fast_lock(0, r.ol[0], ctx(0), r.m, false), Ok(LockStep::Fast));
        assert_eq!((r.e.stats.decay_resets, r.e.stats.tx_attempts), (1, 1));
    }
}
