//! Schedulers: seeded random interleavings and bounded exhaustive
//! enumeration.
//!
//! A step that only touched cells private to its worker commutes with
//! every other step, so the same worker keeps running without a choice
//! point after it.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::compile::Compiled;
use super::footprint::Footprint;
use super::vm::{Machine, Outcome, Site};
use crate::pointsto::AbsLoc;
use crate::runtime::{Config, Stats, WorkerId};

pub const DEFAULT_MAX_STEPS: u64 = 100_000;
pub const DEFAULT_MAX_INTERLEAVINGS: u64 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// `runs` independent schedules drawn from one seeded generator.
    Random { seed: u64, runs: u64 },
    /// Every distinct schedule, up to the interleaving bound.
    Exhaustive,
}

#[derive(Clone, Debug)]
pub struct Options {
    pub config: Config,
    /// Steps per run before it is cut off.
    pub max_steps: u64,
    pub max_interleavings: u64,
    /// Skip choice points after steps invisible to other workers.
    pub reduce: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            config: Config::default(),
            max_steps: DEFAULT_MAX_STEPS,
            max_interleavings: DEFAULT_MAX_INTERLEAVINGS,
            reduce: true,
        }
    }
}

/// One finished run.
#[derive(Clone, Debug)]
pub struct Run {
    pub footprint: Footprint,
    /// Worker of every step, in order.
    pub trace: Vec<WorkerId>,
    pub stats: Stats,
    pub violations: Vec<String>,
    pub deadlock: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Exploration {
    pub runs: u64,
    /// False when a bound cut the exploration or a run short.
    pub complete: bool,
    /// Runs that hit the step limit.
    pub step_limited: u64,
    /// Each distinct footprint with the shortest trace producing it.
    #[serde(skip)]
    pub footprints: BTreeMap<Footprint, Vec<WorkerId>>,
    /// Violations with the trace that exposed them.
    pub violations: Vec<(String, Vec<WorkerId>)>,
    /// Runtime mutex origins seen at each lock site.
    #[serde(skip)]
    pub observations: BTreeSet<(Site, AbsLoc)>,
    pub stats: Stats,
}

/// Source of scheduling decisions.
pub trait Chooser {
    /// Index into `enabled` (which has at least two workers).
    fn choose(&mut self, enabled: &[WorkerId]) -> usize;
}

pub struct RandomChooser(pub ChaCha8Rng);

impl RandomChooser {
    pub fn new(seed: u64) -> Self {
        RandomChooser(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Chooser for RandomChooser {
    fn choose(&mut self, enabled: &[WorkerId]) -> usize {
        self.0.gen_range(0..enabled.len())
    }
}

/// Replays a prefix of choices, then always takes the first option while
/// recording the branching factor of each new choice point.
#[derive(Default)]
struct Replay {
    path: Vec<(usize, usize)>,
    pos: usize,
}

impl Chooser for Replay {
    fn choose(&mut self, enabled: &[WorkerId]) -> usize {
        let i = if self.pos < self.path.len() {
            self.path[self.pos].0
        } else {
            self.path.push((0, enabled.len()));
            0
        };
        self.pos += 1;
        i
    }
}

impl Replay {
    /// Advance to the next unexplored schedule; false when none is left.
    fn advance(&mut self) -> bool {
        while let Some((i, n)) = self.path.pop() {
            if i + 1 < n {
                self.path.push((i + 1, n));
                self.pos = 0;
                return true;
            }
        }
        false
    }
}

/// Execute one run to the end, or to the step limit.
pub fn run_once<'c>(prog: &'c Compiled, opts: &Options, chooser: &mut dyn Chooser) -> (Run, Machine<'c>) {
    let mut m = Machine::new(prog, opts.config.clone());
    let mut trace = Vec::new();
    let mut keep: Option<WorkerId> = None;
    let mut deadlock = None;
    let outcome = loop {
        if m.steps >= opts.max_steps {
            break Outcome::StepLimit;
        }
        let enabled = m.enabled_workers();
        if enabled.is_empty() {
            deadlock = Some(m.deadlock_report());
            break Outcome::Deadlock;
        }
        let w = match keep {
            Some(w) if opts.reduce && enabled.contains(&w) => w,
            _ if enabled.len() == 1 => enabled[0],
            _ => enabled[chooser.choose(&enabled)],
        };
        trace.push(w);
        let info = m.step(w);
        if let Some(o) = info.halt {
            break o;
        }
        keep = (!info.visible).then_some(w);
    };
    let run = Run {
        footprint: Footprint::capture(&m, outcome),
        trace,
        stats: m.engine.stats.clone(),
        violations: m.violations.clone(),
        deadlock,
    };
    (run, m)
}

/// Explore a program, calling `inspect` after every run.
pub fn explore_with(
    prog: &Compiled,
    opts: &Options,
    mode: Mode,
    mut inspect: impl FnMut(&Run, &Machine<'_>),
) -> Exploration {
    let mut ex = Exploration {
        complete: true,
        ..Default::default()
    };
    let mut record = |ex: &mut Exploration, run: Run, m: &Machine<'_>| {
        inspect(&run, m);
        ex.runs += 1;
        if run.footprint.outcome == Outcome::StepLimit {
            ex.step_limited += 1;
            ex.complete = false;
        }
        for v in &run.violations {
            if ex.violations.len() < 64 {
                ex.violations.push((v.clone(), run.trace.clone()));
            }
        }
        ex.observations.extend(m.observations.iter().cloned());
        add_stats(&mut ex.stats, &run.stats);
        let entry = ex.footprints.entry(run.footprint).or_insert_with(|| run.trace.clone());
        if run.trace.len() < entry.len() {
            *entry = run.trace;
        }
    };
    match mode {
        Mode::Random { seed, runs } => {
            let mut chooser = RandomChooser::new(seed);
            for _ in 0..runs {
                let (run, m) = run_once(prog, opts, &mut chooser);
                record(&mut ex, run, &m);
            }
        }
        Mode::Exhaustive => {
            let mut replay = Replay::default();
            loop {
                if ex.runs >= opts.max_interleavings {
                    ex.complete = false;
                    break;
                }
                let (run, m) = run_once(prog, opts, &mut replay);
                record(&mut ex, run, &m);
                if !replay.advance() {
                    break;
                }
            }
        }
    }
    ex
}

pub fn explore(prog: &Compiled, opts: &Options, mode: Mode) -> Exploration {
    explore_with(prog, opts, mode, |_, _| {})
}

fn add_stats(acc: &mut Stats, s: &Stats) {
    acc.tx_attempts += s.tx_attempts;
    acc.commits += s.commits;
    acc.aborts.conflict += s.aborts.conflict;
    acc.aborts.capacity += s.aborts.capacity;
    acc.aborts.lock_held += s.aborts.lock_held;
    acc.aborts.mutex_mismatch += s.aborts.mutex_mismatch;
    acc.aborts.unfriendly += s.aborts.unfriendly;
    acc.slowpath_acquisitions += s.slowpath_acquisitions;
    acc.plain_acquisitions += s.plain_acquisitions;
    acc.decisions.transactional += s.decisions.transactional;
    acc.decisions.lock += s.decisions.lock;
    acc.decay_resets += s.decay_resets;
    acc.bypassed += s.bypassed;
}
