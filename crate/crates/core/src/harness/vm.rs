//! Interpreter for compiled programs. One call to [`Machine::step`] runs a
//! worker from one statement boundary to the next.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::Serialize;

use super::compile::{Compiled, Instr, ProcId};
use crate::frontend::ast::{BinOp, ExprId, UnOp};
use crate::frontend::resolve::{LockOp, MutexExprId, Type};
use crate::pointsto::AbsLoc;
use crate::runtime::{opti_addr, Cell, Config, Engine, Key, LockStep, Trap, WorkerId, Word};

const MAX_FRAMES: usize = 4096;
const MAX_INSTRS_PER_STEP: usize = 1 << 20;

/// How a run ended.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Panic(String),
    Deadlock,
    StepLimit,
}

/// A lock call site whose runtime mutex was observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    Mutex(MutexExprId),
    Opti(ExprId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wait {
    Lock { mutex: Cell, read: bool },
    /// Waiting for every descendant worker to finish.
    Join,
}

#[derive(Clone, Debug)]
struct Frame {
    proc: ProcId,
    pc: usize,
    slots: Vec<Option<Cell>>,
    stack: Vec<Word>,
    ret: Vec<Word>,
    defers: Vec<(Instr, Vec<Word>)>,
    /// Result is dropped on return (deferred calls).
    discard: bool,
}

#[derive(Clone, Debug)]
pub struct Worker {
    pub id: WorkerId,
    pub parent: Option<WorkerId>,
    pub done: bool,
    pub wait: Option<Wait>,
    frames: Vec<Frame>,
    /// Control state at the outermost FastLock of the active transaction.
    checkpoint: Option<Checkpoint>,
}

#[derive(Clone, Debug)]
struct Checkpoint {
    frames: Vec<Frame>,
    words: Vec<Word>,
    versions: Vec<u64>,
}

#[derive(Clone, Debug)]
struct Allocation {
    base: Cell,
    len: u32,
    origin: AbsLoc,
    ty: Type,
}

/// Result of one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepInfo {
    /// The step touched state other workers can observe.
    pub visible: bool,
    /// The program ended.
    pub halt: Option<Outcome>,
}

enum Flow {
    Next,
    Goto(usize),
    Call(Frame),
    Return,
    Block(Wait),
    Pending,
}

enum Stop {
    Trap(Trap),
    Halt(Outcome),
}

impl From<Trap> for Stop {
    fn from(t: Trap) -> Self {
        Stop::Trap(t)
    }
}

type X<T = Flow> = Result<T, Stop>;

const NIL_DEREF: &str = "runtime error: invalid memory address or nil pointer dereference";

#[derive(Clone)]
pub struct Machine<'c> {
    pub prog: &'c Compiled,
    pub engine: Engine,
    pub workers: Vec<Worker>,
    pub globals: Vec<Cell>,
    pub output: Vec<String>,
    /// Runtime mutex origins seen at each lock call site.
    pub observations: BTreeSet<(Site, AbsLoc)>,
    /// Mutual-exclusion or rollback violations, in order of detection.
    pub violations: Vec<String>,
    pub steps: u64,
    allocs: Vec<Allocation>,
    /// Owning worker of cells only that worker can reach.
    private: Vec<Option<WorkerId>>,
    visible: bool,
}

impl<'c> Machine<'c> {
    pub fn new(prog: &'c Compiled, config: Config) -> Self {
        let mut m = Machine {
            prog,
            engine: Engine::new(config),
            workers: Vec::new(),
            globals: Vec::new(),
            output: Vec::new(),
            observations: BTreeSet::new(),
            violations: Vec::new(),
            steps: 0,
            allocs: Vec::new(),
            private: Vec::new(),
            visible: false,
        };
        for &v in &prog.tp.res.globals {
            let info = &prog.tp.res.vars[v];
            let c = m.alloc(&info.ty.clone(), AbsLoc::Var(info.decl.start), None);
            m.globals.push(c);
        }
        let init = &prog.procs[prog.init];
        m.workers.push(Worker {
            id: 0,
            parent: None,
            done: false,
            wait: None,
            frames: vec![Frame {
                proc: prog.init,
                pc: 0,
                slots: vec![None; init.slot_vars.len()],
                stack: Vec::new(),
                ret: Vec::new(),
                defers: Vec::new(),
                discard: true,
            }],
            checkpoint: None,
        });
        m
    }

    fn alloc(&mut self, ty: &Type, origin: AbsLoc, owner: Option<WorkerId>) -> Cell {
        let words = self.prog.layouts.zero(ty);
        self.alloc_words(words, ty, origin, owner)
    }

    fn alloc_words(&mut self, words: Vec<Word>, ty: &Type, origin: AbsLoc, owner: Option<WorkerId>) -> Cell {
        let len = words.len() as u32;
        let base = self.engine.alloc(words);
        self.private.extend(std::iter::repeat(owner).take(len as usize));
        self.allocs.push(Allocation {
            base,
            len,
            origin,
            ty: ty.clone(),
        });
        base
    }

    /// Abstract location naming the storage of a cell.
    pub fn origin(&self, c: Cell) -> Option<AbsLoc> {
        let i = self.allocs.partition_point(|a| a.base <= c).checked_sub(1)?;
        let a = &self.allocs[i];
        if c.0 >= a.base.0 + a.len {
            return None;
        }
        let (path, _) = self.prog.layouts.path(&a.ty, c.0 - a.base.0);
        Some(a.origin.extend(&path))
    }

    pub fn main_done(&self) -> bool {
        self.workers[0].done
    }

    /// Whether `w` can take a step now.
    pub fn enabled(&self, w: WorkerId) -> bool {
        let wk = &self.workers[w];
        if wk.done {
            return false;
        }
        match wk.wait {
            None => true,
            Some(Wait::Lock { mutex, read }) => self.engine.can_take(w, mutex, read),
            Some(Wait::Join) => self.descendants_done(w),
        }
    }

    fn descendants_done(&self, w: WorkerId) -> bool {
        self.workers.iter().filter(|o| o.id != w && self.descends_from(o.id, w)).all(|o| o.done)
    }

    fn descends_from(&self, mut o: WorkerId, w: WorkerId) -> bool {
        while let Some(p) = self.workers[o].parent {
            if p == w {
                return true;
            }
            o = p;
        }
        false
    }

    pub fn enabled_workers(&self) -> Vec<WorkerId> {
        (0..self.workers.len()).filter(|&w| self.enabled(w)).collect()
    }

    /// Human-readable account of who waits for what.
    pub fn deadlock_report(&self) -> String {
        let mut parts = Vec::new();
        for wk in self.workers.iter().filter(|w| !w.done) {
            match wk.wait {
                Some(Wait::Lock { mutex, read }) => {
                    let holder = match self.engine.mem.get(mutex) {
                        Word::Mutex(mw) => match mw.writer {
                            Some(h) => format!("held by worker {h}"),
                            None => format!("{} readers", mw.readers),
                        },
                        _ => "not a mutex".into(),
                    };
                    let mode = if read { "read" } else { "write" };
                    parts.push(format!("worker {} waits to {mode}-lock {mutex} ({holder})", wk.id));
                }
                Some(Wait::Join) => parts.push(format!("worker {} waits in join", wk.id)),
                None => parts.push(format!("worker {} is runnable", wk.id)),
            }
        }
        parts.join("; ")
    }

    // ---- memory access with visibility tracking ----

    fn touch(&mut self, w: WorkerId, c: Cell) {
        if self.private.get(c.0 as usize).copied().flatten() != Some(w) {
            self.visible = true;
        }
    }

    fn read(&mut self, w: WorkerId, c: Cell) -> X<Word> {
        if !self.engine.mem.contains(c) {
            return Err(self.fault(w, NIL_DEREF));
        }
        self.touch(w, c);
        Ok(self.engine.read(w, c)?)
    }

    fn write(&mut self, w: WorkerId, c: Cell, v: Word) -> X<()> {
        if !self.engine.mem.contains(c) {
            return Err(self.fault(w, NIL_DEREF));
        }
        self.touch(w, c);
        Ok(self.engine.write(w, c, v)?)
    }

    fn fault(&mut self, w: WorkerId, msg: &str) -> Stop {
        Stop::Trap(self.engine.fault(w, msg))
    }

    fn unfriendly(&mut self, w: WorkerId) -> X<()> {
        self.visible = true;
        Ok(self.engine.unfriendly(w)?)
    }

    fn ptr(&mut self, w: WorkerId, v: &Word) -> X<Cell> {
        match v {
            Word::Ptr(c) => Ok(*c),
            _ => Err(self.fault(w, NIL_DEREF)),
        }
    }

    // ---- stepping ----

    fn frame(&mut self, w: WorkerId) -> &mut Frame {
        self.workers[w].frames.last_mut().expect("live worker has a frame")
    }

    fn pop(&mut self, w: WorkerId) -> Word {
        self.frame(w).stack.pop().expect("operand stack underflow")
    }

    fn pop_n(&mut self, w: WorkerId, n: u32) -> Vec<Word> {
        let st = &mut self.frame(w).stack;
        let at = st.len() - n as usize;
        st.split_off(at)
    }

    fn push(&mut self, w: WorkerId, v: Word) {
        self.frame(w).stack.push(v);
    }

    /// Run worker `w` up to its next statement boundary.
    pub fn step(&mut self, w: WorkerId) -> StepInfo {
        self.steps += 1;
        self.visible = false;
        self.workers[w].wait = None;
        let halt = match self.run(w) {
            Ok(()) => None,
            Err(Stop::Halt(o)) => Some(o),
            Err(Stop::Trap(Trap::Fault(msg))) => Some(Outcome::Panic(msg)),
            Err(Stop::Trap(Trap::Aborted(_))) => None,
        };
        self.after_step(w);
        let halt = halt.or_else(|| self.main_done().then_some(Outcome::Completed));
        StepInfo {
            visible: self.visible,
            halt,
        }
    }

    fn after_step(&mut self, w: WorkerId) {
        for (victim, _) in self.engine.take_aborted() {
            self.visible = true;
            self.rollback(victim);
        }
        for v in self.engine.exclusion_violations() {
            self.violations.push(v);
        }
        if !self.engine.in_tx(w) {
            self.workers[w].checkpoint = None;
        }
    }

    /// Return an aborted worker to its checkpoint and check that memory
    /// shows nothing of the aborted transaction.
    fn rollback(&mut self, w: WorkerId) {
        let Some(cp) = self.workers[w].checkpoint.take() else {
            self.violations.push(format!("worker {w} aborted without a checkpoint"));
            return;
        };
        for (i, (old, ver)) in cp.words.iter().zip(&cp.versions).enumerate() {
            let c = Cell(i as u32);
            if self.engine.mem.version(c) == *ver && self.engine.mem.get(c) != old {
                self.violations.push(format!("cell {c} changed by an aborted transaction"));
            }
        }
        let wk = &mut self.workers[w];
        wk.frames = cp.frames;
        wk.wait = None;
    }

    fn checkpoint_candidate(&self, w: WorkerId) -> Option<Checkpoint> {
        if self.engine.in_tx(w) {
            return None;
        }
        let (words, versions) = self.engine.mem.snapshot();
        Some(Checkpoint {
            frames: self.workers[w].frames.clone(),
            words,
            versions,
        })
    }

    /// Keep the candidate if the call began a transaction, even one that
    /// already aborted.
    fn keep_checkpoint(&mut self, w: WorkerId, cand: Option<Checkpoint>, flow: &X) {
        let began = self.engine.in_tx(w) || matches!(flow, Err(Stop::Trap(Trap::Aborted(_))));
        if began && self.workers[w].checkpoint.is_none() {
            self.workers[w].checkpoint = cand;
        }
    }

    fn run(&mut self, w: WorkerId) -> X<()> {
        let mut executed = 0usize;
        loop {
            if executed > MAX_INSTRS_PER_STEP {
                return Err(Stop::Halt(Outcome::Panic("statement did not terminate".into())));
            }
            let f = self.workers[w].frames.last().expect("frame");
            let code = &self.prog.procs[f.proc].code;
            let instr = &code[f.pc];
            let pending_defer = matches!(instr, Instr::Ret) && !f.defers.is_empty();
            if executed > 0 && (matches!(instr, Instr::Stmt(_)) || pending_defer) {
                return Ok(());
            }
            executed += 1;
            if pending_defer {
                return self.run_defer(w);
            }
            let instr = instr.clone();
            let is_opti_lock = matches!(&instr, Instr::Opti { op, .. } if op.is_lock());
            let cand = if is_opti_lock { self.checkpoint_candidate(w) } else { None };
            let flow = self.exec(w, &instr);
            if is_opti_lock {
                self.keep_checkpoint(w, cand, &flow);
            }
            match flow? {
                Flow::Next => self.frame(w).pc += 1,
                Flow::Goto(t) => self.frame(w).pc = t,
                Flow::Call(fr) => {
                    self.frame(w).pc += 1;
                    self.push_frame(w, fr)?;
                }
                Flow::Return => {
                    if self.ret(w)? {
                        return Ok(());
                    }
                }
                Flow::Block(wait) => {
                    self.workers[w].wait = Some(wait);
                    return Ok(());
                }
                Flow::Pending => return Ok(()),
            }
        }
    }

    fn push_frame(&mut self, w: WorkerId, fr: Frame) -> X<()> {
        if self.workers[w].frames.len() >= MAX_FRAMES {
            return Err(self.fault(w, "runtime error: stack overflow"));
        }
        self.workers[w].frames.push(fr);
        Ok(())
    }

    /// Run the most recent deferred call of the returning frame.
    fn run_defer(&mut self, w: WorkerId) -> X<()> {
        let (instr, args) = self.frame(w).defers.last().cloned().expect("deferred call");
        let is_opti_lock = matches!(&instr, Instr::Opti { op, .. } if op.is_lock());
        let cand = if is_opti_lock { self.checkpoint_candidate(w) } else { None };
        let mark = self.frame(w).stack.len();
        self.frame(w).stack.extend(args);
        let flow = self.exec(w, &instr);
        if is_opti_lock {
            self.keep_checkpoint(w, cand, &flow);
        }
        let flow = flow?;
        self.frame(w).stack.truncate(mark);
        match flow {
            Flow::Next => {
                self.frame(w).defers.pop();
            }
            Flow::Call(mut fr) => {
                self.frame(w).defers.pop();
                fr.discard = true;
                self.push_frame(w, fr)?;
            }
            Flow::Block(wait) => self.workers[w].wait = Some(wait),
            Flow::Pending => {}
            Flow::Goto(_) | Flow::Return => unreachable!("deferred control flow"),
        }
        Ok(())
    }

    /// Pop the current frame; true when the worker finished.
    fn ret(&mut self, w: WorkerId) -> X<bool> {
        let fr = self.workers[w].frames.pop().expect("frame");
        if self.workers[w].frames.is_empty() {
            if self.engine.in_tx(w) {
                self.workers[w].frames.push(fr);
                return Err(self.fault(w, "worker exited inside a transaction"));
            }
            self.workers[w].done = true;
            self.visible = true;
            return Ok(true);
        }
        if !fr.discard {
            self.frame(w).stack.extend(fr.ret);
        }
        Ok(false)
    }

    fn new_frame(&mut self, w: WorkerId, proc: ProcId, captures: Vec<Option<Cell>>, args: Vec<Word>) -> Frame {
        let p = &self.prog.procs[proc];
        let mut slots = vec![None; p.slot_vars.len()];
        slots[..captures.len()].clone_from_slice(&captures);
        let mut args = args.into_iter();
        for &slot in &p.params {
            let v = p.slot_vars[slot as usize];
            let info = &self.prog.tp.res.vars[v];
            let ty = info.ty.clone();
            let n = self.prog.layouts.size(&ty) as usize;
            let words: Vec<Word> = args.by_ref().take(n).collect();
            let owner = self.prog.is_private(v).then_some(w);
            slots[slot as usize] = Some(self.alloc_words(words, &ty, AbsLoc::Var(info.decl.start), owner));
        }
        Frame {
            proc,
            pc: 0,
            slots,
            stack: Vec::new(),
            ret: Vec::new(),
            defers: Vec::new(),
            discard: false,
        }
    }

    fn exec(&mut self, w: WorkerId, instr: &Instr) -> X {
        match instr {
            Instr::Stmt(_) => {}
            Instr::Const(v) => self.push(w, v.clone()),
            Instr::Local(s) => {
                let c = self.frame(w).slots[*s as usize].expect("declared variable");
                self.push(w, Word::Ptr(c));
            }
            Instr::Global(i) => {
                let c = self.globals[*i as usize];
                self.push(w, Word::Ptr(c));
            }
            Instr::Decl { slot, var } => {
                let info = &self.prog.tp.res.vars[*var];
                let owner = self.prog.is_private(*var).then_some(w);
                let c = self.alloc(&info.ty.clone(), AbsLoc::Var(info.decl.start), owner);
                self.frame(w).slots[*slot as usize] = Some(c);
            }
            Instr::Load(n) => {
                let a = self.pop(w);
                let c = self.ptr(w, &a)?;
                for i in 0..*n {
                    let v = self.read(w, c.offset(i))?;
                    self.push(w, v);
                }
            }
            Instr::Store(n) => {
                let vals = self.pop_n(w, *n);
                let a = self.pop(w);
                let c = self.ptr(w, &a)?;
                for (i, v) in vals.into_iter().enumerate() {
                    self.write(w, c.offset(i as u32), v)?;
                }
            }
            Instr::Field(off) => {
                let a = self.pop(w);
                let c = self.ptr(w, &a)?;
                self.push(w, Word::Ptr(c.offset(*off)));
            }
            Instr::Pick { off, size, total } => {
                let vals = self.pop_n(w, *total);
                self.frame(w)
                    .stack
                    .extend(vals.into_iter().skip(*off as usize).take(*size as usize));
            }
            Instr::Alloc { ty, origin, shared } => {
                let owner = (!shared).then_some(w);
                let c = self.alloc(ty, origin.clone(), owner);
                self.push(w, Word::Ptr(c));
            }
            Instr::Spill { ty, origin } => {
                let n = self.prog.layouts.size(ty);
                let vals = self.pop_n(w, n);
                let c = self.alloc_words(vals, ty, origin.clone(), Some(w));
                self.push(w, Word::Ptr(c));
            }
            Instr::MapNew { origin } => {
                let c = self.alloc_words(vec![Word::Map(Arc::default())], &Type::Int, origin.clone(), None);
                self.push(w, Word::Ptr(c));
            }
            Instr::Index { zero } => {
                let k = self.pop(w);
                let m = self.pop(w);
                let v = match m {
                    Word::Ptr(c) => {
                        let map = self.read(w, c)?;
                        lookup(&map, &k).unwrap_or_else(|| zero.clone())
                    }
                    _ => zero.clone(),
                };
                self.push(w, v);
            }
            Instr::MapStore => {
                let v = self.pop(w);
                let k = self.pop(w);
                let m = self.pop(w);
                let Word::Ptr(c) = m else {
                    return Err(self.fault(w, "assignment to entry in nil map"));
                };
                let mut map = self.read(w, c)?;
                if let (Word::Map(entries), Some(key)) = (&mut map, k.as_key()) {
                    Arc::make_mut(entries).insert(key, v);
                }
                self.write(w, c, map)?;
            }
            Instr::Delete => {
                let k = self.pop(w);
                let m = self.pop(w);
                if let Word::Ptr(c) = m {
                    let mut map = self.read(w, c)?;
                    if let (Word::Map(entries), Some(key)) = (&mut map, k.as_key()) {
                        if entries.contains_key(&key) {
                            Arc::make_mut(entries).remove(&key);
                            self.write(w, c, map)?;
                        }
                    }
                }
            }
            Instr::Len => {
                let v = self.pop(w);
                let n = match v {
                    Word::Str(s) => s.len() as i64,
                    Word::Ptr(c) => match self.read(w, c)? {
                        Word::Map(m) => m.len() as i64,
                        _ => 0,
                    },
                    _ => 0,
                };
                self.push(w, Word::Int(n));
            }
            Instr::Un(op) => {
                let v = self.pop(w);
                let r = match (op, v) {
                    (UnOp::Not, Word::Bool(b)) => Word::Bool(!b),
                    (UnOp::Neg, Word::Int(i)) => Word::Int(i.wrapping_neg()),
                    (_, v) => return Err(self.fault(w, &format!("bad operand {v:?} for {op:?}"))),
                };
                self.push(w, r);
            }
            Instr::Bin(op) => {
                let b = self.pop(w);
                let a = self.pop(w);
                let r = binary(*op, a, b).map_err(|m| self.fault(w, &m))?;
                self.push(w, r);
            }
            Instr::Dup(n) => {
                let st = &mut self.frame(w).stack;
                let at = st.len() - *n as usize;
                let top: Vec<Word> = st[at..].to_vec();
                st.extend(top);
            }
            Instr::Pop(n) => {
                self.pop_n(w, *n);
            }
            Instr::Jump(t) => return Ok(Flow::Goto(*t)),
            Instr::JumpIfFalse(t) | Instr::JumpIfTrue(t) => {
                let want = matches!(instr, Instr::JumpIfTrue(_));
                let v = self.pop(w);
                if v.as_bool() == Some(want) {
                    return Ok(Flow::Goto(*t));
                }
            }
            Instr::Call { proc, args } => {
                let args = self.pop_n(w, *args);
                let fr = self.new_frame(w, *proc, Vec::new(), args);
                return Ok(Flow::Call(fr));
            }
            Instr::SetRet(n) => {
                let v = self.pop_n(w, *n);
                self.frame(w).ret = v;
            }
            Instr::Ret => return Ok(Flow::Return),
            Instr::Defer { call, args } => {
                let args = self.pop_n(w, *args);
                self.frame(w).defers.push(((**call).clone(), args));
            }
            Instr::Spawn { proc, captures, args } => {
                self.unfriendly(w)?;
                let args = self.pop_n(w, *args);
                let caps: Vec<Option<Cell>> = captures.iter().map(|s| self.frame(w).slots[*s as usize]).collect();
                let id = self.workers.len();
                let fr = self.new_frame(id, *proc, caps, args);
                self.workers.push(Worker {
                    id,
                    parent: Some(w),
                    done: false,
                    wait: None,
                    frames: vec![fr],
                    checkpoint: None,
                });
            }
            Instr::Join => {
                self.unfriendly(w)?;
                if !self.descendants_done(w) {
                    return Ok(Flow::Block(Wait::Join));
                }
            }
            Instr::Print(n) => {
                self.unfriendly(w)?;
                let vals = self.pop_n(w, *n);
                let line = vals
                    .iter()
                    .map(|v| match v {
                        // Map references print their contents.
                        Word::Ptr(c) => match self.engine.peek(w, *c) {
                            m @ Word::Map(_) => render_word(m),
                            _ => "<ptr>".to_string(),
                        },
                        v => render_word(v),
                    })
                    .collect::<Vec<_>>()
                    .join(" ");
                self.output.push(line);
            }
            Instr::Panic => {
                self.unfriendly(w)?;
                let v = self.pop(w);
                return Err(Stop::Halt(Outcome::Panic(render_word(&v))));
            }
            Instr::Extern { name, args, ret } => {
                self.unfriendly(w)?;
                self.pop_n(w, *args);
                match ret {
                    Type::Ptr(inner) => {
                        let c = self.alloc(inner, AbsLoc::Synthetic(format!("extern:{name}")), None);
                        self.push(w, Word::Ptr(c));
                    }
                    t => {
                        let z = self.prog.layouts.zero(t);
                        self.frame(w).stack.extend(z);
                    }
                }
            }
            Instr::Mutex { op, site } => {
                self.visible = true;
                let top = self.frame(w).stack.last().cloned().expect("mutex operand");
                let m = self.ptr(w, &top)?;
                if let Some(o) = self.origin(m) {
                    self.observations.insert((Site::Mutex(*site), o));
                }
                let read = op.is_read();
                if op.is_lock() {
                    match self.engine.lock(w, m, read)? {
                        LockStep::Wait { mutex, read } => return Ok(Flow::Block(Wait::Lock { mutex, read })),
                        LockStep::Pending => return Ok(Flow::Pending),
                        LockStep::Fast | LockStep::Slow => {}
                    }
                } else {
                    self.engine.unlock(w, m, read)?;
                }
                self.pop(w);
            }
            Instr::Opti { op, site, call } => return self.opti(w, *op, *site, *call),
        }
        Ok(Flow::Next)
    }

    fn opti(&mut self, w: WorkerId, op: LockOp, site: u32, call: ExprId) -> X {
        self.visible = true;
        let st = &self.frame(w).stack;
        let (ow, mw) = (st[st.len() - 2].clone(), st[st.len() - 1].clone());
        let opti = self.ptr(w, &ow)?;
        let m = self.ptr(w, &mw)?;
        if let Some(o) = self.origin(m) {
            self.observations.insert((Site::Opti(call), o));
        }
        let ctx = opti_addr(w, site);
        let read = op.is_read();
        if op.is_lock() {
            match self.engine.fast_lock(w, opti, ctx, m, read)? {
                LockStep::Wait { mutex, read } => return Ok(Flow::Block(Wait::Lock { mutex, read })),
                LockStep::Pending => return Ok(Flow::Pending),
                LockStep::Fast | LockStep::Slow => {}
            }
        } else {
            self.engine.fast_unlock(w, opti, ctx, m, read)?;
        }
        self.pop_n(w, 2);
        Ok(Flow::Next)
    }

    /// Committed values of the globals, in declaration order.
    pub fn global_cells(&self) -> Vec<(String, Type, Cell)> {
        self.prog
            .tp
            .res
            .globals
            .iter()
            .zip(&self.globals)
            .map(|(v, c)| {
                let info = &self.prog.tp.res.vars[*v];
                (info.name.clone(), info.ty.clone(), *c)
            })
            .collect()
    }
}

fn lookup(map: &Word, k: &Word) -> Option<Word> {
    match map {
        Word::Map(m) => m.get(&k.as_key()?).cloned(),
        _ => None,
    }
}

fn binary(op: BinOp, a: Word, b: Word) -> Result<Word, String> {
    use Word::*;
    Ok(match (op, a, b) {
        (BinOp::Eq, a, b) => Bool(a == b),
        (BinOp::Ne, a, b) => Bool(a != b),
        (BinOp::Add, Int(x), Int(y)) => Int(x.wrapping_add(y)),
        (BinOp::Sub, Int(x), Int(y)) => Int(x.wrapping_sub(y)),
        (BinOp::Mul, Int(x), Int(y)) => Int(x.wrapping_mul(y)),
        (BinOp::Div | BinOp::Rem, Int(_), Int(0)) => return Err("runtime error: integer divide by zero".into()),
        (BinOp::Div, Int(x), Int(y)) => Int(x.wrapping_div(y)),
        (BinOp::Rem, Int(x), Int(y)) => Int(x.wrapping_rem(y)),
        (BinOp::Lt, Int(x), Int(y)) => Bool(x < y),
        (BinOp::Le, Int(x), Int(y)) => Bool(x <= y),
        (BinOp::Gt, Int(x), Int(y)) => Bool(x > y),
        (BinOp::Ge, Int(x), Int(y)) => Bool(x >= y),
        (BinOp::Add, Str(x), Str(y)) => Str(format!("{x}{y}").into()),
        (BinOp::Lt, Str(x), Str(y)) => Bool(x < y),
        (BinOp::Le, Str(x), Str(y)) => Bool(x <= y),
        (BinOp::Gt, Str(x), Str(y)) => Bool(x > y),
        (BinOp::Ge, Str(x), Str(y)) => Bool(x >= y),
        (BinOp::And, Bool(x), Bool(y)) => Bool(x && y),
        (BinOp::Or, Bool(x), Bool(y)) => Bool(x || y),
        (op, a, b) => return Err(format!("bad operands {a:?} {op} {b:?}")),
    })
}

/// Printed form of a word. Addresses are not printed, so output does not
/// depend on allocation order.
pub fn render_word(w: &Word) -> String {
    match w {
        Word::Nil => "<nil>".into(),
        Word::Int(i) => i.to_string(),
        Word::Bool(b) => b.to_string(),
        Word::Str(s) => s.to_string(),
        Word::Ptr(_) => "<ptr>".into(),
        Word::Map(m) => {
            let items: Vec<String> = m.iter().map(|(k, v)| format!("{}:{}", render_key(k), render_word(v))).collect();
            format!("map[{}]", items.join(" "))
        }
        Word::Mutex(m) => if m.is_free() { "{unlocked}" } else { "{locked}" }.into(),
        Word::Opti(_) => "{optilock}".into(),
    }
}

fn render_key(k: &Key) -> String {
    match k {
        Key::Str(s) => s.to_string(),
        k => k.to_string(),
    }
}
