//! Control-flow graphs with LU-point block boundaries, dominance, and the
//! region tree.

pub mod dom;
pub mod dot;
pub mod pst;
pub mod splice;

use std::collections::HashMap;

use crate::frontend::ast::{Block, Else, ExprKind, Stmt, StmtId, StmtKind};
use crate::frontend::resolve::{BodyId, Builtin, CallTarget, LockOp, MutexExprId};
use crate::frontend::TypedProgram;

pub use dom::DomTree;
pub use pst::{Region, RegionId, RegionKind};
pub use splice::{guarded_blocks, splice_straightline, PrePair, SpliceState};

pub type BlockId = usize;
pub type LuId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Item {
    /// A straight-line statement (or, for `defer`, its registration).
    Stmt(StmtId),
    /// Evaluation of an `if` or `for` condition.
    Cond(StmtId),
    /// A lock or unlock point.
    Lu(LuId),
    /// Execution of a deferred non-unlock call at function exit.
    DeferredCall(StmtId),
}

#[derive(Clone, Debug, Default)]
pub struct BasicBlock {
    pub items: Vec<Item>,
    pub succs: Vec<BlockId>,
    pub preds: Vec<BlockId>,
    /// False once pruned as unreachable.
    pub live: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LuPoint {
    pub mutex: MutexExprId,
    pub op: LockOp,
    pub block: BlockId,
    /// Stand-in for a deferred unlock, placed at function exit.
    pub synthetic: bool,
}

#[derive(Clone, Debug)]
pub struct Cfg {
    pub body: BodyId,
    pub blocks: Vec<BasicBlock>,
    pub entry: BlockId,
    pub exit: BlockId,
    pub lu_points: Vec<LuPoint>,
    pub regions: Vec<Region>,
    /// Blocks removed because no path from entry reaches them.
    pub unreachable: Vec<BlockId>,
    /// Number of deferred unlocks in this body.
    pub deferred_unlocks: usize,
    /// Set when the body has more than one deferred unlock, or one that is
    /// not at the top level of the body; such bodies are not transformed.
    pub defer_rejected: bool,
    pub dom: DomTree,
    pub pdom: DomTree,
}

impl Cfg {
    pub fn live_blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        (0..self.blocks.len()).filter(|&b| self.blocks[b].live)
    }

    pub fn succs(&self) -> Vec<Vec<BlockId>> {
        self.blocks.iter().map(|b| b.succs.clone()).collect()
    }

    /// Reversed edge relation, used for post-dominance.
    pub fn preds(&self) -> Vec<Vec<BlockId>> {
        self.blocks.iter().map(|b| b.preds.clone()).collect()
    }

    pub fn lu_at_block(&self, b: BlockId) -> Option<LuId> {
        match self.blocks[b].items.as_slice() {
            [Item::Lu(l)] => Some(*l),
            _ => None,
        }
    }

    /// Innermost region containing block `b`.
    pub fn innermost_region(&self, b: BlockId) -> RegionId {
        let mut best = 0;
        for (i, r) in self.regions.iter().enumerate() {
            if r.contains(b) && r.depth >= self.regions[best].depth {
                best = i;
            }
        }
        best
    }
}

/// CFGs for every function and closure body, in body order.
pub fn build_all(tp: &TypedProgram) -> Vec<Cfg> {
    tp.res.bodies.keys().map(|b| lower(tp, *b)).collect()
}

/// Lower one function or closure body.
pub fn lower(tp: &TypedProgram, body: BodyId) -> Cfg {
    let mut b = Builder {
        tp,
        blocks: Vec::new(),
        cur: 0,
        exit_head: 0,
        lu_points: Vec::new(),
        regions: Vec::new(),
        deferred: Vec::new(),
        nesting: 0,
        defer_rejected: false,
    };
    let entry = b.new_block();
    b.exit_head = b.new_block();
    let first = b.new_block();
    b.edge(entry, first);
    b.cur = first;
    let block = tp.body_block(body);
    b.block(block);
    b.edge(b.cur, b.exit_head);
    // Deferred calls run in reverse registration order.
    let mut tail = b.exit_head;
    let deferred = std::mem::take(&mut b.deferred);
    let mut unlock_count = 0;
    for d in deferred.iter().rev() {
        let blk = b.new_block();
        b.edge(tail, blk);
        match d {
            Deferred::Unlock(m, op) => {
                unlock_count += 1;
                let id = b.lu_points.len();
                b.lu_points.push(LuPoint {
                    mutex: *m,
                    op: *op,
                    block: blk,
                    synthetic: true,
                });
                b.blocks[blk].items.push(Item::Lu(id));
            }
            Deferred::Call(s) => b.blocks[blk].items.push(Item::DeferredCall(*s)),
        }
        tail = blk;
    }
    let exit = b.new_block();
    b.edge(tail, exit);
    let n = b.blocks.len();
    let defer_rejected = b.defer_rejected || unlock_count > 1;
    let mut regions = std::mem::take(&mut b.regions);
    regions.push(Region::new(RegionKind::Function, entry, exit, (0..n).collect(), None));
    let mut blocks = b.blocks;
    let lu_points = b.lu_points;

    // Prune blocks unreachable from entry.
    let mut live = vec![false; n];
    let mut stack = vec![entry];
    live[entry] = true;
    while let Some(v) = stack.pop() {
        for &w in &blocks[v].succs {
            if !live[w] {
                live[w] = true;
                stack.push(w);
            }
        }
    }
    let mut unreachable = Vec::new();
    for v in 0..n {
        blocks[v].live = live[v];
        if !live[v] {
            if !blocks[v].items.is_empty() {
                unreachable.push(v);
            }
            blocks[v].succs.clear();
        }
    }
    for blk in blocks.iter_mut() {
        blk.preds.retain(|p| live[*p]);
    }
    let succs: Vec<Vec<BlockId>> = blocks.iter().map(|b| b.succs.clone()).collect();
    let preds: Vec<Vec<BlockId>> = blocks.iter().map(|b| b.preds.clone()).collect();
    let dom = DomTree::new(n, entry, &succs);
    let pdom = DomTree::new(n, exit, &preds);
    let regions = pst::finalize(regions, &blocks);
    Cfg {
        body,
        blocks,
        entry,
        exit,
        lu_points,
        regions,
        unreachable,
        deferred_unlocks: unlock_count,
        defer_rejected,
        dom,
        pdom,
    }
}

enum Deferred {
    Unlock(MutexExprId, LockOp),
    Call(StmtId),
}

struct Builder<'a> {
    tp: &'a TypedProgram,
    blocks: Vec<BasicBlock>,
    cur: BlockId,
    exit_head: BlockId,
    lu_points: Vec<LuPoint>,
    regions: Vec<Region>,
    deferred: Vec<Deferred>,
    /// Depth of enclosing if/for constructs.
    nesting: usize,
    defer_rejected: bool,
}

impl Builder<'_> {
    fn new_block(&mut self) -> BlockId {
        self.blocks.push(BasicBlock {
            live: true,
            ..Default::default()
        });
        self.blocks.len() - 1
    }

    fn edge(&mut self, a: BlockId, b: BlockId) {
        if !self.blocks[a].succs.contains(&b) {
            self.blocks[a].succs.push(b);
            self.blocks[b].preds.push(a);
        }
    }

    /// Start a fresh block reached from the current one.
    fn cont(&mut self) -> BlockId {
        let n = self.new_block();
        self.edge(self.cur, n);
        self.cur = n;
        n
    }

    fn block(&mut self, b: &Block) {
        for s in &b.stmts {
            self.stmt(s);
        }
    }

    fn mutex_call(&self, s: &Stmt) -> Option<MutexExprId> {
        let e = match &s.kind {
            StmtKind::Expr(e) | StmtKind::Defer(e) => e,
            _ => return None,
        };
        match self.tp.res.calls.get(&e.id) {
            Some(CallTarget::MutexOp(m)) => Some(*m),
            _ => None,
        }
    }

    fn region(&mut self, kind: RegionKind, entry: BlockId, exit: BlockId, stmts: &[&Stmt]) {
        if stmts.iter().any(|s| exits_function(self.tp, s)) {
            return;
        }
        self.regions
            .push(Region::new(kind, entry, exit, (entry..=exit).collect(), None));
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Expr(e) => {
                if let Some(m) = self.mutex_call(s) {
                    let op = self.tp.res.mutex_exprs[m].op;
                    let blk = self.cont();
                    let id = self.lu_points.len();
                    self.lu_points.push(LuPoint {
                        mutex: m,
                        op,
                        block: blk,
                        synthetic: false,
                    });
                    self.blocks[blk].items.push(Item::Lu(id));
                    self.cont();
                    return;
                }
                self.blocks[self.cur].items.push(Item::Stmt(s.id));
                if matches!(self.tp.res.calls.get(&e.id), Some(CallTarget::Builtin(Builtin::Panic))) {
                    self.edge(self.cur, self.exit_head);
                    self.cur = self.new_block();
                }
            }
            StmtKind::Defer(_) => {
                self.blocks[self.cur].items.push(Item::Stmt(s.id));
                match self.mutex_call(s) {
                    Some(m) => {
                        if self.nesting > 0 {
                            self.defer_rejected = true;
                        }
                        let op = self.tp.res.mutex_exprs[m].op;
                        self.deferred.push(Deferred::Unlock(m, op));
                    }
                    None => self.deferred.push(Deferred::Call(s.id)),
                }
            }
            StmtKind::Return(_) => {
                self.blocks[self.cur].items.push(Item::Stmt(s.id));
                self.edge(self.cur, self.exit_head);
                self.cur = self.new_block();
            }
            StmtKind::If { then, els, .. } => {
                self.nesting += 1;
                let cond = self.cont();
                self.blocks[cond].items.push(Item::Cond(s.id));
                let then_head = self.cont();
                self.block(then);
                let then_tail = self.cont();
                let then_stmts: Vec<&Stmt> = then.stmts.iter().collect();
                self.region(RegionKind::Arm, then_head, then_tail, &then_stmts);
                let else_tail = match els {
                    Some(e) => {
                        self.cur = cond;
                        let else_head = self.cont();
                        let else_stmts: Vec<&Stmt> = match e {
                            Else::Block(b) => {
                                self.block(b);
                                b.stmts.iter().collect()
                            }
                            Else::If(inner) => {
                                self.stmt(inner);
                                vec![inner.as_ref()]
                            }
                        };
                        let tail = self.cont();
                        self.region(RegionKind::Arm, else_head, tail, &else_stmts);
                        tail
                    }
                    None => cond,
                };
                let join = self.new_block();
                self.edge(then_tail, join);
                self.edge(else_tail, join);
                self.cur = join;
                self.region(RegionKind::If, cond, join, &[s]);
                self.nesting -= 1;
            }
            StmtKind::For {
                init, post, body, ..
            } => {
                self.nesting += 1;
                let entry = self.cont();
                if let Some(i) = init {
                    self.stmt(i);
                }
                let header = self.cont();
                self.blocks[header].items.push(Item::Cond(s.id));
                let body_head = self.cont();
                self.block(body);
                let body_tail = self.cont();
                let body_stmts: Vec<&Stmt> = body.stmts.iter().collect();
                self.region(RegionKind::LoopBody, body_head, body_tail, &body_stmts);
                self.cont();
                if let Some(p) = post {
                    self.stmt(p);
                }
                self.edge(self.cur, header);
                let exit = self.new_block();
                self.edge(header, exit);
                self.cur = exit;
                self.region(RegionKind::Loop, entry, exit, &[s]);
                self.nesting -= 1;
            }
            StmtKind::VarDecl(_)
            | StmtKind::ShortVar { .. }
            | StmtKind::Assign { .. }
            | StmtKind::OpAssign { .. }
            | StmtKind::IncDec { .. }
            | StmtKind::Spawn(_) => {
                self.blocks[self.cur].items.push(Item::Stmt(s.id));
            }
        }
    }
}

/// True when `s` contains a `return` or `panic` (not counting closures).
pub fn exits_function(tp: &TypedProgram, s: &Stmt) -> bool {
    let mut found = false;
    crate::frontend::ast::walk_stmt(s, &mut |x| match &x.kind {
        StmtKind::Return(_) => found = true,
        StmtKind::Expr(e) => {
            if let ExprKind::Call { .. } = e.kind {
                if matches!(tp.res.calls.get(&e.id), Some(CallTarget::Builtin(Builtin::Panic))) {
                    found = true;
                }
            }
        }
        _ => {}
    });
    found
}

/// Lookup from body id to its position in [`build_all`] output.
pub fn body_positions(cfgs: &[Cfg]) -> HashMap<BodyId, usize> {
    cfgs.iter().enumerate().map(|(i, c)| (c.body, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::load;
    use crate::frontend::resolve::BodyId;

    fn cfg_of(src: &str) -> Cfg {
        let tp = load(src).unwrap();
        lower(&tp, BodyId::Func(0))
    }

    fn check_boundaries(c: &Cfg) {
        for lu in &c.lu_points {
            assert_eq!(c.blocks[lu.block].items, vec![Item::Lu(c.lu_points.iter().position(|x| x == lu).unwrap())]);
        }
        for b in c.live_blocks() {
            assert!(c.dom.dominates(c.entry, b));
            assert!(c.pdom.dominates(c.exit, b));
        }
    }

    #[test]
    fn straight_line_lock_work_unlock() {
        let c = cfg_of("package main\nvar x int\nfunc main() {\n\tm := &Mutex{}\n\tm.Lock()\n\tx++\n\tm.Unlock()\n}\n");
        check_boundaries(&c);
        let l = c.lu_points[0].block;
        let u = c.lu_points[1].block;
        assert!(c.dom.dominates(l, u));
        assert!(c.pdom.dominates(u, l));
        // [Lock], [work], [Unlock]
        let work = c.blocks[l].succs[0];
        assert_eq!(c.blocks[work].items.len(), 1);
        assert_eq!(c.blocks[work].succs, vec![u]);
    }

    #[test]
    fn figure5_diamond() {
        let c = cfg_of(include_str!("../../fixtures/figure5.mgo"));
        check_boundaries(&c);
        let l = c.lu_points[0].block;
        let u = c.lu_points[1].block;
        assert!(c.dom.dominates(l, u));
        assert!(c.pdom.dominates(u, l));
    }

    #[test]
    fn listing16_no_dominance() {
        let c = cfg_of(include_str!("../../fixtures/listing16.mgo"));
        check_boundaries(&c);
        let l = c.lu_points[0].block;
        let u = c.lu_points[1].block;
        assert!(!c.dom.dominates(l, u));
        assert!(!c.pdom.dominates(u, l));
    }

    #[test]
    fn listing7_defer_moves_unlock_to_exit() {
        let tp = load(include_str!("../../fixtures/listing07.mgo")).unwrap();
        let c = lower(&tp, BodyId::Func(0));
        check_boundaries(&c);
        assert_eq!(c.deferred_unlocks, 1);
        assert!(!c.defer_rejected);
        let u = c.lu_points.iter().find(|p| p.synthetic).unwrap();
        let l = c.lu_points.iter().find(|p| !p.synthetic).unwrap();
        assert!(c.dom.dominates(l.block, u.block));
        assert!(c.pdom.dominates(u.block, l.block));
    }

    #[test]
    fn two_deferred_unlocks_reject_function() {
        let c = cfg_of(
            "package main\nfunc main() {\n\ta := &Mutex{}\n\tb := &Mutex{}\n\ta.Lock()\n\tb.Lock()\n\tdefer a.Unlock()\n\tdefer b.Unlock()\n}\n",
        );
        assert!(c.defer_rejected);
        assert_eq!(c.deferred_unlocks, 2);
    }

    #[test]
    fn no_defer_leaves_exit_empty() {
        let c = cfg_of(include_str!("../../fixtures/listing01.mgo"));
        assert_eq!(c.deferred_unlocks, 0);
        assert!(c.lu_points.iter().all(|p| !p.synthetic));
        assert!(c.blocks[c.exit].items.is_empty());
    }

    #[test]
    fn code_after_return_is_reported_unreachable() {
        let c = cfg_of("package main\nvar x int\nfunc main() {\n\treturn\n\tx++\n}\n");
        assert_eq!(c.unreachable.len(), 1);
        assert!(!c.blocks[c.unreachable[0]].live);
    }

    #[test]
    fn loop_body_region_nested_in_function() {
        let c = cfg_of(
            "package main\nvar x int\nfunc main() {\n\tm := &Mutex{}\n\tfor i := 0; i < 3; i++ {\n\t\tm.Lock()\n\t\tx++\n\t\tm.Unlock()\n\t}\n}\n",
        );
        let l = c.lu_points[0].block;
        let r = c.innermost_region(l);
        assert_eq!(c.regions[r].kind, RegionKind::LoopBody);
        let parent = c.regions[r].parent.unwrap();
        assert_eq!(c.regions[parent].kind, RegionKind::Loop);
        assert!(pst::is_sese(&c, r));
    }

    #[test]
    fn construct_with_return_forms_no_region() {
        let c = cfg_of("package main\nvar x bool\nfunc main() {\n\tif x {\n\t\treturn\n\t}\n}\n");
        assert_eq!(c.regions.len(), 1);
        assert_eq!(c.regions[0].kind, RegionKind::Function);
    }
}
