//! Call graph with rapid type analysis pruning of method targets.

use std::collections::{BTreeMap, BTreeSet};

use crate::frontend::ast::{stmt_exprs, walk_block_stmts, walk_expr, ExprId, ExprKind, StmtKind};
use crate::frontend::resolve::{BodyId, CallTarget, FuncId, StructId, Type};
use crate::frontend::TypedProgram;

#[derive(Clone, Debug, Default)]
pub struct CallGraph {
    /// Callees of each function or closure body.
    pub edges: BTreeMap<BodyId, BTreeSet<FuncId>>,
    /// Resolved target of each kept call site.
    pub site_targets: BTreeMap<ExprId, FuncId>,
    /// Struct types with at least one instantiation.
    pub instantiated: BTreeSet<StructId>,
    callers: BTreeMap<FuncId, BTreeSet<BodyId>>,
}

impl CallGraph {
    pub fn has_callers(&self, f: FuncId) -> bool {
        self.callers.get(&f).is_some_and(|c| !c.is_empty())
    }

    pub fn callees(&self, b: BodyId) -> impl Iterator<Item = FuncId> + '_ {
        self.edges.get(&b).into_iter().flatten().copied()
    }

    /// Reflexive-transitive closure of the call relation from `roots`.
    pub fn closure(&self, roots: impl IntoIterator<Item = FuncId>) -> BTreeSet<FuncId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<FuncId> = roots.into_iter().collect();
        while let Some(f) = stack.pop() {
            if seen.insert(f) {
                stack.extend(self.callees(BodyId::Func(f)));
            }
        }
        seen
    }
}

struct Site {
    body: BodyId,
    expr: ExprId,
    func: FuncId,
    /// Receiver struct for method calls.
    recv: Option<StructId>,
}

fn collect_sites(tp: &TypedProgram, body: BodyId, out: &mut Vec<Site>, inst: &mut BTreeSet<StructId>) {
    let block = tp.body_block(body);
    walk_block_stmts(block, &mut |s| {
        if let StmtKind::VarDecl(_) = &s.kind {
            if let Some(v) = tp.res.decl_vars.get(&s.id) {
                if let Type::Struct(sid) = tp.res.vars[*v].ty {
                    inst.insert(sid);
                }
            }
        }
        for e in stmt_exprs(s) {
            walk_expr(e, &mut |x| {
                if let ExprKind::Composite { .. } = x.kind {
                    if let Type::Struct(sid) = tp.ty(x) {
                        inst.insert(*sid);
                    }
                }
                match tp.res.calls.get(&x.id) {
                    Some(CallTarget::Func(f)) => out.push(Site {
                        body,
                        expr: x.id,
                        func: *f,
                        recv: None,
                    }),
                    Some(CallTarget::Method { func, .. }) => {
                        let rv = tp.res.bodies[&BodyId::Func(*func)].params[0];
                        out.push(Site {
                            body,
                            expr: x.id,
                            func: *func,
                            recv: tp.res.vars[rv].ty.struct_id(),
                        })
                    }
                    _ => {}
                }
            });
        }
    });
}

pub fn build_callgraph(tp: &TypedProgram) -> CallGraph {
    let mut sites = Vec::new();
    let mut inst = BTreeSet::new();
    for (gi, g) in tp.program.globals.iter().enumerate() {
        if let Type::Struct(sid) = tp.res.vars[tp.res.globals[gi]].ty {
            inst.insert(sid);
        }
        if let Some(init) = &g.init {
            walk_expr(init, &mut |x| {
                if let (ExprKind::Composite { .. }, Type::Struct(sid)) = (&x.kind, tp.ty(x)) {
                    inst.insert(*sid);
                }
            });
        }
    }
    for b in tp.res.bodies.keys() {
        collect_sites(tp, *b, &mut sites, &mut inst);
    }
    // Entry functions (no caller at all) receive synthetic arguments, which
    // instantiate their parameter types.
    let called: BTreeSet<FuncId> = sites.iter().map(|s| s.func).collect();
    for f in 0..tp.program.functions.len() {
        if called.contains(&f) {
            continue;
        }
        for &p in &tp.res.bodies[&BodyId::Func(f)].params {
            if let Some(sid) = tp.res.vars[p].ty.struct_id() {
                inst.insert(sid);
            }
        }
    }
    let mut cg = CallGraph {
        instantiated: inst,
        ..Default::default()
    };
    for s in sites {
        if let Some(r) = s.recv {
            if !cg.instantiated.contains(&r) {
                continue;
            }
        }
        cg.edges.entry(s.body).or_default().insert(s.func);
        cg.callers.entry(s.func).or_default().insert(s.body);
        cg.site_targets.insert(s.expr, s.func);
    }
    cg
}
