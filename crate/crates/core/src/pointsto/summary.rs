//! Per-function summaries and the HTM-unfriendly statement set.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::cfg::Item;
use crate::frontend::ast::{stmt_exprs, walk_block_stmts, walk_expr, Expr, ExprKind, Stmt, StmtId, StmtKind};
use crate::frontend::resolve::{BodyId, Builtin, CallTarget, FuncId, LockOp};
use crate::frontend::TypedProgram;

use super::{AbsLoc, CallGraph, PointsTo};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FnSummary {
    /// No HTM-unfriendly statement in the body itself.
    pub htm_fit: bool,
    /// Union of the points-to sets of the body's own LU-points and of the
    /// mutexes passed to its FastLock/FastUnlock calls.
    pub lu_union: BTreeSet<AbsLoc>,
    /// Description of the first unfriendly operation, if any.
    pub first_unfriendly: Option<String>,
}

/// The first HTM-unfriendly call inside `e`, described.
pub fn expr_unfriendly(tp: &TypedProgram, e: &Expr) -> Option<String> {
    let mut found = None;
    walk_expr(e, &mut |x| {
        if found.is_some() {
            return;
        }
        match tp.res.calls.get(&x.id) {
            Some(CallTarget::Builtin(b @ (Builtin::Print | Builtin::Panic | Builtin::Join))) => {
                found = Some(format!("{b:?}").to_lowercase());
            }
            Some(CallTarget::Extern(i)) => {
                found = Some(format!("extern io {}", tp.program.externs[*i].name.name));
            }
            _ => {}
        }
    });
    found
}

fn defer_args_unfriendly(tp: &TypedProgram, call: &Expr) -> Option<String> {
    let ExprKind::Call { callee, args } = &call.kind else {
        return expr_unfriendly(tp, call);
    };
    if let ExprKind::Field(recv, _) = &callee.kind {
        if let Some(u) = expr_unfriendly(tp, recv) {
            return Some(u);
        }
    }
    args.iter().find_map(|a| expr_unfriendly(tp, a))
}

/// Unfriendly operation executed by a CFG item.
pub fn item_unfriendly(tp: &TypedProgram, stmts: &HashMap<StmtId, &Stmt>, item: &Item) -> Option<String> {
    match item {
        Item::Lu(_) => None,
        Item::Cond(s) => match &stmts[s].kind {
            StmtKind::If { cond, .. } | StmtKind::For { cond, .. } => expr_unfriendly(tp, cond),
            _ => None,
        },
        Item::Stmt(s) => {
            let st = stmts[s];
            match &st.kind {
                StmtKind::Spawn(_) => Some("spawn".to_string()),
                StmtKind::Defer(e) => defer_args_unfriendly(tp, e),
                _ => stmt_exprs(st).into_iter().find_map(|e| expr_unfriendly(tp, e)),
            }
        }
        Item::DeferredCall(s) => match &stmts[s].kind {
            StmtKind::Defer(e) => expr_unfriendly(tp, e),
            _ => None,
        },
    }
}

/// Expressions a CFG item evaluates. A `defer` registration evaluates only
/// the receiver and arguments; the call itself runs at exit.
pub fn item_exprs<'a>(stmts: &HashMap<StmtId, &'a Stmt>, item: &Item) -> Vec<&'a Expr> {
    match item {
        Item::Lu(_) => vec![],
        Item::Cond(s) => match &stmts[s].kind {
            StmtKind::If { cond, .. } | StmtKind::For { cond, .. } => vec![cond],
            _ => vec![],
        },
        Item::Stmt(s) => match &stmts[s].kind {
            StmtKind::Defer(e) => match &e.kind {
                ExprKind::Call { callee, args } => {
                    let mut v: Vec<&Expr> = args.iter().collect();
                    if let ExprKind::Field(recv, _) = &callee.kind {
                        v.push(recv);
                    }
                    v
                }
                _ => vec![],
            },
            _ => stmt_exprs(stmts[s]),
        },
        Item::DeferredCall(s) => stmt_exprs(stmts[s]),
    }
}

/// Functions called directly by a CFG item.
pub fn item_callees(cg: &CallGraph, stmts: &HashMap<StmtId, &Stmt>, item: &Item) -> Vec<FuncId> {
    let mut out = Vec::new();
    for e in item_exprs(stmts, item) {
        walk_expr(e, &mut |x| {
            if let Some(f) = cg.site_targets.get(&x.id) {
                out.push(*f);
            }
        });
    }
    out
}

/// FastLock/FastUnlock calls evaluated by a CFG item, as (receiver source
/// text, operation).
pub fn item_opti_calls(tp: &TypedProgram, stmts: &HashMap<StmtId, &Stmt>, item: &Item) -> Vec<(String, LockOp)> {
    let mut out = Vec::new();
    for e in item_exprs(stmts, item) {
        walk_expr(e, &mut |x| {
            if let (Some(CallTarget::Opti(op)), ExprKind::Call { callee, .. }) = (tp.res.calls.get(&x.id), &x.kind) {
                if let ExprKind::Field(recv, _) = &callee.kind {
                    out.push((tp.program.source[recv.span.range()].to_string(), *op));
                }
            }
        });
    }
    out
}

/// Mutex targets of FastLock/FastUnlock calls evaluated by a CFG item.
pub fn item_opti_targets(tp: &TypedProgram, pts: &PointsTo, stmts: &HashMap<StmtId, &Stmt>, item: &Item) -> BTreeSet<AbsLoc> {
    let mut out = BTreeSet::new();
    for e in item_exprs(stmts, item) {
        opti_targets(tp, pts, e, &mut out);
    }
    out
}

fn opti_targets(tp: &TypedProgram, pts: &PointsTo, e: &Expr, out: &mut BTreeSet<AbsLoc>) {
    walk_expr(e, &mut |x| {
        if let Some(CallTarget::Opti(_)) = tp.res.calls.get(&x.id) {
            out.extend(pts.of_opti(x.id).iter().cloned());
        }
    });
}

/// Summaries for every function and closure body.
pub fn summarize(tp: &TypedProgram, pts: &PointsTo) -> BTreeMap<BodyId, FnSummary> {
    let mut out = BTreeMap::new();
    for b in tp.res.bodies.keys() {
        let mut first = None;
        walk_block_stmts(tp.body_block(*b), &mut |s| {
            if first.is_some() {
                return;
            }
            first = match &s.kind {
                StmtKind::Spawn(_) => Some("spawn".to_string()),
                _ => stmt_exprs(s).into_iter().find_map(|e| expr_unfriendly(tp, e)),
            };
        });
        let mut lu_union = BTreeSet::new();
        walk_block_stmts(tp.body_block(*b), &mut |s| {
            for e in stmt_exprs(s) {
                opti_targets(tp, pts, e, &mut lu_union);
            }
        });
        for m in tp.res.mutex_exprs.iter().filter(|m| m.body == *b) {
            lu_union.extend(pts.of(m.id).iter().cloned());
        }
        out.insert(
            *b,
            FnSummary {
                htm_fit: first.is_none(),
                lu_union,
                first_unfriendly: first,
            },
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::load;
    use crate::pointsto::solve;

    #[test]
    fn print_makes_function_unfit() {
        let tp = load("package main\nfunc f() {\n\tprint(1)\n}\n").unwrap();
        let s = summarize(&tp, &solve(&tp));
        assert!(!s[&BodyId::Func(0)].htm_fit);
    }

    #[test]
    fn pure_function_is_fit_with_empty_union() {
        let tp = load("package main\nfunc f(a int) int {\n\treturn a * 2\n}\n").unwrap();
        let s = summarize(&tp, &solve(&tp));
        let f = &s[&BodyId::Func(0)];
        assert!(f.htm_fit);
        assert!(f.lu_union.is_empty());
    }

    #[test]
    fn panic_in_set_makes_it_unfit() {
        let tp = load(
            "package main\ntype Cache struct {\n\tmu Mutex\n\tdata map[int]int\n}\nfunc (c *Cache) Set(k int, v int) {\n\tif k < 0 {\n\t\tpanic(\"negative key\")\n\t}\n\tc.mu.Lock()\n\tc.data[k] = v\n\tc.mu.Unlock()\n}\n",
        )
        .unwrap();
        let s = summarize(&tp, &solve(&tp));
        let set = &s[&BodyId::Func(0)];
        assert!(!set.htm_fit);
        assert_eq!(set.first_unfriendly.as_deref(), Some("panic"));
        assert_eq!(set.lu_union.len(), 1);
    }
}
