//! Admissibility checks for a candidate pair.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::cfg::{guarded_blocks, Cfg, LuId, PrePair};
use crate::frontend::ast::{Stmt, StmtId};
use crate::frontend::resolve::BodyId;
use crate::frontend::TypedProgram;
use crate::pointsto::summary::{item_callees, item_opti_calls, item_opti_targets, item_unfriendly};
use crate::pointsto::{AbsLoc, CallGraph, FnSummary, PointsTo};

use super::exposure::{lock_exposed, unlock_exposed};
use super::profile::{Profile, HOT_THRESHOLD};
use super::Reason;

/// Outcome of one check on a pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub reason: Reason,
    pub passed: bool,
    pub detail: String,
}

/// Everything the checks consult for one body.
pub struct Ctx<'a> {
    pub tp: &'a TypedProgram,
    pub cfg: &'a Cfg,
    pub pts: &'a PointsTo,
    pub cg: &'a CallGraph,
    pub summaries: &'a BTreeMap<BodyId, FnSummary>,
    pub stmts: &'a HashMap<StmtId, &'a Stmt>,
    pub profile: Option<&'a Profile>,
}

impl Ctx<'_> {
    pub fn mset(&self, p: LuId) -> &BTreeSet<AbsLoc> {
        self.pts.of(self.cfg.lu_points[p].mutex)
    }

    pub fn inter(&self, a: LuId, b: LuId) -> bool {
        self.pts
            .intersects(self.cfg.lu_points[a].mutex, self.cfg.lu_points[b].mutex)
    }

    /// `recv.Op() at line:col`.
    pub fn describe(&self, p: LuId) -> String {
        let me = &self.tp.res.mutex_exprs[self.cfg.lu_points[p].mutex];
        let (l, c) = self.tp.program.line_col(me.call_span.start);
        format!("{} at {l}:{c}", self.tp.program.text(me.call_span))
    }

    /// Qualified name of the top-level function enclosing the body.
    pub fn function_name(&self) -> String {
        self.tp.qualified_name(self.tp.res.bodies[&self.cfg.body].top_func)
    }
}

fn check(name: &'static str, reason: Reason, passed: bool, detail: String) -> Check {
    Check {
        name,
        reason,
        passed,
        detail,
    }
}

/// All checks for a spliced pair, in the order they decide the rejection.
pub fn evaluate(ctx: &Ctx, pre: &PrePair) -> Vec<Check> {
    let cfg = ctx.cfg;
    let (l, u) = (pre.lock, pre.unlock);
    let inter = |a: LuId, b: LuId| ctx.inter(a, b);
    let mut out = Vec::new();

    out.push(check(
        "multiple-defer",
        Reason::MultipleDefer,
        !cfg.defer_rejected,
        if cfg.defer_rejected {
            format!("{} deferred unlocks cannot be normalized to one exit unlock", cfg.deferred_unlocks)
        } else {
            "deferred unlocks normalize to the exit block".into()
        },
    ));
    let cs = guarded_blocks(cfg, l, u);
    let split = split_opti_sections(ctx, &cs);
    out.push(check(
        "crossing",
        Reason::NestedConflict,
        !pre.crossing && split.is_empty(),
        if pre.crossing {
            "guarded section partially overlaps another pair".into()
        } else if !split.is_empty() {
            format!("guarded section partially overlaps the optimistic section of {}", split.join(", "))
        } else {
            "guarded section nests with other pairs".into()
        },
    ));

    let de = lock_exposed(cfg, pre.region, l, &inter);
    out.push(check(
        "delock",
        Reason::Delock,
        !de,
        if de {
            "lock reaches the region exit on a path without a matching unlock".into()
        } else {
            "every path to the region exit unlocks".into()
        },
    ));
    let ue = unlock_exposed(cfg, pre.region, u, &inter);
    out.push(check(
        "ueunlock",
        Reason::Ueunlock,
        !ue,
        if ue {
            "unlock is reached from the region entry on a path without a matching lock".into()
        } else {
            "every path from the region entry locks".into()
        },
    ));

    // (1) the two receivers may denote the same mutex.
    let alias = ctx.inter(l, u);
    out.push(check(
        "no-alias",
        Reason::NoAlias,
        alias,
        if alias {
            "points-to sets intersect".into()
        } else {
            "points-to sets are disjoint".into()
        },
    ));

    // (2) L dominates U and U post-dominates L.
    let (lb, ub) = (cfg.lu_points[l].block, cfg.lu_points[u].block);
    let dom = cfg.dom.dominates(lb, ub);
    let pdom = cfg.pdom.dominates(ub, lb);
    out.push(check(
        "dominance",
        Reason::Dominance,
        dom && pdom,
        match (dom, pdom) {
            (true, true) => "lock dominates unlock and unlock post-dominates lock".into(),
            (false, _) => "lock does not dominate unlock".into(),
            (true, false) => "unlock does not post-dominate lock".into(),
        },
    ));

    // (3) no other LU-point in C touches an intersecting mutex.
    let union: BTreeSet<&AbsLoc> = ctx.mset(l).iter().chain(ctx.mset(u)).collect();
    let conflicts: Vec<String> = cs
        .iter()
        .filter_map(|&b| cfg.lu_at_block(b))
        .filter(|&x| x != l && x != u)
        .filter(|&x| ctx.mset(x).iter().any(|o| union.contains(o)))
        .map(|x| ctx.describe(x))
        .chain(cs.iter().flat_map(|&b| cfg.blocks[b].items.iter()).filter_map(|it| {
            let t = item_opti_targets(ctx.tp, ctx.pts, ctx.stmts, it);
            t.iter().any(|o| union.contains(o)).then(|| "optimistic lock call on an intersecting mutex".to_string())
        }))
        .collect();
    out.push(check(
        "nested-conflict",
        Reason::NestedConflict,
        conflicts.is_empty(),
        if conflicts.is_empty() {
            "no conflicting lock operation inside the critical section".into()
        } else {
            format!("conflicting {}", conflicts.join(", "))
        },
    ));

    // (4) no HTM-unfriendly statement in C.
    let items = || cs.iter().flat_map(|&b| cfg.blocks[b].items.iter());
    let local = items().find_map(|it| item_unfriendly(ctx.tp, ctx.stmts, it));
    out.push(check(
        "io",
        Reason::Io,
        local.is_none(),
        match &local {
            Some(what) => format!("critical section performs {what}"),
            None => "no unfriendly statement in the critical section".into(),
        },
    ));

    // Interprocedural filter over the transitive callees of C.
    let roots: Vec<_> = items().flat_map(|it| item_callees(ctx.cg, ctx.stmts, it)).collect();
    let closure = ctx.cg.closure(roots);
    let unfit = closure.iter().find_map(|&f| {
        let s = &ctx.summaries[&BodyId::Func(f)];
        s.first_unfriendly
            .as_ref()
            .map(|w| format!("callee {} performs {w}", ctx.tp.qualified_name(f)))
    });
    out.push(check(
        "interproc-io",
        Reason::InterprocIo,
        unfit.is_none(),
        unfit.unwrap_or_else(|| format!("all {} transitive callees are transaction-safe", closure.len())),
    ));
    let aliasing = closure.iter().find(|&&f| {
        ctx.summaries[&BodyId::Func(f)]
            .lu_union
            .iter()
            .any(|o| union.contains(o))
    });
    out.push(check(
        "interproc-alias",
        Reason::InterprocAlias,
        aliasing.is_none(),
        match aliasing {
            Some(&f) => format!("callee {} locks an intersecting mutex", ctx.tp.qualified_name(f)),
            None => "no callee locks an intersecting mutex".into(),
        },
    ));

    if let Some(p) = ctx.profile {
        let name = ctx.function_name();
        let frac = p.fraction(&name);
        out.push(check(
            "profile",
            Reason::Profile,
            frac >= HOT_THRESHOLD,
            format!("{name} cumulative fraction {frac} (threshold {HOT_THRESHOLD})"),
        ));
    }
    out
}

/// The deciding rejection of a check list.
/// Optimistic locks whose FastLock and FastUnlock calls do not balance
/// inside `cs`: an existing optimistic section only partly inside it.
fn split_opti_sections(ctx: &Ctx, cs: &[usize]) -> Vec<String> {
    let mut balance: BTreeMap<String, i64> = BTreeMap::new();
    for it in cs.iter().flat_map(|&b| ctx.cfg.blocks[b].items.iter()) {
        for (recv, op) in item_opti_calls(ctx.tp, ctx.stmts, it) {
            *balance.entry(recv).or_default() += if op.is_lock() { 1 } else { -1 };
        }
    }
    balance.into_iter().filter(|(_, n)| *n != 0).map(|(r, _)| r).collect()
}

pub fn rejection(checks: &[Check]) -> Option<Reason> {
    checks.iter().find(|c| !c.passed).map(|c| c.reason)
}
