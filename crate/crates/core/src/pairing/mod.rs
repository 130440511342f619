//! Selection of the lock/unlock pairs to rewrite.

pub mod exposure;
pub mod feasible;
pub mod profile;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::cfg::{self, guarded_blocks, pst, BlockId, Cfg, LuId, RegionId, SpliceState};
use crate::frontend::ast::stmt_index;
use crate::frontend::resolve::{BodyId, MutexExprId};
use crate::frontend::TypedProgram;
use crate::pointsto::{build_callgraph, solve_with, summarize, CallGraph, FnSummary, PointsTo};

pub use feasible::Check;
pub use profile::{Profile, ProfileError};
pub use report::{Counters, PackageReport, Report};

/// Why a lock or unlock point is left untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    Delock,
    Ueunlock,
    NoAlias,
    Dominance,
    NestedConflict,
    Io,
    InterprocIo,
    InterprocAlias,
    Profile,
    MultipleDefer,
    CrossClosure,
    Unpaired,
}

impl Reason {
    pub fn code(self) -> &'static str {
        match self {
            Reason::Delock => "delock",
            Reason::Ueunlock => "ueunlock",
            Reason::NoAlias => "no-alias",
            Reason::Dominance => "dominance",
            Reason::NestedConflict => "nested-conflict",
            Reason::Io => "io",
            Reason::InterprocIo => "interproc-io",
            Reason::InterprocAlias => "interproc-alias",
            Reason::Profile => "profile",
            Reason::MultipleDefer => "multiple-defer",
            Reason::CrossClosure => "cross-closure",
            Reason::Unpaired => "unpaired",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// A spliced lock/unlock pair and its verdict.
#[derive(Clone, Debug)]
pub struct LuPair {
    pub body: BodyId,
    pub lock_point: LuId,
    pub unlock_point: LuId,
    pub lock: MutexExprId,
    pub unlock: MutexExprId,
    pub region: RegionId,
    /// Blocks of the guarded critical section.
    pub cs_blocks: Vec<BlockId>,
    pub rejection: Option<Reason>,
    pub checks: Vec<Check>,
    /// The unlock is a deferred call.
    pub via_defer: bool,
}

impl LuPair {
    pub fn accepted(&self) -> bool {
        self.rejection.is_none()
    }

    /// Accepted by every check except the profile filter.
    pub fn accepted_before_profile(&self) -> bool {
        matches!(self.rejection, None | Some(Reason::Profile))
    }
}

/// A lock or unlock point that splicing left without a partner.
#[derive(Clone, Debug)]
pub struct Unpaired {
    pub body: BodyId,
    pub point: LuId,
    pub mutex: MutexExprId,
    pub reason: Reason,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct BodyResult {
    pub cfg: Cfg,
    pub pairs: Vec<LuPair>,
    pub unpaired: Vec<Unpaired>,
}

/// Analysis results for one program.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub pts: PointsTo,
    pub cg: CallGraph,
    pub summaries: BTreeMap<BodyId, FnSummary>,
    pub bodies: Vec<BodyResult>,
}

impl Analysis {
    pub fn pairs(&self) -> impl Iterator<Item = &LuPair> {
        self.bodies.iter().flat_map(|b| b.pairs.iter())
    }

    pub fn accepted(&self) -> impl Iterator<Item = &LuPair> {
        self.pairs().filter(|p| p.accepted())
    }

    pub fn unpaired(&self) -> impl Iterator<Item = &Unpaired> {
        self.bodies.iter().flat_map(|b| b.unpaired.iter())
    }

    pub fn counters(&self, tp: &TypedProgram) -> Counters {
        report::count(tp, self)
    }
}

/// Run the full selection pipeline on a typed program.
pub fn analyze(tp: &TypedProgram, profile: Option<&Profile>) -> Analysis {
    let cg = build_callgraph(tp);
    let pts = solve_with(tp, &cg);
    let summaries = summarize(tp, &pts);
    let stmts = stmt_index(&tp.program);
    let mut bodies = Vec::new();
    for cfg in cfg::build_all(tp) {
        let ctx = feasible::Ctx {
            tp,
            cfg: &cfg,
            pts: &pts,
            cg: &cg,
            summaries: &summaries,
            stmts: &stmts,
            profile,
        };
        let inter = |a: LuId, b: LuId| ctx.inter(a, b);
        let mut state = SpliceState::new(&cfg);
        let mut pairs = Vec::new();
        for r in pst::innermost_first(&cfg) {
            for pre in cfg::splice_straightline(&cfg, r, &mut state, &inter) {
                let checks = feasible::evaluate(&ctx, &pre);
                let (lp, up) = (cfg.lu_points[pre.lock], cfg.lu_points[pre.unlock]);
                pairs.push(LuPair {
                    body: cfg.body,
                    lock_point: pre.lock,
                    unlock_point: pre.unlock,
                    lock: lp.mutex,
                    unlock: up.mutex,
                    region: r,
                    cs_blocks: guarded_blocks(&cfg, pre.lock, pre.unlock),
                    rejection: feasible::rejection(&checks),
                    checks,
                    via_defer: up.synthetic,
                });
            }
        }
        let unpaired = (0..cfg.lu_points.len())
            .filter(|&p| !state.consumed[p])
            .map(|p| unpaired_reason(&ctx, p))
            .collect();
        bodies.push(BodyResult {
            cfg: cfg.clone(),
            pairs,
            unpaired,
        });
    }
    Analysis {
        pts,
        cg,
        summaries,
        bodies,
    }
}

fn unpaired_reason(ctx: &feasible::Ctx, p: LuId) -> Unpaired {
    let (tp, cfg) = (ctx.tp, ctx.cfg);
    let lp = cfg.lu_points[p];
    let partner = lp.op.partner();
    let mk = |reason, detail: String| Unpaired {
        body: cfg.body,
        point: p,
        mutex: lp.mutex,
        reason,
        detail,
    };
    if lp.synthetic && cfg.defer_rejected {
        return mk(
            Reason::MultipleDefer,
            format!("{} deferred unlocks cannot be normalized", cfg.deferred_unlocks),
        );
    }
    let local: Vec<LuId> = (0..cfg.lu_points.len())
        .filter(|&x| cfg.lu_points[x].op == partner && ctx.inter(p, x))
        .collect();
    if !local.is_empty() {
        let names: Vec<String> = local.iter().map(|&x| ctx.describe(x)).collect();
        return mk(
            Reason::Dominance,
            format!("no counterpart among {} dominates and post-dominates it", names.join(", ")),
        );
    }
    let top = tp.res.bodies[&cfg.body].top_func;
    let elsewhere = tp.res.mutex_exprs.iter().find(|m| {
        m.body != cfg.body
            && m.op == partner
            && tp.res.bodies[&m.body].top_func == top
            && ctx.pts.intersects(m.id, lp.mutex)
    });
    if let Some(m) = elsewhere {
        let (l, c) = tp.program.line_col(m.call_span.start);
        return mk(
            Reason::CrossClosure,
            format!("counterpart {} at {l}:{c} is in {}", tp.program.text(m.call_span), tp.body_name(m.body)),
        );
    }
    let inter = |a: LuId, b: LuId| ctx.inter(a, b);
    if lp.op.is_lock() && exposure::lock_exposed(cfg, 0, p, &inter) {
        return mk(
            Reason::Delock,
            "lock reaches the function exit on a path without a matching unlock".into(),
        );
    }
    if !lp.op.is_lock() && exposure::unlock_exposed(cfg, 0, p, &inter) {
        return mk(
            Reason::Ueunlock,
            "unlock is reached from the function entry on a path without a matching lock".into(),
        );
    }
    mk(Reason::Unpaired, "no counterpart may alias this mutex".into())
}

/// Human-readable reasoning for every LU-point on `line` (1-based).
pub fn explain(tp: &TypedProgram, a: &Analysis, line: usize) -> Option<String> {
    let mut out = String::new();
    for br in &a.bodies {
        let cfg = &br.cfg;
        for (p, lp) in cfg.lu_points.iter().enumerate() {
            let me = &tp.res.mutex_exprs[lp.mutex];
            let (l, c) = tp.program.line_col(me.call_span.start);
            if l != line {
                continue;
            }
            // A deferred unlock shows up once, as its exit stand-in.
            let targets: BTreeSet<String> = a.pts.of(lp.mutex).iter().map(|o| o.describe(&tp.program)).collect();
            let kind = if lp.op.is_lock() { "lock-point" } else { "unlock-point" };
            out.push_str(&format!(
                "{l}:{c} {kind} {} in {}\n",
                tp.program.text(me.call_span),
                tp.body_name(cfg.body)
            ));
            out.push_str(&format!(
                "  points-to: {{{}}}\n",
                targets.into_iter().collect::<Vec<_>>().join(", ")
            ));
            let pair = br.pairs.iter().find(|x| x.lock_point == p || x.unlock_point == p);
            match pair {
                Some(pair) => {
                    let other = if pair.lock_point == p { pair.unlock_point } else { pair.lock_point };
                    let om = &tp.res.mutex_exprs[cfg.lu_points[other].mutex];
                    let (ol, oc) = tp.program.line_col(om.call_span.start);
                    let reg = &cfg.regions[pair.region];
                    out.push_str(&format!(
                        "  paired with {} at {ol}:{oc} in {:?} region (depth {})\n",
                        tp.program.text(om.call_span),
                        reg.kind,
                        reg.depth
                    ));
                    for ch in &pair.checks {
                        let mark = if ch.passed { "pass" } else { "FAIL" };
                        out.push_str(&format!("  [{mark}] {}: {}\n", ch.name, ch.detail));
                    }
                    match pair.rejection {
                        None => out.push_str("  result: transformed\n"),
                        Some(r) => out.push_str(&format!("  result: rejected ({r})\n")),
                    }
                }
                None => {
                    if let Some(u) = br.unpaired.iter().find(|x| x.point == p) {
                        out.push_str(&format!("  not paired: {}\n", u.detail));
                        out.push_str(&format!("  result: rejected ({})\n", u.reason));
                    }
                }
            }
        }
    }
    (!out.is_empty()).then_some(out)
}

#[cfg(test)]
mod tests;
