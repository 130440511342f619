//! Source rewriting of accepted pairs into optimistic-lock calls.

pub mod diff;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::frontend::ast::MutexKind;
use crate::frontend::lexer::{lex, Tok};
use crate::frontend::resolve::{Addressness, BodyId, MutexExpr};
use crate::frontend::{load, FrontendError, TypedProgram};
use crate::pairing::{analyze, Analysis, LuPair, Profile};

pub use diff::{apply_patch, unified_diff, PatchError};

/// Prefix of generated optimistic-lock variables.
pub const VAR_PREFIX: &str = "__elide_l";
const MAX_SUFFIX: usize = 1000;

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("no free name for {base} in {body}")]
    ScopeConflict { base: String, body: String },
    #[error("edits overlap at byte {0}")]
    Overlap(u32),
    #[error("rewritten source does not reparse: {0}")]
    Reparse(FrontendError),
}

/// Replace `span` with `text`; an empty span is an insertion.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Edit {
    pub start: u32,
    pub end: u32,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeclInsertion {
    pub body: String,
    pub var: String,
    pub edit: Edit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairEdit {
    pub var: String,
    pub lock_edit: Edit,
    pub unlock_edit: Edit,
    pub via_defer: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RewritePlan {
    pub decls: Vec<DeclInsertion>,
    pub pairs: Vec<PairEdit>,
}

impl RewritePlan {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// All edits sorted by position.
    pub fn edits(&self) -> Vec<Edit> {
        let mut v: Vec<Edit> = self.decls.iter().map(|d| d.edit.clone()).collect();
        for p in &self.pairs {
            v.push(p.lock_edit.clone());
            v.push(p.unlock_edit.clone());
        }
        v.sort();
        v
    }

    pub fn apply(&self, src: &str) -> Result<String, RewriteError> {
        let edits = self.edits();
        let mut out = String::with_capacity(src.len() + 64 * edits.len());
        let mut pos = 0usize;
        for e in &edits {
            if (e.start as usize) < pos {
                return Err(RewriteError::Overlap(e.start));
            }
            out.push_str(&src[pos..e.start as usize]);
            out.push_str(&e.text);
            pos = e.end as usize;
        }
        out.push_str(&src[pos..]);
        Ok(out)
    }
}

/// Argument text passed to FastLock/FastUnlock for a mutex expression.
pub fn receiver_text(tp: &TypedProgram, me: &MutexExpr) -> String {
    let mut s = tp.program.text(me.recv_span).to_string();
    if me.via_anonymous_field {
        s.push_str(match me.kind {
            MutexKind::Exclusive => ".Mutex",
            MutexKind::ReadWrite => ".RWMutex",
        });
    }
    match me.addressness {
        Addressness::ByAddress => s,
        Addressness::ByValue => format!("&{s}"),
    }
}

fn call_edit(tp: &TypedProgram, me: &MutexExpr, var: &str) -> Edit {
    Edit {
        start: me.call_span.start,
        end: me.call_span.end,
        text: format!("{var}.{}({})", me.op.fast_name(), receiver_text(tp, me)),
    }
}

/// Nesting depth of each accepted pair among the accepted pairs of its body.
fn depths(pairs: &[&LuPair]) -> Vec<usize> {
    let sets: Vec<BTreeSet<usize>> = pairs.iter().map(|p| p.cs_blocks.iter().copied().collect()).collect();
    (0..pairs.len())
        .map(|i| {
            (0..pairs.len())
                .filter(|&j| {
                    j != i
                        && pairs[j].body == pairs[i].body
                        && sets[i].is_subset(&sets[j])
                        && sets[i].len() < sets[j].len()
                })
                .count()
        })
        .collect()
}

/// Every identifier spelled anywhere in the source.
fn identifiers(src: &str) -> BTreeSet<String> {
    lex(src)
        .map(|toks| {
            toks.into_iter()
                .filter_map(|t| match t.tok {
                    Tok::Ident(s) => Some(s),
                    _ => None,
                })
                .collect()
        })
        .unwrap_or_default()
}

fn fresh_name(taken: &BTreeSet<String>, depth: usize, body: &str) -> Result<String, RewriteError> {
    let base = format!("{VAR_PREFIX}{depth}");
    if !taken.contains(&base) {
        return Ok(base);
    }
    (1..=MAX_SUFFIX)
        .map(|k| format!("{base}_{k}"))
        .find(|n| !taken.contains(n))
        .ok_or(RewriteError::ScopeConflict {
            base,
            body: body.to_string(),
        })
}

/// Leading whitespace of the line containing `offset`.
fn line_indent(src: &str, offset: usize) -> &str {
    let ls = src[..offset].rfind('\n').map_or(0, |i| i + 1);
    let rest = &src[ls..];
    &rest[..rest.len() - rest.trim_start_matches([' ', '\t']).len()]
}

/// Insertion of `name := OptiLock{}` lines at the top of a body.
fn decl_edit(tp: &TypedProgram, body: BodyId, names: &[String]) -> Edit {
    let src = &tp.program.source;
    let block = tp.body_block(body);
    let after = block.span.start as usize + 1;
    let eol = src[after..].find('\n').map_or(src.len(), |i| after + i);
    let nested = format!("{}\t", line_indent(src, after - 1));
    if src[after..eol].trim().is_empty() && eol < src.len() {
        // `{` ends its line: add a line right after it, indented like the
        // first statement on its own line.
        let indent = block
            .stmts
            .first()
            .map(|s| s.span.start as usize)
            .filter(|&o| src[eol..o].trim().is_empty())
            .map_or(nested, |o| line_indent(src, o).to_string());
        let at = (eol + 1) as u32;
        Edit {
            start: at,
            end: at,
            text: names.iter().map(|n| format!("{indent}{n} := OptiLock{{}}\n")).collect(),
        }
    } else {
        // `{` is followed by code on the same line: break the line.
        let ws = src[after..].len() - src[after..].trim_start_matches([' ', '\t']).len();
        Edit {
            start: after as u32,
            end: (after + ws) as u32,
            text: names
                .iter()
                .map(|n| format!("\n{nested}{n} := OptiLock{{}}"))
                .chain([format!("\n{nested}")])
                .collect(),
        }
    }
}

/// Edits for the accepted pairs of an analysis.
pub fn plan(tp: &TypedProgram, analysis: &Analysis) -> Result<RewritePlan, RewriteError> {
    let accepted: Vec<&LuPair> = analysis.accepted().collect();
    let depth = depths(&accepted);
    let taken = identifiers(&tp.program.source);
    // (body, depth) -> variable name.
    let mut vars: BTreeMap<(BodyId, usize), String> = BTreeMap::new();
    let mut plan = RewritePlan::default();
    let mut order: Vec<usize> = (0..accepted.len()).collect();
    order.sort_by_key(|&i| (tp.res.mutex_exprs[accepted[i].lock].call_span.start, i));
    for i in order {
        let p = accepted[i];
        let key = (p.body, depth[i]);
        let var = match vars.get(&key) {
            Some(v) => v.clone(),
            None => {
                let v = fresh_name(&taken, depth[i], &tp.body_name(p.body))?;
                vars.insert(key, v.clone());
                v
            }
        };
        let lock = &tp.res.mutex_exprs[p.lock];
        let unlock = &tp.res.mutex_exprs[p.unlock];
        plan.pairs.push(PairEdit {
            var: var.clone(),
            lock_edit: call_edit(tp, lock, &var),
            unlock_edit: call_edit(tp, unlock, &var),
            via_defer: p.via_defer,
        });
    }
    // Declarations per body, shallowest first.
    let mut per_body: BTreeMap<BodyId, Vec<(usize, String)>> = BTreeMap::new();
    for ((b, d), v) in vars {
        per_body.entry(b).or_default().push((d, v));
    }
    for (b, mut vs) in per_body {
        vs.sort();
        let names: Vec<String> = vs.into_iter().map(|(_, v)| v).collect();
        plan.decls.push(DeclInsertion {
            body: tp.body_name(b),
            var: names.join(", "),
            edit: decl_edit(tp, b, &names),
        });
    }
    Ok(plan)
}

/// Result of transforming one file.
#[derive(Clone, Debug)]
pub struct Transformed {
    pub file: String,
    pub original: String,
    pub rewritten: String,
    pub diff: String,
    pub plan: RewritePlan,
}

/// Analyze, plan, apply and diff one source file. The rewritten text is
/// checked to parse and resolve.
pub fn transform_source(file: &str, src: &str, profile: Option<&Profile>) -> Result<(Transformed, Analysis, TypedProgram), TransformError> {
    let tp = load(src).map_err(TransformError::Frontend)?;
    let analysis = analyze(&tp, profile);
    let plan = plan(&tp, &analysis)?;
    let rewritten = plan.apply(src)?;
    load(&rewritten).map_err(|e| TransformError::Rewrite(RewriteError::Reparse(e)))?;
    let diff = unified_diff(file, src, &rewritten);
    Ok((
        Transformed {
            file: file.to_string(),
            original: src.to_string(),
            rewritten,
            diff,
            plan,
        },
        analysis,
        tp,
    ))
}

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("{0}")]
    Frontend(FrontendError),
    #[error("{0}")]
    Rewrite(#[from] RewriteError),
}

#[cfg(test)]
mod tests;
