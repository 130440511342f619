//! Splitting a region into candidate lock/unlock pre-pairs.

use std::collections::BTreeSet;

use super::{BlockId, Cfg, LuId, RegionId};

/// A candidate pair found by splicing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrePair {
    pub lock: LuId,
    pub unlock: LuId,
    pub region: RegionId,
    /// The guarded section partially overlaps an earlier pair's section.
    pub crossing: bool,
}

/// Spliced state shared across the regions of one body.
#[derive(Clone, Debug)]
pub struct SpliceState {
    pub consumed: Vec<bool>,
    formed: Vec<BTreeSet<BlockId>>,
}

impl SpliceState {
    pub fn new(cfg: &Cfg) -> SpliceState {
        SpliceState {
            consumed: vec![false; cfg.lu_points.len()],
            formed: Vec::new(),
        }
    }
}

/// Candidate pairs of `region`, matched by the mutual-nearest rule.
///
/// Lock points are visited in dominator-tree post-order. A lock `L` takes
/// the nearest post-dominating unlock `U` that is still available, has the
/// partner operation and may alias `L`; the pair is kept only if the nearest
/// available aliasing lock dominating `U` is `L` itself. Matched points are
/// consumed; unmatched ones stay available to enclosing regions. A match
/// whose guarded section crosses an earlier pair's section is consumed but
/// flagged as crossing.
pub fn splice_straightline(
    cfg: &Cfg,
    region: RegionId,
    state: &mut SpliceState,
    intersects: &dyn Fn(LuId, LuId) -> bool,
) -> Vec<PrePair> {
    let consumed = &mut state.consumed;
    let reg = &cfg.regions[region];
    let mut pairs = Vec::new();
    for b in cfg.dom.post_order_from(reg.entry) {
        if !reg.contains(b) {
            continue;
        }
        let Some(l) = cfg.lu_at_block(b) else {
            continue;
        };
        let lp = cfg.lu_points[l];
        if !lp.op.is_lock() || consumed[l] {
            continue;
        }
        let u = cfg
            .pdom
            .ancestors(b)
            .take_while(|x| reg.contains(*x))
            .filter_map(|x| cfg.lu_at_block(x))
            .find(|&u| {
                !consumed[u] && cfg.lu_points[u].op == lp.op.partner() && intersects(l, u)
            });
        let Some(u) = u else {
            continue;
        };
        let back = cfg
            .dom
            .ancestors(cfg.lu_points[u].block)
            .take_while(|x| reg.contains(*x))
            .filter_map(|x| cfg.lu_at_block(x))
            .find(|&x| !consumed[x] && cfg.lu_points[x].op == lp.op && intersects(x, u));
        if back == Some(l) {
            consumed[l] = true;
            consumed[u] = true;
            let c: BTreeSet<BlockId> = guarded_blocks(cfg, l, u).into_iter().collect();
            let crossing = state
                .formed
                .iter()
                .any(|f| !f.is_disjoint(&c) && !f.is_subset(&c) && !c.is_subset(f));
            if !crossing {
                state.formed.push(c);
            }
            pairs.push(PrePair {
                lock: l,
                unlock: u,
                region,
                crossing,
            });
        }
    }
    pairs
}

/// Blocks guarded by a pair: dominated by the lock and post-dominated by
/// the unlock.
pub fn guarded_blocks(cfg: &Cfg, l: LuId, u: LuId) -> Vec<usize> {
    let lb = cfg.lu_points[l].block;
    let ub = cfg.lu_points[u].block;
    cfg.live_blocks()
        .filter(|&b| cfg.dom.dominates(lb, b) && cfg.pdom.dominates(ub, b))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{lower, pst};
    use crate::frontend::load;
    use crate::frontend::resolve::BodyId;
    use proptest::prelude::*;

    fn program(ops: &[(usize, bool)], wrap: &[bool]) -> String {
        let mut s = String::from("package main\nvar c bool\nfunc main() {\n");
        for v in ["a", "b", "d"] {
            s.push_str(&format!("\t{v} := &Mutex{{}}\n"));
        }
        for (i, (v, lock)) in ops.iter().enumerate() {
            let name = ["a", "b", "d"][*v];
            let call = if *lock { "Lock" } else { "Unlock" };
            if wrap.get(i).copied().unwrap_or(false) {
                s.push_str(&format!("\tif c {{\n\t\t{name}.{call}()\n\t}}\n"));
            } else {
                s.push_str(&format!("\t{name}.{call}()\n"));
            }
        }
        s.push_str("}\n");
        s
    }

    fn run_all(cfg: &Cfg, intersects: &dyn Fn(LuId, LuId) -> bool) -> Vec<(LuId, LuId)> {
        let mut state = SpliceState::new(cfg);
        let mut out = Vec::new();
        for r in pst::innermost_first(cfg) {
            out.extend(
                splice_straightline(cfg, r, &mut state, intersects)
                    .into_iter()
                    .filter(|p| !p.crossing)
                    .map(|p| (p.lock, p.unlock)),
            );
        }
        out
    }

    #[test]
    fn crossing_distinct_mutexes_keeps_first_pair() {
        let src = program(&[(0, true), (1, true), (0, false), (1, false)], &[]);
        let tp = load(&src).unwrap();
        let cfg = lower(&tp, BodyId::Func(0));
        let mut state = SpliceState::new(&cfg);
        let all = splice_straightline(&cfg, 0, &mut state, &by_name(&cfg, &tp));
        assert_eq!(all.len(), 2);
        assert_eq!((all[0].lock, all[0].unlock, all[0].crossing), (1, 3, false));
        assert!(all[1].crossing);
    }

    fn by_name(cfg: &Cfg, tp: &crate::frontend::TypedProgram) -> impl Fn(LuId, LuId) -> bool {
        let names: Vec<String> = cfg
            .lu_points
            .iter()
            .map(|p| tp.res.mutex_exprs[p.mutex].access_path.join("."))
            .collect();
        move |a, b| names[a] == names[b]
    }

    #[test]
    fn sequential_pairs_are_maximal() {
        let src = program(&[(0, true), (0, false), (1, true), (1, false)], &[]);
        let tp = load(&src).unwrap();
        let cfg = lower(&tp, BodyId::Func(0));
        let pairs = run_all(&cfg, &by_name(&cfg, &tp));
        assert_eq!(pairs, vec![(2, 3), (0, 1)]);
    }

    #[test]
    fn perfect_nest_pairs_inner_first() {
        let src = program(&[(0, true), (1, true), (1, false), (0, false)], &[]);
        let tp = load(&src).unwrap();
        let cfg = lower(&tp, BodyId::Func(0));
        let pairs = run_all(&cfg, &by_name(&cfg, &tp));
        assert_eq!(pairs, vec![(1, 2), (0, 3)]);
    }

    #[test]
    fn lone_lock_yields_nothing() {
        let src = program(&[(0, true)], &[]);
        let tp = load(&src).unwrap();
        let cfg = lower(&tp, BodyId::Func(0));
        assert!(run_all(&cfg, &|_, _| true).is_empty());
    }

    #[test]
    fn hand_over_hand_with_full_aliasing() {
        let src = program(&[(0, true), (1, true), (0, false), (1, false)], &[]);
        let tp = load(&src).unwrap();
        let cfg = lower(&tp, BodyId::Func(0));
        let pairs = run_all(&cfg, &|_, _| true);
        assert_eq!(pairs, vec![(1, 2), (0, 3)]);
    }

    proptest! {
        #[test]
        fn pairs_never_cross(
            ops in proptest::collection::vec((0usize..3, any::<bool>()), 1..10),
            wrap in proptest::collection::vec(any::<bool>(), 10),
            alias in proptest::collection::vec(any::<bool>(), 3),
        ) {
            let src = program(&ops, &wrap);
            let tp = load(&src).unwrap();
            let cfg = lower(&tp, BodyId::Func(0));
            let var: Vec<usize> = cfg.lu_points.iter().map(|p| {
                ["a", "b", "d"].iter().position(|n| tp.res.mutex_exprs[p.mutex].access_path[0] == *n).unwrap()
            }).collect();
            // alias[i] makes variable i alias with variable (i+1)%3.
            let inter = move |x: LuId, y: LuId| {
                let (a, b) = (var[x], var[y]);
                a == b || (alias[a] && (a + 1) % 3 == b) || (alias[b] && (b + 1) % 3 == a)
            };
            let pairs = run_all(&cfg, &inter);
            let sets: Vec<std::collections::BTreeSet<usize>> = pairs
                .iter()
                .map(|(l, u)| guarded_blocks(&cfg, *l, *u).into_iter().collect())
                .collect();
            for (i, a) in sets.iter().enumerate() {
                prop_assert!(!a.is_empty());
                for b in sets.iter().skip(i + 1) {
                    let disjoint = a.is_disjoint(b);
                    prop_assert!(disjoint || a.is_subset(b) || b.is_subset(a));
                }
            }
            for (l, u) in &pairs {
                let (lb, ub) = (cfg.lu_points[*l].block, cfg.lu_points[*u].block);
                prop_assert!(cfg.dom.dominates(lb, ub) && cfg.pdom.dominates(ub, lb));
            }
        }
    }
}
