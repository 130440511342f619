//! Program structure tree: the nesting of single-entry single-exit regions.

use std::collections::BTreeSet;

use serde::Serialize;

use super::{BasicBlock, BlockId, Cfg};

pub type RegionId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RegionKind {
    Function,
    If,
    Arm,
    Loop,
    LoopBody,
}

#[derive(Clone, Debug)]
pub struct Region {
    pub kind: RegionKind,
    pub entry: BlockId,
    pub exit: BlockId,
    /// Live member blocks, sorted.
    pub members: BTreeSet<BlockId>,
    pub parent: Option<RegionId>,
    pub children: Vec<RegionId>,
    pub depth: usize,
}

impl Region {
    pub fn new(
        kind: RegionKind,
        entry: BlockId,
        exit: BlockId,
        members: Vec<BlockId>,
        parent: Option<RegionId>,
    ) -> Region {
        Region {
            kind,
            entry,
            exit,
            members: members.into_iter().collect(),
            parent,
            children: Vec::new(),
            depth: 0,
        }
    }

    pub fn contains(&self, b: BlockId) -> bool {
        self.members.contains(&b)
    }
}

/// Drop dead blocks from member sets and link regions into a tree.
/// The function region ends up at index 0.
pub(super) fn finalize(mut regions: Vec<Region>, blocks: &[BasicBlock]) -> Vec<Region> {
    regions.retain(|r| blocks[r.entry].live && blocks[r.exit].live);
    for r in regions.iter_mut() {
        r.members.retain(|b| blocks[*b].live);
    }
    // Larger regions first; the function region is the unique largest.
    regions.sort_by(|a, b| {
        b.members
            .len()
            .cmp(&a.members.len())
            .then(a.entry.cmp(&b.entry))
    });
    let n = regions.len();
    for i in 0..n {
        let mut parent = None;
        for j in 0..i {
            if regions[i].members.is_subset(&regions[j].members) {
                parent = Some(j);
            }
        }
        regions[i].parent = parent;
        regions[i].depth = parent.map(|p| regions[p].depth + 1).unwrap_or(0);
        if let Some(p) = parent {
            regions[p].children.push(i);
        }
    }
    regions
}

/// Regions ordered innermost first (children before parents).
pub fn innermost_first(cfg: &Cfg) -> Vec<RegionId> {
    let mut out = Vec::new();
    let mut stack = vec![(0usize, 0usize)];
    while let Some((r, i)) = stack.pop() {
        if i < cfg.regions[r].children.len() {
            stack.push((r, i + 1));
            stack.push((cfg.regions[r].children[i], 0));
        } else {
            out.push(r);
        }
    }
    out
}

/// Reachability check of the single-entry single-exit property: every edge
/// entering the region targets its entry, every edge leaving it starts at
/// its exit, and every member lies on an entry-to-exit path inside it.
pub fn is_sese(cfg: &Cfg, r: RegionId) -> bool {
    let reg = &cfg.regions[r];
    for b in cfg.live_blocks() {
        for &s in &cfg.blocks[b].succs {
            let from_in = reg.contains(b);
            let to_in = reg.contains(s);
            if !from_in && to_in && s != reg.entry {
                return false;
            }
            if from_in && !to_in && b != reg.exit {
                return false;
            }
        }
    }
    let forward = reach(cfg, reg, reg.entry, false);
    let backward = reach(cfg, reg, reg.exit, true);
    reg.members.iter().all(|m| forward.contains(m) && backward.contains(m))
}

fn reach(cfg: &Cfg, reg: &Region, from: BlockId, backward: bool) -> BTreeSet<BlockId> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![from];
    seen.insert(from);
    while let Some(v) = stack.pop() {
        let next = if backward {
            &cfg.blocks[v].preds
        } else {
            &cfg.blocks[v].succs
        };
        for &w in next {
            if reg.contains(w) && seen.insert(w) {
                stack.push(w);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::lower;
    use crate::frontend::load;
    use crate::frontend::resolve::BodyId;

    #[test]
    fn all_regions_are_sese_and_nest() {
        for src in [
            include_str!("../../fixtures/listing03.mgo"),
            include_str!("../../fixtures/listing15.mgo"),
            include_str!("../../fixtures/figure3.mgo"),
            include_str!("../../fixtures/listing13.mgo"),
        ] {
            let tp = load(src).unwrap();
            for b in tp.res.bodies.keys() {
                let c = lower(&tp, *b);
                assert_eq!(c.regions[0].kind, RegionKind::Function);
                for r in 0..c.regions.len() {
                    assert!(is_sese(&c, r), "region {r} not SESE");
                    if let Some(p) = c.regions[r].parent {
                        assert!(c.regions[r].members.is_subset(&c.regions[p].members));
                    }
                }
                let order = innermost_first(&c);
                assert_eq!(order.len(), c.regions.len());
                assert_eq!(*order.last().unwrap(), 0);
            }
        }
    }

    #[test]
    fn single_block_function_is_one_region() {
        let tp = load("package main\nfunc main() {\n}\n").unwrap();
        let c = lower(&tp, BodyId::Func(0));
        assert_eq!(c.regions.len(), 1);
    }

    #[test]
    fn listing3_nesting_inner_inside_outer() {
        // With both pairs straight-line, nesting shows up in the dominator
        // tree: the inner lock sits strictly between the outer pair.
        let tp = load(include_str!("../../fixtures/listing03.mgo")).unwrap();
        let c = lower(&tp, BodyId::Func(0));
        let b: Vec<_> = c.lu_points.iter().map(|p| p.block).collect();
        assert!(c.dom.strictly_dominates(b[0], b[1]));
        assert!(c.dom.strictly_dominates(b[2], b[3]));
        assert!(c.pdom.strictly_dominates(b[3], b[2]));
    }
}
