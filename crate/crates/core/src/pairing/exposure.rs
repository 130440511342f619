//! Downward-exposed locks and upward-exposed unlocks of a region.

use std::collections::BTreeSet;

use crate::cfg::{BlockId, Cfg, LuId, RegionId};

/// True when some path from lock `l` reaches the exit of `region` without
/// passing an unlock-point whose mutex set intersects `l`'s.
pub fn lock_exposed(cfg: &Cfg, region: RegionId, l: LuId, inter: &dyn Fn(LuId, LuId) -> bool) -> bool {
    let reg = &cfg.regions[region];
    let start = cfg.lu_points[l].block;
    let blocked = |b: BlockId| {
        cfg.lu_at_block(b)
            .is_some_and(|x| !cfg.lu_points[x].op.is_lock() && inter(l, x))
    };
    search(start, reg.exit, |b| &cfg.blocks[b].succs, |b| reg.contains(b) && !blocked(b))
}

/// True when some path from the entry of `region` reaches unlock `u`
/// without passing a lock-point whose mutex set intersects `u`'s.
pub fn unlock_exposed(cfg: &Cfg, region: RegionId, u: LuId, inter: &dyn Fn(LuId, LuId) -> bool) -> bool {
    let reg = &cfg.regions[region];
    let start = cfg.lu_points[u].block;
    let blocked = |b: BlockId| {
        cfg.lu_at_block(b)
            .is_some_and(|x| cfg.lu_points[x].op.is_lock() && inter(u, x))
    };
    search(start, reg.entry, |b| &cfg.blocks[b].preds, |b| reg.contains(b) && !blocked(b))
}

/// Whether `target` is reachable from `start` stepping only onto allowed
/// blocks. `start` itself counts as reached.
fn search<'a>(
    start: BlockId,
    target: BlockId,
    next: impl Fn(BlockId) -> &'a Vec<BlockId>,
    allowed: impl Fn(BlockId) -> bool,
) -> bool {
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        if v == target {
            return true;
        }
        for &w in next(v) {
            if allowed(w) && seen.insert(w) {
                stack.push(w);
            }
        }
    }
    false
}

/// DELock of a region: its downward-exposed lock-points.
pub fn delock(cfg: &Cfg, region: RegionId, inter: &dyn Fn(LuId, LuId) -> bool) -> BTreeSet<LuId> {
    points_in(cfg, region, true)
        .filter(|&l| lock_exposed(cfg, region, l, inter))
        .collect()
}

/// UEUnlock of a region: its upward-exposed unlock-points.
pub fn ueunlock(cfg: &Cfg, region: RegionId, inter: &dyn Fn(LuId, LuId) -> bool) -> BTreeSet<LuId> {
    points_in(cfg, region, false)
        .filter(|&u| unlock_exposed(cfg, region, u, inter))
        .collect()
}

fn points_in(cfg: &Cfg, region: RegionId, locks: bool) -> impl Iterator<Item = LuId> + '_ {
    let reg = &cfg.regions[region];
    (0..cfg.lu_points.len()).filter(move |&p| {
        cfg.lu_points[p].op.is_lock() == locks && reg.contains(cfg.lu_points[p].block)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::lower;
    use crate::frontend::load;
    use crate::frontend::resolve::BodyId;
    use crate::pointsto::solve;

    fn run(src: &str) -> (Cfg, BTreeSet<LuId>, BTreeSet<LuId>) {
        let tp = load(src).unwrap();
        let pts = solve(&tp);
        let cfg = lower(&tp, BodyId::Func(0));
        let ms: Vec<usize> = cfg.lu_points.iter().map(|p| p.mutex).collect();
        let inter = |a: LuId, b: LuId| pts.intersects(ms[a], ms[b]);
        let d = delock(&cfg, 0, &inter);
        let u = ueunlock(&cfg, 0, &inter);
        (cfg, d, u)
    }

    #[test]
    fn adjacent_pair_is_not_exposed() {
        let (_, d, u) = run("package main\nfunc f() {\n\tm := &Mutex{}\n\tm.Lock()\n\tm.Unlock()\n}\n");
        assert!(d.is_empty() && u.is_empty());
    }

    #[test]
    fn arm_without_unlock_exposes_lock() {
        let (_, d, u) = run(
            "package main\nvar c bool\nfunc f() {\n\tm := &Mutex{}\n\tm.Lock()\n\tif c {\n\t\tm.Unlock()\n\t}\n}\n",
        );
        assert_eq!(d, BTreeSet::from([0]));
        assert!(u.is_empty());
    }

    #[test]
    fn leading_unlock_is_exposed() {
        let (_, d, u) = run("package main\nfunc f() {\n\tm := &Mutex{}\n\tm.Unlock()\n\tm.Lock()\n}\n");
        assert_eq!(u, BTreeSet::from([0]));
        assert_eq!(d, BTreeSet::from([1]));
    }

    #[test]
    fn unlock_behind_one_locking_arm_is_exposed() {
        let (_, _, u) = run(
            "package main\nvar c bool\nfunc f() {\n\tm := &Mutex{}\n\tif c {\n\t\tm.Lock()\n\t}\n\tm.Unlock()\n}\n",
        );
        assert_eq!(u, BTreeSet::from([1]));
    }
}
