use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::cfg::lower;
use crate::frontend::load;
use crate::pointsto::solve;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/fixtures/{name}.mgo", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn run(src: &str) -> (TypedProgram, Analysis) {
    let tp = load(src).unwrap();
    let a = analyze(&tp, None);
    (tp, a)
}

/// `(lock text, unlock text, rejection)` per pair, rendered by source line.
fn summary(tp: &TypedProgram, a: &Analysis) -> Vec<(usize, usize, Option<Reason>)> {
    a.pairs()
        .map(|p| {
            let line = |m: MutexExprId| tp.program.line_col(tp.res.mutex_exprs[m].call_span.start).0;
            (line(p.lock), line(p.unlock), p.rejection)
        })
        .collect()
}

fn line_of(tp: &TypedProgram, needle: &str) -> usize {
    let off = tp.program.source.find(needle).unwrap();
    tp.program.line_col(off as u32).0
}

#[test]
fn figure3_lock_is_downward_exposed() {
    let (_, a) = run(&fixture("figure3"));
    let cfg = &a.bodies[0].cfg;
    let ms: Vec<usize> = cfg.lu_points.iter().map(|p| p.mutex).collect();
    let inter = |x: LuId, y: LuId| a.pts.intersects(ms[x], ms[y]);
    let d = exposure::delock(cfg, 0, &inter);
    let lock = cfg.lu_points.iter().position(|p| p.op.is_lock()).unwrap();
    assert!(d.contains(&lock));
    assert_eq!(a.accepted().count(), 0);
    assert!(!a.pts.intersects(0, 1));
    assert!(a.pts.intersects(0, 2));
}

#[test]
fn figure4_unlock_is_not_upward_exposed() {
    let (_, a) = run(&fixture("figure4"));
    let cfg = &a.bodies[0].cfg;
    let ms: Vec<usize> = cfg.lu_points.iter().map(|p| p.mutex).collect();
    let inter = |x: LuId, y: LuId| a.pts.intersects(ms[x], ms[y]);
    let u = exposure::ueunlock(cfg, 0, &inter);
    let unlock = cfg.lu_points.iter().position(|p| !p.op.is_lock()).unwrap();
    assert!(!u.contains(&unlock));
    assert!(u.is_empty());
}

#[test]
fn figure5_pair_is_feasible() {
    let (tp, a) = run(&fixture("figure5"));
    let s = summary(&tp, &a);
    assert_eq!(s, vec![(line_of(&tp, "a.Lock"), line_of(&tp, "b.Unlock"), None)]);
}

#[test]
fn listing15_and_16_report_dominance() {
    for name in ["listing15", "listing16"] {
        let (_, a) = run(&fixture(name));
        assert_eq!(a.accepted().count(), 0, "{name}");
        assert!(a.unpaired().count() > 0);
        assert!(a.unpaired().all(|u| u.reason == Reason::Dominance), "{name}");
    }
}

#[test]
fn listing3_inner_pair_only() {
    let (tp, a) = run(&fixture("listing03"));
    let s = summary(&tp, &a);
    let (al, bl) = (line_of(&tp, "a.Lock"), line_of(&tp, "b.Lock"));
    let (bu, au) = (line_of(&tp, "b.Unlock"), line_of(&tp, "a.Unlock"));
    assert_eq!(s, vec![(bl, bu, None), (al, au, Some(Reason::NestedConflict))]);
}

#[test]
fn listing5_hand_over_hand_inner_pair_only() {
    let (tp, a) = run(&fixture("listing05"));
    let s = summary(&tp, &a);
    let (al, bl) = (line_of(&tp, "a.Lock"), line_of(&tp, "b.Lock"));
    let (au, bu) = (line_of(&tp, "a.Unlock"), line_of(&tp, "b.Unlock"));
    assert_eq!(s, vec![(bl, au, None), (al, bu, Some(Reason::NestedConflict))]);
}

#[test]
fn listing7_defer_pair() {
    let (tp, a) = run(&fixture("listing07"));
    let acc: Vec<&LuPair> = a.accepted().collect();
    assert_eq!(acc.len(), 1);
    assert!(acc[0].via_defer);
    let c = a.counters(&tp);
    assert_eq!((c.defer_unlocks, c.transformed_with_defer), (1, 1));
}

#[test]
fn empty_program_counts_nothing() {
    let (tp, a) = run("package main\n");
    assert_eq!(a.counters(&tp), Counters::default());
}

const HELPERS: &str = "package main\nvar counter int\nvar g = &Mutex{}\nfunc noisy() {\n\tprint(counter)\n}\nfunc pure(x int) int {\n\treturn x + 1\n}\nfunc locker() {\n\tg.Lock()\n\tg.Unlock()\n}\n";

fn with_main(body: &str) -> String {
    format!("{HELPERS}func main() {{\n{body}}}\n")
}

#[test]
fn callee_with_print_is_interproc_io() {
    let (tp, a) = run(&with_main("\tm := &Mutex{}\n\tm.Lock()\n\tnoisy()\n\tm.Unlock()\n"));
    let main_pair = a.pairs().find(|p| tp.body_name(p.body) == "main.main").unwrap();
    assert_eq!(main_pair.rejection, Some(Reason::InterprocIo));
}

#[test]
fn callee_locking_alias_is_interproc_alias() {
    let (tp, a) = run(&with_main("\tg.Lock()\n\tlocker()\n\tg.Unlock()\n"));
    let main_pair = a.pairs().find(|p| tp.body_name(p.body) == "main.main").unwrap();
    assert_eq!(main_pair.rejection, Some(Reason::InterprocAlias));
}

#[test]
fn callee_locking_other_mutex_is_fine() {
    let (tp, a) = run(&with_main("\tm := &Mutex{}\n\tm.Lock()\n\tlocker()\n\tcounter = pure(counter)\n\tm.Unlock()\n"));
    let main_pair = a.pairs().find(|p| tp.body_name(p.body) == "main.main").unwrap();
    assert_eq!(main_pair.rejection, None);
}

#[test]
fn counters_three_pairs_one_io() {
    let (tp, a) = run(&with_main(
        "\tm := &Mutex{}\n\tm.Lock()\n\tcounter++\n\tm.Unlock()\n\tm.Lock()\n\tprint(counter)\n\tm.Unlock()\n",
    ));
    // locker's pair plus two in main.
    let c = a.counters(&tp);
    assert_eq!((c.candidates, c.rejected_io, c.transformed), (3, 1, 2));
    assert!(c.is_partition());
}

/// One negative fixture per condition: each is rejected by exactly the
/// named check and would be accepted without it.
#[test]
fn each_condition_has_a_negative_fixture() {
    let cases: Vec<(&str, String, Reason)> = vec![
        (
            "nested-conflict",
            "package main\nfunc main() {\n\tm := &Mutex{}\n\tn := m\n\tm.Lock()\n\tn.Lock()\n\tn.Unlock()\n\tm.Unlock()\n}\n".into(),
            Reason::NestedConflict,
        ),
        (
            "io",
            "package main\nfunc main() {\n\tm := &Mutex{}\n\tm.Lock()\n\tprint(1)\n\tm.Unlock()\n}\n".into(),
            Reason::Io,
        ),
        ("interproc-io", with_main("\tm := &Mutex{}\n\tm.Lock()\n\tnoisy()\n\tm.Unlock()\n"), Reason::InterprocIo),
        ("interproc-alias", with_main("\tg.Lock()\n\tlocker()\n\tg.Unlock()\n"), Reason::InterprocAlias),
        (
            "multiple-defer",
            "package main\nfunc main() {\n\tm := &Mutex{}\n\tn := &Mutex{}\n\tm.Lock()\n\tdefer m.Unlock()\n\tn.Lock()\n\tdefer n.Unlock()\n}\n".into(),
            Reason::MultipleDefer,
        ),
    ];
    for (name, src, reason) in cases {
        let (tp, a) = run(&src);
        let rejected: Vec<&LuPair> = a
            .pairs()
            .filter(|p| tp.body_name(p.body) == "main.main" && p.rejection.is_some())
            .collect();
        assert!(!rejected.is_empty(), "{name}");
        for p in rejected {
            assert_eq!(p.rejection, Some(reason), "{name}");
            let failing: Vec<&str> = p.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
            assert_eq!(failing.len(), 1, "{name}: {failing:?}");
        }
    }
}

#[test]
fn profile_filter_threshold() {
    let src = "package main\nvar counter int\nfunc Get() {\n\tm := &Mutex{}\n\tm.Lock()\n\tcounter++\n\tm.Unlock()\n}\n";
    let tp = load(src).unwrap();
    let mk = |f: f64| {
        Profile::parse(&format!(
            r#"{{"total_weight":100,"entries":[{{"function":"main.Get","cumulative_fraction":{f}}}]}}"#
        ))
        .unwrap()
    };
    let cold = analyze(&tp, Some(&mk(0.009)));
    assert_eq!(cold.pairs().next().unwrap().rejection, Some(Reason::Profile));
    let c = cold.counters(&tp);
    assert_eq!((c.transformed, c.transformed_after_profile), (1, 0));
    let hot = analyze(&tp, Some(&mk(0.30)));
    assert!(hot.pairs().next().unwrap().accepted());
    assert!(analyze(&tp, None).pairs().next().unwrap().accepted());
}

#[test]
fn closure_split_is_cross_closure() {
    let src = "package main\nfunc main() {\n\tm := &Mutex{}\n\tm.Lock()\n\tspawn func() {\n\t\tm.Unlock()\n\t}()\n}\n";
    let (_, a) = run(src);
    assert!(a.unpaired().all(|u| u.reason == Reason::CrossClosure));
    assert_eq!(a.unpaired().count(), 2);
}

#[test]
fn explain_reports_reason_chain() {
    let (tp, a) = run(&fixture("listing03"));
    let text = explain(&tp, &a, line_of(&tp, "a.Lock")).unwrap();
    assert!(text.contains("[FAIL] nested-conflict"), "{text}");
    assert!(text.contains("result: rejected (nested-conflict)"));
    let text = explain(&tp, &a, line_of(&tp, "b.Lock")).unwrap();
    assert!(text.contains("result: transformed"));
    assert!(explain(&tp, &a, 1).is_none());
}

#[test]
fn analysis_is_deterministic() {
    let src = fixture("listing05");
    let (tp, a) = run(&src);
    let (tp2, b) = run(&src);
    assert_eq!(summary(&tp, &a), summary(&tp2, &b));
    assert_eq!(a.counters(&tp), b.counters(&tp2));
}

// Path-enumeration oracle for the exposure sets on loop-free programs.

fn program(ops: &[(usize, bool)], wrap: &[bool]) -> String {
    let mut s = String::from("package main\nvar c bool\nfunc main() {\n\ta := &Mutex{}\n\tb := &Mutex{}\n\tif c {\n\t\tb = a\n\t}\n\td := &Mutex{}\n");
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

fn all_paths(cfg: &Cfg, from: BlockId, to: BlockId, forward: bool) -> Vec<Vec<BlockId>> {
    let mut out = Vec::new();
    let mut path = vec![from];
    fn go(cfg: &Cfg, to: BlockId, forward: bool, path: &mut Vec<BlockId>, out: &mut Vec<Vec<BlockId>>) {
        let v = *path.last().unwrap();
        if v == to {
            out.push(path.clone());
            return;
        }
        let next = if forward { &cfg.blocks[v].succs } else { &cfg.blocks[v].preds };
        for &w in next {
            path.push(w);
            go(cfg, to, forward, path, out);
            path.pop();
        }
    }
    go(cfg, to, forward, &mut path, &mut out);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn exposure_matches_path_enumeration(
        ops in prop::collection::vec((0usize..3, any::<bool>()), 1..7),
        wrap in prop::collection::vec(any::<bool>(), 7),
    ) {
        let tp = load(&program(&ops, &wrap)).unwrap();
        let pts = solve(&tp);
        let cfg = lower(&tp, BodyId::Func(0));
        let ms: Vec<usize> = cfg.lu_points.iter().map(|p| p.mutex).collect();
        let inter = |x: LuId, y: LuId| pts.intersects(ms[x], ms[y]);
        for r in 0..cfg.regions.len() {
            let reg = &cfg.regions[r];
            let d = exposure::delock(&cfg, r, &inter);
            let u = exposure::ueunlock(&cfg, r, &inter);
            for (p, lp) in cfg.lu_points.iter().enumerate() {
                if !reg.contains(lp.block) {
                    continue;
                }
                let (target, forward) = if lp.op.is_lock() { (reg.exit, true) } else { (reg.entry, false) };
                let exposed = all_paths(&cfg, lp.block, target, forward).iter().any(|path| {
                    path[1..].iter().all(|&b| match cfg.lu_at_block(b) {
                        Some(x) => cfg.lu_points[x].op.is_lock() == lp.op.is_lock() || !inter(p, x),
                        None => true,
                    })
                });
                let got = if lp.op.is_lock() { d.contains(&p) } else { u.contains(&p) };
                prop_assert_eq!(got, exposed);
            }
        }
    }
}

#[test]
fn accepted_sections_do_not_cross() {
    for name in ["listing01", "listing03", "listing05", "listing07", "listing09", "listing11", "listing13", "figure5"] {
        let (_, a) = run(&fixture(name));
        for b in &a.bodies {
            let secs: Vec<BTreeSet<BlockId>> = b
                .pairs
                .iter()
                .filter(|p| p.accepted())
                .map(|p| p.cs_blocks.iter().copied().collect())
                .collect();
            for (i, x) in secs.iter().enumerate() {
                for y in &secs[i + 1..] {
                    assert!(x.is_disjoint(y) || x.is_subset(y) || y.is_subset(x), "{name}");
                }
            }
        }
    }
}

#[test]
fn existing_optimistic_section_counts_as_crossing() {
    // The b section was elided earlier; the a section overlaps it.
    let src = "package main\nvar a = &Mutex{}\nvar b = &Mutex{}\nfunc main() {\n\tl := OptiLock{}\n\ta.Lock()\n\tl.FastLock(b)\n\ta.Unlock()\n\tl.FastUnlock(b)\n}\n";
    let (tp, a) = run(src);
    assert_eq!(summary(&tp, &a), vec![(6, 8, Some(Reason::NestedConflict))]);
    let text = explain(&tp, &a, 6).unwrap();
    assert!(text.contains("optimistic section of l"), "{text}");
    // A whole optimistic section inside is fine.
    let nested = src.replace("\ta.Unlock()\n\tl.FastUnlock(b)\n", "\tl.FastUnlock(b)\n\ta.Unlock()\n");
    let (tp, a) = run(&nested);
    assert_eq!(summary(&tp, &a), vec![(6, 9, None)]);
}
