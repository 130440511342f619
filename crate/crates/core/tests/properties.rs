//! Whole-pipeline invariants over generated two-worker programs.

use proptest::prelude::*;

use elide::frontend::load;
use elide::harness::{check_equivalence, compile, explore, Compiled, Mode, Options};
use elide::rewrite::{apply_patch, transform_source};
use elide::runtime::Config;

#[derive(Clone, Debug)]
enum Stmt {
    Op(u8),
    Locked(bool, Vec<Stmt>),
}

fn op() -> impl Strategy<Value = Stmt> {
    (0u8..4).prop_map(Stmt::Op)
}

fn stmt() -> impl Strategy<Value = Stmt> {
    op().prop_recursive(2, 6, 3, |inner| {
        prop_oneof![
            1 => op(),
            2 => (any::<bool>(), prop::collection::vec(inner, 1..3)).prop_map(|(m, b)| Stmt::Locked(m, b)),
        ]
    })
}

fn body() -> impl Strategy<Value = Vec<Stmt>> {
    prop::collection::vec(stmt(), 1..3)
}

fn render(stmts: &[Stmt], depth: usize, out: &mut String) {
    let tabs = "\t".repeat(depth);
    for s in stmts {
        match s {
            Stmt::Op(0) => out.push_str(&format!("{tabs}x = x + 1\n")),
            Stmt::Op(1) => out.push_str(&format!("{tabs}y = y + x\n")),
            Stmt::Op(2) => out.push_str(&format!("{tabs}if x > 1 {{\n{tabs}\ty = y * 2\n{tabs}}}\n")),
            Stmt::Op(_) => out.push_str(&format!("{tabs}print(x)\n")),
            Stmt::Locked(m, inner) => {
                let m = if *m { "a" } else { "b" };
                out.push_str(&format!("{tabs}{m}.Lock()\n"));
                render(inner, depth, out);
                out.push_str(&format!("{tabs}{m}.Unlock()\n"));
            }
        }
    }
}

fn program(alias: bool, w1: &[Stmt], w2: &[Stmt]) -> String {
    let mut s = format!(
        "package main\nvar x int\nvar y int\nvar alias = {alias}\nvar a = &Mutex{{}}\nvar b = &Mutex{{}}\nfunc main() {{\n\tif alias {{\n\t\tb = a\n\t}}\n"
    );
    for w in [w1, w2] {
        s.push_str("\tspawn func() {\n");
        render(w, 2, &mut s);
        s.push_str("\t}()\n");
    }
    s.push_str("\tjoin()\n}\n");
    s
}

fn prog(src: &str) -> Compiled {
    compile(&load(src).unwrap()).unwrap()
}

fn opts(workers: usize) -> Options {
    Options {
        config: Config {
            worker_count: workers,
            ..Config::default()
        },
        max_interleavings: 20_000,
        ..Options::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn patch_applies_exactly_and_transform_is_idempotent(alias: bool, w1 in body(), w2 in body()) {
        let src = program(alias, &w1, &w2);
        let (t, _, _) = transform_source("p.mgo", &src, None).unwrap();
        prop_assert_eq!(&apply_patch(&src, &t.diff).unwrap(), &t.rewritten);
        let (again, _, _) = transform_source("p.mgo", &t.rewritten, None).unwrap();
        prop_assert_eq!(again.diff, "");
    }

    #[test]
    fn transformed_footprints_are_contained(alias: bool, w1 in body(), w2 in body()) {
        let src = program(alias, &w1, &w2);
        let (t, _, _) = transform_source("p.mgo", &src, None).unwrap();
        let eq = check_equivalence(&prog(&src), &prog(&t.rewritten), &opts(2), Mode::Exhaustive);
        prop_assert!(eq.transformed.violations.is_empty(), "{:?}\n{}", eq.transformed.violations, t.rewritten);
        if eq.complete() {
            prop_assert!(eq.equivalent(), "{}\n{}", eq.divergent[0].0.summary(), t.rewritten);
        }
    }

    #[test]
    fn single_worker_transform_is_exact(alias: bool, w1 in body(), w2 in body()) {
        let src = program(alias, &w1, &w2);
        let (t, _, _) = transform_source("p.mgo", &src, None).unwrap();
        let o = explore(&prog(&src), &opts(1), Mode::Exhaustive);
        let n = explore(&prog(&t.rewritten), &opts(1), Mode::Exhaustive);
        prop_assert_eq!(n.stats.tx_attempts, 0);
        if o.complete && n.complete {
            let a: Vec<_> = o.footprints.keys().collect();
            let b: Vec<_> = n.footprints.keys().collect();
            prop_assert_eq!(a, b);
        }
    }
}
