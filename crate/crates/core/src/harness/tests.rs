use super::*;
use crate::frontend::load;
use crate::rewrite::transform_source;
use crate::runtime::{AbortCode, Config};

fn prog(src: &str) -> Compiled {
    compile(&load(src).unwrap()).unwrap()
}

fn single(src: &str) -> Run {
    let c = prog(src);
    let opts = Options {
        config: Config {
            worker_count: 1,
            ..Config::default()
        },
        ..Options::default()
    };
    run_once(&c, &opts, &mut RandomChooser::new(0)).0
}

fn global<'a>(r: &'a Run, name: &str) -> &'a str {
    &r.footprint.globals.iter().find(|(n, _)| n == name).unwrap().1
}

#[test]
fn sequential_arithmetic_and_calls() {
    let r = single(
        "package main\nvar x int\nvar s string\nfunc sq(n int) int {\n\treturn n * n\n}\nfunc main() {\n\tfor i := 0; i < 4; i++ {\n\t\tx += sq(i)\n\t}\n\ts = \"a\" + \"b\"\n\tprint(x, s)\n}\n",
    );
    assert_eq!(r.footprint.outcome, Outcome::Completed);
    assert_eq!(global(&r, "x"), "14");
    assert_eq!(global(&r, "s"), "ab");
    assert_eq!(r.footprint.output, vec!["14 ab".to_string()]);
}

#[test]
fn structs_pointers_and_methods() {
    let r = single(
        "package main\ntype C struct {\n\tn int\n\tMutex\n}\nfunc (c *C) Inc() {\n\tc.Lock()\n\tc.n++\n\tc.Unlock()\n}\nfunc (c C) Get() int {\n\treturn c.n\n}\nvar out int\nvar p *C\nfunc main() {\n\tp = &C{n: 5}\n\tp.Inc()\n\tv := C{}\n\tv.Inc()\n\tv.Inc()\n\tout = p.Get() + v.Get()\n}\n",
    );
    assert_eq!(r.footprint.outcome, Outcome::Completed);
    assert_eq!(global(&r, "out"), "8");
    assert_eq!(global(&r, "p"), "&#1={n: 6, Mutex: {unlocked}}");
}

#[test]
fn maps_have_reference_semantics() {
    let r = single(
        "package main\nvar m map[string]int\nvar n int\nfunc main() {\n\tm = map[string]int{}\n\tk := m\n\tk[\"a\"] = 1\n\tm[\"b\"] += 2\n\tdelete(m, \"zz\")\n\tn = len(m) + m[\"missing\"]\n}\n",
    );
    assert_eq!(global(&r, "m"), "map#1[\"a\":1 \"b\":2]");
    assert_eq!(global(&r, "n"), "2");
}

#[test]
fn defers_run_in_reverse_order() {
    let r = single(
        "package main\nfunc f() {\n\tdefer print(1)\n\tdefer print(2)\n\tprint(0)\n}\nfunc main() {\n\tf()\n\tprint(3)\n}\n",
    );
    assert_eq!(r.footprint.output, vec!["0", "2", "1", "3"]);
}

#[test]
fn runtime_errors_become_panics() {
    let r = single("package main\ntype T struct {\n\tn int\n}\nvar p *T\nvar x int\nfunc main() {\n\tx = p.n\n}\n");
    assert!(matches!(r.footprint.outcome, Outcome::Panic(ref m) if m.contains("nil pointer")), "{:?}", r.footprint.outcome);
    let r = single("package main\nvar z int\nfunc main() {\n\tprint(1 / z)\n}\n");
    assert!(matches!(r.footprint.outcome, Outcome::Panic(ref m) if m.contains("divide by zero")));
    let r = single("package main\nfunc main() {\n\tm := &Mutex{}\n\tm.Unlock()\n}\n");
    assert!(matches!(r.footprint.outcome, Outcome::Panic(ref m) if m.contains("unlock of unlocked")));
}

#[test]
fn self_deadlock_is_reported() {
    let r = single("package main\nfunc main() {\n\tm := &Mutex{}\n\tm.Lock()\n\tm.Lock()\n}\n");
    assert_eq!(r.footprint.outcome, Outcome::Deadlock);
    assert!(r.deadlock.unwrap().contains("held by worker 0"));
}

// Statements are atomic steps, so the read and the write are separate.
const RACY: &str = "package main\nvar x int\nfunc main() {\n\tspawn func() {\n\t\tt := x\n\t\tx = t + 1\n\t}()\n\tspawn func() {\n\t\tt := x\n\t\tx = t + 1\n\t}()\n\tjoin()\n}\n";

#[test]
fn unsynchronized_increments_lose_updates() {
    let c = prog(RACY);
    let ex = explore(&c, &Options::default(), Mode::Exhaustive);
    assert!(ex.complete);
    let xs: Vec<String> = ex.footprints.keys().map(|f| f.globals[0].1.clone()).collect();
    assert_eq!(xs, vec!["1".to_string(), "2".to_string()]);
}

#[test]
fn locked_increments_have_one_footprint() {
    let c = prog(&RACY.replace("\t\tt := x\n\t\tx = t + 1\n", "\t\tmu.Lock()\n\t\tt := x\n\t\tx = t + 1\n\t\tmu.Unlock()\n").replace(
        "var x int\n",
        "var x int\nvar mu = &Mutex{}\n",
    ));
    let ex = explore(&c, &Options::default(), Mode::Exhaustive);
    assert!(ex.complete);
    assert_eq!(ex.footprints.len(), 1);
    assert_eq!(ex.footprints.keys().next().unwrap().globals[0].1, "2");
}

#[test]
fn private_steps_add_no_choice_points() {
    // Each worker does only private work: one interleaving with reduction.
    let src = "package main\nfunc main() {\n\tspawn func() {\n\t\ta := 0\n\t\ta++\n\t\ta++\n\t}()\n\tb := 0\n\tb++\n\tb++\n\tjoin()\n}\n";
    let c = prog(src);
    let reduced = explore(&c, &Options::default(), Mode::Exhaustive);
    let full = explore(
        &c,
        &Options {
            reduce: false,
            ..Options::default()
        },
        Mode::Exhaustive,
    );
    assert_eq!(reduced.footprints.len(), 1);
    assert_eq!(full.footprints.len(), 1);
    assert!(reduced.runs < full.runs, "{} vs {}", reduced.runs, full.runs);
}

#[test]
fn counter_reaches_two_hundred() {
    let src = "package main\nvar n int\nvar mu = &Mutex{}\nfunc main() {\n\tfor i := 0; i < 4; i++ {\n\t\tspawn func() {\n\t\t\tfor j := 0; j < 50; j++ {\n\t\t\t\tmu.Lock()\n\t\t\t\tn++\n\t\t\t\tmu.Unlock()\n\t\t\t}\n\t\t}()\n\t}\n\tjoin()\n}\n";
    let (t, _, _) = transform_source("c.mgo", src, None).unwrap();
    let c = prog(&t.rewritten);
    let ex = explore(&c, &Options::default(), Mode::Random { seed: 7, runs: 20 });
    assert_eq!(ex.footprints.len(), 1);
    assert_eq!(ex.footprints.keys().next().unwrap().globals[0].1, "200");
    assert!(ex.violations.is_empty(), "{:?}", ex.violations);
    assert!(ex.stats.commits > 0);
}

#[test]
fn transformed_listing_is_equivalent_exhaustively() {
    let src = include_str!("../../fixtures/listing13.mgo").replace("i < 10", "i < 2");
    let (t, _, _) = transform_source("l.mgo", &src, None).unwrap();
    let eq = check_equivalence(&prog(&src), &prog(&t.rewritten), &Options::default(), Mode::Exhaustive);
    assert!(eq.complete());
    assert!(eq.equivalent(), "{:?}", eq.divergent);
    assert!(eq.transformed.stats.commits > 0);
}

#[test]
fn broken_transformation_is_caught() {
    // Dropping the lock entirely is not an equivalent transformation.
    let locked = RACY.replace("\t\tt := x\n\t\tx = t + 1\n", "\t\tmu.Lock()\n\t\tt := x\n\t\tx = t + 1\n\t\tmu.Unlock()\n").replace(
        "var x int\n",
        "var x int\nvar mu = &Mutex{}\n",
    );
    let unlocked = RACY.replace("var x int\n", "var x int\nvar mu = &Mutex{}\n");
    let eq = check_equivalence(&prog(&locked), &prog(&unlocked), &Options::default(), Mode::Exhaustive);
    assert!(!eq.equivalent());
    let (f, trace) = &eq.divergent[0];
    assert_eq!(f.globals[0].1, "1");
    assert!(!trace.is_empty());
}

#[test]
fn mismatched_unlock_falls_back_to_the_lock() {
    let src = "package main\nvar x int\nvar a = &Mutex{}\nvar b = &Mutex{}\nfunc main() {\n\tvar ol OptiLock\n\ta.Lock()\n\tol.FastLock(b)\n\tx++\n\tol.FastUnlock(a)\n\tb.Unlock()\n}\n";
    let c = prog(src);
    let opts = Options::default();
    let (run, m) = run_once(&c, &opts, &mut RandomChooser::new(1));
    assert_eq!(run.footprint.outcome, Outcome::Completed, "{:?}", run.deadlock);
    assert_eq!(run.stats.aborts.get(AbortCode::MutexMismatchError), 1);
    assert_eq!(run.stats.slowpath_acquisitions, 1);
    assert_eq!(run.footprint.globals[0].1, "1");
    assert!(m.violations.is_empty(), "{:?}", m.violations);
}

#[test]
fn observations_name_allocation_sites() {
    let src = include_str!("../../fixtures/listing09.mgo");
    let c = prog(src);
    let (_, m) = run_once(&c, &Options::default(), &mut RandomChooser::new(0));
    let pts = crate::pointsto::solve(&c.tp);
    assert_eq!(m.observations.len(), 4);
    for (site, loc) in &m.observations {
        let Site::Mutex(id) = site else { panic!() };
        assert!(pts.of(*id).contains(loc), "{loc:?} not in {:?}", pts.of(*id));
    }
}

#[test]
fn footprint_hash_is_stable() {
    let a = single(RACY);
    let b = single(RACY);
    assert_eq!(a.footprint.hash(), b.footprint.hash());
    assert_eq!(a.footprint.hash().len(), 64);
}
