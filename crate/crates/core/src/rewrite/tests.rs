use super::*;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/fixtures/{name}.mgo", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn rewrite(src: &str) -> Transformed {
    transform_source("t.mgo", src, None).unwrap().0
}

const ALL: [&str; 12] = [
    "listing01", "listing03", "listing05", "listing07", "listing09", "listing11", "listing13", "listing15",
    "listing16", "figure3", "figure4", "figure5",
];

#[test]
fn listing1_adds_one_decl_and_changes_two_calls() {
    let t = rewrite(&fixture("listing01"));
    assert!(t.rewritten.contains("\t__elide_l0 := OptiLock{}\n\tm := &Mutex{}\n"));
    assert!(t.rewritten.contains("\t__elide_l0.FastLock(m)\n"));
    assert!(t.rewritten.contains("\t__elide_l0.FastUnlock(m)\n"));
    let added = t.diff.lines().filter(|l| l.starts_with('+') && !l.starts_with("+++")).count();
    let removed = t.diff.lines().filter(|l| l.starts_with('-') && !l.starts_with("---")).count();
    assert_eq!((added, removed), (3, 2));
}

#[test]
fn listing9_value_receiver_takes_address() {
    let t = rewrite(&fixture("listing09"));
    assert!(t.rewritten.contains("__elide_l0.FastLock(m)"));
    assert!(t.rewritten.contains("__elide_l0.FastLock(&n)"));
    assert!(t.rewritten.contains("__elide_l0.FastUnlock(&n)"));
    assert_eq!(t.rewritten.matches("OptiLock{}").count(), 1);
}

#[test]
fn listing11_anonymous_field_is_suffixed() {
    let t = rewrite(&fixture("listing11"));
    assert!(t.rewritten.contains("__elide_l0.FastLock(a.Mutex)"));
    assert!(t.rewritten.contains("__elide_l0.FastUnlock(a.Mutex)"));
}

#[test]
fn listing13_decl_goes_into_the_closure() {
    let t = rewrite(&fixture("listing13"));
    assert!(t.rewritten.contains("spawn func() {\n\t\t\t__elide_l0 := OptiLock{}\n\t\t\t__elide_l0.FastLock(m)\n"));
    assert!(t.rewritten.contains("func main() {\n\tm := &Mutex{}\n"));
}

#[test]
fn listing7_defer_is_edited_in_place() {
    let t = rewrite(&fixture("listing07"));
    assert!(t.rewritten.contains(
        "\t__elide_l0 := OptiLock{}\n\tm := &Mutex{}\n\tdefer __elide_l0.FastUnlock(m)\n\t__elide_l0.FastLock(m)\n"
    ));
}

#[test]
fn rejected_only_programs_give_empty_patch() {
    for name in ["listing15", "listing16", "figure3", "figure4"] {
        let t = rewrite(&fixture(name));
        assert!(t.plan.is_empty(), "{name}");
        assert_eq!(t.diff, "");
        assert_eq!(t.rewritten, t.original);
    }
}

#[test]
fn two_pairs_share_one_decl() {
    let src = "package main\nvar n int\nfunc main() {\n\tm := &Mutex{}\n\tm.Lock()\n\tn++\n\tm.Unlock()\n\tm.Lock()\n\tn--\n\tm.Unlock()\n}\n";
    let t = rewrite(src);
    assert_eq!(t.plan.decls.len(), 1);
    assert_eq!(t.plan.pairs.len(), 2);
    assert_eq!(t.rewritten.matches("OptiLock{}").count(), 1);
    assert_eq!(t.rewritten.matches("__elide_l0.Fast").count(), 4);
}

#[test]
fn nested_accepted_pairs_use_distinct_variables() {
    let t = rewrite(&fixture("listing03").replace("\tif alias {\n\t\tb = a\n\t}\n", ""));
    assert!(t.rewritten.contains("__elide_l0.FastLock(a)"));
    assert!(t.rewritten.contains("__elide_l1.FastLock(b)"));
    assert!(t.rewritten.contains("\t__elide_l0 := OptiLock{}\n\t__elide_l1 := OptiLock{}\n"));
}

#[test]
fn name_collision_gets_a_suffix() {
    let src = "package main\nvar __elide_l0 int\nfunc main() {\n\tm := &Mutex{}\n\tm.Lock()\n\t__elide_l0++\n\tm.Unlock()\n}\n";
    let t = rewrite(src);
    assert!(t.rewritten.contains("__elide_l0_1 := OptiLock{}"));
    assert!(t.rewritten.contains("__elide_l0_1.FastLock(m)"));
}

#[test]
fn single_line_body_gets_its_own_lines() {
    let src = "package main\nvar m = &Mutex{}\nfunc f() { m.Lock(); m.Unlock() }\n";
    let t = rewrite(src);
    assert!(t.rewritten.contains("func f() {\n\t__elide_l0 := OptiLock{}\n\t__elide_l0.FastLock(m)"), "{}", t.rewritten);
}

#[test]
fn reparse_census_and_idempotence() {
    for name in ALL {
        let src = fixture(name);
        let (t, a, tp) = transform_source(name, &src, None).unwrap();
        let re = load(&t.rewritten).unwrap();
        let transformed_points: usize = a.accepted().count() * 2;
        assert_eq!(re.res.mutex_exprs.len(), tp.res.mutex_exprs.len() - transformed_points, "{name}");
        let again = rewrite(&t.rewritten);
        assert_eq!(again.diff, "", "{name}");
        assert_eq!(apply_patch(&src, &t.diff).unwrap(), t.rewritten, "{name}");
    }
}

#[test]
fn untouched_lines_are_byte_identical() {
    for name in ALL {
        let t = rewrite(&fixture(name));
        let edited: Vec<(u32, u32)> = t.plan.edits().iter().map(|e| (e.start, e.end)).collect();
        for (i, line) in t.original.split_inclusive('\n').enumerate() {
            let start: usize = t.original.split_inclusive('\n').take(i).map(str::len).sum();
            let end = start + line.len();
            let touched = edited.iter().any(|&(s, e)| (s as usize) < end && (e as usize) >= start && !(s == e && s as usize == start));
            if !touched {
                assert!(t.rewritten.contains(line), "{name}: {line:?}");
            }
        }
    }
}

#[test]
fn nested_pairs_in_single_line_body() {
    let src = "package main\nvar a = &Mutex{}\nvar b = &Mutex{}\nfunc f() { a.Lock(); b.Lock(); b.Unlock(); a.Unlock() }\n";
    let t = rewrite(src);
    assert!(
        t.rewritten.contains("func f() {\n\t__elide_l0 := OptiLock{}\n\t__elide_l1 := OptiLock{}\n\t__elide_l0.FastLock(a)"),
        "{}",
        t.rewritten
    );
}
