//! Inclusion-constraint solver.

use std::collections::{BTreeSet, HashMap};

use super::AbsLoc;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// `loc ∈ pts(dst)`
    AddrOf { dst: AbsLoc, loc: AbsLoc },
    /// `pts(dst) ⊇ pts(src)`
    Copy { dst: AbsLoc, src: AbsLoc },
    /// `∀o ∈ pts(src): pts(dst) ⊇ pts(o.path)`
    Load {
        dst: AbsLoc,
        src: AbsLoc,
        path: Vec<String>,
    },
    /// `∀o ∈ pts(dst): pts(o.path) ⊇ pts(src)`
    Store {
        dst: AbsLoc,
        path: Vec<String>,
        src: AbsLoc,
    },
    /// `∀o ∈ pts(src): o.path ∈ pts(dst)`
    FieldAddr {
        dst: AbsLoc,
        src: AbsLoc,
        path: Vec<String>,
    },
}

pub type PtsMap = HashMap<AbsLoc, BTreeSet<AbsLoc>>;

fn union_into(pts: &mut PtsMap, dst: &AbsLoc, items: impl IntoIterator<Item = AbsLoc>) -> bool {
    let set = pts.entry(dst.clone()).or_default();
    let before = set.len();
    set.extend(items);
    set.len() != before
}

fn get(pts: &PtsMap, n: &AbsLoc) -> Vec<AbsLoc> {
    pts.get(n).map(|s| s.iter().cloned().collect()).unwrap_or_default()
}

/// Least fixed point of `constraints` by naive iteration.
pub fn solve(constraints: &[Constraint]) -> PtsMap {
    let mut pts: PtsMap = HashMap::new();
    let mut changed = true;
    while changed {
        changed = false;
        for c in constraints {
            match c {
                Constraint::AddrOf { dst, loc } => {
                    changed |= union_into(&mut pts, dst, [loc.clone()]);
                }
                Constraint::Copy { dst, src } => {
                    let s = get(&pts, src);
                    changed |= union_into(&mut pts, dst, s);
                }
                Constraint::Load { dst, src, path } => {
                    for o in get(&pts, src) {
                        let s = get(&pts, &o.extend(path));
                        changed |= union_into(&mut pts, dst, s);
                    }
                }
                Constraint::Store { dst, path, src } => {
                    let s = get(&pts, src);
                    for o in get(&pts, dst) {
                        changed |= union_into(&mut pts, &o.extend(path), s.clone());
                    }
                }
                Constraint::FieldAddr { dst, src, path } => {
                    let locs: Vec<AbsLoc> = get(&pts, src).iter().map(|o| o.extend(path)).collect();
                    changed |= union_into(&mut pts, dst, locs);
                }
            }
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(i: u32) -> AbsLoc {
        AbsLoc::Var(i)
    }

    fn h(i: u32) -> AbsLoc {
        AbsLoc::Heap(i)
    }

    #[test]
    fn copy_and_field_flow() {
        // p = &h1; q = p; q.f = &h2; r = p.f
        let cs = vec![
            Constraint::AddrOf { dst: v(0), loc: h(1) },
            Constraint::Copy { dst: v(1), src: v(0) },
            Constraint::AddrOf { dst: v(9), loc: h(2) },
            Constraint::Store {
                dst: v(1),
                path: vec!["f".into()],
                src: v(9),
            },
            Constraint::Load {
                dst: v(2),
                src: v(0),
                path: vec!["f".into()],
            },
        ];
        let pts = solve(&cs);
        assert_eq!(pts[&v(2)], [h(2)].into_iter().collect());
    }

    fn arb_constraint() -> impl Strategy<Value = Constraint> {
        let node = (0u32..5).prop_map(AbsLoc::Var);
        let obj = (0u32..3).prop_map(AbsLoc::Heap);
        let path = prop::collection::vec(prop::sample::select(vec!["f", "g"]), 0..2)
            .prop_map(|p| p.into_iter().map(String::from).collect::<Vec<_>>());
        prop_oneof![
            (node.clone(), obj).prop_map(|(dst, loc)| Constraint::AddrOf { dst, loc }),
            (node.clone(), node.clone()).prop_map(|(dst, src)| Constraint::Copy { dst, src }),
            (node.clone(), node.clone(), path.clone())
                .prop_map(|(dst, src, path)| Constraint::Load { dst, src, path }),
            (node.clone(), path.clone(), node.clone())
                .prop_map(|(dst, path, src)| Constraint::Store { dst, path, src }),
            (node.clone(), node, path).prop_map(|(dst, src, path)| Constraint::FieldAddr { dst, src, path }),
        ]
    }

    proptest! {
        #[test]
        fn adding_a_constraint_never_shrinks_sets(
            cs in prop::collection::vec(arb_constraint(), 0..12),
            extra in arb_constraint(),
        ) {
            let before = solve(&cs);
            let mut more = cs.clone();
            more.push(extra);
            let after = solve(&more);
            for (k, s) in &before {
                let t = after.get(k).cloned().unwrap_or_default();
                prop_assert!(s.is_subset(&t));
            }
        }
    }
}
