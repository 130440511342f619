//! Per-package counters and their text and JSON renderings.

use std::ops::AddAssign;

use serde::Serialize;

use crate::frontend::TypedProgram;

use super::{Analysis, Reason};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub lu_points: usize,
    pub defer_unlocks: usize,
    pub dominance_violations: usize,
    pub candidates: usize,
    pub rejected_io: usize,
    pub rejected_alias: usize,
    pub rejected_multiple_defer: usize,
    pub rejected_other: usize,
    /// Pairs passing every check but the profile filter.
    pub transformed: usize,
    pub transformed_with_defer: usize,
    pub transformed_after_profile: usize,
}

impl AddAssign<&Counters> for Counters {
    fn add_assign(&mut self, o: &Counters) {
        self.lu_points += o.lu_points;
        self.defer_unlocks += o.defer_unlocks;
        self.dominance_violations += o.dominance_violations;
        self.candidates += o.candidates;
        self.rejected_io += o.rejected_io;
        self.rejected_alias += o.rejected_alias;
        self.rejected_multiple_defer += o.rejected_multiple_defer;
        self.rejected_other += o.rejected_other;
        self.transformed += o.transformed;
        self.transformed_with_defer += o.transformed_with_defer;
        self.transformed_after_profile += o.transformed_after_profile;
    }
}

impl Counters {
    /// Candidates split exactly into transformed and the rejection buckets.
    pub fn is_partition(&self) -> bool {
        self.candidates
            == self.transformed
                + self.rejected_io
                + self.rejected_alias
                + self.rejected_multiple_defer
                + self.rejected_other
    }
}

pub fn count(tp: &TypedProgram, a: &Analysis) -> Counters {
    let mut c = Counters {
        lu_points: tp.res.mutex_exprs.len(),
        ..Default::default()
    };
    for b in &a.bodies {
        c.defer_unlocks += b.cfg.deferred_unlocks;
        c.dominance_violations += b
            .unpaired
            .iter()
            .filter(|u| u.reason == Reason::Dominance)
            .count();
    }
    for p in a.pairs() {
        c.candidates += 1;
        match p.rejection {
            None | Some(Reason::Profile) => {
                c.transformed += 1;
                if p.via_defer {
                    c.transformed_with_defer += 1;
                }
                if p.rejection.is_none() {
                    c.transformed_after_profile += 1;
                }
            }
            Some(Reason::Io | Reason::InterprocIo) => c.rejected_io += 1,
            Some(Reason::NestedConflict | Reason::InterprocAlias | Reason::NoAlias) => c.rejected_alias += 1,
            Some(Reason::MultipleDefer) => c.rejected_multiple_defer += 1,
            Some(Reason::Dominance) => {
                c.dominance_violations += 1;
                c.rejected_other += 1;
            }
            Some(_) => c.rejected_other += 1,
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PackageReport {
    pub package: String,
    pub file: String,
    pub counters: Counters,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub packages: Vec<PackageReport>,
}

const COLUMNS: [&str; 13] = [
    "package",
    "file",
    "lu-points",
    "defer",
    "dom-viol",
    "candidates",
    "rej-io",
    "rej-alias",
    "rej-defer",
    "rej-other",
    "transformed",
    "w/-defer",
    "after-profile",
];

fn row(package: &str, file: &str, c: &Counters) -> Vec<String> {
    let mut r = vec![package.to_string(), file.to_string()];
    r.extend(
        [
            c.lu_points,
            c.defer_unlocks,
            c.dominance_violations,
            c.candidates,
            c.rejected_io,
            c.rejected_alias,
            c.rejected_multiple_defer,
            c.rejected_other,
            c.transformed,
            c.transformed_with_defer,
            c.transformed_after_profile,
        ]
        .iter()
        .map(|n| n.to_string()),
    );
    r
}

impl Report {
    pub fn total(&self) -> Counters {
        let mut t = Counters::default();
        for p in &self.packages {
            t += &p.counters;
        }
        t
    }

    /// Aligned table; a total row follows when there is more than one file.
    pub fn render_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = vec![COLUMNS.iter().map(|s| s.to_string()).collect()];
        for p in &self.packages {
            rows.push(row(&p.package, &p.file, &p.counters));
        }
        if self.packages.len() > 1 {
            rows.push(row("total", "", &self.total()));
        }
        let widths: Vec<usize> = (0..COLUMNS.len())
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    if i < 2 {
                        format!("{s:<w$}", w = widths[i])
                    } else {
                        format!("{s:>w$}", w = widths[i])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "packages": self.packages,
            "total": self.total(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_all_zero() {
        let r = Report::default();
        assert_eq!(r.total(), Counters::default());
        assert!(r.total().is_partition());
        assert_eq!(r.render_text().lines().count(), 1);
    }

    #[test]
    fn table_columns_align() {
        let c = Counters {
            lu_points: 12,
            candidates: 3,
            transformed: 3,
            ..Default::default()
        };
        let r = Report {
            packages: vec![
                PackageReport {
                    package: "main".into(),
                    file: "a.mgo".into(),
                    counters: c.clone(),
                },
                PackageReport {
                    package: "lib".into(),
                    file: "long/path/b.mgo".into(),
                    counters: c,
                },
            ],
        };
        let text = r.render_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        let ends: Vec<usize> = lines.iter().map(|l| l.len()).collect();
        assert!(ends.iter().all(|&e| e == ends[0]));
        assert_eq!(r.total().lu_points, 24);
        assert_eq!(r.to_json()["total"]["candidates"], 6);
    }
}
