//! Unified diffs: rendering via `similar`, and a small independent applier.

use similar::TextDiff;
use thiserror::Error;

/// Unified diff with three lines of context; empty when the texts agree.
pub fn unified_diff(file: &str, original: &str, rewritten: &str) -> String {
    if original == rewritten {
        return String::new();
    }
    TextDiff::from_lines(original, rewritten)
        .unified_diff()
        .context_radius(3)
        .header(&format!("a/{file}"), &format!("b/{file}"))
        .to_string()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatchError {
    #[error("line {0}: malformed hunk header")]
    BadHeader(usize),
    #[error("line {0}: unexpected line in hunk")]
    BadLine(usize),
    #[error("hunk at original line {0} does not match")]
    Mismatch(usize),
    #[error("hunks overlap or are out of order at original line {0}")]
    Order(usize),
}

struct Hunk {
    old_start: usize,
    old_len: usize,
    /// (tag, text including its line terminator)
    lines: Vec<(char, String)>,
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    let (a, b) = match s.split_once(',') {
        Some((a, b)) => (a, b.parse().ok()?),
        None => (s, 1),
    };
    Some((a.parse().ok()?, b))
}

fn parse_hunks(diff: &str) -> Result<Vec<Hunk>, PatchError> {
    let mut hunks: Vec<Hunk> = Vec::new();
    for (i, line) in diff.split_inclusive('\n').enumerate() {
        let n = i + 1;
        if let Some(rest) = line.strip_prefix("@@ ") {
            let mut parts = rest.split_whitespace();
            let old = parts.next().and_then(|p| p.strip_prefix('-')).and_then(parse_range);
            let new = parts.next().and_then(|p| p.strip_prefix('+')).and_then(parse_range);
            let (Some((os, ol)), Some(_)) = (old, new) else {
                return Err(PatchError::BadHeader(n));
            };
            hunks.push(Hunk {
                old_start: os,
                old_len: ol,
                lines: Vec::new(),
            });
            continue;
        }
        if hunks.is_empty() {
            // File headers and anything before the first hunk.
            continue;
        }
        let h = hunks.last_mut().unwrap();
        if line.starts_with('\\') {
            // "\ No newline at end of file" applies to the previous line.
            match h.lines.last_mut() {
                Some((_, text)) if text.ends_with('\n') => {
                    text.pop();
                }
                _ => return Err(PatchError::BadLine(n)),
            }
            continue;
        }
        let mut chars = line.chars();
        match chars.next() {
            Some(tag @ (' ' | '-' | '+')) => h.lines.push((tag, chars.as_str().to_string())),
            _ => return Err(PatchError::BadLine(n)),
        }
    }
    Ok(hunks)
}

/// Apply a unified diff to `original`, checking every context and removed
/// line against the text.
pub fn apply_patch(original: &str, diff: &str) -> Result<String, PatchError> {
    let src: Vec<&str> = original.split_inclusive('\n').collect();
    let mut out = String::with_capacity(original.len());
    let mut pos = 0usize;
    for h in parse_hunks(diff)? {
        let begin = if h.old_len == 0 { h.old_start } else { h.old_start.saturating_sub(1) };
        if begin < pos || begin > src.len() {
            return Err(PatchError::Order(h.old_start));
        }
        for l in &src[pos..begin] {
            out.push_str(l);
        }
        pos = begin;
        for (tag, text) in &h.lines {
            match tag {
                ' ' | '-' => {
                    if src.get(pos) != Some(&text.as_str()) {
                        return Err(PatchError::Mismatch(h.old_start));
                    }
                    if *tag == ' ' {
                        out.push_str(text);
                    }
                    pos += 1;
                }
                _ => out.push_str(text),
            }
        }
    }
    for l in &src[pos..] {
        out.push_str(l);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_texts_give_empty_diff() {
        assert_eq!(unified_diff("f", "a\nb\n", "a\nb\n"), "");
        assert_eq!(apply_patch("a\nb\n", "").unwrap(), "a\nb\n");
    }

    #[test]
    fn insertion_with_context() {
        let a = "1\n2\n3\n4\n5\n6\n7\n8\n";
        let b = "1\n2\n3\n4\nx\n5\n6\n7\n8\n";
        let d = unified_diff("f.mgo", a, b);
        assert!(d.starts_with("--- a/f.mgo\n+++ b/f.mgo\n@@ -2,6 +2,7 @@\n"), "{d}");
        assert_eq!(apply_patch(a, &d).unwrap(), b);
    }

    #[test]
    fn mismatched_context_is_rejected() {
        let d = unified_diff("f", "a\nb\nc\n", "a\nB\nc\n");
        assert!(matches!(apply_patch("a\nz\nc\n", &d), Err(PatchError::Mismatch(_))));
    }

    #[test]
    fn missing_final_newline() {
        let (a, b) = ("a\nb", "a\nc");
        let d = unified_diff("f", a, b);
        assert_eq!(apply_patch(a, &d).unwrap(), b);
        let (a, b) = ("a\n", "a\nb");
        assert_eq!(apply_patch(a, &unified_diff("f", a, b)).unwrap(), b);
    }

    fn lines() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "", "{", "}"]), 0..25).prop_flat_map(|v| {
            let body = v.join("\n");
            prop::bool::ANY.prop_map(move |nl| if nl && !body.is_empty() { format!("{body}\n") } else { body.clone() })
        })
    }

    proptest! {
        #[test]
        fn applying_diff_reproduces_target(a in lines(), b in lines()) {
            let d = unified_diff("f", &a, &b);
            prop_assert_eq!(apply_patch(&a, &d).unwrap(), b);
        }
    }
}
