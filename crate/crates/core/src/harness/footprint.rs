//! Observable result of a run: how it ended, the final globals and the
//! printed lines. Rendering is independent of allocation order.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::vm::{render_word, Machine, Outcome};
use crate::frontend::resolve::Type;
use crate::runtime::{Cell, Word};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Footprint {
    pub outcome: Outcome,
    /// `(name, rendered value)` in declaration order; optimistic locks are
    /// runtime artifacts and left out.
    pub globals: Vec<(String, String)>,
    pub output: Vec<String>,
}

impl Footprint {
    pub fn capture(m: &Machine<'_>, outcome: Outcome) -> Footprint {
        let mut r = Renderer {
            m,
            ids: HashMap::new(),
        };
        let globals = m
            .global_cells()
            .into_iter()
            .filter(|(_, ty, _)| *ty != Type::OptiLock)
            .map(|(name, ty, c)| {
                let mut s = String::new();
                r.value(&ty, c, &mut s);
                (name, s)
            })
            .collect();
        Footprint {
            outcome,
            globals,
            output: m.output.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form, in hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("footprint serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn summary(&self) -> String {
        let globals: Vec<String> = self.globals.iter().map(|(n, v)| format!("{n}={v}")).collect();
        let outcome = match &self.outcome {
            Outcome::Completed => "completed".to_string(),
            Outcome::Panic(m) => format!("panic({m})"),
            Outcome::Deadlock => "deadlock".to_string(),
            Outcome::StepLimit => "step limit".to_string(),
        };
        format!("{outcome}; {}; output {:?}", globals.join(", "), self.output)
    }
}

struct Renderer<'m, 'c> {
    m: &'m Machine<'c>,
    /// Pointer targets numbered by first visit.
    ids: HashMap<Cell, usize>,
}

impl Renderer<'_, '_> {
    fn word(&self, c: Cell) -> &Word {
        self.m.engine.mem.get(c)
    }

    fn value(&mut self, ty: &Type, c: Cell, out: &mut String) {
        match ty {
            Type::Struct(s) => {
                out.push('{');
                let fields = self.m.prog.layouts.fields(*s).to_vec();
                let mut first = true;
                for f in fields.iter().filter(|f| f.ty != Type::OptiLock) {
                    if !first {
                        out.push_str(", ");
                    }
                    first = false;
                    let _ = write!(out, "{}: ", f.name);
                    self.value(&f.ty, c.offset(f.off), out);
                }
                out.push('}');
            }
            Type::Ptr(inner) => match self.word(c).clone() {
                Word::Ptr(t) => self.pointer(inner, t, out),
                w => out.push_str(&render_word(&w)),
            },
            Type::Map(_, v) => match self.word(c).clone() {
                Word::Ptr(t) => {
                    if let Some(id) = self.seen(t, out) {
                        let Word::Map(entries) = self.word(t).clone() else {
                            let _ = write!(out, "map#{id}[?]");
                            return;
                        };
                        let _ = write!(out, "map#{id}[");
                        for (i, (k, val)) in entries.iter().enumerate() {
                            if i > 0 {
                                out.push(' ');
                            }
                            let _ = write!(out, "{k}:");
                            self.scalar(v, val, out);
                        }
                        out.push(']');
                    }
                }
                w => out.push_str(&render_word(&w)),
            },
            _ => {
                let w = self.word(c).clone();
                out.push_str(&render_word(&w));
            }
        }
    }

    /// Single-word value held outside memory (map elements).
    fn scalar(&mut self, ty: &Type, w: &Word, out: &mut String) {
        match (ty, w) {
            (Type::Ptr(inner), Word::Ptr(t)) => self.pointer(inner, *t, out),
            _ => out.push_str(&render_word(w)),
        }
    }

    /// Returns the id on a first visit; writes a back-reference otherwise.
    fn seen(&mut self, t: Cell, out: &mut String) -> Option<usize> {
        if let Some(id) = self.ids.get(&t) {
            let _ = write!(out, "#{id}");
            return None;
        }
        let id = self.ids.len() + 1;
        self.ids.insert(t, id);
        Some(id)
    }

    fn pointer(&mut self, inner: &Type, t: Cell, out: &mut String) {
        if let Some(id) = self.seen(t, out) {
            let _ = write!(out, "&#{id}=");
            self.value(inner, t, out);
        }
    }
}
