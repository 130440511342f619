//! Parsing and semantic resolution of `.mgo` source.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod resolve;

use std::fmt;

pub use ast::Program;
pub use parser::parse;
pub use resolve::{resolve, TypedProgram};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    SyntaxError,
    UnsupportedConstruct,
    TypeError,
    UnresolvedIdentifier,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::SyntaxError => "syntax error",
            ErrorKind::UnsupportedConstruct => "unsupported construct",
            ErrorKind::TypeError => "type error",
            ErrorKind::UnresolvedIdentifier => "unresolved identifier",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {kind}: {message}")]
pub struct FrontendError {
    pub kind: ErrorKind,
    pub offset: usize,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl FrontendError {
    fn new(kind: ErrorKind, src: &str, offset: usize, message: String) -> Self {
        let (line, col) = ast::line_col(src, offset);
        FrontendError {
            kind,
            offset,
            line,
            col,
            message,
        }
    }

    pub fn syntax(src: &str, offset: usize, msg: &str) -> Self {
        Self::new(ErrorKind::SyntaxError, src, offset, msg.to_string())
    }

    pub fn unsupported(src: &str, offset: usize, what: &str) -> Self {
        Self::new(
            ErrorKind::UnsupportedConstruct,
            src,
            offset,
            format!("{what} is not supported"),
        )
    }

    pub fn type_error(src: &str, offset: usize, msg: &str) -> Self {
        Self::new(ErrorKind::TypeError, src, offset, msg.to_string())
    }

    pub fn unresolved(src: &str, offset: usize, msg: &str) -> Self {
        Self::new(ErrorKind::UnresolvedIdentifier, src, offset, msg.to_string())
    }

    /// Attach a position to an error raised without one.
    pub fn at(mut self, src: &str, offset: usize) -> Self {
        if self.offset == 0 {
            let (line, col) = ast::line_col(src, offset);
            self.offset = offset;
            self.line = line;
            self.col = col;
        }
        self
    }

    /// `file:line:col: kind: message`
    pub fn with_file(&self, file: &str) -> String {
        format!("{file}:{self}")
    }
}

/// Parse and resolve in one step.
pub fn load(source: &str) -> Result<TypedProgram, FrontendError> {
    resolve(&parse(source)?)
}

impl Program {
    /// Reprint the program. Nodes are never reformatted, so this is the
    /// original text.
    pub fn render(&self) -> String {
        self.source.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::resolve::{Addressness, LockOp};
    use super::*;

    const L1: &str = include_str!("../../fixtures/listing01.mgo");
    const L9: &str = include_str!("../../fixtures/listing09.mgo");
    const L11: &str = include_str!("../../fixtures/listing11.mgo");
    const L13: &str = include_str!("../../fixtures/listing13.mgo");

    #[test]
    fn listing1_has_one_function_two_mutex_exprs() {
        let tp = load(L1).unwrap();
        assert_eq!(tp.program.functions.len(), 1);
        assert_eq!(tp.res.mutex_exprs.len(), 2);
        assert_eq!(tp.res.mutex_exprs[0].op, LockOp::Lock);
        assert_eq!(tp.res.mutex_exprs[1].op, LockOp::Unlock);
    }

    #[test]
    fn empty_body_has_no_mutex_exprs() {
        let tp = load("package main\nfunc main() {}\n").unwrap();
        assert!(tp.res.mutex_exprs.is_empty());
    }

    #[test]
    fn listing9_addressness() {
        let tp = load(L9).unwrap();
        let m = &tp.res.mutex_exprs;
        assert_eq!(m.len(), 4);
        assert_eq!(m[0].access_path, vec!["m"]);
        assert_eq!(m[0].addressness, Addressness::ByAddress);
        assert_eq!(m[2].access_path, vec!["n"]);
        assert_eq!(m[2].addressness, Addressness::ByValue);
    }

    #[test]
    fn listing11_anonymous_embed() {
        let tp = load(L11).unwrap();
        let s = &tp.program.structs[0];
        let emb = s.embed.expect("anonymous mutex");
        assert!(emb.pointer);
        let m = &tp.res.mutex_exprs[0];
        assert!(m.via_anonymous_field);
        assert_eq!(m.access_path, vec!["a", "Mutex"]);
        assert_eq!(m.addressness, Addressness::ByAddress);
    }

    #[test]
    fn direct_lock_is_not_anonymous() {
        let tp = load(L1).unwrap();
        assert!(!tp.res.mutex_exprs[0].via_anonymous_field);
    }

    #[test]
    fn closure_records_enclosing_function() {
        let tp = load(L13).unwrap();
        let m = &tp.res.mutex_exprs[0];
        let resolve::BodyId::Closure(_) = m.body else {
            panic!("lock should live in the closure body");
        };
        let info = &tp.res.bodies[&m.body];
        assert_eq!(info.parent, Some(resolve::BodyId::Func(0)));
        let names: Vec<_> = info.captures.iter().map(|v| tp.res.vars[*v].name.as_str()).collect();
        assert_eq!(names, ["m"]);
        assert!(tp.res.vars[info.captures[0]].captured);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        for src in [L1, L9, L11, L13] {
            assert_eq!(parse(src).unwrap().render(), src);
        }
    }

    #[test]
    fn resolve_is_idempotent() {
        let a = load(L9).unwrap();
        let b = resolve(&a.program).unwrap();
        assert_eq!(a.res.mutex_exprs, b.res.mutex_exprs);
        assert_eq!(a.res.types, b.res.types);
    }

    #[test]
    fn mutex_spans_are_disjoint() {
        let tp = load(L9).unwrap();
        let m = &tp.res.mutex_exprs;
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                assert!(!m[i].call_span.overlaps(m[j].call_span));
            }
        }
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse("package main\nfunc main() {\n\tx := \n}\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::SyntaxError);
        assert_eq!(e.line, 4);
        let e = load("package main\nfunc main() {\n\tx := 1\n\tx.Lock()\n}\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::TypeError);
        assert_eq!((e.line, e.col), (4, 4));
        let e = load("package main\nfunc main() {\n\ty.Lock()\n}\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::UnresolvedIdentifier);
        let e = parse("package main\nfunc main() {\n\tfor {\n\t}\n}\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::UnsupportedConstruct);
    }

    #[test]
    fn rlock_on_plain_mutex_is_a_type_error() {
        let e = load("package main\nfunc main() {\n\tm := &Mutex{}\n\tm.RLock()\n}\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::TypeError);
    }
}
