//! Syntax tree for `.mgo` source files.
//!
//! Every node carries a byte span into the original text so that the
//! rewriter can splice replacement text without reprinting the program.

use std::fmt;

/// Half-open byte range `[start, end)` into the source text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: u32,
    pub end: u32,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span {
            start: start as u32,
            end: end as u32,
        }
    }

    pub fn to(self, other: Span) -> Span {
        Span {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }

    pub fn range(self) -> std::ops::Range<usize> {
        self.start as usize..self.end as usize
    }

    pub fn contains(self, other: Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(self, other: Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ident {
    pub name: String,
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MutexKind {
    Exclusive,
    ReadWrite,
}

impl MutexKind {
    /// Type name as written in source (`Mutex` / `RWMutex`).
    pub fn type_name(self) -> &'static str {
        match self {
            MutexKind::Exclusive => "Mutex",
            MutexKind::ReadWrite => "RWMutex",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TypeExpr {
    Int,
    Bool,
    Str,
    Mutex(MutexKind),
    OptiLock,
    Pointer(Box<TypeExpr>),
    Map(Box<TypeExpr>, Box<TypeExpr>),
    Named(Ident),
}

#[derive(Clone, Debug)]
pub struct Program {
    pub package: String,
    pub source: String,
    pub structs: Vec<StructDecl>,
    pub globals: Vec<VarDecl>,
    pub functions: Vec<FuncDecl>,
    pub externs: Vec<ExternDecl>,
    /// Number of statement ids handed out by the parser.
    pub stmt_count: u32,
    /// Number of expression ids handed out by the parser.
    pub expr_count: u32,
    /// Number of closures (spawned function literals).
    pub closure_count: u32,
}

#[derive(Clone, Debug)]
pub struct StructDecl {
    pub name: Ident,
    pub fields: Vec<FieldDecl>,
    pub embed: Option<Embed>,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub struct FieldDecl {
    pub name: Ident,
    pub ty: TypeExpr,
}

/// An anonymous mutex field, `Mutex` or `*Mutex` (or the rw variants).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Embed {
    pub kind: MutexKind,
    pub pointer: bool,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub struct VarDecl {
    pub name: Ident,
    pub ty: Option<TypeExpr>,
    pub init: Option<Expr>,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: Ident,
    pub ty: TypeExpr,
}

#[derive(Clone, Debug)]
pub struct FuncDecl {
    pub name: Ident,
    pub receiver: Option<Param>,
    pub params: Vec<Param>,
    pub ret: Option<TypeExpr>,
    pub body: Block,
    pub span: Span,
}

/// `extern io func name(params) ret`: a body-less function treated as I/O.
#[derive(Clone, Debug)]
pub struct ExternDecl {
    pub name: Ident,
    pub params: Vec<Param>,
    pub ret: Option<TypeExpr>,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub struct Block {
    pub stmts: Vec<Stmt>,
    /// Span from `{` to `}` inclusive.
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StmtId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExprId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClosureId(pub u32);

#[derive(Clone, Debug)]
pub struct Stmt {
    pub id: StmtId,
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
pub enum StmtKind {
    VarDecl(VarDecl),
    ShortVar { name: Ident, value: Expr },
    Assign { target: Expr, value: Expr },
    OpAssign { target: Expr, op: AssignOp, value: Expr },
    IncDec { target: Expr, inc: bool },
    Expr(Expr),
    If { cond: Expr, then: Block, els: Option<Else> },
    For {
        init: Option<Box<Stmt>>,
        cond: Expr,
        post: Option<Box<Stmt>>,
        body: Block,
    },
    Return(Option<Expr>),
    /// `defer <call>`; the expression is always a call.
    Defer(Expr),
    Spawn(Closure),
}

#[derive(Clone, Debug)]
pub enum Else {
    Block(Block),
    If(Box<Stmt>),
}

/// `spawn func(params) { body }(args)`
#[derive(Clone, Debug)]
pub struct Closure {
    pub id: ClosureId,
    pub params: Vec<Param>,
    pub args: Vec<Expr>,
    pub body: Block,
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnOp {
    Not,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct Expr {
    pub id: ExprId,
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub enum ExprKind {
    Int(i64),
    Bool(bool),
    Str(String),
    Nil,
    Ident(String),
    Field(Box<Expr>, Ident),
    Index(Box<Expr>, Box<Expr>),
    Call { callee: Box<Expr>, args: Vec<Expr> },
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    AddrOf(Box<Expr>),
    /// `T{field: value, ...}` for struct, mutex and optilock types.
    Composite { ty: TypeExpr, fields: Vec<(Ident, Expr)> },
    /// `map[K]V{}`
    MapLit { key: TypeExpr, value: TypeExpr },
}

impl Program {
    /// 1-based line and column of a byte offset.
    pub fn line_col(&self, offset: u32) -> (usize, usize) {
        line_col(&self.source, offset as usize)
    }

    pub fn text(&self, span: Span) -> &str {
        &self.source[span.range()]
    }
}

pub fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(source.len());
    let before = &source[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map(|i| offset - i).unwrap_or(offset + 1);
    (line, col)
}

/// Depth-first visitor helpers used by several passes.
pub fn walk_block_stmts<'a>(block: &'a Block, f: &mut dyn FnMut(&'a Stmt)) {
    for s in &block.stmts {
        walk_stmt(s, f);
    }
}

/// Visits `stmt` and all statements nested in it, not descending into closures.
pub fn walk_stmt<'a>(stmt: &'a Stmt, f: &mut dyn FnMut(&'a Stmt)) {
    f(stmt);
    match &stmt.kind {
        StmtKind::If { then, els, .. } => {
            walk_block_stmts(then, f);
            match els {
                Some(Else::Block(b)) => walk_block_stmts(b, f),
                Some(Else::If(s)) => walk_stmt(s, f),
                None => {}
            }
        }
        StmtKind::For {
            init, post, body, ..
        } => {
            if let Some(s) = init {
                walk_stmt(s, f);
            }
            walk_block_stmts(body, f);
            if let Some(s) = post {
                walk_stmt(s, f);
            }
        }
        _ => {}
    }
}

/// Expressions directly owned by a statement (not nested statements).
pub fn stmt_exprs(stmt: &Stmt) -> Vec<&Expr> {
    match &stmt.kind {
        StmtKind::VarDecl(d) => d.init.iter().collect(),
        StmtKind::ShortVar { value, .. } => vec![value],
        StmtKind::Assign { target, value } | StmtKind::OpAssign { target, value, .. } => {
            vec![target, value]
        }
        StmtKind::IncDec { target, .. } => vec![target],
        StmtKind::Expr(e) | StmtKind::Defer(e) => vec![e],
        StmtKind::If { cond, .. } => vec![cond],
        StmtKind::For { cond, .. } => vec![cond],
        StmtKind::Return(e) => e.iter().collect(),
        StmtKind::Spawn(c) => c.args.iter().collect(),
    }
}

/// Pre-order walk over an expression tree.
pub fn walk_expr<'a>(expr: &'a Expr, f: &mut dyn FnMut(&'a Expr)) {
    f(expr);
    match &expr.kind {
        ExprKind::Field(e, _) | ExprKind::Unary(_, e) | ExprKind::AddrOf(e) => walk_expr(e, f),
        ExprKind::Index(a, b) | ExprKind::Binary(_, a, b) => {
            walk_expr(a, f);
            walk_expr(b, f);
        }
        ExprKind::Call { callee, args } => {
            walk_expr(callee, f);
            for a in args {
                walk_expr(a, f);
            }
        }
        ExprKind::Composite { fields, .. } => {
            for (_, e) in fields {
                walk_expr(e, f);
            }
        }
        _ => {}
    }
}

/// Every statement in the program, closures included, keyed by id.
pub fn stmt_index(program: &Program) -> std::collections::HashMap<StmtId, &Stmt> {
    fn visit<'a>(b: &'a Block, out: &mut std::collections::HashMap<StmtId, &'a Stmt>) {
        walk_block_stmts(b, &mut |s| {
            out.insert(s.id, s);
            if let StmtKind::Spawn(c) = &s.kind {
                visit(&c.body, out);
            }
        });
    }
    let mut out = std::collections::HashMap::new();
    for f in &program.functions {
        visit(&f.body, &mut out);
    }
    out
}
