//! Field-sensitive, context-insensitive Andersen analysis over the typed AST,
//! plus the call graph and per-function summaries built on top of it.

pub mod callgraph;
pub mod solve;
pub mod summary;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::frontend::ast::{
    line_col, Else, Expr, ExprId, ExprKind, Program, Stmt, StmtKind,
};
use crate::frontend::resolve::{BodyId, CallTarget, FuncId, MutexExprId, StructId, Type, VarKind};
use crate::frontend::TypedProgram;

pub use callgraph::{build_callgraph, CallGraph};
use solve::{Constraint, PtsMap};
pub use summary::{summarize, FnSummary};

/// Longest field path kept on an abstract location.
pub const MAX_FIELD_DEPTH: usize = 4;

/// Abstract memory location / object.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AbsLoc {
    /// A variable, named by the offset of its declaring identifier.
    Var(u32),
    /// An allocation site, named by the offset of the literal.
    Heap(u32),
    /// An object standing in for memory the program never allocates itself.
    Synthetic(String),
    /// A field of a location; map elements use the field name `[]`.
    Field(Box<AbsLoc>, String),
    /// Analysis temporary.
    Temp(u32),
    /// Return value of the function declared at this offset.
    Ret(u32),
}

impl AbsLoc {
    /// Field `f` of this location. Paths are cut off at `MAX_FIELD_DEPTH`,
    /// so deeper fields share the location of their cut-off prefix.
    pub fn field(&self, f: &str) -> AbsLoc {
        if self.field_depth() >= MAX_FIELD_DEPTH {
            return self.clone();
        }
        AbsLoc::Field(Box::new(self.clone()), f.to_string())
    }

    pub fn field_depth(&self) -> usize {
        match self {
            AbsLoc::Field(b, _) => 1 + b.field_depth(),
            _ => 0,
        }
    }

    pub fn extend(&self, path: &[String]) -> AbsLoc {
        path.iter().fold(self.clone(), |l, f| l.field(f))
    }

    /// Human-readable rendering with source positions.
    pub fn describe(&self, prog: &Program) -> String {
        let pos = |o: u32| {
            let (l, c) = line_col(&prog.source, o as usize);
            format!("{l}:{c}")
        };
        match self {
            AbsLoc::Var(o) => {
                let rest = &prog.source[*o as usize..];
                let name: String = rest
                    .chars()
                    .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
                    .collect();
                format!("{name}@{}", pos(*o))
            }
            AbsLoc::Heap(o) => format!("alloc@{}", pos(*o)),
            AbsLoc::Synthetic(s) => format!("synthetic:{s}"),
            AbsLoc::Field(b, f) => format!("{}.{f}", b.describe(prog)),
            AbsLoc::Temp(t) => format!("tmp{t}"),
            AbsLoc::Ret(o) => format!("ret@{}", pos(*o)),
        }
    }
}

impl fmt::Display for AbsLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbsLoc::Var(o) => write!(f, "var#{o}"),
            AbsLoc::Heap(o) => write!(f, "heap#{o}"),
            AbsLoc::Synthetic(s) => write!(f, "synthetic:{s}"),
            AbsLoc::Field(b, n) => write!(f, "{b}.{n}"),
            AbsLoc::Temp(t) => write!(f, "tmp{t}"),
            AbsLoc::Ret(o) => write!(f, "ret#{o}"),
        }
    }
}

/// A location expression: a fixed location, or the objects a node points to,
/// followed by a field path.
#[derive(Clone, Debug)]
enum Place {
    Loc(AbsLoc),
    Deref(AbsLoc, Vec<String>),
}

impl Place {
    fn field(&self, f: &str) -> Place {
        match self {
            Place::Loc(l) => Place::Loc(l.field(f)),
            Place::Deref(n, p) => {
                let mut p = p.clone();
                p.push(f.to_string());
                Place::Deref(n.clone(), p)
            }
        }
    }
}

enum Query {
    /// Targets of a pointer-valued node.
    Pts(AbsLoc),
    /// The locations a place denotes.
    Place(Place),
}

/// Result of the analysis.
#[derive(Clone, Debug)]
pub struct PointsTo {
    /// ℳ for every mutex expression.
    pub sets: BTreeMap<MutexExprId, BTreeSet<AbsLoc>>,
    /// Mutex argument targets of existing FastLock/FastUnlock calls, by call.
    pub opti_sets: BTreeMap<ExprId, BTreeSet<AbsLoc>>,
    pub pts: PtsMap,
    pub constraints: usize,
}

impl PointsTo {
    pub fn of(&self, m: MutexExprId) -> &BTreeSet<AbsLoc> {
        static EMPTY: BTreeSet<AbsLoc> = BTreeSet::new();
        self.sets.get(&m).unwrap_or(&EMPTY)
    }

    pub fn of_opti(&self, call: ExprId) -> &BTreeSet<AbsLoc> {
        static EMPTY: BTreeSet<AbsLoc> = BTreeSet::new();
        self.opti_sets.get(&call).unwrap_or(&EMPTY)
    }

    pub fn intersects(&self, a: MutexExprId, b: MutexExprId) -> bool {
        !self.of(a).is_disjoint(self.of(b))
    }

    /// Site → set listing for `--dump-pts`.
    pub fn dump(&self, tp: &TypedProgram) -> serde_json::Value {
        let entries: Vec<serde_json::Value> = self
            .sets
            .iter()
            .map(|(m, set)| {
                let me = &tp.res.mutex_exprs[*m];
                let (line, col) = tp.program.line_col(me.call_span.start);
                serde_json::json!({
                    "site": format!("{line}:{col}"),
                    "expr": tp.program.text(me.call_span),
                    "function": tp.body_name(me.body),
                    "targets": set.iter().map(|l| l.describe(&tp.program)).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::Value::Array(entries)
    }
}

/// Run the analysis on a typed program.
pub fn solve(tp: &TypedProgram) -> PointsTo {
    let cg = build_callgraph(tp);
    solve_with(tp, &cg)
}

pub fn solve_with(tp: &TypedProgram, cg: &CallGraph) -> PointsTo {
    let mut g = Gen {
        tp,
        cs: Vec::new(),
        temps: 0,
        queries: Vec::new(),
    };
    for (gi, decl) in tp.program.globals.iter().enumerate() {
        let v = tp.res.globals[gi];
        let loc = AbsLoc::Var(tp.res.vars[v].decl.start);
        let ty = tp.res.vars[v].ty.clone();
        match &decl.init {
            Some(init) => g.assign(&Place::Loc(loc), init, &ty),
            None => g.seed_synthetic(&loc, &ty, &format!("global:{}", decl.name.name), 0),
        }
    }
    for (f, func) in tp.program.functions.iter().enumerate() {
        if !cg.has_callers(f) {
            let body = &tp.res.bodies[&BodyId::Func(f)];
            for &p in &body.params {
                let info = &tp.res.vars[p];
                let loc = AbsLoc::Var(info.decl.start);
                let name = format!("param:{}.{}", tp.qualified_name(f), info.name);
                g.seed_synthetic(&loc, &info.ty.clone(), &name, 0);
            }
        }
        g.block(&func.body.stmts, f);
    }
    let pts = solve::solve(&g.cs);
    let mut sets = BTreeMap::new();
    let mut opti_sets = BTreeMap::new();
    for (k, q) in g.queries {
        let set: BTreeSet<AbsLoc> = match q {
            Query::Pts(n) => pts.get(&n).cloned().unwrap_or_default(),
            Query::Place(Place::Loc(l)) => [l].into_iter().collect(),
            Query::Place(Place::Deref(n, p)) => pts
                .get(&n)
                .map(|s| s.iter().map(|o| o.extend(&p)).collect())
                .unwrap_or_default(),
        };
        match k {
            QueryKey::Mutex(m) => sets.entry(m).or_insert_with(BTreeSet::new).extend(set),
            QueryKey::Opti(c) => opti_sets.entry(c).or_insert_with(BTreeSet::new).extend(set),
        }
    }
    PointsTo {
        sets,
        opti_sets,
        pts,
        constraints: g.cs.len(),
    }
}

struct Gen<'a> {
    tp: &'a TypedProgram,
    cs: Vec<Constraint>,
    temps: u32,
    queries: Vec<(QueryKey, Query)>,
}

enum QueryKey {
    Mutex(MutexExprId),
    Opti(ExprId),
}

const MAX_DEPTH: usize = 6;

impl Gen<'_> {
    fn temp(&mut self) -> AbsLoc {
        self.temps += 1;
        AbsLoc::Temp(self.temps)
    }

    fn ty(&self, e: &Expr) -> Type {
        self.tp.ty(e).clone()
    }

    fn var_loc(&self, v: usize) -> AbsLoc {
        AbsLoc::Var(self.tp.res.vars[v].decl.start)
    }

    /// Fields of a struct that can hold pointers, with their types.
    fn struct_fields(&self, sid: StructId) -> Vec<(String, Type)> {
        let s = self.tp.struct_decl(sid);
        let mut out = Vec::new();
        for f in &s.fields {
            if let Some(t) = field_type(self.tp, sid, &f.name.name) {
                out.push((f.name.name.clone(), t));
            }
        }
        if let Some(emb) = &s.embed {
            let name = emb.kind.type_name();
            if let Some(t) = field_type(self.tp, sid, name) {
                out.push((name.to_string(), t));
            }
        }
        out
    }

    /// Give pointer-typed memory at `loc` a synthetic target so that locks
    /// through it have a non-empty set.
    fn seed_synthetic(&mut self, loc: &AbsLoc, ty: &Type, name: &str, depth: usize) {
        if depth > 3 {
            return;
        }
        match ty {
            Type::Ptr(inner) => {
                let obj = AbsLoc::Synthetic(name.to_string());
                self.cs.push(Constraint::AddrOf {
                    dst: loc.clone(),
                    loc: obj.clone(),
                });
                if let Type::Struct(sid) = **inner {
                    for (f, t) in self.struct_fields(sid) {
                        self.seed_synthetic(&obj.field(&f), &t, &format!("{name}.{f}"), depth + 1);
                    }
                }
            }
            Type::Struct(sid) => {
                for (f, t) in self.struct_fields(*sid) {
                    self.seed_synthetic(&loc.field(&f), &t, &format!("{name}.{f}"), depth + 1);
                }
            }
            _ => {}
        }
    }

    fn block(&mut self, stmts: &[Stmt], top: FuncId) {
        for s in stmts {
            self.stmt(s, top);
        }
    }

    fn stmt(&mut self, s: &Stmt, top: FuncId) {
        match &s.kind {
            StmtKind::VarDecl(d) => {
                let v = self.tp.res.decl_vars[&s.id];
                if let Some(init) = &d.init {
                    let ty = self.tp.res.vars[v].ty.clone();
                    self.assign(&Place::Loc(self.var_loc(v)), init, &ty);
                }
            }
            StmtKind::ShortVar { value, .. } => {
                let v = self.tp.res.decl_vars[&s.id];
                let ty = self.tp.res.vars[v].ty.clone();
                self.assign(&Place::Loc(self.var_loc(v)), value, &ty);
            }
            StmtKind::Assign { target, value } => {
                let ty = self.ty(target);
                match self.place(target) {
                    Some(p) => self.assign(&p, value, &ty),
                    None => self.eval(value),
                }
            }
            StmtKind::OpAssign { target, value, .. } => {
                self.eval(target);
                self.eval(value);
            }
            StmtKind::IncDec { target, .. } => self.eval(target),
            StmtKind::Expr(e) | StmtKind::Defer(e) => self.eval(e),
            StmtKind::If { cond, then, els } => {
                self.eval(cond);
                self.block(&then.stmts, top);
                match els {
                    Some(Else::Block(b)) => self.block(&b.stmts, top),
                    Some(Else::If(s)) => self.stmt(s, top),
                    None => {}
                }
            }
            StmtKind::For {
                init,
                cond,
                post,
                body,
            } => {
                if let Some(i) = init {
                    self.stmt(i, top);
                }
                self.eval(cond);
                if let Some(p) = post {
                    self.stmt(p, top);
                }
                self.block(&body.stmts, top);
            }
            StmtKind::Return(Some(e)) => {
                let body = self.tp.res.stmt_body[&s.id];
                if let BodyId::Func(f) = body {
                    let ret = AbsLoc::Ret(self.tp.func(f).name.span.start);
                    let ty = self.ty(e);
                    self.assign(&Place::Loc(ret), e, &ty);
                } else {
                    self.eval(e);
                }
            }
            StmtKind::Return(None) => {}
            StmtKind::Spawn(c) => {
                let params = self.tp.res.bodies[&BodyId::Closure(c.id)].params.clone();
                for (p, a) in params.iter().zip(&c.args) {
                    let ty = self.tp.res.vars[*p].ty.clone();
                    self.assign(&Place::Loc(self.var_loc(*p)), a, &ty);
                }
                self.block(&c.body.stmts, top);
            }
        }
    }

    fn store(&mut self, dst: &Place, v: AbsLoc) {
        match dst {
            Place::Loc(l) => self.cs.push(Constraint::Copy {
                dst: l.clone(),
                src: v,
            }),
            Place::Deref(n, p) => self.cs.push(Constraint::Store {
                dst: n.clone(),
                path: p.clone(),
                src: v,
            }),
        }
    }

    fn load(&mut self, src: &Place) -> AbsLoc {
        match src {
            Place::Loc(l) => l.clone(),
            Place::Deref(n, p) => {
                let t = self.temp();
                self.cs.push(Constraint::Load {
                    dst: t.clone(),
                    src: n.clone(),
                    path: p.clone(),
                });
                t
            }
        }
    }

    fn copy_struct(&mut self, dst: &Place, src: &Place, sid: StructId, depth: usize) {
        if depth > MAX_DEPTH {
            return;
        }
        for (f, t) in self.struct_fields(sid) {
            match t {
                Type::Struct(inner) => self.copy_struct(&dst.field(&f), &src.field(&f), inner, depth + 1),
                t if t.is_pointer_like() => {
                    let v = self.load(&src.field(&f));
                    self.store(&dst.field(&f), v);
                }
                _ => {}
            }
        }
    }

    fn assign(&mut self, dst: &Place, src: &Expr, ty: &Type) {
        match ty {
            t if t.is_pointer_like() => {
                let v = self.rval(src);
                self.store(dst, v);
            }
            Type::Struct(sid) => match self.place(src) {
                Some(sp) => self.copy_struct(dst, &sp, *sid, 0),
                None => self.eval(src),
            },
            _ => self.eval(src),
        }
    }

    /// Evaluate an expression for its call side effects only.
    fn eval(&mut self, e: &Expr) {
        let ty = self.ty(e);
        if ty.is_pointer_like() {
            self.rval(e);
            return;
        }
        match &e.kind {
            ExprKind::Call { .. } => {
                self.call(e);
            }
            ExprKind::Field(..) | ExprKind::Index(..) | ExprKind::Composite { .. } => {
                self.place(e);
            }
            ExprKind::Unary(_, a) => self.eval(a),
            ExprKind::Binary(_, a, b) => {
                self.eval(a);
                self.eval(b);
            }
            _ => {}
        }
    }

    fn place(&mut self, e: &Expr) -> Option<Place> {
        match &e.kind {
            ExprKind::Ident(_) => {
                let v = *self.tp.res.ident_vars.get(&e.id)?;
                Some(Place::Loc(self.var_loc(v)))
            }
            ExprKind::Field(b, f) => match self.ty(b) {
                Type::Ptr(_) => {
                    let n = self.rval(b);
                    Some(Place::Deref(n, vec![f.name.clone()]))
                }
                _ => Some(self.place(b)?.field(&f.name)),
            },
            ExprKind::Index(m, k) => {
                self.eval(k);
                let n = self.rval(m);
                Some(Place::Deref(n, vec!["[]".to_string()]))
            }
            ExprKind::Call { .. } => self.call(e).map(Place::Loc),
            ExprKind::Composite { fields, .. } => {
                let obj = AbsLoc::Heap(e.span.start);
                self.init_composite(&obj, fields);
                Some(Place::Loc(obj))
            }
            _ => None,
        }
    }

    fn init_composite(&mut self, obj: &AbsLoc, fields: &[(crate::frontend::ast::Ident, Expr)]) {
        for (name, v) in fields {
            let ty = self.ty(v);
            let dst = Place::Loc(obj.field(&name.name));
            self.assign(&dst, v, &ty);
        }
    }

    /// Node holding the pointer value of `e`.
    fn rval(&mut self, e: &Expr) -> AbsLoc {
        match &e.kind {
            ExprKind::Ident(_) | ExprKind::Field(..) | ExprKind::Index(..) => match self.place(e) {
                Some(p) => self.load(&p),
                None => self.temp(),
            },
            ExprKind::AddrOf(inner) => {
                let t = self.temp();
                match self.place(inner) {
                    Some(Place::Loc(l)) => self.cs.push(Constraint::AddrOf {
                        dst: t.clone(),
                        loc: l,
                    }),
                    Some(Place::Deref(n, p)) => self.cs.push(Constraint::FieldAddr {
                        dst: t.clone(),
                        src: n,
                        path: p,
                    }),
                    None => {}
                }
                t
            }
            ExprKind::MapLit { .. } => {
                let t = self.temp();
                self.cs.push(Constraint::AddrOf {
                    dst: t.clone(),
                    loc: AbsLoc::Heap(e.span.start),
                });
                t
            }
            ExprKind::Call { .. } => self.call(e).unwrap_or_else(|| self.temp()),
            _ => self.temp(),
        }
    }

    fn bind_params(&mut self, f: FuncId, args: &[Expr], skip_receiver: bool) {
        let params = self.tp.res.bodies[&BodyId::Func(f)].params.clone();
        let params: Vec<usize> = if skip_receiver {
            params.into_iter().skip(1).collect()
        } else {
            params
        };
        for (p, a) in params.iter().zip(args) {
            let ty = self.tp.res.vars[*p].ty.clone();
            self.assign(&Place::Loc(self.var_loc(*p)), a, &ty);
        }
    }

    /// Process a call; returns the location of its result, if any.
    fn call(&mut self, e: &Expr) -> Option<AbsLoc> {
        let ExprKind::Call { callee, args } = &e.kind else {
            return None;
        };
        let target = self.tp.res.calls.get(&e.id).cloned();
        match target {
            Some(CallTarget::Func(f)) => {
                self.bind_params(f, args, false);
                Some(AbsLoc::Ret(self.tp.func(f).name.span.start))
            }
            Some(CallTarget::Method {
                func,
                addr_recv,
                deref_recv,
            }) => {
                let ExprKind::Field(recv, _) = &callee.kind else {
                    return None;
                };
                let rv = self.tp.res.bodies[&BodyId::Func(func)].params[0];
                let rloc = Place::Loc(self.var_loc(rv));
                let rty = self.tp.res.vars[rv].ty.clone();
                if addr_recv {
                    let t = self.temp();
                    match self.place(recv) {
                        Some(Place::Loc(l)) => self.cs.push(Constraint::AddrOf { dst: t.clone(), loc: l }),
                        Some(Place::Deref(n, p)) => self.cs.push(Constraint::FieldAddr {
                            dst: t.clone(),
                            src: n,
                            path: p,
                        }),
                        None => {}
                    }
                    self.store(&rloc, t);
                } else if deref_recv {
                    let n = self.rval(recv);
                    if let Type::Struct(sid) = rty {
                        self.copy_struct(&rloc, &Place::Deref(n, vec![]), sid, 0);
                    }
                } else {
                    self.assign(&rloc, recv, &rty);
                }
                self.bind_params(func, args, true);
                Some(AbsLoc::Ret(self.tp.func(func).name.span.start))
            }
            Some(CallTarget::Extern(x)) => {
                for a in args {
                    self.eval(a);
                }
                let t = self.temp();
                let obj = AbsLoc::Synthetic(format!("extern:{}", self.tp.program.externs[x].name.name));
                self.cs.push(Constraint::AddrOf { dst: t.clone(), loc: obj });
                Some(t)
            }
            Some(CallTarget::MutexOp(m)) => {
                let me = self.tp.res.mutex_exprs[m].clone();
                let ExprKind::Field(recv, _) = &callee.kind else {
                    return None;
                };
                let rty = self.ty(recv);
                let q = if me.via_anonymous_field {
                    let base = match rty {
                        Type::Ptr(_) => Some(Place::Deref(self.rval(recv), vec![])),
                        _ => self.place(recv),
                    };
                    let embed = self.tp.struct_decl(rty.struct_id().expect("struct")).embed.expect("embed");
                    base.map(|b| {
                        let p = b.field(embed.kind.type_name());
                        if embed.pointer {
                            Query::Pts(self.load(&p))
                        } else {
                            Query::Place(p)
                        }
                    })
                } else if matches!(rty, Type::Ptr(_)) {
                    Some(Query::Pts(self.rval(recv)))
                } else {
                    self.place(recv).map(Query::Place)
                };
                if let Some(q) = q {
                    self.queries.push((QueryKey::Mutex(m), q));
                }
                None
            }
            Some(CallTarget::Opti(_)) => {
                if let Some(a) = args.first() {
                    let n = self.rval(a);
                    self.queries.push((QueryKey::Opti(e.id), Query::Pts(n)));
                }
                if let ExprKind::Field(recv, _) = &callee.kind {
                    self.eval(recv);
                }
                None
            }
            Some(CallTarget::Builtin(_)) | None => {
                for a in args {
                    self.eval(a);
                }
                if let ExprKind::Field(recv, _) = &callee.kind {
                    self.eval(recv);
                }
                None
            }
        }
    }
}

/// Declared type of a struct field (embedded mutexes by their type name).
pub fn field_type(tp: &TypedProgram, sid: StructId, name: &str) -> Option<Type> {
    let s = tp.struct_decl(sid);
    if let Some(emb) = &s.embed {
        if emb.kind.type_name() == name {
            let t = Type::Mutex(emb.kind);
            return Some(if emb.pointer { Type::Ptr(Box::new(t)) } else { t });
        }
    }
    let f = s.fields.iter().find(|f| f.name.name == name)?;
    Some(lower_type_expr(tp, &f.ty))
}

/// Semantic type of a type expression in a program that already resolved.
pub fn lower_type_expr(tp: &TypedProgram, t: &crate::frontend::ast::TypeExpr) -> Type {
    use crate::frontend::ast::TypeExpr;
    match t {
        TypeExpr::Int => Type::Int,
        TypeExpr::Bool => Type::Bool,
        TypeExpr::Str => Type::Str,
        TypeExpr::Mutex(k) => Type::Mutex(*k),
        TypeExpr::OptiLock => Type::OptiLock,
        TypeExpr::Pointer(i) => Type::Ptr(Box::new(lower_type_expr(tp, i))),
        TypeExpr::Map(k, v) => Type::Map(Box::new(lower_type_expr(tp, k)), Box::new(lower_type_expr(tp, v))),
        TypeExpr::Named(id) => Type::Struct(tp.res.struct_index[&id.name]),
    }
}

/// True for variables whose storage is a global.
pub fn is_global(tp: &TypedProgram, v: usize) -> bool {
    tp.res.vars[v].kind == VarKind::Global
}
