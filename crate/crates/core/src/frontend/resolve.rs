//! Name resolution and type inference.
//!
//! Produces side tables keyed by [`ExprId`] / [`StmtId`] instead of
//! mutating the tree, so the parsed [`Program`] stays a faithful image of
//! the source text.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::ast::*;
use super::FrontendError;

pub type FuncId = usize;
pub type StructId = usize;
pub type VarId = usize;
pub type MutexExprId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Type {
    Int,
    Bool,
    Str,
    Nil,
    Void,
    Mutex(MutexKind),
    OptiLock,
    Ptr(Box<Type>),
    Struct(StructId),
    Map(Box<Type>, Box<Type>),
}

impl Type {
    pub fn is_pointer_like(&self) -> bool {
        matches!(self, Type::Ptr(_) | Type::Map(..) | Type::Nil)
    }

    pub fn mutex_kind(&self) -> Option<MutexKind> {
        match self {
            Type::Mutex(k) => Some(*k),
            Type::Ptr(t) => match **t {
                Type::Mutex(k) => Some(k),
                _ => None,
            },
            _ => None,
        }
    }

    /// Struct id for `S` or `*S`.
    pub fn struct_id(&self) -> Option<StructId> {
        match self {
            Type::Struct(s) => Some(*s),
            Type::Ptr(t) => match **t {
                Type::Struct(s) => Some(s),
                _ => None,
            },
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum VarKind {
    Global,
    Param,
    Receiver,
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BodyId {
    Func(FuncId),
    Closure(ClosureId),
}

#[derive(Clone, Debug)]
pub struct VarInfo {
    pub name: String,
    /// Span of the declaring identifier; its start offset names the variable.
    pub decl: Span,
    pub ty: Type,
    pub kind: VarKind,
    pub owner: Option<BodyId>,
    /// Referenced from a spawned closure.
    pub captured: bool,
    /// Operand of `&`.
    pub address_taken: bool,
}

#[derive(Clone, Debug)]
pub struct BodyInfo {
    pub id: BodyId,
    pub parent: Option<BodyId>,
    /// The top-level function lexically enclosing this body.
    pub top_func: FuncId,
    pub block_span: Span,
    /// Receiver (if any) followed by parameters.
    pub params: Vec<VarId>,
    /// Every variable declared directly in this body, parameters included.
    pub locals: Vec<VarId>,
    /// Variables of enclosing bodies referenced here (closures only).
    pub captures: Vec<VarId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Builtin {
    Print,
    Panic,
    Delete,
    Len,
    Join,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum LockOp {
    Lock,
    Unlock,
    RLock,
    RUnlock,
}

impl LockOp {
    pub fn is_lock(self) -> bool {
        matches!(self, LockOp::Lock | LockOp::RLock)
    }

    pub fn is_read(self) -> bool {
        matches!(self, LockOp::RLock | LockOp::RUnlock)
    }

    pub fn method_name(self) -> &'static str {
        match self {
            LockOp::Lock => "Lock",
            LockOp::Unlock => "Unlock",
            LockOp::RLock => "RLock",
            LockOp::RUnlock => "RUnlock",
        }
    }

    /// The runtime entry point that replaces this operation.
    pub fn fast_name(self) -> &'static str {
        match self {
            LockOp::Lock => "FastLock",
            LockOp::Unlock => "FastUnlock",
            LockOp::RLock => "FastRLock",
            LockOp::RUnlock => "FastRUnlock",
        }
    }

    /// Lock op paired with this unlock op (and vice versa).
    pub fn partner(self) -> LockOp {
        match self {
            LockOp::Lock => LockOp::Unlock,
            LockOp::Unlock => LockOp::Lock,
            LockOp::RLock => LockOp::RUnlock,
            LockOp::RUnlock => LockOp::RLock,
        }
    }

    fn from_name(s: &str) -> Option<LockOp> {
        Some(match s {
            "Lock" => LockOp::Lock,
            "Unlock" => LockOp::Unlock,
            "RLock" => LockOp::RLock,
            "RUnlock" => LockOp::RUnlock,
            _ => return None,
        })
    }

    pub fn from_fast_name(s: &str) -> Option<LockOp> {
        Some(match s {
            "FastLock" => LockOp::Lock,
            "FastUnlock" => LockOp::Unlock,
            "FastRLock" => LockOp::RLock,
            "FastRUnlock" => LockOp::RUnlock,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Addressness {
    ByAddress,
    ByValue,
}

/// A lock/unlock operation on a mutex receiver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MutexExpr {
    pub id: MutexExprId,
    /// The whole `recv.Lock()` call expression.
    pub call: ExprId,
    pub call_span: Span,
    pub recv: ExprId,
    pub recv_span: Span,
    pub access_path: Vec<String>,
    pub kind: MutexKind,
    pub op: LockOp,
    pub addressness: Addressness,
    /// Set when the operation goes through an anonymous mutex field.
    pub via_anonymous_field: bool,
    pub deferred: bool,
    pub stmt: StmtId,
    pub body: BodyId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CallTarget {
    Func(FuncId),
    /// Method call; `addr_recv` when the receiver expression's address is
    /// passed implicitly, `deref_recv` when a pointer receiver is copied.
    Method {
        func: FuncId,
        addr_recv: bool,
        deref_recv: bool,
    },
    Extern(usize),
    Builtin(Builtin),
    MutexOp(MutexExprId),
    Opti(LockOp),
}

#[derive(Clone, Debug)]
pub struct Resolution {
    pub types: Vec<Type>,
    pub ident_vars: HashMap<ExprId, VarId>,
    pub decl_vars: HashMap<StmtId, VarId>,
    pub globals: Vec<VarId>,
    pub vars: Vec<VarInfo>,
    pub calls: HashMap<ExprId, CallTarget>,
    pub bodies: BTreeMap<BodyId, BodyInfo>,
    pub mutex_exprs: Vec<MutexExpr>,
    pub struct_index: HashMap<String, StructId>,
    pub methods: HashMap<(StructId, String), FuncId>,
    pub func_index: HashMap<String, FuncId>,
    /// Owning body of each statement.
    pub stmt_body: HashMap<StmtId, BodyId>,
}

/// A parsed program together with its resolution tables.
#[derive(Clone, Debug)]
pub struct TypedProgram {
    pub program: Program,
    pub res: Resolution,
}

impl TypedProgram {
    pub fn ty(&self, e: &Expr) -> &Type {
        &self.res.types[e.id.0 as usize]
    }

    pub fn func(&self, f: FuncId) -> &FuncDecl {
        &self.program.functions[f]
    }

    /// Qualified name used by profiles: `pkg.Func` or `pkg.Type.Method`.
    pub fn qualified_name(&self, f: FuncId) -> String {
        let func = &self.program.functions[f];
        let pkg = &self.program.package;
        match &func.receiver {
            Some(r) => {
                let sname = match &r.ty {
                    TypeExpr::Pointer(t) => type_expr_name(t),
                    t => type_expr_name(t),
                };
                format!("{pkg}.{sname}.{}", func.name.name)
            }
            None => format!("{pkg}.{}", func.name.name),
        }
    }

    pub fn body_block(&self, b: BodyId) -> &Block {
        match b {
            BodyId::Func(f) => &self.program.functions[f].body,
            BodyId::Closure(c) => self.closure(c).map(|c| &c.body).expect("closure exists"),
        }
    }

    pub fn closure(&self, id: ClosureId) -> Option<&Closure> {
        self.program
            .functions
            .iter()
            .find_map(|f| find_closure(&f.body, id))
    }

    /// Human-readable name of a body for diagnostics.
    pub fn body_name(&self, b: BodyId) -> String {
        match b {
            BodyId::Func(f) => self.qualified_name(f),
            BodyId::Closure(c) => {
                let top = self.res.bodies[&b].top_func;
                format!("{}$closure{}", self.qualified_name(top), c.0)
            }
        }
    }

    pub fn struct_decl(&self, s: StructId) -> &StructDecl {
        &self.program.structs[s]
    }
}

fn type_expr_name(t: &TypeExpr) -> String {
    match t {
        TypeExpr::Named(i) => i.name.clone(),
        TypeExpr::Mutex(k) => k.type_name().to_string(),
        TypeExpr::OptiLock => "OptiLock".into(),
        TypeExpr::Int => "int".into(),
        TypeExpr::Bool => "bool".into(),
        TypeExpr::Str => "string".into(),
        TypeExpr::Pointer(t) => format!("*{}", type_expr_name(t)),
        TypeExpr::Map(k, v) => format!("map[{}]{}", type_expr_name(k), type_expr_name(v)),
    }
}

pub fn resolve(program: &Program) -> Result<TypedProgram, FrontendError> {
    let mut r = Resolver::new(program);
    r.run()?;
    let res = Resolution {
        types: r.types,
        ident_vars: r.ident_vars,
        decl_vars: r.decl_vars,
        globals: r.globals,
        vars: r.vars,
        calls: r.calls,
        bodies: r.bodies,
        mutex_exprs: r.mutex_exprs,
        struct_index: r.struct_index,
        methods: r.methods,
        func_index: r.func_index,
        stmt_body: r.stmt_body,
    };
    Ok(TypedProgram {
        program: program.clone(),
        res,
    })
}

struct Scope {
    body: Option<BodyId>,
    names: HashMap<String, VarId>,
}

struct Resolver<'p> {
    prog: &'p Program,
    types: Vec<Type>,
    ident_vars: HashMap<ExprId, VarId>,
    decl_vars: HashMap<StmtId, VarId>,
    globals: Vec<VarId>,
    vars: Vec<VarInfo>,
    calls: HashMap<ExprId, CallTarget>,
    bodies: BTreeMap<BodyId, BodyInfo>,
    mutex_exprs: Vec<MutexExpr>,
    struct_index: HashMap<String, StructId>,
    methods: HashMap<(StructId, String), FuncId>,
    func_index: HashMap<String, FuncId>,
    extern_index: HashMap<String, usize>,
    stmt_body: HashMap<StmtId, BodyId>,
    scopes: Vec<Scope>,
    cur_body: Option<BodyId>,
    cur_top: FuncId,
    cur_ret: Type,
    cur_stmt: StmtId,
}

type RResult<T> = Result<T, FrontendError>;

impl<'p> Resolver<'p> {
    fn new(prog: &'p Program) -> Self {
        Resolver {
            prog,
            types: vec![Type::Void; prog.expr_count as usize],
            ident_vars: HashMap::new(),
            decl_vars: HashMap::new(),
            globals: Vec::new(),
            vars: Vec::new(),
            calls: HashMap::new(),
            bodies: BTreeMap::new(),
            mutex_exprs: Vec::new(),
            struct_index: HashMap::new(),
            methods: HashMap::new(),
            func_index: HashMap::new(),
            extern_index: HashMap::new(),
            stmt_body: HashMap::new(),
            scopes: Vec::new(),
            cur_body: None,
            cur_top: 0,
            cur_ret: Type::Void,
            cur_stmt: StmtId(0),
        }
    }

    fn type_err<T>(&self, at: Span, msg: String) -> RResult<T> {
        Err(FrontendError::type_error(&self.prog.source, at.start as usize, &msg))
    }

    fn show(&self, t: &Type) -> String {
        match t {
            Type::Int => "int".into(),
            Type::Bool => "bool".into(),
            Type::Str => "string".into(),
            Type::Nil => "nil".into(),
            Type::Void => "no value".into(),
            Type::Mutex(k) => k.type_name().into(),
            Type::OptiLock => "OptiLock".into(),
            Type::Ptr(t) => format!("*{}", self.show(t)),
            Type::Struct(s) => self.prog.structs[*s].name.name.clone(),
            Type::Map(k, v) => format!("map[{}]{}", self.show(k), self.show(v)),
        }
    }

    fn lower_type(&self, t: &TypeExpr) -> RResult<Type> {
        Ok(match t {
            TypeExpr::Int => Type::Int,
            TypeExpr::Bool => Type::Bool,
            TypeExpr::Str => Type::Str,
            TypeExpr::Mutex(k) => Type::Mutex(*k),
            TypeExpr::OptiLock => Type::OptiLock,
            TypeExpr::Pointer(t) => {
                let inner = self.lower_type(t)?;
                if !matches!(inner, Type::Mutex(_) | Type::Struct(_) | Type::Int | Type::OptiLock) {
                    return Err(FrontendError::unsupported(
                        &self.prog.source,
                        0,
                        &format!("pointer to {}", self.show(&inner)),
                    ));
                }
                Type::Ptr(Box::new(inner))
            }
            TypeExpr::Map(k, v) => {
                let kt = self.lower_type(k)?;
                let vt = self.lower_type(v)?;
                if !matches!(kt, Type::Int | Type::Str | Type::Bool) {
                    return Err(FrontendError::unsupported(&self.prog.source, 0, "non-scalar map keys"));
                }
                if matches!(vt, Type::Struct(_) | Type::Mutex(_) | Type::OptiLock) {
                    return Err(FrontendError::unsupported(
                        &self.prog.source,
                        0,
                        "map values of struct or mutex type",
                    ));
                }
                Type::Map(Box::new(kt), Box::new(vt))
            }
            TypeExpr::Named(id) => match self.struct_index.get(&id.name) {
                Some(s) => Type::Struct(*s),
                None => {
                    return Err(FrontendError::unresolved(
                        &self.prog.source,
                        id.span.start as usize,
                        &format!("unknown type `{}`", id.name),
                    ))
                }
            },
        })
    }

    fn new_var(&mut self, name: &Ident, ty: Type, kind: VarKind) -> VarId {
        let id = self.vars.len();
        self.vars.push(VarInfo {
            name: name.name.clone(),
            decl: name.span,
            ty,
            kind,
            owner: self.cur_body,
            captured: false,
            address_taken: false,
        });
        if let Some(b) = self.cur_body {
            self.bodies.get_mut(&b).unwrap().locals.push(id);
        }
        self.scopes
            .last_mut()
            .expect("scope")
            .names
            .insert(name.name.clone(), id);
        id
    }

    fn lookup(&mut self, name: &str) -> Option<VarId> {
        let mut crossed: Vec<BodyId> = Vec::new();
        let cur = self.cur_body;
        for scope in self.scopes.iter().rev() {
            if let Some(&v) = scope.names.get(name) {
                let owner = self.vars[v].owner;
                if owner.is_some() && owner != cur {
                    self.vars[v].captured = true;
                    for b in &crossed {
                        let info = self.bodies.get_mut(b).unwrap();
                        if !info.captures.contains(&v) {
                            info.captures.push(v);
                        }
                    }
                }
                return Some(v);
            }
            if let Some(b) = scope.body {
                crossed.push(b);
            }
        }
        None
    }

    fn run(&mut self) -> RResult<()> {
        let prog = self.prog;
        for (i, s) in prog.structs.iter().enumerate() {
            if self.struct_index.insert(s.name.name.clone(), i).is_some() {
                return self.type_err(s.name.span, format!("duplicate type `{}`", s.name.name));
            }
        }
        for s in &prog.structs {
            let mut seen = std::collections::HashSet::new();
            for f in &s.fields {
                if !seen.insert(f.name.name.clone()) {
                    return self.type_err(f.name.span, format!("duplicate field `{}`", f.name.name));
                }
                self.lower_type(&f.ty)
                    .map_err(|e| e.at(&prog.source, f.name.span.start as usize))?;
            }
        }
        for (i, e) in prog.externs.iter().enumerate() {
            self.extern_index.insert(e.name.name.clone(), i);
        }
        for (i, f) in prog.functions.iter().enumerate() {
            match &f.receiver {
                Some(r) => {
                    let rt = self
                        .lower_type(&r.ty)
                        .map_err(|e| e.at(&prog.source, r.name.span.start as usize))?;
                    let Some(sid) = rt.struct_id() else {
                        return self.type_err(r.name.span, "receiver must be a struct or struct pointer".into());
                    };
                    if self.methods.insert((sid, f.name.name.clone()), i).is_some() {
                        return self.type_err(f.name.span, format!("duplicate method `{}`", f.name.name));
                    }
                }
                None => {
                    if self.func_index.insert(f.name.name.clone(), i).is_some()
                        || self.extern_index.contains_key(&f.name.name)
                    {
                        return self.type_err(f.name.span, format!("duplicate function `{}`", f.name.name));
                    }
                }
            }
        }
        self.scopes.push(Scope {
            body: None,
            names: HashMap::new(),
        });
        for g in &prog.globals {
            let ty = self.var_decl_type(g)?;
            let v = self.new_var(&g.name, ty, VarKind::Global);
            self.globals.push(v);
        }
        for (i, f) in prog.functions.iter().enumerate() {
            self.function(i, f)?;
        }
        Ok(())
    }

    fn var_decl_type(&mut self, d: &VarDecl) -> RResult<Type> {
        let declared = match &d.ty {
            Some(t) => Some(
                self.lower_type(t)
                    .map_err(|e| e.at(&self.prog.source, d.name.span.start as usize))?,
            ),
            None => None,
        };
        let init_ty = match &d.init {
            Some(e) => Some(self.expr(e)?),
            None => None,
        };
        match (declared, init_ty) {
            (Some(t), Some(it)) => {
                self.check_assignable(&t, &it, d.init.as_ref().unwrap().span)?;
                Ok(t)
            }
            (Some(t), None) => Ok(t),
            (None, Some(it)) => {
                if matches!(it, Type::Nil | Type::Void) {
                    return self.type_err(d.span, "cannot infer variable type".into());
                }
                Ok(it)
            }
            (None, None) => unreachable!(),
        }
    }

    fn enter_body(&mut self, id: BodyId, parent: Option<BodyId>, span: Span) {
        self.bodies.insert(
            id,
            BodyInfo {
                id,
                parent,
                top_func: self.cur_top,
                block_span: span,
                params: vec![],
                locals: vec![],
                captures: vec![],
            },
        );
        self.scopes.push(Scope {
            body: Some(id),
            names: HashMap::new(),
        });
        self.cur_body = Some(id);
    }

    fn function(&mut self, idx: FuncId, f: &FuncDecl) -> RResult<()> {
        self.cur_top = idx;
        let body_id = BodyId::Func(idx);
        self.enter_body(body_id, None, f.body.span);
        let mut params = Vec::new();
        if let Some(r) = &f.receiver {
            let t = self.lower_type(&r.ty)?;
            params.push(self.new_var(&r.name, t, VarKind::Receiver));
        }
        for p in &f.params {
            let t = self
                .lower_type(&p.ty)
                .map_err(|e| e.at(&self.prog.source, p.name.span.start as usize))?;
            params.push(self.new_var(&p.name, t, VarKind::Param));
        }
        self.bodies.get_mut(&body_id).unwrap().params = params;
        self.cur_ret = match &f.ret {
            Some(t) => self.lower_type(t)?,
            None => Type::Void,
        };
        self.block_stmts(&f.body)?;
        self.scopes.pop();
        self.cur_body = None;
        Ok(())
    }

    fn block_stmts(&mut self, b: &Block) -> RResult<()> {
        self.scopes.push(Scope {
            body: None,
            names: HashMap::new(),
        });
        for s in &b.stmts {
            self.stmt(s)?;
        }
        self.scopes.pop();
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> RResult<()> {
        self.stmt_body.insert(s.id, self.cur_body.expect("in body"));
        self.cur_stmt = s.id;
        match &s.kind {
            StmtKind::VarDecl(d) => {
                let ty = self.var_decl_type(d)?;
                let v = self.new_var(&d.name, ty, VarKind::Local);
                self.decl_vars.insert(s.id, v);
            }
            StmtKind::ShortVar { name, value } => {
                let ty = self.expr(value)?;
                if matches!(ty, Type::Nil | Type::Void) {
                    return self.type_err(value.span, "cannot infer variable type".into());
                }
                let v = self.new_var(name, ty, VarKind::Local);
                self.decl_vars.insert(s.id, v);
            }
            StmtKind::Assign { target, value } => {
                let tt = self.lvalue(target)?;
                let vt = self.expr(value)?;
                self.check_assignable(&tt, &vt, value.span)?;
            }
            StmtKind::OpAssign { target, value, .. } => {
                let tt = self.lvalue(target)?;
                let vt = self.expr(value)?;
                if tt != Type::Int || vt != Type::Int {
                    return self.type_err(s.span, "compound assignment requires int operands".into());
                }
            }
            StmtKind::IncDec { target, .. } => {
                if self.lvalue(target)? != Type::Int {
                    return self.type_err(s.span, "++/-- requires an int operand".into());
                }
            }
            StmtKind::Expr(e) => {
                if !matches!(e.kind, ExprKind::Call { .. }) {
                    return self.type_err(e.span, "expression statement must be a call".into());
                }
                self.expr(e)?;
            }
            StmtKind::Defer(e) => {
                self.expr(e)?;
                if let Some(CallTarget::MutexOp(m)) = self.calls.get(&e.id) {
                    let m = *m;
                    if self.mutex_exprs[m].op.is_lock() {
                        return Err(FrontendError::unsupported(
                            &self.prog.source,
                            e.span.start as usize,
                            "deferred lock acquisition",
                        ));
                    }
                    self.mutex_exprs[m].deferred = true;
                }
            }
            StmtKind::If { cond, then, els } => {
                let ct = self.expr(cond)?;
                if ct != Type::Bool {
                    return self.type_err(cond.span, "condition must be bool".into());
                }
                self.block_stmts(then)?;
                match els {
                    Some(Else::Block(b)) => self.block_stmts(b)?,
                    Some(Else::If(s)) => self.stmt(s)?,
                    None => {}
                }
            }
            StmtKind::For {
                init,
                cond,
                post,
                body,
            } => {
                self.scopes.push(Scope {
                    body: None,
                    names: HashMap::new(),
                });
                if let Some(i) = init {
                    self.stmt(i)?;
                }
                let ct = self.expr(cond)?;
                if ct != Type::Bool {
                    return self.type_err(cond.span, "condition must be bool".into());
                }
                if let Some(p) = post {
                    self.stmt(p)?;
                }
                self.block_stmts(body)?;
                self.scopes.pop();
            }
            StmtKind::Return(v) => {
                let t = match v {
                    Some(e) => self.expr(e)?,
                    None => Type::Void,
                };
                let want = self.cur_ret.clone();
                if want == Type::Void && t != Type::Void {
                    return self.type_err(s.span, "unexpected return value".into());
                }
                if want != Type::Void {
                    if t == Type::Void {
                        return self.type_err(s.span, "missing return value".into());
                    }
                    self.check_assignable(&want, &t, s.span)?;
                }
            }
            StmtKind::Spawn(c) => {
                for a in &c.args {
                    self.expr(a)?;
                }
                if c.args.len() != c.params.len() {
                    return self.type_err(c.span, "argument count mismatch".into());
                }
                let parent = self.cur_body;
                let saved_ret = std::mem::replace(&mut self.cur_ret, Type::Void);
                let id = BodyId::Closure(c.id);
                self.enter_body(id, parent, c.body.span);
                let mut params = Vec::new();
                for (p, a) in c.params.iter().zip(&c.args) {
                    let t = self.lower_type(&p.ty)?;
                    let at = self.types[a.id.0 as usize].clone();
                    self.check_assignable(&t, &at, a.span)?;
                    params.push(self.new_var(&p.name, t, VarKind::Param));
                }
                self.bodies.get_mut(&id).unwrap().params = params;
                self.block_stmts(&c.body)?;
                self.scopes.pop();
                self.cur_body = parent;
                self.cur_ret = saved_ret;
                self.cur_stmt = s.id;
            }
        }
        Ok(())
    }

    fn check_assignable(&self, to: &Type, from: &Type, at: Span) -> RResult<()> {
        let ok = to == from || (*from == Type::Nil && to.is_pointer_like());
        if ok {
            Ok(())
        } else {
            self.type_err(
                at,
                format!("cannot use {} as {}", self.show(from), self.show(to)),
            )
        }
    }

    fn lvalue(&mut self, e: &Expr) -> RResult<Type> {
        match &e.kind {
            ExprKind::Ident(_) | ExprKind::Field(..) | ExprKind::Index(..) => self.expr(e),
            _ => self.type_err(e.span, "cannot assign to this expression".into()),
        }
    }

    fn set(&mut self, e: &Expr, t: Type) -> Type {
        self.types[e.id.0 as usize] = t.clone();
        t
    }

    fn field_type(&self, sid: StructId, name: &str) -> Option<Type> {
        let s = &self.prog.structs[sid];
        if let Some(f) = s.fields.iter().find(|f| f.name.name == name) {
            return self.lower_type(&f.ty).ok();
        }
        if let Some(emb) = &s.embed {
            if emb.kind.type_name() == name {
                let t = Type::Mutex(emb.kind);
                return Some(if emb.pointer { Type::Ptr(Box::new(t)) } else { t });
            }
        }
        None
    }

    fn expr(&mut self, e: &Expr) -> RResult<Type> {
        let t = match &e.kind {
            ExprKind::Int(_) => Type::Int,
            ExprKind::Bool(_) => Type::Bool,
            ExprKind::Str(_) => Type::Str,
            ExprKind::Nil => Type::Nil,
            ExprKind::Ident(name) => match self.lookup(name) {
                Some(v) => {
                    self.ident_vars.insert(e.id, v);
                    self.vars[v].ty.clone()
                }
                None => {
                    return Err(FrontendError::unresolved(
                        &self.prog.source,
                        e.span.start as usize,
                        &format!("undefined: `{name}`"),
                    ))
                }
            },
            ExprKind::Field(base, f) => {
                let bt = self.expr(base)?;
                let Some(sid) = bt.struct_id() else {
                    return self.type_err(f.span, format!("{} has no field `{}`", self.show(&bt), f.name));
                };
                match self.field_type(sid, &f.name) {
                    Some(t) => t,
                    None => {
                        return self.type_err(
                            f.span,
                            format!("{} has no field `{}`", self.show(&bt), f.name),
                        )
                    }
                }
            }
            ExprKind::Index(m, k) => {
                let mt = self.expr(m)?;
                let kt = self.expr(k)?;
                match mt {
                    Type::Map(key, val) => {
                        self.check_assignable(&key, &kt, k.span)?;
                        *val
                    }
                    _ => return self.type_err(e.span, "indexing a non-map value".into()),
                }
            }
            ExprKind::Unary(op, inner) => {
                let it = self.expr(inner)?;
                match (op, &it) {
                    (UnOp::Not, Type::Bool) => Type::Bool,
                    (UnOp::Neg, Type::Int) => Type::Int,
                    _ => return self.type_err(e.span, format!("invalid operand {}", self.show(&it))),
                }
            }
            ExprKind::Binary(op, a, b) => {
                let at = self.expr(a)?;
                let bt = self.expr(b)?;
                use BinOp::*;
                match op {
                    Add if at == Type::Str && bt == Type::Str => Type::Str,
                    Add | Sub | Mul | Div | Rem if at == Type::Int && bt == Type::Int => Type::Int,
                    Lt | Le | Gt | Ge if at == Type::Int && bt == Type::Int => Type::Bool,
                    And | Or if at == Type::Bool && bt == Type::Bool => Type::Bool,
                    Eq | Ne
                        if at == bt
                            && matches!(at, Type::Int | Type::Bool | Type::Str | Type::Ptr(_)) =>
                    {
                        Type::Bool
                    }
                    Eq | Ne
                        if (at == Type::Nil && bt.is_pointer_like())
                            || (bt == Type::Nil && at.is_pointer_like()) =>
                    {
                        Type::Bool
                    }
                    _ => {
                        return self.type_err(
                            e.span,
                            format!("invalid operation: {} {op} {}", self.show(&at), self.show(&bt)),
                        )
                    }
                }
            }
            ExprKind::AddrOf(inner) => {
                let it = match &inner.kind {
                    ExprKind::Composite { .. } => self.expr(inner)?,
                    ExprKind::Ident(_) | ExprKind::Field(..) => {
                        let t = self.expr(inner)?;
                        if let ExprKind::Ident(_) = inner.kind {
                            if let Some(&v) = self.ident_vars.get(&inner.id) {
                                self.vars[v].address_taken = true;
                            }
                        }
                        t
                    }
                    _ => return self.type_err(e.span, "cannot take the address of this expression".into()),
                };
                if !matches!(it, Type::Mutex(_) | Type::Struct(_) | Type::Int | Type::OptiLock) {
                    return Err(FrontendError::unsupported(
                        &self.prog.source,
                        e.span.start as usize,
                        &format!("pointer to {}", self.show(&it)),
                    ));
                }
                Type::Ptr(Box::new(it))
            }
            ExprKind::Composite { ty, fields } => {
                let t = self
                    .lower_type(ty)
                    .map_err(|err| err.at(&self.prog.source, e.span.start as usize))?;
                match &t {
                    Type::Struct(sid) => {
                        for (name, v) in fields {
                            let vt = self.expr(v)?;
                            match self.field_type(*sid, &name.name) {
                                Some(ft) => self.check_assignable(&ft, &vt, v.span)?,
                                None => {
                                    return self.type_err(
                                        name.span,
                                        format!("unknown field `{}`", name.name),
                                    )
                                }
                            }
                        }
                    }
                    _ => {
                        if let Some((name, _)) = fields.first() {
                            return self.type_err(name.span, format!("unknown field `{}`", name.name));
                        }
                    }
                }
                t
            }
            ExprKind::MapLit { key, value } => {
                let k = self.lower_type(key)?;
                let v = self.lower_type(value)?;
                let t = self.lower_type(&TypeExpr::Map(Box::new(key.clone()), Box::new(value.clone())));
                t.map_err(|err| err.at(&self.prog.source, e.span.start as usize))?;
                Type::Map(Box::new(k), Box::new(v))
            }
            ExprKind::Call { callee, args } => self.call(e, callee, args)?,
        };
        Ok(self.set(e, t))
    }

    fn args(&mut self, args: &[Expr]) -> RResult<Vec<Type>> {
        args.iter().map(|a| self.expr(a)).collect()
    }

    fn check_params(&mut self, call: &Expr, params: &[Param], args: &[Type], arg_exprs: &[Expr]) -> RResult<()> {
        if params.len() != args.len() {
            return self.type_err(call.span, format!("expected {} arguments, got {}", params.len(), args.len()));
        }
        for ((p, a), ae) in params.iter().zip(args).zip(arg_exprs) {
            let pt = self.lower_type(&p.ty)?;
            self.check_assignable(&pt, a, ae.span)?;
        }
        Ok(())
    }

    fn call(&mut self, e: &Expr, callee: &Expr, args: &[Expr]) -> RResult<Type> {
        match &callee.kind {
            ExprKind::Ident(name) => {
                let builtin = match name.as_str() {
                    "print" => Some(Builtin::Print),
                    "panic" => Some(Builtin::Panic),
                    "delete" => Some(Builtin::Delete),
                    "len" => Some(Builtin::Len),
                    "join" => Some(Builtin::Join),
                    _ => None,
                };
                if let Some(b) = builtin {
                    if self.lookup(name).is_none() {
                        let ats = self.args(args)?;
                        self.calls.insert(e.id, CallTarget::Builtin(b));
                        return match b {
                            Builtin::Print => Ok(Type::Void),
                            Builtin::Panic => {
                                if ats.len() != 1 {
                                    return self.type_err(e.span, "panic takes one argument".into());
                                }
                                Ok(Type::Void)
                            }
                            Builtin::Delete => {
                                if ats.len() != 2 || !matches!(ats[0], Type::Map(..)) {
                                    return self.type_err(e.span, "delete(map, key)".into());
                                }
                                Ok(Type::Void)
                            }
                            Builtin::Len => {
                                if ats.len() != 1 || !matches!(ats[0], Type::Map(..) | Type::Str) {
                                    return self.type_err(e.span, "len takes a map or string".into());
                                }
                                Ok(Type::Int)
                            }
                            Builtin::Join => {
                                if !ats.is_empty() {
                                    return self.type_err(e.span, "join takes no arguments".into());
                                }
                                Ok(Type::Void)
                            }
                        };
                    }
                }
                if let Some(&f) = self.func_index.get(name) {
                    let ats = self.args(args)?;
                    let func = &self.prog.functions[f];
                    self.check_params(e, &func.params, &ats, args)?;
                    self.calls.insert(e.id, CallTarget::Func(f));
                    return match &func.ret {
                        Some(t) => self.lower_type(t),
                        None => Ok(Type::Void),
                    };
                }
                if let Some(&x) = self.extern_index.get(name) {
                    let ats = self.args(args)?;
                    let ext = &self.prog.externs[x];
                    self.check_params(e, &ext.params, &ats, args)?;
                    self.calls.insert(e.id, CallTarget::Extern(x));
                    return match &ext.ret {
                        Some(t) => self.lower_type(t),
                        None => Ok(Type::Void),
                    };
                }
                Err(FrontendError::unresolved(
                    &self.prog.source,
                    callee.span.start as usize,
                    &format!("undefined function `{name}`"),
                ))
            }
            ExprKind::Field(recv, method) => {
                let rt = self.expr(recv)?;
                self.set(callee, Type::Void);
                // Methods on OptiLock.
                if matches!(rt, Type::OptiLock | Type::Ptr(_)) && rt != Type::Ptr(Box::new(Type::Int)) {
                    if let Some(op) = LockOp::from_fast_name(&method.name) {
                        if matches!(rt, Type::OptiLock)
                            || matches!(&rt, Type::Ptr(t) if **t == Type::OptiLock)
                        {
                            let ats = self.args(args)?;
                            if ats.len() != 1 || !matches!(&ats[0], Type::Ptr(t) if matches!(**t, Type::Mutex(_))) {
                                return self.type_err(e.span, format!("{} takes a mutex pointer", method.name));
                            }
                            let k = ats[0].mutex_kind().unwrap();
                            if op.is_read() && k == MutexKind::Exclusive {
                                return self.type_err(e.span, format!("{} on a Mutex", method.name));
                            }
                            self.calls.insert(e.id, CallTarget::Opti(op));
                            return Ok(Type::Void);
                        }
                    }
                }
                // Direct lock operations on a mutex value or pointer.
                if let Some(kind) = rt.mutex_kind() {
                    let Some(op) = LockOp::from_name(&method.name) else {
                        return self.type_err(method.span, format!("{} has no method `{}`", self.show(&rt), method.name));
                    };
                    return self.mutex_op(e, recv, args, kind, op, matches!(rt, Type::Ptr(_)), false);
                }
                if let Some(sid) = rt.struct_id() {
                    if let Some(&f) = self.methods.get(&(sid, method.name.clone())) {
                        let ats = self.args(args)?;
                        let func = &self.prog.functions[f];
                        self.check_params(e, &func.params, &ats, args)?;
                        let wants_ptr = matches!(func.receiver.as_ref().unwrap().ty, TypeExpr::Pointer(_));
                        let is_ptr = matches!(rt, Type::Ptr(_));
                        if wants_ptr && !is_ptr && !is_addressable(recv) {
                            return self.type_err(recv.span, "cannot take the address of method receiver".into());
                        }
                        self.calls.insert(
                            e.id,
                            CallTarget::Method {
                                func: f,
                                addr_recv: wants_ptr && !is_ptr,
                                deref_recv: !wants_ptr && is_ptr,
                            },
                        );
                        if wants_ptr && !is_ptr {
                            if let ExprKind::Ident(_) = recv.kind {
                                if let Some(&v) = self.ident_vars.get(&recv.id) {
                                    self.vars[v].address_taken = true;
                                }
                            }
                        }
                        return match &func.ret {
                            Some(t) => self.lower_type(t),
                            None => Ok(Type::Void),
                        };
                    }
                    let s = &self.prog.structs[sid];
                    if let (Some(emb), Some(op)) = (s.embed, LockOp::from_name(&method.name)) {
                        return self.mutex_op(e, recv, args, emb.kind, op, emb.pointer, true);
                    }
                }
                self.type_err(method.span, format!("{} has no method `{}`", self.show(&rt), method.name))
            }
            _ => self.type_err(callee.span, "cannot call this expression".into()),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn mutex_op(
        &mut self,
        call: &Expr,
        recv: &Expr,
        args: &[Expr],
        kind: MutexKind,
        op: LockOp,
        pointer: bool,
        via_anonymous: bool,
    ) -> RResult<Type> {
        if !args.is_empty() {
            return self.type_err(call.span, format!("{} takes no arguments", op.method_name()));
        }
        if op.is_read() && kind == MutexKind::Exclusive {
            return self.type_err(call.span, format!("Mutex has no method `{}`", op.method_name()));
        }
        let Some(mut path) = access_path(recv) else {
            return Err(FrontendError::unsupported(
                &self.prog.source,
                recv.span.start as usize,
                "lock receiver that is not a variable or field path",
            ));
        };
        if via_anonymous {
            path.push(kind.type_name().to_string());
        }
        let id = self.mutex_exprs.len();
        self.mutex_exprs.push(MutexExpr {
            id,
            call: call.id,
            call_span: call.span,
            recv: recv.id,
            recv_span: recv.span,
            access_path: path,
            kind,
            op,
            addressness: if pointer {
                Addressness::ByAddress
            } else {
                Addressness::ByValue
            },
            via_anonymous_field: via_anonymous,
            deferred: false,
            stmt: self.cur_stmt,
            body: self.cur_body.expect("in body"),
        });
        self.calls.insert(call.id, CallTarget::MutexOp(id));
        if !pointer {
            if let ExprKind::Ident(_) = recv.kind {
                if let Some(&v) = self.ident_vars.get(&recv.id) {
                    // Locking a mutex value implicitly takes its address.
                    self.vars[v].address_taken = true;
                }
            }
        }
        Ok(Type::Void)
    }
}

fn find_closure(block: &Block, id: ClosureId) -> Option<&Closure> {
    for s in &block.stmts {
        if let Some(c) = find_closure_stmt(s, id) {
            return Some(c);
        }
    }
    None
}

fn find_closure_stmt(s: &Stmt, id: ClosureId) -> Option<&Closure> {
    match &s.kind {
        StmtKind::Spawn(c) if c.id == id => Some(c),
        StmtKind::Spawn(c) => find_closure(&c.body, id),
        StmtKind::If { then, els, .. } => find_closure(then, id).or_else(|| match els {
            Some(Else::Block(b)) => find_closure(b, id),
            Some(Else::If(s)) => find_closure_stmt(s, id),
            None => None,
        }),
        StmtKind::For { body, .. } => find_closure(body, id),
        _ => None,
    }
}

fn is_addressable(e: &Expr) -> bool {
    matches!(e.kind, ExprKind::Ident(_) | ExprKind::Field(..))
}

fn access_path(e: &Expr) -> Option<Vec<String>> {
    match &e.kind {
        ExprKind::Ident(n) => Some(vec![n.clone()]),
        ExprKind::Field(b, f) => {
            let mut p = access_path(b)?;
            p.push(f.name.clone());
            Some(p)
        }
        _ => None,
    }
}
