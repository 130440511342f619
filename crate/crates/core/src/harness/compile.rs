//! Lowering of a typed program to stack bytecode.
//!
//! Every variable lives in memory cells; a frame slot holds the address of
//! its variable's storage, so closures share captured variables with their
//! creator by copying slots.

use std::collections::HashMap;

use thiserror::Error;

use crate::frontend::ast::*;
use crate::frontend::resolve::{BodyId, Builtin, CallTarget, FuncId, LockOp, MutexExprId, StructId, Type, VarId, VarKind};
use crate::frontend::TypedProgram;
use crate::pointsto::{field_type, lower_type_expr, AbsLoc};
use crate::runtime::Word;

pub type ProcId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompileError {
    #[error("program has no `main` function")]
    NoMain,
    #[error("`main` must take no parameters")]
    MainParams,
    #[error("struct `{0}` contains itself by value")]
    RecursiveStruct(String),
    #[error("{0}:{1}: cannot execute: {2}")]
    Unsupported(usize, usize, String),
}

#[derive(Clone, Debug)]
pub struct FieldSlot {
    pub name: String,
    pub ty: Type,
    pub off: u32,
}

/// Word layout of every type.
#[derive(Clone, Debug, Default)]
pub struct Layouts {
    sizes: Vec<u32>,
    fields: Vec<Vec<FieldSlot>>,
}

impl Layouts {
    fn build(tp: &TypedProgram) -> Result<Layouts, CompileError> {
        let n = tp.program.structs.len();
        let mut l = Layouts {
            sizes: vec![u32::MAX; n],
            fields: vec![Vec::new(); n],
        };
        let mut visiting = vec![false; n];
        for s in 0..n {
            l.visit(tp, s, &mut visiting)?;
        }
        Ok(l)
    }

    fn visit(&mut self, tp: &TypedProgram, s: StructId, visiting: &mut [bool]) -> Result<u32, CompileError> {
        if self.sizes[s] != u32::MAX {
            return Ok(self.sizes[s]);
        }
        if visiting[s] {
            return Err(CompileError::RecursiveStruct(tp.struct_decl(s).name.name.clone()));
        }
        visiting[s] = true;
        let decl = tp.struct_decl(s);
        let mut names: Vec<String> = decl.fields.iter().map(|f| f.name.name.clone()).collect();
        if let Some(e) = &decl.embed {
            names.push(e.kind.type_name().to_string());
        }
        let mut off = 0;
        let mut slots = Vec::new();
        for name in names {
            let ty = field_type(tp, s, &name).expect("declared field");
            let size = match &ty {
                Type::Struct(inner) => self.visit(tp, *inner, visiting)?,
                _ => 1,
            };
            slots.push(FieldSlot { name, ty, off });
            off += size;
        }
        self.fields[s] = slots;
        self.sizes[s] = off;
        visiting[s] = false;
        Ok(off)
    }

    pub fn size(&self, t: &Type) -> u32 {
        match t {
            Type::Void => 0,
            Type::Struct(s) => self.sizes[*s],
            _ => 1,
        }
    }

    pub fn fields(&self, s: StructId) -> &[FieldSlot] {
        &self.fields[s]
    }

    pub fn field(&self, s: StructId, name: &str) -> &FieldSlot {
        self.fields[s].iter().find(|f| f.name == name).expect("field exists")
    }

    /// Zero value, word by word.
    pub fn zero(&self, t: &Type) -> Vec<Word> {
        let mut out = Vec::new();
        self.zero_into(t, &mut out);
        out
    }

    fn zero_into(&self, t: &Type, out: &mut Vec<Word>) {
        match t {
            Type::Void => {}
            Type::Int => out.push(Word::Int(0)),
            Type::Bool => out.push(Word::Bool(false)),
            Type::Str => out.push(Word::Str("".into())),
            Type::Mutex(_) => out.push(Word::Mutex(Default::default())),
            Type::OptiLock => out.push(Word::Opti(Default::default())),
            Type::Nil | Type::Ptr(_) | Type::Map(..) => out.push(Word::Nil),
            Type::Struct(s) => {
                for f in &self.fields[*s] {
                    self.zero_into(&f.ty, out);
                }
            }
        }
    }

    /// Field names leading to the word at `off` inside a value of type `t`,
    /// with the type of that word.
    pub fn path(&self, t: &Type, mut off: u32) -> (Vec<String>, Type) {
        let mut path = Vec::new();
        let mut cur = t.clone();
        while let Type::Struct(s) = cur {
            let f = self.fields[s]
                .iter()
                .rev()
                .find(|f| f.off <= off)
                .expect("offset inside struct");
            off -= f.off;
            path.push(f.name.clone());
            cur = f.ty.clone();
        }
        (path, cur)
    }
}

/// One bytecode instruction.
#[derive(Clone, Debug)]
pub enum Instr {
    /// Start of a statement: a scheduling point.
    Stmt(StmtId),
    Const(Word),
    /// Address of a local variable.
    Local(u16),
    /// Address of a global variable.
    Global(u32),
    /// Fresh zeroed storage for a local variable.
    Decl { slot: u16, var: VarId },
    /// Pop an address, push the `n` words stored there.
    Load(u32),
    /// Pop `n` words and an address, store them.
    Store(u32),
    /// Offset the address on top of the stack.
    Field(u32),
    /// Keep `size` words at `off` of the top `total` words.
    Pick { off: u32, size: u32, total: u32 },
    /// Allocate a zeroed object, push its address.
    Alloc { ty: Type, origin: AbsLoc, shared: bool },
    /// Move the top value of type `ty` into fresh storage, push its address.
    Spill { ty: Type, origin: AbsLoc },
    MapNew { origin: AbsLoc },
    /// Pop key and map, push the element (or `zero`).
    Index { zero: Word },
    /// Pop value, key and map; store the element.
    MapStore,
    Delete,
    Len,
    Un(UnOp),
    Bin(BinOp),
    /// Duplicate the top `n` words.
    Dup(u32),
    Pop(u32),
    Jump(usize),
    JumpIfFalse(usize),
    JumpIfTrue(usize),
    Call { proc: ProcId, args: u32 },
    /// Pop the return value into the frame's result.
    SetRet(u32),
    Ret,
    /// Record a call to run when the frame returns; pops its arguments.
    Defer { call: Box<Instr>, args: u32 },
    Spawn { proc: ProcId, captures: Vec<u16>, args: u32 },
    Join,
    Print(u32),
    Panic,
    Extern { name: String, args: u32, ret: Type },
    /// Pop a mutex address and run the operation.
    Mutex { op: LockOp, site: MutexExprId },
    /// Pop a mutex and an optimistic lock address and run the operation.
    Opti { op: LockOp, site: u32, call: ExprId },
}

#[derive(Clone, Debug)]
pub struct Proc {
    pub name: String,
    pub body: Option<BodyId>,
    /// Variable held by each slot.
    pub slot_vars: Vec<VarId>,
    /// Slots filled from the creator when the closure is spawned.
    pub captures: usize,
    /// Slots of the parameters, in argument order.
    pub params: Vec<u16>,
    pub ret: Type,
    pub code: Vec<Instr>,
}

/// Executable form of a program.
#[derive(Clone, Debug)]
pub struct Compiled {
    pub tp: TypedProgram,
    pub layouts: Layouts,
    pub procs: Vec<Proc>,
    /// Runs global initializers, then `main`.
    pub init: ProcId,
}

impl Compiled {
    pub fn var(&self, v: VarId) -> &crate::frontend::resolve::VarInfo {
        &self.tp.res.vars[v]
    }

    /// Whether only the owning worker can ever reach the variable.
    pub fn is_private(&self, v: VarId) -> bool {
        let info = self.var(v);
        info.kind != VarKind::Global && !info.captured && !info.address_taken
    }
}

pub fn compile(tp: &TypedProgram) -> Result<Compiled, CompileError> {
    let layouts = Layouts::build(tp)?;
    let main = *tp.res.func_index.get("main").ok_or(CompileError::NoMain)?;
    if tp.func(main).receiver.is_some() {
        return Err(CompileError::NoMain);
    }
    if !tp.func(main).params.is_empty() {
        return Err(CompileError::MainParams);
    }
    let mut proc_of = HashMap::new();
    let mut order = Vec::new();
    for f in 0..tp.program.functions.len() {
        proc_of.insert(BodyId::Func(f), order.len());
        order.push(BodyId::Func(f));
    }
    for b in tp.res.bodies.keys() {
        if let BodyId::Closure(_) = b {
            proc_of.insert(*b, order.len());
            order.push(*b);
        }
    }
    let mut cx = Ctx {
        tp,
        layouts: &layouts,
        proc_of,
        opti_sites: HashMap::new(),
    };
    let mut procs = Vec::new();
    for b in &order {
        procs.push(cx.body(*b)?);
    }
    let init = procs.len();
    procs.push(cx.init(main)?);
    Ok(Compiled {
        tp: tp.clone(),
        layouts,
        procs,
        init,
    })
}

struct Ctx<'a> {
    tp: &'a TypedProgram,
    layouts: &'a Layouts,
    proc_of: HashMap<BodyId, ProcId>,
    /// Index of each optimistic-lock receiver, for context addresses.
    opti_sites: HashMap<OptiKey, u32>,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum OptiKey {
    Var(VarId),
    Expr(ExprId),
}

impl<'a> Ctx<'a> {
    fn body(&mut self, b: BodyId) -> Result<Proc, CompileError> {
        let tp = self.tp;
        let info = &tp.res.bodies[&b];
        let mut slot_vars: Vec<VarId> = info.captures.clone();
        slot_vars.extend(info.locals.iter().copied());
        let slots: HashMap<VarId, u16> = slot_vars.iter().enumerate().map(|(i, v)| (*v, i as u16)).collect();
        let params = info.params.iter().map(|p| slots[p]).collect();
        let ret = match b {
            BodyId::Func(f) => tp.func(f).ret.as_ref().map(|t| lower_type_expr(tp, t)).unwrap_or(Type::Void),
            BodyId::Closure(_) => Type::Void,
        };
        let mut e = Emitter {
            cx: self,
            code: Vec::new(),
            slots,
        };
        e.block(tp.body_block(b))?;
        e.code.push(Instr::Ret);
        Ok(Proc {
            name: tp.body_name(b),
            body: Some(b),
            captures: info.captures.len(),
            slot_vars,
            params,
            ret,
            code: e.code,
        })
    }

    fn init(&mut self, main: FuncId) -> Result<Proc, CompileError> {
        let tp = self.tp;
        let mut e = Emitter {
            cx: self,
            code: Vec::new(),
            slots: HashMap::new(),
        };
        for (i, d) in tp.program.globals.iter().enumerate() {
            if let Some(init) = &d.init {
                let ty = tp.res.vars[tp.res.globals[i]].ty.clone();
                e.code.push(Instr::Global(i as u32));
                e.eval(init)?;
                e.code.push(Instr::Store(e.size(&ty)));
            }
        }
        let main_proc = e.cx.proc_of[&BodyId::Func(main)];
        e.code.push(Instr::Call { proc: main_proc, args: 0 });
        e.code.push(Instr::Ret);
        Ok(Proc {
            name: "init".into(),
            body: None,
            slot_vars: Vec::new(),
            captures: 0,
            params: Vec::new(),
            ret: Type::Void,
            code: e.code,
        })
    }
}

struct Emitter<'c, 'a> {
    cx: &'c mut Ctx<'a>,
    code: Vec<Instr>,
    slots: HashMap<VarId, u16>,
}

type R<T = ()> = Result<T, CompileError>;

impl Emitter<'_, '_> {
    fn tp(&self) -> &TypedProgram {
        self.cx.tp
    }

    fn size(&self, t: &Type) -> u32 {
        self.cx.layouts.size(t)
    }

    fn ty(&self, e: &Expr) -> Type {
        self.tp().ty(e).clone()
    }

    fn unsupported(&self, span: Span, what: &str) -> CompileError {
        let (l, c) = self.tp().program.line_col(span.start);
        CompileError::Unsupported(l, c, what.to_string())
    }

    fn emit(&mut self, i: Instr) -> usize {
        self.code.push(i);
        self.code.len() - 1
    }

    fn patch(&mut self, at: usize) {
        let here = self.code.len();
        match &mut self.code[at] {
            Instr::Jump(t) | Instr::JumpIfFalse(t) | Instr::JumpIfTrue(t) => *t = here,
            _ => unreachable!("patching a non-jump"),
        }
    }

    fn block(&mut self, b: &Block) -> R {
        for s in &b.stmts {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn var_addr(&mut self, v: VarId) {
        if self.tp().res.vars[v].kind == VarKind::Global {
            let idx = self.tp().res.globals.iter().position(|g| *g == v).expect("global");
            self.emit(Instr::Global(idx as u32));
        } else {
            let slot = self.slots[&v];
            self.emit(Instr::Local(slot));
        }
    }

    fn declare(&mut self, s: &Stmt, init: Option<&Expr>) -> R {
        let v = self.tp().res.decl_vars[&s.id];
        let slot = self.slots[&v];
        self.emit(Instr::Decl { slot, var: v });
        if let Some(init) = init {
            let ty = self.tp().res.vars[v].ty.clone();
            self.emit(Instr::Local(slot));
            self.eval(init)?;
            self.emit(Instr::Store(self.size(&ty)));
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> R {
        if !matches!(s.kind, StmtKind::For { .. }) {
            self.emit(Instr::Stmt(s.id));
        }
        match &s.kind {
            StmtKind::VarDecl(d) => self.declare(s, d.init.as_ref())?,
            StmtKind::ShortVar { value, .. } => self.declare(s, Some(value))?,
            StmtKind::Assign { target, value } => {
                if let ExprKind::Index(m, k) = &target.kind {
                    self.eval(m)?;
                    self.eval(k)?;
                    self.eval(value)?;
                    self.emit(Instr::MapStore);
                } else {
                    self.place(target)?;
                    self.eval(value)?;
                    let n = self.size(&self.ty(target));
                    self.emit(Instr::Store(n));
                }
            }
            StmtKind::OpAssign { target, op, value } => {
                let op = match op {
                    AssignOp::Add => BinOp::Add,
                    AssignOp::Sub => BinOp::Sub,
                    AssignOp::Mul => BinOp::Mul,
                };
                self.update(target, op, |e| e.eval(value))?;
            }
            StmtKind::IncDec { target, inc } => {
                let op = if *inc { BinOp::Add } else { BinOp::Sub };
                self.update(target, op, |e| {
                    e.emit(Instr::Const(Word::Int(1)));
                    Ok(())
                })?;
            }
            StmtKind::Expr(e) => {
                self.eval(e)?;
                let n = self.size(&self.ty(e));
                if n > 0 {
                    self.emit(Instr::Pop(n));
                }
            }
            StmtKind::If { cond, then, els } => {
                self.eval(cond)?;
                let jf = self.emit(Instr::JumpIfFalse(0));
                self.block(then)?;
                match els {
                    Some(els) => {
                        let j = self.emit(Instr::Jump(0));
                        self.patch(jf);
                        match els {
                            Else::Block(b) => self.block(b)?,
                            Else::If(s) => self.stmt(s)?,
                        }
                        self.patch(j);
                    }
                    None => self.patch(jf),
                }
            }
            StmtKind::For {
                init,
                cond,
                post,
                body,
            } => {
                if let Some(i) = init {
                    self.stmt(i)?;
                }
                let head = self.emit(Instr::Stmt(s.id));
                self.eval(cond)?;
                let jf = self.emit(Instr::JumpIfFalse(0));
                self.block(body)?;
                if let Some(p) = post {
                    self.stmt(p)?;
                }
                self.emit(Instr::Jump(head));
                self.patch(jf);
            }
            StmtKind::Return(e) => {
                if let Some(e) = e {
                    self.eval(e)?;
                    let n = self.size(&self.ty(e));
                    self.emit(Instr::SetRet(n));
                }
                self.emit(Instr::Ret);
            }
            StmtKind::Defer(e) => {
                let (call, args) = self.call_parts(e)?;
                self.emit(Instr::Defer {
                    call: Box::new(call),
                    args,
                });
            }
            StmtKind::Spawn(c) => {
                let mut args = 0;
                for a in &c.args {
                    self.eval(a)?;
                    args += self.size(&self.ty(a));
                }
                let b = BodyId::Closure(c.id);
                let captures = self.tp().res.bodies[&b]
                    .captures
                    .iter()
                    .map(|v| self.slots[v])
                    .collect();
                self.emit(Instr::Spawn {
                    proc: self.cx.proc_of[&b],
                    captures,
                    args,
                });
            }
        }
        Ok(())
    }

    /// `target op= value` on a single-word target.
    fn update(&mut self, target: &Expr, op: BinOp, value: impl FnOnce(&mut Self) -> R) -> R {
        if let ExprKind::Index(m, k) = &target.kind {
            let vt = match self.ty(m) {
                Type::Map(_, v) => *v,
                _ => return Err(self.unsupported(target.span, "index of a non-map")),
            };
            self.eval(m)?;
            self.eval(k)?;
            self.emit(Instr::Dup(2));
            self.emit(Instr::Index {
                zero: self.cx.layouts.zero(&vt).remove(0),
            });
            value(self)?;
            self.emit(Instr::Bin(op));
            self.emit(Instr::MapStore);
        } else {
            self.place(target)?;
            self.emit(Instr::Dup(1));
            self.emit(Instr::Load(1));
            value(self)?;
            self.emit(Instr::Bin(op));
            self.emit(Instr::Store(1));
        }
        Ok(())
    }

    fn addressable(&self, e: &Expr) -> bool {
        match &e.kind {
            ExprKind::Ident(_) | ExprKind::Composite { .. } => true,
            ExprKind::Field(b, _) => matches!(self.tp().ty(b), Type::Ptr(_)) || self.addressable(b),
            _ => false,
        }
    }

    /// Origin of a call result.
    fn call_origin(&self, e: &Expr) -> AbsLoc {
        match self.tp().res.calls.get(&e.id) {
            Some(CallTarget::Func(f)) | Some(CallTarget::Method { func: f, .. }) => {
                AbsLoc::Ret(self.tp().func(*f).name.span.start)
            }
            _ => AbsLoc::Temp(e.span.start),
        }
    }

    /// Push the address of an lvalue (allocating for composites and
    /// non-addressable struct values).
    fn place(&mut self, e: &Expr) -> R {
        match &e.kind {
            ExprKind::Ident(_) => {
                let v = self.tp().res.ident_vars[&e.id];
                self.var_addr(v);
            }
            ExprKind::Field(b, f) => {
                let bt = self.ty(b);
                let sid = bt.struct_id().ok_or_else(|| self.unsupported(e.span, "field of a non-struct"))?;
                match bt {
                    Type::Ptr(_) => self.eval(b)?,
                    _ if self.addressable(b) => self.place(b)?,
                    _ => {
                        self.eval(b)?;
                        let origin = self.call_origin(b);
                        self.emit(Instr::Spill { ty: bt, origin });
                    }
                }
                let off = self.cx.layouts.field(sid, &f.name).off;
                self.emit(Instr::Field(off));
            }
            ExprKind::Composite { .. } => self.composite(e, true)?,
            ExprKind::Call { .. } => {
                let t = self.ty(e);
                self.eval(e)?;
                let origin = self.call_origin(e);
                self.emit(Instr::Spill { ty: t, origin });
            }
            _ => return Err(self.unsupported(e.span, "expression is not addressable")),
        }
        Ok(())
    }

    /// Allocate and initialize a composite literal; `shared` when its
    /// address can escape.
    fn composite(&mut self, e: &Expr, shared: bool) -> R {
        let ExprKind::Composite { ty, fields } = &e.kind else {
            unreachable!("composite literal")
        };
        let t = lower_type_expr(self.tp(), ty);
        self.emit(Instr::Alloc {
            ty: t.clone(),
            origin: AbsLoc::Heap(e.span.start),
            shared,
        });
        if let Type::Struct(sid) = t {
            for (name, v) in fields {
                let slot = self.cx.layouts.field(sid, &name.name).clone();
                self.emit(Instr::Dup(1));
                self.emit(Instr::Field(slot.off));
                self.eval(v)?;
                self.emit(Instr::Store(self.size(&slot.ty)));
            }
        }
        Ok(())
    }

    fn eval(&mut self, e: &Expr) -> R {
        match &e.kind {
            ExprKind::Int(i) => {
                self.emit(Instr::Const(Word::Int(*i)));
            }
            ExprKind::Bool(b) => {
                self.emit(Instr::Const(Word::Bool(*b)));
            }
            ExprKind::Str(s) => {
                self.emit(Instr::Const(Word::Str(s.as_str().into())));
            }
            ExprKind::Nil => {
                self.emit(Instr::Const(Word::Nil));
            }
            ExprKind::Ident(_) => {
                let n = self.size(&self.ty(e));
                self.place(e)?;
                self.emit(Instr::Load(n));
            }
            ExprKind::Composite { .. } => {
                let n = self.size(&self.ty(e));
                self.composite(e, false)?;
                self.emit(Instr::Load(n));
            }
            ExprKind::Field(b, f) => {
                let n = self.size(&self.ty(e));
                let bt = self.ty(b);
                if matches!(bt, Type::Ptr(_)) || self.addressable(b) {
                    self.place(e)?;
                    self.emit(Instr::Load(n));
                } else {
                    let sid = bt.struct_id().ok_or_else(|| self.unsupported(e.span, "field of a non-struct"))?;
                    let off = self.cx.layouts.field(sid, &f.name).off;
                    let total = self.size(&bt);
                    self.eval(b)?;
                    self.emit(Instr::Pick { off, size: n, total });
                }
            }
            ExprKind::Index(m, k) => {
                let vt = match self.ty(m) {
                    Type::Map(_, v) => *v,
                    _ => return Err(self.unsupported(e.span, "index of a non-map")),
                };
                self.eval(m)?;
                self.eval(k)?;
                self.emit(Instr::Index {
                    zero: self.cx.layouts.zero(&vt).remove(0),
                });
            }
            ExprKind::Call { .. } => {
                let (call, _) = self.call_parts(e)?;
                self.emit(call);
            }
            ExprKind::Unary(op, a) => {
                self.eval(a)?;
                self.emit(Instr::Un(*op));
            }
            ExprKind::Binary(BinOp::And, a, b) => {
                self.eval(a)?;
                self.emit(Instr::Dup(1));
                let j = self.emit(Instr::JumpIfFalse(0));
                self.emit(Instr::Pop(1));
                self.eval(b)?;
                self.patch(j);
            }
            ExprKind::Binary(BinOp::Or, a, b) => {
                self.eval(a)?;
                self.emit(Instr::Dup(1));
                let j = self.emit(Instr::JumpIfTrue(0));
                self.emit(Instr::Pop(1));
                self.eval(b)?;
                self.patch(j);
            }
            ExprKind::Binary(op, a, b) => {
                self.eval(a)?;
                self.eval(b)?;
                self.emit(Instr::Bin(*op));
            }
            ExprKind::AddrOf(inner) => self.place(inner)?,
            ExprKind::MapLit { .. } => {
                self.emit(Instr::MapNew {
                    origin: AbsLoc::Heap(e.span.start),
                });
            }
        }
        Ok(())
    }

    fn args(&mut self, args: &[Expr]) -> R<u32> {
        let mut n = 0;
        for a in args {
            self.eval(a)?;
            n += self.size(&self.ty(a));
        }
        Ok(n)
    }

    /// Emit the argument evaluation of a call; return the instruction that
    /// performs it and the number of argument words it consumes.
    fn call_parts(&mut self, e: &Expr) -> R<(Instr, u32)> {
        let ExprKind::Call { callee, args } = &e.kind else {
            return Err(self.unsupported(e.span, "deferred expression is not a call"));
        };
        let target = self
            .tp()
            .res
            .calls
            .get(&e.id)
            .cloned()
            .ok_or_else(|| self.unsupported(e.span, "unresolved call"))?;
        let recv = || match &callee.kind {
            ExprKind::Field(r, _) => Some(&**r),
            _ => None,
        };
        Ok(match target {
            CallTarget::Func(f) => {
                let n = self.args(args)?;
                (
                    Instr::Call {
                        proc: self.cx.proc_of[&BodyId::Func(f)],
                        args: n,
                    },
                    n,
                )
            }
            CallTarget::Method {
                func,
                addr_recv,
                deref_recv,
            } => {
                let r = recv().ok_or_else(|| self.unsupported(e.span, "method call without receiver"))?;
                let mut n = if addr_recv {
                    self.place(r)?;
                    1
                } else if deref_recv {
                    let rv = self.tp().res.bodies[&BodyId::Func(func)].params[0];
                    let rt = self.tp().res.vars[rv].ty.clone();
                    let size = self.size(&rt);
                    self.eval(r)?;
                    self.emit(Instr::Load(size));
                    size
                } else {
                    self.eval(r)?;
                    self.size(&self.ty(r))
                };
                n += self.args(args)?;
                (
                    Instr::Call {
                        proc: self.cx.proc_of[&BodyId::Func(func)],
                        args: n,
                    },
                    n,
                )
            }
            CallTarget::Extern(x) => {
                let n = self.args(args)?;
                let decl = &self.tp().program.externs[x];
                let ret = decl.ret.as_ref().map(|t| lower_type_expr(self.tp(), t)).unwrap_or(Type::Void);
                (
                    Instr::Extern {
                        name: decl.name.name.clone(),
                        args: n,
                        ret,
                    },
                    n,
                )
            }
            CallTarget::Builtin(b) => {
                let n = self.args(args)?;
                let i = match b {
                    Builtin::Print => Instr::Print(n),
                    Builtin::Panic => Instr::Panic,
                    Builtin::Delete => Instr::Delete,
                    Builtin::Len => Instr::Len,
                    Builtin::Join => Instr::Join,
                };
                (i, n)
            }
            CallTarget::MutexOp(m) => {
                let r = recv().ok_or_else(|| self.unsupported(e.span, "lock call without receiver"))?;
                let me = self.tp().res.mutex_exprs[m].clone();
                self.mutex_addr(r, me.via_anonymous_field)?;
                (Instr::Mutex { op: me.op, site: m }, 1)
            }
            CallTarget::Opti(op) => {
                let r = recv().ok_or_else(|| self.unsupported(e.span, "lock call without receiver"))?;
                match self.ty(r) {
                    Type::OptiLock => self.place(r)?,
                    _ => self.eval(r)?,
                }
                let key = match (&r.kind, self.tp().res.ident_vars.get(&r.id)) {
                    (ExprKind::Ident(_), Some(v)) => OptiKey::Var(*v),
                    _ => OptiKey::Expr(r.id),
                };
                let next = self.cx.opti_sites.len() as u32;
                let site = *self.cx.opti_sites.entry(key).or_insert(next);
                self.args(args)?;
                (Instr::Opti { op, site, call: e.id }, 2)
            }
        })
    }

    /// Push the address of the mutex a lock call operates on.
    fn mutex_addr(&mut self, recv: &Expr, via_embed: bool) -> R {
        let rt = self.ty(recv);
        if via_embed {
            let sid = rt.struct_id().ok_or_else(|| self.unsupported(recv.span, "embedded mutex on a non-struct"))?;
            let emb = self.tp().struct_decl(sid).embed.expect("embedded mutex");
            match rt {
                Type::Ptr(_) => self.eval(recv)?,
                _ => self.place(recv)?,
            }
            let off = self.cx.layouts.field(sid, emb.kind.type_name()).off;
            self.emit(Instr::Field(off));
            if emb.pointer {
                self.emit(Instr::Load(1));
            }
        } else {
            match rt {
                Type::Ptr(_) => self.eval(recv)?,
                _ => self.place(recv)?,
            }
        }
        Ok(())
    }
}
