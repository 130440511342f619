use std::collections::HashSet;

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::FrontendError;

pub fn parse(source: &str) -> Result<Program, FrontendError> {
    let tokens = lex(source)?;
    let struct_names = prescan_struct_names(&tokens);
    let mut p = Parser {
        src: source,
        toks: tokens,
        pos: 0,
        next_stmt: 0,
        next_expr: 0,
        next_closure: 0,
        struct_names,
        no_composite: false,
    };
    p.program()
}

fn prescan_struct_names(toks: &[Token]) -> HashSet<String> {
    toks.windows(3)
        .filter_map(|w| match (&w[0].tok, &w[1].tok, &w[2].tok) {
            (Tok::Type, Tok::Ident(n), Tok::Struct) => Some(n.clone()),
            _ => None,
        })
        .collect()
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Token>,
    pos: usize,
    next_stmt: u32,
    next_expr: u32,
    next_closure: u32,
    struct_names: HashSet<String>,
    /// Set while parsing `if`/`for` headers, where `x {` opens a block.
    no_composite: bool,
}

type PResult<T> = Result<T, FrontendError>;

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn prev_span(&self) -> Span {
        self.toks[self.pos.saturating_sub(1)].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn err<T>(&self, msg: &str) -> PResult<T> {
        let at = self.span().start as usize;
        let found = match self.peek() {
            Tok::Eof => "end of file".to_string(),
            Tok::Semi if self.toks[self.pos].implicit => "newline".to_string(),
            _ => format!("`{}`", &self.src[self.span().range()]),
        };
        Err(FrontendError::syntax(self.src, at, &format!("{msg}, found {found}")))
    }

    fn unsupported<T>(&self, at: Span, what: &str) -> PResult<T> {
        Err(FrontendError::unsupported(self.src, at.start as usize, what))
    }

    fn expect(&mut self, t: Tok, what: &str) -> PResult<Span> {
        if self.peek() == &t {
            Ok(self.bump().span)
        } else {
            self.err(&format!("expected {what}"))
        }
    }

    fn ident(&mut self) -> PResult<Ident> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                let span = self.bump().span;
                Ok(Ident { name, span })
            }
            _ => self.err("expected identifier"),
        }
    }

    fn skip_semis(&mut self) {
        while self.eat(&Tok::Semi) {}
    }

    fn end_stmt(&mut self) -> PResult<()> {
        match self.peek() {
            Tok::Semi => {
                self.bump();
                Ok(())
            }
            Tok::RBrace | Tok::Eof => Ok(()),
            _ => self.err("expected end of statement"),
        }
    }

    fn stmt_id(&mut self) -> StmtId {
        self.next_stmt += 1;
        StmtId(self.next_stmt - 1)
    }

    fn mk_expr(&mut self, kind: ExprKind, span: Span) -> Expr {
        self.next_expr += 1;
        Expr {
            id: ExprId(self.next_expr - 1),
            kind,
            span,
        }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut prog = Program {
            package: "main".to_string(),
            source: self.src.to_string(),
            structs: vec![],
            globals: vec![],
            functions: vec![],
            externs: vec![],
            stmt_count: 0,
            expr_count: 0,
            closure_count: 0,
        };
        self.skip_semis();
        if self.eat(&Tok::Package) {
            prog.package = self.ident()?.name;
            self.end_stmt()?;
        }
        loop {
            self.skip_semis();
            match self.peek() {
                Tok::Eof => break,
                Tok::Type => prog.structs.push(self.struct_decl()?),
                Tok::Var => {
                    let d = self.var_decl()?;
                    prog.globals.push(d);
                }
                Tok::Func => prog.functions.push(self.func_decl()?),
                Tok::Extern => prog.externs.push(self.extern_decl()?),
                _ => return self.err("expected top-level declaration"),
            }
            self.end_stmt()?;
        }
        prog.stmt_count = self.next_stmt;
        prog.expr_count = self.next_expr;
        prog.closure_count = self.next_closure;
        Ok(prog)
    }

    fn struct_decl(&mut self) -> PResult<StructDecl> {
        let start = self.expect(Tok::Type, "`type`")?;
        let name = self.ident()?;
        self.expect(Tok::Struct, "`struct`")?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut fields = Vec::new();
        let mut embed = None;
        loop {
            self.skip_semis();
            if self.eat(&Tok::RBrace) {
                break;
            }
            let fstart = self.span();
            let pointer = self.peek() == &Tok::Star;
            let after = if pointer { self.peek_at(1) } else { self.peek() };
            let embedded_kind = match after {
                Tok::Ident(n) if n == "Mutex" || n == "RWMutex" => {
                    let follows = self.peek_at(if pointer { 2 } else { 1 });
                    if matches!(follows, Tok::Semi | Tok::RBrace) {
                        Some(if n == "Mutex" {
                            MutexKind::Exclusive
                        } else {
                            MutexKind::ReadWrite
                        })
                    } else {
                        None
                    }
                }
                _ => None,
            };
            if let Some(kind) = embedded_kind {
                if pointer {
                    self.bump();
                }
                self.bump();
                if embed.is_some() {
                    return self.unsupported(fstart, "more than one anonymous mutex field");
                }
                embed = Some(Embed {
                    kind,
                    pointer,
                    span: fstart.to(self.prev_span()),
                });
            } else if pointer {
                return self.unsupported(fstart, "anonymous field other than a mutex");
            } else {
                let fname = self.ident()?;
                let ty = self.type_expr()?;
                fields.push(FieldDecl { name: fname, ty });
            }
            self.end_stmt()?;
        }
        Ok(StructDecl {
            name,
            fields,
            embed,
            span: start.to(self.prev_span()),
        })
    }

    fn type_expr(&mut self) -> PResult<TypeExpr> {
        match self.peek().clone() {
            Tok::Star => {
                self.bump();
                Ok(TypeExpr::Pointer(Box::new(self.type_expr()?)))
            }
            Tok::Map => {
                self.bump();
                self.expect(Tok::LBracket, "`[`")?;
                let k = self.type_expr()?;
                self.expect(Tok::RBracket, "`]`")?;
                let v = self.type_expr()?;
                Ok(TypeExpr::Map(Box::new(k), Box::new(v)))
            }
            Tok::Ident(name) => {
                let id = self.ident()?;
                Ok(match name.as_str() {
                    "int" => TypeExpr::Int,
                    "bool" => TypeExpr::Bool,
                    "string" => TypeExpr::Str,
                    "Mutex" => TypeExpr::Mutex(MutexKind::Exclusive),
                    "RWMutex" => TypeExpr::Mutex(MutexKind::ReadWrite),
                    "OptiLock" => TypeExpr::OptiLock,
                    _ => TypeExpr::Named(id),
                })
            }
            Tok::Func => {
                let s = self.span();
                self.unsupported(s, "function types")
            }
            _ => self.err("expected type"),
        }
    }

    fn var_decl(&mut self) -> PResult<VarDecl> {
        let start = self.expect(Tok::Var, "`var`")?;
        let name = self.ident()?;
        let ty = if self.peek() == &Tok::Assign {
            None
        } else {
            Some(self.type_expr()?)
        };
        let init = if self.eat(&Tok::Assign) {
            Some(self.expr()?)
        } else {
            None
        };
        if ty.is_none() && init.is_none() {
            return self.err("expected type or initializer");
        }
        Ok(VarDecl {
            name,
            ty,
            init,
            span: start.to(self.prev_span()),
        })
    }

    fn params(&mut self) -> PResult<Vec<Param>> {
        self.expect(Tok::LParen, "`(`")?;
        let mut out = Vec::new();
        let mut pending: Vec<Ident> = Vec::new();
        while self.peek() != &Tok::RParen {
            let name = self.ident()?;
            if self.peek() == &Tok::Comma {
                self.bump();
                pending.push(name);
                continue;
            }
            let ty = self.type_expr()?;
            for n in pending.drain(..) {
                out.push(Param {
                    name: n,
                    ty: ty.clone(),
                });
            }
            out.push(Param { name, ty });
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        if !pending.is_empty() {
            return self.err("expected parameter type");
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(out)
    }

    fn opt_ret(&mut self) -> PResult<Option<TypeExpr>> {
        match self.peek() {
            Tok::LBrace | Tok::Semi | Tok::Eof => Ok(None),
            Tok::LParen => {
                let s = self.span();
                self.unsupported(s, "multiple return values")
            }
            _ => Ok(Some(self.type_expr()?)),
        }
    }

    fn func_decl(&mut self) -> PResult<FuncDecl> {
        let start = self.expect(Tok::Func, "`func`")?;
        let receiver = if self.peek() == &Tok::LParen {
            let mut r = self.params()?;
            if r.len() != 1 {
                return self.err("expected exactly one receiver");
            }
            r.pop()
        } else {
            None
        };
        let name = self.ident()?;
        let params = self.params()?;
        let ret = self.opt_ret()?;
        let body = self.block()?;
        Ok(FuncDecl {
            name,
            receiver,
            params,
            ret,
            body,
            span: start.to(self.prev_span()),
        })
    }

    fn extern_decl(&mut self) -> PResult<ExternDecl> {
        let start = self.expect(Tok::Extern, "`extern`")?;
        let io = self.ident()?;
        if io.name != "io" {
            return self.unsupported(io.span, "extern declarations other than `extern io`");
        }
        self.expect(Tok::Func, "`func`")?;
        let name = self.ident()?;
        let params = self.params()?;
        let ret = self.opt_ret()?;
        Ok(ExternDecl {
            name,
            params,
            ret,
            span: start.to(self.prev_span()),
        })
    }

    fn block(&mut self) -> PResult<Block> {
        let start = self.expect(Tok::LBrace, "`{`")?;
        let saved = std::mem::replace(&mut self.no_composite, false);
        let mut stmts = Vec::new();
        loop {
            self.skip_semis();
            if self.peek() == &Tok::RBrace {
                break;
            }
            if self.peek() == &Tok::Eof {
                return self.err("expected `}`");
            }
            stmts.push(self.stmt()?);
            self.end_stmt()?;
        }
        let end = self.expect(Tok::RBrace, "`}`")?;
        self.no_composite = saved;
        Ok(Block {
            stmts,
            span: start.to(end),
        })
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let start = self.span();
        match self.peek() {
            Tok::Var => {
                let id = self.stmt_id();
                let d = self.var_decl()?;
                let span = d.span;
                Ok(Stmt {
                    id,
                    kind: StmtKind::VarDecl(d),
                    span,
                })
            }
            Tok::If => self.if_stmt(),
            Tok::For => self.for_stmt(),
            Tok::Return => {
                let id = self.stmt_id();
                self.bump();
                let value = match self.peek() {
                    Tok::Semi | Tok::RBrace => None,
                    _ => Some(self.expr()?),
                };
                Ok(Stmt {
                    id,
                    kind: StmtKind::Return(value),
                    span: start.to(self.prev_span()),
                })
            }
            Tok::Defer => {
                let id = self.stmt_id();
                self.bump();
                let call = self.expr()?;
                if !matches!(call.kind, ExprKind::Call { .. }) {
                    return self.unsupported(call.span, "defer of a non-call expression");
                }
                Ok(Stmt {
                    id,
                    kind: StmtKind::Defer(call),
                    span: start.to(self.prev_span()),
                })
            }
            Tok::Spawn => {
                let id = self.stmt_id();
                self.bump();
                let cstart = self.expect(Tok::Func, "`func` literal after `spawn`")?;
                let params = self.params()?;
                let body = self.block()?;
                self.expect(Tok::LParen, "`(`")?;
                let mut args = Vec::new();
                while self.peek() != &Tok::RParen {
                    args.push(self.expr()?);
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(Tok::RParen, "`)`")?;
                let cid = ClosureId(self.next_closure);
                self.next_closure += 1;
                let span = cstart.to(self.prev_span());
                Ok(Stmt {
                    id,
                    kind: StmtKind::Spawn(Closure {
                        id: cid,
                        params,
                        args,
                        body,
                        span,
                    }),
                    span: start.to(self.prev_span()),
                })
            }
            Tok::Func => self.unsupported(start, "function literals outside `spawn`"),
            Tok::LBrace => self.unsupported(start, "bare blocks"),
            _ => self.simple_stmt(),
        }
    }

    fn simple_stmt(&mut self) -> PResult<Stmt> {
        let start = self.span();
        if let (Tok::Ident(_), Tok::Define) = (self.peek().clone(), self.peek_at(1).clone()) {
            let id = self.stmt_id();
            let name = self.ident()?;
            self.bump();
            let value = self.expr()?;
            return Ok(Stmt {
                id,
                kind: StmtKind::ShortVar { name, value },
                span: start.to(self.prev_span()),
            });
        }
        let id = self.stmt_id();
        let lhs = self.expr()?;
        let kind = match self.peek() {
            Tok::Assign => {
                self.bump();
                StmtKind::Assign {
                    target: lhs,
                    value: self.expr()?,
                }
            }
            Tok::PlusAssign | Tok::MinusAssign | Tok::StarAssign => {
                let op = match self.bump().tok {
                    Tok::PlusAssign => AssignOp::Add,
                    Tok::MinusAssign => AssignOp::Sub,
                    _ => AssignOp::Mul,
                };
                StmtKind::OpAssign {
                    target: lhs,
                    op,
                    value: self.expr()?,
                }
            }
            Tok::Inc | Tok::Dec => {
                let inc = self.bump().tok == Tok::Inc;
                StmtKind::IncDec { target: lhs, inc }
            }
            Tok::Define => return self.unsupported(lhs.span, "`:=` with a non-identifier target"),
            Tok::Comma => return self.unsupported(self.span(), "multiple assignment"),
            _ => StmtKind::Expr(lhs),
        };
        Ok(Stmt {
            id,
            kind,
            span: start.to(self.prev_span()),
        })
    }

    fn header_expr(&mut self) -> PResult<Expr> {
        let saved = std::mem::replace(&mut self.no_composite, true);
        let e = self.expr();
        self.no_composite = saved;
        e
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let start = self.expect(Tok::If, "`if`")?;
        let id = self.stmt_id();
        let cond = self.header_expr()?;
        let then = self.block()?;
        let els = if self.eat(&Tok::Else) {
            if self.peek() == &Tok::If {
                Some(Else::If(Box::new(self.if_stmt()?)))
            } else {
                Some(Else::Block(self.block()?))
            }
        } else {
            None
        };
        Ok(Stmt {
            id,
            kind: StmtKind::If { cond, then, els },
            span: start.to(self.prev_span()),
        })
    }

    fn for_stmt(&mut self) -> PResult<Stmt> {
        let start = self.expect(Tok::For, "`for`")?;
        let id = self.stmt_id();
        if self.peek() == &Tok::LBrace {
            return self.unsupported(start, "`for` without a condition");
        }
        let saved = std::mem::replace(&mut self.no_composite, true);
        let result = (|| {
            let init = if self.peek() == &Tok::Semi {
                None
            } else {
                Some(self.simple_stmt()?)
            };
            if self.peek() == &Tok::Semi && !self.toks[self.pos].implicit {
                self.bump();
                let cond = self.expr()?;
                self.expect(Tok::Semi, "`;`")?;
                let post = if self.peek() == &Tok::LBrace {
                    None
                } else {
                    Some(Box::new(self.simple_stmt()?))
                };
                Ok((init.map(Box::new), cond, post))
            } else {
                match init {
                    Some(Stmt {
                        kind: StmtKind::Expr(e),
                        ..
                    }) => Ok((None, e, None)),
                    _ => self.err("expected loop condition"),
                }
            }
        })();
        self.no_composite = saved;
        let (init, cond, post) = result?;
        let body = self.block()?;
        Ok(Stmt {
            id,
            kind: StmtKind::For {
                init,
                cond,
                post,
                body,
            },
            span: start.to(self.prev_span()),
        })
    }

    // ---- expressions ----

    fn expr(&mut self) -> PResult<Expr> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let (op, prec) = match self.peek() {
                Tok::OrOr => (BinOp::Or, 1),
                Tok::AndAnd => (BinOp::And, 2),
                Tok::EqEq => (BinOp::Eq, 3),
                Tok::NotEq => (BinOp::Ne, 3),
                Tok::Lt => (BinOp::Lt, 3),
                Tok::Le => (BinOp::Le, 3),
                Tok::Gt => (BinOp::Gt, 3),
                Tok::Ge => (BinOp::Ge, 3),
                Tok::Plus => (BinOp::Add, 4),
                Tok::Minus => (BinOp::Sub, 4),
                Tok::Star => (BinOp::Mul, 5),
                Tok::Slash => (BinOp::Div, 5),
                Tok::Percent => (BinOp::Rem, 5),
                _ => break,
            };
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            let span = lhs.span.to(rhs.span);
            lhs = self.mk_expr(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let start = self.span();
        match self.peek() {
            Tok::Not => {
                self.bump();
                let e = self.unary()?;
                let span = start.to(e.span);
                Ok(self.mk_expr(ExprKind::Unary(UnOp::Not, Box::new(e)), span))
            }
            Tok::Minus => {
                self.bump();
                let e = self.unary()?;
                let span = start.to(e.span);
                Ok(self.mk_expr(ExprKind::Unary(UnOp::Neg, Box::new(e)), span))
            }
            Tok::Amp => {
                self.bump();
                let e = self.unary()?;
                let span = start.to(e.span);
                Ok(self.mk_expr(ExprKind::AddrOf(Box::new(e)), span))
            }
            Tok::Star => self.unsupported(start, "explicit pointer dereference"),
            _ => self.postfix(),
        }
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            match self.peek() {
                Tok::Dot => {
                    self.bump();
                    let f = self.ident()?;
                    let span = e.span.to(f.span);
                    e = self.mk_expr(ExprKind::Field(Box::new(e), f), span);
                }
                Tok::LBracket => {
                    self.bump();
                    let idx = self.expr()?;
                    let end = self.expect(Tok::RBracket, "`]`")?;
                    let span = e.span.to(end);
                    e = self.mk_expr(ExprKind::Index(Box::new(e), Box::new(idx)), span);
                }
                Tok::LParen => {
                    self.bump();
                    let mut args = Vec::new();
                    while self.peek() != &Tok::RParen {
                        args.push(self.expr()?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                    let end = self.expect(Tok::RParen, "`)`")?;
                    let span = e.span.to(end);
                    e = self.mk_expr(
                        ExprKind::Call {
                            callee: Box::new(e),
                            args,
                        },
                        span,
                    );
                }
                _ => break,
            }
        }
        Ok(e)
    }

    fn composite_body(&mut self, ty: TypeExpr, start: Span) -> PResult<Expr> {
        self.expect(Tok::LBrace, "`{`")?;
        let saved = std::mem::replace(&mut self.no_composite, false);
        let mut fields = Vec::new();
        loop {
            self.skip_semis();
            if self.peek() == &Tok::RBrace {
                break;
            }
            let name = self.ident()?;
            self.expect(Tok::Colon, "`:` (composite literals must use field names)")?;
            let v = self.expr()?;
            fields.push((name, v));
            self.skip_semis();
            if !self.eat(&Tok::Comma) {
                self.skip_semis();
                break;
            }
        }
        let end = self.expect(Tok::RBrace, "`}`")?;
        self.no_composite = saved;
        Ok(self.mk_expr(ExprKind::Composite { ty, fields }, start.to(end)))
    }

    fn primary(&mut self) -> PResult<Expr> {
        let start = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(self.mk_expr(ExprKind::Int(v), start))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(self.mk_expr(ExprKind::Str(s), start))
            }
            Tok::True | Tok::False => {
                let v = self.bump().tok == Tok::True;
                Ok(self.mk_expr(ExprKind::Bool(v), start))
            }
            Tok::Nil => {
                self.bump();
                Ok(self.mk_expr(ExprKind::Nil, start))
            }
            Tok::LParen => {
                self.bump();
                let saved = std::mem::replace(&mut self.no_composite, false);
                let inner = self.expr();
                self.no_composite = saved;
                let mut inner = inner?;
                let end = self.expect(Tok::RParen, "`)`")?;
                inner.span = start.to(end);
                Ok(inner)
            }
            Tok::Map => {
                let ty = self.type_expr()?;
                let TypeExpr::Map(k, v) = ty else { unreachable!() };
                self.expect(Tok::LBrace, "`{`")?;
                let end = self.expect(Tok::RBrace, "`}` (map literals must be empty)")?;
                Ok(self.mk_expr(ExprKind::MapLit { key: *k, value: *v }, start.to(end)))
            }
            Tok::Ident(name) => {
                let is_type = matches!(name.as_str(), "Mutex" | "RWMutex" | "OptiLock")
                    || self.struct_names.contains(&name);
                if is_type && self.peek_at(1) == &Tok::LBrace && !self.no_composite {
                    let ty = self.type_expr()?;
                    return self.composite_body(ty, start);
                }
                self.bump();
                Ok(self.mk_expr(ExprKind::Ident(name), start))
            }
            Tok::Func => self.unsupported(start, "function literals outside `spawn`"),
            _ => self.err("expected expression"),
        }
    }
}
