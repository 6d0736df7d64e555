//! Recursive-descent parser for `.adl` kernel files.
//!
//! Statement forms: `const NAME = INT`, `def f[tparams](params) [-> T]:`,
//! `for v in range(E):`, `for v1, v2 in grid(E1, E2, name="X"):`, assignment
//! and compound assignment, `call g(args)` (bare `g(args)` also accepted),
//! `x = g[targs](args)`, `return name`, and local declarations
//! `name: T[shape] [= expr]`. Casts are spelled `ty(expr)`.

use crate::ast::*;
use crate::diag::{Diag, Result, Span};
use crate::lexer::{lex, Tok, Token};

pub fn parse(file: &str, src: &str) -> Result<Module> {
    let tokens = lex(file, src)?;
    let mut p = Parser { file: file.to_string(), tokens, pos: 0 };
    p.module()
}

struct Parser {
    file: String,
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, msg: impl Into<String>) -> Diag {
        Diag::user(&self.file, self.span(), msg)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected {what}, found {}", describe(self.peek()))))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, Span)> {
        let span = self.span();
        match self.bump() {
            Tok::Ident(s) => Ok((s, span)),
            other => Err(Diag::user(&self.file, span, format!("expected {what}, found {}", describe(&other)))),
        }
    }

    fn eat_ident(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(s) if s == kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn at_ident(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    // -- module level -------------------------------------------------------

    fn module(&mut self) -> Result<Module> {
        let mut m = Module { file: self.file.clone(), consts: Vec::new(), funcs: Vec::new() };
        loop {
            match self.peek() {
                Tok::Eof => break,
                Tok::Ident(s) if s == "const" => m.consts.push(self.const_def()?),
                Tok::Ident(s) if s == "def" => m.funcs.push(self.func_def()?),
                _ => return Err(self.err("expected `const` or `def` at module level")),
            }
        }
        if m.funcs.is_empty() {
            return Err(Diag::user(&self.file, Span::new(1, 1), "module defines no functions"));
        }
        Ok(m)
    }

    fn const_def(&mut self) -> Result<ConstDef> {
        let span = self.span();
        self.bump(); // const
        let (name, _) = self.expect_ident("constant name")?;
        self.expect(Tok::Assign, "`=`")?;
        let value = match self.bump() {
            Tok::Int(v) => v,
            Tok::Minus => match self.bump() {
                Tok::Int(v) => -v,
                _ => return Err(self.err("expected integer constant")),
            },
            _ => return Err(self.err("expected integer constant")),
        };
        self.expect(Tok::Newline, "end of line")?;
        Ok(ConstDef { name, value, span })
    }

    fn func_def(&mut self) -> Result<FuncDef> {
        let span = self.span();
        self.bump(); // def
        let (name, _) = self.expect_ident("function name")?;
        let mut tparams = Vec::new();
        if *self.peek() == Tok::LBracket {
            self.bump();
            loop {
                tparams.push(self.tparam()?);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            self.expect(Tok::RBracket, "`]`")?;
        }
        self.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        while *self.peek() != Tok::RParen {
            let (pname, pspan) = self.expect_ident("parameter name")?;
            self.expect(Tok::Colon, "`:`")?;
            let ty = self.type_expr()?;
            params.push(Param { name: pname, ty, span: pspan });
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        let ret = if *self.peek() == Tok::Arrow {
            self.bump();
            Some(self.type_expr()?)
        } else {
            None
        };
        self.expect(Tok::Colon, "`:`")?;
        self.expect(Tok::Newline, "end of line")?;
        let body = self.block()?;
        Ok(FuncDef { name, tparams, params, ret, body, span })
    }

    fn tparam(&mut self) -> Result<TParam> {
        let (name, span) = self.expect_ident("template parameter")?;
        if *self.peek() != Tok::Colon {
            return Ok(TParam::Type { name, allowed: Vec::new(), span });
        }
        self.bump(); // :
        if self.eat_ident("index") {
            return Ok(TParam::Index { name, span });
        }
        self.expect(Tok::LParen, "`index` or `(type, ...)`")?;
        let mut allowed = Vec::new();
        loop {
            allowed.push(self.elem_expr()?);
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(TParam::Type { name, allowed, span })
    }

    fn elem_expr(&mut self) -> Result<ElemExpr> {
        if self.at_ident("fixed") || self.at_ident("ufixed") {
            let unsigned = self.at_ident("ufixed");
            self.bump();
            self.expect(Tok::LParen, "`(`")?;
            let width = self.expr()?;
            self.expect(Tok::Comma, "`,`")?;
            let frac = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(ElemExpr::Fixed { unsigned, width: Box::new(width), frac: Box::new(frac) });
        }
        let (name, _) = self.expect_ident("element type")?;
        Ok(ElemExpr::Named(name))
    }

    fn type_expr(&mut self) -> Result<TypeExpr> {
        let span = self.span();
        let elem = self.elem_expr()?;
        let mut shape = Vec::new();
        if *self.peek() == Tok::LBracket {
            self.bump();
            loop {
                shape.push(self.expr()?);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            self.expect(Tok::RBracket, "`]`")?;
        }
        Ok(TypeExpr { elem, shape, span })
    }

    // -- statements ---------------------------------------------------------

    fn block(&mut self) -> Result<Vec<Stmt>> {
        self.expect(Tok::Indent, "an indented block")?;
        let mut stmts = Vec::new();
        while *self.peek() != Tok::Dedent {
            stmts.push(self.stmt()?);
        }
        self.bump(); // dedent
        Ok(stmts)
    }

    fn stmt(&mut self) -> Result<Stmt> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Ident(s) if s == "for" => self.for_stmt(),
            Tok::Ident(s) if s == "return" => {
                self.bump();
                let (value, _) = self.expect_ident("a name to return")?;
                self.expect(Tok::Newline, "end of line")?;
                Ok(Stmt::Return { value, span })
            }
            Tok::Ident(s) if s == "call" => {
                self.bump();
                let stmt = self.call_stmt(None, span)?;
                Ok(stmt)
            }
            Tok::Ident(_) => {
                // Decl, assignment, result-call, or bare call: decide by scan.
                if *self.peek_at(1) == Tok::Colon {
                    return self.decl_stmt();
                }
                if self.looks_like_call(0) {
                    return self.call_like(None, span);
                }
                self.assign_stmt()
            }
            _ => Err(self.err("expected a statement")),
        }
    }

    /// From offset `off` (an Ident), does `ident [targs] (` follow?
    fn looks_like_call(&self, off: usize) -> bool {
        let mut i = off + 1;
        if *self.peek_at(i) == Tok::LBracket {
            let mut depth = 0usize;
            loop {
                match self.peek_at(i) {
                    Tok::LBracket => depth += 1,
                    Tok::RBracket => {
                        depth -= 1;
                        if depth == 0 {
                            i += 1;
                            break;
                        }
                    }
                    Tok::Newline | Tok::Eof => return false,
                    _ => {}
                }
                i += 1;
            }
        }
        // A call needs parens here; `int16(x)`-style casts are excluded
        // because a cast result cannot form a statement.
        *self.peek_at(i) == Tok::LParen && !is_type_name(self.ident_at(off))
    }

    fn ident_at(&self, off: usize) -> &str {
        match self.peek_at(off) {
            Tok::Ident(s) => s,
            _ => "",
        }
    }

    fn call_like(&mut self, dst: Option<String>, span: Span) -> Result<Stmt> {
        self.call_stmt(dst, span)
    }

    fn call_stmt(&mut self, dst: Option<String>, span: Span) -> Result<Stmt> {
        let (func, _) = self.expect_ident("function name")?;
        let mut targs = Vec::new();
        if *self.peek() == Tok::LBracket {
            self.bump();
            loop {
                targs.push(self.targ()?);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            self.expect(Tok::RBracket, "`]`")?;
        }
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        while *self.peek() != Tok::RParen {
            args.push(self.expr()?);
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        self.expect(Tok::Newline, "end of line")?;
        Ok(Stmt::Call { dst, func, targs, args, span })
    }

    fn targ(&mut self) -> Result<TArg> {
        if let Tok::Str(s) = self.peek().clone() {
            self.bump();
            return Ok(TArg::Str(s));
        }
        if self.at_ident("fixed") || self.at_ident("ufixed") {
            if let ElemExpr::Fixed { unsigned, width, frac } = self.elem_expr()? {
                return Ok(TArg::Fixed { unsigned, width, frac });
            }
            unreachable!();
        }
        let e = self.expr()?;
        Ok(match e {
            Expr::Var(n, _) => TArg::Name(n),
            other => TArg::Expr(other),
        })
    }

    fn decl_stmt(&mut self) -> Result<Stmt> {
        let span = self.span();
        let (name, _) = self.expect_ident("name")?;
        self.expect(Tok::Colon, "`:`")?;
        let ty = self.type_expr()?;
        let init = if *self.peek() == Tok::Assign {
            self.bump();
            Some(self.expr()?)
        } else {
            None
        };
        self.expect(Tok::Newline, "end of line")?;
        Ok(Stmt::Decl { name, ty, init, span })
    }

    fn assign_stmt(&mut self) -> Result<Stmt> {
        let span = self.span();
        let (name, nspan) = self.expect_ident("name")?;
        let mut indices = Vec::new();
        if *self.peek() == Tok::LBracket {
            self.bump();
            loop {
                indices.push(self.expr()?);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            self.expect(Tok::RBracket, "`]`")?;
        }
        let op = match self.bump() {
            Tok::Assign => AssignOp::Set,
            Tok::PlusAssign => AssignOp::Add,
            Tok::MinusAssign => AssignOp::Sub,
            Tok::StarAssign => AssignOp::Mul,
            other => {
                return Err(Diag::user(
                    &self.file,
                    span,
                    format!("expected assignment operator, found {}", describe(&other)),
                ))
            }
        };
        // `x = g(...)` / `x = g[targs](...)`: a result-binding call.
        if op == AssignOp::Set && indices.is_empty() && matches!(self.peek(), Tok::Ident(_)) && self.looks_like_call(0)
        {
            return self.call_like(Some(name), span);
        }
        let value = self.expr()?;
        self.expect(Tok::Newline, "end of line")?;
        Ok(Stmt::Assign { dst: LValue { name, indices, span: nspan }, op, value, span })
    }

    fn for_stmt(&mut self) -> Result<Stmt> {
        let span = self.span();
        self.bump(); // for
        let mut vars = Vec::new();
        loop {
            let (v, _) = self.expect_ident("loop variable")?;
            vars.push(v);
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        if !self.eat_ident("in") {
            return Err(self.err("expected `in`"));
        }
        if self.eat_ident("range") {
            if vars.len() != 1 {
                return Err(Diag::user(&self.file, span, "`range` takes a single loop variable"));
            }
            self.expect(Tok::LParen, "`(`")?;
            let bound = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            self.expect(Tok::Colon, "`:`")?;
            self.expect(Tok::Newline, "end of line")?;
            let body = self.block()?;
            Ok(Stmt::For { var: vars.pop().unwrap(), bound, body, span })
        } else if self.eat_ident("grid") {
            self.expect(Tok::LParen, "`(`")?;
            let mut bounds = Vec::new();
            let mut band = None;
            loop {
                if self.at_ident("name") && *self.peek_at(1) == Tok::Assign {
                    self.bump();
                    self.bump();
                    match self.bump() {
                        Tok::Str(s) => band = Some(s),
                        _ => return Err(self.err("expected a string band name")),
                    }
                    break;
                }
                bounds.push(self.expr()?);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            self.expect(Tok::RParen, "`)`")?;
            self.expect(Tok::Colon, "`:`")?;
            self.expect(Tok::Newline, "end of line")?;
            if bounds.len() != vars.len() {
                return Err(Diag::user(
                    &self.file,
                    span,
                    format!("grid has {} extents but {} loop variables", bounds.len(), vars.len()),
                ));
            }
            let body = self.block()?;
            Ok(Stmt::Grid { vars, bounds, band, body, span })
        } else {
            Err(self.err("expected `range(...)` or `grid(...)`"))
        }
    }

    // -- expressions --------------------------------------------------------

    fn expr(&mut self) -> Result<Expr> {
        self.additive()
    }

    fn additive(&mut self) -> Result<Expr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            let span = self.span();
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), span };
        }
        Ok(lhs)
    }

    fn multiplicative(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::Percent => BinOp::Rem,
                _ => break,
            };
            let span = self.span();
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), span };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            let span = self.span();
            self.bump();
            let e = self.unary()?;
            return Ok(match e {
                Expr::Int(v, s) => Expr::Int(-v, s),
                other => Expr::Neg { expr: Box::new(other), span },
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v, span))
            }
            Tok::Real(t) => {
                self.bump();
                Ok(Expr::Real(t, span))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                // Cast syntax: a type name applied to a parenthesized expr.
                if (is_type_name(&name) && *self.peek_at(1) == Tok::LParen)
                    || ((name == "fixed" || name == "ufixed") && *self.peek_at(1) == Tok::LParen)
                {
                    let elem = self.elem_expr()?;
                    self.expect(Tok::LParen, "`(`")?;
                    let inner = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Expr::Cast { elem, expr: Box::new(inner), span });
                }
                self.bump();
                if *self.peek() == Tok::LBracket {
                    self.bump();
                    let mut indices = Vec::new();
                    loop {
                        indices.push(self.expr()?);
                        if *self.peek() == Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    self.expect(Tok::RBracket, "`]`")?;
                    Ok(Expr::Index { base: name, indices, span })
                } else {
                    Ok(Expr::Var(name, span))
                }
            }
            other => Err(Diag::user(&self.file, span, format!("expected an expression, found {}", describe(&other)))),
        }
    }
}

/// Is `name` a built-in scalar type name (excluding fixed/ufixed, handled
/// structurally)? Used to keep casts and calls apart.
pub fn is_type_name(name: &str) -> bool {
    if name == "index" {
        return true;
    }
    for prefix in ["int", "uint", "float"] {
        if let Some(rest) = name.strip_prefix(prefix) {
            if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
                return true;
            }
        }
    }
    false
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Real(t) => format!("`{t}`"),
        Tok::Str(s) => format!("\"{s}\""),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::LBracket => "`[`".into(),
        Tok::RBracket => "`]`".into(),
        Tok::Colon => "`:`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Assign => "`=`".into(),
        Tok::PlusAssign => "`+=`".into(),
        Tok::MinusAssign => "`-=`".into(),
        Tok::StarAssign => "`*=`".into(),
        Tok::Arrow => "`->`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Percent => "`%`".into(),
        Tok::Newline => "end of line".into(),
        Tok::Indent => "indent".into(),
        Tok::Dedent => "dedent".into(),
        Tok::Eof => "end of file".into(),
    }
}
