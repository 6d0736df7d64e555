//! Surface AST for `.adl` kernel files, plus the canonical renderer.
//!
//! The AST mirrors the source shape: module-level constants and function
//! definitions (possibly templated), indentation-structured statement bodies.
//! `render` regenerates canonical source text; `parse(render(parse(x)))` is a
//! fixed point, which the round-trip property test pins down.

use crate::diag::Span;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Module {
    pub file: String,
    pub consts: Vec<ConstDef>,
    pub funcs: Vec<FuncDef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstDef {
    pub name: String,
    pub value: i128,
    pub span: Span,
}

/// A template parameter: either a type variable (with an optional allowed
/// set, e.g. `Ty: (int32, float32)`) or an index constant (`M: index`).
#[derive(Debug, Clone, PartialEq)]
pub enum TParam {
    Type { name: String, allowed: Vec<ElemExpr>, span: Span },
    Index { name: String, span: Span },
}

impl TParam {
    pub fn name(&self) -> &str {
        match self {
            TParam::Type { name, .. } | TParam::Index { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuncDef {
    pub name: String,
    pub tparams: Vec<TParam>,
    pub params: Vec<Param>,
    pub ret: Option<TypeExpr>,
    pub body: Vec<Stmt>,
    pub span: Span,
}

impl FuncDef {
    pub fn is_template(&self) -> bool {
        !self.tparams.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: TypeExpr,
    pub span: Span,
}

/// An element-type expression: a named type (`int8`, `float32`, `index`, or a
/// template type variable) or a fixed-point constructor.
#[derive(Debug, Clone, PartialEq)]
pub enum ElemExpr {
    Named(String),
    Fixed { unsigned: bool, width: Box<Expr>, frac: Box<Expr> },
}

/// A tensor type expression: element type plus shape extents (const exprs).
#[derive(Debug, Clone, PartialEq)]
pub struct TypeExpr {
    pub elem: ElemExpr,
    pub shape: Vec<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LValue {
    pub name: String,
    pub indices: Vec<Expr>,
    pub span: Span,
}

/// A template argument at a call site; bare names are resolved during
/// checking (they may be type names, type variables, or index constants).
#[derive(Debug, Clone, PartialEq)]
pub enum TArg {
    Name(String),
    Expr(Expr),
    Str(String),
    Fixed { unsigned: bool, width: Box<Expr>, frac: Box<Expr> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    /// `name: T[shape]` or `name: T[shape] = expr`
    Decl { name: String, ty: TypeExpr, init: Option<Expr>, span: Span },
    Assign { dst: LValue, op: AssignOp, value: Expr, span: Span },
    /// `for v in range(E):`
    For { var: String, bound: Expr, body: Vec<Stmt>, span: Span },
    /// `for v1, v2 in grid(E1, E2, name="X"):`
    Grid { vars: Vec<String>, bounds: Vec<Expr>, band: Option<String>, body: Vec<Stmt>, span: Span },
    /// `call g(args)` or `dst = g[targs](args)`
    Call {
        dst: Option<String>,
        func: String,
        targs: Vec<TArg>,
        args: Vec<Expr>,
        span: Span,
    },
    Return { value: String, span: Span },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

impl BinOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "//",
            BinOp::Rem => "%",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i128, Span),
    Real(String, Span),
    Var(String, Span),
    /// `A[e1, e2]`: a load, or a partial-dimension slice in argument position.
    Index { base: String, indices: Vec<Expr>, span: Span },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr>, span: Span },
    Neg { expr: Box<Expr>, span: Span },
    /// Explicit cast: `int16(e)`, `fixed(8, 4)(e)`.
    Cast { elem: ElemExpr, expr: Box<Expr>, span: Span },
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Int(_, s) | Expr::Real(_, s) | Expr::Var(_, s) => *s,
            Expr::Index { span, .. }
            | Expr::Binary { span, .. }
            | Expr::Neg { span, .. }
            | Expr::Cast { span, .. } => *span,
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical rendering.
// ---------------------------------------------------------------------------

pub fn render(m: &Module) -> String {
    let mut out = String::new();
    for c in &m.consts {
        let _ = writeln!(out, "const {} = {}", c.name, c.value);
    }
    if !m.consts.is_empty() && !m.funcs.is_empty() {
        out.push('\n');
    }
    for (i, f) in m.funcs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        render_func(&mut out, f);
    }
    out
}

fn render_func(out: &mut String, f: &FuncDef) {
    let _ = write!(out, "def {}", f.name);
    if !f.tparams.is_empty() {
        out.push('[');
        for (i, tp) in f.tparams.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            match tp {
                TParam::Type { name, allowed, .. } => {
                    out.push_str(name);
                    if !allowed.is_empty() {
                        out.push_str(": (");
                        for (j, a) in allowed.iter().enumerate() {
                            if j > 0 {
                                out.push_str(", ");
                            }
                            render_elem(out, a);
                        }
                        out.push(')');
                    }
                }
                TParam::Index { name, .. } => {
                    let _ = write!(out, "{name}: index");
                }
            }
        }
        out.push(']');
    }
    out.push('(');
    for (i, p) in f.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{}: ", p.name);
        render_type(out, &p.ty);
    }
    out.push(')');
    if let Some(ret) = &f.ret {
        out.push_str(" -> ");
        render_type(out, ret);
    }
    out.push_str(":\n");
    render_body(out, &f.body, 1);
}

fn render_body(out: &mut String, body: &[Stmt], depth: usize) {
    let pad = "    ".repeat(depth);
    for stmt in body {
        match stmt {
            Stmt::Decl { name, ty, init, .. } => {
                let _ = write!(out, "{pad}{name}: ");
                render_type(out, ty);
                if let Some(e) = init {
                    out.push_str(" = ");
                    render_expr(out, e, 0);
                }
                out.push('\n');
            }
            Stmt::Assign { dst, op, value, .. } => {
                let _ = write!(out, "{pad}");
                render_lvalue(out, dst);
                out.push_str(match op {
                    AssignOp::Set => " = ",
                    AssignOp::Add => " += ",
                    AssignOp::Sub => " -= ",
                    AssignOp::Mul => " *= ",
                });
                render_expr(out, value, 0);
                out.push('\n');
            }
            Stmt::For { var, bound, body, .. } => {
                let _ = write!(out, "{pad}for {var} in range(");
                render_expr(out, bound, 0);
                out.push_str("):\n");
                render_body(out, body, depth + 1);
            }
            Stmt::Grid { vars, bounds, band, body, .. } => {
                let _ = write!(out, "{pad}for {} in grid(", vars.join(", "));
                for (i, b) in bounds.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    render_expr(out, b, 0);
                }
                if let Some(n) = band {
                    let _ = write!(out, ", name=\"{n}\"");
                }
                out.push_str("):\n");
                render_body(out, body, depth + 1);
            }
            Stmt::Call { dst, func, targs, args, .. } => {
                let _ = write!(out, "{pad}");
                match dst {
                    Some(d) => {
                        let _ = write!(out, "{d} = {func}");
                    }
                    None => {
                        let _ = write!(out, "call {func}");
                    }
                }
                if !targs.is_empty() {
                    out.push('[');
                    for (i, t) in targs.iter().enumerate() {
                        if i > 0 {
                            out.push_str(", ");
                        }
                        match t {
                            TArg::Name(n) => out.push_str(n),
                            TArg::Expr(e) => render_expr(out, e, 0),
                            TArg::Str(s) => {
                                let _ = write!(out, "\"{s}\"");
                            }
                            TArg::Fixed { unsigned, width, frac } => {
                                render_elem(
                                    out,
                                    &ElemExpr::Fixed {
                                        unsigned: *unsigned,
                                        width: width.clone(),
                                        frac: frac.clone(),
                                    },
                                );
                            }
                        }
                    }
                    out.push(']');
                }
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    render_expr(out, a, 0);
                }
                out.push_str(")\n");
            }
            Stmt::Return { value, .. } => {
                let _ = writeln!(out, "{pad}return {value}");
            }
        }
    }
}

fn render_lvalue(out: &mut String, lv: &LValue) {
    out.push_str(&lv.name);
    if !lv.indices.is_empty() {
        out.push('[');
        for (i, e) in lv.indices.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            render_expr(out, e, 0);
        }
        out.push(']');
    }
}

fn render_elem(out: &mut String, e: &ElemExpr) {
    match e {
        ElemExpr::Named(n) => out.push_str(n),
        ElemExpr::Fixed { unsigned, width, frac } => {
            out.push_str(if *unsigned { "ufixed(" } else { "fixed(" });
            render_expr(out, width, 0);
            out.push_str(", ");
            render_expr(out, frac, 0);
            out.push(')');
        }
    }
}

fn render_type(out: &mut String, t: &TypeExpr) {
    render_elem(out, &t.elem);
    if !t.shape.is_empty() {
        out.push('[');
        for (i, e) in t.shape.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            render_expr(out, e, 0);
        }
        out.push(']');
    }
}

fn prec(op: BinOp) -> u8 {
    match op {
        BinOp::Add | BinOp::Sub => 1,
        BinOp::Mul | BinOp::Div | BinOp::Rem => 2,
    }
}

/// Render with minimal parentheses; `min_prec` is the binding strength of the
/// surrounding context.
fn render_expr(out: &mut String, e: &Expr, min_prec: u8) {
    match e {
        Expr::Int(v, _) => {
            let _ = write!(out, "{v}");
        }
        Expr::Real(t, _) => out.push_str(t),
        Expr::Var(n, _) => out.push_str(n),
        Expr::Index { base, indices, .. } => {
            out.push_str(base);
            out.push('[');
            for (i, idx) in indices.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render_expr(out, idx, 0);
            }
            out.push(']');
        }
        Expr::Binary { op, lhs, rhs, .. } => {
            let p = prec(*op);
            let need = p < min_prec;
            if need {
                out.push('(');
            }
            render_expr(out, lhs, p);
            let _ = write!(out, " {} ", op.symbol());
            // Right operand binds one tighter so `a - (b - c)` keeps parens.
            render_expr(out, rhs, p + 1);
            if need {
                out.push(')');
            }
        }
        Expr::Neg { expr, .. } => {
            out.push('-');
            render_expr(out, expr, 3);
        }
        Expr::Cast { elem, expr, .. } => {
            render_elem(out, elem);
            out.push('(');
            render_expr(out, expr, 0);
            out.push(')');
        }
    }
}
