//! Core intermediate representation.
//!
//! A module is a list of functions; a function is parameters, an optional
//! result, locals, and a statement tree of static-extent `for` loops,
//! assignments, and calls. Arrays are passed to callees by reference (a
//! memory name plus an optional index prefix that selects a sub-array).
//! Every loop carries a unique name within its function so schedules can
//! address it, plus optional attributes (band membership, unroll factor,
//! pipeline initiation interval). Declarations carry an element/shape type,
//! a partition layout, and a storage kind (addressable memory or FIFO
//! stream).
//!
//! `render` produces a canonical, byte-stable text form used for debugging
//! and for checking that replaying a schedule reproduces the same program.
//! `verify` checks structural invariants: names resolve, ranks match, calls
//! line up with signatures, and the call graph is acyclic.

use crate::diag::{Diag, Result};
use crate::layout::PartitionType;
use crate::types::{BinKind, ElemType, TensorType};
use crate::value::{render_scalar, Scalar};
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

pub const IR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct IrModule {
    pub funcs: Vec<IrFunc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrFunc {
    pub name: String,
    pub params: Vec<Decl>,
    pub result: Option<Decl>,
    pub locals: Vec<Decl>,
    pub body: Vec<Stmt>,
    pub dataflow: bool,
    /// Template this function was instantiated from, if any. Used to fan
    /// composed customizations out to every instance of a template.
    pub template: Option<String>,
    /// Bands that have been unfolded into per-coordinate clones. Kept so
    /// later rewrites (grid relays) can recover the band structure; not
    /// part of the rendered form.
    pub unfolds: Vec<UnfoldInfo>,
}

/// Record of one unfolded band: its loop structure at the time of the
/// unfold, plus the names of the generated per-coordinate clones in
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldInfo {
    pub band: String,
    pub vars: Vec<String>,
    pub extents: Vec<u64>,
    /// Band body before coordinate substitution.
    pub body: Vec<Stmt>,
    pub clones: Vec<String>,
}

/// Storage backing a declaration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    Memory,
    /// A FIFO (or an array of FIFOs when the declared rank is non-zero).
    Stream { depth: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decl {
    pub name: String,
    pub ty: TensorType,
    pub layout: PartitionType,
    pub storage: Storage,
}

impl Decl {
    pub fn memory(name: impl Into<String>, ty: TensorType) -> Decl {
        let rank = ty.rank();
        Decl {
            name: name.into(),
            ty,
            layout: PartitionType::top(rank),
            storage: Storage::Memory,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    For(Loop),
    Assign(Assign),
    Call(CallStmt),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loop {
    /// Unique within the enclosing function; the handle schedules use.
    pub name: String,
    /// Index variable visible in the body.
    pub var: String,
    pub extent: u64,
    pub body: Vec<Stmt>,
    /// Name of the spatial band this loop belongs to, if any.
    pub band: Option<String>,
    pub unroll: Option<u64>,
    pub pipeline_ii: Option<u64>,
}

impl Loop {
    pub fn new(name: impl Into<String>, var: impl Into<String>, extent: u64) -> Loop {
        Loop {
            name: name.into(),
            var: var.into(),
            extent,
            body: Vec::new(),
            band: None,
            unroll: None,
            pipeline_ii: None,
        }
    }
}

/// Accumulation operator for assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccOp {
    Set,
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assign {
    pub dst: LRef,
    pub op: AccOp,
    pub value: Expr,
}

/// A store destination. Stores convert the value to the destination element
/// type (wrapping integers, flooring fixed-point, rounding floats).
#[derive(Debug, Clone, PartialEq)]
pub enum LRef {
    Mem { mem: String, indices: Vec<Expr> },
    /// `indices` select one stream out of a stream array (empty for rank 0).
    Stream { stream: String, indices: Vec<Expr> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallStmt {
    pub callee: String,
    pub args: Vec<ArgRef>,
    /// Destination memory bound to the callee's result, if the callee
    /// returns one.
    pub dst: Option<String>,
}

/// An argument: a memory or stream passed by reference, optionally sliced
/// by an index prefix over its leading dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgRef {
    pub mem: String,
    pub prefix: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(Scalar, ElemType),
    /// A loop index variable.
    Var(String),
    Load { mem: String, indices: Vec<Expr> },
    /// `indices` select one stream out of a stream array.
    StreamRead { stream: String, indices: Vec<Expr> },
    Binary { op: BinKind, ty: ElemType, lhs: Box<Expr>, rhs: Box<Expr> },
    Cast { ty: ElemType, expr: Box<Expr> },
}

impl Expr {
    pub fn int(v: i64, ty: ElemType) -> Expr {
        Expr::Const(Scalar::Raw(v as i128), ty)
    }

    pub fn index(v: u64) -> Expr {
        Expr::Const(Scalar::Raw(v as i128), ElemType::Index)
    }

    /// The element type this expression evaluates to.
    pub fn ty(&self, func: &IrFunc) -> ElemType {
        match self {
            Expr::Const(_, t) => *t,
            Expr::Var(_) => ElemType::Index,
            Expr::Load { mem, .. } => func
                .decl(mem)
                .map(|d| d.ty.elem)
                .unwrap_or(ElemType::Index),
            Expr::StreamRead { stream, .. } => func
                .decl(stream)
                .map(|d| d.ty.elem)
                .unwrap_or(ElemType::Index),
            Expr::Binary { ty, .. } => *ty,
            Expr::Cast { ty, .. } => *ty,
        }
    }
}

impl IrModule {
    pub fn func(&self, name: &str) -> Option<&IrFunc> {
        self.funcs.iter().find(|f| f.name == name)
    }

    pub fn func_mut(&mut self, name: &str) -> Option<&mut IrFunc> {
        self.funcs.iter_mut().find(|f| f.name == name)
    }

    pub fn expect_func(&self, name: &str) -> Result<&IrFunc> {
        self.func(name)
            .ok_or_else(|| Diag::user_nospan(format!("unknown function `{name}`")))
    }

    /// Canonical text form: deterministic and byte-stable for equal modules.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "miniallo-ir v{IR_VERSION}");
        for f in &self.funcs {
            out.push('\n');
            render_func(&mut out, f);
        }
        out
    }

    pub fn verify(&self) -> Result<()> {
        let mut names = HashSet::new();
        for f in &self.funcs {
            if !names.insert(f.name.clone()) {
                return Err(Diag::user_nospan(format!(
                    "duplicate function definition `{}`",
                    f.name
                )));
            }
        }
        for f in &self.funcs {
            verify_func(self, f)
                .map_err(|d| Diag::user_nospan(format!("in function `{}`: {}", f.name, d.message)))?;
        }
        self.check_acyclic()?;
        Ok(())
    }

    fn check_acyclic(&self) -> Result<()> {
        // Three-color depth-first search over call edges.
        #[derive(Clone, Copy, PartialEq)]
        enum Color {
            White,
            Gray,
            Black,
        }
        let mut color: HashMap<&str, Color> =
            self.funcs.iter().map(|f| (f.name.as_str(), Color::White)).collect();
        fn visit<'a>(
            m: &'a IrModule,
            name: &'a str,
            color: &mut HashMap<&'a str, Color>,
        ) -> Result<()> {
            color.insert(name, Color::Gray);
            let f = m.func(name).unwrap();
            let mut callees = Vec::new();
            f.walk(&mut |s| {
                if let Stmt::Call(c) = s {
                    callees.push(c.callee.clone());
                }
            });
            for callee in callees {
                let callee_ref = match m.funcs.iter().find(|f| f.name == callee) {
                    Some(f) => f.name.as_str(),
                    None => continue, // reported by verify_func
                };
                match color[callee_ref] {
                    Color::Gray => {
                        return Err(Diag::user_nospan(format!(
                            "call cycle through `{callee_ref}`"
                        )))
                    }
                    Color::White => visit(m, callee_ref, color)?,
                    Color::Black => {}
                }
            }
            color.insert(name, Color::Black);
            Ok(())
        }
        let all: Vec<&str> = self.funcs.iter().map(|f| f.name.as_str()).collect();
        for name in all {
            if color[name] == Color::White {
                visit(self, name, &mut color)?;
            }
        }
        Ok(())
    }
}

impl IrFunc {
    pub fn new(name: impl Into<String>) -> IrFunc {
        IrFunc {
            name: name.into(),
            params: Vec::new(),
            result: None,
            locals: Vec::new(),
            body: Vec::new(),
            dataflow: false,
            template: None,
            unfolds: Vec::new(),
        }
    }

    /// Look up a declaration (parameter, local, or result) by name.
    pub fn decl(&self, name: &str) -> Option<&Decl> {
        self.params
            .iter()
            .chain(self.locals.iter())
            .chain(self.result.iter())
            .find(|d| d.name == name)
    }

    pub fn decl_mut(&mut self, name: &str) -> Option<&mut Decl> {
        self.params
            .iter_mut()
            .chain(self.locals.iter_mut())
            .chain(self.result.iter_mut())
            .find(|d| d.name == name)
    }

    /// All declarations in a stable order: params, locals, result.
    pub fn decls(&self) -> impl Iterator<Item = &Decl> {
        self.params
            .iter()
            .chain(self.locals.iter())
            .chain(self.result.iter())
    }

    /// Visit every statement in the body, pre-order.
    pub fn walk(&self, f: &mut impl FnMut(&Stmt)) {
        fn go(stmts: &[Stmt], f: &mut impl FnMut(&Stmt)) {
            for s in stmts {
                f(s);
                if let Stmt::For(l) = s {
                    go(&l.body, f);
                }
            }
        }
        go(&self.body, f);
    }

    /// Visit every loop in the body, pre-order.
    pub fn walk_loops(&self, f: &mut impl FnMut(&Loop)) {
        self.walk(&mut |s| {
            if let Stmt::For(l) = s {
                f(l);
            }
        });
    }

    /// Find the unique loop with the given name, if present.
    pub fn find_loop(&self, name: &str) -> Option<&Loop> {
        find_loop_ref(&self.body, name)
    }
}

fn find_loop_ref<'a>(stmts: &'a [Stmt], name: &str) -> Option<&'a Loop> {
    for s in stmts {
        if let Stmt::For(l) = s {
            if l.name == name {
                return Some(l);
            }
            if let Some(found) = find_loop_ref(&l.body, name) {
                return Some(found);
            }
        }
    }
    None
}

/// Mutable lookup of a loop by name within a statement list.
pub fn find_loop_mut<'a>(stmts: &'a mut [Stmt], name: &str) -> Option<&'a mut Loop> {
    for s in stmts {
        if let Stmt::For(l) = s {
            if l.name == name {
                return Some(l);
            }
            if let Some(found) = find_loop_mut(&mut l.body, name) {
                return Some(found);
            }
        }
    }
    None
}

// ----------------------------------------------------------------------
// Rendering
// ----------------------------------------------------------------------

fn render_func(out: &mut String, f: &IrFunc) {
    let _ = write!(out, "func {}", f.name);
    if f.dataflow {
        out.push_str(" dataflow");
    }
    out.push_str(":\n");
    for d in &f.params {
        let _ = writeln!(out, "  param {}", render_decl(d));
    }
    if let Some(d) = &f.result {
        let _ = writeln!(out, "  result {}", render_decl(d));
    }
    for d in &f.locals {
        let _ = writeln!(out, "  local {}", render_decl(d));
    }
    out.push_str("  body:\n");
    render_stmts(out, &f.body, 2);
}

fn render_decl(d: &Decl) -> String {
    let mut s = format!("{}: {}", d.name, d.ty);
    if !d.layout.is_top() {
        let _ = write!(s, " layout={}", d.layout);
    }
    if let Storage::Stream { depth } = d.storage {
        let _ = write!(s, " stream(depth={depth})");
    }
    s
}

fn render_stmts(out: &mut String, stmts: &[Stmt], indent: usize) {
    for s in stmts {
        render_stmt(out, s, indent);
    }
}

fn render_stmt(out: &mut String, s: &Stmt, indent: usize) {
    let pad = "  ".repeat(indent);
    match s {
        Stmt::For(l) => {
            let _ = write!(out, "{pad}for {} in {} name=\"{}\"", l.var, l.extent, l.name);
            if let Some(b) = &l.band {
                let _ = write!(out, " band=\"{b}\"");
            }
            if let Some(u) = l.unroll {
                let _ = write!(out, " unroll={u}");
            }
            if let Some(ii) = l.pipeline_ii {
                let _ = write!(out, " pipeline={ii}");
            }
            out.push_str(":\n");
            render_stmts(out, &l.body, indent + 1);
        }
        Stmt::Assign(a) => {
            let op = match a.op {
                AccOp::Set => "=",
                AccOp::Add => "+=",
                AccOp::Sub => "-=",
                AccOp::Mul => "*=",
            };
            match &a.dst {
                LRef::Mem { mem, indices } => {
                    let _ = writeln!(
                        out,
                        "{pad}{}{} {op} {}",
                        mem,
                        render_indices(indices),
                        render_expr(&a.value, 0)
                    );
                }
                LRef::Stream { stream, indices } => {
                    let _ = writeln!(
                        out,
                        "{pad}{}{}.write({})",
                        stream,
                        render_indices(indices),
                        render_expr(&a.value, 0)
                    );
                }
            }
        }
        Stmt::Call(c) => {
            let args: Vec<String> = c
                .args
                .iter()
                .map(|a| format!("{}{}", a.mem, render_indices(&a.prefix)))
                .collect();
            match &c.dst {
                Some(dst) => {
                    let _ = writeln!(out, "{pad}{dst} = call {}({})", c.callee, args.join(", "));
                }
                None => {
                    let _ = writeln!(out, "{pad}call {}({})", c.callee, args.join(", "));
                }
            }
        }
    }
}

fn render_indices(indices: &[Expr]) -> String {
    if indices.is_empty() {
        return String::new();
    }
    let parts: Vec<String> = indices.iter().map(|e| render_expr(e, 0)).collect();
    format!("[{}]", parts.join(", "))
}

fn bin_str(op: BinKind) -> &'static str {
    match op {
        BinKind::Add => "+",
        BinKind::Sub => "-",
        BinKind::Mul => "*",
        BinKind::Div => "/",
        BinKind::Rem => "%",
    }
}

fn bin_prec(op: BinKind) -> u8 {
    match op {
        BinKind::Add | BinKind::Sub => 1,
        BinKind::Mul | BinKind::Div | BinKind::Rem => 2,
    }
}

/// Render with minimal parentheses; `min_prec` is the binding strength of
/// the context.
pub fn render_expr(e: &Expr, min_prec: u8) -> String {
    match e {
        Expr::Const(v, ty) => render_scalar(ty, *v),
        Expr::Var(v) => v.clone(),
        Expr::Load { mem, indices } => format!("{}{}", mem, render_indices(indices)),
        Expr::StreamRead { stream, indices } => {
            format!("{}{}.read()", stream, render_indices(indices))
        }
        Expr::Cast { ty, expr } => format!("{ty}({})", render_expr(expr, 0)),
        Expr::Binary { op, lhs, rhs, .. } => {
            let p = bin_prec(*op);
            let s = format!(
                "{} {} {}",
                render_expr(lhs, p),
                bin_str(*op),
                render_expr(rhs, p + 1)
            );
            if p < min_prec {
                format!("({s})")
            } else {
                s
            }
        }
    }
}

// ----------------------------------------------------------------------
// Verification
// ----------------------------------------------------------------------

fn verify_func(m: &IrModule, f: &IrFunc) -> Result<()> {
    // Unique declaration names.
    let mut seen = HashSet::new();
    for d in f.decls() {
        if !seen.insert(d.name.as_str()) {
            return Err(Diag::user_nospan(format!(
                "duplicate declaration `{}`",
                d.name
            )));
        }
        d.ty.validate(crate::diag::Span::none(), "<ir>")?;
        d.layout.validate(&d.ty.shape)?;
    }
    // Unique loop names.
    let mut loop_names = HashSet::new();
    let mut dup = None;
    f.walk_loops(&mut |l| {
        if !loop_names.insert(l.name.clone()) && dup.is_none() {
            dup = Some(l.name.clone());
        }
    });
    if let Some(n) = dup {
        return Err(Diag::user_nospan(format!("duplicate loop name `{n}`")));
    }
    verify_stmts(m, f, &f.body, &mut Vec::new())
}

fn verify_stmts(
    m: &IrModule,
    f: &IrFunc,
    stmts: &[Stmt],
    vars: &mut Vec<String>,
) -> Result<()> {
    for s in stmts {
        match s {
            Stmt::For(l) => {
                if l.extent == 0 {
                    return Err(Diag::user_nospan(format!(
                        "loop `{}` has zero extent",
                        l.name
                    )));
                }
                vars.push(l.var.clone());
                verify_stmts(m, f, &l.body, vars)?;
                vars.pop();
            }
            Stmt::Assign(a) => {
                match &a.dst {
                    LRef::Mem { mem, indices } => {
                        let d = decl_of(f, mem, Storage::Memory)?;
                        check_rank(mem, indices.len(), d.ty.rank())?;
                        for ix in indices {
                            verify_expr(f, ix, vars)?;
                        }
                    }
                    LRef::Stream { stream, indices } => {
                        let d = f.decl(stream).ok_or_else(|| {
                            Diag::user_nospan(format!("unknown stream `{stream}`"))
                        })?;
                        if !matches!(d.storage, Storage::Stream { .. }) {
                            return Err(Diag::user_nospan(format!(
                                "`{stream}` is not a stream"
                            )));
                        }
                        check_rank(stream, indices.len(), d.ty.rank())?;
                        for ix in indices {
                            verify_expr(f, ix, vars)?;
                        }
                    }
                }
                verify_expr(f, &a.value, vars)?;
            }
            Stmt::Call(c) => {
                for a in &c.args {
                    for ix in &a.prefix {
                        verify_expr(f, ix, vars)?;
                    }
                }
                verify_call(m, f, c)?;
            }
        }
    }
    Ok(())
}

fn decl_of<'a>(f: &'a IrFunc, name: &str, want: Storage) -> Result<&'a Decl> {
    let d = f
        .decl(name)
        .ok_or_else(|| Diag::user_nospan(format!("unknown memory `{name}`")))?;
    match (want, d.storage) {
        (Storage::Memory, Storage::Memory) => Ok(d),
        (Storage::Memory, Storage::Stream { .. }) => Err(Diag::user_nospan(format!(
            "`{name}` is a stream and cannot be addressed as a memory"
        ))),
        _ => Ok(d),
    }
}

fn check_rank(name: &str, have: usize, want: usize) -> Result<()> {
    if have != want {
        return Err(Diag::user_nospan(format!(
            "`{name}` has rank {want} but is indexed with {have} subscripts"
        )));
    }
    Ok(())
}

fn verify_expr(f: &IrFunc, e: &Expr, vars: &[String]) -> Result<()> {
    match e {
        Expr::Const(..) => Ok(()),
        Expr::Var(v) => {
            if vars.iter().any(|x| x == v) {
                Ok(())
            } else {
                Err(Diag::user_nospan(format!("unknown index variable `{v}`")))
            }
        }
        Expr::Load { mem, indices } => {
            let d = decl_of(f, mem, Storage::Memory)?;
            check_rank(mem, indices.len(), d.ty.rank())?;
            for ix in indices {
                verify_expr(f, ix, vars)?;
            }
            Ok(())
        }
        Expr::StreamRead { stream, indices } => {
            let d = f
                .decl(stream)
                .ok_or_else(|| Diag::user_nospan(format!("unknown stream `{stream}`")))?;
            if !matches!(d.storage, Storage::Stream { .. }) {
                return Err(Diag::user_nospan(format!("`{stream}` is not a stream")));
            }
            check_rank(stream, indices.len(), d.ty.rank())?;
            for ix in indices {
                verify_expr(f, ix, vars)?;
            }
            Ok(())
        }
        Expr::Binary { lhs, rhs, .. } => {
            verify_expr(f, lhs, vars)?;
            verify_expr(f, rhs, vars)
        }
        Expr::Cast { expr, .. } => verify_expr(f, expr, vars),
    }
}

fn verify_call(m: &IrModule, f: &IrFunc, c: &CallStmt) -> Result<()> {
    let callee = m.func(&c.callee).ok_or_else(|| {
        Diag::user_nospan(format!("call to undefined function `{}`", c.callee))
    })?;
    if c.args.len() != callee.params.len() {
        return Err(Diag::user_nospan(format!(
            "`{}` takes {} arguments but {} were supplied",
            c.callee,
            callee.params.len(),
            c.args.len()
        )));
    }
    for (a, p) in c.args.iter().zip(&callee.params) {
        let d = f
            .decl(&a.mem)
            .ok_or_else(|| Diag::user_nospan(format!("unknown memory `{}`", a.mem)))?;
        if a.prefix.len() > d.ty.rank() {
            return Err(Diag::user_nospan(format!(
                "slice of `{}` uses {} subscripts but the array has rank {}",
                a.mem,
                a.prefix.len(),
                d.ty.rank()
            )));
        }
        let sliced: Vec<u64> = d.ty.shape[a.prefix.len()..].to_vec();
        if d.ty.elem != p.ty.elem || sliced != p.ty.shape {
            return Err(Diag::user_nospan(format!(
                "argument `{}` has type {}[{}] but parameter `{}` of `{}` expects {}",
                a.mem,
                d.ty.elem,
                sliced
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
                p.name,
                c.callee,
                p.ty
            )));
        }
        let arg_is_stream = matches!(d.storage, Storage::Stream { .. });
        let param_is_stream = matches!(p.storage, Storage::Stream { .. });
        if arg_is_stream != param_is_stream {
            return Err(Diag::user_nospan(format!(
                "argument `{}` and parameter `{}` of `{}` disagree on stream vs. memory storage",
                a.mem, p.name, c.callee
            )));
        }
    }
    match (&c.dst, &callee.result) {
        (Some(dst), Some(res)) => {
            let d = f
                .decl(dst)
                .ok_or_else(|| Diag::user_nospan(format!("unknown memory `{dst}`")))?;
            if d.ty != res.ty {
                return Err(Diag::user_nospan(format!(
                    "result of `{}` has type {} but destination `{dst}` has type {}",
                    c.callee, res.ty, d.ty
                )));
            }
            Ok(())
        }
        (Some(_), None) => Err(Diag::user_nospan(format!(
            "`{}` does not return a value",
            c.callee
        ))),
        (None, _) => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ElemType as ET;

    fn small_gemm() -> IrModule {
        let int32 = ET::Int(32);
        let mat = TensorType::new(int32, vec![4, 4]);
        let mut f = IrFunc::new("gemm");
        f.params.push(Decl::memory("A", mat.clone()));
        f.params.push(Decl::memory("B", mat.clone()));
        f.params.push(Decl::memory("C", mat.clone()));
        let mut li = Loop::new("i", "i", 4);
        let mut lj = Loop::new("j", "j", 4);
        lj.body.push(Stmt::Assign(Assign {
            dst: LRef::Mem {
                mem: "C".into(),
                indices: vec![Expr::Var("i".into()), Expr::Var("j".into())],
            },
            op: AccOp::Set,
            value: Expr::int(0, int32),
        }));
        let mut lk = Loop::new("k", "k", 4);
        lk.body.push(Stmt::Assign(Assign {
            dst: LRef::Mem {
                mem: "C".into(),
                indices: vec![Expr::Var("i".into()), Expr::Var("j".into())],
            },
            op: AccOp::Add,
            value: Expr::Binary {
                op: BinKind::Mul,
                ty: ET::Int(64),
                lhs: Box::new(Expr::Load {
                    mem: "A".into(),
                    indices: vec![Expr::Var("i".into()), Expr::Var("k".into())],
                }),
                rhs: Box::new(Expr::Load {
                    mem: "B".into(),
                    indices: vec![Expr::Var("k".into()), Expr::Var("j".into())],
                }),
            },
        }));
        lj.body.push(Stmt::For(lk));
        li.body.push(Stmt::For(lj));
        f.body.push(Stmt::For(li));
        IrModule { funcs: vec![f] }
    }

    #[test]
    fn render_is_stable() {
        let m = small_gemm();
        let text = m.render();
        assert!(text.starts_with("miniallo-ir v1\n"));
        assert!(text.contains("for k in 4 name=\"k\":"));
        assert!(text.contains("C[i, j] += A[i, k] * B[k, j]"));
        assert_eq!(text, m.clone().render());
    }

    #[test]
    fn verify_accepts_wellformed() {
        small_gemm().verify().unwrap();
    }

    #[test]
    fn verify_rejects_unknown_memory() {
        let mut m = small_gemm();
        // Rename a parameter so the body refers to a missing memory.
        m.funcs[0].params[0].name = "X".into();
        let err = m.verify().unwrap_err();
        assert!(err.message.contains("unknown memory `A`"), "{}", err.message);
    }

    #[test]
    fn verify_rejects_rank_mismatch() {
        let mut m = small_gemm();
        m.funcs[0].params[2].ty = TensorType::new(ET::Int(32), vec![4]);
        let err = m.verify().unwrap_err();
        assert!(err.message.contains("rank 1"), "{}", err.message);
    }

    #[test]
    fn verify_rejects_call_cycle() {
        let mut a = IrFunc::new("a");
        a.body.push(Stmt::Call(CallStmt {
            callee: "b".into(),
            args: vec![],
            dst: None,
        }));
        let mut b = IrFunc::new("b");
        b.body.push(Stmt::Call(CallStmt {
            callee: "a".into(),
            args: vec![],
            dst: None,
        }));
        let m = IrModule { funcs: vec![a, b] };
        let err = m.verify().unwrap_err();
        assert!(err.message.contains("call cycle"), "{}", err.message);
    }

    #[test]
    fn verify_checks_call_signature() {
        let mat = TensorType::new(ET::Int(8), vec![4]);
        let mut callee = IrFunc::new("f");
        callee.params.push(Decl::memory("X", mat.clone()));
        let mut caller = IrFunc::new("g");
        caller
            .locals
            .push(Decl::memory("Y", TensorType::new(ET::Int(16), vec![4])));
        caller.body.push(Stmt::Call(CallStmt {
            callee: "f".into(),
            args: vec![ArgRef { mem: "Y".into(), prefix: vec![] }],
            dst: None,
        }));
        let m = IrModule { funcs: vec![callee, caller] };
        let err = m.verify().unwrap_err();
        assert!(err.message.contains("parameter `X`"), "{}", err.message);
    }

    #[test]
    fn slice_prefix_matches_suffix_shape() {
        let mut callee = IrFunc::new("row");
        callee
            .params
            .push(Decl::memory("r", TensorType::new(ET::Int(32), vec![8])));
        let mut caller = IrFunc::new("g");
        caller
            .locals
            .push(Decl::memory("M", TensorType::new(ET::Int(32), vec![4, 8])));
        let mut l = Loop::new("i", "i", 4);
        l.body.push(Stmt::Call(CallStmt {
            callee: "row".into(),
            args: vec![ArgRef { mem: "M".into(), prefix: vec![Expr::Var("i".into())] }],
            dst: None,
        }));
        caller.body.push(Stmt::For(l));
        let m = IrModule { funcs: vec![callee, caller] };
        m.verify().unwrap();
    }
}
