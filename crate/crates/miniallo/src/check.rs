//! Semantic checking and elaboration: surface AST to core IR.
//!
//! This pass resolves constants and shape expressions, instantiates
//! templates, infers and checks element types (inserting nothing implicit
//! beyond the store conversion every assignment performs), assigns loop
//! names, and produces a verified [`IrModule`].
//!
//! Widths follow the usual hardware rules: integer addition grows by one
//! bit, multiplication sums widths, fixed-point tracks integer and
//! fractional contributions separately. Floats and integer-family values
//! never mix implicitly; an explicit cast is required in both directions.
//! Integer literals are polymorphic: they adopt the type of the other
//! operand (or of the store destination) when it fits.
//!
//! Template instantiation is driven from call sites. An explicit trailing
//! string argument names the instance (`f[int32, 16, "X"]` becomes `f_X`);
//! otherwise instances are numbered in first-use order and deduplicated by
//! their template-argument bindings.

use crate::ast::{self, ElemExpr, TArg, TypeExpr};
use crate::diag::{Diag, Result, Span};
use crate::ir::{self, AccOp, ArgRef, CallStmt, Decl, IrFunc, IrModule, LRef, Loop};
use crate::types::{BinKind, ElemType, TensorType};
use crate::value::{self, Scalar};
use std::collections::{HashMap, HashSet};

/// Lex, parse, and check a source file in one step.
pub fn compile_source(file: &str, src: &str) -> Result<IrModule> {
    let module = crate::parser::parse(file, src)?;
    check(&module)
}

/// Elaborate a parsed module into core IR.
pub fn check(m: &ast::Module) -> Result<IrModule> {
    let mut consts = HashMap::new();
    for c in &m.consts {
        if c.value < 0 || c.value > u64::MAX as i128 {
            return Err(Diag::user(
                &m.file,
                c.span,
                format!("constant `{}` must be a non-negative integer", c.name),
            ));
        }
        if consts.insert(c.name.clone(), c.value as u64).is_some() {
            return Err(Diag::user(
                &m.file,
                c.span,
                format!("duplicate constant `{}`", c.name),
            ));
        }
    }
    let mut src_funcs = HashMap::new();
    for f in &m.funcs {
        if src_funcs.insert(f.name.clone(), f).is_some() {
            return Err(Diag::user(
                &m.file,
                f.span,
                format!("duplicate function `{}`", f.name),
            ));
        }
    }
    let mut ck = Checker {
        file: m.file.clone(),
        src: src_funcs,
        consts,
        out: Vec::new(),
        done: HashSet::new(),
        auto_keys: HashMap::new(),
        explicit_keys: HashMap::new(),
        counters: HashMap::new(),
        in_progress: Vec::new(),
    };
    for f in &m.funcs {
        if !f.is_template() {
            ck.instantiate(&f.name, &[], &HashMap::new(), &ck.consts.clone(), f.span)?;
        }
    }
    let module = IrModule { funcs: ck.out };
    module.verify()?;
    Ok(module)
}

/// One bound template argument; the dedup key for auto-named instances.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Bind {
    Ty(ElemType),
    Ix(u64),
}

struct Checker<'a> {
    file: String,
    src: HashMap<String, &'a ast::FuncDef>,
    consts: HashMap<String, u64>,
    out: Vec<IrFunc>,
    done: HashSet<String>,
    auto_keys: HashMap<(String, Vec<Bind>), String>,
    explicit_keys: HashMap<String, (String, Vec<Bind>)>,
    counters: HashMap<String, u32>,
    in_progress: Vec<String>,
}

/// Per-function elaboration context.
struct FnCx {
    ir: IrFunc,
    tenv: HashMap<String, ElemType>,
    ienv: HashMap<String, u64>,
    /// Loop variables currently in scope, innermost last.
    loop_stack: Vec<String>,
    loop_names: HashSet<String>,
}

/// How a literal arrived, so it can adopt a context type exactly.
enum Lit {
    No,
    Int(i128),
    Real(String),
}

impl<'a> Checker<'a> {
    fn err(&self, span: Span, msg: impl Into<String>) -> Diag {
        Diag::user(&self.file, span, msg)
    }

    /// Resolve a call target, instantiating templates on demand; returns the
    /// emitted instance name.
    fn instantiate(
        &mut self,
        func: &str,
        targs: &[TArg],
        tenv: &HashMap<String, ElemType>,
        ienv: &HashMap<String, u64>,
        span: Span,
    ) -> Result<String> {
        let def = *self
            .src
            .get(func)
            .ok_or_else(|| self.err(span, format!("unknown function `{func}`")))?;

        // A trailing string argument names the instance.
        let (targs, inst_id) = match targs.split_last() {
            Some((TArg::Str(id), rest)) => (rest, Some(id.clone())),
            _ => (targs, None),
        };
        if targs.iter().any(|t| matches!(t, TArg::Str(_))) {
            return Err(self.err(span, "instance name must be the last template argument"));
        }

        if !def.is_template() {
            if !targs.is_empty() || inst_id.is_some() {
                return Err(self.err(span, format!("`{func}` is not a template")));
            }
            if !self.done.contains(func) {
                self.elaborate(def, func.to_string(), HashMap::new(), self.consts.clone(), span)?;
            }
            return Ok(func.to_string());
        }

        if targs.len() != def.tparams.len() {
            return Err(self.err(
                span,
                format!(
                    "`{func}` expects {} template arguments but {} were supplied",
                    def.tparams.len(),
                    targs.len()
                ),
            ));
        }

        // Bind template parameters.
        let mut bind_tenv = HashMap::new();
        let mut bind_ienv = self.consts.clone();
        let mut key = Vec::new();
        for (tp, ta) in def.tparams.iter().zip(targs) {
            match tp {
                ast::TParam::Type { name, allowed, .. } => {
                    let ty = self.targ_type(ta, tenv, ienv, span)?;
                    if !allowed.is_empty() {
                        let allow: Vec<ElemType> = allowed
                            .iter()
                            .map(|a| self.resolve_elem(a, &HashMap::new(), &self.consts.clone(), span))
                            .collect::<Result<_>>()?;
                        if !allow.contains(&ty) {
                            return Err(self.err(
                                span,
                                format!(
                                    "type argument {ty} for `{name}` of `{func}` is not in \
                                     the allowed set ({})",
                                    allow
                                        .iter()
                                        .map(|t| t.to_string())
                                        .collect::<Vec<_>>()
                                        .join(", ")
                                ),
                            ));
                        }
                    }
                    bind_tenv.insert(name.clone(), ty);
                    key.push(Bind::Ty(ty));
                }
                ast::TParam::Index { name, .. } => {
                    let v = self.targ_index(ta, ienv, span)?;
                    bind_ienv.insert(name.clone(), v);
                    key.push(Bind::Ix(v));
                }
            }
        }

        let inst_name = match inst_id {
            Some(id) => {
                let name = format!("{func}_{id}");
                if let Some(prev) = self.explicit_keys.get(&name) {
                    if *prev != (func.to_string(), key.clone()) {
                        return Err(self.err(
                            span,
                            format!(
                                "instance `{name}` was already created with different \
                                 template arguments"
                            ),
                        ));
                    }
                } else {
                    self.explicit_keys
                        .insert(name.clone(), (func.to_string(), key.clone()));
                }
                name
            }
            None => {
                let auto_key = (func.to_string(), key.clone());
                match self.auto_keys.get(&auto_key) {
                    Some(name) => name.clone(),
                    None => {
                        let n = self.counters.entry(func.to_string()).or_insert(0);
                        *n += 1;
                        let name = format!("{func}_{n}");
                        self.auto_keys.insert(auto_key, name.clone());
                        name
                    }
                }
            }
        };
        if self.src.contains_key(&inst_name) {
            return Err(self.err(
                span,
                format!("instance name `{inst_name}` collides with a function definition"),
            ));
        }
        if !self.done.contains(&inst_name) {
            self.elaborate(def, inst_name.clone(), bind_tenv, bind_ienv, span)?;
        }
        Ok(inst_name)
    }

    fn elaborate(
        &mut self,
        def: &'a ast::FuncDef,
        inst_name: String,
        tenv: HashMap<String, ElemType>,
        ienv: HashMap<String, u64>,
        span: Span,
    ) -> Result<()> {
        if self.in_progress.contains(&inst_name) {
            return Err(self.err(
                span,
                format!("recursive call cycle through `{}`", def.name),
            ));
        }
        self.in_progress.push(inst_name.clone());

        let mut cx = FnCx {
            ir: IrFunc::new(inst_name.clone()),
            tenv,
            ienv,
            loop_stack: Vec::new(),
            loop_names: HashSet::new(),
        };
        if def.is_template() {
            cx.ir.template = Some(def.name.clone());
        }
        for p in &def.params {
            if cx.ir.decl(&p.name).is_some() {
                return Err(self.err(p.span, format!("duplicate parameter `{}`", p.name)));
            }
            let ty = self.resolve_type(&p.ty, &cx.tenv, &cx.ienv)?;
            cx.ir.params.push(Decl::memory(p.name.clone(), ty));
        }
        let ret_ty = def
            .ret
            .as_ref()
            .map(|t| self.resolve_type(t, &cx.tenv, &cx.ienv))
            .transpose()?;

        let mut body = Vec::new();
        let n = def.body.len();
        for (i, s) in def.body.iter().enumerate() {
            if let ast::Stmt::Return { value, span } = s {
                if i + 1 != n {
                    return Err(self.err(*span, "`return` must be the last statement"));
                }
                let ret_ty = ret_ty.clone().ok_or_else(|| {
                    self.err(*span, format!("`{}` does not declare a result type", def.name))
                })?;
                let pos = cx
                    .ir
                    .locals
                    .iter()
                    .position(|d| d.name == *value)
                    .ok_or_else(|| {
                        self.err(*span, format!("return value `{value}` is not a local array"))
                    })?;
                let d = cx.ir.locals.remove(pos);
                if d.ty != ret_ty {
                    return Err(self.err(
                        *span,
                        format!(
                            "return value `{value}` has type {} but `{}` declares {}",
                            d.ty, def.name, ret_ty
                        ),
                    ));
                }
                cx.ir.result = Some(d);
                continue;
            }
            self.stmt(&mut cx, s, 0, &mut body)?;
        }
        if ret_ty.is_some() && cx.ir.result.is_none() {
            return Err(self.err(
                def.span,
                format!("`{}` declares a result type but never returns", def.name),
            ));
        }
        cx.ir.body = body;

        self.in_progress.pop();
        self.done.insert(inst_name);
        self.out.push(cx.ir);
        Ok(())
    }

    fn stmt(
        &mut self,
        cx: &mut FnCx,
        s: &ast::Stmt,
        depth: usize,
        out: &mut Vec<ir::Stmt>,
    ) -> Result<()> {
        match s {
            ast::Stmt::Decl { name, ty, init, span } => {
                if cx.ir.decl(name).is_some() || cx.loop_stack.iter().any(|v| v == name) {
                    return Err(self.err(*span, format!("`{name}` is already declared")));
                }
                let ty = self.resolve_type(ty, &cx.tenv, &cx.ienv)?;
                cx.ir.locals.push(Decl::memory(name.clone(), ty.clone()));
                if let Some(e) = init {
                    if ty.rank() != 0 {
                        return Err(self.err(
                            *span,
                            "array declarations cannot carry an initializer",
                        ));
                    }
                    let value = self.store_value(cx, e, &ty.elem, AccOp::Set)?;
                    out.push(ir::Stmt::Assign(ir::Assign {
                        dst: LRef::Mem { mem: name.clone(), indices: vec![] },
                        op: AccOp::Set,
                        value,
                    }));
                }
                Ok(())
            }
            ast::Stmt::Assign { dst, op, value, span } => {
                let d = cx
                    .ir
                    .decl(&dst.name)
                    .ok_or_else(|| {
                        self.err(*span, format!("assignment to undeclared name `{}`", dst.name))
                    })?
                    .clone();
                if dst.indices.len() != d.ty.rank() {
                    return Err(self.err(
                        *span,
                        format!(
                            "`{}` has rank {} but is indexed with {} subscripts",
                            dst.name,
                            d.ty.rank(),
                            dst.indices.len()
                        ),
                    ));
                }
                let mut indices = Vec::new();
                for ix in &dst.indices {
                    indices.push(self.index_expr(cx, ix)?);
                }
                let op = match op {
                    ast::AssignOp::Set => AccOp::Set,
                    ast::AssignOp::Add => AccOp::Add,
                    ast::AssignOp::Sub => AccOp::Sub,
                    ast::AssignOp::Mul => AccOp::Mul,
                };
                let value = self.store_value(cx, value, &d.ty.elem, op)?;
                out.push(ir::Stmt::Assign(ir::Assign {
                    dst: LRef::Mem { mem: dst.name.clone(), indices },
                    op,
                    value,
                }));
                Ok(())
            }
            ast::Stmt::For { var, bound, body, span } => {
                let extent = self.const_eval(bound, &cx.ienv)?;
                self.open_loop(cx, var, extent, None, depth, *span, body, out)
            }
            ast::Stmt::Grid { vars, bounds, band, body, span } => {
                if vars.len() != bounds.len() {
                    return Err(self.err(
                        *span,
                        "grid variable and extent counts do not match",
                    ));
                }
                self.open_grid(cx, vars, bounds, band.clone(), depth, *span, body, out)
            }
            ast::Stmt::Call { dst, func, targs, args, span } => {
                // Argument references are resolved in the caller first.
                let mut refs = Vec::new();
                for a in args {
                    refs.push(self.arg_ref(cx, a)?);
                }
                let callee_name =
                    self.instantiate(func, targs, &cx.tenv.clone(), &cx.ienv.clone(), *span)?;
                let callee = self
                    .out
                    .iter()
                    .find(|f| f.name == callee_name)
                    .expect("instantiated callee present");
                let callee_params: Vec<Decl> = callee.params.clone();
                let callee_result = callee.result.clone();
                if refs.len() != callee_params.len() {
                    return Err(self.err(
                        *span,
                        format!(
                            "`{func}` takes {} arguments but {} were supplied",
                            callee_params.len(),
                            refs.len()
                        ),
                    ));
                }
                for (r, p) in refs.iter().zip(&callee_params) {
                    let d = cx.ir.decl(&r.mem).unwrap().clone();
                    if r.prefix.len() > d.ty.rank() {
                        return Err(self.err(
                            *span,
                            format!("slice of `{}` has too many subscripts", r.mem),
                        ));
                    }
                    let suffix = &d.ty.shape[r.prefix.len()..];
                    if d.ty.elem != p.ty.elem || suffix != p.ty.shape.as_slice() {
                        return Err(self.err(
                            *span,
                            format!(
                                "argument `{}` does not match parameter `{}` of `{func}` \
                                 (expected {}, found {}[{}])",
                                r.mem,
                                p.name,
                                p.ty,
                                d.ty.elem,
                                suffix
                                    .iter()
                                    .map(|s| s.to_string())
                                    .collect::<Vec<_>>()
                                    .join(", ")
                            ),
                        ));
                    }
                }
                let dst = match dst {
                    Some(name) => {
                        let res = callee_result.as_ref().ok_or_else(|| {
                            self.err(*span, format!("`{func}` does not return a value"))
                        })?;
                        match cx.ir.decl(name) {
                            Some(d) => {
                                if d.ty != res.ty {
                                    return Err(self.err(
                                        *span,
                                        format!(
                                            "`{name}` has type {} but `{func}` returns {}",
                                            d.ty, res.ty
                                        ),
                                    ));
                                }
                            }
                            None => {
                                // Result calls implicitly declare their
                                // destination.
                                cx.ir
                                    .locals
                                    .push(Decl::memory(name.clone(), res.ty.clone()));
                            }
                        }
                        Some(name.clone())
                    }
                    None => None,
                };
                out.push(ir::Stmt::Call(CallStmt { callee: callee_name, args: refs, dst }));
                Ok(())
            }
            ast::Stmt::Return { span, .. } => {
                Err(self.err(*span, "`return` must be the last statement"))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn open_loop(
        &mut self,
        cx: &mut FnCx,
        var: &str,
        extent: u64,
        band: Option<String>,
        depth: usize,
        span: Span,
        body: &[ast::Stmt],
        out: &mut Vec<ir::Stmt>,
    ) -> Result<()> {
        if extent == 0 {
            return Err(self.err(span, format!("loop over `{var}` has zero extent")));
        }
        if cx.loop_stack.iter().any(|v| v == var) {
            return Err(self.err(
                span,
                format!("loop variable `{var}` reuses an enclosing loop's variable"),
            ));
        }
        if cx.ir.decl(var).is_some() {
            return Err(self.err(span, format!("loop variable `{var}` shadows a declaration")));
        }
        let name = self.pick_loop_name(cx, var, depth);
        let mut l = Loop::new(name, var, extent);
        l.band = band;
        cx.loop_stack.push(var.to_string());
        let mut inner = Vec::new();
        for s in body {
            self.stmt(cx, s, depth + 1, &mut inner)?;
        }
        cx.loop_stack.pop();
        l.body = inner;
        out.push(ir::Stmt::For(l));
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn open_grid(
        &mut self,
        cx: &mut FnCx,
        vars: &[String],
        bounds: &[ast::Expr],
        band: Option<String>,
        depth: usize,
        span: Span,
        body: &[ast::Stmt],
        out: &mut Vec<ir::Stmt>,
    ) -> Result<()> {
        let (var, rest_vars) = vars.split_first().expect("non-empty grid");
        let (bound, rest_bounds) = bounds.split_first().unwrap();
        let extent = self.const_eval(bound, &cx.ienv)?;
        if extent == 0 {
            return Err(self.err(span, format!("loop over `{var}` has zero extent")));
        }
        if cx.loop_stack.iter().any(|v| v == var) {
            return Err(self.err(
                span,
                format!("loop variable `{var}` reuses an enclosing loop's variable"),
            ));
        }
        if cx.ir.decl(var).is_some() {
            return Err(self.err(span, format!("loop variable `{var}` shadows a declaration")));
        }
        let name = self.pick_loop_name(cx, var, depth);
        let mut l = Loop::new(name, var.clone(), extent);
        l.band = band.clone();
        cx.loop_stack.push(var.to_string());
        let mut inner = Vec::new();
        if rest_vars.is_empty() {
            for s in body {
                self.stmt(cx, s, depth + 1, &mut inner)?;
            }
        } else {
            self.open_grid(cx, rest_vars, rest_bounds, band, depth + 1, span, body, &mut inner)?;
        }
        cx.loop_stack.pop();
        l.body = inner;
        out.push(ir::Stmt::For(l));
        Ok(())
    }

    /// Loops are named after their index variable; when that name is taken,
    /// fall back to `L<depth>_<var>` (and a numeric suffix if even that
    /// collides).
    fn pick_loop_name(&self, cx: &mut FnCx, var: &str, depth: usize) -> String {
        let mut name = var.to_string();
        if cx.loop_names.contains(&name) {
            name = format!("L{depth}_{var}");
            let mut k = 2;
            while cx.loop_names.contains(&name) {
                name = format!("L{depth}_{var}_{k}");
                k += 1;
            }
        }
        cx.loop_names.insert(name.clone());
        name
    }

    /// Check a value expression stored into `dst` (optionally combined with
    /// the loaded destination for `+=`-style operators).
    fn store_value(
        &mut self,
        cx: &mut FnCx,
        e: &ast::Expr,
        dst: &ElemType,
        op: AccOp,
    ) -> Result<ir::Expr> {
        let (expr, ty, lit) = self.infer(cx, e)?;
        let (expr, ty) = match lit {
            Lit::No => (expr, ty),
            lit => {
                let c = self.coerce_literal(&lit, dst, e.span())?;
                (c, *dst)
            }
        };
        if op == AccOp::Set {
            if ty.is_float() != dst.is_float() {
                return Err(self.err(
                    e.span(),
                    format!("explicit cast required to store {ty} into {dst}"),
                ));
            }
        } else {
            let kind = match op {
                AccOp::Add => BinKind::Add,
                AccOp::Sub => BinKind::Sub,
                AccOp::Mul => BinKind::Mul,
                AccOp::Set => unreachable!(),
            };
            crate::types::promote(kind, dst, &ty).map_err(|m| self.err(e.span(), m))?;
        }
        Ok(expr)
    }

    /// Infer an expression; returns the IR form, its type, and literal-ness.
    fn infer(&mut self, cx: &mut FnCx, e: &ast::Expr) -> Result<(ir::Expr, ElemType, Lit)> {
        match e {
            ast::Expr::Int(v, span) => {
                if *v < i64::MIN as i128 || *v > i64::MAX as i128 {
                    return Err(self.err(*span, format!("integer literal {v} is out of range")));
                }
                Ok((
                    ir::Expr::Const(Scalar::Raw(*v), ElemType::Index),
                    ElemType::Index,
                    Lit::Int(*v),
                ))
            }
            ast::Expr::Real(t, span) => {
                let v: f64 = t
                    .parse()
                    .map_err(|_| self.err(*span, format!("malformed real literal `{t}`")))?;
                Ok((
                    ir::Expr::Const(Scalar::Float(v), ElemType::Float(64)),
                    ElemType::Float(64),
                    Lit::Real(t.clone()),
                ))
            }
            ast::Expr::Var(n, span) => {
                if cx.loop_stack.iter().any(|v| v == n) {
                    return Ok((ir::Expr::Var(n.clone()), ElemType::Index, Lit::No));
                }
                if let Some(d) = cx.ir.decl(n) {
                    if d.ty.rank() != 0 {
                        return Err(self.err(
                            *span,
                            format!("array `{n}` used where a scalar is expected"),
                        ));
                    }
                    let ty = d.ty.elem;
                    return Ok((
                        ir::Expr::Load { mem: n.clone(), indices: vec![] },
                        ty,
                        Lit::No,
                    ));
                }
                if let Some(&c) = cx.ienv.get(n) {
                    return Ok((
                        ir::Expr::Const(Scalar::Raw(c as i128), ElemType::Index),
                        ElemType::Index,
                        Lit::Int(c as i128),
                    ));
                }
                Err(self.err(*span, format!("unknown name `{n}`")))
            }
            ast::Expr::Index { base, indices, span } => {
                let d = cx
                    .ir
                    .decl(base)
                    .ok_or_else(|| self.err(*span, format!("unknown array `{base}`")))?
                    .clone();
                if indices.len() != d.ty.rank() {
                    return Err(self.err(
                        *span,
                        format!(
                            "`{base}` has rank {} but is indexed with {} subscripts",
                            d.ty.rank(),
                            indices.len()
                        ),
                    ));
                }
                let mut ix = Vec::new();
                for i in indices {
                    ix.push(self.index_expr(cx, i)?);
                }
                Ok((
                    ir::Expr::Load { mem: base.clone(), indices: ix },
                    d.ty.elem,
                    Lit::No,
                ))
            }
            ast::Expr::Binary { op, lhs, rhs, span } => {
                let (le, lt, ll) = self.infer(cx, lhs)?;
                let (re, rt, rl) = self.infer(cx, rhs)?;
                let (le, lt, re, rt) = match (&ll, &rl) {
                    (Lit::No, Lit::No) | (Lit::Int(_), Lit::Int(_)) => (le, lt, re, rt),
                    (Lit::Real(_), Lit::Real(_)) => (le, lt, re, rt),
                    // An integer literal meeting a real one becomes a float.
                    (Lit::Int(v), Lit::Real(_)) => {
                        let c = ir::Expr::Const(Scalar::Float(*v as f64), ElemType::Float(64));
                        (c, ElemType::Float(64), re, rt)
                    }
                    (Lit::Real(_), Lit::Int(v)) => {
                        let c = ir::Expr::Const(Scalar::Float(*v as f64), ElemType::Float(64));
                        (le, lt, c, ElemType::Float(64))
                    }
                    // A literal adopts the other operand's type.
                    (lit, Lit::No) => {
                        let c = self.coerce_literal(lit, &rt, lhs.span())?;
                        (c, rt, re, rt)
                    }
                    (Lit::No, lit) => {
                        let c = self.coerce_literal(lit, &lt, rhs.span())?;
                        (le, lt, c, lt)
                    }
                };
                let kind = match op {
                    ast::BinOp::Add => BinKind::Add,
                    ast::BinOp::Sub => BinKind::Sub,
                    ast::BinOp::Mul => BinKind::Mul,
                    ast::BinOp::Div => BinKind::Div,
                    ast::BinOp::Rem => BinKind::Rem,
                };
                let ty = crate::types::promote(kind, &lt, &rt)
                    .map_err(|m| self.err(*span, m))?;
                Ok((
                    ir::Expr::Binary { op: kind, ty, lhs: Box::new(le), rhs: Box::new(re) },
                    ty,
                    Lit::No,
                ))
            }
            ast::Expr::Neg { expr, span } => {
                let (ie, it, il) = self.infer(cx, expr)?;
                match il {
                    Lit::Int(v) => Ok((
                        ir::Expr::Const(Scalar::Raw(-v), ElemType::Index),
                        ElemType::Index,
                        Lit::Int(-v),
                    )),
                    Lit::Real(t) => {
                        let nt = match t.strip_prefix('-') {
                            Some(rest) => rest.to_string(),
                            None => format!("-{t}"),
                        };
                        let v: f64 = nt
                            .parse()
                            .map_err(|_| self.err(*span, "malformed real literal"))?;
                        Ok((
                            ir::Expr::Const(Scalar::Float(v), ElemType::Float(64)),
                            ElemType::Float(64),
                            Lit::Real(nt),
                        ))
                    }
                    Lit::No => {
                        let zero = self.coerce_literal(&Lit::Int(0), &it, *span)?;
                        let ty = crate::types::promote(BinKind::Sub, &it, &it)
                            .map_err(|m| self.err(*span, m))?;
                        Ok((
                            ir::Expr::Binary {
                                op: BinKind::Sub,
                                ty,
                                lhs: Box::new(zero),
                                rhs: Box::new(ie),
                            },
                            ty,
                            Lit::No,
                        ))
                    }
                }
            }
            ast::Expr::Cast { elem, expr, span } => {
                let ty = self.resolve_elem(elem, &cx.tenv.clone(), &cx.ienv.clone(), *span)?;
                let (ie, _it, il) = self.infer(cx, expr)?;
                match il {
                    // Literal casts fold at compile time with store
                    // semantics (wrapping / flooring).
                    Lit::Int(v) => {
                        let s = value::store_cast(&ty, Scalar::Raw(v), 0);
                        Ok((ir::Expr::Const(s, ty), ty, Lit::No))
                    }
                    Lit::Real(t) => {
                        let v: f64 = t
                            .parse()
                            .map_err(|_| self.err(*span, "malformed real literal"))?;
                        let s = value::store_cast(&ty, Scalar::Float(v), 0);
                        Ok((ir::Expr::Const(s, ty), ty, Lit::No))
                    }
                    Lit::No => Ok((
                        ir::Expr::Cast { ty, expr: Box::new(ie) },
                        ty,
                        Lit::No,
                    )),
                }
            }
        }
    }

    /// Check a subscript expression: must be of `index` type.
    fn index_expr(&mut self, cx: &mut FnCx, e: &ast::Expr) -> Result<ir::Expr> {
        let (ie, ty, _) = self.infer(cx, e)?;
        if ty != ElemType::Index {
            return Err(self.err(
                e.span(),
                format!("array subscripts must be index expressions, found {ty}"),
            ));
        }
        Ok(ie)
    }

    /// A call argument: a whole array or an index-prefixed slice.
    fn arg_ref(&mut self, cx: &mut FnCx, e: &ast::Expr) -> Result<ArgRef> {
        match e {
            ast::Expr::Var(n, span) => {
                let d = cx
                    .ir
                    .decl(n)
                    .ok_or_else(|| self.err(*span, format!("unknown array `{n}`")))?;
                let _ = d;
                Ok(ArgRef { mem: n.clone(), prefix: vec![] })
            }
            ast::Expr::Index { base, indices, span } => {
                let d = cx
                    .ir
                    .decl(base)
                    .ok_or_else(|| self.err(*span, format!("unknown array `{base}`")))?
                    .clone();
                if indices.len() > d.ty.rank() {
                    return Err(self.err(
                        *span,
                        format!("slice of `{base}` has too many subscripts"),
                    ));
                }
                let mut prefix = Vec::new();
                for i in indices {
                    prefix.push(self.index_expr(cx, i)?);
                }
                Ok(ArgRef { mem: base.clone(), prefix })
            }
            other => Err(self.err(
                other.span(),
                "call arguments must be arrays or array slices",
            )),
        }
    }

    fn coerce_literal(&self, lit: &Lit, target: &ElemType, span: Span) -> Result<ir::Expr> {
        let fail = |detail: String| self.err(span, detail);
        match lit {
            Lit::No => Err(fail("internal: non-literal coercion".into())),
            Lit::Int(v) => match target {
                ElemType::Index => Ok(ir::Expr::Const(Scalar::Raw(*v), *target)),
                ElemType::Int(w) => {
                    let lo = -(1i128 << (w - 1));
                    let hi = (1i128 << (w - 1)) - 1;
                    if *v < lo || *v > hi {
                        return Err(fail(format!("literal {v} does not fit {target}")));
                    }
                    Ok(ir::Expr::Const(Scalar::Raw(*v), *target))
                }
                ElemType::UInt(w) => {
                    if *v < 0 || (*w < 128 && *v >= 1i128 << w) {
                        return Err(fail(format!("literal {v} does not fit {target}")));
                    }
                    Ok(ir::Expr::Const(Scalar::Raw(*v), *target))
                }
                ElemType::Fixed(w, f) => {
                    let raw = v.checked_shl(*f).ok_or_else(|| {
                        fail(format!("literal {v} does not fit {target}"))
                    })?;
                    let lo = -(1i128 << (w - 1));
                    let hi = (1i128 << (w - 1)) - 1;
                    if raw < lo || raw > hi {
                        return Err(fail(format!("literal {v} does not fit {target}")));
                    }
                    Ok(ir::Expr::Const(Scalar::Raw(raw), *target))
                }
                ElemType::UFixed(w, f) => {
                    let raw = v.checked_shl(*f).ok_or_else(|| {
                        fail(format!("literal {v} does not fit {target}"))
                    })?;
                    if raw < 0 || (*w < 128 && raw >= 1i128 << w) {
                        return Err(fail(format!("literal {v} does not fit {target}")));
                    }
                    Ok(ir::Expr::Const(Scalar::Raw(raw), *target))
                }
                ElemType::Float(_) => Ok(ir::Expr::Const(
                    value::store_cast(target, Scalar::Float(*v as f64), 0),
                    *target,
                )),
            },
            Lit::Real(t) => match target {
                ElemType::Float(_) => {
                    let v: f64 = t
                        .parse()
                        .map_err(|_| fail(format!("malformed real literal `{t}`")))?;
                    Ok(ir::Expr::Const(
                        value::store_cast(target, Scalar::Float(v), 0),
                        *target,
                    ))
                }
                ElemType::Fixed(..) | ElemType::UFixed(..) => {
                    let s = value::parse_scalar(target, t).map_err(|m| fail(m))?;
                    Ok(ir::Expr::Const(s, *target))
                }
                _ => Err(fail(format!(
                    "real literal `{t}` cannot be stored in {target} without a cast"
                ))),
            },
        }
    }

    // ------------------------------------------------------------------
    // Constant and type resolution.
    // ------------------------------------------------------------------

    fn const_eval(&self, e: &ast::Expr, ienv: &HashMap<String, u64>) -> Result<u64> {
        match e {
            ast::Expr::Int(v, span) => {
                if *v < 0 || *v > u64::MAX as i128 {
                    return Err(self.err(*span, format!("constant {v} is out of range")));
                }
                Ok(*v as u64)
            }
            ast::Expr::Var(n, span) => ienv.get(n).copied().ok_or_else(|| {
                self.err(*span, format!("`{n}` is not a constant index expression"))
            }),
            ast::Expr::Binary { op, lhs, rhs, span } => {
                let a = self.const_eval(lhs, ienv)?;
                let b = self.const_eval(rhs, ienv)?;
                match op {
                    ast::BinOp::Add => Ok(a + b),
                    ast::BinOp::Sub => a.checked_sub(b).ok_or_else(|| {
                        self.err(*span, "constant expression is negative")
                    }),
                    ast::BinOp::Mul => Ok(a * b),
                    ast::BinOp::Div => {
                        if b == 0 {
                            return Err(self.err(*span, "division by zero in constant"));
                        }
                        if a % b != 0 {
                            return Err(self.err(
                                *span,
                                format!("{a} / {b} does not divide evenly"),
                            ));
                        }
                        Ok(a / b)
                    }
                    ast::BinOp::Rem => {
                        if b == 0 {
                            return Err(self.err(*span, "division by zero in constant"));
                        }
                        Ok(a % b)
                    }
                }
            }
            other => Err(self.err(
                other.span(),
                "expected a constant index expression",
            )),
        }
    }

    fn resolve_elem(
        &self,
        e: &ElemExpr,
        tenv: &HashMap<String, ElemType>,
        ienv: &HashMap<String, u64>,
        span: Span,
    ) -> Result<ElemType> {
        let ty = match e {
            ElemExpr::Named(n) => {
                if let Some(t) = tenv.get(n) {
                    *t
                } else {
                    builtin_elem(n)
                        .ok_or_else(|| self.err(span, format!("unknown type `{n}`")))?
                }
            }
            ElemExpr::Fixed { unsigned, width, frac } => {
                let w = self.const_eval(width, ienv)? as u32;
                let f = self.const_eval(frac, ienv)? as u32;
                if *unsigned {
                    ElemType::UFixed(w, f)
                } else {
                    ElemType::Fixed(w, f)
                }
            }
        };
        ty.validate(span, &self.file)?;
        Ok(ty)
    }

    fn resolve_type(
        &self,
        t: &TypeExpr,
        tenv: &HashMap<String, ElemType>,
        ienv: &HashMap<String, u64>,
    ) -> Result<TensorType> {
        let elem = self.resolve_elem(&t.elem, tenv, ienv, t.span)?;
        let mut shape = Vec::new();
        for e in &t.shape {
            let v = self.const_eval(e, ienv)?;
            if v == 0 {
                return Err(self.err(e.span(), "array dimensions must be positive"));
            }
            shape.push(v);
        }
        let ty = TensorType { elem, shape };
        ty.validate(t.span, &self.file)?;
        Ok(ty)
    }

    fn targ_type(
        &self,
        ta: &TArg,
        tenv: &HashMap<String, ElemType>,
        ienv: &HashMap<String, u64>,
        span: Span,
    ) -> Result<ElemType> {
        match ta {
            TArg::Name(n) => self.resolve_elem(&ElemExpr::Named(n.clone()), tenv, ienv, span),
            TArg::Fixed { unsigned, width, frac } => self.resolve_elem(
                &ElemExpr::Fixed {
                    unsigned: *unsigned,
                    width: width.clone(),
                    frac: frac.clone(),
                },
                tenv,
                ienv,
                span,
            ),
            TArg::Expr(e) => Err(self.err(
                e.span(),
                "expected a type argument, found an index expression",
            )),
            TArg::Str(_) => unreachable!("instance ids are stripped before binding"),
        }
    }

    fn targ_index(&self, ta: &TArg, ienv: &HashMap<String, u64>, span: Span) -> Result<u64> {
        match ta {
            TArg::Expr(e) => self.const_eval(e, ienv),
            TArg::Name(n) => ienv.get(n).copied().ok_or_else(|| {
                self.err(span, format!("`{n}` is not a constant index expression"))
            }),
            _ => Err(self.err(span, "expected an index template argument")),
        }
    }
}

/// Built-in element type names.
pub fn builtin_elem(name: &str) -> Option<ElemType> {
    if name == "index" {
        return Some(ElemType::Index);
    }
    if let Some(w) = name.strip_prefix("uint") {
        return w.parse().ok().map(ElemType::UInt);
    }
    if let Some(w) = name.strip_prefix("int") {
        return w.parse().ok().map(ElemType::Int);
    }
    if let Some(w) = name.strip_prefix("float") {
        return match w {
            "16" | "32" | "64" => w.parse().ok().map(ElemType::Float),
            _ => None,
        };
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ck(src: &str) -> Result<IrModule> {
        compile_source("test.adl", src)
    }

    const GEMM: &str = "\
const N = 4

def gemm(A: int32[N, N], B: int32[N, N], C: int32[N, N]):
    for i in range(N):
        for j in range(N):
            C[i, j] = 0
            for k in range(N):
                C[i, j] += A[i, k] * B[k, j]
";

    #[test]
    fn gemm_elaborates_with_var_loop_names() {
        let m = ck(GEMM).unwrap();
        let f = m.func("gemm").unwrap();
        let names: Vec<String> = {
            let mut v = Vec::new();
            f.walk_loops(&mut |l| v.push(l.name.clone()));
            v
        };
        assert_eq!(names, ["i", "j", "k"]);
        let text = m.render();
        assert!(text.contains("C[i, j] += A[i, k] * B[k, j]"), "{text}");
    }

    #[test]
    fn sibling_loops_with_same_var_get_fallback_names() {
        let src = "\
def f(A: int32[4]):
    for i in range(4):
        for j in range(4):
            A[i] += j
        for j in range(4):
            A[i] += j
";
        let m = ck(src).unwrap();
        let f = m.func("f").unwrap();
        let mut names = Vec::new();
        f.walk_loops(&mut |l| names.push(l.name.clone()));
        assert_eq!(names, ["i", "j", "L1_j"]);
    }

    #[test]
    fn product_width_follows_promotion() {
        let src = "\
def f(A: int8[4], B: int8[4], C: int16[4]):
    for i in range(4):
        C[i] = A[i] * B[i]
";
        let m = ck(src).unwrap();
        let f = m.func("f").unwrap();
        let mut found = None;
        f.walk(&mut |s| {
            if let ir::Stmt::Assign(a) = s {
                if let ir::Expr::Binary { ty, .. } = &a.value {
                    found = Some(*ty);
                }
            }
        });
        assert_eq!(found, Some(ElemType::Int(16)));
    }

    #[test]
    fn literal_adopts_operand_type() {
        let src = "\
def f(A: int8[4], C: int16[4]):
    for i in range(4):
        C[i] = A[i] * 2
";
        let m = ck(src).unwrap();
        let f = m.func("f").unwrap();
        let mut found = None;
        f.walk(&mut |s| {
            if let ir::Stmt::Assign(a) = s {
                if let ir::Expr::Binary { ty, rhs, .. } = &a.value {
                    found = Some((*ty, (**rhs).clone()));
                }
            }
        });
        let (ty, rhs) = found.unwrap();
        assert_eq!(ty, ElemType::Int(16));
        assert_eq!(rhs, ir::Expr::Const(Scalar::Raw(2), ElemType::Int(8)));
    }

    #[test]
    fn cross_family_store_requires_cast() {
        let src = "\
def f(A: float32[4], C: int32[4]):
    for i in range(4):
        C[i] = A[i]
";
        let err = ck(src).unwrap_err();
        assert!(err.message.contains("explicit cast"), "{}", err.message);
        let ok = "\
def f(A: float32[4], C: int32[4]):
    for i in range(4):
        C[i] = int32(A[i])
";
        ck(ok).unwrap();
    }

    #[test]
    fn float_int_arithmetic_rejected() {
        let src = "\
def f(A: float32[4], B: int32[4], C: float32[4]):
    for i in range(4):
        C[i] = A[i] * B[i]
";
        let err = ck(src).unwrap_err();
        assert!(
            err.message.contains("no implicit conversion"),
            "unexpected: {}",
            err.message
        );
    }

    #[test]
    fn templates_dedup_by_bindings() {
        let src = "\
def scale[Ty: (int32, float32), M: index](A: Ty[M]):
    for i in range(M):
        A[i] *= 2

def top(X: int32[8], Y: int32[8], Z: int32[16]):
    call scale[int32, 8](X)
    call scale[int32, 8](Y)
    call scale[int32, 16](Z)
";
        let m = ck(src).unwrap();
        let names: Vec<&str> = m.funcs.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["scale_1", "scale_2", "top"]);
        assert_eq!(m.func("scale_1").unwrap().params[0].ty.shape, vec![8]);
        assert_eq!(m.func("scale_2").unwrap().params[0].ty.shape, vec![16]);
    }

    #[test]
    fn explicit_instance_ids() {
        let src = "\
def scale[M: index](A: int32[M]):
    for i in range(M):
        A[i] *= 2

def top(X: int32[8], Y: int32[8]):
    call scale[8, \"FFN1\"](X)
    call scale[8, \"FFN2\"](Y)
";
        let m = ck(src).unwrap();
        let names: Vec<&str> = m.funcs.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["scale_FFN1", "scale_FFN2", "top"]);
    }

    #[test]
    fn allowed_set_is_enforced() {
        let src = "\
def scale[Ty: (int32, float32)](A: Ty[4]):
    for i in range(4):
        A[i] *= 2

def top(X: int8[4]):
    call scale[int8](X)
";
        let err = ck(src).unwrap_err();
        assert!(err.message.contains("allowed set"), "{}", err.message);
    }

    #[test]
    fn result_call_declares_destination() {
        let src = "\
def mul(A: int32[4]) -> int32[4]:
    B: int32[4]
    for i in range(4):
        B[i] = A[i] * A[i]
    return B

def top(X: int32[4], Y: int32[4]):
    C = mul(X)
    for i in range(4):
        Y[i] = C[i]
";
        let m = ck(src).unwrap();
        let f = m.func("mul").unwrap();
        assert_eq!(f.result.as_ref().unwrap().name, "B");
        assert!(f.locals.is_empty());
        let top = m.func("top").unwrap();
        assert_eq!(top.locals[0].name, "C");
    }

    #[test]
    fn missing_return_is_an_error() {
        let src = "\
def mul(A: int32[4]) -> int32[4]:
    B: int32[4]
    for i in range(4):
        B[i] = A[i]
";
        let err = ck(src).unwrap_err();
        assert!(err.message.contains("never returns"), "{}", err.message);
    }

    #[test]
    fn shape_division_must_be_exact() {
        let src = "\
const N = 16

def f(A: int32[N / 3]):
    for i in range(N / 3):
        A[i] = 0
";
        let err = ck(src).unwrap_err();
        assert!(err.message.contains("does not divide evenly"), "{}", err.message);
    }

    #[test]
    fn sliced_arguments_check_suffix_shape() {
        let src = "\
def row(r: int32[8]):
    for i in range(8):
        r[i] = 0

def top(M: int32[4, 8]):
    for i in range(4):
        call row(M[i])
";
        ck(src).unwrap();
        let bad = "\
def row(r: int32[6]):
    for i in range(6):
        r[i] = 0

def top(M: int32[4, 8]):
    for i in range(4):
        call row(M[i])
";
        let err = ck(bad).unwrap_err();
        assert!(err.message.contains("does not match parameter"), "{}", err.message);
    }

    #[test]
    fn fixed_literal_folds_exactly() {
        let src = "\
def f(A: fixed(8, 4)[4]):
    for i in range(4):
        A[i] = A[i] * 1.5
";
        let m = ck(src).unwrap();
        let f = m.func("f").unwrap();
        let mut found = None;
        f.walk(&mut |s| {
            if let ir::Stmt::Assign(a) = s {
                if let ir::Expr::Binary { rhs, .. } = &a.value {
                    found = Some((**rhs).clone());
                }
            }
        });
        // 1.5 in fixed(8, 4) is raw 24.
        assert_eq!(
            found.unwrap(),
            ir::Expr::Const(Scalar::Raw(24), ElemType::Fixed(8, 4))
        );
    }

    #[test]
    fn recursion_is_rejected() {
        let src = "\
def f(A: int32[4]):
    call f(A)
";
        let err = ck(src).unwrap_err();
        assert!(err.message.contains("recursive"), "{}", err.message);
    }

    #[test]
    fn grid_expands_to_nested_band_loops() {
        let src = "\
def pe(C: int32[4, 4]):
    for i, j in grid(4, 4, name=\"pe\"):
        C[i, j] = 0
";
        let m = ck(src).unwrap();
        let f = m.func("pe").unwrap();
        let mut seen = Vec::new();
        f.walk_loops(&mut |l| seen.push((l.name.clone(), l.band.clone())));
        assert_eq!(
            seen,
            vec![
                ("i".to_string(), Some("pe".to_string())),
                ("j".to_string(), Some("pe".to_string())),
            ]
        );
    }
}
