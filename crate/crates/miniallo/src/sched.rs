//! Schedules: decoupled hardware customizations as IR rewrites.
//!
//! A [`Schedule`] wraps a compiled program and applies customization
//! primitives to one of its functions. Temporal primitives (`split`,
//! `reorder`, `fuse`, `unroll`, `pipeline`) reshape loops; spatial
//! primitives (`partition`, `buffer_at`, `reuse_at`, `unfold`, `relay`)
//! reshape storage and communication. Every primitive either rewrites
//! the program and is appended to the record log, or fails and leaves
//! the program untouched.
//!
//! Relays are the one deferred family: converting a memory into a
//! stream is only checkable against the final shape of its producer and
//! consumer, so relay records wait in the pending queue until
//! [`Schedule::build`] and are applied after every other pending
//! record. Replaying the applied record log against the pristine
//! program reproduces the built program exactly.

use crate::dfg;
use crate::diag::{Diag, Result};
use crate::ir::{
    find_loop_mut, AccOp, ArgRef, Assign, CallStmt, Decl, Expr, IrFunc, IrModule, LRef, Loop,
    Stmt, Storage, UnfoldInfo,
};
use crate::layout::{legal_factor, meet_base, PartitionBase, PartitionType};
use crate::types::{BinKind, ElemType, TensorType};
use crate::value::Scalar;
use sha2::{Digest, Sha256};
use std::collections::{HashMap, HashSet};

/// One customization primitive, with every choice resolved (generated
/// buffer names included) so that a record log replays deterministically.
#[derive(Debug, Clone, PartialEq)]
pub enum Prim {
    Split { loop_: String, factor: u64 },
    Reorder { loops: Vec<String> },
    Fuse { outer: String, inner: String },
    Unroll { loop_: String, factor: u64 },
    Pipeline { loop_: String, ii: u64 },
    Partition { mem: String, dim: usize, base: PartitionBase },
    BufferAt { mem: String, loop_: String, name: String },
    ReuseAt { mem: String, loop_: String, name: String },
    Unfold { band: String, axes: Vec<usize> },
    Relay { mem: String, depth: u64 },
    RelayGrid { mem: String, band: String, axis: usize, depth: u64 },
}

impl Prim {
    /// Loop-shaping primitives conflict when two composed schedules touch
    /// the same loop of the same instance.
    pub fn is_compute(&self) -> bool {
        !matches!(self, Prim::Partition { .. } | Prim::Relay { .. } | Prim::RelayGrid { .. })
    }

    pub fn is_relay(&self) -> bool {
        matches!(self, Prim::Relay { .. } | Prim::RelayGrid { .. })
    }

    pub fn relayed_mem(&self) -> Option<&str> {
        match self {
            Prim::Relay { mem, .. } | Prim::RelayGrid { mem, .. } => Some(mem),
            _ => None,
        }
    }

    /// Loops (or bands) named by a loop-shaping primitive.
    pub fn touched_loops(&self) -> Vec<&str> {
        match self {
            Prim::Split { loop_, .. }
            | Prim::Unroll { loop_, .. }
            | Prim::Pipeline { loop_, .. }
            | Prim::BufferAt { loop_, .. }
            | Prim::ReuseAt { loop_, .. } => vec![loop_],
            Prim::Reorder { loops } => loops.iter().map(|s| s.as_str()).collect(),
            Prim::Fuse { outer, inner } => vec![outer, inner],
            Prim::Unfold { band, .. } => vec![band],
            Prim::Partition { .. } | Prim::Relay { .. } | Prim::RelayGrid { .. } => vec![],
        }
    }
}

/// A primitive applied to one function instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub func: String,
    pub prim: Prim,
    /// Composition batch that introduced the record; 0 for records applied
    /// directly through this schedule's own methods.
    pub batch: u64,
}

/// A program under customization.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub(crate) pristine: IrModule,
    pub(crate) program: IrModule,
    pub(crate) target: String,
    pub(crate) applied: Vec<Record>,
    pub(crate) pending: Vec<Record>,
    pub(crate) next_batch: u64,
}

impl Schedule {
    /// Start customizing `func` within `module`.
    pub fn customize(module: &IrModule, func: &str) -> Result<Schedule> {
        // Customizing a template by name works on a representative
        // instance renamed back to the template: primitives validate
        // eagerly against its structure, and composition later fans the
        // records out to every real instance.
        let start = if module.func(func).is_none() {
            let rep = module
                .funcs
                .iter()
                .find(|f| f.template.as_deref() == Some(func))
                .ok_or_else(|| {
                    Diag::user_nospan(format!("unknown function `{func}`"))
                })?;
            let mut only = rep.clone();
            only.name = func.to_string();
            only.template = None;
            IrModule { funcs: vec![only] }
        } else {
            module.clone()
        };
        Ok(Schedule {
            pristine: start.clone(),
            program: start,
            target: func.to_string(),
            applied: Vec::new(),
            pending: Vec::new(),
            next_batch: 1,
        })
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    /// The program as it was before any customization.
    pub fn pristine(&self) -> &IrModule {
        &self.pristine
    }

    /// The program with every non-deferred record applied.
    pub fn program(&self) -> &IrModule {
        &self.program
    }

    /// Records already applied, in application order.
    pub fn records(&self) -> &[Record] {
        &self.applied
    }

    /// Records deferred until [`Schedule::build`].
    pub fn pending(&self) -> &[Record] {
        &self.pending
    }

    pub fn split(&mut self, loop_: &str, factor: u64) -> Result<()> {
        self.apply(Prim::Split { loop_: loop_.into(), factor })
    }

    pub fn reorder(&mut self, loops: &[&str]) -> Result<()> {
        self.apply(Prim::Reorder { loops: loops.iter().map(|s| s.to_string()).collect() })
    }

    pub fn fuse(&mut self, outer: &str, inner: &str) -> Result<()> {
        self.apply(Prim::Fuse { outer: outer.into(), inner: inner.into() })
    }

    pub fn unroll(&mut self, loop_: &str, factor: u64) -> Result<()> {
        self.apply(Prim::Unroll { loop_: loop_.into(), factor })
    }

    pub fn pipeline(&mut self, loop_: &str, ii: u64) -> Result<()> {
        self.apply(Prim::Pipeline { loop_: loop_.into(), ii })
    }

    pub fn partition(&mut self, mem: &str, dim: usize, base: PartitionBase) -> Result<()> {
        self.apply(Prim::Partition { mem: mem.into(), dim, base })
    }

    pub fn buffer_at(&mut self, mem: &str, loop_: &str, name: Option<&str>) -> Result<()> {
        let name = name.map(str::to_string).unwrap_or_else(|| format!("{mem}_buf"));
        self.apply(Prim::BufferAt { mem: mem.into(), loop_: loop_.into(), name })
    }

    pub fn reuse_at(&mut self, mem: &str, loop_: &str, name: Option<&str>) -> Result<()> {
        let name = name.map(str::to_string).unwrap_or_else(|| format!("{mem}_reuse"));
        self.apply(Prim::ReuseAt { mem: mem.into(), loop_: loop_.into(), name })
    }

    pub fn unfold(&mut self, band: &str, axes: &[usize]) -> Result<()> {
        self.apply(Prim::Unfold { band: band.into(), axes: axes.to_vec() })
    }

    /// Convert an intermediate buffer of the target function into a FIFO
    /// between its producer and consumer stage. Deferred until `build`.
    pub fn relay(&mut self, mem: &str, depth: u64) -> Result<()> {
        self.check_relay_target(mem)?;
        self.pending.push(Record {
            func: self.target.clone(),
            prim: Prim::Relay { mem: mem.into(), depth },
            batch: 0,
        });
        Ok(())
    }

    /// Connect an unfolded processing-element grid with forwarding FIFOs
    /// along `axis`. Deferred until `build`.
    pub fn relay_grid(&mut self, mem: &str, band: &str, axis: usize, depth: u64) -> Result<()> {
        self.check_relay_target(mem)?;
        self.pending.push(Record {
            func: self.target.clone(),
            prim: Prim::RelayGrid { mem: mem.into(), band: band.into(), axis, depth },
            batch: 0,
        });
        Ok(())
    }

    fn check_relay_target(&self, mem: &str) -> Result<()> {
        let f = self.program.expect_func(&self.target)?;
        let d = f.decl(mem).ok_or_else(|| {
            Diag::user_nospan(format!("no memory named `{mem}` in `{}`", self.target))
        })?;
        if !matches!(d.storage, Storage::Memory) {
            return Err(Diag::user_nospan(format!("`{mem}` is already a stream"))
                .with_rule("relay-duplicate"));
        }
        if self
            .applied
            .iter()
            .chain(&self.pending)
            .any(|r| r.func == self.target && r.prim.relayed_mem() == Some(mem))
        {
            return Err(Diag::user_nospan(format!(
                "`{mem}` is already relayed in `{}`",
                self.target
            ))
            .with_rule("relay-duplicate"));
        }
        Ok(())
    }

    /// Apply a primitive to the target function immediately.
    pub fn apply(&mut self, prim: Prim) -> Result<()> {
        let rec = Record { func: self.target.clone(), prim, batch: 0 };
        self.apply_now(rec)
    }

    pub(crate) fn apply_now(&mut self, rec: Record) -> Result<()> {
        let mut trial = self.program.clone();
        apply_record(&mut trial, &rec)?;
        self.program = trial;
        self.applied.push(rec);
        Ok(())
    }

    /// Apply every pending record: composed customizations first, then
    /// relays, so stream conversions always see their producers and
    /// consumers in final form.
    pub fn apply_pending(&mut self) -> Result<()> {
        let pending = std::mem::take(&mut self.pending);
        let (relays, others): (Vec<Record>, Vec<Record>) =
            pending.iter().cloned().partition(|r| r.prim.is_relay());
        let mut trial = self.program.clone();
        let ordered: Vec<Record> = others.into_iter().chain(relays).collect();
        for rec in &ordered {
            if let Err(e) = apply_record(&mut trial, rec) {
                self.pending = pending;
                return Err(e);
            }
        }
        self.program = trial;
        self.applied.extend(ordered);
        Ok(())
    }

    /// Finish the schedule: apply pending records, unify memory layouts
    /// across function interfaces, and verify the result.
    pub fn build(&mut self) -> Result<IrModule> {
        self.apply_pending()?;
        let mut trial = self.program.clone();
        dfg::propagate_layouts(&mut trial)?;
        trial.verify()?;
        self.program = trial;
        Ok(self.program.clone())
    }

    /// A short stable fingerprint of the record log.
    pub fn schedule_hash(&self) -> String {
        let mut h = Sha256::new();
        for r in self.applied.iter().chain(&self.pending) {
            h.update(format!("{}|{:?}\n", r.func, r.prim));
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Re-apply a record log to a pristine program. Produces the same module,
/// byte for byte, as the `build` that generated the log.
pub fn replay(pristine: &IrModule, records: &[Record]) -> Result<IrModule> {
    let mut m = pristine.clone();
    for rec in records {
        apply_record(&mut m, rec)?;
    }
    dfg::propagate_layouts(&mut m)?;
    m.verify()?;
    Ok(m)
}

/// Apply one record to a module in place. On error the module may be
/// partially rewritten; callers that need transactionality apply records
/// to a scratch clone (as [`Schedule`] does).
pub fn apply_record(m: &mut IrModule, rec: &Record) -> Result<()> {
    match &rec.prim {
        Prim::Split { loop_, factor } => split(fetch(m, &rec.func)?, loop_, *factor),
        Prim::Reorder { loops } => reorder(fetch(m, &rec.func)?, loops),
        Prim::Fuse { outer, inner } => fuse(fetch(m, &rec.func)?, outer, inner),
        Prim::Unroll { loop_, factor } => unroll(fetch(m, &rec.func)?, loop_, *factor),
        Prim::Pipeline { loop_, ii } => pipeline(fetch(m, &rec.func)?, loop_, *ii),
        Prim::Partition { mem, dim, base } => partition(fetch(m, &rec.func)?, mem, *dim, *base),
        Prim::BufferAt { mem, loop_, name } => buffer_at(fetch(m, &rec.func)?, mem, loop_, name),
        Prim::ReuseAt { mem, loop_, name } => reuse_at(fetch(m, &rec.func)?, mem, loop_, name),
        Prim::Unfold { band, axes } => unfold(m, &rec.func, band, axes),
        Prim::Relay { mem, depth } => relay(m, &rec.func, mem, *depth),
        Prim::RelayGrid { mem, band, axis, depth } => {
            relay_grid(m, &rec.func, mem, band, *axis, *depth)
        }
    }
}

fn fetch<'a>(m: &'a mut IrModule, func: &str) -> Result<&'a mut IrFunc> {
    m.func_mut(func)
        .ok_or_else(|| Diag::user_nospan(format!("schedule targets unknown function `{func}`")))
}

// ---------------------------------------------------------------------------
// Shared rewriting machinery.

fn err(msg: impl Into<String>) -> Diag {
    Diag::user_nospan(msg)
}

fn no_loop(f: &IrFunc, name: &str) -> Diag {
    err(format!("no loop named `{name}` in `{}`", f.name))
}

fn placeholder() -> Stmt {
    Stmt::For(Loop::new("__hole", "__hole", 1))
}

/// Path of statement indices leading to the loop `name`: every index but
/// the last selects a `For` whose body is descended into.
fn loop_path(stmts: &[Stmt], name: &str) -> Option<Vec<usize>> {
    for (i, s) in stmts.iter().enumerate() {
        if let Stmt::For(l) = s {
            if l.name == name {
                return Some(vec![i]);
            }
            if let Some(mut rest) = loop_path(&l.body, name) {
                let mut p = vec![i];
                p.append(&mut rest);
                return Some(p);
            }
        }
    }
    None
}

/// Mutable access to the statement list containing the last path entry.
fn stmts_at_mut<'a>(body: &'a mut Vec<Stmt>, path: &[usize]) -> &'a mut Vec<Stmt> {
    let mut cur = body;
    for &i in &path[..path.len() - 1] {
        match &mut cur[i] {
            Stmt::For(l) => cur = &mut l.body,
            _ => unreachable!("loop path points through a non-loop"),
        }
    }
    cur
}

fn all_loop_names(f: &IrFunc) -> HashSet<String> {
    let mut out = HashSet::new();
    f.walk_loops(&mut |l| {
        out.insert(l.name.clone());
    });
    out
}

fn all_loop_vars(f: &IrFunc) -> HashSet<String> {
    let mut out = HashSet::new();
    f.walk_loops(&mut |l| {
        out.insert(l.var.clone());
    });
    out
}

/// Pick `base`, or the first `base_k` not yet taken, and reserve it.
fn uniq(base: String, taken: &mut HashSet<String>) -> String {
    let name = if !taken.contains(&base) {
        base
    } else {
        (2..)
            .map(|k| format!("{base}_{k}"))
            .find(|n| !taken.contains(n))
            .unwrap()
    };
    taken.insert(name.clone());
    name
}

fn ix_add(a: Expr, b: Expr) -> Expr {
    Expr::Binary { op: BinKind::Add, ty: ElemType::Index, lhs: Box::new(a), rhs: Box::new(b) }
}

fn ix_mul(a: Expr, b: Expr) -> Expr {
    Expr::Binary { op: BinKind::Mul, ty: ElemType::Index, lhs: Box::new(a), rhs: Box::new(b) }
}

fn ix_div(a: Expr, b: Expr) -> Expr {
    Expr::Binary { op: BinKind::Div, ty: ElemType::Index, lhs: Box::new(a), rhs: Box::new(b) }
}

fn ix_rem(a: Expr, b: Expr) -> Expr {
    Expr::Binary { op: BinKind::Rem, ty: ElemType::Index, lhs: Box::new(a), rhs: Box::new(b) }
}

/// `var + k`, simplified when the offset is zero.
fn ix_off(var: &str, k: u64) -> Expr {
    if k == 0 {
        Expr::Var(var.to_string())
    } else {
        ix_add(Expr::Var(var.to_string()), Expr::index(k))
    }
}

fn zero_const(elem: ElemType) -> Expr {
    if elem.is_float() {
        Expr::Const(Scalar::Float(0.0), elem)
    } else {
        Expr::Const(Scalar::Raw(0), elem)
    }
}

/// Apply `f` to every top-level expression slot in a statement tree.
fn map_exprs(stmts: &mut [Stmt], f: &mut impl FnMut(&mut Expr)) {
    for s in stmts {
        match s {
            Stmt::For(l) => map_exprs(&mut l.body, f),
            Stmt::Assign(a) => {
                match &mut a.dst {
                    LRef::Mem { indices, .. } | LRef::Stream { indices, .. } => {
                        for ix in indices {
                            f(ix);
                        }
                    }
                }
                f(&mut a.value);
            }
            Stmt::Call(c) => {
                for a in &mut c.args {
                    for p in &mut a.prefix {
                        f(p);
                    }
                }
            }
        }
    }
}

fn subst_expr(e: &mut Expr, var: &str, with: &Expr) {
    match e {
        Expr::Var(v) if v == var => *e = with.clone(),
        Expr::Binary { lhs, rhs, .. } => {
            subst_expr(lhs, var, with);
            subst_expr(rhs, var, with);
        }
        Expr::Cast { expr, .. } => subst_expr(expr, var, with),
        Expr::Load { indices, .. } | Expr::StreamRead { indices, .. } => {
            for ix in indices {
                subst_expr(ix, var, with);
            }
        }
        _ => {}
    }
}

fn subst_stmts(stmts: &mut [Stmt], var: &str, with: &Expr) {
    map_exprs(stmts, &mut |e| subst_expr(e, var, with));
}

/// Fold constant index arithmetic introduced by substitutions.
fn fold_expr(e: &mut Expr) {
    match e {
        Expr::Binary { op, ty, lhs, rhs } => {
            fold_expr(lhs);
            fold_expr(rhs);
            if *ty == ElemType::Index {
                if let (Expr::Const(Scalar::Raw(a), _), Expr::Const(Scalar::Raw(b), _)) =
                    (&**lhs, &**rhs)
                {
                    let r = match op {
                        BinKind::Add => Some(a + b),
                        BinKind::Sub => Some(a - b),
                        BinKind::Mul => Some(a * b),
                        BinKind::Div if *b != 0 => Some(a.div_euclid(*b)),
                        BinKind::Rem if *b != 0 => Some(a.rem_euclid(*b)),
                        _ => None,
                    };
                    if let Some(r) = r {
                        if r >= 0 {
                            *e = Expr::Const(Scalar::Raw(r), ElemType::Index);
                        }
                    }
                }
            }
        }
        Expr::Cast { expr, .. } => fold_expr(expr),
        Expr::Load { indices, .. } | Expr::StreamRead { indices, .. } => {
            for ix in indices {
                fold_expr(ix);
            }
        }
        _ => {}
    }
}

fn expr_vars(e: &Expr, out: &mut HashSet<String>) {
    match e {
        Expr::Var(v) => {
            out.insert(v.clone());
        }
        Expr::Binary { lhs, rhs, .. } => {
            expr_vars(lhs, out);
            expr_vars(rhs, out);
        }
        Expr::Cast { expr, .. } => expr_vars(expr, out),
        Expr::Load { indices, .. } | Expr::StreamRead { indices, .. } => {
            for ix in indices {
                expr_vars(ix, out);
            }
        }
        _ => {}
    }
}

fn expr_uses_var(e: &Expr, var: &str) -> bool {
    let mut vs = HashSet::new();
    expr_vars(e, &mut vs);
    vs.contains(var)
}

/// Replace every `Load` of `mem` in an expression tree.
fn map_loads_expr(e: &mut Expr, mem: &str, f: &mut impl FnMut(&[Expr]) -> Expr) {
    match e {
        Expr::Load { mem: m, indices } => {
            for ix in indices.iter_mut() {
                map_loads_expr(ix, mem, f);
            }
            if m == mem {
                *e = f(indices);
            }
        }
        Expr::StreamRead { indices, .. } => {
            for ix in indices.iter_mut() {
                map_loads_expr(ix, mem, f);
            }
        }
        Expr::Binary { lhs, rhs, .. } => {
            map_loads_expr(lhs, mem, f);
            map_loads_expr(rhs, mem, f);
        }
        Expr::Cast { expr, .. } => map_loads_expr(expr, mem, f),
        _ => {}
    }
}

fn map_loads(stmts: &mut [Stmt], mem: &str, f: &mut impl FnMut(&[Expr]) -> Expr) {
    map_exprs(stmts, &mut |e| map_loads_expr(e, mem, f));
}

/// Replace the destination of every store to `mem`.
fn map_stores(stmts: &mut [Stmt], mem: &str, f: &mut impl FnMut(&[Expr]) -> LRef) {
    for s in stmts {
        match s {
            Stmt::For(l) => map_stores(&mut l.body, mem, f),
            Stmt::Assign(a) => {
                let hit = match &a.dst {
                    LRef::Mem { mem: m, .. } => m == mem,
                    LRef::Stream { stream, .. } => stream == mem,
                };
                if hit {
                    let ix = match &a.dst {
                        LRef::Mem { indices, .. } | LRef::Stream { indices, .. } => indices.clone(),
                    };
                    a.dst = f(&ix);
                }
            }
            Stmt::Call(_) => {}
        }
    }
}

#[derive(Debug, Clone)]
struct MemAccess {
    store: bool,
    ix: Vec<Expr>,
}

fn loads_in_expr(e: &Expr, mem: &str, out: &mut Vec<Vec<Expr>>) {
    match e {
        Expr::Load { mem: m, indices } => {
            if m == mem {
                out.push(indices.clone());
            }
            for ix in indices {
                loads_in_expr(ix, mem, out);
            }
        }
        Expr::StreamRead { indices, .. } => {
            for ix in indices {
                loads_in_expr(ix, mem, out);
            }
        }
        Expr::Binary { lhs, rhs, .. } => {
            loads_in_expr(lhs, mem, out);
            loads_in_expr(rhs, mem, out);
        }
        Expr::Cast { expr, .. } => loads_in_expr(expr, mem, out),
        _ => {}
    }
}

fn collect_accesses(stmts: &[Stmt], mem: &str, out: &mut Vec<MemAccess>) {
    for s in stmts {
        match s {
            Stmt::For(l) => collect_accesses(&l.body, mem, out),
            Stmt::Assign(a) => {
                let (dst_name, indices) = match &a.dst {
                    LRef::Mem { mem: m, indices } => (m, indices),
                    LRef::Stream { stream, indices } => (stream, indices),
                };
                let mut loads = Vec::new();
                for ix in indices {
                    loads_in_expr(ix, mem, &mut loads);
                }
                if dst_name == mem {
                    out.push(MemAccess { store: true, ix: indices.clone() });
                }
                loads_in_expr(&a.value, mem, &mut loads);
                for ix in loads {
                    out.push(MemAccess { store: false, ix });
                }
            }
            Stmt::Call(c) => {
                for a in &c.args {
                    let mut loads = Vec::new();
                    for p in &a.prefix {
                        loads_in_expr(p, mem, &mut loads);
                    }
                    for ix in loads {
                        out.push(MemAccess { store: false, ix });
                    }
                }
            }
        }
    }
}

/// `(loop name, loop var, extent)` for every loop enclosing a statement.
type Chain = Vec<(String, String, u64)>;

fn walk_ctx<'a>(stmts: &'a [Stmt], chain: &mut Chain, f: &mut impl FnMut(&Chain, &'a Stmt)) {
    for s in stmts {
        f(chain, s);
        if let Stmt::For(l) = s {
            chain.push((l.name.clone(), l.var.clone(), l.extent));
            walk_ctx(&l.body, chain, f);
            chain.pop();
        }
    }
}

/// Evaluate a static index expression under a loop-variable environment.
fn eval_ix(e: &Expr, env: &HashMap<String, i128>) -> Option<i128> {
    match e {
        Expr::Const(Scalar::Raw(v), _) => Some(*v),
        Expr::Var(v) => env.get(v).copied(),
        Expr::Binary { op, lhs, rhs, .. } => {
            let a = eval_ix(lhs, env)?;
            let b = eval_ix(rhs, env)?;
            match op {
                BinKind::Add => Some(a + b),
                BinKind::Sub => Some(a - b),
                BinKind::Mul => Some(a * b),
                BinKind::Div if b != 0 => Some(a.div_euclid(b)),
                BinKind::Rem if b != 0 => Some(a.rem_euclid(b)),
                _ => None,
            }
        }
        Expr::Cast { expr, .. } => eval_ix(expr, env),
        _ => None,
    }
}

const SEQ_CAP: u128 = 4_000_000;

/// Enumerate the flattened element an access touches on every iteration of
/// the given loops (outermost first). `None` when the sequence is not
/// statically evaluable or too large to enumerate.
fn enum_sequence(loops: &[(String, u64)], ix: &[Expr], shape: &[u64]) -> Option<Vec<u64>> {
    let total: u128 = loops.iter().map(|(_, e)| *e as u128).product();
    if total > SEQ_CAP {
        return None;
    }
    let mut env: HashMap<String, i128> = HashMap::new();
    let mut counters = vec![0u64; loops.len()];
    let mut out = Vec::with_capacity(total as usize);
    loop {
        for (c, (v, _)) in counters.iter().zip(loops) {
            env.insert(v.clone(), *c as i128);
        }
        let mut flat: u64 = 0;
        for (d, e) in ix.iter().enumerate() {
            let val = eval_ix(e, &env)?;
            if val < 0 || val as u64 >= shape[d] {
                return None;
            }
            flat = flat * shape[d] + val as u64;
        }
        out.push(flat);
        let mut d = loops.len();
        loop {
            if d == 0 {
                return Some(out);
            }
            d -= 1;
            counters[d] += 1;
            if counters[d] < loops[d].1 {
                break;
            }
            counters[d] = 0;
        }
    }
}

fn fmt_elem(shape: &[u64], mut flat: u64) -> String {
    if shape.is_empty() {
        return "[]".to_string();
    }
    let mut parts = vec![0u64; shape.len()];
    for d in (0..shape.len()).rev() {
        parts[d] = flat % shape[d];
        flat /= shape[d];
    }
    format!(
        "[{}]",
        parts.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
    )
}

/// Build a nest of fresh loops (name doubles as the variable) around a body.
fn nest(loops: &[(String, u64)], body: Vec<Stmt>) -> Vec<Stmt> {
    let mut cur = body;
    for (name, extent) in loops.iter().rev() {
        let mut l = Loop::new(name.clone(), name.clone(), *extent);
        l.body = cur;
        cur = vec![Stmt::For(l)];
    }
    cur
}

// ---------------------------------------------------------------------------
// Temporal primitives.

fn split(f: &mut IrFunc, name: &str, factor: u64) -> Result<()> {
    let mut taken_loops = all_loop_names(f);
    let mut taken_vars = all_loop_vars(f);
    let path = loop_path(&f.body, name).ok_or_else(|| no_loop(f, name))?;
    let fname = f.name.clone();
    let list = stmts_at_mut(&mut f.body, &path);
    let idx = *path.last().unwrap();
    let Stmt::For(l) = &list[idx] else { unreachable!() };
    if l.band.is_some() {
        return Err(err(format!(
            "cannot split band loop `{name}`; unfold the band instead"
        )));
    }
    if factor < 2 {
        return Err(err("split factor must be at least 2"));
    }
    if factor > l.extent || l.extent % factor != 0 {
        return Err(err(format!(
            "split factor {factor} does not divide the extent {} of loop `{name}` in `{fname}`",
            l.extent
        )));
    }
    let Stmt::For(mut l) = std::mem::replace(&mut list[idx], placeholder()) else {
        unreachable!()
    };
    let var = l.var.clone();
    let outer_name = uniq(format!("{name}.outer"), &mut taken_loops);
    let inner_name = uniq(format!("{name}.inner"), &mut taken_loops);
    let vo = uniq(format!("{var}.o"), &mut taken_vars);
    let vi = uniq(format!("{var}.i"), &mut taken_vars);
    let combined = ix_add(
        ix_mul(Expr::Var(vo.clone()), Expr::index(factor)),
        Expr::Var(vi.clone()),
    );
    subst_stmts(&mut l.body, &var, &combined);
    let mut inner = Loop::new(inner_name, vi, factor);
    inner.body = std::mem::take(&mut l.body);
    inner.pipeline_ii = l.pipeline_ii;
    let mut outer = Loop::new(outer_name, vo, l.extent / factor);
    outer.unroll = l.unroll;
    outer.body = vec![Stmt::For(inner)];
    list[idx] = Stmt::For(outer);
    Ok(())
}

fn reorder(f: &mut IrFunc, names: &[String]) -> Result<()> {
    if names.len() < 2 {
        return Err(err("reorder needs at least two loops"));
    }
    let set: HashSet<&str> = names.iter().map(String::as_str).collect();
    if set.len() != names.len() {
        return Err(err("reorder lists the same loop twice"));
    }
    let mut paths = Vec::new();
    for n in names {
        paths.push(loop_path(&f.body, n).ok_or_else(|| no_loop(f, n))?);
    }
    let outer_path = paths.iter().min_by_key(|p| p.len()).unwrap().clone();
    for (n, p) in names.iter().zip(&paths) {
        if !p.starts_with(&outer_path) {
            return Err(err(format!(
                "loop `{n}` is not nested inside the outermost reordered loop"
            )));
        }
    }
    let idx = *outer_path.last().unwrap();
    let top = {
        let list = stmts_at_mut(&mut f.body, &outer_path);
        let Stmt::For(top) = std::mem::replace(&mut list[idx], placeholder()) else {
            unreachable!()
        };
        top
    };
    let mut shells: Vec<Loop> = Vec::new();
    let mut cur = top;
    let innermost_body = loop {
        if shells.len() + 1 == names.len() {
            let b = std::mem::take(&mut cur.body);
            shells.push(cur);
            break b;
        }
        if cur.body.len() != 1 {
            return Err(err(format!(
                "the reordered loops must be perfectly nested, but `{}` contains other statements",
                cur.name
            )));
        }
        match cur.body.pop().unwrap() {
            Stmt::For(next) if set.contains(next.name.as_str()) => {
                shells.push(cur);
                cur = next;
            }
            _ => {
                return Err(err(format!(
                    "the reordered loops must be perfectly nested, but `{}` does not directly \
                     contain the next one",
                    cur.name
                )))
            }
        }
    };
    let mut body = innermost_body;
    for n in names.iter().rev() {
        let pos = shells.iter().position(|s| &s.name == n).unwrap();
        let mut sh = shells.remove(pos);
        sh.body = body;
        body = vec![Stmt::For(sh)];
    }
    let list = stmts_at_mut(&mut f.body, &outer_path);
    list[idx] = body.pop().unwrap();
    Ok(())
}

fn fuse(f: &mut IrFunc, a: &str, b: &str) -> Result<()> {
    let mut taken_loops = all_loop_names(f);
    let mut taken_vars = all_loop_vars(f);
    let path = loop_path(&f.body, a).ok_or_else(|| no_loop(f, a))?;
    let idx = *path.last().unwrap();
    let list = stmts_at_mut(&mut f.body, &path);
    let Stmt::For(la) = &list[idx] else { unreachable!() };
    if la.band.is_some() {
        return Err(err(format!("cannot fuse band loop `{a}`")));
    }
    if la.body.len() != 1 {
        return Err(err(format!(
            "`{b}` must be the only statement inside `{a}` to fuse them"
        )));
    }
    let Stmt::For(mut la) = std::mem::replace(&mut list[idx], placeholder()) else {
        unreachable!()
    };
    let lb = match la.body.pop().unwrap() {
        Stmt::For(lb) if lb.name == b => lb,
        _ => {
            return Err(err(format!(
                "`{b}` must be the only statement inside `{a}` to fuse them"
            )))
        }
    };
    if lb.band.is_some() {
        return Err(err(format!("cannot fuse band loop `{b}`")));
    }
    let fused_name = uniq(format!("{a}.{b}.fused"), &mut taken_loops);
    let fused_var = uniq(format!("{}.{}.f", la.var, lb.var), &mut taken_vars);
    let mut body = lb.body;
    let eb = Expr::index(lb.extent);
    subst_stmts(&mut body, &la.var, &ix_div(Expr::Var(fused_var.clone()), eb.clone()));
    subst_stmts(&mut body, &lb.var, &ix_rem(Expr::Var(fused_var.clone()), eb));
    let mut fused = Loop::new(fused_name, fused_var, la.extent * lb.extent);
    fused.body = body;
    list[idx] = Stmt::For(fused);
    Ok(())
}

fn unroll(f: &mut IrFunc, name: &str, factor: u64) -> Result<()> {
    let fname = f.name.clone();
    let l = find_loop_mut(&mut f.body, name)
        .ok_or_else(|| err(format!("no loop named `{name}` in `{fname}`")))?;
    if l.band.is_some() {
        return Err(err(format!(
            "cannot unroll band loop `{name}`; unfold the band instead"
        )));
    }
    if factor < 2 {
        return Err(err("unroll factor must be at least 2"));
    }
    if factor > l.extent {
        return Err(err(format!(
            "unroll factor {factor} exceeds the extent {} of loop `{name}`",
            l.extent
        )));
    }
    l.unroll = Some(factor);
    Ok(())
}

fn pipeline(f: &mut IrFunc, name: &str, ii: u64) -> Result<()> {
    let fname = f.name.clone();
    let l = find_loop_mut(&mut f.body, name)
        .ok_or_else(|| err(format!("no loop named `{name}` in `{fname}`")))?;
    if l.band.is_some() {
        return Err(err(format!(
            "cannot pipeline band loop `{name}`; unfold the band instead"
        )));
    }
    if ii < 1 {
        return Err(err("pipeline initiation interval must be at least 1"));
    }
    l.pipeline_ii = Some(ii);
    Ok(())
}

// ---------------------------------------------------------------------------
// Spatial primitives.

fn partition(f: &mut IrFunc, mem: &str, dim: usize, base: PartitionBase) -> Result<()> {
    let fname = f.name.clone();
    let d = f
        .decl_mut(mem)
        .ok_or_else(|| err(format!("no memory named `{mem}` in `{fname}`")))?;
    let rank = d.ty.rank();
    if dim >= rank {
        return Err(err(format!(
            "dimension {dim} is out of range for `{mem}` (rank {rank})"
        )));
    }
    let extent = d.ty.shape[dim];
    match base {
        PartitionBase::Cyclic(a) | PartitionBase::Block(a) => {
            if !legal_factor(a, extent) {
                return Err(err(format!(
                    "partition factor {a} is illegal for dimension {dim} of `{mem}` (extent \
                     {extent}); factors must be proper divisors of the extent"
                ))
                .with_rule("illegal-factor"));
            }
        }
        PartitionBase::Complete | PartitionBase::None => {}
    }
    d.layout.0[dim] = meet_base(d.layout.0[dim], base, extent);
    Ok(())
}

fn buffer_at(f: &mut IrFunc, mem: &str, loop_: &str, buf_name: &str) -> Result<()> {
    let decl = f
        .decl(mem)
        .ok_or_else(|| err(format!("no memory named `{mem}` in `{}`", f.name)))?
        .clone();
    if !matches!(decl.storage, Storage::Memory) {
        return Err(err(format!("cannot buffer stream `{mem}`")));
    }
    if f.decl(buf_name).is_some() {
        return Err(err(format!(
            "`{buf_name}` is already declared in `{}`",
            f.name
        )));
    }
    let mut taken_loops = all_loop_names(f);
    let path = loop_path(&f.body, loop_).ok_or_else(|| no_loop(f, loop_))?;

    // Classify each dimension of the access pattern under the loop.
    let l = f.find_loop(loop_).unwrap();
    let mut inner: HashMap<String, u64> = HashMap::new();
    let mut ambiguous = None;
    for s in &l.body {
        let mut visit = |lp: &Loop| {
            if let Some(prev) = inner.insert(lp.var.clone(), lp.extent) {
                if prev != lp.extent {
                    ambiguous = Some(lp.var.clone());
                }
            }
        };
        fn walk_for(s: &Stmt, f: &mut impl FnMut(&Loop)) {
            if let Stmt::For(l) = s {
                f(l);
                for s in &l.body {
                    walk_for(s, f);
                }
            }
        }
        walk_for(s, &mut visit);
    }
    if let Some(v) = ambiguous {
        return Err(err(format!(
            "loop variable `{v}` is reused with different extents under `{loop_}`"
        )));
    }
    let mut accs = Vec::new();
    collect_accesses(&l.body, mem, &mut accs);
    if !accs.iter().any(|a| a.store) {
        return Err(err(format!("`{mem}` is not written under loop `{loop_}`")));
    }
    let ix0 = accs[0].ix.clone();
    if accs.iter().any(|a| a.ix != ix0) {
        return Err(err(format!(
            "accesses to `{mem}` under `{loop_}` must all share one subscript pattern"
        )));
    }
    // kept[d] = Some((var, extent)) for buffered dimensions.
    let mut kept: Vec<Option<(String, u64)>> = Vec::new();
    for (d, e) in ix0.iter().enumerate() {
        let mut used = HashSet::new();
        expr_vars(e, &mut used);
        let used_inner: Vec<&String> = used.iter().filter(|v| inner.contains_key(*v)).collect();
        if used_inner.is_empty() {
            kept.push(None);
        } else if let Expr::Var(v) = e {
            kept.push(Some((v.clone(), inner[v])));
        } else {
            return Err(err(format!(
                "the subscript of `{mem}` in dimension {d} is too involved to buffer at `{loop_}`"
            )));
        }
    }
    let shape: Vec<u64> = kept.iter().flatten().map(|(_, e)| *e).collect();
    f.locals.push(Decl::memory(
        buf_name,
        TensorType { elem: decl.ty.elem, shape },
    ));

    let list = stmts_at_mut(&mut f.body, &path);
    let Stmt::For(l) = &mut list[*path.last().unwrap()] else { unreachable!() };
    let kept_ix: Vec<Expr> = kept
        .iter()
        .flatten()
        .map(|(v, _)| Expr::Var(v.clone()))
        .collect();
    map_loads(&mut l.body, mem, &mut |_| Expr::Load {
        mem: buf_name.to_string(),
        indices: kept_ix.clone(),
    });
    map_stores(&mut l.body, mem, &mut |_| LRef::Mem {
        mem: buf_name.to_string(),
        indices: kept_ix.clone(),
    });

    let phase = |suffix: &str, taken: &mut HashSet<String>| -> Vec<(usize, String, u64)> {
        kept.iter()
            .enumerate()
            .filter_map(|(d, k)| k.as_ref().map(|(v, e)| (d, v.clone(), *e)))
            .map(|(d, v, e)| (d, uniq(format!("{v}_{suffix}"), taken), e))
            .collect()
    };
    // Initialization: copy current contents into the buffer.
    let init = phase("init", &mut taken_loops);
    let full_ix = |vars: &[(usize, String, u64)]| -> Vec<Expr> {
        ix0.iter()
            .enumerate()
            .map(|(d, e)| match vars.iter().find(|(kd, _, _)| *kd == d) {
                Some((_, v, _)) => Expr::Var(v.clone()),
                None => e.clone(),
            })
            .collect()
    };
    let buf_ix = |vars: &[(usize, String, u64)]| -> Vec<Expr> {
        vars.iter().map(|(_, v, _)| Expr::Var(v.clone())).collect()
    };
    let init_body = vec![Stmt::Assign(Assign {
        dst: LRef::Mem { mem: buf_name.to_string(), indices: buf_ix(&init) },
        op: AccOp::Set,
        value: Expr::Load { mem: mem.to_string(), indices: full_ix(&init) },
    })];
    let init_loops: Vec<(String, u64)> =
        init.iter().map(|(_, n, e)| (n.clone(), *e)).collect();
    let init_nest = nest(&init_loops, init_body);
    // Write-back: copy the buffer out.
    let back = phase("back", &mut taken_loops);
    let back_body = vec![Stmt::Assign(Assign {
        dst: LRef::Mem { mem: mem.to_string(), indices: full_ix(&back) },
        op: AccOp::Set,
        value: Expr::Load { mem: buf_name.to_string(), indices: buf_ix(&back) },
    })];
    let back_loops: Vec<(String, u64)> =
        back.iter().map(|(_, n, e)| (n.clone(), *e)).collect();
    let back_nest = nest(&back_loops, back_body);

    let mut body = init_nest;
    body.append(&mut l.body);
    body.extend(back_nest);
    l.body = body;
    Ok(())
}

/// Parse an index expression of the form `v + c` (or plain `v`).
fn off_of(e: &Expr, v: &str) -> Option<i128> {
    match e {
        Expr::Var(x) if x == v => Some(0),
        Expr::Binary { op: BinKind::Add, lhs, rhs, .. } => match (&**lhs, &**rhs) {
            (Expr::Var(x), Expr::Const(Scalar::Raw(c), _)) if x == v => Some(*c),
            (Expr::Const(Scalar::Raw(c), _), Expr::Var(x)) if x == v => Some(*c),
            _ => None,
        },
        _ => None,
    }
}

fn reuse_at(f: &mut IrFunc, mem: &str, loop_: &str, buf: &str) -> Result<()> {
    let decl = f
        .decl(mem)
        .ok_or_else(|| err(format!("no memory named `{mem}` in `{}`", f.name)))?
        .clone();
    if !matches!(decl.storage, Storage::Memory) {
        return Err(err(format!("cannot build a reuse buffer over stream `{mem}`")));
    }
    if f.decl(buf).is_some() {
        return Err(err(format!("`{buf}` is already declared in `{}`", f.name)));
    }
    let mut taken_loops = all_loop_names(f);
    let path = loop_path(&f.body, loop_).ok_or_else(|| no_loop(f, loop_))?;
    let l = f.find_loop(loop_).unwrap();
    let v = l.var.clone();
    let ext_l = l.extent;

    let mut accs = Vec::new();
    collect_accesses(&l.body, mem, &mut accs);
    if accs.iter().any(|a| a.store) {
        return Err(err(format!(
            "`{mem}` is written under `{loop_}`; reuse buffers require read-only accesses"
        )));
    }
    if accs.is_empty() {
        return Err(err(format!("`{mem}` is not read under loop `{loop_}`")));
    }
    let rank = decl.ty.rank();
    let mut varying: Vec<usize> = (0..rank)
        .filter(|&d| accs.iter().any(|a| expr_uses_var(&a.ix[d], &v)))
        .collect();
    if varying.len() != 1 {
        return Err(err(format!(
            "reads of `{mem}` must vary along exactly one dimension of loop `{loop_}`"
        )));
    }
    let d = varying.pop().unwrap();
    let mut offsets = Vec::new();
    for a in &accs {
        match off_of(&a.ix[d], &v) {
            Some(c) if c >= 0 => offsets.push(c as u64),
            _ => {
                return Err(err(format!(
                    "the subscript of `{mem}` in dimension {d} must be `{v}` plus a non-negative \
                     constant to reuse it at `{loop_}`"
                )))
            }
        }
    }
    let m0 = *offsets.iter().min().unwrap();
    let mx = *offsets.iter().max().unwrap();
    let rows = mx - m0 + 1;
    if ext_l + mx > decl.ty.shape[d] {
        return Err(err(format!(
            "reads of `{mem}` run past dimension {d}: the loop covers {ext_l} iterations with a \
             +{mx} offset but the extent is {}",
            decl.ty.shape[d]
        )));
    }
    let mut shape = decl.ty.shape.clone();
    shape[d] = rows;
    f.locals.push(Decl::memory(buf, TensorType { elem: decl.ty.elem, shape }));

    let others: Vec<(usize, u64)> = (0..rank)
        .filter(|k| *k != d)
        .map(|k| (k, decl.ty.shape[k]))
        .collect();
    // A rank-sized index vector with `d` fixed and the other dimensions
    // taken from the supplied loop variables.
    let with_others = |at_d: Expr, vars: &[(usize, String)]| -> Vec<Expr> {
        (0..rank)
            .map(|k| {
                if k == d {
                    at_d.clone()
                } else {
                    let (_, v) = vars.iter().find(|(kd, _)| *kd == k).unwrap();
                    Expr::Var(v.clone())
                }
            })
            .collect()
    };
    let other_loops = |stem: &str, taken: &mut HashSet<String>| -> Vec<(usize, String, u64)> {
        others
            .iter()
            .map(|(k, e)| (*k, uniq(format!("{buf}_{stem}_{k}"), taken), *e))
            .collect()
    };

    // Pre-fill rows m0 .. mx-1 into slots 1 .. rows-1 before the loop.
    let mut pre_nest = Vec::new();
    if rows > 1 {
        let row = uniq(format!("{buf}_pre"), &mut taken_loops);
        let ol = other_loops("pre", &mut taken_loops);
        let vars: Vec<(usize, String)> = ol.iter().map(|(k, n, _)| (*k, n.clone())).collect();
        let body = vec![Stmt::Assign(Assign {
            dst: LRef::Mem {
                mem: buf.to_string(),
                indices: with_others(ix_add(Expr::Var(row.clone()), Expr::index(1)), &vars),
            },
            op: AccOp::Set,
            value: Expr::Load {
                mem: mem.to_string(),
                indices: with_others(ix_off(&row, m0), &vars),
            },
        })];
        let mut loops: Vec<(String, u64)> = vec![(row, rows - 1)];
        loops.extend(ol.iter().map(|(_, n, e)| (n.clone(), *e)));
        pre_nest = nest(&loops, body);
    }

    // Per-iteration shift and fill at the head of the loop body.
    let mut head = Vec::new();
    if rows > 1 {
        let s = uniq(format!("{buf}_shift"), &mut taken_loops);
        let ol = other_loops("shift", &mut taken_loops);
        let vars: Vec<(usize, String)> = ol.iter().map(|(k, n, _)| (*k, n.clone())).collect();
        let body = vec![Stmt::Assign(Assign {
            dst: LRef::Mem {
                mem: buf.to_string(),
                indices: with_others(Expr::Var(s.clone()), &vars),
            },
            op: AccOp::Set,
            value: Expr::Load {
                mem: buf.to_string(),
                indices: with_others(ix_off(&s, 1), &vars),
            },
        })];
        let mut loops: Vec<(String, u64)> = vec![(s, rows - 1)];
        loops.extend(ol.iter().map(|(_, n, e)| (n.clone(), *e)));
        head.extend(nest(&loops, body));
    }
    {
        let ol = other_loops("fill", &mut taken_loops);
        let vars: Vec<(usize, String)> = ol.iter().map(|(k, n, _)| (*k, n.clone())).collect();
        let body = vec![Stmt::Assign(Assign {
            dst: LRef::Mem {
                mem: buf.to_string(),
                indices: with_others(Expr::index(rows - 1), &vars),
            },
            op: AccOp::Set,
            value: Expr::Load {
                mem: mem.to_string(),
                indices: with_others(ix_off(&v, mx), &vars),
            },
        })];
        let loops: Vec<(String, u64)> = ol.iter().map(|(_, n, e)| (n.clone(), *e)).collect();
        head.extend(nest(&loops, body));
    }

    let list = stmts_at_mut(&mut f.body, &path);
    let idx = *path.last().unwrap();
    {
        let Stmt::For(l) = &mut list[idx] else { unreachable!() };
        map_loads(&mut l.body, mem, &mut |ix| {
            let c = off_of(&ix[d], &v).unwrap_or(0) as u64;
            let indices = ix
                .iter()
                .enumerate()
                .map(|(k, e)| if k == d { Expr::index(c - m0) } else { e.clone() })
                .collect();
            Expr::Load { mem: buf.to_string(), indices }
        });
        let mut body = head;
        body.append(&mut l.body);
        l.body = body;
    }
    // Insert the pre-fill directly before the loop.
    for (off, s) in pre_nest.into_iter().enumerate() {
        list.insert(idx + off, s);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Unfolding a band into per-coordinate clones.

fn band_path(stmts: &[Stmt], band: &str) -> Option<Vec<usize>> {
    for (i, s) in stmts.iter().enumerate() {
        if let Stmt::For(l) = s {
            if l.band.as_deref() == Some(band) {
                return Some(vec![i]);
            }
            if let Some(mut rest) = band_path(&l.body, band) {
                let mut p = vec![i];
                p.append(&mut rest);
                return Some(p);
            }
        }
    }
    None
}

fn collect_mem_refs(stmts: &[Stmt], out: &mut Vec<String>, seen: &mut HashSet<String>) -> Result<()> {
    let push = |n: &str, out: &mut Vec<String>, seen: &mut HashSet<String>| {
        if seen.insert(n.to_string()) {
            out.push(n.to_string());
        }
    };
    for s in stmts {
        match s {
            Stmt::For(l) => collect_mem_refs(&l.body, out, seen)?,
            Stmt::Assign(a) => {
                let (dst, indices) = match &a.dst {
                    LRef::Mem { mem, indices } => (mem, indices),
                    LRef::Stream { stream, indices } => (stream, indices),
                };
                push(dst, out, seen);
                let mut names = Vec::new();
                for ix in indices {
                    collect_load_names(ix, &mut names);
                }
                collect_load_names(&a.value, &mut names);
                for n in names {
                    push(&n, out, seen);
                }
            }
            Stmt::Call(_) => {
                return Err(err("cannot unfold a band that contains calls"));
            }
        }
    }
    Ok(())
}

fn collect_load_names(e: &Expr, out: &mut Vec<String>) {
    match e {
        Expr::Load { mem, indices } => {
            out.push(mem.clone());
            for ix in indices {
                collect_load_names(ix, out);
            }
        }
        Expr::StreamRead { stream, indices } => {
            out.push(stream.clone());
            for ix in indices {
                collect_load_names(ix, out);
            }
        }
        Expr::Binary { lhs, rhs, .. } => {
            collect_load_names(lhs, out);
            collect_load_names(rhs, out);
        }
        Expr::Cast { expr, .. } => collect_load_names(expr, out),
        _ => {}
    }
}

/// Does any statement in the tree touch `name` (as a load or a store)?
fn touches(stmts: &[Stmt], name: &str) -> bool {
    for s in stmts {
        match s {
            Stmt::For(l) => {
                if touches(&l.body, name) {
                    return true;
                }
            }
            Stmt::Assign(a) => {
                let dst = match &a.dst {
                    LRef::Mem { mem, .. } => mem,
                    LRef::Stream { stream, .. } => stream,
                };
                if dst == name {
                    return true;
                }
                let indices = match &a.dst {
                    LRef::Mem { indices, .. } | LRef::Stream { indices, .. } => indices,
                };
                let mut names = Vec::new();
                for ix in indices {
                    collect_load_names(ix, &mut names);
                }
                collect_load_names(&a.value, &mut names);
                if names.iter().any(|n| n == name) {
                    return true;
                }
            }
            Stmt::Call(c) => {
                if c.args.iter().any(|a| a.mem == name) || c.dst.as_deref() == Some(name) {
                    return true;
                }
            }
        }
    }
    false
}

/// First statement in execution order that touches `name`, if any: returns
/// whether it is a plain overwrite (`=` with a value that does not read the
/// memory back).
fn first_access_is_set(stmts: &[Stmt], name: &str) -> Option<bool> {
    for s in stmts {
        match s {
            Stmt::For(l) => {
                if let Some(r) = first_access_is_set(&l.body, name) {
                    return Some(r);
                }
            }
            Stmt::Assign(a) => {
                let mut reads = Vec::new();
                let indices = match &a.dst {
                    LRef::Mem { indices, .. } | LRef::Stream { indices, .. } => indices,
                };
                for ix in indices {
                    collect_load_names(ix, &mut reads);
                }
                collect_load_names(&a.value, &mut reads);
                let dst = match &a.dst {
                    LRef::Mem { mem, .. } => mem,
                    LRef::Stream { stream, .. } => stream,
                };
                let is_dst = dst == name;
                let is_read = reads.iter().any(|n| n == name);
                if is_dst || is_read {
                    return Some(is_dst && matches!(a.op, AccOp::Set) && !is_read);
                }
            }
            Stmt::Call(_) => {}
        }
    }
    None
}

fn unfold(m: &mut IrModule, func: &str, band: &str, axes: &[usize]) -> Result<()> {
    let fpos = m
        .funcs
        .iter()
        .position(|f| f.name == func)
        .ok_or_else(|| err(format!("schedule targets unknown function `{func}`")))?;
    if !m.funcs[fpos].unfolds.is_empty() {
        return Err(err(format!("`{func}` already has an unfolded band")));
    }
    let path = band_path(&m.funcs[fpos].body, band)
        .ok_or_else(|| err(format!("no band named `{band}` in `{func}`")))?;

    // Pull the band nest out, leaving a placeholder to splice the calls into.
    let idx = *path.last().unwrap();
    let (vars, extents, body) = {
        let list = stmts_at_mut(&mut m.funcs[fpos].body, &path);
        let Stmt::For(top) = std::mem::replace(&mut list[idx], placeholder()) else {
            unreachable!()
        };
        let mut vars = Vec::new();
        let mut extents = Vec::new();
        let mut cur = top;
        loop {
            vars.push(cur.var.clone());
            extents.push(cur.extent);
            let descend = cur.body.len() == 1
                && matches!(&cur.body[0], Stmt::For(l) if l.band.as_deref() == Some(band));
            if descend {
                let Some(Stmt::For(next)) = cur.body.pop() else { unreachable!() };
                cur = next;
            } else {
                break (vars, extents, cur.body);
            }
        }
    };

    let mut ax: Vec<usize> = axes.to_vec();
    ax.sort_unstable();
    ax.dedup();
    if ax != (0..vars.len()).collect::<Vec<_>>() {
        return Err(err(format!(
            "unfold must list every axis of band `{band}` exactly once (it has {})",
            vars.len()
        )));
    }

    // Classify the memories the band touches.
    let mut refs = Vec::new();
    collect_mem_refs(&body, &mut refs, &mut HashSet::new())?;
    let f = &m.funcs[fpos];
    let mut shared: Vec<Decl> = Vec::new();
    let mut private: Vec<Decl> = Vec::new();
    for name in &refs {
        let d = f
            .decl(name)
            .ok_or_else(|| Diag::internal(format!("band references undeclared `{name}`")))?;
        let is_local = f.locals.iter().any(|l| l.name == *name);
        // The band nest is already detached, so any remaining reference in
        // the function body means the memory is visible outside the band.
        let outside = touches(&f.body, name);
        if is_local && !outside {
            match first_access_is_set(&body, name) {
                Some(true) => {
                    private.push(d.clone());
                    continue;
                }
                _ => {
                    return Err(err(format!(
                        "local `{name}` carries values across band iterations; initialize it \
                         inside the band before reading it"
                    )));
                }
            }
        }
        shared.push(d.clone());
    }
    // Writes to shared memories must be disjoint across coordinates.
    fn check_disjoint(stmts: &[Stmt], shared: &[Decl], vars: &[String]) -> Result<()> {
        for s in stmts {
            match s {
                Stmt::For(l) => check_disjoint(&l.body, shared, vars)?,
                Stmt::Assign(a) => {
                    let (dst, indices) = match &a.dst {
                        LRef::Mem { mem, indices } => (mem, indices),
                        LRef::Stream { stream, indices } => (stream, indices),
                    };
                    if shared.iter().any(|d| d.name == *dst) {
                        for v in vars {
                            if !indices.iter().any(|ix| expr_uses_var(ix, v)) {
                                return Err(err(format!(
                                    "writes to `{dst}` must be subscripted by every unfolded \
                                     axis, but `{v}` does not appear"
                                ))
                                .with_rule("unfold-overlap"));
                            }
                        }
                    }
                }
                Stmt::Call(_) => {}
            }
        }
        Ok(())
    }
    check_disjoint(&body, &shared, &vars)?;

    // Generate one clone per coordinate, row-major.
    let total: u64 = extents.iter().product();
    let mut clones = Vec::new();
    let mut clone_funcs = Vec::new();
    let mut calls = Vec::new();
    for lin in 0..total {
        let mut coords = vec![0u64; extents.len()];
        let mut rest = lin;
        for d in (0..extents.len()).rev() {
            coords[d] = rest % extents[d];
            rest /= extents[d];
        }
        let cname = format!(
            "{func}_{}",
            coords.iter().map(u64::to_string).collect::<Vec<_>>().join("_")
        );
        if m.func(&cname).is_some() {
            return Err(err(format!(
                "cannot unfold `{band}`: a function named `{cname}` already exists"
            )));
        }
        let mut cf = IrFunc::new(cname.clone());
        cf.params = shared.clone();
        cf.locals = private.clone();
        let mut cb = body.clone();
        for (v, c) in vars.iter().zip(&coords) {
            subst_stmts(&mut cb, v, &Expr::index(*c));
        }
        map_exprs(&mut cb, &mut fold_expr);
        cf.body = cb;
        calls.push(Stmt::Call(CallStmt {
            callee: cname.clone(),
            args: shared
                .iter()
                .map(|d| ArgRef { mem: d.name.clone(), prefix: Vec::new() })
                .collect(),
            dst: None,
        }));
        clones.push(cname);
        clone_funcs.push(cf);
    }

    // Splice the calls where the band used to be and record the unfold.
    {
        let list = stmts_at_mut(&mut m.funcs[fpos].body, &path);
        list.splice(idx..idx + 1, calls);
    }
    m.funcs[fpos].unfolds.push(UnfoldInfo { band: band.to_string(), vars, extents, body, clones });
    for (k, cf) in clone_funcs.into_iter().enumerate() {
        m.funcs.insert(fpos + k, cf);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Relays: converting memories into streams.

/// Collect every load of `mem` together with its enclosing loop chain.
fn loads_with_chains(stmts: &[Stmt], mem: &str) -> Vec<(Chain, Vec<Expr>)> {
    let mut out = Vec::new();
    let mut chain = Chain::new();
    walk_ctx(stmts, &mut chain, &mut |chain, s| {
        let mut ixs = Vec::new();
        match s {
            Stmt::Assign(a) => {
                let indices = match &a.dst {
                    LRef::Mem { indices, .. } | LRef::Stream { indices, .. } => indices,
                };
                for ix in indices {
                    loads_in_expr(ix, mem, &mut ixs);
                }
                loads_in_expr(&a.value, mem, &mut ixs);
            }
            Stmt::Call(c) => {
                for a in &c.args {
                    for p in &a.prefix {
                        loads_in_expr(p, mem, &mut ixs);
                    }
                }
            }
            Stmt::For(_) => {}
        }
        for ix in ixs {
            out.push((chain.clone(), ix));
        }
    });
    out
}

/// Collect every store to `mem` together with its chain, op, and indices.
fn stores_with_chains(stmts: &[Stmt], mem: &str) -> Vec<(Chain, AccOp, Vec<Expr>)> {
    let mut out = Vec::new();
    let mut chain = Chain::new();
    walk_ctx(stmts, &mut chain, &mut |chain, s| {
        if let Stmt::Assign(a) = s {
            let (dst, indices) = match &a.dst {
                LRef::Mem { mem, indices } => (mem, indices),
                LRef::Stream { stream, indices } => (stream, indices),
            };
            if dst == mem {
                out.push((chain.clone(), a.op, indices.clone()));
            }
        }
    });
    out
}

/// Replace the unique store to `mem` using `f`; panics if none matched.
fn replace_store_stmt(stmts: &mut [Stmt], mem: &str, f: &mut impl FnMut(Assign) -> Stmt) -> bool {
    for s in stmts {
        match s {
            Stmt::For(l) => {
                if replace_store_stmt(&mut l.body, mem, f) {
                    return true;
                }
            }
            Stmt::Assign(a) => {
                let hit = match &a.dst {
                    LRef::Mem { mem: m, .. } => m == mem,
                    LRef::Stream { stream, .. } => stream == mem,
                };
                if hit {
                    let dummy = Stmt::Assign(Assign {
                        dst: LRef::Mem { mem: "__hole".into(), indices: Vec::new() },
                        op: AccOp::Set,
                        value: Expr::index(0),
                    });
                    let Stmt::Assign(old) = std::mem::replace(s, dummy) else { unreachable!() };
                    *s = f(old);
                    return true;
                }
            }
            Stmt::Call(_) => {}
        }
    }
    false
}

fn count_calls(m: &IrModule, callee: &str) -> usize {
    let mut n = 0;
    for f in &m.funcs {
        f.walk(&mut |s| {
            if let Stmt::Call(c) = s {
                if c.callee == callee {
                    n += 1;
                }
            }
        });
    }
    n
}

/// Rewrite the producer of a relayed memory: its writes to parameter `pi`
/// become stream writes. Returns the loops and subscripts that define the
/// write order.
fn rewrite_producer(
    m: &mut IrModule,
    fname: &str,
    pi: usize,
    depth: u64,
) -> Result<(Vec<(String, u64)>, Vec<Expr>)> {
    let f = m.func_mut(fname).unwrap();
    let pname = f.params[pi].name.clone();
    let elem = f.params[pi].ty.elem;
    let stores = stores_with_chains(&f.body, &pname);
    if stores.len() != 1 {
        return Err(err(format!(
            "`{pname}` must be written by exactly one statement in `{fname}` to become a stream \
             (found {})",
            stores.len()
        )));
    }
    let (chain, op, ix) = stores.into_iter().next().unwrap();
    let mut used = HashSet::new();
    for e in &ix {
        expr_vars(e, &mut used);
    }
    let seq_loops: Vec<(String, u64)>;
    match op {
        AccOp::Set => {
            // Every iteration emits one element: write through in place.
            replace_store_stmt(&mut f.body, &pname, &mut |a| {
                Stmt::Assign(Assign {
                    dst: LRef::Stream { stream: pname.clone(), indices: Vec::new() },
                    op: AccOp::Set,
                    value: a.value,
                })
            });
            seq_loops = chain.iter().map(|(_, v, e)| (v.clone(), *e)).collect();
        }
        AccOp::Add => {
            // Collapse the reduction below the deepest subscript loop into
            // a scalar accumulator, then emit one element per result.
            let j = chain.iter().rposition(|(_, v, _)| used.contains(v));
            let red_pos = j.map(|j| j + 1).unwrap_or(0);
            if red_pos >= chain.len() {
                return Err(err(format!(
                    "the accumulation into `{pname}` in `{fname}` has no reduction loop to \
                     collapse into a stream"
                )));
            }
            let red_name = chain[red_pos].0.clone();
            let mut taken: HashSet<String> =
                f.decls().map(|d| d.name.clone()).collect();
            let acc = uniq(format!("{pname}_acc"), &mut taken);
            f.locals.push(Decl::memory(acc.clone(), TensorType::scalar(elem)));
            replace_store_stmt(&mut f.body, &pname, &mut |a| {
                Stmt::Assign(Assign {
                    dst: LRef::Mem { mem: acc.clone(), indices: Vec::new() },
                    op: AccOp::Add,
                    value: a.value,
                })
            });
            let rpath = loop_path(&f.body, &red_name).unwrap();
            let ridx = *rpath.last().unwrap();
            let list = stmts_at_mut(&mut f.body, &rpath);
            list.insert(
                ridx,
                Stmt::Assign(Assign {
                    dst: LRef::Mem { mem: acc.clone(), indices: Vec::new() },
                    op: AccOp::Set,
                    value: zero_const(elem),
                }),
            );
            list.insert(
                ridx + 2,
                Stmt::Assign(Assign {
                    dst: LRef::Stream { stream: pname.clone(), indices: Vec::new() },
                    op: AccOp::Set,
                    value: Expr::Load { mem: acc, indices: Vec::new() },
                }),
            );
            seq_loops = chain[..red_pos].iter().map(|(_, v, e)| (v.clone(), *e)).collect();
        }
        AccOp::Sub | AccOp::Mul => {
            return Err(err(format!(
                "only `=` and `+=` stores to `{pname}` can feed a stream"
            )));
        }
    }
    let p = &mut f.params[pi];
    p.ty.shape = Vec::new();
    p.storage = Storage::Stream { depth };
    p.layout = PartitionType::top(0);
    Ok((seq_loops, ix))
}

/// Rewrite the consumer of a relayed memory: its reads of parameter `pi`
/// are hoisted to one stream read per element. Returns the loops and
/// subscripts that define the read order.
fn rewrite_consumer(
    m: &mut IrModule,
    fname: &str,
    pi: usize,
    depth: u64,
) -> Result<(Vec<(String, u64)>, Vec<Expr>)> {
    let f = m.func_mut(fname).unwrap();
    let pname = f.params[pi].name.clone();
    let elem = f.params[pi].ty.elem;
    let loads = loads_with_chains(&f.body, &pname);
    if loads.is_empty() {
        return Err(err(format!("`{pname}` is never read in `{fname}`")));
    }
    let ix0 = loads[0].1.clone();
    if loads.iter().any(|(_, ix)| *ix != ix0) {
        return Err(err(format!(
            "`{pname}` must be read with a single subscript pattern in `{fname}` to become a \
             stream"
        )));
    }
    // Common enclosing nest of every read.
    let mut common: Chain = loads[0].0.clone();
    for (chain, _) in &loads[1..] {
        let keep = common
            .iter()
            .zip(chain.iter())
            .take_while(|(a, b)| a.0 == b.0)
            .count();
        common.truncate(keep);
    }
    let mut used = HashSet::new();
    for e in &ix0 {
        expr_vars(e, &mut used);
    }
    let common_vars: HashSet<&String> = common.iter().map(|(_, v, _)| v).collect();
    if used.iter().any(|v| !common_vars.contains(v)) {
        return Err(err(format!(
            "reads of `{pname}` in `{fname}` depend on loops outside their common nest"
        )));
    }
    let jmax = common.iter().rposition(|(_, v, _)| used.contains(v));
    let hoist_count = jmax.map(|j| j + 1).unwrap_or(0);
    let mut taken: HashSet<String> = f.decls().map(|d| d.name.clone()).collect();
    let val = uniq(format!("{pname}_val"), &mut taken);
    f.locals.push(Decl::memory(val.clone(), TensorType::scalar(elem)));
    let read = Stmt::Assign(Assign {
        dst: LRef::Mem { mem: val.clone(), indices: Vec::new() },
        op: AccOp::Set,
        value: Expr::StreamRead { stream: pname.clone(), indices: Vec::new() },
    });
    if hoist_count == 0 {
        f.body.insert(0, read);
    } else {
        let hoist_name = common[hoist_count - 1].0.clone();
        let hpath = loop_path(&f.body, &hoist_name).unwrap();
        let list = stmts_at_mut(&mut f.body, &hpath);
        let Stmt::For(l) = &mut list[*hpath.last().unwrap()] else { unreachable!() };
        l.body.insert(0, read);
    }
    map_loads(&mut f.body, &pname, &mut |_| Expr::Load {
        mem: val.clone(),
        indices: Vec::new(),
    });
    let p = &mut f.params[pi];
    p.ty.shape = Vec::new();
    p.storage = Storage::Stream { depth };
    p.layout = PartitionType::top(0);
    let seq: Vec<(String, u64)> = common[..hoist_count]
        .iter()
        .map(|(_, v, e)| (v.clone(), *e))
        .collect();
    Ok((seq, ix0))
}

fn relay(m: &mut IrModule, func: &str, mem: &str, depth: u64) -> Result<()> {
    if depth == 0 {
        return Err(err("stream depth must be at least 1"));
    }
    let roles = dfg::param_roles_syntactic(m);
    let f = m.expect_func(func)?;
    let d = f
        .decl(mem)
        .ok_or_else(|| err(format!("no memory named `{mem}` in `{func}`")))?;
    if !matches!(d.storage, Storage::Memory) {
        return Err(err(format!("`{mem}` is already a stream")).with_rule("relay-duplicate"));
    }
    if !f.locals.iter().any(|l| l.name == mem) {
        return Err(err(format!(
            "only local buffers of `{func}` can be relayed; `{mem}` is part of its interface"
        )));
    }
    let shape = d.ty.shape.clone();
    let mut accs = Vec::new();
    collect_accesses(&f.body, mem, &mut accs);
    if !accs.is_empty() {
        return Err(err(format!(
            "cannot relay `{mem}`: `{func}` accesses it directly"
        )));
    }
    // Identify the single producer and consumer stage.
    let mut writer: Option<(String, usize, usize)> = None;
    let mut reader: Option<(String, usize, usize)> = None;
    let mut seq = 0usize;
    let mut failure: Option<Diag> = None;
    f.walk(&mut |s| {
        if let Stmt::Call(c) = s {
            seq += 1;
            if c.dst.as_deref() == Some(mem) && failure.is_none() {
                failure = Some(err(
                    "relay through result bindings is not supported; pass the buffer as an \
                     argument",
                ));
            }
            for (ai, a) in c.args.iter().enumerate() {
                if a.mem != mem {
                    continue;
                }
                if !a.prefix.is_empty() {
                    if failure.is_none() {
                        failure = Some(err(format!("cannot relay the sliced argument `{mem}`")));
                    }
                    continue;
                }
                let pname = m
                    .func(&c.callee)
                    .and_then(|cf| cf.params.get(ai))
                    .map(|p| p.name.clone())
                    .unwrap_or_default();
                let (r, w) = roles
                    .get(&(c.callee.clone(), pname))
                    .copied()
                    .unwrap_or((true, true));
                if r && w && failure.is_none() {
                    failure = Some(err(format!(
                        "`{}` both reads and writes `{mem}`; relays need one producer and one \
                         consumer",
                        c.callee
                    )));
                }
                if w {
                    if writer.is_some() && failure.is_none() {
                        failure =
                            Some(err(format!("more than one stage writes `{mem}` in `{func}`")));
                    }
                    writer = Some((c.callee.clone(), ai, seq));
                }
                if r && !w {
                    if reader.is_some() && failure.is_none() {
                        failure =
                            Some(err(format!("more than one stage reads `{mem}` in `{func}`")));
                    }
                    reader = Some((c.callee.clone(), ai, seq));
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let (wname, wpi, wseq) =
        writer.ok_or_else(|| err(format!("no stage writes `{mem}` in `{func}`")))?;
    let (rname, rpi, rseq) =
        reader.ok_or_else(|| err(format!("no stage reads `{mem}` in `{func}`")))?;
    if wseq >= rseq {
        return Err(err(format!(
            "the producer of `{mem}` must run before its consumer in `{func}`"
        )));
    }
    for callee in [&wname, &rname] {
        if count_calls(m, callee) != 1 {
            return Err(err(format!(
                "cannot relay through `{callee}`: it has multiple call sites"
            )));
        }
    }

    let (pseq, pix) = rewrite_producer(m, &wname, wpi, depth)?;
    let (cseq, cix) = rewrite_consumer(m, &rname, rpi, depth)?;

    let f = m.func_mut(func).unwrap();
    let dd = f.decl_mut(mem).unwrap();
    dd.ty.shape = Vec::new();
    dd.storage = Storage::Stream { depth };
    dd.layout = PartitionType::top(0);
    f.dataflow = true;

    // Static order check: the producer must emit elements in exactly the
    // order the consumer expects.
    match (enum_sequence(&pseq, &pix, &shape), enum_sequence(&cseq, &cix, &shape)) {
        (Some(p), Some(c)) => {
            if p.len() != c.len() {
                return Err(err(format!(
                    "stream `{mem}` carries {} values from `{wname}` but `{rname}` reads {}",
                    p.len(),
                    c.len()
                ))
                .with_rule("stream-order-violation"));
            }
            if let Some(i) = p.iter().zip(&c).position(|(a, b)| a != b) {
                return Err(err(format!(
                    "stream `{mem}` is written and read in different orders: at position {i} \
                     `{wname}` writes element {} but `{rname}` reads element {}",
                    fmt_elem(&shape, p[i]),
                    fmt_elem(&shape, c[i])
                ))
                .with_rule("stream-order-violation"));
            }
        }
        _ => {
            crate::diag::log(
                crate::diag::LogLevel::Info,
                &format!("relay of `{mem}`: order check skipped (sequence not static)"),
            );
        }
    }
    Ok(())
}

/// Path to the statement (not necessarily a loop) containing a load of `mem`.
fn stmt_path_with_load(stmts: &[Stmt], mem: &str) -> Option<Vec<usize>> {
    for (i, s) in stmts.iter().enumerate() {
        let mut ixs = Vec::new();
        match s {
            Stmt::Assign(a) => {
                let indices = match &a.dst {
                    LRef::Mem { indices, .. } | LRef::Stream { indices, .. } => indices,
                };
                for ix in indices {
                    loads_in_expr(ix, mem, &mut ixs);
                }
                loads_in_expr(&a.value, mem, &mut ixs);
            }
            Stmt::Call(c) => {
                for a in &c.args {
                    for p in &a.prefix {
                        loads_in_expr(p, mem, &mut ixs);
                    }
                }
            }
            Stmt::For(_) => {}
        }
        if !ixs.is_empty() {
            return Some(vec![i]);
        }
        if let Stmt::For(l) = s {
            if let Some(mut rest) = stmt_path_with_load(&l.body, mem) {
                let mut p = vec![i];
                p.append(&mut rest);
                return Some(p);
            }
        }
    }
    None
}

fn relay_grid(
    m: &mut IrModule,
    func: &str,
    mem: &str,
    band: &str,
    axis: usize,
    depth: u64,
) -> Result<()> {
    if depth == 0 {
        return Err(err("stream depth must be at least 1"));
    }
    let fpos = m
        .funcs
        .iter()
        .position(|f| f.name == func)
        .ok_or_else(|| err(format!("schedule targets unknown function `{func}`")))?;
    let (u, decl) = {
        let f = &m.funcs[fpos];
        let u = f
            .unfolds
            .iter()
            .find(|u| u.band == band)
            .ok_or_else(|| err(format!("band `{band}` has not been unfolded in `{func}`")))?
            .clone();
        let d = f
            .decl(mem)
            .ok_or_else(|| err(format!("no memory named `{mem}` in `{func}`")))?
            .clone();
        (u, d)
    };
    if u.vars.len() != 2 {
        return Err(err("grid relay requires a two-dimensional unfolded band"));
    }
    if axis >= 2 {
        return Err(err(format!("band `{band}` has no axis {axis}")));
    }
    if !matches!(decl.storage, Storage::Memory) {
        return Err(err(format!("`{mem}` is already a stream")).with_rule("relay-duplicate"));
    }
    // Analyze the pre-unfold band body.
    if !stores_with_chains(&u.body, mem).is_empty() {
        return Err(err(format!(
            "the band writes `{mem}`; only band inputs can be relayed along an axis"
        )));
    }
    let loads = loads_with_chains(&u.body, mem);
    if loads.is_empty() {
        return Err(err(format!("`{mem}` is not read by band `{band}`")));
    }
    let (chain0, ix0) = loads[0].clone();
    if loads.iter().any(|(c, ix)| *c != chain0 || *ix != ix0) {
        return Err(err(format!(
            "`{mem}` must be read at a single site in band `{band}` to relay it"
        )));
    }
    let axis_var = &u.vars[axis];
    if ix0.iter().any(|e| expr_uses_var(e, axis_var)) {
        return Err(err(format!(
            "`{mem}` is subscripted by the relayed axis variable `{axis_var}`; every element \
             would differ along the axis, so there is nothing to forward"
        )));
    }
    let other_var = u.vars[1 - axis].clone();
    let ax_e = u.extents[axis];
    let other_e = u.extents[1 - axis];
    let elem = decl.ty.elem;

    let mut taken_loops = all_loop_names(&m.funcs[fpos]);
    let mut taken_decls: HashSet<String> =
        m.funcs[fpos].decls().map(|d| d.name.clone()).collect();
    let fifo = uniq(format!("{mem}_fifo"), &mut taken_decls);
    let drain = uniq(format!("{mem}_drain"), &mut taken_decls);

    // Feeder: iterate the in-band load loops outermost, the grid rows
    // innermost, pushing into each row's first FIFO column.
    let feed_chain: Vec<(String, String, u64)> = chain0
        .iter()
        .map(|(_, v, e)| {
            let n = uniq(format!("{mem}_load_{v}"), &mut taken_loops);
            (v.clone(), n, *e)
        })
        .collect();
    let feed_other = uniq(format!("{mem}_load_{other_var}"), &mut taken_loops);
    let mut feed_ix = ix0.clone();
    for e in &mut feed_ix {
        subst_expr(e, &other_var, &Expr::Var(feed_other.clone()));
        for (v, n, _) in &feed_chain {
            subst_expr(e, v, &Expr::Var(n.clone()));
        }
    }
    let feed_body = vec![Stmt::Assign(Assign {
        dst: LRef::Stream {
            stream: fifo.clone(),
            indices: vec![Expr::Var(feed_other.clone()), Expr::index(0)],
        },
        op: AccOp::Set,
        value: Expr::Load { mem: mem.to_string(), indices: feed_ix },
    })];
    let mut feed_loops: Vec<(String, u64)> =
        feed_chain.iter().map(|(_, n, e)| (n.clone(), *e)).collect();
    feed_loops.push((feed_other, other_e));
    let feeder = nest(&feed_loops, feed_body);

    // Drain: consume what the last column forwards.
    let drain_other = uniq(format!("{mem}_drain_{other_var}"), &mut taken_loops);
    let drain_chain: Vec<(String, u64)> = chain0
        .iter()
        .map(|(_, v, e)| (uniq(format!("{mem}_drain_{v}"), &mut taken_loops), *e))
        .collect();
    let drain_body = vec![Stmt::Assign(Assign {
        dst: LRef::Mem { mem: drain.clone(), indices: vec![Expr::Var(drain_other.clone())] },
        op: AccOp::Set,
        value: Expr::StreamRead {
            stream: fifo.clone(),
            indices: vec![Expr::Var(drain_other.clone()), Expr::index(ax_e)],
        },
    })];
    let mut drain_loops: Vec<(String, u64)> = vec![(drain_other, other_e)];
    drain_loops.extend(drain_chain);
    let drainer = nest(&drain_loops, drain_body);

    // Rewrite every clone: the memory parameter becomes an input stream
    // plus a forwarding output stream.
    for (ci, cname) in u.clones.iter().enumerate() {
        let coords = [ci as u64 / u.extents[1], ci as u64 % u.extents[1]];
        let c = m
            .func_mut(cname)
            .ok_or_else(|| Diag::internal(format!("unfolded clone `{cname}` is missing")))?;
        let pi = c
            .params
            .iter()
            .position(|p| p.name == mem)
            .ok_or_else(|| Diag::internal(format!("clone `{cname}` lost parameter `{mem}`")))?;
        let in_name = format!("{mem}_in");
        let out_name = format!("{mem}_out");
        c.params[pi] = Decl {
            name: in_name.clone(),
            ty: TensorType::scalar(elem),
            layout: PartitionType::top(0),
            storage: Storage::Stream { depth },
        };
        c.params.insert(
            pi + 1,
            Decl {
                name: out_name.clone(),
                ty: TensorType::scalar(elem),
                layout: PartitionType::top(0),
                storage: Storage::Stream { depth },
            },
        );
        let val = format!("{mem}_v");
        c.locals.push(Decl::memory(val.clone(), TensorType::scalar(elem)));
        let path = stmt_path_with_load(&c.body, mem)
            .ok_or_else(|| Diag::internal(format!("clone `{cname}` no longer reads `{mem}`")))?;
        let idx = *path.last().unwrap();
        let list = stmts_at_mut(&mut c.body, &path);
        list.insert(
            idx,
            Stmt::Assign(Assign {
                dst: LRef::Mem { mem: val.clone(), indices: Vec::new() },
                op: AccOp::Set,
                value: Expr::StreamRead { stream: in_name, indices: Vec::new() },
            }),
        );
        list.insert(
            idx + 1,
            Stmt::Assign(Assign {
                dst: LRef::Stream { stream: out_name, indices: Vec::new() },
                op: AccOp::Set,
                value: Expr::Load { mem: val.clone(), indices: Vec::new() },
            }),
        );
        map_loads(&mut c.body, mem, &mut |_| Expr::Load {
            mem: val.clone(),
            indices: Vec::new(),
        });
        let _ = coords;
    }

    // Rewrite the parent's call arguments and place the feeder and drain.
    let f = &mut m.funcs[fpos];
    let clone_set: HashMap<&str, usize> =
        u.clones.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    fn call_paths(stmts: &[Stmt], set: &HashMap<&str, usize>, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for (i, s) in stmts.iter().enumerate() {
            match s {
                Stmt::Call(c) if set.contains_key(c.callee.as_str()) => {
                    path.push(i);
                    out.push(path.clone());
                    path.pop();
                }
                Stmt::For(l) => {
                    path.push(i);
                    call_paths(&l.body, set, path, out);
                    path.pop();
                }
                _ => {}
            }
        }
    }
    let mut paths = Vec::new();
    call_paths(&f.body, &clone_set, &mut Vec::new(), &mut paths);
    if paths.is_empty() {
        return Err(Diag::internal("unfolded clones are never called"));
    }
    if paths
        .iter()
        .any(|p| p[..p.len() - 1] != paths[0][..paths[0].len() - 1])
    {
        return Err(Diag::internal("unfolded clone calls are scattered across nests"));
    }
    let list = stmts_at_mut(&mut f.body, &paths[0]);
    for p in &paths {
        let Stmt::Call(c) = &mut list[*p.last().unwrap()] else { unreachable!() };
        let ci = clone_set[c.callee.as_str()];
        let coords = [ci as u64 / u.extents[1], ci as u64 % u.extents[1]];
        let a = coords[axis];
        let o = coords[1 - axis];
        let ai = c
            .args
            .iter()
            .position(|x| x.mem == mem)
            .ok_or_else(|| Diag::internal(format!("call to `{}` lost argument `{mem}`", c.callee)))?;
        c.args[ai] = ArgRef { mem: fifo.clone(), prefix: vec![Expr::index(o), Expr::index(a)] };
        c.args.insert(
            ai + 1,
            ArgRef { mem: fifo.clone(), prefix: vec![Expr::index(o), Expr::index(a + 1)] },
        );
    }
    let first = *paths.first().unwrap().last().unwrap();
    let last = *paths.last().unwrap().last().unwrap();
    for (off, s) in drainer.into_iter().enumerate() {
        list.insert(last + 1 + off, s);
    }
    for (off, s) in feeder.into_iter().enumerate() {
        list.insert(first + off, s);
    }
    f.locals.push(Decl {
        name: fifo,
        ty: TensorType { elem, shape: vec![other_e, ax_e + 1] },
        layout: PartitionType::top(2),
        storage: Storage::Stream { depth },
    });
    f.locals.push(Decl::memory(drain, TensorType { elem, shape: vec![other_e] }));
    f.dataflow = true;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::compile_source;
    use crate::sim;

    const GEMM8: &str = "\
def gemm(A: int32[8, 8], B: int32[8, 8], C: int32[8, 8]):
    for i in range(8):
        for j in range(8):
            for k in range(8):
                C[i, j] += A[i, k] * B[k, j]
";

    fn gemm8() -> (IrModule, Schedule) {
        let m = compile_source("gemm.adl", GEMM8).unwrap();
        let s = Schedule::customize(&m, "gemm").unwrap();
        (m, s)
    }

    fn assert_equiv(a: &IrModule, b: &IrModule, f: &str) {
        sim::equivalent(a, f, b, f, 5, 0x5EED).unwrap();
    }

    fn loop_order(f: &IrFunc) -> Vec<String> {
        let mut out = Vec::new();
        f.walk_loops(&mut |l| out.push(l.name.clone()));
        out
    }

    #[test]
    fn split_divides_and_renames() {
        let (m, mut s) = gemm8();
        s.split("k", 4).unwrap();
        let f = s.program().func("gemm").unwrap();
        let outer = f.find_loop("k.outer").unwrap();
        let inner = f.find_loop("k.inner").unwrap();
        assert_eq!(outer.extent, 2);
        assert_eq!(inner.extent, 4);
        assert!(f.find_loop("k").is_none());
        assert_equiv(&m, s.program(), "gemm");
    }

    #[test]
    fn split_rejects_nondivisor_and_rolls_back() {
        let (_, mut s) = gemm8();
        let before = s.program().render();
        let e = s.split("k", 3).unwrap_err();
        assert!(e.to_string().contains("does not divide"), "{e}");
        assert_eq!(s.program().render(), before);
        assert!(s.records().is_empty());
    }

    #[test]
    fn reorder_swaps_loop_chain() {
        let (m, mut s) = gemm8();
        s.reorder(&["k", "j"]).unwrap();
        let f = s.program().func("gemm").unwrap();
        assert_eq!(loop_order(f), ["i", "k", "j"]);
        assert_equiv(&m, s.program(), "gemm");
    }

    #[test]
    fn reorder_requires_perfect_nesting() {
        let src = "\
def f(A: int32[4, 4]):
    for i in range(4):
        A[i, 0] = 0
        for j in range(4):
            A[i, j] += 1
";
        let m = compile_source("f.adl", src).unwrap();
        let mut s = Schedule::customize(&m, "f").unwrap();
        let e = s.reorder(&["j", "i"]).unwrap_err();
        assert!(e.to_string().contains("perfectly nested"), "{e}");
    }

    #[test]
    fn fuse_merges_extents() {
        let (m, mut s) = gemm8();
        s.fuse("i", "j").unwrap();
        let f = s.program().func("gemm").unwrap();
        let fused = f.find_loop("i.j.fused").unwrap();
        assert_eq!(fused.extent, 64);
        assert_equiv(&m, s.program(), "gemm");
    }

    #[test]
    fn unroll_and_pipeline_set_attributes() {
        let (_, mut s) = gemm8();
        s.unroll("j", 4).unwrap();
        s.pipeline("k", 1).unwrap();
        let text = s.program().render();
        assert!(text.contains("unroll=4"), "{text}");
        assert!(text.contains("pipeline=1"), "{text}");
        assert!(s.unroll("j", 1).is_err());
    }

    #[test]
    fn partition_meets_existing_layout() {
        let (_, mut s) = gemm8();
        s.partition("B", 1, PartitionBase::Cyclic(2)).unwrap();
        let layout = |s: &Schedule| {
            s.program().func("gemm").unwrap().decl("B").unwrap().layout.0[1]
        };
        assert_eq!(layout(&s), PartitionBase::Cyclic(2));
        // A conflicting request resolves downward in the lattice.
        s.partition("B", 1, PartitionBase::Block(2)).unwrap();
        assert_eq!(layout(&s), PartitionBase::Complete);
        let e = s.partition("B", 0, PartitionBase::Cyclic(3)).unwrap_err();
        assert_eq!(e.rule.as_deref(), Some("illegal-factor"));
    }

    #[test]
    fn buffer_at_row_inserts_init_and_writeback() {
        let (m, mut s) = gemm8();
        s.buffer_at("C", "i", None).unwrap();
        let f = s.program().func("gemm").unwrap();
        let buf = f.decl("C_buf").unwrap();
        assert_eq!(buf.ty.shape, vec![8]);
        assert!(f.find_loop("j_init").is_some());
        assert!(f.find_loop("j_back").is_some());
        assert_equiv(&m, s.program(), "gemm");
    }

    #[test]
    fn buffer_at_innermost_yields_scalar() {
        let (m, mut s) = gemm8();
        s.buffer_at("C", "j", None).unwrap();
        let f = s.program().func("gemm").unwrap();
        assert!(f.decl("C_buf").unwrap().ty.shape.is_empty());
        assert_equiv(&m, s.program(), "gemm");
    }

    #[test]
    fn reuse_builds_line_buffer_and_reads_each_element_once() {
        let src = "\
def blur(A: int32[10], B: int32[8]):
    for i in range(8):
        B[i] = A[i] + A[i + 1] + A[i + 2]
";
        let m = compile_source("blur.adl", src).unwrap();
        let mut s = Schedule::customize(&m, "blur").unwrap();
        s.reuse_at("A", "i", Some("lb")).unwrap();
        let f = s.program().func("blur").unwrap();
        assert_eq!(f.decl("lb").unwrap().ty.shape, vec![3]);
        assert_equiv(&m, s.program(), "blur");

        let args = vec![
            sim::TensorValue::from_i64s(
                crate::types::TensorType { elem: ElemType::Int(32), shape: vec![10] },
                &(0..10).collect::<Vec<_>>(),
            ),
            sim::TensorValue::zero(crate::types::TensorType {
                elem: ElemType::Int(32),
                shape: vec![8],
            }),
        ];
        let before = sim::run(&m, "blur", &args).unwrap();
        let after = sim::run(s.program(), "blur", &args).unwrap();
        assert_eq!(before.arg_reads[0], 24);
        assert_eq!(after.arg_reads[0], 10);
    }

    #[test]
    fn reuse_twice_builds_window_buffer() {
        let src = "\
def jac(A: float32[8, 8], B: float32[8, 8]):
    for i in range(6):
        for j in range(6):
            B[i + 1, j + 1] = A[i, j + 1] + A[i + 1, j] + A[i + 1, j + 1] + A[i + 1, j + 2] + A[i + 2, j + 1]
";
        let m = compile_source("jac.adl", src).unwrap();
        let mut s = Schedule::customize(&m, "jac").unwrap();
        s.reuse_at("A", "i", Some("lb")).unwrap();
        s.reuse_at("lb", "j", Some("wb")).unwrap();
        let f = s.program().func("jac").unwrap();
        assert_eq!(f.decl("lb").unwrap().ty.shape, vec![3, 8]);
        assert_eq!(f.decl("wb").unwrap().ty.shape, vec![3, 3]);
        assert_equiv(&m, s.program(), "jac");
    }

    const PE4: &str = "\
def pe4(A: int8[2, 4], B: int8[4, 2], C: int16[2, 2]):
    for i, j in grid(2, 2, name=\"pe\"):
        for k in range(4):
            C[i, j] += A[i, k] * B[k, j]
";

    #[test]
    fn unfold_clones_every_coordinate() {
        let m = compile_source("pe4.adl", PE4).unwrap();
        let mut s = Schedule::customize(&m, "pe4").unwrap();
        s.unfold("pe", &[0, 1]).unwrap();
        let p = s.program();
        for name in ["pe4_0_0", "pe4_0_1", "pe4_1_0", "pe4_1_1"] {
            assert!(p.func(name).is_some(), "missing {name}");
        }
        let calls = p.func("pe4").unwrap().body.len();
        assert_eq!(calls, 4);
        assert!(p.render().contains("C[1, 0]"));
        assert_equiv(&m, p, "pe4");
    }

    #[test]
    fn unfold_rejects_overlapping_writes() {
        let src = "\
def f(A: int8[2, 4], C: int16[2, 2]):
    for i, j in grid(2, 2, name=\"pe\"):
        for k in range(4):
            C[i, 0] += A[i, k]
";
        let m = compile_source("f.adl", src).unwrap();
        let mut s = Schedule::customize(&m, "f").unwrap();
        let e = s.unfold("pe", &[0, 1]).unwrap_err();
        assert_eq!(e.rule.as_deref(), Some("unfold-overlap"));
    }

    const TWO_STAGE: &str = "\
def prod(A: int32[4, 4], T: int32[4, 4]):
    for i in range(4):
        for j in range(4):
            T[i, j] = A[i, j] + 1

def cons(T: int32[4, 4], B: int32[4, 4]):
    for i in range(4):
        for j in range(4):
            B[i, j] = T[i, j] * 2

def top(A: int32[4, 4], B: int32[4, 4]):
    T: int32[4, 4]
    prod(A, T)
    cons(T, B)
";

    #[test]
    fn relay_turns_memory_into_stream() {
        let m = compile_source("t.adl", TWO_STAGE).unwrap();
        let mut s = Schedule::customize(&m, "top").unwrap();
        s.relay("T", 2).unwrap();
        // Deferred until build.
        assert!(s.records().is_empty());
        s.build().unwrap();
        let f = s.program().func("top").unwrap();
        assert!(f.dataflow);
        assert!(matches!(
            f.decl("T").unwrap().storage,
            Storage::Stream { depth: 2 }
        ));
        assert_equiv(&m, s.program(), "top");
        let args = vec![
            sim::TensorValue::from_i64s(
                crate::types::TensorType { elem: ElemType::Int(32), shape: vec![4, 4] },
                &(0..16).collect::<Vec<_>>(),
            ),
            sim::TensorValue::zero(crate::types::TensorType {
                elem: ElemType::Int(32),
                shape: vec![4, 4],
            }),
        ];
        let (_, report) = sim::run_dataflow(s.program(), "top", &args, 10_000).unwrap();
        assert!(!report.deadlocked);
    }

    #[test]
    fn relay_rejects_second_conversion() {
        let m = compile_source("t.adl", TWO_STAGE).unwrap();
        let mut s = Schedule::customize(&m, "top").unwrap();
        s.relay("T", 2).unwrap();
        let e = s.relay("T", 4).unwrap_err();
        assert_eq!(e.rule.as_deref(), Some("relay-duplicate"));
    }

    const TWO_MM: &str = "\
def mm1(A: int32[4, 4], B: int32[4, 4], C: int32[4, 4]):
    for i in range(4):
        for j in range(4):
            for k in range(4):
                C[i, j] += A[i, k] * B[k, j]

def mm2(C: int32[4, 4], D: int32[4, 4], E: int32[4, 4]):
    for i in range(4):
        for j in range(4):
            for k in range(4):
                E[i, j] += C[i, k] * D[k, j]

def top2(A: int32[4, 4], B: int32[4, 4], D: int32[4, 4], E: int32[4, 4]):
    C: int32[4, 4]
    mm1(A, B, C)
    mm2(C, D, E)
";

    /// Reorder `mm2` so it consumes `C[i, k]` exactly once per element,
    /// with the unrelated `j` loop innermost. Required before `C` can
    /// become a stream: in the original order every row is re-read.
    fn reorder_consumer(m: &mut IrModule) {
        apply_record(
            m,
            &Record {
                func: "mm2".into(),
                prim: Prim::Reorder { loops: vec!["k".into(), "j".into()] },
                batch: 0,
            },
        )
        .unwrap();
    }

    #[test]
    fn relay_collapses_accumulation() {
        let mut m = compile_source("t.adl", TWO_MM).unwrap();
        reorder_consumer(&mut m);
        let mut s = Schedule::customize(&m, "top2").unwrap();
        s.relay("C", 2).unwrap();
        s.build().unwrap();
        let text = s.program().render();
        assert!(text.contains("C_acc"), "{text}");
        assert!(text.contains("C_val"), "{text}");
        assert_equiv(&m, s.program(), "top2");
    }

    #[test]
    fn relay_rejects_rereading_consumer() {
        // Without the consumer reorder, `mm2` would read 64 stream values
        // while `mm1` only writes 16.
        let m = compile_source("t.adl", TWO_MM).unwrap();
        let mut s = Schedule::customize(&m, "top2").unwrap();
        s.relay("C", 2).unwrap();
        let e = s.build().unwrap_err();
        assert_eq!(e.rule.as_deref(), Some("stream-order-violation"));
        assert!(e.to_string().contains("reads 64"), "{e}");
    }

    #[test]
    fn relay_detects_order_violation() {
        let mut m = compile_source("t.adl", TWO_MM).unwrap();
        reorder_consumer(&mut m);
        // A column-major producer cannot feed a row-major consumer.
        apply_record(
            &mut m,
            &Record {
                func: "mm1".into(),
                prim: Prim::Reorder { loops: vec!["j".into(), "i".into()] },
                batch: 0,
            },
        )
        .unwrap();
        let mut s = Schedule::customize(&m, "top2").unwrap();
        s.relay("C", 2).unwrap();
        let e = s.build().unwrap_err();
        assert_eq!(e.rule.as_deref(), Some("stream-order-violation"));
        assert!(e.to_string().contains("different orders"), "{e}");
    }

    #[test]
    fn relay_grid_builds_forwarding_fifos() {
        let m = compile_source("pe4.adl", PE4).unwrap();
        let mut s = Schedule::customize(&m, "pe4").unwrap();
        s.unfold("pe", &[0, 1]).unwrap();
        s.relay_grid("A", "pe", 1, 3).unwrap();
        s.relay_grid("B", "pe", 0, 3).unwrap();
        s.build().unwrap();
        let p = s.program();
        let f = p.func("pe4").unwrap();
        assert_eq!(f.decl("A_fifo").unwrap().ty.shape, vec![2, 3]);
        assert_eq!(f.decl("B_fifo").unwrap().ty.shape, vec![2, 3]);
        assert!(f.dataflow);
        let pe = p.func("pe4_0_1").unwrap();
        assert!(pe.decl("A_in").is_some());
        assert!(pe.decl("A_out").is_some());
        assert_equiv(&m, p, "pe4");
        let args: Vec<sim::TensorValue> = p
            .func("pe4")
            .unwrap()
            .params
            .iter()
            .map(|d| sim::TensorValue::zero(d.ty.clone()))
            .collect();
        let (_, report) = sim::run_dataflow(p, "pe4", &args, 100_000).unwrap();
        assert!(!report.deadlocked);
    }

    #[test]
    fn replay_reproduces_built_program() {
        let m = compile_source("pe4.adl", PE4).unwrap();
        let mut s = Schedule::customize(&m, "pe4").unwrap();
        s.unfold("pe", &[0, 1]).unwrap();
        s.partition("C", 0, PartitionBase::Complete).unwrap();
        s.relay_grid("A", "pe", 1, 3).unwrap();
        s.build().unwrap();
        let replayed = replay(s.pristine(), s.records()).unwrap();
        assert_eq!(replayed.render(), s.program().render());
        assert_eq!(s.pristine().render(), m.render());
    }

    #[test]
    fn schedule_hash_is_stable_and_order_sensitive() {
        let (_, mut s1) = gemm8();
        s1.split("k", 4).unwrap();
        s1.pipeline("k.inner", 1).unwrap();
        let (_, mut s2) = gemm8();
        s2.split("k", 4).unwrap();
        s2.pipeline("k.inner", 1).unwrap();
        assert_eq!(s1.schedule_hash(), s2.schedule_hash());
        assert_eq!(s1.schedule_hash().len(), 16);
        let (_, mut s3) = gemm8();
        s3.split("k", 2).unwrap();
        assert_ne!(s1.schedule_hash(), s3.schedule_hash());
    }
}
