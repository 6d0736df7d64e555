//! Functional simulation.
//!
//! Two execution modes share one value model:
//!
//! * [`run`] interprets a function sequentially ("big step"). Memories are
//!   zero-initialized, arrays are passed by reference, arithmetic is exact
//!   until a store converts to the destination element type, and streams act
//!   as unbounded FIFO queues (reading past the end is an error). This is
//!   the reference semantics every schedule must preserve.
//! * [`run_dataflow`] steps the top-level statements of a dataflow function
//!   concurrently, one statement per stage per cycle. Streams have finite
//!   capacity; reads block on empty and writes block on full, and a write
//!   becomes readable by later stages in the same cycle. The returned
//!   [`StallReport`] records per-stream blocking and whether the region
//!   deadlocked.
//!
//! [`equivalent`] performs seeded differential testing between two
//! functions: random inputs, bitwise output comparison. Rewrites never
//! reassociate the per-element reduction order, so even float kernels are
//! compared exactly.

use crate::diag::{Diag, Result};
use crate::ir::{AccOp, ArgRef, Expr, IrFunc, IrModule, LRef, Stmt, Storage};
use crate::types::{BinKind, ElemType, TensorType};
use crate::value::{self, parse_scalar, render_scalar, Scalar};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::rc::Rc;

// ----------------------------------------------------------------------
// Values
// ----------------------------------------------------------------------

/// A dense row-major tensor of scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub ty: TensorType,
    pub data: Vec<Scalar>,
}

impl TensorValue {
    pub fn zero(ty: TensorType) -> TensorValue {
        let n = ty.num_elems() as usize;
        let fill = if ty.elem.is_float() {
            Scalar::Float(0.0)
        } else {
            Scalar::Raw(0)
        };
        TensorValue { ty, data: vec![fill; n] }
    }

    /// Build from raw integer values (test convenience).
    pub fn from_i64s(ty: TensorType, vals: &[i64]) -> TensorValue {
        assert_eq!(ty.num_elems() as usize, vals.len());
        let data = vals
            .iter()
            .map(|&v| value::store_cast(&ty.elem, Scalar::Raw(v as i128), 0))
            .collect();
        TensorValue { ty, data }
    }

    pub fn get(&self, idx: &[u64]) -> Scalar {
        self.data[flatten_u(idx, &self.ty.shape)]
    }

    pub fn set(&mut self, idx: &[u64], s: Scalar) {
        let at = flatten_u(idx, &self.ty.shape);
        self.data[at] = s;
    }
}

fn flatten_u(idx: &[u64], shape: &[u64]) -> usize {
    assert_eq!(idx.len(), shape.len());
    let mut at = 0u64;
    for (i, s) in idx.iter().zip(shape) {
        debug_assert!(i < s);
        at = at * s + i;
    }
    at as usize
}

/// Bitwise scalar equality: floats compare by bit pattern.
pub fn scalar_eq(a: Scalar, b: Scalar) -> bool {
    match (a, b) {
        (Scalar::Raw(x), Scalar::Raw(y)) => x == y,
        (Scalar::Float(x), Scalar::Float(y)) => x.to_bits() == y.to_bits(),
        _ => false,
    }
}

/// Draw a random tensor for differential testing. Floats land in [-1, 1);
/// integer and fixed-point values cover their full representable range.
pub fn random_value<R: Rng>(rng: &mut R, ty: &TensorType) -> TensorValue {
    let n = ty.num_elems() as usize;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(random_scalar(rng, &ty.elem));
    }
    TensorValue { ty: clone_ty(ty), data }
}

fn clone_ty(t: &TensorType) -> TensorType {
    TensorType { elem: t.elem, shape: t.shape.clone() }
}

fn random_scalar<R: Rng>(rng: &mut R, elem: &ElemType) -> Scalar {
    match elem {
        ElemType::Float(_) => {
            let v: f64 = rng.gen_range(-1.0..1.0);
            value::store_cast(elem, Scalar::Float(v), 0)
        }
        ElemType::Index => Scalar::Raw(rng.gen_range(0..256) as i128),
        _ => {
            let w = elem.width();
            let raw: i128 = if w <= 64 {
                let bits: u64 = rng.gen();
                (bits & mask64(w)) as i128
            } else {
                let hi: u64 = rng.gen();
                let lo: u64 = rng.gen();
                let v = ((hi as u128) << 64 | lo as u128) as i128;
                v & ((1i128 << (w.min(127))) - 1).max(1)
            };
            Scalar::Raw(value::normalize(elem, raw))
        }
    }
}

fn mask64(w: u32) -> u64 {
    if w >= 64 {
        u64::MAX
    } else {
        (1u64 << w) - 1
    }
}

// ----------------------------------------------------------------------
// Machine state
// ----------------------------------------------------------------------

struct Mem {
    data: Vec<Scalar>,
    reads: u64,
}

#[derive(Debug, Clone)]
enum Place {
    Mem { id: usize, offset: usize },
    Stream { first: usize },
}

/// A name binding inside one activation: where the data lives plus the view
/// (element type and remaining shape after any slice prefix).
#[derive(Debug, Clone)]
struct Binding {
    place: Place,
    elem: ElemType,
    shape: Vec<u64>,
}

type Scope = HashMap<String, Binding>;

struct Machine<'m> {
    module: &'m IrModule,
    mems: Vec<Mem>,
    queues: Vec<VecDeque<Scalar>>,
    /// Capacity per queue; `u64::MAX` means unbounded (big-step mode).
    caps: Vec<u64>,
    queue_decl: Vec<String>,
    blocked_reads: HashMap<String, u64>,
    blocked_writes: HashMap<String, u64>,
}

impl<'m> Machine<'m> {
    fn new(module: &'m IrModule) -> Machine<'m> {
        Machine {
            module,
            mems: Vec::new(),
            queues: Vec::new(),
            caps: Vec::new(),
            queue_decl: Vec::new(),
            blocked_reads: HashMap::new(),
            blocked_writes: HashMap::new(),
        }
    }

    fn alloc_mem(&mut self, ty: &TensorType) -> usize {
        let fill = if ty.elem.is_float() {
            Scalar::Float(0.0)
        } else {
            Scalar::Raw(0)
        };
        self.mems.push(Mem { data: vec![fill; ty.num_elems() as usize], reads: 0 });
        self.mems.len() - 1
    }

    fn alloc_queues(&mut self, decl_name: &str, ty: &TensorType, depth: u64) -> usize {
        let first = self.queues.len();
        for _ in 0..ty.num_elems().max(1) {
            self.queues.push(VecDeque::new());
            self.caps.push(depth);
            self.queue_decl.push(decl_name.to_string());
        }
        first
    }

    /// Bind a function's own declarations (locals and result) to fresh
    /// zero-initialized storage.
    fn bind_owned(&mut self, f: &IrFunc, scope: &mut Scope, bounded_streams: bool) {
        for d in f.locals.iter().chain(f.result.iter()) {
            let place = match d.storage {
                Storage::Memory => Place::Mem { id: self.alloc_mem(&d.ty), offset: 0 },
                Storage::Stream { depth } => {
                    let cap = if bounded_streams { depth } else { u64::MAX };
                    Place::Stream { first: self.alloc_queues(&d.name, &d.ty, cap) }
                }
            };
            scope.insert(
                d.name.clone(),
                Binding { place, elem: d.ty.elem, shape: d.ty.shape.clone() },
            );
        }
    }
}

/// Loop-variable environment with call-boundary floors.
struct Vars {
    stack: Vec<(String, i128)>,
    floors: Vec<usize>,
}

impl Vars {
    fn new() -> Vars {
        Vars { stack: Vec::new(), floors: vec![0] }
    }

    fn get(&self, name: &str) -> Option<i128> {
        let floor = *self.floors.last().unwrap();
        self.stack[floor..]
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
    }
}

// ----------------------------------------------------------------------
// Expression evaluation (shared by both modes)
// ----------------------------------------------------------------------

fn flatten(name: &str, idx: &[i128], shape: &[u64]) -> Result<usize> {
    if idx.len() != shape.len() {
        return Err(Diag::internal(format!("rank mismatch accessing `{name}`")));
    }
    let mut at: u64 = 0;
    for (i, s) in idx.iter().zip(shape) {
        if *i < 0 || *i >= *s as i128 {
            return Err(Diag::user_nospan(format!(
                "index {i} is out of bounds for dimension of extent {s} accessing `{name}`"
            )));
        }
        at = at * s + *i as u64;
    }
    Ok(at as usize)
}

/// Strides over a full declared shape (used to place slice prefixes).
fn prefix_offset(name: &str, prefix: &[i128], shape: &[u64]) -> Result<usize> {
    let mut at: u64 = 0;
    let mut stride: u64 = shape.iter().product();
    for (i, s) in prefix.iter().zip(shape) {
        stride /= s;
        if *i < 0 || *i >= *s as i128 {
            return Err(Diag::user_nospan(format!(
                "index {i} is out of bounds for dimension of extent {s} slicing `{name}`"
            )));
        }
        at += *i as u64 * stride;
    }
    Ok(at as usize)
}

/// Exact arithmetic mirroring the type-promotion rules. Raw-family values
/// compute in 128-bit integers (aligning fixed-point fraction bits); floats
/// compute in `f64`.
fn arith(op: BinKind, a: (Scalar, ElemType), b: (Scalar, ElemType)) -> Result<(Scalar, ElemType)> {
    let rt = crate::types::promote(op, &a.1, &b.1).map_err(Diag::internal)?;
    if rt.is_float() {
        let (x, y) = (as_f64(a.0), as_f64(b.0));
        let v = match op {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => {
                if y == 0.0 {
                    return Err(Diag::user_nospan("division by zero"));
                }
                x / y
            }
            BinKind::Rem => x % y,
        };
        return Ok((Scalar::Float(v), rt));
    }
    let (xr, yr) = (as_raw(a.0), as_raw(b.0));
    let (fa, fb, fr) = (a.1.frac_bits(), b.1.frac_bits(), rt.frac_bits());
    let overflow = || Diag::user_nospan("arithmetic overflow beyond 128 bits");
    let v = match op {
        BinKind::Add | BinKind::Sub => {
            let x = shl_checked(xr, fr - fa).ok_or_else(overflow)?;
            let y = shl_checked(yr, fr - fb).ok_or_else(overflow)?;
            if op == BinKind::Add {
                x.checked_add(y).ok_or_else(overflow)?
            } else {
                x.checked_sub(y).ok_or_else(overflow)?
            }
        }
        BinKind::Mul => xr.checked_mul(yr).ok_or_else(overflow)?,
        BinKind::Div => {
            if yr == 0 {
                return Err(Diag::user_nospan("division by zero"));
            }
            // Shift the numerator so the quotient carries `fr` fraction bits.
            let shift = fr + fb - fa;
            let num = shl_checked(xr, shift).ok_or_else(overflow)?;
            num.div_euclid(yr)
        }
        BinKind::Rem => {
            if yr == 0 {
                return Err(Diag::user_nospan("division by zero"));
            }
            xr.rem_euclid(yr)
        }
    };
    Ok((Scalar::Raw(v), rt))
}

fn shl_checked(v: i128, by: u32) -> Option<i128> {
    if by == 0 {
        return Some(v);
    }
    v.checked_shl(by).filter(|r| (r >> by) == v)
}

fn as_f64(s: Scalar) -> f64 {
    match s {
        Scalar::Float(v) => v,
        Scalar::Raw(v) => v as f64,
    }
}

fn as_raw(s: Scalar) -> i128 {
    match s {
        Scalar::Raw(v) => v,
        Scalar::Float(v) => v as i128,
    }
}

// ----------------------------------------------------------------------
// Big-step execution
// ----------------------------------------------------------------------

#[derive(Debug)]
pub struct RunOutput {
    /// Post-run contents of the argument arrays (callees may write them).
    pub args: Vec<TensorValue>,
    /// The function result, if it declares one.
    pub result: Option<TensorValue>,
    /// Element reads performed on each argument memory.
    pub arg_reads: Vec<u64>,
}

/// Sequential reference execution.
pub fn run(m: &IrModule, func: &str, args: &[TensorValue]) -> Result<RunOutput> {
    let f = m.expect_func(func)?;
    if args.len() != f.params.len() {
        return Err(Diag::user_nospan(format!(
            "`{func}` takes {} arguments but {} were supplied",
            f.params.len(),
            args.len()
        )));
    }
    let mut machine = Machine::new(m);
    let mut scope = Scope::new();
    let mut arg_mems = Vec::new();
    for (p, a) in f.params.iter().zip(args) {
        if a.ty != p.ty {
            return Err(Diag::user_nospan(format!(
                "argument for `{}` has type {} but {} was expected",
                p.name, a.ty, p.ty
            )));
        }
        if !matches!(p.storage, Storage::Memory) {
            return Err(Diag::user_nospan(format!(
                "top-level stream parameter `{}` cannot be driven directly",
                p.name
            )));
        }
        let id = machine.alloc_mem(&p.ty);
        machine.mems[id].data.copy_from_slice(&a.data);
        arg_mems.push(id);
        scope.insert(
            p.name.clone(),
            Binding {
                place: Place::Mem { id, offset: 0 },
                elem: p.ty.elem,
                shape: p.ty.shape.clone(),
            },
        );
    }
    machine.bind_owned(f, &mut scope, false);
    let mut vars = Vars::new();
    exec_block(&mut machine, &f.body, &scope, &mut vars)?;

    let mut out_args = Vec::new();
    let mut arg_reads = Vec::new();
    for (p, id) in f.params.iter().zip(&arg_mems) {
        out_args.push(TensorValue {
            ty: p.ty.clone(),
            data: machine.mems[*id].data.clone(),
        });
        arg_reads.push(machine.mems[*id].reads);
    }
    let result = f.result.as_ref().map(|r| {
        let b = &scope[&r.name];
        let Place::Mem { id, .. } = b.place else { unreachable!() };
        TensorValue { ty: r.ty.clone(), data: machine.mems[id].data.clone() }
    });
    Ok(RunOutput { args: out_args, result, arg_reads })
}

fn exec_block(mc: &mut Machine, stmts: &[Stmt], scope: &Scope, vars: &mut Vars) -> Result<()> {
    for s in stmts {
        exec_stmt(mc, s, scope, vars)?;
    }
    Ok(())
}

fn exec_stmt(mc: &mut Machine, s: &Stmt, scope: &Scope, vars: &mut Vars) -> Result<()> {
    match s {
        Stmt::For(l) => {
            vars.stack.push((l.var.clone(), 0));
            for i in 0..l.extent {
                vars.stack.last_mut().unwrap().1 = i as i128;
                exec_block(mc, &l.body, scope, vars)?;
            }
            vars.stack.pop();
            Ok(())
        }
        Stmt::Assign(a) => exec_assign(mc, a, scope, vars),
        Stmt::Call(c) => {
            let (callee, inner) = enter_call(mc, c, scope, vars, false)?;
            vars.floors.push(vars.stack.len());
            exec_block(mc, &callee.body, &inner, vars)?;
            vars.floors.pop();
            Ok(())
        }
    }
}

/// Resolve a call: build the callee's scope (binding parameters to argument
/// places and allocating owned storage) and return it with the callee.
fn enter_call<'m>(
    mc: &mut Machine<'m>,
    c: &crate::ir::CallStmt,
    scope: &Scope,
    vars: &mut Vars,
    bounded_streams: bool,
) -> Result<(&'m IrFunc, Scope)> {
    let callee = mc.module.expect_func(&c.callee)?;
    let mut inner = Scope::new();
    for (p, a) in callee.params.iter().zip(&c.args) {
        let b = resolve_arg(mc, a, scope, vars)?;
        inner.insert(p.name.clone(), b);
    }
    mc.bind_owned(callee, &mut inner, bounded_streams);
    if let (Some(dst), Some(res)) = (&c.dst, &callee.result) {
        // The result local aliases the caller's destination, zeroed on
        // entry so callee semantics are independent of prior contents.
        let db = scope
            .get(dst)
            .ok_or_else(|| Diag::internal(format!("unbound call destination `{dst}`")))?
            .clone();
        if let Place::Mem { id, offset } = db.place {
            let n = res.ty.num_elems() as usize;
            let fill = if res.ty.elem.is_float() {
                Scalar::Float(0.0)
            } else {
                Scalar::Raw(0)
            };
            for slot in &mut mc.mems[id].data[offset..offset + n] {
                *slot = fill;
            }
        }
        inner.insert(res.name.clone(), db);
    }
    Ok((callee, inner))
}

fn resolve_arg(mc: &mut Machine, a: &ArgRef, scope: &Scope, vars: &mut Vars) -> Result<Binding> {
    let b = scope
        .get(&a.mem)
        .ok_or_else(|| Diag::internal(format!("unbound argument `{}`", a.mem)))?
        .clone();
    if a.prefix.is_empty() {
        return Ok(b);
    }
    let mut pre = Vec::new();
    for e in &a.prefix {
        let (s, _) = eval(mc, e, scope, vars)?;
        pre.push(as_raw(s));
    }
    let off = prefix_offset(&a.mem, &pre, &b.shape)?;
    let suffix = b.shape[a.prefix.len()..].to_vec();
    let place = match b.place {
        Place::Mem { id, offset } => Place::Mem { id, offset: offset + off },
        Place::Stream { first } => Place::Stream { first: first + off },
    };
    Ok(Binding { place, elem: b.elem, shape: suffix })
}

fn exec_assign(mc: &mut Machine, a: &crate::ir::Assign, scope: &Scope, vars: &mut Vars) -> Result<()> {
    let val = eval(mc, &a.value, scope, vars)?;
    match &a.dst {
        LRef::Mem { mem, indices } => {
            let b = scope
                .get(mem)
                .ok_or_else(|| Diag::internal(format!("unbound memory `{mem}`")))?
                .clone();
            let mut idx = Vec::new();
            for e in indices {
                let (s, _) = eval(mc, e, scope, vars)?;
                idx.push(as_raw(s));
            }
            let at = flatten(mem, &idx, &b.shape)?;
            let Place::Mem { id, offset } = b.place else {
                return Err(Diag::internal(format!("`{mem}` is not a memory")));
            };
            let stored = match a.op {
                AccOp::Set => value::store_cast(&b.elem, val.0, val.1.frac_bits()),
                op => {
                    let old = (mc.mems[id].data[offset + at], b.elem);
                    let kind = match op {
                        AccOp::Add => BinKind::Add,
                        AccOp::Sub => BinKind::Sub,
                        AccOp::Mul => BinKind::Mul,
                        AccOp::Set => unreachable!(),
                    };
                    let combined = arith(kind, old, val)?;
                    value::store_cast(&b.elem, combined.0, combined.1.frac_bits())
                }
            };
            mc.mems[id].data[offset + at] = stored;
            Ok(())
        }
        LRef::Stream { stream, indices } => {
            let (qid, elem) = resolve_queue(mc, stream, indices, scope, vars)?;
            let stored = value::store_cast(&elem, val.0, val.1.frac_bits());
            mc.queues[qid].push_back(stored);
            Ok(())
        }
    }
}

fn resolve_queue(
    mc: &mut Machine,
    stream: &str,
    indices: &[Expr],
    scope: &Scope,
    vars: &mut Vars,
) -> Result<(usize, ElemType)> {
    let b = scope
        .get(stream)
        .ok_or_else(|| Diag::internal(format!("unbound stream `{stream}`")))?
        .clone();
    let Place::Stream { first } = b.place else {
        return Err(Diag::internal(format!("`{stream}` is not a stream")));
    };
    let mut idx = Vec::new();
    for e in indices {
        let (s, _) = eval(mc, e, scope, vars)?;
        idx.push(as_raw(s));
    }
    let at = flatten(stream, &idx, &b.shape)?;
    Ok((first + at, b.elem))
}

fn eval(mc: &mut Machine, e: &Expr, scope: &Scope, vars: &mut Vars) -> Result<(Scalar, ElemType)> {
    match e {
        Expr::Const(s, t) => Ok((*s, *t)),
        Expr::Var(v) => {
            let val = vars
                .get(v)
                .ok_or_else(|| Diag::internal(format!("unbound index variable `{v}`")))?;
            Ok((Scalar::Raw(val), ElemType::Index))
        }
        Expr::Load { mem, indices } => {
            let b = scope
                .get(mem)
                .ok_or_else(|| Diag::internal(format!("unbound memory `{mem}`")))?
                .clone();
            let mut idx = Vec::new();
            for i in indices {
                let (s, _) = eval(mc, i, scope, vars)?;
                idx.push(as_raw(s));
            }
            let at = flatten(mem, &idx, &b.shape)?;
            let Place::Mem { id, offset } = b.place else {
                return Err(Diag::internal(format!("`{mem}` is not a memory")));
            };
            mc.mems[id].reads += 1;
            Ok((mc.mems[id].data[offset + at], b.elem))
        }
        Expr::StreamRead { stream, indices } => {
            let (qid, elem) = resolve_queue(mc, stream, indices, scope, vars)?;
            let v = mc.queues[qid].pop_front().ok_or_else(|| {
                Diag::user_nospan(format!("read past the end of stream `{stream}`"))
                    .with_rule("stream-underflow")
            })?;
            Ok((v, elem))
        }
        Expr::Binary { op, lhs, rhs, .. } => {
            let a = eval(mc, lhs, scope, vars)?;
            let b = eval(mc, rhs, scope, vars)?;
            arith(*op, a, b)
        }
        Expr::Cast { ty, expr } => {
            let (s, t) = eval(mc, expr, scope, vars)?;
            Ok((value::store_cast(ty, s, t.frac_bits()), *ty))
        }
    }
}

// ----------------------------------------------------------------------
// Differential equivalence testing
// ----------------------------------------------------------------------

/// Compare two functions on `trials` random inputs drawn from a seeded
/// generator; outputs (written arguments and results) must match bitwise.
pub fn equivalent(
    a: &IrModule,
    fa: &str,
    b: &IrModule,
    fb: &str,
    trials: u64,
    seed: u64,
) -> Result<()> {
    let pa = &a.expect_func(fa)?.params;
    let pb = &b.expect_func(fb)?.params;
    if pa.len() != pb.len() || pa.iter().zip(pb.iter()).any(|(x, y)| x.ty != y.ty) {
        return Err(Diag::user_nospan(format!(
            "`{fa}` and `{fb}` have different signatures and cannot be compared"
        ))
        .with_rule("not-comparable"));
    }
    let tys: Vec<TensorType> = pa.iter().map(|p| p.ty.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let args: Vec<TensorValue> =
            tys.iter().map(|t| random_value(&mut rng, t)).collect();
        let oa = run(a, fa, &args)?;
        let ob = run(b, fb, &args)?;
        for (i, (x, y)) in oa.args.iter().zip(&ob.args).enumerate() {
            if let Some(at) = first_diff(x, y) {
                return Err(Diag::user_nospan(format!(
                    "`{fa}` and `{fb}` diverge on trial {trial}: argument `{}` differs \
                     at flat index {at}",
                    pa[i].name
                ))
                .with_rule("not-equivalent"));
            }
        }
        match (&oa.result, &ob.result) {
            (Some(x), Some(y)) => {
                if let Some(at) = first_diff(x, y) {
                    return Err(Diag::user_nospan(format!(
                        "`{fa}` and `{fb}` diverge on trial {trial}: result differs at \
                         flat index {at}"
                    ))
                    .with_rule("not-equivalent"));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Diag::user_nospan(format!(
                    "`{fa}` and `{fb}` disagree on returning a result"
                ))
                .with_rule("not-comparable"))
            }
        }
    }
    Ok(())
}

fn first_diff(a: &TensorValue, b: &TensorValue) -> Option<usize> {
    a.data
        .iter()
        .zip(&b.data)
        .position(|(x, y)| !scalar_eq(*x, *y))
}

// ----------------------------------------------------------------------
// Dataflow (cycle-stepped) execution
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct StallReport {
    pub cycles: u64,
    pub deadlocked: bool,
    /// Cycles a stage spent blocked reading each stream, by declaration.
    pub blocked_reads: Vec<(String, u64)>,
    /// Cycles a stage spent blocked writing each stream, by declaration.
    pub blocked_writes: Vec<(String, u64)>,
}

enum StepOutcome {
    Progress,
    Blocked,
    Done,
}

enum Ctl {
    Seq,
    Loop { var_pos: usize, extent: u64, iter: u64 },
    Call,
}

struct Frame {
    stmts: Rc<Vec<Stmt>>,
    idx: usize,
    ctl: Ctl,
}

/// A resumable tree-walking cursor over one stage's statements.
struct Cursor {
    frames: Vec<Frame>,
    vars: Vars,
    scopes: Vec<Scope>,
    done: bool,
}

impl Cursor {
    fn new(stmt: &Stmt, root: &Scope) -> Cursor {
        Cursor {
            frames: vec![Frame {
                stmts: Rc::new(vec![stmt.clone()]),
                idx: 0,
                ctl: Ctl::Seq,
            }],
            vars: Vars::new(),
            scopes: vec![root.clone()],
            done: false,
        }
    }

    /// Advance until one assignment executes, the stage blocks on a stream,
    /// or the stage completes.
    fn step(&mut self, mc: &mut Machine) -> Result<StepOutcome> {
        let mut guard = 0u32;
        loop {
            guard += 1;
            if guard > 1_000_000 {
                return Err(Diag::internal("dataflow stage made no observable progress"));
            }
            let Some(frame) = self.frames.last_mut() else {
                self.done = true;
                return Ok(StepOutcome::Done);
            };
            if frame.idx >= frame.stmts.len() {
                match &mut frame.ctl {
                    Ctl::Loop { var_pos, extent, iter } => {
                        *iter += 1;
                        if *iter < *extent {
                            self.vars.stack[*var_pos].1 = *iter as i128;
                            frame.idx = 0;
                            continue;
                        }
                        self.vars.stack.pop();
                    }
                    Ctl::Call => {
                        self.scopes.pop();
                        self.vars.floors.pop();
                    }
                    Ctl::Seq => {}
                }
                self.frames.pop();
                continue;
            }
            let stmts = frame.stmts.clone();
            let stmt = &stmts[frame.idx];
            match stmt {
                Stmt::For(l) => {
                    frame.idx += 1;
                    self.vars.stack.push((l.var.clone(), 0));
                    let var_pos = self.vars.stack.len() - 1;
                    self.frames.push(Frame {
                        stmts: Rc::new(l.body.clone()),
                        idx: 0,
                        ctl: Ctl::Loop { var_pos, extent: l.extent, iter: 0 },
                    });
                }
                Stmt::Call(c) => {
                    frame.idx += 1;
                    let scope = self.scopes.last().unwrap().clone();
                    let (callee, inner) = enter_call(mc, c, &scope, &mut self.vars, true)?;
                    self.vars.floors.push(self.vars.stack.len());
                    self.scopes.push(inner);
                    self.frames.push(Frame {
                        stmts: Rc::new(callee.body.clone()),
                        idx: 0,
                        ctl: Ctl::Call,
                    });
                }
                Stmt::Assign(a) => {
                    let scope = self.scopes.last().unwrap().clone();
                    match try_assign(mc, a, &scope, &mut self.vars)? {
                        None => {
                            frame.idx += 1;
                            return Ok(StepOutcome::Progress);
                        }
                        Some(block) => return Ok(block),
                    }
                }
            }
        }
    }
}

/// Execute an assignment if its stream operations are ready; otherwise
/// report what blocks it, with no side effects.
fn try_assign(
    mc: &mut Machine,
    a: &crate::ir::Assign,
    scope: &Scope,
    vars: &mut Vars,
) -> Result<Option<StepOutcome>> {
    // At most one stream operation per statement keeps retries effect-free.
    let mut ops = 0usize;
    count_stream_reads(&a.value, &mut ops);
    if matches!(a.dst, LRef::Stream { .. }) {
        ops += 1;
    }
    if ops > 1 {
        return Err(Diag::internal(
            "dataflow statements may perform at most one stream operation",
        ));
    }
    if let Some((stream, indices)) = find_stream_read(&a.value) {
        let (qid, _) = resolve_queue(mc, stream, indices, scope, vars)?;
        if mc.queues[qid].is_empty() {
            *mc.blocked_reads
                .entry(mc.queue_decl[qid].clone())
                .or_insert(0) += 1;
            return Ok(Some(StepOutcome::Blocked));
        }
    }
    if let LRef::Stream { stream, indices } = &a.dst {
        let (qid, _) = resolve_queue(mc, stream, indices, scope, vars)?;
        if mc.queues[qid].len() as u64 >= mc.caps[qid] {
            *mc.blocked_writes
                .entry(mc.queue_decl[qid].clone())
                .or_insert(0) += 1;
            return Ok(Some(StepOutcome::Blocked));
        }
    }
    exec_assign(mc, a, scope, vars)?;
    Ok(None)
}

fn count_stream_reads(e: &Expr, n: &mut usize) {
    match e {
        Expr::StreamRead { .. } => *n += 1,
        Expr::Binary { lhs, rhs, .. } => {
            count_stream_reads(lhs, n);
            count_stream_reads(rhs, n);
        }
        Expr::Cast { expr, .. } => count_stream_reads(expr, n),
        _ => {}
    }
}

fn find_stream_read(e: &Expr) -> Option<(&str, &[Expr])> {
    match e {
        Expr::StreamRead { stream, indices } => Some((stream, indices)),
        Expr::Binary { lhs, rhs, .. } => {
            find_stream_read(lhs).or_else(|| find_stream_read(rhs))
        }
        Expr::Cast { expr, .. } => find_stream_read(expr),
        _ => None,
    }
}

/// Cycle-stepped execution of a dataflow function. Each top-level statement
/// is a stage; stages are stepped in definition order, one statement per
/// cycle, with finite stream capacities.
pub fn run_dataflow(
    m: &IrModule,
    func: &str,
    args: &[TensorValue],
    cycle_limit: u64,
) -> Result<(RunOutput, StallReport)> {
    let f = m.expect_func(func)?;
    if !f.dataflow {
        return Err(Diag::user_nospan(format!(
            "`{func}` is not a dataflow function"
        )));
    }
    if args.len() != f.params.len() {
        return Err(Diag::user_nospan(format!(
            "`{func}` takes {} arguments but {} were supplied",
            f.params.len(),
            args.len()
        )));
    }
    let mut machine = Machine::new(m);
    let mut scope = Scope::new();
    let mut arg_mems = Vec::new();
    for (p, a) in f.params.iter().zip(args) {
        if a.ty != p.ty {
            return Err(Diag::user_nospan(format!(
                "argument for `{}` has type {} but {} was expected",
                p.name, a.ty, p.ty
            )));
        }
        let id = machine.alloc_mem(&p.ty);
        machine.mems[id].data.copy_from_slice(&a.data);
        arg_mems.push(id);
        scope.insert(
            p.name.clone(),
            Binding {
                place: Place::Mem { id, offset: 0 },
                elem: p.ty.elem,
                shape: p.ty.shape.clone(),
            },
        );
    }
    machine.bind_owned(f, &mut scope, true);

    let mut cursors: Vec<Cursor> = f.body.iter().map(|s| Cursor::new(s, &scope)).collect();
    let mut report = StallReport::default();
    loop {
        if cursors.iter().all(|c| c.done) {
            break;
        }
        if report.cycles >= cycle_limit {
            return Err(Diag::user_nospan(format!(
                "dataflow execution exceeded {cycle_limit} cycles"
            ))
            .with_rule("cycle-limit"));
        }
        report.cycles += 1;
        let mut progressed = false;
        for c in cursors.iter_mut() {
            if c.done {
                continue;
            }
            match c.step(&mut machine)? {
                StepOutcome::Progress => progressed = true,
                StepOutcome::Done => progressed = true,
                StepOutcome::Blocked => {}
            }
        }
        if !progressed {
            report.deadlocked = true;
            break;
        }
    }

    report.blocked_reads = sorted_counts(&machine.blocked_reads);
    report.blocked_writes = sorted_counts(&machine.blocked_writes);

    let mut out_args = Vec::new();
    let mut arg_reads = Vec::new();
    for (p, id) in f.params.iter().zip(&arg_mems) {
        out_args.push(TensorValue {
            ty: p.ty.clone(),
            data: machine.mems[*id].data.clone(),
        });
        arg_reads.push(machine.mems[*id].reads);
    }
    Ok((
        RunOutput { args: out_args, result: None, arg_reads },
        report,
    ))
}

fn sorted_counts(m: &HashMap<String, u64>) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = m.iter().map(|(k, c)| (k.clone(), *c)).collect();
    v.sort();
    v
}

// ----------------------------------------------------------------------
// Tensor text I/O
// ----------------------------------------------------------------------

/// Parse a tensor file: repeated `tensor <name> <elem> [d1, d2, ...]`
/// headers, each followed by `num_elems` whitespace-separated values in
/// row-major order.
pub fn read_tensors(file: &str, text: &str) -> Result<Vec<(String, TensorValue)>> {
    let mut out = Vec::new();
    let mut tokens: VecDeque<(usize, String)> = VecDeque::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for t in line.split_whitespace() {
            tokens.push_back((lineno + 1, t.to_string()));
        }
    }
    let fail = |line: usize, msg: String| {
        Diag::user(file, crate::diag::Span { line: line as u32, col: 1 }, msg)
    };
    while let Some((line, kw)) = tokens.pop_front() {
        if kw != "tensor" {
            return Err(fail(line, format!("expected `tensor`, found `{kw}`")));
        }
        let (_, name) = tokens
            .pop_front()
            .ok_or_else(|| fail(line, "missing tensor name".into()))?;
        let (_, elem_s) = tokens
            .pop_front()
            .ok_or_else(|| fail(line, "missing element type".into()))?;
        let elem = parse_elem_name(&elem_s)
            .ok_or_else(|| fail(line, format!("unknown element type `{elem_s}`")))?;
        // Shape tokens: `[4,` `4]` or `[]`-style; gather until `]`.
        let mut shape_text = String::new();
        loop {
            let (l2, t) = tokens
                .pop_front()
                .ok_or_else(|| fail(line, "missing shape".into()))?;
            shape_text.push_str(&t);
            if t.ends_with(']') {
                break;
            }
            let _ = l2;
        }
        if !shape_text.starts_with('[') || !shape_text.ends_with(']') {
            return Err(fail(line, format!("malformed shape `{shape_text}`")));
        }
        let inner = &shape_text[1..shape_text.len() - 1];
        let mut shape = Vec::new();
        if !inner.is_empty() {
            for d in inner.split(',') {
                let v: u64 = d
                    .trim()
                    .parse()
                    .map_err(|_| fail(line, format!("malformed extent `{d}`")))?;
                shape.push(v);
            }
        }
        let ty = TensorType { elem, shape };
        let n = ty.num_elems() as usize;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let (l2, t) = tokens.pop_front().ok_or_else(|| {
                fail(line, format!("tensor `{name}` needs {n} values"))
            })?;
            let s = parse_scalar(&ty.elem, &t).map_err(|m| fail(l2, m))?;
            data.push(s);
        }
        out.push((name, TensorValue { ty, data }));
    }
    Ok(out)
}

fn parse_elem_name(s: &str) -> Option<ElemType> {
    if let Some(t) = crate::check::builtin_elem(s) {
        return Some(t);
    }
    // fixed(8,4) / ufixed(8,4) forms (no interior spaces in tensor files).
    let (unsigned, rest) = if let Some(r) = s.strip_prefix("ufixed(") {
        (true, r)
    } else if let Some(r) = s.strip_prefix("fixed(") {
        (false, r)
    } else {
        return None;
    };
    let rest = rest.strip_suffix(')')?;
    let mut it = rest.split(',');
    let w: u32 = it.next()?.trim().parse().ok()?;
    let f: u32 = it.next()?.trim().parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some(if unsigned {
        ElemType::UFixed(w, f)
    } else {
        ElemType::Fixed(w, f)
    })
}

/// Render tensors in the text format accepted by [`read_tensors`].
pub fn write_tensors(items: &[(String, TensorValue)]) -> String {
    let mut out = String::new();
    for (name, t) in items {
        let shape = t
            .ty
            .shape
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        let elem = compact_elem(&t.ty.elem);
        let _ = writeln!(out, "tensor {name} {elem} [{shape}]");
        let per_row = t.ty.shape.last().copied().unwrap_or(1).max(1) as usize;
        for (i, v) in t.data.iter().enumerate() {
            if i > 0 {
                out.push(if i % per_row == 0 { '\n' } else { ' ' });
            }
            out.push_str(&render_scalar(&t.ty.elem, *v));
        }
        out.push('\n');
    }
    out
}

fn compact_elem(e: &ElemType) -> String {
    // The file format forbids spaces inside a token.
    e.to_string().replace(' ', "")
}
