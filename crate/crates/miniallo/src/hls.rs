//! HLS C++ text emission.
//!
//! The emitter prints one C++ function per IR function, in module order
//! (clones precede their callers, so definitions appear before uses),
//! with customizations expressed as vendor-style pragmas:
//!
//! - partition layouts become `#pragma HLS array_partition` directives,
//! - pipelined and unrolled loops carry `pipeline II=` / `unroll factor=`,
//! - dataflow regions open with `#pragma HLS dataflow`,
//! - streams map to `hls::stream<T>` declarations plus a
//!   `#pragma HLS stream` depth directive.
//!
//! Output is deterministic byte for byte: the header records the tool
//! version and the schedule fingerprint, names are sanitized with a
//! stable renaming, and nothing depends on hash-map iteration order.

use crate::diag::{Diag, Result};
use crate::ir::{AccOp, ArgRef, Decl, Expr, IrFunc, IrModule, LRef, Loop, Stmt, Storage};
use crate::layout::PartitionBase;
use crate::types::ElemType;
use crate::value::Scalar;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

/// C++ spelling of an element type.
pub fn cpp_type(ty: ElemType) -> String {
    match ty {
        ElemType::Int(w) if matches!(w, 8 | 16 | 32 | 64) => format!("int{w}_t"),
        ElemType::Int(w) => format!("ap_int<{w}>"),
        ElemType::UInt(w) if matches!(w, 8 | 16 | 32 | 64) => format!("uint{w}_t"),
        ElemType::UInt(w) => format!("ap_uint<{w}>"),
        ElemType::Index => "int".to_string(),
        ElemType::Float(16) => "half".to_string(),
        ElemType::Float(32) => "float".to_string(),
        ElemType::Float(_) => "double".to_string(),
        ElemType::Fixed(w, f) => format!("ap_fixed<{w}, {}>", w as i64 - f as i64),
        ElemType::UFixed(w, f) => format!("ap_ufixed<{w}, {}>", w as i64 - f as i64),
    }
}

/// Emit a whole module. The schedule fingerprint, when present, is
/// recorded in the header so generated text can be traced back to the
/// schedule that produced it.
pub fn emit(m: &IrModule, schedule_hash: Option<&str>) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "// generated by miniallo {}", env!("CARGO_PKG_VERSION"));
    if let Some(h) = schedule_hash {
        let _ = writeln!(out, "// schedule: {h}");
    }
    out.push_str("#include <cstdint>\n");
    out.push_str("#include \"ap_fixed.h\"\n");
    out.push_str("#include \"ap_int.h\"\n");
    out.push_str("#include \"hls_stream.h\"\n");
    for f in &m.funcs {
        out.push('\n');
        emit_func(m, f, &mut out)?;
    }
    Ok(out)
}

/// A stable mapping from IR names (which may contain dots from splits
/// and fuses) to unique C identifiers.
struct Names {
    map: HashMap<String, String>,
    taken: HashSet<String>,
}

impl Names {
    fn new() -> Names {
        Names { map: HashMap::new(), taken: HashSet::new() }
    }

    fn intern(&mut self, name: &str) -> String {
        if let Some(n) = self.map.get(name) {
            return n.clone();
        }
        let mut base: String = name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
            .collect();
        if base.is_empty() || base.chars().next().unwrap().is_ascii_digit() {
            base.insert(0, '_');
        }
        let unique = if self.taken.contains(&base) {
            (2..)
                .map(|k| format!("{base}_{k}"))
                .find(|n| !self.taken.contains(n))
                .unwrap()
        } else {
            base
        };
        self.taken.insert(unique.clone());
        self.map.insert(name.to_string(), unique.clone());
        unique
    }

    fn get(&self, name: &str) -> String {
        self.map
            .get(name)
            .cloned()
            .unwrap_or_else(|| name.to_string())
    }
}

fn param_sig(d: &Decl, names: &mut Names) -> Result<String> {
    let n = names.intern(&d.name);
    let t = cpp_type(d.ty.elem);
    Ok(match &d.storage {
        Storage::Memory => {
            if d.ty.shape.is_empty() {
                format!("{t} &{n}")
            } else {
                let dims: String = d.ty.shape.iter().map(|e| format!("[{e}]")).collect();
                format!("{t} {n}{dims}")
            }
        }
        Storage::Stream { depth } => {
            check_depth(*depth, &d.name)?;
            let dims: String = d.ty.shape.iter().map(|e| format!("[{e}]")).collect();
            format!("hls::stream<{t}> {}{n}{dims}", if d.ty.shape.is_empty() { "&" } else { "" })
        }
    })
}

fn check_depth(depth: u64, name: &str) -> Result<()> {
    if depth == 0 {
        return Err(Diag::user_nospan(format!(
            "stream `{name}` has no depth; size it before emitting"
        )));
    }
    Ok(())
}

fn local_decl(d: &Decl, names: &mut Names, out: &mut String) -> Result<()> {
    let n = names.intern(&d.name);
    let t = cpp_type(d.ty.elem);
    let dims: String = d.ty.shape.iter().map(|e| format!("[{e}]")).collect();
    match &d.storage {
        Storage::Memory => {
            let _ = writeln!(out, "  {t} {n}{dims};");
        }
        Storage::Stream { depth } => {
            check_depth(*depth, &d.name)?;
            let _ = writeln!(out, "  hls::stream<{t}> {n}{dims};");
        }
    }
    Ok(())
}

/// Partition pragmas for one declaration, if any dimension is customized.
fn partition_pragmas(d: &Decl, names: &Names, out: &mut String) {
    if d.ty.shape.is_empty() || d.layout.is_top() {
        return;
    }
    let n = names.get(&d.name);
    if d.layout.0.iter().all(|b| *b == PartitionBase::Complete) {
        let _ = writeln!(out, "#pragma HLS array_partition variable={n} complete dim=0");
        return;
    }
    for (dim, base) in d.layout.0.iter().enumerate() {
        let spec = match base {
            PartitionBase::None => continue,
            PartitionBase::Complete => "complete".to_string(),
            PartitionBase::Cyclic(k) => format!("cyclic factor={k}"),
            PartitionBase::Block(k) => format!("block factor={k}"),
        };
        let _ = writeln!(
            out,
            "#pragma HLS array_partition variable={n} {spec} dim={}",
            dim + 1
        );
    }
}

fn stream_pragma(d: &Decl, names: &Names, out: &mut String) {
    if let Storage::Stream { depth } = d.storage {
        let n = names.get(&d.name);
        let _ = writeln!(out, "#pragma HLS stream variable={n} depth={depth}");
    }
}

fn emit_func(m: &IrModule, f: &IrFunc, out: &mut String) -> Result<()> {
    let mut names = Names::new();
    let mut sig = Vec::new();
    for p in &f.params {
        sig.push(param_sig(p, &mut names)?);
    }
    if let Some(r) = &f.result {
        sig.push(param_sig(r, &mut names)?);
    }
    let _ = writeln!(out, "void {}({}) {{", f.name, sig.join(", "));
    if f.dataflow {
        out.push_str("#pragma HLS dataflow\n");
    }
    for p in f.params.iter().chain(&f.result) {
        partition_pragmas(p, &names, out);
        stream_pragma(p, &names, out);
    }
    for l in &f.locals {
        local_decl(l, &mut names, out)?;
    }
    for l in &f.locals {
        partition_pragmas(l, &names, out);
        stream_pragma(l, &names, out);
    }
    emit_stmts(m, f, &f.body, &mut names, 1, out);
    out.push_str("}\n");
    Ok(())
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn emit_stmts(
    m: &IrModule,
    f: &IrFunc,
    stmts: &[Stmt],
    names: &mut Names,
    depth: usize,
    out: &mut String,
) {
    for s in stmts {
        match s {
            Stmt::For(l) => emit_loop(m, f, l, names, depth, out),
            Stmt::Assign(a) => {
                indent(depth, out);
                match (&a.dst, a.op) {
                    (LRef::Stream { stream, indices }, AccOp::Set) => {
                        let _ = writeln!(
                            out,
                            "{}.write({});",
                            stream_ref(stream, indices, names),
                            expr(&a.value, names)
                        );
                    }
                    (LRef::Stream { stream, indices }, _) => {
                        // Accumulating into a stream makes no sense; the
                        // verifier rejects it, but render something legible.
                        let _ = writeln!(
                            out,
                            "{}.write({});",
                            stream_ref(stream, indices, names),
                            expr(&a.value, names)
                        );
                    }
                    (LRef::Mem { mem, indices }, op) => {
                        let sym = match op {
                            AccOp::Set => "=",
                            AccOp::Add => "+=",
                            AccOp::Sub => "-=",
                            AccOp::Mul => "*=",
                        };
                        let _ = writeln!(
                            out,
                            "{} {sym} {};",
                            mem_ref(mem, indices, names),
                            expr(&a.value, names)
                        );
                    }
                }
            }
            Stmt::Call(c) => {
                indent(depth, out);
                let mut args: Vec<String> =
                    c.args.iter().map(|a| arg_ref(a, names)).collect();
                if let Some(dst) = &c.dst {
                    args.push(names.get(dst));
                }
                let _ = writeln!(out, "{}({});", c.callee, args.join(", "));
            }
        }
    }
}

fn emit_loop(m: &IrModule, f: &IrFunc, l: &Loop, names: &mut Names, depth: usize, out: &mut String) {
    let label = names.intern(&l.name);
    let var = if l.var == l.name { label.clone() } else { names.intern(&l.var) };
    indent(depth, out);
    let _ = writeln!(
        out,
        "{label}: for (int {var} = 0; {var} < {}; {var}++) {{",
        l.extent
    );
    if let Some(ii) = l.pipeline_ii {
        out.push_str("#pragma HLS pipeline II=");
        let _ = writeln!(out, "{ii}");
    }
    if let Some(k) = l.unroll {
        out.push_str("#pragma HLS unroll factor=");
        let _ = writeln!(out, "{k}");
    }
    emit_stmts(m, f, &l.body, names, depth + 1, out);
    indent(depth, out);
    out.push_str("}\n");
}

fn mem_ref(mem: &str, indices: &[Expr], names: &Names) -> String {
    let mut s = names.get(mem);
    for ix in indices {
        let _ = write!(s, "[{}]", expr(ix, names));
    }
    s
}

fn stream_ref(stream: &str, indices: &[Expr], names: &Names) -> String {
    mem_ref(stream, indices, names)
}

fn arg_ref(a: &ArgRef, names: &Names) -> String {
    mem_ref(&a.mem, &a.prefix, names)
}

fn const_text(s: &Scalar, ty: ElemType) -> String {
    match (s, ty) {
        (Scalar::Float(v), ElemType::Float(32)) => format!("{v:?}f"),
        (Scalar::Float(v), _) => format!("{v:?}"),
        (Scalar::Raw(r), ElemType::Fixed(_, f) | ElemType::UFixed(_, f)) => {
            let v = *r as f64 / (1u128 << f) as f64;
            format!("{v:?}")
        }
        (Scalar::Raw(r), _) => format!("{r}"),
    }
}

fn expr(e: &Expr, names: &Names) -> String {
    match e {
        Expr::Const(s, ty) => const_text(s, *ty),
        Expr::Var(v) => names.get(v),
        Expr::Load { mem, indices } => mem_ref(mem, indices, names),
        Expr::StreamRead { stream, indices } => {
            format!("{}.read()", stream_ref(stream, indices, names))
        }
        Expr::Binary { op, lhs, rhs, .. } => {
            let sym = match op {
                crate::types::BinKind::Add => "+",
                crate::types::BinKind::Sub => "-",
                crate::types::BinKind::Mul => "*",
                crate::types::BinKind::Div => "/",
                crate::types::BinKind::Rem => "%",
            };
            format!("({} {sym} {})", expr(lhs, names), expr(rhs, names))
        }
        Expr::Cast { ty, expr: inner } => {
            format!("({})({})", cpp_type(*ty), expr(inner, names))
        }
    }
}
