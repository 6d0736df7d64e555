//! Analytical performance model: initiation intervals and loop latency.
//!
//! The model is deliberately coarse — it exists to rank schedules, not
//! to predict silicon. Operator latencies come from a [`LatencyConfig`]
//! (floating-point adds are the expensive ones); a pipelined loop runs
//! one initiation per II cycles after a single fill of the body; an
//! unpipelined loop multiplies its body latency by the trip count; an
//! unrolled loop divides its trip count. A loop whose body is exactly
//! one pipelined loop flattens into it: the trip counts multiply and
//! the pipeline only fills once.
//!
//! The achieved initiation interval of a pipeline is bounded below by
//! loop-carried dependences: an accumulation into a memory element whose
//! subscript does not advance with the loop must wait for the combining
//! operator to finish before the next update can start.

use crate::diag::{Diag, Result};
use crate::ir::{AccOp, Expr, IrFunc, IrModule, LRef, Loop, Stmt};
use crate::types::{BinKind, ElemType};

/// Operator and memory-port latencies in cycles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyConfig {
    pub float_add: u64,
    pub float_mul: u64,
    pub int_add: u64,
    pub int_mul: u64,
    pub mem_read: u64,
    pub mem_write: u64,
    /// Per-stage skew added when stages of a dataflow region hand off.
    pub handoff: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            float_add: 7,
            float_mul: 4,
            int_add: 1,
            int_mul: 1,
            mem_read: 1,
            mem_write: 1,
            handoff: 1,
        }
    }
}

impl LatencyConfig {
    fn add_lat(&self, ty: ElemType) -> u64 {
        if ty.is_float() {
            self.float_add
        } else {
            self.int_add
        }
    }

    fn mul_lat(&self, ty: ElemType) -> u64 {
        if ty.is_float() {
            self.float_mul
        } else {
            self.int_mul
        }
    }

    fn op_lat(&self, op: BinKind, ty: ElemType) -> u64 {
        // Index arithmetic is address computation, folded into the datapath.
        if ty == ElemType::Index {
            return 0;
        }
        match op {
            BinKind::Add | BinKind::Sub => self.add_lat(ty),
            BinKind::Mul | BinKind::Div | BinKind::Rem => self.mul_lat(ty),
        }
    }
}

/// Achieved initiation interval of one pipelined loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelinePerf {
    pub func: String,
    pub loop_: String,
    pub requested: u64,
    pub achieved: u64,
}

/// Latency estimate for a function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerfReport {
    pub func: String,
    pub total: u64,
    pub pipelines: Vec<PipelinePerf>,
}

fn expr_latency(e: &Expr, cfg: &LatencyConfig) -> u64 {
    match e {
        Expr::Const(..) | Expr::Var(_) => 0,
        Expr::Load { indices, .. } => {
            cfg.mem_read + indices.iter().map(|ix| expr_latency(ix, cfg)).sum::<u64>()
        }
        Expr::StreamRead { indices, .. } => {
            cfg.mem_read + indices.iter().map(|ix| expr_latency(ix, cfg)).sum::<u64>()
        }
        Expr::Binary { op, ty, lhs, rhs } => {
            cfg.op_lat(*op, *ty) + expr_latency(lhs, cfg) + expr_latency(rhs, cfg)
        }
        Expr::Cast { expr, .. } => expr_latency(expr, cfg),
    }
}

fn assign_latency(f: &IrFunc, a: &crate::ir::Assign, cfg: &LatencyConfig) -> u64 {
    let value = expr_latency(&a.value, cfg);
    let (mem, indices) = match &a.dst {
        LRef::Mem { mem, indices } | LRef::Stream { stream: mem, indices } => (mem, indices),
    };
    let ix: u64 = indices.iter().map(|ix| expr_latency(ix, cfg)).sum();
    let elem = f.decl(mem).map(|d| d.ty.elem).unwrap_or(ElemType::Index);
    let combine = match a.op {
        AccOp::Set => 0,
        AccOp::Add | AccOp::Sub => cfg.mem_read + cfg.add_lat(elem),
        AccOp::Mul => cfg.mem_read + cfg.mul_lat(elem),
    };
    value + ix + combine + cfg.mem_write
}

/// The dependence-imposed lower bound on a pipelined loop's II: the
/// slowest accumulation into a destination whose subscript does not
/// depend on the loop variable. Everything else initiates every cycle.
pub fn min_ii(f: &IrFunc, l: &Loop, cfg: &LatencyConfig) -> u64 {
    let mut ii = 1;
    let mut visit = |s: &Stmt| {
        if let Stmt::Assign(a) = s {
            if matches!(a.op, AccOp::Set) {
                return;
            }
            if let LRef::Mem { mem, indices } = &a.dst {
                let uses_var = indices.iter().any(|ix| uses(ix, &l.var));
                if !uses_var {
                    let elem = f.decl(mem).map(|d| d.ty.elem).unwrap_or(ElemType::Index);
                    let lat = match a.op {
                        AccOp::Add | AccOp::Sub => cfg.add_lat(elem),
                        AccOp::Mul => cfg.mul_lat(elem),
                        AccOp::Set => unreachable!(),
                    };
                    ii = ii.max(lat);
                }
            }
        }
    };
    let mut stack: Vec<&Stmt> = l.body.iter().collect();
    while let Some(s) = stack.pop() {
        visit(s);
        if let Stmt::For(inner) = s {
            stack.extend(inner.body.iter());
        }
    }
    ii
}

fn uses(e: &Expr, var: &str) -> bool {
    match e {
        Expr::Var(v) => v == var,
        Expr::Binary { lhs, rhs, .. } => uses(lhs, var) || uses(rhs, var),
        Expr::Cast { expr, .. } => uses(expr, var),
        Expr::Load { indices, .. } | Expr::StreamRead { indices, .. } => {
            indices.iter().any(|ix| uses(ix, var))
        }
        _ => false,
    }
}

/// The achieved II of a pipelined loop: the requested interval, raised to
/// the dependence bound.
pub fn achieved_ii(f: &IrFunc, l: &Loop, cfg: &LatencyConfig) -> Option<u64> {
    l.pipeline_ii.map(|req| req.max(min_ii(f, l, cfg)))
}

fn trip(l: &Loop) -> u64 {
    let factor = l.unroll.unwrap_or(1);
    l.extent.div_ceil(factor)
}

/// If `l` is a pipeline, or collapses into one (its body is exactly one
/// loop that does), the flattened `(trips, ii, fill)`.
fn pipeline_shape(
    m: &IrModule,
    f: &IrFunc,
    l: &Loop,
    cfg: &LatencyConfig,
) -> Option<(u64, u64, u64)> {
    if l.pipeline_ii.is_some() {
        let ii = achieved_ii(f, l, cfg).unwrap();
        let fill = body_latency(m, f, &l.body, cfg);
        return Some((trip(l), ii, fill));
    }
    if let [Stmt::For(inner)] = l.body.as_slice() {
        if let Some((t, ii, fill)) = pipeline_shape(m, f, inner, cfg) {
            return Some((trip(l) * t, ii, fill));
        }
    }
    None
}

fn loop_latency(m: &IrModule, f: &IrFunc, l: &Loop, cfg: &LatencyConfig) -> u64 {
    match pipeline_shape(m, f, l, cfg) {
        Some((t, ii, fill)) => t * ii + fill,
        None => trip(l) * body_latency(m, f, &l.body, cfg),
    }
}

fn stmt_latency(m: &IrModule, f: &IrFunc, s: &Stmt, cfg: &LatencyConfig) -> u64 {
    match s {
        Stmt::For(l) => loop_latency(m, f, l, cfg),
        Stmt::Assign(a) => assign_latency(f, a, cfg),
        Stmt::Call(c) => match m.func(&c.callee) {
            Some(cf) => function_latency(m, cf, cfg),
            None => 0,
        },
    }
}

fn body_latency(m: &IrModule, f: &IrFunc, stmts: &[Stmt], cfg: &LatencyConfig) -> u64 {
    stmts.iter().map(|s| stmt_latency(m, f, s, cfg)).sum()
}

fn function_latency(m: &IrModule, f: &IrFunc, cfg: &LatencyConfig) -> u64 {
    if f.dataflow {
        // Stages overlap; the slowest dominates, plus handoff skew.
        let worst = f
            .body
            .iter()
            .map(|s| stmt_latency(m, f, s, cfg))
            .max()
            .unwrap_or(0);
        let skew = cfg.handoff * (f.body.len().saturating_sub(1) as u64);
        worst + skew
    } else {
        body_latency(m, f, &f.body, cfg)
    }
}

/// Estimate the latency of `func` and report every pipeline's achieved II.
pub fn latency(m: &IrModule, func: &str, cfg: &LatencyConfig) -> Result<PerfReport> {
    let f = m.expect_func(func)?;
    let total = function_latency(m, f, cfg);
    let mut pipelines = Vec::new();
    let mut seen = std::collections::HashSet::new();
    collect_pipelines(m, func, cfg, &mut pipelines, &mut seen)?;
    Ok(PerfReport { func: func.to_string(), total, pipelines })
}

fn collect_pipelines(
    m: &IrModule,
    func: &str,
    cfg: &LatencyConfig,
    out: &mut Vec<PipelinePerf>,
    seen: &mut std::collections::HashSet<String>,
) -> Result<()> {
    if !seen.insert(func.to_string()) {
        return Ok(());
    }
    let f = m.expect_func(func)?;
    f.walk_loops(&mut |l| {
        if let Some(req) = l.pipeline_ii {
            out.push(PipelinePerf {
                func: func.to_string(),
                loop_: l.name.clone(),
                requested: req,
                achieved: achieved_ii(f, l, cfg).unwrap(),
            });
        }
    });
    let mut callees = Vec::new();
    f.walk(&mut |s| {
        if let Stmt::Call(c) = s {
            callees.push(c.callee.clone());
        }
    });
    for c in callees {
        collect_pipelines(m, &c, cfg, out, seen)?;
    }
    Ok(())
}

/// Latency ratio of two schedules of the same kernel.
pub fn speedup(m_base: &IrModule, m_opt: &IrModule, func: &str, cfg: &LatencyConfig) -> Result<f64> {
    let base = latency(m_base, func, cfg)?.total;
    let opt = latency(m_opt, func, cfg)?.total;
    if opt == 0 {
        return Err(Diag::user_nospan("optimized latency is zero; cannot form a ratio"));
    }
    Ok(base as f64 / opt as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::compile_source;
    use crate::sched::Schedule;

    fn gemm1024() -> crate::ir::IrModule {
        let src = "\
def gemm(A: float32[1024, 1024], B: float32[1024, 1024], C: float32[1024, 1024]):
    for i in range(1024):
        for j in range(1024):
            for k in range(1024):
                C[i, j] += A[i, k] * B[k, j]
";
        compile_source("gemm1024.adl", src).unwrap()
    }

    fn cfg() -> LatencyConfig {
        LatencyConfig::default()
    }

    #[test]
    fn accumulation_bounds_the_initiation_interval() {
        let m = gemm1024();
        let mut s = Schedule::customize(&m, "gemm").unwrap();
        s.pipeline("k", 1).unwrap();
        let f = s.program().func("gemm").unwrap();
        let k = f.find_loop("k").unwrap();
        // C[i, j] does not move with k, so each update waits out the
        // floating-point add.
        assert_eq!(min_ii(f, k, &cfg()), 7);
        assert_eq!(achieved_ii(f, k, &cfg()), Some(7));
    }

    #[test]
    fn vanilla_pipeline_latency_matches_worked_value() {
        let m = gemm1024();
        let mut s = Schedule::customize(&m, "gemm").unwrap();
        s.pipeline("k", 1).unwrap();
        let r = latency(s.program(), "gemm", &cfg()).unwrap();
        // 1024^3 initiations at II=7 plus one 15-cycle body fill.
        assert_eq!(r.total, 7_516_192_783);
        assert_eq!(r.pipelines.len(), 1);
        assert_eq!(r.pipelines[0].achieved, 7);
    }

    fn rowwise() -> Schedule {
        let m = gemm1024();
        let mut s = Schedule::customize(&m, "gemm").unwrap();
        s.reorder(&["k", "j"]).unwrap();
        s.buffer_at("C", "i", None).unwrap();
        for l in ["j_init", "j", "j_back"] {
            s.pipeline(l, 1).unwrap();
            s.unroll(l, 32).unwrap();
        }
        s
    }

    #[test]
    fn rowwise_latency_matches_worked_value() {
        let s = rowwise();
        let r = latency(s.program(), "gemm", &cfg()).unwrap();
        // Per row: 34 (init) + (1024*32 + 15) (flattened k/j pipeline)
        // + 34 (write-back).
        assert_eq!(r.total, 1024 * (34 + 32_783 + 34));
        assert_eq!(r.total, 33_639_424);
        let jj = r.pipelines.iter().find(|p| p.loop_ == "j").unwrap();
        assert_eq!(jj.achieved, 1, "buffered row breaks the carried dependence");
    }

    #[test]
    fn speedup_matches_worked_ratio() {
        let m = gemm1024();
        let mut vanilla = Schedule::customize(&m, "gemm").unwrap();
        vanilla.pipeline("k", 1).unwrap();
        let s = rowwise();
        let x = speedup(vanilla.program(), s.program(), "gemm", &cfg()).unwrap();
        assert!((x - 223.43).abs() < 0.01, "speedup {x}");
    }

    #[test]
    fn unpipelined_loops_multiply_and_unroll_divides() {
        let src = "\
def f(A: int32[16]):
    for i in range(16):
        A[i] = A[i] + 1
";
        let m = compile_source("f.adl", src).unwrap();
        // Body: read A (1) + int add (1) + write (1) = 3; 16 trips.
        let r = latency(&m, "f", &cfg()).unwrap();
        assert_eq!(r.total, 48);
        let mut s = Schedule::customize(&m, "f").unwrap();
        s.unroll("i", 4).unwrap();
        let r = latency(s.program(), "f", &cfg()).unwrap();
        assert_eq!(r.total, 12, "four copies run in parallel");
    }

    #[test]
    fn perfect_nests_flatten_into_one_pipeline() {
        let src = "\
def f(A: int32[8, 8]):
    for i in range(8):
        for j in range(8):
            A[i, j] = 5
";
        let m = compile_source("f.adl", src).unwrap();
        let mut s = Schedule::customize(&m, "f").unwrap();
        s.pipeline("j", 1).unwrap();
        let r = latency(s.program(), "f", &cfg()).unwrap();
        // 64 initiations at II=1 plus one body fill (store = 1 cycle):
        // the i loop flattens instead of refilling per row.
        assert_eq!(r.total, 65);
    }

    #[test]
    fn dataflow_regions_cost_their_slowest_stage() {
        let src = "\
def stage1(A: int32[8], T: int32[8]):
    for i in range(8):
        T[i] = A[i] + 1

def stage2(T: int32[8], B: int32[8]):
    for i in range(8):
        for r in range(4):
            B[i] = B[i] + T[i]

def top(A: int32[8], B: int32[8]):
    T: int32[8]
    stage1(A, T)
    stage2(T, B)
";
        let m = compile_source("t.adl", src).unwrap();
        let mut s = Schedule::customize(&m, "top").unwrap();
        s.relay("T", 2).unwrap();
        // stage2 re-reads T[i] four times per i; a stream carries each
        // element once, so keep the reduction below the read.
        let e = s.build();
        // The relay consumer rewrite hoists the single read above the
        // reduction loop, so this builds cleanly.
        e.unwrap();
        let r = latency(s.program(), "top", &cfg()).unwrap();
        let f = s.program().func("top").unwrap();
        assert!(f.dataflow);
        // Slowest stage dominates, plus one handoff between two stages.
        let s1 = stmt_latency(s.program(), f, &f.body[0], &cfg());
        let s2 = stmt_latency(s.program(), f, &f.body[1], &cfg());
        assert_eq!(r.total, s1.max(s2) + 1);
    }

    #[test]
    fn latency_is_invariant_under_reorder() {
        let src = "\
def g(A: int32[8, 8], B: int32[8, 8]):
    for i in range(8):
        for j in range(8):
            B[i, j] = A[i, j] * 3
";
        let m = compile_source("g.adl", src).unwrap();
        let base = latency(&m, "g", &cfg()).unwrap().total;
        let mut s = Schedule::customize(&m, "g").unwrap();
        s.reorder(&["j", "i"]).unwrap();
        assert_eq!(latency(s.program(), "g", &cfg()).unwrap().total, base);
    }
}
