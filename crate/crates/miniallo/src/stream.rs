//! FIFO sizing and initiation-interval propagation for dataflow regions.
//!
//! A stream edge is characterized by a [`RateSpec`]: the producer emits
//! `c_src` samples every `ii_src` cycles, the consumer accepts `c_dst`
//! samples every `ii_dst` cycles, and `v` samples cross in total. From
//! the cumulative production and consumption curves the minimal
//! stall-free FIFO depth follows in closed form; [`simulate_edge`] is an
//! independent cycle-accurate reference that the closed form is tested
//! against.
//!
//! Across a multi-stage region, a slow producer throttles its consumers:
//! [`propagate_ii`] walks the stage graph in topological order and
//! derives each stage's effective initiation interval, and
//! [`size_fifos`] sizes every edge with those effective rates.
//! [`derive_rates`] extracts a stage graph from a compiled dataflow
//! function so depths can be computed instead of guessed.

use crate::dfg;
use crate::diag::{Diag, Result};
use crate::ir::{IrFunc, IrModule, LRef, Stmt, Storage};

/// Rates and total volume of one producer/consumer stream edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateSpec {
    /// Samples the producer emits per `ii_src` cycles.
    pub c_src: u64,
    pub ii_src: u64,
    /// Samples the consumer accepts per `ii_dst` cycles.
    pub c_dst: u64,
    pub ii_dst: u64,
    /// Total samples communicated.
    pub v: u64,
}

impl RateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c_src == 0 || self.ii_src == 0 || self.c_dst == 0 || self.ii_dst == 0 {
            return Err(Diag::user_nospan("stream rates must be positive"));
        }
        if self.v == 0 {
            return Err(Diag::user_nospan("stream volume must be at least 1"));
        }
        Ok(())
    }
}

/// Cumulative samples produced by cycle `t`.
pub fn f_prod(t: u64, r: &RateSpec) -> u64 {
    (r.c_src * (t / r.ii_src)).min(r.v)
}

/// Cumulative samples consumed by cycle `t`. Consumption can never get
/// ahead of production, so the consumer's schedule is clamped to it.
pub fn f_con(t: u64, r: &RateSpec) -> u64 {
    (r.c_dst * (t / r.ii_dst)).min(f_prod(t, r))
}

/// Minimal FIFO depth for which the producer never stalls: the largest
/// production/consumption gap over the transfer, plus one slot of
/// headroom so a write never finds the FIFO full.
pub fn fifo_depth(r: &RateSpec) -> u64 {
    let mut best = 0;
    let mut t = 0;
    loop {
        let gap = f_prod(t, r) - f_con(t, r);
        best = best.max(gap + 1);
        if f_con(t, r) == r.v {
            return best;
        }
        t += 1;
    }
}

/// Outcome of simulating one stream edge with a bounded FIFO.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeReport {
    /// Cycles until the last sample is consumed.
    pub cycles: u64,
    /// Cycles the producer spent retrying a write into a full FIFO.
    pub blocked_writes: u64,
}

/// Cycle-accurate reference simulation of a single producer/consumer
/// edge through a FIFO of the given depth.
///
/// Each cycle the producer's pending batch commits only if the FIFO has
/// headroom after the same-cycle exchange (occupancy must stay at or
/// below `depth - 1`); a rejected batch retries next cycle and pushes
/// the producer's later initiations back. The consumer drains up to its
/// cumulative schedule, seeing samples committed in the same cycle.
pub fn simulate_edge(r: &RateSpec, depth: u64) -> EdgeReport {
    let mut t: u64 = 0;
    let mut emitted: u64 = 0;
    let mut consumed: u64 = 0;
    let mut occ: u64 = 0;
    let mut blocked: u64 = 0;
    let mut pending: u64 = 0;
    let mut next_init = r.ii_src;
    while consumed < r.v {
        t += 1;
        if pending == 0 && emitted < r.v && t >= next_init {
            pending = r.c_src.min(r.v - emitted);
        }
        let sched = r.c_dst * (t / r.ii_dst);
        let mut incoming = 0;
        if pending > 0 {
            let out_with = (occ + pending).min(sched - consumed);
            if occ + pending - out_with <= depth.saturating_sub(1) {
                incoming = pending;
            }
        }
        if incoming > 0 {
            emitted += incoming;
            pending = 0;
            next_init = t + r.ii_src;
        } else if pending > 0 {
            blocked += 1;
        }
        let out = (occ + incoming).min(sched - consumed);
        occ += incoming;
        occ -= out;
        consumed += out;
    }
    EdgeReport { cycles: t, blocked_writes: blocked }
}

/// Smallest depth for which [`simulate_edge`] reports zero blocked
/// writes. Depth `v + 1` always suffices, so the search terminates.
pub fn min_stall_free_depth(r: &RateSpec) -> u64 {
    (1..)
        .find(|&d| simulate_edge(r, d).blocked_writes == 0)
        .unwrap()
}

/// One concurrently executing stage of a dataflow region.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    /// Samples emitted or accepted per initiation.
    pub c: u64,
    /// Requested initiation interval.
    pub ii: u64,
}

/// A stream connecting two stages.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEdge {
    pub src: usize,
    pub dst: usize,
    pub stream: String,
    pub volume: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageGraph {
    pub stages: Vec<Stage>,
    pub edges: Vec<StageEdge>,
}

/// Effective initiation interval per stage: a consumer can go no faster
/// than its slowest producer allows, so each incoming edge contributes
/// `ceil(II_src_eff * C_dst / C_src)` and the maximum (including the
/// stage's own request) wins. Errors on a cyclic stage graph.
pub fn propagate_ii(g: &StageGraph) -> Result<Vec<u64>> {
    let n = g.stages.len();
    let mut indeg = vec![0usize; n];
    for e in &g.edges {
        indeg[e.dst] += 1;
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = queue.pop() {
        order.push(i);
        for e in &g.edges {
            if e.src == i {
                indeg[e.dst] -= 1;
                if indeg[e.dst] == 0 {
                    queue.push(e.dst);
                }
            }
        }
    }
    if order.len() != n {
        return Err(Diag::user_nospan(
            "the dataflow stage graph is cyclic; initiation intervals cannot be propagated",
        )
        .with_rule("cyclic-stages"));
    }
    let mut eff: Vec<u64> = g.stages.iter().map(|s| s.ii).collect();
    for &i in &order {
        for e in g.edges.iter().filter(|e| e.dst == i) {
            let src = &g.stages[e.src];
            let cand = (eff[e.src] * g.stages[i].c).div_ceil(src.c);
            eff[i] = eff[i].max(cand);
        }
    }
    Ok(eff)
}

/// A stream edge with its computed depth.
#[derive(Debug, Clone, PartialEq)]
pub struct SizedEdge {
    pub stream: String,
    pub src: String,
    pub dst: String,
    pub spec: RateSpec,
    pub depth: u64,
}

/// Size every edge of a stage graph using effective initiation intervals.
pub fn size_fifos(g: &StageGraph) -> Result<Vec<SizedEdge>> {
    let eff = propagate_ii(g)?;
    Ok(g
        .edges
        .iter()
        .map(|e| {
            let spec = RateSpec {
                c_src: g.stages[e.src].c,
                ii_src: eff[e.src],
                c_dst: g.stages[e.dst].c,
                ii_dst: eff[e.dst],
                v: e.volume,
            };
            SizedEdge {
                stream: e.stream.clone(),
                src: g.stages[e.src].name.clone(),
                dst: g.stages[e.dst].name.clone(),
                spec,
                depth: fifo_depth(&spec),
            }
        })
        .collect())
}

/// Statement executions in a stage, following calls. One executed
/// assignment costs one cycle in the dataflow simulation, so this is the
/// stage's unstalled run time.
fn assign_count(m: &IrModule, stmts: &[Stmt]) -> u64 {
    let mut total = 0u64;
    for s in stmts {
        match s {
            Stmt::For(l) => total += l.extent * assign_count(m, &l.body),
            Stmt::Assign(_) => total += 1,
            Stmt::Call(c) => {
                if let Some(cf) = m.func(&c.callee) {
                    total += assign_count(m, &cf.body);
                }
            }
        }
    }
    total
}

/// Executions of statements that read (or write) stream `name` within a
/// stage, following calls through matching argument slots.
fn stream_op_count(m: &IrModule, f: &IrFunc, stmts: &[Stmt], name: &str, write: bool) -> u64 {
    let mut total = 0u64;
    for s in stmts {
        match s {
            Stmt::For(l) => total += l.extent * stream_op_count(m, f, &l.body, name, write),
            Stmt::Assign(a) => {
                let hit = if write {
                    matches!(&a.dst, LRef::Stream { stream, .. } if stream == name)
                } else {
                    let mut found = false;
                    let mut scan = |e: &crate::ir::Expr| {
                        if let crate::ir::Expr::StreamRead { stream, .. } = e {
                            if stream == name {
                                found = true;
                            }
                        }
                    };
                    walk_expr(&a.value, &mut scan);
                    found
                };
                if hit {
                    total += 1;
                }
            }
            Stmt::Call(c) => {
                if let Some(cf) = m.func(&c.callee) {
                    for (a, p) in c.args.iter().zip(&cf.params) {
                        if a.mem == name && a.prefix.is_empty() {
                            total += stream_op_count(m, cf, &cf.body, &p.name, write);
                        }
                    }
                }
            }
        }
    }
    total
}

fn walk_expr(e: &crate::ir::Expr, f: &mut impl FnMut(&crate::ir::Expr)) {
    use crate::ir::Expr;
    f(e);
    match e {
        Expr::Binary { lhs, rhs, .. } => {
            walk_expr(lhs, f);
            walk_expr(rhs, f);
        }
        Expr::Cast { expr, .. } => walk_expr(expr, f),
        Expr::Load { indices, .. } | Expr::StreamRead { indices, .. } => {
            for ix in indices {
                walk_expr(ix, f);
            }
        }
        _ => {}
    }
}

/// Does this stage touch stream `name`, directly or through a whole-stream
/// call argument that the callee uses in the given direction?
fn stage_uses_stream(
    m: &IrModule,
    roles: &dfg::ParamRoles,
    stmt: &Stmt,
    name: &str,
    write: bool,
) -> bool {
    let mut found = false;
    let visit = &mut |s: &Stmt| match s {
        Stmt::Assign(a) => {
            if write {
                if matches!(&a.dst, LRef::Stream { stream, .. } if stream == name) {
                    found = true;
                }
            } else {
                walk_expr(&a.value, &mut |e| {
                    if let crate::ir::Expr::StreamRead { stream, .. } = e {
                        if stream == name {
                            found = true;
                        }
                    }
                });
            }
        }
        Stmt::Call(c) => {
            if let Some(cf) = m.func(&c.callee) {
                for (a, p) in c.args.iter().zip(&cf.params) {
                    if a.mem == name && a.prefix.is_empty() {
                        let (r, w) = roles
                            .get(&(c.callee.clone(), p.name.clone()))
                            .copied()
                            .unwrap_or((false, false));
                        if (write && w) || (!write && r) {
                            found = true;
                        }
                    }
                }
            }
        }
        Stmt::For(_) => {}
    };
    match stmt {
        Stmt::For(l) => {
            visit(stmt);
            let mut stack: Vec<&Stmt> = l.body.iter().collect();
            while let Some(s) = stack.pop() {
                visit(s);
                if let Stmt::For(l) = s {
                    stack.extend(l.body.iter());
                }
            }
        }
        _ => visit(stmt),
    }
    found
}

/// Extract a stage graph from a compiled dataflow function: one stage per
/// top-level statement, one edge per stream with a unique producer and
/// consumer stage. Streams used through sliced arguments (FIFO arrays
/// between unfolded processing elements) are skipped; their depths come
/// from the schedule, not from rate analysis.
pub fn derive_rates(m: &IrModule, func: &str) -> Result<StageGraph> {
    let f = m.expect_func(func)?;
    if !f.dataflow {
        return Err(Diag::user_nospan(format!(
            "`{func}` is not a dataflow region; there are no streams to size"
        )));
    }
    let roles = dfg::param_roles_syntactic(m);
    let mut g = StageGraph::default();
    for (k, s) in f.body.iter().enumerate() {
        let name = match s {
            Stmt::Call(c) => c.callee.clone(),
            Stmt::For(l) => l.name.clone(),
            Stmt::Assign(_) => format!("s{k}"),
        };
        let stage = std::slice::from_ref(s);
        let cycles = assign_count(m, stage).max(1);
        g.stages.push(Stage { name, c: 1, ii: cycles });
    }
    let streams: Vec<String> = f
        .decls()
        .filter(|d| matches!(d.storage, Storage::Stream { .. }))
        .map(|d| d.name.clone())
        .collect();
    for sname in streams {
        let mut sliced = false;
        f.walk(&mut |s| {
            if let Stmt::Call(c) = s {
                if c.args.iter().any(|a| a.mem == sname && !a.prefix.is_empty()) {
                    sliced = true;
                }
            }
        });
        if sliced {
            continue;
        }
        let writers: Vec<usize> = (0..f.body.len())
            .filter(|&i| stage_uses_stream(m, &roles, &f.body[i], &sname, true))
            .collect();
        let readers: Vec<usize> = (0..f.body.len())
            .filter(|&i| stage_uses_stream(m, &roles, &f.body[i], &sname, false))
            .collect();
        let (&w, &r) = match (writers.as_slice(), readers.as_slice()) {
            ([w], [r]) if w != r => (w, r),
            _ => continue,
        };
        let wstage = std::slice::from_ref(&f.body[w]);
        let rstage = std::slice::from_ref(&f.body[r]);
        let volume = stream_op_count(m, f, wstage, &sname, true);
        let reads = stream_op_count(m, f, rstage, &sname, false);
        if volume == 0 || reads == 0 {
            continue;
        }
        // One sample per initiation: the interval is how many statement
        // executions the stage performs per sample.
        g.stages[w].ii = assign_count(m, wstage).max(1).div_ceil(volume);
        g.stages[r].ii = assign_count(m, rstage).max(1).div_ceil(reads);
        g.edges.push(StageEdge { src: w, dst: r, stream: sname, volume });
    }
    Ok(g)
}
