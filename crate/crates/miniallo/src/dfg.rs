//! Hierarchical dataflow graph over named values.
//!
//! Every parameter, local, and result of every function is a node. Edges
//! connect caller argument values to callee parameter values at each call
//! site, directed by the callee's use of the parameter: a read draws
//! `caller:arg -> callee:param`, a write draws `callee:param -> caller:arg`
//! (both when the callee does both), and a returned result draws
//! `callee:result -> caller:dst`. Parameter roles are computed transitively
//! through nested calls.
//!
//! All edges cross a function boundary by construction, which is exactly
//! the relation layout propagation walks: banking a value in one function
//! constrains the values it is wired to in other functions, in both
//! directions.

use crate::ir::{IrModule, LRef, Stmt};
use crate::layout::{self, PartitionType, PropNode};
use crate::diag::Result;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct DfgNode {
    pub func: String,
    pub value: String,
    pub shape: Vec<u64>,
    pub layout: PartitionType,
}

#[derive(Debug, Clone)]
pub struct Dfg {
    pub nodes: Vec<DfgNode>,
    /// Directed edges between node indices.
    pub edges: Vec<(usize, usize)>,
    index: HashMap<(String, String), usize>,
}

/// Whether each function reads and/or writes each of its parameters
/// (transitively through calls it makes).
pub type ParamRoles = HashMap<(String, String), (bool, bool)>;

pub fn param_roles(m: &IrModule) -> ParamRoles {
    roles_impl(m, true)
}

/// Like [`param_roles`], but an accumulating store counts only as a write:
/// the old values it reads back are its own partial results, not an input.
/// This is the classification relays use to tell producers from consumers.
pub fn param_roles_syntactic(m: &IrModule) -> ParamRoles {
    roles_impl(m, false)
}

fn roles_impl(m: &IrModule, acc_reads: bool) -> ParamRoles {
    let mut roles: ParamRoles = HashMap::new();
    // Post-order over the acyclic call graph so callee roles are available.
    let mut done: HashSet<String> = HashSet::new();
    fn visit(
        m: &IrModule,
        func: &str,
        roles: &mut ParamRoles,
        done: &mut HashSet<String>,
        acc_reads: bool,
    ) {
        if done.contains(func) {
            return;
        }
        done.insert(func.to_string());
        let f = match m.func(func) {
            Some(f) => f,
            None => return,
        };
        let mut callees = Vec::new();
        f.walk(&mut |s| {
            if let Stmt::Call(c) = s {
                callees.push(c.callee.clone());
            }
        });
        for c in &callees {
            visit(m, c, roles, done, acc_reads);
        }
        let mut local: HashMap<String, (bool, bool)> = f
            .params
            .iter()
            .map(|p| (p.name.clone(), (false, false)))
            .collect();
        let mark_read = |name: &str, local: &mut HashMap<String, (bool, bool)>| {
            if let Some(r) = local.get_mut(name) {
                r.0 = true;
            }
        };
        f.walk(&mut |s| match s {
            Stmt::Assign(a) => {
                walk_expr_reads(&a.value, &mut |n| mark_read(n, &mut local));
                match &a.dst {
                    LRef::Mem { mem, indices } | LRef::Stream { stream: mem, indices } => {
                        for ix in indices {
                            walk_expr_reads(ix, &mut |n| mark_read(n, &mut local));
                        }
                        if let Some(r) = local.get_mut(mem) {
                            r.1 = true;
                            // Accumulating stores read the old value too.
                            if acc_reads
                                && !matches!(a.op, crate::ir::AccOp::Set)
                                && matches!(a.dst, LRef::Mem { .. })
                            {
                                r.0 = true;
                            }
                        }
                    }
                }
            }
            Stmt::Call(c) => {
                let callee = match m.func(&c.callee) {
                    Some(f) => f,
                    None => return,
                };
                for (a, p) in c.args.iter().zip(&callee.params) {
                    for ix in &a.prefix {
                        walk_expr_reads(ix, &mut |n| mark_read(n, &mut local));
                    }
                    let (r, w) = roles
                        .get(&(c.callee.clone(), p.name.clone()))
                        .copied()
                        .unwrap_or((false, false));
                    if let Some(x) = local.get_mut(&a.mem) {
                        x.0 |= r;
                        x.1 |= w;
                    }
                }
                if let Some(dst) = &c.dst {
                    if let Some(x) = local.get_mut(dst) {
                        x.1 = true;
                    }
                }
            }
            Stmt::For(_) => {}
        });
        for (p, rw) in local {
            roles.insert((func.to_string(), p), rw);
        }
    }
    let names: Vec<String> = m.funcs.iter().map(|f| f.name.clone()).collect();
    for n in names {
        visit(m, &n, &mut roles, &mut done, acc_reads);
    }
    roles
}

fn walk_expr_reads(e: &crate::ir::Expr, on: &mut impl FnMut(&str)) {
    use crate::ir::Expr;
    match e {
        Expr::Load { mem, indices } => {
            on(mem);
            for ix in indices {
                walk_expr_reads(ix, on);
            }
        }
        Expr::StreamRead { stream, indices } => {
            on(stream);
            for ix in indices {
                walk_expr_reads(ix, on);
            }
        }
        Expr::Binary { lhs, rhs, .. } => {
            walk_expr_reads(lhs, on);
            walk_expr_reads(rhs, on);
        }
        Expr::Cast { expr, .. } => walk_expr_reads(expr, on),
        Expr::Const(..) | Expr::Var(_) => {}
    }
}

impl Dfg {
    pub fn build(m: &IrModule) -> Dfg {
        let mut dfg = Dfg { nodes: Vec::new(), edges: Vec::new(), index: HashMap::new() };
        for f in &m.funcs {
            for d in f.decls() {
                let id = dfg.nodes.len();
                dfg.index.insert((f.name.clone(), d.name.clone()), id);
                dfg.nodes.push(DfgNode {
                    func: f.name.clone(),
                    value: d.name.clone(),
                    shape: d.ty.shape.clone(),
                    layout: d.layout.clone(),
                });
            }
        }
        let roles = param_roles(m);
        for f in &m.funcs {
            f.walk(&mut |s| {
                if let Stmt::Call(c) = s {
                    dfg.add_call_edges(m, &f.name, c, &roles);
                }
            });
        }
        dfg.edges.sort_unstable();
        dfg.edges.dedup();
        dfg
    }

    fn add_call_edges(
        &mut self,
        m: &IrModule,
        caller: &str,
        c: &crate::ir::CallStmt,
        roles: &ParamRoles,
    ) {
        let callee = match m.func(&c.callee) {
            Some(f) => f,
            None => return,
        };
        for (a, p) in c.args.iter().zip(&callee.params) {
            let (Some(an), Some(pn)) = (
                self.node(caller, &a.mem),
                self.node(&c.callee, &p.name),
            ) else {
                continue;
            };
            let (r, w) = roles
                .get(&(c.callee.clone(), p.name.clone()))
                .copied()
                .unwrap_or((true, true));
            if r {
                self.edges.push((an, pn));
            }
            if w {
                self.edges.push((pn, an));
            }
        }
        if let (Some(dst), Some(res)) = (&c.dst, &callee.result) {
            if let (Some(rn), Some(dn)) = (
                self.node(&c.callee, &res.name),
                self.node(caller, dst),
            ) {
                self.edges.push((rn, dn));
            }
        }
    }

    pub fn node(&self, func: &str, value: &str) -> Option<usize> {
        self.index.get(&(func.to_string(), value.to_string())).copied()
    }

    /// Undirected adjacency (predecessors and successors) per node. Every
    /// edge crosses a function boundary, so this is exactly the relation
    /// layout propagation follows.
    pub fn cross_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for v in &mut adj {
            v.sort_unstable();
            v.dedup();
        }
        adj
    }

    /// Graphviz rendering for debugging.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph dfg {\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                out,
                "  n{i} [label=\"{}:{}{}\"];",
                n.func,
                n.value,
                if n.layout.is_top() {
                    String::new()
                } else {
                    format!("\\n{}", n.layout)
                }
            );
        }
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "  n{a} -> n{b};");
        }
        out.push_str("}\n");
        out
    }
}

/// Propagate partition layouts across the module's dataflow graph to a
/// fixed point, seeding from every declaration that already carries a
/// non-trivial layout. Returns the number of node updates performed.
pub fn propagate_layouts(m: &mut IrModule) -> Result<u64> {
    let dfg = Dfg::build(m);
    let cross = dfg.cross_neighbors();
    let mut nodes: Vec<PropNode> = dfg
        .nodes
        .iter()
        .map(|n| PropNode { ty: PartitionType::top(n.shape.len()), shape: n.shape.clone() })
        .collect();
    let seeds: Vec<(usize, PartitionType)> = dfg
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.layout.is_top())
        .map(|(i, n)| (i, n.layout.clone()))
        .collect();
    let updates = layout::propagate(&mut nodes, &cross, seeds)?;
    for (i, n) in dfg.nodes.iter().enumerate() {
        if let Some(f) = m.func_mut(&n.func) {
            if let Some(d) = f.decl_mut(&n.value) {
                d.layout = nodes[i].ty.clone();
            }
        }
    }
    Ok(updates)
}
