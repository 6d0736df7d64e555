//! Memory-layout types: the per-dimension partition lattice, subtyping,
//! greatest lower bounds, and fixed-point propagation over a dataflow graph.
//!
//! Each array dimension carries one of four base forms: `none` (no
//! partitioning, the top element), `cyclic(a)`, `block(a)`, or `complete`
//! (fully partitioned, the bottom element). Factors must be proper divisors
//! of the extent, excluding 1 and the extent itself; a dimension of extent 8
//! therefore has exactly six layout types. Subtyping means "at least as
//! partitioned": a caller may pass a more-partitioned array where a
//! less-partitioned one is expected. The meet of two layouts is the coarsest
//! layout that refines both; propagation pushes meets across caller/callee
//! edges until a fixed point (which exists because meets only move down a
//! finite lattice).

use crate::diag::{Diag, Result};
use std::collections::VecDeque;
use std::fmt;

/// Per-dimension partition form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartitionBase {
    /// No partitioning; the top element.
    None,
    Cyclic(u64),
    Block(u64),
    /// Fully partitioned; the bottom element.
    Complete,
}

use PartitionBase as PB;

impl fmt::Display for PartitionBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PB::None => write!(f, "none"),
            PB::Cyclic(a) => write!(f, "cyclic({a})"),
            PB::Block(a) => write!(f, "block({a})"),
            PB::Complete => write!(f, "complete"),
        }
    }
}

/// Is `a` a legal partition factor for a dimension of `extent` elements?
/// Factors are proper divisors, excluding 1 and the extent itself.
pub fn legal_factor(a: u64, extent: u64) -> bool {
    a >= 2 && a < extent && extent % a == 0
}

/// All base layout types for one dimension of the given extent.
pub fn lattice_elems(extent: u64) -> Vec<PartitionBase> {
    let mut out = vec![PB::None];
    for a in 2..extent {
        if extent % a == 0 {
            out.push(PB::Cyclic(a));
        }
    }
    for a in 2..extent {
        if extent % a == 0 {
            out.push(PB::Block(a));
        }
    }
    out.push(PB::Complete);
    out
}

/// Length of the longest strictly descending chain in the one-dimension
/// lattice: the number of prime factors of the extent (with multiplicity),
/// at least 1. Used by the propagation-bound test.
pub fn lattice_depth(extent: u64) -> u64 {
    let mut n = extent;
    let mut count = 0;
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            count += 1;
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        count += 1;
    }
    count.max(1)
}

/// Base subtyping: `a <: b` (`a` may be used where `b` is expected).
/// Derivable from S-Bottom-C/B, S-Cyclic, S-Block, S-Top-C/B plus
/// reflexivity and transitivity; `complete <: none` is the bounded-lattice
/// closure (via any interior element when one exists).
pub fn subtype_base(a: PartitionBase, b: PartitionBase) -> bool {
    match (a, b) {
        _ if a == b => true,
        (PB::Complete, _) => true,
        (_, PB::None) => true,
        (PB::Cyclic(a2), PB::Cyclic(a1)) => a2 % a1 == 0,
        (PB::Block(a2), PB::Block(a1)) => a2 % a1 == 0,
        _ => false,
    }
}

/// Base greatest lower bound for one dimension of the given extent.
pub fn meet_base(a: PartitionBase, b: PartitionBase, extent: u64) -> PartitionBase {
    match (a, b) {
        (PB::None, x) | (x, PB::None) => x,
        (PB::Complete, _) | (_, PB::Complete) => PB::Complete,
        (PB::Cyclic(x), PB::Cyclic(y)) => {
            let l = lcm(x, y);
            if legal_factor(l, extent) {
                PB::Cyclic(l)
            } else {
                PB::Complete
            }
        }
        (PB::Block(x), PB::Block(y)) => {
            let l = lcm(x, y);
            if legal_factor(l, extent) {
                PB::Block(l)
            } else {
                PB::Complete
            }
        }
        // Cross-family combinations have no common refinement short of
        // complete partitioning.
        (PB::Cyclic(_), PB::Block(_)) | (PB::Block(_), PB::Cyclic(_)) => PB::Complete,
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// The layout of a whole array: one base form per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartitionType(pub Vec<PartitionBase>);

impl PartitionType {
    /// The all-`none` layout for a rank-`n` array.
    pub fn top(rank: usize) -> Self {
        PartitionType(vec![PB::None; rank])
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn is_top(&self) -> bool {
        self.0.iter().all(|b| *b == PB::None)
    }

    /// Validate every factor against the array shape.
    pub fn validate(&self, shape: &[u64]) -> Result<()> {
        if self.0.len() != shape.len() {
            return Err(Diag::user_nospan(format!(
                "layout rank {} does not match array rank {}",
                self.0.len(),
                shape.len()
            )));
        }
        for (d, (&b, &s)) in self.0.iter().zip(shape).enumerate() {
            if let PB::Cyclic(a) | PB::Block(a) = b {
                if !legal_factor(a, s) {
                    return Err(Diag::user_nospan(format!(
                        "partition factor {a} is illegal for dim {d} of extent {s} \
                         (factors must divide the extent, excluding 1 and the extent)"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for PartitionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{b}")?;
        }
        write!(f, ")")
    }
}

/// Array subtyping: pointwise over dimensions (every dimension of the
/// argument must be usable where the parameter's dimension is expected).
pub fn subtype(a: &PartitionType, b: &PartitionType) -> bool {
    a.0.len() == b.0.len() && a.0.iter().zip(&b.0).all(|(&x, &y)| subtype_base(x, y))
}

/// Pointwise greatest lower bound; `shape` supplies per-dimension extents.
pub fn meet(a: &PartitionType, b: &PartitionType, shape: &[u64]) -> PartitionType {
    debug_assert_eq!(a.0.len(), b.0.len());
    debug_assert_eq!(a.0.len(), shape.len());
    PartitionType(
        a.0.iter()
            .zip(&b.0)
            .zip(shape)
            .map(|((&x, &y), &s)| meet_base(x, y, s))
            .collect(),
    )
}

/// May an argument with layout `arg` be passed where the callee expects
/// layout `param`? (The function-application rule: argument subtypes
/// parameter.)
pub fn call_compatible(arg: &PartitionType, param: &PartitionType) -> bool {
    subtype(arg, param)
}

/// One propagation node: its current layout and the shape of its array.
#[derive(Debug, Clone)]
pub struct PropNode {
    pub ty: PartitionType,
    pub shape: Vec<u64>,
}

/// Worklist propagation of layout types across cross-function edges.
///
/// `cross[n]` lists the neighbors of node `n` that live in a *different*
/// function (both predecessors and successors); intra-function neighbors do
/// not relay layout changes. `seeds` are the initial `(node, type)` updates.
/// Returns the number of node updates performed (a node update is a strict
/// lattice descent, so the count is bounded by nodes x lattice depth).
pub fn propagate(
    nodes: &mut [PropNode],
    cross: &[Vec<usize>],
    seeds: Vec<(usize, PartitionType)>,
) -> Result<u64> {
    propagate_with(nodes, cross, seeds, |_| 0)
}

/// Propagation with an injectable pop position, used to demonstrate that the
/// fixed point is independent of worklist order.
pub fn propagate_with(
    nodes: &mut [PropNode],
    cross: &[Vec<usize>],
    seeds: Vec<(usize, PartitionType)>,
    mut choose: impl FnMut(usize) -> usize,
) -> Result<u64> {
    let mut work: VecDeque<(usize, PartitionType)> = seeds.into_iter().collect();
    let mut updates = 0u64;
    while !work.is_empty() {
        let at = choose(work.len()).min(work.len() - 1);
        let (n, incoming) = work.remove(at).unwrap();
        if incoming.rank() != nodes[n].ty.rank() {
            // Shape-changing edges (e.g. sliced arguments) do not propagate.
            continue;
        }
        let next = meet(&incoming, &nodes[n].ty, &nodes[n].shape);
        next.validate(&nodes[n].shape)
            .map_err(|d| Diag::user_nospan(format!("layout contradiction: {}", d.message)))?;
        if next != nodes[n].ty {
            nodes[n].ty = next.clone();
            updates += 1;
            for &m in &cross[n] {
                work.push_back((m, next.clone()));
            }
        }
    }
    Ok(updates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    // ------------------------------------------------------------------
    // Oracle: subtyping as the reflexive-transitive closure of the base
    // rules, computed by brute force over the element set.
    // ------------------------------------------------------------------
    fn closure_oracle(extent: u64) -> impl Fn(PartitionBase, PartitionBase) -> bool {
        let elems = lattice_elems(extent);
        let n = elems.len();
        let mut rel = vec![vec![false; n]; n];
        for (i, &a) in elems.iter().enumerate() {
            rel[i][i] = true; // reflexivity
            for (j, &b) in elems.iter().enumerate() {
                let one_step = match (a, b) {
                    (PB::Complete, PB::Cyclic(_)) => true, // S-Bottom-C
                    (PB::Complete, PB::Block(_)) => true,  // S-Bottom-B
                    (PB::Cyclic(a2), PB::Cyclic(a1)) => a2 % a1 == 0, // S-Cyclic
                    (PB::Block(a2), PB::Block(a1)) => a2 % a1 == 0,   // S-Block
                    (PB::Cyclic(_), PB::None) => true,     // S-Top-C
                    (PB::Block(_), PB::None) => true,      // S-Top-B
                    _ => false,
                };
                if one_step {
                    rel[i][j] = true;
                }
            }
        }
        // Transitive closure (Floyd-Warshall).
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    rel[i][j] = rel[i][j] || (rel[i][k] && rel[k][j]);
                }
            }
        }
        move |a, b| {
            let ia = elems.iter().position(|&x| x == a).unwrap();
            let ib = elems.iter().position(|&x| x == b).unwrap();
            rel[ia][ib]
        }
    }

    #[test]
    fn shape_8_lattice_has_six_elements() {
        let elems: BTreeSet<_> = lattice_elems(8).into_iter().collect();
        let expect: BTreeSet<_> = [
            PB::None,
            PB::Cyclic(2),
            PB::Cyclic(4),
            PB::Block(2),
            PB::Block(4),
            PB::Complete,
        ]
        .into_iter()
        .collect();
        assert_eq!(elems, expect);
    }

    #[test]
    fn frozen_subtype_judgments() {
        assert!(subtype_base(PB::Complete, PB::Cyclic(2)));
        assert!(subtype_base(PB::Cyclic(4), PB::Cyclic(2)));
        assert!(!subtype_base(PB::Cyclic(2), PB::Block(2)));
        assert!(!subtype_base(PB::Cyclic(2), PB::Cyclic(4)));
        assert!(subtype_base(PB::Complete, PB::None));
    }

    #[test]
    fn frozen_meets() {
        assert_eq!(meet_base(PB::Cyclic(4), PB::Block(2), 8), PB::Complete);
        assert_eq!(meet_base(PB::Cyclic(2), PB::Cyclic(4), 8), PB::Cyclic(4));
        assert_eq!(meet_base(PB::None, PB::Block(4), 8), PB::Block(4));
        // lcm escaping the legal range collapses to complete.
        assert_eq!(meet_base(PB::Cyclic(4), PB::Cyclic(6), 12), PB::Complete);
    }

    #[test]
    fn subtype_matches_rule_closure() {
        for extent in [4u64, 6, 8, 12, 16, 24, 36] {
            let oracle = closure_oracle(extent);
            for &a in &lattice_elems(extent) {
                for &b in &lattice_elems(extent) {
                    assert_eq!(
                        subtype_base(a, b),
                        oracle(a, b),
                        "extent {extent}: {a} <: {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn lattice_laws_hold() {
        for extent in [4u64, 6, 8, 9, 12, 16, 30] {
            let elems = lattice_elems(extent);
            for &x in &elems {
                assert_eq!(meet_base(x, x, extent), x, "idempotent at {x}");
                for &y in &elems {
                    let m = meet_base(x, y, extent);
                    assert_eq!(m, meet_base(y, x, extent), "commutative {x},{y}");
                    // Order agreement: x <: y iff meet(x, y) = x.
                    assert_eq!(subtype_base(x, y), m == x, "order/meet {x},{y}");
                    // The meet is a lower bound...
                    assert!(subtype_base(m, x) && subtype_base(m, y));
                    for &z in &elems {
                        assert_eq!(
                            meet_base(meet_base(x, y, extent), z, extent),
                            meet_base(x, meet_base(y, z, extent), extent),
                            "associative {x},{y},{z}"
                        );
                        // ...and the greatest one.
                        if subtype_base(z, x) && subtype_base(z, y) {
                            assert!(subtype_base(z, m), "glb {x},{y},{z}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn array_subtype_is_pointwise() {
        let arg = PartitionType(vec![PB::Complete, PB::Cyclic(4)]);
        let param = PartitionType(vec![PB::Cyclic(2), PB::Cyclic(2)]);
        assert!(subtype(&arg, &param));
        let bad = PartitionType(vec![PB::None, PB::Cyclic(4)]);
        assert!(!subtype(&bad, &param));
    }

    #[test]
    fn call_compat_frozen_examples() {
        // An argument partitioned completely may feed a cyclic(32) parameter;
        // an unpartitioned argument may not.
        let param = PartitionType(vec![PB::Cyclic(32)]);
        assert!(call_compatible(&PartitionType(vec![PB::Complete]), &param));
        assert!(!call_compatible(&PartitionType(vec![PB::None]), &param));
    }

    #[test]
    fn factor_legality() {
        assert!(legal_factor(2, 8) && legal_factor(4, 8));
        assert!(!legal_factor(1, 8));
        assert!(!legal_factor(8, 8));
        assert!(!legal_factor(3, 8));
        assert!(!legal_factor(16, 8));
    }

    #[test]
    fn depth_counts_prime_factors() {
        assert_eq!(lattice_depth(8), 3);
        assert_eq!(lattice_depth(12), 3);
        assert_eq!(lattice_depth(6), 2);
        assert_eq!(lattice_depth(7), 1);
        assert_eq!(lattice_depth(1), 1);
        // Longest chain exists: none > cyclic(2) > cyclic(4) > complete on 8.
        assert!(subtype_base(PB::Cyclic(4), PB::Cyclic(2)));
    }

    #[test]
    fn propagation_reaches_cross_function_closure() {
        // Chain a - b - c where only a-b is a cross-function edge: seeding a
        // updates b but stops there.
        let mut nodes = vec![
            PropNode { ty: PartitionType::top(1), shape: vec![8] },
            PropNode { ty: PartitionType::top(1), shape: vec![8] },
            PropNode { ty: PartitionType::top(1), shape: vec![8] },
        ];
        let cross = vec![vec![1], vec![0], vec![]];
        let updates = propagate(
            &mut nodes,
            &cross,
            vec![(0, PartitionType(vec![PB::Cyclic(2)]))],
        )
        .unwrap();
        assert_eq!(updates, 2);
        assert_eq!(nodes[0].ty.0[0], PB::Cyclic(2));
        assert_eq!(nodes[1].ty.0[0], PB::Cyclic(2));
        assert_eq!(nodes[2].ty.0[0], PB::None);
    }

    #[test]
    fn propagation_meets_conflicting_seeds() {
        let mut nodes = vec![
            PropNode { ty: PartitionType::top(1), shape: vec![8] },
            PropNode { ty: PartitionType::top(1), shape: vec![8] },
        ];
        let cross = vec![vec![1], vec![0]];
        propagate(
            &mut nodes,
            &cross,
            vec![
                (0, PartitionType(vec![PB::Cyclic(2)])),
                (1, PartitionType(vec![PB::Block(2)])),
            ],
        )
        .unwrap();
        // cyclic(2) meet block(2) collapses to complete on both nodes.
        assert_eq!(nodes[0].ty.0[0], PB::Complete);
        assert_eq!(nodes[1].ty.0[0], PB::Complete);
    }
}
