//! Randomized invariant checks that cut across modules: lattice laws,
//! propagation bounds, FIFO sizing vs. the cycle oracle, schedule
//! semantics preservation, replay determinism, pragma round-trips, and
//! parser fixpoints over the shipped corpus.

use miniallo::layout::{
    self, lattice_depth, lattice_elems, meet_base, subtype_base, PartitionBase, PartitionType,
    PropNode,
};
use miniallo::sched::{replay, Schedule};
use miniallo::stream::{f_con, f_prod, fifo_depth, min_stall_free_depth, simulate_edge, RateSpec};
use miniallo::{ast, check, hls, parser, perf, sim};
use proptest::prelude::*;

const GEMM8: &str = "\
def gemm(A: int32[8, 8], B: int32[8, 8], C: int32[8, 8]):
    for i in range(8):
        for j in range(8):
            for k in range(8):
                C[i, j] += A[i, k] * B[k, j]
";

fn even_extent() -> impl Strategy<Value = u64> {
    prop_oneof![Just(4u64), Just(6), Just(8), Just(12), Just(16), Just(24)]
}

fn elem_of(extent: u64) -> impl Strategy<Value = PartitionBase> {
    let elems = lattice_elems(extent);
    let n = elems.len();
    (0..n).prop_map(move |i| elems[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// meet is commutative, associative, idempotent, and the greatest
    /// lower bound under the subtype order.
    #[test]
    fn meet_is_the_glb((extent, picks) in even_extent().prop_flat_map(|e| {
        (Just(e), proptest::collection::vec(elem_of(e), 3))
    })) {
        let (a, b, c) = (picks[0], picks[1], picks[2]);
        prop_assert_eq!(meet_base(a, b, extent), meet_base(b, a, extent));
        prop_assert_eq!(
            meet_base(meet_base(a, b, extent), c, extent),
            meet_base(a, meet_base(b, c, extent), extent)
        );
        prop_assert_eq!(meet_base(a, a, extent), a);
        let m = meet_base(a, b, extent);
        prop_assert!(subtype_base(m, a));
        prop_assert!(subtype_base(m, b));
        for z in lattice_elems(extent) {
            if subtype_base(z, a) && subtype_base(z, b) {
                prop_assert!(subtype_base(z, m), "{z:?} below both but not below meet {m:?}");
            }
        }
    }

    /// Layout propagation reaches the same fixed point no matter the
    /// worklist pop order, and its update count respects the M x D bound.
    #[test]
    fn propagation_is_confluent_and_bounded(
        n in 2usize..24,
        edge_bits in proptest::collection::vec(any::<bool>(), 24 * 24),
        seed_picks in proptest::collection::vec((0usize..24, 0usize..6), 1..5),
        pops in proptest::collection::vec(any::<usize>(), 0..64),
    ) {
        let extent = 8u64;
        let elems = lattice_elems(extent);
        let mut cross = vec![Vec::new(); n];
        for a in 0..n {
            for b in (a + 1)..n {
                if edge_bits[a * 24 + b] {
                    cross[a].push(b);
                    cross[b].push(a);
                }
            }
        }
        let seeds: Vec<(usize, PartitionType)> = seed_picks
            .iter()
            .map(|&(node, e)| (node % n, PartitionType(vec![elems[e % elems.len()]])))
            .collect();
        let fresh = || {
            (0..n)
                .map(|_| PropNode { ty: PartitionType::top(1), shape: vec![extent] })
                .collect::<Vec<_>>()
        };

        let mut a_nodes = fresh();
        let ups = layout::propagate(&mut a_nodes, &cross, seeds.clone()).unwrap();
        prop_assert!(
            ups <= n as u64 * lattice_depth(extent),
            "updates {ups} exceed bound {}",
            n as u64 * lattice_depth(extent)
        );

        let mut b_nodes = fresh();
        let mut i = 0usize;
        layout::propagate_with(&mut b_nodes, &cross, seeds.clone(), |len| {
            let at = pops.get(i).copied().unwrap_or(0) % len.max(1);
            i += 1;
            at
        })
        .unwrap();
        for (x, y) in a_nodes.iter().zip(&b_nodes) {
            prop_assert_eq!(&x.ty, &y.ty);
        }

        // Full-relaxation oracle: meet across every edge until stable.
        let mut o_nodes = fresh();
        for (node, ty) in &seeds {
            let m = layout::meet(ty, &o_nodes[*node].ty, &o_nodes[*node].shape);
            o_nodes[*node].ty = m;
        }
        loop {
            let mut changed = false;
            for a in 0..n {
                for &b in &cross[a] {
                    let m = layout::meet(&o_nodes[a].ty.clone(), &o_nodes[b].ty, &o_nodes[b].shape);
                    if m != o_nodes[b].ty {
                        o_nodes[b].ty = m;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for (x, y) in a_nodes.iter().zip(&o_nodes) {
            prop_assert_eq!(&x.ty, &y.ty);
        }
    }

    /// The closed-form FIFO depth is exactly the smallest depth at which
    /// the cycle-stepped simulation never blocks a write; production
    /// dominates consumption pointwise.
    #[test]
    fn fifo_depth_matches_the_cycle_oracle(
        c_src in 1u64..=12, ii_src in 1u64..=12,
        c_dst in 1u64..=12, ii_dst in 1u64..=12,
        v in 1u64..=128,
    ) {
        let r = RateSpec { c_src, ii_src, c_dst, ii_dst, v };
        for t in 0..64 {
            prop_assert!(f_con(t, &r) <= f_prod(t, &r));
            prop_assert!(f_prod(t, &r) <= v);
        }
        let d = fifo_depth(&r);
        prop_assert_eq!(d, min_stall_free_depth(&r));
        let rep = simulate_edge(&r, d);
        prop_assert_eq!(rep.blocked_writes, 0);
        if d > 1 {
            prop_assert!(simulate_edge(&r, d - 1).blocked_writes > 0);
        }
    }

    /// Random compute-primitive sequences preserve kernel semantics,
    /// replay byte-exactly from pristine IR, and hash deterministically.
    #[test]
    fn schedules_preserve_semantics_and_replay(
        picks in proptest::collection::vec((0u8..5, 0u8..4), 1..5),
        seed in any::<u64>(),
    ) {
        let m = check::compile_source("gemm.adl", GEMM8).unwrap();
        let mut s = Schedule::customize(&m, "gemm").unwrap();
        for (which, knob) in &picks {
            // Invalid combinations fail transactionally and are skipped.
            let _ = match which {
                0 => s.split(["i", "j", "k"][(*knob % 3) as usize], [2, 4][(*knob % 2) as usize]),
                1 => s.reorder(&["k", "j"]),
                2 => s.pipeline("k", 1 + (*knob as u64 % 2)),
                3 => s.unroll("j", 2),
                _ => s.fuse("i", "j"),
            };
        }
        sim::equivalent(&m, "gemm", s.program(), "gemm", 3, seed).unwrap();
        let replayed = replay(s.pristine(), s.records()).unwrap();
        prop_assert_eq!(replayed.render(), s.program().render());
        prop_assert_eq!(s.schedule_hash(), s.schedule_hash());
    }

    /// Partition pragmas round-trip: the 1-indexed dims and factors in
    /// the emitted text reconstruct the 0-indexed layout exactly.
    #[test]
    fn partition_pragmas_round_trip(
        d0 in 0usize..6,
        d1 in 0usize..6,
    ) {
        let elems = lattice_elems(8);
        let layout = PartitionType(vec![elems[d0 % elems.len()], elems[d1 % elems.len()]]);
        let m = check::compile_source("gemm.adl", GEMM8).unwrap();
        let mut s = Schedule::customize(&m, "gemm").unwrap();
        for (dim, base) in layout.0.iter().enumerate() {
            if *base != PartitionBase::None {
                s.partition("A", dim, *base).unwrap();
            }
        }
        let text = hls::emit(s.program(), None).unwrap();
        let re = regex::Regex::new(
            r"#pragma HLS array_partition variable=A (complete|cyclic factor=(\d+)|block factor=(\d+)) dim=(\d+)",
        )
        .unwrap();
        let mut rebuilt = PartitionType::top(2);
        for cap in re.captures_iter(&text) {
            let dim: usize = cap[4].parse().unwrap();
            let base = if cap[1].starts_with("complete") {
                PartitionBase::Complete
            } else if cap[1].starts_with("cyclic") {
                PartitionBase::Cyclic(cap[2].parse().unwrap())
            } else {
                PartitionBase::Block(cap[3].parse().unwrap())
            };
            if dim == 0 {
                // complete on every dimension
                rebuilt = PartitionType(vec![PartitionBase::Complete; 2]);
            } else {
                rebuilt.0[dim - 1] = base;
            }
        }
        prop_assert_eq!(rebuilt, layout);
    }

    /// Estimated latency of an unpipelined nest is invariant under loop
    /// interchange: reorder changes locality, not trip counts.
    #[test]
    fn latency_is_reorder_invariant(perm in 0usize..6) {
        let orders: [[&str; 3]; 6] = [
            ["i", "j", "k"], ["i", "k", "j"], ["j", "i", "k"],
            ["j", "k", "i"], ["k", "i", "j"], ["k", "j", "i"],
        ];
        let m = check::compile_source("gemm.adl", GEMM8).unwrap();
        let cfg = perf::LatencyConfig::default();
        let base = perf::latency(&m, "gemm", &cfg).unwrap().total;
        let mut s = Schedule::customize(&m, "gemm").unwrap();
        s.reorder(&orders[perm]).unwrap();
        let t = perf::latency(s.program(), "gemm", &cfg).unwrap().total;
        prop_assert_eq!(t, base);
    }
}

/// Every shipped kernel parses, renders, and re-parses to the same text,
/// and compiles cleanly.
#[test]
fn corpus_kernels_round_trip() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../kernels");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("adl") {
            continue;
        }
        seen += 1;
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let src = std::fs::read_to_string(&path).unwrap();
        let ast1 = parser::parse(&name, &src).unwrap_or_else(|e| panic!("{name}: {e}"));
        let text = ast::render(&ast1);
        let ast2 = parser::parse(&name, &text).unwrap_or_else(|e| panic!("{name} rerender: {e}"));
        assert_eq!(ast::render(&ast2), text, "{name} render not a fixpoint");
        check::compile_source(&name, &src).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    assert!(seen >= 7, "expected the full kernel corpus, found {seen}");
}

/// Composition is associative: composing two kernel schedules into a
/// design in either order yields byte-identical built programs.
#[test]
fn composition_is_associative_on_the_corpus() {
    let src = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../kernels/cascade.adl"
    ))
    .unwrap();
    let m = check::compile_source("cascade.adl", &src).unwrap();
    let mut s1 = Schedule::customize(&m, "tiled_systolic").unwrap();
    s1.split("k", 4).unwrap();
    let mut s2 = Schedule::customize(&m, "tiled_systolic").unwrap();
    s2.pipeline("j", 1).unwrap();

    let mut ab = Schedule::customize(&m, "cascade").unwrap();
    ab.compose(&s1, Some("FFN1")).unwrap();
    ab.compose(&s2, Some("FFN2")).unwrap();
    let built_ab = ab.build().unwrap();

    let mut ba = Schedule::customize(&m, "cascade").unwrap();
    ba.compose(&s2, Some("FFN2")).unwrap();
    ba.compose(&s1, Some("FFN1")).unwrap();
    let built_ba = ba.build().unwrap();

    assert_eq!(built_ab.render(), built_ba.render());
}
