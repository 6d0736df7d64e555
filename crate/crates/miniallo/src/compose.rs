//! Composition of per-kernel schedules into a whole-design schedule.
//!
//! A library author customizes a kernel in isolation; a design author
//! pulls those customizations into the schedule of the surrounding
//! program with [`Schedule::compose`]. Composition is record
//! concatenation: the sub-schedule's record log is retargeted at the
//! matching instances and appended to the pending queue, to be applied
//! at [`Schedule::build`]. Conflicting loop customizations from
//! different composition batches are rejected; conflicting layout
//! requests resolve through the partition lattice instead.

use crate::dfg;
use crate::diag::{Diag, Result};
use crate::ir::IrModule;
use crate::layout::call_compatible;
use crate::sched::{Record, Schedule};

impl Schedule {
    /// Append `sub`'s customizations to this schedule.
    ///
    /// Without `inst`, the records fan out to every instance of `sub`'s
    /// target in this program (functions with that name, or instantiated
    /// from that template). With `inst`, only `<target>_<inst>` receives
    /// them.
    pub fn compose(&mut self, sub: &Schedule, inst: Option<&str>) -> Result<()> {
        let sub_target = sub.target();
        let instances: Vec<String> = match inst {
            Some(id) => {
                let name = format!("{sub_target}_{id}");
                if self.program.func(&name).is_none() {
                    return Err(Diag::user_nospan(format!(
                        "no instance `{name}` of `{sub_target}` in this program"
                    )));
                }
                vec![name]
            }
            None => {
                let found: Vec<String> = self
                    .program
                    .funcs
                    .iter()
                    .filter(|f| {
                        f.name == sub_target || f.template.as_deref() == Some(sub_target)
                    })
                    .map(|f| f.name.clone())
                    .collect();
                if found.is_empty() {
                    return Err(Diag::user_nospan(format!(
                        "no instance of `{sub_target}` in this program"
                    )));
                }
                found
            }
        };
        let batch = self.next_batch;
        self.next_batch += 1;
        let mut incoming = Vec::new();
        for instance in &instances {
            for rec in sub.records().iter().chain(sub.pending()) {
                incoming.push(Record {
                    func: instance.clone(),
                    prim: rec.prim.clone(),
                    batch,
                });
            }
        }
        for rec in &incoming {
            self.check_conflict(rec)?;
        }
        self.pending.extend(incoming);
        Ok(())
    }

    /// Reject records that customize the same loop of the same instance as
    /// an earlier batch, or relay a memory twice. Layout records never
    /// conflict: overlapping requests meet in the partition lattice.
    fn check_conflict(&self, rec: &Record) -> Result<()> {
        for prior in self.applied.iter().chain(&self.pending) {
            if prior.func != rec.func || prior.batch == rec.batch {
                continue;
            }
            if let (Some(a), Some(b)) = (rec.prim.relayed_mem(), prior.prim.relayed_mem()) {
                if a == b {
                    return Err(Diag::user_nospan(format!(
                        "`{a}` is already relayed in `{}`",
                        rec.func
                    ))
                    .with_rule("relay-duplicate"));
                }
            }
            if rec.prim.is_compute() && prior.prim.is_compute() {
                let mine = rec.prim.touched_loops();
                if let Some(l) = prior
                    .prim
                    .touched_loops()
                    .iter()
                    .find(|l| mine.contains(l))
                {
                    return Err(Diag::user_nospan(format!(
                        "composed schedules both customize loop `{l}` of `{}`",
                        rec.func
                    ))
                    .with_rule("compose-conflict"));
                }
            }
        }
        Ok(())
    }
}

/// Check every call boundary before layout unification: an argument layout
/// must be a subtype of the parameter layout it binds to. Sliced arguments
/// (stream endpoints selected from a FIFO array) are exempt.
pub fn check_interfaces(m: &IrModule) -> Result<()> {
    for f in &m.funcs {
        let mut failure = None;
        f.walk(&mut |s| {
            if let crate::ir::Stmt::Call(c) = s {
                let callee = match m.func(&c.callee) {
                    Some(cf) => cf,
                    None => return,
                };
                for (a, p) in c.args.iter().zip(&callee.params) {
                    if !a.prefix.is_empty() {
                        continue;
                    }
                    let arg = match f.decl(&a.mem) {
                        Some(d) => d,
                        None => continue,
                    };
                    if arg.ty.shape != p.ty.shape {
                        continue;
                    }
                    if !call_compatible(&arg.layout, &p.layout) && failure.is_none() {
                        failure = Some(
                            Diag::user_nospan(format!(
                                "layout mismatch calling `{}` from `{}`: argument `{}` has \
                                 layout {} but parameter `{}` requires {}",
                                c.callee, f.name, a.mem, arg.layout, p.name, p.layout
                            ))
                            .with_rule("layout-mismatch"),
                        );
                    }
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(())
}

/// Unify memory layouts across call boundaries by propagating partition
/// types over the dataflow graph until a fixed point.
pub fn unify_interfaces(m: &mut IrModule) -> Result<u64> {
    dfg::propagate_layouts(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::compile_source;
    use crate::layout::PartitionBase;
    use crate::sim;

    const DESIGN: &str = "\
def mm[T: (int32, float32), M: index](A: T[M, M], B: T[M, M], C: T[M, M]):
    for i in range(M):
        for j in range(M):
            for k in range(M):
                C[i, j] += A[i, k] * B[k, j]

def top(A: int32[8, 8], B: int32[8, 8], D: int32[8, 8], E: int32[8, 8]):
    C: int32[8, 8]
    call mm[int32, 8, \"first\"](A, B, C)
    call mm[int32, 8, \"second\"](C, D, E)
";

    fn design() -> IrModule {
        compile_source("design.adl", DESIGN).unwrap()
    }

    fn kernel_schedule() -> Schedule {
        let src = "\
def mm(A: int32[8, 8], B: int32[8, 8], C: int32[8, 8]):
    for i in range(8):
        for j in range(8):
            for k in range(8):
                C[i, j] += A[i, k] * B[k, j]
";
        let m = compile_source("mm.adl", src).unwrap();
        Schedule::customize(&m, "mm").unwrap()
    }

    #[test]
    fn compose_fans_out_to_all_instances() {
        let m = design();
        let mut top = Schedule::customize(&m, "top").unwrap();
        let mut sub = kernel_schedule();
        sub.split("k", 4).unwrap();
        sub.pipeline("k.inner", 1).unwrap();
        top.compose(&sub, None).unwrap();
        assert_eq!(top.pending().len(), 4);
        top.build().unwrap();
        for inst in ["mm_first", "mm_second"] {
            let f = top.program().func(inst).unwrap();
            assert!(f.find_loop("k.inner").is_some(), "{inst} missing split");
        }
        sim::equivalent(&m, "top", top.program(), "top", 5, 7).unwrap();
    }

    #[test]
    fn compose_targets_one_instance_by_id() {
        let m = design();
        let mut top = Schedule::customize(&m, "top").unwrap();
        let mut sub = kernel_schedule();
        sub.split("k", 2).unwrap();
        top.compose(&sub, Some("second")).unwrap();
        top.build().unwrap();
        assert!(top.program().func("mm_first").unwrap().find_loop("k").is_some());
        assert!(top.program().func("mm_second").unwrap().find_loop("k.outer").is_some());
    }

    #[test]
    fn compose_rejects_unknown_instance() {
        let m = design();
        let mut top = Schedule::customize(&m, "top").unwrap();
        let sub = kernel_schedule();
        let e = top.compose(&sub, Some("third")).unwrap_err();
        assert!(e.to_string().contains("no instance"), "{e}");
    }

    #[test]
    fn conflicting_loop_customizations_are_rejected() {
        let m = design();
        let mut top = Schedule::customize(&m, "top").unwrap();
        let mut a = kernel_schedule();
        a.split("k", 4).unwrap();
        let mut b = kernel_schedule();
        b.reorder(&["k", "j"]).unwrap();
        top.compose(&a, Some("first")).unwrap();
        // Different loops on the same instance are fine.
        let mut c = kernel_schedule();
        c.pipeline("j", 1).unwrap();
        top.compose(&c, Some("first")).unwrap();
        let e = top.compose(&b, Some("first")).unwrap_err();
        assert_eq!(e.rule.as_deref(), Some("compose-conflict"));
        // The same records on the other instance are fine.
        top.compose(&b, Some("second")).unwrap();
        top.build().unwrap();
    }

    #[test]
    fn conflicting_partitions_meet_instead_of_erroring() {
        let m = design();
        let mut top = Schedule::customize(&m, "top").unwrap();
        let mut a = kernel_schedule();
        a.partition("B", 1, PartitionBase::Cyclic(2)).unwrap();
        let mut b = kernel_schedule();
        b.partition("B", 1, PartitionBase::Cyclic(4)).unwrap();
        top.compose(&a, Some("first")).unwrap();
        top.compose(&b, Some("first")).unwrap();
        top.build().unwrap();
        let f = top.program().func("mm_first").unwrap();
        // lcm(2, 4) = 4 divides the extent, so the meet stays cyclic.
        assert_eq!(f.decl("B").unwrap().layout.0[1], PartitionBase::Cyclic(4));
    }

    #[test]
    fn interface_check_catches_unpartitioned_argument() {
        let m = design();
        let mut top = Schedule::customize(&m, "top").unwrap();
        let mut sub = kernel_schedule();
        sub.partition("A", 1, PartitionBase::Cyclic(4)).unwrap();
        top.compose(&sub, Some("second")).unwrap();
        top.apply_pending().unwrap();
        // Before unification the caller's `C` is still unpartitioned while
        // `mm_second` demands a cyclic layout.
        let e = check_interfaces(top.program()).unwrap_err();
        assert_eq!(e.rule.as_deref(), Some("layout-mismatch"));
        // Unification pushes the requirement through the whole design.
        let mut unified = top.program().clone();
        unify_interfaces(&mut unified).unwrap();
        check_interfaces(&unified).unwrap();
        let c = unified.func("top").unwrap().decl("C").unwrap();
        assert_eq!(c.layout.0[1], PartitionBase::Cyclic(4));
    }

    #[test]
    fn composition_is_associative() {
        let m = design();
        let mut s1 = kernel_schedule();
        s1.split("k", 4).unwrap();
        let mut s2 = kernel_schedule();
        s2.pipeline("j", 1).unwrap();

        // (top ∘ s1) ∘ s2
        let mut a = Schedule::customize(&m, "top").unwrap();
        a.compose(&s1, Some("first")).unwrap();
        a.compose(&s2, Some("second")).unwrap();
        let pa = a.build().unwrap();

        // top ∘ (s1 then s2 composed in the other grouping order)
        let mut b = Schedule::customize(&m, "top").unwrap();
        b.compose(&s2, Some("second")).unwrap();
        b.compose(&s1, Some("first")).unwrap();
        let pb = b.build().unwrap();

        assert_eq!(pa.render(), pb.render());
    }
}
