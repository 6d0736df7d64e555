//! Line-oriented schedule scripts.
//!
//! Schedules live in `.sch` files, separate from kernels, so the same
//! algorithm can ship with many customizations. The format is one
//! command per line; `#` starts a comment:
//!
//! ```text
//! customize gemm as s
//! s.split k 4
//! s.reorder k.outer j k.inner
//! s.pipeline j 1
//! s.partition B cyclic dim=1 factor=2
//! s.unfold pe axis=0,1 as pes
//! s.relay buf_A pes axis=1 depth=5
//! top.compose s id=FFN1
//! build s target=hls
//! ```
//!
//! `relay <array> <dst> …` dispatches on `dst`: a name introduced by an
//! `unfold … as` clause (or the band name itself) selects the grid form
//! and requires `axis=`; any other name is treated as the downstream
//! function of a top-level relay.

use crate::diag::{Diag, Result};
use crate::ir::IrModule;
use crate::layout::PartitionBase;
use crate::sched::Schedule;
use std::collections::HashMap;

/// What the script asked to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildTarget {
    Sim,
    Hls,
}

/// The result of running a script: the schedule named by its `build`
/// line, already built, plus the requested backend.
#[derive(Debug)]
pub struct ScriptOutcome {
    pub schedule: Schedule,
    pub target: BuildTarget,
}

struct Entry {
    schedule: Schedule,
    /// Names bound by `unfold … as`, mapping to the unfolded band.
    grids: HashMap<String, String>,
}

/// Run a schedule script against a compiled module.
pub fn run_script(m: &IrModule, text: &str, path: &str) -> Result<ScriptOutcome> {
    let mut env: HashMap<String, Entry> = HashMap::new();
    let mut outcome: Option<(String, BuildTarget)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        run_line(m, line, &mut env, &mut outcome)
            .map_err(|d| d.prefix(&format!("{path}:{}", idx + 1)))?;
    }
    let (name, target) = outcome.ok_or_else(|| {
        Diag::user_nospan(format!("{path}: script has no `build` command"))
    })?;
    let mut entry = env.remove(&name).unwrap();
    entry.schedule.build()?;
    Ok(ScriptOutcome { schedule: entry.schedule, target })
}

fn run_line(
    m: &IrModule,
    line: &str,
    env: &mut HashMap<String, Entry>,
    outcome: &mut Option<(String, BuildTarget)>,
) -> Result<()> {
    let words: Vec<&str> = line.split_whitespace().collect();
    match words[0] {
        "customize" => {
            let (func, name) = match words.as_slice() {
                [_, func, "as", name] => (*func, *name),
                _ => return Err(usage("customize <func> as <name>")),
            };
            if env.contains_key(name) {
                return Err(Diag::user_nospan(format!(
                    "schedule `{name}` is already defined"
                )));
            }
            let schedule = Schedule::customize(m, func)?;
            env.insert(
                name.to_string(),
                Entry { schedule, grids: HashMap::new() },
            );
            Ok(())
        }
        "build" => {
            let (name, target) = match words.as_slice() {
                [_, name, tgt] => (*name, *tgt),
                _ => return Err(usage("build <name> target=<sim|hls>")),
            };
            if !env.contains_key(name) {
                return Err(unknown_schedule(name));
            }
            let target = match kv(target, "target")? {
                "sim" => BuildTarget::Sim,
                "hls" => BuildTarget::Hls,
                other => {
                    return Err(Diag::user_nospan(format!(
                        "unknown build target `{other}` (expected sim or hls)"
                    )))
                }
            };
            if outcome.is_some() {
                return Err(Diag::user_nospan(
                    "script has more than one `build` command",
                ));
            }
            *outcome = Some((name.to_string(), target));
            Ok(())
        }
        head => {
            let Some((name, cmd)) = head.split_once('.') else {
                return Err(Diag::user_nospan(format!(
                    "unknown command `{head}` (expected customize, build, or <schedule>.<primitive>)"
                )));
            };
            if !env.contains_key(name) {
                return Err(unknown_schedule(name));
            }
            if cmd == "compose" {
                return run_compose(name, &words[1..], env);
            }
            let entry = env.get_mut(name).unwrap();
            run_prim(entry, cmd, &words[1..])
        }
    }
}

fn run_compose(top: &str, args: &[&str], env: &mut HashMap<String, Entry>) -> Result<()> {
    let (sub_name, id) = match args {
        [sub] => (*sub, None),
        [sub, id] => (*sub, Some(kv(id, "id")?)),
        _ => return Err(usage("<top>.compose <sub> [id=<id>]")),
    };
    let sub = env
        .get(sub_name)
        .ok_or_else(|| unknown_schedule(sub_name))?
        .schedule
        .clone();
    env.get_mut(top).unwrap().schedule.compose(&sub, id)
}

fn run_prim(entry: &mut Entry, cmd: &str, args: &[&str]) -> Result<()> {
    let s = &mut entry.schedule;
    match cmd {
        "split" => match args {
            [l, f] => s.split(l, int(f, "factor")?),
            _ => Err(usage("<s>.split <loop> <factor>")),
        },
        "reorder" => {
            if args.len() < 2 {
                return Err(usage("<s>.reorder <loop> <loop>…"));
            }
            s.reorder(args)
        }
        "fuse" => {
            if args.len() < 2 {
                return Err(usage("<s>.fuse <loop> <loop>…"));
            }
            // Fusing more than two loops folds left: the fused result
            // keeps absorbing the next loop in the list.
            let mut outer = args[0].to_string();
            for inner in &args[1..] {
                s.fuse(&outer, inner)?;
                outer = format!("{outer}.{inner}.fused");
            }
            Ok(())
        }
        "unroll" => match args {
            [l, f] => s.unroll(l, int(f, "factor")?),
            _ => Err(usage("<s>.unroll <loop> <factor>")),
        },
        "pipeline" => match args {
            [l] => s.pipeline(l, 1),
            [l, ii] => s.pipeline(l, int(ii, "ii")?),
            _ => Err(usage("<s>.pipeline <loop> [<ii>]")),
        },
        "unfold" => {
            let (band, axes, alias) = match args {
                [band, axes, "as", alias] => (*band, *axes, *alias),
                _ => return Err(usage("<s>.unfold <band> axis=<list> as <name>")),
            };
            let axes = int_list(kv(axes, "axis")?)?;
            s.unfold(band, &axes)?;
            entry.grids.insert(alias.to_string(), band.to_string());
            Ok(())
        }
        "buffer_at" => match args {
            [mem, l] => s.buffer_at(mem, l, None),
            [mem, l, "as", name] => s.buffer_at(mem, l, Some(name)),
            _ => Err(usage("<s>.buffer_at <array> <loop> [as <buf>]")),
        },
        "reuse_at" => match args {
            [mem, l] => s.reuse_at(mem, l, None),
            [mem, l, "as", name] => s.reuse_at(mem, l, Some(name)),
            _ => Err(usage("<s>.reuse_at <array> <loop> [as <buf>]")),
        },
        "partition" => {
            let (mem, mode, rest) = match args {
                [mem, mode, rest @ ..] if !rest.is_empty() => (*mem, *mode, rest),
                _ => {
                    return Err(usage(
                        "<s>.partition <array> <mode> dim=<list> [factor=<f>]",
                    ))
                }
            };
            let dims = int_list(kv(rest[0], "dim")?)?;
            let factor = match rest.len() {
                1 => None,
                2 => Some(int(kv(rest[1], "factor")?, "factor")?),
                _ => {
                    return Err(usage(
                        "<s>.partition <array> <mode> dim=<list> [factor=<f>]",
                    ))
                }
            };
            let base = match (mode, factor) {
                ("complete", None) => PartitionBase::Complete,
                ("cyclic", Some(f)) => PartitionBase::Cyclic(f),
                ("block", Some(f)) => PartitionBase::Block(f),
                ("complete", Some(_)) => {
                    return Err(Diag::user_nospan(
                        "complete partitioning takes no factor",
                    ))
                }
                ("cyclic" | "block", None) => {
                    return Err(Diag::user_nospan(format!(
                        "{mode} partitioning needs factor=<f>"
                    )))
                }
                (other, _) => {
                    return Err(Diag::user_nospan(format!(
                        "unknown partition mode `{other}` (expected complete, cyclic, or block)"
                    )))
                }
            };
            for d in dims {
                s.partition(mem, d, base)?;
            }
            Ok(())
        }
        "relay" => {
            let (mem, dst, rest) = match args {
                [mem, dst, rest @ ..] => (*mem, *dst, rest),
                _ => {
                    return Err(usage(
                        "<s>.relay <array> <dst> [axis=<a>] depth=<d>",
                    ))
                }
            };
            let mut axis = None;
            let mut depth = None;
            for r in rest {
                if let Some(v) = r.strip_prefix("axis=") {
                    axis = Some(int(v, "axis")? as usize);
                } else if let Some(v) = r.strip_prefix("depth=") {
                    depth = Some(int(v, "depth")?);
                } else {
                    return Err(Diag::user_nospan(format!(
                        "unexpected argument `{r}` to relay"
                    )));
                }
            }
            let depth = depth.ok_or_else(|| {
                Diag::user_nospan("relay needs depth=<d>")
            })?;
            let band = entry
                .grids
                .get(dst)
                .cloned()
                .or_else(|| {
                    entry.grids.values().any(|b| b == dst).then(|| dst.to_string())
                });
            match (band, axis) {
                (Some(band), Some(axis)) => {
                    entry.schedule.relay_grid(mem, &band, axis, depth)
                }
                (Some(_), None) => Err(Diag::user_nospan(
                    "relay onto an unfolded grid needs axis=<a>",
                )),
                (None, Some(_)) => Err(Diag::user_nospan(format!(
                    "axis= applies only to grid relays, and `{dst}` is not an unfolded grid"
                ))),
                (None, None) => entry.schedule.relay(mem, depth),
            }
        }
        other => Err(Diag::user_nospan(format!(
            "unknown primitive `{other}`"
        ))),
    }
}

fn usage(u: &str) -> Diag {
    Diag::user_nospan(format!("usage: {u}"))
}

fn unknown_schedule(name: &str) -> Diag {
    Diag::user_nospan(format!(
        "unknown schedule `{name}` (introduce it with `customize <func> as {name}`)"
    ))
}

fn kv<'a>(word: &'a str, key: &str) -> Result<&'a str> {
    word.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| Diag::user_nospan(format!("expected {key}=<value>, got `{word}`")))
}

fn int(text: &str, what: &str) -> Result<u64> {
    text.parse().map_err(|_| {
        Diag::user_nospan(format!("{what} must be an integer, got `{text}`"))
    })
}

fn int_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|p| {
            p.trim().parse().map_err(|_| {
                Diag::user_nospan(format!("expected a list of integers, got `{text}`"))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::compile_source;

    const GEMM8: &str = "\
def gemm(A: int32[8, 8], B: int32[8, 8], C: int32[8, 8]):
    for i in range(8):
        for j in range(8):
            for k in range(8):
                C[i, j] += A[i, k] * B[k, j]
";

    fn gemm() -> IrModule {
        compile_source("gemm.adl", GEMM8).unwrap()
    }

    #[test]
    fn a_full_script_builds() {
        let script = "\
# row-wise product
customize gemm as s
s.reorder k j          # hoist the reduction
s.buffer_at C i as C_row
s.pipeline j
s.partition B cyclic dim=1 factor=2
build s target=hls
";
        let out = run_script(&gemm(), script, "rowwise.sch").unwrap();
        assert_eq!(out.target, BuildTarget::Hls);
        assert_eq!(out.schedule.target(), "gemm");
        let f = out.schedule.program().func("gemm").unwrap();
        assert!(f.locals.iter().any(|d| d.name == "C_row"));
    }

    #[test]
    fn split_pipeline_and_defaults() {
        let script = "\
customize gemm as s
s.split k 4
s.pipeline k.inner
build s target=sim
";
        let out = run_script(&gemm(), script, "t.sch").unwrap();
        let f = out.schedule.program().func("gemm").unwrap();
        let l = f.find_loop("k.inner").unwrap();
        assert_eq!(l.pipeline_ii, Some(1));
    }

    #[test]
    fn errors_carry_file_and_line() {
        let script = "customize gemm as s\ns.split q 4\nbuild s target=sim\n";
        let err = run_script(&gemm(), script, "bad.sch").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.sch:2"), "{msg}");
        assert!(msg.contains('q'), "{msg}");
    }

    #[test]
    fn missing_build_is_rejected() {
        let err = run_script(&gemm(), "customize gemm as s\n", "x.sch").unwrap_err();
        assert!(err.to_string().contains("no `build` command"), "{err}");
    }

    #[test]
    fn duplicate_build_is_rejected() {
        let script = "\
customize gemm as s
build s target=sim
build s target=hls
";
        let err = run_script(&gemm(), script, "x.sch").unwrap_err();
        assert!(err.to_string().contains("more than one"), "{err}");
    }

    #[test]
    fn unknown_schedule_names_are_reported() {
        let err = run_script(&gemm(), "t.split k 4\nbuild t target=sim\n", "x.sch").unwrap_err();
        assert!(err.to_string().contains("unknown schedule `t`"), "{err}");
    }

    #[test]
    fn partition_modes_parse() {
        let script = "\
customize gemm as s
s.partition A complete dim=0,1
s.partition B block dim=0 factor=4
build s target=sim
";
        let out = run_script(&gemm(), script, "p.sch").unwrap();
        let f = out.schedule.program().func("gemm").unwrap();
        let a = f.params.iter().find(|d| d.name == "A").unwrap();
        assert_eq!(a.layout.0[0], PartitionBase::Complete);
        assert_eq!(a.layout.0[1], PartitionBase::Complete);
        let b = f.params.iter().find(|d| d.name == "B").unwrap();
        assert_eq!(b.layout.0[0], PartitionBase::Block(4));
    }

    #[test]
    fn compose_runs_through_the_script() {
        let src = "\
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
        let m = compile_source("two.adl", src).unwrap();
        let script = "\
customize mm as inner
inner.split k 4
customize top as t
t.compose inner id=first
build t target=sim
";
        let out = run_script(&m, script, "c.sch").unwrap();
        let f = out.schedule.program().func("mm_first").unwrap();
        assert!(f.find_loop("k.outer").is_some());
        let g = out.schedule.program().func("mm_second").unwrap();
        assert!(g.find_loop("k.outer").is_none());
    }

    #[test]
    fn grid_relay_dispatches_on_the_unfold_alias() {
        // A 2-wide band where each PE reads the same row stream; the
        // grid relay should only accept axis + depth once the band has
        // been unfolded under an alias.
        let src = "\
def f(A: int32[2], B: int32[2, 4]):
    for i, j in grid(2, 4, name=\"pe\"):
        B[i, j] = A[i] + j
";
        let m = compile_source("g.adl", src).unwrap();
        let script = "\
customize f as s
s.unfold pe axis=0,1 as pes
s.relay A pes depth=3
build s target=sim
";
        let err = run_script(&m, script, "g.sch").unwrap_err();
        assert!(err.to_string().contains("axis"), "{err}");
    }
}
