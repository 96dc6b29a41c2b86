//! Acceptance suite: one test per shipped guarantee, each printing a
//! pass line with the checked bound.  Run with `--nocapture` to see
//! them.

use pacc_core::ast::{ElemType, Expr, LoopCmp, Stmt};
use pacc_core::config::SimConfig;
use pacc_core::filter::{
    apply_filter, make_selection, split_even, DimChoice, PlanEntry, SplitPlan,
};
use pacc_core::gen::{generate, GenOptions};
use pacc_core::interp::{self, ArrayBuf, HostState, Value};
use pacc_core::lower::lower;
use pacc_core::parser::parse;
use pacc_core::pretty;
use pacc_core::runtime::adaptive::{split_bound, AdaptiveParams, AdaptiveState, Mode, StepInput};
use pacc_core::runtime::exchange::plan_exchange;
use pacc_core::runtime::machine::{simulate, SimOptions};
use pacc_core::runtime::pool::{PoolAllocator, PoolKind, Segment};
use pacc_core::runtime::queue::Scheduler;
use pacc_core::runtime::region::RegionId;
use pacc_core::samples;
use pacc_core::specialize::specialize;
use pacc_core::ssa::{build_ssa, compute_guards};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

const CORPUS_SEED: u64 = 20211217;
const CORPUS_SIZE: usize = 200;

fn corpus() -> Vec<String> {
    generate(CORPUS_SEED, CORPUS_SIZE, &GenOptions::default())
}

/// Reduction scalars of a program, discovered from its kernels.
fn reduction_scalars(program: &pacc_core::ast::Program) -> BTreeSet<String> {
    let lowered = lower(program).expect("corpus lowers");
    lowered
        .kernels
        .values()
        .flat_map(|k| k.reductions.iter().map(|(_, v)| v.clone()))
        .collect()
}

fn observable_oracle(program: &pacc_core::ast::Program, keep: &BTreeSet<String>) -> HostState {
    let mut oracle = interp::run(program, &HostState::default()).expect("oracle runs");
    oracle.scalars.retain(|k, _| keep.contains(k));
    oracle
}

#[test]
fn criterion_1_oracle_equivalence_over_corpus() {
    let start = Instant::now();
    let programs = corpus();
    assert_eq!(programs.len(), CORPUS_SIZE);
    for (i, src) in programs.iter().enumerate() {
        let program = parse(src).unwrap_or_else(|e| panic!("program {i} parse: {e}"));
        let reductions = reduction_scalars(&program);
        let oracle = observable_oracle(&program, &reductions);
        for devices in [1usize, 2, 4] {
            let result = simulate(
                &program,
                &SimConfig::default(),
                &HostState::default(),
                &SimOptions {
                    devices: Some(devices),
                    ..Default::default()
                },
            )
            .unwrap_or_else(|e| panic!("program {i} devices {devices}: {e}"));
            interp::compare_states(&oracle, &result.host, &reductions, 1e-10)
                .unwrap_or_else(|e| panic!("program {i} devices {devices}: {e}\n{src}"));
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "suite took {elapsed:?}, budget is 120 s"
    );
    println!(
        "[PASS] oracle equivalence: {CORPUS_SIZE} programs x devices {{1,2,4}}, arrays bit-exact, reductions <= 1e-10 rel, in {elapsed:?}"
    );
}

#[test]
fn criterion_2_five_statement_chain_golden_filter() {
    let program = parse(samples::CHAIN_FIVE).unwrap();
    let lowered = lower(&program).unwrap();
    let unit = lowered.kernels.values().next().unwrap();
    let graph = build_ssa(unit).unwrap();
    let analysis = compute_guards(&graph);
    let selection = make_selection(unit, &analysis, &graph);
    let filtered = apply_filter(unit, &analysis, &graph, &selection);

    // locate the five-statement loop body
    let mut body = &filtered.unit.body;
    loop {
        match body {
            Stmt::Directive { body: b, .. } => body = b,
            Stmt::For(l) => {
                body = &l.body;
                break;
            }
            other => panic!("unexpected shape: {other:?}"),
        }
    }
    let stmts = match body {
        Stmt::Block(items) => items,
        other => panic!("expected block, got {other:?}"),
    };
    assert_eq!(stmts.len(), 5);

    // guard arrays per statement, read off the predicate ASTs
    let guard_arrays = |cond: &Expr| -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        cond.walk(&mut |e| {
            if let Expr::Ident(name) = e {
                if let Some(arr) = name.strip_suffix("_lb") {
                    out.insert(arr.to_string());
                }
            }
        });
        out
    };
    let set = |names: &[&str]| -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    };
    match (&stmts[0], &stmts[1], &stmts[3], &stmts[4]) {
        (
            Stmt::Predicated { cond: c0, .. },
            Stmt::Predicated { cond: c1, .. },
            Stmt::Predicated { cond: c3, .. },
            Stmt::Predicated { cond: c4, .. },
        ) => {
            assert_eq!(guard_arrays(c0), set(&["a", "b"]));
            assert_eq!(guard_arrays(c1), set(&["b"]));
            assert_eq!(guard_arrays(c3), set(&["a", "b"]));
            assert_eq!(guard_arrays(c4), set(&["b"]));
        }
        other => panic!("writes not predicated: {other:?}"),
    }
    match &stmts[2] {
        Stmt::Assign { target, value, .. } => {
            assert_eq!(target.name, "x");
            match value {
                Expr::Ternary { cond, else_val, .. } => {
                    assert_eq!(guard_arrays(cond), set(&["a", "b"]));
                    assert_eq!(**else_val, Expr::Float(0.0));
                }
                other => panic!("read not guarded: {other:?}"),
            }
        }
        other => panic!("expected guarded scalar read, got {other:?}"),
    }
    // the filtered text is well-formed source
    assert!(pretty::print_stmt(&filtered.unit.body).contains("?"));
    println!("[PASS] five-statement chain golden filter: guard sets {{a,b}}/{{b}}/{{a,b}} at AST level");
}

#[test]
fn criterion_3_partition_property_over_corpus() {
    let programs = corpus();
    let mut checked = 0usize;
    for (i, src) in programs.iter().enumerate() {
        let program = parse(src).unwrap();
        for devices in [2usize, 4] {
            // single-device write sets per kernel execution order
            let single = simulate(
                &program,
                &SimConfig::default(),
                &HostState::default(),
                &SimOptions {
                    devices: Some(1),
                    log_writes: true,
                    adaptive: false,
                    ..Default::default()
                },
            )
            .unwrap();
            let multi = simulate(
                &program,
                &SimConfig::default(),
                &HostState::default(),
                &SimOptions {
                    devices: Some(devices),
                    log_writes: true,
                    adaptive: false,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(single.execs.len(), multi.execs.len());
            for (k, (se, me)) in single.execs.iter().zip(multi.execs.iter()).enumerate() {
                if me.plan.all_duplicated() {
                    continue;
                }
                let seq: BTreeSet<(String, usize)> = se
                    .write_logs
                    .iter()
                    .flatten()
                    .map(|w| (w.array.clone(), w.flat))
                    .collect();
                let mut union: BTreeSet<(String, usize)> = BTreeSet::new();
                for (d, log) in me.write_logs.iter().enumerate() {
                    for w in log {
                        // duplicated arrays may be written on every device
                        if me
                            .plan
                            .arrays
                            .get(&w.array)
                            .map(|e| e.duplicated)
                            .unwrap_or(true)
                        {
                            continue;
                        }
                        assert!(
                            union.insert((w.array.clone(), w.flat)),
                            "program {i} kernel {k} devices {devices}: device {d} overlaps on ({}, {})",
                            w.array,
                            w.flat
                        );
                    }
                }
                let seq_dist: BTreeSet<(String, usize)> = seq
                    .into_iter()
                    .filter(|(a, _)| {
                        me.plan
                            .arrays
                            .get(a)
                            .map(|e| !e.duplicated)
                            .unwrap_or(false)
                    })
                    .collect();
                assert_eq!(
                    union, seq_dist,
                    "program {i} kernel {k} devices {devices}: write union differs"
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 100, "only {checked} distributed kernels checked");
    println!(
        "[PASS] partition property: {checked} distributed kernel executions with disjoint, covering write sets"
    );
}

#[test]
fn criterion_4_block_solver_dimension_and_segments() {
    let program = parse(samples::BLOCK_SOLVER_6D).unwrap();
    let lowered = lower(&program).unwrap();
    let unit = lowered.kernels.values().next().unwrap();
    let graph = build_ssa(unit).unwrap();
    let analysis = compute_guards(&graph);
    let selection = make_selection(unit, &analysis, &graph);
    assert_eq!(
        selection.get("lhsY"),
        Some(&DimChoice::Split(4)),
        "tied plane dimensions must resolve to the leftmost"
    );

    // exchange plan for the 5x5x3xJx162x162 array over four devices
    let extents = vec![5usize, 5, 3, 7, 162, 162];
    let mut arrays = BTreeMap::new();
    arrays.insert(
        "lhsY".to_string(),
        PlanEntry {
            dim: 4,
            duplicated: false,
            ranges: split_even(162, 4),
            extents,
            elem_bytes: 8,
        },
    );
    let plan = SplitPlan {
        devices: 4,
        arrays,
        iter_ranges: vec![(i64::MIN, i64::MAX); 4],
        iter_split: true,
    };
    let ex = plan_exchange(&plan, &SimConfig::default());
    assert!(!ex.transfers.is_empty());
    for t in &ex.transfers {
        assert_eq!(t.segments, 75, "expected 75 strided copies per slice");
    }
    println!(
        "[PASS] block-solver selection: leftmost tied plane dimension (4); 4-device slice moves in 75 segments"
    );
}

#[test]
fn criterion_5_scheduler_waits_and_serialization() {
    // two producers force two waits; a single-dependency follower none
    let mut s = Scheduler::new(16);
    let a = RegionId(1);
    let b = RegionId(2);
    let c = RegionId(3);
    let d0 = s.schedule(&[], &[a], None);
    let d1 = s.schedule(&[], &[b], None);
    let d2 = s.schedule(&[a, b], &[c], None);
    assert_eq!(d2.waits.len(), 2, "both producers must be awaited");
    let waited: BTreeSet<usize> = d2.waits.iter().map(|w| w.queue).collect();
    assert_eq!(waited, [d0.queue, d1.queue].into_iter().collect());
    let d3 = s.schedule(&[b], &[], None);
    assert_eq!(d3.waits.len(), 0, "dependency already ordered");

    // dropping either wait of the two-producer step breaks ordering
    for drop in 0..2 {
        let trace = vec![
            Ev {
                queue: d0.queue,
                time: 1,
                reads: vec![],
                writes: vec![a],
                waits: vec![],
            },
            Ev {
                queue: d1.queue,
                time: 2,
                reads: vec![],
                writes: vec![b],
                waits: vec![],
            },
            Ev {
                queue: d2.queue,
                time: 3,
                reads: vec![a, b],
                writes: vec![c],
                waits: d2
                    .waits
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != drop)
                    .map(|(_, w)| w.queue)
                    .collect(),
            },
        ];
        assert!(
            !serialization_holds(&trace, 16),
            "removing wait {drop} must break per-region ordering"
        );
    }

    // randomized schedules: elision soundness and serialization
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut violations = 0usize;
    const TRIALS: usize = 10_000;
    for _ in 0..TRIALS {
        let queues = *[2usize, 3, 4, 8].iter().nth(rng.gen_range(0..4)).unwrap();
        let mut sched = Scheduler::new(queues);
        let regions: Vec<RegionId> = (0..rng.gen_range(2..6u64)).map(RegionId).collect();
        let mut trace: Vec<Ev> = Vec::new();
        for _ in 0..rng.gen_range(3..16usize) {
            let n_r = rng.gen_range(0..3usize).min(regions.len());
            let n_w = rng.gen_range(1..3usize).min(regions.len());
            let mut reads = Vec::new();
            for _ in 0..n_r {
                reads.push(regions[rng.gen_range(0..regions.len())]);
            }
            let mut writes = Vec::new();
            for _ in 0..n_w {
                writes.push(regions[rng.gen_range(0..regions.len())]);
            }
            let requested = if rng.gen_bool(0.2) {
                Some(rng.gen_range(0..queues as i64))
            } else {
                None
            };
            // elision soundness: every emitted wait still has an
            // unresolved dependency (its producer postdates the last
            // synchronization of the pair)
            let before: Vec<Vec<u64>> = (0..queues)
                .map(|q| (0..queues).map(|p| sched.sync_entry(q, p)).collect())
                .collect();
            let dec = sched.schedule(&reads, &writes, requested);
            for w in &dec.waits {
                if before[dec.queue][w.queue] >= w.dep_time {
                    violations += 1;
                }
            }
            trace.push(Ev {
                queue: dec.queue,
                time: dec.time,
                reads,
                writes,
                waits: dec.waits.iter().map(|x| x.queue).collect(),
            });
        }
        if !serialization_holds(&trace, queues) {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
    println!(
        "[PASS] scheduler: 2-producer scenario waits exactly {{2, 0}}; {TRIALS} random schedules, 0 elision or ordering violations"
    );
}

struct Ev {
    queue: usize,
    time: u64,
    reads: Vec<RegionId>,
    writes: Vec<RegionId>,
    waits: Vec<usize>,
}

/// Replays a schedule under host-join semantics: a wait recorded with
/// an event joins the waited queue (and the event's own queue) at the
/// event's time, ordering everything that queue had scheduled before
/// the join ahead of everything scheduled afterwards.
fn serialization_holds(trace: &[Ev], queues: usize) -> bool {
    // joins per queue, at host times
    let mut joins: Vec<Vec<u64>> = vec![Vec::new(); queues];
    for e in trace {
        for w in &e.waits {
            joins[*w].push(e.time);
            joins[e.queue].push(e.time);
        }
    }
    let ordered = |p: &Ev, e: &Ev| -> bool {
        // threshold per queue: events on q at/after thresh[q] are
        // ordered after p
        let mut thresh: Vec<Option<u64>> = vec![None; queues];
        thresh[p.queue] = Some(p.time + 1);
        loop {
            let mut changed = false;
            for q in 0..queues {
                let tq = match thresh[q] {
                    Some(t) => t,
                    None => continue,
                };
                // an event on q in [tq, T) drained by a join at T
                // orders everything scheduled at/after T
                for &t_join in &joins[q] {
                    if t_join < tq {
                        continue;
                    }
                    let witness = trace
                        .iter()
                        .any(|x| x.queue == q && x.time >= tq && x.time < t_join);
                    let covers_p = q == p.queue && p.time < t_join;
                    if witness || covers_p {
                        for q2 in 0..queues {
                            if thresh[q2].map(|t| t > t_join).unwrap_or(true) {
                                thresh[q2] = Some(t_join);
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        thresh[e.queue].map(|t| e.time >= t).unwrap_or(false)
    };
    for (k, e) in trace.iter().enumerate() {
        for r in e.reads.iter().chain(e.writes.iter()) {
            // latest earlier writer of r
            if let Some(p) = trace[..k]
                .iter()
                .filter(|x| x.writes.contains(r))
                .next_back()
            {
                if p.queue != e.queue && !ordered(p, e) {
                    return false;
                }
            }
        }
    }
    true
}

#[test]
fn criterion_6_adaptive_controller_against_brute_force() {
    // worked example: 10 ms kernel, 4 devices, 25 MB writes, 25 GB/s
    let rhs = split_bound(10e-3, 4, 25_000_000, 25e9);
    assert_eq!(rhs, 10e-3 / 4.0 + 25_000_000.0 / 25e9);
    assert!((rhs - 3.5e-3).abs() < 1e-15);
    assert!(10e-3 > rhs, "the example must count toward switching");

    // independent re-evaluation of the mode rules
    #[derive(Clone, Copy, PartialEq, Debug)]
    enum RefMode {
        Warmup,
        Profiling,
        Multi,
        Final,
    }
    fn brute_force(samples: &[StepInput], n: usize, peak: f64) -> Vec<RefMode> {
        let mut mode = RefMode::Warmup;
        let mut eff_samples: Vec<f64> = Vec::new();
        let mut hits = 0;
        let mut strikes = 0;
        let mut margins: Vec<f64> = Vec::new();
        let mut out = Vec::new();
        for s in samples {
            match mode {
                RefMode::Warmup => {
                    mode = if n >= 2 { RefMode::Profiling } else { RefMode::Warmup };
                }
                RefMode::Profiling => {
                    if n >= 2 && s.write_size > 0 {
                        eff_samples.push(s.t_kernel / s.write_size as f64);
                        if s.t_kernel > s.t_kernel / n as f64 + s.write_size as f64 / peak {
                            hits += 1;
                        }
                        if hits >= 5 {
                            mode = RefMode::Multi;
                        }
                    }
                }
                RefMode::Multi => {
                    let eff: f64 =
                        eff_samples.iter().sum::<f64>() / eff_samples.len().max(1) as f64;
                    let total = s.t_kernel + s.t_comm;
                    let r2 = s.t_kernel * n as f64;
                    let r3 = eff * s.write_size as f64;
                    if total > r2 || total > r3 {
                        strikes += 1;
                    }
                    margins.push(total - r2.min(r3));
                    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
                    if strikes >= 5 && mean > 0.0 {
                        mode = RefMode::Final;
                    }
                }
                RefMode::Final => {}
            }
            out.push(mode);
        }
        out
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    const TRACES: usize = 1000;
    for _ in 0..TRACES {
        let n = [2usize, 4, 8][rng.gen_range(0..3)];
        let peak = [12.5e9, 25e9, 50e9][rng.gen_range(0..3)];
        let len = rng.gen_range(1..40usize);
        let samples: Vec<StepInput> = (0..len)
            .map(|_| StepInput {
                t_kernel: 10f64.powf(rng.gen_range(-5.0..-1.0)),
                t_comm: if rng.gen_bool(0.3) {
                    0.0
                } else {
                    10f64.powf(rng.gen_range(-6.0..-2.0))
                },
                write_size: if rng.gen_bool(0.1) {
                    0
                } else {
                    rng.gen_range(1..200_000_000u64)
                },
            })
            .collect();
        let expected = brute_force(&samples, n, peak);
        let mut st = AdaptiveState::default();
        let got: Vec<Mode> = samples
            .iter()
            .map(|s| {
                st.step(
                    *s,
                    AdaptiveParams {
                        devices: n,
                        peak_p2p: peak,
                    },
                )
            })
            .collect();
        for (e, g) in expected.iter().zip(got.iter()) {
            let same = matches!(
                (e, g),
                (RefMode::Warmup, Mode::DupWarmup)
                    | (RefMode::Profiling, Mode::DupProfiling)
                    | (RefMode::Multi, Mode::Multi)
                    | (RefMode::Final, Mode::DupFinal)
            );
            assert!(same, "controller {g:?} disagrees with reference {e:?}");
        }
    }
    println!(
        "[PASS] adaptive controller: {TRACES} random traces agree with brute force; split bound example = 3.5 ms"
    );
}

#[test]
fn criterion_7_stencil_cost_trend() {
    let launch = SimConfig::default().launch_overhead_s;
    for ni in [48usize, 64, 96] {
        let (nj, nk) = (8usize, 8);
        let p: Vec<f64> = (0..ni * nj * nk)
            .map(|i| ((i * 31 % 113) as f64) * 0.0625 - 3.5)
            .collect();
        let mut inputs = HostState::default();
        inputs.scalars.insert("NI".into(), Value::Int(ni as i64));
        inputs.scalars.insert("NJ".into(), Value::Int(nj as i64));
        inputs.scalars.insert("NK".into(), Value::Int(nk as i64));
        let mut buf = ArrayBuf::new_uninit("p", ElemType::Float, vec![ni, nj, nk]);
        buf.fill_from(&p.iter().map(|f| Value::Float(*f)).collect::<Vec<_>>())
            .unwrap();
        inputs.arrays.insert("p".into(), buf);
        let program = parse(samples::STENCIL_19PT).unwrap();

        let mut times = BTreeMap::new();
        let mut link_bytes = BTreeMap::new();
        for devices in [1usize, 2, 4] {
            let result = simulate(
                &program,
                &SimConfig::default(),
                &inputs,
                &SimOptions {
                    devices: Some(devices),
                    adaptive: false,
                    ..Default::default()
                },
            )
            .unwrap();
            let e = &result.trace[0];
            times.insert(devices, e.t_kernel_s - launch);
            let plan = &result.execs[0].plan;
            let ex = plan_exchange(plan, &SimConfig::default());
            link_bytes.insert(devices, ex.max_link_bytes);
        }
        assert!(
            link_bytes[&4] < link_bytes[&2],
            "per-link bytes must shrink from 2 to 4 devices (grid {ni})"
        );
        for devices in [2usize, 4] {
            let ideal = times[&1] / devices as f64;
            let got = times[&devices];
            let err = (got - ideal).abs() / ideal;
            assert!(
                err <= 0.05,
                "grid {ni}: kernel time off ideal by {:.2}% at {devices} devices",
                err * 100.0
            );
        }
    }
    println!(
        "[PASS] stencil cost trend: per-link bytes strictly shrink 2->4 devices; kernel time within 5% of 1/n at three sizes"
    );
}

#[test]
fn criterion_8_allocator_randomized_reuse() {
    let mut rng = ChaCha8Rng::seed_from_u64(7331);
    let mut pool = PoolAllocator::new(1 << 40);
    let mut live: Vec<(Segment, PoolKind)> = Vec::new();
    // reference free lists per pool
    let mut free_ref: BTreeMap<PoolKind, Vec<Segment>> = BTreeMap::new();
    free_ref.insert(PoolKind::User, Vec::new());
    free_ref.insert(PoolKind::Runtime, Vec::new());
    const OPS: usize = 10_000;
    for _ in 0..OPS {
        let kind = if rng.gen_bool(0.7) {
            PoolKind::User
        } else {
            PoolKind::Runtime
        };
        if live.is_empty() || rng.gen_bool(0.55) {
            let bytes = rng.gen_range(1..100_000u64);
            let seg = pool.alloc(bytes, kind).unwrap();
            // brute-force smallest capable over the reference free list
            let expect = free_ref[&kind]
                .iter()
                .filter(|s| s.size >= bytes)
                .min_by_key(|s| (s.size, s.offset))
                .copied();
            match expect {
                Some(best) => assert_eq!(seg, best, "reuse must pick the smallest capable"),
                None => {
                    assert_eq!(seg.size, bytes, "fresh segments are exact");
                }
            }
            free_ref
                .get_mut(&kind)
                .unwrap()
                .retain(|s| s.offset != seg.offset);
            // overlap check against all live segments
            for (other, _) in &live {
                let disjoint =
                    seg.offset + seg.size <= other.offset || other.offset + other.size <= seg.offset;
                assert!(disjoint, "live segments overlap");
            }
            live.push((seg, kind));
        } else {
            let k = rng.gen_range(0..live.len());
            let (seg, kind) = live.swap_remove(k);
            pool.free(seg);
            free_ref.get_mut(&kind).unwrap().push(seg);
        }
    }
    println!(
        "[PASS] allocator: {OPS} randomized operations, zero overlaps, every reuse smallest-capable"
    );
}

#[test]
fn criterion_9_specialization_preserves_behavior() {
    let programs = corpus();
    let mut kernels_checked = 0usize;
    for (i, src) in programs.iter().enumerate() {
        let program = parse(src).unwrap();
        let reductions = reduction_scalars(&program);
        let plain = simulate(
            &program,
            &SimConfig::default(),
            &HostState::default(),
            &SimOptions {
                devices: Some(2),
                ..Default::default()
            },
        )
        .unwrap();
        let optimized = simulate(
            &program,
            &SimConfig::default(),
            &HostState::default(),
            &SimOptions {
                devices: Some(2),
                optimize_after: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        let mut plain_host = plain.host.clone();
        plain_host.scalars.retain(|k, _| reductions.contains(k));
        let mut opt_host = optimized.host.clone();
        opt_host.scalars.retain(|k, _| reductions.contains(k));
        interp::compare_states(&plain_host, &opt_host, &reductions, 1e-10)
            .unwrap_or_else(|e| panic!("program {i}: specialization changed behavior: {e}"));

        // single-valued parameters disappear from the parameter list
        let lowered = lower(&program).unwrap();
        for (id, unit) in &lowered.kernels {
            let records = optimized.arg_log.records(id);
            if records.is_empty() {
                continue;
            }
            let spec = specialize(unit, records).unwrap();
            for p in &unit.params {
                if p.kind != pacc_core::lower::ParamKind::ScalarIn {
                    continue;
                }
                if records.iter().any(|r| r.exported.contains(&p.name)) {
                    continue;
                }
                let values: BTreeSet<String> = records
                    .iter()
                    .filter_map(|r| r.scalars.get(&p.name))
                    .map(|v| format!("{v:?}"))
                    .collect();
                if values.len() == 1 {
                    assert!(
                        spec.unit.param(&p.name).is_none(),
                        "program {i} kernel {id}: single-valued `{}` kept as parameter",
                        p.name
                    );
                }
            }
            kernels_checked += 1;
        }
    }
    assert!(kernels_checked > 100);
    println!(
        "[PASS] specialization: {kernels_checked} kernels keep their outputs on logged arguments; invariant scalars leave the parameter list"
    );
}

#[test]
fn single_device_simulation_equals_interpreter_through_cli_schema() {
    // the simulate surface reports a final state identical to run
    let program = parse(samples::SQUARE).unwrap();
    let mut inputs = HostState::default();
    inputs.scalars.insert("N".into(), Value::Int(5));
    let mut y = ArrayBuf::new_uninit("y", ElemType::Float, vec![5]);
    y.fill_from(
        &(0..5)
            .map(|i| Value::Float(i as f64 + 0.5))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    inputs.arrays.insert("y".into(), y);
    let oracle = interp::run(&program, &inputs).unwrap();
    let sim = simulate(
        &program,
        &SimConfig::default(),
        &inputs,
        &SimOptions {
            devices: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(oracle.arrays["x"].bits_eq(&sim.host.arrays["x"]));
    let _ = LoopCmp::Lt; // keep the import exercised alongside split_even
    println!("[PASS] single-device simulation equals the interpreter on the sample kernel");
}
