//! End-to-end checks: lowering plus simulated multi-device execution
//! must reproduce the sequential interpreter exactly.

use pacc_core::config::SimConfig;
use pacc_core::interp::{self, ArrayBuf, HostState, Value};
use pacc_core::parser::parse;
use pacc_core::runtime::machine::{simulate, SimOptions};
use pacc_core::samples;
use std::collections::BTreeSet;

fn host_inputs(
    scalars: &[(&str, i64)],
    float_arrays: &[(&str, Vec<f64>, Vec<usize>)],
    int_arrays: &[(&str, Vec<i64>, Vec<usize>)],
) -> HostState {
    let mut st = HostState::default();
    for (n, v) in scalars {
        st.scalars.insert(n.to_string(), Value::Int(*v));
    }
    for (n, data, ext) in float_arrays {
        let mut buf = ArrayBuf::new_uninit(*n, pacc_core::ast::ElemType::Float, ext.clone());
        let vals: Vec<Value> = data.iter().map(|f| Value::Float(*f)).collect();
        buf.fill_from(&vals).unwrap();
        st.arrays.insert(n.to_string(), buf);
    }
    for (n, data, ext) in int_arrays {
        let mut buf = ArrayBuf::new_uninit(*n, pacc_core::ast::ElemType::Int, ext.clone());
        let vals: Vec<Value> = data.iter().map(|v| Value::Int(*v)).collect();
        buf.fill_from(&vals).unwrap();
        st.arrays.insert(n.to_string(), buf);
    }
    st
}

/// Compares the observable surface: every array, plus the scalars the
/// kernels export (reductions within tolerance).  Scalars that never
/// leave a kernel are device-private, like registers.
fn check_equivalence(src: &str, inputs: &HostState, exported: &[&str], reductions: &[&str]) {
    let program = parse(src).unwrap();
    let mut oracle = interp::run(&program, inputs).unwrap();
    let keep: BTreeSet<String> = exported
        .iter()
        .chain(reductions.iter())
        .map(|s| s.to_string())
        .collect();
    oracle.scalars.retain(|k, _| keep.contains(k));
    let tolerant: BTreeSet<String> = reductions.iter().map(|s| s.to_string()).collect();
    for devices in [1usize, 2, 4] {
        let cfg = SimConfig::default();
        let opts = SimOptions {
            devices: Some(devices),
            ..Default::default()
        };
        let result = simulate(&program, &cfg, inputs, &opts).unwrap();
        interp::compare_states(&oracle, &result.host, &tolerant, 1e-10)
            .unwrap_or_else(|e| panic!("devices={devices}: {e}"));
    }
}

#[test]
fn square_kernel_matches_oracle() {
    let y: Vec<f64> = (0..40).map(|i| (i as f64) * 0.25 - 3.0).collect();
    let inputs = host_inputs(&[("N", 40)], &[("y", y, vec![40])], &[]);
    check_equivalence(samples::SQUARE, &inputs, &[], &[]);
}

#[test]
fn chain_with_carried_scalar_matches_oracle() {
    let c: Vec<f64> = (0..16).map(|i| (i as f64) * 0.5 + 1.0).collect();
    let inputs = host_inputs(&[("N", 16)], &[("c", c, vec![16])], &[]);
    check_equivalence(samples::CHAIN_FIVE, &inputs, &[], &[]);
}

#[test]
fn stencil_matches_oracle_bitwise() {
    let (ni, nj, nk) = (10usize, 8, 6);
    let p: Vec<f64> = (0..ni * nj * nk)
        .map(|i| ((i * 37 % 101) as f64) * 0.125 - 4.0)
        .collect();
    let inputs = host_inputs(
        &[("NI", ni as i64), ("NJ", nj as i64), ("NK", nk as i64)],
        &[("p", p, vec![ni, nj, nk])],
        &[],
    );
    check_equivalence(samples::STENCIL_19PT, &inputs, &[], &[]);
}

#[test]
fn dot_reduction_matches_within_tolerance() {
    let a: Vec<f64> = (0..33).map(|i| ((i * 13 % 7) as f64) * 0.3 + 0.1).collect();
    let b: Vec<f64> = (0..33).map(|i| ((i * 5 % 11) as f64) * 0.2 - 0.4).collect();
    let inputs = host_inputs(
        &[("N", 33)],
        &[("a", a, vec![33]), ("b", b, vec![33])],
        &[],
    );
    check_equivalence(samples::DOT_REDUCTION, &inputs, &["sum"], &["sum"]);
}

#[test]
fn atomic_histogram_matches_exactly() {
    let inputs = host_inputs(&[("N", 50), ("M", 9)], &[], &[]);
    check_equivalence(samples::ATOMIC_HISTOGRAM, &inputs, &[], &[]);
}

#[test]
fn block_solver_matches_oracle() {
    let j = 4usize;
    let total = 5 * 5 * 3 * j * 10 * 10;
    let lhs: Vec<f64> = (0..total)
        .map(|i| ((i * 29 % 97) as f64) * 0.0625 - 3.0)
        .collect();
    let inputs = host_inputs(
        &[
            ("gp02", 8),
            ("gp22", 8),
            ("jsize", 2),
            ("AA", 0),
            ("BB", 1),
            ("CC", 2),
            ("J", j as i64),
        ],
        &[("lhsY", lhs, vec![5, 5, 3, j, 10, 10])],
        &[],
    );
    check_equivalence(samples::BLOCK_SOLVER_6D, &inputs, &[], &[]);
}

#[test]
fn device_buffers_coherent_after_exchange() {
    // drive a long enough run for the controller to go distributed,
    // then compare all devices through separate single-owner copyouts
    let src = "\
int N;
double src[N];
double dst[N];
for (int t = 0; t < 12; t++) {
  #pragma acc data copyin(src[0:N], dst[0:N]) copyout(dst[0:N])
  #pragma acc parallel loop gang
  for (int i = 0; i < N; i++) dst[i] = src[i] * 2.0 + dst[i];
}
";
    let program = parse(src).unwrap();
    let n = 24usize;
    let srcv: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
    let dstv: Vec<f64> = vec![1.0; n];
    let inputs = host_inputs(
        &[("N", n as i64)],
        &[("src", srcv, vec![n]), ("dst", dstv, vec![n])],
        &[],
    );
    let oracle = interp::run(&program, &inputs).unwrap();
    let cfg = SimConfig::default();
    let opts = SimOptions {
        devices: Some(4),
        ..Default::default()
    };
    let result = simulate(&program, &cfg, &inputs, &opts).unwrap();
    interp::compare_states(&oracle, &result.host, &BTreeSet::new(), 1e-10).unwrap();
    // distributed executions must actually have happened
    assert!(
        result
            .trace
            .iter()
            .any(|e| e.event == "kernel" && e.mode == Some("multi")),
        "controller never reached distributed execution: {:?}",
        result.summary.per_kernel_modes
    );
    assert!(result.trace.iter().any(|e| e.bytes_exchanged > 0));
}

#[test]
fn partition_writes_are_disjoint_and_cover() {
    let (ni, nj, nk) = (8usize, 6, 5);
    let p: Vec<f64> = (0..ni * nj * nk).map(|i| i as f64 * 0.01).collect();
    let inputs = host_inputs(
        &[("NI", ni as i64), ("NJ", nj as i64), ("NK", nk as i64)],
        &[("p", p, vec![ni, nj, nk])],
        &[],
    );
    let program = parse(samples::STENCIL_19PT).unwrap();
    // single-device write set
    let single = simulate(
        &program,
        &SimConfig::default(),
        &inputs,
        &SimOptions {
            devices: Some(1),
            log_writes: true,
            ..Default::default()
        },
    )
    .unwrap();
    let seq_writes: BTreeSet<(String, usize)> = single.execs[0]
        .write_logs
        .iter()
        .flatten()
        .map(|w| (w.array.clone(), w.flat))
        .collect();
    // forcing distributed execution by dialing the controller is not
    // needed: warm-up runs duplicated, so drive several iterations
    let src_loop = format!(
        "int NI;\nint NJ;\nint NK;\ndouble p[NI][NJ][NK];\ndouble wrk[NI][NJ][NK];\nfor (int t = 0; t < 10; t++) {{\n#pragma acc data copyin(p, wrk) copyout(wrk)\n{}\n}}\n",
        samples::STENCIL_19PT
            .lines()
            .skip_while(|l| !l.starts_with("#pragma acc parallel"))
            .collect::<Vec<_>>()
            .join("\n")
    );
    let looped = parse(&src_loop).unwrap();
    let multi = simulate(
        &looped,
        &SimConfig::default(),
        &inputs,
        &SimOptions {
            devices: Some(4),
            log_writes: true,
            ..Default::default()
        },
    )
    .unwrap();
    let dist = multi
        .execs
        .iter()
        .find(|e| e.mode.is_distributed() && !e.plan.all_duplicated())
        .expect("a distributed execution");
    let mut union: BTreeSet<(String, usize)> = BTreeSet::new();
    for (d, log) in dist.write_logs.iter().enumerate() {
        for w in log {
            let key = (w.array.clone(), w.flat);
            assert!(
                union.insert(key.clone()),
                "device {d} rewrote {key:?} already written by another device"
            );
        }
    }
    assert_eq!(union, seq_writes, "distributed writes must cover the sequential set");
}
