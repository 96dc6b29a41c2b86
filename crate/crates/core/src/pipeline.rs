//! High-level entry points wiring the stages together, plus the JSON
//! views used by the command-line tool.

use crate::ast::{ElemType, Program};
use crate::config::SimConfig;
use crate::filter::{apply_filter, make_plan, make_selection, DimChoice, SplitPlan};
use crate::interp::{self, ArrayBuf, EvalError, HostState, Value};
use crate::lower::{lower, LowerError, ParamKind};
use crate::parser::{parse, ParseError};
use crate::pretty;
use crate::runtime::machine::{simulate, SimError, SimOptions, SimResult};
use crate::ssa::{build_ssa, compute_guards, AccessKind, SsaError};
use serde_json::{json, Value as Json};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error(transparent)]
    Ssa(#[from] SsaError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("input error: {0}")]
    Input(String),
}

/// Runtime-call sequence of the lowered program, one JSON value per
/// call.
pub fn translate_json(program: &Program) -> Result<Vec<Json>, PipelineError> {
    let lowered = lower(program)?;
    Ok(lowered
        .calls()
        .into_iter()
        .map(|c| c.to_json(&lowered.kernels))
        .collect())
}

/// Guard sets of every kernel, suitable for golden tests.
pub fn analyze_json(program: &Program) -> Result<Json, PipelineError> {
    let lowered = lower(program)?;
    let mut kernels = Vec::new();
    for unit in lowered.kernels.values() {
        let graph = build_ssa(unit)?;
        let analysis = compute_guards(&graph);
        let accesses: Vec<Json> = analysis
            .descriptors
            .iter()
            .map(|d| {
                json!({
                    "stmt": d.stmt,
                    "array": d.array,
                    "kind": match d.kind { AccessKind::Read => "read", AccessKind::Write => "write" },
                    "indices": d.indices.iter().map(pretty::print_expr).collect::<Vec<_>>(),
                    "affine": d.affine,
                    "guards": d.guards.iter().map(|(a, ix)| json!({
                        "array": a,
                        "index": ix.iter().map(pretty::print_expr).collect::<Vec<_>>(),
                    })).collect::<Vec<_>>(),
                    "outer_iter": d.guard_outer_iter,
                    "everywhere": d.needed_everywhere,
                })
            })
            .collect();
        kernels.push(json!({
            "kernel_id": unit.id.0,
            "parallel_iters": unit.parallel_iters,
            "accesses": accesses,
            "force_duplicate": analysis.force_duplicate.iter().collect::<Vec<_>>(),
            "sweeps": analysis.sweeps,
        }));
    }
    Ok(json!({ "kernels": kernels }))
}

fn plan_json(plan: &SplitPlan) -> Json {
    json!({
        "devices": plan.devices,
        "arrays": plan.arrays.iter().map(|(name, e)| {
            (name.clone(), json!({
                "dim": e.dim,
                "duplicated": e.duplicated,
                "ranges": e.ranges,
                "extents": e.extents,
            }))
        }).collect::<serde_json::Map<String, Json>>(),
        "iterator": {
            "split": plan.iter_split,
            "ranges": plan.iter_ranges,
        },
    })
}

/// Predicated kernel sources and split plans at the given device
/// count.  Parameter-sized extents resolve against the input scalars.
pub fn filter_json(
    program: &Program,
    devices: usize,
    inputs: &HostState,
) -> Result<Json, PipelineError> {
    let lowered = lower(program)?;
    let mut scalars = inputs.scalars.clone();
    // host statements ahead of the first directive may set parameters
    let mut kernels = Vec::new();
    for unit in lowered.kernels.values() {
        let graph = build_ssa(unit)?;
        let analysis = compute_guards(&graph);
        let selection = make_selection(unit, &analysis, &graph);
        let filtered = apply_filter(unit, &analysis, &graph, &selection);
        let mut extents = BTreeMap::new();
        let mut elem_bytes = BTreeMap::new();
        for p in &unit.params {
            if p.kind != ParamKind::Array {
                continue;
            }
            let decl = program
                .decl(&p.name)
                .ok_or_else(|| PipelineError::Input(format!("unknown array `{}`", p.name)))?;
            let ext = interp::resolve_extents(decl, &scalars)?;
            extents.insert(p.name.clone(), ext);
            elem_bytes.insert(p.name.clone(), decl.elem.size_bytes());
        }
        // the outer header is resolved only when its scalars are bound
        let iter_header = outer_header(unit, &mut scalars);
        let plan = make_plan(
            unit, &analysis, &selection, &extents, &elem_bytes, devices, true, iter_header,
        );
        kernels.push(json!({
            "kernel_id": unit.id.0,
            "source": filtered.unit.source,
            "bounds": {
                "arrays": filtered.bounds.arrays,
                "iterator": filtered.bounds.iter,
            },
            "selection": selection.iter().map(|(a, c)| {
                (a.clone(), match c {
                    DimChoice::Split(d) => json!(d),
                    DimChoice::Duplicate => json!("duplicate"),
                })
            }).collect::<serde_json::Map<String, Json>>(),
            "plan": plan_json(&plan),
        }));
    }
    Ok(json!({ "kernels": kernels }))
}

fn outer_header(
    unit: &crate::lower::KernelUnit,
    scalars: &mut BTreeMap<String, Value>,
) -> Option<(i64, crate::ast::LoopCmp, i64, i64)> {
    use crate::ast::{LoopStep, Stmt};
    let mut cur = &unit.body;
    loop {
        match cur {
            Stmt::Directive { body, .. } => cur = body,
            Stmt::Block(items) if items.len() == 1 => cur = &items[0],
            Stmt::For(l) => {
                let init = eval_const(&l.init, scalars)?;
                let bound = eval_const(&l.bound, scalars)?;
                let step = match &l.step {
                    LoopStep::Inc => 1,
                    LoopStep::AddAssign(e) => eval_const(e, scalars)?,
                };
                return Some((init, l.cmp, bound, step));
            }
            _ => return None,
        }
    }
}

fn eval_const(expr: &crate::ast::Expr, scalars: &BTreeMap<String, Value>) -> Option<i64> {
    use crate::interp::{Evaluator, Instrument, StmtIds};
    let ids = StmtIds::number(&[]);
    let mut instr = Instrument::default();
    let mut arrays = Vec::new();
    let names = BTreeMap::new();
    let mut env = scalars.clone();
    let mut ev = Evaluator {
        arrays: &mut arrays,
        names: &names,
        scalars: &mut env,
        instr: &mut instr,
        ids: &ids,
    };
    ev.eval_expr(expr).ok().and_then(|v| v.as_index().ok())
}

/// Parses the `{"scalars": ..., "arrays": ...}` input document against
/// the program's declarations.
pub fn inputs_from_json(program: &Program, text: &str) -> Result<HostState, PipelineError> {
    let doc: Json =
        serde_json::from_str(text).map_err(|e| PipelineError::Input(format!("bad JSON: {e}")))?;
    let mut state = HostState::default();
    if let Some(scalars) = doc.get("scalars").and_then(|v| v.as_object()) {
        for (name, v) in scalars {
            let decl = program
                .decl(name)
                .ok_or_else(|| PipelineError::Input(format!("unknown scalar `{name}`")))?;
            let value = json_value(v, decl.elem)
                .ok_or_else(|| PipelineError::Input(format!("bad value for `{name}`")))?;
            state.scalars.insert(name.clone(), value);
        }
    }
    if let Some(arrays) = doc.get("arrays").and_then(|v| v.as_object()) {
        for (name, v) in arrays {
            let decl = program
                .decl(name)
                .ok_or_else(|| PipelineError::Input(format!("unknown array `{name}`")))?;
            let extents = interp::resolve_extents(decl, &state.scalars)?;
            let cells = v
                .as_array()
                .ok_or_else(|| PipelineError::Input(format!("`{name}` must be a flat array")))?;
            let mut buf = ArrayBuf::new_uninit(name, decl.elem, extents);
            if cells.len() != buf.len() {
                return Err(PipelineError::Input(format!(
                    "`{name}` expects {} elements, got {}",
                    buf.len(),
                    cells.len()
                )));
            }
            for (i, cell) in cells.iter().enumerate() {
                if cell.is_null() {
                    continue;
                }
                let value = json_value(cell, decl.elem)
                    .ok_or_else(|| PipelineError::Input(format!("bad cell in `{name}`")))?;
                buf.set_flat(i, value);
            }
            state.arrays.insert(name.clone(), buf);
        }
    }
    Ok(state)
}

fn json_value(v: &Json, elem: ElemType) -> Option<Value> {
    match elem {
        ElemType::Int => v.as_i64().map(Value::Int),
        ElemType::Float => v.as_f64().map(Value::Float),
    }
}

/// Host state as the `{"scalars": ..., "arrays": ...}` document;
/// uninitialized cells serialize as null.
pub fn state_to_json(state: &HostState) -> Json {
    let scalars: serde_json::Map<String, Json> = state
        .scalars
        .iter()
        .map(|(k, v)| {
            let j = match v {
                Value::Int(n) => json!(n),
                Value::Float(f) => json!(f),
            };
            (k.clone(), j)
        })
        .collect();
    let arrays: serde_json::Map<String, Json> = state
        .arrays
        .iter()
        .map(|(k, buf)| {
            let cells: Vec<Json> = (0..buf.len())
                .map(|i| match buf.get_flat(i) {
                    Some(Value::Int(n)) => json!(n),
                    Some(Value::Float(f)) => json!(f),
                    None => Json::Null,
                })
                .collect();
            (k.clone(), Json::Array(cells))
        })
        .collect();
    json!({ "scalars": scalars, "arrays": arrays })
}

/// Parses, lowers, and simulates in one call.
pub fn simulate_source(
    source: &str,
    cfg: &SimConfig,
    inputs: &HostState,
    opts: &SimOptions,
) -> Result<SimResult, PipelineError> {
    let program = parse(source)?;
    Ok(simulate(&program, cfg, inputs, opts)?)
}
