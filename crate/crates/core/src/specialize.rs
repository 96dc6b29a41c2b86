//! On-demand kernel specialization from profiled argument logs.
//!
//! Scalar parameters observed with one value across all recorded
//! launches become literal constants and leave the parameter list;
//! array parameters whose region never coincides with another
//! parameter's region in any record are marked conflict-free.
//! Exported scalars stay dynamic.

use crate::ast::*;
use crate::interp::Value;
use crate::lower::{KernelId, KernelUnit, ParamKind};
use crate::pretty;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecializeError {
    #[error("no launches recorded for kernel {0}")]
    EmptyLog(KernelId),
}

/// One recorded launch.
#[derive(Debug, Clone, PartialEq)]
pub struct LaunchRecord {
    pub scalars: BTreeMap<String, Value>,
    /// Array parameter name to the region it resolved to.
    pub arrays: BTreeMap<String, u64>,
    /// Parameters whose value is written back to the host.
    pub exported: BTreeSet<String>,
}

/// Per-kernel launch history.
#[derive(Debug, Clone, Default)]
pub struct ArgumentLog {
    records: BTreeMap<KernelId, Vec<LaunchRecord>>,
}

impl ArgumentLog {
    pub fn push(&mut self, kernel: &KernelId, record: LaunchRecord) {
        self.records.entry(kernel.clone()).or_default().push(record);
    }

    pub fn records(&self, kernel: &KernelId) -> &[LaunchRecord] {
        self.records.get(kernel).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn kernels(&self) -> impl Iterator<Item = &KernelId> {
        self.records.keys()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Specialization {
    pub unit: KernelUnit,
    pub constants: BTreeMap<String, Value>,
    pub no_alias: BTreeSet<String>,
    /// Every array parameter proved conflict-free.
    pub all_arrays_no_alias: bool,
}

pub fn specialize(
    kernel: &KernelUnit,
    records: &[LaunchRecord],
) -> Result<Specialization, SpecializeError> {
    if records.is_empty() {
        return Err(SpecializeError::EmptyLog(kernel.id.clone()));
    }
    // invariant scalar parameters, excluding exported ones
    let mut constants: BTreeMap<String, Value> = BTreeMap::new();
    for p in &kernel.params {
        if p.kind != ParamKind::ScalarIn {
            continue;
        }
        if records.iter().any(|r| r.exported.contains(&p.name)) {
            continue;
        }
        let mut values = records.iter().filter_map(|r| r.scalars.get(&p.name));
        let first = match values.next() {
            Some(v) => *v,
            None => continue,
        };
        let invariant = records
            .iter()
            .all(|r| match r.scalars.get(&p.name) {
                Some(v) => value_identical(*v, first),
                None => false,
            });
        if invariant {
            constants.insert(p.name.clone(), first);
        }
    }

    // conflict-free arrays: never share a region with another parameter
    let mut no_alias: BTreeSet<String> = BTreeSet::new();
    'arrays: for p in &kernel.params {
        if p.kind != ParamKind::Array {
            continue;
        }
        for r in records {
            if let Some(region) = r.arrays.get(&p.name) {
                let shared = r
                    .arrays
                    .iter()
                    .any(|(other, reg)| other != &p.name && reg == region);
                if shared {
                    continue 'arrays;
                }
            }
        }
        no_alias.insert(p.name.clone());
    }
    let n_arrays = kernel
        .params
        .iter()
        .filter(|p| p.kind == ParamKind::Array)
        .count();
    let all_arrays_no_alias = n_arrays > 0 && no_alias.len() == n_arrays;

    // substitute constants and drop them from the parameter list
    let mut unit = kernel.clone();
    unit.body = subst_stmt(&kernel.body, &constants);
    unit.params.retain(|p| !constants.contains_key(&p.name));
    let header_end = kernel.source.find('\n').map(|i| i + 1).unwrap_or(0);
    unit.source = format!(
        "{}{}",
        &kernel.source[..header_end],
        pretty::print_stmt(&unit.body)
    );

    Ok(Specialization {
        unit,
        constants,
        no_alias,
        all_arrays_no_alias,
    })
}

fn value_identical(a: Value, b: Value) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Float(x), Value::Float(y)) => x.to_bits() == y.to_bits(),
        _ => false,
    }
}

fn const_expr(v: Value) -> Expr {
    match v {
        Value::Int(n) => Expr::Int(n),
        Value::Float(f) => Expr::Float(f),
    }
}

fn subst_stmt(stmt: &Stmt, consts: &BTreeMap<String, Value>) -> Stmt {
    match stmt {
        Stmt::Block(items) => Stmt::Block(items.iter().map(|s| subst_stmt(s, consts)).collect()),
        Stmt::For(l) => Stmt::For(ForLoop {
            iter: l.iter.clone(),
            init: subst_expr(&l.init, consts),
            cmp: l.cmp,
            bound: subst_expr(&l.bound, consts),
            step: match &l.step {
                LoopStep::Inc => LoopStep::Inc,
                LoopStep::AddAssign(e) => LoopStep::AddAssign(subst_expr(e, consts)),
            },
            body: Box::new(subst_stmt(&l.body, consts)),
        }),
        Stmt::If {
            cond,
            then_branch,
            else_branch,
        } => Stmt::If {
            cond: subst_expr(cond, consts),
            then_branch: Box::new(subst_stmt(then_branch, consts)),
            else_branch: else_branch
                .as_ref()
                .map(|e| Box::new(subst_stmt(e, consts))),
        },
        Stmt::Assign { target, op, value } => Stmt::Assign {
            target: subst_lvalue(target, consts),
            op: *op,
            value: subst_expr(value, consts),
        },
        Stmt::Atomic { target, op, value } => Stmt::Atomic {
            target: subst_lvalue(target, consts),
            op: *op,
            value: subst_expr(value, consts),
        },
        Stmt::Predicated {
            cond,
            then_assign,
            else_expr,
        } => Stmt::Predicated {
            cond: subst_expr(cond, consts),
            then_assign: Box::new(subst_stmt(then_assign, consts)),
            else_expr: subst_expr(else_expr, consts),
        },
        Stmt::Directive { dir, body } => Stmt::Directive {
            dir: dir.clone(),
            body: Box::new(subst_stmt(body, consts)),
        },
    }
}

fn subst_lvalue(lv: &LValue, consts: &BTreeMap<String, Value>) -> LValue {
    LValue {
        name: lv.name.clone(),
        indices: lv.indices.iter().map(|e| subst_expr(e, consts)).collect(),
    }
}

fn subst_expr(expr: &Expr, consts: &BTreeMap<String, Value>) -> Expr {
    match expr {
        Expr::Ident(name) => match consts.get(name) {
            Some(v) => const_expr(*v),
            None => expr.clone(),
        },
        Expr::Int(_) | Expr::Float(_) => expr.clone(),
        Expr::Index { array, indices } => Expr::Index {
            array: array.clone(),
            indices: indices.iter().map(|e| subst_expr(e, consts)).collect(),
        },
        Expr::Unary { op, expr } => Expr::Unary {
            op: *op,
            expr: Box::new(subst_expr(expr, consts)),
        },
        Expr::Binary { op, lhs, rhs } => Expr::Binary {
            op: *op,
            lhs: Box::new(subst_expr(lhs, consts)),
            rhs: Box::new(subst_expr(rhs, consts)),
        },
        Expr::Ternary {
            cond,
            then_val,
            else_val,
        } => Expr::Ternary {
            cond: Box::new(subst_expr(cond, consts)),
            then_val: Box::new(subst_expr(then_val, consts)),
            else_val: Box::new(subst_expr(else_val, consts)),
        },
        Expr::Call { func, arg } => Expr::Call {
            func: *func,
            arg: Box::new(subst_expr(arg, consts)),
        },
    }
}
