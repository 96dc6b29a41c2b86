//! Sequential reference interpreter.
//!
//! Directives are ignored (reductions fall out of plain loop-order
//! evaluation), inputs are never mutated, and every run is
//! deterministic.  The same evaluator executes filtered kernel bodies on
//! simulated device memories, so host and device share one set of
//! arithmetic and bounds rules.

use crate::ast::*;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("index {indices:?} out of bounds for `{array}` with extents {extents:?}")]
    OutOfBounds {
        array: String,
        indices: Vec<i64>,
        extents: Vec<usize>,
    },
    #[error("read of uninitialized value `{name}`{}", .index.map(|i| format!(" at flat index {i}")).unwrap_or_default())]
    UninitializedRead { name: String, index: Option<usize> },
    #[error("division by zero")]
    DivisionByZero,
    #[error("numeric error (NaN produced) in {context}")]
    Numeric { context: String },
    #[error("type error: {0}")]
    Type(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("loop step must be a positive integer")]
    NonPositiveStep,
}

type EResult<T> = Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Int(n) => n as f64,
            Value::Float(f) => f,
        }
    }

    pub fn as_index(self) -> EResult<i64> {
        match self {
            Value::Int(n) => Ok(n),
            Value::Float(_) => Err(EvalError::Type("array index must be an integer".into())),
        }
    }

    pub fn truthy(self) -> bool {
        match self {
            Value::Int(n) => n != 0,
            Value::Float(f) => f != 0.0,
        }
    }

    /// Converts to the element type of an assignment target (C cast rules).
    pub fn coerce(self, elem: ElemType) -> EResult<Value> {
        match (elem, self) {
            (ElemType::Int, Value::Int(n)) => Ok(Value::Int(n)),
            (ElemType::Int, Value::Float(f)) => {
                if f.is_nan() {
                    Err(EvalError::Numeric {
                        context: "float-to-int conversion".into(),
                    })
                } else {
                    Ok(Value::Int(f.trunc() as i64))
                }
            }
            (ElemType::Float, Value::Int(n)) => Ok(Value::Float(n as f64)),
            (ElemType::Float, Value::Float(f)) => Ok(Value::Float(f)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum BufData {
    Int(Vec<i64>),
    Float(Vec<f64>),
}

/// Flat row-major buffer for one array, with per-cell initialization
/// tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayBuf {
    pub name: String,
    pub extents: Vec<usize>,
    data: BufData,
    init: Vec<bool>,
}

impl ArrayBuf {
    pub fn new_uninit(name: impl Into<String>, elem: ElemType, extents: Vec<usize>) -> ArrayBuf {
        let len = extents.iter().product();
        ArrayBuf {
            name: name.into(),
            extents,
            data: match elem {
                ElemType::Int => BufData::Int(vec![0; len]),
                ElemType::Float => BufData::Float(vec![0.0; len]),
            },
            init: vec![false; len],
        }
    }

    pub fn elem(&self) -> ElemType {
        match self.data {
            BufData::Int(_) => ElemType::Int,
            BufData::Float(_) => ElemType::Float,
        }
    }

    pub fn len(&self) -> usize {
        self.init.len()
    }

    pub fn is_empty(&self) -> bool {
        self.init.is_empty()
    }

    pub fn size_bytes(&self) -> u64 {
        self.len() as u64 * self.elem().size_bytes()
    }

    pub fn is_init(&self, flat: usize) -> bool {
        self.init[flat]
    }

    pub fn fill_from(&mut self, values: &[Value]) -> EResult<()> {
        if values.len() != self.len() {
            return Err(EvalError::Input(format!(
                "array `{}` expects {} elements, got {}",
                self.name,
                self.len(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            self.set_flat(i, (*v).coerce(self.elem())?);
        }
        Ok(())
    }

    pub fn flat_index(&self, indices: &[i64]) -> EResult<usize> {
        debug_assert_eq!(indices.len(), self.extents.len());
        let mut flat = 0usize;
        for (ix, ext) in indices.iter().zip(&self.extents) {
            if *ix < 0 || *ix as usize >= *ext {
                return Err(EvalError::OutOfBounds {
                    array: self.name.clone(),
                    indices: indices.to_vec(),
                    extents: self.extents.clone(),
                });
            }
            flat = flat * ext + *ix as usize;
        }
        Ok(flat)
    }

    pub fn get_flat(&self, flat: usize) -> Option<Value> {
        if !self.init[flat] {
            return None;
        }
        Some(match &self.data {
            BufData::Int(v) => Value::Int(v[flat]),
            BufData::Float(v) => Value::Float(v[flat]),
        })
    }

    pub fn set_flat(&mut self, flat: usize, value: Value) {
        match (&mut self.data, value) {
            (BufData::Int(v), Value::Int(n)) => v[flat] = n,
            (BufData::Float(v), Value::Float(f)) => v[flat] = f,
            _ => unreachable!("value coerced before store"),
        }
        self.init[flat] = true;
    }

    /// Raw copy of a flat range from another buffer of identical shape.
    pub fn copy_range_from(&mut self, src: &ArrayBuf, start: usize, len: usize) {
        match (&mut self.data, &src.data) {
            (BufData::Int(d), BufData::Int(s)) => d[start..start + len].copy_from_slice(&s[start..start + len]),
            (BufData::Float(d), BufData::Float(s)) => {
                d[start..start + len].copy_from_slice(&s[start..start + len])
            }
            _ => unreachable!("mismatched element types"),
        }
        self.init[start..start + len].copy_from_slice(&src.init[start..start + len]);
    }

    /// Bitwise equality, including initialization state.
    pub fn bits_eq(&self, other: &ArrayBuf) -> bool {
        if self.extents != other.extents || self.init != other.init {
            return false;
        }
        match (&self.data, &other.data) {
            (BufData::Int(a), BufData::Int(b)) => a == b,
            (BufData::Float(a), BufData::Float(b)) => a
                .iter()
                .zip(b.iter())
                .zip(&self.init)
                .all(|((x, y), init)| !init || x.to_bits() == y.to_bits()),
            _ => false,
        }
    }
}

/// Host-side program state: named array buffers plus a scalar environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HostState {
    pub arrays: BTreeMap<String, ArrayBuf>,
    pub scalars: BTreeMap<String, Value>,
}

impl HostState {
    pub fn set_scalar(&mut self, name: impl Into<String>, v: Value) {
        self.scalars.insert(name.into(), v);
    }

    pub fn float_array(&self, name: &str) -> Option<Vec<f64>> {
        let buf = self.arrays.get(name)?;
        (0..buf.len())
            .map(|i| buf.get_flat(i).map(|v| v.as_f64()))
            .collect()
    }

    pub fn int_array(&self, name: &str) -> Option<Vec<i64>> {
        let buf = self.arrays.get(name)?;
        (0..buf.len())
            .map(|i| match buf.get_flat(i) {
                Some(Value::Int(n)) => Some(n),
                _ => None,
            })
            .collect()
    }
}

/// One recorded array write.
#[derive(Debug, Clone, PartialEq)]
pub struct WriteRecord {
    pub array: String,
    pub flat: usize,
    pub stmt: u32,
}

/// Execution counters and optional write log.
#[derive(Debug, Default)]
pub struct Instrument {
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub write_log: Option<Vec<WriteRecord>>,
}

impl Instrument {
    pub fn with_log() -> Instrument {
        Instrument {
            write_log: Some(Vec::new()),
            ..Default::default()
        }
    }
}

/// Stable statement numbering in source-traversal order.
pub struct StmtIds {
    ids: HashMap<usize, u32>,
}

impl StmtIds {
    pub fn number(stmts: &[Stmt]) -> StmtIds {
        let mut ids = HashMap::new();
        let mut next = 0u32;
        for s in stmts {
            s.walk(&mut |node| {
                ids.insert(node as *const Stmt as usize, next);
                next += 1;
            });
        }
        StmtIds { ids }
    }

    pub fn id_of(&self, stmt: &Stmt) -> u32 {
        *self
            .ids
            .get(&(stmt as *const Stmt as usize))
            .expect("statement numbered before execution")
    }
}

/// Shared statement/expression evaluator over a set of array buffers.
///
/// `names` maps source identifiers to slots in `arrays`; two names may
/// share a slot, which is how aliased kernel arguments are executed.
pub struct Evaluator<'a> {
    pub arrays: &'a mut Vec<ArrayBuf>,
    pub names: &'a BTreeMap<String, usize>,
    pub scalars: &'a mut BTreeMap<String, Value>,
    pub instr: &'a mut Instrument,
    pub ids: &'a StmtIds,
}

impl<'a> Evaluator<'a> {
    fn buf(&self, name: &str) -> EResult<&ArrayBuf> {
        let slot = self
            .names
            .get(name)
            .ok_or_else(|| EvalError::Type(format!("`{name}` is not an array here")))?;
        Ok(&self.arrays[*slot])
    }

    fn read_elem(&mut self, array: &str, indices: &[i64]) -> EResult<Value> {
        let slot = *self
            .names
            .get(array)
            .ok_or_else(|| EvalError::Type(format!("`{array}` is not an array here")))?;
        let buf = &self.arrays[slot];
        let flat = buf.flat_index(indices)?;
        let v = buf.get_flat(flat).ok_or_else(|| EvalError::UninitializedRead {
            name: array.to_string(),
            index: Some(flat),
        })?;
        self.instr.read_bytes += buf.elem().size_bytes();
        Ok(v)
    }

    fn write_elem(&mut self, array: &str, indices: &[i64], value: Value, stmt: u32) -> EResult<()> {
        let slot = *self
            .names
            .get(array)
            .ok_or_else(|| EvalError::Type(format!("`{array}` is not an array here")))?;
        let buf = &mut self.arrays[slot];
        let flat = buf.flat_index(indices)?;
        let coerced = value.coerce(buf.elem())?;
        buf.set_flat(flat, coerced);
        self.instr.write_bytes += buf.elem().size_bytes();
        if let Some(log) = &mut self.instr.write_log {
            log.push(WriteRecord {
                array: array.to_string(),
                flat,
                stmt,
            });
        }
        Ok(())
    }

    fn scalar(&self, name: &str) -> EResult<Value> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::UninitializedRead {
                name: name.to_string(),
                index: None,
            })
    }

    pub fn eval_expr(&mut self, expr: &Expr) -> EResult<Value> {
        match expr {
            Expr::Int(n) => Ok(Value::Int(*n)),
            Expr::Float(f) => Ok(Value::Float(*f)),
            Expr::Ident(name) => self.scalar(name),
            Expr::Index { array, indices } => {
                let mut ixs = Vec::with_capacity(indices.len());
                for e in indices {
                    ixs.push(self.eval_expr(e)?.as_index()?);
                }
                self.read_elem(array, &ixs)
            }
            Expr::Unary { op, expr } => {
                let v = self.eval_expr(expr)?;
                Ok(match op {
                    UnOp::Neg => match v {
                        Value::Int(n) => Value::Int(n.wrapping_neg()),
                        Value::Float(f) => Value::Float(-f),
                    },
                    UnOp::Not => Value::Int(if v.truthy() { 0 } else { 1 }),
                })
            }
            Expr::Binary { op, lhs, rhs } => {
                // short-circuit logicals
                if *op == BinOp::And {
                    let l = self.eval_expr(lhs)?;
                    if !l.truthy() {
                        return Ok(Value::Int(0));
                    }
                    let r = self.eval_expr(rhs)?;
                    return Ok(Value::Int(if r.truthy() { 1 } else { 0 }));
                }
                if *op == BinOp::Or {
                    let l = self.eval_expr(lhs)?;
                    if l.truthy() {
                        return Ok(Value::Int(1));
                    }
                    let r = self.eval_expr(rhs)?;
                    return Ok(Value::Int(if r.truthy() { 1 } else { 0 }));
                }
                let l = self.eval_expr(lhs)?;
                let r = self.eval_expr(rhs)?;
                binary_op(*op, l, r)
            }
            Expr::Ternary {
                cond,
                then_val,
                else_val,
            } => {
                if self.eval_expr(cond)?.truthy() {
                    self.eval_expr(then_val)
                } else {
                    self.eval_expr(else_val)
                }
            }
            Expr::Call { func, arg } => {
                let v = self.eval_expr(arg)?.as_f64();
                let r = match func {
                    Intrinsic::Sqrt => v.sqrt(),
                    Intrinsic::Fabs => v.abs(),
                };
                if r.is_nan() {
                    return Err(EvalError::Numeric {
                        context: format!("{}({v})", func.name()),
                    });
                }
                Ok(Value::Float(r))
            }
        }
    }

    pub fn exec_stmt(&mut self, stmt: &Stmt) -> EResult<()> {
        let sid = self.ids.id_of(stmt);
        match stmt {
            Stmt::Block(stmts) => {
                for s in stmts {
                    self.exec_stmt(s)?;
                }
                Ok(())
            }
            Stmt::For(l) => {
                let init = self.eval_expr(&l.init)?.as_index()?;
                self.scalars.insert(l.iter.clone(), Value::Int(init));
                loop {
                    let cur = match self.scalars.get(&l.iter) {
                        Some(Value::Int(n)) => *n,
                        _ => unreachable!("iterator is integral"),
                    };
                    let bound = self.eval_expr(&l.bound)?.as_index()?;
                    let go = match l.cmp {
                        LoopCmp::Lt => cur < bound,
                        LoopCmp::Le => cur <= bound,
                    };
                    if !go {
                        break;
                    }
                    self.exec_stmt(&l.body)?;
                    let step = match &l.step {
                        LoopStep::Inc => 1,
                        LoopStep::AddAssign(e) => self.eval_expr(e)?.as_index()?,
                    };
                    if step <= 0 {
                        return Err(EvalError::NonPositiveStep);
                    }
                    self.scalars
                        .insert(l.iter.clone(), Value::Int(cur.wrapping_add(step)));
                }
                self.scalars.remove(&l.iter);
                Ok(())
            }
            Stmt::If {
                cond,
                then_branch,
                else_branch,
            } => {
                if self.eval_expr(cond)?.truthy() {
                    self.exec_stmt(then_branch)
                } else if let Some(e) = else_branch {
                    self.exec_stmt(e)
                } else {
                    Ok(())
                }
            }
            Stmt::Assign { target, op, value } | Stmt::Atomic { target, op, value } => {
                self.exec_assign(target, *op, value, sid)
            }
            Stmt::Predicated {
                cond, then_assign, ..
            } => {
                // the else arm is the no-op self-reference; it performs no access
                if self.eval_expr(cond)?.truthy() {
                    self.exec_stmt(then_assign)?;
                }
                Ok(())
            }
            Stmt::Directive { body, .. } => self.exec_stmt(body),
        }
    }

    fn exec_assign(&mut self, target: &LValue, op: AssignOp, value: &Expr, sid: u32) -> EResult<()> {
        let rhs = self.eval_expr(value)?;
        if target.indices.is_empty() {
            let new = if op == AssignOp::Set {
                rhs
            } else {
                let old = self.scalar(&target.name)?;
                apply_compound(op, old, rhs)?
            };
            self.scalars.insert(target.name.clone(), new);
            Ok(())
        } else {
            let mut ixs = Vec::with_capacity(target.indices.len());
            for e in &target.indices {
                ixs.push(self.eval_expr(e)?.as_index()?);
            }
            let elem = self.buf(&target.name)?.elem();
            let new = if op == AssignOp::Set {
                rhs.coerce(elem)?
            } else {
                let old = self.read_elem(&target.name, &ixs)?;
                apply_compound(op, old, rhs)?.coerce(elem)?
            };
            self.write_elem(&target.name, &ixs, new, sid)
        }
    }
}

fn apply_compound(op: AssignOp, old: Value, rhs: Value) -> EResult<Value> {
    let bin = match op {
        AssignOp::Add => BinOp::Add,
        AssignOp::Sub => BinOp::Sub,
        AssignOp::Mul => BinOp::Mul,
        AssignOp::Div => BinOp::Div,
        AssignOp::Set => unreachable!(),
    };
    binary_op(bin, old, rhs)
}

fn binary_op(op: BinOp, l: Value, r: Value) -> EResult<Value> {
    use BinOp::*;
    if let (Value::Int(a), Value::Int(b)) = (l, r) {
        return Ok(Value::Int(match op {
            Add => a.wrapping_add(b),
            Sub => a.wrapping_sub(b),
            Mul => a.wrapping_mul(b),
            Div => {
                if b == 0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.wrapping_div(b)
            }
            Rem => {
                if b == 0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.wrapping_rem(b)
            }
            Lt => (a < b) as i64,
            Le => (a <= b) as i64,
            Gt => (a > b) as i64,
            Ge => (a >= b) as i64,
            Eq => (a == b) as i64,
            Ne => (a != b) as i64,
            And | Or => unreachable!("logicals short-circuit"),
        }));
    }
    let a = l.as_f64();
    let b = r.as_f64();
    let cmp = |c: bool| Ok(Value::Int(c as i64));
    match op {
        Lt => return cmp(a < b),
        Le => return cmp(a <= b),
        Gt => return cmp(a > b),
        Ge => return cmp(a >= b),
        Eq => return cmp(a == b),
        Ne => return cmp(a != b),
        _ => {}
    }
    let out = match op {
        Add => a + b,
        Sub => a - b,
        Mul => a * b,
        Div => a / b,
        Rem => return Err(EvalError::Type("`%` requires integer operands".into())),
        _ => unreachable!(),
    };
    if out.is_nan() && !a.is_nan() && !b.is_nan() {
        return Err(EvalError::Numeric {
            context: format!("{a} {} {b}", op.symbol()),
        });
    }
    Ok(Value::Float(out))
}

/// Resolves declared extents against the scalar environment.
pub fn resolve_extents(decl: &Decl, scalars: &BTreeMap<String, Value>) -> EResult<Vec<usize>> {
    decl.extents
        .iter()
        .map(|e| match e {
            Extent::Lit(n) => Ok(*n as usize),
            Extent::Param(p) => match scalars.get(p) {
                Some(Value::Int(n)) if *n > 0 => Ok(*n as usize),
                Some(_) => Err(EvalError::Input(format!(
                    "extent parameter `{p}` must be a positive integer"
                ))),
                None => Err(EvalError::Input(format!(
                    "extent parameter `{p}` of `{}` is unbound",
                    decl.name
                ))),
            },
        })
        .collect()
}

fn build_state(program: &Program, inputs: &HostState) -> EResult<HostState> {
    let mut state = HostState::default();
    for d in &program.decls {
        if d.is_array() {
            continue;
        }
        if let Some(v) = inputs.scalars.get(&d.name) {
            state.scalars.insert(d.name.clone(), (*v).coerce(d.elem)?);
        }
    }
    for d in &program.decls {
        if !d.is_array() {
            continue;
        }
        let extents = resolve_extents(d, &state.scalars)?;
        let buf = match inputs.arrays.get(&d.name) {
            Some(src) => {
                if src.extents.iter().product::<usize>() != extents.iter().product::<usize>() {
                    return Err(EvalError::Input(format!(
                        "input for `{}` has wrong length",
                        d.name
                    )));
                }
                let mut buf = ArrayBuf::new_uninit(&d.name, d.elem, extents);
                for i in 0..buf.len() {
                    if let Some(v) = src.get_flat(i) {
                        buf.set_flat(i, v.coerce(d.elem)?);
                    }
                }
                buf
            }
            None => ArrayBuf::new_uninit(&d.name, d.elem, extents),
        };
        state.arrays.insert(d.name.clone(), buf);
    }
    Ok(state)
}

fn run_inner(program: &Program, inputs: &HostState, log: bool) -> EResult<(HostState, Instrument)> {
    let state = build_state(program, inputs)?;
    let mut names = BTreeMap::new();
    let mut bufs = Vec::new();
    let mut scalars = state.scalars.clone();
    for (name, buf) in &state.arrays {
        names.insert(name.clone(), bufs.len());
        bufs.push(buf.clone());
    }
    let ids = StmtIds::number(&program.stmts);
    let mut instr = if log {
        Instrument::with_log()
    } else {
        Instrument::default()
    };
    {
        let mut ev = Evaluator {
            arrays: &mut bufs,
            names: &names,
            scalars: &mut scalars,
            instr: &mut instr,
            ids: &ids,
        };
        for s in &program.stmts {
            ev.exec_stmt(s)?;
        }
    }
    let mut out = HostState {
        arrays: BTreeMap::new(),
        scalars,
    };
    for (name, slot) in names {
        out.arrays.insert(name, bufs[slot].clone());
    }
    Ok((out, instr))
}

/// Runs the program sequentially.  Inputs are copied, never mutated.
pub fn run(program: &Program, inputs: &HostState) -> EResult<HostState> {
    run_inner(program, inputs, false).map(|(s, _)| s)
}

/// Like [`run`] but also returns the ordered array-write log.
pub fn run_instrumented(
    program: &Program,
    inputs: &HostState,
) -> EResult<(HostState, Vec<WriteRecord>)> {
    run_inner(program, inputs, true).map(|(s, i)| (s, i.write_log.unwrap_or_default()))
}

/// Compares two states: integer and non-reduction float data must match
/// bitwise; scalars named in `tolerant` compare within `rel_tol`.
pub fn compare_states(
    expected: &HostState,
    got: &HostState,
    tolerant: &std::collections::BTreeSet<String>,
    rel_tol: f64,
) -> Result<(), String> {
    for (name, exp) in &expected.arrays {
        let g = got
            .arrays
            .get(name)
            .ok_or_else(|| format!("array `{name}` missing"))?;
        if !exp.bits_eq(g) {
            for flat in 0..exp.len() {
                if exp.get_flat(flat) != g.get_flat(flat) {
                    return Err(format!(
                        "array `{name}` differs at flat index {flat}: expected {:?}, got {:?}",
                        exp.get_flat(flat),
                        g.get_flat(flat)
                    ));
                }
            }
            return Err(format!("array `{name}` differs in shape"));
        }
    }
    for (name, exp) in &expected.scalars {
        let g = got
            .scalars
            .get(name)
            .ok_or_else(|| format!("scalar `{name}` missing"))?;
        let ok = if tolerant.contains(name) {
            let (e, v) = (exp.as_f64(), g.as_f64());
            let scale = e.abs().max(v.abs()).max(1e-300);
            (e - v).abs() <= rel_tol * scale
        } else {
            match (exp, g) {
                (Value::Int(a), Value::Int(b)) => a == b,
                (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
                _ => false,
            }
        };
        if !ok {
            return Err(format!("scalar `{name}` differs: expected {exp:?}, got {g:?}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn inputs_with(scalars: &[(&str, Value)], arrays: &[(&str, ElemType, Vec<usize>, Vec<Value>)]) -> HostState {
        let mut st = HostState::default();
        for (n, v) in scalars {
            st.scalars.insert(n.to_string(), *v);
        }
        for (n, elem, extents, vals) in arrays {
            let mut buf = ArrayBuf::new_uninit(*n, *elem, extents.clone());
            buf.fill_from(vals).unwrap();
            st.arrays.insert(n.to_string(), buf);
        }
        st
    }

    #[test]
    fn squares_each_element() {
        let p = parse(crate::samples::SQUARE).unwrap();
        let inputs = inputs_with(
            &[("N", Value::Int(3))],
            &[(
                "y",
                ElemType::Float,
                vec![3],
                vec![Value::Float(1.0), Value::Float(2.0), Value::Float(3.0)],
            )],
        );
        let out = run(&p, &inputs).unwrap();
        assert_eq!(out.float_array("x").unwrap(), vec![1.0, 4.0, 9.0]);
    }

    #[test]
    fn empty_program_returns_inputs() {
        let p = parse("int N;\n").unwrap();
        let inputs = inputs_with(&[("N", Value::Int(7))], &[]);
        let out = run(&p, &inputs).unwrap();
        assert_eq!(out.scalars.get("N"), Some(&Value::Int(7)));
    }

    #[test]
    fn index_at_extent_is_out_of_bounds() {
        let p = parse("double a[4];\na[4] = 1.0;\n").unwrap();
        let err = run(&p, &HostState::default()).unwrap_err();
        assert!(matches!(err, EvalError::OutOfBounds { .. }));
    }

    #[test]
    fn division_by_zero_is_reported() {
        let p = parse("int a;\nint b;\nb = 0;\na = 1 / b;\n").unwrap();
        assert_eq!(
            run(&p, &HostState::default()).unwrap_err(),
            EvalError::DivisionByZero
        );
    }

    #[test]
    fn uninitialized_read_is_reported() {
        let p = parse("double a[4];\ndouble x;\nx = a[0];\n").unwrap();
        assert!(matches!(
            run(&p, &HostState::default()).unwrap_err(),
            EvalError::UninitializedRead { .. }
        ));
    }

    #[test]
    fn write_log_interleaves_chain() {
        // two writes per iteration at the same index: a then b, twice
        let src = "\
double a[2];
double b[2];
double x;
x = 0.5;
for (int i = 0; i < 2; i++) {
  a[i] = x;
  b[i] = a[i];
}
";
        let p = parse(src).unwrap();
        let (_, log) = run_instrumented(&p, &HostState::default()).unwrap();
        let seq: Vec<(&str, usize)> = log.iter().map(|w| (w.array.as_str(), w.flat)).collect();
        assert_eq!(seq, vec![("a", 0), ("b", 0), ("a", 1), ("b", 1)]);
    }

    #[test]
    fn sweep_logs_one_write_per_cell() {
        let src = "\
double g[4][4][4];
for (int i = 0; i < 4; i++)
  for (int j = 0; j < 4; j++)
    for (int k = 0; k < 4; k++)
      g[i][j][k] = 1.0;
";
        let p = parse(src).unwrap();
        let (_, log) = run_instrumented(&p, &HostState::default()).unwrap();
        assert_eq!(log.len(), 64);
    }

    #[test]
    fn no_array_writes_means_empty_log() {
        let p = parse("int s;\ns = 1;\ns = s + 2;\n").unwrap();
        let (out, log) = run_instrumented(&p, &HostState::default()).unwrap();
        assert!(log.is_empty());
        assert_eq!(out.scalars.get("s"), Some(&Value::Int(3)));
    }

    #[test]
    fn directives_are_ignored() {
        let src = "\
int N;
double x[N];
double y[N];
#pragma acc data copyout(x[0:N]) present(y)
#pragma acc parallel loop
for (int i = 0; i < N; i++) x[i] = y[i] * y[i];
";
        let stripped = "\
int N;
double x[N];
double y[N];
for (int i = 0; i < N; i++) x[i] = y[i] * y[i];
";
        let inputs = inputs_with(
            &[("N", Value::Int(4))],
            &[(
                "y",
                ElemType::Float,
                vec![4],
                vec![
                    Value::Float(1.5),
                    Value::Float(-2.0),
                    Value::Float(0.25),
                    Value::Float(3.0),
                ],
            )],
        );
        let a = run(&parse(src).unwrap(), &inputs).unwrap();
        let b = run(&parse(stripped).unwrap(), &inputs).unwrap();
        assert!(a.arrays["x"].bits_eq(&b.arrays["x"]));
    }

    #[test]
    fn reduction_runs_in_loop_order() {
        let src = "\
double a[3];
double s;
s = 0.0;
#pragma acc parallel loop reduction(+:s)
for (int i = 0; i < 3; i++) s += a[i];
";
        let inputs = inputs_with(
            &[],
            &[(
                "a",
                ElemType::Float,
                vec![3],
                vec![Value::Float(0.1), Value::Float(0.2), Value::Float(0.3)],
            )],
        );
        let out = run(&parse(src).unwrap(), &inputs).unwrap();
        let expect = (0.1f64 + 0.2) + 0.3;
        assert_eq!(out.scalars.get("s"), Some(&Value::Float(expect)));
    }
}
