//! Decomposes combined directives and rewrites a program into
//! runtime-call form.
//!
//! Data directives become paired region-management calls; each parallel
//! region becomes one `kernel_push` carrying the kernel's canonical
//! source text (with its `loop` directives retained) and an argument
//! descriptor.  Kernel identity is the hash of that canonical text, so
//! textually identical kernels share one cache entry.

use crate::ast::*;
use crate::pretty;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LowerError {
    #[error("nested parallel regions are not supported")]
    NestedParallel,
    #[error("malformed kernel region: {0}")]
    MalformedKernel(String),
    #[error("unsupported construct: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KernelId(pub String);

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl KernelId {
    fn of_source(source: &str) -> KernelId {
        let digest = Sha256::digest(source.as_bytes());
        let mut s = String::with_capacity(17);
        s.push('k');
        for b in &digest[..8] {
            s.push_str(&format!("{b:02x}"));
        }
        KernelId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Array,
    /// Scalar whose value is read by the kernel.
    ScalarIn,
    /// Scalar written by the kernel and observable afterwards; the
    /// current value is passed in and the result written back.
    ScalarOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub elem: ElemType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelFlags {
    pub has_reduction: bool,
    pub writes_scalar_out: bool,
    pub has_atomic: bool,
}

impl KernelFlags {
    pub fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.has_reduction {
            v.push("has_reduction");
        }
        if self.writes_scalar_out {
            v.push("writes_scalar_out");
        }
        if self.has_atomic {
            v.push("has_atomic");
        }
        v
    }
}

/// One extracted offload kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelUnit {
    pub id: KernelId,
    pub params: Vec<Param>,
    /// Loop nest with its `loop` directives retained.
    pub body: Stmt,
    /// Parallel loop iterators, outermost first.
    pub parallel_iters: Vec<String>,
    pub reductions: Vec<(ReduceOp, String)>,
    pub arrays_read: Vec<String>,
    pub arrays_written: Vec<String>,
    /// Canonical source text: `parallel present(...)` header plus body.
    pub source: String,
    pub flags: KernelFlags,
    pub requested_async: Option<i64>,
    /// Scalars whose value both enters the body upward-exposed and is
    /// reassigned inside it: their value chains across iterations, so
    /// split execution cannot reproduce sequential semantics.
    pub carried_scalars: Vec<String>,
    /// Declared element type of every scalar the body references,
    /// including private temporaries that are not parameters.
    pub scalar_types: BTreeMap<String, ElemType>,
}

impl KernelUnit {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn writes_array(&self, name: &str) -> bool {
        self.arrays_written.iter().any(|a| a == name)
    }
}

/// Region-management and kernel-launch calls.
#[derive(Debug, Clone, PartialEq)]
pub enum RuntimeCall {
    Create {
        array: String,
        offset: Expr,
        len: Expr,
        elem_bytes: u64,
    },
    Copyin {
        array: String,
        offset: Expr,
        len: Expr,
        elem_bytes: u64,
    },
    Copyout {
        array: String,
        offset: Expr,
        len: Expr,
        elem_bytes: u64,
    },
    Delete {
        array: String,
    },
    KernelPush {
        kernel: KernelId,
        args: Vec<String>,
        flags: KernelFlags,
    },
    Optimize,
}

impl RuntimeCall {
    pub fn name(&self) -> &'static str {
        match self {
            RuntimeCall::Create { .. } => "create",
            RuntimeCall::Copyin { .. } => "copyin",
            RuntimeCall::Copyout { .. } => "copyout",
            RuntimeCall::Delete { .. } => "delete",
            RuntimeCall::KernelPush { .. } => "kernel_push",
            RuntimeCall::Optimize => "optimize",
        }
    }

    pub fn to_json(&self, kernels: &BTreeMap<KernelId, KernelUnit>) -> serde_json::Value {
        use serde_json::json;
        let region = |array: &String, offset: &Expr, len: &Expr, elem_bytes: &u64| {
            json!({
                "array": array,
                "offset": pretty::print_expr(offset),
                "len": pretty::print_expr(len),
                "elem_bytes": elem_bytes,
            })
        };
        let args = match self {
            RuntimeCall::Create {
                array,
                offset,
                len,
                elem_bytes,
            }
            | RuntimeCall::Copyin {
                array,
                offset,
                len,
                elem_bytes,
            }
            | RuntimeCall::Copyout {
                array,
                offset,
                len,
                elem_bytes,
            } => region(array, offset, len, elem_bytes),
            RuntimeCall::Delete { array } => json!({ "array": array }),
            RuntimeCall::KernelPush {
                kernel,
                args,
                flags,
            } => {
                let source = kernels
                    .get(kernel)
                    .map(|k| k.source.clone())
                    .unwrap_or_default();
                json!({
                    "kernel_id": kernel.0,
                    "source": source,
                    "args": args,
                    "flags": flags.names(),
                })
            }
            RuntimeCall::Optimize => json!({}),
        };
        serde_json::json!({ "call": self.name(), "args": args })
    }
}

/// Lowered statement tree.  Control flow survives only where it
/// encloses runtime calls; everything else collapses to host leaves.
#[derive(Debug, Clone, PartialEq)]
pub enum LStmt {
    Call(RuntimeCall),
    Host(Stmt),
    For {
        iter: String,
        init: Expr,
        cmp: LoopCmp,
        bound: Expr,
        step: LoopStep,
        body: Vec<LStmt>,
    },
    If {
        cond: Expr,
        then_items: Vec<LStmt>,
        else_items: Vec<LStmt>,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoweredProgram {
    pub items: Vec<LStmt>,
    pub kernels: BTreeMap<KernelId, KernelUnit>,
}

impl LoweredProgram {
    /// Static runtime-call sequence in program order.
    pub fn calls(&self) -> Vec<&RuntimeCall> {
        let mut out = Vec::new();
        fn walk<'a>(items: &'a [LStmt], out: &mut Vec<&'a RuntimeCall>) {
            for item in items {
                match item {
                    LStmt::Call(c) => out.push(c),
                    LStmt::Host(_) => {}
                    LStmt::For { body, .. } => walk(body, out),
                    LStmt::If {
                        then_items,
                        else_items,
                        ..
                    } => {
                        walk(then_items, out);
                        walk(else_items, out);
                    }
                }
            }
        }
        walk(&self.items, &mut out);
        out
    }
}

/// Splits a combined construct into its basic directives: data clauses
/// hoist onto a synthetic `data` directive, reduction and async stay on
/// `parallel`, parallelism markers move to `loop`.
pub fn decompose(dir: &Directive) -> Vec<Directive> {
    if dir.kind != DirectiveKind::ParallelLoop {
        return vec![dir.clone()];
    }
    let mut data_clauses = Vec::new();
    let mut parallel_clauses = Vec::new();
    let mut loop_clauses = Vec::new();
    for c in &dir.clauses {
        if c.is_data_clause() {
            data_clauses.push(c.clone());
        } else if c.is_parallelism_clause() {
            loop_clauses.push(c.clone());
        } else {
            parallel_clauses.push(c.clone());
        }
    }
    let mut out = Vec::new();
    if !data_clauses.is_empty() {
        out.push(Directive::new(DirectiveKind::Data, data_clauses));
    }
    out.push(Directive::new(DirectiveKind::Parallel, parallel_clauses));
    out.push(Directive::new(DirectiveKind::Loop, loop_clauses));
    out
}

pub fn lower(program: &Program) -> Result<LoweredProgram, LowerError> {
    let mut ctx = Lowering {
        program,
        kernels: BTreeMap::new(),
        kernel_in_host_loop: false,
    };
    let mut items = Vec::new();
    for (i, s) in program.stmts.iter().enumerate() {
        ctx.lower_stmt(s, &program.stmts[i + 1..], &mut items)?;
    }
    Ok(LoweredProgram {
        items,
        kernels: ctx.kernels,
    })
}

struct Lowering<'p> {
    program: &'p Program,
    kernels: BTreeMap<KernelId, KernelUnit>,
    kernel_in_host_loop: bool,
}

fn contains_offload(stmt: &Stmt) -> bool {
    let mut found = false;
    stmt.walk(&mut |s| {
        if let Stmt::Directive { dir, .. } = s {
            if matches!(
                dir.kind,
                DirectiveKind::Data | DirectiveKind::Parallel | DirectiveKind::ParallelLoop
            ) {
                found = true;
            }
        }
    });
    found
}

impl<'p> Lowering<'p> {
    /// `rest` is everything textually after `stmt`, used for scalar
    /// liveness when classifying kernel parameters.
    fn lower_stmt(
        &mut self,
        stmt: &Stmt,
        rest: &[Stmt],
        out: &mut Vec<LStmt>,
    ) -> Result<(), LowerError> {
        if !contains_offload(stmt) {
            out.push(LStmt::Host(stmt.clone()));
            return Ok(());
        }
        match stmt {
            Stmt::Block(stmts) => {
                for (i, s) in stmts.iter().enumerate() {
                    // later siblings plus everything after the block
                    let mut tail: Vec<Stmt> = stmts[i + 1..].to_vec();
                    tail.extend_from_slice(rest);
                    self.lower_stmt(s, &tail, out)?;
                }
                Ok(())
            }
            Stmt::For(l) => {
                let mut body = Vec::new();
                let saved = self.kernel_in_host_loop;
                self.kernel_in_host_loop = true;
                self.lower_stmt(&l.body, rest, &mut body)?;
                self.kernel_in_host_loop = saved;
                out.push(LStmt::For {
                    iter: l.iter.clone(),
                    init: l.init.clone(),
                    cmp: l.cmp,
                    bound: l.bound.clone(),
                    step: l.step.clone(),
                    body,
                });
                Ok(())
            }
            Stmt::If {
                cond,
                then_branch,
                else_branch,
            } => {
                let mut then_items = Vec::new();
                self.lower_stmt(then_branch, rest, &mut then_items)?;
                let mut else_items = Vec::new();
                if let Some(e) = else_branch {
                    self.lower_stmt(e, rest, &mut else_items)?;
                }
                out.push(LStmt::If {
                    cond: cond.clone(),
                    then_items,
                    else_items,
                });
                Ok(())
            }
            Stmt::Directive { dir, body } => match dir.kind {
                DirectiveKind::Data => self.lower_data(dir, body, rest, out),
                DirectiveKind::Parallel | DirectiveKind::ParallelLoop => {
                    self.lower_parallel(dir, body, rest, out)
                }
                DirectiveKind::Loop => Err(LowerError::MalformedKernel(
                    "loop directive outside a parallel region".into(),
                )),
                DirectiveKind::Atomic => unreachable!("atomic parses into its own statement"),
            },
            Stmt::Assign { .. } | Stmt::Atomic { .. } | Stmt::Predicated { .. } => {
                unreachable!("leaf statements contain no offload directives")
            }
        }
    }

    fn lower_data(
        &mut self,
        dir: &Directive,
        body: &Stmt,
        rest: &[Stmt],
        out: &mut Vec<LStmt>,
    ) -> Result<(), LowerError> {
        // one entry and one exit action per array, in first-clause order
        let mut order: Vec<String> = Vec::new();
        let mut entry: BTreeMap<String, RuntimeCall> = BTreeMap::new();
        let mut exit: BTreeMap<String, Option<RuntimeCall>> = BTreeMap::new();
        for c in &dir.clauses {
            let (secs, kind) = match c {
                Clause::Copyin(s) => (s, "copyin"),
                Clause::Copyout(s) => (s, "copyout"),
                Clause::Create(s) => (s, "create"),
                Clause::Present(s) => (s, "present"),
                _ => continue,
            };
            for sec in secs {
                let decl = self
                    .program
                    .decl(&sec.name)
                    .ok_or_else(|| LowerError::MalformedKernel(format!("unknown array `{}`", sec.name)))?;
                if !decl.is_array() {
                    return Err(LowerError::MalformedKernel(format!(
                        "`{}` in a data clause is not an array",
                        sec.name
                    )));
                }
                let (offset, len) = section_range(decl, sec);
                let elem_bytes = decl.elem.size_bytes();
                if kind == "present" {
                    continue;
                }
                if !entry.contains_key(&sec.name) {
                    order.push(sec.name.clone());
                    let call = if kind == "copyin" {
                        RuntimeCall::Copyin {
                            array: sec.name.clone(),
                            offset: offset.clone(),
                            len: len.clone(),
                            elem_bytes,
                        }
                    } else {
                        RuntimeCall::Create {
                            array: sec.name.clone(),
                            offset: offset.clone(),
                            len: len.clone(),
                            elem_bytes,
                        }
                    };
                    entry.insert(sec.name.clone(), call);
                } else if kind == "copyin" {
                    // copyin wins over a bare create at entry
                    if let Some(RuntimeCall::Create { array, offset, len, elem_bytes }) =
                        entry.get(&sec.name).cloned()
                    {
                        entry.insert(
                            sec.name.clone(),
                            RuntimeCall::Copyin {
                                array,
                                offset,
                                len,
                                elem_bytes,
                            },
                        );
                    }
                }
                let exit_call = if kind == "copyout" {
                    Some(RuntimeCall::Copyout {
                        array: sec.name.clone(),
                        offset,
                        len,
                        elem_bytes,
                    })
                } else {
                    None
                };
                match exit.get_mut(&sec.name) {
                    Some(slot) => {
                        if exit_call.is_some() {
                            *slot = exit_call;
                        }
                    }
                    None => {
                        exit.insert(sec.name.clone(), exit_call);
                    }
                }
            }
        }
        for name in &order {
            out.push(LStmt::Call(entry[name].clone()));
        }
        self.lower_stmt(body, rest, out)?;
        for name in order.iter().rev() {
            match &exit[name] {
                Some(c) => out.push(LStmt::Call(c.clone())),
                None => out.push(LStmt::Call(RuntimeCall::Delete {
                    array: name.clone(),
                })),
            }
        }
        Ok(())
    }

    fn lower_parallel(
        &mut self,
        dir: &Directive,
        body: &Stmt,
        rest: &[Stmt],
        out: &mut Vec<LStmt>,
    ) -> Result<(), LowerError> {
        let parts = decompose(dir);
        let data_dir = parts
            .iter()
            .find(|d| d.kind == DirectiveKind::Data)
            .cloned();
        let parallel_clauses: Vec<Clause> = parts
            .iter()
            .find(|d| d.kind == DirectiveKind::Parallel)
            .map(|d| d.clauses.clone())
            .unwrap_or_else(|| {
                dir.clauses
                    .iter()
                    .filter(|c| !c.is_data_clause() && !c.is_parallelism_clause())
                    .cloned()
                    .collect()
            });
        let loop_clauses: Vec<Clause> = parts
            .iter()
            .find(|d| d.kind == DirectiveKind::Loop)
            .map(|d| d.clauses.clone())
            .unwrap_or_default();

        // normalize the region body so the outermost loop carries an
        // explicit `loop` directive
        let kernel_body = if dir.kind == DirectiveKind::ParallelLoop {
            Stmt::Directive {
                dir: Directive::new(DirectiveKind::Loop, loop_clauses),
                body: Box::new(body.clone()),
            }
        } else {
            body.clone()
        };
        check_kernel_body(&kernel_body)?;

        let unit = extract_kernel(
            self.program,
            &parallel_clauses,
            kernel_body,
            rest,
            self.kernel_in_host_loop,
        )?;
        let push = RuntimeCall::KernelPush {
            kernel: unit.id.clone(),
            args: unit.params.iter().map(|p| p.name.clone()).collect(),
            flags: unit.flags,
        };
        let id = unit.id.clone();
        self.kernels.entry(id).or_insert(unit);

        match data_dir {
            Some(d) => {
                let push_stmt = vec![LStmt::Call(push)];
                // reuse the data lowering for hoisted clauses
                let mut inner = Vec::new();
                self.lower_data_calls(&d, push_stmt, &mut inner)?;
                out.extend(inner);
                Ok(())
            }
            None => {
                out.push(LStmt::Call(push));
                Ok(())
            }
        }
    }

    fn lower_data_calls(
        &mut self,
        dir: &Directive,
        middle: Vec<LStmt>,
        out: &mut Vec<LStmt>,
    ) -> Result<(), LowerError> {
        // entry/exit bracketing around prelowered middle items
        let body = Stmt::Block(Vec::new());
        let mut scratch = Vec::new();
        self.lower_data(dir, &body, &[], &mut scratch)?;
        // scratch = entries..., exits... with an empty middle; splice
        let n_entries = scratch
            .iter()
            .take_while(|i| {
                matches!(
                    i,
                    LStmt::Call(RuntimeCall::Create { .. }) | LStmt::Call(RuntimeCall::Copyin { .. })
                )
            })
            .count();
        let exits = scratch.split_off(n_entries);
        out.extend(scratch);
        out.extend(middle);
        out.extend(exits);
        Ok(())
    }
}

fn section_range(decl: &Decl, sec: &ArraySection) -> (Expr, Expr) {
    match &sec.range {
        Some((start, len)) => (start.clone(), len.clone()),
        None => {
            let mut len = Expr::Int(1);
            let mut first = true;
            for e in &decl.extents {
                let ext = match e {
                    Extent::Lit(n) => Expr::Int(*n as i64),
                    Extent::Param(p) => Expr::Ident(p.clone()),
                };
                len = if first { ext } else { Expr::binary(BinOp::Mul, len, ext) };
                first = false;
            }
            (Expr::Int(0), len)
        }
    }
}

fn check_kernel_body(body: &Stmt) -> Result<(), LowerError> {
    let mut err = None;
    body.walk(&mut |s| {
        if err.is_some() {
            return;
        }
        if let Stmt::Directive { dir, .. } = s {
            match dir.kind {
                DirectiveKind::Parallel | DirectiveKind::ParallelLoop => {
                    err = Some(LowerError::NestedParallel)
                }
                DirectiveKind::Data => {
                    err = Some(LowerError::Unsupported(
                        "data directive inside a parallel region".into(),
                    ))
                }
                _ => {}
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    // exactly one outermost loop nest
    let mut cur = body;
    loop {
        match cur {
            Stmt::Directive { dir, body } if dir.kind == DirectiveKind::Loop => cur = body,
            Stmt::Block(items) if items.len() == 1 => cur = &items[0],
            Stmt::For(_) => return Ok(()),
            _ => {
                return Err(LowerError::MalformedKernel(
                    "parallel region must contain exactly one outermost loop nest".into(),
                ))
            }
        }
    }
}

struct ScalarUse {
    upward_exposed: bool,
    written: bool,
    /// A write outside any branch kills upward exposure for later
    /// reads; branch-local writes do not dominate them.
    written_unconditionally: bool,
    first_seen: usize,
}

fn extract_kernel(
    program: &Program,
    parallel_clauses: &[Clause],
    body: Stmt,
    rest: &[Stmt],
    in_host_loop: bool,
) -> Result<KernelUnit, LowerError> {
    // reductions come from the parallel construct and any loop directive
    let mut reductions: Vec<(ReduceOp, String)> = Vec::new();
    let mut requested_async = None;
    for c in parallel_clauses {
        match c {
            Clause::Reduction { op, var } => reductions.push((*op, var.clone())),
            Clause::Async(id) => requested_async = Some(*id),
            _ => {}
        }
    }
    body.walk(&mut |s| {
        if let Stmt::Directive { dir, .. } = s {
            for c in &dir.clauses {
                if let Clause::Reduction { op, var } = c {
                    if !reductions.iter().any(|(_, v)| v == var) {
                        reductions.push((*op, var.clone()));
                    }
                }
            }
        }
    });

    // reference collection in source-traversal order
    let mut arrays: Vec<String> = Vec::new();
    let mut arrays_read: Vec<String> = Vec::new();
    let mut arrays_written: Vec<String> = Vec::new();
    let mut scalars: BTreeMap<String, ScalarUse> = BTreeMap::new();
    let mut iter_stack: Vec<String> = Vec::new();
    let mut parallel_iters: Vec<String> = Vec::new();
    let mut has_atomic = false;
    let mut counter = 0usize;

    fn note_array(list: &mut Vec<String>, name: &str) {
        if !list.iter().any(|a| a == name) {
            list.push(name.to_string());
        }
    }

    struct Collector<'a> {
        program: &'a Program,
        arrays: &'a mut Vec<String>,
        arrays_read: &'a mut Vec<String>,
        arrays_written: &'a mut Vec<String>,
        scalars: &'a mut BTreeMap<String, ScalarUse>,
        iter_stack: &'a mut Vec<String>,
        counter: &'a mut usize,
        cond_depth: usize,
    }

    impl<'a> Collector<'a> {
        fn expr(&mut self, e: &Expr, reading: bool) {
            match e {
                Expr::Ident(name) => {
                    if self.iter_stack.iter().any(|i| i == name) {
                        return;
                    }
                    if self.program.decl(name).is_some() {
                        *self.counter += 1;
                        let entry = self.scalars.entry(name.clone()).or_insert(ScalarUse {
                            upward_exposed: false,
                            written: false,
                            written_unconditionally: false,
                            first_seen: *self.counter,
                        });
                        if reading && !entry.written_unconditionally {
                            entry.upward_exposed = true;
                        }
                    }
                }
                Expr::Index { array, indices } => {
                    note_array(self.arrays, array);
                    if reading {
                        note_array(self.arrays_read, array);
                    }
                    for ix in indices {
                        self.expr(ix, true);
                    }
                }
                Expr::Unary { expr, .. } => self.expr(expr, reading),
                Expr::Binary { lhs, rhs, .. } => {
                    self.expr(lhs, reading);
                    self.expr(rhs, reading);
                }
                Expr::Ternary {
                    cond,
                    then_val,
                    else_val,
                } => {
                    self.expr(cond, true);
                    self.expr(then_val, reading);
                    self.expr(else_val, reading);
                }
                Expr::Call { arg, .. } => self.expr(arg, true),
                Expr::Int(_) | Expr::Float(_) => {}
            }
        }

        fn write_target(&mut self, lv: &LValue, compound: bool) {
            if lv.indices.is_empty() {
                *self.counter += 1;
                let cond_depth = self.cond_depth;
                let entry = self.scalars.entry(lv.name.clone()).or_insert(ScalarUse {
                    upward_exposed: false,
                    written: false,
                    written_unconditionally: false,
                    first_seen: *self.counter,
                });
                if compound && !entry.written_unconditionally {
                    entry.upward_exposed = true;
                }
                entry.written = true;
                if cond_depth == 0 {
                    entry.written_unconditionally = true;
                }
            } else {
                note_array(self.arrays, &lv.name);
                note_array(self.arrays_written, &lv.name);
                if compound {
                    note_array(self.arrays_read, &lv.name);
                }
                for ix in &lv.indices {
                    self.expr(ix, true);
                }
            }
        }
    }

    let mut col = Collector {
        program,
        arrays: &mut arrays,
        arrays_read: &mut arrays_read,
        arrays_written: &mut arrays_written,
        scalars: &mut scalars,
        iter_stack: &mut iter_stack,
        counter: &mut counter,
        cond_depth: 0,
    };

    fn walk_collect(
        s: &Stmt,
        col: &mut Collector,
        parallel_iters: &mut Vec<String>,
        has_atomic: &mut bool,
        loop_marked: bool,
    ) {
        match s {
            Stmt::Block(items) => {
                for i in items {
                    walk_collect(i, col, parallel_iters, has_atomic, false);
                }
            }
            Stmt::For(l) => {
                col.expr(&l.init, true);
                col.expr(&l.bound, true);
                if let LoopStep::AddAssign(e) = &l.step {
                    col.expr(e, true);
                }
                if loop_marked {
                    parallel_iters.push(l.iter.clone());
                }
                col.iter_stack.push(l.iter.clone());
                walk_collect(&l.body, col, parallel_iters, has_atomic, false);
                col.iter_stack.pop();
            }
            Stmt::If {
                cond,
                then_branch,
                else_branch,
            } => {
                col.expr(cond, true);
                col.cond_depth += 1;
                walk_collect(then_branch, col, parallel_iters, has_atomic, false);
                if let Some(e) = else_branch {
                    walk_collect(e, col, parallel_iters, has_atomic, false);
                }
                col.cond_depth -= 1;
            }
            Stmt::Assign { target, op, value } => {
                col.write_target(target, *op != AssignOp::Set);
                col.expr(value, true);
            }
            Stmt::Atomic { target, op: _, value } => {
                *has_atomic = true;
                col.write_target(target, true);
                col.expr(value, true);
            }
            Stmt::Predicated {
                cond,
                then_assign,
                else_expr: _,
            } => {
                col.expr(cond, true);
                col.cond_depth += 1;
                walk_collect(then_assign, col, parallel_iters, has_atomic, false);
                col.cond_depth -= 1;
            }
            Stmt::Directive { dir, body } => {
                let marked = dir.kind == DirectiveKind::Loop;
                walk_collect(body, col, parallel_iters, has_atomic, marked);
            }
        }
    }
    walk_collect(
        &body,
        &mut col,
        &mut parallel_iters,
        &mut has_atomic,
        false,
    );

    if parallel_iters.is_empty() {
        return Err(LowerError::MalformedKernel(
            "parallel region has no loop-marked iterator".into(),
        ));
    }

    // scalar liveness after the kernel: any later textual read keeps it
    let mut read_later: Vec<String> = Vec::new();
    for s in rest {
        collect_scalar_reads(s, program, &mut read_later);
    }

    let mut params: Vec<Param> = Vec::new();
    for a in &arrays {
        let elem = program.decl(a).map(|d| d.elem).unwrap_or(ElemType::Float);
        params.push(Param {
            name: a.clone(),
            kind: ParamKind::Array,
            elem,
        });
    }
    let scalar_types: BTreeMap<String, ElemType> = scalars
        .keys()
        .filter_map(|name| program.decl(name).map(|d| (name.clone(), d.elem)))
        .collect();
    let mut scalar_order: Vec<(&String, &ScalarUse)> = scalars.iter().collect();
    scalar_order.sort_by_key(|(_, u)| u.first_seen);
    let mut carried_scalars = Vec::new();
    let mut writes_scalar_out = false;
    for (name, use_) in scalar_order {
        let elem = program.decl(name).map(|d| d.elem).unwrap_or(ElemType::Int);
        let is_reduction = reductions.iter().any(|(_, v)| v == name);
        let live_out = read_later.iter().any(|r| r == name) || in_host_loop;
        let kind = if use_.written && (is_reduction || live_out) {
            ParamKind::ScalarOut
        } else if use_.written && !use_.upward_exposed {
            // private temporary: written before read, dead afterwards
            continue;
        } else {
            ParamKind::ScalarIn
        };
        if use_.written && use_.upward_exposed && !is_reduction {
            carried_scalars.push(name.clone());
        }
        if kind == ParamKind::ScalarOut && !is_reduction {
            writes_scalar_out = true;
        }
        params.push(Param {
            name: name.clone(),
            kind,
            elem,
        });
    }

    let flags = KernelFlags {
        has_reduction: !reductions.is_empty(),
        writes_scalar_out,
        has_atomic,
    };

    // canonical source: parallel header with all referenced arrays
    // present, then the body with loop directives retained
    let mut header_clauses = vec![Clause::Present(
        arrays
            .iter()
            .map(|a| ArraySection {
                name: a.clone(),
                range: None,
            })
            .collect(),
    )];
    for (op, var) in &reductions {
        header_clauses.push(Clause::Reduction {
            op: *op,
            var: var.clone(),
        });
    }
    let header = Directive::new(DirectiveKind::Parallel, header_clauses);
    let source = format!(
        "{}\n{}",
        pretty::print_directive(&header),
        pretty::print_stmt(&body)
    );
    let id = KernelId::of_source(&source);

    Ok(KernelUnit {
        id,
        params,
        body,
        parallel_iters,
        reductions,
        arrays_read,
        arrays_written,
        source,
        flags,
        requested_async,
        carried_scalars,
        scalar_types,
    })
}

fn collect_scalar_reads(stmt: &Stmt, program: &Program, out: &mut Vec<String>) {
    let note_expr = |e: &Expr, out: &mut Vec<String>| {
        e.walk(&mut |n| {
            if let Expr::Ident(name) = n {
                if program.decl(name).is_some() && !out.iter().any(|o| o == name) {
                    out.push(name.clone());
                }
            }
        });
    };
    match stmt {
        Stmt::Block(items) => {
            for s in items {
                collect_scalar_reads(s, program, out);
            }
        }
        Stmt::For(l) => {
            note_expr(&l.init, out);
            note_expr(&l.bound, out);
            if let LoopStep::AddAssign(e) = &l.step {
                note_expr(e, out);
            }
            collect_scalar_reads(&l.body, program, out);
        }
        Stmt::If {
            cond,
            then_branch,
            else_branch,
        } => {
            note_expr(cond, out);
            collect_scalar_reads(then_branch, program, out);
            if let Some(e) = else_branch {
                collect_scalar_reads(e, program, out);
            }
        }
        Stmt::Assign { target, value, .. } | Stmt::Atomic { target, value, .. } => {
            for ix in &target.indices {
                note_expr(ix, out);
            }
            note_expr(value, out);
        }
        Stmt::Predicated {
            cond,
            then_assign,
            else_expr,
        } => {
            note_expr(cond, out);
            collect_scalar_reads(then_assign, program, out);
            note_expr(else_expr, out);
        }
        Stmt::Directive { dir, body } => {
            for c in &dir.clauses {
                match c {
                    Clause::Copyin(s) | Clause::Copyout(s) | Clause::Create(s) | Clause::Present(s) => {
                        for sec in s {
                            if let Some((a, b)) = &sec.range {
                                note_expr(a, out);
                                note_expr(b, out);
                            }
                        }
                    }
                    _ => {}
                }
            }
            collect_scalar_reads(body, program, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::samples;

    #[test]
    fn decompose_combined_with_data_clause() {
        let dir = Directive::new(
            DirectiveKind::ParallelLoop,
            vec![Clause::Copyout(vec![ArraySection {
                name: "x".into(),
                range: None,
            }])],
        );
        let parts = decompose(&dir);
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[0].kind, DirectiveKind::Data);
        assert_eq!(parts[1].kind, DirectiveKind::Parallel);
        assert_eq!(parts[2].kind, DirectiveKind::Loop);
    }

    #[test]
    fn decompose_basic_is_identity() {
        let dir = Directive::new(DirectiveKind::Loop, vec![Clause::Gang]);
        assert_eq!(decompose(&dir), vec![dir.clone()]);
    }

    #[test]
    fn decompose_keeps_reduction_on_parallel() {
        let dir = Directive::new(
            DirectiveKind::ParallelLoop,
            vec![
                Clause::Reduction {
                    op: ReduceOp::Add,
                    var: "sum".into(),
                },
                Clause::Gang,
            ],
        );
        let parts = decompose(&dir);
        assert_eq!(parts.len(), 2); // no data clauses
        assert_eq!(parts[0].kind, DirectiveKind::Parallel);
        assert!(matches!(parts[0].clauses[0], Clause::Reduction { .. }));
        assert_eq!(parts[1].kind, DirectiveKind::Loop);
        assert_eq!(parts[1].clauses, vec![Clause::Gang]);
    }

    #[test]
    fn square_program_lowers_to_three_calls() {
        let p = parse(samples::SQUARE).unwrap();
        let lowered = lower(&p).unwrap();
        let calls = lowered.calls();
        assert_eq!(calls.len(), 3);
        match calls[0] {
            RuntimeCall::Create { array, len, elem_bytes, .. } => {
                assert_eq!(array, "x");
                assert_eq!(crate::pretty::print_expr(len), "N");
                assert_eq!(*elem_bytes, 8);
            }
            other => panic!("expected create, got {other:?}"),
        }
        match calls[1] {
            RuntimeCall::KernelPush { args, .. } => {
                assert_eq!(args, &vec!["x".to_string(), "y".into(), "N".into()]);
            }
            other => panic!("expected kernel_push, got {other:?}"),
        }
        assert!(matches!(calls[2], RuntimeCall::Copyout { array, .. } if array == "x"));
    }

    #[test]
    fn host_only_program_emits_no_calls() {
        let p = parse("int s;\ns = 1;\nfor (int i = 0; i < 3; i++) s = s + i;\n").unwrap();
        let lowered = lower(&p).unwrap();
        assert!(lowered.calls().is_empty());
        assert_eq!(lowered.items.len(), 2);
    }

    #[test]
    fn kernel_source_lists_referenced_arrays_present() {
        let p = parse(samples::SQUARE).unwrap();
        let lowered = lower(&p).unwrap();
        let unit = lowered.kernels.values().next().unwrap();
        assert!(unit.source.starts_with("#pragma acc parallel present(x, y)"));
        assert!(unit.source.contains("#pragma acc loop\n"));
    }

    #[test]
    fn identical_kernels_share_an_id() {
        let src = "\
int N;
double x[N];
double y[N];
#pragma acc data copyout(x[0:N]) copyin(y[0:N])
{
  #pragma acc parallel loop
  for (int i = 0; i < N; i++) x[i] = y[i] * y[i];
  #pragma acc parallel loop
  for (int i = 0; i < N; i++) x[i] = y[i] * y[i];
}
";
        let lowered = lower(&parse(src).unwrap()).unwrap();
        assert_eq!(lowered.kernels.len(), 1);
        let pushes: Vec<_> = lowered
            .calls()
            .into_iter()
            .filter(|c| matches!(c, RuntimeCall::KernelPush { .. }))
            .collect();
        assert_eq!(pushes.len(), 2);
        assert_eq!(pushes[0], pushes[1]);
    }

    #[test]
    fn nested_parallel_is_rejected() {
        let src = "\
int N;
double x[N];
#pragma acc parallel loop
for (int i = 0; i < N; i++) {
  #pragma acc parallel loop
  for (int j = 0; j < N; j++) x[j] = 1.0;
}
";
        assert_eq!(lower(&parse(src).unwrap()).unwrap_err(), LowerError::NestedParallel);
    }

    #[test]
    fn reduction_scalar_is_scalar_out() {
        let p = parse(samples::DOT_REDUCTION).unwrap();
        let lowered = lower(&p).unwrap();
        let unit = lowered.kernels.values().next().unwrap();
        let sum = unit.param("sum").unwrap();
        assert_eq!(sum.kind, ParamKind::ScalarOut);
        assert!(unit.flags.has_reduction);
        assert!(!unit.flags.writes_scalar_out);
        assert!(unit.source.contains("reduction(+:sum)"));
    }

    #[test]
    fn carried_scalar_is_detected() {
        let p = parse(samples::CHAIN_FIVE).unwrap();
        let lowered = lower(&p).unwrap();
        let unit = lowered.kernels.values().next().unwrap();
        assert_eq!(unit.carried_scalars, vec!["x".to_string()]);
        // x is dead after the region, so it is not exported
        assert_eq!(unit.param("x").unwrap().kind, ParamKind::ScalarIn);
    }

    #[test]
    fn private_temporary_is_not_a_parameter() {
        let src = "\
int N;
double a[N];
double c[N];
double t;
#pragma acc data copyin(c[0:N]) copyout(a[0:N])
#pragma acc parallel loop gang
for (int i = 0; i < N; i++) {
  t = c[i] * 2.0;
  a[i] = t;
}
";
        let lowered = lower(&parse(src).unwrap()).unwrap();
        let unit = lowered.kernels.values().next().unwrap();
        assert!(unit.param("t").is_none());
        assert!(unit.carried_scalars.is_empty());
    }

    #[test]
    fn parallel_iterators_follow_loop_directives() {
        let p = parse(samples::BLOCK_SOLVER_6D).unwrap();
        let lowered = lower(&p).unwrap();
        let unit = lowered.kernels.values().next().unwrap();
        assert_eq!(unit.parallel_iters, vec!["i".to_string(), "k".into()]);
    }
}
