//! SSA conversion and iterative dependence analysis over kernel bodies.
//!
//! Scalars get fresh versions per assignment (with join versions at
//! branch merges and loop entries); array accesses become access sites
//! with per-dimension normalized index expressions.  Value-flow edges
//! connect array reads to the writes that may have produced their
//! element within one execution of the innermost parallel region.  A
//! fixed point then attaches to every write the set of bound checks
//! that must gate it: the write's own array plus every array whose
//! later writes transitively consume the value.
//!
//! Two facts do most of the work downstream:
//!
//! * a read with a structurally identical, unconditionally preceding
//!   write uses exactly that definition (later writes at the same index
//!   shadow earlier may-matches, and the guard fixed point makes the
//!   shadowing definition execute wherever the read does);
//! * an access pair is provably independent inside one region instance
//!   when some dimension differs by a nonzero constant over the same
//!   parallel iterator or launch-invariant scalar, or over unequal
//!   constants.  Sequential iterators never separate accesses, since
//!   the region instance spans all their iterations.

use crate::ast::*;
use crate::lower::{KernelUnit, Param, ParamKind};
use crate::pretty;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsaError {
    #[error("unsupported construct in kernel body: {0}")]
    UnsupportedConstruct(String),
}

/// Placeholder context while a statement's write site id is unknown.
const PENDING_WRITE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

/// How a symbol behaves across iterations of the analyzed region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SymKind {
    /// Iterator of a directive-marked (parallel) loop: fixed within one
    /// region instance.
    ParallelIter,
    /// Iterator of an unmarked loop inside the region: varies within
    /// one instance.
    SeqIter,
    /// Scalar never assigned in the body: fixed for the whole launch.
    Invariant,
    /// Scalar reassigned somewhere in the body.
    Mutable,
}

/// Index expression reduced to `base + offset` for comparisons.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum NormBase {
    Const,
    Sym(String, SymKind),
    /// Anything else, keyed by canonical text.
    Opaque(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct NormIdx {
    pub base: NormBase,
    pub offset: i64,
}

pub fn normalize(expr: &Expr, classify: &dyn Fn(&str) -> SymKind) -> NormIdx {
    match expr {
        Expr::Int(n) => NormIdx {
            base: NormBase::Const,
            offset: *n,
        },
        Expr::Ident(name) => NormIdx {
            base: NormBase::Sym(name.clone(), classify(name)),
            offset: 0,
        },
        Expr::Binary {
            op: BinOp::Add,
            lhs,
            rhs,
        } => match (lhs.as_ref(), rhs.as_ref()) {
            (e, Expr::Int(n)) | (Expr::Int(n), e) => {
                let mut norm = normalize(e, classify);
                norm.offset = norm.offset.wrapping_add(*n);
                norm
            }
            _ => opaque(expr),
        },
        Expr::Binary {
            op: BinOp::Sub,
            lhs,
            rhs,
        } => match rhs.as_ref() {
            Expr::Int(n) => {
                let mut norm = normalize(lhs, classify);
                norm.offset = norm.offset.wrapping_sub(*n);
                norm
            }
            _ => opaque(expr),
        },
        _ => opaque(expr),
    }
}

fn opaque(expr: &Expr) -> NormIdx {
    NormIdx {
        base: NormBase::Opaque(pretty::print_expr(expr)),
        offset: 0,
    }
}

/// Same value within one region instance.
pub fn norm_equal(a: &NormIdx, b: &NormIdx) -> bool {
    a == b
}

/// Provably different values within one region instance.
pub fn provably_distinct(a: &NormIdx, b: &NormIdx) -> bool {
    if a.offset == b.offset {
        return match (&a.base, &b.base) {
            (NormBase::Const, NormBase::Const) => false,
            _ => false,
        };
    }
    match (&a.base, &b.base) {
        (NormBase::Const, NormBase::Const) => true,
        (NormBase::Sym(x, kx), NormBase::Sym(y, ky)) => {
            x == y
                && kx == ky
                && matches!(kx, SymKind::ParallelIter | SymKind::Invariant)
        }
        (NormBase::Opaque(x), NormBase::Opaque(y)) => x == y,
        _ => false,
    }
}

/// Linear in iterators and launch-invariant scalars.
pub fn is_affine(expr: &Expr) -> bool {
    match expr {
        Expr::Int(_) | Expr::Ident(_) => true,
        Expr::Unary { op: UnOp::Neg, expr } => is_affine(expr),
        Expr::Binary {
            op: BinOp::Add | BinOp::Sub,
            lhs,
            rhs,
        } => is_affine(lhs) && is_affine(rhs),
        Expr::Binary {
            op: BinOp::Mul,
            lhs,
            rhs,
        } => matches!(lhs.as_ref(), Expr::Int(_)) && is_affine(rhs)
            || matches!(rhs.as_ref(), Expr::Int(_)) && is_affine(lhs),
        _ => false,
    }
}

/// Where a value is consumed; guards propagate backward along these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UseCtx {
    /// Value operand of an array-write statement.
    WriteStmt(usize),
    /// Right-hand side of a scalar assignment (the def's id).
    ScalarDef(usize),
    /// Value operand of a reduction or exported-scalar statement,
    /// which is filtered on the outermost parallel iterator.
    IterFiltered,
    /// Index, condition, or loop-header position: computed on every
    /// device, so the producing value must exist everywhere.
    Everywhere,
}

/// One array access in the region.
#[derive(Debug, Clone)]
pub struct AccessSite {
    pub id: usize,
    pub array: String,
    pub kind: AccessKind,
    pub indices: Vec<Expr>,
    pub norm: Vec<NormIdx>,
    pub stmt: u32,
    /// Consumption context for reads; `None` for writes.
    pub ctx: Option<UseCtx>,
    /// Enclosing control path (branch/loop markers) for shadowing.
    ctrl: Vec<u32>,
    /// Ids of enclosing unmarked (sequential) loops.
    seq_loops: Vec<u32>,
    /// Iterators visible at this site.
    pub iters_in_scope: BTreeSet<String>,
    order: usize,
}

/// One scalar SSA value.
#[derive(Debug, Clone)]
pub struct ScalarDef {
    pub id: usize,
    pub name: String,
    pub version: u32,
    /// Defining statement; `None` for incoming parameters and joins.
    pub stmt: Option<u32>,
    pub is_join: bool,
}

#[derive(Debug, Clone, Default)]
pub struct StmtAccess {
    pub reads: Vec<usize>,
    pub writes: Vec<usize>,
}

/// SSA values, access sites, def-use edges, and array value flows for
/// one kernel's innermost parallel region.
#[derive(Debug, Clone, Default)]
pub struct SsaGraph {
    pub defs: Vec<ScalarDef>,
    pub sites: Vec<AccessSite>,
    /// (scalar def, context that consumes it)
    pub def_uses: Vec<(usize, UseCtx)>,
    /// (read site, write site that may produce its value)
    pub flows: Vec<(usize, usize)>,
    pub stmt_accesses: BTreeMap<u32, StmtAccess>,
    /// Statements that assign reduction or exported scalars.
    pub iter_filtered_stmts: BTreeSet<u32>,
    /// Scalar-assignment statements eligible for read filtering,
    /// mapped to their defining value.
    pub scalar_def_stmts: BTreeMap<u32, usize>,
    /// Reduction variables read outside their own update statement.
    pub reduction_misuse: bool,
    /// Arrays written outside the innermost parallel region.
    pub unanalyzed_writes: BTreeSet<String>,
    pub outer_iter: String,
    pub parallel_iters: Vec<String>,
}

/// A single bound check required before an access.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum GuardEntry {
    /// Check `array`'s assigned range against the index expressions of
    /// write site `site`.
    Array { array: String, site: usize },
    /// Check the outermost parallel iterator's assigned range.
    OuterIter,
    /// The access must happen on every device.
    Top,
}

/// Guard sets per statement, as consumed by the filtering transform.
#[derive(Debug, Clone, PartialEq)]
pub enum StmtGuard {
    /// Array-write statement gated on the union of these checks.
    Write(Vec<GuardEntry>),
    /// Scalar assignment whose right-hand side is gated.
    ScalarRhs(Vec<GuardEntry>),
    /// Reduction / exported-scalar statement gated on the outermost
    /// parallel iterator range.
    Iter,
}

/// Per-access descriptor with the guard set at fixed point.
#[derive(Debug, Clone)]
pub struct AccessDescriptor {
    pub array: String,
    pub kind: AccessKind,
    pub indices: Vec<Expr>,
    pub affine: Vec<bool>,
    pub stmt: u32,
    /// Guarding arrays with the index vector of the guarded-by write.
    pub guards: Vec<(String, Vec<Expr>)>,
    pub guard_outer_iter: bool,
    pub needed_everywhere: bool,
}

#[derive(Debug, Clone, Default)]
pub struct GuardAnalysis {
    pub descriptors: Vec<AccessDescriptor>,
    pub stmt_guards: BTreeMap<u32, StmtGuard>,
    /// Arrays whose writes must run on every device.
    pub force_duplicate: BTreeSet<String>,
    /// Kernel-wide fallback to duplicated execution.
    pub kernel_force_duplicate: bool,
    /// Per written array, per dimension: some in-region flow crosses
    /// assigned ranges along that dimension.
    pub crossings: BTreeMap<String, Vec<bool>>,
    /// Fixed-point sweeps until stable.
    pub sweeps: usize,
}

pub fn build_ssa(kernel: &KernelUnit) -> Result<SsaGraph, SsaError> {
    Builder::new(kernel).build()
}

struct Builder<'k> {
    kernel: &'k KernelUnit,
    graph: SsaGraph,
    versions: HashMap<String, u32>,
    current: HashMap<String, usize>,
    params: &'k [Param],
    iter_kinds: HashMap<String, SymKind>,
    iter_scope: Vec<String>,
    mutated_scalars: BTreeSet<String>,
    stmt_counter: u32,
    site_counter: usize,
    ctrl: Vec<u32>,
    ctrl_counter: u32,
    seq_loops: Vec<u32>,
    in_region: bool,
}

impl<'k> Builder<'k> {
    fn new(kernel: &'k KernelUnit) -> Builder<'k> {
        Builder {
            kernel,
            graph: SsaGraph {
                outer_iter: kernel
                    .parallel_iters
                    .first()
                    .cloned()
                    .unwrap_or_default(),
                parallel_iters: kernel.parallel_iters.clone(),
                ..Default::default()
            },
            versions: HashMap::new(),
            current: HashMap::new(),
            params: &kernel.params,
            iter_kinds: HashMap::new(),
            iter_scope: Vec::new(),
            mutated_scalars: BTreeSet::new(),
            stmt_counter: 0,
            site_counter: 0,
            ctrl: Vec::new(),
            ctrl_counter: 0,
            seq_loops: Vec::new(),
            in_region: false,
        }
    }

    fn build(mut self) -> Result<SsaGraph, SsaError> {
        // scalars reassigned anywhere in the body are not launch-invariant
        let mut mutated = BTreeSet::new();
        self.kernel.body.walk(&mut |s| {
            if let Stmt::Assign { target, .. } | Stmt::Atomic { target, .. } = s {
                if target.indices.is_empty() {
                    mutated.insert(target.name.clone());
                }
            }
            if let Stmt::Predicated { then_assign, .. } = s {
                if let Stmt::Assign { target, .. } = then_assign.as_ref() {
                    if target.indices.is_empty() {
                        mutated.insert(target.name.clone());
                    }
                }
            }
        });
        self.mutated_scalars = mutated;
        // incoming parameter versions
        for p in self.params {
            if p.kind != ParamKind::Array {
                let id = self.graph.defs.len();
                self.graph.defs.push(ScalarDef {
                    id,
                    name: p.name.clone(),
                    version: 0,
                    stmt: None,
                    is_join: false,
                });
                self.versions.insert(p.name.clone(), 0);
                self.current.insert(p.name.clone(), id);
            }
        }
        let body = self.kernel.body.clone();
        self.walk_nest(&body)?;
        Ok(self.graph)
    }

    fn classify_sym(&self, name: &str) -> SymKind {
        if let Some(k) = self.iter_kinds.get(name) {
            return *k;
        }
        if self.mutated_scalars.contains(name) {
            SymKind::Mutable
        } else {
            SymKind::Invariant
        }
    }

    /// Walks from the kernel body down to the innermost marked loop;
    /// statements outside that loop's body are not analyzed, so their
    /// array writes fall back to duplicated execution.
    fn walk_nest(&mut self, stmt: &Stmt) -> Result<(), SsaError> {
        match stmt {
            Stmt::Directive { dir, body } if dir.kind == DirectiveKind::Loop => {
                if let Stmt::For(l) = body.as_ref() {
                    self.iter_kinds
                        .insert(l.iter.clone(), SymKind::ParallelIter);
                    self.iter_scope.push(l.iter.clone());
                    let deeper_marked = contains_marked_loop(&l.body);
                    self.bump_stmt(); // directive node
                    self.bump_stmt(); // for node
                    if deeper_marked {
                        self.note_writes_outside(&l.body)?;
                        self.walk_nest(&l.body)
                    } else {
                        self.in_region = true;
                        self.visit_stmt(&l.body)?;
                        self.in_region = false;
                        Ok(())
                    }
                } else {
                    Err(SsaError::UnsupportedConstruct(
                        "loop directive must precede a for loop".into(),
                    ))
                }
            }
            Stmt::Block(items) => {
                self.bump_stmt();
                for item in items {
                    if contains_marked_loop(item) {
                        self.walk_nest(item)?;
                    } else {
                        self.skip_numbering(item);
                    }
                }
                Ok(())
            }
            Stmt::For(l) => {
                // unmarked loop between parallel levels
                self.bump_stmt();
                self.iter_kinds.insert(l.iter.clone(), SymKind::SeqIter);
                self.iter_scope.push(l.iter.clone());
                self.walk_nest(&l.body)
            }
            other => Err(SsaError::UnsupportedConstruct(format!(
                "unexpected statement at parallel nest level: {}",
                pretty::print_stmt(other).lines().next().unwrap_or("")
            ))),
        }
    }

    /// Records arrays written by statements that sit inside the kernel
    /// but outside the innermost parallel region.
    fn note_writes_outside(&mut self, body: &Stmt) -> Result<(), SsaError> {
        // everything except the chain containing the next marked loop
        if let Stmt::Block(items) = body {
            for item in items {
                if !contains_marked_loop(item) {
                    item.walk(&mut |s| {
                        if let Stmt::Assign { target, .. }
                        | Stmt::Atomic { target, .. } = s
                        {
                            if !target.indices.is_empty() {
                                self.graph.unanalyzed_writes.insert(target.name.clone());
                            }
                        }
                    });
                }
            }
        }
        Ok(())
    }

    fn bump_stmt(&mut self) -> u32 {
        let id = self.stmt_counter;
        self.stmt_counter += 1;
        id
    }

    /// Numbering must stay aligned with the filtering walk even for
    /// statements this analysis skips.
    fn skip_numbering(&mut self, stmt: &Stmt) {
        stmt.walk(&mut |_| {
            self.stmt_counter += 1;
        });
    }

    fn fresh_def(&mut self, name: &str, stmt: Option<u32>, is_join: bool) -> usize {
        let v = self.versions.entry(name.to_string()).or_insert(0);
        *v += 1;
        let id = self.graph.defs.len();
        self.graph.defs.push(ScalarDef {
            id,
            name: name.to_string(),
            version: *v,
            stmt,
            is_join,
        });
        self.current.insert(name.to_string(), id);
        id
    }

    fn is_iterator(&self, name: &str) -> bool {
        self.iter_kinds.contains_key(name)
    }

    fn is_reduction_var(&self, name: &str) -> bool {
        self.kernel.reductions.iter().any(|(_, v)| v == name)
    }

    fn is_exported_scalar(&self, name: &str) -> bool {
        self.kernel
            .params
            .iter()
            .any(|p| p.name == name && p.kind == ParamKind::ScalarOut)
    }

    fn visit_stmt(&mut self, stmt: &Stmt) -> Result<(), SsaError> {
        let sid = self.bump_stmt();
        match stmt {
            Stmt::Block(items) => {
                for s in items {
                    self.visit_stmt(s)?;
                }
                Ok(())
            }
            Stmt::For(l) => {
                self.visit_expr(&l.init, UseCtx::Everywhere, sid)?;
                self.visit_expr(&l.bound, UseCtx::Everywhere, sid)?;
                if let LoopStep::AddAssign(e) = &l.step {
                    self.visit_expr(e, UseCtx::Everywhere, sid)?;
                }
                self.iter_kinds.insert(l.iter.clone(), SymKind::SeqIter);
                self.iter_scope.push(l.iter.clone());
                // loop-carried scalars get a join at entry fed by the
                // end-of-body definition
                let assigned = assigned_scalars(&l.body);
                let mut joins: Vec<(String, usize)> = Vec::new();
                for name in &assigned {
                    if let Some(pre) = self.current.get(name).copied() {
                        let join = self.fresh_def(name, Some(sid), true);
                        self.graph.def_uses.push((pre, UseCtx::ScalarDef(join)));
                        joins.push((name.clone(), join));
                    }
                }
                let ctrl = self.next_ctrl();
                self.ctrl.push(ctrl);
                self.seq_loops.push(sid);
                self.visit_stmt(&l.body)?;
                self.seq_loops.pop();
                self.ctrl.pop();
                self.iter_scope.pop();
                for (name, join) in joins {
                    if let Some(end) = self.current.get(&name).copied() {
                        if end != join {
                            self.graph.def_uses.push((end, UseCtx::ScalarDef(join)));
                        }
                    }
                    self.current.insert(name, join);
                }
                Ok(())
            }
            Stmt::If {
                cond,
                then_branch,
                else_branch,
            } => {
                self.visit_expr(cond, UseCtx::Everywhere, sid)?;
                let base = self.current.clone();
                let ctrl = self.next_ctrl();
                self.ctrl.push(ctrl);
                self.visit_stmt(then_branch)?;
                self.ctrl.pop();
                let then_map = std::mem::replace(&mut self.current, base.clone());
                if let Some(e) = else_branch {
                    let ctrl = self.next_ctrl();
                self.ctrl.push(ctrl);
                    self.visit_stmt(e)?;
                    self.ctrl.pop();
                }
                let else_map = std::mem::replace(&mut self.current, base.clone());
                // join redefined scalars
                let mut names: BTreeSet<&String> = BTreeSet::new();
                names.extend(then_map.keys());
                names.extend(else_map.keys());
                for name in names {
                    let t = then_map.get(name).copied();
                    let e = else_map.get(name).copied();
                    let b = base.get(name).copied();
                    if t == e {
                        if let Some(d) = t {
                            self.current.insert(name.clone(), d);
                        }
                        continue;
                    }
                    let join = self.fresh_def(name, Some(sid), true);
                    for d in [t, e, b].into_iter().flatten() {
                        if d != join {
                            self.graph.def_uses.push((d, UseCtx::ScalarDef(join)));
                        }
                    }
                }
                Ok(())
            }
            Stmt::Assign { target, op, value } => self.visit_assign(target, *op, value, sid),
            Stmt::Atomic { target, op, value } => self.visit_assign(target, *op, value, sid),
            Stmt::Predicated {
                cond,
                then_assign,
                else_expr: _,
            } => {
                self.visit_expr(cond, UseCtx::Everywhere, sid)?;
                let ctrl = self.next_ctrl();
                self.ctrl.push(ctrl);
                let r = self.visit_stmt(then_assign);
                self.ctrl.pop();
                r
            }
            Stmt::Directive { body, .. } => self.visit_stmt(body),
        }
    }

    fn next_ctrl(&mut self) -> u32 {
        self.ctrl_counter += 1;
        self.ctrl_counter
    }

    fn visit_assign(
        &mut self,
        target: &LValue,
        op: AssignOp,
        value: &Expr,
        sid: u32,
    ) -> Result<(), SsaError> {
        if target.indices.is_empty() {
            // scalar assignment
            let iter_filtered =
                self.is_reduction_var(&target.name) || self.is_exported_scalar(&target.name);
            if iter_filtered {
                self.graph.iter_filtered_stmts.insert(sid);
            }
            let ctx_for_rhs = if iter_filtered {
                UseCtx::IterFiltered
            } else {
                // context resolved after the def exists
                UseCtx::ScalarDef(usize::MAX)
            };
            // compound assignment reads the previous version
            if op != AssignOp::Set {
                if let Some(prev) = self.current.get(&target.name).copied() {
                    // recorded below once the new def id is known
                    let new = self.fresh_def(&target.name, Some(sid), false);
                    let ctx = if iter_filtered {
                        UseCtx::IterFiltered
                    } else {
                        UseCtx::ScalarDef(new)
                    };
                    self.graph.def_uses.push((prev, ctx));
                    let rhs_ctx = if iter_filtered {
                        UseCtx::IterFiltered
                    } else {
                        UseCtx::ScalarDef(new)
                    };
                    self.visit_expr(value, rhs_ctx, sid)?;
                    if !iter_filtered {
                        self.graph.scalar_def_stmts.insert(sid, new);
                    }
                    return Ok(());
                }
            }
            let _ = ctx_for_rhs;
            let new = self.fresh_def(&target.name, Some(sid), false);
            let rhs_ctx = if iter_filtered {
                UseCtx::IterFiltered
            } else {
                UseCtx::ScalarDef(new)
            };
            self.visit_expr(value, rhs_ctx, sid)?;
            if !iter_filtered {
                self.graph.scalar_def_stmts.insert(sid, new);
            }
            Ok(())
        } else {
            // array write: index computation is duplicated everywhere
            for ix in &target.indices {
                self.visit_expr(ix, UseCtx::Everywhere, sid)?;
            }
            // the write site id is only known once the value reads are
            // registered; patch their contexts afterwards
            let first_value_site = self.site_counter;
            let first_value_use = self.graph.def_uses.len();
            if op != AssignOp::Set {
                self.add_site(
                    &target.name,
                    AccessKind::Read,
                    &target.indices,
                    sid,
                    Some(UseCtx::WriteStmt(PENDING_WRITE)),
                );
            }
            self.visit_expr(value, UseCtx::WriteStmt(PENDING_WRITE), sid)?;
            let write_id = self.site_counter;
            self.add_site(
                &target.name,
                AccessKind::Write,
                &target.indices,
                sid,
                None,
            );
            for site in &mut self.graph.sites[first_value_site..] {
                if site.ctx == Some(UseCtx::WriteStmt(PENDING_WRITE)) {
                    site.ctx = Some(UseCtx::WriteStmt(write_id));
                }
            }
            for (_, ctx) in &mut self.graph.def_uses[first_value_use..] {
                if *ctx == UseCtx::WriteStmt(PENDING_WRITE) {
                    *ctx = UseCtx::WriteStmt(write_id);
                }
            }
            Ok(())
        }
    }

    fn visit_expr(&mut self, expr: &Expr, ctx: UseCtx, sid: u32) -> Result<(), SsaError> {
        match expr {
            Expr::Int(_) | Expr::Float(_) => Ok(()),
            Expr::Ident(name) => {
                if self.is_iterator(name) {
                    return Ok(());
                }
                if let Some(def) = self.current.get(name).copied() {
                    if self.is_reduction_var(name) {
                        // a reduction value consumed anywhere except its
                        // own iterator-filtered update is unusable under
                        // split execution
                        if ctx != UseCtx::IterFiltered {
                            self.graph.reduction_misuse = true;
                        }
                    }
                    self.graph.def_uses.push((def, ctx));
                }
                Ok(())
            }
            Expr::Index { array, indices } => {
                for ix in indices {
                    self.visit_expr(ix, UseCtx::Everywhere, sid)?;
                }
                self.add_site(array, AccessKind::Read, indices, sid, Some(ctx));
                Ok(())
            }
            Expr::Unary { expr, .. } => self.visit_expr(expr, ctx, sid),
            Expr::Binary { op, lhs, rhs } => {
                // comparison/logical operands decide control of value
                // selection but still flow as values
                let _ = op;
                self.visit_expr(lhs, ctx, sid)?;
                self.visit_expr(rhs, ctx, sid)
            }
            Expr::Ternary {
                cond,
                then_val,
                else_val,
            } => {
                self.visit_expr(cond, UseCtx::Everywhere, sid)?;
                self.visit_expr(then_val, ctx, sid)?;
                self.visit_expr(else_val, ctx, sid)
            }
            Expr::Call { arg, .. } => self.visit_expr(arg, ctx, sid),
        }
    }

    fn add_site(
        &mut self,
        array: &str,
        kind: AccessKind,
        indices: &[Expr],
        stmt: u32,
        ctx: Option<UseCtx>,
    ) {
        let id = self.site_counter;
        self.site_counter += 1;
        let classify = |name: &str| self.classify_sym(name);
        let norm: Vec<NormIdx> = indices.iter().map(|e| normalize(e, &classify)).collect();
        let site = AccessSite {
            id,
            array: array.to_string(),
            kind,
            indices: indices.to_vec(),
            norm,
            stmt,
            ctx,
            ctrl: self.ctrl.clone(),
            seq_loops: self.seq_loops.clone(),
            iters_in_scope: self.iter_scope.iter().cloned().collect(),
            order: id,
        };
        let acc = self.graph.stmt_accesses.entry(stmt).or_default();
        match kind {
            AccessKind::Read => acc.reads.push(id),
            AccessKind::Write => acc.writes.push(id),
        }
        self.graph.sites.push(site);
    }
}

fn assigned_scalars(stmt: &Stmt) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    stmt.walk(&mut |s| {
        let target = match s {
            Stmt::Assign { target, .. } | Stmt::Atomic { target, .. } => Some(target),
            _ => None,
        };
        if let Some(t) = target {
            if t.indices.is_empty() {
                out.insert(t.name.clone());
            }
        }
    });
    out
}

fn contains_marked_loop(stmt: &Stmt) -> bool {
    let mut found = false;
    stmt.walk(&mut |s| {
        if let Stmt::Directive { dir, .. } = s {
            if dir.kind == DirectiveKind::Loop {
                found = true;
            }
        }
    });
    found
}

/// Computes the guard fixed point over an SSA graph.
pub fn compute_guards(graph: &SsaGraph) -> GuardAnalysis {
    let flows = build_flows(graph);
    let mut write_guards: HashMap<usize, BTreeSet<GuardEntry>> = HashMap::new();
    let mut def_guards: HashMap<usize, BTreeSet<GuardEntry>> = HashMap::new();
    for site in &graph.sites {
        if site.kind == AccessKind::Write {
            let mut set = BTreeSet::new();
            set.insert(GuardEntry::Array {
                array: site.array.clone(),
                site: site.id,
            });
            write_guards.insert(site.id, set);
        }
    }
    for def in &graph.defs {
        def_guards.insert(def.id, BTreeSet::new());
    }

    // consumption targets per write site / scalar def
    let mut write_targets: HashMap<usize, Vec<UseCtx>> = HashMap::new();
    for (read, write) in &flows {
        let ctx = graph.sites[*read].ctx.expect("reads carry context");
        write_targets.entry(*write).or_default().push(ctx);
    }
    let mut def_targets: HashMap<usize, Vec<UseCtx>> = HashMap::new();
    for (def, ctx) in &graph.def_uses {
        def_targets.entry(*def).or_default().push(*ctx);
    }

    let lookup = |ctx: &UseCtx,
                  writes: &HashMap<usize, BTreeSet<GuardEntry>>,
                  defs: &HashMap<usize, BTreeSet<GuardEntry>>|
     -> BTreeSet<GuardEntry> {
        match ctx {
            UseCtx::WriteStmt(w) => writes.get(w).cloned().unwrap_or_default(),
            UseCtx::ScalarDef(d) => defs.get(d).cloned().unwrap_or_default(),
            UseCtx::IterFiltered => {
                let mut s = BTreeSet::new();
                s.insert(GuardEntry::OuterIter);
                s
            }
            UseCtx::Everywhere => {
                let mut s = BTreeSet::new();
                s.insert(GuardEntry::Top);
                s
            }
        }
    };

    let mut sweeps = 0usize;
    loop {
        sweeps += 1;
        let mut changed = false;
        for (w, targets) in &write_targets {
            let mut add = BTreeSet::new();
            for t in targets {
                add.extend(lookup(t, &write_guards, &def_guards));
            }
            let cur = write_guards.get_mut(w).expect("write registered");
            let before = cur.len();
            cur.extend(add);
            changed |= cur.len() != before;
        }
        for (d, targets) in &def_targets {
            let mut add = BTreeSet::new();
            for t in targets {
                add.extend(lookup(t, &write_guards, &def_guards));
            }
            let cur = def_guards.get_mut(d).expect("def registered");
            let before = cur.len();
            cur.extend(add);
            changed |= cur.len() != before;
        }
        if !changed {
            break;
        }
        // the universe is finite; growth must stop well before this
        if sweeps > graph.sites.len() + graph.defs.len() + 2 {
            break;
        }
    }

    // a transplanted bound check is only emittable when the consumer's
    // index expressions are in scope at the guarded statement; when they
    // are not, the write must simply run everywhere
    let scope_ok = |entry: &GuardEntry, at: &AccessSite| -> bool {
        match entry {
            GuardEntry::Array { site, .. } => {
                let consumer = &graph.sites[*site];
                consumer
                    .iters_in_scope
                    .iter()
                    .all(|i| at.iters_in_scope.contains(i))
            }
            _ => true,
        }
    };
    for site_id in 0..graph.sites.len() {
        let site = &graph.sites[site_id];
        if site.kind != AccessKind::Write {
            continue;
        }
        let bad = write_guards[&site.id]
            .iter()
            .any(|e| !scope_ok(e, site));
        if bad {
            write_guards
                .get_mut(&site.id)
                .expect("write registered")
                .insert(GuardEntry::Top);
        }
    }

    // force-duplicate arrays: writes needed everywhere or unanalyzed
    let mut force_duplicate: BTreeSet<String> = graph.unanalyzed_writes.clone();
    for site in &graph.sites {
        if site.kind == AccessKind::Write {
            if write_guards[&site.id].contains(&GuardEntry::Top) {
                force_duplicate.insert(site.array.clone());
            }
        }
    }

    // per-statement guards
    let mut stmt_guards: BTreeMap<u32, StmtGuard> = BTreeMap::new();
    for sid in &graph.iter_filtered_stmts {
        stmt_guards.insert(*sid, StmtGuard::Iter);
    }
    for site in &graph.sites {
        if site.kind != AccessKind::Write {
            continue;
        }
        let guard = &write_guards[&site.id];
        if guard.contains(&GuardEntry::Top) {
            continue; // runs everywhere, unfiltered
        }
        let entries = order_entries(guard, site.id);
        stmt_guards.insert(site.stmt, StmtGuard::Write(entries));
    }
    for (sid, def) in &graph.scalar_def_stmts {
        if stmt_guards.contains_key(sid) {
            continue;
        }
        let guard = &def_guards[def];
        if guard.is_empty() || guard.contains(&GuardEntry::Top) {
            continue;
        }
        // only useful when the statement actually reads arrays
        let has_reads = graph
            .stmt_accesses
            .get(sid)
            .map(|a| !a.reads.is_empty())
            .unwrap_or(false);
        if has_reads {
            stmt_guards.insert(*sid, StmtGuard::ScalarRhs(order_entries(guard, usize::MAX)));
        }
    }

    // crossings per written array and dimension
    let mut crossings: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for site in &graph.sites {
        if site.kind == AccessKind::Write {
            crossings
                .entry(site.array.clone())
                .or_insert_with(|| vec![false; site.indices.len()]);
        }
    }
    for (read, write) in &flows {
        let (r, w) = (&graph.sites[*read], &graph.sites[*write]);
        if r.array != w.array {
            continue;
        }
        let entry = crossings.entry(w.array.clone()).or_default();
        for d in 0..w.norm.len().min(r.norm.len()) {
            if !norm_equal(&w.norm[d], &r.norm[d]) {
                entry[d] = true;
            }
        }
    }

    // descriptors
    let mut descriptors = Vec::new();
    for site in &graph.sites {
        let guard = match site.kind {
            AccessKind::Write => write_guards[&site.id].clone(),
            AccessKind::Read => match site.ctx {
                Some(ctx) => lookup(&ctx, &write_guards, &def_guards),
                None => BTreeSet::new(),
            },
        };
        let mut arrays: Vec<(String, Vec<Expr>)> = Vec::new();
        let mut outer = false;
        let mut everywhere = false;
        for g in &guard {
            match g {
                GuardEntry::Array { array, site: s } => {
                    let exprs = graph.sites[*s].indices.clone();
                    if !arrays.iter().any(|(a, e)| a == array && *e == exprs) {
                        arrays.push((array.clone(), exprs));
                    }
                }
                GuardEntry::OuterIter => outer = true,
                GuardEntry::Top => everywhere = true,
            }
        }
        arrays.sort_by(|a, b| a.0.cmp(&b.0));
        descriptors.push(AccessDescriptor {
            array: site.array.clone(),
            kind: site.kind,
            indices: site.indices.clone(),
            affine: site.indices.iter().map(is_affine).collect(),
            stmt: site.stmt,
            guards: arrays,
            guard_outer_iter: outer,
            needed_everywhere: everywhere,
        });
    }

    GuardAnalysis {
        descriptors,
        stmt_guards,
        force_duplicate,
        kernel_force_duplicate: graph.reduction_misuse,
        crossings,
        sweeps,
    }
}

/// Self entry first, then the rest ordered by array name and site id.
fn order_entries(guard: &BTreeSet<GuardEntry>, self_site: usize) -> Vec<GuardEntry> {
    let mut own: Vec<GuardEntry> = Vec::new();
    let mut rest: Vec<GuardEntry> = Vec::new();
    for g in guard {
        match g {
            GuardEntry::Array { site, .. } if *site == self_site => own.push(g.clone()),
            GuardEntry::Top => {}
            _ => rest.push(g.clone()),
        }
    }
    own.extend(rest);
    own
}

/// Read-to-write value flows.  A structurally identical write that
/// precedes the read on an unconditional path shadows all earlier
/// candidates; otherwise every non-disjoint write that precedes the
/// read or shares a sequential loop with it may be the producer.
fn build_flows(graph: &SsaGraph) -> Vec<(usize, usize)> {
    let mut flows = Vec::new();
    for r in &graph.sites {
        if r.kind != AccessKind::Read {
            continue;
        }
        let mut cands: Vec<&AccessSite> = Vec::new();
        for w in &graph.sites {
            if w.kind != AccessKind::Write || w.array != r.array || w.id == r.id {
                continue;
            }
            if w.norm.len() != r.norm.len() {
                continue;
            }
            let disjoint = w
                .norm
                .iter()
                .zip(&r.norm)
                .any(|(a, b)| provably_distinct(a, b));
            if disjoint {
                continue;
            }
            let precedes = w.order < r.order;
            let shares_loop = w.seq_loops.iter().any(|l| r.seq_loops.contains(l));
            if precedes || shares_loop {
                cands.push(w);
            }
        }
        let exact = cands
            .iter()
            .filter(|w| {
                w.order < r.order
                    && w.norm == r.norm
                    && r.ctrl.starts_with(&w.ctrl)
            })
            .max_by_key(|w| w.order);
        match exact {
            Some(w) => flows.push((r.id, w.id)),
            None => {
                for w in cands {
                    flows.push((r.id, w.id));
                }
            }
        }
    }
    flows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::lower;
    use crate::parser::parse;
    use crate::samples;

    fn analyze(src: &str) -> (SsaGraph, GuardAnalysis) {
        let p = parse(src).unwrap();
        let lowered = lower(&p).unwrap();
        let unit = lowered.kernels.values().next().unwrap();
        let graph = build_ssa(unit).unwrap();
        let guards = compute_guards(&graph);
        (graph, guards)
    }

    fn guard_arrays(ga: &GuardAnalysis, array: &str, stmt_nth: usize) -> Vec<String> {
        let writes: Vec<&AccessDescriptor> = ga
            .descriptors
            .iter()
            .filter(|d| d.kind == AccessKind::Write && d.array == array)
            .collect();
        let d = writes[stmt_nth];
        let mut names: Vec<String> = d.guards.iter().map(|(a, _)| a.clone()).collect();
        names.dedup();
        names
    }

    #[test]
    fn five_statement_chain_guards_match_expected_sets() {
        let (_, ga) = analyze(samples::CHAIN_FIVE);
        // writes: a[i], b[i], a[k], b[k]
        assert_eq!(guard_arrays(&ga, "a", 0), vec!["a", "b"]);
        assert_eq!(guard_arrays(&ga, "b", 0), vec!["b"]);
        assert_eq!(guard_arrays(&ga, "a", 1), vec!["a", "b"]);
        assert_eq!(guard_arrays(&ga, "b", 1), vec!["b"]);
        // the guarded read c[j] is predicated on a and b at index k
        let c_read = ga
            .descriptors
            .iter()
            .find(|d| d.kind == AccessKind::Read && d.array == "c")
            .unwrap();
        let arrays: Vec<&str> = c_read.guards.iter().map(|(a, _)| a.as_str()).collect();
        assert_eq!(arrays, vec!["a", "b"]);
        for (_, idx) in &c_read.guards {
            assert_eq!(crate::pretty::print_expr(&idx[0]), "k");
        }
    }

    #[test]
    fn transitive_chain_closes_guards() {
        let src = "\
int N;
double a[N];
double b[N];
double d[N];
double c[N];
#pragma acc data copyin(c[0:N]) copyout(a[0:N], b[0:N], d[0:N])
#pragma acc parallel loop gang
for (int i = 0; i < N; i++) {
  a[i] = c[i];
  b[i] = a[i];
  d[i] = b[i];
}
";
        let (_, ga) = analyze(src);
        assert_eq!(guard_arrays(&ga, "a", 0), vec!["a", "b", "d"]);
        assert_eq!(guard_arrays(&ga, "b", 0), vec!["b", "d"]);
        assert_eq!(guard_arrays(&ga, "d", 0), vec!["d"]);
    }

    #[test]
    fn lone_write_guards_only_itself() {
        let src = "\
int N;
double b[N];
#pragma acc parallel loop gang
for (int i = 0; i < N; i++) b[i] = 2.0;
";
        let (_, ga) = analyze(src);
        assert_eq!(guard_arrays(&ga, "b", 0), vec!["b"]);
    }

    #[test]
    fn reduction_update_has_def_use_chain() {
        let (graph, _) = analyze(samples::DOT_REDUCTION);
        let sum_defs: Vec<&ScalarDef> =
            graph.defs.iter().filter(|d| d.name == "sum").collect();
        assert!(sum_defs.len() >= 2, "incoming version plus one update");
        let first = sum_defs[0].id;
        assert!(graph
            .def_uses
            .iter()
            .any(|(d, ctx)| *d == first && *ctx == UseCtx::IterFiltered));
        assert!(!graph.reduction_misuse);
    }

    #[test]
    fn reduction_read_elsewhere_is_misuse() {
        let src = "\
int N;
double a[N];
double out[N];
double s;
s = 0.0;
#pragma acc data copyin(a[0:N]) copyout(out[0:N])
#pragma acc parallel loop gang reduction(+:s)
for (int i = 0; i < N; i++) {
  s += a[i];
  out[i] = s;
}
";
        let (graph, ga) = analyze(src);
        assert!(graph.reduction_misuse);
        assert!(ga.kernel_force_duplicate);
    }

    #[test]
    fn straight_line_single_assignment() {
        let src = "\
int N;
double a[N];
double c[N];
#pragma acc parallel loop gang
for (int i = 0; i < N; i++) a[i] = c[i] * 2.0;
";
        let (graph, _) = analyze(src);
        let a_defs: Vec<_> = graph.defs.iter().filter(|d| d.stmt.is_some()).collect();
        assert!(a_defs.is_empty(), "no scalar redefinitions");
    }

    #[test]
    fn fixed_point_terminates_quickly() {
        let (_, ga) = analyze(samples::CHAIN_FIVE);
        assert!(ga.sweeps <= 5, "sweeps = {}", ga.sweeps);
    }

    #[test]
    fn indirect_write_index_is_opaque_but_guarded() {
        let src = "\
int N;
int M;
int col[N];
double a[M];
double v[N];
#pragma acc data copyin(col[0:N], v[0:N]) copyout(a[0:M])
#pragma acc parallel loop gang
for (int j = 0; j < N; j++) a[col[j]] = v[j];
";
        let (_, ga) = analyze(src);
        let w = ga
            .descriptors
            .iter()
            .find(|d| d.kind == AccessKind::Write && d.array == "a")
            .unwrap();
        assert_eq!(w.affine, vec![false]);
        assert_eq!(guard_arrays(&ga, "a", 0), vec!["a"]);
        // the index read col[j] must stay unfiltered
        let col_read = ga
            .descriptors
            .iter()
            .find(|d| d.kind == AccessKind::Read && d.array == "col")
            .unwrap();
        assert!(col_read.needed_everywhere);
        // col is not written here, so nothing is forced to duplicate
        assert!(ga.force_duplicate.is_empty());
    }

    #[test]
    fn write_feeding_an_index_forces_duplication() {
        let src = "\
int N;
int idx[N];
double a[N];
double v[N];
#pragma acc data copyin(v[0:N]) copyout(a[0:N], idx[0:N])
#pragma acc parallel loop gang
for (int i = 0; i < N; i++) {
  idx[i] = i;
  a[idx[i]] = v[i];
}
";
        let (_, ga) = analyze(src);
        assert!(ga.force_duplicate.contains("idx"));
        assert!(!ga.force_duplicate.contains("a"));
    }

    #[test]
    fn block_solver_crossings_spare_the_plane_dims() {
        let (_, ga) = analyze(samples::BLOCK_SOLVER_6D);
        let crossings = &ga.crossings["lhsY"];
        assert_eq!(crossings.len(), 6);
        // block dimensions cross; the i/k planes do not
        assert!(crossings[1], "dim 1 mixes m with block constants");
        assert!(crossings[2], "dim 2 mixes coefficient selectors");
        assert!(!crossings[3], "plane offset read is provably disjoint");
        assert!(!crossings[4], "i stays aligned");
        assert!(!crossings[5], "k stays aligned");
    }

    #[test]
    fn offset_read_of_unwritten_array_does_not_cross() {
        let (_, ga) = analyze(samples::STENCIL_19PT);
        let crossings = &ga.crossings["wrk"];
        assert_eq!(crossings, &vec![false, false, false]);
        assert_eq!(guard_arrays(&ga, "wrk", 0), vec!["wrk"]);
    }
}
