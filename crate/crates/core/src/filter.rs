//! Predicate-based filtering and work-distribution planning.
//!
//! Rather than splitting loop ranges, every device executes the whole
//! loop nest and each array write is wrapped in a range check over the
//! device's assigned slice of that array.  The transform inserts fresh
//! `<array>_lb`/`<array>_ub` bound parameters (plus `it_lb`/`it_ub` for
//! the outermost parallel iterator when reductions or exported scalars
//! are filtered); the runtime binds them per device at launch.
//!
//! Dimension selection scores each dimension of an updated array by the
//! parallel iterators its index expressions contain minus the
//! sequential ones, skipping dimensions where an in-kernel value flow
//! crosses assigned ranges; ties go to the leftmost dimension.  Arrays
//! with no usable dimension are computed in full on every device.

use crate::ast::*;
use crate::lower::{KernelUnit, Param, ParamKind};
use crate::pretty;
use crate::ssa::{is_affine, AccessKind, GuardAnalysis, GuardEntry, SsaGraph, StmtGuard};
use std::collections::{BTreeMap, BTreeSet};

/// Split axis decision for one updated array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimChoice {
    Split(usize),
    Duplicate,
}

/// Per-array slice assignment for one launch.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    /// Selected dimension (0 when duplicated).
    pub dim: usize,
    pub duplicated: bool,
    /// Inclusive per-device ranges along `dim`; `lb > ub` means empty.
    pub ranges: Vec<(i64, i64)>,
    /// Resolved extents of the whole array.
    pub extents: Vec<usize>,
    pub elem_bytes: u64,
}

impl PlanEntry {
    pub fn write_bytes(&self) -> u64 {
        self.extents.iter().product::<usize>() as u64 * self.elem_bytes
    }
}

/// Work distribution for one kernel launch.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub devices: usize,
    pub arrays: BTreeMap<String, PlanEntry>,
    /// Inclusive outermost-iterator value ranges per device.
    pub iter_ranges: Vec<(i64, i64)>,
    /// When false every device runs the full iterator range.
    pub iter_split: bool,
}

impl SplitPlan {
    /// Bytes written to arrays that are actually distributed.
    pub fn distributed_write_bytes(&self) -> u64 {
        self.arrays
            .values()
            .filter(|e| !e.duplicated)
            .map(|e| e.write_bytes())
            .sum()
    }

    pub fn all_duplicated(&self) -> bool {
        self.arrays.values().all(|e| e.duplicated)
    }
}

/// Fresh bound-variable names chosen for a filtered kernel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundVars {
    /// array -> (lower-bound name, upper-bound name)
    pub arrays: BTreeMap<String, (String, String)>,
    /// Outermost-iterator bound names, when iterator filtering is used.
    pub iter: Option<(String, String)>,
}

/// A kernel rewritten into predicated form.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredKernel {
    pub unit: KernelUnit,
    pub bounds: BoundVars,
}

/// Picks the split dimension for one updated array.
pub fn select_parallel_dimension(
    kernel: &KernelUnit,
    analysis: &GuardAnalysis,
    graph: &SsaGraph,
    array: &str,
) -> DimChoice {
    if analysis.force_duplicate.contains(array) {
        return DimChoice::Duplicate;
    }
    let writes: Vec<_> = graph
        .sites
        .iter()
        .filter(|s| s.kind == AccessKind::Write && s.array == array)
        .collect();
    if writes.is_empty() {
        return DimChoice::Duplicate;
    }
    let rank = writes[0].indices.len();
    let crossings = analysis
        .crossings
        .get(array)
        .cloned()
        .unwrap_or_else(|| vec![false; rank]);
    let par: BTreeSet<&String> = kernel.parallel_iters.iter().collect();
    let mut best: Option<(usize, (usize, i64))> = None;
    for d in 0..rank {
        if crossings.get(d).copied().unwrap_or(false) {
            continue;
        }
        let mut par_iters: BTreeSet<String> = BTreeSet::new();
        let mut seq_iters: BTreeSet<String> = BTreeSet::new();
        for w in &writes {
            if let Some(e) = w.indices.get(d) {
                e.walk(&mut |n| {
                    if let Expr::Ident(name) = n {
                        if par.contains(name) {
                            par_iters.insert(name.clone());
                        } else if w.iters_in_scope.contains(name) {
                            seq_iters.insert(name.clone());
                        }
                    }
                });
            }
        }
        if par_iters.is_empty() {
            continue;
        }
        let score = (par_iters.len(), -(seq_iters.len() as i64));
        match &best {
            Some((_, s)) if *s >= score => {}
            _ => best = Some((d, score)),
        }
    }
    match best {
        Some((d, _)) => DimChoice::Split(d),
        None => DimChoice::Duplicate,
    }
}

/// Split axes for every updated array of the kernel.
pub fn make_selection(
    kernel: &KernelUnit,
    analysis: &GuardAnalysis,
    graph: &SsaGraph,
) -> BTreeMap<String, DimChoice> {
    kernel
        .arrays_written
        .iter()
        .map(|a| {
            (
                a.clone(),
                select_parallel_dimension(kernel, analysis, graph, a),
            )
        })
        .collect()
}

/// Whether split execution can reproduce sequential semantics at all;
/// when false the planner assigns full ranges everywhere.
pub fn must_duplicate_kernel(kernel: &KernelUnit, analysis: &GuardAnalysis) -> bool {
    analysis.kernel_force_duplicate
        || !kernel.carried_scalars.is_empty()
        || kernel.flags.writes_scalar_out
}

/// Evenly divides `extent` indices over `n` devices; the first
/// `extent % n` devices take one extra element.
pub fn split_even(extent: usize, n: usize) -> Vec<(i64, i64)> {
    let base = extent / n;
    let rem = extent % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0usize;
    for d in 0..n {
        let len = base + usize::from(d < rem);
        if len == 0 {
            out.push((0, -1));
        } else {
            out.push((start as i64, (start + len - 1) as i64));
            start += len;
        }
    }
    out
}

/// Iterator values `init, init+step, ...` split evenly by count and
/// expressed as inclusive value ranges.
pub fn split_iter_values(init: i64, cmp: LoopCmp, bound: i64, step: i64, n: usize) -> Vec<(i64, i64)> {
    let count = iter_count(init, cmp, bound, step);
    let parts = split_even(count, n);
    parts
        .into_iter()
        .map(|(lo, hi)| {
            if lo > hi {
                (0, -1)
            } else {
                (init + lo * step, init + hi * step)
            }
        })
        .collect()
}

fn iter_count(init: i64, cmp: LoopCmp, bound: i64, step: i64) -> usize {
    let limit = match cmp {
        LoopCmp::Lt => bound - 1,
        LoopCmp::Le => bound,
    };
    if limit < init || step <= 0 {
        0
    } else {
        ((limit - init) / step + 1) as usize
    }
}

/// Full-range bounds that make every check true.
pub const OPEN_RANGE: (i64, i64) = (i64::MIN, i64::MAX);

/// Builds the per-launch plan from the static selection and resolved
/// array extents.
pub fn make_plan(
    kernel: &KernelUnit,
    analysis: &GuardAnalysis,
    selection: &BTreeMap<String, DimChoice>,
    extents: &BTreeMap<String, Vec<usize>>,
    elem_bytes: &BTreeMap<String, u64>,
    devices: usize,
    split: bool,
    iter_header: Option<(i64, LoopCmp, i64, i64)>,
) -> SplitPlan {
    let forced = must_duplicate_kernel(kernel, analysis);
    let split = split && !forced && devices > 1;
    let mut arrays = BTreeMap::new();
    for a in &kernel.arrays_written {
        let ext = extents.get(a).cloned().unwrap_or_default();
        let eb = elem_bytes.get(a).copied().unwrap_or(8);
        let entry = match selection.get(a) {
            Some(DimChoice::Split(d)) if split => PlanEntry {
                dim: *d,
                duplicated: false,
                ranges: split_even(ext.get(*d).copied().unwrap_or(0), devices),
                extents: ext,
                elem_bytes: eb,
            },
            Some(DimChoice::Split(d)) => PlanEntry {
                dim: *d,
                duplicated: true,
                ranges: vec![OPEN_RANGE; devices],
                extents: ext,
                elem_bytes: eb,
            },
            _ => PlanEntry {
                dim: 0,
                duplicated: true,
                ranges: vec![OPEN_RANGE; devices],
                extents: ext,
                elem_bytes: eb,
            },
        };
        arrays.insert(a.clone(), entry);
    }
    let iter_ranges = match iter_header {
        Some((init, cmp, bound, step)) if split => split_iter_values(init, cmp, bound, step, devices),
        _ => vec![OPEN_RANGE; devices],
    };
    SplitPlan {
        devices,
        arrays,
        iter_ranges,
        iter_split: split && iter_header.is_some(),
    }
}

/// Launch-time pointer check over actual argument bindings.
///
/// Parameters resolving to one region with mixed read/write fall back
/// to duplication with no exchange for that data; multiple writers of
/// one region have their assigned ranges merged to the widest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AliasAdjustment {
    pub duplicated: Vec<String>,
    pub merged: Vec<Vec<String>>,
}

pub fn check_aliases(
    kernel: &KernelUnit,
    bindings: &BTreeMap<String, u64>,
    plan: &mut SplitPlan,
) -> AliasAdjustment {
    let mut by_region: BTreeMap<u64, Vec<&str>> = BTreeMap::new();
    for p in &kernel.params {
        if p.kind != ParamKind::Array {
            continue;
        }
        if let Some(region) = bindings.get(&p.name) {
            by_region.entry(*region).or_default().push(&p.name);
        }
    }
    let mut adj = AliasAdjustment::default();
    for params in by_region.values() {
        if params.len() < 2 {
            continue;
        }
        let reads = params
            .iter()
            .any(|p| kernel.arrays_read.iter().any(|a| a == p));
        let writers: Vec<&str> = params
            .iter()
            .filter(|p| kernel.writes_array(p))
            .copied()
            .collect();
        if reads && !writers.is_empty() {
            for p in params {
                if let Some(entry) = plan.arrays.get_mut(*p) {
                    entry.duplicated = true;
                    entry.ranges = vec![OPEN_RANGE; plan.devices];
                }
                adj.duplicated.push(p.to_string());
            }
            continue;
        }
        if writers.len() >= 2 {
            let mut merged = Vec::with_capacity(plan.devices);
            for d in 0..plan.devices {
                let mut lo = i64::MAX;
                let mut hi = i64::MIN;
                for w in &writers {
                    if let Some(entry) = plan.arrays.get(*w) {
                        let (l, u) = entry.ranges[d];
                        if l <= u {
                            lo = lo.min(l);
                            hi = hi.max(u);
                        }
                    }
                }
                merged.push(if lo > hi { (0, -1) } else { (lo, hi) });
            }
            for w in &writers {
                if let Some(entry) = plan.arrays.get_mut(*w) {
                    entry.ranges = merged.clone();
                }
            }
            adj.merged.push(writers.iter().map(|s| s.to_string()).collect());
        }
    }
    adj
}

/// Rewrites the kernel body into predicated form.
///
/// The emitted text depends only on the static selection, so the
/// runtime caches one filtered kernel per kernel id and feeds device
/// ranges through the bound parameters.
pub fn apply_filter(
    kernel: &KernelUnit,
    analysis: &GuardAnalysis,
    graph: &SsaGraph,
    selection: &BTreeMap<String, DimChoice>,
) -> FilteredKernel {
    let bounds = fresh_bounds(kernel, analysis);
    let mut fw = FilterWalk {
        kernel,
        analysis,
        graph,
        selection,
        bounds: &bounds,
        stmt_counter: 0,
        used_iter_bounds: false,
        used_arrays: BTreeSet::new(),
    };
    let body = fw.rewrite(&kernel.body);
    let used_iter = fw.used_iter_bounds;
    let used_arrays = fw.used_arrays.clone();

    let mut unit = kernel.clone();
    unit.body = body;
    for a in &used_arrays {
        let (lb, ub) = &bounds.arrays[a];
        for name in [lb, ub] {
            unit.params.push(Param {
                name: name.clone(),
                kind: ParamKind::ScalarIn,
                elem: ElemType::Int,
            });
            unit.scalar_types.insert(name.clone(), ElemType::Int);
        }
    }
    if used_iter {
        if let Some((lb, ub)) = &bounds.iter {
            for name in [lb, ub] {
                unit.params.push(Param {
                    name: name.clone(),
                    kind: ParamKind::ScalarIn,
                    elem: ElemType::Int,
                });
                unit.scalar_types.insert(name.clone(), ElemType::Int);
            }
        }
    }
    // refresh the embedded source; identity stays with the original
    let header_end = kernel.source.find('\n').map(|i| i + 1).unwrap_or(0);
    let header = &kernel.source[..header_end];
    unit.source = format!("{}{}", header, pretty::print_stmt(&unit.body));

    let bounds = BoundVars {
        arrays: bounds
            .arrays
            .into_iter()
            .filter(|(a, _)| used_arrays.contains(a))
            .collect(),
        iter: if used_iter { bounds.iter } else { None },
    };
    FilteredKernel { unit, bounds }
}

/// Bound names that cannot collide with kernel identifiers.
fn fresh_bounds(kernel: &KernelUnit, analysis: &GuardAnalysis) -> BoundVars {
    let mut taken: BTreeSet<String> = kernel.params.iter().map(|p| p.name.clone()).collect();
    taken.extend(kernel.scalar_types.keys().cloned());
    kernel.body.walk(&mut |s| {
        if let Stmt::For(l) = s {
            taken.insert(l.iter.clone());
        }
    });
    let pick = |base: String, taken: &mut BTreeSet<String>| -> String {
        if !taken.contains(&base) {
            taken.insert(base.clone());
            return base;
        }
        for k in 1u32.. {
            let cand = format!("{base}_{k}");
            if !taken.contains(&cand) {
                taken.insert(cand.clone());
                return cand;
            }
        }
        unreachable!()
    };
    // every array that can appear in a predicate gets bound names
    let mut guard_arrays: BTreeSet<String> = kernel.arrays_written.iter().cloned().collect();
    for d in &analysis.descriptors {
        for (a, _) in &d.guards {
            guard_arrays.insert(a.clone());
        }
    }
    let mut arrays = BTreeMap::new();
    for a in &guard_arrays {
        let lb = pick(format!("{a}_lb"), &mut taken);
        let ub = pick(format!("{a}_ub"), &mut taken);
        arrays.insert(a.clone(), (lb, ub));
    }
    let it_lb = pick("it_lb".into(), &mut taken);
    let it_ub = pick("it_ub".into(), &mut taken);
    BoundVars {
        arrays,
        iter: Some((it_lb, it_ub)),
    }
}

struct FilterWalk<'a> {
    kernel: &'a KernelUnit,
    analysis: &'a GuardAnalysis,
    graph: &'a SsaGraph,
    selection: &'a BTreeMap<String, DimChoice>,
    bounds: &'a BoundVars,
    stmt_counter: u32,
    used_iter_bounds: bool,
    used_arrays: BTreeSet<String>,
}

impl<'a> FilterWalk<'a> {
    fn next_id(&mut self) -> u32 {
        let id = self.stmt_counter;
        self.stmt_counter += 1;
        id
    }

    fn rewrite(&mut self, stmt: &Stmt) -> Stmt {
        let sid = self.next_id();
        match stmt {
            Stmt::Block(items) => Stmt::Block(items.iter().map(|s| self.rewrite(s)).collect()),
            Stmt::For(l) => Stmt::For(ForLoop {
                iter: l.iter.clone(),
                init: l.init.clone(),
                cmp: l.cmp,
                bound: l.bound.clone(),
                step: l.step.clone(),
                body: Box::new(self.rewrite(&l.body)),
            }),
            Stmt::If {
                cond,
                then_branch,
                else_branch,
            } => Stmt::If {
                cond: cond.clone(),
                then_branch: Box::new(self.rewrite(then_branch)),
                else_branch: else_branch.as_ref().map(|e| Box::new(self.rewrite(e))),
            },
            Stmt::Directive { dir, body } => Stmt::Directive {
                dir: dir.clone(),
                body: Box::new(self.rewrite(body)),
            },
            Stmt::Assign { target, op, value } => {
                match self.analysis.stmt_guards.get(&sid) {
                    Some(StmtGuard::Write(entries)) if target.is_array() => {
                        let cond = self.predicate(entries);
                        Stmt::Predicated {
                            cond,
                            then_assign: Box::new(stmt.clone()),
                            else_expr: target.as_expr(),
                        }
                    }
                    Some(StmtGuard::Iter) => {
                        let cond = self.iter_check();
                        Stmt::Predicated {
                            cond,
                            then_assign: Box::new(stmt.clone()),
                            else_expr: target.as_expr(),
                        }
                    }
                    Some(StmtGuard::ScalarRhs(entries)) => {
                        let cond = self.predicate(entries);
                        let zero = self.typed_zero(target);
                        Stmt::Assign {
                            target: target.clone(),
                            op: *op,
                            value: Expr::Ternary {
                                cond: Box::new(cond),
                                then_val: Box::new(value.clone()),
                                else_val: Box::new(zero),
                            },
                        }
                    }
                    _ => stmt.clone(),
                }
            }
            Stmt::Atomic { .. } => match self.analysis.stmt_guards.get(&sid) {
                Some(StmtGuard::Write(entries)) => {
                    let cond = self.predicate(entries);
                    Stmt::If {
                        cond,
                        then_branch: Box::new(Stmt::Block(vec![stmt.clone()])),
                        else_branch: None,
                    }
                }
                _ => stmt.clone(),
            },
            Stmt::Predicated {
                cond,
                then_assign,
                else_expr,
            } => {
                let inner = self.rewrite(then_assign);
                match inner {
                    Stmt::Predicated {
                        cond: guard,
                        then_assign: t,
                        else_expr: _,
                    } => Stmt::Predicated {
                        cond: Expr::binary(BinOp::And, cond.clone(), guard),
                        then_assign: t,
                        else_expr: else_expr.clone(),
                    },
                    other => Stmt::Predicated {
                        cond: cond.clone(),
                        then_assign: Box::new(other),
                        else_expr: else_expr.clone(),
                    },
                }
            }
        }
    }

    /// OR of range checks for the given guard entries.
    fn predicate(&mut self, entries: &[GuardEntry]) -> Expr {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut checks: Vec<Expr> = Vec::new();
        for e in entries {
            match e {
                GuardEntry::Array { array, site } => {
                    let dim = match self.selection.get(array) {
                        Some(DimChoice::Split(d)) => *d,
                        _ => 0,
                    };
                    let idx = self.graph.sites[*site]
                        .indices
                        .get(dim)
                        .cloned()
                        .unwrap_or(Expr::Int(0));
                    let key = format!("{array}:{}", pretty::print_expr(&idx));
                    if !seen.insert(key) {
                        continue;
                    }
                    self.used_arrays.insert(array.clone());
                    let (lb, ub) = &self.bounds.arrays[array];
                    checks.push(range_check(lb, ub, &idx));
                }
                GuardEntry::OuterIter => {
                    let key = "@iter".to_string();
                    if !seen.insert(key) {
                        continue;
                    }
                    checks.push(self.iter_check());
                }
                GuardEntry::Top => {}
            }
        }
        checks
            .into_iter()
            .reduce(|a, b| Expr::binary(BinOp::Or, a, b))
            .unwrap_or(Expr::Int(1))
    }

    fn iter_check(&mut self) -> Expr {
        self.used_iter_bounds = true;
        let (lb, ub) = self
            .bounds
            .iter
            .as_ref()
            .expect("iterator bounds reserved");
        range_check(lb, ub, &Expr::Ident(self.graph.outer_iter.clone()))
    }

    fn typed_zero(&self, target: &LValue) -> Expr {
        let elem = self
            .kernel
            .scalar_types
            .get(&target.name)
            .copied()
            .unwrap_or(ElemType::Float);
        match elem {
            ElemType::Int => Expr::Int(0),
            ElemType::Float => Expr::Float(0.0),
        }
    }
}

/// `(lb <= e && ub >= e)`
fn range_check(lb: &str, ub: &str, e: &Expr) -> Expr {
    Expr::binary(
        BinOp::And,
        Expr::binary(BinOp::Le, Expr::ident(lb), e.clone()),
        Expr::binary(BinOp::Ge, Expr::ident(ub), e.clone()),
    )
}

/// Affinity report used by the analyze output.
pub fn affine_summary(graph: &SsaGraph) -> BTreeMap<String, bool> {
    let mut out = BTreeMap::new();
    for s in &graph.sites {
        let all = s.indices.iter().all(is_affine);
        out.entry(s.array.clone())
            .and_modify(|v: &mut bool| *v &= all)
            .or_insert(all);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::lower;
    use crate::parser::parse;
    use crate::samples;
    use crate::ssa::{build_ssa, compute_guards};

    fn prepare(src: &str) -> (KernelUnit, SsaGraph, GuardAnalysis) {
        let p = parse(src).unwrap();
        let lowered = lower(&p).unwrap();
        let unit = lowered.kernels.values().next().unwrap().clone();
        let graph = build_ssa(&unit).unwrap();
        let analysis = compute_guards(&graph);
        (unit, graph, analysis)
    }

    #[test]
    fn block_solver_selects_leftmost_tied_plane_dimension() {
        let (unit, graph, analysis) = prepare(samples::BLOCK_SOLVER_6D);
        assert_eq!(
            select_parallel_dimension(&unit, &analysis, &graph, "lhsY"),
            DimChoice::Split(4)
        );
    }

    #[test]
    fn one_dim_gang_array_selects_dim_zero() {
        let (unit, graph, analysis) = prepare(samples::SQUARE);
        assert_eq!(
            select_parallel_dimension(&unit, &analysis, &graph, "x"),
            DimChoice::Split(0)
        );
    }

    #[test]
    fn sequential_only_indexing_duplicates() {
        let src = "\
int N;
double a[4];
double c[N];
double s;
#pragma acc data copyin(c[0:N]) copyout(a)
#pragma acc parallel loop gang
for (int i = 0; i < N; i++) {
  for (int m = 0; m < 4; m++) {
    a[m] = c[i];
  }
}
";
        let (unit, graph, analysis) = prepare(src);
        assert_eq!(
            select_parallel_dimension(&unit, &analysis, &graph, "a"),
            DimChoice::Duplicate
        );
    }

    #[test]
    fn five_statement_chain_filters_like_reference_shape() {
        let (unit, graph, analysis) = prepare(samples::CHAIN_FIVE);
        let selection = make_selection(&unit, &analysis, &graph);
        let filtered = apply_filter(&unit, &analysis, &graph, &selection);
        // dig out the loop body block
        let mut body = &filtered.unit.body;
        loop {
            match body {
                Stmt::Directive { body: b, .. } => body = b,
                Stmt::For(l) => {
                    body = &l.body;
                    break;
                }
                other => panic!("unexpected nest shape: {other:?}"),
            }
        }
        let stmts = match body {
            Stmt::Block(items) => items,
            other => panic!("expected block body, got {other:?}"),
        };
        assert_eq!(stmts.len(), 5);
        let (a_lb, a_ub) = &filtered.bounds.arrays["a"];
        let (b_lb, b_ub) = &filtered.bounds.arrays["b"];
        assert_eq!((a_lb.as_str(), a_ub.as_str()), ("a_lb", "a_ub"));
        assert_eq!((b_lb.as_str(), b_ub.as_str()), ("b_lb", "b_ub"));

        let or_count = |e: &Expr| {
            let mut n = 0;
            e.walk(&mut |x| {
                if matches!(
                    x,
                    Expr::Binary {
                        op: BinOp::Or,
                        ..
                    }
                ) {
                    n += 1;
                }
            });
            n
        };
        // a[i] = x gated on a and b at i
        match &stmts[0] {
            Stmt::Predicated { cond, .. } => {
                assert_eq!(or_count(cond), 1);
                let text = crate::pretty::print_expr(cond);
                assert_eq!(text, "a_lb <= i && a_ub >= i || b_lb <= i && b_ub >= i");
            }
            other => panic!("expected predicated write, got {other:?}"),
        }
        // b[i] = a[i] gated on b alone
        match &stmts[1] {
            Stmt::Predicated { cond, else_expr, .. } => {
                assert_eq!(crate::pretty::print_expr(cond), "b_lb <= i && b_ub >= i");
                assert_eq!(crate::pretty::print_expr(else_expr), "b[i]");
            }
            other => panic!("expected predicated write, got {other:?}"),
        }
        // x = c[j] becomes a guarded read with a typed zero
        match &stmts[2] {
            Stmt::Assign { target, value, .. } => {
                assert_eq!(target.name, "x");
                match value {
                    Expr::Ternary { cond, else_val, .. } => {
                        assert_eq!(
                            crate::pretty::print_expr(cond),
                            "a_lb <= k && a_ub >= k || b_lb <= k && b_ub >= k"
                        );
                        assert_eq!(**else_val, Expr::Float(0.0));
                    }
                    other => panic!("expected guarded read, got {other:?}"),
                }
            }
            other => panic!("expected scalar assign, got {other:?}"),
        }
        // a[k] = x and b[k] = a[k] follow the same shapes at k
        match &stmts[3] {
            Stmt::Predicated { cond, .. } => {
                assert_eq!(
                    crate::pretty::print_expr(cond),
                    "a_lb <= k && a_ub >= k || b_lb <= k && b_ub >= k"
                );
            }
            other => panic!("expected predicated write, got {other:?}"),
        }
        match &stmts[4] {
            Stmt::Predicated { cond, .. } => {
                assert_eq!(crate::pretty::print_expr(cond), "b_lb <= k && b_ub >= k");
            }
            other => panic!("expected predicated write, got {other:?}"),
        }
        // filtered text still parses
        let reparsed = crate::parser::parse(&wrap_kernel_source(&filtered.unit));
        assert!(reparsed.is_ok(), "{reparsed:?}");
    }

    // minimal harness to reparse a kernel body in isolation
    fn wrap_kernel_source(unit: &KernelUnit) -> String {
        let mut decls = String::new();
        for p in &unit.params {
            match p.kind {
                ParamKind::Array => {}
                _ => {
                    decls.push_str(p.elem.keyword());
                    decls.push(' ');
                    decls.push_str(&p.name);
                    decls.push_str(";\n");
                }
            }
        }
        for (s, t) in &unit.scalar_types {
            if unit.param(s).is_none() {
                decls.push_str(t.keyword());
                decls.push(' ');
                decls.push_str(s);
                decls.push_str(";\n");
            }
        }
        for p in &unit.params {
            if p.kind == ParamKind::Array {
                decls.push_str(p.elem.keyword());
                decls.push(' ');
                decls.push_str(&p.name);
                // extents are irrelevant for a parse check
                decls.push_str("[4]");
                decls.push_str(";\n");
            }
        }
        format!(
            "{}#pragma acc parallel\n{}",
            decls,
            crate::pretty::print_stmt(&unit.body)
        )
    }

    #[test]
    fn bound_names_avoid_capture() {
        let src = "\
int N;
int a_lb;
double a[N];
double c[N];
#pragma acc data copyin(c[0:N]) copyout(a[0:N])
#pragma acc parallel loop gang
for (int i = 0; i < N; i++) a[i] = c[i] + a_lb;
";
        let (unit, graph, analysis) = prepare(src);
        let selection = make_selection(&unit, &analysis, &graph);
        let filtered = apply_filter(&unit, &analysis, &graph, &selection);
        let (lb, ub) = &filtered.bounds.arrays["a"];
        assert_eq!(lb, "a_lb_1");
        assert_eq!(ub, "a_ub");
    }

    #[test]
    fn atomic_update_is_wrapped_around_the_operation() {
        let (unit, graph, analysis) = prepare(samples::ATOMIC_HISTOGRAM);
        let selection = make_selection(&unit, &analysis, &graph);
        let filtered = apply_filter(&unit, &analysis, &graph, &selection);
        let mut found = false;
        filtered.unit.body.walk(&mut |s| {
            if let Stmt::If { cond, then_branch, .. } = s {
                if let Stmt::Block(items) = then_branch.as_ref() {
                    if items.len() == 1 && matches!(items[0], Stmt::Atomic { .. }) {
                        found = true;
                        let text = crate::pretty::print_expr(cond);
                        assert!(text.contains("hist_lb <= col[j]"));
                        assert!(text.contains("hist_ub >= col[j]"));
                    }
                }
            }
        });
        assert!(found, "atomic update not predicated around the operation");
    }

    #[test]
    fn reduction_update_is_filtered_on_outer_iterator() {
        let (unit, graph, analysis) = prepare(samples::DOT_REDUCTION);
        let selection = make_selection(&unit, &analysis, &graph);
        let filtered = apply_filter(&unit, &analysis, &graph, &selection);
        let (lb, ub) = filtered.bounds.iter.clone().unwrap();
        assert_eq!((lb.as_str(), ub.as_str()), ("it_lb", "it_ub"));
        let mut found = false;
        filtered.unit.body.walk(&mut |s| {
            if let Stmt::Predicated { cond, then_assign, .. } = s {
                if matches!(then_assign.as_ref(), Stmt::Assign { target, .. } if target.name == "sum")
                {
                    found = true;
                    assert_eq!(crate::pretty::print_expr(cond), "it_lb <= i && it_ub >= i");
                }
            }
        });
        assert!(found, "reduction update not iterator-filtered");
    }

    #[test]
    fn split_even_covers_and_balances() {
        for extent in [0usize, 1, 7, 8, 100, 162] {
            for n in [1usize, 2, 3, 4, 7] {
                let parts = split_even(extent, n);
                assert_eq!(parts.len(), n);
                let mut covered = 0usize;
                let mut sizes = Vec::new();
                let mut next = 0i64;
                for (lo, hi) in &parts {
                    if lo > hi {
                        sizes.push(0usize);
                        continue;
                    }
                    assert_eq!(*lo, next);
                    next = hi + 1;
                    covered += (hi - lo + 1) as usize;
                    sizes.push((hi - lo + 1) as usize);
                }
                assert_eq!(covered, extent);
                let max = sizes.iter().max().unwrap();
                let min = sizes.iter().min().unwrap();
                assert!(max - min <= 1, "uneven split {sizes:?}");
            }
        }
    }

    #[test]
    fn alias_with_mixed_access_duplicates_and_disables_exchange() {
        let (unit, graph, analysis) = prepare(samples::SQUARE);
        let selection = make_selection(&unit, &analysis, &graph);
        let mut extents = BTreeMap::new();
        extents.insert("x".to_string(), vec![100usize]);
        let mut eb = BTreeMap::new();
        eb.insert("x".to_string(), 8u64);
        let mut plan = make_plan(
            &unit, &analysis, &selection, &extents, &eb, 2, true,
            Some((0, LoopCmp::Lt, 100, 1)),
        );
        assert!(!plan.arrays["x"].duplicated);
        // bind x and y to the same region: x written, y read
        let mut bindings = BTreeMap::new();
        bindings.insert("x".to_string(), 42u64);
        bindings.insert("y".to_string(), 42u64);
        let adj = check_aliases(&unit, &bindings, &mut plan);
        assert_eq!(adj.duplicated, vec!["x".to_string(), "y".into()]);
        assert!(plan.arrays["x"].duplicated);
    }

    #[test]
    fn distinct_regions_leave_plan_unchanged() {
        let (unit, graph, analysis) = prepare(samples::SQUARE);
        let selection = make_selection(&unit, &analysis, &graph);
        let mut extents = BTreeMap::new();
        extents.insert("x".to_string(), vec![100usize]);
        let mut eb = BTreeMap::new();
        eb.insert("x".to_string(), 8u64);
        let mut plan = make_plan(
            &unit, &analysis, &selection, &extents, &eb, 2, true,
            Some((0, LoopCmp::Lt, 100, 1)),
        );
        let before = plan.clone();
        let mut bindings = BTreeMap::new();
        bindings.insert("x".to_string(), 1u64);
        bindings.insert("y".to_string(), 2u64);
        let adj = check_aliases(&unit, &bindings, &mut plan);
        assert_eq!(adj, AliasAdjustment::default());
        assert_eq!(plan, before);
    }

    #[test]
    fn two_writers_merge_to_widest_range() {
        let src = "\
int N;
double p[N];
double q[N];
double c[N];
#pragma acc data copyin(c[0:N]) copyout(p[0:N], q[0:N])
#pragma acc parallel loop gang
for (int i = 0; i < N; i++) {
  p[i] = c[i];
  q[i] = c[i] * 2.0;
}
";
        let (unit, graph, analysis) = prepare(src);
        let selection = make_selection(&unit, &analysis, &graph);
        let mut extents = BTreeMap::new();
        extents.insert("p".to_string(), vec![100usize]);
        extents.insert("q".to_string(), vec![100usize]);
        let mut eb = BTreeMap::new();
        eb.insert("p".to_string(), 8u64);
        eb.insert("q".to_string(), 8u64);
        let mut plan = make_plan(
            &unit, &analysis, &selection, &extents, &eb, 2, true,
            Some((0, LoopCmp::Lt, 100, 1)),
        );
        // pretend q's ranges were narrower before binding both to one region
        plan.arrays.get_mut("q").unwrap().ranges = vec![(0, 24), (50, 74)];
        let mut bindings = BTreeMap::new();
        bindings.insert("p".to_string(), 7u64);
        bindings.insert("q".to_string(), 7u64);
        let adj = check_aliases(&unit, &bindings, &mut plan);
        assert_eq!(adj.merged, vec![vec!["p".to_string(), "q".into()]]);
        assert_eq!(plan.arrays["p"].ranges, vec![(0, 49), (50, 99)]);
        assert_eq!(plan.arrays["q"].ranges, vec![(0, 49), (50, 99)]);
    }

    #[test]
    fn forced_duplicate_plans_use_open_ranges() {
        let (unit, graph, analysis) = prepare(samples::CHAIN_FIVE);
        let selection = make_selection(&unit, &analysis, &graph);
        assert!(must_duplicate_kernel(&unit, &analysis));
        let mut extents = BTreeMap::new();
        extents.insert("a".to_string(), vec![10usize]);
        extents.insert("b".to_string(), vec![10usize]);
        let mut eb = BTreeMap::new();
        eb.insert("a".to_string(), 8u64);
        eb.insert("b".to_string(), 8u64);
        let plan = make_plan(
            &unit, &analysis, &selection, &extents, &eb, 4, true,
            Some((0, LoopCmp::Lt, 10, 1)),
        );
        assert!(plan.all_duplicated());
        assert!(!plan.iter_split);
        assert_eq!(plan.distributed_write_bytes(), 0);
    }
}
