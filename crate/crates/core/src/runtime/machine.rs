//! Deterministic simulated multi-device runtime.
//!
//! Executes a lowered program: region calls manage replicated device
//! buffers, kernel pushes run the predicate-filtered kernel once per
//! device with that device's bound ranges, and non-duplicated slices
//! are exchanged afterwards so every device converges to the same
//! contents.  Time is simulated from the cost model only (bytes moved
//! over device throughput, plus fixed launch and synchronization
//! overheads), so identical runs produce identical traces.

use crate::ast::*;
use crate::config::SimConfig;
use crate::filter::{
    apply_filter, check_aliases, make_plan, make_selection, must_duplicate_kernel, DimChoice,
    FilteredKernel, SplitPlan,
};
use crate::interp::{ArrayBuf, EvalError, Evaluator, HostState, Instrument, StmtIds, Value, WriteRecord};
use crate::lower::{lower, KernelId, KernelUnit, LStmt, LowerError, ParamKind, RuntimeCall};
use crate::runtime::adaptive::{AdaptiveParams, AdaptiveState, Mode, StepInput};
use crate::runtime::exchange::plan_exchange;
use crate::runtime::pool::{PoolAllocator, PoolError, PoolKind, Segment};
use crate::runtime::queue::Scheduler;
use crate::runtime::region::{RegionError, RegionId, RegionTree};
use crate::specialize::{specialize, ArgumentLog, LaunchRecord, Specialization};
use crate::ssa::{build_ssa, compute_guards, GuardAnalysis, SsaError, SsaGraph};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error(transparent)]
    Ssa(#[from] SsaError),
    #[error("device {device}: {source}")]
    DeviceEval {
        device: usize,
        source: EvalError,
    },
    #[error(transparent)]
    Host(#[from] EvalError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("input error: {0}")]
    Input(String),
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Overrides the configured device count.
    pub devices: Option<usize>,
    /// Trigger specialization after this many kernel executions.
    pub optimize_after: Option<u64>,
    /// Record per-device write logs for every kernel execution.
    pub log_writes: bool,
    /// When false, kernels skip the controller and always run
    /// distributed where the plan allows (profiling-style execution).
    pub adaptive: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            devices: None,
            optimize_after: None,
            log_writes: false,
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TraceEvent {
    pub event: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queue: Option<usize>,
    pub waits: Vec<usize>,
    pub t_kernel_s: f64,
    pub t_comm_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<&'static str>,
    pub bytes_exchanged: u64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Summary {
    pub total_kernel_s: f64,
    pub total_comm_s: f64,
    pub per_kernel_modes: BTreeMap<String, &'static str>,
}

/// Details of one kernel execution, kept for verification.
#[derive(Debug, Clone)]
pub struct ExecRecord {
    pub kernel: KernelId,
    pub mode: Mode,
    pub plan: SplitPlan,
    pub queue: usize,
    pub waits: Vec<usize>,
    pub write_logs: Vec<Vec<WriteRecord>>,
}

#[derive(Debug)]
pub struct SimResult {
    pub host: HostState,
    pub trace: Vec<TraceEvent>,
    pub summary: Summary,
    pub execs: Vec<ExecRecord>,
    pub arg_log: ArgumentLog,
}

struct Device {
    pool: PoolAllocator,
    bufs: HashMap<RegionId, ArrayBuf>,
    segs: HashMap<RegionId, Segment>,
}

struct CacheEntry {
    unit: KernelUnit,
    #[allow(dead_code)]
    graph: SsaGraph,
    analysis: GuardAnalysis,
    selection: BTreeMap<String, DimChoice>,
    filtered: FilteredKernel,
}

struct SpecializedEntry {
    cache: CacheEntry,
    boost: bool,
}

pub struct Machine<'p> {
    cfg: SimConfig,
    _marker: std::marker::PhantomData<&'p Program>,
    opts: SimOptions,
    n_devices: usize,
    host_bufs: Vec<ArrayBuf>,
    host_names: BTreeMap<String, usize>,
    host_scalars: BTreeMap<String, Value>,
    regions: RegionTree,
    devices: Vec<Device>,
    scheduler: Scheduler,
    adaptive: BTreeMap<KernelId, AdaptiveState>,
    arg_log: ArgumentLog,
    kernels: HashMap<KernelId, Rc<CacheEntry>>,
    specialized: HashMap<KernelId, Rc<SpecializedEntry>>,
    trace: Vec<TraceEvent>,
    execs: Vec<ExecRecord>,
    total_kernel_s: f64,
    total_comm_s: f64,
    kernel_execs: u64,
    optimized: bool,
    host_base: u64,
}

pub fn simulate(
    program: &Program,
    cfg: &SimConfig,
    inputs: &HostState,
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    let lowered = lower(program)?;
    let mut m = Machine::new(program, cfg.clone(), opts.clone(), inputs)?;
    m.exec_items(&lowered.items, &lowered.kernels)?;
    Ok(m.finish())
}

impl<'p> Machine<'p> {
    fn new(
        program: &'p Program,
        cfg: SimConfig,
        opts: SimOptions,
        inputs: &HostState,
    ) -> Result<Machine<'p>, SimError> {
        let n_devices = opts.devices.unwrap_or(cfg.devices).max(1);
        let mut host_scalars = BTreeMap::new();
        for d in &program.decls {
            if d.is_array() {
                continue;
            }
            if let Some(v) = inputs.scalars.get(&d.name) {
                host_scalars.insert(d.name.clone(), (*v).coerce(d.elem)?);
            }
        }
        let mut host_bufs = Vec::new();
        let mut host_names = BTreeMap::new();
        for d in &program.decls {
            if !d.is_array() {
                continue;
            }
            let extents = crate::interp::resolve_extents(d, &host_scalars)?;
            let mut buf = ArrayBuf::new_uninit(&d.name, d.elem, extents);
            if let Some(src) = inputs.arrays.get(&d.name) {
                if src.len() != buf.len() {
                    return Err(SimError::Input(format!(
                        "input for `{}` has wrong length",
                        d.name
                    )));
                }
                for i in 0..buf.len() {
                    if let Some(v) = src.get_flat(i) {
                        buf.set_flat(i, v.coerce(d.elem)?);
                    }
                }
            }
            host_names.insert(d.name.clone(), host_bufs.len());
            host_bufs.push(buf);
        }
        let devices = (0..n_devices)
            .map(|_| Device {
                pool: PoolAllocator::new(cfg.capacity_bytes),
                bufs: HashMap::new(),
                segs: HashMap::new(),
            })
            .collect();
        let queues = cfg.queues.max(1);
        Ok(Machine {
            cfg,
            _marker: std::marker::PhantomData,
            opts,
            n_devices,
            host_bufs,
            host_names,
            host_scalars,
            regions: RegionTree::default(),
            devices,
            scheduler: Scheduler::new(queues),
            adaptive: BTreeMap::new(),
            arg_log: ArgumentLog::default(),
            kernels: HashMap::new(),
            specialized: HashMap::new(),
            trace: Vec::new(),
            execs: Vec::new(),
            total_kernel_s: 0.0,
            total_comm_s: 0.0,
            kernel_execs: 0,
            optimized: false,
            host_base: 0,
        })
    }

    fn finish(self) -> SimResult {
        let mut host = HostState {
            arrays: BTreeMap::new(),
            scalars: self.host_scalars,
        };
        for (name, slot) in &self.host_names {
            host.arrays.insert(name.clone(), self.host_bufs[*slot].clone());
        }
        let per_kernel_modes = self
            .adaptive
            .iter()
            .map(|(k, st)| (k.0.clone(), st.mode.name()))
            .collect();
        SimResult {
            host,
            trace: self.trace,
            summary: Summary {
                total_kernel_s: self.total_kernel_s,
                total_comm_s: self.total_comm_s,
                per_kernel_modes,
            },
            execs: self.execs,
            arg_log: self.arg_log,
        }
    }

    fn exec_items(
        &mut self,
        items: &[LStmt],
        kernels: &BTreeMap<KernelId, KernelUnit>,
    ) -> Result<(), SimError> {
        for item in items {
            self.exec_item(item, kernels)?;
        }
        Ok(())
    }

    fn exec_item(
        &mut self,
        item: &LStmt,
        kernels: &BTreeMap<KernelId, KernelUnit>,
    ) -> Result<(), SimError> {
        match item {
            LStmt::Host(stmt) => self.exec_host_stmt(stmt),
            LStmt::For {
                iter,
                init,
                cmp,
                bound,
                step,
                body,
            } => {
                let mut cur = self.eval_host_scalar(init)?.as_index()?;
                loop {
                    let bound_v = self.eval_host_scalar(bound)?.as_index()?;
                    let go = match cmp {
                        LoopCmp::Lt => cur < bound_v,
                        LoopCmp::Le => cur <= bound_v,
                    };
                    if !go {
                        break;
                    }
                    self.host_scalars.insert(iter.clone(), Value::Int(cur));
                    self.exec_items(body, kernels)?;
                    let s = match step {
                        LoopStep::Inc => 1,
                        LoopStep::AddAssign(e) => self.eval_host_scalar(e)?.as_index()?,
                    };
                    if s <= 0 {
                        return Err(SimError::Host(EvalError::NonPositiveStep));
                    }
                    cur = cur.wrapping_add(s);
                }
                self.host_scalars.remove(iter);
                Ok(())
            }
            LStmt::If {
                cond,
                then_items,
                else_items,
            } => {
                if self.eval_host_scalar(cond)?.truthy() {
                    self.exec_items(then_items, kernels)
                } else {
                    self.exec_items(else_items, kernels)
                }
            }
            LStmt::Call(call) => self.exec_call(call, kernels),
        }
    }

    fn exec_host_stmt(&mut self, stmt: &Stmt) -> Result<(), SimError> {
        let ids = StmtIds::number(std::slice::from_ref(stmt));
        let mut instr = Instrument::default();
        let mut ev = Evaluator {
            arrays: &mut self.host_bufs,
            names: &self.host_names,
            scalars: &mut self.host_scalars,
            instr: &mut instr,
            ids: &ids,
        };
        ev.exec_stmt(stmt).map_err(SimError::Host)
    }

    fn eval_host_scalar(&mut self, expr: &Expr) -> Result<Value, SimError> {
        let ids = StmtIds::number(&[]);
        let mut instr = Instrument::default();
        let mut ev = Evaluator {
            arrays: &mut self.host_bufs,
            names: &self.host_names,
            scalars: &mut self.host_scalars,
            instr: &mut instr,
            ids: &ids,
        };
        ev.eval_expr(expr).map_err(SimError::Host)
    }

    fn exec_call(
        &mut self,
        call: &RuntimeCall,
        kernels: &BTreeMap<KernelId, KernelUnit>,
    ) -> Result<(), SimError> {
        match call {
            RuntimeCall::Create { array, .. } => {
                self.region_enter(array, false)?;
                Ok(())
            }
            RuntimeCall::Copyin { array, .. } => {
                self.region_enter(array, true)?;
                Ok(())
            }
            RuntimeCall::Copyout { array, .. } => self.region_exit(array, true),
            RuntimeCall::Delete { array } => self.region_exit(array, false),
            RuntimeCall::KernelPush { kernel, .. } => {
                self.launch(kernel, kernels)?;
                if let Some(k) = self.opts.optimize_after {
                    if !self.optimized && self.kernel_execs >= k {
                        self.run_optimize()?;
                    }
                }
                Ok(())
            }
            RuntimeCall::Optimize => self.run_optimize(),
        }
    }

    /// Registers `array` on all devices; `h2d` replicates host contents.
    fn region_enter(&mut self, array: &str, h2d: bool) -> Result<RegionId, SimError> {
        if let Some(r) = self.regions.by_name_mut(array) {
            r.refcount += 1;
            return Ok(r.id);
        }
        let slot = *self
            .host_names
            .get(array)
            .ok_or_else(|| SimError::Input(format!("unknown array `{array}`")))?;
        let host_buf = &self.host_bufs[slot];
        let extents = host_buf.extents.clone();
        let elem_bytes = host_buf.elem().size_bytes();
        let bytes = host_buf.size_bytes().max(1);
        let base = self.host_base;
        self.host_base += (bytes + 63) / 64 * 64;
        let id = self
            .regions
            .register(array, base, bytes, elem_bytes, extents.clone())?;
        for d in 0..self.n_devices {
            let seg = self.devices[d].pool.alloc(bytes, PoolKind::User)?;
            self.devices[d].segs.insert(id, seg);
            let buf = if h2d {
                self.host_bufs[slot].clone()
            } else {
                ArrayBuf::new_uninit(array, self.host_bufs[slot].elem(), extents.clone())
            };
            self.devices[d].bufs.insert(id, buf);
        }
        Ok(id)
    }

    /// Drops one reference; at zero, optionally copies device 0 back to
    /// the host, then frees buffers on every device.
    fn region_exit(&mut self, array: &str, d2h: bool) -> Result<(), SimError> {
        let (id, refcount) = match self.regions.by_name_mut(array) {
            Some(r) => {
                r.refcount -= 1;
                (r.id, r.refcount)
            }
            None => {
                return Err(SimError::Input(format!(
                    "`{array}` released without a registration"
                )))
            }
        };
        if refcount > 0 {
            return Ok(());
        }
        if d2h {
            let slot = self.host_names[array];
            if let Some(buf) = self.devices[0].bufs.get(&id) {
                self.host_bufs[slot] = buf.clone();
            }
        }
        for d in 0..self.n_devices {
            if let Some(seg) = self.devices[d].segs.remove(&id) {
                self.devices[d].pool.free(seg);
            }
            self.devices[d].bufs.remove(&id);
        }
        self.regions.remove(id);
        self.scheduler.forget_region(id);
        Ok(())
    }

    fn cache_entry(&mut self, unit: &KernelUnit) -> Result<Rc<CacheEntry>, SimError> {
        if let Some(e) = self.kernels.get(&unit.id) {
            return Ok(Rc::clone(e));
        }
        let entry = Rc::new(build_cache_entry(unit.clone())?);
        self.kernels.insert(unit.id.clone(), Rc::clone(&entry));
        Ok(entry)
    }

    fn launch(
        &mut self,
        id: &KernelId,
        kernels: &BTreeMap<KernelId, KernelUnit>,
    ) -> Result<(), SimError> {
        let base_unit = kernels
            .get(id)
            .ok_or_else(|| SimError::Input(format!("unknown kernel {id}")))?;
        let base = self.cache_entry(base_unit)?;

        // argument log records the original parameter list
        let mut record = LaunchRecord {
            scalars: BTreeMap::new(),
            arrays: BTreeMap::new(),
            exported: BTreeSet::new(),
        };

        // resolve array arguments; unregistered data is mapped for the
        // duration of the launch and synchronized back immediately
        let mut implicit: Vec<String> = Vec::new();
        let mut bindings: BTreeMap<String, u64> = BTreeMap::new();
        let mut region_of: BTreeMap<String, RegionId> = BTreeMap::new();
        for p in &base.unit.params {
            if p.kind != ParamKind::Array {
                continue;
            }
            let rid = match self.regions.by_name(&p.name) {
                Some(r) => r.id,
                None => {
                    let rid = self.region_enter(&p.name, true)?;
                    implicit.push(p.name.clone());
                    rid
                }
            };
            bindings.insert(p.name.clone(), rid.0);
            region_of.insert(p.name.clone(), rid);
            record.arrays.insert(p.name.clone(), rid.0);
        }
        for p in &base.unit.params {
            match p.kind {
                ParamKind::Array => {}
                ParamKind::ScalarIn | ParamKind::ScalarOut => {
                    let v = self.host_scalars.get(&p.name).copied().ok_or(
                        EvalError::UninitializedRead {
                            name: p.name.clone(),
                            index: None,
                        },
                    )?;
                    record.scalars.insert(p.name.clone(), v);
                    if p.kind == ParamKind::ScalarOut {
                        record.exported.insert(p.name.clone());
                    }
                }
            }
        }
        self.arg_log.push(id, record);

        // pick the active variant
        let spec = self.specialized.get(id).map(Rc::clone);
        let (active, boost): (&CacheEntry, bool) = match &spec {
            Some(s) => (&s.cache, s.boost),
            None => (&base, false),
        };

        // adaptive mode for this execution
        let state = self.adaptive.entry(id.clone()).or_default();
        let mode = if self.opts.adaptive {
            state.mode
        } else {
            Mode::Multi
        };

        // plan from resolved extents
        let mut extents: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut elem_bytes: BTreeMap<String, u64> = BTreeMap::new();
        for (name, rid) in &region_of {
            let r = self.regions.by_id(*rid).expect("region registered");
            extents.insert(name.clone(), r.extents.clone());
            elem_bytes.insert(name.clone(), r.elem_bytes);
        }
        let iter_header = self.outer_iter_header(&active.unit)?;
        let mut plan = make_plan(
            &active.unit,
            &active.analysis,
            &active.selection,
            &extents,
            &elem_bytes,
            self.n_devices,
            mode.is_distributed(),
            iter_header,
        );
        check_aliases(&active.unit, &bindings, &mut plan);

        // schedule against region access history
        let reads: Vec<RegionId> = active
            .unit
            .arrays_read
            .iter()
            .filter_map(|a| region_of.get(a))
            .copied()
            .collect();
        let writes: Vec<RegionId> = active
            .unit
            .arrays_written
            .iter()
            .filter_map(|a| region_of.get(a))
            .copied()
            .collect();
        let decision = self
            .scheduler
            .schedule(&reads, &writes, active.unit.requested_async);

        // per-device execution of the filtered kernel
        let filtered = &active.filtered;
        let ids = StmtIds::number(std::slice::from_ref(&filtered.unit.body));
        let mut max_bytes = 0u64;
        let mut partials: Vec<BTreeMap<String, Value>> = Vec::with_capacity(self.n_devices);
        let mut write_logs: Vec<Vec<WriteRecord>> = Vec::new();
        let scratch: Vec<Segment> = (0..self.n_devices)
            .map(|d| {
                self.devices[d]
                    .pool
                    .alloc(64 + 16 * filtered.unit.params.len() as u64, PoolKind::Runtime)
            })
            .collect::<Result<_, _>>()?;
        for d in 0..self.n_devices {
            // arrange buffers: one slot per distinct region
            let mut slot_of: BTreeMap<RegionId, usize> = BTreeMap::new();
            let mut names: BTreeMap<String, usize> = BTreeMap::new();
            let mut bufs: Vec<ArrayBuf> = Vec::new();
            for (name, rid) in &region_of {
                let slot = match slot_of.get(rid) {
                    Some(s) => *s,
                    None => {
                        let buf = self.devices[d]
                            .bufs
                            .remove(rid)
                            .expect("device buffer allocated");
                        let s = bufs.len();
                        bufs.push(buf);
                        slot_of.insert(*rid, s);
                        s
                    }
                };
                names.insert(name.clone(), slot);
            }
            let mut scalars: BTreeMap<String, Value> = BTreeMap::new();
            for p in &active.unit.params {
                if p.kind != ParamKind::Array {
                    if let Some(v) = self.host_scalars.get(&p.name) {
                        scalars.insert(p.name.clone(), *v);
                    }
                }
            }
            // device bound ranges
            for (array, (lb, ub)) in &filtered.bounds.arrays {
                let (lo, hi) = plan
                    .arrays
                    .get(array)
                    .map(|e| e.ranges[d])
                    .unwrap_or(crate::filter::OPEN_RANGE);
                scalars.insert(lb.clone(), Value::Int(lo));
                scalars.insert(ub.clone(), Value::Int(hi));
            }
            if let Some((lb, ub)) = &filtered.bounds.iter {
                let (lo, hi) = if plan.iter_split {
                    plan.iter_ranges[d]
                } else {
                    crate::filter::OPEN_RANGE
                };
                scalars.insert(lb.clone(), Value::Int(lo));
                scalars.insert(ub.clone(), Value::Int(hi));
            }

            let mut instr = if self.opts.log_writes {
                Instrument::with_log()
            } else {
                Instrument::default()
            };
            let run = {
                let mut ev = Evaluator {
                    arrays: &mut bufs,
                    names: &names,
                    scalars: &mut scalars,
                    instr: &mut instr,
                    ids: &ids,
                };
                ev.exec_stmt(&filtered.unit.body)
            };
            // return buffers before propagating any error
            for (rid, slot) in &slot_of {
                self.devices[d].bufs.insert(*rid, bufs[*slot].clone());
            }
            run.map_err(|source| SimError::DeviceEval { device: d, source })?;
            max_bytes = max_bytes.max(instr.read_bytes + instr.write_bytes);
            if let Some(log) = instr.write_log.take() {
                write_logs.push(log);
            }
            partials.push(scalars);
        }
        for (d, seg) in scratch.into_iter().enumerate() {
            self.devices[d].pool.free(seg);
        }

        // timing
        let throughput = self.cfg.device_throughput_bytes_per_s
            * if boost {
                self.cfg.specialized_throughput_multiplier
            } else {
                1.0
            };
        let t_kernel = self.cfg.launch_overhead_s + max_bytes as f64 / throughput;

        // exchange distributed slices
        let (t_comm, bytes_exchanged) = if mode.is_distributed() && !plan.all_duplicated() {
            let ex = plan_exchange(&plan, &self.cfg);
            self.apply_exchange(&plan, &region_of)?;
            (ex.comm_time, ex.total_bytes)
        } else {
            (0.0, 0)
        };

        // scalar results back to the host
        self.combine_scalars(&active.unit, &plan, &partials);

        // adaptive step uses the writes the kernel could distribute
        let write_size = potential_write_bytes(&active.unit, &active.analysis, &active.selection, &extents, &elem_bytes);
        if self.opts.adaptive {
            let state = self.adaptive.get_mut(id).expect("state created");
            state.step(
                StepInput {
                    t_kernel,
                    t_comm,
                    write_size,
                },
                AdaptiveParams {
                    devices: self.n_devices,
                    peak_p2p: self.cfg.peak_p2p_bytes_per_s,
                },
            );
        }

        self.total_kernel_s += t_kernel;
        self.total_comm_s += t_comm;
        self.kernel_execs += 1;
        self.trace.push(TraceEvent {
            event: "kernel",
            kernel_id: Some(id.0.clone()),
            queue: Some(decision.queue),
            waits: decision.waits.iter().map(|w| w.queue).collect(),
            t_kernel_s: t_kernel,
            t_comm_s: t_comm,
            mode: Some(mode.name()),
            bytes_exchanged,
        });
        self.execs.push(ExecRecord {
            kernel: id.clone(),
            mode,
            plan,
            queue: decision.queue,
            waits: decision.waits.iter().map(|w| w.queue).collect(),
            write_logs,
        });

        // results that escape to the host synchronize immediately
        let needs_sync = active.unit.flags.has_reduction
            || active.unit.flags.writes_scalar_out
            || !implicit.is_empty();
        if needs_sync {
            self.scheduler.host_sync();
            self.trace.push(TraceEvent {
                event: "sync",
                kernel_id: Some(id.0.clone()),
                queue: None,
                waits: Vec::new(),
                t_kernel_s: 0.0,
                t_comm_s: 0.0,
                mode: None,
                bytes_exchanged: 0,
            });
        }
        for array in implicit {
            self.region_exit(&array, true)?;
        }
        Ok(())
    }

    /// Outer loop header of the kernel, evaluated for this launch.
    fn outer_iter_header(
        &mut self,
        unit: &KernelUnit,
    ) -> Result<Option<(i64, LoopCmp, i64, i64)>, SimError> {
        let mut cur = &unit.body;
        loop {
            match cur {
                Stmt::Directive { body, .. } => cur = body,
                Stmt::Block(items) if items.len() == 1 => cur = &items[0],
                Stmt::For(l) => {
                    let scalars_snapshot = self.host_scalars.clone();
                    let init = eval_pure(&l.init, &scalars_snapshot)?;
                    let bound = eval_pure(&l.bound, &scalars_snapshot)?;
                    let step = match &l.step {
                        LoopStep::Inc => 1,
                        LoopStep::AddAssign(e) => eval_pure(e, &scalars_snapshot)?,
                    };
                    return Ok(Some((init, l.cmp, bound, step)));
                }
                _ => return Ok(None),
            }
        }
    }

    /// Copies each owner's slice of every distributed array into all
    /// other devices' buffers.
    fn apply_exchange(
        &mut self,
        plan: &SplitPlan,
        region_of: &BTreeMap<String, RegionId>,
    ) -> Result<(), SimError> {
        for (array, entry) in &plan.arrays {
            if entry.duplicated {
                continue;
            }
            let rid = match region_of.get(array) {
                Some(r) => *r,
                None => continue,
            };
            let dim = entry.dim;
            let ext = &entry.extents;
            let inner: usize = ext[dim + 1..].iter().product();
            let left: usize = ext[..dim].iter().product();
            for owner in 0..plan.devices {
                let (lb, ub) = entry.ranges[owner];
                if lb > ub {
                    continue;
                }
                let rows = (ub - lb + 1) as usize;
                let src = self.devices[owner]
                    .bufs
                    .get(&rid)
                    .expect("owner buffer present")
                    .clone();
                for dest in 0..plan.devices {
                    if dest == owner {
                        continue;
                    }
                    let dst = self.devices[dest]
                        .bufs
                        .get_mut(&rid)
                        .expect("destination buffer present");
                    for l in 0..left {
                        let start = (l * ext[dim] + lb as usize) * inner;
                        dst.copy_range_from(&src, start, rows * inner);
                    }
                }
            }
        }
        Ok(())
    }

    /// Combines per-device scalar results and writes them to the host
    /// environment.
    fn combine_scalars(
        &mut self,
        unit: &KernelUnit,
        plan: &SplitPlan,
        partials: &[BTreeMap<String, Value>],
    ) {
        for (op, var) in &unit.reductions {
            let init = self.host_scalars.get(var).copied();
            let values: Vec<Value> = partials
                .iter()
                .filter_map(|env| env.get(var).copied())
                .collect();
            if values.is_empty() {
                continue;
            }
            let total = if plan.iter_split {
                combine_reduction(*op, init, &values)
            } else {
                values[0]
            };
            self.host_scalars.insert(var.clone(), total);
        }
        for p in &unit.params {
            if p.kind == ParamKind::ScalarOut
                && !unit.reductions.iter().any(|(_, v)| v == &p.name)
            {
                if let Some(v) = partials.first().and_then(|env| env.get(&p.name)) {
                    self.host_scalars.insert(p.name.clone(), *v);
                }
            }
        }
    }

    fn run_optimize(&mut self) -> Result<(), SimError> {
        self.optimized = true;
        let ids: Vec<KernelId> = self.arg_log.kernels().cloned().collect();
        for id in ids {
            let base = match self.kernels.get(&id) {
                Some(b) => Rc::clone(b),
                None => continue,
            };
            let records = self.arg_log.records(&id).to_vec();
            if records.is_empty() {
                continue;
            }
            let spec: Specialization = match specialize(&base.unit, &records) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let boost = spec.all_arrays_no_alias;
            let cache = build_cache_entry(spec.unit)?;
            self.specialized
                .insert(id.clone(), Rc::new(SpecializedEntry { cache, boost }));
            self.trace.push(TraceEvent {
                event: "optimize",
                kernel_id: Some(id.0.clone()),
                queue: None,
                waits: Vec::new(),
                t_kernel_s: 0.0,
                t_comm_s: 0.0,
                mode: None,
                bytes_exchanged: 0,
            });
        }
        Ok(())
    }
}

fn build_cache_entry(unit: KernelUnit) -> Result<CacheEntry, SimError> {
    let graph = build_ssa(&unit)?;
    let analysis = compute_guards(&graph);
    let selection = make_selection(&unit, &analysis, &graph);
    let filtered = apply_filter(&unit, &analysis, &graph, &selection);
    Ok(CacheEntry {
        unit,
        graph,
        analysis,
        selection,
        filtered,
    })
}

/// Bytes of array writes the kernel would distribute when split.
fn potential_write_bytes(
    unit: &KernelUnit,
    analysis: &GuardAnalysis,
    selection: &BTreeMap<String, DimChoice>,
    extents: &BTreeMap<String, Vec<usize>>,
    elem_bytes: &BTreeMap<String, u64>,
) -> u64 {
    if must_duplicate_kernel(unit, analysis) {
        return 0;
    }
    selection
        .iter()
        .filter(|(_, c)| matches!(c, DimChoice::Split(_)))
        .map(|(a, _)| {
            let n: u64 = extents
                .get(a)
                .map(|e| e.iter().map(|x| *x as u64).product())
                .unwrap_or(0);
            n * elem_bytes.get(a).copied().unwrap_or(8)
        })
        .sum()
}

fn combine_reduction(op: ReduceOp, init: Option<Value>, values: &[Value]) -> Value {
    match op {
        ReduceOp::Add => {
            let init = init.unwrap_or(match values[0] {
                Value::Int(_) => Value::Int(0),
                Value::Float(_) => Value::Float(0.0),
            });
            match init {
                Value::Int(i0) => {
                    let mut total = i0;
                    for v in values {
                        if let Value::Int(x) = v {
                            total = total.wrapping_add(x.wrapping_sub(i0));
                        }
                    }
                    Value::Int(total)
                }
                Value::Float(f0) => {
                    let mut total = f0;
                    for v in values {
                        total += v.as_f64() - f0;
                    }
                    Value::Float(total)
                }
            }
        }
        ReduceOp::Max => fold_values(values, |a, b| if b > a { b } else { a }),
        ReduceOp::Min => fold_values(values, |a, b| if b < a { b } else { a }),
    }
}

fn fold_values(values: &[Value], pick: impl Fn(f64, f64) -> f64) -> Value {
    match values[0] {
        Value::Int(_) => {
            let mut acc = match values[0] {
                Value::Int(x) => x,
                _ => unreachable!(),
            };
            for v in &values[1..] {
                if let Value::Int(x) = v {
                    let f = pick(acc as f64, *x as f64);
                    acc = f as i64;
                }
            }
            Value::Int(acc)
        }
        Value::Float(_) => {
            let mut acc = values[0].as_f64();
            for v in &values[1..] {
                acc = pick(acc, v.as_f64());
            }
            Value::Float(acc)
        }
    }
}

fn eval_pure(expr: &Expr, scalars: &BTreeMap<String, Value>) -> Result<i64, SimError> {
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
    let v = ev.eval_expr(expr).map_err(SimError::Host)?;
    v.as_index().map_err(SimError::Host)
}

pub fn trace_event_json(e: &TraceEvent) -> serde_json::Value {
    serde_json::to_value(e).expect("trace events serialize")
}
