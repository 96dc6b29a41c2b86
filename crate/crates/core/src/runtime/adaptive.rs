//! Per-kernel adaptive controller for multi-device utilization.
//!
//! Kernels start duplicated on every device.  After a warm-up run the
//! controller profiles duplicated executions and counts those whose
//! ideal split time (kernel time over device count plus the write
//! volume pushed over one link) beats duplication; at five such
//! observations the kernel switches to distributed execution.  While
//! distributed, an execution counts against the kernel when its total
//! time exceeds either the kernel time scaled by the device count or
//! the profiled duplication time; at five strikes with a positive mean
//! margin the kernel falls back to duplication for good.
//!
//! `eff_dup` is kept in seconds per written byte so that multiplying it
//! by a write size yields a time.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    DupWarmup,
    DupProfiling,
    Multi,
    DupFinal,
}

impl Mode {
    pub fn is_distributed(self) -> bool {
        self == Mode::Multi
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::DupWarmup => "dup_warmup",
            Mode::DupProfiling => "dup_profiling",
            Mode::Multi => "multi",
            Mode::DupFinal => "dup_final",
        }
    }
}

/// Timing sample for one execution of a kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInput {
    /// Kernel execution time of this run (max over devices).
    pub t_kernel: f64,
    /// Device-to-device exchange time of this run.
    pub t_comm: f64,
    /// Bytes of distributable array writes.
    pub write_size: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveParams {
    pub devices: usize,
    pub peak_p2p: f64,
}

pub const SWITCH_COUNT: u32 = 5;

/// Ideal split-execution bound compared against a duplicated run.
pub fn split_bound(t_kernel: f64, devices: usize, write_size: u64, peak_p2p: f64) -> f64 {
    t_kernel / devices as f64 + write_size as f64 / peak_p2p
}

#[derive(Debug, Clone)]
pub struct AdaptiveState {
    pub mode: Mode,
    /// Mean of t_kernel / write_size over profiled duplicated runs.
    pub eff_dup: f64,
    profile_samples: u64,
    /// Executions where splitting promised a win.
    pub profile_hits: u32,
    /// Distributed executions that breached a disable condition.
    pub multi_strikes: u32,
    margin_sum: f64,
    margin_count: u64,
}

impl Default for AdaptiveState {
    fn default() -> Self {
        AdaptiveState {
            mode: Mode::DupWarmup,
            eff_dup: 0.0,
            profile_samples: 0,
            profile_hits: 0,
            multi_strikes: 0,
            margin_sum: 0.0,
            margin_count: 0,
        }
    }
}

impl AdaptiveState {
    /// Consumes one execution's timings (taken under `self.mode`) and
    /// decides the mode for the next execution.
    pub fn step(&mut self, input: StepInput, params: AdaptiveParams) -> Mode {
        let n = params.devices;
        match self.mode {
            Mode::DupWarmup => {
                self.mode = if n >= 2 {
                    Mode::DupProfiling
                } else {
                    Mode::DupWarmup
                };
            }
            Mode::DupProfiling => {
                if n >= 2 && input.write_size > 0 {
                    self.profile_samples += 1;
                    let ratio = input.t_kernel / input.write_size as f64;
                    self.eff_dup += (ratio - self.eff_dup) / self.profile_samples as f64;
                    let bound = split_bound(input.t_kernel, n, input.write_size, params.peak_p2p);
                    if input.t_kernel > bound {
                        self.profile_hits += 1;
                    }
                    if self.profile_hits >= SWITCH_COUNT {
                        self.mode = Mode::Multi;
                    }
                }
            }
            Mode::Multi => {
                let total = input.t_kernel + input.t_comm;
                let rhs_scaled = input.t_kernel * n as f64;
                let rhs_profiled = self.eff_dup * input.write_size as f64;
                if total > rhs_scaled || total > rhs_profiled {
                    self.multi_strikes += 1;
                }
                self.margin_sum += total - rhs_scaled.min(rhs_profiled);
                self.margin_count += 1;
                if self.multi_strikes >= SWITCH_COUNT && self.mean_margin() > 0.0 {
                    self.mode = Mode::DupFinal;
                }
            }
            Mode::DupFinal => {}
        }
        self.mode
    }

    pub fn mean_margin(&self) -> f64 {
        if self.margin_count == 0 {
            0.0
        } else {
            self.margin_sum / self.margin_count as f64
        }
    }
}
