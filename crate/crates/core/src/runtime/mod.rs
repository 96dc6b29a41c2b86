//! Simulated multi-device runtime: region registry, queue scheduler,
//! cost model, adaptive controller, pool allocator, and the machine
//! that executes lowered programs.

pub mod adaptive;
pub mod exchange;
pub mod machine;
pub mod pool;
pub mod queue;
pub mod region;

pub use adaptive::{AdaptiveParams, AdaptiveState, Mode, StepInput};
pub use exchange::{plan_exchange, ExchangePlan, Transfer};
pub use machine::{simulate, ExecRecord, Machine, SimError, SimOptions, SimResult, Summary, TraceEvent};
pub use pool::{PoolAllocator, PoolError, PoolKind, Segment};
pub use queue::{ScheduleDecision, Scheduler, Wait};
pub use region::{DataRegion, RegionError, RegionId, RegionTree};
