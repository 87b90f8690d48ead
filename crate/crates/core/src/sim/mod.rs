//! System-level simulation: TDD timing, scheduling, KPIs and capacity sweeps.

pub mod capacity;
pub mod ecdf;
pub mod engine;
pub mod kpi;
pub mod tdd;

pub use capacity::{replicate, run_seeds, satisfied_count, system_capacity, CapacityPoint, CapacityResult};
pub use ecdf::{ecdf, Ecdf};
pub use engine::{simulate, Conservation, RunOutput, TraceFlags};
pub use kpi::{satisfied, KpiRecord};
pub use tdd::{SlotKind, TddPattern};
