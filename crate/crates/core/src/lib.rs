//! Mass-spring-damper soft-body simulation: model, topology builders,
//! integrators, state files, diagnostics, benchmarks and cost-value
//! prioritization.

pub mod ahp;
pub mod bench;
pub mod dynamics;
pub mod model;
pub mod statepack;
pub mod stats;
pub mod topology;
