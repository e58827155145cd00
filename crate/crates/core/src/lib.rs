//! Control-flow error detection and recovery for multithreaded programs.
//!
//! The crate is organised bottom-up:
//!
//! - [`ir`]: the block-structured multithreaded IR, its parser and printer.
//! - [`depgraph`]: per-thread control/data-flow graphs and the program-wide
//!   dependency graph with synchronization and communication arcs.
//! - [`instrument`]: signature assignment, critical-section normalization,
//!   the CRMP transformation (signature checks, partial shadow checkpoints,
//!   recovery handler) and the full-checkpoint BCP baseline.
//! - [`vm`]: a deterministic single-core multithreaded interpreter with a
//!   fault hook and event tracing.
//! - [`campaign`]: fault sampling, replay and outcome classification.
//! - [`metrics`]: overhead, cost and efficiency metrics plus report emission.
//! - [`workloads`]: generators for the quicksort, matrix multiplication and
//!   linked-list benchmark programs.
//! - [`verify`]: exhaustive enumeration of illegal transfers on small programs.

pub mod ir;
pub mod depgraph;
pub mod instrument;
pub mod vm;
pub mod workloads;
pub mod campaign;
pub mod metrics;
pub mod verify;
