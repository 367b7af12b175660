//! Priority-based coordination of robots on fixed straight paths through an
//! intersection.
//!
//! The crate is layered bottom-up:
//!
//! * [`coordspace`]: pairwise collision regions and their completed regions.
//! * [`priority`]: priority graphs, feasibility, safety margins, witness paths.
//! * [`dynamics`]: exact slot flows for the velocity, second-order and
//!   bounded-noise models, plus box propagation.
//! * [`control`]: the priority-preserving control laws and brake safety.
//! * [`intersection`]: request processing and phase/lock management.
//! * [`scenario`]: scenario files.
//! * [`simulator`]: the slot-stepped world, traces and metrics.
//! * [`oracle`]: brute-force checkers used by tests and the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod coordspace;
pub mod dynamics;
pub mod error;
pub mod intersection;
pub mod oracle;
pub mod priority;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};
