//! Hierarchical coded distributed matrix multiplication.
//!
//! The crate splits `C = A·B` into coded subtasks so that a master can
//! rebuild `C` from any sufficiently large subset of worker results, and
//! layers those codes so that slow workers still contribute partial work.
//!
//! * [`matrix`]: dense matrices, blocks, the reference multiplier, file formats.
//! * [`cuboid`]: the `Nx x Nz x Ny` cuboid of multiply-accumulates and its partitions.
//! * [`codes`]: recovery thresholds, loads, polynomial and MatDot codes.
//! * [`hierarchy`]: NonH, BICC, MLCC, RMLCC and HHCC schedules and aggregation.
//! * [`profile_opt`]: recovery-profile optimization and finishing-time bounds.
//! * [`stoch_sim`]: shifted-exponential timing models and Monte Carlo.
//! * [`runtime`]: an in-process master/worker run with artificial stragglers.
//! * [`cli`]: configuration and the subcommands of the `hcmm` binary.

pub mod cli;
pub mod codes;
pub mod cuboid;
pub mod error;
pub mod hierarchy;
pub mod matrix;
pub mod profile_opt;
pub mod runtime;
pub mod stoch_sim;

pub use error::{Error, Result};
