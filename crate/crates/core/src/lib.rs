//! Behavioral simulator of a hybrid analog/digital attention accelerator.
//!
//! An analog compute-in-memory array scores every key against a query at
//! 4-bit precision with charge-sharing arithmetic; a comparator turns each
//! score into a keep/prune bit. A digital core then recomputes exact INT8
//! attention only for surviving keys, reusing keys already held from the
//! previous query. A two-stage pipeline model and an event-based energy
//! model account for cycles and energy.
//!
//! The analog path and the softmax are generic over [`Real`] (`f32` or
//! `f64`); the aliases below fix the scalar for the common case.

pub mod blp;
pub mod cim_array;
pub mod digital_core;
pub mod error;
pub mod oracle;
pub mod pipeline_energy;
pub mod quant;
pub mod real;
pub mod rng;
pub mod sim;
pub mod sweep;
pub mod verify;
pub mod workload_io;

pub use error::{Error, Result};
pub use real::Real;

pub use blp::{bws_step, compare, score_token, term_sign, BwsState, PruneDecision, SignedAccumulator};
pub use cim_array::{CimArray, NoiseModel, RblSample};
pub use digital_core::{attend, exact_score, softmax_weights, AttentionResult, OverlapCache, PruneMask};
pub use oracle::{deadzone_classifier, reference_attention, score4_bruteforce, DeadZoneClass, OracleScore};
pub use pipeline_energy::{account_energy, compare_baselines, schedule, CostConfig, EventCounts, WorkloadStats};
pub use quant::{split_nibbles, to_bitplane, BitPlane, NibblePlanes, TokenVector};
pub use sim::{simulate, SimReport, SimRun, Simulator, NO_PRUNING};
pub use workload_io::{generate_workload, load_workload, save_workload, SimConfig, Workload, WorkloadSpec};

pub type CimArrayF64 = CimArray<f64>;
pub type CimArrayF32 = CimArray<f32>;
pub type NoiseModelF64 = NoiseModel<f64>;
pub type BwsStateF64 = BwsState<f64>;
pub type BwsStateF32 = BwsState<f32>;
pub type SimulatorF64 = Simulator<f64>;
pub type SimulatorF32 = Simulator<f32>;
pub type SimRunF64 = SimRun<f64>;
pub type AttentionResultF64 = AttentionResult<f64>;
