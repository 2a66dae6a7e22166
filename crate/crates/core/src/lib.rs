//! Simulation of a dual-polarization DFT-spread OFDM link carrying two
//! power-division multiplexed QPSK branches, with a coherent receiver and
//! successive interference cancellation.

pub mod bitsource;
pub mod channel;
pub mod config;
pub mod constellation;
pub mod error;
pub mod harness;
pub mod ofdm;
pub mod pdm;
pub mod rx;
pub mod seed;
pub mod sic;
pub mod stats;

pub use bitsource::{prbs_next, split_branches, BitBlock, PrbsState};
pub use channel::{run_channel, ChannelConfig, DualPolStream};
pub use constellation::{composite_points, demap_hierarchical, demap_qpsk, map_qpsk, CompositePoint, QpskSymbol};
pub use config::{Axis, RunConfig};
pub use error::{Error, Result};
pub use harness::{compute_rate, Bound, dump_constellation, run_once, run_sweep, PointResult, RunOutcome, SweepResult, Tap};
pub use ofdm::{DualPolGrid, OfdmConfig, OfdmModem, Pol, SampleStream, SymbolGrid};
pub use pdm::{plan_from_pdr, superpose, PowerPlan};
pub use rx::{ChannelEstimate, RxConfig, RxOutput, TrainingPlan};
pub use sic::{count_errors, detect_hierarchical, detect_sic, DetectionReport, ErrorCounts, Method};
