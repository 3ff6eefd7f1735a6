//! Counter braids for per-flow traffic measurement.
//!
//! A counter braid stores per-flow packet counts in a layered array of
//! capacity-q registers. Each arriving packet bumps a handful of first-layer
//! registers; registers that wrap forward a carry to the next layer, so deep
//! layers hold the high-order information of large flows while the bulk of
//! the memory tracks the small ones. Flow sizes are not read directly: a
//! decoder reconstructs them from the register values.
//!
//! The crate provides:
//!
//! - [`braid`]: the braid structure, the packet-by-packet update, and the
//!   closed-form storage map used to cross-check it.
//! - [`ensemble`]: reproducible hash-based sparse constructions and the
//!   entropy-driven layer-sizing plan.
//! - [`digits`]: source distributions, q-ary digit laws, entropies, and
//!   admissibility checks.
//! - [`decoder`]: exact typical-set decoding at desk scale and a layered
//!   min-sum decoder for large instances.
//! - [`analysis`]: collision-probability formulas and bounds, typical-set
//!   counting, and Monte Carlo error-rate experiments, each paired with an
//!   independent oracle in the test suite.
//! - [`harness`]: trace synthesis, experiment orchestration, and report
//!   emission behind the `braidcount` command-line tool.

pub mod analysis;
pub mod braid;
pub mod decoder;
pub mod digits;
pub mod ensemble;
pub mod harness;

pub use braid::{BraidState, BraidTopology, Encoding, LayerMatrix, OverflowPolicy};
pub use decoder::{DecodeReport, DecodeStatus};
pub use digits::{DigitLaw, SourceDistribution};
pub use ensemble::{EnsembleParams, LayerPlan};
