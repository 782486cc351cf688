//! Link-level MIMO-OFDM simulation and channel estimation toolkit with
//! noise-plus-interference (NPI) suppression.
//!
//! The crate is organized around the receive chain of an uplink slot:
//!
//! * [`gridsim`] generates synthetic clustered-multipath channels, simulates
//!   slot transmission under controllable noise-plus-interference, and
//!   serializes labeled datasets.
//! * [`linest`] holds the closed-form estimation core: least-squares pilot
//!   estimation, linear interpolation, LMMSE with exponential correlation,
//!   channel-subspace projection operators, NPI extraction, and the NMSE
//!   metric.
//! * [`neural`] is a small trainable-network toolkit (dense, conv2d,
//!   single-head attention, pooling) with manual backpropagation, an
//!   adaptive-moment optimizer, and finite-difference gradient verification.
//! * [`npinet`] wires the suppression pipeline end to end: CSI refinement,
//!   projection-based NPI splitting, learned NPI estimation with SINR
//!   conditioning, subtraction, re-estimation, and CSI completion, plus the
//!   attention-based completion baseline and the two-step training schedule.
//! * [`sinrest`] estimates per-slot average SINR from received I/Q
//!   statistics via a 2-D histogram branch and a point-network branch.

pub mod config;
pub mod gridsim;
pub mod linest;
pub mod neural;
pub mod npinet;
pub mod sinrest;

mod error;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;

pub use num_complex::Complex64;
