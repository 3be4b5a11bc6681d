//! Benchmark harness: shipped workloads, calibration, sweeps and CSV output.

mod calibrate;
mod suite;
mod workloads;

pub use calibrate::*;
pub use suite::*;
pub use workloads::*;
