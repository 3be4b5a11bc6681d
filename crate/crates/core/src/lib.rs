//! Decoupled software pipelining with backward slicing over a small IR.

pub mod ir;
pub mod pdg;
pub mod scc;
pub mod slicer;
pub mod partition;
pub mod queue;
pub mod runtime;
pub mod bench;
