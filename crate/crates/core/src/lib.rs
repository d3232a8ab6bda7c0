//! Deterministic SIMT kernel simulator with shadow-memory address
//! sanitization, edge coverage, and a coverage-guided, type-aware fuzz loop
//! that amortizes harness setup through device-memory snapshots.

pub mod bench;
pub mod campaign;
pub mod coverage;
pub mod exec;
pub mod ir;
pub mod memory;
pub mod mutation;
pub mod rng;
pub mod sanitizer;
