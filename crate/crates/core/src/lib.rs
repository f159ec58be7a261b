//! Stateful greybox fuzzing for message-oriented servers: protocol states
//! are inferred from fuzzy hashes of long-lived memory snapshots taken at
//! request/reply boundaries, and the resulting state machine steers
//! mutation toward rarely exercised states.

pub mod calibration;
pub mod cli;
pub mod engine;
pub mod ipsm;
pub mod mutation;
pub mod mvp;
pub mod runtime;
pub mod safl;
pub mod targets;
pub mod tlsh;
