//! Knowledge-graph-guided story generation.
//!
//! - [`kg`]: the typed graph of story facts and its edit algebra.
//! - [`textgen`]: prompt templates and generator backends.
//! - [`pipeline`]: the scene-by-scene state machine, its event log and replay.

pub mod kg;
pub mod pipeline;
pub mod textgen;
