//! Exact event-driven simulation of local-density-dependent Markov processes
//! on sampled graphs.
//!
//! Each vertex carries a state from a finite set and switches `s' -> s` at
//! rate `q_{s s'}(phi_i)`, where `phi_i` counts neighbors per state scaled by
//! `1/(N kappa)`. Events are drawn by the Gillespie direct method with a
//! sum-tree over per-vertex exit rates.

mod model;
mod process;
mod sum_tree;

pub use model::{
    BaseTransition, InteractionTransition, ModelBuilder, ModelSpec, Preset, RateModel,
};
pub use process::{
    ConsistencyCheck, InitialCondition, Process, StepOutcome, TransitionEvent, Trajectory,
};
pub use sum_tree::SumTree;
