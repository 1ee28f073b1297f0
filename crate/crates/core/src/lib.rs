//! Iterative magnitude pruning of a small two-branch encoder–decoder for
//! nucleus segmentation, with watershed-based instance merging, AJI/PQ
//! evaluation and a FLOPs-based speedup model.

pub mod autonet;
pub mod experiment;
pub mod io;
pub mod labels;
pub mod metrics;
pub mod pipeline;
pub mod pruner;
pub mod synth;
pub mod tensor;
