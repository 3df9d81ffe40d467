//! Cross-framework meaning representation parsing.

pub mod decoder;
pub mod edge;
pub mod eval;
pub mod graph;
pub mod heads;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod prep;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod tree;
