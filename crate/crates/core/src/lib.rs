pub mod canon;
pub mod codegen;
pub mod dump;
pub mod grammar;
pub mod merge;
pub mod pipeline;
pub mod ranklist;
pub mod solver;
pub mod synth;
pub mod trace;
