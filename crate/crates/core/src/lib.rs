pub mod batch;
pub mod cli;
pub mod decompose;
pub mod graph;
pub mod loss;
pub mod negatives;
pub mod parser;
pub mod render;
pub mod seed;
pub mod synth;
pub mod train;
