//! Discrete-event scheduling simulator for segment-planned video world
//! models: planning graphs, disaggregated training pipelines, streaming
//! inference and camera guidance.

pub mod cli;
pub mod config;
pub mod graph;
pub mod guidance;
pub mod mmpl;
pub mod report;
pub mod resources;
pub mod sched;
pub mod stream;
pub mod train;
