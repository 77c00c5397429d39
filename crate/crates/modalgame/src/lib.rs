//! Equilibrium engine for the pricing game between autonomous mobility
//! operators and a fixed-fare public transport network on a multimodal city
//! graph.

pub mod context;
pub mod reaction;
pub mod best_response;
pub mod solver;
pub mod equilibrium;
pub mod graph;
pub mod oracle;
pub mod report;
pub mod scenario;
