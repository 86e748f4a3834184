//! Command-line pipeline around the fungraph library: simulate a dataset,
//! embed it, estimate the knowledge graph, train the network, predict, and
//! evaluate. Everything a command needs arrives through one JSON
//! configuration patched by flags, and every artifact lands in the output
//! directory with a manifest recording what produced it.

pub mod commands;
pub mod config;
pub mod containers;
pub mod csvio;
pub mod dot;
pub mod error;
pub mod schema;
