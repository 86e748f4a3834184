//! One module per subcommand. Each `run` takes the resolved configuration,
//! reads its inputs, writes its outputs plus a manifest under `config.out`,
//! and prints a short summary to stdout.

pub mod embed;
pub mod evaluate;
pub mod graph;
pub mod predict;
pub mod simulate;
pub mod train;
