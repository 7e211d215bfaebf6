//! File formats, graph exports and the `tracefa` command-line interface on
//! top of [`tracefa_core`].

pub mod cli;
pub mod data;
pub mod graphs;
pub mod manifest;
pub mod params;
pub mod tables;

pub use cli::{run, Cli};
