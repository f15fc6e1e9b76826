//! Command-line front end and model persistence for convex polytope trees.

pub mod boundary;
pub mod commands;
pub mod document;

pub use commands::{run, Cli, UsageError};
pub use document::ModelDocument;
