//! Standard-library companion to `psep-core`: file formats, the on-disk
//! corpus, parallel item mapping, evaluation pipelines and the `psep` CLI.

pub mod checks;
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod fileio;
pub mod parallel;
