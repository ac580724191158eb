//! Command-line front end for the conversational-QA trainer: corpus
//! synthesis, regime training, SM/MP evaluation, report comparison, and
//! corpus validation, with manifests that make every run reproducible.

pub mod commands;
pub mod config;
pub mod manifest;
