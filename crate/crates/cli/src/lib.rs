//! Command-line front end and operator service for the edgebot pipeline.

pub mod cli;
pub mod service;
