//! File formats, replication studies and the command line for the two-part
//! joint model.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fitfile;
pub mod harness;
