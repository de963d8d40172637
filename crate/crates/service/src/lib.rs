//! Run service for the lab automation stack: HTTP and WebSocket API, file-backed persistence,
//! optimization campaigns and the `labrun` command line.

pub mod campaigns;
pub mod cli;
pub mod config;
pub mod envelope;
pub mod error;
pub mod idempotency;
pub mod remote;
pub mod runs;
pub mod server;
pub mod store;
