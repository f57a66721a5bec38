//! Bytecode ingestion, report caching, the job service and its HTTP interface.

pub mod cache;
pub mod input;
pub mod jobs;
pub mod rpc;
pub mod server;
