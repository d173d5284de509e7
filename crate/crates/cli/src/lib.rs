//! Configuration, dataset ingestion, chain persistence and the subcommands
//! behind the `stfm` binary.

pub mod chains;
pub mod commands;
pub mod config;
pub mod ingest;

pub use config::RunConfig;

/// Machine-readable error body printed on failure.
pub fn error_json(e: &stfm::Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}
