//! Command line tool and HTTP service around `nand-core`.
//!
//! - [`config`]: TOML configuration with `NAND_` environment overrides.
//! - [`cache`]: embedding cache, manifest, lock file, ingest and banks.
//! - [`runtime`]: read-only snapshot of a built cache used by `eval`,
//!   `preview` and the service.
//! - [`server`]: the JSON HTTP API.
//! - [`fixture`]: the synthetic demo dataset.

pub mod cache;
pub mod commands;
pub mod config;
pub mod fixture;
pub mod render;
pub mod runtime;
pub mod server;

pub use commands::{run, Cli, Command};
pub use config::{Config, DetectorChoice};
pub use runtime::Runtime;
