//! A memcached-compatible TCP front end for [`fleec_core::Cache`].
//!
//! Only the text protocol is spoken, and only `get`, `set`, `delete`,
//! `stats`, `version` and `quit`. Every other verb gets `ERROR`.

pub mod client;
pub mod protocol;
pub mod server;

pub use protocol::{parse_command, Command, Context, Parse, Session};
pub use server::{serve, RunningServer, ServerConfig};
