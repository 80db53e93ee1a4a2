//! HTTP surface of the medical server and the client the gateway uses to
//! reach it.

mod api;
mod client;
mod config;

pub use api::{router, serve};
pub use client::{webhook_sink, ClientError, HttpClient, HttpUplink};
pub use config::{build_server, ServeConfig, SettingsError};
