//! Streaming service for driving the engine from an external denoising loop.
//!
//! A client opens a session with its [`SessionConfig`](crate::SessionConfig),
//! streams reference features once per `(object, t, layer)`, then sends the
//! output branch's features at every step and receives the injected map.
//! Framing is described in [`protocol`].

pub mod client;
pub mod engine;
pub mod protocol;
pub mod server;

pub use client::Client;
pub use engine::{Engine, Session};
pub use protocol::{ErrorCode, MsgType, Request, Response};
pub use server::Server;

/// Environment variable holding the default bind address.
pub const ADDR_ENV: &str = "SEMXFER_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:7410";
