//! Interactive session host.
//!
//! One simulation thread owns the [`admit_core::Session`] and steps it at
//! wall-clock pace. Clients connect to `ws://host:port/ws`, send
//! [`WireCommand`]s and receive [`ServerMessage`]s. Commands are queued in
//! arrival order and applied at the next step boundary; the most recent force
//! wins. Forces are clamped to `f_max` inside the session, whatever the client sends.

mod server;
pub mod wire;

pub use server::{serve, LiveError, LiveServer, ServeOptions};
pub use wire::{ServerMessage, WireCommand, WireSnapshot, SCHEMA_VERSION};
