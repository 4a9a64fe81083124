//! Session service for the parley engine: the wire protocol, socket and
//! WebSocket transports, language-model transports and the CLI.

pub mod backend;
pub mod cli;
pub mod server;
pub mod wire;
