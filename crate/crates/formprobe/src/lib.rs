//! File formats, remote backends, the simulator server and the command
//! line for `formprobe-core`.

pub mod cache;
pub mod cli;
pub mod config;
pub mod io;
pub mod protocol;
pub mod remote;
pub mod server;
