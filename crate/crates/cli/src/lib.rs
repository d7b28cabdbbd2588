//! Library half of the `evote` binary: configuration loading and the HTTP
//! API, exposed so both can be tested without a socket.

pub mod api;
pub mod config;
