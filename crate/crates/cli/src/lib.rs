//! Command-line interface, HTTP service and mock sidecar for orgapipe.

pub mod cli;
pub mod service;
pub mod sidecar;
