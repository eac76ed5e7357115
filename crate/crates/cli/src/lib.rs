//! Command-line driver and HTTP API for hatching runs.

pub mod api;
pub mod app;
pub mod live;
