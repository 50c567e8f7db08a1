//! Configuration, persistence, reporting and subcommand drivers for `magclt`.

pub mod check;
pub mod commands;
pub mod config;
pub mod export;
pub mod manifest;
pub mod plot;
pub mod store;
