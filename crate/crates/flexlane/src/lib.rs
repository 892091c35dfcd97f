//! Operator commands and the live gateway on top of `flexlane-core`.

pub mod commands;
pub mod gateway;
pub mod session;
