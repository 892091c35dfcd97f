//! Core of the flexlane instructable driving stack: the AutoIR instruction
//! representation, natural-language translation, safety rule validation,
//! parameter reconfiguration with rollback, the in-process message bus and
//! a small deterministic driving simulator.

pub mod autoir;
pub mod bus;
pub mod registry;
pub mod rules;
pub mod sim;
pub mod translation;
pub mod executor;
