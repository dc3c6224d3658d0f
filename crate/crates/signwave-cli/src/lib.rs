//! Library surface of the signwave CLI: command implementations and the
//! strictly validated run-config schema (also exercised by the fuzz
//! targets).

pub mod commands;
pub mod config;
