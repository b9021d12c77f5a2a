//! Desk-scale laboratory for collective coin flipping and leader election in
//! the full-information model: exact truth-table analysis of boolean voting
//! functions, multi-round protocol evaluation against optimal adversaries,
//! coalition-finding attacks, and explicit protocol constructions.

pub mod attack;
pub mod boolfn;
pub mod cli;
pub mod construct;
pub mod dyadic;
pub mod protocol;
pub mod specio;
pub mod stats;
