//! Distributed data analytics across a fleet of intermittently connected
//! clients: a central cloud node splits analyst assignments into per-client
//! tasks, client agents compute on-board, and assignment handlers aggregate
//! the results off-board, optionally over many iterations.

pub mod analytics;
pub mod client;
pub mod cloud;
pub mod config;
pub mod events;
pub mod harness;
pub mod net;
pub mod protocol;
pub mod user;
