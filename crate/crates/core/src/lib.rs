//! Orchestration of N independent solve agents and one compare agent, with
//! the consensus statistics behind it and a simulated harness to check them.

pub mod batch;
pub mod cli;
pub mod consensus;
pub mod problem;
pub mod runtime;
pub mod sim;
