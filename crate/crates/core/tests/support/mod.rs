//! Independent reference computations shared by integration tests.

pub mod oracles;
