//! Library surface of the batch driver, shared by the binary, the fixture
//! generator and the test suites.

pub mod commands;
pub mod config;
pub mod io;
