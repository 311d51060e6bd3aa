//! Library surface of the `gorthant` CLI, exposed for integration tests.

pub mod bench;
pub mod conservative_cmd;
pub mod estargs;
pub mod input;
pub mod prob;
pub mod report;
pub mod testcase;
