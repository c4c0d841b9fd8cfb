//! Library surface of the CLI crate: the plan-API server, reused by the
//! binary and exercised directly by the integration tests.

pub mod serve;
