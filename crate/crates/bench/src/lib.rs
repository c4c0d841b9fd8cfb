//! Criterion benchmarks for the gateway simulator; see benches/pipeline.rs.
