//! Core of the fuzztherest REST API fuzzer.

pub mod executor;
pub mod identity;
pub mod mock_sut;
pub mod mutation;
pub mod oas;
pub mod report;
pub mod rl;
pub mod runner;
pub mod scenario;
pub mod value;
