pub mod adapter;
pub mod coalescer;
pub mod dram;
pub mod error;
pub mod isu;
pub mod metrics;
pub mod runner;
pub mod sparse;
pub mod streams;
pub mod system;

pub use error::{Error, Result};
