pub mod bench;
pub mod compute;
pub mod dio;
pub mod error;
pub mod memory;
pub mod orchestrator;
pub mod queue;
pub mod reader;
pub mod reorder;
pub mod runtime;
pub mod storage;
pub mod writer;

pub use error::{Error, Result};
