pub mod arg;
pub mod backbone;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod inference;
pub mod mini_raven;
pub mod model;
pub mod nn;
pub mod prd_head;
pub mod problem;
pub mod study;
pub mod trainer;

pub use error::{Error, Result};
