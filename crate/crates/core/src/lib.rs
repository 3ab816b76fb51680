pub mod autodiff;
pub mod cli;
pub mod config;
pub mod credit;
pub mod env;
pub mod error;
pub mod harness;
pub mod optim;
pub mod policy;
pub mod trajectory;

pub use error::{Error, Result};
