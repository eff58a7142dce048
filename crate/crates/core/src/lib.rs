pub mod bodygen;
pub mod cli;
pub mod datakit;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod measure;
pub mod regressor;
pub mod screening;

pub use error::{Error, Result};
