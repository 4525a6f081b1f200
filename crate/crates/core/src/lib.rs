pub mod aggregate;
pub mod dataio;
pub mod depthmetrics;
pub mod edgefeat;
pub mod error;
pub mod flowwarp;
pub mod fppnnet;
pub mod pipeline;
pub mod pseudolidar;
pub mod synthscene;
pub mod tensor;

pub use error::{Error, Result};
