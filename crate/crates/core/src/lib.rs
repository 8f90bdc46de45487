//! Drawing-test classification: stylus recordings encoded as 1D series,
//! 2D RGB rasters or 3D voxel grids, classified by the same compact
//! convolutional network in one, two or three dimensions.

pub mod augment;
pub mod cli;
pub mod encode;
pub mod error;
pub mod ingest;
pub mod net;
pub mod preprocess;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
