//! Weather classification from LiDAR, RADAR and camera data.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod bench;
pub mod bev_raster;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fusion_head;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sensor_io;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
