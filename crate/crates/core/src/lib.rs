//! A small single-class head detector: anchor design from receptive fields,
//! anchor labeling, a toy fully-convolutional network trained from scratch
//! with hand-written backprop, NMS, and PASCAL-style AP evaluation.

pub mod anchors;
pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod loss;
pub mod net;
pub mod postprocess;
pub mod receptive_field;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{BBox, BoxDelta};
pub use tensor::Tensor3;
