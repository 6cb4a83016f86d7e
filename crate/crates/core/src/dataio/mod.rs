//! Getting images and boxes in and out: the annotation text format, binary
//! PPM/PGM, resizing and standardization, and a synthetic scene generator.

mod annotations;
mod netpbm;
mod preprocess;
mod synth;

pub use annotations::{
    format_annotations, format_detections, parse_annotations, parse_detections, AnnotationRecord,
    DetectionRecord,
};
pub use netpbm::{encode_ppm, load_image, RgbImage};
pub use preprocess::{preprocess, resize_bilinear, Normalization};
pub use synth::{head_extent, synth_generate, write_synth_dataset, SynthConfig, SynthImage};

use crate::geometry::BBox;
use crate::tensor::Tensor3;

/// A preprocessed image with its ground truth in the same pixel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor3<f32>,
    pub gts: Vec<BBox>,
    pub id: String,
}
