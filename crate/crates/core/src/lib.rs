//! Coral bleaching classification from first principles: a residual CNN with
//! hand-written forward and backward kernels, its training and evaluation
//! loop, Grad-CAM explanations, and the image ingestion pipeline.

pub mod data;
pub mod gradcam;
pub mod nn;
pub mod tensor;
pub mod train;
