//! Bitplane models of grayscale images.
//!
//! An image is mapped to a stack of binary planes by hierarchical median
//! thresholding (equivalently, half-point thresholding of its rank-equalized
//! version). The top plane `B_1` is kept as the conditioning input; every
//! lower plane `B_λ` is modeled as a convolutional logistic regression on the
//! planes above it, trained by Newton's method. New images are produced by
//! generating `B_2..B_Λ` in order from a given `B_1` and recomposing.
//!
//! - [`image_io`]: grayscale images, binary planes, PGM codec
//! - [`codec`]: rank equalization, decomposition, recomposition
//! - [`dataset`]: corpus manifests and seeded patch sampling
//! - [`model`]: the conditional model and its Newton-CG trainer
//! - [`generate`]: activation maps, band sampling, cascade generation
//! - [`eval`]: held-out NLL, NMSE, activation histograms, plane diagnostics

pub mod codec;
pub mod conv;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod generate;
pub mod image_io;
pub mod model;

pub use codec::{
    crop, decompose, decompose_image, equalize, equalized_image, recompose, BitplaneStack, Crop,
    RankField,
};
pub use dataset::{sample_batch, CorpusManifest, PatchBatch, PatchSource, Split};
pub use error::{Error, PgmError, Result};
pub use eval::{eval_nll, eval_nmse, heating_diagnostics, nmse, EvalReport};
pub use generate::{activation_map, generate_image, generate_stack, sample_plane, SamplerConfig};
pub use image_io::{image_to_plane, plane_to_image, read_pgm, write_pgm, BinaryPlane, GrayImage};
pub use model::{
    hessian_vec, load_model, nll, objective_grad, save_model, train, ConvLogisticModel,
    TrainConfig, TrainReport,
};
