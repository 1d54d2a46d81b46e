//! Datasets and the degradation pipeline.
//!
//! High-resolution grayscale images come in through [`ImageDataset`] (either
//! loaded from the binary dataset format or synthesised), are degraded into
//! aligned low/high resolution [`LrHrPair`]s by [`make_pairs`], and feed the
//! training engine from there. Testing never looks at high-resolution
//! content: evaluation consumes bare low-resolution images.

mod format;
mod pipeline;
mod synth;

pub use format::{load_dataset, save_dataset};
pub use pipeline::{
    add_gaussian_noise, batch_hr, batch_lr, corrupt_salt_pepper, denormalize, downsample_area,
    make_lr_pair, make_pairs, make_pairs_with, normalize, salt_pepper_count, upscale_nn,
    DegradationSpec, ImageDataset, LrHrPair,
};
pub use synth::{synth_dataset, SYNTH_MAX_CLASSES};
