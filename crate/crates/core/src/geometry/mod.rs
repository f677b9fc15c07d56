//! Geometric toolkit for training-pair generation: minutia-aligned patch
//! extraction, robust affine estimation, farthest point sampling and mask
//! erosion.

mod align;
mod fps;
mod morph;
mod ransac;

pub use align::{align_to_minutia, patch_frame, Patch, BACKGROUND, DEFAULT_PATCH_SIZE};
pub use fps::farthest_point_sampling;
pub use morph::{erode_mask, squared_distance_to_background};
pub use ransac::{estimate_affine_ransac, fit_affine_least_squares, RansacConfig, RansacFit};
