//! Image ingestion, patch preparation, resampling and DCT sparsification.

pub mod archive;
pub mod augment;
pub mod dct;
pub mod image_io;
pub mod resample;
pub mod synth;

use lshr_tensor::{Real, Tensor};

/// A grayscale image or crop with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePatch<T: Real = f32> {
    /// `[1, 1, H, W]`.
    pub pixels: Tensor<T>,
    pub source_id: String,
    /// `(row, col)` of the crop's top-left corner in the source image.
    pub crop_offset: (usize, usize),
}

impl<T: Real> ImagePatch<T> {
    pub fn height(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[3]
    }
}

/// Splits `images` into training and held-out parts. The last
/// `round(fraction * len)` items are held out.
pub fn split_holdout<T: Clone>(images: &[T], fraction: f64) -> (Vec<T>, Vec<T>) {
    let held = ((images.len() as f64 * fraction).round() as usize).min(images.len());
    let (a, b) = images.split_at(images.len() - held);
    (a.to_vec(), b.to_vec())
}
