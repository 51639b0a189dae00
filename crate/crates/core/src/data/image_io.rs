//! Reading and writing 8-bit grayscale images.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, Luma};
use lshr_tensor::{Real, Tensor};

use crate::data::ImagePatch;
use crate::error::{LshrError, Result};
use crate::io::write_atomic;

const EXTENSIONS: [&str; 5] = ["png", "pgm", "pbm", "ppm", "bmp"];

/// Loads an image as luminance in `[0, 1]`. Colour sources are reduced with
/// the BT.601 weights `0.299 R + 0.587 G + 0.114 B`.
pub fn load_grayscale<T: Real>(path: &Path) -> Result<ImagePatch<T>> {
    let bytes = std::fs::read(path).map_err(|e| LshrError::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| LshrError::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<T> = if img.color().has_color() {
        img.to_rgb32f()
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0.map(f64::from);
                T::from_f64_lossy((0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0))
            })
            .collect()
    } else {
        to_unit_luma(&img)
    };
    Ok(ImagePatch {
        pixels: Tensor::new([1, 1, h, w], data)?,
        source_id: path.display().to_string(),
        crop_offset: (0, 0),
    })
}

fn to_unit_luma<T: Real>(img: &DynamicImage) -> Vec<T> {
    match img {
        DynamicImage::ImageLuma8(g) => g.pixels().map(|p| T::from_f64_lossy(p.0[0] as f64 / 255.0)).collect(),
        _ => img
            .to_luma16()
            .pixels()
            .map(|p| T::from_f64_lossy(p.0[0] as f64 / 65535.0))
            .collect(),
    }
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| LshrError::io(dir, e))? {
        let path = entry.map_err(|e| LshrError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_dir<T: Real>(dir: &Path) -> Result<Vec<ImagePatch<T>>> {
    list_images(dir)?.iter().map(|p| load_grayscale(p)).collect()
}

/// Encodes plane `(0, 0)` of `image` as an 8-bit PNG, clamping to `[0, 1]`.
pub fn encode_png<T: Real>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let [_, _, h, w] = image.dims4()?;
    let buf = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = image.data()[y as usize * w + x as usize].as_f64();
        Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| LshrError::Format(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_png<T: Real>(path: &Path, image: &Tensor<T>) -> Result<()> {
    write_atomic(path, &encode_png(image)?)
}
