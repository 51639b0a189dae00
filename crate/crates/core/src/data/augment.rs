//! Random crops with flip and quarter-turn augmentation.

use lshr_tensor::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImagePatch;
use crate::error::Result;

/// Mirrors every plane left to right.
pub fn flip_horizontal<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4()?;
    Ok(Tensor::from_fn([b, c, h, w], |i| {
        let (plane, y, col) = (i / (h * w), (i / w) % h, i % w);
        x.data()[plane * h * w + y * w + (w - 1 - col)]
    }))
}

/// Rotates every plane by `quarter_turns * 90` degrees counter-clockwise.
pub fn rotate90<T: Real>(x: &Tensor<T>, quarter_turns: usize) -> Result<Tensor<T>> {
    let mut out = x.clone();
    for _ in 0..quarter_turns % 4 {
        let [b, c, h, w] = out.dims4()?;
        let src = out;
        // new extent is w x h; new(y, x) = old(x, w - 1 - y)
        out = Tensor::from_fn([b, c, w, h], |i| {
            let (plane, y, col) = (i / (h * w), (i / h) % w, i % h);
            src.data()[plane * h * w + col * w + (w - 1 - y)]
        });
    }
    Ok(out)
}

fn crop<T: Real>(x: &Tensor<T>, top: usize, left: usize, size: usize) -> Result<Tensor<T>> {
    let [_, _, _, w] = x.dims4()?;
    Ok(Tensor::from_fn([1, 1, size, size], |i| {
        x.data()[(top + i / size) * w + left + i % size]
    }))
}

/// `count` random `size x size` crops of `image`, each flipped
/// horizontally with probability 0.5 and turned by a random multiple of
/// 90 degrees. Returns `None`, with a warning, when the image is smaller
/// than `size`.
pub fn crop_and_augment<T: Real>(
    image: &ImagePatch<T>,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Option<Vec<ImagePatch<T>>>> {
    let (h, w) = (image.height(), image.width());
    if size == 0 || h < size || w < size {
        log::warn!("skipping {} ({h}x{w}) smaller than the {size}x{size} crop", image.source_id);
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let top = rng.gen_range(0..=h - size);
        let left = rng.gen_range(0..=w - size);
        let mut p = crop(&image.pixels, top, left, size)?;
        if rng.gen_bool(0.5) {
            p = flip_horizontal(&p)?;
        }
        p = rotate90(&p, rng.gen_range(0..4))?;
        out.push(ImagePatch {
            pixels: p,
            source_id: image.source_id.clone(),
            crop_offset: (image.crop_offset.0 + top, image.crop_offset.1 + left),
        });
    }
    Ok(Some(out))
}

/// Crops every image, seeding each from `seed` and its position. Returns
/// the patches and the number of images skipped as too small.
pub fn prepare_patches<T: Real>(
    images: &[ImagePatch<T>],
    count: usize,
    size: usize,
    seed: u64,
) -> Result<(Vec<ImagePatch<T>>, usize)> {
    let mut patches = Vec::new();
    let mut skipped = 0;
    for (i, image) in images.iter().enumerate() {
        let s = seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        match crop_and_augment(image, count, size, s)? {
            Some(p) => patches.extend(p),
            None => skipped += 1,
        }
    }
    Ok((patches, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImagePatch<f64> {
        ImagePatch {
            pixels: Tensor::from_fn([1, 1, h, w], |i| i as f64 / (h * w) as f64),
            source_id: "ramp".into(),
            crop_offset: (0, 0),
        }
    }

    #[test]
    fn rotation_and_flip_definitions() {
        let x = Tensor::<f64>::new([1, 1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(flip_horizontal(&x).unwrap().data(), &[3., 2., 1., 6., 5., 4.]);
        let r = rotate90(&x, 1).unwrap();
        assert_eq!(r.shape(), &[1, 1, 3, 2]);
        assert_eq!(r.data(), &[3., 6., 2., 5., 1., 4.]);
        assert_eq!(rotate90(&x, 4).unwrap(), x);
        assert_eq!(rotate90(&rotate90(&x, 3).unwrap(), 1).unwrap(), x);
    }

    #[test]
    fn crops_are_deterministic_and_sized() {
        let img = ramp(64, 48);
        let a = crop_and_augment(&img, 50, 16, 3).unwrap().unwrap();
        assert_eq!(a.len(), 50);
        assert!(a.iter().all(|p| p.pixels.shape() == [1, 1, 16, 16]));
        assert_eq!(a, crop_and_augment(&img, 50, 16, 3).unwrap().unwrap());
        let sums: Vec<f64> = a.iter().map(|p| p.pixels.sum()).collect();
        assert!(sums.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn full_size_crop_is_a_transform_of_the_image() {
        let img = ramp(8, 8);
        let p = &crop_and_augment(&img, 1, 8, 0).unwrap().unwrap()[0];
        let mut got: Vec<f64> = p.pixels.data().to_vec();
        let mut want: Vec<f64> = img.pixels.data().to_vec();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want);
        assert_eq!(p.crop_offset, (0, 0));
    }

    #[test]
    fn small_images_are_skipped() {
        let (patches, skipped) = prepare_patches(&[ramp(8, 8), ramp(32, 32)], 2, 16, 0).unwrap();
        assert_eq!((patches.len(), skipped), (2, 1));
    }
}
