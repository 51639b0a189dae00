mod common;

use common::random_image;
use lshr_core::data::archive::{load_patches, save_patches};
use lshr_core::data::augment::{crop_and_augment, flip_horizontal, prepare_patches, rotate90};
use lshr_core::data::dct::{dct2, idct2, sparsify_dct};
use lshr_core::data::image_io::{list_images, load_dir, load_grayscale, save_png};
use lshr_core::data::resample::{bicubic_resize, downscale};
use lshr_core::data::ImagePatch;
use lshr_tensor::Tensor;

/// Catmull-Rom weight written out separately from the library.
fn keys(x: f64) -> f64 {
    let x = x.abs();
    match x {
        x if x < 1.0 => 1.5 * x.powi(3) - 2.5 * x.powi(2) + 1.0,
        x if x < 2.0 => -0.5 * x.powi(3) + 2.5 * x.powi(2) - 4.0 * x + 2.0,
        _ => 0.0,
    }
}

fn direct_resize(img: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let [_, _, h, w] = img.dims4().unwrap();
    Tensor::from_fn([1, 1, oh, ow], |i| {
        let (oy, ox) = (i / ow, i % ow);
        let sy = (oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5;
        let sx = (ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5;
        let mut acc = 0.0;
        for ty in (sy.floor() as i64 - 1)..=(sy.floor() as i64 + 2) {
            for tx in (sx.floor() as i64 - 1)..=(sx.floor() as i64 + 2) {
                let (cy, cx) = (ty.clamp(0, h as i64 - 1) as usize, tx.clamp(0, w as i64 - 1) as usize);
                acc += keys(ty as f64 - sy) * keys(tx as f64 - sx) * img.at4(0, 0, cy, cx);
            }
        }
        acc
    })
}

#[test]
fn bicubic_ramp_matches_direct_oracle() {
    let ramp = Tensor::<f64>::from_fn([1, 1, 12, 16], |i| 0.02 * (i / 16) as f64 + 0.01 * (i % 16) as f64);
    for (oh, ow) in [(6, 8), (3, 4), (24, 32), (7, 9)] {
        let got = bicubic_resize(&ramp, oh, ow).unwrap();
        assert!(got.max_abs_diff(&direct_resize(&ramp, oh, ow)).unwrap() < 1e-5, "{oh}x{ow}");
    }
    // away from the clamped border a linear ramp is reproduced exactly
    let half = bicubic_resize(&ramp, 6, 8).unwrap();
    for oy in 1..5 {
        for ox in 1..7 {
            let (sy, sx) = (2.0 * oy as f64 + 0.5, 2.0 * ox as f64 + 0.5);
            assert!((half.at4(0, 0, oy, ox) - (0.02 * sy + 0.01 * sx)).abs() < 1e-12);
        }
    }
}

#[test]
fn bicubic_constants_and_identity() {
    let c = Tensor::<f64>::full([1, 1, 10, 6], 0.37);
    let r = bicubic_resize(&c, 7, 13).unwrap();
    assert!(r.data().iter().all(|v| (v - 0.37).abs() < 1e-6));
    let x = random_image::<f64>([1, 1, 9, 9], 1);
    assert!(bicubic_resize(&x, 9, 9).unwrap().max_abs_diff(&x).unwrap() < 1e-6);
    let spiky = Tensor::<f64>::from_fn([1, 1, 16, 16], |i| if (i / 16 + i % 16) % 2 == 0 { 1.0 } else { 0.0 });
    let d = downscale(&spiky, 2).unwrap();
    assert!(d.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

fn direct_dct(x: &[f64], n: usize) -> Vec<f64> {
    let a = |k: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    let c = |k: usize, i: usize| (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += x[i * n + j] * c(u, i) * c(v, j);
                }
            }
            out[u * n + v] = a(u) * a(v) * s;
        }
    }
    out
}

fn direct_idct(c: &[f64], n: usize) -> Vec<f64> {
    let a = |k: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    let b = |k: usize, i: usize| (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for u in 0..n {
                for v in 0..n {
                    s += a(u) * a(v) * c[u * n + v] * b(u, i) * b(v, j);
                }
            }
            out[i * n + j] = s;
        }
    }
    out
}

#[test]
fn dct_matches_direct_summation() {
    for pos in 0..16 {
        let x = Tensor::<f64>::from_fn([1, 1, 4, 4], |i| if i == pos { 1.0 } else { 0.0 });
        let want = direct_dct(x.data(), 4);
        let got = dct2(&x).unwrap();
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-8);
        }
    }
    let x = random_image::<f64>([1, 1, 8, 8], 2);
    let got = dct2(&x).unwrap();
    assert!(got.max_abs_diff(&Tensor::new([1, 1, 8, 8], direct_dct(x.data(), 8)).unwrap()).unwrap() < 1e-8);
    assert!(idct2(&got).unwrap().max_abs_diff(&x).unwrap() < 1e-6);
}

#[test]
fn sparsify_matches_sort_and_zero_oracle() {
    let n = 16;
    let x = random_image::<f64>([1, 1, n, n], 3);
    let mut coef = direct_dct(x.data(), n);
    let keep = (0.05f64 * (n * n) as f64).ceil() as usize;
    let mut mags: Vec<(f64, usize)> = coef.iter().enumerate().map(|(i, c)| (c.abs(), i)).collect();
    mags.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, i) in &mags[keep..] {
        coef[i] = 0.0;
    }
    let oracle: Vec<f64> = direct_idct(&coef, n).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let got = sparsify_dct(&x, 0.05).unwrap();
    assert!(got.max_abs_diff(&Tensor::new([1, 1, n, n], oracle).unwrap()).unwrap() < 1e-6);
    assert!(sparsify_dct(&x, 1.0).unwrap().max_abs_diff(&x).unwrap() < 1e-6);
    assert!(sparsify_dct(&x, 0.0).is_err());
    assert!(sparsify_dct(&x, 1.5).is_err());
}

#[test]
fn sparsification_error_shrinks_with_more_coefficients() {
    for seed in 0..4 {
        let x = random_image::<f64>([1, 1, 32, 32], 10 + seed);
        let mut last = f64::INFINITY;
        for f in [0.01, 0.05, 0.1, 0.2, 0.5, 1.0] {
            let d = sparsify_dct(&x, f).unwrap().zip_map(&x, |a, b| a - b).unwrap();
            let err = d.dot(&d).unwrap().sqrt();
            assert!(err <= last + 1e-12, "seed {seed} keep {f}: {err} > {last}");
            last = err;
        }
    }
}

#[test]
fn grayscale_loading() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.png");
    image::GrayImage::from_fn(3, 2, |x, _| image::Luma([if x == 0 { 0 } else { 255 }])).save(&g).unwrap();
    let p = load_grayscale::<f64>(&g).unwrap();
    assert_eq!(p.pixels.shape(), &[1, 1, 2, 3]);
    assert_eq!(p.pixels.data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);

    let c = dir.path().join("c.bmp");
    image::RgbImage::from_pixel(2, 2, image::Rgb([100, 100, 100])).save(&c).unwrap();
    let p = load_grayscale::<f64>(&c).unwrap();
    assert!(p.pixels.data().iter().all(|v| (v - 100.0 / 255.0).abs() < 1e-6));

    let m = dir.path().join("m.pgm");
    image::GrayImage::from_pixel(4, 4, image::Luma([51])).save(&m).unwrap();
    assert!(load_grayscale::<f32>(&m).unwrap().pixels.data().iter().all(|v| (v - 0.2).abs() < 1e-6));

    std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
    std::fs::write(dir.path().join("broken.png"), "not a png").unwrap();
    assert_eq!(list_images(dir.path()).unwrap().len(), 4);
    assert!(load_dir::<f32>(dir.path()).is_err());
    assert!(load_grayscale::<f32>(&dir.path().join("missing.png")).is_err());

    let out = dir.path().join("sub").join("round.png");
    std::fs::create_dir_all(out.parent().unwrap()).unwrap();
    let img = Tensor::<f64>::from_fn([1, 1, 4, 5], |i| (i * 13 % 256) as f64 / 255.0);
    save_png(&out, &img).unwrap();
    assert!(load_grayscale::<f64>(&out).unwrap().pixels.max_abs_diff(&img).unwrap() < 1e-9);
}

fn patch(h: usize, w: usize) -> ImagePatch<f32> {
    ImagePatch {
        pixels: Tensor::from_fn([1, 1, h, w], |i| (i % 251) as f32 / 250.0),
        source_id: format!("{h}x{w}"),
        crop_offset: (0, 0),
    }
}

#[test]
fn cropping_counts_sizes_and_determinism() {
    let big = patch(1024, 1024);
    let crops = crop_and_augment(&big, 50, 256, 9).unwrap().unwrap();
    assert_eq!(crops.len(), 50);
    assert!(crops.iter().all(|c| c.pixels.shape() == [1, 1, 256, 256]));
    assert_eq!(crops, crop_and_augment(&big, 50, 256, 9).unwrap().unwrap());

    let small = patch(8, 8);
    let whole = crop_and_augment(&small, 4, 8, 1).unwrap().unwrap();
    let mut variants = Vec::new();
    for flip in [false, true] {
        let base = if flip { flip_horizontal(&small.pixels).unwrap() } else { small.pixels.clone() };
        for q in 0..4 {
            variants.push(rotate90(&base, q).unwrap());
        }
    }
    for c in &whole {
        assert_eq!(c.crop_offset, (0, 0));
        assert!(variants.contains(&c.pixels));
    }
    assert!(crop_and_augment(&small, 4, 9, 1).unwrap().is_none());

    let (patches, skipped) = prepare_patches(&[big.clone(), small, patch(300, 260)], 3, 256, 4).unwrap();
    assert_eq!((patches.len(), skipped), (6, 1));
    assert_eq!(patches, prepare_patches(&[big, patch(8, 8), patch(300, 260)], 3, 256, 4).unwrap().0);
}

#[test]
fn patch_archive_round_trip() {
    let (patches, _) = prepare_patches(&[patch(40, 36)], 5, 32, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    save_patches(&path, &patches).unwrap();
    assert_eq!(load_patches::<f32>(&path).unwrap(), patches);
    assert!(load_patches::<f64>(&path).is_err());
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[30] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(load_patches::<f32>(&path).is_err());
}
