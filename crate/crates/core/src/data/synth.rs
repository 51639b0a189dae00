//! Procedural handwritten-digit-like images.
//!
//! Each digit is a set of polylines in the unit square. A sample applies a
//! random affine jitter, a random stroke width and intensity, and renders
//! the strokes with an anti-aliased distance falloff on a black
//! background.

use std::f64::consts::PI;

use lshr_tensor::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Stroke {
    let n = 24;
    (0..=n)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / n as f64) * PI / 180.0;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn glyph(digit: usize) -> Vec<Stroke> {
    match digit % 10 {
        0 => vec![arc(0.5, 0.5, 0.28, 0.4, 0.0, 360.0)],
        1 => vec![vec![(0.35, 0.22), (0.52, 0.1), (0.52, 0.9)]],
        2 => {
            let mut s = arc(0.5, 0.32, 0.27, 0.22, 180.0, 405.0);
            s.extend([(0.22, 0.9), (0.8, 0.9)]);
            vec![s]
        }
        3 => vec![arc(0.48, 0.3, 0.25, 0.2, 200.0, 450.0), arc(0.48, 0.7, 0.28, 0.2, 270.0, 520.0)],
        4 => vec![vec![(0.65, 0.9), (0.65, 0.1), (0.2, 0.65), (0.82, 0.65)]],
        5 => {
            let mut s = vec![(0.75, 0.1), (0.3, 0.1), (0.29, 0.49)];
            s.extend(arc(0.48, 0.65, 0.27, 0.23, 225.0, 520.0));
            vec![s]
        }
        6 => vec![
            arc(0.5, 0.65, 0.26, 0.25, 0.0, 360.0),
            vec![(0.7, 0.12), (0.4, 0.3), (0.25, 0.62)],
        ],
        7 => vec![vec![(0.2, 0.1), (0.8, 0.1), (0.42, 0.9)]],
        8 => vec![arc(0.5, 0.3, 0.22, 0.2, 0.0, 360.0), arc(0.5, 0.7, 0.27, 0.2, 0.0, 360.0)],
        _ => vec![
            arc(0.5, 0.35, 0.25, 0.25, 0.0, 360.0),
            vec![(0.75, 0.35), (0.7, 0.6), (0.55, 0.9)],
        ],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// One `[1, 1, size, size]` rendering of `digit`.
pub fn render_digit<T: Real>(digit: usize, size: usize, rng: &mut impl Rng) -> Tensor<T> {
    let s = size as f64;
    let scale = s * 0.62 * rng.gen_range(0.8..1.05);
    let aspect = rng.gen_range(0.8..1.1);
    let angle = rng.gen_range(-0.25..0.25);
    let shear = rng.gen_range(-0.25..0.25);
    let (tx, ty) = (rng.gen_range(-0.08..0.08) * s, rng.gen_range(-0.08..0.08) * s);
    let width = s * rng.gen_range(0.05..0.1);
    let ink = rng.gen_range(0.75..1.0);
    let (sin, cos) = f64::sin_cos(angle);
    let place = |(u, v): (f64, f64)| {
        let (x, y) = ((u - 0.5 + shear * (v - 0.5)) * scale * aspect, (v - 0.5) * scale);
        (cos * x - sin * y + s / 2.0 + tx, sin * x + cos * y + s / 2.0 + ty)
    };
    let strokes: Vec<Stroke> = glyph(digit)
        .into_iter()
        .map(|st| st.into_iter().map(place).collect())
        .collect();
    Tensor::from_fn([1, 1, size, size], |i| {
        let p = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
        let d = strokes
            .iter()
            .flat_map(|st| st.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
            .fold(f64::INFINITY, f64::min);
        // one-pixel linear falloff at the stroke edge
        T::from_f64_lossy(ink * (width / 2.0 - d + 0.5).clamp(0.0, 1.0))
    })
}

/// `count` digits cycling through 0..9, deterministic for a seed.
pub fn synthetic_digits<T: Real>(count: usize, size: usize, seed: u64) -> Vec<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| render_digit(i % 10, size, &mut rng)).collect()
}
