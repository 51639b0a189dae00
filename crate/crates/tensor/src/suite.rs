//! Finite-difference checks over random instances of every differentiable
//! tape operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv2d, transposed_conv2d, ConvSpec};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of one op on one random instance.
#[derive(Clone, Debug)]
pub struct OpTrial {
    pub op: &'static str,
    pub trial: usize,
    pub report: GradCheckReport,
}

fn random<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(rng.gen_range(-1.0..1.0)))
}

/// `sum(op(inputs) * weights)` so every output element contributes with a
/// distinct random weight.
fn weighted<T: Real>(tape: &mut Tape<T>, y: Var, weights: &Tensor<T>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type OpCase<T> = (Vec<Tensor<T>>, Box<dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>>);

/// One random instance of every differentiable op.
fn op_cases<T: Real>(rng: &mut ChaCha8Rng) -> Vec<(&'static str, OpCase<T>)> {
    let mut cases: Vec<(&'static str, OpCase<T>)> = Vec::new();

    let spec = ConvSpec { stride: rng.gen_range(1..3), padding: rng.gen_range(0..2) };
    let x = random::<T>(rng, &[2, 2, 5, 5]);
    let k = random::<T>(rng, &[3, 2, 3, 3]);
    let b = random::<T>(rng, &[3]);
    let out = conv2d(&x, &k, Some(&b), spec).unwrap();
    let wts = random::<T>(rng, out.shape());
    cases.push((
        "conv2d",
        (vec![x, k, b], Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), spec)?;
            weighted(t, y, &wts)
        })),
    ));

    let stride = rng.gen_range(1..4);
    let x = random::<T>(rng, &[2, 3, 2, 3]);
    let k = random::<T>(rng, &[3, 2, 3, 3]);
    let b = random::<T>(rng, &[2]);
    let out = transposed_conv2d(&x, &k, Some(&b), stride).unwrap();
    let wts = random::<T>(rng, out.shape());
    cases.push((
        "transposed_conv2d",
        (vec![x, k, b], Box::new(move |t, v| {
            let y = t.transposed_conv2d(v[0], v[1], Some(v[2]), stride)?;
            weighted(t, y, &wts)
        })),
    ));

    // Keep inputs away from the kink so the difference quotient is smooth.
    let x = Tensor::<T>::from_fn([2, 3, 4], |_| {
        let m: f64 = rng.gen_range(0.1..1.0);
        T::from_f64_lossy(if rng.gen_bool(0.5) { m } else { -m })
    });
    let wts = random::<T>(rng, &[2, 3, 4]);
    cases.push((
        "leaky_relu",
        (vec![x], Box::new(move |t, v| {
            let y = t.leaky_relu(v[0], T::from_f64_lossy(0.2))?;
            weighted(t, y, &wts)
        })),
    ));

    let x = random::<T>(rng, &[1, 8, 2, 3]);
    let wts = random::<T>(rng, &[1, 2, 4, 6]);
    cases.push((
        "pixel_shuffle",
        (vec![x], Box::new(move |t, v| {
            let y = t.pixel_shuffle(v[0], 2)?;
            weighted(t, y, &wts)
        })),
    ));

    let x = random::<T>(rng, &[1, 2, 4, 6]);
    let wts = random::<T>(rng, &[1, 8, 2, 3]);
    cases.push((
        "pixel_unshuffle",
        (vec![x], Box::new(move |t, v| {
            let y = t.pixel_unshuffle(v[0], 2)?;
            weighted(t, y, &wts)
        })),
    ));

    let x = random::<T>(rng, &[2, 5]);
    cases.push((
        "square_sum",
        (vec![x], Box::new(|t, v| {
            let y = t.mul(v[0], v[0])?;
            t.sum(y)
        })),
    ));

    let a = random::<T>(rng, &[3, 2, 2, 2]);
    let b = random::<T>(rng, &[1, 2, 2, 2]);
    let wts = random::<T>(rng, &[3, 2, 2, 2]);
    let wts2 = wts.clone();
    cases.push((
        "add_broadcast",
        (vec![a.clone(), b.clone()], Box::new(move |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted(t, y, &wts)
        })),
    ));
    cases.push((
        "subtract_scale",
        (vec![a, b], Box::new(move |t, v| {
            let y = t.sub(v[0], v[1])?;
            let y = t.scale(y, T::from_f64_lossy(1.7))?;
            weighted(t, y, &wts2)
        })),
    ));

    let a = random::<T>(rng, &[4, 3]);
    let b = random::<T>(rng, &[4, 3]);
    cases.push((
        "multiply_mean",
        (vec![a, b], Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            t.mean(y)
        })),
    ));

    let u = random::<T>(rng, &[3, 5]);
    let wts = random::<T>(rng, &[3, 5]);
    cases.push((
        "charbonnier",
        (vec![u], Box::new(move |t, v| {
            let y = t.charbonnier(v[0], T::from_f64_lossy(1e-2))?;
            weighted(t, y, &wts)
        })),
    ));
    cases
}

/// Checks every op on `trials` random instances drawn from `seed`.
pub fn op_suite<T: Real>(seed: u64, trials: usize, eps: f64, tolerance: f64) -> Result<Vec<OpTrial>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for trial in 0..trials {
        for (op, (inputs, f)) in op_cases::<T>(&mut rng) {
            let report = grad_check(|t, v| f(t, v), &inputs, eps, tolerance)?;
            out.push(OpTrial { op, trial, report });
        }
    }
    Ok(out)
}
