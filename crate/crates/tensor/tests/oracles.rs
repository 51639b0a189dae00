//! Convolution, shuffle and gradient checks against independent loop
//! references and finite differences.

use lshr_tensor::{
    conv2d, grad_check, op_suite, pixel_shuffle, pixel_unshuffle, transposed_conv2d, ConvSpec, Real, Tape,
    Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(rng.gen_range(-1.0..1.0)))
}

/// Direct quadruple loop over output positions and kernel taps.
fn conv_loop(x: &Tensor<f64>, k: &Tensor<f64>, bias: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let [b, cin, h, w] = x.dims4().unwrap();
    let [cout, _, kk, _] = k.dims4().unwrap();
    let ho = (h + 2 * pad - kk) / stride + 1;
    let wo = (w + 2 * pad - kk) / stride + 1;
    let mut out = vec![0.0; b * cout * ho * wo];
    for bi in 0..b {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |t| t.data()[co]);
                    for ci in 0..cin {
                        for ky in 0..kk {
                            for kx in 0..kk {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.at4(bi, ci, iy as usize, ix as usize) * k.at4(co, ci, ky, kx);
                            }
                        }
                    }
                    out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new([b, cout, ho, wo], out).unwrap()
}

/// Scatter form of the transposed convolution.
fn transposed_loop(x: &Tensor<f64>, k: &Tensor<f64>, bias: Option<&Tensor<f64>>, stride: usize) -> Tensor<f64> {
    let [b, cin, h, w] = x.dims4().unwrap();
    let [_, cout, kk, _] = k.dims4().unwrap();
    let (oh, ow) = ((h - 1) * stride + kk, (w - 1) * stride + kk);
    let mut out = vec![0.0; b * cout * oh * ow];
    for bi in 0..b {
        for co in 0..cout {
            for v in &mut out[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow] {
                *v = bias.map_or(0.0, |t| t.data()[co]);
            }
        }
        for ci in 0..cin {
            for y in 0..h {
                for xx in 0..w {
                    let v = x.at4(bi, ci, y, xx);
                    for co in 0..cout {
                        for ky in 0..kk {
                            for kx in 0..kk {
                                out[((bi * cout + co) * oh + y * stride + ky) * ow + xx * stride + kx] +=
                                    v * k.at4(ci, co, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new([b, cout, oh, ow], out).unwrap()
}

#[test]
fn conv2d_matches_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random::<f64>(&mut rng, &[1, 1, 6, 6]);
    let k = random::<f64>(&mut rng, &[2, 1, 3, 3]);
    let fast = conv2d(&x, &k, None, ConvSpec::valid(3)).unwrap();
    let slow = conv_loop(&x, &k, None, 3, 0);
    assert_eq!(fast.shape(), &[1, 2, 2, 2]);
    assert!(fast.max_abs_diff(&slow).unwrap() < 1e-6);

    for trial in 0..10 {
        let (cin, cout, k_side) = (1 + trial % 3, 1 + trial % 4, 1 + trial % 3);
        let stride = 1 + trial % 2;
        let pad = trial % 2;
        let x = random::<f64>(&mut rng, &[2, cin, 5 + trial % 3, 6]);
        let k = random::<f64>(&mut rng, &[cout, cin, k_side, k_side]);
        let bias = random::<f64>(&mut rng, &[cout]);
        let spec = ConvSpec { stride, padding: pad };
        let fast = conv2d(&x, &k, Some(&bias), spec).unwrap();
        let slow = conv_loop(&x, &k, Some(&bias), stride, pad);
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12, "trial {trial}");
    }
}

#[test]
fn transposed_conv2d_matches_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..10 {
        let (cin, cout, k_side, stride) = (1 + trial % 4, 1 + trial % 2, 2 + trial % 3, 1 + trial % 3);
        let x = random::<f64>(&mut rng, &[2, cin, 3, 2 + trial % 2]);
        let k = random::<f64>(&mut rng, &[cin, cout, k_side, k_side]);
        let bias = random::<f64>(&mut rng, &[cout]);
        let fast = transposed_conv2d(&x, &k, Some(&bias), stride).unwrap();
        let slow = transposed_loop(&x, &k, Some(&bias), stride);
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12, "trial {trial}");
    }
}

#[test]
fn single_precision_conv_tracks_double_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random::<f64>(&mut rng, &[1, 3, 8, 8]);
    let k = random::<f64>(&mut rng, &[4, 3, 3, 3]);
    let fast = conv2d(&x.cast::<f32>(), &k.cast::<f32>(), None, ConvSpec::same(1)).unwrap();
    let slow = conv_loop(&x, &k, None, 1, 1);
    assert!(fast.cast::<f64>().max_abs_diff(&slow).unwrap() < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_and_transposed_conv_are_adjoint(
        seed in any::<u64>(),
        cin in 1usize..4,
        cout in 1usize..4,
        k_side in 1usize..5,
        stride in 1usize..4,
        gh in 1usize..4,
        gw in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = ((gh - 1) * stride + k_side, (gw - 1) * stride + k_side);
        let x = random::<f64>(&mut rng, &[2, cin, h, w]);
        let k = random::<f64>(&mut rng, &[cout, cin, k_side, k_side]);
        let y = random::<f64>(&mut rng, &[2, cout, gh, gw]);
        let lhs = conv2d(&x, &k, None, ConvSpec::valid(stride)).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&transposed_conv2d(&y, &k, None, stride).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-5, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn pixel_shuffle_round_trip_is_exact(
        seed in any::<u64>(),
        s in 1usize..4,
        c in 1usize..3,
        h in 1usize..5,
        w in 1usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random::<f32>(&mut rng, &[2, c * s * s, h, w]);
        let shuffled = pixel_shuffle(&t, s).unwrap();
        prop_assert_eq!(shuffled.shape(), &[2, c, h * s, w * s]);
        prop_assert_eq!(pixel_unshuffle(&shuffled, s).unwrap(), t.clone());
        let img = random::<f32>(&mut rng, &[1, c, h * s, w * s]);
        prop_assert_eq!(pixel_shuffle(&pixel_unshuffle(&img, s).unwrap(), s).unwrap(), img);
    }
}

#[test]
fn elementwise_ops_match_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random::<f64>(&mut rng, &[3, 2, 4, 4]);
    let b = random::<f64>(&mut rng, &[3, 2, 4, 4]);
    let row = random::<f64>(&mut rng, &[1, 2, 4, 4]);
    let mut tape = Tape::<f64>::new();
    let (va, vb, vr) = (tape.constant(a.clone()), tape.constant(b.clone()), tape.constant(row.clone()));
    let sum = tape.add(va, vb).unwrap();
    let diff = tape.sub(va, vb).unwrap();
    let bsum = tape.add(va, vr).unwrap();
    let scaled = tape.scale(va, -0.75).unwrap();
    let per = row.len();
    for i in 0..a.len() {
        let (x, y) = (a.data()[i], b.data()[i]);
        assert!((tape.value(sum).data()[i] - (x + y)).abs() < 1e-7);
        assert!((tape.value(diff).data()[i] - (x - y)).abs() < 1e-7);
        assert!((tape.value(bsum).data()[i] - (x + row.data()[i % per])).abs() < 1e-7);
        assert!((tape.value(scaled).data()[i] + 0.75 * x).abs() < 1e-7);
    }
    let zeros = tape.constant(Tensor::zeros([3, 2, 4, 4]));
    let same = tape.add(va, zeros).unwrap();
    assert_eq!(tape.value(same), &a);
    let none = tape.sub(va, va).unwrap();
    assert_eq!(tape.value(none), &Tensor::zeros([3, 2, 4, 4]));
}

#[test]
fn gradient_suite_double_precision() {
    let trials = op_suite::<f64>(5, 20, 1e-6, 1e-5).unwrap();
    assert_eq!(trials.len(), 20 * 10);
    for t in &trials {
        assert!(t.report.passed(), "{} trial {}: {:?}", t.op, t.trial, t.report);
    }
}

#[test]
fn gradient_suite_single_precision() {
    for t in op_suite::<f32>(6, 20, 3e-3, 1e-3).unwrap() {
        assert!(t.report.passed(), "{} trial {}: {:?}", t.op, t.trial, t.report);
    }
}

#[test]
fn conv_then_transposed_composite_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random::<f64>(&mut rng, &[1, 1, 8, 8]);
    let k1 = random::<f64>(&mut rng, &[3, 1, 4, 4]);
    let k2 = random::<f64>(&mut rng, &[3, 1, 4, 4]);
    let target = random::<f64>(&mut rng, &[1, 1, 8, 8]);
    let report = grad_check(
        |t, v| {
            let m = t.conv2d(v[0], v[1], None, ConvSpec::valid(4))?;
            let r = t.transposed_conv2d(m, v[2], None, 4)?;
            let tgt = t.constant(target.clone());
            let d = t.sub(r, tgt)?;
            let c = t.charbonnier(d, 1e-3)?;
            t.mean(c)
        },
        &[x, k1, k2],
        1e-6,
        1e-5,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn reused_parameter_gradient_equals_unrolled_copies() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random::<f64>(&mut rng, &[2, 3, 5, 5]);
    let w = random::<f64>(&mut rng, &[3, 3, 3, 3]);
    let n = 4;

    let mut tied = Tape::<f64>::new();
    let wv = tied.param(w.clone());
    let mut h = tied.constant(x.clone());
    for _ in 0..n {
        h = tied.leaky_relu(h, 0.2).unwrap();
        h = tied.conv2d(h, wv, None, ConvSpec::same(1)).unwrap();
    }
    let loss = tied.mean(h).unwrap();
    let tied_grad = tied.backward(loss).unwrap().get(wv).unwrap().clone();

    let mut untied = Tape::<f64>::new();
    let copies: Vec<Var> = (0..n).map(|_| untied.param(w.clone())).collect();
    let mut h = untied.constant(x);
    for &c in &copies {
        h = untied.leaky_relu(h, 0.2).unwrap();
        h = untied.conv2d(h, c, None, ConvSpec::same(1)).unwrap();
    }
    let loss2 = untied.mean(h).unwrap();
    assert_eq!(tied.value(loss), untied.value(loss2));
    let grads = untied.backward(loss2).unwrap();
    let mut total = Tensor::<f64>::zeros(w.shape().to_vec());
    for &c in &copies {
        total.add_assign(grads.get(c).unwrap()).unwrap();
    }
    assert!(tied_grad.max_abs_diff(&total).unwrap() < 1e-6);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random::<f32>(&mut rng, &[4, 2, 9, 9]);
        let k = random::<f32>(&mut rng, &[5, 2, 3, 3]);
        conv2d(&x, &k, None, ConvSpec::same(1)).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
