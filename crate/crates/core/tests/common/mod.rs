#![allow(dead_code)]

use lshr_core::network::{
    build_forward, build_unrolled, build_with_vars, BlockWeights, GraphInput, ModelParams, NetworkConfig, ParamId,
    ParamVars,
};
use lshr_core::sensing::PatternMode;
use lshr_core::training::{loss_on_tape, TrainConfig};
use lshr_tensor::{grad_check, GradCheckReport, Real, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image<T: Real>(shape: [usize; 4], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(0.0..1.0)))
}

pub fn random_tensor<T: Real>(shape: &[usize], seed: u64, scale: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(rng.gen_range(-scale..scale)))
}

pub fn small_network(blocks: usize) -> NetworkConfig {
    NetworkConfig {
        channels: 4,
        blocks,
        ratio: 4.0 / 256.0,
        ..NetworkConfig::default()
    }
}

/// Parameters with every tensor randomized, so no gradient is trivially
/// zero.
pub fn randomized_params<T: Real>(net: &NetworkConfig, seed: u64) -> ModelParams<T> {
    let mut params = ModelParams::<T>::init(net, seed).unwrap();
    for (i, id) in params.ids().into_iter().enumerate() {
        if id == ParamId::Shadow {
            continue;
        }
        let t = params.get_mut(id).unwrap();
        let scale = if id == ParamId::ReconKernels { 2.0 } else { 0.4 };
        *t = random_tensor(t.shape(), seed * 100 + i as u64, scale);
    }
    params
}

/// The full model plus loss on a 1x1x32x32 input, with the sensing kernel
/// entering as its binary values, since the binarized forward pass is
/// piecewise constant in the shadow weights.
pub struct EndToEnd<T: Real> {
    net: NetworkConfig,
    image: Tensor<T>,
    ids: Vec<ParamId>,
    pub inputs: Vec<Tensor<T>>,
}

impl<T: Real> EndToEnd<T> {
    pub fn new(seed: u64) -> Self {
        let net = small_network(6);
        let params = randomized_params::<T>(&net, seed);
        let image = random_image::<T>([1, 1, 32, 32], seed + 7);
        let ids: Vec<ParamId> = params.ids().into_iter().filter(|&id| id != ParamId::Shadow).collect();
        let mut inputs = vec![params.bank.binarized()];
        inputs.extend(ids.iter().map(|&id| params.get(id).unwrap().clone()));
        EndToEnd { net, image, ids, inputs }
    }

    pub fn cast<U: Real>(&self) -> EndToEnd<U> {
        EndToEnd {
            net: self.net.clone(),
            image: self.image.cast(),
            ids: self.ids.clone(),
            inputs: self.inputs.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn record(&self, tape: &mut Tape<T>, vars: &[Var]) -> lshr_tensor::Result<Var> {
        let to_err = |e: lshr_core::LshrError| TensorError::Usage(e.to_string());
        let entries = self.ids.iter().copied().zip(vars[1..].iter().copied()).collect();
        let g = build_with_vars(tape, GraphInput::Image(&self.image), &self.net, vars[0], ParamVars::from_entries(entries))
            .map_err(to_err)?;
        let gt = tape.constant(self.image.clone());
        let l = loss_on_tape(tape, [g.preliminary, g.output], [g.lowres.unwrap(), gt], &vars[1..], &TrainConfig::default())
            .map_err(to_err)?;
        Ok(l.total)
    }

    fn value(&self, inputs: &[Tensor<T>]) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = self.record(&mut tape, &vars).unwrap();
        tape.value(out).item().unwrap().as_f64()
    }

    pub fn analytic(&self) -> Vec<Tensor<T>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = self.record(&mut tape, &vars).unwrap();
        let grads = tape.backward(out).unwrap();
        vars.iter().map(|&v| grads.get(v).unwrap().clone()).collect()
    }
}

/// Double-precision analytic gradients against double-precision central
/// differences.
pub fn end_to_end_grad_check(seed: u64) -> GradCheckReport {
    let e = EndToEnd::<f64>::new(seed);
    grad_check(|tape, vars| e.record(tape, vars), &e.inputs, 1e-6, 1e-5).unwrap()
}

/// Max relative error, per input, of the single-precision analytic
/// gradients against central differences of the same model. The
/// differences are taken in double precision at the single-precision point;
/// in single precision their rounding error alone exceeds the tolerance.
pub fn single_precision_errors(seed: u64) -> Vec<f64> {
    let e32 = EndToEnd::<f32>::new(seed);
    let analytic = e32.analytic();
    let e64 = e32.cast::<f64>();
    let mut probe = e64.inputs.clone();
    let eps = 1e-6;
    analytic
        .iter()
        .enumerate()
        .map(|(which, grad)| {
            let (mut worst, mut scale) = (0.0f64, 0.0f64);
            for (j, &a) in grad.data().iter().enumerate() {
                let orig = probe[which].data()[j];
                probe[which].data_mut()[j] = orig + eps;
                let plus = e64.value(&probe);
                probe[which].data_mut()[j] = orig - eps;
                let minus = e64.value(&probe);
                probe[which].data_mut()[j] = orig;
                let n = (plus - minus) / (2.0 * eps);
                scale = scale.max(n.abs()).max(a.abs() as f64);
                worst = worst.max((a as f64 - n).abs());
            }
            if scale > 0.0 { worst / scale } else { worst }
        })
        .collect()
}

pub struct SharingCheck {
    pub forward_diff: f64,
    pub w1_grad_diff: f64,
    pub w2_grad_diff: f64,
    pub block_tensors: usize,
}

/// Recursive model vs `blocks` untied copies with the same values.
pub fn sharing_check(blocks: usize, seed: u64) -> SharingCheck {
    let net = NetworkConfig {
        pattern_mode: PatternMode::Static,
        ..small_network(blocks)
    };
    let params = randomized_params::<f64>(&net, seed);
    let image = random_image::<f64>([2, 1, 32, 32], seed + 1);
    let run = |untied: bool| {
        let mut tape = Tape::new();
        let g = if untied {
            let copies = vec![BlockWeights::shared(&params); blocks];
            build_unrolled(&mut tape, GraphInput::Image(&image), &params, &net, &copies).unwrap()
        } else {
            build_forward(&mut tape, GraphInput::Image(&image), &params, &net).unwrap()
        };
        let loss = tape.sum(g.output).unwrap();
        let grads = tape.backward(loss).unwrap();
        let (w1, w2) = if untied {
            let mut a = Tensor::zeros(params.get(ParamId::BlockW1).unwrap().shape().to_vec());
            let mut b = a.clone();
            for [v1, v2] in &g.params.untied {
                a.add_assign(grads.get(*v1).unwrap()).unwrap();
                b.add_assign(grads.get(*v2).unwrap()).unwrap();
            }
            (a, b)
        } else {
            let v1 = g.params.get(ParamId::BlockW1).unwrap();
            let v2 = g.params.get(ParamId::BlockW2).unwrap();
            (grads.get(v1).unwrap().clone(), grads.get(v2).unwrap().clone())
        };
        (tape.value(g.output).clone(), w1, w2)
    };
    let (out_t, w1_t, w2_t) = run(false);
    let (out_u, w1_u, w2_u) = run(true);
    SharingCheck {
        forward_diff: out_t.max_abs_diff(&out_u).unwrap(),
        w1_grad_diff: w1_t.max_abs_diff(&w1_u).unwrap(),
        w2_grad_diff: w2_t.max_abs_diff(&w2_u).unwrap(),
        block_tensors: params.ids().iter().filter(|id| id.name().starts_with("block.")).count(),
    }
}

/// Direct loop evaluation of a valid, strided 2-d convolution.
pub fn conv_loop(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize) -> Tensor<f64> {
    let [b, ci, h, w] = x.dims4().unwrap();
    let [co, _, kh, kw] = k.dims4().unwrap();
    let (ho, wo) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
    let mut out = Tensor::zeros([b, co, ho, wo]);
    for n in 0..b {
        for o in 0..co {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for i in 0..kh {
                            for j in 0..kw {
                                acc += x.at4(n, c, y * stride + i, xx * stride + j) * k.at4(o, c, i, j);
                            }
                        }
                    }
                    out.data_mut()[((n * co + o) * ho + y) * wo + xx] = acc;
                }
            }
        }
    }
    out
}

/// Direct loop evaluation of a strided transposed convolution with kernel
/// `[Cin, Cout, K, K]` and optional bias.
pub fn transposed_loop(x: &Tensor<f64>, k: &Tensor<f64>, bias: Option<&Tensor<f64>>, stride: usize) -> Tensor<f64> {
    let [b, ci, h, w] = x.dims4().unwrap();
    let [_, co, kh, kw] = k.dims4().unwrap();
    let (ho, wo) = ((h - 1) * stride + kh, (w - 1) * stride + kw);
    let mut out = Tensor::zeros([b, co, ho, wo]);
    for n in 0..b {
        for o in 0..co {
            let b0 = bias.map_or(0.0, |t| t.data()[o]);
            for v in out.data_mut()[(n * co + o) * ho * wo..(n * co + o + 1) * ho * wo].iter_mut() {
                *v = b0;
            }
            for c in 0..ci {
                for y in 0..h {
                    for xx in 0..w {
                        for i in 0..kh {
                            for j in 0..kw {
                                let idx = ((n * co + o) * ho + y * stride + i) * wo + xx * stride + j;
                                out.data_mut()[idx] += x.at4(n, c, y, xx) * k.at4(c, o, i, j);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
