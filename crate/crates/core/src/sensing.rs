//! Binary sensing patterns.
//!
//! A [`PatternBank`] keeps real-valued shadow weights in `[-1, 1]`. The
//! forward pass only ever sees their `{0, 1}` binarization, which is what a
//! micromirror array can display. In learned mode the shadow weights receive
//! the binary weights' gradient unchanged (straight-through) and are clipped
//! back into range after each optimizer step.

use lshr_tensor::{binarize_value, ConvSpec, Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LshrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternMode {
    /// Bernoulli patterns fixed for the whole run.
    Static,
    /// Patterns trained jointly with the reconstruction network.
    Learned,
}

impl std::str::FromStr for PatternMode {
    type Err = LshrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(PatternMode::Static),
            "learned" => Ok(PatternMode::Learned),
            other => Err(LshrError::Config(format!(
                "pattern mode must be `static` or `learned`, got `{other}`"
            ))),
        }
    }
}

/// `1` if `w > 0`, else `0`.
pub fn binarize<T: Real>(w: T) -> T {
    binarize_value(w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternBank<T: Real = f32> {
    shadow: Tensor<T>,
    mode: PatternMode,
    seed: u64,
}

impl<T: Real> PatternBank<T> {
    /// `m` static patterns of side `k`, each bit drawn independently with
    /// `P(1) = prob_one`. Shadow weights are set to +1 / -1.
    pub fn init_bernoulli(m: usize, k: usize, prob_one: f64, seed: u64) -> Result<Self> {
        check_bank_dims(m, k)?;
        if !(0.0..=1.0).contains(&prob_one) {
            return Err(LshrError::Config(format!("prob_one {prob_one} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shadow = Tensor::from_fn([m, 1, k, k], |_| {
            if rng.gen_bool(prob_one) {
                T::one()
            } else {
                -T::one()
            }
        });
        Ok(PatternBank {
            shadow,
            mode: PatternMode::Static,
            seed,
        })
    }

    /// `m` learnable patterns with shadow weights drawn from the open
    /// interval `(-1, 1)`.
    pub fn init_uniform(m: usize, k: usize, seed: u64) -> Result<Self> {
        check_bank_dims(m, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shadow = Tensor::from_fn([m, 1, k, k], |_| loop {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v > -1.0 {
                break T::from_f64_lossy(v);
            }
        });
        Ok(PatternBank {
            shadow,
            mode: PatternMode::Learned,
            seed,
        })
    }

    /// Rebuilds a bank from stored shadow weights.
    pub fn from_shadow(shadow: Tensor<T>, mode: PatternMode, seed: u64) -> Result<Self> {
        let [m, c, k, k2] = shadow.dims4()?;
        if c != 1 || k != k2 {
            return Err(LshrError::Dimension(format!(
                "pattern bank must be [m, 1, K, K], got {:?}",
                shadow.shape()
            )));
        }
        check_bank_dims(m, k)?;
        Ok(PatternBank { shadow, mode, seed })
    }

    pub fn mode(&self) -> PatternMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pattern_count(&self) -> usize {
        self.shadow.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.shadow.shape()[2]
    }

    pub fn shadow(&self) -> &Tensor<T> {
        &self.shadow
    }

    /// Mutable shadow weights, for the optimizer. Callers must follow up
    /// with [`PatternBank::clip_shadow`].
    pub fn shadow_mut(&mut self) -> &mut Tensor<T> {
        &mut self.shadow
    }

    /// The `{0, 1}` view used by the forward pass.
    pub fn binarized(&self) -> Tensor<T> {
        self.shadow.map(binarize)
    }

    /// Row-major bits of pattern `index`.
    pub fn pattern_bits(&self, index: usize) -> Vec<bool> {
        let n = self.kernel_size() * self.kernel_size();
        self.shadow.data()[index * n..(index + 1) * n]
            .iter()
            .map(|&w| w > T::zero())
            .collect()
    }

    /// Clamps every shadow weight into `[-1, 1]`.
    pub fn clip_shadow(&mut self) {
        let (lo, hi) = (-T::one(), T::one());
        for w in self.shadow.data_mut() {
            *w = w.max(lo).min(hi);
        }
    }

    /// Records the sensing kernel on `tape`. Learned banks enter as a
    /// trainable shadow leaf followed by a straight-through binarization;
    /// static banks enter as a constant binary tensor.
    pub fn register(&self, tape: &mut Tape<T>) -> Result<SensingKernel> {
        Ok(match self.mode {
            PatternMode::Learned => {
                let shadow = tape.param(self.shadow.clone());
                let kernel = tape.binarize_ste(shadow)?;
                SensingKernel {
                    kernel,
                    shadow: Some(shadow),
                }
            }
            PatternMode::Static => SensingKernel {
                kernel: tape.constant(self.binarized()),
                shadow: None,
            },
        })
    }

    /// Measurements of `image: [B, 1, H, W]` as a plain tensor
    /// `[B, m, H/K, W/K]`.
    pub fn sense(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        check_sensing_input(image, self.kernel_size())?;
        let k = self.kernel_size();
        Ok(lshr_tensor::conv2d(image, &self.binarized(), None, ConvSpec::valid(k))?)
    }
}

/// Tape handles for the sensing kernel.
#[derive(Clone, Copy, Debug)]
pub struct SensingKernel {
    /// The binary kernel fed to the sensing convolution.
    pub kernel: Var,
    /// The shadow leaf, present for learned banks.
    pub shadow: Option<Var>,
}

fn check_bank_dims(m: usize, k: usize) -> Result<()> {
    if m == 0 || k == 0 {
        return Err(LshrError::Config(format!(
            "pattern bank needs m >= 1 and K >= 1, got m={m}, K={k}"
        )));
    }
    Ok(())
}

pub(crate) fn check_sensing_input<T: Real>(image: &Tensor<T>, k: usize) -> Result<()> {
    let [_, c, h, w] = image.dims4()?;
    if c != 1 {
        return Err(LshrError::Dimension(format!("sensing expects one channel, got {c}")));
    }
    if h % k != 0 || w % k != 0 {
        return Err(LshrError::Dimension(format!(
            "image {h}x{w} is not a whole number of {k}x{k} pattern blocks; crop or pad it upstream"
        )));
    }
    Ok(())
}

/// Block-wise sensing on a tape: an unpadded convolution with stride `K`
/// and no bias.
pub fn sense_on_tape<T: Real>(tape: &mut Tape<T>, image: Var, kernel: Var, k: usize) -> Result<Var> {
    check_sensing_input(tape.value(image), k)?;
    Ok(tape.conv2d(image, kernel, None, ConvSpec::valid(k))?)
}

/// Maps the gradient on the binary weights to the shadow weights (identity).
pub fn straight_through_grad<T: Real>(bank: &PatternBank<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if bank.mode() == PatternMode::Static {
        return Err(LshrError::Usage("static pattern banks receive no gradient".into()));
    }
    if upstream.shape() != bank.shadow().shape() {
        return Err(LshrError::Dimension(format!(
            "gradient shape {:?} does not match bank {:?}",
            upstream.shape(),
            bank.shadow().shape()
        )));
    }
    Ok(upstream.clone())
}

/// Fraction of ones in the binarized bank at one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    pub step: u64,
    pub fraction_ones: f64,
    pub per_pattern_fraction: Vec<f64>,
}

pub fn sparsity<T: Real>(bank: &PatternBank<T>, step: u64) -> SparsityStats {
    let n = bank.kernel_size() * bank.kernel_size();
    let mut total = 0usize;
    let per_pattern_fraction = bank
        .shadow()
        .data()
        .chunks(n)
        .map(|p| {
            let ones = p.iter().filter(|&&w| w > T::zero()).count();
            total += ones;
            ones as f64 / n as f64
        })
        .collect();
    SparsityStats {
        step,
        fraction_ones: total as f64 / bank.shadow().len() as f64,
        per_pattern_fraction,
    }
}
