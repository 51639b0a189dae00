//! The LSHR model: binary sensing, preliminary reconstruction, recursive
//! residual correction and two-branch sub-pixel upscaling.
//!
//! ```text
//! x ─φ─> x_low ─sense─> y ─/K²─> T(W_r)+b ─> x̃ ──────────────┬─ conv ─ shuffle ─┐
//!                                            └ feat ─> a0 ─ blocks ─ conv ─ shuffle ─ + ─> x̂
//! ```
//!
//! All recursive blocks apply the same pair of 3x3 convolutions.

use std::collections::BTreeMap;

use lshr_tensor::{ConvSpec, Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::resample::downscale;
use crate::error::{LshrError, Result};
use crate::sensing::{sense_on_tape, PatternBank, PatternMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Pattern side `K` in pixels.
    pub kernel_size: usize,
    /// Measurement ratio `R = m / n`.
    pub ratio: f64,
    /// Upscale factor `s`.
    pub scale: usize,
    pub channels: usize,
    pub blocks: usize,
    pub leaky_p: f64,
    pub pattern_mode: PatternMode,
    /// Side of the square high-resolution training image; fixes `m`.
    pub image_size: usize,
    /// `P(1)` for static Bernoulli banks.
    pub bernoulli_p: f64,
    /// Adds a bias to each of the two shared block convolutions.
    pub block_bias: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            kernel_size: 16,
            ratio: 0.25,
            scale: 2,
            channels: 64,
            blocks: 6,
            leaky_p: 0.2,
            pattern_mode: PatternMode::Learned,
            image_size: 32,
            bernoulli_p: 0.5,
            block_bias: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            problems.push(format!("ratio {} outside (0, 1]", self.ratio));
        }
        for (key, v) in [
            ("kernel_size", self.kernel_size),
            ("scale", self.scale),
            ("channels", self.channels),
            ("blocks", self.blocks),
        ] {
            if v == 0 {
                problems.push(format!("{key} must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.leaky_p) {
            problems.push(format!("leaky_p {} outside [0, 1)", self.leaky_p));
        }
        if !(0.0..=1.0).contains(&self.bernoulli_p) {
            problems.push(format!("bernoulli_p {} outside [0, 1]", self.bernoulli_p));
        }
        let unit = self.scale * self.kernel_size;
        if unit > 0 && (self.image_size == 0 || !self.image_size.is_multiple_of(unit)) {
            problems.push(format!(
                "image_size {} must be a positive multiple of scale * kernel_size = {unit}",
                self.image_size
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LshrError::Config(problems.join("; ")))
        }
    }

    /// Side of the image the patterns see.
    pub fn sensing_size(&self) -> usize {
        self.image_size / self.scale
    }

    /// Pattern count `m` for this configuration.
    pub fn patterns(&self) -> usize {
        let n = self.sensing_size();
        kernel_count(self.ratio, n * n)
    }

    /// Multiple that input images must respect.
    pub fn size_unit(&self) -> usize {
        self.scale * self.kernel_size
    }
}

/// `m = round(R * n)`, halves rounded away from zero, at least 1.
pub fn kernel_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).max(1)
}

/// Optimizer group of a trainable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Sensing and preliminary reconstruction.
    Reconstruction,
    /// Everything after the preliminary image.
    Residual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Shadow,
    ReconKernels,
    ReconBias,
    FeatKernels,
    FeatBias,
    BlockW1,
    BlockB1,
    BlockW2,
    BlockB2,
    ResOutKernels,
    ResOutBias,
    UpKernels,
    UpBias,
}

impl ParamId {
    pub const ALL: [ParamId; 13] = [
        ParamId::Shadow,
        ParamId::ReconKernels,
        ParamId::ReconBias,
        ParamId::FeatKernels,
        ParamId::FeatBias,
        ParamId::BlockW1,
        ParamId::BlockB1,
        ParamId::BlockW2,
        ParamId::BlockB2,
        ParamId::ResOutKernels,
        ParamId::ResOutBias,
        ParamId::UpKernels,
        ParamId::UpBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Shadow => "bank.shadow",
            ParamId::ReconKernels => "recon.kernels",
            ParamId::ReconBias => "recon.bias",
            ParamId::FeatKernels => "feat.kernels",
            ParamId::FeatBias => "feat.bias",
            ParamId::BlockW1 => "block.w1",
            ParamId::BlockB1 => "block.b1",
            ParamId::BlockW2 => "block.w2",
            ParamId::BlockB2 => "block.b2",
            ParamId::ResOutKernels => "res_out.kernels",
            ParamId::ResOutBias => "res_out.bias",
            ParamId::UpKernels => "up.kernels",
            ParamId::UpBias => "up.bias",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        ParamId::ALL.into_iter().find(|id| id.name() == name)
    }

    pub fn group(self) -> ParamGroup {
        match self {
            ParamId::Shadow | ParamId::ReconKernels | ParamId::ReconBias => ParamGroup::Reconstruction,
            _ => ParamGroup::Residual,
        }
    }
}

/// Every tensor of the model. The recursive blocks own exactly one `W1`
/// and one `W2` whatever the block count.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    pub bank: PatternBank<T>,
    tensors: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialization. Learned banks start uniform, static ones
    /// Bernoulli. Convolutions use He-normal weights; the second block
    /// convolution and the residual output start scaled down so the initial
    /// model is close to its upscale branch, which starts as
    /// nearest-neighbour replication of the preliminary image.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, c, s2) = (config.patterns(), config.kernel_size, config.channels, config.scale * config.scale);
        let bank_seed: u64 = rng.gen();
        let bank = match config.pattern_mode {
            PatternMode::Learned => PatternBank::init_uniform(m, k, bank_seed)?,
            PatternMode::Static => PatternBank::init_bernoulli(m, k, config.bernoulli_p, bank_seed)?,
        };
        let mut normal = |shape: [usize; 4], std: f64| {
            let dist = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(&mut rng)))
        };
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let mut tensors = BTreeMap::new();
        tensors.insert(ParamId::ReconKernels, normal([m, 1, k, k], (1.0 / m as f64).sqrt()));
        tensors.insert(ParamId::ReconBias, Tensor::zeros([1]));
        tensors.insert(ParamId::FeatKernels, normal([c, 1, 3, 3], he(9)));
        tensors.insert(ParamId::FeatBias, Tensor::zeros([c]));
        tensors.insert(ParamId::BlockW1, normal([c, c, 3, 3], he(9 * c)));
        tensors.insert(ParamId::BlockW2, normal([c, c, 3, 3], 0.1 * he(9 * c)));
        if config.block_bias {
            tensors.insert(ParamId::BlockB1, Tensor::zeros([c]));
            tensors.insert(ParamId::BlockB2, Tensor::zeros([c]));
        }
        tensors.insert(ParamId::ResOutKernels, normal([s2, c, 3, 3], 0.1 * he(9 * c)));
        tensors.insert(ParamId::ResOutBias, Tensor::zeros([s2]));
        let up = Tensor::from_fn([s2, 1, 3, 3], |i| if i % 9 == 4 { T::one() } else { T::zero() });
        tensors.insert(ParamId::UpKernels, up);
        tensors.insert(ParamId::UpBias, Tensor::zeros([s2]));
        Ok(ModelParams { bank, tensors })
    }

    /// Assembles parameters from named tensors, checking them against
    /// `config`.
    pub fn from_parts(
        config: &NetworkConfig,
        bank: PatternBank<T>,
        tensors: impl IntoIterator<Item = (ParamId, Tensor<T>)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (id, t) in tensors {
            if id == ParamId::Shadow {
                return Err(LshrError::Config("shadow weights belong to the pattern bank".into()));
            }
            map.insert(id, t);
        }
        let params = ModelParams { bank, tensors: map };
        params.check(config)?;
        Ok(params)
    }

    /// Verifies that every tensor has the shape `config` implies.
    pub fn check(&self, config: &NetworkConfig) -> Result<()> {
        config.validate()?;
        let (m, k, c, s2) = (config.patterns(), config.kernel_size, config.channels, config.scale * config.scale);
        let mut expected = vec![
            (ParamId::Shadow, vec![m, 1, k, k]),
            (ParamId::ReconKernels, vec![m, 1, k, k]),
            (ParamId::ReconBias, vec![1]),
            (ParamId::FeatKernels, vec![c, 1, 3, 3]),
            (ParamId::FeatBias, vec![c]),
            (ParamId::BlockW1, vec![c, c, 3, 3]),
            (ParamId::BlockW2, vec![c, c, 3, 3]),
            (ParamId::ResOutKernels, vec![s2, c, 3, 3]),
            (ParamId::ResOutBias, vec![s2]),
            (ParamId::UpKernels, vec![s2, 1, 3, 3]),
            (ParamId::UpBias, vec![s2]),
        ];
        if config.block_bias {
            expected.push((ParamId::BlockB1, vec![c]));
            expected.push((ParamId::BlockB2, vec![c]));
        }
        for (id, shape) in &expected {
            let t = self
                .get(*id)
                .ok_or_else(|| LshrError::Config(format!("missing parameter {}", id.name())))?;
            if t.shape() != shape.as_slice() {
                return Err(LshrError::Config(format!(
                    "parameter {} has shape {:?}, configuration implies {shape:?}",
                    id.name(),
                    t.shape()
                )));
            }
        }
        if let Some(extra) = self.tensors.keys().find(|id| !expected.iter().any(|(e, _)| e == *id)) {
            return Err(LshrError::Config(format!("unexpected parameter {}", extra.name())));
        }
        if self.bank.mode() != config.pattern_mode {
            return Err(LshrError::Config(format!(
                "bank mode {:?} does not match configured {:?}",
                self.bank.mode(),
                config.pattern_mode
            )));
        }
        Ok(())
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        match id {
            ParamId::Shadow => Some(self.bank.shadow()),
            _ => self.tensors.get(&id),
        }
    }

    /// Mutable access. Edits to the shadow must be followed by
    /// `bank.clip_shadow()`.
    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        match id {
            ParamId::Shadow => Some(self.bank.shadow_mut()),
            _ => self.tensors.get_mut(&id),
        }
    }

    /// All stored tensors in a fixed order, shadow first.
    pub fn ids(&self) -> Vec<ParamId> {
        std::iter::once(ParamId::Shadow).chain(self.tensors.keys().copied()).collect()
    }

    /// Tensors the optimizer updates; a static bank is excluded.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids()
            .into_iter()
            .filter(|&id| id != ParamId::Shadow || self.bank.mode() == PatternMode::Learned)
            .collect()
    }

    /// Number of real-valued trainable weights.
    pub fn parameter_count(&self) -> usize {
        self.trainable_ids().iter().map(|&id| self.get(id).map_or(0, |t| t.len())).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            bank: PatternBank::from_shadow(self.bank.shadow().cast(), self.bank.mode(), self.bank.seed())
                .expect("bank shape already valid"),
            tensors: self.tensors.iter().map(|(&id, t)| (id, t.cast())).collect(),
        }
    }

    fn tensor(&self, id: ParamId) -> &Tensor<T> {
        self.get(id).expect("parameter present after check")
    }
}

/// One set of block weights, for building unrolled (untied) models.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights<T: Real = f32> {
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b1: Option<Tensor<T>>,
    pub b2: Option<Tensor<T>>,
}

impl<T: Real> BlockWeights<T> {
    /// The shared block weights of `params`.
    pub fn shared(params: &ModelParams<T>) -> Self {
        BlockWeights {
            w1: params.tensor(ParamId::BlockW1).clone(),
            w2: params.tensor(ParamId::BlockW2).clone(),
            b1: params.get(ParamId::BlockB1).cloned(),
            b2: params.get(ParamId::BlockB2).cloned(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct BlockVars {
    w1: Var,
    w2: Var,
    b1: Option<Var>,
    b2: Option<Var>,
}

/// Tape handles of the parameters registered for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    entries: Vec<(ParamId, Var)>,
    /// Handles of untied block copies, `[w1, w2]` per block.
    pub untied: Vec<[Var; 2]>,
}

impl ParamVars {
    pub fn get(&self, id: ParamId) -> Option<Var> {
        self.entries.iter().find(|(e, _)| *e == id).map(|&(_, v)| v)
    }

    /// `(id, var)` for every parameter registered as trainable.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.entries.iter().copied()
    }

    /// Handles registered by the caller, e.g. to differentiate with respect
    /// to the binary kernel itself.
    pub fn from_entries(entries: Vec<(ParamId, Var)>) -> Self {
        ParamVars {
            entries,
            untied: Vec::new(),
        }
    }
}

/// Handles produced by [`build_forward`].
#[derive(Clone, Debug)]
pub struct ForwardGraph {
    pub params: ParamVars,
    /// The simulated low-resolution input `φ(x)`; also the low-scale target.
    pub lowres: Option<Var>,
    /// Normalized measurements `y / K²`.
    pub measurements: Var,
    pub preliminary: Var,
    pub output: Var,
}

/// Plain-tensor results of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T: Real = f32> {
    pub preliminary: Tensor<T>,
    pub output: Tensor<T>,
}

/// Where the graph starts.
pub enum GraphInput<'a, T: Real> {
    /// High-resolution image `[B, 1, H, W]`.
    Image(&'a Tensor<T>),
    /// Image already at sensing resolution.
    LowRes(&'a Tensor<T>),
    /// Normalized measurements `[B, m, h, w]`.
    Measurements(&'a Tensor<T>),
}

fn register<T: Real>(tape: &mut Tape<T>, params: &ModelParams<T>, skip_blocks: bool) -> Result<(ParamVars, Var)> {
    let mut entries = Vec::new();
    let sensing = params.bank.register(tape)?;
    if let Some(shadow) = sensing.shadow {
        entries.push((ParamId::Shadow, shadow));
    }
    for (&id, t) in &params.tensors {
        let block = matches!(id, ParamId::BlockW1 | ParamId::BlockW2 | ParamId::BlockB1 | ParamId::BlockB2);
        if block && skip_blocks {
            continue;
        }
        entries.push((id, tape.param(t.clone())));
    }
    Ok((ParamVars { entries, untied: Vec::new() }, sensing.kernel))
}

/// Records a forward pass on `tape` with all parameters as trainable
/// leaves.
pub fn build_forward<T: Real>(
    tape: &mut Tape<T>,
    input: GraphInput<'_, T>,
    params: &ModelParams<T>,
    config: &NetworkConfig,
) -> Result<ForwardGraph> {
    params.check(config)?;
    let (vars, kernel) = register(tape, params, false)?;
    let block = BlockVars {
        w1: vars.get(ParamId::BlockW1).expect("registered"),
        w2: vars.get(ParamId::BlockW2).expect("registered"),
        b1: vars.get(ParamId::BlockB1),
        b2: vars.get(ParamId::BlockB2),
    };
    assemble(tape, input, config, vars, kernel, &[block])
}

/// Records a forward pass from caller-registered handles. `kernel` is the
/// `{0, 1}` sensing kernel; `vars` must hold every network tensor except
/// the shadow.
pub fn build_with_vars<T: Real>(
    tape: &mut Tape<T>,
    input: GraphInput<'_, T>,
    config: &NetworkConfig,
    kernel: Var,
    vars: ParamVars,
) -> Result<ForwardGraph> {
    config.validate()?;
    let need = |id: ParamId| {
        vars.get(id)
            .ok_or_else(|| LshrError::Config(format!("no handle for {}", id.name())))
    };
    let block = BlockVars {
        w1: need(ParamId::BlockW1)?,
        w2: need(ParamId::BlockW2)?,
        b1: vars.get(ParamId::BlockB1),
        b2: vars.get(ParamId::BlockB2),
    };
    for id in ParamId::ALL {
        let optional = matches!(id, ParamId::Shadow | ParamId::BlockB1 | ParamId::BlockB2);
        if !optional {
            need(id)?;
        }
    }
    assemble(tape, input, config, vars, kernel, &[block])
}

/// Records a forward pass whose `blocks` applications use separate weight
/// copies instead of the shared pair. Used to verify weight sharing.
pub fn build_unrolled<T: Real>(
    tape: &mut Tape<T>,
    input: GraphInput<'_, T>,
    params: &ModelParams<T>,
    config: &NetworkConfig,
    copies: &[BlockWeights<T>],
) -> Result<ForwardGraph> {
    params.check(config)?;
    if copies.len() != config.blocks {
        return Err(LshrError::Config(format!(
            "{} block copies for {} blocks",
            copies.len(),
            config.blocks
        )));
    }
    let (mut vars, kernel) = register(tape, params, true)?;
    let blocks: Vec<BlockVars> = copies
        .iter()
        .map(|b| BlockVars {
            w1: tape.param(b.w1.clone()),
            w2: tape.param(b.w2.clone()),
            b1: b.b1.as_ref().map(|t| tape.param(t.clone())),
            b2: b.b2.as_ref().map(|t| tape.param(t.clone())),
        })
        .collect();
    vars.untied = blocks.iter().map(|b| [b.w1, b.w2]).collect();
    assemble(tape, input, config, vars, kernel, &blocks)
}

fn assemble<T: Real>(
    tape: &mut Tape<T>,
    input: GraphInput<'_, T>,
    config: &NetworkConfig,
    vars: ParamVars,
    kernel: Var,
    blocks: &[BlockVars],
) -> Result<ForwardGraph> {
    let k = config.kernel_size;
    let norm = T::from_f64_lossy(measurement_scale(k));
    let (lowres, measurements) = match input {
        GraphInput::Image(image) => {
            let low = tape.constant(downscale_input(image, config)?);
            let y = sense_on_tape(tape, low, kernel, k)?;
            (Some(low), tape.scale(y, norm)?)
        }
        GraphInput::LowRes(low) => {
            check_single_channel(low)?;
            let low = tape.constant(low.clone());
            let y = sense_on_tape(tape, low, kernel, k)?;
            (Some(low), tape.scale(y, norm)?)
        }
        GraphInput::Measurements(y) => {
            check_measurements(y, tape.value(kernel).shape()[0])?;
            (None, tape.constant(y.clone()))
        }
    };
    let p = |id| vars.get(id).expect("registered");
    let preliminary = tape.transposed_conv2d(measurements, p(ParamId::ReconKernels), Some(p(ParamId::ReconBias)), k)?;
    let output = residual_tail(tape, preliminary, &vars, config, blocks)?;
    Ok(ForwardGraph {
        params: vars,
        lowres,
        measurements,
        preliminary,
        output,
    })
}

fn residual_tail<T: Real>(
    tape: &mut Tape<T>,
    preliminary: Var,
    vars: &ParamVars,
    config: &NetworkConfig,
    blocks: &[BlockVars],
) -> Result<Var> {
    let p = |id| vars.get(id).expect("registered");
    let same = ConvSpec::same(1);
    let slope = T::from_f64_lossy(config.leaky_p);
    let a0 = tape.conv2d(preliminary, p(ParamId::FeatKernels), Some(p(ParamId::FeatBias)), same)?;
    let mut a = a0;
    for j in 0..config.blocks {
        let b = blocks[if blocks.len() == 1 { 0 } else { j }];
        let t = tape.leaky_relu(a, slope)?;
        let t = tape.conv2d(t, b.w1, b.b1, same)?;
        let t = tape.leaky_relu(t, slope)?;
        let t = tape.conv2d(t, b.w2, b.b2, same)?;
        a = tape.add(t, a0)?;
    }
    let r = tape.conv2d(a, p(ParamId::ResOutKernels), Some(p(ParamId::ResOutBias)), same)?;
    let r = tape.pixel_shuffle(r, config.scale)?;
    let u = tape.conv2d(preliminary, p(ParamId::UpKernels), Some(p(ParamId::UpBias)), same)?;
    let u = tape.pixel_shuffle(u, config.scale)?;
    Ok(tape.add(r, u)?)
}

fn check_single_channel<T: Real>(image: &Tensor<T>) -> Result<()> {
    let [_, c, _, _] = image.dims4()?;
    if c != 1 {
        return Err(LshrError::Dimension(format!("expected a single-channel image, got {c} channels")));
    }
    Ok(())
}

fn check_measurements<T: Real>(y: &Tensor<T>, m: usize) -> Result<()> {
    let [_, c, _, _] = y.dims4()?;
    if c != m {
        return Err(LshrError::Config(format!(
            "measurements carry {c} patterns, the model was built for {m}"
        )));
    }
    Ok(())
}

/// Factor applied to raw block sums before reconstruction.
pub fn measurement_scale(kernel_size: usize) -> f64 {
    1.0 / (kernel_size * kernel_size) as f64
}

/// `φ(x)`: the image as the patterns see it.
pub fn downscale_input<T: Real>(image: &Tensor<T>, config: &NetworkConfig) -> Result<Tensor<T>> {
    check_single_channel(image)?;
    let [_, _, h, w] = image.dims4()?;
    let unit = config.size_unit();
    if h % unit != 0 || w % unit != 0 {
        return Err(LshrError::Dimension(format!(
            "image {h}x{w} must be a multiple of scale * kernel_size = {unit} on both axes"
        )));
    }
    downscale(image, config.scale)
}

fn run<T: Real>(input: GraphInput<'_, T>, params: &ModelParams<T>, config: &NetworkConfig) -> Result<ForwardOutput<T>> {
    let mut tape = Tape::new();
    let g = build_forward(&mut tape, input, params, config)?;
    Ok(ForwardOutput {
        preliminary: tape.value(g.preliminary).clone(),
        output: tape.value(g.output).clone(),
    })
}

/// Full pipeline from a high-resolution image.
pub fn forward<T: Real>(image: &Tensor<T>, params: &ModelParams<T>, config: &NetworkConfig) -> Result<ForwardOutput<T>> {
    run(GraphInput::Image(image), params, config)
}

/// Pipeline from an image already at sensing resolution.
pub fn forward_lowres<T: Real>(low: &Tensor<T>, params: &ModelParams<T>, config: &NetworkConfig) -> Result<ForwardOutput<T>> {
    run(GraphInput::LowRes(low), params, config)
}

/// Hardware inference path: normalized measurements to the
/// high-resolution image.
pub fn reconstruct_from_measurements<T: Real>(
    measurements: &Tensor<T>,
    params: &ModelParams<T>,
    config: &NetworkConfig,
) -> Result<Tensor<T>> {
    Ok(run(GraphInput::Measurements(measurements), params, config)?.output)
}

/// Normalized measurements `sense(φ(x)) / K²` of a high-resolution image.
pub fn measure<T: Real>(image: &Tensor<T>, params: &ModelParams<T>, config: &NetworkConfig) -> Result<Tensor<T>> {
    let low = downscale_input(image, config)?;
    let k = config.kernel_size;
    let norm = T::from_f64_lossy(measurement_scale(k));
    Ok(params.bank.sense(&low)?.map(|v| v * norm))
}

/// Transposed convolution of normalized measurements with the
/// reconstruction kernels, plus the bias.
pub fn reconstruct_preliminary<T: Real>(measurements: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let kernels = params
        .get(ParamId::ReconKernels)
        .ok_or_else(|| LshrError::Config("missing reconstruction kernels".into()))?;
    let [m, _, k, _] = kernels.dims4()?;
    let [_, c, _, _] = measurements.dims4()?;
    if c != m {
        return Err(LshrError::Dimension(format!(
            "measurement channel axis has {c} entries, reconstruction kernels expect {m}"
        )));
    }
    Ok(lshr_tensor::transposed_conv2d(
        measurements,
        kernels,
        params.get(ParamId::ReconBias),
        k,
    )?)
}

/// One recursive block on plain tensors: `W2 σ(W1 σ(a_prev)) + a0`.
pub fn residual_block<T: Real>(
    a_prev: &Tensor<T>,
    a0: &Tensor<T>,
    weights: &BlockWeights<T>,
    leaky_p: f64,
) -> Result<Tensor<T>> {
    if a_prev.shape() != a0.shape() {
        return Err(LshrError::Dimension(format!(
            "block input {:?} and initial features {:?} differ",
            a_prev.shape(),
            a0.shape()
        )));
    }
    let mut tape = Tape::new();
    let slope = T::from_f64_lossy(leaky_p);
    let same = ConvSpec::same(1);
    let a = tape.constant(a_prev.clone());
    let init = tape.constant(a0.clone());
    let w1 = tape.constant(weights.w1.clone());
    let w2 = tape.constant(weights.w2.clone());
    let b1 = weights.b1.clone().map(|b| tape.constant(b));
    let b2 = weights.b2.clone().map(|b| tape.constant(b));
    let t = tape.leaky_relu(a, slope)?;
    let t = tape.conv2d(t, w1, b1, same)?;
    let t = tape.leaky_relu(t, slope)?;
    let t = tape.conv2d(t, w2, b2, same)?;
    let out = tape.add(t, init)?;
    Ok(tape.value(out).clone())
}
