//! Joint training: multi-scale Charbonnier loss, weight decay, Adam and
//! the two staircase learning-rate schedules.

use std::collections::BTreeMap;

use lshr_tensor::{Real, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LshrError, Result};
use crate::eval::psnr;
use crate::network::{build_forward, GraphInput, ModelParams, NetworkConfig, ParamGroup, ParamId, ParamVars};
use crate::sensing::{sparsity, PatternMode, SparsityStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Mean over pixels per image and scale.
    Mean,
    /// Sum over pixels per image and scale.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl std::str::FromStr for Precision {
    type Err = LshrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Precision::Single),
            "double" => Ok(Precision::Double),
            other => Err(LshrError::Config(format!(
                "precision must be `single` or `double`, got `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early once this many optimizer steps have run.
    pub max_steps: Option<u64>,
    pub lr_recon_init: f64,
    pub decay_recon: f64,
    pub lr_residual_init: f64,
    pub decay_residual: f64,
    pub decay_step: u64,
    pub lambda: f64,
    /// Include the shadow weights in the weight-decay term.
    pub regularize_shadow: bool,
    pub epsilon: f64,
    /// Loss weights for the low and the high scale.
    pub omega: [f64; 2],
    pub reduction: Reduction,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 300,
            max_steps: None,
            lr_recon_init: 1e-4,
            decay_recon: 0.25,
            lr_residual_init: 1e-5,
            decay_residual: 0.75,
            decay_step: 200_000,
            lambda: 1e-4,
            regularize_shadow: true,
            epsilon: 1e-6,
            omega: [2.0, 4.0],
            reduction: Reduction::Mean,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            precision: Precision::Single,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        for (key, lr) in [("lr_recon_init", self.lr_recon_init), ("lr_residual_init", self.lr_residual_init)] {
            if !(lr > 0.0 && lr.is_finite()) {
                problems.push(format!("{key} must be > 0, got {lr}"));
            }
        }
        for (key, d) in [("decay_recon", self.decay_recon), ("decay_residual", self.decay_residual)] {
            if !(d > 0.0 && d <= 1.0) {
                problems.push(format!("{key} must be in (0, 1], got {d}"));
            }
        }
        if self.decay_step == 0 {
            problems.push("decay_step must be >= 1".into());
        }
        if !(self.epsilon > 0.0) {
            problems.push(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.lambda >= 0.0) {
            problems.push(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            problems.push("adam betas must be in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            problems.push("adam_eps must be > 0".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LshrError::Config(problems.join("; ")))
        }
    }

    pub fn lr(&self, group: ParamGroup, step: u64) -> f64 {
        match group {
            ParamGroup::Reconstruction => lr_at(step, self.lr_recon_init, self.decay_recon, self.decay_step),
            ParamGroup::Residual => lr_at(step, self.lr_residual_init, self.decay_residual, self.decay_step),
        }
    }
}

/// Staircase decay: `init * decay^floor(step / decay_step)`.
pub fn lr_at(step: u64, init: f64, decay: f64, decay_step: u64) -> f64 {
    init * decay.powi((step / decay_step.max(1)) as i32)
}

/// Elementwise `sqrt(u^2 + eps)`.
pub fn charbonnier<T: Real>(u: &Tensor<T>, epsilon: f64) -> Tensor<T> {
    let eps = T::from_f64_lossy(epsilon);
    u.map(|v| (v * v + eps).sqrt())
}

/// Loss handles on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    /// The weighted Charbonnier terms without weight decay.
    pub data: Var,
}

/// Records the multi-scale loss. `regularized` lists the weights entering
/// the decay term.
pub fn loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    [prelim, output]: [Var; 2],
    [gt_low, gt_high]: [Var; 2],
    regularized: &[Var],
    config: &TrainConfig,
) -> Result<LossVars> {
    let batch = tape.value(output).shape()[0];
    let eps = T::from_f64_lossy(config.epsilon);
    let mut data: Option<Var> = None;
    for (i, (pred, gt)) in [(prelim, gt_low), (output, gt_high)].into_iter().enumerate() {
        if tape.value(pred).shape() != tape.value(gt).shape() {
            return Err(LshrError::Dimension(format!(
                "prediction {:?} and target {:?} differ at scale {}",
                tape.value(pred).shape(),
                tape.value(gt).shape(),
                i + 1
            )));
        }
        let r = tape.sub(pred, gt)?;
        let c = tape.charbonnier(r, eps)?;
        let term = match config.reduction {
            Reduction::Mean => tape.mean(c)?,
            Reduction::Sum => {
                let s = tape.sum(c)?;
                tape.scale(s, T::from_f64_lossy(1.0 / batch as f64))?
            }
        };
        let term = tape.scale(term, T::from_f64_lossy(config.omega[i]))?;
        data = Some(match data {
            Some(d) => tape.add(d, term)?,
            None => term,
        });
    }
    let data = data.expect("two scales");
    let mut total = data;
    if config.lambda > 0.0 && !regularized.is_empty() {
        let mut acc: Option<Var> = None;
        for &w in regularized {
            let sq = tape.mul(w, w)?;
            let s = tape.sum(sq)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
        let reg = tape.scale(acc.expect("non-empty"), T::from_f64_lossy(config.lambda / (2.0 * batch as f64)))?;
        total = tape.add(data, reg)?;
    }
    Ok(LossVars { total, data })
}

/// The weights entering the decay term.
pub fn regularized_vars(vars: &ParamVars, config: &TrainConfig) -> Vec<Var> {
    vars.iter()
        .filter(|&(id, _)| id != ParamId::Shadow || config.regularize_shadow)
        .map(|(_, v)| v)
        .collect()
}

/// Loss value for given network outputs and targets.
pub fn loss<T: Real>(
    prelim: &Tensor<T>,
    output: &Tensor<T>,
    gt_low: &Tensor<T>,
    gt_high: &Tensor<T>,
    params: &ModelParams<T>,
    config: &TrainConfig,
) -> Result<T> {
    let mut tape = Tape::new();
    let outs = [tape.constant(prelim.clone()), tape.constant(output.clone())];
    let gts = [tape.constant(gt_low.clone()), tape.constant(gt_high.clone())];
    let reg: Vec<Var> = params
        .trainable_ids()
        .into_iter()
        .filter(|&id| id != ParamId::Shadow || config.regularize_shadow)
        .map(|id| tape.constant(params.get(id).expect("listed").clone()))
        .collect();
    let l = loss_on_tape(&mut tape, outs, gts, &reg, config)?;
    Ok(tape.value(l.total).item()?)
}

/// Adam moments for every trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub moments: BTreeMap<ParamId, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: &TrainConfig) -> Self {
        AdamState {
            step: 0,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            moments: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor, followed by
/// shadow clipping. `lr` gives the rate for each group at this step.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &BTreeMap<ParamId, Tensor<T>>,
    state: &mut AdamState<T>,
    lr: impl Fn(ParamGroup) -> f64,
) -> Result<()> {
    let ids = params.trainable_ids();
    for id in &ids {
        if !grads.contains_key(id) {
            return Err(LshrError::Config(format!("no gradient for trainable {}", id.name())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for id in ids {
        let g = &grads[&id];
        let w = params.get_mut(id).expect("trainable present");
        if g.shape() != w.shape() {
            return Err(LshrError::Dimension(format!(
                "gradient for {} has shape {:?}, parameter {:?}",
                id.name(),
                g.shape(),
                w.shape()
            )));
        }
        let (m, v) = state
            .moments
            .entry(id)
            .or_insert_with(|| (Tensor::zeros(w.shape().to_vec()), Tensor::zeros(w.shape().to_vec())));
        let rate = lr(id.group());
        for (((wi, &gi), mi), vi) in w
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gf = gi.as_f64();
            let mf = b1 * mi.as_f64() + (1.0 - b1) * gf;
            let vf = b2 * vi.as_f64() + (1.0 - b2) * gf * gf;
            *mi = T::from_f64_lossy(mf);
            *vi = T::from_f64_lossy(vf);
            let update = rate * (mf / c1) / ((vf / c2).sqrt() + state.eps);
            *wi = T::from_f64_lossy(wi.as_f64() - update);
        }
    }
    if params.bank.mode() == PatternMode::Learned {
        params.bank.clip_shadow();
    }
    Ok(())
}

/// One row of the per-step history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    /// Filled on the last step of each epoch when validating.
    pub val_loss: Option<f64>,
    pub lr_recon: f64,
    pub lr_residual: f64,
    pub fraction_ones: f64,
}

/// Validation metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    /// Multi-scale Charbonnier term, without weight decay.
    pub loss: f64,
    pub mse: f64,
    /// Mean per-image PSNR of the high-resolution output, in dB.
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val: Option<ValMetrics>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub sparsity: Vec<SparsityStats>,
    /// Validation before the first step.
    pub initial_val: Option<ValMetrics>,
}

/// Owns the model and optimizer state across steps.
pub struct Trainer<T: Real = f32> {
    pub network: NetworkConfig,
    pub config: TrainConfig,
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    pub history: TrainHistory,
}

impl<T: Real> Trainer<T> {
    pub fn new(network: NetworkConfig, config: TrainConfig, params: ModelParams<T>) -> Result<Self> {
        network.validate()?;
        config.validate()?;
        params.check(&network)?;
        let adam = AdamState::new(&config);
        let mut history = TrainHistory::default();
        if params.bank.mode() == PatternMode::Learned {
            history.sparsity.push(sparsity(&params.bank, 0));
        }
        Ok(Trainer {
            network,
            config,
            params,
            adam,
            history,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    /// Loss value and gradients for one batch `[B, 1, H, W]`.
    pub fn gradients(&self, batch: &Tensor<T>) -> Result<(f64, BTreeMap<ParamId, Tensor<T>>)> {
        let mut tape = Tape::new();
        let g = build_forward(&mut tape, GraphInput::Image(batch), &self.params, &self.network)?;
        let gt_high = tape.constant(batch.clone());
        let gt_low = g.lowres.expect("image input has a low-resolution view");
        let reg = regularized_vars(&g.params, &self.config);
        let l = loss_on_tape(&mut tape, [g.preliminary, g.output], [gt_low, gt_high], &reg, &self.config)?;
        let value = tape.value(l.total).item()?.as_f64();
        if !value.is_finite() {
            return Err(LshrError::NonFinite {
                step: self.adam.step + 1,
                tensor: "loss".into(),
            });
        }
        let mut grads = tape.backward(l.total)?;
        let mut out = BTreeMap::new();
        for (id, var) in g.params.iter() {
            let grad = grads.take(var).unwrap_or_else(|| Tensor::zeros(tape.value(var).shape().to_vec()));
            if !grad.all_finite() {
                return Err(LshrError::NonFinite {
                    step: self.adam.step + 1,
                    tensor: format!("gradient of {}", id.name()),
                });
            }
            out.insert(id, grad);
        }
        Ok((value, out))
    }

    /// Forward, backward, update and clip on one batch. Returns the loss.
    pub fn step(&mut self, batch: &Tensor<T>) -> Result<f64> {
        let (value, grads) = self.gradients(batch)?;
        let step = self.adam.step;
        let cfg = &self.config;
        adam_step(&mut self.params, &grads, &mut self.adam, |g| cfg.lr(g, step))?;
        for id in self.params.trainable_ids() {
            if !self.params.get(id).expect("listed").all_finite() {
                return Err(LshrError::NonFinite {
                    step: self.adam.step,
                    tensor: id.name().into(),
                });
            }
        }
        let fraction_ones = sparsity(&self.params.bank, self.adam.step);
        self.history.steps.push(StepRecord {
            step: self.adam.step,
            loss: value,
            val_loss: None,
            lr_recon: cfg.lr(ParamGroup::Reconstruction, step),
            lr_residual: cfg.lr(ParamGroup::Residual, step),
            fraction_ones: fraction_ones.fraction_ones,
        });
        if self.params.bank.mode() == PatternMode::Learned {
            self.history.sparsity.push(fraction_ones);
        }
        Ok(value)
    }

    pub fn validate(&self, images: &[Tensor<T>]) -> Result<ValMetrics> {
        validate(&self.params, &self.network, &self.config, images)
    }

    /// Runs the configured epochs over `train`, validating on `val` after
    /// each epoch. `on_epoch` sees the trainer after every epoch.
    pub fn run(
        &mut self,
        train: &[Tensor<T>],
        val: &[Tensor<T>],
        mut on_epoch: impl FnMut(&Trainer<T>, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        if train.is_empty() {
            return Err(LshrError::Usage("training set is empty".into()));
        }
        if !val.is_empty() && self.history.initial_val.is_none() {
            self.history.initial_val = Some(self.validate(val)?);
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..self.config.epochs {
            if self.max_steps_reached() {
                break;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut count = 0usize;
            for chunk in order.chunks(self.config.batch_size) {
                if self.max_steps_reached() {
                    break;
                }
                let items: Vec<Tensor<T>> = chunk.iter().map(|&i| train[i].clone()).collect();
                total += self.step(&Tensor::concat_batch(&items)?)?;
                count += 1;
            }
            if count == 0 {
                break;
            }
            let val_metrics = if val.is_empty() { None } else { Some(self.validate(val)?) };
            if let (Some(v), Some(last)) = (val_metrics, self.history.steps.last_mut()) {
                last.val_loss = Some(v.loss);
            }
            let record = EpochRecord {
                epoch,
                step: self.adam.step,
                train_loss: total / count as f64,
                val: val_metrics,
            };
            log::info!(
                "epoch {epoch} step {} train {:.6}{}",
                record.step,
                record.train_loss,
                record
                    .val
                    .map_or(String::new(), |v| format!(" val {:.6} ({:.3} dB)", v.loss, v.psnr))
            );
            self.history.epochs.push(record.clone());
            on_epoch(self, &record)?;
        }
        Ok(())
    }

    fn max_steps_reached(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.adam.step >= m)
    }
}

/// Validation metrics of `params` on `images`, evaluated one image at a
/// time.
pub fn validate<T: Real>(
    params: &ModelParams<T>,
    network: &NetworkConfig,
    config: &TrainConfig,
    images: &[Tensor<T>],
) -> Result<ValMetrics> {
    if images.is_empty() {
        return Err(LshrError::Usage("validation set is empty".into()));
    }
    let (mut loss_sum, mut mse_sum, mut psnr_sum, mut finite) = (0.0, 0.0, 0.0, 0usize);
    for image in images {
        let mut tape = Tape::new();
        let g = build_forward(&mut tape, GraphInput::Image(image), params, network)?;
        let gt_high = tape.constant(image.clone());
        let gt_low = g.lowres.expect("image input");
        let l = loss_on_tape(&mut tape, [g.preliminary, g.output], [gt_low, gt_high], &[], config)?;
        loss_sum += tape.value(l.data).item()?.as_f64();
        let out = tape.value(g.output);
        let diff = out.zip_map(image, |a, b| a - b)?;
        mse_sum += diff.dot(&diff)?.as_f64() / diff.len() as f64;
        let p = psnr(out, image, 1.0)?;
        if p.is_finite() {
            psnr_sum += p;
            finite += 1;
        }
    }
    let n = images.len() as f64;
    Ok(ValMetrics {
        loss: loss_sum / n,
        mse: mse_sum / n,
        psnr: if finite > 0 { psnr_sum / finite as f64 } else { f64::INFINITY },
    })
}

/// Convenience wrapper: trains a freshly initialized model.
pub fn train<T: Real>(
    train_set: &[Tensor<T>],
    val_set: &[Tensor<T>],
    config: &TrainConfig,
    network: &NetworkConfig,
) -> Result<(ModelParams<T>, TrainHistory)> {
    let params = ModelParams::init(network, config.seed)?;
    let mut trainer = Trainer::new(network.clone(), config.clone(), params)?;
    trainer.run(train_set, val_set, |_, _| Ok(()))?;
    Ok((trainer.params, trainer.history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charbonnier_values() {
        let u = Tensor::<f64>::new([3], vec![0.0, 3.0, -3.0]).unwrap();
        let c = charbonnier(&u, 1e-6);
        assert_eq!(c.data()[0], 1e-3);
        assert!((c.data()[1] - (9.0f64 + 1e-6).sqrt()).abs() < 1e-15);
        assert!((c.data()[1] - 3.000000167).abs() < 1e-9);
        assert_eq!(c.data()[1], c.data()[2]);
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_at(0, 1e-4, 0.25, 200_000), 1e-4);
        assert!((lr_at(200_000, 1e-4, 0.25, 200_000) - 2.5e-5).abs() < 1e-20);
        assert_eq!(lr_at(199_999, 1e-4, 0.25, 200_000), 1e-4);
        assert_eq!(lr_at(1_000_000, 3e-3, 1.0, 10), 3e-3);
    }

    #[test]
    fn perfect_reconstruction_loss() {
        let cfg = TrainConfig {
            lambda: 0.0,
            ..TrainConfig::default()
        };
        let net = NetworkConfig {
            channels: 2,
            blocks: 1,
            ..NetworkConfig::default()
        };
        let params = ModelParams::<f64>::init(&net, 0).unwrap();
        let lo = Tensor::from_fn([2, 1, 16, 16], |i| (i % 7) as f64 / 7.0);
        let hi = Tensor::from_fn([2, 1, 32, 32], |i| (i % 5) as f64 / 5.0);
        let l = loss(&lo, &hi, &lo, &hi, &params, &cfg).unwrap();
        assert!((l - 6.0 * 1e-3).abs() < 1e-12);
        let reg_cfg = TrainConfig { lambda: 1e-2, epsilon: 1e-300, ..cfg };
        let l = loss(&lo, &hi, &lo, &hi, &params, &reg_cfg).unwrap();
        let sq: f64 = params
            .trainable_ids()
            .iter()
            .map(|&id| params.get(id).unwrap().data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        assert!((l - 1e-2 / 4.0 * sq).abs() < 1e-12 * sq.max(1.0));
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let net = NetworkConfig {
            channels: 1,
            blocks: 1,
            ratio: 1.0 / 256.0,
            ..NetworkConfig::default()
        };
        let mut params = ModelParams::<f64>::init(&net, 0).unwrap();
        let before = params.clone();
        let grads: BTreeMap<_, _> = params
            .trainable_ids()
            .into_iter()
            .map(|id| (id, Tensor::full(params.get(id).unwrap().shape().to_vec(), -0.3)))
            .collect();
        let mut state = AdamState::new(&TrainConfig::default());
        adam_step(&mut params, &grads, &mut state, |_| 1e-3).unwrap();
        let w0 = before.get(ParamId::ReconBias).unwrap().data()[0];
        let w1 = params.get(ParamId::ReconBias).unwrap().data()[0];
        assert!((w1 - w0 - 1e-3).abs() < 1e-9);
        let mut zero = params.clone();
        let zg: BTreeMap<_, _> = grads.iter().map(|(&id, g)| (id, Tensor::zeros(g.shape().to_vec()))).collect();
        let m_before = state.moments[&ParamId::ReconBias].0.data()[0];
        adam_step(&mut zero, &zg, &mut state, |_| 1e-3).unwrap();
        let m_after = state.moments[&ParamId::ReconBias].0.data()[0];
        assert!((m_after - 0.9 * m_before).abs() < 1e-15);
        let mut fresh = AdamState::new(&TrainConfig::default());
        let mut still = before.clone();
        adam_step(&mut still, &zg, &mut fresh, |_| 1e-3).unwrap();
        assert_eq!(still, before);
    }

    #[test]
    fn adam_clips_shadow_and_requires_all_grads() {
        let net = NetworkConfig {
            channels: 1,
            blocks: 1,
            ratio: 1.0 / 256.0,
            ..NetworkConfig::default()
        };
        let mut params = ModelParams::<f64>::init(&net, 0).unwrap();
        params.get_mut(ParamId::Shadow).unwrap().data_mut()[0] = 0.9995;
        let mut grads: BTreeMap<_, _> = params
            .trainable_ids()
            .into_iter()
            .map(|id| (id, Tensor::full(params.get(id).unwrap().shape().to_vec(), -1.0)))
            .collect();
        let mut state = AdamState::new(&TrainConfig::default());
        adam_step(&mut params, &grads, &mut state, |_| 1e-2).unwrap();
        assert_eq!(params.get(ParamId::Shadow).unwrap().data()[0], 1.0);
        grads.remove(&ParamId::UpBias);
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state, |_| 1e-2),
            Err(LshrError::Config(_))
        ));
    }
}
