//! Quality metrics, timing, complexity accounting and report files.

use std::path::Path;
use std::time::Instant;

use lshr_tensor::{Real, Tensor};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::data::dct::sparsify_dct;
use crate::data::resample::{downscale, upscale};
use crate::error::{LshrError, Result};
use crate::io::write_atomic;
use crate::network::{forward, kernel_count, ModelParams, NetworkConfig};
use crate::training::{train, StepRecord, TrainConfig, TrainHistory};
use crate::sensing::SparsityStats;

/// `10 log10(max² / MSE)` in dB; `+inf` for identical images.
pub fn psnr<T: Real>(x: &Tensor<T>, y: &Tensor<T>, max_val: f64) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(LshrError::Dimension(format!("psnr of {:?} and {:?}", x.shape(), y.shape())));
    }
    if !(max_val > 0.0) {
        return Err(LshrError::Config(format!("max_val must be > 0, got {max_val}")));
    }
    let sq: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    let mse = sq / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Per-image PSNRs and their mean. Infinite values are kept in
/// `per_image` and left out of the mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub ratio: f64,
    pub keep_fraction: Option<f64>,
    pub per_image: Vec<f64>,
    pub mean_psnr: f64,
    pub excluded_infinite: usize,
}

impl EvalReport {
    pub fn from_psnrs(method: &str, ratio: f64, keep_fraction: Option<f64>, per_image: Vec<f64>) -> Self {
        let finite: Vec<f64> = per_image.iter().copied().filter(|p| p.is_finite()).collect();
        let excluded_infinite = per_image.len() - finite.len();
        if excluded_infinite > 0 {
            log::warn!("{excluded_infinite} image(s) reconstructed exactly; left out of the mean");
        }
        let mean_psnr = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        EvalReport {
            method: method.into(),
            ratio,
            keep_fraction,
            per_image,
            mean_psnr,
            excluded_infinite,
        }
    }
}

/// Optionally DCT-sparsifies each image; the sparsified image is then the
/// scene being imaged and the reference for PSNR.
fn scene<T: Real>(image: &Tensor<T>, keep_fraction: Option<f64>) -> Result<Tensor<T>> {
    match keep_fraction {
        Some(f) => sparsify_dct(image, f),
        None => Ok(image.clone()),
    }
}

/// PSNR of the model's high-resolution output on every image.
pub fn evaluate<T: Real>(
    params: &ModelParams<T>,
    network: &NetworkConfig,
    images: &[Tensor<T>],
    keep_fraction: Option<f64>,
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(LshrError::Usage("evaluation set is empty".into()));
    }
    let mut per_image = Vec::with_capacity(images.len());
    for image in images {
        let x = scene(image, keep_fraction)?;
        let out = forward(&x, params, network)?.output;
        per_image.push(psnr(&out, &x, 1.0)?);
    }
    Ok(EvalReport::from_psnrs("lshr", network.ratio, keep_fraction, per_image))
}

/// Bicubic downscale then bicubic upscale: the no-network floor.
pub fn bicubic_baseline<T: Real>(images: &[Tensor<T>], scale: usize, keep_fraction: Option<f64>) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(LshrError::Usage("evaluation set is empty".into()));
    }
    let mut per_image = Vec::with_capacity(images.len());
    for image in images {
        let x = scene(image, keep_fraction)?;
        let out = upscale(&downscale(&x, scale)?, scale)?;
        per_image.push(psnr(&out, &x, 1.0)?);
    }
    Ok(EvalReport::from_psnrs("bicubic", f64::NAN, keep_fraction, per_image))
}

/// Median wall-clock seconds per image of the reconstruction forward pass
/// over `reps` (at least 5) passes through `images`.
pub fn time_reconstruction<T: Real>(
    params: &ModelParams<T>,
    network: &NetworkConfig,
    images: &[Tensor<T>],
    reps: usize,
) -> Result<f64> {
    if images.is_empty() {
        return Err(LshrError::Usage("timing set is empty".into()));
    }
    let mut samples = Vec::with_capacity(reps.max(5));
    for _ in 0..reps.max(5) {
        let start = Instant::now();
        for image in images {
            std::hint::black_box(forward(image, params, network)?);
        }
        samples.push(start.elapsed().as_secs_f64() / images.len() as f64);
    }
    samples.sort_by(f64::total_cmp);
    Ok(samples[samples.len() / 2])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub image_h: usize,
    pub image_w: usize,
    /// Patterns under the convention `m = round(R * H * W)`.
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_size: usize,
    /// Output feature-map side `M = H / s`.
    pub feature_map: usize,
    /// `K² C_in C_out`.
    pub space: u64,
    /// `M² K² C_in C_out` multiply-accumulates.
    pub time: u64,
    pub weights_per_kernel: u64,
    pub weights_total: u64,
    /// Bits per sensing weight.
    pub weight_format_bits: u32,
    /// Patterns the model itself uses (`R` against the sensing-resolution
    /// pixel count).
    pub model_patterns: usize,
    pub model_pattern_bits: u64,
    pub model_parameters: u64,
}

/// Operation counts of the reconstruction layer for an `H x W` image.
pub fn complexity(network: &NetworkConfig, image_h: usize, image_w: usize) -> Result<ComplexityReport> {
    network.validate()?;
    let k = network.kernel_size as u64;
    let c_in = kernel_count(network.ratio, image_h * image_w);
    let c_out = 1usize;
    let space = k * k * c_in as u64 * c_out as u64;
    let (mh, mw) = (image_h / network.scale, image_w / network.scale);
    let time = (mh * mw) as u64 * space;
    let m = network.patterns() as u64;
    let (c, s2) = (network.channels as u64, (network.scale * network.scale) as u64);
    let block_bias = if network.block_bias { 2 * c } else { 0 };
    let learned_shadow = if network.pattern_mode == crate::sensing::PatternMode::Learned { m * k * k } else { 0 };
    let model_parameters = learned_shadow
        + m * k * k
        + 1
        + c * 9
        + c
        + 2 * c * c * 9
        + block_bias
        + s2 * c * 9
        + s2
        + s2 * 9
        + s2;
    Ok(ComplexityReport {
        image_h,
        image_w,
        c_in,
        c_out,
        kernel_size: network.kernel_size,
        feature_map: mh,
        space,
        time,
        weights_per_kernel: k * k,
        weights_total: space,
        weight_format_bits: 1,
        model_patterns: m as usize,
        model_pattern_bits: m * k * k,
        model_parameters,
    })
}

/// One point of the block-count sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub blocks: usize,
    pub mean_psnr: f64,
    pub seconds_per_image: f64,
}

/// Trains and evaluates one model per block count.
pub fn sweep_blocks<T: Real>(
    train_set: &[Tensor<T>],
    test_set: &[Tensor<T>],
    network: &NetworkConfig,
    config: &TrainConfig,
    block_counts: &[usize],
    timing_reps: usize,
) -> Result<Vec<SweepRow>> {
    block_counts
        .iter()
        .map(|&blocks| {
            let net = NetworkConfig { blocks, ..network.clone() };
            let (params, _) = train(train_set, &[], config, &net)?;
            let report = evaluate(&params, &net, test_set, None)?;
            let seconds_per_image = time_reconstruction(&params, &net, test_set, timing_reps)?;
            log::info!("blocks {blocks}: {:.3} dB, {seconds_per_image:.6} s/image", report.mean_psnr);
            Ok(SweepRow {
                blocks,
                mean_psnr: report.mean_psnr,
                seconds_per_image,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ImageRow {
    image: usize,
    psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    pub step: u64,
    pub fraction_ones: f64,
}

fn to_csv<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| LshrError::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| LshrError::Format(e.to_string()))
}

fn from_csv<R: DeserializeOwned>(bytes: &[u8]) -> Result<Vec<R>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .map(|r| r.map_err(|e| LshrError::Format(e.to_string())))
        .collect()
}

/// `step,loss,val_loss,lr_recon,lr_residual,fraction_ones`.
pub fn history_csv(history: &TrainHistory) -> Result<Vec<u8>> {
    to_csv(&history.steps)
}

pub fn parse_history_csv(bytes: &[u8]) -> Result<Vec<StepRecord>> {
    from_csv(bytes)
}

/// `step,fraction_ones`.
pub fn sparsity_csv(history: &[SparsityStats]) -> Result<Vec<u8>> {
    to_csv(history.iter().map(|s| SparsityRow {
        step: s.step,
        fraction_ones: s.fraction_ones,
    }))
}

pub fn parse_sparsity_csv(bytes: &[u8]) -> Result<Vec<SparsityRow>> {
    from_csv(bytes)
}

/// `image,psnr`.
pub fn report_csv(report: &EvalReport) -> Result<Vec<u8>> {
    to_csv(report.per_image.iter().enumerate().map(|(image, &psnr)| ImageRow { image, psnr }))
}

pub fn parse_report_csv(bytes: &[u8]) -> Result<Vec<f64>> {
    Ok(from_csv::<ImageRow>(bytes)?.into_iter().map(|r| r.psnr).collect())
}

/// `blocks,mean_psnr,seconds_per_image`.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    to_csv(rows)
}

pub fn parse_sweep_csv(bytes: &[u8]) -> Result<Vec<SweepRow>> {
    from_csv(bytes)
}

/// Writes the loss and sparsity curves of a run next to each other.
pub fn emit_curves(history: &TrainHistory, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("history.csv"), &history_csv(history)?)?;
    write_atomic(&dir.join("sparsity.csv"), &sparsity_csv(&history.sparsity)?)?;
    Ok(())
}
