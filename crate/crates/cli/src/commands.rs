use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use lshr_core::checkpoint::{peek_precision, Checkpoint};
use lshr_core::data::archive::{load_patches, save_patches};
use lshr_core::data::augment::prepare_patches;
use lshr_core::data::image_io::{load_dir, load_grayscale, save_png};
use lshr_core::data::resample::downscale;
use lshr_core::data::split_holdout;
use lshr_core::data::synth::synthetic_digits;
use lshr_core::eval::{
    bicubic_baseline, complexity, emit_curves, evaluate, psnr, report_csv, sweep_blocks, sweep_csv,
    time_reconstruction,
};
use lshr_core::hardware::{
    empirical_snr_db, export_patterns, ideal_measurements, import_measurements, import_patterns, simulate_spc,
    write_measurements, Calibration,
};
use lshr_core::io::{read_file, write_atomic};
use lshr_core::network::{reconstruct_from_measurements, ModelParams, NetworkConfig};
use lshr_core::training::{Precision, Trainer};
use lshr_core::LshrError;
use lshr_tensor::{Real, Tensor};

use crate::config::{RunConfig, SyntheticConfig};
use crate::Command;

const CHECKPOINT: &str = "checkpoint.lshr";
const PATTERNS: &str = "patterns.lshrpat";

/// Runs `$f::<T>(args)` with `T` picked from a precision tag.
macro_rules! by_precision {
    ($tag:expr, $f:ident($($arg:expr),*)) => {
        match $tag {
            "f64" => $f::<f64>($($arg),*),
            _ => $f::<f32>($($arg),*),
        }
    };
}

pub fn dispatch(cfg: &RunConfig, command: Command) -> anyhow::Result<()> {
    let tag = match cfg.train.precision {
        Precision::Single => "f32",
        Precision::Double => "f64",
    };
    match command {
        Command::PrepareData => prepare_data(cfg),
        Command::Train => by_precision!(tag, train(cfg)),
        Command::Evaluate { checkpoint } => {
            let (tag, bytes) = read_checkpoint(cfg, checkpoint)?;
            by_precision!(tag.as_str(), evaluate_cmd(cfg, &bytes))
        }
        Command::SparsifyEval { checkpoint } => {
            let (tag, bytes) = read_checkpoint(cfg, checkpoint)?;
            by_precision!(tag.as_str(), sparsify_eval(cfg, &bytes))
        }
        Command::ExportPatterns { checkpoint } => {
            let (tag, bytes) = read_checkpoint(cfg, checkpoint)?;
            by_precision!(tag.as_str(), export_cmd(cfg, &bytes))
        }
        Command::Simulate {
            patterns,
            image,
            frames,
            sensing_resolution,
        } => simulate(cfg, patterns, &image, frames, sensing_resolution),
        Command::Reconstruct {
            checkpoint,
            measurements,
            reference,
            calibration,
        } => {
            let cal = calibration.map(|v| Calibration {
                gain: v[0],
                offset: v[1],
            });
            let (tag, bytes) = read_checkpoint(cfg, checkpoint)?;
            by_precision!(tag.as_str(), reconstruct(cfg, &bytes, &measurements, reference.as_deref(), cal))
        }
        Command::Complexity { height, width } => complexity_cmd(cfg, height, width),
        Command::SweepBlocks => by_precision!(tag, sweep(cfg)),
    }
}

fn read_checkpoint(cfg: &RunConfig, path: Option<PathBuf>) -> anyhow::Result<(String, Vec<u8>)> {
    let path = path.unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT));
    let bytes = read_file(&path)?;
    let tag = peek_precision(&bytes).with_context(|| format!("reading {}", path.display()))?;
    Ok((tag, bytes))
}

fn pixels<T: Real>(dir: &Path) -> lshr_core::Result<Vec<Tensor<T>>> {
    Ok(load_dir::<T>(dir)?.into_iter().map(|p| p.pixels).collect())
}

fn synthetic(cfg: &RunConfig) -> SyntheticConfig {
    cfg.data.synthetic.clone().unwrap_or_default()
}

fn check_sizes<T: Real>(images: &[Tensor<T>], net: &NetworkConfig, what: &str) -> lshr_core::Result<()> {
    let unit = net.size_unit();
    if images.is_empty() {
        return Err(LshrError::Usage(format!("{what} set is empty")));
    }
    for (i, img) in images.iter().enumerate() {
        let [_, _, h, w] = img.dims4()?;
        if h % unit != 0 || w % unit != 0 {
            return Err(LshrError::Dimension(format!(
                "{what} image {i} is {h}x{w}; sides must be multiples of scale * kernel_size = {unit}"
            )));
        }
    }
    Ok(())
}

/// Training and validation images, from the patch archive, the training
/// directory or the synthetic corpus, in that order of preference.
type Split<T> = (Vec<Tensor<T>>, Vec<Tensor<T>>);

fn training_sets<T: Real>(cfg: &RunConfig) -> lshr_core::Result<Split<T>> {
    let d = &cfg.data;
    let train: Vec<Tensor<T>> = if let Some(p) = &d.patches {
        load_patches::<f64>(p)
            .map(|v| v.into_iter().map(|p| p.pixels.cast()).collect())
            .or_else(|_| load_patches::<f32>(p).map(|v| v.into_iter().map(|p| p.pixels.cast()).collect()))?
    } else if let Some(dir) = &d.train_dir {
        pixels(dir)?
    } else {
        let s = synthetic(cfg);
        synthetic_digits(s.train, s.size, s.seed)
    };
    let (train, val) = if let Some(dir) = &d.val_dir {
        (train, pixels(dir)?)
    } else if d.patches.is_none() && d.train_dir.is_none() {
        let s = synthetic(cfg);
        (train, synthetic_digits(s.val, s.size, s.seed + 1))
    } else {
        split_holdout(&train, d.holdout_fraction)
    };
    check_sizes(&train, &cfg.network, "training")?;
    if let Some(first) = train.first() {
        if let Some(odd) = train.iter().position(|t| t.shape() != first.shape()) {
            return Err(LshrError::Dimension(format!(
                "training images must share one size to batch; image {odd} is {:?}, image 0 is {:?}",
                odd_shape(&train[odd]),
                odd_shape(first)
            )));
        }
    }
    if !val.is_empty() {
        check_sizes(&val, &cfg.network, "validation")?;
    }
    Ok((train, val))
}

fn odd_shape<T: Real>(t: &Tensor<T>) -> Vec<usize> {
    t.shape()[2..].to_vec()
}

fn test_set<T: Real>(cfg: &RunConfig, net: &NetworkConfig) -> lshr_core::Result<Vec<Tensor<T>>> {
    let images = match &cfg.data.test_dir {
        Some(dir) => pixels(dir)?,
        None => {
            let s = synthetic(cfg);
            synthetic_digits(s.test, s.size, s.seed + 2)
        }
    };
    check_sizes(&images, net, "test")?;
    Ok(images)
}

fn prepare_data(cfg: &RunConfig) -> anyhow::Result<()> {
    let d = &cfg.data;
    let dir = d
        .train_dir
        .as_ref()
        .ok_or_else(|| LshrError::Usage("prepare-data needs data.train_dir".into()))?;
    let images = load_dir::<f32>(dir)?;
    let (patches, skipped) = prepare_patches(&images, d.crops_per_image, d.crop_size, cfg.train.seed)?;
    if patches.is_empty() {
        return Err(LshrError::Usage(format!("no image in {} is at least {} pixels on a side", dir.display(), d.crop_size)).into());
    }
    let out = cfg.output_dir.join("patches.lshrptch");
    save_patches(&out, &patches)?;
    println!(
        "{} patches of {}x{} from {} images ({skipped} skipped as too small) -> {}",
        patches.len(),
        d.crop_size,
        d.crop_size,
        images.len() - skipped,
        out.display()
    );
    Ok(())
}

fn train<T: Real>(cfg: &RunConfig) -> anyhow::Result<()> {
    let (train_set, val_set) = training_sets::<T>(cfg)?;
    log::info!("{} training and {} validation images", train_set.len(), val_set.len());
    let params = ModelParams::<T>::init(&cfg.network, cfg.train.seed)?;
    let mut trainer = Trainer::new(cfg.network.clone(), cfg.train.clone(), params)?;
    let out = cfg.output_dir.clone();
    let save = |t: &Trainer<T>| -> lshr_core::Result<()> {
        let ckpt = Checkpoint {
            network: t.network.clone(),
            train: Some(t.config.clone()),
            step: t.step_count(),
            params: t.params.clone(),
            adam: Some(t.adam.clone()),
        };
        ckpt.save(&out.join(CHECKPOINT))?;
        emit_curves(&t.history, &out)
    };
    trainer.run(&train_set, &val_set, |t, _| save(t))?;
    save(&trainer)?;
    let last = trainer.history.epochs.last();
    println!(
        "trained {} steps; final train loss {}; validation {}; checkpoint {}",
        trainer.step_count(),
        last.map_or("n/a".into(), |e| format!("{:.6}", e.train_loss)),
        last.and_then(|e| e.val)
            .map_or("n/a".into(), |v| format!("loss {:.6}, PSNR {:.3} dB", v.loss, v.psnr)),
        out.join(CHECKPOINT).display()
    );
    Ok(())
}

fn evaluate_cmd<T: Real>(cfg: &RunConfig, bytes: &[u8]) -> anyhow::Result<()> {
    let ckpt = Checkpoint::<T>::decode(bytes)?;
    let images = test_set::<T>(cfg, &ckpt.network)?;
    let report = evaluate(&ckpt.params, &ckpt.network, &images, None)?;
    let base = bicubic_baseline(&images, ckpt.network.scale, None)?;
    let secs = time_reconstruction(&ckpt.params, &ckpt.network, &images, cfg.eval.timing_reps)?;
    write_atomic(&cfg.output_dir.join("eval.csv"), &report_csv(&report)?)?;
    write_atomic(&cfg.output_dir.join("eval_bicubic.csv"), &report_csv(&base)?)?;
    let summary = format!(
        "method,ratio,images,mean_psnr,excluded_infinite,seconds_per_image\nlshr,{},{},{},{},{}\nbicubic,,{},{},{},\n",
        ckpt.network.ratio,
        report.per_image.len(),
        report.mean_psnr,
        report.excluded_infinite,
        secs,
        base.per_image.len(),
        base.mean_psnr,
        base.excluded_infinite
    );
    write_atomic(&cfg.output_dir.join("eval_summary.csv"), summary.as_bytes())?;
    println!(
        "{} images: LSHR {:.3} dB, bicubic {:.3} dB, {:.6} s/image",
        report.per_image.len(),
        report.mean_psnr,
        base.mean_psnr,
        secs
    );
    Ok(())
}

fn sparsify_eval<T: Real>(cfg: &RunConfig, bytes: &[u8]) -> anyhow::Result<()> {
    let ckpt = Checkpoint::<T>::decode(bytes)?;
    let images = test_set::<T>(cfg, &ckpt.network)?;
    let mut csv = String::from("keep_fraction,lshr_psnr,bicubic_psnr\n");
    for &keep in &cfg.eval.keep_fractions {
        let model = evaluate(&ckpt.params, &ckpt.network, &images, Some(keep))?;
        let base = bicubic_baseline(&images, ckpt.network.scale, Some(keep))?;
        writeln!(csv, "{keep},{},{}", model.mean_psnr, base.mean_psnr)?;
        println!("keep {:>5.1}%: LSHR {:.3} dB, bicubic {:.3} dB", keep * 100.0, model.mean_psnr, base.mean_psnr);
    }
    write_atomic(&cfg.output_dir.join("sparsify.csv"), csv.as_bytes())?;
    Ok(())
}

fn export_cmd<T: Real>(cfg: &RunConfig, bytes: &[u8]) -> anyhow::Result<()> {
    let ckpt = Checkpoint::<T>::decode(bytes)?;
    let path = cfg.output_dir.join(PATTERNS);
    let set = export_patterns(&ckpt.params.bank, &path)?;
    println!("{} patterns of {}x{} -> {}", set.count(), set.kernel_size, set.kernel_size, path.display());
    Ok(())
}

fn simulate(cfg: &RunConfig, patterns: Option<PathBuf>, image: &Path, frames: u64, sensing: bool) -> anyhow::Result<()> {
    let patterns = import_patterns(&patterns.unwrap_or_else(|| cfg.output_dir.join(PATTERNS)))?;
    let scene = load_grayscale::<f64>(image)?.pixels;
    let scene = if sensing { scene } else { downscale(&scene, cfg.network.scale)? };
    let ideal = ideal_measurements(&scene, &patterns)?;
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
    for frame in 0..frames {
        let f = simulate_spc(&scene, &patterns, &cfg.simulate, frame)?;
        let path = cfg.output_dir.join(format!("{stem}.frame{frame}.csv"));
        write_measurements(&path, &f.header, &f.records)?;
        let cal = Calibration {
            gain: f.header.gain,
            offset: f.header.offset,
        };
        let measured: Vec<f64> = f.records.iter().map(|r| cal.apply(r.adc_count)).collect();
        println!(
            "frame {frame}: {} readings, {} saturated, SNR {:.2} dB -> {}",
            f.records.len(),
            f.saturated,
            empirical_snr_db(ideal.data(), &measured),
            path.display()
        );
    }
    Ok(())
}

fn reconstruct<T: Real>(
    cfg: &RunConfig,
    bytes: &[u8],
    measurements: &Path,
    reference: Option<&Path>,
    calibration: Option<Calibration>,
) -> anyhow::Result<()> {
    let ckpt = Checkpoint::<T>::decode(bytes)?;
    let (header, y) = import_measurements::<T>(measurements, calibration)?;
    if header.kernel_size != ckpt.network.kernel_size {
        return Err(LshrError::Config(format!(
            "measurements use {}x{} patterns, the model {}x{}",
            header.kernel_size, header.kernel_size, ckpt.network.kernel_size, ckpt.network.kernel_size
        ))
        .into());
    }
    let image = reconstruct_from_measurements(&y, &ckpt.params, &ckpt.network)?;
    let stem = measurements.file_stem().and_then(|s| s.to_str()).unwrap_or("measurements");
    let png = cfg.output_dir.join(format!("{stem}.png"));
    save_png(&png, &image)?;
    let db = match reference {
        Some(r) => {
            let truth = load_grayscale::<T>(r)?.pixels;
            Some(psnr(&image, &truth, 1.0)?)
        }
        None => None,
    };
    let report = cfg.output_dir.join("reconstruct.csv");
    let mut text = if report.exists() {
        String::from_utf8(read_file(&report)?).context("reconstruct.csv is not UTF-8")?
    } else {
        String::from("measurements,output,psnr\n")
    };
    let db_text = db.map_or(String::new(), |d| d.to_string());
    writeln!(text, "{},{},{db_text}", measurements.display(), png.display())?;
    write_atomic(&report, text.as_bytes())?;
    match db {
        Some(d) => println!("{} -> {} (PSNR {d:.3} dB)", measurements.display(), png.display()),
        None => println!("{} -> {}", measurements.display(), png.display()),
    }
    Ok(())
}

fn complexity_cmd(cfg: &RunConfig, height: Option<usize>, width: Option<usize>) -> anyhow::Result<()> {
    let h = height.unwrap_or(cfg.network.image_size);
    let w = width.unwrap_or(h);
    let r = complexity(&cfg.network, h, w)?;
    let json = serde_json::to_string_pretty(&r)?;
    write_atomic(&cfg.output_dir.join("complexity.json"), json.as_bytes())?;
    println!(
        "{h}x{w} at R={}: m={} space {} time {} ({} weights per kernel, {} total, {}-bit)",
        cfg.network.ratio, r.c_in, r.space, r.time, r.weights_per_kernel, r.weights_total, r.weight_format_bits
    );
    Ok(())
}

fn sweep<T: Real>(cfg: &RunConfig) -> anyhow::Result<()> {
    let (train_set, _) = training_sets::<T>(cfg)?;
    let test = test_set::<T>(cfg, &cfg.network)?;
    let rows = sweep_blocks(&train_set, &test, &cfg.network, &cfg.train, &cfg.eval.sweep_blocks, cfg.eval.timing_reps)?;
    write_atomic(&cfg.output_dir.join("sweep.csv"), &sweep_csv(&rows)?)?;
    for r in &rows {
        println!("blocks {:>3}: {:.3} dB, {:.6} s/image", r.blocks, r.mean_psnr, r.seconds_per_image);
    }
    Ok(())
}
