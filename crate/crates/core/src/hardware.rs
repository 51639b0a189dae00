//! The device boundary: pattern files for the micromirror array,
//! photodiode measurement files, and a single-pixel camera simulator.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lshr_tensor::{Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LshrError, Result};
use crate::io::{put_u32, read_file, seal, unseal, write_atomic, Reader};
use crate::sensing::{check_sensing_input, PatternBank};

const PATTERN_MAGIC: &[u8; 8] = b"LSHRPATS";
const PATTERN_VERSION: u32 = 1;
pub const MEASUREMENT_VERSION: u32 = 1;

/// Binary patterns as displayed by the device, row-major per pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternSet {
    pub kernel_size: usize,
    pub patterns: Vec<Vec<bool>>,
}

impl PatternSet {
    pub fn from_bank<T: Real>(bank: &PatternBank<T>) -> Self {
        PatternSet {
            kernel_size: bank.kernel_size(),
            patterns: (0..bank.pattern_count()).map(|i| bank.pattern_bits(i)).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.patterns.len()
    }

    /// `{0, 1}` kernel tensor `[m, 1, K, K]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let k = self.kernel_size;
        let flat: Vec<T> = self
            .patterns
            .iter()
            .flatten()
            .map(|&b| if b { T::one() } else { T::zero() })
            .collect();
        Tensor::new([self.count(), 1, k, k], flat).expect("pattern set is rectangular")
    }

    fn bytes_per_pattern(&self) -> usize {
        (self.kernel_size * self.kernel_size).div_ceil(8)
    }

    /// File layout: magic `LSHRPATS`, then version, `K` and `m` as
    /// little-endian u32, then each pattern packed MSB-first and padded to
    /// a whole byte, then a CRC-32 of everything before it.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = PATTERN_MAGIC.to_vec();
        put_u32(&mut out, PATTERN_VERSION);
        put_u32(&mut out, self.kernel_size as u32);
        put_u32(&mut out, self.count() as u32);
        for p in &self.patterns {
            let mut packed = vec![0u8; self.bytes_per_pattern()];
            for (i, &bit) in p.iter().enumerate() {
                if bit {
                    packed[i / 8] |= 0x80 >> (i % 8);
                }
            }
            out.extend_from_slice(&packed);
        }
        seal(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let body = unseal(bytes, "pattern file")?;
        let mut r = Reader::new(body, "pattern file");
        if r.take(8)? != PATTERN_MAGIC {
            return Err(LshrError::Format("not a pattern file".into()));
        }
        let version = r.u32()?;
        if version != PATTERN_VERSION {
            return Err(LshrError::Format(format!("pattern file version {version} is not supported")));
        }
        let k = r.u32()? as usize;
        let m = r.u32()? as usize;
        if k == 0 || m == 0 {
            return Err(LshrError::Format(format!("pattern file declares K={k}, m={m}")));
        }
        let mut set = PatternSet {
            kernel_size: k,
            patterns: Vec::with_capacity(m),
        };
        let per = set.bytes_per_pattern();
        for _ in 0..m {
            let packed = r.take(per)?;
            set.patterns
                .push((0..k * k).map(|i| packed[i / 8] & (0x80 >> (i % 8)) != 0).collect());
        }
        if !r.is_done() {
            return Err(LshrError::Corrupt("trailing bytes in pattern file".into()));
        }
        Ok(set)
    }
}

pub fn export_patterns<T: Real>(bank: &PatternBank<T>, path: &Path) -> Result<PatternSet> {
    let set = PatternSet::from_bank(bank);
    write_atomic(path, &set.encode())?;
    Ok(set)
}

pub fn import_patterns(path: &Path) -> Result<PatternSet> {
    PatternSet::decode(&read_file(path)?)
}

/// One ADC reading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub pattern_index: usize,
    pub block_row: usize,
    pub block_col: usize,
    pub adc_count: u32,
}

/// Sidecar metadata of a measurement file. Readings convert to light
/// values as `gain * adc_count + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementHeader {
    pub version: u32,
    pub m: usize,
    pub kernel_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub adc_bits: u32,
    pub gain: f64,
    pub offset: f64,
}

/// Affine count-to-value map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gain: f64,
    pub offset: f64,
}

impl Calibration {
    pub fn identity() -> Self {
        Calibration { gain: 1.0, offset: 0.0 }
    }

    /// From mean readings of an all-mirrors-off frame (true value 0) and an
    /// all-mirrors-on frame of known value `on_value`.
    pub fn from_references(off: &[u32], on: &[u32], on_value: f64) -> Result<Self> {
        let mean = |v: &[u32]| v.iter().map(|&c| c as f64).sum::<f64>() / v.len().max(1) as f64;
        if off.is_empty() || on.is_empty() {
            return Err(LshrError::Validation("reference frames must not be empty".into()));
        }
        let (c0, c1) = (mean(off), mean(on));
        if c1 <= c0 {
            return Err(LshrError::Validation(format!(
                "on-frame mean {c1} is not above off-frame mean {c0}"
            )));
        }
        let gain = on_value / (c1 - c0);
        Ok(Calibration {
            gain,
            offset: -gain * c0,
        })
    }

    pub fn apply(&self, count: u32) -> f64 {
        self.gain * count as f64 + self.offset
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Target per-frame SNR in dB; `None` is noiseless.
    pub snr_db: Option<f64>,
    pub adc_bits: u32,
    /// Input value mapped to the top of the ADC range; `None` uses `K²`,
    /// the reading of a fully lit block of a white scene.
    pub full_scale: Option<f64>,
    /// Constant pedestal added before quantization, as a photodiode dark
    /// level would.
    pub dark_offset: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            snr_db: None,
            adc_bits: 10,
            full_scale: None,
            dark_offset: 0.0,
            seed: 0,
        }
    }
}

/// One simulated acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub header: MeasurementHeader,
    pub records: Vec<MeasurementRecord>,
    /// Readings clamped at either end of the ADC range.
    pub saturated: usize,
}

/// Noise-free measurements of a sensing-resolution image: for each
/// pattern and block, the sum of pixels under the pattern's ones.
pub fn ideal_measurements(image: &Tensor<f64>, patterns: &PatternSet) -> Result<Tensor<f64>> {
    check_sensing_input(image, patterns.kernel_size)?;
    let [b, _, _, _] = image.dims4()?;
    if b != 1 {
        return Err(LshrError::Dimension(format!("simulate one image at a time, got batch {b}")));
    }
    let k = patterns.kernel_size;
    Ok(lshr_tensor::conv2d(
        image,
        &patterns.to_tensor(),
        None,
        lshr_tensor::ConvSpec::valid(k),
    )?)
}

/// Simulates one frame `frame` of the single-pixel camera on a
/// sensing-resolution image `[1, 1, H, W]`. Each frame draws its noise
/// from its own seeded stream.
pub fn simulate_spc(image: &Tensor<f64>, patterns: &PatternSet, config: &SimConfig, frame: u64) -> Result<Frame> {
    let k = patterns.kernel_size;
    let full_scale = config.full_scale.unwrap_or((k * k) as f64);
    if !(full_scale > 0.0) || config.adc_bits == 0 || config.adc_bits > 24 {
        return Err(LshrError::Config(format!(
            "need full_scale > 0 and 1..=24 ADC bits, got {full_scale} and {}",
            config.adc_bits
        )));
    }
    let ideal = ideal_measurements(image, patterns)?;
    let [_, m, rows, cols] = ideal.dims4()?;
    let mut values = ideal.data().to_vec();
    if let Some(snr) = config.snr_db {
        let power = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(frame);
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            for v in &mut values {
                *v += normal.sample(&mut rng);
            }
        }
    }
    let levels = 1u64 << config.adc_bits;
    let lsb = full_scale / levels as f64;
    let mut saturated = 0;
    let mut records = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let raw = ((v + config.dark_offset) / lsb).floor();
        let count = raw.clamp(0.0, (levels - 1) as f64);
        if count != raw {
            saturated += 1;
        }
        records.push(MeasurementRecord {
            pattern_index: i / (rows * cols),
            block_row: (i / cols) % rows,
            block_col: i % cols,
            adc_count: count as u32,
        });
    }
    if saturated > 0 {
        log::warn!("frame {frame}: {saturated} of {} readings clamped by the ADC", records.len());
    }
    Ok(Frame {
        header: MeasurementHeader {
            version: MEASUREMENT_VERSION,
            m,
            kernel_size: k,
            grid_rows: rows,
            grid_cols: cols,
            adc_bits: config.adc_bits,
            gain: lsb,
            offset: lsb / 2.0 - config.dark_offset,
        },
        records,
        saturated,
    })
}

/// `10 log10(signal power / error power)` of `measured` against `ideal`.
pub fn empirical_snr_db(ideal: &[f64], measured: &[f64]) -> f64 {
    let signal: f64 = ideal.iter().map(|v| v * v).sum();
    let noise: f64 = ideal.iter().zip(measured).map(|(a, b)| (a - b) * (a - b)).sum();
    10.0 * (signal / noise).log10()
}

/// Sidecar path of a measurement CSV: the same path with a `.json`
/// extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `pattern_index,block_row,block_col,adc_count` rows and the
/// JSON sidecar header.
pub fn write_measurements(path: &Path, header: &MeasurementHeader, records: &[MeasurementRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pattern_index", "block_row", "block_col", "adc_count"])
        .map_err(|e| LshrError::Format(e.to_string()))?;
    for r in records {
        w.serialize((r.pattern_index, r.block_row, r.block_col, r.adc_count))
            .map_err(|e| LshrError::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| LshrError::Format(e.to_string()))?;
    let json = serde_json::to_vec_pretty(header).expect("header serializes");
    write_atomic(&sidecar_path(path), &json)?;
    write_atomic(path, &bytes)
}

/// Reads a measurement CSV and its sidecar.
pub fn read_measurements(path: &Path) -> Result<(MeasurementHeader, Vec<MeasurementRecord>)> {
    let side = sidecar_path(path);
    let header: MeasurementHeader = serde_json::from_slice(&read_file(&side)?)
        .map_err(|e| LshrError::Format(format!("{}: {e}", side.display())))?;
    if header.version != MEASUREMENT_VERSION {
        return Err(LshrError::Format(format!(
            "measurement format version {} is not supported",
            header.version
        )));
    }
    let bytes = read_file(path)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut records = Vec::new();
    for row in reader.deserialize::<MeasurementRecord>() {
        records.push(row.map_err(|e| LshrError::Format(format!("{}: {e}", path.display())))?);
    }
    Ok((header, records))
}

/// Arranges readings into a `[1, m, rows, cols]` tensor of raw counts,
/// rejecting out-of-range, duplicate, misplaced and missing entries.
pub fn assemble_counts(header: &MeasurementHeader, records: &[MeasurementRecord]) -> Result<Tensor<f64>> {
    let (m, rows, cols) = (header.m, header.grid_rows, header.grid_cols);
    if m == 0 || rows == 0 || cols == 0 {
        return Err(LshrError::Format("measurement header declares an empty grid".into()));
    }
    let max = (1u64 << header.adc_bits) - 1;
    let mut seen = vec![false; m * rows * cols];
    let mut counts = vec![0.0; m * rows * cols];
    for r in records {
        if r.pattern_index >= m || r.block_row >= rows || r.block_col >= cols {
            return Err(LshrError::Validation(format!(
                "entry ({}, {}, {}) lies outside the {m} x {rows} x {cols} grid",
                r.pattern_index, r.block_row, r.block_col
            )));
        }
        if r.adc_count as u64 > max {
            return Err(LshrError::Validation(format!(
                "adc_count {} exceeds the {}-bit range",
                r.adc_count, header.adc_bits
            )));
        }
        let i = (r.pattern_index * rows + r.block_row) * cols + r.block_col;
        if seen[i] {
            return Err(LshrError::DuplicateEntry {
                pattern: r.pattern_index,
                row: r.block_row,
                col: r.block_col,
            });
        }
        seen[i] = true;
        counts[i] = r.adc_count as f64;
    }
    let missing: Vec<(usize, usize, usize)> = seen
        .iter()
        .enumerate()
        .filter(|(_, &s)| !s)
        .map(|(i, _)| (i / (rows * cols), (i / cols) % rows, i % cols))
        .collect();
    if !missing.is_empty() {
        return Err(LshrError::IncompleteFrame { missing });
    }
    Ok(Tensor::new([1, m, rows, cols], counts)?)
}

/// Light values from counts, then divided by `K²` to the scale the network
/// was trained on.
pub fn normalize<T: Real>(counts: &Tensor<f64>, calibration: Calibration, kernel_size: usize) -> Tensor<T> {
    let norm = 1.0 / (kernel_size * kernel_size) as f64;
    let t = counts.map(|c| calibration.apply(c as u32) * norm);
    t.cast()
}

/// Reads a measurement file and returns normalized measurements ready for
/// reconstruction. The sidecar's calibration is used unless `calibration`
/// overrides it.
pub fn import_measurements<T: Real>(path: &Path, calibration: Option<Calibration>) -> Result<(MeasurementHeader, Tensor<T>)> {
    let (header, records) = read_measurements(path)?;
    let counts = assemble_counts(&header, &records)?;
    let cal = calibration.unwrap_or(Calibration {
        gain: header.gain,
        offset: header.offset,
    });
    let y = normalize(&counts, cal, header.kernel_size);
    Ok((header, y))
}

/// Unique `(pattern, row, col)` keys, for callers merging partial files.
pub fn record_keys(records: &[MeasurementRecord]) -> BTreeSet<(usize, usize, usize)> {
    records.iter().map(|r| (r.pattern_index, r.block_row, r.block_col)).collect()
}
