//! The run configuration file and its command-line overrides.

use std::hash::{BuildHasher, Hasher};
use std::path::{Path, PathBuf};

use lshr_core::hardware::SimConfig;
use lshr_core::network::NetworkConfig;
use lshr_core::sensing::PatternMode;
use lshr_core::training::{Precision, TrainConfig};
use lshr_core::LshrError;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Every artifact of a command lands here.
    pub output_dir: PathBuf,
    /// Seeds every random stream. Overrides `train.seed` and
    /// `simulate.seed`.
    pub seed: Option<u64>,
    /// Without a seed, a non-deterministic run draws one and records it.
    pub deterministic: bool,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub simulate: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/default"),
            seed: None,
            deterministic: false,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            simulate: SimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of PNG/PGM/BMP images.
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    /// Patch archive written by `prepare-data`; preferred over `train_dir`.
    pub patches: Option<PathBuf>,
    /// Share of the training set held out for validation when no
    /// `val_dir` is given.
    pub holdout_fraction: f64,
    pub crops_per_image: usize,
    pub crop_size: usize,
    /// Procedural digits, used when no directories are given.
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_dir: None,
            val_dir: None,
            test_dir: None,
            patches: None,
            holdout_fraction: 0.1,
            crops_per_image: 50,
            crop_size: 256,
            synthetic: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub size: usize,
    /// Data seed, independent of the run seed. The validation and test
    /// sets use `seed + 1` and `seed + 2`.
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train: 1000,
            val: 200,
            test: 200,
            size: 32,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub keep_fractions: Vec<f64>,
    pub timing_reps: usize,
    pub sweep_blocks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            keep_fractions: vec![1.0, 0.2, 0.1, 0.05, 0.01],
            timing_reps: 5,
            sweep_blocks: vec![1, 2, 4, 6, 8, 10],
        }
    }
}

/// Values given on the command line win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ratio: Option<f64>,
    pub mode: Option<PatternMode>,
    pub blocks: Option<usize>,
    pub precision: Option<Precision>,
    pub deterministic: bool,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, LshrError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| LshrError::io(path, e))?;
        toml::from_str(&text).map_err(|e| LshrError::Config(format!("{}: {}", path.display(), e.message())))
    }

    /// Applies overrides, fixes the seed and validates everything.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, LshrError> {
        if let Some(r) = o.ratio {
            self.network.ratio = r;
        }
        if let Some(m) = o.mode {
            self.network.pattern_mode = m;
        }
        if let Some(b) = o.blocks {
            self.network.blocks = b;
        }
        if let Some(p) = o.precision {
            self.train.precision = p;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        self.deterministic |= o.deterministic;
        let seed = match (o.seed.or(self.seed), self.deterministic) {
            (Some(s), _) => s,
            (None, true) => self.train.seed,
            (None, false) => fresh_seed(),
        };
        self.seed = Some(seed);
        self.train.seed = seed;
        self.simulate.seed = seed;
        self.validate()?;
        Ok(self)
    }

    /// Every violated key, joined into one error.
    pub fn validate(&self) -> Result<(), LshrError> {
        let mut problems = Vec::new();
        let mut section = |name: &str, r: Result<(), LshrError>| {
            if let Err(e) = r {
                problems.push(format!("[{name}] {}", e.to_string().trim_start_matches("configuration error: ")));
            }
        };
        section("network", self.network.validate());
        section("train", self.train.validate());
        let d = &self.data;
        if !(0.0..1.0).contains(&d.holdout_fraction) {
            problems.push(format!("[data] holdout_fraction {} outside [0, 1)", d.holdout_fraction));
        }
        if d.crops_per_image == 0 || d.crop_size == 0 {
            problems.push("[data] crops_per_image and crop_size must be >= 1".into());
        }
        if let Some(s) = &d.synthetic {
            if s.train == 0 || s.size == 0 {
                problems.push("[data.synthetic] train and size must be >= 1".into());
            }
        }
        if let Some(f) = self.eval.keep_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            problems.push(format!("[eval] keep fraction {f} outside (0, 1]"));
        }
        if self.eval.sweep_blocks.contains(&0) {
            problems.push("[eval] sweep_blocks entries must be >= 1".into());
        }
        if self.simulate.adc_bits == 0 || self.simulate.adc_bits > 24 {
            problems.push(format!("[simulate] adc_bits {} outside 1..=24", self.simulate.adc_bits));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LshrError::Config(problems.join("; ")))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

/// A seed from the process's random hasher keys, kept below 2^63 so it
/// fits a TOML integer.
fn fresh_seed() -> u64 {
    std::collections::hash_map::RandomState::new().build_hasher().finish() >> 1
}
