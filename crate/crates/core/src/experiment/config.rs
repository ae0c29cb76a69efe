//! Experiment configuration, loadable from JSON or TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_adex, integrate_lorenz, AdExParams, CurrentProfile, LorenzParams};
use crate::error::{CoreError, CoreResult};
use crate::hyperopt::{NodeRange, SearchSpace, SearchStrategy};
use crate::pruning::PruneConfig;
use crate::reservoir::HyperParams;
use crate::training::RidgeConfig;
use crate::trajectory::Trajectory;

/// Which plant generates the ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemConfig {
    Lorenz {
        #[serde(default)]
        params: LorenzParams,
    },
    Adex {
        #[serde(default)]
        params: AdExParams,
        #[serde(default)]
        current: CurrentProfile,
    },
}

impl SystemConfig {
    pub fn channel_names(&self) -> Vec<String> {
        match self {
            SystemConfig::Lorenz { .. } => vec!["x".into(), "y".into(), "z".into()],
            SystemConfig::Adex { .. } => vec!["V".into(), "w".into()],
        }
    }

    pub fn generate(&self, dt: f64, duration: f64) -> CoreResult<Trajectory> {
        match self {
            SystemConfig::Lorenz { params } => integrate_lorenz(params, dt, duration),
            SystemConfig::Adex { params, current } => integrate_adex(params, current, dt, duration),
        }
    }

    /// Sample rate in Hz: Lorenz time is in seconds, AdEx time in ms.
    pub fn sample_rate_hz(&self, dt: f64) -> f64 {
        match self {
            SystemConfig::Lorenz { .. } => 1.0 / dt,
            SystemConfig::Adex { .. } => 1000.0 / dt,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Spectral exponent of the additive noise (0 = white).
    pub exponent: f64,
    /// SNR levels used to build training sets.
    pub train_snr: Vec<f64>,
    /// SNR levels evaluated at test time.
    pub test_snr: Vec<f64>,
    /// Exponents exercised by the noise-color study.
    pub study_exponents: Vec<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            exponent: 0.0,
            train_snr: vec![4.0],
            test_snr: vec![4.0],
            study_exponents: vec![1.0, 0.0, -1.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperoptConfig {
    pub budget: usize,
    pub space: SearchSpace,
    pub strategy: SearchStrategy,
}

impl Default for HyperoptConfig {
    fn default() -> Self {
        Self {
            budget: 50,
            space: SearchSpace::default(),
            strategy: SearchStrategy::SurrogateAssisted,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneStageConfig {
    #[serde(flatten)]
    pub config: PruneConfig,
    pub prune_nodes: bool,
    pub prune_edges: bool,
    /// Re-tune (leakage, spectral radius) on the truncated topology.
    pub retune: bool,
}

impl Default for PruneStageConfig {
    fn default() -> Self {
        Self {
            config: PruneConfig::default(),
            prune_nodes: true,
            prune_edges: true,
            retune: false,
        }
    }
}

/// Fixed parameters of the untuned baseline (only the readout is fitted).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainedBaseline {
    pub n_nodes: usize,
    pub leakage: f64,
    pub spectral_radius: f64,
    pub input_scaling: f64,
    pub connectivity: f64,
}

impl Default for TrainedBaseline {
    fn default() -> Self {
        Self {
            n_nodes: 500,
            leakage: 1.0,
            spectral_radius: 0.9,
            input_scaling: 1.0,
            connectivity: 0.3,
        }
    }
}

impl TrainedBaseline {
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            n_nodes: self.n_nodes,
            leakage: self.leakage,
            spectral_radius: self.spectral_radius,
            input_scaling: self.input_scaling,
            connectivity: self.connectivity,
        }
    }
}

/// Extra training set for the generalization sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExtraTrainingSet {
    pub sigma: f64,
    pub snr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Prandtl values the validation sets are generated at.
    pub sigma_grid: Vec<f64>,
    /// Test SNR levels per sigma (defaults to the training level).
    pub snr_grid: Vec<f64>,
    pub extra_training: Vec<ExtraTrainingSet>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma_grid: (0..=40).map(|i| i as f64 * 0.5).collect(),
            snr_grid: vec![4.0],
            extra_training: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    /// Step in system time units (seconds for Lorenz, ms for AdEx).
    pub dt: f64,
    pub duration: f64,
    /// Time boundary between training and validation segments.
    pub train_split: f64,
    pub observed_channels: Vec<String>,
    pub target_channels: Vec<String>,
    pub noise: NoiseConfig,
    pub ridge: RidgeConfig,
    pub hyperopt: HyperoptConfig,
    pub prune: PruneStageConfig,
    pub trained: TrainedBaseline,
    pub washout: usize,
    /// Constant node bias applied inside the activation. Zero-mean targets
    /// tolerate zero bias, but reconstructing channels with a DC component
    /// (the Lorenz z channel) needs the asymmetry.
    pub bias: f64,
    /// Study gains default to the pooled-SNR ratio; set this to average
    /// per-channel gains instead.
    pub gain_per_channel: bool,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::Lorenz {
                params: LorenzParams::default(),
            },
            dt: 0.005,
            duration: 50.0,
            train_split: 25.0,
            observed_channels: vec!["x".into(), "y".into()],
            target_channels: vec!["x".into(), "y".into(), "z".into()],
            noise: NoiseConfig::default(),
            ridge: RidgeConfig::default(),
            hyperopt: HyperoptConfig {
                space: SearchSpace::with_nodes(NodeRange::Fixed(500)),
                ..HyperoptConfig::default()
            },
            prune: PruneStageConfig::default(),
            trained: TrainedBaseline::default(),
            washout: 100,
            bias: 0.3,
            gain_per_channel: false,
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("out"),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// The AdEx denoising setup: 100 kHz sampling over 400 ms, both
    /// channels observed, reservoir size free in [50, 100].
    pub fn adex_default() -> Self {
        Self {
            system: SystemConfig::Adex {
                params: AdExParams::default(),
                current: CurrentProfile::default(),
            },
            dt: 0.01,
            duration: 400.0,
            train_split: 200.0,
            observed_channels: vec!["V".into(), "w".into()],
            target_channels: vec!["V".into(), "w".into()],
            noise: NoiseConfig {
                train_snr: vec![10.0],
                test_snr: vec![10.0],
                ..NoiseConfig::default()
            },
            hyperopt: HyperoptConfig {
                space: SearchSpace::with_nodes(NodeRange::Bounded(50, 100)),
                ..HyperoptConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> CoreResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
        let config: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)
                .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?,
            _ => serde_json::from_str(&text)
                .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?,
        };
        config.validate()?;
        Ok(config)
    }

    /// Canonical JSON used for manifest hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Number of rows in the training segment.
    pub fn train_rows(&self) -> usize {
        (self.train_split / self.dt).round() as usize
    }

    pub fn total_rows(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.system.sample_rate_hz(self.dt)
    }

    pub fn validate(&self) -> CoreResult<()> {
        let fail = |msg: String| Err(CoreError::Config(msg));
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return fail(format!("dt must be > 0, got {}", self.dt));
        }
        if self.duration < self.dt {
            return fail("duration must be at least dt".into());
        }
        if self.train_split <= 0.0 || self.train_split >= self.duration {
            return fail(format!(
                "train split {} must lie inside (0, {})",
                self.train_split, self.duration
            ));
        }
        let system_channels = self.system.channel_names();
        for ch in &self.observed_channels {
            if !system_channels.contains(ch) {
                return fail(format!("observed channel '{ch}' is not a system channel"));
            }
        }
        for ch in &self.target_channels {
            if !system_channels.contains(ch) {
                return fail(format!("target channel '{ch}' is not a system channel"));
            }
        }
        if self.observed_channels.is_empty() || self.target_channels.is_empty() {
            return fail("observed and target channel lists must be nonempty".into());
        }
        for ch in &self.observed_channels {
            if !self.target_channels.contains(ch) {
                return fail(format!(
                    "observed channel '{ch}' must also be reconstructed (targets)"
                ));
            }
        }
        if self.noise.train_snr.is_empty() || self.noise.test_snr.is_empty() {
            return fail("noise grids must be nonempty".into());
        }
        if self
            .noise
            .train_snr
            .iter()
            .chain(&self.noise.test_snr)
            .any(|s| *s <= 0.0 || !s.is_finite())
        {
            return fail("SNR levels must be positive".into());
        }
        if self.seeds.is_empty() {
            return fail("need at least one seed".into());
        }
        if self.hyperopt.budget == 0 {
            return fail("hyperopt budget must be >= 1".into());
        }
        self.hyperopt
            .space
            .validate()
            .map_err(|e| CoreError::Config(e.to_string()))?;
        self.ridge
            .validate()
            .map_err(|e| CoreError::Config(e.to_string()))?;
        if self.prune.prune_nodes || self.prune.prune_edges {
            self.prune
                .config
                .validate()
                .map_err(|e| CoreError::Config(e.to_string()))?;
        }
        if !self.bias.is_finite() {
            return fail("bias must be finite".into());
        }
        let train_rows = self.train_rows();
        if train_rows <= self.washout + self.ridge.folds {
            return fail(format!(
                "training segment of {train_rows} rows is too short for washout {} and {} folds",
                self.washout, self.ridge.folds
            ));
        }
        if self.total_rows() - train_rows <= self.washout {
            return fail("validation segment is shorter than the washout".into());
        }
        Ok(())
    }
}
