//! Dataset generation and the trained/tuned/truncated pipeline stages.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, CoreResult};
use crate::hyperopt::{optimize_with, validation_objective, write_history_csv};
use crate::metrics::{denoising_gain, DenoisingReport};
use crate::model_io::{load_model, save_model};
use crate::noise::{add_noise, NoiseSpec, NoisyTrajectory};
use crate::pruning::{prune_edges, prune_nodes};
use crate::reservoir::{build_reservoir, EchoStateNetwork, HyperParams};
use crate::seeding::{derive_seed, tag};
use crate::training::{calibrate, predict, validation_nmse, FitData};
use crate::trajectory::Trajectory;

use super::config::ExperimentConfig;
use super::manifest::RunManifest;

/// Pipeline stage: fixed reservoir, hyper-tuned, or tuned-then-pruned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Trained,
    Tuned,
    Truncated,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Trained => "trained",
            Stage::Tuned => "tuned",
            Stage::Truncated => "truncated",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trained" => Ok(Stage::Trained),
            "tuned" => Ok(Stage::Tuned),
            "truncated" => Ok(Stage::Truncated),
            other => Err(CoreError::Config(format!(
                "unknown stage '{other}' (expected trained|tuned|truncated)"
            ))),
        }
    }
}

fn fmt_num(v: f64) -> String {
    let mut s = format!("{v}");
    if let Some(stripped) = s.strip_suffix(".0") {
        s = stripped.to_string();
    }
    s.replace('-', "m")
}

/// Paths of the generated dataset under one output directory.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    out_dir: PathBuf,
}

impl DatasetLayout {
    pub fn new(out_dir: &Path) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn clean_path(&self) -> PathBuf {
        self.data_dir().join("clean.csv")
    }

    pub fn spikes_path(&self) -> PathBuf {
        self.data_dir().join("clean_spikes.csv")
    }

    fn noise_tag(exponent: f64, snr: f64, seed: u64) -> String {
        format!("exp{}_snr{}_seed{}", fmt_num(exponent), fmt_num(snr), seed)
    }

    pub fn noisy_path(&self, exponent: f64, snr: f64, seed: u64) -> PathBuf {
        self.data_dir().join(format!(
            "noisy_{}.csv",
            Self::noise_tag(exponent, snr, seed)
        ))
    }

    pub fn noise_path(&self, exponent: f64, snr: f64, seed: u64) -> PathBuf {
        self.data_dir().join(format!(
            "noise_{}.csv",
            Self::noise_tag(exponent, snr, seed)
        ))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }

    pub fn model_path(&self, stage: Stage, exponent: f64, snr: f64, seed: u64) -> PathBuf {
        self.models_dir().join(format!(
            "{}_{}.json",
            stage,
            Self::noise_tag(exponent, snr, seed)
        ))
    }

    pub fn report_path(&self, stage: Stage, exponent: f64, snr: f64, seed: u64) -> PathBuf {
        self.reports_dir().join(format!(
            "{}_{}.json",
            stage,
            Self::noise_tag(exponent, snr, seed)
        ))
    }

    pub fn history_path(&self, exponent: f64, snr: f64, seed: u64) -> PathBuf {
        self.reports_dir().join(format!(
            "history_{}.csv",
            Self::noise_tag(exponent, snr, seed)
        ))
    }

    pub fn audit_path(&self, kind: &str, exponent: f64, snr: f64, seed: u64) -> PathBuf {
        self.reports_dir().join(format!(
            "audit_{kind}_{}.csv",
            Self::noise_tag(exponent, snr, seed)
        ))
    }
}

/// Deterministic sub-seed for one noise realization of the dataset.
pub fn noise_seed(seed: u64, exponent: f64, snr: f64) -> u64 {
    derive_seed(
        seed,
        &[tag("dataset-noise"), exponent.to_bits(), snr.to_bits()],
    )
}

pub(crate) fn make_noisy_observed(
    config: &ExperimentConfig,
    clean: &Trajectory,
    exponent: f64,
    snr: f64,
    seed: u64,
) -> CoreResult<NoisyTrajectory> {
    let observed = clean.select_channels(&config.observed_channels)?;
    let spec = NoiseSpec::new(exponent, snr, noise_seed(seed, exponent, snr))?;
    add_noise(&observed, &spec)
}

/// Generates the clean trajectory and every (noise level x seed) noisy
/// variant as CSV files, finishing with a manifest.
pub fn generate_dataset(config: &ExperimentConfig) -> CoreResult<(DatasetLayout, RunManifest)> {
    config.validate()?;
    let layout = DatasetLayout::new(&config.out_dir);
    std::fs::create_dir_all(layout.data_dir())?;

    let clean = config.system.generate(config.dt, config.duration)?;
    clean.write_csv(&layout.clean_path())?;
    let mut artifacts = vec![layout.clean_path()];
    if clean.spike_times().is_some() {
        clean.write_spike_csv(&layout.spikes_path())?;
        artifacts.push(layout.spikes_path());
    }

    let mut levels: Vec<f64> = Vec::new();
    for &snr in config.noise.train_snr.iter().chain(&config.noise.test_snr) {
        if !levels.iter().any(|l| l.to_bits() == snr.to_bits()) {
            levels.push(snr);
        }
    }
    let exponent = config.noise.exponent;
    for &seed in &config.seeds {
        for &snr in &levels {
            let noisy = make_noisy_observed(config, &clean, exponent, snr, seed)?;
            let noisy_path = layout.noisy_path(exponent, snr, seed);
            let noise_path = layout.noise_path(exponent, snr, seed);
            noisy.noisy.write_csv(&noisy_path)?;
            noisy.noise.write_csv(&noise_path)?;
            artifacts.push(noisy_path);
            artifacts.push(noise_path);
        }
    }
    let manifest = RunManifest::write(&config.out_dir, "generate", config, artifacts)?;
    Ok((layout, manifest))
}

/// Splits the full-duration clean/noisy series into the train/validation
/// sequence pair used by fitting and evaluation.
pub(crate) fn split_fit_data(
    config: &ExperimentConfig,
    clean: &Trajectory,
    noisy_observed: &Trajectory,
) -> CoreResult<FitData> {
    let targets = clean.select_channels(&config.target_channels)?;
    let n_train = config.train_rows();
    let total = clean.len();
    if noisy_observed.len() != total {
        return Err(CoreError::invalid(
            "noisy series length does not match the clean trajectory",
        ));
    }
    FitData::single(
        noisy_observed.slice_rows(0, n_train)?,
        targets.slice_rows(0, n_train)?,
        noisy_observed.slice_rows(n_train, total - n_train)?,
        targets.slice_rows(n_train, total - n_train)?,
    )
}

/// Validation NMSE over the target channels plus the denoising report
/// over the observed channels, washout rows excluded from both.
pub(crate) fn evaluate_model(
    esn: &EchoStateNetwork,
    data: &FitData,
    observed: &[String],
) -> CoreResult<(f64, DenoisingReport)> {
    let nmse = validation_nmse(esn, &data.val)?;
    let pair = &data.val[0];
    let prediction = predict(esn, &pair.input)?;
    let skip = prediction.washout.min(pair.input.len().saturating_sub(1));
    let rows = pair.input.len() - skip;
    let recon = prediction
        .output
        .slice_rows(skip, rows)?
        .select_channels(observed)?;
    let clean_obs = pair
        .target
        .slice_rows(skip, rows)?
        .select_channels(observed)?;
    let test_input = pair.input.slice_rows(skip, rows)?;
    let report = denoising_gain(&clean_obs, &test_input, &recon)?;
    Ok((nmse, report))
}

/// Metadata written beside every stage model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub stage: String,
    pub seed: u64,
    pub snr: f64,
    pub exponent: f64,
    /// Validation NMSE over all target channels.
    pub nmse: f64,
    pub lambda: Option<f64>,
    pub phi: HyperParams,
    pub n_nodes: usize,
    pub edges: usize,
    pub denoising: DenoisingReport,
    pub model_file: String,
    pub seconds: f64,
}

impl RunReport {
    pub fn read(path: &Path) -> CoreResult<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CoreError::Parse(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub stage: Stage,
    pub reports: Vec<RunReport>,
    /// Mean validation NMSE per training SNR level, seed-averaged.
    pub mean_nmse: Vec<(f64, f64)>,
}

fn require_file(path: &Path) -> CoreResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CoreError::Orchestration(format!(
            "missing dependency {} (generate the dataset or run the earlier stage first)",
            path.display()
        )))
    }
}

struct CellOutcome {
    report: RunReport,
    artifacts: Vec<PathBuf>,
}

/// Builds a reservoir with the configured washout, bias constant, and
/// input channel labels.
pub(crate) fn prepared_reservoir(
    config: &ExperimentConfig,
    phi: &HyperParams,
    seed: u64,
) -> CoreResult<EchoStateNetwork> {
    let mut esn = build_reservoir(phi, config.observed_channels.len(), seed)?;
    esn.set_washout(config.washout);
    esn.set_bias(nalgebra::DVector::from_element(phi.n_nodes, config.bias))?;
    esn.set_input_channels(config.observed_channels.clone())?;
    Ok(esn)
}

fn run_cell(
    config: &ExperimentConfig,
    layout: &DatasetLayout,
    clean: &Trajectory,
    stage: Stage,
    snr: f64,
    seed: u64,
) -> CoreResult<CellOutcome> {
    let started = Instant::now();
    let exponent = config.noise.exponent;
    let noisy_path = layout.noisy_path(exponent, snr, seed);
    require_file(&noisy_path)?;
    let noisy = Trajectory::read_csv(&noisy_path)?;
    let data = split_fit_data(config, clean, &noisy)?;
    let mut artifacts: Vec<PathBuf> = Vec::new();

    let (esn, lambda) = match stage {
        Stage::Trained => {
            let phi = config.trained.hyper_params();
            let mut esn = prepared_reservoir(config, &phi, seed)?;
            let cal = calibrate(&mut esn, &data, &config.ridge)?;
            (esn, Some(cal.lambda))
        }
        Stage::Tuned => {
            let master = derive_seed(seed, &[tag("hyperopt")]);
            let objective =
                validation_objective(&data, &config.ridge, seed, config.washout, config.bias);
            let outcome = optimize_with(
                &config.hyperopt.space,
                objective,
                config.hyperopt.budget,
                master,
                config.hyperopt.strategy,
            )?;
            let history_path = layout.history_path(exponent, snr, seed);
            write_history_csv(&outcome.history, &history_path)?;
            artifacts.push(history_path);
            let mut esn = prepared_reservoir(config, &outcome.best, seed)?;
            let cal = calibrate(&mut esn, &data, &config.ridge)?;
            (esn, Some(cal.lambda))
        }
        Stage::Truncated => {
            let tuned_path = layout.model_path(Stage::Tuned, exponent, snr, seed);
            require_file(&tuned_path)?;
            let mut esn = load_model(&tuned_path)?;
            if config.prune.prune_nodes {
                let (pruned, audit) =
                    prune_nodes(&esn, &data, &config.ridge, &config.prune.config)?;
                let path = layout.audit_path("nodes", exponent, snr, seed);
                audit.write_csv(&path)?;
                artifacts.push(path);
                esn = pruned;
            }
            if config.prune.prune_edges {
                let (pruned, audit) =
                    prune_edges(&esn, &data, &config.ridge, &config.prune.config)?;
                let path = layout.audit_path("edges", exponent, snr, seed);
                audit.write_csv(&path)?;
                artifacts.push(path);
                esn = pruned;
            }
            if config.prune.retune {
                esn = crate::pruning::retune_dynamics(&esn, &data, &config.ridge)?.0;
            }
            (esn, None)
        }
    };

    let (nmse, denoising) = evaluate_model(&esn, &data, &config.observed_channels)?;
    let model_path = layout.model_path(stage, exponent, snr, seed);
    save_model(&esn, &model_path)?;
    artifacts.push(model_path.clone());

    let report = RunReport {
        stage: stage.as_str().to_string(),
        seed,
        snr,
        exponent,
        nmse,
        lambda,
        phi: *esn.hyper(),
        n_nodes: esn.n_nodes(),
        edges: esn.edge_count(),
        denoising,
        model_file: model_path.to_string_lossy().into_owned(),
        seconds: started.elapsed().as_secs_f64(),
    };
    let report_path = layout.report_path(stage, exponent, snr, seed);
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).map_err(|e| CoreError::Parse(e.to_string()))?,
    )?;
    artifacts.push(report_path);
    Ok(CellOutcome { report, artifacts })
}

/// Runs one pipeline stage for every training SNR level and seed.
///
/// `trained` fits the readout of the fixed baseline reservoir, `tuned`
/// optimizes the hyperparameters first, and `truncated` prunes the saved
/// tuned model. Each cell writes its model and report; a manifest commits
/// the run.
pub fn run_pipeline(config: &ExperimentConfig, stage: Stage) -> CoreResult<PipelineOutcome> {
    config.validate()?;
    let layout = DatasetLayout::new(&config.out_dir);
    require_file(&layout.clean_path())?;
    let clean = Trajectory::read_csv(&layout.clean_path())?;
    std::fs::create_dir_all(layout.models_dir())?;
    std::fs::create_dir_all(layout.reports_dir())?;

    let cells: Vec<(f64, u64)> = config
        .noise
        .train_snr
        .iter()
        .flat_map(|&snr| config.seeds.iter().map(move |&seed| (snr, seed)))
        .collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(snr, seed)| run_cell(config, &layout, &clean, stage, snr, seed))
        .collect::<CoreResult<_>>()?;

    let mut artifacts = Vec::new();
    let mut reports = Vec::new();
    for cell in outcomes {
        artifacts.extend(cell.artifacts);
        reports.push(cell.report);
    }
    let mean_nmse = config
        .noise
        .train_snr
        .iter()
        .map(|&snr| {
            let values: Vec<f64> = reports
                .iter()
                .filter(|r| r.snr.to_bits() == snr.to_bits())
                .map(|r| r.nmse)
                .collect();
            (snr, values.iter().sum::<f64>() / values.len() as f64)
        })
        .collect();
    RunManifest::write(&config.out_dir, stage.as_str(), config, artifacts.clone())?;
    Ok(PipelineOutcome {
        stage,
        reports,
        mean_nmse,
    })
}

/// Applies a saved model to an input series: writes the denoised CSV and,
/// when ground truth is supplied, returns the denoising report (washout
/// rows excluded).
pub fn denoise_file(
    model_path: &Path,
    input_path: &Path,
    truth_path: Option<&Path>,
    output_path: &Path,
) -> CoreResult<Option<DenoisingReport>> {
    require_file(model_path)?;
    require_file(input_path)?;
    let esn = load_model(model_path)?;
    let input = Trajectory::read_csv(input_path)?;
    if input.num_channels() != esn.input_dim() {
        return Err(CoreError::invalid(format!(
            "input has {} channels but the model expects {}",
            input.num_channels(),
            esn.input_dim()
        )));
    }
    let prediction = predict(&esn, &input)?;
    if let Some(parent) = output_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    prediction.output.write_csv(output_path)?;

    let Some(truth_path) = truth_path else {
        return Ok(None);
    };
    require_file(truth_path)?;
    let truth = Trajectory::read_csv(truth_path)?;
    if truth.len() != input.len() {
        return Err(CoreError::invalid(
            "truth series length does not match the input",
        ));
    }
    let skip = prediction.washout.min(input.len().saturating_sub(1));
    let rows = input.len() - skip;
    let observed = input.channel_names().to_vec();
    let clean_obs = truth.slice_rows(skip, rows)?.select_channels(&observed)?;
    let recon_obs = prediction
        .output
        .slice_rows(skip, rows)?
        .select_channels(&observed)?;
    let test_input = input.slice_rows(skip, rows)?;
    Ok(Some(denoising_gain(&clean_obs, &test_input, &recon_obs)?))
}
