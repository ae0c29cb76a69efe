//! Study-level experiment drivers: EKF baseline, denoising-gain matrix,
//! dynamical-parameter sweep, and the noise-color comparison.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_lorenz, LorenzParams};
use crate::ekf::{lorenz_model, run_ekf};
use crate::error::{CoreError, CoreResult};
use crate::hyperopt::{optimize_with, validation_objective};
use crate::metrics::{denoising_gain, welch_psd, DenoisingReport, PsdCurve};
use crate::model_io::save_model;
use crate::pruning::{prune_edges, prune_nodes};
use crate::reservoir::EchoStateNetwork;
use crate::seeding::{derive_seed, tag};
use crate::training::{calibrate, predict, FitData, IoPair};
use crate::trajectory::Trajectory;

use super::config::{ExperimentConfig, SystemConfig};
use super::manifest::RunManifest;
use super::pipeline::{make_noisy_observed, split_fit_data, DatasetLayout, Stage};
use super::plots;

const EKF_Q_GRID: [f64; 7] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];

fn lorenz_params(config: &ExperimentConfig) -> CoreResult<LorenzParams> {
    match &config.system {
        SystemConfig::Lorenz { params } => Ok(*params),
        SystemConfig::Adex { .. } => Err(CoreError::Config(
            "this study requires the lorenz system".into(),
        )),
    }
}

/// Fits the tuned pipeline in memory: hyperparameter search followed by a
/// final calibration with the best tuple.
fn fit_tuned(
    config: &ExperimentConfig,
    data: &FitData,
    seed: u64,
    stream: &[u64],
) -> CoreResult<EchoStateNetwork> {
    let master = derive_seed(seed, stream);
    let objective = validation_objective(data, &config.ridge, seed, config.washout, config.bias);
    let outcome = optimize_with(
        &config.hyperopt.space,
        objective,
        config.hyperopt.budget,
        master,
        config.hyperopt.strategy,
    )?;
    let mut esn = super::pipeline::prepared_reservoir(config, &outcome.best, seed)?;
    calibrate(&mut esn, data, &config.ridge)?;
    Ok(esn)
}

fn fit_truncated(
    config: &ExperimentConfig,
    data: &FitData,
    seed: u64,
    stream: &[u64],
) -> CoreResult<EchoStateNetwork> {
    let mut esn = fit_tuned(config, data, seed, stream)?;
    if config.prune.prune_nodes {
        esn = prune_nodes(&esn, data, &config.ridge, &config.prune.config)?.0;
    }
    if config.prune.prune_edges {
        esn = prune_edges(&esn, data, &config.ridge, &config.prune.config)?.0;
    }
    if config.prune.retune {
        esn = crate::pruning::retune_dynamics(&esn, data, &config.ridge)?.0;
    }
    Ok(esn)
}

/// Gain of a fitted model over one validation pair, washout excluded.
/// Returns the full (pooled) report plus the headline gain under the
/// configured aggregation.
fn gain_on_pair(
    config: &ExperimentConfig,
    esn: &EchoStateNetwork,
    pair: &IoPair,
) -> CoreResult<(DenoisingReport, f64)> {
    let observed = &config.observed_channels;
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
    let headline = if config.gain_per_channel {
        let gains = crate::metrics::per_channel_gains(&clean_obs, &test_input, &recon)?;
        gains.iter().sum::<f64>() / gains.len() as f64
    } else {
        report.denoising_gain
    };
    Ok((report, headline))
}

fn val_pair(
    config: &ExperimentConfig,
    clean: &Trajectory,
    exponent: f64,
    snr: f64,
    seed: u64,
) -> CoreResult<IoPair> {
    let noisy = make_noisy_observed(config, clean, exponent, snr, seed)?;
    let targets = clean.select_channels(&config.target_channels)?;
    let n_train = config.train_rows();
    let rows = clean.len() - n_train;
    IoPair::new(
        noisy.noisy.slice_rows(n_train, rows)?,
        targets.slice_rows(n_train, rows)?,
    )
}

// ---------------------------------------------------------------------
// EKF baseline
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EkfReport {
    pub seed: u64,
    pub snr: f64,
    /// Process-noise intensity selected on the validation segment.
    pub q: f64,
    pub nmse: f64,
    pub denoising: DenoisingReport,
}

#[derive(Debug, Clone)]
pub struct EkfBaselineOutcome {
    pub reports: Vec<EkfReport>,
    pub mean_nmse: Vec<(f64, f64)>,
}

/// Runs the extended Kalman filter over the noisy validation segment for
/// every (SNR, seed) cell. The measurement covariance comes from the
/// known injected noise; the process-noise intensity is picked from a
/// small grid by validation NMSE.
pub fn ekf_baseline(config: &ExperimentConfig) -> CoreResult<EkfBaselineOutcome> {
    config.validate()?;
    let params = lorenz_params(config)?;
    let clean = config.system.generate(config.dt, config.duration)?;
    let layout = DatasetLayout::new(&config.out_dir);
    std::fs::create_dir_all(layout.reports_dir())?;

    let system_channels = config.system.channel_names();
    let observed_idx: Vec<usize> = config
        .observed_channels
        .iter()
        .map(|ch| system_channels.iter().position(|c| c == ch).unwrap())
        .collect();

    let cells: Vec<(f64, u64)> = config
        .noise
        .train_snr
        .iter()
        .flat_map(|&snr| config.seeds.iter().map(move |&seed| (snr, seed)))
        .collect();

    let results: Vec<(EkfReport, PathBuf)> = cells
        .par_iter()
        .map(|&(snr, seed)| -> CoreResult<(EkfReport, PathBuf)> {
            let exponent = config.noise.exponent;
            let noisy = make_noisy_observed(config, &clean, exponent, snr, seed)?;
            let n_train = config.train_rows();
            let rows = clean.len() - n_train;
            let measurements = noisy.noisy.slice_rows(n_train, rows)?;
            let injected = noisy.noise.slice_rows(n_train, rows)?;
            let targets = clean
                .select_channels(&config.target_channels)?
                .slice_rows(n_train, rows)?;
            let clean_obs = clean
                .select_channels(&config.observed_channels)?
                .slice_rows(n_train, rows)?;

            let r_diag: Vec<f64> = (0..injected.num_channels())
                .map(|c| {
                    let col = injected.values().column(c);
                    col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64
                })
                .collect();

            let mut x0 = DVector::from_element(3, params.rho - 1.0);
            for (slot, &ch) in observed_idx.iter().enumerate() {
                x0[ch] = measurements.values()[(0, slot)];
            }
            let mut p0 = DMatrix::identity(3, 3) * 100.0;
            for (slot, &ch) in observed_idx.iter().enumerate() {
                p0[(ch, ch)] = r_diag[slot];
            }

            let skip = config.washout.min(rows.saturating_sub(1));
            let mut best: Option<(f64, f64, Trajectory)> = None;
            for &q in &EKF_Q_GRID {
                let model = lorenz_model(&params, config.dt, q, &r_diag, &observed_idx)?;
                let run = run_ekf(
                    &model,
                    x0.clone(),
                    p0.clone(),
                    &measurements,
                    None,
                    system_channels.clone(),
                )?;
                let estimates = run.estimates.select_channels(&config.target_channels)?;
                let nmse = crate::training::nmse(
                    &estimates.slice_rows(skip, rows - skip)?,
                    &targets.slice_rows(skip, rows - skip)?,
                )?;
                if best.as_ref().map(|(n, _, _)| nmse < *n).unwrap_or(true) {
                    best = Some((nmse, q, run.estimates.clone()));
                    let path = layout
                        .reports_dir()
                        .join(format!("ekf_exp{}_snr{}_seed{}.csv", exponent, snr, seed));
                    run.write_csv(&path)?;
                }
            }
            let (nmse, q, estimates) = best.expect("q grid is nonempty");
            let recon = estimates
                .select_channels(&config.observed_channels)?
                .slice_rows(skip, rows - skip)?;
            let denoising = denoising_gain(
                &clean_obs.slice_rows(skip, rows - skip)?,
                &measurements.slice_rows(skip, rows - skip)?,
                &recon,
            )?;
            let csv_path = layout
                .reports_dir()
                .join(format!("ekf_exp{}_snr{}_seed{}.csv", exponent, snr, seed));
            Ok((
                EkfReport {
                    seed,
                    snr,
                    q,
                    nmse,
                    denoising,
                },
                csv_path,
            ))
        })
        .collect::<CoreResult<_>>()?;

    let reports: Vec<EkfReport> = results.iter().map(|(r, _)| r.clone()).collect();
    let mut artifacts: Vec<PathBuf> = results.into_iter().map(|(_, p)| p).collect();

    let summary = layout.reports_dir().join("ekf_summary.csv");
    {
        let mut w = BufWriter::new(File::create(&summary)?);
        writeln!(w, "snr,seed,q,nmse,gain")?;
        for r in &reports {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e}",
                r.snr, r.seed, r.q, r.nmse, r.denoising.denoising_gain
            )?;
        }
    }
    artifacts.push(summary);

    let mean_nmse = config
        .noise
        .train_snr
        .iter()
        .map(|&snr| {
            let xs: Vec<f64> = reports
                .iter()
                .filter(|r| r.snr.to_bits() == snr.to_bits())
                .map(|r| r.nmse)
                .collect();
            (snr, xs.iter().sum::<f64>() / xs.len() as f64)
        })
        .collect();

    RunManifest::write(&config.out_dir, "ekf", config, artifacts)?;
    Ok(EkfBaselineOutcome { reports, mean_nmse })
}

// ---------------------------------------------------------------------
// Denoising-gain matrix
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainCell {
    pub train_snr: f64,
    pub test_snr: f64,
    pub seed: u64,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct GainMatrixOutcome {
    pub train_levels: Vec<f64>,
    pub test_levels: Vec<f64>,
    /// Seed-averaged gains, rows = train level, columns = test level.
    pub mean_gain: DMatrix<f64>,
    pub cells: Vec<GainCell>,
}

impl GainMatrixOutcome {
    pub fn mean_at(&self, train_snr: f64, test_snr: f64) -> Option<f64> {
        let i = self
            .train_levels
            .iter()
            .position(|l| l.to_bits() == train_snr.to_bits())?;
        let j = self
            .test_levels
            .iter()
            .position(|l| l.to_bits() == test_snr.to_bits())?;
        Some(self.mean_gain[(i, j)])
    }

    /// Max-norm of (G - G^T); only meaningful for identical level grids.
    pub fn asymmetry(&self) -> f64 {
        (&self.mean_gain - self.mean_gain.transpose()).abs().max()
    }
}

/// Trains one tuned reservoir per (training SNR, seed) and evaluates its
/// denoising gain on validation sets at every test SNR.
pub fn gain_matrix(config: &ExperimentConfig) -> CoreResult<GainMatrixOutcome> {
    config.validate()?;
    let clean = config.system.generate(config.dt, config.duration)?;
    let layout = DatasetLayout::new(&config.out_dir);
    std::fs::create_dir_all(layout.reports_dir())?;

    let cells: Vec<(f64, u64)> = config
        .noise
        .train_snr
        .iter()
        .flat_map(|&snr| config.seeds.iter().map(move |&seed| (snr, seed)))
        .collect();
    let exponent = config.noise.exponent;

    let rows: Vec<Vec<GainCell>> = cells
        .par_iter()
        .map(|&(train_snr, seed)| -> CoreResult<Vec<GainCell>> {
            let noisy = make_noisy_observed(config, &clean, exponent, train_snr, seed)?;
            let data = split_fit_data(config, &clean, &noisy.noisy)?;
            let esn = fit_tuned(config, &data, seed, &[tag("hyperopt"), train_snr.to_bits()])?;
            config
                .noise
                .test_snr
                .iter()
                .map(|&test_snr| {
                    let pair = val_pair(config, &clean, exponent, test_snr, seed)?;
                    let (_, gain) = gain_on_pair(config, &esn, &pair)?;
                    Ok(GainCell {
                        train_snr,
                        test_snr,
                        seed,
                        gain,
                    })
                })
                .collect()
        })
        .collect::<CoreResult<_>>()?;
    let cells: Vec<GainCell> = rows.into_iter().flatten().collect();

    let train_levels = config.noise.train_snr.clone();
    let test_levels = config.noise.test_snr.clone();
    let mut mean_gain = DMatrix::zeros(train_levels.len(), test_levels.len());
    for (i, &tr) in train_levels.iter().enumerate() {
        for (j, &te) in test_levels.iter().enumerate() {
            let values: Vec<f64> = cells
                .iter()
                .filter(|c| {
                    c.train_snr.to_bits() == tr.to_bits() && c.test_snr.to_bits() == te.to_bits()
                })
                .map(|c| c.gain)
                .collect();
            mean_gain[(i, j)] = values.iter().sum::<f64>() / values.len() as f64;
        }
    }

    let matrix_csv = layout.reports_dir().join("gain_matrix.csv");
    {
        let mut w = BufWriter::new(File::create(&matrix_csv)?);
        write!(w, "train_snr")?;
        for te in &test_levels {
            write!(w, ",test_{te}")?;
        }
        writeln!(w)?;
        for (i, tr) in train_levels.iter().enumerate() {
            write!(w, "{tr}")?;
            for j in 0..test_levels.len() {
                write!(w, ",{:e}", mean_gain[(i, j)])?;
            }
            writeln!(w)?;
        }
    }
    let cells_csv = layout.reports_dir().join("gain_matrix_cells.csv");
    {
        let mut w = BufWriter::new(File::create(&cells_csv)?);
        writeln!(w, "train_snr,test_snr,seed,gain")?;
        for c in &cells {
            writeln!(w, "{},{},{},{:e}", c.train_snr, c.test_snr, c.seed, c.gain)?;
        }
    }
    let plot = plots::gain_matrix_script(&layout)?;
    RunManifest::write(
        &config.out_dir,
        "gain-matrix",
        config,
        vec![matrix_csv, cells_csv, plot],
    )?;
    Ok(GainMatrixOutcome {
        train_levels,
        test_levels,
        mean_gain,
        cells,
    })
}

// ---------------------------------------------------------------------
// Dynamical-parameter sweep
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub sigma: f64,
    pub snr: f64,
    pub seed: u64,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    /// Local maxima of the clean x channel per sigma (validation segment).
    pub bifurcation: Vec<(f64, f64)>,
}

impl SweepOutcome {
    pub fn mean_gain(&self, sigma: f64, snr: f64) -> Option<f64> {
        let values: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.sigma.to_bits() == sigma.to_bits() && c.snr.to_bits() == snr.to_bits())
            .map(|c| c.gain)
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }

    /// Sigma with the highest seed-averaged gain at the given SNR.
    pub fn argmax_sigma(&self, snr: f64) -> Option<f64> {
        let mut sigmas: Vec<f64> = self.cells.iter().map(|c| c.sigma).collect();
        sigmas.dedup_by(|a, b| a.to_bits() == b.to_bits());
        sigmas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sigmas.dedup_by(|a, b| a.to_bits() == b.to_bits());
        sigmas
            .into_iter()
            .filter_map(|s| self.mean_gain(s, snr).map(|g| (s, g)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(s, _)| s)
    }
}

fn local_maxima(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..series.len().saturating_sub(1) {
        if series[i] > series[i - 1] && series[i] > series[i + 1] {
            out.push(series[i]);
        }
    }
    out
}

/// Evaluates reservoirs trained at the base Prandtl parameter on
/// validation sets generated across a sigma grid, optionally with extra
/// training sets at other (sigma, SNR) points.
pub fn parameter_sweep(config: &ExperimentConfig) -> CoreResult<SweepOutcome> {
    config.validate()?;
    let base_params = lorenz_params(config)?;
    let clean = config.system.generate(config.dt, config.duration)?;
    let layout = DatasetLayout::new(&config.out_dir);
    std::fs::create_dir_all(layout.reports_dir())?;
    let exponent = config.noise.exponent;
    let base_snr = config.noise.train_snr[0];
    let n_train = config.train_rows();

    // One tuned model per seed, trained on the base sigma (plus extras).
    let models: Vec<(u64, EchoStateNetwork)> = config
        .seeds
        .par_iter()
        .map(|&seed| -> CoreResult<(u64, EchoStateNetwork)> {
            let noisy = make_noisy_observed(config, &clean, exponent, base_snr, seed)?;
            let mut data = split_fit_data(config, &clean, &noisy.noisy)?;
            for extra in &config.sweep.extra_training {
                let params = LorenzParams {
                    sigma: extra.sigma,
                    ..base_params
                };
                let extra_clean = integrate_lorenz(&params, config.dt, config.duration)?;
                let extra_noisy =
                    make_noisy_observed(config, &extra_clean, exponent, extra.snr, seed)?;
                let targets = extra_clean.select_channels(&config.target_channels)?;
                data.train.push(IoPair::new(
                    extra_noisy.noisy.slice_rows(0, n_train)?,
                    targets.slice_rows(0, n_train)?,
                )?);
            }
            // Same stream as the gain matrix's matched-SNR row, so a
            // single-sigma sweep at the training point reproduces that cell.
            let esn = fit_tuned(config, &data, seed, &[tag("hyperopt"), base_snr.to_bits()])?;
            Ok((seed, esn))
        })
        .collect::<CoreResult<_>>()?;

    let mut grid: Vec<(f64, f64)> = Vec::new();
    for &sigma in &config.sweep.sigma_grid {
        for &snr in &config.sweep.snr_grid {
            grid.push((sigma, snr));
        }
    }
    let results: Vec<(Vec<SweepCell>, Vec<f64>)> = grid
        .par_iter()
        .map(|&(sigma, snr)| -> CoreResult<(Vec<SweepCell>, Vec<f64>)> {
            let params = LorenzParams {
                sigma,
                ..base_params
            };
            let sigma_clean = integrate_lorenz(&params, config.dt, config.duration)?;
            let mut cells = Vec::new();
            for &(seed, ref esn) in &models {
                let pair = val_pair(config, &sigma_clean, exponent, snr, seed)?;
                let (_, gain) = gain_on_pair(config, esn, &pair)?;
                cells.push(SweepCell {
                    sigma,
                    snr,
                    seed,
                    gain,
                });
            }
            let maxima = if snr.to_bits() == config.sweep.snr_grid[0].to_bits() {
                let x = sigma_clean.channel("x")?;
                let val: Vec<f64> = x.iter().skip(n_train).cloned().collect();
                local_maxima(&val)
            } else {
                Vec::new()
            };
            Ok((cells, maxima))
        })
        .collect::<CoreResult<_>>()?;

    let mut cells = Vec::new();
    let mut bifurcation = Vec::new();
    for ((cell_group, maxima), &(sigma, _)) in results.into_iter().zip(&grid) {
        cells.extend(cell_group);
        for m in maxima {
            bifurcation.push((sigma, m));
        }
    }

    let outcome = SweepOutcome { cells, bifurcation };
    let gain_csv = layout.reports_dir().join("sweep_gain.csv");
    {
        let mut w = BufWriter::new(File::create(&gain_csv)?);
        writeln!(w, "sigma,snr_test,mean_gain")?;
        for &sigma in &config.sweep.sigma_grid {
            for &snr in &config.sweep.snr_grid {
                if let Some(g) = outcome.mean_gain(sigma, snr) {
                    writeln!(w, "{sigma},{snr},{g:e}")?;
                }
            }
        }
    }
    let cells_csv = layout.reports_dir().join("sweep_cells.csv");
    {
        let mut w = BufWriter::new(File::create(&cells_csv)?);
        writeln!(w, "sigma,snr_test,seed,gain")?;
        for c in &outcome.cells {
            writeln!(w, "{},{},{},{:e}", c.sigma, c.snr, c.seed, c.gain)?;
        }
    }
    let bif_csv = layout.reports_dir().join("sweep_bifurcation.csv");
    {
        let mut w = BufWriter::new(File::create(&bif_csv)?);
        writeln!(w, "sigma,max_x")?;
        for (sigma, m) in &outcome.bifurcation {
            writeln!(w, "{sigma},{m:e}")?;
        }
    }
    let plot = plots::sweep_script(&layout)?;
    RunManifest::write(
        &config.out_dir,
        "sweep",
        config,
        vec![gain_csv, cells_csv, bif_csv, plot],
    )?;
    Ok(outcome)
}

// ---------------------------------------------------------------------
// Noise-color study
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColorCell {
    pub exponent: f64,
    pub seed: u64,
    pub gain: f64,
    pub nmse: f64,
    pub n_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct ColorSummary {
    pub exponent: f64,
    pub mean_gain: f64,
    pub std_gain: f64,
}

#[derive(Debug, Clone)]
pub struct NoiseStudyOutcome {
    pub cells: Vec<ColorCell>,
    pub summaries: Vec<ColorSummary>,
}

impl NoiseStudyOutcome {
    pub fn mean_gain(&self, exponent: f64) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.exponent.to_bits() == exponent.to_bits())
            .map(|s| s.mean_gain)
    }
}

fn welch_segment(len: usize) -> usize {
    let mut seg = 64;
    while seg * 2 <= len / 4 && seg < 1024 {
        seg *= 2;
    }
    seg
}

/// Runs the truncated pipeline per noise color over the seed list,
/// emitting gain distributions and PSD curves of the injected noise and
/// the reconstruction residual.
pub fn noise_color_study(config: &ExperimentConfig) -> CoreResult<NoiseStudyOutcome> {
    config.validate()?;
    let clean = config.system.generate(config.dt, config.duration)?;
    let layout = DatasetLayout::new(&config.out_dir);
    std::fs::create_dir_all(layout.reports_dir())?;
    let snr = config.noise.train_snr[0];
    let n_train = config.train_rows();
    let fs = config.sample_rate_hz();
    let primary = &config.observed_channels[0];

    let combos: Vec<(f64, u64)> = config
        .noise
        .study_exponents
        .iter()
        .flat_map(|&e| config.seeds.iter().map(move |&s| (e, s)))
        .collect();

    let results: Vec<(ColorCell, Vec<PathBuf>)> = combos
        .par_iter()
        .map(
            |&(exponent, seed)| -> CoreResult<(ColorCell, Vec<PathBuf>)> {
                let noisy = make_noisy_observed(config, &clean, exponent, snr, seed)?;
                let data = split_fit_data(config, &clean, &noisy.noisy)?;
                let esn =
                    fit_truncated(config, &data, seed, &[tag("hyperopt"), exponent.to_bits()])?;
                let pair = &data.val[0];
                let (_, gain) = gain_on_pair(config, &esn, pair)?;
                let nmse = crate::training::validation_nmse(&esn, &data.val)?;

                let mut artifacts = Vec::new();
                let model_path = layout.model_path(Stage::Truncated, exponent, snr, seed);
                std::fs::create_dir_all(layout.models_dir())?;
                save_model(&esn, &model_path)?;
                artifacts.push(model_path);

                // PSD curves for the first seed of each color: injected noise
                // vs residual, plus clean/noisy/denoised spectra.
                if seed == config.seeds[0] {
                    let rows = clean.len() - n_train;
                    let prediction = predict(&esn, &pair.input)?;
                    let channel_idx = pair
                        .input
                        .channel_names()
                        .iter()
                        .position(|c| c == primary)
                        .unwrap_or(0);
                    let target_idx = pair
                        .target
                        .channel_names()
                        .iter()
                        .position(|c| c == primary)
                        .unwrap_or(0);
                    let noise_col: Vec<f64> = noisy
                        .noise
                        .slice_rows(n_train, rows)?
                        .values()
                        .column(channel_idx)
                        .iter()
                        .cloned()
                        .collect();
                    let residual: Vec<f64> = (0..rows)
                        .map(|i| {
                            prediction.output.values()[(i, target_idx)]
                                - pair.target.values()[(i, target_idx)]
                        })
                        .collect();
                    let clean_col: Vec<f64> = pair
                        .target
                        .values()
                        .column(target_idx)
                        .iter()
                        .cloned()
                        .collect();
                    let noisy_col: Vec<f64> = pair
                        .input
                        .values()
                        .column(channel_idx)
                        .iter()
                        .cloned()
                        .collect();
                    let denoised_col: Vec<f64> = prediction
                        .output
                        .values()
                        .column(target_idx)
                        .iter()
                        .cloned()
                        .collect();
                    let seg = welch_segment(rows);
                    for (label, series) in [
                        ("original_noise", &noise_col),
                        ("residual", &residual),
                        ("clean", &clean_col),
                        ("noisy", &noisy_col),
                        ("denoised", &denoised_col),
                    ] {
                        let (freq, psd) = welch_psd(series, fs, seg, 0.5)?;
                        let curve =
                            PsdCurve::from_linear(format!("{label} exp {exponent}"), freq, &psd);
                        let path = layout
                            .reports_dir()
                            .join(format!("psd_exp{exponent}_{label}.csv"));
                        curve.write_csv(&path)?;
                        artifacts.push(path);
                    }
                }
                Ok((
                    ColorCell {
                        exponent,
                        seed,
                        gain,
                        nmse,
                        n_nodes: esn.n_nodes(),
                    },
                    artifacts,
                ))
            },
        )
        .collect::<CoreResult<_>>()?;

    let mut cells = Vec::new();
    let mut artifacts = Vec::new();
    for (cell, paths) in results {
        cells.push(cell);
        artifacts.extend(paths);
    }

    let summaries: Vec<ColorSummary> = config
        .noise
        .study_exponents
        .iter()
        .map(|&exponent| {
            let gains: Vec<f64> = cells
                .iter()
                .filter(|c| c.exponent.to_bits() == exponent.to_bits())
                .map(|c| c.gain)
                .collect();
            let mean = gains.iter().sum::<f64>() / gains.len() as f64;
            let var =
                gains.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / gains.len() as f64;
            ColorSummary {
                exponent,
                mean_gain: mean,
                std_gain: var.sqrt(),
            }
        })
        .collect();

    let gains_csv = layout.reports_dir().join("noise_study_gains.csv");
    {
        let mut w = BufWriter::new(File::create(&gains_csv)?);
        writeln!(w, "exponent,seed,gain,nmse,n_nodes")?;
        for c in &cells {
            writeln!(
                w,
                "{},{},{:e},{:e},{}",
                c.exponent, c.seed, c.gain, c.nmse, c.n_nodes
            )?;
        }
    }
    artifacts.push(gains_csv);
    let summary_csv = layout.reports_dir().join("noise_study_summary.csv");
    {
        let mut w = BufWriter::new(File::create(&summary_csv)?);
        writeln!(w, "exponent,mean_gain,std_gain")?;
        for s in &summaries {
            writeln!(w, "{},{:e},{:e}", s.exponent, s.mean_gain, s.std_gain)?;
        }
    }
    artifacts.push(summary_csv);
    artifacts.push(plots::noise_study_script(&layout)?);

    RunManifest::write(&config.out_dir, "noise-study", config, artifacts)?;
    Ok(NoiseStudyOutcome { cells, summaries })
}

// ---------------------------------------------------------------------
// Report aggregation
// ---------------------------------------------------------------------

/// Collects every stage report under the output directory into a summary
/// table, writes `summary.csv` and the plot scripts, and returns the
/// rendered table.
pub fn summarize(config: &ExperimentConfig) -> CoreResult<String> {
    let layout = DatasetLayout::new(&config.out_dir);
    let reports_dir = layout.reports_dir();
    if !reports_dir.exists() {
        return Err(CoreError::Orchestration(format!(
            "missing dependency {} (no reports to summarize)",
            reports_dir.display()
        )));
    }
    let mut rows = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(&reports_dir)?.collect::<Result<Vec<_>, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        let name = path.file_name().unwrap_or_default().to_string_lossy();
        if path.extension().and_then(|e| e.to_str()) == Some("json")
            && (name.starts_with("trained_")
                || name.starts_with("tuned_")
                || name.starts_with("truncated_"))
        {
            if let Ok(report) = super::pipeline::RunReport::read(&path) {
                rows.push(report);
            }
        }
    }
    if rows.is_empty() {
        return Err(CoreError::Orchestration(
            "no stage reports found; run a pipeline stage first".into(),
        ));
    }
    let summary_csv = reports_dir.join("summary.csv");
    {
        let mut w = BufWriter::new(File::create(&summary_csv)?);
        writeln!(w, "stage,exponent,snr,seed,nmse,gain,lambda,n_nodes,edges")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{:e},{:e},{},{},{}",
                r.stage,
                r.exponent,
                r.snr,
                r.seed,
                r.nmse,
                r.denoising.denoising_gain,
                r.lambda.map(|l| format!("{l:e}")).unwrap_or_default(),
                r.n_nodes,
                r.edges
            )?;
        }
    }
    plots::summary_script(&layout)?;

    let mut table = String::from(
        "stage      exponent  snr      seed  nmse          gain         N     edges\n",
    );
    for r in &rows {
        table.push_str(&format!(
            "{:<10} {:<9} {:<8} {:<5} {:<13.6e} {:<12.4} {:<5} {}\n",
            r.stage,
            r.exponent,
            r.snr,
            r.seed,
            r.nmse,
            r.denoising.denoising_gain,
            r.n_nodes,
            r.edges
        ));
    }
    Ok(table)
}
