//! Readout fitting: ridge regression, ridge-coefficient selection by
//! contiguous-block cross-validation, prediction, and NMSE.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, CoreResult};
use crate::reservoir::{run, EchoStateNetwork};
use crate::trajectory::Trajectory;

/// Ridge settings. With `select_by_cv` the coefficient is picked from
/// `lambda_grid` by k-fold cross-validation; otherwise the fixed `lambda`
/// is used directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeConfig {
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub select_by_cv: bool,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-8,
            lambda_grid: default_lambda_grid(),
            folds: 5,
            select_by_cv: true,
        }
    }
}

/// The decade grid 1e-15 .. 1e20.
pub fn default_lambda_grid() -> Vec<f64> {
    (-15..=20).map(|e| 10f64.powi(e)).collect()
}

impl RidgeConfig {
    pub fn validate(&self) -> CoreResult<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(CoreError::invalid("lambda must be >= 0"));
        }
        if self.lambda_grid.is_empty() {
            return Err(CoreError::invalid("lambda grid must be nonempty"));
        }
        if self.lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::invalid(
                "lambda grid must be strictly increasing",
            ));
        }
        if self.lambda_grid.iter().any(|l| *l < 0.0 || !l.is_finite()) {
            return Err(CoreError::invalid("lambda grid entries must be >= 0"));
        }
        if self.folds < 2 {
            return Err(CoreError::invalid("need at least 2 folds"));
        }
        Ok(())
    }
}

/// Solves (R^T R + lambda I) W = R^T Y through a Cholesky factorization.
pub fn ridge_fit(
    states: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> CoreResult<DMatrix<f64>> {
    if states.nrows() != targets.nrows() {
        return Err(CoreError::invalid(format!(
            "state rows {} and target rows {} differ",
            states.nrows(),
            targets.nrows()
        )));
    }
    if states.nrows() == 0 {
        return Err(CoreError::invalid("no rows to fit"));
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(CoreError::invalid("lambda must be >= 0"));
    }
    let n = states.ncols();
    let mut gram = states.tr_mul(states);
    for i in 0..n {
        gram[(i, i)] += lambda;
    }
    let rhs = states.tr_mul(targets);
    match gram.cholesky() {
        Some(chol) => Ok(chol.solve(&rhs)),
        None => Err(CoreError::RankDeficient(format!(
            "normal equations are singular at lambda = {lambda}"
        ))),
    }
}

/// Per-(lambda, fold) held-out NMSE scores from `select_lambda`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub lambdas: Vec<f64>,
    /// `fold_scores[l][f]` is the NMSE of grid point `l` on fold `f`.
    pub fold_scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
}

impl CvReport {
    /// Writes `lambda,fold,nmse` rows.
    pub fn write_csv(&self, path: &Path) -> CoreResult<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "lambda,fold,nmse")?;
        for (l, lambda) in self.lambdas.iter().enumerate() {
            for (f, score) in self.fold_scores[l].iter().enumerate() {
                writeln!(w, "{lambda:e},{f},{score:e}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Picks the ridge coefficient minimizing mean held-out NMSE over
/// contiguous row blocks of the precomputed state matrix. Ties break
/// toward the larger (more regularized) candidate.
pub fn select_lambda(
    states: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    config: &RidgeConfig,
) -> CoreResult<(f64, CvReport)> {
    config.validate()?;
    if states.nrows() != targets.nrows() {
        return Err(CoreError::invalid("state and target row counts differ"));
    }
    let rows = states.nrows();
    let folds = config.folds;
    if rows < folds {
        return Err(CoreError::invalid(format!(
            "{rows} rows cannot form {folds} contiguous blocks"
        )));
    }
    let n = states.ncols();
    let d = targets.ncols();
    let grid = &config.lambda_grid;

    let gram_total = states.tr_mul(states);
    let rhs_total = states.tr_mul(targets);

    let mut fold_scores = vec![vec![f64::INFINITY; folds]; grid.len()];
    #[allow(clippy::needless_range_loop)] // fold drives block arithmetic too
    for fold in 0..folds {
        let start = fold * rows / folds;
        let end = (fold + 1) * rows / folds;
        let len = end - start;
        let held_states = states.rows(start, len);
        let held_targets = targets.rows(start, len);
        let gram_train = &gram_total - held_states.tr_mul(&held_states);
        let rhs_train = &rhs_total - held_states.tr_mul(&held_targets);

        // One symmetric eigendecomposition serves every grid point:
        // W(lambda) = V diag(1/(e_i + lambda)) V^T rhs.
        let eig = SymmetricEigen::new(gram_train);
        let evals: Vec<f64> = eig.eigenvalues.iter().map(|e| e.max(0.0)).collect();
        let projected = eig.eigenvectors.tr_mul(&rhs_train);

        let mut scaled_all = DMatrix::zeros(n, grid.len() * d);
        for (l, &lambda) in grid.iter().enumerate() {
            for i in 0..n {
                let denom = evals[i] + lambda;
                let inv = if denom > 0.0 { 1.0 / denom } else { 0.0 };
                for c in 0..d {
                    scaled_all[(i, l * d + c)] = inv * projected[(i, c)];
                }
            }
        }
        let weights_all = &eig.eigenvectors * scaled_all;
        let preds_all = held_states * &weights_all;

        let truth_ss: f64 = held_targets.iter().map(|v| v * v).sum();
        for l in 0..grid.len() {
            let mut err_ss = 0.0;
            for c in 0..d {
                for r in 0..len {
                    let diff = preds_all[(r, l * d + c)] - held_targets[(r, c)];
                    err_ss += diff * diff;
                }
            }
            let score = if truth_ss > 0.0 {
                err_ss / truth_ss
            } else {
                f64::INFINITY
            };
            fold_scores[l][fold] = if score.is_finite() {
                score
            } else {
                f64::INFINITY
            };
        }
    }

    let mean_scores: Vec<f64> = fold_scores
        .iter()
        .map(|scores| scores.iter().sum::<f64>() / folds as f64)
        .collect();
    let mut best = 0;
    for (l, &score) in mean_scores.iter().enumerate() {
        if score <= mean_scores[best] {
            best = l;
        }
    }
    if !mean_scores[best].is_finite() {
        return Err(CoreError::RankDeficient(
            "every ridge candidate failed cross-validation".into(),
        ));
    }
    Ok((
        grid[best],
        CvReport {
            lambdas: grid.clone(),
            fold_scores,
            mean_scores,
        },
    ))
}

/// NMSE over matrices: ||pred - truth||^2 / ||truth||^2, pooled over all
/// channels.
pub fn nmse_matrices(prediction: &DMatrix<f64>, truth: &DMatrix<f64>) -> CoreResult<f64> {
    if prediction.shape() != truth.shape() {
        return Err(CoreError::invalid("prediction and truth shapes differ"));
    }
    let truth_ss: f64 = truth.iter().map(|v| v * v).sum();
    if truth_ss == 0.0 {
        return Err(CoreError::DegenerateSignal("truth has zero norm".into()));
    }
    let err_ss: f64 = prediction
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(err_ss / truth_ss)
}

/// Normalized mean squared error between aligned trajectories.
pub fn nmse(prediction: &Trajectory, truth: &Trajectory) -> CoreResult<f64> {
    truth.require_aligned(prediction, "nmse")?;
    nmse_matrices(prediction.values(), truth.values())
}

/// Readout applied over a full input sequence. The leading `washout` rows
/// are included in the output but should be skipped by error metrics.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub output: Trajectory,
    pub washout: usize,
}

/// Runs the reservoir over `inputs` and applies the trained readout.
pub fn predict(esn: &EchoStateNetwork, inputs: &Trajectory) -> CoreResult<Prediction> {
    let w_out = esn.readout().ok_or(CoreError::Untrained)?;
    let states = run(esn, inputs, None)?;
    let outputs = states * w_out;
    let names = if esn.output_channels().len() == w_out.ncols() {
        esn.output_channels().to_vec()
    } else {
        (0..w_out.ncols()).map(|i| format!("y{i}")).collect()
    };
    Ok(Prediction {
        output: Trajectory::new(inputs.t0(), inputs.dt(), outputs, names)?,
        washout: esn.washout().min(inputs.len().saturating_sub(1)),
    })
}

/// One (input, target) sequence pair on a shared grid.
#[derive(Debug, Clone)]
pub struct IoPair {
    pub input: Trajectory,
    pub target: Trajectory,
}

impl IoPair {
    pub fn new(input: Trajectory, target: Trajectory) -> CoreResult<Self> {
        if input.len() != target.len() {
            return Err(CoreError::invalid("input and target lengths differ"));
        }
        Ok(Self { input, target })
    }
}

/// Training and validation sequence sets; several training pairs may be
/// stacked (states are collected per pair, each from a fresh zero state,
/// washouts excluded independently).
#[derive(Debug, Clone)]
pub struct FitData {
    pub train: Vec<IoPair>,
    pub val: Vec<IoPair>,
}

impl FitData {
    pub fn single(
        train_input: Trajectory,
        train_target: Trajectory,
        val_input: Trajectory,
        val_target: Trajectory,
    ) -> CoreResult<Self> {
        Ok(Self {
            train: vec![IoPair::new(train_input, train_target)?],
            val: vec![IoPair::new(val_input, val_target)?],
        })
    }

    pub fn target_channels(&self) -> CoreResult<Vec<String>> {
        self.train
            .first()
            .map(|p| p.target.channel_names().to_vec())
            .ok_or_else(|| CoreError::invalid("no training pairs"))
    }
}

/// Runs the reservoir over every training pair and stacks post-washout
/// states and targets row-wise.
pub fn collect_train_rows(
    esn: &EchoStateNetwork,
    data: &FitData,
) -> CoreResult<(DMatrix<f64>, DMatrix<f64>)> {
    if data.train.is_empty() {
        return Err(CoreError::invalid("no training pairs"));
    }
    let mut state_blocks = Vec::new();
    let mut target_blocks = Vec::new();
    let mut rows = 0usize;
    for pair in &data.train {
        let states = run(esn, &pair.input, None)?;
        let skip = esn.washout().min(states.nrows().saturating_sub(1));
        let kept = states.nrows() - skip;
        rows += kept;
        state_blocks.push(states.rows(skip, kept).into_owned());
        target_blocks.push(pair.target.values().rows(skip, kept).into_owned());
    }
    let n = esn.n_nodes();
    let d = data.train[0].target.num_channels();
    let mut states = DMatrix::zeros(rows, n);
    let mut targets = DMatrix::zeros(rows, d);
    let mut at = 0;
    for (s, t) in state_blocks.iter().zip(&target_blocks) {
        states.rows_mut(at, s.nrows()).copy_from(s);
        targets.rows_mut(at, t.nrows()).copy_from(t);
        at += s.nrows();
    }
    Ok((states, targets))
}

/// Pooled validation NMSE of the current readout, washouts excluded.
pub fn validation_nmse(esn: &EchoStateNetwork, pairs: &[IoPair]) -> CoreResult<f64> {
    let w_out = esn.readout().ok_or(CoreError::Untrained)?;
    if pairs.is_empty() {
        return Err(CoreError::invalid("no validation pairs"));
    }
    let mut err_ss = 0.0;
    let mut truth_ss = 0.0;
    for pair in pairs {
        let states = run(esn, &pair.input, None)?;
        let skip = esn.washout().min(states.nrows().saturating_sub(1));
        let preds = states.rows(skip, states.nrows() - skip) * w_out;
        let truth = pair.target.values().rows(skip, pair.target.len() - skip);
        for (p, t) in preds.iter().zip(truth.iter()) {
            err_ss += (p - t) * (p - t);
            truth_ss += t * t;
        }
    }
    if truth_ss == 0.0 {
        return Err(CoreError::DegenerateSignal(
            "validation targets are zero".into(),
        ));
    }
    Ok(err_ss / truth_ss)
}

/// Outcome of fitting a readout on the training set.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub lambda: f64,
    pub cv: Option<CvReport>,
    pub val_nmse: f64,
}

/// Fits the readout (selecting lambda by CV when configured), installs it
/// on the network, and reports the validation NMSE.
pub fn calibrate(
    esn: &mut EchoStateNetwork,
    data: &FitData,
    ridge: &RidgeConfig,
) -> CoreResult<Calibration> {
    let (states, targets) = collect_train_rows(esn, data)?;
    let (lambda, cv) = if ridge.select_by_cv {
        let (lambda, report) = select_lambda(&states, &targets, ridge)?;
        (lambda, Some(report))
    } else {
        (ridge.lambda, None)
    };
    let w_out = ridge_fit(&states, &targets, lambda)?;
    esn.set_readout(w_out, data.target_channels()?)?;
    let val_nmse = validation_nmse(esn, &data.val)?;
    Ok(Calibration {
        lambda,
        cv,
        val_nmse,
    })
}
