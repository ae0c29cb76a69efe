//! Derivative-free search over the reservoir tuple (N, alpha, gamma,
//! zeta, p).
//!
//! The optimizer follows a sequential model-based contract: a quasi-random
//! warm-up of a quarter of the budget, then candidates proposed by
//! minimizing a quadratic ridge surrogate fitted to the best evaluations
//! so far, with periodic pure-random exploration. A pure random search is
//! selectable as a fallback strategy. Runs are reproducible from the
//! master seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, CoreResult};
use crate::reservoir::{
    build_reservoir, HyperParams, ALPHA_BOUNDS, CONNECTIVITY_BOUNDS, GAMMA_BOUNDS, ZETA_BOUNDS,
};
use crate::seeding::rng_from_seed;
use crate::training::{calibrate, FitData, RidgeConfig};

/// Reservoir size: pinned or searched over an integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeRange {
    Fixed(usize),
    Bounded(usize, usize),
}

/// Per-parameter search bounds; defaults are the standard intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub alpha: (f64, f64),
    pub gamma: (f64, f64),
    pub zeta: (f64, f64),
    pub connectivity: (f64, f64),
    pub nodes: NodeRange,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            alpha: ALPHA_BOUNDS,
            gamma: GAMMA_BOUNDS,
            zeta: ZETA_BOUNDS,
            connectivity: CONNECTIVITY_BOUNDS,
            nodes: NodeRange::Fixed(100),
        }
    }
}

impl SearchSpace {
    pub fn with_nodes(nodes: NodeRange) -> Self {
        Self {
            nodes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> CoreResult<()> {
        for (label, (lo, hi)) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("zeta", self.zeta),
            ("connectivity", self.connectivity),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(CoreError::invalid(format!(
                    "bad {label} bounds ({lo}, {hi})"
                )));
            }
        }
        match self.nodes {
            NodeRange::Fixed(n) if n < 2 => {
                return Err(CoreError::invalid("reservoir size must be >= 2"))
            }
            NodeRange::Bounded(lo, hi) if lo < 2 || lo > hi => {
                return Err(CoreError::invalid(format!("bad node bounds ({lo}, {hi})")))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn contains(&self, phi: &HyperParams) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        let nodes_ok = match self.nodes {
            NodeRange::Fixed(n) => phi.n_nodes == n,
            NodeRange::Bounded(lo, hi) => phi.n_nodes >= lo && phi.n_nodes <= hi,
        };
        nodes_ok
            && within(phi.leakage, self.alpha)
            && within(phi.spectral_radius, self.gamma)
            && within(phi.input_scaling, self.zeta)
            && within(phi.connectivity, self.connectivity)
    }

    fn node_bounds(&self) -> (usize, usize) {
        match self.nodes {
            NodeRange::Fixed(n) => (n, n),
            NodeRange::Bounded(lo, hi) => (lo, hi),
        }
    }

    /// Maps a point of the unit cube (N, alpha, gamma, zeta, p order)
    /// onto the bounded space.
    fn phi_from_unit(&self, u: &[f64; 5]) -> HyperParams {
        let (nlo, nhi) = self.node_bounds();
        let span = (nhi - nlo + 1) as f64;
        let n = nlo + ((u[0].clamp(0.0, 1.0 - 1e-12) * span) as usize).min(nhi - nlo);
        let lerp = |x: f64, (lo, hi): (f64, f64)| lo + x.clamp(0.0, 1.0) * (hi - lo);
        HyperParams {
            n_nodes: n,
            leakage: lerp(u[1], self.alpha),
            spectral_radius: lerp(u[2], self.gamma),
            input_scaling: lerp(u[3], self.zeta),
            connectivity: lerp(u[4], self.connectivity),
        }
    }

    fn unit_from_phi(&self, phi: &HyperParams) -> [f64; 5] {
        let (nlo, nhi) = self.node_bounds();
        let norm = |v: f64, lo: f64, hi: f64| {
            if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                0.5
            }
        };
        [
            norm(phi.n_nodes as f64, nlo as f64, nhi as f64),
            norm(phi.leakage, self.alpha.0, self.alpha.1),
            norm(phi.spectral_radius, self.gamma.0, self.gamma.1),
            norm(phi.input_scaling, self.zeta.0, self.zeta.1),
            norm(phi.connectivity, self.connectivity.0, self.connectivity.1),
        ]
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> HyperParams {
        let u = [
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
        ];
        self.phi_from_unit(&u)
    }
}

/// Result of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Evaluation {
    Ok { loss: f64, lambda: Option<f64> },
    Failed,
}

/// One line of the optimization history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iter: usize,
    pub phi: HyperParams,
    /// Validation loss; `+inf` when the evaluation failed.
    pub loss: f64,
    pub failed: bool,
    pub lambda: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub best: HyperParams,
    pub best_loss: f64,
    pub history: Vec<EvalRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    #[default]
    SurrogateAssisted,
    RandomSearch,
}

/// Writes `iter,N,alpha,gamma,zeta,p,lambda,loss,seconds` rows.
pub fn write_history_csv(history: &[EvalRecord], path: &Path) -> CoreResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iter,N,alpha,gamma,zeta,p,lambda,loss,seconds")?;
    for r in history {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:e},{},{:e},{:.3}",
            r.iter,
            r.phi.n_nodes,
            r.phi.leakage,
            r.phi.spectral_radius,
            r.phi.input_scaling,
            r.phi.connectivity,
            r.lambda.map(|l| format!("{l:e}")).unwrap_or_default(),
            r.loss,
            r.seconds
        )?;
    }
    w.flush()?;
    Ok(())
}

fn halton(index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const HALTON_BASES: [usize; 5] = [2, 3, 5, 7, 11];

fn quadratic_features(x: &[f64; 5]) -> Vec<f64> {
    let mut phi = Vec::with_capacity(21);
    phi.push(1.0);
    phi.extend_from_slice(x);
    for i in 0..5 {
        for j in i..5 {
            phi.push(x[i] * x[j]);
        }
    }
    phi
}

/// Fits a quadratic ridge surrogate to the most promising half of the
/// history and returns the candidate with the lowest predicted loss.
fn propose(space: &SearchSpace, history: &[EvalRecord], rng: &mut ChaCha8Rng) -> HyperParams {
    let mut feasible: Vec<(&EvalRecord, f64)> = history
        .iter()
        .filter(|r| !r.failed && r.loss.is_finite())
        .map(|r| (r, r.loss))
        .collect();
    if feasible.len() < 8 {
        return space.sample(rng);
    }
    feasible.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    // Fit the local model to the promising part of the history: the best
    // 60% of the points, but never fewer than 10.
    let keep = (feasible.len() * 3 / 5).max(10).min(feasible.len());
    let fit_set = &feasible[..keep];

    let rows = fit_set.len();
    let mut design = DMatrix::zeros(rows, 21);
    let mut target = DVector::zeros(rows);
    let mean = fit_set.iter().map(|(_, l)| l).sum::<f64>() / rows as f64;
    let scale = fit_set
        .iter()
        .map(|(_, l)| (l - mean) * (l - mean))
        .sum::<f64>()
        .sqrt()
        .max(1e-12);
    for (row, (record, loss)) in fit_set.iter().enumerate() {
        let u = space.unit_from_phi(&record.phi);
        for (col, f) in quadratic_features(&u).into_iter().enumerate() {
            design[(row, col)] = f;
        }
        target[row] = (loss - mean) / scale;
    }
    let mut gram = design.tr_mul(&design);
    for i in 0..21 {
        gram[(i, i)] += 1e-8;
    }
    let beta = match gram.cholesky() {
        Some(c) => c.solve(&design.tr_mul(&target)),
        None => return space.sample(rng),
    };

    let best_u = space.unit_from_phi(&fit_set[0].0.phi);
    let mut best_candidate = None;
    let mut best_pred = f64::INFINITY;
    for c in 0..192 {
        let u: [f64; 5] = if c % 2 == 0 {
            std::array::from_fn(|_| rng.random::<f64>())
        } else {
            std::array::from_fn(|d| {
                let jitter: f64 = rng.sample(StandardNormal);
                (best_u[d] + 0.1 * jitter).clamp(0.0, 1.0)
            })
        };
        let features = quadratic_features(&u);
        let pred: f64 = features.iter().zip(beta.iter()).map(|(f, b)| f * b).sum();
        if pred < best_pred {
            best_pred = pred;
            best_candidate = Some(u);
        }
    }
    match best_candidate {
        Some(u) => space.phi_from_unit(&u),
        None => space.sample(rng),
    }
}

/// Minimizes the objective over the search space with the default
/// surrogate-assisted strategy.
pub fn optimize(
    space: &SearchSpace,
    objective: impl FnMut(&HyperParams) -> Evaluation,
    budget: usize,
    seed: u64,
) -> CoreResult<OptimizeOutcome> {
    optimize_with(
        space,
        objective,
        budget,
        seed,
        SearchStrategy::SurrogateAssisted,
    )
}

pub fn optimize_with(
    space: &SearchSpace,
    mut objective: impl FnMut(&HyperParams) -> Evaluation,
    budget: usize,
    seed: u64,
    strategy: SearchStrategy,
) -> CoreResult<OptimizeOutcome> {
    space.validate()?;
    if budget == 0 {
        return Err(CoreError::invalid("optimization budget must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let warmup = budget.div_ceil(4);
    let halton_offset = 1 + (seed % 512) as usize;

    let mut history: Vec<EvalRecord> = Vec::with_capacity(budget);
    for iter in 0..budget {
        let phi = match strategy {
            SearchStrategy::RandomSearch => space.sample(&mut rng),
            SearchStrategy::SurrogateAssisted => {
                if iter < warmup {
                    let u: [f64; 5] =
                        std::array::from_fn(|d| halton(halton_offset + iter, HALTON_BASES[d]));
                    space.phi_from_unit(&u)
                } else if (iter - warmup) % 4 == 3 {
                    space.sample(&mut rng) // keep exploring
                } else {
                    propose(space, &history, &mut rng)
                }
            }
        };
        let start = Instant::now();
        let record = match objective(&phi) {
            Evaluation::Ok { loss, lambda } if loss.is_finite() => EvalRecord {
                iter,
                phi,
                loss,
                failed: false,
                lambda,
                seconds: start.elapsed().as_secs_f64(),
            },
            _ => EvalRecord {
                iter,
                phi,
                loss: f64::INFINITY,
                failed: true,
                lambda: None,
                seconds: start.elapsed().as_secs_f64(),
            },
        };
        history.push(record);
    }

    let best = history
        .iter()
        .filter(|r| !r.failed)
        .min_by(|a, b| {
            a.loss
                .partial_cmp(&b.loss)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .cloned()
        .ok_or(CoreError::NoFeasiblePoint)?;
    Ok(OptimizeOutcome {
        best: best.phi,
        best_loss: best.loss,
        history,
    })
}

/// Standard objective: build a reservoir for `phi` with a fixed seed and
/// constant node bias, select the ridge coefficient by CV on the training
/// rows, fit the readout, and return the validation NMSE. Failures
/// (instability, degenerate topology) become failure markers rather than
/// errors.
pub fn validation_objective<'a>(
    data: &'a FitData,
    ridge: &'a RidgeConfig,
    reservoir_seed: u64,
    washout: usize,
    bias: f64,
) -> impl FnMut(&HyperParams) -> Evaluation + 'a {
    move |phi: &HyperParams| {
        let d_in = match data.train.first() {
            Some(pair) => pair.input.num_channels(),
            None => return Evaluation::Failed,
        };
        let mut esn = match build_reservoir(phi, d_in, reservoir_seed) {
            Ok(esn) => esn,
            Err(_) => return Evaluation::Failed,
        };
        esn.set_washout(washout);
        if esn
            .set_bias(nalgebra::DVector::from_element(phi.n_nodes, bias))
            .is_err()
        {
            return Evaluation::Failed;
        }
        match calibrate(&mut esn, data, ridge) {
            Ok(cal) if cal.val_nmse.is_finite() => Evaluation::Ok {
                loss: cal.val_nmse,
                lambda: Some(cal.lambda),
            },
            _ => Evaluation::Failed,
        }
    }
}

/// Like `validation_objective` but averaging the loss over several
/// reservoir seeds; any failed seed fails the evaluation.
pub fn validation_objective_averaged<'a>(
    data: &'a FitData,
    ridge: &'a RidgeConfig,
    reservoir_seeds: &'a [u64],
    washout: usize,
    bias: f64,
) -> impl FnMut(&HyperParams) -> Evaluation + 'a {
    move |phi: &HyperParams| {
        let mut total = 0.0;
        let mut lambda = None;
        for &seed in reservoir_seeds {
            let mut single = validation_objective(data, ridge, seed, washout, bias);
            match single(phi) {
                Evaluation::Ok { loss, lambda: l } => {
                    total += loss;
                    lambda = l;
                }
                Evaluation::Failed => return Evaluation::Failed,
            }
        }
        Evaluation::Ok {
            loss: total / reservoir_seeds.len() as f64,
            lambda,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_space() -> SearchSpace {
        SearchSpace {
            alpha: (0.01, 1.0),
            gamma: (0.01, 1.0),
            zeta: (0.1, 2.0),
            connectivity: (0.1, 0.9),
            nodes: NodeRange::Fixed(50),
        }
    }

    #[test]
    fn convex_mock_objective_is_located() {
        let space = mock_space();
        let objective = |phi: &HyperParams| Evaluation::Ok {
            loss: (phi.leakage - 0.3).powi(2) + (phi.spectral_radius - 0.6).powi(2),
            lambda: None,
        };
        let out = optimize(&space, objective, 60, 21).unwrap();
        assert!(
            (out.best.leakage - 0.3).abs() < 0.05,
            "alpha {}",
            out.best.leakage
        );
        assert!(
            (out.best.spectral_radius - 0.6).abs() < 0.05,
            "gamma {}",
            out.best.spectral_radius
        );
    }

    #[test]
    fn degenerate_space_returns_the_single_point() {
        let space = SearchSpace {
            alpha: (0.5, 0.5),
            gamma: (0.7, 0.7),
            zeta: (1.0, 1.0),
            connectivity: (0.3, 0.3),
            nodes: NodeRange::Fixed(10),
        };
        let out = optimize(
            &space,
            |_| Evaluation::Ok {
                loss: 1.0,
                lambda: None,
            },
            5,
            3,
        )
        .unwrap();
        assert_eq!(out.best.leakage, 0.5);
        assert_eq!(out.best.spectral_radius, 0.7);
        assert_eq!(out.best.n_nodes, 10);
    }

    #[test]
    fn zero_budget_is_rejected() {
        let space = mock_space();
        assert!(matches!(
            optimize(&space, |_| Evaluation::Failed, 0, 1),
            Err(CoreError::InvalidArgument(_))
        ));
    }

    #[test]
    fn all_failures_yield_no_feasible_point() {
        let space = mock_space();
        match optimize(&space, |_| Evaluation::Failed, 10, 1) {
            Err(CoreError::NoFeasiblePoint) => {}
            other => panic!("expected NoFeasiblePoint, got {other:?}"),
        }
    }

    #[test]
    fn history_is_reproducible_and_in_bounds() {
        let space = SearchSpace::with_nodes(NodeRange::Bounded(10, 20));
        let objective = |phi: &HyperParams| Evaluation::Ok {
            loss: phi.leakage + phi.connectivity,
            lambda: None,
        };
        let a = optimize(&space, objective, 30, 9).unwrap();
        let b = optimize(&space, objective, 30, 9).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.phi, rb.phi);
            assert_eq!(ra.loss, rb.loss);
            assert!(space.contains(&ra.phi), "{:?} out of bounds", ra.phi);
        }
        assert!(space.contains(&a.best));
    }

    #[test]
    fn best_seen_loss_is_non_increasing() {
        let space = mock_space();
        let out = optimize(
            &space,
            |phi: &HyperParams| Evaluation::Ok {
                loss: (phi.leakage - 0.42).powi(2),
                lambda: None,
            },
            40,
            5,
        )
        .unwrap();
        let mut best = f64::INFINITY;
        for r in &out.history {
            let current = best.min(r.loss);
            assert!(current <= best);
            best = current;
        }
        assert_eq!(best, out.best_loss);
    }

    #[test]
    fn failures_are_marked_not_fatal() {
        let space = mock_space();
        let objective = |phi: &HyperParams| {
            if phi.leakage < 0.5 {
                Evaluation::Failed
            } else {
                Evaluation::Ok {
                    loss: phi.leakage,
                    lambda: Some(1e-8),
                }
            }
        };
        let out = optimize(&space, objective, 30, 2).unwrap();
        assert!(out.history.iter().any(|r| r.failed));
        assert!(out.best.leakage >= 0.5);
        for r in out.history.iter().filter(|r| r.failed) {
            assert!(r.loss.is_infinite());
        }
    }

    #[test]
    fn random_search_strategy_is_selectable() {
        let space = mock_space();
        let out = optimize_with(
            &space,
            |phi: &HyperParams| Evaluation::Ok {
                loss: (phi.leakage - 0.3).powi(2),
                lambda: None,
            },
            50,
            7,
            SearchStrategy::RandomSearch,
        )
        .unwrap();
        assert!((out.best.leakage - 0.3).abs() < 0.2);
    }

    #[test]
    fn averaged_objective_means_over_seeds() {
        use crate::noise::{add_noise, NoiseSpec};
        use crate::training::FitData;
        let clean = crate::dynamics::integrate_lorenz(
            &crate::dynamics::LorenzParams::default(),
            0.005,
            6.0,
        )
        .unwrap();
        let observed = clean.select_channels(&["x".into(), "y".into()]).unwrap();
        let noisy = add_noise(&observed, &NoiseSpec::new(0.0, 4.0, 2).unwrap())
            .unwrap()
            .noisy;
        let data = FitData::single(
            noisy.slice_rows(0, 600).unwrap(),
            clean.slice_rows(0, 600).unwrap(),
            noisy.slice_rows(600, 601).unwrap(),
            clean.slice_rows(600, 601).unwrap(),
        )
        .unwrap();
        let ridge = RidgeConfig::default();
        let phi = HyperParams {
            n_nodes: 30,
            leakage: 0.3,
            spectral_radius: 0.8,
            input_scaling: 0.2,
            connectivity: 0.3,
        };
        let losses: Vec<f64> = [5u64, 6]
            .iter()
            .map(
                |&s| match validation_objective(&data, &ridge, s, 50, 0.3)(&phi) {
                    Evaluation::Ok { loss, .. } => loss,
                    Evaluation::Failed => panic!("seed {s} failed"),
                },
            )
            .collect();
        let mut averaged = validation_objective_averaged(&data, &ridge, &[5, 6], 50, 0.3);
        match averaged(&phi) {
            Evaluation::Ok { loss, .. } => {
                let expected = (losses[0] + losses[1]) / 2.0;
                assert!((loss - expected).abs() < 1e-12);
            }
            Evaluation::Failed => panic!("averaged objective failed"),
        }
    }

    #[test]
    fn history_csv_has_one_row_per_iteration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let space = mock_space();
        let out = optimize(
            &space,
            |phi: &HyperParams| Evaluation::Ok {
                loss: phi.leakage,
                lambda: Some(1e-3),
            },
            12,
            4,
        )
        .unwrap();
        write_history_csv(&out.history, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.starts_with("iter,N,alpha,gamma,zeta,p,lambda,loss,seconds"));
    }
}
