//! Importance-ranked truncation and growth of trained reservoirs.
//!
//! Nodes are scored by five normalized metrics (activity, variance,
//! degree, clustering, PageRank); the lowest-ranked batch is removed, the
//! readout recalibrated, and the change kept only if validation NMSE stays
//! within the configured tolerance. Edges and growth follow the same
//! greedy accept/reject loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, CoreResult};
use crate::graph;
use crate::reservoir::{spectral_radius, EchoStateNetwork};
use crate::seeding::{derive_seed, rng_from_seed, tag};
use crate::training::{calibrate, collect_train_rows, validation_nmse, FitData, RidgeConfig};

pub const PAGERANK_DAMPING: f64 = 0.85;

/// Raw importance metrics for one node plus the composite used for
/// ranking (the sum of the five min-max normalized metrics, so it lies in
/// [0, 5]; metrics that are constant across nodes normalize to zero).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeScore {
    pub node_id: usize,
    pub abs_mean_state: f64,
    pub state_variance: f64,
    pub degree: f64,
    pub clustering: f64,
    pub pagerank: f64,
    pub composite: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// Fraction of nodes (or edges) nominated per round.
    pub prune_fraction: f64,
    /// Maximum number of candidate evaluations.
    pub max_trials: usize,
    /// Relative NMSE slack for accepting a structural change.
    pub accept_tolerance: f64,
    /// Stop once validation NMSE reaches this value.
    pub target_nmse: Option<f64>,
    /// Nodes added per growth round.
    pub grow_batch: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            prune_fraction: 0.05,
            max_trials: 20,
            accept_tolerance: 0.01,
            target_nmse: None,
            grow_batch: 1,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> CoreResult<()> {
        if !(self.prune_fraction > 0.0 && self.prune_fraction < 1.0) {
            return Err(CoreError::invalid("prune fraction must be in (0, 1)"));
        }
        if self.max_trials == 0 {
            return Err(CoreError::invalid("need at least one trial"));
        }
        if self.accept_tolerance < 0.0 {
            return Err(CoreError::invalid("accept tolerance must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    PruneNode,
    PruneEdge,
    Grow,
}

impl AuditAction {
    fn as_str(&self) -> &'static str {
        match self {
            AuditAction::PruneNode => "prune_node",
            AuditAction::PruneEdge => "prune_edge",
            AuditAction::Grow => "grow",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub round: usize,
    pub action: AuditAction,
    pub ids: Vec<String>,
    pub nmse_before: f64,
    pub nmse_after: f64,
    pub accepted: bool,
}

/// Chronological log of every structural trial.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AuditTrail {
    pub records: Vec<AuditRecord>,
}

impl AuditTrail {
    /// Writes `round,action,ids,nmse_before,nmse_after,accepted` rows; ids
    /// are ';'-joined.
    pub fn write_csv(&self, path: &Path) -> CoreResult<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "round,action,ids,nmse_before,nmse_after,accepted")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{:e},{:e},{}",
                r.round,
                r.action.as_str(),
                r.ids.join(";"),
                r.nmse_before,
                r.nmse_after,
                r.accepted
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn accepted_nmse_sequence(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.nmse_after)
            .collect()
    }
}

fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo).is_finite() || hi - lo <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Scores every node of a reservoir given the state matrix it produced
/// over the training data (rows are time steps).
pub fn node_scores(esn: &EchoStateNetwork, states: &DMatrix<f64>) -> CoreResult<Vec<NodeScore>> {
    if states.nrows() == 0 || states.ncols() == 0 {
        return Err(CoreError::invalid("state matrix is empty"));
    }
    let n = esn.n_nodes();
    if states.ncols() != n {
        return Err(CoreError::invalid(format!(
            "state matrix has {} columns for a {}-node reservoir",
            states.ncols(),
            n
        )));
    }
    let rows = states.nrows() as f64;
    let mut abs_mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    for j in 0..n {
        let col = states.column(j);
        let mean = col.iter().sum::<f64>() / rows;
        abs_mean.push(mean.abs());
        variance.push(col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows);
    }
    let degree: Vec<f64> = graph::degrees(esn.reservoir_matrix())?
        .into_iter()
        .map(|d| d as f64)
        .collect();
    let clustering = graph::clustering_coefficients(esn.reservoir_matrix())?;
    let pagerank = graph::pagerank(esn.reservoir_matrix(), PAGERANK_DAMPING)?;

    let normalized = [
        min_max_normalize(&abs_mean),
        min_max_normalize(&variance),
        min_max_normalize(&degree),
        min_max_normalize(&clustering),
        min_max_normalize(&pagerank),
    ];
    Ok((0..n)
        .map(|i| NodeScore {
            node_id: i,
            abs_mean_state: abs_mean[i],
            state_variance: variance[i],
            degree: degree[i],
            clustering: clustering[i],
            pagerank: pagerank[i],
            composite: normalized.iter().map(|m| m[i]).sum(),
        })
        .collect())
}

/// New network with the given nodes removed and the recurrent matrix
/// rescaled back to the configured spectral radius. The readout is
/// cleared; callers refit it.
fn remove_nodes(esn: &EchoStateNetwork, drop: &[usize]) -> CoreResult<EchoStateNetwork> {
    let n = esn.n_nodes();
    let keep: Vec<usize> = (0..n).filter(|i| !drop.contains(i)).collect();
    if keep.len() < 2 {
        return Err(CoreError::PruneFloor(format!(
            "removing {} of {} nodes would leave fewer than 2",
            drop.len(),
            n
        )));
    }
    let mut out = esn.clone();
    out.w_res = esn
        .w_res
        .select_rows(keep.iter())
        .select_columns(keep.iter());
    out.w_in = esn.w_in.select_rows(keep.iter());
    out.bias = DVector::from_iterator(keep.len(), keep.iter().map(|&i| esn.bias[i]));
    out.hyper.n_nodes = keep.len();
    out.w_out = None;
    rescale_to_target(&mut out)?;
    Ok(out)
}

fn rescale_to_target(esn: &mut EchoStateNetwork) -> CoreResult<()> {
    let rho = spectral_radius(&esn.w_res)?;
    if rho < 1e-300 {
        return Err(CoreError::DegenerateTopology(
            "spectral rescaling impossible: zero spectral radius".into(),
        ));
    }
    let target = esn.hyper.spectral_radius;
    // Rounding noise in the eigenvalue estimate is not a radius change;
    // rescaling for it would churn every weight by an ULP per round.
    if (rho - target).abs() > 1e-12 * target.max(1e-30) {
        esn.w_res *= target / rho;
    }
    Ok(())
}

fn batch_size(fraction: f64, count: usize) -> usize {
    (fraction * count as f64).ceil() as usize
}

fn reached_target(config: &PruneConfig, nmse: f64) -> bool {
    config.target_nmse.map(|t| nmse <= t).unwrap_or(false)
}

/// Greedily removes low-importance nodes, accepting each batch only if the
/// recalibrated validation NMSE stays within the tolerance. Returns the
/// truncated network and the audit trail of every trial.
pub fn prune_nodes(
    esn: &EchoStateNetwork,
    data: &FitData,
    ridge: &RidgeConfig,
    config: &PruneConfig,
) -> CoreResult<(EchoStateNetwork, AuditTrail)> {
    if !esn.is_trained() {
        return Err(CoreError::Untrained);
    }
    let mut current = esn.clone();
    let mut current_nmse = validation_nmse(&current, &data.val)?;
    let mut audit = AuditTrail::default();
    let mut trials = 0usize;
    let mut round = 0usize;

    'rounds: loop {
        if trials >= config.max_trials || reached_target(config, current_nmse) {
            break;
        }
        let batch = batch_size(config.prune_fraction, current.n_nodes());
        if batch == 0 {
            break;
        }
        if current.n_nodes() < 2 + batch {
            if trials == 0 {
                return Err(CoreError::PruneFloor(format!(
                    "cannot prune {batch} of {} nodes without dropping below 2",
                    current.n_nodes()
                )));
            }
            break;
        }
        let (states, _) = collect_train_rows(&current, data)?;
        let mut ranked = node_scores(&current, &states)?;
        ranked.sort_by(|a, b| {
            a.composite
                .partial_cmp(&b.composite)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.node_id.cmp(&b.node_id))
        });
        let ids: Vec<usize> = ranked.iter().map(|s| s.node_id).collect();

        let mut accepted_this_round = false;
        for candidate_ids in ids.chunks(batch) {
            if trials >= config.max_trials {
                break 'rounds;
            }
            if current.n_nodes() - candidate_ids.len() < 2 {
                break;
            }
            trials += 1;
            round += 1;
            let labels: Vec<String> = candidate_ids.iter().map(|i| i.to_string()).collect();
            let candidate = match remove_nodes(&current, candidate_ids) {
                Ok(c) => c,
                Err(CoreError::DegenerateTopology(_)) => {
                    audit.records.push(AuditRecord {
                        round,
                        action: AuditAction::PruneNode,
                        ids: labels,
                        nmse_before: current_nmse,
                        nmse_after: f64::INFINITY,
                        accepted: false,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut candidate = candidate;
            let cal = calibrate(&mut candidate, data, ridge)?;
            let accepted = cal.val_nmse <= (1.0 + config.accept_tolerance) * current_nmse;
            audit.records.push(AuditRecord {
                round,
                action: AuditAction::PruneNode,
                ids: labels,
                nmse_before: current_nmse,
                nmse_after: cal.val_nmse,
                accepted,
            });
            if accepted {
                current = candidate;
                current_nmse = cal.val_nmse;
                accepted_this_round = true;
                break; // re-rank on the truncated network
            }
        }
        if !accepted_this_round {
            break;
        }
    }
    Ok((current, audit))
}

/// Directed edges as (to, from, |weight|) triples, excluding self-loops.
fn edge_list(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let n = m.nrows();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] != 0.0 {
                edges.push((i, j, m[(i, j)].abs()));
            }
        }
    }
    edges
}

/// Greedily zeroes low-importance edges with the same accept/reject loop
/// as node pruning. Edges are ranked ascending by |weight| times the mean
/// composite score of their endpoints.
pub fn prune_edges(
    esn: &EchoStateNetwork,
    data: &FitData,
    ridge: &RidgeConfig,
    config: &PruneConfig,
) -> CoreResult<(EchoStateNetwork, AuditTrail)> {
    if !esn.is_trained() {
        return Err(CoreError::Untrained);
    }
    let mut current = esn.clone();
    let mut current_nmse = validation_nmse(&current, &data.val)?;
    let mut audit = AuditTrail::default();
    let mut trials = 0usize;
    let mut round = 0usize;

    'rounds: loop {
        if trials >= config.max_trials || reached_target(config, current_nmse) {
            break;
        }
        let edges = edge_list(&current.w_res);
        let batch = batch_size(config.prune_fraction, edges.len());
        if batch == 0 || edges.is_empty() {
            break;
        }
        let (states, _) = collect_train_rows(&current, data)?;
        let scores = node_scores(&current, &states)?;
        let mut ranked: Vec<(usize, usize, f64)> = edges
            .iter()
            .map(|&(i, j, w)| {
                let importance = w * 0.5 * (scores[i].composite + scores[j].composite);
                (i, j, importance)
            })
            .collect();
        ranked.sort_by(|a, b| {
            a.2.partial_cmp(&b.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then((a.0, a.1).cmp(&(b.0, b.1)))
        });

        let mut accepted_this_round = false;
        for candidate_edges in ranked.chunks(batch) {
            if trials >= config.max_trials {
                break 'rounds;
            }
            trials += 1;
            round += 1;
            let labels: Vec<String> = candidate_edges
                .iter()
                .map(|(i, j, _)| format!("{j}->{i}"))
                .collect();
            let mut candidate = current.clone();
            for &(i, j, _) in candidate_edges {
                candidate.w_res[(i, j)] = 0.0;
            }
            candidate.w_out = None;
            // A batch that leaves nothing to rescale is a degenerate
            // topology; the error propagates (spectral rescaling contract).
            rescale_to_target(&mut candidate)?;
            let cal = calibrate(&mut candidate, data, ridge)?;
            let accepted = cal.val_nmse <= (1.0 + config.accept_tolerance) * current_nmse;
            audit.records.push(AuditRecord {
                round,
                action: AuditAction::PruneEdge,
                ids: labels,
                nmse_before: current_nmse,
                nmse_after: cal.val_nmse,
                accepted,
            });
            if accepted {
                current = candidate;
                current_nmse = cal.val_nmse;
                accepted_this_round = true;
                break;
            }
        }
        if !accepted_this_round {
            break;
        }
    }
    Ok((current, audit))
}

/// Adds `config.grow_batch` nodes per round with ER-consistent random
/// edges and fresh input weights, keeping a round only when the
/// recalibrated validation NMSE passes the acceptance rule.
pub fn grow(
    esn: &EchoStateNetwork,
    data: &FitData,
    ridge: &RidgeConfig,
    config: &PruneConfig,
) -> CoreResult<(EchoStateNetwork, AuditTrail)> {
    if !esn.is_trained() {
        return Err(CoreError::Untrained);
    }
    let k = config.grow_batch;
    let mut audit = AuditTrail::default();
    if k == 0 {
        return Ok((esn.clone(), audit));
    }
    let mut current = esn.clone();
    let mut current_nmse = validation_nmse(&current, &data.val)?;
    for trial in 0..config.max_trials {
        if reached_target(config, current_nmse) {
            break;
        }
        let seed = derive_seed(esn.seed(), &[tag("grow"), trial as u64]);
        let mut candidate = enlarge(&current, k, seed)?;
        let cal = calibrate(&mut candidate, data, ridge)?;
        let accepted = cal.val_nmse <= (1.0 + config.accept_tolerance) * current_nmse;
        let old_n = current.n_nodes();
        audit.records.push(AuditRecord {
            round: trial + 1,
            action: AuditAction::Grow,
            ids: (old_n..old_n + k).map(|i| i.to_string()).collect(),
            nmse_before: current_nmse,
            nmse_after: cal.val_nmse,
            accepted,
        });
        if accepted {
            current = candidate;
            current_nmse = cal.val_nmse;
        }
    }
    Ok((current, audit))
}

/// Optional recalibration of the dynamic parameters after truncation:
/// a coarse local grid over (leakage, spectral radius) with the pruned
/// topology held fixed. Each candidate refits the ridge coefficient and
/// readout; the best validation NMSE wins (the unchanged network stays
/// when nothing improves).
pub fn retune_dynamics(
    esn: &EchoStateNetwork,
    data: &FitData,
    ridge: &RidgeConfig,
) -> CoreResult<(EchoStateNetwork, f64)> {
    if !esn.is_trained() {
        return Err(CoreError::Untrained);
    }
    let mut best = esn.clone();
    let mut best_nmse = validation_nmse(esn, &data.val)?;
    let alpha0 = esn.hyper().leakage;
    let gamma0 = esn.hyper().spectral_radius;
    for alpha_scale in [0.5, 0.75, 1.0, 1.25, 1.5] {
        for gamma_scale in [0.8, 0.9, 1.0, 1.1, 1.2] {
            if alpha_scale == 1.0 && gamma_scale == 1.0 {
                continue;
            }
            let alpha = (alpha0 * alpha_scale).clamp(0.01, 1.0);
            let gamma = (gamma0 * gamma_scale).clamp(0.01, 0.999);
            let mut candidate = esn.clone();
            candidate.hyper.leakage = alpha;
            candidate.w_res *= gamma / gamma0;
            candidate.hyper.spectral_radius = gamma;
            candidate.w_out = None;
            let cal = calibrate(&mut candidate, data, ridge)?;
            if cal.val_nmse < best_nmse {
                best_nmse = cal.val_nmse;
                best = candidate;
            }
        }
    }
    Ok((best, best_nmse))
}

fn enlarge(esn: &EchoStateNetwork, k: usize, seed: u64) -> CoreResult<EchoStateNetwork> {
    let n = esn.n_nodes();
    let m = n + k;
    let p = esn.hyper().connectivity;
    let zeta = esn.hyper().input_scaling;
    let mut rng = rng_from_seed(seed);

    let mut w_res = DMatrix::zeros(m, m);
    w_res.view_mut((0, 0), (n, n)).copy_from(&esn.w_res);
    for i in 0..m {
        for j in 0..m {
            let fresh = i >= n || j >= n;
            if fresh && i != j && rng.random_bool(p) {
                w_res[(i, j)] = rng.random_range(-1.0..1.0);
            }
        }
    }
    let mut w_in = DMatrix::zeros(m, esn.input_dim());
    w_in.view_mut((0, 0), (n, esn.input_dim()))
        .copy_from(&esn.w_in);
    for i in n..m {
        for c in 0..esn.input_dim() {
            w_in[(i, c)] = if zeta == 0.0 {
                0.0
            } else {
                rng.random_range(-zeta..zeta)
            };
        }
    }
    // New nodes inherit the prevailing bias level (a constant vector in
    // the usual configuration).
    let bias_fill = esn.bias.iter().sum::<f64>() / n as f64;
    let mut bias = DVector::from_element(m, bias_fill);
    bias.rows_mut(0, n).copy_from(&esn.bias);

    let mut out = esn.clone();
    out.w_res = w_res;
    out.w_in = w_in;
    out.bias = bias;
    out.hyper.n_nodes = m;
    out.w_out = None;
    rescale_to_target(&mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_lorenz, LorenzParams};
    use crate::noise::{add_noise, NoiseSpec};
    use crate::reservoir::{build_reservoir, run, HyperParams};
    use crate::training::predict;
    use crate::trajectory::Trajectory;

    fn hyper(n: usize) -> HyperParams {
        HyperParams {
            n_nodes: n,
            leakage: 0.4,
            spectral_radius: 0.8,
            input_scaling: 0.2,
            connectivity: 0.3,
        }
    }

    fn lorenz_fit_data(rows: usize) -> FitData {
        let clean =
            integrate_lorenz(&LorenzParams::default(), 0.005, rows as f64 * 0.005 * 2.2).unwrap();
        let spec = NoiseSpec::new(0.0, 4.0, 99).unwrap();
        let observed = clean.select_channels(&["x".into(), "y".into()]).unwrap();
        let noisy = add_noise(&observed, &spec).unwrap().noisy;
        FitData::single(
            noisy.slice_rows(0, rows).unwrap(),
            clean.slice_rows(0, rows).unwrap(),
            noisy.slice_rows(rows, rows).unwrap(),
            clean.slice_rows(rows, rows).unwrap(),
        )
        .unwrap()
    }

    fn trained(n: usize, data: &FitData) -> EchoStateNetwork {
        let mut esn = build_reservoir(&hyper(n), 2, 7).unwrap();
        esn.set_washout(20);
        calibrate(&mut esn, data, &RidgeConfig::default()).unwrap();
        esn
    }

    #[test]
    fn symmetric_ring_scores_are_equal() {
        // Circulant reservoir driven identically at every node: all five
        // metrics are constant across nodes, so composites are all zero.
        let n = 6;
        let mut w_res = DMatrix::zeros(n, n);
        for i in 0..n {
            w_res[(i, (i + 1) % n)] = 0.5;
        }
        let mut esn = build_reservoir(&hyper(n), 1, 1).unwrap();
        esn.w_res = w_res;
        esn.w_in = DMatrix::from_element(n, 1, 0.3);
        let inputs = Trajectory::new(
            0.0,
            0.1,
            DMatrix::from_fn(50, 1, |i, _| (i as f64 * 0.3).sin()),
            vec!["u0".into()],
        )
        .unwrap();
        let states = run(&esn, &inputs, None).unwrap();
        let scores = node_scores(&esn, &states).unwrap();
        for s in &scores {
            assert_eq!(s.composite, 0.0, "node {}", s.node_id);
            assert!((s.pagerank - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_reject_empty_states() {
        let data = lorenz_fit_data(150);
        let esn = trained(12, &data);
        assert!(node_scores(&esn, &DMatrix::zeros(0, 12)).is_err());
    }

    #[test]
    fn composite_lies_in_range() {
        let data = lorenz_fit_data(150);
        let esn = trained(16, &data);
        let (states, _) = collect_train_rows(&esn, &data).unwrap();
        let scores = node_scores(&esn, &states).unwrap();
        for s in scores {
            assert!((0.0..=5.0).contains(&s.composite));
            assert!((0.0..=1.0).contains(&s.clustering));
        }
    }

    #[test]
    fn dead_node_removal_keeps_predictions() {
        let data = lorenz_fit_data(150);
        let ridge = RidgeConfig {
            select_by_cv: false,
            lambda: 1e-6,
            ..RidgeConfig::default()
        };
        let mut esn = build_reservoir(&hyper(14), 2, 7).unwrap();
        esn.set_washout(20);
        // Disconnect node 5 entirely: zero row/column and input weights,
        // then restore the spectral radius so removal is a pure deletion.
        for i in 0..14 {
            esn.w_res[(5, i)] = 0.0;
            esn.w_res[(i, 5)] = 0.0;
        }
        for c in 0..2 {
            esn.w_in[(5, c)] = 0.0;
        }
        let rho = spectral_radius(&esn.w_res).unwrap();
        esn.w_res *= esn.hyper().spectral_radius / rho;
        calibrate(&mut esn, &data, &ridge).unwrap();
        let before = predict(&esn, &data.val[0].input).unwrap();

        let mut truncated = remove_nodes(&esn, &[5]).unwrap();
        calibrate(&mut truncated, &data, &ridge).unwrap();
        let after = predict(&truncated, &data.val[0].input).unwrap();
        let max_diff = (before.output.values() - after.output.values()).abs().max();
        assert!(max_diff < 1e-10, "prediction drift {max_diff}");
    }

    #[test]
    fn prune_floor_is_refused() {
        let data = lorenz_fit_data(120);
        // Dense connectivity: a 3-node sparse sample can come up empty.
        let mut h = hyper(3);
        h.connectivity = 0.9;
        let mut esn = build_reservoir(&h, 2, 7).unwrap();
        esn.set_washout(20);
        calibrate(&mut esn, &data, &RidgeConfig::default()).unwrap();
        let config = PruneConfig {
            prune_fraction: 0.9,
            ..PruneConfig::default()
        };
        match prune_nodes(&esn, &data, &RidgeConfig::default(), &config) {
            Err(CoreError::PruneFloor(_)) => {}
            other => panic!("expected floor refusal, got {other:?}"),
        }
    }

    #[test]
    fn zero_batch_is_a_no_op() {
        let data = lorenz_fit_data(120);
        let esn = trained(10, &data);
        let config = PruneConfig {
            prune_fraction: 0.0, // bypasses validate(): fraction rounds to 0
            ..PruneConfig::default()
        };
        let (out, audit) = prune_nodes(&esn, &data, &RidgeConfig::default(), &config).unwrap();
        assert_eq!(out.reservoir_matrix(), esn.reservoir_matrix());
        assert!(audit.records.is_empty());
    }

    #[test]
    fn rejected_batches_are_restored() {
        let data = lorenz_fit_data(150);
        let esn = trained(10, &data);
        // Zero tolerance and a huge batch: any degradation is rejected.
        let config = PruneConfig {
            prune_fraction: 0.79,
            accept_tolerance: 0.0,
            max_trials: 2,
            ..PruneConfig::default()
        };
        let (out, audit) = prune_nodes(&esn, &data, &RidgeConfig::default(), &config).unwrap();
        let any_rejected = audit.records.iter().any(|r| !r.accepted);
        if any_rejected {
            let last_accept = audit.records.iter().filter(|r| r.accepted).count();
            if last_accept == 0 {
                assert_eq!(out.n_nodes(), esn.n_nodes());
                assert_eq!(out.reservoir_matrix(), esn.reservoir_matrix());
            }
        }
        for r in &audit.records {
            if r.accepted {
                assert!(r.nmse_after <= (1.0 + config.accept_tolerance) * r.nmse_before);
            }
        }
    }

    #[test]
    fn near_zero_edges_go_first_without_prediction_drift() {
        let data = lorenz_fit_data(150);
        let ridge = RidgeConfig {
            select_by_cv: false,
            lambda: 1e-6,
            ..RidgeConfig::default()
        };
        let mut esn = build_reservoir(&hyper(12), 2, 7).unwrap();
        esn.set_washout(20);
        // Two essentially weightless edges must rank first. Renormalize
        // afterwards so their removal does not shift the rescale factor.
        esn.w_res[(0, 1)] = 1e-30;
        esn.w_res[(2, 3)] = -1e-30;
        let rho = spectral_radius(&esn.w_res).unwrap();
        esn.w_res *= esn.hyper().spectral_radius / rho;
        calibrate(&mut esn, &data, &ridge).unwrap();
        let before = predict(&esn, &data.val[0].input).unwrap();
        let config = PruneConfig {
            prune_fraction: 2.0 / esn.edge_count() as f64,
            max_trials: 1,
            ..PruneConfig::default()
        };
        let (out, audit) = prune_edges(&esn, &data, &ridge, &config).unwrap();
        assert!(audit.records[0].accepted);
        assert!(audit.records[0].ids.contains(&"1->0".to_string()));
        assert!(audit.records[0].ids.contains(&"3->2".to_string()));
        let after = predict(&out, &data.val[0].input).unwrap();
        let max_diff = (before.output.values() - after.output.values()).abs().max();
        assert!(max_diff < 1e-12, "prediction drift {max_diff}");
    }

    #[test]
    fn removing_every_edge_is_degenerate() {
        let data = lorenz_fit_data(120);
        let ridge = RidgeConfig {
            select_by_cv: false,
            lambda: 1e-6,
            ..RidgeConfig::default()
        };
        let mut esn = build_reservoir(&hyper(8), 2, 7).unwrap();
        esn.set_washout(20);
        // Keep exactly two edges so one batch wipes the topology.
        let mut w = DMatrix::zeros(8, 8);
        w[(0, 1)] = 0.5;
        w[(1, 0)] = 0.5;
        esn.w_res = w;
        calibrate(&mut esn, &data, &ridge).unwrap();
        let config = PruneConfig {
            prune_fraction: 0.99,
            ..PruneConfig::default()
        };
        match prune_edges(&esn, &data, &ridge, &config) {
            Err(CoreError::DegenerateTopology(_)) => {}
            other => panic!("expected degenerate topology, got {other:?}"),
        }
    }

    #[test]
    fn grow_zero_batch_is_identity() {
        let data = lorenz_fit_data(120);
        let esn = trained(10, &data);
        let config = PruneConfig {
            grow_batch: 0,
            ..PruneConfig::default()
        };
        let (out, audit) = grow(&esn, &data, &RidgeConfig::default(), &config).unwrap();
        assert_eq!(out.reservoir_matrix(), esn.reservoir_matrix());
        assert!(audit.records.is_empty());
    }

    #[test]
    fn grow_improves_an_undersized_reservoir() {
        let data = lorenz_fit_data(200);
        let mut esn = build_reservoir(&hyper(5), 2, 11).unwrap();
        esn.set_washout(20);
        let ridge = RidgeConfig::default();
        let baseline = calibrate(&mut esn, &data, &ridge).unwrap().val_nmse;
        let config = PruneConfig {
            grow_batch: 5,
            max_trials: 10,
            accept_tolerance: 0.001,
            ..PruneConfig::default()
        };
        let (out, audit) = grow(&esn, &data, &ridge, &config).unwrap();
        let final_nmse = validation_nmse(&out, &data.val).unwrap();
        assert!(
            final_nmse < baseline,
            "grew {} -> {} nodes but NMSE {baseline} -> {final_nmse}",
            esn.n_nodes(),
            out.n_nodes()
        );
        assert!(audit.records.iter().any(|r| r.accepted));
        // Spectral radius restored after every accepted change.
        let rho = spectral_radius(out.reservoir_matrix()).unwrap();
        assert!((rho - 0.8).abs() < 1e-9);
    }

    #[test]
    fn grow_rejections_roll_back() {
        let data = lorenz_fit_data(150);
        let esn = trained(12, &data);
        // Zero tolerance: only strict improvements survive, so the final
        // size is the baseline plus k per accepted round exactly.
        let config = PruneConfig {
            grow_batch: 3,
            max_trials: 5,
            accept_tolerance: 0.0,
            ..PruneConfig::default()
        };
        let (out, audit) = grow(&esn, &data, &RidgeConfig::default(), &config).unwrap();
        let accepted = audit.records.iter().filter(|r| r.accepted).count();
        assert_eq!(out.n_nodes(), esn.n_nodes() + 3 * accepted);
        assert_eq!(audit.records.len(), 5);
    }

    #[test]
    fn normalization_maps_extremes_to_unit_interval() {
        let values = vec![3.0, -1.0, 5.0, 2.0];
        let normalized = min_max_normalize(&values);
        assert_eq!(normalized[1], 0.0);
        assert_eq!(normalized[2], 1.0);
        assert!(normalized.iter().all(|v| (0.0..=1.0).contains(v)));
        // Constant metric maps to zero by convention.
        assert!(min_max_normalize(&[2.5; 4]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn retune_never_worsens_validation() {
        let data = lorenz_fit_data(150);
        let esn = trained(14, &data);
        let before = validation_nmse(&esn, &data.val).unwrap();
        let (retuned, after) = retune_dynamics(&esn, &data, &RidgeConfig::default()).unwrap();
        assert!(after <= before, "retune worsened {before} -> {after}");
        assert!(retuned.is_trained());
        // Radius bookkeeping stays consistent with the stored target.
        let rho = spectral_radius(retuned.reservoir_matrix()).unwrap();
        assert!((rho - retuned.hyper().spectral_radius).abs() < 1e-9);
    }

    #[test]
    fn audit_sequence_never_regresses_beyond_tolerance() {
        let data = lorenz_fit_data(150);
        let esn = trained(20, &data);
        let config = PruneConfig {
            max_trials: 6,
            ..PruneConfig::default()
        };
        let (_, audit) = prune_nodes(&esn, &data, &RidgeConfig::default(), &config).unwrap();
        let seq = audit.accepted_nmse_sequence();
        for pair in seq.windows(2) {
            assert!(pair[1] <= (1.0 + config.accept_tolerance) * pair[0]);
        }
    }
}
