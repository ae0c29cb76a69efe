//! Echo state network construction and state propagation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, CoreResult};
use crate::seeding::rng_from_seed;
use crate::trajectory::Trajectory;

/// Default search intervals for the tunable reservoir parameters.
pub const ALPHA_BOUNDS: (f64, f64) = (0.01, 1.0);
pub const GAMMA_BOUNDS: (f64, f64) = (0.01, 1.0);
pub const ZETA_BOUNDS: (f64, f64) = (0.1, 2.0);
pub const CONNECTIVITY_BOUNDS: (f64, f64) = (0.1, 0.9);

/// Default number of initial state rows excluded from readout fitting.
pub const DEFAULT_WASHOUT: usize = 100;

/// The tunable tuple (N, alpha, gamma, zeta, p).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Reservoir size N.
    pub n_nodes: usize,
    /// Leakage rate alpha: weight of the new activation in the state update.
    pub leakage: f64,
    /// Spectral radius gamma the recurrent matrix is rescaled to.
    pub spectral_radius: f64,
    /// Input scaling zeta: input weights are uniform on (-zeta, zeta).
    pub input_scaling: f64,
    /// Erdos-Renyi edge probability p of the recurrent graph.
    pub connectivity: f64,
}

impl HyperParams {
    /// Basic sanity checks; range constraints against a search space are
    /// enforced by the optimizer, not here.
    pub fn validate(&self) -> CoreResult<()> {
        if self.n_nodes < 2 {
            return Err(CoreError::invalid("reservoir needs at least 2 nodes"));
        }
        if !(0.0..=1.0).contains(&self.leakage) {
            return Err(CoreError::invalid(format!(
                "leakage must be in [0, 1], got {}",
                self.leakage
            )));
        }
        if self.spectral_radius < 0.0 || !self.spectral_radius.is_finite() {
            return Err(CoreError::invalid("spectral radius must be >= 0"));
        }
        if self.input_scaling < 0.0 || !self.input_scaling.is_finite() {
            return Err(CoreError::invalid("input scaling must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.connectivity) {
            return Err(CoreError::invalid(format!(
                "connectivity must be in [0, 1], got {}",
                self.connectivity
            )));
        }
        Ok(())
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> CoreResult<f64> {
    if m.nrows() != m.ncols() {
        return Err(CoreError::invalid(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("matrix for spectral radius".into()));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// A reservoir with fixed random recurrent weights and an optional trained
/// linear readout. Immutable after construction/training, so instances can
/// be shared read-only across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoStateNetwork {
    pub(crate) w_res: DMatrix<f64>,
    pub(crate) w_in: DMatrix<f64>,
    pub(crate) bias: DVector<f64>,
    pub(crate) hyper: HyperParams,
    pub(crate) w_out: Option<DMatrix<f64>>,
    pub(crate) seed: u64,
    pub(crate) washout: usize,
    pub(crate) input_channels: Vec<String>,
    pub(crate) output_channels: Vec<String>,
}

impl EchoStateNetwork {
    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn n_nodes(&self) -> usize {
        self.w_res.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn washout(&self) -> usize {
        self.washout
    }

    pub fn set_washout(&mut self, washout: usize) {
        self.washout = washout;
    }

    pub fn reservoir_matrix(&self) -> &DMatrix<f64> {
        &self.w_res
    }

    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn set_bias(&mut self, bias: DVector<f64>) -> CoreResult<()> {
        if bias.len() != self.n_nodes() {
            return Err(CoreError::invalid("bias length must match node count"));
        }
        self.bias = bias;
        Ok(())
    }

    pub fn readout(&self) -> Option<&DMatrix<f64>> {
        self.w_out.as_ref()
    }

    pub fn is_trained(&self) -> bool {
        self.w_out.is_some()
    }

    pub fn set_readout(
        &mut self,
        w_out: DMatrix<f64>,
        output_channels: Vec<String>,
    ) -> CoreResult<()> {
        if w_out.nrows() != self.n_nodes() {
            return Err(CoreError::invalid(format!(
                "readout rows {} must match node count {}",
                w_out.nrows(),
                self.n_nodes()
            )));
        }
        if w_out.ncols() != output_channels.len() {
            return Err(CoreError::invalid(
                "readout columns must match output channel count",
            ));
        }
        self.w_out = Some(w_out);
        self.output_channels = output_channels;
        Ok(())
    }

    /// Zeroes the input weights where `mask` is false, connecting inputs
    /// to a subset of nodes only. The dense construction stays the
    /// default; this is the optional sparse-input variant.
    pub fn mask_input_weights(&mut self, mask: &DMatrix<bool>) -> CoreResult<()> {
        if mask.shape() != self.w_in.shape() {
            return Err(CoreError::invalid(format!(
                "mask shape {:?} does not match input matrix {:?}",
                mask.shape(),
                self.w_in.shape()
            )));
        }
        for (slot, keep) in self.w_in.iter_mut().zip(mask.iter()) {
            if !keep {
                *slot = 0.0;
            }
        }
        Ok(())
    }

    pub fn input_channels(&self) -> &[String] {
        &self.input_channels
    }

    pub fn set_input_channels(&mut self, names: Vec<String>) -> CoreResult<()> {
        if names.len() != self.input_dim() {
            return Err(CoreError::invalid(
                "input channel names must match input dimension",
            ));
        }
        self.input_channels = names;
        Ok(())
    }

    pub fn output_channels(&self) -> &[String] {
        &self.output_channels
    }

    /// Number of directed recurrent edges (nonzero off-diagonal weights).
    pub fn edge_count(&self) -> usize {
        let n = self.n_nodes();
        let mut count = 0;
        for i in 0..n {
            for j in 0..n {
                if i != j && self.w_res[(i, j)] != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Builds an untrained reservoir from hyperparameters and a seed.
///
/// Each ordered off-diagonal pair becomes an edge with probability `p`,
/// weights uniform on (-1, 1); the matrix is rescaled so its spectral
/// radius equals `gamma`. Input weights are dense uniform on (-zeta, zeta)
/// and the bias starts at zero.
pub fn build_reservoir(
    hyper: &HyperParams,
    d_in: usize,
    seed: u64,
) -> CoreResult<EchoStateNetwork> {
    hyper.validate()?;
    if d_in == 0 {
        return Err(CoreError::invalid("need at least one input channel"));
    }
    let n = hyper.n_nodes;
    let mut rng = rng_from_seed(seed);

    let mut w_res = DMatrix::zeros(n, n);
    let mut edges = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(hyper.connectivity) {
                w_res[(i, j)] = rng.random_range(-1.0..1.0);
                edges += 1;
            }
        }
    }
    if edges == 0 {
        return Err(CoreError::DegenerateTopology(
            "sampled reservoir has no edges".into(),
        ));
    }
    let rho = spectral_radius(&w_res)?;
    if rho < 1e-300 {
        return Err(CoreError::DegenerateTopology(
            "sampled reservoir has zero spectral radius".into(),
        ));
    }
    w_res *= hyper.spectral_radius / rho;

    let zeta = hyper.input_scaling;
    let w_in = DMatrix::from_fn(n, d_in, |_, _| {
        if zeta == 0.0 {
            0.0
        } else {
            rng.random_range(-zeta..zeta)
        }
    });

    Ok(EchoStateNetwork {
        w_res,
        w_in,
        bias: DVector::zeros(n),
        hyper: *hyper,
        w_out: None,
        seed,
        washout: DEFAULT_WASHOUT,
        input_channels: (0..d_in).map(|i| format!("u{i}")).collect(),
        output_channels: Vec::new(),
    })
}

/// One state update: `(1 - alpha) r + alpha tanh(W_res r + W_in u + b)`.
pub fn step(
    esn: &EchoStateNetwork,
    r: &DVector<f64>,
    u: &DVector<f64>,
) -> CoreResult<DVector<f64>> {
    if r.len() != esn.n_nodes() {
        return Err(CoreError::invalid(format!(
            "state length {} does not match reservoir size {}",
            r.len(),
            esn.n_nodes()
        )));
    }
    if u.len() != esn.input_dim() {
        return Err(CoreError::invalid(format!(
            "input length {} does not match input dimension {}",
            u.len(),
            esn.input_dim()
        )));
    }
    let mut pre = &esn.w_res * r;
    pre += &esn.w_in * u;
    pre += &esn.bias;
    let alpha = esn.hyper.leakage;
    Ok(DVector::from_fn(r.len(), |i, _| {
        (1.0 - alpha) * r[i] + alpha * pre[i].tanh()
    }))
}

/// Drives the reservoir over an input sequence and collects every state.
///
/// Row `i` of the result is the state after consuming input row `i`. The
/// washout prefix recorded on the network is *not* removed here; it only
/// marks how many leading rows downstream fitting should skip.
pub fn run(
    esn: &EchoStateNetwork,
    inputs: &Trajectory,
    r0: Option<&DVector<f64>>,
) -> CoreResult<DMatrix<f64>> {
    if inputs.is_empty() {
        return Err(CoreError::invalid("input trajectory is empty"));
    }
    if inputs.num_channels() != esn.input_dim() {
        return Err(CoreError::invalid(format!(
            "input has {} channels but reservoir expects {}",
            inputs.num_channels(),
            esn.input_dim()
        )));
    }
    let n = esn.n_nodes();
    let steps = inputs.len();
    let mut state = match r0 {
        Some(r) => {
            if r.len() != n {
                return Err(CoreError::invalid("initial state length mismatch"));
            }
            r.clone()
        }
        None => DVector::zeros(n),
    };
    let alpha = esn.hyper.leakage;
    let mut pre = DVector::zeros(n);
    let mut u = DVector::zeros(esn.input_dim());
    // Column-major staging: states are written as columns and transposed once.
    let mut states = DMatrix::zeros(n, steps);
    for t in 0..steps {
        for (c, slot) in u.iter_mut().enumerate() {
            *slot = inputs.values()[(t, c)];
        }
        esn.w_res.mul_to(&state, &mut pre);
        pre.gemv(1.0, &esn.w_in, &u, 1.0);
        pre += &esn.bias;
        for i in 0..n {
            state[i] = (1.0 - alpha) * state[i] + alpha * pre[i].tanh();
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Instability { step: t });
        }
        states.set_column(t, &state);
    }
    Ok(states.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_lorenz, LorenzParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn hyper(n: usize) -> HyperParams {
        HyperParams {
            n_nodes: n,
            leakage: 0.5,
            spectral_radius: 0.9,
            input_scaling: 0.5,
            connectivity: 0.3,
        }
    }

    #[test]
    fn spectral_radius_known_matrices() {
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_relative_eq!(spectral_radius(&swap).unwrap(), 1.0, epsilon = 1e-12);
        let zero = DMatrix::zeros(3, 3);
        assert_eq!(spectral_radius(&zero).unwrap(), 0.0);
        let diag = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, -0.7]);
        assert_relative_eq!(spectral_radius(&diag).unwrap(), 0.7, epsilon = 1e-12);
        let rect = DMatrix::zeros(2, 3);
        assert!(spectral_radius(&rect).is_err());
    }

    #[test]
    fn build_rescales_to_requested_radius() {
        for seed in [1u64, 2, 3] {
            let esn = build_reservoir(&hyper(80), 2, seed).unwrap();
            let rho = spectral_radius(&esn.w_res).unwrap();
            assert!((rho - 0.9).abs() < 1e-9, "rho {rho}");
        }
    }

    #[test]
    fn build_edge_count_concentrates() {
        // Binomial(N(N-1), p): mean 2970, sd ~45.6 for N=100, p=0.3.
        let esn = build_reservoir(&hyper(100), 2, 12345).unwrap();
        let count = esn.edge_count() as f64;
        let mean = 100.0 * 99.0 * 0.3;
        let sd = (100.0f64 * 99.0 * 0.3 * 0.7).sqrt();
        assert!(
            (count - mean).abs() < 3.0 * sd,
            "edge count {count} vs mean {mean}"
        );
    }

    #[test]
    fn build_with_no_edges_is_degenerate() {
        let mut h = hyper(5);
        h.connectivity = 0.0;
        match build_reservoir(&h, 1, 7) {
            Err(CoreError::DegenerateTopology(_)) => {}
            other => panic!("expected degenerate topology, got {other:?}"),
        }
    }

    #[test]
    fn step_identities() {
        let mut h = hyper(8);
        h.leakage = 0.0;
        let esn = build_reservoir(&h, 1, 3).unwrap();
        let r = DVector::from_fn(8, |i, _| 0.1 * i as f64 - 0.3);
        let u = DVector::from_vec(vec![1.5]);
        // alpha = 0 freezes the state.
        assert_eq!(step(&esn, &r, &u).unwrap(), r);

        let esn = build_reservoir(&hyper(8), 1, 3).unwrap();
        let zero = DVector::zeros(8);
        let out = step(&esn, &zero, &DVector::zeros(1)).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn step_scalar_hand_value() {
        // N=1 is below the build floor, so assemble the struct directly:
        // alpha 0.5, W_res = 0, W_in = 1, u = 0.5 -> 0.5 tanh(0.5).
        let esn = EchoStateNetwork {
            w_res: DMatrix::zeros(1, 1),
            w_in: DMatrix::from_element(1, 1, 1.0),
            bias: DVector::zeros(1),
            hyper: HyperParams {
                n_nodes: 1,
                leakage: 0.5,
                spectral_radius: 0.0,
                input_scaling: 1.0,
                connectivity: 0.0,
            },
            w_out: None,
            seed: 0,
            washout: 0,
            input_channels: vec!["u0".into()],
            output_channels: vec![],
        };
        let out = step(&esn, &DVector::zeros(1), &DVector::from_vec(vec![0.5])).unwrap();
        assert_relative_eq!(out[0], 0.23105857863000487, epsilon = 1e-15);
    }

    #[test]
    fn input_mask_zeroes_selected_weights() {
        let mut esn = build_reservoir(&hyper(8), 2, 3).unwrap();
        let mask = DMatrix::from_fn(8, 2, |i, _| i % 2 == 0);
        esn.mask_input_weights(&mask).unwrap();
        for i in 0..8 {
            for c in 0..2 {
                if i % 2 != 0 {
                    assert_eq!(esn.input_matrix()[(i, c)], 0.0);
                }
            }
        }
        let bad = DMatrix::from_element(3, 2, true);
        assert!(esn.mask_input_weights(&bad).is_err());
    }

    #[test]
    fn step_rejects_dimension_mismatch() {
        let esn = build_reservoir(&hyper(8), 2, 3).unwrap();
        let r = DVector::zeros(3);
        let u = DVector::zeros(2);
        assert!(step(&esn, &r, &u).is_err());
        let r = DVector::zeros(8);
        let u = DVector::zeros(1);
        assert!(step(&esn, &r, &u).is_err());
    }

    fn zero_inputs(rows: usize, channels: usize) -> Trajectory {
        Trajectory::new(
            0.0,
            0.1,
            DMatrix::zeros(rows, channels),
            (0..channels).map(|i| format!("u{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn run_zero_inputs_zero_state() {
        let esn = build_reservoir(&hyper(10), 2, 5).unwrap();
        let states = run(&esn, &zero_inputs(50, 2), None).unwrap();
        assert_eq!(states.nrows(), 50);
        assert_eq!(states.ncols(), 10);
        assert!(states.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn run_with_frozen_dynamics_keeps_r0() {
        let mut h = hyper(6);
        h.leakage = 0.0;
        let esn = build_reservoir(&h, 1, 5).unwrap();
        let r0 = DVector::from_fn(6, |i, _| (i as f64 + 1.0) / 10.0);
        let states = run(&esn, &zero_inputs(20, 1), Some(&r0)).unwrap();
        for t in 0..20 {
            for i in 0..6 {
                assert_eq!(states[(t, i)], r0[i]);
            }
        }
    }

    #[test]
    fn fading_memory_on_lorenz_input() {
        let lorenz = integrate_lorenz(&LorenzParams::default(), 0.005, 6.0).unwrap();
        let inputs = lorenz
            .select_channels(&["x".into(), "y".into()])
            .unwrap()
            .slice_rows(0, 1001)
            .unwrap();
        for gamma in [0.5, 0.9] {
            let h = HyperParams {
                n_nodes: 100,
                leakage: 1.0,
                spectral_radius: gamma,
                input_scaling: 0.3,
                connectivity: 0.3,
            };
            let esn = build_reservoir(&h, 2, 11).unwrap();
            let mut rng = crate::seeding::rng_from_seed(99);
            let r0a = DVector::from_fn(100, |_, _| rng.random_range(-1.0..1.0));
            let r0b = DVector::from_fn(100, |_, _| rng.random_range(-1.0..1.0));
            let sa = run(&esn, &inputs, Some(&r0a)).unwrap();
            let sb = run(&esn, &inputs, Some(&r0b)).unwrap();
            let last = 1000;
            let dist: f64 = (0..100)
                .map(|i| (sa[(last, i)] - sb[(last, i)]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(dist < 1e-6, "gamma {gamma}: distance {dist}");
        }
    }

    #[test]
    fn run_reports_instability_step() {
        // Force divergence with an absurd spectral radius and no squashing
        // headroom: alpha = 1 with huge gamma keeps |state| <= 1 (tanh), so
        // instead inject a non-finite input weight by hand.
        let mut esn = build_reservoir(&hyper(8), 1, 3).unwrap();
        esn.w_in[(0, 0)] = f64::NAN;
        let inputs = Trajectory::new(
            0.0,
            0.1,
            DMatrix::from_element(5, 1, 1.0),
            vec!["u0".into()],
        )
        .unwrap();
        match run(&esn, &inputs, None) {
            Err(CoreError::Instability { step }) => assert_eq!(step, 0),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn prop_states_bounded_by_tanh_range(seed in 0u64..100) {
            let mut h = hyper(12);
            h.leakage = 1.0;
            let esn = build_reservoir(&h, 1, seed).unwrap();
            let inputs = Trajectory::new(
                0.0,
                0.1,
                DMatrix::from_fn(40, 1, |i, _| ((i * 7 + seed as usize) as f64).sin() * 3.0),
                vec!["u0".into()],
            )
            .unwrap();
            let states = run(&esn, &inputs, None).unwrap();
            prop_assert!(states.iter().all(|v| v.abs() <= 1.0));
        }

        #[test]
        fn prop_run_is_deterministic(seed in 0u64..100) {
            let esn = build_reservoir(&hyper(8), 1, seed).unwrap();
            let inputs = Trajectory::new(
                0.0,
                0.1,
                DMatrix::from_fn(30, 1, |i, _| (i as f64 * 0.37).cos()),
                vec!["u0".into()],
            )
            .unwrap();
            let a = run(&esn, &inputs, None).unwrap();
            let b = run(&esn, &inputs, None).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn prop_states_bounded_by_initial_envelope(
            seed in 0u64..50,
            alpha in 0.0f64..1.0,
            r0_scale in 0.0f64..3.0,
        ) {
            // |r| never exceeds max(|r0|_inf, 1): the update is a convex
            // mix of the previous state and a tanh value.
            let mut h = hyper(10);
            h.leakage = alpha;
            let esn = build_reservoir(&h, 1, seed).unwrap();
            let r0 = DVector::from_fn(10, |i, _| {
                r0_scale * if i % 2 == 0 { 1.0 } else { -1.0 }
            });
            let inputs = Trajectory::new(
                0.0,
                0.1,
                DMatrix::from_fn(50, 1, |i, _| ((i * 3 + seed as usize) as f64).sin() * 5.0),
                vec!["u0".into()],
            )
            .unwrap();
            let states = run(&esn, &inputs, Some(&r0)).unwrap();
            let bound = r0_scale.max(1.0) + 1e-12;
            prop_assert!(states.iter().all(|v| v.abs() <= bound));
        }
    }
}
