//! Discrete-time extended Kalman filter baseline.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::dynamics::{rk4_step, LorenzParams};
use crate::error::{CoreError, CoreResult};
use crate::trajectory::Trajectory;

type DynStateFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type StateFn = Box<DynStateFn>;
type JacobianFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

pub enum JacobianMode {
    /// Central finite differences with per-component step eps * (1 + |x_j|).
    FiniteDifference { eps: f64 },
    /// Caller-supplied derivatives of the transition and observation maps.
    Analytic {
        transition: JacobianFn,
        observation: JacobianFn,
    },
}

impl Default for JacobianMode {
    fn default() -> Self {
        JacobianMode::FiniteDifference { eps: 1e-6 }
    }
}

/// Nonlinear state-space model: transition `g(x, u)`, observation
/// `h(x, u)`, process noise covariance `Q`, measurement noise covariance
/// `R` (positive definite).
pub struct StateSpaceModel {
    transition: StateFn,
    observation: StateFn,
    process_noise: DMatrix<f64>,
    measurement_noise: DMatrix<f64>,
    jacobian: JacobianMode,
}

fn check_symmetric_psd(m: &DMatrix<f64>, label: &str, strict: bool) -> CoreResult<()> {
    if m.nrows() != m.ncols() {
        return Err(CoreError::invalid(format!("{label} must be square")));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-9 * (1.0 + m.abs().max()) {
        return Err(CoreError::invalid(format!("{label} must be symmetric")));
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let floor = if strict {
        0.0
    } else {
        -1e-10 * (1.0 + eig.eigenvalues.abs().max())
    };
    if min < floor || (strict && min <= 0.0) {
        return Err(CoreError::invalid(format!(
            "{label} must be positive {}definite (min eigenvalue {min})",
            if strict { "" } else { "semi-" }
        )));
    }
    Ok(())
}

impl StateSpaceModel {
    pub fn new(
        transition: StateFn,
        observation: StateFn,
        process_noise: DMatrix<f64>,
        measurement_noise: DMatrix<f64>,
        jacobian: JacobianMode,
    ) -> CoreResult<Self> {
        check_symmetric_psd(&process_noise, "Q", false)?;
        check_symmetric_psd(&measurement_noise, "R", true)?;
        Ok(Self {
            transition,
            observation,
            process_noise,
            measurement_noise,
            jacobian,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.process_noise.nrows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.measurement_noise.nrows()
    }

    fn transition_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> CoreResult<DMatrix<f64>> {
        match &self.jacobian {
            JacobianMode::FiniteDifference { eps } => {
                numerical_jacobian(self.transition.as_ref(), x, u, *eps)
            }
            JacobianMode::Analytic { transition, .. } => Ok(transition(x, u)),
        }
    }

    fn observation_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> CoreResult<DMatrix<f64>> {
        match &self.jacobian {
            JacobianMode::FiniteDifference { eps } => {
                numerical_jacobian(self.observation.as_ref(), x, u, *eps)
            }
            JacobianMode::Analytic { observation, .. } => Ok(observation(x, u)),
        }
    }
}

/// State estimate and error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl FilterState {
    pub fn new(x: DVector<f64>, p: DMatrix<f64>) -> CoreResult<Self> {
        check_symmetric_psd(&p, "P", false)?;
        if p.nrows() != x.len() {
            return Err(CoreError::invalid("P dimension must match the state"));
        }
        Ok(Self { x, p })
    }
}

/// Central-difference Jacobian of `fn(x, u)` with respect to `x`; the step
/// for column j is `eps * (1 + |x_j|)`.
pub fn numerical_jacobian(
    f: &DynStateFn,
    x: &DVector<f64>,
    u: &DVector<f64>,
    eps: f64,
) -> CoreResult<DMatrix<f64>> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(CoreError::invalid("eps must be > 0"));
    }
    let n = x.len();
    let probe = f(x, u);
    let m = probe.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let h = eps * (1.0 + x[j].abs());
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += h;
        minus[j] -= h;
        let fp = f(&plus, u);
        let fm = f(&minus, u);
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(format!(
                "jacobian evaluation at column {j}"
            )));
        }
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

pub(crate) struct StepDetail {
    pub state: FilterState,
    // Innovation terms are consumed by whiteness checks in tests.
    #[allow(dead_code)]
    pub innovation: DVector<f64>,
    #[allow(dead_code)]
    pub innovation_cov: DMatrix<f64>,
}

pub(crate) fn ekf_step_detailed(
    model: &StateSpaceModel,
    state: &FilterState,
    u: &DVector<f64>,
    z: &DVector<f64>,
) -> CoreResult<StepDetail> {
    if z.len() != model.measurement_dim() {
        return Err(CoreError::invalid(format!(
            "measurement of length {} but R is {}x{}",
            z.len(),
            model.measurement_dim(),
            model.measurement_dim()
        )));
    }
    // Predict.
    let f_jac = model.transition_jacobian(&state.x, u)?;
    let x_pred = (model.transition)(&state.x, u);
    if x_pred.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("predicted state".into()));
    }
    let p_pred = &f_jac * &state.p * f_jac.transpose() + &model.process_noise;

    // Update.
    let h_jac = model.observation_jacobian(&x_pred, u)?;
    let innovation_cov = &h_jac * &p_pred * h_jac.transpose() + &model.measurement_noise;
    let chol = innovation_cov
        .clone()
        .cholesky()
        .ok_or_else(|| CoreError::Singular("innovation covariance is not invertible".into()))?;
    // K = P^- H^T S^-1  via  S K^T = H P^-.
    let gain = chol.solve(&(&h_jac * &p_pred)).transpose();
    let innovation = z - (model.observation)(&x_pred, u);
    let x_new = &x_pred + &gain * &innovation;
    let mut p_new = &p_pred - &gain * &h_jac * &p_pred;
    // Covariance hygiene: keep P exactly symmetric after the subtraction.
    p_new = (&p_new + p_new.transpose()) * 0.5;
    Ok(StepDetail {
        state: FilterState { x: x_new, p: p_new },
        innovation,
        innovation_cov,
    })
}

/// One predict/update cycle.
pub fn ekf_step(
    model: &StateSpaceModel,
    state: &FilterState,
    u: &DVector<f64>,
    z: &DVector<f64>,
) -> CoreResult<FilterState> {
    Ok(ekf_step_detailed(model, state, u, z)?.state)
}

/// Filtered estimates over a measurement sequence, with the stored
/// covariance diagonal per step.
#[derive(Debug, Clone)]
pub struct EkfRun {
    pub estimates: Trajectory,
    pub p_diag: DMatrix<f64>,
}

impl EkfRun {
    /// Writes `t,x_est_<ch>...,p_diag_<ch>...` rows.
    pub fn write_csv(&self, path: &Path) -> CoreResult<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "t")?;
        for name in self.estimates.channel_names() {
            write!(w, ",x_est_{name}")?;
        }
        for name in self.estimates.channel_names() {
            write!(w, ",p_diag_{name}")?;
        }
        writeln!(w)?;
        for i in 0..self.estimates.len() {
            write!(w, "{:.16e}", self.estimates.time(i))?;
            for j in 0..self.estimates.num_channels() {
                write!(w, ",{:.16e}", self.estimates.values()[(i, j)])?;
            }
            for j in 0..self.p_diag.ncols() {
                write!(w, ",{:.16e}", self.p_diag[(i, j)])?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the filter over every measurement row. `inputs`, when given, must
/// share the measurement grid; otherwise the input vector is empty.
pub fn run_ekf(
    model: &StateSpaceModel,
    x0: DVector<f64>,
    p0: DMatrix<f64>,
    measurements: &Trajectory,
    inputs: Option<&Trajectory>,
    state_channels: Vec<String>,
) -> CoreResult<EkfRun> {
    if measurements.is_empty() {
        return Err(CoreError::invalid("no measurements"));
    }
    if let Some(u) = inputs {
        if u.len() != measurements.len() {
            return Err(CoreError::invalid(
                "inputs and measurements must share the grid",
            ));
        }
    }
    if state_channels.len() != x0.len() {
        return Err(CoreError::invalid("state channel names must match x0"));
    }
    let mut state = FilterState::new(x0, p0)?;
    let n = state.x.len();
    let rows = measurements.len();
    let mut estimates = DMatrix::zeros(rows, n);
    let mut p_diag = DMatrix::zeros(rows, n);
    let empty = DVector::zeros(0);
    let mut z = DVector::zeros(measurements.num_channels());
    for k in 0..rows {
        for c in 0..z.len() {
            z[c] = measurements.values()[(k, c)];
        }
        let u = match inputs {
            Some(traj) => traj.values().row(k).transpose(),
            None => empty.clone(),
        };
        state = ekf_step(model, &state, &u, &z)?;
        for i in 0..n {
            estimates[(k, i)] = state.x[i];
            p_diag[(k, i)] = state.p[(i, i)];
        }
    }
    Ok(EkfRun {
        estimates: Trajectory::new(
            measurements.t0(),
            measurements.dt(),
            estimates,
            state_channels,
        )?,
        p_diag,
    })
}

/// Lorenz plant model for the filter: the transition is one RK4 step of
/// the Lorenz equations per sample, the observation selects the given
/// channels, Q = q I, and R is diagonal from the known noise variances.
pub fn lorenz_model(
    params: &LorenzParams,
    dt: f64,
    q: f64,
    r_diag: &[f64],
    observed: &[usize],
) -> CoreResult<StateSpaceModel> {
    if observed.len() != r_diag.len() {
        return Err(CoreError::invalid(
            "observed channels and R diagonal must match",
        ));
    }
    if observed.iter().any(|&c| c >= 3) {
        return Err(CoreError::invalid("Lorenz has channels 0..3"));
    }
    if r_diag.iter().any(|v| *v <= 0.0) {
        return Err(CoreError::invalid("R diagonal must be positive"));
    }
    let p = *params;
    let rhs = move |s: &Vector3<f64>| {
        Vector3::new(
            p.sigma * (s.y - s.x),
            s.x * (p.rho - s.z) - s.y,
            s.x * s.y - p.beta * s.z,
        )
    };
    let transition: StateFn = Box::new(move |x, _| {
        let state = Vector3::new(x[0], x[1], x[2]);
        let next = rk4_step(&rhs, &state, dt);
        DVector::from_vec(vec![next.x, next.y, next.z])
    });
    let obs: Vec<usize> = observed.to_vec();
    let observation: StateFn =
        Box::new(move |x, _| DVector::from_iterator(obs.len(), obs.iter().map(|&c| x[c])));
    StateSpaceModel::new(
        transition,
        observation,
        DMatrix::identity(3, 3) * q,
        DMatrix::from_diagonal(&DVector::from_row_slice(r_diag)),
        JacobianMode::FiniteDifference { eps: 1e-6 },
    )
}
