//! Fourth-order two-axis synchronous generator model.
//!
//! State `x = [δ, ω, E'd, E'q]` (δ in radians, ω in pu), exogenous input
//! `u = [Tm, Ef, Ut, φ]`, measurement `z = [δ, ω, Pe]`. Terminal voltage is
//! always an input: the machine is decoupled from the network by the
//! measured terminal phasor.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cubature::StateSpaceModel;
use crate::error::{Error, Result};
use crate::numerics::SymMatrix;

/// Synchronous speed of a 50 Hz system in rad/s.
pub const OMEGA_BASE: f64 = 2.0 * PI * 50.0;

/// Default PMU integration step (s).
pub const DEFAULT_STEP: f64 = 0.02;

/// Variance of the rotor-angle measurement: (2°)².
pub const DELTA_MEAS_VARIANCE: f64 = (2.0 * PI / 180.0) * (2.0 * PI / 180.0);
/// Variance of the speed measurement (pu²).
pub const OMEGA_MEAS_VARIANCE: f64 = 1e-6;

/// Relative central-difference stencil used for the process-noise partials.
pub const Q_STENCIL: f64 = 1e-6;

const EQUILIBRIUM_MAX_ITER: usize = 100;
const EQUILIBRIUM_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineParams {
    /// Inertia constant (s).
    #[serde(rename = "T_J")]
    pub t_j: f64,
    /// Damping coefficient (pu).
    #[serde(rename = "D")]
    pub d: f64,
    /// d-axis transient open-circuit time constant (s).
    #[serde(rename = "T_d0p")]
    pub t_d0p: f64,
    /// q-axis transient open-circuit time constant (s).
    #[serde(rename = "T_q0p")]
    pub t_q0p: f64,
    #[serde(rename = "X_d")]
    pub x_d: f64,
    #[serde(rename = "X_q")]
    pub x_q: f64,
    #[serde(rename = "X_dp")]
    pub x_dp: f64,
    #[serde(rename = "X_qp")]
    pub x_qp: f64,
}

impl MachineParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.t_j, self.d, self.t_d0p, self.t_q0p, self.x_d, self.x_q, self.x_dp, self.x_qp,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("machine parameters must be finite".into()));
        }
        if self.t_j <= 0.0 || self.t_d0p <= 0.0 || self.t_q0p <= 0.0 {
            return Err(Error::InvalidParameter(
                "T_J, T_d0p and T_q0p must be strictly positive".into(),
            ));
        }
        if self.d < 0.0 {
            return Err(Error::InvalidParameter("damping D must be non-negative".into()));
        }
        if !(self.x_dp > 0.0 && self.x_d >= self.x_dp) {
            return Err(Error::InvalidParameter("need X_d >= X_dp > 0".into()));
        }
        if !(self.x_qp > 0.0 && self.x_q >= self.x_qp) {
            return Err(Error::InvalidParameter("need X_q >= X_qp > 0".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: MachineParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorState {
    /// Rotor angle (rad).
    pub delta: f64,
    /// Rotor speed (pu).
    pub omega: f64,
    pub e_dp: f64,
    pub e_qp: f64,
}

impl GeneratorState {
    pub fn to_array(&self) -> [f64; 4] {
        [self.delta, self.omega, self.e_dp, self.e_qp]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        GeneratorState { delta: v[0], omega: v[1], e_dp: v[2], e_qp: v[3] }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.to_array())
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// True when ω lies inside the physically plausible band (0.5, 1.5).
    pub fn speed_plausible(&self) -> bool {
        self.omega > 0.5 && self.omega < 1.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogenousInput {
    /// Mechanical torque (pu).
    pub t_m: f64,
    /// Field EMF (pu).
    pub e_f: f64,
    /// Terminal voltage magnitude (pu).
    pub u_t: f64,
    /// Terminal voltage phase (rad).
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub delta_z: f64,
    pub omega_z: f64,
    pub p_e_z: f64,
}

impl MeasurementVector {
    pub fn to_array(&self) -> [f64; 3] {
        [self.delta_z, self.omega_z, self.p_e_z]
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.to_array())
    }
}

/// Standard deviations of the terminal-phasor errors that drive R and Q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasorSigmas {
    /// Relative error of Ut (0.002 = 0.2 %).
    pub sigma_ut: f64,
    /// Phase error (rad).
    pub sigma_phi: f64,
}

impl Default for PhasorSigmas {
    fn default() -> Self {
        PhasorSigmas { sigma_ut: 0.002, sigma_phi: 0.2_f64.to_radians() }
    }
}

/// d- and q-axis stator currents `(Id, Iq)`.
pub fn stator_currents(x: &GeneratorState, u: &ExogenousInput, p: &MachineParams) -> (f64, f64) {
    let theta = x.delta - u.phi;
    let i_d = (x.e_qp - u.u_t * theta.cos()) / p.x_dp;
    let i_q = (u.u_t * theta.sin() - x.e_dp) / p.x_qp;
    (i_d, i_q)
}

/// Electromagnetic power in closed form.
///
/// The E' terms carry `Ut` to the first power and `E'd` enters with a minus
/// sign; this is the form that agrees with `E'd·Id + E'q·Iq + (X'q − X'd)·Id·Iq`.
pub fn electrical_power(x: &GeneratorState, u: &ExogenousInput, p: &MachineParams) -> f64 {
    let theta = x.delta - u.phi;
    let (s, c) = theta.sin_cos();
    let ut = u.u_t;
    0.5 * ut * ut * (2.0 * theta).sin() * (1.0 / p.x_qp - 1.0 / p.x_dp) + ut * s * x.e_qp / p.x_dp
        - ut * c * x.e_dp / p.x_qp
}

/// Reactive power delivered at the terminal, `Vq·Id − Vd·Iq`.
pub fn reactive_power(x: &GeneratorState, u: &ExogenousInput, p: &MachineParams) -> f64 {
    let theta = x.delta - u.phi;
    let (i_d, i_q) = stator_currents(x, u, p);
    u.u_t * theta.cos() * i_d - u.u_t * theta.sin() * i_q
}

/// Analytic `(∂Pe/∂Ut, ∂Pe/∂φ)`.
pub fn power_partials(x: &GeneratorState, u: &ExogenousInput, p: &MachineParams) -> (f64, f64) {
    let theta = x.delta - u.phi;
    let (s, c) = theta.sin_cos();
    let k = 1.0 / p.x_qp - 1.0 / p.x_dp;
    let ut = u.u_t;
    let d_ut = ut * (2.0 * theta).sin() * k + s * x.e_qp / p.x_dp - c * x.e_dp / p.x_qp;
    let d_theta = ut * ut * (2.0 * theta).cos() * k + ut * c * x.e_qp / p.x_dp + ut * s * x.e_dp / p.x_qp;
    (d_ut, -d_theta)
}

/// Time derivative `[δ̇, ω̇, Ė'd, Ė'q]` in per-second units.
pub fn state_derivative(x: &GeneratorState, u: &ExogenousInput, p: &MachineParams) -> [f64; 4] {
    let (i_d, i_q) = stator_currents(x, u, p);
    let t_e = electrical_power(x, u, p);
    let slip = x.omega - 1.0;
    [
        slip * OMEGA_BASE,
        (u.t_m - t_e - p.d * slip) / p.t_j,
        (-x.e_dp + (p.x_q - p.x_qp) * i_q) / p.t_q0p,
        (u.e_f - x.e_qp - (p.x_d - p.x_dp) * i_d) / p.t_d0p,
    ]
}

/// One classical RK4 step of length `h` with `u` held over the step.
pub fn transition(
    x: &GeneratorState,
    u: &ExogenousInput,
    p: &MachineParams,
    h: f64,
) -> Result<GeneratorState> {
    let next = rk4_step(&x.to_array(), h, |s| state_derivative(&GeneratorState::from_slice(s), u, p));
    let out = GeneratorState::from_slice(&next);
    if !out.is_finite() {
        return Err(Error::NonFiniteState(next.to_vec()));
    }
    Ok(out)
}

/// Classical fourth-order Runge–Kutta step for an autonomous 4-state system.
pub fn rk4_step(x: &[f64; 4], h: f64, f: impl Fn(&[f64; 4]) -> [f64; 4]) -> [f64; 4] {
    let axpy = |a: &[f64; 4], k: &[f64; 4], s: f64| -> [f64; 4] {
        [a[0] + s * k[0], a[1] + s * k[1], a[2] + s * k[2], a[3] + s * k[3]]
    };
    let k1 = f(x);
    let k2 = f(&axpy(x, &k1, 0.5 * h));
    let k3 = f(&axpy(x, &k2, 0.5 * h));
    let k4 = f(&axpy(x, &k3, h));
    let mut out = *x;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

pub fn measurement(x: &GeneratorState, u: &ExogenousInput, p: &MachineParams) -> MeasurementVector {
    MeasurementVector { delta_z: x.delta, omega_z: x.omega, p_e_z: electrical_power(x, u, p) }
}

/// Measurement covariance `diag(σ²δ, σ²ω, σ²Pe)`, with σ²Pe propagated
/// from the terminal-phasor errors through the analytic partials of Pe.
pub fn measurement_noise_r(
    x: &GeneratorState,
    u: &ExogenousInput,
    p: &MachineParams,
    sigmas: &PhasorSigmas,
) -> SymMatrix {
    let (d_ut, d_phi) = power_partials(x, u, p);
    let sigma_u = sigmas.sigma_ut * u.u_t;
    let var_pe = d_ut * d_ut * sigma_u * sigma_u + d_phi * d_phi * sigmas.sigma_phi * sigmas.sigma_phi;
    SymMatrix::from_diagonal(&[DELTA_MEAS_VARIANCE, OMEGA_MEAS_VARIANCE, var_pe])
}

/// Process covariance from terminal-phasor errors propagated through one
/// transition step, using central differences with the default stencil.
pub fn process_noise_q(
    x: &GeneratorState,
    u: &ExogenousInput,
    p: &MachineParams,
    h: f64,
    sigmas: &PhasorSigmas,
) -> Result<SymMatrix> {
    process_noise_q_with_stencil(x, u, p, h, sigmas, Q_STENCIL)
}

/// As [`process_noise_q`], with an explicit relative stencil. The Ut step is
/// `rel·Ut`, the φ step is `rel·max(1, |φ|)`.
pub fn process_noise_q_with_stencil(
    x: &GeneratorState,
    u: &ExogenousInput,
    p: &MachineParams,
    h: f64,
    sigmas: &PhasorSigmas,
    rel: f64,
) -> Result<SymMatrix> {
    let du = rel * u.u_t.abs().max(f64::MIN_POSITIVE);
    let dphi = rel * u.phi.abs().max(1.0);
    let step = |uu: ExogenousInput| transition(x, &uu, p, h).map(|s| s.to_array());

    let up = step(ExogenousInput { u_t: u.u_t + du, ..*u })?;
    let um = step(ExogenousInput { u_t: u.u_t - du, ..*u })?;
    let pp = step(ExogenousInput { phi: u.phi + dphi, ..*u })?;
    let pm = step(ExogenousInput { phi: u.phi - dphi, ..*u })?;

    let sigma_u = sigmas.sigma_ut * u.u_t;
    let mut diag = [0.0; 4];
    for i in 0..4 {
        let d_ut = (up[i] - um[i]) / (2.0 * du);
        let d_phi = (pp[i] - pm[i]) / (2.0 * dphi);
        diag[i] = d_ut * d_ut * sigma_u * sigma_u + d_phi * d_phi * sigmas.sigma_phi * sigmas.sigma_phi;
    }
    Ok(SymMatrix::from_diagonal(&diag))
}

/// Terminal operating point used to initialize a steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub u_t: f64,
    pub phi: f64,
    /// Active power delivered (pu).
    pub p_target: f64,
    /// Reactive power delivered (pu).
    #[serde(default)]
    pub q_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub state: GeneratorState,
    pub t_m: f64,
    pub e_f: f64,
}

impl Equilibrium {
    pub fn input(&self, u_t: f64, phi: f64) -> ExogenousInput {
        ExogenousInput { t_m: self.t_m, e_f: self.e_f, u_t, phi }
    }
}

/// Steady state delivering `(P, Q)` at the terminal phasor `Ut∠φ`.
///
/// The phasor diagram gives the starting point; a damped Newton iteration on
/// the q-axis alignment, active power and reactive power residuals polishes it.
pub fn solve_equilibrium(op: &OperatingPoint, p: &MachineParams) -> Result<Equilibrium> {
    p.validate()?;
    if !(op.u_t > 0.0 && op.u_t.is_finite() && op.phi.is_finite()) {
        return Err(Error::InvalidParameter("terminal voltage must be positive and finite".into()));
    }
    let ut = op.u_t;
    // Terminal current in the frame aligned with the voltage phasor.
    let i_re = op.p_target / ut;
    let i_im = -op.q_target / ut;
    let theta0 = (p.x_q * i_re).atan2(ut - p.x_q * i_im);
    let (s0, c0) = theta0.sin_cos();
    let i_d0 = i_re * s0 - i_im * c0;
    let i_q0 = i_re * c0 + i_im * s0;
    let mut y = [theta0, ut * s0 - p.x_qp * i_q0, ut * c0 + p.x_dp * i_d0];

    let u0 = ExogenousInput { t_m: 0.0, e_f: 0.0, u_t: ut, phi: op.phi };
    let residual = |y: &[f64; 3]| -> [f64; 3] {
        let x = GeneratorState { delta: op.phi + y[0], omega: 1.0, e_dp: y[1], e_qp: y[2] };
        let (_, i_q) = stator_currents(&x, &u0, p);
        [
            -x.e_dp + (p.x_q - p.x_qp) * i_q,
            electrical_power(&x, &u0, p) - op.p_target,
            reactive_power(&x, &u0, p) - op.q_target,
        ]
    };
    let norm = |r: &[f64; 3]| r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));

    let mut r = residual(&y);
    let mut iterations = 0;
    while norm(&r) > EQUILIBRIUM_TOL {
        if iterations == EQUILIBRIUM_MAX_ITER || !norm(&r).is_finite() {
            return Err(Error::NoConvergence { iterations, residual: norm(&r) });
        }
        iterations += 1;
        let mut jac = DMatrix::zeros(3, 3);
        for j in 0..3 {
            let dh = 1e-7 * y[j].abs().max(1.0);
            let mut yp = y;
            let mut ym = y;
            yp[j] += dh;
            ym[j] -= dh;
            let (rp, rm) = (residual(&yp), residual(&ym));
            for i in 0..3 {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * dh);
            }
        }
        let rhs = DVector::from_row_slice(&r);
        let Some(dy) = jac.lu().solve(&rhs) else {
            return Err(Error::NoConvergence { iterations, residual: norm(&r) });
        };
        let mut lambda = 1.0;
        loop {
            let trial = [y[0] - lambda * dy[0], y[1] - lambda * dy[1], y[2] - lambda * dy[2]];
            let rt = residual(&trial);
            if norm(&rt) < norm(&r) || lambda < 1e-6 {
                y = trial;
                r = rt;
                break;
            }
            lambda *= 0.5;
        }
    }

    let state = GeneratorState { delta: op.phi + y[0], omega: 1.0, e_dp: y[1], e_qp: y[2] };
    let (i_d, _) = stator_currents(&state, &u0, p);
    Ok(Equilibrium {
        state,
        t_m: electrical_power(&state, &u0, p),
        e_f: state.e_qp + (p.x_d - p.x_dp) * i_d,
    })
}

/// The generator as a filter model: RK4 transition, `[δ, ω, Pe]`
/// measurement, and phasor-error driven Q and R.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorModel {
    pub params: MachineParams,
    pub step: f64,
    pub sigmas: PhasorSigmas,
}

impl GeneratorModel {
    pub fn new(params: MachineParams) -> Self {
        GeneratorModel { params, step: DEFAULT_STEP, sigmas: PhasorSigmas::default() }
    }
}

impl StateSpaceModel for GeneratorModel {
    type Input = ExogenousInput;

    fn state_dim(&self) -> usize {
        4
    }

    fn measurement_dim(&self) -> usize {
        3
    }

    fn transition(&self, x: &DVector<f64>, u: &ExogenousInput) -> Result<DVector<f64>> {
        let next = transition(&GeneratorState::from_slice(x.as_slice()), u, &self.params, self.step)?;
        Ok(next.to_vector())
    }

    fn measure(&self, x: &DVector<f64>, u: &ExogenousInput) -> DVector<f64> {
        measurement(&GeneratorState::from_slice(x.as_slice()), u, &self.params).to_vector()
    }

    fn process_noise(&self, x: &DVector<f64>, u: &ExogenousInput) -> Result<SymMatrix> {
        process_noise_q(&GeneratorState::from_slice(x.as_slice()), u, &self.params, self.step, &self.sigmas)
    }

    fn measurement_noise(&self, x: &DVector<f64>, u: &ExogenousInput) -> SymMatrix {
        measurement_noise_r(&GeneratorState::from_slice(x.as_slice()), u, &self.params, &self.sigmas)
    }
}
