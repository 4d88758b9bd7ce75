//! Discrete biased-IMU model and its per-parametrization Jacobians.
//!
//! One step of length `dt` maps `(R, v, p, bᵃ, bʷ)` to
//!
//! ```text
//! R⁺ = R exp(dt (ω - bʷ))
//! v⁺ = v + dt (g + R (a - bᵃ))
//! p⁺ = p + dt v
//! ```
//!
//! with both biases constant. Many steps between two position fixes are folded into a
//! single [`StepTransition`] by [`compound`].

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Mat15};
use crate::param::Parametrization;
use crate::so3::{dexp_so3, exp_so3, log_so3_unchecked, orthonormalize, skew};
use crate::tfg::TfgElement;

/// Earth gravity in the local level frame (z up), m/s².
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// Attitude is projected back onto SO(3) after this many propagation steps.
pub const RENORMALIZE_EVERY: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    /// Seconds.
    pub t: f64,
    /// Body angular rate, rad/s.
    pub omega: Vector3<f64>,
    /// Body specific force, m/s².
    pub accel: Vector3<f64>,
}

/// Continuous-time noise densities used to build per-step covariances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcessNoise {
    pub sigma_a: f64,
    pub sigma_w: f64,
    pub sigma_ba: f64,
    pub sigma_bw: f64,
}

impl ProcessNoise {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_a, self.sigma_w, self.sigma_ba, self.sigma_bw];
        if all.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Input("process noise sigmas must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Predicted state, Jacobian and accumulated noise of one or more IMU steps.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTransition {
    pub jacobian: Mat15,
    pub noise: Mat15,
    pub predicted: TfgElement,
}

pub fn propagate(x: &TfgElement, u: &ImuSample, dt: f64, g: &Vector3<f64>) -> TfgElement {
    TfgElement {
        rot: x.rot * exp_so3(&((u.omega - x.gyro_bias) * dt)),
        vel: x.vel + dt * (g + x.rot * (u.accel - x.acc_bias)),
        pos: x.pos + dt * x.vel,
        acc_bias: x.acc_bias,
        gyro_bias: x.gyro_bias,
    }
}

/// Stateful propagation that re-orthonormalizes the attitude periodically.
#[derive(Clone, Debug, Default)]
pub struct Propagator {
    steps: usize,
}

impl Propagator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, x: &TfgElement, u: &ImuSample, dt: f64, g: &Vector3<f64>) -> TfgElement {
        let mut next = propagate(x, u, dt, g);
        self.steps += 1;
        if self.steps % RENORMALIZE_EVERY == 0 {
            next.rot = orthonormalize(&next.rot);
        }
        next
    }
}

/// Jacobian `F` of one step in the chart of `kind`:
/// `local(f(x), f(retract(x, ξ))) = F ξ + O(‖ξ‖²)`.
pub fn step_jacobian(
    kind: Parametrization,
    x: &TfgElement,
    u: &ImuSample,
    dt: f64,
    g: &Vector3<f64>,
) -> Mat15 {
    match kind {
        Parametrization::Tfg => tfg_jacobian(x, u, dt),
        Parametrization::Se23 => {
            let rate_step = (u.omega - x.gyro_bias) * dt;
            let dv_body = (u.accel - x.acc_bias) * dt;
            navigation_jacobian(&exp_so3(&rate_step).transpose(), &rate_step, &dv_body, dt)
        }
        Parametrization::Linear => {
            // Rotation increment and velocity increment read back from the predicted state.
            let next = propagate(x, u, dt, g);
            let omega_t = next.rot.transpose() * x.rot;
            let dv_body = x.rot.transpose() * (next.vel - x.vel - dt * g);
            let rate_step = log_so3_unchecked(&omega_t.transpose());
            navigation_jacobian(&omega_t, &rate_step, &dv_body, dt)
        }
    }
}

/// Shared by the two baselines; biases are additive so their rows are identity.
fn navigation_jacobian(
    omega_t: &Matrix3<f64>,
    rate_step: &Vector3<f64>,
    dv_body: &Vector3<f64>,
    dt: f64,
) -> Mat15 {
    let d = dexp_so3(&(-rate_step));
    let mut f = Mat15::identity();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(omega_t);
    f.fixed_view_mut::<3, 3>(0, 12).copy_from(&(-dt * d));
    f.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-omega_t * skew(dv_body)));
    f.fixed_view_mut::<3, 3>(3, 3).copy_from(omega_t);
    f.fixed_view_mut::<3, 3>(3, 9).copy_from(&(-dt * omega_t));
    f.fixed_view_mut::<3, 3>(6, 3).copy_from(&(dt * omega_t));
    f.fixed_view_mut::<3, 3>(6, 6).copy_from(omega_t);
    f
}

fn tfg_jacobian(x: &TfgElement, u: &ImuSample, dt: f64) -> Mat15 {
    let rate_step = (u.omega - x.gyro_bias) * dt;
    let omega_t = exp_so3(&rate_step).transpose();
    // right Jacobian of exp at dt (ω - bʷ)
    let d = dexp_so3(&(-rate_step));
    let bw_x = skew(&x.gyro_bias);
    let ba_x = skew(&x.acc_bias);
    let rot_row = omega_t - dt * d * bw_x;
    let bias_coupling = Matrix3::identity() - rot_row;
    let gyro_coupling = dt * d;

    let mut f = Mat15::identity();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot_row);
    f.fixed_view_mut::<3, 3>(0, 12).copy_from(&(-gyro_coupling));
    f.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-omega_t * skew(&(dt * u.accel))));
    f.fixed_view_mut::<3, 3>(3, 3).copy_from(&omega_t);
    f.fixed_view_mut::<3, 3>(3, 9).copy_from(&(-dt * omega_t));
    f.fixed_view_mut::<3, 3>(6, 3).copy_from(&(dt * omega_t));
    f.fixed_view_mut::<3, 3>(6, 6).copy_from(&omega_t);
    f.fixed_view_mut::<3, 3>(9, 0).copy_from(&(ba_x * bias_coupling));
    f.fixed_view_mut::<3, 3>(9, 12).copy_from(&(ba_x * gyro_coupling));
    f.fixed_view_mut::<3, 3>(12, 0).copy_from(&(bw_x * bias_coupling));
    f.fixed_view_mut::<3, 3>(12, 12).copy_from(&(Matrix3::identity() + bw_x * gyro_coupling));
    f
}

/// Block-diagonal covariance of one step's process noise.
pub fn step_noise(dt: f64, pn: &ProcessNoise) -> Mat15 {
    let blocks = [
        dt * dt * pn.sigma_w * pn.sigma_w,
        dt * dt * pn.sigma_a * pn.sigma_a,
        dt.powi(4) * pn.sigma_a * pn.sigma_a / 4.0,
        dt * pn.sigma_ba * pn.sigma_ba,
        dt * pn.sigma_bw * pn.sigma_bw,
    ];
    let mut q = Mat15::zeros();
    for (k, value) in blocks.into_iter().enumerate() {
        for i in 0..3 {
            q[(3 * k + i, 3 * k + i)] = value;
        }
    }
    q
}

/// Checks that samples are nonempty, strictly increasing and end before `t_end`.
pub fn check_samples(samples: &[ImuSample], t_end: f64) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Input("no IMU samples between states".into()));
    }
    for (k, pair) in samples.windows(2).enumerate() {
        if !(pair[1].t > pair[0].t) {
            return Err(Error::Input(format!(
                "IMU timestamps not increasing at sample {} ({} then {})",
                k + 1,
                pair[0].t,
                pair[1].t
            )));
        }
    }
    let last = samples[samples.len() - 1].t;
    if !(t_end > last) {
        return Err(Error::Input(format!("interval end {t_end} not after last sample {last}")));
    }
    Ok(())
}

fn step_lengths(samples: &[ImuSample], t_end: f64) -> impl Iterator<Item = (&ImuSample, f64)> {
    samples.iter().enumerate().map(move |(k, s)| {
        let next = samples.get(k + 1).map_or(t_end, |n| n.t);
        (s, next - s.t)
    })
}

/// Propagates through all samples without Jacobians. Sample `k` is held until
/// sample `k + 1` (the last one until `t_end`).
pub fn integrate(x0: &TfgElement, samples: &[ImuSample], t_end: f64, g: &Vector3<f64>) -> TfgElement {
    let mut prop = Propagator::new();
    step_lengths(samples, t_end).fold(*x0, |x, (u, dt)| prop.step(&x, u, dt, g))
}

/// Folds consecutive steps: `F = F_n ⋯ F_1`, `Q ← F_k Q F_kᵀ + Q_k`.
pub fn compound(
    kind: Parametrization,
    x0: &TfgElement,
    samples: &[ImuSample],
    t_end: f64,
    g: &Vector3<f64>,
    pn: &ProcessNoise,
) -> Result<StepTransition> {
    check_samples(samples, t_end)?;
    let mut prop = Propagator::new();
    let mut x = *x0;
    let mut jacobian = Mat15::identity();
    let mut noise = Mat15::zeros();
    for (u, dt) in step_lengths(samples, t_end) {
        let f = step_jacobian(kind, &x, u, dt, g);
        jacobian = f * jacobian;
        noise = f * noise * f.transpose() + step_noise(dt, pn);
        x = prop.step(&x, u, dt, g);
    }
    Ok(StepTransition { jacobian, noise: symmetrize(&noise), predicted: x })
}
