//! Fixtures shared by the benchmarks.

use nalgebra::{Matrix3, Vector3};
use tfgsmooth::imu::{ImuSample, ProcessNoise, GRAVITY};
use tfgsmooth::smoother::{Dynamics, SolverConfig, Window};
use tfgsmooth::so3::exp_so3;
use tfgsmooth::{Mat15, Parametrization, TfgElement, TfgTangent};

pub fn element() -> TfgElement {
    TfgElement {
        rot: exp_so3(&Vector3::new(0.3, -0.2, 1.1)),
        vel: Vector3::new(4.0, -1.0, 0.2),
        pos: Vector3::new(10.0, 5.0, -1.0),
        acc_bias: Vector3::new(0.05, -0.02, 0.01),
        gyro_bias: Vector3::new(0.001, 0.002, -0.003),
    }
}

pub fn tangent() -> TfgTangent {
    TfgTangent {
        rot: Vector3::new(0.4, 0.1, -0.7),
        vel: Vector3::new(1.0, 2.0, -0.5),
        pos: Vector3::new(-3.0, 0.5, 1.0),
        acc_bias: Vector3::new(0.01, 0.0, -0.02),
        gyro_bias: Vector3::new(0.0, 0.001, 0.0),
    }
}

pub fn noise() -> ProcessNoise {
    ProcessNoise { sigma_a: 0.05, sigma_w: 0.01, sigma_ba: 0.002, sigma_bw: 3e-5 }
}

/// One second of 100 Hz samples of a gentle turn.
pub fn samples(t0: f64) -> Vec<ImuSample> {
    (0..100)
        .map(|k| ImuSample {
            t: t0 + k as f64 * 0.01,
            omega: Vector3::new(0.0, 0.0, 0.2),
            accel: Vector3::new(0.5, 2.0, 9.81),
        })
        .collect()
}

/// Window of `n` states one second apart with a fix on each.
pub fn window(kind: Parametrization, n: usize) -> Window {
    let mut w = Window::new(kind, 0.0, TfgElement::identity(), Mat15::identity()).unwrap();
    w.add_position(0, Vector3::zeros(), Matrix3::identity()).unwrap();
    for k in 1..n {
        let t = k as f64;
        let dynamics = Dynamics::Imu { samples: samples(t - 1.0), t_end: t, gravity: GRAVITY, noise: noise() };
        w.push_state(t, dynamics).unwrap();
        let y = w.newest().estimate.pos + Vector3::new(0.5, -0.3, 0.1);
        w.add_position(k, y, Matrix3::identity()).unwrap();
    }
    w
}

pub fn solver() -> SolverConfig {
    SolverConfig { window_size: 15, ..SolverConfig::default() }
}
