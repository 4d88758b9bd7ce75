//! Sliding-window smoothing on Lie groups for IMU + position localization.

pub mod data;
pub mod error;
pub mod eval;
pub mod imu;
pub mod linalg;
pub mod param;
pub mod smoother;
pub mod so3;
pub mod tfg;

pub use error::{Error, Result};
pub use linalg::{Mat15, Vec15};
pub use tfg::{TfgElement, TfgTangent};
pub use param::Parametrization;
pub use imu::{ImuSample, ProcessNoise, StepTransition, GRAVITY};
pub use smoother::{Dynamics, SolverConfig, SolveReport, Window};
pub use data::{Dataset, MotionProfile, NoiseSpec, TrajectorySpec};
pub use eval::{CellResult, Experiment, ExperimentConfig, RunRecord};
