//! State-update parametrizations (retractions) compared by the smoother.
//!
//! * [`Parametrization::Tfg`]: `x • exp(ξ)` on the two-frames group.
//! * [`Parametrization::Se23`]: `SE₂(3)` exponential on attitude/velocity/position, biases added.
//! * [`Parametrization::Linear`]: `(R exp(δᴿ), v + Rδᵛ, p + Rδᵖ, b + δᵇ)`.
//!
//! All three use right (body-frame) perturbations, so they agree to first order.

use std::fmt;
use std::str::FromStr;

use nalgebra::SMatrix;

use crate::error::{Error, Result};
use crate::linalg::{exp_and_phi1, is_positive_definite, symmetrize, Mat15, Mat9};
use crate::so3::{dexp_inv_so3, exp_so3, log_so3, rotation_angle, skew};
use crate::tfg::{left_jacobian, TfgElement, TfgTangent, LOG_MARGIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Parametrization {
    Tfg,
    Se23,
    Linear,
}

impl Parametrization {
    pub const ALL: [Parametrization; 3] = [Self::Tfg, Self::Se23, Self::Linear];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tfg => "tfg",
            Self::Se23 => "se23",
            Self::Linear => "linear",
        }
    }

    pub fn retract(self, x: &TfgElement, xi: &TfgTangent) -> TfgElement {
        match self {
            Self::Tfg => x.compose(&TfgElement::exp(xi)),
            Self::Se23 => {
                let nav = x.compose(&TfgElement::exp(&nav_only(xi)));
                TfgElement {
                    acc_bias: x.acc_bias + xi.acc_bias,
                    gyro_bias: x.gyro_bias + xi.gyro_bias,
                    ..nav
                }
            }
            Self::Linear => TfgElement {
                rot: x.rot * exp_so3(&xi.rot),
                vel: x.vel + x.rot * xi.vel,
                pos: x.pos + x.rot * xi.pos,
                acc_bias: x.acc_bias + xi.acc_bias,
                gyro_bias: x.gyro_bias + xi.gyro_bias,
            },
        }
    }

    /// Inverse of [`retract`](Self::retract): `retract(x_ref, local(x_ref, x)) == x`.
    pub fn local(self, x_ref: &TfgElement, x: &TfgElement) -> Result<TfgTangent> {
        match self {
            Self::Tfg => x_ref.inverse().compose(x).log(),
            Self::Se23 => {
                let nav = strip_biases(x_ref).inverse().compose(&strip_biases(x)).log()?;
                Ok(TfgTangent {
                    acc_bias: x.acc_bias - x_ref.acc_bias,
                    gyro_bias: x.gyro_bias - x_ref.gyro_bias,
                    ..nav
                })
            }
            Self::Linear => {
                let rt = x_ref.rot.transpose();
                let dr = rt * x.rot;
                let angle = rotation_angle(&dr);
                if angle >= std::f64::consts::PI - LOG_MARGIN {
                    return Err(Error::BranchCut { angle });
                }
                Ok(TfgTangent {
                    rot: log_so3(&dr)?,
                    vel: rt * (x.vel - x_ref.vel),
                    pos: rt * (x.pos - x_ref.pos),
                    acc_bias: x.acc_bias - x_ref.acc_bias,
                    gyro_bias: x.gyro_bias - x_ref.gyro_bias,
                })
            }
        }
    }

    /// Derivative of `ξ ↦ local(a, retract(b, ξ))` at `ξ = 0`, where `u = local(a, b)`.
    pub fn local_jacobian(self, u: &TfgTangent) -> Result<Mat15> {
        let jac = match self {
            Self::Tfg => invert(&left_jacobian(&u.scaled(-1.0)))?,
            Self::Se23 => {
                let nav = invert9(&se23_left_jacobian(&nav_only(u).scaled(-1.0)))?;
                let mut out = Mat15::identity();
                out.fixed_view_mut::<9, 9>(0, 0).copy_from(&nav);
                out
            }
            Self::Linear => {
                let mut out = Mat15::identity();
                let dr = exp_so3(&u.rot);
                out.fixed_view_mut::<3, 3>(0, 0).copy_from(&dexp_inv_so3(&(-u.rot)));
                out.fixed_view_mut::<3, 3>(3, 3).copy_from(&dr);
                out.fixed_view_mut::<3, 3>(6, 6).copy_from(&dr);
                out
            }
        };
        Ok(jac)
    }

    /// Covariance of the prior residual `p₀ + ξ₀` in the coordinates of this chart:
    /// `J⁻¹ P₀ J⁻ᵀ` with `J` the derivative of the prior residual at `p₀`.
    pub fn prior_weight(self, p0: &TfgTangent, cov: &Mat15) -> Result<Mat15> {
        if !is_positive_definite(cov) {
            return Err(Error::Numerical("prior covariance is not positive definite".into()));
        }
        let j_inv = invert(&self.local_jacobian(p0)?)?;
        let out = symmetrize(&(j_inv * cov * j_inv.transpose()));
        if !is_positive_definite(&out) {
            return Err(Error::Numerical("prior weight lost positive definiteness".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Parametrization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Parametrization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tfg" => Ok(Self::Tfg),
            "se23" => Ok(Self::Se23),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Input(format!("unknown parametrization `{other}`"))),
        }
    }
}

fn nav_only(xi: &TfgTangent) -> TfgTangent {
    TfgTangent { rot: xi.rot, vel: xi.vel, pos: xi.pos, ..TfgTangent::zeros() }
}

fn strip_biases(x: &TfgElement) -> TfgElement {
    TfgElement { rot: x.rot, vel: x.vel, pos: x.pos, ..TfgElement::identity() }
}

fn invert(m: &Mat15) -> Result<Mat15> {
    m.try_inverse().ok_or_else(|| Error::Numerical("singular chart Jacobian".into()))
}

fn invert9(m: &Mat9) -> Result<Mat9> {
    m.try_inverse().ok_or_else(|| Error::Numerical("singular chart Jacobian".into()))
}

/// `SE₂(3)` exponential of `(ξᴿ, ξᵛ, ξᵖ)` as an element with zero biases.
pub fn exp_se23(xi: &TfgTangent) -> TfgElement {
    TfgElement::exp(&nav_only(xi))
}

/// 9×9 `ad` of `SE₂(3)`, ordering `(rotation, velocity, position)`.
pub fn se23_ad(xi: &TfgTangent) -> Mat9 {
    let mut out = Mat9::zeros();
    let rot = skew(&xi.rot);
    for k in 0..3 {
        out.fixed_view_mut::<3, 3>(3 * k, 3 * k).copy_from(&rot);
    }
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&xi.vel));
    out.fixed_view_mut::<3, 3>(6, 0).copy_from(&skew(&xi.pos));
    out
}

pub fn se23_left_jacobian(xi: &TfgTangent) -> Mat9 {
    exp_and_phi1(&se23_ad(xi)).1
}

/// 5×5 homogeneous representation `[[R, v, p], [0, 1, 0], [0, 0, 1]]`.
pub fn se23_matrix(x: &TfgElement) -> SMatrix<f64, 5, 5> {
    let mut m = SMatrix::<f64, 5, 5>::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&x.rot);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&x.vel);
    m.fixed_view_mut::<3, 1>(0, 4).copy_from(&x.pos);
    m
}

/// Lie-algebra element of `SE₂(3)` in 5×5 form.
pub fn se23_hat(xi: &TfgTangent) -> SMatrix<f64, 5, 5> {
    let mut m = SMatrix::<f64, 5, 5>::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&xi.rot));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.vel);
    m.fixed_view_mut::<3, 1>(0, 4).copy_from(&xi.pos);
    m
}
