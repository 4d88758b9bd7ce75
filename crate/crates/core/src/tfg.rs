//! The two-frames group with both IMU biases.
//!
//! An element carries an attitude, two earth-frame vectors (velocity, position) and
//! two body-frame vectors (accelerometer and gyroscope biases). Composition rotates
//! the left operand's body-frame vectors into the right operand's frame:
//!
//! ```text
//! (R₁, v₁, p₁, b₁) • (R₂, v₂, p₂, b₂) = (R₁R₂, v₁ + R₁v₂, p₁ + R₁p₂, b₂ + R₂ᵀb₁)
//! ```
//!
//! Tangent vectors are ordered `(rotation, velocity, position, accel bias, gyro bias)`
//! everywhere in the crate.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{exp_and_phi1, set_block3, Mat15, Vec15};
use crate::so3::{dexp_inv_so3, dexp_so3, exp_so3, log_so3, skew};

/// Rotation angles at or above `π - LOG_MARGIN` are rejected by [`TfgElement::log`].
pub const LOG_MARGIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TfgElement {
    pub rot: Matrix3<f64>,
    pub vel: Vector3<f64>,
    pub pos: Vector3<f64>,
    pub acc_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

/// Local coordinates `(ξᴿ, ξᵛ, ξᵖ, ξᵇᵃ, ξᵇʷ)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TfgTangent {
    pub rot: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub pos: Vector3<f64>,
    pub acc_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

impl Default for TfgElement {
    fn default() -> Self {
        Self::identity()
    }
}

impl TfgTangent {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vec15) -> Self {
        Self {
            rot: v.fixed_rows::<3>(0).into_owned(),
            vel: v.fixed_rows::<3>(3).into_owned(),
            pos: v.fixed_rows::<3>(6).into_owned(),
            acc_bias: v.fixed_rows::<3>(9).into_owned(),
            gyro_bias: v.fixed_rows::<3>(12).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vec15 {
        let mut out = Vec15::zeros();
        for (block, part) in self.blocks().iter().enumerate() {
            set_block3(&mut out, block, part);
        }
        out
    }

    pub fn blocks(&self) -> [Vector3<f64>; 5] {
        [self.rot, self.vel, self.pos, self.acc_bias, self.gyro_bias]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_vector(&(self.to_vector() * s))
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

impl TfgElement {
    pub fn identity() -> Self {
        Self {
            rot: Matrix3::identity(),
            vel: Vector3::zeros(),
            pos: Vector3::zeros(),
            acc_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
        }
    }

    pub fn compose(&self, other: &Self) -> Self {
        let r2t = other.rot.transpose();
        Self {
            rot: self.rot * other.rot,
            vel: self.vel + self.rot * other.vel,
            pos: self.pos + self.rot * other.pos,
            acc_bias: other.acc_bias + r2t * self.acc_bias,
            gyro_bias: other.gyro_bias + r2t * self.gyro_bias,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rot.transpose();
        Self {
            rot: rt,
            vel: -(rt * self.vel),
            pos: -(rt * self.pos),
            acc_bias: -(self.rot * self.acc_bias),
            gyro_bias: -(self.rot * self.gyro_bias),
        }
    }

    pub fn exp(xi: &TfgTangent) -> Self {
        let nu = dexp_so3(&xi.rot);
        // ν(-ξᴿ) = ν(ξᴿ)ᵀ
        let nu_neg = nu.transpose();
        Self {
            rot: exp_so3(&xi.rot),
            vel: nu * xi.vel,
            pos: nu * xi.pos,
            acc_bias: nu_neg * xi.acc_bias,
            gyro_bias: nu_neg * xi.gyro_bias,
        }
    }

    /// Group logarithm; undefined for rotation angles within [`LOG_MARGIN`] of π.
    pub fn log(&self) -> Result<TfgTangent> {
        let rot = log_so3(&self.rot)?;
        let angle = rot.norm();
        if angle >= std::f64::consts::PI - LOG_MARGIN {
            return Err(Error::BranchCut { angle });
        }
        let nu_inv = dexp_inv_so3(&rot);
        let nu_neg_inv = nu_inv.transpose();
        Ok(TfgTangent {
            rot,
            vel: nu_inv * self.vel,
            pos: nu_inv * self.pos,
            acc_bias: nu_neg_inv * self.acc_bias,
            gyro_bias: nu_neg_inv * self.gyro_bias,
        })
    }

    /// Adjoint matrix: `χ exp(ξ) χ⁻¹ = exp(Ad_χ ξ)`.
    pub fn adjoint(&self) -> Mat15 {
        let r = self.rot;
        let mut ad = Mat15::zeros();
        for block in 0..5 {
            ad.fixed_view_mut::<3, 3>(3 * block, 3 * block).copy_from(&r);
        }
        ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&self.vel) * r));
        ad.fixed_view_mut::<3, 3>(6, 0).copy_from(&(skew(&self.pos) * r));
        ad.fixed_view_mut::<3, 3>(9, 0).copy_from(&(r * skew(&self.acc_bias)));
        ad.fixed_view_mut::<3, 3>(12, 0).copy_from(&(r * skew(&self.gyro_bias)));
        ad
    }

    /// Composition where the biases simply add, i.e. `SE₂(3) × ℝ⁶`.
    pub fn compose_imperfect(&self, other: &Self) -> Self {
        Self {
            rot: self.rot * other.rot,
            vel: self.vel + self.rot * other.vel,
            pos: self.pos + self.rot * other.pos,
            acc_bias: self.acc_bias + other.acc_bias,
            gyro_bias: self.gyro_bias + other.gyro_bias,
        }
    }
}

/// Lie-algebra adjoint `ad_ξ`, the generator of [`TfgElement::adjoint`].
pub fn ad(xi: &TfgTangent) -> Mat15 {
    let mut out = Mat15::zeros();
    let rot = skew(&xi.rot);
    for block in 0..5 {
        out.fixed_view_mut::<3, 3>(3 * block, 3 * block).copy_from(&rot);
    }
    for (block, part) in xi.blocks().iter().enumerate().skip(1) {
        out.fixed_view_mut::<3, 3>(3 * block, 0).copy_from(&skew(part));
    }
    out
}

/// Left Jacobian `Σ_j ad_ξ^j / (j+1)!`.
///
/// `exp(ξ + δ) ≈ exp(J(ξ) δ) exp(ξ)`; the right Jacobian is `left_jacobian(-ξ)`.
pub fn left_jacobian(xi: &TfgTangent) -> Mat15 {
    exp_and_phi1(&ad(xi)).1
}
