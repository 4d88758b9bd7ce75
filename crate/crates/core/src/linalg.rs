//! Small dense helpers shared by the group and smoother code.

use nalgebra::{SMatrix, SVector};

pub type Mat15 = SMatrix<f64, 15, 15>;
pub type Vec15 = SVector<f64, 15>;
pub type Mat9 = SMatrix<f64, 9, 9>;

/// Stopping rule for the power series below.
pub const SERIES_TOL: f64 = 1e-14;
pub const SERIES_MAX_TERMS: usize = 30;

/// Truncated series `Σ_j A^j / (j + shift)!` for `shift` in {0, 1}.
fn series<const N: usize>(a: &SMatrix<f64, N, N>, shift: usize) -> SMatrix<f64, N, N> {
    let mut term = SMatrix::<f64, N, N>::identity();
    for k in 1..=shift {
        term /= k as f64;
    }
    let mut sum = term;
    for j in 1..SERIES_MAX_TERMS {
        term = term * a / (j + shift) as f64;
        sum += term;
        if term.norm() < SERIES_TOL {
            break;
        }
    }
    sum
}

/// Matrix exponential and `φ₁(A) = Σ_j A^j/(j+1)!` by scaling and squaring.
///
/// The series are evaluated on `A / 2^s` with `‖A / 2^s‖ ≤ 1/2`, then doubled back with
/// `φ₁(2A) = ½ (I + e^A) φ₁(A)` and `e^{2A} = (e^A)²`.
pub fn exp_and_phi1<const N: usize>(
    a: &SMatrix<f64, N, N>,
) -> (SMatrix<f64, N, N>, SMatrix<f64, N, N>) {
    let norm = a.norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let mut e = series(&scaled, 0);
    let mut phi = series(&scaled, 1);
    let identity = SMatrix::<f64, N, N>::identity();
    for _ in 0..squarings {
        phi = 0.5 * (identity + e) * phi;
        e = e * e;
    }
    (e, phi)
}

/// Matrix exponential by scaling and squaring.
pub fn expm<const N: usize>(a: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    exp_and_phi1(a).0
}

/// Symmetrized copy, `(M + Mᵀ)/2`.
pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    0.5 * (m + m.transpose())
}

pub fn is_positive_definite<const N: usize>(m: &SMatrix<f64, N, N>) -> bool {
    m.iter().all(|v| v.is_finite()) && m.cholesky().is_some()
}

/// Copies a 3-vector block into a 15-vector at block index `block`.
pub(crate) fn set_block3(v: &mut Vec15, block: usize, value: &SVector<f64, 3>) {
    v.fixed_rows_mut::<3>(3 * block).copy_from(value);
}
