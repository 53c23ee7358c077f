//! Pointwise energy densities: stable Neo-Hookean elasticity and the
//! smoothly clamped log barrier.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};

pub type Vec9 = SVector<f64, 9>;
pub type Mat9 = SMatrix<f64, 9, 9>;

/// Column-major flattening, `F[(i, j)] ↦ i + 3j`.
pub fn flatten(m: &Matrix3<f64>) -> Vec9 {
    Vec9::from_column_slice(m.as_slice())
}

/// `∂ det F / ∂F`, the cofactor matrix.
pub fn cofactor(f: &Matrix3<f64>) -> Matrix3<f64> {
    let (c0, c1, c2) = (f.column(0), f.column(1), f.column(2));
    Matrix3::from_columns(&[c1.cross(&c2), c2.cross(&c0), c0.cross(&c1)])
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `∂² det F / ∂F²` in column-major flattening.
pub fn det_hessian(f: &Matrix3<f64>) -> Mat9 {
    let cols = [
        f.column(0).into_owned(),
        f.column(1).into_owned(),
        f.column(2).into_owned(),
    ];
    let mut h = Mat9::zeros();
    // block (a, b) = ∂(∂J/∂f_a)/∂f_b; ∂J/∂f_a = f_{a+1} × f_{a+2}
    for a in 0..3 {
        let b = (a + 1) % 3;
        let c = (a + 2) % 3;
        // ∂(f_b × f_c)/∂f_b = −[f_c]ₓ and ∂(f_b × f_c)/∂f_c = [f_b]ₓ
        h.fixed_view_mut::<3, 3>(3 * a, 3 * b).copy_from(&(-skew(&cols[c])));
        h.fixed_view_mut::<3, 3>(3 * a, 3 * c).copy_from(&skew(&cols[b]));
    }
    h
}

/// Energy density split by Lamé coefficient: `Ψ = μ·Ψ_μ + λ·Ψ_λ` with
/// `Ψ_μ = ½(I₂ − 3) − (I₃ − 1)` and `Ψ_λ = ½(I₃ − 1)²`.
#[derive(Debug, Clone, Copy)]
pub struct NeoHookeanParts {
    pub psi_mu: f64,
    pub psi_lambda: f64,
    /// `∂Ψ_μ/∂F`
    pub stress_mu: Matrix3<f64>,
    /// `∂Ψ_λ/∂F`
    pub stress_lambda: Matrix3<f64>,
}

pub fn neohookean_parts(f: &Matrix3<f64>) -> NeoHookeanParts {
    let j = f.determinant();
    let cof = cofactor(f);
    let psi = split_energy(f);
    NeoHookeanParts {
        psi_mu: psi.0,
        psi_lambda: psi.1,
        stress_mu: f - cof,
        stress_lambda: cof * (j - 1.0),
    }
}

/// Stable Neo-Hookean energy density
/// `Ψ = (μ/2)(I₂ − 3) − μ(I₃ − 1) + (λ/2)(I₃ − 1)²`.
///
/// Written in the Green strain `E = ½(FᵀF − I)` so that rigid rotations do
/// not leave first-order terms to cancel in floating point.
pub fn neohookean_energy(f: &Matrix3<f64>, mu: f64, lambda: f64) -> f64 {
    let (psi_mu, psi_lambda) = split_energy(f);
    mu * psi_mu + lambda * psi_lambda
}

fn split_energy(f: &Matrix3<f64>) -> (f64, f64) {
    let e = (f.transpose() * f - Matrix3::identity()) * 0.5;
    let tr = e.trace();
    let j = f.determinant();
    if j > 0.0 {
        // det C − 1 = 2 tr E + 4 c₂(E) + 8 det E and J − 1 = (det C − 1)/(J + 1)
        let c2 = 0.5 * (tr * tr - (e * e).trace());
        let det = e.determinant();
        let j1 = (2.0 * tr + 4.0 * c2 + 8.0 * det) / (1.0 + j);
        ((tr * j1 - 4.0 * c2 - 8.0 * det) / (1.0 + j), 0.5 * j1 * j1)
    } else {
        (tr - (j - 1.0), 0.5 * (j - 1.0) * (j - 1.0))
    }
}

/// First Piola-Kirchhoff stress `∂Ψ/∂F`.
pub fn neohookean_stress(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Matrix3<f64> {
    let j = f.determinant();
    f * mu + cofactor(f) * (lambda * (j - 1.0) - mu)
}

/// `∂²Ψ/∂F²` (9×9, column-major flattening).
pub fn neohookean_hessian(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Mat9 {
    let j = f.determinant();
    let g = flatten(&cofactor(f));
    Mat9::identity() * mu + g * g.transpose() * lambda + det_hessian(f) * (lambda * (j - 1.0) - mu)
}

/// Smoothly clamped barrier `−(d − d̂)² ln(d/d̂)` for `0 < d < d̂`, zero beyond.
/// Returns value, first and second derivative in `d`.
pub fn barrier(d: f64, dhat: f64) -> Result<(f64, f64, f64)> {
    if !(d > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "barrier evaluated at non-positive distance {d:e}"
        )));
    }
    Ok(barrier_unchecked(d, dhat))
}

#[inline]
pub(crate) fn barrier_unchecked(d: f64, dhat: f64) -> (f64, f64, f64) {
    if d >= dhat {
        return (0.0, 0.0, 0.0);
    }
    let s = d - dhat;
    let l = (d / dhat).ln();
    let value = -s * s * l;
    let d1 = -2.0 * s * l - s * s / d;
    let d2 = -2.0 * l - 4.0 * s / d + s * s / (d * d);
    (value, d1, d2)
}
