use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::TetMesh;
use crate::error::{Error, Result};

/// Column labels in the fixed component order.
pub const MOMENT_LABELS: [&str; 10] = [
    "m0", "m1,x", "m1,y", "m1,z", "m2,xx", "m2,yy", "m2,zz", "m2,xy", "m2,xz", "m2,yz",
];

/// Mass moments of a body: total mass, first moment, and the unique entries
/// of `∫((x·x)I − xxᵀ)ρ dV` in the order xx, yy, zz, xy, xz, yz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub m0: f64,
    pub m1: [f64; 3],
    pub m2: [f64; 6],
}

impl MomentVector {
    pub fn from_array(a: [f64; 10]) -> Self {
        Self {
            m0: a[0],
            m1: [a[1], a[2], a[3]],
            m2: [a[4], a[5], a[6], a[7], a[8], a[9]],
        }
    }

    pub fn to_array(&self) -> [f64; 10] {
        let (m1, m2) = (self.m1, self.m2);
        [self.m0, m1[0], m1[1], m1[2], m2[0], m2[1], m2[2], m2[3], m2[4], m2[5]]
    }

    pub fn m1_vector(&self) -> Vector3<f64> {
        Vector3::from(self.m1)
    }

    /// The full symmetric 3×3 second-moment matrix.
    pub fn m2_matrix(&self) -> Matrix3<f64> {
        let [xx, yy, zz, xy, xz, yz] = self.m2;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_array(self.to_array().map(|x| x * s))
    }

    /// One table row: label followed by the ten components in 4-significant
    /// digit scientific notation.
    pub fn table_row(&self, label: &str) -> String {
        let mut row = format!("{label:<12}");
        for x in self.to_array() {
            row.push_str(&format!(" {:>10}", format_sci(x)));
        }
        row
    }

    pub fn table_header() -> String {
        let mut row = format!("{:<12}", "object");
        for l in MOMENT_LABELS {
            row.push_str(&format!(" {l:>10}"));
        }
        row
    }
}

/// Formats as `d.ddde±XX`.
pub fn format_sci(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.3e}");
    let (mantissa, exp) = s.split_once('e').expect("rust exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Linear map from per-element (effective) density to the ten moments.
///
/// Row 0 holds element volumes, rows 1–3 `∫ x dV`, rows 4–9 the entries of
/// `∫((x·x)I − xxᵀ) dV`, integrated exactly per element.
#[derive(Debug, Clone)]
pub struct MomentsOperator {
    columns: Vec<[f64; 10]>,
}

impl MomentsOperator {
    pub fn new(mesh: &TetMesh) -> Self {
        let columns = (0..mesh.num_tets())
            .map(|t| element_column(mesh.corners(t), mesh.volumes()[t]))
            .collect();
        Self { columns }
    }

    pub fn num_elements(&self) -> usize {
        self.columns.len()
    }

    /// Column `t` of the 10×|T| operator.
    pub fn column(&self, t: usize) -> &[f64; 10] {
        &self.columns[t]
    }

    /// Entry (row, element).
    pub fn entry(&self, row: usize, t: usize) -> f64 {
        self.columns[t][row]
    }

    pub fn apply(&self, density: &[f64]) -> Result<MomentVector> {
        if density.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                actual: density.len(),
            });
        }
        let mut acc = [0.0; 10];
        for (col, &d) in self.columns.iter().zip(density) {
            for k in 0..10 {
                acc[k] += col[k] * d;
            }
        }
        Ok(MomentVector::from_array(acc))
    }

    /// `Sᵀ w` for a weight per moment component.
    pub fn apply_transpose(&self, w: &[f64; 10]) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| c.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Closed-form integrals over one tet: `∫ x_a x_b dV = V/20 (Σ pᵢ pᵢᵀ + s sᵀ)`
/// with `s = Σ pᵢ`.
fn element_column(p: [Vector3<f64>; 4], volume: f64) -> [f64; 10] {
    let s: Vector3<f64> = p.iter().sum();
    let mut c = s * s.transpose();
    for q in &p {
        c += q * q.transpose();
    }
    c *= volume / 20.0;
    let first = s * (volume / 4.0);
    let tr = c.trace();
    [
        volume,
        first.x,
        first.y,
        first.z,
        tr - c[(0, 0)],
        tr - c[(1, 1)],
        tr - c[(2, 2)],
        -c[(0, 1)],
        -c[(0, 2)],
        -c[(1, 2)],
    ]
}

/// Moments of a piecewise-constant density field.
pub fn moments(mesh: &TetMesh, effective_density: &[f64]) -> Result<MomentVector> {
    MomentsOperator::new(mesh).apply(effective_density)
}

/// Per-component magnitude scales for comparing moment vectors whose entries
/// carry different units: `m0`, `m0·R` and `m0·R²`, where `R²` is the mean
/// squared distance of mass from the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentScale {
    pub scale: [f64; 10],
}

impl MomentScale {
    /// Every component compared in its own units.
    pub fn unit() -> Self {
        Self { scale: [1.0; 10] }
    }

    pub fn from_reference(m: &MomentVector) -> Self {
        let m0 = m.m0.abs().max(f64::MIN_POSITIVE);
        let r2 = (m.m2[0] + m.m2[1] + m.m2[2]) / (2.0 * m0);
        let r = r2.max(0.0).sqrt().max(f64::MIN_POSITIVE);
        let mut scale = [m0; 10];
        scale[1..4].iter_mut().for_each(|s| *s = m0 * r);
        scale[4..10]
            .iter_mut()
            .for_each(|s| *s = m0 * r2.max(f64::MIN_POSITIVE));
        Self { scale }
    }

    pub fn normalize(&self, m: &MomentVector) -> [f64; 10] {
        let a = m.to_array();
        std::array::from_fn(|k| a[k] / self.scale[k])
    }

    /// `|Δₖ| / max(|refₖ|, scaleₖ)` per component.
    pub fn relative_errors(&self, reference: &MomentVector, other: &MomentVector) -> [f64; 10] {
        let (r, o) = (reference.to_array(), other.to_array());
        std::array::from_fn(|k| (o[k] - r[k]).abs() / r[k].abs().max(self.scale[k]))
    }

    /// `‖Δ/scale‖ / ‖ref/scale‖`.
    pub fn relative_frobenius(&self, reference: &MomentVector, other: &MomentVector) -> f64 {
        let (r, o) = (self.normalize(reference), self.normalize(other));
        let num: f64 = r.iter().zip(&o).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = r.iter().map(|a| a * a).sum();
        (num / den).sqrt()
    }

    /// Components with `|ref| ≥ 0.1·scale`.
    pub fn dominant(&self, reference: &MomentVector) -> [bool; 10] {
        let r = reference.to_array();
        std::array::from_fn(|k| r[k].abs() >= 0.1 * self.scale[k])
    }

    /// Rounds every component onto a grid of spacing `2·tol·scaleₖ` anchored at
    /// `anchor`. Any vector within `tol` (relative to scale) of the anchor maps
    /// exactly onto it.
    pub fn quantize_to(&self, m: &MomentVector, anchor: &MomentVector, tol: f64) -> MomentVector {
        let (a, x) = (anchor.to_array(), m.to_array());
        MomentVector::from_array(std::array::from_fn(|k| {
            let step = 2.0 * tol * self.scale[k];
            let cells = ((x[k] - a[k]) / step).round();
            if cells == 0.0 {
                a[k]
            } else {
                a[k] + cells * step
            }
        }))
    }
}
