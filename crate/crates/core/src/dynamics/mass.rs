use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::linalg::SkylineMatrix;
use crate::mesh::TetMesh;

/// Consistent tet mass matrix, kept as per-element coefficients
/// `mₑ = dₑVₑ/20`; element block `(a, b)` is `mₑ(1 + δ_ab)·I₃`.
#[derive(Debug, Clone)]
pub struct MassMatrix {
    tets: Vec<[usize; 4]>,
    coeff: Vec<f64>,
    num_vertices: usize,
}

impl MassMatrix {
    pub fn new(mesh: &TetMesh, effective_density: &[f64]) -> Result<Self> {
        if effective_density.len() != mesh.num_tets() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_tets(),
                actual: effective_density.len(),
            });
        }
        if let Some(d) = effective_density.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "density {d} must be finite and non-negative"
            )));
        }
        if effective_density.iter().all(|&d| d == 0.0) {
            return Err(Error::InvalidParameter(
                "all-zero density gives a singular mass matrix".into(),
            ));
        }
        let coeff = mesh
            .volumes()
            .iter()
            .zip(effective_density)
            .map(|(v, d)| v * d / 20.0)
            .collect();
        Ok(Self {
            tets: mesh.tets().to_vec(),
            coeff,
            num_vertices: mesh.num_vertices(),
        })
    }

    pub fn dim(&self) -> usize {
        3 * self.num_vertices
    }

    pub fn total_mass(&self) -> f64 {
        20.0 * self.coeff.iter().sum::<f64>()
    }

    /// `dₑVₑ/20` for element `e`.
    pub fn element_coefficient(&self, e: usize) -> f64 {
        self.coeff[e]
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let mut y = vec![0.0; x.len()];
        for (tet, &m) in self.tets.iter().zip(&self.coeff) {
            let mut sum = [0.0; 3];
            for &v in tet {
                for c in 0..3 {
                    sum[c] += x[3 * v + c];
                }
            }
            for &v in tet {
                for c in 0..3 {
                    y[3 * v + c] += m * (sum[c] + x[3 * v + c]);
                }
            }
        }
        y
    }

    /// `wᵀ (∂M/∂mₑ) u` for element `e`, so that the derivative of `wᵀMu`
    /// with respect to density `dₑ` is this value times `Vₑ/20`.
    pub fn element_bilinear(&self, e: usize, w: &[f64], u: &[f64]) -> f64 {
        let tet = &self.tets[e];
        let mut sw = [0.0; 3];
        let mut su = [0.0; 3];
        let mut diag = 0.0;
        for &v in tet {
            for c in 0..3 {
                sw[c] += w[3 * v + c];
                su[c] += u[3 * v + c];
                diag += w[3 * v + c] * u[3 * v + c];
            }
        }
        sw[0] * su[0] + sw[1] * su[1] + sw[2] * su[2] + diag
    }

    pub fn norm_squared(&self, x: &[f64]) -> f64 {
        self.mul(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Mass-weighted mean position.
    pub fn center_of_mass(&self, q: &[f64]) -> Vector3<f64> {
        let mq = self.mul(q);
        let mut s = Vector3::zeros();
        for v in 0..self.num_vertices {
            for c in 0..3 {
                s[c] += mq[3 * v + c];
            }
        }
        s / self.total_mass()
    }

    /// `M·(a, a, …)`: the gravitational force for acceleration `a`.
    pub fn weight(&self, a: &Vector3<f64>) -> Vec<f64> {
        let tiled: Vec<f64> = (0..self.num_vertices).flat_map(|_| [a.x, a.y, a.z]).collect();
        self.mul(&tiled)
    }

    /// Adds `M` restricted to the unknowns given by `dof_index` (global dof to
    /// unknown, `None` for eliminated dofs).
    pub(crate) fn add_to(&self, matrix: &mut SkylineMatrix, dof_index: &[Option<usize>]) {
        for (tet, &m) in self.tets.iter().zip(&self.coeff) {
            for a in 0..4 {
                for b in 0..=a {
                    let w = if a == b { 2.0 * m } else { m };
                    for c in 0..3 {
                        if let (Some(i), Some(j)) = (dof_index[3 * tet[a] + c], dof_index[3 * tet[b] + c]) {
                            matrix.add(i, j, w);
                        }
                    }
                }
            }
        }
    }
}
