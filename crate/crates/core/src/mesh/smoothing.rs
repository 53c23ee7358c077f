//! Conservative Laplacian smoothing of per-element scalar fields.
//!
//! Each element gets a barycenter vertex joined to its four corners (false
//! barycentric subdivision). With `C` the P1 stiffness Laplacian of the
//! subdivided mesh and `M̃` the diagonal mass carrying element volume `Aᵢ`
//! on barycenter `i` and zero on original vertices, a field is smoothed by
//! `δ̂ = Nᵀ (M̃ + γC)⁻¹ N A δ`. Because `1ᵀC = 0`, the volume-weighted
//! integral `Σ Aᵢ δᵢ` is preserved and constants are fixed points.

use std::sync::Arc;

use nalgebra::Vector3;

use super::{edge_matrix, TetMesh, TET_FACES};
use crate::error::{Error, Result};
use crate::linalg::{SkylineCholesky, SkylineLayout, SkylineMatrix};

/// `1e-2 · (mean edge length)²`.
pub fn default_gamma(mesh: &TetMesh) -> f64 {
    1e-2 * mesh.mean_edge_length().powi(2)
}

#[derive(Debug, Clone)]
pub struct SmoothingOperator {
    gamma: f64,
    volumes: Vec<f64>,
    num_vertices: usize,
    factor: SkylineCholesky,
}

impl SmoothingOperator {
    pub fn new(mesh: &TetMesh, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing strength must be positive, got {gamma}"
            )));
        }
        let nv = mesh.num_vertices();
        let nt = mesh.num_tets();
        let n = nv + nt;

        let mut adjacency = mesh.vertex_adjacency();
        adjacency.resize(n, Vec::new());
        for (t, tet) in mesh.tets().iter().enumerate() {
            for &v in tet {
                adjacency[nv + t].push(v);
                adjacency[v].push(nv + t);
            }
        }
        let layout = Arc::new(SkylineLayout::new(&adjacency));
        let mut system = SkylineMatrix::zeros(layout);

        for (t, tet) in mesh.tets().iter().enumerate() {
            let bary = nv + t;
            let center = mesh.centroid(t);
            for face in TET_FACES {
                let ids = [tet[face[0]], tet[face[1]], tet[face[2]], bary];
                let pts = [
                    mesh.vertices()[ids[0]],
                    mesh.vertices()[ids[1]],
                    mesh.vertices()[ids[2]],
                    center,
                ];
                let k = p1_stiffness(pts);
                for a in 0..4 {
                    for b in 0..=a {
                        system.add(ids[a], ids[b], gamma * k[a][b]);
                    }
                }
            }
            system.add(bary, bary, mesh.volumes()[t]);
        }
        let factor = system
            .factor()
            .map_err(|e| Error::InvalidParameter(format!("smoothing system is singular (internal error): {e}")))?;
        Ok(Self {
            gamma,
            volumes: mesh.volumes().to_vec(),
            num_vertices: nv,
            factor,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_elements(&self) -> usize {
        self.volumes.len()
    }

    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.volumes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.volumes.len(),
                actual: field.len(),
            });
        }
        let mut rhs = vec![0.0; self.num_vertices + self.volumes.len()];
        for (t, (&a, &d)) in self.volumes.iter().zip(field).enumerate() {
            rhs[self.num_vertices + t] = a * d;
        }
        let x = self.factor.solve(&rhs);
        Ok(x[self.num_vertices..].to_vec())
    }
}

/// P1 stiffness `Vₑ ∇φₐ·∇φ_b` of one tet (orientation independent).
fn p1_stiffness(p: [Vector3<f64>; 4]) -> [[f64; 4]; 4] {
    let dm = edge_matrix(p);
    let volume = dm.determinant().abs() / 6.0;
    let inv = dm.try_inverse().expect("non-degenerate sub-tet");
    let mut grads = [Vector3::zeros(); 4];
    for a in 0..3 {
        grads[a + 1] = inv.row(a).transpose();
    }
    grads[0] = -(grads[1] + grads[2] + grads[3]);
    let mut k = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            k[a][b] = volume * grads[a].dot(&grads[b]);
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weighted(mesh: &TetMesh, f: &[f64]) -> f64 {
        mesh.volumes().iter().zip(f).map(|(a, x)| a * x).sum()
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let k = p1_stiffness(fixtures::regular_tet().corners(0));
        for row in k {
            assert!(row.iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_positive_gamma() {
        let mesh = fixtures::five_tet_cube();
        assert!(SmoothingOperator::new(&mesh, 0.0).is_err());
        assert!(SmoothingOperator::new(&mesh, -1.0).is_err());
    }

    #[test]
    fn constants_are_fixed() {
        let mesh = fixtures::five_tet_cube();
        let op = SmoothingOperator::new(&mesh, 0.3).unwrap();
        for x in op.apply(&[3.5; 5]).unwrap() {
            assert!((x - 3.5).abs() < 1e-10 * 3.5);
        }
    }

    #[test]
    fn random_fields_conserve_weighted_integral() {
        let mesh = fixtures::five_tet_cube();
        let op = SmoothingOperator::new(&mesh, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let f: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = op.apply(&f).unwrap();
            let (a, b) = (weighted(&mesh, &f), weighted(&mesh, &g));
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn spike_spreads_monotonically_with_gamma() {
        let mesh = fixtures::lattice_cube(3, 1.0, Vector3::zeros());
        let n = mesh.num_tets();
        let mut spike = vec![0.0; n];
        spike[n / 2] = 1.0;
        let target = weighted(&mesh, &spike) / mesh.total_volume();
        let mut last = f64::INFINITY;
        for gamma in [1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e3] {
            let g = SmoothingOperator::new(&mesh, gamma).unwrap().apply(&spike).unwrap();
            let spread = g.iter().map(|x| (x - target).abs()).fold(0.0, f64::max);
            assert!(spread < last, "gamma {gamma}: {spread} !< {last}");
            last = spread;
        }
        assert!(last < 1e-2 * (1.0 - target));
    }
}
