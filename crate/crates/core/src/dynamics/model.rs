use std::sync::Arc;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rayon::prelude::*;

use super::energy::{barrier_unchecked, flatten, neohookean_energy, neohookean_hessian, neohookean_stress, Mat9};
use super::mass::MassMatrix;
use super::scenario::Scenario;
use crate::error::{Error, Result};
use crate::linalg::{SkylineLayout, SkylineMatrix};
use crate::materials::{lame_from_young_poisson, Realized};
use crate::mesh::{edge_matrix, TetMesh};

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Dfdx = SMatrix<f64, 9, 12>;

/// Rest-state data of one element.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub rest_inverse: Matrix3<f64>,
    pub volume: f64,
    /// `∂vec(F)/∂x` for the element's 12 coordinates (vertex-major).
    pub dfdx: Dfdx,
}

impl ElementGeometry {
    pub fn new(rest: [Vector3<f64>; 4]) -> Result<Self> {
        let dm = edge_matrix(rest);
        let volume = dm.determinant() / 6.0;
        let rest_inverse = dm
            .try_inverse()
            .filter(|_| volume > 0.0)
            .ok_or_else(|| Error::InvalidMesh(format!("element with rest volume {volume:e}")))?;
        let b = rest_inverse;
        let mut dfdx = Dfdx::zeros();
        for j in 0..3 {
            let sum = b[(0, j)] + b[(1, j)] + b[(2, j)];
            for i in 0..3 {
                let row = i + 3 * j;
                dfdx[(row, i)] = -sum;
                for a in 1..4 {
                    dfdx[(row, 3 * a + i)] = b[(a - 1, j)];
                }
            }
        }
        Ok(Self {
            rest_inverse,
            volume,
            dfdx,
        })
    }

    pub fn deformation_gradient(&self, x: [Vector3<f64>; 4]) -> Matrix3<f64> {
        edge_matrix(x) * self.rest_inverse
    }
}

/// Per-element simulation coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMaterials {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Multiplies the elastic energy density.
    pub stiffness: Vec<f64>,
    /// Mass density entering `M`.
    pub density: Vec<f64>,
}

impl ElementMaterials {
    /// Occupancy below `occupancy_floor` is raised to it so void elements keep
    /// a small mass and stiffness.
    pub fn from_realized(r: &Realized, occupancy_floor: f64) -> Result<Self> {
        let n = r.young.len();
        let mut out = Self {
            mu: Vec::with_capacity(n),
            lambda: Vec::with_capacity(n),
            stiffness: Vec::with_capacity(n),
            density: Vec::with_capacity(n),
        };
        for e in 0..n {
            let (mu, lambda) = lame_from_young_poisson(r.young[e], r.poisson[e])?;
            let a = r.occupancy[e].max(occupancy_floor);
            out.mu.push(mu);
            out.lambda.push(lambda);
            out.stiffness.push(a * a * a);
            out.density.push(a * r.density[e]);
        }
        Ok(out)
    }

    pub fn uniform(num_elements: usize, young: f64, poisson: f64, density: f64) -> Result<Self> {
        let (mu, lambda) = lame_from_young_poisson(young, poisson)?;
        Ok(Self {
            mu: vec![mu; num_elements],
            lambda: vec![lambda; num_elements],
            stiffness: vec![1.0; num_elements],
            density: vec![density; num_elements],
        })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// Mesh- and scenario-dependent precomputation shared by every simulation
/// of the same setup.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub(crate) mesh: Arc<TetMesh>,
    pub(crate) scenario: Scenario,
    pub(crate) geometry: Vec<ElementGeometry>,
    pub(crate) dof_index: Vec<Option<usize>>,
    pub(crate) free_dofs: Vec<usize>,
    pub(crate) layout: Arc<SkylineLayout>,
    pub(crate) contact_vertices: Vec<usize>,
    pub(crate) initial: Vec<f64>,
}

impl Simulator {
    /// Validates the scenario against the mesh, including start feasibility.
    pub fn new(mesh: Arc<TetMesh>, scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let nv = mesh.num_vertices();
        let mut pinned = vec![false; nv];
        for pin in &scenario.pins {
            if pin.vertex >= nv {
                return Err(Error::InvalidParameter(format!(
                    "pinned vertex {} out of range ({} vertices)",
                    pin.vertex, nv
                )));
            }
            if pinned[pin.vertex] {
                return Err(Error::InvalidParameter(format!("vertex {} pinned twice", pin.vertex)));
            }
            pinned[pin.vertex] = true;
        }

        let initial: Vec<f64> = mesh
            .vertices()
            .iter()
            .flat_map(|x| {
                let y = x + scenario.translation;
                [y.x, y.y, y.z]
            })
            .collect();

        let contact_vertices: Vec<usize> = mesh
            .surface_vertices()
            .iter()
            .copied()
            .filter(|&v| !pinned[v])
            .collect();
        for &v in &contact_vertices {
            let x = Vector3::new(initial[3 * v], initial[3 * v + 1], initial[3 * v + 2]);
            for (p, hs) in scenario.half_spaces.iter().enumerate() {
                let d = hs.distance(&x);
                if !(d >= scenario.dhat) {
                    return Err(Error::Infeasible {
                        vertex: v,
                        plane: p,
                        distance: d,
                    });
                }
            }
        }

        let geometry = (0..mesh.num_tets())
            .map(|t| ElementGeometry::new(mesh.corners(t)))
            .collect::<Result<Vec<_>>>()?;

        let mut dof_index = vec![None; 3 * nv];
        let mut free_dofs = Vec::new();
        for v in 0..nv {
            if !pinned[v] {
                for c in 0..3 {
                    dof_index[3 * v + c] = Some(free_dofs.len());
                    free_dofs.push(3 * v + c);
                }
            }
        }
        let vertex_adj = mesh.vertex_adjacency();
        let mut adjacency = vec![Vec::new(); free_dofs.len()];
        for v in 0..nv {
            if pinned[v] {
                continue;
            }
            for c in 0..3 {
                let i = dof_index[3 * v + c].unwrap();
                for w in vertex_adj[v].iter().copied().chain(std::iter::once(v)) {
                    for d in 0..3 {
                        if let Some(j) = dof_index[3 * w + d] {
                            if j != i {
                                adjacency[i].push(j);
                            }
                        }
                    }
                }
            }
        }
        let layout = Arc::new(SkylineLayout::new(&adjacency));

        Ok(Self {
            mesh,
            scenario,
            geometry,
            dof_index,
            free_dofs,
            layout,
            contact_vertices,
            initial,
        })
    }

    pub fn mesh(&self) -> &Arc<TetMesh> {
        &self.mesh
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    /// Rest positions moved by the scenario translation.
    pub fn initial_positions(&self) -> &[f64] {
        &self.initial
    }

    pub fn num_free_dofs(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn is_free_dof(&self, dof: usize) -> bool {
        self.dof_index[dof].is_some()
    }

    pub fn contact_vertices(&self) -> &[usize] {
        &self.contact_vertices
    }

    pub fn deformation_gradient(&self, q: &[f64], element: usize) -> Matrix3<f64> {
        self.geometry[element].deformation_gradient(self.element_positions(q, element))
    }

    pub(crate) fn element_positions(&self, q: &[f64], element: usize) -> [Vector3<f64>; 4] {
        let tet = &self.mesh.tets()[element];
        tet.map(|v| Vector3::new(q[3 * v], q[3 * v + 1], q[3 * v + 2]))
    }

    pub(crate) fn element_dofs(&self, element: usize) -> [usize; 12] {
        let tet = &self.mesh.tets()[element];
        std::array::from_fn(|k| 3 * tet[k / 3] + k % 3)
    }

    /// Writes the prescribed pin positions at `time` into `q`.
    pub fn apply_pins(&self, q: &mut [f64], time: f64) {
        for pin in &self.scenario.pins {
            let v = pin.vertex;
            let x0 = Vector3::new(self.initial[3 * v], self.initial[3 * v + 1], self.initial[3 * v + 2]);
            let x = pin.position(&x0, time);
            q[3 * v..3 * v + 3].copy_from_slice(x.as_slice());
        }
    }

    pub fn materials(&self, realized: &Realized, occupancy_floor: f64) -> Result<ElementMaterials> {
        let m = ElementMaterials::from_realized(realized, occupancy_floor)?;
        self.check_materials(&m)?;
        Ok(m)
    }

    pub(crate) fn check_materials(&self, m: &ElementMaterials) -> Result<()> {
        let n = self.mesh.num_tets();
        for len in [m.mu.len(), m.lambda.len(), m.stiffness.len(), m.density.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(())
    }

    /// Per-element strain energy `Vₑ·sₑ·Ψ(Fₑ)` summed over the mesh.
    pub fn elastic_energy(&self, q: &[f64], mats: &ElementMaterials) -> f64 {
        (0..self.geometry.len())
            .map(|e| {
                let w = self.geometry[e].volume * mats.stiffness[e];
                if w == 0.0 {
                    return 0.0;
                }
                let f = self.deformation_gradient(q, e);
                w * neohookean_energy(&f, mats.mu[e], mats.lambda[e])
            })
            .sum()
    }

    /// Element gradient and (optionally projected) Hessian of the weighted
    /// strain energy.
    pub(crate) fn element_terms(
        &self,
        q: &[f64],
        mats: &ElementMaterials,
        e: usize,
        hessian: bool,
        project: bool,
    ) -> (f64, Vec12, Option<Mat12>) {
        let geom = &self.geometry[e];
        let w = geom.volume * mats.stiffness[e];
        if w == 0.0 {
            return (0.0, Vec12::zeros(), hessian.then(Mat12::zeros));
        }
        let (mu, lambda) = (mats.mu[e], mats.lambda[e]);
        let f = self.deformation_gradient(q, e);
        let energy = w * neohookean_energy(&f, mu, lambda);
        let grad = geom.dfdx.transpose() * flatten(&neohookean_stress(&f, mu, lambda)) * w;
        let hess = hessian.then(|| {
            let hf = neohookean_hessian(&f, mu, lambda);
            let mut h = geom.dfdx.transpose() * hf * geom.dfdx * w;
            if project && !is_psd(&hf) {
                project_psd(&mut h);
            }
            h
        });
        (energy, grad, hess)
    }
}

fn is_psd(h: &Mat9) -> bool {
    let eig = h.symmetric_eigenvalues();
    let scale = eig.amax();
    eig.min() >= -1e-12 * scale
}

/// Clamps negative eigenvalues to zero.
pub fn project_psd(h: &mut Mat12) {
    let sym = (*h + h.transpose()) * 0.5;
    let mut eig = sym.symmetric_eigen();
    if eig.eigenvalues.min() >= 0.0 {
        *h = sym;
        return;
    }
    eig.eigenvalues.iter_mut().for_each(|l| *l = l.max(0.0));
    *h = eig.recompose();
}

/// The per-step objective for one material assignment.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    pub(crate) sim: &'a Simulator,
    pub(crate) mats: &'a ElementMaterials,
    pub(crate) mass: MassMatrix,
    pub(crate) weight: Vec<f64>,
    pub(crate) kappa: f64,
    pub(crate) tolerance: f64,
    pub(crate) base: SkylineMatrix,
}

impl Simulator {
    pub fn stepper<'a>(&'a self, mats: &'a ElementMaterials) -> Result<Stepper<'a>> {
        self.check_materials(mats)?;
        let mass = MassMatrix::new(&self.mesh, &mats.density)?;
        let s = &self.scenario;
        let m0 = mass.total_mass();
        let weight = mass.weight(&s.gravity);
        let kappa = s
            .barrier_stiffness
            .unwrap_or_else(|| m0 * s.gravity.norm().max(1.0) / s.dhat);
        let tolerance = s
            .newton
            .tolerance
            .unwrap_or_else(|| 1e-8 * (m0 * s.gravity.norm() * s.timestep * s.timestep).max(1.0));
        let mut base = SkylineMatrix::zeros(Arc::clone(&self.layout));
        mass.add_to(&mut base, &self.dof_index);
        Ok(Stepper {
            sim: self,
            mats,
            mass,
            weight,
            kappa,
            tolerance,
            base,
        })
    }
}

/// Value, full gradient and reduced Hessian of the step energy.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub energy: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<SkylineMatrix>,
}

impl<'a> Stepper<'a> {
    pub fn simulator(&self) -> &'a Simulator {
        self.sim
    }

    pub fn materials(&self) -> &'a ElementMaterials {
        self.mats
    }

    pub fn mass(&self) -> &MassMatrix {
        &self.mass
    }

    pub fn barrier_stiffness(&self) -> f64 {
        self.kappa
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// `(4/9)h²`
    pub fn potential_weight(&self) -> f64 {
        let h = self.sim.scenario.timestep;
        4.0 / 9.0 * h * h
    }

    /// Smallest clearance over contact vertices and half-spaces.
    pub fn min_clearance(&self, q: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for &v in &self.sim.contact_vertices {
            let x = Vector3::new(q[3 * v], q[3 * v + 1], q[3 * v + 2]);
            for hs in &self.sim.scenario.half_spaces {
                m = m.min(hs.distance(&x));
            }
        }
        m
    }

    fn infeasible(&self, q: &[f64]) -> Option<Error> {
        for &v in &self.sim.contact_vertices {
            let x = Vector3::new(q[3 * v], q[3 * v + 1], q[3 * v + 2]);
            for (p, hs) in self.sim.scenario.half_spaces.iter().enumerate() {
                let d = hs.distance(&x);
                if !(d > 0.0) {
                    return Some(Error::Infeasible {
                        vertex: v,
                        plane: p,
                        distance: d,
                    });
                }
            }
        }
        None
    }

    /// `E(q) = ½(q−q̂)ᵀM(q−q̂) + (4/9)h²(Φ_Ψ + Φ_g + κΦ_c)`, with the gravity
    /// potential measured from `q̂` (a `q`-independent shift).
    pub fn energy(&self, q: &[f64], q_hat: &[f64]) -> Result<f64> {
        if let Some(e) = self.infeasible(q) {
            return Err(e);
        }
        Ok(self.energy_unchecked(q, q_hat).0)
    }

    /// Energy and the sum of magnitudes of its terms, which bounds the
    /// round-off of the value.
    pub(crate) fn energy_unchecked(&self, q: &[f64], q_hat: &[f64]) -> (f64, f64) {
        let d: Vec<f64> = q.iter().zip(q_hat).map(|(a, b)| a - b).collect();
        let md = self.mass.mul(&d);
        let inertia = 0.5 * dot(&md, &d);
        let gravity = -dot(&self.weight, &d);
        let parts: Vec<f64> = (0..self.sim.geometry.len())
            .into_par_iter()
            .map(|e| {
                let w = self.sim.geometry[e].volume * self.mats.stiffness[e];
                if w == 0.0 {
                    0.0
                } else {
                    let f = self.sim.deformation_gradient(q, e);
                    w * neohookean_energy(&f, self.mats.mu[e], self.mats.lambda[e])
                }
            })
            .collect();
        let elastic: f64 = parts.iter().sum();
        let elastic_abs: f64 = parts.iter().map(|x| x.abs()).sum();
        let contact = self.kappa * self.contact_energy(q);
        let k = self.potential_weight();
        (
            inertia + k * (elastic + gravity + contact),
            inertia + k * (elastic_abs + gravity.abs() + contact),
        )
    }

    fn contact_energy(&self, q: &[f64]) -> f64 {
        let dhat = self.sim.scenario.dhat;
        let mut sum = 0.0;
        for &v in &self.sim.contact_vertices {
            let x = Vector3::new(q[3 * v], q[3 * v + 1], q[3 * v + 2]);
            for hs in &self.sim.scenario.half_spaces {
                sum += barrier_unchecked(hs.distance(&x), dhat).0;
            }
        }
        sum
    }

    /// Gradient of the unscaled barrier sum over all dofs.
    pub(crate) fn contact_gradient(&self, q: &[f64]) -> Vec<f64> {
        let dhat = self.sim.scenario.dhat;
        let mut g = vec![0.0; q.len()];
        for &v in &self.sim.contact_vertices {
            let x = Vector3::new(q[3 * v], q[3 * v + 1], q[3 * v + 2]);
            for hs in &self.sim.scenario.half_spaces {
                let dist = hs.distance(&x);
                if dist < dhat {
                    let b1 = barrier_unchecked(dist, dhat).1;
                    for c in 0..3 {
                        g[3 * v + c] += b1 * hs.normal[c];
                    }
                }
            }
        }
        g
    }

    /// Derivative of the barrier stiffness with respect to total mass; zero
    /// when the stiffness is set explicitly.
    pub(crate) fn kappa_per_mass(&self) -> f64 {
        let s = &self.sim.scenario;
        match s.barrier_stiffness {
            Some(_) => 0.0,
            None => s.gravity.norm().max(1.0) / s.dhat,
        }
    }

    /// Energy, gradient over all dofs and, on request, the Hessian over the
    /// free dofs (element blocks PSD-projected when `project`).
    pub fn evaluate(&self, q: &[f64], q_hat: &[f64], hessian: bool, project: bool) -> Result<Evaluation> {
        if let Some(e) = self.infeasible(q) {
            return Err(e);
        }
        let sim = self.sim;
        let k = self.potential_weight();
        let d: Vec<f64> = q.iter().zip(q_hat).map(|(a, b)| a - b).collect();
        let md = self.mass.mul(&d);
        let mut energy = 0.5 * dot(&md, &d) - k * dot(&self.weight, &d);
        let mut gradient: Vec<f64> = md.iter().zip(&self.weight).map(|(a, w)| a - k * w).collect();
        let mut matrix = hessian.then(|| self.base.clone());

        let terms: Vec<_> = (0..sim.geometry.len())
            .into_par_iter()
            .map(|e| sim.element_terms(q, self.mats, e, hessian, project))
            .collect();
        let mut elastic = 0.0;
        for (e, (psi, g, h)) in terms.into_iter().enumerate() {
            elastic += psi;
            let dofs = sim.element_dofs(e);
            for r in 0..12 {
                gradient[dofs[r]] += k * g[r];
            }
            if let (Some(m), Some(h)) = (matrix.as_mut(), h) {
                for r in 0..12 {
                    let Some(i) = sim.dof_index[dofs[r]] else { continue };
                    for c in 0..=r {
                        if let Some(j) = sim.dof_index[dofs[c]] {
                            m.add(i, j, k * h[(r, c)]);
                        }
                    }
                }
            }
        }
        energy += k * elastic;

        let dhat = sim.scenario.dhat;
        let kk = k * self.kappa;
        for &v in &sim.contact_vertices {
            let x = Vector3::new(q[3 * v], q[3 * v + 1], q[3 * v + 2]);
            for hs in &sim.scenario.half_spaces {
                let dist = hs.distance(&x);
                if dist >= dhat {
                    continue;
                }
                let (b, b1, b2) = barrier_unchecked(dist, dhat);
                energy += kk * b;
                for c in 0..3 {
                    gradient[3 * v + c] += kk * b1 * hs.normal[c];
                }
                if let Some(m) = matrix.as_mut() {
                    for r in 0..3 {
                        for c in 0..=r {
                            let (i, j) = (sim.dof_index[3 * v + r].unwrap(), sim.dof_index[3 * v + c].unwrap());
                            m.add(i, j, kk * b2 * hs.normal[r] * hs.normal[c]);
                        }
                    }
                }
            }
        }
        Ok(Evaluation {
            energy,
            gradient,
            hessian: matrix,
        })
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
