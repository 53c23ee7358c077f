//! Reverse-mode derivatives of a simulated trajectory with respect to the
//! material parameters, one linear solve per step against the Hessian kept
//! from the forward pass.

use rayon::prelude::*;

use crate::dynamics::energy::{flatten, neohookean_parts};
use crate::dynamics::{ElementMaterials, Simulator, StepRecord, Stepper, Tape};
use crate::error::{Error, Result};
use crate::materials::{lame_derivatives, MaterialField, Realized};

/// Derivatives with respect to `θ_Y`, `θ_ν`, `θ_ρ` (per element) and `θ_α`
/// (per design element).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradient {
    pub young: Vec<f64>,
    pub poisson: Vec<f64>,
    pub density: Vec<f64>,
    pub occupancy: Vec<f64>,
}

impl ParameterGradient {
    pub fn zeros(field: &MaterialField) -> Self {
        let n = field.num_elements();
        Self {
            young: vec![0.0; n],
            poisson: vec![0.0; n],
            density: vec![0.0; n],
            occupancy: vec![0.0; field.design_elements.len()],
        }
    }

    pub fn add(&mut self, other: &Self) {
        for (a, b) in [
            (&mut self.young, &other.young),
            (&mut self.poisson, &other.poisson),
            (&mut self.density, &other.density),
            (&mut self.occupancy, &other.occupancy),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in [
            &mut self.young,
            &mut self.poisson,
            &mut self.density,
            &mut self.occupancy,
        ] {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Chains a derivative with respect to per-element effective density
    /// `αₑρₑ` into the density and occupancy parameters.
    pub fn add_effective_density(&mut self, field: &MaterialField, realized: &Realized, grad: &[f64]) {
        for e in 0..grad.len() {
            self.density[e] += grad[e] * realized.occupancy[e] * realized.d_density[e];
        }
        for (k, &e) in field.design_elements.iter().enumerate() {
            self.occupancy[k] += grad[e] * realized.density[e] * realized.d_occupancy[e];
        }
    }

    pub fn max_abs(&self) -> f64 {
        [&self.young, &self.poisson, &self.density, &self.occupancy]
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Per-step diagnostics of a backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepNorms {
    pub step: usize,
    pub incoming: f64,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct Backprop {
    pub gradient: ParameterGradient,
    pub solves: usize,
    pub norms: Vec<StepNorms>,
}

impl Backprop {
    pub fn norms_csv(&self) -> String {
        let mut out = String::from("step,incoming_norm,target_norm\n");
        for n in &self.norms {
            out.push_str(&format!("{},{:e},{:e}\n", n.step, n.incoming, n.target));
        }
        out
    }
}

/// Adjoint of the forward simulation at fixed materials.
pub struct Adjoint<'a> {
    stepper: Stepper<'a>,
    field: &'a MaterialField,
    realized: &'a Realized,
    occupancy_floor: f64,
}

impl<'a> Adjoint<'a> {
    pub fn new(
        sim: &'a Simulator,
        mats: &'a ElementMaterials,
        field: &'a MaterialField,
        realized: &'a Realized,
    ) -> Result<Self> {
        field.check_mesh(sim.mesh())?;
        Ok(Self {
            stepper: sim.stepper(mats)?,
            field,
            realized,
            occupancy_floor: field.bounds.occupancy_min,
        })
    }

    pub fn stepper(&self) -> &Stepper<'a> {
        &self.stepper
    }

    /// Given `∂C/∂q_{t+1}`, returns `∂C/∂q̂_t` and this step's contribution
    /// to `∂C/∂θ`. Pinned entries of `incoming` are ignored.
    pub fn backward_timestep(&self, incoming: &[f64], record: &StepRecord) -> Result<(Vec<f64>, ParameterGradient)> {
        let sim = self.stepper.simulator();
        let n = 3 * sim.mesh().num_vertices();
        if incoming.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: incoming.len(),
            });
        }
        let mut grad = ParameterGradient::zeros(self.field);
        let Some(factor) = &record.factor else {
            return Ok((vec![0.0; n], grad));
        };
        let free: Vec<usize> = (0..n).filter(|&d| sim.is_free_dof(d)).collect();
        let rhs: Vec<f64> = free.iter().map(|&d| incoming[d]).collect();
        let solved = factor.solve(&rhs);
        let mut lambda = vec![0.0; n];
        for (k, &d) in free.iter().enumerate() {
            lambda[d] = solved[k];
        }
        let mass = self.stepper.mass();
        let target_grad = mass.mul(&lambda);

        let kw = self.stepper.potential_weight();
        let gravity = sim.scenario().gravity;
        let u: Vec<f64> = (0..n)
            .map(|i| record.q_next[i] - record.q_hat[i] - kw * gravity[i % 3])
            .collect();
        let mats = self.stepper.materials();
        let r = self.realized;
        let floor = self.occupancy_floor;

        // (∂C/∂Y, ∂C/∂ν, ∂C/∂α through stiffness, ∂C/∂(αρ) through mass)
        let partials: Vec<[f64; 4]> = (0..sim.mesh().num_tets())
            .into_par_iter()
            .map(|e| {
                let dofs = element_dofs(sim, e);
                let geom = &sim.geometry()[e];
                let le = nalgebra::SVector::<f64, 12>::from_fn(|k, _| lambda[dofs[k]]);
                let f = sim.deformation_gradient(&record.q_next, e);
                let parts = neohookean_parts(&f);
                let a_mu = le.dot(&(geom.dfdx.transpose() * flatten(&parts.stress_mu)));
                let a_lambda = le.dot(&(geom.dfdx.transpose() * flatten(&parts.stress_lambda)));
                let vs = geom.volume * mats.stiffness[e];
                let (dmu_dy, dl_dy, dmu_dn, dl_dn) = lame_derivatives(r.young[e], r.poisson[e]);
                let d_young = -kw * vs * (dmu_dy * a_mu + dl_dy * a_lambda);
                let d_poisson = -kw * vs * (dmu_dn * a_mu + dl_dn * a_lambda);
                let alpha = r.occupancy[e];
                let d_alpha = if alpha >= floor {
                    -kw * geom.volume * 3.0 * alpha * alpha * (mats.mu[e] * a_mu + mats.lambda[e] * a_lambda)
                } else {
                    0.0
                };
                let d_mass = -geom.volume / 20.0 * mass.element_bilinear(e, &lambda, &u);
                [d_young, d_poisson, d_alpha, d_mass]
            })
            .collect();

        for (e, p) in partials.iter().enumerate() {
            grad.young[e] = p[0] * r.d_young[e];
            grad.poisson[e] = p[1] * r.d_poisson[e];
        }
        // the default barrier stiffness scales with total mass
        let dk = self.stepper.kappa_per_mass();
        let d_kappa = if dk != 0.0 {
            -kw * dk * dot(&lambda, &self.stepper.contact_gradient(&record.q_next))
        } else {
            0.0
        };
        let d_eff: Vec<f64> = partials
            .iter()
            .zip(sim.geometry())
            .map(|(p, g)| p[3] + d_kappa * g.volume)
            .collect();
        grad.add_effective_density(self.field, r, &d_eff);
        for (k, &e) in self.field.design_elements.iter().enumerate() {
            grad.occupancy[k] += partials[e][2] * r.d_occupancy[e];
        }
        Ok((target_grad, grad))
    }

    /// Walks the tape backwards from `∂C/∂q_N`.
    pub fn backprop(&self, tape: &Tape, final_gradient: &[f64]) -> Result<Backprop> {
        let n = 3 * self.stepper.simulator().mesh().num_vertices();
        if final_gradient.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: final_gradient.len(),
            });
        }
        let steps = tape.records.len();
        // adjoint of state s lives at index s
        let mut state_grads = vec![vec![0.0; n]; steps + 1];
        state_grads[steps] = final_gradient.to_vec();
        let mut total = ParameterGradient::zeros(self.field);
        let mut solves = 0;
        let mut norms = Vec::with_capacity(steps);
        const COEFF: [f64; 4] = [24.0 / 9.0, -22.0 / 9.0, 8.0 / 9.0, -1.0 / 9.0];
        for t in (0..steps).rev() {
            let incoming = std::mem::take(&mut state_grads[t + 1]);
            let record = &tape.records[t];
            let (target, grad) = self.backward_timestep(&incoming, record)?;
            if record.factor.is_some() {
                solves += 1;
            }
            total.add(&grad);
            norms.push(StepNorms {
                step: t,
                incoming: l2(&incoming),
                target: l2(&target),
            });
            // states before q_1 are the initial condition and its bootstrap
            for (k, c) in COEFF.iter().enumerate() {
                if t >= k + 1 {
                    let s = t - k;
                    state_grads[s].iter_mut().zip(&target).for_each(|(g, x)| *g += c * x);
                }
            }
        }
        norms.reverse();
        Ok(Backprop {
            gradient: total,
            solves,
            norms,
        })
    }
}

fn element_dofs(sim: &Simulator, e: usize) -> [usize; 12] {
    let tet = &sim.mesh().tets()[e];
    std::array::from_fn(|k| 3 * tet[k / 3] + k % 3)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
