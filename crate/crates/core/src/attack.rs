//! Adversarial material optimization: maximize the deformable-trajectory
//! difference to a reference object while holding its moments of mass, then
//! round occupancy to 0/1 and re-fit density.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{Adjoint, ParameterGradient};
use crate::dynamics::{MassMatrix, Simulator, Trajectory};
use crate::error::{Error, Result};
use crate::materials::{value_to_param, MaterialBounds, MaterialField, UniformMaterial};
use crate::mesh::{
    default_gamma, face_connected_components, MomentScale, MomentVector, MomentsOperator, SmoothingOperator, TetMesh,
    MOMENT_LABELS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 5e-2,
            beta1: 0.7,
            beta2: 0.95,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum CostMode {
    /// Maximize the mass-weighted distance between final states.
    Undirected,
    /// Drive the final center of mass coordinate to `target`.
    Directed { axis: Axis, target: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefitConfig {
    pub threshold: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Relative error above which the re-fit is reported as failed.
    pub failure: f64,
}

impl Default for RefitConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            tolerance: 1e-4,
            max_iterations: 5000,
            failure: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Weight of the normalized moment mismatch.
    pub beta: f64,
    pub adam: AdamConfig,
    pub iterations: usize,
    /// Smoothing strength; `None` picks a mesh-based default, 0 disables.
    pub gamma: Option<f64>,
    pub cost: CostMode,
    pub seed: u64,
    /// Half-width of the uniform perturbation added to `θ_α` before the
    /// first update.
    pub init_noise: f64,
    /// Starting occupancy of design elements; their density and stiffness are
    /// scaled so the starting object equals the reference.
    pub initial_occupancy: f64,
    pub refit: RefitConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            beta: 1e4,
            adam: AdamConfig::default(),
            iterations: 200,
            gamma: None,
            cost: CostMode::Undirected,
            seed: 0,
            init_noise: 0.1,
            initial_occupancy: 0.5,
            refit: RefitConfig::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let ok = self.beta >= 0.0
            && self.beta.is_finite()
            && a.beta1 > 0.0
            && a.beta1 < 1.0
            && a.beta2 > 0.0
            && a.beta2 < 1.0
            && a.step_size > 0.0
            && a.step_size.is_finite()
            && a.epsilon > 0.0
            && self.gamma.is_none_or(|g| g >= 0.0 && g.is_finite())
            && self.init_noise >= 0.0
            && self.initial_occupancy > 0.0
            && self.initial_occupancy < 1.0
            && self.refit.threshold > 0.0
            && self.refit.threshold < 1.0
            && self.refit.tolerance > 0.0
            && self.refit.failure >= self.refit.tolerance;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "invalid attack configuration {self:?}"
            )));
        }
        Ok(())
    }
}

/// A cost on the final state together with its partials.
#[derive(Debug, Clone)]
pub struct TrajectoryCost {
    pub value: f64,
    /// With respect to the final adversarial state.
    pub state_gradient: Vec<f64>,
    /// With respect to per-element effective density, through the mass matrix.
    pub density_gradient: Vec<f64>,
}

/// `−Δqᵀ M Δq` with `Δq = q_adv − q_ref`.
pub fn undirected_cost(q_adv: &[f64], q_ref: &[f64], mass: &MassMatrix, volumes: &[f64]) -> Result<TrajectoryCost> {
    check_len(mass.dim(), q_adv.len())?;
    check_len(mass.dim(), q_ref.len())?;
    let dq: Vec<f64> = q_adv.iter().zip(q_ref).map(|(a, b)| a - b).collect();
    let mdq = mass.mul(&dq);
    let value = -mdq.iter().zip(&dq).map(|(a, b)| a * b).sum::<f64>();
    Ok(TrajectoryCost {
        value,
        state_gradient: mdq.iter().map(|x| -2.0 * x).collect(),
        density_gradient: volumes
            .iter()
            .enumerate()
            .map(|(e, v)| -v / 20.0 * mass.element_bilinear(e, &dq, &dq))
            .collect(),
    })
}

/// `m₀ (c − target)²` for the final center-of-mass coordinate `c`.
pub fn directed_cost(
    q_adv: &[f64],
    axis: Axis,
    target: f64,
    mass: &MassMatrix,
    volumes: &[f64],
) -> Result<TrajectoryCost> {
    check_len(mass.dim(), q_adv.len())?;
    let a = axis.index();
    let c = mass.center_of_mass(q_adv)[a];
    let ones: Vec<f64> = (0..q_adv.len()).map(|i| if i % 3 == a { 1.0 } else { 0.0 }).collect();
    let m_ones = mass.mul(&ones);
    let m0 = mass.total_mass();
    Ok(TrajectoryCost {
        value: m0 * (c - target).powi(2),
        state_gradient: m_ones.iter().map(|x| 2.0 * (c - target) * x).collect(),
        density_gradient: volumes
            .iter()
            .enumerate()
            .map(|(e, v)| {
                let ds = v / 20.0 * mass.element_bilinear(e, &ones, q_adv);
                2.0 * (c - target) * ds + (target * target - c * c) * v
            })
            .collect(),
    })
}

#[derive(Debug, Clone)]
pub struct MomentPenalty {
    pub value: f64,
    /// With respect to per-element effective density.
    pub density_gradient: Vec<f64>,
}

/// `β Σₖ ((adv − ref)ₖ / scaleₖ)²`.
pub fn moment_penalty(
    reference: &MomentVector,
    adversarial: &MomentVector,
    beta: f64,
    scale: &MomentScale,
    operator: &MomentsOperator,
) -> MomentPenalty {
    let (r, a) = (reference.to_array(), adversarial.to_array());
    let d: [f64; 10] = std::array::from_fn(|k| (a[k] - r[k]) / scale.scale[k]);
    let value = beta * d.iter().map(|x| x * x).sum::<f64>();
    let w: [f64; 10] = std::array::from_fn(|k| 2.0 * beta * d[k] / scale.scale[k]);
    MomentPenalty {
        value,
        density_gradient: operator.apply_transpose(&w),
    }
}

/// Bias-corrected ADAM.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, dim: usize) -> Self {
        Self {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// Moves `x` against `grad` and returns the applied update.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        let AdamConfig {
            step_size,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let mut update = vec![0.0; x.len()];
        for i in 0..x.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            update[i] = -step_size * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + epsilon);
            x[i] += update[i];
        }
        update
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub iteration: usize,
    pub total: f64,
    /// Unnormalized trajectory term.
    pub trajectory: f64,
    pub penalty: f64,
}

pub const COST_HISTORY_HEADER: &str = "iteration,total,trajectory,penalty";

/// Everything an attack produced.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub reference: MaterialField,
    pub optimized: MaterialField,
    pub rounded: Option<MaterialField>,
    pub history: Vec<CostRecord>,
    pub reference_moments: MomentVector,
    pub optimized_moments: MomentVector,
    pub rounded_moments: Option<MomentVector>,
    pub refit: Option<RefitReport>,
    /// Set when the re-fit stopped above its failure threshold.
    pub refit_error: Option<String>,
    pub reference_trajectory: Trajectory,
    /// Trajectory of the rounded field when present, else of the optimized one.
    pub adversarial_trajectory: Trajectory,
    /// Number of smoothing applications (one per update when enabled).
    pub smoothing_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefitReport {
    pub iterations: usize,
    pub relative_error: f64,
    pub components: Vec<Vec<usize>>,
}

/// Reference object as a parameter field: uniform materials, no design
/// elements.
pub fn reference_field(mesh: &TetMesh, bounds: MaterialBounds, reference: &UniformMaterial) -> Result<MaterialField> {
    MaterialField::with_design_elements(
        mesh,
        bounds,
        reference.young,
        reference.poisson,
        reference.density,
        1.0,
        vec![],
    )
}

/// Starting field: reference values on boundary elements; on interior
/// elements occupancy `α₀`, density `ρ/α₀` and stiffness `Y/α₀³` (clamped to
/// the bounds), so `αρ` and `α³Y` reproduce the reference.
pub fn initial_field(
    mesh: &TetMesh,
    bounds: MaterialBounds,
    reference: &UniformMaterial,
    alpha0: f64,
) -> Result<MaterialField> {
    let mut field = MaterialField::uniform(
        mesh,
        bounds,
        reference.young,
        reference.poisson,
        reference.density,
        alpha0,
    )?;
    let inside = |x: f64, lo: f64, hi: f64| {
        let pad = 1e-9 * (hi - lo);
        x.clamp(lo + pad, hi - pad)
    };
    let b = &field.bounds;
    let ty = value_to_param(
        inside(reference.young / alpha0.powi(3), b.young_min, b.young_max),
        b.young_min,
        b.young_max,
    )?;
    let tr = value_to_param(
        inside(reference.density / alpha0, b.density_min, b.density_max),
        b.density_min,
        b.density_max,
    )?;
    for &e in &field.design_elements.clone() {
        field.theta_young[e] = ty;
        field.theta_density[e] = tr;
    }
    Ok(field)
}

/// The optimization loop.
pub struct Attack<'a> {
    sim: &'a Simulator,
    config: AttackConfig,
    operator: MomentsOperator,
    smoothing: Option<SmoothingOperator>,
    reference: MaterialField,
    reference_moments: MomentVector,
    scale: MomentScale,
    reference_trajectory: Trajectory,
    /// `m₀ R²` of the reference; divides the trajectory term.
    normalization: f64,
}

struct Evaluated {
    record: CostRecord,
    gradient: ParameterGradient,
    trajectory: Trajectory,
}

impl<'a> Attack<'a> {
    pub fn new(sim: &'a Simulator, reference: MaterialField, config: AttackConfig) -> Result<Self> {
        config.validate()?;
        let mesh = sim.mesh();
        reference.check_mesh(mesh)?;
        let operator = MomentsOperator::new(mesh);
        let realized = reference.realize();
        let reference_moments = operator.apply(&realized.effective_density)?;
        let scale = MomentScale::from_reference(&reference_moments);
        let mats = sim.materials(&realized, reference.bounds.occupancy_min)?;
        let reference_trajectory = sim.simulate(&mats)?;
        let smoothing = match config.gamma {
            Some(g) if g == 0.0 => None,
            Some(g) => Some(SmoothingOperator::new(mesh, g)?),
            None => Some(SmoothingOperator::new(mesh, default_gamma(mesh))?),
        };
        let normalization = scale.scale[4];
        Ok(Self {
            sim,
            config,
            operator,
            smoothing,
            reference,
            reference_moments,
            scale,
            reference_trajectory,
            normalization,
        })
    }

    pub fn reference_moments(&self) -> &MomentVector {
        &self.reference_moments
    }

    pub fn scale(&self) -> &MomentScale {
        &self.scale
    }

    pub fn reference_trajectory(&self) -> &Trajectory {
        &self.reference_trajectory
    }

    /// Total cost and its θ-gradient at `field`.
    fn evaluate(&self, field: &MaterialField, iteration: usize, gradient: bool) -> Result<Evaluated> {
        let sim = self.sim;
        let mesh = sim.mesh();
        let realized = field.realize();
        let mats = sim.materials(&realized, field.bounds.occupancy_min)?;
        let (trajectory, tape) = if gradient {
            let (t, tape) = sim.simulate_recorded(&mats)?;
            (t, Some(tape))
        } else {
            (sim.simulate(&mats)?, None)
        };
        let mass = MassMatrix::new(mesh, &mats.density)?;
        let q_end = trajectory.last().expect("trajectory has the initial state");
        let traj_cost = match self.config.cost {
            CostMode::Undirected => undirected_cost(
                q_end,
                self.reference_trajectory.last().expect("reference trajectory"),
                &mass,
                mesh.volumes(),
            )?,
            CostMode::Directed { axis, target } => directed_cost(q_end, axis, target, &mass, mesh.volumes())?,
        };
        let moments = self.operator.apply(&realized.effective_density)?;
        let penalty = moment_penalty(
            &self.reference_moments,
            &moments,
            self.config.beta,
            &self.scale,
            &self.operator,
        );
        let record = CostRecord {
            iteration,
            total: traj_cost.value / self.normalization + penalty.value,
            trajectory: traj_cost.value,
            penalty: penalty.value,
        };

        let mut grad = ParameterGradient::zeros(field);
        if let Some(tape) = tape {
            let adjoint = Adjoint::new(sim, &mats, field, &realized)?;
            let incoming: Vec<f64> = traj_cost
                .state_gradient
                .iter()
                .map(|g| g / self.normalization)
                .collect();
            grad = adjoint.backprop(&tape, &incoming)?.gradient;
            let d_eff: Vec<f64> = traj_cost
                .density_gradient
                .iter()
                .zip(&penalty.density_gradient)
                .map(|(t, p)| t / self.normalization + p)
                .collect();
            grad.add_effective_density(field, &realized, &d_eff);
        }
        Ok(Evaluated {
            record,
            gradient: grad,
            trajectory,
        })
    }

    /// Total cost at `field` and its θ-gradient before smoothing.
    pub fn cost_and_gradient(&self, field: &MaterialField) -> Result<(CostRecord, ParameterGradient)> {
        let ev = self.evaluate(field, 0, true)?;
        Ok((ev.record, ev.gradient))
    }

    /// Smooths the occupancy gradient through the all-element field.
    fn smooth_occupancy(&self, field: &MaterialField, grad: &mut [f64]) -> Result<()> {
        let Some(op) = &self.smoothing else { return Ok(()) };
        let mut full = vec![0.0; field.num_elements()];
        for (k, &e) in field.design_elements.iter().enumerate() {
            full[e] = grad[k];
        }
        let smoothed = op.apply(&full)?;
        for (k, &e) in field.design_elements.iter().enumerate() {
            grad[k] = smoothed[e];
        }
        Ok(())
    }

    /// Runs ADAM from `start` and returns the optimized field, its cost
    /// history (one row per update plus the final state) and the number of
    /// smoothing calls.
    pub fn optimize(&self, start: MaterialField) -> Result<(MaterialField, Vec<CostRecord>, Trajectory, usize)> {
        start.check_mesh(self.sim.mesh())?;
        let mut field = start;
        let n = field.num_elements();
        let nd = field.design_elements.len();
        if self.config.iterations > 0 && self.config.init_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            let w = self.config.init_noise;
            field
                .theta_occupancy
                .iter_mut()
                .for_each(|t| *t += rng.gen_range(-w..=w));
        }
        let mut adam = Adam::new(self.config.adam, 3 * n + nd);
        let mut history = Vec::with_capacity(self.config.iterations + 1);
        let mut calls = 0;
        let abort = |iteration: usize, field: &MaterialField, e: Error| Error::AttackAborted {
            iteration,
            materials_json: field.to_json(),
            source: Box::new(e),
        };
        for it in 0..self.config.iterations {
            let ev = self.evaluate(&field, it, true).map_err(|e| abort(it, &field, e))?;
            log::info!(
                "iteration {it}: total {:.6e} trajectory {:.6e} penalty {:.6e}",
                ev.record.total,
                ev.record.trajectory,
                ev.record.penalty
            );
            history.push(ev.record);
            let mut g = ev.gradient;
            if self.smoothing.is_some() && nd > 0 {
                self.smooth_occupancy(&field, &mut g.occupancy)?;
                calls += 1;
            }
            let mut x = pack(&field);
            let flat: Vec<f64> = [g.young, g.poisson, g.density, g.occupancy].concat();
            adam.step(&mut x, &flat);
            unpack(&mut field, &x);
        }
        let it = self.config.iterations;
        let last = self.evaluate(&field, it, false).map_err(|e| abort(it, &field, e))?;
        history.push(last.record);
        Ok((field, history, last.trajectory, calls))
    }

    /// Optimizes from [`initial_field`], rounds, re-fits and simulates the
    /// result. A re-fit above the failure threshold still yields a result;
    /// check [`AttackResult::refit_error`].
    pub fn run(&self, reference_material: &UniformMaterial) -> Result<AttackResult> {
        let mesh = self.sim.mesh();
        let start = initial_field(
            mesh,
            self.reference.bounds,
            reference_material,
            self.config.initial_occupancy,
        )?;
        let (optimized, history, _, smoothing_calls) = self.optimize(start)?;
        let optimized_moments = self.operator.apply(&optimized.realize().effective_density)?;
        let (rounded, report, refit_error) =
            match round_and_refit(&optimized, mesh, &self.reference_moments, &self.config.refit) {
                Ok((f, r)) => (f, r, None),
                Err(RefitError { field, report, error }) => (field, report, Some(error.to_string())),
            };
        let realized = rounded.realize();
        let mats = self.sim.materials(&realized, rounded.bounds.occupancy_min)?;
        let adversarial_trajectory = self.sim.simulate(&mats)?;
        Ok(AttackResult {
            reference: self.reference.clone(),
            optimized,
            rounded_moments: Some(self.operator.apply(&realized.effective_density)?),
            rounded: Some(rounded),
            history,
            reference_moments: self.reference_moments,
            optimized_moments,
            refit: Some(report),
            refit_error,
            reference_trajectory: self.reference_trajectory.clone(),
            adversarial_trajectory,
            smoothing_calls,
        })
    }
}

fn pack(field: &MaterialField) -> Vec<f64> {
    [
        field.theta_young.as_slice(),
        &field.theta_poisson,
        &field.theta_density,
        &field.theta_occupancy,
    ]
    .concat()
}

fn unpack(field: &mut MaterialField, x: &[f64]) {
    let n = field.num_elements();
    field.theta_young.copy_from_slice(&x[..n]);
    field.theta_poisson.copy_from_slice(&x[n..2 * n]);
    field.theta_density.copy_from_slice(&x[2 * n..3 * n]);
    field.theta_occupancy.copy_from_slice(&x[3 * n..]);
}

/// A re-fit that stopped above the failure threshold.
#[derive(Debug)]
pub struct RefitError {
    pub field: MaterialField,
    pub report: RefitReport,
    pub error: Error,
}

/// Snaps design occupancy to 0/1 at the threshold, then fits `θ_ρ` alone by
/// Barzilai–Borwein gradient descent until the moments match the reference.
pub fn round_and_refit(
    field: &MaterialField,
    mesh: &TetMesh,
    reference: &MomentVector,
    config: &RefitConfig,
) -> std::result::Result<(MaterialField, RefitReport), RefitError> {
    let fail = |field: MaterialField, error: Error| RefitError {
        field,
        report: RefitReport {
            iterations: 0,
            relative_error: f64::NAN,
            components: vec![],
        },
        error,
    };
    if let Err(e) = field.check_mesh(mesh) {
        return Err(fail(field.clone(), e));
    }
    let mut out = field.clone();
    let realized = field.realize();
    let snapped: Vec<f64> = field
        .design_elements
        .iter()
        .map(|&e| {
            if realized.occupancy[e] >= config.threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    out.snapped_occupancy = Some(snapped);

    let operator = MomentsOperator::new(mesh);
    let scale = MomentScale::from_reference(reference);
    let b = out.bounds;
    let objective = |theta: &[f64], alpha: &[f64]| -> (f64, Vec<f64>, f64) {
        let (rho, drho): (Vec<f64>, Vec<f64>) = theta
            .iter()
            .map(|&t| {
                (
                    crate::materials::param_to_value(t, b.density_min, b.density_max),
                    crate::materials::param_derivative(t, b.density_min, b.density_max),
                )
            })
            .unzip();
        let eff: Vec<f64> = rho.iter().zip(alpha).map(|(r, a)| r * a).collect();
        let m = operator.apply(&eff).expect("sizes checked");
        let p = moment_penalty(reference, &m, 1.0, &scale, &operator);
        let g = p
            .density_gradient
            .iter()
            .zip(alpha)
            .zip(&drho)
            .map(|((g, a), d)| g * a * d)
            .collect();
        (p.value, g, scale.relative_frobenius(reference, &m))
    };
    let alpha = out.realize().occupancy;
    let mut theta = out.theta_density.clone();
    let (_, mut g, mut err) = objective(&theta, &alpha);
    let mut iterations = 0;
    let mut step = 1e-2 / norm(&g).max(f64::MIN_POSITIVE);
    while err > config.tolerance && iterations < config.max_iterations {
        let next: Vec<f64> = theta.iter().zip(&g).map(|(t, d)| t - step * d).collect();
        let (_, g_next, err_next) = objective(&next, &alpha);
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        if sy > 0.0 {
            step = (ss / sy).clamp(1e-12, 1e12);
        }
        theta = next;
        g = g_next;
        err = err_next;
        iterations += 1;
    }
    out.theta_density = theta;

    let occupied: Vec<bool> = out.realize().occupancy.iter().map(|&a| a > 0.5).collect();
    let components = face_connected_components(mesh, &occupied);
    if components.len() > 1 {
        let sizes: Vec<usize> = components.iter().map(Vec::len).collect();
        log::warn!(
            "occupied elements form {} disconnected components (sizes {sizes:?})",
            components.len()
        );
    }
    let report = RefitReport {
        iterations,
        relative_error: err,
        components,
    };
    if !(err <= config.failure) {
        return Err(RefitError {
            field: out,
            report,
            error: Error::RefitFailed {
                error: err,
                limit: config.failure,
            },
        });
    }
    Ok((out, report))
}

/// Occupied pairs that touch at a vertex but are not face-connected through
/// occupied elements around that vertex.
pub fn corner_only_pairs(mesh: &TetMesh, occupancy: &[f64]) -> usize {
    let occupied: Vec<bool> = occupancy.iter().map(|&a| a > 0.5).collect();
    let nbrs = mesh.face_neighbors();
    let mut pairs = std::collections::BTreeSet::new();
    for star in mesh.vertex_elements() {
        let members: Vec<usize> = star.iter().copied().filter(|&t| occupied[t]).collect();
        // label local face-connected groups
        let mut label = vec![usize::MAX; members.len()];
        let mut groups = 0;
        for s in 0..members.len() {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = groups;
            let mut stack = vec![s];
            while let Some(i) = stack.pop() {
                for (j, &t) in members.iter().enumerate() {
                    if label[j] == usize::MAX && nbrs[members[i]].contains(&t) {
                        label[j] = groups;
                        stack.push(j);
                    }
                }
            }
            groups += 1;
        }
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                if label[i] != label[j] {
                    pairs.insert((members[i].min(members[j]), members[i].max(members[j])));
                }
            }
        }
    }
    pairs.len()
}

impl AttackResult {
    pub fn cost_history_csv(&self) -> String {
        let mut out = format!("{COST_HISTORY_HEADER}\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                r.iteration, r.total, r.trajectory, r.penalty
            ));
        }
        out
    }

    /// Side-by-side moments table in 4-digit scientific notation.
    pub fn moments_table(&self) -> String {
        let mut out = MomentVector::table_header();
        out.push('\n');
        out.push_str(&self.reference_moments.table_row("reference"));
        out.push('\n');
        out.push_str(&self.optimized_moments.table_row("optimized"));
        out.push('\n');
        if let Some(m) = &self.rounded_moments {
            out.push_str(&m.table_row("adversarial"));
            out.push('\n');
        }
        out
    }

    pub fn moments_json(&self) -> serde_json::Value {
        let scale = MomentScale::from_reference(&self.reference_moments);
        let row = |m: &MomentVector| {
            let a = m.to_array();
            let mut obj = serde_json::Map::new();
            for (k, label) in MOMENT_LABELS.iter().enumerate() {
                obj.insert(
                    (*label).into(),
                    serde_json::Value::String(crate::mesh::format_sci(a[k])),
                );
            }
            serde_json::Value::Object(obj)
        };
        let mut rows = vec![
            serde_json::json!({ "label": "reference", "moments": row(&self.reference_moments) }),
            serde_json::json!({ "label": "optimized", "moments": row(&self.optimized_moments) }),
        ];
        if let Some(m) = &self.rounded_moments {
            rows.push(serde_json::json!({
                "label": "adversarial",
                "moments": row(m),
                "relative_errors": scale.relative_errors(&self.reference_moments, m).to_vec(),
                "relative_frobenius": scale.relative_frobenius(&self.reference_moments, m),
            }));
        }
        serde_json::json!({ "rows": rows, "refit": self.refit })
    }

    /// Writes the result artifacts into `dir` (created if missing).
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("materials_reference.json"), self.reference.to_json())?;
        std::fs::write(dir.join("materials_optimized.json"), self.optimized.to_json())?;
        if let Some(r) = &self.rounded {
            std::fs::write(dir.join("materials_rounded.json"), r.to_json())?;
        }
        std::fs::write(dir.join("cost_history.csv"), self.cost_history_csv())?;
        std::fs::write(
            dir.join("moments.json"),
            serde_json::to_string_pretty(&self.moments_json())?,
        )?;
        std::fs::write(dir.join("moments.txt"), self.moments_table())?;
        self.reference_trajectory
            .write_csv(dir.join("trajectory_reference.csv"))?;
        self.adversarial_trajectory
            .write_csv(dir.join("trajectory_adversarial.csv"))?;
        Ok(())
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{fixtures, moments};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn cube() -> TetMesh {
        fixtures::lattice_cube(2, 0.2, Vector3::new(0.1, -0.2, 0.3))
    }

    fn random(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    #[test]
    fn undirected_cost_basics() {
        let mesh = cube();
        let d = vec![1000.0; mesh.num_tets()];
        let mass = MassMatrix::new(&mesh, &d).unwrap();
        let q = mesh.rest_positions();
        let same = undirected_cost(&q, &q, &mass, mesh.volumes()).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(same.state_gradient.iter().all(|&g| g == 0.0));
        let other: Vec<f64> = q.iter().zip(random(q.len(), 1, 1e-2)).map(|(a, b)| a + b).collect();
        let c1 = undirected_cost(&other, &q, &mass, mesh.volumes()).unwrap().value;
        assert!(c1 < 0.0);
        let heavy = MassMatrix::new(&mesh, &vec![2000.0; mesh.num_tets()]).unwrap();
        let c2 = undirected_cost(&other, &q, &heavy, mesh.volumes()).unwrap().value;
        assert_relative_eq!(c2, 2.0 * c1, max_relative = 1e-14);
        assert!(undirected_cost(&other[1..], &q, &mass, mesh.volumes()).is_err());
    }

    #[test]
    fn directed_cost_values() {
        let mesh = fixtures::lattice_cube(2, 1.0, Vector3::new(0.3, 0.0, 0.0));
        let mass = MassMatrix::new(&mesh, &vec![1.0; mesh.num_tets()]).unwrap();
        let q = mesh.rest_positions();
        let at = directed_cost(&q, Axis::X, 0.3, &mass, mesh.volumes()).unwrap().value;
        assert!(at.abs() < 1e-28);
        let off = directed_cost(&q, Axis::X, -0.7, &mass, mesh.volumes()).unwrap().value;
        assert_relative_eq!(off, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn directed_cost_gradients_match_finite_differences() {
        let mesh = cube();
        let d: Vec<f64> = random(mesh.num_tets(), 2, 300.0).iter().map(|x| 1000.0 + x).collect();
        let q: Vec<f64> = mesh
            .rest_positions()
            .iter()
            .zip(random(3 * mesh.num_vertices(), 3, 1e-2))
            .map(|(a, b)| a + b)
            .collect();
        let eval = |q: &[f64], d: &[f64]| {
            let m = MassMatrix::new(&mesh, d).unwrap();
            directed_cost(q, Axis::Y, 0.05, &m, mesh.volumes()).unwrap()
        };
        let c = eval(&q, &d);
        // quadratic in q: central differences are exact up to round-off
        for i in [0, 7, 20] {
            let h = 1e-4;
            let mut p = q.clone();
            p[i] += h;
            let mut m = q.clone();
            m[i] -= h;
            let fd = (eval(&p, &d).value - eval(&m, &d).value) / (2.0 * h);
            assert!((fd - c.state_gradient[i]).abs() <= 1e-8 * c.state_gradient[i].abs().max(1e-3));
        }
        for e in [0, 5, 11] {
            let h = 1e-3;
            let mut p = d.clone();
            p[e] += h;
            let mut m = d.clone();
            m[e] -= h;
            let fd = (eval(&q, &p).value - eval(&q, &m).value) / (2.0 * h);
            assert!(
                (fd - c.density_gradient[e]).abs() <= 1e-6 * c.density_gradient[e].abs().max(1e-6),
                "{fd} {}",
                c.density_gradient[e]
            );
        }
    }

    #[test]
    fn undirected_density_gradient_matches_finite_differences() {
        let mesh = cube();
        let d: Vec<f64> = random(mesh.num_tets(), 4, 300.0).iter().map(|x| 1000.0 + x).collect();
        let q0 = mesh.rest_positions();
        let q: Vec<f64> = q0.iter().zip(random(q0.len(), 5, 1e-2)).map(|(a, b)| a + b).collect();
        let eval = |d: &[f64]| undirected_cost(&q, &q0, &MassMatrix::new(&mesh, d).unwrap(), mesh.volumes()).unwrap();
        let c = eval(&d);
        for e in 0..mesh.num_tets() {
            let mut p = d.clone();
            p[e] += 1.0;
            // linear in density
            assert_relative_eq!(eval(&p).value - c.value, c.density_gradient[e], max_relative = 1e-9);
        }
    }

    #[test]
    fn moment_penalty_values() {
        let mesh = cube();
        let op = MomentsOperator::new(&mesh);
        let m = moments(&mesh, &vec![1.0; mesh.num_tets()]).unwrap();
        let unit = MomentScale::unit();
        assert_eq!(moment_penalty(&m, &m, 3.0, &unit, &op).value, 0.0);
        let mut a = m.to_array();
        a[4] += 2.0;
        let shifted = MomentVector::from_array(a);
        assert_eq!(moment_penalty(&m, &shifted, 0.0, &unit, &op).value, 0.0);
        assert_relative_eq!(
            moment_penalty(&m, &shifted, 0.5, &unit, &op).value,
            2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn moment_penalty_gradient_matches_finite_differences() {
        let mesh = cube();
        let op = MomentsOperator::new(&mesh);
        let reference = moments(&mesh, &vec![1000.0; mesh.num_tets()]).unwrap();
        let scale = MomentScale::from_reference(&reference);
        let d: Vec<f64> = random(mesh.num_tets(), 6, 200.0).iter().map(|x| 1000.0 + x).collect();
        let eval = |d: &[f64]| moment_penalty(&reference, &op.apply(d).unwrap(), 7.0, &scale, &op);
        let p = eval(&d);
        for e in 0..mesh.num_tets() {
            let h = 1e-2;
            let mut a = d.clone();
            a[e] += h;
            let mut b = d.clone();
            b[e] -= h;
            let fd = (eval(&a).value - eval(&b).value) / (2.0 * h);
            assert_relative_eq!(fd, p.density_gradient[e], max_relative = 1e-7);
        }
    }

    #[test]
    fn adam_first_steps_by_hand() {
        let mut adam = Adam::new(AdamConfig::default(), 3);
        let mut x = vec![1.0, 2.0, 3.0];
        let g = [0.3, -2.0, 0.0];
        let u = adam.step(&mut x, &g);
        // m̂ = g, v̂ = g², so the first update is −lr·g/(|g| + ε)
        assert_relative_eq!(u[0], -0.05 * 0.3 / (0.3 + 1e-8), max_relative = 1e-15);
        assert_relative_eq!(u[1], 0.05 * 2.0 / (2.0 + 1e-8), max_relative = 1e-15);
        assert_eq!(u[2], 0.0);
        assert_relative_eq!(x[0], 1.0 - 0.05 * 0.3 / (0.3 + 1e-8), max_relative = 1e-15);

        // second step with gradient 0.1 on the first coordinate
        let u2 = adam.step(&mut x, &[0.1, 0.0, 0.0]);
        let m = 0.7 * (0.3 * 0.3) + 0.3 * 0.1;
        let v: f64 = 0.95 * (0.05 * 0.09) + 0.05 * 0.01;
        let expect = -0.05 * (m / (1.0 - 0.49)) / ((v / (1.0 - 0.9025)).sqrt() + 1e-8);
        assert_relative_eq!(u2[0], expect, max_relative = 1e-13);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::default().validate().is_ok());
        for bad in [
            AttackConfig {
                beta: -1.0,
                ..AttackConfig::default()
            },
            AttackConfig {
                adam: AdamConfig {
                    beta1: 1.0,
                    ..AdamConfig::default()
                },
                ..AttackConfig::default()
            },
            AttackConfig {
                adam: AdamConfig {
                    beta2: 0.0,
                    ..AdamConfig::default()
                },
                ..AttackConfig::default()
            },
            AttackConfig {
                adam: AdamConfig {
                    step_size: 0.0,
                    ..AdamConfig::default()
                },
                ..AttackConfig::default()
            },
            AttackConfig {
                gamma: Some(-1.0),
                ..AttackConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        let parsed: AttackConfig =
            serde_json::from_str(r#"{"iterations": 3, "cost": {"mode": "directed", "axis": "x", "target": 0.5}}"#)
                .unwrap();
        assert_eq!(parsed.iterations, 3);
        assert_eq!(
            parsed.cost,
            CostMode::Directed {
                axis: Axis::X,
                target: 0.5
            }
        );
        assert_eq!(parsed.adam.beta1, 0.7);
        assert!(serde_json::from_str::<AttackConfig>(r#"{"betta": 1}"#).is_err());
    }

    #[test]
    fn initial_field_reproduces_reference() {
        let mesh = fixtures::lattice_cube(3, 1.0, Vector3::zeros());
        let reference = UniformMaterial {
            young: 1e10,
            poisson: 0.3,
            density: 2500.0,
        };
        let f = initial_field(&mesh, MaterialBounds::default(), &reference, 0.5).unwrap();
        assert!(!f.design_elements.is_empty());
        let r = f.realize();
        for e in 0..mesh.num_tets() {
            assert_relative_eq!(r.effective_density[e], 2500.0, max_relative = 1e-12);
            assert_relative_eq!(r.stiffness_scale[e] * r.young[e], 1e10, max_relative = 1e-12);
        }
    }

    #[test]
    fn rounding_threshold() {
        let mesh = fixtures::lattice_cube(3, 1.0, Vector3::zeros());
        let reference = moments(&mesh, &vec![2500.0; mesh.num_tets()]).unwrap();
        let mut f = MaterialField::uniform(&mesh, MaterialBounds::default(), 1e10, 0.3, 2500.0, 0.7).unwrap();
        assert_eq!(f.design_elements.len(), 6);
        let low = value_to_param(0.3, f.bounds.occupancy_min, 1.0).unwrap();
        f.theta_occupancy[0] = low;
        f.theta_occupancy[1] = low;
        let (out, report) = round_and_refit(&f, &mesh, &reference, &RefitConfig::default()).unwrap();
        assert_eq!(
            out.snapped_occupancy.as_deref(),
            Some(&[0.0, 0.0, 1.0, 1.0, 1.0, 1.0][..])
        );
        assert!(report.iterations > 0);
        assert!(report.relative_error <= 1e-4);
        let m = moments(&mesh, &out.realize().effective_density).unwrap();
        assert!(MomentScale::from_reference(&reference).relative_frobenius(&reference, &m) <= 1e-4);
        // Y, ν and θ_α are untouched
        assert_eq!(out.theta_young, f.theta_young);
        assert_eq!(out.theta_poisson, f.theta_poisson);
        assert_eq!(out.theta_occupancy, f.theta_occupancy);
    }

    #[test]
    fn rounded_matching_field_is_unchanged() {
        let mesh = fixtures::lattice_cube(3, 1.0, Vector3::zeros());
        let mut f = MaterialField::uniform(&mesh, MaterialBounds::default(), 1e10, 0.3, 2500.0, 0.7).unwrap();
        f.snapped_occupancy = Some(vec![1.0; 6]);
        let reference = moments(&mesh, &f.realize().effective_density).unwrap();
        let (out, report) = round_and_refit(&f, &mesh, &reference, &RefitConfig::default()).unwrap();
        assert_eq!(out, f);
        assert_eq!(report.iterations, 0);
        assert_eq!(report.components.len(), 1);
    }

    #[test]
    fn unreachable_moments_fail_the_refit() {
        let mesh = fixtures::lattice_cube(3, 1.0, Vector3::zeros());
        let f = MaterialField::uniform(&mesh, MaterialBounds::default(), 1e10, 0.3, 2500.0, 0.7).unwrap();
        // twenty times the mass cannot be reached inside the density bounds
        let reference = moments(&mesh, &vec![50000.0; mesh.num_tets()]).unwrap();
        let err = round_and_refit(
            &f,
            &mesh,
            &reference,
            &RefitConfig {
                max_iterations: 200,
                ..RefitConfig::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err.error, Error::RefitFailed { .. }));
        assert!(err.report.relative_error > 1e-2);
    }

    #[test]
    fn corner_only_pairs_counts_checkerboards() {
        let mesh = fixtures::lattice_cube(2, 1.0, Vector3::zeros());
        let n = mesh.num_tets();
        assert_eq!(corner_only_pairs(&mesh, &vec![1.0; n]), 0);
        assert_eq!(corner_only_pairs(&mesh, &vec![0.0; n]), 0);
        // two tets sharing exactly one vertex, everything else empty
        let tets = mesh.tets();
        let nbrs = mesh.face_neighbors();
        let (a, b) = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .find(|&(a, b)| tets[a].iter().filter(|v| tets[b].contains(v)).count() == 1 && !nbrs[a].contains(&b))
            .unwrap();
        let mut occ = vec![0.0; n];
        occ[a] = 1.0;
        occ[b] = 1.0;
        assert_eq!(corner_only_pairs(&mesh, &occ), 1);
    }
}
