use nalgebra::Vector3;

use super::model::{dot, ElementMaterials, Simulator, Stepper};
use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::SkylineCholesky;

/// Position history `[q_n, q_{n−1}, q_{n−2}, q_{n−3}]` at time `t_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub history: [Vec<f64>; 4],
    pub step: usize,
    pub time: f64,
}

/// `q̂ = (24q_n − 22q_{n−1} + 8q_{n−2} − q_{n−3})/9`.
pub fn inertia_target(state: &SimState) -> Vec<f64> {
    let [a, b, c, d] = &state.history;
    (0..a.len())
        .map(|i| (24.0 * a[i] - 22.0 * b[i] + 8.0 * c[i] - d[i]) / 9.0)
        .collect()
}

impl SimState {
    pub fn current(&self) -> &[f64] {
        &self.history[0]
    }

    pub fn advance(&mut self, q: Vec<f64>, timestep: f64) {
        self.history.rotate_right(1);
        self.history[0] = q;
        self.step += 1;
        self.time = self.step as f64 * timestep;
    }
}

/// Converged step with the Hessian factor at the returned state.
#[derive(Debug, Clone)]
pub struct StepSolution {
    pub q: Vec<f64>,
    /// `None` when every dof is pinned.
    pub factor: Option<SkylineCholesky>,
    pub iterations: usize,
    /// Energy at every accepted iterate, starting with the initial guess.
    pub energies: Vec<f64>,
}

/// Data the adjoint needs from one forward step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub q_hat: Vec<f64>,
    pub q_next: Vec<f64>,
    pub factor: Option<SkylineCholesky>,
}

#[derive(Debug, Clone)]
pub struct Tape {
    pub records: Vec<StepRecord>,
}

impl Simulator {
    /// History on the ballistic parabola through the initial state:
    /// `q_{−k} = q₀ − k·h·v₀ + ½(kh)²·a_g`; pinned vertices follow their
    /// prescribed motion.
    pub fn initial_state(&self) -> SimState {
        let s = &self.scenario;
        let h = s.timestep;
        let history = std::array::from_fn(|k| {
            let t = k as f64 * h;
            let shift: Vector3<f64> = -s.velocity * t + s.gravity * (0.5 * t * t);
            let mut q: Vec<f64> = self.initial.iter().enumerate().map(|(i, x)| x + shift[i % 3]).collect();
            self.apply_pins(&mut q, -t);
            q
        });
        SimState {
            history,
            step: 0,
            time: 0.0,
        }
    }

    pub fn simulate(&self, mats: &ElementMaterials) -> Result<Trajectory> {
        Ok(self.stepper(mats)?.run(false)?.0)
    }

    pub fn simulate_recorded(&self, mats: &ElementMaterials) -> Result<(Trajectory, Tape)> {
        let (traj, tape) = self.stepper(mats)?.run(true)?;
        Ok((traj, tape.expect("recording requested")))
    }
}

impl Stepper<'_> {
    pub fn run(&self, record: bool) -> Result<(Trajectory, Option<Tape>)> {
        let sim = self.sim;
        let h = sim.scenario.timestep;
        let mut state = sim.initial_state();
        let mut traj = Trajectory::new(sim.mesh.num_vertices(), h);
        traj.push(state.current().to_vec());
        let mut records = Vec::new();
        for step in 0..sim.scenario.steps {
            let q_hat = inertia_target(&state);
            let sol = self.solve_with(&state, &q_hat, record).map_err(|e| Error::Step {
                step,
                source: Box::new(e),
            })?;
            log::trace!("step {step}: {} newton iterations", sol.iterations);
            traj.push(sol.q.clone());
            if record {
                records.push(StepRecord {
                    q_hat,
                    q_next: sol.q.clone(),
                    factor: sol.factor,
                });
            }
            state.advance(sol.q, h);
        }
        Ok((traj, record.then_some(Tape { records })))
    }

    /// Minimizes the step energy from `state` with feasibility-filtered,
    /// backtracking projected Newton on the free dofs.
    pub fn solve(&self, state: &SimState, q_hat: &[f64]) -> Result<StepSolution> {
        self.solve_with(state, q_hat, false)
    }

    /// With `exact_hessian`, the returned factor is of the unprojected
    /// Hessian at the solution whenever that is positive definite, which
    /// makes the implicit derivative exact.
    pub fn solve_with(&self, state: &SimState, q_hat: &[f64], exact_hessian: bool) -> Result<StepSolution> {
        let sim = self.sim;
        let opts = &sim.scenario.newton;
        let t_next = (state.step + 1) as f64 * sim.scenario.timestep;

        let mut q = q_hat.to_vec();
        sim.apply_pins(&mut q, t_next);
        if sim.free_dofs.is_empty() {
            return Ok(StepSolution {
                q,
                factor: None,
                iterations: 0,
                energies: Vec::new(),
            });
        }
        if !(self.min_clearance(&q) > 0.0) {
            q = state.current().to_vec();
            sim.apply_pins(&mut q, t_next);
        }

        if let Some(e) = self.energy(&q, q_hat).err() {
            return Err(e);
        }
        let (mut energy, mut scale) = self.energy_unchecked(&q, q_hat);
        let mut energies = vec![energy];
        for iteration in 0..opts.max_iterations {
            let ev = self.evaluate(&q, q_hat, true, true)?;
            let g: Vec<f64> = sim.free_dofs.iter().map(|&d| ev.gradient[d]).collect();
            let gnorm = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let factor = ev.hessian.expect("hessian requested").factor()?;
            if gnorm <= self.tolerance {
                let factor = if exact_hessian {
                    self.exact_factor(&q, q_hat, factor)?
                } else {
                    factor
                };
                return Ok(StepSolution {
                    q,
                    factor: Some(factor),
                    iterations: iteration,
                    energies,
                });
            }
            let p: Vec<f64> = factor.solve(&g).into_iter().map(|x| -x).collect();
            let slope = dot(&g, &p);
            // the predicted decrease is below what the energy can resolve
            let stalled = -slope <= 1e3 * f64::EPSILON * scale;
            if stalled {
                log::debug!("newton stalled at round-off, |g| = {gnorm:e}");
                let factor = if exact_hessian {
                    self.exact_factor(&q, q_hat, factor)?
                } else {
                    factor
                };
                return Ok(StepSolution {
                    q,
                    factor: Some(factor),
                    iterations: iteration,
                    energies,
                });
            }

            let mut full_p = vec![0.0; q.len()];
            for (k, &d) in sim.free_dofs.iter().enumerate() {
                full_p[d] = p[k];
            }
            let mut t = self.step_limit(&q, &full_p).min(1.0);
            let accepted = loop {
                let trial: Vec<f64> = q.iter().zip(&full_p).map(|(x, d)| x + t * d).collect();
                if self.min_clearance(&trial) > 0.0 {
                    let (e, sc) = self.energy_unchecked(&trial, q_hat);
                    if e <= energy + 1e-4 * t * slope {
                        break Some((trial, e, sc));
                    }
                }
                t *= 0.5;
                if t < opts.min_step {
                    break None;
                }
            };
            match accepted {
                Some((trial, e, sc)) => {
                    q = trial;
                    energy = e;
                    scale = sc;
                    energies.push(e);
                }
                None => {
                    return Err(Error::LineSearch {
                        iteration,
                        dump: format!(
                            "energy {energy:e}, |g|inf {gnorm:e}, slope {slope:e}, tolerance {:e}, energies {energies:?}",
                            self.tolerance
                        ),
                    });
                }
            }
        }
        let ev = self.evaluate(&q, q_hat, false, true)?;
        let gnorm = sim.free_dofs.iter().fold(0.0f64, |m, &d| m.max(ev.gradient[d].abs()));
        Err(Error::NoConvergence {
            iterations: opts.max_iterations,
            residual: gnorm,
        })
    }

    fn exact_factor(&self, q: &[f64], q_hat: &[f64], projected: SkylineCholesky) -> Result<SkylineCholesky> {
        let ev = self.evaluate(q, q_hat, true, false)?;
        match ev.hessian.expect("hessian requested").factor() {
            Ok(f) => Ok(f),
            Err(_) => {
                log::debug!("indefinite Hessian at the solution, keeping the projected one");
                Ok(projected)
            }
        }
    }

    /// Largest step along `p` keeping every contact vertex at least
    /// `1 − fraction` of its clearance away from each plane.
    pub fn step_limit(&self, q: &[f64], p: &[f64]) -> f64 {
        let sim = self.sim;
        let frac = sim.scenario.newton.feasibility_fraction;
        let mut t = f64::INFINITY;
        for &v in &sim.contact_vertices {
            let x = Vector3::new(q[3 * v], q[3 * v + 1], q[3 * v + 2]);
            let dx = Vector3::new(p[3 * v], p[3 * v + 1], p[3 * v + 2]);
            for hs in &sim.scenario.half_spaces {
                let rate = hs.normal.dot(&dx);
                if rate < 0.0 {
                    t = t.min(frac * hs.distance(&x) / -rate);
                }
            }
        }
        t
    }
}
