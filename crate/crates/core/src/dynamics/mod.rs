//! Implicit BDF-2 elastodynamics on tet meshes. Each step minimizes an
//! incremental potential (inertia, stable Neo-Hookean elasticity, gravity and
//! a log barrier against static half-spaces) with projected Newton.

pub mod energy;
mod mass;
mod model;
mod scenario;
mod solver;
mod trajectory;

pub use energy::{barrier, neohookean_energy, neohookean_hessian, neohookean_parts, neohookean_stress};
pub use mass::MassMatrix;
pub use model::{project_psd, ElementGeometry, ElementMaterials, Evaluation, Simulator, Stepper};
pub use scenario::{
    HalfSpace, MaterialsBlock, NewtonOptions, Pin, PinMotion, PinRotation, Scenario, ScenarioFile, UniformBlock,
};
pub use solver::{inertia_target, SimState, StepRecord, StepSolution, Tape};
pub use trajectory::{Trajectory, TRAJECTORY_HEADER};
