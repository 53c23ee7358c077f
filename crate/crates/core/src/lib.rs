//! Differentiable tetrahedral FEM elastodynamics with adjoint gradients, used
//! to build stiff objects that share a reference object's surface and mass
//! moments while behaving differently under deformable simulation.

pub mod adjoint;
pub mod attack;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod materials;
pub mod mesh;
pub mod rigid;

pub use error::{Error, Result};
