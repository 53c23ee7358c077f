//! Rigid-body baseline that sees an object only through its moments of mass
//! and surface vertices.

use std::fmt::Write as _;

use nalgebra::{Matrix3, SymmetricEigen, UnitQuaternion, Vector3};

use crate::dynamics::Scenario;
use crate::error::{Error, Result};
use crate::mesh::{MomentScale, MomentVector, TetMesh};

/// Mass, center of mass and inertia about the center of mass.
pub fn body_inertia(m: &MomentVector) -> Result<(f64, Vector3<f64>, Matrix3<f64>)> {
    if !(m.m0 > 0.0) || !m.m0.is_finite() {
        return Err(Error::InconsistentMoments(format!("mass {} must be positive", m.m0)));
    }
    let com = m.m1_vector() / m.m0;
    let shift = (Matrix3::identity() * com.dot(&com) - com * com.transpose()) * m.m0;
    let inertia = m.m2_matrix() - shift;
    let eig = SymmetricEigen::new(inertia).eigenvalues;
    let tol = 1e-12 * inertia.trace().abs().max(f64::MIN_POSITIVE);
    if eig.iter().any(|&l| l < -tol || !l.is_finite()) {
        return Err(Error::InconsistentMoments(format!(
            "inertia about the center of mass is not positive semidefinite (eigenvalues {:?})",
            eig.as_slice()
        )));
    }
    Ok((m.m0, com, inertia))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidState {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    /// Body frame.
    pub angular_velocity: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidTrajectory {
    pub timestep: f64,
    pub states: Vec<RigidState>,
}

impl RigidTrajectory {
    /// `com` rows hold the center of mass, `quat` rows the vector part of the
    /// orientation with the scalar part made non-negative.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,time,vertex,x,y,z\n");
        for (s, st) in self.states.iter().enumerate() {
            let t = s as f64 * self.timestep;
            let p = st.position;
            let q = st.orientation.quaternion();
            let v = if q.w < 0.0 { -q.imag() } else { q.imag() };
            let _ = writeln!(out, "{s},{t},com,{:e},{:e},{:e}", p.x, p.y, p.z);
            let _ = writeln!(out, "{s},{t},quat,{:e},{:e},{:e}", v.x, v.y, v.z);
        }
        out
    }
}

/// Symplectic Euler under gravity with single-point impulse contact against
/// the scenario's half-spaces. The body starts at rest orientation at the
/// scenario's translation with its linear velocity and no spin.
pub fn rigid_simulate(
    moments: &MomentVector,
    mesh: &TetMesh,
    scenario: &Scenario,
    restitution: f64,
) -> Result<RigidTrajectory> {
    scenario.validate()?;
    if !(0.0..=1.0).contains(&restitution) {
        return Err(Error::InvalidParameter(format!(
            "restitution {restitution} must lie in [0, 1]"
        )));
    }
    let (mass, com, inertia) = body_inertia(moments)?;
    let inv_inertia = inertia
        .try_inverse()
        .ok_or_else(|| Error::InconsistentMoments("singular inertia".into()))?;
    let offsets: Vec<Vector3<f64>> = mesh
        .surface_vertices()
        .iter()
        .map(|&v| mesh.vertices()[v] - com)
        .collect();
    let h = scenario.timestep;
    let mut state = RigidState {
        position: com + scenario.translation,
        orientation: UnitQuaternion::identity(),
        velocity: scenario.velocity,
        angular_velocity: Vector3::zeros(),
    };
    let mut states = Vec::with_capacity(scenario.steps + 1);
    states.push(state);
    for _ in 0..scenario.steps {
        let w = state.angular_velocity;
        state.velocity += scenario.gravity * h;
        state.angular_velocity += inv_inertia * (-w.cross(&(inertia * w))) * h;
        state.position += state.velocity * h;
        state.orientation = state.orientation * UnitQuaternion::from_scaled_axis(state.angular_velocity * h);
        state.orientation.renormalize();

        for hs in &scenario.half_spaces {
            let rot = state.orientation.to_rotation_matrix();
            let Some((depth, r_body)) = offsets
                .iter()
                .map(|r| (hs.distance(&(state.position + rot * r)), *r))
                .min_by(|a, b| a.0.total_cmp(&b.0))
            else {
                continue;
            };
            if depth >= 0.0 {
                continue;
            }
            let n = hs.normal;
            let r = rot * r_body;
            let inv_world = rot * inv_inertia * rot.transpose();
            let omega = rot * state.angular_velocity;
            let vn = n.dot(&(state.velocity + omega.cross(&r)));
            if vn < 0.0 {
                let rn = r.cross(&n);
                let k = mass * n.dot(&(inv_world * rn).cross(&r));
                // impulse divided by mass
                let j = -(1.0 + restitution) * vn / (1.0 + k);
                state.velocity += n * j;
                let d_omega = inv_world * rn * (j * mass);
                state.angular_velocity += rot.transpose() * d_omega;
            }
            state.position -= n * depth;
        }
        states.push(state);
    }
    Ok(RigidTrajectory { timestep: h, states })
}

/// Snaps `m` onto the grid anchored at `reference` with spacing set by
/// `tolerance` relative to the reference scale, the precision at which the
/// baseline reads moments.
pub fn quantized_moments(m: &MomentVector, reference: &MomentVector, tolerance: f64) -> MomentVector {
    MomentScale::from_reference(reference).quantize_to(m, reference, tolerance)
}

/// Moments are read at this relative precision by the comparison.
pub const RIGID_TOLERANCE: f64 = 1e-2;

/// Runs the baseline for both moment sets at [`RIGID_TOLERANCE`] and reports
/// whether the trajectories are bit-identical.
pub fn rigid_witness(
    reference: &MomentVector,
    other: &MomentVector,
    mesh: &TetMesh,
    scenario: &Scenario,
    restitution: f64,
) -> Result<(RigidTrajectory, RigidTrajectory, bool)> {
    let a = rigid_simulate(
        &quantized_moments(reference, reference, RIGID_TOLERANCE),
        mesh,
        scenario,
        restitution,
    )?;
    let b = rigid_simulate(
        &quantized_moments(other, reference, RIGID_TOLERANCE),
        mesh,
        scenario,
        restitution,
    )?;
    let same = a.states.len() == b.states.len() && a.states.iter().zip(&b.states).all(|(x, y)| bits(x) == bits(y));
    Ok((a, b, same))
}

fn bits(s: &RigidState) -> [u64; 13] {
    let q = s.orientation.quaternion();
    let v = [
        s.position.x,
        s.position.y,
        s.position.z,
        q.w,
        q.i,
        q.j,
        q.k,
        s.velocity.x,
        s.velocity.y,
        s.velocity.z,
        s.angular_velocity.x,
        s.angular_velocity.y,
        s.angular_velocity.z,
    ];
    v.map(f64::to_bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::HalfSpace;
    use crate::mesh::{fixtures, moments};
    use approx::assert_relative_eq;

    #[test]
    fn unit_cube_inertia() {
        let mesh = fixtures::lattice_cube(2, 1.0, Vector3::zeros());
        let m = moments(&mesh, &vec![2.5; mesh.num_tets()]).unwrap();
        let (mass, com, inertia) = body_inertia(&m).unwrap();
        assert_relative_eq!(mass, 2.5, max_relative = 1e-12);
        assert!(com.norm() < 1e-12);
        assert_relative_eq!(inertia, Matrix3::identity() * (2.5 / 6.0), epsilon = 1e-12);
    }

    #[test]
    fn inertia_is_translation_invariant() {
        let mesh = fixtures::lattice_cube(2, 1.0, Vector3::zeros());
        let moved = mesh.map_vertices(|x| x + Vector3::new(0.3, -1.2, 2.0)).unwrap();
        let d: Vec<f64> = (0..mesh.num_tets()).map(|t| 1.0 + t as f64 * 0.1).collect();
        let (_, _, a) = body_inertia(&moments(&mesh, &d).unwrap()).unwrap();
        let (_, _, b) = body_inertia(&moments(&moved, &d).unwrap()).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_moments_about_origin() {
        let mut a = [0.0; 10];
        a[0] = 3.0;
        a[4..7].copy_from_slice(&[1.0, 2.0, 2.5]);
        let (_, com, inertia) = body_inertia(&MomentVector::from_array(a)).unwrap();
        assert_eq!(com, Vector3::zeros());
        assert_eq!(inertia, Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 2.5)));
    }

    #[test]
    fn rejects_inconsistent_moments() {
        let mut a = [0.0; 10];
        a[0] = 1.0;
        a[1] = 5.0;
        a[4..7].copy_from_slice(&[1.0, 1.0, 1.0]);
        assert!(matches!(
            body_inertia(&MomentVector::from_array(a)),
            Err(Error::InconsistentMoments(_))
        ));
        assert!(body_inertia(&MomentVector::from_array([0.0; 10])).is_err());
    }

    #[test]
    fn free_fall_follows_ballistics() {
        let mesh = fixtures::lattice_cube(2, 0.1, Vector3::zeros());
        let m = moments(&mesh, &vec![1000.0; mesh.num_tets()]).unwrap();
        let scenario = Scenario {
            steps: 20,
            ..Scenario::default()
        };
        let traj = rigid_simulate(&m, &mesh, &scenario, 0.5).unwrap();
        let h = scenario.timestep;
        for (s, st) in traj.states.iter().enumerate() {
            let t = s as f64 * h;
            assert!((st.position.z + 0.5 * 9.8 * t * t).abs() <= 9.8 * h * t + 1e-15);
            assert_relative_eq!(st.orientation.quaternion().norm(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn head_on_elastic_impact_reverses_velocity() {
        // a regular tet standing on one vertex below its center of mass
        let turn = nalgebra::Rotation3::rotation_between(&Vector3::new(1.0, 1.0, 1.0), &-Vector3::z()).unwrap();
        let mesh = fixtures::regular_tet().map_vertices(|x| turn * x).unwrap();
        let m = moments(&mesh, &[1000.0]).unwrap();
        let (_, com, _) = body_inertia(&m).unwrap();
        let lowest = mesh.vertices().iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
        let below: Vec<_> = mesh.vertices().iter().filter(|v| v.z == lowest).collect();
        assert_eq!(below.len(), 1);
        assert!((below[0].xy() - com.xy()).norm() < 1e-12);
        let scenario = Scenario {
            translation: Vector3::new(0.0, 0.0, -lowest + 0.005),
            velocity: Vector3::new(0.0, 0.0, -1.0),
            gravity: Vector3::zeros(),
            half_spaces: vec![HalfSpace::new(Vector3::z(), 0.0).unwrap()],
            steps: 1,
            ..Scenario::default()
        };
        let traj = rigid_simulate(&m, &mesh, &scenario, 1.0).unwrap();
        let after = traj.states[1];
        assert_eq!(after.velocity.z, 1.0);
        assert!(after.angular_velocity.norm() < 1e-12);
    }

    #[test]
    fn moment_identical_objects_move_identically() {
        let mesh = fixtures::lattice_cube(3, 0.1, Vector3::new(0.0, 0.0, 0.06));
        let scenario = Scenario {
            velocity: Vector3::new(0.4, 0.0, -1.0),
            half_spaces: vec![HalfSpace::new(Vector3::new(0.2, 0.1, 1.0), 0.0).unwrap()],
            steps: 40,
            ..Scenario::default()
        };
        let m = moments(&mesh, &vec![2000.0; mesh.num_tets()]).unwrap();
        let a = rigid_simulate(&m, &mesh, &scenario, 0.6).unwrap();
        let b = rigid_simulate(&m.clone(), &mesh, &scenario, 0.6).unwrap();
        assert_eq!(a, b);
        // it bounced and picked up spin
        assert!(a.states.last().unwrap().angular_velocity.norm() > 0.0);
        assert!(a.states.iter().any(|s| s.velocity.z > 0.0));
    }

    #[test]
    fn witness_tolerance() {
        let mesh = fixtures::lattice_cube(2, 0.1, Vector3::new(0.0, 0.0, 0.06));
        let scenario = Scenario {
            half_spaces: vec![HalfSpace::new(Vector3::z(), 0.0).unwrap()],
            steps: 30,
            ..Scenario::default()
        };
        let m = moments(&mesh, &vec![2000.0; mesh.num_tets()]).unwrap();
        let close = m.scaled(1.0 + 1e-4);
        let far = m.scaled(1.05);
        assert!(rigid_witness(&m, &close, &mesh, &scenario, 0.5).unwrap().2);
        assert!(!rigid_witness(&m, &far, &mesh, &scenario, 0.5).unwrap().2);
        let csv = rigid_witness(&m, &m, &mesh, &scenario, 0.5).unwrap().0.to_csv();
        assert!(csv.starts_with("step,time,vertex,x,y,z\n0,0,com,"));
    }
}
