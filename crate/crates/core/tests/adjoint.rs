use std::sync::Arc;

use advsim::adjoint::Adjoint;
use advsim::dynamics::{HalfSpace, Pin, Scenario, Simulator};
use advsim::materials::{MaterialBounds, MaterialField};
use advsim::mesh::{fixtures, TetMesh};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn soft_bounds() -> MaterialBounds {
    MaterialBounds {
        young_min: 2e4,
        young_max: 2e6,
        poisson_min: 0.2,
        poisson_max: 0.45,
        density_min: 500.0,
        density_max: 3000.0,
        occupancy_min: 1e-3,
    }
}

struct Setup {
    sim: Simulator,
    field: MaterialField,
    weights: Vec<f64>,
}

fn setup(steps: usize) -> Setup {
    let mesh: Arc<TetMesh> = Arc::new(
        fixtures::five_tet_cube()
            .map_vertices(|x| x * 0.1 + Vector3::new(0.0, 0.0, 0.0015))
            .unwrap(),
    );
    let mut scenario = Scenario {
        velocity: Vector3::new(0.3, 0.1, -0.8),
        half_spaces: vec![HalfSpace::new(Vector3::new(0.05, 0.0, 1.0), 0.0).unwrap()],
        steps,
        ..Scenario::default()
    };
    scenario.newton.tolerance = Some(1e-13);
    let sim = Simulator::new(Arc::clone(&mesh), scenario).unwrap();
    let mut field =
        MaterialField::with_design_elements(&mesh, soft_bounds(), 2e5, 0.3, 1200.0, 0.6, vec![0, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for v in [
        &mut field.theta_young,
        &mut field.theta_poisson,
        &mut field.theta_density,
        &mut field.theta_occupancy,
    ] {
        v.iter_mut().for_each(|x| *x += rng.gen_range(-0.5..0.5));
    }
    let weights = (0..3 * mesh.num_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Setup { sim, field, weights }
}

fn cost(s: &Setup, field: &MaterialField) -> f64 {
    let mats = s.sim.materials(&field.realize(), field.bounds.occupancy_min).unwrap();
    let traj = s.sim.simulate(&mats).unwrap();
    traj.last().unwrap().iter().zip(&s.weights).map(|(a, b)| a * b).sum()
}

fn check_family(s: &Setup, family: usize, analytic: &[f64]) {
    let eps = 1e-5;
    for (k, &a) in analytic.iter().enumerate() {
        let bump = |d: f64| {
            let mut f = s.field.clone();
            let v = match family {
                0 => &mut f.theta_young,
                1 => &mut f.theta_poisson,
                2 => &mut f.theta_density,
                _ => &mut f.theta_occupancy,
            };
            v[k] += d;
            cost(s, &f)
        };
        let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
        let scale = analytic.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(
            (fd - a).abs() <= 1e-4 * a.abs().max(1e-3 * scale),
            "family {family} entry {k}: adjoint {a:e} vs fd {fd:e}"
        );
    }
}

#[test]
fn trajectory_gradient_matches_finite_differences() {
    let s = setup(4);
    let realized = s.field.realize();
    let mats = s.sim.materials(&realized, s.field.bounds.occupancy_min).unwrap();
    let (_, tape) = s.sim.simulate_recorded(&mats).unwrap();
    let adj = Adjoint::new(&s.sim, &mats, &s.field, &realized).unwrap();
    let out = adj.backprop(&tape, &s.weights).unwrap();
    assert_eq!(out.solves, 4);
    let g = &out.gradient;
    assert!(g.young.iter().any(|x| x.abs() > 0.0));
    check_family(&s, 0, &g.young);
    check_family(&s, 1, &g.poisson);
    check_family(&s, 2, &g.density);
    check_family(&s, 3, &g.occupancy);
    assert_eq!(g.occupancy.len(), 2);
}

#[test]
fn single_step_equals_backward_timestep() {
    let s = setup(1);
    let realized = s.field.realize();
    let mats = s.sim.materials(&realized, s.field.bounds.occupancy_min).unwrap();
    let (_, tape) = s.sim.simulate_recorded(&mats).unwrap();
    let adj = Adjoint::new(&s.sim, &mats, &s.field, &realized).unwrap();
    let out = adj.backprop(&tape, &s.weights).unwrap();
    let (_, step) = adj.backward_timestep(&s.weights, &tape.records[0]).unwrap();
    assert_eq!(out.gradient, step);
    check_family(&s, 0, &out.gradient.young);

    let doubled: Vec<f64> = s.weights.iter().map(|w| 2.0 * w).collect();
    let out2 = adj.backprop(&tape, &doubled).unwrap();
    let mut expect = out.gradient.clone();
    expect.scale(2.0);
    for (a, b) in out2.gradient.young.iter().zip(&expect.young) {
        assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300));
    }
    let zero = adj.backprop(&tape, &vec![0.0; s.weights.len()]).unwrap();
    assert_eq!(zero.gradient.max_abs(), 0.0);
    assert!(out.norms_csv().starts_with("step,incoming_norm,target_norm\n0,"));
}

#[test]
fn inertial_only_step_passes_gradient_through() {
    let mesh = Arc::new(fixtures::unit_right_tet());
    let scenario = Scenario {
        gravity: Vector3::zeros(),
        pins: vec![Pin::fixed(0), Pin::fixed(1), Pin::fixed(2)],
        ..Scenario::default()
    };
    let sim = Simulator::new(Arc::clone(&mesh), scenario).unwrap();
    let field =
        MaterialField::with_design_elements(&mesh, MaterialBounds::default(), 1e10, 0.3, 1000.0, 0.5, vec![]).unwrap();
    let realized = field.realize();
    let mut mats = sim.materials(&realized, 1e-3).unwrap();
    mats.stiffness[0] = 0.0;
    let (_, tape) = sim.simulate_recorded(&mats).unwrap();
    let record = &tape.records[0];
    for (a, b) in record.q_next.iter().zip(&record.q_hat) {
        assert!((a - b).abs() < 1e-15);
    }
    let adj = Adjoint::new(&sim, &mats, &field, &realized).unwrap();
    let incoming = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.7, -1.2, 2.5];
    let (target, _) = adj.backward_timestep(&incoming, record).unwrap();
    for d in 9..12 {
        assert!((target[d] - incoming[d]).abs() < 1e-12 * incoming[d].abs());
    }
}
