use std::path::{Path, PathBuf};

use advsim::attack::{Attack, AttackConfig};
use advsim::dynamics::{MassMatrix, Simulator, Trajectory};
use advsim::mesh::{moments, MomentScale, MomentVector, TetMesh, MOMENT_LABELS};
use advsim::rigid::{rigid_witness, RIGID_TOLERANCE};
use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use crate::inputs::{load_materials, load_mesh, load_scenario, Inputs, LoadedScenario, Materials};
use crate::manifest::{Manifest, Timer};
use crate::{Cli, Command, ToleranceFailure};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Forward => forward(cli),
        Command::Moments { mesh, materials } => moments_cmd(cli, mesh.as_deref(), materials.as_deref()),
        Command::Attack => attack(cli),
        Command::Compare {
            attack_dir,
            reference,
            adversarial,
            reference_materials,
            adversarial_materials,
            restitution,
        } => {
            let pick = |given: &Option<PathBuf>, name: &str| -> Result<PathBuf> {
                given
                    .clone()
                    .or_else(|| attack_dir.as_ref().map(|d| d.join(name)))
                    .ok_or_else(|| anyhow!("compare needs --{} or --attack-dir", name.replace('_', "-")))
            };
            compare(
                cli,
                &pick(reference, "trajectory_reference.csv")?,
                &pick(adversarial, "trajectory_adversarial.csv")?,
                &pick(reference_materials, "materials_reference.json")?,
                &pick(adversarial_materials, "materials_rounded.json")?,
                *restitution,
            )
        }
    }
}

fn config_path(cli: &Cli) -> Result<&Path> {
    cli.config.as_deref().ok_or_else(|| anyhow!("--config is required"))
}

fn output_dir(cli: &Cli) -> Result<&Path> {
    let dir = cli.output.as_deref().ok_or_else(|| anyhow!("--output is required"))?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// The scenario file with defaults filled in and the mesh path made absolute.
fn resolved(loaded: &LoadedScenario, attack: Option<&AttackConfig>) -> Result<serde_json::Value> {
    let mut file = loaded.file.clone();
    file.mesh = std::fs::canonicalize(&loaded.mesh_path)
        .unwrap_or_else(|_| loaded.mesh_path.clone())
        .to_string_lossy()
        .into_owned();
    if let Some(a) = attack {
        file.attack = Some(serde_json::to_value(a)?);
    }
    if let Some(Materials::Uniform(u)) = &loaded.materials {
        file.materials = Some(serde_json::to_value(u)?);
    }
    Ok(serde_json::to_value(file)?)
}

fn forward(cli: &Cli) -> Result<()> {
    let mut timer = Timer::start();
    let mut manifest = Manifest::new("forward");
    let mut inputs = Inputs::default();
    let loaded = load_scenario(config_path(cli)?, &mut inputs)?;
    let out = output_dir(cli)?;
    let materials = loaded
        .materials
        .as_ref()
        .ok_or_else(|| anyhow!("the scenario has no materials block"))?;
    let field = materials.field(&loaded.mesh)?;
    let sim = Simulator::new(loaded.mesh.clone(), loaded.scenario.clone())?;
    let mats = sim.materials(&field.realize(), field.bounds.occupancy_min)?;
    timer.lap(&mut manifest, "load");
    let traj = sim.simulate(&mats)?;
    timer.lap(&mut manifest, "simulate");

    traj.write_csv(out.join("trajectory.csv"))?;
    let last = traj.last().expect("initial state");
    let step = traj.len() - 1;
    let positions: Vec<[f64; 3]> = last.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    let final_state = json!({ "step": step, "time": traj.time(step), "positions": positions });
    std::fs::write(
        out.join("final_state.json"),
        serde_json::to_string_pretty(&final_state)?,
    )?;
    timer.lap(&mut manifest, "write");

    manifest.resolved_config = resolved(&loaded, None)?;
    manifest.inputs = inputs.digests;
    manifest.write(out)?;
    println!("{} steps, {} vertices -> {}", step, traj.num_vertices, out.display());
    Ok(())
}

fn moments_cmd(cli: &Cli, mesh: Option<&Path>, materials: Option<&Path>) -> Result<()> {
    let mut inputs = Inputs::default();
    let (mesh, materials) = match (mesh, materials, cli.config.as_deref()) {
        (Some(m), Some(f), _) => {
            let mesh = load_mesh(m, &mut inputs)?;
            (mesh, load_materials(f, "materials", &mut inputs)?)
        }
        (None, None, Some(c)) => {
            let loaded = load_scenario(c, &mut inputs)?;
            let mats = loaded
                .materials
                .ok_or_else(|| anyhow!("the scenario has no materials block"))?;
            (std::sync::Arc::unwrap_or_clone(loaded.mesh), mats)
        }
        _ => bail!("moments needs --mesh and --materials, or --config"),
    };
    let field = materials.field(&mesh)?;
    let m = moments(&mesh, &field.realize().effective_density)?;
    println!("{}", MomentVector::table_header());
    println!("{}", m.table_row("object"));
    if let Some(out) = &cli.output {
        std::fs::create_dir_all(out)?;
        std::fs::write(
            out.join("moments.json"),
            serde_json::to_string_pretty(&moments_json(&m))?,
        )?;
        let mut manifest = Manifest::new("moments");
        manifest.inputs = inputs.digests;
        manifest.write(out)?;
    }
    Ok(())
}

fn moments_json(m: &MomentVector) -> serde_json::Value {
    let a = m.to_array();
    let formatted: serde_json::Map<_, _> = MOMENT_LABELS
        .iter()
        .zip(a)
        .map(|(l, x)| (l.to_string(), json!(advsim::mesh::format_sci(x))))
        .collect();
    let values: serde_json::Map<_, _> = MOMENT_LABELS
        .iter()
        .zip(a)
        .map(|(l, x)| (l.to_string(), json!(x)))
        .collect();
    json!({ "formatted": formatted, "values": values })
}

fn attack(cli: &Cli) -> Result<()> {
    let mut timer = Timer::start();
    let mut manifest = Manifest::new("attack");
    let mut inputs = Inputs::default();
    let loaded = load_scenario(config_path(cli)?, &mut inputs)?;
    let out = output_dir(cli)?;
    let mut config = loaded
        .file
        .attack_config()?
        .ok_or_else(|| anyhow!("the scenario has no attack block"))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let Some(Materials::Uniform(reference)) = &loaded.materials else {
        bail!("attack needs a uniform reference material block");
    };
    let sim = Simulator::new(loaded.mesh.clone(), loaded.scenario.clone())?;
    let reference_field = advsim::attack::reference_field(&loaded.mesh, reference.bounds, &reference.material())?;
    timer.lap(&mut manifest, "load");
    let attack = Attack::new(&sim, reference_field, config.clone())?;
    timer.lap(&mut manifest, "reference");
    let result = attack.run(&reference.material())?;
    timer.lap(&mut manifest, "optimize");
    result.write_dir(out)?;
    timer.lap(&mut manifest, "write");

    manifest.resolved_config = resolved(&loaded, Some(&config))?;
    manifest.inputs = inputs.digests;
    manifest.write(out)?;
    print!("{}", result.moments_table());
    if let Some(r) = &result.refit {
        println!(
            "re-fit: {} iterations, relative error {:.3e}, {} occupied component(s)",
            r.iterations,
            r.relative_error,
            r.components.len()
        );
    }
    if let Some(e) = &result.refit_error {
        return Err(ToleranceFailure(e.clone()).into());
    }
    Ok(())
}

fn check_trajectory(t: &Trajectory, mesh: &TetMesh, what: &str) -> Result<()> {
    if t.num_vertices != mesh.num_vertices() {
        bail!(
            "{what} trajectory has {} vertices but the mesh has {}",
            t.num_vertices,
            mesh.num_vertices()
        );
    }
    Ok(())
}

fn compare(
    cli: &Cli,
    reference: &Path,
    adversarial: &Path,
    reference_materials: &Path,
    adversarial_materials: &Path,
    restitution: f64,
) -> Result<()> {
    let mut manifest = Manifest::new("compare");
    let mut inputs = Inputs::default();
    let loaded = load_scenario(config_path(cli)?, &mut inputs)?;
    let out = output_dir(cli)?;
    let mesh = &loaded.mesh;
    let ref_traj = Trajectory::from_csv(&inputs.read("reference_trajectory", reference)?)?;
    let adv_traj = Trajectory::from_csv(&inputs.read("adversarial_trajectory", adversarial)?)?;
    check_trajectory(&ref_traj, mesh, "reference")?;
    check_trajectory(&adv_traj, mesh, "adversarial")?;
    if ref_traj.len() != adv_traj.len() {
        bail!(
            "trajectories differ in length ({} vs {} states)",
            ref_traj.len(),
            adv_traj.len()
        );
    }
    let ref_field = load_materials(reference_materials, "reference_materials", &mut inputs)?.field(mesh)?;
    let adv_field = load_materials(adversarial_materials, "adversarial_materials", &mut inputs)?.field(mesh)?;
    let (ref_r, adv_r) = (ref_field.realize(), adv_field.realize());
    let ref_mass = MassMatrix::new(mesh, &ref_r.effective_density)?;
    let adv_mass = MassMatrix::new(mesh, &adv_r.effective_density)?;

    let dq: Vec<f64> = adv_traj
        .last()
        .unwrap()
        .iter()
        .zip(ref_traj.last().unwrap())
        .map(|(a, b)| a - b)
        .collect();
    let m_norm_squared = adv_mass.norm_squared(&dq);
    let mut divergence = String::from("step,time,com_distance\n");
    for (s, (a, b)) in ref_traj.states.iter().zip(&adv_traj.states).enumerate() {
        let d = (adv_mass.center_of_mass(b) - ref_mass.center_of_mass(a)).norm();
        divergence.push_str(&format!("{s},{},{d:e}\n", ref_traj.time(s)));
    }
    std::fs::write(out.join("com_divergence.csv"), divergence)?;

    let m_ref = moments(mesh, &ref_r.effective_density)?;
    let m_adv = moments(mesh, &adv_r.effective_density)?;
    let (rigid_ref, rigid_adv, identical) = rigid_witness(&m_ref, &m_adv, mesh, &loaded.scenario, restitution)?;
    std::fs::write(out.join("rigid_reference.csv"), rigid_ref.to_csv())?;
    std::fs::write(out.join("rigid_adversarial.csv"), rigid_adv.to_csv())?;
    let scale = MomentScale::from_reference(&m_ref);
    let summary = json!({
        "final_m_norm_squared": m_norm_squared,
        "final_m_norm": m_norm_squared.max(0.0).sqrt(),
        "moment_relative_errors": scale.relative_errors(&m_ref, &m_adv).to_vec(),
        "rigid_tolerance": RIGID_TOLERANCE,
        "rigid_identical": identical,
    });
    std::fs::write(out.join("compare.json"), serde_json::to_string_pretty(&summary)?)?;
    manifest.resolved_config = resolved(&loaded, None)?;
    manifest.inputs = inputs.digests;
    manifest.write(out)?;

    println!("final-state M-norm difference: {:.6e}", m_norm_squared.max(0.0).sqrt());
    println!("{}", MomentVector::table_header());
    println!("{}", m_ref.table_row("reference"));
    println!("{}", m_adv.table_row("adversarial"));
    if identical {
        println!("rigid indistinguishability: PASS");
        Ok(())
    } else {
        println!("rigid indistinguishability: FAIL");
        Err(ToleranceFailure("rigid baseline trajectories differ".into()).into())
    }
}
