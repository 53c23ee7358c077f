use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use advsim::attack::reference_field;
use advsim::dynamics::{MaterialsBlock, Scenario, ScenarioFile, UniformBlock};
use advsim::materials::MaterialField;
use advsim::mesh::TetMesh;
use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

/// Files read during a run, by role, with their SHA-256 digests.
#[derive(Debug, Default)]
pub struct Inputs {
    pub digests: BTreeMap<String, String>,
}

impl Inputs {
    pub fn read(&mut self, role: &str, path: &Path) -> Result<String> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.digests.insert(role.to_string(), hex_digest(text.as_bytes()));
        Ok(text)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct LoadedScenario {
    pub file: ScenarioFile,
    pub mesh_path: PathBuf,
    pub mesh: Arc<TetMesh>,
    pub scenario: Scenario,
    pub materials: Option<Materials>,
}

pub enum Materials {
    Uniform(UniformBlock),
    Field(MaterialField),
}

impl Materials {
    pub fn field(&self, mesh: &TetMesh) -> Result<MaterialField> {
        match self {
            Materials::Uniform(u) => Ok(reference_field(mesh, u.bounds, &u.material())?),
            Materials::Field(f) => {
                f.check_mesh(mesh)?;
                Ok(f.clone())
            }
        }
    }
}

pub fn load_scenario(path: &Path, inputs: &mut Inputs) -> Result<LoadedScenario> {
    let text = inputs.read("config", path)?;
    let file = ScenarioFile::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mesh_path = base.join(&file.mesh);
    let mesh = Arc::new(load_mesh(&mesh_path, inputs)?);
    let scenario = file.to_scenario()?;
    let materials = match file.materials_block()? {
        None => None,
        Some(MaterialsBlock::Uniform(u)) => Some(Materials::Uniform(u)),
        Some(MaterialsBlock::File(p)) => Some(load_materials(&base.join(p), "materials", inputs)?),
    };
    Ok(LoadedScenario {
        file,
        mesh_path,
        mesh,
        scenario,
        materials,
    })
}

pub fn load_mesh(path: &Path, inputs: &mut Inputs) -> Result<TetMesh> {
    let text = inputs.read("mesh", path)?;
    let mesh = advsim::mesh::parse_medit(&text).with_context(|| format!("loading mesh {}", path.display()))?;
    for w in mesh.warnings() {
        log::warn!("{}: {w}", path.display());
    }
    Ok(mesh)
}

/// A materials file as written by `attack`, or a uniform block
/// `{"young", "poisson", "density"}`.
pub fn load_materials(path: &Path, role: &str, inputs: &mut Inputs) -> Result<Materials> {
    let text = inputs.read(role, path)?;
    if let Ok(u) = serde_json::from_str::<UniformBlock>(&text) {
        u.bounds.validate()?;
        return Ok(Materials::Uniform(u));
    }
    match MaterialField::from_json(&text) {
        Ok(f) => Ok(Materials::Field(f)),
        Err(e) => bail!("{}: not a materials file ({e})", path.display()),
    }
}
