use nalgebra::{Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::error::{Error, Result};
use crate::materials::{MaterialBounds, UniformMaterial};

/// Constraint `n·x ≥ offset` with unit normal `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl HalfSpace {
    /// Normalizes `normal` (and scales `offset` to match).
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let len = normal.norm();
        if !(len > 0.0) || !len.is_finite() || !offset.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "half-space normal must be finite and non-zero, got {normal:?}"
            )));
        }
        Ok(Self {
            normal: normal / len,
            offset: offset / len,
        })
    }

    pub fn distance(&self, x: &Vector3<f64>) -> f64 {
        self.normal.dot(x) - self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct PinRotation {
    pub center: [f64; 3],
    pub axis: [f64; 3],
    /// rad/s
    pub rate: f64,
}

/// Prescribed motion of a pinned vertex relative to its initial position.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinMotion {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<PinRotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pin {
    pub vertex: usize,
    #[serde(flatten)]
    pub motion: PinMotion,
}

impl Pin {
    pub fn fixed(vertex: usize) -> Self {
        Self {
            vertex,
            motion: PinMotion::default(),
        }
    }

    /// Rotation about the (moving) center first, then translation.
    pub fn position(&self, initial: &Vector3<f64>, time: f64) -> Vector3<f64> {
        let mut x = *initial;
        if let Some(rot) = &self.motion.rotation {
            let c = Vector3::from(rot.center);
            let axis = Unit::new_normalize(Vector3::from(rot.axis));
            x = Rotation3::from_axis_angle(&axis, rot.rate * time) * (x - c) + c;
        }
        if let Some(v) = &self.motion.velocity {
            x += Vector3::from(*v) * time;
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    /// Absolute `‖∇E‖∞` tolerance; `None` uses `1e-8·max(1, m₀‖a_g‖h²)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub max_iterations: usize,
    pub min_step: f64,
    /// Fraction of the distance to zero clearance a line search may cover.
    pub feasibility_fraction: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tolerance: None,
            max_iterations: 100,
            min_step: 1e-12,
            feasibility_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub translation: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub half_spaces: Vec<HalfSpace>,
    pub gravity: Vector3<f64>,
    pub timestep: f64,
    pub steps: usize,
    pub dhat: f64,
    /// Barrier stiffness κ; `None` scales with weight: `m₀·max(‖a_g‖, 1)/d̂`.
    pub barrier_stiffness: Option<f64>,
    pub pins: Vec<Pin>,
    pub newton: NewtonOptions,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            translation: Vector3::zeros(),
            velocity: Vector3::zeros(),
            half_spaces: Vec::new(),
            gravity: Vector3::new(0.0, 0.0, -9.8),
            timestep: 0.01,
            steps: 1,
            dhat: 1e-3,
            barrier_stiffness: None,
            pins: Vec::new(),
            newton: NewtonOptions::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.timestep > 0.0) || !self.timestep.is_finite() {
            return bad("timestep must be positive");
        }
        if !(self.dhat > 0.0) || !self.dhat.is_finite() {
            return bad("barrier distance must be positive");
        }
        if let Some(k) = self.barrier_stiffness {
            if !(k > 0.0) || !k.is_finite() {
                return bad("barrier stiffness must be positive");
            }
        }
        for v in [self.translation, self.velocity, self.gravity] {
            if !v.iter().all(|x| x.is_finite()) {
                return bad("translation, velocity and gravity must be finite");
            }
        }
        for (i, hs) in self.half_spaces.iter().enumerate() {
            if (hs.normal.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "half-space {i} normal is not unit length"
                )));
            }
        }
        let n = &self.newton;
        if n.max_iterations == 0
            || !(n.min_step > 0.0)
            || !(n.feasibility_fraction > 0.0 && n.feasibility_fraction < 1.0)
        {
            return bad("invalid newton options");
        }
        if let Some(t) = n.tolerance {
            if !(t > 0.0) {
                return bad("newton tolerance must be positive");
            }
        }
        Ok(())
    }
}

/// JSON form of a scenario. Keys besides the simulation ones (`mesh`,
/// `materials`, `attack`, ...) are kept as raw values for the caller.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub mesh: String,
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub half_spaces: Vec<[f64; 4]>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default = "default_h")]
    pub h: f64,
    pub steps: usize,
    #[serde(default = "default_dhat")]
    pub dhat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub pins: Vec<Pin>,
    #[serde(default)]
    pub newton: NewtonOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materials: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<serde_json::Value>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.8]
}

fn default_h() -> f64 {
    0.01
}

fn default_dhat() -> f64 {
    1e-3
}

/// The `materials` block: a homogeneous object, or the path of a materials
/// file relative to the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialsBlock {
    File(String),
    Uniform(UniformBlock),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformBlock {
    pub young: f64,
    pub poisson: f64,
    pub density: f64,
    #[serde(default)]
    pub bounds: MaterialBounds,
}

impl UniformBlock {
    pub fn material(&self) -> UniformMaterial {
        UniformMaterial {
            young: self.young,
            poisson: self.poisson,
            density: self.density,
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text)?;
        file.materials_block()?;
        file.attack_config()?;
        Ok(file)
    }

    pub fn materials_block(&self) -> Result<Option<MaterialsBlock>> {
        let Some(v) = &self.materials else { return Ok(None) };
        let block: MaterialsBlock = serde_json::from_value(v.clone())?;
        if let MaterialsBlock::Uniform(u) = &block {
            u.bounds.validate()?;
            for (x, lo, hi) in [
                (u.young, u.bounds.young_min, u.bounds.young_max),
                (u.poisson, u.bounds.poisson_min, u.bounds.poisson_max),
                (u.density, u.bounds.density_min, u.bounds.density_max),
            ] {
                if !(lo < x && x < hi) {
                    return Err(Error::OutOfBounds {
                        value: x,
                        min: lo,
                        max: hi,
                    });
                }
            }
        }
        Ok(Some(block))
    }

    pub fn attack_config(&self) -> Result<Option<AttackConfig>> {
        let Some(v) = &self.attack else { return Ok(None) };
        let config: AttackConfig = serde_json::from_value(v.clone())?;
        config.validate()?;
        Ok(Some(config))
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        let half_spaces = self
            .half_spaces
            .iter()
            .map(|h| HalfSpace::new(Vector3::new(h[0], h[1], h[2]), h[3]))
            .collect::<Result<Vec<_>>>()?;
        let scenario = Scenario {
            translation: self.translation.into(),
            velocity: self.velocity.into(),
            half_spaces,
            gravity: self.gravity.into(),
            timestep: self.h,
            steps: self.steps,
            dhat: self.dhat,
            barrier_stiffness: self.kappa,
            pins: self.pins.clone(),
            newton: self.newton,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_file_with_defaults() {
        let f = ScenarioFile::parse(r#"{"mesh": "a.mesh", "steps": 3, "half_spaces": [[0, 0, 2, 1]]}"#).unwrap();
        let s = f.to_scenario().unwrap();
        assert_eq!(s.timestep, 0.01);
        assert_eq!(s.dhat, 1e-3);
        assert_eq!(s.gravity, Vector3::new(0.0, 0.0, -9.8));
        assert_eq!(s.half_spaces[0].normal, Vector3::z());
        assert_eq!(s.half_spaces[0].offset, 0.5);
        assert_eq!(s.newton.max_iterations, 100);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            r#"{"mesh": "a", "steps": 1, "h": 0}"#,
            r#"{"mesh": "a", "steps": 1, "dhat": -1}"#,
            r#"{"mesh": "a", "steps": 1, "half_spaces": [[0, 0, 0, 1]]}"#,
            r#"{"mesh": "a", "steps": 1, "newton": {"feasibility_fraction": 1.5}}"#,
        ] {
            assert!(
                ScenarioFile::parse(text).and_then(|f| f.to_scenario()).is_err(),
                "{text}"
            );
        }
        assert!(ScenarioFile::parse(r#"{"mesh": "a", "steps": 1, "bogus": 1}"#).is_err());
        assert!(ScenarioFile::parse(r#"{"steps": 1}"#).is_err());
        assert!(ScenarioFile::parse(r#"{"mesh": "a", "steps": 1, "materials": {"young": 1}}"#).is_err());
        assert!(ScenarioFile::parse(
            r#"{"mesh": "a", "steps": 1, "materials": {"young": 1, "poisson": 0.3, "density": 1000}}"#
        )
        .is_err());
        assert!(ScenarioFile::parse(r#"{"mesh": "a", "steps": 1, "attack": {"beta": -1}}"#).is_err());
    }

    #[test]
    fn materials_and_attack_blocks() {
        let f = ScenarioFile::parse(
            r#"{"mesh": "a", "steps": 1, "materials": {"young": 1e10, "poisson": 0.3, "density": 2500},
                "attack": {"iterations": 5, "seed": 3}}"#,
        )
        .unwrap();
        let Some(MaterialsBlock::Uniform(u)) = f.materials_block().unwrap() else {
            panic!()
        };
        assert_eq!(u.material().density, 2500.0);
        assert_eq!(u.bounds, MaterialBounds::default());
        let a = f.attack_config().unwrap().unwrap();
        assert_eq!((a.iterations, a.seed, a.beta), (5, 3, 1e4));
        let g = ScenarioFile::parse(r#"{"mesh": "a", "steps": 1, "materials": "m.json"}"#).unwrap();
        assert_eq!(
            g.materials_block().unwrap(),
            Some(MaterialsBlock::File("m.json".into()))
        );
        assert_eq!(g.attack_config().unwrap(), None);
    }

    #[test]
    fn pin_motion() {
        let pin: Pin = serde_json::from_str(
            r#"{"vertex": 2, "rotation": {"center": [0, 0, 0], "axis": [0, 0, 1], "rate": 1.5707963267948966}, "velocity": [0, 0, 1]}"#,
        )
        .unwrap();
        let p = pin.position(&Vector3::x(), 1.0);
        assert!((p - Vector3::new(0.0, 1.0, 1.0)).norm() < 1e-15);
        let fixed: Pin = serde_json::from_str(r#"{"vertex": 0}"#).unwrap();
        assert_eq!(fixed, Pin::fixed(0));
        assert_eq!(fixed.position(&Vector3::y(), 3.0), Vector3::y());
    }
}
