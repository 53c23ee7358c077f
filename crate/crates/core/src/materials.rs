//! Per-element material fields with box constraints satisfied by
//! construction through a `tanh` reparameterization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TetMesh;

/// `½·tanh(θ)·(max − min) + ½·(max + min)`.
#[inline]
pub fn param_to_value(theta: f64, min: f64, max: f64) -> f64 {
    (0.5 * theta.tanh() * (max - min) + 0.5 * (max + min)).clamp(min, max)
}

/// Derivative of [`param_to_value`] with respect to `θ`.
#[inline]
pub fn param_derivative(theta: f64, min: f64, max: f64) -> f64 {
    let t = theta.tanh();
    0.5 * (1.0 - t * t) * (max - min)
}

/// Inverse of [`param_to_value`] on the open interval.
pub fn value_to_param(x: f64, min: f64, max: f64) -> Result<f64> {
    if !(x > min && x < max) {
        return Err(Error::OutOfBounds { value: x, min, max });
    }
    let t = (2.0 * x - (max + min)) / (max - min);
    Ok(t.atanh())
}

/// Lamé parameters `(μ, λ)` from Young's modulus and Poisson's ratio.
pub fn lame_from_young_poisson(young: f64, poisson: f64) -> Result<(f64, f64)> {
    if !(young > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Young's modulus must be positive, got {young}"
        )));
    }
    if !(poisson > -1.0 && poisson < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "Poisson's ratio must lie in (-1, 0.5), got {poisson}"
        )));
    }
    let mu = young / (2.0 * (1.0 + poisson));
    let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    Ok((mu, lambda))
}

/// `(∂μ/∂Y, ∂λ/∂Y, ∂μ/∂ν, ∂λ/∂ν)`.
pub fn lame_derivatives(young: f64, poisson: f64) -> (f64, f64, f64, f64) {
    let a = 1.0 + poisson;
    let b = 1.0 - 2.0 * poisson;
    let dmu_dy = 1.0 / (2.0 * a);
    let dlam_dy = poisson / (a * b);
    let dmu_dnu = -young / (2.0 * a * a);
    let dlam_dnu = young * (1.0 + 2.0 * poisson * poisson) / (a * b).powi(2);
    (dmu_dy, dlam_dy, dmu_dnu, dlam_dnu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialBounds {
    pub young_min: f64,
    pub young_max: f64,
    pub poisson_min: f64,
    pub poisson_max: f64,
    pub density_min: f64,
    pub density_max: f64,
    pub occupancy_min: f64,
}

impl Default for MaterialBounds {
    /// ABS plastic to tungsten carbide stiffness, 0.2–0.4 Poisson's ratio,
    /// 0.8–11.3 g/cc density.
    fn default() -> Self {
        Self {
            young_min: 2.5e9,
            young_max: 650e9,
            poisson_min: 0.2,
            poisson_max: 0.4,
            density_min: 800.0,
            density_max: 11300.0,
            occupancy_min: 1e-3,
        }
    }
}

impl MaterialBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.young_min
            && self.young_min < self.young_max
            && 0.0 < self.poisson_min
            && self.poisson_min < self.poisson_max
            && self.poisson_max < 0.5
            && 0.0 < self.density_min
            && self.density_min < self.density_max
            && 0.0 < self.occupancy_min
            && self.occupancy_min < 1.0;
        if ok && [self.young_max, self.density_max].iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "inconsistent material bounds {self:?}"
            )))
        }
    }
}

/// Physical values of a homogeneous object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformMaterial {
    pub young: f64,
    pub poisson: f64,
    pub density: f64,
}

/// Unconstrained material parameters over a mesh.
///
/// `theta_occupancy` has one entry per design element; every other element
/// is fully occupied. After rounding, `snapped_occupancy` overrides the
/// occupancy of the design elements with exact 0/1 values.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    pub bounds: MaterialBounds,
    pub theta_young: Vec<f64>,
    pub theta_poisson: Vec<f64>,
    pub theta_density: Vec<f64>,
    pub theta_occupancy: Vec<f64>,
    pub design_elements: Vec<usize>,
    pub snapped_occupancy: Option<Vec<f64>>,
}

/// Physical per-element values and their derivatives with respect to θ.
#[derive(Debug, Clone)]
pub struct Realized {
    pub young: Vec<f64>,
    pub poisson: Vec<f64>,
    pub density: Vec<f64>,
    pub occupancy: Vec<f64>,
    /// `α ⊙ ρ`
    pub effective_density: Vec<f64>,
    /// `α³`
    pub stiffness_scale: Vec<f64>,
    pub d_young: Vec<f64>,
    pub d_poisson: Vec<f64>,
    pub d_density: Vec<f64>,
    /// Zero on elements without an occupancy parameter.
    pub d_occupancy: Vec<f64>,
}

impl MaterialField {
    /// Uniform physical values on every element; occupancy parameters on the
    /// mesh's interior elements.
    pub fn uniform(
        mesh: &TetMesh,
        bounds: MaterialBounds,
        young: f64,
        poisson: f64,
        density: f64,
        occupancy: f64,
    ) -> Result<Self> {
        Self::with_design_elements(
            mesh,
            bounds,
            young,
            poisson,
            density,
            occupancy,
            mesh.interior_elements(),
        )
    }

    /// Like [`MaterialField::uniform`] with an explicit set of elements that
    /// carry occupancy parameters.
    pub fn with_design_elements(
        mesh: &TetMesh,
        bounds: MaterialBounds,
        young: f64,
        poisson: f64,
        density: f64,
        occupancy: f64,
        mut design_elements: Vec<usize>,
    ) -> Result<Self> {
        bounds.validate()?;
        design_elements.sort_unstable();
        design_elements.dedup();
        let n = mesh.num_tets();
        if let Some(&bad) = design_elements.iter().find(|&&t| t >= n) {
            return Err(Error::InvalidParameter(format!("design element {bad} out of range")));
        }
        let ty = value_to_param(young, bounds.young_min, bounds.young_max)?;
        let tn = value_to_param(poisson, bounds.poisson_min, bounds.poisson_max)?;
        let tr = value_to_param(density, bounds.density_min, bounds.density_max)?;
        let theta_occupancy = if design_elements.is_empty() {
            Vec::new()
        } else {
            vec![value_to_param(occupancy, bounds.occupancy_min, 1.0)?; design_elements.len()]
        };
        Ok(Self {
            bounds,
            theta_young: vec![ty; n],
            theta_poisson: vec![tn; n],
            theta_density: vec![tr; n],
            theta_occupancy,
            design_elements,
            snapped_occupancy: None,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.theta_young.len()
    }

    pub fn check_mesh(&self, mesh: &TetMesh) -> Result<()> {
        let n = mesh.num_tets();
        for len in [
            self.theta_young.len(),
            self.theta_poisson.len(),
            self.theta_density.len(),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        if self.theta_occupancy.len() != self.design_elements.len() {
            return Err(Error::DimensionMismatch {
                expected: self.design_elements.len(),
                actual: self.theta_occupancy.len(),
            });
        }
        if let Some(s) = &self.snapped_occupancy {
            if s.len() != self.design_elements.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.design_elements.len(),
                    actual: s.len(),
                });
            }
        }
        if self.design_elements.iter().any(|&t| t >= n) {
            return Err(Error::InvalidParameter("design element out of range".into()));
        }
        Ok(())
    }

    pub fn realize(&self) -> Realized {
        let b = &self.bounds;
        let map = |theta: &[f64], lo: f64, hi: f64| -> (Vec<f64>, Vec<f64>) {
            theta
                .iter()
                .map(|&t| (param_to_value(t, lo, hi), param_derivative(t, lo, hi)))
                .unzip()
        };
        let (young, d_young) = map(&self.theta_young, b.young_min, b.young_max);
        let (poisson, d_poisson) = map(&self.theta_poisson, b.poisson_min, b.poisson_max);
        let (density, d_density) = map(&self.theta_density, b.density_min, b.density_max);

        let n = self.num_elements();
        let mut occupancy = vec![1.0; n];
        let mut d_occupancy = vec![0.0; n];
        for (k, &t) in self.design_elements.iter().enumerate() {
            match &self.snapped_occupancy {
                Some(s) => occupancy[t] = s[k],
                None => {
                    let th = self.theta_occupancy[k];
                    occupancy[t] = param_to_value(th, b.occupancy_min, 1.0);
                    d_occupancy[t] = param_derivative(th, b.occupancy_min, 1.0);
                }
            }
        }
        let effective_density = occupancy.iter().zip(&density).map(|(a, r)| a * r).collect();
        let stiffness_scale = occupancy.iter().map(|a| a * a * a).collect();
        Realized {
            young,
            poisson,
            density,
            occupancy,
            effective_density,
            stiffness_scale,
            d_young,
            d_poisson,
            d_density,
            d_occupancy,
        }
    }

    /// Serializes realized values, raw parameters and bounds.
    pub fn to_json(&self) -> String {
        let r = self.realize();
        let file = MaterialsFile {
            bounds: self.bounds,
            design_elements: self.design_elements.clone(),
            theta_young: self.theta_young.clone(),
            theta_poisson: self.theta_poisson.clone(),
            theta_density: self.theta_density.clone(),
            theta_occupancy: self.theta_occupancy.clone(),
            snapped_occupancy: self.snapped_occupancy.clone(),
            young: r.young,
            poisson: r.poisson,
            density: r.density,
            occupancy: r.occupancy,
        };
        serde_json::to_string_pretty(&file).expect("materials serialize")
    }

    /// Reads a materials file; the raw parameters are authoritative.
    pub fn from_json(text: &str) -> Result<Self> {
        let f: MaterialsFile = serde_json::from_str(text)?;
        f.bounds.validate()?;
        let field = Self {
            bounds: f.bounds,
            theta_young: f.theta_young,
            theta_poisson: f.theta_poisson,
            theta_density: f.theta_density,
            theta_occupancy: f.theta_occupancy,
            design_elements: f.design_elements,
            snapped_occupancy: f.snapped_occupancy,
        };
        let n = field.theta_young.len();
        let all_finite = [
            &field.theta_young,
            &field.theta_poisson,
            &field.theta_density,
            &field.theta_occupancy,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()));
        if !all_finite {
            return Err(Error::InvalidParameter("non-finite material parameter".into()));
        }
        if field.theta_poisson.len() != n || field.theta_density.len() != n {
            return Err(Error::InvalidParameter("material arrays differ in length".into()));
        }
        if field.design_elements.len() != field.theta_occupancy.len()
            || field.design_elements.iter().any(|&t| t >= n)
            || field.design_elements.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidParameter("invalid design element list".into()));
        }
        if let Some(s) = &field.snapped_occupancy {
            if s.len() != field.design_elements.len() || s.iter().any(|&a| a != 0.0 && a != 1.0) {
                return Err(Error::InvalidParameter(
                    "snapped occupancy must be 0 or 1 per design element".into(),
                ));
            }
        }
        Ok(field)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MaterialsFile {
    bounds: MaterialBounds,
    design_elements: Vec<usize>,
    theta_young: Vec<f64>,
    theta_poisson: Vec<f64>,
    theta_density: Vec<f64>,
    theta_occupancy: Vec<f64>,
    #[serde(default)]
    snapped_occupancy: Option<Vec<f64>>,
    #[serde(default)]
    young: Vec<f64>,
    #[serde(default)]
    poisson: Vec<f64>,
    #[serde(default)]
    density: Vec<f64>,
    #[serde(default)]
    occupancy: Vec<f64>,
}
