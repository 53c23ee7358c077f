//! Tetrahedral meshes: geometry, boundary classification, mass moments and
//! the conservative element-field smoothing operator.

mod medit;
mod moments;
mod smoothing;

pub mod fixtures;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub use medit::{parse_medit, write_medit};
pub use moments::{format_sci, moments, MomentScale, MomentVector, MomentsOperator, MOMENT_LABELS};
pub use smoothing::{default_gamma, SmoothingOperator};

/// Outward-facing faces of a positively oriented tet, as local corner indices.
pub(crate) const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

/// A tetrahedral mesh with consistent positive orientation.
#[derive(Debug, Clone)]
pub struct TetMesh {
    vertices: Vec<Vector3<f64>>,
    tets: Vec<[usize; 4]>,
    volumes: Vec<f64>,
    surface_faces: Vec<[usize; 3]>,
    surface_vertices: Vec<usize>,
    is_surface: Vec<bool>,
    boundary_tets: Vec<usize>,
    is_boundary: Vec<bool>,
    warnings: Vec<String>,
}

/// Signed volume of the tet spanned by four points.
pub fn signed_volume(p: [Vector3<f64>; 4]) -> f64 {
    edge_matrix(p).determinant() / 6.0
}

pub(crate) fn edge_matrix(p: [Vector3<f64>; 4]) -> Matrix3<f64> {
    Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]])
}

/// Per-element volumes `|det(v1-v0, v2-v0, v3-v0)| / 6`.
///
/// Fails on a zero-volume element, identifying its index.
pub fn element_volumes(vertices: &[Vector3<f64>], tets: &[[usize; 4]]) -> Result<Vec<f64>> {
    tets.iter()
        .enumerate()
        .map(|(index, t)| {
            let p = t.map(|i| vertices[i]);
            let volume = signed_volume(p);
            let longest = (0..4)
                .flat_map(|a| (a + 1..4).map(move |b| (a, b)))
                .map(|(a, b)| (p[a] - p[b]).norm())
                .fold(0.0, f64::max);
            if !(volume.abs() > 1e-12 * longest.powi(3)) {
                return Err(Error::DegenerateTet { index, volume });
            }
            Ok(volume.abs())
        })
        .collect()
}

impl TetMesh {
    /// Builds a mesh, reordering negatively oriented tets and classifying
    /// surface vertices and boundary elements.
    pub fn new(vertices: Vec<Vector3<f64>>, mut tets: Vec<[usize; 4]>) -> Result<Self> {
        if tets.is_empty() {
            return Err(Error::InvalidMesh("mesh has no tetrahedra".into()));
        }
        let nv = vertices.len();
        for (i, t) in tets.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&v| v >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "tet {i} references vertex {bad} but mesh has {nv} vertices"
                )));
            }
            let mut s = *t;
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidMesh(format!("tet {i} repeats a vertex")));
            }
        }
        if vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        for t in tets.iter_mut() {
            if signed_volume(t.map(|i| vertices[i])) < 0.0 {
                t.swap(1, 2);
            }
        }
        let volumes = element_volumes(&vertices, &tets)?;

        let mut face_count: BTreeMap<[usize; 3], (usize, [usize; 3])> = BTreeMap::new();
        for t in &tets {
            for f in TET_FACES {
                let oriented = [t[f[0]], t[f[1]], t[f[2]]];
                let mut key = oriented;
                key.sort_unstable();
                face_count.entry(key).and_modify(|e| e.0 += 1).or_insert((1, oriented));
            }
        }
        let mut warnings = Vec::new();
        let over_shared = face_count.values().filter(|(c, _)| *c > 2).count();
        if over_shared > 0 {
            let msg = format!("non-manifold surface: {over_shared} faces shared by more than two tets");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let surface_faces: Vec<[usize; 3]> = face_count.values().filter(|(c, _)| *c == 1).map(|(_, f)| *f).collect();
        let mut is_surface = vec![false; nv];
        for f in &surface_faces {
            for &v in f {
                is_surface[v] = true;
            }
        }
        let surface_vertices = (0..nv).filter(|&v| is_surface[v]).collect();
        let is_boundary: Vec<bool> = tets.iter().map(|t| t.iter().any(|&v| is_surface[v])).collect();
        let boundary_tets = (0..tets.len()).filter(|&i| is_boundary[i]).collect();

        Ok(Self {
            vertices,
            tets,
            volumes,
            surface_faces,
            surface_vertices,
            is_surface,
            boundary_tets,
            is_boundary,
            warnings,
        })
    }

    /// Reads a MEDIT ASCII `.mesh` file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        parse_medit(&text)
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    /// Rest volumes, one per element.
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    /// Boundary faces, oriented outward.
    pub fn surface_faces(&self) -> &[[usize; 3]] {
        &self.surface_faces
    }

    pub fn surface_vertices(&self) -> &[usize] {
        &self.surface_vertices
    }

    pub fn is_surface_vertex(&self, v: usize) -> bool {
        self.is_surface[v]
    }

    /// Elements with at least one surface vertex.
    pub fn boundary_elements(&self) -> &[usize] {
        &self.boundary_tets
    }

    pub fn is_boundary_element(&self, t: usize) -> bool {
        self.is_boundary[t]
    }

    /// Elements whose four corners are all interior vertices.
    pub fn interior_elements(&self) -> Vec<usize> {
        (0..self.tets.len()).filter(|&t| !self.is_boundary[t]).collect()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn corners(&self, t: usize) -> [Vector3<f64>; 4] {
        self.tets[t].map(|i| self.vertices[i])
    }

    pub fn centroid(&self, t: usize) -> Vector3<f64> {
        self.corners(t).iter().sum::<Vector3<f64>>() / 4.0
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        edges
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .sum::<f64>()
            / edges.len() as f64
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for t in &self.tets {
            for a in 0..4 {
                for b in a + 1..4 {
                    let (u, v) = (t[a].min(t[b]), t[a].max(t[b]));
                    set.insert((u, v));
                }
            }
        }
        set.into_iter().collect()
    }

    /// Vertex adjacency through shared elements (excluding self).
    pub fn vertex_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Element adjacency through shared faces.
    pub fn face_neighbors(&self) -> Vec<Vec<usize>> {
        let mut by_face: BTreeMap<[usize; 3], Vec<usize>> = BTreeMap::new();
        for (i, t) in self.tets.iter().enumerate() {
            for f in TET_FACES {
                let mut key = [t[f[0]], t[f[1]], t[f[2]]];
                key.sort_unstable();
                by_face.entry(key).or_default().push(i);
            }
        }
        let mut nbrs = vec![Vec::new(); self.tets.len()];
        for owners in by_face.values() {
            for &a in owners {
                for &b in owners {
                    if a != b {
                        nbrs[a].push(b);
                    }
                }
            }
        }
        for n in &mut nbrs {
            n.sort_unstable();
            n.dedup();
        }
        nbrs
    }

    /// Elements incident to each vertex.
    pub fn vertex_elements(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (i, t) in self.tets.iter().enumerate() {
            for &v in t {
                out[v].push(i);
            }
        }
        out
    }

    /// Returns a copy with every vertex mapped through `f`.
    pub fn map_vertices(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Result<Self> {
        Self::new(self.vertices.iter().map(f).collect(), self.tets.clone())
    }

    /// Rest positions flattened to `[x0, y0, z0, x1, ...]`.
    pub fn rest_positions(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }
}

/// Connected components of the subset `members` under face adjacency.
pub fn face_connected_components(mesh: &TetMesh, members: &[bool]) -> Vec<Vec<usize>> {
    let nbrs = mesh.face_neighbors();
    let mut label = vec![usize::MAX; mesh.num_tets()];
    let mut comps = Vec::new();
    for seed in 0..mesh.num_tets() {
        if !members[seed] || label[seed] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut comp = vec![seed];
        label[seed] = id;
        let mut k = 0;
        while k < comp.len() {
            let t = comp[k];
            k += 1;
            for &n in &nbrs[t] {
                if members[n] && label[n] == usize::MAX {
                    label[n] = id;
                    comp.push(n);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}
