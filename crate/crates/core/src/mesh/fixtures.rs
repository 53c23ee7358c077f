//! Small structured meshes for tests, demos and the bundled scenarios.

use nalgebra::Vector3;

use super::TetMesh;

/// The tet with corners at the origin and the three unit axes.
pub fn unit_right_tet() -> TetMesh {
    TetMesh::new(
        vec![Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::z()],
        vec![[0, 1, 2, 3]],
    )
    .expect("valid fixture")
}

/// A regular tetrahedron with unit edge length, centroid at the origin.
pub fn regular_tet() -> TetMesh {
    let s = 1.0 / (2.0 * 2f64.sqrt());
    let v = vec![
        Vector3::new(1.0, 1.0, 1.0) * s,
        Vector3::new(1.0, -1.0, -1.0) * s,
        Vector3::new(-1.0, 1.0, -1.0) * s,
        Vector3::new(-1.0, -1.0, 1.0) * s,
    ];
    TetMesh::new(v, vec![[0, 1, 2, 3]]).expect("valid fixture")
}

/// Unit cube `[0,1]³` split into five tets (one central, four corners).
pub fn five_tet_cube() -> TetMesh {
    let v = (0..8)
        .map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    let tets = vec![[1, 2, 4, 7], [0, 1, 2, 4], [3, 1, 2, 7], [5, 1, 4, 7], [6, 2, 4, 7]];
    TetMesh::new(v, tets).expect("valid fixture")
}

/// Cube of edge `side` centered at `center`, with `n` cells per axis and six
/// tets per cell sharing the cell's main diagonal.
pub fn lattice_cube(n: usize, side: f64, center: Vector3<f64>) -> TetMesh {
    assert!(n >= 1);
    let m = n + 1;
    let id = |i: usize, j: usize, k: usize| i + m * (j + m * k);
    let h = side / n as f64;
    let origin = center - Vector3::repeat(side / 2.0);
    let mut vertices = Vec::with_capacity(m * m * m);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                vertices.push(origin + Vector3::new(i as f64, j as f64, k as f64) * h);
            }
        }
    }
    const PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for path in PATHS {
                    let mut c = [i, j, k];
                    let mut t = [id(c[0], c[1], c[2]), 0, 0, 0];
                    for (s, axis) in path.iter().enumerate() {
                        c[*axis] += 1;
                        t[s + 1] = id(c[0], c[1], c[2]);
                    }
                    tets.push(t);
                }
            }
        }
    }
    TetMesh::new(vertices, tets).expect("valid fixture")
}

/// A ball of the given radius: a `2n`-cell lattice cube pushed radially
/// onto the sphere (`x ↦ x·|x|∞/|x|₂`), centered at the origin.
pub fn ball(n: usize, radius: f64) -> TetMesh {
    let cube = lattice_cube(2 * n, 2.0, Vector3::zeros());
    cube.map_vertices(|x| {
        let two = x.norm();
        if two == 0.0 {
            *x
        } else {
            x * (x.amax() / two) * radius
        }
    })
    .expect("radial map keeps orientation")
}
