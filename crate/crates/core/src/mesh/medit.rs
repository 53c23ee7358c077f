//! MEDIT ASCII (`.mesh`) reader and writer.
//!
//! Only `Vertices` and `Tetrahedra` are used; other standard sections are
//! skipped. Indices in the file are 1-based.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::TetMesh;
use crate::error::{Error, Result};

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            items.extend(line.split_whitespace().map(|t| (lineno + 1, t)));
        }
        Self { items, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.items.len() - self.pos
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or_else(|| self.items.last())
            .map_or(0, |(l, _)| *l)
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let t = self.items.get(self.pos).copied();
        self.pos += 1;
        t
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line(),
            message: message.into(),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (line, tok) = self
            .next()
            .ok_or_else(|| self.err(format!("unexpected end of file reading {what}")))?;
        tok.parse().map_err(|_| Error::Parse {
            line,
            message: format!("expected {what}, found {tok:?}"),
        })
    }

    fn count(&mut self, section: &str, per_entry: usize) -> Result<usize> {
        let n: usize = self.number(&format!("{section} count"))?;
        if n.saturating_mul(per_entry) > self.remaining() {
            return Err(self.err(format!("{section} declares {n} entries but the file is too short")));
        }
        Ok(n)
    }
}

/// Number of tokens per entry for sections that are recognized and skipped.
fn skipped_width(keyword: &str, dim: usize) -> Option<usize> {
    Some(match keyword {
        "Edges" => 3,
        "Triangles" => 4,
        "Quadrilaterals" => 5,
        "Hexahedra" => 9,
        "Prisms" => 7,
        "Corners" | "RequiredVertices" | "Ridges" | "RequiredEdges" | "RequiredTriangles" => 1,
        "Normals" | "Tangents" => dim,
        "NormalAtVertices" | "TangentAtVertices" => 2,
        "NormalAtTriangleVertices" => 3,
        _ => return None,
    })
}

/// Parses MEDIT ASCII text into a [`TetMesh`].
pub fn parse_medit(text: &str) -> Result<TetMesh> {
    let mut tok = Tokens::new(text);
    let mut dim = 3usize;
    let mut vertices: Option<Vec<Vector3<f64>>> = None;
    let mut tets: Option<Vec<[usize; 4]>> = None;

    while let Some((line, keyword)) = tok.next() {
        match keyword {
            "MeshVersionFormatted" => {
                let _: u32 = tok.number("format version")?;
            }
            "Dimension" => {
                dim = tok.number("dimension")?;
                if dim != 3 {
                    return Err(Error::Parse {
                        line,
                        message: format!("only 3D meshes are supported (Dimension {dim})"),
                    });
                }
            }
            "Vertices" => {
                if vertices.is_some() {
                    return Err(tok.err("duplicate Vertices section"));
                }
                let n = tok.count("Vertices", dim + 1)?;
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    let x: f64 = tok.number("vertex coordinate")?;
                    let y: f64 = tok.number("vertex coordinate")?;
                    let z: f64 = tok.number("vertex coordinate")?;
                    let _: i64 = tok.number("vertex reference")?;
                    v.push(Vector3::new(x, y, z));
                }
                vertices = Some(v);
            }
            "Tetrahedra" => {
                if tets.is_some() {
                    return Err(tok.err("duplicate Tetrahedra section"));
                }
                let n = tok.count("Tetrahedra", 5)?;
                let mut t = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut idx = [0usize; 4];
                    for slot in &mut idx {
                        let one_based: usize = tok.number("tetrahedron vertex index")?;
                        if one_based == 0 {
                            return Err(tok.err("vertex indices are 1-based; found 0"));
                        }
                        *slot = one_based - 1;
                    }
                    let _: i64 = tok.number("tetrahedron reference")?;
                    t.push(idx);
                }
                tets = Some(t);
            }
            "End" => break,
            other => match skipped_width(other, dim) {
                Some(width) => {
                    let n = tok.count(other, width)?;
                    for _ in 0..n * width {
                        tok.next();
                    }
                }
                None => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown keyword {other:?}"),
                    })
                }
            },
        }
    }

    let vertices = vertices.ok_or_else(|| tok.err("missing Vertices section"))?;
    let tets = tets.ok_or_else(|| tok.err("missing Tetrahedra section"))?;
    TetMesh::new(vertices, tets)
}

/// Serializes a mesh to MEDIT ASCII.
pub fn write_medit(mesh: &TetMesh) -> String {
    let mut s = String::new();
    s.push_str("MeshVersionFormatted 2\nDimension 3\n\nVertices\n");
    let _ = writeln!(s, "{}", mesh.num_vertices());
    for v in mesh.vertices() {
        let _ = writeln!(s, "{:?} {:?} {:?} 0", v.x, v.y, v.z);
    }
    let _ = writeln!(s, "\nTetrahedra\n{}", mesh.num_tets());
    for t in mesh.tets() {
        let _ = writeln!(s, "{} {} {} {} 0", t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1);
    }
    s.push_str("\nEnd\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures;

    const ONE_TET: &str = "MeshVersionFormatted 1
Dimension 3
Vertices
4
0 0 0 1
1 0 0 1
0 1 0 1
0 0 1 1
Tetrahedra
1
1 2 3 4 7
End
";

    #[test]
    fn parses_single_tet() {
        let m = parse_medit(ONE_TET).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_tets(), 1);
        assert_eq!(m.surface_vertices().len(), 4);
    }

    #[test]
    fn skips_known_sections_and_comments() {
        let text = ONE_TET.replace(
            "Tetrahedra",
            "# boundary triangles\nTriangles\n1\n1 2 3 0\nCorners 1 1\nTetrahedra",
        );
        assert_eq!(parse_medit(&text).unwrap().num_tets(), 1);
    }

    #[test]
    fn negative_orientation_is_reordered_on_load() {
        let text = ONE_TET.replace("1 2 3 4 7", "1 3 2 4 7");
        let m = parse_medit(&text).unwrap();
        assert!(crate::mesh::signed_volume(m.corners(0)) > 0.0);
    }

    #[test]
    fn reports_bad_input() {
        assert!(matches!(
            parse_medit(&ONE_TET.replace("1 2 3 4 7", "0 2 3 4 7")),
            Err(Error::Parse { .. })
        ));
        assert!(parse_medit("Vertices 1000000000 0 0").is_err());
        assert!(parse_medit("Dimension 2").is_err());
        assert!(parse_medit("Bogus").is_err());
        assert!(matches!(
            parse_medit(&ONE_TET.replace("Tetrahedra\n1\n1 2 3 4 7", "Tetrahedra\n0")),
            Err(Error::InvalidMesh(_))
        ));
        let err = parse_medit(&ONE_TET.replace("0 1 0 1", "0 x 0 1")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err}");
    }

    #[test]
    fn write_then_parse_preserves_geometry() {
        let m = fixtures::lattice_cube(2, 0.3, nalgebra::Vector3::new(0.1, -0.2, 0.5));
        let back = parse_medit(&write_medit(&m)).unwrap();
        assert_eq!(back.tets(), m.tets());
        assert_eq!(back.vertices(), m.vertices());
    }
}
