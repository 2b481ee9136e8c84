//! OBJ meshes and ASCII XYZ point clouds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::cloud::PointCloud;
use super::mesh::{TriMesh, Vec3};
use crate::error::{Error, Result};

/// Parses Wavefront OBJ text. Only `v` and `f` records are used; polygons are
/// fan-triangulated and `v/vt/vn` references keep only the position index.
pub fn parse_obj(text: &str, origin: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut fields = line.split_whitespace();
        let at = |msg: &str| Error::parse(origin, format!("line {}: {msg}", lineno + 1));
        match fields.next() {
            Some("v") => {
                let coords: Vec<f64> = fields
                    .take(3)
                    .map(|f| f.parse::<f64>().map_err(|_| at("bad vertex coordinate")))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(at("vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let indices: Vec<u32> = fields
                    .map(|f| {
                        let raw: i64 = f
                            .split('/')
                            .next()
                            .unwrap_or("")
                            .parse()
                            .map_err(|_| at("bad face index"))?;
                        let resolved = if raw < 0 { vertices.len() as i64 + raw } else { raw - 1 };
                        if resolved < 0 || resolved >= vertices.len() as i64 {
                            return Err(at("face index out of range"));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<_>>()?;
                if indices.len() < 3 {
                    return Err(at("face needs at least three vertices"));
                }
                for k in 1..indices.len() - 1 {
                    let tri = [indices[0], indices[k], indices[k + 1]];
                    if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                        triangles.push(tri);
                    }
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, &path.display().to_string())
}

pub fn format_obj(mesh: &TriMesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        // `{:?}` prints the shortest representation that parses back exactly.
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_obj(mesh)).map_err(|e| Error::io(path, e))
}

/// Parses one `x y z` triple per line; `#` starts a comment.
pub fn parse_xyz(text: &str, origin: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let coords: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| Error::parse(origin, format!("line {}: bad coordinate", lineno + 1)))?;
        if coords.len() != 3 {
            return Err(Error::parse(
                origin,
                format!("line {}: expected 3 coordinates, found {}", lineno + 1, coords.len()),
            ));
        }
        points.push(Vec3::new(coords[0], coords[1], coords[2]));
    }
    Ok(PointCloud::new(points))
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, &path.display().to_string())
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::new();
    for p in cloud.points() {
        let _ = writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    out
}

pub fn save_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::cuboid;

    #[test]
    fn fan_triangulates_polygons() {
        let text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n";
        let mesh = parse_obj(text, "mem").unwrap();
        assert_eq!(mesh.triangles(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn negative_indices_are_relative() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n";
        assert_eq!(parse_obj(text, "mem").unwrap().triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn out_of_range_face_is_error() {
        let err = parse_obj("v 0 0 0\nf 1 2 3\n", "mem").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn obj_round_trip_is_exact() {
        let mesh = cuboid(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.7, 1.0 / 3.0, 0.25));
        assert_eq!(parse_obj(&format_obj(&mesh), "mem").unwrap(), mesh);
    }

    #[test]
    fn xyz_comments_and_errors() {
        let cloud = parse_xyz("# header\n1 2 3\n\n4 5 6 # trailing\n", "mem").unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points()[1], Vec3::new(4.0, 5.0, 6.0));
        assert!(parse_xyz("1 2\n", "mem").is_err());
        assert!(parse_xyz("1 2 x\n", "mem").is_err());
        assert_eq!(parse_xyz(&format_xyz(&cloud), "mem").unwrap(), cloud);
    }
}
