//! OBJ (meshes) and ASCII PLY (point clouds).
//!
//! Coordinates are printed with 9 significant digits.

use std::fmt::Write as _;

use super::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};
use crate::geom::Vec3;

const HEADER: &str = "# ldm3d triangle mesh\n";

fn fmt_coord(out: &mut String, x: f64) {
    // `{:e}` on +/-0.0 and normal values round-trips through str::parse
    let _ = write!(out, "{:.8e}", x);
}

/// `v x y z` lines followed by 1-based `f i j k` lines.
pub fn export_obj(mesh: &TriangleMesh) -> Vec<u8> {
    let mut s = String::with_capacity(HEADER.len() + mesh.vertices.len() * 48 + mesh.triangles.len() * 24);
    s.push_str(HEADER);
    for v in &mesh.vertices {
        s.push('v');
        for &x in v {
            s.push(' ');
            fmt_coord(&mut s, x);
        }
        s.push('\n');
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s.into_bytes()
}

/// Parses `v` and triangular `f` records; `f` tokens may carry `/vt/vn`
/// suffixes, which are ignored. Other record types are skipped.
pub fn read_obj(bytes: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    let mut mesh = TriangleMesh::default();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut v = [0.0; 3];
                for slot in &mut v {
                    *slot = toks
                        .next()
                        .ok_or_else(|| parse_err(line_no, "vertex needs 3 coordinates"))?
                        .parse()
                        .map_err(|e| parse_err(line_no, &format!("{e}")))?;
                }
                mesh.vertices.push(v);
            }
            Some("f") => {
                let idx: Vec<&str> = toks.collect();
                if idx.len() != 3 {
                    return Err(parse_err(line_no, &format!("face has {} vertices, only triangles supported", idx.len())));
                }
                let mut t = [0usize; 3];
                for (slot, tok) in t.iter_mut().zip(idx) {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: usize = first.parse().map_err(|e| parse_err(line_no, &format!("{e}")))?;
                    if i == 0 || i > mesh.vertices.len() {
                        return Err(parse_err(line_no, &format!("vertex index {i} out of range")));
                    }
                    *slot = i - 1;
                }
                mesh.triangles.push(t);
            }
            _ => {}
        }
    }
    Ok(mesh)
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

pub fn export_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.points.len()
    );
    for p in &cloud.points {
        fmt_coord(&mut s, p[0]);
        s.push(' ');
        fmt_coord(&mut s, p[1]);
        s.push(' ');
        fmt_coord(&mut s, p[2]);
        s.push('\n');
    }
    s.into_bytes()
}

/// Reads the vertex positions of an ASCII PLY file.
pub fn read_ply(bytes: &[u8]) -> Result<PointCloud> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(0, &e.to_string()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing ply magic")),
    }
    let mut count = None;
    for (n, line) in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if line.starts_with("format") && !line.contains("ascii") {
            return Err(parse_err(n + 1, "only ascii PLY is supported"));
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = Some(rest.trim().parse::<usize>().map_err(|e| parse_err(n + 1, &e.to_string()))?);
        }
    }
    let count = count.ok_or_else(|| parse_err(0, "no vertex element"))?;
    let mut points: Vec<Vec3> = Vec::with_capacity(count);
    for (n, line) in lines.take(count) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(n + 1, &e.to_string()))?;
        if vals.len() != 3 {
            return Err(parse_err(n + 1, "vertex needs 3 coordinates"));
        }
        points.push([vals[0], vals[1], vals[2]]);
    }
    if points.len() != count {
        return Err(parse_err(0, &format!("expected {count} vertices, found {}", points.len())));
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_triangle() {
        let mesh = TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        let text = String::from_utf8(export_obj(&mesh)).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        let faces: Vec<&str> = text.lines().filter(|l| l.starts_with("f ")).collect();
        assert_eq!(faces, vec!["f 1 2 3"]);
        assert_eq!(read_obj(text.as_bytes()).unwrap(), mesh);
    }

    #[test]
    fn empty_mesh_is_header_only() {
        let bytes = export_obj(&TriangleMesh::default());
        assert_eq!(bytes, HEADER.as_bytes());
        let ply = String::from_utf8(export_ply(&PointCloud::default())).unwrap();
        assert!(ply.ends_with("end_header\n"));
        assert!(read_ply(ply.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn rejects_quads_and_bad_indices() {
        assert!(read_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n").is_err());
        assert!(read_obj(b"v 0 0 0\nf 1 2 3\n").is_err());
        let m = read_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn ply_round_trip() {
        let cloud = PointCloud {
            points: vec![[0.123456789, -1.0, 3.5e-7], [0.0, -0.0, 2.0]],
        };
        let back = read_ply(&export_ply(&cloud)).unwrap();
        for (a, b) in cloud.points.iter().zip(&back.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-8 * a[k].abs().max(1e-30));
            }
        }
    }
}
