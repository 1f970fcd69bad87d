//! Signed distance to a watertight triangle mesh. The magnitude is the
//! distance to the closest triangle; the sign comes from the generalized
//! winding number (inside where it exceeds 1/2).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::meshing::TriangleMesh;

#[derive(Debug, Clone)]
pub struct MeshSdf {
    mesh: TriangleMesh,
}

impl MeshSdf {
    /// Accepts only meshes whose every edge borders exactly two triangles.
    pub fn new(mesh: TriangleMesh) -> Result<Self> {
        if !mesh.validate_indices() {
            return Err(Error::InvalidArgument("triangle index out of range".into()));
        }
        if mesh.is_empty() {
            return Err(Error::Empty("mesh has no triangles"));
        }
        let edges = mesh.boundary_edges();
        if !edges.is_empty() {
            return Err(Error::NotWatertight { edges });
        }
        Ok(Self { mesh })
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn unsigned_distance(&self, p: Vec3) -> f64 {
        let mut best = f64::INFINITY;
        for t in 0..self.mesh.triangles.len() {
            let [a, b, c] = self.mesh.triangle(t);
            let q = geom::closest_point_on_triangle(p, a, b, c);
            best = best.min(geom::dist2(p, q));
        }
        best.sqrt()
    }

    /// Sum of signed solid angles over `4 pi`: 1 inside, 0 outside.
    pub fn winding_number(&self, p: Vec3) -> f64 {
        let mut total = 0.0;
        for t in 0..self.mesh.triangles.len() {
            let [a, b, c] = self.mesh.triangle(t);
            let (a, b, c) = (geom::sub(a, p), geom::sub(b, p), geom::sub(c, p));
            let (la, lb, lc) = (geom::norm(a), geom::norm(b), geom::norm(c));
            let num = geom::dot(a, geom::cross(b, c));
            let den = la * lb * lc + geom::dot(a, b) * lc + geom::dot(a, c) * lb + geom::dot(b, c) * la;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * PI)
    }

    pub fn sdf(&self, p: Vec3) -> f64 {
        let d = self.unsigned_distance(p);
        if d == 0.0 {
            return 0.0;
        }
        if self.winding_number(p) > 0.5 {
            -d
        } else {
            d
        }
    }
}

/// Signed distance from `p` to a watertight `mesh`.
pub fn mesh_sdf(mesh: &TriangleMesh, p: Vec3) -> Result<f64> {
    Ok(MeshSdf::new(mesh.clone())?.sdf(p))
}
