//! Isosurface extraction, surface sampling and mesh/point-cloud file I/O.

pub mod io;
pub mod marching_cubes;
pub mod primitives;
pub mod surface;
pub mod tables;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geom::{self, Vec3};

pub use io::{export_obj, export_ply, read_obj, read_ply};
pub use marching_cubes::{marching_cubes, Bounds, ScalarField};
pub use surface::sample_surface;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                geom::triangle_area(a, b, c)
            })
            .sum()
    }

    /// Signed enclosed volume; positive for outward-oriented closed meshes.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                geom::dot(a, geom::cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Undirected edges not bordered by exactly two triangles.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut bad: Vec<(usize, usize)> = counts.into_iter().filter(|&(_, c)| c != 2).map(|(e, _)| e).collect();
        bad.sort_unstable();
        bad
    }

    /// Every edge borders exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.is_empty() && self.boundary_edges().is_empty()
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| geom::add(v, offset)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn validate_indices(&self) -> bool {
        self.triangles.iter().flatten().all(|&i| i < self.vertices.len())
    }
}
