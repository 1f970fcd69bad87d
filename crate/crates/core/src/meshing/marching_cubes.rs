use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tables::{CORNERS, EDGES, TRIANGLES};
use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// A scalar field that can be evaluated on batches of points.
pub trait ScalarField {
    fn eval_points(&self, points: &[Vec3], out: &mut [f64]);
}

impl<F: Fn(Vec3) -> f64> ScalarField for F {
    fn eval_points(&self, points: &[Vec3], out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(points) {
            *o = self(p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn cube(half: f64) -> Self {
        Self {
            min: [-half; 3],
            max: [half; 3],
        }
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self::cube(1.05)
    }
}

const MIN_AREA: f64 = 1e-12;

/// Vertex identity: a crossing on a grid edge, or a grid point when the
/// crossing coincides with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum VertexKey {
    Edge(usize, u8),
    Point(usize),
}

/// Extracts the `iso` level set of `field` sampled on a grid of
/// `resolution` cells per axis spanning `bounds`.
///
/// Corners strictly below `iso` are inside. Vertices are welded on grid-edge
/// identity, triangles face outward (toward increasing field values), and
/// triangles with area below `1e-12` are dropped. A field without a sign
/// change yields an empty mesh.
pub fn marching_cubes<F: ScalarField + ?Sized>(
    field: &F,
    resolution: usize,
    bounds: Bounds,
    iso: f64,
) -> Result<TriangleMesh> {
    if resolution < 8 {
        return Err(Error::InvalidArgument(format!("resolution {resolution} < 8")));
    }
    let n = resolution + 1;
    let coord = |axis: usize, i: usize| -> f64 {
        let (lo, hi) = (bounds.min[axis], bounds.max[axis]);
        lo + (hi - lo) * (i as f64 / resolution as f64)
    };
    let point = |i: usize, j: usize, k: usize| -> Vec3 { [coord(0, i), coord(1, j), coord(2, k)] };
    let grid_id = |i: usize, j: usize, k: usize| (k * n + j) * n + i;

    // Field values slab by slab (z-major) so memory stays O(n^2).
    let eval_slab = |k: usize| -> Result<Vec<f64>> {
        let pts: Vec<Vec3> = (0..n * n).map(|idx| point(idx % n, idx / n, k)).collect();
        let mut vals = vec![0.0; n * n];
        field.eval_points(&pts, &mut vals);
        if let Some(bad) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "field is not finite at grid point {:?}",
                pts[bad]
            )));
        }
        Ok(vals)
    };

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut index: HashMap<VertexKey, usize> = HashMap::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    let mut lower = eval_slab(0)?;
    for k in 0..resolution {
        let upper = eval_slab(k + 1)?;
        for j in 0..resolution {
            for i in 0..resolution {
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    let slab = if off[2] == 0 { &lower } else { &upper };
                    vals[c] = slab[(j + off[1]) * n + i + off[0]];
                    if vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                let row = &TRIANGLES[case];
                if row[0] < 0 {
                    continue;
                }
                let mut edge_vertex = [usize::MAX; 12];
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let mut ids = [0usize; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let e = e as usize;
                        if edge_vertex[e] == usize::MAX {
                            let [c0, c1] = EDGES[e];
                            let (o0, o1) = (CORNERS[c0], CORNERS[c1]);
                            let g0 = [i + o0[0], j + o0[1], k + o0[2]];
                            let g1 = [i + o1[0], j + o1[1], k + o1[2]];
                            // orient every edge from its lower grid point
                            let ((g0, v0), (g1, v1)) = if grid_id(g0[0], g0[1], g0[2]) < grid_id(g1[0], g1[1], g1[2]) {
                                ((g0, vals[c0]), (g1, vals[c1]))
                            } else {
                                ((g1, vals[c1]), (g0, vals[c0]))
                            };
                            let id0 = grid_id(g0[0], g0[1], g0[2]);
                            let axis = (0..3).find(|&a| g0[a] != g1[a]).unwrap_or(0) as u8;
                            let t = (iso - v0) / (v1 - v0);
                            let key = if t <= 0.0 {
                                VertexKey::Point(id0)
                            } else if t >= 1.0 {
                                VertexKey::Point(grid_id(g1[0], g1[1], g1[2]))
                            } else {
                                VertexKey::Edge(id0, axis)
                            };
                            let next = vertices.len();
                            let vid = *index.entry(key).or_insert(next);
                            if vid == next {
                                let p0 = point(g0[0], g0[1], g0[2]);
                                let p1 = point(g1[0], g1[1], g1[2]);
                                let pos = match key {
                                    VertexKey::Point(id) if id == id0 => p0,
                                    VertexKey::Point(_) => p1,
                                    VertexKey::Edge(..) => geom::add(p0, geom::scale(geom::sub(p1, p0), t)),
                                };
                                vertices.push(pos);
                            }
                            edge_vertex[e] = vid;
                        }
                        *slot = edge_vertex[e];
                    }
                    if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
                        continue;
                    }
                    // table winding faces the inside corners; flip to face outward
                    triangles.push([ids[0], ids[2], ids[1]]);
                }
            }
        }
        lower = upper;
    }

    triangles.retain(|t| geom::triangle_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]) >= MIN_AREA);
    Ok(compact(vertices, triangles))
}

/// Drops unreferenced vertices, keeping first-use order.
fn compact(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> TriangleMesh {
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut kept = Vec::new();
    let triangles = triangles
        .into_iter()
        .map(|t| {
            t.map(|v| {
                if remap[v] == usize::MAX {
                    remap[v] = kept.len();
                    kept.push(vertices[v]);
                }
                remap[v]
            })
        })
        .collect();
    TriangleMesh {
        vertices: kept,
        triangles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::norm;

    fn sphere(r: f64) -> impl Fn(Vec3) -> f64 {
        move |p: Vec3| norm(p) - r
    }

    #[test]
    fn constant_field_gives_empty_mesh() {
        let mesh = marching_cubes(&|_: Vec3| 1.0, 16, Bounds::cube(1.0), 0.0).unwrap();
        assert!(mesh.is_empty());
        assert!(mesh.vertices.is_empty());
    }

    #[test]
    fn plane_field_is_flat() {
        let mesh = marching_cubes(&|p: Vec3| p[2], 16, Bounds::cube(1.0), 0.0).unwrap();
        assert!(!mesh.is_empty());
        assert!(mesh.vertices.iter().all(|v| v[2].abs() < 1e-6));
    }

    #[test]
    fn sphere_is_watertight_and_outward() {
        let mesh = marching_cubes(&sphere(0.5), 64, Bounds::cube(1.0), 0.0).unwrap();
        assert!(mesh.is_watertight(), "{:?}", &mesh.boundary_edges()[..3.min(mesh.boundary_edges().len())]);
        let diag = 3f64.sqrt() * 2.0 / 64.0;
        let max_err = mesh.vertices.iter().map(|v| (norm(*v) - 0.5).abs()).fold(0.0, f64::max);
        assert!(max_err < diag, "{max_err}");
        let vol = mesh.signed_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!(vol > 0.0 && (vol - exact).abs() / exact < 0.02, "{vol} vs {exact}");
    }

    #[test]
    fn volume_error_shrinks_with_resolution() {
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        let errs: Vec<f64> = [16, 32, 64, 128]
            .iter()
            .map(|&res| {
                let mesh = marching_cubes(&sphere(0.5), res, Bounds::cube(1.05), 0.0).unwrap();
                (mesh.signed_volume() - exact).abs()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn low_resolution_rejected() {
        assert!(marching_cubes(&sphere(0.5), 7, Bounds::cube(1.0), 0.0).is_err());
    }

    #[test]
    fn random_fields_stay_watertight() {
        use crate::numerics::Rng;
        let mut rng = Rng::seed(4);
        for _ in 0..5 {
            // sum of a few random blobs: closed surfaces with saddles
            let centers: Vec<(Vec3, f64)> = (0..4)
                .map(|_| {
                    (
                        [rng.uniform_in(-0.4, 0.4), rng.uniform_in(-0.4, 0.4), rng.uniform_in(-0.4, 0.4)],
                        rng.uniform_in(0.15, 0.3),
                    )
                })
                .collect();
            let f = move |p: Vec3| {
                let s: f64 = centers
                    .iter()
                    .map(|(c, r)| (-(crate::geom::dist2(p, *c)) / (r * r)).exp())
                    .sum();
                0.5 - s
            };
            let mesh = marching_cubes(&f, 24, Bounds::cube(1.0), 0.0).unwrap();
            assert!(mesh.is_watertight());
        }
    }
}
