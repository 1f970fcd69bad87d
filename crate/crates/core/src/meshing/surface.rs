use super::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::numerics::Rng;

/// Draws `n` points uniformly over the mesh surface: a triangle with
/// probability proportional to its area, then a uniform barycentric point.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, rng: &mut Rng) -> Result<PointCloud> {
    if mesh.is_empty() {
        return Err(Error::Empty("mesh has no triangles"));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(t);
        total += geom::triangle_area(a, b, c);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("mesh has zero surface area".into()));
    }
    let points = (0..n)
        .map(|_| {
            let u = rng.uniform() * total;
            let t = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(t);
            point_in_triangle(a, b, c, rng.uniform(), rng.uniform())
        })
        .collect();
    Ok(PointCloud { points })
}

fn point_in_triangle(a: Vec3, b: Vec3, c: Vec3, r1: f64, r2: f64) -> Vec3 {
    let s = r1.sqrt();
    let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
    [
        wa * a[0] + wb * b[0] + wc * c[0],
        wa * a[1] + wb * b[1] + wc * c[1],
        wa * a[2] + wb * b[2] + wc * c[2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshing::primitives::icosphere;

    #[test]
    fn points_stay_inside_single_triangle() {
        let mesh = TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        let cloud = sample_surface(&mesh, 5000, &mut Rng::seed(1)).unwrap();
        for p in cloud.points {
            // barycentric coords w.r.t. this triangle are (1 - x - y, x, y)
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-12);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn area_weighting() {
        // areas 1 and 3
        let mesh = TriangleMesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [2.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [10.0, 0.0, 0.0],
                [13.0, 0.0, 0.0],
                [10.0, 2.0, 0.0],
            ],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
        };
        let n = 100_000;
        let cloud = sample_surface(&mesh, n, &mut Rng::seed(2)).unwrap();
        let second = cloud.points.iter().filter(|p| p[0] >= 10.0).count() as f64 / n as f64;
        assert!((second - 0.75).abs() < 0.03, "{second}");
    }

    #[test]
    fn icosphere_mean_radius() {
        let mesh = icosphere(0.5, 4);
        let cloud = sample_surface(&mesh, 100_000, &mut Rng::seed(3)).unwrap();
        let mean = cloud.points.iter().map(|p| geom::norm(*p)).sum::<f64>() / cloud.len() as f64;
        assert!((mean - 0.5).abs() < 1e-3, "{mean}");
    }

    #[test]
    fn empty_mesh_rejected() {
        assert!(sample_surface(&TriangleMesh::default(), 10, &mut Rng::seed(0)).is_err());
    }
}
