//! Ground-truth signed distance providers and SDF training samples.

pub mod bank;
pub mod family;
pub mod mesh_sdf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Mat3, Vec3};

pub use bank::{balanced_batch, sample_bank, BalancedBatch, SampleBank, SampleTag, SdfSample};
pub use family::{FamilyKind, ShapeFamily};
pub use mesh_sdf::MeshSdf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Primitive {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
    /// Ring in the local xy-plane.
    Torus { major: f64, minor: f64 },
    /// Segment along the local z-axis from `-half_length` to `half_length`.
    Capsule { half_length: f64, radius: f64 },
    /// Capped cylinder along the local z-axis.
    Cylinder { half_height: f64, radius: f64 },
}

impl Primitive {
    fn params(&self) -> Vec<f64> {
        match *self {
            Primitive::Sphere { radius } => vec![radius],
            Primitive::Box { half_extents } => half_extents.to_vec(),
            Primitive::Torus { major, minor } => vec![major, minor],
            Primitive::Capsule { half_length, radius } => vec![half_length, radius],
            Primitive::Cylinder { half_height, radius } => vec![half_height, radius],
        }
    }

    /// Radius of a ball around the local origin containing the primitive.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius } => radius,
            Primitive::Box { half_extents } => geom::norm(half_extents),
            Primitive::Torus { major, minor } => major + minor,
            Primitive::Capsule { half_length, radius } => half_length + radius,
            Primitive::Cylinder { half_height, radius } => (half_height * half_height + radius * radius).sqrt(),
        }
    }

    /// Exact signed distance in the primitive's local frame.
    pub fn sdf(&self, p: Vec3) -> f64 {
        match *self {
            Primitive::Sphere { radius } => geom::norm(p) - radius,
            Primitive::Box { half_extents } => {
                let q = [
                    p[0].abs() - half_extents[0],
                    p[1].abs() - half_extents[1],
                    p[2].abs() - half_extents[2],
                ];
                let outside = geom::norm([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Primitive::Torus { major, minor } => {
                let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
                (ring * ring + p[2] * p[2]).sqrt() - minor
            }
            Primitive::Capsule { half_length, radius } => {
                let z = p[2].clamp(-half_length, half_length);
                geom::norm([p[0], p[1], p[2] - z]) - radius
            }
            Primitive::Cylinder { half_height, radius } => {
                let dx = (p[0] * p[0] + p[1] * p[1]).sqrt() - radius;
                let dz = p[2].abs() - half_height;
                dx.max(dz).min(0.0) + (dx.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt()
            }
        }
    }
}

/// Rigid transform mapping local to world coordinates: `x = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self {
            rotation: geom::IDENTITY,
            translation: [0.0; 3],
        }
    }
}

impl Pose {
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        geom::mat_t_vec(&self.rotation, geom::sub(p, self.translation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub primitive: Primitive,
    #[serde(default)]
    pub pose: Pose,
}

/// A shape: one posed primitive or the union of several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub parts: Vec<Part>,
}

impl ShapeSpec {
    pub fn single(primitive: Primitive) -> Self {
        Self {
            parts: vec![Part {
                primitive,
                pose: Pose::default(),
            }],
        }
    }

    /// All parameters strictly positive and all geometry inside the unit ball.
    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::InvalidArgument("shape has no parts".into()));
        }
        for part in &self.parts {
            if part.primitive.params().iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-positive parameter in {:?}",
                    part.primitive
                )));
            }
            let reach = geom::norm(part.pose.translation) + part.primitive.bounding_radius();
            if reach > 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "{:?} reaches {reach:.3} from the origin, outside the unit ball",
                    part.primitive
                )));
            }
        }
        Ok(())
    }

    pub fn bounding_radius(&self) -> f64 {
        self.parts
            .iter()
            .map(|p| geom::norm(p.pose.translation) + p.primitive.bounding_radius())
            .fold(0.0, f64::max)
    }
}

/// Signed distance to `spec` at `p` (negative inside).
///
/// Exact for single primitives. For unions this is the minimum over parts,
/// which is exact outside and a lower bound on the magnitude inside where
/// parts overlap.
pub fn analytic_sdf(spec: &ShapeSpec, p: Vec3) -> f64 {
    spec.parts
        .iter()
        .map(|part| part.primitive.sdf(part.pose.to_local(p)))
        .fold(f64::INFINITY, f64::min)
}

/// Central-difference gradient of the analytic SDF.
pub(crate) fn analytic_gradient(spec: &ShapeSpec, p: Vec3) -> Vec3 {
    let h = 1e-6;
    let mut g = [0.0; 3];
    for (k, gk) in g.iter_mut().enumerate() {
        let (mut a, mut b) = (p, p);
        a[k] += h;
        b[k] -= h;
        *gk = (analytic_sdf(spec, a) - analytic_sdf(spec, b)) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_values() {
        let s = ShapeSpec::single(Primitive::Sphere { radius: 0.5 });
        assert_eq!(analytic_sdf(&s, [0.0, 0.0, 1.0]), 0.5);
        assert_eq!(analytic_sdf(&s, [0.0, 0.0, 0.0]), -0.5);
    }

    #[test]
    fn box_corner_distance() {
        let s = ShapeSpec::single(Primitive::Box {
            half_extents: [0.3, 0.3, 0.3],
        });
        let d = analytic_sdf(&s, [0.4, 0.4, 0.4]);
        assert!((d - 3f64.sqrt() * 0.1).abs() < 1e-12, "{d}");
        assert!((analytic_sdf(&s, [0.0, 0.0, 0.0]) + 0.3).abs() < 1e-15);
        assert!((analytic_sdf(&s, [0.1, 0.0, 0.25]) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn torus_capsule_cylinder() {
        let t = Primitive::Torus { major: 0.5, minor: 0.1 };
        assert!((t.sdf([0.5, 0.0, 0.0]) + 0.1).abs() < 1e-15);
        assert!((t.sdf([0.0, 0.0, 0.0]) - 0.4).abs() < 1e-15);
        let c = Primitive::Capsule {
            half_length: 0.3,
            radius: 0.1,
        };
        assert!((c.sdf([0.0, 0.0, 0.6]) - 0.2).abs() < 1e-15);
        assert!((c.sdf([0.2, 0.0, 0.1]) - 0.1).abs() < 1e-15);
        let y = Primitive::Cylinder {
            half_height: 0.3,
            radius: 0.2,
        };
        assert!((y.sdf([0.0, 0.0, 0.0]) + 0.2).abs() < 1e-15);
        assert!((y.sdf([0.5, 0.0, 0.7]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posed_union() {
        let spec = ShapeSpec {
            parts: vec![
                Part {
                    primitive: Primitive::Sphere { radius: 0.2 },
                    pose: Pose {
                        rotation: geom::IDENTITY,
                        translation: [0.5, 0.0, 0.0],
                    },
                },
                Part {
                    primitive: Primitive::Box {
                        half_extents: [0.1, 0.4, 0.1],
                    },
                    pose: Pose {
                        rotation: geom::rotation([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2),
                        translation: [-0.2, 0.0, 0.0],
                    },
                },
            ],
        };
        spec.validate().unwrap();
        assert!((analytic_sdf(&spec, [0.5, 0.0, 0.3]) - 0.1).abs() < 1e-12);
        // rotated box spans x in [-0.6, 0.2]
        assert!((analytic_sdf(&spec, [-0.7, 0.0, 0.0]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(ShapeSpec::single(Primitive::Sphere { radius: 1.2 }).validate().is_err());
        assert!(ShapeSpec::single(Primitive::Sphere { radius: 0.0 }).validate().is_err());
        assert!(ShapeSpec { parts: vec![] }.validate().is_err());
    }
}
