//! Parametric families of procedural shapes used as training and
//! reference datasets. Each member carries a descriptor vector (kind one-hot
//! followed by normalized parameters) usable as a condition.

use serde::{Deserialize, Serialize};

use super::{Primitive, ShapeSpec};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Spheres,
    Boxes,
    Tori,
    Capsules,
    Mixed,
}

/// Width of [`FamilyMember::descriptor`].
pub const DESCRIPTOR_DIM: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub spec: ShapeSpec,
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeFamily {
    pub kind: FamilyKind,
}

const SPHERE_R: (f64, f64) = (0.2, 0.6);
const BOX_HALF: (f64, f64) = (0.15, 0.45);
const TORUS_MAJOR: (f64, f64) = (0.3, 0.6);
const TORUS_MINOR: (f64, f64) = (0.08, 0.2);
const CAPSULE_LEN: (f64, f64) = (0.1, 0.4);
const CAPSULE_R: (f64, f64) = (0.1, 0.3);

fn lerp(r: (f64, f64), u: f64) -> f64 {
    r.0 + (r.1 - r.0) * u
}

impl ShapeFamily {
    pub fn new(kind: FamilyKind) -> Self {
        Self { kind }
    }

    /// `count` members. The first parameter of each kind is stratified over
    /// its range (one member per stratum, in random order); the others are
    /// drawn uniformly.
    pub fn generate(&self, count: usize, rng: &mut Rng) -> Vec<FamilyMember> {
        let kinds: Vec<FamilyKind> = (0..count)
            .map(|i| match self.kind {
                FamilyKind::Mixed => [
                    FamilyKind::Spheres,
                    FamilyKind::Boxes,
                    FamilyKind::Tori,
                    FamilyKind::Capsules,
                ][i % 4],
                k => k,
            })
            .collect();
        let mut out = Vec::with_capacity(count);
        for kind in [
            FamilyKind::Spheres,
            FamilyKind::Boxes,
            FamilyKind::Tori,
            FamilyKind::Capsules,
        ] {
            let n = kinds.iter().filter(|&&k| k == kind).count();
            if n == 0 {
                continue;
            }
            let mut strata: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(strata.as_mut_slice(), rng);
            for s in strata {
                let u = (s as f64 + rng.uniform()) / n as f64;
                out.push(member(kind, u, rng));
            }
        }
        out
    }
}

fn member(kind: FamilyKind, u: f64, rng: &mut Rng) -> FamilyMember {
    let mut descriptor = vec![0.0; DESCRIPTOR_DIM];
    let (primitive, params) = match kind {
        FamilyKind::Spheres => {
            descriptor[0] = 1.0;
            (Primitive::Sphere { radius: lerp(SPHERE_R, u) }, vec![u])
        }
        FamilyKind::Boxes => {
            descriptor[1] = 1.0;
            let (v, w) = (rng.uniform(), rng.uniform());
            (
                Primitive::Box {
                    half_extents: [lerp(BOX_HALF, u), lerp(BOX_HALF, v), lerp(BOX_HALF, w)],
                },
                vec![u, v, w],
            )
        }
        FamilyKind::Tori => {
            descriptor[2] = 1.0;
            let v = rng.uniform();
            (
                Primitive::Torus {
                    major: lerp(TORUS_MAJOR, u),
                    minor: lerp(TORUS_MINOR, v),
                },
                vec![u, v],
            )
        }
        FamilyKind::Capsules | FamilyKind::Mixed => {
            descriptor[3] = 1.0;
            let v = rng.uniform();
            (
                Primitive::Capsule {
                    half_length: lerp(CAPSULE_LEN, u),
                    radius: lerp(CAPSULE_R, v),
                },
                vec![u, v],
            )
        }
    };
    descriptor[4..4 + params.len()].copy_from_slice(&params);
    FamilyMember {
        spec: ShapeSpec::single(primitive),
        descriptor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn members_are_valid_and_stratified() {
        let members = ShapeFamily::new(FamilyKind::Spheres).generate(20, &mut Rng::seed(1));
        assert_eq!(members.len(), 20);
        let mut radii: Vec<f64> = members
            .iter()
            .map(|m| match m.spec.parts[0].primitive {
                Primitive::Sphere { radius } => radius,
                _ => unreachable!(),
            })
            .collect();
        radii.sort_by(f64::total_cmp);
        for (i, r) in radii.iter().enumerate() {
            let lo = lerp(SPHERE_R, i as f64 / 20.0);
            let hi = lerp(SPHERE_R, (i + 1) as f64 / 20.0);
            assert!(*r >= lo && *r <= hi);
        }
    }

    #[test]
    fn mixed_family_valid() {
        let members = ShapeFamily::new(FamilyKind::Mixed).generate(40, &mut Rng::seed(2));
        for m in &members {
            m.spec.validate().unwrap();
            assert_eq!(m.descriptor.len(), DESCRIPTOR_DIM);
            assert_eq!(m.descriptor[..4].iter().sum::<f64>(), 1.0);
        }
    }
}
