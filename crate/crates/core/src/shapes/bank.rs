//! Pre-computed SDF training samples and balanced batch drawing.
//!
//! A bank holds `5%` points uniform in the bounding box and `95%` points
//! near the surface, half perturbed with variance `2.5e-3`, half with
//! `2.5e-4`. Samples are stored grouped by tag in that order.

use std::io::{Read, Write};

use rand::seq::index;

use super::mesh_sdf::MeshSdf;
use super::{analytic_gradient, analytic_sdf, ShapeSpec};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::meshing::sample_surface;
use crate::numerics::Rng;

pub const UNIFORM_FRACTION: f64 = 0.05;
pub const HIGH_NOISE_VARIANCE: f64 = 2.5e-3;
pub const LOW_NOISE_VARIANCE: f64 = 2.5e-4;
/// Half-width of the box uniform samples are drawn from.
pub const UNIFORM_BOX_HALF: f64 = 1.05;

const MAGIC: &[u8; 9] = b"3DLDM-SDF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub p: [f32; 3],
    pub d: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleTag {
    Uniform,
    SurfaceHighNoise,
    SurfaceLowNoise,
}

/// Something that can report a signed distance and produce surface points.
pub trait SdfSource {
    fn signed_distance(&self, p: Vec3) -> f64;
    fn surface_points(&self, n: usize, rng: &mut Rng) -> Result<Vec<Vec3>>;
}

impl SdfSource for ShapeSpec {
    fn signed_distance(&self, p: Vec3) -> f64 {
        analytic_sdf(self, p)
    }

    /// Uniform points in the bounding ball projected onto the zero level set
    /// with up to 20 Newton steps along the gradient.
    fn surface_points(&self, n: usize, rng: &mut Rng) -> Result<Vec<Vec3>> {
        let radius = self.bounding_radius() * 1.05;
        let mut out = Vec::with_capacity(n);
        let max_attempts = 100 * n + 1000;
        let mut attempts = 0;
        while out.len() < n {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::Degenerate(format!(
                    "found only {} of {n} surface points",
                    out.len()
                )));
            }
            let mut p = loop {
                let q = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
                if geom::dot(q, q) <= 1.0 {
                    break geom::scale(q, radius);
                }
            };
            let mut d = analytic_sdf(self, p);
            for _ in 0..20 {
                if d.abs() < 1e-5 {
                    break;
                }
                let g = analytic_gradient(self, p);
                let gn = geom::norm(g);
                if gn < 0.5 {
                    break;
                }
                p = geom::sub(p, geom::scale(g, d / (gn * gn)));
                d = analytic_sdf(self, p);
            }
            if d.abs() < 1e-5 {
                out.push(p);
            }
        }
        Ok(out)
    }
}

impl SdfSource for MeshSdf {
    fn signed_distance(&self, p: Vec3) -> f64 {
        self.sdf(p)
    }

    fn surface_points(&self, n: usize, rng: &mut Rng) -> Result<Vec<Vec3>> {
        Ok(sample_surface(self.mesh(), n, rng)?.points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBank {
    pub shape_id: u64,
    samples: Vec<SdfSample>,
    /// Sample counts per tag: uniform, high-noise, low-noise.
    counts: [usize; 3],
    positive: Vec<u32>,
    negative: Vec<u32>,
}

impl SampleBank {
    pub fn from_parts(shape_id: u64, samples: Vec<SdfSample>, counts: [usize; 3]) -> Result<Self> {
        if counts.iter().sum::<usize>() != samples.len() {
            return Err(Error::BankFormat(format!(
                "tag counts {counts:?} do not add up to {} samples",
                samples.len()
            )));
        }
        if samples.len() > u32::MAX as usize {
            return Err(Error::InvalidArgument("bank too large".into()));
        }
        let mut positive = Vec::new();
        let mut negative = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if s.d < 0.0 {
                negative.push(i as u32);
            } else {
                positive.push(i as u32);
            }
        }
        Ok(Self {
            shape_id,
            samples,
            counts,
            positive,
            negative,
        })
    }

    pub fn samples(&self) -> &[SdfSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn num_positive(&self) -> usize {
        self.positive.len()
    }

    pub fn num_negative(&self) -> usize {
        self.negative.len()
    }

    pub fn tag(&self, i: usize) -> SampleTag {
        if i < self.counts[0] {
            SampleTag::Uniform
        } else if i < self.counts[0] + self.counts[1] {
            SampleTag::SurfaceHighNoise
        } else {
            SampleTag::SurfaceLowNoise
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.shape_id.to_le_bytes())?;
        for c in self.counts {
            w.write_all(&(c as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.samples.len() * 16);
        for s in &self.samples {
            for x in [s.p[0], s.p[1], s.p[2], s.d] {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::BankFormat("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::BankFormat(format!("unsupported version {version}, expected {VERSION}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let shape_id = u64::from_le_bytes(b8);
        let mut counts = [0usize; 3];
        for c in &mut counts {
            r.read_exact(&mut b8)?;
            *c = u64::from_le_bytes(b8) as usize;
        }
        let total: usize = counts.iter().sum();
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        if data.len() != total * 16 {
            return Err(Error::BankFormat(format!(
                "expected {} payload bytes, found {}",
                total * 16,
                data.len()
            )));
        }
        let f = |i: usize| f32::from_le_bytes([data[i], data[i + 1], data[i + 2], data[i + 3]]);
        let samples = (0..total)
            .map(|k| {
                let o = k * 16;
                SdfSample {
                    p: [f(o), f(o + 4), f(o + 8)],
                    d: f(o + 12),
                }
            })
            .collect();
        Self::from_parts(shape_id, samples, counts)
    }
}

fn make_sample<S: SdfSource + ?Sized>(source: &S, p: Vec3) -> SdfSample {
    // distance of the stored (f32-rounded) point, so signs stay consistent
    let p32 = [p[0] as f32, p[1] as f32, p[2] as f32];
    let d = source.signed_distance([p32[0] as f64, p32[1] as f64, p32[2] as f64]);
    SdfSample { p: p32, d: d as f32 }
}

/// Generates `n` training samples for one shape.
pub fn sample_bank<S: SdfSource + ?Sized>(source: &S, shape_id: u64, n: usize, rng: &mut Rng) -> Result<SampleBank> {
    if n < 100 {
        return Err(Error::InvalidArgument(format!("bank size {n} < 100")));
    }
    let n_uniform = (n as f64 * UNIFORM_FRACTION).round() as usize;
    let n_surface = n - n_uniform;
    let n_high = n_surface / 2;
    let n_low = n_surface - n_high;

    let mut samples = Vec::with_capacity(n);
    for _ in 0..n_uniform {
        let p = [
            rng.uniform_in(-UNIFORM_BOX_HALF, UNIFORM_BOX_HALF),
            rng.uniform_in(-UNIFORM_BOX_HALF, UNIFORM_BOX_HALF),
            rng.uniform_in(-UNIFORM_BOX_HALF, UNIFORM_BOX_HALF),
        ];
        samples.push(make_sample(source, p));
    }
    let surface = source.surface_points(n_surface, rng)?;
    for (i, s) in surface.into_iter().enumerate() {
        let std = if i < n_high {
            HIGH_NOISE_VARIANCE.sqrt()
        } else {
            LOW_NOISE_VARIANCE.sqrt()
        };
        let p = [s[0] + std * rng.normal(), s[1] + std * rng.normal(), s[2] + std * rng.normal()];
        samples.push(make_sample(source, p));
    }
    SampleBank::from_parts(shape_id, samples, [n_uniform, n_high, n_low])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedBatch {
    pub samples: Vec<SdfSample>,
    /// Set when one sign could not supply its half of the batch.
    pub imbalanced: bool,
}

/// Draws `k` distinct samples, half with negative and half with
/// non-negative distance. When one sign runs short, all of it is taken and
/// the rest is filled from the other sign.
pub fn balanced_batch(bank: &SampleBank, k: usize, rng: &mut Rng) -> Result<BalancedBatch> {
    if bank.is_empty() {
        return Err(Error::Empty("sample bank"));
    }
    if k > bank.len() {
        return Err(Error::InvalidArgument(format!(
            "batch of {k} from a bank of {}",
            bank.len()
        )));
    }
    let want_neg = k / 2;
    let want_pos = k - want_neg;
    let (np, nn) = (bank.positive.len(), bank.negative.len());
    let (take_pos, take_neg) = if np >= want_pos && nn >= want_neg {
        (want_pos, want_neg)
    } else if np < want_pos {
        (np, k - np)
    } else {
        (k - nn, nn)
    };
    let imbalanced = take_pos != want_pos;
    let mut samples = Vec::with_capacity(k);
    for i in index::sample(rng, np, take_pos) {
        samples.push(bank.samples[bank.positive[i] as usize]);
    }
    for i in index::sample(rng, nn, take_neg) {
        samples.push(bank.samples[bank.negative[i] as usize]);
    }
    Ok(BalancedBatch { samples, imbalanced })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::Primitive;

    fn sphere() -> ShapeSpec {
        ShapeSpec::single(Primitive::Sphere { radius: 0.5 })
    }

    #[test]
    fn composition_and_noise_bound() {
        let bank = sample_bank(&sphere(), 0, 10_000, &mut Rng::seed(1)).unwrap();
        assert_eq!(bank.counts(), [500, 4750, 4750]);
        let bound = 5.0 * HIGH_NOISE_VARIANCE.sqrt();
        let surface: Vec<&SdfSample> = bank.samples()[500..].iter().collect();
        let within = surface.iter().filter(|s| (s.d as f64).abs() <= bound).count();
        assert!(within as f64 >= 0.999 * surface.len() as f64);
        assert_eq!(bank.tag(0), SampleTag::Uniform);
        assert_eq!(bank.tag(500), SampleTag::SurfaceHighNoise);
        assert_eq!(bank.tag(9999), SampleTag::SurfaceLowNoise);
    }

    #[test]
    fn signs_agree_with_analytic_sdf() {
        let spec = ShapeSpec::single(Primitive::Torus { major: 0.5, minor: 0.15 });
        let bank = sample_bank(&spec, 3, 5000, &mut Rng::seed(2)).unwrap();
        for s in bank.samples() {
            let d = analytic_sdf(&spec, [s.p[0] as f64, s.p[1] as f64, s.p[2] as f64]);
            assert_eq!(d < 0.0, s.d < 0.0);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = sample_bank(&sphere(), 0, 1000, &mut Rng::seed(9)).unwrap();
        let b = sample_bank(&sphere(), 0, 1000, &mut Rng::seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_small_rejected() {
        assert!(sample_bank(&sphere(), 0, 99, &mut Rng::seed(0)).is_err());
    }

    #[test]
    fn balanced_halves() {
        let bank = sample_bank(&sphere(), 0, 4000, &mut Rng::seed(4)).unwrap();
        let mut rng = Rng::seed(5);
        let b = balanced_batch(&bank, 2, &mut rng).unwrap();
        assert_eq!(b.samples.iter().filter(|s| s.d < 0.0).count(), 1);
        let b = balanced_batch(&bank, 1000, &mut rng).unwrap();
        assert_eq!(b.samples.iter().filter(|s| s.d < 0.0).count(), 500);
        assert!(!b.imbalanced);
    }

    #[test]
    fn positive_only_bank_flags_imbalance() {
        let samples: Vec<SdfSample> = (0..200)
            .map(|i| SdfSample {
                p: [i as f32, 0.0, 0.0],
                d: 1.0,
            })
            .collect();
        let bank = SampleBank::from_parts(0, samples, [200, 0, 0]).unwrap();
        let b = balanced_batch(&bank, 50, &mut Rng::seed(0)).unwrap();
        assert_eq!(b.samples.len(), 50);
        assert!(b.imbalanced);
        let mut xs: Vec<u32> = b.samples.iter().map(|s| s.p[0] as u32).collect();
        xs.sort_unstable();
        xs.dedup();
        assert_eq!(xs.len(), 50, "drawn without replacement");
    }

    #[test]
    fn file_round_trip_and_rejects_garbage() {
        let bank = sample_bank(&sphere(), 42, 300, &mut Rng::seed(6)).unwrap();
        let mut buf = Vec::new();
        bank.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..9], b"3DLDM-SDF");
        assert_eq!(buf.len(), 9 + 4 + 8 + 24 + 300 * 16);
        let back = SampleBank::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, bank);
        assert!(SampleBank::read_from(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(SampleBank::read_from(bad.as_slice()).is_err());
    }
}
