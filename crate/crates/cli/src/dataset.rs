//! On-disk procedural dataset: `dataset.json`, one SDF bank per training
//! shape, and analytic meshes of the held-out reference shapes.

use std::path::{Path, PathBuf};

use ldm3d_core::meshing::{export_obj, marching_cubes, Bounds, TriangleMesh};
use ldm3d_core::numerics::Rng;
use ldm3d_core::shapes::family::FamilyMember;
use ldm3d_core::shapes::{analytic_sdf, sample_bank, FamilyKind, SampleBank, ShapeFamily, ShapeSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub spec: ShapeSpec,
    pub descriptor: Vec<f64>,
    /// Bank file for training shapes, OBJ file for held-out ones.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub family: FamilyKind,
    pub seed: u64,
    pub samples_per_shape: usize,
    pub fingerprint: String,
    pub train: Vec<Entry>,
    pub held_out: Vec<Entry>,
}

pub struct Dataset {
    pub manifest: DatasetManifest,
    pub banks: Vec<SampleBank>,
}

impl Dataset {
    pub fn descriptors(&self) -> Vec<Vec<f64>> {
        self.manifest.train.iter().map(|e| e.descriptor.clone()).collect()
    }
}

fn fingerprint_of(train: &[Entry], bank_bytes: &[Vec<u8>]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(train).expect("entries serialize"));
    for b in bank_bytes {
        h.update(b);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Training and held-out members; the two sets are drawn independently.
pub fn members(config: &RunConfig, seed: u64) -> (Vec<FamilyMember>, Vec<FamilyMember>) {
    let family = ShapeFamily::new(config.dataset.family);
    let train = family.generate(config.dataset.num_shapes, &mut Rng::stream(seed, 0));
    let held_out = family.generate(config.dataset.held_out, &mut Rng::stream(seed, 1));
    (train, held_out)
}

/// SDF bank of training member `i`; bank `i` samples with its own stream.
pub fn training_bank(config: &RunConfig, seed: u64, i: usize, spec: &ShapeSpec) -> Result<SampleBank> {
    let mut rng = Rng::stream(seed, 1000 + i as u64);
    Ok(sample_bank(spec, i as u64, config.dataset.samples_per_shape, &mut rng)?)
}

/// Marching-cubes mesh of a shape's analytic SDF at the configured resolution.
pub fn reference_mesh(config: &RunConfig, spec: &ShapeSpec) -> Result<TriangleMesh> {
    let bounds = Bounds::cube(config.mesh.half_extent);
    Ok(marching_cubes(&|p| analytic_sdf(spec, p), config.mesh.resolution, bounds, 0.0)?)
}

pub fn build(config: &RunConfig, seed: u64, out: &Path) -> Result<DatasetManifest> {
    let (train, held_out) = members(config, seed);
    let mut entries = Vec::with_capacity(train.len());
    let mut bank_bytes = Vec::with_capacity(train.len());
    for (i, m) in train.iter().enumerate() {
        let bank = training_bank(config, seed, i, &m.spec)?;
        let mut bytes = Vec::new();
        bank.write_to(&mut bytes)?;
        let file = format!("bank_{i:04}.sdf");
        write(&out.join(&file), &bytes)?;
        bank_bytes.push(bytes);
        entries.push(Entry {
            spec: m.spec.clone(),
            descriptor: m.descriptor.clone(),
            file,
        });
    }
    let ref_dir = out.join("held_out");
    std::fs::create_dir_all(&ref_dir).map_err(|e| CliError::io(&ref_dir, e))?;
    let mut held = Vec::with_capacity(held_out.len());
    for (i, m) in held_out.iter().enumerate() {
        let file = format!("held_out/shape_{i:03}.obj");
        write(&out.join(&file), &export_obj(&reference_mesh(config, &m.spec)?))?;
        held.push(Entry {
            spec: m.spec.clone(),
            descriptor: m.descriptor.clone(),
            file,
        });
    }
    let manifest = DatasetManifest {
        family: config.dataset.family,
        seed,
        samples_per_shape: config.dataset.samples_per_shape,
        fingerprint: fingerprint_of(&entries, &bank_bytes),
        train: entries,
        held_out: held,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write(&out.join(MANIFEST), &json)?;
    Ok(manifest)
}

/// `path` is the dataset directory or its `dataset.json`.
pub fn load(path: &Path) -> Result<Dataset> {
    let (dir, manifest_path): (PathBuf, PathBuf) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST))
    } else {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    let text = std::fs::read(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&text).map_err(|e| CliError::Dataset(format!("{}: {e}", manifest_path.display())))?;
    let mut banks = Vec::with_capacity(manifest.train.len());
    let mut bank_bytes = Vec::with_capacity(manifest.train.len());
    for e in &manifest.train {
        let p = dir.join(&e.file);
        let bytes = std::fs::read(&p).map_err(|err| CliError::io(&p, err))?;
        banks.push(SampleBank::read_from(bytes.as_slice())?);
        bank_bytes.push(bytes);
    }
    if banks.is_empty() {
        return Err(CliError::Dataset("no training shapes".into()));
    }
    let actual = fingerprint_of(&manifest.train, &bank_bytes);
    if actual != manifest.fingerprint {
        return Err(CliError::Dataset(format!(
            "fingerprint mismatch: manifest says {}, files hash to {actual}",
            manifest.fingerprint
        )));
    }
    Ok(Dataset { manifest, banks })
}
