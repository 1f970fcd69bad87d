//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "3DLDM" | version: u32 | header_len: u32 | header JSON | crc32(header)
//! for each blob in header order: f32 values | crc32(blob bytes)
//! crc32(every preceding byte)
//! ```

use std::path::Path;

use ldm3d_core::autodecoder::{Autodecoder, AutodecoderConfig, ShapeLatent};
use ldm3d_core::diffusion::{Denoiser, DenoiserConfig, ScheduleSpec};
use ldm3d_core::numerics::{MlpArch, MlpParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 5] = b"3DLDM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Autodecoder,
    Diffusion,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Autodecoder => "autodecoder",
            ModelKind::Diffusion => "diffusion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kind: ModelKind,
    pub arch: MlpArch,
    pub schedule: Option<ScheduleSpec>,
    pub config: serde_json::Value,
    pub dataset_fingerprint: String,
    pub seed: u64,
    pub latent_scale: Option<f64>,
    /// Per-shape condition vectors stored with a latent table.
    pub descriptors: Option<Vec<Vec<f64>>>,
    pub blobs: Vec<BlobInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutodecoderCheckpoint {
    pub config: AutodecoderConfig,
    pub model: Autodecoder,
    pub latents: Vec<ShapeLatent>,
    pub descriptors: Vec<Vec<f64>>,
    pub dataset_fingerprint: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionCheckpoint {
    pub model: Denoiser,
    pub dataset_fingerprint: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Autodecoder(AutodecoderCheckpoint),
    Diffusion(DiffusionCheckpoint),
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        match self {
            Checkpoint::Autodecoder(_) => ModelKind::Autodecoder,
            Checkpoint::Diffusion(_) => ModelKind::Diffusion,
        }
    }
}

/// Hex SHA-256 of `bytes`.
pub fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn param_blobs(params: &MlpParams<f32>) -> Vec<(String, Vec<f32>)> {
    params
        .tensor_names()
        .into_iter()
        .zip(params.tensors())
        .map(|(n, t)| (n, t.to_vec()))
        .collect()
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let (header, blobs) = match ckpt {
        Checkpoint::Autodecoder(a) => {
            let mut blobs = param_blobs(&a.model.params);
            blobs.push(("latents".into(), a.latents.iter().flatten().copied().collect()));
            let header = Header {
                kind: ModelKind::Autodecoder,
                arch: a.model.arch.clone(),
                schedule: None,
                config: to_json(&a.config),
                dataset_fingerprint: a.dataset_fingerprint.clone(),
                seed: a.seed,
                latent_scale: None,
                descriptors: Some(a.descriptors.clone()),
                blobs: vec![],
            };
            (header, blobs)
        }
        Checkpoint::Diffusion(d) => {
            let header = Header {
                kind: ModelKind::Diffusion,
                arch: d.model.arch(),
                schedule: Some(d.model.config.schedule),
                config: to_json(&d.model.config),
                dataset_fingerprint: d.dataset_fingerprint.clone(),
                seed: d.seed,
                latent_scale: Some(d.model.latent_scale),
                descriptors: None,
                blobs: vec![],
            };
            (header, param_blobs(&d.model.params))
        }
    };
    let header = Header {
        blobs: blobs
            .iter()
            .map(|(name, v)| BlobInfo {
                name: name.clone(),
                len: v.len(),
            })
            .collect(),
        ..header
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&crc32fast::hash(&json).to_le_bytes());
    for (_, v) in &blobs {
        let start = out.len();
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    let total = crc32fast::hash(&out);
    out.extend_from_slice(&total.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).unwrap_or(usize::MAX);
        if end > self.bytes.len() {
            return Err(CliError::Truncated {
                what: what.to_string(),
                offset: self.pos,
                end,
                len: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn checked(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let offset = self.pos;
        let data = self.take(n, what)?;
        let crc = self.u32(&format!("{what} checksum"))?;
        if crc32fast::hash(data) != crc {
            return Err(CliError::Checksum {
                what: what.to_string(),
                offset,
            });
        }
        Ok(data)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(CliError::Magic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CliError::Version {
            found: version,
            supported: VERSION,
        });
    }
    let header_len = r.u32("header length")? as usize;
    let json = r.checked(header_len, "header")?;
    let header: Header = serde_json::from_slice(json).map_err(|e| CliError::Header(e.to_string()))?;
    let mut blobs = Vec::with_capacity(header.blobs.len());
    for b in &header.blobs {
        let n = b.len.checked_mul(4).ok_or_else(|| CliError::Header(format!("blob {} too large", b.name)))?;
        let data = r.checked(n, &format!("blob '{}'", b.name))?;
        blobs.push(
            data.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<f32>>(),
        );
    }
    let body_end = r.pos;
    let total = r.u32("trailing checksum")?;
    if crc32fast::hash(&bytes[..body_end]) != total {
        return Err(CliError::Checksum {
            what: "file".into(),
            offset: 0,
        });
    }
    if r.pos != bytes.len() {
        return Err(CliError::Header(format!("{} trailing bytes after checksum", bytes.len() - r.pos)));
    }
    build(header, blobs)
}

fn fill_params(arch: &MlpArch, infos: &[BlobInfo], blobs: &[Vec<f32>]) -> Result<MlpParams<f32>> {
    let mut params = MlpParams::<f32>::zeros(arch);
    let names = params.tensor_names();
    if infos.len() < names.len() {
        return Err(CliError::Architecture(format!(
            "architecture has {} tensors, checkpoint has {} blobs",
            names.len(),
            infos.len()
        )));
    }
    for ((t, name), (info, data)) in params.tensors_mut().into_iter().zip(&names).zip(infos.iter().zip(blobs)) {
        if &info.name != name || t.len() != data.len() {
            return Err(CliError::Architecture(format!(
                "expected tensor {name} with {} values, found {} with {}",
                t.len(),
                info.name,
                data.len()
            )));
        }
        t.copy_from_slice(data);
    }
    Ok(params)
}

fn build(header: Header, blobs: Vec<Vec<f32>>) -> Result<Checkpoint> {
    match header.kind {
        ModelKind::Autodecoder => {
            let config: AutodecoderConfig =
                serde_json::from_value(header.config.clone()).map_err(|e| CliError::Header(e.to_string()))?;
            if config.arch() != header.arch {
                return Err(CliError::Architecture("header architecture disagrees with its config".into()));
            }
            let n_params = MlpParams::<f32>::zeros(&header.arch).tensors().len();
            let params = fill_params(&header.arch, &header.blobs, &blobs)?;
            if header.blobs.len() != n_params + 1 || header.blobs[n_params].name != "latents" {
                return Err(CliError::Architecture("missing latent table blob".into()));
            }
            let flat = &blobs[n_params];
            let dim = config.latent_dim;
            if flat.len() % dim != 0 {
                return Err(CliError::Architecture(format!(
                    "latent blob of {} values is not a multiple of latent_dim {dim}",
                    flat.len()
                )));
            }
            let latents: Vec<ShapeLatent> = flat.chunks(dim).map(|c| c.to_vec()).collect();
            let descriptors = header.descriptors.unwrap_or_default();
            if !descriptors.is_empty() && descriptors.len() != latents.len() {
                return Err(CliError::Header(format!(
                    "{} descriptors for {} latents",
                    descriptors.len(),
                    latents.len()
                )));
            }
            Ok(Checkpoint::Autodecoder(AutodecoderCheckpoint {
                model: Autodecoder::new(header.arch, params)?,
                config,
                latents,
                descriptors,
                dataset_fingerprint: header.dataset_fingerprint,
                seed: header.seed,
            }))
        }
        ModelKind::Diffusion => {
            let config: DenoiserConfig =
                serde_json::from_value(header.config.clone()).map_err(|e| CliError::Header(e.to_string()))?;
            if config.arch() != header.arch {
                return Err(CliError::Architecture("header architecture disagrees with its config".into()));
            }
            if header.schedule != Some(config.schedule) {
                return Err(CliError::Header("schedule disagrees with config".into()));
            }
            let n_params = MlpParams::<f32>::zeros(&header.arch).tensors().len();
            if header.blobs.len() != n_params {
                return Err(CliError::Architecture(format!(
                    "architecture has {n_params} tensors, checkpoint has {} blobs",
                    header.blobs.len()
                )));
            }
            let params = fill_params(&header.arch, &header.blobs, &blobs)?;
            let scale = header
                .latent_scale
                .ok_or_else(|| CliError::Header("diffusion checkpoint without latent_scale".into()))?;
            Ok(Checkpoint::Diffusion(DiffusionCheckpoint {
                model: Denoiser::new(config, params, scale)?,
                dataset_fingerprint: header.dataset_fingerprint,
                seed: header.seed,
            }))
        }
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode(ckpt)).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes)
}

pub fn load_autodecoder(path: &Path) -> Result<AutodecoderCheckpoint> {
    match load_checkpoint(path)? {
        Checkpoint::Autodecoder(a) => Ok(a),
        other => Err(CliError::KindMismatch {
            expected: ModelKind::Autodecoder.to_string(),
            found: other.kind().to_string(),
        }),
    }
}

pub fn load_diffusion(path: &Path) -> Result<DiffusionCheckpoint> {
    match load_checkpoint(path)? {
        Checkpoint::Diffusion(d) => Ok(d),
        other => Err(CliError::KindMismatch {
            expected: ModelKind::Diffusion.to_string(),
            found: other.kind().to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ldm3d_core::numerics::Rng;

    pub(crate) fn tiny_autodecoder() -> Checkpoint {
        let config = AutodecoderConfig {
            latent_dim: 3,
            hidden_dim: 4,
            num_layers: 4,
            skip_layer: 3,
            ..Default::default()
        };
        let params = MlpParams::init(&config.arch(), &mut Rng::seed(1));
        Checkpoint::Autodecoder(AutodecoderCheckpoint {
            model: Autodecoder::new(config.arch(), params).unwrap(),
            config,
            latents: vec![vec![0.1, 0.2, 0.3], vec![-0.5, 0.0, 1e-7]],
            descriptors: vec![vec![1.0], vec![0.5]],
            dataset_fingerprint: "abc".into(),
            seed: 4,
        })
    }

    fn tiny_diffusion() -> Checkpoint {
        let config = DenoiserConfig {
            latent_dim: 3,
            hidden_dim: 5,
            time_embed_dim: 4,
            schedule: ScheduleSpec::scaled_linear(50),
            ..Default::default()
        };
        let mut model = Denoiser::init(config, &mut Rng::seed(2)).unwrap();
        model.latent_scale = 12.5;
        Checkpoint::Diffusion(DiffusionCheckpoint {
            model,
            dataset_fingerprint: "def".into(),
            seed: 9,
        })
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for c in [tiny_autodecoder(), tiny_diffusion()] {
            let a = encode(&c);
            let back = decode(&a).unwrap();
            assert_eq!(back, c);
            assert_eq!(encode(&back), a);
        }
    }

    #[test]
    fn corrupt_blob_names_offset() {
        let mut bytes = encode(&tiny_diffusion());
        let header_len = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let first_blob = 13 + header_len + 4;
        bytes[first_blob + 2] ^= 0x40;
        match decode(&bytes) {
            Err(CliError::Checksum { what, offset }) => {
                assert!(what.contains("layer1.weight"), "{what}");
                assert_eq!(offset, first_blob);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = encode(&tiny_autodecoder());
        assert!(matches!(decode(&bytes[..bytes.len() - 7]), Err(CliError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CliError::Magic)));
        let mut v2 = bytes;
        v2[5] = 2;
        assert!(matches!(decode(&v2), Err(CliError::Version { found: 2, .. })));
    }

    #[test]
    fn kind_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ad.ckpt");
        save_checkpoint(&tiny_autodecoder(), &p).unwrap();
        assert!(load_autodecoder(&p).is_ok());
        let err = load_diffusion(&p).unwrap_err();
        assert!(matches!(err, CliError::KindMismatch { .. }));
        assert_eq!(err.kind(), "kind-mismatch");
    }

    proptest::proptest! {
        #[test]
        fn any_flipped_bit_is_rejected(pos in 0.0f64..1.0, bit in 0u8..8, diffusion in proptest::bool::ANY) {
            let mut bytes = encode(&if diffusion { tiny_diffusion() } else { tiny_autodecoder() });
            let i = ((bytes.len() as f64 * pos) as usize).min(bytes.len() - 1);
            bytes[i] ^= 1 << bit;
            proptest::prop_assert!(decode(&bytes).is_err());
        }

        #[test]
        fn any_truncation_is_rejected(pos in 0.0f64..1.0) {
            let bytes = encode(&tiny_autodecoder());
            let cut = (bytes.len() as f64 * pos) as usize;
            proptest::prop_assert!(decode(&bytes[..cut]).is_err());
        }
    }
}
