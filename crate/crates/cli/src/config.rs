//! Run configuration: one JSON document covering every stage.
//!
//! A user file is merged key by key over the defaults of its `profile`
//! (desk when absent) and then parsed strictly, so a misspelt key is an
//! error rather than a silently ignored setting.

use std::path::{Path, PathBuf};

use ldm3d_core::autodecoder::{AutodecoderConfig, FitConfig};
use ldm3d_core::diffusion::{DenoiserConfig, NoiseTarget, ScheduleSpec};
use ldm3d_core::metrics::CoverageMode;
use ldm3d_core::shapes::FamilyKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Desk,
    PaperFidelity,
}

impl std::str::FromStr for Profile {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| CliError::Config(format!("unknown profile '{s}' (expected desk or paper-fidelity)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub family: FamilyKind,
    /// Training shapes; each gets a latent code.
    pub num_shapes: usize,
    pub samples_per_shape: usize,
    /// Reference shapes kept out of training for evaluation.
    pub held_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Marching-cubes cells per axis.
    pub resolution: usize,
    /// Extraction box is `[-half_extent, half_extent]^3`.
    pub half_extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub points_per_cloud: usize,
    pub num_generated: usize,
    pub with_emd: bool,
    pub coverage_mode: CoverageMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreConfig {
    /// Noise depth for variations; `null` means one fifteenth of T.
    pub t_noise: Option<usize>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub addr: String,
    /// Upper bound on `k` for one variations request.
    pub max_variations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub autodecoder: AutodecoderConfig,
    pub reconstruct: FitConfig,
    pub diffusion: DenoiserConfig,
    pub mesh: MeshConfig,
    pub metrics: MetricsConfig,
    pub explore: ExploreConfig,
    pub server: ServerConfig,
}

impl RunConfig {
    /// Small networks and T = 1000; a full pipeline fits on one CPU core.
    pub fn desk() -> Self {
        let latent_dim = 64;
        Self {
            profile: Profile::Desk,
            seed: 0,
            out_dir: PathBuf::from("out"),
            dataset: DatasetConfig {
                family: FamilyKind::Spheres,
                num_shapes: 20,
                samples_per_shape: 30_000,
                held_out: 30,
            },
            autodecoder: AutodecoderConfig {
                latent_dim,
                hidden_dim: 64,
                num_layers: 8,
                skip_layer: 4,
                epochs: 3000,
                batch_shapes: 4,
                points_per_shape: 1024,
                ..Default::default()
            },
            reconstruct: FitConfig {
                points_per_step: 2048,
                ..Default::default()
            },
            diffusion: DenoiserConfig {
                latent_dim,
                hidden_dim: 256,
                num_layers: 8,
                time_embed_dim: 64,
                cond_dim: 0,
                schedule: ScheduleSpec::scaled_linear(1000),
                lr: 1e-3,
                batch_size: 20,
                repeats: 1,
                epochs: 30_000,
                lr_halving_epochs: 12_000,
                target: NoiseTarget::Epsilon,
                normalize_latents: true,
            },
            mesh: MeshConfig {
                resolution: 64,
                half_extent: 1.05,
            },
            metrics: MetricsConfig {
                points_per_cloud: 256,
                num_generated: 30,
                with_emd: false,
                coverage_mode: CoverageMode::TestSet,
            },
            explore: ExploreConfig { t_noise: None, k: 4 },
            server: ServerConfig {
                addr: "127.0.0.1:8080".into(),
                max_variations: 32,
            },
        }
    }

    /// The published training settings at full network size.
    pub fn paper_fidelity() -> Self {
        let desk = Self::desk();
        Self {
            profile: Profile::PaperFidelity,
            dataset: DatasetConfig {
                samples_per_shape: 500_000,
                ..desk.dataset
            },
            autodecoder: AutodecoderConfig::default(),
            reconstruct: FitConfig::default(),
            diffusion: DenoiserConfig {
                schedule: ScheduleSpec::scaled_linear(30_000),
                normalize_latents: false,
                ..DenoiserConfig::default()
            },
            mesh: MeshConfig {
                resolution: 128,
                half_extent: 1.05,
            },
            metrics: MetricsConfig {
                points_per_cloud: 2048,
                with_emd: true,
                ..desk.metrics
            },
            ..desk
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::PaperFidelity => Self::paper_fidelity(),
        }
    }

    /// Parses a user document merged over its profile's defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if !user.is_object() {
            return Err(CliError::Config("top level must be a JSON object".into()));
        }
        let profile = match user.get("profile") {
            Some(Value::String(s)) => s.parse()?,
            Some(other) => return Err(CliError::Config(format!("profile must be a string, got {other}"))),
            None => Profile::Desk,
        };
        let mut merged = serde_json::to_value(Self::for_profile(profile)).expect("defaults serialize");
        merge(&mut merged, user);
        let config: Self = serde_json::from_value(merged).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.autodecoder.validate()?;
        self.diffusion.validate()?;
        if self.diffusion.latent_dim != self.autodecoder.latent_dim {
            return bad(format!(
                "diffusion.latent_dim {} differs from autodecoder.latent_dim {}",
                self.diffusion.latent_dim, self.autodecoder.latent_dim
            ));
        }
        if self.dataset.num_shapes == 0 || self.dataset.samples_per_shape == 0 {
            return bad("dataset.num_shapes and dataset.samples_per_shape must be >= 1".into());
        }
        if self.mesh.resolution < 8 || !(self.mesh.half_extent > 0.0) {
            return bad("mesh.resolution must be >= 8 and mesh.half_extent > 0".into());
        }
        if self.metrics.points_per_cloud == 0 {
            return bad("metrics.points_per_cloud must be >= 1".into());
        }
        if self.explore.k == 0 || self.server.max_variations == 0 {
            return bad("explore.k and server.max_variations must be >= 1".into());
        }
        if let Some(t) = self.explore.t_noise {
            if t > self.diffusion.schedule.steps {
                return bad(format!("explore.t_noise {t} exceeds T = {}", self.diffusion.schedule.steps));
            }
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Objects merge recursively; anything else in `over` replaces `base`.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn print_load_print_is_idempotent() {
        for c in [RunConfig::desk(), RunConfig::paper_fidelity()] {
            let text = c.to_json_pretty();
            let back = RunConfig::from_json(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_json_pretty(), text);
        }
    }

    #[test]
    fn partial_documents_keep_profile_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 5, "diffusion": {"lr": 0.002}}"#).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.diffusion.lr, 0.002);
        assert_eq!(c.diffusion.hidden_dim, RunConfig::desk().diffusion.hidden_dim);

        let p = RunConfig::from_json(r#"{"profile": "paper-fidelity"}"#).unwrap();
        assert_eq!(p.diffusion.schedule.steps, 30_000);
        assert_eq!(p.diffusion.lr, 1e-5);
        assert_eq!(p.diffusion.batch_size, 10);
        assert_eq!(p.autodecoder.lambda, 100.0);
        assert_eq!(p.autodecoder.latent_dim, 256);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            r#"{"sed": 1}"#,
            r#"{"diffusion": {"learning_rate": 1}}"#,
            r#"{"diffusion": {"schedule": {"stepz": 10}}}"#,
            r#"{"profile": "laptop"}"#,
        ] {
            let err = RunConfig::from_json(doc).unwrap_err();
            assert_eq!(err.kind(), "config", "{doc}");
        }
    }

    #[test]
    fn cross_field_checks() {
        assert!(RunConfig::from_json(r#"{"diffusion": {"latent_dim": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"explore": {"t_noise": 1001}}"#).is_err());
        assert!(RunConfig::from_json("[1]").is_err());
    }
}
