use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ldm3d_core::autodecoder::{clamped_l1, fit_latent, AutodecoderTrainer, ShapeLatent};
use ldm3d_core::diffusion::{generate, DiffusionTrainer};
use ldm3d_core::explore::{default_t_noise, latent_hash, variations};
use ldm3d_core::meshing::{export_obj, read_obj, sample_surface, Bounds, TriangleMesh};
use ldm3d_core::metrics::{evaluate, ShapeSet};
use ldm3d_core::metrics::novelty_nn;
use ldm3d_core::numerics::Rng;
use ldm3d_core::shapes::{sample_bank, MeshSdf};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{
    self, load_autodecoder, load_diffusion, save_checkpoint, AutodecoderCheckpoint, Checkpoint, DiffusionCheckpoint,
};
use crate::config::{Profile, RunConfig};
use crate::dataset;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "ldm3d", version, about = "Latent diffusion over neural signed distance functions")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration merged over its profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Procedural dataset operations.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Fit the SDF decoder and one latent per training shape.
    TrainAutodecoder {
        /// Dataset directory or its dataset.json.
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit the denoiser on a trained latent table.
    TrainDiffusion {
        #[arg(long)]
        autodecoder: PathBuf,
        /// Condition on the shape descriptors stored with the table.
        #[arg(long)]
        conditional: bool,
    },
    /// Sample latents and decode them to meshes.
    Generate {
        #[arg(long)]
        autodecoder: PathBuf,
        #[arg(long)]
        diffusion: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated condition vector for conditional models.
        #[arg(long)]
        cond: Option<String>,
    },
    /// Variations of one shape by partial noising and denoising.
    Explore {
        #[arg(long)]
        autodecoder: PathBuf,
        #[arg(long)]
        diffusion: PathBuf,
        /// latents.json to take the source from; the training table otherwise.
        #[arg(long)]
        latents: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        t_noise: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Set metrics between two directories of OBJ meshes.
    Evaluate {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Also write the pairwise distance matrices as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Fit a latent to an unseen mesh with the decoder frozen.
    Reconstruct {
        #[arg(long)]
        autodecoder: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
    },
    /// Nearest training latents by cosine similarity.
    Novelty {
        #[arg(long)]
        autodecoder: PathBuf,
        #[arg(long)]
        latents: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// HTTP API for interactive exploration.
    Serve {
        #[arg(long)]
        autodecoder: Option<PathBuf>,
        #[arg(long)]
        diffusion: Option<PathBuf>,
        #[arg(long)]
        addr: Option<String>,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        command: ConfigCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Sample the configured family and write banks plus held-out meshes.
    Build,
}

#[derive(Debug, Subcommand)]
pub enum ConfigCommand {
    /// Print every setting with its default value.
    PrintDefaults {
        #[arg(long)]
        profile: Option<Profile>,
    },
}

/// Resolved settings shared by every command.
pub struct Ctx {
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Ctx {
    pub fn new(global: &GlobalArgs) -> Result<Self> {
        let config = match &global.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::desk(),
        };
        Ok(Self {
            seed: global.seed.unwrap_or(config.seed),
            out: global.out.clone().unwrap_or_else(|| config.out_dir.clone()),
            config,
        })
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        Ok(&self.out)
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::cube(self.config.mesh.half_extent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentsFile {
    pub latents: Vec<ShapeLatent>,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn read_latents(path: &Path) -> Result<Vec<ShapeLatent>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let file: LatentsFile =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(file.latents)
}

fn parse_cond(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad condition entry '{s}'")))
        })
        .collect()
}

/// Decoded mesh of `z`; an empty mesh is kept (and reported) rather than
/// treated as an error, since a sampled latent may decode to nothing.
pub fn decode_mesh(ad: &AutodecoderCheckpoint, z: &[f32], resolution: usize, bounds: Bounds) -> Result<TriangleMesh> {
    let mesh = ad.model.extract_mesh(z, resolution, bounds)?;
    if mesh.is_empty() {
        log::warn!("latent {:016x} decodes to an empty surface", latent_hash(z));
    }
    Ok(mesh)
}

/// Runs one parsed command; returns a JSON summary for stdout.
pub fn run(cli: Cli) -> Result<serde_json::Value> {
    if let Command::Config {
        command: ConfigCommand::PrintDefaults { profile },
    } = &cli.command
    {
        let config = match (profile, &cli.global.config) {
            (Some(p), _) => RunConfig::for_profile(*p),
            (None, Some(path)) => RunConfig::load(path)?,
            (None, None) => RunConfig::desk(),
        };
        return Ok(serde_json::to_value(config).expect("config serializes"));
    }
    let ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::Dataset {
            command: DatasetCommand::Build,
        } => dataset_build(&ctx),
        Command::TrainAutodecoder { data } => train_autodecoder(&ctx, &data),
        Command::TrainDiffusion {
            autodecoder,
            conditional,
        } => train_diffusion(&ctx, &autodecoder, conditional),
        Command::Generate {
            autodecoder,
            diffusion,
            n,
            cond,
        } => cmd_generate(&ctx, &autodecoder, &diffusion, n, cond.as_deref()),
        Command::Explore {
            autodecoder,
            diffusion,
            latents,
            index,
            t_noise,
            k,
        } => cmd_explore(&ctx, &autodecoder, &diffusion, latents.as_deref(), index, t_noise, k),
        Command::Evaluate { gen, reference, csv } => cmd_evaluate(&ctx, &gen, &reference, csv),
        Command::Reconstruct { autodecoder, mesh } => cmd_reconstruct(&ctx, &autodecoder, &mesh),
        Command::Novelty {
            autodecoder,
            latents,
            k,
        } => cmd_novelty(&ctx, &autodecoder, &latents, k),
        Command::Serve {
            autodecoder,
            diffusion,
            addr,
        } => {
            let addr = addr.unwrap_or_else(|| ctx.config.server.addr.clone());
            crate::server::serve_blocking(&ctx, autodecoder.as_deref(), diffusion.as_deref(), &addr)?;
            Ok(json!({ "served": addr }))
        }
        Command::Config { .. } => unreachable!("handled above"),
    }
}

fn dataset_build(ctx: &Ctx) -> Result<serde_json::Value> {
    let out = ctx.out_dir()?;
    let manifest = dataset::build(&ctx.config, ctx.seed, out)?;
    Ok(json!({
        "dataset": out.join(dataset::MANIFEST),
        "train": manifest.train.len(),
        "held_out": manifest.held_out.len(),
        "fingerprint": manifest.fingerprint,
    }))
}

fn train_autodecoder(ctx: &Ctx, data: &Path) -> Result<serde_json::Value> {
    let ds = dataset::load(data)?;
    let out = ctx.out_dir()?.to_path_buf();
    let cfg = ctx.config.autodecoder.clone();
    let mut rng = Rng::stream(ctx.seed, 2);
    let mut trainer = AutodecoderTrainer::new(cfg.clone(), ds.banks.len(), &mut rng)?;
    let log_every = (cfg.epochs / 20).max(1);
    let mut failure = None;
    for e in 0..cfg.epochs {
        match trainer.epoch(&ds.banks) {
            Ok(loss) if e % log_every == 0 || e + 1 == cfg.epochs => log::info!("autodecoder epoch {e}: loss {loss:.6}"),
            Ok(_) => {}
            Err(err) => {
                log::error!("autodecoder training stopped at epoch {e}; saving last good state");
                failure = Some(err);
                break;
            }
        }
    }
    let (model, latents, history) = trainer.into_parts();
    let path = out.join("autodecoder.ckpt");
    let ckpt = Checkpoint::Autodecoder(AutodecoderCheckpoint {
        config: cfg,
        model,
        latents,
        descriptors: ds.descriptors(),
        dataset_fingerprint: ds.manifest.fingerprint.clone(),
        seed: ctx.seed,
    });
    save_checkpoint(&ckpt, &path)?;
    write_json(&out.join("autodecoder_history.json"), &history)?;
    if let Some(err) = failure {
        return Err(err.into());
    }
    Ok(json!({ "checkpoint": path, "epochs": history.len(), "final_loss": history.last() }))
}

fn train_diffusion(ctx: &Ctx, ad_path: &Path, conditional: bool) -> Result<serde_json::Value> {
    let ad = load_autodecoder(ad_path)?;
    let out = ctx.out_dir()?.to_path_buf();
    let mut cfg = ctx.config.diffusion.clone();
    let conds = if conditional {
        let first = ad
            .descriptors
            .first()
            .ok_or_else(|| CliError::Input("autodecoder checkpoint stores no shape descriptors".into()))?;
        cfg.cond_dim = first.len();
        Some(ad.descriptors.as_slice())
    } else {
        cfg.cond_dim = 0;
        None
    };
    let mut rng = Rng::stream(ctx.seed, 3);
    let mut trainer = DiffusionTrainer::new(cfg.clone(), &ad.latents, conds, &mut rng)?;
    let log_every = (cfg.epochs / 20).max(1);
    let mut failure = None;
    for e in 0..cfg.epochs {
        match trainer.epoch() {
            Ok(loss) if e % log_every == 0 || e + 1 == cfg.epochs => log::info!("diffusion epoch {e}: loss {loss:.6}"),
            Ok(_) => {}
            Err(err) => {
                log::error!("diffusion training stopped at epoch {e}; saving last good state");
                failure = Some(err);
                break;
            }
        }
    }
    let path = out.join("diffusion.ckpt");
    let ckpt = Checkpoint::Diffusion(DiffusionCheckpoint {
        model: trainer.model.clone(),
        dataset_fingerprint: ad.dataset_fingerprint.clone(),
        seed: ctx.seed,
    });
    save_checkpoint(&ckpt, &path)?;
    write_json(&out.join("diffusion_history.json"), &trainer.history)?;
    if let Some(err) = failure {
        return Err(err.into());
    }
    Ok(json!({ "checkpoint": path, "epochs": trainer.history.len(), "final_loss": trainer.history.last() }))
}

fn load_pair(ad_path: &Path, diff_path: &Path) -> Result<(AutodecoderCheckpoint, DiffusionCheckpoint)> {
    let ad = load_autodecoder(ad_path)?;
    let diff = load_diffusion(diff_path)?;
    if ad.model.latent_dim() != diff.model.config.latent_dim {
        return Err(CliError::Architecture(format!(
            "autodecoder latents have {} dims, diffusion model {}",
            ad.model.latent_dim(),
            diff.model.config.latent_dim
        )));
    }
    if ad.dataset_fingerprint != diff.dataset_fingerprint {
        log::warn!("checkpoints were trained on different datasets");
    }
    Ok((ad, diff))
}

fn cmd_generate(
    ctx: &Ctx,
    ad_path: &Path,
    diff_path: &Path,
    n: Option<usize>,
    cond: Option<&str>,
) -> Result<serde_json::Value> {
    let (ad, diff) = load_pair(ad_path, diff_path)?;
    let n = n.unwrap_or(ctx.config.metrics.num_generated);
    let cond = cond.map(parse_cond).transpose()?;
    let schedule = diff.model.config.schedule.build()?;
    let latents = generate(&diff.model, &schedule, n, cond.as_deref(), ctx.seed)?;
    let out = ctx.out_dir()?;
    let mut files = Vec::with_capacity(n);
    for (i, z) in latents.iter().enumerate() {
        let mesh = decode_mesh(&ad, z, ctx.config.mesh.resolution, ctx.bounds())?;
        let name = format!("gen_{i:03}.obj");
        write_bytes(&out.join(&name), &export_obj(&mesh))?;
        files.push(name);
    }
    write_json(&out.join("latents.json"), &LatentsFile { latents })?;
    Ok(json!({ "generated": files.len(), "out": out, "seed": ctx.seed }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationEntry {
    pub file: String,
    pub parent: String,
    pub t_noise: usize,
    pub seed: u64,
    /// Index of the random stream within `seed`.
    pub stream: usize,
    pub latent_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreManifest {
    pub source: String,
    pub source_hash: String,
    pub variations: Vec<VariationEntry>,
}

fn cmd_explore(
    ctx: &Ctx,
    ad_path: &Path,
    diff_path: &Path,
    latents: Option<&Path>,
    index: usize,
    t_noise: Option<usize>,
    k: Option<usize>,
) -> Result<serde_json::Value> {
    let (ad, diff) = load_pair(ad_path, diff_path)?;
    let table = match latents {
        Some(p) => read_latents(p)?,
        None => ad.latents.clone(),
    };
    let source = table
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("index {index} out of range for {} latents", table.len())))?
        .clone();
    let schedule = diff.model.config.schedule.build()?;
    let t_noise = t_noise
        .or(ctx.config.explore.t_noise)
        .unwrap_or_else(|| default_t_noise(schedule.steps()));
    let k = k.unwrap_or(ctx.config.explore.k);
    let vars = variations(&diff.model, &schedule, &source, t_noise, k, ctx.seed, None)?;
    let out = ctx.out_dir()?;
    let res = ctx.config.mesh.resolution;
    write_bytes(&out.join("source.obj"), &export_obj(&decode_mesh(&ad, &source, res, ctx.bounds())?))?;
    let mut entries = Vec::with_capacity(k);
    for (i, z) in vars.iter().enumerate() {
        let file = format!("var_{i:03}.obj");
        write_bytes(&out.join(&file), &export_obj(&decode_mesh(&ad, z, res, ctx.bounds())?))?;
        entries.push(VariationEntry {
            file,
            parent: "source.obj".into(),
            t_noise,
            seed: ctx.seed,
            stream: i,
            latent_hash: format!("{:016x}", latent_hash(z)),
        });
    }
    let manifest = ExploreManifest {
        source: "source.obj".into(),
        source_hash: format!("{:016x}", latent_hash(&source)),
        variations: entries,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    write_json(&out.join("latents.json"), &LatentsFile { latents: vars })?;
    Ok(json!({ "variations": k, "t_noise": t_noise, "out": out }))
}

/// OBJ files of `dir` in name order.
pub fn obj_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Input(format!("no .obj files in {}", dir.display())));
    }
    Ok(files)
}

/// Surface clouds of the meshes in `dir`; file `i` samples with stream `i`
/// of `seed`, so identical directories give identical clouds.
pub fn clouds_from_dir(dir: &Path, points: usize, seed: u64) -> Result<ShapeSet> {
    let mut clouds = Vec::new();
    for (i, p) in obj_files(dir)?.iter().enumerate() {
        let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
        let mesh = read_obj(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        let cloud = sample_surface(&mesh, points, &mut Rng::stream(seed, i as u64))
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        clouds.push(cloud);
    }
    Ok(ShapeSet::new(clouds)?)
}

fn cmd_evaluate(ctx: &Ctx, gen: &Path, reference: &Path, csv: bool) -> Result<serde_json::Value> {
    let m = &ctx.config.metrics;
    let gen_set = clouds_from_dir(gen, m.points_per_cloud, ctx.seed)?;
    let ref_set = clouds_from_dir(reference, m.points_per_cloud, ctx.seed)?;
    let report = evaluate(&gen_set, &ref_set, m.with_emd, m.coverage_mode)?;
    let out = ctx.out_dir()?;
    let (mmd_cd_scaled, mmd_emd_scaled) = report.scaled_mmd();
    let doc = json!({
        "metrics": report,
        "scaled": { "mmd_cd_x1e3": mmd_cd_scaled, "mmd_emd_x1e2": mmd_emd_scaled },
        "config": {
            "gen": gen,
            "ref": reference,
            "seed": ctx.seed,
            "points_per_cloud": m.points_per_cloud,
            "with_emd": m.with_emd,
            "coverage_mode": m.coverage_mode,
        },
    });
    write_json(&out.join("report.json"), &doc)?;
    if csv {
        if let Some(d) = &report.cd_distances {
            write_bytes(&out.join("cd_gen_ref.csv"), d.gen_test.to_csv().as_bytes())?;
        }
        if let Some(d) = &report.emd_distances {
            write_bytes(&out.join("emd_gen_ref.csv"), d.gen_test.to_csv().as_bytes())?;
        }
    }
    Ok(doc)
}

fn cmd_reconstruct(ctx: &Ctx, ad_path: &Path, mesh_path: &Path) -> Result<serde_json::Value> {
    let ad = load_autodecoder(ad_path)?;
    let bytes = std::fs::read(mesh_path).map_err(|e| CliError::io(mesh_path, e))?;
    let mesh = read_obj(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", mesh_path.display())))?;
    let sdf = MeshSdf::new(mesh)?;
    let mut rng = Rng::stream(ctx.seed, 4);
    let bank = sample_bank(&sdf, 0, ctx.config.dataset.samples_per_shape, &mut rng)?;
    let z = fit_latent(&ad.model, &bank, &ctx.config.reconstruct, &mut rng)?;
    let error = clamped_l1(&ad.model, &z, bank.samples(), ctx.config.reconstruct.delta)?;
    let out = ctx.out_dir()?;
    let recon = decode_mesh(&ad, &z, ctx.config.mesh.resolution, ctx.bounds())?;
    write_bytes(&out.join("reconstructed.obj"), &export_obj(&recon))?;
    write_json(&out.join("latents.json"), &LatentsFile { latents: vec![z] })?;
    Ok(json!({ "clamped_l1": error, "out": out }))
}

fn cmd_novelty(ctx: &Ctx, ad_path: &Path, latents: &Path, k: usize) -> Result<serde_json::Value> {
    let ad = load_autodecoder(ad_path)?;
    let queries = read_latents(latents)?;
    let mut rows = Vec::with_capacity(queries.len());
    for (i, z) in queries.iter().enumerate() {
        let nn = novelty_nn(z, &ad.latents, k)?;
        rows.push(json!({
            "query": i,
            "neighbors": nn.iter().map(|&(j, s)| json!({ "index": j, "cosine": s })).collect::<Vec<_>>(),
        }));
    }
    let doc = json!({ "novelty": rows });
    write_json(&ctx.out_dir()?.join("novelty.json"), &doc)?;
    Ok(doc)
}

/// Fingerprint of a checkpoint file's bytes.
pub fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(checkpoint::fingerprint(&bytes))
}
