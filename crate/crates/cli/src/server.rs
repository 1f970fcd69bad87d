//! HTTP/JSON API over loaded checkpoints for interactive exploration.
//!
//! Models are immutable after startup. Each session has its own lock, so
//! requests on different sessions run concurrently; every variation request
//! carries its own seed, which makes results independent of scheduling.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ldm3d_core::autodecoder::ShapeLatent;
use ldm3d_core::diffusion::{generate, VarianceSchedule};
use ldm3d_core::explore::{latent_hash, variations, ExploreSession};
use ldm3d_core::meshing::{export_obj, Bounds};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::OnceCell;

use crate::checkpoint::{load_autodecoder, load_diffusion, AutodecoderCheckpoint, DiffusionCheckpoint};
use crate::commands::{file_fingerprint, Ctx};
use crate::error::{CliError, Result};

pub struct Models {
    pub autodecoder: AutodecoderCheckpoint,
    pub diffusion: DiffusionCheckpoint,
    pub schedule: VarianceSchedule,
    /// Identifies the decoder weights in mesh cache keys.
    pub fingerprint: String,
}

impl Models {
    pub fn new(autodecoder: AutodecoderCheckpoint, diffusion: DiffusionCheckpoint, fingerprint: String) -> Result<Self> {
        if autodecoder.model.latent_dim() != diffusion.model.config.latent_dim {
            return Err(CliError::Architecture("autodecoder and diffusion latent sizes differ".into()));
        }
        let schedule = diffusion.model.config.schedule.build()?;
        Ok(Self {
            autodecoder,
            diffusion,
            schedule,
            fingerprint,
        })
    }

    pub fn load(ad_path: &Path, diff_path: &Path) -> Result<Self> {
        Self::new(load_autodecoder(ad_path)?, load_diffusion(diff_path)?, file_fingerprint(ad_path)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ServerSettings {
    pub resolution: usize,
    pub bounds: Bounds,
    pub max_variations: usize,
}

struct Session {
    tree: ExploreSession,
    cond: Option<Vec<f64>>,
}

type MeshKey = (String, u64, usize);

pub struct AppState {
    models: Option<Arc<Models>>,
    settings: ServerSettings,
    sessions: Mutex<HashMap<u64, Arc<tokio::sync::Mutex<Session>>>>,
    next_session: AtomicU64,
    latents: Mutex<HashMap<u64, ShapeLatent>>,
    meshes: Mutex<HashMap<MeshKey, Arc<OnceCell<Arc<Vec<u8>>>>>>,
    extractions: AtomicUsize,
}

impl AppState {
    pub fn new(models: Option<Models>, settings: ServerSettings) -> Arc<Self> {
        Arc::new(Self {
            models: models.map(Arc::new),
            settings,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            latents: Mutex::new(HashMap::new()),
            meshes: Mutex::new(HashMap::new()),
            extractions: AtomicUsize::new(0),
        })
    }

    /// Marching-cubes runs performed so far.
    pub fn extractions(&self) -> usize {
        self.extractions.load(Ordering::SeqCst)
    }

    fn models(&self) -> std::result::Result<Arc<Models>, ApiError> {
        self.models
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model-not-loaded", "no checkpoints loaded"))
    }

    fn register(&self, z: &[f32]) -> String {
        let h = latent_hash(z);
        self.latents.lock().unwrap().entry(h).or_insert_with(|| z.to_vec());
        mesh_id(h)
    }

    fn session(&self, id: u64) -> std::result::Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }
}

fn mesh_id(hash: u64) -> String {
    format!("{hash:016x}")
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", message)
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid-request", message)
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.kind, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: usize,
    pub parent: Option<usize>,
    pub t_noise: usize,
    pub seed: Option<u64>,
    pub mesh_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: u64,
    pub current: usize,
    pub nodes: Vec<NodeView>,
}

fn view(id: u64, s: &ExploreSession) -> SessionView {
    SessionView {
        id,
        current: s.current().id,
        nodes: s
            .nodes()
            .iter()
            .map(|n| NodeView {
                id: n.id,
                parent: n.parent,
                t_noise: n.t_noise,
                seed: n.seed,
                mesh_id: mesh_id(latent_hash(&n.latent)),
            })
            .collect(),
    }
}

/// Exactly one of the source fields must be set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Row of the training latent table.
    #[serde(default)]
    pub table_index: Option<usize>,
    /// Draw the root shape from the diffusion model with this seed.
    #[serde(default)]
    pub generate_seed: Option<u64>,
    #[serde(default)]
    pub latent: Option<ShapeLatent>,
    /// Condition vector for conditional models.
    #[serde(default)]
    pub cond: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationsRequest {
    pub t_noise: usize,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationsResponse {
    pub variation_ids: Vec<usize>,
    pub mesh_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRequest {
    pub variation_id: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MeshQuery {
    pub resolution: Option<usize>,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "models_loaded": state.models.is_some(),
        "steps": state.models.as_ref().map(|m| m.schedule.steps()),
        "latent_dim": state.models.as_ref().map(|m| m.autodecoder.model.latent_dim()),
        "table_size": state.models.as_ref().map(|m| m.autodecoder.latents.len()),
        "resolution": state.settings.resolution,
    }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let models = state.models()?;
    let chosen = [req.table_index.is_some(), req.generate_seed.is_some(), req.latent.is_some()]
        .iter()
        .filter(|&&b| b)
        .count();
    if chosen != 1 {
        return Err(ApiError::invalid("set exactly one of table_index, generate_seed, latent"));
    }
    let dim = models.autodecoder.model.latent_dim();
    let cond_dim = models.diffusion.model.config.cond_dim;
    match (&req.cond, cond_dim) {
        (None, 0) => {}
        (Some(c), d) if c.len() == d && d > 0 => {}
        _ => return Err(ApiError::invalid(format!("model expects a condition of width {cond_dim}"))),
    }
    let root = if let Some(i) = req.table_index {
        models
            .autodecoder
            .latents
            .get(i)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("table index {i} out of range")))?
    } else if let Some(seed) = req.generate_seed {
        let m = models.clone();
        let cond = req.cond.clone();
        blocking(move || generate(&m.diffusion.model, &m.schedule, 1, cond.as_deref(), seed))
            .await?
            .map_err(ApiError::internal)?
            .remove(0)
    } else {
        let z = req.latent.clone().unwrap_or_default();
        if z.len() != dim || z.iter().any(|x| !x.is_finite()) {
            return Err(ApiError::invalid(format!("latent must have {dim} finite entries")));
        }
        z
    };
    state.register(&root);
    let tree = ExploreSession::new(root);
    let id = state.next_session.fetch_add(1, Ordering::SeqCst);
    let v = view(id, &tree);
    state
        .sessions
        .lock()
        .unwrap()
        .insert(id, Arc::new(tokio::sync::Mutex::new(Session { tree, cond: req.cond })));
    Ok((StatusCode::CREATED, Json(v)))
}

async fn request_variations(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<u64>,
    Json(req): Json<VariationsRequest>,
) -> ApiResult<Json<VariationsResponse>> {
    let models = state.models()?;
    let session = state.session(id)?;
    let steps = models.schedule.steps();
    if req.t_noise > steps {
        return Err(ApiError::invalid(format!("t_noise {} exceeds T = {steps}", req.t_noise)));
    }
    if req.k == 0 || req.k > state.settings.max_variations {
        return Err(ApiError::invalid(format!("k must be in 1..={}", state.settings.max_variations)));
    }
    let mut guard = session.lock_owned().await;
    let parent = guard.tree.current().id;
    let source = guard.tree.current().latent.clone();
    let cond = guard.cond.clone();
    let m = models.clone();
    let (t_noise, k, seed) = (req.t_noise, req.k, req.seed);
    let latents = blocking(move || variations(&m.diffusion.model, &m.schedule, &source, t_noise, k, seed, cond.as_deref()))
        .await?
        .map_err(ApiError::internal)?;
    let mesh_ids = latents.iter().map(|z| state.register(z)).collect();
    let variation_ids = guard.tree.attach(parent, t_noise, seed, latents);
    Ok(Json(VariationsResponse { variation_ids, mesh_ids }))
}

async fn rebase(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<u64>,
    Json(req): Json<SeedRequest>,
) -> ApiResult<Json<SessionView>> {
    state.models()?;
    let session = state.session(id)?;
    let mut guard = session.lock().await;
    guard
        .tree
        .rebase(req.variation_id)
        .map_err(|_| ApiError::not_found(format!("unknown variation {}", req.variation_id)))?;
    Ok(Json(view(id, &guard.tree)))
}

async fn get_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<SessionView>> {
    let session = state.session(id)?;
    let guard = session.lock().await;
    Ok(Json(view(id, &guard.tree)))
}

async fn get_mesh(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<MeshQuery>,
) -> ApiResult<Response> {
    let models = state.models()?;
    let hash = u64::from_str_radix(&id, 16).map_err(|_| ApiError::not_found(format!("unknown mesh {id}")))?;
    let latent = state
        .latents
        .lock()
        .unwrap()
        .get(&hash)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown mesh {id}")))?;
    let resolution = q.resolution.unwrap_or(state.settings.resolution);
    if !(8..=256).contains(&resolution) {
        return Err(ApiError::invalid("resolution must be in 8..=256"));
    }
    let key = (models.fingerprint.clone(), hash, resolution);
    let cell = state.meshes.lock().unwrap().entry(key).or_default().clone();
    let bounds = state.settings.bounds;
    let bytes = cell
        .get_or_try_init(|| {
            let st = state.clone();
            async move {
                let m = models.clone();
                let mesh = blocking(move || m.autodecoder.model.extract_mesh(&latent, resolution, bounds))
                    .await?
                    .map_err(ApiError::internal)?;
                st.extractions.fetch_add(1, Ordering::SeqCst);
                Ok::<_, ApiError>(Arc::new(export_obj(&mesh)))
            }
        })
        .await?
        .clone();
    Ok(([(header::CONTENT_TYPE, "model/obj")], bytes.as_ref().clone()).into_response())
}

/// Permissive CORS so a separately served browser client can call the API.
async fn cors(req: Request, next: Next) -> Response {
    let mut res = if req.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = res.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    res
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/variations", post(request_variations))
        .route("/sessions/{id}/seed", post(rebase))
        .route("/meshes/{id}", get(get_mesh))
        .layer(middleware::from_fn(cors))
        .with_state(state)
}

pub fn settings_from(ctx: &Ctx) -> ServerSettings {
    ServerSettings {
        resolution: ctx.config.mesh.resolution,
        bounds: ctx.bounds(),
        max_variations: ctx.config.server.max_variations,
    }
}

/// Loads the checkpoints (both or neither) and serves until interrupted.
pub fn serve_blocking(ctx: &Ctx, ad: Option<&Path>, diff: Option<&Path>, addr: &str) -> Result<()> {
    let models = match (ad, diff) {
        (Some(a), Some(d)) => Some(Models::load(a, d)?),
        (None, None) => {
            log::warn!("serving without checkpoints; model endpoints answer 503");
            None
        }
        _ => return Err(CliError::Usage("pass both --autodecoder and --diffusion, or neither".into())),
    };
    let state = AppState::new(models, settings_from(ctx));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Input(format!("tokio runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Input(format!("bind {addr}: {e}")))?;
        log::info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
        axum::serve(listener, router(state))
            .await
            .map_err(|e| CliError::Input(format!("server: {e}")))
    })
}
